//! Run configuration, simulation studies and k-fold NLL benchmarking.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, FoldSplit};
use crate::error::{Error, Result};
use crate::inference::{sample_conditional, Collocation, DensityEvaluator, DEFAULT_R_DENSITY};
use crate::kcde::{kcde_fit, BandwidthRule, KcdeModel, KcdeSampler};
use crate::kernels::KernelFamily;
use crate::linalg::Matrix;
use crate::metrics::{self, awd_multivariate, awd_noise_floor, w1_at_points, PointW1, QuantileTable};
use crate::model::{CpfnModel, Latent, ModelOptions, Provenance};
use crate::rng::{self, Rng};
use crate::simulators::{Process, ProcessKind, UnivariateProcess, X_BLOBS, X_RING, X_TRANS};
use crate::training::{train, TrainConfig};

/// Network shape; the initial bandwidth lives in [`TrainConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub rank: usize,
    pub hidden_widths: Vec<usize>,
    pub latent: Latent,
    pub kernel: KernelFamily,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let o = ModelOptions::default();
        ModelConfig {
            rank: o.rank,
            hidden_widths: o.hidden_widths,
            latent: o.latent,
            kernel: o.kernel,
        }
    }
}

impl ModelConfig {
    pub fn options(&self, train: &TrainConfig) -> ModelOptions {
        ModelOptions {
            rank: self.rank,
            hidden_widths: self.hidden_widths.clone(),
            latent: self.latent,
            kernel: self.kernel,
            eps0: train.eps0.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    /// Covariate grid intervals for the quantile-form metrics.
    pub r_x: usize,
    pub r_tau: usize,
    /// Samples per covariate behind estimated quantiles.
    pub r_y_quantile: usize,
    /// Covariates and samples per covariate for the sample-form AWD.
    pub r_x_sample: usize,
    pub r_y_sample: usize,
    pub aqe_taus: Vec<f64>,
    /// Collocation draws for density evaluation.
    pub r_density: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            r_x: 1000,
            r_tau: 100,
            r_y_quantile: 1000,
            r_x_sample: 30,
            r_y_sample: 200,
            aqe_taus: vec![0.25, 0.5],
            r_density: DEFAULT_R_DENSITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub process: ProcessKind,
    pub n_list: Vec<usize>,
    pub replicates: usize,
    /// Fit the kernel baseline alongside the network.
    pub kcde: bool,
    pub kcde_bandwidth: BandwidthRule,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            process: ProcessKind::Univariate,
            n_list: vec![250, 500, 1000],
            replicates: 10,
            kcde: true,
            kcde_bandwidth: BandwidthRule::Cv,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KFoldConfig {
    pub k: usize,
    /// Share of each training fold held out to pick the retained epoch.
    pub validation_fraction: f64,
    pub one_hot: bool,
}

impl Default for KFoldConfig {
    fn default() -> Self {
        KFoldConfig {
            k: 5,
            validation_fraction: 0.1,
            one_hot: false,
        }
    }
}

/// Everything a command needs, parsed from JSON with unknown keys rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub metrics: MetricConfig,
    pub study: StudyConfig,
    pub kfold: KFoldConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.model.rank == 0 {
            return bad("model.rank must be at least 1");
        }
        if self.model.hidden_widths.iter().any(|w| *w == 0) {
            return bad("model.hidden_widths entries must be positive");
        }
        let m = &self.metrics;
        if m.r_x < 2 || m.r_x % 2 != 0 || m.r_tau < 2 || m.r_tau % 2 != 0 {
            return bad("metrics.r_x and metrics.r_tau must be even and >= 2");
        }
        if m.r_y_quantile == 0 || m.r_x_sample == 0 || m.r_y_sample == 0 || m.r_density == 0 {
            return bad("metric sample sizes must be positive");
        }
        if m.r_y_sample > metrics::ASSIGNMENT_BUDGET {
            return Err(Error::BudgetExceeded {
                size: m.r_y_sample,
                budget: metrics::ASSIGNMENT_BUDGET,
            });
        }
        if let Some(t) = m.aqe_taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::InvalidTau(*t));
        }
        if self.study.replicates == 0 || self.study.n_list.iter().any(|n| *n < 2) {
            return bad("study needs replicates >= 1 and sample sizes >= 2");
        }
        if self.kfold.k < 2 {
            return bad("kfold.k must be at least 2");
        }
        if !(0.0..1.0).contains(&self.kfold.validation_fraction) {
            return bad("kfold.validation_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; identifies a configuration in
    /// every artifact it produces.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            config_hash: Some(self.hash()),
            seed: Some(self.seed),
        }
    }

    pub fn model_options(&self) -> ModelOptions {
        self.model.options(&self.train)
    }

    /// Training settings with the seed replaced.
    pub fn train_with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }
}

/// Seed for a named sub-task, derived from the master seed.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    rng::labeled(seed, label, index).next_u64()
}

fn train_model(data: &Dataset, cfg: &RunConfig, seed: u64) -> Result<(CpfnModel, Option<String>)> {
    let out = train(data, &cfg.model_options(), &cfg.train_with_seed(seed))?;
    let note = out.abort.map(|e| e.to_string());
    if let Some(n) = &note {
        log::warn!("training stopped early, keeping best snapshot: {n}");
    }
    Ok((out.model.with_provenance(cfg.provenance()), note))
}

// ---------------------------------------------------------------------------
// k-fold NLL

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub nll: f64,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KFoldReport {
    pub folds: Vec<FoldResult>,
    pub mean_nll: f64,
    pub config_hash: String,
    pub seed: u64,
}

/// Raw-scale NLL of a model on test pairs (transform Jacobian included).
pub fn model_nll(model: &CpfnModel, x: &Matrix, y_raw: &Matrix, r_density: usize, seed: u64) -> Result<f64> {
    let eval = DensityEvaluator::new(model, Collocation::Fixed { seed, r: r_density })?;
    metrics::nll(|xi, yi| eval.density(xi, yi, None), x, y_raw)
}

/// Trains on each set of `k - 1` folds (with an inner validation split)
/// and scores the held-out fold by raw-scale NLL.
pub fn kfold_nll(data: &Dataset, cfg: &RunConfig) -> Result<KFoldReport> {
    cfg.validate()?;
    let k = cfg.kfold.k;
    if data.n() < k {
        return Err(Error::InvalidConfig(format!("{} rows cannot form {k} folds", data.n())));
    }
    let data = if cfg.kfold.one_hot { data.one_hot_discrete() } else { data.clone() };
    let split = FoldSplit::new(data.n(), k, cfg.seed)?;
    let mut run = cfg.clone();
    run.train.validation_fraction = cfg.kfold.validation_fraction;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let annotate = |e: Error| Error::InFold {
            fold: f,
            source: Box::new(e),
        };
        let (tr, te) = split.split(f);
        let train_data = data.subset(&tr);
        let test_data = data.subset(&te);
        let start = Instant::now();
        let (model, note) = train_model(&train_data, &run, derive_seed(cfg.seed, "fold", f as u64)).map_err(annotate)?;
        let nll = model_nll(&model, &test_data.x, &test_data.raw_y(), cfg.metrics.r_density, cfg.seed).map_err(annotate)?;
        log::info!("fold {f}: nll {nll:.4} ({:.1}s)", start.elapsed().as_secs_f64());
        folds.push(FoldResult {
            fold: f,
            n_train: tr.len(),
            n_test: te.len(),
            nll,
            note,
        });
    }
    let mean_nll = folds.iter().map(|f| f.nll).sum::<f64>() / k as f64;
    Ok(KFoldReport {
        folds,
        mean_nll,
        config_hash: cfg.hash(),
        seed: cfg.seed,
    })
}

// ---------------------------------------------------------------------------
// Simulation studies

pub const METHOD_CPFN: &str = "cpfn";
pub const METHOD_KCDE: &str = "kcde";

/// Metrics of one method on one replicate. `error` is set when the
/// replicate failed; `note` carries non-fatal warnings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub method: String,
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub per_x: Vec<PointW1>,
    pub fit_seconds: f64,
    pub note: Option<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub schema_version: u32,
    pub process: ProcessKind,
    pub config_hash: String,
    pub seed: u64,
    pub replicates: Vec<ReplicateResult>,
    pub summary: Vec<SummaryRow>,
    /// Self-distance of the true law under the sample-form AWD, when used.
    pub noise_floor: Option<f64>,
}

impl StudyReport {
    pub fn summary_for(&self, method: &str, metric: &str, n: usize) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.method == method && r.metric == metric && r.n == n)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Copy with wall-clock timings zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> StudyReport {
        let mut r = self.clone();
        r.replicates.iter_mut().for_each(|x| x.fit_seconds = 0.0);
        r
    }

    /// Methods and metrics as rows, sample sizes as columns, cells
    /// formatted `mean (std)`.
    pub fn write_table_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut ns: Vec<usize> = self.summary.iter().map(|r| r.n).collect();
        ns.sort_unstable();
        ns.dedup();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["method".to_string(), "metric".to_string()];
        header.extend(ns.iter().map(|n| format!("n={n}")));
        w.write_record(&header)?;
        let mut keys: Vec<(String, String)> = Vec::new();
        for r in &self.summary {
            let k = (r.method.clone(), r.metric.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        for (method, metric) in keys {
            let mut rec = vec![method.clone(), metric.clone()];
            for n in &ns {
                rec.push(match self.summary_for(&method, &metric, *n) {
                    Some(s) if s.count > 0 => format!("{:.3} ({:.3})", s.mean, s.std),
                    _ => "NA".into(),
                });
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per (method, n, replicate, metric).
    pub fn write_replicates_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "n", "replicate", "seed", "metric", "value", "error"])?;
        for r in &self.replicates {
            let err = r.error.clone().unwrap_or_default();
            if r.metrics.is_empty() {
                w.write_record([r.method.clone(), r.n.to_string(), r.replicate.to_string(), r.seed.to_string(), String::new(), String::new(), err.clone()])?;
            }
            for (k, v) in &r.metrics {
                w.write_record([r.method.clone(), r.n.to_string(), r.replicate.to_string(), r.seed.to_string(), k.clone(), format!("{v}"), err.clone()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Quantiles of `Y | X = x` at `taus` from `m` sorted samples.
fn sample_quantiles(mut samples: Vec<f64>, taus: &[f64]) -> Result<Vec<f64>> {
    samples.sort_by(f64::total_cmp);
    taus.iter().map(|t| crate::inference::quantile_sorted(&samples, *t)).collect()
}

fn true_quantiles(x: f64, taus: &[f64]) -> Result<Vec<f64>> {
    taus.iter().map(|t| UnivariateProcess::quantile(x, *t)).collect()
}

fn aqe_key(tau: f64) -> String {
    format!("aqe_{tau}")
}

/// AWD and AQE of a univariate conditional sampler on the evaluation grid.
/// The sampler at grid point `i` draws from stream `("awd_est", i)`.
pub fn univariate_scores(
    mut sampler: impl FnMut(f64, usize, &mut Rng) -> Result<Vec<f64>>,
    m: &MetricConfig,
    seed: u64,
) -> Result<(BTreeMap<String, f64>, QuantileTable)> {
    let r_x = m.r_x as f64;
    let table = QuantileTable::build(
        true_quantiles,
        |x, taus| {
            let i = (x * r_x).round() as u64;
            let s = sampler(x, m.r_y_quantile, &mut rng::labeled(seed, "awd_est", i))?;
            sample_quantiles(s, taus)
        },
        m.r_x,
        m.r_tau,
    )?;
    let mut out = BTreeMap::new();
    out.insert("awd".to_string(), table.awd());
    for t in &m.aqe_taus {
        out.insert(aqe_key(*t), table.aqe(*t)?);
    }
    Ok((out, table))
}

pub fn cpfn_univariate_scores(model: &CpfnModel, m: &MetricConfig, seed: u64) -> Result<(BTreeMap<String, f64>, QuantileTable)> {
    univariate_scores(|x, k, r| Ok(sample_conditional(model, &[x], k, r)?.as_slice().to_vec()), m, seed)
}

pub fn kcde_univariate_scores(model: &KcdeModel, m: &MetricConfig, seed: u64) -> Result<(BTreeMap<String, f64>, QuantileTable)> {
    univariate_scores(|x, k, r| Ok(model.sample_mixture(&[x], k, r)?.as_slice().to_vec()), m, seed)
}

fn representative_points() -> [(&'static str, &'static [f64]); 3] {
    [("x_ring", &X_RING), ("x_trans", &X_TRANS), ("x_blobs", &X_BLOBS)]
}

/// Sample-form AWD (plus W1 at the representative covariates) for a
/// conditional sampler on the ring/blobs process.
pub fn multivariate_scores(
    process: &dyn Process,
    sampler: &mut metrics::SamplerFn<'_>,
    m: &MetricConfig,
    seed: u64,
) -> Result<(BTreeMap<String, f64>, Vec<PointW1>)> {
    let (awd, mut per_x) = awd_multivariate(process, sampler, m.r_x_sample, m.r_y_sample, seed)?;
    let points = w1_at_points(process, sampler, &representative_points(), m.r_y_sample, seed)?;
    let mut out = BTreeMap::new();
    out.insert("awd".to_string(), awd);
    for p in &points {
        out.insert(format!("w1_{}", p.label), p.w1);
    }
    per_x.extend(points);
    Ok((out, per_x))
}

/// Fits and scores both methods on one replicate; errors stay inside the
/// returned records.
fn run_replicate(cfg: &RunConfig, process: &dyn Process, n: usize, rep: usize) -> Vec<ReplicateResult> {
    let seed = derive_seed(cfg.seed, &format!("replicate-n{n}"), rep as u64);
    let data = process.generate(n, &mut rng::labeled(seed, "data", 0));
    let univariate = cfg.study.process == ProcessKind::Univariate;
    let record = |method: &str, res: Result<(BTreeMap<String, f64>, Vec<PointW1>, Option<String>)>, secs: f64| {
        let mut r = ReplicateResult {
            method: method.into(),
            n,
            replicate: rep,
            seed,
            metrics: BTreeMap::new(),
            per_x: Vec::new(),
            fit_seconds: secs,
            note: None,
            error: None,
        };
        match res {
            Ok((m, p, note)) => {
                r.metrics = m;
                r.per_x = p;
                r.note = note;
            }
            Err(e) => {
                log::warn!("{method} n={n} replicate {rep} failed: {e}");
                r.error = Some(e.to_string());
            }
        }
        r
    };

    let mut out = Vec::new();
    let start = Instant::now();
    let cpfn = train_model(&data, cfg, seed).and_then(|(model, note)| {
        let (m, p) = if univariate {
            (cpfn_univariate_scores(&model, &cfg.metrics, seed)?.0, Vec::new())
        } else {
            let mut s = |x: &[f64], k: usize, r: &mut Rng| sample_conditional(&model, x, k, r);
            multivariate_scores(process, &mut s, &cfg.metrics, seed)?
        };
        Ok((m, p, note))
    });
    out.push(record(METHOD_CPFN, cpfn, start.elapsed().as_secs_f64()));

    if cfg.study.kcde {
        let start = Instant::now();
        let kcde = kcde_fit(&data, cfg.study.kcde_bandwidth, KernelFamily::Gaussian).and_then(|model| {
            if univariate {
                return Ok((kcde_univariate_scores(&model, &cfg.metrics, seed)?.0, Vec::new(), None));
            }
            let xs = process.sample_x(cfg.metrics.r_x_sample, &mut rng::labeled(seed, "awd_x", 0));
            let mut flat = xs.as_slice().to_vec();
            for (_, p) in representative_points() {
                flat.extend_from_slice(p);
            }
            let qx = Matrix::from_vec(flat.len() / xs.cols(), xs.cols(), flat);
            let sampler = KcdeSampler::new(&model, &qx)?;
            let mut s = |x: &[f64], k: usize, r: &mut Rng| Ok(sampler.sample(x, k, r)?.0);
            let (m, p) = multivariate_scores(process, &mut s, &cfg.metrics, seed)?;
            Ok((m, p, None))
        });
        out.push(record(METHOD_KCDE, kcde, start.elapsed().as_secs_f64()));
    }
    for r in &out {
        log::info!(
            "{} n={} replicate {}: {:?} ({:.1}s)",
            r.method,
            r.n,
            r.replicate,
            r.metrics.get("awd"),
            r.fit_seconds
        );
    }
    out
}

fn summarize(replicates: &[ReplicateResult]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, usize), Vec<&ReplicateResult>> = BTreeMap::new();
    for r in replicates {
        groups.entry((r.method.clone(), r.n)).or_default().push(r);
    }
    let mut rows = Vec::new();
    for ((method, n), reps) in groups {
        let failed = reps.iter().filter(|r| r.error.is_some()).count();
        let mut names: Vec<&String> = reps.iter().flat_map(|r| r.metrics.keys()).collect();
        names.sort();
        names.dedup();
        for metric in names {
            let vals: Vec<f64> = reps
                .iter()
                .filter_map(|r| r.metrics.get(metric).copied())
                .filter(|v| v.is_finite())
                .collect();
            let (mean, std) = if vals.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&vals) };
            rows.push(SummaryRow {
                method: method.clone(),
                metric: metric.clone(),
                n,
                mean,
                std,
                count: vals.len(),
                failed,
            });
        }
    }
    rows
}

/// Replicated fits of the network (and optionally the kernel baseline) on a
/// synthetic process, scored against the exact conditional law. Failed
/// replicates are recorded and the run continues.
pub fn run_sim_study(cfg: &RunConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let process = cfg.study.process.build();
    let mut replicates = Vec::new();
    for &n in &cfg.study.n_list {
        for rep in 0..cfg.study.replicates {
            replicates.extend(run_replicate(cfg, process.as_ref(), n, rep));
        }
    }
    let noise_floor = match cfg.study.process {
        ProcessKind::Univariate => None,
        ProcessKind::RingBlobs => {
            let floor_seed = derive_seed(cfg.seed, "noise-floor", 0);
            Some(awd_noise_floor(process.as_ref(), cfg.metrics.r_x_sample, cfg.metrics.r_y_sample, floor_seed)?)
        }
    };
    Ok(StudyReport {
        schema_version: 1,
        process: cfg.study.process,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        summary: summarize(&replicates),
        replicates,
        noise_floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn tiny() -> RunConfig {
        let mut c = RunConfig::default();
        c.model.rank = 3;
        c.model.hidden_widths = vec![8];
        c.train.epochs = 5;
        c.train.r = 4;
        c.metrics.r_x = 10;
        c.metrics.r_tau = 10;
        c.metrics.r_y_quantile = 50;
        c.metrics.r_x_sample = 3;
        c.metrics.r_y_sample = 20;
        c.metrics.r_density = 50;
        c.study.n_list = vec![40];
        c.study.replicates = 1;
        c
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"seed": 1, "trian": {}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"epochs": 2, "lr": 1}}"#).is_err());
        let c = RunConfig::from_json(r#"{"seed": 7, "train": {"epochs": 2, "R": 5}}"#).unwrap();
        assert_eq!((c.seed, c.train.epochs, c.train.r), (7, 2, 5));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.epochs += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn validation_catches_bad_grids() {
        let mut c = RunConfig::default();
        c.metrics.r_x = 7;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.metrics.r_y_sample = 1000;
        assert!(matches!(c.validate(), Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn smoke_univariate_study() {
        let rep = run_sim_study(&tiny()).unwrap();
        assert_eq!(rep.replicates.len(), 2);
        for r in &rep.replicates {
            assert!(r.error.is_none(), "{:?}", r.error);
            assert!(r.metrics["awd"].is_finite() && r.metrics["awd"] > 0.0);
        }
        let mut buf = Vec::new();
        rep.write_table_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("method,metric,n=40\n"));
        assert!(text.contains("cpfn,awd,"));
        assert_eq!(rep.without_timings(), run_sim_study(&tiny()).unwrap().without_timings());
    }

    #[test]
    fn smoke_multivariate_study() {
        let mut c = tiny();
        c.study.process = ProcessKind::RingBlobs;
        c.study.kcde_bandwidth = BandwidthRule::Silverman;
        let rep = run_sim_study(&c).unwrap();
        assert!(rep.noise_floor.unwrap() > 0.0);
        for r in &rep.replicates {
            assert!(r.error.is_none(), "{:?}", r.error);
            assert!(r.metrics.contains_key("w1_x_ring"));
        }
    }

    #[test]
    fn oracle_sampler_scores_near_zero() {
        let m = MetricConfig {
            r_x: 20,
            r_tau: 20,
            r_y_quantile: 4000,
            ..MetricConfig::default()
        };
        let (s, _) = univariate_scores(|x, k, r| Ok(UnivariateProcess.sample_conditional(&[x], k, r).as_slice().to_vec()), &m, 1).unwrap();
        assert!(s["awd"] < 0.03, "{s:?}");
    }

    #[test]
    fn kfold_on_gaussian_noise() {
        let mut r = rng::seeded(3);
        let n = 100;
        let x = Matrix::from_vec(n, 1, (0..n).map(|_| StandardNormal.sample(&mut r)).collect());
        let y = Matrix::from_vec(n, 1, (0..n).map(|_| StandardNormal.sample(&mut r)).collect());
        let data = Dataset::new(x, y).unwrap();
        let mut c = tiny();
        c.train.epochs = 20;
        let rep = kfold_nll(&data, &c).unwrap();
        assert_eq!(rep.folds.len(), 5);
        assert!(rep.folds.iter().all(|f| f.n_test == 20 && f.nll.is_finite()));
        assert_eq!(rep, kfold_nll(&data, &c).unwrap());
    }

    #[test]
    fn fold_errors_are_annotated() {
        let data = Dataset::new(Matrix::zeros(3, 1), Matrix::zeros(3, 1)).unwrap();
        let mut c = tiny();
        c.kfold.k = 5;
        assert!(kfold_nll(&data, &c).is_err());
        c.kfold.k = 3;
        c.kfold.validation_fraction = 0.9;
        match kfold_nll(&data, &c) {
            Err(Error::InFold { fold: 0, source }) => assert!(source.is_config_error()),
            other => panic!("{other:?}"),
        }
    }
}
