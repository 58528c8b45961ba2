//! `cpfn` command-line interface.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numerical failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use cpfn::data::{ingest_csv, write_csv, CsvSpec, Dataset};
use cpfn::harness::{self, RunConfig};
use cpfn::inference::{self, Collocation, DensityEvaluator};
use cpfn::kernels::KernelFamily;
use cpfn::model::{load_model, save_model, CpfnModel, Latent, ModelOptions, ResponseTransform};
use cpfn::rng;
use cpfn::simulators::{ProcessKind, RingBlobsProcess};
use cpfn::training::{draw_collocation, gradient_check, train, write_trace_csv};
use cpfn::{Error, Matrix, Result};

#[derive(Parser)]
#[command(name = "cpfn", version, about = "Conditional push-forward neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from a synthetic process.
    Simulate(SimulateArgs),
    /// Fit a model to a CSV dataset.
    Train(TrainArgs),
    /// Draw conditional samples from a model.
    Sample(SampleArgs),
    /// Evaluate conditional densities.
    Density(DensityArgs),
    /// Conditional quantiles, means and covariances.
    Quantiles(QuantilesArgs),
    /// Replicated simulation study against the exact conditional law.
    EvalSim(EvalSimArgs),
    /// k-fold cross-validated negative log-likelihood.
    EvalNll(EvalNllArgs),
    /// Compare the loss gradient with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "univariate")]
    process: ProcessKind,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Options shared by commands reading a CSV dataset.
#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Covariate columns (default: every column not selected as response).
    #[arg(long, value_delimiter = ',')]
    x_columns: Vec<String>,
    /// Response columns (default: columns whose name starts with `y`).
    #[arg(long, value_delimiter = ',')]
    y_columns: Vec<String>,
    /// Covariates holding discrete codes.
    #[arg(long, value_delimiter = ',')]
    discrete: Vec<String>,
    #[arg(long, default_value = "identity")]
    y_transform: ResponseTransform,
}

/// Flag overrides on top of the JSON configuration.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Collocation draws per datum during training.
    #[arg(long = "collocation")]
    r: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    latent: Option<Latent>,
    #[arg(long)]
    kernel: Option<KernelFamily>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    eps0: Option<Vec<f64>>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long)]
    fixed_bandwidth: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    one_hot: bool,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss trace (CSV).
    #[arg(long)]
    trace: Option<PathBuf>,
}

/// Query covariates, from repeated `--x` flags or a CSV of rows.
#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated covariate vector; repeat for several queries.
    #[arg(long = "x", allow_hyphen_values = true)]
    x: Vec<String>,
    /// Headed CSV whose rows are covariate vectors.
    #[arg(long)]
    x_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    query: QueryArgs,
    /// Draws per covariate.
    #[arg(long, default_value_t = 1000)]
    m: usize,
}

#[derive(Args)]
struct DensityArgs {
    #[command(flatten)]
    query: QueryArgs,
    /// Comma-separated response vector; repeat to evaluate several per covariate.
    #[arg(long = "y", allow_hyphen_values = true)]
    y: Vec<String>,
    #[arg(long, default_value_t = inference::DEFAULT_R_DENSITY)]
    r_density: usize,
}

#[derive(Args)]
struct QuantilesArgs {
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long, value_delimiter = ',', default_values_t = inference::SUMMARY_TAUS)]
    taus: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    m: usize,
}

#[derive(Args)]
struct EvalSimArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    process: Option<ProcessKind>,
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    no_kcde: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalNllArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    one_hot: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = cpfn::training::GRADCHECK_STEP)]
    step: f64,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config_error() {
        2
    } else if e.is_data_error() {
        3
    } else {
        4
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train_cmd(a),
        Command::Sample(a) => sample_cmd(a),
        Command::Density(a) => density_cmd(a),
        Command::Quantiles(a) => quantiles_cmd(a),
        Command::EvalSim(a) => eval_sim(a),
        Command::EvalNll(a) => eval_nll(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// `<path>.meta.json` next to a CSV artifact.
fn write_meta(path: &Path, value: serde_json::Value) -> Result<()> {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta.json");
    write_json(Path::new(&p), &value)
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(fs::File::create(path)?)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    if a.n == 0 {
        return Err(Error::InvalidConfig("--n must be at least 1".into()));
    }
    let data = a.process.build().generate(a.n, &mut rng::labeled(a.seed, "simulate", 0));
    write_csv(&data, create(&a.out)?)?;
    let parameters = match a.process {
        ProcessKind::Univariate => json!({}),
        ProcessKind::RingBlobs => serde_json::to_value(RingBlobsProcess::default())?,
    };
    write_meta(&a.out, json!({ "process": a.process, "parameters": parameters, "n": a.n, "seed": a.seed }))?;
    log::info!("wrote {} rows to {}", a.n, a.out.display());
    Ok(())
}

fn load_config(c: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_json(&fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = c.r {
        cfg.train.r = v;
    }
    if let Some(v) = c.rank {
        cfg.model.rank = v;
    }
    if let Some(v) = &c.hidden {
        cfg.model.hidden_widths = v.clone();
    }
    if let Some(v) = c.latent {
        cfg.model.latent = v;
    }
    if let Some(v) = c.kernel {
        cfg.model.kernel = v;
    }
    if let Some(v) = c.delta {
        cfg.train.delta = v;
    }
    if let Some(v) = &c.eps0 {
        cfg.train.eps0 = if v.len() == 1 {
            cpfn::training::ScalarOrVec::Scalar(v[0])
        } else {
            cpfn::training::ScalarOrVec::Vector(v.clone())
        };
    }
    if let Some(v) = c.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = c.batch_size {
        cfg.train.batch_size = Some(v);
    }
    if let Some(v) = c.validation_fraction {
        cfg.train.validation_fraction = v;
    }
    if c.fixed_bandwidth {
        cfg.train.train_bandwidth = false;
    }
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(a: &DataArgs) -> Result<Dataset> {
    let (mut xc, mut yc) = (a.x_columns.clone(), a.y_columns.clone());
    if xc.is_empty() || yc.is_empty() {
        let mut rdr = csv::Reader::from_path(&a.data)?;
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if yc.is_empty() {
            yc = header.iter().filter(|h| h.starts_with('y') && !xc.contains(h)).cloned().collect();
        }
        if xc.is_empty() {
            xc = header.iter().filter(|h| !yc.contains(h)).cloned().collect();
        }
    }
    let spec = CsvSpec {
        x_columns: xc,
        y_columns: yc,
        discrete_columns: a.discrete.clone(),
        y_transform: a.y_transform,
    };
    ingest_csv(&a.data, &spec)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = load_config(&a.cfg)?;
    let mut data = load_data(&a.data)?;
    if a.one_hot {
        data = data.one_hot_discrete();
    }
    let opts: ModelOptions = cfg.model_options();
    let outcome = train(&data, &opts, &cfg.train)?;
    if let Some(e) = &outcome.abort {
        log::warn!("{e}; keeping the best finite snapshot");
    }
    log::info!(
        "best monitored loss {:.5} at epoch {}",
        outcome.best_monitor_loss,
        outcome.best_epoch
    );
    let model = outcome.model.with_provenance(cfg.provenance());
    save_model(&model, &a.out)?;
    if let Some(p) = &a.trace {
        write_trace_csv(&outcome.trace, create(p)?)?;
        write_meta(p, json!({ "config_hash": cfg.hash(), "seed": cfg.seed }))?;
    }
    Ok(())
}

fn parse_vector(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("cannot parse {what} `{s}`")))
        })
        .collect()
}

fn query_points(q: &QueryArgs, model: &CpfnModel) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = q.x.iter().map(|s| parse_vector(s, "covariate")).collect::<Result<_>>()?;
    if let Some(p) = &q.x_file {
        let mut rdr = csv::Reader::from_path(p)?;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|c| {
                    c.trim().parse::<f64>().map_err(|_| Error::Parse {
                        row: i + 1,
                        column: String::new(),
                        message: format!("`{c}` is not a number"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidConfig("no query covariates given (use --x or --x-file)".into()));
    }
    for r in &rows {
        if r.len() != model.d {
            return Err(Error::DimensionMismatch {
                context: "query covariate",
                expected: model.d,
                found: r.len(),
            });
        }
    }
    Ok(Matrix::from_rows(&rows))
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn query_meta(q: &QueryArgs, model: &CpfnModel, extra: serde_json::Value) -> Result<()> {
    if let Some(p) = &q.out {
        let mut v = json!({
            "model_config_hash": model.provenance.config_hash,
            "model_seed": model.provenance.seed,
            "seed": q.seed,
        });
        if let (Some(m), Some(e)) = (v.as_object_mut(), extra.as_object()) {
            m.extend(e.clone());
        }
        write_meta(p, v)?;
    }
    Ok(())
}

fn coord_names(prefix: &str, k: usize) -> Vec<String> {
    if k == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=k).map(|i| format!("{prefix}{i}")).collect()
    }
}

fn sample_cmd(a: SampleArgs) -> Result<()> {
    let model = load_model(&a.query.model)?;
    let xs = query_points(&a.query, &model)?;
    let mut w = csv::Writer::from_writer(output(&a.query.out)?);
    let mut header = vec!["query".to_string()];
    header.extend(coord_names("x", model.d));
    header.extend(coord_names("y", model.q));
    w.write_record(&header)?;
    for (i, x) in xs.iter_rows().enumerate() {
        let s = inference::sample_conditional(&model, x, a.m, &mut rng::labeled(a.query.seed, "sample", i as u64))?;
        for row in s.iter_rows() {
            let mut rec = vec![i.to_string()];
            rec.extend(x.iter().chain(row).map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    query_meta(&a.query, &model, json!({ "m": a.m }))
}

fn density_cmd(a: DensityArgs) -> Result<()> {
    let model = load_model(&a.query.model)?;
    let xs = query_points(&a.query, &model)?;
    let ys: Vec<Vec<f64>> = a.y.iter().map(|s| parse_vector(s, "response")).collect::<Result<_>>()?;
    if ys.is_empty() {
        return Err(Error::InvalidConfig("no responses given (use --y)".into()));
    }
    let eval = DensityEvaluator::new(
        &model,
        Collocation::Fixed {
            seed: a.query.seed,
            r: a.r_density,
        },
    )?;
    let mut w = csv::Writer::from_writer(output(&a.query.out)?);
    let mut header = vec!["query".to_string()];
    header.extend(coord_names("x", model.d));
    header.extend(coord_names("y", model.q));
    header.extend(["density".to_string(), "log_density".to_string()]);
    w.write_record(&header)?;
    for (i, x) in xs.iter_rows().enumerate() {
        for y in &ys {
            if y.len() != model.q {
                return Err(Error::DimensionMismatch {
                    context: "query response",
                    expected: model.q,
                    found: y.len(),
                });
            }
            let ld = eval.ln_density(x, y, None)?;
            let mut rec = vec![i.to_string()];
            rec.extend(x.iter().chain(y).map(|v| format!("{v}")));
            rec.push(format!("{}", ld.exp()));
            rec.push(format!("{ld}"));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    query_meta(&a.query, &model, json!({ "r_density": a.r_density }))
}

fn quantiles_cmd(a: QuantilesArgs) -> Result<()> {
    let model = load_model(&a.query.model)?;
    let xs = query_points(&a.query, &model)?;
    let mut w = csv::Writer::from_writer(output(&a.query.out)?);
    w.write_record(["query", "coordinate", "statistic", "tau", "value"])?;
    for (i, x) in xs.iter_rows().enumerate() {
        let mut r = rng::labeled(a.query.seed, "quantiles", i as u64);
        let s = inference::sample_conditional(&model, x, a.m, &mut r)?;
        let mut stats = inference::sample_statistics(&s)?;
        for j in 0..model.q {
            stats.quantiles[j] = inference::empirical_quantiles(&s.column(j), &a.taus)?;
        }
        for j in 0..model.q {
            let c = j.to_string();
            w.write_record([i.to_string(), c.clone(), "mean".into(), String::new(), format!("{}", stats.mean[j])])?;
            for (t, v) in a.taus.iter().zip(&stats.quantiles[j]) {
                w.write_record([i.to_string(), c.clone(), "quantile".into(), format!("{t}"), format!("{v}")])?;
            }
            for k in 0..model.q {
                w.write_record([
                    i.to_string(),
                    c.clone(),
                    format!("cov_{k}"),
                    String::new(),
                    format!("{}", stats.covariance.get(j, k)),
                ])?;
            }
        }
    }
    w.flush()?;
    query_meta(&a.query, &model, json!({ "m": a.m, "taus": a.taus }))
}

fn eval_sim(a: EvalSimArgs) -> Result<()> {
    let mut cfg = load_config(&a.cfg)?;
    if let Some(p) = a.process {
        cfg.study.process = p;
    }
    if let Some(n) = a.n_list {
        cfg.study.n_list = n;
    }
    if let Some(r) = a.replicates {
        cfg.study.replicates = r;
    }
    if a.no_kcde {
        cfg.study.kcde = false;
    }
    cfg.validate()?;
    let report = harness::run_sim_study(&cfg)?;
    fs::create_dir_all(&a.out_dir)?;
    fs::write(a.out_dir.join("report.json"), report.to_json()? + "\n")?;
    write_json(&a.out_dir.join("config.json"), &serde_json::to_value(&cfg)?)?;
    let meta = json!({ "config_hash": report.config_hash, "seed": report.seed });
    let table = a.out_dir.join("table.csv");
    report.write_table_csv(create(&table)?)?;
    write_meta(&table, meta.clone())?;
    let reps = a.out_dir.join("replicates.csv");
    report.write_replicates_csv(create(&reps)?)?;
    write_meta(&reps, meta)?;
    let failed = report.replicates.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} replicate fits failed; see report.json");
    }
    Ok(())
}

fn eval_nll(a: EvalNllArgs) -> Result<()> {
    let mut cfg = load_config(&a.cfg)?;
    if let Some(k) = a.k {
        cfg.kfold.k = k;
    }
    if a.one_hot {
        cfg.kfold.one_hot = true;
    }
    cfg.validate()?;
    let data = load_data(&a.data)?;
    let report = harness::kfold_nll(&data, &cfg)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(p) => {
            let mut f = create(p)?;
            f.write_all(text.as_bytes())?;
        }
        None => print!("{text}"),
    }
    if report.folds.iter().any(|f| !f.nll.is_finite()) {
        return Err(Error::NonFiniteValue { op: "fold nll" });
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let mut worst = 0.0f64;
    let mut results = Vec::new();
    for i in 0..a.instances {
        let inst = cpfn::training::random_gradcheck_instance(a.seed, i as u64)?;
        let u = draw_collocation(&inst.model, inst.x.rows(), inst.r, &mut rng::labeled(a.seed, "gradcheck_u", i as u64));
        let g = gradient_check(&inst.model, &inst.x, &inst.y, &u, inst.r, inst.delta, a.step)?;
        worst = worst.max(g.max_rel_error);
        results.push(json!({
            "instance": i, "d": inst.model.d, "q": inst.model.q, "rank": inst.model.rank,
            "R": inst.r, "n_params": g.n_params, "loss": g.loss,
            "max_abs_error": g.max_abs_error, "max_rel_error": g.max_rel_error,
        }));
    }
    let pass = worst < a.tol;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({ "instances": results, "max_rel_error": worst, "tol": a.tol, "pass": pass }))?
    );
    if !pass {
        return Err(Error::GradientMismatch {
            max_rel_error: worst,
            tol: a.tol,
        });
    }
    Ok(())
}
