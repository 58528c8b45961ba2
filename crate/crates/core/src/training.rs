//! Kernel-smoothed likelihood loss, Adam, and the training loop.

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradientResult, Tape, Var};
use crate::data::{apply_stats, standardize_fit, Dataset};
use crate::error::{Error, Result};
use crate::kernels::ln_scaled_kernel_on_tape;
use crate::linalg::Matrix;
use crate::kernels::KernelFamily;
use crate::model::{CpfnModel, Latent, ModelOptions};
use crate::rng::{self, Rng};

/// Data rows per tape. Bounds memory; results do not depend on it beyond
/// floating-point summation order, which is fixed.
const CHUNK_ROWS: usize = 128;

/// Either one value broadcast to every response coordinate or one per
/// coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrVec {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl ScalarOrVec {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            ScalarOrVec::Scalar(v) => vec![*v],
            ScalarOrVec::Vector(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Collocation draws per datum.
    #[serde(rename = "R", alias = "r")]
    pub r: usize,
    pub delta: f64,
    pub eps0: ScalarOrVec,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub validation_fraction: f64,
    /// `None` means full batch.
    pub batch_size: Option<usize>,
    pub train_bandwidth: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3000,
            r: 30,
            delta: 1e-15,
            eps0: ScalarOrVec::Scalar(0.05),
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            validation_fraction: 0.0,
            batch_size: None,
            train_bandwidth: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.r == 0 {
            return bad("R must be at least 1".into());
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        let eps0 = self.eps0.to_vec();
        if eps0.is_empty() || eps0.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("eps0 must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction must lie in [0, 1), got {}", self.validation_fraction));
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be at least 1".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step_count: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(Error::DimensionMismatch {
            context: "adam_step",
            expected: params.len(),
            found: grads.len(),
        });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// `(n R) x q` latent draws, datum-major: rows `i R .. (i+1) R` belong to datum `i`.
pub fn draw_collocation(model: &CpfnModel, n: usize, r: usize, rng: &mut Rng) -> Matrix {
    model.latent.sample(n * r, model.q, rng)
}

#[allow(clippy::too_many_arguments)]
fn build_chunk(
    tape: &mut Tape<'_>,
    model: &CpfnModel,
    x: Matrix,
    y: &Matrix,
    u: Matrix,
    r: usize,
    delta: f64,
    frozen_log_eps: Option<&[f64]>,
    n_total: usize,
) -> Result<Var> {
    let xin = tape.input(x);
    let uin = tape.input(u);
    let phi = model.phi.forward_on_tape(tape, model.phi_offset(), xin)?;
    let psi = model.psi.forward_on_tape(tape, model.psi_offset(), uin)?;
    let phi_rep = tape.repeat_rows(phi, r)?;
    let prod = tape.mul(phi_rep, psi)?;
    let generated = tape.rank_sum(prod, model.rank)?;
    let y_in = tape.input(y.clone());
    let y_rep = tape.repeat_rows(y_in, r)?;
    let residual = tape.sub(y_rep, generated)?;
    let seg = model.log_eps_segment();
    let log_eps = match frozen_log_eps {
        None => tape.param(&seg),
        Some(row) => tape.input(Matrix::row_vector(row)),
    };
    let ln_k = ln_scaled_kernel_on_tape(tape, model.kernel.family, residual, log_eps)?;
    let ln_avg = tape.offset(ln_k, -(r as f64).ln())?;
    let ln_terms = tape.log_sum_exp_groups(ln_avg, r, delta.ln())?;
    let s = tape.sum(ln_terms)?;
    tape.scale(s, -1.0 / n_total as f64)
}

/// Loss (and optionally its gradient) at explicit parameter values with fixed
/// collocation draws `u` (`(n R) x q`). `x` and `y` are standardized.
#[allow(clippy::too_many_arguments)]
pub fn loss_at(
    model: &CpfnModel,
    params: &[f64],
    x: &Matrix,
    y: &Matrix,
    u: &Matrix,
    r: usize,
    delta: f64,
    train_bandwidth: bool,
    with_gradient: bool,
) -> Result<GradientResult> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if y.rows() != n {
        return Err(Error::SizeMismatch { left: n, right: y.rows() });
    }
    if x.cols() != model.d || y.cols() != model.q {
        return Err(Error::DimensionMismatch {
            context: "training batch",
            expected: model.d + model.q,
            found: x.cols() + y.cols(),
        });
    }
    if u.rows() != n * r || u.cols() != model.q {
        return Err(Error::DimensionMismatch {
            context: "collocation draws",
            expected: n * r,
            found: u.rows(),
        });
    }
    if params.len() != model.params.len() {
        return Err(Error::DimensionMismatch {
            context: "parameter vector",
            expected: model.params.len(),
            found: params.len(),
        });
    }
    if !(r >= 1 && delta > 0.0) {
        return Err(Error::InvalidConfig("loss needs R >= 1 and delta > 0".into()));
    }
    let mut value = 0.0;
    let mut gradient = vec![0.0; if with_gradient { params.len() } else { 0 }];
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK_ROWS).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let uidx: Vec<usize> = (start * r..end * r).collect();
        let mut tape = Tape::from_slice(params);
        let out = build_chunk(
            &mut tape,
            model,
            x.select_rows(&idx),
            &y.select_rows(&idx),
            u.select_rows(&uidx),
            r,
            delta,
            (!train_bandwidth).then(|| &params[model.log_eps_offset()..]),
            n,
        )?;
        value += tape.scalar(out);
        if with_gradient {
            let g = tape.gradient(out)?;
            for (a, b) in gradient.iter_mut().zip(&g) {
                *a += b;
            }
        }
        start = end;
    }
    if !value.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteValue { op: "loss" });
    }
    Ok(GradientResult { value, gradient })
}

/// Empirical loss on standardized data with fresh latent draws from `rng`.
pub fn cpfn_loss(model: &CpfnModel, x: &Matrix, y: &Matrix, r: usize, delta: f64, rng: &mut Rng) -> Result<f64> {
    let u = draw_collocation(model, x.rows(), r, rng);
    Ok(loss_at(model, model.params.values(), x, y, &u, r, delta, true, false)?.value)
}

/// Loss and its gradient w.r.t. all parameters, at one set of latent draws.
/// With `train_bandwidth = false` the log-bandwidth coordinates get zero.
pub fn loss_gradient(
    model: &CpfnModel,
    x: &Matrix,
    y: &Matrix,
    r: usize,
    delta: f64,
    train_bandwidth: bool,
    rng: &mut Rng,
) -> Result<GradientResult> {
    let u = draw_collocation(model, x.rows(), r, rng);
    loss_at(model, model.params.values(), x, y, &u, r, delta, train_bandwidth, true)
}

/// Reverse-mode vs central-difference comparison of the loss gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub n_params: usize,
    pub loss: f64,
    pub max_abs_error: f64,
    /// `|g - fd| / max(|g|, |fd|, 1e-4)`; the floor keeps near-zero
    /// components from turning rounding noise into large ratios.
    pub max_rel_error: f64,
    pub worst_index: usize,
}

pub const GRADCHECK_REL_FLOOR: f64 = 1e-4;

/// Checks the loss gradient at the model's parameters, latent draws `u`
/// held fixed, against the fourth-order central difference
/// `(-f(+2h) + 8 f(+h) - 8 f(-h) + f(-2h)) / 12h`. The higher order allows
/// a larger step, so the oracle's rounding noise stays well below the
/// tolerance.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(model: &CpfnModel, x: &Matrix, y: &Matrix, u: &Matrix, r: usize, delta: f64, h: f64) -> Result<GradCheck> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidConfig(format!("finite-difference step must be > 0, got {h}")));
    }
    let p = model.params.values().to_vec();
    let g = loss_at(model, &p, x, y, u, r, delta, true, true)?;
    let mut out = GradCheck {
        n_params: p.len(),
        loss: g.value,
        max_abs_error: 0.0,
        max_rel_error: 0.0,
        worst_index: 0,
    };
    let mut pp = p.clone();
    let at = |k: usize, off: f64, pp: &mut [f64]| -> Result<f64> {
        pp[k] = p[k] + off;
        let v = loss_at(model, pp, x, y, u, r, delta, true, false)?.value;
        pp[k] = p[k];
        Ok(v)
    };
    for k in 0..p.len() {
        let fd = (-at(k, 2.0 * h, &mut pp)? + 8.0 * at(k, h, &mut pp)? - 8.0 * at(k, -h, &mut pp)? + at(k, -2.0 * h, &mut pp)?) / (12.0 * h);
        let abs = (fd - g.gradient[k]).abs();
        let rel = abs / fd.abs().max(g.gradient[k].abs()).max(GRADCHECK_REL_FLOOR);
        out.max_abs_error = out.max_abs_error.max(abs);
        if rel > out.max_rel_error {
            out.max_rel_error = rel;
            out.worst_index = k;
        }
    }
    Ok(out)
}

pub const GRADCHECK_STEP: f64 = 1e-3;

/// A small random model and batch for gradient checking.
#[derive(Clone, Debug)]
pub struct GradCheckInstance {
    pub model: CpfnModel,
    pub x: Matrix,
    pub y: Matrix,
    pub r: usize,
    pub delta: f64,
}

/// Draws `d, q <= 3`, hidden widths `<= 8`, `R <= 5`, random latent law
/// and bandwidths, with all weights and biases jittered away from init.
pub fn random_gradcheck_instance(seed: u64, index: u64) -> Result<GradCheckInstance> {
    use rand::Rng as _;
    use rand_distr::{Distribution, Normal};
    let mut g = rng::labeled(seed, "gradcheck", index);
    let (d, q) = (g.gen_range(1..=3), g.gen_range(1..=3));
    let depth = g.gen_range(1..=2);
    let opts = ModelOptions {
        rank: g.gen_range(1..=5),
        hidden_widths: (0..depth).map(|_| g.gen_range(2..=8)).collect(),
        latent: if g.gen_bool(0.5) { Latent::StandardNormal } else { Latent::Uniform01 },
        kernel: KernelFamily::Gaussian,
        eps0: (0..q).map(|_| g.gen_range(0.3..1.5)).collect(),
    };
    let mut model = CpfnModel::init(d, q, &opts, g.gen())?;
    let jitter = Normal::new(0.0, 0.1).expect("valid normal");
    let theta = model.theta_len();
    for v in &mut model.params.values_mut()[..theta] {
        *v += jitter.sample(&mut g);
    }
    let n = g.gen_range(2..=6);
    let x = Latent::StandardNormal.sample(n, d, &mut g);
    let y = Latent::StandardNormal.sample(n, q, &mut g);
    Ok(GradCheckInstance {
        model,
        x,
        y,
        r: g.gen_range(1..=5),
        delta: 1e-15,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub train_loss: f64,
    /// Monitored loss of the parameters at the start of the epoch:
    /// validation loss, or `NaN` without a validation split.
    pub val_loss: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: CpfnModel,
    pub trace: Vec<TraceRow>,
    /// Epoch whose starting parameters were retained (`epochs` means the
    /// final parameters).
    pub best_epoch: usize,
    pub best_monitor_loss: f64,
    /// Set when training stopped on a non-finite loss; the model is then
    /// the best finite snapshot seen so far.
    pub abort: Option<Error>,
}

pub fn write_trace_csv<W: std::io::Write>(trace: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for row in trace {
        w.write_record(&[row.epoch.to_string(), format!("{}", row.train_loss), format!("{}", row.val_loss)])?;
    }
    w.flush()?;
    Ok(())
}

/// Splits row indices into `(train, validation)` with a seeded shuffle.
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_val = (fraction * n as f64).round() as usize;
    if n_val == 0 {
        return ((0..n).collect(), Vec::new());
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::labeled(seed, "split", 0));
    let mut val = perm[..n_val].to_vec();
    let mut train = perm[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

struct Monitor {
    x: Matrix,
    y: Matrix,
    u: Matrix,
}

fn abort_error(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFiniteValue { op } => Error::NonFiniteLoss {
            epoch,
            detail: format!("`{op}` produced a non-finite value (bandwidth collapse?)"),
        },
        other => other,
    }
}

/// Fits a CPFN to `data` (whose responses are already in the transformed
/// scale, if any). Returns the retained snapshot and the per-epoch trace.
pub fn train(data: &Dataset, opts: &ModelOptions, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut opts = opts.clone();
    opts.eps0 = config.eps0.to_vec();
    let mut model = CpfnModel::init(data.d(), data.q(), &opts, config.seed)?;
    let (x_stats, y_stats) = standardize_fit(data)?;
    let xs = apply_stats(&data.x, &x_stats);
    let ys = apply_stats(&data.y, &y_stats);
    model.x_stats = x_stats;
    model.y_stats = y_stats;
    model.y_transform = data.y_transform;

    let (train_idx, val_idx) = validation_split(data.n(), config.validation_fraction, config.seed);
    if train_idx.is_empty() {
        return Err(Error::InvalidConfig("validation split leaves no training rows".into()));
    }
    let x_train = xs.select_rows(&train_idx);
    let y_train = ys.select_rows(&train_idx);
    let monitor = if val_idx.is_empty() {
        None
    } else {
        let mut vr = rng::labeled(config.seed, "validation", 0);
        Some(Monitor {
            x: xs.select_rows(&val_idx),
            y: ys.select_rows(&val_idx),
            u: draw_collocation(&model, val_idx.len(), config.r, &mut vr),
        })
    };
    let monitor_loss = |params: &[f64], m: &Monitor| -> Result<f64> {
        Ok(loss_at(&model, params, &m.x, &m.y, &m.u, config.r, config.delta, true, false)?.value)
    };

    let n = train_idx.len();
    let batch = config.batch_size.unwrap_or(n).min(n);
    let adam = config.adam();
    let mut state = AdamState::new(model.params.len());
    let mut params = model.params.values().to_vec();
    let mut collocation_rng = rng::labeled(config.seed, "collocation", 0);
    let mut batch_rng = rng::labeled(config.seed, "batches", 0);
    let mut order: Vec<usize> = (0..n).collect();

    let mut trace = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let consider = |loss: f64, epoch: usize, p: &[f64], best: &mut Option<(f64, usize, Vec<f64>)>| {
        if loss.is_finite() && best.as_ref().map_or(true, |b| loss < b.0) {
            *best = Some((loss, epoch, p.to_vec()));
        }
    };
    let mut abort = None;

    for epoch in 0..config.epochs {
        let val_loss = match &monitor {
            Some(m) => match monitor_loss(&params, m) {
                Ok(v) => v,
                Err(e) => {
                    abort = Some(abort_error(epoch + 1, e));
                    break;
                }
            },
            None => f64::NAN,
        };
        let start_params = params.clone();
        if batch < n {
            order.shuffle(&mut batch_rng);
        }
        let mut train_loss = 0.0;
        let mut failed = None;
        for chunk in order.chunks(batch) {
            let (xb, yb) = if batch < n {
                let mut idx = chunk.to_vec();
                idx.sort_unstable();
                (x_train.select_rows(&idx), y_train.select_rows(&idx))
            } else {
                (x_train.clone(), y_train.clone())
            };
            let u = draw_collocation(&model, xb.rows(), config.r, &mut collocation_rng);
            let res = loss_at(&model, &params, &xb, &yb, &u, config.r, config.delta, config.train_bandwidth, true)
                .and_then(|g| {
                    adam_step(&mut params, &g.gradient, &mut state, &adam)?;
                    Ok(g.value)
                });
            match res {
                Ok(v) => train_loss += v * xb.rows() as f64 / n as f64,
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = failed {
            params = start_params;
            abort = Some(abort_error(epoch + 1, e));
            break;
        }
        let monitored = if monitor.is_some() { val_loss } else { train_loss };
        consider(monitored, epoch, &start_params, &mut best);
        trace.push(TraceRow {
            epoch: epoch + 1,
            train_loss,
            val_loss,
        });
        if (epoch + 1) % 100 == 0 {
            debug!("epoch {}: train {train_loss:.5} val {val_loss:.5}", epoch + 1);
        }
    }

    // The last parameters have not been monitored yet.
    if abort.is_none() {
        let final_loss = match &monitor {
            Some(m) => monitor_loss(&params, m),
            None => {
                let mut r = rng::labeled(config.seed, "final", 0);
                let u = draw_collocation(&model, n, config.r, &mut r);
                loss_at(&model, &params, &x_train, &y_train, &u, config.r, config.delta, true, false).map(|g| g.value)
            }
        };
        match final_loss {
            Ok(v) => consider(v, config.epochs, &params, &mut best),
            Err(e) => abort = Some(abort_error(config.epochs, e)),
        }
    }
    if let Some(e) = &abort {
        warn!("training aborted: {e}");
    }

    let (best_loss, best_epoch, best_params) = match best {
        Some(b) => b,
        None if abort.is_some() => (f64::NAN, 0, model.params.values().to_vec()),
        None => return Err(Error::NonFiniteValue { op: "training" }),
    };
    model.params.values_mut().copy_from_slice(&best_params);
    info!("retained parameters from epoch {best_epoch} (monitored loss {best_loss:.6})");
    Ok(TrainOutcome {
        model,
        trace,
        best_epoch,
        best_monitor_loss: best_loss,
        abort,
    })
}
