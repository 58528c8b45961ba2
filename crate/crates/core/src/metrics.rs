//! Wasserstein-based accuracy metrics (AWD, AQE), negative log-likelihood,
//! and the exact optimal-transport machinery behind them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{self, Rng};
use crate::simulators::Process;

/// Default cap on the assignment problem size.
pub const ASSIGNMENT_BUDGET: usize = 512;

/// Optimal matching between two equal-size clouds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    /// `assignment[i]` is the index in `b` matched to `a[i]`.
    pub assignment: Vec<usize>,
    /// Mean ground cost of the matching.
    pub cost: f64,
}

/// Empirical 1-Wasserstein distance between two equal-size 1D samples.
pub fn w1_sorted_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean Euclidean cost of matching row `i` of `a` to row `perm[i]` of `b`,
/// summed in row order.
pub fn plan_cost(a: &Matrix, b: &Matrix, perm: &[usize]) -> f64 {
    perm.iter()
        .enumerate()
        .map(|(i, &j)| euclid(a.row(i), b.row(j)))
        .sum::<f64>()
        / perm.len() as f64
}

/// Exact empirical 1-Wasserstein distance between equal-size point clouds
/// (rows of `a` and `b`) under the Euclidean ground cost.
pub fn w1_assignment(a: &Matrix, b: &Matrix) -> Result<TransportPlan> {
    w1_assignment_with_budget(a, b, ASSIGNMENT_BUDGET)
}

pub fn w1_assignment_with_budget(a: &Matrix, b: &Matrix, budget: usize) -> Result<TransportPlan> {
    if a.rows() != b.rows() {
        return Err(Error::SizeMismatch {
            left: a.rows(),
            right: b.rows(),
        });
    }
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch {
            context: "point clouds",
            expected: a.cols(),
            found: b.cols(),
        });
    }
    let m = a.rows();
    if m == 0 {
        return Err(Error::EmptyDataset);
    }
    if m > budget {
        return Err(Error::BudgetExceeded { size: m, budget });
    }
    let mut cost = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            cost[i * m + j] = euclid(a.row(i), b.row(j));
        }
    }
    let assignment = solve_assignment(&cost, m);
    let cost = plan_cost(a, b, &assignment);
    Ok(TransportPlan { assignment, cost })
}

/// Shortest augmenting path assignment with dual potentials, `O(m^3)`.
/// `cost` is `m x m` row-major; returns the column assigned to each row.
pub fn solve_assignment(cost: &[f64], m: usize) -> Vec<usize> {
    // 1-based arrays; column 0 is the virtual source.
    let mut u = vec![0.0; m + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1]; // p[j]: row matched to column j
    let mut way = vec![0usize; m + 1];
    for i in 1..=m {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; m];
    for j in 1..=m {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

/// Composite Simpson weights for `n` (even) equal intervals of width `h`.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(n >= 2 && n % 2 == 0, "Simpson's rule needs an even interval count");
    (0..=n)
        .map(|i| {
            let c = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect()
}

/// True and estimated conditional quantiles on the evaluation grid
/// `x_i = i / R_X`, `tau_j = j / R_tau` (with the tau endpoints clipped).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    pub xs: Vec<f64>,
    pub taus: Vec<f64>,
    /// `xs.len() x taus.len()`
    pub true_q: Matrix,
    pub est_q: Matrix,
}

fn check_even(name: &str, n: usize) -> Result<()> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidConfig(format!("{name} must be an even number >= 2, got {n}")));
    }
    Ok(())
}

pub fn tau_grid(r_tau: usize) -> Vec<f64> {
    let lo = 1.0 / r_tau as f64;
    (0..=r_tau).map(|j| (j as f64 / r_tau as f64).clamp(lo, 1.0 - lo)).collect()
}

impl QuantileTable {
    /// Evaluates both quantile sources on the grid. Each source maps a
    /// covariate and a list of levels to quantiles.
    pub fn build(
        mut true_q: impl FnMut(f64, &[f64]) -> Result<Vec<f64>>,
        mut est_q: impl FnMut(f64, &[f64]) -> Result<Vec<f64>>,
        r_x: usize,
        r_tau: usize,
    ) -> Result<Self> {
        check_even("R_X", r_x)?;
        check_even("R_tau", r_tau)?;
        let xs: Vec<f64> = (0..=r_x).map(|i| i as f64 / r_x as f64).collect();
        let taus = tau_grid(r_tau);
        let mut t = Matrix::zeros(xs.len(), taus.len());
        let mut e = Matrix::zeros(xs.len(), taus.len());
        for (i, &x) in xs.iter().enumerate() {
            let tq = true_q(x, &taus)?;
            let eq = est_q(x, &taus)?;
            if tq.len() != taus.len() || eq.len() != taus.len() {
                return Err(Error::DimensionMismatch {
                    context: "quantile source output",
                    expected: taus.len(),
                    found: tq.len().min(eq.len()),
                });
            }
            t.row_mut(i).copy_from_slice(&tq);
            e.row_mut(i).copy_from_slice(&eq);
        }
        Ok(QuantileTable {
            xs,
            taus,
            true_q: t,
            est_q: e,
        })
    }

    fn r_x(&self) -> usize {
        self.xs.len() - 1
    }

    /// Double Simpson integral of `|q - q_hat|` over `[0,1]^2`.
    pub fn awd(&self) -> f64 {
        let wx = simpson_weights(self.r_x(), 1.0 / self.r_x() as f64);
        let wt = simpson_weights(self.taus.len() - 1, 1.0 / (self.taus.len() - 1) as f64);
        let mut total = 0.0;
        for (i, a) in wx.iter().enumerate() {
            let (t, e) = (self.true_q.row(i), self.est_q.row(i));
            let inner: f64 = wt.iter().zip(t.iter().zip(e)).map(|(w, (p, q))| w * (p - q).abs()).sum();
            total += a * inner;
        }
        total
    }

    /// Simpson average over `x` of `|q - q_hat|` at the grid level closest
    /// to `tau`.
    pub fn aqe(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidTau(tau));
        }
        let j = self
            .taus
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - tau).abs().total_cmp(&(b.1 - tau).abs()))
            .map(|(j, _)| j)
            .expect("nonempty grid");
        let wx = simpson_weights(self.r_x(), 1.0 / self.r_x() as f64);
        Ok(wx
            .iter()
            .enumerate()
            .map(|(i, w)| w * (self.true_q.get(i, j) - self.est_q.get(i, j)).abs())
            .sum())
    }

    /// Long format `x, tau, true_q, est_q` for plotting.
    pub fn write_long_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "tau", "true_q", "est_q"])?;
        for (i, x) in self.xs.iter().enumerate() {
            for (j, tau) in self.taus.iter().enumerate() {
                w.write_record(&[
                    format!("{x}"),
                    format!("{tau}"),
                    format!("{}", self.true_q.get(i, j)),
                    format!("{}", self.est_q.get(i, j)),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Average Wasserstein distance for a univariate covariate uniform on
/// `[0,1]`, via the quantile-integral form.
pub fn awd_univariate(
    true_q: impl FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    est_q: impl FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    r_x: usize,
    r_tau: usize,
) -> Result<f64> {
    Ok(QuantileTable::build(true_q, est_q, r_x, r_tau)?.awd())
}

/// Average quantile error at one level `tau`, Simpson-averaged over
/// `x_i = i / R_X`.
pub fn aqe(
    mut true_q: impl FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    mut est_q: impl FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    tau: f64,
    r_x: usize,
) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidTau(tau));
    }
    check_even("R_X", r_x)?;
    let w = simpson_weights(r_x, 1.0 / r_x as f64);
    let mut total = 0.0;
    for (i, wi) in w.iter().enumerate() {
        let x = i as f64 / r_x as f64;
        total += wi * (true_q(x, &[tau])?[0] - est_q(x, &[tau])?[0]).abs();
    }
    Ok(total)
}

/// One covariate's contribution to a sample-based AWD.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointW1 {
    pub label: String,
    pub x: Vec<f64>,
    pub w1: f64,
}

/// Conditional sampler signature: `(x, m, rng) -> m x q`.
pub type SamplerFn<'a> = dyn FnMut(&[f64], usize, &mut Rng) -> Result<Matrix> + 'a;

/// Sample-based AWD: `R_X` covariates from the process' covariate law,
/// `R_Y` true and estimated conditional draws at each, exact W1 per point.
/// Randomness comes from streams labelled `true_label` / `est_label`, so
/// identical labels give identical draws.
#[allow(clippy::too_many_arguments)]
pub fn awd_multivariate_with_streams(
    process: &dyn Process,
    est: &mut SamplerFn<'_>,
    r_x: usize,
    r_y: usize,
    seed: u64,
    true_label: &str,
    est_label: &str,
) -> Result<(f64, Vec<PointW1>)> {
    if r_x == 0 || r_y == 0 {
        return Err(Error::InvalidConfig("R_X and R_Y must be positive".into()));
    }
    if r_y > ASSIGNMENT_BUDGET {
        return Err(Error::BudgetExceeded {
            size: r_y,
            budget: ASSIGNMENT_BUDGET,
        });
    }
    let xs = process.sample_x(r_x, &mut rng::labeled(seed, "awd_x", 0));
    let mut per_x = Vec::with_capacity(r_x);
    for (i, x) in xs.iter_rows().enumerate() {
        let t = process.sample_conditional(x, r_y, &mut rng::labeled(seed, true_label, i as u64));
        let e = est(x, r_y, &mut rng::labeled(seed, est_label, i as u64))?;
        let plan = w1_assignment(&t, &e)?;
        per_x.push(PointW1 {
            label: format!("x{i}"),
            x: x.to_vec(),
            w1: plan.cost,
        });
    }
    let awd = per_x.iter().map(|p| p.w1).sum::<f64>() / r_x as f64;
    Ok((awd, per_x))
}

pub fn awd_multivariate(
    process: &dyn Process,
    est: &mut SamplerFn<'_>,
    r_x: usize,
    r_y: usize,
    seed: u64,
) -> Result<(f64, Vec<PointW1>)> {
    awd_multivariate_with_streams(process, est, r_x, r_y, seed, "awd_true", "awd_est")
}

/// Expected empirical W1 between two independent `R_Y`-samples of the true
/// law: the floor any estimator's sample-based AWD is measured against.
pub fn awd_noise_floor(process: &dyn Process, r_x: usize, r_y: usize, seed: u64) -> Result<f64> {
    let mut own = |x: &[f64], m: usize, r: &mut Rng| Ok(process.sample_conditional(x, m, r));
    Ok(awd_multivariate_with_streams(process, &mut own, r_x, r_y, seed, "awd_true", "awd_floor")?.0)
}

/// W1 at fixed, named covariates.
pub fn w1_at_points(
    process: &dyn Process,
    est: &mut SamplerFn<'_>,
    points: &[(&str, &[f64])],
    r_y: usize,
    seed: u64,
) -> Result<Vec<PointW1>> {
    points
        .iter()
        .enumerate()
        .map(|(i, (label, x))| {
            let t = process.sample_conditional(x, r_y, &mut rng::labeled(seed, "point_true", i as u64));
            let e = est(x, r_y, &mut rng::labeled(seed, "point_est", i as u64))?;
            Ok(PointW1 {
                label: label.to_string(),
                x: x.to_vec(),
                w1: w1_assignment(&t, &e)?.cost,
            })
        })
        .collect()
}

/// Guard added inside the logarithm so a zero density stays finite.
pub const NLL_GUARD: f64 = 1e-300;

/// `-(1/N) sum log(guard + f(y_i | x_i))` with `density` in raw scale.
pub fn nll(mut density: impl FnMut(&[f64], &[f64]) -> Result<f64>, x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if x.rows() != y.rows() {
        return Err(Error::SizeMismatch {
            left: x.rows(),
            right: y.rows(),
        });
    }
    let mut total = 0.0;
    for i in 0..x.rows() {
        total -= (NLL_GUARD + density(x.row(i), y.row(i))?).ln();
    }
    Ok(total / x.rows() as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleSizes {
    pub r_x: Option<usize>,
    pub r_tau: Option<usize>,
    pub r_y: Option<usize>,
}

/// Versioned metrics report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub per_x: Vec<PointW1>,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub sample_sizes: SampleSizes,
}

impl EvalReport {
    pub const SCHEMA_VERSION: u32 = 1;

    pub fn new(config_hash: Option<String>, seed: Option<u64>, sample_sizes: SampleSizes) -> Self {
        EvalReport {
            schema_version: Self::SCHEMA_VERSION,
            metrics: BTreeMap::new(),
            per_x: Vec::new(),
            config_hash,
            seed,
            sample_sizes,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((k, v)) = self.metrics.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("metric `{k}` is {v}")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// `section, name, value` rows: metrics first, then the per-x breakdown.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["section", "name", "value"])?;
        for (k, v) in &self.metrics {
            w.write_record(["metric", k.as_str(), &format!("{v}")])?;
        }
        for p in &self.per_x {
            w.write_record(["w1", p.label.as_str(), &format!("{}", p.w1)])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulators::{true_univariate_quantile, RingBlobsProcess, UnivariateProcess};
    use rand::Rng as _;

    fn brute_force(a: &Matrix, b: &Matrix) -> f64 {
        fn rec(k: usize, perm: &mut Vec<usize>, used: &mut Vec<bool>, a: &Matrix, b: &Matrix, best: &mut f64) {
            let m = a.rows();
            if k == m {
                *best = best.min(plan_cost(a, b, perm));
                return;
            }
            for j in 0..m {
                if !used[j] {
                    used[j] = true;
                    perm.push(j);
                    rec(k + 1, perm, used, a, b, best);
                    perm.pop();
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(0, &mut Vec::new(), &mut vec![false; a.rows()], a, b, &mut best);
        best
    }

    fn cloud(m: usize, q: usize, r: &mut Rng) -> Matrix {
        Matrix::from_vec(m, q, (0..m * q).map(|_| r.gen_range(-2.0..2.0)).collect())
    }

    #[test]
    fn sorted_references() {
        assert_eq!(w1_sorted_1d(&[0.3, 1.0], &[1.0, 0.3]).unwrap(), 0.0);
        assert_eq!(w1_sorted_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(w1_sorted_1d(&[0.0, 2.0], &[1.0, 3.0]).unwrap(), 1.0);
        assert!(matches!(w1_sorted_1d(&[0.0], &[1.0, 2.0]), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn assignment_references() {
        let a = Matrix::from_rows(&[[0.0, 0.0]]);
        let b = Matrix::from_rows(&[[3.0, 4.0]]);
        assert_eq!(w1_assignment(&a, &b).unwrap().cost, 5.0);
        let c = cloud(9, 2, &mut rng::seeded(1));
        let p = w1_assignment(&c, &c).unwrap();
        assert_eq!(p.cost, 0.0);
        assert_eq!(p.assignment, (0..9).collect::<Vec<_>>());
        let big = Matrix::zeros(513, 1);
        assert!(matches!(w1_assignment(&big, &big), Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn assignment_matches_exhaustive_search() {
        let mut r = rng::seeded(7);
        for _ in 0..40 {
            let m = r.gen_range(1..=6);
            let (a, b) = (cloud(m, 2, &mut r), cloud(m, 2, &mut r));
            let plan = w1_assignment(&a, &b).unwrap();
            assert_eq!(plan.cost, brute_force(&a, &b));
            let mut seen = plan.assignment.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..m).collect::<Vec<_>>());
        }
    }

    #[test]
    fn sorted_agrees_with_assignment_in_1d() {
        let mut r = rng::seeded(3);
        for _ in 0..50 {
            let m = r.gen_range(1..40);
            let (a, b) = (cloud(m, 1, &mut r), cloud(m, 1, &mut r));
            let s = w1_sorted_1d(a.as_slice(), b.as_slice()).unwrap();
            assert!((s - w1_assignment(&a, &b).unwrap().cost).abs() < 1e-10);
        }
    }

    #[test]
    fn simpson_integrates_cubics_exactly() {
        let w = simpson_weights(10, 0.1);
        let s: f64 = w.iter().enumerate().map(|(i, w)| w * (i as f64 * 0.1).powi(3)).sum();
        assert!((s - 0.25).abs() < 1e-14);
        assert_eq!(tau_grid(4), vec![0.25, 0.25, 0.5, 0.75, 0.75]);
    }

    fn true_q(x: f64, taus: &[f64]) -> Result<Vec<f64>> {
        taus.iter().map(|t| true_univariate_quantile(x, *t)).collect()
    }

    #[test]
    fn awd_identity_and_shift() {
        let zero = awd_univariate(true_q, true_q, 20, 10).unwrap();
        assert!(zero.abs() < 1e-10);
        let shifted = |x: f64, t: &[f64]| Ok(true_q(x, t)?.into_iter().map(|v| v + 0.1).collect());
        let s = awd_univariate(true_q, shifted, 20, 10).unwrap();
        assert!((s - 0.1).abs() < 1e-6, "{s}");
        assert!(aqe(true_q, true_q, 0.5, 20).unwrap().abs() < 1e-12);
        assert!((aqe(true_q, shifted, 0.25, 20).unwrap() - 0.1).abs() < 1e-6);
        assert!(awd_univariate(true_q, true_q, 3, 10).is_err());
    }

    #[test]
    fn table_aqe_matches_direct_aqe() {
        let shifted = |x: f64, t: &[f64]| Ok(true_q(x, t)?.into_iter().map(|v| v + x * x).collect());
        let table = QuantileTable::build(true_q, shifted, 20, 8).unwrap();
        let direct = aqe(true_q, shifted, 0.25, 20).unwrap();
        assert!((table.aqe(0.25).unwrap() - direct).abs() < 1e-12);
        let mut buf = Vec::new();
        table.write_long_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 21 * 9);
    }

    #[test]
    fn multivariate_awd_same_streams_is_zero() {
        let p = RingBlobsProcess::default();
        let mut own = |x: &[f64], m: usize, r: &mut Rng| Ok(p.sample_conditional(x, m, r));
        let (awd, per_x) = awd_multivariate_with_streams(&p, &mut own, 4, 30, 1, "s", "s").unwrap();
        assert_eq!(awd, 0.0);
        assert_eq!(per_x.len(), 4);
        let floor = awd_noise_floor(&p, 4, 30, 1).unwrap();
        assert!(floor > 0.0);
    }

    #[test]
    fn univariate_quantile_form_agrees_with_sample_form() {
        // both estimate AWD of a shifted model; sample form carries the noise floor
        let p = UnivariateProcess;
        let mut shifted = |x: &[f64], m: usize, r: &mut Rng| Ok(p.sample_conditional(x, m, r).map(|v| v + 0.3));
        let (sample_awd, _) = awd_multivariate(&p, &mut shifted, 60, 400, 5).unwrap();
        let floor = awd_noise_floor(&p, 60, 400, 5).unwrap();
        let shifted_q = |x: f64, t: &[f64]| Ok(true_q(x, t)?.into_iter().map(|v| v + 0.3).collect());
        let exact = awd_univariate(true_q, shifted_q, 100, 100).unwrap();
        assert!((sample_awd - exact).abs() < 2.0 * floor, "{sample_awd} {exact} {floor}");
    }

    #[test]
    fn nll_references() {
        let x = Matrix::from_rows(&[[0.0], [1.0]]);
        let y = Matrix::from_rows(&[[0.2], [0.9]]);
        assert_eq!(nll(|_, _| Ok(1.0), &x, &y).unwrap(), 0.0);
        assert!((nll(|_, _| Ok(2.0), &x, &y).unwrap() + 2f64.ln()).abs() < 1e-15);
        assert!(nll(|_, _| Ok(0.0), &x, &y).unwrap().is_finite());
    }

    #[test]
    fn report_round_trips() {
        let mut r = EvalReport::new(Some("abc".into()), Some(4), SampleSizes::default());
        r.insert("awd", 0.05);
        let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        r.insert("bad", f64::NAN);
        assert!(r.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pts(m: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-5.0f64..5.0, m * 2)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn metric_axioms(a in pts(6), b in pts(6), c in pts(6), k in 0.1f64..10.0) {
                let (a, b, c) = (Matrix::from_vec(6, 2, a), Matrix::from_vec(6, 2, b), Matrix::from_vec(6, 2, c));
                let ab = w1_assignment(&a, &b).unwrap().cost;
                let ba = w1_assignment(&b, &a).unwrap().cost;
                let bc = w1_assignment(&b, &c).unwrap().cost;
                let ac = w1_assignment(&a, &c).unwrap().cost;
                prop_assert!(ab >= 0.0);
                prop_assert!((ab - ba).abs() < 1e-12);
                prop_assert!(ac <= ab + bc + 1e-9);
                prop_assert_eq!(w1_assignment(&a, &a).unwrap().cost, 0.0);
                let (ka, kb) = (a.map(|v| k * v), b.map(|v| k * v));
                let scaled = w1_assignment(&ka, &kb).unwrap().cost;
                prop_assert!((scaled - k * ab).abs() < 1e-12 * (1.0 + k * ab));
            }
        }
    }
}
