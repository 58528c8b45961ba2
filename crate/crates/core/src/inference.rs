//! Conditional sampling, density evaluation, quantiles and summary
//! statistics for a trained model.

use serde::{Deserialize, Serialize};

use crate::autodiff::log_sum_exp_with_floor;
use crate::error::{Error, Result};
use crate::kernels::ln_scaled_kernel;
use crate::linalg::Matrix;
use crate::model::{combine_rank, CpfnModel};
use crate::rng::{self, Rng};

/// Default number of latent draws for density estimates.
pub const DEFAULT_R_DENSITY: usize = 1000;

/// Levels reported by [`conditional_statistics`].
pub const SUMMARY_TAUS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

/// `m` draws of the generator at a standardized covariate, still in
/// standardized response coordinates.
pub fn sample_standardized(model: &CpfnModel, x_std: &[f64], m: usize, rng: &mut Rng) -> Result<Matrix> {
    if m == 0 {
        return Err(Error::InvalidConfig("sample count must be at least 1".into()));
    }
    let u = model.latent.sample(m, model.q, rng);
    model.generate_at(x_std, &u)
}

/// `m x q` draws of `Y | X = x`, with `x` and the result in raw scale.
pub fn sample_conditional(model: &CpfnModel, x: &[f64], m: usize, rng: &mut Rng) -> Result<Matrix> {
    let xs = model.standardize_x(x)?;
    let mut out = sample_standardized(model, &xs, m, rng)?;
    model.destandardize_y_in_place(&mut out);
    Ok(out)
}

/// Where the latent draws of a density estimate come from.
#[derive(Clone, Copy, Debug)]
pub enum Collocation {
    /// Draws seeded once and shared by every query: reproducible and
    /// comparable across points.
    Fixed { seed: u64, r: usize },
    /// Fresh draws from the given stream on every query.
    Fresh { r: usize },
}

/// Monte Carlo estimator of the model's conditional density. With fixed
/// collocation the `psi(u_j)` features are computed once.
pub struct DensityEvaluator<'m> {
    model: &'m CpfnModel,
    collocation: Collocation,
    psi: Option<Matrix>,
    ln_det_std: f64,
}

impl<'m> DensityEvaluator<'m> {
    pub fn new(model: &'m CpfnModel, collocation: Collocation) -> Result<Self> {
        let r = match collocation {
            Collocation::Fixed { r, .. } | Collocation::Fresh { r } => r,
        };
        if r == 0 {
            return Err(Error::InvalidConfig("R_density must be at least 1".into()));
        }
        let psi = match collocation {
            Collocation::Fixed { seed, r } => {
                let u = model.latent.sample(r, model.q, &mut rng::labeled(seed, "density", 0));
                Some(model.psi_forward(&u)?)
            }
            Collocation::Fresh { .. } => None,
        };
        let ln_det_std = -model.y_stats.iter().map(|s| s.std.ln()).sum::<f64>();
        Ok(DensityEvaluator {
            model,
            collocation,
            psi,
            ln_det_std,
        })
    }

    /// Log-density in standardized coordinates.
    pub fn ln_density_standardized(&self, x_std: &[f64], y_std: &[f64], rng: Option<&mut Rng>) -> Result<f64> {
        let m = self.model;
        let fresh;
        let psi = match (&self.psi, self.collocation) {
            (Some(p), _) => p,
            (None, Collocation::Fresh { r }) => {
                let rng = rng.ok_or_else(|| Error::InvalidConfig("fresh collocation needs an rng".into()))?;
                fresh = m.psi_forward(&m.latent.sample(r, m.q, rng))?;
                &fresh
            }
            (None, Collocation::Fixed { .. }) => unreachable!("fixed features are precomputed"),
        };
        let phi = m.phi_forward(&Matrix::row_vector(x_std))?;
        let gen = combine_rank(phi.row(0), psi, m.rank);
        let log_eps = m.bandwidth().log_eps;
        let mut resid = vec![0.0; m.q];
        let terms: Vec<f64> = gen
            .iter_rows()
            .map(|g| {
                for ((d, a), b) in resid.iter_mut().zip(y_std).zip(g) {
                    *d = a - b;
                }
                ln_scaled_kernel(m.kernel.family, &log_eps, &resid)
            })
            .collect();
        let r = terms.len() as f64;
        Ok(log_sum_exp_with_floor(&terms, f64::NEG_INFINITY) - r.ln())
    }

    /// Log-density of raw-scale `y` given raw-scale `x`, including the
    /// standardization and response-transform Jacobians.
    pub fn ln_density(&self, x: &[f64], y: &[f64], rng: Option<&mut Rng>) -> Result<f64> {
        let xs = self.model.standardize_x(x)?;
        let ys = self.model.standardize_y(y)?;
        let jac: f64 = y.iter().map(|v| self.model.y_transform.ln_abs_jacobian(*v)).sum();
        if !jac.is_finite() {
            // outside the transform's domain
            return Ok(f64::NEG_INFINITY);
        }
        Ok(self.ln_density_standardized(&xs, &ys, rng)? + self.ln_det_std + jac)
    }

    pub fn density(&self, x: &[f64], y: &[f64], rng: Option<&mut Rng>) -> Result<f64> {
        Ok(self.ln_density(x, y, rng)?.exp())
    }
}

/// Density of `Y | X = x` at raw-scale `y`, with fixed-seed collocation.
pub fn conditional_density(model: &CpfnModel, x: &[f64], y: &[f64], r_density: usize, seed: u64) -> Result<f64> {
    DensityEvaluator::new(model, Collocation::Fixed { seed, r: r_density })?.density(x, y, None)
}

/// Type-7 empirical quantile (linear interpolation between order
/// statistics). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidTau(tau));
    }
    if sorted.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let h = (sorted.len() - 1) as f64 * tau;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn conditional_quantile(samples: &[f64], tau: f64) -> Result<f64> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, tau)
}

pub fn empirical_quantiles(samples: &[f64], taus: &[f64]) -> Result<Vec<f64>> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    taus.iter().map(|t| quantile_sorted(&s, *t)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalStatistics {
    pub mean: Vec<f64>,
    /// `q x q`, `m - 1` denominator.
    pub covariance: Matrix,
    pub taus: Vec<f64>,
    /// `quantiles[k][j]`: level `taus[k]` of coordinate `j`.
    pub quantiles: Vec<Vec<f64>>,
}

pub fn sample_statistics(samples: &Matrix) -> Result<ConditionalStatistics> {
    let (m, q) = samples.shape();
    if m < 2 {
        return Err(Error::InvalidConfig("statistics need at least 2 samples".into()));
    }
    let mut mean = vec![0.0; q];
    for row in samples.iter_rows() {
        for (a, b) in mean.iter_mut().zip(row) {
            *a += b;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    let mut cov = Matrix::zeros(q, q);
    for row in samples.iter_rows() {
        for a in 0..q {
            for b in 0..q {
                let v = cov.get(a, b) + (row[a] - mean[a]) * (row[b] - mean[b]);
                cov.set(a, b, v);
            }
        }
    }
    let cov = cov.map(|v| v / (m - 1) as f64);
    let cols: Vec<Vec<f64>> = (0..q)
        .map(|j| {
            let mut c = samples.column(j);
            c.sort_by(f64::total_cmp);
            c
        })
        .collect();
    let quantiles = SUMMARY_TAUS
        .iter()
        .map(|t| cols.iter().map(|c| quantile_sorted(c, *t)).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(ConditionalStatistics {
        mean,
        covariance: cov,
        taus: SUMMARY_TAUS.to_vec(),
        quantiles,
    })
}

/// Monte Carlo mean, covariance and quantile table of `Y | X = x`.
pub fn conditional_statistics(model: &CpfnModel, x: &[f64], m: usize, rng: &mut Rng) -> Result<ConditionalStatistics> {
    if m < 2 {
        return Err(Error::InvalidConfig("statistics need at least 2 samples".into()));
    }
    sample_statistics(&sample_conditional(model, x, m, rng)?)
}
