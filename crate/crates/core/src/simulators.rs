//! Synthetic data processes with exact conditional laws, used as ground
//! truth for the evaluation metrics.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::scalar::{std_normal_cdf, std_normal_pdf};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;

/// A covariate law plus an exactly known conditional law of the response.
pub trait Process {
    fn name(&self) -> &'static str;
    fn d(&self) -> usize;
    fn q(&self) -> usize;
    /// `n x d` covariates from the marginal law.
    fn sample_x(&self, n: usize, rng: &mut Rng) -> Matrix;
    /// `m x q` draws of `Y | X = x`.
    fn sample_conditional(&self, x: &[f64], m: usize, rng: &mut Rng) -> Matrix;
    fn density(&self, x: &[f64], y: &[f64]) -> Result<f64>;

    /// `n` iid pairs; each row's covariate is drawn before its response.
    fn generate(&self, n: usize, rng: &mut Rng) -> Dataset {
        let mut x = Matrix::zeros(n, self.d());
        let mut y = Matrix::zeros(n, self.q());
        for i in 0..n {
            let xi = self.sample_x(1, rng);
            let yi = self.sample_conditional(xi.row(0), 1, rng);
            x.row_mut(i).copy_from_slice(xi.row(0));
            y.row_mut(i).copy_from_slice(yi.row(0));
        }
        Dataset::new(x, y).expect("simulated data are finite")
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `Y = m_B(X) + 0.3 W (1.3 - X)` with `X ~ U(0,1)`, `B ~ Bernoulli(1/2)`,
/// `W ~ N(0,1)`; the second branch is only reachable for `X >= 0.5`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UnivariateProcess;

impl UnivariateProcess {
    pub fn m1(x: f64) -> f64 {
        10.0 * x * (x - 0.5) * (1.5 - x)
    }

    pub fn m2(x: f64) -> f64 {
        10.0 * x * (x - 0.5) * (0.8 - x)
    }

    pub fn noise_std(x: f64) -> f64 {
        0.3 * (1.3 - x)
    }

    pub fn is_bimodal(x: f64) -> bool {
        x >= 0.5
    }

    pub fn cdf(x: f64, y: f64) -> f64 {
        let s = Self::noise_std(x);
        let a = std_normal_cdf((y - Self::m1(x)) / s);
        if Self::is_bimodal(x) {
            0.5 * a + 0.5 * std_normal_cdf((y - Self::m2(x)) / s)
        } else {
            a
        }
    }

    pub fn pdf(x: f64, y: f64) -> f64 {
        let s = Self::noise_std(x);
        let a = std_normal_pdf((y - Self::m1(x)) / s) / s;
        if Self::is_bimodal(x) {
            0.5 * a + 0.5 * std_normal_pdf((y - Self::m2(x)) / s) / s
        } else {
            a
        }
    }

    /// Inverts the conditional CDF by bisection to `|F(q) - tau| < 1e-10`
    /// (or to floating-point resolution of the bracket).
    pub fn quantile(x: f64, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidTau(tau));
        }
        let s = Self::noise_std(x);
        let (m1, m2) = (Self::m1(x), Self::m2(x));
        if !Self::is_bimodal(x) && tau == 0.5 {
            return Ok(m1);
        }
        let (mut lo, mut hi) = (m1.min(m2) - 40.0 * s, m1.max(m2) + 40.0 * s);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let f = Self::cdf(x, mid);
            if (f - tau).abs() < 1e-10 || mid <= lo || mid >= hi {
                return Ok(mid);
            }
            if f < tau {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn draw_y(x: f64, rng: &mut Rng) -> f64 {
        let b = rng.gen_bool(0.5);
        let w: f64 = StandardNormal.sample(rng);
        let m = if x < 0.5 || !b { Self::m1(x) } else { Self::m2(x) };
        m + Self::noise_std(x) * w
    }
}

impl Process for UnivariateProcess {
    fn name(&self) -> &'static str {
        "univariate"
    }

    fn d(&self) -> usize {
        1
    }

    fn q(&self) -> usize {
        1
    }

    fn sample_x(&self, n: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_vec(n, 1, (0..n).map(|_| rng.gen::<f64>()).collect())
    }

    fn sample_conditional(&self, x: &[f64], m: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_vec(m, 1, (0..m).map(|_| Self::draw_y(x[0], rng)).collect())
    }

    fn density(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(Self::pdf(x[0], y[0]))
    }
}

/// Ring/blob mixture in `R^2` driven by a five-dimensional Gaussian covariate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingBlobsProcess {
    pub beta: [f64; 5],
    pub gamma: [f64; 5],
    pub r0: f64,
    pub r1: f64,
    pub sigma0: f64,
    pub sigma1: f64,
}

impl Default for RingBlobsProcess {
    fn default() -> Self {
        RingBlobsProcess {
            beta: [1.2, -0.8, 0.6, -0.4, 0.9],
            gamma: [-0.5, 1.1, -0.3, 0.7, 0.4],
            r0: 2.0,
            r1: 1.5,
            sigma0: 0.18,
            sigma1: 0.15,
        }
    }
}

/// Representative covariates: ring-dominant, transition, blob-dominant.
pub const X_RING: [f64; 5] = [2.0, 1.0, 0.5, -0.3, -1.0];
pub const X_TRANS: [f64; 5] = [0.0; 5];
pub const X_BLOBS: [f64; 5] = [-2.0, -1.0, -0.5, 0.3, 1.0];

/// Shape parameters of the conditional law at one covariate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RingBlobsParams {
    pub w_ring: f64,
    pub r_ring: f64,
    pub sigma_ring: f64,
    pub m1: [f64; 2],
    pub m2: [f64; 2],
    /// Isotropic blob standard deviation.
    pub sigma_blob: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl RingBlobsProcess {
    pub fn params_at(&self, x: &[f64]) -> RingBlobsParams {
        let bx = dot(&self.beta, x);
        let gx = dot(&self.gamma, x);
        let shift = 1.5 * (0.5 * gx).tanh();
        RingBlobsParams {
            w_ring: sigmoid(bx),
            r_ring: self.r0 + self.r1 * (0.7 * bx).tanh(),
            sigma_ring: self.sigma0 + self.sigma1 * sigmoid(1.2 * gx),
            m1: [1.0 + shift, 1.0],
            m2: [-1.0, -1.0 - shift],
            sigma_blob: 0.2 + 0.1 * sigmoid(gx),
        }
    }

    /// Truncated-normal radius density on `[0, inf)`.
    fn radius_pdf(p: &RingBlobsParams, rho: f64) -> f64 {
        if rho < 0.0 {
            return 0.0;
        }
        let mass = 1.0 - std_normal_cdf(-p.r_ring / p.sigma_ring);
        std_normal_pdf((rho - p.r_ring) / p.sigma_ring) / (p.sigma_ring * mass)
    }

    pub fn ring_density(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let rho = y[0].hypot(y[1]);
        if rho == 0.0 {
            return Err(Error::SingularOrigin);
        }
        Ok(Self::radius_pdf(&self.params_at(x), rho) / (2.0 * PI * rho))
    }

    pub fn blob_density(&self, x: &[f64], y: &[f64]) -> f64 {
        let p = self.params_at(x);
        let var = p.sigma_blob * p.sigma_blob;
        let comp = |m: [f64; 2]| {
            let d2 = (y[0] - m[0]).powi(2) + (y[1] - m[1]).powi(2);
            (-0.5 * d2 / var).exp() / (2.0 * PI * var)
        };
        0.5 * comp(p.m1) + 0.5 * comp(p.m2)
    }

    fn draw_y(&self, p: &RingBlobsParams, rng: &mut Rng) -> [f64; 2] {
        if rng.gen::<f64>() < p.w_ring {
            let radius = loop {
                let z: f64 = StandardNormal.sample(rng);
                let r = p.r_ring + p.sigma_ring * z;
                if r >= 0.0 {
                    break r;
                }
            };
            let theta = rng.gen::<f64>() * 2.0 * PI;
            [radius * theta.cos(), radius * theta.sin()]
        } else {
            let m = if rng.gen_bool(0.5) { p.m1 } else { p.m2 };
            let z0: f64 = StandardNormal.sample(rng);
            let z1: f64 = StandardNormal.sample(rng);
            [m[0] + p.sigma_blob * z0, m[1] + p.sigma_blob * z1]
        }
    }
}

impl Process for RingBlobsProcess {
    fn name(&self) -> &'static str {
        "ring_blobs"
    }

    fn d(&self) -> usize {
        5
    }

    fn q(&self) -> usize {
        2
    }

    fn sample_x(&self, n: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_vec(n, 5, (0..n * 5).map(|_| StandardNormal.sample(rng)).collect())
    }

    fn sample_conditional(&self, x: &[f64], m: usize, rng: &mut Rng) -> Matrix {
        let p = self.params_at(x);
        let mut out = Matrix::zeros(m, 2);
        for i in 0..m {
            out.row_mut(i).copy_from_slice(&self.draw_y(&p, rng));
        }
        out
    }

    fn density(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let w = self.params_at(x).w_ring;
        let ring = if w > 0.0 { w * self.ring_density(x, y)? } else { 0.0 };
        Ok(ring + (1.0 - w) * self.blob_density(x, y))
    }
}

pub fn gen_univariate(n: usize, rng: &mut Rng) -> Dataset {
    UnivariateProcess.generate(n, rng)
}

pub fn gen_multivariate(n: usize, rng: &mut Rng) -> Dataset {
    RingBlobsProcess::default().generate(n, rng)
}

pub fn true_univariate_density(x: f64, y: f64) -> f64 {
    UnivariateProcess::pdf(x, y)
}

pub fn true_univariate_quantile(x: f64, tau: f64) -> Result<f64> {
    UnivariateProcess::quantile(x, tau)
}

pub fn true_multivariate_density(x: &[f64], y: &[f64]) -> Result<f64> {
    RingBlobsProcess::default().density(x, y)
}

/// Which synthetic process to use, by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    Univariate,
    RingBlobs,
}

impl std::str::FromStr for ProcessKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "univariate" => Ok(ProcessKind::Univariate),
            "ring_blobs" | "multivariate" => Ok(ProcessKind::RingBlobs),
            other => Err(Error::InvalidConfig(format!("unknown process `{other}`"))),
        }
    }
}

impl ProcessKind {
    pub fn build(self) -> Box<dyn Process + Send + Sync> {
        match self {
            ProcessKind::Univariate => Box::new(UnivariateProcess),
            ProcessKind::RingBlobs => Box::new(RingBlobsProcess::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn mean_std(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        (m, s)
    }

    #[test]
    fn univariate_closed_forms() {
        assert_eq!(UnivariateProcess::m1(0.25), -0.781_25);
        assert!((UnivariateProcess::noise_std(0.25) - 0.315).abs() < 1e-15);
        assert_eq!(UnivariateProcess::m1(0.5), 0.0);
        assert_eq!(UnivariateProcess::m2(0.5), 0.0);
        assert!((UnivariateProcess::noise_std(0.5) - 0.24).abs() < 1e-15);
    }

    #[test]
    fn pinned_x_moments() {
        let y = UnivariateProcess.sample_conditional(&[0.25], 10_000, &mut rng::seeded(3));
        let (m, s) = mean_std(y.as_slice());
        let se = 0.315 / 100.0;
        assert!((m + 0.781_25).abs() < 5.0 * se, "{m}");
        assert!((s - 0.315).abs() < 5.0 * 0.315 / (2.0 * 10_000f64).sqrt(), "{s}");
    }

    #[test]
    fn generation_is_seeded() {
        let a = gen_univariate(50, &mut rng::seeded(1));
        let b = gen_univariate(50, &mut rng::seeded(1));
        assert_eq!(a, b);
        let a = gen_multivariate(20, &mut rng::seeded(1));
        assert_eq!(a, gen_multivariate(20, &mut rng::seeded(1)));
        assert_eq!((a.d(), a.q()), (5, 2));
    }

    #[test]
    fn quantile_references() {
        assert_eq!(true_univariate_quantile(0.3, 0.5).unwrap(), UnivariateProcess::m1(0.3));
        let x = 0.75;
        let mid = 0.5 * (UnivariateProcess::m1(x) + UnivariateProcess::m2(x));
        assert!((UnivariateProcess::cdf(x, mid) - 0.5).abs() < 1e-14);
        let q = true_univariate_quantile(x, 0.5).unwrap();
        assert!((q - mid).abs() < 1e-8);
        for tau in [1e-4, 0.1, 0.37, 0.9, 0.9999] {
            let q = true_univariate_quantile(0.8, tau).unwrap();
            assert!((UnivariateProcess::cdf(0.8, q) - tau).abs() < 1e-10);
        }
        assert!(matches!(true_univariate_quantile(0.5, 1.0), Err(Error::InvalidTau(_))));
    }

    #[test]
    fn mixture_density_reference() {
        // 0.5 phi(0)/s + 0.5 phi((m1-m2)/s)/s with s = 0.165; mpmath 1.2089160012
        let v = true_univariate_density(0.75, UnivariateProcess::m1(0.75));
        assert!((v - 1.208_916_001_2).abs() < 1e-9, "{v}");
    }

    #[test]
    fn quantiles_increase_in_tau() {
        let mut r = rng::seeded(5);
        for _ in 0..20 {
            let x: f64 = r.gen();
            let qs: Vec<f64> = (1..100).map(|k| true_univariate_quantile(x, k as f64 / 100.0).unwrap()).collect();
            assert!(qs.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn representative_covariates() {
        let p = RingBlobsProcess::default();
        // beta . x_ring = 1.12, so the ring weight there is only s(1.12)
        let a = p.params_at(&X_RING);
        assert!((a.w_ring - 0.753_988_716_448_948_2).abs() < 1e-12, "{}", a.w_ring);
        let t = p.params_at(&X_TRANS);
        assert_eq!(t.w_ring, 0.5);
        assert!((p.params_at(&X_BLOBS).w_ring - (1.0 - a.w_ring)).abs() < 1e-12);

        // genuinely ring-dominant: beta . x = 5.6
        let x: Vec<f64> = X_RING.iter().map(|v| 5.0 * v).collect();
        let a = p.params_at(&x);
        assert!(a.w_ring > 0.99);
        let y = p.sample_conditional(&x, 10_000, &mut rng::seeded(2));
        let near = y
            .iter_rows()
            .filter(|v| (v[0].hypot(v[1]) - a.r_ring).abs() < 3.0 * a.sigma_ring)
            .count();
        assert!(near as f64 / 10_000.0 > 0.95);
    }

    #[test]
    fn ring_rate_at_transition() {
        let p = RingBlobsProcess::default();
        let mut r = rng::seeded(9);
        let hits = (0..10_000).filter(|_| r.gen::<f64>() < p.params_at(&X_TRANS).w_ring).count();
        assert!((hits as f64 / 1e4 - 0.5).abs() < 0.02);
    }

    #[test]
    fn ring_term_is_rotation_invariant_and_singular_at_origin() {
        let p = RingBlobsProcess::default();
        let y = [1.3, 0.4];
        let th: f64 = 0.9;
        let ry = [th.cos() * y[0] - th.sin() * y[1], th.sin() * y[0] + th.cos() * y[1]];
        let (a, b) = (p.ring_density(&X_TRANS, &y).unwrap(), p.ring_density(&X_TRANS, &ry).unwrap());
        assert!((a - b).abs() < 1e-14 * a);
        assert!(matches!(true_multivariate_density(&X_TRANS, &[0.0, 0.0]), Err(Error::SingularOrigin)));
    }

    #[test]
    fn blob_limit() {
        let p = RingBlobsProcess::default();
        let x = [-40.0, 0.0, 0.0, 0.0, 0.0];
        let y = [0.5, 0.5];
        let v = p.density(&x, &y).unwrap();
        assert!((v - p.blob_density(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn multivariate_density_integrates_to_one() {
        let p = RingBlobsProcess::default();
        let n = 601; // odd interval count keeps the origin off the grid
        let h = 12.0 / n as f64;
        for x in [X_RING, X_TRANS, X_BLOBS] {
            let mut total = 0.0;
            for i in 0..=n {
                let wi = if i == 0 || i == n { 0.5 } else { 1.0 };
                for j in 0..=n {
                    let wj = if j == 0 || j == n { 0.5 } else { 1.0 };
                    let y = [-6.0 + i as f64 * h, -6.0 + j as f64 * h];
                    let f = p.density(&x, &y).unwrap();
                    assert!(f >= 0.0);
                    total += wi * wj * f;
                }
            }
            total *= h * h;
            assert!((total - 1.0).abs() < 0.01, "{total}");
        }
    }
}
