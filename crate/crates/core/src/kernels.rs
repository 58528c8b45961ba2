//! Smoothing kernels and their bandwidth-scaled versions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    Epanechnikov,
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(KernelFamily::Gaussian),
            "epanechnikov" => Ok(KernelFamily::Epanechnikov),
            other => Err(Error::InvalidConfig(format!("unknown kernel family `{other}`"))),
        }
    }
}

impl KernelFamily {
    /// Log of the one-dimensional kernel; `-inf` outside a compact support.
    #[inline]
    pub fn ln_pdf_1d(self, v: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => -0.5 * v * v - 0.5 * (2.0 * PI).ln(),
            KernelFamily::Epanechnikov => {
                if v.abs() <= 1.0 {
                    (0.75 * (1.0 - v * v)).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    #[inline]
    pub fn pdf_1d(self, v: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => crate::autodiff::scalar::std_normal_pdf(v),
            KernelFamily::Epanechnikov => {
                if v.abs() <= 1.0 {
                    0.75 * (1.0 - v * v)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Product kernel on `R^dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub dim: usize,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("kernel dimension must be >= 1".into()));
        }
        Ok(KernelSpec { family, dim })
    }

    pub fn gaussian(dim: usize) -> Self {
        KernelSpec {
            family: KernelFamily::Gaussian,
            dim,
        }
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim {
            return Err(Error::DimensionMismatch {
                context: "kernel argument",
                expected: self.dim,
                found,
            });
        }
        Ok(())
    }
}

/// Per-coordinate bandwidths, stored as logarithms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub log_eps: Vec<f64>,
}

impl Bandwidth {
    pub fn from_eps(eps: &[f64]) -> Result<Self> {
        if eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidConfig(format!("bandwidths must be positive and finite, got {eps:?}")));
        }
        Ok(Bandwidth {
            log_eps: eps.iter().map(|e| e.ln()).collect(),
        })
    }

    pub fn uniform(eps: f64, dim: usize) -> Result<Self> {
        Self::from_eps(&vec![eps; dim])
    }

    pub fn eps(&self) -> Vec<f64> {
        self.log_eps.iter().map(|l| l.exp()).collect()
    }

    pub fn dim(&self) -> usize {
        self.log_eps.len()
    }
}

pub fn kernel_eval(spec: &KernelSpec, v: &[f64]) -> Result<f64> {
    spec.check_dim(v.len())?;
    Ok(v.iter().map(|&x| spec.family.pdf_1d(x)).product())
}

/// `(prod eps_j)^-1 kappa(v_1/eps_1, ..., v_q/eps_q)`.
pub fn scaled_kernel_eval(spec: &KernelSpec, bw: &Bandwidth, v: &[f64]) -> Result<f64> {
    spec.check_dim(v.len())?;
    spec.check_dim(bw.dim())?;
    Ok(v
        .iter()
        .zip(&bw.log_eps)
        .map(|(&x, &l)| {
            let e = l.exp();
            spec.family.pdf_1d(x / e) / e
        })
        .product())
}

/// Log of the scaled kernel; `-inf` where the kernel vanishes.
pub fn ln_scaled_kernel(family: KernelFamily, log_eps: &[f64], v: &[f64]) -> f64 {
    v.iter()
        .zip(log_eps)
        .map(|(&x, &l)| family.ln_pdf_1d(x * (-l).exp()) - l)
        .sum()
}

/// Records `ln kappa_eps(residual)` row by row on the tape.
///
/// `residuals` is `N x q`, `log_eps` is the `1 x q` log-bandwidth row; the
/// result is `N x 1`.
pub fn ln_scaled_kernel_on_tape(tape: &mut Tape<'_>, family: KernelFamily, residuals: Var, log_eps: Var) -> Result<Var> {
    let neg_log_eps = tape.scale(log_eps, -1.0)?;
    let inv_eps = tape.exp(neg_log_eps)?;
    let v = tape.mul_row(residuals, inv_eps)?;
    let q = tape.value(v).cols() as f64;
    let per_row = match family {
        KernelFamily::Gaussian => {
            let sq = tape.squared_norm_rows(v)?;
            let s = tape.scale(sq, -0.5)?;
            tape.offset(s, -0.5 * q * (2.0 * PI).ln())?
        }
        KernelFamily::Epanechnikov => {
            let l = tape.log_one_minus_square(v)?;
            let s = tape.sum_cols(l)?;
            tape.offset(s, q * 0.75f64.ln())?
        }
    };
    let log_det = tape.sum_cols(neg_log_eps)?; // 1 x 1
    tape.add_row(per_row, log_det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    #[test]
    fn reference_values() {
        let g1 = KernelSpec::gaussian(1);
        assert!((kernel_eval(&g1, &[0.0]).unwrap() - 0.398_942_3).abs() < 1e-7);
        let e1 = KernelSpec::new(KernelFamily::Epanechnikov, 1).unwrap();
        assert_eq!(kernel_eval(&e1, &[1.5]).unwrap(), 0.0);
        // (2 pi)^-1 e^-1 = 0.05854983152431916 (mpmath)
        let g2 = KernelSpec::gaussian(2);
        assert!((kernel_eval(&g2, &[1.0, 1.0]).unwrap() - 0.058_549_831_524_319_16).abs() < 1e-15);
    }

    #[test]
    fn scaled_reference_values() {
        let g1 = KernelSpec::gaussian(1);
        let bw = Bandwidth::uniform(0.05, 1).unwrap();
        assert!((scaled_kernel_eval(&g1, &bw, &[0.0]).unwrap() - 7.978_846).abs() < 1e-6);
        // (0.02)^-1 (2 pi)^-1 e^-1 = 2.927491576215958 (mpmath)
        let g2 = KernelSpec::gaussian(2);
        let bw2 = Bandwidth::from_eps(&[0.1, 0.2]).unwrap();
        let v = scaled_kernel_eval(&g2, &bw2, &[0.1, 0.2]).unwrap();
        assert!((v - 2.927_491_576_215_958).abs() < 1e-12, "{v}");
    }

    #[test]
    fn halving_bandwidth_at_fixed_ratio_doubles_value() {
        for family in [KernelFamily::Gaussian, KernelFamily::Epanechnikov] {
            let spec = KernelSpec { family, dim: 1 };
            let a = scaled_kernel_eval(&spec, &Bandwidth::uniform(0.4, 1).unwrap(), &[0.2]).unwrap();
            let b = scaled_kernel_eval(&spec, &Bandwidth::uniform(0.2, 1).unwrap(), &[0.1]).unwrap();
            assert!((b / a - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            kernel_eval(&KernelSpec::gaussian(2), &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(KernelSpec::new(KernelFamily::Gaussian, 0).is_err());
        assert!(Bandwidth::from_eps(&[0.0]).is_err());
        assert!("cosine".parse::<KernelFamily>().is_err());
    }

    fn grid_integral(spec: &KernelSpec, bw: &Bandwidth, half_width: &[f64], n: usize) -> f64 {
        // midpoint rule, exact enough for smooth and piecewise-quadratic kernels
        let h: Vec<f64> = half_width.iter().map(|w| 2.0 * w / n as f64).collect();
        match spec.dim {
            1 => (0..n)
                .map(|i| {
                    let y = -half_width[0] + (i as f64 + 0.5) * h[0];
                    scaled_kernel_eval(spec, bw, &[y]).unwrap() * h[0]
                })
                .sum(),
            2 => {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let y = [
                            -half_width[0] + (i as f64 + 0.5) * h[0],
                            -half_width[1] + (j as f64 + 0.5) * h[1],
                        ];
                        s += scaled_kernel_eval(spec, bw, &y).unwrap() * h[0] * h[1];
                    }
                }
                s
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn scaled_kernels_integrate_to_one() {
        for eps in [[0.05, 0.3], [1.0, 2.0]] {
            let bw1 = Bandwidth::from_eps(&eps[..1]).unwrap();
            let bw2 = Bandwidth::from_eps(&eps).unwrap();
            let g1 = KernelSpec::gaussian(1);
            let w1: Vec<f64> = eps[..1].iter().map(|e| 8.0 * e).collect();
            assert!((grid_integral(&g1, &bw1, &w1, 4000) - 1.0).abs() < 1e-6);
            let g2 = KernelSpec::gaussian(2);
            let w2: Vec<f64> = eps.iter().map(|e| 8.0 * e).collect();
            assert!((grid_integral(&g2, &bw2, &w2, 800) - 1.0).abs() < 1e-6);
            let e1 = KernelSpec::new(KernelFamily::Epanechnikov, 1).unwrap();
            assert!((grid_integral(&e1, &bw1, &eps[..1], 4000) - 1.0).abs() < 1e-6);
            let e2 = KernelSpec::new(KernelFamily::Epanechnikov, 2).unwrap();
            assert!((grid_integral(&e2, &bw2, &eps, 2000) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn tape_log_kernel_matches_direct_evaluation() {
        let log_eps = [0.1f64.ln(), 0.2f64.ln()];
        let resid = Matrix::from_rows(&[[0.07, 0.13], [0.05, -0.3], [2.0, 0.0]]);
        for family in [KernelFamily::Gaussian, KernelFamily::Epanechnikov] {
            let mut t = Tape::from_slice(&log_eps);
            let r = t.input(resid.clone());
            let le = t.param_block(0, 1, 2);
            let out = ln_scaled_kernel_on_tape(&mut t, family, r, le).unwrap();
            let spec = KernelSpec { family, dim: 2 };
            let bw = Bandwidth { log_eps: log_eps.to_vec() };
            for i in 0..3 {
                let direct = scaled_kernel_eval(&spec, &bw, resid.row(i)).unwrap().ln();
                let taped = t.value(out).get(i, 0);
                if direct == f64::NEG_INFINITY {
                    assert_eq!(taped, direct);
                } else {
                    assert!((taped - direct).abs() < 1e-12, "{family:?} {taped} {direct}");
                }
                let plain = ln_scaled_kernel(family, &log_eps, resid.row(i));
                assert!(plain == taped || (plain - taped).abs() < 1e-14 * plain.abs().max(1.0), "{plain} {taped}");
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn symmetric(v in -3.0f64..3.0, w in -3.0f64..3.0, e in 0.05f64..2.0) {
                for family in [KernelFamily::Gaussian, KernelFamily::Epanechnikov] {
                    let spec = KernelSpec { family, dim: 2 };
                    let bw = Bandwidth::from_eps(&[e, 2.0 * e]).unwrap();
                    let a = scaled_kernel_eval(&spec, &bw, &[v, w]).unwrap();
                    let b = scaled_kernel_eval(&spec, &bw, &[-v, -w]).unwrap();
                    prop_assert_eq!(a, b);
                    prop_assert!(a >= 0.0);
                }
            }

            #[test]
            fn monotone_in_abs(a in 0.0f64..3.0, b in 0.0f64..3.0) {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                for family in [KernelFamily::Gaussian, KernelFamily::Epanechnikov] {
                    let spec = KernelSpec { family, dim: 1 };
                    prop_assert!(kernel_eval(&spec, &[lo]).unwrap() >= kernel_eval(&spec, &[hi]).unwrap());
                }
            }
        }
    }
}
