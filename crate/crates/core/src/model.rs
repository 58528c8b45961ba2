//! The CPFN architecture: two feed-forward submodules `phi: R^d -> R^{r x q}`
//! and `psi: R^q -> R^{r x q}` combined as
//! `out_j(x, u) = sum_i phi_{i,j}(x) psi_{i,j}(u)`.
//!
//! Submodule outputs are laid out rank-major: flat index `i * q + j` holds
//! the `(i, j)` entry.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{gelu, ParameterVector, Segment, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::{Bandwidth, KernelSpec};
use crate::linalg::{self, Matrix};
use crate::rng::{self, Rng};

pub const MODEL_FORMAT: &str = "cpfn-model";
pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Gelu,
}

impl Activation {
    fn apply(self, m: &mut Matrix) {
        if self == Activation::Gelu {
            for v in m.as_mut_slice() {
                *v = gelu(*v);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkArchitecture {
    pub in_dim: usize,
    pub out_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl NetworkArchitecture {
    pub fn new(in_dim: usize, hidden_widths: &[usize], out_dim: usize, output_activation: Activation) -> Self {
        NetworkArchitecture {
            in_dim,
            out_dim,
            hidden_widths: hidden_widths.to_vec(),
            hidden_activation: Activation::Gelu,
            output_activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::InvalidConfig(format!("network dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut prev = self.in_dim;
        for &w in &self.hidden_widths {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, self.out_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layer_dims().len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    /// Forward pass for a batch of inputs (`n x in_dim`). `params` holds this
    /// network's weights and biases only, ordered `w0, b0, w1, b1, ...` with
    /// each `w` stored `fan_in x fan_out` row-major.
    pub fn forward(&self, params: &[f64], input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.in_dim {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.in_dim,
                found: input.cols(),
            });
        }
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "network parameters",
                expected: self.param_count(),
                found: params.len(),
            });
        }
        let mut offset = 0;
        let mut h: Option<Matrix> = None;
        for (layer, (fan_in, fan_out)) in self.layer_dims().into_iter().enumerate() {
            let w = Matrix::from_vec(fan_in, fan_out, params[offset..offset + fan_in * fan_out].to_vec());
            offset += fan_in * fan_out;
            let b = Matrix::from_vec(1, fan_out, params[offset..offset + fan_out].to_vec());
            offset += fan_out;
            let mut next = linalg::affine(h.as_ref().unwrap_or(input), &w, Some(&b));
            self.activation(layer).apply(&mut next);
            h = Some(next);
        }
        Ok(h.expect("at least one layer"))
    }

    /// Records the forward pass on a tape; the network's parameters start at
    /// `base` in the tape's parameter vector.
    pub fn forward_on_tape(&self, tape: &mut Tape<'_>, base: usize, input: Var) -> Result<Var> {
        let mut offset = base;
        let mut h = input;
        for (layer, (fan_in, fan_out)) in self.layer_dims().into_iter().enumerate() {
            let w = tape.param_block(offset, fan_in, fan_out);
            offset += fan_in * fan_out;
            let b = tape.param_block(offset, 1, fan_out);
            offset += fan_out;
            h = tape.affine(h, w, Some(b))?;
            if self.activation(layer) == Activation::Gelu {
                h = tape.gelu(h)?;
            }
        }
        Ok(h)
    }
}

/// Law of the latent input `U`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Latent {
    Uniform01,
    StandardNormal,
}

impl std::str::FromStr for Latent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform01" | "uniform" => Ok(Latent::Uniform01),
            "standard_normal" | "normal" | "gaussian" => Ok(Latent::StandardNormal),
            other => Err(Error::InvalidConfig(format!("unknown latent law `{other}`"))),
        }
    }
}

impl Latent {
    /// `m x q` independent draws, filled row by row.
    pub fn sample(self, m: usize, q: usize, rng: &mut Rng) -> Matrix {
        let data = (0..m * q)
            .map(|_| match self {
                Latent::Uniform01 => rng.gen::<f64>(),
                Latent::StandardNormal => StandardNormal.sample(rng),
            })
            .collect();
        Matrix::from_vec(m, q, data)
    }
}

/// Optional response re-parametrization applied before standardization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseTransform {
    #[default]
    Identity,
    Log1p,
}

impl std::str::FromStr for ResponseTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "none" => Ok(ResponseTransform::Identity),
            "log1p" => Ok(ResponseTransform::Log1p),
            other => Err(Error::InvalidConfig(format!("unknown response transform `{other}`"))),
        }
    }
}

impl ResponseTransform {
    #[inline]
    pub fn forward(self, y: f64) -> f64 {
        match self {
            ResponseTransform::Identity => y,
            ResponseTransform::Log1p => y.ln_1p(),
        }
    }

    #[inline]
    pub fn inverse(self, t: f64) -> f64 {
        match self {
            ResponseTransform::Identity => t,
            ResponseTransform::Log1p => t.exp_m1(),
        }
    }

    /// `ln |g'(y)|` for one raw-scale coordinate.
    #[inline]
    pub fn ln_abs_jacobian(self, y: f64) -> f64 {
        match self {
            ResponseTransform::Identity => 0.0,
            ResponseTransform::Log1p => -y.ln_1p(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    pub const IDENTITY: ColumnStats = ColumnStats { mean: 0.0, std: 1.0 };

    #[inline]
    pub fn standardize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    #[inline]
    pub fn destandardize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Where an artifact came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
}

/// A trained (or freshly initialized) conditional push-forward network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpfnModel {
    pub d: usize,
    pub q: usize,
    pub rank: usize,
    pub phi: NetworkArchitecture,
    pub psi: NetworkArchitecture,
    pub kernel: KernelSpec,
    pub latent: Latent,
    pub params: ParameterVector,
    pub x_stats: Vec<ColumnStats>,
    pub y_stats: Vec<ColumnStats>,
    pub y_transform: ResponseTransform,
    #[serde(default)]
    pub provenance: Provenance,
}

/// Options for [`CpfnModel::init`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    pub rank: usize,
    pub hidden_widths: Vec<usize>,
    pub latent: Latent,
    pub kernel: crate::kernels::KernelFamily,
    pub eps0: Vec<f64>,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            rank: 20,
            hidden_widths: vec![50, 50, 50],
            latent: Latent::StandardNormal,
            kernel: crate::kernels::KernelFamily::Gaussian,
            eps0: vec![0.05],
        }
    }
}

fn push_network(params: &mut ParameterVector, prefix: &str, arch: &NetworkArchitecture, rng: &mut Rng) {
    for (k, (fan_in, fan_out)) in arch.layer_dims().into_iter().enumerate() {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)).collect();
        params.push_segment(format!("{prefix}.w{k}"), fan_in, fan_out, &w);
        params.push_segment(format!("{prefix}.b{k}"), 1, fan_out, &vec![0.0; fan_out]);
    }
}

impl CpfnModel {
    /// Glorot-uniform weights, zero biases, `log eps = ln eps0` and identity
    /// standardization. `eps0` is either one value (broadcast) or `q` values.
    pub fn init(d: usize, q: usize, opts: &ModelOptions, seed: u64) -> Result<Self> {
        if d == 0 || q == 0 || opts.rank == 0 {
            return Err(Error::InvalidConfig(format!(
                "dimensions must be positive (d={d}, q={q}, rank={})",
                opts.rank
            )));
        }
        let eps = match opts.eps0.len() {
            1 => vec![opts.eps0[0]; q],
            n if n == q => opts.eps0.clone(),
            n => {
                return Err(Error::InvalidConfig(format!(
                    "eps0 must have 1 or q={q} entries, got {n}"
                )))
            }
        };
        let bw = Bandwidth::from_eps(&eps)?;
        let phi = NetworkArchitecture::new(d, &opts.hidden_widths, opts.rank * q, Activation::Identity);
        let psi = NetworkArchitecture::new(q, &opts.hidden_widths, opts.rank * q, Activation::Gelu);
        phi.validate()?;
        psi.validate()?;

        let mut rng = rng::labeled(seed, "init", 0);
        let mut params = ParameterVector::new();
        push_network(&mut params, "phi", &phi, &mut rng);
        push_network(&mut params, "psi", &psi, &mut rng);
        params.push_segment("log_eps", 1, q, &bw.log_eps);

        Ok(CpfnModel {
            d,
            q,
            rank: opts.rank,
            phi,
            psi,
            kernel: KernelSpec::new(opts.kernel, q)?,
            latent: opts.latent,
            params,
            x_stats: vec![ColumnStats::IDENTITY; d],
            y_stats: vec![ColumnStats::IDENTITY; q],
            y_transform: ResponseTransform::Identity,
            provenance: Provenance::default(),
        })
    }

    /// Assembles a model from explicit submodule parameters; used for
    /// hand-built test models.
    #[allow(clippy::too_many_arguments)]
    pub fn from_networks(
        phi: NetworkArchitecture,
        phi_params: &[f64],
        psi: NetworkArchitecture,
        psi_params: &[f64],
        rank: usize,
        kernel: KernelSpec,
        bandwidth: &Bandwidth,
        latent: Latent,
    ) -> Result<Self> {
        let q = psi.in_dim;
        let d = phi.in_dim;
        let mut params = ParameterVector::new();
        for (prefix, arch, values) in [("phi", &phi, phi_params), ("psi", &psi, psi_params)] {
            if values.len() != arch.param_count() {
                return Err(Error::DimensionMismatch {
                    context: "submodule parameters",
                    expected: arch.param_count(),
                    found: values.len(),
                });
            }
            let mut off = 0;
            for (k, (fan_in, fan_out)) in arch.layer_dims().into_iter().enumerate() {
                params.push_segment(format!("{prefix}.w{k}"), fan_in, fan_out, &values[off..off + fan_in * fan_out]);
                off += fan_in * fan_out;
                params.push_segment(format!("{prefix}.b{k}"), 1, fan_out, &values[off..off + fan_out]);
                off += fan_out;
            }
        }
        params.push_segment("log_eps", 1, q, &bandwidth.log_eps);
        let model = CpfnModel {
            d,
            q,
            rank,
            phi,
            psi,
            kernel,
            latent,
            params,
            x_stats: vec![ColumnStats::IDENTITY; d],
            y_stats: vec![ColumnStats::IDENTITY; q],
            y_transform: ResponseTransform::Identity,
            provenance: Provenance::default(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        self.phi.validate()?;
        self.psi.validate()?;
        if self.phi.in_dim != self.d || self.phi.out_dim != self.rank * self.q {
            return bad(format!("phi must map R^{} -> R^{}", self.d, self.rank * self.q));
        }
        if self.psi.in_dim != self.q || self.psi.out_dim != self.rank * self.q {
            return bad(format!("psi must map R^{} -> R^{}", self.q, self.rank * self.q));
        }
        if self.kernel.dim != self.q {
            return bad("kernel dimension must equal q".into());
        }
        if self.x_stats.len() != self.d || self.y_stats.len() != self.q {
            return bad("standardization stats do not match dimensions".into());
        }
        if self
            .x_stats
            .iter()
            .chain(&self.y_stats)
            .any(|s| !(s.std > 0.0 && s.std.is_finite() && s.mean.is_finite()))
        {
            return bad("standardization stds must be positive and finite".into());
        }
        let expected = self.phi.param_count() + self.psi.param_count() + self.q;
        if self.params.len() != expected {
            return bad(format!("expected {expected} parameters, found {}", self.params.len()));
        }
        if self.params.segment("log_eps").map(|s| s.range()) != Some(self.log_eps_offset()..expected) {
            return bad("log_eps segment missing or misplaced".into());
        }
        if !self.params.all_finite() {
            return bad("non-finite parameters".into());
        }
        Ok(())
    }

    pub fn phi_offset(&self) -> usize {
        0
    }

    pub fn psi_offset(&self) -> usize {
        self.phi.param_count()
    }

    pub fn log_eps_offset(&self) -> usize {
        self.phi.param_count() + self.psi.param_count()
    }

    /// Number of network weights and biases (excluding the bandwidth).
    pub fn theta_len(&self) -> usize {
        self.log_eps_offset()
    }

    pub fn log_eps_segment(&self) -> Segment {
        Segment {
            name: "log_eps".into(),
            offset: self.log_eps_offset(),
            rows: 1,
            cols: self.q,
        }
    }

    pub fn bandwidth(&self) -> Bandwidth {
        Bandwidth {
            log_eps: self.params.values()[self.log_eps_offset()..].to_vec(),
        }
    }

    fn phi_params(&self) -> &[f64] {
        &self.params.values()[..self.psi_offset()]
    }

    fn psi_params(&self) -> &[f64] {
        &self.params.values()[self.psi_offset()..self.log_eps_offset()]
    }

    /// `phi` on standardized covariates (`n x d` -> `n x rq`).
    pub fn phi_forward(&self, x: &Matrix) -> Result<Matrix> {
        self.phi.forward(self.phi_params(), x)
    }

    /// `psi` on latent draws (`m x q` -> `m x rq`).
    pub fn psi_forward(&self, u: &Matrix) -> Result<Matrix> {
        self.psi.forward(self.psi_params(), u)
    }

    /// Generator output for one standardized covariate row and `m` latent
    /// draws: returns `m x q` in standardized response coordinates.
    pub fn generate_at(&self, x_std: &[f64], u: &Matrix) -> Result<Matrix> {
        let phi = self.phi_forward(&Matrix::row_vector(x_std))?;
        let psi = self.psi_forward(u)?;
        Ok(combine_rank(phi.row(0), &psi, self.rank))
    }

    /// Row-paired generator: output row `k` uses `x_std` row `k` and `u` row `k`.
    pub fn generate_paired(&self, x_std: &Matrix, u: &Matrix) -> Result<Matrix> {
        if x_std.rows() != u.rows() {
            return Err(Error::SizeMismatch {
                left: x_std.rows(),
                right: u.rows(),
            });
        }
        let phi = self.phi_forward(x_std)?;
        let psi = self.psi_forward(u)?;
        let q = self.q;
        let mut out = Matrix::zeros(u.rows(), q);
        for n in 0..u.rows() {
            let (p, s) = (phi.row(n), psi.row(n));
            let dst = out.row_mut(n);
            for (pb, sb) in p.chunks_exact(q).zip(s.chunks_exact(q)) {
                for j in 0..q {
                    dst[j] += pb[j] * sb[j];
                }
            }
        }
        Ok(out)
    }

    pub fn standardize_x(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                context: "covariate",
                expected: self.d,
                found: x.len(),
            });
        }
        Ok(x.iter().zip(&self.x_stats).map(|(v, s)| s.standardize(*v)).collect())
    }

    /// Raw-scale response -> standardized model coordinates.
    pub fn standardize_y(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.q {
            return Err(Error::DimensionMismatch {
                context: "response",
                expected: self.q,
                found: y.len(),
            });
        }
        Ok(y
            .iter()
            .zip(&self.y_stats)
            .map(|(v, s)| s.standardize(self.y_transform.forward(*v)))
            .collect())
    }

    /// Standardized model coordinates -> raw-scale response, in place.
    pub fn destandardize_y_in_place(&self, m: &mut Matrix) {
        for r in 0..m.rows() {
            for (v, s) in m.row_mut(r).iter_mut().zip(&self.y_stats) {
                *v = self.y_transform.inverse(s.destandardize(*v));
            }
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }
}

/// `out[m][j] = sum_i phi[i q + j] * psi[m][i q + j]` for a single `phi` row.
pub fn combine_rank(phi: &[f64], psi: &Matrix, rank: usize) -> Matrix {
    let q = phi.len() / rank;
    let mut out = Matrix::zeros(psi.rows(), q);
    for m in 0..psi.rows() {
        let s = psi.row(m);
        let dst = out.row_mut(m);
        for (pb, sb) in phi.chunks_exact(q).zip(s.chunks_exact(q)) {
            for j in 0..q {
                dst[j] += pb[j] * sb[j];
            }
        }
    }
    out
}

/// Single-point generator `phi(x, u)` in standardized coordinates.
pub fn cpfn_forward(model: &CpfnModel, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.d {
        return Err(Error::DimensionMismatch {
            context: "covariate",
            expected: model.d,
            found: x.len(),
        });
    }
    if u.len() != model.q {
        return Err(Error::DimensionMismatch {
            context: "latent",
            expected: model.q,
            found: u.len(),
        });
    }
    Ok(model.generate_at(x, &Matrix::row_vector(u))?.into_vec())
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    schema_version: u32,
    checksum: String,
    model: CpfnModel,
}

fn body_checksum(model: &CpfnModel) -> Result<String> {
    let bytes = serde_json::to_vec(model)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// JSON container with format tag, schema version and a SHA-256 over the
/// serialized model body.
pub fn serialize_model(model: &CpfnModel) -> Result<Vec<u8>> {
    model.validate()?;
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        schema_version: MODEL_SCHEMA_VERSION,
        checksum: body_checksum(model)?,
        model: model.clone(),
    };
    let mut out = serde_json::to_vec_pretty(&file)?;
    out.push(b'\n');
    Ok(out)
}

pub fn deserialize_model(bytes: &[u8]) -> Result<CpfnModel> {
    let file: ModelFile = serde_json::from_slice(bytes).map_err(|e| Error::CorruptModel(e.to_string()))?;
    if file.format != MODEL_FORMAT {
        return Err(Error::CorruptModel(format!("unexpected format tag `{}`", file.format)));
    }
    if file.schema_version != MODEL_SCHEMA_VERSION {
        return Err(Error::CorruptModel(format!(
            "unsupported schema version {} (expected {MODEL_SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    if body_checksum(&file.model)? != file.checksum {
        return Err(Error::CorruptModel("checksum mismatch".into()));
    }
    // Layout is re-validated from scratch; serde does not enforce it.
    let model = file.model;
    ParameterVector::from_parts(model.params.values().to_vec(), model.params.segments().to_vec())?;
    model.validate().map_err(|e| Error::CorruptModel(e.to_string()))?;
    Ok(model)
}

pub fn save_model(model: &CpfnModel, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, serialize_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &std::path::Path) -> Result<CpfnModel> {
    deserialize_model(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::scalar::std_normal_cdf;
    use crate::kernels::KernelFamily;

    fn paper_opts() -> ModelOptions {
        ModelOptions::default()
    }

    #[test]
    fn parameter_count_follows_layer_arithmetic() {
        let m = CpfnModel::init(1, 1, &paper_opts(), 7).unwrap();
        let per_net = (50 + 50) + (50 * 50 + 50) * 2 + (50 * 20 + 20);
        assert_eq!(per_net, 6220);
        assert_eq!(m.theta_len(), 12_440);
        assert_eq!(m.params.len(), 12_441);

        let opts = ModelOptions {
            rank: 50,
            ..paper_opts()
        };
        let m = CpfnModel::init(8, 1, &opts, 0).unwrap();
        // d=8, q=1, r=50 gives 15,850 dofs
        assert_eq!(m.theta_len(), 15_850);
    }

    #[test]
    fn init_is_seeded_and_bandwidth_roundtrips() {
        let a = CpfnModel::init(1, 1, &paper_opts(), 7).unwrap();
        let b = CpfnModel::init(1, 1, &paper_opts(), 7).unwrap();
        let c = CpfnModel::init(1, 1, &paper_opts(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
        assert!((a.bandwidth().eps()[0] - 0.05).abs() < 1e-15);
        assert!(a.params.values()[..a.theta_len()].iter().any(|v| *v != 0.0));
        assert_eq!(a.params.slice(a.params.segment("phi.b0").unwrap()), &[0.0; 50]);
        assert!(CpfnModel::init(0, 1, &paper_opts(), 7).is_err());
        assert!(CpfnModel::init(1, 2, &ModelOptions { eps0: vec![0.1, 0.2, 0.3], ..paper_opts() }, 7).is_err());
        assert!(CpfnModel::init(1, 1, &ModelOptions { eps0: vec![-0.1], ..paper_opts() }, 7).is_err());
    }

    #[test]
    fn identity_and_zero_networks() {
        let arch = NetworkArchitecture::new(3, &[], 3, Activation::Identity);
        let mut p = vec![0.0; 12];
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.5]]);
        assert_eq!(arch.forward(&p, &x).unwrap(), x);
        let arch = NetworkArchitecture::new(3, &[4, 2], 2, Activation::Identity);
        let zeros = vec![0.0; arch.param_count()];
        assert_eq!(arch.forward(&zeros, &x).unwrap().as_slice(), &[0.0, 0.0]);
        assert!(arch.forward(&zeros, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn small_gelu_network_matches_hand_computation() {
        // 1 -> 2 -> 1, gelu hidden, identity output
        let arch = NetworkArchitecture::new(1, &[2], 1, Activation::Identity);
        let p = [0.7, -1.3, 0.2, 0.1, 1.5, -0.4, 0.25];
        let x = 0.9;
        let g = |z: f64| z * std_normal_cdf(z);
        let h1 = g(0.7 * x + 0.2);
        let h2 = g(-1.3 * x + 0.1);
        let expected = 1.5 * h1 - 0.4 * h2 + 0.25;
        let out = arch.forward(&p, &Matrix::from_rows(&[[x]])).unwrap();
        assert!((out.get(0, 0) - expected).abs() < 1e-12);
    }

    fn stub(rank: usize, q: usize, phi_bias: &[f64], psi_bias: &[f64]) -> CpfnModel {
        // zero-hidden-layer submodules with zero weights: outputs equal the biases
        let d = 1;
        let phi = NetworkArchitecture::new(d, &[], rank * q, Activation::Identity);
        let psi = NetworkArchitecture::new(q, &[], rank * q, Activation::Identity);
        let mut pp = vec![0.0; d * rank * q];
        pp.extend_from_slice(phi_bias);
        let mut sp = vec![0.0; q * rank * q];
        sp.extend_from_slice(psi_bias);
        CpfnModel::from_networks(
            phi,
            &pp,
            psi,
            &sp,
            rank,
            KernelSpec::gaussian(q),
            &Bandwidth::uniform(0.05, q).unwrap(),
            Latent::StandardNormal,
        )
        .unwrap()
    }

    #[test]
    fn single_product_and_annihilation() {
        let m = stub(1, 1, &[2.0], &[3.0]);
        assert_eq!(cpfn_forward(&m, &[0.3], &[-1.0]).unwrap(), vec![6.0]);
        let m = stub(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[0.0; 6]);
        assert_eq!(cpfn_forward(&m, &[0.3], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert!(cpfn_forward(&m, &[0.3, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rank_combination_matches_double_loop() {
        let m = CpfnModel::init(
            2,
            2,
            &ModelOptions {
                rank: 3,
                hidden_widths: vec![4],
                ..paper_opts()
            },
            11,
        )
        .unwrap();
        let x = [0.3, -0.8];
        let u = [1.1, -0.2];
        let phi = m.phi_forward(&Matrix::row_vector(&x)).unwrap();
        let psi = m.psi_forward(&Matrix::row_vector(&u)).unwrap();
        let mut expected = [0.0; 2];
        for (j, e) in expected.iter_mut().enumerate() {
            for i in 0..3 {
                *e += phi.get(0, i * 2 + j) * psi.get(0, i * 2 + j);
            }
        }
        let out = cpfn_forward(&m, &x, &u).unwrap();
        for j in 0..2 {
            assert!((out[j] - expected[j]).abs() < 1e-14);
        }
        let paired = m
            .generate_paired(&Matrix::from_rows(&[x, x]), &Matrix::from_rows(&[u, [0.0, 0.0]]))
            .unwrap();
        assert_eq!(paired.row(0), out.as_slice());
    }

    #[test]
    fn constant_psi_makes_output_independent_of_u() {
        let mut m = CpfnModel::init(1, 1, &paper_opts(), 3).unwrap();
        let off = m.psi_offset();
        let len = m.psi.param_count();
        // zero every psi weight; keep nonzero final bias so output is a constant
        let segs: Vec<_> = m.params.segments().to_vec();
        for s in segs.iter().filter(|s| s.name.starts_with("psi.w")) {
            m.params.slice_mut(s).fill(0.0);
        }
        let last_b = segs.iter().filter(|s| s.name.starts_with("psi.b")).last().unwrap().clone();
        m.params.slice_mut(&last_b).iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * i as f64);
        assert!(off + len <= m.params.len());
        let a = cpfn_forward(&m, &[0.4], &[-2.0]).unwrap();
        let b = cpfn_forward(&m, &[0.4], &[3.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tape_forward_matches_direct_forward() {
        let arch = NetworkArchitecture::new(2, &[5, 3], 4, Activation::Gelu);
        let m = CpfnModel::init(2, 2, &ModelOptions { rank: 2, hidden_widths: vec![5, 3], ..paper_opts() }, 5).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2], [-1.0, 2.0]]);
        let direct = m.psi_forward(&x).unwrap();
        let mut t = Tape::new(&m.params);
        let xin = t.input(x.clone());
        let out = arch.forward_on_tape(&mut t, m.psi_offset(), xin).unwrap();
        assert_eq!(t.value(out), &direct);
    }

    #[test]
    fn serialization_round_trip_is_exact() {
        let mut m = CpfnModel::init(2, 2, &ModelOptions { rank: 3, hidden_widths: vec![4], ..paper_opts() }, 1).unwrap();
        m.x_stats[1] = ColumnStats { mean: 0.1, std: 1.0 / 3.0 };
        m.y_transform = ResponseTransform::Log1p;
        m.provenance = Provenance {
            config_hash: Some("abc".into()),
            seed: Some(42),
        };
        let bytes = serialize_model(&m).unwrap();
        let back = deserialize_model(&bytes).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.params.values().iter().zip(m.params.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupted_streams_are_rejected() {
        let m = CpfnModel::init(1, 1, &ModelOptions { rank: 2, hidden_widths: vec![3], ..paper_opts() }, 1).unwrap();
        let bytes = serialize_model(&m).unwrap();
        let truncated = &bytes[..bytes.len() / 2];
        assert!(matches!(deserialize_model(truncated), Err(Error::CorruptModel(_))));

        let text = String::from_utf8(bytes.clone()).unwrap();
        let tampered = text.replacen("\"rank\": 2", "\"rank\": 3", 1);
        assert!(matches!(deserialize_model(tampered.as_bytes()), Err(Error::CorruptModel(_))));
        let wrong_version = text.replacen("\"schema_version\": 1", "\"schema_version\": 99", 1);
        assert!(matches!(deserialize_model(wrong_version.as_bytes()), Err(Error::CorruptModel(_))));
    }

    #[test]
    fn latent_draws_are_seeded() {
        let a = Latent::StandardNormal.sample(5, 2, &mut rng::seeded(3));
        let b = Latent::StandardNormal.sample(5, 2, &mut rng::seeded(3));
        assert_eq!(a, b);
        let u = Latent::Uniform01.sample(100, 1, &mut rng::seeded(3));
        assert!(u.as_slice().iter().all(|v| (0.0..1.0).contains(v)));
        assert_eq!(KernelFamily::Gaussian, "gaussian".parse().unwrap());
    }
}
