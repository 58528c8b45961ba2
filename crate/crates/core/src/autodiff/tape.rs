//! Matrix-valued Wengert tape.
//!
//! Every node holds a full row-major matrix, so a whole minibatch flows
//! through one node per layer. The tape is rebuilt for every evaluation.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

use super::params::{ParameterVector, Segment};
use super::scalar::{gelu_with_cdf, std_normal_pdf};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param { offset: usize },
    Affine { x: Var, w: Var, b: Option<Var> },
    Gelu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    LogOneMinusSquare(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    RepeatRows(Var, usize),
    SumRowGroups(Var, usize),
    RankSum(Var),
    SumCols(Var),
    Sum(Var),
    LogSumExpGroups { x: Var, group: usize },
}

struct Node {
    value: Matrix,
    op: Op,
    // Cached forward quantity reused by the backward pass (gelu keeps Phi(x)).
    aux: Option<Matrix>,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
}

fn check(op: &'static str, m: &Matrix) -> Result<()> {
    // -inf is a legitimate log(0) (compact kernels); NaN and +inf are not.
    if m.as_slice().iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        Err(Error::NonFiniteValue { op })
    } else {
        Ok(())
    }
}

fn same_shape(context: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            context,
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParameterVector) -> Self {
        Self::from_slice(params.values())
    }

    pub fn from_slice(params: &'p [f64]) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.len(), 1);
        m.as_slice()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, aux: Option<Matrix>, name: &'static str) -> Result<Var> {
        check(name, &value)?;
        let needs_grad = match &op {
            Op::Input => false,
            Op::Param { .. } => true,
            op => parents(op).iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            aux,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn input(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Input, None, "input")
            .expect("inputs must not contain NaN or +inf")
    }

    pub fn try_input(&mut self, m: Matrix) -> Result<Var> {
        self.push(m, Op::Input, None, "input")
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: f64) -> Var {
        self.input(Matrix::filled(rows, cols, value))
    }

    /// The block `offset .. offset + rows*cols` of the parameter vector.
    pub fn param_block(&mut self, offset: usize, rows: usize, cols: usize) -> Var {
        let data = self.params[offset..offset + rows * cols].to_vec();
        let m = Matrix::from_vec(rows, cols, data);
        self.push(m, Op::Param { offset }, None, "param")
            .expect("parameters are finite")
    }

    pub fn param(&mut self, seg: &Segment) -> Var {
        self.param_block(seg.offset, seg.rows, seg.cols)
    }

    /// `x * w + b` with `w: in x out` and `b: 1 x out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.cols() != wv.rows() {
            return Err(Error::DimensionMismatch {
                context: "affine input",
                expected: wv.rows(),
                found: xv.cols(),
            });
        }
        if let Some(b) = b {
            if self.value(b).shape() != (1, wv.cols()) {
                return Err(Error::DimensionMismatch {
                    context: "affine bias",
                    expected: wv.cols(),
                    found: self.value(b).len(),
                });
            }
        }
        let out = linalg::affine(xv, wv, b.map(|b| self.value(b)));
        self.push(out, Op::Affine { x, w, b }, None, "affine")
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut cdf = Matrix::zeros(xv.rows(), xv.cols());
        let mut out = Matrix::zeros(xv.rows(), xv.cols());
        for ((o, c), &z) in out
            .as_mut_slice()
            .iter_mut()
            .zip(cdf.as_mut_slice())
            .zip(xv.as_slice())
        {
            let (g, p) = gelu_with_cdf(z);
            *o = g;
            *c = p;
        }
        self.push(out, Op::Gelu(x), Some(cdf), "gelu")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x), None, "tanh")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::exp);
        self.push(out, Op::Exp(x), None, "exp")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::ln);
        self.push(out, Op::Log(x), None, "log")
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x), None, "square")
    }

    /// `ln(1 - x^2)` inside `|x| < 1`, `-inf` outside.
    pub fn log_one_minus_square(&mut self, x: Var) -> Result<Var> {
        let out = self
            .value(x)
            .map(|v| if v.abs() < 1.0 { (1.0 - v * v).ln() } else { f64::NEG_INFINITY });
        self.push(out, Op::LogOneMinusSquare(x), None, "log_one_minus_square")
    }

    fn zip_with(&self, a: Var, b: Var, ctx: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(ctx, av, bv)?;
        let data = av.as_slice().iter().zip(bv.as_slice()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Matrix::from_vec(av.rows(), av.cols(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b), None, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), None, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), None, "mul")
    }

    fn row_broadcast(&self, a: Var, row: Var, ctx: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.shape() != (1, av.cols()) {
            return Err(Error::DimensionMismatch {
                context: ctx,
                expected: av.cols(),
                found: rv.len(),
            });
        }
        let mut out = av.clone();
        let r = rv.as_slice();
        for i in 0..out.rows() {
            for (o, &s) in out.row_mut(i).iter_mut().zip(r) {
                *o = f(*o, s);
            }
        }
        Ok(out)
    }

    /// Adds the `1 x c` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.row_broadcast(a, row, "add_row", |x, y| x + y)?;
        self.push(out, Op::AddRow(a, row), None, "add_row")
    }

    /// Multiplies every row of `a` elementwise by the `1 x c` row `row`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.row_broadcast(a, row, "mul_row", |x, y| x * y)?;
        self.push(out, Op::MulRow(a, row), None, "mul_row")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c), None, "scale")
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v + c);
        self.push(out, Op::Offset(a), None, "offset")
    }

    /// Repeats each row `k` times consecutively: `n x c -> nk x c`.
    pub fn repeat_rows(&mut self, a: Var, k: usize) -> Result<Var> {
        let av = self.value(a);
        let mut data = Vec::with_capacity(av.len() * k);
        for row in av.iter_rows() {
            for _ in 0..k {
                data.extend_from_slice(row);
            }
        }
        let out = Matrix::from_vec(av.rows() * k, av.cols(), data);
        self.push(out, Op::RepeatRows(a, k), None, "repeat_rows")
    }

    /// Sums consecutive groups of `k` rows: `nk x c -> n x c`.
    pub fn sum_row_groups(&mut self, a: Var, k: usize) -> Result<Var> {
        let av = self.value(a);
        if k == 0 || av.rows() % k != 0 {
            return Err(Error::DimensionMismatch {
                context: "sum_row_groups",
                expected: k,
                found: av.rows(),
            });
        }
        let n = av.rows() / k;
        let mut out = Matrix::zeros(n, av.cols());
        for i in 0..n {
            let dst = out.row_mut(i);
            for t in 0..k {
                for (d, s) in dst.iter_mut().zip(av.row(i * k + t)) {
                    *d += s;
                }
            }
        }
        self.push(out, Op::SumRowGroups(a, k), None, "sum_row_groups")
    }

    /// Treats each row as an `r x q` rank-major block and sums over the rank:
    /// `n x (r q) -> n x q`.
    pub fn rank_sum(&mut self, a: Var, rank: usize) -> Result<Var> {
        let av = self.value(a);
        if rank == 0 || av.cols() % rank != 0 {
            return Err(Error::DimensionMismatch {
                context: "rank_sum",
                expected: rank,
                found: av.cols(),
            });
        }
        let q = av.cols() / rank;
        let mut out = Matrix::zeros(av.rows(), q);
        for (n, row) in av.iter_rows().enumerate() {
            let dst = out.row_mut(n);
            for block in row.chunks_exact(q) {
                for (d, s) in dst.iter_mut().zip(block) {
                    *d += s;
                }
            }
        }
        self.push(out, Op::RankSum(a), None, "rank_sum")
    }

    /// Row sums: `n x c -> n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let data = av.iter_rows().map(|r| r.iter().sum()).collect();
        let out = Matrix::from_vec(av.rows(), 1, data);
        self.push(out, Op::SumCols(a), None, "sum_cols")
    }

    /// Squared Euclidean norm of each row: `n x c -> n x 1`.
    pub fn squared_norm_rows(&mut self, a: Var) -> Result<Var> {
        let sq = self.square(a)?;
        self.sum_cols(sq)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).as_slice().iter().sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(a), None, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// For a column `x` of `n k` entries, returns the `n x 1` column
    /// `ln(exp(floor) + sum_t exp(x[i k + t]))`, evaluated with a max shift
    /// so that neither tiny nor huge exponents lose precision.
    pub fn log_sum_exp_groups(&mut self, x: Var, group: usize, floor: f64) -> Result<Var> {
        let xv = self.value(x);
        if xv.cols() != 1 || group == 0 || xv.rows() % group != 0 {
            return Err(Error::DimensionMismatch {
                context: "log_sum_exp_groups",
                expected: group,
                found: xv.rows(),
            });
        }
        let n = xv.rows() / group;
        let mut out = Vec::with_capacity(n);
        for chunk in xv.as_slice().chunks_exact(group) {
            out.push(log_sum_exp_with_floor(chunk, floor));
        }
        let out = Matrix::from_vec(n, 1, out);
        self.push(out, Op::LogSumExpGroups { x, group }, None, "log_sum_exp_groups")
    }

    /// Reverse sweep from the scalar node `out`. Returns d out / d params.
    pub fn gradient(&self, out: Var) -> Result<Vec<f64>> {
        let mut grad_params = vec![0.0; self.params.len()];
        if self.value(out).len() != 1 {
            return Err(Error::DimensionMismatch {
                context: "gradient output",
                expected: 1,
                found: self.value(out).len(),
            });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param { offset } => {
                    for (d, s) in grad_params[*offset..*offset + g.len()].iter_mut().zip(g.as_slice()) {
                        *d += s;
                    }
                }
                Op::Affine { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    if self.nodes[x.0].needs_grad {
                        let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                        linalg::gemm(1.0, &g, false, wv, true, 0.0, &mut gx);
                        accumulate(&mut grads, *x, gx);
                    }
                    if self.nodes[w.0].needs_grad {
                        let mut gw = Matrix::zeros(wv.rows(), wv.cols());
                        linalg::gemm(1.0, xv, true, &g, false, 0.0, &mut gw);
                        accumulate(&mut grads, *w, gw);
                    }
                    if let Some(b) = b {
                        if self.nodes[b.0].needs_grad {
                            accumulate(&mut grads, *b, g.column_sums());
                        }
                    }
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let cdf = node.aux.as_ref().expect("gelu caches its cdf");
                    let mut gx = g;
                    for ((d, &z), &p) in gx.as_mut_slice().iter_mut().zip(xv.as_slice()).zip(cdf.as_slice()) {
                        *d *= p + z * std_normal_pdf(z);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Tanh(x) => {
                    let mut gx = g;
                    for (d, &y) in gx.as_mut_slice().iter_mut().zip(node.value.as_slice()) {
                        *d *= 1.0 - y * y;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Exp(x) => {
                    let mut gx = g;
                    for (d, &y) in gx.as_mut_slice().iter_mut().zip(node.value.as_slice()) {
                        *d *= y;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Log(x) => {
                    let mut gx = g;
                    for (d, &v) in gx.as_mut_slice().iter_mut().zip(self.value(*x).as_slice()) {
                        *d /= v;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Square(x) => {
                    let mut gx = g;
                    for (d, &v) in gx.as_mut_slice().iter_mut().zip(self.value(*x).as_slice()) {
                        *d *= 2.0 * v;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::LogOneMinusSquare(x) => {
                    let mut gx = g;
                    for (d, &v) in gx.as_mut_slice().iter_mut().zip(self.value(*x).as_slice()) {
                        *d = if v.abs() < 1.0 { *d * (-2.0 * v / (1.0 - v * v)) } else { 0.0 };
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    if self.nodes[b.0].needs_grad {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    if self.nodes[b.0].needs_grad {
                        accumulate(&mut grads, *b, g.map(|v| -v));
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    if self.nodes[b.0].needs_grad {
                        let gb = hadamard(&g, self.value(*a));
                        accumulate(&mut grads, *b, gb);
                    }
                    if self.nodes[a.0].needs_grad {
                        let ga = hadamard(&g, self.value(*b));
                        accumulate(&mut grads, *a, ga);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.nodes[row.0].needs_grad {
                        accumulate(&mut grads, *row, g.column_sums());
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let rv = self.value(*row);
                    if self.nodes[row.0].needs_grad {
                        let gr = hadamard(&g, self.value(*a)).column_sums();
                        accumulate(&mut grads, *row, gr);
                    }
                    if self.nodes[a.0].needs_grad {
                        let mut ga = g;
                        let r = rv.as_slice();
                        for i in 0..ga.rows() {
                            for (d, &s) in ga.row_mut(i).iter_mut().zip(r) {
                                *d *= s;
                            }
                        }
                        accumulate(&mut grads, *a, ga);
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut grads, *a, g.map(|v| v * c));
                }
                Op::Offset(a) => accumulate(&mut grads, *a, g),
                Op::RepeatRows(a, k) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    for i in 0..av.rows() {
                        let dst = ga.row_mut(i);
                        for t in 0..*k {
                            for (d, s) in dst.iter_mut().zip(g.row(i * k + t)) {
                                *d += s;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumRowGroups(a, k) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    for i in 0..av.rows() {
                        ga.row_mut(i).copy_from_slice(g.row(i / k));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::RankSum(a) => {
                    let av = self.value(*a);
                    let q = g.cols();
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    for n in 0..av.rows() {
                        let src = g.row(n);
                        for block in ga.row_mut(n).chunks_exact_mut(q) {
                            block.copy_from_slice(src);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumCols(a) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    for n in 0..av.rows() {
                        let s = g.get(n, 0);
                        ga.row_mut(n).fill(s);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    let s = g.as_slice()[0];
                    accumulate(&mut grads, *a, Matrix::filled(av.rows(), av.cols(), s));
                }
                Op::LogSumExpGroups { x, group, .. } => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows(), 1);
                    for (i, (dst, src)) in gx
                        .as_mut_slice()
                        .chunks_exact_mut(*group)
                        .zip(xv.as_slice().chunks_exact(*group))
                        .enumerate()
                    {
                        let out = node.value.as_slice()[i];
                        let gi = g.as_slice()[i];
                        for (d, &v) in dst.iter_mut().zip(src) {
                            // softmax weight; zero when the term underflows
                            *d = if v == f64::NEG_INFINITY { 0.0 } else { gi * (v - out).exp() };
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        if grad_params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { op: "gradient" });
        }
        Ok(grad_params)
    }
}

/// `ln(exp(floor) + sum_i exp(xs[i]))`; `floor` may be `-inf`.
pub fn log_sum_exp_with_floor(xs: &[f64], floor: f64) -> f64 {
    let m = xs.iter().copied().fold(floor, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut s = (floor - m).exp();
    for &v in xs {
        s += (v - m).exp();
    }
    m + s.ln()
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (d, s) in existing.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *d += s;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Input | Op::Param { .. } => vec![],
        Op::Affine { x, w, b } => {
            let mut v = vec![*x, *w];
            v.extend(b);
            v
        }
        Op::Gelu(a)
        | Op::Tanh(a)
        | Op::Exp(a)
        | Op::Log(a)
        | Op::Square(a)
        | Op::LogOneMinusSquare(a)
        | Op::Scale(a, _)
        | Op::Offset(a)
        | Op::RepeatRows(a, _)
        | Op::SumRowGroups(a, _)
        | Op::RankSum(a)
        | Op::SumCols(a)
        | Op::Sum(a) => vec![*a],
        Op::LogSumExpGroups { x, .. } => vec![*x],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::MulRow(a, b) => {
            vec![*a, *b]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_of(params: &[f64], build: impl Fn(&mut Tape) -> Result<Var>) -> (f64, Vec<f64>) {
        let mut t = Tape::from_slice(params);
        let out = build(&mut t).unwrap();
        (t.scalar(out), t.gradient(out).unwrap())
    }

    #[test]
    fn affine_gradients_match_hand_derivation() {
        // out = sum(x W + b), x = [1, 2], W = [[a, b]]^T ... use 2x1 W.
        let params = [3.0, -1.0, 0.5];
        let (v, g) = grad_of(&params, |t| {
            let x = t.input(Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]));
            let w = t.param_block(0, 2, 1);
            let b = t.param_block(2, 1, 1);
            let y = t.affine(x, w, Some(b))?;
            t.sum(y)
        });
        // rows: 3 - 2 + .5 = 1.5 ; -1 + .5 = -0.5
        assert_eq!(v, 1.0);
        assert_eq!(g, vec![1.0, 3.0, 2.0]);
    }

    #[test]
    fn rank_sum_and_repeat_rows_route_gradients() {
        let params = [1.0, 2.0, 3.0, 4.0];
        let (v, g) = grad_of(&params, |t| {
            let a = t.param_block(0, 1, 4); // r=2, q=2
            let rep = t.repeat_rows(a, 3)?;
            let s = t.rank_sum(rep, 2)?; // 3 x 2 rows of [4, 6]
            let sq = t.square(s)?;
            t.sum(sq)
        });
        assert_eq!(v, 3.0 * (16.0 + 36.0));
        // d/da_{i,j} = 3 * 2 * s_j
        assert_eq!(g, vec![24.0, 36.0, 24.0, 36.0]);
    }

    #[test]
    fn log_sum_exp_groups_handles_neg_infinity() {
        let mut t = Tape::from_slice(&[]);
        let x = t.input(Matrix::from_vec(4, 1, vec![f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0, 0.0]));
        let y = t.log_sum_exp_groups(x, 2, f64::NEG_INFINITY).unwrap();
        assert_eq!(t.value(y).get(0, 0), f64::NEG_INFINITY);
        assert!((t.value(y).get(1, 0) - 2f64.ln()).abs() < 1e-15);
        let y = t.log_sum_exp_groups(x, 2, (1e-15f64).ln()).unwrap();
        assert!((t.value(y).get(0, 0) - (1e-15f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn nan_is_rejected() {
        let mut t = Tape::from_slice(&[-1.0]);
        let p = t.param_block(0, 1, 1);
        assert!(matches!(t.log(p), Err(Error::NonFiniteValue { op: "log" })));
        let mut t = Tape::from_slice(&[1000.0]);
        let p = t.param_block(0, 1, 1);
        assert!(matches!(t.exp(p), Err(Error::NonFiniteValue { op: "exp" })));
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut t = Tape::from_slice(&[1.0, 2.0]);
        let a = t.param_block(0, 1, 2);
        let b = t.param_block(0, 2, 1);
        assert!(matches!(t.add(a, b), Err(Error::DimensionMismatch { .. })));
    }
}
