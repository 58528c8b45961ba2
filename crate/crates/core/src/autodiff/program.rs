//! Scalar programs over a parameter vector, their reverse-mode gradients,
//! and the central-difference oracle used to check them.

use crate::error::{Error, Result};

use super::params::{GradientResult, ParameterVector};
use super::tape::{Tape, Var};

/// A differentiable computation producing a `1 x 1` output from the
/// parameters loaded on the tape plus whatever fixed inputs it captures.
pub trait Program {
    fn build(&self, tape: &mut Tape<'_>) -> Result<Var>;
}

impl<F> Program for F
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    fn build(&self, tape: &mut Tape<'_>) -> Result<Var> {
        self(tape)
    }
}

fn run_forward<P: Program + ?Sized>(program: &P, values: &[f64]) -> Result<f64> {
    let mut tape = Tape::from_slice(values);
    let out = program.build(&mut tape)?;
    let m = tape.value(out);
    if m.len() != 1 {
        return Err(Error::DimensionMismatch {
            context: "program output",
            expected: 1,
            found: m.len(),
        });
    }
    let v = m.as_slice()[0];
    if !v.is_finite() {
        return Err(Error::NonFiniteValue { op: "program output" });
    }
    Ok(v)
}

pub fn evaluate<P: Program + ?Sized>(program: &P, params: &ParameterVector) -> Result<f64> {
    run_forward(program, params.values())
}

pub fn evaluate_with_gradient<P: Program + ?Sized>(program: &P, params: &ParameterVector) -> Result<GradientResult> {
    evaluate_slice_with_gradient(program, params.values())
}

pub fn evaluate_slice_with_gradient<P: Program + ?Sized>(program: &P, values: &[f64]) -> Result<GradientResult> {
    let mut tape = Tape::from_slice(values);
    let out = program.build(&mut tape)?;
    let value = tape.scalar(out);
    if !value.is_finite() {
        return Err(Error::NonFiniteValue { op: "program output" });
    }
    let gradient = tape.gradient(out)?;
    Ok(GradientResult { value, gradient })
}

/// Central differences `(p(theta + h e_i) - p(theta - h e_i)) / 2h`.
pub fn finite_difference_gradient<P: Program + ?Sized>(program: &P, params: &ParameterVector, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidConfig(format!("finite-difference step must be > 0, got {step}")));
    }
    // Surface build errors (unsupported primitives, shapes) before perturbing.
    run_forward(program, params.values())?;
    let mut theta = params.values().to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + step;
        let plus = run_forward(program, &theta)?;
        theta[i] = orig - step;
        let minus = run_forward(program, &theta)?;
        theta[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over coordinates.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Parsed scalar expression over `theta0, theta1, ...` (also `t0`, `p0`).
///
/// Grammar: `+ - *`, division and integer powers by numeric constants,
/// parentheses, and the functions `gelu tanh exp log sq`.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Param(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, f64),
    Pow(Box<Expr>, u32),
    Call(Func, Box<Expr>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Gelu,
    Tanh,
    Exp,
    Log,
    Square,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser {
            chars: src.chars().collect(),
            pos: 0,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.chars.len() {
            return Err(Error::ProgramSyntax(format!("unexpected input at offset {}", p.pos)));
        }
        Ok(e)
    }

    /// One past the highest parameter index referenced.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Param(i) => i + 1,
            Expr::Neg(a) | Expr::Div(a, _) | Expr::Pow(a, _) | Expr::Call(_, a) => a.arity(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => a.arity().max(b.arity()),
        }
    }

    fn emit(&self, t: &mut Tape<'_>) -> Result<Var> {
        Ok(match self {
            Expr::Const(c) => t.constant(1, 1, *c),
            Expr::Param(i) => t.param_block(*i, 1, 1),
            Expr::Neg(a) => {
                let a = a.emit(t)?;
                t.scale(a, -1.0)?
            }
            Expr::Add(a, b) => {
                let (a, b) = (a.emit(t)?, b.emit(t)?);
                t.add(a, b)?
            }
            Expr::Sub(a, b) => {
                let (a, b) = (a.emit(t)?, b.emit(t)?);
                t.sub(a, b)?
            }
            Expr::Mul(a, b) => {
                let (a, b) = (a.emit(t)?, b.emit(t)?);
                t.mul(a, b)?
            }
            Expr::Div(a, c) => {
                let a = a.emit(t)?;
                t.scale(a, 1.0 / c)?
            }
            Expr::Pow(a, k) => {
                let base = a.emit(t)?;
                if *k == 0 {
                    t.constant(1, 1, 1.0)
                } else {
                    let mut acc = base;
                    for _ in 1..*k {
                        acc = t.mul(acc, base)?;
                    }
                    acc
                }
            }
            Expr::Call(f, a) => {
                let a = a.emit(t)?;
                match f {
                    Func::Gelu => t.gelu(a)?,
                    Func::Tanh => t.tanh(a)?,
                    Func::Exp => t.exp(a)?,
                    Func::Log => t.log(a)?,
                    Func::Square => t.square(a)?,
                }
            }
        })
    }
}

impl Program for Expr {
    fn build(&self, tape: &mut Tape<'_>) -> Result<Var> {
        self.emit(tape)
    }
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

impl Parser {
    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                match self.unary()? {
                    Expr::Const(c) if c != 0.0 => lhs = Expr::Div(Box::new(lhs), c),
                    _ => return Err(Error::UnsupportedPrimitive("division by a non-constant".into())),
                }
            } else {
                return Ok(lhs);
            }
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.eat('^') {
            match self.unary()? {
                Expr::Const(c) if c >= 0.0 && c.fract() == 0.0 && c <= 64.0 => Ok(Expr::Pow(Box::new(base), c as u32)),
                _ => Err(Error::UnsupportedPrimitive("non-integer power".into())),
            }
        } else {
            Ok(base)
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn primary(&mut self) -> Result<Expr> {
        let Some(c) = self.peek() else {
            return Err(Error::ProgramSyntax("unexpected end of input".into()));
        };
        if self.eat('(') {
            let e = self.expr()?;
            if !self.eat(')') {
                return Err(Error::ProgramSyntax("missing `)`".into()));
            }
            return Ok(e);
        }
        if c.is_ascii_digit() || c == '.' {
            return self.number();
        }
        if c.is_alphabetic() || c == '_' {
            let start = self.pos;
            while self.pos < self.chars.len() && (self.chars[self.pos].is_alphanumeric() || self.chars[self.pos] == '_') {
                self.pos += 1;
            }
            let ident: String = self.chars[start..self.pos].iter().collect();
            if let Some(idx) = param_index(&ident) {
                return Ok(Expr::Param(idx));
            }
            let func = match ident.as_str() {
                "gelu" => Func::Gelu,
                "tanh" => Func::Tanh,
                "exp" => Func::Exp,
                "log" | "ln" => Func::Log,
                "sq" => Func::Square,
                _ => return Err(Error::UnsupportedPrimitive(ident)),
            };
            if !self.eat('(') {
                return Err(Error::ProgramSyntax(format!("expected `(` after `{ident}`")));
            }
            let arg = self.expr()?;
            if !self.eat(')') {
                return Err(Error::ProgramSyntax("missing `)`".into()));
            }
            return Ok(Expr::Call(func, Box::new(arg)));
        }
        Err(Error::ProgramSyntax(format!("unexpected character `{c}`")))
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.chars.len() {
            let c = self.chars[self.pos];
            let exp_sign = (c == '+' || c == '-') && matches!(self.chars.get(self.pos.wrapping_sub(1)), Some('e' | 'E'));
            if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        s.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| Error::ProgramSyntax(format!("bad number `{s}`")))
    }
}

fn param_index(ident: &str) -> Option<usize> {
    ["theta", "t", "p"]
        .iter()
        .find_map(|prefix| ident.strip_prefix(prefix))
        .filter(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
        .and_then(|rest| rest.parse().ok())
}
