//! Reverse-mode differentiation over a per-evaluation record.
//!
//! Every evaluation builds a fresh [`Tape`]; each primitive pushes one node
//! holding its value and the local partial derivatives with respect to its
//! parents. [`Tape::gradient`] sweeps the record backwards once.
//!
//! Code that must run both on plain floats and on the tape is written against
//! the [`Real`] trait, implemented for `f64` and for [`Var`].

use std::cell::{Cell, RefCell};
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::bernstein::BernsteinBasis;
use crate::error::DiffError;

/// Lower clamp applied to every sigmoid output (upper clamp is `1 - SIGMOID_EPS`).
pub const SIGMOID_EPS: f64 = 1e-7;

/// `ln(sqrt(2 pi))`
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(e^y - 1)`, the inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

/// Logistic function without clamping.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic function clamped to `[SIGMOID_EPS, 1 - SIGMOID_EPS]`.
pub fn sigmoid(x: f64) -> f64 {
    logistic(x).clamp(SIGMOID_EPS, 1.0 - SIGMOID_EPS)
}

/// `ln sigma'(x)` of the unclamped logistic, finite for every finite `x`.
pub fn ln_logistic_slope(x: f64) -> f64 {
    -(softplus(x) + softplus(-x))
}

/// Scalar arithmetic shared by plain evaluation and taped evaluation.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;
    /// A constant of the same kind as `self` (on the same tape for [`Var`]).
    fn lift(self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    /// Clamped logistic; see [`sigmoid`].
    fn sigmoid(self) -> Self;
    fn softplus(self) -> Self;
    fn powi(self, n: i32) -> Self;
    /// Bernstein polynomial with coefficients `theta` evaluated at `z`.
    fn bernstein(basis: &BernsteinBasis, theta: &[Self], z: Self) -> Self;
    /// Derivative of the Bernstein polynomial with respect to its argument.
    fn bernstein_slope(basis: &BernsteinBasis, theta: &[Self], z: Self) -> Self;

    fn square(self) -> Self {
        self * self
    }

    fn ln_logistic_slope(self) -> Self {
        -(self.softplus() + (-self).softplus())
    }

    /// Standard-normal log-density.
    fn std_normal_ln_pdf(self) -> Self {
        self.square() * -0.5 - LN_SQRT_2PI
    }
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }
    fn lift(self, c: f64) -> Self {
        c
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
    fn softplus(self) -> Self {
        softplus(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn bernstein(basis: &BernsteinBasis, theta: &[Self], z: Self) -> Self {
        basis.eval(theta, z)
    }
    fn bernstein_slope(basis: &BernsteinBasis, theta: &[Self], z: Self) -> Self {
        basis.slope(theta, z)
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    start: usize,
    end: usize,
}

/// Expression record for one evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    partials: RefCell<Vec<(usize, f64)>>,
    fault: Cell<Option<&'static str>>,
}

/// A value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
    value: f64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({})", self.index, self.value)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records an independent variable (or a constant; the two only differ in
    /// whether the caller asks for its gradient).
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(value, "input", &[])
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First primitive that produced a non-finite value or partial, if any.
    pub fn fault(&self) -> Option<&'static str> {
        self.fault.get()
    }

    fn push(&self, value: f64, primitive: &'static str, parents: &[(usize, f64)]) -> Var<'_> {
        if self.fault.get().is_none()
            && (!value.is_finite() || parents.iter().any(|(_, d)| !d.is_finite()))
        {
            self.fault.set(Some(primitive));
        }
        let mut partials = self.partials.borrow_mut();
        let start = partials.len();
        partials.extend_from_slice(parents);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            start,
            end: partials.len(),
        });
        Var {
            tape: self,
            index: nodes.len() - 1,
            value,
        }
    }

    /// Adjoints of `output` with respect to each of `wrt`.
    pub fn gradient(&self, output: Var<'_>, wrt: &[Var<'_>]) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let partials = self.partials.borrow();
        let mut adjoint = vec![0.0; output.index + 1];
        adjoint[output.index] = 1.0;
        for i in (0..=output.index).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            for &(parent, d) in &partials[node.start..node.end] {
                adjoint[parent] += a * d;
            }
        }
        wrt.iter()
            .map(|v| adjoint.get(v.index).copied().unwrap_or(0.0))
            .collect()
    }
}

impl<'t> Var<'t> {
    pub fn val(&self) -> f64 {
        self.value
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(self, value: f64, primitive: &'static str, d: f64) -> Self {
        self.tape.push(value, primitive, &[(self.index, d)])
    }

    fn binary(self, other: Self, value: f64, primitive: &'static str, da: f64, db: f64) -> Self {
        self.tape
            .push(value, primitive, &[(self.index, da), (other.index, db)])
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.value + rhs.value, "add", 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.value - rhs.value, "sub", 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.value * rhs.value, "mul", rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let q = self.value / rhs.value;
        self.binary(rhs, q, "div", 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(-self.value, "neg", -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.value + rhs, "add", 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.value - rhs, "sub", 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.value * rhs, "mul", rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self {
        self.unary(self.value / rhs, "div", 1.0 / rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.unary(self - rhs.value, "sub", -1.0)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let q = self / rhs.value;
        rhs.unary(q, "div", -q / rhs.value)
    }
}

impl<'t> Real for Var<'t> {
    fn value(self) -> f64 {
        self.value
    }

    fn lift(self, c: f64) -> Self {
        self.tape.var(c)
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(e, "exp", e)
    }

    fn ln(self) -> Self {
        self.unary(self.value.ln(), "ln", 1.0 / self.value)
    }

    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.unary(t, "tanh", 1.0 - t * t)
    }

    fn sigmoid(self) -> Self {
        let s = logistic(self.value);
        if s < SIGMOID_EPS {
            self.unary(SIGMOID_EPS, "sigmoid", 0.0)
        } else if s > 1.0 - SIGMOID_EPS {
            self.unary(1.0 - SIGMOID_EPS, "sigmoid", 0.0)
        } else {
            self.unary(s, "sigmoid", s * (1.0 - s))
        }
    }

    fn softplus(self) -> Self {
        self.unary(softplus(self.value), "softplus", logistic(self.value))
    }

    fn powi(self, n: i32) -> Self {
        let d = f64::from(n) * self.value.powi(n - 1);
        self.unary(self.value.powi(n), "powi", d)
    }

    fn bernstein(basis: &BernsteinBasis, theta: &[Self], z: Self) -> Self {
        let values: Vec<f64> = theta.iter().map(|t| t.value).collect();
        let weights = basis.weights(z.value);
        let value = weights.iter().zip(&values).map(|(b, t)| b * t).sum();
        let mut parents: Vec<(usize, f64)> =
            theta.iter().zip(&weights).map(|(t, &b)| (t.index, b)).collect();
        parents.push((z.index, basis.slope(&values, z.value)));
        z.tape.push(value, "bernstein", &parents)
    }

    fn bernstein_slope(basis: &BernsteinBasis, theta: &[Self], z: Self) -> Self {
        let values: Vec<f64> = theta.iter().map(|t| t.value).collect();
        let value = basis.slope(&values, z.value);
        let grad = basis.slope_theta_gradient(z.value);
        let mut parents: Vec<(usize, f64)> =
            theta.iter().zip(&grad).map(|(t, &g)| (t.index, g)).collect();
        parents.push((z.index, basis.curvature(&values, z.value)));
        z.tape.push(value, "bernstein_slope", &parents)
    }
}

/// Function value together with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientResult {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// A scalar function of a real vector that can be evaluated on any [`Real`].
pub trait Objective {
    fn eval<R: Real>(&self, x: &[R]) -> R;
}

/// Exact gradient of `f` at `x` by one reverse sweep.
pub fn grad<F: Objective + ?Sized>(f: &F, x: &[f64]) -> Result<GradientResult, DiffError> {
    let tape = Tape::new();
    let inputs = tape.vars(x);
    let out = f.eval(&inputs);
    if let Some(primitive) = tape.fault() {
        return Err(DiffError::NonFinite { primitive });
    }
    let gradient = tape.gradient(out, &inputs);
    Ok(GradientResult {
        value: out.val(),
        gradient,
    })
}

/// Largest coordinate-wise `|analytic - central difference| / max(1, |analytic|)`.
///
/// Returns `f64::INFINITY` when the taped evaluation itself is not finite.
pub fn check_gradient<F: Objective + ?Sized>(f: &F, x: &[f64], h: f64) -> f64 {
    let analytic = match grad(f, x) {
        Ok(g) => g.gradient,
        Err(_) => return f64::INFINITY,
    };
    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for (i, a) in analytic.iter().enumerate() {
        probe[i] = x[i] + h;
        let up = f.eval(&probe);
        probe[i] = x[i] - h;
        let down = f.eval(&probe);
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        let err = (a - fd).abs() / a.abs().max(1.0);
        if !err.is_finite() {
            return f64::INFINITY;
        }
        worst = worst.max(err);
    }
    worst
}
