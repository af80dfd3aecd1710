//! Monotone transformation flow `h = f3 ∘ f2 ∘ σ ∘ f1`.
//!
//! * `f1(z) = a z + b` with `a > 0`
//! * `σ` the logistic function, clamped to `[1e-7, 1 - 1e-7]`
//! * `f2` a Bernstein polynomial with increasing coefficients `theta`
//! * `f3(v) = alpha v + beta` with `alpha > 0`
//!
//! optionally followed by a final logistic squash onto `(0, 1)`. Every stage
//! is strictly increasing, so `h` is a bijection from the real line onto its
//! image and the density of `w = h(z)`, `z ~ N(0, 1)`, follows from the change
//! of variables `q(w) = φ(z) / h'(z)`.
//!
//! Parameters live in two forms. [`UnconstrainedFlowParams`] is what the
//! optimizer moves; [`constrain`] maps it to [`ConstrainedFlowParams`] with
//! `a, alpha > 0` and strictly increasing `theta`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::bernstein::BernsteinBasis;
use crate::diff::{softplus, softplus_inv, Real, LN_SQRT_2PI};
use crate::error::FlowError;

/// Default lower edge of the initial Bernstein support.
pub const DEFAULT_INIT_LOW: f64 = -3.0;
/// Default upper edge of the initial Bernstein support.
pub const DEFAULT_INIT_HIGH: f64 = 3.0;

const INVERT_BRACKET: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub degree: usize,
    /// Pipe the output through a final sigmoid so the image is `(0, 1)`.
    pub squash_output: bool,
    pub init_low: f64,
    pub init_high: f64,
}

impl FlowConfig {
    pub fn new(degree: usize, squash_output: bool) -> Self {
        Self {
            degree,
            squash_output,
            init_low: DEFAULT_INIT_LOW,
            init_high: DEFAULT_INIT_HIGH,
        }
    }

    pub fn with_init_range(mut self, low: f64, high: f64) -> Self {
        self.init_low = low;
        self.init_high = high;
        self
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if self.degree < 1 {
            return Err(FlowError::InvalidDegree(self.degree));
        }
        // written to also reject NaN bounds
        if !(self.init_high - self.init_low > 0.0) {
            return Err(FlowError::EmptyInitRange {
                low: self.init_low,
                high: self.init_high,
            });
        }
        Ok(())
    }

    /// Number of variational parameters, `M + 5`.
    pub fn param_count(&self) -> usize {
        self.degree + 5
    }
}

/// Unrestricted parameters `(a', b, theta', alpha', beta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedFlowParams {
    pub a_raw: f64,
    pub b: f64,
    pub theta_raw: Vec<f64>,
    pub alpha_raw: f64,
    pub beta: f64,
}

impl UnconstrainedFlowParams {
    pub fn degree(&self) -> usize {
        self.theta_raw.len().saturating_sub(1)
    }

    pub fn len(&self) -> usize {
        self.theta_raw.len() + 4
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat layout `[a', b, theta'_0..theta'_M, alpha', beta]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.push(self.a_raw);
        v.push(self.b);
        v.extend_from_slice(&self.theta_raw);
        v.push(self.alpha_raw);
        v.push(self.beta);
        v
    }

    pub fn from_slice(degree: usize, raw: &[f64]) -> Result<Self, FlowError> {
        if degree < 1 {
            return Err(FlowError::InvalidDegree(degree));
        }
        if raw.len() != degree + 5 {
            return Err(FlowError::ParamLength {
                expected: degree + 5,
                actual: raw.len(),
            });
        }
        Ok(Self {
            a_raw: raw[0],
            b: raw[1],
            theta_raw: raw[2..degree + 3].to_vec(),
            alpha_raw: raw[degree + 3],
            beta: raw[degree + 4],
        })
    }
}

/// Constrained parameters; generic so the optimizer can carry tape values.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedFlowParams<R = f64> {
    pub a: R,
    pub b: R,
    pub theta: Vec<R>,
    pub alpha: R,
    pub beta: R,
}

impl ConstrainedFlowParams<f64> {
    /// Open image of `f3 ∘ f2` (before any squash).
    pub fn unsquashed_image(&self) -> (f64, f64) {
        let m = self.theta.len() - 1;
        (
            self.alpha * self.theta[0] + self.beta,
            self.alpha * self.theta[m] + self.beta,
        )
    }
}

/// Maps the flat raw layout (see [`UnconstrainedFlowParams::to_vec`]) to
/// constrained parameters.
pub fn constrain_slice<R: Real>(raw: &[R]) -> ConstrainedFlowParams<R> {
    assert!(raw.len() >= 6, "flow parameter vector too short");
    let n = raw.len();
    let theta_raw = &raw[2..n - 2];
    let mut theta = Vec::with_capacity(theta_raw.len());
    let mut acc = theta_raw[0];
    theta.push(acc);
    for &t in &theta_raw[1..] {
        acc = acc + t.softplus();
        theta.push(acc);
    }
    ConstrainedFlowParams {
        a: raw[0].softplus(),
        b: raw[1],
        theta,
        alpha: raw[n - 2].softplus(),
        beta: raw[n - 1],
    }
}

pub fn constrain(raw: &UnconstrainedFlowParams) -> ConstrainedFlowParams {
    let theta_raw = &raw.theta_raw;
    let mut theta = Vec::with_capacity(theta_raw.len());
    let mut acc = theta_raw[0];
    theta.push(acc);
    for &t in &theta_raw[1..] {
        acc += softplus(t);
        theta.push(acc);
    }
    ConstrainedFlowParams {
        a: softplus(raw.a_raw),
        b: raw.b,
        theta,
        alpha: softplus(raw.alpha_raw),
        beta: raw.beta,
    }
}

/// Starting point whose Bernstein coefficients span `[init_low, init_high]`
/// in equal steps, with `a = alpha = 1` and `b = beta = 0`.
pub fn init_params(cfg: &FlowConfig) -> Result<UnconstrainedFlowParams, FlowError> {
    cfg.validate()?;
    let step = (cfg.init_high - cfg.init_low) / cfg.degree as f64;
    if !(step > 0.0) {
        return Err(FlowError::EmptyInitRange {
            low: cfg.init_low,
            high: cfg.init_high,
        });
    }
    let mut theta_raw = vec![softplus_inv(step); cfg.degree + 1];
    theta_raw[0] = cfg.init_low;
    let one = softplus_inv(1.0);
    Ok(UnconstrainedFlowParams {
        a_raw: one,
        b: 0.0,
        theta_raw,
        alpha_raw: one,
        beta: 0.0,
    })
}

/// Base draws, transformed draws, and their log-densities.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSampleBatch {
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    pub log_q: Vec<f64>,
}

impl FlowSampleBatch {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// A flow configuration with its Bernstein basis precomputed.
#[derive(Debug, Clone)]
pub struct Flow {
    cfg: FlowConfig,
    basis: BernsteinBasis,
}

impl Flow {
    pub fn new(cfg: FlowConfig) -> Result<Self, FlowError> {
        cfg.validate()?;
        Ok(Self {
            basis: BernsteinBasis::new(cfg.degree),
            cfg,
        })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    pub fn basis(&self) -> &BernsteinBasis {
        &self.basis
    }

    /// `(h(z), ln h'(z))` in one pass.
    pub fn transform<R: Real>(&self, lam: &ConstrainedFlowParams<R>, z: f64) -> (R, R) {
        let u = lam.a * z + lam.b;
        let s = u.sigmoid();
        let v = R::bernstein(&self.basis, &lam.theta, s);
        let slope = R::bernstein_slope(&self.basis, &lam.theta, s);
        let w = lam.alpha * v + lam.beta;
        let log_det = lam.a.ln() + u.ln_logistic_slope() + slope.ln() + lam.alpha.ln();
        if self.cfg.squash_output {
            (w.sigmoid(), log_det + w.ln_logistic_slope())
        } else {
            (w, log_det)
        }
    }

    pub fn forward(&self, lam: &ConstrainedFlowParams, z: f64) -> f64 {
        self.transform(lam, z).0
    }

    pub fn log_det_jacobian(&self, lam: &ConstrainedFlowParams, z: f64) -> f64 {
        self.transform(lam, z).1
    }

    /// `(w, ln q(w))` for `w = h(z)`.
    pub fn density<R: Real>(&self, lam: &ConstrainedFlowParams<R>, z: f64) -> (R, R) {
        let (w, log_det) = self.transform(lam, z);
        let log_base = -0.5 * z * z - LN_SQRT_2PI;
        (w, -log_det + log_base)
    }

    /// Open interval the flow maps onto.
    pub fn image(&self, lam: &ConstrainedFlowParams) -> (f64, f64) {
        if self.cfg.squash_output {
            (0.0, 1.0)
        } else {
            lam.unsquashed_image()
        }
    }

    /// Base point `z` with `h(z) = w`, by bisection on `[-40, 40]` then Newton
    /// refinement.
    pub fn invert(&self, lam: &ConstrainedFlowParams, w: f64) -> Result<f64, FlowError> {
        let (low, high) = self.image(lam);
        if !(w > low && w < high) {
            return Err(FlowError::OutOfImage {
                value: w,
                low,
                high,
            });
        }
        let (mut lo, mut hi) = (-INVERT_BRACKET, INVERT_BRACKET);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.forward(lam, mid) < w {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut z = 0.5 * (lo + hi);
        let mut resid = self.forward(lam, z) - w;
        for _ in 0..4 {
            if resid == 0.0 {
                break;
            }
            let slope = self.log_det_jacobian(lam, z).exp();
            let cand = z - resid / slope;
            if !cand.is_finite() {
                break;
            }
            let cand_resid = self.forward(lam, cand) - w;
            if cand_resid.abs() < resid.abs() {
                z = cand;
                resid = cand_resid;
            } else {
                break;
            }
        }
        Ok(z)
    }

    /// `T` i.i.d. standard-normal base draws pushed through the flow.
    pub fn sample_batch<G: Rng + ?Sized>(
        &self,
        lam: &ConstrainedFlowParams,
        t: usize,
        rng: &mut G,
    ) -> FlowSampleBatch {
        let z: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
        let (w, log_q) = z.iter().map(|&zt| self.density(lam, zt)).unzip();
        FlowSampleBatch { z, w, log_q }
    }
}

/// Standard-normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_lam() -> ConstrainedFlowParams {
        ConstrainedFlowParams {
            a: 1.0,
            b: 0.0,
            theta: vec![0.0, 1.0],
            alpha: 1.0,
            beta: 0.0,
        }
    }

    fn linear_flow() -> Flow {
        Flow::new(FlowConfig::new(1, false)).unwrap()
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn constrain_examples() {
        let raw = UnconstrainedFlowParams {
            a_raw: 0.0,
            b: 0.0,
            theta_raw: vec![0.0, 0.0],
            alpha_raw: 0.0,
            beta: 0.0,
        };
        let c = constrain(&raw);
        assert!((c.a - 0.693_147_180_559_945_3).abs() < 1e-15);
        assert_eq!(c.theta[0], 0.0);
        assert!((c.theta[1] - 2f64.ln()).abs() < 1e-15);

        let raw = UnconstrainedFlowParams {
            theta_raw: vec![-1.0, 5.0, 5.0],
            ..raw
        };
        let c = constrain(&raw);
        let sp5 = (1.0 + 5f64.exp()).ln();
        assert!((c.theta[1] - c.theta[0] - sp5).abs() < 1e-12);
        assert!((c.theta[2] - c.theta[1] - sp5).abs() < 1e-12);
        assert!(c.theta[0] < c.theta[1] && c.theta[1] < c.theta[2]);
    }

    #[test]
    fn constrain_slice_agrees_with_struct_form() {
        let raw = UnconstrainedFlowParams {
            a_raw: -0.4,
            b: 0.2,
            theta_raw: vec![-2.0, 0.1, -3.0, 1.0],
            alpha_raw: 1.3,
            beta: -0.5,
        };
        assert_eq!(constrain_slice(&raw.to_vec()), constrain(&raw));
        assert_eq!(
            UnconstrainedFlowParams::from_slice(3, &raw.to_vec()).unwrap(),
            raw
        );
        assert!(UnconstrainedFlowParams::from_slice(4, &raw.to_vec()).is_err());
    }

    #[test]
    fn init_examples() {
        let c = constrain(&init_params(&FlowConfig::new(2, false)).unwrap());
        for (got, want) in c.theta.iter().zip([-3.0, 0.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((c.a - 1.0).abs() < 1e-15 && (c.alpha - 1.0).abs() < 1e-15);
        assert_eq!((c.b, c.beta), (0.0, 0.0));

        let c = constrain(&init_params(&FlowConfig::new(10, false)).unwrap());
        assert!((c.theta[10] - c.theta[0] - 6.0).abs() < 1e-9);

        let flow = Flow::new(FlowConfig::new(30, false)).unwrap();
        let c = constrain(&init_params(flow.config()).unwrap());
        assert_eq!(flow.basis().eval(&c.theta, 0.0), -3.0);
        assert!((flow.basis().eval(&c.theta, 1.0) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn init_rejects_empty_range() {
        let cfg = FlowConfig::new(3, false).with_init_range(1.0, 1.0);
        assert!(matches!(
            init_params(&cfg),
            Err(FlowError::EmptyInitRange { .. })
        ));
        assert!(init_params(&FlowConfig::new(0, false)).is_err());
    }

    #[test]
    fn linear_flow_examples() {
        let flow = linear_flow();
        let lam = linear_lam();
        assert_eq!(flow.forward(&lam, 0.0), 0.5);
        assert!((flow.log_det_jacobian(&lam, 0.0) - 0.25f64.ln()).abs() < 1e-15);
        let (w, log_q) = flow.density(&lam, 0.0);
        assert_eq!(w, 0.5);
        let expected = -LN_SQRT_2PI - 0.25f64.ln();
        assert!((log_q - expected).abs() < 1e-15);
    }

    #[test]
    fn alpha_scaling_shifts_log_det() {
        let flow = Flow::new(FlowConfig::new(3, false)).unwrap();
        let mut lam = ConstrainedFlowParams {
            a: 0.7,
            b: 0.3,
            theta: vec![-1.0, 0.0, 0.5, 2.0],
            alpha: 1.2,
            beta: 0.1,
        };
        let base = flow.log_det_jacobian(&lam, 0.4);
        lam.alpha *= 3.5;
        let scaled = flow.log_det_jacobian(&lam, 0.4);
        assert!((scaled - base - 3.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn initialized_flow_stays_in_support() {
        let flow = Flow::new(FlowConfig::new(10, false)).unwrap();
        let lam = constrain(&init_params(flow.config()).unwrap());
        let delta = 0.01 * lam.alpha;
        for z in [-4.0, 4.0] {
            let w = flow.forward(&lam, z);
            assert!(w >= -3.0 - delta && w <= 3.0 + delta, "w={w}");
        }
    }

    #[test]
    fn invert_round_trip_and_bounds() {
        let flow = Flow::new(FlowConfig::new(5, false)).unwrap();
        let lam = ConstrainedFlowParams {
            a: 1.3,
            b: -0.2,
            theta: vec![-2.0, -1.0, -0.9, 0.5, 1.0, 2.5],
            alpha: 0.8,
            beta: 0.4,
        };
        for z in [-3.0, 0.0, 3.0] {
            let w = flow.forward(&lam, z);
            let back = flow.invert(&lam, w).unwrap();
            assert!((back - z).abs() < 1e-8, "z={z} back={back}");
            assert!((flow.forward(&lam, back) - w).abs() < 1e-10);
        }
        let (_, high) = flow.image(&lam);
        assert!(matches!(
            flow.invert(&lam, high + 0.1),
            Err(FlowError::OutOfImage { .. })
        ));
        assert!(flow.invert(&lam, -0.3).unwrap() < flow.invert(&lam, 0.2).unwrap());
    }

    #[test]
    fn squashed_flow_maps_into_unit_interval() {
        let flow = Flow::new(FlowConfig::new(4, true)).unwrap();
        let lam = constrain(&init_params(flow.config()).unwrap());
        for z in [-6.0, -1.0, 0.0, 2.0, 6.0] {
            let w = flow.forward(&lam, z);
            assert!(w > 0.0 && w < 1.0);
            let back = flow.invert(&lam, w).unwrap();
            assert!((back - z).abs() < 1e-8);
        }
        assert!(flow.invert(&lam, 1.0).is_err());
    }

    #[test]
    fn sample_batch_is_deterministic_and_consistent() {
        let flow = Flow::new(FlowConfig::new(3, false)).unwrap();
        let lam = constrain(&init_params(flow.config()).unwrap());
        let a = flow.sample_batch(&lam, 5, &mut ChaCha8Rng::seed_from_u64(9));
        let b = flow.sample_batch(&lam, 5, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        for t in 0..a.len() {
            let (w, lq) = flow.density(&lam, a.z[t]);
            assert_eq!(w, a.w[t]);
            assert_eq!(lq, a.log_q[t]);
            assert!(lq.exp() > 0.0);
        }
    }
}
