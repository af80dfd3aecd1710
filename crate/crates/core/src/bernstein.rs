//! Bernstein polynomial basis on `[0, 1]`.
//!
//! A degree-`M` polynomial with coefficients `theta_0..theta_M` is
//!
//! ```text
//! f(z) = sum_i Be_i(z) * theta_i / (M + 1),   Be_i = Beta(i + 1, M - i + 1) density
//!      = sum_i C(M, i) z^i (1 - z)^(M - i) * theta_i
//! ```
//!
//! The second line is what gets evaluated. It is increasing in `z` whenever
//! the coefficients are increasing, and it interpolates the outer
//! coefficients: `f(0) = theta_0`, `f(1) = theta_M`.

use statrs::function::gamma::ln_gamma;

use crate::error::FlowError;

/// Degrees above this use log-gamma binomials; below, exact integer products.
const EXACT_BINOMIAL_MAX_DEGREE: usize = 25;

/// Binomial coefficients `C(n, 0..=n)` as `f64`.
fn binomial_row(n: usize) -> Vec<f64> {
    if n <= EXACT_BINOMIAL_MAX_DEGREE {
        let mut row = Vec::with_capacity(n + 1);
        let mut c: u64 = 1;
        for k in 0..=n {
            row.push(c as f64);
            // C(n, k+1) = C(n, k) * (n - k) / (k + 1), exact in u64 for n <= 25
            c = c * (n - k) as u64 / (k + 1) as u64;
        }
        row
    } else {
        let ln_n = ln_gamma(n as f64 + 1.0);
        (0..=n)
            .map(|k| {
                if k == 0 || k == n {
                    1.0
                } else {
                    (ln_n - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)).exp()
                }
            })
            .collect()
    }
}

/// Fills `out[i] = C(n, i) z^i (1 - z)^(n - i)` using a precomputed binomial row.
fn basis_into(binom: &[f64], z: f64, out: &mut [f64]) {
    let n = binom.len() - 1;
    debug_assert_eq!(out.len(), n + 1);
    let y = 1.0 - z;
    // out[i] <- z^i, then multiply by (1-z)^(n-i) from the right
    let mut p = 1.0;
    for o in out.iter_mut() {
        *o = p;
        p *= z;
    }
    let mut q = 1.0;
    for (o, c) in out.iter_mut().zip(binom).rev() {
        *o *= q * c;
        q *= y;
    }
}

/// Precomputed binomial rows for one polynomial degree and its two lower
/// degrees (needed for first and second derivatives).
#[derive(Debug, Clone, PartialEq)]
pub struct BernsteinBasis {
    degree: usize,
    binom: Vec<f64>,
    binom_d1: Vec<f64>,
    binom_d2: Vec<f64>,
}

impl BernsteinBasis {
    pub fn new(degree: usize) -> Self {
        assert!(degree >= 1, "Bernstein degree must be at least 1");
        Self {
            degree,
            binom: binomial_row(degree),
            binom_d1: binomial_row(degree - 1),
            binom_d2: if degree >= 2 { binomial_row(degree - 2) } else { Vec::new() },
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of coefficients, `M + 1`.
    pub fn len(&self) -> usize {
        self.degree + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Basis weights `C(M, i) z^i (1-z)^(M-i)`, one per coefficient.
    pub fn weights(&self, z: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.degree + 1];
        basis_into(&self.binom, z, &mut out);
        out
    }

    /// Weights of the degree `M - 1` basis.
    pub fn weights_lower(&self, z: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.degree];
        basis_into(&self.binom_d1, z, &mut out);
        out
    }

    fn weights_lower2(&self, z: f64) -> Vec<f64> {
        if self.degree < 2 {
            return Vec::new();
        }
        let mut out = vec![0.0; self.degree - 1];
        basis_into(&self.binom_d2, z, &mut out);
        out
    }

    /// `f(z)`; exact at the endpoints.
    pub fn eval(&self, theta: &[f64], z: f64) -> f64 {
        debug_assert_eq!(theta.len(), self.len());
        self.weights(z).iter().zip(theta).map(|(b, t)| b * t).sum()
    }

    /// `f'(z) = M * sum_i C(M-1, i) z^i (1-z)^(M-1-i) (theta_{i+1} - theta_i)`.
    ///
    /// Equivalently the sum of Beta(i+1, M-i) densities weighted by the
    /// coefficient increments.
    pub fn slope(&self, theta: &[f64], z: f64) -> f64 {
        debug_assert_eq!(theta.len(), self.len());
        let m = self.degree as f64;
        let w = self.weights_lower(z);
        m * w
            .iter()
            .zip(theta.windows(2))
            .map(|(b, t)| b * (t[1] - t[0]))
            .sum::<f64>()
    }

    /// `f''(z)`, zero for degree 1.
    pub fn curvature(&self, theta: &[f64], z: f64) -> f64 {
        if self.degree < 2 {
            return 0.0;
        }
        let m = self.degree as f64;
        let w = self.weights_lower2(z);
        m * (m - 1.0)
            * w.iter()
                .zip(theta.windows(3))
                .map(|(b, t)| b * (t[2] - 2.0 * t[1] + t[0]))
                .sum::<f64>()
    }

    /// Gradient of `slope(theta, z)` with respect to `theta`.
    pub fn slope_theta_gradient(&self, z: f64) -> Vec<f64> {
        let m = self.degree as f64;
        let w = self.weights_lower(z);
        (0..=self.degree)
            .map(|j| {
                let left = if j >= 1 { w[j - 1] } else { 0.0 };
                let right = if j < self.degree { w[j] } else { 0.0 };
                m * (left - right)
            })
            .collect()
    }
}

/// Evaluates the polynomial after checking the argument lies in `[0, 1]`.
pub fn bernstein_eval(theta: &[f64], zp: f64) -> Result<f64, FlowError> {
    if !(0.0..=1.0).contains(&zp) {
        return Err(FlowError::Domain { value: zp });
    }
    if theta.len() < 2 {
        return Err(FlowError::InvalidDegree(0));
    }
    let basis = BernsteinBasis::new(theta.len() - 1);
    Ok(basis.eval(theta, zp))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_rows_match_pascal() {
        for n in 1..=40 {
            let row = binomial_row(n);
            let prev = binomial_row(n - 1);
            for k in 1..n {
                let expected = prev[k - 1] + prev[k];
                assert!((row[k] - expected).abs() <= 1e-12 * expected, "n={n} k={k}");
            }
            assert_eq!(row[0], 1.0);
            assert_eq!(row[n], 1.0);
        }
    }

    #[test]
    fn endpoints_are_exact() {
        let theta = [-1.3, -0.2, 0.7, 2.9, 3.1];
        let b = BernsteinBasis::new(4);
        assert_eq!(b.eval(&theta, 0.0), -1.3);
        assert_eq!(b.eval(&theta, 1.0), 3.1);
        let theta30: Vec<f64> = (0..31).map(|i| -3.0 + 0.2 * i as f64).collect();
        assert_eq!(bernstein_eval(&theta30, 0.0).unwrap(), theta30[0]);
        assert_eq!(bernstein_eval(&theta30, 1.0).unwrap(), theta30[30]);
    }

    #[test]
    fn degree_one_is_linear() {
        assert_eq!(bernstein_eval(&[0.0, 1.0], 0.5).unwrap(), 0.5);
        let b = BernsteinBasis::new(1);
        assert_eq!(b.slope(&[0.0, 1.0], 0.3), 1.0);
        assert_eq!(b.curvature(&[0.0, 1.0], 0.3), 0.0);
    }

    #[test]
    fn out_of_domain_is_rejected() {
        assert!(matches!(
            bernstein_eval(&[0.0, 1.0], 1.5),
            Err(FlowError::Domain { .. })
        ));
        assert!(bernstein_eval(&[0.0, 1.0], -1e-9).is_err());
    }

    #[test]
    fn slope_and_curvature_match_finite_differences() {
        let theta = [-2.0, -1.5, -1.4, 0.3, 0.35, 2.2, 2.9];
        let b = BernsteinBasis::new(6);
        let h = 1e-6;
        for &z in &[0.1, 0.37, 0.5, 0.81] {
            let fd = (b.eval(&theta, z + h) - b.eval(&theta, z - h)) / (2.0 * h);
            assert!((b.slope(&theta, z) - fd).abs() < 1e-7);
            let fd2 = (b.slope(&theta, z + h) - b.slope(&theta, z - h)) / (2.0 * h);
            assert!((b.curvature(&theta, z) - fd2).abs() < 1e-6);
        }
    }

    #[test]
    fn slope_gradient_matches_perturbation() {
        let theta = vec![0.0, 0.4, 1.0, 1.1];
        let b = BernsteinBasis::new(3);
        let g = b.slope_theta_gradient(0.42);
        for j in 0..theta.len() {
            let mut t = theta.clone();
            t[j] += 1.0;
            let diff = b.slope(&t, 0.42) - b.slope(&theta, 0.42);
            assert!((diff - g[j]).abs() < 1e-12);
        }
    }
}
