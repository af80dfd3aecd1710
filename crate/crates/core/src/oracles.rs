//! Reference machinery independent of the variational code path: conjugate
//! posteriors, tabulated densities with trapezoid quadrature, a random-walk
//! Metropolis sampler, and shape diagnostics (mode counting, total variation).

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::beta::ln_beta;

use crate::error::OracleError;
use crate::flow::{std_normal_pdf, ConstrainedFlowParams, Flow};
use crate::models::GaussianVariational;
use crate::diff::{logistic, LN_SQRT_2PI};

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "linspace needs at least two points");
    let h = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + i as f64 * h })
        .collect()
}

/// Density values tabulated on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    points: Vec<f64>,
    density: Vec<f64>,
    spacing: f64,
}

impl DensityGrid {
    pub fn new(points: Vec<f64>, density: Vec<f64>) -> Result<Self, OracleError> {
        if points.len() < 2 || points.len() != density.len() {
            return Err(OracleError::InvalidGrid(format!(
                "{} points vs {} densities",
                points.len(),
                density.len()
            )));
        }
        let spacing = (points[points.len() - 1] - points[0]) / (points.len() - 1) as f64;
        if !(spacing > 0.0) {
            return Err(OracleError::InvalidGrid("points must increase".into()));
        }
        let tol = 1e-12 * spacing.max(1.0) * 1e3;
        for pair in points.windows(2) {
            if ((pair[1] - pair[0]) - spacing).abs() > tol {
                return Err(OracleError::InvalidGrid("non-uniform spacing".into()));
            }
        }
        if let Some(d) = density.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
            return Err(OracleError::InvalidGrid(format!("invalid density value {d}")));
        }
        Ok(Self {
            points,
            density,
            spacing,
        })
    }

    pub fn from_fn(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self, OracleError> {
        let points = linspace(lo, hi, n);
        let density = points.iter().map(|&x| f(x)).collect();
        Self::new(points, density)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Trapezoid integral of `f(density)` over the grid.
    pub fn integrate_with(&self, mut f: impl FnMut(usize, f64) -> f64) -> f64 {
        let vals: Vec<f64> = self.density.iter().enumerate().map(|(i, &d)| f(i, d)).collect();
        trapezoid(&vals, self.spacing)
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.density, self.spacing)
    }

    /// Rescaled to unit trapezoid mass.
    pub fn normalized(&self) -> Result<Self, OracleError> {
        let mass = self.integral();
        if !(mass > 0.0) {
            return Err(OracleError::InvalidGrid("zero mass".into()));
        }
        Ok(Self {
            points: self.points.clone(),
            density: self.density.iter().map(|d| d / mass).collect(),
            spacing: self.spacing,
        })
    }

    fn check_same(&self, other: &Self) -> Result<(), OracleError> {
        if self.points.len() != other.points.len() {
            return Err(OracleError::GridMismatch(format!(
                "{} vs {} points",
                self.points.len(),
                other.points.len()
            )));
        }
        let tol = 1e-9 * self.spacing;
        if (self.points[0] - other.points[0]).abs() > tol
            || (self.spacing - other.spacing).abs() > tol
        {
            return Err(OracleError::GridMismatch("different ranges".into()));
        }
        Ok(())
    }

    /// Probability mass in each of `bins` equal-width bins spanning
    /// `[lo, hi]`, from the trapezoid pieces whose midpoints fall in the bin.
    pub fn bin_masses(&self, lo: f64, hi: f64, bins: usize) -> Vec<f64> {
        let mut masses = vec![0.0; bins];
        let width = (hi - lo) / bins as f64;
        for i in 0..self.points.len() - 1 {
            let mid = 0.5 * (self.points[i] + self.points[i + 1]);
            if mid < lo || mid >= hi {
                continue;
            }
            let b = (((mid - lo) / width) as usize).min(bins - 1);
            masses[b] += 0.5 * self.spacing * (self.density[i] + self.density[i + 1]);
        }
        masses
    }

    /// Two-column CSV with header `grid,density`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("grid,density\n");
        for (x, d) in self.points.iter().zip(&self.density) {
            out.push_str(&format!("{x},{d}\n"));
        }
        out
    }
}

fn trapezoid(vals: &[f64], h: f64) -> f64 {
    let n = vals.len();
    if n < 2 {
        return 0.0;
    }
    h * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[n - 1]))
}

/// Conjugate update of a `Beta(alpha, beta)` prior by binary observations.
pub fn conjugate_beta_posterior(alpha: f64, beta: f64, data: &[f64]) -> Result<(f64, f64), OracleError> {
    if let Some(&y) = data.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(OracleError::NonBinary(y));
    }
    let successes: f64 = data.iter().sum();
    Ok((alpha + successes, beta + data.len() as f64 - successes))
}

/// `Beta(alpha, beta)` density; zero outside `(0, 1)`.
pub fn beta_pdf(x: f64, alpha: f64, beta: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    ((alpha - 1.0) * x.ln() + (beta - 1.0) * (-x).ln_1p() - ln_beta(alpha, beta)).exp()
}

/// Closed-form posterior `(mean, sd)` of a normal mean with known noise and a
/// normal prior.
pub fn normal_mean_posterior(prior_mean: f64, prior_sd: f64, noise_sd: f64, data: &[f64]) -> (f64, f64) {
    let prior_prec = 1.0 / (prior_sd * prior_sd);
    let lik_prec = data.len() as f64 / (noise_sd * noise_sd);
    let prec = prior_prec + lik_prec;
    let mean = (prior_prec * prior_mean + data.iter().sum::<f64>() / (noise_sd * noise_sd)) / prec;
    (mean, prec.sqrt().recip())
}

/// `KL(q || p) = ∫ q ln(q / p)` by the trapezoid rule, with `0 ln 0 = 0`.
/// Returns `+inf` when `q > 0` at a point where `p = 0`.
pub fn quadrature_kl(q: &DensityGrid, p: &DensityGrid) -> Result<f64, OracleError> {
    q.check_same(p)?;
    let mut infinite = false;
    let kl = q.integrate_with(|i, qi| {
        let pi = p.density[i];
        if qi <= 0.0 {
            0.0
        } else if pi <= 0.0 {
            infinite = true;
            0.0
        } else {
            qi * (qi / pi).ln()
        }
    });
    Ok(if infinite { f64::INFINITY } else { kl })
}

/// `½ ∫ |p - q|` by the trapezoid rule.
pub fn total_variation(p: &DensityGrid, q: &DensityGrid) -> Result<f64, OracleError> {
    p.check_same(q)?;
    Ok(0.5 * p.integrate_with(|i, pi| (pi - q.density[i]).abs()))
}

/// Half the L1 distance between binned masses of a tabulated density and a
/// sample histogram on the same bins.
pub fn binned_total_variation(
    grid: &DensityGrid,
    samples: &[f64],
    lo: f64,
    hi: f64,
    bins: usize,
) -> f64 {
    let q = grid.bin_masses(lo, hi, bins);
    let p = histogram_masses(samples, lo, hi, bins);
    0.5 * q.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Fraction of `samples` in each equal-width bin on `[lo, hi)`.
pub fn histogram_masses(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    let width = (hi - lo) / bins as f64;
    for &s in samples {
        if s >= lo && s < hi {
            let b = (((s - lo) / width) as usize).min(bins - 1);
            counts[b] += 1.0;
        }
    }
    let n = samples.len().max(1) as f64;
    counts.iter_mut().for_each(|c| *c /= n);
    counts
}

/// Histogram as a density at bin centres.
pub fn histogram_density(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Result<DensityGrid, OracleError> {
    let width = (hi - lo) / bins as f64;
    let centres = (0..bins).map(|b| lo + (b as f64 + 0.5) * width).collect();
    let masses = histogram_masses(samples, lo, hi, bins);
    DensityGrid::new(centres, masses.iter().map(|m| m / width).collect())
}

/// Output of [`metropolis`].
#[derive(Debug, Clone, PartialEq)]
pub struct McmcChain {
    pub samples: Vec<f64>,
    pub acceptance_rate: f64,
    pub burn_in: usize,
    pub thinning: usize,
    pub accepted: usize,
    pub proposed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetropolisConfig {
    pub steps: usize,
    pub proposal_sd: f64,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for MetropolisConfig {
    fn default() -> Self {
        Self {
            steps: 200_000,
            proposal_sd: 1.0,
            burn_in: 20_000,
            thin: 10,
        }
    }
}

/// Random-walk Metropolis with a symmetric normal proposal.
///
/// Keeps every `thin`-th state after `burn_in`; the acceptance rate counts
/// every proposal, burn-in included.
pub fn metropolis<G: Rng + ?Sized>(
    log_post: impl Fn(f64) -> f64,
    init: f64,
    cfg: &MetropolisConfig,
    rng: &mut G,
) -> Result<McmcChain, OracleError> {
    if cfg.steps <= cfg.burn_in {
        return Err(OracleError::Sampler(format!(
            "steps ({}) must exceed burn-in ({})",
            cfg.steps, cfg.burn_in
        )));
    }
    if cfg.thin == 0 || !(cfg.proposal_sd > 0.0) {
        return Err(OracleError::Sampler("thin and proposal sd must be positive".into()));
    }
    let mut x = init;
    let mut lp = log_post(x);
    if !lp.is_finite() {
        return Err(OracleError::Sampler(format!("log posterior at init is {lp}")));
    }
    let mut accepted = 0;
    let mut samples = Vec::with_capacity((cfg.steps - cfg.burn_in) / cfg.thin + 1);
    for step in 0..cfg.steps {
        let eps: f64 = rng.sample(StandardNormal);
        let cand = x + cfg.proposal_sd * eps;
        let lp_cand = log_post(cand);
        let log_ratio = lp_cand - lp;
        let u: f64 = rng.random();
        if log_ratio >= 0.0 || u.ln() < log_ratio {
            x = cand;
            lp = lp_cand;
            accepted += 1;
        }
        if step >= cfg.burn_in && (step - cfg.burn_in).is_multiple_of(cfg.thin) {
            samples.push(x);
        }
    }
    Ok(McmcChain {
        samples,
        acceptance_rate: accepted as f64 / cfg.steps as f64,
        burn_in: cfg.burn_in,
        thinning: cfg.thin,
        accepted,
        proposed: cfg.steps,
    })
}

/// `q(w) = φ(z) / h'(z)` at `z = h⁻¹(w)`; zero outside the flow image.
pub fn flow_density_grid(flow: &Flow, lam: &ConstrainedFlowParams, points: &[f64]) -> Result<DensityGrid, OracleError> {
    let density = points
        .iter()
        .map(|&w| match flow.invert(lam, w) {
            Ok(z) => std_normal_pdf(z) * (-flow.log_det_jacobian(lam, z)).exp(),
            Err(_) => 0.0,
        })
        .collect();
    DensityGrid::new(points.to_vec(), density)
}

/// Density of a Gaussian factor, optionally pushed through the logistic.
pub fn gaussian_density_grid(params: &GaussianVariational, squash: bool, points: &[f64]) -> Result<DensityGrid, OracleError> {
    let (mean, sd) = (params.mean(), params.sd());
    let normal = |u: f64| {
        let s = (u - mean) / sd;
        (-0.5 * s * s - LN_SQRT_2PI).exp() / sd
    };
    let density = points
        .iter()
        .map(|&w| {
            if !squash {
                normal(w)
            } else if w > 0.0 && w < 1.0 {
                let u = (w / (1.0 - w)).ln();
                let s = logistic(u);
                normal(u) / (s * (1.0 - s))
            } else {
                0.0
            }
        })
        .collect();
    DensityGrid::new(points.to_vec(), density)
}

/// Interior local maxima whose topographic prominence exceeds
/// `min_prominence` times the global maximum.
///
/// A peak's prominence is its height above the higher of the two lowest
/// points reached when walking left and right until terrain higher than the
/// peak (or the grid edge). Flat plateaus count once, at their centre.
pub fn count_modes(grid: &DensityGrid, min_prominence: f64) -> Vec<f64> {
    let d = &grid.density;
    let n = d.len();
    let top = d.iter().cloned().fold(0.0, f64::max);
    if n < 3 || top <= 0.0 {
        return Vec::new();
    }
    let threshold = min_prominence * top;
    let mut modes = Vec::new();
    let mut i = 1;
    while i < n - 1 {
        if d[i] > d[i - 1] {
            // extend across a plateau
            let mut j = i;
            while j + 1 < n && d[j + 1] == d[i] {
                j += 1;
            }
            if j + 1 < n && d[j + 1] < d[i] {
                let peak = d[i];
                let mut left_min = peak;
                for k in (0..i).rev() {
                    if d[k] > peak {
                        break;
                    }
                    left_min = left_min.min(d[k]);
                }
                let mut right_min = peak;
                for &v in &d[j + 1..] {
                    if v > peak {
                        break;
                    }
                    right_min = right_min.min(v);
                }
                if peak - left_min.max(right_min) > threshold {
                    modes.push(grid.points[(i + j) / 2]);
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    modes
}
