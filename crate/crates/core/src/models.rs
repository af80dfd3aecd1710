//! Priors and likelihoods for the Bernoulli, Cauchy-location and MLP
//! regression experiments, a conjugate-normal toy, and the Gaussian
//! variational family used as the baseline.
//!
//! Everything is generic over [`Real`] so the same code serves plain
//! evaluation and taped gradients.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::diff::{softplus, Real, LN_SQRT_2PI};
use crate::error::ModelError;
use crate::flow::FlowSampleBatch;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    /// Covariates; empty for unconditional models.
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self, ModelError> {
        if !inputs.is_empty() && inputs.len() != targets.len() {
            return Err(ModelError::DatasetShape {
                inputs: inputs.len(),
                targets: targets.len(),
            });
        }
        Ok(Self { inputs, targets })
    }

    pub fn unconditional(targets: Vec<f64>) -> Self {
        Self {
            inputs: Vec::new(),
            targets,
        }
    }

    pub fn n(&self) -> usize {
        self.targets.len()
    }
}

/// A Bayesian model with a fixed-length parameter vector.
pub trait LikelihoodModel {
    fn param_count(&self) -> usize;

    /// `ln p(D | params)`.
    fn log_likelihood<R: Real>(&self, params: &[R], data: &Dataset) -> Result<R, ModelError>;

    /// Prior log-density of parameter `index` alone; priors factorize.
    fn log_prior_factor<R: Real>(&self, index: usize, w: R) -> Result<R, ModelError>;

    /// `ln p(params)`.
    fn log_prior<R: Real>(&self, params: &[R]) -> Result<R, ModelError> {
        self.check_len(params)?;
        let mut acc = self.log_prior_factor(0, params[0])?;
        for (j, &w) in params.iter().enumerate().skip(1) {
            acc = acc + self.log_prior_factor(j, w)?;
        }
        Ok(acc)
    }

    fn check_len<R>(&self, params: &[R]) -> Result<(), ModelError> {
        if params.len() != self.param_count() {
            return Err(ModelError::ParamLength {
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        Ok(())
    }
}

fn check_probability(pi: f64) -> Result<(), ModelError> {
    if pi > 0.0 && pi < 1.0 {
        Ok(())
    } else {
        Err(ModelError::Domain {
            what: "pi",
            value: pi,
        })
    }
}

/// `sum_i y_i ln(pi) + (1 - y_i) ln(1 - pi)`.
pub fn bernoulli_log_lik<R: Real>(pi: R, data: &Dataset) -> Result<R, ModelError> {
    check_probability(pi.value())?;
    let ones: f64 = data.targets.iter().sum();
    let zeros = data.n() as f64 - ones;
    Ok(pi.ln() * ones + (-pi + 1.0).ln() * zeros)
}

/// Log-density of `Beta(alpha, beta)` at `pi`.
pub fn beta_log_prior<R: Real>(pi: R, alpha: f64, beta: f64) -> Result<R, ModelError> {
    check_probability(pi.value())?;
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(ModelError::Invalid(format!(
            "Beta shape parameters must be positive, got ({alpha}, {beta})"
        )));
    }
    Ok(pi.ln() * (alpha - 1.0) + (-pi + 1.0).ln() * (beta - 1.0) - ln_beta(alpha, beta))
}

/// `y ~ Bernoulli(pi)` with a `Beta(prior_alpha, prior_beta)` prior on `pi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BernoulliModel {
    pub prior_alpha: f64,
    pub prior_beta: f64,
}

impl Default for BernoulliModel {
    fn default() -> Self {
        Self {
            prior_alpha: 1.1,
            prior_beta: 1.1,
        }
    }
}

impl LikelihoodModel for BernoulliModel {
    fn param_count(&self) -> usize {
        1
    }

    fn log_likelihood<R: Real>(&self, params: &[R], data: &Dataset) -> Result<R, ModelError> {
        self.check_len(params)?;
        bernoulli_log_lik(params[0], data)
    }

    fn log_prior_factor<R: Real>(&self, _index: usize, w: R) -> Result<R, ModelError> {
        beta_log_prior(w, self.prior_alpha, self.prior_beta)
    }
}

/// `y ~ Cauchy(xi, gamma)` with fixed `gamma` and a normal prior on `xi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CauchyLocationModel {
    pub gamma: f64,
    pub prior_mean: f64,
    pub prior_sd: f64,
}

impl Default for CauchyLocationModel {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            prior_mean: 0.0,
            prior_sd: 10.0,
        }
    }
}

impl CauchyLocationModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.gamma > 0.0 && self.prior_sd > 0.0) {
            return Err(ModelError::Invalid(format!(
                "Cauchy scale and prior sd must be positive, got gamma={} sd={}",
                self.gamma, self.prior_sd
            )));
        }
        Ok(())
    }
}

/// `sum_i ln(gamma) - ln(pi) - ln(gamma^2 + (y_i - xi)^2)`.
pub fn cauchy_log_lik<R: Real>(
    xi: R,
    model: &CauchyLocationModel,
    data: &Dataset,
) -> Result<R, ModelError> {
    model.validate()?;
    let g2 = model.gamma * model.gamma;
    let constant = data.n() as f64 * (model.gamma.ln() - PI.ln());
    let mut acc = xi.lift(constant);
    for &y in &data.targets {
        acc = acc - ((xi - y).square() + g2).ln();
    }
    Ok(acc)
}

impl LikelihoodModel for CauchyLocationModel {
    fn param_count(&self) -> usize {
        1
    }

    fn log_likelihood<R: Real>(&self, params: &[R], data: &Dataset) -> Result<R, ModelError> {
        self.check_len(params)?;
        cauchy_log_lik(params[0], self, data)
    }

    fn log_prior_factor<R: Real>(&self, _index: usize, w: R) -> Result<R, ModelError> {
        self.validate()?;
        Ok(((w - self.prior_mean) / self.prior_sd).std_normal_ln_pdf() - self.prior_sd.ln())
    }
}

/// `sum_j ln φ(w_j / sd) - |w| ln(sd)`.
pub fn normal_log_prior<R: Real>(w: &[R], sd: f64) -> Result<R, ModelError> {
    if !(sd > 0.0) {
        return Err(ModelError::Invalid(format!("prior sd must be positive, got {sd}")));
    }
    let first = w.first().ok_or_else(|| ModelError::Invalid("empty weight vector".into()))?;
    let mut acc = first.lift(-(w.len() as f64) * sd.ln());
    for &wj in w {
        acc = acc + (wj / sd).std_normal_ln_pdf();
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Softplus,
}

impl Activation {
    fn apply<R: Real>(self, x: R) -> R {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Softplus => x.softplus(),
        }
    }
}

/// Fully connected regression net with Gaussian noise: `y ~ N(mu(x), noise_sd)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRegressionModel {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub noise_sd: f64,
    pub prior_sd: f64,
}

impl MlpRegressionModel {
    pub fn new(layer_sizes: Vec<usize>, noise_sd: f64) -> Result<Self, ModelError> {
        let model = Self {
            layer_sizes,
            activation: Activation::Tanh,
            noise_sd,
            prior_sd: 1.0,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let sizes = &self.layer_sizes;
        if sizes.len() < 2 || sizes[0] != 1 || sizes[sizes.len() - 1] != 1 {
            return Err(ModelError::Invalid(format!(
                "layer sizes must start and end with 1, got {sizes:?}"
            )));
        }
        if sizes.contains(&0) {
            return Err(ModelError::Invalid("empty layer".into()));
        }
        if !(self.noise_sd > 0.0 && self.prior_sd > 0.0) {
            return Err(ModelError::Invalid("noise and prior sd must be positive".into()));
        }
        Ok(())
    }

    /// `sum_l (fan_in + 1) * fan_out`.
    pub fn weight_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }
}

/// Conditional mean `mu(x)`.
///
/// Weights are read layer by layer: the `fan_in x fan_out` kernel in
/// row-major order (row = input unit), then the `fan_out` biases. Hidden
/// layers apply the activation; the output layer is linear.
pub fn mlp_forward<R: Real>(
    weights: &[R],
    model: &MlpRegressionModel,
    x: f64,
) -> Result<R, ModelError> {
    if weights.len() != model.weight_count() {
        return Err(ModelError::ParamLength {
            expected: model.weight_count(),
            actual: weights.len(),
        });
    }
    let n_layers = model.layer_sizes.len() - 1;
    let mut offset = 0;

    // first layer takes the scalar input directly
    let fan_out = model.layer_sizes[1];
    let kernel = &weights[offset..offset + fan_out];
    let bias = &weights[offset + fan_out..offset + 2 * fan_out];
    offset += 2 * fan_out;
    let mut act: Vec<R> = kernel
        .iter()
        .zip(bias)
        .map(|(&k, &b)| k * x + b)
        .collect();
    if n_layers > 1 {
        act = act.into_iter().map(|h| model.activation.apply(h)).collect();
    }

    for layer in 1..n_layers {
        let fan_in = model.layer_sizes[layer];
        let fan_out = model.layer_sizes[layer + 1];
        let kernel = &weights[offset..offset + fan_in * fan_out];
        let bias = &weights[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
        offset += (fan_in + 1) * fan_out;
        let mut next = Vec::with_capacity(fan_out);
        for (j, &b) in bias.iter().enumerate() {
            let mut h = b;
            for (i, &a) in act.iter().enumerate() {
                h = h + a * kernel[i * fan_out + j];
            }
            next.push(if layer + 1 < n_layers {
                model.activation.apply(h)
            } else {
                h
            });
        }
        act = next;
    }
    debug_assert_eq!(offset, weights.len());
    Ok(act[0])
}

/// `sum_i -ln(2 pi sigma^2)/2 - (y_i - mu(x_i))^2 / (2 sigma^2)`.
pub fn gaussian_log_lik<R: Real>(
    weights: &[R],
    model: &MlpRegressionModel,
    data: &Dataset,
) -> Result<R, ModelError> {
    if data.inputs.len() != data.n() {
        return Err(ModelError::DatasetShape {
            inputs: data.inputs.len(),
            targets: data.n(),
        });
    }
    let sigma = model.noise_sd;
    let per_point = -LN_SQRT_2PI - sigma.ln();
    let scale = -0.5 / (sigma * sigma);
    let mut acc: Option<R> = None;
    for (&x, &y) in data.inputs.iter().zip(&data.targets) {
        let term = (mlp_forward(weights, model, x)? - y).square() * scale + per_point;
        acc = Some(match acc {
            Some(a) => a + term,
            None => term,
        });
    }
    acc.ok_or_else(|| ModelError::Invalid("empty dataset".into()))
}

impl LikelihoodModel for MlpRegressionModel {
    fn param_count(&self) -> usize {
        self.weight_count()
    }

    fn log_likelihood<R: Real>(&self, params: &[R], data: &Dataset) -> Result<R, ModelError> {
        gaussian_log_lik(params, self, data)
    }

    fn log_prior_factor<R: Real>(&self, _index: usize, w: R) -> Result<R, ModelError> {
        normal_log_prior(&[w], self.prior_sd)
    }
}

/// `y_i ~ N(mu, noise_sd)` with `mu ~ N(prior_mean, prior_sd)`; the posterior
/// is normal in closed form, which makes it a sanity target for the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalMeanModel {
    pub noise_sd: f64,
    pub prior_mean: f64,
    pub prior_sd: f64,
}

impl LikelihoodModel for NormalMeanModel {
    fn param_count(&self) -> usize {
        1
    }

    fn log_likelihood<R: Real>(&self, params: &[R], data: &Dataset) -> Result<R, ModelError> {
        self.check_len(params)?;
        let mu = params[0];
        let mut acc = mu.lift(-(data.n() as f64) * self.noise_sd.ln());
        for &y in &data.targets {
            acc = acc + ((mu - y) / self.noise_sd).std_normal_ln_pdf();
        }
        Ok(acc)
    }

    fn log_prior_factor<R: Real>(&self, _index: usize, w: R) -> Result<R, ModelError> {
        Ok(((w - self.prior_mean) / self.prior_sd).std_normal_ln_pdf() - self.prior_sd.ln())
    }
}

/// Normal variational density with `sd = softplus(sd_raw)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianVariational {
    pub mean_raw: f64,
    pub sd_raw: f64,
}

impl GaussianVariational {
    pub fn mean(&self) -> f64 {
        self.mean_raw
    }

    pub fn sd(&self) -> f64 {
        softplus(self.sd_raw)
    }

    /// `(w, ln q(w))` for `w = mean + sd * z`.
    pub fn transform<R: Real>(mean: R, sd_raw: R, z: f64) -> (R, R) {
        let sd = sd_raw.softplus();
        let w = mean + sd * z;
        let log_q = -sd.ln() - (0.5 * z * z + LN_SQRT_2PI);
        (w, log_q)
    }

    pub fn sample_and_logq<G: Rng + ?Sized>(&self, t: usize, rng: &mut G) -> FlowSampleBatch {
        let z: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
        let (w, log_q) = z
            .iter()
            .map(|&zt| Self::transform(self.mean_raw, self.sd_raw, zt))
            .unzip();
        FlowSampleBatch { z, w, log_q }
    }
}
