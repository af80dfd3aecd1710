//! Monte-Carlo ELBO, Adam, training loop, and posterior-predictive sampling
//! for mean-field posteriors.
//!
//! Each step draws fresh base samples `z`, pushes them through every factor
//! of the posterior, and uses the *same* transformed draws for both the
//! expected log-likelihood and the sampled KL to the prior:
//!
//! ```text
//! ELBO ≈ (1/T) sum_t ln p(D | w_t)  -  (1/T) sum_t [ln q(w_t) - ln p(w_t)]
//! ```
//!
//! Gradients are pathwise: `z` is held fixed and the tape differentiates
//! through `w_t = h(z_t)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diff::{softplus_inv, GradientResult, Objective, Real, Tape};
use crate::error::{ModelError, ViError};
use crate::flow::{constrain_slice, init_params, Flow, FlowConfig, FlowSampleBatch, UnconstrainedFlowParams};
use crate::models::{mlp_forward, Dataset, GaussianVariational, LikelihoodModel, MlpRegressionModel};

/// One factor of a mean-field posterior.
#[derive(Debug, Clone)]
pub enum Factor {
    Transformation {
        flow: Flow,
        params: UnconstrainedFlowParams,
    },
    Gaussian {
        params: GaussianVariational,
        /// Pipe draws through a final sigmoid, as for the transformation flow.
        squash: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Tm,
    Gaussian,
}

impl Factor {
    pub fn family(&self) -> Family {
        match self {
            Factor::Transformation { .. } => Family::Tm,
            Factor::Gaussian { .. } => Family::Gaussian,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Factor::Transformation { params, .. } => params.len(),
            Factor::Gaussian { .. } => 2,
        }
    }

    fn raw(&self) -> Vec<f64> {
        match self {
            Factor::Transformation { params, .. } => params.to_vec(),
            Factor::Gaussian { params, .. } => vec![params.mean_raw, params.sd_raw],
        }
    }

    fn set_raw(&mut self, raw: &[f64]) {
        match self {
            Factor::Transformation { flow, params } => {
                *params = UnconstrainedFlowParams::from_slice(flow.config().degree, raw)
                    .expect("factor layout is fixed at construction");
            }
            Factor::Gaussian { params, .. } => {
                params.mean_raw = raw[0];
                params.sd_raw = raw[1];
            }
        }
    }

    /// Transformed draws and their log-densities for the given base draws.
    fn samples<R: Real>(&self, raw: &[R], z: &[f64]) -> FactorSamples<R> {
        let mut w = Vec::with_capacity(z.len());
        let mut log_q = Vec::with_capacity(z.len());
        match self {
            Factor::Transformation { flow, .. } => {
                let lam = constrain_slice(raw);
                for &zt in z {
                    let (wt, lq) = flow.density(&lam, zt);
                    w.push(wt);
                    log_q.push(lq);
                }
            }
            Factor::Gaussian { squash, .. } => {
                for &zt in z {
                    let (wt, lq) = GaussianVariational::transform(raw[0], raw[1], zt);
                    if *squash {
                        w.push(wt.sigmoid());
                        log_q.push(lq - wt.ln_logistic_slope());
                    } else {
                        w.push(wt);
                        log_q.push(lq);
                    }
                }
            }
        }
        FactorSamples { w, log_q }
    }
}

/// Draws of one parameter together with `ln q` at each draw.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSamples<R> {
    pub w: Vec<R>,
    pub log_q: Vec<R>,
}

impl From<FlowSampleBatch> for FactorSamples<f64> {
    fn from(batch: FlowSampleBatch) -> Self {
        Self {
            w: batch.w,
            log_q: batch.log_q,
        }
    }
}

/// Independent variational factors, one per model parameter, all of one family.
#[derive(Debug, Clone)]
pub struct MeanFieldPosterior {
    factors: Vec<Factor>,
}

impl MeanFieldPosterior {
    pub fn new(factors: Vec<Factor>) -> Result<Self, ViError> {
        let first = factors
            .first()
            .ok_or_else(|| ViError::Config("posterior needs at least one factor".into()))?
            .family();
        if factors.iter().any(|f| f.family() != first) {
            return Err(ViError::Config("mixed variational families".into()));
        }
        Ok(Self { factors })
    }

    /// `count` transformation flows, each at its initialization.
    pub fn transformation(count: usize, cfg: FlowConfig) -> Result<Self, ViError> {
        let flow = Flow::new(cfg)?;
        let params = init_params(&cfg)?;
        Self::new(
            (0..count)
                .map(|_| Factor::Transformation {
                    flow: flow.clone(),
                    params: params.clone(),
                })
                .collect(),
        )
    }

    /// `count` Gaussians with the given initial mean and standard deviation.
    pub fn gaussian(count: usize, mean: f64, sd: f64, squash: bool) -> Result<Self, ViError> {
        if !(sd > 0.0) {
            return Err(ViError::Config(format!("initial sd must be positive, got {sd}")));
        }
        let params = GaussianVariational {
            mean_raw: mean,
            sd_raw: softplus_inv(sd),
        };
        Self::new(
            (0..count)
                .map(|_| Factor::Gaussian { params, squash })
                .collect(),
        )
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn family(&self) -> Family {
        self.factors[0].family()
    }

    /// Total number of unconstrained variational parameters.
    pub fn param_count(&self) -> usize {
        self.factors.iter().map(Factor::param_count).sum()
    }

    /// Concatenated unconstrained parameters, factor by factor.
    pub fn flat_params(&self) -> Vec<f64> {
        self.factors.iter().flat_map(Factor::raw).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut offset = 0;
        for f in &mut self.factors {
            let n = f.param_count();
            f.set_raw(&flat[offset..offset + n]);
            offset += n;
        }
    }

    /// Index of the factor owning flat parameter `i`.
    pub fn factor_of(&self, i: usize) -> Option<usize> {
        let mut offset = 0;
        for (j, f) in self.factors.iter().enumerate() {
            offset += f.param_count();
            if i < offset {
                return Some(j);
            }
        }
        None
    }

    /// `T` standard-normal base draws per factor, factor-major.
    pub fn draw_base<G: Rng + ?Sized>(&self, t: usize, rng: &mut G) -> Vec<Vec<f64>> {
        self.factors
            .iter()
            .map(|_| (0..t).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    /// Pushes base draws through every factor using the flat parameters `raw`.
    pub fn factor_samples<R: Real>(&self, raw: &[R], z: &[Vec<f64>]) -> Vec<FactorSamples<R>> {
        assert_eq!(raw.len(), self.param_count());
        assert_eq!(z.len(), self.len());
        let mut offset = 0;
        self.factors
            .iter()
            .zip(z)
            .map(|(f, zj)| {
                let n = f.param_count();
                let s = f.samples(&raw[offset..offset + n], zj);
                offset += n;
                s
            })
            .collect()
    }

    /// Samples at the current parameters.
    pub fn sample<G: Rng + ?Sized>(&self, t: usize, rng: &mut G) -> Vec<FactorSamples<f64>> {
        let z = self.draw_base(t, rng);
        self.factor_samples(&self.flat_params(), &z)
    }
}

fn sample_count<R>(samples: &[FactorSamples<R>]) -> Result<usize, ModelError> {
    let t = samples
        .first()
        .map(|s| s.w.len())
        .ok_or_else(|| ModelError::Invalid("no factors".into()))?;
    if t == 0 || samples.iter().any(|s| s.w.len() != t || s.log_q.len() != t) {
        return Err(ModelError::Invalid("factors carry unequal sample counts".into()));
    }
    Ok(t)
}

/// `(1/T) sum_t ln p(D | w_t)` where `w_t` takes the `t`-th draw of every factor.
pub fn expected_log_lik<R: Real, M: LikelihoodModel>(
    model: &M,
    data: &Dataset,
    samples: &[FactorSamples<R>],
) -> Result<R, ModelError> {
    let t = sample_count(samples)?;
    let mut joint: Vec<R> = Vec::with_capacity(samples.len());
    let mut acc: Option<R> = None;
    for ti in 0..t {
        joint.clear();
        joint.extend(samples.iter().map(|s| s.w[ti]));
        let ll = model.log_likelihood(&joint, data)?;
        acc = Some(match acc {
            Some(a) => a + ll,
            None => ll,
        });
    }
    Ok(acc.expect("t >= 1") / t as f64)
}

/// Per-parameter sampled KL, `(1/T) sum_t [ln q_j(w_jt) - ln p_j(w_jt)]`.
pub fn kl_per_parameter<R: Real, M: LikelihoodModel>(
    model: &M,
    samples: &[FactorSamples<R>],
) -> Result<Vec<R>, ModelError> {
    let t = sample_count(samples)?;
    samples
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let mut acc = s.log_q[0] - model.log_prior_factor(j, s.w[0])?;
            for ti in 1..t {
                acc = acc + (s.log_q[ti] - model.log_prior_factor(j, s.w[ti])?);
            }
            Ok(acc / t as f64)
        })
        .collect()
}

/// Sampled KL of the mean-field posterior to the prior: the sum of the
/// per-parameter estimates. May be negative for finite `T`.
pub fn kl_sample_estimate<R: Real, M: LikelihoodModel>(
    model: &M,
    samples: &[FactorSamples<R>],
) -> Result<R, ModelError> {
    let per = kl_per_parameter(model, samples)?;
    let mut it = per.into_iter();
    let first = it.next().expect("at least one factor");
    Ok(it.fold(first, |a, b| a + b))
}

/// Expected log-likelihood and KL estimated from one shared set of draws.
#[derive(Debug, Clone, Copy)]
pub struct ElboTerms<R> {
    pub expected_log_lik: R,
    pub kl: R,
}

impl<R: Real> ElboTerms<R> {
    pub fn elbo(&self) -> R {
        self.expected_log_lik - self.kl
    }
}

pub fn elbo_terms<R: Real, M: LikelihoodModel>(
    model: &M,
    data: &Dataset,
    samples: &[FactorSamples<R>],
) -> Result<ElboTerms<R>, ModelError> {
    Ok(ElboTerms {
        expected_log_lik: expected_log_lik(model, data, samples)?,
        kl: kl_sample_estimate(model, samples)?,
    })
}

/// Negative ELBO as a function of the flat variational parameters, with the
/// base draws frozen. Model domain errors evaluate to NaN.
pub struct FixedDrawElbo<'a, M> {
    pub posterior: &'a MeanFieldPosterior,
    pub model: &'a M,
    pub data: &'a Dataset,
    pub base: Vec<Vec<f64>>,
}

impl<M: LikelihoodModel> Objective for FixedDrawElbo<'_, M> {
    fn eval<R: Real>(&self, x: &[R]) -> R {
        let samples = self.posterior.factor_samples(x, &self.base);
        match elbo_terms(self.model, self.data, &samples) {
            Ok(terms) => -terms.elbo(),
            Err(_) => x[0].lift(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Monte-Carlo draws per factor per step.
    pub samples: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            samples: 50,
            steps: 3000,
            learning_rate: 0.01,
            seed: 1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ViError> {
        if self.samples < 1 {
            return Err(ViError::Config("samples must be at least 1".into()));
        }
        if self.steps < 1 {
            return Err(ViError::Config("steps must be at least 1".into()));
        }
        // lr = 0 is allowed: it freezes the posterior
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(ViError::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || !(self.adam_eps > 0.0)
        {
            return Err(ViError::Config("invalid Adam constants".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboRecord {
    pub step: usize,
    pub elbo: f64,
    pub expected_log_lik: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ElboTrace {
    pub records: Vec<ElboRecord>,
}

impl ElboTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Trailing moving average of the ELBO; entry `i` averages steps
    /// `max(0, i + 1 - window)..=i`.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        let window = window.max(1);
        let mut out = Vec::with_capacity(self.records.len());
        let mut sum = 0.0;
        for (i, r) in self.records.iter().enumerate() {
            sum += r.elbo;
            if i >= window {
                sum -= self.records[i - window].elbo;
            }
            out.push(sum / (i + 1).min(window) as f64);
        }
        out
    }

    /// Mean ELBO over the last `window` steps.
    pub fn final_smoothed(&self, window: usize) -> f64 {
        let n = self.records.len();
        let k = window.clamp(1, n.max(1));
        self.records[n - k..].iter().map(|r| r.elbo).sum::<f64>() / k as f64
    }
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step applied to `params` in place.
pub fn adam_update(state: &mut AdamState, params: &mut [f64], gradient: &[f64], cfg: &TrainConfig) {
    assert_eq!(params.len(), gradient.len());
    assert_eq!(state.m.len(), gradient.len());
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = gradient[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
}

/// Negative ELBO and its gradient at the current parameters, from fresh base
/// draws taken out of `rng`.
pub fn elbo_step<M: LikelihoodModel, G: Rng + ?Sized>(
    posterior: &MeanFieldPosterior,
    model: &M,
    data: &Dataset,
    cfg: &TrainConfig,
    step: usize,
    rng: &mut G,
) -> Result<(GradientResult, ElboRecord), ViError> {
    if model.param_count() != posterior.len() {
        return Err(ViError::Config(format!(
            "posterior has {} factors but the model has {} parameters",
            posterior.len(),
            model.param_count()
        )));
    }
    let base = posterior.draw_base(cfg.samples, rng);
    let flat = posterior.flat_params();
    let tape = Tape::new();
    let raw = tape.vars(&flat);
    let samples = posterior.factor_samples(&raw, &base);
    let terms = elbo_terms(model, data, &samples)?;
    let loss = -terms.elbo();
    let record = ElboRecord {
        step,
        elbo: terms.expected_log_lik.val() - terms.kl.val(),
        expected_log_lik: terms.expected_log_lik.val(),
        kl: terms.kl.val(),
    };
    let gradient = tape.gradient(loss, &raw);
    if let Some(primitive) = tape.fault().filter(|_| !loss.val().is_finite()) {
        let bad_factor = samples.iter().position(|s| {
            s.w.iter().chain(&s.log_q).any(|v| !v.val().is_finite())
        });
        return Err(ViError::NonFinite {
            step,
            param_index: bad_factor,
            detail: format!("ELBO is {} (first fault in `{primitive}`)", record.elbo),
        });
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(ViError::NonFinite {
            step,
            param_index: posterior.factor_of(i),
            detail: format!("gradient entry {i} is {}", gradient[i]),
        });
    }
    if !loss.val().is_finite() {
        return Err(ViError::NonFinite {
            step,
            param_index: None,
            detail: format!("ELBO is {}", record.elbo),
        });
    }
    Ok((
        GradientResult {
            value: loss.val(),
            gradient,
        },
        record,
    ))
}

/// Runs `cfg.steps` stochastic ELBO steps with Adam, seeded from `cfg.seed`.
pub fn train<M: LikelihoodModel>(
    posterior: &MeanFieldPosterior,
    model: &M,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(MeanFieldPosterior, ElboTrace), ViError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut current = posterior.clone();
    let mut params = current.flat_params();
    let mut adam = AdamState::new(params.len());
    let mut trace = ElboTrace {
        records: Vec::with_capacity(cfg.steps),
    };
    for step in 0..cfg.steps {
        let (g, record) = elbo_step(&current, model, data, cfg, step, &mut rng)?;
        trace.records.push(record);
        adam_update(&mut adam, &mut params, &g.gradient, cfg);
        current.set_flat_params(&params);
    }
    Ok((current, trace))
}

/// Posterior-predictive summary of `mu(x)` at one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveBand {
    pub x: f64,
    pub mean: f64,
    pub q05: f64,
    pub q25: f64,
    pub q75: f64,
    pub q95: f64,
}

/// Linear-interpolation empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pushes `draws` joint weight samples through the network at every `x`.
pub fn posterior_predictive<G: Rng + ?Sized>(
    posterior: &MeanFieldPosterior,
    model: &MlpRegressionModel,
    xs: &[f64],
    draws: usize,
    rng: &mut G,
) -> Result<Vec<PredictiveBand>, ViError> {
    if draws < 100 {
        return Err(ViError::Config(format!(
            "posterior predictive needs at least 100 draws, got {draws}"
        )));
    }
    if posterior.len() != model.weight_count() {
        return Err(ViError::Config("posterior does not match the network".into()));
    }
    let samples = posterior.sample(draws, rng);
    let mut mu = vec![Vec::with_capacity(draws); xs.len()];
    let mut weights = vec![0.0; posterior.len()];
    for s in 0..draws {
        for (w, f) in weights.iter_mut().zip(&samples) {
            *w = f.w[s];
        }
        for (col, &x) in mu.iter_mut().zip(xs) {
            col.push(mlp_forward(&weights, model, x)?);
        }
    }
    Ok(xs
        .iter()
        .zip(mu)
        .map(|(&x, mut col)| {
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            col.sort_by(f64::total_cmp);
            PredictiveBand {
                x,
                mean,
                q05: quantile_sorted(&col, 0.05),
                q25: quantile_sorted(&col, 0.25),
                q75: quantile_sorted(&col, 0.75),
                q95: quantile_sorted(&col, 0.95),
            }
        })
        .collect())
}
