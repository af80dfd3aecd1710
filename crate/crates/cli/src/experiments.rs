//! The three experiments: a Bernoulli proportion, a Cauchy location with a
//! bimodal posterior, and a small Bayesian regression network.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tmvi_core::flow::{constrain, FlowConfig};
use tmvi_core::models::{BernoulliModel, CauchyLocationModel, Dataset, LikelihoodModel, MlpRegressionModel};
use tmvi_core::oracles::{
    beta_pdf, binned_total_variation, conjugate_beta_posterior, count_modes, flow_density_grid,
    gaussian_density_grid, histogram_density, linspace, metropolis, quadrature_kl, DensityGrid,
    MetropolisConfig,
};
use tmvi_core::vi::{posterior_predictive, train, ElboTrace, Factor, Family, MeanFieldPosterior, PredictiveBand, TrainConfig};

use crate::config::ExperimentConfig;
use crate::record::{ArtifactWriter, RunRecord};
use crate::RunError;

const MCMC_STREAM: u64 = 1;
const PREDICTIVE_STREAM: u64 = 2;
const TRAIN_POINT_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Bernoulli,
    Cauchy,
    Nn,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Bernoulli => "bernoulli",
            Experiment::Cauchy => "cauchy",
            Experiment::Nn => "nn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Small,
    Large,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Small => "small",
            Arch::Large => "large",
        }
    }
}

pub fn family_name(family: Family) -> &'static str {
    match family {
        Family::Tm => "tm",
        Family::Gaussian => "gaussian",
    }
}

/// Everything a single run needs besides the experiment constants.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub family: Family,
    pub degree: usize,
    pub arch: Arch,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
}

/// Runs one experiment and always writes its record, even on failure.
pub fn run(experiment: Experiment, cfg: &ExperimentConfig, opts: &RunOptions) -> (RunRecord, Result<(), RunError>) {
    let family = match experiment {
        Experiment::Cauchy => "tm,gaussian",
        _ => family_name(opts.family),
    };
    let arch = (experiment == Experiment::Nn).then(|| opts.arch.name());
    let mut record = RunRecord::new(experiment.name(), family, opts.degree, arch, opts.train, cfg);
    let outcome = ArtifactWriter::new(&opts.out_dir).and_then(|mut writer| {
        let result = match experiment {
            Experiment::Bernoulli => run_bernoulli(cfg, opts, &mut record, &mut writer),
            Experiment::Cauchy => run_cauchy(cfg, opts, &mut record, &mut writer),
            Experiment::Nn => run_nn(cfg, opts, &mut record, &mut writer),
        };
        record.artifacts = writer.into_artifacts();
        result
    });
    if let Err(e) = &outcome {
        record.fail(e);
    }
    let written = record.write(&opts.out_dir).map(|_| ());
    (record, outcome.and(written))
}

fn build_posterior(
    cfg: &ExperimentConfig,
    family: Family,
    count: usize,
    degree: usize,
    squash: bool,
) -> Result<MeanFieldPosterior, RunError> {
    Ok(match family {
        Family::Tm => {
            let flow = FlowConfig::new(degree, squash).with_init_range(cfg.flow.init_low, cfg.flow.init_high);
            MeanFieldPosterior::transformation(count, flow)?
        }
        Family::Gaussian => MeanFieldPosterior::gaussian(count, cfg.gaussian.init_mean, cfg.gaussian.init_sd, squash)?,
    })
}

/// Density of one mean-field factor on a grid.
pub fn factor_density(factor: &Factor, points: &[f64]) -> Result<DensityGrid, RunError> {
    Ok(match factor {
        Factor::Transformation { flow, params } => flow_density_grid(flow, &constrain(params), points)?,
        Factor::Gaussian { params, squash } => gaussian_density_grid(params, *squash, points)?,
    })
}

pub fn trace_csv(trace: &ElboTrace) -> String {
    let mut out = String::from("step,elbo,ell,kl\n");
    for r in &trace.records {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.elbo, r.expected_log_lik, r.kl));
    }
    out
}

pub fn predictive_csv(bands: &[PredictiveBand]) -> String {
    let mut out = String::from("x,mean,q05,q25,q75,q95\n");
    for b in bands {
        out.push_str(&format!("{},{},{},{},{},{}\n", b.x, b.mean, b.q05, b.q25, b.q75, b.q95));
    }
    out
}

fn train_and_record<M: LikelihoodModel>(
    cfg: &ExperimentConfig,
    posterior: &MeanFieldPosterior,
    model: &M,
    data: &Dataset,
    train_cfg: &TrainConfig,
) -> Result<(MeanFieldPosterior, ElboTrace, f64), RunError> {
    let (fitted, trace) = train(posterior, model, data, train_cfg)?;
    let smoothed = trace.final_smoothed(cfg.train.smoothing_window);
    Ok((fitted, trace, smoothed))
}

pub fn run_bernoulli(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    record: &mut RunRecord,
    writer: &mut ArtifactWriter,
) -> Result<(), RunError> {
    let s = &cfg.bernoulli;
    let model = BernoulliModel {
        prior_alpha: s.prior_alpha,
        prior_beta: s.prior_beta,
    };
    let data = Dataset::unconditional(s.data.clone());
    let posterior = build_posterior(cfg, opts.family, 1, opts.degree, true)?;
    let (fitted, trace, smoothed) = train_and_record(cfg, &posterior, &model, &data, &opts.train)?;
    record.final_elbo = Some(smoothed);
    record.final_params = fitted.flat_params();
    writer.write("trace.csv", &trace_csv(&trace))?;

    let points = linspace(s.grid_clip, 1.0 - s.grid_clip, s.grid_points);
    let q = factor_density(&fitted.factors()[0], &points)?;
    let (a, b) = conjugate_beta_posterior(s.prior_alpha, s.prior_beta, &s.data)?;
    let p = DensityGrid::from_fn(s.grid_clip, 1.0 - s.grid_clip, s.grid_points, |x| beta_pdf(x, a, b))?;
    let kl = quadrature_kl(&q, &p)?;
    record.kl_to_oracle = Some(kl);
    record.diagnostics.insert("tail_mass".into(), 1.0 - q.integral());
    record.diagnostics.insert("posterior_alpha".into(), a);
    record.diagnostics.insert("posterior_beta".into(), b);
    record.diagnostics.insert("final_elbo_raw".into(), trace.records.last().map_or(f64::NAN, |r| r.elbo));
    writer.write(&format!("density_{}.csv", family_name(opts.family)), &q.to_csv())?;
    writer.write("density_posterior.csv", &p.to_csv())?;
    Ok(())
}

pub fn run_cauchy(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    record: &mut RunRecord,
    writer: &mut ArtifactWriter,
) -> Result<(), RunError> {
    let s = &cfg.cauchy;
    let model = CauchyLocationModel {
        gamma: s.gamma,
        prior_mean: s.prior_mean,
        prior_sd: s.prior_sd,
    };
    model.validate()?;
    let data = Dataset::unconditional(s.data.clone());
    let points = linspace(s.grid_low, s.grid_high, s.grid_points);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.train.seed);
    rng.set_stream(MCMC_STREAM);
    let mcmc_cfg = MetropolisConfig {
        steps: s.mcmc_steps,
        proposal_sd: s.mcmc_proposal_sd,
        burn_in: s.mcmc_burn_in,
        thin: s.mcmc_thin,
    };
    let log_post = |xi: f64| {
        let w = [xi];
        match (model.log_likelihood(&w, &data), model.log_prior(&w)) {
            (Ok(l), Ok(p)) => l + p,
            _ => f64::NEG_INFINITY,
        }
    };
    let chain = metropolis(log_post, 0.0, &mcmc_cfg, &mut rng)?;
    record.diagnostics.insert("mcmc_acceptance_rate".into(), chain.acceptance_rate);
    record.diagnostics.insert("mcmc_kept".into(), chain.samples.len() as f64);
    let hist = histogram_density(&chain.samples, s.grid_low, s.grid_high, s.histogram_bins)?;
    writer.write("density_mcmc.csv", &hist.to_csv())?;

    let mut final_params = Vec::new();
    for family in [Family::Tm, Family::Gaussian] {
        let name = family_name(family);
        let posterior = build_posterior(cfg, family, 1, opts.degree, false)?;
        let (fitted, trace, smoothed) = train_and_record(cfg, &posterior, &model, &data, &opts.train)?;
        if family == Family::Tm {
            record.final_elbo = Some(smoothed);
        }
        record.diagnostics.insert(format!("final_elbo_{name}"), smoothed);
        final_params.extend(fitted.flat_params());
        writer.write(&format!("trace_{name}.csv"), &trace_csv(&trace))?;

        let q = factor_density(&fitted.factors()[0], &points)?;
        let modes = count_modes(&q, s.mode_prominence);
        let tv = binned_total_variation(&q, &chain.samples, s.grid_low, s.grid_high, s.histogram_bins);
        record.diagnostics.insert(format!("modes_{name}"), modes.len() as f64);
        record.diagnostics.insert(format!("tv_{name}"), tv);
        record.diagnostics.insert(format!("tail_mass_{name}"), 1.0 - q.integral());
        record.modes.insert(name.to_string(), modes);
        writer.write(&format!("density_{name}.csv"), &q.to_csv())?;
    }
    record.final_params = final_params;
    Ok(())
}

pub fn nn_model(cfg: &ExperimentConfig, arch: Arch) -> Result<MlpRegressionModel, RunError> {
    let s = &cfg.nn;
    let layer_sizes = match arch {
        Arch::Small => s.small_layers.clone(),
        Arch::Large => s.large_layers.clone(),
    };
    let model = MlpRegressionModel {
        layer_sizes,
        activation: s.activation,
        noise_sd: s.noise_sd,
        prior_sd: s.prior_sd,
    };
    model.validate()?;
    Ok(model)
}

pub fn run_nn(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    record: &mut RunRecord,
    writer: &mut ArtifactWriter,
) -> Result<(), RunError> {
    let s = &cfg.nn;
    let model = nn_model(cfg, opts.arch)?;
    let data = Dataset::new(s.inputs.clone(), s.targets.clone())?;
    let posterior = build_posterior(cfg, opts.family, model.weight_count(), opts.degree, false)?;
    let (fitted, trace, smoothed) = train_and_record(cfg, &posterior, &model, &data, &opts.train)?;
    record.final_elbo = Some(smoothed);
    record.final_params = fitted.flat_params();
    writer.write("trace.csv", &trace_csv(&trace))?;

    let mut train_points = String::from("x,y\n");
    for (x, y) in s.inputs.iter().zip(&s.targets) {
        train_points.push_str(&format!("{x},{y}\n"));
    }
    writer.write("train_points.csv", &train_points)?;

    let xs = linspace(s.predictive_low, s.predictive_high, s.predictive_points);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.train.seed);
    rng.set_stream(PREDICTIVE_STREAM);
    let bands = posterior_predictive(&fitted, &model, &xs, s.predictive_draws, &mut rng)?;
    writer.write("predictive.csv", &predictive_csv(&bands))?;
    if let Some(mid) = bands.iter().min_by(|a, b| a.x.abs().total_cmp(&b.x.abs())) {
        record.diagnostics.insert("band_width_90_at_0".into(), mid.q95 - mid.q05);
        record.diagnostics.insert("band_width_50_at_0".into(), mid.q75 - mid.q25);
    }

    rng.set_stream(TRAIN_POINT_STREAM);
    let at_train = posterior_predictive(&fitted, &model, &s.inputs, s.predictive_draws, &mut rng)?;
    let mse = at_train
        .iter()
        .zip(&s.targets)
        .map(|(b, y)| (b.mean - y).powi(2))
        .sum::<f64>()
        / s.targets.len() as f64;
    record.diagnostics.insert("train_rmse".into(), mse.sqrt());
    Ok(())
}
