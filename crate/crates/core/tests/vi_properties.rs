use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tmvi_core::flow::{constrain, init_params, Flow, FlowConfig, UnconstrainedFlowParams};
use tmvi_core::models::{
    mlp_forward, BernoulliModel, Dataset, GaussianVariational, LikelihoodModel, MlpRegressionModel, NormalMeanModel,
};
use tmvi_core::oracles::{beta_pdf, flow_density_grid, linspace, normal_mean_posterior, quadrature_kl, DensityGrid};
use tmvi_core::vi::{
    adam_update, elbo_step, elbo_terms, expected_log_lik, kl_per_parameter, kl_sample_estimate, posterior_predictive,
    train, AdamState, Factor, FactorSamples, MeanFieldPosterior, TrainConfig,
};

fn bernoulli_data() -> Dataset {
    Dataset::unconditional(vec![1.0, 1.0])
}

/// A squashed flow whose draws sit mostly in `(0.5, 0.88)`.
fn fixed_bernoulli_flow() -> (MeanFieldPosterior, Flow, UnconstrainedFlowParams) {
    let cfg = FlowConfig::new(10, true).with_init_range(0.0, 2.0);
    let raw = init_params(&cfg).unwrap();
    let flow = Flow::new(cfg).unwrap();
    let posterior = MeanFieldPosterior::new(vec![Factor::Transformation {
        flow: flow.clone(),
        params: raw.clone(),
    }])
    .unwrap();
    (posterior, flow, raw)
}

fn z_quadrature(f: impl Fn(f64) -> f64) -> f64 {
    let zs = linspace(-8.0, 8.0, 2001);
    let h = zs[1] - zs[0];
    let vals: Vec<f64> = zs
        .iter()
        .map(|&z| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() * f(z))
        .collect();
    h * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[vals.len() - 1]))
}

#[test]
fn single_draw_average_is_that_draw() {
    let (posterior, _, _) = fixed_bernoulli_flow();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let samples = posterior.sample(1, &mut rng);
    let model = BernoulliModel::default();
    let direct = model.log_likelihood(&[samples[0].w[0]], &bernoulli_data()).unwrap();
    assert_eq!(expected_log_lik(&model, &bernoulli_data(), &samples).unwrap(), direct);
}

#[test]
fn expected_log_lik_matches_quadrature() {
    let (posterior, flow, raw) = fixed_bernoulli_flow();
    let lam = constrain(&raw);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let samples = posterior.sample(5000, &mut rng);
    let mc = expected_log_lik(&BernoulliModel::default(), &bernoulli_data(), &samples).unwrap();
    let exact = z_quadrature(|z| 2.0 * flow.forward(&lam, z).ln());
    assert!((mc - exact).abs() < 0.01, "{mc} vs {exact}");
}

#[test]
fn point_mass_flow_gives_point_log_lik() {
    let pi: f64 = 0.7;
    let raw = UnconstrainedFlowParams {
        a_raw: 0.5,
        b: 0.0,
        theta_raw: vec![0.0, 0.0, 0.0],
        alpha_raw: -30.0,
        beta: (pi / (1.0 - pi)).ln(),
    };
    let posterior = MeanFieldPosterior::new(vec![Factor::Transformation {
        flow: Flow::new(FlowConfig::new(2, true)).unwrap(),
        params: raw,
    }])
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let samples = posterior.sample(100, &mut rng);
    let ell = expected_log_lik(&BernoulliModel::default(), &bernoulli_data(), &samples).unwrap();
    assert!((ell - 2.0 * pi.ln()).abs() < 1e-9);
}

#[test]
fn kl_of_prior_to_itself_vanishes() {
    let model = NormalMeanModel {
        noise_sd: 1.0,
        prior_mean: 0.0,
        prior_sd: 1.0,
    };
    let posterior = MeanFieldPosterior::gaussian(1, 0.0, 1.0, false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let samples = posterior.sample(10_000, &mut rng);
    assert!(kl_sample_estimate(&model, &samples).unwrap().abs() < 0.05);
}

#[test]
fn sampled_kl_matches_quadrature() {
    let (posterior, flow, raw) = fixed_bernoulli_flow();
    let model = BernoulliModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let samples = posterior.sample(10_000, &mut rng);
    let mc = kl_sample_estimate(&model, &samples).unwrap();
    let points = linspace(1e-6, 1.0 - 1e-6, 20_001);
    let q = flow_density_grid(&flow, &constrain(&raw), &points).unwrap();
    let p = DensityGrid::from_fn(1e-6, 1.0 - 1e-6, 20_001, |x| beta_pdf(x, 1.1, 1.1)).unwrap();
    let exact = quadrature_kl(&q, &p).unwrap();
    assert!((mc - exact).abs() < 0.02, "{mc} vs {exact}");
}

#[test]
fn joint_kl_is_sum_of_parts() {
    let model = MlpRegressionModel::new(vec![1, 1], 0.1).unwrap();
    let posterior = MeanFieldPosterior::transformation(2, FlowConfig::new(4, false)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let samples = posterior.sample(64, &mut rng);
    let parts = kl_per_parameter(&model, &samples).unwrap();
    assert_eq!(kl_sample_estimate(&model, &samples).unwrap(), parts[0] + parts[1]);
}

#[test]
fn step_record_keeps_elbo_bookkeeping_exact() {
    let (posterior, _, _) = fixed_bernoulli_flow();
    let cfg = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    for step in 0..20 {
        let (g, rec) = elbo_step(&posterior, &BernoulliModel::default(), &bernoulli_data(), &cfg, step, &mut rng).unwrap();
        assert_eq!(rec.elbo, rec.expected_log_lik - rec.kl);
        assert_eq!(g.value, -rec.elbo);
    }
}

#[test]
fn shared_draws_feed_both_terms() {
    let (posterior, _, _) = fixed_bernoulli_flow();
    let model = BernoulliModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(38);
    let samples: Vec<FactorSamples<f64>> = posterior.sample(30, &mut rng);
    let terms = elbo_terms(&model, &bernoulli_data(), &samples).unwrap();
    assert_eq!(terms.expected_log_lik, expected_log_lik(&model, &bernoulli_data(), &samples).unwrap());
    assert_eq!(terms.kl, kl_sample_estimate(&model, &samples).unwrap());
}

#[test]
fn zero_learning_rate_freezes_posterior() {
    let (posterior, _, _) = fixed_bernoulli_flow();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        steps: 50,
        ..TrainConfig::default()
    };
    let (after, _) = train(&posterior, &BernoulliModel::default(), &bernoulli_data(), &cfg).unwrap();
    assert_eq!(after.flat_params(), posterior.flat_params());
}

#[test]
fn training_is_deterministic() {
    let (posterior, _, _) = fixed_bernoulli_flow();
    let cfg = TrainConfig {
        steps: 200,
        ..TrainConfig::default()
    };
    let (a, ta) = train(&posterior, &BernoulliModel::default(), &bernoulli_data(), &cfg).unwrap();
    let (b, tb) = train(&posterior, &BernoulliModel::default(), &bernoulli_data(), &cfg).unwrap();
    assert_eq!(ta, tb);
    assert_eq!(a.flat_params(), b.flat_params());
}

#[test]
fn adam_first_step_is_sign_scaled() {
    let cfg = TrainConfig::default();
    let g = [0.3, -2.0, 1e-3];
    let mut params = [1.0, 1.0, 1.0];
    let mut state = AdamState::new(3);
    adam_update(&mut state, &mut params, &g, &cfg);
    for (p, gi) in params.iter().zip(g) {
        let want = 1.0 - cfg.learning_rate * gi / (gi.abs() + cfg.adam_eps);
        assert!((p - want).abs() < 1e-15);
    }
}

#[test]
fn adam_with_zero_gradient_stays_put() {
    let cfg = TrainConfig::default();
    let mut params = [0.4, -1.2];
    let mut state = AdamState::new(2);
    for _ in 0..500 {
        adam_update(&mut state, &mut params, &[0.0, 0.0], &cfg);
    }
    assert_eq!(params, [0.4, -1.2]);
}

#[test]
fn adam_matches_reference_on_quadratic_bowl() {
    let cfg = TrainConfig {
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let curv = [1.0, 4.0, 0.25];
    let mut ours = [2.0, -1.0, 3.0];
    let mut state = AdamState::new(3);
    let mut theirs = ours;
    let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
    for t in 1..=100 {
        let g: Vec<f64> = ours.iter().zip(curv).map(|(x, c)| c * x).collect();
        adam_update(&mut state, &mut ours, &g, &cfg);
        for i in 0..3 {
            let gi = curv[i] * theirs[i];
            m[i] = 0.9 * m[i] + 0.1 * gi;
            v[i] = 0.999 * v[i] + 0.001 * gi * gi;
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            theirs[i] -= 0.05 * mh / (vh.sqrt() + 1e-8);
        }
        for i in 0..3 {
            assert!((ours[i] - theirs[i]).abs() < 1e-10);
        }
    }
}

#[test]
fn gaussian_vi_recovers_conjugate_normal_posterior() {
    let model = NormalMeanModel {
        noise_sd: 1.0,
        prior_mean: 0.0,
        prior_sd: 2.0,
    };
    let ys = vec![1.8, 2.6, 1.1, 2.9, 2.2];
    let (mean, sd) = normal_mean_posterior(0.0, 2.0, 1.0, &ys);
    let posterior = MeanFieldPosterior::gaussian(1, 0.0, 1.0, false).unwrap();
    let (fit, _) = train(&posterior, &model, &Dataset::unconditional(ys), &TrainConfig::default()).unwrap();
    let Factor::Gaussian { params, .. } = &fit.factors()[0] else {
        panic!("expected a Gaussian factor")
    };
    assert!(((params.mean() - mean) / mean).abs() < 0.05, "{} vs {mean}", params.mean());
    assert!(((params.sd() - sd) / sd).abs() < 0.05, "{} vs {sd}", params.sd());
}

#[test]
fn smoothed_elbo_settles_on_bernoulli() {
    let posterior = MeanFieldPosterior::transformation(1, FlowConfig::new(30, true)).unwrap();
    let (_, trace) = train(&posterior, &BernoulliModel::default(), &bernoulli_data(), &TrainConfig::default()).unwrap();
    let smooth = trace.smoothed(100);
    let mut best = f64::NEG_INFINITY;
    for &s in &smooth[1000..] {
        assert!(s >= best - 0.5);
        best = best.max(s);
    }
}

fn small_net() -> MlpRegressionModel {
    MlpRegressionModel::new(vec![1, 3, 1], 0.1).unwrap()
}

fn random_gaussian_posterior(n: usize, sd: f64, rng: &mut impl Rng) -> MeanFieldPosterior {
    let factors = (0..n)
        .map(|_| Factor::Gaussian {
            params: GaussianVariational {
                mean_raw: rng.random_range(-1.5..1.5),
                sd_raw: tmvi_core::diff::softplus_inv(sd),
            },
            squash: false,
        })
        .collect();
    MeanFieldPosterior::new(factors).unwrap()
}

#[test]
fn degenerate_posterior_collapses_quantiles() {
    let net = small_net();
    let mut rng = ChaCha8Rng::seed_from_u64(39);
    let mut posterior = random_gaussian_posterior(net.weight_count(), 1.0, &mut rng);
    let mut flat = posterior.flat_params();
    for pair in flat.chunks_mut(2) {
        pair[1] = -40.0;
    }
    posterior.set_flat_params(&flat);
    let means: Vec<f64> = flat.chunks(2).map(|p| p[0]).collect();
    let xs = linspace(-3.0, 3.0, 21);
    for band in posterior_predictive(&posterior, &net, &xs, 200, &mut rng).unwrap() {
        let mu = mlp_forward(&means, &net, band.x).unwrap();
        for q in [band.mean, band.q05, band.q25, band.q75, band.q95] {
            assert!((q - mu).abs() < 1e-9);
        }
    }
}

#[test]
fn predictive_quantiles_are_ordered_and_stable() {
    let net = small_net();
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let xs_train: Vec<f64> = (0..16).map(|i| if i < 8 { -2.0 + 0.2 * i as f64 } else { 0.5 + 0.2 * (i - 8) as f64 }).collect();
    let ys: Vec<f64> = xs_train.iter().map(|x| (2.0 * x).sin() + rng.random_range(-0.1..0.1)).collect();
    let start = MeanFieldPosterior::gaussian(net.weight_count(), 0.0, 1.0, false).unwrap();
    let cfg = TrainConfig {
        steps: 2000,
        ..TrainConfig::default()
    };
    let (posterior, _) = train(&start, &net, &Dataset::new(xs_train, ys).unwrap(), &cfg).unwrap();
    let xs = linspace(-3.0, 3.0, 61);
    let a = posterior_predictive(&posterior, &net, &xs, 2000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = posterior_predictive(&posterior, &net, &xs, 2000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    for (p, q) in a.iter().zip(&b) {
        assert!(p.q05 <= p.q25 && p.q25 <= p.q75 && p.q75 <= p.q95);
        for (u, v) in [(p.q05, q.q05), (p.q25, q.q25), (p.q75, q.q75), (p.q95, q.q95)] {
            assert!((u - v).abs() < 0.05, "x={}: {u} vs {v}", p.x);
        }
    }
    assert!(posterior_predictive(&posterior, &net, &xs, 99, &mut rng).is_err());
}

#[test]
fn squashed_gaussian_stays_in_unit_interval() {
    let posterior = MeanFieldPosterior::gaussian(1, 2.0, 3.0, true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let s = &posterior.sample(1000, &mut rng)[0];
    assert!(s.w.iter().all(|&w| w > 0.0 && w < 1.0));
    assert!(s.log_q.iter().all(|l| l.is_finite()));
}
