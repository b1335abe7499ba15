use gcse::estimators::kaplan_meier;
use gcse::networks::{threshold_indicator, GeneratorPair};
use gcse::simulation::{simulate, Censoring, Model, SimModelSpec};
use gcse::trainer::{parameter_checksum, sample_conditional, train, TrainConfig, Trainer};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn m1_data(n: usize, seed: u64) -> gcse::pipeline::Dataset {
    simulate(&SimModelSpec::new(Model::M1, Censoring::Independent), n, seed)
        .unwrap()
        .data
}

fn smoke_config(steps: usize) -> TrainConfig {
    TrainConfig {
        generator_steps: steps,
        batch_size: 64,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn smoke_run_has_finite_losses_and_full_series() {
    let data = m1_data(500, 1);
    let cfg = smoke_config(200);
    let (_, _, report) = train(&data, &cfg).unwrap();
    assert_eq!(report.generator_objective.len(), 200);
    assert_eq!(report.critic_objective.len(), 200 * cfg.critic_steps);
    assert_eq!(report.penalty.len(), report.critic_objective.len());
    assert!(report.critic_objective.iter().all(|v| v.is_finite()));
    assert!(report.generator_objective.iter().all(|v| v.is_finite()));
}

#[test]
fn identical_seeds_give_identical_parameters() {
    let data = m1_data(300, 2);
    let cfg = smoke_config(100);
    let (g1, d1, r1) = train(&data, &cfg).unwrap();
    let (g2, d2, r2) = train(&data, &cfg).unwrap();
    assert_eq!(g1.net.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
               g2.net.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(d1, d2);
    assert_eq!(r1.checksum, r2.checksum);
    let other = TrainConfig { seed: 6, ..cfg };
    assert_ne!(train(&data, &other).unwrap().2.checksum, r1.checksum);
}

#[test]
fn zero_length_schedule_leaves_parameters_unchanged() {
    let data = m1_data(200, 3);
    let cfg = smoke_config(0);
    let fresh = Trainer::new(&data, cfg.clone()).unwrap();
    let (g, d, report) = train(&data, &cfg).unwrap();
    assert_eq!(g, fresh.generator);
    assert_eq!(d, fresh.discriminator);
    assert!(report.critic_objective.is_empty());
}

#[test]
fn training_does_not_mutate_the_dataset() {
    let data = m1_data(200, 4);
    let digest = data.digest();
    train(&data, &smoke_config(20)).unwrap();
    assert_eq!(data.digest(), digest);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let data = m1_data(400, 5);
    let full = Trainer::new(&data, smoke_config(60)).map(|mut t| {
        t.run(&data).unwrap();
        t
    });
    let full = full.unwrap();
    let mut first = Trainer::new(&data, smoke_config(25)).unwrap();
    first.run(&data).unwrap();
    let text = first.checkpoint_text();
    let mut resumed = Trainer::resume(&data, smoke_config(60), &text).unwrap();
    resumed.run(&data).unwrap();
    assert_eq!(
        parameter_checksum(&resumed.generator, &resumed.discriminator),
        parameter_checksum(&full.generator, &full.discriminator)
    );
    assert_eq!(resumed.checkpoint_text(), full.checkpoint_text());
}

#[test]
fn penalty_variants_train() {
    let data = m1_data(300, 6);
    for (interpolate, indicator) in [(true, false), (false, false), (true, true)] {
        let cfg = TrainConfig {
            interpolate_penalty: interpolate,
            penalize_indicator: indicator,
            clamp_output: true,
            ..smoke_config(30)
        };
        let (g, _, report) = train(&data, &cfg).unwrap();
        assert!(report.penalty.iter().all(|p| p.is_finite() && *p >= 0.0));
        let c = g.time_clamp.unwrap();
        assert!((c - (1.0 + 300f64.ln())).abs() < 1e-12);
    }
}

#[test]
fn rejects_mismatched_or_raw_data() {
    let mut data = m1_data(100, 7);
    let cfg = TrainConfig {
        preset: "pbc".into(),
        ..smoke_config(1)
    };
    assert!(train(&data, &cfg).is_ok());
    let cfg = TrainConfig {
        preset: "m2-independent".into(),
        ..smoke_config(1)
    };
    assert!(train(&data.select_rows(&[]), &cfg).is_err());
    data.x = Array2::zeros((100, 4));
    data.columns.truncate(4);
    data.indicator_columns.truncate(4);
    assert!(train(&data, &cfg).is_err());
}

#[test]
fn zero_generator_samples_are_origin_events() {
    let g = GeneratorPair::zeros(3, 5, &[6, 4]).unwrap();
    let s = sample_conditional(&g, &[0.1; 5], 50, 1).unwrap();
    assert!(s.times.iter().all(|&t| t == 0.0));
    assert!(s.events.iter().all(|&e| e == 1));
}

#[test]
fn sample_stream_prefix_is_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = GeneratorPair::init(3, 5, &[60, 30], &mut rng).unwrap();
    let x = [0.5; 5];
    let one = sample_conditional(&g, &x, 1, 42).unwrap();
    let many = sample_conditional(&g, &x, 10_000, 42).unwrap();
    assert_eq!(one.times[0].to_bits(), many.times[0].to_bits());
    assert_eq!(one.events[0], many.events[0]);
    let mid = sample_conditional(&g, &x, 5_000, 42).unwrap();
    assert_eq!(&many.times[..5_000], &mid.times[..]);
}

#[test]
fn censoring_fraction_matches_direct_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut g = GeneratorPair::init(3, 5, &[20, 10], &mut rng).unwrap();
    // Shift the score head so both classes occur.
    g.net.layers.last_mut().unwrap().bias[1] = 0.1;
    let x = [0.3, -0.2, 0.5, 1.0, -1.0];
    let m = 20_000;
    let s = sample_conditional(&g, &x, m, 10).unwrap();
    let p_hat = s.censored_fraction();
    // Independent draws straight through the forward pass.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Array2::from_shape_simple_fn((m, 3), || rng.sample::<f64, _>(rand_distr::StandardNormal));
    let covs = Array2::from_shape_fn((m, 5), |(_, j)| x[j]);
    let (_, _, score) = g.forward_batch(noise.view(), covs.view()).unwrap();
    let p_mc = score.iter().filter(|&&v| threshold_indicator(v) == 0).count() as f64 / m as f64;
    let se = (p_mc * (1.0 - p_mc) * 2.0 / m as f64).sqrt().max(1e-3);
    assert!((p_hat - p_mc).abs() < 4.0 * se, "{p_hat} vs {p_mc}");
    assert!(p_hat > 0.01 && p_hat < 0.99, "{p_hat}");
}

#[test]
fn km_of_samples_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let g = GeneratorPair::init(3, 5, &[8], &mut rng).unwrap();
    let a = kaplan_meier(&sample_conditional(&g, &[0.0; 5], 300, 3).unwrap()).unwrap();
    let b = kaplan_meier(&sample_conditional(&g, &[0.0; 5], 300, 3).unwrap()).unwrap();
    assert_eq!(a, b);
}
