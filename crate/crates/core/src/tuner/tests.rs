use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
use rand::Rng;

use super::gp::lml_and_grad;
use super::*;
use crate::cells::{ArchKind, Network, NetworkSpec};
use crate::tasks::TaskConfig;
use crate::training::OptimizerConfig;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn lr_space() -> HpSpace {
    HpSpace::new().with("lr0", Dim::LogUniform { lo: 1e-4, hi: 1e-1 })
}

#[test]
fn log_uniform_samples_stay_in_bounds_with_geometric_median() {
    let space = lr_space();
    let mut r = rng(1);
    let mut xs: Vec<f64> = (0..100_000)
        .map(|_| space.sample(&mut r)["lr0"].as_f64().unwrap())
        .collect();
    assert!(xs.iter().all(|&x| (1e-4..=1e-1).contains(&x)));
    xs.sort_by(f64::total_cmp);
    let median = xs[xs.len() / 2];
    let geo = (1e-4f64 * 1e-1).sqrt();
    assert!((median / geo - 1.0).abs() < 0.05, "{median} vs {geo}");
}

#[test]
fn categorical_frequencies_are_balanced() {
    let space = HpSpace::new().with("s", Dim::categorical(&["tanh", "relu"]));
    let mut r = rng(2);
    let tanh = (0..100_000)
        .filter(|_| space.sample(&mut r)["s"].as_str() == Some("tanh"))
        .count() as f64
        / 1e5;
    assert!((0.48..=0.52).contains(&tanh), "{tanh}");
}

#[test]
fn int_samples_cover_range() {
    let space = HpSpace::new()
        .with("a", Dim::Int { lo: 1, hi: 6, log: false })
        .with("b", Dim::Int { lo: 10, hi: 1000, log: true });
    let mut r = rng(3);
    let mut seen = [false; 7];
    for _ in 0..2000 {
        let c = space.sample(&mut r);
        seen[c["a"].as_int().unwrap() as usize] = true;
        assert!((10..=1000).contains(&c["b"].as_int().unwrap()));
    }
    assert!(seen[1..].iter().all(|&s| s));
}

#[test]
fn encode_examples() {
    let space = lr_space();
    let enc = |x: f64| space.encode(&[("lr0".to_string(), HpValue::Float(x))].into()).unwrap()[0];
    assert_eq!(enc(1e-4), 0.0);
    assert!((enc(1e-1) - 1.0).abs() < 1e-15);
    assert!((enc(10f64.powf(-2.5)) - 0.5).abs() < 1e-12);
    let space = HpSpace::new().with("o", Dim::categorical(&["sgd", "adam", "rmsprop"]));
    let c: HpConfig = [("o".to_string(), HpValue::Cat("adam".into()))].into();
    assert_eq!(space.encode(&c).unwrap(), vec![0.0, 1.0, 0.0]);
    assert_eq!(space.decode(&[0.1, 0.9, 0.3]).unwrap(), c);
}

#[test]
fn encode_rejects_mismatched_values() {
    let space = lr_space();
    assert!(space.encode(&HpConfig::new()).is_err());
    assert!(space.encode(&[("lr0".to_string(), HpValue::Cat("x".into()))].into()).is_err());
    assert!(space.decode(&[0.5, 0.5]).is_err());
}

#[test]
fn space_validation() {
    assert!(HpSpace::new().with("x", Dim::Uniform { lo: 1.0, hi: 1.0 }).validate().is_err());
    assert!(HpSpace::new().with("x", Dim::LogUniform { lo: 0.0, hi: 1.0 }).validate().is_err());
    assert!(HpSpace::new().with("x", Dim::Categorical { choices: vec![] }).validate().is_err());
    assert!(rnn_space(ArchKind::Gru, &TaskConfig::lookup("capacity").unwrap(), &opts()).validate().is_ok());
}

fn mixed_space() -> HpSpace {
    HpSpace::new()
        .with("u", Dim::Uniform { lo: -2.0, hi: 3.0 })
        .with("l", Dim::LogUniform { lo: 1e-8, hi: 1e-3 })
        .with("i", Dim::Int { lo: 100, hi: 5000, log: true })
        .with("j", Dim::Int { lo: -3, hi: 3, log: false })
        .with("c", Dim::categorical(&["a", "b", "c", "d"]))
}

#[test]
fn matern_examples() {
    assert_eq!(matern52_r(0.0, 2.5), 2.5);
    assert!((matern52_r(1.0, 1.0) - 0.52399).abs() < 5e-6);
    assert!(matern52_r(20.0, 1.0) < 1e-15);
    let k = matern52(&[0.0, 0.0], &[0.3, 0.4], &[0.5, 0.5], 1.0);
    assert!((k - matern52_r(1.0, 1.0)).abs() < 1e-15);
}

#[test]
fn marginal_likelihood_gradient_matches_differences() {
    let mut r = rng(4);
    let groups = vec![0, 1, 1, 2];
    let x: Vec<Vec<f64>> = (0..12).map(|_| (0..4).map(|_| r.gen_range(0.0..1.0)).collect()).collect();
    let z: Vec<f64> = x.iter().map(|v| (3.0 * v[0]).sin() + v[1] - v[3] * v[3]).collect();
    let theta = vec![0.2, -0.7, -0.3, 0.1, -4.0];
    let (_, g) = lml_and_grad(&x, &z, &groups, 3, &theta).unwrap();
    for i in 0..theta.len() {
        let h = 1e-5;
        let mut tp = theta.clone();
        tp[i] += h;
        let mut tm = theta.clone();
        tm[i] -= h;
        let fd = (lml_and_grad(&x, &z, &groups, 3, &tp).unwrap().0 - lml_and_grad(&x, &z, &groups, 3, &tm).unwrap().0)
            / (2.0 * h);
        assert!((fd - g[i]).abs() < 1e-5 * (1.0 + fd.abs()), "θ{i}: {fd} vs {}", g[i]);
    }
}

#[test]
fn gp_interpolates_repeated_point() {
    let x = vec![vec![0.4, 0.6]; 5];
    let y = vec![1.7; 5];
    let gp = GpModel::with_hyper(
        &x,
        &y,
        &[0, 1],
        GpHyper {
            variance: 1.0,
            length_scales: vec![0.3, 0.3],
            noise: 1e-10,
        },
    )
    .unwrap();
    let (mu, _) = gp.predict(&[0.4, 0.6]);
    assert!((mu - 1.7).abs() < 1e-6);
}

#[test]
fn posterior_variance_at_observations_is_small() {
    let mut r = rng(5);
    let x: Vec<Vec<f64>> = (0..15).map(|_| vec![r.gen_range(0.0..1.0)]).collect();
    let y: Vec<f64> = x.iter().map(|v| (6.0 * v[0]).cos()).collect();
    let gp = fit_gp(&x, &y, &[0], &mut r).unwrap();
    for xi in &x {
        let (_, s) = gp.predict(xi);
        assert!(s * s <= gp.noise_variance() + 1e-12, "{} > {}", s * s, gp.noise_variance());
    }
}

#[test]
fn gp_regression_on_quadratic() {
    let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 19.0]).collect();
    let y: Vec<f64> = x.iter().map(|v| (v[0] - 0.3).powi(2)).collect();
    let gp = fit_gp(&x, &y, &[0], &mut rng(6)).unwrap();
    let range = 0.49;
    let grid: Vec<f64> = (0..=200).map(|i| i as f64 / 200.0).collect();
    let mse = grid
        .iter()
        .map(|&g| (gp.predict(&[g]).0 - (g - 0.3).powi(2)).powi(2))
        .sum::<f64>()
        / grid.len() as f64;
    assert!(mse.sqrt() < 0.1 * range, "rmse {}", mse.sqrt());
}

#[test]
fn fit_needs_two_observations() {
    assert!(matches!(
        fit_gp(&[vec![0.5]], &[1.0], &[0], &mut rng(0)),
        Err(TunerError::TooFewObservations(1))
    ));
}

#[test]
fn expected_improvement_examples() {
    assert_eq!(expected_improvement(1.0, 0.0, 1.0), 0.0);
    assert_eq!(expected_improvement(0.5, 0.0, 1.0), 0.5);
    assert!((expected_improvement(1.0, 1.0, 1.0) - 0.39894).abs() < 5e-6);
    let mut last = f64::INFINITY;
    for i in 0..50 {
        let ei = expected_improvement(-2.0 + 0.1 * i as f64, 0.7, 0.0);
        assert!(ei < last);
        last = ei;
    }
}

#[test]
fn ei_vanishes_at_noise_free_observations() {
    let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0]).collect();
    let y: Vec<f64> = x.iter().map(|v| (4.0 * v[0]).sin()).collect();
    let gp = GpModel::with_hyper(
        &x,
        &y,
        &[0],
        GpHyper {
            variance: 1.0,
            length_scales: vec![0.4],
            noise: 1e-12,
        },
    )
    .unwrap();
    let best = y.iter().copied().fold(f64::INFINITY, f64::min);
    for xi in &x {
        let (mu, s) = gp.predict(xi);
        assert!(expected_improvement(mu, s, best) < 1e-5);
    }
}

fn record(index: usize, config: HpConfig, objective: Option<f64>) -> TrialRecord {
    TrialRecord {
        index,
        config,
        feasible: objective.is_some(),
        objective,
        seed: index as u64,
        wall_time: 0.0,
    }
}

#[test]
fn empty_study_gets_random_suggestions() {
    let space = mixed_space();
    let study = Study::new(space.clone());
    let gp = GpBandit::default();
    let got = suggest_batch(&gp, &study, 4, 9);
    let mut r = rng(9);
    let want: Vec<HpConfig> = (0..4)
        .map(|_| {
            r.gen_bool(0.05);
            space.sample(&mut r)
        })
        .collect();
    assert_eq!(got, want);
    assert!(got.iter().all(|c| space.contains(c)));
}

#[test]
fn infeasible_on_empty_study_leaves_gp_unfit() {
    let space = mixed_space();
    let mut study = Study::new(space.clone());
    study.report(record(0, space.sample(&mut rng(1)), None));
    assert_eq!(study.trials.len(), 1);
    assert!(study.observations().unwrap().is_none());
    assert!(study.best().is_none());
    assert_eq!(suggest_batch(&GpBandit::default(), &study, 2, 3).len(), 2);
}

#[test]
fn report_drops_objective_of_infeasible_trials() {
    let mut study = Study::new(lr_space());
    let c = study.space.sample(&mut rng(0));
    study.report(TrialRecord {
        objective: Some(1.0),
        feasible: false,
        ..record(0, c.clone(), None)
    });
    study.report(record(1, c, Some(f64::NAN)));
    assert!(study.trials.iter().all(|t| !t.feasible && t.objective.is_none()));
}

fn bowl(c: &HpConfig) -> f64 {
    let x = c["x"].as_f64().unwrap();
    let y = c["y"].as_f64().unwrap();
    (x - 0.3).powi(2) + (y + 0.5).powi(2)
}

fn bowl_space() -> HpSpace {
    HpSpace::new()
        .with("x", Dim::Uniform { lo: 0.0, hi: 1.0 })
        .with("y", Dim::Uniform { lo: -2.0, hi: 2.0 })
        .with("dummy", Dim::categorical(&["p", "q", "r"]))
}

fn run_strategy(strategy: &dyn Strategy, space: &HpSpace, f: impl Fn(&HpConfig) -> f64, n: usize, seed: u64) -> Study {
    let mut study = Study::new(space.clone());
    let mut r = rng(seed);
    while study.trials.len() < n {
        for c in strategy.suggest(&study, &[], 1, &mut r) {
            let y = f(&c);
            let i = study.trials.len();
            study.report(record(i, c, Some(y)));
        }
    }
    study
}

#[test]
fn suggestions_stay_in_bounds_and_are_deterministic() {
    let space = bowl_space();
    let study = run_strategy(&GpBandit::default(), &space, bowl, 14, 1);
    assert!(study.trials.iter().all(|t| space.contains(&t.config)));
    let a = suggest_batch(&GpBandit::default(), &study, 3, 77);
    let b = suggest_batch(&GpBandit::default(), &study, 3, 77);
    assert_eq!(a, b);
    assert!(a.iter().all(|c| space.contains(c)));
    // Constant liar spreads a batch instead of repeating one point.
    assert_ne!(a[0], a[1]);
}

#[test]
fn best_so_far_is_monotone() {
    let study = run_strategy(&RandomSearch, &bowl_space(), bowl, 30, 2);
    let mut best = f64::INFINITY;
    let mut partial = Study::new(study.space.clone());
    for t in &study.trials {
        partial.report(t.clone());
        let b = partial.best_objective().unwrap();
        assert!(b <= best);
        best = b;
    }
}

#[test]
fn gp_beats_random_on_one_dimensional_quadratic() {
    let space = HpSpace::new().with("x", Dim::Uniform { lo: 0.0, hi: 1.0 });
    let f = |c: &HpConfig| (c["x"].as_f64().unwrap() - 0.3).powi(2);
    let wins = (0..10)
        .filter(|&seed| {
            let gp = run_strategy(&GpBandit::default(), &space, f, 40, seed).best_objective().unwrap();
            let rs = run_strategy(&RandomSearch, &space, f, 40, 1000 + seed).best_objective().unwrap();
            gp < rs
        })
        .count();
    assert!(wins >= 8, "gp won {wins} of 10");
}

#[test]
fn study_jsonl_round_trip() {
    let study = run_strategy(&RandomSearch, &mixed_space(), |c| c["u"].as_f64().unwrap(), 5, 3);
    let mut buf = Vec::new();
    study.write_jsonl(&mut buf).unwrap();
    let back = Study::read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(back, study);
    assert!(Study::read_jsonl(&b"{\"format\":\"other\",\"version\":1,\"space\":{\"params\":[]}}\n"[..]).is_err());
}

#[test]
fn strategies_by_name() {
    for name in STRATEGY_NAMES {
        assert_eq!(strategy(name).unwrap().name(), name);
    }
    assert!(strategy("tpe").is_err());
}

fn opts() -> SpaceOptions {
    SpaceOptions {
        steps: (200, 2000),
        n_params: 250,
    }
}

#[test]
fn standard_space_yields_valid_trials() {
    let task = TaskConfig::lookup("capacity").unwrap();
    for arch in ArchKind::ALL {
        let space = rnn_space(arch, &task, &opts());
        let mut r = rng(arch as u64);
        for _ in 0..50 {
            let c = space.sample(&mut r);
            let mut spec = NetworkSpec::new(arch, 2, 16, 4, 2);
            apply_network(&c, &mut spec).unwrap();
            Network::new(spec).unwrap();
            let mut opt = OptimizerConfig::default();
            apply_optimizer(&c, &mut opt).unwrap();
            opt.validate().unwrap();
            assert!((200..=2000).contains(&opt.steps));
            let mut t = task.clone();
            apply_task(&c, &mut t).unwrap();
            let TaskConfig::Capacity(cc) = t else { unreachable!() };
            assert!((25..=2500).contains(&cc.b));
        }
    }
    let arith = rnn_space(ArchKind::Lstm, &TaskConfig::lookup("arith").unwrap(), &opts());
    assert_eq!(arith.get("gap"), Some(&Dim::Int { lo: 1, hi: 6, log: false }));
    assert!(rnn_space(ArchKind::Rnn, &task, &opts()).get("forget_bias").is_none());
}

proptest! {
    #[test]
    fn encode_decode_round_trip(seed in 0u64..10_000) {
        let space = mixed_space();
        let c = space.sample(&mut rng(seed));
        let u = space.encode(&c).unwrap();
        prop_assert!(u.iter().all(|&x| (0.0..=1.0 + 1e-15).contains(&x)));
        let back = space.decode(&u).unwrap();
        for (k, v) in &c {
            match (v, &back[k]) {
                (HpValue::Float(a), HpValue::Float(b)) => prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0)),
                (a, b) => prop_assert_eq!(a, b),
            }
        }
    }

    #[test]
    fn kernel_matrix_is_positive_definite(seed in 0u64..1000, n in 2usize..30) {
        let mut r = rng(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| r.gen_range(0.0..1.0)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let hyper = GpHyper { variance: 1.0, length_scales: vec![r.gen_range(0.01..10.0); 3], noise: 1e-6 };
        prop_assert!(GpModel::with_hyper(&x, &y, &[0, 1, 2], hyper).is_ok());
    }

    #[test]
    fn ei_is_non_negative(mu in -10.0f64..10.0, sigma in 0.0f64..5.0, best in -10.0f64..10.0) {
        prop_assert!(expected_improvement(mu, sigma, best) >= 0.0);
    }
}
