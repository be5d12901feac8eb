use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::cells::{ArchKind, Network, NetworkSpec};

#[test]
fn capacity_dataset_shape_and_determinism() {
    let d = gen_capacity(4, 7, 3);
    assert_eq!(d.x.shape(), &[7, 4]);
    assert_eq!(d.y.len(), 7);
    assert_eq!(d, gen_capacity(4, 7, 3));
    assert_ne!(d, gen_capacity(4, 7, 4));
    let big = gen_capacity(8, 10_000, 1);
    let mean = big.x.data().iter().sum::<f64>() / big.x.len() as f64;
    assert!((0.49..=0.51).contains(&mean), "{mean}");
    assert!(big.x.data().iter().all(|&v| v == 0.0 || v == 1.0));
}

#[test]
fn capacity_train_and_validation_share_data() {
    let task = CapacityTask::new(CapacityConfig { b: 40, ..Default::default() }, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let full = task.train_batch(100, &mut rng);
    let val = &task.validation()[0];
    assert_eq!(full.input.steps[0], val.input.steps[0]);
    assert_eq!(full.targets[0].target, val.targets[0].target);
    assert_eq!(task.evaluation().len(), task.validation().len());
}

#[test]
fn accuracy_counting() {
    let target = Target::Classes {
        labels: vec![0, 1, 1, 0],
        classes: 2,
    };
    let right = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]]);
    let wrong = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
    let three = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 1.0]]);
    assert_eq!(count_correct(&right, &target), (4, 4));
    assert_eq!(count_correct(&wrong, &target), (0, 4));
    assert_eq!(count_correct(&three, &target), (3, 4));
}

#[test]
fn capacity_metrics_report_mutual_information() {
    let task = CapacityTask::new(CapacityConfig { b: 1000, ..Default::default() }, 5).unwrap();
    let stats = EvalStats {
        loss: 0.3,
        correct: 750,
        labelled: 1000,
    };
    let m = task.metrics(&stats, 100);
    assert!((m.extras["mi_bits"] - 188.7218755408671).abs() < 1e-9);
    assert_eq!(m.objective, -m.extras["mi_bits"]);
    assert!((m.extras["bpp"] - 1.887218755408671).abs() < 1e-12);
}

#[test]
fn memory_loss_references() {
    let s = gen_memory(64, 9);
    assert_eq!(s.input.len(), 64);
    assert_eq!(s.target(), &s.input[..]);
    let a = 3f64.sqrt();
    assert!(s.input.iter().all(|x| x.abs() <= a));

    let task = MemoryTask::new(MemoryConfig::default(), 2).unwrap();
    let mut total_zero = 0.0;
    for batch in task.evaluation() {
        let Target::Values { values, .. } = &batch.targets[0].target else { panic!() };
        assert_eq!(batch.targets[0].step, 11);
        assert_eq!(batch.input.len(), 12);
        assert!(batch.input.steps[1..].iter().all(Option::is_none));
        assert_eq!(task_loss(std::slice::from_ref(values), batch).unwrap(), 0.0);
        total_zero += task_loss(&[Tensor::zeros(values.shape())], batch).unwrap();
    }
    assert!((total_zero - 64.0).abs() < 2.0, "{total_zero}");
}

#[test]
fn memory_input_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let task = MemoryTask::new(MemoryConfig { n_in: 4, ..Default::default() }, 0).unwrap();
    let mut sums = [0.0; 4];
    let mut sq = [0.0; 4];
    let n = 100_000;
    for _ in 0..n / 1000 {
        let b = task.train_batch(1000, &mut rng);
        let x = b.input.steps[0].as_ref().unwrap();
        for r in 0..x.rows() {
            for (c, v) in x.row(r).iter().enumerate() {
                sums[c] += v;
                sq[c] += v * v;
            }
        }
    }
    for c in 0..4 {
        let mean = sums[c] / n as f64;
        let var = sq[c] / n as f64 - mean * mean;
        assert!((0.97..=1.03).contains(&var), "{var}");
    }
}

#[test]
fn rcf_weights_follow_power_law() {
    let beta = rcf_weights(1000, 5000.0);
    assert!((beta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(beta.windows(2).all(|w| w[0] > w[1]));
    assert!((beta[0] / beta[1] - 5002.0 / 5001.0).abs() < 1e-15);
    assert!((beta[0] / beta[1] - 1.00019996).abs() < 1e-8);
    let full = RcfConfig::default();
    assert_eq!((full.d, full.tau, full.steps), (50, 5000.0, 50));
}

#[test]
fn rcf_zero_prediction_loss_is_weighted_target_energy() {
    let task = RcfTask::new(RcfConfig { n: 600, d: 3, steps: 2, ..Default::default() }, 4).unwrap();
    let data = task.dataset();
    let direct: f64 = data.beta.iter().zip(&data.y).map(|(b, y)| b * y * y).sum();
    let mut total = 0.0;
    for batch in task.validation() {
        total += task_loss(&[Tensor::zeros(&[batch.rows(), 1])], batch).unwrap();
    }
    assert!((total - direct).abs() < 1e-12);
    let d2 = gen_rcf(600, 3, 5000.0, 4);
    assert_eq!(&d2, data);
}

/// Stack-based reference: push on open (up to nine deep), pop on close.
fn stack_count(text: &str, open: char, close: char) -> u8 {
    let mut stack = Vec::new();
    for c in text.chars() {
        if c == open && stack.len() < 9 {
            stack.push(c);
        } else if c == close {
            stack.pop();
        }
    }
    stack.len() as u8
}

#[test]
fn parens_worked_example() {
    let s = "(a{<a<bcb>[[[)";
    assert_eq!(count_parens(s, 3), 1);
    assert_eq!(count_parens(s, 1), 3);
    assert_eq!(count_parens("", 0), 0);
    assert_eq!(count_parens(")))", 0), 0);
    assert_eq!(count_parens(&"(".repeat(15), 0), 9);
    assert_eq!(count_parens(&format!("{})", "(".repeat(15)), 0), 8);
}

#[test]
fn parens_labels_match_stack_oracle() {
    for seed in 0..1000 {
        let s = gen_parens(10, 40, seed);
        for (k, &(open, close)) in PAREN_PAIRS.iter().enumerate() {
            let text = s.text(k);
            assert_eq!(s.labels[k][39], stack_count(&text, open, close), "{text}");
            assert_eq!(count_parens(&text, k), s.labels[k][39]);
        }
    }
}

#[test]
fn parens_noise_frequency() {
    let s = gen_parens(10, 10_000, 3);
    let total = 10 * 10_000;
    let noise = s.streams.iter().flatten().filter(|&&x| x >= 20).count();
    let frac = noise as f64 / total as f64;
    assert!((0.48..=0.52).contains(&frac), "{frac}");
}

#[test]
fn parens_encoding_and_uniform_loss() {
    let cfg = ParensConfig {
        types: 10,
        steps: 6,
        validation_samples: 3,
        evaluation_samples: 3,
        ..Default::default()
    };
    let task = ParensTask::new(cfg, 0).unwrap();
    assert_eq!(task.n_in(), 300);
    assert_eq!(task.n_out(), 100);
    let batch = &task.validation()[0];
    for x in batch.input.steps.iter().flatten() {
        for r in 0..x.rows() {
            assert_eq!(x.row(r).iter().sum::<f64>(), 10.0);
        }
    }
    let loss = task_loss(&[Tensor::zeros(&[3, 100])], batch).unwrap();
    assert!((loss - 10.0 * 10f64.ln()).abs() < 1e-12);
    let small = ParensTask::new(ParensConfig { types: 5, steps: 40, ..Default::default() }, 0).unwrap();
    assert_eq!(small.n_in(), 5 * 20);
}

#[test]
fn arith_examples() {
    assert_eq!(arith_answer("-343243+93851= ").unwrap(), "-249392");
    assert_eq!(arith_answer("0+0= ").unwrap(), "0");
    assert_eq!(arith_answer("-1+2= ").unwrap(), "1");
    assert!(arith_answer("1-2=").is_err());
    let s = encode_arith(-343243, 93851, 2).unwrap();
    assert_eq!(s.target_text(), "  -249392");
    assert_eq!(decode_answer(&s.target).unwrap(), -249392);
    assert_eq!(s.input.len(), 36);
    let text: String = s.input.iter().map(|&i| ARITH_ALPHABET[i]).collect();
    assert_eq!(text, format!("{}{:<21}{}", " ".repeat(4), "-343243+93851= ", " ".repeat(11)));
    assert!(encode_arith(1, 1, 0).is_err());
    assert!(encode_arith(10_000_001, 0, 1).is_err());
}

#[test]
fn arith_round_trip_matches_integer_addition() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let a = rng.gen_range(-10_000_000i64..=10_000_000);
        let b = rng.gen_range(-10_000_000i64..=10_000_000);
        let gap = rng.gen_range(1..=6);
        let s = encode_arith(a, b, gap).unwrap();
        assert_eq!(decode_answer(&s.target).unwrap(), a + b);
        let problem: String = s.input[6 - gap..6 - gap + 21].iter().map(|&i| ARITH_ALPHABET[i]).collect();
        assert_eq!(arith_answer(&problem).unwrap(), (a + b).to_string());
    }
    let s = gen_arith(3, 4).unwrap();
    assert_eq!(decode_answer(&s.target).unwrap(), s.a + s.b);
}

#[test]
fn arith_widest_problem_fits() {
    let s = encode_arith(-10_000_000, -10_000_000, 6).unwrap();
    assert_eq!(s.target_text(), "-20000000");
    assert_eq!(s.input[20], 13);
}

fn corpus() -> Arc<[u8]> {
    b"the quick brown fox jumps over the lazy dog. ".repeat(20).into()
}

#[test]
fn charlm_windows() {
    let c = corpus();
    let b = charlm_batch(&c, 64, 1).unwrap();
    assert!(b.windows.iter().all(|w| w.len() == CHARLM_STEPS + 1));
    assert!(b.offsets.iter().all(|&o| o <= c.len() - 51));
    assert_eq!(CharLmBatch::loss_steps().len(), 37);
    assert!(charlm_batch(&c[..50], 1, 0).is_err());

    let task = CharLmTask::new(CharLmConfig::default(), c, 0).unwrap();
    assert_eq!(task.vocab(), 28);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = task.train_batch(4, &mut rng);
    assert_eq!(batch.input.len(), 50);
    assert_eq!(batch.targets.len(), 37);
    assert_eq!(batch.targets[0].step, 13);
}

#[test]
fn perfect_predictions_have_zero_cross_entropy() {
    let task = ArithTask::new(ArithConfig { validation_samples: 5, ..Default::default() }, 1).unwrap();
    let batch = &task.validation()[0];
    let outputs: Vec<Tensor> = batch
        .targets
        .iter()
        .map(|st| {
            let Target::Classes { labels, classes } = &st.target else { panic!() };
            let mut t = Tensor::zeros(&[labels.len(), *classes]);
            for (r, &l) in labels.iter().enumerate() {
                t.set(r, l, 1000.0);
            }
            t
        })
        .collect();
    assert_eq!(task_loss(&outputs, batch).unwrap(), 0.0);
}

#[test]
fn tape_loss_matches_plain_loss() {
    let task = ParensTask::new(ParensConfig { types: 2, steps: 5, ..Default::default() }, 0).unwrap();
    let net = Network::new(NetworkSpec::new(ArchKind::Gru, 1, task.n_in(), 6, task.n_out())).unwrap();
    let params = net.init(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = task.train_batch(7, &mut rng);
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, &params);
    let un = net.forward_unroll(&mut tape, &vars, &batch.input, &batch.readout()).unwrap();
    let loss = batch_loss(&mut tape, &un, &batch).unwrap();
    let outputs: Vec<Tensor> = batch
        .targets
        .iter()
        .map(|st| tape.value(un.outputs[st.step].unwrap()).clone())
        .collect();
    let plain = task_loss(&outputs, &batch).unwrap();
    assert!((tape.value(loss).item() - plain).abs() < 1e-12);
}

#[test]
fn registry_builds_every_task() {
    for name in TASK_NAMES {
        let cfg = TaskConfig::lookup(name).unwrap();
        assert_eq!(cfg.name(), name);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TaskConfig>(&json).unwrap(), cfg);
    }
    assert!(TaskConfig::lookup("text8").is_err());
    let small = [
        TaskConfig::Capacity(CapacityConfig { b: 10, ..Default::default() }),
        TaskConfig::Memory(MemoryConfig { validation_samples: 4, evaluation_samples: 4, ..Default::default() }),
        TaskConfig::Rcf(RcfConfig { n: 20, ..Default::default() }),
        TaskConfig::Parens(ParensConfig { steps: 4, validation_samples: 4, evaluation_samples: 4, ..Default::default() }),
        TaskConfig::Arith(ArithConfig { validation_samples: 4, evaluation_samples: 4, ..Default::default() }),
    ];
    for cfg in small {
        let task = cfg.build(0, None).unwrap();
        assert_eq!(task.name(), cfg.name());
    }
    assert!(matches!(
        TaskConfig::CharLm(Default::default()).build(0, None),
        Err(TaskError::NoCorpus)
    ));
    assert!(TaskConfig::CharLm(Default::default()).build(0, Some(corpus())).is_ok());
}
