use proptest::prelude::*;

use super::*;
use crate::ndcore::{sigmoid, Activation, Tape, Tensor};

fn v(data: &[f64]) -> Tensor {
    Tensor::vector(data.to_vec())
}

fn close(a: &Tensor, b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len(), "{a:?} vs {b:?}");
    for (x, y) in a.data().iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

#[test]
fn vanilla_zero_weights_give_zero() {
    let p = CellParams::zeros(ArchKind::Rnn, 2, 2);
    let h = step_vanilla(&p, &v(&[0.3, -0.7]), &v(&[1.0, 2.0])).unwrap();
    close(&h, &[0.0, 0.0], 0.0);
}

#[test]
fn irnn_identity_integrates() {
    let mut p = CellParams::zeros(ArchKind::Irnn, 2, 2);
    p.set("W^h", Tensor::eye(2)).unwrap();
    let h = step_vanilla(&p, &v(&[1.0, 2.0]), &v(&[5.0, 5.0])).unwrap();
    close(&h, &[1.0, 2.0], 0.0);
}

#[test]
fn vanilla_swap_matrix() {
    let mut p = CellParams::zeros(ArchKind::Rnn, 2, 2);
    p.set("W^h", Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]))
        .unwrap();
    let h = step_vanilla(&p, &v(&[1.0, 0.0]), &v(&[0.0, 0.0])).unwrap();
    close(&h, &[0.0, 0.761594155955765], 1e-12);
}

#[test]
fn ugrnn_examples() {
    let p = CellParams::zeros(ArchKind::Ugrnn, 1, 2);
    let h = step_ugrnn(&p, &v(&[0.4, -2.0]), &v(&[1.0])).unwrap();
    close(&h, &[0.2, -1.0], 1e-15);

    let mut sat = CellParams::zeros(ArchKind::Ugrnn, 1, 2);
    sat.set("b^fg", Tensor::scalar(30.0)).unwrap();
    let h = step_ugrnn(&sat, &v(&[0.4, -2.0]), &v(&[1.0])).unwrap();
    close(&h, &[0.4, -2.0], 1e-12);

    let mut p = CellParams::zeros(ArchKind::Ugrnn, 1, 1);
    p.set("b^c", v(&[1.0])).unwrap();
    let h = step_ugrnn(&p, &v(&[0.0]), &v(&[0.0])).unwrap();
    close(&h, &[0.380797077977882], 1e-12);
}

#[test]
fn gru_examples() {
    let p = CellParams::zeros(ArchKind::Gru, 1, 2);
    let h = step_gru(&p, &v(&[0.4, -2.0]), &v(&[1.0])).unwrap();
    close(&h, &[0.2, -1.0], 1e-15);

    let mut sat = CellParams::zeros(ArchKind::Gru, 1, 2);
    sat.set("b^fg", Tensor::scalar(30.0)).unwrap();
    let h = step_gru(&sat, &v(&[0.4, -2.0]), &v(&[1.0])).unwrap();
    close(&h, &[0.4, -2.0], 1e-12);

    let mut p = CellParams::zeros(ArchKind::Gru, 1, 1);
    p.set("W^ch", Tensor::eye(1)).unwrap();
    let h = step_gru(&p, &v(&[1.0]), &v(&[0.0])).unwrap();
    close(&h, &[0.5 + 0.5 * 0.5f64.tanh()], 1e-15);
    close(&h, &[0.731058578630005], 1e-12);
}

#[test]
fn lstm_examples() {
    let p = CellParams::zeros(ArchKind::Lstm, 1, 2);
    let (h, c) = step_lstm(&p, &v(&[0.3, 0.1]), &v(&[1.0, -3.0]), &v(&[2.0])).unwrap();
    close(&c, &[0.5, -1.5], 1e-15);
    close(&h, &[0.5 * 0.5f64.tanh(), 0.5 * (-1.5f64).tanh()], 1e-15);

    let mut sat = CellParams::zeros(ArchKind::Lstm, 1, 2);
    sat.set("b^fg", Tensor::scalar(30.0)).unwrap();
    let (_, c) = step_lstm(&sat, &v(&[0.0, 0.0]), &v(&[1.0, -3.0]), &v(&[2.0])).unwrap();
    close(&c, &[1.0, -3.0], 1e-12);

    let p = CellParams::zeros(ArchKind::Lstm, 1, 1);
    let (h, c) = step_lstm(&p, &v(&[0.0]), &v(&[2.0]), &v(&[0.0])).unwrap();
    close(&c, &[1.0], 1e-15);
    close(&h, &[0.380797077977882], 1e-12);
}

#[test]
fn plus_rnn_examples() {
    let p = CellParams::zeros(ArchKind::PlusRnn, 2, 2);
    let (y, h) = step_plus_rnn(&p, &v(&[0.4, -2.0]), &v(&[1.0, 3.0])).unwrap();
    close(&y, &[0.5, 1.5], 1e-15);
    close(&h, &[0.2, -1.0], 1e-15);

    let mut sat = CellParams::zeros(ArchKind::PlusRnn, 2, 2);
    sat.set("b^fg,h", Tensor::scalar(30.0)).unwrap();
    sat.set("b^fg,y", Tensor::scalar(30.0)).unwrap();
    let (y, h) = step_plus_rnn(&sat, &v(&[0.4, -2.0]), &v(&[1.0, 3.0])).unwrap();
    close(&y, &[1.0, 3.0], 1e-12);
    close(&h, &[0.4, -2.0], 1e-12);

    let mut p = CellParams::zeros(ArchKind::PlusRnn, 1, 1);
    p.set("b^y", v(&[1.0])).unwrap();
    let (y, h) = step_plus_rnn(&p, &v(&[0.0]), &v(&[0.0])).unwrap();
    close(&y, &[0.5], 1e-15);
    close(&h, &[0.0], 0.0);
}

#[test]
fn plus_rnn_without_depth_gate_passes_candidate() {
    let mut p = CellParams::zeros(ArchKind::PlusRnn, 3, 2);
    assert!(p.get("b^fg,y").is_none());
    p.set("b^y", v(&[1.0, -1.0])).unwrap();
    let (y, _) = step_plus_rnn(&p, &v(&[0.0, 0.0]), &v(&[7.0, 7.0, 7.0])).unwrap();
    close(&y, &[1.0, 0.0], 0.0);
}

#[test]
fn kernel_rejects_wrong_arch_and_width() {
    let p = CellParams::zeros(ArchKind::Gru, 1, 2);
    assert!(step_lstm(&p, &v(&[0.0, 0.0]), &v(&[0.0, 0.0]), &v(&[0.0])).is_err());
    assert!(step_gru(&p, &v(&[0.0, 0.0]), &v(&[0.0, 0.0])).is_err());
    let mut p = CellParams::zeros(ArchKind::Rnn, 2, 2);
    assert!(p.set("W^h", Tensor::eye(3)).is_err());
    assert!(matches!(p.set("W^q", Tensor::eye(2)), Err(CellError::UnknownBlock(_))));
}

#[test]
fn registry_names_round_trip() {
    for arch in ArchKind::ALL {
        assert_eq!(arch.name().parse::<ArchKind>().unwrap(), arch);
        assert_eq!(arch.architecture().kind(), arch);
    }
    assert_eq!("+RNN".parse::<ArchKind>().unwrap(), ArchKind::PlusRnn);
    assert!("transformer".parse::<ArchKind>().is_err());
}

#[test]
fn parameter_counts_by_hand() {
    assert_eq!(param_count(&NetworkSpec::new(ArchKind::Rnn, 1, 2, 3, 1)), 25);
    assert_eq!(param_count(&NetworkSpec::new(ArchKind::Gru, 1, 2, 3, 1)), 62);
    // 4 gates of 18, two initial states, readout, b^fg.
    assert_eq!(param_count(&NetworkSpec::new(ArchKind::Lstm, 1, 2, 3, 1)), 72 + 6 + 4 + 1);
}

#[test]
fn parameter_count_matches_allocation() {
    for arch in ArchKind::ALL {
        for depth in [2, 4] {
            let spec = NetworkSpec::new(arch, depth, 5, 4, 3);
            let params = init_params(&spec, 1).unwrap();
            assert_eq!(params.values.len(), param_count(&spec), "{arch}");
        }
    }
}

#[test]
fn budget_sizing() {
    assert_eq!(units_for_budget(ArchKind::Rnn, 1, 2, 1, 100).unwrap(), 7);
    assert_eq!(param_count(&NetworkSpec::new(ArchKind::Rnn, 1, 2, 7, 1)), 85);
    assert_eq!(param_count(&NetworkSpec::new(ArchKind::Rnn, 1, 2, 8, 1)), 105);
    assert_eq!(units_for_budget(ArchKind::Rnn, 1, 2, 1, 85).unwrap(), 7);
    assert!(matches!(
        units_for_budget(ArchKind::Rnn, 1, 2, 1, 3),
        Err(CellError::BudgetTooSmall { budget: 3, .. })
    ));
}

#[test]
fn construction_constraints() {
    let mut rnn = NetworkSpec::new(ArchKind::Rnn, 1, 2, 3, 1);
    rnn.init.square = SquareInit::Identity;
    assert!(matches!(Network::new(rnn), Err(CellError::Forbidden { .. })));

    let mut irnn = NetworkSpec::new(ArchKind::Irnn, 1, 2, 3, 1);
    irnn.nonlinearity = Activation::Tanh;
    assert!(Network::new(irnn).is_err());
    let mut irnn = NetworkSpec::new(ArchKind::Irnn, 1, 2, 3, 1);
    irnn.init.square = SquareInit::Orthogonal;
    assert!(Network::new(irnn).is_err());

    let plus = NetworkSpec::new(ArchKind::PlusRnn, 1, 2, 3, 1);
    assert_eq!(Network::new(plus).unwrap_err(), CellError::DepthOne(ArchKind::PlusRnn));
    assert!(Network::new(NetworkSpec::new(ArchKind::Gru, 0, 2, 3, 1)).is_err());
}

#[test]
fn identity_needs_square() {
    let mut rng = rand::SeedableRng::seed_from_u64(0);
    assert!(matches!(
        init_matrix(SquareInit::Identity, 2, 3, 1.0, &mut rng),
        Err(CellError::NonSquareIdentity { rows: 2, cols: 3 })
    ));
}

#[test]
fn irnn_init_is_identity_with_zero_biases() {
    let mut spec = NetworkSpec::new(ArchKind::Irnn, 1, 3, 4, 2);
    spec.init.bias_scale = 1.5;
    let net = Network::new(spec).unwrap();
    let p = net.init(9).unwrap();
    assert_eq!(p.block(&net, Some(0), "W^h").unwrap(), Tensor::eye(4).data());
    assert!(p.block(&net, Some(0), "b^h").unwrap().iter().all(|&b| b == 0.0));
}

#[test]
fn orthogonal_init_is_orthogonal() {
    let mut spec = NetworkSpec::new(ArchKind::Gru, 1, 3, 24, 2);
    spec.init.recurrent_scale = 1.0;
    let net = Network::new(spec).unwrap();
    let p = net.init(4).unwrap();
    for name in ["W^rh", "W^uh", "W^ch"] {
        let w = Tensor::new(&[24, 24], p.block(&net, Some(0), name).unwrap().to_vec()).unwrap();
        let wtw = crate::ndcore::matmul(&w.transpose(), &w).unwrap();
        assert!(wtw.max_abs_diff(&Tensor::eye(24)) < 1e-8, "{name}");
    }
}

#[test]
fn normal_init_spread() {
    let mut spec = NetworkSpec::new(ArchKind::Rnn, 1, 4, 256, 1);
    spec.init.square = SquareInit::Normal;
    let net = Network::new(spec).unwrap();
    let p = net.init(17).unwrap();
    let w = p.block(&net, Some(0), "W^h").unwrap();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let sd = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((0.9 / 16.0..=1.1 / 16.0).contains(&sd), "sd {sd}");
}

#[test]
fn gate_bias_is_frozen_and_set_from_config() {
    let mut spec = NetworkSpec::new(ArchKind::PlusRnn, 2, 3, 3, 1);
    spec.init.forget_bias = 2.5;
    let net = Network::new(spec).unwrap();
    let p = net.init(0).unwrap();
    let mask = net.trainable_mask();
    for b in net.blocks() {
        let frozen = b.spec.name.starts_with("b^fg");
        assert_eq!(mask[b.offset], !frozen, "{}", b.spec.name);
        if frozen {
            assert_eq!(p.values[b.offset], 2.5);
        }
    }
    assert_eq!(mask.iter().filter(|m| !**m).count(), 4);
}

fn net_with(spec: NetworkSpec, seed: u64) -> (Network, NetworkParams) {
    let net = Network::new(spec).unwrap();
    let p = net.init(seed).unwrap();
    (net, p)
}

fn run(net: &Network, p: &NetworkParams, input: &SeqInput, readout: ReadoutSteps) -> (Tape, Unrolled) {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, p);
    let un = net.forward_unroll(&mut tape, &vars, input, &readout).unwrap();
    (tape, un)
}

#[test]
fn single_step_unroll_is_step_plus_readout() {
    let (net, p) = net_with(NetworkSpec::new(ArchKind::Gru, 1, 2, 3, 2), 5);
    let x = Tensor::from_rows(&[vec![0.5, -1.0]]);
    let input = SeqInput::present(x.clone(), 1, Presentation::FirstStep);
    let (tape, un) = run(&net, &p, &input, ReadoutSteps::All);
    let mut cell = CellParams::zeros(ArchKind::Gru, 2, 3);
    for b in net.blocks().iter().filter(|b| b.layer == Some(0) && b.spec.name != "h0") {
        cell.set(b.spec.name, Tensor::vector(p.values[b.range()].to_vec())).unwrap();
    }
    let h0 = Tensor::vector(p.block(&net, Some(0), "h0").unwrap().to_vec());
    let h = step_gru(&cell, &h0, &x).unwrap();
    let w = Tensor::new(&[3, 2], p.block(&net, None, "W^out").unwrap().to_vec()).unwrap();
    let mut out = crate::ndcore::matmul(&h, &w).unwrap();
    for (o, b) in out.data_mut().iter_mut().zip(p.block(&net, None, "b^out").unwrap()) {
        *o += b;
    }
    assert!(tape.value(un.outputs[0].unwrap()).max_abs_diff(&out) < 1e-14);
}

#[test]
fn readout_selection() {
    let (net, p) = net_with(NetworkSpec::new(ArchKind::Rnn, 1, 2, 3, 2), 5);
    let input = SeqInput::present(Tensor::zeros(&[4, 2]), 6, Presentation::EveryStep);
    let (_, un) = run(&net, &p, &input, ReadoutSteps::Final);
    assert_eq!(un.outputs.iter().filter(|o| o.is_some()).count(), 1);
    assert!(un.outputs[5].is_some());
    let (_, un) = run(&net, &p, &input, ReadoutSteps::At(vec![1, 3]));
    let got: Vec<_> = (0..6).filter(|&t| un.outputs[t].is_some()).collect();
    assert_eq!(got, vec![1, 3]);
}

#[test]
fn unroll_rejects_bad_width() {
    let (net, p) = net_with(NetworkSpec::new(ArchKind::Rnn, 1, 2, 3, 2), 5);
    let input = SeqInput::present(Tensor::zeros(&[1, 3]), 2, Presentation::EveryStep);
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, &p);
    assert!(net.forward_unroll(&mut tape, &vars, &input, &ReadoutSteps::All).is_err());
}

#[test]
fn saturated_ugrnn_carries_first_step() {
    let mut spec = NetworkSpec::new(ArchKind::Ugrnn, 2, 3, 5, 1);
    spec.init.forget_bias = 30.0;
    spec.init.recurrent_scale = 0.1;
    spec.init.input_scale = 0.1;
    let (net, p) = net_with(spec, 3);
    let x = Tensor::from_rows(&[vec![1.0, -2.0, 0.5]]);
    let input = SeqInput::present(x, 12, Presentation::FirstStep);
    let (tape, un) = run(&net, &p, &input, ReadoutSteps::Final);
    let first = tape.value(un.states[0][1].h);
    let last = tape.value(un.states[11][1].h);
    assert!(first.max_abs_diff(last) < 1e-9);
}

#[test]
fn deep_lstm_matches_manual_composition() {
    let spec = NetworkSpec::new(ArchKind::Lstm, 2, 3, 4, 2);
    let (net, mut p) = net_with(spec, 21);
    // Non-zero initial states make the composition check meaningful.
    for (i, x) in p.values.iter_mut().enumerate() {
        *x += 0.01 * ((i % 7) as f64 - 3.0);
    }
    let xs: Vec<Tensor> = (0..3)
        .map(|t| Tensor::from_rows(&[vec![t as f64 * 0.3, -0.2, 1.0 - t as f64]]))
        .collect();
    let input = SeqInput {
        batch: 1,
        steps: xs.iter().cloned().map(Some).collect(),
    };
    let (tape, un) = run(&net, &p, &input, ReadoutSteps::All);

    let layer_params = |l: usize, n_x: usize| {
        let mut cell = CellParams::zeros(ArchKind::Lstm, n_x, 4);
        for b in net.blocks().iter().filter(|b| b.layer == Some(l)) {
            if b.spec.name != "h0" && b.spec.name != "c0" {
                cell.set(b.spec.name, Tensor::vector(p.values[b.range()].to_vec())).unwrap();
            }
        }
        cell
    };
    let cells = [layer_params(0, 3), layer_params(1, 4)];
    let mut hs: Vec<Tensor> = (0..2)
        .map(|l| Tensor::vector(p.block(&net, Some(l), "h0").unwrap().to_vec()))
        .collect();
    let mut cs: Vec<Tensor> = (0..2)
        .map(|l| Tensor::vector(p.block(&net, Some(l), "c0").unwrap().to_vec()))
        .collect();
    let w = Tensor::new(&[4, 2], p.block(&net, None, "W^out").unwrap().to_vec()).unwrap();
    let b = p.block(&net, None, "b^out").unwrap();
    for (t, x) in xs.iter().enumerate() {
        let mut below = x.clone();
        for l in 0..2 {
            let (h, c) = step_lstm(&cells[l], &hs[l], &cs[l], &below).unwrap();
            hs[l] = h.clone();
            cs[l] = c;
            below = h;
        }
        let mut out = crate::ndcore::matmul(&below, &w).unwrap();
        for (o, b) in out.data_mut().iter_mut().zip(b) {
            *o += b;
        }
        assert!(tape.value(un.outputs[t].unwrap()).max_abs_diff(&out) < 1e-13);
    }
}

#[test]
fn network_gradients_match_finite_differences() {
    for arch in ArchKind::ALL {
        let check = gradient_check(arch, 2, 3, 4, 3, 11).unwrap();
        assert!(
            check.max_rel_err < 1e-6,
            "{arch}: {} at {}",
            check.max_rel_err,
            check.worst_block
        );
    }
}

#[test]
fn kernel_gradients_wrt_state_and_input() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    for arch in ArchKind::ALL {
        let n = 3;
        let blocks = arch.architecture().layer_blocks(n, n);
        let values: Vec<Tensor> = blocks
            .iter()
            .map(|b| {
                let d = (0..b.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Tensor::new(&[b.rows, b.cols], d).unwrap()
            })
            .collect();
        let h = Tensor::new(&[1, n], (0..n).map(|i| 0.3 * i as f64 - 0.2).collect()).unwrap();
        let c = Tensor::new(&[1, n], vec![0.5, -0.4, 0.9]).unwrap();
        let x = Tensor::new(&[1, n], vec![0.7, 0.1, -0.6]).unwrap();
        let s = if arch == ArchKind::Irnn { Activation::Relu } else { Activation::Tanh };
        let eval = |h: &Tensor, c: &Tensor, x: &Tensor, grad: bool| {
            let mut tape = Tape::new();
            let bs: Vec<_> = values.iter().map(|t| tape.constant(t.clone())).collect();
            let (hv, cv, xv) = (tape.leaf(h.clone()), tape.leaf(c.clone()), tape.leaf(x.clone()));
            let out = arch
                .architecture()
                .step(
                    &mut tape,
                    StepIo {
                        blocks: &bs,
                        h: hv,
                        c: arch.architecture().has_cell_state().then_some(cv),
                        x: Some(xv),
                        s,
                    },
                )
                .unwrap();
            let a = tape.sum(out.h);
            let b = tape.sum(out.output);
            let b = tape.scale(b, 0.7);
            let total = tape.add(a, b).unwrap();
            let total = match out.c {
                Some(cc) => {
                    let sc = tape.sum(cc);
                    tape.add(total, sc).unwrap()
                }
                None => total,
            };
            let value = tape.value(total).item();
            let g = grad.then(|| {
                let g = tape.backward(total).unwrap();
                [g.wrt(hv), g.wrt(cv), g.wrt(xv)]
            });
            (value, g)
        };
        let (_, g) = eval(&h, &c, &x, true);
        let g = g.unwrap();
        let inputs = [&h, &c, &x];
        for (k, base) in inputs.iter().enumerate() {
            for i in 0..n {
                let mut up = [h.clone(), c.clone(), x.clone()];
                let mut down = [h.clone(), c.clone(), x.clone()];
                up[k].data_mut()[i] = base.data()[i] + FD_STEP;
                down[k].data_mut()[i] = base.data()[i] - FD_STEP;
                let fu = eval(&up[0], &up[1], &up[2], false).0;
                let fd = eval(&down[0], &down[1], &down[2], false).0;
                let numeric = (fu - fd) / (2.0 * FD_STEP);
                let err = relative_error(g[k].data()[i], numeric);
                assert!(err < 1e-6, "{arch} input {k}[{i}]: {err}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn budget_is_tight(arch_i in 0usize..6, depth in 1usize..4, n_in in 1usize..20, budget in 200usize..5000) {
        let arch = ArchKind::ALL[arch_i];
        let depth = depth.max(arch.min_depth());
        if let Ok(n_h) = units_for_budget(arch, depth, n_in, 2, budget) {
            prop_assert!(param_count(&NetworkSpec::new(arch, depth, n_in, n_h, 2)) <= budget);
            prop_assert!(param_count(&NetworkSpec::new(arch, depth, n_in, n_h + 1, 2)) > budget);
        }
    }

    #[test]
    fn gates_stay_in_open_interval(z in -30.0f64..30.0) {
        let g = sigmoid(z);
        prop_assert!(g > 0.0 && g < 1.0);
    }

    #[test]
    fn coupled_gate_keeps_tanh_state_bounded(seed in 0u64..1000, arch_i in 0usize..3) {
        let arch = [ArchKind::Ugrnn, ArchKind::Gru, ArchKind::PlusRnn][arch_i];
        let mut spec = NetworkSpec::new(arch, 2, 3, 4, 1);
        spec.init.bias_mode = BiasMode::Normal;
        spec.init.bias_scale = 1.0;
        let (net, p) = net_with(spec, seed);
        let x = Tensor::from_rows(&[vec![3.0, -3.0, 1.0]]);
        let (tape, un) = run(&net, &p, &SeqInput::present(x, 8, Presentation::EveryStep), ReadoutSteps::Final);
        for states in &un.states {
            for s in states {
                prop_assert!(tape.value(s.h).data().iter().all(|h| h.abs() <= 1.0));
            }
        }
    }

    #[test]
    fn saturated_recurrent_gate_carries_state(seed in 0u64..1000, arch_i in 0usize..4, steps in 2usize..100) {
        let arch = [ArchKind::Ugrnn, ArchKind::Gru, ArchKind::Lstm, ArchKind::PlusRnn][arch_i];
        let mut spec = NetworkSpec::new(arch, 2, 3, 3, 1);
        spec.init.forget_bias = 30.0;
        spec.init.recurrent_scale = 0.05;
        spec.init.input_scale = 0.05;
        let (net, mut p) = net_with(spec, seed);
        if arch == ArchKind::Lstm {
            // The input gate is not coupled to the forget gate, so the
            // candidate must vanish once the input is gone for c to be
            // carried. Layer 1 keeps seeing layer 0's h as input.
            for (l, names) in [(0, &["W^ch", "b^c"][..]), (1, &["W^cx", "W^ch", "b^c"][..])] {
                for &name in names {
                    let r = net.block(Some(l), name).unwrap().range();
                    p.values[r].fill(0.0);
                }
            }
        }
        let x = Tensor::from_rows(&[vec![1.0, 0.5, -1.0]]);
        let (tape, un) = run(&net, &p, &SeqInput::present(x, steps, Presentation::FirstStep), ReadoutSteps::Final);
        for l in 0..2 {
            let (first, last) = (&un.states[0][l], &un.states[steps - 1][l]);
            let (a, b) = match (first.c, last.c) {
                (Some(a), Some(b)) => (a, b),
                _ => (first.h, last.h),
            };
            prop_assert!(tape.value(a).max_abs_diff(tape.value(b)) < 1e-8);
        }
    }
}
