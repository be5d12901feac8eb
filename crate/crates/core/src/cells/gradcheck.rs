use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ArchKind, CellError, Network, NetworkSpec, Presentation, ReadoutSteps, SeqInput};
use crate::ndcore::{Activation, Tape, Tensor};

/// Outcome of comparing backprop against central differences on one network.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub arch: ArchKind,
    pub n_params: usize,
    pub max_rel_err: f64,
    /// Block holding the worst entry, as `layer/name`.
    pub worst_block: String,
    /// Parameter draws rejected for sitting too close to a relu kink.
    pub resamples: usize,
}

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Pre-activations closer than this to zero disqualify a relu draw.
pub const KINK_MARGIN: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, 1e-3)`.
///
/// Central differences on an O(1) loss carry roundoff near 1e-10, so
/// gradients below the floor are compared in absolute terms.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Checks every parameter of a random `arch` network of the given shape.
///
/// Inputs are presented at every step and the loss is half the squared
/// error against random targets summed over all steps. Parameters are
/// drawn from N(0, 0.5²).
pub fn gradient_check(
    arch: ArchKind,
    depth: usize,
    n_in: usize,
    n_h: usize,
    steps: usize,
    seed: u64,
) -> Result<GradCheck, CellError> {
    let n_out = 3;
    let batch = 2;
    let mut spec = NetworkSpec::new(arch, depth, n_in, n_h, n_out);
    if arch == ArchKind::Rnn {
        spec.nonlinearity = Activation::Tanh;
    }
    let net = Network::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, 0.5).expect("valid sd");
    let draw = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        Tensor::new(&[rows, cols], data).expect("sized")
    };
    let x = draw(batch, n_in, &mut rng);
    let targets: Vec<Tensor> = (0..steps).map(|_| draw(batch, n_out, &mut rng)).collect();
    let input = SeqInput::present(x, steps, Presentation::EveryStep);

    let loss = |values: &[f64], record: bool| -> Result<(f64, f64, Option<Vec<f64>>), CellError> {
        let mut tape = Tape::new();
        let vars = net.bind_values(&mut tape, values);
        let un = net.forward_unroll(&mut tape, &vars, &input, &ReadoutSteps::All)?;
        let mut total = None;
        for (out, target) in un.outputs.iter().zip(&targets) {
            let out = out.expect("all steps read out");
            let l = tape.squared_error(out, target, None, 0.5)?;
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        let total = total.expect("at least one step");
        let value = tape.value(total).item();
        let grads = if record {
            let g = tape.backward(total)?;
            Some(net.gather(&g, &vars))
        } else {
            None
        };
        Ok((value, tape.min_relu_margin(), grads))
    };

    let mut resamples = 0;
    let (values, analytic) = loop {
        let values: Vec<f64> = (0..net.param_count()).map(|_| dist.sample(&mut rng)).collect();
        let (_, margin, grads) = loss(&values, true)?;
        if margin > KINK_MARGIN {
            break (values, grads.expect("recorded"));
        }
        resamples += 1;
    };

    let mut worst = (0.0, 0);
    let mut probe = values.clone();
    for i in 0..values.len() {
        probe[i] = values[i] + FD_STEP;
        let (up, _, _) = loss(&probe, false)?;
        probe[i] = values[i] - FD_STEP;
        let (down, _, _) = loss(&probe, false)?;
        probe[i] = values[i];
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = relative_error(analytic[i], numeric);
        if std::env::var_os("RNNLAB_GRADCHECK_TRACE").is_some() && err > 1e-7 {
            eprintln!("{i}: analytic {} numeric {numeric} err {err}", analytic[i]);
        }
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
    }
    let block = net
        .blocks()
        .iter()
        .find(|b| b.range().contains(&worst.1))
        .expect("index inside layout");
    let layer = block.layer.map_or("readout".to_string(), |l| l.to_string());
    Ok(GradCheck {
        arch,
        n_params: net.param_count(),
        max_rel_err: worst.0,
        worst_block: format!("{layer}/{}", block.spec.name),
        resamples,
    })
}
