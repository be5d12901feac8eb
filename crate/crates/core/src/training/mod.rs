//! Optimizers, the learning-rate schedule, gradient clipping and the trial
//! training loop with divergence detection.

mod optim;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cells::{CellError, Network, NetworkParams};
use crate::ndcore::{sigmoid, Tape};
use crate::tasks::{batch_loss, count_correct, Batch, EvalStats, Metrics, Task, TaskError};

pub use optim::{Adam, Momentum, Optimizer, OptimizerKind, RmsProp, Sgd, ADAM_BETA2, OPT_EPSILON};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("{params} parameters but {grads} gradient or state entries")]
    Shape { params: usize, grads: usize },
    #[error("network expects {net_in} inputs and {net_out} outputs, task has {task_in} and {task_out}")]
    Widths {
        net_in: usize,
        net_out: usize,
        task_in: usize,
        task_out: usize,
    },
    #[error("invalid optimizer configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// Rescale the whole gradient when its L2 norm exceeds the threshold.
    #[default]
    Norm,
    /// Clamp every entry to `[−c, c]`.
    Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr0: f64,
    /// Factor the learning rate has decayed by after `steps` steps.
    pub decay: f64,
    pub momentum_logit: f64,
    pub clip: f64,
    pub clip_mode: ClipMode,
    pub l2: f64,
    pub steps: usize,
    pub batch: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr0: 1e-3,
            decay: 1.0,
            momentum_logit: 2.197_224_577_336_219_6,
            clip: 10.0,
            clip_mode: ClipMode::Norm,
            l2: 0.0,
            steps: 1000,
            batch: 32,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |what: &str| Err(TrainError::Config(what.to_string()));
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            return bad("lr0 must be finite and non-negative");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must lie in (0, 1]");
        }
        if self.clip.is_nan() || self.clip <= 0.0 {
            return bad("clip must be positive");
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return bad("l2 must be finite and non-negative");
        }
        if !self.momentum_logit.is_finite() {
            return bad("momentum_logit must be finite");
        }
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        Ok(())
    }
}

/// `lr0 · decay^(t/S)`.
pub fn lr_at(config: &OptimizerConfig, t: usize) -> f64 {
    if config.steps == 0 {
        return config.lr0;
    }
    config.lr0 * config.decay.powf(t as f64 / config.steps as f64)
}

pub fn momentum_from_logit(u: f64) -> f64 {
    sigmoid(u)
}

pub fn clip(g: &[f64], c: f64, mode: ClipMode) -> Vec<f64> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, c, mode);
    out
}

pub fn clip_in_place(g: &mut [f64], c: f64, mode: ClipMode) {
    match mode {
        ClipMode::Norm => {
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > c {
                let s = c / norm;
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
        ClipMode::Value => g.iter_mut().for_each(|x| *x = x.clamp(-c, c)),
    }
}

/// Loss of one batch and its gradient in the flat parameter layout.
pub fn loss_and_grad(net: &Network, values: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>), TrainError> {
    let mut tape = Tape::new();
    let vars = net.bind_values(&mut tape, values);
    let un = net.forward_unroll(&mut tape, &vars, &batch.input, &batch.readout())?;
    let loss = batch_loss(&mut tape, &un, batch)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss).map_err(CellError::from)?;
    Ok((value, net.gather(&grads, &vars)))
}

/// Summed loss and argmax counts over every target of every batch.
pub fn evaluate(net: &Network, values: &[f64], batches: &[Batch]) -> Result<EvalStats, TrainError> {
    let mut stats = EvalStats::default();
    for batch in batches {
        let mut tape = Tape::new();
        let vars = net.bind_values(&mut tape, values);
        let un = net.forward_unroll(&mut tape, &vars, &batch.input, &batch.readout())?;
        let loss = batch_loss(&mut tape, &un, batch)?;
        stats.loss += tape.value(loss).item();
        for st in &batch.targets {
            let out = un.outputs[st.step].expect("readout at every loss step");
            let (hits, n) = count_correct(tape.value(out), &st.target);
            stats.correct += hits;
            stats.labelled += n;
        }
    }
    Ok(stats)
}

/// Steps between validation passes for a run of `steps` steps.
pub fn eval_interval(steps: usize) -> usize {
    (steps / 100).max(50)
}

/// Multiple of the step-0 training loss beyond which a run counts as diverged.
pub const DIVERGENCE_FACTOR: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub params: NetworkParams,
    /// Training minibatch loss of every executed step, measured before
    /// that step's update.
    pub train_trace: Vec<f64>,
    /// `(step, validation loss)`; the last entry is taken after the final update.
    pub validation_trace: Vec<(usize, f64)>,
    /// Metrics of the final parameters on the validation set.
    pub validation: Option<Metrics>,
    /// Metrics of the final parameters on the evaluation set.
    pub evaluation: Option<Metrics>,
    pub feasible: bool,
    /// Updates applied.
    pub steps: usize,
    /// Step whose loss, gradient or update was non-finite or exceeded the
    /// divergence threshold.
    pub diverged_at: Option<usize>,
}

impl TrainResult {
    /// The value a tuner minimizes, absent for diverged runs.
    pub fn objective(&self) -> Option<f64> {
        self.validation.as_ref().map(|m| m.objective)
    }
}

fn data_seed(seed: u64) -> u64 {
    seed ^ 0x6d69_6e69_6261_7463
}

/// Trains freshly initialized parameters on `task` for `opt.steps` steps.
///
/// Network parameters are drawn from `seed`, and so is the minibatch stream.
pub fn train_trial(net: &Network, task: &dyn Task, opt: &OptimizerConfig, seed: u64) -> Result<TrainResult, TrainError> {
    let params = net.init(seed)?;
    train_from(net, task, opt, seed, params)
}

/// [`train_trial`] starting from given parameters.
pub fn train_from(
    net: &Network,
    task: &dyn Task,
    opt: &OptimizerConfig,
    seed: u64,
    mut params: NetworkParams,
) -> Result<TrainResult, TrainError> {
    opt.validate()?;
    let spec = net.spec();
    if spec.n_in != task.n_in() || spec.n_out != task.n_out() {
        return Err(TrainError::Widths {
            net_in: spec.n_in,
            net_out: spec.n_out,
            task_in: task.n_in(),
            task_out: task.n_out(),
        });
    }
    if params.values.len() != net.param_count() {
        return Err(TrainError::Shape {
            params: net.param_count(),
            grads: params.values.len(),
        });
    }
    let mask = net.trainable_mask();
    let mut optimizer = opt.kind.build(params.values.len(), opt.momentum_logit);
    let mut rng = ChaCha8Rng::seed_from_u64(data_seed(seed));
    let interval = eval_interval(opt.steps);

    let mut result = TrainResult {
        params: params.clone(),
        train_trace: Vec::with_capacity(opt.steps),
        validation_trace: Vec::new(),
        validation: None,
        evaluation: None,
        feasible: true,
        steps: 0,
        diverged_at: None,
    };
    let mut initial = None;
    for t in 0..opt.steps {
        if t % interval == 0 {
            let v = evaluate(net, &params.values, task.validation())?;
            result.validation_trace.push((t, v.loss));
        }
        let batch = task.train_batch(opt.batch, &mut rng);
        let (loss, mut grads) = loss_and_grad(net, &params.values, &batch)?;
        result.train_trace.push(loss);
        let l0 = *initial.get_or_insert(loss);
        let diverged = !loss.is_finite()
            || loss > DIVERGENCE_FACTOR * l0.max(f64::MIN_POSITIVE)
            || grads.iter().any(|g| !g.is_finite());
        if !diverged {
            for ((g, &p), &m) in grads.iter_mut().zip(&params.values).zip(&mask) {
                *g = if m { *g + opt.l2 * p } else { 0.0 };
            }
            clip_in_place(&mut grads, opt.clip, opt.clip_mode);
            optimizer.step(&mut params.values, &grads, lr_at(opt, t), Some(&mask))?;
            result.steps += 1;
        }
        if diverged || params.values.iter().any(|p| !p.is_finite()) {
            result.feasible = false;
            result.diverged_at = Some(t);
            break;
        }
    }

    if result.feasible {
        let v = evaluate(net, &params.values, task.validation())?;
        result.validation_trace.push((result.steps, v.loss));
        let n_params = net.param_count();
        let validation = task.metrics(&v, n_params);
        result.evaluation = Some(if std::ptr::eq(task.evaluation(), task.validation()) {
            validation.clone()
        } else {
            task.metrics(&evaluate(net, &params.values, task.evaluation())?, n_params)
        });
        result.validation = Some(validation);
    }
    result.params = params;
    Ok(result)
}
