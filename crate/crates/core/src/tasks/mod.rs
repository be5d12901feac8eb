//! Seeded generators, oracles and losses for the six tasks.
//!
//! A [`Task`] hands out training minibatches and fixed validation and
//! evaluation sets as [`Batch`]es. A batch names the steps that carry a
//! loss and what the readout is compared against at each of them.

mod arith;
mod capacity;
mod charlm;
mod memory;
mod parens;
mod rcf;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cells::{Presentation, ReadoutSteps, SeqInput, Unrolled};
use crate::ndcore::{softmax_xent, NdError, Tape, Tensor, Var};

pub use arith::{
    arith_answer, decode_answer, encode_arith, gen_arith, ArithConfig, ArithSample, ArithTask,
    ARITH_ALPHABET, ARITH_ANSWER_WIDTH, ARITH_HORIZON, ARITH_INPUT_WIDTH, ARITH_MAX_GAP,
};
pub use capacity::{gen_capacity, CapacityConfig, CapacityDataset, CapacityTask};
pub use charlm::{charlm_batch, CharLmBatch, CharLmConfig, CharLmTask, CHARLM_BURN_IN, CHARLM_STEPS};
pub use memory::{gen_memory, MemoryConfig, MemorySample, MemoryTask};
pub use parens::{
    count_parens, gen_parens, paren_counts, paren_symbol, ParenSample, ParensConfig, ParensTask,
    PAREN_MAX_COUNT, PAREN_NOISE, PAREN_PAIRS,
};
pub use rcf::{gen_rcf, rcf_weights, RcfConfig, RcfDataset, RcfTask};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error(transparent)]
    Nd(#[from] NdError),
    #[error("invalid task configuration: {0}")]
    Config(String),
    #[error("the char-lm task needs a corpus")]
    NoCorpus,
    #[error("corpus of {len} bytes is shorter than one window of {needed}")]
    CorpusTooShort { len: usize, needed: usize },
    #[error("unknown task {0:?}")]
    Unknown(String),
    #[error("cannot parse arithmetic problem {0:?}")]
    Parse(String),
}

/// What the readout at one step is compared against.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Softmax heads: the readout is `rows × (heads·classes)` and `labels`
    /// holds `rows·heads` class indices, row-major.
    Classes { labels: Vec<usize>, classes: usize },
    /// Squared error against `values`, optionally weighted per row.
    Values { values: Tensor, row_weights: Option<Vec<f64>> },
}

#[derive(Debug, Clone)]
pub struct StepTarget {
    /// Zero-based step index.
    pub step: usize,
    pub target: Target,
}

/// One minibatch or evaluation chunk.
#[derive(Debug, Clone)]
pub struct Batch {
    pub input: SeqInput,
    pub targets: Vec<StepTarget>,
    /// Multiplier turning the summed per-row loss into this batch's share of
    /// the reported loss (e.g. `1/rows` for a minibatch mean).
    pub scale: f64,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.input.batch
    }

    pub fn readout(&self) -> ReadoutSteps {
        let steps: Vec<usize> = self.targets.iter().map(|t| t.step).collect();
        if steps.len() == 1 && steps[0] + 1 == self.input.len() {
            ReadoutSteps::Final
        } else {
            ReadoutSteps::At(steps)
        }
    }
}

/// Accumulated loss and classification counts over evaluation batches.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalStats {
    pub loss: f64,
    pub correct: usize,
    pub labelled: usize,
}

impl EvalStats {
    pub fn accuracy(&self) -> Option<f64> {
        (self.labelled > 0).then(|| self.correct as f64 / self.labelled as f64)
    }

    pub fn merge(&mut self, other: EvalStats) {
        self.loss += other.loss;
        self.correct += other.correct;
        self.labelled += other.labelled;
    }
}

/// Task-level summary of an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Value the tuner minimizes.
    pub objective: f64,
    pub loss: f64,
    pub extras: BTreeMap<String, f64>,
}

impl Metrics {
    pub fn from_loss(stats: &EvalStats) -> Self {
        let mut extras = BTreeMap::new();
        if let Some(acc) = stats.accuracy() {
            extras.insert("accuracy".to_string(), acc);
        }
        Self {
            objective: stats.loss,
            loss: stats.loss,
            extras,
        }
    }
}

pub trait Task: Send + Sync {
    fn name(&self) -> &'static str;

    fn n_in(&self) -> usize;

    fn n_out(&self) -> usize;

    fn train_batch(&self, size: usize, rng: &mut ChaCha8Rng) -> Batch;

    fn validation(&self) -> &[Batch];

    fn evaluation(&self) -> &[Batch] {
        self.validation()
    }

    fn metrics(&self, stats: &EvalStats, _n_params: usize) -> Metrics {
        Metrics::from_loss(stats)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskConfig {
    Capacity(CapacityConfig),
    Memory(MemoryConfig),
    Rcf(RcfConfig),
    Parens(ParensConfig),
    Arith(ArithConfig),
    CharLm(CharLmConfig),
}

/// Registered task names, in presentation order.
pub const TASK_NAMES: [&str; 6] = ["capacity", "memory", "rcf", "parens", "arith", "char_lm"];

impl TaskConfig {
    /// Default configuration for a registered task name.
    pub fn lookup(name: &str) -> Result<Self, TaskError> {
        Ok(match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "capacity" => TaskConfig::Capacity(Default::default()),
            "memory" => TaskConfig::Memory(Default::default()),
            "rcf" => TaskConfig::Rcf(Default::default()),
            "parens" => TaskConfig::Parens(Default::default()),
            "arith" => TaskConfig::Arith(Default::default()),
            "char_lm" | "charlm" => TaskConfig::CharLm(Default::default()),
            _ => return Err(TaskError::Unknown(name.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::Capacity(_) => "capacity",
            TaskConfig::Memory(_) => "memory",
            TaskConfig::Rcf(_) => "rcf",
            TaskConfig::Parens(_) => "parens",
            TaskConfig::Arith(_) => "arith",
            TaskConfig::CharLm(_) => "char_lm",
        }
    }

    /// Builds the task. `seed` drives every task-data draw.
    pub fn build(&self, seed: u64, corpus: Option<Arc<[u8]>>) -> Result<Box<dyn Task>, TaskError> {
        Ok(match self {
            TaskConfig::Capacity(c) => Box::new(CapacityTask::new(c.clone(), seed)?),
            TaskConfig::Memory(c) => Box::new(MemoryTask::new(c.clone(), seed)?),
            TaskConfig::Rcf(c) => Box::new(RcfTask::new(c.clone(), seed)?),
            TaskConfig::Parens(c) => Box::new(ParensTask::new(c.clone(), seed)?),
            TaskConfig::Arith(c) => Box::new(ArithTask::new(c.clone(), seed)?),
            TaskConfig::CharLm(c) => {
                Box::new(CharLmTask::new(c.clone(), corpus.ok_or(TaskError::NoCorpus)?, seed)?)
            }
        })
    }
}

/// Records the batch loss on the tape: `scale · Σ_steps loss(step)`.
pub fn batch_loss(tape: &mut Tape, un: &Unrolled, batch: &Batch) -> Result<Var, TaskError> {
    let mut total: Option<Var> = None;
    for st in &batch.targets {
        let out = un.outputs[st.step].expect("readout requested for every loss step");
        let l = match &st.target {
            Target::Classes { labels, classes } => {
                tape.softmax_xent(out, labels, *classes, batch.scale)?
            }
            Target::Values {
                values,
                row_weights,
            } => tape.squared_error(out, values, row_weights.as_deref(), batch.scale)?,
        };
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    Ok(total.expect("a batch has at least one loss step"))
}

/// Loss of one batch from plain readout values, one tensor per entry of
/// `batch.targets`. Matches [`batch_loss`] without a tape.
pub fn task_loss(outputs: &[Tensor], batch: &Batch) -> Result<f64, TaskError> {
    if outputs.len() != batch.targets.len() {
        return Err(TaskError::Config(format!(
            "{} outputs for {} loss steps",
            outputs.len(),
            batch.targets.len()
        )));
    }
    let mut total = 0.0;
    for (out, st) in outputs.iter().zip(&batch.targets) {
        match &st.target {
            Target::Classes { labels, classes } => {
                if out.len() != labels.len() * classes {
                    return Err(TaskError::Config("logit width does not match labels".into()));
                }
                for (block, &label) in out.data().chunks(*classes).zip(labels) {
                    total += softmax_xent(&Tensor::vector(block.to_vec()), label)?;
                }
            }
            Target::Values {
                values,
                row_weights,
            } => {
                if out.len() != values.len() {
                    return Err(TaskError::Config("prediction width does not match".into()));
                }
                let cols = values.cols();
                for (r, (p, y)) in out.data().chunks(cols).zip(values.data().chunks(cols)).enumerate() {
                    let w = row_weights.as_ref().map_or(1.0, |w| w[r]);
                    total += w * p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                }
            }
        }
    }
    Ok(batch.scale * total)
}

/// Counts argmax hits for classification targets.
pub fn count_correct(output: &Tensor, target: &Target) -> (usize, usize) {
    match target {
        Target::Classes { labels, classes } => {
            let hits = output
                .data()
                .chunks(*classes)
                .zip(labels)
                .filter(|(block, &label)| argmax(block) == label)
                .count();
            (hits, labels.len())
        }
        Target::Values { .. } => (0, 0),
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn one_hot_rows(rows: usize, width: usize, hot: impl Fn(usize) -> Vec<usize>) -> Tensor {
    let mut data = vec![0.0; rows * width];
    for r in 0..rows {
        for c in hot(r) {
            data[r * width + c] = 1.0;
        }
    }
    Tensor::new(&[rows, width], data).expect("sized")
}

/// Splits `0..n` into consecutive chunks of at most `size`.
fn chunks(n: usize, size: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..n.div_ceil(size)).map(move |i| i * size..((i + 1) * size).min(n))
}

fn present(x: Tensor, steps: usize, mode: Presentation) -> SeqInput {
    SeqInput::present(x, steps, mode)
}

/// Evaluation chunk size: bounds the tape held in memory at once.
pub const EVAL_CHUNK: usize = 256;

#[cfg(test)]
mod tests;
