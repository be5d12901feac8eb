use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{chunks, one_hot_rows, Batch, StepTarget, Target, Task, TaskError, EVAL_CHUNK};
use crate::cells::SeqInput;

pub const CHARLM_STEPS: usize = 50;
/// Steps that only warm up the state and carry no loss.
pub const CHARLM_BURN_IN: usize = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CharLmConfig {
    /// Fraction of the corpus, taken from its end, reserved for validation
    /// and evaluation windows.
    pub heldout_fraction: f64,
    pub validation_windows: usize,
    pub evaluation_windows: usize,
}

impl Default for CharLmConfig {
    fn default() -> Self {
        Self {
            heldout_fraction: 0.1,
            validation_windows: 256,
            evaluation_windows: 512,
        }
    }
}

/// Windows of `CHARLM_STEPS + 1` bytes: inputs are bytes `0..50`, targets
/// are bytes `1..51`.
#[derive(Debug, Clone, PartialEq)]
pub struct CharLmBatch {
    pub offsets: Vec<usize>,
    pub windows: Vec<Vec<u8>>,
}

impl CharLmBatch {
    /// Zero-based steps that carry a loss.
    pub fn loss_steps() -> std::ops::Range<usize> {
        CHARLM_BURN_IN..CHARLM_STEPS
    }
}

/// Draws `batch` windows at uniform offsets into `corpus`.
pub fn charlm_batch(corpus: &[u8], batch: usize, seed: u64) -> Result<CharLmBatch, TaskError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw(corpus, batch, &mut rng)
}

fn draw(corpus: &[u8], batch: usize, rng: &mut ChaCha8Rng) -> Result<CharLmBatch, TaskError> {
    let needed = CHARLM_STEPS + 1;
    if corpus.len() < needed {
        return Err(TaskError::CorpusTooShort {
            len: corpus.len(),
            needed,
        });
    }
    let offsets: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..=corpus.len() - needed)).collect();
    let windows = offsets.iter().map(|&o| corpus[o..o + needed].to_vec()).collect();
    Ok(CharLmBatch { offsets, windows })
}

/// Next-byte prediction over a user corpus.
pub struct CharLmTask {
    corpus: Arc<[u8]>,
    /// Training windows come from `..split`, held-out windows from `split..`.
    split: usize,
    /// Byte value to vocabulary index.
    index: [Option<usize>; 256],
    vocab: usize,
    validation: Vec<Batch>,
    evaluation: Vec<Batch>,
}

impl CharLmTask {
    pub fn new(config: CharLmConfig, corpus: Arc<[u8]>, seed: u64) -> Result<Self, TaskError> {
        let needed = CHARLM_STEPS + 1;
        if !(0.0..1.0).contains(&config.heldout_fraction) {
            return Err(TaskError::Config("heldout_fraction must lie in [0, 1)".into()));
        }
        let held = ((corpus.len() as f64) * config.heldout_fraction) as usize;
        let split = corpus.len() - held;
        if split < needed || (held > 0 && held < needed) {
            return Err(TaskError::CorpusTooShort {
                len: corpus.len(),
                needed: if held > 0 { 2 * needed } else { needed },
            });
        }
        let mut index = [None; 256];
        let mut seen = [false; 256];
        for &b in corpus.iter() {
            seen[usize::from(b)] = true;
        }
        let mut vocab = 0;
        for (b, &s) in seen.iter().enumerate() {
            if s {
                index[b] = Some(vocab);
                vocab += 1;
            }
        }
        let mut task = Self {
            corpus,
            split,
            index,
            vocab: vocab.max(2),
            validation: Vec::new(),
            evaluation: Vec::new(),
        };
        let heldout = if held > 0 { split..task.corpus.len() } else { 0..split };
        let fixed = |n: usize, salt: u64| -> Result<Vec<Batch>, TaskError> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
            chunks(n, EVAL_CHUNK)
                .map(|r| {
                    let w = draw(&task.corpus[heldout.clone()], r.len(), &mut rng)?;
                    Ok(task.encode(&w, 1.0 / n as f64))
                })
                .collect()
        };
        let validation = fixed(config.validation_windows.max(1), 0x7661_6c69)?;
        let evaluation = fixed(config.evaluation_windows.max(1), 0x6576_616c)?;
        task.validation = validation;
        task.evaluation = evaluation;
        Ok(task)
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    fn encode(&self, batch: &CharLmBatch, scale: f64) -> Batch {
        let rows = batch.windows.len();
        let idx = |b: u8| self.index[usize::from(b)].expect("byte from the corpus");
        let steps = (0..CHARLM_STEPS)
            .map(|t| Some(one_hot_rows(rows, self.vocab, |r| vec![idx(batch.windows[r][t])])))
            .collect();
        let targets = CharLmBatch::loss_steps()
            .map(|t| StepTarget {
                step: t,
                target: Target::Classes {
                    labels: batch.windows.iter().map(|w| idx(w[t + 1])).collect(),
                    classes: self.vocab,
                },
            })
            .collect();
        Batch {
            input: SeqInput { batch: rows, steps },
            targets,
            scale,
        }
    }
}

impl Task for CharLmTask {
    fn name(&self) -> &'static str {
        "char_lm"
    }

    fn n_in(&self) -> usize {
        self.vocab
    }

    fn n_out(&self) -> usize {
        self.vocab
    }

    fn train_batch(&self, size: usize, rng: &mut ChaCha8Rng) -> Batch {
        let w = draw(&self.corpus[..self.split], size, rng).expect("split holds a window");
        self.encode(&w, 1.0 / size as f64)
    }

    fn validation(&self) -> &[Batch] {
        &self.validation
    }

    fn evaluation(&self) -> &[Batch] {
        &self.evaluation
    }
}
