use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{chunks, one_hot_rows, Batch, StepTarget, Target, Task, TaskError, EVAL_CHUNK};
use crate::cells::SeqInput;

/// Indices `2k` and `2k + 1` are the open and close symbols of type `k`.
pub const PAREN_PAIRS: [(char, char); 10] = [
    ('(', ')'),
    ('[', ']'),
    ('{', '}'),
    ('<', '>'),
    ('‹', '›'),
    ('«', '»'),
    ('⟨', '⟩'),
    ('⌈', '⌉'),
    ('⌊', '⌋'),
    ('⟦', '⟧'),
];

pub const PAREN_NOISE: [char; 10] = ['a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'j'];

pub const PAREN_MAX_COUNT: u8 = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParensConfig {
    /// Number of paren types, and so of input streams and output heads.
    pub types: usize,
    pub steps: usize,
    pub noise_prob: f64,
    pub validation_samples: usize,
    pub evaluation_samples: usize,
}

impl Default for ParensConfig {
    fn default() -> Self {
        Self {
            types: 10,
            steps: 175,
            noise_prob: 0.5,
            validation_samples: 512,
            evaluation_samples: 1024,
        }
    }
}

/// Symbol `index` of a stream over `types` paren types: parens first, then
/// the noise letters.
pub fn paren_symbol(index: usize, types: usize) -> char {
    if index < 2 * types {
        let (open, close) = PAREN_PAIRS[index / 2];
        if index.is_multiple_of(2) {
            open
        } else {
            close
        }
    } else {
        PAREN_NOISE[index - 2 * types]
    }
}

/// Running open count of type `kind` after every symbol of `stream`.
pub fn paren_counts(stream: &[usize], kind: usize) -> Vec<u8> {
    let mut count = 0u8;
    stream
        .iter()
        .map(|&s| {
            if s == 2 * kind {
                count = (count + 1).min(PAREN_MAX_COUNT);
            } else if s == 2 * kind + 1 {
                count = count.saturating_sub(1);
            }
            count
        })
        .collect()
}

/// Final open count of paren type `kind` in a text stream; every other
/// character is noise.
pub fn count_parens(text: &str, kind: usize) -> u8 {
    let (open, close) = PAREN_PAIRS[kind];
    text.chars().fold(0u8, |count, c| {
        if c == open {
            (count + 1).min(PAREN_MAX_COUNT)
        } else if c == close {
            count.saturating_sub(1)
        } else {
            count
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParenSample {
    /// One symbol stream per paren type, each of length `T`.
    pub streams: Vec<Vec<usize>>,
    /// `labels[k][t]`: count of type `k` after step `t`.
    pub labels: Vec<Vec<u8>>,
}

impl ParenSample {
    pub fn text(&self, kind: usize) -> String {
        let types = self.streams.len();
        self.streams[kind].iter().map(|&s| paren_symbol(s, types)).collect()
    }
}

fn draw(config: &ParensConfig, rng: &mut ChaCha8Rng) -> ParenSample {
    let types = config.types;
    let streams: Vec<Vec<usize>> = (0..types)
        .map(|_| {
            (0..config.steps)
                .map(|_| {
                    if rng.gen_bool(config.noise_prob) {
                        2 * types + rng.gen_range(0..PAREN_NOISE.len())
                    } else {
                        rng.gen_range(0..2 * types)
                    }
                })
                .collect()
        })
        .collect();
    let labels = streams.iter().enumerate().map(|(k, s)| paren_counts(s, k)).collect();
    ParenSample { streams, labels }
}

pub fn gen_parens(types: usize, steps: usize, seed: u64) -> ParenSample {
    let config = ParensConfig {
        types,
        steps,
        ..Default::default()
    };
    draw(&config, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Count open parens of each type in its own noisy stream.
pub struct ParensTask {
    config: ParensConfig,
    validation: Vec<Batch>,
    evaluation: Vec<Batch>,
}

impl ParensTask {
    pub fn new(config: ParensConfig, seed: u64) -> Result<Self, TaskError> {
        if config.types == 0 || config.types > PAREN_PAIRS.len() || config.steps == 0 {
            return Err(TaskError::Config(format!(
                "parens needs 1..={} types and steps ≥ 1",
                PAREN_PAIRS.len()
            )));
        }
        if !(0.0..=1.0).contains(&config.noise_prob) {
            return Err(TaskError::Config("noise_prob must lie in [0, 1]".into()));
        }
        let fixed = |n: usize, salt: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
            chunks(n, EVAL_CHUNK)
                .map(|r| {
                    let samples: Vec<_> = r.map(|_| draw(&config, &mut rng)).collect();
                    encode(&config, &samples, 1.0 / n as f64)
                })
                .collect()
        };
        let validation = fixed(config.validation_samples.max(1), 0x7661_6c69);
        let evaluation = fixed(config.evaluation_samples.max(1), 0x6576_616c);
        Ok(Self {
            config,
            validation,
            evaluation,
        })
    }

    pub fn symbols(&self) -> usize {
        2 * self.config.types + PAREN_NOISE.len()
    }
}

fn encode(config: &ParensConfig, samples: &[ParenSample], scale: f64) -> Batch {
    let types = config.types;
    let width = 2 * types + PAREN_NOISE.len();
    let steps = (0..config.steps)
        .map(|t| {
            Some(one_hot_rows(samples.len(), types * width, |r| {
                (0..types).map(|k| k * width + samples[r].streams[k][t]).collect()
            }))
        })
        .collect();
    let last = config.steps - 1;
    let labels = samples
        .iter()
        .flat_map(|s| s.labels.iter().map(move |l| usize::from(l[last])))
        .collect();
    Batch {
        input: SeqInput {
            batch: samples.len(),
            steps,
        },
        targets: vec![StepTarget {
            step: last,
            target: Target::Classes {
                labels,
                classes: usize::from(PAREN_MAX_COUNT) + 1,
            },
        }],
        scale,
    }
}

impl Task for ParensTask {
    fn name(&self) -> &'static str {
        "parens"
    }

    fn n_in(&self) -> usize {
        self.config.types * self.symbols()
    }

    fn n_out(&self) -> usize {
        self.config.types * (usize::from(PAREN_MAX_COUNT) + 1)
    }

    fn train_batch(&self, size: usize, rng: &mut ChaCha8Rng) -> Batch {
        let samples: Vec<_> = (0..size).map(|_| draw(&self.config, rng)).collect();
        encode(&self.config, &samples, 1.0 / size as f64)
    }

    fn validation(&self) -> &[Batch] {
        &self.validation
    }

    fn evaluation(&self) -> &[Batch] {
        &self.evaluation
    }
}
