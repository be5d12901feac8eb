use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{chunks, present, Batch, StepTarget, Target, Task, TaskError, EVAL_CHUNK};
use crate::cells::Presentation;
use crate::ndcore::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    pub n_in: usize,
    /// Step (one-based) at which the input must be reproduced.
    pub delay: usize,
    pub validation_samples: usize,
    pub evaluation_samples: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            n_in: 64,
            delay: 12,
            validation_samples: 512,
            evaluation_samples: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemorySample {
    /// Uniform in [−√3, √3], unit variance per entry.
    pub input: Vec<f64>,
}

impl MemorySample {
    pub fn target(&self) -> &[f64] {
        &self.input
    }
}

fn draw(n_in: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a = 3f64.sqrt();
    (0..n_in).map(|_| rng.gen_range(-a..a)).collect()
}

pub fn gen_memory(n_in: usize, seed: u64) -> MemorySample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MemorySample {
        input: draw(n_in, &mut rng),
    }
}

/// Reproduce a random vector seen only at the first step after a delay.
pub struct MemoryTask {
    config: MemoryConfig,
    validation: Vec<Batch>,
    evaluation: Vec<Batch>,
}

impl MemoryTask {
    pub fn new(config: MemoryConfig, seed: u64) -> Result<Self, TaskError> {
        if config.n_in == 0 || config.delay == 0 {
            return Err(TaskError::Config("memory needs n_in and delay ≥ 1".into()));
        }
        let fixed = |n: usize, salt: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
            chunks(n, EVAL_CHUNK)
                .map(|r| batch(&config, r.len(), 1.0 / n as f64, &mut rng))
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
}

fn batch(config: &MemoryConfig, rows: usize, scale: f64, rng: &mut ChaCha8Rng) -> Batch {
    let data: Vec<f64> = (0..rows).flat_map(|_| draw(config.n_in, rng)).collect();
    let x = Tensor::new(&[rows, config.n_in], data).expect("sized");
    Batch {
        input: present(x.clone(), config.delay, Presentation::FirstStep),
        targets: vec![StepTarget {
            step: config.delay - 1,
            target: Target::Values {
                values: x,
                row_weights: None,
            },
        }],
        scale,
    }
}

impl Task for MemoryTask {
    fn name(&self) -> &'static str {
        "memory"
    }

    fn n_in(&self) -> usize {
        self.config.n_in
    }

    fn n_out(&self) -> usize {
        self.config.n_in
    }

    fn train_batch(&self, size: usize, rng: &mut ChaCha8Rng) -> Batch {
        batch(&self.config, size, 1.0 / size as f64, rng)
    }

    fn validation(&self) -> &[Batch] {
        &self.validation
    }

    fn evaluation(&self) -> &[Batch] {
        &self.evaluation
    }
}
