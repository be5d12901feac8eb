use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{chunks, present, Batch, StepTarget, Target, Task, TaskError, EVAL_CHUNK};
use crate::cells::Presentation;
use crate::ndcore::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RcfConfig {
    /// Dataset size; 10⁶ at full scale.
    pub n: usize,
    pub d: usize,
    pub tau: f64,
    pub steps: usize,
    pub presentation: Presentation,
}

impl Default for RcfConfig {
    fn default() -> Self {
        Self {
            n: 4096,
            d: 50,
            tau: 5000.0,
            steps: 50,
            presentation: Presentation::EveryStep,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RcfDataset {
    /// `n × d` standard normal inputs.
    pub x: Tensor,
    pub y: Vec<f64>,
    /// Power-law sample weights, summing to one.
    pub beta: Vec<f64>,
}

/// `β_i = (i + τ)⁻¹ / Z` for `i = 1..=n`.
pub fn rcf_weights(n: usize, tau: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n).map(|i| 1.0 / (i as f64 + tau)).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / z).collect()
}

pub fn gen_rcf(n: usize, d: usize, tau: f64, seed: u64) -> RcfDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let y = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    RcfDataset {
        x: Tensor::new(&[n, d], x).expect("sized"),
        y,
        beta: rcf_weights(n, tau),
    }
}

/// Fit random targets under a power-law sample weighting.
pub struct RcfTask {
    config: RcfConfig,
    data: RcfDataset,
    sampler: WeightedIndex<f64>,
    validation: Vec<Batch>,
}

impl RcfTask {
    pub fn new(config: RcfConfig, seed: u64) -> Result<Self, TaskError> {
        if config.n == 0 || config.d == 0 || config.steps == 0 || config.tau.is_nan() || config.tau <= -1.0 {
            return Err(TaskError::Config("rcf needs n, d, steps ≥ 1 and τ > −1".into()));
        }
        let data = gen_rcf(config.n, config.d, config.tau, seed);
        let sampler = WeightedIndex::new(&data.beta).map_err(|e| TaskError::Config(e.to_string()))?;
        let mut task = Self {
            config,
            data,
            sampler,
            validation: Vec::new(),
        };
        task.validation = chunks(task.config.n, EVAL_CHUNK)
            .map(|r| {
                let rows: Vec<usize> = r.collect();
                let w = rows.iter().map(|&i| task.data.beta[i]).collect();
                task.batch(&rows, Some(w), 1.0)
            })
            .collect();
        Ok(task)
    }

    pub fn dataset(&self) -> &RcfDataset {
        &self.data
    }

    fn batch(&self, rows: &[usize], weights: Option<Vec<f64>>, scale: f64) -> Batch {
        let d = self.config.d;
        let mut x = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            x.extend_from_slice(self.data.x.row(r));
        }
        let x = Tensor::new(&[rows.len(), d], x).expect("sized");
        let y = Tensor::new(&[rows.len(), 1], rows.iter().map(|&r| self.data.y[r]).collect()).expect("sized");
        Batch {
            input: present(x, self.config.steps, self.config.presentation),
            targets: vec![StepTarget {
                step: self.config.steps - 1,
                target: Target::Values {
                    values: y,
                    row_weights: weights,
                },
            }],
            scale,
        }
    }
}

impl Task for RcfTask {
    fn name(&self) -> &'static str {
        "rcf"
    }

    fn n_in(&self) -> usize {
        self.config.d
    }

    fn n_out(&self) -> usize {
        1
    }

    /// Rows are drawn in proportion to β, so the plain minibatch mean is an
    /// unbiased estimate of the weighted loss.
    fn train_batch(&self, size: usize, rng: &mut ChaCha8Rng) -> Batch {
        let rows: Vec<usize> = (0..size).map(|_| self.sampler.sample(rng)).collect();
        self.batch(&rows, None, 1.0 / size as f64)
    }

    fn validation(&self) -> &[Batch] {
        &self.validation
    }
}
