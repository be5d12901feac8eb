use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{chunks, present, Batch, EvalStats, Metrics, StepTarget, Target, Task, TaskError, EVAL_CHUNK};
use crate::capacity::{bits_per_parameter, mutual_information};
use crate::cells::Presentation;
use crate::ndcore::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CapacityConfig {
    pub n_in: usize,
    /// Number of samples to memorize.
    pub b: usize,
    pub steps: usize,
    pub presentation: Presentation,
    /// When set, the training loss covers every step from this one-based
    /// index through the last instead of the last step alone.
    pub loss_from_step: Option<usize>,
}

impl Default for CapacityConfig {
    fn default() -> Self {
        Self {
            n_in: 16,
            b: 100,
            steps: 5,
            presentation: Presentation::EveryStep,
            loss_from_step: None,
        }
    }
}

/// Random binary inputs with random binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityDataset {
    /// `b × n_in`, entries in {0, 1}.
    pub x: Tensor,
    pub y: Vec<usize>,
}

impl CapacityDataset {
    pub fn b(&self) -> usize {
        self.y.len()
    }
}

pub fn gen_capacity(n_in: usize, b: usize, seed: u64) -> CapacityDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..b * n_in).map(|_| f64::from(u8::from(rng.gen::<bool>()))).collect();
    let y = (0..b).map(|_| usize::from(rng.gen::<bool>())).collect();
    CapacityDataset {
        x: Tensor::new(&[b, n_in], data).expect("sized"),
        y,
    }
}

/// Memorize random labels; train, validation and evaluation share one set.
pub struct CapacityTask {
    config: CapacityConfig,
    data: CapacityDataset,
    validation: Vec<Batch>,
}

impl CapacityTask {
    pub fn new(config: CapacityConfig, seed: u64) -> Result<Self, TaskError> {
        if config.b == 0 || config.n_in == 0 || config.steps == 0 {
            return Err(TaskError::Config("capacity needs b, n_in and steps ≥ 1".into()));
        }
        if let Some(k) = config.loss_from_step {
            if k == 0 || k > config.steps {
                return Err(TaskError::Config(format!("loss_from_step {k} outside 1..={}", config.steps)));
            }
        }
        let data = gen_capacity(config.n_in, config.b, seed);
        let mut task = Self {
            config,
            data,
            validation: Vec::new(),
        };
        let b = task.data.b();
        task.validation = chunks(b, EVAL_CHUNK)
            .map(|r| task.batch(&r.collect::<Vec<_>>(), 1.0 / b as f64, false))
            .collect();
        Ok(task)
    }

    pub fn dataset(&self) -> &CapacityDataset {
        &self.data
    }

    /// Evaluation batches score the final step only, so `p` is always the
    /// final-step accuracy.
    fn batch(&self, rows: &[usize], scale: f64, train: bool) -> Batch {
        let n_in = self.config.n_in;
        let mut x = Vec::with_capacity(rows.len() * n_in);
        for &r in rows {
            x.extend_from_slice(self.data.x.row(r));
        }
        let x = Tensor::new(&[rows.len(), n_in], x).expect("sized");
        let labels: Vec<usize> = rows.iter().map(|&r| self.data.y[r]).collect();
        let last = self.config.steps - 1;
        let first = match self.config.loss_from_step {
            Some(k) if train => k - 1,
            _ => last,
        };
        let targets = (first..=last)
            .map(|step| StepTarget {
                step,
                target: Target::Classes {
                    labels: labels.clone(),
                    classes: 2,
                },
            })
            .collect();
        Batch {
            input: present(x, self.config.steps, self.config.presentation),
            targets,
            scale,
        }
    }
}

impl Task for CapacityTask {
    fn name(&self) -> &'static str {
        "capacity"
    }

    fn n_in(&self) -> usize {
        self.config.n_in
    }

    fn n_out(&self) -> usize {
        2
    }

    fn train_batch(&self, size: usize, rng: &mut ChaCha8Rng) -> Batch {
        let b = self.data.b();
        let rows: Vec<usize> = if size >= b {
            (0..b).collect()
        } else {
            (0..size).map(|_| rng.gen_range(0..b)).collect()
        };
        let scale = 1.0 / rows.len() as f64;
        self.batch(&rows, scale, true)
    }

    fn validation(&self) -> &[Batch] {
        &self.validation
    }

    /// The objective is the negated mutual information (bits) computed from
    /// the final-step accuracy.
    fn metrics(&self, stats: &EvalStats, n_params: usize) -> Metrics {
        let b = self.data.b();
        let p = stats.accuracy().unwrap_or(0.0);
        let mi = mutual_information(p, b as f64).expect("accuracy lies in [0, 1]");
        let mut m = Metrics::from_loss(stats);
        m.objective = -mi;
        m.extras.insert("p".into(), p);
        m.extras.insert("b".into(), b as f64);
        m.extras.insert("mi_bits".into(), mi);
        m.extras.insert("bpp".into(), bits_per_parameter(mi, n_params));
        m
    }
}
