//! Hyperparameter search: search spaces, random sampling and a batched
//! Gaussian-process bandit with expected improvement.

mod gp;
mod rnn_space;
mod space;

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gp::{
    expected_improvement, fit_gp, matern52, matern52_r, normal_cdf, normal_pdf, GpHyper, GpModel, GP_JITTER,
};
pub use rnn_space::{apply_network, apply_optimizer, apply_task, rnn_space, SpaceOptions};
pub use space::{sample_random, Dim, HpConfig, HpParam, HpSpace, HpValue};

#[derive(Debug, Error)]
pub enum TunerError {
    #[error("invalid search space: {0}")]
    Space(String),
    #[error("invalid value: {0}")]
    Value(String),
    #[error("a GP needs at least two feasible observations, got {0}")]
    TooFewObservations(usize),
    #[error("kernel matrix is not positive definite")]
    Singular,
    #[error("unknown tuner strategy {0:?}")]
    UnknownStrategy(String),
    #[error("study file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub config: HpConfig,
    /// Minimized value; `None` for infeasible trials.
    pub objective: Option<f64>,
    pub feasible: bool,
    pub seed: u64,
    /// Seconds.
    pub wall_time: f64,
}

/// A search space and its trial history.
/// Encoded GP inputs and their objectives.
pub type Observations = (Vec<Vec<f64>>, Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub space: HpSpace,
    pub trials: Vec<TrialRecord>,
}

pub const STUDY_FORMAT: &str = "rnnlab-study";
pub const STUDY_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StudyHeader {
    format: String,
    version: u32,
    space: HpSpace,
}

impl Study {
    pub fn new(space: HpSpace) -> Self {
        Self {
            space,
            trials: Vec::new(),
        }
    }

    /// Appends a trial. Infeasible trials never carry an objective.
    pub fn report(&mut self, mut record: TrialRecord) {
        if !record.feasible || record.objective.is_some_and(|o| !o.is_finite()) {
            record.feasible = false;
            record.objective = None;
        }
        self.trials.push(record);
    }

    pub fn best(&self) -> Option<&TrialRecord> {
        self.trials
            .iter()
            .filter(|t| t.objective.is_some())
            .min_by(|a, b| a.objective.partial_cmp(&b.objective).expect("finite"))
    }

    pub fn best_objective(&self) -> Option<f64> {
        self.best().and_then(|t| t.objective)
    }

    pub fn worst_objective(&self) -> Option<f64> {
        self.trials.iter().filter_map(|t| t.objective).reduce(f64::max)
    }

    pub fn feasible_count(&self) -> usize {
        self.trials.iter().filter(|t| t.feasible).count()
    }

    /// Encoded inputs and targets for the GP, with infeasible trials given
    /// the worst feasible objective. `None` when nothing is feasible.
    pub fn observations(&self) -> Result<Option<Observations>, TunerError> {
        let Some(worst) = self.worst_objective() else {
            return Ok(None);
        };
        let mut xs = Vec::with_capacity(self.trials.len());
        let mut ys = Vec::with_capacity(self.trials.len());
        for t in &self.trials {
            xs.push(self.space.encode(&t.config)?);
            ys.push(t.objective.unwrap_or(worst));
        }
        Ok(Some((xs, ys)))
    }

    /// Header line with the space, then one record per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), TunerError> {
        let header = StudyHeader {
            format: STUDY_FORMAT.into(),
            version: STUDY_VERSION,
            space: self.space.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        for t in &self.trials {
            writeln!(out, "{}", serde_json::to_string(t)?)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, TunerError> {
        let mut lines = input.lines();
        let header: StudyHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(TunerError::Format("empty file".into())),
        };
        if header.format != STUDY_FORMAT || header.version != STUDY_VERSION {
            return Err(TunerError::Format(format!("unsupported {} v{}", header.format, header.version)));
        }
        let mut study = Study::new(header.space);
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                study.trials.push(serde_json::from_str(&line)?);
            }
        }
        Ok(study)
    }
}

/// A way of proposing the next configurations to evaluate.
pub trait Strategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// `k` new configurations given the study and configurations that are
    /// already being evaluated.
    fn suggest(&self, study: &Study, pending: &[HpConfig], k: usize, rng: &mut ChaCha8Rng) -> Vec<HpConfig>;
}

pub struct RandomSearch;

impl Strategy for RandomSearch {
    fn name(&self) -> &'static str {
        "random"
    }

    fn suggest(&self, study: &Study, _pending: &[HpConfig], k: usize, rng: &mut ChaCha8Rng) -> Vec<HpConfig> {
        (0..k).map(|_| study.space.sample(rng)).collect()
    }
}

/// GP bandit: Matérn 5/2 ARD kernel, expected improvement, constant-liar
/// batching.
#[derive(Debug, Clone)]
pub struct GpBandit {
    /// Trials drawn at random before the GP is used.
    pub random_trials: usize,
    /// Probability of a random suggestion after the warm-up.
    pub epsilon: f64,
    pub pool: usize,
    /// Coordinate refinement sweeps over the best pool candidate.
    pub refine_sweeps: usize,
}

impl Default for GpBandit {
    fn default() -> Self {
        Self {
            random_trials: 10,
            epsilon: 0.05,
            pool: 2048,
            refine_sweeps: 3,
        }
    }
}

impl GpBandit {
    fn acquisition(&self, gp: &GpModel, space: &HpSpace, best: f64, c: &HpConfig) -> f64 {
        match space.encode(c) {
            Ok(x) => {
                let (mu, sigma) = gp.predict(&x);
                expected_improvement(mu, sigma, best)
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// Maximizes EI over a random pool, then by coordinate moves.
    fn maximize(&self, gp: &GpModel, study: &Study, best: f64, rng: &mut ChaCha8Rng) -> HpConfig {
        let space = &study.space;
        let mut top = space.sample(rng);
        let mut top_ei = self.acquisition(gp, space, best, &top);
        for _ in 1..self.pool {
            let c = space.sample(rng);
            let ei = self.acquisition(gp, space, best, &c);
            if ei > top_ei {
                top = c;
                top_ei = ei;
            }
        }
        for sweep in 0..self.refine_sweeps {
            let step = 0.1 / 3f64.powi(sweep as i32);
            for p in &space.params {
                let moves: Vec<HpValue> = match &p.dim {
                    Dim::Categorical { choices } => choices.iter().cloned().map(HpValue::Cat).collect(),
                    dim => {
                        let one = HpSpace::new().with(&p.name, dim.clone());
                        let Ok(u) = one.encode(&top) else { continue };
                        [u[0] - step, u[0] + step]
                            .into_iter()
                            .filter_map(|x| one.decode(&[x.clamp(0.0, 1.0)]).ok())
                            .filter_map(|mut c| c.remove(&p.name))
                            .collect()
                    }
                };
                for v in moves {
                    let mut c = top.clone();
                    c.insert(p.name.clone(), v);
                    let ei = self.acquisition(gp, space, best, &c);
                    if ei > top_ei {
                        top = c;
                        top_ei = ei;
                    }
                }
            }
        }
        top
    }
}

impl Strategy for GpBandit {
    fn name(&self) -> &'static str {
        "gp"
    }

    fn suggest(&self, study: &Study, pending: &[HpConfig], k: usize, rng: &mut ChaCha8Rng) -> Vec<HpConfig> {
        let space = &study.space;
        let groups = space.coordinate_groups();
        let observed = study.observations().ok().flatten();
        let mut out: Vec<HpConfig> = Vec::with_capacity(k);
        let mut model: Option<GpModel> = None;
        for j in 0..k {
            let position = study.trials.len() + pending.len() + j;
            let explore = rng.gen_bool(self.epsilon.clamp(0.0, 1.0));
            let Some((xs, ys)) = observed.as_ref() else {
                out.push(space.sample(rng));
                continue;
            };
            if position < self.random_trials || study.feasible_count() < 2 || explore {
                out.push(space.sample(rng));
                continue;
            }
            let best = study.best_objective().expect("feasible trials exist");
            // Constant liar: pending and already chosen points take the best value.
            let mut xs = xs.clone();
            let mut ys = ys.clone();
            for c in pending.iter().chain(&out) {
                if let Ok(x) = space.encode(c) {
                    xs.push(x);
                    ys.push(best);
                }
            }
            let gp = match &model {
                None => fit_gp(&xs, &ys, &groups, rng),
                Some(m) => GpModel::with_hyper(&xs, &ys, &groups, m.hyper.clone()),
            };
            match gp {
                Ok(gp) => {
                    out.push(self.maximize(&gp, study, best, rng));
                    if model.is_none() {
                        model = Some(gp);
                    }
                }
                Err(_) => out.push(space.sample(rng)),
            }
        }
        out
    }
}

/// Registered strategy names.
pub const STRATEGY_NAMES: [&str; 2] = ["gp", "random"];

pub fn strategy(name: &str) -> Result<Box<dyn Strategy>, TunerError> {
    match name.to_ascii_lowercase().as_str() {
        "gp" => Ok(Box::new(GpBandit::default())),
        "random" => Ok(Box::new(RandomSearch)),
        _ => Err(TunerError::UnknownStrategy(name.to_string())),
    }
}

/// `k` suggestions from `strategy` with a generator seeded by `seed`.
pub fn suggest_batch(strategy: &dyn Strategy, study: &Study, k: usize, seed: u64) -> Vec<HpConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    strategy.suggest(study, &[], k, &mut rng)
}

#[cfg(test)]
mod tests;
