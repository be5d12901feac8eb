//! Study orchestration: configs, trial execution, the append-only results
//! log with resume, exports and rerun statistics.

pub mod checks;
mod export;
mod rerun;
mod results;

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capacity::CapacityError;
use crate::cells::{units_for_budget, ArchKind, CellError, Network, NetworkSpec};
use crate::tasks::{Task, TaskConfig, TaskError};
use crate::training::{train_trial, ClipMode, OptimizerConfig, TrainError, TrainResult};
use crate::tuner::{
    apply_network, apply_optimizer, apply_task, rnn_space, strategy, HpConfig, HpSpace, SpaceOptions, Study,
    TrialRecord, TunerError,
};

pub use export::{
    best_curve, group_summaries, read_csv, svg_plot, write_csv, write_summary, BestCurve, GroupSummary,
    CSV_COLUMNS,
};
pub use rerun::{rerun_study, welch_table, RerunReport, WelchRow};
pub use results::{
    derive_seed, read_results, sha256_hex, truncate_partial_line, ResultRow, ResultsHeader, TimingRow,
    RESULTS_FILE, RESULTS_FORMAT, RESULTS_VERSION, TIMINGS_FILE,
};

/// Environment variable overriding the configured worker count.
pub const WORKERS_ENV: &str = "RNNLAB_WORKERS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid study config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("results log: {0}")]
    Format(String),
    #[error("results log was written by config {found}, this study is {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Tuner(#[from] TunerError),
    #[error(transparent)]
    Capacity(#[from] CapacityError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

/// Minibatch size and the searched range of training steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub batch: usize,
    /// Inclusive; a single value when both ends agree.
    pub steps: (usize, usize),
    #[serde(default)]
    pub clip_mode: ClipMode,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            batch: 32,
            steps: (500, 2000),
            clip_mode: ClipMode::Norm,
        }
    }
}

fn default_depths() -> Vec<usize> {
    vec![1]
}

fn default_tuner() -> String {
    "gp".into()
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub name: String,
    pub task: TaskConfig,
    pub archs: Vec<ArchKind>,
    #[serde(default = "default_depths")]
    pub depths: Vec<usize>,
    /// Parameter budgets; each is sized to the widest fitting `n_h`.
    #[serde(default)]
    pub budgets: Vec<usize>,
    /// Explicit hidden widths, used in addition to `budgets`.
    #[serde(default)]
    pub widths: Vec<usize>,
    /// Registered tuner strategy: `gp` or `random`.
    #[serde(default = "default_tuner")]
    pub tuner: String,
    /// Trials per (arch, depth, size) group.
    pub trials: usize,
    /// Trials proposed together; fixed by the config so results do not
    /// depend on the worker count.
    #[serde(default = "one")]
    pub suggest_batch: usize,
    #[serde(default = "one")]
    pub workers: usize,
    pub seed: u64,
    pub output: PathBuf,
    #[serde(default)]
    pub train: TrainSettings,
    /// Hyperparameters pinned to a value and removed from the search.
    #[serde(default)]
    pub fixed: HpConfig,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.name.is_empty() {
            return bad("name must not be empty".into());
        }
        if self.archs.is_empty() || self.depths.is_empty() {
            return bad("needs at least one arch and one depth".into());
        }
        if self.budgets.is_empty() && self.widths.is_empty() {
            return bad("needs at least one budget or width".into());
        }
        if self.budgets.contains(&0) || self.widths.contains(&0) {
            return bad("budgets and widths must be positive".into());
        }
        for &arch in &self.archs {
            for &depth in &self.depths {
                if depth == 0 || depth < arch.min_depth() {
                    return bad(format!("{arch} cannot have depth {depth}"));
                }
            }
        }
        strategy(&self.tuner)?;
        if self.suggest_batch == 0 || self.workers == 0 || self.train.batch == 0 {
            return bad("suggest_batch, workers and train.batch must be positive".into());
        }
        if self.train.steps.0 > self.train.steps.1 || self.train.steps.0 == 0 {
            return bad("train.steps must be a range lo..=hi with lo ≥ 1".into());
        }
        Ok(())
    }

    /// SHA-256 of the config with the worker count and output directory
    /// cleared, which do not affect results.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.workers = 1;
        c.output = PathBuf::new();
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    pub fn results_path(&self) -> PathBuf {
        self.output.join(RESULTS_FILE)
    }
}

/// One (arch, depth, size) cell of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub arch: ArchKind,
    pub depth: usize,
    pub n_h: usize,
    pub n_params: usize,
    pub budget: Option<usize>,
}

impl Group {
    pub fn key(&self) -> String {
        format!("{}/d{}/h{}", self.arch, self.depth, self.n_h)
    }
}

/// Everything needed to evaluate configurations for one group.
pub struct TrialSetup {
    pub study: String,
    pub group: Group,
    pub n_in: usize,
    pub n_out: usize,
    pub task_config: TaskConfig,
    pub task_seed: u64,
    pub task: Arc<dyn Task>,
    pub corpus: Option<Arc<[u8]>>,
    pub train: TrainSettings,
    pub fixed: HpConfig,
    pub space: HpSpace,
}

/// Outcome of one trial.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub hp: HpConfig,
    pub result: TrainResult,
    pub wall_time: f64,
}

impl TrialSetup {
    /// The hyperparameters a suggestion is evaluated with: the suggestion
    /// plus the pinned values.
    pub fn full_config(&self, suggestion: &HpConfig) -> HpConfig {
        let mut hp = suggestion.clone();
        hp.extend(self.fixed.iter().map(|(k, v)| (k.clone(), v.clone())));
        hp
    }

    pub fn network(&self, hp: &HpConfig) -> Result<Network, HarnessError> {
        let g = &self.group;
        let mut spec = NetworkSpec::new(g.arch, g.depth, self.n_in, g.n_h, self.n_out);
        apply_network(hp, &mut spec)?;
        Ok(Network::new(spec)?)
    }

    pub fn optimizer(&self, hp: &HpConfig) -> Result<OptimizerConfig, HarnessError> {
        let mut opt = OptimizerConfig {
            steps: self.train.steps.0,
            batch: self.train.batch,
            clip_mode: self.train.clip_mode,
            ..Default::default()
        };
        apply_optimizer(hp, &mut opt)?;
        Ok(opt)
    }

    /// Trains one configuration with the given network seed.
    pub fn run(&self, suggestion: &HpConfig, seed: u64) -> Result<TrialOutcome, HarnessError> {
        let start = Instant::now();
        let hp = self.full_config(suggestion);
        let net = self.network(&hp)?;
        let opt = self.optimizer(&hp)?;
        let mut task_config = self.task_config.clone();
        apply_task(&hp, &mut task_config)?;
        let task: Arc<dyn Task> = if task_config == self.task_config {
            self.task.clone()
        } else {
            Arc::from(task_config.build(self.task_seed, self.corpus.clone())?)
        };
        let result = train_trial(&net, task.as_ref(), &opt, seed)?;
        Ok(TrialOutcome {
            hp,
            result,
            wall_time: start.elapsed().as_secs_f64(),
        })
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        derive_seed(&[&self.study, &self.group.key(), "trial", &trial.to_string()])
    }

    fn suggest_seed(&self, start: usize) -> u64 {
        derive_seed(&[&self.study, &self.group.key(), "suggest", &start.to_string()])
    }

    pub fn row(&self, config_hash: &str, trial: usize, seed: u64, outcome: &TrialOutcome) -> ResultRow {
        let r = &outcome.result;
        let mut extras = BTreeMap::new();
        if let Some(v) = &r.validation {
            extras.extend(v.extras.clone());
        }
        if let Some(e) = &r.evaluation {
            extras.insert("eval_loss".into(), e.loss);
        }
        ResultRow {
            study: self.study.clone(),
            config_hash: config_hash.to_string(),
            group: self.group.key(),
            arch: self.group.arch,
            depth: self.group.depth,
            n_params: self.group.n_params,
            n_h: self.group.n_h,
            trial,
            seed,
            feasible: r.feasible,
            objective: r.objective(),
            eval_objective: r.evaluation.as_ref().map(|m| m.objective),
            steps: r.steps,
            hp: outcome.hp.clone(),
            extras,
        }
    }
}

/// Runtime inputs that are not part of the study config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub corpus: Option<Arc<[u8]>>,
    /// Overrides both the config and [`WORKERS_ENV`].
    pub workers: Option<usize>,
    /// Print one line per trial to stderr.
    pub verbose: bool,
}

impl RunOptions {
    fn workers(&self, config: &StudyConfig) -> usize {
        self.workers
            .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()))
            .unwrap_or(config.workers)
            .max(1)
    }
}

/// The base task and every group of a study, in run order.
pub fn plan(config: &StudyConfig, corpus: Option<Arc<[u8]>>) -> Result<Vec<TrialSetup>, HarnessError> {
    config.validate()?;
    let task: Arc<dyn Task> = Arc::from(config.task.build(config.seed, corpus.clone())?);
    let (n_in, n_out) = (task.n_in(), task.n_out());
    let mut setups = Vec::new();
    for &arch in &config.archs {
        for &depth in &config.depths {
            let mut sizes: Vec<(usize, Option<usize>)> = Vec::new();
            for &b in &config.budgets {
                sizes.push((units_for_budget(arch, depth, n_in, n_out, b)?, Some(b)));
            }
            sizes.extend(config.widths.iter().map(|&w| (w, None)));
            for (n_h, budget) in sizes {
                let spec = NetworkSpec::new(arch, depth, n_in, n_h, n_out);
                let n_params = crate::cells::param_count(&spec);
                let opts = SpaceOptions {
                    steps: (config.train.steps.0 as i64, config.train.steps.1 as i64),
                    n_params,
                };
                let mut space = rnn_space(arch, &config.task, &opts);
                for k in config.fixed.keys() {
                    space.remove(k);
                }
                setups.push(TrialSetup {
                    study: config.name.clone(),
                    group: Group {
                        arch,
                        depth,
                        n_h,
                        n_params,
                        budget,
                    },
                    n_in,
                    n_out,
                    task_config: config.task.clone(),
                    task_seed: config.seed,
                    task: task.clone(),
                    corpus: corpus.clone(),
                    train: config.train.clone(),
                    fixed: config.fixed.clone(),
                    space,
                });
            }
        }
    }
    Ok(setups)
}

/// Runs `jobs` on up to `workers` threads, returning results in job order.
fn run_parallel<T: Send>(workers: usize, jobs: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.min(jobs).max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs {
                    break;
                }
                let out = f(i);
                slots.lock().expect("no worker panicked")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|x| x.expect("every job ran"))
        .collect()
}

/// Runs a study to completion, resuming from the results log when one
/// exists. Returns the path of the log.
pub fn run_study(config: &StudyConfig, options: &RunOptions) -> Result<PathBuf, HarnessError> {
    config.validate()?;
    fs::create_dir_all(&config.output)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", config.output.display())))?;
    let path = config.results_path();
    let hash = config.config_hash();
    let mut existing: Vec<ResultRow> = Vec::new();
    if path.exists() {
        truncate_partial_line(&path)?;
        if fs::metadata(&path)?.len() > 0 {
            let (header, rows) = read_results(&path)?;
            if header.config_hash != hash {
                return Err(HarnessError::ConfigMismatch {
                    expected: hash,
                    found: header.config_hash,
                });
            }
            existing = rows;
        }
    }
    let mut log = OpenOptions::new().create(true).append(true).open(&path)?;
    if fs::metadata(&path)?.len() == 0 {
        let header = ResultsHeader {
            format: RESULTS_FORMAT.into(),
            version: RESULTS_VERSION,
            study: config.name.clone(),
            config_hash: hash.clone(),
            config: StudyConfig {
                output: PathBuf::new(),
                ..config.clone()
            },
        };
        results::append_line(&mut log, &header)?;
    }
    let mut timings = OpenOptions::new()
        .create(true)
        .append(true)
        .open(config.output.join(TIMINGS_FILE))?;

    let strat = strategy(&config.tuner)?;
    let workers = options.workers(config);
    for setup in plan(config, options.corpus.clone())? {
        let key = setup.group.key();
        let mut done: Vec<&ResultRow> = existing.iter().filter(|r| r.group == key).collect();
        done.sort_by_key(|r| r.trial);
        if done.iter().enumerate().any(|(i, r)| r.trial != i) {
            return Err(HarnessError::Format(format!("{key}: trial indices are not contiguous")));
        }
        let mut study = Study::new(setup.space.clone());
        for r in &done {
            study.report(TrialRecord {
                index: r.trial,
                config: r.hp.clone(),
                objective: r.objective,
                feasible: r.feasible,
                seed: r.seed,
                wall_time: 0.0,
            });
        }
        let k = config.suggest_batch;
        let mut next = study.trials.len();
        while next < config.trials {
            // Batches start at multiples of k so a resumed batch is proposed
            // from the same history as in an uninterrupted run.
            let start = next / k * k;
            let len = k.min(config.trials - start);
            let history = Study {
                space: study.space.clone(),
                trials: study.trials[..start].to_vec(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(setup.suggest_seed(start));
            let suggestions = strat.suggest(&history, &[], len, &mut rng);
            let todo: Vec<usize> = (next..start + len).collect();
            let outcomes = run_parallel(workers, todo.len(), |j| {
                let trial = todo[j];
                let seed = setup.trial_seed(trial);
                setup.run(&suggestions[trial - start], seed).map(|o| (trial, seed, o))
            });
            for outcome in outcomes {
                let (trial, seed, o) = outcome?;
                let row = setup.row(&hash, trial, seed, &o);
                results::append_line(&mut log, &row)?;
                results::append_line(
                    &mut timings,
                    &TimingRow {
                        group: key.clone(),
                        trial,
                        wall_time: o.wall_time,
                    },
                )?;
                if options.verbose {
                    eprintln!(
                        "[{}] {key} trial {trial}: {}",
                        config.name,
                        row.objective.map_or("infeasible".to_string(), |v| format!("objective {v:.6}"))
                    );
                }
                study.report(TrialRecord {
                    index: trial,
                    config: o.hp,
                    objective: row.objective,
                    feasible: row.feasible,
                    seed,
                    wall_time: o.wall_time,
                });
            }
            next = start + len;
        }
    }
    Ok(path)
}

/// Continues the study whose log lives in `dir`.
pub fn resume(dir: &Path, options: &RunOptions) -> Result<PathBuf, HarnessError> {
    truncate_partial_line(&dir.join(RESULTS_FILE))?;
    run_study(&load_config(dir)?, options)
}

/// The config recorded in the log in `dir`, with `dir` as its output.
pub fn load_config(dir: &Path) -> Result<StudyConfig, HarnessError> {
    let (header, _) = read_results(&dir.join(RESULTS_FILE))?;
    Ok(StudyConfig {
        output: dir.to_path_buf(),
        ..header.config
    })
}

/// Reads the rows of the study in `dir`.
pub fn load_rows(dir: &Path) -> Result<(ResultsHeader, Vec<ResultRow>), HarnessError> {
    read_results(&dir.join(RESULTS_FILE))
}
