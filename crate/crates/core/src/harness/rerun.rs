use serde::{Deserialize, Serialize};

use super::{derive_seed, plan, run_parallel, HarnessError, ResultRow, RunOptions, StudyConfig};
use crate::capacity::{rerun_stats, welch_t, RerunStats};

/// Repeated runs of one group's best configuration with fresh network seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerunReport {
    pub group: String,
    pub trial: usize,
    /// Evaluation objectives of the feasible reruns.
    pub losses: Vec<f64>,
    pub infeasible: usize,
    pub stats: Option<RerunStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelchRow {
    pub a: String,
    pub b: String,
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Reruns the best trial of every group `runs` times.
pub fn rerun_study(
    config: &StudyConfig,
    rows: &[ResultRow],
    runs: usize,
    options: &RunOptions,
) -> Result<Vec<RerunReport>, HarnessError> {
    let workers = options.workers(config);
    let mut reports = Vec::new();
    for setup in plan(config, options.corpus.clone())? {
        let key = setup.group.key();
        let Some(best) = rows
            .iter()
            .filter(|r| r.group == key && r.feasible && r.objective.is_some())
            .min_by(|a, b| a.objective.partial_cmp(&b.objective).expect("finite objectives"))
        else {
            continue;
        };
        let outcomes = run_parallel(workers, runs, |i| {
            let seed = derive_seed(&[&config.name, &key, "rerun", &i.to_string()]);
            setup.run(&best.hp, seed)
        });
        let mut losses = Vec::new();
        let mut infeasible = 0;
        for o in outcomes {
            match o?.result.evaluation.filter(|m| m.objective.is_finite()) {
                Some(m) => losses.push(m.objective),
                None => infeasible += 1,
            }
        }
        let stats = if losses.is_empty() {
            None
        } else {
            Some(rerun_stats(&losses, infeasible)?)
        };
        if options.verbose {
            eprintln!("[{}] rerun {key}: {} feasible of {runs}", config.name, losses.len());
        }
        reports.push(RerunReport {
            group: key,
            trial: best.trial,
            losses,
            infeasible,
            stats,
        });
    }
    Ok(reports)
}

/// Welch's test for every pair of reports with enough samples.
pub fn welch_table(reports: &[RerunReport]) -> Vec<WelchRow> {
    let mut out = Vec::new();
    for (i, a) in reports.iter().enumerate() {
        for b in &reports[i + 1..] {
            if let Ok(w) = welch_t(&a.losses, &b.losses) {
                out.push(WelchRow {
                    a: a.group.clone(),
                    b: b.group.clone(),
                    t: w.t,
                    df: w.df,
                    p: w.p,
                });
            }
        }
    }
    out
}
