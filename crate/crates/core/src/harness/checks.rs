//! Self-checks shared by the CLI and the acceptance suite. Each compares a
//! library result with an independent computation.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::capacity::{mutual_information, rerun_stats, welch_t};
use crate::cells::{gradient_check, ArchKind};
use crate::tasks::{
    arith_answer, count_parens, decode_answer, gen_arith, gen_parens, ArithSample, ARITH_ALPHABET, PAREN_PAIRS,
};
use crate::tuner::{Dim, GpBandit, HpConfig, HpSpace, RandomSearch, Strategy, Study, TrialRecord};

/// Gradient agreement required of every architecture.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Agreement required between the closed-form and enumerated information.
pub const MI_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

/// Analytic against central-difference gradients for every architecture.
pub fn gradcheck_all(depth: usize, n_h: usize, steps: usize, seed: u64) -> CheckOutcome {
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, arch) in ArchKind::ALL.into_iter().enumerate() {
        let depth = depth.max(arch.min_depth());
        match gradient_check(arch, depth, 3, n_h, steps, seed + i as u64) {
            Ok(g) => {
                worst = worst.max(g.max_rel_err);
                ok &= g.max_rel_err < GRADCHECK_TOLERANCE;
                parts.push(format!("{arch} {:.1e} ({} params)", g.max_rel_err, g.n_params));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{arch} error: {e}"));
            }
        }
    }
    CheckOutcome::new(
        "gradient fidelity",
        ok,
        format!("max relative error {worst:.2e}; {}", parts.join(", ")),
    )
}

/// Information between uniform binary labels and predictions `correct` of
/// `b` of which are right, by enumerating the joint label/prediction
/// distribution with errors split evenly over both classes.
pub fn enumerated_information(correct: usize, b: usize) -> f64 {
    let bf = b as f64;
    let wrong = (b - correct) as f64;
    // joint[y][ŷ] as a fraction of the samples.
    let joint = [
        [correct as f64 / (2.0 * bf), wrong / (2.0 * bf)],
        [wrong / (2.0 * bf), correct as f64 / (2.0 * bf)],
    ];
    let py = [joint[0][0] + joint[0][1], joint[1][0] + joint[1][1]];
    let pyhat = [joint[0][0] + joint[1][0], joint[0][1] + joint[1][1]];
    let mut per_sample = 0.0;
    for y in 0..2 {
        for yh in 0..2 {
            let p = joint[y][yh];
            if p > 0.0 {
                per_sample += p * (p / (py[y] * pyhat[yh])).log2();
            }
        }
    }
    bf * per_sample
}

/// Closed-form information against enumeration for every `b ≤ max_b`
/// and every correct count.
pub fn mi_oracle(max_b: usize) -> CheckOutcome {
    let mut worst = 0.0f64;
    for b in 1..=max_b {
        for c in 0..=b {
            let closed = mutual_information(c as f64 / b as f64, b as f64).expect("valid fraction");
            worst = worst.max((closed - enumerated_information(c, b)).abs());
        }
    }
    CheckOutcome::new(
        "mutual information oracle",
        worst <= MI_TOLERANCE,
        format!("b ≤ {max_b}: max deviation {worst:.1e}"),
    )
}

/// Open count after each character with an explicit stack capped at nine.
fn stack_trace(text: &str, open: char, close: char) -> Vec<u8> {
    let mut stack = Vec::new();
    text.chars()
        .map(|c| {
            if c == open && stack.len() < 9 {
                stack.push(c);
            } else if c == close {
                stack.pop();
            }
            stack.len() as u8
        })
        .collect()
}

/// Recovers the operands by reading the characters fed to the network.
fn parse_arith_input(s: &ArithSample) -> Option<(i64, i64)> {
    let text: String = s.input.iter().map(|&i| ARITH_ALPHABET[i]).collect();
    let body = text.trim().strip_suffix('=')?;
    let (a, b) = body.split_once('+')?;
    Some((a.parse().ok()?, b.parse().ok()?))
}

/// Parenthesis labels against a stack counter and arithmetic targets
/// against integer addition, plus the two worked examples.
pub fn task_oracles(samples: usize, seed: u64) -> CheckOutcome {
    let mut paren_bad = 0;
    for i in 0..samples {
        let s = gen_parens(10, 40, seed.wrapping_add(i as u64));
        for (k, &(open, close)) in PAREN_PAIRS.iter().enumerate() {
            if s.labels[k] != stack_trace(&s.text(k), open, close) {
                paren_bad += 1;
            }
        }
    }
    let mut arith_bad = 0;
    for i in 0..samples {
        let gap = 1 + i % 6;
        let s = gen_arith(seed.wrapping_add(i as u64), gap).expect("gap in range");
        let sum = parse_arith_input(&s).map(|(a, b)| a + b);
        if sum.is_none() || sum != decode_answer(&s.target).ok() || sum != Some(s.a + s.b) {
            arith_bad += 1;
        }
    }
    let parens_example = count_parens("(a{<a<bcb>[[[)", 3);
    let arith_example = arith_answer("-343243+93851= ").unwrap_or_default();
    let passed = paren_bad == 0 && arith_bad == 0 && parens_example == 1 && arith_example == "-249392";
    CheckOutcome::new(
        "task oracles",
        passed,
        format!(
            "{samples} samples each: {paren_bad} paren and {arith_bad} arith mismatches; \
             '<>' count {parens_example}, answer {arith_example:?}"
        ),
    )
}

/// Welch and rerun statistics on hand-computed fixtures.
pub fn statistics_fixtures() -> CheckOutcome {
    let w = welch_t(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]);
    let r = rerun_stats(&[1.0, 2.0, 3.0], 0);
    let c = rerun_stats(&[0.7; 5], 0);
    let i = rerun_stats(&[1.0; 52], 48);
    let passed = match (&w, &r, &c, &i) {
        (Ok(w), Ok(r), Ok(c), Ok(i)) => {
            (w.t + 1.2247).abs() < 1e-3
                && (w.df - 4.0).abs() < 1e-3
                && (w.p - 0.288).abs() < 1e-3
                && r.mean == 2.0
                && r.sd == 1.0
                && r.sd_over_mean == 0.5
                && c.sd == 0.0
                && i.infeasible_pct == 48.0
        }
        _ => false,
    };
    let detail = match (w, r) {
        (Ok(w), Ok(r)) => format!(
            "welch t={:.4} df={:.3} p={:.4}; rerun mean={} sd={}",
            w.t, w.df, w.p, r.mean, r.sd
        ),
        (w, r) => format!("errors: {:?} {:?}", w.err(), r.err()),
    };
    CheckOutcome::new("statistics", passed, detail)
}

/// Minimizes `f` for `trials` sequential suggestions.
pub fn run_sequential(
    strategy: &dyn Strategy,
    space: &HpSpace,
    f: impl Fn(&HpConfig) -> f64,
    trials: usize,
    seed: u64,
) -> Study {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut study = Study::new(space.clone());
    for index in 0..trials {
        let c = strategy.suggest(&study, &[], 1, &mut rng).remove(0);
        let y = f(&c);
        study.report(TrialRecord {
            index,
            config: c,
            objective: Some(y),
            feasible: true,
            seed,
            wall_time: 0.0,
        });
    }
    study
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// The bowl `Σ (x_i − c_i)²` over three unit dimensions with a categorical
/// that has no effect.
pub fn bowl_space() -> HpSpace {
    HpSpace::new()
        .with("x", Dim::Uniform { lo: 0.0, hi: 1.0 })
        .with("y", Dim::Uniform { lo: 0.0, hi: 1.0 })
        .with("z", Dim::Uniform { lo: 0.0, hi: 1.0 })
        .with("dummy", Dim::categorical(&["a", "b", "c"]))
}

pub fn bowl(c: &HpConfig) -> f64 {
    let v = |k: &str| c[k].as_f64().expect("numeric");
    (v("x") - 0.3).powi(2) + (v("y") - 0.7).powi(2) + (v("z") - 0.45).powi(2)
}

/// Median best-after-`trials` of the GP tuner and of random search.
pub fn tuner_sanity(seeds: usize, trials: usize) -> CheckOutcome {
    let space = bowl_space();
    let best = |s: Study| s.best_objective().expect("feasible trials");
    let gp: Vec<f64> = (0..seeds as u64)
        .map(|s| best(run_sequential(&GpBandit::default(), &space, bowl, trials, s)))
        .collect();
    let random: Vec<f64> = (0..seeds as u64)
        .map(|s| best(run_sequential(&RandomSearch, &space, bowl, trials, 1000 + s)))
        .collect();
    let (g, r) = (median(gp), median(random));
    CheckOutcome::new(
        "tuner sanity",
        g < r,
        format!("median best after {trials}: gp {g:.2e}, random {r:.2e} over {seeds} seeds"),
    )
}
