use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{chunks, one_hot_rows, Batch, StepTarget, Target, Task, TaskError, EVAL_CHUNK};
use crate::cells::SeqInput;

pub const ARITH_ALPHABET: [char; 14] = [
    '0', '1', '2', '3', '4', '5', '6', '7', '8', '9', '-', '+', '=', ' ',
];
/// Widest problem is `-10000000+-10000000= `.
pub const ARITH_INPUT_WIDTH: usize = 21;
/// Widest answer is `-20000000`.
pub const ARITH_ANSWER_WIDTH: usize = 9;
pub const ARITH_MAX_GAP: usize = 6;
pub const ARITH_HORIZON: usize = ARITH_MAX_GAP + ARITH_INPUT_WIDTH + ARITH_ANSWER_WIDTH;
const OPERAND_MAX: i64 = 10_000_000;
const SPACE: usize = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArithConfig {
    /// Compute steps between the problem field and the answer window.
    pub gap: usize,
    pub validation_samples: usize,
    pub evaluation_samples: usize,
}

impl Default for ArithConfig {
    fn default() -> Self {
        Self {
            gap: 3,
            validation_samples: 512,
            evaluation_samples: 1024,
        }
    }
}

/// One addition problem laid out over [`ARITH_HORIZON`] steps:
/// `6 − gap` filler spaces, the right-padded problem field, `gap` spaces,
/// then the answer window, during which the input is a space.
#[derive(Debug, Clone, PartialEq)]
pub struct ArithSample {
    pub a: i64,
    pub b: i64,
    pub gap: usize,
    /// Alphabet indices fed at each step.
    pub input: Vec<usize>,
    /// Left-padded answer, one alphabet index per answer step.
    pub target: Vec<usize>,
}

impl ArithSample {
    /// First step of the answer window.
    pub fn answer_start() -> usize {
        ARITH_HORIZON - ARITH_ANSWER_WIDTH
    }

    pub fn target_text(&self) -> String {
        self.target.iter().map(|&i| ARITH_ALPHABET[i]).collect()
    }
}

fn symbol(c: char) -> Result<usize, TaskError> {
    ARITH_ALPHABET
        .iter()
        .position(|&a| a == c)
        .ok_or_else(|| TaskError::Parse(c.to_string()))
}

pub fn encode_arith(a: i64, b: i64, gap: usize) -> Result<ArithSample, TaskError> {
    if !(1..=ARITH_MAX_GAP).contains(&gap) {
        return Err(TaskError::Config(format!("gap {gap} outside 1..={ARITH_MAX_GAP}")));
    }
    if a.abs() > OPERAND_MAX || b.abs() > OPERAND_MAX {
        return Err(TaskError::Config(format!("operands must lie in ±{OPERAND_MAX}")));
    }
    let problem = format!("{a}+{b}= ");
    let answer = format!("{:>width$}", a + b, width = ARITH_ANSWER_WIDTH);
    let mut input = vec![SPACE; ARITH_MAX_GAP - gap];
    for c in problem.chars() {
        input.push(symbol(c)?);
    }
    input.resize(ARITH_MAX_GAP - gap + ARITH_INPUT_WIDTH, SPACE);
    input.resize(ARITH_HORIZON, SPACE);
    let target = answer.chars().map(symbol).collect::<Result<_, _>>()?;
    Ok(ArithSample {
        a,
        b,
        gap,
        input,
        target,
    })
}

/// Parses a left-padded answer back to an integer.
pub fn decode_answer(target: &[usize]) -> Result<i64, TaskError> {
    let text: String = target
        .iter()
        .map(|&i| ARITH_ALPHABET.get(i).copied().unwrap_or('?'))
        .collect();
    text.trim_start().parse().map_err(|_| TaskError::Parse(text))
}

/// Answer text for a problem such as `"-343243+93851= "`.
pub fn arith_answer(problem: &str) -> Result<String, TaskError> {
    let err = || TaskError::Parse(problem.to_string());
    let body = problem.trim_end().strip_suffix('=').ok_or_else(err)?;
    let (a, b) = body.split_once('+').ok_or_else(err)?;
    let a: i64 = a.parse().map_err(|_| err())?;
    let b: i64 = b.parse().map_err(|_| err())?;
    Ok((a + b).to_string())
}

fn draw(gap: usize, rng: &mut ChaCha8Rng) -> ArithSample {
    let a = rng.gen_range(-OPERAND_MAX..=OPERAND_MAX);
    let b = rng.gen_range(-OPERAND_MAX..=OPERAND_MAX);
    encode_arith(a, b, gap).expect("operands and gap in range")
}

pub fn gen_arith(seed: u64, gap: usize) -> Result<ArithSample, TaskError> {
    if !(1..=ARITH_MAX_GAP).contains(&gap) {
        return Err(TaskError::Config(format!("gap {gap} outside 1..={ARITH_MAX_GAP}")));
    }
    Ok(draw(gap, &mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Add two signed integers presented as characters.
pub struct ArithTask {
    config: ArithConfig,
    validation: Vec<Batch>,
    evaluation: Vec<Batch>,
}

impl ArithTask {
    pub fn new(config: ArithConfig, seed: u64) -> Result<Self, TaskError> {
        if !(1..=ARITH_MAX_GAP).contains(&config.gap) {
            return Err(TaskError::Config(format!("gap {} outside 1..={ARITH_MAX_GAP}", config.gap)));
        }
        let fixed = |n: usize, salt: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
            chunks(n, EVAL_CHUNK)
                .map(|r| {
                    let samples: Vec<_> = r.map(|_| draw(config.gap, &mut rng)).collect();
                    encode(&samples, 1.0 / n as f64)
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
}

fn encode(samples: &[ArithSample], scale: f64) -> Batch {
    let width = ARITH_ALPHABET.len();
    let steps = (0..ARITH_HORIZON)
        .map(|t| Some(one_hot_rows(samples.len(), width, |r| vec![samples[r].input[t]])))
        .collect();
    let start = ArithSample::answer_start();
    let targets = (0..ARITH_ANSWER_WIDTH)
        .map(|j| StepTarget {
            step: start + j,
            target: Target::Classes {
                labels: samples.iter().map(|s| s.target[j]).collect(),
                classes: width,
            },
        })
        .collect();
    Batch {
        input: SeqInput {
            batch: samples.len(),
            steps,
        },
        targets,
        scale,
    }
}

impl Task for ArithTask {
    fn name(&self) -> &'static str {
        "arith"
    }

    fn n_in(&self) -> usize {
        ARITH_ALPHABET.len()
    }

    fn n_out(&self) -> usize {
        ARITH_ALPHABET.len()
    }

    fn train_batch(&self, size: usize, rng: &mut ChaCha8Rng) -> Batch {
        let samples: Vec<_> = (0..size).map(|_| draw(self.config.gap, rng)).collect();
        encode(&samples, 1.0 / size as f64)
    }

    fn validation(&self) -> &[Batch] {
        &self.validation
    }

    fn evaluation(&self) -> &[Batch] {
        &self.evaluation
    }
}
