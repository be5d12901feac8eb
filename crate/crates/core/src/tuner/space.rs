use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TunerError;

/// One search dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Dim {
    Uniform { lo: f64, hi: f64 },
    /// Log-uniform: `exp(uniform(ln lo, ln hi))`.
    LogUniform { lo: f64, hi: f64 },
    /// Integers in `lo..=hi`, optionally spaced logarithmically.
    Int {
        lo: i64,
        hi: i64,
        #[serde(default)]
        log: bool,
    },
    Categorical { choices: Vec<String> },
}

impl Dim {
    pub fn categorical<S: AsRef<str>>(choices: &[S]) -> Self {
        Dim::Categorical {
            choices: choices.iter().map(|s| s.as_ref().to_string()).collect(),
        }
    }

    /// Width of the encoded representation.
    pub fn width(&self) -> usize {
        match self {
            Dim::Categorical { choices } => choices.len(),
            _ => 1,
        }
    }

    fn validate(&self, name: &str) -> Result<(), TunerError> {
        let bad = |why: &str| Err(TunerError::Space(format!("{name}: {why}")));
        match *self {
            Dim::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return bad("needs finite lo < hi");
                }
            }
            Dim::LogUniform { lo, hi } => {
                if !(lo > 0.0 && hi.is_finite() && lo < hi) {
                    return bad("needs 0 < lo < hi");
                }
            }
            Dim::Int { lo, hi, log } => {
                if lo > hi || (log && lo <= 0) {
                    return bad("needs lo ≤ hi (and lo > 0 when log)");
                }
            }
            Dim::Categorical { ref choices } => {
                if choices.is_empty() {
                    return bad("needs at least one choice");
                }
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> HpValue {
        match self {
            &Dim::Uniform { lo, hi } => HpValue::Float(rng.gen_range(lo..=hi)),
            &Dim::LogUniform { lo, hi } => HpValue::Float(rng.gen_range(lo.ln()..=hi.ln()).exp().clamp(lo, hi)),
            &Dim::Int { lo, hi, log: false } => HpValue::Int(rng.gen_range(lo..=hi)),
            &Dim::Int { lo, hi, log: true } => {
                // Uniform in log space over the cells [k − ½, k + ½).
                let (a, b) = (((lo as f64) - 0.5).max(0.5).ln(), ((hi as f64) + 0.5).ln());
                let v = rng.gen_range(a..b).exp().round() as i64;
                HpValue::Int(v.clamp(lo, hi))
            }
            Dim::Categorical { choices } => HpValue::Cat(choices[rng.gen_range(0..choices.len())].clone()),
        }
    }

    fn encode(&self, v: &HpValue, out: &mut Vec<f64>) -> Result<(), TunerError> {
        let unit = |x: f64, lo: f64, hi: f64| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 };
        match (self, v) {
            (&Dim::Uniform { lo, hi }, &HpValue::Float(x)) => out.push(unit(x, lo, hi)),
            (&Dim::LogUniform { lo, hi }, &HpValue::Float(x)) if x > 0.0 => out.push(unit(x.ln(), lo.ln(), hi.ln())),
            (&Dim::Int { lo, hi, log }, &HpValue::Int(x)) => out.push(if log {
                unit((x as f64).ln(), (lo as f64).ln(), (hi as f64).ln())
            } else {
                unit(x as f64, lo as f64, hi as f64)
            }),
            (Dim::Categorical { choices }, HpValue::Cat(c)) => {
                let i = choices
                    .iter()
                    .position(|x| x == c)
                    .ok_or_else(|| TunerError::Value(format!("{c:?} is not a choice")))?;
                out.extend((0..choices.len()).map(|j| if j == i { 1.0 } else { 0.0 }));
            }
            _ => return Err(TunerError::Value(format!("{v} does not fit {self:?}"))),
        }
        Ok(())
    }

    fn decode(&self, u: &[f64]) -> HpValue {
        let lerp = |lo: f64, hi: f64| lo + u[0].clamp(0.0, 1.0) * (hi - lo);
        match self {
            &Dim::Uniform { lo, hi } => HpValue::Float(lerp(lo, hi)),
            &Dim::LogUniform { lo, hi } => HpValue::Float(lerp(lo.ln(), hi.ln()).exp().clamp(lo, hi)),
            &Dim::Int { lo, hi, log } => {
                let x = if log {
                    lerp((lo as f64).ln(), (hi as f64).ln()).exp()
                } else {
                    lerp(lo as f64, hi as f64)
                };
                HpValue::Int((x.round() as i64).clamp(lo, hi))
            }
            Dim::Categorical { choices } => {
                let mut best = 0;
                for (i, &x) in u.iter().enumerate() {
                    if x > u[best] {
                        best = i;
                    }
                }
                HpValue::Cat(choices[best].clone())
            }
        }
    }
}

/// A point value of one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HpValue {
    Int(i64),
    Float(f64),
    Cat(String),
}

impl HpValue {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            HpValue::Float(x) => Some(x),
            HpValue::Int(i) => Some(i as f64),
            HpValue::Cat(_) => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match *self {
            HpValue::Int(i) => Some(i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            HpValue::Cat(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for HpValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HpValue::Int(i) => write!(f, "{i}"),
            HpValue::Float(x) => write!(f, "{x}"),
            HpValue::Cat(s) => f.write_str(s),
        }
    }
}

/// A point in a search space, keyed by dimension name.
pub type HpConfig = BTreeMap<String, HpValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpParam {
    pub name: String,
    pub dim: Dim,
}

/// An ordered list of named dimensions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HpSpace {
    pub params: Vec<HpParam>,
}

impl HpSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, dim: Dim) -> Self {
        self.push(name, dim);
        self
    }

    /// Adds or replaces a dimension.
    pub fn push(&mut self, name: &str, dim: Dim) {
        match self.params.iter_mut().find(|p| p.name == name) {
            Some(p) => p.dim = dim,
            None => self.params.push(HpParam {
                name: name.to_string(),
                dim,
            }),
        }
    }

    pub fn remove(&mut self, name: &str) {
        self.params.retain(|p| p.name != name);
    }

    pub fn get(&self, name: &str) -> Option<&Dim> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.dim)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn validate(&self) -> Result<(), TunerError> {
        for (i, p) in self.params.iter().enumerate() {
            if self.params[..i].iter().any(|q| q.name == p.name) {
                return Err(TunerError::Space(format!("duplicate dimension {:?}", p.name)));
            }
            p.dim.validate(&p.name)?;
        }
        Ok(())
    }

    /// Total width of the unit-cube encoding.
    pub fn encoded_len(&self) -> usize {
        self.params.iter().map(|p| p.dim.width()).sum()
    }

    /// For every encoded coordinate, the index of the dimension it belongs to.
    pub fn coordinate_groups(&self) -> Vec<usize> {
        self.params
            .iter()
            .enumerate()
            .flat_map(|(i, p)| std::iter::repeat_n(i, p.dim.width()))
            .collect()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> HpConfig {
        self.params.iter().map(|p| (p.name.clone(), p.dim.sample(rng))).collect()
    }

    /// Min-max scaling to `[0, 1]` (log dimensions in log space),
    /// categoricals one-hot.
    pub fn encode(&self, config: &HpConfig) -> Result<Vec<f64>, TunerError> {
        let mut out = Vec::with_capacity(self.encoded_len());
        for p in &self.params {
            let v = config
                .get(&p.name)
                .ok_or_else(|| TunerError::Value(format!("missing {:?}", p.name)))?;
            p.dim.encode(v, &mut out)?;
        }
        Ok(out)
    }

    pub fn decode(&self, u: &[f64]) -> Result<HpConfig, TunerError> {
        if u.len() != self.encoded_len() {
            return Err(TunerError::Value(format!(
                "{} coordinates for a space of width {}",
                u.len(),
                self.encoded_len()
            )));
        }
        let mut config = HpConfig::new();
        let mut at = 0;
        for p in &self.params {
            let w = p.dim.width();
            config.insert(p.name.clone(), p.dim.decode(&u[at..at + w]));
            at += w;
        }
        Ok(config)
    }

    /// Whether `config` names exactly this space's dimensions with values
    /// inside their bounds.
    pub fn contains(&self, config: &HpConfig) -> bool {
        config.len() == self.params.len()
            && self.params.iter().all(|p| {
                config.get(&p.name).is_some_and(|v| match (&p.dim, v) {
                    (&Dim::Uniform { lo, hi } | &Dim::LogUniform { lo, hi }, &HpValue::Float(x)) => {
                        (lo..=hi).contains(&x)
                    }
                    (&Dim::Int { lo, hi, .. }, &HpValue::Int(x)) => (lo..=hi).contains(&x),
                    (Dim::Categorical { choices }, HpValue::Cat(c)) => choices.contains(c),
                    _ => false,
                })
            })
    }
}

/// One random point drawn with a fresh generator seeded by `seed`.
pub fn sample_random(space: &HpSpace, seed: u64) -> HpConfig {
    space.sample(&mut ChaCha8Rng::seed_from_u64(seed))
}
