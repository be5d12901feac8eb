use serde::{Deserialize, Serialize};

use super::{momentum_from_logit, TrainError};

pub const ADAM_BETA2: f64 = 0.999;
pub const OPT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Rmsprop,
    Adam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [Self::Sgd, Self::Momentum, Self::Rmsprop, Self::Adam];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Momentum => "momentum",
            Self::Rmsprop => "rmsprop",
            Self::Adam => "adam",
        }
    }

    pub fn lookup(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name.to_ascii_lowercase())
    }

    /// Fresh optimizer state for `n` parameters. `momentum_logit` sets the
    /// momentum, the rmsprop decay and Adam's first-moment decay.
    pub fn build(self, n: usize, momentum_logit: f64) -> Box<dyn Optimizer> {
        let m = momentum_from_logit(momentum_logit);
        match self {
            Self::Sgd => Box::new(Sgd),
            Self::Momentum => Box::new(Momentum {
                momentum: m,
                velocity: vec![0.0; n],
            }),
            Self::Rmsprop => Box::new(RmsProp {
                decay: m,
                square: vec![0.0; n],
            }),
            Self::Adam => Box::new(Adam {
                beta1: m,
                beta2: ADAM_BETA2,
                t: 0,
                m: vec![0.0; n],
                v: vec![0.0; n],
            }),
        }
    }
}

/// One update rule with its running state.
pub trait Optimizer: Send {
    fn name(&self) -> &'static str;

    /// Number of parameters the state was built for, if it keeps any.
    fn state_len(&self) -> Option<usize>;

    /// `params ← update(params, grads, lr)`; entries with `mask[i] == false`
    /// are left unchanged and do not advance their state.
    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, mask: Option<&[bool]>) -> Result<(), TrainError> {
        if params.len() != grads.len() || mask.is_some_and(|m| m.len() != params.len()) {
            return Err(TrainError::Shape {
                params: params.len(),
                grads: grads.len(),
            });
        }
        if let Some(n) = self.state_len() {
            if n != params.len() {
                return Err(TrainError::Shape {
                    params: params.len(),
                    grads: n,
                });
            }
        }
        self.begin_step();
        for i in 0..params.len() {
            if mask.is_none_or(|m| m[i]) {
                params[i] -= lr * self.direction(i, grads[i]);
            }
        }
        Ok(())
    }

    /// Called once per step before any [`Optimizer::direction`].
    fn begin_step(&mut self) {}

    /// Update direction for entry `i` given its gradient; advances state.
    fn direction(&mut self, i: usize, g: f64) -> f64;
}

pub struct Sgd;

impl Optimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn state_len(&self) -> Option<usize> {
        None
    }

    fn direction(&mut self, _i: usize, g: f64) -> f64 {
        g
    }
}

/// `v ← m·v + g`, `p ← p − lr·v`.
pub struct Momentum {
    pub momentum: f64,
    pub velocity: Vec<f64>,
}

impl Optimizer for Momentum {
    fn name(&self) -> &'static str {
        "momentum"
    }

    fn state_len(&self) -> Option<usize> {
        Some(self.velocity.len())
    }

    fn direction(&mut self, i: usize, g: f64) -> f64 {
        self.velocity[i] = self.momentum * self.velocity[i] + g;
        self.velocity[i]
    }
}

/// `s ← ρ·s + (1−ρ)·g²`, `p ← p − lr·g/(√s + ε)`.
pub struct RmsProp {
    pub decay: f64,
    pub square: Vec<f64>,
}

impl Optimizer for RmsProp {
    fn name(&self) -> &'static str {
        "rmsprop"
    }

    fn state_len(&self) -> Option<usize> {
        Some(self.square.len())
    }

    fn direction(&mut self, i: usize, g: f64) -> f64 {
        self.square[i] = self.decay * self.square[i] + (1.0 - self.decay) * g * g;
        g / (self.square[i].sqrt() + OPT_EPSILON)
    }
}

/// Adam with bias-corrected moments.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub t: u32,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn state_len(&self) -> Option<usize> {
        Some(self.m.len())
    }

    fn begin_step(&mut self) {
        self.t += 1;
    }

    fn direction(&mut self, i: usize, g: f64) -> f64 {
        self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
        self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
        let m_hat = self.m[i] / (1.0 - self.beta1.powi(self.t as i32));
        let v_hat = self.v[i] / (1.0 - self.beta2.powi(self.t as i32));
        m_hat / (v_hat.sqrt() + OPT_EPSILON)
    }
}
