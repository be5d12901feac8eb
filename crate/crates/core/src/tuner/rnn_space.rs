use serde::{Deserialize, Serialize};

use super::{Dim, HpConfig, HpSpace, HpValue, TunerError};
use crate::cells::{ArchKind, BiasMode, NetworkSpec, Presentation, SquareInit};
use crate::ndcore::Activation;
use crate::tasks::{TaskConfig, ARITH_MAX_GAP};
use crate::training::{OptimizerConfig, OptimizerKind};

/// Task-dependent ranges of the standard space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceOptions {
    /// Inclusive range of training steps, searched log-uniformly.
    pub steps: (i64, i64),
    /// Trainable parameter count; sets the capacity-task sample range.
    pub n_params: usize,
}

/// The standard RNN hyperparameter space for one architecture and task.
pub fn rnn_space(arch: ArchKind, task: &TaskConfig, opts: &SpaceOptions) -> HpSpace {
    let mut s = HpSpace::new();
    match arch {
        ArchKind::Irnn | ArchKind::PlusRnn => {}
        _ => s.push("nonlinearity", Dim::categorical(&["tanh", "relu"])),
    }
    match arch {
        ArchKind::Irnn => {}
        ArchKind::Rnn => s.push("square_init", Dim::categorical(&["orthogonal", "normal"])),
        _ => s.push("square_init", Dim::categorical(&["identity", "orthogonal", "normal"])),
    }
    s.push("recurrent_scale", Dim::LogUniform { lo: 0.01, hi: 2.0 });
    s.push("input_scale", Dim::LogUniform { lo: 0.001, hi: 2.0 });
    s.push("bias_mode", Dim::categorical(&["constant", "normal"]));
    s.push("bias_scale", Dim::Uniform { lo: -2.0, hi: 2.0 });
    if arch.gated() {
        s.push("forget_bias", Dim::Uniform { lo: 0.0, hi: 6.0 });
    }
    let (lo, hi) = opts.steps;
    if lo < hi {
        s.push("steps", Dim::Int { lo, hi, log: true });
    }
    s.push("optimizer", Dim::categorical(&OptimizerKind::ALL.map(OptimizerKind::name)));
    s.push("lr0", Dim::LogUniform { lo: 1e-4, hi: 1e-1 });
    s.push("decay", Dim::LogUniform { lo: 1e-3, hi: 1.0 });
    s.push("momentum_logit", Dim::Uniform { lo: 1.0, hi: 7.0 });
    s.push("clip", Dim::LogUniform { lo: 1.0, hi: 100.0 });
    s.push("l2", Dim::LogUniform { lo: 1e-8, hi: 1e-3 });
    match task {
        TaskConfig::Capacity(_) => {
            let n = opts.n_params.max(1) as f64;
            let lo = ((0.1 * n).ceil() as i64).max(1);
            s.push("b", Dim::Int { lo, hi: ((10.0 * n) as i64).max(lo + 1), log: true });
            s.push("presentation", Dim::categorical(&["first_step", "every_step"]));
        }
        TaskConfig::Arith(_) => s.push("gap", Dim::Int { lo: 1, hi: ARITH_MAX_GAP as i64, log: false }),
        _ => {}
    }
    s
}

fn float(config: &HpConfig, key: &str) -> Result<Option<f64>, TunerError> {
    config
        .get(key)
        .map(|v| v.as_f64().ok_or_else(|| TunerError::Value(format!("{key} must be numeric, got {v}"))))
        .transpose()
}

fn int(config: &HpConfig, key: &str) -> Result<Option<usize>, TunerError> {
    config
        .get(key)
        .map(|v| match v {
            HpValue::Int(i) if *i >= 0 => Ok(*i as usize),
            _ => Err(TunerError::Value(format!("{key} must be a non-negative integer, got {v}"))),
        })
        .transpose()
}

fn cat<'a>(config: &'a HpConfig, key: &str) -> Result<Option<&'a str>, TunerError> {
    config
        .get(key)
        .map(|v| v.as_str().ok_or_else(|| TunerError::Value(format!("{key} must be a choice, got {v}"))))
        .transpose()
}

fn parse<T: for<'de> Deserialize<'de>>(key: &str, s: &str) -> Result<T, TunerError> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| TunerError::Value(format!("{key}: unknown choice {s:?}")))
}

/// Writes network-related values of `config` into `spec`.
pub fn apply_network(config: &HpConfig, spec: &mut NetworkSpec) -> Result<(), TunerError> {
    if let Some(s) = cat(config, "nonlinearity")? {
        spec.nonlinearity = match s {
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            _ => return Err(TunerError::Value(format!("nonlinearity: unknown choice {s:?}"))),
        };
    }
    if let Some(s) = cat(config, "square_init")? {
        spec.init.square = parse::<SquareInit>("square_init", s)?;
    }
    if let Some(s) = cat(config, "bias_mode")? {
        spec.init.bias_mode = parse::<BiasMode>("bias_mode", s)?;
    }
    if let Some(x) = float(config, "recurrent_scale")? {
        spec.init.recurrent_scale = x;
    }
    if let Some(x) = float(config, "input_scale")? {
        spec.init.input_scale = x;
    }
    if let Some(x) = float(config, "bias_scale")? {
        spec.init.bias_scale = x;
    }
    if let Some(x) = float(config, "forget_bias")? {
        spec.init.forget_bias = x;
    }
    Ok(())
}

/// Writes optimizer-related values of `config` into `opt`.
pub fn apply_optimizer(config: &HpConfig, opt: &mut OptimizerConfig) -> Result<(), TunerError> {
    if let Some(s) = cat(config, "optimizer")? {
        opt.kind = OptimizerKind::lookup(s).ok_or_else(|| TunerError::Value(format!("unknown optimizer {s:?}")))?;
    }
    if let Some(x) = int(config, "steps")? {
        opt.steps = x;
    }
    if let Some(x) = int(config, "batch")? {
        opt.batch = x;
    }
    for (key, field) in [
        ("lr0", &mut opt.lr0),
        ("decay", &mut opt.decay),
        ("momentum_logit", &mut opt.momentum_logit),
        ("clip", &mut opt.clip),
        ("l2", &mut opt.l2),
    ] {
        if let Some(x) = float(config, key)? {
            *field = x;
        }
    }
    Ok(())
}

/// Writes task-specific values of `config` into `task`.
pub fn apply_task(config: &HpConfig, task: &mut TaskConfig) -> Result<(), TunerError> {
    match task {
        TaskConfig::Capacity(c) => {
            if let Some(b) = int(config, "b")? {
                c.b = b;
            }
            if let Some(s) = cat(config, "presentation")? {
                c.presentation = parse::<Presentation>("presentation", s)?;
            }
        }
        TaskConfig::Arith(c) => {
            if let Some(g) = int(config, "gap")? {
                c.gap = g;
            }
        }
        _ => {}
    }
    Ok(())
}
