//! The six recurrent architectures, stacked into unrolled networks.
//!
//! Each architecture implements [`Architecture`] and is looked up by name
//! through [`registry`]. Weight matrices are stored in row-vector
//! orientation: a layer computes `x·W^x + h·W^h + b`, so an input-to-hidden
//! matrix has shape `n_x × n_h`.

mod gradcheck;
mod kernels;
mod network;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ndcore::{Activation, NdError, Tape, Tensor, Var};

pub use gradcheck::{gradient_check, relative_error, GradCheck, FD_STEP, KINK_MARGIN};
pub use kernels::{Gru, Irnn, Lstm, PlusRnn, Rnn, Ugrnn};
pub use network::{
    init_matrix, init_params, param_count, units_for_budget, BiasMode, InitConfig, LayerState, NetVars,
    Network, NetworkParams, NetworkSpec, ParamBlock, Presentation, ReadoutSteps, SeqInput,
    SquareInit, Unrolled,
};

#[derive(Debug, Error, PartialEq)]
pub enum CellError {
    #[error(transparent)]
    Nd(#[from] NdError),
    #[error("{0} is not defined for depth 1")]
    DepthOne(ArchKind),
    #[error("depth must be at least 1")]
    ZeroDepth,
    #[error("{arch} does not allow {what}")]
    Forbidden { arch: ArchKind, what: String },
    #[error("identity initialization needs a square matrix, got {rows}×{cols}")]
    NonSquareIdentity { rows: usize, cols: usize },
    #[error("budget of {budget} parameters cannot fit one unit (needs {needed})")]
    BudgetTooSmall { budget: usize, needed: usize },
    #[error("width mismatch: {0}")]
    Width(String),
    #[error("unknown architecture {0:?}")]
    UnknownArch(String),
    #[error("no parameter block named {0:?}")]
    UnknownBlock(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Rnn,
    Irnn,
    Ugrnn,
    Gru,
    Lstm,
    PlusRnn,
}

impl ArchKind {
    pub const ALL: [ArchKind; 6] = [
        ArchKind::Rnn,
        ArchKind::Irnn,
        ArchKind::Ugrnn,
        ArchKind::Gru,
        ArchKind::Lstm,
        ArchKind::PlusRnn,
    ];

    pub fn name(self) -> &'static str {
        self.architecture().name()
    }

    pub fn architecture(self) -> &'static dyn Architecture {
        match self {
            ArchKind::Rnn => &Rnn,
            ArchKind::Irnn => &Irnn,
            ArchKind::Ugrnn => &Ugrnn,
            ArchKind::Gru => &Gru,
            ArchKind::Lstm => &Lstm,
            ArchKind::PlusRnn => &PlusRnn,
        }
    }

    /// Whether the architecture carries a forget/update gate bias `b^fg`.
    pub fn gated(self) -> bool {
        !matches!(self, ArchKind::Rnn | ArchKind::Irnn)
    }

    pub fn min_depth(self) -> usize {
        if self == ArchKind::PlusRnn {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchKind {
    type Err = CellError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        lookup(s)
            .map(|a| a.kind())
            .ok_or_else(|| CellError::UnknownArch(s.to_string()))
    }
}

/// How a parameter block is initialized and whether it is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockRole {
    /// Hidden-to-hidden matrix.
    Recurrent,
    /// Input-to-hidden matrix.
    Input,
    Bias,
    /// The scalar `b^fg`; set from its hyperparameter and never updated.
    GateBias,
    /// Learned initial state vector.
    InitialState,
    ReadoutWeight,
    ReadoutBias,
}

impl BlockRole {
    pub fn trainable(self) -> bool {
        self != BlockRole::GateBias
    }
}

/// Shape and role of one named parameter block inside a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub role: BlockRole,
}

impl BlockSpec {
    fn new(name: &'static str, rows: usize, cols: usize, role: BlockRole) -> Self {
        Self {
            name,
            rows,
            cols,
            role,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Recurrent state of one layer: `h`, plus `c` for the LSTM.
#[derive(Debug, Clone)]
pub struct StepState {
    pub h: Tensor,
    pub c: Option<Tensor>,
    /// Depth output of the last step; only the +RNN produces one.
    pub y: Option<Tensor>,
}

impl StepState {
    pub fn new(h: Tensor) -> Self {
        Self { h, c: None, y: None }
    }

    pub fn with_cell(h: Tensor, c: Tensor) -> Self {
        Self {
            h,
            c: Some(c),
            y: None,
        }
    }
}

/// Inputs a single layer step sees on the tape.
pub struct StepIo<'a> {
    /// The layer's parameter blocks, in [`Architecture::layer_blocks`] order.
    pub blocks: &'a [Var],
    pub h: Var,
    pub c: Option<Var>,
    /// `None` stands for an all-zero input.
    pub x: Option<Var>,
    pub s: Activation,
}

/// Result of one layer step on the tape.
pub struct StepOut {
    pub h: Var,
    pub c: Option<Var>,
    /// What the next layer (or the readout) consumes.
    pub output: Var,
}

/// One recurrent cell family.
pub trait Architecture: Send + Sync {
    fn kind(&self) -> ArchKind;

    fn name(&self) -> &'static str;

    /// Parameter blocks of one layer with input width `n_x`, excluding the
    /// learned initial state.
    fn layer_blocks(&self, n_x: usize, n_h: usize) -> Vec<BlockSpec>;

    /// Whether the layer also carries a cell vector `c`.
    fn has_cell_state(&self) -> bool {
        false
    }

    fn step(&self, tape: &mut Tape, io: StepIo<'_>) -> Result<StepOut, CellError>;
}

/// Every architecture, in presentation order.
pub fn registry() -> [&'static dyn Architecture; 6] {
    ArchKind::ALL.map(ArchKind::architecture)
}

/// Finds an architecture by case-insensitive name (`"gru"`, `"+rnn"`, ...).
pub fn lookup(name: &str) -> Option<&'static dyn Architecture> {
    let key = name.to_ascii_lowercase();
    let key = if key == "+rnn" { "plusrnn".to_string() } else { key };
    registry().into_iter().find(|a| a.name() == key)
}

/// Named parameter tensors for a single layer, for direct kernel evaluation.
#[derive(Debug, Clone)]
pub struct CellParams {
    pub arch: ArchKind,
    pub s: Activation,
    blocks: Vec<(BlockSpec, Tensor)>,
}

impl CellParams {
    /// All blocks zero, with `s = tanh` (relu for the IRNN).
    pub fn zeros(arch: ArchKind, n_x: usize, n_h: usize) -> Self {
        let blocks = arch
            .architecture()
            .layer_blocks(n_x, n_h)
            .into_iter()
            .map(|b| {
                let t = Tensor::zeros(&[b.rows, b.cols]);
                (b, t)
            })
            .collect();
        let s = if arch == ArchKind::Irnn {
            Activation::Relu
        } else {
            Activation::Tanh
        };
        Self { arch, s, blocks }
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<&mut Self, CellError> {
        let (spec, slot) = self
            .blocks
            .iter_mut()
            .find(|(b, _)| b.name == name)
            .ok_or_else(|| CellError::UnknownBlock(name.to_string()))?;
        if value.len() != spec.len() {
            return Err(CellError::Width(format!(
                "{name} expects {}×{}, got {:?}",
                spec.rows,
                spec.cols,
                value.shape()
            )));
        }
        *slot = Tensor::new(&[spec.rows, spec.cols], value.into_data())?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.blocks.iter().find(|(b, _)| b.name == name).map(|(_, t)| t)
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&BlockSpec, &Tensor)> {
        self.blocks.iter().map(|(b, t)| (b, t))
    }
}

/// Evaluates one cell step outside of training.
///
/// `prev.h` (and `prev.c`) and `x` may be vectors or batches of rows.
pub fn step(p: &CellParams, prev: &StepState, x: &Tensor) -> Result<StepState, CellError> {
    let mut tape = Tape::new();
    let blocks: Vec<Var> = p.blocks.iter().map(|(_, t)| tape.constant(t.clone())).collect();
    let h = tape.constant(as_matrix(&prev.h));
    let c = prev.c.as_ref().map(|c| tape.constant(as_matrix(c)));
    let x = tape.constant(as_matrix(x));
    let out = p.arch.architecture().step(
        &mut tape,
        StepIo {
            blocks: &blocks,
            h,
            c,
            x: Some(x),
            s: p.s,
        },
    )?;
    let y = (p.arch == ArchKind::PlusRnn).then(|| tape.value(out.output).clone());
    Ok(StepState {
        h: tape.value(out.h).clone(),
        c: out.c.map(|c| tape.value(c).clone()),
        y,
    })
}

pub fn step_vanilla(p: &CellParams, h_prev: &Tensor, x: &Tensor) -> Result<Tensor, CellError> {
    expect_arch(p, &[ArchKind::Rnn, ArchKind::Irnn])?;
    Ok(step(p, &StepState::new(h_prev.clone()), x)?.h)
}

pub fn step_ugrnn(p: &CellParams, h_prev: &Tensor, x: &Tensor) -> Result<Tensor, CellError> {
    expect_arch(p, &[ArchKind::Ugrnn])?;
    Ok(step(p, &StepState::new(h_prev.clone()), x)?.h)
}

pub fn step_gru(p: &CellParams, h_prev: &Tensor, x: &Tensor) -> Result<Tensor, CellError> {
    expect_arch(p, &[ArchKind::Gru])?;
    Ok(step(p, &StepState::new(h_prev.clone()), x)?.h)
}

pub fn step_lstm(
    p: &CellParams,
    h_prev: &Tensor,
    c_prev: &Tensor,
    x: &Tensor,
) -> Result<(Tensor, Tensor), CellError> {
    expect_arch(p, &[ArchKind::Lstm])?;
    let s = step(p, &StepState::with_cell(h_prev.clone(), c_prev.clone()), x)?;
    Ok((s.h, s.c.expect("lstm produces a cell state")))
}

/// Returns `(y, h)`.
pub fn step_plus_rnn(
    p: &CellParams,
    h_prev: &Tensor,
    x: &Tensor,
) -> Result<(Tensor, Tensor), CellError> {
    expect_arch(p, &[ArchKind::PlusRnn])?;
    let s = step(p, &StepState::new(h_prev.clone()), x)?;
    Ok((s.y.expect("+rnn produces a depth output"), s.h))
}

fn expect_arch(p: &CellParams, allowed: &[ArchKind]) -> Result<(), CellError> {
    if allowed.contains(&p.arch) {
        Ok(())
    } else {
        Err(CellError::Width(format!("kernel does not apply to {}", p.arch)))
    }
}

fn as_matrix(t: &Tensor) -> Tensor {
    if t.shape().len() == 1 {
        Tensor::new(&[1, t.len()], t.data().to_vec()).expect("same length")
    } else {
        t.clone()
    }
}

#[cfg(test)]
mod tests;
