use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ArchKind, BlockRole, BlockSpec, CellError, StepIo};
use crate::ndcore::{Activation, Gradients, Tape, Tensor, Var};

/// Initialization scheme for hidden-to-hidden matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SquareInit {
    Identity,
    Orthogonal,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    Constant,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub square: SquareInit,
    /// Multiplier for hidden-to-hidden matrices (ignored by identity).
    pub recurrent_scale: f64,
    /// Multiplier for input-to-hidden and readout matrices.
    pub input_scale: f64,
    pub bias_mode: BiasMode,
    pub bias_scale: f64,
    /// Value of every `b^fg` scalar.
    pub forget_bias: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            square: SquareInit::Orthogonal,
            recurrent_scale: 1.0,
            input_scale: 1.0,
            bias_mode: BiasMode::Constant,
            bias_scale: 0.0,
            forget_bias: 1.0,
        }
    }
}

/// Whether a static input is fed only at the first step or at every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Presentation {
    FirstStep,
    EveryStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub arch: ArchKind,
    pub depth: usize,
    pub n_in: usize,
    pub n_h: usize,
    pub n_out: usize,
    /// The candidate nonlinearity `s`. Ignored by the +RNN, which always
    /// uses relu for `y^in` and tanh for `h^in`.
    pub nonlinearity: Activation,
    pub init: InitConfig,
}

impl NetworkSpec {
    /// A spec with default initialization that satisfies the architecture's
    /// constraints.
    pub fn new(arch: ArchKind, depth: usize, n_in: usize, n_h: usize, n_out: usize) -> Self {
        let mut init = InitConfig::default();
        let mut nonlinearity = Activation::Tanh;
        if arch == ArchKind::Irnn {
            init.square = SquareInit::Identity;
            nonlinearity = Activation::Relu;
        }
        Self {
            arch,
            depth,
            n_in,
            n_h,
            n_out,
            nonlinearity,
            init,
        }
    }

    pub fn validate(&self) -> Result<(), CellError> {
        if self.depth == 0 {
            return Err(CellError::ZeroDepth);
        }
        if self.depth < self.arch.min_depth() {
            return Err(CellError::DepthOne(self.arch));
        }
        if self.n_in == 0 || self.n_h == 0 || self.n_out == 0 {
            return Err(CellError::Width("widths must be positive".into()));
        }
        match self.arch {
            ArchKind::Irnn => {
                if self.nonlinearity != Activation::Relu {
                    return Err(CellError::Forbidden {
                        arch: self.arch,
                        what: format!("{:?} nonlinearity", self.nonlinearity),
                    });
                }
                if self.init.square != SquareInit::Identity {
                    return Err(CellError::Forbidden {
                        arch: self.arch,
                        what: format!("{:?} recurrent initialization", self.init.square),
                    });
                }
            }
            ArchKind::Rnn if self.init.square == SquareInit::Identity => {
                return Err(CellError::Forbidden {
                    arch: self.arch,
                    what: "identity recurrent initialization".into(),
                });
            }
            _ => {}
        }
        if self.nonlinearity == Activation::Sigmoid {
            return Err(CellError::Forbidden {
                arch: self.arch,
                what: "sigmoid candidate nonlinearity".into(),
            });
        }
        Ok(())
    }
}

/// One named block in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    /// `None` for the readout.
    pub layer: Option<usize>,
    pub spec: BlockSpec,
    pub offset: usize,
}

impl ParamBlock {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.spec.len()
    }
}

/// A trainable parameter vector together with the spec that lays it out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub spec: NetworkSpec,
    pub values: Vec<f64>,
}

/// Per-layer recurrent state on the tape.
#[derive(Debug, Clone, Copy)]
pub struct LayerState {
    pub h: Var,
    pub c: Option<Var>,
}

/// Tape handles for every parameter block, aligned with [`Network::blocks`].
#[derive(Debug, Clone)]
pub struct NetVars {
    pub vars: Vec<Var>,
}

/// Which steps get the readout applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadoutSteps {
    All,
    Final,
    /// Zero-based step indices.
    At(Vec<usize>),
}

impl ReadoutSteps {
    fn wants(&self, t: usize, steps: usize) -> bool {
        match self {
            ReadoutSteps::All => true,
            ReadoutSteps::Final => t + 1 == steps,
            ReadoutSteps::At(v) => v.contains(&t),
        }
    }
}

/// Input sequence for a batch: one `batch × n_in` matrix per step, with
/// `None` meaning an all-zero input.
#[derive(Debug, Clone)]
pub struct SeqInput {
    pub batch: usize,
    pub steps: Vec<Option<Tensor>>,
}

impl SeqInput {
    /// Presents a static `batch × n_in` input over `steps` steps.
    pub fn present(x: Tensor, steps: usize, mode: Presentation) -> Self {
        let batch = x.rows();
        let steps = match mode {
            Presentation::EveryStep => vec![Some(x); steps],
            Presentation::FirstStep => {
                let mut v = vec![None; steps];
                if let Some(first) = v.first_mut() {
                    *first = Some(x);
                }
                v
            }
        };
        Self { batch, steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Tape results of one unrolled forward pass.
#[derive(Debug, Clone)]
pub struct Unrolled {
    /// Readout logits/predictions per step (`None` where not requested).
    pub outputs: Vec<Option<Var>>,
    /// Per step, the state of every layer after that step.
    pub states: Vec<Vec<LayerState>>,
    /// Per step, what the top layer passed to the readout.
    pub top: Vec<Var>,
}

/// A sized, validated stack of cells with its parameter layout.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    blocks: Vec<ParamBlock>,
    /// Per layer: cell block index range, h0 index, optional c0 index.
    layers: Vec<LayerLayout>,
    readout: (usize, usize),
    total: usize,
}

#[derive(Debug, Clone)]
struct LayerLayout {
    cell: std::ops::Range<usize>,
    h0: usize,
    c0: Option<usize>,
}

fn layout(spec: &NetworkSpec) -> Network {
    let arch = spec.arch.architecture();
    let mut blocks = Vec::new();
    let mut layers = Vec::with_capacity(spec.depth);
    let mut offset = 0;
    let mut push = |blocks: &mut Vec<ParamBlock>, layer, b: BlockSpec| {
        let len = b.len();
        blocks.push(ParamBlock {
            layer,
            spec: b,
            offset,
        });
        offset += len;
        blocks.len() - 1
    };
    for l in 0..spec.depth {
        let n_x = if l == 0 { spec.n_in } else { spec.n_h };
        let start = blocks.len();
        for b in arch.layer_blocks(n_x, spec.n_h) {
            push(&mut blocks, Some(l), b);
        }
        let cell = start..blocks.len();
        let h0 = push(
            &mut blocks,
            Some(l),
            BlockSpec::new("h0", 1, spec.n_h, BlockRole::InitialState),
        );
        let c0 = arch.has_cell_state().then(|| {
            push(
                &mut blocks,
                Some(l),
                BlockSpec::new("c0", 1, spec.n_h, BlockRole::InitialState),
            )
        });
        layers.push(LayerLayout { cell, h0, c0 });
    }
    let w = push(
        &mut blocks,
        None,
        BlockSpec::new("W^out", spec.n_h, spec.n_out, BlockRole::ReadoutWeight),
    );
    let b = push(
        &mut blocks,
        None,
        BlockSpec::new("b^out", 1, spec.n_out, BlockRole::ReadoutBias),
    );
    Network {
        spec: spec.clone(),
        blocks,
        layers,
        readout: (w, b),
        total: offset,
    }
}

/// Number of stored scalars: every cell block, learned initial states,
/// the affine readout, and the `b^fg` scalars.
pub fn param_count(spec: &NetworkSpec) -> usize {
    layout(spec).total
}

/// Largest `n_h` (shared by all layers) whose parameter count fits within
/// `max_params`.
pub fn units_for_budget(
    arch: ArchKind,
    depth: usize,
    n_in: usize,
    n_out: usize,
    max_params: usize,
) -> Result<usize, CellError> {
    let count = |n_h| param_count(&NetworkSpec::new(arch, depth, n_in, n_h, n_out));
    let needed = count(1);
    if needed > max_params {
        return Err(CellError::BudgetTooSmall {
            budget: max_params,
            needed,
        });
    }
    let mut n_h = 1;
    while count(n_h + 1) <= max_params {
        n_h += 1;
    }
    Ok(n_h)
}

/// Draws a standard normal matrix scaled by `scale`, or the identity.
pub fn init_matrix(
    scheme: SquareInit,
    rows: usize,
    cols: usize,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, CellError> {
    match scheme {
        SquareInit::Identity => {
            if rows != cols {
                return Err(CellError::NonSquareIdentity { rows, cols });
            }
            Ok(Tensor::eye(rows).into_data())
        }
        SquareInit::Normal => {
            let s = scale / (rows as f64).sqrt();
            Ok((0..rows * cols).map(|_| s * normal(rng)).collect())
        }
        SquareInit::Orthogonal => {
            if rows != cols {
                return Err(CellError::Width(format!(
                    "orthogonal initialization needs a square matrix, got {rows}×{cols}"
                )));
            }
            let m = DMatrix::from_fn(rows, cols, |_, _| normal(rng));
            let qr = m.qr();
            let (mut q, r) = (qr.q(), qr.r());
            for j in 0..cols {
                if r[(j, j)] < 0.0 {
                    q.column_mut(j).neg_mut();
                }
            }
            let mut out = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for j in 0..cols {
                    out.push(scale * q[(i, j)]);
                }
            }
            Ok(out)
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self, CellError> {
        spec.validate()?;
        Ok(layout(&spec))
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn param_count(&self) -> usize {
        self.total
    }

    pub fn block(&self, layer: Option<usize>, name: &str) -> Option<&ParamBlock> {
        self.blocks
            .iter()
            .find(|b| b.layer == layer && b.spec.name == name)
    }

    /// One flag per scalar: false for the frozen `b^fg` entries.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.total];
        for b in &self.blocks {
            if !b.spec.role.trainable() {
                mask[b.range()].fill(false);
            }
        }
        mask
    }

    pub fn init(&self, seed: u64) -> Result<NetworkParams, CellError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = &self.spec.init;
        let irnn = self.spec.arch == ArchKind::Irnn;
        let mut values = vec![0.0; self.total];
        for b in &self.blocks {
            let (rows, cols) = (b.spec.rows, b.spec.cols);
            let data = match b.spec.role {
                BlockRole::Recurrent => init_matrix(init.square, rows, cols, init.recurrent_scale, &mut rng)?,
                BlockRole::Input | BlockRole::ReadoutWeight => {
                    init_matrix(SquareInit::Normal, rows, cols, init.input_scale, &mut rng)?
                }
                BlockRole::Bias if irnn => vec![0.0; rows * cols],
                BlockRole::Bias => match init.bias_mode {
                    BiasMode::Constant => vec![init.bias_scale; rows * cols],
                    BiasMode::Normal => (0..rows * cols)
                        .map(|_| init.bias_scale * normal(&mut rng))
                        .collect(),
                },
                BlockRole::GateBias => vec![init.forget_bias; rows * cols],
                BlockRole::InitialState | BlockRole::ReadoutBias => vec![0.0; rows * cols],
            };
            values[b.range()].copy_from_slice(&data);
        }
        Ok(NetworkParams {
            spec: self.spec.clone(),
            values,
        })
    }

    /// Records every parameter block as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape, params: &NetworkParams) -> NetVars {
        self.bind_values(tape, &params.values)
    }

    pub fn bind_values(&self, tape: &mut Tape, values: &[f64]) -> NetVars {
        debug_assert_eq!(values.len(), self.total);
        let vars = self
            .blocks
            .iter()
            .map(|b| {
                let t = Tensor::new(&[b.spec.rows, b.spec.cols], values[b.range()].to_vec())
                    .expect("block layout matches its length");
                tape.leaf(t)
            })
            .collect();
        NetVars { vars }
    }

    /// Flattens gradients for every block into the parameter layout.
    pub fn gather(&self, grads: &Gradients, vars: &NetVars) -> Vec<f64> {
        let mut out = vec![0.0; self.total];
        for (b, &v) in self.blocks.iter().zip(&vars.vars) {
            if let Some(g) = grads.get(v) {
                out[b.range()].copy_from_slice(g.data());
            }
        }
        out
    }

    pub fn forward_unroll(
        &self,
        tape: &mut Tape,
        vars: &NetVars,
        input: &SeqInput,
        readout: &ReadoutSteps,
    ) -> Result<Unrolled, CellError> {
        let spec = &self.spec;
        let arch = spec.arch.architecture();
        let batch = input.batch;
        for x in input.steps.iter().flatten() {
            if x.cols() != spec.n_in || x.rows() != batch {
                return Err(CellError::Width(format!(
                    "expected {batch}×{} input, got {:?}",
                    spec.n_in,
                    x.shape()
                )));
            }
        }

        let zeros = tape.constant(Tensor::zeros(&[batch, spec.n_h]));
        let mut state: Vec<LayerState> = Vec::with_capacity(spec.depth);
        for layer in &self.layers {
            let h = tape.add_row(zeros, vars.vars[layer.h0])?;
            let c = match layer.c0 {
                Some(i) => Some(tape.add_row(zeros, vars.vars[i])?),
                None => None,
            };
            state.push(LayerState { h, c });
        }

        let steps = input.len();
        let mut out = Unrolled {
            outputs: Vec::with_capacity(steps),
            states: Vec::with_capacity(steps),
            top: Vec::with_capacity(steps),
        };
        let (w_out, b_out) = (vars.vars[self.readout.0], vars.vars[self.readout.1]);
        for (t, x) in input.steps.iter().enumerate() {
            let mut below = x.as_ref().map(|x| tape.constant(x.clone()));
            for (l, layer) in self.layers.iter().enumerate() {
                let step = arch.step(
                    tape,
                    StepIo {
                        blocks: &vars.vars[layer.cell.clone()],
                        h: state[l].h,
                        c: state[l].c,
                        x: below,
                        s: spec.nonlinearity,
                    },
                )?;
                state[l] = LayerState {
                    h: step.h,
                    c: step.c,
                };
                below = Some(step.output);
            }
            let top = below.expect("at least one layer");
            out.top.push(top);
            out.states.push(state.clone());
            out.outputs.push(if readout.wants(t, steps) {
                Some(tape.linear(&[(top, w_out)], Some(b_out), None)?)
            } else {
                None
            });
        }
        Ok(out)
    }
}

impl NetworkParams {
    pub fn block<'a>(&'a self, net: &Network, layer: Option<usize>, name: &str) -> Option<&'a [f64]> {
        net.block(layer, name).map(|b| &self.values[b.range()])
    }
}

/// Validates `spec` and draws a fresh parameter vector for it.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<NetworkParams, CellError> {
    Network::new(spec.clone())?.init(seed)
}
