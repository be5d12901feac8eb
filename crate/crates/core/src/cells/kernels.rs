use super::{ArchKind, Architecture, BlockRole, BlockSpec, CellError, StepIo, StepOut};
use crate::ndcore::{Activation, Tape, Tensor, Var};

use BlockRole::{Bias, GateBias, Input, Recurrent};

fn gate_blocks(
    out: &mut Vec<BlockSpec>,
    names: [&'static str; 3],
    n_x: usize,
    n_h: usize,
) {
    out.push(BlockSpec::new(names[0], n_x, n_h, Input));
    out.push(BlockSpec::new(names[1], n_h, n_h, Recurrent));
    out.push(BlockSpec::new(names[2], 1, n_h, Bias));
}

/// Pre-activation `x·Wx + h·Wh + b (+ b^fg)` for the gate whose blocks start
/// at `at`.
fn pre(
    tape: &mut Tape,
    io: &StepIo<'_>,
    at: usize,
    h: Var,
    fg: Option<Var>,
) -> Result<Var, CellError> {
    let (wx, wh, b) = (io.blocks[at], io.blocks[at + 1], io.blocks[at + 2]);
    let var = match io.x {
        Some(x) => tape.linear(&[(x, wx), (h, wh)], Some(b), fg)?,
        None => tape.linear(&[(h, wh)], Some(b), fg)?,
    };
    Ok(var)
}

/// Plain recurrent layer `h = s(x·W^x + h·W^h + b^h)`.
pub struct Rnn;

/// [`Rnn`] structure restricted to relu with identity recurrent
/// initialization and zero biases.
pub struct Irnn;

fn vanilla_blocks(n_x: usize, n_h: usize) -> Vec<BlockSpec> {
    let mut out = Vec::with_capacity(3);
    gate_blocks(&mut out, ["W^x", "W^h", "b^h"], n_x, n_h);
    out
}

fn vanilla_step(tape: &mut Tape, io: StepIo<'_>) -> Result<StepOut, CellError> {
    let z = pre(tape, &io, 0, io.h, None)?;
    let h = tape.activate(z, io.s);
    Ok(StepOut {
        h,
        c: None,
        output: h,
    })
}

impl Architecture for Rnn {
    fn kind(&self) -> ArchKind {
        ArchKind::Rnn
    }

    fn name(&self) -> &'static str {
        "rnn"
    }

    fn layer_blocks(&self, n_x: usize, n_h: usize) -> Vec<BlockSpec> {
        vanilla_blocks(n_x, n_h)
    }

    fn step(&self, tape: &mut Tape, io: StepIo<'_>) -> Result<StepOut, CellError> {
        vanilla_step(tape, io)
    }
}

impl Architecture for Irnn {
    fn kind(&self) -> ArchKind {
        ArchKind::Irnn
    }

    fn name(&self) -> &'static str {
        "irnn"
    }

    fn layer_blocks(&self, n_x: usize, n_h: usize) -> Vec<BlockSpec> {
        vanilla_blocks(n_x, n_h)
    }

    fn step(&self, tape: &mut Tape, io: StepIo<'_>) -> Result<StepOut, CellError> {
        vanilla_step(tape, io)
    }
}

/// Update-gate RNN: a single coupled gate between carrying `h` and
/// replacing it with the candidate `c`.
pub struct Ugrnn;

impl Architecture for Ugrnn {
    fn kind(&self) -> ArchKind {
        ArchKind::Ugrnn
    }

    fn name(&self) -> &'static str {
        "ugrnn"
    }

    fn layer_blocks(&self, n_x: usize, n_h: usize) -> Vec<BlockSpec> {
        let mut out = Vec::with_capacity(7);
        gate_blocks(&mut out, ["W^cx", "W^ch", "b^c"], n_x, n_h);
        gate_blocks(&mut out, ["W^gx", "W^gh", "b^g"], n_x, n_h);
        out.push(BlockSpec::new("b^fg", 1, 1, GateBias));
        out
    }

    fn step(&self, tape: &mut Tape, io: StepIo<'_>) -> Result<StepOut, CellError> {
        let fg = io.blocks[6];
        let zc = pre(tape, &io, 0, io.h, None)?;
        let c = tape.activate(zc, io.s);
        let zg = pre(tape, &io, 3, io.h, Some(fg))?;
        let g = tape.sigmoid(zg);
        let h = tape.mix(g, io.h, c)?;
        Ok(StepOut {
            h,
            c: None,
            output: h,
        })
    }
}

pub struct Gru;

impl Architecture for Gru {
    fn kind(&self) -> ArchKind {
        ArchKind::Gru
    }

    fn name(&self) -> &'static str {
        "gru"
    }

    fn layer_blocks(&self, n_x: usize, n_h: usize) -> Vec<BlockSpec> {
        let mut out = Vec::with_capacity(10);
        gate_blocks(&mut out, ["W^rx", "W^rh", "b^r"], n_x, n_h);
        gate_blocks(&mut out, ["W^ux", "W^uh", "b^u"], n_x, n_h);
        gate_blocks(&mut out, ["W^cx", "W^ch", "b^c"], n_x, n_h);
        out.push(BlockSpec::new("b^fg", 1, 1, GateBias));
        out
    }

    fn step(&self, tape: &mut Tape, io: StepIo<'_>) -> Result<StepOut, CellError> {
        let fg = io.blocks[9];
        let zr = pre(tape, &io, 0, io.h, None)?;
        let r = tape.sigmoid(zr);
        let zu = pre(tape, &io, 3, io.h, Some(fg))?;
        let u = tape.sigmoid(zu);
        let rh = tape.mul(r, io.h)?;
        let zc = pre(tape, &io, 6, rh, None)?;
        let c = tape.activate(zc, io.s);
        let h = tape.mix(u, io.h, c)?;
        Ok(StepOut {
            h,
            c: None,
            output: h,
        })
    }
}

pub struct Lstm;

impl Architecture for Lstm {
    fn kind(&self) -> ArchKind {
        ArchKind::Lstm
    }

    fn name(&self) -> &'static str {
        "lstm"
    }

    fn layer_blocks(&self, n_x: usize, n_h: usize) -> Vec<BlockSpec> {
        let mut out = Vec::with_capacity(13);
        gate_blocks(&mut out, ["W^ix", "W^ih", "b^i"], n_x, n_h);
        gate_blocks(&mut out, ["W^fx", "W^fh", "b^f"], n_x, n_h);
        gate_blocks(&mut out, ["W^cx", "W^ch", "b^c"], n_x, n_h);
        gate_blocks(&mut out, ["W^ox", "W^oh", "b^o"], n_x, n_h);
        out.push(BlockSpec::new("b^fg", 1, 1, GateBias));
        out
    }

    fn has_cell_state(&self) -> bool {
        true
    }

    fn step(&self, tape: &mut Tape, io: StepIo<'_>) -> Result<StepOut, CellError> {
        let c_prev = io
            .c
            .ok_or_else(|| CellError::Width("lstm step needs a cell state".into()))?;
        let fg = io.blocks[12];
        let zi = pre(tape, &io, 0, io.h, None)?;
        let i = tape.sigmoid(zi);
        let zf = pre(tape, &io, 3, io.h, Some(fg))?;
        let f = tape.sigmoid(zf);
        let zc = pre(tape, &io, 6, io.h, None)?;
        let c_in = tape.activate(zc, io.s);
        let zo = pre(tape, &io, 9, io.h, None)?;
        let o = tape.sigmoid(zo);
        let carried = tape.mul(f, c_prev)?;
        let written = tape.mul(i, c_in)?;
        let c = tape.add(carried, written)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(StepOut {
            h,
            c: Some(c),
            output: h,
        })
    }
}

/// Intersection RNN: coupled gates on both the recurrent path (`h`) and the
/// depth path (`x → y`). `s1` is relu and `s2` is tanh.
///
/// The depth gate needs `x` and `y` to share a width; a layer whose input
/// width differs from `n_h` is built without it and emits `y = y^in`.
pub struct PlusRnn;

impl PlusRnn {
    const S1: Activation = Activation::Relu;
    const S2: Activation = Activation::Tanh;
}

impl Architecture for PlusRnn {
    fn kind(&self) -> ArchKind {
        ArchKind::PlusRnn
    }

    fn name(&self) -> &'static str {
        "plusrnn"
    }

    fn layer_blocks(&self, n_x: usize, n_h: usize) -> Vec<BlockSpec> {
        let mut out = Vec::with_capacity(14);
        gate_blocks(&mut out, ["W^yx", "W^yh", "b^y"], n_x, n_h);
        gate_blocks(&mut out, ["W^hx", "W^hh", "b^h"], n_x, n_h);
        gate_blocks(&mut out, ["W^ghx", "W^ghh", "b^gh"], n_x, n_h);
        out.push(BlockSpec::new("b^fg,h", 1, 1, GateBias));
        if n_x == n_h {
            gate_blocks(&mut out, ["W^gyx", "W^gyh", "b^gy"], n_x, n_h);
            out.push(BlockSpec::new("b^fg,y", 1, 1, GateBias));
        }
        out
    }

    fn step(&self, tape: &mut Tape, io: StepIo<'_>) -> Result<StepOut, CellError> {
        let depth_gate = io.blocks.len() > 10;
        let zy = pre(tape, &io, 0, io.h, None)?;
        let y_in = tape.activate(zy, Self::S1);
        let zh = pre(tape, &io, 3, io.h, None)?;
        let h_in = tape.activate(zh, Self::S2);
        let zgh = pre(tape, &io, 6, io.h, Some(io.blocks[9]))?;
        let gh = tape.sigmoid(zgh);
        let h = tape.mix(gh, io.h, h_in)?;
        let y = if depth_gate {
            let n_h = tape.value(io.h).cols();
            let x = match io.x {
                Some(x) => {
                    if tape.value(x).cols() != n_h {
                        return Err(CellError::Width(format!(
                            "+rnn depth gate needs input width {n_h}, got {}",
                            tape.value(x).cols()
                        )));
                    }
                    x
                }
                None => {
                    let rows = tape.value(io.h).rows();
                    tape.constant(Tensor::zeros(&[rows, n_h]))
                }
            };
            let zgy = pre(tape, &io, 10, io.h, Some(io.blocks[13]))?;
            let gy = tape.sigmoid(zgy);
            tape.mix(gy, x, y_in)?
        } else {
            y_in
        };
        Ok(StepOut {
            h,
            c: None,
            output: y,
        })
    }
}
