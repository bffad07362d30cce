use super::tape::{Tape, Var};
use super::tensor::{ParamId, Params, Tensor};
use super::AutodiffError;

/// `x W^T + b` for a vector `x: [k]` or a matrix `x: [m,k]`, with
/// `w: [n,k]` and `b: [n]`.
pub fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
    if tape.value(x).shape().len() == 1 {
        let y = tape.matvec(w, x)?;
        tape.add(y, b)
    } else {
        let y = tape.matmul_nt(x, w)?;
        tape.add_row(y, b)
    }
}

/// One LSTM direction. Gates are stacked input, forget, cell, output in
/// `w: [4H, in + H]` and `b: [4H]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LstmWeights {
    pub w: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmWeights {
    pub fn input_dim(&self, params: &Params) -> usize {
        params.get(self.w).cols() - self.hidden
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiLstmLayer {
    pub forward: LstmWeights,
    pub backward: LstmWeights,
}

/// One step; returns the new `(h, c)`.
pub fn lstm_cell(
    tape: &mut Tape,
    x: Var,
    h: Var,
    c: Var,
    weights: &LstmWeights,
) -> Result<(Var, Var), AutodiffError> {
    let hd = weights.hidden;
    let w = tape.param(weights.w);
    let b = tape.param(weights.b);
    let xh = tape.concat(&[x, h])?;
    let z = tape.matvec(w, xh)?;
    let z = tape.add(z, b)?;
    let i = tape.slice(z, 0, hd)?;
    let i = tape.sigmoid(i)?;
    let f = tape.slice(z, hd, hd)?;
    let f = tape.sigmoid(f)?;
    let g = tape.slice(z, 2 * hd, hd)?;
    let g = tape.tanh(g)?;
    let o = tape.slice(z, 3 * hd, hd)?;
    let o = tape.sigmoid(o)?;
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next)?;
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

fn run_direction(
    tape: &mut Tape,
    inputs: &[Var],
    weights: &LstmWeights,
    reverse: bool,
) -> Result<Vec<Var>, AutodiffError> {
    let zero = tape.constant(Tensor::zeros(&[weights.hidden]));
    let (mut h, mut c) = (zero, zero);
    let mut out = vec![zero; inputs.len()];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..inputs.len()).rev())
    } else {
        Box::new(0..inputs.len())
    };
    for t in order {
        (h, c) = lstm_cell(tape, inputs[t], h, c, weights)?;
        out[t] = h;
    }
    Ok(out)
}

/// Stacked bidirectional LSTM. Each position's output is the forward state
/// followed by the backward state (`2H` wide); `dropout` is applied to
/// every layer's outputs.
pub fn bilstm(
    tape: &mut Tape,
    inputs: &[Var],
    layers: &[BiLstmLayer],
    dropout: f64,
) -> Result<Vec<Var>, AutodiffError> {
    if inputs.is_empty() {
        return Err(AutodiffError::Shape {
            op: "bilstm",
            detail: "empty sequence".into(),
        });
    }
    let mut current = inputs.to_vec();
    for layer in layers {
        let fwd = run_direction(tape, &current, &layer.forward, false)?;
        let bwd = run_direction(tape, &current, &layer.backward, true)?;
        current = fwd
            .into_iter()
            .zip(bwd)
            .map(|(f, b)| {
                let h = tape.concat(&[f, b])?;
                tape.dropout(h, dropout)
            })
            .collect::<Result<_, _>>()?;
    }
    Ok(current)
}
