//! Layer primitives composed by the policy network.

use rand::Rng;

use super::{NumError, ParamSet, Tape, Tensor, Var};

/// `y = x·w + b`, with `b` a `[1, out]` row broadcast over the batch.
pub fn affine<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>, NumError> {
    x.matmul(w)?.add(b)
}

/// Handles to a linear layer's parameters on one tape.
#[derive(Clone, Copy)]
pub struct Linear<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
}

impl<'t> Linear<'t> {
    /// Binds `{prefix}.w` and `{prefix}.b`.
    pub fn bind(tape: &'t Tape, params: &ParamSet, prefix: &str) -> Result<Self, NumError> {
        Ok(Self {
            weight: tape.param(params, &format!("{prefix}.w"))?,
            bias: tape.param(params, &format!("{prefix}.b"))?,
        })
    }

    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>, NumError> {
        affine(x, self.weight, self.bias)
    }
}

pub fn init_linear(
    params: &mut ParamSet,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    gain: f64,
    rng: &mut impl Rng,
) -> Result<(), NumError> {
    params.init_linear(&format!("{prefix}.w"), fan_in, fan_out, gain, rng)?;
    params.init_zeros(&format!("{prefix}.b"), &[1, fan_out])
}

/// GRU weights bound on a tape. Gate blocks are stacked along columns in
/// the order reset, update, candidate.
///
/// Convention: `h' = (1 − z) ⊙ n + z ⊙ h`, so an update gate saturated at 1
/// keeps the previous state and one saturated at 0 takes the candidate.
#[derive(Clone, Copy)]
pub struct Gru<'t> {
    w_ih: Var<'t>,
    w_hh: Var<'t>,
    b_ih: Var<'t>,
    b_hh: Var<'t>,
    hidden: usize,
}

impl<'t> Gru<'t> {
    pub fn bind(tape: &'t Tape, params: &ParamSet, prefix: &str) -> Result<Self, NumError> {
        let w_hh = tape.param(params, &format!("{prefix}.w_hh"))?;
        let hidden = w_hh.rows();
        if w_hh.cols() != 3 * hidden {
            return Err(NumError::Dimension(format!(
                "{prefix}.w_hh must be [h, 3h], got {:?}",
                w_hh.shape()
            )));
        }
        Ok(Self {
            w_ih: tape.param(params, &format!("{prefix}.w_ih"))?,
            w_hh,
            b_ih: tape.param(params, &format!("{prefix}.b_ih"))?,
            b_hh: tape.param(params, &format!("{prefix}.b_hh"))?,
            hidden,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn step(&self, h_prev: Var<'t>, x: Var<'t>) -> Result<Var<'t>, NumError> {
        if h_prev.cols() != self.hidden {
            return Err(NumError::Dimension(format!(
                "GRU hidden state has {} columns, expected {}",
                h_prev.cols(),
                self.hidden
            )));
        }
        let h = self.hidden;
        let gi = affine(x, self.w_ih, self.b_ih)?;
        let gh = affine(h_prev, self.w_hh, self.b_hh)?;
        let r = gi.cols_slice(0, h)?.add(gh.cols_slice(0, h)?)?.sigmoid();
        let z = gi.cols_slice(h, h)?.add(gh.cols_slice(h, h)?)?.sigmoid();
        let n = gi
            .cols_slice(2 * h, h)?
            .add(r.mul(gh.cols_slice(2 * h, h)?)?)?
            .tanh();
        // n + z ⊙ (h_prev − n)
        n.add(z.mul(h_prev.sub(n)?)?)
    }
}

/// Single GRU step, binding `{prefix}.*` from `params`.
pub fn gru_cell<'t>(
    tape: &'t Tape,
    params: &ParamSet,
    prefix: &str,
    h_prev: Var<'t>,
    x: Var<'t>,
) -> Result<Var<'t>, NumError> {
    Gru::bind(tape, params, prefix)?.step(h_prev, x)
}

/// Orthogonal recurrent and input weights, zero biases.
pub fn init_gru(
    params: &mut ParamSet,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut impl Rng,
) -> Result<(), NumError> {
    let mut w_ih = Tensor::zeros(&[input, 3 * hidden]);
    let mut w_hh = Tensor::zeros(&[hidden, 3 * hidden]);
    for gate in 0..3 {
        let wi = super::params::orthogonal(input, hidden, 1.0, rng);
        let wh = super::params::orthogonal(hidden, hidden, 1.0, rng);
        for r in 0..input {
            for c in 0..hidden {
                w_ih.set(r, gate * hidden + c, wi.get(r, c));
            }
        }
        for r in 0..hidden {
            for c in 0..hidden {
                w_hh.set(r, gate * hidden + c, wh.get(r, c));
            }
        }
    }
    params.insert(&format!("{prefix}.w_ih"), w_ih)?;
    params.insert(&format!("{prefix}.w_hh"), w_hh)?;
    params.init_zeros(&format!("{prefix}.b_ih"), &[1, 3 * hidden])?;
    params.init_zeros(&format!("{prefix}.b_hh"), &[1, 3 * hidden])
}

/// I.i.d. standard Gumbel samples `−ln(−ln u)`, `u ∈ (0, 1)`.
pub fn gumbel_noise(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let u = loop {
                let u: f64 = rng.random();
                if u > 0.0 && u < 1.0 {
                    break u;
                }
            };
            -(-u.ln()).ln()
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("gumbel shape")
}
