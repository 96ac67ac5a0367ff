use std::rc::Rc;

use super::{GraphBatch, Hyper, PolicyError, SelectionMode};
use crate::numcore::{Linear, ParamSet, Tape, Tensor, Var};

/// Output of the edge selector on a stacked batch of graphs.
#[derive(Clone)]
pub struct SparseGraph<'t> {
    /// Concatenated per-head attention outputs, `[B·N, edge_emb]`.
    pub features: Var<'t>,
    /// Head-averaged selection weights `m`, `[B·N, N]`.
    pub weights: Var<'t>,
    /// `m ≠ 0`, row-major like `weights`.
    pub mask: Rc<Vec<bool>>,
    /// Per-head selection matrices `s^k`.
    pub selections: Vec<Var<'t>>,
    /// Per-head attention `α^k` over visible destinations.
    pub attention: Vec<Var<'t>>,
    pub n: usize,
}

fn check<'t>(v: Var<'t>, stage: &'static str) -> Result<Var<'t>, PolicyError> {
    if v.value().is_finite() {
        Ok(v)
    } else {
        Err(PolicyError::NonFinite(stage))
    }
}

/// Attention over the visibility graph followed by one Gumbel-Softmax draw
/// per head and source node. `noise` holds one `[B·N, N]` Gumbel sample per
/// head.
pub fn edge_selector<'t>(
    tape: &'t Tape,
    params: &ParamSet,
    hyper: &Hyper,
    batch: &GraphBatch,
    tau: f64,
    noise: &[Tensor],
    mode: SelectionMode,
) -> Result<SparseGraph<'t>, PolicyError> {
    let n = batch.n;
    let heads = hyper.edge_heads;
    let dh = hyper.edge_emb / heads;
    if noise.len() != heads {
        return Err(PolicyError::Shape(format!(
            "expected {heads} noise tensors, got {}",
            noise.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(PolicyError::Shape(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let e = tape.constant(batch.features.map(|x| x * hyper.input_scale));
    let q = Linear::bind(tape, params, "es.q")?.forward(e)?;
    let k = Linear::bind(tape, params, "es.k")?.forward(e)?;
    let v = Linear::bind(tape, params, "es.v")?.forward(e)?;
    let gw = tape.param(params, "es.gumbel.w")?;
    let gb = tape.param(params, "es.gumbel.b")?;
    let scale = 1.0 / (batch.features.cols() as f64).sqrt();
    let mask = batch.adjacency.as_slice();

    let mut outs = Vec::with_capacity(heads);
    let mut selections = Vec::with_capacity(heads);
    let mut attention = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.cols_slice(h * dh, dh)?;
        let kh = k.cols_slice(h * dh, dh)?;
        let vh = v.cols_slice(h * dh, dh)?;
        let alpha = qh.block_scores(kh, n)?.scale(scale).softmax_rows(Some(mask))?;
        outs.push(alpha.block_apply(vh, n)?);
        // Per-edge affine map of the attention weight to a selection logit.
        let logits = alpha.mul(gw.cols_slice(h, 1)?)?.add(gb.cols_slice(h, 1)?)?;
        let g = tape.constant(noise[h].clone());
        let soft = logits.add(g)?.scale(1.0 / tau).softmax_rows(Some(mask))?;
        let s = match mode {
            SelectionMode::Hard => soft.straight_through_one_hot(),
            SelectionMode::Soft => soft,
        };
        attention.push(alpha);
        selections.push(s);
    }
    let features = check(Var::concat_cols(&outs)?, "edge selector attention")?;
    let mut weights = selections[0];
    for s in &selections[1..] {
        weights = weights.add(*s)?;
    }
    let weights = check(weights.scale(1.0 / heads as f64), "edge selection")?;
    let sparse_mask = weights
        .value()
        .data()
        .iter()
        .zip(mask)
        .map(|(&w, &m)| m && w > 0.0)
        .collect();
    Ok(SparseGraph {
        features,
        weights,
        mask: Rc::new(sparse_mask),
        selections,
        attention,
        n,
    })
}

/// Single-layer multi-head graph attention over the selected edges. Scores
/// are weighted by the selection weights, so `α_ij ∝ m_ij·exp(q_i·k_j/√d)`
/// and the selection stays on the gradient path. Returns the concatenated
/// head outputs and the per-head attention matrices.
pub fn crowd_coordinator<'t>(
    tape: &'t Tape,
    params: &ParamSet,
    hyper: &Hyper,
    sparse: &SparseGraph<'t>,
) -> Result<(Var<'t>, Vec<Var<'t>>), PolicyError> {
    let heads = hyper.mha_heads;
    let dh = hyper.mha_emb / heads;
    let q = Linear::bind(tape, params, "cc.q")?.forward(sparse.features)?;
    let k = Linear::bind(tape, params, "cc.k")?.forward(sparse.features)?;
    let v = Linear::bind(tape, params, "cc.v")?.forward(sparse.features)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut alphas = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.cols_slice(h * dh, dh)?;
        let kh = k.cols_slice(h * dh, dh)?;
        let vh = v.cols_slice(h * dh, dh)?;
        let alpha = qh
            .block_scores(kh, sparse.n)?
            .scale(scale)
            .weighted_softmax_rows(sparse.weights, sparse.mask.clone())?;
        outs.push(alpha.block_apply(vh, sparse.n)?);
        alphas.push(alpha);
    }
    Ok((check(Var::concat_cols(&outs)?, "crowd coordinator")?, alphas))
}

/// `relu(w·W + b)`, the embedding of the robot's own state.
pub fn intrinsic_coordinator<'t>(
    tape: &'t Tape,
    params: &ParamSet,
    w: Var<'t>,
) -> Result<Var<'t>, PolicyError> {
    let y = Linear::bind(tape, params, "ic")?.forward(w)?.relu();
    check(y, "intrinsic coordinator")
}
