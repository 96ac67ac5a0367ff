//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod crowd;
pub mod grads;
pub mod world;

use multisoc::numcore::{Tape, Tensor, Var};
use multisoc::rng::{indexed_stream, Rng};
use rand::Rng as _;
use rand_distr::StandardNormal;

pub fn rng(name: &str, i: u64) -> Rng {
    indexed_stream(20_240_601, name, i)
}

pub fn randn(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .unwrap()
}

/// Values bounded away from zero, for kinks at the origin.
pub fn randn_off_zero(shape: &[usize], rng: &mut Rng) -> Tensor {
    randn(shape, rng).map(|x| if x.abs() < 0.1 { x.signum() * 0.1 + x } else { x })
}

/// Relative error `|a − b| / max(|a|, |b|, floor)`, maximized over entries.
pub fn max_rel_err(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Compares reverse-mode gradients of `f` with central differences for every
/// input entry. `f` must return a `[1, 1]` value.
pub fn grad_check<F>(inputs: &[Tensor], f: F, h: f64) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars);
    let grads = tape.backward(out).unwrap();
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let eval = |xs: &[Tensor]| {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let v = f(&tape, &vars).value().item();
        v
    };
    let mut worst = 0.0_f64;
    for (k, t) in inputs.iter().enumerate() {
        let mut numeric = Tensor::zeros(t.shape());
        for e in 0..t.len() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[e] += h;
            let up = eval(&xs);
            xs[k].data_mut()[e] -= 2.0 * h;
            let down = eval(&xs);
            numeric.data_mut()[e] = (up - down) / (2.0 * h);
        }
        worst = worst.max(max_rel_err(&analytic[k], &numeric, 1e-3));
    }
    worst
}

/// `Σ x ⊙ r` with a random `r` fixed by `seed`, so every output entry
/// matters.
pub fn project<'t>(x: Var<'t>, seed: u64) -> Var<'t> {
    let r = randn(&x.shape(), &mut rng("project", seed));
    x.mul(x.tape().constant(r)).unwrap().sum()
}

use multisoc::percept::{InteractionGraph, Observation, INTRINSIC_DIM, NODE_DIM};

/// Random observation with `n` nodes: each node is visible with
/// probability 0.7 (the agent always), visible pairs are linked with
/// probability `edge_p`, and hidden rows are zero like in real views.
pub fn random_observation(n: usize, edge_p: f64, rng: &mut Rng) -> Observation {
    let agent = rng.random_range(0..n);
    let visible: Vec<bool> = (0..n).map(|i| i == agent || rng.random_bool(0.7)).collect();
    let mut adjacency = vec![false; n * n];
    for i in 0..n {
        for k in 0..n {
            if visible[i] && visible[k] {
                adjacency[i * n + k] = i == k || rng.random_bool(edge_p);
            }
        }
    }
    let mut features = randn(&[n, NODE_DIM], rng);
    for i in (0..n).filter(|&i| !visible[i]) {
        features.row_slice_mut(i).fill(0.0);
    }
    let mut intrinsic = [0.0; INTRINSIC_DIM];
    for v in intrinsic.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    Observation {
        graph: InteractionGraph {
            features,
            adjacency,
            agent,
        },
        intrinsic,
    }
}

use multisoc::numcore::ParamSet;

/// Reverse-mode vs central differences for every parameter entry, as the
/// norm-wise relative error `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖)` together with the
/// largest entrywise relative error (floor 1e-3).
pub fn param_grad_check<F>(params: &ParamSet, f: F, h: f64) -> (f64, f64)
where
    F: for<'t> Fn(&'t Tape, &ParamSet) -> Var<'t>,
{
    let mut p = params.clone();
    p.zero_grads();
    let tape = Tape::new();
    let out = f(&tape, &p);
    tape.backward(out).unwrap().accumulate_into(&mut p).unwrap();
    let (mut diff, mut na, mut nn, mut worst) = (0.0, 0.0, 0.0, 0.0_f64);
    for name in params.names().to_vec() {
        let analytic = p
            .grad(&name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(params.get(&name).unwrap().shape()));
        let len = params.get(&name).unwrap().len();
        for e in 0..len {
            let mut q = params.clone();
            q.get_mut(&name).unwrap().data_mut()[e] += h;
            let up = f(&Tape::new(), &q).value().item();
            q.get_mut(&name).unwrap().data_mut()[e] -= 2.0 * h;
            let down = f(&Tape::new(), &q).value().item();
            let num = (up - down) / (2.0 * h);
            let a = analytic.data()[e];
            diff += (a - num) * (a - num);
            na += a * a;
            nn += num * num;
            worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(1e-3));
        }
    }
    let norm = diff.sqrt() / f64::max(na, nn).sqrt().max(1e-300);
    (norm, worst)
}

use multisoc::policy::{
    edge_noise, forward_on_tape, init_params, stack_noise, GraphBatch, Hyper, SelectionMode,
};

/// End-to-end check of the value head with respect to every network
/// parameter, soft Gumbel selection, on a random batch drawn from `seed`.
/// Returns (norm-wise, worst entrywise) relative errors.
pub fn value_head_grad_check(seed: u64) -> (f64, f64) {
    let mut r = rng("e2e", seed);
    let hyper = Hyper::tiny();
    let params = init_params(&hyper, &mut r).unwrap();
    let n = r.random_range(2..=6);
    let obs: Vec<Observation> = (0..3).map(|_| random_observation(n, 0.6, &mut r)).collect();
    let refs: Vec<&Observation> = obs.iter().collect();
    let batch = GraphBatch::new(&refs).unwrap();
    let noise: Vec<Tensor> = (0..3).map(|_| edge_noise(n, hyper.edge_heads, &mut r)).collect();
    let noise = stack_noise(&noise.iter().collect::<Vec<_>>(), hyper.edge_heads, n).unwrap();
    let h0 = randn(&[3, hyper.rnn], &mut r).map(|x| 0.5 * x);
    let tau = r.random_range(0.5..2.0);
    param_grad_check(
        &params,
        |tape, p| {
            let h = tape.constant(h0.clone());
            let f = forward_on_tape(tape, p, &hyper, &batch, h, tau, &noise, SelectionMode::Soft).unwrap();
            project(f.value, seed)
        },
        1e-6,
    )
}

use multisoc::policy::{crowd_coordinator, edge_selector, forward_with_noise, ActionMode};
use rand::SeedableRng as _;

/// Small architecture with `heads` edge-selector heads.
pub fn hyper_with_heads(heads: usize) -> Hyper {
    Hyper {
        edge_heads: heads,
        edge_emb: 2 * heads,
        ..Hyper::tiny()
    }
}

/// Hard selection on `trials` random graphs (N ∈ [1, 30], heads ∈ {2, 4, 8});
/// returns the number of rows whose out-degree exceeds the head count.
pub fn out_degree_violations(trials: u64) -> usize {
    let mut violations = 0;
    for t in 0..trials {
        let mut r = rng("out-degree", t);
        let heads = [2, 4, 8][r.random_range(0..3)];
        let n = r.random_range(1..=30);
        let hyper = hyper_with_heads(heads);
        let params = init_params(&hyper, &mut r).unwrap();
        let obs = random_observation(n, r.random_range(0.1..1.0), &mut r);
        let batch = GraphBatch::new(&[&obs]).unwrap();
        let noise = stack_noise(&[&edge_noise(n, heads, &mut r)], heads, n).unwrap();
        let tape = Tape::new();
        let s = edge_selector(&tape, &params, &hyper, &batch, 1.0, &noise, SelectionMode::Hard).unwrap();
        let m = s.weights.value();
        for i in 0..n {
            let deg = (0..n).filter(|&j| m.get(i, j) != 0.0).count();
            if deg > heads {
                violations += 1;
            }
        }
    }
    violations
}

/// Largest `|Σ_j α_ij − 1|` of the crowd coordinator over `trials` random
/// sparse graphs, all heads and rows.
pub fn coordinator_row_sum_error(trials: u64) -> f64 {
    let mut worst = 0.0_f64;
    for t in 0..trials {
        let mut r = rng("row-sums", t);
        let hyper = Hyper::tiny();
        let params = init_params(&hyper, &mut r).unwrap();
        let n = r.random_range(1..=20);
        let obs = random_observation(n, r.random_range(0.1..1.0), &mut r);
        let batch = GraphBatch::new(&[&obs]).unwrap();
        let noise = stack_noise(&[&edge_noise(n, hyper.edge_heads, &mut r)], hyper.edge_heads, n).unwrap();
        let tape = Tape::new();
        let s = edge_selector(&tape, &params, &hyper, &batch, 1.0, &noise, SelectionMode::Hard).unwrap();
        let (_, alphas) = crowd_coordinator(&tape, &params, &hyper, &s).unwrap();
        for a in alphas {
            let a = a.value();
            for i in 0..n {
                let sum: f64 = a.row_slice(i).iter().sum();
                worst = worst.max((sum - 1.0).abs());
            }
        }
    }
    worst
}

/// Permutes an edge-noise tensor `[n, heads·n]` like the graph nodes.
pub fn permute_noise(noise: &Tensor, order: &[usize], heads: usize) -> Tensor {
    let n = order.len();
    let mut out = Tensor::zeros(noise.shape());
    for (ni, &oi) in order.iter().enumerate() {
        for k in 0..heads {
            for (nj, &oj) in order.iter().enumerate() {
                out.set(ni, k * n + nj, noise.get(oi, k * n + oj));
            }
        }
    }
    out
}

/// Largest difference between policy outputs before and after shuffling
/// the non-agent nodes (noise permuted to match, same action rng).
pub fn permutation_max_diff(trials: u64) -> f64 {
    let mut worst = 0.0_f64;
    for t in 0..trials {
        let mut r = rng("perm", t);
        let hyper = Hyper {
            edge_heads: 4,
            edge_emb: 16,
            mha_heads: 2,
            mha_emb: 8,
            ..Hyper::tiny()
        };
        let params = init_params(&hyper, &mut r).unwrap();
        let n = r.random_range(2..=12);
        let obs = random_observation(n, 0.6, &mut r);
        let noise = edge_noise(n, hyper.edge_heads, &mut r);
        let h = randn(&[1, hyper.rnn], &mut r);
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut r);
        // Keep the agent where it was; every other node moves.
        let a = obs.graph.agent;
        let pos = order.iter().position(|&o| o == a).unwrap();
        order.swap(pos, a);
        let p_obs = Observation {
            graph: obs.graph.permuted(&order),
            intrinsic: obs.intrinsic,
        };
        let p_noise = permute_noise(&noise, &order, hyper.edge_heads);
        let seed = r.random::<u64>();
        let run = |o: &Observation, nz: &Tensor| {
            let mut ar = multisoc::rng::Rng::seed_from_u64(seed);
            forward_with_noise(&[o], &h, &params, &hyper, 0.5, &[nz], &mut ar, ActionMode::Sample).unwrap()
        };
        let x = run(&obs, &noise);
        let y = run(&p_obs, &p_noise);
        worst = worst
            .max(x.action.max_abs_diff(&y.action))
            .max(x.mean.max_abs_diff(&y.mean))
            .max(x.hidden.max_abs_diff(&y.hidden))
            .max((x.value[0] - y.value[0]).abs())
            .max((x.log_prob[0] - y.log_prob[0]).abs());
    }
    worst
}

use multisoc::numcore::{gumbel_noise, softmax_rows};

/// Empirical argmax frequencies of `logits + g` against `softmax(logits)`;
/// returns the largest deviation.
pub fn gumbel_max_deviation(logits: &[f64], draws: usize, seed: u64) -> f64 {
    let k = logits.len();
    let noise = gumbel_noise(&[draws, k], &mut rng("gumbel-max", seed));
    let mut counts = vec![0usize; k];
    for d in 0..draws {
        let row = noise.row_slice(d);
        let best = (0..k)
            .max_by(|&a, &b| (logits[a] + row[a]).total_cmp(&(logits[b] + row[b])))
            .unwrap();
        counts[best] += 1;
    }
    let p = softmax_rows(&Tensor::row(logits), None).unwrap();
    counts
        .iter()
        .zip(p.data())
        .map(|(&c, &q)| (c as f64 / draws as f64 - q).abs())
        .fold(0.0, f64::max)
}
