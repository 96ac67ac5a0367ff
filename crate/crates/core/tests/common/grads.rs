//! Finite-difference checks of every numcore layer, grouped by kind. Each
//! group returns the worst relative error per operation over five seeds.

use std::rc::Rc;

use multisoc::numcore::{affine, gru_cell, init_gru, ParamSet, Tensor, Var};

use super::{grad_check, param_grad_check, project, randn, randn_off_zero, rng};

pub const H: f64 = 1e-6;

pub type Errors = Vec<(String, f64)>;

fn unary(out: &mut Errors, name: &str, shape: &[usize], f: impl for<'t> Fn(Var<'t>) -> Var<'t>) {
    let worst = (0..5)
        .map(|seed| {
            let x = randn_off_zero(shape, &mut rng(name, seed));
            grad_check(&[x], |_, v| project(f(v[0]), seed), H)
        })
        .fold(0.0, f64::max);
    out.push((name.to_string(), worst));
}

fn many(out: &mut Errors, name: &str, shapes: &[&[usize]], f: impl for<'t> Fn(&[Var<'t>]) -> Var<'t>) {
    let worst = (0..5)
        .map(|seed| {
            let mut r = rng(name, seed);
            let xs: Vec<Tensor> = shapes.iter().map(|s| randn_off_zero(s, &mut r)).collect();
            grad_check(&xs, |_, v| project(f(v), seed), H)
        })
        .fold(0.0, f64::max);
    let label = format!("{name}{shapes:?}");
    out.push((label, worst));
}

pub fn elementwise() -> Errors {
    let mut e = Vec::new();
    unary(&mut e, "sigmoid", &[3, 4], |x| x.sigmoid());
    unary(&mut e, "tanh", &[3, 4], |x| x.tanh());
    unary(&mut e, "relu", &[3, 4], |x| x.relu());
    unary(&mut e, "exp", &[3, 4], |x| x.exp());
    unary(&mut e, "square", &[3, 4], |x| x.square());
    unary(&mut e, "scale", &[3, 4], |x| x.scale(-1.7));
    unary(&mut e, "neg", &[3, 4], |x| x.neg());
    unary(&mut e, "add_scalar", &[3, 4], |x| x.add_scalar(0.3));
    // Clamp bounds placed between the perturbed values.
    unary(&mut e, "clamp", &[3, 4], |x| x.clamp(-0.55, 0.65));
    e
}

pub fn reductions() -> Errors {
    let mut e = Vec::new();
    unary(&mut e, "sum", &[3, 4], |x| x.sum().scale(1.3));
    unary(&mut e, "mean", &[3, 4], |x| x.mean().scale(1.3));
    unary(&mut e, "row_sum", &[3, 4], |x| x.row_sum());
    e
}

pub fn binary() -> Errors {
    let mut e = Vec::new();
    for other in [&[3usize, 4][..], &[1, 4], &[3, 1], &[1, 1]] {
        many(&mut e, "add", &[&[3, 4], other], |v| v[0].add(v[1]).unwrap());
        many(&mut e, "sub", &[&[3, 4], other], |v| v[0].sub(v[1]).unwrap());
        many(&mut e, "mul", &[&[3, 4], other], |v| v[0].mul(v[1]).unwrap());
    }
    many(&mut e, "minimum", &[&[3, 4], &[3, 4]], |v| {
        v[0].minimum(v[1]).unwrap()
    });
    many(&mut e, "matmul", &[&[3, 5], &[5, 2]], |v| {
        v[0].matmul(v[1]).unwrap()
    });
    many(&mut e, "affine", &[&[3, 5], &[5, 2], &[1, 2]], |v| {
        affine(v[0], v[1], v[2]).unwrap()
    });
    e
}

pub fn softmaxes() -> Errors {
    let mut e = Vec::new();
    let mask: Vec<bool> = (0..20).map(|i| i % 3 != 1 || i % 5 == 0).collect();
    unary(&mut e, "softmax", &[4, 5], |x| x.softmax_rows(None).unwrap());
    let m = mask.clone();
    unary(&mut e, "masked_softmax", &[4, 5], move |x| {
        x.softmax_rows(Some(&m)).unwrap()
    });
    let m = Rc::new(mask);
    many(&mut e, "weighted_softmax", &[&[4, 5], &[4, 5]], move |v| {
        // Positive weights; the gradient reaches both scores and weights.
        let w = v[1].square().add_scalar(0.1);
        v[0].weighted_softmax_rows(w, m.clone()).unwrap()
    });
    e
}

pub fn structural() -> Errors {
    let mut e = Vec::new();
    unary(&mut e, "cols_slice", &[3, 6], |x| x.cols_slice(2, 3).unwrap());
    many(&mut e, "concat_cols", &[&[3, 2], &[3, 4]], |v| {
        Var::concat_cols(v).unwrap()
    });
    many(&mut e, "concat_rows", &[&[2, 3], &[4, 3]], |v| {
        Var::concat_rows(v).unwrap()
    });
    unary(&mut e, "gather_rows", &[5, 3], |x| {
        x.gather_rows(Rc::new(vec![4, 0, 4, 2])).unwrap()
    });
    many(&mut e, "block_scores", &[&[6, 4], &[6, 4]], |v| {
        v[0].block_scores(v[1], 3).unwrap()
    });
    many(&mut e, "block_apply", &[&[6, 3], &[6, 4]], |v| {
        v[0].block_apply(v[1], 3).unwrap()
    });
    e
}

/// GRU cell: weights (norm-wise and entrywise) and inputs.
pub fn gru() -> Errors {
    let (mut weights, mut inputs) = (0.0_f64, 0.0_f64);
    for seed in 0..5 {
        let mut r = rng("gru", seed);
        let mut params = ParamSet::new();
        init_gru(&mut params, "g", 3, 4, &mut r).unwrap();
        // Non-zero biases so every gate term is exercised.
        for name in ["g.b_ih", "g.b_hh"] {
            *params.get_mut(name).unwrap() = randn(&[1, 12], &mut r).map(|v| 0.3 * v);
        }
        let x = randn(&[2, 3], &mut r);
        let h = randn(&[2, 4], &mut r).map(|v| 0.5 * v);
        let (norm, worst) = param_grad_check(
            &params,
            |tape, p| {
                let out = gru_cell(tape, p, "g", tape.constant(h.clone()), tape.constant(x.clone())).unwrap();
                project(out, seed)
            },
            H,
        );
        weights = weights.max(norm).max(worst);
        let p = params.clone();
        let err = grad_check(
            &[h.clone(), x.clone()],
            |tape, v| project(gru_cell(tape, &p, "g", v[0], v[1]).unwrap(), seed),
            H,
        );
        inputs = inputs.max(err);
    }
    vec![("gru weights".into(), weights), ("gru inputs".into(), inputs)]
}

pub fn all_layers() -> Errors {
    [
        elementwise(),
        reductions(),
        binary(),
        softmaxes(),
        structural(),
        gru(),
    ]
    .concat()
}
