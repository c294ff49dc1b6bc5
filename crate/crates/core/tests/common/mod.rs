#![allow(dead_code)]

use std::collections::BTreeMap;

use advlab::model::{init_params, one_hot, Arch, ClassSpace, ModelParams, Objective};
use advlab::numcore::{backward, finite_difference_gradient, Bindings, Graph, NodeId};
use advlab::rng::{self, LabRng};
use advlab::Tensor;

pub fn rand_tensor(r: &mut LabRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng::uniform(r, lo, hi)).collect()).unwrap()
}

fn rand_usize(r: &mut LabRng, lo: usize, hi: usize) -> usize {
    lo + ((rng::unit(r) * (hi - lo + 1) as f64) as usize).min(hi - lo)
}

fn soft_targets(r: &mut LabRng, n: usize, c: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * c);
    for _ in 0..n {
        let row: Vec<f64> = (0..c).map(|_| rng::uniform(r, 0.05, 1.0)).collect();
        let s: f64 = row.iter().sum();
        data.extend(row.iter().map(|v| v / s));
    }
    Tensor::matrix(n, c, data).unwrap()
}

/// A seeded random scalar-valued graph mixing every differentiable
/// primitive, with all leaves bound. Returns the leaves to differentiate.
pub fn random_graph(seed: u64) -> (Graph, Bindings, Vec<NodeId>) {
    let mut r = rng::substream(seed, 7);
    let n = rand_usize(&mut r, 1, 4);
    let d = rand_usize(&mut r, 1, 5);
    let h = rand_usize(&mut r, 2, 5);
    let c = rand_usize(&mut r, 2, 5);

    let mut g = Graph::new();
    let mut b = Bindings::new();
    let x = g.data("x");
    b.insert(x, rand_tensor(&mut r, &[n, d], -1.0, 1.0));
    let w1 = g.param("w1");
    b.insert(w1, rand_tensor(&mut r, &[h, d], -1.0, 1.0));
    let b1 = g.param("b1");
    let z1 = g.affine(x, w1, b1);
    // Central differences are meaningless across a ReLU kink, so redraw the
    // bias until every pre-activation sits clear of zero.
    loop {
        b.insert(b1, rand_tensor(&mut r, &[h], -0.5, 0.5));
        let z = &advlab::numcore::evaluate(&g, &b).unwrap()[z1.index()];
        if z.data().iter().all(|v| v.abs() >= 1e-3) {
            break;
        }
    }
    let a1 = match rand_usize(&mut r, 0, 4) {
        0 => g.relu(z1),
        1 => g.softmax(z1),
        2 => g.scale(z1, rng::uniform(&mut r, -2.0, 2.0)),
        3 => g.mul(z1, z1),
        _ => {
            let s = g.relu(z1);
            g.add(s, z1)
        }
    };
    let w2 = g.param("w2");
    b.insert(w2, rand_tensor(&mut r, &[c, h], -1.0, 1.0));
    let b2 = g.param("b2");
    b.insert(b2, rand_tensor(&mut r, &[c], -0.5, 0.5));
    let mut z2 = g.affine(a1, w2, b2);
    let mut width = c;
    if c > 2 && rng::unit(&mut r) < 0.5 {
        let start = rand_usize(&mut r, 0, c - 2);
        width = rand_usize(&mut r, 2, c - start);
        z2 = g.columns(z2, start, width);
    }
    match rand_usize(&mut r, 0, 2) {
        0 => {
            let t = g.data("targets");
            b.insert(t, soft_targets(&mut r, n, width));
            let l = g.softmax_cross_entropy(z2, t);
            if rng::unit(&mut r) < 0.5 {
                g.mean(l);
            } else {
                g.sum(l);
            }
        }
        1 => {
            let p = g.softmax(z2);
            let pz = g.mul(p, z2);
            g.sum(pz);
        }
        _ => {
            let sq = g.mul(z2, z2);
            g.mean(sq);
        }
    }
    (g, b, vec![x, w1, b1, w2, b2])
}

/// Largest per-coordinate violation ratio of `|analytic - numeric|` against
/// `max(rel_tol * max(|a|, |n|), abs_tol)`; a value ≤ 1 passes.
pub fn gradient_violation(g: &Graph, b: &Bindings, wrt: &[NodeId], rel_tol: f64, abs_tol: f64) -> f64 {
    let analytic = backward(g, b, wrt).unwrap();
    let numeric = finite_difference_gradient(g, b, wrt, 1e-5).unwrap();
    let mut worst: f64 = 0.0;
    for id in wrt {
        for (a, n) in analytic[id].data().iter().zip(numeric[id].data()) {
            let allowed = (rel_tol * a.abs().max(n.abs())).max(abs_tol);
            worst = worst.max((a - n).abs() / allowed);
        }
    }
    worst
}

/// Random batch in `[0, 1]^d` with labels in `0..k`.
pub fn random_batch(seed: u64, n: usize, d: usize, k: usize) -> (Tensor, Vec<usize>) {
    let mut r = rng::substream(seed, 11);
    let x = rand_tensor(&mut r, &[n, d], 0.0, 1.0);
    let y = (0..n).map(|_| rand_usize(&mut r, 0, k - 1)).collect();
    (x, y)
}

pub fn random_model(seed: u64, d: usize, hidden: Vec<usize>, k: usize) -> ModelParams {
    init_params(&Arch::new(d, hidden, k), ClassSpace::new(k, 0).unwrap(), Vec::new(), seed).unwrap()
}

/// Mean content cross-entropy of `model` at `x`.
pub fn mean_content_loss(model: &ModelParams, x: &Tensor, y: &[usize]) -> f64 {
    model
        .losses(x, &one_hot(y, model.class_space.k()).unwrap(), Objective::Content)
        .unwrap()
        .loss
}

pub fn counts(flags: &[bool]) -> usize {
    flags.iter().filter(|&&f| f).count()
}

/// Exhaustive maximum of the content loss over the vertices of the
/// feasible box `[x - ε, x + ε] ∩ [0, 1]` for one example.
pub fn corner_max(model: &ModelParams, x: &[f64], y: usize, eps: f64) -> f64 {
    let d = x.len();
    let lo: Vec<f64> = x.iter().map(|v| (v - eps).max(0.0)).collect();
    let hi: Vec<f64> = x.iter().map(|v| (v + eps).min(1.0)).collect();
    let n = 1usize << d;
    let mut data = Vec::with_capacity(n * d);
    for mask in 0..n {
        data.extend((0..d).map(|j| if mask >> j & 1 == 1 { hi[j] } else { lo[j] }));
    }
    let corners = Tensor::matrix(n, d, data).unwrap();
    let t = one_hot(&vec![y; n], model.class_space.k()).unwrap();
    let pass = model.losses(&corners, &t, Objective::Content).unwrap();
    pass.losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Number of severity steps at which the error goes down.
pub fn inversions(errors: &BTreeMap<u8, f64>) -> usize {
    let v: Vec<f64> = errors.values().copied().collect();
    v.windows(2).filter(|w| w[1] < w[0]).count()
}
