use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Central-difference check of every input of `f`.
fn check(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
    let eval = |ins: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out);
    let h = 1e-5;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(t.rows, t.cols));
        for i in 0..t.len() {
            let mut plus = inputs.clone();
            plus[k].data[i] += h;
            let mut minus = inputs.clone();
            minus[k].data[i] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data[i];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            assert!(err < 1e-5, "input {k} entry {i}: analytic {a} vs numeric {fd}");
        }
    }
}

fn weighted_sum(g: &mut Graph<f64>, v: Var, seed: u64) -> Var {
    let (r, c) = g.shape(v);
    let w = random(&mut ChaCha8Rng::seed_from_u64(seed), r, c);
    let w = g.constant(w);
    let p = g.mul(v, w);
    g.sum_all(p)
}

#[test]
fn dense_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ins = vec![random(&mut rng, 3, 4), random(&mut rng, 4, 2), random(&mut rng, 5, 4), random(&mut rng, 1, 4)];
    check(ins, |g, v| {
        let a = g.matmul(v[0], v[1]);
        let b = g.matmul_bt(v[0], v[2]);
        let c = g.add_row(v[0], v[3]);
        let d = g.mul_row(c, v[3]);
        let e = g.transpose(d);
        let parts = [weighted_sum(g, a, 1), weighted_sum(g, b, 2), weighted_sum(g, e, 3)];
        let cat = g.concat_rows(&parts);
        g.sum_all(cat)
    });
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut pos = random(&mut rng, 2, 3);
    pos.data.iter_mut().for_each(|x| *x = x.abs() + 0.5);
    let ins = vec![random(&mut rng, 2, 3), random(&mut rng, 2, 3), pos];
    check(ins, |g, v| {
        let a = g.mul(v[0], v[1]);
        let b = g.sub(a, v[1]);
        let sq = g.square(v[2]);
        let sc = g.scale(sq, 0.7);
        let terms = [
            g.recip(v[2]),
            g.exp(b),
            g.tanh(v[0]),
            g.silu(v[1]),
            g.sin(v[0]),
            g.cos(v[1]),
            g.add_scalar(sc, 2.0),
        ];
        let parts: Vec<Var> = terms.iter().enumerate().map(|(i, &t)| weighted_sum(g, t, i as u64)).collect();
        let cat = g.concat_cols(&parts);
        g.sum_all(cat)
    });
}

#[test]
fn row_reductions_and_normalizations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ins = vec![random(&mut rng, 4, 5), random(&mut rng, 4, 1)];
    check(ins, |g, v| {
        let sm = g.softmax_rows(v[0]);
        let ln = g.layer_norm(v[0], 1e-5);
        let mc = g.mul_col(v[0], v[1]);
        let sr = g.sum_rows(mc);
        let sc = g.sum_cols(ln);
        let sl = g.slice_cols(sm, 1, 3);
        let rows = g.slice_rows(ln, 1, 2);
        let gr = g.gather_rows(v[0], Rc::new(vec![3, 0, 3, 2]));
        let gc = g.gather_cols(v[0], Rc::new(vec![4, 4, 1]));
        let parts = [
            weighted_sum(g, sm, 1),
            weighted_sum(g, sr, 2),
            weighted_sum(g, sc, 3),
            weighted_sum(g, sl, 4),
            weighted_sum(g, rows, 5),
            weighted_sum(g, gr, 6),
            weighted_sum(g, gc, 7),
        ];
        let cat = g.concat_cols(&parts);
        g.mean_all(cat)
    });
}

#[test]
fn rotation_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ins = vec![random(&mut rng, 3, 6), random(&mut rng, 1, 6), random(&mut rng, 3, 3), random(&mut rng, 1, 3)];
    check(ins, |g, v| {
        let m = g.rot6d_to_mat(v[0]);
        let r = g.rot6d_to_mat(v[1]);
        let prod = g.mat3_mul(r, m);
        let prod2 = g.mat3_mul(m, r);
        let x = g.mat3_vec(prod, v[2]);
        let y = g.mat3_vec(prod2, v[3]);
        let parts = [weighted_sum(g, m, 1), weighted_sum(g, x, 2), weighted_sum(g, y, 3)];
        let cat = g.concat_cols(&parts);
        g.sum_all(cat)
    });
}

#[test]
fn chamfer_and_max_pool() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let targets = Rc::new(ChamferTargets {
        frames: (0..2)
            .map(|_| (0..7).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect())
            .collect(),
    });
    let ins = vec![random(&mut rng, 2, 12), random(&mut rng, 6, 3)];
    check(ins, move |g, v| {
        let c = g.chamfer_sum(v[0], targets.clone(), 3.0);
        let p = g.max_pool_segments(v[1], &[0, 2, 6]);
        let w = weighted_sum(g, p, 1);
        g.add(c, w)
    });
}

#[test]
fn unused_branches_have_no_gradient() {
    let mut g = Graph::<f64>::new();
    let a = g.variable(Tensor::scalar(2.0));
    let b = g.variable(Tensor::scalar(3.0));
    let c = g.constant(Tensor::scalar(4.0));
    let _unused = g.mul(b, c);
    let y = g.mul(a, c);
    let grads = g.backward(y);
    assert_eq!(grads.get(a).unwrap().item(), 4.0);
    assert!(grads.get(b).is_none());
    assert!(grads.get(c).is_none());
}
