use crate::scalar::{cross3, dot3, Scalar, Vec3};

pub(crate) struct GramSchmidt<T> {
    pub out: [T; 9],
}

fn norm<T: Scalar>(v: Vec3<T>) -> T {
    dot3(v, v).sqrt()
}

/// Row-major `[c1 c2 c3]` from a raw 6D row, without degeneracy checks.
pub(crate) fn gram_schmidt<T: Scalar>(x: &[T]) -> GramSchmidt<T> {
    let a = [x[0], x[1], x[2]];
    let b = [x[3], x[4], x[5]];
    let na = norm(a);
    let c1 = [a[0] / na, a[1] / na, a[2] / na];
    let p = dot3(c1, b);
    let u = [b[0] - p * c1[0], b[1] - p * c1[1], b[2] - p * c1[2]];
    let nu = norm(u);
    let c2 = [u[0] / nu, u[1] / nu, u[2] / nu];
    let c3 = cross3(c1, c2);
    let mut out = [T::zero(); 9];
    for r in 0..3 {
        out[r * 3] = c1[r];
        out[r * 3 + 1] = c2[r];
        out[r * 3 + 2] = c3[r];
    }
    GramSchmidt { out }
}

pub(crate) fn gram_schmidt_backward<T: Scalar>(x: &[T], g: &[T]) -> [T; 6] {
    let a = [x[0], x[1], x[2]];
    let b = [x[3], x[4], x[5]];
    let na = norm(a);
    let c1 = [a[0] / na, a[1] / na, a[2] / na];
    let p = dot3(c1, b);
    let u = [b[0] - p * c1[0], b[1] - p * c1[1], b[2] - p * c1[2]];
    let nu = norm(u);
    let c2 = [u[0] / nu, u[1] / nu, u[2] / nu];

    let g1 = [g[0], g[3], g[6]];
    let g2 = [g[1], g[4], g[7]];
    let g3 = [g[2], g[5], g[8]];

    // c3 = c1 × c2
    let mut dc1 = cross3(c2, g3);
    let t = cross3(g3, c1);
    let dc2 = [g2[0] + t[0], g2[1] + t[1], g2[2] + t[2]];

    // c2 = u / |u|
    let k = dot3(c2, dc2);
    let du = [(dc2[0] - c2[0] * k) / nu, (dc2[1] - c2[1] * k) / nu, (dc2[2] - c2[2] * k) / nu];

    // u = b - (c1·b) c1
    let q = dot3(c1, du);
    let db = [du[0] - c1[0] * q, du[1] - c1[1] * q, du[2] - c1[2] * q];
    for i in 0..3 {
        dc1[i] = dc1[i] + g1[i] - (p * du[i] + q * b[i]);
    }

    // c1 = a / |a|
    let k = dot3(c1, dc1);
    let da = [(dc1[0] - c1[0] * k) / na, (dc1[1] - c1[1] * k) / na, (dc1[2] - c1[2] * k) / na];
    [da[0], da[1], da[2], db[0], db[1], db[2]]
}

pub(crate) struct NearestBoth<T> {
    /// Symmetric mean nearest-neighbour distance, in input units.
    pub chamfer: T,
    pub a_to_b: Vec<usize>,
    pub b_to_a: Vec<usize>,
}

pub(crate) fn nearest_both<T: Scalar>(a: &[Vec3<T>], b: &[Vec3<T>]) -> NearestBoth<T> {
    let mut a_best = vec![(T::infinity(), 0usize); a.len()];
    let mut b_best = vec![(T::infinity(), 0usize); b.len()];
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            let d0 = p[0] - q[0];
            let d1 = p[1] - q[1];
            let d2 = p[2] - q[2];
            let d = d0 * d0 + d1 * d1 + d2 * d2;
            if d < a_best[i].0 {
                a_best[i] = (d, j);
            }
            if d < b_best[j].0 {
                b_best[j] = (d, i);
            }
        }
    }
    let mean = |v: &[(T, usize)]| v.iter().map(|x| x.0.sqrt()).sum::<T>() / T::lit(v.len() as f64);
    let chamfer = T::lit(0.5) * (mean(&a_best) + mean(&b_best));
    NearestBoth {
        chamfer,
        a_to_b: a_best.into_iter().map(|x| x.1).collect(),
        b_to_a: b_best.into_iter().map(|x| x.1).collect(),
    }
}
