//! Reverse-mode automatic differentiation over a tape of matrix operations.

use std::rc::Rc;

use super::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Per-frame target point sets for a Chamfer node.
#[derive(Debug, Clone)]
pub struct ChamferTargets<T> {
    pub frames: Vec<Vec<[T; 3]>>,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Recip(Var),
    Exp(Var),
    Tanh(Var),
    Silu(Var),
    Sin(Var),
    Cos(Var),
    Square(Var),
    SoftmaxRows(Var),
    LayerNorm(Var, Vec<T>),
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Rc<Vec<usize>>),
    GatherCols(Var, Rc<Vec<usize>>),
    Transpose(Var),
    Reshape(Var),
    Rot6dToMat(Var),
    Mat3Mul(Var, Var),
    Mat3Vec(Var, Var),
    Chamfer {
        pred: Var,
        targets: Rc<ChamferTargets<T>>,
        scale: T,
        pred_nn: Vec<Vec<usize>>,
        target_nn: Vec<Vec<usize>>,
    },
    MaxPoolSegments(Var, Vec<usize>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A tape recording every operation applied to its variables.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that is treated as a constant.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_bt(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulBt(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row shape");
        let mut v = self.value(a).clone();
        let rv = self.value(row).data.clone();
        for i in 0..r {
            for (x, &y) in v.row_slice_mut(i).iter_mut().zip(&rv) {
                *x += y;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::AddRow(a, row), ng)
    }

    /// Multiplies every row of `a` elementwise by a `1×c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "mul_row shape");
        let mut v = self.value(a).clone();
        let rv = self.value(row).data.clone();
        for i in 0..r {
            for (x, &y) in v.row_slice_mut(i).iter_mut().zip(&rv) {
                *x *= y;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::MulRow(a, row), ng)
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (r, _) = self.shape(a);
        assert_eq!(self.shape(col), (r, 1), "mul_col shape");
        let mut v = self.value(a).clone();
        for i in 0..r {
            let s = self.value(col).data[i];
            for x in v.row_slice_mut(i) {
                *x *= s;
            }
        }
        let ng = self.ng(a) || self.ng(col);
        self.push(v, Op::MulCol(a, col), ng)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x + s);
        let ng = self.ng(a);
        self.push(v, Op::AddScalar(a), ng)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.recip());
        let ng = self.ng(a);
        self.push(v, Op::Recip(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.exp());
        let ng = self.ng(a);
        self.push(v, Op::Exp(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        let ng = self.ng(a);
        self.push(v, Op::Tanh(a), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * sigmoid(x));
        let ng = self.ng(a);
        self.push(v, Op::Silu(a), ng)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.sin());
        let ng = self.ng(a);
        self.push(v, Op::Sin(a), ng)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.cos());
        let ng = self.ng(a);
        self.push(v, Op::Cos(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        let ng = self.ng(a);
        self.push(v, Op::Square(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for i in 0..v.rows {
            let row = v.row_slice_mut(i);
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::SoftmaxRows(a), ng)
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm(&mut self, a: Var, eps: T) -> Var {
        let mut v = self.value(a).clone();
        let c = T::lit(v.cols as f64);
        let mut inv = Vec::with_capacity(v.rows);
        for i in 0..v.rows {
            let row = v.row_slice_mut(i);
            let mean = row.iter().copied().sum::<T>() / c;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / c;
            let s = (var + eps).sqrt().recip();
            for x in row.iter_mut() {
                *x = (*x - mean) * s;
            }
            inv.push(s);
        }
        let ng = self.ng(a);
        self.push(v, Op::LayerNorm(a, inv), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(v, Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = T::lit(self.value(a).len() as f64);
        let s = self.sum_all(a);
        self.scale(s, n.recip())
    }

    /// Sums over rows, giving a `1×c` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(1, t.cols);
        for i in 0..t.rows {
            for (o, &x) in out.data.iter_mut().zip(t.row_slice(i)) {
                *o += x;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::SumRows(a), ng)
    }

    /// Sums over columns, giving an `r×1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::column((0..t.rows).map(|i| t.row_slice(i).iter().copied().sum()).collect());
        let ng = self.ng(a);
        self.push(out, Op::SumCols(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows, rows, "concat_cols row mismatch");
            for i in 0..rows {
                out.data[i * cols + off..i * cols + off + t.cols].copy_from_slice(t.row_slice(i));
            }
            off += t.cols;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols, "concat_rows col mismatch");
            data.extend_from_slice(&t.data);
        }
        let rows = data.len() / cols.max(1);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::new(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.cols);
        let mut out = Tensor::zeros(t.rows, len);
        for i in 0..t.rows {
            out.row_slice_mut(i).copy_from_slice(&t.row_slice(i)[start..start + len]);
        }
        let ng = self.ng(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.rows);
        let out = Tensor::new(len, t.cols, t.data[start * t.cols..(start + len) * t.cols].to_vec());
        let ng = self.ng(a);
        self.push(out, Op::SliceRows(a, start), ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(idx.len(), t.cols);
        for (o, &i) in idx.iter().enumerate() {
            out.row_slice_mut(o).copy_from_slice(t.row_slice(i));
        }
        let ng = self.ng(a);
        self.push(out, Op::GatherRows(a, idx), ng)
    }

    pub fn gather_cols(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(t.rows, idx.len());
        for i in 0..t.rows {
            for (o, &c) in idx.iter().enumerate() {
                out.data[i * idx.len() + o] = t.data[i * t.cols + c];
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::GatherCols(a, idx), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(v, Op::Transpose(a), ng)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let t = self.value(a);
        let v = Tensor::new(rows, cols, t.data.clone());
        let ng = self.ng(a);
        self.push(v, Op::Reshape(a), ng)
    }

    /// Row-wise Gram-Schmidt: `N×6` raw 6D rows to `N×9` row-major rotation matrices.
    pub fn rot6d_to_mat(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert_eq!(t.cols, 6, "rot6d_to_mat expects 6 columns");
        let mut out = Tensor::zeros(t.rows, 9);
        for i in 0..t.rows {
            let m = super::kernels::gram_schmidt(t.row_slice(i));
            out.row_slice_mut(i).copy_from_slice(&m.out);
        }
        let ng = self.ng(a);
        self.push(out, Op::Rot6dToMat(a), ng)
    }

    /// Row-wise 3x3 products; either operand may be a single broadcast row.
    pub fn mat3_mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!((ta.cols, tb.cols), (9, 9));
        let rows = broadcast_rows(ta.rows, tb.rows);
        let mut out = Tensor::zeros(rows, 9);
        for i in 0..rows {
            let x = ta.row_slice(if ta.rows == 1 { 0 } else { i });
            let y = tb.row_slice(if tb.rows == 1 { 0 } else { i });
            let o = out.row_slice_mut(i);
            for r in 0..3 {
                for c in 0..3 {
                    o[r * 3 + c] = x[r * 3] * y[c] + x[r * 3 + 1] * y[3 + c] + x[r * 3 + 2] * y[6 + c];
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mat3Mul(a, b), ng)
    }

    /// Row-wise matrix-vector products (`N×9` by `N×3`); either may broadcast.
    pub fn mat3_vec(&mut self, a: Var, v: Var) -> Var {
        let (ta, tv) = (self.value(a), self.value(v));
        assert_eq!((ta.cols, tv.cols), (9, 3));
        let rows = broadcast_rows(ta.rows, tv.rows);
        let mut out = Tensor::zeros(rows, 3);
        for i in 0..rows {
            let m = ta.row_slice(if ta.rows == 1 { 0 } else { i });
            let x = tv.row_slice(if tv.rows == 1 { 0 } else { i });
            let o = out.row_slice_mut(i);
            for r in 0..3 {
                o[r] = m[r * 3] * x[0] + m[r * 3 + 1] * x[1] + m[r * 3 + 2] * x[2];
            }
        }
        let ng = self.ng(a) || self.ng(v);
        self.push(out, Op::Mat3Vec(a, v), ng)
    }

    /// Sum over frames of the symmetric mean nearest-neighbour distance between the
    /// points in each row of `pred` (`n×3P`) and the matching target frame, times `scale`.
    pub fn chamfer_sum(&mut self, pred: Var, targets: Rc<ChamferTargets<T>>, scale: T) -> Var {
        let t = self.value(pred);
        assert_eq!(t.rows, targets.frames.len(), "one target cloud per predicted frame");
        assert_eq!(t.cols % 3, 0);
        let mut total = T::zero();
        let mut pred_nn = Vec::with_capacity(t.rows);
        let mut target_nn = Vec::with_capacity(t.rows);
        for (i, target) in targets.frames.iter().enumerate() {
            let pts: Vec<[T; 3]> = t.row_slice(i).chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            let nn = super::kernels::nearest_both(&pts, target);
            total += nn.chamfer * scale;
            pred_nn.push(nn.a_to_b);
            target_nn.push(nn.b_to_a);
        }
        let ng = self.ng(pred);
        self.push(Tensor::scalar(total), Op::Chamfer { pred, targets, scale, pred_nn, target_nn }, ng)
    }

    /// Column-wise max over consecutive row segments; `bounds` holds `S+1` row offsets.
    pub fn max_pool_segments(&mut self, a: Var, bounds: &[usize]) -> Var {
        let t = self.value(a);
        let segs = bounds.len() - 1;
        let mut out = Tensor::zeros(segs, t.cols);
        let mut arg = vec![0usize; segs * t.cols];
        for s in 0..segs {
            assert!(bounds[s + 1] > bounds[s], "empty pooling segment");
            for c in 0..t.cols {
                let mut best = bounds[s];
                for r in bounds[s]..bounds[s + 1] {
                    if t.at(r, c) > t.at(best, c) {
                        best = r;
                    }
                }
                arg[s * t.cols + c] = best;
                out.set(s, c, t.at(best, c));
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::MaxPoolSegments(a, arg), ng)
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn send(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if self.ng(v) {
            accumulate(&mut grads[v.0], g);
        }
    }

    fn backprop_node(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    self.send(grads, *a, g.matmul_bt(self.value(*b)));
                }
                if self.ng(*b) {
                    self.send(grads, *b, self.value(*a).matmul_at(g));
                }
            }
            Op::MatMulBt(a, b) => {
                if self.ng(*a) {
                    self.send(grads, *a, g.matmul(self.value(*b)));
                }
                if self.ng(*b) {
                    self.send(grads, *b, g.matmul_at(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.send(grads, *a, g.clone());
                self.send(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, g.clone());
                self.send(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.send(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    self.send(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(a, row) => {
                self.send(grads, *a, g.clone());
                if self.ng(*row) {
                    self.send(grads, *row, column_sums(g));
                }
            }
            Op::MulRow(a, row) => {
                let rv = &self.value(*row).data;
                if self.ng(*a) {
                    let mut ga = g.clone();
                    for i in 0..ga.rows {
                        for (x, &s) in ga.row_slice_mut(i).iter_mut().zip(rv) {
                            *x *= s;
                        }
                    }
                    self.send(grads, *a, ga);
                }
                if self.ng(*row) {
                    let av = self.value(*a);
                    let mut gr = Tensor::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for c in 0..g.cols {
                            gr.data[c] += g.at(i, c) * av.at(i, c);
                        }
                    }
                    self.send(grads, *row, gr);
                }
            }
            Op::MulCol(a, col) => {
                let cv = &self.value(*col).data;
                if self.ng(*a) {
                    let mut ga = g.clone();
                    for i in 0..ga.rows {
                        for x in ga.row_slice_mut(i) {
                            *x *= cv[i];
                        }
                    }
                    self.send(grads, *a, ga);
                }
                if self.ng(*col) {
                    let av = self.value(*a);
                    let gc = (0..g.rows)
                        .map(|i| g.row_slice(i).iter().zip(av.row_slice(i)).map(|(&x, &y)| x * y).sum())
                        .collect();
                    self.send(grads, *col, Tensor::column(gc));
                }
            }
            Op::Scale(a, s) => self.send(grads, *a, g.map(|x| x * *s)),
            Op::AddScalar(a) => self.send(grads, *a, g.clone()),
            Op::Recip(a) => self.send(grads, *a, g.zip_map(y, |gx, yx| -gx * yx * yx)),
            Op::Exp(a) => self.send(grads, *a, g.zip_map(y, |gx, yx| gx * yx)),
            Op::Tanh(a) => self.send(grads, *a, g.zip_map(y, |gx, yx| gx * (T::one() - yx * yx))),
            Op::Silu(a) => {
                let x = self.value(*a);
                let d = x.map(|v| {
                    let s = sigmoid(v);
                    s * (T::one() + v * (T::one() - s))
                });
                self.send(grads, *a, g.zip_map(&d, |p, q| p * q));
            }
            Op::Sin(a) => self.send(grads, *a, g.zip_map(self.value(*a), |gx, x| gx * x.cos())),
            Op::Cos(a) => self.send(grads, *a, g.zip_map(self.value(*a), |gx, x| -gx * x.sin())),
            Op::Square(a) => {
                let two = T::lit(2.0);
                self.send(grads, *a, g.zip_map(self.value(*a), |gx, x| two * gx * x));
            }
            Op::SoftmaxRows(a) => {
                let mut ga = g.clone();
                for i in 0..y.rows {
                    let yr = y.row_slice(i);
                    let dot: T = g.row_slice(i).iter().zip(yr).map(|(&p, &q)| p * q).sum();
                    for (x, &yv) in ga.row_slice_mut(i).iter_mut().zip(yr) {
                        *x = yv * (*x - dot);
                    }
                }
                self.send(grads, *a, ga);
            }
            Op::LayerNorm(a, inv) => {
                let c = T::lit(y.cols as f64);
                let mut ga = g.clone();
                for i in 0..y.rows {
                    let yr = y.row_slice(i);
                    let gr = g.row_slice(i);
                    let mean_g = gr.iter().copied().sum::<T>() / c;
                    let mean_gy = gr.iter().zip(yr).map(|(&p, &q)| p * q).sum::<T>() / c;
                    for ((x, &gv), &yv) in ga.row_slice_mut(i).iter_mut().zip(gr).zip(yr) {
                        *x = inv[i] * (gv - mean_g - yv * mean_gy);
                    }
                }
                self.send(grads, *a, ga);
            }
            Op::SumAll(a) => {
                let (r, c) = self.shape(*a);
                self.send(grads, *a, Tensor::full(r, c, g.item()));
            }
            Op::SumRows(a) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    ga.row_slice_mut(i).copy_from_slice(&g.data);
                }
                self.send(grads, *a, ga);
            }
            Op::SumCols(a) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    for x in ga.row_slice_mut(i) {
                        *x = g.data[i];
                    }
                }
                self.send(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.ng(p) {
                        let mut gp = Tensor::zeros(r, c);
                        for i in 0..r {
                            gp.row_slice_mut(i).copy_from_slice(&g.row_slice(i)[off..off + c]);
                        }
                        self.send(grads, p, gp);
                    }
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.ng(p) {
                        self.send(grads, p, Tensor::new(r, c, g.data[off * c..(off + r) * c].to_vec()));
                    }
                    off += r;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    ga.row_slice_mut(i)[*start..*start + g.cols].copy_from_slice(g.row_slice(i));
                }
                self.send(grads, *a, ga);
            }
            Op::SliceRows(a, start) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                ga.data[start * c..(start + g.rows) * c].copy_from_slice(&g.data);
                self.send(grads, *a, ga);
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for (o, &i) in idx.iter().enumerate() {
                    for (x, &gv) in ga.row_slice_mut(i).iter_mut().zip(g.row_slice(o)) {
                        *x += gv;
                    }
                }
                self.send(grads, *a, ga);
            }
            Op::GatherCols(a, idx) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    for (o, &col) in idx.iter().enumerate() {
                        ga.data[i * c + col] += g.data[i * idx.len() + o];
                    }
                }
                self.send(grads, *a, ga);
            }
            Op::Transpose(a) => self.send(grads, *a, g.transpose()),
            Op::Reshape(a) => {
                let (r, c) = self.shape(*a);
                self.send(grads, *a, Tensor::new(r, c, g.data.clone()));
            }
            Op::Rot6dToMat(a) => {
                let x = self.value(*a);
                let mut ga = Tensor::zeros(x.rows, 6);
                for i in 0..x.rows {
                    let d = super::kernels::gram_schmidt_backward(x.row_slice(i), g.row_slice(i));
                    ga.row_slice_mut(i).copy_from_slice(&d);
                }
                self.send(grads, *a, ga);
            }
            Op::Mat3Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(ta.rows, 9);
                let mut gb = Tensor::zeros(tb.rows, 9);
                for i in 0..g.rows {
                    let ia = if ta.rows == 1 { 0 } else { i };
                    let ib = if tb.rows == 1 { 0 } else { i };
                    let x = ta.row_slice(ia);
                    let yv = tb.row_slice(ib);
                    let gr = g.row_slice(i);
                    for r in 0..3 {
                        for c in 0..3 {
                            let gv = gr[r * 3 + c];
                            for k in 0..3 {
                                ga.data[ia * 9 + r * 3 + k] += gv * yv[k * 3 + c];
                                gb.data[ib * 9 + k * 3 + c] += gv * x[r * 3 + k];
                            }
                        }
                    }
                }
                self.send(grads, *a, ga);
                self.send(grads, *b, gb);
            }
            Op::Mat3Vec(a, v) => {
                let (ta, tv) = (self.value(*a), self.value(*v));
                let mut ga = Tensor::zeros(ta.rows, 9);
                let mut gv = Tensor::zeros(tv.rows, 3);
                for i in 0..g.rows {
                    let ia = if ta.rows == 1 { 0 } else { i };
                    let iv = if tv.rows == 1 { 0 } else { i };
                    let m = ta.row_slice(ia);
                    let x = tv.row_slice(iv);
                    let gr = g.row_slice(i);
                    for r in 0..3 {
                        for c in 0..3 {
                            ga.data[ia * 9 + r * 3 + c] += gr[r] * x[c];
                            gv.data[iv * 3 + c] += gr[r] * m[r * 3 + c];
                        }
                    }
                }
                self.send(grads, *a, ga);
                self.send(grads, *v, gv);
            }
            Op::Chamfer { pred, targets, scale, pred_nn, target_nn } => {
                let t = self.value(*pred);
                let mut gp = Tensor::zeros(t.rows, t.cols);
                let half = T::lit(0.5) * *scale * g.item();
                for (i, target) in targets.frames.iter().enumerate() {
                    let row = t.row_slice(i);
                    let np = row.len() / 3;
                    let wp = half / T::lit(np as f64);
                    let wt = half / T::lit(target.len() as f64);
                    let grow = gp.row_slice_mut(i);
                    for (p, &q) in pred_nn[i].iter().enumerate() {
                        add_unit_direction(grow, p, &row[p * 3..p * 3 + 3], target[q], wp);
                    }
                    for (q, &p) in target_nn[i].iter().enumerate() {
                        add_unit_direction(grow, p, &row[p * 3..p * 3 + 3], target[q], wt);
                    }
                }
                self.send(grads, *pred, gp);
            }
            Op::MaxPoolSegments(a, arg) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for s in 0..g.rows {
                    for col in 0..c {
                        ga.data[arg[s * c + col] * c + col] += g.at(s, col);
                    }
                }
                self.send(grads, *a, ga);
            }
        }
    }
}

fn broadcast_rows(a: usize, b: usize) -> usize {
    match (a, b) {
        (x, y) if x == y => x,
        (1, y) => y,
        (x, 1) => x,
        (x, y) => panic!("row broadcast {x} vs {y}"),
    }
}

fn column_sums<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(1, g.cols);
    for i in 0..g.rows {
        for (o, &x) in out.data.iter_mut().zip(g.row_slice(i)) {
            *o += x;
        }
    }
    out
}

fn add_unit_direction<T: Scalar>(grow: &mut [T], p: usize, point: &[T], target: [T; 3], w: T) {
    let d = [point[0] - target[0], point[1] - target[1], point[2] - target[2]];
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if n > T::zero() {
        for k in 0..3 {
            grow[p * 3 + k] += w * d[k] / n;
        }
    }
}
