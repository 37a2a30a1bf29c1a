//! Parameter storage, the layers the prior is built from, and the Adam optimizer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Graph, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

/// Graph variables for every tensor of a [`ParamStore`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    /// Uniform Glorot initialization of an `rows × cols` weight.
    pub fn add_glorot(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        self.add_uniform(name, rows, cols, limit, rng)
    }

    pub fn add_uniform(&mut self, name: impl Into<String>, rows: usize, cols: usize, limit: f64, rng: &mut ChaCha8Rng) -> ParamId {
        let data = (0..rows * cols).map(|_| T::lit(rng.random_range(-limit..=limit))).collect();
        self.add(name, Tensor::new(rows, cols, data))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Inserts every tensor into `g`, as variables when `trainable`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { g.variable(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        Bound { vars }
    }

    /// Per-tensor gradients, zero where the graph did not reach a parameter.
    pub fn collect_grads(&self, bound: &Bound, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.tensors
            .iter()
            .zip(&bound.vars)
            .map(|(t, &v)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.rows, t.cols)))
            .collect()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn load_flat(&mut self, values: &[T]) -> bool {
        if values.len() != self.num_scalars() {
            return false;
        }
        let mut off = 0;
        for t in self.tensors.iter_mut() {
            let n = t.len();
            t.data.copy_from_slice(&values[off..off + n]);
            off += n;
        }
        true
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors.iter().map(Tensor::shape).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = store.add_glorot(format!("{name}.w"), fan_in, fan_out, rng);
        let b = store.add(format!("{name}.b"), Tensor::zeros(1, fan_out));
        Self { w, b }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let y = g.matmul(x, p.var(self.w));
        g.add_row(y, p.var(self.b))
    }
}

/// SiLU multilayer perceptron; the last layer is linear.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, mut x: Var) -> Var {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, p, x);
            if i < last {
                x = g.silu(x);
            }
        }
        x
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::full(1, width, T::one()));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, width));
        Self { gain, bias }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let n = g.layer_norm(x, T::lit(1e-5));
        let s = g.mul_row(n, p.var(self.gain));
        g.add_row(s, p.var(self.bias))
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub head_dim: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize, heads: usize, head_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let inner = heads * head_dim;
        Self {
            q: Linear::new(store, &format!("{name}.q"), width, inner, rng),
            k: Linear::new(store, &format!("{name}.k"), width, inner, rng),
            v: Linear::new(store, &format!("{name}.v"), width, inner, rng),
            out: Linear::new(store, &format!("{name}.out"), inner, width, rng),
            heads,
            head_dim,
        }
    }

    /// Scaled dot-product attention of `queries` over `keys_values`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, queries: Var, keys_values: Var) -> Var {
        let q = self.q.forward(g, p, queries);
        let k = self.k.forward(g, p, keys_values);
        let v = self.v.forward(g, p, keys_values);
        let scale = T::lit(1.0 / (self.head_dim as f64).sqrt());
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * self.head_dim, self.head_dim);
            let kh = g.slice_cols(k, h * self.head_dim, self.head_dim);
            let vh = g.slice_cols(v, h * self.head_dim, self.head_dim);
            let scores = g.matmul_bt(qh, kh);
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores);
            heads.push(g.matmul(attn, vh));
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        self.out.forward(g, p, cat)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), width, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, width, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let h = self.up.forward(g, p, x);
        let h = g.silu(h);
        self.down.forward(g, p, h)
    }
}

/// Pre-norm self-attention block.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_ff: LayerNorm,
    pub ff: FeedForward,
}

impl EncoderLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize, heads: usize, head_dim: usize, ff: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), width),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), width, heads, head_dim, rng),
            norm_ff: LayerNorm::new(store, &format!("{name}.norm_ff"), width),
            ff: FeedForward::new(store, &format!("{name}.ff"), width, ff, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let n = self.norm_attn.forward(g, p, x);
        let a = self.attn.forward(g, p, n, n);
        let x = g.add(x, a);
        let n = self.norm_ff.forward(g, p, x);
        let f = self.ff.forward(g, p, n);
        g.add(x, f)
    }
}

/// Query block: self-attention among queries, cross-attention to the encoded
/// input, feed-forward.
#[derive(Debug, Clone)]
pub struct QueryLayer {
    pub norm_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub norm_cross: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm_ff: LayerNorm,
    pub ff: FeedForward,
}

impl QueryLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize, heads: usize, head_dim: usize, ff: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            norm_self: LayerNorm::new(store, &format!("{name}.norm_self"), width),
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), width, heads, head_dim, rng),
            norm_cross: LayerNorm::new(store, &format!("{name}.norm_cross"), width),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), width, heads, head_dim, rng),
            norm_ff: LayerNorm::new(store, &format!("{name}.norm_ff"), width),
            ff: FeedForward::new(store, &format!("{name}.ff"), width, ff, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, q: Var, memory: Var) -> Var {
        let n = self.norm_self.forward(g, p, q);
        let a = self.self_attn.forward(g, p, n, n);
        let q = g.add(q, a);
        let n = self.norm_cross.forward(g, p, q);
        let c = self.cross_attn.forward(g, p, n, memory);
        let q = g.add(q, c);
        let n = self.norm_ff.forward(g, p, q);
        let f = self.ff.forward(g, p, n);
        g.add(q, f)
    }
}

/// Adam with optional global-norm gradient clipping.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            step: 0,
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
        }
    }

    pub fn with_clip(mut self, norm: f64) -> Self {
        self.clip_norm = Some(norm);
        self
    }

    /// Clears both moment estimates and the step count.
    pub fn reset(&mut self) {
        self.step = 0;
        for t in self.m.iter_mut().chain(self.v.iter_mut()) {
            t.data.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) {
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let mut factor = 1.0;
        if let Some(max) = self.clip_norm {
            let norm = grads.iter().flat_map(|g| g.data.iter()).map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
            if norm > max {
                factor = max / norm;
            }
        }
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let (tb1, tb2, tf) = (T::lit(b1), T::lit(b2), T::lit(factor));
        let (step_size, eps) = (T::lit(lr / c1), T::lit(self.eps));
        let c2s = T::lit(c2.sqrt());
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.data.len() {
                let gi = g.data[i] * tf;
                m.data[i] = tb1 * m.data[i] + (T::one() - tb1) * gi;
                v.data[i] = tb2 * v.data[i] + (T::one() - tb2) * gi * gi;
                let denom = v.data[i].sqrt() / c2s + eps;
                p.data[i] -= step_size * m.data[i] / denom;
            }
        }
    }
}
