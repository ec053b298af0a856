//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation applied to its nodes. Parameters are
//! borrowed rather than copied and are keyed by address, so the same weight
//! matrix bound twice maps to a single node. After [`Graph::backward`] the
//! returned [`Grads`] can be queried by parameter reference.
//!
//! Every value is a 2-D matrix. Batched sequences are handled as one
//! `batch × features` matrix per time step.

use std::borrow::Cow;
use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

type ParamKey = *const Array2<f64>;

/// Cached intermediates of a fused GRU step.
struct GruCache {
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    gh_n: Array2<f64>,
}

/// Geometry of a strided window gather (1-D convolution im2col).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub t_in: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub t_out: usize,
}

impl WindowSpec {
    /// "Same" padding: output length `ceil(t_in / stride)`, total padding split
    /// with the smaller half on the left.
    pub fn same(t_in: usize, channels: usize, kernel: usize, stride: usize) -> Self {
        let t_out = t_in.div_ceil(stride);
        let needed = ((t_out - 1) * stride + kernel).saturating_sub(t_in);
        WindowSpec {
            t_in,
            channels,
            kernel,
            stride,
            pad_left: needed / 2,
            t_out,
        }
    }

    fn source_step(&self, p: usize, k: usize) -> Option<usize> {
        let pos = (p * self.stride + k) as isize - self.pad_left as isize;
        (pos >= 0 && (pos as usize) < self.t_in).then_some(pos as usize)
    }
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Exp(usize),
    Square(usize),
    Sqrt(usize),
    ClampMin(usize, f64),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    SelectRows(Vec<bool>, usize, usize),
    SumCols(usize),
    Mean(usize),
    LogSoftmax(usize),
    Pick(usize, Vec<usize>),
    Reshape(usize),
    Windows(usize, WindowSpec),
    Gru([usize; 6], Box<GruCache>),
}

struct Node<'p> {
    value: Cow<'p, Array2<f64>>,
    op: Op,
}

/// A tape of matrix operations.
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    params: HashMap<ParamKey, usize>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::with_capacity(1024),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Array2<f64>>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn owned(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.push(Cow::Owned(value), op)
    }

    /// Binds a trainable parameter. Binding the same array twice yields the
    /// same variable.
    pub fn param(&mut self, value: &'p Array2<f64>) -> Var {
        let key = value as ParamKey;
        if let Some(&idx) = self.params.get(&key) {
            return Var(idx);
        }
        let v = self.push(Cow::Borrowed(value), Op::Leaf);
        self.params.insert(key, v.0);
        v
    }

    /// A leaf that is not tracked as a parameter.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.owned(value, Op::Leaf)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Array2::zeros((rows, cols)))
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    fn val(&self, v: Var) -> ArrayView2<'_, f64> {
        self.nodes[v.0].value.view()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.val(a).dot(&self.val(b));
        self.owned(out, Op::MatMul(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.val(a).dim(), self.val(b).dim(), "add shape mismatch");
        let out = &self.val(a) + &self.val(b);
        self.owned(out, Op::Add(a.0, b.0))
    }

    /// `a + b` where `b` is a single row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.val(b).nrows(), 1, "add_row expects a row vector");
        let out = &self.val(a) + &self.val(b);
        self.owned(out, Op::AddRow(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.val(a).dim(), self.val(b).dim(), "sub shape mismatch");
        let out = &self.val(a) - &self.val(b);
        self.owned(out, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.val(a).dim(), self.val(b).dim(), "mul shape mismatch");
        let out = &self.val(a) * &self.val(b);
        self.owned(out, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.val(a).mapv(|v| v * c);
        self.owned(out, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.val(a).mapv(|v| v + c);
        self.owned(out, Op::AddScalar(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.val(a).mapv(f64::tanh);
        self.owned(out, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.val(a).mapv(sigmoid);
        self.owned(out, Op::Sigmoid(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.val(a).mapv(|v| v.max(0.0));
        self.owned(out, Op::Relu(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.val(a).mapv(f64::exp);
        self.owned(out, Op::Exp(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.val(a).mapv(|v| v * v);
        self.owned(out, Op::Square(a.0))
    }

    /// Elementwise square root. The derivative at exactly zero is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.val(a).mapv(f64::sqrt);
        self.owned(out, Op::Sqrt(a.0))
    }

    /// `max(a, floor)`; no gradient flows through clamped entries.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let out = self.val(a).mapv(|v| v.max(floor));
        self.owned(out, Op::ClampMin(a.0, floor))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.val(*p)).collect();
        let out = concatenate(Axis(1), &views).expect("concat_cols row mismatch");
        self.owned(out, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.val(a).slice(s![.., start..start + len]).to_owned();
        self.owned(out, Op::SliceCols(a.0, start))
    }

    /// Row `i` of the result is row `i` of `a` where `mask[i]`, else of `b`.
    /// Rows are copied, never blended.
    pub fn select_rows(&mut self, mask: &[bool], a: Var, b: Var) -> Var {
        let (va, vb) = (self.val(a), self.val(b));
        assert_eq!(va.dim(), vb.dim(), "select_rows shape mismatch");
        assert_eq!(mask.len(), va.nrows(), "select_rows mask length");
        let mut out = vb.to_owned();
        for (i, &keep) in mask.iter().enumerate() {
            if keep {
                out.row_mut(i).assign(&va.row(i));
            }
        }
        self.owned(out, Op::SelectRows(mask.to_vec(), a.0, b.0))
    }

    /// Row sums as a column vector.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let out = self.val(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.owned(out, Op::SumCols(a.0))
    }

    /// Mean of all entries as a `1 × 1` node.
    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.val(a).mean().unwrap_or(0.0);
        self.owned(Array2::from_elem((1, 1), m), Op::Mean(a.0))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut out = self.val(a).to_owned();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        self.owned(out, Op::LogSoftmax(a.0))
    }

    /// Column `cols[i]` of row `i`, as a column vector.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Var {
        let va = self.val(a);
        assert_eq!(cols.len(), va.nrows(), "pick index count");
        let out = Array2::from_shape_fn((cols.len(), 1), |(i, _)| va[[i, cols[i]]]);
        self.owned(out, Op::Pick(a.0, cols.to_vec()))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let out = self
            .val(a)
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((rows, cols))
            .expect("reshape size mismatch");
        self.owned(out, Op::Reshape(a.0))
    }

    /// Gathers strided windows from a time-major `batch × (t_in·channels)`
    /// matrix into a `(batch·t_out) × (kernel·channels)` matrix, zero-padded.
    pub fn windows(&mut self, a: Var, spec: WindowSpec) -> Var {
        let src = self.val(a);
        let c = spec.channels;
        assert_eq!(src.ncols(), spec.t_in * c, "windows input width");
        let batch = src.nrows();
        let mut out = Array2::zeros((batch * spec.t_out, spec.kernel * c));
        for b in 0..batch {
            for p in 0..spec.t_out {
                let row = b * spec.t_out + p;
                for k in 0..spec.kernel {
                    if let Some(t) = spec.source_step(p, k) {
                        out.slice_mut(s![row, k * c..(k + 1) * c])
                            .assign(&src.slice(s![b, t * c..(t + 1) * c]));
                    }
                }
            }
        }
        self.owned(out, Op::Windows(a.0, spec))
    }

    /// One GRU step:
    /// `r = σ(x Wxr + bxr + h Whr + bhr)`, `u = σ(x Wxu + bxu + h Whu + bhu)`,
    /// `n = tanh(x Wxn + bxn + r ⊙ (h Whn + bhn))`, `h' = (1 − u) ⊙ n + u ⊙ h`.
    ///
    /// Weight columns are laid out as `[reset | update | candidate]`.
    pub fn gru(&mut self, x: Var, h: Var, wx: Var, wh: Var, bx: Var, bh: Var) -> Var {
        let hidden = self.val(h).ncols();
        let gx = self.val(x).dot(&self.val(wx)) + self.val(bx);
        let gh = self.val(h).dot(&self.val(wh)) + self.val(bh);
        let mut r = gx.slice(s![.., 0..hidden]).to_owned();
        r += &gh.slice(s![.., 0..hidden]);
        r.mapv_inplace(sigmoid);
        let mut z = gx.slice(s![.., hidden..2 * hidden]).to_owned();
        z += &gh.slice(s![.., hidden..2 * hidden]);
        z.mapv_inplace(sigmoid);
        let gh_n = gh.slice(s![.., 2 * hidden..]).to_owned();
        let mut n = &r * &gh_n;
        n += &gx.slice(s![.., 2 * hidden..]);
        n.mapv_inplace(f64::tanh);
        let hv = self.val(h);
        let mut out = Array2::zeros(n.raw_dim());
        Zip::from(&mut out)
            .and(&n)
            .and(&z)
            .and(&hv)
            .for_each(|o, &n, &z, &h| *o = (1.0 - z) * n + z * h);
        let cache = Box::new(GruCache { r, z, n, gh_n });
        self.owned(out, Op::Gru([x.0, h.0, wx.0, wh.0, bx.0, bh.0], cache))
    }

    /// Reverse sweep from a scalar (`1 × 1`) node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward expects a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Grads {
            nodes: grads,
            params: self.params.clone(),
        }
    }

    fn propagate(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[idx];
        let val = |i: usize| self.nodes[i].value.view();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                accum(grads, *a, g.dot(&val(*b).t()));
                accum(grads, *b, val(*a).t().dot(g));
            }
            Op::Add(a, b) => {
                accum(grads, *a, g.clone());
                accum(grads, *b, g.clone());
            }
            Op::AddRow(a, b) => {
                accum(grads, *a, g.clone());
                accum(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Sub(a, b) => {
                accum(grads, *a, g.clone());
                accum(grads, *b, g.mapv(|v| -v));
            }
            Op::Mul(a, b) => {
                accum(grads, *a, g * &val(*b));
                accum(grads, *b, g * &val(*a));
            }
            Op::Scale(a, c) => accum(grads, *a, g.mapv(|v| v * c)),
            Op::AddScalar(a) => accum(grads, *a, g.clone()),
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&node.value.view())
                    .for_each(|d, &y| *d *= 1.0 - y * y);
                accum(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&node.value.view())
                    .for_each(|d, &y| *d *= y * (1.0 - y));
                accum(grads, *a, d);
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&val(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                accum(grads, *a, d);
            }
            Op::Exp(a) => accum(grads, *a, g * &node.value.view()),
            Op::Square(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&val(*a)).for_each(|d, &x| *d *= 2.0 * x);
                accum(grads, *a, d);
            }
            Op::Sqrt(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&node.value.view()).for_each(|d, &y| {
                    *d = if y > 0.0 { *d * 0.5 / y } else { 0.0 };
                });
                accum(grads, *a, d);
            }
            Op::ClampMin(a, floor) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&val(*a)).for_each(|d, &x| {
                    if x < *floor {
                        *d = 0.0
                    }
                });
                accum(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.nodes[p].value.ncols();
                    accum(grads, p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::SliceCols(a, start) => {
                let src = val(*a);
                let mut d = Array2::zeros(src.raw_dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                accum(grads, *a, d);
            }
            Op::SelectRows(mask, a, b) => {
                let mut ga = g.clone();
                let mut gb = g.clone();
                for (i, &keep) in mask.iter().enumerate() {
                    if keep {
                        gb.row_mut(i).fill(0.0);
                    } else {
                        ga.row_mut(i).fill(0.0);
                    }
                }
                accum(grads, *a, ga);
                accum(grads, *b, gb);
            }
            Op::SumCols(a) => {
                let src = val(*a);
                let d = Array2::from_shape_fn(src.raw_dim(), |(i, _)| g[[i, 0]]);
                accum(grads, *a, d);
            }
            Op::Mean(a) => {
                let src = val(*a);
                let n = src.len().max(1) as f64;
                accum(grads, *a, Array2::from_elem(src.raw_dim(), g[[0, 0]] / n));
            }
            Op::LogSoftmax(a) => {
                let mut d = g.clone();
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(node.value.rows()) {
                    let total: f64 = drow.sum();
                    Zip::from(&mut drow)
                        .and(&yrow)
                        .for_each(|d, &y| *d -= y.exp() * total);
                }
                accum(grads, *a, d);
            }
            Op::Pick(a, cols) => {
                let src = val(*a);
                let mut d = Array2::zeros(src.raw_dim());
                for (i, &c) in cols.iter().enumerate() {
                    d[[i, c]] = g[[i, 0]];
                }
                accum(grads, *a, d);
            }
            Op::Reshape(a) => {
                let dim = self.nodes[*a].value.raw_dim();
                let d = g
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(dim)
                    .expect("reshape grad");
                accum(grads, *a, d);
            }
            Op::Windows(a, spec) => {
                let src = val(*a);
                let c = spec.channels;
                let batch = src.nrows();
                let mut d = Array2::zeros(src.raw_dim());
                for b in 0..batch {
                    for p in 0..spec.t_out {
                        let row = b * spec.t_out + p;
                        for k in 0..spec.kernel {
                            if let Some(t) = spec.source_step(p, k) {
                                let mut dst = d.slice_mut(s![b, t * c..(t + 1) * c]);
                                dst += &g.slice(s![row, k * c..(k + 1) * c]);
                            }
                        }
                    }
                }
                accum(grads, *a, d);
            }
            Op::Gru([x, h, wx, wh, bx, bh], cache) => {
                let GruCache { r, z, n, gh_n } = cache.as_ref();
                let hv = val(*h);
                let hidden = hv.ncols();
                let batch = hv.nrows();
                let mut dgx = Array2::zeros((batch, 3 * hidden));
                let mut dgh = Array2::zeros((batch, 3 * hidden));
                let mut dh_direct = Array2::zeros((batch, hidden));
                for i in 0..batch {
                    for j in 0..hidden {
                        let dout = g[[i, j]];
                        let (rv, zv, nv, ghn) = (r[[i, j]], z[[i, j]], n[[i, j]], gh_n[[i, j]]);
                        let dn = dout * (1.0 - zv) * (1.0 - nv * nv);
                        let dz = dout * (hv[[i, j]] - nv) * zv * (1.0 - zv);
                        let dr = dn * ghn * rv * (1.0 - rv);
                        dgx[[i, j]] = dr;
                        dgx[[i, hidden + j]] = dz;
                        dgx[[i, 2 * hidden + j]] = dn;
                        dgh[[i, j]] = dr;
                        dgh[[i, hidden + j]] = dz;
                        dgh[[i, 2 * hidden + j]] = dn * rv;
                        dh_direct[[i, j]] = dout * zv;
                    }
                }
                accum(grads, *x, dgx.dot(&val(*wx).t()));
                accum(grads, *wx, val(*x).t().dot(&dgx));
                accum(grads, *bx, dgx.sum_axis(Axis(0)).insert_axis(Axis(0)));
                dh_direct += &dgh.dot(&val(*wh).t());
                accum(grads, *h, dh_direct);
                accum(grads, *wh, hv.t().dot(&dgh));
                accum(grads, *bh, dgh.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
        }
    }
}

fn accum(grads: &mut [Option<Array2<f64>>], idx: usize, g: Array2<f64>) {
    match &mut grads[idx] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Grads {
    nodes: Vec<Option<Array2<f64>>>,
    params: HashMap<ParamKey, usize>,
}

impl Grads {
    pub fn var(&self, v: Var) -> Option<&Array2<f64>> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, p: &Array2<f64>) -> Option<&Array2<f64>> {
        let idx = *self.params.get(&(p as ParamKey))?;
        self.nodes.get(idx).and_then(Option::as_ref)
    }

    /// Gradients aligned with `params`; parameters that did not take part in
    /// the computation get zeros.
    pub fn collect(&self, params: &[&Array2<f64>]) -> Vec<Array2<f64>> {
        params
            .iter()
            .map(|p| {
                self.param(p)
                    .cloned()
                    .unwrap_or_else(|| Array2::zeros(p.raw_dim()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    /// Checks d(build)/d(input_k) for every input against central differences.
    fn check<F>(inputs: Vec<Array2<f64>>, build: F)
    where
        F: Fn(&mut Graph<'_>, &[Var]) -> Var,
    {
        let analytic = {
            let mut g = Graph::new();
            let vars: Vec<_> = inputs.iter().map(|a| g.param(a)).collect();
            let out = build(&mut g, &vars);
            let probe = g.mean(out);
            let grads = g.backward(probe);
            grads.collect(&inputs.iter().collect::<Vec<_>>())
        };
        let eval = |inputs: &[Array2<f64>]| {
            let mut g = Graph::new();
            let vars: Vec<_> = inputs.iter().map(|a| g.param(a)).collect();
            let out = build(&mut g, &vars);
            g.value(out).mean().unwrap()
        };
        let eps = 1e-6;
        for (k, input) in inputs.iter().enumerate() {
            for idx in 0..input.len() {
                let mut plus = inputs.clone();
                let mut minus = inputs.clone();
                plus[k].as_slice_mut().unwrap()[idx] += eps;
                minus[k].as_slice_mut().unwrap()[idx] -= eps;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                let a = analytic[k].as_slice().unwrap()[idx];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(err < 1e-5, "input {k}[{idx}]: analytic {a} numeric {numeric}");
            }
        }
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(3, 4, &mut rng);
        let b = random(3, 4, &mut rng);
        check(vec![a.clone(), b.clone()], |g, v| {
            let s = g.mul(v[0], v[1]);
            let t = g.tanh(s);
            let u = g.sigmoid(v[1]);
            let w = g.sub(t, u);
            let e = g.exp(w);
            let q = g.square(e);
            let c = g.scale(q, 0.3);
            let r = g.add_scalar(c, 2.0);
            g.add(r, v[0])
        });
        check(vec![a.mapv(|v| v.abs() + 0.1)], |g, v| g.sqrt(v[0]));
        check(vec![a.clone()], |g, v| {
            let r = g.relu(v[0]);
            g.clamp_min(r, 0.05)
        });
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(4, 3, &mut rng);
        let b = random(3, 5, &mut rng);
        let row = random(1, 5, &mut rng);
        check(vec![a.clone(), b.clone(), row], |g, v| {
            let m = g.matmul(v[0], v[1]);
            let m = g.add_row(m, v[2]);
            let left = g.slice_cols(m, 1, 3);
            let cat = g.concat_cols(&[left, v[0]]);
            let ls = g.log_softmax(cat);
            let p = g.pick(ls, &[0, 5, 2, 1]);
            let mean = g.mean(m);
            let sc = g.sum_cols(ls);
            let sel = g.select_rows(&[true, false, true, false], sc, p);
            let both = g.reshape(sel, 2, 2);
            let prod = g.matmul(both, both);
            let cols = g.sum_cols(prod);
            let mm = g.matmul(cols, mean);
            g.square(mm)
        });
    }

    #[test]
    fn window_gather_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = WindowSpec::same(7, 2, 3, 3);
        assert_eq!(spec.t_out, 3);
        let a = random(2, 14, &mut rng);
        let w = random(6, 4, &mut rng);
        check(vec![a, w], move |g, v| {
            let win = g.windows(v[0], spec);
            let y = g.matmul(win, v[1]);
            let y = g.tanh(y);
            g.reshape(y, 2, 12)
        });
    }

    #[test]
    fn gru_step_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (batch, input, hidden) = (3, 2, 4);
        check(
            vec![
                random(batch, input, &mut rng),
                random(batch, hidden, &mut rng),
                random(input, 3 * hidden, &mut rng),
                random(hidden, 3 * hidden, &mut rng),
                random(1, 3 * hidden, &mut rng),
                random(1, 3 * hidden, &mut rng),
            ],
            |g, v| {
                let h1 = g.gru(v[0], v[1], v[2], v[3], v[4], v[5]);
                g.gru(v[0], h1, v[2], v[3], v[4], v[5])
            },
        );
    }

    #[test]
    fn same_padding_geometry() {
        let s40 = WindowSpec::same(40, 1, 3, 3);
        assert_eq!((s40.t_out, s40.pad_left), (14, 1));
        let s14 = WindowSpec::same(14, 32, 3, 3);
        assert_eq!((s14.t_out, s14.pad_left), (5, 0));
        let s5 = WindowSpec::same(5, 32, 3, 3);
        assert_eq!((s5.t_out, s5.pad_left), (2, 0));
    }

    #[test]
    fn params_bind_once_and_report_grads() {
        let w = array![[1.0, 2.0], [3.0, 4.0]];
        let mut g = Graph::new();
        let a = g.param(&w);
        let b = g.param(&w);
        assert_eq!(a, b);
        let m = g.mean(a);
        let grads = g.backward(m);
        assert_eq!(grads.param(&w).unwrap(), &Array2::from_elem((2, 2), 0.25));
    }

    #[test]
    fn select_rows_copies_bitwise() {
        let a = array![[-0.0, 1.5], [2.0, 3.0]];
        let b = array![[9.0, 9.0], [8.0, 8.0]];
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()), g.constant(b));
        let out = g.select_rows(&[true, false], va, vb);
        assert_eq!(g.value(out)[[0, 0]].to_bits(), (-0.0f64).to_bits());
        assert_eq!(g.value(out)[[1, 0]], 8.0);
    }
}
