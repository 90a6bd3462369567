use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Layout of the fused attention kernels: node tensors are
/// `[batch, nodes, heads, head_dim]`, edge tensors
/// `[batch, nodes, nodes, heads, head_dim]` and attention maps
/// `[batch, nodes, nodes, heads]`, all row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnDims {
    pub batch: usize,
    pub nodes: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl AttnDims {
    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    fn node_numel(&self) -> usize {
        self.batch * self.nodes * self.width()
    }

    fn edge_numel(&self) -> usize {
        self.batch * self.nodes * self.nodes * self.width()
    }

    fn map_numel(&self) -> usize {
        self.batch * self.nodes * self.nodes * self.heads
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Sum(Var),
    SumAxis { x: Var, outer: usize, len: usize, inner: usize },
    Exp(Var),
    Log(Var),
    Log1p(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Softmax { x: Var, outer: usize, len: usize, inner: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    ColumnNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64>, batch_stats: bool },
    Concat { parts: Vec<Var>, outer: usize, widths: Vec<usize>, inner: usize },
    Slice { x: Var, outer: usize, len_in: usize, start: usize, len: usize, inner: usize },
    Reshape(Var),
    HeadLinear { x: Var, w: Var, heads: usize, head_dim: usize },
    EdgeScores { q: Var, k: Var, e: Var, dims: AttnDims, scale: f64 },
    Attend { att: Var, v: Var, dims: AttnDims },
    BatchedMatVec { a: Var, x: Var, batch: usize, rows: usize, cols: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every leaf that requires them.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient buffer for a leaf, `None` if the leaf does not influence the
    /// loss or does not require gradients.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Like [`get`](Self::get) but returns zeros of `len` when absent.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

/// Record of forward operations. Nodes are appended in execution order, so
/// the node list is always topologically sorted.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, record: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, record, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn row_op(&mut self, op: &'static str, x: Var, r: Var, f: impl Fn(f64, f64) -> f64, record: Op) -> Result<Var> {
        let width = *self.shape(x).last().unwrap_or(&0);
        if self.shape(r) != [width] {
            return Err(shape_err(
                op,
                format!("row vector {:?} vs last axis of {:?}", self.shape(r), self.shape(x)),
            ));
        }
        let row = self.data(r);
        let data = self
            .data(x)
            .chunks_exact(width.max(1))
            .flat_map(|chunk| chunk.iter().zip(row).map(|(&v, &b)| f(v, b)))
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(value, record, &[x, r]))
    }

    /// `x[.., f] + bias[f]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.row_op("add_row", x, bias, |v, b| v + b, Op::AddRow(x, bias))
    }

    /// `x[.., f] * gain[f]`.
    pub fn mul_row(&mut self, x: Var, gain: Var) -> Result<Var> {
        self.row_op("mul_row", x, gain, |v, g| v * g, Op::MulRow(x, gain))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, record: Op) -> Var {
        let data = self.data(x).iter().map(|&v| f(v)).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("same length");
        self.push(value, record, &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.map(x, f64::ln, Op::Log(x))
    }

    pub fn log1p(&mut self, x: Var) -> Var {
        self.map(x, f64::ln_1p, Op::Log1p(x))
    }

    /// `x` for `x >= 0`, `slope * x` otherwise.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.map(x, |v| if v >= 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (da, db) = (self.data(a), self.data(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = da[i * k + p];
                for (o, &bv) in row.iter_mut().zip(&db[p * n..(p + 1) * n]) {
                    *o += av * bv;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b, m, k, n }, &[a, b]))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Reduces `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err("sum_axis", format!("axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let d = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        let mut new_shape = shape;
        new_shape.remove(axis);
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        let value = Tensor::new(new_shape, out)?;
        Ok(self.push(value, Op::SumAxis { x, outer, len, inner }, &[x]))
    }

    /// Max-stabilized softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err("softmax", format!("axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        if len == 0 {
            return Err(Error::EmptyAxis { op: "softmax" });
        }
        let d = self.data(x);
        let mut out = vec![0.0; d.len()];
        let mut scratch = vec![0.0; len];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| d[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for (l, s) in scratch.iter_mut().enumerate() {
                    *s = (d[at(l)] - max).exp();
                    total += *s;
                }
                for (l, s) in scratch.iter().enumerate() {
                    out[at(l)] = s / total;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Softmax { x, outer, len, inner }, &[x]))
    }

    /// Normalizes each row over the last axis, then applies `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let width = *self.shape(x).last().unwrap_or(&0);
        if width == 0 {
            return Err(Error::EmptyAxis { op: "layer_norm" });
        }
        if self.shape(gain) != [width] || self.shape(bias) != [width] {
            return Err(shape_err("layer_norm", "gain and bias must match the last axis"));
        }
        let d = self.data(x);
        let rows = d.len() / width;
        let mut xhat = vec![0.0; d.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &d[r * width..(r + 1) * width];
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let s = 1.0 / (var + eps).sqrt();
            rstd[r] = s;
            for (o, &v) in xhat[r * width..(r + 1) * width].iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
        }
        let (g, b) = (self.data(gain), self.data(bias));
        let out = xhat
            .chunks_exact(width)
            .flat_map(|row| row.iter().zip(g).zip(b).map(|((&h, &g), &b)| g * h + b))
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias]))
    }

    /// Per-column normalization of a `[rows, features]` tensor.
    ///
    /// With `stats = None` the statistics are the (biased) batch mean and
    /// variance of each column, and the returned pair holds those batch
    /// means and *unbiased* variances for running-average updates. With
    /// `stats = Some((mean, var))` the given statistics are used as
    /// constants, which makes the op a per-feature affine map.
    pub fn column_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
        stats: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(shape_err("column_norm", format!("expected [rows, features], got {shape:?}")));
        }
        let (rows, width) = (shape[0], shape[1]);
        if self.shape(gain) != [width] || self.shape(bias) != [width] {
            return Err(shape_err("column_norm", "gain and bias must match the feature axis"));
        }
        let d = self.data(x);
        let (mean, var, unbiased) = match stats {
            Some((m, v)) => {
                if m.len() != width || v.len() != width {
                    return Err(shape_err("column_norm", "running statistics width"));
                }
                (m.to_vec(), v.to_vec(), v.to_vec())
            }
            None => {
                if rows == 0 {
                    return Err(Error::EmptyAxis { op: "column_norm" });
                }
                let mut mean = vec![0.0; width];
                for row in d.chunks_exact(width) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut ss = vec![0.0; width];
                for row in d.chunks_exact(width) {
                    for ((s, &v), &m) in ss.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                let var = ss.iter().map(|s| s / rows as f64).collect();
                let unbiased = ss.iter().map(|s| s / (rows.max(2) - 1) as f64).collect();
                (mean, var, unbiased)
            }
        };
        let rstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; d.len()];
        for (orow, row) in xhat.chunks_exact_mut(width).zip(d.chunks_exact(width)) {
            for f in 0..width {
                orow[f] = (row[f] - mean[f]) * rstd[f];
            }
        }
        let (g, b) = (self.data(gain), self.data(bias));
        let out = xhat
            .chunks_exact(width)
            .flat_map(|row| row.iter().zip(g).zip(b).map(|((&h, &g), &b)| g * h + b))
            .collect();
        let value = Tensor::new(shape, out)?;
        let batch_stats = stats.is_none();
        let var = self.push(
            value,
            Op::ColumnNorm { x, gain, bias, xhat, rstd, batch_stats },
            &[x, gain, bias],
        );
        Ok((var, mean, unbiased))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {axis} of {base:?}")));
        }
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(k, (a, b))| k == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            widths.push(s[axis]);
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[o * w * inner..(o + 1) * w * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Concat { parts: parts.to_vec(), outer, widths, inner },
            parts,
        ))
    }

    /// `x[.., start..start + len, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(shape_err("slice", format!("{start}..{} on axis {axis} of {shape:?}", start + len)));
        }
        let (outer, len_in, inner) = split_axis(&shape, axis);
        let d = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&d[(o * len_in + start) * inner..(o * len_in + start + len) * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let value = Tensor::new(new_shape, out)?;
        Ok(self.push(value, Op::Slice { x, outer, len_in, start, len, inner }, &[x]))
    }

    /// Splits `x` along `axis` into consecutive pieces of the given sizes.
    pub fn split(&mut self, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let v = self.slice(x, axis, start, len);
                start += len;
                v
            })
            .collect()
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Per-head linear map: with `x` viewed as `[rows, heads, head_dim]`
    /// and `w` as `[heads, head_dim, head_dim]`,
    /// `y[r, h, a] = sum_b w[h, a, b] x[r, h, b]`.
    pub fn head_linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let ws = self.shape(w);
        if ws.len() != 3 || ws[1] != ws[2] {
            return Err(shape_err("head_linear", format!("weights {ws:?}")));
        }
        let (heads, head_dim) = (ws[0], ws[1]);
        let width = heads * head_dim;
        if *self.shape(x).last().unwrap_or(&0) != width {
            return Err(shape_err(
                "head_linear",
                format!("input {:?} vs {heads} heads of width {head_dim}", self.shape(x)),
            ));
        }
        let (dx, dw) = (self.data(x), self.data(w));
        let mut out = vec![0.0; dx.len()];
        for (orow, row) in out.chunks_exact_mut(width).zip(dx.chunks_exact(width)) {
            for h in 0..heads {
                let xs = &row[h * head_dim..(h + 1) * head_dim];
                let wm = &dw[h * head_dim * head_dim..(h + 1) * head_dim * head_dim];
                for a in 0..head_dim {
                    orow[h * head_dim + a] = wm[a * head_dim..(a + 1) * head_dim]
                        .iter()
                        .zip(xs)
                        .map(|(w, x)| w * x)
                        .sum();
                }
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, Op::HeadLinear { x, w, heads, head_dim }, &[x, w]))
    }

    fn check_numel(&self, op: &'static str, v: Var, numel: usize, what: &str) -> Result<()> {
        if self.value(v).numel() != numel {
            return Err(shape_err(
                op,
                format!("{what} has {} elements, layout needs {numel}", self.value(v).numel()),
            ));
        }
        Ok(())
    }

    /// Edge-aware attention logits
    /// `s[b, i, j, h] = scale * sum_a q[b, i, h, a] (k[b, j, h, a] + e[b, i, j, h, a])`,
    /// returned with shape `[batch, nodes, nodes, heads]`.
    pub fn edge_scores(&mut self, q: Var, k: Var, e: Var, dims: AttnDims, scale: f64) -> Result<Var> {
        self.check_numel("edge_scores", q, dims.node_numel(), "query")?;
        self.check_numel("edge_scores", k, dims.node_numel(), "key")?;
        self.check_numel("edge_scores", e, dims.edge_numel(), "edge tensor")?;
        let AttnDims { batch, nodes: n, heads, head_dim: dh } = dims;
        let w = dims.width();
        let (dq, dk, de) = (self.data(q), self.data(k), self.data(e));
        let mut out = vec![0.0; dims.map_numel()];
        for b in 0..batch {
            for i in 0..n {
                let qi = &dq[(b * n + i) * w..(b * n + i + 1) * w];
                for j in 0..n {
                    let kj = &dk[(b * n + j) * w..(b * n + j + 1) * w];
                    let eij = &de[((b * n + i) * n + j) * w..((b * n + i) * n + j + 1) * w];
                    let o = &mut out[((b * n + i) * n + j) * heads..((b * n + i) * n + j + 1) * heads];
                    for h in 0..heads {
                        let mut s = 0.0;
                        for a in h * dh..(h + 1) * dh {
                            s += qi[a] * (kj[a] + eij[a]);
                        }
                        o[h] = scale * s;
                    }
                }
            }
        }
        let value = Tensor::new(vec![batch, n, n, heads], out)?;
        Ok(self.push(value, Op::EdgeScores { q, k, e, dims, scale }, &[q, k, e]))
    }

    /// `out[b, i, h, a] = sum_j att[b, i, j, h] v[b, j, h, a]`, shape
    /// `[batch * nodes, heads * head_dim]`.
    pub fn attend(&mut self, att: Var, v: Var, dims: AttnDims) -> Result<Var> {
        self.check_numel("attend", att, dims.map_numel(), "attention map")?;
        self.check_numel("attend", v, dims.node_numel(), "values")?;
        let AttnDims { batch, nodes: n, heads, head_dim: dh } = dims;
        let w = dims.width();
        let (da, dv) = (self.data(att), self.data(v));
        let mut out = vec![0.0; dims.node_numel()];
        for b in 0..batch {
            for i in 0..n {
                let o = &mut out[(b * n + i) * w..(b * n + i + 1) * w];
                for j in 0..n {
                    let aij = &da[((b * n + i) * n + j) * heads..((b * n + i) * n + j + 1) * heads];
                    let vj = &dv[(b * n + j) * w..(b * n + j + 1) * w];
                    for h in 0..heads {
                        for a in h * dh..(h + 1) * dh {
                            o[a] += aij[h] * vj[a];
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![batch * n, w], out)?;
        Ok(self.push(value, Op::Attend { att, v, dims }, &[att, v]))
    }

    /// `y[b, r] = sum_c a[b, r, c] x[b, c]` for `a: [batch, rows, cols]`,
    /// `x: [batch, cols]`.
    pub fn batched_matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (sa, sx) = (self.shape(a).to_vec(), self.shape(x).to_vec());
        if sa.len() != 3 || sx.len() != 2 || sa[0] != sx[0] || sa[2] != sx[1] {
            return Err(shape_err("batched_matvec", format!("{sa:?} x {sx:?}")));
        }
        let (batch, rows, cols) = (sa[0], sa[1], sa[2]);
        let (dm, dx) = (self.data(a), self.data(x));
        let mut out = vec![0.0; batch * rows];
        for b in 0..batch {
            let xb = &dx[b * cols..(b + 1) * cols];
            for r in 0..rows {
                let row = &dm[(b * rows + r) * cols..(b * rows + r + 1) * cols];
                out[b * rows + r] = row.iter().zip(xb).map(|(m, x)| m * x).sum();
            }
        }
        let value = Tensor::new(vec![batch, rows], out)?;
        Ok(self.push(value, Op::BatchedMatVec { a, x, batch, rows, cols }, &[a, x]))
    }

    /// Reverse pass from a scalar `loss`. Gradients accumulate across
    /// fan-out; the reduction order is fixed by the node order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::NotAScalar(format!("node #{} (not on this tape)", loss.0)))?;
        if node.value.numel() != 1 {
            return Err(Error::NotAScalar(format!(
                "node #{} with shape {:?}",
                loss.0,
                node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if node.requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(idx, &g, &mut grads);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Some(g) = &grads[idx] {
                if matches!(node.op, Op::Leaf) && g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient { node: idx });
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = nodes[idx].value.data();
        let acc = |grads: &mut [Option<Vec<f64>>], v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if nodes[v.0].requires_grad {
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
                f(buf);
            }
        };
        let val = |v: Var| nodes[v.0].value.data();

        match &nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(grads, *a, &mut |ga| add_into(ga, g));
                acc(grads, *b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(grads, *a, &mut |ga| add_into(ga, g));
                acc(grads, *b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, &d)| *o -= d));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(grads, *a, &mut |ga| {
                    for ((o, &d), &y) in ga.iter_mut().zip(g).zip(vb) {
                        *o += d * y;
                    }
                });
                acc(grads, *b, &mut |gb| {
                    for ((o, &d), &x) in gb.iter_mut().zip(g).zip(va) {
                        *o += d * x;
                    }
                });
            }
            Op::Div(a, b) => {
                let vb = val(*b);
                acc(grads, *a, &mut |ga| {
                    for ((o, &d), &y) in ga.iter_mut().zip(g).zip(vb) {
                        *o += d / y;
                    }
                });
                acc(grads, *b, &mut |gb| {
                    for (((o, &d), &y), &q) in gb.iter_mut().zip(g).zip(vb).zip(out) {
                        *o -= d * q / y;
                    }
                });
            }
            Op::AddRow(x, r) => {
                let width = nodes[r.0].value.numel();
                acc(grads, *x, &mut |gx| add_into(gx, g));
                acc(grads, *r, &mut |gr| {
                    for chunk in g.chunks_exact(width) {
                        add_into(gr, chunk);
                    }
                });
            }
            Op::MulRow(x, r) => {
                let width = nodes[r.0].value.numel();
                let (vx, vr) = (val(*x), val(*r));
                acc(grads, *x, &mut |gx| {
                    for (gchunk, ochunk) in g.chunks_exact(width).zip(gx.chunks_exact_mut(width)) {
                        for ((o, &d), &s) in ochunk.iter_mut().zip(gchunk).zip(vr) {
                            *o += d * s;
                        }
                    }
                });
                acc(grads, *r, &mut |gr| {
                    for (gchunk, xchunk) in g.chunks_exact(width).zip(vx.chunks_exact(width)) {
                        for ((o, &d), &xv) in gr.iter_mut().zip(gchunk).zip(xchunk) {
                            *o += d * xv;
                        }
                    }
                });
            }
            Op::Scale(x, c) => acc(grads, *x, &mut |gx| {
                gx.iter_mut().zip(g).for_each(|(o, &d)| *o += c * d)
            }),
            Op::AddScalar(x) | Op::Reshape(x) => acc(grads, *x, &mut |gx| add_into(gx, g)),
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (va, vb) = (val(*a), val(*b));
                acc(grads, *a, &mut |ga| {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            ga[i * k + p] += gi.iter().zip(&vb[p * n..(p + 1) * n]).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(grads, *b, &mut |gb| {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = va[i * k + p];
                            for (o, &d) in gb[p * n..(p + 1) * n].iter_mut().zip(gi) {
                                *o += av * d;
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => acc(grads, *x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0])),
            Op::SumAxis { x, outer, len, inner } => {
                let (outer, len, inner) = (*outer, *len, *inner);
                acc(grads, *x, &mut |gx| {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            add_into(&mut gx[(o * len + l) * inner..(o * len + l + 1) * inner], src);
                        }
                    }
                });
            }
            Op::Exp(x) => acc(grads, *x, &mut |gx| {
                for ((o, &d), &y) in gx.iter_mut().zip(g).zip(out) {
                    *o += d * y;
                }
            }),
            Op::Log(x) => {
                let vx = val(*x);
                acc(grads, *x, &mut |gx| {
                    for ((o, &d), &xv) in gx.iter_mut().zip(g).zip(vx) {
                        *o += d / xv;
                    }
                })
            }
            Op::Log1p(x) => {
                let vx = val(*x);
                acc(grads, *x, &mut |gx| {
                    for ((o, &d), &xv) in gx.iter_mut().zip(g).zip(vx) {
                        *o += d / (1.0 + xv);
                    }
                })
            }
            Op::LeakyRelu(x, slope) => {
                let vx = val(*x);
                acc(grads, *x, &mut |gx| {
                    for ((o, &d), &xv) in gx.iter_mut().zip(g).zip(vx) {
                        *o += if xv >= 0.0 { d } else { slope * d };
                    }
                })
            }
            Op::Sigmoid(x) => acc(grads, *x, &mut |gx| {
                for ((o, &d), &y) in gx.iter_mut().zip(g).zip(out) {
                    *o += d * y * (1.0 - y);
                }
            }),
            Op::Softmax { x, outer, len, inner } => {
                let (outer, len, inner) = (*outer, *len, *inner);
                acc(grads, *x, &mut |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |l: usize| (o * len + l) * inner + i;
                            let dot: f64 = (0..len).map(|l| g[at(l)] * out[at(l)]).sum();
                            for l in 0..len {
                                gx[at(l)] += out[at(l)] * (g[at(l)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let width = nodes[gain.0].value.numel();
                let gv = val(*gain);
                acc(grads, *gain, &mut |gg| {
                    for (gc, hc) in g.chunks_exact(width).zip(xhat.chunks_exact(width)) {
                        for ((o, &d), &h) in gg.iter_mut().zip(gc).zip(hc) {
                            *o += d * h;
                        }
                    }
                });
                acc(grads, *bias, &mut |gb| {
                    for gc in g.chunks_exact(width) {
                        add_into(gb, gc);
                    }
                });
                acc(grads, *x, &mut |gx| {
                    let mut dh = vec![0.0; width];
                    for (r, ((gc, hc), oc)) in g
                        .chunks_exact(width)
                        .zip(xhat.chunks_exact(width))
                        .zip(gx.chunks_exact_mut(width))
                        .enumerate()
                    {
                        for f in 0..width {
                            dh[f] = gc[f] * gv[f];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / width as f64;
                        let mean_dh_h = dh.iter().zip(hc).map(|(a, b)| a * b).sum::<f64>() / width as f64;
                        for f in 0..width {
                            oc[f] += rstd[r] * (dh[f] - mean_dh - hc[f] * mean_dh_h);
                        }
                    }
                });
            }
            Op::ColumnNorm { x, gain, bias, xhat, rstd, batch_stats } => {
                let width = nodes[gain.0].value.numel();
                let rows = xhat.len() / width;
                let gv = val(*gain);
                let mut sum_g = vec![0.0; width];
                let mut sum_gh = vec![0.0; width];
                for (gc, hc) in g.chunks_exact(width).zip(xhat.chunks_exact(width)) {
                    for f in 0..width {
                        sum_g[f] += gc[f];
                        sum_gh[f] += gc[f] * hc[f];
                    }
                }
                acc(grads, *gain, &mut |gg| add_into(gg, &sum_gh));
                acc(grads, *bias, &mut |gb| add_into(gb, &sum_g));
                acc(grads, *x, &mut |gx| {
                    for ((gc, hc), oc) in g
                        .chunks_exact(width)
                        .zip(xhat.chunks_exact(width))
                        .zip(gx.chunks_exact_mut(width))
                    {
                        for f in 0..width {
                            let scale = gv[f] * rstd[f];
                            oc[f] += if *batch_stats {
                                scale * (gc[f] - sum_g[f] / rows as f64 - hc[f] * sum_gh[f] / rows as f64)
                            } else {
                                scale * gc[f]
                            };
                        }
                    }
                });
            }
            Op::Concat { parts, outer, widths, inner } => {
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(widths) {
                    acc(grads, p, &mut |gp| {
                        for o in 0..*outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + w) * inner];
                            add_into(&mut gp[o * w * inner..(o + 1) * w * inner], src);
                        }
                    });
                    offset += w;
                }
            }
            Op::Slice { x, outer, len_in, start, len, inner } => {
                acc(grads, *x, &mut |gx| {
                    for o in 0..*outer {
                        let dst = &mut gx[(o * len_in + start) * inner..(o * len_in + start + len) * inner];
                        add_into(dst, &g[o * len * inner..(o + 1) * len * inner]);
                    }
                });
            }
            Op::HeadLinear { x, w, heads, head_dim } => {
                let (heads, dh) = (*heads, *head_dim);
                let width = heads * dh;
                let (vx, vw) = (val(*x), val(*w));
                acc(grads, *x, &mut |gx| {
                    for (gc, oc) in g.chunks_exact(width).zip(gx.chunks_exact_mut(width)) {
                        for h in 0..heads {
                            let wm = &vw[h * dh * dh..(h + 1) * dh * dh];
                            for a in 0..dh {
                                let d = gc[h * dh + a];
                                for b in 0..dh {
                                    oc[h * dh + b] += wm[a * dh + b] * d;
                                }
                            }
                        }
                    }
                });
                acc(grads, *w, &mut |gw| {
                    for (gc, xc) in g.chunks_exact(width).zip(vx.chunks_exact(width)) {
                        for h in 0..heads {
                            for a in 0..dh {
                                let d = gc[h * dh + a];
                                for b in 0..dh {
                                    gw[(h * dh + a) * dh + b] += d * xc[h * dh + b];
                                }
                            }
                        }
                    }
                });
            }
            Op::EdgeScores { q, k, e, dims, scale } => {
                let AttnDims { batch, nodes: n, heads, head_dim: dh } = *dims;
                let w = dims.width();
                let (vq, vk, ve) = (val(*q), val(*k), val(*e));
                let need_q = nodes[q.0].requires_grad;
                let need_k = nodes[k.0].requires_grad;
                let mut gq = vec![0.0; if need_q { vq.len() } else { 0 }];
                let mut gk = vec![0.0; if need_k { vk.len() } else { 0 }];
                for b in 0..batch {
                    for i in 0..n {
                        let qi = &vq[(b * n + i) * w..(b * n + i + 1) * w];
                        for j in 0..n {
                            let kj = &vk[(b * n + j) * w..(b * n + j + 1) * w];
                            let eij = &ve[((b * n + i) * n + j) * w..((b * n + i) * n + j + 1) * w];
                            let gs = &g[((b * n + i) * n + j) * heads..((b * n + i) * n + j + 1) * heads];
                            for h in 0..heads {
                                let d = scale * gs[h];
                                for a in h * dh..(h + 1) * dh {
                                    if need_q {
                                        gq[(b * n + i) * w + a] += d * (kj[a] + eij[a]);
                                    }
                                    if need_k {
                                        gk[(b * n + j) * w + a] += d * qi[a];
                                    }
                                }
                            }
                        }
                    }
                }
                acc(grads, *e, &mut |ge| {
                    for b in 0..batch {
                        for i in 0..n {
                            let qi = &vq[(b * n + i) * w..(b * n + i + 1) * w];
                            for j in 0..n {
                                let base = ((b * n + i) * n + j) * w;
                                let gs = &g[((b * n + i) * n + j) * heads..((b * n + i) * n + j + 1) * heads];
                                for h in 0..heads {
                                    let d = scale * gs[h];
                                    for a in h * dh..(h + 1) * dh {
                                        ge[base + a] += d * qi[a];
                                    }
                                }
                            }
                        }
                    }
                });
                if need_q {
                    acc(grads, *q, &mut |buf| add_into(buf, &gq));
                }
                if need_k {
                    acc(grads, *k, &mut |buf| add_into(buf, &gk));
                }
            }
            Op::Attend { att, v, dims } => {
                let AttnDims { batch, nodes: n, heads, head_dim: dh } = *dims;
                let w = dims.width();
                let (va, vv) = (val(*att), val(*v));
                acc(grads, *att, &mut |ga| {
                    for b in 0..batch {
                        for i in 0..n {
                            let gi = &g[(b * n + i) * w..(b * n + i + 1) * w];
                            for j in 0..n {
                                let vj = &vv[(b * n + j) * w..(b * n + j + 1) * w];
                                let o = &mut ga[((b * n + i) * n + j) * heads..((b * n + i) * n + j + 1) * heads];
                                for h in 0..heads {
                                    o[h] += (h * dh..(h + 1) * dh).map(|a| gi[a] * vj[a]).sum::<f64>();
                                }
                            }
                        }
                    }
                });
                acc(grads, *v, &mut |gv| {
                    for b in 0..batch {
                        for i in 0..n {
                            let gi = &g[(b * n + i) * w..(b * n + i + 1) * w];
                            for j in 0..n {
                                let aij = &va[((b * n + i) * n + j) * heads..((b * n + i) * n + j + 1) * heads];
                                let o = &mut gv[(b * n + j) * w..(b * n + j + 1) * w];
                                for h in 0..heads {
                                    for a in h * dh..(h + 1) * dh {
                                        o[a] += aij[h] * gi[a];
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::BatchedMatVec { a, x, batch, rows, cols } => {
                let (batch, rows, cols) = (*batch, *rows, *cols);
                let (vm, vx) = (val(*a), val(*x));
                acc(grads, *a, &mut |gm| {
                    for b in 0..batch {
                        for r in 0..rows {
                            let d = g[b * rows + r];
                            let row = &mut gm[(b * rows + r) * cols..(b * rows + r + 1) * cols];
                            for (o, &xv) in row.iter_mut().zip(&vx[b * cols..(b + 1) * cols]) {
                                *o += d * xv;
                            }
                        }
                    }
                });
                acc(grads, *x, &mut |gx| {
                    for b in 0..batch {
                        let ob = &mut gx[b * cols..(b + 1) * cols];
                        for r in 0..rows {
                            let d = g[b * rows + r];
                            let row = &vm[(b * rows + r) * cols..(b * rows + r + 1) * cols];
                            for (o, &m) in ob.iter_mut().zip(row) {
                                *o += d * m;
                            }
                        }
                    }
                });
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
