//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its forward value; `backward` walks the
//! tape in reverse, so the recording order is already a topological order.

use crate::error::{contract, Error, Result};

use super::gemm::gemm;
use super::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }
    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddBias { x: Var, b: Var, inner: usize },
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Transpose { x: Var, rows: usize, cols: usize },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, cols: Vec<f64> },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Gather { x: Var, idx: Vec<usize>, n_in: usize },
    Relu(Var),
    SoftmaxRows { x: Var, cols: usize },
    Sum(Var),
    Mean(Var),
    Abs(Var),
    Square(Var),
    Concat(Vec<Var>),
    Slice { x: Var, offset: usize },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a tensor as a leaf; it is differentiable iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            return shape_err(format!("constant of shape {:?} given {} values", shape, data.len()));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("tape node shape is consistent")
    }

    /// Gradient of the last `backward` loss with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).iter().map(|x| x * s).collect();
        let rg = self.rg(a);
        self.push(self.shape(a).to_vec(), v, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).iter().map(|x| x + s).collect();
        let rg = self.rg(a);
        self.push(self.shape(a).to_vec(), v, Op::AddScalar(a), rg)
    }

    /// Adds `b[c]` to every element of channel `c` of `x` (shape `[C, ...]`).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.is_empty() || self.shape(b) != [xs[0]] {
            return shape_err(format!("add_bias: x {:?}, b {:?}", xs, self.shape(b)));
        }
        let c = xs[0];
        let inner = self.value(x).len() / c.max(1);
        let bv = self.value(b);
        let mut v = self.value(x).to_vec();
        for (ch, row) in v.chunks_mut(inner.max(1)).enumerate().take(c) {
            for e in row {
                *e += bv[ch];
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(xs.to_vec(), v, Op::AddBias { x, b, inner }, rg))
    }

    /// `(m×k)·(k×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err(format!("matmul: {:?} · {:?}", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, 0.0);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return shape_err(format!("transpose needs a matrix, got {:?}", s));
        }
        let (rows, cols) = (s[0], s[1]);
        let xv = self.value(x);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = xv[r * cols + c];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![cols, rows], out, Op::Transpose { x, rows, cols }, rg))
    }

    /// Square-kernel 2-D convolution over a `(C, H, W)` input with zero padding `k / 2`.
    ///
    /// Weight shape is `(Cout, Cin, k, k)`; bias, when given, is `(Cout)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] || stride == 0 {
            return shape_err(format!("conv2d: x {:?}, w {:?}, stride {stride}", xs, ws));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return shape_err(format!("conv2d bias {:?} for {} outputs", self.shape(b), ws[0]));
            }
        }
        let k = ws[2];
        let pad = k / 2;
        let (h, wd) = (xs[1], xs[2]);
        if h + 2 * pad < k || wd + 2 * pad < k {
            return shape_err(format!("conv2d: kernel {k} larger than padded input {h}x{wd}"));
        }
        let geom = ConvGeom {
            cin: xs[0],
            h,
            w: wd,
            cout: ws[0],
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (wd + 2 * pad - k) / stride + 1,
        };
        let cols = im2col(self.value(x), &geom);
        let p = geom.positions();
        let mut out = vec![0.0; geom.cout * p];
        gemm(geom.cout, geom.patch(), p, self.value(w), false, &cols, false, &mut out, 0.0);
        if let Some(b) = b {
            let bv = self.value(b);
            for (co, row) in out.chunks_mut(p).enumerate() {
                for e in row {
                    *e += bv[co];
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let shape = vec![geom.cout, geom.ho, geom.wo];
        Ok(self.push(shape, out, Op::Conv2d { x, w, b, geom, cols }, rg))
    }

    /// 2×2 max pooling with stride 2 (odd trailing rows/columns are dropped).
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[1] < 2 || s[2] < 2 {
            return shape_err(format!("max_pool2 needs (C,H>=2,W>=2), got {:?}", s));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (ho, wo) = (h / 2, w / 2);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = ch * h * w + (2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                        if xv[i] > xv[best] {
                            best = i;
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![c, ho, wo], out, Op::MaxPool2 { x, argmax }, rg))
    }

    /// Column gather: `x` is `(C, N)`; output is `(C, idx.len())` with `out[c, j] = x[c, idx[j]]`.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return shape_err(format!("gather needs (C, N), got {:?}", s));
        }
        let (c, n_in) = (s[0], s[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_in) {
            return shape_err(format!("gather index {bad} out of range {n_in}"));
        }
        let xv = self.value(x);
        let m = idx.len();
        let mut out = vec![0.0; c * m];
        for ch in 0..c {
            let row = &xv[ch * n_in..(ch + 1) * n_in];
            for (j, &i) in idx.iter().enumerate() {
                out[ch * m + j] = row[i];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![c, m], out, Op::Gather { x, idx, n_in }, rg))
    }

    /// Nearest-neighbour 2× upsampling of a `(C, H, W)` map.
    pub fn upsample_nearest2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return shape_err(format!("upsample needs (C,H,W), got {:?}", s));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let idx = (0..2 * h)
            .flat_map(|y| (0..2 * w).map(move |xx| (y / 2) * w + xx / 2))
            .collect();
        let flat = self.reshape(x, &[c, h * w])?;
        let g = self.gather(flat, idx)?;
        self.reshape(g, &[c, 2 * h, 2 * w])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|&e| if e > 0.0 { e } else { 0.0 }).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), v, Op::Relu(x), rg)
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || s[1] == 0 {
            return shape_err(format!("softmax_rows needs a non-empty matrix, got {:?}", s));
        }
        let cols = s[1];
        let mut v = self.value(x).to_vec();
        for row in v.chunks_mut(cols) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for e in row.iter_mut() {
                *e = (*e - mx).exp();
                z += *e;
            }
            for e in row.iter_mut() {
                *e /= z;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(self.shape(x).to_vec(), v, Op::SoftmaxRows { x, cols }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let rg = self.rg(x);
        self.push(vec![], vec![s], Op::Mean(x), rg)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|e| e.abs()).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), v, Op::Abs(x), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|e| e * e).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), v, Op::Square(x), rg)
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return contract("concat of zero tensors");
        };
        let rest = self.shape(first).get(1..).unwrap_or(&[]).to_vec();
        if self.shape(first).is_empty() {
            return shape_err("concat of scalars".into());
        }
        let mut lead = 0;
        let mut v = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != rest[..] {
                return shape_err(format!("concat: {:?} vs trailing {:?}", s, rest));
            }
            lead += s[0];
            v.extend_from_slice(self.value(p));
        }
        let mut shape = vec![lead];
        shape.extend(rest);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(shape, v, Op::Concat(parts.to_vec()), rg))
    }

    /// Rows `start..start+len` of the leading axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || start + len > s[0] {
            return shape_err(format!("slice {start}..{} of {:?}", start + len, s));
        }
        let inner: usize = s[1..].iter().product();
        let v = self.value(x)[start * inner..(start + len) * inner].to_vec();
        let mut shape = s.clone();
        shape[0] = len;
        let rg = self.rg(x);
        Ok(self.push(shape, v, Op::Slice { x, offset: start * inner }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return shape_err(format!("reshape {:?} -> {:?}", self.shape(x), shape));
        }
        let v = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape.to_vec(), v, Op::Reshape(x), rg))
    }

    /// Back-propagates from a scalar `loss`, filling gradients for every node that requires them.
    ///
    /// A tape supports one backward pass; call [`Tape::reset_grads`] before another.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::DoubleAccumulation("tape (backward already run)".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return contract(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss)));
        }
        self.backward_done = true;
        let Tape { nodes, grads, .. } = self;
        grads.clear();
        grads.resize(nodes.len(), None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let mut acc = |j: Var, f: &mut dyn FnMut(&mut [f64])| {
                if nodes[j.0].requires_grad {
                    let buf = grads[j.0].get_or_insert_with(|| vec![0.0; nodes[j.0].value.len()]);
                    f(buf);
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(*a, &mut |d| add_into(d, &g));
                    acc(*b, &mut |d| add_into(d, &g));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |d| add_into(d, &g));
                    acc(*b, &mut |d| d.iter_mut().zip(&g).for_each(|(d, g)| *d -= g));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    acc(*a, &mut |d| {
                        for ((d, g), y) in d.iter_mut().zip(&g).zip(bv) {
                            *d += g * y;
                        }
                    });
                    acc(*b, &mut |d| {
                        for ((d, g), x) in d.iter_mut().zip(&g).zip(av) {
                            *d += g * x;
                        }
                    });
                }
                Op::Scale(a, s) => acc(*a, &mut |d| d.iter_mut().zip(&g).for_each(|(d, g)| *d += s * g)),
                Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &mut |d| add_into(d, &g)),
                Op::AddBias { x, b, inner } => {
                    acc(*x, &mut |d| add_into(d, &g));
                    let inner = (*inner).max(1);
                    acc(*b, &mut |d| {
                        for (c, row) in g.chunks(inner).enumerate() {
                            d[c] += row.iter().sum::<f64>();
                        }
                    });
                }
                Op::MatMul { a, b, m, k, n } => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    acc(*a, &mut |d| gemm(*m, *n, *k, &g, false, bv, true, d, 1.0));
                    acc(*b, &mut |d| gemm(*k, *m, *n, av, true, &g, false, d, 1.0));
                }
                Op::Transpose { x, rows, cols } => acc(*x, &mut |d| {
                    for r in 0..*rows {
                        for c in 0..*cols {
                            d[r * cols + c] += g[c * rows + r];
                        }
                    }
                }),
                Op::Conv2d { x, w, b, geom, cols } => {
                    let p = geom.positions();
                    if let Some(b) = b {
                        acc(*b, &mut |d| {
                            for (co, row) in g.chunks(p).enumerate() {
                                d[co] += row.iter().sum::<f64>();
                            }
                        });
                    }
                    acc(*w, &mut |d| gemm(geom.cout, p, geom.patch(), &g, false, cols, true, d, 1.0));
                    let wv = &nodes[w.0].value;
                    acc(*x, &mut |d| {
                        let mut dcols = vec![0.0; geom.patch() * p];
                        gemm(geom.patch(), geom.cout, p, wv, true, &g, false, &mut dcols, 0.0);
                        col2im_add(&dcols, geom, d);
                    });
                }
                Op::MaxPool2 { x, argmax } => acc(*x, &mut |d| {
                    for (gi, &src) in g.iter().zip(argmax) {
                        d[src] += gi;
                    }
                }),
                Op::Gather { x, idx, n_in } => acc(*x, &mut |d| {
                    let m = idx.len();
                    for (ch, grow) in g.chunks(m.max(1)).enumerate() {
                        let drow = &mut d[ch * n_in..(ch + 1) * n_in];
                        for (gj, &i) in grow.iter().zip(idx) {
                            drow[i] += gj;
                        }
                    }
                }),
                Op::Relu(x) => {
                    let xv = &nodes[x.0].value;
                    acc(*x, &mut |d| {
                        for ((d, g), v) in d.iter_mut().zip(&g).zip(xv) {
                            if *v > 0.0 {
                                *d += g;
                            }
                        }
                    });
                }
                Op::SoftmaxRows { x, cols } => {
                    let y = &node.value;
                    acc(*x, &mut |d| {
                        for ((drow, grow), yrow) in d.chunks_mut(*cols).zip(g.chunks(*cols)).zip(y.chunks(*cols)) {
                            let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                            for ((d, g), y) in drow.iter_mut().zip(grow).zip(yrow) {
                                *d += y * (g - dot);
                            }
                        }
                    });
                }
                Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
                Op::Mean(x) => {
                    let n = nodes[x.0].value.len().max(1) as f64;
                    acc(*x, &mut |d| d.iter_mut().for_each(|d| *d += g[0] / n));
                }
                Op::Abs(x) => {
                    let xv = &nodes[x.0].value;
                    acc(*x, &mut |d| {
                        for ((d, g), v) in d.iter_mut().zip(&g).zip(xv) {
                            // subgradient 0 at the kink
                            if *v > 0.0 {
                                *d += g;
                            } else if *v < 0.0 {
                                *d -= g;
                            }
                        }
                    });
                }
                Op::Square(x) => {
                    let xv = &nodes[x.0].value;
                    acc(*x, &mut |d| {
                        for ((d, g), v) in d.iter_mut().zip(&g).zip(xv) {
                            *d += 2.0 * v * g;
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = nodes[p.0].value.len();
                        acc(*p, &mut |d| add_into(d, &g[off..off + n]));
                        off += n;
                    }
                }
                Op::Slice { x, offset } => {
                    acc(*x, &mut |d| add_into(&mut d[*offset..*offset + g.len()], &g));
                }
            }
            grads[i] = Some(g);
        }
        Ok(())
    }

    /// Drops gradients so another backward pass can run on this tape.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }
}

fn add_into(d: &mut [f64], g: &[f64]) {
    for (d, g) in d.iter_mut().zip(g) {
        *d += g;
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let p = g.positions();
    let mut cols = vec![0.0; g.patch() * p];
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.positions();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[base + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}
