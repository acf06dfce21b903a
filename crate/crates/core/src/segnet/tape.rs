//! Reverse-mode autodiff over NCHW `f64` tensors.
//!
//! Every operation appends a node holding its output and whatever it needs
//! for the backward pass. [`Tape::backward`] walks the nodes in reverse and
//! returns gradients for the parameter leaves.

use std::collections::HashMap;

use ndarray::{s, Array2, Array4, ArrayView2, Axis, Zip};

pub type Tensor = Array4<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        cols: Array2<f64>,
        geom: ConvGeom,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Concat(Vec<(NodeId, usize)>),
    Upsample(NodeId, usize),
    GlobalAvg(NodeId),
    GlobalMax(NodeId, Vec<usize>),
    ChannelMean(NodeId),
    ChannelMax(NodeId, Vec<usize>),
    Bce {
        logits: NodeId,
        target: Tensor,
        active: Vec<bool>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

/// Probability clamp used by the loss.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<usize, NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Leaf for parameter `index`; repeated calls return the same node so
    /// shared weights accumulate one gradient.
    pub fn param(&mut self, index: usize, value: &Tensor) -> NodeId {
        if let Some(&id) = self.params.get(&index) {
            return id;
        }
        let id = self.push(value.clone(), Op::Leaf);
        self.params.insert(index, id);
        id
    }

    /// Square-kernel convolution; `w` is `(out, in, k, k)`, `b` is `(1, out, 1, 1)`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize) -> NodeId {
        let (n, c, h, wd) = self.value(x).dim();
        let (o, ci, k, k2) = self.value(w).dim();
        assert_eq!(ci, c, "conv input channels");
        assert_eq!(k, k2, "square kernels only");
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let geom = ConvGeom {
            n,
            c,
            h,
            w: wd,
            k,
            stride,
            pad,
            ho,
            wo,
        };
        let cols = im2col(self.value(x), &geom);
        let wmat = weight_matrix(self.value(w));
        let mut y = wmat.dot(&cols);
        if let Some(b) = b {
            let bias = self.value(b);
            for (oc, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
                row += bias[[0, oc, 0, 0]];
            }
        }
        let out = row_major(y)
            .into_shape_with_order((o, n, ho, wo))
            .expect("conv output shape")
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .into_owned();
        self.push(out, Op::Conv { x, w, b, cols, geom })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).mapv(|a| a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).mapv(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// Elementwise product; `b` may broadcast over size-1 axes of `a`'s shape.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// Concatenation along channels.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat shapes");
        let spans = parts.iter().map(|&p| (p, self.value(p).dim().1)).collect();
        self.push(v, Op::Concat(spans))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&mut self, x: NodeId, factor: usize) -> NodeId {
        let src = self.value(x);
        let (n, c, h, w) = src.dim();
        let v = Tensor::from_shape_fn((n, c, h * factor, w * factor), |(a, b, y, x)| src[[a, b, y / factor, x / factor]]);
        self.push(v, Op::Upsample(x, factor))
    }

    pub fn global_avg(&mut self, x: NodeId) -> NodeId {
        let src = self.value(x);
        let (n, c, h, w) = src.dim();
        let area = (h * w) as f64;
        let v = Tensor::from_shape_fn((n, c, 1, 1), |(a, b, _, _)| src.slice(s![a, b, .., ..]).sum() / area);
        self.push(v, Op::GlobalAvg(x))
    }

    pub fn global_max(&mut self, x: NodeId) -> NodeId {
        let src = self.value(x);
        let (n, c, h, w) = src.dim();
        let mut arg = Vec::with_capacity(n * c);
        let mut v = Tensor::zeros((n, c, 1, 1));
        for a in 0..n {
            for b in 0..c {
                let plane = src.slice(s![a, b, .., ..]);
                let (mut best, mut bi) = (f64::NEG_INFINITY, 0);
                for (i, &val) in plane.iter().enumerate() {
                    if val > best {
                        best = val;
                        bi = i;
                    }
                }
                v[[a, b, 0, 0]] = best;
                arg.push(bi.min(h * w - 1));
            }
        }
        self.push(v, Op::GlobalMax(x, arg))
    }

    pub fn channel_mean(&mut self, x: NodeId) -> NodeId {
        let src = self.value(x);
        let c = src.dim().1 as f64;
        let v = src.sum_axis(Axis(1)).insert_axis(Axis(1)) / c;
        self.push(v, Op::ChannelMean(x))
    }

    pub fn channel_max(&mut self, x: NodeId) -> NodeId {
        let src = self.value(x);
        let (n, c, h, w) = src.dim();
        let mut arg = Vec::with_capacity(n * h * w);
        let mut v = Tensor::zeros((n, 1, h, w));
        for a in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let (mut best, mut bi) = (f64::NEG_INFINITY, 0);
                    for ch in 0..c {
                        let val = src[[a, ch, y, x]];
                        if val > best {
                            best = val;
                            bi = ch;
                        }
                    }
                    v[[a, 0, y, x]] = best;
                    arg.push(bi);
                }
            }
        }
        self.push(v, Op::ChannelMax(x, arg))
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` clamped to
    /// `[PROB_EPS, 1 - PROB_EPS]` and `target`. Clamped pixels pass no gradient.
    pub fn bce(&mut self, logits: NodeId, target: Tensor) -> NodeId {
        let z = self.value(logits);
        assert_eq!(z.dim(), target.dim(), "loss target shape");
        let mut active = Vec::with_capacity(z.len());
        let mut total = 0.0;
        for (&zi, &ti) in z.iter().zip(target.iter()) {
            let p = sigmoid(zi);
            let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            active.push(pc == p);
            total -= ti * pc.ln() + (1.0 - ti) * (1.0 - pc).ln();
        }
        let loss = total / z.len().max(1) as f64;
        self.push(Tensor::from_elem((1, 1, 1, 1), loss), Op::Bce { logits, target, active })
    }

    /// Gradients of the scalar `root` with respect to every parameter leaf,
    /// keyed by parameter index.
    pub fn backward(&self, root: NodeId) -> HashMap<usize, Tensor> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::ones(self.value(root).dim()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            let mut send = |id: NodeId, d: Tensor| match &mut grads[id.0] {
                Some(acc) => *acc += &d,
                slot => *slot = Some(d),
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv { x, w, b, cols, geom } => {
                    let o = self.value(*w).dim().0;
                    let gm = g
                        .view()
                        .permuted_axes([1, 0, 2, 3])
                        .as_standard_layout()
                        .into_owned()
                        .into_shape_with_order((o, geom.n * geom.ho * geom.wo))
                        .expect("grad shape");
                    let dw = gm.dot(&cols.t());
                    send(*w, row_major(dw).into_shape_with_order(self.value(*w).dim()).expect("weight shape"));
                    if let Some(b) = b {
                        let db = gm.sum_axis(Axis(1));
                        send(*b, db.into_shape_with_order((1, o, 1, 1)).expect("bias shape"));
                    }
                    let wmat = weight_matrix(self.value(*w));
                    let dcols = wmat.t().dot(&gm);
                    send(*x, col2im(dcols.view(), geom));
                }
                Op::Relu(x) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.value(*x)).for_each(|d, &v| {
                        if v <= 0.0 {
                            *d = 0.0
                        }
                    });
                    send(*x, d);
                }
                Op::Sigmoid(x) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &s| *d *= s * (1.0 - s));
                    send(*x, d);
                }
                Op::Add(a, b) => {
                    send(*b, reduce_to(&g, self.value(*b).dim()));
                    send(*a, reduce_to(&g, self.value(*a).dim()));
                }
                Op::Mul(a, b) => {
                    let da = &g * self.value(*b);
                    let db = &g * self.value(*a);
                    send(*a, reduce_to(&da, self.value(*a).dim()));
                    send(*b, reduce_to(&db, self.value(*b).dim()));
                }
                Op::Concat(spans) => {
                    let mut start = 0;
                    for &(id, c) in spans {
                        send(id, g.slice(s![.., start..start + c, .., ..]).to_owned());
                        start += c;
                    }
                }
                Op::Upsample(x, f) => {
                    let (n, c, h, w) = self.value(*x).dim();
                    let mut d = Tensor::zeros((n, c, h, w));
                    for ((a, b, y, xx), &v) in g.indexed_iter() {
                        d[[a, b, y / f, xx / f]] += v;
                    }
                    send(*x, d);
                }
                Op::GlobalAvg(x) => {
                    let (n, c, h, w) = self.value(*x).dim();
                    let area = (h * w) as f64;
                    let d = Tensor::from_shape_fn((n, c, h, w), |(a, b, _, _)| g[[a, b, 0, 0]] / area);
                    send(*x, d);
                }
                Op::GlobalMax(x, arg) => {
                    let (n, c, h, w) = self.value(*x).dim();
                    let mut d = Tensor::zeros((n, c, h, w));
                    for a in 0..n {
                        for b in 0..c {
                            let k = arg[a * c + b];
                            d[[a, b, k / w, k % w]] = g[[a, b, 0, 0]];
                        }
                    }
                    send(*x, d);
                }
                Op::ChannelMean(x) => {
                    let (n, c, h, w) = self.value(*x).dim();
                    let cf = c as f64;
                    let d = Tensor::from_shape_fn((n, c, h, w), |(a, _, y, xx)| g[[a, 0, y, xx]] / cf);
                    send(*x, d);
                }
                Op::ChannelMax(x, arg) => {
                    let (n, c, h, w) = self.value(*x).dim();
                    let mut d = Tensor::zeros((n, c, h, w));
                    for a in 0..n {
                        for y in 0..h {
                            for xx in 0..w {
                                let ch = arg[(a * h + y) * w + xx];
                                d[[a, ch, y, xx]] = g[[a, 0, y, xx]];
                            }
                        }
                    }
                    send(*x, d);
                }
                Op::Bce { logits, target, active } => {
                    let z = self.value(*logits);
                    let scale = g[[0, 0, 0, 0]] / z.len().max(1) as f64;
                    let mut d = Tensor::zeros(z.dim());
                    for (((dv, &zi), &ti), &on) in d.iter_mut().zip(z.iter()).zip(target.iter()).zip(active.iter()) {
                        if on {
                            *dv = (sigmoid(zi) - ti) * scale;
                        }
                    }
                    send(*logits, d);
                }
            }
        }
        self.params
            .iter()
            .filter_map(|(&idx, &id)| grads[id.0].take().map(|g| (idx, g)))
            .collect()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Matrix products may come back column-major; reshapes need row-major.
fn row_major(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn weight_matrix(w: &Tensor) -> Array2<f64> {
    let (o, c, k, _) = w.dim();
    w.as_standard_layout()
        .into_owned()
        .into_shape_with_order((o, c * k * k))
        .expect("weight matrix")
}

/// Rows index `(channel, ky, kx)`, columns index `(n, oy, ox)`.
fn im2col(x: &Tensor, g: &ConvGeom) -> Array2<f64> {
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let ncols = g.n * g.ho * g.wo;
    let mut cols = Array2::<f64>::zeros((g.c * g.k * g.k, ncols));
    let out = cols.as_slice_mut().expect("fresh array");
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let base = row * ncols;
                for n in 0..g.n {
                    let plane = (n * g.c + c) * g.h * g.w;
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src = plane + iy as usize * g.w;
                        let dst = base + (n * g.ho + oy) * g.wo;
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                out[dst + ox] = xs[src + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: ArrayView2<'_, f64>, g: &ConvGeom) -> Tensor {
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let ncols = g.n * g.ho * g.wo;
    let mut x = Tensor::zeros((g.n, g.c, g.h, g.w));
    let xs = x.as_slice_mut().expect("fresh array");
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let base = row * ncols;
                for n in 0..g.n {
                    let plane = (n * g.c + c) * g.h * g.w;
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst = plane + iy as usize * g.w;
                        let src = base + (n * g.ho + oy) * g.wo;
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                xs[dst + ix as usize] += cs[src + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Sums `g` over the axes where `shape` has size 1.
fn reduce_to(g: &Tensor, shape: (usize, usize, usize, usize)) -> Tensor {
    if g.dim() == shape {
        return g.clone();
    }
    let target = [shape.0, shape.1, shape.2, shape.3];
    let mut out = g.clone();
    for (axis, &t) in target.iter().enumerate() {
        if t == 1 && out.len_of(Axis(axis)) != 1 {
            out = out.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        }
    }
    out
}
