//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation in execution order, so the node list is
//! already topologically sorted and [`Tape::backward`] is a single reverse
//! sweep. Parameters live in a [`ParamStore`] and are bound onto the tape on
//! first use; a fresh tape is built for every training step.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{numel, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnaryKind {
    Exp,
    Log,
    Sqrt,
    Sigmoid,
    LogSigmoid,
    Silu,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary { kind: BinaryKind, a: Var, b: Var },
    Unary { kind: UnaryKind, x: Var },
    Scale { x: Var, c: f64 },
    Shift { x: Var },
    Matmul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize },
    Permute { x: Var, map: Vec<usize> },
    Reshape { x: Var },
    Concat { xs: Vec<Var>, outer: usize, inner: usize, extents: Vec<usize> },
    Narrow { x: Var, outer: usize, inner: usize, extent: usize, start: usize, len: usize },
    SumAll { x: Var },
    SumAxis { x: Var, outer: usize, extent: usize, inner: usize },
    Softmax { x: Var, outer: usize, extent: usize, inner: usize },
    LogSoftmax { x: Var, outer: usize, extent: usize, inner: usize },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, cols: Vec<f64> },
    Upsample { x: Var, factor: usize },
    GroupNorm { x: Var, group_len: usize, rstd: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn ck(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn hw_out(&self) -> usize {
        self.ho * self.wo
    }
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.get(*v))
    }

    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params
            .iter()
            .filter_map(|(p, v)| self.get(*v).map(|g| (*p, g)))
    }
}

pub struct Tape<'s> {
    store: Option<&'s ParamStore>,
    nodes: Vec<Node>,
    bound: BTreeMap<ParamId, Var>,
    frozen: BTreeSet<ParamId>,
}

impl Default for Tape<'static> {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape<'static> {
    pub fn new() -> Self {
        Tape {
            store: None,
            nodes: Vec::new(),
            bound: BTreeMap::new(),
            frozen: BTreeSet::new(),
        }
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out`, the flat index of the broadcast source.
fn broadcast_map(out: &[usize], inp: &[usize]) -> Vec<usize> {
    let r = out.len();
    let off = r - inp.len();
    let mut strides = vec![0usize; r];
    let mut s = 1;
    for i in (0..inp.len()).rev() {
        if inp[i] != 1 {
            strides[off + i] = s;
        }
        s *= inp[i];
    }
    let n = numel(out);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; r];
    let mut cur = 0usize;
    for _ in 0..n {
        map.push(cur);
        for d in (0..r).rev() {
            idx[d] += 1;
            cur += strides[d];
            if idx[d] < out[d] {
                break;
            }
            cur -= strides[d] * out[d];
            idx[d] = 0;
        }
    }
    map
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - libm::log1p(libm::exp(-x.abs()))
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

impl<'s> Tape<'s> {
    pub fn with_params(store: &'s ParamStore) -> Self {
        Tape {
            store: Some(store),
            nodes: Vec::new(),
            bound: BTreeMap::new(),
            frozen: BTreeSet::new(),
        }
    }

    /// Binds the listed parameters as constants: they feed forward values but
    /// never receive gradients on this tape.
    pub fn freeze(&mut self, ids: &[ParamId]) {
        self.frozen.extend(ids.iter().copied());
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound.get(&id) {
            return *v;
        }
        let store = self.store.expect("tape has no parameter store");
        let t = store.get(id);
        let trainable = !self.frozen.contains(&id);
        let v = self.raw_leaf(t.shape().to_vec(), t.data().to_vec(), trainable);
        self.bound.insert(id, v);
        v
    }

    /// Current stored values of a parameter, without binding it.
    pub fn param_data(&self, id: ParamId) -> &'s [f64] {
        self.store.expect("tape has no parameter store").get(id).data()
    }

    /// Records a leaf; gradients are tracked iff the tensor requires them.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.raw_leaf(t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        if numel(shape) != data.len() {
            return Err(Error::shape("constant", shape, &[data.len()]));
        }
        Ok(self.raw_leaf(shape.to_vec(), data, false))
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.raw_leaf(Vec::new(), vec![value], false)
    }

    fn raw_leaf(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, shape: Vec<usize>, value: Vec<f64>, op: Op, rg: bool) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad: rg,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::from_fn(&n.shape, |i| n.value[i])
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Stop-gradient: a constant copy of `x`.
    pub fn detach(&mut self, x: Var) -> Var {
        let n = &self.nodes[x.0];
        let (s, v) = (n.shape.clone(), n.value.clone());
        self.raw_leaf(s, v, false)
    }

    // ---- elementwise --------------------------------------------------

    fn binary(&mut self, name: &'static str, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        let out_shape = broadcast_shape(sa, sb).ok_or_else(|| Error::shape(name, sa, sb))?;
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value: Vec<f64> = if sa == sb {
            va.iter().zip(vb).map(|(x, y)| f(*x, *y)).collect()
        } else {
            let ma = broadcast_map(&out_shape, sa);
            let mb = broadcast_map(&out_shape, sb);
            ma.iter().zip(&mb).map(|(i, j)| f(va[*i], vb[*j])).collect()
        };
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(name, out_shape, value, Op::Binary { kind, a, b }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", BinaryKind::Div, a, b)
    }

    fn unary(&mut self, name: &'static str, kind: UnaryKind, x: Var) -> Result<Var> {
        let n = &self.nodes[x.0];
        let value: Vec<f64> = n
            .value
            .iter()
            .map(|&v| match kind {
                UnaryKind::Exp => libm::exp(v),
                UnaryKind::Log => {
                    if v > 0.0 {
                        libm::log(v)
                    } else {
                        f64::NAN
                    }
                }
                UnaryKind::Sqrt => {
                    if v >= 0.0 {
                        libm::sqrt(v)
                    } else {
                        f64::NAN
                    }
                }
                UnaryKind::Sigmoid => sigmoid(v),
                UnaryKind::LogSigmoid => log_sigmoid(v),
                UnaryKind::Silu => v * sigmoid(v),
            })
            .collect();
        let shape = n.shape.clone();
        let rg = n.requires_grad;
        self.push(name, shape, value, Op::Unary { kind, x }, rg)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", UnaryKind::Exp, x)
    }

    /// Natural log; non-positive inputs are a numeric error.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary("log", UnaryKind::Log, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary("sqrt", UnaryKind::Sqrt, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", UnaryKind::Sigmoid, x)
    }

    /// `log(sigmoid(x))`, evaluated without overflow.
    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("log_sigmoid", UnaryKind::LogSigmoid, x)
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary("silu", UnaryKind::Silu, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let n = &self.nodes[x.0];
        let value = n.value.iter().map(|v| v * c).collect();
        let (shape, rg) = (n.shape.clone(), n.requires_grad);
        self.push("scale", shape, value, Op::Scale { x, c }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let n = &self.nodes[x.0];
        let value = n.value.iter().map(|v| v + c).collect();
        let (shape, rg) = (n.shape.clone(), n.requires_grad);
        self.push("add_scalar", shape, value, Op::Shift { x }, rg)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    // ---- linear algebra ------------------------------------------------

    /// `[m,k]·[k,n]` or batched `[b,m,k]·[b,k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, k, n, out_shape) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n, vec![*m, *n]),
            ([b1, m, k], [b2, k2, n]) if k == k2 && b1 == b2 => (*b1, *m, *k, *n, vec![*b1, *m, *n]),
            _ => return Err(Error::shape("matmul", &sa, &sb)),
        };
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let ao = bi * m * k;
            let bo = bi * k * n;
            let oo = bi * m * n;
            for i in 0..m {
                let row = &mut out[oo + i * n..oo + (i + 1) * n];
                for p in 0..k {
                    let av = va[ao + i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &vb[bo + p * n..bo + (p + 1) * n];
                    row.iter_mut().zip(brow).for_each(|(o, bv)| *o += av * bv);
                }
            }
        }
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push("matmul", out_shape, out, Op::Matmul { a, b, batch, m, k, n }, rg)
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let r = shape.len();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || core::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", &shape, perm));
        }
        let mut in_strides = vec![1usize; r];
        for i in (0..r.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * shape[i + 1];
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let total = numel(&shape);
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; r];
        let mut cur = 0usize;
        for _ in 0..total {
            map.push(cur);
            for d in (0..r).rev() {
                idx[d] += 1;
                cur += strides[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                cur -= strides[d] * out_shape[d];
                idx[d] = 0;
            }
        }
        let v = &self.nodes[x.0].value;
        let value = map.iter().map(|&i| v[i]).collect();
        let rg = self.requires_grad(x);
        self.push("permute", out_shape, value, Op::Permute { x, map }, rg)
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, x: Var, a: usize, b: usize) -> Result<Var> {
        let r = self.shape(x).len();
        if a >= r || b >= r {
            return Err(Error::shape("transpose", self.shape(x), &[a, b]));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(a, b);
        self.permute(x, &perm)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != numel(self.shape(x)) {
            return Err(Error::shape("reshape", self.shape(x), shape));
        }
        let value = self.nodes[x.0].value.clone();
        let rg = self.requires_grad(x);
        self.push("reshape", shape.to_vec(), value, Op::Reshape { x }, rg)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or(Error::Empty("concat"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", &base, &[axis]));
        }
        let mut extents = Vec::with_capacity(xs.len());
        for x in xs {
            let s = self.shape(*x);
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (p, q))| i == axis || p == q);
            if !ok {
                return Err(Error::shape("concat", &base, s));
            }
            extents.push(s[axis]);
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let total: usize = extents.iter().sum();
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (x, e) in xs.iter().zip(&extents) {
                let v = &self.nodes[x.0].value;
                value.extend_from_slice(&v[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = xs.iter().any(|x| self.requires_grad(*x));
        let op = Op::Concat {
            xs: xs.to_vec(),
            outer,
            inner,
            extents,
        };
        self.push("concat", shape, value, op, rg)
    }

    /// Slice `len` entries of `axis` starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape("narrow", &shape, &[axis, start, len]));
        }
        let (outer, extent, inner) = axis_split(&shape, axis);
        let v = &self.nodes[x.0].value;
        let mut value = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            value.extend_from_slice(&v[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.requires_grad(x);
        let op = Op::Narrow {
            x,
            outer,
            inner,
            extent,
            start,
            len,
        };
        self.push("narrow", out_shape, value, op, rg)
    }

    // ---- reductions ------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).iter().sum();
        let rg = self.requires_grad(x);
        self.push("sum", Vec::new(), vec![s], Op::SumAll { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::Empty("mean"));
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Sums out `axis` (the axis is removed from the shape).
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("sum_axis", &shape, &[axis]));
        }
        let (outer, extent, inner) = axis_split(&shape, axis);
        let v = &self.nodes[x.0].value;
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..extent {
                let src = &v[(o * extent + j) * inner..(o * extent + j + 1) * inner];
                out[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(a, b)| *a += b);
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let rg = self.requires_grad(x);
        let op = Op::SumAxis {
            x,
            outer,
            extent,
            inner,
        };
        self.push("sum_axis", out_shape, out, op, rg)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let extent = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| Error::shape("mean_axis", self.shape(x), &[axis]))?;
        if extent == 0 {
            return Err(Error::Empty("mean_axis"));
        }
        let s = self.sum_axis(x, axis)?;
        self.scale(s, 1.0 / extent as f64)
    }

    fn softmax_like(&mut self, x: Var, axis: usize, log: bool) -> Result<Var> {
        let name = if log { "log_softmax" } else { "softmax" };
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::shape(name, &shape, &[axis]));
        }
        let (outer, extent, inner) = axis_split(&shape, axis);
        let v = &self.nodes[x.0].value;
        let mut out = vec![0.0; v.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * extent + j) * inner + i;
                let mx = (0..extent).map(|j| v[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..extent).map(|j| libm::exp(v[at(j)] - mx)).sum();
                let lz = libm::log(z);
                for j in 0..extent {
                    out[at(j)] = if log {
                        v[at(j)] - mx - lz
                    } else {
                        libm::exp(v[at(j)] - mx) / z
                    };
                }
            }
        }
        let rg = self.requires_grad(x);
        let op = if log {
            Op::LogSoftmax {
                x,
                outer,
                extent,
                inner,
            }
        } else {
            Op::Softmax {
                x,
                outer,
                extent,
                inner,
            }
        };
        self.push(name, shape, out, op, rg)
    }

    pub fn softmax_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_like(x, axis, false)
    }

    pub fn log_softmax_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_like(x, axis, true)
    }

    // ---- neural-network primitives ----------------------------------------

    /// 2-D convolution over `[N,C,H,W]` with weights `[O,C,kh,kw]` and optional bias `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (n, c, h, wd) = match sx.as_slice() {
            [n, c, h, w] => (*n, *c, *h, *w),
            _ => return Err(Error::shape("conv2d", &sx, &sw)),
        };
        let (o, kh, kw) = match sw.as_slice() {
            [o, c2, kh, kw] if *c2 == c => (*o, *kh, *kw),
            _ => return Err(Error::shape("conv2d", &sx, &sw)),
        };
        if stride == 0 || h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::shape("conv2d", &sx, &sw));
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(Error::shape("conv2d", &sw, self.shape(b)));
            }
        }
        let geom = ConvGeom {
            n,
            c,
            h,
            w: wd,
            o,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (wd + 2 * pad - kw) / stride + 1,
        };
        let (ck, hwo) = (geom.ck(), geom.hw_out());
        let xv = &self.nodes[x.0].value;
        let mut cols = vec![0.0; n * ck * hwo];
        for ni in 0..n {
            let dst = &mut cols[ni * ck * hwo..(ni + 1) * ck * hwo];
            im2col(&xv[ni * c * h * wd..(ni + 1) * c * h * wd], &geom, dst);
        }
        let wv = &self.nodes[w.0].value;
        let mut out = vec![0.0; n * o * hwo];
        for ni in 0..n {
            let col = &cols[ni * ck * hwo..(ni + 1) * ck * hwo];
            for oi in 0..o {
                let row = &mut out[(ni * o + oi) * hwo..(ni * o + oi + 1) * hwo];
                if let Some(b) = b {
                    row.fill(self.nodes[b.0].value[oi]);
                }
                for p in 0..ck {
                    let wvp = wv[oi * ck + p];
                    if wvp == 0.0 {
                        continue;
                    }
                    row.iter_mut()
                        .zip(&col[p * hwo..(p + 1) * hwo])
                        .for_each(|(r, cv)| *r += wvp * cv);
                }
            }
        }
        let rg = self.requires_grad(x) || self.requires_grad(w) || b.is_some_and(|b| self.requires_grad(b));
        let cols = if rg { cols } else { Vec::new() };
        let shape = vec![n, o, geom.ho, geom.wo];
        self.push("conv2d", shape, out, Op::Conv2d { x, w, b, geom, cols }, rg)
    }

    /// Nearest-neighbour upsampling of the two trailing axes by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let [n, c, h, w] = s.as_slice() else {
            return Err(Error::shape("upsample_nearest", &s, &[factor]));
        };
        if factor == 0 {
            return Err(Error::shape("upsample_nearest", &s, &[factor]));
        }
        let (n, c, h, w) = (*n, *c, *h, *w);
        let (ho, wo) = (h * factor, w * factor);
        let v = &self.nodes[x.0].value;
        let mut out = vec![0.0; n * c * ho * wo];
        for nc in 0..n * c {
            for i in 0..ho {
                for j in 0..wo {
                    out[nc * ho * wo + i * wo + j] = v[nc * h * w + (i / factor) * w + j / factor];
                }
            }
        }
        let rg = self.requires_grad(x);
        self.push("upsample_nearest", vec![n, c, ho, wo], out, Op::Upsample { x, factor }, rg)
    }

    /// Parameter-free group normalization over `[N, C, ...]`.
    pub fn group_norm(&mut self, x: Var, groups: usize, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || groups == 0 || !s[1].is_multiple_of(groups) {
            return Err(Error::shape("group_norm", &s, &[groups]));
        }
        let n = s[0];
        let group_len = numel(&s[1..]) / groups;
        if group_len == 0 {
            return Err(Error::Empty("group_norm"));
        }
        let v = &self.nodes[x.0].value;
        let mut out = vec![0.0; v.len()];
        let mut rstd = Vec::with_capacity(n * groups);
        for gi in 0..n * groups {
            let seg = &v[gi * group_len..(gi + 1) * group_len];
            let mean = seg.iter().sum::<f64>() / group_len as f64;
            let var = seg.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / group_len as f64;
            let r = 1.0 / libm::sqrt(var + eps);
            rstd.push(r);
            out[gi * group_len..(gi + 1) * group_len]
                .iter_mut()
                .zip(seg)
                .for_each(|(o, a)| *o = (a - mean) * r);
        }
        let rg = self.requires_grad(x);
        let op = Op::GroupNorm {
            x,
            group_len,
            rstd,
        };
        self.push("group_norm", s, out, op, rg)
    }

    /// Gathers rows of a `[V, D]` table; output `[ids.len(), D]`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        let [rows, dim] = s.as_slice() else {
            return Err(Error::shape("embedding_lookup", &s, &[ids.len()]));
        };
        let (rows, dim) = (*rows, *dim);
        if let Some(bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid(
                "embedding_lookup",
                alloc::format!("id {bad} out of range for {rows} rows"),
            ));
        }
        let v = &self.nodes[table.0].value;
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(&v[i * dim..(i + 1) * dim]);
        }
        let rg = self.requires_grad(table);
        let op = Op::Embedding {
            table,
            ids: ids.to_vec(),
        };
        self.push("embedding_lookup", vec![ids.len(), dim], out, op, rg)
    }

    /// Per-row cross-entropy of `[n, V]` logits against class targets; output `[n]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        let [n, vocab] = s.as_slice() else {
            return Err(Error::shape("cross_entropy", &s, &[targets.len()]));
        };
        let (n, vocab) = (*n, *vocab);
        if targets.len() != n {
            return Err(Error::shape("cross_entropy", &s, &[targets.len()]));
        }
        if targets.iter().any(|&t| t >= vocab) {
            return Err(Error::invalid("cross_entropy", "target out of range"));
        }
        let v = &self.nodes[logits.0].value;
        let mut probs = vec![0.0; n * vocab];
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let row = &v[i * vocab..(i + 1) * vocab];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|a| libm::exp(a - mx)).sum();
            let lse = mx + libm::log(z);
            for (p, a) in probs[i * vocab..(i + 1) * vocab].iter_mut().zip(row) {
                *p = libm::exp(a - lse);
            }
            out.push(lse - row[targets[i]]);
        }
        let rg = self.requires_grad(logits);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        self.push("cross_entropy", vec![n], out, op, rg)
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ln = &self.nodes[loss.0];
        if ln.value.len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: ln.shape.clone(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .bound
            .iter()
            .filter(|(_, v)| self.nodes[v.0].requires_grad)
            .map(|(p, v)| (*p, *v))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Binary { kind, a, b } => {
                let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
                let same_a = na.shape == node.shape;
                let same_b = nb.shape == node.shape;
                let ma = (!same_a).then(|| broadcast_map(&node.shape, &na.shape));
                let mb = (!same_b).then(|| broadcast_map(&node.shape, &nb.shape));
                let ia = |i: usize| ma.as_ref().map_or(i, |m| m[i]);
                let ib = |i: usize| mb.as_ref().map_or(i, |m| m[i]);
                if self.rg(*a) {
                    let mut ga = vec![0.0; na.value.len()];
                    for (i, gi) in g.iter().enumerate() {
                        ga[ia(i)] += match kind {
                            BinaryKind::Add | BinaryKind::Sub => *gi,
                            BinaryKind::Mul => gi * nb.value[ib(i)],
                            BinaryKind::Div => gi / nb.value[ib(i)],
                        };
                    }
                    add_into(&mut grads[a.0], &ga);
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; nb.value.len()];
                    for (i, gi) in g.iter().enumerate() {
                        gb[ib(i)] += match kind {
                            BinaryKind::Add => *gi,
                            BinaryKind::Sub => -gi,
                            BinaryKind::Mul => gi * na.value[ia(i)],
                            BinaryKind::Div => {
                                let bv = nb.value[ib(i)];
                                -gi * na.value[ia(i)] / (bv * bv)
                            }
                        };
                    }
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::Unary { kind, x } => {
                let xv = &self.nodes[x.0].value;
                let y = &node.value;
                let gx: Vec<f64> = (0..g.len())
                    .map(|i| {
                        g[i] * match kind {
                            UnaryKind::Exp => y[i],
                            UnaryKind::Log => 1.0 / xv[i],
                            UnaryKind::Sqrt => 0.5 / y[i],
                            UnaryKind::Sigmoid => y[i] * (1.0 - y[i]),
                            UnaryKind::LogSigmoid => sigmoid(-xv[i]),
                            UnaryKind::Silu => {
                                let s = sigmoid(xv[i]);
                                s + xv[i] * s * (1.0 - s)
                            }
                        }
                    })
                    .collect();
                add_into(&mut grads[x.0], &gx);
            }
            Op::Scale { x, c } => {
                let gx: Vec<f64> = g.iter().map(|v| v * c).collect();
                add_into(&mut grads[x.0], &gx);
            }
            Op::Shift { x } | Op::Reshape { x } => add_into(&mut grads[x.0], g),
            Op::Matmul { a, b, batch, m, k, n } => {
                let (batch, m, k, n) = (*batch, *m, *k, *n);
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if self.rg(*a) {
                    let mut ga = vec![0.0; batch * m * k];
                    for bi in 0..batch {
                        for i in 0..m {
                            let grow = &g[(bi * m + i) * n..(bi * m + i + 1) * n];
                            for p in 0..k {
                                let brow = &vb[(bi * k + p) * n..(bi * k + p + 1) * n];
                                ga[(bi * m + i) * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            }
                        }
                    }
                    add_into(&mut grads[a.0], &ga);
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; batch * k * n];
                    for bi in 0..batch {
                        for i in 0..m {
                            let grow = &g[(bi * m + i) * n..(bi * m + i + 1) * n];
                            for p in 0..k {
                                let av = va[(bi * m + i) * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                gb[(bi * k + p) * n..(bi * k + p + 1) * n]
                                    .iter_mut()
                                    .zip(grow)
                                    .for_each(|(o, gv)| *o += av * gv);
                            }
                        }
                    }
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::Permute { x, map } => {
                let mut gx = vec![0.0; g.len()];
                for (i, &src) in map.iter().enumerate() {
                    gx[src] += g[i];
                }
                add_into(&mut grads[x.0], &gx);
            }
            Op::Concat {
                xs,
                outer,
                inner,
                extents,
            } => {
                let total: usize = extents.iter().sum();
                let mut offset = 0;
                for (x, e) in xs.iter().zip(extents) {
                    if self.rg(*x) {
                        let mut gx = Vec::with_capacity(outer * e * inner);
                        for o in 0..*outer {
                            let base = (o * total + offset) * inner;
                            gx.extend_from_slice(&g[base..base + e * inner]);
                        }
                        add_into(&mut grads[x.0], &gx);
                    }
                    offset += e;
                }
            }
            Op::Narrow {
                x,
                outer,
                inner,
                extent,
                start,
                len,
            } => {
                let mut gx = vec![0.0; outer * extent * inner];
                for o in 0..*outer {
                    let dst = (o * extent + start) * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                add_into(&mut grads[x.0], &gx);
            }
            Op::SumAll { x } => {
                let gx = vec![g[0]; self.nodes[x.0].value.len()];
                add_into(&mut grads[x.0], &gx);
            }
            Op::SumAxis {
                x,
                outer,
                extent,
                inner,
            } => {
                let mut gx = vec![0.0; outer * extent * inner];
                for o in 0..*outer {
                    for j in 0..*extent {
                        gx[(o * extent + j) * inner..(o * extent + j + 1) * inner]
                            .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                add_into(&mut grads[x.0], &gx);
            }
            Op::Softmax {
                x,
                outer,
                extent,
                inner,
            } => {
                let y = &node.value;
                let mut gx = vec![0.0; y.len()];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let at = |j: usize| (o * extent + j) * inner + i;
                        let dot: f64 = (0..*extent).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..*extent {
                            gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                add_into(&mut grads[x.0], &gx);
            }
            Op::LogSoftmax {
                x,
                outer,
                extent,
                inner,
            } => {
                let y = &node.value;
                let mut gx = vec![0.0; y.len()];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let at = |j: usize| (o * extent + j) * inner + i;
                        let gs: f64 = (0..*extent).map(|j| g[at(j)]).sum();
                        for j in 0..*extent {
                            gx[at(j)] = g[at(j)] - libm::exp(y[at(j)]) * gs;
                        }
                    }
                }
                add_into(&mut grads[x.0], &gx);
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let (ck, hwo, o) = (geom.ck(), geom.hw_out(), geom.o);
                if let Some(b) = b {
                    if self.rg(*b) {
                        let mut gb = vec![0.0; o];
                        for ni in 0..geom.n {
                            for (oi, gbo) in gb.iter_mut().enumerate() {
                                *gbo += g[(ni * o + oi) * hwo..(ni * o + oi + 1) * hwo].iter().sum::<f64>();
                            }
                        }
                        add_into(&mut grads[b.0], &gb);
                    }
                }
                if self.rg(*w) {
                    let mut gw = vec![0.0; o * ck];
                    for ni in 0..geom.n {
                        let col = &cols[ni * ck * hwo..(ni + 1) * ck * hwo];
                        for oi in 0..o {
                            let grow = &g[(ni * o + oi) * hwo..(ni * o + oi + 1) * hwo];
                            for p in 0..ck {
                                gw[oi * ck + p] +=
                                    grow.iter().zip(&col[p * hwo..(p + 1) * hwo]).map(|(a, c)| a * c).sum::<f64>();
                            }
                        }
                    }
                    add_into(&mut grads[w.0], &gw);
                }
                if self.rg(*x) {
                    let wv = &self.nodes[w.0].value;
                    let chw = geom.c * geom.h * geom.w;
                    let mut gx = vec![0.0; geom.n * chw];
                    let mut gcol = vec![0.0; ck * hwo];
                    for ni in 0..geom.n {
                        gcol.fill(0.0);
                        for oi in 0..o {
                            let grow = &g[(ni * o + oi) * hwo..(ni * o + oi + 1) * hwo];
                            for p in 0..ck {
                                let wvp = wv[oi * ck + p];
                                gcol[p * hwo..(p + 1) * hwo]
                                    .iter_mut()
                                    .zip(grow)
                                    .for_each(|(c, gv)| *c += wvp * gv);
                            }
                        }
                        col2im(&gcol, geom, &mut gx[ni * chw..(ni + 1) * chw]);
                    }
                    add_into(&mut grads[x.0], &gx);
                }
            }
            Op::Upsample { x, factor } => {
                let s = &self.nodes[x.0].shape;
                let (h, w) = (s[2], s[3]);
                let (ho, wo) = (h * factor, w * factor);
                let mut gx = vec![0.0; self.nodes[x.0].value.len()];
                for nc in 0..s[0] * s[1] {
                    for i in 0..ho {
                        for j in 0..wo {
                            gx[nc * h * w + (i / factor) * w + j / factor] += g[nc * ho * wo + i * wo + j];
                        }
                    }
                }
                add_into(&mut grads[x.0], &gx);
            }
            Op::GroupNorm {
                x,
                group_len,
                rstd,
            } => {
                let y = &node.value;
                let gl = *group_len;
                let mut gx = vec![0.0; y.len()];
                for (gi, r) in rstd.iter().enumerate() {
                    let seg = gi * gl..(gi + 1) * gl;
                    let gs = &g[seg.clone()];
                    let ys = &y[seg.clone()];
                    let mg = gs.iter().sum::<f64>() / gl as f64;
                    let mgy = gs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>() / gl as f64;
                    for (k, idx) in seg.enumerate() {
                        gx[idx] = r * (gs[k] - mg - ys[k] * mgy);
                    }
                }
                add_into(&mut grads[x.0], &gx);
            }
            Op::Embedding { table, ids } => {
                let dim = self.nodes[table.0].shape[1];
                let mut gt = vec![0.0; self.nodes[table.0].value.len()];
                for (row, &id) in ids.iter().enumerate() {
                    gt[id * dim..(id + 1) * dim]
                        .iter_mut()
                        .zip(&g[row * dim..(row + 1) * dim])
                        .for_each(|(a, b)| *a += b);
                }
                add_into(&mut grads[table.0], &gt);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let vocab = self.nodes[logits.0].shape[1];
                let mut gl = vec![0.0; probs.len()];
                for (i, &t) in targets.iter().enumerate() {
                    for j in 0..vocab {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        gl[i * vocab + j] = g[i] * (probs[i * vocab + j] - onehot);
                    }
                }
                add_into(&mut grads[logits.0], &gl);
            }
        }
    }
}

fn im2col(x: &[f64], geom: &ConvGeom, cols: &mut [f64]) {
    let hwo = geom.hw_out();
    for ci in 0..geom.c {
        for ki in 0..geom.kh {
            for kj in 0..geom.kw {
                let row = (ci * geom.kh + ki) * geom.kw + kj;
                let dst = &mut cols[row * hwo..(row + 1) * hwo];
                for oy in 0..geom.ho {
                    let iy = (oy * geom.stride + ki) as isize - geom.pad as isize;
                    for ox in 0..geom.wo {
                        let ix = (ox * geom.stride + kj) as isize - geom.pad as isize;
                        dst[oy * geom.wo + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < geom.h && (ix as usize) < geom.w {
                            x[(ci * geom.h + iy as usize) * geom.w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], geom: &ConvGeom, gx: &mut [f64]) {
    let hwo = geom.hw_out();
    for ci in 0..geom.c {
        for ki in 0..geom.kh {
            for kj in 0..geom.kw {
                let row = (ci * geom.kh + ki) * geom.kw + kj;
                let src = &cols[row * hwo..(row + 1) * hwo];
                for oy in 0..geom.ho {
                    let iy = (oy * geom.stride + ki) as isize - geom.pad as isize;
                    if iy < 0 || iy as usize >= geom.h {
                        continue;
                    }
                    for ox in 0..geom.wo {
                        let ix = (ox * geom.stride + kj) as isize - geom.pad as isize;
                        if ix >= 0 && (ix as usize) < geom.w {
                            gx[(ci * geom.h + iy as usize) * geom.w + ix as usize] += src[oy * geom.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(t: &mut Tape, shape: &[usize], data: &[f64]) -> Var {
        let x = Tensor::new(shape, data.to_vec()).unwrap().with_requires_grad(true);
        t.leaf(&x)
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let eye = leaf(&mut t, &[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let a_vals = [1., -2., 3., 4., 5.5, -6., 7., 8., 9.];
        let a = leaf(&mut t, &[3, 3], &a_vals);
        let y = t.matmul(eye, a).unwrap();
        assert_eq!(t.value(y), &a_vals);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[4], &[0.3; 4]);
        let y = t.softmax_axis(x, 0).unwrap();
        assert_eq!(t.value(y), &[0.25; 4]);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_of_mean_square() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[2], &[1., 2.]);
        let sq = t.square(x).unwrap();
        let m = t.mean(sq).unwrap();
        let g = t.backward(m).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn gradients_accumulate_across_uses() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[1], &[3.0]);
        let a = t.scale(x, 2.0).unwrap();
        let b = t.add(a, x).unwrap();
        let g = t.backward(b).unwrap();
        assert_eq!(g.get(x).unwrap(), &[3.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[2], &[1., 2.]);
        assert!(matches!(t.backward(x), Err(Error::NonScalarLoss { .. })));
    }

    #[test]
    fn shape_errors_name_op_and_shapes() {
        let mut t = Tape::new();
        let a = leaf(&mut t, &[2, 3], &[0.; 6]);
        let b = leaf(&mut t, &[2, 3], &[0.; 6]);
        let err = t.matmul(a, b).unwrap_err();
        assert_eq!(err, Error::shape("matmul", &[2, 3], &[2, 3]));
        assert!(alloc::format!("{err}").contains("matmul"));
    }

    #[test]
    fn log_of_zero_is_a_numeric_error() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[1], &[0.0]);
        assert_eq!(t.log(x).unwrap_err(), Error::NonFinite { op: "log" });
    }

    #[test]
    fn broadcasting_reduces_in_backward() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let b = leaf(&mut t, &[3], &[10., 20., 30.]);
        let y = t.mul(x, b).unwrap();
        assert_eq!(t.value(y), &[10., 40., 90., 40., 100., 180.]);
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap(), &[5., 7., 9.]);
    }

    #[test]
    fn cross_entropy_of_confident_prediction_is_zero() {
        let mut t = Tape::new();
        let logits = leaf(&mut t, &[1, 3], &[0.0, 800.0, 0.0]);
        let ce = t.cross_entropy(logits, &[1]).unwrap();
        assert!(t.value(ce)[0].abs() < 1e-9);
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::full(&[2], 1.0)).unwrap();
        let b = store.add("b", Tensor::full(&[2], 2.0)).unwrap();
        let mut t = Tape::with_params(&store);
        t.freeze(&[b]);
        let (va, vb) = (t.param(a), t.param(b));
        let y = t.mul(va, vb).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.param(a).unwrap(), &[2.0, 2.0]);
        assert!(g.param(b).is_none());
    }
}
