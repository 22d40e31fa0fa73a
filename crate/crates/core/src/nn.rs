//! Layer building blocks. Each layer registers its parameters in a
//! [`ParamStore`] under a path prefix and binds them onto a [`Tape`] in
//! `forward`.

use alloc::format;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / libm::sqrt(fan_in as f64);
    Tensor::uniform(shape, -bound, bound, rng)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = fan_in_uniform(&[cout, cin, kernel, kernel], cin * kernel * kernel, rng);
        Ok(Self {
            weight: store.add(format!("{name}/weight"), w)?,
            bias: store.add(format!("{name}/bias"), Tensor::zeros(&[cout]))?,
            stride,
            pad,
        })
    }

    /// 3×3, stride 1, same padding.
    pub fn same3<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut R) -> Result<Self> {
        Self::new(store, name, cin, cout, 3, 1, 1, rng)
    }

    pub fn pointwise<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut R) -> Result<Self> {
        Self::new(store, name, cin, cout, 1, 1, 0, rng)
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let w = t.param(self.weight);
        let b = t.param(self.bias);
        t.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

/// `y = x·W + b` with `W` stored as `[in, out]`; accepts any leading shape.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, din: usize, dout: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            weight: store.add(format!("{name}/weight"), fan_in_uniform(&[din, dout], din, rng))?,
            bias: store.add(format!("{name}/bias"), Tensor::zeros(&[dout]))?,
            din,
            dout,
        })
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let shape = t.shape(x).to_vec();
        if shape.last() != Some(&self.din) {
            return Err(Error::shape("linear", &shape, &[self.din, self.dout]));
        }
        let rows = shape[..shape.len() - 1].iter().product();
        let flat = t.reshape(x, &[rows, self.din])?;
        let w = t.param(self.weight);
        let b = t.param(self.bias);
        let y = t.matmul(flat, w)?;
        let y = t.add(y, b)?;
        let mut out = shape;
        *out.last_mut().expect("non-empty") = self.dout;
        t.reshape(y, &out)
    }
}

/// Group normalization with a per-channel affine transform.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub groups: usize,
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const NORM_EPS: f64 = 1e-6;

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, groups: usize, channels: usize) -> Result<Self> {
        if groups == 0 || !channels.is_multiple_of(groups) {
            return Err(Error::Config(format!("{name}: {channels} channels not divisible into {groups} groups")));
        }
        Ok(Self {
            groups,
            channels,
            gamma: store.add(format!("{name}/gamma"), Tensor::full(&[channels], 1.0))?,
            beta: store.add(format!("{name}/beta"), Tensor::zeros(&[channels]))?,
        })
    }

    /// Input `[N, C, ...]`.
    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let rank = t.shape(x).len();
        let y = t.group_norm(x, self.groups, NORM_EPS)?;
        let mut bshape = alloc::vec![1usize; rank - 1];
        bshape[0] = self.channels;
        let g = t.param(self.gamma);
        let g = t.reshape(g, &bshape)?;
        let b = t.param(self.beta);
        let b = t.reshape(b, &bshape)?;
        let y = t.mul(y, g)?;
        t.add(y, b)
    }
}

/// Layer normalization over the trailing axis of `[n, d]`.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}/gamma"), Tensor::full(&[dim], 1.0))?,
            beta: store.add(format!("{name}/beta"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let y = t.group_norm(x, 1, NORM_EPS)?;
        let g = t.param(self.gamma);
        let b = t.param(self.beta);
        let y = t.mul(y, g)?;
        t.add(y, b)
    }
}

/// norm → SiLU → conv, twice, plus a (projected) skip connection.
#[derive(Debug, Clone)]
pub struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, groups: usize, cin: usize, cout: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            norm1: GroupNorm::new(store, &format!("{name}/norm1"), groups, cin)?,
            conv1: Conv2d::same3(store, &format!("{name}/conv1"), cin, cout, rng)?,
            norm2: GroupNorm::new(store, &format!("{name}/norm2"), groups, cout)?,
            conv2: Conv2d::same3(store, &format!("{name}/conv2"), cout, cout, rng)?,
            skip: if cin != cout {
                Some(Conv2d::pointwise(store, &format!("{name}/skip"), cin, cout, rng)?)
            } else {
                None
            },
        })
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let h = self.norm1.forward(t, x)?;
        let h = t.silu(h)?;
        let h = self.conv1.forward(t, h)?;
        let h = self.norm2.forward(t, h)?;
        let h = t.silu(h)?;
        let h = self.conv2.forward(t, h)?;
        let skip = match &self.skip {
            Some(s) => s.forward(t, x)?,
            None => x,
        };
        t.add(skip, h)
    }
}

/// Single-head spatial self-attention with a residual connection.
#[derive(Debug, Clone)]
pub struct AttnBlock {
    norm: GroupNorm,
    q: Conv2d,
    k: Conv2d,
    v: Conv2d,
    proj: Conv2d,
}

impl AttnBlock {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, groups: usize, channels: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            norm: GroupNorm::new(store, &format!("{name}/norm"), groups, channels)?,
            q: Conv2d::pointwise(store, &format!("{name}/q"), channels, channels, rng)?,
            k: Conv2d::pointwise(store, &format!("{name}/k"), channels, channels, rng)?,
            v: Conv2d::pointwise(store, &format!("{name}/v"), channels, channels, rng)?,
            proj: Conv2d::pointwise(store, &format!("{name}/proj"), channels, channels, rng)?,
        })
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let s = t.shape(x).to_vec();
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let h = self.norm.forward(t, x)?;
        let q = self.q.forward(t, h)?;
        let k = self.k.forward(t, h)?;
        let v = self.v.forward(t, h)?;
        let q = t.reshape(q, &[n, c, hw])?;
        let q = t.transpose(q, 1, 2)?;
        let k = t.reshape(k, &[n, c, hw])?;
        let scores = t.matmul(q, k)?;
        let scores = t.scale(scores, 1.0 / libm::sqrt(c as f64))?;
        let attn = t.softmax_axis(scores, 2)?;
        let v = t.reshape(v, &[n, c, hw])?;
        let vt = t.transpose(v, 1, 2)?;
        let out = t.matmul(attn, vt)?;
        let out = t.transpose(out, 1, 2)?;
        let out = t.reshape(out, &s)?;
        let out = self.proj.forward(t, out)?;
        t.add(x, out)
    }
}
