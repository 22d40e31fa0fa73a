//! Cross-modal attention: per-frame global visual features queried by audio,
//! and global audio features queried by the result.
//!
//! The audio query is pooled before attending (time average, then frequency
//! average), so audio-to-visual attention yields a single attended vector and
//! the spatial average that follows it is the identity.

use alloc::format;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, GroupNorm, Linear};
use crate::params::{ParamId, ParamStore};

/// Guards the L2 normalization against an all-zero feature.
pub const NORMALIZE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CamConfig {
    pub dim_visual: usize,
    pub dim_audio: usize,
    pub common_dim: usize,
    pub groups: usize,
}

/// Scaled dot-product attention over batched rows.
///
/// `q: [n, m_q, d]`, `k: [n, m, d]`, `v: [n, m, d_v]` → `(out [n, m_q, d_v], weights [n, m_q, m])`.
pub fn attend(t: &mut Tape, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let (qs, ks, vs) = (t.shape(q).to_vec(), t.shape(k).to_vec(), t.shape(v).to_vec());
    if qs.len() != 3 || ks.len() != 3 || vs.len() != 3 || qs[0] != ks[0] || ks[0] != vs[0] || qs[2] != ks[2] || ks[1] != vs[1] {
        return Err(Error::shape("attend", &qs, &ks));
    }
    let kt = t.transpose(k, 1, 2)?;
    let scores = t.matmul(q, kt)?;
    let scores = t.scale(scores, 1.0 / libm::sqrt(qs[2] as f64))?;
    let w = t.softmax_axis(scores, 2)?;
    let out = t.matmul(w, v)?;
    Ok((out, w))
}

/// `x / ‖x‖₂` along the last axis of `[n, d]`.
pub fn l2_normalize(t: &mut Tape, x: Var) -> Result<Var> {
    let s = t.shape(x).to_vec();
    if s.len() != 2 {
        return Err(Error::shape("l2_normalize", &s, &[0, 0]));
    }
    let sq = t.square(x)?;
    let ss = t.sum_axis(sq, 1)?;
    let ss = t.add_scalar(ss, NORMALIZE_EPS)?;
    let norm = t.sqrt(ss)?;
    let norm = t.reshape(norm, &[s[0], 1])?;
    t.div(x, norm)
}

#[derive(Debug, Clone)]
struct Projection {
    conv1: Conv2d,
    norm: GroupNorm,
    conv2: Conv2d,
}

impl Projection {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, din: usize, cfg: &CamConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::pointwise(store, &format!("{name}/conv1"), din, cfg.common_dim, rng)?,
            norm: GroupNorm::new(store, &format!("{name}/norm"), cfg.groups, cfg.common_dim)?,
            conv2: Conv2d::pointwise(store, &format!("{name}/conv2"), cfg.common_dim, cfg.common_dim, rng)?,
        })
    }

    fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let h = self.conv1.forward(t, x)?;
        let h = self.norm.forward(t, h)?;
        let h = t.silu(h)?;
        self.conv2.forward(t, h)
    }
}

#[derive(Debug, Clone)]
struct AttnHead {
    q: Linear,
    k: Linear,
    v: Linear,
}

impl AttnHead {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            q: Linear::new(store, &format!("{name}/q"), d, d, rng)?,
            k: Linear::new(store, &format!("{name}/k"), d, d, rng)?,
            v: Linear::new(store, &format!("{name}/v"), d, d, rng)?,
        })
    }

    /// `query: [n, d]`, `grid: [n, m, d]` → `(attended [n, d], weights [n, m])`.
    fn forward(&self, t: &mut Tape, query: Var, grid: Var) -> Result<(Var, Var)> {
        let (n, m, d) = {
            let s = t.shape(grid);
            (s[0], s[1], s[2])
        };
        let q = self.q.forward(t, query)?;
        let q = t.reshape(q, &[n, 1, d])?;
        let k = self.k.forward(t, grid)?;
        let v = self.v.forward(t, grid)?;
        let (out, w) = attend(t, q, k, v)?;
        Ok((t.reshape(out, &[n, d])?, t.reshape(w, &[n, m])?))
    }
}

/// Per-frame outputs of [`Cam::forward`].
#[derive(Debug, Clone, Copy)]
pub struct CamOutput {
    /// Audio-associated global visual features `[n, d]`, unit norm.
    pub h_v: Var,
    /// Visual-associated global audio features `[n, d]`, unit norm.
    pub h_a: Var,
    /// Audio-to-visual weights over the `h·w` visual positions, `[n, h·w]`.
    pub visual_map: Var,
    /// Visual-to-audio weights over the `f·t` audio positions, `[n, f·t]`.
    pub audio_map: Var,
}

#[derive(Debug, Clone)]
pub struct Cam {
    pub cfg: CamConfig,
    proj_v: Projection,
    proj_a: Projection,
    a2v: AttnHead,
    v2a: AttnHead,
}

impl Cam {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: CamConfig, rng: &mut R) -> Result<Self> {
        if cfg.common_dim == 0 || cfg.groups == 0 || !cfg.common_dim.is_multiple_of(cfg.groups) {
            return Err(Error::Config(format!("common dim {} not divisible into {} groups", cfg.common_dim, cfg.groups)));
        }
        Ok(Self {
            cfg,
            proj_v: Projection::new(store, "cam/proj_visual", cfg.dim_visual, &cfg, rng)?,
            proj_a: Projection::new(store, "cam/proj_audio", cfg.dim_audio, &cfg, rng)?,
            a2v: AttnHead::new(store, "cam/a2v", cfg.common_dim, rng)?,
            v2a: AttnHead::new(store, "cam/v2a", cfg.common_dim, rng)?,
        })
    }

    pub fn params(store: &ParamStore) -> alloc::vec::Vec<ParamId> {
        store.ids_with_prefix("cam/")
    }

    /// Project `[n, d_in, a, b]` into the common space and flatten to `[n, a·b, d]`.
    fn common(&self, t: &mut Tape, proj: &Projection, z: Var) -> Result<Var> {
        let g = proj.forward(t, z)?;
        let s = t.shape(g).to_vec();
        let g = t.reshape(g, &[s[0], s[1], s[2] * s[3]])?;
        t.transpose(g, 1, 2)
    }

    /// `z_v: [n, d_v, h, w]` and `z_a: [n, d_a, f, t]`, one row per frame.
    pub fn forward(&self, t: &mut Tape, z_v: Var, z_a: Var) -> Result<CamOutput> {
        let (sv, sa) = (t.shape(z_v).to_vec(), t.shape(z_a).to_vec());
        if sv.len() != 4 || sa.len() != 4 || sv[0] != sa[0] || sv[1] != self.cfg.dim_visual || sa[1] != self.cfg.dim_audio {
            return Err(Error::shape("cam_forward", &sv, &sa));
        }
        let g_v = self.common(t, &self.proj_v, z_v)?;
        // Average over time first, then over frequency: a single pooled query.
        let g_a4 = self.proj_a.forward(t, z_a)?;
        let time_avg = t.mean_axis(g_a4, 3)?;
        let query = t.mean_axis(time_avg, 2)?;
        let g_a = {
            let s = t.shape(g_a4).to_vec();
            let r = t.reshape(g_a4, &[s[0], s[1], s[2] * s[3]])?;
            t.transpose(r, 1, 2)?
        };
        let (h_v, visual_map) = self.a2v.forward(t, query, g_v)?;
        let (h_a, audio_map) = self.v2a.forward(t, h_v, g_a)?;
        Ok(CamOutput {
            h_v: l2_normalize(t, h_v)?,
            h_a: l2_normalize(t, h_a)?,
            visual_map,
            audio_map,
        })
    }

    /// The softmax weight grids used by [`Cam::forward`], reshaped to
    /// `[n, h, w]` and `[n, f, t]`.
    pub fn attention_maps(&self, t: &mut Tape, z_v: Var, z_a: Var) -> Result<(Var, Var)> {
        let (sv, sa) = (t.shape(z_v).to_vec(), t.shape(z_a).to_vec());
        let out = self.forward(t, z_v, z_a)?;
        let vm = t.reshape(out.visual_map, &[sv[0], sv[2], sv[3]])?;
        let am = t.reshape(out.audio_map, &[sa[0], sa[2], sa[3]])?;
        Ok((vm, am))
    }
}
