//! Slow scalar reference implementations.
//!
//! Each function here is written directly from the definition with plain
//! loops and shares no code with the production path it checks. Tests and
//! the `oracle-check` command compare the two.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::cam::{Cam, NORMALIZE_EPS};
use crate::hcl::{FeatureMeta, HclConfig, HclVariant, SelectionContext, VafMode};
use crate::nn::NORM_EPS;
use crate::params::ParamStore;
use crate::seqfmt::{Group, Layout, Reach, TokenKind};
use crate::Modality;

/// Direct 7-loop convolution. `x: [n,c,h,w]`, `w: [o,c,kh,kw]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(x: &[f64], xs: [usize; 4], w: &[f64], ws: [usize; 4], bias: Option<&[f64]>, stride: usize, pad: usize) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, wd] = xs;
    let [o, _, kh, kw] = ws;
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * o * ho * wo];
    for b in 0..n {
        for oc in 0..o {
            for y in 0..ho {
                for x0 in 0..wo {
                    let mut acc = bias.map_or(0.0, |bb| bb[oc]);
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (x0 * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ic) * h + iy as usize) * wd + ix as usize];
                                acc += xv * w[((oc * c + ic) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((b * o + oc) * ho + y) * wo + x0] = acc;
                }
            }
        }
    }
    (out, [n, o, ho, wo])
}

/// Softmax attention of one query row against `m` key/value rows.
pub fn attention_row(q: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let scale = 1.0 / libm::sqrt(q.len() as f64);
    let scores: Vec<f64> = keys.iter().map(|k| dot(q, k) * scale).collect();
    let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| libm::exp(s - mx)).collect();
    let z: f64 = e.iter().sum();
    let weights: Vec<f64> = e.iter().map(|x| x / z).collect();
    let mut out = vec![0.0; values.first().map_or(0, Vec::len)];
    for (wi, v) in weights.iter().zip(values) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += wi * x;
        }
    }
    (out, weights)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Nearest codebook row by sorting every (distance, index) pair.
pub fn nearest_brute(codebook: &[f64], dim: usize, features: &[f64]) -> Vec<usize> {
    let n = codebook.len() / dim;
    features
        .chunks(dim)
        .map(|z| {
            let mut all: Vec<(f64, usize)> = (0..n)
                .map(|e| {
                    let mut d = 0.0;
                    for j in 0..dim {
                        let diff = codebook[e * dim + j] - z[j];
                        d += diff * diff;
                    }
                    (d, e)
                })
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            all[0].1
        })
        .collect()
}

/// EMA statistic after `steps` updates that each observe the same value
/// `x`: `dᵗ·s₀ + (1 − dᵗ)·x`.
pub fn ema_closed_form(s0: f64, x: f64, decay: f64, steps: u32) -> f64 {
    let p = libm::pow(decay, steps as f64);
    p * s0 + (1.0 - p) * x
}

/// `exp(−Σ p log p)` via a count map.
pub fn perplexity(indices: &[usize]) -> f64 {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for i in indices {
        *counts.entry(*i).or_default() += 1;
    }
    let n = indices.len() as f64;
    libm::exp(-counts.values().map(|c| *c as f64 / n).map(|p| p * libm::log(p)).sum::<f64>())
}

/// Audit of one contrastive term computed by brute force.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTerm {
    pub positive: Vec<Vec<bool>>,
    pub negative: Vec<Vec<bool>>,
    pub zeta: Vec<Option<f64>>,
    pub weights: Vec<f64>,
    pub per_anchor: Vec<Option<f64>>,
    pub loss: f64,
}

fn vaf_ok(ctx: &SelectionContext, f: &FeatureMeta) -> bool {
    !(f.vaf_score < ctx.vaf_threshold)
}

/// One contrastive term: `h1` rows are anchors, `h2` rows candidates, both
/// `d`-wide and row-aligned with their metadata.
#[allow(clippy::too_many_arguments)]
pub fn contrastive_term(
    ctx: &SelectionContext,
    h1: &[f64],
    m1: &[FeatureMeta],
    h2: &[f64],
    m2: &[FeatureMeta],
    d: usize,
    cfg: &HclConfig,
    vaf: VafMode,
) -> OracleTerm {
    let (a, c) = (m1.len(), m2.len());
    let mut positive = vec![vec![false; c]; a];
    let mut negative = vec![vec![false; c]; a];
    for l in 0..a {
        for m in 0..c {
            let (x, y) = (&m1[l], &m2[m]);
            let same_feature = x.clip == y.clip && x.frame == y.frame && x.modality == y.modality;
            let dist = x.frame.abs_diff(y.frame);
            let mut pos = x.clip == y.clip && !same_feature && dist < ctx.window;
            if vaf == VafMode::CrossModalPairs && x.modality != y.modality && !(vaf_ok(ctx, x) && vaf_ok(ctx, y)) {
                pos = false;
            }
            positive[l][m] = pos;
            negative[l][m] = x.clip != y.clip && ctx.text_sim[x.clip * ctx.n_clips + y.clip] < ctx.tns_threshold;
        }
    }
    let mut zeta = vec![None; a];
    let mut live = vec![false; a];
    for l in 0..a {
        let negs = negative[l].iter().filter(|x| **x).count();
        if negs > 0 {
            zeta[l] = Some(c as f64 / negs as f64);
        }
        let anchor_ok = vaf != VafMode::Anchors || vaf_ok(ctx, &m1[l]);
        live[l] = anchor_ok && negs > 0 && positive[l].iter().any(|x| *x);
    }
    let survivors = live.iter().filter(|x| **x).count();
    let weights: Vec<f64> = live.iter().map(|x| if *x { 1.0 / survivors as f64 } else { 0.0 }).collect();
    let mut per_anchor = vec![None; a];
    let mut loss = 0.0;
    for l in 0..a {
        if !live[l] {
            continue;
        }
        let row = &h1[l * d..(l + 1) * d];
        let mut p = 0.0;
        let mut n = 0.0;
        for m in 0..c {
            let e = libm::exp(dot(row, &h2[m * d..(m + 1) * d]) / cfg.tau);
            if positive[l][m] {
                p += e;
            }
            if negative[l][m] {
                n += e;
            }
        }
        let zn = zeta[l].unwrap() * n;
        let li = if cfg.info_nce { -libm::log(p / (p + zn)) } else { -libm::log(p / zn) };
        per_anchor[l] = Some(li);
        loss += weights[l] * li;
    }
    OracleTerm { positive, negative, zeta, weights, per_anchor, loss }
}

fn metas(ctx: &SelectionContext, modality: Modality) -> Vec<FeatureMeta> {
    let mut out = Vec::new();
    for i in 0..ctx.clip.len() {
        out.push(FeatureMeta { clip: ctx.clip[i], frame: ctx.frame[i], modality, vaf_score: ctx.vaf_score[i] });
    }
    out
}

/// Full hybrid loss with named terms, in the same order as
/// [`crate::hcl::hcl_loss`].
pub fn hcl(ctx: &SelectionContext, h_v: &[f64], h_a: &[f64], d: usize, cfg: &HclConfig) -> (f64, Vec<(&'static str, OracleTerm)>) {
    let fv = metas(ctx, Modality::Visual);
    let fa = metas(ctx, Modality::Audio);
    let terms = match cfg.variant {
        HclVariant::ModalitySplit => vec![
            ("vv", contrastive_term(ctx, h_v, &fv, h_v, &fv, d, cfg, VafMode::Off)),
            ("aa", contrastive_term(ctx, h_a, &fa, h_a, &fa, d, cfg, VafMode::Off)),
            ("va", contrastive_term(ctx, h_v, &fv, h_a, &fa, d, cfg, VafMode::Anchors)),
            ("av", contrastive_term(ctx, h_a, &fa, h_v, &fv, d, cfg, VafMode::Anchors)),
        ],
        HclVariant::ModalityGathered => {
            let mut h = h_v.to_vec();
            h.extend_from_slice(h_a);
            let mut f = fv;
            f.extend(fa);
            vec![("gathered", contrastive_term(ctx, &h, &f, &h, &f, d, cfg, VafMode::CrossModalPairs))]
        }
    };
    (terms.iter().map(|t| t.1.loss).sum(), terms)
}

fn param<'a>(store: &'a ParamStore, name: &str) -> &'a [f64] {
    let id = store.find(name).unwrap_or_else(|| panic!("missing parameter {name}"));
    store.get(id).data()
}

/// `[n, din, p]` → `[n, dout, p]` pointwise conv, group norm, SiLU, pointwise conv.
fn project(store: &ParamStore, prefix: &str, x: &[f64], n: usize, din: usize, p: usize, d: usize, groups: usize) -> Vec<f64> {
    let pointwise = |name: &str, x: &[f64], cin: usize| {
        let w = param(store, &alloc::format!("{prefix}/{name}/weight"));
        let b = param(store, &alloc::format!("{prefix}/{name}/bias"));
        let mut out = vec![0.0; n * d * p];
        for s in 0..n {
            for o in 0..d {
                for q in 0..p {
                    let mut acc = b[o];
                    for i in 0..cin {
                        acc += w[o * cin + i] * x[(s * cin + i) * p + q];
                    }
                    out[(s * d + o) * p + q] = acc;
                }
            }
        }
        out
    };
    let mut h = pointwise("conv1", x, din);
    let gamma = param(store, &alloc::format!("{prefix}/norm/gamma"));
    let beta = param(store, &alloc::format!("{prefix}/norm/beta"));
    let per = d / groups;
    for s in 0..n {
        for g in 0..groups {
            let idx: Vec<usize> = (g * per..(g + 1) * per).flat_map(|ch| (0..p).map(move |q| (s * d + ch) * p + q)).collect();
            let mean = idx.iter().map(|i| h[*i]).sum::<f64>() / idx.len() as f64;
            let var = idx.iter().map(|i| (h[*i] - mean) * (h[*i] - mean)).sum::<f64>() / idx.len() as f64;
            for i in idx {
                let ch = (i / p) % d;
                let y = (h[i] - mean) / libm::sqrt(var + NORM_EPS) * gamma[ch] + beta[ch];
                h[i] = y / (1.0 + libm::exp(-y));
            }
        }
    }
    pointwise("conv2", &h, d)
}

fn linear(store: &ParamStore, prefix: &str, x: &[f64]) -> Vec<f64> {
    let w = param(store, &alloc::format!("{prefix}/weight"));
    let b = param(store, &alloc::format!("{prefix}/bias"));
    let dout = b.len();
    (0..dout).map(|o| b[o] + (0..x.len()).map(|i| x[i] * w[i * dout + o]).sum::<f64>()).collect()
}

fn normalize(x: &[f64]) -> Vec<f64> {
    let norm = libm::sqrt(dot(x, x) + NORMALIZE_EPS);
    x.iter().map(|v| v / norm).collect()
}

/// Stage-by-stage CAM forward. Returns `(h_v, h_a, visual_map, audio_map)`,
/// each flattened per sample.
#[allow(clippy::type_complexity)]
pub fn cam_forward(cam: &Cam, store: &ParamStore, z_v: &[f64], sv: [usize; 4], z_a: &[f64], sa: [usize; 4]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = cam.cfg.common_dim;
    let g = cam.cfg.groups;
    let (n, pv, pa) = (sv[0], sv[2] * sv[3], sa[2] * sa[3]);
    let gv = project(store, "cam/proj_visual", z_v, n, sv[1], pv, d, g);
    let ga = project(store, "cam/proj_audio", z_a, n, sa[1], pa, d, g);
    let (mut hv, mut ha, mut vm, mut am) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for s in 0..n {
        let rows = |grid: &[f64], p: usize| -> Vec<Vec<f64>> { (0..p).map(|q| (0..d).map(|c| grid[(s * d + c) * p + q]).collect()).collect() };
        let vis = rows(&gv, pv);
        let aud = rows(&ga, pa);
        let (f, tt) = (sa[2], sa[3]);
        // Mean over time per frequency row, then over frequency.
        let mut query = vec![0.0; d];
        for c in 0..d {
            let mut over_f = 0.0;
            for fi in 0..f {
                over_f += (0..tt).map(|ti| aud[fi * tt + ti][c]).sum::<f64>() / tt as f64;
            }
            query[c] = over_f / f as f64;
        }
        let head = |prefix: &str, q: &[f64], grid: &[Vec<f64>]| {
            let q = linear(store, &alloc::format!("{prefix}/q"), q);
            let k: Vec<Vec<f64>> = grid.iter().map(|r| linear(store, &alloc::format!("{prefix}/k"), r)).collect();
            let v: Vec<Vec<f64>> = grid.iter().map(|r| linear(store, &alloc::format!("{prefix}/v"), r)).collect();
            attention_row(&q, &k, &v)
        };
        let (h1, w1) = head("cam/a2v", &query, &vis);
        let (h2, w2) = head("cam/v2a", &h1, &aud);
        hv.extend(normalize(&h1));
        ha.extend(normalize(&h2));
        vm.extend(w1);
        am.extend(w2);
    }
    (hv, ha, vm, am)
}

/// Group reach by enumerating every ordered position pair under the causal
/// rule "a target at p is predicted from positions q < p".
pub fn enumerate_reach(layout: &Layout) -> BTreeMap<(Group, Group), Reach> {
    let mut members: BTreeMap<Group, Vec<usize>> = BTreeMap::new();
    for (p, slot) in layout.slots.iter().enumerate() {
        if slot.kind() != TokenKind::Special {
            members.entry(Group { kind: slot.kind(), frame: slot.frame() }).or_default().push(p);
        }
    }
    let mut out = BTreeMap::new();
    for (to, tps) in &members {
        for (from, fps) in &members {
            let mut seen = 0;
            for p in tps {
                for q in fps {
                    if q < p {
                        seen += 1;
                    }
                }
            }
            let reach = if seen == 0 {
                Reach::None
            } else if seen == tps.len() * fps.len() {
                Reach::Full
            } else {
                Reach::Partial
            };
            out.insert((*to, *from), reach);
        }
    }
    out
}

/// `1 + |text| + L·(|v| + |a| + 4)`.
pub fn masf_length(text: usize, frames: usize, visual: usize, audio: usize) -> usize {
    1 + text + frames * (visual + audio + 4)
}

/// Per-target weighted cross entropy `Σ γ·CE / Σ γ` from raw logits rows.
pub fn weighted_ce(logits: &[Vec<f64>], targets: &[usize], gammas: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((row, t), g) in logits.iter().zip(targets).zip(gammas) {
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + libm::log(row.iter().map(|x| libm::exp(x - mx)).sum::<f64>());
        num += g * (lse - row[*t]);
        den += g;
    }
    num / den
}

/// Sorted multiset of a token list, for permutation checks.
pub fn multiset(tokens: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = tokens.into_iter().collect();
    v.sort_unstable();
    v
}

/// Outcome of one named oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}
