//! Hybrid contrastive learning over per-frame global features.
//!
//! Positives come from the same clip within a frame window; negatives are
//! frames of other clips whose text similarity is below a threshold; pairs
//! that fail the text test are neither. Audio/visual relatedness filtering
//! removes weak clips as anchors of the inter-modal terms only.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::Modality;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureMeta {
    pub clip: usize,
    pub frame: usize,
    pub modality: Modality,
    pub vaf_score: f64,
}

/// Batch description for `B` frames; `H_v` and `H_a` rows align with it.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionContext {
    pub clip: Vec<usize>,
    pub frame: Vec<usize>,
    pub vaf_score: Vec<f64>,
    /// Row-major `n_clips × n_clips` text similarity.
    pub text_sim: Vec<f64>,
    pub n_clips: usize,
    pub vaf_threshold: f64,
    pub tns_threshold: f64,
    pub window: usize,
}

impl SelectionContext {
    pub const DEFAULT_VAF_THRESHOLD: f64 = 20.0;
    pub const DEFAULT_TNS_THRESHOLD: f64 = 0.85;
    pub const DEFAULT_WINDOW: usize = 2;

    pub fn new(clip: Vec<usize>, frame: Vec<usize>, vaf_score: Vec<f64>, text_sim: Vec<f64>, n_clips: usize) -> Result<Self> {
        let ctx = Self {
            clip,
            frame,
            vaf_score,
            text_sim,
            n_clips,
            vaf_threshold: Self::DEFAULT_VAF_THRESHOLD,
            tns_threshold: Self::DEFAULT_TNS_THRESHOLD,
            window: Self::DEFAULT_WINDOW,
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn len(&self) -> usize {
        self.clip.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clip.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.clip.len();
        if self.frame.len() != b || self.vaf_score.len() != b {
            return Err(Error::invalid("selection_context", "per-frame arrays differ in length"));
        }
        if self.text_sim.len() != self.n_clips * self.n_clips {
            return Err(Error::invalid("selection_context", "text_sim must be n_clips × n_clips"));
        }
        if self.clip.iter().any(|c| *c >= self.n_clips) {
            return Err(Error::invalid("selection_context", "clip id out of range"));
        }
        if self.window == 0 || !self.vaf_threshold.is_finite() || !self.tns_threshold.is_finite() {
            return Err(Error::invalid("selection_context", "window must be ≥ 1 and thresholds finite"));
        }
        for i in 0..self.n_clips {
            if (self.sim(i, i) - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("selection_context", "text_sim diagonal must be 1"));
            }
            for j in 0..self.n_clips {
                let s = self.sim(i, j);
                if !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&s) || (s - self.sim(j, i)).abs() > 1e-9 {
                    return Err(Error::invalid("selection_context", "text_sim must be symmetric within [-1, 1]"));
                }
            }
        }
        for i in 0..b {
            for j in 0..i {
                if self.clip[i] == self.clip[j] && self.frame[i] == self.frame[j] {
                    return Err(Error::invalid("selection_context", "duplicate (clip, frame) entry"));
                }
            }
        }
        Ok(())
    }

    pub fn sim(&self, a: usize, b: usize) -> f64 {
        self.text_sim[a * self.n_clips + b]
    }

    pub fn features(&self, modality: Modality) -> Vec<FeatureMeta> {
        (0..self.len())
            .map(|i| FeatureMeta { clip: self.clip[i], frame: self.frame[i], modality, vaf_score: self.vaf_score[i] })
            .collect()
    }

    pub fn passes_vaf(&self, f: &FeatureMeta) -> bool {
        f.vaf_score >= self.vaf_threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HclVariant {
    ModalitySplit,
    ModalityGathered,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HclConfig {
    pub tau: f64,
    pub alpha: f64,
    pub variant: HclVariant,
    /// Use `−log P/(P + ζN)` instead of `−log P/(ζN)`.
    pub info_nce: bool,
}

impl Default for HclConfig {
    fn default() -> Self {
        Self { tau: 0.1, alpha: 1.0, variant: HclVariant::ModalitySplit, info_nce: false }
    }
}

fn is_self(a: &FeatureMeta, b: &FeatureMeta) -> bool {
    a.clip == b.clip && a.frame == b.frame && a.modality == b.modality
}

fn is_positive(a: &FeatureMeta, b: &FeatureMeta, window: usize) -> bool {
    a.clip == b.clip && !is_self(a, b) && a.frame.abs_diff(b.frame) < window
}

fn is_negative(ctx: &SelectionContext, a: &FeatureMeta, b: &FeatureMeta) -> bool {
    a.clip != b.clip && ctx.sim(a.clip, b.clip) < ctx.tns_threshold
}

pub fn build_positive_mask(ctx: &SelectionContext, anchors: &[FeatureMeta], candidates: &[FeatureMeta]) -> Vec<bool> {
    anchors
        .iter()
        .flat_map(|a| candidates.iter().map(move |c| is_positive(a, c, ctx.window)))
        .collect()
}

pub fn build_negative_mask(ctx: &SelectionContext, anchors: &[FeatureMeta], candidates: &[FeatureMeta]) -> Vec<bool> {
    anchors.iter().flat_map(|a| candidates.iter().map(move |c| is_negative(ctx, a, c))).collect()
}

/// `|H₂| / #negatives`.
pub fn zeta(candidates: usize, negatives: usize, anchor: usize) -> Result<f64> {
    if negatives == 0 {
        return Err(Error::NoNegatives { anchor });
    }
    Ok(candidates as f64 / negatives as f64)
}

/// How relatedness filtering applies to a contrastive term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VafMode {
    Off,
    /// Filtered anchors get weight zero.
    Anchors,
    /// Cross-modal positive pairs touching a filtered feature are dropped.
    CrossModalPairs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub anchors: usize,
    pub candidates: usize,
    pub positive: Vec<bool>,
    pub negative: Vec<bool>,
    pub vaf_anchor: Vec<bool>,
    pub zeta: Vec<Option<f64>>,
}

impl MaskSet {
    pub fn build(ctx: &SelectionContext, anchors: &[FeatureMeta], candidates: &[FeatureMeta], vaf: VafMode) -> Self {
        let mut positive = build_positive_mask(ctx, anchors, candidates);
        let negative = build_negative_mask(ctx, anchors, candidates);
        if vaf == VafMode::CrossModalPairs {
            for (i, a) in anchors.iter().enumerate() {
                for (j, c) in candidates.iter().enumerate() {
                    if a.modality != c.modality && !(ctx.passes_vaf(a) && ctx.passes_vaf(c)) {
                        positive[i * candidates.len() + j] = false;
                    }
                }
            }
        }
        let vaf_anchor = anchors.iter().map(|a| vaf != VafMode::Anchors || ctx.passes_vaf(a)).collect();
        let zeta = negative
            .chunks(candidates.len().max(1))
            .take(anchors.len())
            .enumerate()
            .map(|(i, row)| zeta(candidates.len(), row.iter().filter(|x| **x).count(), i).ok())
            .collect();
        Self { anchors: anchors.len(), candidates: candidates.len(), positive, negative, vaf_anchor, zeta }
    }

    pub fn has_positive(&self, i: usize) -> bool {
        self.positive[i * self.candidates..(i + 1) * self.candidates].iter().any(|x| *x)
    }

    /// Anchor weights after skipping degenerate and filtered anchors,
    /// renormalized to sum to 1 (all zero when nothing survives).
    pub fn weights(&self) -> Vec<f64> {
        let live: Vec<bool> = (0..self.anchors)
            .map(|i| self.vaf_anchor[i] && self.zeta[i].is_some() && self.has_positive(i))
            .collect();
        let n = live.iter().filter(|x| **x).count();
        live.iter().map(|l| if *l && n > 0 { 1.0 / n as f64 } else { 0.0 }).collect()
    }
}

/// `log ζ + log Σ_neg exp(s/τ) − log Σ_pos exp(s/τ)` for one anchor, from raw
/// dot products.
pub fn contrastive_loss_single(pos_sims: &[f64], neg_sims: &[f64], zeta: f64, tau: f64) -> Result<f64> {
    if pos_sims.is_empty() {
        return Err(Error::NoPositives { anchor: 0 });
    }
    if neg_sims.is_empty() {
        return Err(Error::NoNegatives { anchor: 0 });
    }
    let lse = |xs: &[f64]| {
        let m = xs.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b / tau));
        m + libm::log(xs.iter().map(|x| libm::exp(x / tau - m)).sum::<f64>())
    };
    Ok(libm::log(zeta) + lse(neg_sims) - lse(pos_sims))
}

/// One contrastive term with its audit data.
#[derive(Debug, Clone)]
pub struct ContrastiveTerm {
    pub loss: Var,
    pub masks: MaskSet,
    pub weights: Vec<f64>,
    /// Per-anchor loss, `None` for skipped anchors.
    pub per_anchor: Vec<Option<f64>>,
}

const MASKED_LOGIT: f64 = -1.0e4;

/// Row-wise `log Σ_{mask} exp(S)` over `S: [a, c]`, with rows whose mask is
/// empty returning 0.
fn masked_logsumexp(t: &mut Tape, s: Var, mask: &[bool], a: usize, c: usize) -> Result<Var> {
    let sv = t.value(s).to_vec();
    let mut keep = vec![0.0; a * c];
    let mut bias = vec![0.0; a * c];
    let mut shift = vec![0.0; a];
    for i in 0..a {
        let row = i * c..(i + 1) * c;
        let m = row.clone().filter(|k| mask[*k]).map(|k| sv[k]).fold(f64::NEG_INFINITY, f64::max);
        shift[i] = if m.is_finite() { m } else { 0.0 };
        for k in row {
            if mask[k] {
                keep[k] = 1.0;
                bias[k] = -shift[i];
            } else {
                bias[k] = MASKED_LOGIT;
            }
        }
    }
    let empty: Vec<f64> = (0..a).map(|i| if (0..c).any(|j| mask[i * c + j]) { 0.0 } else { 1.0 }).collect();
    let keep = t.constant(&[a, c], keep)?;
    let bias = t.constant(&[a, c], bias)?;
    let x = t.mul(s, keep)?;
    let x = t.add(x, bias)?;
    let e = t.exp(x)?;
    let sum = t.sum_axis(e, 1)?;
    let empty = t.constant(&[a], empty)?;
    let sum = t.add(sum, empty)?;
    let l = t.log(sum)?;
    let shift = t.constant(&[a], shift)?;
    t.add(l, shift)
}

/// Weighted average of per-anchor contrastive losses of `h1` rows against
/// `h2` rows. Returns a zero constant, with a warning, when no anchor survives.
#[allow(clippy::too_many_arguments)]
pub fn contrastive_loss(
    t: &mut Tape,
    h1: Var,
    h2: Var,
    anchors: &[FeatureMeta],
    candidates: &[FeatureMeta],
    ctx: &SelectionContext,
    cfg: &HclConfig,
    vaf: VafMode,
) -> Result<ContrastiveTerm> {
    if !(cfg.tau > 0.0) {
        return Err(Error::invalid("contrastive_loss", "tau must be positive"));
    }
    let (s1, s2) = (t.shape(h1).to_vec(), t.shape(h2).to_vec());
    if s1.len() != 2 || s2.len() != 2 || s1[1] != s2[1] || s1[0] != anchors.len() || s2[0] != candidates.len() {
        return Err(Error::shape("contrastive_loss", &s1, &s2));
    }
    if anchors.is_empty() {
        return Err(Error::Empty("contrastive_loss"));
    }
    let (a, c) = (anchors.len(), candidates.len());
    let masks = MaskSet::build(ctx, anchors, candidates, vaf);
    let weights = masks.weights();
    if weights.iter().all(|w| *w == 0.0) {
        log::warn!("contrastive term has no surviving anchors; contributing 0");
        let loss = t.scalar_constant(0.0);
        return Ok(ContrastiveTerm { loss, per_anchor: vec![None; a], masks, weights });
    }
    let h2t = t.transpose(h2, 0, 1)?;
    let s = t.matmul(h1, h2t)?;
    let s = t.scale(s, 1.0 / cfg.tau)?;
    let log_pos = masked_logsumexp(t, s, &masks.positive, a, c)?;
    let log_neg = masked_logsumexp(t, s, &masks.negative, a, c)?;
    let log_zeta: Vec<f64> = masks.zeta.iter().map(|z| libm::log(z.unwrap_or(1.0))).collect();
    let log_zeta = t.constant(&[a], log_zeta)?;
    let denom = t.add(log_neg, log_zeta)?;
    let denom = if cfg.info_nce {
        // log(P + ζN) via a shifted two-term log-sum-exp.
        let (p, n) = (t.value(log_pos).to_vec(), t.value(denom).to_vec());
        let m: Vec<f64> = p.iter().zip(&n).map(|(x, y)| x.max(*y)).collect();
        let mv = t.constant(&[a], m)?;
        let ep = t.sub(log_pos, mv)?;
        let ep = t.exp(ep)?;
        let en = t.sub(denom, mv)?;
        let en = t.exp(en)?;
        let tot = t.add(ep, en)?;
        let l = t.log(tot)?;
        t.add(l, mv)?
    } else {
        denom
    };
    let per = t.sub(denom, log_pos)?;
    let per_vals = t.value(per).to_vec();
    let w = t.constant(&[a], weights.clone())?;
    let weighted = t.mul(per, w)?;
    let loss = t.sum(weighted)?;
    let per_anchor = weights.iter().zip(per_vals).map(|(w, v)| (*w > 0.0).then_some(v)).collect();
    Ok(ContrastiveTerm { loss, masks, weights, per_anchor })
}

#[derive(Debug, Clone)]
pub struct HclLoss {
    pub total: Var,
    /// `(name, term)`: `vv`, `aa`, `va`, `av` for the split variant, `gathered` otherwise.
    pub terms: Vec<(&'static str, ContrastiveTerm)>,
}

/// HCL over unit-normalized per-frame features `h_v`, `h_a` (`[B, d]`,
/// aligned with `ctx`).
pub fn hcl_loss(t: &mut Tape, h_v: Var, h_a: Var, ctx: &SelectionContext, cfg: &HclConfig) -> Result<HclLoss> {
    ctx.validate()?;
    let fv = ctx.features(Modality::Visual);
    let fa = ctx.features(Modality::Audio);
    let terms = match cfg.variant {
        HclVariant::ModalitySplit => vec![
            ("vv", contrastive_loss(t, h_v, h_v, &fv, &fv, ctx, cfg, VafMode::Off)?),
            ("aa", contrastive_loss(t, h_a, h_a, &fa, &fa, ctx, cfg, VafMode::Off)?),
            ("va", contrastive_loss(t, h_v, h_a, &fv, &fa, ctx, cfg, VafMode::Anchors)?),
            ("av", contrastive_loss(t, h_a, h_v, &fa, &fv, ctx, cfg, VafMode::Anchors)?),
        ],
        HclVariant::ModalityGathered => {
            let h = t.concat(&[h_v, h_a], 0)?;
            let mut f = fv;
            f.extend(fa);
            vec![("gathered", contrastive_loss(t, h, h, &f, &f, ctx, cfg, VafMode::CrossModalPairs)?)]
        }
    };
    let mut total = terms[0].1.loss;
    for (_, term) in &terms[1..] {
        total = t.add(total, term.loss)?;
    }
    Ok(HclLoss { total, terms })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(clips: &[usize], frames: &[usize], sim_offdiag: f64, n_clips: usize) -> SelectionContext {
        let mut sim = vec![sim_offdiag; n_clips * n_clips];
        for i in 0..n_clips {
            sim[i * n_clips + i] = 1.0;
        }
        SelectionContext::new(clips.to_vec(), frames.to_vec(), vec![25.0; clips.len()], sim, n_clips).unwrap()
    }

    #[test]
    fn window_two_pairs_adjacent_frames_only() {
        let c = ctx(&[0, 0, 0], &[0, 1, 3], 0.5, 1);
        let f = c.features(Modality::Visual);
        let p = build_positive_mask(&c, &f, &f);
        assert_eq!(p, vec![false, true, false, true, false, false, false, false, false]);
    }

    #[test]
    fn window_one_leaves_only_same_frame_cross_modal() {
        let mut c = ctx(&[0, 0], &[0, 1], 0.5, 1);
        c.window = 1;
        let fv = c.features(Modality::Visual);
        let fa = c.features(Modality::Audio);
        assert!(build_positive_mask(&c, &fv, &fv).iter().all(|x| !x));
        assert_eq!(build_positive_mask(&c, &fv, &fa), vec![true, false, false, true]);
    }

    #[test]
    fn text_similarity_gates_negatives() {
        let c = ctx(&[0, 1], &[0, 0], 0.5, 2);
        let f = c.features(Modality::Visual);
        assert_eq!(build_negative_mask(&c, &f, &f), vec![false, true, true, false]);
        let c = ctx(&[0, 1], &[0, 0], 0.9, 2);
        assert!(build_negative_mask(&c, &f, &f).iter().all(|x| !x));
    }

    #[test]
    fn zeta_examples() {
        assert_eq!(zeta(6, 4, 0).unwrap(), 1.5);
        assert_eq!(zeta(5, 5, 0).unwrap(), 1.0);
        assert!(matches!(zeta(3, 0, 2), Err(Error::NoNegatives { anchor: 2 })));
    }

    #[test]
    fn single_pair_is_similarity_gap_over_tau() {
        let l = contrastive_loss_single(&[0.7], &[0.2], 1.0, 0.1).unwrap();
        assert!((l - (0.2 - 0.7) / 0.1).abs() < 1e-12);
    }

    #[test]
    fn missing_positives_error() {
        assert!(matches!(contrastive_loss_single(&[], &[0.1], 1.0, 0.1), Err(Error::NoPositives { .. })));
    }

    #[test]
    fn filtered_anchor_leaves_survivor_weight_one() {
        let mut c = ctx(&[0, 1], &[0, 0], 0.0, 2);
        c.vaf_score[1] = 5.0;
        let fv = c.features(Modality::Visual);
        let fa = c.features(Modality::Audio);
        let m = MaskSet::build(&c, &fv, &fa, VafMode::Anchors);
        assert_eq!(m.weights(), vec![1.0, 0.0]);
    }

    #[test]
    fn all_filtered_gives_zero() {
        let mut c = ctx(&[0, 1], &[0, 0], 0.0, 2);
        c.vaf_score = vec![1.0, 1.0];
        let mut t = Tape::new();
        let h = t.constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let fv = c.features(Modality::Visual);
        let fa = c.features(Modality::Audio);
        let term = contrastive_loss(&mut t, h, h, &fv, &fa, &c, &HclConfig::default(), VafMode::Anchors).unwrap();
        assert_eq!(t.scalar(term.loss), 0.0);
    }
}
