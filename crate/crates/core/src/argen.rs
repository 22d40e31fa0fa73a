//! Decoder-only transformer over multimodal token sequences: modality-weighted
//! next-token loss, KV-cached inference and structure-forced sampling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, NORM_EPS};
use crate::params::{ParamId, ParamStore};
use crate::seqfmt::{parse_sequence, Layout, MultimodalSequence, SeqFormat, SequenceContent, Slot, TokenKind, Vocabulary};
use crate::tensor::Tensor;

const MASK_LOGIT: f64 = -1.0e9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub mlp_ratio: usize,
    pub gamma_text: f64,
    pub gamma_visual: f64,
    pub gamma_audio: f64,
}

impl DecoderConfig {
    pub const GAMMA: (f64, f64, f64) = (3.0, 1.0, 2.0);

    fn with(layers: usize, heads: usize, model_dim: usize, max_len: usize, vocab_size: usize) -> Self {
        Self {
            layers,
            heads,
            model_dim,
            max_len,
            vocab_size,
            mlp_ratio: 4,
            gamma_text: Self::GAMMA.0,
            gamma_visual: Self::GAMMA.1,
            gamma_audio: Self::GAMMA.2,
        }
    }

    /// 24 layers, 16 heads, width 1024, 1025 positions.
    pub fn paper_scale(vocab_size: usize) -> Self {
        Self::with(24, 16, 1024, 1025, vocab_size)
    }

    /// 4 layers, 4 heads, width 128, up to 512 positions.
    pub fn desk(vocab_size: usize, max_len: usize) -> Self {
        Self::with(4, 4, 128, max_len.min(512), vocab_size)
    }

    pub fn small(layers: usize, heads: usize, model_dim: usize, max_len: usize, vocab_size: usize) -> Self {
        Self::with(layers, heads, model_dim, max_len, vocab_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("model_dim {} not divisible by {} heads", self.model_dim, self.heads)));
        }
        if self.layers == 0 || self.max_len == 0 || self.vocab_size == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config(format!("degenerate decoder config {self:?}")));
        }
        let g = [self.gamma_text, self.gamma_visual, self.gamma_audio];
        if g.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative, got {g:?}")));
        }
        Ok(())
    }

    pub fn gamma(&self, kind: TokenKind) -> f64 {
        match kind {
            TokenKind::Text => self.gamma_text,
            TokenKind::Visual => self.gamma_visual,
            TokenKind::Audio => self.gamma_audio,
            TokenKind::Special => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub cfg: DecoderConfig,
    tok_emb: ParamId,
    pos_emb: ParamId,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    head: Linear,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, cfg: DecoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.model_dim;
        let tok_emb = store.add("ar/tok_emb", Tensor::randn(&[cfg.vocab_size, d], 0.02, &mut rng))?;
        let pos_emb = store.add("ar/pos_emb", Tensor::randn(&[cfg.max_len, d], 0.02, &mut rng))?;
        let blocks = (0..cfg.layers)
            .map(|l| {
                let n = |s: &str| format!("ar/block{l}/{s}");
                Ok(Block {
                    ln1: LayerNorm::new(store, &n("ln1"), d)?,
                    q: Linear::new(store, &n("q"), d, d, &mut rng)?,
                    k: Linear::new(store, &n("k"), d, d, &mut rng)?,
                    v: Linear::new(store, &n("v"), d, d, &mut rng)?,
                    proj: Linear::new(store, &n("proj"), d, d, &mut rng)?,
                    ln2: LayerNorm::new(store, &n("ln2"), d)?,
                    fc1: Linear::new(store, &n("fc1"), d, cfg.mlp_ratio * d, &mut rng)?,
                    fc2: Linear::new(store, &n("fc2"), cfg.mlp_ratio * d, d, &mut rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            tok_emb,
            pos_emb,
            blocks,
            ln_f: LayerNorm::new(store, "ar/ln_f", d)?,
            head: Linear::new(store, "ar/head", d, cfg.vocab_size, &mut rng)?,
        })
    }

    pub fn params(store: &ParamStore) -> Vec<ParamId> {
        store.ids_with_prefix("ar/")
    }

    /// Logits `[B·n, V]` for a batch of equal-length sequences; row `b·n + p`
    /// depends only on positions `≤ p` of sequence `b`.
    pub fn forward_logits(&self, t: &mut Tape, batch: &[&[usize]]) -> Result<Var> {
        let b = batch.len();
        let n = batch.first().map_or(0, |s| s.len());
        if b == 0 || n == 0 {
            return Err(Error::Empty("forward_logits"));
        }
        if batch.iter().any(|s| s.len() != n) {
            return Err(Error::invalid("forward_logits", "sequences in a batch must share a length"));
        }
        if n > self.cfg.max_len {
            return Err(Error::Overflow { len: n, max_len: self.cfg.max_len });
        }
        let (d, h) = (self.cfg.model_dim, self.cfg.heads);
        let dh = d / h;
        let ids: Vec<usize> = batch.iter().flat_map(|s| s.iter().copied()).collect();
        let tok = t.param(self.tok_emb);
        let x = t.embedding_lookup(tok, &ids)?;
        let pos = t.param(self.pos_emb);
        let pos = t.narrow(pos, 0, 0, n)?;
        let x = t.reshape(x, &[b, n, d])?;
        let x = t.add(x, pos)?;
        let mut x = t.reshape(x, &[b * n, d])?;
        let mut mask = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                mask[i * n + j] = MASK_LOGIT;
            }
        }
        let mask = t.constant(&[n, n], mask)?;
        let heads = |t: &mut Tape, y: Var| -> Result<Var> {
            let y = t.reshape(y, &[b, n, h, dh])?;
            let y = t.permute(y, &[0, 2, 1, 3])?;
            t.reshape(y, &[b * h, n, dh])
        };
        for blk in &self.blocks {
            let a = blk.ln1.forward(t, x)?;
            let q = blk.q.forward(t, a)?;
            let q = heads(t, q)?;
            let k = blk.k.forward(t, a)?;
            let k = heads(t, k)?;
            let v = blk.v.forward(t, a)?;
            let v = heads(t, v)?;
            let kt = t.transpose(k, 1, 2)?;
            let s = t.matmul(q, kt)?;
            let s = t.scale(s, 1.0 / libm::sqrt(dh as f64))?;
            let s = t.add(s, mask)?;
            let w = t.softmax_axis(s, 2)?;
            let o = t.matmul(w, v)?;
            let o = t.reshape(o, &[b, h, n, dh])?;
            let o = t.permute(o, &[0, 2, 1, 3])?;
            let o = t.reshape(o, &[b * n, d])?;
            let o = blk.proj.forward(t, o)?;
            x = t.add(x, o)?;
            let m = blk.ln2.forward(t, x)?;
            let m = blk.fc1.forward(t, m)?;
            let m = t.silu(m)?;
            let m = blk.fc2.forward(t, m)?;
            x = t.add(x, m)?;
        }
        let x = self.ln_f.forward(t, x)?;
        self.head.forward(t, x)
    }
}

/// Per-modality pieces of the weighted loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModalityLoss {
    pub kind: TokenKind,
    /// `Σ γ·CE` over loss positions of this modality.
    pub weighted_sum: f64,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct ArLoss {
    pub loss: Var,
    pub parts: [ModalityLoss; 3],
    pub denominator: f64,
}

/// Next-token weights for each target position (`1..n`) of each sequence:
/// `γ` of the target's modality, 0 for specials.
pub fn loss_weights(cfg: &DecoderConfig, seqs: &[&MultimodalSequence]) -> Vec<f64> {
    seqs.iter().flat_map(|s| s.kinds[1..].iter().map(|k| cfg.gamma(*k))).collect()
}

/// `Σ_i γ_i·CE_i / Σ_i γ_i` over next-token targets, with specials and `[TXT]`
/// carrying weight zero. `logits` is `[B·n, V]` from [`Decoder::forward_logits`].
pub fn ar_loss(t: &mut Tape, cfg: &DecoderConfig, seqs: &[&MultimodalSequence], logits: Var) -> Result<ArLoss> {
    let b = seqs.len();
    let n = seqs.first().map_or(0, |s| s.len());
    let v = cfg.vocab_size;
    if b == 0 || n < 2 || t.shape(logits) != [b * n, v] {
        return Err(Error::shape("ar_loss", t.shape(logits), &[b * n, v]));
    }
    let l3 = t.reshape(logits, &[b, n, v])?;
    let pred = t.narrow(l3, 1, 0, n - 1)?;
    let pred = t.reshape(pred, &[b * (n - 1), v])?;
    let targets: Vec<usize> = seqs.iter().flat_map(|s| s.ids[1..].iter().copied()).collect();
    let kinds: Vec<TokenKind> = seqs.iter().flat_map(|s| s.kinds[1..].iter().copied()).collect();
    let w = loss_weights(cfg, seqs);
    let denominator: f64 = w.iter().sum();
    if denominator <= 0.0 {
        return Err(Error::ZeroDenominator("ar_loss"));
    }
    let ce = t.cross_entropy(pred, &targets)?;
    let ce_vals = t.value(ce).to_vec();
    let mut parts = [TokenKind::Text, TokenKind::Visual, TokenKind::Audio].map(|kind| ModalityLoss { kind, weighted_sum: 0.0, count: 0 });
    for ((k, wi), c) in kinds.iter().zip(&w).zip(&ce_vals) {
        if let Some(p) = parts.iter_mut().find(|p| p.kind == *k) {
            p.weighted_sum += wi * c;
            p.count += 1;
        }
    }
    let wv = t.constant(&[w.len()], w)?;
    let weighted = t.mul(ce, wv)?;
    let total = t.sum(weighted)?;
    let loss = t.scale(total, 1.0 / denominator)?;
    Ok(ArLoss { loss, parts, denominator })
}

fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let r = 1.0 / libm::sqrt(var + NORM_EPS);
    x.iter().zip(gamma).zip(beta).map(|((a, g), b)| (a - mean) * r * g + b).collect()
}

fn linear(store: &ParamStore, l: &Linear, x: &[f64]) -> Vec<f64> {
    let w = store.get(l.weight).data();
    let mut out = store.get(l.bias).data().to_vec();
    for (i, xi) in x.iter().enumerate() {
        let row = &w[i * l.dout..(i + 1) * l.dout];
        out.iter_mut().zip(row).for_each(|(o, wv)| *o += xi * wv);
    }
    out
}

fn silu(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    };
    x * s
}

/// Incremental single-sequence inference with cached keys and values.
#[derive(Debug, Clone)]
pub struct KvCache<'a> {
    dec: &'a Decoder,
    store: &'a ParamStore,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

impl<'a> KvCache<'a> {
    pub fn new(dec: &'a Decoder, store: &'a ParamStore) -> Self {
        let l = dec.cfg.layers;
        Self { dec, store, keys: vec![Vec::new(); l], values: vec![Vec::new(); l], len: 0 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends `token` and returns the logits for the next position.
    pub fn push(&mut self, token: usize) -> Result<Vec<f64>> {
        let cfg = &self.dec.cfg;
        if self.len >= cfg.max_len {
            return Err(Error::Overflow { len: self.len + 1, max_len: cfg.max_len });
        }
        if token >= cfg.vocab_size {
            return Err(Error::invalid("kv_cache", format!("token {token} outside vocabulary")));
        }
        let (d, h) = (cfg.model_dim, cfg.heads);
        let dh = d / h;
        let s = self.store;
        let tok = &s.get(self.dec.tok_emb).data()[token * d..(token + 1) * d];
        let pos = &s.get(self.dec.pos_emb).data()[self.len * d..(self.len + 1) * d];
        let mut x: Vec<f64> = tok.iter().zip(pos).map(|(a, b)| a + b).collect();
        let n = self.len + 1;
        let scale = 1.0 / libm::sqrt(dh as f64);
        for (li, blk) in self.dec.blocks.iter().enumerate() {
            let a = layer_norm(&x, s.get(blk.ln1.gamma).data(), s.get(blk.ln1.beta).data());
            let q = linear(s, &blk.q, &a);
            self.keys[li].extend(linear(s, &blk.k, &a));
            self.values[li].extend(linear(s, &blk.v, &a));
            let (keys, values) = (&self.keys[li], &self.values[li]);
            let mut o = vec![0.0; d];
            for hi in 0..h {
                let qh = &q[hi * dh..(hi + 1) * dh];
                let scores: Vec<f64> = (0..n)
                    .map(|j| qh.iter().zip(&keys[j * d + hi * dh..j * d + (hi + 1) * dh]).map(|(a, b)| a * b).sum::<f64>() * scale)
                    .collect();
                let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|x| libm::exp(x - mx)).collect();
                let z: f64 = e.iter().sum();
                for (j, ej) in e.iter().enumerate() {
                    let vr = &values[j * d + hi * dh..j * d + (hi + 1) * dh];
                    o[hi * dh..(hi + 1) * dh].iter_mut().zip(vr).for_each(|(oo, vv)| *oo += ej / z * vv);
                }
            }
            let o = linear(s, &blk.proj, &o);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
            let m = layer_norm(&x, s.get(blk.ln2.gamma).data(), s.get(blk.ln2.beta).data());
            let m: Vec<f64> = linear(s, &blk.fc1, &m).into_iter().map(silu).collect();
            let m = linear(s, &blk.fc2, &m);
            x.iter_mut().zip(&m).for_each(|(a, b)| *a += b);
        }
        self.len = n;
        let x = layer_norm(&x, s.get(self.dec.ln_f.gamma).data(), s.get(self.dec.ln_f.beta).data());
        let logits = linear(s, &self.dec.head, &x);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "kv_cache" });
        }
        Ok(logits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    /// `≤ 0` selects greedy decoding.
    pub temperature: f64,
    /// `0` disables top-k truncation.
    pub top_k: usize,
}

impl SamplingConfig {
    pub fn desk(vocab_size: usize) -> Self {
        Self { temperature: 1.0, top_k: vocab_size.min(16) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sequence: MultimodalSequence,
    pub content: SequenceContent,
    /// Sum of log-probabilities of the sampled modality tokens; replaced by
    /// the scorer after [`rerank`].
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
}

/// Grid shapes of one frame, `(rows, cols)` for visual and audio.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShapes {
    pub visual: (usize, usize),
    pub audio: (usize, usize),
}

fn pick(logits: &[f64], legal: core::ops::Range<usize>, s: &SamplingConfig, rng: &mut ChaCha8Rng) -> (usize, f64) {
    let cand = &logits[legal.clone()];
    let temp = if s.temperature > 0.0 { s.temperature } else { 1.0 };
    let scaled: Vec<f64> = cand.iter().map(|x| x / temp).collect();
    let mx = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + libm::log(scaled.iter().map(|x| libm::exp(x - mx)).sum::<f64>());
    let mut order: Vec<usize> = (0..cand.len()).collect();
    // Stable sort keeps the lowest index first among equal logits.
    order.sort_by(|a, b| scaled[*b].total_cmp(&scaled[*a]));
    let choice = if s.temperature <= 0.0 {
        order[0]
    } else {
        let k = if s.top_k == 0 { order.len() } else { s.top_k.min(order.len()) };
        let kept = &order[..k];
        let w: Vec<f64> = kept.iter().map(|i| libm::exp(scaled[*i] - mx)).collect();
        let total: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut chosen = kept[k - 1];
        for (i, wi) in kept.iter().zip(&w) {
            if u < *wi {
                chosen = *i;
                break;
            }
            u -= wi;
        }
        chosen
    };
    (legal.start + choice, scaled[choice] - lse)
}

/// Samples `k` sequences continuing `[TXT] text`. Special tokens are forced
/// where the format requires them and modality positions only draw ids from
/// their own range, so every sample parses. Sample `i` uses ChaCha stream `i`
/// of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn generate(
    dec: &Decoder,
    store: &ParamStore,
    vocab: &Vocabulary,
    shapes: GridShapes,
    format: SeqFormat,
    text: &[usize],
    k: usize,
    sampling: &SamplingConfig,
    seed: u64,
) -> Result<SampleSet> {
    if vocab.size() != dec.cfg.vocab_size {
        return Err(Error::Config(format!("vocabulary of {} ids for a decoder of {}", vocab.size(), dec.cfg.vocab_size)));
    }
    let layout = Layout::new(format, vocab.frames, text.len(), shapes.visual.0 * shapes.visual.1, shapes.audio.0 * shapes.audio.1);
    if layout.len() > dec.cfg.max_len {
        return Err(Error::Overflow { len: layout.len(), max_len: dec.cfg.max_len });
    }
    if let Some(bad) = text.iter().find(|x| **x >= vocab.text) {
        return Err(Error::invalid("generate", format!("text id {bad} outside text vocabulary")));
    }
    let mut samples = Vec::with_capacity(k);
    for i in 0..k {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut cache = KvCache::new(dec, store);
        let mut ids = Vec::with_capacity(layout.len());
        let mut logits = Vec::new();
        let mut score = 0.0;
        for (p, slot) in layout.slots.iter().enumerate() {
            let id = match *slot {
                Slot::Special(s) => vocab.special_id(s)?,
                Slot::Text => text[p - 1],
                Slot::Visual { .. } | Slot::Audio { .. } => {
                    let (id, lp) = pick(&logits, vocab.range_of(slot.kind()), sampling, &mut rng);
                    score += lp;
                    id
                }
            };
            ids.push(id);
            if p + 1 < layout.len() {
                logits = cache.push(id)?;
            }
        }
        let content = parse_sequence(vocab, format, &ids, shapes.visual, shapes.audio)?;
        let sequence = MultimodalSequence::tag(vocab, format, ids)?;
        samples.push(Sample { sequence, content, score });
    }
    Ok(SampleSet { samples })
}

/// Rescores with `scorer` and sorts by descending score; ties keep input order.
pub fn rerank<F: FnMut(&Sample) -> f64>(mut set: SampleSet, mut scorer: F) -> SampleSet {
    for s in &mut set.samples {
        s.score = scorer(s);
    }
    set.samples.sort_by(|a, b| b.score.total_cmp(&a.score));
    set
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(vocab: usize) -> (ParamStore, Decoder) {
        let mut store = ParamStore::new();
        let dec = Decoder::new(&mut store, DecoderConfig::small(2, 2, 8, 32, vocab), 5).unwrap();
        (store, dec)
    }

    #[test]
    fn presets_validate() {
        DecoderConfig::paper_scale(100).validate().unwrap();
        let d = DecoderConfig::desk(100, 1000);
        assert_eq!((d.layers, d.heads, d.model_dim, d.max_len), (4, 4, 128, 512));
        assert!(DecoderConfig::small(1, 3, 8, 4, 4).validate().is_err());
    }

    #[test]
    fn logits_shape_and_causality() {
        let (store, dec) = tiny(11);
        let a = [1usize, 4, 2, 7, 3];
        let mut b = a;
        b[3] = 9;
        let mut t = Tape::with_params(&store);
        let la = dec.forward_logits(&mut t, &[&a]).unwrap();
        let lb = dec.forward_logits(&mut t, &[&b]).unwrap();
        assert_eq!(t.shape(la), &[5, 11]);
        assert_eq!(&t.value(la)[..3 * 11], &t.value(lb)[..3 * 11]);
        assert_ne!(&t.value(la)[3 * 11..], &t.value(lb)[3 * 11..]);
    }

    #[test]
    fn cache_matches_full_forward() {
        let (store, dec) = tiny(11);
        let ids = [3usize, 1, 4, 1, 5, 9];
        let mut t = Tape::with_params(&store);
        let full = dec.forward_logits(&mut t, &[&ids]).unwrap();
        let full = t.value(full).to_vec();
        let mut cache = KvCache::new(&dec, &store);
        for (p, id) in ids.iter().enumerate() {
            let l = cache.push(*id).unwrap();
            for (x, y) in l.iter().zip(&full[p * 11..(p + 1) * 11]) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn overflow_is_reported() {
        let (store, dec) = tiny(11);
        let ids = [0usize; 33];
        let mut t = Tape::with_params(&store);
        assert!(matches!(dec.forward_logits(&mut t, &[&ids]), Err(Error::Overflow { len: 33, max_len: 32 })));
    }

    #[test]
    fn rerank_is_stable() {
        let v = Vocabulary::new(2, 2, 2, 1).unwrap();
        let mk = |x: usize| Sample {
            sequence: MultimodalSequence::tag(&v, SeqFormat::Masf, vec![x]).unwrap(),
            content: SequenceContent { text: vec![], visual: vec![], audio: vec![] },
            score: 0.0,
        };
        let set = SampleSet { samples: vec![mk(0), mk(1), mk(2)] };
        let out = rerank(set, |s| if s.sequence.ids[0] == 2 { 1.0 } else { 0.5 });
        let order: Vec<usize> = out.samples.iter().map(|s| s.sequence.ids[0]).collect();
        assert_eq!(order, vec![2, 0, 1]);
    }
}
