//! Training loops for the codec (with cross-modal attention and contrastive
//! alignment) and for the token decoder, plus their evaluation metrics.
//!
//! Every step draws its batch from an RNG keyed by `(seed, step)`, so a run
//! resumed from exported state continues exactly as the uninterrupted run.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::argen::{ar_loss, Decoder, DecoderConfig};
use crate::autodiff::{Tape, Var};
use crate::cam::{Cam, CamConfig};
use crate::codec::{adversarial_terms, split_audio_frames, svg_total_loss, Codec, CodecConfig};
use crate::error::{Error, Result};
use crate::hcl::{hcl_loss, HclConfig, SelectionContext};
use crate::optim::Adam;
use crate::params::{ParamId, ParamStore};
use crate::quantizer::{channel_last_rows, perplexity};
use crate::seqfmt::{build_sequence, Grid, MultimodalSequence, SeqFormat, SequenceContent, Vocabulary};
use crate::synthdata::{class_text_similarity, ManifestEntry, SynthConfig, SyntheticClip, VAF_CLEAN, VAF_CORRUPT};
use crate::Modality;

/// A named array in exported trainer state.
pub type NamedArray = (String, Vec<usize>, Vec<f64>);

/// Clips regenerated from a manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub cfg: SynthConfig,
    pub entries: Vec<ManifestEntry>,
    pub clips: Vec<SyntheticClip>,
}

impl Dataset {
    pub fn new(cfg: SynthConfig, entries: Vec<ManifestEntry>) -> Result<Self> {
        let clips = entries.iter().map(|e| e.clip(&cfg)).collect::<Result<Vec<_>>>()?;
        Ok(Self { cfg, entries, clips })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

pub fn check_compatible(codec: &CodecConfig, data: &SynthConfig) -> Result<()> {
    let pairs = [
        ("height", codec.height, data.height),
        ("width", codec.width, data.width),
        ("channels", codec.channels, data.channels),
        ("mel_bins", codec.mel_bins, data.mel_bins),
        ("mel_width", codec.mel_width, data.mel_width),
        ("frames", codec.frames, data.frames),
    ];
    for (name, a, b) in pairs {
        if a != b {
            return Err(Error::Config(format!("codec {name} = {a} but data {name} = {b}")));
        }
    }
    Ok(())
}

/// Visual `[n·k, C, H, W]` and audio `[n, 1, F, k·T/L]` arrays for frames
/// `start..start + k` of the given clips.
pub fn media_batch(data: &Dataset, clips: &[usize], start: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
    let cfg = &data.cfg;
    let mut v = Vec::with_capacity(clips.len() * k * cfg.frame_len());
    let mut a = Vec::with_capacity(clips.len() * k * cfg.mel_bins * cfg.mel_frame_width());
    for &c in clips {
        let clip = &data.clips[c];
        for f in start..start + k {
            v.extend_from_slice(clip.frame(cfg, f));
        }
        a.extend(clip.mel_window(cfg, start, k));
    }
    (v, a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecTrainConfig {
    pub steps: usize,
    pub batch_clips: usize,
    /// Frames per clip before `full_frames_from`.
    pub crop_frames: usize,
    /// Step at which crops grow to all frames; `None` keeps crops throughout.
    pub full_frames_from: Option<usize>,
    pub lr: f64,
    pub lr_disc: f64,
    /// Cosine decay of both learning rates to a tenth over `steps`.
    pub cosine_decay: bool,
    pub adv_weight: f64,
    /// Fraction of `steps` before the adversarial terms switch on.
    pub disc_warmup: f64,
    pub alpha: f64,
    pub hcl: HclConfig,
    pub vaf_enabled: bool,
    pub vaf_threshold: f64,
    pub tns_threshold: f64,
    pub window: usize,
    pub common_dim: usize,
    pub reseed_every: usize,
    pub retrieval_batch: usize,
    pub seed: u64,
}

impl CodecTrainConfig {
    pub fn desk() -> Self {
        Self {
            steps: 400,
            batch_clips: 8,
            crop_frames: 2,
            full_frames_from: None,
            lr: 2e-3,
            lr_disc: 1e-3,
            cosine_decay: true,
            adv_weight: 0.1,
            disc_warmup: 0.2,
            alpha: 1.0,
            hcl: HclConfig::default(),
            vaf_enabled: true,
            vaf_threshold: SelectionContext::DEFAULT_VAF_THRESHOLD,
            tns_threshold: SelectionContext::DEFAULT_TNS_THRESHOLD,
            window: SelectionContext::DEFAULT_WINDOW,
            common_dim: 16,
            reseed_every: 50,
            retrieval_batch: 16,
            seed: 0,
        }
    }

    pub fn validate(&self, codec: &CodecConfig) -> Result<()> {
        if self.batch_clips == 0 || self.crop_frames == 0 || self.crop_frames > codec.frames {
            return Err(Error::Config(format!("crop of {} frames from clips of {}", self.crop_frames, codec.frames)));
        }
        if !(self.lr > 0.0 && self.lr_disc > 0.0) || !(0.0..=1.0).contains(&self.disc_warmup) {
            return Err(Error::Config(String::from("learning rates must be positive and warmup a fraction")));
        }
        if !(self.hcl.tau > 0.0) || self.window == 0 || self.retrieval_batch == 0 {
            return Err(Error::Config(String::from("tau, window and retrieval batch must be positive")));
        }
        Ok(())
    }

    pub fn frames_at(&self, step: usize, total_frames: usize) -> usize {
        match self.full_frames_from {
            Some(s) if step >= s => total_frames,
            _ => self.crop_frames,
        }
    }

    /// Multiplier applied to the base learning rates at `step`.
    pub fn lr_factor(&self, step: usize) -> f64 {
        if !self.cosine_decay || self.steps == 0 {
            return 1.0;
        }
        let p = (step as f64 / self.steps as f64).min(1.0);
        0.1 + 0.9 * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * p))
    }

    pub fn adversarial_active(&self, step: usize) -> bool {
        self.adv_weight > 0.0 && step as f64 >= self.disc_warmup * self.steps as f64
    }
}

/// Losses logged for one codec step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CodecStepMetrics {
    pub step: usize,
    pub total: f64,
    pub recon_visual: f64,
    pub recon_audio: f64,
    pub perceptual_visual: f64,
    pub perceptual_audio: f64,
    pub codebook_visual: f64,
    pub codebook_audio: f64,
    pub adversarial_visual: f64,
    pub adversarial_audio: f64,
    pub disc_loss: f64,
    pub hcl: f64,
    pub reseeded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecEvalMetrics {
    pub recon_mse_visual: f64,
    pub recon_mse_audio: f64,
    pub perplexity_visual: f64,
    pub perplexity_audio: f64,
    pub retrieval_top1: f64,
}

/// Per-step RNG; stream keyed by step so batches do not depend on history.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

#[derive(Debug, Clone)]
pub struct CodecTrainer {
    pub codec: Codec,
    pub cam: Cam,
    pub store: ParamStore,
    pub cfg: CodecTrainConfig,
    pub step: usize,
    adam_gen: Adam,
    adam_disc: Adam,
    gen_group: Vec<ParamId>,
    disc_group: Vec<ParamId>,
}

impl CodecTrainer {
    pub fn new(codec_cfg: CodecConfig, cfg: CodecTrainConfig) -> Result<Self> {
        cfg.validate(&codec_cfg)?;
        let mut store = ParamStore::new();
        let codec = Codec::new(&mut store, codec_cfg, cfg.seed)?;
        let cam_cfg = CamConfig {
            dim_visual: codec.cfg.dim_visual,
            dim_audio: codec.cfg.dim_audio,
            common_dim: cfg.common_dim,
            groups: codec.cfg.groups.min(cfg.common_dim),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xCA4);
        let cam = Cam::new(&mut store, cam_cfg, &mut rng)?;
        let mut gen_group = codec.generator_params(&store);
        if cfg.alpha > 0.0 {
            gen_group.extend(Cam::params(&store));
        }
        let disc_group = codec.discriminator_params(&store);
        Ok(Self {
            codec,
            cam,
            store,
            cfg,
            step: 0,
            adam_gen: Adam::new(cfg.lr),
            adam_disc: Adam::new(cfg.lr_disc),
            gen_group,
            disc_group,
        })
    }

    /// Selection context for frames `start..start + k` of `clips`, as used by the HCL term.
    pub fn selection(&self, data: &Dataset, clips: &[usize], start: usize, k: usize) -> Result<SelectionContext> {
        let n = clips.len();
        let mut text_sim = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                text_sim[i * n + j] = class_text_similarity(data.clips[clips[i]].class_id, data.clips[clips[j]].class_id);
            }
        }
        let (mut clip, mut frame, mut vaf) = (Vec::new(), Vec::new(), Vec::new());
        for (b, &c) in clips.iter().enumerate() {
            for f in start..start + k {
                clip.push(b);
                frame.push(f);
                vaf.push(if data.clips[c].corrupt_av { VAF_CORRUPT } else { VAF_CLEAN });
            }
        }
        let mut ctx = SelectionContext::new(clip, frame, vaf, text_sim, n)?;
        ctx.vaf_threshold = if self.cfg.vaf_enabled { self.cfg.vaf_threshold } else { f64::MIN };
        ctx.tns_threshold = self.cfg.tns_threshold;
        ctx.window = self.cfg.window;
        Ok(ctx)
    }

    /// One generator update and, after warmup, one discriminator update.
    pub fn train_step(&mut self, data: &Dataset) -> Result<CodecStepMetrics> {
        check_compatible(&self.codec.cfg, &data.cfg)?;
        let c = self.codec.cfg.clone();
        let c = &c;
        let mut rng = step_rng(self.cfg.seed, self.step);
        let b = self.cfg.batch_clips.min(data.len());
        if b == 0 {
            return Err(Error::Empty("training data"));
        }
        let clips = sample(&mut rng, data.len(), b).into_vec();
        let k = self.cfg.frames_at(self.step, c.frames);
        let start = rng.random_range(0..=c.frames - k);
        let (xv, xa) = media_batch(data, &clips, start, k);
        let adv = self.cfg.adversarial_active(self.step);
        let adv_w = if adv { self.cfg.adv_weight } else { 0.0 };

        let mut m = CodecStepMetrics { step: self.step, ..Default::default() };
        let (grads, ema, fakes);
        {
            let mut t = Tape::with_params(&self.store);
            let xv = t.constant(&[b * k, c.channels, c.height, c.width], xv.clone())?;
            let xa = t.constant(&[b, 1, c.mel_bins, k * c.audio_frame_width()], xa.clone())?;
            let lv = self.codec.visual.vqgan_loss(&mut t, &self.store, xv, adv_w)?;
            let la = self.codec.audio.vqgan_loss(&mut t, &self.store, xa, adv_w)?;
            let h = if self.cfg.alpha > 0.0 {
                let za = split_audio_frames(&mut t, la.z, k)?;
                let out = self.cam.forward(&mut t, lv.z, za)?;
                let ctx = self.selection(data, &clips, start, k)?;
                let h = hcl_loss(&mut t, out.h_v, out.h_a, &ctx, &self.cfg.hcl)?;
                m.hcl = t.scalar(h.total);
                Some(h.total)
            } else {
                None
            };
            let total = svg_total_loss(&mut t, &lv, &la, h, self.cfg.alpha)?;
            m.total = t.scalar(total);
            m.recon_visual = t.scalar(lv.recon);
            m.recon_audio = t.scalar(la.recon);
            m.perceptual_visual = t.scalar(lv.perceptual);
            m.perceptual_audio = t.scalar(la.perceptual);
            m.codebook_visual = t.scalar(lv.codebook);
            m.codebook_audio = t.scalar(la.codebook);
            m.adversarial_visual = lv.adversarial.map_or(0.0, |v| t.scalar(v));
            m.adversarial_audio = la.adversarial.map_or(0.0, |v| t.scalar(v));
            grads = t.backward(total)?;
            let rows = |t: &Tape, z: Var| channel_last_rows(t.value(z), t.shape(z));
            ema = [(rows(&t, lv.z)?, lv.indices.clone()), (rows(&t, la.z)?, la.indices.clone())];
            fakes = [
                (t.value(lv.reconstruction).to_vec(), t.shape(lv.reconstruction).to_vec()),
                (t.value(la.reconstruction).to_vec(), t.shape(la.reconstruction).to_vec()),
            ];
        }
        self.store.accumulate(&grads)?;
        self.adam_gen.step_with_lr(&mut self.store, &self.gen_group, self.cfg.lr * self.cfg.lr_factor(self.step))?;
        self.store.zero_grads();

        for (modality, (feats, idx)) in [Modality::Visual, Modality::Audio].into_iter().zip(&ema) {
            let stream = self.codec.stream_mut(modality);
            if stream.codebook.cfg.mode == crate::quantizer::CodebookMode::Ema {
                stream.codebook.ema_update(&mut self.store, feats, idx)?;
                if self.cfg.reseed_every > 0 && (self.step + 1).is_multiple_of(self.cfg.reseed_every) {
                    m.reseeded += stream.codebook.reseed_dead(&mut self.store, feats, &mut rng);
                }
            }
        }

        if adv {
            let grads;
            {
                let mut t = Tape::with_params(&self.store);
                let reals = [(xv, vec![b * k, c.channels, c.height, c.width]), (xa, vec![b, 1, c.mel_bins, k * c.audio_frame_width()])];
                let mut d_total = None;
                for ((modality, (real, shape)), (fake, fshape)) in [Modality::Visual, Modality::Audio].into_iter().zip(reals).zip(fakes) {
                    let stream = self.codec.stream(modality);
                    let r = t.constant(&shape, real)?;
                    let f = t.constant(&fshape, fake)?;
                    let lr = stream.discriminate(&mut t, r)?;
                    let lf = stream.discriminate(&mut t, f)?;
                    let terms = adversarial_terms(&mut t, lr, lf)?;
                    d_total = Some(match d_total {
                        None => terms.d_loss,
                        Some(acc) => t.add(acc, terms.d_loss)?,
                    });
                }
                let d_total = d_total.expect("two streams");
                m.disc_loss = t.scalar(d_total);
                grads = t.backward(d_total)?;
            }
            self.store.accumulate(&grads)?;
            self.adam_disc.step_with_lr(&mut self.store, &self.disc_group, self.cfg.lr_disc * self.cfg.lr_factor(self.step))?;
            self.store.zero_grads();
        }
        self.step += 1;
        Ok(m)
    }

    /// Quantized codes for all frames of a clip: `(visual grids, audio grids)`.
    pub fn tokenize(&self, data: &Dataset, clip: usize) -> Result<(Vec<Grid>, Vec<Grid>)> {
        let c = &self.codec.cfg;
        let l = c.frames;
        let (xv, xa) = media_batch(data, &[clip], 0, l);
        let mut t = Tape::with_params(&self.store);
        let xv = t.constant(&[l, c.channels, c.height, c.width], xv)?;
        let xa = t.constant(&[1, 1, c.mel_bins, c.mel_width], xa)?;
        let zv = self.codec.encode_visual(&mut t, xv)?;
        let za = self.codec.encode_audio(&mut t, xa)?;
        let za = split_audio_frames(&mut t, za, l)?;
        let qv = self.codec.visual.codebook.quantize(&mut t, zv)?;
        let qa = self.codec.audio.codebook.quantize(&mut t, za)?;
        let (vh, vw) = c.visual_grid();
        let (af, at) = c.audio_grid();
        let vg = qv.indices.chunks(vh * vw).map(|ch| Grid::new(vh, vw, ch.to_vec())).collect::<Result<Vec<_>>>()?;
        let ag = qa.indices.chunks(af * at).map(|ch| Grid::new(af, at, ch.to_vec())).collect::<Result<Vec<_>>>()?;
        Ok((vg, ag))
    }

    /// Reconstruction error, code usage and cross-modal retrieval on `test`.
    pub fn evaluate(&self, test: &Dataset) -> Result<CodecEvalMetrics> {
        check_compatible(&self.codec.cfg, &test.cfg)?;
        if test.is_empty() {
            return Err(Error::Empty("evaluation data"));
        }
        let c = &self.codec.cfg;
        let l = c.frames;
        let (mut sv, mut sa) = (0.0, 0.0);
        let (mut iv, mut ia) = (Vec::new(), Vec::new());
        let mut hits = 0usize;
        let mut trials = 0usize;
        let rb = self.cfg.retrieval_batch.min(test.len());
        let chunks: Vec<Vec<usize>> = (0..test.len() / rb).map(|i| (i * rb..(i + 1) * rb).collect()).collect();
        for clips in &chunks {
            let n = clips.len();
            let (xv, xa) = media_batch(test, clips, 0, l);
            let mut t = Tape::with_params(&self.store);
            let xv = t.constant(&[n * l, c.channels, c.height, c.width], xv)?;
            let xa = t.constant(&[n, 1, c.mel_bins, c.mel_width], xa)?;
            let lv = self.codec.visual.vqgan_loss(&mut t, &self.store, xv, 0.0)?;
            let la = self.codec.audio.vqgan_loss(&mut t, &self.store, xa, 0.0)?;
            sv += t.scalar(lv.recon) * n as f64;
            sa += t.scalar(la.recon) * n as f64;
            iv.extend_from_slice(&lv.indices);
            ia.extend_from_slice(&la.indices);
            let za = split_audio_frames(&mut t, la.z, l)?;
            let out = self.cam.forward(&mut t, lv.z, za)?;
            let d = self.cam.cfg.common_dim;
            let (hv, ha) = (t.value(out.h_v), t.value(out.h_a));
            for f in 0..l {
                for i in 0..n {
                    let q = &hv[(i * l + f) * d..(i * l + f + 1) * d];
                    let mut best = (f64::NEG_INFINITY, 0);
                    for j in 0..n {
                        let r = &ha[(j * l + f) * d..(j * l + f + 1) * d];
                        let s: f64 = q.iter().zip(r).map(|(a, b)| a * b).sum();
                        if s > best.0 {
                            best = (s, j);
                        }
                    }
                    hits += usize::from(best.1 == i);
                    trials += 1;
                }
            }
        }
        let used = (chunks.len() * rb) as f64;
        Ok(CodecEvalMetrics {
            recon_mse_visual: sv / used,
            recon_mse_audio: sa / used,
            perplexity_visual: perplexity(&iv, self.codec.cfg.codebook_visual)?,
            perplexity_audio: perplexity(&ia, self.codec.cfg.codebook_audio)?,
            retrieval_top1: hits as f64 / trials as f64,
        })
    }

    /// Parameters, optimizer moments, codebook statistics and step counter.
    pub fn export_state(&self) -> Vec<NamedArray> {
        let mut out = self.store.export();
        export_adam(&mut out, "optim/gen", &self.adam_gen, &self.gen_group, &self.store);
        export_adam(&mut out, "optim/disc", &self.adam_disc, &self.disc_group, &self.store);
        for m in [Modality::Visual, Modality::Audio] {
            let cb = &self.codec.stream(m).codebook;
            let name = self.store.name(cb.entries);
            out.push((format!("ema/{name}/cluster_size"), vec![cb.n], cb.ema_cluster_size.clone()));
            out.push((format!("ema/{name}/sum"), vec![cb.n, cb.dim], cb.ema_sum.clone()));
        }
        out.push((String::from("trainer/step"), vec![1], vec![self.step as f64]));
        out
    }

    pub fn import_state(&mut self, arrays: &[NamedArray]) -> Result<()> {
        let get = |name: &str| arrays.iter().find(|a| a.0 == name).ok_or_else(|| Error::Config(format!("state is missing {name}")));
        for id in self.store.ids().collect::<Vec<_>>() {
            let name = String::from(self.store.name(id));
            let (_, shape, values) = get(&name)?;
            self.store.assign(&name, shape, values)?;
        }
        import_adam(arrays, "optim/gen", &mut self.adam_gen, &self.gen_group, &self.store)?;
        import_adam(arrays, "optim/disc", &mut self.adam_disc, &self.disc_group, &self.store)?;
        for m in [Modality::Visual, Modality::Audio] {
            let name = String::from(self.store.name(self.codec.stream(m).codebook.entries));
            let cs = get(&format!("ema/{name}/cluster_size"))?.2.clone();
            let sum = get(&format!("ema/{name}/sum"))?.2.clone();
            let cb = &mut self.codec.stream_mut(m).codebook;
            if cs.len() != cb.n || sum.len() != cb.n * cb.dim {
                return Err(Error::Config(format!("codebook statistics for {name} have the wrong size")));
            }
            cb.ema_cluster_size = cs;
            cb.ema_sum = sum;
        }
        self.step = get("trainer/step")?.2[0] as usize;
        Ok(())
    }
}

fn export_adam(out: &mut Vec<NamedArray>, prefix: &str, adam: &Adam, group: &[ParamId], store: &ParamStore) {
    out.push((format!("{prefix}/step"), vec![1], vec![adam.step_count as f64]));
    let (m, v) = adam.moments();
    for (i, id) in group.iter().enumerate().take(m.len()) {
        let name = store.name(*id);
        out.push((format!("{prefix}/m/{name}"), vec![m[i].len()], m[i].clone()));
        out.push((format!("{prefix}/v/{name}"), vec![v[i].len()], v[i].clone()));
    }
}

fn import_adam(arrays: &[NamedArray], prefix: &str, adam: &mut Adam, group: &[ParamId], store: &ParamStore) -> Result<()> {
    let find = |name: &str| arrays.iter().find(|a| a.0 == name);
    let step = find(&format!("{prefix}/step")).ok_or_else(|| Error::Config(format!("state is missing {prefix}/step")))?.2[0] as u64;
    if step == 0 {
        return adam.restore(0, Vec::new(), Vec::new());
    }
    let mut first = Vec::with_capacity(group.len());
    let mut second = Vec::with_capacity(group.len());
    for id in group {
        let name = store.name(*id);
        let m = find(&format!("{prefix}/m/{name}")).ok_or_else(|| Error::Config(format!("state is missing {prefix}/m/{name}")))?;
        let v = find(&format!("{prefix}/v/{name}")).ok_or_else(|| Error::Config(format!("state is missing {prefix}/v/{name}")))?;
        first.push(m.2.clone());
        second.push(v.2.clone());
    }
    adam.restore(step, first, second)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub format: SeqFormat,
    pub seed: u64,
}

impl ArTrainConfig {
    pub fn desk() -> Self {
        Self { steps: 1000, batch: 4, lr: 3e-3, format: SeqFormat::Masf, seed: 0 }
    }
}

/// Logged pieces of one decoder step. `loss` equals the sum of the three
/// weighted sums divided by `weight_total`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArStepMetrics {
    pub step: usize,
    pub loss: f64,
    pub weighted_text: f64,
    pub weighted_visual: f64,
    pub weighted_audio: f64,
    pub weight_total: f64,
    pub ce_text: f64,
    pub ce_visual: f64,
    pub ce_audio: f64,
}

#[derive(Debug, Clone)]
pub struct ArTrainer {
    pub decoder: Decoder,
    pub store: ParamStore,
    pub vocab: Vocabulary,
    pub cfg: ArTrainConfig,
    pub sequences: Vec<MultimodalSequence>,
    pub step: usize,
    adam: Adam,
    group: Vec<ParamId>,
}

impl ArTrainer {
    /// `contents` must all produce sequences of one length.
    pub fn new(dcfg: DecoderConfig, vocab: Vocabulary, cfg: ArTrainConfig, contents: &[SequenceContent]) -> Result<Self> {
        if dcfg.vocab_size != vocab.size() {
            return Err(Error::Config(format!("decoder vocabulary {} but token vocabulary {}", dcfg.vocab_size, vocab.size())));
        }
        let sequences = contents.iter().map(|c| build_sequence(&vocab, cfg.format, c, dcfg.max_len)).collect::<Result<Vec<_>>>()?;
        if sequences.is_empty() {
            return Err(Error::Empty("token sequences"));
        }
        if sequences.iter().any(|s| s.len() != sequences[0].len()) {
            return Err(Error::Config(String::from("all training sequences must share one length")));
        }
        let mut store = ParamStore::new();
        let decoder = Decoder::new(&mut store, dcfg, cfg.seed)?;
        let group = Decoder::params(&store);
        Ok(Self { decoder, store, vocab, cfg, sequences, step: 0, adam: Adam::new(cfg.lr), group })
    }

    pub fn train_step(&mut self) -> Result<ArStepMetrics> {
        let mut rng = step_rng(self.cfg.seed, self.step);
        let b = self.cfg.batch.min(self.sequences.len());
        let pick = sample(&mut rng, self.sequences.len(), b).into_vec();
        let seqs: Vec<&MultimodalSequence> = pick.iter().map(|i| &self.sequences[*i]).collect();
        let ids: Vec<&[usize]> = seqs.iter().map(|s| s.ids.as_slice()).collect();
        let (m, grads) = {
            let mut t = Tape::with_params(&self.store);
            let logits = self.decoder.forward_logits(&mut t, &ids)?;
            let l = ar_loss(&mut t, &self.decoder.cfg, &seqs, logits)?;
            let mean = |p: &crate::argen::ModalityLoss, g: f64| if p.count > 0 && g > 0.0 { p.weighted_sum / (g * p.count as f64) } else { 0.0 };
            let c = &self.decoder.cfg;
            let m = ArStepMetrics {
                step: self.step,
                loss: t.scalar(l.loss),
                weighted_text: l.parts[0].weighted_sum,
                weighted_visual: l.parts[1].weighted_sum,
                weighted_audio: l.parts[2].weighted_sum,
                weight_total: l.denominator,
                ce_text: mean(&l.parts[0], c.gamma_text),
                ce_visual: mean(&l.parts[1], c.gamma_visual),
                ce_audio: mean(&l.parts[2], c.gamma_audio),
            };
            (m, t.backward(l.loss)?)
        };
        self.store.accumulate(&grads)?;
        self.adam.step(&mut self.store, &self.group)?;
        self.store.zero_grads();
        self.step += 1;
        Ok(m)
    }

    /// Weighted loss of the given sequences without updating anything.
    pub fn evaluate(&self, seqs: &[&MultimodalSequence]) -> Result<f64> {
        let ids: Vec<&[usize]> = seqs.iter().map(|s| s.ids.as_slice()).collect();
        let mut t = Tape::with_params(&self.store);
        let logits = self.decoder.forward_logits(&mut t, &ids)?;
        let l = ar_loss(&mut t, &self.decoder.cfg, seqs, logits)?;
        Ok(t.scalar(l.loss))
    }

    pub fn export_state(&self) -> Vec<NamedArray> {
        let mut out = self.store.export();
        export_adam(&mut out, "optim/ar", &self.adam, &self.group, &self.store);
        out.push((String::from("trainer/step"), vec![1], vec![self.step as f64]));
        out
    }

    pub fn import_state(&mut self, arrays: &[NamedArray]) -> Result<()> {
        for id in self.store.ids().collect::<Vec<_>>() {
            let name = String::from(self.store.name(id));
            let a = arrays.iter().find(|a| a.0 == name).ok_or_else(|| Error::Config(format!("state is missing {name}")))?;
            self.store.assign(&name, &a.1, &a.2)?;
        }
        import_adam(arrays, "optim/ar", &mut self.adam, &self.group, &self.store)?;
        let step = arrays.iter().find(|a| a.0 == "trainer/step").ok_or_else(|| Error::Config(String::from("state is missing trainer/step")))?;
        self.step = step.2[0] as usize;
        Ok(())
    }
}
