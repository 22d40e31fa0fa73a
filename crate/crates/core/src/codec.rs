//! Two-stream convolutional VQGAN: per-modality encoder, quantizer, decoder,
//! frozen perceptual feature extractor and patch discriminator.
//!
//! Visual frames are encoded one at a time (`[N, C, H, W]` with one row per
//! frame). Audio frames are concatenated along the mel time axis and encoded
//! together (`[B, 1, F, n·T/L]`), so the audio grid of `n` frames is
//! `d_a × f × (n·t)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{AttnBlock, Conv2d, GroupNorm, ResBlock};
use crate::params::{ParamId, ParamStore};
use crate::quantizer::{Codebook, CodebookMode, QuantizerConfig};
use crate::Modality;

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub mel_bins: usize,
    pub mel_width: usize,
    pub frames: usize,
    pub ds_visual: usize,
    pub ds_audio: usize,
    pub dim_visual: usize,
    pub dim_audio: usize,
    pub codebook_visual: usize,
    pub codebook_audio: usize,
    /// Channel width after `conv_in` and after each downsampling stage.
    pub widths_visual: Vec<usize>,
    pub widths_audio: Vec<usize>,
    pub res_blocks: usize,
    pub attn_layers: usize,
    pub groups: usize,
    pub disc_width: usize,
    pub perceptual_width: usize,
    pub perceptual_seed: u64,
    pub quantizer: QuantizerConfig,
    pub alpha: f64,
}

impl CodecConfig {
    /// Shape-only preset at the published scale: 128×128 frames, 80×800 mel,
    /// 10 frames, downsampling 16, 256-d features, 8192/4096 codes.
    pub fn paper_scale() -> Self {
        Self {
            height: 128,
            width: 128,
            channels: 3,
            mel_bins: 80,
            mel_width: 800,
            frames: 10,
            ds_visual: 16,
            ds_audio: 16,
            dim_visual: 256,
            dim_audio: 256,
            codebook_visual: 8192,
            codebook_audio: 4096,
            widths_visual: vec![128, 128, 256, 256, 512],
            widths_audio: vec![128, 128, 256, 256, 512],
            res_blocks: 2,
            attn_layers: 2,
            groups: 8,
            disc_width: 64,
            perceptual_width: 64,
            perceptual_seed: 7,
            quantizer: QuantizerConfig::default(),
            alpha: 1.0,
        }
    }

    /// CPU-trainable preset: 16×16 frames, 16×80 mel, 5 frames, downsampling 4.
    pub fn desk() -> Self {
        Self {
            height: 16,
            width: 16,
            channels: 3,
            mel_bins: 16,
            mel_width: 80,
            frames: 5,
            ds_visual: 4,
            ds_audio: 4,
            dim_visual: 16,
            dim_audio: 16,
            codebook_visual: 64,
            codebook_audio: 64,
            widths_visual: vec![8, 16, 16],
            widths_audio: vec![8, 16, 16],
            res_blocks: 1,
            attn_layers: 2,
            groups: 8,
            disc_width: 8,
            perceptual_width: 8,
            perceptual_seed: 7,
            quantizer: QuantizerConfig::default(),
            alpha: 1.0,
        }
    }

    fn stages(ds: usize) -> Option<usize> {
        (ds.is_power_of_two() && ds >= 1).then(|| ds.trailing_zeros() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        let sv = Self::stages(self.ds_visual).ok_or_else(|| Error::Config(String::from("ds_visual must be a power of two")))?;
        let sa = Self::stages(self.ds_audio).ok_or_else(|| Error::Config(String::from("ds_audio must be a power of two")))?;
        if !self.height.is_multiple_of(self.ds_visual) || !self.width.is_multiple_of(self.ds_visual) {
            return err(format!("frame {}x{} not divisible by ds_visual {}", self.height, self.width, self.ds_visual));
        }
        if self.frames == 0 || !self.mel_width.is_multiple_of(self.frames) {
            return err(format!("mel width {} not divisible into {} frames", self.mel_width, self.frames));
        }
        if !self.mel_bins.is_multiple_of(self.ds_audio) || !self.audio_frame_width().is_multiple_of(self.ds_audio) {
            return err(format!(
                "mel {}x{} per frame not divisible by ds_audio {}",
                self.mel_bins,
                self.audio_frame_width(),
                self.ds_audio
            ));
        }
        if self.widths_visual.len() != sv + 1 || self.widths_audio.len() != sa + 1 {
            return err(String::from("need one channel width per downsampling stage plus the input stage"));
        }
        let all = self.widths_visual.iter().chain(&self.widths_audio).chain([&self.dim_visual, &self.dim_audio]);
        for c in all {
            if *c == 0 || c % self.groups != 0 {
                return err(format!("width {c} not divisible into {} groups", self.groups));
            }
        }
        if self.codebook_visual == 0 || self.codebook_audio == 0 {
            return err(String::from("codebooks need at least one entry"));
        }
        if !(self.quantizer.beta >= 0.0 && self.alpha >= 0.0) {
            return err(String::from("loss weights must be non-negative"));
        }
        Ok(())
    }

    pub fn audio_frame_width(&self) -> usize {
        self.mel_width / self.frames
    }

    /// `(h, w)` token grid of one visual frame.
    pub fn visual_grid(&self) -> (usize, usize) {
        (self.height / self.ds_visual, self.width / self.ds_visual)
    }

    /// `(f, t)` token grid of one audio frame.
    pub fn audio_grid(&self) -> (usize, usize) {
        (self.mel_bins / self.ds_audio, self.audio_frame_width() / self.ds_audio)
    }
}

#[derive(Debug, Clone)]
struct Encoder {
    conv_in: Conv2d,
    stages: Vec<(Conv2d, Vec<ResBlock>)>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
    attn: Vec<AttnBlock>,
}

impl Encoder {
    fn new(store: &mut ParamStore, name: &str, cfg: &CodecConfig, cin: usize, widths: &[usize], dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let g = cfg.groups;
        let conv_in = Conv2d::same3(store, &format!("{name}/conv_in"), cin, widths[0], rng)?;
        let mut stages = Vec::new();
        for s in 0..widths.len() - 1 {
            let down = Conv2d::new(store, &format!("{name}/down{s}/conv"), widths[s], widths[s + 1], 3, 2, 1, rng)?;
            let res = (0..cfg.res_blocks)
                .map(|r| ResBlock::new(store, &format!("{name}/down{s}/res{r}"), g, widths[s + 1], widths[s + 1], rng))
                .collect::<Result<Vec<_>>>()?;
            stages.push((down, res));
        }
        let last = *widths.last().expect("validated");
        Ok(Self {
            conv_in,
            stages,
            norm_out: GroupNorm::new(store, &format!("{name}/norm_out"), g, last)?,
            conv_out: Conv2d::same3(store, &format!("{name}/conv_out"), last, dim, rng)?,
            attn: (0..cfg.attn_layers)
                .map(|a| AttnBlock::new(store, &format!("{name}/attn{a}"), g, dim, rng))
                .collect::<Result<Vec<_>>>()?,
        })
    }

    fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let mut h = self.conv_in.forward(t, x)?;
        for (down, res) in &self.stages {
            h = down.forward(t, h)?;
            for r in res {
                h = r.forward(t, h)?;
            }
        }
        h = self.norm_out.forward(t, h)?;
        h = t.silu(h)?;
        h = self.conv_out.forward(t, h)?;
        for a in &self.attn {
            h = a.forward(t, h)?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
struct Decoder {
    conv_in: Conv2d,
    mid: ResBlock,
    stages: Vec<(Conv2d, Vec<ResBlock>)>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

impl Decoder {
    fn new(store: &mut ParamStore, name: &str, cfg: &CodecConfig, cout: usize, widths: &[usize], dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let g = cfg.groups;
        let last = *widths.last().expect("validated");
        let conv_in = Conv2d::same3(store, &format!("{name}/conv_in"), dim, last, rng)?;
        let mid = ResBlock::new(store, &format!("{name}/mid"), g, last, last, rng)?;
        let mut stages = Vec::new();
        for s in (0..widths.len() - 1).rev() {
            let up = Conv2d::same3(store, &format!("{name}/up{s}/conv"), widths[s + 1], widths[s], rng)?;
            let res = (0..cfg.res_blocks)
                .map(|r| ResBlock::new(store, &format!("{name}/up{s}/res{r}"), g, widths[s], widths[s], rng))
                .collect::<Result<Vec<_>>>()?;
            stages.push((up, res));
        }
        Ok(Self {
            conv_in,
            mid,
            stages,
            norm_out: GroupNorm::new(store, &format!("{name}/norm_out"), g, widths[0])?,
            conv_out: Conv2d::same3(store, &format!("{name}/conv_out"), widths[0], cout, rng)?,
        })
    }

    fn forward(&self, t: &mut Tape, z: Var) -> Result<Var> {
        let mut h = self.conv_in.forward(t, z)?;
        h = self.mid.forward(t, h)?;
        for (up, res) in &self.stages {
            h = t.upsample_nearest(h, 2)?;
            h = up.forward(t, h)?;
            for r in res {
                h = r.forward(t, h)?;
            }
        }
        h = self.norm_out.forward(t, h)?;
        h = t.silu(h)?;
        self.conv_out.forward(t, h)
    }
}

/// Three strided convolutions producing one logit per patch.
#[derive(Debug, Clone)]
struct PatchDiscriminator {
    convs: [Conv2d; 3],
}

impl PatchDiscriminator {
    fn new(store: &mut ParamStore, name: &str, cin: usize, width: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            convs: [
                Conv2d::new(store, &format!("{name}/conv0"), cin, width, 3, 2, 1, rng)?,
                Conv2d::new(store, &format!("{name}/conv1"), width, 2 * width, 3, 2, 1, rng)?,
                Conv2d::new(store, &format!("{name}/conv2"), 2 * width, 1, 3, 1, 1, rng)?,
            ],
        })
    }

    fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let h = self.convs[0].forward(t, x)?;
        let h = t.silu(h)?;
        let h = self.convs[1].forward(t, h)?;
        let h = t.silu(h)?;
        self.convs[2].forward(t, h)
    }
}

/// Frozen random convolutional feature stack standing in for a pretrained
/// perceptual network. Always bound as constants.
#[derive(Debug, Clone)]
struct PerceptualNet {
    convs: [Conv2d; 3],
    params: Vec<ParamId>,
}

impl PerceptualNet {
    fn new(store: &mut ParamStore, name: &str, cin: usize, width: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = [
            Conv2d::new(store, &format!("{name}/conv0"), cin, width, 3, 1, 1, &mut rng)?,
            Conv2d::new(store, &format!("{name}/conv1"), width, width, 3, 2, 1, &mut rng)?,
            Conv2d::new(store, &format!("{name}/conv2"), width, 2 * width, 3, 2, 1, &mut rng)?,
        ];
        let params = convs.iter().flat_map(|c| [c.weight, c.bias]).collect();
        Ok(Self { convs, params })
    }

    fn features(&self, t: &mut Tape, x: Var) -> Result<[Var; 3]> {
        t.freeze(&self.params);
        let a = self.convs[0].forward(t, x)?;
        let a = t.silu(a)?;
        let b = self.convs[1].forward(t, a)?;
        let b = t.silu(b)?;
        let c = self.convs[2].forward(t, b)?;
        let c = t.silu(c)?;
        Ok([a, b, c])
    }
}

/// One modality's autoencoder, quantizer, discriminator and perceptual net.
#[derive(Debug, Clone)]
pub struct Stream {
    pub modality: Modality,
    encoder: Encoder,
    decoder: Decoder,
    disc: PatchDiscriminator,
    percep: PerceptualNet,
    pub codebook: Codebook,
    prefix: String,
}

/// Logged pieces of one stream's VQGAN loss.
#[derive(Debug, Clone)]
pub struct StreamLoss {
    pub total: Var,
    pub recon: Var,
    pub perceptual: Var,
    pub codebook: Var,
    /// Non-saturating generator term `−log D(x̂)`, or `None` when the
    /// adversarial weight is zero.
    pub adversarial: Option<Var>,
    pub adv_weight: f64,
    /// Pre-quantization encoder output.
    pub z: Var,
    pub reconstruction: Var,
    pub indices: Vec<usize>,
}

/// Adversarial quantities for one real/fake pair.
#[derive(Debug, Clone, Copy)]
pub struct AdversarialTerms {
    /// `mean(log D(x) + log(1 − D(x̂)))` over patches.
    pub objective: Var,
    /// Discriminator minimizes the negated objective.
    pub d_loss: Var,
    /// Generator's non-saturating `mean(−log D(x̂))`.
    pub g_loss: Var,
}

impl Stream {
    fn new(store: &mut ParamStore, cfg: &CodecConfig, modality: Modality, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (tag, cin, widths, dim, n, seed) = match modality {
            Modality::Visual => ("visual", cfg.channels, &cfg.widths_visual, cfg.dim_visual, cfg.codebook_visual, cfg.perceptual_seed),
            Modality::Audio => ("audio", 1, &cfg.widths_audio, cfg.dim_audio, cfg.codebook_audio, cfg.perceptual_seed ^ 0x5a5a),
        };
        let prefix = format!("codec/{tag}");
        Ok(Self {
            modality,
            encoder: Encoder::new(store, &format!("{prefix}/enc"), cfg, cin, widths, dim, rng)?,
            decoder: Decoder::new(store, &format!("{prefix}/dec"), cfg, cin, widths, dim, rng)?,
            disc: PatchDiscriminator::new(store, &format!("{prefix}/disc"), cin, cfg.disc_width, rng)?,
            percep: PerceptualNet::new(store, &format!("{prefix}/percep"), cin, cfg.perceptual_width, seed)?,
            codebook: Codebook::new(store, &format!("{prefix}/quant"), n, dim, cfg.quantizer, rng)?,
            prefix,
        })
    }

    pub fn encode(&self, t: &mut Tape, x: Var) -> Result<Var> {
        self.encoder.forward(t, x)
    }

    pub fn decode(&self, t: &mut Tape, zq: Var) -> Result<Var> {
        self.decoder.forward(t, zq)
    }

    pub fn discriminate(&self, t: &mut Tape, x: Var) -> Result<Var> {
        self.disc.forward(t, x)
    }

    /// Sum over the three feature stages of the mean squared feature difference.
    pub fn perceptual_distance(&self, t: &mut Tape, x: Var, x_hat: Var) -> Result<Var> {
        if t.shape(x) != t.shape(x_hat) {
            return Err(Error::shape("perceptual_distance", t.shape(x), t.shape(x_hat)));
        }
        let fx = self.percep.features(t, x)?;
        let fy = self.percep.features(t, x_hat)?;
        let mut total = None;
        for (a, b) in fx.iter().zip(&fy) {
            let d = t.sub(*a, *b)?;
            let d = t.square(d)?;
            let m = t.mean(d)?;
            total = Some(match total {
                None => m,
                Some(acc) => t.add(acc, m)?,
            });
        }
        Ok(total.expect("three stages"))
    }

    /// Generator-side parameters: encoder, decoder and (in loss mode) codebook.
    pub fn generator_params(&self, store: &ParamStore) -> Vec<ParamId> {
        let mut ids = store.ids_with_prefix(&format!("{}/enc/", self.prefix));
        ids.extend(store.ids_with_prefix(&format!("{}/dec/", self.prefix)));
        if self.codebook.cfg.mode == CodebookMode::Loss {
            ids.push(self.codebook.entries);
        }
        ids
    }

    pub fn discriminator_params(&self, store: &ParamStore) -> Vec<ParamId> {
        store.ids_with_prefix(&format!("{}/disc/", self.prefix))
    }

    /// Encode → quantize → decode and the full VQGAN loss for one stream.
    /// When `adv_weight > 0` the discriminator is bound frozen so its
    /// parameters never receive generator gradients.
    pub fn vqgan_loss(&self, t: &mut Tape, store: &ParamStore, x: Var, adv_weight: f64) -> Result<StreamLoss> {
        let z = self.encode(t, x)?;
        let q = self.codebook.quantize(t, z)?;
        let x_hat = self.decode(t, q.quantized)?;
        if t.shape(x_hat) != t.shape(x) {
            return Err(Error::shape("vqgan_loss", t.shape(x), t.shape(x_hat)));
        }
        let diff = t.sub(x, x_hat)?;
        let sq = t.square(diff)?;
        let recon = t.mean(sq)?;
        let perceptual = self.perceptual_distance(t, x, x_hat)?;
        let mut total = t.add(recon, perceptual)?;
        total = t.add(total, q.codebook_loss)?;
        let adversarial = if adv_weight > 0.0 {
            t.freeze(&self.discriminator_params(store));
            let logits = self.discriminate(t, x_hat)?;
            let ls = t.log_sigmoid(logits)?;
            let m = t.mean(ls)?;
            let g = t.neg(m)?;
            let w = t.scale(g, adv_weight)?;
            total = t.add(total, w)?;
            Some(g)
        } else {
            None
        };
        Ok(StreamLoss {
            total,
            recon,
            perceptual,
            codebook: q.codebook_loss,
            adversarial,
            adv_weight,
            z,
            reconstruction: x_hat,
            indices: q.indices,
        })
    }
}

/// Adversarial terms from real and fake patch logits.
pub fn adversarial_terms(t: &mut Tape, real_logits: Var, fake_logits: Var) -> Result<AdversarialTerms> {
    let log_real = t.log_sigmoid(real_logits)?;
    let log_real = t.mean(log_real)?;
    let neg_fake = t.neg(fake_logits)?;
    let log_not_fake = t.log_sigmoid(neg_fake)?;
    let log_not_fake = t.mean(log_not_fake)?;
    let objective = t.add(log_real, log_not_fake)?;
    let d_loss = t.neg(objective)?;
    let lf = t.log_sigmoid(fake_logits)?;
    let lf = t.mean(lf)?;
    let g_loss = t.neg(lf)?;
    Ok(AdversarialTerms { objective, d_loss, g_loss })
}

/// `log D(x) + log(1 − D(x̂))` for patch probabilities, averaged over patches.
/// Probabilities of exactly 0 or 1 are allowed (`0·log 0` never arises
/// because the terms are taken as written).
pub fn adversarial_objective_from_probs(p_real: &[f64], p_fake: &[f64]) -> f64 {
    let real: f64 = p_real.iter().map(|p| libm::log(*p)).sum::<f64>() / p_real.len() as f64;
    let fake: f64 = p_fake.iter().map(|p| libm::log(1.0 - p)).sum::<f64>() / p_fake.len() as f64;
    real + fake
}

#[derive(Debug, Clone)]
pub struct Codec {
    pub cfg: CodecConfig,
    pub visual: Stream,
    pub audio: Stream,
}

impl Codec {
    pub fn new(store: &mut ParamStore, cfg: CodecConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let visual = Stream::new(store, &cfg, Modality::Visual, &mut rng)?;
        let audio = Stream::new(store, &cfg, Modality::Audio, &mut rng)?;
        Ok(Self { cfg, visual, audio })
    }

    pub fn stream(&self, m: Modality) -> &Stream {
        match m {
            Modality::Visual => &self.visual,
            Modality::Audio => &self.audio,
        }
    }

    pub fn stream_mut(&mut self, m: Modality) -> &mut Stream {
        match m {
            Modality::Visual => &mut self.visual,
            Modality::Audio => &mut self.audio,
        }
    }

    /// Frames `[N, C, H, W]` → features `[N, d_v, h, w]`.
    pub fn encode_visual(&self, t: &mut Tape, frames: Var) -> Result<Var> {
        let c = &self.cfg;
        let s = t.shape(frames);
        if s.len() != 4 || s[1] != c.channels || s[2] != c.height || s[3] != c.width {
            return Err(Error::shape("encode_visual", s, &[c.channels, c.height, c.width]));
        }
        self.visual.encode(t, frames)
    }

    /// Concatenated mel frames `[B, 1, F, n·T/L]` → features `[B, d_a, f, n·t]`.
    pub fn encode_audio(&self, t: &mut Tape, mel: Var) -> Result<Var> {
        let c = &self.cfg;
        let s = t.shape(mel);
        let fw = c.audio_frame_width();
        if s.len() != 4 || s[1] != 1 || s[2] != c.mel_bins || s[3] == 0 || !s[3].is_multiple_of(fw) {
            return Err(Error::shape("encode_audio", s, &[1, c.mel_bins, fw]));
        }
        self.audio.encode(t, mel)
    }

    pub fn decode_visual(&self, t: &mut Tape, zq: Var) -> Result<Var> {
        let (h, w) = self.cfg.visual_grid();
        let s = t.shape(zq);
        if s.len() != 4 || s[1] != self.cfg.dim_visual || s[2] != h || s[3] != w {
            return Err(Error::shape("decode_visual", s, &[self.cfg.dim_visual, h, w]));
        }
        self.visual.decode(t, zq)
    }

    pub fn decode_audio(&self, t: &mut Tape, zq: Var) -> Result<Var> {
        let (f, tt) = self.cfg.audio_grid();
        let s = t.shape(zq);
        if s.len() != 4 || s[1] != self.cfg.dim_audio || s[2] != f || s[3] == 0 || !s[3].is_multiple_of(tt) {
            return Err(Error::shape("decode_audio", s, &[self.cfg.dim_audio, f, tt]));
        }
        self.audio.decode(t, zq)
    }

    pub fn generator_params(&self, store: &ParamStore) -> Vec<ParamId> {
        let mut ids = self.visual.generator_params(store);
        ids.extend(self.audio.generator_params(store));
        ids
    }

    pub fn discriminator_params(&self, store: &ParamStore) -> Vec<ParamId> {
        let mut ids = self.visual.discriminator_params(store);
        ids.extend(self.audio.discriminator_params(store));
        ids
    }
}

/// `[B, d, f, n·t]` → `[B·n, d, f, t]`: one audio grid per frame, clip-major.
pub fn split_audio_frames(t: &mut Tape, z: Var, frames: usize) -> Result<Var> {
    let s = t.shape(z).to_vec();
    let [b, d, f, width] = s.as_slice() else {
        return Err(Error::shape("split_audio_frames", &s, &[frames]));
    };
    if frames == 0 || width % frames != 0 {
        return Err(Error::shape("split_audio_frames", &s, &[frames]));
    }
    let tt = width / frames;
    let r = t.reshape(z, &[*b, *d, *f, frames, tt])?;
    let p = t.permute(r, &[0, 3, 1, 2, 4])?;
    t.reshape(p, &[b * frames, *d, *f, tt])
}

/// `L_v + L_a + α·L_HCL`.
pub fn svg_total_loss(t: &mut Tape, visual: &StreamLoss, audio: &StreamLoss, hcl: Option<Var>, alpha: f64) -> Result<Var> {
    let base = t.add(visual.total, audio.total)?;
    match hcl {
        Some(h) if alpha != 0.0 => {
            let w = t.scale(h, alpha)?;
            t.add(base, w)
        }
        _ => Ok(base),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        CodecConfig::paper_scale().validate().unwrap();
        CodecConfig::desk().validate().unwrap();
    }

    #[test]
    fn paper_scale_token_grids() {
        let c = CodecConfig::paper_scale();
        assert_eq!(c.visual_grid(), (8, 8));
        assert_eq!(c.audio_grid(), (5, 5));
    }

    #[test]
    fn desk_grid() {
        assert_eq!(CodecConfig::desk().visual_grid(), (4, 4));
    }

    #[test]
    fn indivisible_frame_is_rejected() {
        let mut c = CodecConfig::desk();
        c.height = 18;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn adversarial_constants() {
        let half = adversarial_objective_from_probs(&[0.5; 4], &[0.5; 4]);
        assert!((half + 2.0 * core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(adversarial_objective_from_probs(&[1.0; 3], &[0.0; 3]), 0.0);
        let mut t = Tape::new();
        let r = t.constant(&[1, 1, 2, 2], vec![0.0; 4]).unwrap();
        let f = t.constant(&[1, 1, 2, 2], vec![0.0; 4]).unwrap();
        let a = adversarial_terms(&mut t, r, f).unwrap();
        assert!((t.scalar(a.objective) + 2.0 * core::f64::consts::LN_2).abs() < 1e-15);
        assert!((t.scalar(a.g_loss) - core::f64::consts::LN_2).abs() < 1e-15);
    }
}
