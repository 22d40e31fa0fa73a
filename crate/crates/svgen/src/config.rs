//! Run configuration: `[section]` headers followed by `key = value` lines.
//!
//! A `preset` key in `[run]` (default `desk`) selects the starting values;
//! every other key overrides one field. Unknown sections and keys are errors.
//! `#` starts a comment.

use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use svgen_core::argen::{DecoderConfig, SamplingConfig};
use svgen_core::codec::CodecConfig;
use svgen_core::hcl::HclVariant;
use svgen_core::quantizer::CodebookMode;
use svgen_core::seqfmt::{SeqFormat, Vocabulary};
use svgen_core::synthdata::SynthConfig;
use svgen_core::train::{ArTrainConfig, CodecTrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    PaperScale,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::PaperScale => "paper-scale",
        }
    }
}

/// Dataset size and corruption; geometry comes from the codec section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataConfig {
    pub classes: usize,
    pub text_vocab: usize,
    pub square: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub corrupt_prob: f64,
}

/// Decoder shape; the vocabulary size follows from the codec and data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderShape {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub mlp_ratio: usize,
    pub gamma_text: f64,
    pub gamma_visual: f64,
    pub gamma_audio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub run_id: String,
    pub codec: CodecConfig,
    pub train: CodecTrainConfig,
    pub data: DataConfig,
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub format: SeqFormat,
    pub max_len: usize,
    pub decoder: DecoderShape,
    pub ar: ArTrainConfig,
    pub sampling: SamplingConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (codec, decoder, max_len) = match preset {
            Preset::Desk => (
                CodecConfig::desk(),
                DecoderShape { layers: 4, heads: 4, model_dim: 128, mlp_ratio: 4, gamma_text: 3.0, gamma_visual: 1.0, gamma_audio: 2.0 },
                512,
            ),
            Preset::PaperScale => (
                CodecConfig::paper_scale(),
                DecoderShape { layers: 24, heads: 16, model_dim: 1024, mlp_ratio: 4, gamma_text: 3.0, gamma_visual: 1.0, gamma_audio: 2.0 },
                1025,
            ),
        };
        let synth = SynthConfig::desk();
        Self {
            preset,
            seed: 0,
            out_dir: PathBuf::from("runs"),
            run_id: String::from("run"),
            codec,
            train: CodecTrainConfig::desk(),
            data: DataConfig { classes: synth.classes, text_vocab: synth.text_vocab, square: synth.square, n_train: 64, n_test: 96, corrupt_prob: 0.0 },
            eval_every: 100,
            checkpoint_every: 0,
            format: SeqFormat::Masf,
            max_len,
            decoder,
            ar: ArTrainConfig::desk(),
            sampling: SamplingConfig { temperature: 1.0, top_k: 16 },
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut lines = Vec::new();
        let mut section = String::new();
        let mut preset = Preset::Desk;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| CliError::Config(format!("line {}: {m}", no + 1));
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| err(format!("malformed section header `{line}`")))?.trim();
                if !SECTIONS.contains(&name) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if section.is_empty() {
                return Err(err(format!("`{k}` appears before any section")));
            }
            if section == "run" && k == "preset" {
                preset = match v.as_str() {
                    "desk" => Preset::Desk,
                    "paper-scale" => Preset::PaperScale,
                    _ => return Err(err(format!("unknown preset `{v}`"))),
                };
                continue;
            }
            lines.push((no + 1, section.clone(), k, v));
        }
        let mut cfg = Self::preset(preset);
        for (no, section, k, v) in lines {
            cfg.set(&section, &k, &v).map_err(|m| CliError::Config(format!("line {no}: [{section}] {k}: {m}")))?;
        }
        cfg.sync();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, section: &str, k: &str, v: &str) -> Result<(), String> {
        fn p<T: std::str::FromStr>(v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse `{v}`"))
        }
        fn list(v: &str) -> Result<Vec<usize>, String> {
            v.split(',').map(|x| p(x.trim())).collect()
        }
        fn flag(v: &str) -> Result<bool, String> {
            match v {
                "true" | "1" | "on" => Ok(true),
                "false" | "0" | "off" => Ok(false),
                _ => Err(format!("expected a boolean, got `{v}`")),
            }
        }
        let c = &mut self.codec;
        let t = &mut self.train;
        let d = &mut self.data;
        let dec = &mut self.decoder;
        match (section, k) {
            ("run", "seed") => self.seed = p(v)?,
            ("run", "out_dir") => self.out_dir = PathBuf::from(v),
            ("run", "run_id") => self.run_id = v.to_string(),

            ("codec", "height") => c.height = p(v)?,
            ("codec", "width") => c.width = p(v)?,
            ("codec", "channels") => c.channels = p(v)?,
            ("codec", "mel_bins") => c.mel_bins = p(v)?,
            ("codec", "mel_width") => c.mel_width = p(v)?,
            ("codec", "frames") => c.frames = p(v)?,
            ("codec", "ds_visual") => c.ds_visual = p(v)?,
            ("codec", "ds_audio") => c.ds_audio = p(v)?,
            ("codec", "dim_visual") => c.dim_visual = p(v)?,
            ("codec", "dim_audio") => c.dim_audio = p(v)?,
            ("codec", "codebook_visual") => c.codebook_visual = p(v)?,
            ("codec", "codebook_audio") => c.codebook_audio = p(v)?,
            ("codec", "widths_visual") => c.widths_visual = list(v)?,
            ("codec", "widths_audio") => c.widths_audio = list(v)?,
            ("codec", "res_blocks") => c.res_blocks = p(v)?,
            ("codec", "attn_layers") => c.attn_layers = p(v)?,
            ("codec", "groups") => c.groups = p(v)?,
            ("codec", "disc_width") => c.disc_width = p(v)?,
            ("codec", "perceptual_width") => c.perceptual_width = p(v)?,
            ("codec", "perceptual_seed") => c.perceptual_seed = p(v)?,
            ("codec", "beta") => c.quantizer.beta = p(v)?,
            ("codec", "decay") => c.quantizer.decay = p(v)?,
            ("codec", "epsilon") => c.quantizer.epsilon = p(v)?,
            ("codec", "dead_threshold") => c.quantizer.dead_threshold = p(v)?,
            ("codec", "codebook_mode") => {
                c.quantizer.mode = match v {
                    "ema" => CodebookMode::Ema,
                    "loss" => CodebookMode::Loss,
                    _ => return Err(format!("expected ema or loss, got `{v}`")),
                }
            }

            ("hcl", "alpha") => t.alpha = p(v)?,
            ("hcl", "tau") => t.hcl.tau = p(v)?,
            ("hcl", "variant") => {
                t.hcl.variant = match v {
                    "split" => HclVariant::ModalitySplit,
                    "gathered" => HclVariant::ModalityGathered,
                    _ => return Err(format!("expected split or gathered, got `{v}`")),
                }
            }
            ("hcl", "info_nce") => t.hcl.info_nce = flag(v)?,
            ("hcl", "vaf") => t.vaf_enabled = flag(v)?,
            ("hcl", "vaf_threshold") => t.vaf_threshold = p(v)?,
            ("hcl", "tns_threshold") => t.tns_threshold = p(v)?,
            ("hcl", "window") => t.window = p(v)?,
            ("hcl", "common_dim") => t.common_dim = p(v)?,

            ("data", "classes") => d.classes = p(v)?,
            ("data", "text_vocab") => d.text_vocab = p(v)?,
            ("data", "square") => d.square = p(v)?,
            ("data", "n_train") => d.n_train = p(v)?,
            ("data", "n_test") => d.n_test = p(v)?,
            ("data", "corrupt_prob") => d.corrupt_prob = p(v)?,

            ("training", "steps") => t.steps = p(v)?,
            ("training", "batch_clips") => t.batch_clips = p(v)?,
            ("training", "crop_frames") => t.crop_frames = p(v)?,
            ("training", "full_frames_from") => t.full_frames_from = if v == "none" { None } else { Some(p(v)?) },
            ("training", "lr") => t.lr = p(v)?,
            ("training", "lr_disc") => t.lr_disc = p(v)?,
            ("training", "cosine_decay") => t.cosine_decay = flag(v)?,
            ("training", "adv_weight") => t.adv_weight = p(v)?,
            ("training", "disc_warmup") => t.disc_warmup = p(v)?,
            ("training", "reseed_every") => t.reseed_every = p(v)?,
            ("training", "retrieval_batch") => t.retrieval_batch = p(v)?,
            ("training", "eval_every") => self.eval_every = p(v)?,
            ("training", "checkpoint_every") => self.checkpoint_every = p(v)?,

            ("seqfmt", "format") => self.format = SeqFormat::from_name(v).map_err(|e| e.to_string())?,
            ("seqfmt", "max_len") => self.max_len = p(v)?,

            ("decoder", "layers") => dec.layers = p(v)?,
            ("decoder", "heads") => dec.heads = p(v)?,
            ("decoder", "model_dim") => dec.model_dim = p(v)?,
            ("decoder", "mlp_ratio") => dec.mlp_ratio = p(v)?,
            ("decoder", "gamma_text") => dec.gamma_text = p(v)?,
            ("decoder", "gamma_visual") => dec.gamma_visual = p(v)?,
            ("decoder", "gamma_audio") => dec.gamma_audio = p(v)?,
            ("decoder", "steps") => self.ar.steps = p(v)?,
            ("decoder", "batch") => self.ar.batch = p(v)?,
            ("decoder", "lr") => self.ar.lr = p(v)?,
            ("decoder", "temperature") => self.sampling.temperature = p(v)?,
            ("decoder", "top_k") => self.sampling.top_k = p(v)?,
            _ => return Err(String::from("unknown key")),
        }
        Ok(())
    }

    /// Propagates the run-level seed and format into the trainer configs.
    pub fn sync(&mut self) {
        self.train.seed = self.seed;
        self.ar.seed = self.seed;
        self.ar.format = self.format;
        self.codec.alpha = self.train.alpha;
        self.train.hcl.alpha = self.train.alpha;
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sync();
        self
    }

    pub fn with_format(mut self, format: SeqFormat) -> Self {
        self.format = format;
        self.sync();
        self
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            height: self.codec.height,
            width: self.codec.width,
            channels: self.codec.channels,
            mel_bins: self.codec.mel_bins,
            mel_width: self.codec.mel_width,
            frames: self.codec.frames,
            classes: self.data.classes,
            text_vocab: self.data.text_vocab,
            square: self.data.square,
        }
    }

    pub fn vocabulary(&self) -> Result<Vocabulary, CliError> {
        Ok(Vocabulary::new(self.data.text_vocab, self.codec.codebook_visual, self.codec.codebook_audio, self.codec.frames)?)
    }

    pub fn decoder_config(&self) -> Result<DecoderConfig, CliError> {
        let v = self.vocabulary()?;
        let d = self.decoder;
        let mut cfg = DecoderConfig::small(d.layers, d.heads, d.model_dim, self.max_len, v.size());
        cfg.mlp_ratio = d.mlp_ratio;
        cfg.gamma_text = d.gamma_text;
        cfg.gamma_visual = d.gamma_visual;
        cfg.gamma_audio = d.gamma_audio;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.codec.validate()?;
        self.train.validate(&self.codec)?;
        if self.preset == Preset::Desk {
            self.synth().validate()?;
        }
        if self.data.n_train == 0 || self.data.n_test == 0 || !(0.0..=1.0).contains(&self.data.corrupt_prob) {
            return Err(CliError::Config(String::from("data needs train and test clips and a corruption probability in [0, 1]")));
        }
        if self.eval_every == 0 {
            return Err(CliError::Config(String::from("eval_every must be positive")));
        }
        self.decoder_config()?.validate()?;
        Ok(())
    }

    /// Every field that influences results, one `section.key = value` per
    /// line in a fixed order. Output location is excluded.
    pub fn canonical(&self) -> String {
        let mut s = self.canonical_codec();
        let _ = writeln!(s, "seqfmt = format={} max_len={}", self.format, self.max_len);
        let _ = writeln!(s, "decoder = {:?} ar={:?} sampling={:?}", self.decoder, self.ar, self.sampling);
        s
    }

    /// The part of [`RunConfig::canonical`] that a codec run depends on.
    pub fn canonical_codec(&self) -> String {
        let mut s = String::new();
        let c = &self.codec;
        let t = &self.train;
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("run.preset", self.preset.name().into());
        put("run.seed", self.seed.to_string());
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        for (k, v) in [
            ("height", c.height),
            ("width", c.width),
            ("channels", c.channels),
            ("mel_bins", c.mel_bins),
            ("mel_width", c.mel_width),
            ("frames", c.frames),
            ("ds_visual", c.ds_visual),
            ("ds_audio", c.ds_audio),
            ("dim_visual", c.dim_visual),
            ("dim_audio", c.dim_audio),
            ("codebook_visual", c.codebook_visual),
            ("codebook_audio", c.codebook_audio),
            ("res_blocks", c.res_blocks),
            ("attn_layers", c.attn_layers),
            ("groups", c.groups),
            ("disc_width", c.disc_width),
            ("perceptual_width", c.perceptual_width),
        ] {
            put(&format!("codec.{k}"), v.to_string());
        }
        put("codec.widths_visual", join(&c.widths_visual));
        put("codec.widths_audio", join(&c.widths_audio));
        put("codec.perceptual_seed", c.perceptual_seed.to_string());
        put("codec.quantizer", format!("{:?}", c.quantizer));
        put("hcl", format!("{:?} alpha={} vaf={} vaf_threshold={} tns_threshold={} window={} common_dim={}", t.hcl, t.alpha, t.vaf_enabled, t.vaf_threshold, t.tns_threshold, t.window, t.common_dim));
        put("data", format!("{:?}", self.data));
        put(
            "training",
            format!(
                "steps={} batch_clips={} crop_frames={} full_frames_from={:?} lr={} lr_disc={} cosine_decay={} adv_weight={} disc_warmup={} reseed_every={} retrieval_batch={} eval_every={}",
                t.steps, t.batch_clips, t.crop_frames, t.full_frames_from, t.lr, t.lr_disc, t.cosine_decay, t.adv_weight, t.disc_warmup, t.reseed_every, t.retrieval_batch, self.eval_every
            ),
        );
        s
    }

    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.canonical().as_bytes()).into()
    }

    pub fn codec_hash(&self) -> [u8; 32] {
        Sha256::digest(self.canonical_codec().as_bytes()).into()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.run_id)
    }
}

const SECTIONS: [&str; 7] = ["run", "codec", "hcl", "data", "training", "seqfmt", "decoder"];
