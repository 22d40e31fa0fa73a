//! Deterministic synthetic clips: a coloured square moving over a noisy
//! background, a mel spectrogram made of the class's spectral peaks modulated
//! by the square's speed, and a short class caption.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub mel_bins: usize,
    pub mel_width: usize,
    pub frames: usize,
    pub classes: usize,
    pub text_vocab: usize,
    pub square: usize,
}

impl SynthConfig {
    pub fn desk() -> Self {
        Self { height: 16, width: 16, channels: 3, mel_bins: 16, mel_width: 80, frames: 5, classes: 8, text_vocab: 16, square: 5 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::Config(format!("synthetic frames are RGB, got {} channels", self.channels)));
        }
        if self.frames == 0 || !self.mel_width.is_multiple_of(self.frames) {
            return Err(Error::Config(format!("mel width {} not divisible into {} frames", self.mel_width, self.frames)));
        }
        if self.classes < 2 || self.classes > PALETTES.len() {
            return Err(Error::Config(format!("need 2..={} classes, got {}", PALETTES.len(), self.classes)));
        }
        if self.text_vocab < self.classes + 2 {
            return Err(Error::Config(format!("text vocabulary {} too small for {} classes", self.text_vocab, self.classes)));
        }
        if self.square == 0 || self.square >= self.height.min(self.width) || self.mel_bins < 4 {
            return Err(Error::Config(String::from("square must fit inside the frame and mel needs ≥ 4 bins")));
        }
        Ok(())
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn mel_frame_width(&self) -> usize {
        self.mel_width / self.frames
    }
}

pub const PALETTES: [[f64; 3]; 8] = [
    [0.95, 0.2, 0.2],
    [0.2, 0.9, 0.25],
    [0.25, 0.3, 0.95],
    [0.95, 0.9, 0.2],
    [0.9, 0.25, 0.9],
    [0.2, 0.9, 0.9],
    [0.95, 0.6, 0.2],
    [0.6, 0.6, 0.6],
];

/// Background pixels stay below this, so the square is recoverable exactly.
pub const BACKGROUND_MAX: f64 = 0.3;

/// Two Gaussian peaks per class, spread across the mel axis.
pub fn class_signature(cfg: &SynthConfig, class: usize) -> Vec<f64> {
    let f = cfg.mel_bins as f64;
    let c1 = 0.5 + class as f64 * (f - 1.0) / cfg.classes as f64;
    let c2 = (c1 + f * 0.37) % f;
    (0..cfg.mel_bins)
        .map(|i| {
            let x = i as f64;
            let g = |c: f64| libm::exp(-0.5 * (x - c) * (x - c) / 0.8);
            g(c1) + 0.6 * g(c2)
        })
        .collect()
}

pub fn text_template(cfg: &SynthConfig, class: usize) -> Vec<usize> {
    let extra = cfg.text_vocab - cfg.classes;
    vec![class, cfg.classes + (class * 3) % extra, cfg.classes + (class * 5 + 1) % extra]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub class_id: usize,
    /// Top-left corner at frame 0.
    pub start: (usize, usize),
    /// Displacement `(dx, dy)` into each frame; entry 0 is the motion leading into frame 0.
    pub motion: Vec<(i64, i64)>,
    pub palette: [f64; 3],
    pub signature: Vec<f64>,
    pub signature_class: usize,
    pub corrupt_av: bool,
}

impl SceneSpec {
    /// Deterministic spec for `(seed, class, corrupt)`.
    pub fn derive(cfg: &SynthConfig, seed: u64, class_id: usize, corrupt_av: bool) -> Result<Self> {
        cfg.validate()?;
        if class_id >= cfg.classes {
            return Err(Error::invalid("scene_spec", format!("class {class_id} outside 0..{}", cfg.classes)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let room = |extent: usize| (extent - cfg.square) as i64;
        let max_step = |extent: usize| (room(extent) / (cfg.frames.max(2) as i64 - 1)).clamp(0, 2);
        let (sx, sy) = (max_step(cfg.width), max_step(cfg.height));
        let motion: Vec<(i64, i64)> = (0..cfg.frames).map(|_| (rng.random_range(-sx..=sx), rng.random_range(-sy..=sy))).collect();
        let span = |pick: fn(&(i64, i64)) -> i64| {
            let mut pos = 0i64;
            let (mut lo, mut hi) = (0i64, 0i64);
            for m in &motion[1..] {
                pos += pick(m);
                lo = lo.min(pos);
                hi = hi.max(pos);
            }
            (lo, hi)
        };
        let (xlo, xhi) = span(|m| m.0);
        let (ylo, yhi) = span(|m| m.1);
        let x0 = rng.random_range(-xlo..=room(cfg.width) - xhi) as usize;
        let y0 = rng.random_range(-ylo..=room(cfg.height) - yhi) as usize;
        let signature_class = if corrupt_av { (class_id + rng.random_range(1..cfg.classes)) % cfg.classes } else { class_id };
        Ok(Self {
            class_id,
            start: (x0, y0),
            motion,
            palette: PALETTES[class_id],
            signature: class_signature(cfg, signature_class),
            signature_class,
            corrupt_av,
        })
    }

    /// Top-left corner in each frame.
    pub fn positions(&self) -> Vec<(usize, usize)> {
        let mut p = (self.start.0 as i64, self.start.1 as i64);
        let mut out = vec![self.start];
        for m in &self.motion[1..] {
            p = (p.0 + m.0, p.1 + m.1);
            out.push((p.0 as usize, p.1 as usize));
        }
        out
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.motion.iter().map(|(dx, dy)| libm::sqrt((dx * dx + dy * dy) as f64)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClip {
    /// `L × C × H × W`, values in `[0, 1]`.
    pub frames: Vec<f64>,
    /// `F × T`, row-major by mel bin.
    pub mel: Vec<f64>,
    pub text_ids: Vec<usize>,
    pub class_id: usize,
    pub corrupt_av: bool,
}

impl SyntheticClip {
    /// Frame `k` as `C × H × W`.
    pub fn frame<'a>(&'a self, cfg: &SynthConfig, k: usize) -> &'a [f64] {
        let n = cfg.frame_len();
        &self.frames[k * n..(k + 1) * n]
    }

    /// Mel columns of frames `first..first + count`, as `F × (count·T/L)`.
    pub fn mel_window(&self, cfg: &SynthConfig, first: usize, count: usize) -> Vec<f64> {
        let fw = cfg.mel_frame_width();
        let (a, b) = (first * fw, (first + count) * fw);
        self.mel.chunks(cfg.mel_width).flat_map(|row| row[a..b].iter().copied()).collect()
    }
}

pub fn make_clip(cfg: &SynthConfig, seed: u64, spec: &SceneSpec) -> Result<SyntheticClip> {
    cfg.validate()?;
    if spec.motion.len() != cfg.frames || spec.signature.len() != cfg.mel_bins {
        return Err(Error::invalid("make_clip", "spec does not match the configuration"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let (h, w) = (cfg.height, cfg.width);
    let texture: Vec<f64> = (0..cfg.frame_len()).map(|_| rng.random::<f64>() * 0.1).collect();
    let mut frames = Vec::with_capacity(cfg.frames * cfg.frame_len());
    for (k, (x0, y0)) in spec.positions().into_iter().enumerate() {
        for c in 0..cfg.channels {
            for y in 0..h {
                for x in 0..w {
                    let inside = (x0..x0 + cfg.square).contains(&x) && (y0..y0 + cfg.square).contains(&y);
                    let v = if inside {
                        spec.palette[c]
                    } else {
                        0.1 + texture[(c * h + y) * w + x] + 0.05 * ((k + x + y) % 3) as f64 / 2.0
                    };
                    frames.push(v);
                }
            }
        }
    }
    let fw = cfg.mel_frame_width();
    let max_speed = libm::sqrt(8.0);
    let amps: Vec<f64> = spec.speeds().iter().map(|s| 0.3 + 0.7 * s / max_speed).collect();
    let mut mel = vec![0.0; cfg.mel_bins * cfg.mel_width];
    for f in 0..cfg.mel_bins {
        for t in 0..cfg.mel_width {
            let k = t / fw;
            let shape = 0.85 + 0.15 * libm::cos(core::f64::consts::PI * (t % fw) as f64 / fw as f64);
            mel[f * cfg.mel_width + t] = spec.signature[f] * amps[k] * shape + 0.02 * rng.random::<f64>();
        }
    }
    Ok(SyntheticClip { frames, mel, text_ids: text_template(cfg, spec.class_id), class_id: spec.class_id, corrupt_av: spec.corrupt_av })
}

/// Text similarity between two classes: 1 on the diagonal, a fixed value in
/// `[0, 0.5]` otherwise.
pub fn class_text_similarity(a: usize, b: usize) -> f64 {
    if a == b {
        return 1.0;
    }
    let (lo, hi) = (a.min(b), a.max(b));
    0.5 * ((lo * 7 + hi * 3 + lo * hi) % 11) as f64 / 10.0
}

pub const VAF_CLEAN: f64 = 25.0;
pub const VAF_CORRUPT: f64 = 10.0;

/// Oracle providers: `n × n` text similarity by class and a relatedness
/// score per clip.
pub fn oracle_similarities(clips: &[&SyntheticClip]) -> (Vec<f64>, Vec<f64>) {
    let n = clips.len();
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sim[i * n + j] = if i == j { 1.0 } else { class_text_similarity(clips[i].class_id, clips[j].class_id) };
        }
    }
    let vaf = clips.iter().map(|c| if c.corrupt_av { VAF_CORRUPT } else { VAF_CLEAN }).collect();
    (sim, vaf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifestEntry {
    pub seed: u64,
    pub class_id: usize,
    pub corrupt_av: bool,
}

impl ManifestEntry {
    pub fn spec(&self, cfg: &SynthConfig) -> Result<SceneSpec> {
        SceneSpec::derive(cfg, self.seed, self.class_id, self.corrupt_av)
    }

    pub fn clip(&self, cfg: &SynthConfig) -> Result<SyntheticClip> {
        make_clip(cfg, self.seed, &self.spec(cfg)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

impl Split {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in self.train.iter().chain(&self.test) {
            if !seen.insert(e.seed) {
                return Err(Error::invalid("split", format!("seed {} appears twice", e.seed)));
            }
        }
        Ok(())
    }
}

/// Draws unique clip seeds and uniform classes. Corruption applies to the
/// training split only; test clips are always clean.
pub fn make_split(cfg: &SynthConfig, seed: u64, n_train: usize, n_test: usize, corrupt_prob: f64) -> Result<Split> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&corrupt_prob) {
        return Err(Error::invalid("make_split", format!("corrupt_prob {corrupt_prob} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut draw = |corrupt_prob: f64| loop {
        let s = rng.random::<u64>();
        if seen.insert(s) {
            return ManifestEntry { seed: s, class_id: rng.random_range(0..cfg.classes), corrupt_av: rng.random::<f64>() < corrupt_prob };
        }
    };
    let train = (0..n_train).map(|_| draw(corrupt_prob)).collect();
    let test = (0..n_test).map(|_| draw(0.0)).collect();
    let split = Split { train, test };
    split.validate()?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clips_are_deterministic() {
        let cfg = SynthConfig::desk();
        let spec = SceneSpec::derive(&cfg, 11, 3, false).unwrap();
        assert_eq!(make_clip(&cfg, 11, &spec).unwrap(), make_clip(&cfg, 11, &spec).unwrap());
    }

    #[test]
    fn corruption_swaps_signature() {
        let cfg = SynthConfig::desk();
        let spec = SceneSpec::derive(&cfg, 4, 2, true).unwrap();
        assert_ne!(spec.signature_class, 2);
        assert_eq!(spec.signature, class_signature(&cfg, spec.signature_class));
        assert_ne!(spec.signature, class_signature(&cfg, 2));
    }

    #[test]
    fn square_stays_in_frame() {
        let cfg = SynthConfig::desk();
        for seed in 0..200 {
            let spec = SceneSpec::derive(&cfg, seed, (seed % 8) as usize, false).unwrap();
            for (x, y) in spec.positions() {
                assert!(x + cfg.square <= cfg.width && y + cfg.square <= cfg.height);
            }
        }
    }

    #[test]
    fn oracle_scores_straddle_thresholds() {
        let cfg = SynthConfig::desk();
        let a = ManifestEntry { seed: 1, class_id: 0, corrupt_av: false }.clip(&cfg).unwrap();
        let b = ManifestEntry { seed: 2, class_id: 0, corrupt_av: true }.clip(&cfg).unwrap();
        let c = ManifestEntry { seed: 3, class_id: 5, corrupt_av: false }.clip(&cfg).unwrap();
        let (sim, vaf) = oracle_similarities(&[&a, &b, &c]);
        assert_eq!(sim[1], 1.0);
        assert!(sim[2] <= 0.5 && sim[2] == sim[6]);
        assert_eq!(vaf, vec![25.0, 10.0, 25.0]);
    }

    #[test]
    fn split_sizes_and_duplicates() {
        let cfg = SynthConfig::desk();
        let s = make_split(&cfg, 9, 64, 16, 0.3).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (64, 16));
        assert!(s.test.iter().all(|e| !e.corrupt_av));
        let mut dup = s.clone();
        dup.test[0].seed = dup.train[0].seed;
        assert!(dup.validate().is_err());
    }
}
