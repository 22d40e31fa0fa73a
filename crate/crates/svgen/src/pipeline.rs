//! The commands behind the CLI. Each writes under `<out_dir>/<run_id>/`.

use std::path::{Path, PathBuf};

use log::info;

use svgen_core::argen::{generate as sample_sequences, rerank, GridShapes, Sample};
use svgen_core::autodiff::Tape;
use svgen_core::codec::split_audio_frames;
use svgen_core::hcl::hcl_loss;
use svgen_core::oracles;
use svgen_core::seqfmt::{build_sequence, MultimodalSequence, SequenceContent};
use svgen_core::synthdata::{class_signature, make_split, text_template, SynthConfig, BACKGROUND_MAX, PALETTES};
use svgen_core::train::{ArStepMetrics, ArTrainer, CodecEvalMetrics, CodecStepMetrics, CodecTrainer, Dataset, NamedArray};

use crate::checkpoint::Checkpoint;
use crate::checks::{self, Check};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::formats::{grid_csv, num, side_by_side, write_manifest, write_raw, write_sequence, write_text, Csv};

pub const CODEC_CKPT: &str = "codec.ckpt";
pub const CODEC_METRICS: &str = "codec_metrics.csv";
pub const LAST_GOOD_SUFFIX: &str = ".last_good";

pub fn ar_ckpt_name(cfg: &RunConfig) -> String {
    format!("ar_{}.ckpt", cfg.format.name().to_lowercase())
}

pub fn ar_metrics_name(cfg: &RunConfig) -> String {
    format!("ar_{}_metrics.csv", cfg.format.name().to_lowercase())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Train and test clips, regenerated from the run seed.
pub fn datasets(cfg: &RunConfig) -> Result<(Dataset, Dataset), CliError> {
    let synth = cfg.synth();
    let split = make_split(&synth, cfg.seed, cfg.data.n_train, cfg.data.n_test, cfg.data.corrupt_prob)?;
    Ok((Dataset::new(synth, split.train)?, Dataset::new(synth, split.test)?))
}

fn trainable(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.preset == crate::config::Preset::PaperScale {
        return Err(CliError::Config(String::from("the paper-scale preset only validates shapes; use desk to train")));
    }
    Ok(())
}

fn require(path: &Path) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::Checkpoint(format!("missing checkpoint {}", path.display())));
    }
    Ok(())
}

pub fn load_codec(cfg: &RunConfig) -> Result<CodecTrainer, CliError> {
    let path = cfg.run_dir().join(CODEC_CKPT);
    require(&path)?;
    let ck = Checkpoint::load_matching(&path, &cfg.codec_hash())?;
    let mut tr = CodecTrainer::new(cfg.codec.clone(), cfg.train)?;
    tr.import_state(&ck.arrays)?;
    Ok(tr)
}

/// Metrics rows from an earlier run that precede `step`, for resuming.
fn earlier_rows(path: &Path, header: &[&str], step: usize) -> Result<Csv, CliError> {
    let mut csv = Csv::new(header);
    if path.exists() {
        let old = Csv::parse(&crate::formats::read_text(path)?)?;
        if old.header != csv.header {
            return Err(CliError::Format(format!("{} has a different header", path.display())));
        }
        let col = old.column("step").expect("step column");
        csv.rows = old.rows.into_iter().filter(|r| r[col].parse::<usize>().is_ok_and(|s| s < step)).collect();
    }
    Ok(csv)
}

pub const CODEC_COLUMNS: [&str; 20] = [
    "phase",
    "step",
    "total",
    "recon_visual",
    "recon_audio",
    "perceptual_visual",
    "perceptual_audio",
    "codebook_visual",
    "codebook_audio",
    "adversarial_visual",
    "adversarial_audio",
    "disc_loss",
    "hcl",
    "reseeded",
    "lr",
    "eval_recon_mse_visual",
    "eval_recon_mse_audio",
    "eval_perplexity_visual",
    "eval_perplexity_audio",
    "eval_retrieval_top1",
];

fn codec_train_row(m: &CodecStepMetrics, lr: f64) -> Vec<String> {
    let mut r = vec![String::from("train"), m.step.to_string()];
    r.extend(
        [
            m.total,
            m.recon_visual,
            m.recon_audio,
            m.perceptual_visual,
            m.perceptual_audio,
            m.codebook_visual,
            m.codebook_audio,
            m.adversarial_visual,
            m.adversarial_audio,
            m.disc_loss,
            m.hcl,
        ]
        .map(num),
    );
    r.push(m.reseeded.to_string());
    r.push(num(lr));
    r.extend(std::iter::repeat_n(String::new(), 5));
    r
}

fn codec_eval_row(step: usize, e: &CodecEvalMetrics) -> Vec<String> {
    let mut r = vec![String::from("eval"), step.to_string()];
    r.extend(std::iter::repeat_n(String::new(), 13));
    r.extend([e.recon_mse_visual, e.recon_mse_audio, e.perplexity_visual, e.perplexity_audio, e.retrieval_top1].map(num));
    r
}

#[derive(Debug, Clone)]
pub struct CodecRun {
    pub evals: Vec<(usize, CodecEvalMetrics)>,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

/// `codec.ckpt` → `codec.step000100.ckpt`.
pub fn step_path(path: &Path, step: usize) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("ckpt");
    path.with_file_name(format!("{stem}.step{step:06}.ckpt"))
}

fn finite_state(arrays: &[NamedArray]) -> bool {
    arrays.iter().all(|a| a.2.iter().all(|v| v.is_finite()))
}

/// Saves the state before a failed step and reports the failure.
fn abort(dir: &Path, name: &str, hash: [u8; 32], step: usize, state: Vec<NamedArray>, csv: &Csv, metrics: &Path, detail: String) -> CliError {
    let path = dir.join(format!("{name}{LAST_GOOD_SUFFIX}"));
    if let Err(e) = Checkpoint::new(hash, step as u64, state).save(&path).and_then(|_| csv.write(metrics)) {
        return e;
    }
    CliError::Numeric { step, detail: format!("{detail}; last good state saved to {}", path.display()) }
}

pub fn train_codec(cfg: &RunConfig, resume: Option<&Path>) -> Result<CodecRun, CliError> {
    trainable(cfg)?;
    let dir = cfg.run_dir();
    create_dir(&dir)?;
    let (train, test) = datasets(cfg)?;
    write_text(&dir.join("manifest.txt"), &write_manifest(&train.entries, &test.entries))?;
    let mut tr = CodecTrainer::new(cfg.codec.clone(), cfg.train)?;
    let hash = cfg.codec_hash();
    if let Some(p) = resume {
        require(p)?;
        tr.import_state(&Checkpoint::load_matching(p, &hash)?.arrays)?;
        info!("resumed codec training at step {}", tr.step);
    }
    let metrics = dir.join(CODEC_METRICS);
    let checkpoint = dir.join(CODEC_CKPT);
    let mut csv = earlier_rows(&metrics, &CODEC_COLUMNS, tr.step)?;
    let mut evals = Vec::new();
    let mut eval = |tr: &CodecTrainer, csv: &mut Csv| -> Result<(), CliError> {
        let e = tr.evaluate(&test)?;
        info!("step {}: recon {:.4}/{:.4} perplexity {:.2}/{:.2} retrieval {:.3}", tr.step, e.recon_mse_visual, e.recon_mse_audio, e.perplexity_visual, e.perplexity_audio, e.retrieval_top1);
        csv.push(codec_eval_row(tr.step, &e));
        evals.push((tr.step, e));
        Ok(())
    };
    while tr.step < cfg.train.steps {
        let s = tr.step;
        if s % cfg.eval_every == 0 {
            eval(&tr, &mut csv)?;
        }
        let last_good = tr.export_state();
        let lr = cfg.train.lr * cfg.train.lr_factor(s);
        let m = match tr.train_step(&train) {
            Ok(m) if m.total.is_finite() && m.disc_loss.is_finite() => m,
            Ok(m) => return Err(abort(&dir, CODEC_CKPT, hash, s, last_good, &csv, &metrics, format!("loss {} / discriminator {}", m.total, m.disc_loss))),
            Err(e @ svgen_core::error::Error::NonFinite { .. }) => return Err(abort(&dir, CODEC_CKPT, hash, s, last_good, &csv, &metrics, e.to_string())),
            Err(e) => return Err(e.into()),
        };
        csv.push(codec_train_row(&m, lr));
        let state = tr.export_state();
        if !finite_state(&state) {
            csv.rows.pop();
            return Err(abort(&dir, CODEC_CKPT, hash, s, last_good, &csv, &metrics, String::from("parameters became non-finite")));
        }
        if cfg.checkpoint_every > 0 && tr.step % cfg.checkpoint_every == 0 {
            Checkpoint::new(hash, tr.step as u64, state).save(&step_path(&checkpoint, tr.step))?;
        }
    }
    eval(&tr, &mut csv)?;
    csv.write(&metrics)?;
    Checkpoint::new(hash, tr.step as u64, tr.export_state()).save(&checkpoint)?;
    Ok(CodecRun { evals, metrics, checkpoint })
}

/// Token content of every clip in `data`.
pub fn tokenize_all(tr: &CodecTrainer, data: &Dataset) -> Result<Vec<SequenceContent>, CliError> {
    (0..data.len())
        .map(|i| {
            let (visual, audio) = tr.tokenize(data, i)?;
            Ok(SequenceContent { text: data.clips[i].text_ids.clone(), visual, audio })
        })
        .collect()
}

pub const AR_COLUMNS: [&str; 11] = [
    "phase",
    "step",
    "loss",
    "weighted_text",
    "weighted_visual",
    "weighted_audio",
    "weight_total",
    "ce_text",
    "ce_visual",
    "ce_audio",
    "eval_loss",
];

fn ar_train_row(m: &ArStepMetrics) -> Vec<String> {
    let mut r = vec![String::from("train"), m.step.to_string()];
    r.extend([m.loss, m.weighted_text, m.weighted_visual, m.weighted_audio, m.weight_total, m.ce_text, m.ce_visual, m.ce_audio].map(num));
    r.push(String::new());
    r
}

#[derive(Debug, Clone)]
pub struct ArRun {
    pub steps: Vec<ArStepMetrics>,
    pub evals: Vec<(usize, f64)>,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

fn ar_trainer(cfg: &RunConfig, contents: &[SequenceContent]) -> Result<ArTrainer, CliError> {
    Ok(ArTrainer::new(cfg.decoder_config()?, cfg.vocabulary()?, cfg.ar, contents)?)
}

pub fn train_ar(cfg: &RunConfig, resume: Option<&Path>) -> Result<ArRun, CliError> {
    trainable(cfg)?;
    let dir = cfg.run_dir();
    let codec = load_codec(cfg)?;
    let (train, test) = datasets(cfg)?;
    let mut tr = ar_trainer(cfg, &tokenize_all(&codec, &train)?)?;
    let vocab = cfg.vocabulary()?;
    let test_seqs = tokenize_all(&codec, &test)?
        .iter()
        .map(|c| build_sequence(&vocab, cfg.format, c, cfg.max_len))
        .collect::<Result<Vec<_>, _>>()?;
    let test_refs: Vec<&MultimodalSequence> = test_seqs.iter().take(cfg.ar.batch.max(8)).collect();
    let hash = cfg.hash();
    let name = ar_ckpt_name(cfg);
    if let Some(p) = resume {
        require(p)?;
        tr.import_state(&Checkpoint::load_matching(p, &hash)?.arrays)?;
    }
    let metrics = dir.join(ar_metrics_name(cfg));
    let checkpoint = dir.join(&name);
    let mut csv = earlier_rows(&metrics, &AR_COLUMNS, tr.step)?;
    let (mut steps, mut evals) = (Vec::new(), Vec::new());
    let mut eval = |tr: &ArTrainer, csv: &mut Csv| -> Result<(), CliError> {
        let l = tr.evaluate(&test_refs)?;
        info!("step {}: held-out loss {l:.4}", tr.step);
        let mut r = vec![String::from("eval"), tr.step.to_string()];
        r.extend(std::iter::repeat_n(String::new(), 8));
        r.push(num(l));
        csv.push(r);
        evals.push((tr.step, l));
        Ok(())
    };
    while tr.step < cfg.ar.steps {
        let s = tr.step;
        if s % cfg.eval_every == 0 {
            eval(&tr, &mut csv)?;
        }
        let last_good = tr.export_state();
        let m = match tr.train_step() {
            Ok(m) if m.loss.is_finite() => m,
            Ok(m) => return Err(abort(&dir, &name, hash, s, last_good, &csv, &metrics, format!("loss {}", m.loss))),
            Err(e @ svgen_core::error::Error::NonFinite { .. }) => return Err(abort(&dir, &name, hash, s, last_good, &csv, &metrics, e.to_string())),
            Err(e) => return Err(e.into()),
        };
        csv.push(ar_train_row(&m));
        steps.push(m);
        if cfg.checkpoint_every > 0 && tr.step % cfg.checkpoint_every == 0 {
            Checkpoint::new(hash, tr.step as u64, tr.export_state()).save(&step_path(&checkpoint, tr.step))?;
        }
    }
    eval(&tr, &mut csv)?;
    csv.write(&metrics)?;
    Checkpoint::new(hash, tr.step as u64, tr.export_state()).save(&checkpoint)?;
    Ok(ArRun { steps, evals, metrics, checkpoint })
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Channel mean of a `C × H × W` frame.
fn luminance(frame: &[f64], channels: usize) -> Vec<f64> {
    let n = frame.len() / channels;
    (0..n).map(|p| (0..channels).map(|c| frame[c * n + p]).sum::<f64>() / channels as f64).collect()
}

/// Original and reconstructed media for the first `k` test clips.
pub fn reconstruct(cfg: &RunConfig, k: usize) -> Result<Vec<(f64, f64)>, CliError> {
    let tr = load_codec(cfg)?;
    let (_, test) = datasets(cfg)?;
    let c = &tr.codec.cfg;
    let l = c.frames;
    let out = cfg.run_dir().join("reconstruct");
    let mut summary = Csv::new(&["clip", "seed", "class", "mse_visual", "mse_audio"]);
    let mut errors = Vec::new();
    for i in 0..k.min(test.len()) {
        let (xv, xa) = svgen_core::train::media_batch(&test, &[i], 0, l);
        let mut t = Tape::with_params(&tr.store);
        let vshape = [l, c.channels, c.height, c.width];
        let ashape = [1, 1, c.mel_bins, c.mel_width];
        let v = t.constant(&vshape, xv.clone())?;
        let a = t.constant(&ashape, xa.clone())?;
        let lv = tr.codec.visual.vqgan_loss(&mut t, &tr.store, v, 0.0)?;
        let la = tr.codec.audio.vqgan_loss(&mut t, &tr.store, a, 0.0)?;
        let (rv, ra) = (t.value(lv.reconstruction).to_vec(), t.value(la.reconstruction).to_vec());
        let d = out.join(format!("clip{i}"));
        write_raw(&d.join("visual_original.f64"), &vshape, &xv)?;
        write_raw(&d.join("visual_reconstructed.f64"), &vshape, &rv)?;
        write_raw(&d.join("audio_original.f64"), &ashape, &xa)?;
        write_raw(&d.join("audio_reconstructed.f64"), &ashape, &ra)?;
        let fl = c.channels * c.height * c.width;
        for f in 0..l {
            let a = luminance(&xv[f * fl..(f + 1) * fl], c.channels);
            let b = luminance(&rv[f * fl..(f + 1) * fl], c.channels);
            let g = side_by_side(c.height, (c.width, &a), (c.width, &b));
            write_text(&d.join(format!("visual_frame{f}.csv")), &grid_csv(c.height, 2 * c.width, &g))?;
        }
        let g = side_by_side(c.mel_bins, (c.mel_width, &xa), (c.mel_width, &ra));
        write_text(&d.join("mel.csv"), &grid_csv(c.mel_bins, 2 * c.mel_width, &g))?;
        let e = (mse(&xv, &rv), mse(&xa, &ra));
        summary.push(vec![i.to_string(), test.entries[i].seed.to_string(), test.entries[i].class_id.to_string(), num(e.0), num(e.1)]);
        errors.push(e);
    }
    summary.write(&out.join("summary.csv"))?;
    Ok(errors)
}

/// Decoded frames `[L, C, H, W]` and mel `[1, 1, F, T]` for a sample's codes.
pub fn decode_content(tr: &CodecTrainer, content: &SequenceContent) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let c = &tr.codec.cfg;
    let l = c.frames;
    let rows = |codes: &mut dyn Iterator<Item = usize>, entries: &[f64], dim: usize| -> Vec<f64> { codes.flat_map(|k| entries[k * dim..(k + 1) * dim].to_vec()).collect() };
    let ev = tr.store.get(tr.codec.visual.codebook.entries).data();
    let ea = tr.store.get(tr.codec.audio.codebook.entries).data();
    let (vh, vw) = c.visual_grid();
    let (af, at) = c.audio_grid();
    // Channel-last rows to [L, d, h, w].
    let rv = rows(&mut content.visual.iter().flat_map(|g| g.codes.iter().copied()), ev, c.dim_visual);
    let mut zv = vec![0.0; rv.len()];
    for f in 0..l {
        for p in 0..vh * vw {
            for d in 0..c.dim_visual {
                zv[(f * c.dim_visual + d) * vh * vw + p] = rv[(f * vh * vw + p) * c.dim_visual + d];
            }
        }
    }
    // Per-frame grids side by side in time: [1, d, f, L·t].
    let mut za = vec![0.0; l * af * at * c.dim_audio];
    for (f, g) in content.audio.iter().enumerate() {
        for r in 0..af {
            for col in 0..at {
                let k = g.codes[r * at + col];
                for d in 0..c.dim_audio {
                    za[(d * af + r) * l * at + f * at + col] = ea[k * c.dim_audio + d];
                }
            }
        }
    }
    let mut t = Tape::with_params(&tr.store);
    let zv = t.constant(&[l, c.dim_visual, vh, vw], zv)?;
    let za = t.constant(&[1, c.dim_audio, af, l * at], za)?;
    let v = tr.codec.decode_visual(&mut t, zv)?;
    let a = tr.codec.decode_audio(&mut t, za)?;
    Ok((t.value(v).to_vec(), t.value(a).to_vec()))
}

/// How well decoded media match a class: colour of the bright pixels
/// against the class palette, and mel profile against the class signature.
pub fn oracle_score(synth: &SynthConfig, class: usize, frames: &[f64], mel: &[f64]) -> f64 {
    let n = synth.height * synth.width;
    let fl = synth.channels * n;
    let mut colour = 0.0;
    for f in frames.chunks(fl) {
        let bright: Vec<usize> = (0..n).filter(|p| (0..synth.channels).any(|c| f[c * n + p] > BACKGROUND_MAX)).collect();
        colour += if bright.is_empty() {
            (synth.channels as f64).sqrt()
        } else {
            let mean: Vec<f64> = (0..synth.channels).map(|c| bright.iter().map(|p| f[c * n + p]).sum::<f64>() / bright.len() as f64).collect();
            mean.iter().zip(&PALETTES[class]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        };
    }
    colour /= (frames.len() / fl).max(1) as f64;
    let profile: Vec<f64> = mel.chunks(synth.mel_width).map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    let sig = class_signature(synth, class);
    let dot = oracles::dot(&profile, &sig);
    let norm = oracles::dot(&profile, &profile).sqrt() * oracles::dot(&sig, &sig).sqrt();
    let cosine = if norm > 0.0 { dot / norm } else { 0.0 };
    cosine - colour
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub class: usize,
    /// `(original index, model log-probability, oracle score)` in ranked order.
    pub ranking: Vec<(usize, f64, f64)>,
    pub samples: Vec<Sample>,
}

/// `k` candidates for the text of class `seed mod classes`, reranked by [`oracle_score`].
pub fn generate(cfg: &RunConfig, k: usize, seed: u64) -> Result<Generated, CliError> {
    let codec = load_codec(cfg)?;
    let path = cfg.run_dir().join(ar_ckpt_name(cfg));
    require(&path)?;
    let ck = Checkpoint::load_matching(&path, &cfg.hash())?;
    let (train, _) = datasets(cfg)?;
    let mut ar = ar_trainer(cfg, &tokenize_all(&codec, &Dataset::new(train.cfg, train.entries[..1].to_vec())?)?)?;
    ar.import_state(&ck.arrays)?;
    let synth = cfg.synth();
    let class = (seed % synth.classes as u64) as usize;
    let text = text_template(&synth, class);
    let shapes = GridShapes { visual: cfg.codec.visual_grid(), audio: cfg.codec.audio_grid() };
    let set = sample_sequences(&ar.decoder, &ar.store, &ar.vocab, shapes, cfg.format, &text, k, &cfg.sampling, seed)?;
    let logp: Vec<f64> = set.samples.iter().map(|s| s.score).collect();
    let originals: Vec<Vec<usize>> = set.samples.iter().map(|s| s.sequence.ids.clone()).collect();
    let mut media = Vec::new();
    for s in &set.samples {
        media.push(decode_content(&codec, &s.content)?);
    }
    let mut next = 0;
    let ranked = rerank(set, |_| {
        next += 1;
        oracle_score(&synth, class, &media[next - 1].0, &media[next - 1].1)
    });
    let ranking: Vec<(usize, f64, f64)> = ranked
        .samples
        .iter()
        .map(|s| {
            let i = originals.iter().position(|o| *o == s.sequence.ids).expect("reranked sample comes from the set");
            (i, logp[i], s.score)
        })
        .collect();
    let out = cfg.run_dir().join("generate").join(format!("seed{seed}"));
    let mut csv = Csv::new(&["rank", "candidate", "model_logprob", "oracle_score"]);
    for (r, (s, (i, lp, sc))) in ranked.samples.iter().zip(&ranking).enumerate() {
        csv.push(vec![r.to_string(), i.to_string(), num(*lp), num(*sc)]);
        write_text(&out.join(format!("rank{r}.seq")), &write_sequence(&ar.vocab, &s.sequence))?;
    }
    csv.write(&out.join("ranking.csv"))?;
    if let Some((i, _, _)) = ranking.first() {
        let c = &cfg.codec;
        let (v, a) = &media[*i];
        write_raw(&out.join("top_visual.f64"), &[c.frames, c.channels, c.height, c.width], v)?;
        write_raw(&out.join("top_audio.f64"), &[1, 1, c.mel_bins, c.mel_width], a)?;
        write_text(&out.join("top_mel.csv"), &grid_csv(c.mel_bins, c.mel_width, a))?;
    }
    Ok(Generated { class, ranking, samples: ranked.samples })
}

/// Summary of HCL masks for one term.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskStats {
    pub term: String,
    pub anchors: usize,
    pub candidates: usize,
    pub mean_positives: f64,
    pub mean_negatives: f64,
    pub vaf_filtered: usize,
    pub live_anchors: usize,
    pub mean_zeta: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub codec: CodecEvalMetrics,
    pub ar_loss: Option<f64>,
    pub masks: Vec<MaskStats>,
}

/// Codec metrics on the test split, AR held-out loss when a decoder
/// checkpoint exists, HCL mask statistics on the first training batch and
/// CAM attention maps for the first test clip.
pub fn eval(cfg: &RunConfig) -> Result<EvalReport, CliError> {
    let tr = load_codec(cfg)?;
    let (train, test) = datasets(cfg)?;
    let codec = tr.evaluate(&test)?;
    let out = cfg.run_dir().join("eval");
    let c = tr.codec.cfg.clone();
    let l = c.frames;

    let ar_path = cfg.run_dir().join(ar_ckpt_name(cfg));
    let ar_loss = if ar_path.exists() {
        let ck = Checkpoint::load_matching(&ar_path, &cfg.hash())?;
        let contents = tokenize_all(&tr, &test)?;
        let mut ar = ar_trainer(cfg, &contents)?;
        ar.import_state(&ck.arrays)?;
        let refs: Vec<&MultimodalSequence> = ar.sequences.iter().take(cfg.ar.batch.max(8)).collect();
        Some(ar.evaluate(&refs)?)
    } else {
        None
    };

    let clips: Vec<usize> = (0..cfg.train.retrieval_batch.min(train.len())).collect();
    let ctx = tr.selection(&train, &clips, 0, l)?;
    let (xv, xa) = svgen_core::train::media_batch(&train, &clips, 0, l);
    let mut t = Tape::with_params(&tr.store);
    let v = t.constant(&[clips.len() * l, c.channels, c.height, c.width], xv)?;
    let a = t.constant(&[clips.len(), 1, c.mel_bins, c.mel_width], xa)?;
    let zv = tr.codec.encode_visual(&mut t, v)?;
    let za = tr.codec.encode_audio(&mut t, a)?;
    let za = split_audio_frames(&mut t, za, l)?;
    let o = tr.cam.forward(&mut t, zv, za)?;
    let h = hcl_loss(&mut t, o.h_v, o.h_a, &ctx, &cfg.train.hcl)?;
    let masks: Vec<MaskStats> = h
        .terms
        .iter()
        .map(|(name, term)| {
            let m = &term.masks;
            let count = |v: &[bool]| v.iter().filter(|x| **x).count() as f64 / m.anchors.max(1) as f64;
            let zetas: Vec<f64> = m.zeta.iter().flatten().copied().collect();
            MaskStats {
                term: name.to_string(),
                anchors: m.anchors,
                candidates: m.candidates,
                mean_positives: count(&m.positive),
                mean_negatives: count(&m.negative),
                vaf_filtered: m.vaf_anchor.iter().filter(|x| !**x).count(),
                live_anchors: term.weights.iter().filter(|w| **w > 0.0).count(),
                mean_zeta: if zetas.is_empty() { f64::NAN } else { zetas.iter().sum::<f64>() / zetas.len() as f64 },
            }
        })
        .collect();

    let mut summary = Csv::new(&["metric", "value"]);
    for (k, v) in [
        ("recon_mse_visual", codec.recon_mse_visual),
        ("recon_mse_audio", codec.recon_mse_audio),
        ("perplexity_visual", codec.perplexity_visual),
        ("perplexity_audio", codec.perplexity_audio),
        ("retrieval_top1", codec.retrieval_top1),
    ] {
        summary.push(vec![k.into(), num(v)]);
    }
    if let Some(lo) = ar_loss {
        summary.push(vec![format!("ar_{}_loss", cfg.format.name().to_lowercase()), num(lo)]);
        summary.push(vec![format!("ar_{}_perplexity", cfg.format.name().to_lowercase()), num(lo.exp())]);
    }
    summary.write(&out.join("eval.csv"))?;
    let mut mcsv = Csv::new(&["term", "anchors", "candidates", "mean_positives", "mean_negatives", "vaf_filtered", "live_anchors", "mean_zeta"]);
    for m in &masks {
        mcsv.push(vec![
            m.term.clone(),
            m.anchors.to_string(),
            m.candidates.to_string(),
            num(m.mean_positives),
            num(m.mean_negatives),
            m.vaf_filtered.to_string(),
            m.live_anchors.to_string(),
            num(m.mean_zeta),
        ]);
    }
    mcsv.write(&out.join("masks.csv"))?;
    export_attention(&tr, &test, &out.join("attention"))?;
    Ok(EvalReport { codec, ar_loss, masks })
}

/// CAM weight grids for every frame of the first test clip.
pub fn export_attention(tr: &CodecTrainer, data: &Dataset, dir: &Path) -> Result<(), CliError> {
    let c = &tr.codec.cfg;
    let l = c.frames;
    let (xv, xa) = svgen_core::train::media_batch(data, &[0], 0, l);
    let mut t = Tape::with_params(&tr.store);
    let v = t.constant(&[l, c.channels, c.height, c.width], xv)?;
    let a = t.constant(&[1, 1, c.mel_bins, c.mel_width], xa)?;
    let zv = tr.codec.encode_visual(&mut t, v)?;
    let za = tr.codec.encode_audio(&mut t, a)?;
    let za = split_audio_frames(&mut t, za, l)?;
    let (vm, am) = tr.cam.attention_maps(&mut t, zv, za)?;
    let (vh, vw) = c.visual_grid();
    let (af, at) = c.audio_grid();
    for f in 0..l {
        write_text(&dir.join(format!("visual_frame{f}.csv")), &grid_csv(vh, vw, &t.value(vm)[f * vh * vw..(f + 1) * vh * vw]))?;
        write_text(&dir.join(format!("audio_frame{f}.csv")), &grid_csv(af, at, &t.value(am)[f * af * at..(f + 1) * af * at]))?;
    }
    Ok(())
}

/// HCL on real features from the first training batch, compared with the
/// scalar reference term by term. Dumps masks, ζ and per-anchor losses.
pub fn hcl_audit(cfg: &RunConfig, dir: &Path) -> Result<Vec<Check>, CliError> {
    let path = cfg.run_dir().join(CODEC_CKPT);
    let tr = if path.exists() { load_codec(cfg)? } else { CodecTrainer::new(cfg.codec.clone(), cfg.train)? };
    let (train, _) = datasets(cfg)?;
    let c = tr.codec.cfg.clone();
    let k = cfg.train.crop_frames;
    let clips: Vec<usize> = (0..cfg.train.batch_clips.min(train.len())).collect();
    let ctx = tr.selection(&train, &clips, 0, k)?;
    let (xv, xa) = svgen_core::train::media_batch(&train, &clips, 0, k);
    let mut t = Tape::with_params(&tr.store);
    let v = t.constant(&[clips.len() * k, c.channels, c.height, c.width], xv)?;
    let a = t.constant(&[clips.len(), 1, c.mel_bins, k * c.audio_frame_width()], xa)?;
    let zv = tr.codec.encode_visual(&mut t, v)?;
    let za = tr.codec.encode_audio(&mut t, a)?;
    let za = split_audio_frames(&mut t, za, k)?;
    let o = tr.cam.forward(&mut t, zv, za)?;
    let h = hcl_loss(&mut t, o.h_v, o.h_a, &ctx, &cfg.train.hcl)?;
    let d = tr.cam.cfg.common_dim;
    let (want_total, want) = oracles::hcl(&ctx, t.value(o.h_v), t.value(o.h_a), d, &cfg.train.hcl);

    let mut masks = Csv::new(&["term", "anchor", "candidate", "positive", "negative"]);
    let mut anchors = Csv::new(&["term", "anchor", "zeta", "weight", "loss", "reference_loss"]);
    let opt = |x: Option<f64>| x.map_or(String::new(), num);
    let mut mismatches = Vec::new();
    for ((name, term), (_, reference)) in h.terms.iter().zip(&want) {
        let m = &term.masks;
        for i in 0..m.anchors {
            for j in 0..m.candidates {
                let (p, n) = (m.positive[i * m.candidates + j], m.negative[i * m.candidates + j]);
                masks.push(vec![name.to_string(), i.to_string(), j.to_string(), u8::from(p).to_string(), u8::from(n).to_string()]);
                if p != reference.positive[i][j] || n != reference.negative[i][j] {
                    mismatches.push(format!("{name} mask ({i},{j})"));
                }
            }
            anchors.push(vec![name.to_string(), i.to_string(), opt(m.zeta[i]), num(term.weights[i]), opt(term.per_anchor[i]), opt(reference.per_anchor[i])]);
            let near = |a: Option<f64>, b: Option<f64>| match (a, b) {
                (Some(a), Some(b)) => (a - b).abs() <= 1e-9 * (1.0 + b.abs()),
                (None, None) => true,
                _ => false,
            };
            if !near(m.zeta[i], reference.zeta[i]) || !near(term.per_anchor[i], reference.per_anchor[i]) || (term.weights[i] - reference.weights[i]).abs() > 1e-12 {
                mismatches.push(format!("{name} anchor {i}"));
            }
        }
    }
    masks.write(&dir.join("hcl_masks.csv"))?;
    anchors.write(&dir.join("hcl_anchors.csv"))?;
    let total = t.scalar(h.total);
    let total_ok = (total - want_total).abs() <= 1e-9 * (1.0 + want_total.abs());
    Ok(vec![
        Check { name: String::from("hcl audit: masks, zeta, weights, per-anchor losses"), passed: mismatches.is_empty(), detail: if mismatches.is_empty() { String::from("all match") } else { mismatches.join("; ") } },
        Check { name: String::from("hcl audit: total"), passed: total_ok, detail: format!("{total} vs {want_total}") },
    ])
}

/// Runs every oracle comparison; fails with an oracle error iff any check fails.
pub fn oracle_check(cfg: &RunConfig, seed: u64) -> Result<Vec<Check>, CliError> {
    let dir = cfg.run_dir().join("oracle");
    let mut all = checks::oracle_suite(seed);
    all.extend(hcl_audit(cfg, &dir)?);
    let mut csv = Csv::new(&["check", "passed", "detail"]);
    for c in &all {
        csv.push(vec![c.name.replace(',', ";"), c.passed.to_string(), c.detail.replace(',', ";")]);
    }
    csv.write(&dir.join("report.csv"))?;
    let failed: Vec<&str> = all.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(CliError::Oracle(failed.join("; ")));
    }
    Ok(all)
}
