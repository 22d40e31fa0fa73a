//! Oracle and gradient suites shared by `svgen oracle-check` and the
//! acceptance tests. Every suite returns one [`Check`] per comparison.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svgen_core::argen::{ar_loss, Decoder, DecoderConfig};
use svgen_core::cam::{l2_normalize, Cam, CamConfig};
use svgen_core::codec::{adversarial_terms, split_audio_frames, svg_total_loss, CodecConfig, Stream};
use svgen_core::gradcheck::{check_inputs, check_params, check_params_against, DEFAULT_STEP};
use svgen_core::hcl::{hcl_loss, HclConfig, HclVariant, MaskSet, SelectionContext, VafMode};
use svgen_core::oracles;
use svgen_core::quantizer::{channel_last_rows, nearest, perplexity, Codebook, CodebookMode, QuantizerConfig};
use svgen_core::seqfmt::{
    build_sequence, cross_modal_summary, parse_sequence, Grid, Group, Layout, Reach, SeqFormat, SequenceContent, TokenKind, Vocabulary,
};
use svgen_core::{Modality, ParamStore, Result, Tape, Tensor, Var};

/// Outcome of one comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }

    fn error(name: impl Into<String>, tol: f64, err: f64) -> Self {
        Self::new(name, err < tol, format!("rel error {err:.3e} (tol {tol:.0e})"))
    }

    fn failed(name: impl Into<String>, e: impl std::fmt::Display) -> Self {
        Self::new(name, false, format!("error: {e}"))
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

const GRAD_TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, r)
}

fn positive(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, 0.5, 2.0, r)
}

/// `Σ x ⊙ r` for a fixed random `r`, turning any output into a scalar with a
/// non-trivial upstream gradient.
fn project(t: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let shape = t.shape(x).to_vec();
    let mut r = rng(seed ^ 0x9e37);
    let w = Tensor::randn(&shape, 1.0, &mut r);
    let w = t.leaf(&w);
    let p = t.mul(x, w)?;
    t.sum(p)
}

fn grad_check(name: &str, result: Result<f64>) -> Check {
    match result {
        Ok(e) => Check::error(name, GRAD_TOL, e),
        Err(e) => Check::failed(name, e),
    }
}

type OpCase = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Tape<'static>, &[Var]) -> Result<Var>>);

fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut r = rng(seed);
    let mut cases: Vec<OpCase> = Vec::new();
    macro_rules! case {
        ($name:expr, [$($input:expr),*], $f:expr) => {
            cases.push(($name, vec![$($input),*], Box::new($f)));
        };
    }
    case!("add (broadcast)", [randn(&[2, 3], &mut r), randn(&[3], &mut r)], |t, v| {
        let y = t.add(v[0], v[1])?;
        project(t, y, 1)
    });
    case!("sub (broadcast)", [randn(&[2, 1, 3], &mut r), randn(&[4, 1], &mut r)], |t, v| {
        let y = t.sub(v[0], v[1])?;
        project(t, y, 2)
    });
    case!("mul", [randn(&[3, 4], &mut r), randn(&[3, 4], &mut r)], |t, v| {
        let y = t.mul(v[0], v[1])?;
        project(t, y, 3)
    });
    case!("div", [randn(&[3, 4], &mut r), positive(&[4], &mut r)], |t, v| {
        let y = t.div(v[0], v[1])?;
        project(t, y, 4)
    });
    case!("exp", [randn(&[5], &mut r)], |t, v| {
        let y = t.exp(v[0])?;
        project(t, y, 5)
    });
    case!("log", [positive(&[5], &mut r)], |t, v| {
        let y = t.log(v[0])?;
        project(t, y, 6)
    });
    case!("sqrt", [positive(&[5], &mut r)], |t, v| {
        let y = t.sqrt(v[0])?;
        project(t, y, 7)
    });
    case!("sigmoid", [randn(&[6], &mut r)], |t, v| {
        let y = t.sigmoid(v[0])?;
        project(t, y, 8)
    });
    case!("log_sigmoid", [randn(&[6], &mut r)], |t, v| {
        let y = t.log_sigmoid(v[0])?;
        project(t, y, 9)
    });
    case!("silu", [randn(&[6], &mut r)], |t, v| {
        let y = t.silu(v[0])?;
        project(t, y, 10)
    });
    case!("scale / add_scalar / neg / square", [randn(&[6], &mut r)], |t, v| {
        let y = t.scale(v[0], -1.7)?;
        let y = t.add_scalar(y, 0.3)?;
        let y = t.neg(y)?;
        let y = t.square(y)?;
        project(t, y, 11)
    });
    case!("matmul", [randn(&[3, 4], &mut r), randn(&[4, 2], &mut r)], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y, 12)
    });
    case!("matmul (batched)", [randn(&[2, 3, 4], &mut r), randn(&[2, 4, 5], &mut r)], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y, 13)
    });
    case!("permute", [randn(&[2, 3, 4], &mut r)], |t, v| {
        let y = t.permute(v[0], &[2, 0, 1])?;
        project(t, y, 14)
    });
    case!("transpose / reshape", [randn(&[2, 3, 4], &mut r)], |t, v| {
        let y = t.transpose(v[0], 0, 2)?;
        let y = t.reshape(y, &[4, 6])?;
        project(t, y, 15)
    });
    case!("concat", [randn(&[2, 3], &mut r), randn(&[2, 2], &mut r)], |t, v| {
        let y = t.concat(&[v[0], v[1]], 1)?;
        let z = t.concat(&[y, y], 0)?;
        project(t, z, 16)
    });
    case!("narrow", [randn(&[3, 5], &mut r)], |t, v| {
        let y = t.narrow(v[0], 1, 1, 3)?;
        project(t, y, 17)
    });
    case!("sum / mean", [randn(&[3, 4], &mut r)], |t, v| {
        let a = t.sum(v[0])?;
        let b = t.mean(v[0])?;
        let b = t.square(b)?;
        t.add(a, b)
    });
    case!("sum_axis / mean_axis", [randn(&[2, 3, 4], &mut r)], |t, v| {
        let a = t.sum_axis(v[0], 1)?;
        let b = t.mean_axis(a, 1)?;
        project(t, b, 18)
    });
    case!("softmax_axis", [randn(&[3, 4], &mut r)], |t, v| {
        let y = t.softmax_axis(v[0], 1)?;
        project(t, y, 19)
    });
    case!("log_softmax_axis", [randn(&[2, 3, 4], &mut r)], |t, v| {
        let y = t.log_softmax_axis(v[0], 1)?;
        project(t, y, 20)
    });
    case!("conv2d (stride 1, pad 1)", [randn(&[2, 2, 5, 5], &mut r), randn(&[3, 2, 3, 3], &mut r), randn(&[3], &mut r)], |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
        project(t, y, 21)
    });
    case!("conv2d (stride 2)", [randn(&[1, 2, 6, 6], &mut r), randn(&[2, 2, 3, 3], &mut r)], |t, v| {
        let y = t.conv2d(v[0], v[1], None, 2, 1)?;
        project(t, y, 22)
    });
    case!("upsample_nearest", [randn(&[1, 2, 2, 3], &mut r)], |t, v| {
        let y = t.upsample_nearest(v[0], 2)?;
        project(t, y, 23)
    });
    case!("group_norm", [randn(&[2, 4, 3, 3], &mut r)], |t, v| {
        let y = t.group_norm(v[0], 2, 1e-6)?;
        project(t, y, 24)
    });
    case!("embedding_lookup", [randn(&[5, 3], &mut r)], |t, v| {
        let y = t.embedding_lookup(v[0], &[4, 0, 4, 2])?;
        project(t, y, 25)
    });
    case!("cross_entropy", [randn(&[4, 6], &mut r)], |t, v| {
        let y = t.cross_entropy(v[0], &[0, 5, 2, 2])?;
        project(t, y, 26)
    });
    case!("adversarial d_loss / g_loss", [randn(&[2, 1, 3, 3], &mut r), randn(&[2, 1, 3, 3], &mut r)], |t, v| {
        let terms = adversarial_terms(t, v[0], v[1])?;
        let g = t.scale(terms.g_loss, 0.7)?;
        t.add(terms.d_loss, g)
    });
    case!("l2_normalize", [randn(&[3, 4], &mut r)], |t, v| {
        let y = l2_normalize(t, v[0])?;
        project(t, y, 28)
    });
    cases
}

/// Small codec used wherever a full forward is evaluated many times.
pub fn tiny_codec() -> CodecConfig {
    CodecConfig {
        height: 8,
        width: 8,
        channels: 3,
        mel_bins: 8,
        mel_width: 16,
        frames: 2,
        ds_visual: 2,
        ds_audio: 2,
        dim_visual: 4,
        dim_audio: 4,
        codebook_visual: 8,
        codebook_audio: 8,
        widths_visual: vec![4, 4],
        widths_audio: vec![4, 4],
        res_blocks: 1,
        attn_layers: 1,
        groups: 2,
        disc_width: 4,
        perceptual_width: 4,
        perceptual_seed: 3,
        quantizer: QuantizerConfig::default(),
        alpha: 1.0,
    }
}

/// The stream loss with the straight-through estimator written out: the
/// decoder sees `z + c` and the commit term compares `z` with a constant
/// `ẑ`, both constants taken from a baseline forward. Its derivative is what
/// the production graph's stop-gradients should produce for the encoder.
fn stream_surrogate(t: &mut Tape, store: &ParamStore, s: &Stream, x: Var, shift: &[f64], zq0: &[f64], adv: f64) -> Result<Var> {
    let z = s.encode(t, x)?;
    let zs = t.shape(z).to_vec();
    let c = t.constant(&zs, shift.to_vec())?;
    let zq = t.add(z, c)?;
    let x_hat = s.decode(t, zq)?;
    let d = t.sub(x, x_hat)?;
    let d = t.square(d)?;
    let recon = t.mean(d)?;
    let percep = s.perceptual_distance(t, x, x_hat)?;
    let q = t.constant(&zs, zq0.to_vec())?;
    let dc = t.sub(z, q)?;
    let dc = t.square(dc)?;
    let commit = t.sum(dc)?;
    let rows = (zs[0] * zs[2] * zs[3]) as f64;
    let commit = t.scale(commit, 1.0 / rows)?;
    let mut total = t.add(recon, percep)?;
    total = t.add(total, commit)?;
    if adv > 0.0 {
        t.freeze(&s.discriminator_params(store));
        let logits = s.discriminate(t, x_hat)?;
        let ls = t.log_sigmoid(logits)?;
        let m = t.mean(ls)?;
        let g = t.neg(m)?;
        let g = t.scale(g, adv)?;
        total = t.add(total, g)?;
    }
    Ok(total)
}

/// Baseline `(ẑ − z, ẑ)` for a stream on input `x`.
fn ste_constants(store: &ParamStore, s: &Stream, x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut t = Tape::with_params(store);
    let xv = t.leaf(x);
    let z = s.encode(&mut t, xv)?;
    let q = s.codebook.quantize(&mut t, z)?;
    let zq = t.value(q.quantized).to_vec();
    let shift = zq.iter().zip(t.value(z)).map(|(a, b)| a - b).collect();
    Ok((shift, zq))
}

fn codec_checks(seed: u64, out: &mut Vec<Check>) -> Result<()> {
    let cfg = tiny_codec();
    let mut store = ParamStore::new();
    let codec = svgen_core::codec::Codec::new(&mut store, cfg.clone(), seed)?;
    let mut r = rng(seed + 1);
    let xv = Tensor::uniform(&[2, 3, 8, 8], 0.0, 1.0, &mut r);
    let xa = Tensor::uniform(&[1, 1, 8, 16], 0.0, 1.0, &mut r);
    let adv = 0.1;
    for (s, x, label) in [(&codec.visual, &xv, "visual"), (&codec.audio, &xa, "audio")] {
        let dec = store.ids_with_prefix(&format!("codec/{label}/dec/"));
        let enc = store.ids_with_prefix(&format!("codec/{label}/enc/"));
        let disc = s.discriminator_params(&store);
        let (shift, zq0) = ste_constants(&store, s, x)?;
        let snap = store.clone();
        let production = |t: &mut Tape| -> Result<Var> {
            let xvar = t.leaf(x);
            Ok(s.vqgan_loss(t, &snap, xvar, adv)?.total)
        };
        out.push(grad_check(
            &format!("codec {label}: reconstruction + perceptual + codebook + adversarial wrt decoder"),
            check_params(&mut store, &dec, production, DEFAULT_STEP, 4, seed),
        ));
        let surrogate = |t: &mut Tape| -> Result<Var> {
            let xvar = t.leaf(x);
            stream_surrogate(t, &snap, s, xvar, &shift, &zq0, adv)
        };
        out.push(grad_check(
            &format!("codec {label}: straight-through loss wrt encoder"),
            check_params_against(&mut store, &enc, production, surrogate, DEFAULT_STEP, 4, seed),
        ));
        // The generator pass must leave the discriminator untouched.
        let mut t = Tape::with_params(&snap);
        let xvar = t.leaf(x);
        let l = s.vqgan_loss(&mut t, &snap, xvar, adv)?;
        let g = t.backward(l.total)?;
        let leaked = disc.iter().filter(|id| g.param(**id).is_some_and(|v| v.iter().any(|x| *x != 0.0))).count();
        out.push(Check::new(format!("codec {label}: discriminator frozen in generator loss"), leaked == 0, format!("{leaked} params received gradient")));
        // Discriminator objective on a detached reconstruction.
        let fake = t.value(l.reconstruction).to_vec();
        let fake_shape = t.shape(l.reconstruction).to_vec();
        let d_loss = |t: &mut Tape| -> Result<Var> {
            let real = t.leaf(x);
            let fake = t.constant(&fake_shape, fake.clone())?;
            let rl = s.discriminate(t, real)?;
            let fl = s.discriminate(t, fake)?;
            Ok(adversarial_terms(t, rl, fl)?.d_loss)
        };
        out.push(grad_check(&format!("codec {label}: discriminator loss wrt discriminator"), check_params(&mut store, &disc, d_loss, DEFAULT_STEP, 6, seed)));
    }
    Ok(())
}

fn quantizer_grad_checks(seed: u64, out: &mut Vec<Check>) -> Result<()> {
    let mut r = rng(seed);
    let cfg = QuantizerConfig { mode: CodebookMode::Loss, ..QuantizerConfig::default() };
    let mut store = ParamStore::new();
    let cb = Codebook::new(&mut store, "q", 5, 3, cfg, &mut r)?;
    let z_id = store.add("in/z", randn(&[6, 3], &mut r))?;
    let base = {
        let mut t = Tape::with_params(&store);
        let z = t.param(z_id);
        let q = cb.quantize(&mut t, z)?;
        (q.indices.clone(), t.value(z).to_vec(), t.value(q.quantized).to_vec())
    };
    let (idx, z0, q0) = base;
    let beta = cfg.beta;
    let production = |t: &mut Tape| -> Result<Var> {
        let z = t.param(z_id);
        Ok(cb.quantize(t, z)?.codebook_loss)
    };
    let surrogate = |t: &mut Tape| -> Result<Var> {
        let z = t.param(z_id);
        let e = t.param(cb.entries);
        let q = t.embedding_lookup(e, &idx)?;
        let qc = t.constant(&[6, 3], q0.clone())?;
        let zc = t.constant(&[6, 3], z0.clone())?;
        let a = t.sub(z, qc)?;
        let a = t.square(a)?;
        let a = t.sum(a)?;
        let b = t.sub(zc, q)?;
        let b = t.square(b)?;
        let b = t.sum(b)?;
        let b = t.scale(b, beta)?;
        let s = t.add(a, b)?;
        t.scale(s, 1.0 / 6.0)
    };
    out.push(grad_check(
        "quantizer codebook loss (commit + β·embed) wrt features and entries",
        check_params_against(&mut store, &[z_id, cb.entries], production, surrogate, DEFAULT_STEP, 64, seed),
    ));
    let ste = |t: &mut Tape| -> Result<Var> {
        let z = t.param(z_id);
        let q = cb.quantize(t, z)?.quantized;
        project(t, q, 40)
    };
    let shift: Vec<f64> = q0.iter().zip(&z0).map(|(a, b)| a - b).collect();
    let ste_ref = |t: &mut Tape| -> Result<Var> {
        let z = t.param(z_id);
        let c = t.constant(&[6, 3], shift.clone())?;
        let y = t.add(z, c)?;
        project(t, y, 40)
    };
    out.push(grad_check("straight-through estimator wrt features", check_params_against(&mut store, &[z_id], ste, ste_ref, DEFAULT_STEP, 64, seed)));
    Ok(())
}

fn random_context(r: &mut ChaCha8Rng, max_b: usize) -> SelectionContext {
    loop {
        let n_clips = r.random_range(1..=5);
        let frames = r.random_range(1..=6);
        let mut pairs: Vec<(usize, usize)> = (0..n_clips).flat_map(|c| (0..frames).map(move |f| (c, f))).collect();
        let b = r.random_range(1..=max_b.min(pairs.len()));
        for i in 0..b {
            let j = r.random_range(i..pairs.len());
            pairs.swap(i, j);
        }
        pairs.truncate(b);
        let mut sim = vec![1.0; n_clips * n_clips];
        for i in 0..n_clips {
            for j in 0..i {
                let s = if r.random_bool(0.2) { 0.9 } else { r.random_range(-1.0..1.0) };
                sim[i * n_clips + j] = s;
                sim[j * n_clips + i] = s;
            }
        }
        let vaf: Vec<f64> = (0..b).map(|_| if r.random_bool(0.3) { 10.0 } else { r.random_range(15.0..30.0) }).collect();
        let Ok(mut ctx) = SelectionContext::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect(), vaf, sim, n_clips) else {
            continue;
        };
        ctx.window = [1, 2, 4][r.random_range(0..3)];
        match r.random_range(0..8) {
            0 => ctx.vaf_threshold = 100.0, // everything filtered
            1 => ctx.tns_threshold = -2.0,  // no negatives anywhere
            2 => ctx.tns_threshold = 2.0,   // every other clip negative
            _ => {}
        }
        return ctx;
    }
}

fn random_features(r: &mut ChaCha8Rng, b: usize, d: usize) -> Vec<f64> {
    let mut h = Vec::with_capacity(b * d);
    for _ in 0..b {
        let row: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-6);
        h.extend(row.iter().map(|x| x / n));
    }
    h
}

fn hcl_grad_checks(seed: u64, out: &mut Vec<Check>) {
    let mut r = rng(seed);
    let mut ctx = random_context(&mut r, 8);
    while ctx.len() < 4 || ctx.n_clips < 2 {
        ctx = random_context(&mut r, 8);
    }
    ctx.vaf_threshold = 20.0;
    ctx.tns_threshold = 0.85;
    ctx.window = 2;
    let b = ctx.len();
    for (variant, info_nce) in [(HclVariant::ModalitySplit, false), (HclVariant::ModalityGathered, false), (HclVariant::ModalitySplit, true)] {
        let cfg = HclConfig { tau: 0.2, alpha: 1.0, variant, info_nce };
        let c2 = ctx.clone();
        let res = check_inputs(
            &[randn(&[b, 4], &mut r), randn(&[b, 4], &mut r)],
            move |t, v| {
                let hv = l2_normalize(t, v[0])?;
                let ha = l2_normalize(t, v[1])?;
                Ok(hcl_loss(t, hv, ha, &c2, &cfg)?.total)
            },
            DEFAULT_STEP,
        );
        out.push(grad_check(&format!("hcl {variant:?} (info_nce={info_nce}) wrt features"), res));
    }
}

fn cam_grad_checks(seed: u64, out: &mut Vec<Check>) -> Result<()> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let cfg = CamConfig { dim_visual: 3, dim_audio: 2, common_dim: 4, groups: 2 };
    let cam = Cam::new(&mut store, cfg, &mut r)?;
    let zv = store.add("in/zv", randn(&[2, 3, 2, 3], &mut r))?;
    let za = store.add("in/za", randn(&[2, 2, 2, 2], &mut r))?;
    let mut ids = Cam::params(&store);
    ids.extend([zv, za]);
    let f = |t: &mut Tape| -> Result<Var> {
        let a = t.param(zv);
        let b = t.param(za);
        let o = cam.forward(t, a, b)?;
        let x = project(t, o.h_v, 50)?;
        let y = project(t, o.h_a, 51)?;
        t.add(x, y)
    };
    out.push(grad_check("cam forward wrt parameters and inputs", check_params(&mut store, &ids, f, DEFAULT_STEP, 8, seed)));
    Ok(())
}

fn composite_checks(seed: u64, out: &mut Vec<Check>) -> Result<()> {
    let cfg = tiny_codec();
    let mut store = ParamStore::new();
    let codec = svgen_core::codec::Codec::new(&mut store, cfg.clone(), seed)?;
    let mut r = rng(seed + 2);
    let cam = Cam::new(&mut store, CamConfig { dim_visual: 4, dim_audio: 4, common_dim: 4, groups: 2 }, &mut r)?;
    // Two clips × two frames.
    let xv = Tensor::uniform(&[4, 3, 8, 8], 0.0, 1.0, &mut r);
    let xa = Tensor::uniform(&[2, 1, 8, 16], 0.0, 1.0, &mut r);
    let ctx = SelectionContext::new(vec![0, 0, 1, 1], vec![0, 1, 0, 1], vec![25.0, 25.0, 25.0, 10.0], vec![1.0, 0.2, 0.2, 1.0], 2)?;
    let hcfg = HclConfig::default();
    let snap = store.clone();
    let production = |t: &mut Tape| -> Result<Var> {
        let a = t.leaf(&xv);
        let b = t.leaf(&xa);
        let lv = codec.visual.vqgan_loss(t, &snap, a, 0.1)?;
        let la = codec.audio.vqgan_loss(t, &snap, b, 0.1)?;
        let za = split_audio_frames(t, la.z, 2)?;
        let o = cam.forward(t, lv.z, za)?;
        let h = hcl_loss(t, o.h_v, o.h_a, &ctx, &hcfg)?;
        svg_total_loss(t, &lv, &la, Some(h.total), 1.0)
    };
    let cam_ids = Cam::params(&store);
    out.push(grad_check("full codec objective with α·HCL wrt cam", check_params(&mut store, &cam_ids, production, DEFAULT_STEP, 4, seed)));
    let (sv, qv) = ste_constants(&snap, &codec.visual, &xv)?;
    let (sa, qa) = ste_constants(&snap, &codec.audio, &xa)?;
    let surrogate = |t: &mut Tape| -> Result<Var> {
        let a = t.leaf(&xv);
        let b = t.leaf(&xa);
        let lv = stream_surrogate(t, &snap, &codec.visual, a, &sv, &qv, 0.1)?;
        let la = stream_surrogate(t, &snap, &codec.audio, b, &sa, &qa, 0.1)?;
        let zv = codec.visual.encode(t, a)?;
        let za = codec.audio.encode(t, b)?;
        let za = split_audio_frames(t, za, 2)?;
        let o = cam.forward(t, zv, za)?;
        let h = hcl_loss(t, o.h_v, o.h_a, &ctx, &hcfg)?;
        let base = t.add(lv, la)?;
        t.add(base, h.total)
    };
    let mut enc = store.ids_with_prefix("codec/visual/enc/");
    enc.extend(store.ids_with_prefix("codec/audio/enc/"));
    out.push(grad_check(
        "full codec objective with α·HCL wrt both encoders",
        check_params_against(&mut store, &enc, production, surrogate, DEFAULT_STEP, 3, seed),
    ));
    // HCL alone must reach both encoders.
    let mut t = Tape::with_params(&snap);
    let a = t.leaf(&xv);
    let b = t.leaf(&xa);
    let zv = codec.visual.encode(&mut t, a)?;
    let za = codec.audio.encode(&mut t, b)?;
    let za = split_audio_frames(&mut t, za, 2)?;
    let o = cam.forward(&mut t, zv, za)?;
    let h = hcl_loss(&mut t, o.h_v, o.h_a, &ctx, &hcfg)?;
    let g = t.backward(h.total)?;
    let reached = |prefix: &str| snap.ids_with_prefix(prefix).iter().any(|id| g.param(*id).is_some_and(|v| v.iter().any(|x| *x != 0.0)));
    let both = reached("codec/visual/enc/") && reached("codec/audio/enc/");
    out.push(Check::new("hcl gradient reaches both encoders", both, ""));
    Ok(())
}

fn ar_grad_checks(seed: u64, out: &mut Vec<Check>) -> Result<()> {
    let vocab = Vocabulary::new(3, 4, 4, 2)?;
    let content = SequenceContent {
        text: vec![0, 2],
        visual: vec![Grid::new(1, 2, vec![1, 3])?, Grid::new(1, 2, vec![0, 0])?],
        audio: vec![Grid::new(1, 1, vec![2])?, Grid::new(1, 1, vec![1])?],
    };
    let seq = build_sequence(&vocab, SeqFormat::Masf, &content, 64)?;
    let dcfg = DecoderConfig::small(2, 2, 8, seq.len(), vocab.size());
    let mut r = rng(seed);
    let logits = randn(&[seq.len(), vocab.size()], &mut r);
    let s2 = seq.clone();
    let res = check_inputs(
        &[logits],
        move |t, v| Ok(ar_loss(t, &dcfg, &[&s2], v[0])?.loss),
        DEFAULT_STEP,
    );
    out.push(grad_check("weighted autoregressive loss wrt logits", res));
    let mut store = ParamStore::new();
    let dec = Decoder::new(&mut store, dcfg, seed)?;
    let ids = Decoder::params(&store);
    let f = |t: &mut Tape| -> Result<Var> {
        let lg = dec.forward_logits(t, &[&seq.ids])?;
        Ok(ar_loss(t, &dec.cfg, &[&seq], lg)?.loss)
    };
    out.push(grad_check("decoder + weighted autoregressive loss wrt parameters", check_params(&mut store, &ids, f, DEFAULT_STEP, 4, seed)));
    Ok(())
}

/// Finite-difference checks of every differentiable op and composite loss.
pub fn gradient_suite(seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    for (name, inputs, f) in op_cases(seed) {
        out.push(grad_check(name, check_inputs(&inputs, f, DEFAULT_STEP)));
    }
    let mut run = |name: &str, f: &dyn Fn(&mut Vec<Check>) -> Result<()>| {
        if let Err(e) = f(&mut out) {
            out.push(Check::failed(name, e));
        }
    };
    run("quantizer", &|o| quantizer_grad_checks(seed, o));
    run("codec", &|o| codec_checks(seed, o));
    run("cam", &|o| cam_grad_checks(seed, o));
    run("hcl", &|o| {
        hcl_grad_checks(seed, o);
        Ok(())
    });
    run("composite", &|o| composite_checks(seed, o));
    run("ar", &|o| ar_grad_checks(seed, o));
    out
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol || (a.is_infinite() && a == b)
}

/// Vectorized masks, ζ and losses against the double-loop oracle on
/// `contexts` random batches.
pub fn hcl_suite(contexts: usize, seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let mut failures = Vec::new();
    let mut seen = [0usize; 6]; // all-filtered, no-negatives, windows 1/2/4, gathered
    for case in 0..contexts {
        let ctx = random_context(&mut r, 16);
        let b = ctx.len();
        let d = r.random_range(2..=6);
        let hv = random_features(&mut r, b, d);
        let ha = random_features(&mut r, b, d);
        let variant = if r.random_bool(0.5) { HclVariant::ModalitySplit } else { HclVariant::ModalityGathered };
        let cfg = HclConfig { tau: r.random_range(0.05..1.0), alpha: 1.0, variant, info_nce: r.random_bool(0.2) };
        seen[0] += usize::from(ctx.vaf_threshold > 50.0);
        seen[1] += usize::from(ctx.tns_threshold < -1.0);
        seen[2 + [1, 2, 4].iter().position(|w| *w == ctx.window).unwrap()] += 1;
        seen[5] += usize::from(variant == HclVariant::ModalityGathered);
        let (want, terms) = oracles::hcl(&ctx, &hv, &ha, d, &cfg);
        let mut t = Tape::new();
        let hvv = t.constant(&[b, d], hv.clone()).expect("shape");
        let hav = t.constant(&[b, d], ha.clone()).expect("shape");
        let got = match hcl_loss(&mut t, hvv, hav, &ctx, &cfg) {
            Ok(g) => g,
            Err(e) => {
                failures.push(format!("case {case}: {e}"));
                continue;
            }
        };
        if !close(t.scalar(got.total), want, 1e-9) {
            failures.push(format!("case {case}: total {} vs {want}", t.scalar(got.total)));
        }
        for ((name, term), (oname, oterm)) in got.terms.iter().zip(&terms) {
            let c = term.masks.candidates;
            let flat = |m: &[Vec<bool>]| m.iter().flatten().copied().collect::<Vec<_>>();
            let ok = name == oname
                && term.masks.positive == flat(&oterm.positive)
                && term.masks.negative == flat(&oterm.negative)
                && term.masks.zeta.len() == oterm.zeta.len()
                && term.masks.zeta.iter().zip(&oterm.zeta).all(|(a, b)| match (a, b) {
                    (Some(x), Some(y)) => close(*x, *y, 1e-12),
                    (None, None) => true,
                    _ => false,
                })
                && term.weights.iter().zip(&oterm.weights).all(|(a, b)| close(*a, *b, 1e-12))
                && term.per_anchor.iter().zip(&oterm.per_anchor).all(|(a, b)| match (a, b) {
                    (Some(x), Some(y)) => close(*x, *y, 1e-9),
                    (None, None) => true,
                    _ => false,
                })
                && close(t.scalar(term.loss), oterm.loss, 1e-9)
                && c == oterm.positive.first().map_or(c, Vec::len);
            if !ok {
                failures.push(format!("case {case}: term {name} differs"));
            }
        }
    }
    let covered = seen.iter().all(|s| *s > 0);
    vec![
        Check::new(
            format!("hcl masks, ζ and losses match the double-loop oracle on {contexts} contexts"),
            failures.is_empty(),
            failures.first().cloned().unwrap_or_else(|| String::from("all equal within 1e-9")),
        ),
        Check::new(
            "hcl edge cases covered (all-filtered, no-negatives, windows 1/2/4, gathered)",
            covered,
            format!("counts {seen:?}"),
        ),
    ]
}

/// Mask-level invariants on random contexts: exclusivity, self exclusion,
/// monotonicity in both thresholds.
pub fn hcl_invariant_suite(contexts: usize, seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let mut bad = Vec::new();
    for case in 0..contexts {
        let ctx = random_context(&mut r, 16);
        let fv = ctx.features(Modality::Visual);
        let fa = ctx.features(Modality::Audio);
        for (f1, f2) in [(&fv, &fv), (&fv, &fa)] {
            let m = MaskSet::build(&ctx, f1, f2, VafMode::Anchors);
            if m.positive.iter().zip(&m.negative).any(|(p, n)| *p && *n) {
                bad.push(format!("case {case}: positive ∩ negative"));
            }
            if std::ptr::eq(f1, f2) && (0..f1.len()).any(|i| m.positive[i * f1.len() + i]) {
                bad.push(format!("case {case}: self pair positive"));
            }
            if m.zeta.iter().flatten().any(|z| *z < 1.0) {
                bad.push(format!("case {case}: ζ < 1"));
            }
        }
        let mut lower = ctx.clone();
        lower.vaf_threshold -= 5.0;
        let a = MaskSet::build(&ctx, &fv, &fa, VafMode::Anchors).vaf_anchor;
        let b = MaskSet::build(&lower, &fv, &fa, VafMode::Anchors).vaf_anchor;
        if a.iter().zip(&b).any(|(x, y)| *x && !*y) {
            bad.push(format!("case {case}: lowering VAF threshold dropped an anchor"));
        }
        let mut higher = ctx.clone();
        higher.tns_threshold += 0.1;
        let a = MaskSet::build(&ctx, &fv, &fa, VafMode::Off).negative;
        let b = MaskSet::build(&higher, &fv, &fa, VafMode::Off).negative;
        if a.iter().zip(&b).any(|(x, y)| *x && !*y) {
            bad.push(format!("case {case}: raising TNS threshold dropped a negative"));
        }
    }
    vec![Check::new("hcl mask invariants", bad.is_empty(), bad.first().cloned().unwrap_or_default())]
}

/// Nearest-neighbour search, EMA recurrence, codebook-row outputs and
/// perplexity against their oracles.
pub fn quantizer_suite(trials: usize, seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let mut nn_bad = 0;
    let mut row_bad = 0;
    let mut ppl_bad = 0;
    for _ in 0..trials {
        let n = r.random_range(1..=16);
        let dim = r.random_range(1..=4);
        let rows = r.random_range(1..=32);
        // Small integer grids make exact ties common.
        let book: Vec<f64> = (0..n * dim).map(|_| r.random_range(-2..=2) as f64).collect();
        let feats: Vec<f64> = (0..rows * dim).map(|_| if r.random_bool(0.5) { r.random_range(-2..=2) as f64 } else { r.random_range(-2.5..2.5) }).collect();
        let got = nearest(&book, dim, &feats).expect("valid shapes");
        nn_bad += usize::from(got != oracles::nearest_brute(&book, dim, &feats));
        let mut store = ParamStore::new();
        let cfg = QuantizerConfig::default();
        let cb = Codebook::new(&mut store, "q", n, dim, cfg, &mut r).expect("codebook");
        store.assign("q/entries", &[n, dim], &book).expect("assign");
        let mut t = Tape::with_params(&store);
        let z = t.constant(&[1, dim, 1, rows], {
            // channel-first [1, d, 1, rows]
            let mut v = vec![0.0; rows * dim];
            for p in 0..rows {
                for c in 0..dim {
                    v[c * rows + p] = feats[p * dim + c];
                }
            }
            v
        })
        .expect("shape");
        let q = cb.quantize(&mut t, z).expect("quantize");
        let qrows = channel_last_rows(t.value(q.quantized), &[1, dim, 1, rows]).expect("rows");
        for (p, k) in q.indices.iter().enumerate() {
            if qrows[p * dim..(p + 1) * dim] != book[k * dim..(k + 1) * dim] {
                row_bad += 1;
            }
        }
        let ppl = perplexity(&q.indices, n).expect("non-empty");
        ppl_bad += usize::from(!close(ppl, oracles::perplexity(&q.indices), 1e-12) || !(1.0..=n as f64 + 1e-9).contains(&ppl));
    }
    // EMA: a constant feature assigned to entry 0 every step.
    let mut ema_worst: f64 = 0.0;
    let mut hist_worst: f64 = 0.0;
    let mut monotone = true;
    for trial in 0..20 {
        let mut store = ParamStore::new();
        let cfg = QuantizerConfig::default();
        let n = 4;
        let dim = 3;
        let mut cb = Codebook::new(&mut store, "q", n, dim, cfg, &mut r).expect("codebook");
        let x: Vec<f64> = (0..dim).map(|_| r.random_range(-3.0..3.0)).collect();
        let cs0 = cb.ema_cluster_size[0];
        let s0 = cb.ema_sum[..dim].to_vec();
        let mut prev_gap = f64::INFINITY;
        for step in 1..=200u32 {
            cb.ema_update(&mut store, &x, &[0]).expect("update");
            let cs = oracles::ema_closed_form(cs0, 1.0, cfg.decay, step);
            ema_worst = ema_worst.max((cb.ema_cluster_size[0] - cs).abs());
            for j in 0..dim {
                let s = oracles::ema_closed_form(s0[j], x[j], cfg.decay, step);
                ema_worst = ema_worst.max((cb.ema_sum[j] - s).abs());
                let e = store.get(cb.entries).data()[j];
                ema_worst = ema_worst.max((e - cb.ema_sum[j] / (cb.ema_cluster_size[0] + cfg.epsilon)).abs());
            }
            let e = &store.get(cb.entries).data()[..dim];
            let gap = e.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            monotone &= gap <= prev_gap + 1e-12;
            prev_gap = gap;
        }
        // Histogram oracle for one step with random assignments.
        let rows = 10 + trial;
        let feats: Vec<f64> = (0..rows * dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let idx: Vec<usize> = (0..rows).map(|_| r.random_range(0..n)).collect();
        let before = cb.ema_cluster_size.clone();
        cb.ema_update(&mut store, &feats, &idx).expect("update");
        for k in 0..n {
            let count = idx.iter().filter(|i| **i == k).count() as f64;
            let want = cfg.decay * before[k] + (1.0 - cfg.decay) * count;
            hist_worst = hist_worst.max((cb.ema_cluster_size[k] - want).abs());
        }
    }
    vec![
        Check::new(format!("nearest matches brute force on {trials} batches"), nn_bad == 0, format!("{nn_bad} mismatching batches")),
        Check::new("quantized outputs are exact codebook rows", row_bad == 0, format!("{row_bad} rows differ")),
        Check::new("perplexity matches entropy oracle and lies in [1, N]", ppl_bad == 0, format!("{ppl_bad} mismatches")),
        Check::new("EMA statistics follow the closed-form recurrence", ema_worst < 1e-9, format!("max abs error {ema_worst:.2e}")),
        Check::new("EMA cluster sizes match the histogram oracle", hist_worst < 1e-12, format!("max abs error {hist_worst:.2e}")),
        Check::new("EMA entries approach the assigned feature monotonically", monotone, ""),
    ]
}

fn random_content(r: &mut ChaCha8Rng, vocab: &Vocabulary, text: usize, vshape: (usize, usize), ashape: (usize, usize)) -> SequenceContent {
    let grid = |r: &mut ChaCha8Rng, (h, w): (usize, usize), n: usize| Grid::new(h, w, (0..h * w).map(|_| r.random_range(0..n)).collect()).expect("shape");
    SequenceContent {
        text: (0..text).map(|_| r.random_range(0..vocab.text)).collect(),
        visual: (0..vocab.frames).map(|_| grid(r, vshape, vocab.visual)).collect(),
        audio: (0..vocab.frames).map(|_| grid(r, ashape, vocab.audio)).collect(),
    }
}

/// Build/parse round trips, the MASF length formula, cross-format multiset
/// equality and the large-scale capacity bound.
pub fn grammar_suite(instances: usize, seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let mut rt_bad = Vec::new();
    let mut len_bad = 0;
    let mut multiset_bad = 0;
    let mut tag_bad = 0;
    for case in 0..instances {
        let frames = r.random_range(1..=4);
        let vocab = Vocabulary::new(r.random_range(1..=20), r.random_range(1..=32), r.random_range(1..=32), frames).expect("vocab");
        let vshape = (r.random_range(1..=4), r.random_range(1..=4));
        let ashape = (r.random_range(1..=3), r.random_range(1..=3));
        let text = r.random_range(0..=6);
        let content = random_content(&mut r, &vocab, text, vshape, ashape);
        let mut plain = Vec::new();
        for format in SeqFormat::ALL {
            let seq = match build_sequence(&vocab, format, &content, 10_000) {
                Ok(s) => s,
                Err(e) => {
                    rt_bad.push(format!("case {case} {format}: {e}"));
                    continue;
                }
            };
            match parse_sequence(&vocab, format, &seq.ids, vshape, ashape) {
                Ok(back) if back == content => {}
                Ok(_) => rt_bad.push(format!("case {case} {format}: content differs")),
                Err(e) => rt_bad.push(format!("case {case} {format}: {e}")),
            }
            if format == SeqFormat::Masf && seq.len() != oracles::masf_length(text, frames, vshape.0 * vshape.1, ashape.0 * ashape.1) {
                len_bad += 1;
            }
            // Modality tags partition the non-special positions.
            let counts = [TokenKind::Text, TokenKind::Visual, TokenKind::Audio].map(|k| seq.kinds.iter().filter(|x| **x == k).count());
            if counts != [text, frames * vshape.0 * vshape.1, frames * ashape.0 * ashape.1]
                || seq.ids.iter().zip(&seq.kinds).any(|(id, k)| vocab.kind(*id) != Some(*k))
            {
                tag_bad += 1;
            }
            plain.push(oracles::multiset(seq.ids.iter().zip(&seq.kinds).filter(|(_, k)| **k != TokenKind::Special).map(|(i, _)| *i)));
        }
        if plain.windows(2).any(|w| w[0] != w[1]) {
            multiset_bad += 1;
        }
    }
    // 10 frames of 8×8 visual and 5×5 audio tokens in 1025 positions.
    let big = Vocabulary::new(100, 8192, 4096, 10).expect("vocab");
    let fits = |text: usize| {
        let content = random_content(&mut rng(1), &big, text, (8, 8), (5, 5));
        build_sequence(&big, SeqFormat::Masf, &content, 1025).is_ok()
    };
    let capacity = fits(94) && !fits(95);
    vec![
        Check::new(
            format!("build/parse round-trip over {instances} instances × 3 formats"),
            rt_bad.is_empty(),
            rt_bad.first().cloned().unwrap_or_default(),
        ),
        Check::new("MASF length = 1 + |text| + L·(|v| + |a| + 4)", len_bad == 0, format!("{len_bad} mismatches")),
        Check::new("formats are permutations of the same non-special tokens", multiset_bad == 0, format!("{multiset_bad} mismatches")),
        Check::new("modality tags partition non-special positions", tag_bad == 0, format!("{tag_bad} mismatches")),
        Check::new("10 frames of 8×8 + 5×5 tokens within 1025 allow at most 94 text tokens", capacity, ""),
    ]
}

fn group(kind: TokenKind, frame: usize) -> Group {
    Group { kind, frame }
}

/// Cross-modal reachability claims, checked by exhaustive enumeration for
/// every L ≤ 4.
pub fn reachability_suite() -> Vec<Check> {
    let mut out = Vec::new();
    for format in SeqFormat::ALL {
        let mut summary_bad = 0;
        let mut claim_bad = Vec::new();
        for frames in 1..=4 {
            for (vl, al) in [(1, 1), (2, 3), (4, 1)] {
                let layout = Layout::new(format, frames, 2, vl, al);
                let summary = cross_modal_summary(&layout);
                let brute = oracles::enumerate_reach(&layout);
                if summary.entries != brute {
                    summary_bad += 1;
                }
                for i in 1..=frames {
                    for j in 1..=frames {
                        let (v, a) = (group(TokenKind::Visual, i), group(TokenKind::Audio, j));
                        let a_sees_v = brute[&(group(TokenKind::Audio, i), group(TokenKind::Visual, j))];
                        let v_sees_a = brute[&(v, a)];
                        let ok = match format {
                            SeqFormat::Tva => a_sees_v == Reach::Full && v_sees_a == Reach::None,
                            SeqFormat::Tav => a_sees_v == Reach::None && v_sees_a == Reach::Full,
                            SeqFormat::Masf => {
                                // Audio of frame i sees visual of frames ≤ i; visual of frame i sees audio of frames < i.
                                let want_av = if j <= i { Reach::Full } else { Reach::None };
                                let want_va = if j < i { Reach::Full } else { Reach::None };
                                a_sees_v == want_av && v_sees_a == want_va
                            }
                        };
                        if !ok {
                            claim_bad.push(format!("L={frames} i={i} j={j}"));
                        }
                        if format == SeqFormat::Masf {
                            let aa = brute[&(group(TokenKind::Audio, i), group(TokenKind::Audio, j))];
                            let want = if j < i { Reach::Full } else if j == i { Reach::Partial } else { Reach::None };
                            let want = if j == i && al == 1 { Reach::None } else { want };
                            if aa != want {
                                claim_bad.push(format!("L={frames} audio {i} ← audio {j}"));
                            }
                        }
                    }
                }
            }
        }
        out.push(Check::new(format!("{format}: summary equals position enumeration"), summary_bad == 0, format!("{summary_bad} layouts differ")));
        let claim = match format {
            SeqFormat::Tva => "TVA: audio sees all visual, visual sees no audio",
            SeqFormat::Tav => "TAV: visual sees all audio, audio sees no visual",
            SeqFormat::Masf => "MASF: frame-i audio sees visual ≤ i and audio < i; frame-i visual sees audio < i",
        };
        out.push(Check::new(claim, claim_bad.is_empty(), claim_bad.first().cloned().unwrap_or_default()));
    }
    out
}

/// CAM forward against its staged scalar transcription.
pub fn cam_suite(trials: usize, seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let mut store = ParamStore::new();
        let groups = r.random_range(1..=2);
        let cfg = CamConfig { dim_visual: r.random_range(1..=4), dim_audio: r.random_range(1..=4), common_dim: 2 * groups * r.random_range(1..=2), groups };
        let cam = Cam::new(&mut store, cfg, &mut r).expect("cam");
        let n = r.random_range(1..=3);
        let sv = [n, cfg.dim_visual, r.random_range(1..=3), r.random_range(1..=3)];
        let sa = [n, cfg.dim_audio, r.random_range(1..=3), r.random_range(1..=3)];
        let zv = randn(&sv, &mut r);
        let za = randn(&sa, &mut r);
        let mut t = Tape::with_params(&store);
        let a = t.leaf(&zv);
        let b = t.leaf(&za);
        let o = cam.forward(&mut t, a, b).expect("forward");
        let (hv, ha, vm, am) = oracles::cam_forward(&cam, &store, zv.data(), sv, za.data(), sa);
        for (x, y) in [(o.h_v, &hv), (o.h_a, &ha), (o.visual_map, &vm), (o.audio_map, &am)] {
            for (p, q) in t.value(x).iter().zip(y) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    vec![Check::new(format!("cam matches staged oracle on {trials} instances"), worst < 1e-10, format!("max abs error {worst:.2e}"))]
}

/// Naive convolution and attention oracles against the tape ops.
pub fn primitive_suite(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let mut conv_worst: f64 = 0.0;
    for _ in 0..20 {
        let (n, c, o) = (r.random_range(1..=2), r.random_range(1..=3), r.random_range(1..=3));
        let k = [1, 3][r.random_range(0..2)];
        let (stride, pad) = (r.random_range(1..=2), r.random_range(0..=k / 2));
        let (h, w) = (r.random_range(k..=6), r.random_range(k..=6));
        let x = randn(&[n, c, h, w], &mut r);
        let wt = randn(&[o, c, k, k], &mut r);
        let b = randn(&[o], &mut r);
        let mut t = Tape::new();
        let (xv, wv, bv) = (t.leaf(&x), t.leaf(&wt), t.leaf(&b));
        let y = t.conv2d(xv, wv, Some(bv), stride, pad).expect("conv");
        let (want, shape) = oracles::conv2d(x.data(), [n, c, h, w], wt.data(), [o, c, k, k], Some(b.data()), stride, pad);
        if t.shape(y) != shape {
            conv_worst = f64::INFINITY;
            continue;
        }
        for (p, q) in t.value(y).iter().zip(&want) {
            conv_worst = conv_worst.max((p - q).abs());
        }
    }
    let mut attn_worst: f64 = 0.0;
    for _ in 0..20 {
        let (m, d, dv) = (r.random_range(1..=6), r.random_range(1..=4), r.random_range(1..=4));
        let q = randn(&[1, 1, d], &mut r);
        let k = randn(&[1, m, d], &mut r);
        let v = randn(&[1, m, dv], &mut r);
        let mut t = Tape::new();
        let (qv, kv, vv) = (t.leaf(&q), t.leaf(&k), t.leaf(&v));
        let (out, w) = svgen_core::cam::attend(&mut t, qv, kv, vv).expect("attend");
        let rows = |x: &Tensor, width: usize| x.data().chunks(width).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let (want, ww) = oracles::attention_row(q.data(), &rows(&k, d), &rows(&v, dv));
        for (p, q) in t.value(out).iter().zip(&want).chain(t.value(w).iter().zip(&ww)) {
            attn_worst = attn_worst.max((p - q).abs());
        }
    }
    vec![
        Check::new("conv2d matches direct convolution", conv_worst < 1e-12, format!("max abs error {conv_worst:.2e}")),
        Check::new("attention matches scalar softmax attention", attn_worst < 1e-12, format!("max abs error {attn_worst:.2e}")),
    ]
}

/// Every oracle comparison, at sizes suitable for a quick command.
pub fn oracle_suite(seed: u64) -> Vec<Check> {
    let mut out = hcl_suite(200, seed);
    out.extend(hcl_invariant_suite(200, seed));
    out.extend(quantizer_suite(200, seed));
    out.extend(grammar_suite(1000, seed));
    out.extend(reachability_suite());
    out.extend(cam_suite(20, seed));
    out.extend(primitive_suite(seed));
    out
}
