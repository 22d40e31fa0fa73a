use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svgen_core::hcl::{build_negative_mask, build_positive_mask, contrastive_loss_single, hcl_loss, zeta, HclConfig, HclVariant, MaskSet, SelectionContext, VafMode};
use svgen_core::{oracles, Modality, Tape, Tensor};

/// Random batch of up to 16 frames from a few clips, with unit-norm features.
fn random_case(seed: u64, window: usize) -> (SelectionContext, Vec<f64>, Vec<f64>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_clips = rng.random_range(1..5);
    let mut sim = vec![1.0; n_clips * n_clips];
    for i in 0..n_clips {
        for j in 0..i {
            let s = if rng.random_bool(0.3) { 0.95 } else { rng.random_range(-1.0..0.8) };
            sim[i * n_clips + j] = s;
            sim[j * n_clips + i] = s;
        }
    }
    let (mut clip, mut frame, mut vaf) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..n_clips {
        let score = if rng.random_bool(0.3) { 5.0 } else { 30.0 };
        for f in 0..rng.random_range(1..=4) {
            clip.push(c);
            frame.push(f);
            vaf.push(score);
        }
    }
    let mut ctx = SelectionContext::new(clip, frame, vaf, sim, n_clips).unwrap();
    ctx.window = window;
    let d = 4;
    let unit = |rng: &mut ChaCha8Rng| {
        let mut v = Tensor::randn(&[ctx.len(), d], 1.0, rng).into_data();
        for r in v.chunks_mut(d) {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            r.iter_mut().for_each(|x| *x /= n);
        }
        v
    };
    let (hv, ha) = (unit(&mut rng), unit(&mut rng));
    (ctx, hv, ha, d)
}

fn loss_of(ctx: &SelectionContext, hv: &[f64], ha: &[f64], d: usize, cfg: &HclConfig) -> f64 {
    let mut t = Tape::new();
    let v = t.constant(&[ctx.len(), d], hv.to_vec()).unwrap();
    let a = t.constant(&[ctx.len(), d], ha.to_vec()).unwrap();
    let l = hcl_loss(&mut t, v, a, ctx, cfg).unwrap();
    t.scalar(l.total)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn loss_matches_oracle(seed in any::<u64>(), window in prop::sample::select(vec![1usize, 2, 4]), gathered in any::<bool>(), info_nce in any::<bool>()) {
        let (ctx, hv, ha, d) = random_case(seed, window);
        let variant = if gathered { HclVariant::ModalityGathered } else { HclVariant::ModalitySplit };
        let cfg = HclConfig { variant, info_nce, ..HclConfig::default() };
        let (want, _) = oracles::hcl(&ctx, &hv, &ha, d, &cfg);
        let got = loss_of(&ctx, &hv, &ha, d, &cfg);
        prop_assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn masks_respect_clip_structure(seed in any::<u64>(), window in 1usize..5) {
        let (ctx, ..) = random_case(seed, window);
        let (fv, fa) = (ctx.features(Modality::Visual), ctx.features(Modality::Audio));
        for (x, y) in [(&fv, &fv), (&fv, &fa), (&fa, &fv)] {
            let p = build_positive_mask(&ctx, x, y);
            let n = build_negative_mask(&ctx, x, y);
            for (i, a) in x.iter().enumerate() {
                for (j, c) in y.iter().enumerate() {
                    let k = i * y.len() + j;
                    prop_assert!(!(p[k] && n[k]));
                    if p[k] {
                        prop_assert!(a.clip == c.clip && a.frame.abs_diff(c.frame) < window);
                        prop_assert!(!(a.frame == c.frame && a.modality == c.modality));
                    }
                    if n[k] {
                        prop_assert!(a.clip != c.clip && ctx.sim(a.clip, c.clip) < ctx.tns_threshold);
                    }
                }
            }
        }
        // Same-modality masks are symmetric.
        let p = build_positive_mask(&ctx, &fv, &fv);
        let b = fv.len();
        for i in 0..b {
            for j in 0..b {
                prop_assert_eq!(p[i * b + j], p[j * b + i]);
            }
        }
    }

    #[test]
    fn single_anchor_loss_falls_as_positives_align(neg in prop::collection::vec(-1.0f64..1.0, 1..6), pos in -1.0f64..0.9, bump in 0.01f64..0.1) {
        let z = 2.0;
        let a = contrastive_loss_single(&[pos], &neg, z, 0.1).unwrap();
        let b = contrastive_loss_single(&[pos + bump], &neg, z, 0.1).unwrap();
        prop_assert!(b < a);
        let c = contrastive_loss_single(&[pos], &[neg[0] + bump], z, 0.1).unwrap();
        let c0 = contrastive_loss_single(&[pos], &[neg[0]], z, 0.1).unwrap();
        prop_assert!(c > c0);
    }
}

#[test]
fn filtering_everything_yields_zero_inter_modal_terms() {
    let sim = vec![1.0, 0.1, 0.1, 1.0];
    let ctx = SelectionContext::new(vec![0, 0, 1, 1], vec![0, 1, 0, 1], vec![1.0; 4], sim, 2).unwrap();
    let mut t = Tape::new();
    let h = Tensor::randn(&[4, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(3)).into_data();
    let v = t.constant(&[4, 3], h.clone()).unwrap();
    let a = t.constant(&[4, 3], h).unwrap();
    let l = hcl_loss(&mut t, v, a, &ctx, &HclConfig::default()).unwrap();
    for (name, term) in &l.terms {
        let zero = t.scalar(term.loss) == 0.0;
        assert_eq!(zero, *name == "va" || *name == "av", "{name}");
    }
}

#[test]
fn anchors_without_negatives_are_skipped() {
    // Two clips whose texts are too similar to serve as negatives for each other.
    let sim = vec![1.0, 0.9, 0.9, 1.0];
    let ctx = SelectionContext::new(vec![0, 0, 1], vec![0, 1, 0], vec![30.0; 3], sim, 2).unwrap();
    let f = ctx.features(Modality::Visual);
    let m = MaskSet::build(&ctx, &f, &f, VafMode::Off);
    assert!(m.zeta.iter().all(Option::is_none));
    assert!(m.weights().iter().all(|w| *w == 0.0));
    assert!(zeta(3, 0, 0).is_err());
    assert_eq!(zeta(6, 2, 0).unwrap(), 3.0);
}

#[test]
fn zeta_is_candidates_over_negatives() {
    let sim = vec![1.0, 0.0, 0.9, 0.0, 1.0, 0.0, 0.9, 0.0, 1.0];
    let ctx = SelectionContext::new(vec![0, 0, 1, 2], vec![0, 1, 0, 0], vec![30.0; 4], sim, 3).unwrap();
    let f = ctx.features(Modality::Visual);
    let m = MaskSet::build(&ctx, &f, &f, VafMode::Off);
    assert_eq!(m.zeta, vec![Some(4.0), Some(4.0), Some(4.0 / 3.0), Some(4.0)]);
}

#[test]
fn invalid_contexts_are_rejected() {
    assert!(SelectionContext::new(vec![0, 0], vec![1, 1], vec![30.0; 2], vec![1.0], 1).is_err());
    assert!(SelectionContext::new(vec![0, 1], vec![0, 0], vec![30.0; 2], vec![1.0, 0.2, 0.3, 1.0], 2).is_err());
    assert!(SelectionContext::new(vec![2], vec![0], vec![30.0], vec![1.0], 1).is_err());
}
