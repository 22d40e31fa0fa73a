use proptest::prelude::*;

use svgen_core::synthdata::{class_signature, make_split, oracle_similarities, SynthConfig, BACKGROUND_MAX, PALETTES, VAF_CLEAN};

/// Mean mel profile per bin over the whole clip.
fn profile(cfg: &SynthConfig, mel: &[f64]) -> Vec<f64> {
    mel.chunks(cfg.mel_width).map(|row| row.iter().sum::<f64>() / row.len() as f64).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (n(a) * n(b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn square_matches_palette_and_position(seed in any::<u64>(), class in 0usize..8) {
        let cfg = SynthConfig::desk();
        let split = make_split(&cfg, seed, 1, 0, 0.0).unwrap();
        let mut e = split.train[0];
        e.class_id = class;
        let spec = e.spec(&cfg).unwrap();
        let clip = e.clip(&cfg).unwrap();
        let plane = cfg.height * cfg.width;
        for (k, (x0, y0)) in spec.positions().into_iter().enumerate() {
            let frame = clip.frame(&cfg, k);
            let mut inside = Vec::new();
            for y in 0..cfg.height {
                for x in 0..cfg.width {
                    let px: Vec<f64> = (0..3).map(|c| frame[c * plane + y * cfg.width + x]).collect();
                    if px.iter().any(|v| *v > BACKGROUND_MAX) {
                        prop_assert_eq!(px.as_slice(), &PALETTES[class][..]);
                        inside.push((x, y));
                    }
                }
            }
            prop_assert_eq!(inside.len(), cfg.square * cfg.square);
            let cx = inside.iter().map(|p| p.0 as f64).sum::<f64>() / inside.len() as f64;
            let cy = inside.iter().map(|p| p.1 as f64).sum::<f64>() / inside.len() as f64;
            let half = (cfg.square - 1) as f64 / 2.0;
            prop_assert_eq!((cx, cy), (x0 as f64 + half, y0 as f64 + half));
        }
    }

    #[test]
    fn split_is_deterministic_and_disjoint(seed in any::<u64>(), n_train in 1usize..40, n_test in 0usize..20, p in 0.0f64..1.0) {
        let cfg = SynthConfig::desk();
        let a = make_split(&cfg, seed, n_train, n_test, p).unwrap();
        prop_assert_eq!(&a, &make_split(&cfg, seed, n_train, n_test, p).unwrap());
        prop_assert_eq!((a.train.len(), a.test.len()), (n_train, n_test));
        prop_assert!(a.validate().is_ok());
        prop_assert!(a.test.iter().all(|e| !e.corrupt_av));
        prop_assert!(a.train.iter().chain(&a.test).all(|e| e.class_id < cfg.classes));
    }
}

#[test]
fn class_histogram_is_uniform() {
    let cfg = SynthConfig::desk();
    let split = make_split(&cfg, 99, 1600, 0, 0.0).unwrap();
    let mut counts = vec![0usize; cfg.classes];
    split.train.iter().for_each(|e| counts[e.class_id] += 1);
    let expected = 1600.0 / cfg.classes as f64;
    let chi2: f64 = counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
    // 99.9th percentile of χ² with 7 degrees of freedom.
    assert!(chi2 < 24.32, "χ² = {chi2}, counts {counts:?}");
}

#[test]
fn corruption_rate_tracks_probability() {
    let cfg = SynthConfig::desk();
    let split = make_split(&cfg, 5, 2000, 10, 0.3).unwrap();
    let rate = split.train.iter().filter(|e| e.corrupt_av).count() as f64 / 2000.0;
    // Three standard deviations of a binomial proportion.
    assert!((rate - 0.3).abs() < 3.0 * (0.3f64 * 0.7 / 2000.0).sqrt(), "rate {rate}");
}

#[test]
fn linear_probe_on_mel_profile_separates_classes() {
    let cfg = SynthConfig::desk();
    let split = make_split(&cfg, 17, 160, 200, 0.0).unwrap();
    let mut means = vec![vec![0.0; cfg.mel_bins]; cfg.classes];
    let mut counts = vec![0.0; cfg.classes];
    for e in &split.train {
        let clip = e.clip(&cfg).unwrap();
        for (m, p) in means[e.class_id].iter_mut().zip(profile(&cfg, &clip.mel)) {
            *m += p;
        }
        counts[e.class_id] += 1.0;
    }
    for (m, c) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|x| *x /= c);
    }
    // Nearest class mean under cosine on unit-normalized inputs is a linear rule.
    let mut correct = 0;
    for e in &split.test {
        let p = profile(&cfg, &e.clip(&cfg).unwrap().mel);
        let best = (0..cfg.classes).max_by(|a, b| cosine(&p, &means[*a]).total_cmp(&cosine(&p, &means[*b]))).unwrap();
        correct += usize::from(best == e.class_id);
    }
    let acc = correct as f64 / split.test.len() as f64;
    assert!(acc > 0.9, "probe accuracy {acc}");
}

#[test]
fn linear_probe_on_frame_colours_separates_classes() {
    let cfg = SynthConfig::desk();
    let split = make_split(&cfg, 29, 160, 200, 0.0).unwrap();
    let plane = cfg.height * cfg.width;
    let colour = |frames: &[f64]| -> Vec<f64> {
        (0..3).map(|c| frames.chunks(3 * plane).map(|f| f[c * plane..(c + 1) * plane].iter().sum::<f64>()).sum::<f64>() / (cfg.frames * plane) as f64).collect()
    };
    let mut means = vec![vec![0.0; 3]; cfg.classes];
    let mut counts = vec![0.0; cfg.classes];
    for e in &split.train {
        for (m, x) in means[e.class_id].iter_mut().zip(colour(&e.clip(&cfg).unwrap().frames)) {
            *m += x;
        }
        counts[e.class_id] += 1.0;
    }
    for (m, c) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|x| *x /= c);
    }
    // Nearest class mean in Euclidean distance has linear decision boundaries.
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let correct = split
        .test
        .iter()
        .filter(|e| {
            let x = colour(&e.clip(&cfg).unwrap().frames);
            (0..cfg.classes).min_by(|a, b| dist(&x, &means[*a]).total_cmp(&dist(&x, &means[*b]))).unwrap() == e.class_id
        })
        .count();
    let acc = correct as f64 / split.test.len() as f64;
    assert!(acc > 0.9, "probe accuracy {acc}");
}

#[test]
fn corrupt_clips_carry_another_class_signature() {
    let cfg = SynthConfig::desk();
    let split = make_split(&cfg, 23, 200, 0, 1.0).unwrap();
    for e in &split.train {
        let clip = e.clip(&cfg).unwrap();
        let p = profile(&cfg, &clip.mel);
        let best = (0..cfg.classes).max_by(|a, b| cosine(&p, &class_signature(&cfg, *a)).total_cmp(&cosine(&p, &class_signature(&cfg, *b)))).unwrap();
        assert_ne!(best, e.class_id);
        let (_, vaf) = oracle_similarities(&[&clip]);
        assert!(vaf[0] < VAF_CLEAN);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = SynthConfig::desk();
    cfg.mel_width = 81;
    assert!(make_split(&cfg, 0, 1, 1, 0.0).is_err());
    let cfg = SynthConfig { classes: 9, ..SynthConfig::desk() };
    assert!(cfg.validate().is_err());
    assert!(make_split(&SynthConfig::desk(), 0, 1, 1, 1.5).is_err());
}
