use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svgen_core::argen::{ar_loss, generate, rerank, Decoder, DecoderConfig, GridShapes, KvCache, SamplingConfig};
use svgen_core::seqfmt::{build_sequence, parse_sequence, Grid, MultimodalSequence, SeqFormat, SequenceContent, TokenKind, Vocabulary};
use svgen_core::{oracles, ParamStore, Tape};

const SHAPES: GridShapes = GridShapes { visual: (2, 2), audio: (1, 2) };

fn vocab() -> Vocabulary {
    Vocabulary::new(6, 5, 4, 2).unwrap()
}

fn decoder(cfg: DecoderConfig, seed: u64) -> (ParamStore, Decoder) {
    let mut store = ParamStore::new();
    let dec = Decoder::new(&mut store, cfg, seed).unwrap();
    (store, dec)
}

fn small(max_len: usize) -> DecoderConfig {
    DecoderConfig::small(2, 2, 16, max_len, vocab().size())
}

fn content(rng: &mut ChaCha8Rng) -> SequenceContent {
    let v = vocab();
    let grid = |rng: &mut ChaCha8Rng, (r, c): (usize, usize), n: usize| Grid::new(r, c, (0..r * c).map(|_| rng.random_range(0..n)).collect()).unwrap();
    SequenceContent {
        text: (0..3).map(|_| rng.random_range(0..v.text)).collect(),
        visual: (0..v.frames).map(|_| grid(rng, SHAPES.visual, v.visual)).collect(),
        audio: (0..v.frames).map(|_| grid(rng, SHAPES.audio, v.audio)).collect(),
    }
}

fn sequences(format: SeqFormat, n: usize, seed: u64) -> Vec<MultimodalSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| build_sequence(&vocab(), format, &content(&mut rng), usize::MAX).unwrap()).collect()
}

fn rows(t: &Tape, logits: svgen_core::Var, v: usize) -> Vec<Vec<f64>> {
    t.value(logits).chunks(v).map(<[f64]>::to_vec).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn equal_weights_give_mean_cross_entropy(seed in any::<u64>(), fmt in 0usize..3) {
        let format = [SeqFormat::Tva, SeqFormat::Tav, SeqFormat::Masf][fmt];
        let seqs = sequences(format, 3, seed);
        let mut cfg = small(seqs[0].len());
        (cfg.gamma_text, cfg.gamma_visual, cfg.gamma_audio) = (1.0, 1.0, 1.0);
        let (store, dec) = decoder(cfg, seed);
        let refs: Vec<&MultimodalSequence> = seqs.iter().collect();
        let ids: Vec<&[usize]> = seqs.iter().map(|s| s.ids.as_slice()).collect();
        let mut t = Tape::with_params(&store);
        let logits = dec.forward_logits(&mut t, &ids).unwrap();
        let l = ar_loss(&mut t, &dec.cfg, &refs, logits).unwrap();
        let got = t.scalar(l.loss);

        let n = seqs[0].len();
        let all = rows(&t, logits, cfg.vocab_size);
        let (mut pred, mut targets, mut gammas) = (Vec::new(), Vec::new(), Vec::new());
        for (b, s) in seqs.iter().enumerate() {
            for p in 1..n {
                pred.push(all[b * n + p - 1].clone());
                targets.push(s.ids[p]);
                gammas.push(if s.kinds[p] == TokenKind::Special { 0.0 } else { 1.0 });
            }
        }
        let want = oracles::weighted_ce(&pred, &targets, &gammas);
        prop_assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn kv_cache_matches_full_forward(seed in any::<u64>()) {
        let seq = &sequences(SeqFormat::Masf, 1, seed)[0];
        let (store, dec) = decoder(small(seq.len()), seed);
        let mut t = Tape::with_params(&store);
        let logits = dec.forward_logits(&mut t, &[seq.ids.as_slice()]).unwrap();
        let full = rows(&t, logits, dec.cfg.vocab_size);
        let mut cache = KvCache::new(&dec, &store);
        for (p, id) in seq.ids.iter().enumerate() {
            let step = cache.push(*id).unwrap();
            for (a, b) in step.iter().zip(&full[p]) {
                prop_assert!((a - b).abs() < 1e-9, "position {p}: {a} vs {b}");
            }
        }
        prop_assert!(cache.push(0).is_err());
    }

    #[test]
    fn logits_are_causal(seed in any::<u64>(), cut in 1usize..10) {
        let seq = &sequences(SeqFormat::Tva, 1, seed)[0];
        let (store, dec) = decoder(small(seq.len()), seed);
        let mut changed = seq.ids.clone();
        let cut = cut.min(changed.len() - 1);
        changed[cut] = (changed[cut] + 1) % dec.cfg.vocab_size;
        let mut t = Tape::with_params(&store);
        let a = dec.forward_logits(&mut t, &[seq.ids.as_slice()]).unwrap();
        let b = dec.forward_logits(&mut t, &[changed.as_slice()]).unwrap();
        let v = dec.cfg.vocab_size;
        prop_assert_eq!(&t.value(a)[..cut * v], &t.value(b)[..cut * v]);
        prop_assert_ne!(&t.value(a)[cut * v..], &t.value(b)[cut * v..]);
    }

    #[test]
    fn samples_always_parse(seed in any::<u64>(), fmt in 0usize..3, top_k in 0usize..4) {
        let format = [SeqFormat::Tva, SeqFormat::Tav, SeqFormat::Masf][fmt];
        let v = vocab();
        let len = sequences(format, 1, 0)[0].len();
        let (store, dec) = decoder(small(len), seed);
        let s = SamplingConfig { temperature: 1.3, top_k };
        let set = generate(&dec, &store, &v, SHAPES, format, &[1, 2, 3], 4, &s, seed).unwrap();
        prop_assert_eq!(set.samples.len(), 4);
        for sample in &set.samples {
            prop_assert_eq!(sample.sequence.len(), len);
            let back = parse_sequence(&v, format, &sample.sequence.ids, SHAPES.visual, SHAPES.audio).unwrap();
            prop_assert_eq!(&back, &sample.content);
            prop_assert_eq!(&back.text, &vec![1, 2, 3]);
            prop_assert!(sample.score <= 0.0);
        }
    }
}

#[test]
fn uniform_logits_give_log_vocab() {
    let seqs = sequences(SeqFormat::Masf, 2, 4);
    let cfg = small(seqs[0].len());
    let refs: Vec<&MultimodalSequence> = seqs.iter().collect();
    let mut t = Tape::new();
    let logits = t.constant(&[2 * seqs[0].len(), cfg.vocab_size], vec![0.25; 2 * seqs[0].len() * cfg.vocab_size]).unwrap();
    let l = ar_loss(&mut t, &cfg, &refs, logits).unwrap();
    assert!((t.scalar(l.loss) - (cfg.vocab_size as f64).ln()).abs() < 1e-12);
    // Specials are excluded from every modality bucket.
    let counted: usize = l.parts.iter().map(|p| p.count).sum();
    let specials = seqs.iter().map(|s| s.kinds[1..].iter().filter(|k| **k == TokenKind::Special).count()).sum::<usize>();
    assert_eq!(counted + specials, 2 * (seqs[0].len() - 1));
}

#[test]
fn sampling_is_seeded_and_greedy_ignores_the_seed() {
    let v = vocab();
    let len = sequences(SeqFormat::Masf, 1, 0)[0].len();
    let (store, dec) = decoder(small(len), 8);
    let run = |s: &SamplingConfig, seed| generate(&dec, &store, &v, SHAPES, SeqFormat::Masf, &[0], 3, s, seed).unwrap();
    let warm = SamplingConfig { temperature: 1.0, top_k: 0 };
    assert_eq!(run(&warm, 5), run(&warm, 5));
    let greedy = SamplingConfig { temperature: 0.0, top_k: 0 };
    let g = run(&greedy, 1);
    assert_eq!(g, run(&greedy, 2));
    assert!(g.samples.windows(2).all(|w| w[0].sequence == w[1].sequence));
}

#[test]
fn rerank_sorts_by_score_and_keeps_ties_stable() {
    let v = vocab();
    let len = sequences(SeqFormat::Masf, 1, 0)[0].len();
    let (store, dec) = decoder(small(len), 3);
    let set = generate(&dec, &store, &v, SHAPES, SeqFormat::Masf, &[0], 4, &SamplingConfig::desk(v.size()), 1).unwrap();
    let original = set.samples.clone();
    let mut i = 0.0;
    let ranked = rerank(set, |_| {
        i += 1.0;
        if i == 2.0 { 10.0 } else { 0.0 }
    });
    assert_eq!(ranked.samples[0].sequence, original[1].sequence);
    assert_eq!(ranked.samples[1].sequence, original[0].sequence);
    assert_eq!(ranked.samples[2].sequence, original[2].sequence);
}

#[test]
fn configuration_errors() {
    let v = vocab();
    assert!(DecoderConfig::small(1, 3, 16, 8, 10).validate().is_err());
    let (store, dec) = decoder(small(10), 0);
    assert!(generate(&dec, &store, &v, SHAPES, SeqFormat::Masf, &[0], 1, &SamplingConfig::desk(v.size()), 0).is_err());
    let (store, dec) = decoder(DecoderConfig::small(1, 2, 8, 64, v.size() + 1), 0);
    assert!(generate(&dec, &store, &v, SHAPES, SeqFormat::Masf, &[0], 1, &SamplingConfig::desk(v.size()), 0).is_err());
    let paper = DecoderConfig::paper_scale(v.size());
    assert_eq!((paper.layers, paper.heads, paper.model_dim, paper.max_len), (24, 16, 1024, 1025));
}
