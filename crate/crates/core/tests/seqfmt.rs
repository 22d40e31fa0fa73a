use proptest::prelude::*;

use svgen_core::oracles;
use svgen_core::seqfmt::{
    build_sequence, cross_modal_summary, parse_sequence, Grid, Group, Layout, MultimodalSequence, Reach, SeqFormat, SequenceContent, Slot, TokenKind, Vocabulary,
};

const FORMATS: [SeqFormat; 3] = [SeqFormat::Tva, SeqFormat::Tav, SeqFormat::Masf];

fn content_strategy() -> impl Strategy<Value = (Vocabulary, SequenceContent, (usize, usize), (usize, usize))> {
    (1usize..5, 1usize..4, 1usize..4, 1usize..3, 1usize..4, 0usize..8).prop_flat_map(|(frames, vr, vc, ar, ac, text_len)| {
        let vocab = Vocabulary::new(11, 7, 5, frames).unwrap();
        let grid = |r: usize, c: usize, n: usize| prop::collection::vec(0..n, r * c).prop_map(move |codes| Grid::new(r, c, codes).unwrap());
        (
            prop::collection::vec(0usize..11, text_len),
            prop::collection::vec(grid(vr, vc, 7), frames),
            prop::collection::vec(grid(ar, ac, 5), frames),
        )
            .prop_map(move |(text, visual, audio)| (vocab, SequenceContent { text, visual, audio }, (vr, vc), (ar, ac)))
    })
}

fn group(kind: TokenKind, frame: usize) -> Group {
    Group { kind, frame }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn build_then_parse_round_trips((vocab, content, vs, as_) in content_strategy()) {
        for f in FORMATS {
            let seq = build_sequence(&vocab, f, &content, usize::MAX).unwrap();
            prop_assert_eq!(&parse_sequence(&vocab, f, &seq.ids, vs, as_).unwrap(), &content);
            prop_assert_eq!(&MultimodalSequence::tag(&vocab, f, seq.ids.clone()).unwrap(), &seq);
        }
    }

    #[test]
    fn formats_are_permutations_of_each_other((vocab, content, _, _) in content_strategy()) {
        let seqs: Vec<_> = FORMATS.iter().map(|f| build_sequence(&vocab, *f, &content, usize::MAX).unwrap()).collect();
        let v = vs_len(&content);
        let expected = oracles::masf_length(content.text.len(), vocab.frames, v.0, v.1);
        for s in &seqs {
            prop_assert_eq!(s.len(), expected);
            prop_assert_eq!(oracles::multiset(s.ids.iter().copied()), oracles::multiset(seqs[0].ids.iter().copied()));
        }
    }

    #[test]
    fn truncated_or_extended_sequences_fail((vocab, content, vs, as_) in content_strategy(), cut in 1usize..4) {
        for f in FORMATS {
            let seq = build_sequence(&vocab, f, &content, usize::MAX).unwrap();
            let n = seq.ids.len();
            prop_assert!(parse_sequence(&vocab, f, &seq.ids[..n - cut.min(n - 1)], vs, as_).is_err());
            let mut longer = seq.ids.clone();
            longer.push(vocab.visual_id(0));
            prop_assert!(parse_sequence(&vocab, f, &longer, vs, as_).is_err());
        }
    }

    #[test]
    fn summary_matches_enumeration(frames in 1usize..5, text in 0usize..3, v in 1usize..4, a in 1usize..4) {
        for f in FORMATS {
            let layout = Layout::new(f, frames, text, v, a);
            prop_assert_eq!(cross_modal_summary(&layout).entries, oracles::enumerate_reach(&layout));
        }
    }

    #[test]
    fn masf_audio_sees_only_visual_up_to_its_frame(frames in 1usize..6, v in 1usize..4, a in 1usize..4) {
        let s = cross_modal_summary(&Layout::new(SeqFormat::Masf, frames, 2, v, a));
        for i in 1..=frames {
            for j in 1..=frames {
                let want = if j <= i { Reach::Full } else { Reach::None };
                prop_assert_eq!(s.get(group(TokenKind::Audio, i), group(TokenKind::Visual, j)), want);
            }
        }
    }
}

fn vs_len(c: &SequenceContent) -> (usize, usize) {
    (c.visual[0].codes.len(), c.audio[0].codes.len())
}

#[test]
fn masf_length_formula_is_exact() {
    for frames in 1..=8 {
        for (t, v, a) in [(0, 1, 1), (5, 16, 8), (93, 256, 32)] {
            for f in FORMATS {
                assert_eq!(Layout::new(f, frames, t, v, a).len(), oracles::masf_length(t, frames, v, a));
            }
        }
    }
}

#[test]
fn tva_audio_never_precedes_visual() {
    let s = cross_modal_summary(&Layout::new(SeqFormat::Tva, 4, 1, 2, 2));
    for i in 1..=4 {
        for j in 1..=4 {
            assert_eq!(s.get(group(TokenKind::Audio, i), group(TokenKind::Visual, j)), Reach::Full);
            assert_eq!(s.get(group(TokenKind::Visual, i), group(TokenKind::Audio, j)), Reach::None);
        }
    }
}

#[test]
fn overflow_is_reported() {
    let vocab = Vocabulary::new(4, 4, 4, 2).unwrap();
    let g = Grid::new(2, 2, vec![0; 4]).unwrap();
    let content = SequenceContent { text: vec![1, 2], visual: vec![g.clone(), g.clone()], audio: vec![g.clone(), g] };
    let need = oracles::masf_length(2, 2, 4, 4);
    assert!(build_sequence(&vocab, SeqFormat::Masf, &content, need).is_ok());
    assert!(build_sequence(&vocab, SeqFormat::Masf, &content, need - 1).is_err());
}

#[test]
fn wrong_special_is_located() {
    let vocab = Vocabulary::new(4, 4, 4, 2).unwrap();
    let g = Grid::new(1, 2, vec![1, 3]).unwrap();
    let content = SequenceContent { text: vec![], visual: vec![g.clone(), g.clone()], audio: vec![g.clone(), g] };
    let mut ids = build_sequence(&vocab, SeqFormat::Masf, &content, usize::MAX).unwrap().ids;
    let layout = Layout::new(SeqFormat::Masf, 2, 0, 2, 2);
    let p = layout.slots.iter().rposition(|s| matches!(s, Slot::Special(_))).unwrap();
    ids[p] = ids[1];
    match parse_sequence(&vocab, SeqFormat::Masf, &ids, (1, 2), (1, 2)) {
        Err(svgen_core::Error::Parse { position, .. }) => assert_eq!(position, p),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn format_names_round_trip() {
    for f in FORMATS {
        assert_eq!(SeqFormat::from_name(f.name()).unwrap(), f);
    }
    assert!(SeqFormat::from_name("VTA").is_err());
}
