use std::path::PathBuf;

use svgen::formats::{read_manifest, read_sequence, write_manifest, write_sequence};
use svgen_core::seqfmt::{build_sequence, parse_sequence, Grid, SeqFormat, SequenceContent, Vocabulary};
use svgen_core::synthdata::{make_split, SynthConfig};

fn data(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Two frames, 1×2 visual and 1×1 audio grids.
fn fixture() -> (Vocabulary, SequenceContent) {
    let vocab = Vocabulary::new(4, 3, 2, 2).unwrap();
    let g = |codes: Vec<usize>| Grid::new(1, codes.len(), codes).unwrap();
    let content = SequenceContent { text: vec![3, 1], visual: vec![g(vec![0, 2]), g(vec![1, 1])], audio: vec![g(vec![1]), g(vec![0])] };
    (vocab, content)
}

#[test]
fn golden_files_match_writer_and_reader() {
    let (vocab, content) = fixture();
    for (format, file) in [(SeqFormat::Masf, "masf.seq"), (SeqFormat::Tva, "tva.seq"), (SeqFormat::Tav, "tav.seq")] {
        let golden = data(file);
        let seq = build_sequence(&vocab, format, &content, usize::MAX).unwrap();
        assert_eq!(write_sequence(&vocab, &seq), golden, "{file}");
        let back = read_sequence(&vocab, &golden).unwrap();
        assert_eq!(back, seq);
        assert_eq!(parse_sequence(&vocab, format, &back.ids, (1, 2), (1, 1)).unwrap(), content);
    }
}

#[test]
fn misplaced_special_is_reported_at_its_position() {
    let (vocab, _) = fixture();
    let seq = read_sequence(&vocab, &data("bad_visual.seq")).unwrap();
    match parse_sequence(&vocab, seq.format, &seq.ids, (1, 2), (1, 1)) {
        Err(svgen_core::Error::Parse { position, .. }) => assert_eq!(position, 12),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn malformed_sequence_files_are_rejected() {
    let (vocab, _) = fixture();
    for text in ["", "format=MASF\n9\n", "format=XYZ L=1\n9\n", "format=MASF L=2\n9\n", "format=MASF L=1\n99\n", "format=MASF L=1 extra=1\n9\n", "format=MASF L=1\nnine\n"] {
        assert!(read_sequence(&vocab, text).is_err(), "{text:?}");
    }
}

#[test]
fn manifest_round_trips_a_real_split() {
    let split = make_split(&SynthConfig::desk(), 8, 20, 6, 0.5).unwrap();
    let text = write_manifest(&split.train, &split.test);
    assert_eq!(read_manifest(&text).unwrap(), (split.train, split.test));
}
