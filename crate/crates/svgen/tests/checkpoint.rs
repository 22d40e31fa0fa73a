use proptest::prelude::*;

use svgen::checkpoint::{Checkpoint, MAGIC};
use svgen::CliError;

fn sample() -> Checkpoint {
    Checkpoint::new(
        [7; 32],
        42,
        vec![
            (String::from("codec/w"), vec![2, 3], vec![1.0, -2.5, f64::MIN_POSITIVE, 0.0, -0.0, 1e300]),
            (String::from("scalar"), vec![], vec![3.25]),
            (String::from("empty"), vec![0, 4], vec![]),
        ],
    )
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    let ck = sample();
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(std::fs::read(&path).unwrap()[..8], MAGIC[..]);
}

#[test]
fn hash_mismatch_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    sample().save(&path).unwrap();
    assert!(Checkpoint::load_matching(&path, &[7; 32]).is_ok());
    assert!(matches!(Checkpoint::load_matching(&path, &[8; 32]), Err(CliError::Checkpoint(_))));
}

#[test]
fn corrupt_files_are_refused() {
    let bytes = sample().to_bytes();
    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'X';
    let mut wrong_version = bytes.clone();
    wrong_version[8] = 99;
    let mut trailing = bytes.clone();
    trailing.push(0);
    for b in [wrong_magic, wrong_version, trailing, bytes[..bytes.len() - 1].to_vec(), Vec::new()] {
        assert!(matches!(Checkpoint::from_bytes(&b), Err(CliError::Checkpoint(_))));
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(Checkpoint::load(&dir.path().join("absent.ckpt")), Err(CliError::Io { .. })));
}

proptest! {
    #[test]
    fn bytes_round_trip_bit_exactly(
        step in any::<u64>(),
        hash in any::<[u8; 32]>(),
        arrays in prop::collection::vec(("[a-z/]{0,12}", prop::collection::vec(any::<u64>(), 0..9)), 0..4),
    ) {
        let arrays: Vec<_> = arrays.into_iter().map(|(n, raw)| {
            let len = raw.len();
            (n, vec![len], raw.into_iter().map(f64::from_bits).collect::<Vec<_>>())
        }).collect();
        let ck = Checkpoint::new(hash, step, arrays);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        prop_assert_eq!(back.step, step);
        prop_assert_eq!(back.config_hash, hash);
        for (a, b) in back.arrays.iter().zip(&ck.arrays) {
            prop_assert_eq!(&a.0, &b.0);
            prop_assert_eq!(&a.1, &b.1);
            prop_assert_eq!(a.2.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.2.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        }
    }
}
