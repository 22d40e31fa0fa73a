use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use svgen_core::cam::{Cam, CamConfig};
use svgen_core::codec::CodecConfig;
use svgen_core::{oracles, ParamStore, Tape, Tensor};

fn setup(cfg: CamConfig, seed: u64) -> (ParamStore, Cam) {
    let mut store = ParamStore::new();
    let cam = Cam::new(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (store, cam)
}

#[test]
fn paper_scale_shapes() {
    let codec = CodecConfig::paper_scale();
    let (vh, vw) = codec.visual_grid();
    let (af, at) = codec.audio_grid();
    assert_eq!((vh, vw, af, at), (8, 8, 5, 5));
    let cfg = CamConfig { dim_visual: codec.dim_visual, dim_audio: codec.dim_audio, common_dim: 256, groups: codec.groups };
    let (store, cam) = setup(cfg, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut t = Tape::with_params(&store);
    let zv = t.leaf(&Tensor::randn(&[2, 256, vh, vw], 1.0, &mut rng));
    let za = t.leaf(&Tensor::randn(&[2, 256, af, at], 1.0, &mut rng));
    let out = cam.forward(&mut t, zv, za).unwrap();
    assert_eq!(t.shape(out.h_v), &[2, 256]);
    assert_eq!(t.shape(out.h_a), &[2, 256]);
    assert_eq!(t.shape(out.visual_map), &[2, vh * vw]);
    assert_eq!(t.shape(out.audio_map), &[2, af * at]);
    let (vm, am) = cam.attention_maps(&mut t, zv, za).unwrap();
    assert_eq!(t.shape(vm), &[2, vh, vw]);
    assert_eq!(t.shape(am), &[2, af, at]);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let (store, cam) = setup(CamConfig { dim_visual: 4, dim_audio: 4, common_dim: 4, groups: 2 }, 1);
    let mut t = Tape::with_params(&store);
    let zv = t.leaf(&Tensor::zeros(&[2, 4, 2, 2]));
    let za = t.leaf(&Tensor::zeros(&[3, 4, 2, 2]));
    assert!(cam.forward(&mut t, zv, za).is_err());
    assert!(Cam::new(&mut ParamStore::new(), CamConfig { dim_visual: 4, dim_audio: 4, common_dim: 6, groups: 4 }, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forward_matches_oracle(n in 1usize..4, h in 1usize..4, w in 1usize..4, f in 1usize..3, tt in 1usize..4, seed in any::<u64>()) {
        let cfg = CamConfig { dim_visual: 6, dim_audio: 5, common_dim: 8, groups: 4 };
        let (store, cam) = setup(cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 9);
        let zv = Tensor::randn(&[n, 6, h, w], 1.0, &mut rng);
        let za = Tensor::randn(&[n, 5, f, tt], 1.0, &mut rng);
        let mut t = Tape::with_params(&store);
        let (v, a) = (t.leaf(&zv), t.leaf(&za));
        let out = cam.forward(&mut t, v, a).unwrap();
        let (hv, ha, vm, am) = oracles::cam_forward(&cam, &store, zv.data(), [n, 6, h, w], za.data(), [n, 5, f, tt]);
        for (got, want) in [(out.h_v, hv), (out.h_a, ha), (out.visual_map, vm), (out.audio_map, am)] {
            let got = t.value(got);
            prop_assert_eq!(got.len(), want.len());
            for (x, y) in got.iter().zip(&want) {
                prop_assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn frames_are_processed_independently(n in 2usize..5, seed in any::<u64>()) {
        let cfg = CamConfig { dim_visual: 4, dim_audio: 4, common_dim: 4, groups: 2 };
        let (store, cam) = setup(cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let zv = Tensor::randn(&[n, 4, 2, 3], 1.0, &mut rng);
        let za = Tensor::randn(&[n, 4, 2, 2], 1.0, &mut rng);
        // Reverse the frame order and check the outputs reverse with it.
        let reverse = |x: &Tensor| {
            let per = x.numel() / n;
            let rows: Vec<f64> = x.data().chunks(per).rev().flatten().copied().collect();
            Tensor::new(x.shape(), rows).unwrap()
        };
        let run = |zv: &Tensor, za: &Tensor| {
            let mut t = Tape::with_params(&store);
            let (v, a) = (t.leaf(zv), t.leaf(za));
            let out = cam.forward(&mut t, v, a).unwrap();
            (t.value(out.h_v).to_vec(), t.value(out.h_a).to_vec())
        };
        let (hv, ha) = run(&zv, &za);
        let (rv, ra) = run(&reverse(&zv), &reverse(&za));
        let back = |x: Vec<f64>| -> Vec<f64> { x.chunks(4).rev().flatten().copied().collect() };
        for (x, y) in back(rv).iter().zip(&hv).chain(back(ra).iter().zip(&ha)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
