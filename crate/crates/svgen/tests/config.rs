use svgen::config::Preset;
use svgen::{CliError, RunConfig};
use svgen_core::hcl::HclVariant;
use svgen_core::quantizer::CodebookMode;
use svgen_core::seqfmt::SeqFormat;

#[test]
fn every_section_accepts_its_keys() {
    let text = "
[run]
seed = 9
out_dir = /tmp/somewhere
run_id = r1

[codec]
codebook_mode = loss

[hcl]
alpha = 0.5
variant = gathered
window = 4

[data]
n_train = 32
n_test = 48
corrupt_prob = 0.3

[training]
steps = 120
lr = 0.001
full_frames_from = none
eval_every = 25
checkpoint_every = 50

[seqfmt]
format = TVA

[decoder]
steps = 50
top_k = 0
temperature = 0.7
";
    let c = RunConfig::parse(text).unwrap();
    assert_eq!(c.preset, Preset::Desk);
    assert_eq!((c.seed, c.train.seed), (9, 9));
    assert_eq!(c.run_dir(), std::path::PathBuf::from("/tmp/somewhere/r1"));
    assert_eq!((c.eval_every, c.checkpoint_every), (25, 50));
    assert_eq!(c.codec.quantizer.mode, CodebookMode::Loss);
    assert_eq!(c.train.alpha, 0.5);
    assert_eq!(c.train.hcl.variant, HclVariant::ModalityGathered);
    assert_eq!(c.train.window, 4);
    assert_eq!((c.data.n_train, c.data.n_test, c.data.corrupt_prob), (32, 48, 0.3));
    assert_eq!((c.train.steps, c.train.lr, c.train.full_frames_from), (120, 0.001, None));
    assert_eq!(c.format, SeqFormat::Tva);
    assert_eq!(c.ar.format, SeqFormat::Tva);
    assert_eq!(c.ar.steps, 50);
    assert_eq!((c.sampling.top_k, c.sampling.temperature), (0, 0.7));
}

#[test]
fn bad_values_are_config_errors() {
    for text in [
        "[training]\nsteps = many\n",
        "[training]\nlr = -1\n",
        "[run]\npreset = laptop\n",
        "[seqfmt]\nformat = VAT\n",
        "[hcl]\nvariant = both\n",
        "[data]\ncorrupt_prob = 1.5\n",
        "[data]\nn_test = 0\n",
        "[training]\neval_every = 0\n",
        "[training\nsteps = 1\n",
        "[training]\nsteps\n",
    ] {
        // Range checks that live in the core crate surface as its config error.
        let e = RunConfig::parse(text).unwrap_err();
        assert!(matches!(e, CliError::Config(_) | CliError::Core(svgen_core::Error::Config(_))), "{text:?}: {e}");
        assert_eq!(e.exit_code(), 1);
    }
}

#[test]
fn errors_name_the_line() {
    let Err(CliError::Config(m)) = RunConfig::parse("[run]\nseed = 1\n\n[training]\nsteps = x\n") else {
        panic!("expected a config error");
    };
    assert!(m.contains("line 5"), "{m}");
}

#[test]
fn missing_file_is_a_config_error() {
    assert!(matches!(RunConfig::load(std::path::Path::new("/nonexistent/svgen.toml")), Err(CliError::Config(_))));
}

#[test]
fn hashes_separate_codec_and_decoder_settings() {
    let base = RunConfig::parse("").unwrap();
    let decoder_only = RunConfig::parse("[decoder]\nsteps = 3\n").unwrap();
    assert_eq!(base.codec_hash(), decoder_only.codec_hash());
    assert_ne!(base.hash(), decoder_only.hash());
    let codec_change = RunConfig::parse("[training]\nsteps = 3\n").unwrap();
    assert_ne!(base.codec_hash(), codec_change.codec_hash());
    assert_eq!(base.hash(), RunConfig::parse("# nothing\n").unwrap().hash());
}

#[test]
fn paper_scale_preset_has_published_shapes() {
    let c = RunConfig::parse("[run]\npreset = paper-scale\n").unwrap();
    let d = c.decoder_config().unwrap();
    assert_eq!((d.layers, d.heads, d.model_dim, d.max_len), (24, 16, 1024, 1025));
    assert_eq!((c.codec.codebook_visual, c.codec.codebook_audio), (8192, 4096));
    assert_eq!(c.codec.audio_grid(), (5, 5));
}
