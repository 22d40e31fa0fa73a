use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use svgen::checkpoint::hex;
use svgen::pipeline;
use svgen::{CliError, RunConfig};
use svgen_core::seqfmt::SeqFormat;

#[derive(Debug, Parser)]
#[command(name = "svgen", version, about = "Sounding-video codec and sequence model on synthetic clips")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Tva,
    Tav,
    Masf,
}

impl From<Format> for SeqFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Tva => SeqFormat::Tva,
            Format::Tav => SeqFormat::Tav,
            Format::Masf => SeqFormat::Masf,
        }
    }
}

#[derive(Debug, clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `[run] seed`; for `generate`, the sampling seed instead.
    #[arg(long)]
    seed: Option<u64>,
    /// Candidates for `generate`, clips for `reconstruct`.
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Overrides `[seqfmt] format`.
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the codec, CAM and discriminators.
    TrainCodec(Common),
    /// Train the decoder on sequences tokenized by the run's codec.
    TrainAr(Common),
    /// Write original and reconstructed media for test clips.
    Reconstruct(Common),
    /// Sample candidates and rerank them with the oracle scorer.
    Generate(Common),
    /// Retrieval, perplexities, mask statistics and attention maps.
    Eval(Common),
    /// Run every oracle comparison; exits 3 if any fails.
    OracleCheck(Common),
}

fn run(cmd: Command) -> Result<(), CliError> {
    let (Command::TrainCodec(a) | Command::TrainAr(a) | Command::Reconstruct(a) | Command::Generate(a) | Command::Eval(a) | Command::OracleCheck(a)) = &cmd;
    let mut cfg = RunConfig::load(&a.config)?;
    let generating = matches!(cmd, Command::Generate(_));
    if let (Some(s), false) = (a.seed, generating) {
        cfg = cfg.with_seed(s);
    }
    if let Some(f) = a.format {
        cfg = cfg.with_format(f.into());
    }
    if a.resume.is_some() && !matches!(cmd, Command::TrainCodec(_) | Command::TrainAr(_)) {
        return Err(CliError::Usage(String::from("--resume applies to train-codec and train-ar only")));
    }
    log::info!("config hash {}", hex(&cfg.hash()));
    let resume = a.resume.as_deref();
    match cmd {
        Command::TrainCodec(_) => {
            let r = pipeline::train_codec(&cfg, resume)?;
            println!("metrics {}", r.metrics.display());
            println!("checkpoint {}", r.checkpoint.display());
        }
        Command::TrainAr(_) => {
            let r = pipeline::train_ar(&cfg, resume)?;
            println!("metrics {}", r.metrics.display());
            println!("checkpoint {}", r.checkpoint.display());
        }
        Command::Reconstruct(_) => {
            for (i, (v, au)) in pipeline::reconstruct(&cfg, a.k)?.iter().enumerate() {
                println!("clip {i}: mse visual {v:.6} audio {au:.6}");
            }
        }
        Command::Generate(_) => {
            let g = pipeline::generate(&cfg, a.k, a.seed.unwrap_or(cfg.seed))?;
            println!("class {}", g.class);
            for (rank, (i, lp, score)) in g.ranking.iter().enumerate() {
                println!("rank {rank}: candidate {i} logprob {lp:.4} oracle {score:.4}");
            }
        }
        Command::Eval(_) => {
            let r = pipeline::eval(&cfg)?;
            let c = r.codec;
            println!("retrieval_top1 {}", c.retrieval_top1);
            println!("recon_mse visual {} audio {}", c.recon_mse_visual, c.recon_mse_audio);
            println!("perplexity visual {} audio {}", c.perplexity_visual, c.perplexity_audio);
            if let Some(l) = r.ar_loss {
                println!("ar loss {l} perplexity {}", l.exp());
            }
            for m in &r.masks {
                println!("{}: {} anchors, {:.2} positives, {:.2} negatives, {} filtered, {} live", m.term, m.anchors, m.mean_positives, m.mean_negatives, m.vaf_filtered, m.live_anchors);
            }
        }
        Command::OracleCheck(_) => {
            let result = pipeline::oracle_check(&cfg, cfg.seed);
            let checks = match &result {
                Ok(c) => c.len(),
                Err(_) => 0,
            };
            result?;
            println!("{checks} checks passed");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
