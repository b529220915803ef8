use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use replayscope::config::ExperimentConfig;
use replayscope::pipeline;
use replayscope::systems::SystemRegistry;

#[derive(Parser)]
#[command(name = "replayscope", version, about = "Replay-attack detection pipeline")]
struct Cli {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Start from the reduced desk-scale preset instead of the full defaults.
    #[arg(long, global = true, conflicts_with = "config")]
    desk: bool,

    /// Override every seed in the config (synthesis, training, UBM, T matrix).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// More log output on stderr (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus directory (protocol.txt plus wav/).
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Utterances per class.
        #[arg(long)]
        n_utts: Option<usize>,
        /// Utterance id prefix.
        #[arg(long)]
        prefix: Option<String>,
    },
    /// Write spectrogram feature containers for every utterance of a corpus.
    Extract {
        #[arg(long)]
        corpus: PathBuf,
        /// Spectrogram system whose channels to extract, e.g. spec-magnitude-psd.
        #[arg(long)]
        system: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a registered system and write its checkpoint and log.
    Train(TrainArgs),
    /// Score a corpus with a trained checkpoint.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sum score files utterance by utterance.
    Fuse {
        #[arg(long)]
        out: PathBuf,
        /// Standardize each member before summing (overrides the config).
        #[arg(long)]
        z_norm: bool,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Pooled and per-configuration EER / min t-DCF for score files.
    Eval {
        #[arg(long)]
        protocol: PathBuf,
        /// Write the text report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Also write DET operating points per score file into this directory.
        #[arg(long)]
        det_dir: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// List the registered systems.
    Systems,
    /// Print the effective config as TOML.
    Config,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    system: String,
    #[arg(long)]
    train: PathBuf,
    /// Development corpus for model selection by EER.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Line-delimited JSON training log; defaults to the checkpoint path with `.log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

fn load_config(cli: &Cli) -> replayscope::Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, cli.desk) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, true) => ExperimentConfig::desk(),
        (None, false) => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.synth.rng_seed = seed;
        cfg.train.seed = seed;
        cfg.ivector.ubm.seed = seed;
        cfg.ivector.tv.seed = seed;
    }
    Ok(cfg)
}

fn corpus(cfg: &ExperimentConfig, dir: &Path) -> replayscope::Result<Vec<replayscope::audio::AudioClip>> {
    let clips = pipeline::load_corpus(dir, cfg.synth.sample_rate)?;
    log::info!("{}: {} utterances", dir.display(), clips.len());
    Ok(clips)
}

fn run(cli: Cli) -> replayscope::Result<()> {
    let mut cfg = load_config(&cli)?;
    let registry = SystemRegistry::with_builtins();
    let started = Instant::now();
    match cli.command {
        Command::Synth { out, n_utts, prefix } => {
            if let Some(n) = n_utts {
                cfg.synth.n_utts_per_class = n;
            }
            if let Some(p) = prefix {
                cfg.synth.id_prefix = p;
            }
            cfg.validate()?;
            let n = pipeline::synth(&cfg, &out)?;
            log::info!("wrote {n} clips to {}", out.display());
        }
        Command::Extract { corpus: dir, system, out } => {
            cfg.validate()?;
            replayscope::systems::spec_channels(&system)?;
            let clips = corpus(&cfg, &dir)?;
            let n = pipeline::extract(&cfg, &system, &clips, &out)?;
            log::info!("wrote {n} feature files to {}", out.display());
        }
        Command::Train(args) => {
            if let Some(e) = args.epochs {
                cfg.train.epochs = e;
            }
            cfg.validate()?;
            if !registry.contains(&args.system) {
                registry.create(&args.system, &cfg)?;
            }
            let train = corpus(&cfg, &args.train)?;
            let dev = args.dev.as_deref().map(|d| corpus(&cfg, d)).transpose()?;
            let log_path = args.log.unwrap_or_else(|| args.out.with_extension("log.jsonl"));
            let log = pipeline::train(&registry, &cfg, &args.system, &train, dev.as_deref(), &args.out, &log_path)?;
            if let Some(last) = log.epochs.last() {
                log::info!(
                    "{}: {} epochs, final train accuracy {:.3}, kept epoch {}",
                    args.system,
                    log.epochs.len(),
                    last.train_accuracy,
                    log.best_epoch
                );
            }
        }
        Command::Score { checkpoint, corpus: dir, out } => {
            let clips = corpus(&cfg, &dir)?;
            let set = pipeline::score(&registry, &checkpoint, &clips, &out)?;
            log::info!("{}: scored {} utterances", set.system_id, set.entries.len());
        }
        Command::Fuse { out, z_norm, inputs } => {
            let fused = pipeline::fuse(&inputs, z_norm || cfg.fusion.z_norm, &out)?;
            log::info!("fused {} systems over {} utterances", inputs.len(), fused.entries.len());
        }
        Command::Eval {
            protocol,
            out,
            json,
            det_dir,
            inputs,
        } => {
            cfg.validate()?;
            let eval = pipeline::evaluate(&cfg, &inputs, &protocol)?;
            let text = eval.to_text();
            match out {
                Some(path) => pipeline::write_atomic(&path, text.as_bytes())?,
                None => print!("{text}"),
            }
            if let Some(path) = json {
                pipeline::write_atomic(&path, eval.to_json()?.as_bytes())?;
            }
            if let Some(dir) = det_dir {
                pipeline::write_det_curves(&inputs, &protocol, &dir)?;
            }
        }
        Command::Systems => {
            for name in registry.names() {
                println!("{name}");
            }
        }
        Command::Config => print!("{}", cfg.to_toml()?),
    }
    log::info!("done in {:.1} s", started.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    replayscope::runtime::retain_heap_memory();
    match run(cli).context("replayscope") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let inner = e.downcast_ref::<replayscope::Error>();
            let (category, code) = inner.map_or(("input", 3), |i| (i.category().as_str(), i.category().exit_code()));
            let detail = inner.map_or_else(|| format!("{e:#}"), ToString::to_string);
            eprintln!("error[{category}]: {}", detail.replace('\n', " "));
            ExitCode::from(code as u8)
        }
    }
}
