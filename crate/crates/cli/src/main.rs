//! `patchgen`: segment, tokenize, generate, assemble and score meshes.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 empty result,
//! 3 internal invariant violation.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{GeomFlags, PipelineConfig};

/// An error carrying its exit code.
#[derive(Debug)]
pub struct Coded {
    code: u8,
    err: anyhow::Error,
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.err)
    }
}

impl std::error::Error for Coded {}

impl Coded {
    pub fn empty(msg: &str) -> anyhow::Error {
        Coded {
            code: 2,
            err: anyhow::anyhow!(msg.to_string()),
        }
        .into()
    }

    pub fn invariant<E: Into<anyhow::Error>>(e: E) -> anyhow::Error {
        Coded { code: 3, err: e.into() }.into()
    }

    /// Order and assembly contract violations are internal errors; anything
    /// else keeps the default code.
    pub fn classify(e: patchgen::Error) -> anyhow::Error {
        match e {
            patchgen::Error::OrderMismatch(_) => Self::invariant(e),
            other => other.into(),
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| c.downcast_ref::<Coded>().map(|c| c.code))
        .unwrap_or(1)
}

#[derive(Parser)]
#[command(name = "patchgen", version, about = "Patch-wise mesh segmentation, tokenization, generation and assembly")]
struct Cli {
    /// Reseeds segmentation, augmentation, model init and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean, filter and augment every OBJ in a directory.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        no_augment: bool,
    },
    /// Normalize and segment one mesh into ordered patches.
    Segment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        geom: GeomFlags,
    },
    /// Ground-truth token files and assembly plans for every patch.
    Tokenize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        geom: GeomFlags,
    },
    /// Decode one token file into an OBJ.
    Detokenize {
        #[arg(long)]
        tokens: PathBuf,
        /// Plans written by `tokenize`; without it the unit frame is used.
        #[arg(long)]
        plans: Option<PathBuf>,
        /// Which plan (generation step) the tokens belong to.
        #[arg(long, default_value_t = 0)]
        step: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Glue token files back into one mesh following saved plans.
    Assemble {
        #[arg(long)]
        plans: PathBuf,
        #[arg(long)]
        tokens_dir: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the toy generator.
    TrainToy {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// One mesh, re-segmented every epoch.
        #[arg(long)]
        single_mesh: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[command(flatten)]
        geom: GeomFlags,
    },
    /// Sample every patch of a mesh's segmentation from a checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        max_tokens: Option<usize>,
        #[arg(long)]
        no_kv_cache: bool,
        #[command(flatten)]
        geom: GeomFlags,
    },
    /// Score a generated mesh (or directory of meshes) against references.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Report directory; a single pair prints to stdout without it.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        geom: GeomFlags,
    },
    /// Segment, produce tokens, assemble and evaluate end to end.
    Pipeline {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Use the input's own tokens instead of a model.
        #[arg(long)]
        ground_truth_tokens: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        no_eval: bool,
        #[arg(long)]
        temperature: Option<f64>,
        #[command(flatten)]
        geom: GeomFlags,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    cfg.apply_seed(cli.seed);
    let geom = match &cli.cmd {
        Command::Segment { geom, .. }
        | Command::Tokenize { geom, .. }
        | Command::TrainToy { geom, .. }
        | Command::Generate { geom, .. }
        | Command::Eval { geom, .. }
        | Command::Pipeline { geom, .. } => Some(geom),
        _ => None,
    };
    if let Some(g) = geom {
        cfg.apply_geom(g);
    }
    cfg.validate()?;
    match cli.cmd {
        Command::Preprocess { input, output, no_augment } => {
            if no_augment {
                cfg.preprocess.augment = false;
            }
            commands::preprocess(&cfg, &input, &output)
        }
        Command::Segment { input, output, .. } => commands::segment_cmd(&cfg, &input, &output),
        Command::Tokenize { input, output, .. } => commands::tokenize(&cfg, &input, &output),
        Command::Detokenize { tokens, plans, step, output } => commands::detokenize(&tokens, plans.as_deref(), step, &output),
        Command::Assemble { plans, tokens_dir, output } => commands::assemble_cmd(&plans, &tokens_dir, &output),
        Command::TrainToy {
            input,
            output,
            single_mesh,
            epochs,
            lr,
            ..
        } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(lr) = lr {
                cfg.train.optim.lr_max = lr;
                cfg.train.optim.lr_min = cfg.train.optim.lr_min.min(lr);
            }
            commands::train_toy(&cfg, &input, single_mesh, &output)
        }
        Command::Generate {
            checkpoint,
            input,
            output,
            temperature,
            max_tokens,
            no_kv_cache,
            ..
        } => {
            if let Some(t) = temperature {
                cfg.generation.temperature = t;
            }
            if let Some(m) = max_tokens {
                cfg.generation.max_tokens = m;
            }
            if no_kv_cache {
                cfg.generation.use_kv_cache = false;
            }
            commands::generate_cmd(&cfg, &checkpoint, &input, &output)
        }
        Command::Eval {
            generated,
            reference,
            output,
            ..
        } => commands::eval(&cfg, &generated, &reference, output.as_deref()),
        Command::Pipeline {
            input,
            output,
            ground_truth_tokens,
            checkpoint,
            no_eval,
            temperature,
            ..
        } => {
            if let Some(t) = temperature {
                cfg.generation.temperature = t;
            }
            commands::pipeline(&cfg, &input, &output, ground_truth_tokens, checkpoint.as_deref(), !no_eval)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
