//! Command-line front end for the motion attention model.

pub mod config;
pub mod export;
pub mod gradsuite;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use motion_attn::checkpoint::load_model;
use motion_attn::count::{assumptions, count_params, full_scale};
use motion_attn::synth::{make_dataset, read_dataset, Split, Synthesizer};
use motion_attn::train::train;

use crate::config::{resolve_seed, ConfigError, RunConfig, SEED_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "motion-attn", version, about = "Temporal attention for video body-mesh regression on synthetic motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset file.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
        /// Number of sequences; defaults to the split size in the config.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and write per-epoch checkpoints and report.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training set; generated from the config when omitted.
        #[arg(long)]
        train_data: Option<PathBuf>,
        /// Validation set; generated from the config when omitted.
        #[arg(long)]
        val_data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print MPJPE, PA-MPJPE, MPVPE and ACC-ERR of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write the NSSM, attention and MoCA maps of one sequence.
    ExportMaps {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Central-difference gradient checks of every learnable path.
    GradCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// Per-module parameter counts with the counting assumptions.
    CountParams {
        #[arg(long, conflicts_with = "full_scale")]
        config: Option<PathBuf>,
        /// Count the published network shapes.
        #[arg(long)]
        full_scale: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Motion,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<motion_attn::Error> for Failure {
    fn from(e: motion_attn::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read(m) => Failure::Usage(m),
            ConfigError::Invalid(m) => Failure::Data(m),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` (program name first), runs the subcommand and returns the
/// exit code: 0 on success, 1 on usage errors, 2 on data or format errors.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    match dispatch(cli.command, env_seed.as_deref(), out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}\n\n{}", Cli::command().render_usage());
            EXIT_USAGE
        }
        Err(Failure::Data(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_DATA
        }
    }
}

fn load_config(path: &Path, flag_seed: Option<u64>, env_seed: Option<&str>) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = resolve_seed(flag_seed, env_seed)? {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn dispatch(cmd: Command, env_seed: Option<&str>, out: &mut dyn Write) -> Outcome {
    match cmd {
        Command::GenData {
            config,
            out: path,
            split,
            n,
            seed,
        } => {
            let cfg = load_config(&config, seed, env_seed)?;
            let (split, default_n) = match split {
                SplitArg::Train => (Split::Train, cfg.data.n_train),
                SplitArg::Val => (Split::Val, cfg.data.n_val),
                SplitArg::Motion => (Split::Motion, cfg.data.n_motion),
            };
            let n = n.unwrap_or(default_n);
            let summary = make_dataset(&cfg.synth_config(), n, cfg.data.seed, split, &path)?;
            writeln!(out, "wrote {} sequences ({} bytes) to {}", summary.records, summary.bytes, path.display())?;
        }
        Command::Train {
            config,
            out: dir,
            train_data,
            val_data,
            seed,
        } => {
            let cfg = load_config(&config, seed, env_seed)?;
            let model_cfg = cfg.model_config()?;
            let train_cfg = cfg.train_config();
            let synth = Synthesizer::new(&cfg.synth_config())?;
            let load = |flag: Option<PathBuf>, from_cfg: &Option<PathBuf>, split: Split, n: usize| match flag.or(from_cfg.clone()) {
                Some(p) => read_dataset(&p),
                None => synth.records(split, cfg.data.seed, n),
            };
            let train_set = load(train_data, &cfg.data.train_path, Split::Train, cfg.data.n_train)?;
            let val_set = load(val_data, &cfg.data.val_path, Split::Val, cfg.data.n_val)?;
            let motion: Vec<_> = synth
                .records(Split::Motion, cfg.data.seed, cfg.data.n_motion)?
                .iter()
                .map(|r| r.pose_sequence())
                .collect();
            let (_, report) = train(&model_cfg, &train_cfg, &train_set, &val_set, &motion, Some(&dir))?;
            writeln!(out, "initial,{}", report.initial.lines().join(","))?;
            for e in &report.epochs {
                writeln!(out, "{}", e.csv())?;
            }
            writeln!(out, "checkpoint {}", dir.join("final.mpsn").display())?;
        }
        Command::Eval { checkpoint, data } => {
            let model = load_model(&checkpoint)?;
            let records = read_dataset(&data)?;
            if records.is_empty() {
                return Err(Failure::Data(format!("{} holds no sequences", data.display())));
            }
            for line in model.evaluate(&records, 32)?.lines() {
                writeln!(out, "{line}")?;
            }
        }
        Command::ExportMaps {
            checkpoint,
            data,
            index,
            out: dir,
        } => {
            let model = load_model(&checkpoint)?;
            let records = read_dataset(&data)?;
            let record = records.get(index).ok_or_else(|| {
                Failure::Data(format!("sequence index {index} out of range ({} sequences)", records.len()))
            })?;
            let (nssm, attention, moca) = model.maps(&record.features)?;
            let written = export::write_maps(
                &dir,
                &[("nssm", nssm.values()), ("attention", attention.values()), ("moca", moca.values())],
            )?;
            for p in written {
                writeln!(out, "{}", p.display())?;
            }
        }
        Command::GradCheck { config, seeds, h, tol } => {
            let cfg = match config {
                Some(p) => load_config(&p, None, None)?,
                None => RunConfig::default(),
            };
            let model_cfg = cfg.model_config()?;
            let k = model_cfg.hafi.as_ref().map_or(3, |h| h.frames_per_group);
            let seeds: Vec<u64> = (0..seeds).collect();
            let lines = gradsuite::run_suite(&seeds, model_cfg.mode, k, model_cfg.n_iter, h, tol)?;
            for l in &lines {
                writeln!(out, "{}", l.render())?;
            }
            let failed = lines.iter().filter(|l| !l.pass).count();
            writeln!(out, "{} checks, {failed} failed", lines.len())?;
            if failed > 0 {
                return Err(Failure::Data(format!("{failed} gradient checks exceeded tolerance {tol}")));
            }
        }
        Command::CountParams { config, full_scale: full } => {
            let model_cfg = match (config, full) {
                (Some(p), _) => load_config(&p, None, None)?.model_config()?,
                (None, true) => full_scale(),
                (None, false) => RunConfig::default().model_config()?,
            };
            let c = count_params(&model_cfg);
            writeln!(out, "backbone,{}", c.backbone)?;
            writeln!(out, "moca,{}", c.moca)?;
            writeln!(out, "hafi,{}", c.hafi)?;
            writeln!(out, "regressor,{}", c.regressor)?;
            writeln!(out, "total,{}", c.total())?;
            writeln!(out, "discriminator,{}", c.discriminator)?;
            for a in assumptions(&model_cfg) {
                writeln!(out, "# {a}")?;
            }
        }
    }
    Ok(())
}
