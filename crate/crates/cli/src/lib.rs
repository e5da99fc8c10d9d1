//! Command-line orchestration of the tidewatch pipeline.

pub mod config;
pub mod stages;
pub mod store;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{InputKind, PipelineConfig, StageOptions};

/// Exit status for command-line misuse and unreadable configuration.
pub const EXIT_USAGE: i32 = 1;
/// Exit status when a pipeline stage fails.
pub const EXIT_STAGE: i32 = 2;

#[derive(Debug)]
pub struct StageError {
    pub stage: String,
    pub message: String,
    pub usage: bool,
}

impl StageError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { stage: "config".into(), message: message.into(), usage: true }
    }

    pub fn stage(stage: &str, message: impl Into<String>) -> Self {
        Self { stage: stage.into(), message: message.into(), usage: false }
    }

    /// An artifact of an earlier stage is absent.
    pub fn missing(stage: &str, needed: &str, path: &std::path::Path) -> Self {
        Self::stage(stage, format!("{} not found; run `tidewatch {needed}` first", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        if self.usage {
            EXIT_USAGE
        } else {
            EXIT_STAGE
        }
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)
    }
}

impl std::error::Error for StageError {}

/// Tags library errors with the stage that raised them.
pub trait StageContext<T> {
    fn stage(self, stage: &str) -> Result<T, StageError>;
}

impl<T, E: fmt::Display> StageContext<T> for Result<T, E> {
    fn stage(self, stage: &str) -> Result<T, StageError> {
        self.map_err(|e| StageError::stage(stage, e.to_string()))
    }
}

#[derive(Parser, Debug)]
#[command(name = "tidewatch", version, about = "Underwater acoustic vessel classification and novelty detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML configuration file; defaults apply to everything it omits.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a labelled synthetic corpus and its manifest.
    Synth(Common),
    /// Split, curate, segment and transform the corpus; fit the normalizer.
    Preprocess(Common),
    /// Train the spectrogram denoiser.
    TrainDenoiser(Common),
    /// Train the vessel classifier.
    TrainClassifier(Common),
    /// Train the autoencoder and calibrate its novelty threshold.
    TrainDetector(Common),
    /// Score all trained models on the test split.
    Evaluate(Common),
    /// Classify and screen every segment of a recording.
    Detect {
        #[command(flatten)]
        common: Common,
        /// WAV file to analyse.
        input: PathBuf,
    },
}

impl Common {
    pub fn resolve(&self) -> Result<PipelineConfig, StageError> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: Cli) -> Result<(), StageError> {
    match cli.command {
        Command::Synth(c) => stages::synth(&c.resolve()?),
        Command::Preprocess(c) => stages::preprocess(&c.resolve()?),
        Command::TrainDenoiser(c) => stages::train_denoiser(&c.resolve()?),
        Command::TrainClassifier(c) => stages::train_classifier(&c.resolve()?),
        Command::TrainDetector(c) => stages::train_detector(&c.resolve()?),
        Command::Evaluate(c) => stages::evaluate(&c.resolve()?).map(|_| ()),
        Command::Detect { common, input } => {
            let lines = stages::detect(&common.resolve()?, &input)?;
            for l in lines {
                println!("{l}");
            }
            Ok(())
        }
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
