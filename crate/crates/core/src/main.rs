use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use repvar::config::AnalysisConfig;
use repvar::dataset::{load_frequency_table, load_store, DatasetError, FrequencyTable};
use repvar::output::emit_outputs;
use repvar::pipeline::{run_analysis, run_comparison, PipelineError};
use repvar::synth::{load_spec, write_synthetic, SynthError};

const EXIT_VALIDATION: u8 = 2;
const EXIT_DEGENERATE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "repvar",
    version,
    about = "Variability-vs-magnitude scaling analysis of hidden-state dumps"
)]
struct Cli {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze one or more stores.
    Analyze {
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        /// Tab-separated `magnitude<TAB>count` table.
        #[arg(long)]
        freq: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analyze two stores and compare their exponents layer by layer.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        freq: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic store with known exponents.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn validation(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            error: error.into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = if e.is_degenerate() {
            EXIT_DEGENERATE
        } else {
            EXIT_VALIDATION
        };
        Self {
            code,
            error: e.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

fn dataset_failure(path: &Path, e: DatasetError) -> Failure {
    let code = if matches!(e, DatasetError::Io { .. }) {
        1
    } else {
        EXIT_VALIDATION
    };
    Failure {
        code,
        error: anyhow::Error::new(e).context(format!("loading {}", path.display())),
    }
}

fn load_freq(path: Option<&Path>, magnitudes: &[u64]) -> Result<Option<FrequencyTable>, Failure> {
    path.map(|p| load_frequency_table(p, magnitudes).map_err(|e| dataset_failure(p, e)))
        .transpose()
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Analyze {
            manifests,
            config,
            freq,
            out,
        } => {
            let config = AnalysisConfig::load(&config).map_err(Failure::validation)?;
            let stores = manifests
                .iter()
                .map(|p| load_store(p).map_err(|e| dataset_failure(p, e)))
                .collect::<Result<Vec<_>, _>>()?;
            let freq = load_freq(freq.as_deref(), stores[0].magnitudes())?;
            let report = run_analysis(&stores, &config, freq.as_ref())?;
            let written = emit_outputs(&report, &out).context("writing outputs")?;
            eprintln!(
                "wrote {} files to {}",
                written.files.len() + 1,
                out.display()
            );
        }
        Command::Compare {
            a,
            b,
            config,
            freq,
            out,
        } => {
            let config = AnalysisConfig::load(&config).map_err(Failure::validation)?;
            let store_a = load_store(&a).map_err(|e| dataset_failure(&a, e))?;
            let store_b = load_store(&b).map_err(|e| dataset_failure(&b, e))?;
            let freq = load_freq(freq.as_deref(), store_a.magnitudes())?;
            let report = run_comparison(&store_a, &store_b, &config, freq.as_ref())?;
            let written = emit_outputs(&report, &out).context("writing outputs")?;
            eprintln!(
                "wrote {} files to {}",
                written.files.len() + 1,
                out.display()
            );
        }
        Command::Synth { spec, out } => {
            let spec = load_spec(&spec).map_err(|e| match e {
                SynthError::Io { .. } => Failure::from(anyhow::Error::new(e)),
                other => Failure::validation(other),
            })?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let written = write_synthetic(&spec, &out).context("writing synthetic store")?;
            eprintln!("wrote {}", written.manifest.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
