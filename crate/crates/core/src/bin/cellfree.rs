//! Command-line front end of the experiment harness.
//!
//! Exit status: 0 on success, 2 for configuration errors, 3 for runtime
//! failures.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use cellfree::coplearn::PhiSampling;
use cellfree::harness::{
    self, CheckpointMode, ExperimentSpec, MethodSpec, ModelStore,
};
use cellfree::Error;

#[derive(Parser)]
#[command(name = "cellfree", version, about = "Cell-free massive MIMO power-control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Write the test sets of every (M_test, φ) pair.
    GenData,
    /// Train every learned method at every M_train and SNR and save checkpoints.
    Train,
    /// Evaluate saved checkpoints and baselines at the first sweep point.
    Eval,
    /// Sum-rate versus SNR.
    SweepSnr,
    /// Sum-rate versus error ratio φ.
    SweepPhi,
    /// Learned-to-CSGD sum-rate ratios over M_train × M_test.
    Scalability,
    /// CSGD iteration trace on one test sample.
    CsgdTrace {
        /// Test sample index.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
}

#[derive(Args)]
struct Overrides {
    /// TOML experiment file. Command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_delimiter = ',')]
    m_train: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',')]
    m_test: Option<Vec<usize>>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    snr_db: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    phi: Option<Vec<f64>>,
    /// `fixed:<v>` or `uniform`.
    #[arg(long, global = true)]
    phi_policy: Option<PhiSampling>,
    /// Test samples per sweep point.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Comma-separated, e.g. `CL,CL@fixed:0,NCL,SCL,CSGD,EP`.
    #[arg(long, global = true, value_delimiter = ',')]
    method: Option<Vec<MethodSpec>>,
    /// Training epochs of learned methods.
    #[arg(long, global = true)]
    epochs: Option<usize>,
}

impl Overrides {
    fn spec(&self) -> cellfree::Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(path) => ExperimentSpec::load(path)?,
            None => ExperimentSpec::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:expr),*) => {
                $(if let Some(v) = &self.$field { $target = v.clone(); })*
            };
        }
        set!(seed => spec.seed, out => spec.out, m_train => spec.m_train, m_test => spec.m_test,
             k => spec.k, snr_db => spec.snr_db, phi => spec.phi, phi_policy => spec.phi_policy,
             samples => spec.n_test_samples, method => spec.methods, epochs => spec.training.epochs);
        spec.validate()?;
        Ok(spec)
    }
}

fn run(cli: &Cli) -> cellfree::Result<()> {
    let spec = cli.overrides.spec()?;
    let start = Instant::now();
    let out = spec.out.clone();
    let mode = match cli.command {
        Command::Eval => CheckpointMode::LoadOnly,
        _ => CheckpointMode::LoadOrTrain,
    };
    let mut store = ModelStore::for_spec(&spec, mode);
    let stamp = format!("config_hash={} seed={}", spec.config_hash(), spec.seed);
    match &cli.command {
        Command::ShowConfig => print!("{}", spec.to_toml()?),
        Command::GenData => {
            for m in harness::generate_dataset(&spec)? {
                println!("m={} k={} phi={} n={} sha256={} {stamp}", m.m, m.k, m.phi, m.n_samples, m.sha256);
            }
        }
        Command::Train => {
            for key in harness::train_models(&spec, &mut store)? {
                println!("{key} {stamp}");
            }
            for r in &store.trained {
                println!("trained {} in {:.1}s, validation {:?}", r.key, r.wall_time_s, r.final_validation);
            }
        }
        Command::Eval | Command::SweepSnr | Command::SweepPhi => {
            let (stem, result) = match cli.command {
                Command::SweepPhi => ("phi_sweep", harness::run_error_ratio_sweep(&spec, &mut store)?),
                Command::SweepSnr => ("snr_sweep", harness::run_snr_sweep(&spec, &mut store)?),
                _ => {
                    let mut point = spec.clone();
                    point.snr_db.truncate(1);
                    point.phi.truncate(1);
                    ("eval", harness::run_snr_sweep(&point, &mut store)?)
                }
            };
            let csv = result.to_csv();
            let path = harness::write_outputs(&out, stem, &csv, &spec, &result, &store, start.elapsed().as_secs_f64())?;
            print!("{csv}");
            eprintln!("wrote {}", path.display());
        }
        Command::Scalability => {
            let table = harness::run_scalability_table(&spec, &mut store)?;
            let csv = table.result.to_csv();
            let secs = start.elapsed().as_secs_f64();
            harness::write_outputs(&out, "scalability", &csv, &spec, &table, &store, secs)?;
            let matrix = table.to_csv();
            let path = out.join("scalability_table.csv");
            std::fs::write(&path, &matrix).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            print!("{matrix}");
            eprintln!("wrote {}", path.display());
        }
        Command::CsgdTrace { index } => {
            let csv = harness::csgd_trace(&spec, *index)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            let path = out.join("csgd_trace.csv");
            std::fs::write(&path, &csv).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            eprintln!("wrote {} ({stamp})", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
