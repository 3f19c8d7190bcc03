use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lojalab::harness::{
    check_conditions, estimate_loja_command, gen_teacher_data, run_experiment, ExperimentConfig, ExperimentKind,
    RawConfig,
};
use lojalab::{Error, Result};

#[derive(Parser)]
#[command(name = "lojalab", version, about = "SGD experiments on Łojasiewicz landscapes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single trajectory with per-step CSV.
    Run(Common),
    /// Monte-Carlo convergence study.
    Mc(Common),
    /// Evaluate the hypothesis checkers for the configured exponents.
    CheckConditions(Common),
    /// Estimate Łojasiewicz parameters of a catalog landscape.
    EstimateLoja(Common),
    /// Compare empirical excess values with the comparison bound.
    BoundCompare(Common),
    /// Martingale tail-bound and convergence experiment.
    MartingaleLemma(Common),
    /// Excursion frequency after a lower dropout.
    Dropout(Common),
    /// Train a network on a teacher-generated or loaded dataset.
    MlpTrain(Common),
    /// Write a teacher-generated dataset.
    GenTeacherData(Common),
}

#[derive(Args)]
struct Common {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output path prefix
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replicas: Option<usize>,
}

impl Common {
    fn raw(&self) -> Result<RawConfig> {
        let mut raw = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                RawConfig::parse(&text)?
            }
            None => RawConfig::default(),
        };
        if let Some(seed) = self.seed {
            raw.set("seed", seed.to_string())?;
        }
        if let Some(out) = &self.out {
            raw.set("out", out.to_string_lossy())?;
        }
        if let Some(m) = self.replicas {
            raw.set("replicas", m.to_string())?;
        }
        Ok(raw)
    }

    fn experiment(&self, kind: ExperimentKind) -> Result<ExperimentConfig> {
        ExperimentConfig::from_raw(&self.raw()?, Some(kind))
    }

    /// For helper commands the kind only selects defaults.
    fn helper(&self) -> Result<ExperimentConfig> {
        let raw = self.raw()?;
        let kind = (!raw.contains("kind")).then_some(ExperimentKind::Run);
        ExperimentConfig::from_raw(&raw, kind)
    }
}

fn experiment(common: &Common, kind: ExperimentKind) -> Result<bool> {
    let cfg = common.experiment(kind)?;
    let report = run_experiment(&cfg)?;
    print!("{}", report.summary.to_text());
    for f in &report.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(report.verdict_ok)
}

fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Run(c) => experiment(c, ExperimentKind::Run),
        Command::Mc(c) => experiment(c, ExperimentKind::McConvergence),
        Command::BoundCompare(c) => experiment(c, ExperimentKind::BoundCompare),
        Command::MartingaleLemma(c) => experiment(c, ExperimentKind::MartingaleLemma),
        Command::Dropout(c) => experiment(c, ExperimentKind::DropoutBound),
        Command::MlpTrain(c) => experiment(c, ExperimentKind::MlpTrain),
        Command::CheckConditions(c) => {
            let (summary, ok) = check_conditions(&c.helper()?)?;
            print!("{}", summary.to_text());
            if ok {
                Ok(true)
            } else {
                Err(Error::Hypothesis("a checker rejected the configured exponents".into()))
            }
        }
        Command::EstimateLoja(c) => {
            let (cert, path) = estimate_loja_command(&c.helper()?)?;
            print!("{}", cert.to_kv());
            eprintln!("wrote {}", path.display());
            Ok(true)
        }
        Command::GenTeacherData(c) => {
            for f in gen_teacher_data(&c.helper()?)? {
                eprintln!("wrote {}", f.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli) {
        Ok(ok) => {
            if !ok {
                eprintln!("verdict: fail");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
