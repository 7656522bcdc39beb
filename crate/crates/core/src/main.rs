use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semguard::harness::{
    emit_report, run_detection, run_hitl, summarize_dir, train_codec, write_hitl_outputs, ExperimentConfig,
    ExperimentKind, HarnessError, Stage, Summary,
};
use semguard::nncore::Checkpoint;
use semguard::vae::write_history_csv;

#[derive(Parser)]
#[command(name = "semguard", version, about = "Semantic-error detection and correction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the semantic codec and save its checkpoint.
    TrainVae {
        #[arg(long)]
        config: PathBuf,
    },
    /// Feature-change or channel-change detection.
    Detect {
        #[arg(long)]
        config: PathBuf,
    },
    /// Adversarial (FGSM) detection.
    Attack {
        #[arg(long)]
        config: PathBuf,
    },
    /// Human-in-the-loop RL correction loop.
    Hitl {
        #[arg(long)]
        config: PathBuf,
    },
    /// Summarize an output directory.
    Report {
        #[arg(long = "in")]
        dir: PathBuf,
    },
}

fn save(ckpt: &Checkpoint, path: &Path) -> Result<(), HarnessError> {
    ckpt.save(path).map_err(|e| HarnessError::Stage { stage: Stage::Report, source: Box::new(e) })
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_owned(), source }
}

fn load(path: &Path, allowed: &[ExperimentKind], command: &str) -> Result<ExperimentConfig, HarnessError> {
    let cfg = ExperimentConfig::load(path)?;
    if !allowed.is_empty() && !allowed.contains(&cfg.kind) {
        return Err(HarnessError::Config(format!("`{command}` cannot run a {} experiment", cfg.kind.name())));
    }
    Ok(cfg)
}

fn detect(path: &Path, allowed: &[ExperimentKind], command: &str) -> Result<(), HarnessError> {
    let cfg = load(path, allowed, command)?;
    let dir = cfg.output_dir_or_default();
    let run = run_detection(&cfg)?;
    emit_report(&run.report, &dir)?;
    save(&run.model.to_checkpoint(), &dir.join("vae.sgnn"))?;
    save(&run.gp.to_checkpoint(), &dir.join("gp.sgnn"))?;
    let sidecar = dir.join("gp.json");
    let text = serde_json::to_string_pretty(&run.gp.sidecar(Some(run.report.threshold))).expect("plain data");
    fs::write(&sidecar, text + "\n").map_err(io(&sidecar))?;
    let s = Summary::of(&run.report);
    let f = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "{} seed {}: auc {} recall {} fpr {} -> {}",
        cfg.kind.name(),
        cfg.seed,
        f(s.auc),
        f(s.recall),
        f(s.false_positive_rate),
        dir.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::TrainVae { config } => {
            let cfg = load(&config, &[], "train-vae")?;
            let dir = cfg.output_dir_or_default();
            let (model, history) = train_codec(&cfg)?;
            fs::create_dir_all(&dir).map_err(io(&dir))?;
            save(&model.to_checkpoint(), &dir.join("vae.sgnn"))?;
            let path = dir.join("train_history.csv");
            let file = fs::File::create(&path).map_err(io(&path))?;
            write_history_csv(&history, std::io::BufWriter::new(file)).map_err(io(&path))?;
            if let Some(last) = history.last() {
                println!("trained {} epochs, final loss {:.3} -> {}", history.len(), last.total, dir.display());
            }
            Ok(())
        }
        Command::Detect { config } => {
            detect(&config, &[ExperimentKind::FeatureChange, ExperimentKind::ChannelChange], "detect")
        }
        Command::Attack { config } => detect(&config, &[ExperimentKind::Adversarial], "attack"),
        Command::Hitl { config } => {
            let cfg = load(&config, &[ExperimentKind::HitlRl], "hitl")?;
            let dir = cfg.output_dir_or_default();
            let report = run_hitl(&cfg, Some(&dir))?;
            write_hitl_outputs(&report, &dir)?;
            let a = report.history.final_greedy;
            println!(
                "reward first 10: {:.3}, last 10: {:.3}, greedy action {} (include_even={}) -> {}",
                report.first_window_mean(),
                report.last_window_mean(),
                a.index(),
                a.include_even(),
                dir.display()
            );
            Ok(())
        }
        Command::Report { dir } => {
            if !dir.is_dir() {
                return Err(HarnessError::Config(format!("{} is not a directory", dir.display())));
            }
            print!("{}", summarize_dir(&dir)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
