use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use calm_bench::ablation::Suite;
use calm_bench::config::{ExperimentConfig, Method};
use calm_bench::error::{BenchError, Result, StageContext};
use calm_bench::pipeline::{self, Workspace, CONFIG_FILE};

/// Desk-scale model-merging benchmark.
///
/// Configuration is read from --config, else from config.toml in the
/// working directory, else the built-in defaults; --set overrides apply last.
#[derive(Debug, Parser)]
#[command(name = "calm", version)]
struct Cli {
    /// Working directory holding every artifact.
    #[arg(long, env = "CALM_WORKDIR", default_value = ".", global = true)]
    workdir: PathBuf,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Configuration override `dotted.key=value`, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Shorthand for --set seed=N.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the task family and write the resolved configuration.
    GenTasks,
    /// Train the shared model on the pooled training sets.
    Pretrain,
    /// Fine-tune one model per task.
    Finetune,
    /// Score the unlabeled pools and write the credible sets.
    Sample,
    /// Merge the fine-tuned models.
    Merge {
        /// avg, ta, ties or calm; defaults to the configured method.
        #[arg(long)]
        method: Option<String>,
    },
    /// Evaluate a merged model and write its report.
    Eval {
        #[arg(long)]
        method: Option<String>,
    },
    /// Run one ablation sweep.
    Ablate {
        /// sampling_rate, strategy, order, reg_coef, lr, components, objective or num_sequential.
        suite: String,
    },
    /// Summarize every merged model present in the working directory.
    Report,
    /// Every stage in order for the configured method.
    Run,
    /// Print the resolved configuration.
    ShowConfig,
}

fn parse_method(s: &str) -> Result<Method> {
    Method::ALL
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| BenchError::Config(format!("unknown method {s:?}; valid: avg, ta, ties, calm")))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", p.display())))?,
        None => {
            let p = cli.workdir.join(CONFIG_FILE);
            if p.exists() {
                std::fs::read_to_string(&p)?
            } else {
                String::new()
            }
        }
    };
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    ExperimentConfig::from_toml_with_overrides(&text, &overrides)
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    let method = |m: &Option<String>| match m {
        Some(s) => parse_method(s),
        None => Ok(config.method),
    };
    let ws = Workspace::new(cli.workdir.clone(), config.clone())?;
    match &cli.command {
        Command::GenTasks => pipeline::gen_tasks(&ws).stage("gen-tasks"),
        Command::Pretrain => pipeline::pretrain(&ws).stage("pretrain"),
        Command::Finetune => pipeline::finetune(&ws).stage("finetune"),
        Command::Sample => pipeline::sample(&ws).stage("sample"),
        Command::Merge { method: m } => pipeline::merge(&ws, method(m)?).stage("merge"),
        Command::Eval { method: m } => {
            let bundle = pipeline::eval(&ws, method(m)?).stage("eval")?;
            print!("{}", bundle.summary());
            Ok(())
        }
        Command::Ablate { suite } => {
            let suite: Suite = suite.parse()?;
            let bundle = pipeline::ablate(&ws, suite).stage("ablate")?;
            for t in &bundle.tables {
                println!("{}:\n{}", t.name, t.to_csv());
            }
            Ok(())
        }
        Command::Report => {
            let bundle = pipeline::summary(&ws).stage("report")?;
            for t in &bundle.tables {
                println!("{}", t.to_csv());
            }
            Ok(())
        }
        Command::Run => {
            let bundle = pipeline::run_all(&ws)?;
            print!("{}", bundle.summary());
            Ok(())
        }
        Command::ShowConfig => {
            print!("{}", config.to_toml()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Help and version are successes; usage errors count as configuration errors.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
