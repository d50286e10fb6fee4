use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use closure_uq::datagen::SplitLabel;
use closure_uq::error::{Error, Result};
use closure_uq::harness::{self, ExperimentConfig, Method, Run, Scale};

#[derive(Debug, Parser)]
#[command(name = "closure-uq", version, about = "Closure surrogate training and uncertainty evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Method to run; all configured methods when omitted.
    #[arg(long)]
    method: Option<String>,
    /// Split to run (FULL, D_GE_0, D_LT_0); all configured splits when omitted.
    #[arg(long)]
    split: Option<String>,
    /// Size preset, overriding the config.
    #[arg(long, value_enum)]
    scale: Option<Scale>,
    /// Global seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample, label and split the closure data.
    GenData(Common),
    /// Train one or all methods.
    Train(Common),
    /// Score trained methods on the evaluation grid.
    Evaluate(Common),
    /// Build comparison tables and sample exports.
    Report(Common),
    /// Run every stage in order.
    All(Common),
}

fn parse_split(s: &str) -> Result<SplitLabel> {
    SplitLabel::ALL
        .into_iter()
        .find(|l| l.label().eq_ignore_ascii_case(s) || l.slug().eq_ignore_ascii_case(s))
        .ok_or_else(|| Error::Config(format!("unknown split {s:?}; expected FULL, D_GE_0 or D_LT_0")))
}

fn setup(c: &Common) -> Result<(Run, Vec<Method>, Vec<SplitLabel>)> {
    let cfg = ExperimentConfig::load(&c.config, c.scale, c.seed)?;
    if cfg.scale == Scale::Paper {
        eprintln!("warning: the paper preset trains on the full-size sets and can take many hours");
    }
    let methods = match &c.method {
        Some(m) => vec![m.parse::<Method>()?],
        None => cfg.methods.clone(),
    };
    let splits = match &c.split {
        Some(s) => vec![parse_split(s)?],
        None => cfg.splits.clone(),
    };
    Ok((Run::new(cfg), methods, splits))
}

fn each(run: &Run, verb: &str, methods: &[Method], splits: &[SplitLabel], f: fn(&Run, Method, SplitLabel) -> Result<()>) -> Result<()> {
    for &split in splits {
        for &method in methods {
            let stage = format!("{verb}/{}/{}", split.slug(), method.slug());
            let start = std::time::Instant::now();
            harness::timed(run, &stage, || f(run, method, split))?;
            eprintln!("{stage}: {:.1} s", start.elapsed().as_secs_f64());
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let (run, _, _) = setup(&c)?;
            harness::timed(&run, "gen-data", || harness::gen_data(&run))
        }
        Command::Train(c) => {
            let (run, methods, splits) = setup(&c)?;
            each(&run, "train", &methods, &splits, harness::train)
        }
        Command::Evaluate(c) => {
            let (run, methods, splits) = setup(&c)?;
            each(&run, "evaluate", &methods, &splits, |r, m, s| harness::evaluate(r, m, s).map(drop))
        }
        Command::Report(c) => {
            let (run, _, _) = setup(&c)?;
            let out = harness::timed(&run, "report", || harness::report(&run))?;
            for (split, method) in &out.missing {
                eprintln!("warning: no results for {} on {split}", method.label());
            }
            for t in &out.tables {
                println!("{}", t.display());
            }
            Ok(())
        }
        Command::All(c) => {
            let (mut run, methods, splits) = setup(&c)?;
            run.cfg.methods = methods;
            run.cfg.splits = splits;
            harness::run_all(&run).map(drop)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
