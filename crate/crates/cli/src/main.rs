use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fedsentry::defense::DefenseKind;
use fedsentry::scenario::{self, ScenarioConfig};
use fedsentry::seeds;
use fedsentry::zk::{self, PublicInputs, Transcript};

#[derive(Parser)]
#[command(name = "fedsentry", version, about = "Federated-learning attack/defense simulator")]
struct Cli {
    /// Echo the fully resolved config before running.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its outputs.
    Run {
        config: PathBuf,
        /// Override output_dir from the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the scenario once per defense on the same seeds.
    Compare {
        config: PathBuf,
        /// Comma-separated, e.g. none,two_stage,m_krum
        #[arg(long, value_delimiter = ',', required = true)]
        defenses: Vec<DefenseKind>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check transcripts. Several files (or a directory) are verified as a
    /// chain in round order.
    Verify {
        #[arg(required = true)]
        transcripts: Vec<PathBuf>,
        /// Scenario config supplying gamma, lambda and the field settings;
        /// defaults are used otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Seed for the Freivalds challenges.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Record per-layer gradient norms of a benign run.
    Sensitivity {
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the resolved config (defaults when no file is given).
    PrintConfig { config: Option<PathBuf> },
}

fn load(path: &Path, output: Option<PathBuf>) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(out) = output {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

fn echo(cfg: &ScenarioConfig, enabled: bool) -> Result<()> {
    if enabled {
        println!("{}", cfg.to_toml()?);
    }
    Ok(())
}

fn transcript_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        bail!("no transcript files found");
    }
    Ok(files)
}

fn verify(paths: &[PathBuf], config: Option<&Path>, gamma: Option<f64>, lambda: Option<f64>, seed: u64) -> Result<bool> {
    let base = match config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    let gamma = gamma.unwrap_or(base.defense.params.gamma);
    let lambda = lambda.unwrap_or(base.defense.params.lambda);
    let mut ts: Vec<(PathBuf, Transcript)> = transcript_files(paths)?
        .into_iter()
        .map(|f| Transcript::load(&f).map(|t| (f, t)))
        .collect::<fedsentry::Result<_>>()?;
    ts.sort_by_key(|(_, t)| t.header.round);
    let mut ok = true;
    for i in 0..ts.len() {
        let (path, t) = &ts[i];
        let prev = i.checked_sub(1).map(|j| &ts[j].1).filter(|p| p.header.round + 1 == t.header.round);
        let public = PublicInputs {
            gamma,
            lambda,
            zk: base.zk,
            round: None,
            prev,
        };
        let mut rng = seeds::stream(seed, "verify", t.header.round as u64, 0);
        match zk::verify_detection(t, &public, &mut rng) {
            Ok(v) => println!(
                "{}: accepted (round {}, {} multiplications{})",
                path.display(),
                t.header.round,
                v.mult_count.total,
                if v.marginal { ", marginal" } else { "" }
            ),
            Err(r) => {
                ok = false;
                println!("{}: REJECTED: {r}", path.display());
            }
        }
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Command::Run { config, output } => {
            let cfg = load(&config, output)?;
            echo(&cfg, cli.print_config)?;
            let res = scenario::run_scenario(&cfg)?;
            let s = &res.summary;
            println!(
                "{}: {} rounds, final accuracy {:.4}, ppv {}, success rate {}, {} transcripts verified -> {}",
                s.name,
                s.rounds,
                s.final_accuracy,
                fmt_opt(s.ppv),
                fmt_opt(s.success_rate),
                s.transcripts_verified,
                res.output_dir.as_deref().unwrap_or(Path::new("")).display()
            );
        }
        Command::Compare { config, defenses, output } => {
            let cfg = load(&config, output)?;
            echo(&cfg, cli.print_config)?;
            let (rows, path) = scenario::compare_defenses(&cfg, &defenses)?;
            println!("{:<10} {:>9} {:>9} {:>9}", "defense", "accuracy", "ppv", "success");
            for r in rows {
                println!(
                    "{:<10} {:>9.4} {:>9} {:>9}",
                    r.defense.to_string(),
                    r.final_accuracy,
                    fmt_opt(r.ppv),
                    fmt_opt(r.success_rate)
                );
            }
            println!("-> {}", path.join("comparison.csv").display());
        }
        Command::Verify {
            transcripts,
            config,
            gamma,
            lambda,
            seed,
        } => return verify(&transcripts, config.as_deref(), gamma, lambda, seed),
        Command::Sensitivity { config, output } => {
            let cfg = load(&config, output)?;
            echo(&cfg, cli.print_config)?;
            let (s, dir) = scenario::run_sensitivity(&cfg)?;
            println!(
                "importance layer above the median layer norm in {}/{} pairs ({:.3}) -> {}",
                s.above_median,
                s.pairs,
                s.fraction,
                dir.display()
            );
        }
        Command::PrintConfig { config } => {
            let cfg = match config {
                Some(p) => ScenarioConfig::load(&p)?,
                None => ScenarioConfig::default().resolved()?,
            };
            println!("{}", cfg.to_toml()?);
        }
    }
    Ok(true)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
