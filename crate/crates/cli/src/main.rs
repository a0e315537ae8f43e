use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hetqcd::calibration::{calibrate, CalibrationOptions};
use hetqcd::config::ScenarioConfig;
use hetqcd::metrics::{tradeoff_sweep, TradeoffPoint};
use hetqcd::report::{advice, to_csv, to_svg};
use hetqcd::scenarios::Figure;

#[derive(Parser, Debug)]
#[command(name = "hetqcd", version, about = "Distributed quickest change detection: calibrated sweeps, figure reproductions and rule advice")]
struct Cli {
    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override both the ARL and EDD trial counts.
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override the step count after which a run is censored.
    #[arg(long, global = true)]
    run_cap: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Calibrate every rule at every gamma and write CSV and SVG.
    Sweep {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a canned scenario and check its expected orderings.
    Reproduce {
        #[arg(value_parser = ["fig2", "fig3", "fig4", "fig5"])]
        figure: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Print divergences, the alarm-to-group map, xi_M and recommended rules.
    Advise {
        config: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        xi_samples: u64,
    },
    /// Find the threshold giving ARL = gamma for one rule of a config.
    Calibrate {
        config: PathBuf,
        /// Zero-based index into the config's rule list.
        #[arg(long)]
        rule: usize,
        #[arg(long)]
        gamma: f64,
    },
}

impl Cli {
    fn apply(&self, mut cfg: ScenarioConfig) -> Result<ScenarioConfig> {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(t) = self.trials {
            cfg.trials.arl = t;
            cfg.trials.edd = t;
        }
        if let Some(cap) = self.run_cap {
            cfg.run_cap = cap;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load(path: &Path) -> Result<ScenarioConfig> {
    Ok(ScenarioConfig::load(path)?)
}

fn sweep(cfg: &ScenarioConfig) -> Result<Vec<TradeoffPoint>> {
    let net = cfg.network::<f64>()?;
    let rules = cfg.rules(&net)?;
    Ok(tradeoff_sweep(&net, &rules, &cfg.scaling(), &cfg.gamma_grid, &cfg.sweep_options()))
}

fn write_artifacts(out: &Path, stem: &str, title: &str, points: &[TradeoffPoint]) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let csv = out.join(format!("{stem}.csv"));
    let svg = out.join(format!("{stem}.svg"));
    fs::write(&csv, to_csv(points)).with_context(|| format!("writing {}", csv.display()))?;
    fs::write(&svg, to_svg(points, title)).with_context(|| format!("writing {}", svg.display()))?;
    println!("wrote {} and {}", csv.display(), svg.display());
    for p in points.iter().filter(|p| !p.valid) {
        println!(
            "flagged: {} at gamma={}: {}",
            p.rule,
            p.gamma_target,
            p.error.as_deref().unwrap_or("calibration did not converge or censoring too high")
        );
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    match &cli.command {
        Command::Sweep { config, out } => {
            let cfg = cli.apply(load(config)?)?;
            let stem = config.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
            let points = sweep(&cfg)?;
            write_artifacts(out, stem, stem, &points)?;
        }
        Command::Reproduce { figure, out } => {
            let fig: Figure = figure.parse()?;
            let cfg = cli.apply(fig.config())?;
            let points = sweep(&cfg)?;
            write_artifacts(out, fig.tag(), fig.title(), &points)?;
            let verdict = fig.verdict(&points).render();
            let path = out.join(format!("{}_verdict.txt", fig.tag()));
            fs::write(&path, &verdict).with_context(|| format!("writing {}", path.display()))?;
            print!("{verdict}");
        }
        Command::Advise { config, xi_samples } => {
            let cfg = cli.apply(load(config)?)?;
            let net = cfg.network::<f64>()?;
            print!("{}", advice(&net, *xi_samples, cfg.seed)?);
        }
        Command::Calibrate { config, rule, gamma } => {
            let cfg = cli.apply(load(config)?)?;
            let net = cfg.network::<f64>()?;
            let rules = cfg.rules(&net)?;
            let Some(named) = rules.get(*rule) else {
                bail!("--rule {rule} is out of range: the config has {} rules", rules.len());
            };
            let opts = CalibrationOptions {
                tolerance: cfg.tolerance,
                trials: cfg.trials.arl,
                run_cap: cfg.run_cap,
                seed: cfg.seed,
                ..CalibrationOptions::default()
            };
            let r = calibrate(&net, &named.rule, &cfg.scaling(), *gamma, &opts)?;
            println!("rule: {}", named.name);
            println!("gamma: {gamma}");
            println!("h_star: {}", r.h_star);
            println!("arl: {} +/- {}", r.arl.mean, r.arl.ci_halfwidth);
            println!("log_arl - log_gamma: {}", r.achieved_log_arl - r.target_log_gamma);
            println!("iterations: {}", r.iterations);
            println!("converged: {}", r.converged);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
