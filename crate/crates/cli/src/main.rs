use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use msrb::config::{Config, Overrides};
use msrb::experiments::{manifest, Runner, StageOutcome, Table};

#[derive(Parser)]
#[command(name = "msrb", version, about = "Multiscale reduced basis experiments for the random semiclassical Schrödinger equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write its CSV tables.
    Run(Common),
    /// Build (or reuse) the offline snapshot cache.
    BasisBuild {
        #[command(flatten)]
        common: Common,
        /// Overwrite a cache built for a different configuration.
        #[arg(long)]
        force: bool,
    },
    /// Compress the cached snapshots by POD.
    Pod {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        force: bool,
    },
    /// Evolve the online samples with the cached reduced bases.
    Solve(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    config: PathBuf,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    coarse_cells: Option<usize>,
    #[arg(long)]
    fine_cells: Option<usize>,
    /// Final time.
    #[arg(long = "T")]
    t_final: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Online sample count.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    offline_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> anyhow::Result<Config> {
        let mut cfg = Config::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        cfg.apply(&Overrides {
            epsilon: self.epsilon,
            sigma: self.sigma,
            beta: self.beta,
            m: self.m,
            coarse_cells: self.coarse_cells,
            fine_cells: self.fine_cells,
            t_final: self.t_final,
            dt: self.dt,
            samples: self.samples,
            offline_samples: self.offline_samples,
            seed: self.seed,
            out: self.out.clone(),
        })?;
        Ok(cfg)
    }
}

fn write_tables(cfg: &Config, tables: &[Table]) -> anyhow::Result<()> {
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let stamp = cfg.output.timestamp.then(|| {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0).to_string()
    });
    let line = manifest(cfg, stamp);
    for t in tables {
        let path = dir.join(format!("{}.csv", t.name));
        std::fs::write(&path, t.to_csv(&line)).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cache_dir(cfg: &Config) -> PathBuf {
    Path::new(&cfg.output.dir).join("cache")
}

fn report(stage: &str, outcome: StageOutcome) {
    match outcome {
        StageOutcome::Hit => println!("{stage}: cache hit"),
        StageOutcome::Built => println!("{stage}: built"),
    }
}

fn main_inner(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(c) => {
            let cfg = c.load()?;
            let tables = Runner::with_cache(&cfg, cache_dir(&cfg)).run()?;
            write_tables(&cfg, &tables)
        }
        Command::BasisBuild { common, force } => {
            let cfg = common.load()?;
            report("basis-build", Runner::with_cache(&cfg, cache_dir(&cfg)).basis_build(force)?);
            Ok(())
        }
        Command::Pod { common, force } => {
            let cfg = common.load()?;
            let (outcome, table) = Runner::with_cache(&cfg, cache_dir(&cfg)).pod(force)?;
            report("pod", outcome);
            let mk = table.column("m_k").unwrap_or_default();
            if let (Some(lo), Some(hi)) = (
                mk.iter().cloned().reduce(f64::min),
                mk.iter().cloned().reduce(f64::max),
            ) {
                println!("modes per node: min {lo}, max {hi}");
            }
            write_tables(&cfg, &[table])
        }
        Command::Solve(c) => {
            let cfg = c.load()?;
            let tables = Runner::with_cache(&cfg, cache_dir(&cfg)).solve()?;
            write_tables(&cfg, &tables)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
