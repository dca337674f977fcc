use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

use istn_core::harness::{
    ordering, output_paths, read_csv, reoptimization_gain, write_csv, AggregateRow, ConvergenceRow, RunRow,
};
use istn_core::{run_experiment, ExperimentConfig, ExperimentResult, Policy, Sweep};

/// Resource-management experiments for a spectrum-sharing
/// satellite-terrestrial downlink.
#[derive(Parser)]
#[command(name = "istn", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every (seed, policy) pair and write the result tables.
    Run(Common),
    /// Run along a sweep axis and report the re-optimisation gain per value.
    Sweep(Common),
    /// Check the expected policy ordering on paired seeds. Reads an existing
    /// runs.csv with --from, otherwise runs the experiment first.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        from: Option<PathBuf>,
        /// Relative tolerance under which two mean queues count as tied.
        #[arg(long, default_value_t = 1e-6)]
        tie_tol: f64,
    },
    /// Write per-iteration objective traces for one seed.
    Convergence(Common),
    /// Parse and check a config, then print its hash.
    ValidateConfig {
        #[command(flatten)]
        common: Common,
        /// Also print the config with every default filled in.
        #[arg(long)]
        print: bool,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config; missing fields take the preset's values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in config used when --config is absent: full or desk.
    #[arg(long, default_value = "full")]
    preset: String,
    /// Run this master seed only.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of fia, piawro, pia, greedy.
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<String>>,
    /// Sweep as axis:v1,v2,... with axis one of xi, ap_max_dbm, sat_max_dbm.
    #[arg(long)]
    sweep: Option<String>,
    /// Output directory; defaults to out/<name>-<hash>.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::preset(&self.preset)?,
        };
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(list) = &self.policies {
            cfg.policies = list.iter().map(|p| p.parse::<Policy>()).collect::<istn_core::Result<_>>()?;
        }
        if let Some(s) = &self.sweep {
            cfg.sweep = Some(s.parse::<Sweep>()?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out").join(format!("{}-{}", cfg.name, cfg.hash())))
    }
}

fn fmt_opt(v: Option<f64>, scale: f64) -> String {
    v.map_or("-".into(), |x| format!("{:.4}", x / scale))
}

fn print_aggregates(rows: &[AggregateRow]) {
    println!("{:>10} {:>8} {:>5} {:>6} {:>12} {:>10} {:>9} {:>6}", "value", "policy", "runs", "failed", "queue[MB]", "std[MB]", "ds_miss", "audit");
    for a in rows {
        println!(
            "{:>10} {:>8} {:>5} {:>6} {:>12} {:>10} {:>9} {:>6}",
            a.sweep_value.map_or("-".into(), |v| format!("{v}")),
            a.policy,
            a.runs,
            a.failed,
            fmt_opt(a.mean_queue_bits_mean, 8e6),
            fmt_opt(a.mean_queue_bits_std, 8e6),
            fmt_opt(a.ds_miss_rate_mean, 1.0),
            format!("{}/{}", a.audit_passed, a.runs - a.failed),
        );
    }
}

fn execute(common: &Common) -> Result<(ExperimentConfig, ExperimentResult, PathBuf)> {
    let cfg = common.config()?;
    let dir = common.out_dir(&cfg);
    log::info!("{} seeds x {} policies x {} points, hash {}", cfg.seeds.len(), cfg.policies.len(), cfg.points().len(), cfg.hash());
    let res = run_experiment(&cfg)?;
    let paths = res.write(&dir)?;
    for p in &paths {
        log::info!("wrote {}", p.display());
    }
    let failed = res.runs.iter().filter(|r| !r.ok).count();
    if failed > 0 {
        eprintln!("{failed} of {} runs failed; see the error column of runs.csv", res.runs.len());
    }
    Ok((cfg, res, dir))
}

fn print_gain(runs: &[RunRow]) {
    println!("re-optimisation gain (PIA - PIAwRO mean queue):");
    for (v, g) in reoptimization_gain(runs) {
        println!("  {:>10}  {:.4} MB", v.map_or("-".into(), |v| format!("{v}")), g / 8e6);
    }
}

fn compare(runs: &[RunRow], tie_tol: f64) {
    println!("ordering consistency on paired seeds:");
    for c in ordering(runs, &Policy::ALL, tie_tol) {
        println!("  {} <= {}: {}/{} ({:.0}%)", c.better, c.worse, c.agree, c.pairs, 100.0 * c.fraction());
    }
    print_gain(runs);
}

fn write_convergence(dir: &Path, rows: &[ConvergenceRow]) -> Result<PathBuf> {
    let path = output_paths(dir)[2].clone();
    write_csv(&path, rows)?;
    Ok(path)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Run(c) => {
            let (_, res, dir) = execute(&c)?;
            print_aggregates(&res.aggregates);
            println!("results in {}", dir.display());
        }
        Cmd::Sweep(c) => {
            let cfg = c.config()?;
            if cfg.sweep.is_none() {
                bail!("sweep needs --sweep axis:values or a sweep in the config");
            }
            let (_, res, dir) = execute(&c)?;
            print_aggregates(&res.aggregates);
            print_gain(&res.runs);
            println!("results in {}", dir.display());
        }
        Cmd::Compare { common, from, tie_tol } => {
            let runs: Vec<RunRow> = match from {
                Some(p) => read_csv(&p).with_context(|| format!("reading {}", p.display()))?,
                None => execute(&common)?.1.runs,
            };
            compare(&runs, tie_tol);
        }
        Cmd::Convergence(c) => {
            let mut cfg = c.config()?;
            if c.seed.is_none() && cfg.seeds.len() > 1 {
                log::warn!("convergence traces use the first seed only ({})", cfg.seeds[0]);
                cfg.seeds.truncate(1);
            }
            let dir = c.out_dir(&cfg);
            let res = run_experiment(&cfg)?;
            std::fs::create_dir_all(&dir)?;
            let path = write_convergence(&dir, &res.convergence)?;
            println!("{} rows in {}", res.convergence.len(), path.display());
        }
        Cmd::ValidateConfig { common, print } => {
            let cfg = common.config()?;
            println!("ok {} {}", cfg.name, cfg.hash());
            if print {
                println!("{}", cfg.to_json());
            }
        }
    }
    Ok(())
}
