use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ducsim_core::io::{gen_synthetic, load_case, load_config, load_partition_for, save_case, save_partition, Backend, Mode, RunConfig};
use ducsim_core::runtime::{report_rows, run, write_report, write_trace, RunSummary};

#[derive(Parser)]
#[command(name = "ducsim", version, about = "Decentralized unit commitment simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve a case and write summary.json, trace.jsonl and solution.json
    Run {
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        case: PathBuf,
        /// bus ownership; a single region is used when omitted
        #[arg(long)]
        partition: Option<PathBuf>,
        /// `key = value` file on top of the defaults
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        backend: Option<Backend>,
        /// extra overrides, KEY=VALUE, applied last
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// centralized lower bound for the gap column
        #[arg(long)]
        bound: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded synthetic case and its partition
    GenCase {
        #[arg(long)]
        buses: usize,
        #[arg(long)]
        regions: usize,
        #[arg(long, default_value_t = 24)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// defaults to `<out stem>.partition.json` beside the case
        #[arg(long)]
        partition_out: Option<PathBuf>,
    },
    /// Collect every summary.json under a directory into one CSV
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Run {
            mode,
            case,
            partition,
            config,
            seed,
            backend,
            overrides,
            bound,
            out,
        } => {
            let mut cfg = match &config {
                Some(p) => load_config(p)?,
                None => RunConfig::default(),
            };
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(b) = backend {
                cfg.backend = b;
            }
            for kv in &overrides {
                let (k, v) = kv.split_once('=').with_context(|| format!("--set {kv:?}: expected KEY=VALUE"))?;
                cfg.set(k, v)?;
            }
            cfg.validate()?;
            run_one(&case, partition.as_deref(), &cfg, bound, &out)
        }
        Cmd::GenCase {
            buses,
            regions,
            horizon,
            seed,
            out,
            partition_out,
        } => {
            let (case, part) = gen_synthetic(buses, regions, horizon, seed)?;
            let part_path = partition_out.unwrap_or_else(|| {
                let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "case".into());
                out.with_file_name(format!("{stem}.partition.json"))
            });
            save_case(&case, &out)?;
            save_partition(&part, &part_path)?;
            println!("wrote {} and {}", out.display(), part_path.display());
            Ok(())
        }
        Cmd::Report { runs, out } => {
            let mut paths = Vec::new();
            collect_summaries(&runs, &mut paths)?;
            paths.sort();
            let summaries = paths.iter().map(RunSummary::load).collect::<Result<Vec<_>, _>>()?;
            let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_report(&report_rows(&summaries), file)?;
            println!("{} runs -> {}", summaries.len(), out.display());
            Ok(())
        }
    }
}

fn run_one(case_path: &Path, partition: Option<&Path>, cfg: &RunConfig, bound: Option<f64>, out: &Path) -> Result<()> {
    let case = load_case(case_path)?;
    let part = match partition {
        Some(p) => load_partition_for(p, &case)?,
        None if cfg.mode == Mode::Central => ducsim_core::case::Partition::single(&case),
        None => bail!("--partition is required for {} runs", cfg.mode),
    };
    let result = run(&case, &part, cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let label = case_path.canonicalize().unwrap_or_else(|_| case_path.to_path_buf());
    let summary = RunSummary::new(&result, cfg, &label.display().to_string(), bound.map(|b| (b, b)));
    summary.save(out.join("summary.json"))?;
    write_trace(&result.trace, out.join("trace.jsonl"))?;
    let solution = serde_json::to_string_pretty(&result.solution)? + "\n";
    fs::write(out.join("solution.json"), solution)?;

    let m = &summary.metrics;
    println!(
        "{} seed {}: converged={} gamma={:.4}{} iterations={} sim_total_ms={:.3} async_degree={:.3}",
        cfg.mode,
        cfg.seed,
        result.converged,
        result.final_objective,
        m.gap_percent.map(|g| format!(" gap={g:.3}%")).unwrap_or_default(),
        result.iterations_to_gc.map_or("-".into(), |k| k.to_string()),
        m.sim_total_ms,
        m.async_degree,
    );
    Ok(())
}

fn collect_summaries(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_summaries(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "summary.json") {
            out.push(path);
        }
    }
    Ok(())
}
