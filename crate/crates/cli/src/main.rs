use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Deserialize;

use regionlb::harness::{execute_all, sweep, write_artifacts, Overrides, ScenarioSource};
use regionlb::metrics::{demand_from_log, provisioning_cost, summarize, CostModel, ProvisioningStrategy};
use regionlb::simnet::{read_log, EngineOptions};
use regionlb::Error;

#[derive(Parser)]
#[command(name = "regionlb", version, about = "Cross-region LLM load balancer simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario (every variant it defines, or the base scenario).
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Policy string, e.g. `prefix:sp-p` or `ch:sp-o:32`.
        #[arg(long)]
        policy: Option<String>,
        /// Output directory; defaults to the scenario's `output.dir`, else `runs/<file stem>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep every request in its own region.
        #[arg(long)]
        no_cross_region: bool,
        /// Extra dotted-path assignment, e.g. `regions.0.replicas=3`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Check replica and trie invariants after every event.
        #[arg(long)]
        audit: bool,
    },
    /// Run the base scenario at every point of a parameter grid.
    Sweep {
        scenario: PathBuf,
        /// `key=v1,v2;key2=a,b`
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize an event log, optionally with provisioning costs.
    Analyze {
        log: PathBuf,
        #[arg(long)]
        cost_model: Option<PathBuf>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CostFile {
    #[serde(default = "reserved")]
    reserved_rate: f64,
    #[serde(default = "on_demand")]
    on_demand_rate: f64,
    replica_capacity: f64,
    /// Demand bucket width in simulated ms.
    slot_ms: u64,
    /// Simulated ms billed as one hour.
    #[serde(default = "hour")]
    ms_per_hour: u64,
}

fn hour() -> u64 {
    3_600_000
}

fn reserved() -> f64 {
    CostModel::default().reserved_rate
}

fn on_demand() -> f64 {
    CostModel::default().on_demand_rate
}

fn split_set(items: &[String]) -> anyhow::Result<Vec<(String, String)>> {
    items
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| anyhow::Error::new(Error::validation("--set", format!("`{s}` is not KEY=VALUE"))))
        })
        .collect()
}

fn default_out(scenario: &Path) -> PathBuf {
    let stem = scenario
        .file_stem()
        .map_or("run".into(), |s| s.to_string_lossy().into_owned());
    PathBuf::from("runs").join(stem)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = match e.downcast_ref::<Error>() {
                Some(Error::Validation { .. } | Error::Parse { .. } | Error::MalformedLog { .. }) => 2,
                Some(Error::Invariant(_)) => 3,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}

fn real_main() -> anyhow::Result<()> {
    match Cli::parse().cmd {
        Cmd::Run {
            scenario,
            seed,
            policy,
            out,
            no_cross_region,
            set,
            audit,
        } => {
            let src = ScenarioSource::load(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            let overrides = Overrides {
                seed,
                policy,
                cross_region: no_cross_region.then_some(false),
                set: split_set(&set)?,
            };
            let runs = src.runs(&overrides)?;
            let dir = out
                .or_else(|| runs[0].1.output.dir.clone())
                .unwrap_or_else(|| default_out(&scenario));
            let results = execute_all(runs, src.base_dir.as_deref(), EngineOptions { audit })?;
            write_artifacts(&dir, &results)?;
            print!("{}", std::fs::read_to_string(dir.join("summary.csv"))?);
            eprintln!("artifacts in {}", dir.display());
        }
        Cmd::Sweep { scenario, grid, out } => {
            let src = ScenarioSource::load(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            let (csv, _) = sweep(&src, &grid, &Overrides::default())?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("sweep.csv"), &csv)?;
            }
            print!("{csv}");
        }
        Cmd::Analyze { log, cost_model } => {
            let f = std::fs::File::open(&log).with_context(|| format!("opening {}", log.display()))?;
            let records = read_log(std::io::BufReader::new(f))?;
            let summary = summarize(&records)?;
            let mut report = serde_json::json!({ "summary": summary });
            if let Some(p) = cost_model {
                let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                let cf: CostFile =
                    toml::from_str(&text).map_err(|e| Error::validation(p.display().to_string(), e.to_string()))?;
                let model = CostModel {
                    reserved_rate: cf.reserved_rate,
                    on_demand_rate: cf.on_demand_rate,
                    replica_capacity: cf.replica_capacity,
                };
                let demand = demand_from_log(&records, cf.slot_ms, cf.ms_per_hour)?;
                let mut costs = Vec::new();
                for s in [
                    ProvisioningStrategy::PerRegionPeak,
                    ProvisioningStrategy::GlobalPeak,
                    ProvisioningStrategy::PerfectOnDemand,
                ] {
                    costs.push(provisioning_cost(&demand, s, &model)?);
                }
                report["provisioning"] = serde_json::to_value(costs)?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}
