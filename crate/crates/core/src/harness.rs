//! Scenario loading, overrides, variant runs, sweeps and artifact output.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{summarize, RunSummary, CSV_HEADER};
use crate::simnet::{log_to_string, Engine, EngineOptions, ReportFormat, RunOutput, Scenario};

/// Command-line level changes applied on top of a scenario file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub policy: Option<String>,
    pub cross_region: Option<bool>,
    /// Dotted-path assignments, e.g. `regions.0.replicas=3`.
    pub set: Vec<(String, String)>,
}

impl Overrides {
    fn apply(&self, v: &mut toml::Value) -> Result<()> {
        if let Some(s) = self.seed {
            set_path(v, "seed", toml::Value::Integer(s as i64))?;
        }
        if let Some(p) = &self.policy {
            set_path(v, "policy", toml::Value::String(p.clone()))?;
        }
        if let Some(c) = self.cross_region {
            set_path(v, "cross_region", toml::Value::Boolean(c))?;
        }
        for (k, raw) in &self.set {
            set_path(v, k, parse_value(raw))?;
        }
        Ok(())
    }
}

/// A TOML literal if `raw` parses as one, otherwise a bare string.
pub fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `path` (dot separated; numeric segments index arrays, `*` means
/// every element) to `value`, creating missing tables.
pub fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::validation(path, "malformed override path"));
    }
    set_parts(root, &parts, value, path)
}

fn set_parts(node: &mut toml::Value, parts: &[&str], value: toml::Value, full: &str) -> Result<()> {
    let (head, rest) = (parts[0], &parts[1..]);
    match node {
        toml::Value::Array(items) => {
            if head == "*" {
                for it in items.iter_mut() {
                    if rest.is_empty() {
                        *it = value.clone();
                    } else {
                        set_parts(it, rest, value.clone(), full)?;
                    }
                }
                return Ok(());
            }
            let i: usize = head
                .parse()
                .map_err(|_| Error::validation(full, format!("`{head}` is not an array index")))?;
            let len = items.len();
            let it = items
                .get_mut(i)
                .ok_or_else(|| Error::validation(full, format!("index {i} out of range ({len} elements)")))?;
            if rest.is_empty() {
                *it = value;
                Ok(())
            } else {
                set_parts(it, rest, value, full)
            }
        }
        toml::Value::Table(t) => {
            if rest.is_empty() {
                t.insert(head.to_string(), value);
                return Ok(());
            }
            let child = t
                .entry(head.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            set_parts(child, rest, value, full)
        }
        _ => Err(Error::validation(full, format!("cannot descend into `{head}`"))),
    }
}

/// A scenario file loaded as raw TOML, ready for overrides.
#[derive(Debug, Clone)]
pub struct ScenarioSource {
    pub value: toml::Value,
    pub base_dir: Option<PathBuf>,
}

impl ScenarioSource {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: toml::Value =
            toml::from_str(&text).map_err(|e| Error::validation(path.display().to_string(), e.to_string()))?;
        Ok(Self {
            value,
            base_dir: path.parent().map(Path::to_path_buf),
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let value = toml::from_str(text).map_err(|e| Error::validation("<input>", e.to_string()))?;
        Ok(Self { value, base_dir: None })
    }

    /// The base scenario with `overrides` applied.
    pub fn scenario(&self, overrides: &Overrides) -> Result<Scenario> {
        let mut v = self.value.clone();
        overrides.apply(&mut v)?;
        let s = Scenario::from_value(v)?;
        s.validate()?;
        Ok(s)
    }

    /// Named runs: one per variant, or the base scenario alone as `base`.
    /// Variant settings apply first, command-line overrides last.
    pub fn runs(&self, overrides: &Overrides) -> Result<Vec<(String, Scenario)>> {
        let base = self.scenario(&Overrides::default())?;
        if base.variants.is_empty() {
            return Ok(vec![("base".into(), self.scenario(overrides)?)]);
        }
        let mut out = Vec::new();
        for (i, var) in base.variants.iter().enumerate() {
            let mut v = self.value.clone();
            if let toml::Value::Table(t) = &mut v {
                t.remove("variants");
            }
            for (k, val) in &var.set {
                set_path(&mut v, k, val.clone())
                    .map_err(|e| Error::validation(format!("variants[{i}].set.{k}"), e.to_string()))?;
            }
            overrides.apply(&mut v)?;
            let s = Scenario::from_value(v)?;
            s.validate()?;
            out.push((var.name.clone(), s));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub name: String,
    pub scenario: Scenario,
    pub output: RunOutput,
    pub summary: RunSummary,
}

pub fn execute(scenario: &Scenario, base_dir: Option<&Path>, opts: EngineOptions) -> Result<(RunOutput, RunSummary)> {
    let out = Engine::new(scenario, base_dir, opts)?.run()?;
    let summary = summarize(&out.log)?;
    Ok((out, summary))
}

/// Runs independent scenarios on worker threads; results keep input order.
pub fn execute_all(
    runs: Vec<(String, Scenario)>,
    base_dir: Option<&Path>,
    opts: EngineOptions,
) -> Result<Vec<RunResult>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).max(1);
    let mut results: Vec<Option<Result<RunResult>>> = (0..runs.len()).map(|_| None).collect();
    for (chunk_runs, chunk_out) in runs.chunks(workers).zip(results.chunks_mut(workers)) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk_runs
                .iter()
                .map(|(name, sc)| {
                    s.spawn(move || {
                        execute(sc, base_dir, opts).map(|(output, summary)| RunResult {
                            name: name.clone(),
                            scenario: sc.clone(),
                            output,
                            summary,
                        })
                    })
                })
                .collect();
            for (h, slot) in handles.into_iter().zip(chunk_out.iter_mut()) {
                *slot = Some(
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Invariant("run panicked".into()))),
                );
            }
        });
    }
    results.into_iter().map(|r| r.expect("every run joined")).collect()
}

/// Table of summaries with leading label columns.
pub fn summaries_csv(label_cols: &[String], rows: &[(Vec<String>, RunSummary)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = label_cols
        .iter()
        .cloned()
        .chain(CSV_HEADER.iter().map(|s| s.to_string()))
        .collect();
    w.write_record(&header)?;
    for (labels, s) in rows {
        w.write_record(labels.iter().cloned().chain(s.csv_record()))?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
}

/// Writes each run's log and summary plus a combined `summary.csv`.
pub fn write_artifacts(dir: &Path, results: &[RunResult]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut rows = Vec::new();
    for r in results {
        let sub = dir.join(&r.name);
        std::fs::create_dir_all(&sub)?;
        let out = &r.scenario.output;
        if out.write_log {
            std::fs::write(sub.join("log.jsonl"), log_to_string(&r.output.log))?;
        }
        if out.formats.contains(&ReportFormat::Json) {
            std::fs::write(
                sub.join("summary.json"),
                serde_json::to_string_pretty(&r.summary)? + "\n",
            )?;
        }
        if out.formats.contains(&ReportFormat::Csv) {
            std::fs::write(sub.join("summary.csv"), r.summary.to_csv()?)?;
        }
        rows.push((vec![r.name.clone()], r.summary.clone()));
    }
    std::fs::write(dir.join("summary.csv"), summaries_csv(&["run".into()], &rows)?)?;
    Ok(())
}

/// Parses `key=v1,v2;key2=a,b`. Whitespace around items is ignored.
pub fn parse_grid(spec: &str) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = Vec::new();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, vs) = part
            .split_once('=')
            .ok_or_else(|| Error::validation("grid", format!("`{part}` is not key=values")))?;
        let vals: Vec<String> = vs
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if k.trim().is_empty() || vals.is_empty() {
            return Err(Error::validation(
                "grid",
                format!("`{part}` needs a key and at least one value"),
            ));
        }
        out.push((k.trim().to_string(), vals));
    }
    Ok(out)
}

/// Every grid point in row-major order (first key varies slowest).
pub fn grid_points(grid: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    if grid.is_empty() {
        return Vec::new();
    }
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (k, vals) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                vals.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((k.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

/// One summary row per grid point over the base scenario (variants are ignored).
pub fn sweep(source: &ScenarioSource, grid: &str, overrides: &Overrides) -> Result<(String, Vec<RunResult>)> {
    let grid = parse_grid(grid)?;
    let keys: Vec<String> = grid.iter().map(|(k, _)| k.clone()).collect();
    let mut runs = Vec::new();
    for (i, point) in grid_points(&grid).into_iter().enumerate() {
        let mut o = overrides.clone();
        o.set.extend(point.iter().cloned());
        let mut s = source.scenario(&o)?;
        s.variants.clear();
        runs.push((format!("cell{i}"), s, point));
    }
    let labels: Vec<Vec<String>> = runs
        .iter()
        .map(|r| r.2.iter().map(|(_, v)| v.clone()).collect())
        .collect();
    let results = execute_all(
        runs.into_iter().map(|(n, s, _)| (n, s)).collect(),
        source.base_dir.as_deref(),
        EngineOptions::default(),
    )?;
    let rows: Vec<(Vec<String>, RunSummary)> = labels
        .into_iter()
        .zip(results.iter().map(|r| r.summary.clone()))
        .collect();
    Ok((summaries_csv(&keys, &rows)?, results))
}
