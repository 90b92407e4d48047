//! Experiment runner behind the `wbic` binary: resolves configs, runs
//! scenarios in parallel and writes logs, figures and a summary table.

pub mod config;
pub mod plot;

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;
use wbic_core::dynamics::KinematicTree;
use wbic_core::icc::DampingPolicy;
use wbic_core::sim::{run_scenario, CsvTable, ScenarioConfig, ScenarioResult, SimError};

use config::{policy_label, Diagnostic, Experiment};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n{}", join(.0))]
    Config(Vec<Diagnostic>),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Fault(String),
    #[error("{0}")]
    Io(String),
}

fn join(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

impl CliError {
    /// Process exit status: 1 I/O, 2 configuration, 3 solver, 4 plant or
    /// numerical fault.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Fault(_) => 4,
        }
    }

    fn from_sim(scenario: &str, e: SimError) -> Self {
        let message = format!("{scenario}: {e}");
        match e {
            SimError::Config(_) => CliError::Config(vec![Diagnostic { field: scenario.into(), message: e.to_string() }]),
            SimError::Solver { .. } => CliError::Solver(message),
            _ => CliError::Fault(message),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

/// Headline numbers of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub scenario: String,
    pub policy: String,
    pub seed: u64,
    /// Accumulated interaction energy at the end of the run.
    pub energy: f64,
    /// RMS fluctuation of the total vertical object force after the first
    /// second.
    pub object_force_rms: f64,
    pub max_load_acc: f64,
    pub mean_solve_ms: f64,
    pub dir: PathBuf,
}

impl RunSummary {
    fn new(cfg: &ScenarioConfig, result: &ScenarioResult, dir: PathBuf) -> Self {
        let samples = &result.log.samples;
        let settled: Vec<f64> = samples.iter().filter(|s| s.t >= 1.0).map(|s| s.f_obj[0][1] + s.f_obj[1][1]).collect();
        let object_force_rms = if settled.is_empty() {
            0.0
        } else {
            let n = settled.len() as f64;
            let mean = settled.iter().sum::<f64>() / n;
            (settled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
        };
        let max_load_acc = samples.iter().flat_map(|s| s.load_rel_acc).fold(0.0, |m: f64, a| m.max(a.abs()));
        Self {
            scenario: cfg.scenario.name().into(),
            policy: policy_label(&cfg.controller.policy),
            seed: cfg.seed,
            energy: result.energy,
            object_force_rms,
            max_load_acc,
            mean_solve_ms: 1e3 * result.mean_solve_seconds,
            dir,
        }
    }
}

const SUMMARY_HEADER: [&str; 7] = ["scenario", "policy", "seed", "E", "f_obj_rms", "max_load_acc", "mean_solve_ms"];

fn summary_cells(s: &RunSummary) -> [String; 7] {
    [
        s.scenario.clone(),
        s.policy.clone(),
        s.seed.to_string(),
        format!("{:.6}", s.energy),
        format!("{:.4}", s.object_force_rms),
        format!("{:.4}", s.max_load_acc),
        format!("{:.4}", s.mean_solve_ms),
    ]
}

/// Aligned text table for the terminal.
pub fn summary_table(rows: &[RunSummary]) -> String {
    let cells: Vec<[String; 7]> = rows.iter().map(summary_cells).collect();
    let mut widths = SUMMARY_HEADER.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let header = SUMMARY_HEADER.map(String::from);
    for row in std::iter::once(&header).chain(&cells) {
        let line: Vec<String> = row.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

pub fn summary_csv(rows: &[RunSummary]) -> String {
    let mut out = SUMMARY_HEADER.join(",") + "\n";
    for row in rows {
        out += &summary_cells(row).join(",");
        out.push('\n');
    }
    out
}

/// Directory name for a comparison run, e.g. `compare-D100`.
fn compare_dir(policy: &DampingPolicy) -> String {
    let label: String = policy_label(policy).chars().filter(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '.' | '_')).collect();
    format!("compare-{label}")
}

/// Writes every figure for the CSV at `csv` into `out`.
pub fn render_plots(csv: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let file = fs::File::open(csv).map_err(|e| CliError::io(csv, e))?;
    let table = CsvTable::read(BufReader::new(file)).map_err(|e| CliError::io(csv, e))?;
    let figures = plot::all_figures(&table).map_err(|e| CliError::io(csv, e))?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut written = Vec::new();
    for (name, svg) in figures {
        let path = out.join(name);
        fs::write(&path, svg).map_err(|e| CliError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

fn run_one(tree: &KinematicTree, cfg: &ScenarioConfig, dir: &Path) -> Result<RunSummary, CliError> {
    let name = cfg.scenario.name();
    log::info!("{name} ({}): running {} s, seed {}", policy_label(&cfg.controller.policy), cfg.duration, cfg.seed);
    let result = run_scenario(tree, cfg).map_err(|e| CliError::from_sim(name, e))?;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let csv = dir.join("run.csv");
    fs::write(&csv, result.log.to_csv()).map_err(|e| CliError::io(&csv, e))?;
    render_plots(&csv, dir)?;
    log::info!("{name}: wrote {}", dir.display());
    Ok(RunSummary::new(cfg, &result, dir.to_path_buf()))
}

/// Runs every scenario, plus a copy under `compare` when given, on up to
/// `jobs` threads. Results keep the scenario order; the first failure in that
/// order is returned.
pub fn run_experiment(exp: &Experiment, compare: Option<DampingPolicy>, jobs: usize) -> Result<Vec<RunSummary>, CliError> {
    let mut work: Vec<(ScenarioConfig, PathBuf)> = Vec::new();
    for cfg in &exp.runs {
        let dir = exp.out.join(cfg.scenario.name());
        work.push((cfg.clone(), dir.clone()));
        if let Some(policy) = &compare {
            let mut alt = cfg.clone();
            alt.controller.policy = policy.clone();
            work.push((alt, dir.join(compare_dir(policy))));
        }
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunSummary, CliError>>>> = Mutex::new((0..work.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, work.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((cfg, dir)) = work.get(i) else { break };
                let r = run_one(&exp.tree, cfg, dir);
                results.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });

    let summaries = results
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(&exp.out).map_err(|e| CliError::io(&exp.out, e))?;
    let path = exp.out.join("summary.csv");
    fs::write(&path, summary_csv(&summaries)).map_err(|e| CliError::io(&path, e))?;
    Ok(summaries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(policy: &str) -> RunSummary {
        RunSummary {
            scenario: "terrain2".into(),
            policy: policy.into(),
            seed: 1,
            energy: 0.5,
            object_force_rms: 0.25,
            max_load_acc: 1.0,
            mean_solve_ms: 0.06,
            dir: PathBuf::new(),
        }
    }

    #[test]
    fn table_columns_align() {
        let text = summary_table(&[row("bang-bang"), row("D=100")]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let col = lines[0].find("seed").unwrap();
        assert!(lines[1..].iter().all(|l| &l[col..col + 1] == "1"));
    }

    #[test]
    fn csv_has_one_row_per_run() {
        let text = summary_csv(&[row("bang-bang")]);
        assert_eq!(text, "scenario,policy,seed,E,f_obj_rms,max_load_acc,mean_solve_ms\nterrain2,bang-bang,1,0.500000,0.2500,1.0000,0.0600\n");
    }

    #[test]
    fn compare_dirs_are_path_safe() {
        assert_eq!(compare_dir(&DampingPolicy::Constant(100.0)), "compare-D100");
        assert_eq!(compare_dir(&DampingPolicy::BangBang), "compare-bang-bang");
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(CliError::Io(String::new()).exit_code(), 1);
        assert_eq!(CliError::Config(Vec::new()).exit_code(), 2);
        assert_eq!(CliError::Solver(String::new()).exit_code(), 3);
        assert_eq!(CliError::Fault(String::new()).exit_code(), 4);
    }
}
