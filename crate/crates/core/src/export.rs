//! CSV metric files and JSON run metadata.
//!
//! Every file starts with a fixed header, even when there are no rows, and rows
//! keep the order they were given in. The `HEADER` constants are the column
//! contract with downstream plotting.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::feel::{Baseline, RoundLog};
use crate::moop::{MoopSolution, ParetoPoint};
use crate::ssl::SslReport;

/// A row type with a fixed column list, in field order.
pub trait CsvRow: Serialize {
    const HEADER: &'static [&'static str];
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRow {
    pub round: usize,
    pub sensing_mse: f64,
    pub agg_mse: f64,
    pub task_loss: f64,
    pub task_accuracy: f64,
    pub crb_l: f64,
    pub baseline_name: String,
    pub seed: u64,
}

impl RoundRow {
    pub fn new(log: &RoundLog, baseline: Baseline, seed: u64) -> Self {
        Self {
            round: log.round,
            sensing_mse: log.sensing_mse,
            agg_mse: log.agg_mse,
            task_loss: log.task_loss,
            task_accuracy: log.task_accuracy,
            crb_l: log.crb_l,
            baseline_name: baseline.name().to_owned(),
            seed,
        }
    }
}

impl CsvRow for RoundRow {
    const HEADER: &'static [&'static str] =
        &["round", "sensing_mse", "agg_mse", "task_loss", "task_accuracy", "crb_l", "baseline_name", "seed"];
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParetoRow {
    pub epsilon0: f64,
    pub crb_l: f64,
    pub mse: f64,
    pub iters: usize,
    pub converged: bool,
    /// Empty when the point kept its own design.
    pub adopted_from: Option<f64>,
}

impl From<&ParetoPoint> for ParetoRow {
    fn from(p: &ParetoPoint) -> Self {
        Self { epsilon0: p.epsilon0, crb_l: p.crb_l, mse: p.mse, iters: p.iters, converged: p.converged, adopted_from: p.adopted_from }
    }
}

impl CsvRow for ParetoRow {
    const HEADER: &'static [&'static str] = &["epsilon0", "crb_l", "mse", "iters", "converged", "adopted_from"];
}

/// One entry of a design's objective trace; iteration 0 is the starting point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub label: String,
    pub iteration: usize,
    pub objective: f64,
}

impl ConvergenceRow {
    pub fn from_solution(label: &str, sol: &MoopSolution) -> Vec<Self> {
        sol.objective_trace
            .iter()
            .enumerate()
            .map(|(iteration, &objective)| Self { label: label.to_owned(), iteration, objective })
            .collect()
    }
}

impl CsvRow for ConvergenceRow {
    const HEADER: &'static [&'static str] = &["label", "iteration", "objective"];
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SslRow {
    pub k: u64,
    pub m: u64,
    pub s: u64,
    pub d: u64,
    pub rounds: u64,
    pub tau: u64,
    pub centralized: u64,
    pub distributed: u64,
}

impl From<&SslReport> for SslRow {
    fn from(r: &SslReport) -> Self {
        let p = r.params;
        Self { k: p.k, m: p.m, s: p.s, d: p.d, rounds: p.rounds, tau: p.tau, centralized: r.centralized, distributed: r.distributed }
    }
}

impl CsvRow for SslRow {
    const HEADER: &'static [&'static str] = &["k", "m", "s", "d", "rounds", "tau", "centralized", "distributed"];
}

/// Figures a plotting front end draws, each fed by one CSV file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureKind {
    Learning,
    Sensing,
    Pareto,
    Convergence,
    Ssl,
}

impl FigureKind {
    pub const ALL: [FigureKind; 5] =
        [FigureKind::Learning, FigureKind::Sensing, FigureKind::Pareto, FigureKind::Convergence, FigureKind::Ssl];

    /// Header of the file the figure reads.
    pub fn header(self) -> &'static [&'static str] {
        match self {
            FigureKind::Learning | FigureKind::Sensing => RoundRow::HEADER,
            FigureKind::Pareto => ParetoRow::HEADER,
            FigureKind::Convergence => ConvergenceRow::HEADER,
            FigureKind::Ssl => SslRow::HEADER,
        }
    }

    /// Columns the figure plots; always a subset of [`FigureKind::header`].
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            FigureKind::Learning => &["round", "task_accuracy", "task_loss", "baseline_name", "seed"],
            FigureKind::Sensing => &["round", "sensing_mse", "crb_l", "baseline_name", "seed"],
            FigureKind::Pareto => &["crb_l", "mse"],
            FigureKind::Convergence => &["label", "iteration", "objective"],
            FigureKind::Ssl => &["m", "centralized", "distributed"],
        }
    }
}

/// Writes `rows` under `T::HEADER`, creating parent directories.
pub fn export_metrics<T: CsvRow>(rows: &[T], path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.to_owned(), source };
    let file = create(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).terminator(csv::Terminator::Any(b'\n')).from_writer(file);
    w.write_record(T::HEADER).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_owned(), source })
}

/// Pretty JSON sidecar, newline-terminated.
pub fn write_metadata<T: Serialize>(meta: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut w, meta).map_err(|source| Error::Json { path: path.to_owned(), source })?;
    writeln!(w).and_then(|_| w.flush()).map_err(|source| Error::Io { path: path.to_owned(), source })
}

fn create(path: &Path) -> Result<File> {
    let io_err = |source| Error::Io { path: path.to_owned(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err)?;
    }
    File::create(path).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(round: usize) -> RoundLog {
        RoundLog { round, sensing_mse: 1.5, agg_mse: 0.25, task_loss: 0.7, task_accuracy: 0.8, crb_l: f64::NAN }
    }

    #[test]
    fn empty_export_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/rounds.csv");
        export_metrics::<RoundRow>(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), RoundRow::HEADER.join(",") + "\n");
    }

    #[test]
    fn rows_follow_the_header_and_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<_> = (1..=3).map(|r| RoundRow::new(&log(r), Baseline::CollabSenseFed, 7)).collect();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        export_metrics(&rows, &a).unwrap();
        export_metrics(&rows, &b).unwrap();
        let text = std::fs::read_to_string(&a).unwrap();
        assert_eq!(text, std::fs::read_to_string(&b).unwrap());
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "1,1.5,0.25,0.7,0.8,NaN,collabsensefed,7");
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn optional_cells_are_blank() {
        let dir = tempfile::tempdir().unwrap();
        let p = ParetoPoint { epsilon0: 2.0, crb_l: 1.0, mse: 0.5, iters: 4, converged: true, adopted_from: None };
        let path = dir.path().join("p.csv");
        export_metrics(&[ParetoRow::from(&p)], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().nth(1).unwrap(), "2.0,1.0,0.5,4,true,");
    }

    #[test]
    fn figure_columns_exist_in_their_files() {
        for kind in FigureKind::ALL {
            assert!(kind.columns().iter().all(|c| kind.header().contains(c)), "{kind:?}");
        }
    }

    #[test]
    fn io_errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = export_metrics::<SslRow>(&[], &blocker.join("out.csv")).unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }
}
