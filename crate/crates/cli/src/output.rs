//! Run artifacts: `metrics.csv`, `run.json` and `dataset.csv`.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a file back yields bit-identical values. Cells that were not evaluated
//! (downstream returns between evaluation episodes) are left empty.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use opax::envs::EnvSpec;
use opax::experiment::{RunConfig, RunHistory};
use opax::Dataset;
use serde::Serialize;
use thiserror::Error;

/// Leading columns of `metrics.csv`; downstream task columns follow.
pub const METRIC_COLUMNS: [&str; 8] = [
    "episode",
    "dataset_size",
    "intrinsic_return",
    "max_epistemic",
    "mean_epistemic",
    "info_gain_bound",
    "model_complexity",
    "calibration_coverage",
];

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv { path: path.to_path_buf(), source }
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Header of `metrics.csv` for a history.
pub fn metrics_header(history: &RunHistory) -> Vec<String> {
    METRIC_COLUMNS.iter().map(|c| c.to_string()).chain(history.downstream_tasks.iter().cloned()).collect()
}

pub fn write_metrics(history: &RunHistory, path: &Path) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(metrics_header(history)).map_err(csv_err(path))?;
    for e in &history.episodes {
        let mut row = vec![
            e.episode.to_string(),
            e.dataset_size.to_string(),
            e.intrinsic_return.to_string(),
            e.max_epistemic.to_string(),
            e.mean_epistemic.to_string(),
            e.info_gain_bound.to_string(),
            e.model_complexity.to_string(),
            e.calibration_coverage.to_string(),
        ];
        row.extend(e.downstream.iter().map(|&d| cell(d)));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// A numeric CSV table with optional cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// All values of a column, `None` where the cell is empty.
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let j = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

/// Reads any all-numeric CSV written by this module.
pub fn read_table(path: &Path) -> Result<Table, OutputError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let columns: Vec<String> = r.headers().map_err(csv_err(path))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let row = rec
            .iter()
            .zip(&columns)
            .map(|(s, col)| {
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>().map(Some).map_err(|_| OutputError::Format {
                    path: path.to_path_buf(),
                    message: format!("row {}, column {col}: {s:?} is not a number", i + 1),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(Table { columns, rows })
}

/// Writes transitions `((obs, u), obs')` as `x0.., u0.., next_x0..`.
pub fn write_dataset(data: &Dataset, env: &EnvSpec, path: &Path) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(dataset_header(env)).map_err(csv_err(path))?;
    for (z, y) in data.inputs.iter().zip(&data.targets) {
        w.write_record(z.iter().chain(y).map(|v| v.to_string())).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn dataset_header(env: &EnvSpec) -> Vec<String> {
    let (n, m) = (env.obs_dim(), env.action_dim());
    (0..n)
        .map(|i| format!("x{i}"))
        .chain((0..m).map(|j| format!("u{j}")))
        .chain((0..n).map(|i| format!("next_x{i}")))
        .collect()
}

pub fn read_dataset(env: &EnvSpec, path: &Path) -> Result<Dataset, OutputError> {
    let table = read_table(path)?;
    let expected = dataset_header(env);
    if table.columns != expected {
        return Err(OutputError::Format {
            path: path.to_path_buf(),
            message: format!("expected columns {}, found {}", expected.join(","), table.columns.join(",")),
        });
    }
    let din = env.obs_dim() + env.action_dim();
    let mut data = Dataset::new(din, env.obs_dim());
    for (i, row) in table.rows.into_iter().enumerate() {
        let row: Option<Vec<f64>> = row.into_iter().collect();
        let row = row.ok_or_else(|| OutputError::Format {
            path: path.to_path_buf(),
            message: format!("row {} has empty cells", i + 1),
        })?;
        let (z, y) = row.split_at(din);
        data.push(z.to_vec(), y.to_vec())
            .map_err(|e| OutputError::Format { path: path.to_path_buf(), message: e.to_string() })?;
    }
    Ok(data)
}

#[derive(Serialize)]
struct RunRecord<'a> {
    seed: u64,
    baseline: &'a str,
    versions: Versions,
    config: &'a RunConfig,
    history: &'a RunHistory,
}

#[derive(Serialize)]
struct Versions {
    opax_core: &'static str,
    opax_cli: &'static str,
}

fn versions() -> Versions {
    Versions { opax_core: opax::VERSION, opax_cli: env!("CARGO_PKG_VERSION") }
}

/// Directory of one run: `<root>/<baseline>/seed_<seed>`.
pub fn run_dir(root: &Path, baseline: &str, seed: u64) -> PathBuf {
    root.join(baseline).join(format!("seed_{seed}"))
}

/// Writes all artifacts of a run into `dir` (created if missing).
pub fn write_outputs(
    cfg: &RunConfig,
    baseline: &str,
    history: &RunHistory,
    data: &Dataset,
    dir: &Path,
) -> Result<(), OutputError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_metrics(history, &dir.join("metrics.csv"))?;
    write_dataset(data, &cfg.env, &dir.join("dataset.csv"))?;
    let path = dir.join("run.json");
    let file = File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    let record = RunRecord { seed: history.seed, baseline, versions: versions(), config: cfg, history };
    serde_json::to_writer_pretty(&mut w, &record)
        .map_err(|e| OutputError::Io { path: path.clone(), source: e.into() })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(&path))
}

/// Header and rows of a single-row evaluation report.
pub fn write_eval(report: &opax::experiment::EvalReport, labels: &[String], path: &Path) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let header = ["dataset_size", "max_epistemic", "mean_epistemic", "calibration_coverage"]
        .iter()
        .map(|s| s.to_string())
        .chain(labels.iter().cloned());
    w.write_record(header).map_err(csv_err(path))?;
    let row = [
        report.dataset_size.to_string(),
        report.max_epistemic.to_string(),
        report.mean_epistemic.to_string(),
        report.calibration_coverage.to_string(),
    ]
    .into_iter()
    .chain(report.downstream.iter().map(|v| v.to_string()));
    w.write_record(row).map_err(csv_err(path))?;
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use opax::experiment::EpisodeRecord;

    fn record(episode: usize, downstream: Vec<Option<f64>>) -> EpisodeRecord {
        EpisodeRecord {
            episode,
            dataset_size: 100 * (episode + 1),
            intrinsic_return: 0.1 + episode as f64 / 3.0,
            max_epistemic: 1.0 / 7.0,
            mean_epistemic: 1e-300,
            info_gain_bound: std::f64::consts::PI * 1e10,
            info_gain: Some(2.0),
            model_complexity: 300.0 + 1.0 / 3.0,
            calibration_coverage: 0.95,
            downstream,
            wall_clock_s: 1.5,
        }
    }

    fn history(n: usize) -> RunHistory {
        RunHistory {
            seed: 3,
            downstream_tasks: vec!["pendulum_swingup".into(), "pendulum_keepdown_true_env".into()],
            episodes: (0..n).map(|i| record(i, vec![(i % 2 == 0).then_some(-123.456 - i as f64), None])).collect(),
        }
    }

    #[test]
    fn metrics_header_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_metrics(&history(1), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "episode,dataset_size,intrinsic_return,max_epistemic,mean_epistemic,info_gain_bound,\
             model_complexity,calibration_coverage,pendulum_swingup,pendulum_keepdown_true_env"
        );
        assert!(lines.next().is_some());
        assert!(lines.next().is_none(), "one episode gives header plus one row");
    }

    #[test]
    fn metrics_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let h = history(5);
        write_metrics(&h, &path).unwrap();
        let t = read_table(&path).unwrap();
        assert_eq!(t.columns, metrics_header(&h));
        for (row, e) in t.rows.iter().zip(&h.episodes) {
            let expect = [
                e.episode as f64,
                e.dataset_size as f64,
                e.intrinsic_return,
                e.max_epistemic,
                e.mean_epistemic,
                e.info_gain_bound,
                e.model_complexity,
                e.calibration_coverage,
            ];
            for (got, want) in row.iter().zip(expect) {
                assert_eq!(got.unwrap().to_bits(), want.to_bits());
            }
            assert_eq!(&row[8..], &e.downstream[..]);
        }
    }

    #[test]
    fn dataset_round_trips() {
        let env = EnvSpec::pendulum();
        let mut data = Dataset::new(4, 3);
        data.push(vec![1.0, 0.0, 0.1, -2.0], vec![0.9, 1.0 / 3.0, 0.2]).unwrap();
        data.push(vec![-1.0, 1e-17, 8.0, 2.0], vec![0.0, -0.0, 7.999]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_dataset(&data, &env, &path).unwrap();
        assert!(fs::read_to_string(&path).unwrap().starts_with("x0,x1,x2,u0,next_x0,next_x1,next_x2\n"));
        assert_eq!(read_dataset(&env, &path).unwrap(), data);
    }

    #[test]
    fn bad_cells_name_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "a,b\n1,2\n3,oops\n").unwrap();
        let e = read_table(&path).unwrap_err().to_string();
        assert!(e.contains("row 2, column b"), "{e}");
    }

    #[test]
    fn dataset_with_wrong_columns_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "x0,x1,u0,next_x0,next_x1\n0,0,0,0,0\n").unwrap();
        assert!(read_dataset(&EnvSpec::pendulum(), &path).is_err());
    }
}
