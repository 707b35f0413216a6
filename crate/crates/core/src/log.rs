//! Per-iteration logs and their CSV/JSON renderings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{self, f64_17};

pub const CSV_COLUMNS: [&str; 10] = [
    "iter",
    "v_r_exact",
    "v_g_exact",
    "lambda",
    "gap_instant",
    "gap_running_avg",
    "violation_running",
    "cum_queries",
    "cum_env_steps",
    "wall_ms",
];

/// Tolerance of [`check_rows`] on recomputed columns.
pub const CHECK_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Npgpd,
    Zpgpd,
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algo::Npgpd => "npgpd",
            Algo::Zpgpd => "zpgpd",
        })
    }
}

/// Run metadata written as the JSON sidecar of a CSV log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub algo: Algo,
    pub seed: u64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub eta1: f64,
    pub eta2: f64,
    pub mu: Option<f64>,
    pub lambda_cap: f64,
    pub b: f64,
    pub v_star_constrained: f64,
    pub v_star_unconstrained: f64,
    pub slater_slack: f64,
    /// Hyperparameters that were filled in from defaults rather than set
    /// explicitly.
    pub defaults_used: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    pub v_r_exact: f64,
    pub v_g_exact: f64,
    pub lambda: f64,
    pub gap_instant: f64,
    pub gap_running_avg: f64,
    pub violation_running: f64,
    pub cum_queries: u64,
    pub cum_env_steps: u64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterateLog {
    pub header: LogHeader,
    pub rows: Vec<LogRow>,
}

/// Accumulates rows, deriving gap and violation columns as it goes. Gaps
/// are measured against the constrained optimum.
#[derive(Clone, Debug)]
pub(crate) struct LogBuilder {
    header: LogHeader,
    rows: Vec<LogRow>,
    gap_sum: f64,
    v_g_sum: f64,
}

impl LogBuilder {
    pub fn new(header: LogHeader) -> Self {
        LogBuilder {
            rows: Vec::with_capacity(header.t),
            header,
            gap_sum: 0.0,
            v_g_sum: 0.0,
        }
    }

    pub fn push(
        &mut self,
        v_r: f64,
        v_g: f64,
        lambda: f64,
        queries: u64,
        steps: u64,
        wall_ms: u64,
    ) {
        let iter = self.rows.len();
        let t = (iter + 1) as f64;
        let gap = self.header.v_star_constrained - v_r;
        self.gap_sum += gap;
        self.v_g_sum += v_g;
        self.rows.push(LogRow {
            iter,
            v_r_exact: v_r,
            v_g_exact: v_g,
            lambda,
            gap_instant: gap,
            gap_running_avg: self.gap_sum / t,
            violation_running: (self.header.b - self.v_g_sum / t).max(0.0),
            cum_queries: queries,
            cum_env_steps: steps,
            wall_ms,
        });
    }

    pub fn finish(self) -> IterateLog {
        IterateLog {
            header: self.header,
            rows: self.rows,
        }
    }
}

impl IterateLog {
    pub fn final_row(&self) -> Option<&LogRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows)
    }

    /// Writes `<stem>.csv` and `<stem>.json` next to each other.
    pub fn write(&self, csv_path: &Path) -> Result<()> {
        format::write_atomic(csv_path, &self.to_csv())?;
        format::write_json(&csv_path.with_extension("json"), &self.header)
    }

    /// Reads a CSV log and its JSON sidecar.
    pub fn read(csv_path: &Path) -> Result<IterateLog> {
        let text = std::fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
        let rows = rows_from_csv(&text).map_err(|message| Error::Csv {
            path: csv_path.to_path_buf(),
            message,
        })?;
        let header = format::read_json(&csv_path.with_extension("json"))?;
        Ok(IterateLog { header, rows })
    }
}

pub fn rows_to_csv(rows: &[LogRow]) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.iter,
            f64_17(r.v_r_exact),
            f64_17(r.v_g_exact),
            f64_17(r.lambda),
            f64_17(r.gap_instant),
            f64_17(r.gap_running_avg),
            f64_17(r.violation_running),
            r.cum_queries,
            r.cum_env_steps,
            r.wall_ms
        ));
    }
    out
}

pub fn rows_from_csv(text: &str) -> std::result::Result<Vec<LogRow>, String> {
    let mut lines = text.split('\n');
    let header = lines.next().unwrap_or_default();
    if header != CSV_COLUMNS.join(",") {
        return Err(format!("unexpected header `{header}`"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let lineno = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != CSV_COLUMNS.len() {
            return Err(format!(
                "line {lineno}: expected {} fields",
                CSV_COLUMNS.len()
            ));
        }
        let float = |k: usize| {
            fields[k]
                .parse::<f64>()
                .map_err(|e| format!("line {lineno}, {}: {e}", CSV_COLUMNS[k]))
        };
        let int = |k: usize| {
            fields[k]
                .parse::<u64>()
                .map_err(|e| format!("line {lineno}, {}: {e}", CSV_COLUMNS[k]))
        };
        rows.push(LogRow {
            iter: int(0)? as usize,
            v_r_exact: float(1)?,
            v_g_exact: float(2)?,
            lambda: float(3)?,
            gap_instant: float(4)?,
            gap_running_avg: float(5)?,
            violation_running: float(6)?,
            cum_queries: int(7)?,
            cum_env_steps: int(8)?,
            wall_ms: int(9)?,
        });
    }
    Ok(rows)
}

/// Outcome of recomputing the derived columns of a log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub rows: usize,
    pub max_gap_instant_error: f64,
    pub max_gap_running_error: f64,
    pub max_violation_error: f64,
}

/// Recomputes `gap_instant`, `gap_running_avg` and `violation_running` from
/// the exact-value columns and verifies the ordering invariants.
pub fn check_rows(header: &LogHeader, rows: &[LogRow]) -> Result<CheckReport> {
    let mut report = CheckReport {
        rows: rows.len(),
        max_gap_instant_error: 0.0,
        max_gap_running_error: 0.0,
        max_violation_error: 0.0,
    };
    let (mut gap_sum, mut v_g_sum) = (0.0, 0.0);
    for (k, row) in rows.iter().enumerate() {
        if row.iter != k {
            return Err(Error::LogCheck(format!("row {k} has iter {}", row.iter)));
        }
        if k > 0 && row.cum_queries < rows[k - 1].cum_queries {
            return Err(Error::LogCheck(format!(
                "cum_queries decreases at iter {k}"
            )));
        }
        if k > 0 && row.cum_env_steps < rows[k - 1].cum_env_steps {
            return Err(Error::LogCheck(format!(
                "cum_env_steps decreases at iter {k}"
            )));
        }
        let t = (k + 1) as f64;
        let gap = header.v_star_constrained - row.v_r_exact;
        gap_sum += gap;
        v_g_sum += row.v_g_exact;
        let violation = (header.b - v_g_sum / t).max(0.0);
        report.max_gap_instant_error = report
            .max_gap_instant_error
            .max((gap - row.gap_instant).abs());
        report.max_gap_running_error = report
            .max_gap_running_error
            .max((gap_sum / t - row.gap_running_avg).abs());
        report.max_violation_error = report
            .max_violation_error
            .max((violation - row.violation_running).abs());
    }
    let worst = report
        .max_gap_instant_error
        .max(report.max_gap_running_error)
        .max(report.max_violation_error);
    if !(worst <= CHECK_TOL) {
        return Err(Error::LogCheck(format!(
            "derived column differs from recomputation by {worst:e}"
        )));
    }
    Ok(report)
}

/// Loads `csv_path` with its sidecar and runs [`check_rows`].
pub fn check_log_file(csv_path: &Path) -> Result<CheckReport> {
    let log = IterateLog::read(csv_path)?;
    check_rows(&log.header, &log.rows)
}
