//! Plot-ready trace files: a CSV table with a `#` header block and an event section, plus a
//! JSON sidecar with the same base name carrying the scenario echo and run metadata.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{Diagnostics, Event, EventKind, Subjects, Termination};
use crate::geometry::Vec2;
use crate::scenarios::Scenario;

pub const TOOL_NAME: &str = "discsim";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum TraceFileError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed trace at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("inconsistent trace: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub scenario: Scenario,
    /// Free-form remarks such as initial-state regularization.
    pub notes: Vec<String>,
    pub termination: Termination,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time: f64,
    pub positions: Vec<Vec2>,
    pub energy: f64,
    pub force_norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub rows: Vec<TraceRow>,
    pub events: Vec<Event>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    #[serde(flatten)]
    header: &'a TraceHeader,
    columns: Vec<String>,
    rows: usize,
    events: &'a [Event],
}

/// Column names `T, x1, y1, …, xN, yN, H, |F1|, …, |FN|`.
pub fn column_names(n: usize) -> Vec<String> {
    let mut cols = vec!["T".to_string()];
    for k in 1..=n {
        cols.push(format!("x{k}"));
        cols.push(format!("y{k}"));
    }
    cols.push("H".to_string());
    cols.extend((1..=n).map(|k| format!("|F{k}|")));
    cols
}

impl TraceFile {
    pub fn disclination_count(&self) -> usize {
        self.header.scenario.disclinations.len()
    }

    /// Checks the column contract, increasing times and event indices.
    pub fn validate(&self) -> Result<(), TraceFileError> {
        let n = self.disclination_count();
        for (i, row) in self.rows.iter().enumerate() {
            if row.positions.len() != n || row.force_norms.len() != n {
                return Err(TraceFileError::Inconsistent(format!(
                    "row {i} does not have {n} disclinations"
                )));
            }
            if i > 0 && row.time <= self.rows[i - 1].time {
                return Err(TraceFileError::Inconsistent(format!(
                    "row {i} time {} does not increase",
                    row.time
                )));
            }
        }
        for e in &self.events {
            if e.subjects.indices().iter().any(|&k| k >= n) {
                return Err(TraceFileError::Inconsistent(format!(
                    "event {} references a missing disclination",
                    e.kind.as_str()
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let h = &self.header;
        let sc = &h.scenario;
        let st = &sc.settings;
        let mut out = String::new();
        let _ = writeln!(out, "# {} {} trace", h.tool, h.version);
        let _ = writeln!(out, "# scenario: {}", sc.name);
        let _ = writeln!(out, "# mode: {}", sc.mode.as_str());
        if let Some(gs) = &sc.glide_set {
            let dirs: Vec<String> = gs
                .directions()
                .iter()
                .map(|g| format!("({:e} {:e})", g.x, g.y))
                .collect();
            let _ = writeln!(out, "# glide set: {}", dirs.join(" "));
        }
        let _ = writeln!(out, "# seed: {}", h.seed);
        for (k, d) in sc.disclinations.items().iter().enumerate() {
            let _ = writeln!(
                out,
                "# disclination {}: s={:e} x0={:e} y0={:e}",
                k + 1,
                d.s(),
                d.pos.x,
                d.pos.y
            );
        }
        let _ = writeln!(
            out,
            "# settings: rel_tol={:e} abs_tol={:e} max_step={:e} t_end={:e} sample_interval={:e} collision_distance={:e} boundary_margin={:e}",
            st.rel_tol, st.abs_tol, st.max_step, st.t_end, st.sample_interval, st.collision_distance, st.boundary_margin
        );
        for note in &h.notes {
            let _ = writeln!(out, "# note: {note}");
        }
        let _ = writeln!(
            out,
            "# termination: {}",
            serde_json::to_string(&h.termination).unwrap_or_default().trim_matches('"')
        );
        let d = &h.diagnostics;
        let _ = writeln!(
            out,
            "# steps: accepted={} rejected={} rhs_evals={} max_sliding_residual={:e}",
            d.accepted_steps, d.rejected_steps, d.rhs_evals, d.max_sliding_residual
        );
        let _ = writeln!(out, "{}", column_names(self.disclination_count()).join(","));
        for row in &self.rows {
            let mut fields = vec![format!("{:e}", row.time)];
            for p in &row.positions {
                fields.push(format!("{:e}", p.x));
                fields.push(format!("{:e}", p.y));
            }
            fields.push(format!("{:e}", row.energy));
            fields.extend(row.force_norms.iter().map(|f| format!("{f:e}")));
            let _ = writeln!(out, "{}", fields.join(","));
        }
        let _ = writeln!(out, "# events: kind,time,subjects");
        for e in &self.events {
            let subjects: Vec<String> = e.subjects.indices().iter().map(|k| (k + 1).to_string()).collect();
            let _ = write!(out, "#event,{},{:e},{}", e.kind.as_str(), e.time, subjects.join(";"));
            if let Some(s) = &e.sliding {
                let _ = write!(
                    out,
                    ",alpha={:e},normal=({:e} {:e})",
                    s.alpha, s.normal.x, s.normal.y
                );
            }
            out.push('\n');
        }
        out
    }

    pub fn sidecar_json(&self) -> String {
        let sidecar = Sidecar {
            header: &self.header,
            columns: column_names(self.disclination_count()),
            rows: self.rows.len(),
            events: &self.events,
        };
        let mut s = serde_json::to_string_pretty(&sidecar).expect("trace header serializes");
        s.push('\n');
        s
    }

    /// Writes the CSV to `path` and the sidecar next to it with a `.json` extension.
    pub fn write(&self, path: &Path) -> Result<PathBuf, TraceFileError> {
        let io_err = |p: &Path| {
            let p = p.to_path_buf();
            move |source| TraceFileError::Io { path: p, source }
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(path, self.to_csv()).map_err(io_err(path))?;
        let sidecar = sidecar_path(path);
        fs::write(&sidecar, self.sidecar_json()).map_err(io_err(&sidecar))?;
        Ok(sidecar)
    }
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Numeric table and events read back from a CSV trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTrace {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub events: Vec<Event>,
}

impl ParsedTrace {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

fn parse_kind(s: &str) -> Option<EventKind> {
    [
        EventKind::CollisionBegin,
        EventKind::CollisionEnd,
        EventKind::BoundaryApproach,
        EventKind::StepCollapse,
        EventKind::CrossSlip,
        EventKind::SlidingBegin,
        EventKind::SlidingEnd,
    ]
    .into_iter()
    .find(|k| k.as_str() == s)
}

/// Reads the table and event lines of a CSV trace; other header lines are skipped.
pub fn parse_csv(text: &str) -> Result<ParsedTrace, TraceFileError> {
    let mut columns: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let bad = |message: String| TraceFileError::Malformed {
            line: line_no,
            message,
        };
        if let Some(rest) = line.strip_prefix("#event,") {
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() < 3 {
                return Err(bad("event needs kind, time and subjects".into()));
            }
            let kind = parse_kind(parts[0]).ok_or_else(|| bad(format!("unknown event {}", parts[0])))?;
            let time: f64 = parts[1].parse().map_err(|_| bad("bad event time".into()))?;
            let idx = parts[2]
                .split(';')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<usize>().ok().and_then(|k| k.checked_sub(1)))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad("bad event subjects".into()))?;
            let subjects = match idx.as_slice() {
                [] => Subjects::None,
                [k] => Subjects::One(*k),
                [k, h] => Subjects::Pair(*k, *h),
                _ => return Err(bad("too many event subjects".into())),
            };
            events.push(Event::new(kind, time, subjects));
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        match &columns {
            None => columns = Some(line.split(',').map(str::to_string).collect()),
            Some(cols) => {
                let row = line
                    .split(',')
                    .map(|v| v.parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| bad(e.to_string()))?;
                if row.len() != cols.len() {
                    return Err(bad(format!("expected {} fields, found {}", cols.len(), row.len())));
                }
                rows.push(row);
            }
        }
    }
    let columns = columns.ok_or_else(|| TraceFileError::Malformed {
        line: 0,
        message: "no column header".into(),
    })?;
    Ok(ParsedTrace {
        columns,
        rows,
        events,
    })
}
