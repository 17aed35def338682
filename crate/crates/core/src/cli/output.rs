//! Run artifacts: the trajectory CSV, plot series and the run summary.
//!
//! Vehicles are numbered from 1 in every file.

use std::fs::{self, File};
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::analysis::CertificateReport;
use crate::formation::FeasibilityReport;
use crate::geometry::Vec2;
use crate::simulator::{Sample, Termination};

/// Number format for every CSV value: 17 significant digits, which
/// round-trips an `f64` exactly.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trajectory_header(n: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    for i in 1..=n {
        cols.push(format!("z{i}x"));
        cols.push(format!("z{i}y"));
    }
    cols.extend((1..=n).map(|i| format!("eps{i}")));
    cols.push("V".into());
    cols.push("d_min".into());
    cols
}

pub fn write_trajectory_csv<W: Write>(w: W, n: usize, samples: &[Sample]) -> io::Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "{}", trajectory_header(n).join(","))?;
    for s in samples {
        let mut row = Vec::with_capacity(3 * n + 3);
        row.push(num(s.t));
        for p in &s.positions {
            row.push(num(p.x));
            row.push(num(p.y));
        }
        row.extend(s.errors.iter().map(|&e| num(e)));
        row.push(num(s.lyapunov));
        row.push(num(s.min_distance));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()
}

/// One row of a trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub positions: Vec<Vec2>,
    pub errors: Vec<f64>,
    pub lyapunov: f64,
    pub min_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub n: usize,
    pub rows: Vec<TrajectoryRow>,
}

pub fn read_trajectory_csv<R: BufRead>(r: R) -> Result<TrajectoryTable, String> {
    let mut lines = r.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| e.to_string())?,
        None => return Err("empty file".into()),
    };
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.len() < 12 || !(cols.len() - 3).is_multiple_of(3) {
        return Err(format!("line 1: unexpected column count {}", cols.len()));
    }
    let n = (cols.len() - 3) / 3;
    let expected = trajectory_header(n);
    if let Some(k) = cols.iter().zip(&expected).position(|(a, b)| a != b) {
        return Err(format!(
            "line 1: column {} is `{}`, expected `{}`",
            k + 1,
            cols[k],
            expected[k]
        ));
    }

    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let values = line
            .trim_end()
            .split(',')
            .enumerate()
            .map(|(k, field)| {
                field.trim().parse::<f64>().map_err(|_| {
                    format!(
                        "line {lineno}, column `{}`: cannot parse `{field}`",
                        expected.get(k).map_or("?", |s| s)
                    )
                })
            })
            .collect::<Result<Vec<f64>, String>>()?;
        if values.len() != expected.len() {
            return Err(format!(
                "line {lineno}: expected {} values, got {}",
                expected.len(),
                values.len()
            ));
        }
        rows.push(TrajectoryRow {
            t: values[0],
            positions: (0..n)
                .map(|i| Vec2::new(values[1 + 2 * i], values[2 + 2 * i]))
                .collect(),
            errors: values[1 + 2 * n..1 + 3 * n].to_vec(),
            lyapunov: values[1 + 3 * n],
            min_distance: values[2 + 3 * n],
        });
    }
    if rows.is_empty() {
        return Err("no data rows".into());
    }
    Ok(TrajectoryTable { n, rows })
}

/// Writes `plot/vehicle_<i>.csv` (`t,x,y`) for each vehicle and
/// `plot/errors.csv` (`t,V,eps1..epsn`).
pub fn write_plot_data(dir: &Path, n: usize, samples: &[Sample]) -> io::Result<()> {
    let plot = dir.join("plot");
    fs::create_dir_all(&plot)?;
    for i in 0..n {
        let mut w = BufWriter::new(File::create(plot.join(format!("vehicle_{}.csv", i + 1)))?);
        writeln!(w, "t,x,y")?;
        for s in samples {
            writeln!(
                w,
                "{},{},{}",
                num(s.t),
                num(s.positions[i].x),
                num(s.positions[i].y)
            )?;
        }
        w.flush()?;
    }
    let mut w = BufWriter::new(File::create(plot.join("errors.csv"))?);
    let eps: Vec<String> = (1..=n).map(|i| format!("eps{i}")).collect();
    writeln!(w, "t,V,{}", eps.join(","))?;
    for s in samples {
        let eps: Vec<String> = s.errors.iter().map(|&e| num(e)).collect();
        writeln!(w, "{},{},{}", num(s.t), num(s.lyapunov), eps.join(","))?;
    }
    w.flush()
}

/// How a run ended, as reported in `summary.json`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    Timeout,
    Collision,
    Infeasible,
    Error,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::Timeout => "timeout",
            RunStatus::Collision => "collision",
            RunStatus::Infeasible => "infeasible",
            RunStatus::Error => "error",
        }
    }
}

/// A collision event with 1-based vehicle numbers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollisionEvent {
    pub t: f64,
    pub vehicles: [usize; 2],
    pub distance: f64,
}

impl CollisionEvent {
    pub fn from_termination(t: &Termination) -> Option<Self> {
        match *t {
            Termination::Collision { t, i, j, distance } => Some(CollisionEvent {
                t,
                vehicles: [i + 1, j + 1],
                distance,
            }),
            _ => None,
        }
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub n: usize,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub converged: bool,
    /// All speeds are exactly zero after `t_f`.
    pub settled: bool,
    pub t_f: Option<f64>,
    pub t_star: Option<f64>,
    pub v0: Option<f64>,
    pub v_final: Option<f64>,
    pub t_end: Option<f64>,
    pub dt: f64,
    pub stepper: String,
    pub samples: usize,
    pub min_distance: Option<f64>,
    /// Largest `|sum theta(t) - sum theta(0)|` over recorded samples.
    pub angle_sum_drift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collision: Option<CollisionEvent>,
    pub feasibility: Option<FeasibilityReport>,
    pub certificate: Option<CertificateReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate_error: Option<String>,
}

impl RunSummary {
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(dir.join("summary.json"), text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64) -> Sample {
        Sample {
            t,
            positions: vec![
                Vec2::new(0.1, -0.2),
                Vec2::new(1.0 / 3.0, 2.0),
                Vec2::new(-7.5e-9, 4.0),
            ],
            errors: vec![1e-300, -0.25, std::f64::consts::PI],
            lyapunov: 0.3,
            min_distance: 1.9,
            speeds: vec![0.0; 3],
            substeps: 1,
        }
    }

    #[test]
    fn header_layout() {
        let h = trajectory_header(3);
        assert_eq!(h.len(), 1 + 2 * 3 + 3 + 2);
        assert_eq!(
            h.join(","),
            "t,z1x,z1y,z2x,z2y,z3x,z3y,eps1,eps2,eps3,V,d_min"
        );
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let samples = vec![sample(0.0), sample(1e-3)];
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, 3, &samples).unwrap();
        let table = read_trajectory_csv(buf.as_slice()).unwrap();
        assert_eq!(table.n, 3);
        for (row, s) in table.rows.iter().zip(&samples) {
            assert_eq!(row.t, s.t);
            assert_eq!(row.positions, s.positions);
            assert_eq!(row.errors, s.errors);
            assert_eq!(row.lyapunov, s.lyapunov);
            assert_eq!(row.min_distance, s.min_distance);
        }
    }

    #[test]
    fn numbers_keep_enough_digits() {
        let digits = num(1.0 / 3.0)
            .split('e')
            .next()
            .unwrap()
            .replace('.', "")
            .len();
        assert!(digits >= 15);
    }

    #[test]
    fn malformed_csv_rejected() {
        assert!(read_trajectory_csv("".as_bytes()).is_err());
        assert!(read_trajectory_csv("t,a,b\n".as_bytes()).is_err());
        let header = trajectory_header(3).join(",");
        assert!(read_trajectory_csv(format!("{header}\n").as_bytes()).is_err());
        let err = read_trajectory_csv(format!("{header}\n0,1,2\n").as_bytes()).unwrap_err();
        assert!(err.contains("line 2"), "{err}");
        let bad = format!("{header}\n{}\n", ["x"; 12].join(","));
        assert!(read_trajectory_csv(bad.as_bytes())
            .unwrap_err()
            .contains("column `t`"));
    }
}
