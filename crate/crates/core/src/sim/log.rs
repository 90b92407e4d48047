//! Per-tick run records and their CSV form.

use std::fmt::Write as _;
use std::io::{self, BufRead};

/// First line of every run CSV; bump when columns change.
pub const CSV_VERSION_LINE: &str = "# wbic run log v1";

/// One control tick.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSample {
    pub t: f64,
    pub q: Vec<f64>,
    pub leg_ext: [f64; 2],
    /// True and estimated contact forces `(x, z)` for front and rear wheels.
    pub fc_true: [[f64; 2]; 2],
    pub fc_est: [[f64; 2]; 2],
    /// Force of each load on the body `(x, z)`.
    pub f_obj: [[f64; 2]; 2],
    pub nx_est: [[f64; 2]; 2],
    pub nz_est: [[f64; 2]; 2],
    pub nz_true: [[f64; 2]; 2],
    pub d_left: [f64; 3],
    pub d_right: [f64; 3],
    pub rho1: f64,
    pub rho2: f64,
    pub energy: f64,
    pub solver_iters: usize,
    pub solver_residual: f64,
    pub cone_slack: f64,
    /// Smallest distance of any torque to its bound (negative = violated).
    pub tau_margin: f64,
    /// Height task value and its raw reference.
    pub height: f64,
    pub height_ref: f64,
    pub load_rel_acc: [f64; 2],
    /// Terrain under the front wheel.
    pub terrain_x: f64,
    pub terrain_h: f64,
    pub terrain_slope: f64,
    pub steady_contact: [bool; 2],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub nq: usize,
    pub samples: Vec<RunSample>,
}

const PAIR: [&str; 2] = ["front", "rear"];
const LOADS: [&str; 2] = ["L", "R"];

impl RunLog {
    pub fn new(nq: usize) -> Self {
        Self { nq, samples: Vec::new() }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((0..self.nq).map(|i| format!("q{i}")));
        h.push("leg_ext_front".into());
        h.push("leg_ext_rear".into());
        for group in ["fC_true", "fC_est"] {
            for w in PAIR {
                for a in ["x", "z"] {
                    h.push(format!("{group}_{w}_{a}"));
                }
            }
        }
        for l in LOADS {
            for a in ["x", "z"] {
                h.push(format!("f_obj_{l}_{a}"));
            }
        }
        for group in ["nx_est", "nz_est", "nz_true"] {
            for w in PAIR {
                for a in ["x", "z"] {
                    h.push(format!("{group}_{w}_{a}"));
                }
            }
        }
        for side in ["D_L", "D_R"] {
            for a in ["x", "y", "z"] {
                h.push(format!("{side}_{a}"));
            }
        }
        for c in [
            "rho1",
            "rho2",
            "E",
            "solver_iters",
            "solver_residual",
            "cone_slack",
            "tau_margin",
            "height",
            "height_ref",
            "load_acc_L",
            "load_acc_R",
            "terrain_x",
            "terrain_h",
            "terrain_slope",
            "steady_front",
            "steady_rear",
        ] {
            h.push(c.into());
        }
        h
    }

    /// CSV text: version line, header, one row per tick. Floats use the
    /// shortest round-trip representation, so equal logs give equal bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_VERSION_LINE);
        out.push('\n');
        out.push_str(&self.header().join(","));
        out.push('\n');
        for s in &self.samples {
            let mut row: Vec<f64> = vec![s.t];
            row.extend(&s.q);
            row.extend(s.leg_ext);
            for g in [&s.fc_true, &s.fc_est, &s.f_obj, &s.nx_est, &s.nz_est, &s.nz_true] {
                row.extend(g.iter().flatten());
            }
            row.extend(s.d_left);
            row.extend(s.d_right);
            row.extend([
                s.rho1,
                s.rho2,
                s.energy,
                s.solver_iters as f64,
                s.solver_residual,
                s.cone_slack,
                s.tau_margin,
                s.height,
                s.height_ref,
                s.load_rel_acc[0],
                s.load_rel_acc[1],
                s.terrain_x,
                s.terrain_h,
                s.terrain_slope,
                s.steady_contact[0] as u8 as f64,
                s.steady_contact[1] as u8 as f64,
            ]);
            let mut line = String::new();
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                let _ = write!(line, "{v}");
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

/// A parsed CSV: column names and numeric rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Reads a run CSV, checking the version line.
    pub fn read(reader: impl BufRead) -> io::Result<Self> {
        let invalid = |m: String| io::Error::new(io::ErrorKind::InvalidData, m);
        let mut lines = reader.lines();
        let first = lines.next().transpose()?.unwrap_or_default();
        if first.trim() != CSV_VERSION_LINE {
            return Err(invalid(format!("expected '{CSV_VERSION_LINE}', found '{first}'")));
        }
        let header = lines.next().transpose()?.ok_or_else(|| invalid("missing header".into()))?;
        let columns: Vec<String> = header.split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
            let row = row.map_err(|e| invalid(format!("row {}: {e}", n + 1)))?;
            if row.len() != columns.len() {
                return Err(invalid(format!(
                    "row {} has {} fields, header has {}",
                    n + 1,
                    row.len(),
                    columns.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut log = RunLog::new(2);
        log.samples.push(RunSample {
            t: 0.002,
            q: vec![0.1, -0.25],
            solver_iters: 3,
            ..RunSample::default()
        });
        let csv = log.to_csv();
        let table = CsvTable::read(csv.as_bytes()).unwrap();
        assert_eq!(table.columns, log.header());
        assert_eq!(table.column("q1").unwrap(), vec![-0.25]);
        assert_eq!(table.column("solver_iters").unwrap(), vec![3.0]);
    }

    #[test]
    fn rejects_unknown_version() {
        assert!(CsvTable::read("# other\nt\n1\n".as_bytes()).is_err());
    }
}
