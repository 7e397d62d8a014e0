//! CSV and snapshot writers, plus a snapshot reader.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::bio::{SpeciesState, N_SPECIES};
use crate::geometry::Mesh;
use crate::hydro::FlowState;
use crate::objective::{ObjectiveReport, StepDiagnostics};
use crate::reactor::ReactorState;

pub const TIMESERIES_HEADER: &str = "step,t,total_A,total_O,kinetic_energy,volume,vel_integral_cum";
pub const REPORT_HEADER: &str = "H,omega,j_raw,vel_integral,oxy_min_integral,penalty_vel,penalty_oxy,j_tilde";
pub const TRACE_HEADER: &str = "iter,move,H,omega,j_raw,penalty_total,j_tilde_best";
pub const REACTOR_HEADER: &str = "t,A,P1,P2,N1,N2,N3,D,O";
pub const SNAPSHOT_COLUMNS: &str = "s n sigma x1 x2 x3 v1 v2 v3 p A P1 P2 N1 N2 N3 D O";

/// Round-trip formatting used in report-style files.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt9(v: f64) -> String {
    format!("{v:.8e}")
}

fn with_path<T>(path: &Path, r: io::Result<T>) -> io::Result<T> {
    r.map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn write_lines(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> io::Result<()> {
    let result = (|| {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{header}")?;
        for row in rows {
            writeln!(w, "{row}")?;
        }
        w.flush()
    })();
    with_path(path, result)
}

pub fn write_timeseries(path: &Path, series: &[StepDiagnostics]) -> io::Result<()> {
    write_lines(
        path,
        TIMESERIES_HEADER,
        series.iter().map(|d| {
            format!(
                "{},{},{},{},{},{},{}",
                d.step,
                fmt17(d.time),
                fmt17(d.total_a),
                fmt17(d.total_o),
                fmt17(d.kinetic_energy),
                fmt17(d.volume),
                fmt17(d.vel_integral_cum)
            )
        }),
    )
}

/// One report row; also used for failed sweep points (`None`), whose values
/// are written as `inf`.
pub fn report_row(h: f64, omega: f64, r: Option<&ObjectiveReport>) -> String {
    let vals = match r {
        Some(r) => [
            r.j_raw,
            r.velocity_integral,
            r.oxygen_min_integral,
            r.penalty_velocity,
            r.penalty_oxygen,
            r.j_tilde,
        ],
        None => [f64::INFINITY; 6],
    };
    let mut row = format!("{},{}", fmt17(h), fmt17(omega));
    for v in vals {
        row.push(',');
        row.push_str(&fmt17(v));
    }
    row
}

pub fn write_reports(path: &Path, rows: &[String]) -> io::Result<()> {
    write_lines(path, REPORT_HEADER, rows.iter().cloned())
}

pub fn write_reactor(path: &Path, trajectory: &[ReactorState]) -> io::Result<()> {
    write_lines(
        path,
        REACTOR_HEADER,
        trajectory.iter().map(|s| {
            let mut row = fmt17(s.time);
            for v in s.values {
                row.push(',');
                row.push_str(&fmt17(v));
            }
            row
        }),
    )
}

/// Writes the full field state: a short header followed by one row per cell,
/// streamwise index outermost and σ-layer innermost. `p` is the kinematic
/// pressure without the hydrostatic part of the reduced pressure.
pub fn write_snapshot(
    path: &Path,
    mesh: &Mesh,
    flow: &FlowState,
    species: &SpeciesState,
    step: usize,
    gravity: f64,
) -> io::Result<()> {
    let result = (|| {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "# raceway snapshot")?;
        writeln!(w, "n_streamwise {}", mesh.n_streamwise)?;
        writeln!(w, "n_transverse {}", mesh.n_transverse)?;
        writeln!(w, "n_sigma {}", mesh.n_sigma)?;
        writeln!(w, "step {step}")?;
        writeln!(w, "time {}", fmt17(flow.time))?;
        writeln!(w, "{SNAPSHOT_COLUMNS}")?;
        for i in 0..mesh.n_streamwise {
            for j in 0..mesh.n_transverse {
                let p = mesh.plan_index(i, j);
                let [x1, x2] = mesh.cell_centers_plan[p];
                for k in 0..mesh.n_sigma {
                    let c = mesh.cell_index(i, j, k);
                    let x3 = mesh.layer_center_height(k, flow.surface_height[p]);
                    let v = flow.velocity[c];
                    let mut row = format!("{i} {j} {k}");
                    for x in [x1, x2, x3, v[0], v[1], v[2], flow.pressure[c] - gravity * x3] {
                        row.push(' ');
                        row.push_str(&fmt9(x));
                    }
                    for s in 0..N_SPECIES {
                        row.push(' ');
                        row.push_str(&fmt9(species.fields[s][c]));
                    }
                    writeln!(w, "{row}")?;
                }
            }
        }
        w.flush()
    })();
    with_path(path, result)
}

/// Parsed snapshot file.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub counts: [usize; 3],
    pub step: usize,
    pub time: f64,
    /// `(s, n, sigma)` index of each record.
    pub indices: Vec<[usize; 3]>,
    /// The 15 numeric columns of each record, from `x1` to `O`.
    pub values: Vec<[f64; 15]>,
}

fn bad(path: &Path, msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, format!("{}: {}", path.display(), msg.into()))
}

pub fn read_snapshot(path: &Path) -> io::Result<Snapshot> {
    let reader = BufReader::new(with_path(path, File::open(path))?);
    let mut lines = reader.lines();
    let mut next = || -> io::Result<String> {
        lines.next().ok_or_else(|| bad(path, "unexpected end of file"))?
    };
    next()?;
    let mut header = |name: &str| -> io::Result<String> {
        let line = next()?;
        line.strip_prefix(name)
            .map(|v| v.trim().to_string())
            .ok_or_else(|| bad(path, format!("expected `{name}`, got `{line}`")))
    };
    let parse_usize = |s: String| s.parse::<usize>().map_err(|e| bad(path, e.to_string()));
    let ns = parse_usize(header("n_streamwise")?)?;
    let nt = parse_usize(header("n_transverse")?)?;
    let nz = parse_usize(header("n_sigma")?)?;
    let step = parse_usize(header("step")?)?;
    let time = header("time")?.parse::<f64>().map_err(|e| bad(path, e.to_string()))?;
    if next()? != SNAPSHOT_COLUMNS {
        return Err(bad(path, "unexpected column header"));
    }
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for line in lines {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 18 {
            return Err(bad(path, format!("expected 18 columns, got {}", fields.len())));
        }
        let idx: Result<Vec<usize>, _> = fields[..3].iter().map(|f| f.parse::<usize>()).collect();
        let idx = idx.map_err(|e| bad(path, e.to_string()))?;
        let mut row = [0.0; 15];
        for (slot, f) in row.iter_mut().zip(&fields[3..]) {
            *slot = f.parse().map_err(|e: std::num::ParseFloatError| bad(path, e.to_string()))?;
        }
        indices.push([idx[0], idx[1], idx[2]]);
        values.push(row);
    }
    Ok(Snapshot { counts: [ns, nt, nz], step, time, indices, values })
}
