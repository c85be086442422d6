//! CSV and JSON formats, written atomically.

use std::io::Write;
use std::path::Path;

use hydroctrl_core::evolution::Trajectory;
use hydroctrl_core::spectral::grid_points;
use hydroctrl_core::{Field, StatePair};
use serde::Serialize;

use crate::failure::Failure;

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::config(format!("{}: {e}", path.display()))
}

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_failure(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_failure(path, e))?;
    tmp.persist(path).map_err(|e| io_failure(path, e.error))?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report values serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    write_atomic(path, to_json(value).as_bytes())
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

/// CSV text from a header and numeric rows.
pub fn table_csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r.iter().map(|v| fmt_f64(*v)))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}

pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<(), Failure> {
    write_atomic(path, table_csv(header, rows).as_bytes())
}

/// Read a numeric CSV, checking the header.
pub fn read_table(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>, Failure> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_failure(path, e))?;
    let found: Vec<String> = r
        .headers()
        .map_err(|e| io_failure(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(io_failure(
            path,
            format!("expected columns {header:?}, found {found:?}"),
        ));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| io_failure(path, e))?;
        let row: Result<Vec<f64>, _> = rec.iter().map(|c| c.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| io_failure(path, format!("row {}: {e}", i + 1)))?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(io_failure(path, format!("row {} is not finite", i + 1)));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub const STATE_HEADER: [&str; 3] = ["x", "eta", "psi"];
pub const TRAJECTORY_HEADER: [&str; 4] = ["t", "x", "eta", "psi"];
pub const FORCING_HEADER: [&str; 3] = ["t", "x", "pressure"];

pub fn state_rows(u: &StatePair) -> Vec<Vec<f64>> {
    let (e, p) = (u.eta.to_grid_real(), u.psi.to_grid_real());
    grid_points(u.n())
        .iter()
        .enumerate()
        .map(|(j, &x)| vec![x, e[j], p[j]])
        .collect()
}

pub fn state_csv(u: &StatePair) -> String {
    table_csv(&STATE_HEADER, &state_rows(u))
}

/// Grid values of `(η, ψ)`; the row count must equal `n`.
pub fn read_state(path: &Path, n: usize) -> Result<StatePair, Failure> {
    let rows = read_table(path, &STATE_HEADER)?;
    if rows.len() != n {
        return Err(io_failure(
            path,
            format!("expected {n} grid rows, found {}", rows.len()),
        ));
    }
    let eta: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let psi: Vec<f64> = rows.iter().map(|r| r[2]).collect();
    let u = StatePair::new(Field::from_grid_real(&eta), Field::from_grid_real(&psi));
    u.validate()?;
    Ok(u)
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let rows: Vec<Vec<f64>> = traj
        .times
        .iter()
        .zip(&traj.states)
        .flat_map(|(&t, u)| {
            state_rows(u)
                .into_iter()
                .map(move |r| vec![t, r[0], r[1], r[2]])
        })
        .collect();
    table_csv(&TRAJECTORY_HEADER, &rows)
}

/// Pressure samples on the half-step grid.
pub fn forcing_csv(times: &[f64], forcing: &[Field]) -> String {
    let rows: Vec<Vec<f64>> = times
        .iter()
        .zip(forcing)
        .flat_map(|(&t, f)| {
            let vals = f.to_grid_real();
            grid_points(f.n())
                .into_iter()
                .zip(vals)
                .map(move |(x, v)| vec![t, x, v])
        })
        .collect();
    table_csv(&FORCING_HEADER, &rows)
}

/// Half-step sample times of a trajectory.
pub fn half_times(traj: &Trajectory) -> Vec<f64> {
    let h = traj.dt();
    (0..=2 * traj.steps()).map(|s| 0.5 * h * s as f64).collect()
}

/// Rows sharing one time value.
type TimeBlock = (f64, Vec<Vec<f64>>);

fn group_by_time(rows: &[Vec<f64>], n: usize, path: &Path) -> Result<Vec<TimeBlock>, Failure> {
    if rows.is_empty() || !rows.len().is_multiple_of(n) {
        return Err(io_failure(
            path,
            format!("row count {} is not a positive multiple of {n}", rows.len()),
        ));
    }
    rows.chunks(n)
        .map(|c| {
            let t = c[0][0];
            if c.iter().any(|r| r[0] != t) {
                return Err(io_failure(
                    path,
                    format!("block at t = {t} is not {n} rows long"),
                ));
            }
            Ok((t, c.to_vec()))
        })
        .collect()
}

/// Read a stored trajectory; a missing forcing file means no forcing.
pub fn read_trajectory(
    path: &Path,
    forcing: Option<&Path>,
    n: usize,
) -> Result<Trajectory, Failure> {
    let blocks = group_by_time(&read_table(path, &TRAJECTORY_HEADER)?, n, path)?;
    if blocks.len() < 2 {
        return Err(io_failure(
            path,
            "a trajectory needs at least two time levels",
        ));
    }
    let times: Vec<f64> = blocks.iter().map(|b| b.0).collect();
    let states: Vec<StatePair> = blocks
        .iter()
        .map(|(_, rows)| {
            let eta: Vec<f64> = rows.iter().map(|r| r[2]).collect();
            let psi: Vec<f64> = rows.iter().map(|r| r[3]).collect();
            StatePair::new(Field::from_grid_real(&eta), Field::from_grid_real(&psi))
        })
        .collect();
    let samples = 2 * (times.len() - 1) + 1;
    let forcing = match forcing {
        Some(fp) => {
            let blocks = group_by_time(&read_table(fp, &FORCING_HEADER)?, n, fp)?;
            if blocks.len() != samples {
                return Err(io_failure(
                    fp,
                    format!("expected {samples} forcing samples, found {}", blocks.len()),
                ));
            }
            blocks
                .iter()
                .map(|(_, rows)| {
                    Field::from_grid_real(&rows.iter().map(|r| r[2]).collect::<Vec<_>>())
                })
                .collect()
        }
        None => vec![Field::zeros(n); samples],
    };
    let traj = Trajectory {
        times,
        states,
        forcing,
    };
    traj.validate()?;
    Ok(traj)
}
