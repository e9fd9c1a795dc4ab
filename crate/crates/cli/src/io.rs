//! File formats: dataset and trace CSV, ground truth and key-value summaries.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! store/load cycle reproduces every value bit for bit.

use std::fs::File;
use std::path::Path;

use edpm_core::gibbs::{ChainTrace, TraceRecord};
use edpm_core::simgen::GroundTruth;
use edpm_core::Dataset;
use serde::Serialize;

use crate::error::{CliError, Result};

fn parse_err(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.kind() {
        csv::ErrorKind::Io(_) => CliError::io(path, std::io::Error::other(e.to_string())),
        _ => parse_err(path, e.to_string()),
    }
}

/// Reads a `y,x1,...,xd` CSV file. Column order is free; `x` columns must be
/// numbered `1..=d` without gaps.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let y_col = names
        .iter()
        .position(|h| *h == "y")
        .ok_or_else(|| parse_err(path, "missing column `y`"))?;
    let d = names.iter().filter(|h| h.starts_with('x')).count();
    if d == 0 {
        return Err(parse_err(path, "missing covariate columns `x1`..`xd`"));
    }
    let x_cols: Vec<usize> = (1..=d)
        .map(|l| {
            let want = format!("x{l}");
            names
                .iter()
                .position(|h| *h == want)
                .ok_or_else(|| parse_err(path, format!("missing column `{want}`")))
        })
        .collect::<Result<_>>()?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (r, record) in reader.records().enumerate() {
        // Line numbers are one-based and count the header.
        let line = r + 2;
        let record = record.map_err(|e| csv_err(path, e))?;
        let field = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("").trim();
            let v: f64 = raw.parse().map_err(|_| {
                parse_err(path, format!("line {line}, column `{}`: cannot parse `{raw}` as a number", names[col]))
            })?;
            if !v.is_finite() {
                return Err(CliError::Validation(format!(
                    "{}: line {line}, column `{}`: value must be finite",
                    path.display(),
                    names[col]
                )));
            }
            Ok(v)
        };
        ys.push(field(y_col)?);
        for &c in &x_cols {
            xs.push(field(c)?);
        }
    }
    if ys.is_empty() {
        return Err(CliError::Validation(format!("{}: no data rows", path.display())));
    }
    Ok(Dataset::new(xs, ys, d)?)
}

pub fn store_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["y".to_string()];
    header.extend((1..=data.dim()).map(|l| format!("x{l}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for i in 0..data.len() {
        let mut row = vec![data.y(i).to_string()];
        row.extend(data.row(i).iter().map(f64::to_string));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes one row per kept iteration:
/// `iteration,alpha_theta,alpha_psi_1..N,occupied_theta,occupied_pairs,eyx_1..P,scored_per_sweep`.
pub fn store_trace(trace: &ChainTrace, path: &Path) -> Result<()> {
    let (n_alpha, n_probe) = trace
        .records
        .first()
        .map(|r| (r.alpha_psi.len(), r.regression.len()))
        .unwrap_or((0, 0));
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["iteration".to_string(), "alpha_theta".to_string()];
    header.extend((1..=n_alpha).map(|k| format!("alpha_psi_{k}")));
    header.push("occupied_theta".into());
    header.push("occupied_pairs".into());
    header.extend((1..=n_probe).map(|p| format!("eyx_{p}")));
    header.push("scored_per_sweep".into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in &trace.records {
        let mut row = vec![r.iteration.to_string(), r.alpha_theta.to_string()];
        row.extend(r.alpha_psi.iter().map(f64::to_string));
        row.push(r.occupied_theta.to_string());
        row.push(r.occupied_pairs.to_string());
        row.extend(r.regression.iter().map(f64::to_string));
        row.push(trace.scored_per_sweep.to_string());
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn load_trace(path: &Path) -> Result<ChainTrace> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(path, format!("missing column `{name}`")))
    };
    let (it, at, ot, op, sc) = (
        col("iteration")?,
        col("alpha_theta")?,
        col("occupied_theta")?,
        col("occupied_pairs")?,
        col("scored_per_sweep")?,
    );
    let alpha_cols: Vec<usize> = (0..headers.len()).filter(|&c| headers[c].starts_with("alpha_psi_")).collect();
    let probe_cols: Vec<usize> = (0..headers.len()).filter(|&c| headers[c].starts_with("eyx_")).collect();
    let mut trace = ChainTrace::default();
    for (r, record) in reader.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| csv_err(path, e))?;
        fn get<T: std::str::FromStr>(rec: &csv::StringRecord, c: usize, name: &str, line: usize, path: &Path) -> Result<T> {
            let raw = rec.get(c).unwrap_or("");
            raw.parse()
                .map_err(|_| parse_err(path, format!("line {line}, column `{name}`: cannot parse `{raw}`")))
        }
        let h = |c: usize| headers[c].to_string();
        trace.scored_per_sweep = get(&record, sc, &h(sc), line, path)?;
        trace.records.push(TraceRecord {
            iteration: get(&record, it, &h(it), line, path)?,
            alpha_theta: get(&record, at, &h(at), line, path)?,
            alpha_psi: alpha_cols.iter().map(|&c| get(&record, c, &h(c), line, path)).collect::<Result<_>>()?,
            occupied_theta: get(&record, ot, &h(ot), line, path)?,
            occupied_pairs: get(&record, op, &h(op), line, path)?,
            regression: probe_cols.iter().map(|&c| get(&record, c, &h(c), line, path)).collect::<Result<_>>()?,
        });
    }
    Ok(trace)
}

/// One ELBO value per sweep.
pub fn store_elbo(trace: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["sweep", "elbo"]).map_err(|e| csv_err(path, e))?;
    for (i, v) in trace.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
struct TruthFile<'a> {
    /// Zero-based indices.
    assign_theta: &'a [usize],
    assign_psi: &'a [usize],
    sigma: f64,
    sticks_theta: &'a [f64],
    sticks_psi: &'a [Vec<f64>],
    weights_theta: &'a [f64],
    weights_psi: &'a [Vec<f64>],
    theta: &'a [Vec<f64>],
    psi: &'a [Vec<Vec<f64>>],
}

pub fn store_truth(truth: &GroundTruth, path: &Path) -> Result<()> {
    let file = TruthFile {
        assign_theta: &truth.assign.theta,
        assign_psi: &truth.assign.psi,
        sigma: truth.atoms.sigma_psi,
        sticks_theta: &truth.sticks.theta,
        sticks_psi: &truth.sticks.psi,
        weights_theta: &truth.weights.theta,
        weights_psi: &truth.weights.psi,
        theta: &truth.atoms.theta,
        psi: &truth.atoms.psi,
    };
    write_toml(&file, path)
}

pub fn write_toml<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| CliError::Validation(e.to_string()))?;
    write_text(&text, path)
}

pub fn write_text(text: &str, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let data = Dataset::new(vec![0.1, 1.0 / 3.0, -2e-300, 7.0], vec![std::f64::consts::PI, -1.5], 2).unwrap();
        store_dataset(&data, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), data);
    }

    #[test]
    fn missing_y_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_text("x1,x2\n1,2\n", &p).unwrap();
        let e = load_dataset(&p).unwrap_err();
        assert!(matches!(e, CliError::Parse { .. }));
        assert!(e.to_string().contains("`y`"), "{e}");
    }

    #[test]
    fn bad_cell_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_text("y,x1\n1,2\n3,abc\n", &p).unwrap();
        let e = load_dataset(&p).unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("`x1`"), "{e}");
        write_text("y,x1\n1,2\ninf,1\n", &p).unwrap();
        let e = load_dataset(&p).unwrap_err();
        assert!(matches!(e, CliError::Validation(_)));
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn trace_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let trace = ChainTrace {
            records: (0..5)
                .map(|i| TraceRecord {
                    iteration: 10 + i,
                    alpha_theta: 1.0 / (i as f64 + 3.0),
                    alpha_psi: vec![0.1 * i as f64, 2.0f64.sqrt(), 1e-17],
                    occupied_theta: i,
                    occupied_pairs: 2 * i,
                    regression: vec![std::f64::consts::E * i as f64, -0.3],
                })
                .collect(),
            scored_per_sweep: 1234,
        };
        store_trace(&trace, &p).unwrap();
        assert_eq!(load_trace(&p).unwrap(), trace);
    }
}
