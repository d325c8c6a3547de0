//! Plot-ready data derived from a trajectory CSV: state norms, a zoom on the
//! residual region and the bound curve.

use std::path::{Path, PathBuf};

use dlcontrol::linalg::{parse_rational, rational_to_f64};

use crate::CliError;

pub const FILES: [&str; 3] = ["state_norms.csv", "residual_zoom.csv", "bound_curve.csv"];

struct Row {
    k: usize,
    x: Vec<f64>,
    bound: String,
    norm_xc: String,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Trajectory(msg.into())
}

fn read(path: &Path) -> Result<(Vec<String>, Vec<Row>), CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column `{name}`")))
    };
    let (k_col, bound_col, norm_col) = (col("k")?, col("bound")?, col("norm_xc")?);
    let x_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("x_"))
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let k = record[k_col].parse().map_err(|_| bad(format!("bad step `{}`", &record[k_col])))?;
        let x = x_cols
            .iter()
            .map(|(i, _)| parse_rational(&record[*i]).map(|v| rational_to_f64(&v)).map_err(|e| bad(e.to_string())))
            .collect::<Result<_, _>>()?;
        rows.push(Row {
            k,
            x,
            bound: record[bound_col].to_string(),
            norm_xc: record[norm_col].to_string(),
        });
    }
    Ok((x_cols.into_iter().map(|(_, h)| h).collect(), rows))
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row).map_err(io)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn norms(x: &[f64]) -> (f64, f64) {
    let two = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let inf = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    (two, inf)
}

/// Writes the three data files into `out` and returns their paths.
pub fn export(trajectory: &Path, out: &Path, zoom_from: Option<usize>) -> Result<Vec<PathBuf>, CliError> {
    let (x_names, rows) = read(trajectory)?;
    std::fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let paths: Vec<PathBuf> = FILES.iter().map(|f| out.join(f)).collect();
    let strings = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();

    write_csv(
        &paths[0],
        &strings(&["k", "norm_x", "norm_x_inf", "norm_xc"]),
        rows.iter().map(|r| {
            let (two, inf) = norms(&r.x);
            vec![r.k.to_string(), format!("{two:.9e}"), format!("{inf:.9e}"), r.norm_xc.clone()]
        }),
    )?;

    let last = rows.iter().map(|r| r.k).max().unwrap_or(0);
    let from = zoom_from.unwrap_or(last.saturating_sub(10));
    let mut header = vec!["k".to_string()];
    header.extend(x_names);
    header.push("norm_x_inf".into());
    write_csv(
        &paths[1],
        &header,
        rows.iter().filter(|r| r.k >= from).map(|r| {
            let mut row = vec![r.k.to_string()];
            row.extend(r.x.iter().map(|v| format!("{v}")));
            row.push(format!("{}", norms(&r.x).1));
            row
        }),
    )?;

    write_csv(
        &paths[2],
        &strings(&["k", "bound", "norm_xc"]),
        rows.iter().map(|r| vec![r.k.to_string(), r.bound.clone(), r.norm_xc.clone()]),
    )?;
    Ok(paths)
}
