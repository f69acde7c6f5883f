//! CSV and JSON artifacts.
//!
//! Floats are written with 17 significant digits so every file round-trips
//! bit-for-bit.

use std::fs;
use std::path::Path;

use geowarp_core::manifolds::{DistanceMatrix, ManifoldKind, PointCloud};
use geowarp_core::Matrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), msg: msg.into() }
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
        }
        _ => Ok(()),
    }
}

/// Writes a header row (if non-empty) and numeric rows.
pub fn write_table<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: AsRef<[f64]>,
{
    ensure_parent(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err(path))?;
    if !header.is_empty() {
        w.write_record(header).map_err(csv_err(path))?;
    }
    for row in rows {
        w.write_record(row.as_ref().iter().map(|v| fmt_f64(*v))).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Reads a numeric table; returns the header (empty when `has_header` is
/// false) and rows of equal width.
pub fn read_table(path: &Path, has_header: bool) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(has_header).from_path(path).map_err(csv_err(path))?;
    let header = if has_header {
        r.headers().map_err(csv_err(path))?.iter().map(|h| h.trim().to_string()).collect()
    } else {
        Vec::new()
    };
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| format_err(path, format!("data row {}: {e}", line + 1)))?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn to_matrix(path: &Path, rows: &[Vec<f64>], width: usize) -> Result<Matrix> {
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(format_err(path, format!("row {} has {} fields, expected {width}", i + 1, r.len())));
    }
    Ok(Matrix::from_vec(rows.len(), width, rows.concat()))
}

pub fn point_cloud_header(dim: usize, with_params: bool) -> Vec<String> {
    let mut h: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    if with_params {
        h.extend(["u".to_string(), "v".to_string()]);
    }
    h
}

/// Header `x0,...,x{D-1}` plus `u,v` when intrinsic coordinates are known.
pub fn write_point_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let header = point_cloud_header(cloud.dim(), cloud.params.is_some());
    let rows = (0..cloud.len()).map(|i| {
        let mut r = cloud.point(i).to_vec();
        if let Some(p) = &cloud.params {
            r.extend_from_slice(p.row(i));
        }
        r
    });
    write_table(path, &header, rows)
}

/// Reads a point cloud; `kind` is attached as metadata (files do not carry it).
pub fn read_point_cloud(path: &Path, kind: ManifoldKind) -> Result<PointCloud> {
    let (header, rows) = read_table(path, true)?;
    let with_params = header.len() >= 2 && header[header.len() - 2..] == ["u", "v"];
    let dim = header.len() - if with_params { 2 } else { 0 };
    if dim == 0 || header[..dim] != point_cloud_header(dim, false)[..] {
        return Err(format_err(path, format!("expected header x0,...,x{{D-1}}[,u,v], got {}", header.join(","))));
    }
    let all = to_matrix(path, &rows, header.len())?;
    let points = all.select_cols(&(0..dim).collect::<Vec<_>>());
    let params = with_params.then(|| all.select_cols(&[dim, dim + 1]));
    let cloud = PointCloud { points, params, kind, noise_sigma: 0.0, rotation: None };
    cloud.validate().map_err(|e| format_err(path, e.to_string()))?;
    Ok(cloud)
}

/// N rows of N values, no header.
pub fn write_distance_matrix(path: &Path, d: &DistanceMatrix) -> Result<()> {
    write_table(path, &[], d.as_matrix().row_iter())
}

pub fn read_distance_matrix(path: &Path) -> Result<DistanceMatrix> {
    let (_, rows) = read_table(path, false)?;
    let m = to_matrix(path, &rows, rows.len())?;
    DistanceMatrix::new(m).map_err(|e| format_err(path, e.to_string()))
}

/// Endpoint index pairs with header `i,j`.
pub fn write_pairs(path: &Path, pairs: &[(usize, usize)]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["i", "j"]).map_err(csv_err(path))?;
    for (i, j) in pairs {
        w.write_record([i.to_string(), j.to_string()]).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn read_pairs(path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut out = Vec::new();
    for rec in r.deserialize::<(usize, usize)>() {
        out.push(rec.map_err(csv_err(path))?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    fs::write(path, text + "\n").map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}
