//! Plain-text serialization: matrices, vectors, and point-set CSV files.
//!
//! Every floating-point value is written with 17 significant digits so
//! files round-trip f64 values exactly.

use crate::error::{Error, Result};
use crate::Vec2;
use nalgebra::{DMatrix, DVector};
use std::path::Path;

/// Formats `x` with 17 significant digits (round-trip safe).
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Row-major whitespace-separated matrix, one row per line.
pub fn matrix_to_text(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_g17(m[(i, j)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn matrix_from_text(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>> = line
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("matrix line {}: bad value {f:?}", lineno + 1)))
            })
            .collect();
        rows.push(row?);
    }
    if rows.is_empty() {
        return Err(Error::Parse("empty matrix file".into()));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse("ragged matrix rows".into()));
    }
    let nrows = rows.len();
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn write_matrix<P: AsRef<Path>>(path: P, m: &DMatrix<f64>) -> Result<()> {
    std::fs::write(path, matrix_to_text(m))?;
    Ok(())
}

pub fn read_matrix<P: AsRef<Path>>(path: P) -> Result<DMatrix<f64>> {
    matrix_from_text(&std::fs::read_to_string(path)?)
}

/// One value per line.
pub fn vector_to_text(v: &DVector<f64>) -> String {
    let mut out = String::new();
    for x in v.iter() {
        out.push_str(&fmt_g17(*x));
        out.push('\n');
    }
    out
}

pub fn vector_from_text(text: &str) -> Result<DVector<f64>> {
    let values: Result<Vec<f64>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(lineno, l)| {
            l.parse::<f64>()
                .map_err(|_| Error::Parse(format!("vector line {}: bad value {l:?}", lineno + 1)))
        })
        .collect();
    Ok(DVector::from_vec(values?))
}

pub fn write_vector<P: AsRef<Path>>(path: P, v: &DVector<f64>) -> Result<()> {
    std::fs::write(path, vector_to_text(v))?;
    Ok(())
}

pub fn read_vector<P: AsRef<Path>>(path: P) -> Result<DVector<f64>> {
    vector_from_text(&std::fs::read_to_string(path)?)
}

/// Point set as `x1, x2` CSV with a header line.
pub fn points_to_csv(points: &[Vec2]) -> String {
    let mut out = String::from("x1,x2\n");
    for p in points {
        out.push_str(&format!("{},{}\n", fmt_g17(p.x), fmt_g17(p.y)));
    }
    out
}

pub fn points_from_csv(text: &str) -> Result<Vec<Vec2>> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("x1")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(Error::Parse(format!(
                "points line {}: expected `x1, x2`",
                lineno + 1
            )));
        }
        let x: f64 = fields[0]
            .parse()
            .map_err(|_| Error::Parse(format!("points line {}: bad x1", lineno + 1)))?;
        let y: f64 = fields[1]
            .parse()
            .map_err(|_| Error::Parse(format!("points line {}: bad x2", lineno + 1)))?;
        points.push(Vec2::new(x, y));
    }
    Ok(points)
}

pub fn write_points_csv<P: AsRef<Path>>(path: P, points: &[Vec2]) -> Result<()> {
    std::fs::write(path, points_to_csv(points))?;
    Ok(())
}

pub fn read_points_csv<P: AsRef<Path>>(path: P) -> Result<Vec<Vec2>> {
    points_from_csv(&std::fs::read_to_string(path)?)
}

/// Source/image pairs as `x1, x2, y1, y2` CSV.
pub fn deformed_points_to_csv(sources: &[Vec2], images: &[Vec2]) -> String {
    let mut out = String::from("x1,x2,y1,y2\n");
    for (s, m) in sources.iter().zip(images) {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_g17(s.x),
            fmt_g17(s.y),
            fmt_g17(m.x),
            fmt_g17(m.y)
        ));
    }
    out
}
