//! CSV rasters (one row per cell: centre coordinates, then values) and the
//! JSON grid header that accompanies them.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ScalarField, SpdField, VectorField};
use crate::grid::{Domain, Grid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells: Vec<usize>,
    pub domain: Domain,
    pub columns: Vec<String>,
}

impl GridHeader {
    pub fn new(g: &Grid, columns: Vec<String>) -> Self {
        GridHeader { lo: g.lo().to_vec(), hi: g.hi().to_vec(), cells: g.cells().to_vec(), domain: g.domain().clone(), columns }
    }
}

fn coord_names(n: usize) -> Vec<String> {
    match n {
        1 => vec!["x".into()],
        2 => vec!["x".into(), "y".into()],
        3 => vec!["x".into(), "y".into(), "z".into()],
        _ => (0..n).map(|a| format!("x{a}")).collect(),
    }
}

/// Rows `coords..., values...` for `k` values per cell from `at(cell)`.
fn raster(g: &Grid, names: &[String], mut at: impl FnMut(usize, &mut Vec<f64>)) -> String {
    let mut s = String::new();
    let mut head = coord_names(g.n());
    head.extend(names.iter().cloned());
    s.push_str(&head.join(","));
    s.push('\n');
    let mut x = vec![0.0; g.n()];
    let mut vals = vec![];
    for i in 0..g.len() {
        g.center_into(i, &mut x);
        vals.clear();
        at(i, &mut vals);
        let mut first = true;
        for v in x.iter().chain(&vals) {
            if !first {
                s.push(',');
            }
            first = false;
            // shortest round-trip representation
            let _ = write!(s, "{v:?}");
        }
        s.push('\n');
    }
    s
}

pub fn scalar_csv(f: &ScalarField, name: &str) -> String {
    raster(&f.grid, &[name.to_string()], |i, v| v.push(f.values[i]))
}

pub fn vector_csv(f: &VectorField, name: &str) -> String {
    let names: Vec<String> = (0..f.comps).map(|c| format!("{name}{c}")).collect();
    raster(&f.grid, &names, |i, v| v.extend_from_slice(f.at(i)))
}

/// Matrices in row-major order.
pub fn spd_csv(w: &SpdField, name: &str) -> String {
    let d = w.d;
    let names: Vec<String> = (0..d * d).map(|k| format!("{name}{}{}", k / d, k % d)).collect();
    raster(&w.grid, &names, |i, v| v.extend_from_slice(w.matrix_slice(i)))
}

/// Several scalar fields on one grid as columns of one raster.
pub fn columns_csv(g: &Grid, cols: &[(&str, &[f64])]) -> Result<String> {
    if cols.iter().any(|(_, v)| v.len() != g.len()) {
        return Err(Error::GridMismatch);
    }
    let names: Vec<String> = cols.iter().map(|(n, _)| n.to_string()).collect();
    Ok(raster(g, &names, |i, v| v.extend(cols.iter().map(|(_, c)| c[i]))))
}

/// Parse a scalar raster written by [`scalar_csv`] back onto `g`.
pub fn read_scalar_csv(g: &Grid, text: &str) -> Result<ScalarField> {
    let n = g.n();
    let mut values = Vec::with_capacity(g.len());
    for (k, line) in text.lines().skip(1).enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != n + 1 {
            return Err(Error::Parse(format!("line {}: expected {} columns, got {}", k + 2, n + 1, cols.len())));
        }
        let v: f64 = cols[n].trim().parse().map_err(|e| Error::Parse(format!("line {}: {e}", k + 2)))?;
        values.push(v);
    }
    ScalarField::new(g.clone(), values)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_round_trip() {
        let g = Grid::unit_square(5).unwrap();
        let f = ScalarField::from_fn(&g, |x| x[0].sin() / (1.0 + x[1]));
        let s = scalar_csv(&f, "w");
        assert!(s.starts_with("x,y,w\n"));
        assert_eq!(s.lines().count(), 26);
        let back = read_scalar_csv(&g, &s).unwrap();
        assert_eq!(back.values, f.values);
        assert!(read_scalar_csv(&g, "x,y,w\n0.1,0.2\n").is_err());
    }

    #[test]
    fn matrix_rows() {
        let g = Grid::unit_interval(2).unwrap();
        let w = SpdField::identity(&g, 2);
        let s = spd_csv(&w, "W");
        assert_eq!(s.lines().next().unwrap(), "x,W00,W01,W10,W11");
        assert_eq!(s.lines().nth(1).unwrap(), "0.25,1.0,0.0,0.0,1.0");
        let h = GridHeader::new(&g, vec!["W".into()]);
        let j = serde_json::to_string(&h).unwrap();
        assert_eq!(serde_json::from_str::<GridHeader>(&j).unwrap(), h);
    }
}
