//! Labelled square matrices and their CSV form.
//!
//! The CSV layout is a header `id,<id_1>,...,<id_n>` followed by one row per
//! id: `<id_i>,<v_i1>,...,<v_in>`. Values use the shortest representation
//! that round-trips.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::{Error, Result};

/// Fill a symmetric `n×n` row-major matrix from the strict upper triangle.
/// The diagonal is set to `diag`.
pub fn symmetric_from_fn<F>(n: usize, diag: f64, f: F) -> Vec<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| ((i + 1)..n).map(|j| f(i, j)).collect())
        .collect();
    let mut out = vec![diag; n * n];
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    out
}

pub fn write_matrix_csv<W: Write>(ids: &[String], values: &[f64], writer: W) -> Result<()> {
    let n = ids.len();
    debug_assert_eq!(values.len(), n * n);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = Vec::with_capacity(n + 1);
    header.push("id".to_string());
    header.extend(ids.iter().cloned());
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = Vec::with_capacity(n + 1);
        row.push(id.clone());
        row.extend(values[i * n..(i + 1) * n].iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(reader: R) -> Result<(Vec<String>, Vec<f64>)> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    let ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let n = ids.len();
    let mut values = Vec::with_capacity(n * n);
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != n + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", n + 1, rec.len()),
            });
        }
        if rec[0] != ids[rows] {
            return Err(Error::Parse {
                line,
                message: format!("row id `{}` does not match column id `{}`", &rec[0], ids[rows]),
            });
        }
        for field in rec.iter().skip(1) {
            values.push(field.trim().parse::<f64>().map_err(|e| Error::Parse {
                line,
                message: format!("bad number `{field}`: {e}"),
            })?);
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::invalid(format!("matrix has {n} columns but {rows} rows")));
    }
    Ok((ids, values))
}

/// Largest `|m_ij - m_ji|`.
pub fn asymmetry(n: usize, values: &[f64]) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((values[i * n + j] - values[j * n + i]).abs());
        }
    }
    worst
}

/// Frobenius norm over every entry.
pub fn frobenius(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}
