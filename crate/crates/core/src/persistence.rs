//! Kendall rank-correlation persistence of cross-sectional rankings.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::distances::{DistanceKind, DistanceMatrix};
use crate::returns::RiskAdjustedSeries;
use crate::{matrix, Error, Result};

/// Kendall tau-b, by Knight's merge-sort algorithm in `O(n log n)`.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::invalid("kendall tau needs at least two observations"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("kendall tau inputs must be finite"));
    }
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let n0 = (n * (n - 1) / 2) as u64;
    let tied_pairs = |run: u64| run * (run - 1) / 2;
    // pairs tied in x, and tied in both
    let (mut n1, mut n3) = (0_u64, 0_u64);
    let (mut run_x, mut run_xy) = (1_u64, 1_u64);
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        if x[a] == x[b] {
            run_x += 1;
            if y[a] == y[b] {
                run_xy += 1;
            } else {
                n3 += tied_pairs(run_xy);
                run_xy = 1;
            }
        } else {
            n1 += tied_pairs(run_x);
            n3 += tied_pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    n1 += tied_pairs(run_x);
    n3 += tied_pairs(run_xy);

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let swaps = merge_sort_swaps(&mut ys);
    let mut n2 = 0_u64;
    let mut run_y = 1_u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run_y += 1;
        } else {
            n2 += tied_pairs(run_y);
            run_y = 1;
        }
    }
    n2 += tied_pairs(run_y);

    if n1 == n0 || n2 == n0 {
        return Err(Error::invalid("kendall tau is undefined for an all-tied vector"));
    }
    let concordant_minus_discordant = n0 as i64 - n1 as i64 - n2 as i64 + n3 as i64 - 2 * swaps as i64;
    let denom = ((n0 - n1) as f64).sqrt() * ((n0 - n2) as f64).sqrt();
    Ok((concordant_minus_discordant as f64 / denom).clamp(-1.0, 1.0) + 0.0)
}

/// Sorts ascending, returning the number of strict inversions.
fn merge_sort_swaps(v: &mut [f64]) -> u64 {
    let n = v.len();
    let mut swaps = 0_u64;
    let mut width = 1;
    let (mut src, mut dst) = (v.to_vec(), vec![0.0; n]);
    while width < n {
        let mut start = 0;
        while start < n {
            let mid = (start + width).min(n);
            let end = (start + 2 * width).min(n);
            let (mut i, mut j, mut k) = (start, mid, start);
            while i < mid && j < end {
                if src[j] < src[i] {
                    dst[k] = src[j];
                    swaps += (mid - i) as u64;
                    j += 1;
                } else {
                    dst[k] = src[i];
                    i += 1;
                }
                k += 1;
            }
            dst[k..k + mid - i].copy_from_slice(&src[i..mid]);
            k += mid - i;
            dst[k..k + end - j].copy_from_slice(&src[j..end]);
            start = end;
        }
        std::mem::swap(&mut src, &mut dst);
        width *= 2;
    }
    v.copy_from_slice(&src);
    swaps
}

/// `k(s,t)`: Kendall tau between the cross sections at times `s` and `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceMatrix {
    time_indices: Vec<usize>,
    values: Vec<f64>,
}

impl PersistenceMatrix {
    pub fn time_indices(&self) -> &[usize] {
        &self.time_indices
    }

    pub fn len(&self) -> usize {
        self.time_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_indices.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, s: usize, t: usize) -> f64 {
        self.values[s * self.len() + t]
    }

    fn ids(&self) -> Vec<String> {
        self.time_indices.iter().map(usize::to_string).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        matrix::write_matrix_csv(&self.ids(), &self.values, writer)
    }

    /// Inverse of [`PersistenceMatrix::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let (ids, values) = matrix::read_matrix_csv(reader)?;
        let time_indices = ids
            .iter()
            .map(|s| s.parse::<usize>().map_err(|e| Error::invalid(format!("bad time index `{s}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let n = time_indices.len();
        if matrix::asymmetry(n, &values) > 0.0 || (0..n).any(|i| values[i * n + i] != 1.0) {
            return Err(Error::invalid("persistence matrix must be symmetric with unit diagonal"));
        }
        if values.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::invalid("persistence entries must lie in [-1, 1]"));
        }
        Ok(Self { time_indices, values })
    }

    /// Upper triangle including the diagonal as `s,t,tau` rows.
    pub fn write_long_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["s", "t", "tau"])?;
        let n = self.len();
        for s in 0..n {
            for t in s..n {
                w.write_record([
                    self.time_indices[s].to_string(),
                    self.time_indices[t].to_string(),
                    self.values[s * n + t].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `1 - k(s,t)`, a dissimilarity in `[0, 2]` suitable for clustering.
    pub fn dissimilarity(&self) -> DistanceMatrix {
        let n = self.len();
        let mut values: Vec<f64> = self.values.iter().map(|k| 1.0 - k).collect();
        for i in 0..n {
            values[i * n + i] = 0.0;
        }
        DistanceMatrix::new(self.ids(), values, DistanceKind::Dissimilarity)
            .expect("persistence matrices are symmetric with unit diagonal")
    }
}

pub fn persistence_matrix(ra: &RiskAdjustedSeries) -> Result<PersistenceMatrix> {
    let w = ra.len();
    if w < 2 {
        return Err(Error::invalid("persistence matrix needs at least two time points"));
    }
    if ra.asset_ids().len() < 2 {
        return Err(Error::invalid("persistence matrix needs at least two assets"));
    }
    for t in 0..w {
        let row = ra.cross_section(t);
        if row.iter().all(|&v| v == row[0]) {
            return Err(Error::invalid(format!(
                "cross section on {} is entirely tied",
                ra.dates()[t]
            )));
        }
    }
    let rows: Vec<Vec<f64>> = (0..w)
        .into_par_iter()
        .map(|s| {
            ((s + 1)..w)
                .map(|t| kendall_tau(ra.cross_section(s), ra.cross_section(t)).expect("validated"))
                .collect()
        })
        .collect();
    let mut values = vec![1.0; w * w];
    for (s, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let t = s + 1 + off;
            values[s * w + t] = v;
            values[t * w + s] = v;
        }
    }
    Ok(PersistenceMatrix {
        time_indices: ra.indices().to_vec(),
        values,
    })
}

/// Unnormalized Frobenius norm over all entries.
pub fn persistence_norm(k: &PersistenceMatrix) -> f64 {
    matrix::frobenius(&k.values)
}
