//! Rolling correlation matrices, their eigenspectra, and comparisons between
//! the eigenspectra of two collections.

use std::io::{Read, Write};
use std::ops::RangeInclusive;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::returns::ReturnsPanel;
use crate::{stats, Error, Result};

/// Default rolling window length, in returns.
pub const DEFAULT_WINDOW: usize = 60;
/// Number of leading explained-variance ratios compared by default.
pub const DEFAULT_DD_COMPONENTS: usize = 10;

const SYMMETRY_TOL: f64 = 1e-12;
const NEGATIVE_EIGEN_TOL: f64 = 1e-10;

/// Pearson correlation matrix of one rolling window.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    asset_ids: Arc<[String]>,
    values: DMatrix<f64>,
    window_end: usize,
}

impl CorrelationMatrix {
    /// Wrap an existing matrix, checking symmetry, unit diagonal and range.
    pub fn new(asset_ids: Arc<[String]>, values: DMatrix<f64>, window_end: usize) -> Result<Self> {
        let m = asset_ids.len();
        if values.nrows() != m || values.ncols() != m {
            return Err(Error::invalid("correlation matrix shape does not match asset ids"));
        }
        for i in 0..m {
            if values[(i, i)] != 1.0 {
                return Err(Error::invalid(format!("correlation diagonal entry {i} is not 1")));
            }
            for j in 0..m {
                let v = values[(i, j)];
                if !(-1.0..=1.0).contains(&v) {
                    return Err(Error::invalid(format!("correlation entry {v} outside [-1, 1]")));
                }
                if (v - values[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::invalid("correlation matrix is not symmetric"));
                }
            }
        }
        Ok(Self {
            asset_ids,
            values,
            window_end,
        })
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Return-axis index of the last return in the window.
    pub fn window_end(&self) -> usize {
        self.window_end
    }

    pub fn dim(&self) -> usize {
        self.asset_ids.len()
    }
}

/// Correlation of standardized window columns, `(1/T1) * Z * Z^T`.
fn window_correlation(r: &ReturnsPanel, lo: usize, len: usize) -> Result<DMatrix<f64>> {
    let m = r.n_assets();
    let z: Vec<Vec<f64>> = r
        .columns()
        .zip(r.asset_ids())
        .map(|(c, id)| {
            let w = &c[lo..lo + len];
            let (mean, sd) = stats::mean_std(w).ok_or_else(|| Error::ZeroVariance {
                asset: id.clone(),
                context: format!("in the correlation window ending at return {}", r.dates()[lo + len - 1]),
            })?;
            Ok(w.iter().map(|v| (v - mean) / sd).collect())
        })
        .collect::<Result<_>>()?;
    let mut out = DMatrix::identity(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let dot: f64 = z[i].iter().zip(&z[j]).map(|(a, b)| a * b).sum();
            let v = (dot / len as f64).clamp(-1.0, 1.0);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// One correlation matrix per trailing window of `window` returns, for every
/// window end `t` in `window..=T-1` on the return axis. Each window is
/// standardized on its own.
pub fn rolling_correlation(r: &ReturnsPanel, window: usize) -> Result<Vec<CorrelationMatrix>> {
    if window < 2 {
        return Err(Error::invalid("correlation window must hold at least 2 returns"));
    }
    let n = r.n_obs();
    if n < window {
        return Err(Error::invalid(format!(
            "{n} returns are fewer than the correlation window {window}"
        )));
    }
    let ids: Arc<[String]> = r.asset_ids().to_vec().into();
    let first = *r.indices().start();
    (0..=n - window)
        .into_par_iter()
        .map(|lo| {
            let values = window_correlation(r, lo, window)?;
            Ok(CorrelationMatrix {
                asset_ids: ids.clone(),
                values,
                window_end: first + lo + window - 1,
            })
        })
        .collect()
}

/// Correlation matrix over the whole returns panel.
pub fn full_correlation(r: &ReturnsPanel) -> Result<CorrelationMatrix> {
    let values = window_correlation(r, 0, r.n_obs())?;
    Ok(CorrelationMatrix {
        asset_ids: r.asset_ids().to_vec().into(),
        values,
        window_end: *r.indices().end(),
    })
}

/// Spectral decomposition `C = V diag(λ) V^T` with `λ` descending.
#[derive(Debug, Clone)]
pub struct Eigendecomposition {
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns, in eigenvalue order.
    pub eigenvectors: DMatrix<f64>,
}

impl Eigendecomposition {
    /// Principal-component coefficients: row `m` maps standardized returns
    /// onto the `m`-th component.
    pub fn loadings(&self) -> DMatrix<f64> {
        self.eigenvectors.transpose()
    }

    /// Principal components of a standardized window (`M×T1` output).
    pub fn components(&self, standardized: &ReturnsPanel) -> Result<DMatrix<f64>> {
        let m = self.eigenvalues.len();
        if standardized.n_assets() != m {
            return Err(Error::invalid("component projection: asset count mismatch"));
        }
        let t = standardized.n_obs();
        let r = DMatrix::from_fn(m, t, |i, s| standardized.column(i)[s]);
        Ok(self.loadings() * r)
    }

    /// `λ_m / M`.
    pub fn explained_variance_ratios(&self) -> Vec<f64> {
        let m = self.eigenvalues.len() as f64;
        self.eigenvalues.iter().map(|l| l / m).collect()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.eigenvalues));
        &self.eigenvectors * d * self.eigenvectors.transpose()
    }
}

fn check_symmetric(values: &DMatrix<f64>) -> Result<()> {
    if values.nrows() != values.ncols() {
        return Err(Error::invalid("matrix is not square"));
    }
    let n = values.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (values[(i, j)] - values[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(Error::invalid(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

fn clamp_spectrum(mut eigenvalues: Vec<f64>) -> Result<Vec<f64>> {
    for l in eigenvalues.iter_mut() {
        if *l < 0.0 {
            if *l < -NEGATIVE_EIGEN_TOL {
                return Err(Error::Computation(format!(
                    "matrix is not positive semi-definite (eigenvalue {l})"
                )));
            }
            *l = 0.0;
        }
    }
    Ok(eigenvalues)
}

/// Eigendecomposition of a symmetric positive semi-definite matrix.
/// Eigenvalues within `1e-10` below zero are clamped to zero.
pub fn eigendecompose_matrix(values: &DMatrix<f64>) -> Result<Eigendecomposition> {
    check_symmetric(values)?;
    let eig = values.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = clamp_spectrum(order.iter().map(|&i| eig.eigenvalues[i]).collect())?;
    let eigenvectors = DMatrix::from_fn(values.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(Eigendecomposition {
        eigenvalues,
        eigenvectors,
    })
}

pub fn eigendecompose(c: &CorrelationMatrix) -> Result<Eigendecomposition> {
    eigendecompose_matrix(&c.values)
}

/// Descending, clamped eigenvalues only.
pub fn eigenvalues(c: &CorrelationMatrix) -> Result<Vec<f64>> {
    check_symmetric(&c.values)?;
    let mut ev: Vec<f64> = c.values.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    clamp_spectrum(ev)
}

/// Explained-variance ratios `λ_m / M` of every rolling window.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenspectrumSurface {
    window_ends: Vec<usize>,
    n_components: usize,
    /// Row-major `W × n_components`.
    ratios: Vec<f64>,
}

impl EigenspectrumSurface {
    /// Rows must be on consecutive window ends starting at `first_end`.
    pub fn new(first_end: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_components = rows.first().map_or(0, Vec::len);
        if n_components == 0 {
            return Err(Error::invalid("empty eigenspectrum surface"));
        }
        let mut ratios = Vec::with_capacity(rows.len() * n_components);
        for row in &rows {
            if row.len() != n_components {
                return Err(Error::invalid("ragged eigenspectrum surface"));
            }
            ratios.extend_from_slice(row);
        }
        Ok(Self {
            window_ends: (first_end..first_end + rows.len()).collect(),
            n_components,
            ratios,
        })
    }

    pub fn window_ends(&self) -> &[usize] {
        &self.window_ends
    }

    pub fn n_windows(&self) -> usize {
        self.window_ends.len()
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn row(&self, w: usize) -> &[f64] {
        &self.ratios[w * self.n_components..(w + 1) * self.n_components]
    }

    /// Row for the window ending at return index `end`.
    pub fn at(&self, end: usize) -> Option<&[f64]> {
        let first = *self.window_ends.first()?;
        let w = end.checked_sub(first)?;
        (w < self.n_windows()).then(|| self.row(w))
    }

    /// Window-end domain of the surface.
    pub fn domain(&self) -> RangeInclusive<usize> {
        self.window_ends[0]..=*self.window_ends.last().unwrap()
    }

    /// Intersect `segment` with the surface domain.
    pub fn clip(&self, segment: &RangeInclusive<usize>) -> Option<RangeInclusive<usize>> {
        let d = self.domain();
        let lo = *segment.start().max(d.start());
        let hi = *segment.end().min(d.end());
        (lo <= hi).then_some(lo..=hi)
    }

    /// CSV `window_end,lambda_1,...,lambda_k` with the leading `k` ratios
    /// (all of them when `k` is `None`).
    pub fn write_csv<W: Write>(&self, writer: W, k: Option<usize>) -> Result<()> {
        let k = k.unwrap_or(self.n_components).min(self.n_components);
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["window_end".to_string()];
        header.extend((1..=k).map(|m| format!("lambda_{m}")));
        w.write_record(&header)?;
        for (i, end) in self.window_ends.iter().enumerate() {
            let mut row = vec![end.to_string()];
            row.extend(self.row(i)[..k].iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut first = None;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let parse_err = |m: String| Error::Parse { line, message: m };
            let end: usize = rec[0].parse().map_err(|e| parse_err(format!("bad window_end: {e}")))?;
            match first {
                None => first = Some(end),
                Some(f) if end != f + rows.len() => {
                    return Err(parse_err("window_end values must be consecutive".into()))
                }
                _ => {}
            }
            let row = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|e| parse_err(format!("bad ratio `{v}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::new(first.ok_or_else(|| Error::invalid("surface CSV has no rows"))?, rows)
    }
}

/// Rolling eigenspectrum: row `t` holds `λ_1/M ≥ ... ≥ λ_M/M` of window `t`.
pub fn explained_variance_surface(r: &ReturnsPanel, window: usize) -> Result<EigenspectrumSurface> {
    let mats = rolling_correlation(r, window)?;
    surface_from_correlations(&mats)
}

pub fn surface_from_correlations(mats: &[CorrelationMatrix]) -> Result<EigenspectrumSurface> {
    let first = mats
        .first()
        .ok_or_else(|| Error::invalid("no correlation matrices"))?
        .window_end;
    let rows = mats
        .par_iter()
        .map(|c| {
            let m = c.dim() as f64;
            Ok(eigenvalues(c)?.into_iter().map(|l| l / m).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    EigenspectrumSurface::new(first, rows)
}

/// Mean over the windows in `segment` of `Σ_{i≤k} |a_i - b_i|`, with ratios
/// compared rank to rank.
pub fn dynamics_deviation(
    a: &EigenspectrumSurface,
    b: &EigenspectrumSurface,
    segment: &RangeInclusive<usize>,
    k: usize,
) -> Result<f64> {
    if segment.is_empty() {
        return Err(Error::invalid("empty dynamics-deviation segment"));
    }
    if k == 0 || k > a.n_components || k > b.n_components {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the available components ({} and {})",
            a.n_components, b.n_components
        )));
    }
    let mut total = 0.0;
    for t in segment.clone() {
        let (ra, rb) = match (a.at(t), b.at(t)) {
            (Some(ra), Some(rb)) => (ra, rb),
            _ => {
                return Err(Error::invalid(format!(
                    "window {t} outside surface domains {:?} / {:?}",
                    a.domain(),
                    b.domain()
                )))
            }
        };
        total += ra[..k].iter().zip(&rb[..k]).map(|(x, y)| (x - y).abs()).sum::<f64>();
    }
    Ok(total / segment.clone().count() as f64)
}

/// Gaussian kernel density estimate on an evenly spaced grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl Density {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "density"])?;
        for (x, d) in self.x.iter().zip(&self.density) {
            w.write_record([x.to_string(), d.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Grid and density columns of a CSV written by [`Density::write_csv`].
pub fn read_density_csv<R: Read>(reader: R) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_reader(reader);
    let (mut xs, mut ds) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |s: &str| {
            s.parse::<f64>().map_err(|e| Error::Parse { line, message: format!("bad number `{s}`: {e}") })
        };
        xs.push(num(&rec[0])?);
        ds.push(num(&rec[1])?);
    }
    Ok((xs, ds))
}

pub const DEFAULT_KDE_GRID: usize = 512;
const BANDWIDTH_FLOOR: f64 = 1e-4;
/// Grid half-margin in bandwidths beyond the sample range.
const GRID_MARGIN: f64 = 4.0;

/// Silverman's rule `0.9 * min(σ, IQR/1.34) * n^(-1/5)`, floored at `1e-4`.
pub fn silverman_bandwidth(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let sd = stats::sample_std(sorted);
    let iqr = stats::quantile_sorted(sorted, 0.75) - stats::quantile_sorted(sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    (0.9 * spread * n.powf(-0.2)).max(BANDWIDTH_FLOOR)
}

/// Gaussian KDE of a sample over `grid` points spanning the sample range
/// widened by four bandwidths on each side.
pub fn kde(sample: &[f64], grid: usize) -> Result<Density> {
    if sample.len() < 2 {
        return Err(Error::invalid("density estimation needs at least 2 values"));
    }
    if grid < 2 {
        return Err(Error::invalid("density grid needs at least 2 points"));
    }
    let sorted = stats::sorted(sample);
    let h = silverman_bandwidth(&sorted);
    let lo = sorted[0] - GRID_MARGIN * h;
    let hi = sorted[sorted.len() - 1] + GRID_MARGIN * h;
    let step = (hi - lo) / (grid - 1) as f64;
    let norm = 1.0 / (sorted.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let x: Vec<f64> = (0..grid).map(|i| lo + i as f64 * step).collect();
    let density = x
        .par_iter()
        .map(|&g| {
            norm * sorted
                .iter()
                .map(|&v| {
                    let u = (g - v) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(Density {
        x,
        density,
        bandwidth: h,
    })
}

/// KDE of all strictly-upper-triangle correlation entries pooled across the
/// windows whose end lies in `segment`.
pub fn correlation_element_density(
    mats: &[CorrelationMatrix],
    segment: &RangeInclusive<usize>,
    grid: usize,
) -> Result<Density> {
    let mut pooled = Vec::new();
    for c in mats.iter().filter(|c| segment.contains(&c.window_end)) {
        let m = c.dim();
        for i in 0..m {
            for j in (i + 1)..m {
                pooled.push(c.values[(i, j)]);
            }
        }
    }
    if pooled.len() < 2 {
        return Err(Error::invalid(format!(
            "segment {segment:?} pools {} correlation elements; need at least 2",
            pooled.len()
        )));
    }
    kde(&pooled, grid)
}
