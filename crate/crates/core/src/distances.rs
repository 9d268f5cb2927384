//! Pairwise distance structures between assets: trajectory, breaks,
//! extremes and total-return matrices, their affinity transforms and
//! normalized norms.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::changepoint::BreakSet;
use crate::ingest::PricePanel;
use crate::matrix::{self, symmetric_from_fn};
use crate::{stats, Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
pub const DEFAULT_TAIL_FRACTION: f64 = 0.1;
const MIN_TAIL_SAMPLE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    Trajectory,
    Breaks,
    Extremes,
    Returns,
    /// `1 - k(s,t)` of a persistence matrix.
    Dissimilarity,
}

impl DistanceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Trajectory => "trajectory",
            Self::Breaks => "breaks",
            Self::Extremes => "extremes",
            Self::Returns => "returns",
            Self::Dissimilarity => "dissimilarity",
        }
    }
}

/// Symmetric, zero-diagonal, nonnegative labelled matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    ids: Vec<String>,
    values: Vec<f64>,
    kind: DistanceKind,
}

fn check_square(ids: &[String], values: &[f64]) -> Result<usize> {
    let n = ids.len();
    if values.len() != n * n {
        return Err(Error::invalid(format!(
            "{} values for {n} ids; expected {}",
            values.len(),
            n * n
        )));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("matrix entry {v} is not finite")));
    }
    let asym = matrix::asymmetry(n, values);
    if asym > SYMMETRY_TOL {
        return Err(Error::invalid(format!("matrix is asymmetric by {asym:e}")));
    }
    Ok(n)
}

impl DistanceMatrix {
    pub fn new(ids: Vec<String>, values: Vec<f64>, kind: DistanceKind) -> Result<Self> {
        let n = check_square(&ids, &values)?;
        if (0..n).any(|i| values[i * n + i] != 0.0) {
            return Err(Error::invalid("distance matrix diagonal must be zero"));
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("distance matrix has negative entries"));
        }
        Ok(Self { ids, values, kind })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn kind(&self) -> DistanceKind {
        self.kind
    }

    /// Row-major entries.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid(format!("scale {c} must be positive")));
        }
        Ok(Self {
            ids: self.ids.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
            kind: self.kind,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        matrix::write_matrix_csv(&self.ids, &self.values, writer)
    }

    pub fn read_csv<R: Read>(reader: R, kind: DistanceKind) -> Result<Self> {
        let (ids, values) = matrix::read_matrix_csv(reader)?;
        Self::new(ids, values, kind)
    }

    /// Matrix CSV at `path` plus the `<path>.meta.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))?;
        write_meta(path, &MatrixMeta { kind: self.kind.as_str().into(), source: None })
    }

    /// Loads a matrix saved by [`DistanceMatrix::save`]. Without a sidecar
    /// the kind defaults to `fallback`.
    pub fn load(path: &Path, fallback: DistanceKind) -> Result<Self> {
        let kind = match read_meta(path)? {
            Some(meta) => parse_kind(&meta.source.unwrap_or(meta.kind))?,
            None => fallback,
        };
        Self::read_csv(std::fs::File::open(path)?, kind)
    }
}

fn parse_kind(s: &str) -> Result<DistanceKind> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::invalid(format!("unknown matrix kind `{s}`")))
}

/// Sidecar metadata of a saved matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

pub fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    s.into()
}

fn write_meta(path: &Path, meta: &MatrixMeta) -> Result<()> {
    let mut f = std::fs::File::create(meta_path(path))?;
    serde_json::to_writer_pretty(&mut f, meta)?;
    writeln!(f)?;
    Ok(())
}

pub fn read_meta(path: &Path) -> Result<Option<MatrixMeta>> {
    match std::fs::File::open(meta_path(path)) {
        Ok(f) => Ok(Some(serde_json::from_reader(f)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// `A_ij = 1 - D_ij / max D`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    ids: Vec<String>,
    values: Vec<f64>,
    source: DistanceKind,
}

impl AffinityMatrix {
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn source(&self) -> DistanceKind {
        self.source
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        matrix::write_matrix_csv(&self.ids, &self.values, writer)
    }

    pub fn read_csv<R: Read>(reader: R, source: DistanceKind) -> Result<Self> {
        let (ids, values) = matrix::read_matrix_csv(reader)?;
        let n = check_square(&ids, &values)?;
        if (0..n).any(|i| values[i * n + i] != 1.0) || values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("affinity matrix needs unit diagonal and entries in [0, 1]"));
        }
        Ok(Self { ids, values, source })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))?;
        write_meta(
            path,
            &MatrixMeta { kind: "affinity".into(), source: Some(self.source.as_str().into()) },
        )
    }
}

pub fn to_affinity(d: &DistanceMatrix) -> Result<AffinityMatrix> {
    let max = d.max();
    if max <= 0.0 {
        return Err(Error::invalid("affinity of an all-zero distance matrix is undefined"));
    }
    let n = d.len();
    let mut values: Vec<f64> = d.values.iter().map(|v| 1.0 - v / max).collect();
    for i in 0..n {
        values[i * n + i] = 1.0;
    }
    Ok(AffinityMatrix { ids: d.ids.clone(), values, source: d.kind })
}

/// Frobenius norm over all entries divided by the dimension.
pub fn normalized_norm(d: &DistanceMatrix) -> f64 {
    if d.is_empty() {
        return 0.0;
    }
    matrix::frobenius(&d.values) / d.len() as f64
}

/// L1 distances between price paths, each normalized to unit sum.
pub fn trajectory_matrix(panel: &PricePanel) -> DistanceMatrix {
    let normalized: Vec<Vec<f64>> = panel
        .columns()
        .map(|c| {
            let total: f64 = c.iter().sum();
            c.iter().map(|p| p / total).collect()
        })
        .collect();
    let values = symmetric_from_fn(normalized.len(), 0.0, |i, j| {
        normalized[i]
            .iter()
            .zip(&normalized[j])
            .map(|(a, b)| (a - b).abs())
            .sum()
    });
    DistanceMatrix {
        ids: panel.asset_ids().to_vec(),
        values,
        kind: DistanceKind::Trajectory,
    }
}

/// Mean over `from` of the distance to the nearest element of the sorted,
/// nonempty `to`.
fn mean_minimal_distance(from: &[usize], to: &[usize]) -> f64 {
    let total: usize = from
        .iter()
        .map(|&x| {
            let pos = to.partition_point(|&y| y < x);
            let right = to.get(pos).map(|&y| y - x);
            let left = pos.checked_sub(1).map(|p| x - to[p]);
            left.into_iter().chain(right).min().expect("nonempty target")
        })
        .sum();
    total as f64 / from.len() as f64
}

/// Symmetrised mean minimal distance between two index sets; `None` when
/// either set is empty.
pub fn mj_distance(a: &[usize], b: &[usize]) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    a.sort_unstable();
    b.sort_unstable();
    Some(0.5 * (mean_minimal_distance(&a, &b) + mean_minimal_distance(&b, &a)))
}

pub fn mj_semimetric(a: &BreakSet, b: &BreakSet) -> Result<f64> {
    mj_distance(a.indices(), b.indices()).ok_or_else(|| {
        Error::invalid(format!(
            "distance between `{}` and `{}` is undefined: empty break set",
            a.asset_id, b.asset_id
        ))
    })
}

/// Pairwise MJ distances. Pairs involving an empty set get the largest
/// defined distance in the matrix.
pub fn breaks_matrix(sets: &[BreakSet]) -> Result<DistanceMatrix> {
    if sets.len() < 2 {
        return Err(Error::invalid("breaks matrix needs at least two break sets"));
    }
    let n = sets.len();
    let raw = symmetric_from_fn(n, 0.0, |i, j| {
        mj_distance(sets[i].indices(), sets[j].indices()).unwrap_or(f64::NAN)
    });
    let undefined = raw.iter().filter(|v| v.is_nan()).count() / 2;
    let fill = raw.iter().copied().filter(|v| !v.is_nan()).fold(f64::NAN, f64::max);
    let defined_pairs = n * (n - 1) / 2 - undefined;
    if defined_pairs == 0 {
        return Err(Error::invalid(
            "no pair of break sets is nonempty; breaks matrix is undefined",
        ));
    }
    if undefined > 0 {
        let empty: Vec<&str> = sets.iter().filter(|s| s.is_empty()).map(|s| s.asset_id.as_str()).collect();
        log::warn!(
            "{} assets without breaks ({}); their {undefined} pairs get the maximum distance {fill}",
            empty.len(),
            empty.join(", ")
        );
    }
    let values = raw.into_iter().map(|v| if v.is_nan() { fill } else { v }).collect();
    Ok(DistanceMatrix {
        ids: sets.iter().map(|s| s.asset_id.clone()).collect(),
        values,
        kind: DistanceKind::Breaks,
    })
}

/// The two tails of an empirical return distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailMeasure {
    pub asset_id: String,
    pub tail_fraction: f64,
    /// The `ceil(tail_fraction * n)` smallest observations, ascending.
    pub lower_tail: Vec<f64>,
    /// The `ceil(tail_fraction * n)` largest observations, ascending.
    pub upper_tail: Vec<f64>,
    pub l: f64,
    pub u: f64,
}

impl TailMeasure {
    /// Both tails pooled, ascending.
    pub fn pooled(&self) -> Vec<f64> {
        let mut v = self.lower_tail.clone();
        v.extend_from_slice(&self.upper_tail);
        v
    }
}

pub fn tail_measure(asset_id: impl Into<String>, sample: &[f64], tail_fraction: f64) -> Result<TailMeasure> {
    let n = sample.len();
    if n < MIN_TAIL_SAMPLE {
        return Err(Error::invalid(format!(
            "tail measure needs at least {MIN_TAIL_SAMPLE} observations, got {n}"
        )));
    }
    if !(tail_fraction > 0.0 && tail_fraction < 0.5) {
        return Err(Error::invalid(format!("tail fraction {tail_fraction} must lie in (0, 0.5)")));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("tail measure sample has non-finite values"));
    }
    let sorted = stats::sorted(sample);
    let c = stats::ceil_fraction(tail_fraction, n);
    if 2 * c > n {
        return Err(Error::invalid(format!("tails of {c} overlap in a sample of {n}")));
    }
    Ok(TailMeasure {
        asset_id: asset_id.into(),
        tail_fraction,
        lower_tail: sorted[..c].to_vec(),
        upper_tail: sorted[n - c..].to_vec(),
        l: stats::quantile_sorted(&sorted, tail_fraction),
        u: stats::quantile_sorted(&sorted, 1.0 - tail_fraction),
    })
}

/// Whether tail measures are compared as probability measures or with
/// their nominal mass `2 * tail_fraction`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailScale {
    #[default]
    Renormalized,
    Raw,
}

/// First Wasserstein distance between two ascending samples viewed as
/// uniform empirical measures: `∫ |F - G|`.
pub fn wasserstein_1d(xs: &[f64], ys: &[f64]) -> f64 {
    if xs.len() == ys.len() {
        return xs.iter().zip(ys).map(|(a, b)| (a - b).abs()).sum::<f64>() / xs.len() as f64;
    }
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    let mut prev = xs[0].min(ys[0]);
    while i < xs.len() || j < ys.len() {
        let next = match (xs.get(i), ys.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / nx - j as f64 / ny).abs() * (next - prev);
        while i < xs.len() && xs[i] == next {
            i += 1;
        }
        while j < ys.len() && ys[j] == next {
            j += 1;
        }
        prev = next;
    }
    total
}

pub fn wasserstein_tails(a: &TailMeasure, b: &TailMeasure, scale: TailScale) -> Result<f64> {
    let d = wasserstein_1d(&a.pooled(), &b.pooled());
    match scale {
        TailScale::Renormalized => Ok(d),
        TailScale::Raw => {
            if a.tail_fraction != b.tail_fraction {
                return Err(Error::invalid("raw tail comparison needs equal tail fractions"));
            }
            Ok(d * 2.0 * a.tail_fraction)
        }
    }
}

pub fn extremes_matrix(tails: &[TailMeasure], scale: TailScale) -> Result<DistanceMatrix> {
    if scale == TailScale::Raw && tails.windows(2).any(|w| w[0].tail_fraction != w[1].tail_fraction) {
        return Err(Error::invalid("raw tail comparison needs equal tail fractions"));
    }
    let pooled: Vec<Vec<f64>> = tails.iter().map(TailMeasure::pooled).collect();
    let factor = match scale {
        TailScale::Renormalized => 1.0,
        TailScale::Raw => tails.first().map_or(1.0, |t| 2.0 * t.tail_fraction),
    };
    let values = symmetric_from_fn(tails.len(), 0.0, |i, j| {
        wasserstein_1d(&pooled[i], &pooled[j]) * factor
    });
    Ok(DistanceMatrix {
        ids: tails.iter().map(|t| t.asset_id.clone()).collect(),
        values,
        kind: DistanceKind::Extremes,
    })
}

/// `|z_i - z_j|` between total returns.
pub fn returns_matrix(ids: &[String], z: &[f64]) -> Result<DistanceMatrix> {
    if z.len() < 2 || ids.len() != z.len() {
        return Err(Error::invalid("returns matrix needs at least two labelled totals"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("total returns must be finite"));
    }
    Ok(DistanceMatrix {
        ids: ids.to_vec(),
        values: symmetric_from_fn(z.len(), 0.0, |i, j| (z[i] - z[j]).abs()),
        kind: DistanceKind::Returns,
    })
}

/// Prefix ids with their collection label so two collections can share a
/// matrix.
pub fn qualified_ids(label: &str, ids: &[String]) -> Vec<String> {
    ids.iter().map(|id| format!("{label}/{id}")).collect()
}
