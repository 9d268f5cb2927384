//! Log, standardized, total and rolling risk-adjusted returns.
//!
//! Returns live on their own 1-based time axis: return `s` is
//! `ln(p(s + 1) / p(s))` and is stamped with the later price date.

use std::io::{Read, Write};
use std::ops::RangeInclusive;

use chrono::NaiveDate;

use crate::ingest::PricePanel;
use crate::{stats, Error, Result};

/// Column-major `(T-1)×M` matrix of log returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    asset_ids: Vec<String>,
    dates: Vec<NaiveDate>,
    /// Return-axis index of the first row.
    first_index: usize,
    values: Vec<f64>,
}

impl ReturnsPanel {
    pub fn new(
        asset_ids: Vec<String>,
        dates: Vec<NaiveDate>,
        first_index: usize,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if columns.len() != asset_ids.len() {
            return Err(Error::invalid("returns: column count does not match asset ids"));
        }
        let n = dates.len();
        let mut values = Vec::with_capacity(n * columns.len());
        for (id, c) in asset_ids.iter().zip(&columns) {
            if c.len() != n {
                return Err(Error::invalid(format!("returns: column `{id}` has wrong length")));
            }
            if let Some(v) = c.iter().find(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("returns: non-finite value {v} in `{id}`")));
            }
            values.extend_from_slice(c);
        }
        Ok(Self {
            asset_ids,
            dates,
            first_index,
            values,
        })
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn n_obs(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }

    /// Return-axis indices covered by this panel.
    pub fn indices(&self) -> RangeInclusive<usize> {
        self.first_index..=self.first_index + self.n_obs() - 1
    }

    pub fn column(&self, asset: usize) -> &[f64] {
        let n = self.n_obs();
        &self.values[asset * n..(asset + 1) * n]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_obs().max(1))
    }

    /// Rows with return-axis indices in `range`.
    pub fn window(&self, range: RangeInclusive<usize>) -> Result<ReturnsPanel> {
        let (lo, hi) = self.positions(&range)?;
        let columns = self.columns().map(|c| c[lo..=hi].to_vec()).collect();
        ReturnsPanel::new(
            self.asset_ids.clone(),
            self.dates[lo..=hi].to_vec(),
            *range.start(),
            columns,
        )
    }

    fn positions(&self, range: &RangeInclusive<usize>) -> Result<(usize, usize)> {
        let all = self.indices();
        if range.is_empty() || range.start() < all.start() || range.end() > all.end() {
            return Err(Error::invalid(format!(
                "return window {range:?} outside available indices {all:?}"
            )));
        }
        Ok((range.start() - self.first_index, range.end() - self.first_index))
    }

    /// Write `date,<ids>` rows; round-trips through [`crate::ingest::read_panel`]'s
    /// CSV conventions.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.asset_ids.iter().cloned());
        w.write_record(&header)?;
        for (t, d) in self.dates.iter().enumerate() {
            let mut row = vec![d.format("%Y-%m-%d").to_string()];
            row.extend(self.columns().map(|c| c[t].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl ReturnsPanel {
    /// Inverse of [`ReturnsPanel::write_csv`]. The CSV carries dates only, so
    /// the return-axis index of the first row is supplied by the caller.
    pub fn read_csv<R: Read>(reader: R, first_index: usize) -> Result<Self> {
        if first_index == 0 {
            return Err(Error::invalid("return indices are 1-based"));
        }
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.len() < 2 || &header[0] != "date" {
            return Err(Error::Parse { line: 1, message: "header must be `date,<asset_1>,...`".into() });
        }
        let ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut dates = Vec::new();
        let mut columns = vec![Vec::new(); ids.len()];
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            dates.push(parse_date(&rec[0], line)?);
            for (c, v) in columns.iter_mut().zip(rec.iter().skip(1)) {
                c.push(parse_value(v, line)?);
            }
        }
        Self::new(ids, dates, first_index, columns)
    }
}

fn parse_date(s: &str, line: u64) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| Error::Parse { line, message: format!("bad date `{s}`: {e}") })
}

fn parse_value(s: &str, line: u64) -> Result<f64> {
    s.trim().parse().map_err(|e| Error::Parse { line, message: format!("bad number `{s}`: {e}") })
}

/// `ln(p(t) / p(t-1))` for every asset.
pub fn log_returns(panel: &PricePanel) -> ReturnsPanel {
    let columns = panel
        .columns()
        .map(|c| c.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
        .collect();
    ReturnsPanel::new(
        panel.asset_ids().to_vec(),
        panel.dates()[1..].to_vec(),
        1,
        columns,
    )
    .expect("positive prices give finite log returns")
}

/// Standardize each column to mean 0 and population standard deviation 1.
///
/// With a window, statistics are computed over those rows only and the
/// returned panel is restricted to the window.
pub fn standardize(r: &ReturnsPanel, window: Option<RangeInclusive<usize>>) -> Result<ReturnsPanel> {
    let r = match window {
        Some(w) => r.window(w)?,
        None => r.clone(),
    };
    let columns = r
        .columns()
        .zip(&r.asset_ids)
        .map(|(c, id)| {
            let (mean, sd) = stats::mean_std(c).ok_or_else(|| Error::ZeroVariance {
                asset: id.clone(),
                context: format!("over returns {:?}", r.indices()),
            })?;
            Ok(c.iter().map(|v| (v - mean) / sd).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    ReturnsPanel::new(r.asset_ids.clone(), r.dates.clone(), r.first_index, columns)
}

/// Per-asset sum of log returns, i.e. `ln(p(T) / p(1))`.
pub fn total_returns(r: &ReturnsPanel) -> Vec<f64> {
    r.columns().map(|c| c.iter().sum()).collect()
}

/// Trailing-window return sums scaled by the window's standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskAdjustedSeries {
    asset_ids: Vec<String>,
    dates: Vec<NaiveDate>,
    indices: Vec<usize>,
    /// Row-major: `values[t * M + i]`, so each cross-section is contiguous.
    values: Vec<f64>,
}

impl RiskAdjustedSeries {
    pub fn new(
        asset_ids: Vec<String>,
        dates: Vec<NaiveDate>,
        indices: Vec<usize>,
        cross_sections: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if dates.len() != indices.len() || cross_sections.len() != indices.len() {
            return Err(Error::invalid("risk-adjusted series: inconsistent lengths"));
        }
        let m = asset_ids.len();
        let mut values = Vec::with_capacity(m * indices.len());
        for row in &cross_sections {
            if row.len() != m {
                return Err(Error::invalid("risk-adjusted series: ragged cross-section"));
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            asset_ids,
            dates,
            indices,
            values,
        })
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    /// Return-axis index of each cross-section.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Values of every asset at row `t`.
    pub fn cross_section(&self, t: usize) -> &[f64] {
        let m = self.asset_ids.len();
        &self.values[t * m..(t + 1) * m]
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["index".to_string(), "date".to_string()];
        header.extend(self.asset_ids.iter().cloned());
        w.write_record(&header)?;
        for t in 0..self.len() {
            let mut row = vec![
                self.indices[t].to_string(),
                self.dates[t].format("%Y-%m-%d").to_string(),
            ];
            row.extend(self.cross_section(t).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl RiskAdjustedSeries {
    /// Inverse of [`RiskAdjustedSeries::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.len() < 3 || &header[0] != "index" || &header[1] != "date" {
            return Err(Error::Parse { line: 1, message: "header must be `index,date,<asset_1>,...`".into() });
        }
        let ids: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let (mut dates, mut indices, mut rows) = (Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            indices.push(rec[0].parse().map_err(|e| Error::Parse { line, message: format!("bad index: {e}") })?);
            dates.push(parse_date(&rec[1], line)?);
            rows.push(rec.iter().skip(2).map(|v| parse_value(v, line)).collect::<Result<Vec<_>>>()?);
        }
        Self::new(ids, dates, indices, rows)
    }
}

/// Default trailing window: the sum over `t-60..=t` spans 61 observations.
pub const DEFAULT_RA_WINDOW: usize = 61;

/// For every `t >= window`, the sum of returns `t-window+1..=t` divided by
/// their population standard deviation.
pub fn rolling_risk_adjusted(r: &ReturnsPanel, window: usize) -> Result<RiskAdjustedSeries> {
    if window < 2 {
        return Err(Error::invalid("risk-adjusted window must hold at least 2 returns"));
    }
    let n = r.n_obs();
    if n < window {
        return Err(Error::invalid(format!(
            "{n} returns are fewer than the risk-adjusted window {window}"
        )));
    }
    let ends: Vec<usize> = (window - 1..n).collect();
    let mut rows = vec![Vec::with_capacity(r.n_assets()); ends.len()];
    for (c, id) in r.columns().zip(&r.asset_ids) {
        for (row, &end) in rows.iter_mut().zip(&ends) {
            let w = &c[end + 1 - window..=end];
            let (_, sd) = stats::mean_std(w).ok_or_else(|| Error::ZeroVariance {
                asset: id.clone(),
                context: format!("in the risk-adjusted window ending {}", r.dates[end]),
            })?;
            row.push(w.iter().sum::<f64>() / sd);
        }
    }
    RiskAdjustedSeries::new(
        r.asset_ids.clone(),
        ends.iter().map(|&e| r.dates[e]).collect(),
        ends.iter().map(|&e| e + r.first_index).collect(),
        rows,
    )
}
