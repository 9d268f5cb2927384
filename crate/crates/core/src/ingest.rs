//! Loading, validating and calendar-aligning price panels.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

/// Date-aligned closing prices for one collection of assets.
///
/// Prices are stored column-major: the series of asset `i` is contiguous and
/// available through [`PricePanel::column`].
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    label: String,
    asset_ids: Vec<String>,
    dates: Vec<NaiveDate>,
    prices: Vec<f64>,
}

impl PricePanel {
    /// Build a panel from per-asset columns, enforcing every panel invariant.
    pub fn new(
        label: impl Into<String>,
        asset_ids: Vec<String>,
        dates: Vec<NaiveDate>,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if asset_ids.is_empty() {
            return Err(Error::invalid("panel has no assets"));
        }
        if dates.is_empty() {
            return Err(Error::invalid("panel has no dates"));
        }
        if columns.len() != asset_ids.len() {
            return Err(Error::invalid(format!(
                "{} asset ids but {} columns",
                asset_ids.len(),
                columns.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &asset_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate asset id `{id}`")));
            }
        }
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid(format!(
                    "dates must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        let t = dates.len();
        let mut prices = Vec::with_capacity(t * asset_ids.len());
        for (id, col) in asset_ids.iter().zip(&columns) {
            if col.len() != t {
                return Err(Error::invalid(format!(
                    "asset `{id}` has {} prices for {t} dates",
                    col.len()
                )));
            }
            for (&p, &d) in col.iter().zip(&dates) {
                if !(p.is_finite() && p > 0.0) {
                    return Err(Error::InvalidPrice {
                        asset: id.clone(),
                        date: d,
                        value: p,
                    });
                }
            }
            prices.extend_from_slice(col);
        }
        Ok(Self {
            label: label.into(),
            asset_ids,
            dates,
            prices,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn column(&self, asset: usize) -> &[f64] {
        let t = self.n_dates();
        &self.prices[asset * t..(asset + 1) * t]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.prices.chunks_exact(self.n_dates())
    }

    /// Same panel under a new collection label.
    pub fn relabel(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Keep only the rows at `rows` (ascending positions).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let dates = rows.iter().map(|&r| self.dates[r]).collect();
        let columns = self
            .columns()
            .map(|c| rows.iter().map(|&r| c[r]).collect())
            .collect();
        Self::new(self.label.clone(), self.asset_ids.clone(), dates, columns)
            .expect("row selection preserves panel invariants")
    }

    /// Reorder assets: output asset `k` is input asset `order[k]`.
    pub fn permute_assets(&self, order: &[usize]) -> Self {
        let ids = order.iter().map(|&i| self.asset_ids[i].clone()).collect();
        let columns = order.iter().map(|&i| self.column(i).to_vec()).collect();
        Self::new(self.label.clone(), ids, self.dates.clone(), columns)
            .expect("permutation preserves panel invariants")
    }

    /// Position of `date` in the panel calendar.
    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }
}

/// How rows with missing cells are treated on load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentPolicy {
    /// Keep only dates on which every asset has a price.
    Intersect,
    /// Carry each asset's last observed price forward over gaps.
    #[default]
    ForwardFill,
}

impl std::str::FromStr for AlignmentPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intersect" => Ok(Self::Intersect),
            "forward_fill" | "forward-fill" | "ffill" => Ok(Self::ForwardFill),
            other => Err(Error::invalid(format!("unknown alignment policy `{other}`"))),
        }
    }
}

fn is_missing(field: &str) -> bool {
    matches!(field, "" | "NA" | "na" | "NaN" | "nan" | "null")
}

/// Load a canonical CSV price file. The collection label defaults to the
/// file stem.
pub fn load_panel(path: impl AsRef<Path>, policy: AlignmentPolicy) -> Result<PricePanel> {
    let path = path.as_ref();
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))?;
    read_panel(file, policy, label)
}

/// Parse a price panel from CSV with header `date,<asset_1>,...,<asset_M>`.
pub fn read_panel<R: Read>(
    reader: R,
    policy: AlignmentPolicy,
    label: impl Into<String>,
) -> Result<PricePanel> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = r.headers()?.clone();
    if header.len() < 2 || !header[0].eq_ignore_ascii_case("date") {
        return Err(Error::Parse {
            line: 1,
            message: "header must be `date,<asset_1>,...`".into(),
        });
    }
    let ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let m = ids.len();

    let mut rows: Vec<(NaiveDate, u64, Vec<Option<f64>>)> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| Error::Parse {
            line,
            message: format!("bad date `{}`: {e}", &rec[0]),
        })?;
        let mut cells = Vec::with_capacity(m);
        for (field, id) in rec.iter().skip(1).zip(&ids) {
            if is_missing(field) {
                cells.push(None);
                continue;
            }
            let v: f64 = field.parse().map_err(|e| Error::Parse {
                line,
                message: format!("bad price `{field}` for `{id}`: {e}"),
            })?;
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidPrice {
                    asset: id.clone(),
                    date,
                    value: v,
                });
            }
            cells.push(Some(v));
        }
        rows.push((date, line, cells));
    }
    rows.sort_by_key(|r| r.0);
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::Parse {
                line: w[1].1,
                message: format!("duplicate date {}", w[1].0),
            });
        }
    }

    let mut dates = Vec::with_capacity(rows.len());
    let mut columns = vec![Vec::with_capacity(rows.len()); m];
    match policy {
        AlignmentPolicy::Intersect => {
            for (date, _, cells) in &rows {
                if cells.iter().all(Option::is_some) {
                    dates.push(*date);
                    for (col, c) in columns.iter_mut().zip(cells) {
                        col.push(c.unwrap());
                    }
                }
            }
        }
        AlignmentPolicy::ForwardFill => {
            for (date, _, cells) in &rows {
                dates.push(*date);
                for ((col, c), id) in columns.iter_mut().zip(cells).zip(&ids) {
                    match (c, col.last()) {
                        (Some(v), _) => col.push(*v),
                        (None, Some(&prev)) => col.push(prev),
                        (None, None) => {
                            return Err(Error::LeadingGap {
                                asset: id.clone(),
                                date: *date,
                            })
                        }
                    }
                }
            }
        }
    }
    PricePanel::new(label, ids, dates, columns)
}

/// Write the canonical CSV form of a panel.
pub fn write_panel<W: Write>(panel: &PricePanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend(panel.asset_ids.iter().cloned());
    w.write_record(&header)?;
    for (t, d) in panel.dates.iter().enumerate() {
        let mut row = Vec::with_capacity(panel.n_assets() + 1);
        row.push(d.format("%Y-%m-%d").to_string());
        row.extend(panel.columns().map(|c| c[t].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Restrict two panels to their common dates.
pub fn align_panels(a: &PricePanel, b: &PricePanel) -> Result<(PricePanel, PricePanel)> {
    let (mut ia, mut ib) = (Vec::new(), Vec::new());
    let (mut i, mut j) = (0, 0);
    while i < a.dates.len() && j < b.dates.len() {
        match a.dates[i].cmp(&b.dates[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                ia.push(i);
                ib.push(j);
                i += 1;
                j += 1;
            }
        }
    }
    if ia.is_empty() {
        return Err(Error::invalid(format!(
            "panels `{}` and `{}` share no dates",
            a.label, b.label
        )));
    }
    Ok((a.select_rows(&ia), b.select_rows(&ib)))
}

/// One labelled period, as 1-based inclusive indices into the panel dates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    /// Indices on the return axis (return `s` is stamped with price date
    /// `s + 1`) whose dates fall in this segment.
    pub fn return_range(&self) -> Option<std::ops::RangeInclusive<usize>> {
        let lo = self.start.saturating_sub(1).max(1);
        let hi = self.end.checked_sub(1)?;
        (lo <= hi).then_some(lo..=hi)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodPartition {
    segments: Vec<Segment>,
}

impl PeriodPartition {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn get(&self, label: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.label == label)
    }
}

/// Map dated boundaries onto panel indices. Boundary dates missing from the
/// calendar snap inward to the nearest panel date inside the interval.
pub fn make_partition(
    panel: &PricePanel,
    boundaries: &[(String, NaiveDate, NaiveDate)],
) -> Result<PeriodPartition> {
    let mut labels = HashSet::new();
    for (label, start, end) in boundaries {
        if start > end {
            return Err(Error::invalid(format!(
                "segment `{label}` starts ({start}) after it ends ({end})"
            )));
        }
        if !labels.insert(label.as_str()) {
            return Err(Error::invalid(format!("duplicate segment label `{label}`")));
        }
    }
    for (i, (la, sa, ea)) in boundaries.iter().enumerate() {
        for (lb, sb, eb) in &boundaries[i + 1..] {
            if sa <= eb && sb <= ea {
                return Err(Error::invalid(format!("segments `{la}` and `{lb}` overlap")));
            }
        }
    }
    let dates = panel.dates();
    let segments = boundaries
        .iter()
        .map(|(label, start, end)| {
            let lo = dates.partition_point(|d| d < start);
            let hi = dates.partition_point(|d| d <= end);
            if lo >= hi {
                return Err(Error::invalid(format!(
                    "segment `{label}` ({start} to {end}) contains no panel dates"
                )));
            }
            Ok(Segment {
                label: label.clone(),
                start: lo + 1,
                end: hi,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PeriodPartition { segments })
}

/// Calendar used to stamp synthetic panels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calendar {
    /// Every calendar day.
    #[default]
    Daily,
    /// Monday to Friday.
    Weekdays,
}

impl std::str::FromStr for Calendar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "daily" => Ok(Self::Daily),
            "weekdays" => Ok(Self::Weekdays),
            other => Err(Error::invalid(format!("unknown calendar `{other}`"))),
        }
    }
}

pub fn calendar_dates(start: NaiveDate, n: usize, calendar: Calendar) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        let keep = match calendar {
            Calendar::Daily => true,
            Calendar::Weekdays => !matches!(d.weekday(), Weekday::Sat | Weekday::Sun),
        };
        if keep {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

/// One-factor regime: from return index `start` (0-based) onward, returns
/// load on the common factor with `beta` and have scale `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub start: usize,
    pub beta: f64,
    pub sigma: f64,
}

/// Shape of a synthetic panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub label: String,
    pub assets: usize,
    pub days: usize,
    pub regimes: Vec<Regime>,
    pub seed: u64,
    pub start: NaiveDate,
    pub calendar: Calendar,
}

/// Simulate a regime-switching one-factor panel.
///
/// Log returns are `sigma * (beta * f(t) + sqrt(1 - beta^2) * e_i(t))` with
/// standard Gaussian `f`, `e_i`; prices start at 100. The factor and every
/// asset draw from their own seeded stream, so the output does not depend on
/// thread count or on the number of assets simulated alongside.
pub fn synth_panel(spec: &SynthSpec) -> Result<PricePanel> {
    if spec.assets < 2 || spec.days < 2 {
        return Err(Error::invalid("synthetic panels need at least 2 assets and 2 days"));
    }
    let mut regimes = spec.regimes.clone();
    regimes.sort_by_key(|r| r.start);
    if regimes.first().map(|r| r.start) != Some(0) {
        return Err(Error::invalid("the first regime must start at return index 0"));
    }
    for r in &regimes {
        if !(0.0..1.0).contains(&r.beta) {
            return Err(Error::invalid(format!("beta {} outside [0, 1)", r.beta)));
        }
        if !(r.sigma.is_finite() && r.sigma > 0.0) {
            return Err(Error::invalid(format!("sigma {} must be positive", r.sigma)));
        }
    }
    let n_ret = spec.days - 1;
    let regime_at = |t: usize| regimes.iter().rev().find(|r| r.start <= t).unwrap();

    let mut frng = rng::substream(spec.seed, "synth/factor", 0);
    let factor: Vec<f64> = (0..n_ret).map(|_| StandardNormal.sample(&mut frng)).collect();

    let columns = (0..spec.assets)
        .map(|i| {
            let mut erng = rng::substream(spec.seed, "synth/idio", i as u64);
            let mut log_p = 100.0_f64.ln();
            let mut col = Vec::with_capacity(spec.days);
            col.push(100.0);
            for (t, f) in factor.iter().enumerate() {
                let r = regime_at(t);
                let e: f64 = StandardNormal.sample(&mut erng);
                log_p += r.sigma * (r.beta * f + (1.0 - r.beta * r.beta).sqrt() * e);
                col.push(log_p.exp());
            }
            col
        })
        .collect();
    let width = spec.assets.to_string().len();
    let ids = (0..spec.assets).map(|i| format!("A{:0width$}", i + 1)).collect();
    let dates = calendar_dates(spec.start, spec.days, spec.calendar);
    PricePanel::new(spec.label.clone(), ids, dates, columns)
}

/// Single-regime one-factor panel on a daily calendar starting 2018-01-01.
pub fn synth_one_factor(
    assets: usize,
    days: usize,
    beta: f64,
    sigma_idio: f64,
    seed: u64,
) -> Result<PricePanel> {
    synth_panel(&SynthSpec {
        label: "synthetic".into(),
        assets,
        days,
        regimes: vec![Regime {
            start: 0,
            beta,
            sigma: sigma_idio,
        }],
        seed,
        start: NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
        calendar: Calendar::Daily,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    const GAPPY: &str = "date,A,B\n2020-01-01,1,10\n2020-01-02,2,\n2020-01-03,3,30\n";

    #[test]
    fn no_gaps_policies_agree() {
        let text = "date,A,B\n2020-01-01,1,10\n2020-01-02,2,20\n2020-01-03,3,30\n";
        let a = read_panel(text.as_bytes(), AlignmentPolicy::Intersect, "x").unwrap();
        let b = read_panel(text.as_bytes(), AlignmentPolicy::ForwardFill, "x").unwrap();
        assert_eq!(a.n_dates(), 3);
        assert_eq!(a, b);
    }

    #[test]
    fn forward_fill_carries_last_value() {
        let p = read_panel(GAPPY.as_bytes(), AlignmentPolicy::ForwardFill, "x").unwrap();
        assert_eq!(p.column(1), &[10.0, 10.0, 30.0]);
    }

    #[test]
    fn intersect_drops_gappy_rows() {
        let p = read_panel(GAPPY.as_bytes(), AlignmentPolicy::Intersect, "x").unwrap();
        assert_eq!(p.n_dates(), 2);
        assert_eq!(p.dates(), &[d("2020-01-01"), d("2020-01-03")]);
    }

    #[test]
    fn rows_are_sorted_by_date() {
        let text = "date,A\n2020-01-03,3\n2020-01-01,1\n2020-01-02,2\n";
        let p = read_panel(text.as_bytes(), AlignmentPolicy::Intersect, "x").unwrap();
        assert_eq!(p.column(0), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn error_paths() {
        let bad_num = "date,A\n2020-01-01,1\n2020-01-02,abc\n";
        match read_panel(bad_num.as_bytes(), AlignmentPolicy::Intersect, "x") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let ragged = "date,A,B\n2020-01-01,1,2\n2020-01-02,1\n";
        assert!(matches!(
            read_panel(ragged.as_bytes(), AlignmentPolicy::Intersect, "x"),
            Err(Error::Parse { line: 3, .. })
        ));
        let neg = "date,A,B\n2020-01-01,1,2\n2020-01-02,1,-4\n";
        match read_panel(neg.as_bytes(), AlignmentPolicy::Intersect, "x") {
            Err(Error::InvalidPrice { asset, date, .. }) => {
                assert_eq!(asset, "B");
                assert_eq!(date, d("2020-01-02"));
            }
            other => panic!("{other:?}"),
        }
        let lead = "date,A,B\n2020-01-01,1,\n2020-01-02,1,3\n";
        assert!(matches!(
            read_panel(lead.as_bytes(), AlignmentPolicy::ForwardFill, "x"),
            Err(Error::LeadingGap { .. })
        ));
        let dup = "date,A\n2020-01-01,1\n2020-01-01,2\n";
        assert!(read_panel(dup.as_bytes(), AlignmentPolicy::Intersect, "x").is_err());
    }

    #[test]
    fn canonical_round_trip_is_bit_identical() {
        let p = synth_one_factor(4, 50, 0.5, 0.02, 3).unwrap();
        let mut first = Vec::new();
        write_panel(&p, &mut first).unwrap();
        let q = read_panel(first.as_slice(), AlignmentPolicy::Intersect, "synthetic").unwrap();
        assert_eq!(p, q);
        let mut second = Vec::new();
        write_panel(&q, &mut second).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn align_to_common_calendar() {
        let start = d("2020-01-06");
        let daily = synth_panel(&SynthSpec {
            label: "crypto".into(),
            assets: 3,
            days: 28,
            regimes: vec![Regime { start: 0, beta: 0.5, sigma: 0.01 }],
            seed: 1,
            start,
            calendar: Calendar::Daily,
        })
        .unwrap();
        let weekdays = synth_panel(&SynthSpec {
            label: "equity".into(),
            calendar: Calendar::Weekdays,
            days: 20,
            ..SynthSpec {
                label: String::new(),
                assets: 2,
                days: 0,
                regimes: vec![Regime { start: 0, beta: 0.5, sigma: 0.01 }],
                seed: 2,
                start,
                calendar: Calendar::Daily,
            }
        })
        .unwrap();
        let (a, b) = align_panels(&daily, &weekdays).unwrap();
        assert_eq!(a.dates(), weekdays.dates());
        assert_eq!(b.dates(), weekdays.dates());
        assert_eq!(a.asset_ids(), daily.asset_ids());

        let (aa, bb) = align_panels(&a, &b).unwrap();
        assert_eq!(aa, a);
        assert_eq!(bb, b);
        let (b2, a2) = align_panels(&weekdays, &daily).unwrap();
        assert_eq!(a2.dates(), a.dates());
        assert_eq!(b2.dates(), b.dates());

        let (same, _) = align_panels(&daily, &daily).unwrap();
        assert_eq!(same, daily);
    }

    #[test]
    fn disjoint_panels_fail_to_align() {
        let a = synth_one_factor(2, 5, 0.1, 0.01, 1).unwrap();
        let mut spec = SynthSpec {
            label: "b".into(),
            assets: 2,
            days: 5,
            regimes: vec![Regime { start: 0, beta: 0.1, sigma: 0.01 }],
            seed: 1,
            start: d("2030-01-01"),
            calendar: Calendar::Daily,
        };
        let b = synth_panel(&spec).unwrap();
        assert!(align_panels(&a, &b).is_err());
        spec.start = d("2018-01-03");
        let c = synth_panel(&spec).unwrap();
        assert_eq!(align_panels(&a, &c).unwrap().0.n_dates(), 3);
    }

    #[test]
    fn partitions() {
        let p = synth_panel(&SynthSpec {
            label: "x".into(),
            assets: 2,
            days: 508,
            regimes: vec![Regime { start: 0, beta: 0.1, sigma: 0.01 }],
            seed: 1,
            start: d("2019-01-01"),
            calendar: Calendar::Daily,
        })
        .unwrap();
        let whole = make_partition(&p, &[("ALL".into(), p.dates()[0], p.dates()[507])]).unwrap();
        assert_eq!(whole.segments()[0], Segment { label: "ALL".into(), start: 1, end: 508 });

        let dt = |i: usize| p.dates()[i - 1];
        let part = make_partition(
            &p,
            &[
                ("PRE".into(), d("2018-06-01"), dt(311)),
                ("PEAK".into(), dt(312), dt(375)),
                ("POST".into(), dt(376), d("2025-01-01")),
            ],
        )
        .unwrap();
        let spans: Vec<_> = part.segments().iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(spans, vec![(1, 311), (312, 375), (376, 508)]);
        // rolling 60-return windows end at return index >= 60, so the summed
        // PRE windows are 60..=310 on the return axis
        assert_eq!(part.get("PRE").unwrap().return_range(), Some(1..=310));
        assert_eq!(part.get("PEAK").unwrap().return_range(), Some(311..=374));

        assert!(make_partition(&p, &[("R".into(), dt(10), dt(5))]).is_err());
        assert!(make_partition(
            &p,
            &[("A".into(), dt(1), dt(10)), ("B".into(), dt(10), dt(20))]
        )
        .is_err());
        assert!(make_partition(&p, &[("Z".into(), d("2030-01-01"), d("2030-02-01"))]).is_err());
    }

    #[test]
    fn partition_snaps_to_contained_dates() {
        let p = synth_panel(&SynthSpec {
            label: "x".into(),
            assets: 2,
            days: 10,
            regimes: vec![Regime { start: 0, beta: 0.1, sigma: 0.01 }],
            seed: 1,
            start: d("2020-01-06"),
            calendar: Calendar::Weekdays,
        })
        .unwrap();
        // 2020-01-11/12 is a weekend, so the segment snaps to Mon 13th .. Fri 17th
        let part = make_partition(&p, &[("W".into(), d("2020-01-11"), d("2020-01-18"))]).unwrap();
        assert_eq!(part.segments()[0].start, 6);
        assert_eq!(part.segments()[0].end, 10);
        assert!(make_partition(&p, &[("E".into(), d("2020-01-11"), d("2020-01-12"))]).is_err());
    }

    #[test]
    fn synth_is_deterministic_and_validated() {
        let a = synth_one_factor(5, 30, 0.7, 0.01, 42).unwrap();
        let b = synth_one_factor(5, 30, 0.7, 0.01, 42).unwrap();
        let c = synth_one_factor(5, 30, 0.7, 0.01, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(synth_one_factor(5, 30, 1.0, 0.01, 1).is_err());
        assert!(synth_one_factor(5, 30, -0.1, 0.01, 1).is_err());
        assert!(synth_one_factor(1, 30, 0.5, 0.01, 1).is_err());
        assert!(a.columns().all(|c| c[0] == 100.0));
    }
}
