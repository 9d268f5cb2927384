//! Distribution change point detection with the Kolmogorov–Smirnov change
//! point model.
//!
//! Batch detection scans every split `k` of a sample, computes the two-sample
//! KS statistic `D_{k,n}` between `x[..k]` and `x[k..]` and flags the best
//! split when `max_k D_{k,n}` exceeds a Monte Carlo threshold. Sequential
//! detection repeats the batch test on a growing segment, with a threshold
//! sequence `h_t` calibrated so that each test raises a false alarm with
//! probability `alpha` given no earlier alarm, and restarts after each
//! detected change.
//!
//! Splits are restricted to `min_segment <= k <= n - min_segment`.
//!
//! Change indices count observations: a change at `k` means the first `k`
//! observations of the segment precede the change.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::returns::ReturnsPanel;
use crate::{rng, Error, Result};

pub const DEFAULT_MIN_SEGMENT: usize = 30;
pub const DEFAULT_REPLICATIONS: usize = 10_000;
const MIN_REPLICATIONS: usize = 1000;
const MIN_TAIL_COUNT: f64 = 10.0;
/// Slack on the incremental KS bounds; far above their accumulated rounding.
const BOUND_SLACK: f64 = 1e-9;

fn check_sample(x: &[f64], name: &str) -> Result<()> {
    if x.is_empty() {
        return Err(Error::invalid(format!("{name} sample is empty")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{name} sample has non-finite values")));
    }
    Ok(())
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_x - F_y|`, by a merge
/// sweep over both sorted samples.
pub fn ks_statistic(x: &[f64], y: &[f64]) -> Result<f64> {
    check_sample(x, "first")?;
    check_sample(y, "second")?;
    let xs = crate::stats::sorted(x);
    let ys = crate::stats::sorted(y);
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best = 0.0_f64;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] == v {
            i += 1;
        }
        while j < ys.len() && ys[j] == v {
            j += 1;
        }
        best = best.max((i as f64 / nx - j as f64 / ny).abs());
    }
    Ok(best)
}

/// Incrementally maintained rank structure of one growing segment.
///
/// Besides the exact full scan, it keeps for each split `k` the last exactly
/// computed statistic. Appending one observation to the right-hand sample
/// moves its empirical CDF by at most `1/(n_right + 1)`, so
/// `D_{k,t} <= D_{k,s} + H(t-k) - H(s-k)` with `H` the harmonic numbers.
/// Threshold checks only recompute the splits whose bound reaches the
/// threshold.
#[derive(Debug, Clone)]
pub struct SegmentScan {
    min_segment: usize,
    values: Vec<f64>,
    /// Arrival positions sorted by value; ties keep arrival order.
    order: Vec<u32>,
    has_ties: bool,
    /// `cached[k]`: exact `D_{k,s}` at segment length `cached_at[k] = s`
    /// (0 when never computed).
    cached: Vec<f64>,
    cached_at: Vec<u32>,
}

/// Harmonic number `H(n)`, tabulated for short segments.
fn harmonic(n: usize) -> f64 {
    const TABLE: usize = 1 << 16;
    static H: std::sync::OnceLock<Vec<f64>> = std::sync::OnceLock::new();
    let h = H.get_or_init(|| {
        let mut h = Vec::with_capacity(TABLE);
        h.push(0.0);
        for i in 1..TABLE {
            h.push(h[i - 1] + 1.0 / i as f64);
        }
        h
    });
    if n < TABLE {
        return h[n];
    }
    let x = n as f64;
    x.ln() + 0.577_215_664_901_532_9 + 1.0 / (2.0 * x) - 1.0 / (12.0 * x * x)
}

impl SegmentScan {
    pub fn new(min_segment: usize) -> Self {
        assert!(min_segment >= 1, "min_segment must be positive");
        Self {
            min_segment,
            values: Vec::new(),
            order: Vec::new(),
            has_ties: false,
            cached: vec![0.0],
            cached_at: vec![0],
        }
    }

    pub fn from_slice(min_segment: usize, x: &[f64]) -> Self {
        let mut s = Self::new(min_segment);
        for &v in x {
            s.push(v);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn push(&mut self, x: f64) {
        // -0.0 and 0.0 must compare equal for tie detection and ordering alike
        let x = x + 0.0;
        let pos = self.order.partition_point(|&i| self.values[i as usize] <= x);
        if (pos > 0 && self.values[self.order[pos - 1] as usize] == x)
            || (pos < self.order.len() && self.values[self.order[pos] as usize] == x)
        {
            self.has_ties = true;
        }
        self.order.insert(pos, self.values.len() as u32);
        self.values.push(x);
        self.cached.push(0.0);
        self.cached_at.push(0);
    }

    /// Candidate splits at the current length.
    pub fn splits(&self) -> std::ops::RangeInclusive<usize> {
        let t = self.len();
        if t < 2 * self.min_segment {
            #[allow(clippy::reversed_empty_ranges)]
            return 1..=0;
        }
        self.min_segment..=t - self.min_segment
    }

    /// Exact `D_{k,t}` between the first `k` observations and the rest.
    pub fn split_statistic(&self, k: usize) -> f64 {
        let t = self.len();
        debug_assert!(k >= 1 && k < t);
        let kk = k as u32;
        let (ti, ki) = (t as i64, k as i64);
        let mut below = 0_i64;
        let mut best = 0_i64;
        if self.has_ties {
            for j in 0..t {
                below += i64::from(self.order[j] < kk);
                let last_of_run = j + 1 == t
                    || self.values[self.order[j] as usize] != self.values[self.order[j + 1] as usize];
                if last_of_run {
                    best = best.max((ti * below - ki * (j as i64 + 1)).abs());
                }
            }
        } else {
            for (j, &o) in self.order.iter().enumerate() {
                below += i64::from(o < kk);
                best = best.max((ti * below - ki * (j as i64 + 1)).abs());
            }
        }
        best as f64 / (ki * (ti - ki)) as f64
    }

    fn refresh(&mut self, k: usize) -> f64 {
        let t = self.len() as u32;
        if self.cached_at[k] != t {
            self.cached[k] = self.split_statistic(k);
            self.cached_at[k] = t;
        }
        self.cached[k]
    }

    fn bound(&self, k: usize) -> f64 {
        let s = self.cached_at[k] as usize;
        if s == 0 {
            return f64::INFINITY;
        }
        let t = self.len();
        self.cached[k] + harmonic(t - k) - harmonic(s - k) + BOUND_SLACK
    }

    /// `(max_k D_{k,t}, argmax k)` by exhaustive scan; ties go to the
    /// smallest `k`. `None` when the segment is shorter than two minimum
    /// segments.
    pub fn scan(&mut self) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for k in self.splits() {
            let d = self.refresh(k);
            if best.is_none_or(|(b, _)| d > b) {
                best = Some((d, k));
            }
        }
        best
    }

    /// `max_k D_{k,t}` when it is at least `level`, `None` when it is
    /// certainly below `level`.
    pub fn max_at_least(&mut self, level: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        for k in self.splits() {
            if self.bound(k) >= level {
                let d = self.refresh(k);
                if d >= level && best.is_none_or(|b| d > b) {
                    best = Some(d);
                }
            }
        }
        best
    }

    /// Whether `max_k D_{k,t} > h`.
    pub fn exceeds(&mut self, h: f64) -> bool {
        self.max_at_least(h).is_some_and(|d| d > h)
    }

    /// Cheap `(lower, upper)` bracket of `max_k D_{k,t}`: the upper bound
    /// from the cached statistics, the lower from refreshing the split with
    /// the largest bound.
    fn bracket(&mut self) -> (f64, f64) {
        let mut top = (f64::NEG_INFINITY, 0);
        for k in self.splits() {
            if self.cached_at[k] == 0 {
                self.refresh(k);
            }
            let b = self.bound(k);
            if b > top.0 {
                top = (b, k);
            }
        }
        if top.0 == f64::NEG_INFINITY {
            return (0.0, 0.0);
        }
        (self.refresh(top.1), top.0)
    }
}

/// Which detector a threshold table serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationKind {
    /// Batch test on a sample of fixed length.
    Phase1,
    /// Sequential test on a growing segment.
    Phase2,
}

impl CalibrationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Phase1 => "phase1",
            Self::Phase2 => "phase2",
        }
    }
}

impl std::str::FromStr for CalibrationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phase1" => Ok(Self::Phase1),
            "phase2" => Ok(Self::Phase2),
            other => Err(Error::invalid(format!("unknown calibration kind `{other}`"))),
        }
    }
}

/// Everything that determines a threshold table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub kind: CalibrationKind,
    /// Sample length for phase 1, longest calibrated segment for phase 2.
    pub n: usize,
    pub alpha: f64,
    pub replications: usize,
    pub seed: u64,
    pub min_segment: usize,
}

impl CalibrationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if self.replications < MIN_REPLICATIONS {
            return Err(Error::invalid(format!(
                "{} replications; at least {MIN_REPLICATIONS} required",
                self.replications
            )));
        }
        if self.alpha * (self.replications as f64) < MIN_TAIL_COUNT {
            return Err(Error::invalid(format!(
                "alpha * replications = {} leaves fewer than {MIN_TAIL_COUNT} tail draws",
                self.alpha * self.replications as f64
            )));
        }
        if self.min_segment == 0 || self.n < 2 * self.min_segment {
            return Err(Error::invalid(format!(
                "length {} is shorter than two minimum segments of {}",
                self.n, self.min_segment
            )));
        }
        Ok(())
    }

    /// File stem used by [`ThresholdCache`].
    pub fn cache_key(&self) -> String {
        format!(
            "{}_n{}_a{}_r{}_s{}_m{}",
            self.kind.as_str(),
            self.n,
            self.alpha,
            self.replications,
            self.seed,
            self.min_segment
        )
    }

    /// Number of null draws allowed to exceed the threshold.
    fn tail_count(&self) -> usize {
        (self.alpha * self.replications as f64 + 1e-9).floor() as usize
    }
}

/// Calibrated thresholds `h_t` for `t = first_t, first_t + 1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub spec: CalibrationSpec,
    pub first_t: usize,
    pub thresholds: Vec<f64>,
}

impl ThresholdTable {
    /// Threshold for a segment of length `t`. Phase-2 tables extend their
    /// last value beyond the calibrated range; phase-1 tables answer only
    /// for their own sample length.
    pub fn threshold(&self, t: usize) -> Option<f64> {
        let i = t.checked_sub(self.first_t)?;
        match self.spec.kind {
            CalibrationKind::Phase1 => self.thresholds.get(i).copied(),
            CalibrationKind::Phase2 => self
                .thresholds
                .get(i)
                .or_else(|| self.thresholds.last())
                .copied(),
        }
    }

    pub fn last_t(&self) -> usize {
        self.first_t + self.thresholds.len() - 1
    }

    /// Versioned CSV form:
    ///
    /// ```text
    /// # marketdyn threshold table v1
    /// kind,n,alpha,replications,seed,min_segment
    /// phase2,300,0.01,1000,7,30
    /// t,h
    /// 60,0.41
    /// ...
    /// ```
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let s = &self.spec;
        writeln!(w, "{TABLE_MAGIC}")?;
        writeln!(w, "kind,n,alpha,replications,seed,min_segment")?;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            s.kind.as_str(),
            s.n,
            s.alpha,
            s.replications,
            s.seed,
            s.min_segment
        )?;
        writeln!(w, "t,h")?;
        for (i, h) in self.thresholds.iter().enumerate() {
            writeln!(w, "{},{}", self.first_t + i, h)?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut lines = text.lines().enumerate().map(|(i, l)| (i as u64 + 1, l));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("threshold table truncated before {what}"),
            })
        };
        let bad = |line: u64, message: String| Error::Parse { line, message };
        let (l, magic) = next("header")?;
        if magic.trim() != TABLE_MAGIC {
            return Err(bad(l, format!("unsupported threshold table header `{magic}`")));
        }
        next("metadata header")?;
        let (l, meta) = next("metadata")?;
        let f: Vec<&str> = meta.split(',').collect();
        if f.len() != 6 {
            return Err(bad(l, "metadata needs 6 fields".into()));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|e| bad(l, e.to_string()));
        let spec = CalibrationSpec {
            kind: f[0].parse()?,
            n: num(f[1])? as usize,
            alpha: f[2].parse().map_err(|e: std::num::ParseFloatError| bad(l, e.to_string()))?,
            replications: num(f[3])? as usize,
            seed: num(f[4])?,
            min_segment: num(f[5])? as usize,
        };
        next("threshold header")?;
        let mut first_t = None;
        let mut thresholds = Vec::new();
        for (l, row) in lines {
            if row.trim().is_empty() {
                continue;
            }
            let (t, h) = row.split_once(',').ok_or_else(|| bad(l, "expected `t,h`".into()))?;
            let t: usize = t.parse().map_err(|e: std::num::ParseIntError| bad(l, e.to_string()))?;
            let h: f64 = h.parse().map_err(|e: std::num::ParseFloatError| bad(l, e.to_string()))?;
            let f = *first_t.get_or_insert(t);
            if t != f + thresholds.len() {
                return Err(bad(l, "threshold rows must be consecutive".into()));
            }
            thresholds.push(h);
        }
        Ok(Self {
            spec,
            first_t: first_t.ok_or_else(|| Error::invalid("threshold table has no rows"))?,
            thresholds,
        })
    }
}

const TABLE_MAGIC: &str = "# marketdyn threshold table v1";

fn gaussian_sample(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Monte Carlo calibration under an i.i.d. standard Gaussian null. The KS
/// statistic is rank based, so the null marginal does not matter.
///
/// Phase 1 returns the empirical upper-`alpha` quantile of `max_k D_{k,n}`.
/// Phase 2 evolves `replications` null paths one observation at a time; at
/// each length `t` it sets `h_t` from the statistics of the paths that have
/// not alarmed yet, then replaces alarmed paths with copies of surviving ones
/// (fresh futures, shared past), so the population always samples the null
/// conditional on no earlier alarm.
pub fn calibrate_thresholds(spec: &CalibrationSpec) -> Result<ThresholdTable> {
    spec.validate()?;
    match spec.kind {
        CalibrationKind::Phase1 => calibrate_phase1(spec),
        CalibrationKind::Phase2 => Ok(calibrate_phase2(spec)),
    }
}

fn calibrate_phase1(spec: &CalibrationSpec) -> Result<ThresholdTable> {
    let mut stats: Vec<f64> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng::substream(spec.seed, "cpm/phase1", rep as u64);
            let x = gaussian_sample(&mut rng, spec.n);
            SegmentScan::from_slice(spec.min_segment, &x)
                .scan()
                .map_or(0.0, |(d, _)| d)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let h = stats[spec.replications - spec.tail_count() - 1];
    Ok(ThresholdTable {
        spec: spec.clone(),
        first_t: spec.n,
        thresholds: vec![h],
    })
}

#[derive(Clone)]
struct NullPath {
    scan: SegmentScan,
    rng: ChaCha8Rng,
}

impl NullPath {
    fn step(&mut self) {
        let x: f64 = StandardNormal.sample(&mut self.rng);
        self.scan.push(x);
    }
}

fn calibrate_phase2(spec: &CalibrationSpec) -> ThresholdTable {
    let r = spec.replications;
    let m = spec.min_segment;
    let path_stream = |t: usize, j: usize| ((t as u64) << 32) | j as u64;
    let mut paths: Vec<NullPath> = (0..r)
        .into_par_iter()
        .map(|j| {
            let mut p = NullPath {
                scan: SegmentScan::new(m),
                rng: rng::substream(spec.seed, "cpm/phase2/path", path_stream(0, j)),
            };
            for _ in 1..2 * m {
                p.step();
            }
            p
        })
        .collect();
    let mut resample_rng = rng::substream(spec.seed, "cpm/phase2/resample", 0);
    let target = spec.alpha * r as f64;
    let q = spec.tail_count();
    let mut thresholds = Vec::with_capacity(spec.n + 1 - 2 * m);

    for t in 2 * m..=spec.n {
        let brackets: Vec<(f64, f64)> = paths
            .par_iter_mut()
            .map(|p| {
                p.step();
                p.scan.bracket()
            })
            .collect();
        // the (q+1)-th largest lower bound never exceeds the (q+1)-th largest
        // statistic, so only paths whose upper bound reaches it matter
        let mut lows: Vec<f64> = brackets.iter().map(|b| b.0).collect();
        lows.sort_by(|a, b| b.total_cmp(a));
        let level = lows[q];
        let stats: Vec<Option<f64>> = paths
            .par_iter_mut()
            .zip(&brackets)
            .map(|(p, &(_, hi))| if hi >= level { p.scan.max_at_least(level) } else { None })
            .collect();
        let mut top: Vec<f64> = stats.iter().flatten().copied().collect();
        top.sort_by(|a, b| b.total_cmp(a));
        let h_upper = top[q];
        // D is lattice valued: pick whichever of `> h` and `>= h` alarms a
        // fraction of paths closest to alpha
        let above = top.iter().take_while(|&&d| d > h_upper).count();
        let at_or_above = top.iter().take_while(|&&d| d >= h_upper).count();
        let h = if (at_or_above as f64 - target).abs() < (target - above as f64).abs() {
            h_upper.next_down()
        } else {
            h_upper
        };
        thresholds.push(h);

        if t == spec.n {
            break;
        }
        let (dead, alive): (Vec<usize>, Vec<usize>) =
            (0..r).partition(|&j| stats[j].is_some_and(|d| d > h));
        use rand::Rng;
        let sources: Vec<usize> = dead
            .iter()
            .map(|_| alive[resample_rng.random_range(0..alive.len())])
            .collect();
        for (&j, &src) in dead.iter().zip(&sources) {
            let mut clone = paths[src].clone();
            clone.rng = rng::substream(spec.seed, "cpm/phase2/path", path_stream(t, j));
            paths[j] = clone;
        }
    }
    ThresholdTable {
        spec: spec.clone(),
        first_t: 2 * m,
        thresholds,
    }
}

/// On-disk cache of threshold tables, one CSV file per
/// [`CalibrationSpec::cache_key`].
#[derive(Debug, Clone)]
pub struct ThresholdCache {
    dir: PathBuf,
}

impl ThresholdCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, spec: &CalibrationSpec) -> PathBuf {
        self.dir.join(format!("{}.csv", spec.cache_key()))
    }

    pub fn get_or_calibrate(&self, spec: &CalibrationSpec) -> Result<ThresholdTable> {
        let path = self.path_for(spec);
        if let Ok(file) = std::fs::File::open(&path) {
            match ThresholdTable::read_csv(file) {
                Ok(t) if &t.spec == spec => return Ok(t),
                Ok(_) | Err(_) => log::warn!("ignoring stale threshold cache {}", path.display()),
            }
        }
        let table = calibrate_thresholds(spec)?;
        std::fs::create_dir_all(&self.dir)?;
        let tmp = path.with_extension("csv.tmp");
        table.write_csv(std::io::BufWriter::new(std::fs::File::create(&tmp)?))?;
        std::fs::rename(&tmp, &path)?;
        Ok(table)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

fn check_table(table: &ThresholdTable, min_segment: usize) -> Result<()> {
    if table.spec.min_segment != min_segment {
        return Err(Error::invalid(format!(
            "thresholds were calibrated for min_segment {}, not {min_segment}",
            table.spec.min_segment
        )));
    }
    Ok(())
}

/// Single change point test. Returns the split `k` maximising `D_{k,n}`
/// when the maximum exceeds the threshold for `n`.
pub fn detect_batch(x: &[f64], table: &ThresholdTable, min_segment: usize) -> Result<Option<usize>> {
    check_sample(x, "batch")?;
    check_table(table, min_segment)?;
    if x.len() < 2 * min_segment {
        return Err(Error::invalid(format!(
            "sample of {} is shorter than two minimum segments of {min_segment}",
            x.len()
        )));
    }
    let h = table.threshold(x.len()).ok_or_else(|| {
        Error::invalid(format!("threshold table has no entry for n = {}", x.len()))
    })?;
    let (d, k) = SegmentScan::from_slice(min_segment, x).scan().expect("length checked");
    Ok((d > h).then_some(k))
}

/// Streaming change point detector with restart after each detection.
#[derive(Debug, Clone)]
pub struct SequentialDetector<'a> {
    table: &'a ThresholdTable,
    min_segment: usize,
    /// Absolute position of the current segment's first observation.
    segment_start: usize,
    scan: SegmentScan,
    seen: usize,
}

impl<'a> SequentialDetector<'a> {
    pub fn new(table: &'a ThresholdTable, min_segment: usize) -> Result<Self> {
        check_table(table, min_segment)?;
        if table.spec.kind != CalibrationKind::Phase2 {
            return Err(Error::invalid("sequential detection needs a phase-2 threshold table"));
        }
        Ok(Self {
            table,
            min_segment,
            segment_start: 0,
            scan: SegmentScan::new(min_segment),
            seen: 0,
        })
    }

    /// Observations consumed so far.
    pub fn seen(&self) -> usize {
        self.seen
    }

    /// Feed one observation. Returns the change points (absolute counts of
    /// pre-change observations) confirmed by it.
    pub fn push(&mut self, x: f64) -> Vec<usize> {
        self.seen += 1;
        let mut found = Vec::new();
        let mut pending = vec![x];
        while let Some(v) = pending.pop() {
            self.scan.push(v);
            let t = self.scan.len();
            if t < 2 * self.min_segment {
                continue;
            }
            let h = self.table.threshold(t).expect("phase-2 tables cover every t >= 2m");
            if !self.scan.exceeds(h) {
                continue;
            }
            let (_, k) = self.scan.scan().expect("segment long enough");
            let change = self.segment_start + k;
            found.push(change);
            // restart after the change and replay the rest of the segment
            let rest = self.scan.values()[k..].to_vec();
            self.segment_start = change;
            self.scan = SegmentScan::new(self.min_segment);
            pending.extend(rest.into_iter().rev());
        }
        found
    }
}

/// Change points of a whole stream, in increasing order.
pub fn detect_sequential(x: &[f64], table: &ThresholdTable, min_segment: usize) -> Result<Vec<usize>> {
    check_sample(x, "stream")?;
    let mut det = SequentialDetector::new(table, min_segment)?;
    let mut out = Vec::new();
    for &v in x {
        out.extend(det.push(v));
    }
    Ok(out)
}

/// Number of tests run before the first alarm on a fresh CPM (the first test
/// happens at length `2 * min_segment`), or `None` if the stream ends first.
pub fn run_length(x: &[f64], table: &ThresholdTable, min_segment: usize) -> Result<Option<usize>> {
    let mut det = SequentialDetector::new(table, min_segment)?;
    for (i, &v) in x.iter().enumerate() {
        if !det.push(v).is_empty() {
            return Ok(Some(i + 2 - 2 * min_segment));
        }
    }
    Ok(None)
}

/// Change points of one asset's return series, on the 1-based return axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakSet {
    pub asset_id: String,
    indices: Vec<usize>,
}

impl BreakSet {
    pub fn new(asset_id: impl Into<String>, indices: Vec<usize>) -> Result<Self> {
        if indices.first() == Some(&0) {
            return Err(Error::invalid("break indices are 1-based"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("break indices must be strictly increasing"));
        }
        Ok(Self {
            asset_id: asset_id.into(),
            indices,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Sequential detection on every asset of a returns panel.
pub fn detect_panel(r: &ReturnsPanel, table: &ThresholdTable, min_segment: usize) -> Result<Vec<BreakSet>> {
    let offset = *r.indices().start() - 1;
    let cols: Vec<&[f64]> = r.columns().collect();
    cols.par_iter()
        .zip(r.asset_ids())
        .map(|(c, id)| {
            let idx = detect_sequential(c, table, min_segment)?
                .into_iter()
                .map(|k| k + offset)
                .collect();
            BreakSet::new(id.clone(), idx)
        })
        .collect()
}

/// CSV `asset_id,change_index,change_date`; an asset without breaks gets one
/// row with empty index and date. `dates[s - 1]` is the date of return `s`.
pub fn write_break_sets<W: Write>(sets: &[BreakSet], dates: &[NaiveDate], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["asset_id", "change_index", "change_date"])?;
    for s in sets {
        if s.indices.is_empty() {
            w.write_record([s.asset_id.as_str(), "", ""])?;
        }
        for &k in &s.indices {
            let date = dates
                .get(k - 1)
                .ok_or_else(|| Error::invalid(format!("break index {k} beyond the date axis")))?;
            w.write_record([s.asset_id.clone(), k.to_string(), date.format("%Y-%m-%d").to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_break_sets<R: Read>(reader: R) -> Result<Vec<BreakSet>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = &rec[0];
        if out.last().is_none_or(|(last, _)| last != id) {
            out.push((id.to_string(), Vec::new()));
        }
        if !rec[1].is_empty() {
            let k = rec[1].parse().map_err(|e| Error::Parse {
                line,
                message: format!("bad change index: {e}"),
            })?;
            out.last_mut().unwrap().1.push(k);
        }
    }
    out.into_iter().map(|(id, idx)| BreakSet::new(id, idx)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: CalibrationKind, n: usize, alpha: f64, reps: usize, seed: u64, m: usize) -> CalibrationSpec {
        CalibrationSpec {
            kind,
            n,
            alpha,
            replications: reps,
            seed,
            min_segment: m,
        }
    }

    #[test]
    fn ks_cases() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[5.0, 6.0, 7.0]).unwrap(), 1.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.0, 3.0]).unwrap(), 0.5);
        assert!(ks_statistic(&[], &[1.0]).is_err());
        assert!(ks_statistic(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn split_statistic_matches_direct_ks() {
        let x: Vec<f64> = (0..41).map(|i| ((i * 37) % 17) as f64 * 0.5 - 3.0).collect();
        let s = SegmentScan::from_slice(3, &x);
        for k in 3..=38 {
            let direct = ks_statistic(&x[..k], &x[k..]).unwrap();
            assert!((s.split_statistic(k) - direct).abs() < 1e-12, "k = {k}");
        }
    }

    #[test]
    fn constant_sample_has_no_change() {
        let x = vec![0.25; 80];
        let mut s = SegmentScan::from_slice(10, &x);
        assert_eq!(s.scan().unwrap().0, 0.0);
        let table = ThresholdTable {
            spec: spec(CalibrationKind::Phase1, 80, 0.05, 1000, 0, 10),
            first_t: 80,
            thresholds: vec![0.3],
        };
        assert_eq!(detect_batch(&x, &table, 10).unwrap(), None);
        assert!(detect_batch(&x[..19], &table, 10).is_err());
        assert!(detect_batch(&x, &table, 11).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(spec(CalibrationKind::Phase1, 100, 0.0, 1000, 0, 30).validate().is_err());
        assert!(spec(CalibrationKind::Phase1, 100, 0.05, 999, 0, 30).validate().is_err());
        assert!(spec(CalibrationKind::Phase1, 100, 0.005, 1000, 0, 30).validate().is_err());
        assert!(spec(CalibrationKind::Phase1, 59, 0.05, 1000, 0, 30).validate().is_err());
        assert!(spec(CalibrationKind::Phase1, 60, 0.01, 1000, 0, 30).validate().is_ok());
    }

    #[test]
    fn phase1_median_is_reproducible() {
        let s = spec(CalibrationKind::Phase1, 40, 0.5, 1000, 11, 5);
        let a = calibrate_thresholds(&s).unwrap();
        let b = calibrate_thresholds(&s).unwrap();
        assert_eq!(a, b);
        // independent recomputation of the median from the same streams
        let mut stats: Vec<f64> = (0..1000)
            .map(|rep| {
                let mut rng = rng::substream(11, "cpm/phase1", rep);
                let x = gaussian_sample(&mut rng, 40);
                (5..=35)
                    .map(|k| ks_statistic(&x[..k], &x[k..]).unwrap())
                    .fold(0.0, f64::max)
            })
            .collect();
        stats.sort_by(f64::total_cmp);
        assert!((a.thresholds[0] - stats[499]).abs() < 1e-12);
    }

    #[test]
    fn thresholds_decrease_with_alpha() {
        let lo = calibrate_thresholds(&spec(CalibrationKind::Phase1, 80, 0.01, 2000, 3, 10)).unwrap();
        let hi = calibrate_thresholds(&spec(CalibrationKind::Phase1, 80, 0.10, 2000, 3, 10)).unwrap();
        assert!(lo.thresholds[0] > hi.thresholds[0]);
    }

    #[test]
    fn phase2_table_shape_and_lookup() {
        let s = spec(CalibrationKind::Phase2, 40, 0.05, 1000, 5, 10);
        let t = calibrate_thresholds(&s).unwrap();
        assert_eq!(t.first_t, 20);
        assert_eq!(t.last_t(), 40);
        assert!(t.thresholds.iter().all(|h| *h > 0.0 && *h <= 1.0));
        assert_eq!(t.threshold(19), None);
        assert_eq!(t.threshold(500), t.thresholds.last().copied());
        assert_eq!(calibrate_thresholds(&s).unwrap(), t);
    }

    #[test]
    fn table_csv_round_trip_and_cache() {
        let s = spec(CalibrationKind::Phase2, 30, 0.05, 1000, 9, 5);
        let dir = tempfile::tempdir().unwrap();
        let cache = ThresholdCache::new(dir.path());
        let t = cache.get_or_calibrate(&s).unwrap();
        let path = cache.path_for(&s);
        assert!(path.ends_with("phase2_n30_a0.05_r1000_s9_m5.csv"));
        let back = ThresholdTable::read_csv(std::fs::File::open(&path).unwrap()).unwrap();
        assert_eq!(back, t);
        assert_eq!(cache.get_or_calibrate(&s).unwrap(), t);
    }

    #[test]
    fn pruned_exceedance_matches_full_scan() {
        let mut rng = rng::substream(1, "test", 0);
        let x = gaussian_sample(&mut rng, 150);
        let mut pruned = SegmentScan::new(10);
        for (i, &v) in x.iter().enumerate() {
            pruned.push(v);
            if pruned.len() >= 20 {
                let mut fresh = SegmentScan::from_slice(10, &x[..=i]);
                let (d, _) = fresh.scan().unwrap();
                for h in [0.2, 0.3, d, d.next_down(), 0.45] {
                    assert_eq!(pruned.exceeds(h), d > h, "t = {}, h = {h}", i + 1);
                }
            }
        }
    }

    #[test]
    fn sequential_restarts_are_spaced() {
        let table = ThresholdTable {
            spec: spec(CalibrationKind::Phase2, 40, 0.05, 1000, 0, 10),
            first_t: 20,
            thresholds: vec![0.9; 21],
        };
        let mut x = vec![0.0; 0];
        for block in 0..4 {
            x.extend((0..40).map(|i| (block * 10) as f64 + (i % 7) as f64 * 0.1));
        }
        let found = detect_sequential(&x, &table, 10).unwrap();
        assert!(!found.is_empty());
        assert!(found.windows(2).all(|w| w[1] >= w[0] + 10));
        assert!(found.iter().all(|k| k % 40 == 0), "{found:?}");
    }

    #[test]
    fn break_set_csv_round_trip() {
        let sets = vec![
            BreakSet::new("A", vec![3, 9]).unwrap(),
            BreakSet::new("B", vec![]).unwrap(),
            BreakSet::new("C", vec![1]).unwrap(),
        ];
        let dates = crate::ingest::calendar_dates(
            NaiveDate::from_ymd_opt(2021, 3, 1).unwrap(),
            10,
            crate::ingest::Calendar::Daily,
        );
        let mut buf = Vec::new();
        write_break_sets(&sets, &dates, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("A,9,2021-03-09"));
        assert_eq!(read_break_sets(buf.as_slice()).unwrap(), sets);
        assert!(BreakSet::new("x", vec![2, 2]).is_err());
        assert!(BreakSet::new("x", vec![0]).is_err());
    }
}
