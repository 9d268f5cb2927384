//! The end-to-end run and the stage helpers shared with the subcommands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use marketdyn::changepoint::{detect_panel, write_break_sets};
use marketdyn::cluster::{agglomerate_matrix, write_assignments};
use marketdyn::distances::{
    breaks_matrix, extremes_matrix, normalized_norm, qualified_ids, returns_matrix, tail_measure, to_affinity,
    trajectory_matrix, TailScale,
};
use marketdyn::ingest::{align_panels, load_panel, make_partition, synth_panel, write_panel, SynthSpec};
use marketdyn::persistence::{persistence_matrix, persistence_norm};
use marketdyn::returns::{log_returns, rolling_risk_adjusted, total_returns};
use marketdyn::spectra::{correlation_element_density, dynamics_deviation, rolling_correlation, surface_from_correlations};
use marketdyn::{
    rng, AlignmentPolicy, BreakSet, CalibrationKind, CalibrationSpec, Dendrogram, DistanceMatrix,
    EigenspectrumSurface, Linkage, PeriodPartition, PricePanel, ReturnsPanel, Segment, TailMeasure,
    ThresholdCache, ThresholdTable,
};
use serde::Serialize;

use crate::config::{ChangepointConfig, CollectionConfig, CutConfig, RunConfig, SynthConfig};
use crate::manifest::{sha256_file, Manifest, MANIFEST_FILE};
use crate::CliError;

/// Present in the output directory while a run is in progress or after it
/// failed; holds the failure message.
pub const PARTIAL_MARKER: &str = ".partial";
pub const REPORT_FILE: &str = "report.json";
/// Segment used when the config declares no periods.
pub const FULL_PERIOD: &str = "FULL";

fn stage<T>(name: &'static str, f: impl FnOnce() -> marketdyn::Result<T>) -> Result<T, CliError> {
    log::info!("stage {name}");
    f().map_err(|source| CliError::Stage { stage: name, source })
}

pub fn synth_seed(seed: u64, label: &str) -> u64 {
    rng::child_seed(seed, &format!("synth/{label}"))
}

pub fn calibration_seed(seed: u64) -> u64 {
    rng::child_seed(seed, "changepoint")
}

pub fn synth_collection(label: &str, s: &SynthConfig, seed: u64) -> marketdyn::Result<PricePanel> {
    synth_panel(&SynthSpec {
        label: label.to_string(),
        assets: s.assets,
        days: s.days,
        regimes: s.regimes.clone(),
        seed: synth_seed(seed, label),
        start: s.start,
        calendar: s.calendar,
    })
}

pub fn load_collection(c: &CollectionConfig, seed: u64, policy: AlignmentPolicy) -> marketdyn::Result<PricePanel> {
    match (&c.path, &c.synth) {
        (Some(path), _) => Ok(load_panel(path, policy)?.relabel(c.label.clone())),
        (None, Some(s)) => synth_collection(&c.label, s, seed),
        (None, None) => Err(marketdyn::Error::Invalid(format!("collection `{}` has no source", c.label))),
    }
}

/// Phase 2 calibration for streams of `n_returns`, capped at the horizon.
pub fn calibration_spec(cp: &ChangepointConfig, n_returns: usize, seed: u64) -> Result<CalibrationSpec, CliError> {
    let alpha = cp.alpha().map_err(CliError::Usage)?;
    Ok(CalibrationSpec {
        kind: CalibrationKind::Phase2,
        n: cp.horizon.min(n_returns),
        alpha,
        replications: cp.replications,
        seed: calibration_seed(seed),
        min_segment: cp.min_segment,
    })
}

pub fn break_sets(
    r: &ReturnsPanel,
    cp: &ChangepointConfig,
    seed: u64,
    cache: &ThresholdCache,
) -> Result<(ThresholdTable, Vec<BreakSet>), CliError> {
    let spec = calibration_spec(cp, r.n_obs(), seed)?;
    let table = stage("calibrate", || {
        spec.validate()?;
        cache.get_or_calibrate(&spec)
    })?;
    let sets = stage("breaks", || detect_panel(r, &table, cp.min_segment))?;
    Ok((table, sets))
}

pub fn tail_measures(r: &ReturnsPanel, ids: &[String], fraction: f64) -> marketdyn::Result<Vec<TailMeasure>> {
    r.columns().zip(ids).map(|(c, id)| tail_measure(id.clone(), c, fraction)).collect()
}

/// Both surfaces' common windows inside the return range of `seg`.
pub fn dd_range(
    a: &EigenspectrumSurface,
    b: &EigenspectrumSurface,
    returns: &RangeInclusive<usize>,
) -> Option<RangeInclusive<usize>> {
    let ra = a.clip(returns)?;
    b.clip(&ra)
}

pub fn dd_components(a: &EigenspectrumSurface, b: &EigenspectrumSurface, k: usize) -> usize {
    k.min(a.n_components()).min(b.n_components())
}

/// CSV `label,start_date,end_date,start,end` with 1-based price indices.
pub fn write_partition<W: Write>(p: &PeriodPartition, dates: &[NaiveDate], w: W) -> marketdyn::Result<()> {
    let mut w = csv_writer(w);
    w.write_record(["label", "start_date", "end_date", "start", "end"])?;
    for s in p.segments() {
        w.write_record([
            s.label.clone(),
            fmt_date(dates[s.start - 1]),
            fmt_date(dates[s.end - 1]),
            s.start.to_string(),
            s.end.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_partition(path: &Path) -> Result<Vec<Segment>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read partition {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || marketdyn::Error::Parse { line: n as u64 + 1, message: "expected label,start_date,end_date,start,end".into() };
        if f.len() != 5 {
            return Err(bad().into());
        }
        let start = f[3].parse().map_err(|_| bad())?;
        let end = f[4].parse().map_err(|_| bad())?;
        out.push(Segment { label: f[0].to_string(), start, end });
    }
    Ok(out)
}

fn csv_writer<W: Write>(w: W) -> CsvWriter<W> {
    CsvWriter(w)
}

/// Plain comma writer for files whose fields never need quoting.
struct CsvWriter<W: Write>(W);

impl<W: Write> CsvWriter<W> {
    fn write_record<I, S>(&mut self, fields: I) -> std::io::Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let line: Vec<String> = fields.into_iter().map(|s| s.as_ref().to_string()).collect();
        writeln!(self.0, "{}", line.join(","))
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.0.flush()
    }
}

fn fmt_date(d: NaiveDate) -> String {
    d.format("%Y-%m-%d").to_string()
}

/// Dendrogram JSON, Newick and, given a cut, `id,cluster` assignments.
/// Returns the number of clusters of the cut.
pub fn write_clustering(
    den: &Dendrogram,
    cut: Option<CutConfig>,
    json: &Path,
    newick: &Path,
    assignments: &Path,
) -> marketdyn::Result<Option<usize>> {
    den.write_json(BufWriter::new(File::create(json)?))?;
    std::fs::write(newick, format!("{}\n", den.to_newick()))?;
    let labels = match cut {
        Some(CutConfig { k: Some(k), .. }) => den.cut_k(k)?,
        Some(CutConfig { height: Some(h), .. }) => den.cut_height(h)?,
        _ => return Ok(None),
    };
    write_assignments(&den.leaves, &labels, BufWriter::new(File::create(assignments)?))?;
    Ok(labels.iter().max().copied())
}

struct Outputs {
    root: PathBuf,
    entries: Vec<(String, String)>,
}

impl Outputs {
    fn path(&mut self, class: &str, rel: &str) -> marketdyn::Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        self.entries.push((class.to_string(), rel.to_string()));
        Ok(path)
    }

    fn create(&mut self, class: &str, rel: &str) -> marketdyn::Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(class, rel)?)?))
    }

    fn matrix(&mut self, class: &str, rel: &str, d: &DistanceMatrix) -> marketdyn::Result<()> {
        let path = self.path(class, rel)?;
        self.entries.push((class.to_string(), format!("{rel}.meta.json")));
        d.save(&path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub seed: u64,
    pub calibration: CalibrationSpec,
    pub collections: Vec<CollectionReport>,
    pub dd: Vec<DdRow>,
    /// Normalized norms of the combined matrices.
    pub combined_norms: BTreeMap<String, f64>,
    pub clusterings: Vec<ClusterRow>,
    pub manifest_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollectionReport {
    pub label: String,
    pub assets: usize,
    pub dates: usize,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
    pub mean_first_ratio: f64,
    pub breaks: usize,
    pub assets_without_breaks: usize,
    /// Normalized norms of the distance matrices; unnormalized Frobenius
    /// norm for persistence.
    pub norms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DdRow {
    pub segment: String,
    pub windows: Option<(usize, usize)>,
    pub k: usize,
    pub dd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterRow {
    pub name: String,
    pub leaves: usize,
    pub top_height: f64,
    pub clusters: Option<usize>,
}

/// Run every stage, write all artifacts, `manifest.json` and `report.json`.
/// On failure the output directory keeps a `.partial` marker naming the
/// failed stage.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Report, CliError> {
    std::fs::create_dir_all(&cfg.output)?;
    let marker = cfg.output.join(PARTIAL_MARKER);
    std::fs::write(&marker, "running\n")?;
    let _ = std::fs::remove_file(cfg.output.join(MANIFEST_FILE));
    match execute(cfg) {
        Ok(report) => {
            std::fs::remove_file(&marker)?;
            Ok(report)
        }
        Err(e) => {
            let _ = std::fs::write(&marker, format!("{e}\n"));
            Err(e)
        }
    }
}

fn execute(cfg: &RunConfig) -> Result<Report, CliError> {
    let mut out = Outputs { root: cfg.output.clone(), entries: Vec::new() };
    let cache = ThresholdCache::new(cfg.threshold_cache_dir());

    let panels = stage("ingest", || {
        let a = load_collection(&cfg.collections[0], cfg.seed, cfg.alignment)?;
        let b = load_collection(&cfg.collections[1], cfg.seed, cfg.alignment)?;
        let (a, b) = align_panels(&a, &b)?;
        write_panel(&a, out.create("panel", &format!("{}/panel.csv", a.label()))?)?;
        write_panel(&b, out.create("panel", &format!("{}/panel.csv", b.label()))?)?;
        Ok([a, b])
    })?;
    let labels: Vec<String> = panels.iter().map(|p| p.label().to_string()).collect();
    let dates = panels[0].dates();

    let partition = stage("partition", || {
        let bounds: Vec<(String, NaiveDate, NaiveDate)> = if cfg.periods.is_empty() {
            vec![(FULL_PERIOD.to_string(), dates[0], *dates.last().unwrap())]
        } else {
            cfg.periods.iter().map(|p| (p.label.clone(), p.start, p.end)).collect()
        };
        let p = make_partition(&panels[0], &bounds)?;
        write_partition(&p, dates, out.create("dd", "partition.csv")?)?;
        Ok(p)
    })?;

    let returns: Vec<ReturnsPanel> = stage("returns", || {
        panels
            .iter()
            .map(|p| {
                let r = log_returns(p);
                r.write_csv(out.create("returns", &format!("{}/returns.csv", p.label()))?)?;
                Ok(r)
            })
            .collect()
    })?;

    let surfaces: Vec<EigenspectrumSurface> = stage("spectra", || {
        returns
            .iter()
            .zip(&labels)
            .map(|(r, label)| {
                let mats = rolling_correlation(r, cfg.window)?;
                let s = surface_from_correlations(&mats)?;
                s.write_csv(out.create("surface", &format!("{label}/surface.csv"))?, None)?;
                for seg in partition.segments() {
                    let Some(range) = seg.return_range() else { continue };
                    match correlation_element_density(&mats, &range, cfg.kde_grid) {
                        Ok(d) => d.write_csv(out.create("kde", &format!("{label}/kde_{}.csv", seg.label))?)?,
                        Err(e) => log::warn!("{label}: no density for segment `{}`: {e}", seg.label),
                    }
                }
                Ok(s)
            })
            .collect()
    })?;

    let dd = stage("dd", || {
        let k = dd_components(&surfaces[0], &surfaces[1], cfg.dd_components);
        let mut rows = Vec::new();
        let mut w = csv_writer(out.create("dd", "dd.csv")?);
        w.write_record(["segment", "start_date", "end_date", "first_window", "last_window", "k", "dd"])?;
        for seg in partition.segments() {
            let range = seg.return_range().and_then(|r| dd_range(&surfaces[0], &surfaces[1], &r));
            let value = match &range {
                Some(r) => Some(dynamics_deviation(&surfaces[0], &surfaces[1], r, k)?),
                None => {
                    log::warn!("segment `{}` holds no complete correlation window", seg.label);
                    None
                }
            };
            let (lo, hi) = range.as_ref().map_or((String::new(), String::new()), |r| (r.start().to_string(), r.end().to_string()));
            w.write_record([
                seg.label.clone(),
                fmt_date(dates[seg.start - 1]),
                fmt_date(dates[seg.end - 1]),
                lo,
                hi,
                k.to_string(),
                value.map_or(String::new(), |v| v.to_string()),
            ])?;
            rows.push(DdRow { segment: seg.label.clone(), windows: range.map(|r| (*r.start(), *r.end())), k, dd: value });
        }
        w.flush()?;
        Ok(rows)
    })?;

    let mut reports = Vec::new();
    let mut clusterable: Vec<(String, DistanceMatrix)> = Vec::new();
    let mut calibration = None;
    for ((panel, r), surface) in panels.iter().zip(&returns).zip(&surfaces) {
        let label = panel.label();
        let ids = panel.asset_ids();
        let mut norms = BTreeMap::new();

        let traj = stage("trajectory", || {
            let d = trajectory_matrix(panel);
            out.matrix("trajectory", &format!("{label}/trajectory.csv"), &d)?;
            Ok(d)
        })?;

        let (table, sets) = break_sets(r, &cfg.changepoint, cfg.seed, &cache)?;
        calibration = Some(table.spec.clone());
        let brk = stage("breaks_matrix", || {
            write_break_sets(&sets, r.dates(), out.create("breaks", &format!("{label}/breaks.csv"))?)?;
            let d = breaks_matrix(&sets)?;
            out.matrix("breaks_matrix", &format!("{label}/breaks_matrix.csv"), &d)?;
            Ok(d)
        })?;

        let ext = stage("extremes", || {
            let d = extremes_matrix(&tail_measures(r, ids, cfg.tail_fraction)?, cfg.tail_scale)?;
            out.matrix("extremes", &format!("{label}/extremes.csv"), &d)?;
            Ok(d)
        })?;

        let ret = stage("returns_matrix", || {
            let d = returns_matrix(ids, &total_returns(r))?;
            out.matrix("returns_matrix", &format!("{label}/returns_matrix.csv"), &d)?;
            Ok(d)
        })?;

        for (name, d) in [("trajectory", traj), ("breaks", brk), ("extremes", ext), ("returns", ret)] {
            norms.insert(name.to_string(), normalized_norm(&d));
            clusterable.push((format!("{label}/{name}"), d));
        }
        let first: Vec<f64> = (0..surface.n_windows()).map(|w| surface.row(w)[0]).collect();
        reports.push(CollectionReport {
            label: label.to_string(),
            assets: panel.n_assets(),
            dates: panel.n_dates(),
            first_date: panel.dates()[0],
            last_date: *panel.dates().last().unwrap(),
            mean_first_ratio: first.iter().sum::<f64>() / first.len() as f64,
            breaks: sets.iter().map(|s| s.indices().len()).sum(),
            assets_without_breaks: sets.iter().filter(|s| s.is_empty()).count(),
            norms,
        });
    }

    let combined_norms = stage("affinity", || {
        let mut qids = Vec::new();
        let mut z = Vec::new();
        let mut tails = Vec::new();
        for ((panel, r), label) in panels.iter().zip(&returns).zip(&labels) {
            let q = qualified_ids(label, panel.asset_ids());
            z.extend(total_returns(r));
            tails.extend(tail_measures(r, &q, cfg.tail_fraction)?);
            qids.extend(q);
        }
        let mut norms = BTreeMap::new();
        let dr = returns_matrix(&qids, &z)?;
        out.matrix("returns_matrix", "combined/returns_matrix.csv", &dr)?;
        let ar = to_affinity(&dr)?;
        let path = out.path("affinity", "combined/affinity_returns.csv")?;
        out.entries.push(("affinity".into(), "combined/affinity_returns.csv.meta.json".into()));
        ar.save(&path)?;
        let de = extremes_matrix(&tails, cfg.tail_scale)?;
        out.matrix("extremes", "combined/extremes.csv", &de)?;
        let ae = to_affinity(&de)?;
        let path = out.path("affinity", "combined/affinity_extremes.csv")?;
        out.entries.push(("affinity".into(), "combined/affinity_extremes.csv.meta.json".into()));
        ae.save(&path)?;
        norms.insert("returns".to_string(), normalized_norm(&dr));
        norms.insert("extremes".to_string(), normalized_norm(&de));
        clusterable.push(("combined/returns".into(), dr));
        clusterable.push(("combined/extremes".into(), de));
        Ok(norms)
    })?;

    for ((r, label), report) in returns.iter().zip(&labels).zip(&mut reports) {
        let d = stage("persistence", || {
            let ra = rolling_risk_adjusted(r, cfg.ra_window)?;
            ra.write_csv(out.create("risk_adjusted", &format!("{label}/risk_adjusted.csv"))?)?;
            let k = persistence_matrix(&ra)?;
            k.write_csv(out.create("persistence", &format!("{label}/persistence.csv"))?)?;
            report.norms.insert("persistence".to_string(), persistence_norm(&k));
            Ok(k.dissimilarity())
        })?;
        clusterable.push((format!("{label}/persistence"), d));
    }

    let clusterings = stage("cluster", || {
        clusterable
            .iter()
            .map(|(name, d)| cluster_one(&mut out, name, d, cfg.linkage, cfg.cut))
            .collect::<marketdyn::Result<Vec<_>>>()
    })?;

    let manifest = Manifest::build(&cfg.output, &out.entries)?;
    manifest.write(&cfg.output)?;
    let report = Report {
        seed: cfg.seed,
        calibration: calibration.expect("two collections were processed"),
        collections: reports,
        dd,
        combined_norms,
        clusterings,
        manifest_sha256: sha256_file(&cfg.output.join(MANIFEST_FILE))?,
    };
    let mut text = serde_json::to_string_pretty(&report).map_err(marketdyn::Error::from)?;
    text.push('\n');
    std::fs::write(cfg.output.join(REPORT_FILE), text)?;
    Ok(report)
}

/// `name` is `<dir>/<matrix>`; files land beside the matrix.
fn cluster_one(
    out: &mut Outputs,
    name: &str,
    d: &DistanceMatrix,
    linkage: Linkage,
    cut: Option<CutConfig>,
) -> marketdyn::Result<ClusterRow> {
    let den = agglomerate_matrix(d, linkage)?;
    let (dir, stem) = name.split_once('/').expect("qualified clustering name");
    let json = out.path("dendrogram", &format!("{dir}/dendrogram_{stem}.json"))?;
    let newick = out.path("dendrogram", &format!("{dir}/dendrogram_{stem}.nwk"))?;
    let assignments = out.root.join(format!("{dir}/clusters_{stem}.csv"));
    let clusters = write_clustering(&den, cut, &json, &newick, &assignments)?;
    if clusters.is_some() {
        out.entries.push(("dendrogram".into(), format!("{dir}/clusters_{stem}.csv")));
    }
    Ok(ClusterRow {
        name: name.to_string(),
        leaves: den.n_leaves(),
        top_height: den.heights().last().copied().unwrap_or(0.0),
        clusters,
    })
}

/// Tail scale names accepted on the command line.
pub fn parse_tail_scale(s: &str) -> Result<TailScale, CliError> {
    match s {
        "renormalized" => Ok(TailScale::Renormalized),
        "raw" => Ok(TailScale::Raw),
        other => Err(CliError::Usage(format!("unknown tail scale `{other}`"))),
    }
}
