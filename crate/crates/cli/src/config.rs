//! Run configuration: a TOML file whose relative paths resolve against the
//! file's own directory.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use marketdyn::changepoint::{DEFAULT_MIN_SEGMENT, DEFAULT_REPLICATIONS};
use marketdyn::distances::{TailScale, DEFAULT_TAIL_FRACTION};
use marketdyn::ingest::{Calendar, Regime};
use marketdyn::returns::DEFAULT_RA_WINDOW;
use marketdyn::spectra::{DEFAULT_DD_COMPONENTS, DEFAULT_KDE_GRID, DEFAULT_WINDOW};
use marketdyn::{AlignmentPolicy, Linkage};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Default false-alarm probability per observation (ARL0 = 500).
pub const DEFAULT_ALPHA: f64 = 0.002;
/// Longest segment calibrated for sequential detection. Longer segments
/// reuse the last threshold.
pub const DEFAULT_HORIZON: usize = 500;
/// Environment variable naming the threshold cache directory.
pub const CACHE_ENV: &str = "MARKETDYN_CACHE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every stochastic stage. Required.
    pub seed: u64,
    pub output: PathBuf,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub alignment: AlignmentPolicy,
    /// Rolling correlation window, in returns.
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_dd_components")]
    pub dd_components: usize,
    #[serde(default = "default_kde_grid")]
    pub kde_grid: usize,
    #[serde(default = "default_ra_window")]
    pub ra_window: usize,
    #[serde(default = "default_tail_fraction")]
    pub tail_fraction: f64,
    #[serde(default)]
    pub tail_scale: TailScale,
    #[serde(default)]
    pub linkage: Linkage,
    #[serde(default)]
    pub changepoint: ChangepointConfig,
    pub collections: Vec<CollectionConfig>,
    #[serde(default)]
    pub periods: Vec<PeriodConfig>,
    #[serde(default)]
    pub cut: Option<CutConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangepointConfig {
    /// Mutually exclusive with `arl0`; defaults to [`DEFAULT_ALPHA`].
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub arl0: Option<f64>,
    #[serde(default = "default_min_segment")]
    pub min_segment: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

impl Default for ChangepointConfig {
    fn default() -> Self {
        Self {
            alpha: None,
            arl0: None,
            min_segment: DEFAULT_MIN_SEGMENT,
            replications: DEFAULT_REPLICATIONS,
            horizon: DEFAULT_HORIZON,
        }
    }
}

impl ChangepointConfig {
    pub fn alpha(&self) -> Result<f64, String> {
        match (self.alpha, self.arl0) {
            (Some(_), Some(_)) => Err("set either changepoint.alpha or changepoint.arl0, not both".into()),
            (Some(a), None) => Ok(a),
            (None, Some(arl)) if arl > 1.0 => Ok(1.0 / arl),
            (None, Some(arl)) => Err(format!("changepoint.arl0 = {arl} must exceed 1")),
            (None, None) => Ok(DEFAULT_ALPHA),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionConfig {
    pub label: String,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
}

/// Simulated collection; its seed derives from the run seed and the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub assets: usize,
    pub days: usize,
    #[serde(default = "default_start")]
    pub start: NaiveDate,
    #[serde(default)]
    pub calendar: Calendar,
    pub regimes: Vec<Regime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodConfig {
    pub label: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

/// Optional dendrogram cut; exactly one field set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutConfig {
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub height: Option<f64>,
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}
fn default_dd_components() -> usize {
    DEFAULT_DD_COMPONENTS
}
fn default_kde_grid() -> usize {
    DEFAULT_KDE_GRID
}
fn default_ra_window() -> usize {
    DEFAULT_RA_WINDOW
}
fn default_tail_fraction() -> f64 {
    DEFAULT_TAIL_FRACTION
}
fn default_min_segment() -> usize {
    DEFAULT_MIN_SEGMENT
}
fn default_replications() -> usize {
    DEFAULT_REPLICATIONS
}
fn default_horizon() -> usize {
    DEFAULT_HORIZON
}
fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date")
}

/// Labels become file names.
pub fn check_label(what: &str, label: &str) -> Result<(), String> {
    let ok = !label.is_empty()
        && label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(format!("{what} label `{label}` must be nonempty [A-Za-z0-9_-]"))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.display().to_string(),
            message: format!("cannot read: {e}"),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            CliError::Config { message, .. } => CliError::Config { path: path.display().to_string(), message },
            other => other,
        })
    }

    /// Parse and validate; relative paths are joined onto `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, CliError> {
        let err = |message: String| CliError::Config { path: "<inline>".into(), message };
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| err(e.to_string()))?;
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        cfg.output = resolve(&cfg.output);
        cfg.cache_dir = cfg.cache_dir.as_ref().map(resolve);
        for c in &mut cfg.collections {
            c.path = c.path.as_ref().map(resolve);
        }
        cfg.validate().map_err(err)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.collections.len() != 2 {
            return Err(format!("exactly two collections required, found {}", self.collections.len()));
        }
        for c in &self.collections {
            check_label("collection", &c.label)?;
            match (&c.path, &c.synth) {
                (Some(p), None) if !p.is_file() => {
                    return Err(format!("collection `{}`: input file {} not found", c.label, p.display()))
                }
                (Some(_), None) => {}
                (None, Some(s)) => {
                    if s.assets < 2 || s.days < 2 || s.regimes.is_empty() {
                        return Err(format!(
                            "collection `{}`: synth needs assets >= 2, days >= 2 and at least one regime",
                            c.label
                        ));
                    }
                }
                _ => return Err(format!("collection `{}`: set exactly one of `path` or `synth`", c.label)),
            }
        }
        if self.collections[0].label == self.collections[1].label {
            return Err("collection labels must differ".into());
        }
        for p in &self.periods {
            check_label("period", &p.label)?;
        }
        if self.window < 2 {
            return Err(format!("window = {} must be at least 2", self.window));
        }
        if self.dd_components == 0 {
            return Err("dd_components must be positive".into());
        }
        if self.kde_grid < 2 {
            return Err("kde_grid must be at least 2".into());
        }
        if self.ra_window < 2 {
            return Err(format!("ra_window = {} must be at least 2", self.ra_window));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction < 0.5) {
            return Err(format!("tail_fraction = {} must lie in (0, 0.5)", self.tail_fraction));
        }
        let alpha = self.changepoint.alpha()?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(format!("changepoint alpha = {alpha} must lie in (0, 1)"));
        }
        if self.changepoint.min_segment == 0 || self.changepoint.horizon < 2 * self.changepoint.min_segment {
            return Err("changepoint.horizon must cover two minimum segments".into());
        }
        if let Some(cut) = self.cut {
            match (cut.k, cut.height) {
                (Some(k), None) if k >= 1 => {}
                (None, Some(h)) if h >= 0.0 => {}
                _ => return Err("cut: set exactly one of k >= 1 or height >= 0".into()),
            }
        }
        Ok(())
    }

    /// `MARKETDYN_CACHE`, then `cache_dir`, then the user cache directory.
    pub fn threshold_cache_dir(&self) -> PathBuf {
        if let Some(dir) = std::env::var_os(CACHE_ENV) {
            return PathBuf::from(dir);
        }
        if let Some(dir) = &self.cache_dir {
            return dir.clone();
        }
        default_cache_dir()
    }
}

pub fn default_cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os("XDG_CACHE_HOME") {
        return PathBuf::from(dir).join("marketdyn");
    }
    if let Some(home) = std::env::var_os("HOME") {
        return PathBuf::from(home).join(".cache").join("marketdyn");
    }
    std::env::temp_dir().join("marketdyn-cache")
}

/// Cache directory for single-stage commands: `MARKETDYN_CACHE` or the
/// user cache directory.
pub fn env_cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV).map_or_else(default_cache_dir, PathBuf::from)
}
