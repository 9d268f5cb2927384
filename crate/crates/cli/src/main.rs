use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use marketdyn::changepoint::write_break_sets;
use marketdyn::cluster::agglomerate_matrix;
use marketdyn::distances::{breaks_matrix, extremes_matrix, to_affinity, trajectory_matrix};
use marketdyn::ingest::{load_panel, write_panel, Calendar, Regime};
use marketdyn::persistence::persistence_matrix;
use marketdyn::returns::{log_returns, rolling_risk_adjusted};
use marketdyn::spectra::{correlation_element_density, dynamics_deviation, explained_variance_surface, rolling_correlation, surface_from_correlations};
use marketdyn::{AlignmentPolicy, DistanceKind, DistanceMatrix, EigenspectrumSurface, Linkage, PersistenceMatrix, ThresholdCache};
use marketdyn_cli::config::{self, ChangepointConfig, CutConfig, SynthConfig};
use marketdyn_cli::pipeline::{self, REPORT_FILE};
use marketdyn_cli::{run_pipeline, CliError, Manifest, RunConfig};

/// Collective-behaviour analytics for two collections of price series.
///
/// `run` executes the whole pipeline from a TOML config; every other
/// subcommand runs a single stage on files.
#[derive(Parser)]
#[command(name = "marketdyn", version)]
struct Cli {
    /// Worker threads for parallel stages (0: one per core). Results do not
    /// depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline described by a config file.
    Run {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
    },
    /// Load a price CSV, fill or drop gaps, and write the canonical panel.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        align: AlignArg,
        /// Destination CSV (stdout when omitted).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Simulate a one-factor panel.
    Synth {
        #[arg(long, default_value = "synth")]
        label: String,
        #[arg(long)]
        assets: usize,
        #[arg(long)]
        days: usize,
        /// Factor loading in [0, 1).
        #[arg(long)]
        beta: f64,
        /// Daily return scale.
        #[arg(long, default_value_t = 0.01)]
        sigma: f64,
        /// Run seed; the panel seed derives from it and the label.
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "2018-01-01")]
        start: NaiveDate,
        /// `daily` or `weekdays`.
        #[arg(long, default_value = "daily")]
        calendar: Calendar,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Rolling eigenspectrum surface, optionally with a correlation density.
    Spectra {
        #[command(flatten)]
        panel: PanelArg,
        /// Rolling window length in returns.
        #[arg(long, default_value_t = marketdyn::spectra::DEFAULT_WINDOW)]
        window: usize,
        /// Surface CSV `window_end,lambda_1,...`.
        #[arg(long)]
        output: PathBuf,
        /// Also write the density of correlation entries to this CSV.
        #[arg(long)]
        kde: Option<PathBuf>,
        /// Window ends `START:END` pooled by `--kde` (default: all).
        #[arg(long)]
        segment: Option<String>,
        #[arg(long, default_value_t = marketdyn::spectra::DEFAULT_KDE_GRID)]
        kde_grid: usize,
    },
    /// Dynamics deviation between two surfaces over one segment.
    Dd {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Segment label from `--partition`, or window ends `START:END`.
        #[arg(long)]
        segment: String,
        /// Partition CSV written by `run` (`label,start_date,end_date,start,end`).
        #[arg(long)]
        partition: Option<PathBuf>,
        /// Leading ratios compared (capped at the number of assets).
        #[arg(long, default_value_t = marketdyn::spectra::DEFAULT_DD_COMPONENTS)]
        k: usize,
        /// Also write the result as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Trajectory distance matrix of a panel.
    Trajectory {
        #[command(flatten)]
        panel: PanelArg,
        #[arg(long)]
        output: PathBuf,
    },
    /// Sequential change points of every asset, and their breaks matrix.
    Breaks {
        #[command(flatten)]
        panel: PanelArg,
        #[command(flatten)]
        changepoint: ChangepointArgs,
        /// Run seed; the calibration seed derives from it.
        #[arg(long)]
        seed: u64,
        /// Break sets CSV `asset_id,change_index,change_date`.
        #[arg(long)]
        output: PathBuf,
        /// Also write the breaks distance matrix.
        #[arg(long)]
        matrix: Option<PathBuf>,
    },
    /// Wasserstein distances between return tails.
    Extremes {
        #[command(flatten)]
        panel: PanelArg,
        #[arg(long, default_value_t = marketdyn::distances::DEFAULT_TAIL_FRACTION)]
        tail_fraction: f64,
        /// `renormalized` (unit mass) or `raw` (mass 2 * tail_fraction).
        #[arg(long, default_value = "renormalized")]
        tail_scale: String,
        #[arg(long)]
        output: PathBuf,
        /// Also write the affinity matrix.
        #[arg(long)]
        affinity: Option<PathBuf>,
    },
    /// Kendall-tau persistence matrix of rolling risk-adjusted returns.
    Persistence {
        #[command(flatten)]
        panel: PanelArg,
        #[arg(long, default_value_t = marketdyn::returns::DEFAULT_RA_WINDOW)]
        ra_window: usize,
        #[arg(long)]
        output: PathBuf,
        /// Write `s,t,tau` rows instead of the square matrix.
        #[arg(long)]
        long: bool,
        /// Also write the risk-adjusted series.
        #[arg(long)]
        risk_adjusted: Option<PathBuf>,
    },
    /// Agglomerative clustering of a saved matrix.
    Cluster {
        #[arg(long)]
        matrix: PathBuf,
        /// `average`, `single` or `complete`.
        #[arg(long, default_value = "average")]
        linkage: Linkage,
        /// The matrix is a persistence matrix; cluster `1 - tau`.
        #[arg(long)]
        persistence: bool,
        #[arg(long, conflicts_with = "cut_height")]
        cut_k: Option<usize>,
        #[arg(long)]
        cut_height: Option<f64>,
        /// Receives dendrogram.json, dendrogram.nwk and assignments.csv.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Check a run's manifest hashes and print its report.
    Report {
        /// Output directory of a `run`.
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Args)]
struct AlignArg {
    /// `forward_fill` or `intersect`.
    #[arg(long, default_value = "forward_fill")]
    alignment: AlignmentPolicy,
}

#[derive(Args)]
struct PanelArg {
    /// Canonical price CSV `date,<asset_1>,...`.
    #[arg(long)]
    panel: PathBuf,
    #[command(flatten)]
    align: AlignArg,
}

impl PanelArg {
    fn load(&self) -> Result<marketdyn::PricePanel, CliError> {
        Ok(load_panel(&self.panel, self.align.alignment)?)
    }
}

#[derive(Args)]
struct ChangepointArgs {
    /// False-alarm probability per observation.
    #[arg(long, conflicts_with = "arl0")]
    alpha: Option<f64>,
    /// Average run length under no change (1 / alpha).
    #[arg(long)]
    arl0: Option<f64>,
    #[arg(long, default_value_t = marketdyn::changepoint::DEFAULT_MIN_SEGMENT)]
    min_segment: usize,
    #[arg(long, default_value_t = marketdyn::changepoint::DEFAULT_REPLICATIONS)]
    replications: usize,
    /// Longest calibrated segment.
    #[arg(long, default_value_t = config::DEFAULT_HORIZON)]
    horizon: usize,
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn parse_range(s: &str) -> Option<std::ops::RangeInclusive<usize>> {
    let (a, b) = s.split_once(':')?;
    let (a, b) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
    (a <= b).then_some(a..=b)
}

fn read_surface(path: &Path) -> Result<EigenspectrumSurface, CliError> {
    let f = File::open(path).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;
    Ok(EigenspectrumSurface::read_csv(f)?)
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config } => {
            let cfg = RunConfig::load(&config)?;
            let report = run_pipeline(&cfg)?;
            for row in &report.dd {
                match row.dd {
                    Some(v) => println!("dd {} {v}", row.segment),
                    None => println!("dd {} undefined", row.segment),
                }
            }
            println!("wrote {}", cfg.output.join(REPORT_FILE).display());
        }
        Command::Ingest { input, align, output } => {
            let panel = load_panel(&input, align.alignment)?;
            write_panel(&panel, sink(output.as_deref())?)?;
        }
        Command::Synth { label, assets, days, beta, sigma, seed, start, calendar, output } => {
            config::check_label("synth", &label).map_err(CliError::Usage)?;
            let spec = SynthConfig { assets, days, start, calendar, regimes: vec![Regime { start: 0, beta, sigma }] };
            let panel = pipeline::synth_collection(&label, &spec, seed)?;
            write_panel(&panel, sink(output.as_deref())?)?;
        }
        Command::Spectra { panel, window, output, kde, segment, kde_grid } => {
            let r = log_returns(&panel.load()?);
            match kde {
                None => explained_variance_surface(&r, window)?.write_csv(create(&output)?, None)?,
                Some(kde) => {
                    let mats = rolling_correlation(&r, window)?;
                    surface_from_correlations(&mats)?.write_csv(create(&output)?, None)?;
                    let range = match segment.as_deref() {
                        Some(s) => parse_range(s).ok_or_else(|| CliError::Usage(format!("bad segment `{s}`; expected START:END")))?,
                        None => r.indices(),
                    };
                    correlation_element_density(&mats, &range, kde_grid)?.write_csv(create(&kde)?)?;
                }
            }
        }
        Command::Dd { a, b, segment, partition, k, report } => {
            let (sa, sb) = (read_surface(&a)?, read_surface(&b)?);
            let returns = match (parse_range(&segment), &partition) {
                (Some(r), _) => r,
                (None, Some(p)) => pipeline::read_partition(p)?
                    .into_iter()
                    .find(|s| s.label == segment)
                    .ok_or_else(|| CliError::Usage(format!("segment `{segment}` not in {}", p.display())))?
                    .return_range()
                    .ok_or_else(|| CliError::Usage(format!("segment `{segment}` has no returns")))?,
                (None, None) => {
                    return Err(CliError::Usage(format!(
                        "segment `{segment}` is not START:END; pass --partition to resolve labels"
                    )))
                }
            };
            let range = pipeline::dd_range(&sa, &sb, &returns)
                .ok_or_else(|| CliError::Usage(format!("segment `{segment}` holds no common windows")))?;
            let k = pipeline::dd_components(&sa, &sb, k);
            let value = dynamics_deviation(&sa, &sb, &range, k)?;
            println!("{value}");
            if let Some(path) = report {
                let doc = serde_json::json!({
                    "a": a, "b": b, "segment": segment,
                    "windows": [range.start(), range.end()], "k": k, "dd": value,
                });
                let mut w = create(&path)?;
                serde_json::to_writer_pretty(&mut w, &doc).map_err(marketdyn::Error::from)?;
                writeln!(w)?;
            }
        }
        Command::Trajectory { panel, output } => {
            trajectory_matrix(&panel.load()?).save(&prepare(&output)?)?;
        }
        Command::Breaks { panel, changepoint, seed, output, matrix } => {
            let cp = ChangepointConfig {
                alpha: changepoint.alpha,
                arl0: changepoint.arl0,
                min_segment: changepoint.min_segment,
                replications: changepoint.replications,
                horizon: changepoint.horizon,
            };
            let r = log_returns(&panel.load()?);
            let cache = ThresholdCache::new(config::env_cache_dir());
            let (_, sets) = pipeline::break_sets(&r, &cp, seed, &cache)?;
            write_break_sets(&sets, r.dates(), create(&output)?)?;
            if let Some(m) = matrix {
                breaks_matrix(&sets)?.save(&prepare(&m)?)?;
            }
        }
        Command::Extremes { panel, tail_fraction, tail_scale, output, affinity } => {
            let p = panel.load()?;
            let r = log_returns(&p);
            let tails = pipeline::tail_measures(&r, p.asset_ids(), tail_fraction)?;
            let d = extremes_matrix(&tails, pipeline::parse_tail_scale(&tail_scale)?)?;
            d.save(&prepare(&output)?)?;
            if let Some(a) = affinity {
                to_affinity(&d)?.save(&prepare(&a)?)?;
            }
        }
        Command::Persistence { panel, ra_window, output, long, risk_adjusted } => {
            let ra = rolling_risk_adjusted(&log_returns(&panel.load()?), ra_window)?;
            if let Some(path) = risk_adjusted {
                ra.write_csv(create(&path)?)?;
            }
            let k = persistence_matrix(&ra)?;
            if long {
                k.write_long_csv(create(&output)?)?;
            } else {
                k.write_csv(create(&output)?)?;
            }
        }
        Command::Cluster { matrix, linkage, persistence, cut_k, cut_height, out_dir } => {
            let d = if persistence {
                let f = File::open(&matrix).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", matrix.display())))?;
                PersistenceMatrix::read_csv(f)?.dissimilarity()
            } else {
                if !matrix.is_file() {
                    return Err(CliError::Usage(format!("cannot open {}", matrix.display())));
                }
                DistanceMatrix::load(&matrix, DistanceKind::Trajectory)?
            };
            let den = agglomerate_matrix(&d, linkage)?;
            std::fs::create_dir_all(&out_dir)?;
            let cut = match (cut_k, cut_height) {
                (None, None) => None,
                (k, height) => Some(CutConfig { k, height }),
            };
            let clusters = pipeline::write_clustering(
                &den,
                cut,
                &out_dir.join("dendrogram.json"),
                &out_dir.join("dendrogram.nwk"),
                &out_dir.join("assignments.csv"),
            )?;
            if let Some(c) = clusters {
                println!("{c} clusters");
            }
        }
        Command::Report { dir } => {
            let manifest = Manifest::read(&dir)?;
            let problems = manifest.verify(&dir);
            let report = std::fs::read_to_string(dir.join(REPORT_FILE))
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", dir.join(REPORT_FILE).display())))?;
            print!("{report}");
            if !problems.is_empty() {
                for p in &problems {
                    eprintln!("{p}");
                }
                return Err(CliError::Usage(format!("{} artifacts fail verification", problems.len())));
            }
            eprintln!("{} artifacts verified", manifest.artifacts.len());
        }
    }
    Ok(())
}

/// Create the parent directory of `path`.
fn prepare(path: &Path) -> Result<PathBuf, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(path.to_path_buf())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
