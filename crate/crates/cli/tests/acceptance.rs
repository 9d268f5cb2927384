//! Acceptance suite. Each criterion prints one PASS or FAIL line; the binary
//! exits nonzero when any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use chrono::NaiveDate;
use marketdyn::changepoint::{detect_batch, run_length};
use marketdyn::cluster::agglomerate;
use marketdyn::distances::{
    extremes_matrix, mj_distance, returns_matrix, tail_measure, to_affinity, wasserstein_tails, TailScale,
};
use marketdyn::ingest::{calendar_dates, synth_one_factor, synth_panel, write_panel, Calendar, Regime, SynthSpec};
use marketdyn::matrix::{asymmetry, read_matrix_csv};
use marketdyn::persistence::kendall_tau;
use marketdyn::returns::log_returns;
use marketdyn::spectra::{dynamics_deviation, eigenvalues, explained_variance_surface, full_correlation, rolling_correlation};
use marketdyn::{
    rng, CalibrationKind, CalibrationSpec, Dendrogram, DistanceKind, DistanceMatrix, EigenspectrumSurface, Linkage,
    PricePanel, ThresholdCache,
};
use marketdyn_cli::{run_pipeline, Manifest, Report, RunConfig, ARTIFACT_CLASSES};
use marketdyn_testkit as oracle;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn gaussian(g: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(g)).collect()
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Factor panel with random loadings and volatilities.
fn random_panel(g: &mut ChaCha8Rng, assets: usize, days: usize) -> PricePanel {
    let loadings: Vec<f64> = (0..assets).map(|_| g.random_range(-1.0..1.0)).collect();
    let vols: Vec<f64> = (0..assets).map(|_| g.random_range(0.002..0.05)).collect();
    let mut cols = vec![vec![100.0]; assets];
    for _ in 1..days {
        let f: f64 = StandardNormal.sample(g);
        for (i, c) in cols.iter_mut().enumerate() {
            let e: f64 = StandardNormal.sample(g);
            let last = *c.last().unwrap();
            c.push(last * (vols[i] * (loadings[i] * f + e)).exp());
        }
    }
    let ids = (0..assets).map(|i| format!("r{i}")).collect();
    let dates = calendar_dates(NaiveDate::from_ymd_opt(2019, 1, 1).unwrap(), days, Calendar::Daily);
    PricePanel::new("random", ids, dates, cols).unwrap()
}

fn spectral_invariants() -> Outcome {
    let start = Instant::now();
    let mut g = rng::substream(101, "acceptance/spectral", 0);
    let mut panels = Vec::new();
    for _ in 0..100 {
        let m = g.random_range(2..=12);
        let window = g.random_range(10..=60);
        let days = window + g.random_range(2..=80);
        panels.push((random_panel(&mut g, m, days), window));
    }
    for s in 0..10u64 {
        panels.push((synth_one_factor(20, 300, 0.1 * s as f64, 1.0, 500 + s).unwrap(), 60));
    }
    let (mut count, mut worst_asym, mut min_eig, mut worst_trace) = (0usize, 0.0_f64, f64::INFINITY, 0.0_f64);
    for (p, window) in &panels {
        let m = p.n_assets();
        for c in rolling_correlation(&log_returns(p), *window).map_err(|e| e.to_string())? {
            let v = c.values();
            let flat: Vec<f64> = (0..m * m).map(|k| v[(k / m, k % m)]).collect();
            worst_asym = worst_asym.max(asymmetry(m, &flat));
            check((0..m).all(|i| v[(i, i)] == 1.0), || format!("non-unit diagonal at window {}", c.window_end()))?;
            let ev = eigenvalues(&c).map_err(|e| e.to_string())?;
            min_eig = min_eig.min(ev.iter().copied().fold(f64::INFINITY, f64::min));
            worst_trace = worst_trace.max((ev.iter().sum::<f64>() - m as f64).abs());
            count += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "{} panels, {count} matrices, max asymmetry {worst_asym:.1e}, min eigenvalue {min_eig:.2e}, max trace error {worst_trace:.1e}, {secs:.1} s",
        panels.len()
    );
    check(worst_asym <= 1e-12 && min_eig >= -1e-10 && worst_trace <= 1e-8 && secs < 30.0, || detail.clone())?;
    Ok(detail)
}

fn dd_oracle() -> Outcome {
    let mut g = rng::substream(102, "acceptance/dd", 0);
    let mut worst = 0.0_f64;
    for pair in 0..50 {
        let days = g.random_range(80..=200);
        let window = g.random_range(20..=50);
        let (ma, mb) = (g.random_range(3..=10), g.random_range(3..=10));
        let ra = log_returns(&random_panel(&mut g, ma, days));
        let rb = log_returns(&random_panel(&mut g, mb, days));
        let sa = explained_variance_surface(&ra, window).map_err(|e| e.to_string())?;
        let sb = explained_variance_surface(&rb, window).map_err(|e| e.to_string())?;
        let dom = sa.domain();
        let lo = g.random_range(*dom.start()..=*dom.end());
        let hi = g.random_range(lo..=*dom.end());
        let k = g.random_range(1..=ma.min(mb));
        let ours = dynamics_deviation(&sa, &sb, &(lo..=hi), k).map_err(|e| e.to_string())?;
        let cols = |r: &marketdyn::ReturnsPanel| r.columns().map(<[f64]>::to_vec).collect::<Vec<_>>();
        let (oa, ob) = (oracle::rolling_ratios(&cols(&ra), window), oracle::rolling_ratios(&cols(&rb), window));
        let rows = (lo - window)..=(hi - window);
        let theirs = oracle::dynamics_deviation(&oa[rows.clone()], &ob[rows], k);
        worst = worst.max((ours - theirs).abs());
        check((ours - theirs).abs() <= 1e-12, || format!("pair {pair}: {ours} vs brute force {theirs}"))?;
        let aa = dynamics_deviation(&sa, &sa, &(lo..=hi), k).map_err(|e| e.to_string())?;
        let ba = dynamics_deviation(&sb, &sa, &(lo..=hi), k).map_err(|e| e.to_string())?;
        check(aa == 0.0, || format!("pair {pair}: DD(a,a) = {aa}"))?;
        check(ba == ours, || format!("pair {pair}: DD(b,a) = {ba} but DD(a,b) = {ours}"))?;
        check(ours >= 0.0, || format!("pair {pair}: negative DD {ours}"))?;
    }
    Ok(format!("50 surface pairs, max |DD - brute force| {worst:.1e}, DD(a,a) = 0, symmetric, nonnegative"))
}

fn one_factor_recovery() -> Outcome {
    let first_ratio = |beta: f64| -> Result<f64, String> {
        let p = synth_one_factor(20, 2000, beta, 1.0, 2024).map_err(|e| e.to_string())?;
        let c = full_correlation(&log_returns(&p)).map_err(|e| e.to_string())?;
        Ok(eigenvalues(&c).map_err(|e| e.to_string())?[0] / 20.0)
    };
    let analytic = (1.0 + 19.0 * 0.64) / 20.0;
    let strong = first_ratio(0.8)?;
    let none = first_ratio(0.0)?;
    let detail = format!("beta 0.8: {strong:.4} vs {analytic:.4}; beta 0: {none:.4} vs {:.4}", 1.0 / 20.0);
    check((strong - analytic).abs() <= 0.03 && (none - 0.05).abs() <= 0.05, || detail.clone())?;
    Ok(detail)
}

fn changepoint_power_and_size(cache_dir: &Path) -> Outcome {
    let start = Instant::now();
    let cache = ThresholdCache::new(cache_dir);
    let spec = |kind, n| CalibrationSpec { kind, n, alpha: 0.05, replications: 10_000, seed: 4242, min_segment: 30 };
    let p1 = cache.get_or_calibrate(&spec(CalibrationKind::Phase1, 500)).map_err(|e| e.to_string())?;
    let p2 = cache.get_or_calibrate(&spec(CalibrationKind::Phase2, 310)).map_err(|e| e.to_string())?;
    let calibration = start.elapsed().as_secs_f64();

    let mut located = 0;
    for run in 0..100 {
        let mut g = rng::substream(103, "acceptance/power", run);
        let mut x = gaussian(&mut g, 500);
        for v in &mut x[250..] {
            *v += 2.0;
        }
        let k = detect_batch(&x, &p1, 30).map_err(|e| e.to_string())?;
        located += usize::from(k.is_some_and(|k| k.abs_diff(250) <= 10));
    }
    let mut false_alarms = 0;
    for run in 0..200 {
        let mut g = rng::substream(103, "acceptance/size", run);
        false_alarms += usize::from(detect_batch(&gaussian(&mut g, 500), &p1, 30).map_err(|e| e.to_string())?.is_some());
    }
    let mut total = 0;
    for run in 0..1000 {
        let mut g = rng::substream(103, "acceptance/arl", run);
        let x = gaussian(&mut g, 3000);
        total += run_length(&x, &p2, 30).map_err(|e| e.to_string())?.ok_or("no alarm within 3000 observations")?;
    }
    let arl = total as f64 / 1000.0;
    let secs = start.elapsed().as_secs_f64();
    let cached = cache.get_or_calibrate(&spec(CalibrationKind::Phase1, 500)).map_err(|e| e.to_string())?;
    let detail = format!(
        "located {located}/100, false alarms {false_alarms}/200, mean run length {arl:.2} (target 20 +- 3), calibration {calibration:.1} s, total {secs:.1} s"
    );
    check(
        located >= 95 && false_alarms <= 20 && (arl - 20.0).abs() <= 3.0 && secs < 300.0 && cached == p1,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn random_set(g: &mut ChaCha8Rng) -> Vec<usize> {
    let n = g.random_range(1..=20);
    let mut v: Vec<usize> = (0..n).map(|_| g.random_range(1..500)).collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn metric_oracles() -> Outcome {
    let mut g = rng::substream(105, "acceptance/metrics", 0);
    let (mut mj, mut tau, mut w1) = (0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..1000 {
        let (a, b) = (random_set(&mut g), random_set(&mut g));
        let ours = mj_distance(&a, &b).ok_or("undefined distance on nonempty sets")?;
        mj = mj.max((ours - oracle::mj_semimetric(&a, &b)).abs());
    }
    let mut checked = 0;
    while checked < 1000 {
        let n = g.random_range(2..40);
        let ties = checked % 2 == 1;
        let draw = |g: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n).map(|_| if ties { f64::from(g.random_range(0..4)) } else { StandardNormal.sample(g) }).collect()
        };
        let (x, y) = (draw(&mut g), draw(&mut g));
        let Ok(ours) = kendall_tau(&x, &y) else { continue };
        tau = tau.max((ours - oracle::kendall_tau_b(&x, &y)).abs());
        checked += 1;
    }
    for trial in 0..1000 {
        let na = g.random_range(10..80);
        let nb = if trial % 3 == 0 { na } else { g.random_range(10..80) };
        let a = gaussian(&mut g, na);
        let b: Vec<f64> = gaussian(&mut g, nb).iter().map(|v| 1.5 * v + 0.3).collect();
        let ta = tail_measure("a", &a, 0.1).map_err(|e| e.to_string())?;
        let tb = tail_measure("b", &b, 0.1).map_err(|e| e.to_string())?;
        let ours = wasserstein_tails(&ta, &tb, TailScale::Renormalized).map_err(|e| e.to_string())?;
        let count = |n: usize| n.div_ceil(10);
        let theirs = oracle::wasserstein_cdf(&oracle::tails(&a, count(na)), &oracle::tails(&b, count(nb)));
        w1 = w1.max((ours - theirs).abs());
    }
    let detail = format!("1000 instances each; max error: MJ {mj:.1e}, Kendall tau-b {tau:.1e}, Wasserstein {w1:.1e}");
    check(mj <= 1e-10 && tau <= 1e-10 && w1 <= 1e-10, || detail.clone())?;
    Ok(detail)
}

fn random_matrix(g: &mut ChaCha8Rng, n: usize, family: usize) -> Vec<f64> {
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = match family {
                0 => f64::from(g.random_range(1..6)),
                1 => f64::from(g.random_range(0..10_240)) / 1024.0,
                _ => g.random_range(0.0..10.0),
            };
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

fn clustering_oracle() -> Outcome {
    let pairs = [
        (Linkage::Average, oracle::Linkage::Average),
        (Linkage::Single, oracle::Linkage::Single),
        (Linkage::Complete, oracle::Linkage::Complete),
    ];
    let mut g = rng::substream(106, "acceptance/cluster", 0);
    for trial in 0..200 {
        let n = g.random_range(2..=8);
        // integer entries force ties; the other families do not
        let d = random_matrix(&mut g, n, trial % 3);
        let ids: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        for (ours, theirs) in pairs {
            let den = agglomerate(&ids, &d, ours).map_err(|e| e.to_string())?;
            let got: Vec<_> = den.merges.iter().map(|m| (m.a, m.b, m.height, m.size)).collect();
            let want = oracle::rescan_agglomerate(&d, n, theirs);
            check(got == want, || format!("trial {trial}, {ours:?}: {got:?} vs {want:?}"))?;
            if ours == Linkage::Single {
                let mst = oracle::mst_weights(&d, n);
                check(den.heights() == mst, || format!("trial {trial}: single-linkage heights differ from MST"))?;
            }
        }
    }
    Ok("200 random matrices (n <= 8) x 3 linkages identical to the rescan agglomerator; single linkage = MST".into())
}

fn affinity_contracts() -> Outcome {
    let mut g = rng::substream(107, "acceptance/affinity", 0);
    let mut worst_scale = 0.0_f64;
    let mut worst_raw = 0.0_f64;
    for trial in 0..100 {
        let n = g.random_range(2..=15);
        let ids: Vec<String> = (0..n).map(|i| format!("a{i}")).collect();
        let d = if trial % 2 == 0 {
            returns_matrix(&ids, &gaussian(&mut g, n)).map_err(|e| e.to_string())?
        } else {
            DistanceMatrix::new(ids.clone(), random_matrix(&mut g, n, 2), DistanceKind::Trajectory).map_err(|e| e.to_string())?
        };
        let a = to_affinity(&d).map_err(|e| e.to_string())?;
        check(a.values().iter().all(|v| (0.0..=1.0).contains(v)), || format!("trial {trial}: entry outside [0, 1]"))?;
        check((0..n).all(|i| a.get(i, i) == 1.0), || format!("trial {trial}: diagonal not 1"))?;
        let a3 = to_affinity(&d.scaled(3.0).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        for (x, y) in a.values().iter().zip(a3.values()) {
            worst_scale = worst_scale.max((x - y).abs());
        }

        let tails: Vec<_> = (0..n)
            .map(|i| {
                let s = g.random_range(0.5..3.0);
                let len = g.random_range(10..200);
                let x: Vec<f64> = gaussian(&mut g, len).iter().map(|v| s * v).collect();
                tail_measure(format!("t{i}"), &x, 0.1)
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let renorm = extremes_matrix(&tails, TailScale::Renormalized).map_err(|e| e.to_string())?;
        let raw = extremes_matrix(&tails, TailScale::Raw).map_err(|e| e.to_string())?;
        check(raw.values().iter().zip(renorm.values()).all(|(r, v)| *r == 0.2 * v), || {
            format!("trial {trial}: raw distances are not 0.2 x renormalized")
        })?;
        let pair = wasserstein_tails(&tails[0], &tails[1], TailScale::Raw).map_err(|e| e.to_string())?;
        check(pair == 0.2 * renorm.get(0, 1), || format!("trial {trial}: pairwise raw distance off"))?;
        let (ar, an) = (to_affinity(&raw).map_err(|e| e.to_string())?, to_affinity(&renorm).map_err(|e| e.to_string())?);
        for (x, y) in ar.values().iter().zip(an.values()) {
            worst_raw = worst_raw.max((x - y).abs());
        }
    }
    let detail = format!(
        "100 matrices: affinities in [0, 1], unit diagonal, max |A(d) - A(3d)| {worst_scale:.1e}; raw = 0.2 x renormalized exactly, max affinity change {worst_raw:.1e}"
    );
    check(worst_scale <= 1e-12 && worst_raw <= 1e-12, || detail.clone())?;
    Ok(detail)
}

const SYNTH_CONFIG: &str = r#"
seed = 20240601
output = "out"
cache_dir = "cache"
window = 40
ra_window = 31

[changepoint]
alpha = 0.01
replications = 2000
horizon = 150

[cut]
k = 3

[[collections]]
label = "fast"
[collections.synth]
assets = 9
days = 420
regimes = [{ start = 0, beta = 0.7, sigma = 0.01 }, { start = 210, beta = 0.3, sigma = 0.03 }]

[[collections]]
label = "slow"
[collections.synth]
assets = 7
days = 420
calendar = "weekdays"
regimes = [{ start = 0, beta = 0.2, sigma = 0.02 }, { start = 180, beta = 0.6, sigma = 0.006 }]

[[periods]]
label = "EARLY"
start = "2018-01-01"
end = "2018-06-30"

[[periods]]
label = "LATE"
start = "2018-07-01"
end = "2019-12-31"
"#;

fn run_in_pool(threads: usize, cfg: &RunConfig) -> Result<Report, String> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
    pool.install(|| run_pipeline(cfg)).map_err(|e| e.to_string())
}

fn end_to_end_determinism(tmp: &Path) -> Outcome {
    let mut manifests = Vec::new();
    for (run, threads) in [(0, 1), (1, 1), (2, 3)] {
        // a fresh cache per run so calibration is repeated too
        let dir = tmp.join(format!("determinism/{run}"));
        let cfg = RunConfig::from_toml(SYNTH_CONFIG, &dir).map_err(|e| e.to_string())?;
        run_in_pool(threads, &cfg)?;
        let manifest = Manifest::read(&cfg.output).map_err(|e| e.to_string())?;
        let problems = manifest.verify(&cfg.output);
        check(problems.is_empty(), || format!("run {run}: {problems:?}"))?;
        let classes = manifest.classes();
        check(classes == ARTIFACT_CLASSES.into_iter().collect(), || format!("run {run}: classes {classes:?}"))?;
        let bytes = std::fs::read(cfg.output.join("manifest.json")).map_err(|e| e.to_string())?;
        manifests.push((threads, bytes, manifest.artifacts.len()));
    }
    let identical = manifests.windows(2).all(|w| w[0].1 == w[1].1);
    check(identical, || "manifest hashes differ between runs".into())?;
    Ok(format!(
        "3 runs (1, 1 and 3 worker threads) with identical manifests over {} artifacts in all {} classes",
        manifests[0].2,
        ARTIFACT_CLASSES.len()
    ))
}

fn read_named_matrix(path: &Path) -> Result<BTreeMap<(String, String), f64>, String> {
    let f = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let (ids, values) = read_matrix_csv(f).map_err(|e| e.to_string())?;
    let n = ids.len();
    let mut out = BTreeMap::new();
    for i in 0..n {
        for j in 0..n {
            out.insert((ids[i].clone(), ids[j].clone()), values[i * n + j]);
        }
    }
    Ok(out)
}

fn matrix_ids(path: &Path) -> Result<Vec<String>, String> {
    let f = std::fs::File::open(path).map_err(|e| e.to_string())?;
    Ok(read_matrix_csv(f).map_err(|e| e.to_string())?.0)
}

fn permutation_equivariance(tmp: &Path) -> Outcome {
    let root = tmp.join("permutation");
    std::fs::create_dir_all(&root).map_err(|e| e.to_string())?;
    let mut g = rng::substream(109, "acceptance/permutation", 0);
    let specs = [("left", 8, 0.6, 0.01), ("right", 6, 0.3, 0.02)];
    let mut orders = Vec::new();
    for (label, assets, beta, sigma) in specs {
        let p = synth_panel(&SynthSpec {
            label: label.into(),
            assets,
            days: 380,
            regimes: vec![Regime { start: 0, beta, sigma }, Regime { start: 190, beta: beta / 2.0, sigma: 2.5 * sigma }],
            seed: 9 + assets as u64,
            start: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            calendar: Calendar::Daily,
        })
        .map_err(|e| e.to_string())?;
        let mut order: Vec<usize> = (0..assets).collect();
        order.shuffle(&mut g);
        let write = |panel: &PricePanel, name: &str| -> Result<(), String> {
            let f = std::fs::File::create(root.join(name)).map_err(|e| e.to_string())?;
            write_panel(panel, f).map_err(|e| e.to_string())
        };
        write(&p, &format!("{label}.csv"))?;
        let permuted = p.permute_assets(&order);
        write(&permuted, &format!("{label}_perm.csv"))?;
        let expected: Vec<String> = order.iter().map(|&i| p.asset_ids()[i].clone()).collect();
        check(permuted.asset_ids() == expected.as_slice(), || "permute_assets order".into())?;
        orders.push(expected);
    }
    let config = |suffix: &str, out: &str| {
        format!(
            "seed = 5\noutput = \"{out}\"\ncache_dir = \"cache\"\nwindow = 40\nra_window = 31\n\
             [changepoint]\nalpha = 0.01\nreplications = 2000\nhorizon = 150\n\
             [[collections]]\nlabel = \"left\"\npath = \"left{suffix}.csv\"\n\
             [[collections]]\nlabel = \"right\"\npath = \"right{suffix}.csv\"\n"
        )
    };
    let base = RunConfig::from_toml(&config("", "base"), &root).map_err(|e| e.to_string())?;
    let perm = RunConfig::from_toml(&config("_perm", "perm"), &root).map_err(|e| e.to_string())?;
    let rb = run_pipeline(&base).map_err(|e| e.to_string())?;
    let rp = run_pipeline(&perm).map_err(|e| e.to_string())?;

    let tol = 1e-10;
    let mut worst = 0.0_f64;
    let mut compared = 0;
    let matrices = [
        "left/trajectory.csv",
        "left/breaks_matrix.csv",
        "left/extremes.csv",
        "left/returns_matrix.csv",
        "right/trajectory.csv",
        "right/breaks_matrix.csv",
        "right/extremes.csv",
        "right/returns_matrix.csv",
        "combined/returns_matrix.csv",
        "combined/extremes.csv",
        "combined/affinity_returns.csv",
        "combined/affinity_extremes.csv",
    ];
    for rel in matrices {
        let (a, b) = (read_named_matrix(&base.output.join(rel))?, read_named_matrix(&perm.output.join(rel))?);
        check(a.len() == b.len(), || format!("{rel}: sizes differ"))?;
        for (key, v) in &a {
            let w = b.get(key).ok_or_else(|| format!("{rel}: missing entry {key:?}"))?;
            worst = worst.max((v - w).abs());
        }
        // the permuted run lists ids in the permuted order
        let ids = matrix_ids(&perm.output.join(rel))?;
        let expected: Vec<String> = if rel.starts_with("combined") {
            ["left", "right"]
                .iter()
                .zip(&orders)
                .flat_map(|(l, o)| o.iter().map(move |id| format!("{l}/{id}")))
                .collect()
        } else {
            orders[usize::from(rel.starts_with("right"))].clone()
        };
        check(ids == expected, || format!("{rel}: ids not permuted consistently"))?;
        compared += 1;
    }
    for label in ["left", "right"] {
        let read = |cfg: &RunConfig| -> Result<EigenspectrumSurface, String> {
            let f = std::fs::File::open(cfg.output.join(format!("{label}/surface.csv"))).map_err(|e| e.to_string())?;
            EigenspectrumSurface::read_csv(f).map_err(|e| e.to_string())
        };
        let (sa, sb) = (read(&base)?, read(&perm)?);
        check(sa.n_windows() == sb.n_windows(), || "surface lengths differ".into())?;
        for w in 0..sa.n_windows() {
            for (x, y) in sa.row(w).iter().zip(sb.row(w)) {
                worst = worst.max((x - y).abs());
            }
        }
        let (ka, kb) = (
            read_named_matrix(&base.output.join(format!("{label}/persistence.csv")))?,
            read_named_matrix(&perm.output.join(format!("{label}/persistence.csv")))?,
        );
        for (key, v) in &ka {
            worst = worst.max((v - kb[key]).abs());
        }
    }
    for (x, y) in rb.dd.iter().zip(&rp.dd) {
        worst = worst.max((x.dd.unwrap_or(0.0) - y.dd.unwrap_or(0.0)).abs());
    }
    for (x, y) in rb.collections.iter().zip(&rp.collections) {
        for (name, v) in &x.norms {
            worst = worst.max((v - y.norms[name]).abs());
        }
    }
    for (name, v) in &rb.combined_norms {
        worst = worst.max((v - rp.combined_norms[name]).abs());
    }
    let mut dendrograms = 0;
    for row in &rb.clusterings {
        let (dir, stem) = row.name.split_once('/').unwrap();
        let heights = |cfg: &RunConfig| -> Result<Vec<f64>, String> {
            let f = std::fs::File::open(cfg.output.join(format!("{dir}/dendrogram_{stem}.json"))).map_err(|e| e.to_string())?;
            let mut h = Dendrogram::read_json(f).map_err(|e| e.to_string())?.heights();
            h.sort_by(f64::total_cmp);
            Ok(h)
        };
        for (x, y) in heights(&base)?.iter().zip(&heights(&perm)?) {
            worst = worst.max((x - y).abs());
        }
        dendrograms += 1;
    }
    let detail = format!(
        "{compared} matrices permuted consistently; surfaces, persistence, DD, norms and {dendrograms} dendrogram height multisets unchanged; max deviation {worst:.1e}"
    );
    check(worst <= tol, || detail.clone())?;
    Ok(detail)
}

fn main() -> ExitCode {
    let tmp = tempfile::Builder::new().prefix("acceptance").tempdir_in(env!("CARGO_TARGET_TMPDIR")).expect("temp dir");
    let cp_cache: PathBuf = tmp.path().join("thresholds");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("spectral invariants", Box::new(spectral_invariants)),
        ("dynamics deviation oracle", Box::new(dd_oracle)),
        ("one-factor recovery", Box::new(one_factor_recovery)),
        ("change point power and size", Box::new(move || changepoint_power_and_size(&cp_cache))),
        ("metric oracles", Box::new(metric_oracles)),
        ("clustering oracle", Box::new(clustering_oracle)),
        ("affinity contracts", Box::new(affinity_contracts)),
        ("end-to-end determinism", Box::new({
            let p = tmp.path().to_path_buf();
            move || end_to_end_determinism(&p)
        })),
        ("permutation equivariance", Box::new({
            let p = tmp.path().to_path_buf();
            move || permutation_equivariance(&p)
        })),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
