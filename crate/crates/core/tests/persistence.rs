use chrono::NaiveDate;
use marketdyn::ingest::{calendar_dates, Calendar};
use marketdyn::persistence::{kendall_tau, persistence_matrix, persistence_norm};
use marketdyn::{rng, RiskAdjustedSeries};
use marketdyn_testkit as oracle;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn series(rows: Vec<Vec<f64>>) -> RiskAdjustedSeries {
    let m = rows[0].len();
    let dates = calendar_dates(NaiveDate::from_ymd_opt(2021, 6, 1).unwrap(), rows.len(), Calendar::Daily);
    let ids = (0..m).map(|i| format!("a{i}")).collect();
    let indices = (61..61 + rows.len()).collect();
    RiskAdjustedSeries::new(ids, dates, indices, rows).unwrap()
}

fn random_vec(g: &mut ChaCha8Rng, n: usize, ties: bool) -> Vec<f64> {
    (0..n)
        .map(|_| if ties { f64::from(g.random_range(0..4)) } else { StandardNormal.sample(g) })
        .collect()
}

#[test]
fn tau_matches_pair_counting() {
    let mut g = rng::substream(1, "test/tau", 0);
    let mut checked = 0;
    while checked < 1000 {
        let n = g.random_range(2..40);
        let ties = checked % 2 == 1;
        let x = random_vec(&mut g, n, ties);
        let y = random_vec(&mut g, n, ties);
        let Ok(ours) = kendall_tau(&x, &y) else {
            assert!(x.iter().all(|&v| v == x[0]) || y.iter().all(|&v| v == y[0]));
            continue;
        };
        let theirs = oracle::kendall_tau_b(&x, &y);
        assert!((ours - theirs).abs() < 1e-12, "{x:?} {y:?}: {ours} vs {theirs}");
        checked += 1;
    }
}

#[test]
fn matrix_is_symmetric_unit_diagonal_and_rank_invariant() {
    let mut g = rng::substream(2, "test/pm", 0);
    let rows: Vec<Vec<f64>> = (0..25).map(|_| random_vec(&mut g, 12, false)).collect();
    let k = persistence_matrix(&series(rows.clone())).unwrap();
    let w = k.len();
    for s in 0..w {
        assert_eq!(k.get(s, s), 1.0);
        for t in 0..w {
            assert_eq!(k.get(s, t), k.get(t, s));
            assert!((-1.0..=1.0).contains(&k.get(s, t)));
        }
    }
    let transformed: Vec<Vec<f64>> = rows
        .iter()
        .enumerate()
        .map(|(t, r)| r.iter().map(|v| v * v * v * (1.0 + t as f64) - t as f64).collect())
        .collect();
    let k2 = persistence_matrix(&series(transformed)).unwrap();
    assert_eq!(k.values(), k2.values());
    assert_eq!(k.time_indices()[0], 61);
}

#[test]
fn shuffled_cross_sections_are_uncorrelated() {
    let mut g = rng::substream(3, "test/null", 0);
    let m = 200;
    let base: Vec<f64> = (0..m).map(f64::from).collect();
    let rows: Vec<Vec<f64>> = (0..30)
        .map(|_| {
            let mut r = base.clone();
            r.shuffle(&mut g);
            r
        })
        .collect();
    let k = persistence_matrix(&series(rows)).unwrap();
    let w = k.len();
    let off: Vec<f64> = (0..w).flat_map(|s| (0..w).filter(move |&t| t != s).map(move |t| (s, t))).map(|(s, t)| k.get(s, t)).collect();
    let mean = off.iter().sum::<f64>() / off.len() as f64;
    assert!(mean.abs() < 2.0 / (m as f64).sqrt(), "{mean}");
}

#[test]
fn identical_orderings_and_norms() {
    let rows = vec![vec![1.0, 2.0, 3.0], vec![10.0, 20.0, 30.0]];
    let k = persistence_matrix(&series(rows)).unwrap();
    assert_eq!(k.get(0, 1), 1.0);
    assert_eq!(persistence_norm(&k), 2.0);
    let tied = vec![vec![1.0, 2.0, 3.0], vec![5.0, 5.0, 5.0]];
    let err = persistence_matrix(&series(tied)).unwrap_err().to_string();
    assert!(err.contains("2021-06-02"), "{err}");
}

#[test]
fn long_format_lists_upper_triangle() {
    let rows = vec![vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0], vec![1.0, 3.0, 2.0]];
    let k = persistence_matrix(&series(rows)).unwrap();
    let mut buf = Vec::new();
    k.write_long_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 1 + 6);
    assert!(text.starts_with("s,t,tau\n61,61,1\n61,62,-1\n"));
    let d = k.dissimilarity();
    assert_eq!(d.get(0, 1), 2.0);
    assert_eq!(d.get(1, 1), 0.0);
}
