//! Brute-force reference implementations used as test oracles.
//!
//! Everything here is written for obviousness, not speed, and shares no
//! code with the library under test. Matrices are row-major `Vec<f64>`.

/// Pearson correlation with two-pass moments.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Correlation matrix of column vectors.
pub fn correlation_matrix(cols: &[Vec<f64>]) -> Vec<f64> {
    let m = cols.len();
    let mut c = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            c[i * m + j] = if i == j { 1.0 } else { pearson(&cols[i], &cols[j]) };
        }
    }
    c
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn jacobi_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut a = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
    ev
}

/// Explained-variance ratios of every window of `window` rows ending at
/// each row from `window - 1` on; `cols[asset][t]`.
pub fn rolling_ratios(cols: &[Vec<f64>], window: usize) -> Vec<Vec<f64>> {
    let t = cols[0].len();
    let m = cols.len();
    (window - 1..t)
        .map(|end| {
            let win: Vec<Vec<f64>> = cols.iter().map(|c| c[end + 1 - window..=end].to_vec()).collect();
            jacobi_eigenvalues(&correlation_matrix(&win), m)
                .into_iter()
                .map(|l| l / m as f64)
                .collect()
        })
        .collect()
}

/// Mean over windows of the summed absolute difference of the top `k`
/// ratios.
pub fn dynamics_deviation(a: &[Vec<f64>], b: &[Vec<f64>], k: usize) -> f64 {
    let mut total = 0.0;
    for w in 0..a.len() {
        let mut s = 0.0;
        for i in 0..k {
            s += (a[w][i] - b[w][i]).abs();
        }
        total += s;
    }
    total / a.len() as f64
}

/// Two-sample KS statistic by evaluating both ECDFs at every pooled point.
pub fn ks_statistic(x: &[f64], y: &[f64]) -> f64 {
    let ecdf = |s: &[f64], v: f64| s.iter().filter(|&&u| u <= v).count() as f64 / s.len() as f64;
    x.iter()
        .chain(y)
        .map(|&v| (ecdf(x, v) - ecdf(y, v)).abs())
        .fold(0.0, f64::max)
}

/// `max_k KS(x[..k], x[k..])` over `m <= k <= n - m`, smallest maximiser.
pub fn ks_scan(x: &[f64], m: usize) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for k in m..=x.len() - m {
        let d = ks_statistic(&x[..k], &x[k..]);
        if d > best.0 {
            best = (d, k);
        }
    }
    best
}

/// Mean minimal distance double loop, symmetrised.
pub fn mj_semimetric(a: &[usize], b: &[usize]) -> f64 {
    let side = |p: &[usize], q: &[usize]| {
        let mut total = 0.0;
        for &x in p {
            let mut best = f64::INFINITY;
            for &y in q {
                best = best.min((x as f64 - y as f64).abs());
            }
            total += best;
        }
        total / p.len() as f64
    };
    0.5 * (side(a, b) + side(b, a))
}

/// Kendall tau-b by counting all pairs.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 && dy == 0.0 {
                continue;
            } else if dx == 0.0 {
                tx += 1;
            } else if dy == 0.0 {
                ty += 1;
            } else if (dx > 0.0) == (dy > 0.0) {
                conc += 1;
            } else {
                disc += 1;
            }
        }
    }
    let a = (conc + disc + tx) as f64;
    let b = (conc + disc + ty) as f64;
    (conc - disc) as f64 / (a * b).sqrt()
}

/// `∫ |F - G|` for empirical CDFs, integrating piecewise between every
/// pooled support point.
pub fn wasserstein_cdf(x: &[f64], y: &[f64]) -> f64 {
    let mut pts: Vec<f64> = x.iter().chain(y).copied().collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ecdf = |s: &[f64], v: f64| s.iter().filter(|&&u| u <= v).count() as f64 / s.len() as f64;
    let mut total = 0.0;
    for w in pts.windows(2) {
        total += (ecdf(x, w[0]) - ecdf(y, w[0])).abs() * (w[1] - w[0]);
    }
    total
}

/// `(lower, upper)` tails of `ceil(fraction * n)` order statistics each.
pub fn tails(sample: &[f64], count: usize) -> Vec<f64> {
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    let mut out = s[..count].to_vec();
    out.extend_from_slice(&s[n - count..]);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linkage {
    Average,
    Single,
    Complete,
}

/// `(a, b, height, size)` merge records with scipy-style node ids.
pub type NaiveMerge = (usize, usize, f64, usize);

/// Agglomeration that recomputes every cluster-to-cluster distance from
/// the members at each step. Clusters are keyed by their smallest leaf;
/// ties go to the smallest key pair.
pub fn naive_agglomerate(d: &[f64], n: usize, linkage: Linkage) -> Vec<NaiveMerge> {
    let mut clusters: Vec<(Vec<usize>, usize)> = (0..n).map(|i| (vec![i], i)).collect();
    let mut merges = Vec::new();
    for step in 0..n.saturating_sub(1) {
        clusters.sort_by_key(|c| c.0[0]);
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let mut vals = Vec::new();
                for &i in &clusters[a].0 {
                    for &j in &clusters[b].0 {
                        vals.push(d[i * n + j]);
                    }
                }
                let v = match linkage {
                    Linkage::Single => vals.iter().copied().fold(f64::INFINITY, f64::min),
                    Linkage::Complete => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    Linkage::Average => {
                        vals.iter().sum::<f64>() / (clusters[a].0.len() * clusters[b].0.len()) as f64
                    }
                };
                if best.is_none_or(|(bv, _, _)| v < bv) {
                    best = Some((v, a, b));
                }
            }
        }
        let (h, a, b) = best.unwrap();
        let cb = clusters.remove(b);
        let ca = &mut clusters[a];
        let (na, nb) = (ca.1, cb.1);
        ca.0.extend(cb.0);
        ca.0.sort_unstable();
        ca.1 = n + step;
        merges.push((na.min(nb), na.max(nb), h, ca.0.len()));
    }
    merges
}

/// Textbook `O(n^3)` agglomeration: rescan the whole Lance–Williams matrix
/// for its smallest entry at every step. Clusters live in the slot of their
/// smallest leaf; ties go to the lexicographically smallest slot pair.
pub fn rescan_agglomerate(d: &[f64], n: usize, linkage: Linkage) -> Vec<NaiveMerge> {
    let mut m = d.to_vec();
    let mut alive = vec![true; n];
    let mut size = vec![1usize; n];
    let mut node: Vec<usize> = (0..n).collect();
    let mut merges = Vec::new();
    for step in 0..n.saturating_sub(1) {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..n {
            for b in (a + 1)..n {
                if alive[a] && alive[b] && m[a * n + b] < best.0 {
                    best = (m[a * n + b], a, b);
                }
            }
        }
        let (h, a, b) = best;
        for c in 0..n {
            if !alive[c] || c == a || c == b {
                continue;
            }
            let (x, y) = (m[a * n + c], m[b * n + c]);
            let v = match linkage {
                Linkage::Single => x.min(y),
                Linkage::Complete => x.max(y),
                Linkage::Average => {
                    let (sa, sb) = (size[a] as f64, size[b] as f64);
                    (sa * x + sb * y) / (sa + sb)
                }
            };
            m[a * n + c] = v;
            m[c * n + a] = v;
        }
        alive[b] = false;
        merges.push((node[a].min(node[b]), node[a].max(node[b]), h, size[a] + size[b]));
        size[a] += size[b];
        node[a] = n + step;
    }
    merges
}

/// Minimum spanning tree edge weights by Prim's algorithm, ascending.
pub fn mst_weights(d: &[f64], n: usize) -> Vec<f64> {
    let mut in_tree = vec![false; n];
    let mut dist = vec![f64::INFINITY; n];
    dist[0] = 0.0;
    let mut weights = Vec::new();
    for step in 0..n {
        let u = (0..n)
            .filter(|&v| !in_tree[v])
            .min_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap())
            .unwrap();
        in_tree[u] = true;
        if step > 0 {
            weights.push(dist[u]);
        }
        for v in 0..n {
            if !in_tree[v] && d[u * n + v] < dist[v] {
                dist[v] = d[u * n + v];
            }
        }
    }
    weights.sort_by(|a, b| a.partial_cmp(b).unwrap());
    weights
}

/// Trapezoid rule over a grid.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    (1..x.len()).map(|i| 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1])).sum()
}
