//! Agglomerative hierarchical clustering with Lance–Williams updates.
//!
//! Clusters live in slots named after their smallest leaf. Each step merges
//! the closest pair; ties go to the lexicographically smallest slot pair.
//! Average linkage uses the weighted update
//! `d(A+B, C) = (|A| d(A,C) + |B| d(B,C)) / (|A| + |B|)`, which equals the
//! mean member distance up to rounding.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::distances::DistanceMatrix;
use crate::{matrix, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    #[default]
    Average,
    Single,
    Complete,
}

impl std::str::FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(Self::Average),
            "single" => Ok(Self::Single),
            "complete" => Ok(Self::Complete),
            other => Err(Error::invalid(format!("unknown linkage `{other}`"))),
        }
    }
}

/// One merge. Nodes `0..n` are leaves; merge `i` creates node `n + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
}

pub fn agglomerate_matrix(d: &DistanceMatrix, linkage: Linkage) -> Result<Dendrogram> {
    agglomerate(d.ids(), d.values(), linkage)
}

/// Clusters `n` labelled points from a row-major symmetric, zero-diagonal
/// dissimilarity matrix.
pub fn agglomerate(ids: &[String], values: &[f64], linkage: Linkage) -> Result<Dendrogram> {
    let n = ids.len();
    if n == 0 {
        return Err(Error::invalid("cannot cluster an empty matrix"));
    }
    if values.len() != n * n {
        return Err(Error::invalid(format!("{} values for {n} ids", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("dissimilarities must be finite"));
    }
    let asym = matrix::asymmetry(n, values);
    if asym > 1e-12 {
        return Err(Error::invalid(format!("dissimilarity matrix is asymmetric by {asym:e}")));
    }
    if (0..n).any(|i| values[i * n + i] != 0.0) {
        return Err(Error::invalid("dissimilarity matrix diagonal must be zero"));
    }

    let mut link: Vec<f64> = values.to_vec();
    // symmetrize exactly from the upper triangle
    for i in 0..n {
        for j in (i + 1)..n {
            link[j * n + i] = link[i * n + j];
        }
    }
    let mut size = vec![1_usize; n];
    let mut node: Vec<usize> = (0..n).collect();
    let mut active = vec![true; n];
    let mut nn: Vec<(f64, usize)> = vec![(f64::INFINITY, usize::MAX); n];

    let scan = |link: &[f64], active: &[bool], i: usize| {
        let mut best = (f64::INFINITY, usize::MAX);
        for k in (i + 1)..n {
            if active[k] && link[i * n + k] < best.0 {
                best = (link[i * n + k], k);
            }
        }
        best
    };
    for i in 0..n {
        nn[i] = scan(&link, &active, i);
    }

    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let mut i = usize::MAX;
        for s in 0..n {
            if active[s] && nn[s].1 != usize::MAX && (i == usize::MAX || nn[s].0 < nn[i].0) {
                i = s;
            }
        }
        let (height, j) = nn[i];
        merges.push(Merge {
            a: node[i].min(node[j]),
            b: node[i].max(node[j]),
            height,
            size: size[i] + size[j],
        });
        active[j] = false;
        for k in 0..n {
            if !active[k] || k == i {
                continue;
            }
            let (ik, jk) = (i * n + k, j * n + k);
            let v = match linkage {
                Linkage::Single => link[ik].min(link[jk]),
                Linkage::Complete => link[ik].max(link[jk]),
                Linkage::Average => {
                    let (si, sj) = (size[i] as f64, size[j] as f64);
                    (si * link[ik] + sj * link[jk]) / (si + sj)
                }
            };
            link[ik] = v;
            link[k * n + i] = v;
        }
        size[i] += size[j];
        node[i] = n + step;

        nn[i] = scan(&link, &active, i);
        for k in 0..n {
            if !active[k] || k == i {
                continue;
            }
            if nn[k].1 == i || nn[k].1 == j {
                nn[k] = scan(&link, &active, k);
            } else if k < i {
                let v = link[k * n + i];
                if v < nn[k].0 || (v == nn[k].0 && i < nn[k].1) {
                    nn[k] = (v, i);
                }
            }
        }
    }
    Ok(Dendrogram {
        leaves: ids.to_vec(),
        merges,
    })
}

impl Dendrogram {
    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.leaves.len();
        if self.merges.len() + 1 != n {
            return Err(Error::invalid(format!(
                "{} merges for {n} leaves",
                self.merges.len()
            )));
        }
        let mut used = vec![false; 2 * n - 1];
        let mut sizes: Vec<usize> = vec![1; n];
        for (step, m) in self.merges.iter().enumerate() {
            let limit = n + step;
            if m.a >= limit || m.b >= limit || m.a == m.b || used[m.a] || used[m.b] {
                return Err(Error::invalid(format!("merge {step} does not form a tree")));
            }
            if !(m.height >= 0.0) || m.size != sizes[m.a] + sizes[m.b] {
                return Err(Error::invalid(format!("merge {step} has inconsistent height or size")));
            }
            used[m.a] = true;
            used[m.b] = true;
            sizes.push(m.size);
        }
        Ok(())
    }

    pub fn heights(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.height).collect()
    }

    fn labels_after(&self, applied: impl Fn(usize, &Merge) -> bool) -> Vec<usize> {
        let n = self.n_leaves();
        let mut parent: Vec<usize> = (0..2 * n - 1).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (step, m) in self.merges.iter().enumerate() {
            if applied(step, m) {
                let node = n + step;
                let ra = find(&mut parent, m.a);
                let rb = find(&mut parent, m.b);
                parent[ra] = node;
                parent[rb] = node;
            } else {
                // the merged node stands alone; its children stay separate
            }
        }
        let mut label_of_root = std::collections::HashMap::new();
        (0..n)
            .map(|leaf| {
                let root = find(&mut parent, leaf);
                let next = label_of_root.len() + 1;
                *label_of_root.entry(root).or_insert(next)
            })
            .collect()
    }

    /// Cluster labels `1..=k` after undoing the last `k - 1` merges, numbered
    /// by first appearance in leaf order.
    pub fn cut_k(&self, k: usize) -> Result<Vec<usize>> {
        let n = self.n_leaves();
        if k == 0 || k > n {
            return Err(Error::invalid(format!("cannot cut {n} leaves into {k} clusters")));
        }
        Ok(self.labels_after(|step, _| step < n - k))
    }

    /// Cluster labels after removing every merge strictly above `height`.
    pub fn cut_height(&self, height: f64) -> Result<Vec<usize>> {
        if !(height >= 0.0) {
            return Err(Error::invalid(format!("cut height {height} must be nonnegative")));
        }
        Ok(self.labels_after(|_, m| m.height <= height))
    }

    pub fn write_json<W: Write>(&self, mut writer: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut writer, self)?;
        writeln!(writer)?;
        Ok(())
    }

    pub fn read_json<R: std::io::Read>(reader: R) -> Result<Self> {
        let d: Self = serde_json::from_reader(reader)?;
        d.validate()?;
        Ok(d)
    }

    /// Newick text with branch lengths equal to height differences.
    pub fn to_newick(&self) -> String {
        let n = self.n_leaves();
        if n == 1 {
            return format!("{};", newick_name(&self.leaves[0]));
        }
        let height = |node: usize| if node < n { 0.0 } else { self.merges[node - n].height };
        let mut out = String::new();
        // explicit stack: (node, parent height, stage)
        let mut stack = vec![(2 * n - 2, height(2 * n - 2), 0_u8)];
        while let Some((node, ph, stage)) = stack.pop() {
            if node < n {
                out.push_str(&newick_name(&self.leaves[node]));
                out.push_str(&format!(":{}", ph - 0.0));
                continue;
            }
            let m = self.merges[node - n];
            let h = m.height;
            match stage {
                0 => {
                    out.push('(');
                    stack.push((node, ph, 1));
                    stack.push((m.a, h, 0));
                }
                1 => {
                    out.push(',');
                    stack.push((node, ph, 2));
                    stack.push((m.b, h, 0));
                }
                _ => {
                    out.push(')');
                    if node != 2 * n - 2 {
                        out.push_str(&format!(":{}", ph - h));
                    }
                }
            }
        }
        out.push(';');
        out
    }
}

fn newick_name(s: &str) -> String {
    if s.chars().any(|c| "()[]':;, \t".contains(c)) {
        format!("'{}'", s.replace('\'', "''"))
    } else {
        s.to_string()
    }
}

/// CSV `id,cluster`.
pub fn write_assignments<W: Write>(ids: &[String], labels: &[usize], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "cluster"])?;
    for (id, l) in ids.iter().zip(labels) {
        w.write_record([id.as_str(), &l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
