//! Model averaging over multiple fits: co-clustering matrix construction and
//! extraction of a single summary partition.
//!
//! The co-clustering matrix plays the role of an MCMC posterior similarity
//! matrix: entry (i, j) is the fraction of runs in which observations i and j
//! share a cluster. Summaries either cut a complete-linkage dendrogram at a
//! fixed height (Medvedovic clustering) or minimise a lower bound on the
//! expected variation of information over all dendrogram cut levels.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util;

/// N x N averaged co-assignment probabilities over M runs.
#[derive(Debug, Clone)]
pub struct CoClusteringMatrix {
    pub n_obs: usize,
    /// Row-major N x N, symmetric, unit diagonal.
    pub p: Vec<f64>,
    pub n_runs: usize,
}

impl CoClusteringMatrix {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n_obs + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.p[i * self.n_obs..(i + 1) * self.n_obs]
    }
}

/// P_ij = (1/M) sum_m 1[z_i^(m) = z_j^(m)].
pub fn build_coclustering(runs: &[Vec<usize>]) -> Result<CoClusteringMatrix> {
    if runs.len() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 runs to average, got {}",
            runs.len()
        )));
    }
    let n = runs[0].len();
    for (m, run) in runs.iter().enumerate() {
        if run.len() != n {
            return Err(Error::Input(format!(
                "run {m} has length {}, expected {n}",
                run.len()
            )));
        }
    }
    let m = runs.len() as f64;
    let mut p = vec![0.0f64; n * n];
    for run in runs {
        for i in 0..n {
            for j in i..n {
                if run[i] == run[j] {
                    p[i * n + j] += 1.0;
                }
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            let v = p[i * n + j] / m;
            p[i * n + j] = v;
            p[j * n + i] = v;
        }
    }
    Ok(CoClusteringMatrix {
        n_obs: n,
        p,
        n_runs: runs.len(),
    })
}

const PCM_MAGIC: &[u8; 4] = b"PCM1";

impl CoClusteringMatrix {
    /// Dense binary file: magic "PCM1", u64 N, u64 M, then N^2 little-endian
    /// f64 values, row-major.
    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(20 + self.p.len() * 8);
        bytes.extend_from_slice(PCM_MAGIC);
        bytes.extend_from_slice(&(self.n_obs as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.n_runs as u64).to_le_bytes());
        for &v in &self.p {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        io_util::write_atomic(path, &bytes)
    }

    pub fn load_binary(path: &Path) -> Result<CoClusteringMatrix> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 20 || &bytes[..4] != PCM_MAGIC {
            return Err(Error::Input(format!("{} is not a PCM1 file", path.display())));
        }
        let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let m = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let expected = 20 + n * n * 8;
        if bytes.len() != expected {
            return Err(Error::Input(format!(
                "{}: expected {} bytes for N = {n}, found {}",
                path.display(),
                expected,
                bytes.len()
            )));
        }
        let p: Vec<f64> = bytes[20..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(CoClusteringMatrix { n_obs: n, p, n_runs: m })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for i in 0..self.n_obs {
            let row: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        io_util::write_atomic(path, out.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryMethod {
    Medvedovic,
    VoiAverage,
    VoiComplete,
}

impl std::str::FromStr for SummaryMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "medvedovic" => Ok(SummaryMethod::Medvedovic),
            "voi_average" => Ok(SummaryMethod::VoiAverage),
            "voi_complete" => Ok(SummaryMethod::VoiComplete),
            other => Err(Error::Input(format!("unknown summary method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryConfig {
    pub method: SummaryMethod,
    /// Cut the Medvedovic dendrogram at height 1 - medvedovic_cut.
    pub medvedovic_cut: f64,
    /// A variable is selected when its inclusion proportion strictly exceeds this.
    pub var_threshold: f64,
    /// Per-run inclusion rule: c_j counts as selected when c_j > c_cut.
    pub c_cut: f64,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        SummaryConfig {
            method: SummaryMethod::VoiComplete,
            medvedovic_cut: 0.01,
            var_threshold: 0.95,
            c_cut: 0.5,
        }
    }
}

impl SummaryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.medvedovic_cut > 0.0 && self.medvedovic_cut < 1.0) {
            return Err(Error::Config("medvedovic_cut must be in (0, 1)".into()));
        }
        if !(self.var_threshold > 0.0 && self.var_threshold < 1.0) {
            return Err(Error::Config("var_threshold must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryClustering {
    /// Canonically relabelled by first occurrence (0, 1, 2, ...).
    pub labels: Vec<usize>,
    pub method: SummaryMethod,
    pub n_clusters: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub voi_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_vars: Option<Vec<bool>>,
}

/// Relabel by order of first occurrence.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    let mut next = 0usize;
    labels
        .iter()
        .map(|&z| {
            *map.entry(z).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linkage {
    Average,
    Complete,
}

/// One agglomeration step: the two (stable) cluster ids merged and the
/// linkage distance at which they merged.
#[derive(Debug, Clone)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

/// Agglomerative hierarchical clustering on a dense distance matrix via the
/// Lance-Williams recurrences. Cluster ids are stable slot indices 0..N; after
/// a merge the pair lives in the lower slot. Ties break toward the pair with
/// the smallest indices.
pub fn hierarchical_cluster(dist: &[f64], n: usize, linkage: Linkage) -> Vec<Merge> {
    let mut d = dist.to_vec();
    let mut active: Vec<bool> = vec![true; n];
    let mut sizes: Vec<f64> = vec![1.0; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for _ in 1..n {
        let mut best = (usize::MAX, usize::MAX);
        let mut best_d = f64::INFINITY;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if !active[j] {
                    continue;
                }
                let dij = d[i * n + j];
                if dij < best_d {
                    best_d = dij;
                    best = (i, j);
                }
            }
        }
        let (a, b) = best;
        // Lance-Williams update of the distances to the merged cluster.
        for c in 0..n {
            if !active[c] || c == a || c == b {
                continue;
            }
            let dac = d[a * n + c];
            let dbc = d[b * n + c];
            let new = match linkage {
                Linkage::Complete => dac.max(dbc),
                Linkage::Average => (sizes[a] * dac + sizes[b] * dbc) / (sizes[a] + sizes[b]),
            };
            d[a * n + c] = new;
            d[c * n + a] = new;
        }
        sizes[a] += sizes[b];
        active[b] = false;
        merges.push(Merge { a, b, distance: best_d });
    }
    merges
}

/// Labels after applying every merge with distance <= cutoff.
pub fn cut_at_height(merges: &[Merge], n: usize, cutoff: f64) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for m in merges {
        if m.distance <= cutoff {
            let ra = find(&mut parent, m.a);
            let rb = find(&mut parent, m.b);
            if ra != rb {
                parent[rb.max(ra)] = rb.min(ra);
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    canonical_labels(&roots)
}

/// Lower bound on the posterior-expected variation of information of a
/// candidate partition, evaluated from the co-clustering matrix. Logarithms
/// are base 2.
pub fn voi_lower_bound(pcm: &CoClusteringMatrix, candidate: &[usize]) -> Result<f64> {
    let n = pcm.n_obs;
    if candidate.len() != n {
        return Err(Error::Input(format!(
            "candidate has {} labels, expected {n}",
            candidate.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..n {
        let row = pcm.row(i);
        let mut cluster_size = 0.0f64;
        let mut cluster_mass = 0.0f64;
        let mut row_mass = 0.0f64;
        for j in 0..n {
            row_mass += row[j];
            if candidate[j] == candidate[i] {
                cluster_size += 1.0;
                cluster_mass += row[j];
            }
        }
        if cluster_mass <= 0.0 {
            return Err(Error::Numerical {
                iter: 0,
                message: format!("zero co-clustering mass for observation {i}"),
            });
        }
        total += cluster_size.log2() + row_mass.log2() - 2.0 * cluster_mass.log2();
    }
    Ok(total / n as f64)
}

/// Agglomerative clustering on 1 - P with complete linkage, cut at a fixed
/// height 1 - medvedovic_cut.
pub fn medvedovic_summary(pcm: &CoClusteringMatrix, cfg: &SummaryConfig) -> Result<SummaryClustering> {
    cfg.validate()?;
    let n = pcm.n_obs;
    let dist: Vec<f64> = pcm.p.iter().map(|&v| 1.0 - v).collect();
    let merges = hierarchical_cluster(&dist, n, Linkage::Complete);
    let labels = cut_at_height(&merges, n, 1.0 - cfg.medvedovic_cut);
    let n_clusters = labels.iter().max().map_or(0, |&m| m + 1);
    Ok(SummaryClustering {
        labels,
        method: SummaryMethod::Medvedovic,
        n_clusters,
        voi_bound: None,
        selected_vars: None,
    })
}

/// Builds a dendrogram on 1 - P, evaluates the bound at every cut level from
/// N clusters down to 1, and returns the candidate with the minimal bound.
/// Ties break toward fewer clusters.
pub fn voi_summary(pcm: &CoClusteringMatrix, linkage: Linkage) -> Result<SummaryClustering> {
    let n = pcm.n_obs;
    let dist: Vec<f64> = pcm.p.iter().map(|&v| 1.0 - v).collect();
    let merges = hierarchical_cluster(&dist, n, linkage);

    // Walk the merges, maintaining per-observation within-cluster co-clustering
    // mass incrementally so every level costs O(N) on top of the merge itself.
    let row_mass: Vec<f64> = (0..n).map(|i| pcm.row(i).iter().sum()).collect();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut labels: Vec<usize> = (0..n).collect();
    let mut within_mass: Vec<f64> = (0..n).map(|i| pcm.at(i, i)).collect();
    let mut sizes: Vec<f64> = vec![1.0; n];

    let evaluate = |within: &[f64], sizes: &[f64], labels: &[usize]| -> f64 {
        let mut total = 0.0;
        for i in 0..n {
            total += sizes[labels[i]].log2() + row_mass[i].log2() - 2.0 * within[i].log2();
        }
        total / n as f64
    };

    let mut best_labels = labels.clone();
    let mut best_bound = evaluate(&within_mass, &sizes, &labels);
    for m in &merges {
        let (a, b) = (m.a, m.b);
        let add: Vec<usize> = members[b].clone();
        for &i in &members[a] {
            for &j in &add {
                within_mass[i] += pcm.at(i, j);
                within_mass[j] += pcm.at(i, j);
            }
        }
        for &j in &add {
            labels[j] = a;
        }
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        sizes[a] += sizes[b];
        let bound = evaluate(&within_mass, &sizes, &labels);
        // <= prefers the later (coarser) candidate on ties.
        if bound <= best_bound {
            best_bound = bound;
            best_labels = labels.clone();
        }
    }

    let labels = canonical_labels(&best_labels);
    let n_clusters = labels.iter().max().map_or(0, |&m| m + 1);
    Ok(SummaryClustering {
        labels,
        method: if linkage == Linkage::Average {
            SummaryMethod::VoiAverage
        } else {
            SummaryMethod::VoiComplete
        },
        n_clusters,
        voi_bound: Some(best_bound),
        selected_vars: None,
    })
}

pub fn summarize_with_method(pcm: &CoClusteringMatrix, cfg: &SummaryConfig) -> Result<SummaryClustering> {
    match cfg.method {
        SummaryMethod::Medvedovic => medvedovic_summary(pcm, cfg),
        SummaryMethod::VoiAverage => voi_summary(pcm, Linkage::Average),
        SummaryMethod::VoiComplete => voi_summary(pcm, Linkage::Complete),
    }
}

/// Variable j is selected when the proportion of runs with c_j > c_cut
/// strictly exceeds the threshold.
pub fn summarize_variables(runs_c: &[Vec<f64>], cfg: &SummaryConfig) -> Result<Vec<bool>> {
    if runs_c.is_empty() {
        return Err(Error::Input("need at least 1 run with c vectors".into()));
    }
    let p = runs_c[0].len();
    for (m, run) in runs_c.iter().enumerate() {
        if run.len() != p {
            return Err(Error::Input(format!(
                "run {m} has {} c values, expected {p}",
                run.len()
            )));
        }
    }
    let m = runs_c.len() as f64;
    let mut selected = Vec::with_capacity(p);
    for j in 0..p {
        let prop = runs_c.iter().filter(|run| run[j] > cfg.c_cut).count() as f64 / m;
        selected.push(prop > cfg.var_threshold);
    }
    Ok(selected)
}
