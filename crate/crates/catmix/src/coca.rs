//! Cluster-of-clusters analysis: stack several clusterings of the same
//! observations into a binary Matrix of Clusters and cluster that matrix.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::CategoricalDataset;
use crate::engine::ModelConfig;
use crate::error::{Error, Result};
use crate::io_util;
use crate::runner::{run_average, AveragedFit, RunManifest};
use crate::summarize::SummaryConfig;

/// K x N binary matrix stacking the one-hot encodings of M clusterings,
/// K = sum of per-clustering cluster counts.
#[derive(Debug, Clone)]
pub struct MatrixOfClusters {
    pub n_obs: usize,
    pub total_clusters: usize,
    pub n_datasets: usize,
    /// Row-major K x N.
    pub moc: Vec<u8>,
    /// For each row: (dataset index, cluster label within that dataset).
    pub cluster_origin: Vec<(usize, usize)>,
}

/// Rows are ordered by (dataset index, first occurrence of the cluster label).
pub fn build_moc(clusterings: &[Vec<usize>]) -> Result<MatrixOfClusters> {
    if clusterings.len() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 clusterings, got {}",
            clusterings.len()
        )));
    }
    let n = clusterings[0].len();
    for (m, c) in clusterings.iter().enumerate() {
        if c.len() != n {
            return Err(Error::Input(format!(
                "clustering {m} has length {}, expected {n}",
                c.len()
            )));
        }
    }
    let mut cluster_origin = Vec::new();
    let mut rows: Vec<Vec<u8>> = Vec::new();
    for (m, labels) in clusterings.iter().enumerate() {
        let mut seen: Vec<usize> = Vec::new();
        for &z in labels {
            if !seen.contains(&z) {
                seen.push(z);
            }
        }
        for &z in &seen {
            let row: Vec<u8> = labels.iter().map(|&l| u8::from(l == z)).collect();
            cluster_origin.push((m, z));
            rows.push(row);
        }
    }
    let total_clusters = rows.len();
    let moc = rows.concat();
    Ok(MatrixOfClusters {
        n_obs: n,
        total_clusters,
        n_datasets: clusterings.len(),
        moc,
        cluster_origin,
    })
}

impl MatrixOfClusters {
    #[inline]
    pub fn at(&self, k: usize, n: usize) -> u8 {
        self.moc[k * self.n_obs + n]
    }

    /// Transpose into an N x K binary dataset suitable for fitting.
    pub fn to_dataset(&self) -> Result<CategoricalDataset> {
        let k = self.total_clusters;
        let mut values = Vec::with_capacity(self.n_obs * k);
        for n in 0..self.n_obs {
            for row in 0..k {
                values.push(self.at(row, n) as u32);
            }
        }
        CategoricalDataset::new(self.n_obs, k, vec![2; k], values)
    }

    /// CSV with one row per cluster, labelled "m<dataset>:<cluster>".
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("cluster");
        for n in 0..self.n_obs {
            let _ = write!(out, ",obs{n}");
        }
        out.push('\n');
        for (k, &(m, z)) in self.cluster_origin.iter().enumerate() {
            let _ = write!(out, "m{m}:{z}");
            for n in 0..self.n_obs {
                let _ = write!(out, ",{}", self.at(k, n));
            }
            out.push('\n');
        }
        io_util::write_atomic(path, out.as_bytes())
    }
}

/// Cluster the transposed Matrix of Clusters with averaged fits. Variable
/// selection is forced off so every source clustering contributes.
pub fn cluster_moc(moc: &MatrixOfClusters, config: &ModelConfig, m_runs: usize) -> Result<AveragedFit> {
    let data = moc.to_dataset()?;
    let mut config = config.clone();
    config.variable_selection = false;
    let manifest = RunManifest::new(config.clone(), SummaryConfig::default(), config.seed, m_runs);
    run_average(&data, &manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::adjusted_rand_index;

    #[test]
    fn moc_shape_and_column_sums() {
        let c1 = vec![0, 0, 1, 1];
        let c2 = vec![0, 1, 1, 2];
        let moc = build_moc(&[c1, c2]).unwrap();
        assert_eq!(moc.total_clusters, 5);
        assert_eq!(moc.n_obs, 4);
        for n in 0..4 {
            let col_sum: u32 = (0..5).map(|k| moc.at(k, n) as u32).sum();
            assert_eq!(col_sum, 2);
        }
    }

    #[test]
    fn moc_rejects_single_clustering() {
        assert!(matches!(build_moc(&[vec![0, 1]]), Err(Error::Input(_))));
    }

    #[test]
    fn moc_transpose_feeds_fit() {
        let c1 = vec![0, 0, 1, 1, 2, 2];
        let c2 = vec![1, 1, 0, 0, 0, 2];
        let moc = build_moc(&[c1, c2]).unwrap();
        let data = moc.to_dataset().unwrap();
        assert_eq!(data.n_obs(), 6);
        assert_eq!(data.n_vars(), moc.total_clusters);
        assert!(data.categories().iter().all(|&l| l == 2));
    }

    #[test]
    fn moc_relabeling_permutes_rows_only() {
        let c1 = vec![0, 0, 1, 1];
        let c2 = vec![0, 1, 1, 2];
        let a = build_moc(&[c1.clone(), c2]).unwrap();
        // Relabel the second clustering; rows carry the same indicator sets.
        let c2_relabelled = vec![7, 3, 3, 1];
        let b = build_moc(&[c1, c2_relabelled]).unwrap();
        let rows = |m: &MatrixOfClusters| -> std::collections::HashSet<Vec<u8>> {
            (0..m.total_clusters)
                .map(|k| (0..m.n_obs).map(|n| m.at(k, n)).collect())
                .collect()
        };
        assert_eq!(rows(&a), rows(&b));
        assert_eq!(a.cluster_origin.len(), b.cluster_origin.len());
    }

    #[test]
    fn identical_inputs_recovered() {
        let labels: Vec<usize> = (0..60).map(|i| i / 20).collect();
        let moc = build_moc(&[labels.clone(), labels.clone()]).unwrap();
        let config = ModelConfig {
            k_max: 6,
            seed: 1,
            ..ModelConfig::default()
        };
        let avg = cluster_moc(&moc, &config, 3).unwrap();
        let ari = adjusted_rand_index(&avg.summary.labels, &labels).unwrap();
        assert!((ari - 1.0).abs() < 1e-12, "ari = {ari}");
    }
}
