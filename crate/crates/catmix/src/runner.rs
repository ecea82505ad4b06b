//! Fan-out/fan-in orchestration of independent restarts and their averaging.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use crate::data::CategoricalDataset;
use crate::engine::{fit, FitRecord, ModelConfig};
use crate::error::{Error, Result};
use crate::summarize::{
    build_coclustering, canonical_labels, summarize_variables, summarize_with_method,
    CoClusteringMatrix, SummaryClustering, SummaryConfig,
};

/// Settings for one averaged analysis. Run m uses seed base_seed + m.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub base_seed: u64,
    pub m_runs: usize,
    pub config: ModelConfig,
    pub summary: SummaryConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl RunManifest {
    pub fn new(config: ModelConfig, summary: SummaryConfig, base_seed: u64, m_runs: usize) -> Self {
        RunManifest {
            base_seed,
            m_runs,
            config,
            summary,
            data_path: None,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AveragedFit {
    pub summary: SummaryClustering,
    pub pcm: CoClusteringMatrix,
    pub fits: Vec<FitRecord>,
}

/// Run `m_runs` independent fits and extract a summary clustering. Fits are
/// independent and may execute in parallel; results are assembled in run
/// order, so the output does not depend on the worker count.
pub fn run_average(data: &CategoricalDataset, manifest: &RunManifest) -> Result<AveragedFit> {
    if manifest.m_runs == 0 {
        return Err(Error::Config("m_runs must be at least 1".into()));
    }
    manifest.config.validate()?;
    manifest.summary.validate()?;

    let fits: Vec<FitRecord> = (0..manifest.m_runs)
        .into_par_iter()
        .map(|m| {
            let mut config = manifest.config.clone();
            config.seed = manifest.base_seed.wrapping_add(m as u64);
            fit(data, &config)
                .map(|r| r.to_record())
                .map_err(|e| Error::Input(format!("run with seed {} failed: {e}", config.seed)))
        })
        .collect::<Result<_>>()?;

    let labels: Vec<Vec<usize>> = fits.iter().map(|f| f.labels.clone()).collect();
    let pcm = if labels.len() == 1 {
        // Degenerate single-run averaging: the indicator matrix of that run.
        let n = labels[0].len();
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if labels[0][i] == labels[0][j] {
                    p[i * n + j] = 1.0;
                }
            }
        }
        CoClusteringMatrix { n_obs: n, p, n_runs: 1 }
    } else {
        build_coclustering(&labels)?
    };

    let mut summary = if labels.len() == 1 {
        let canon = canonical_labels(&labels[0]);
        let n_clusters = canon.iter().max().map_or(0, |&m| m + 1);
        SummaryClustering {
            labels: canon,
            method: manifest.summary.method,
            n_clusters,
            voi_bound: None,
            selected_vars: None,
        }
    } else {
        summarize_with_method(&pcm, &manifest.summary)?
    };

    if manifest.config.variable_selection {
        let runs_c: Vec<Vec<f64>> = fits.iter().map(|f| f.c.clone()).collect();
        summary.selected_vars = Some(summarize_variables(&runs_c, &manifest.summary)?);
    }

    Ok(AveragedFit { summary, pcm, fits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate, SimulationDesign};
    use crate::eval::adjusted_rand_index;

    fn small_sim(seed: u64) -> crate::data::LabeledDataset {
        let design = SimulationDesign {
            n_obs: 150,
            n_vars: 40,
            n_relevant: 40,
            k_true: 3,
            cluster_sizes: vec![50, 50, 50],
            n_categories: 3,
            beta_shape: (1.0, 5.0),
            seed,
        };
        simulate(&design).unwrap()
    }

    #[test]
    fn single_run_summary_equals_run_labels() {
        let sim = small_sim(3);
        let config = ModelConfig {
            k_max: 5,
            ..ModelConfig::default()
        };
        let manifest = RunManifest::new(config, SummaryConfig::default(), 10, 1);
        let avg = run_average(&sim.data, &manifest).unwrap();
        assert_eq!(avg.fits.len(), 1);
        assert_eq!(avg.summary.labels, canonical_labels(&avg.fits[0].labels));
    }

    #[test]
    fn averaging_deterministic() {
        let sim = small_sim(4);
        let config = ModelConfig {
            k_max: 5,
            ..ModelConfig::default()
        };
        let manifest = RunManifest::new(config, SummaryConfig::default(), 100, 4);
        let a = run_average(&sim.data, &manifest).unwrap();
        let b = run_average(&sim.data, &manifest).unwrap();
        assert_eq!(a.summary.labels, b.summary.labels);
        assert_eq!(a.pcm.p, b.pcm.p);
    }

    #[test]
    fn averaged_summary_reasonable_on_separable_data() {
        let sim = small_sim(5);
        let config = ModelConfig {
            k_max: 6,
            ..ModelConfig::default()
        };
        let manifest = RunManifest::new(config, SummaryConfig::default(), 7, 5);
        let avg = run_average(&sim.data, &manifest).unwrap();
        let ari = adjusted_rand_index(&avg.summary.labels, &sim.true_labels).unwrap();
        assert!(ari > 0.8, "ari = {ari}");
    }
}
