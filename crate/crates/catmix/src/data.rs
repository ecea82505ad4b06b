//! Dataset ingestion, validation and synthetic data generation.
//!
//! Datasets are dense matrices of 0-based category indices. Category counts
//! `L_j` default to (max observed index + 1) per column and can be pinned by a
//! sidecar schema when a category happens to be unobserved in the sample.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util;

/// N observations of P categorical variables, encoded as dense 0-based indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoricalDataset {
    n_obs: usize,
    n_vars: usize,
    categories: Vec<usize>,
    /// Row-major N x P.
    values: Vec<u32>,
    pub var_names: Option<Vec<String>>,
    pub obs_names: Option<Vec<String>>,
}

impl CategoricalDataset {
    pub fn new(n_obs: usize, n_vars: usize, categories: Vec<usize>, values: Vec<u32>) -> Result<Self> {
        if categories.len() != n_vars {
            return Err(Error::Validation(format!(
                "expected {} category counts, got {}",
                n_vars,
                categories.len()
            )));
        }
        if values.len() != n_obs * n_vars {
            return Err(Error::Validation(format!(
                "expected {} values, got {}",
                n_obs * n_vars,
                values.len()
            )));
        }
        if let Some(j) = categories.iter().position(|&l| l < 2) {
            return Err(Error::Validation(format!(
                "variable {} has {} categories; need at least 2",
                j, categories[j]
            )));
        }
        for n in 0..n_obs {
            for j in 0..n_vars {
                let v = values[n * n_vars + j] as usize;
                if v >= categories[j] {
                    return Err(Error::Validation(format!(
                        "value {} at ({}, {}) out of range for L={} categories",
                        v, n, j, categories[j]
                    )));
                }
            }
        }
        Ok(Self {
            n_obs,
            n_vars,
            categories,
            values,
            var_names: None,
            obs_names: None,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// Per-variable category counts `L_j`.
    pub fn categories(&self) -> &[usize] {
        &self.categories
    }

    #[inline]
    pub fn value(&self, n: usize, j: usize) -> usize {
        self.values[n * self.n_vars + j] as usize
    }

    #[inline]
    pub fn row(&self, n: usize) -> &[u32] {
        &self.values[n * self.n_vars..(n + 1) * self.n_vars]
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    /// Counts of each category in column `j`.
    pub fn column_counts(&self, j: usize) -> Vec<usize> {
        let mut counts = vec![0usize; self.categories[j]];
        for n in 0..self.n_obs {
            counts[self.value(n, j)] += 1;
        }
        counts
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        match &self.var_names {
            Some(names) => out.push_str(&names.join(",")),
            None => {
                let header: Vec<String> = (0..self.n_vars).map(|j| format!("v{j}")).collect();
                out.push_str(&header.join(","));
            }
        }
        out.push('\n');
        for n in 0..self.n_obs {
            let row = self.row(n);
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        io_util::write_atomic(path, out.as_bytes())
    }
}

/// Optional sidecar schema pinning `L_j` by variable name.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub categories: HashMap<String, usize>,
}

/// Load a dataset from CSV: header row of variable names, integer cells.
pub fn load_dataset(path: &Path, schema: Option<&DatasetSchema>) -> Result<CategoricalDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Validation(format!("cannot open {}: {e}", path.display())))?;
    let var_names: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Validation(format!("bad header in {}: {e}", path.display())))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let n_vars = var_names.len();
    let mut values: Vec<u32> = Vec::new();
    let mut n_obs = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row: row_idx,
            col: 0,
            message: e.to_string(),
        })?;
        if record.len() != n_vars {
            return Err(Error::Parse {
                row: row_idx,
                col: 0,
                message: format!("expected {} cells, got {}", n_vars, record.len()),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            let v: u32 = cell.parse().map_err(|_| Error::Parse {
                row: row_idx,
                col,
                message: format!("cell {cell:?} is not a non-negative integer"),
            })?;
            values.push(v);
        }
        n_obs += 1;
    }
    if n_obs == 0 {
        return Err(Error::Validation(format!("{} has no data rows", path.display())));
    }
    let mut categories = vec![0usize; n_vars];
    for j in 0..n_vars {
        let max = (0..n_obs).map(|n| values[n * n_vars + j]).max().unwrap();
        categories[j] = max as usize + 1;
    }
    // Degenerate variables carry no clustering information; reject at load.
    for j in 0..n_vars {
        let first = values[j];
        if (0..n_obs).all(|n| values[n * n_vars + j] == first) {
            return Err(Error::Validation(format!(
                "variable {:?} (column {}) has a single observed category",
                var_names[j], j
            )));
        }
    }
    if let Some(schema) = schema {
        for (j, name) in var_names.iter().enumerate() {
            if let Some(&l) = schema.categories.get(name) {
                if l < categories[j] {
                    return Err(Error::Validation(format!(
                        "schema declares {} categories for {:?} but {} observed",
                        l, name, categories[j]
                    )));
                }
                categories[j] = l;
            }
        }
    }
    let mut ds = CategoricalDataset::new(n_obs, n_vars, categories, values)?;
    ds.var_names = Some(var_names);
    Ok(ds)
}

/// Parameters for one synthetic dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationDesign {
    pub n_obs: usize,
    pub n_vars: usize,
    pub n_relevant: usize,
    pub k_true: usize,
    pub cluster_sizes: Vec<usize>,
    pub n_categories: usize,
    pub beta_shape: (f64, f64),
    pub seed: u64,
}

impl SimulationDesign {
    pub fn validate(&self) -> Result<()> {
        if self.cluster_sizes.len() != self.k_true {
            return Err(Error::Design(format!(
                "k_true = {} but {} cluster sizes given",
                self.k_true,
                self.cluster_sizes.len()
            )));
        }
        if self.cluster_sizes.iter().sum::<usize>() != self.n_obs {
            return Err(Error::Design(format!(
                "cluster sizes sum to {}, expected n_obs = {}",
                self.cluster_sizes.iter().sum::<usize>(),
                self.n_obs
            )));
        }
        if self.cluster_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Design("empty cluster in design".into()));
        }
        if self.n_relevant > self.n_vars {
            return Err(Error::Design(format!(
                "n_relevant = {} exceeds n_vars = {}",
                self.n_relevant, self.n_vars
            )));
        }
        if self.n_categories < 2 {
            return Err(Error::Design("need at least 2 categories".into()));
        }
        if self.beta_shape.0 <= 0.0 || self.beta_shape.1 <= 0.0 {
            return Err(Error::Design("beta shape parameters must be positive".into()));
        }
        Ok(())
    }

    /// Named preset designs used throughout the simulation studies. Cluster
    /// sizes are drawn uniformly in the stated range and rescaled to sum to N.
    pub fn preset(name: &str, seed: u64) -> Result<SimulationDesign> {
        let (n_obs, n_vars, n_relevant, k_true, size_range, n_categories) = match name {
            "sim2.1" => (1000, 100, 100, 10, (50, 200), 2),
            "sim2.2" => (1000, 100, 100, 10, (10, 400), 2),
            "sim2.3" => (2000, 100, 100, 20, (50, 200), 2),
            "sim2.4" => (1000, 100, 75, 10, (50, 200), 2),
            "sim2.5" => (1000, 100, 50, 10, (50, 200), 2),
            "cat3" => (1000, 100, 100, 10, (100, 100), 3),
            other => {
                return Err(Error::Design(format!("unknown design preset {other:?}")));
            }
        };
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5eed_de51_6e00_0000);
        let cluster_sizes = draw_cluster_sizes(&mut rng, k_true, n_obs, size_range);
        Ok(SimulationDesign {
            n_obs,
            n_vars,
            n_relevant,
            k_true,
            cluster_sizes,
            n_categories,
            beta_shape: (1.0, 5.0),
            seed,
        })
    }

    /// Identity of the per-cluster probability generator, recorded in metadata.
    pub fn generator_id(&self) -> String {
        if self.n_categories == 2 {
            format!("beta({},{})", self.beta_shape.0, self.beta_shape.1)
        } else {
            "symmetric-dirichlet(1)".to_string()
        }
    }
}

/// Draw k sizes uniformly in `range`, then rescale to sum exactly to `n_obs`.
fn draw_cluster_sizes(rng: &mut ChaCha12Rng, k: usize, n_obs: usize, range: (usize, usize)) -> Vec<usize> {
    let raw: Vec<usize> = (0..k).map(|_| rng.gen_range(range.0..=range.1)).collect();
    let total: usize = raw.iter().sum();
    let mut sizes: Vec<usize> = raw
        .iter()
        .map(|&s| ((s as f64 / total as f64) * n_obs as f64).floor().max(1.0) as usize)
        .collect();
    // Distribute the rounding remainder over the largest clusters.
    let mut assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut i = 0;
    while assigned < n_obs {
        sizes[order[i % k]] += 1;
        assigned += 1;
        i += 1;
    }
    while assigned > n_obs {
        let j = order[i % k];
        if sizes[j] > 1 {
            sizes[j] -= 1;
            assigned -= 1;
        }
        i += 1;
    }
    sizes
}

/// A simulated dataset with its ground truth.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub data: CategoricalDataset,
    pub true_labels: Vec<usize>,
    pub relevant_mask: Vec<bool>,
}

/// Metadata emitted alongside simulated data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationMeta {
    pub design: SimulationDesign,
    pub generator: String,
}

/// Per-variable, per-cluster category probabilities used by the generator.
/// Irrelevant variables carry the same vector for every cluster.
pub(crate) struct GeneratorTable {
    /// probs[j][k][l]
    pub probs: Vec<Vec<Vec<f64>>>,
}

pub(crate) fn draw_generator_table(design: &SimulationDesign, rng: &mut ChaCha12Rng) -> GeneratorTable {
    let l = design.n_categories;
    let draw_vector = |rng: &mut ChaCha12Rng| -> Vec<f64> {
        if l == 2 {
            let beta = Beta::new(design.beta_shape.0, design.beta_shape.1).unwrap();
            let p1 = beta.sample(rng);
            vec![1.0 - p1, p1]
        } else {
            // Symmetric Dirichlet(1) via unit-rate Gamma draws.
            let gamma = Gamma::new(1.0, 1.0).unwrap();
            let mut v: Vec<f64> = (0..l).map(|_| gamma.sample(rng)).collect();
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            v
        }
    };
    let mut probs = Vec::with_capacity(design.n_vars);
    for j in 0..design.n_vars {
        if j < design.n_relevant {
            probs.push((0..design.k_true).map(|_| draw_vector(rng)).collect());
        } else {
            let shared = draw_vector(rng);
            probs.push(vec![shared; design.k_true]);
        }
    }
    GeneratorTable { probs }
}

fn sample_category(probs: &[f64], u: f64) -> u32 {
    let mut acc = 0.0;
    for (l, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return l as u32;
        }
    }
    (probs.len() - 1) as u32
}

/// Generate a labelled dataset from a design. Deterministic given the seed.
pub fn simulate(design: &SimulationDesign) -> Result<LabeledDataset> {
    design.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(design.seed);
    let table = draw_generator_table(design, &mut rng);

    let mut true_labels = Vec::with_capacity(design.n_obs);
    for (k, &size) in design.cluster_sizes.iter().enumerate() {
        true_labels.extend(std::iter::repeat(k).take(size));
    }

    let mut values = Vec::with_capacity(design.n_obs * design.n_vars);
    for &k in &true_labels {
        for j in 0..design.n_vars {
            let u: f64 = rng.gen();
            values.push(sample_category(&table.probs[j][k], u));
        }
    }
    let categories = vec![design.n_categories; design.n_vars];
    let data = CategoricalDataset::new(design.n_obs, design.n_vars, categories, values)?;
    let relevant_mask = (0..design.n_vars).map(|j| j < design.n_relevant).collect();
    Ok(LabeledDataset {
        data,
        true_labels,
        relevant_mask,
    })
}

/// Write a labels CSV: two columns (obs_name, cluster_index), with header.
pub fn save_labels(path: &Path, labels: &[usize], obs_names: Option<&[String]>) -> Result<()> {
    let mut out = String::from("obs_name,cluster_index\n");
    for (n, &z) in labels.iter().enumerate() {
        match obs_names {
            Some(names) => {
                let _ = writeln!(out, "{},{}", names[n], z);
            }
            None => {
                let _ = writeln!(out, "obs{n},{z}");
            }
        }
    }
    io_util::write_atomic(path, out.as_bytes())
}

/// Read a labels CSV written by [`save_labels`].
pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))?;
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row,
            col: 0,
            message: e.to_string(),
        })?;
        if record.len() != 2 {
            return Err(Error::Parse {
                row,
                col: 0,
                message: format!("expected 2 columns, got {}", record.len()),
            });
        }
        let z: usize = record[1].parse().map_err(|_| Error::Parse {
            row,
            col: 1,
            message: format!("cluster index {:?} is not an integer", &record[1]),
        })?;
        labels.push(z);
    }
    if labels.is_empty() {
        return Err(Error::Input(format!("{} has no label rows", path.display())));
    }
    Ok(labels)
}
