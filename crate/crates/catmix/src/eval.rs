//! Metrics comparing clusterings and variable-selection outcomes to ground truth.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::engine::FitRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub ari: f64,
    pub n_clusters_found: usize,
    pub n_clusters_true: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
}

impl MetricReport {
    /// One-row CSV with header, for table aggregation.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "ari,n_clusters_found,n_clusters_true,f1,precision,recall\n{},{},{},{},{},{}\n",
            self.ari,
            self.n_clusters_found,
            self.n_clusters_true,
            opt(self.f1),
            opt(self.precision),
            opt(self.recall),
        )
    }
}

fn choose2(n: f64) -> f64 {
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index between two partitions, from the contingency table with
/// the permutation-model chance correction. Returns 1 when the adjustment
/// denominator vanishes (both partitions trivial and equal).
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "label vectors have different lengths: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Input("need at least 2 observations".into()));
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![0usize; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let row_sums: Vec<usize> = (0..ka).map(|i| table[i * kb..(i + 1) * kb].iter().sum()).collect();
    let col_sums: Vec<usize> = (0..kb).map(|j| (0..ka).map(|i| table[i * kb + j]).sum()).collect();

    let index: f64 = table.iter().map(|&n| choose2(n as f64)).sum();
    let sum_a: f64 = row_sums.iter().map(|&n| choose2(n as f64)).sum();
    let sum_b: f64 = col_sums.iter().map(|&n| choose2(n as f64)).sum();
    let total = choose2(a.len() as f64);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Precision, recall and F1 of a selected-variable mask against the truth.
/// F1 is 0 when there are no true positives.
pub fn f1_selection(selected: &[bool], truth: &[bool]) -> Result<(f64, f64, f64)> {
    if selected.len() != truth.len() {
        return Err(Error::Input(format!(
            "mask lengths differ: {} vs {}",
            selected.len(),
            truth.len()
        )));
    }
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (&s, &t) in selected.iter().zip(truth) {
        match (s, t) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => {}
        }
    }
    if tp == 0.0 {
        return Ok((0.0, 0.0, 0.0));
    }
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fn_);
    let f1 = 2.0 * precision * recall / (precision + recall);
    Ok((precision, recall, f1))
}

/// Pearson correlation between final ELBO and ARI across restarts, with a
/// two-sided t-test p-value (N - 2 degrees of freedom).
pub fn elbo_ari_report(fits: &[FitRecord], truth: &[usize]) -> Result<(f64, f64)> {
    if fits.len() < 3 {
        return Err(Error::Input(format!("need at least 3 fits, got {}", fits.len())));
    }
    let elbos: Vec<f64> = fits.iter().map(|f| f.elbo).collect();
    let aris: Vec<f64> = fits
        .iter()
        .map(|f| adjusted_rand_index(&f.labels, truth))
        .collect::<Result<_>>()?;
    pearson_with_p(&elbos, &aris)
}

pub fn pearson_with_p(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mean_x).powi(2);
        syy += (yi - mean_y).powi(2);
        sxy += (xi - mean_x) * (yi - mean_y);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero variance in correlation input".into()));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    let dof = n - 2.0;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r.abs() * (dof / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, dof).unwrap();
        2.0 * (1.0 - dist.cdf(t))
    };
    Ok((r, p))
}

/// Number of distinct labels.
pub fn count_nonempty(labels: &[usize]) -> usize {
    labels.iter().collect::<std::collections::HashSet<_>>().len()
}
