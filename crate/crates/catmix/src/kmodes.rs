//! k-modes initialisation: k-means for categorical data with simple-matching
//! (Hamming) dissimilarity and modal centroids.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::data::CategoricalDataset;
use crate::error::{Error, Result};

const RESTARTS: usize = 5;
const MAX_SWEEPS: usize = 100;

#[inline]
fn hamming(a: &[u32], b: &[u32]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Hard initial labels from k-modes. Runs a handful of restarts and keeps the
/// one with the smallest total within-mode dissimilarity. Deterministic given
/// the seed.
pub fn init_kmodes(data: &CategoricalDataset, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = data.n_obs();
    if k == 0 || k > n {
        return Err(Error::Config(format!(
            "k-modes requires 1 <= k <= n_obs, got k = {k}, n_obs = {n}"
        )));
    }
    if k == 1 {
        return Ok(vec![0; n]);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut best: Option<(usize, Vec<usize>)> = None;
    for _ in 0..RESTARTS {
        let (cost, labels) = run_once(data, k, &mut rng);
        if best.as_ref().map_or(true, |(c, _)| cost < *c) {
            best = Some((cost, labels));
        }
    }
    Ok(best.unwrap().1)
}

fn run_once(data: &CategoricalDataset, k: usize, rng: &mut ChaCha12Rng) -> (usize, Vec<usize>) {
    let n = data.n_obs();
    let p = data.n_vars();

    // Seed modes from k distinct observations.
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    let mut modes: Vec<Vec<u32>> = indices[..k].iter().map(|&i| data.row(i).to_vec()).collect();

    let mut labels = vec![0usize; n];
    for _ in 0..MAX_SWEEPS {
        let mut changed = false;
        for i in 0..n {
            let row = data.row(i);
            let mut best_k = 0;
            let mut best_d = usize::MAX;
            for (ki, mode) in modes.iter().enumerate() {
                let d = hamming(row, mode);
                if d < best_d {
                    best_d = d;
                    best_k = ki;
                }
            }
            if labels[i] != best_k {
                labels[i] = best_k;
                changed = true;
            }
        }

        // Recompute modal centroids; ties resolved toward the lowest category.
        let mut counts: Vec<Vec<Vec<usize>>> = (0..k)
            .map(|_| data.categories().iter().map(|&l| vec![0usize; l]).collect())
            .collect();
        let mut sizes = vec![0usize; k];
        for i in 0..n {
            let ki = labels[i];
            sizes[ki] += 1;
            for j in 0..p {
                counts[ki][j][data.value(i, j)] += 1;
            }
        }
        for ki in 0..k {
            if sizes[ki] == 0 {
                // Reseed an empty mode from the point farthest from its mode.
                let far = (0..n)
                    .max_by_key(|&i| (hamming(data.row(i), &modes[labels[i]]), std::cmp::Reverse(i)))
                    .unwrap();
                modes[ki] = data.row(far).to_vec();
                changed = true;
                continue;
            }
            for j in 0..p {
                let mode_cat = counts[ki][j]
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                    .map(|(cat, _)| cat as u32)
                    .unwrap();
                modes[ki][j] = mode_cat;
            }
        }

        if !changed {
            break;
        }
    }

    let cost = (0..n).map(|i| hamming(data.row(i), &modes[labels[i]])).sum();
    (cost, labels)
}
