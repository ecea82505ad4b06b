//! Acceptance gate: one test per criterion, each printing a pass/fail line.
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::sync::OnceLock;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use statrs::function::gamma::ln_gamma;

use catmix::data::{simulate, CategoricalDataset, SimulationDesign};
use catmix::engine::{fit, ModelConfig};
use catmix::eval::{adjusted_rand_index, elbo_ari_report, f1_selection};
use catmix::runner::{run_average, RunManifest};
use catmix::summarize::{voi_lower_bound, voi_summary, Linkage, SummaryConfig};

fn report(name: &str, pass: bool, detail: &str) {
    println!(
        "acceptance: {name} ... {} ({detail})",
        if pass { "pass" } else { "FAIL" }
    );
    assert!(pass, "{name}: {detail}");
}

fn random_design(rng: &mut ChaCha12Rng) -> SimulationDesign {
    let k_true = rng.gen_range(2..=4);
    let per = rng.gen_range(20..=40);
    let n_vars = rng.gen_range(8..=20);
    let n_relevant = rng.gen_range(n_vars / 2..=n_vars);
    SimulationDesign {
        n_obs: k_true * per,
        n_vars,
        n_relevant,
        k_true,
        cluster_sizes: vec![per; k_true],
        n_categories: if rng.gen_bool(0.5) { 2 } else { rng.gen_range(3..=4) },
        beta_shape: (1.0, 5.0),
        seed: rng.gen(),
    }
}

/// 1. Every CAVI iteration's ELBO change is non-decreasing up to 1e-6,
///    across 100 mixed simulated datasets with and without variable selection.
#[test]
fn elbo_monotonicity() {
    let mut rng = ChaCha12Rng::seed_from_u64(0xACC1);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let design = random_design(&mut rng);
        let sim = simulate(&design).unwrap();
        let config = ModelConfig {
            k_max: design.k_true + rng.gen_range(1..=4),
            variable_selection: i % 2 == 1,
            max_iter: 300,
            seed: rng.gen(),
            ..ModelConfig::default()
        };
        let result = fit(&sim.data, &config).unwrap();
        let trace = &result.state.elbo_trace;
        for w in trace.windows(2) {
            worst = worst.min(w[1] - w[0]);
        }
    }
    report(
        "elbo monotone over 100 mixed fits",
        worst > -1e-6,
        &format!("worst iteration delta = {worst:.3e}"),
    );
}

/// Closed-form log marginal of the one-component model.
fn one_cluster_log_marginal(data: &CategoricalDataset) -> f64 {
    let n = data.n_obs() as f64;
    let mut total = 0.0;
    for j in 0..data.n_vars() {
        let l_j = data.categories()[j];
        let eps = 1.0 / l_j as f64;
        total += ln_gamma(1.0) - ln_gamma(1.0 + n);
        for &c in &data.column_counts(j) {
            total += ln_gamma(eps + c as f64) - ln_gamma(eps);
        }
    }
    total
}

/// Exact log evidence by exhaustive enumeration over all K^N allocations.
fn exact_log_evidence(data: &CategoricalDataset, k: usize, alpha0: f64) -> f64 {
    let n = data.n_obs();
    let mut log_terms = Vec::new();
    for code in 0..k.pow(n as u32) {
        let mut z = Vec::with_capacity(n);
        let mut c = code;
        for _ in 0..n {
            z.push(c % k);
            c /= k;
        }
        let mut sizes = vec![0usize; k];
        for &zi in &z {
            sizes[zi] += 1;
        }
        let mut lp = ln_gamma(k as f64 * alpha0) - ln_gamma(k as f64 * alpha0 + n as f64);
        for &s in &sizes {
            lp += ln_gamma(alpha0 + s as f64) - ln_gamma(alpha0);
        }
        for j in 0..data.n_vars() {
            let l_j = data.categories()[j];
            let eps = 1.0 / l_j as f64;
            for ki in 0..k {
                let mut counts = vec![0usize; l_j];
                let mut size = 0usize;
                for (i, &zi) in z.iter().enumerate() {
                    if zi == ki {
                        counts[data.value(i, j)] += 1;
                        size += 1;
                    }
                }
                lp += ln_gamma(1.0) - ln_gamma(1.0 + size as f64);
                for &cnt in &counts {
                    lp += ln_gamma(eps + cnt as f64) - ln_gamma(eps);
                }
            }
        }
        log_terms.push(lp);
    }
    let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + log_terms.iter().map(|&t| (t - max).exp()).sum::<f64>().ln()
}

/// 2. On tiny datasets the converged ELBO stays below the exact evidence with
///    a bounded gap, and the one-cluster ELBO matches the closed form.
#[test]
fn exact_evidence_bound() {
    let mut rng = ChaCha12Rng::seed_from_u64(0xACC2);
    let mut max_rel_gap: f64 = 0.0;
    let mut max_k1_err: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.gen_range(3..=4);
        let p = rng.gen_range(2..=3);
        let values: Vec<u32> = (0..n * p).map(|_| rng.gen_range(0..2)).collect();
        let data = CategoricalDataset::new(n, p, vec![2; p], values).unwrap();

        let config = ModelConfig {
            k_max: 2,
            max_iter: 500,
            seed: rng.gen(),
            ..ModelConfig::default()
        };
        let exact = exact_log_evidence(&data, 2, config.alpha0);
        // Best restart, as in the averaging workflow: a k-modes start plus a
        // pooled start (the sparse prior favours pooled allocations).
        let mut best = f64::NEG_INFINITY;
        let mut restarts = vec![
            fit(&data, &config).unwrap(),
            catmix::engine::fit_with_init(&data, &config, &vec![0; n]).unwrap(),
        ];
        for extra in 1..=2u64 {
            let mut c = config.clone();
            c.seed = config.seed.wrapping_add(extra);
            restarts.push(fit(&data, &c).unwrap());
        }
        for result in restarts {
            assert!(
                result.elbo <= exact + 1e-9,
                "elbo {} above evidence {exact}",
                result.elbo
            );
            best = best.max(result.elbo);
        }
        max_rel_gap = max_rel_gap.max((exact - best) / exact.abs());

        let config1 = ModelConfig {
            k_max: 1,
            max_iter: 50,
            ..ModelConfig::default()
        };
        let r1 = fit(&data, &config1).unwrap();
        max_k1_err = max_k1_err.max((r1.elbo - one_cluster_log_marginal(&data)).abs());
    }
    report(
        "exact-evidence oracle on 50 tiny datasets",
        max_rel_gap < 0.2 && max_k1_err < 1e-8,
        &format!("max relative gap = {max_rel_gap:.4}, max one-cluster error = {max_k1_err:.2e}"),
    );
}

struct Replicate {
    summary_ari: f64,
    n_clusters: usize,
    indiv_aris: Vec<f64>,
}

fn binary_replicates() -> &'static Vec<Replicate> {
    static REPS: OnceLock<Vec<Replicate>> = OnceLock::new();
    REPS.get_or_init(|| {
        (0..5u64)
            .map(|rep| {
                let design = SimulationDesign::preset("sim2.1", 0xACC3 + rep).unwrap();
                let sim = simulate(&design).unwrap();
                let config = ModelConfig {
                    k_max: 30,
                    ..ModelConfig::default()
                };
                let manifest =
                    RunManifest::new(config, SummaryConfig::default(), 7000 + rep, 25);
                let avg = run_average(&sim.data, &manifest).unwrap();
                let indiv_aris = avg
                    .fits
                    .iter()
                    .map(|f| adjusted_rand_index(&f.labels, &sim.true_labels).unwrap())
                    .collect();
                Replicate {
                    summary_ari: adjusted_rand_index(&avg.summary.labels, &sim.true_labels)
                        .unwrap(),
                    n_clusters: avg.summary.n_clusters,
                    indiv_aris,
                }
            })
            .collect()
    })
}

/// 3. Averaged summary quality on the dense binary design: mean summary ARI
///    over 5 replicates at least 0.90, recovered cluster count in [8, 13].
#[test]
fn mixture_recovery_averaged() {
    let reps = binary_replicates();
    let mean_ari: f64 = reps.iter().map(|r| r.summary_ari).sum::<f64>() / reps.len() as f64;
    let counts: Vec<usize> = reps.iter().map(|r| r.n_clusters).collect();
    let counts_ok = counts.iter().all(|&k| (8..=13).contains(&k));
    report(
        "averaged recovery on dense binary design",
        mean_ari >= 0.90 && counts_ok,
        &format!("mean summary ARI = {mean_ari:.4}, cluster counts = {counts:?}"),
    );
}

/// 4. At least 90% of the individual restarts reach ARI > 0.75.
#[test]
fn single_run_ari_floor() {
    let reps = binary_replicates();
    let all: Vec<f64> = reps.iter().flat_map(|r| r.indiv_aris.iter().copied()).collect();
    let frac = all.iter().filter(|&&a| a > 0.75).count() as f64 / all.len() as f64;
    report(
        "single-run ARI floor",
        frac >= 0.90,
        &format!("fraction of fits above 0.75 = {frac:.3} over {} fits", all.len()),
    );
}

/// 5. Variable-selection F1 on the 75/100-relevant design: mean over 5
///    replicates at least 0.85 with threshold 0.95.
#[test]
fn variable_selection_f1() {
    let mut f1s = Vec::new();
    for rep in 0..5u64 {
        let design = SimulationDesign::preset("sim2.4", 0xACC5 + rep).unwrap();
        let sim = simulate(&design).unwrap();
        let config = ModelConfig {
            k_max: 30,
            variable_selection: true,
            ..ModelConfig::default()
        };
        let manifest = RunManifest::new(config, SummaryConfig::default(), 7100 + rep, 25);
        let avg = run_average(&sim.data, &manifest).unwrap();
        let selected = avg.summary.selected_vars.as_ref().unwrap();
        let (_, _, f1) = f1_selection(selected, &sim.relevant_mask).unwrap();
        f1s.push(f1);
    }
    let mean: f64 = f1s.iter().sum::<f64>() / f1s.len() as f64;
    report(
        "variable-selection F1",
        mean >= 0.85,
        &format!("mean F1 = {mean:.4}, per replicate = {f1s:?}"),
    );
}

/// 6. ELBO correlates with clustering quality across 20 restarts.
#[test]
fn elbo_ari_correlation() {
    let design = SimulationDesign::preset("sim2.1", 0xACC6).unwrap();
    let sim = simulate(&design).unwrap();
    let config = ModelConfig {
        k_max: 30,
        ..ModelConfig::default()
    };
    let manifest = RunManifest::new(config, SummaryConfig::default(), 7200, 20);
    let avg = run_average(&sim.data, &manifest).unwrap();
    let (r, p) = elbo_ari_report(&avg.fits, &sim.true_labels).unwrap();
    report(
        "ELBO-ARI correlation over 20 restarts",
        r > 0.5 && p < 0.05,
        &format!("r = {r:.4}, p = {p:.2e}"),
    );
}

/// Enumerate all set partitions of n items as restricted growth strings.
fn all_partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = vec![0usize; n];
    fn recurse(current: &mut Vec<usize>, pos: usize, max_used: usize, out: &mut Vec<Vec<usize>>) {
        if pos == current.len() {
            out.push(current.clone());
            return;
        }
        for label in 0..=max_used + 1 {
            current[pos] = label;
            recurse(current, pos + 1, max_used.max(label), out);
        }
    }
    if n > 0 {
        recurse(&mut current, 1, 0, &mut out);
    }
    out
}

/// 7. The dendrogram-sweep summary never beats the exhaustively enumerated
///    global minimum of the lower bound, and attains it on block matrices.
#[test]
fn voi_global_minimum() {
    let mut rng = ChaCha12Rng::seed_from_u64(0xACC7);
    let mut max_excess: f64 = 0.0;
    let mut block_err: f64 = 0.0;
    for case in 0..50 {
        let n = rng.gen_range(3..=8);
        let block = case % 5 == 0;
        let runs: Vec<Vec<usize>> = if block {
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            vec![labels.clone(), labels]
        } else {
            (0..rng.gen_range(2..=5))
                .map(|_| (0..n).map(|_| rng.gen_range(0..3)).collect())
                .collect()
        };
        let pcm = catmix::summarize::build_coclustering(&runs).unwrap();
        let global_min = all_partitions(n)
            .iter()
            .map(|part| voi_lower_bound(&pcm, part).unwrap())
            .fold(f64::INFINITY, f64::min);
        for linkage in [Linkage::Average, Linkage::Complete] {
            let summary = voi_summary(&pcm, linkage).unwrap();
            let bound = summary.voi_bound.unwrap();
            assert!(
                bound >= global_min - 1e-9,
                "summary bound {bound} below global minimum {global_min}"
            );
            max_excess = max_excess.max(bound - global_min);
            if block {
                block_err = block_err.max(bound - global_min);
            }
        }
    }
    report(
        "VoI bound global-minimum oracle",
        block_err < 1e-9,
        &format!("max excess over global min = {max_excess:.4}, block-case error = {block_err:.2e}"),
    );
}

/// Pair-counting brute force ARI.
fn ari_pairs(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut n11, mut n10, mut n01, mut n00) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in (i + 1)..n {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => n11 += 1.0,
                (true, false) => n10 += 1.0,
                (false, true) => n01 += 1.0,
                (false, false) => n00 += 1.0,
            }
        }
    }
    let total = n11 + n10 + n01 + n00;
    let expected = (n11 + n10) * (n11 + n01) / total;
    let max = 0.5 * ((n11 + n10) + (n11 + n01));
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (n11 - expected) / (max - expected)
}

/// 8. The contingency-table ARI matches the pair-counting oracle.
#[test]
fn ari_pair_counting_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(0xACC8);
    let mut max_err: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(2..=50);
        let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..6)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..6)).collect();
        let fast = adjusted_rand_index(&a, &b).unwrap();
        max_err = max_err.max((fast - ari_pairs(&a, &b)).abs());
    }
    report(
        "ARI pair-counting oracle over 200 pairs",
        max_err < 1e-12,
        &format!("max |difference| = {max_err:.2e}"),
    );
}

/// 9. Averaged recovery on the 3-category design: summary ARI at least 0.90
///    on each of 3 replicates.
#[test]
fn three_category_recovery() {
    let mut aris = Vec::new();
    for rep in 0..3u64 {
        let design = SimulationDesign::preset("cat3", 0xACC9 + rep).unwrap();
        let sim = simulate(&design).unwrap();
        let config = ModelConfig {
            k_max: 20,
            ..ModelConfig::default()
        };
        let manifest = RunManifest::new(config, SummaryConfig::default(), 7300 + rep, 25);
        let avg = run_average(&sim.data, &manifest).unwrap();
        aris.push(adjusted_rand_index(&avg.summary.labels, &sim.true_labels).unwrap());
    }
    report(
        "three-category averaged recovery",
        aris.iter().all(|&a| a >= 0.90),
        &format!("summary ARIs = {aris:?}"),
    );
}

/// 10. Wall time per fit grows roughly linearly in N, and a single
///     default-size fit completes well inside 100 seconds.
#[test]
fn runtime_scaling() {
    let fixed_iters = ModelConfig {
        k_max: 20,
        max_iter: 40,
        elbo_tol: 1e-300,
        seed: 9,
        ..ModelConfig::default()
    };
    let mut times = Vec::new();
    for (i, &n) in [1000usize, 2000, 4000].iter().enumerate() {
        let design = SimulationDesign {
            n_obs: n,
            n_vars: 100,
            n_relevant: 100,
            k_true: 10,
            cluster_sizes: vec![n / 10; 10],
            n_categories: 2,
            beta_shape: (1.0, 5.0),
            seed: 0xACCA + i as u64,
        };
        let sim = simulate(&design).unwrap();
        if i == 0 {
            // Warm-up so the first measurement is not penalised.
            fit(&sim.data, &fixed_iters).unwrap();
        }
        let t = std::time::Instant::now();
        fit(&sim.data, &fixed_iters).unwrap();
        times.push(t.elapsed().as_secs_f64());
    }
    let r1 = times[1] / times[0];
    let r2 = times[2] / times[1];
    let ratios_ok = (1.5..=3.0).contains(&r1) && (1.5..=3.0).contains(&r2);

    let design = SimulationDesign::preset("sim2.1", 0xACCB).unwrap();
    let sim = simulate(&design).unwrap();
    let config = ModelConfig {
        k_max: 20,
        seed: 11,
        ..ModelConfig::default()
    };
    let t = std::time::Instant::now();
    fit(&sim.data, &config).unwrap();
    let single = t.elapsed().as_secs_f64();
    report(
        "runtime scaling",
        ratios_ok && single < 100.0,
        &format!(
            "times = {:.2?}s, ratios = [{r1:.2}, {r2:.2}], single fit = {single:.2}s",
            times
        ),
    );
}
