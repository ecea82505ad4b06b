//! Coordinate-ascent variational inference for the overfitted categorical
//! mixture, with optional feature-saliency variable selection.
//!
//! One fit cycles E step -> pi update -> phi update -> (gamma, delta update)
//! and evaluates the evidence lower bound after every cycle. All Dirichlet
//! log-expectations use the digamma function; responsibilities are normalised
//! in the log domain with max-subtraction.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::data::CategoricalDataset;
use crate::error::{Error, Result};
use crate::kmodes::init_kmodes;

/// Priors and convergence controls for one fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Overfitted cluster cap K.
    pub k_max: usize,
    /// Symmetric Dirichlet weight prior; < 1 empties superfluous components.
    pub alpha0: f64,
    /// Beta hyperparameter for the variable-inclusion probability delta.
    pub a: f64,
    pub variable_selection: bool,
    pub max_iter: usize,
    pub elbo_tol: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k_max: 30,
            alpha0: 0.05,
            a: 2.0,
            variable_selection: false,
            max_iter: 2000,
            elbo_tol: 1e-6,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::Config("k_max must be at least 1".into()));
        }
        if !(self.alpha0 > 0.0) {
            return Err(Error::Config("alpha0 must be positive".into()));
        }
        if !(self.a > 0.0) {
            return Err(Error::Config("a must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.elbo_tol > 0.0) {
            return Err(Error::Config("elbo_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Flat indexing of the ragged (variable, category) axis.
#[derive(Debug, Clone)]
pub struct VarLayout {
    pub offsets: Vec<usize>,
    pub total: usize,
}

impl VarLayout {
    pub fn from_categories(categories: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(categories.len());
        let mut total = 0;
        for &l in categories {
            offsets.push(total);
            total += l;
        }
        VarLayout { offsets, total }
    }
}

/// Null parameters for each variable under the no-clustering assumption,
/// precomputed once per fit.
#[derive(Debug, Clone)]
pub struct NullModel {
    /// phi0[j][l]
    pub phi0: Vec<Vec<f64>>,
    /// ln phi0, flattened with the dataset's [`VarLayout`].
    log_phi0: Vec<f64>,
}

impl NullModel {
    #[inline]
    pub fn log_phi0(&self, layout: &VarLayout, j: usize, l: usize) -> f64 {
        self.log_phi0[layout.offsets[j] + l]
    }
}

/// Posterior-mean estimate of the null category probabilities, under the same
/// symmetric Dirichlet(1/L_j) family as the cluster parameters.
pub fn precompute_null(data: &CategoricalDataset) -> NullModel {
    let n = data.n_obs() as f64;
    let mut phi0 = Vec::with_capacity(data.n_vars());
    let mut log_phi0 = Vec::new();
    for j in 0..data.n_vars() {
        let l_j = data.categories()[j];
        let eps = 1.0 / l_j as f64;
        let counts = data.column_counts(j);
        let denom = l_j as f64 * eps + n;
        let probs: Vec<f64> = counts.iter().map(|&c| (eps + c as f64) / denom).collect();
        log_phi0.extend(probs.iter().map(|p| p.ln()));
        phi0.push(probs);
    }
    NullModel { phi0, log_phi0 }
}

/// All variational parameters for one fit.
#[derive(Debug, Clone)]
pub struct VariationalState {
    pub n_obs: usize,
    pub k: usize,
    pub layout: VarLayout,
    /// Responsibilities r_nk, row-major N x K; rows sum to 1.
    pub resp: Vec<f64>,
    /// ln rho_nk working matrix, row-major N x K.
    pub log_rho: Vec<f64>,
    /// Dirichlet posterior over mixture weights.
    pub alpha_star: Vec<f64>,
    /// Dirichlet posteriors over category probabilities, K x layout.total.
    pub eps_star: Vec<f64>,
    /// Symmetric Dirichlet prior weight per variable (1/L_j), expanded per category.
    pub eps_prior: Vec<f64>,
    /// c_j = E[gamma_j]; identically 1 without variable selection.
    pub c: Vec<f64>,
    /// Log-domain evidence accumulators for the inclusion indicator.
    pub eta1: Vec<f64>,
    pub eta2: Vec<f64>,
    /// Beta posterior parameters for delta_j.
    pub delta_post: Vec<(f64, f64)>,
    pub elbo_trace: Vec<f64>,
    pub iter_count: usize,
}

impl VariationalState {
    /// Hard one-hot responsibilities from initial labels; all variables
    /// initially included (c_j = 1).
    pub fn from_labels(data: &CategoricalDataset, config: &ModelConfig, labels: &[usize]) -> Result<Self> {
        let n = data.n_obs();
        let k = config.k_max;
        if labels.len() != n {
            return Err(Error::Config(format!(
                "expected {} initial labels, got {}",
                n,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&z| z >= k) {
            return Err(Error::Config(format!("initial label {bad} >= k_max {k}")));
        }
        let layout = VarLayout::from_categories(data.categories());
        let mut resp = vec![0.0; n * k];
        for (i, &z) in labels.iter().enumerate() {
            resp[i * k + z] = 1.0;
        }
        let mut eps_prior = vec![0.0; layout.total];
        for (j, &l_j) in data.categories().iter().enumerate() {
            for l in 0..l_j {
                eps_prior[layout.offsets[j] + l] = 1.0 / l_j as f64;
            }
        }
        let p = data.n_vars();
        let a = config.a;
        Ok(VariationalState {
            n_obs: n,
            k,
            resp,
            log_rho: vec![0.0; n * k],
            alpha_star: vec![config.alpha0; k],
            eps_star: vec![0.0; k * layout.total],
            eps_prior,
            c: vec![1.0; p],
            eta1: vec![0.0; p],
            eta2: vec![0.0; p],
            delta_post: vec![(1.0 + a, a); p],
            elbo_trace: Vec::new(),
            iter_count: 0,
            layout,
        })
    }

    /// E[ln pi_k] under the current Dirichlet posterior.
    pub fn expected_log_pi(&self) -> Vec<f64> {
        let total: f64 = self.alpha_star.iter().sum();
        let psi_total = digamma(total);
        self.alpha_star.iter().map(|&a| digamma(a) - psi_total).collect()
    }

    /// E[ln phi_kjl] for every (k, j, l), K x layout.total.
    pub fn expected_log_phi(&self) -> Vec<f64> {
        let t = self.layout.total;
        let mut out = vec![0.0; self.k * t];
        for k in 0..self.k {
            let row = &self.eps_star[k * t..(k + 1) * t];
            let out_row = &mut out[k * t..(k + 1) * t];
            for (j, &off) in self.layout.offsets.iter().enumerate() {
                let l_j = if j + 1 < self.layout.offsets.len() {
                    self.layout.offsets[j + 1] - off
                } else {
                    t - off
                };
                let sum: f64 = row[off..off + l_j].iter().sum();
                let psi_sum = digamma(sum);
                for l in 0..l_j {
                    out_row[off + l] = digamma(row[off + l]) - psi_sum;
                }
            }
        }
        out
    }

    /// Hard assignment: argmax responsibility, lowest index on ties.
    pub fn hard_labels(&self) -> Vec<usize> {
        let mut labels = Vec::with_capacity(self.n_obs);
        for n in 0..self.n_obs {
            let row = &self.resp[n * self.k..(n + 1) * self.k];
            let mut best = 0;
            for (k, &r) in row.iter().enumerate() {
                if r > row[best] {
                    best = k;
                }
            }
            labels.push(best);
        }
        labels
    }
}

/// Variational E step: recompute responsibilities from the current posteriors.
pub fn e_step(
    data: &CategoricalDataset,
    state: &mut VariationalState,
    null: &NullModel,
    config: &ModelConfig,
    iter: usize,
) -> Result<()> {
    let n = state.n_obs;
    let k = state.k;
    let t = state.layout.total;
    let elog_pi = state.expected_log_pi();
    let elog_phi = state.expected_log_phi();
    let offsets = &state.layout.offsets;
    let selection = config.variable_selection;

    for i in 0..n {
        let row = data.row(i);
        // Contribution of the null model; zero when every c_j = 1.
        let mut base = 0.0;
        if selection {
            for (j, &x) in row.iter().enumerate() {
                let cj = state.c[j];
                if cj < 1.0 {
                    base += (1.0 - cj) * null.log_phi0(&state.layout, j, x as usize);
                }
            }
        }
        let log_rho_row = &mut state.log_rho[i * k..(i + 1) * k];
        for (ki, lr) in log_rho_row.iter_mut().enumerate() {
            let phi_row = &elog_phi[ki * t..(ki + 1) * t];
            let mut acc = 0.0;
            if selection {
                for (j, &x) in row.iter().enumerate() {
                    acc += state.c[j] * phi_row[offsets[j] + x as usize];
                }
            } else {
                for (j, &x) in row.iter().enumerate() {
                    acc += phi_row[offsets[j] + x as usize];
                }
            }
            *lr = elog_pi[ki] + base + acc;
        }
        // Softmax with max-subtraction.
        let max = log_rho_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Numerical {
                iter,
                message: format!("non-finite ln rho for observation {i}"),
            });
        }
        let resp_row = &mut state.resp[i * k..(i + 1) * k];
        let mut sum = 0.0;
        for (r, &lr) in resp_row.iter_mut().zip(log_rho_row.iter()) {
            *r = (lr - max).exp();
            sum += *r;
        }
        for r in resp_row.iter_mut() {
            *r /= sum;
        }
    }
    Ok(())
}

/// Update the Dirichlet posterior over mixture weights.
pub fn m_step_pi(state: &mut VariationalState, config: &ModelConfig) {
    let k = state.k;
    let mut sums = vec![0.0; k];
    for n in 0..state.n_obs {
        let row = &state.resp[n * k..(n + 1) * k];
        for (s, &r) in sums.iter_mut().zip(row) {
            *s += r;
        }
    }
    for (a, s) in state.alpha_star.iter_mut().zip(sums) {
        *a = config.alpha0 + s;
    }
}

/// Update the Dirichlet posteriors over category probabilities. Weighted
/// counts are scaled by c_j, so a deselected variable keeps its prior.
pub fn m_step_phi(data: &CategoricalDataset, state: &mut VariationalState) {
    let k = state.k;
    let t = state.layout.total;
    let offsets = &state.layout.offsets;
    let mut counts = vec![0.0f64; k * t];
    for n in 0..state.n_obs {
        let row = data.row(n);
        let resp_row = &state.resp[n * k..(n + 1) * k];
        for (ki, &r) in resp_row.iter().enumerate() {
            let count_row = &mut counts[ki * t..(ki + 1) * t];
            for (j, &x) in row.iter().enumerate() {
                count_row[offsets[j] + x as usize] += r;
            }
        }
    }
    for ki in 0..k {
        for (j, &off) in offsets.iter().enumerate() {
            let l_j = data.categories()[j];
            let cj = state.c[j];
            for l in 0..l_j {
                let idx = ki * t + off + l;
                state.eps_star[idx] = state.eps_prior[off + l] + cj * counts[idx];
            }
        }
    }
}

/// Update the inclusion probabilities c_j and the Beta posterior over delta_j.
pub fn m_step_gamma_delta(
    data: &CategoricalDataset,
    state: &mut VariationalState,
    null: &NullModel,
    config: &ModelConfig,
) -> Result<()> {
    if !config.variable_selection {
        return Err(Error::Config(
            "variable-selection update requested but variable_selection is off".into(),
        ));
    }
    let k = state.k;
    let t = state.layout.total;
    let p = data.n_vars();
    let offsets = &state.layout.offsets;
    let elog_phi = state.expected_log_phi();

    // s1[j] = sum_n sum_k r_nk E[ln phi_kj x_nj]
    // s2[j] = sum_n sum_k r_nk ln phi0_j x_nj = sum_n ln phi0_j x_nj (rows sum to 1)
    let mut s1 = vec![0.0f64; p];
    let mut s2 = vec![0.0f64; p];
    for n in 0..state.n_obs {
        let row = data.row(n);
        let resp_row = &state.resp[n * k..(n + 1) * k];
        for (ki, &r) in resp_row.iter().enumerate() {
            let phi_row = &elog_phi[ki * t..(ki + 1) * t];
            for (j, &x) in row.iter().enumerate() {
                s1[j] += r * phi_row[offsets[j] + x as usize];
            }
        }
        for (j, &x) in row.iter().enumerate() {
            s2[j] += null.log_phi0(&state.layout, j, x as usize);
        }
    }

    let a = config.a;
    let psi_norm = digamma(2.0 * a + 1.0);
    for j in 0..p {
        let (d1, d2) = state.delta_post[j];
        let elog_delta = digamma(d1) - psi_norm;
        let elog_one_minus_delta = digamma(d2) - psi_norm;
        let ln_eta1 = s1[j] + elog_delta;
        let ln_eta2 = s2[j] + elog_one_minus_delta;
        state.eta1[j] = ln_eta1;
        state.eta2[j] = ln_eta2;
        // c_j = eta1 / (eta1 + eta2), normalised in the log domain.
        let max = ln_eta1.max(ln_eta2);
        let e1 = (ln_eta1 - max).exp();
        let e2 = (ln_eta2 - max).exp();
        let cj = e1 / (e1 + e2);
        state.c[j] = cj;
        state.delta_post[j] = (cj + a, 1.0 - cj + a);
    }
    Ok(())
}

fn ln_dirichlet_norm(alphas: impl Iterator<Item = f64> + Clone) -> f64 {
    let sum: f64 = alphas.clone().sum();
    ln_gamma(sum) - alphas.map(ln_gamma).sum::<f64>()
}

fn xlnx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Evidence lower bound for the current state. Assembled term by term from the
/// mean-field factorisation; the gamma/delta terms appear only with variable
/// selection since the plain model has no inclusion indicators.
pub fn compute_elbo(
    data: &CategoricalDataset,
    state: &VariationalState,
    null: &NullModel,
    config: &ModelConfig,
) -> Result<f64> {
    let k = state.k;
    let t = state.layout.total;
    let p = data.n_vars();
    let offsets = &state.layout.offsets;
    let elog_pi = state.expected_log_pi();
    let elog_phi = state.expected_log_phi();
    let selection = config.variable_selection;

    // E[ln p(X | Z, Phi, gamma)] and the allocation terms
    // E[ln p(Z | pi)] - E[ln q(Z)].
    let mut likelihood = 0.0;
    let mut allocation = 0.0;
    let mut entropy_z = 0.0;
    for n in 0..state.n_obs {
        let row = data.row(n);
        let resp_row = &state.resp[n * k..(n + 1) * k];
        let mut base = 0.0;
        if selection {
            for (j, &x) in row.iter().enumerate() {
                base += (1.0 - state.c[j]) * null.log_phi0(&state.layout, j, x as usize);
            }
        }
        for (ki, &r) in resp_row.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            let phi_row = &elog_phi[ki * t..(ki + 1) * t];
            let mut acc = 0.0;
            if selection {
                for (j, &x) in row.iter().enumerate() {
                    acc += state.c[j] * phi_row[offsets[j] + x as usize];
                }
            } else {
                for (j, &x) in row.iter().enumerate() {
                    acc += phi_row[offsets[j] + x as usize];
                }
            }
            likelihood += r * (acc + base);
            allocation += r * elog_pi[ki];
            entropy_z -= xlnx(r);
        }
    }

    // ln p(pi) - ln q(pi) under expectation.
    let prior_pi = ln_dirichlet_norm(std::iter::repeat(config.alpha0).take(k))
        + (config.alpha0 - 1.0) * elog_pi.iter().sum::<f64>();
    let q_pi = ln_dirichlet_norm(state.alpha_star.iter().cloned())
        + state
            .alpha_star
            .iter()
            .zip(&elog_pi)
            .map(|(&a, &e)| (a - 1.0) * e)
            .sum::<f64>();

    // ln p(Phi) - ln q(Phi) under expectation.
    let mut phi_terms = 0.0;
    for ki in 0..k {
        for (j, &off) in offsets.iter().enumerate() {
            let l_j = data.categories()[j];
            let prior = &state.eps_prior[off..off + l_j];
            let post = &state.eps_star[ki * t + off..ki * t + off + l_j];
            let elog = &elog_phi[ki * t + off..ki * t + off + l_j];
            phi_terms += ln_dirichlet_norm(prior.iter().cloned())
                - ln_dirichlet_norm(post.iter().cloned());
            for l in 0..l_j {
                phi_terms += (prior[l] - post[l]) * elog[l];
            }
        }
    }

    let mut selection_terms = 0.0;
    if selection {
        let a = config.a;
        let psi_norm = digamma(2.0 * a + 1.0);
        let ln_beta_prior = ln_gamma(2.0 * a) - 2.0 * ln_gamma(a);
        for j in 0..p {
            let cj = state.c[j];
            let (d1, d2) = state.delta_post[j];
            let elog_delta = digamma(d1) - psi_norm;
            let elog_1m_delta = digamma(d2) - psi_norm;
            // E[ln p(gamma | delta)] - E[ln q(gamma)]
            selection_terms += cj * elog_delta + (1.0 - cj) * elog_1m_delta;
            selection_terms -= xlnx(cj) + xlnx(1.0 - cj);
            // E[ln p(delta)] - E[ln q(delta)]
            let ln_beta_q = ln_gamma(d1 + d2) - ln_gamma(d1) - ln_gamma(d2);
            selection_terms += ln_beta_prior + (a - 1.0) * (elog_delta + elog_1m_delta);
            selection_terms -= ln_beta_q + (d1 - 1.0) * elog_delta + (d2 - 1.0) * elog_1m_delta;
        }
    }

    let named_terms = [
        ("likelihood", likelihood),
        ("allocation", allocation),
        ("entropy_z", entropy_z),
        ("prior_pi", prior_pi),
        ("q_pi", q_pi),
        ("phi", phi_terms),
        ("selection", selection_terms),
    ];
    for (name, value) in named_terms {
        if !value.is_finite() {
            return Err(Error::Numerical {
                iter: state.iter_count,
                message: format!("non-finite ELBO term {name:?}"),
            });
        }
    }

    Ok(likelihood + allocation + entropy_z + prior_pi - q_pi + phi_terms + selection_terms)
}

/// Hard labels, diagnostics and the full variational state from one fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub labels: Vec<usize>,
    pub state: VariationalState,
    pub elbo: f64,
    pub n_nonempty: usize,
    pub selected_c: Vec<f64>,
    pub config: ModelConfig,
    pub converged: bool,
    pub wall_time: f64,
}

/// Serialisable subset of a [`FitResult`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub config: ModelConfig,
    pub labels: Vec<usize>,
    pub elbo: f64,
    pub elbo_trace: Vec<f64>,
    pub c: Vec<f64>,
    pub n_nonempty: usize,
    pub converged: bool,
    pub wall_time: f64,
}

impl FitResult {
    pub fn to_record(&self) -> FitRecord {
        FitRecord {
            config: self.config.clone(),
            labels: self.labels.clone(),
            elbo: self.elbo,
            elbo_trace: self.state.elbo_trace.clone(),
            c: self.selected_c.clone(),
            n_nonempty: self.n_nonempty,
            converged: self.converged,
            wall_time: self.wall_time,
        }
    }
}

/// Train the model: k-modes initialisation, then CAVI until the ELBO change
/// drops below tolerance or `max_iter` is reached. Hitting `max_iter` is not
/// an error; the result is flagged unconverged.
pub fn fit(data: &CategoricalDataset, config: &ModelConfig) -> Result<FitResult> {
    config.validate()?;
    let init = init_kmodes(data, config.k_max.min(data.n_obs()), config.seed)?;
    fit_with_init(data, config, &init)
}

/// As [`fit`], but starting from caller-provided hard labels.
pub fn fit_with_init(data: &CategoricalDataset, config: &ModelConfig, init_labels: &[usize]) -> Result<FitResult> {
    config.validate()?;
    let start = std::time::Instant::now();
    let null = precompute_null(data);
    let mut state = VariationalState::from_labels(data, config, init_labels)?;

    // Bootstrap the posteriors from the hard initial responsibilities.
    m_step_pi(&mut state, config);
    m_step_phi(data, &mut state);

    let mut converged = false;
    for iter in 1..=config.max_iter {
        state.iter_count = iter;
        e_step(data, &mut state, &null, config, iter)?;
        m_step_pi(&mut state, config);
        m_step_phi(data, &mut state);
        if config.variable_selection {
            m_step_gamma_delta(data, &mut state, &null, config)?;
        }
        let elbo = compute_elbo(data, &state, &null, config)?;
        let done = state
            .elbo_trace
            .last()
            .is_some_and(|prev| (elbo - prev).abs() < config.elbo_tol);
        state.elbo_trace.push(elbo);
        if done {
            converged = true;
            break;
        }
    }

    let labels = state.hard_labels();
    let n_nonempty = labels.iter().collect::<std::collections::HashSet<_>>().len();
    let elbo = *state.elbo_trace.last().unwrap();
    let selected_c = state.c.clone();
    Ok(FitResult {
        labels,
        elbo,
        n_nonempty,
        selected_c,
        config: config.clone(),
        converged,
        wall_time: start.elapsed().as_secs_f64(),
        state,
    })
}
