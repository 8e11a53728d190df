//! Gaussian-emission hidden Markov models: likelihood by the scaled forward
//! recursion, Viterbi decoding, Baum-Welch estimation, and the six-number
//! summary used as per-hour features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 200;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `λ = (A, B, π)` with one Gaussian per state.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel {
    n_states: usize,
    /// Row-major `N x N` transition probabilities.
    trans: Vec<f64>,
    init: Vec<f64>,
    emit_mean: Vec<f64>,
    emit_var: Vec<f64>,
}

impl HmmModel {
    pub fn new(trans: Vec<f64>, init: Vec<f64>, emit_mean: Vec<f64>, emit_var: Vec<f64>) -> Result<Self> {
        let n = init.len();
        if n == 0 {
            return invalid("an HMM needs at least one state");
        }
        if trans.len() != n * n || emit_mean.len() != n || emit_var.len() != n {
            return invalid(format!("inconsistent parameter lengths for {n} states"));
        }
        let prob_ok = |p: &f64| p.is_finite() && (0.0..=1.0).contains(p);
        if !trans.iter().chain(&init).all(prob_ok) {
            return invalid("probabilities must lie in [0, 1]");
        }
        for s in 0..n {
            let row: f64 = trans[s * n..(s + 1) * n].iter().sum();
            if (row - 1.0).abs() > 1e-9 {
                return invalid(format!("transition row {s} sums to {row}"));
            }
        }
        let total: f64 = init.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("initial distribution sums to {total}"));
        }
        if !emit_mean.iter().all(|m| m.is_finite()) {
            return invalid("emission means must be finite");
        }
        if !emit_var.iter().all(|v| v.is_finite() && *v > 0.0) {
            return invalid("emission variances must be positive");
        }
        Ok(Self {
            n_states: n,
            trans,
            init,
            emit_mean,
            emit_var,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn trans(&self, from: usize, to: usize) -> f64 {
        self.trans[from * self.n_states + to]
    }

    pub fn init(&self) -> &[f64] {
        &self.init
    }

    pub fn emit_mean(&self) -> &[f64] {
        &self.emit_mean
    }

    pub fn emit_var(&self) -> &[f64] {
        &self.emit_var
    }

    /// Relabels states so emission means are ascending (stable on ties).
    pub fn canonicalize(&mut self) {
        let n = self.n_states;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.emit_mean[a].total_cmp(&self.emit_mean[b]));
        if order.iter().enumerate().all(|(i, &o)| i == o) {
            return;
        }
        let mut trans = vec![0.0; n * n];
        for (a, &oa) in order.iter().enumerate() {
            for (b, &ob) in order.iter().enumerate() {
                trans[a * n + b] = self.trans[oa * n + ob];
            }
        }
        self.trans = trans;
        self.init = order.iter().map(|&o| self.init[o]).collect();
        self.emit_mean = order.iter().map(|&o| self.emit_mean[o]).collect();
        self.emit_var = order.iter().map(|&o| self.emit_var[o]).collect();
    }

    pub fn is_canonical(&self) -> bool {
        self.emit_mean.windows(2).all(|w| w[0] <= w[1])
    }

    fn log_emission(&self, s: usize, o: f64) -> f64 {
        let v = self.emit_var[s];
        let d = o - self.emit_mean[s];
        -0.5 * (LN_2PI + v.ln() + d * d / v)
    }

    /// Per-step emission likelihoods rescaled by their max, plus the log of
    /// that max, so far-out observations do not underflow every state.
    fn scaled_emissions(&self, obs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_states;
        let mut b = vec![0.0; obs.len() * n];
        let mut shift = vec![0.0; obs.len()];
        for (t, &o) in obs.iter().enumerate() {
            let row = &mut b[t * n..(t + 1) * n];
            for (s, slot) in row.iter_mut().enumerate() {
                *slot = self.log_emission(s, o);
            }
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|v| *v = (*v - m).exp());
            shift[t] = m;
        }
        (b, shift)
    }
}

/// Observation sequence `O = (O_0 … O_{T-1})` of non-negative inter-arrival times.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeq {
    values: Vec<f64>,
}

impl ObservationSeq {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return invalid("observation sequence is empty");
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return invalid(format!("observations must be finite and non-negative, got {v}"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

struct ForwardBackward {
    log_likelihood: f64,
    /// Posterior state probabilities, `T x N`.
    gamma: Vec<f64>,
    /// Expected transition counts summed over time, `N x N`.
    xi_sum: Vec<f64>,
}

fn forward_scaled(model: &HmmModel, obs: &[f64]) -> (Vec<f64>, Vec<f64>, f64, Vec<f64>) {
    let n = model.n_states;
    let t_len = obs.len();
    let (b, shift) = model.scaled_emissions(obs);
    let mut alpha = vec![0.0; t_len * n];
    let mut scale = vec![0.0; t_len];
    let mut ll = 0.0;
    for t in 0..t_len {
        for s in 0..n {
            let prior = if t == 0 {
                model.init[s]
            } else {
                (0..n).map(|r| alpha[(t - 1) * n + r] * model.trans[r * n + s]).sum()
            };
            alpha[t * n + s] = prior * b[t * n + s];
        }
        let c: f64 = alpha[t * n..(t + 1) * n].iter().sum();
        scale[t] = c;
        if c > 0.0 {
            alpha[t * n..(t + 1) * n].iter_mut().for_each(|a| *a /= c);
        }
        ll += c.ln() + shift[t];
    }
    (alpha, scale, ll, b)
}

/// `log P(O | λ)`.
pub fn forward_log_likelihood(model: &HmmModel, obs: &ObservationSeq) -> f64 {
    forward_scaled(model, obs.values()).2
}

fn forward_backward(model: &HmmModel, obs: &[f64]) -> ForwardBackward {
    let n = model.n_states;
    let t_len = obs.len();
    let (alpha, scale, ll, b) = forward_scaled(model, obs);
    let mut beta = vec![1.0; t_len * n];
    for t in (0..t_len.saturating_sub(1)).rev() {
        let c = scale[t + 1];
        for s in 0..n {
            let mut acc = 0.0;
            for r in 0..n {
                acc += model.trans[s * n + r] * b[(t + 1) * n + r] * beta[(t + 1) * n + r];
            }
            beta[t * n + s] = if c > 0.0 { acc / c } else { 0.0 };
        }
    }
    let mut gamma = vec![0.0; t_len * n];
    for t in 0..t_len {
        let row = &mut gamma[t * n..(t + 1) * n];
        for s in 0..n {
            row[s] = alpha[t * n + s] * beta[t * n + s];
        }
        let z: f64 = row.iter().sum();
        if z > 0.0 {
            row.iter_mut().for_each(|g| *g /= z);
        }
    }
    let mut xi_sum = vec![0.0; n * n];
    for t in 0..t_len.saturating_sub(1) {
        let c = scale[t + 1];
        if c <= 0.0 {
            continue;
        }
        for s in 0..n {
            for r in 0..n {
                xi_sum[s * n + r] +=
                    alpha[t * n + s] * model.trans[s * n + r] * b[(t + 1) * n + r] * beta[(t + 1) * n + r] / c;
            }
        }
    }
    ForwardBackward {
        log_likelihood: ll,
        gamma,
        xi_sum,
    }
}

/// Most probable state path. Ties go to the lower state index.
pub fn viterbi(model: &HmmModel, obs: &ObservationSeq) -> Vec<usize> {
    let n = model.n_states;
    let o = obs.values();
    let ln = |p: f64| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
    let mut delta: Vec<f64> = (0..n)
        .map(|s| ln(model.init[s]) + model.log_emission(s, o[0]))
        .collect();
    let mut back = vec![0usize; o.len() * n];
    for t in 1..o.len() {
        let mut next = vec![f64::NEG_INFINITY; n];
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (r, d) in delta.iter().enumerate() {
                let v = d + ln(model.trans[r * n + s]);
                if v > best {
                    best = v;
                    arg = r;
                }
            }
            back[t * n + s] = arg;
            next[s] = best + model.log_emission(s, o[t]);
        }
        delta = next;
    }
    let mut state = 0;
    for s in 1..n {
        if delta[s] > delta[state] {
            state = s;
        }
    }
    let mut path = vec![0; o.len()];
    path[o.len() - 1] = state;
    for t in (1..o.len()).rev() {
        state = back[t * n + state];
        path[t - 1] = state;
    }
    path
}

/// Log joint probability `log P(O, Q | λ)` of a given state path.
pub fn path_log_probability(model: &HmmModel, obs: &ObservationSeq, path: &[usize]) -> f64 {
    let o = obs.values();
    assert_eq!(o.len(), path.len(), "path length must match observations");
    let mut lp = model.init[path[0]].ln() + model.log_emission(path[0], o[0]);
    for t in 1..o.len() {
        lp += model.trans(path[t - 1], path[t]).ln() + model.log_emission(path[t], o[t]);
    }
    lp
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmmFit {
    pub model: HmmModel,
    pub log_likelihood: f64,
    /// Log-likelihood of the initial model and after every EM update.
    pub history: Vec<f64>,
    pub iterations: usize,
    /// Set when the sequence was constant and a collapsed model was returned.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaumWelchConfig {
    pub n_states: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BaumWelchConfig {
    fn default() -> Self {
        Self {
            n_states: 2,
            seed: 0,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// `1e-6 x` the sample variance, never below `1e-18`.
pub fn variance_floor(obs: &[f64]) -> f64 {
    1e-6 * population_variance(obs).max(1e-12)
}

fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

fn default_trans(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            t[a * n + b] = match (n, a == b) {
                (1, _) => 1.0,
                (_, true) => 0.9,
                (_, false) => 0.1 / (n - 1) as f64,
            };
        }
    }
    t
}

/// Starting point for EM: equal-count quantile groups of the sorted
/// observations give the means, both variances take the global variance,
/// transitions start at 0.9 self-persistence and `π` is uniform. Means,
/// transitions and `π` are then jittered by up to ±1% from a seeded
/// ChaCha8 stream and renormalized.
pub fn initial_model(obs: &ObservationSeq, n_states: usize, seed: u64) -> Result<HmmModel> {
    let o = obs.values();
    let n = n_states;
    if n == 0 || o.len() < n {
        return invalid(format!("cannot initialize {n} states from {} observations", o.len()));
    }
    let mut sorted = o.to_vec();
    sorted.sort_by(f64::total_cmp);
    let t_len = sorted.len();
    let var = population_variance(o).max(variance_floor(o));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = || 1.0 + rng.random_range(-0.01..=0.01);

    let means: Vec<f64> = (0..n)
        .map(|s| {
            let group = &sorted[s * t_len / n..(s + 1) * t_len / n];
            group.iter().sum::<f64>() / group.len() as f64 * jitter()
        })
        .collect();
    let mut trans = default_trans(n);
    for row in trans.chunks_mut(n) {
        row.iter_mut().for_each(|p| *p *= jitter());
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= z);
    }
    let mut init: Vec<f64> = (0..n).map(|_| jitter() / n as f64).collect();
    let z: f64 = init.iter().sum();
    init.iter_mut().for_each(|p| *p /= z);
    HmmModel::new(trans, init, means, vec![var; n])
}

/// Baum-Welch re-estimation. Requires `T >= 2 N`.
///
/// A constant sequence returns a collapsed model (every state at the constant
/// value with variance at the floor, default transitions, uniform `π`) with
/// `degenerate` set.
pub fn baum_welch(obs: &ObservationSeq, cfg: &BaumWelchConfig) -> Result<HmmFit> {
    let n = cfg.n_states;
    let o = obs.values();
    if n == 0 {
        return invalid("n_states must be at least 1");
    }
    if o.len() < 2 * n {
        return invalid(format!(
            "Baum-Welch with {n} states needs T >= {}, got {}",
            2 * n,
            o.len()
        ));
    }
    if !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return invalid("tol must be positive and max_iter at least 1");
    }
    let floor = variance_floor(o);
    if o.iter().all(|&v| v == o[0]) {
        let model = HmmModel::new(default_trans(n), vec![1.0 / n as f64; n], vec![o[0]; n], vec![floor; n])?;
        let ll = forward_log_likelihood(&model, obs);
        return Ok(HmmFit {
            model,
            log_likelihood: ll,
            history: vec![ll],
            iterations: 0,
            degenerate: true,
        });
    }

    let mut model = initial_model(obs, n, cfg.seed)?;
    let mut fb = forward_backward(&model, o);
    let mut history = vec![fb.log_likelihood];
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        model = m_step(&model, o, &fb, floor);
        let next = forward_backward(&model, o);
        let gain = next.log_likelihood - fb.log_likelihood;
        history.push(next.log_likelihood);
        fb = next;
        if gain < cfg.tol {
            break;
        }
    }
    model.canonicalize();
    Ok(HmmFit {
        model,
        log_likelihood: fb.log_likelihood,
        history,
        iterations,
        degenerate: false,
    })
}

fn m_step(prev: &HmmModel, o: &[f64], fb: &ForwardBackward, floor: f64) -> HmmModel {
    let n = prev.n_states;
    let t_len = o.len();
    let mut m = prev.clone();

    let z: f64 = fb.gamma[..n].iter().sum();
    if z > 0.0 {
        m.init = fb.gamma[..n].iter().map(|g| g / z).collect();
    }
    for s in 0..n {
        let row = &fb.xi_sum[s * n..(s + 1) * n];
        let out: f64 = row.iter().sum();
        if out > f64::MIN_POSITIVE {
            for r in 0..n {
                m.trans[s * n + r] = row[r] / out;
            }
        }
        let weight: f64 = (0..t_len).map(|t| fb.gamma[t * n + s]).sum();
        if weight > f64::MIN_POSITIVE {
            let mean = (0..t_len).map(|t| fb.gamma[t * n + s] * o[t]).sum::<f64>() / weight;
            let var = (0..t_len)
                .map(|t| fb.gamma[t * n + s] * (o[t] - mean).powi(2))
                .sum::<f64>()
                / weight;
            m.emit_mean[s] = mean;
            m.emit_var[s] = var.max(floor);
        }
    }
    m
}

/// `(a00, a11, μ0, μ1, σ0, σ1)` of a two-state model, read in canonical
/// (ascending-mean) state order.
pub fn extract_features(model: &HmmModel) -> Result<[f64; 6]> {
    if model.n_states != 2 {
        return invalid(format!("feature extraction needs 2 states, got {}", model.n_states));
    }
    let mut m = model.clone();
    m.canonicalize();
    Ok([
        m.trans(0, 0),
        m.trans(1, 1),
        m.emit_mean[0],
        m.emit_mean[1],
        m.emit_var[0].sqrt(),
        m.emit_var[1].sqrt(),
    ])
}
