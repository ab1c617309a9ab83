//! Brute-force and annealed search for low-loss mechanisms.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::automata::UpdatingMechanism;
use crate::chain::{loss_from_profile, occupancy_profile, optimal_decisions, Problem};
use crate::error::{Error, Result};

/// Default cap on the enumeration count `M^(M K) N^M`.
pub const DEFAULT_BUDGET: u128 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub m_size: usize,
    pub restarts: usize,
    pub iterations: usize,
    /// Largest blend weight of a random row perturbation.
    pub step_scale: f64,
    pub initial_temperature: f64,
    pub decay: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            m_size: 2,
            restarts: 8,
            iterations: 5000,
            step_scale: 0.5,
            initial_temperature: 0.1,
            decay: 0.995,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_size == 0 || self.restarts == 0 || self.iterations == 0 {
            return Err(Error::Parameter(
                "memory size, restarts and iterations must all be at least 1".into(),
            ));
        }
        if !(self.step_scale > 0.0 && self.step_scale <= 1.0) {
            return Err(Error::Parameter(format!(
                "step scale must be in (0, 1], got {}",
                self.step_scale
            )));
        }
        if !(self.initial_temperature >= 0.0) || !self.initial_temperature.is_finite() {
            return Err(Error::Parameter(format!(
                "initial temperature must be non-negative, got {}",
                self.initial_temperature
            )));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Parameter(format!(
                "decay must be in (0, 1), got {}",
                self.decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub mechanism: UpdatingMechanism,
    pub loss: f64,
    /// `(iteration, best loss so far)`.
    pub trace: Vec<(usize, f64)>,
    /// Gap to a reference loss, when one is known. Enumeration reports 0,
    /// relative to deterministic mechanisms only.
    pub epsilon_gap: Option<f64>,
}

impl SearchResult {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,best_loss\n");
        for (i, l) in &self.trace {
            out.push_str(&format!("{i},{l}\n"));
        }
        out
    }
}

/// `max(0, loss - reference)`.
pub fn epsilon_gap(result: &SearchResult, reference_loss: f64) -> f64 {
    (result.loss - reference_loss).max(0.0)
}

/// Loss of the transition rule with decisions set by argmax, and the
/// mechanism carrying those decisions.
pub fn optimized_loss(
    problem: &Problem,
    mech: &UpdatingMechanism,
) -> Result<(f64, UpdatingMechanism)> {
    let profile = occupancy_profile(problem, mech)?;
    let decision = optimal_decisions(problem, &profile);
    let loss = loss_from_profile(problem, &decision, &profile);
    Ok((loss, mech.with_decisions(decision)?))
}

/// Number of deterministic mechanisms with `m_size` states: transitions
/// times decision rules.
pub fn enumeration_count(n_states: usize, alphabet: usize, m_size: usize) -> u128 {
    let m = m_size as u128;
    let transitions = m.checked_pow((m_size * alphabet) as u32);
    let decisions = (n_states as u128).checked_pow(m_size as u32);
    match (transitions, decisions) {
        (Some(t), Some(d)) => t.saturating_mul(d),
        _ => u128::MAX,
    }
}

fn deterministic_tensor(index: u128, m_size: usize, alphabet: usize) -> Vec<f64> {
    let mut flat = vec![0.0; m_size * alphabet * m_size];
    let mut rest = index;
    for cell in 0..m_size * alphabet {
        let target = (rest % m_size as u128) as usize;
        rest /= m_size as u128;
        flat[cell * m_size + target] = 1.0;
    }
    flat
}

/// Best mechanism with deterministic transitions and decisions.
///
/// Decisions are set by argmax for each transition table, which is exact.
/// The initial state is fixed at 0: relabelling memory states maps any other
/// start onto it.
pub fn enumerate_deterministic(
    problem: &Problem,
    m_size: usize,
    budget: u128,
) -> Result<SearchResult> {
    if m_size == 0 {
        return Err(Error::Parameter("need at least one memory state".into()));
    }
    let k = problem.model().alphabet_size();
    let count = enumeration_count(problem.n_states(), k, m_size);
    if count > budget {
        return Err(Error::Budget { count, budget });
    }
    let tables = (m_size as u128).pow((m_size * k) as u32);
    let losses: Vec<f64> = (0..tables)
        .into_par_iter()
        .map(|i| {
            let mech = UpdatingMechanism::from_flat(
                m_size,
                k,
                deterministic_tensor(i, m_size, k),
                vec![0; m_size],
                0,
            )?;
            optimized_loss(problem, &mech).map(|(l, _)| l)
        })
        .collect::<Result<_>>()?;
    let mut best = (0usize, f64::INFINITY);
    let mut trace = Vec::new();
    for (i, l) in losses.iter().enumerate() {
        if *l < best.1 {
            best = (i, *l);
            trace.push((i, *l));
        }
    }
    let mech = UpdatingMechanism::from_flat(
        m_size,
        k,
        deterministic_tensor(best.0 as u128, m_size, k),
        vec![0; m_size],
        0,
    )?;
    let (loss, mechanism) = optimized_loss(problem, &mech)?;
    Ok(SearchResult {
        mechanism,
        loss,
        trace,
        epsilon_gap: Some(0.0),
    })
}

fn random_simplex<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..len).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

fn perturb<R: Rng + ?Sized>(flat: &mut [f64], m_size: usize, config: &SearchConfig, rng: &mut R) {
    let rows = flat.len() / m_size;
    let r = rng.random_range(0..rows);
    let row = &mut flat[r * m_size..(r + 1) * m_size];
    if rng.random::<f64>() < 0.3 {
        // snap to a vertex
        row.fill(0.0);
        row[rng.random_range(0..m_size)] = 1.0;
    } else {
        let eta = config.step_scale * rng.random::<f64>();
        let noise = random_simplex(m_size, rng);
        for (p, q) in row.iter_mut().zip(noise) {
            *p = (1.0 - eta) * *p + eta * q;
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
}

struct RestartOutcome {
    loss: f64,
    mechanism: UpdatingMechanism,
    trace: Vec<(usize, f64)>,
}

fn anneal(problem: &Problem, config: &SearchConfig, restart: usize) -> Result<RestartOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(restart as u64);
    let m = config.m_size;
    let k = problem.model().alphabet_size();
    let mut flat = vec![0.0; m * k * m];
    for cell in 0..m * k {
        flat[cell * m + rng.random_range(0..m)] = 1.0;
    }
    let build = |flat: &[f64]| UpdatingMechanism::from_flat(m, k, flat.to_vec(), vec![0; m], 0);
    let (mut current_loss, mut best_mech) = optimized_loss(problem, &build(&flat)?)?;
    let mut best_loss = current_loss;
    let mut trace = Vec::with_capacity(config.iterations + 1);
    trace.push((0, best_loss));
    let mut temperature = config.initial_temperature;
    for it in 1..=config.iterations {
        let mut candidate = flat.clone();
        perturb(&mut candidate, m, config, &mut rng);
        let (loss, mech) = optimized_loss(problem, &build(&candidate)?)?;
        let accept = loss <= current_loss
            || (temperature > 0.0
                && rng.random::<f64>() < (-(loss - current_loss) / temperature).exp());
        if accept {
            flat = candidate;
            current_loss = loss;
            if loss < best_loss {
                best_loss = loss;
                best_mech = mech;
            }
        }
        trace.push((it, best_loss));
        temperature *= config.decay;
    }
    Ok(RestartOutcome {
        loss: best_loss,
        mechanism: best_mech,
        trace,
    })
}

/// Simulated annealing over transition tensors with argmax decisions.
///
/// Restarts run in parallel on separate streams of the seeded generator;
/// the lowest loss wins, earlier restarts winning ties.
pub fn local_search(problem: &Problem, config: &SearchConfig) -> Result<SearchResult> {
    config.validate()?;
    let outcomes: Vec<RestartOutcome> = (0..config.restarts)
        .into_par_iter()
        .map(|r| anneal(problem, config, r))
        .collect::<Result<_>>()?;
    let best = outcomes
        .into_iter()
        .reduce(|a, b| if b.loss < a.loss { b } else { a })
        .expect("at least one restart");
    Ok(SearchResult {
        mechanism: best.mechanism,
        loss: best.loss,
        trace: best.trace,
        epsilon_gap: None,
    })
}
