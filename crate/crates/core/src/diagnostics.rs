//! Likelihood ratios, spreads, ignorance and the closed-form benchmarks.

use serde::{Deserialize, Serialize};

use crate::automata::{build_switch, check_star_inputs, star_ratios, UpdatingMechanism};
use crate::chain::{occupancy_profile, Problem, StationaryProfile};
use crate::error::{Error, Result};
use crate::signals::{sup_likelihood_ratio, sup_ratio_model, Lottery, SignalModel};

/// Occupancy mass at or below which an action counts as never played.
pub const IGNORANCE_TOLERANCE: f64 = 1e-9;

/// Default cut-off on `N/M` below which a world counts as small.
pub const WORLD_THRESHOLD: f64 = 0.1;

/// `ratios[w][w2][m] = mu^w_m / mu^w2_m`. A zero denominator gives
/// `+inf`, or `NaN` when the numerator is zero too.
pub fn likelihood_ratio_matrix(profile: &StationaryProfile) -> Vec<Vec<Vec<f64>>> {
    let occ = &profile.occupancy;
    occ.iter()
        .map(|a| {
            occ.iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| ratio(*x, *y)).collect())
                .collect()
        })
        .collect()
}

fn ratio(x: f64, y: f64) -> f64 {
    if y > 0.0 {
        x / y
    } else if x > 0.0 {
        f64::INFINITY
    } else {
        f64::NAN
    }
}

/// `max_{m in M^w} (mu^w_m / mu^w2_m) / min_{m in M^w2} (mu^w_m / mu^w2_m)`.
///
/// Memory states empty under both states are skipped.
pub fn spread(profile: &StationaryProfile, decision: &[usize], w: usize, w2: usize) -> Result<f64> {
    let n = profile.n_states();
    for x in [w, w2] {
        if x >= n {
            return Err(Error::OutOfRange {
                what: "state",
                index: x,
                len: n,
            });
        }
    }
    if w == w2 {
        return Err(Error::DegeneratePair(w, w2));
    }
    let ratios = |action: usize| {
        decision
            .iter()
            .enumerate()
            .filter(move |(_, a)| **a == action)
            .map(|(m, _)| ratio(profile.occupancy[w][m], profile.occupancy[w2][m]))
    };
    for a in [w, w2] {
        if ratios(a).next().is_none() {
            return Err(Error::EmptyDecisionRegion(a));
        }
    }
    let top = ratios(w).filter(|r| !r.is_nan()).fold(f64::NAN, f64::max);
    let bottom = ratios(w2).filter(|r| !r.is_nan()).fold(f64::NAN, f64::min);
    if top.is_nan() || bottom.is_nan() {
        return Err(Error::Parameter(format!(
            "no occupied memory state in the decision region of state {}",
            if top.is_nan() { w } else { w2 }
        )));
    }
    Ok(top / bottom)
}

/// `(lbar^{w w2} lbar^{w2 w})^(m_size - 1)`.
pub fn spread_upper_bound(model: &SignalModel, m_size: usize, w: usize, w2: usize) -> Result<f64> {
    if m_size == 0 {
        return Err(Error::Parameter("need at least one memory state".into()));
    }
    let l = sup_likelihood_ratio(model, w, w2)? * sup_likelihood_ratio(model, w2, w)?;
    Ok(l.powi(m_size as i32 - 1))
}

/// Smallest mistake probability in state 2 given correct-action probability
/// `accuracy` in state 1 and a spread cap `spread_cap`.
pub fn tradeoff_floor(spread_cap: f64, accuracy: f64) -> Result<f64> {
    if !(spread_cap >= 1.0) {
        return Err(Error::Parameter(format!(
            "spread cap must be >= 1, got {spread_cap}"
        )));
    }
    if !(accuracy > 0.0 && accuracy < 1.0) {
        return Err(Error::Parameter(format!(
            "accuracy must be in (0, 1), got {accuracy}"
        )));
    }
    if spread_cap.is_infinite() {
        return Ok(0.0);
    }
    Ok(accuracy / (accuracy + spread_cap * (1.0 - accuracy)))
}

/// Lower bound on the loss of any two-state, two-action mechanism whose
/// spread is at most `spread_cap`: `min_e u1 p1 e + u2 p2 g(e)` with `g`
/// from [`tradeoff_floor`].
pub fn two_state_loss_floor(problem: &Problem, spread_cap: f64) -> Result<f64> {
    if problem.n_states() != 2 {
        return Err(Error::Shape(format!(
            "two states needed, got {}",
            problem.n_states()
        )));
    }
    if !(spread_cap >= 1.0) {
        return Err(Error::Parameter(format!(
            "spread cap must be >= 1, got {spread_cap}"
        )));
    }
    let (a, b) = (problem.weight(0), problem.weight(1));
    let k = spread_cap;
    // convex in e, so ternary search suffices
    let f = |e: f64| a * e + b * (1.0 - e) / (1.0 + (k - 1.0) * e);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) <= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    Ok(f(0.5 * (lo + hi)).min(f(0.0)).min(f(1.0)))
}

/// States never played: empty decision region, or region mass at most
/// `tol` under every state of the world.
pub fn detect_ignorance(profile: &StationaryProfile, decision: &[usize], tol: f64) -> Vec<usize> {
    (0..profile.n_states())
        .filter(|&w| {
            !decision.contains(&w)
                || (0..profile.n_states()).all(|w2| profile.action_mass(decision, w2, w) <= tol)
        })
        .collect()
}

/// Sufficient condition under which near-optimal mechanisms with `m_size`
/// memory states ignore state `w`: some rival has
/// `varsigma^(2(m_size-1)) u'p' / (u p) > 1`.
pub fn ignorance_predicate(
    problem: &Problem,
    varsigma: f64,
    m_size: usize,
    w: usize,
) -> Result<bool> {
    if !(varsigma > 0.0 && varsigma < 1.0) {
        return Err(Error::Parameter(format!(
            "varsigma must be in (0, 1), got {varsigma}"
        )));
    }
    if m_size == 0 {
        return Err(Error::Parameter("need at least one memory state".into()));
    }
    if w >= problem.n_states() {
        return Err(Error::OutOfRange {
            what: "state",
            index: w,
            len: problem.n_states(),
        });
    }
    let factor = varsigma.powi(2 * (m_size as i32 - 1));
    let own = problem.weight(w);
    Ok((0..problem.n_states())
        .filter(|&w2| w2 != w)
        .any(|w2| factor * problem.weight(w2) / own > 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldSize {
    Small,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldClass {
    pub size: WorldSize,
    pub ratio: f64,
}

/// Small iff `n / m < threshold`.
pub fn classify_world(n: usize, m: usize, threshold: f64) -> Result<WorldClass> {
    if m < 1 {
        return Err(Error::Parameter("need at least one memory state".into()));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Parameter(format!(
            "threshold must be in (0, 1], got {threshold}"
        )));
    }
    let ratio = n as f64 / m as f64;
    let size = if ratio < threshold {
        WorldSize::Small
    } else {
        WorldSize::Big
    };
    Ok(WorldClass { size, ratio })
}

/// Decision pairs of the best two-state mechanisms in the three-state
/// example world, one-based to match the action labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecisionPair {
    #[serde(rename = "11")]
    P11,
    #[serde(rename = "22")]
    P22,
    #[serde(rename = "33")]
    P33,
    #[serde(rename = "12")]
    P12,
    #[serde(rename = "13")]
    P13,
    #[serde(rename = "23")]
    P23,
}

impl DecisionPair {
    pub fn label(self) -> &'static str {
        match self {
            Self::P11 => "11",
            Self::P22 => "22",
            Self::P33 => "33",
            Self::P12 => "12",
            Self::P13 => "13",
            Self::P23 => "23",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeStateLosses {
    pub l11: f64,
    pub l22: f64,
    pub l33: f64,
    /// Also the loss of the `13` pair.
    pub l12: f64,
    pub l23: f64,
    pub argmin: DecisionPair,
}

fn check_three_state(nu: f64, tau: f64, ups: f64) -> Result<()> {
    if !(0.0..1.0 / 3.0).contains(&nu) {
        return Err(Error::Parameter(format!(
            "nu must be in [0, 1/3), got {nu}"
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("tau must be positive, got {tau}")));
    }
    if !(ups > tau) {
        return Err(Error::Parameter(format!(
            "ups must exceed tau, got ups = {ups}, tau = {tau}"
        )));
    }
    let need = (1.0 / 3.0 + 2.0 * nu) / (1.0 / 3.0 - nu);
    if 1.0 + tau < need {
        return Err(Error::Parameter(format!(
            "1 + tau = {} is below (1/3 + 2 nu) / (1/3 - nu) = {need}",
            1.0 + tau
        )));
    }
    Ok(())
}

/// Minimal losses of two-state mechanisms in the three-state world with
/// priors `(1/3 + 2 nu, 1/3 - nu, 1/3 - nu)`.
///
/// `tau` bounds the 1-2 and 1-3 likelihood ratios and `ups` the 2-3 ratio.
/// It is unrelated to the spread of a mechanism.
pub fn prop4_losses(nu: f64, tau: f64, ups: f64) -> Result<ThreeStateLosses> {
    check_three_state(nu, tau, ups)?;
    let third = 1.0 / 3.0;
    let l11 = 2.0 * third - 2.0 * nu;
    let l22 = 2.0 * third + nu;
    let l12 = third - nu
        + (2.0 * ((1.0 + tau) * (third + 2.0 * nu) * (third - nu)).sqrt() - (2.0 * third - nu))
            / tau;
    let l23 = third
        + 2.0 * nu
        + (2.0 * (third - nu) * (1.0 + ups).sqrt() - (2.0 * third - 2.0 * nu)) / ups;
    let candidates = [
        (DecisionPair::P11, l11),
        (DecisionPair::P22, l22),
        (DecisionPair::P33, l22),
        (DecisionPair::P12, l12),
        (DecisionPair::P13, l12),
        (DecisionPair::P23, l23),
    ];
    let argmin = candidates
        .iter()
        .fold(
            candidates[0],
            |best, c| if c.1 < best.1 { *c } else { best },
        )
        .0;
    Ok(ThreeStateLosses {
        l11,
        l22,
        l33: l22,
        l12,
        l23,
        argmin,
    })
}

/// The three-state world plus two agents: a single-state agent playing
/// action 0, and a two-state switch that jumps to the state playing action
/// 1 on signal 0, to the state playing action 2 on signal 1, and otherwise
/// stays.
pub fn three_state_world(
    nu: f64,
    tau: f64,
    ups: f64,
) -> Result<(Problem, UpdatingMechanism, UpdatingMechanism)> {
    check_three_state(nu, tau, ups)?;
    let model = sup_ratio_model(tau, ups)?;
    let third = 1.0 / 3.0;
    let problem = Problem::new(
        vec![1.0; 3],
        vec![third + 2.0 * nu, third - nu, third - nu],
        model,
    )?;
    let single = UpdatingMechanism::constant(0, 3);
    let switch = build_switch(&[Some(0), Some(1), None], vec![1, 2], 0)?;
    Ok((problem, single, switch))
}

/// Star occupancy under state `w` from detailed balance: relative to the
/// centre, branch `b` depth `k` carries `r_b^k`.
pub fn star_closed_form(
    model: &SignalModel,
    lotteries: &[Lottery],
    lam: usize,
    delta: f64,
    w: usize,
) -> Result<Vec<f64>> {
    check_star_inputs(model, lam, delta, lotteries)?;
    if w >= model.n_states() {
        return Err(Error::OutOfRange {
            what: "state",
            index: w,
            len: model.n_states(),
        });
    }
    let ratios = &star_ratios(model, lotteries, delta)[w];
    let n = model.n_states();
    // work in logs relative to the heaviest state to avoid overflow
    let mut logs = vec![0.0; n * lam + 1];
    for (b, r) in ratios.iter().enumerate() {
        let lr = r.ln();
        for k in 1..=lam {
            logs[1 + b * lam + (k - 1)] = k as f64 * lr;
        }
    }
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|x| x / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetricUtilities {
    pub full: f64,
    pub ignorant: f64,
    pub ignorant_better: bool,
}

/// Utilities of the full and the ignorant symmetric mechanisms as their
/// transition probability vanishes, and whether ignoring half the states
/// pays off.
pub fn symmetric_utilities(n: usize, info: f64) -> Result<SymmetricUtilities> {
    if n < 4 || !n.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "n must be even and at least 4, got {n}"
        )));
    }
    if !(info > 1.0) || !info.is_finite() {
        return Err(Error::Parameter(format!(
            "informativeness must exceed 1, got {info}"
        )));
    }
    let nf = n as f64;
    let i = info;
    let full = i / (nf + i - 1.0);
    let a = i * i * (nf + 2.0 * i - 4.0);
    let ignorant = a / (2.0 * a + (nf - 2.0).powi(2));
    let lhs = (nf + (i - 4.0) / 2.0).powi(2);
    let rhs = (4.0 + i * (2.0 * i - 4.0) * (i + 1.0)) / (i - 1.0) + (i - 4.0).powi(2) / 4.0;
    Ok(SymmetricUtilities {
        full,
        ignorant,
        ignorant_better: lhs > rhs,
    })
}

/// Everything the diagnostics can say about one mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub likelihood_ratios: Vec<Vec<Vec<f64>>>,
    /// `None` on the diagonal and where a decision region is empty or unoccupied.
    pub spreads: Vec<Vec<Option<f64>>>,
    pub spread_bounds: Vec<Vec<f64>>,
    pub ignored_states: Vec<usize>,
    pub world_class: WorldClass,
}

pub fn diagnose(problem: &Problem, mech: &UpdatingMechanism) -> Result<DiagnosticsReport> {
    let profile = occupancy_profile(problem, mech)?;
    diagnose_profile(problem, mech, &profile)
}

pub fn diagnose_profile(
    problem: &Problem,
    mech: &UpdatingMechanism,
    profile: &StationaryProfile,
) -> Result<DiagnosticsReport> {
    let n = problem.n_states();
    let mut spreads = vec![vec![None; n]; n];
    let mut spread_bounds = vec![vec![1.0; n]; n];
    for w in 0..n {
        for w2 in 0..n {
            if w != w2 {
                spreads[w][w2] = spread(profile, mech.decision(), w, w2).ok();
                spread_bounds[w][w2] = spread_upper_bound(problem.model(), mech.m_size(), w, w2)?;
            }
        }
    }
    Ok(DiagnosticsReport {
        likelihood_ratios: likelihood_ratio_matrix(profile),
        spreads,
        spread_bounds,
        ignored_states: detect_ignorance(profile, mech.decision(), IGNORANCE_TOLERANCE),
        world_class: classify_world(n, mech.m_size(), WORLD_THRESHOLD)?,
    })
}
