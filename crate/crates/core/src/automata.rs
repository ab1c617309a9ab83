//! Updating mechanisms and the automaton families built on top of them.
//!
//! Memory states, actions and signals are zero-based throughout. A
//! mechanism stores its transition tensor flat in `[m][s][m']` order.

use nalgebra::DMatrix;
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{self, Lottery, SignalModel, ROW_TOLERANCE};

/// A stationary stochastic transition rule plus a deterministic decision rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MechanismRepr", into = "MechanismRepr")]
pub struct UpdatingMechanism {
    m_size: usize,
    alphabet: usize,
    transition: Vec<f64>,
    decision: Vec<usize>,
    initial: usize,
}

#[derive(Serialize, Deserialize)]
struct MechanismRepr {
    m: usize,
    transition: Vec<Vec<Vec<f64>>>,
    decision: Vec<usize>,
    initial: usize,
}

impl TryFrom<MechanismRepr> for UpdatingMechanism {
    type Error = Error;

    fn try_from(repr: MechanismRepr) -> Result<Self> {
        if repr.transition.len() != repr.m {
            return Err(Error::Shape(format!(
                "declared {} memory states but transition has {}",
                repr.m,
                repr.transition.len()
            )));
        }
        UpdatingMechanism::new(repr.transition, repr.decision, repr.initial)
    }
}

impl From<UpdatingMechanism> for MechanismRepr {
    fn from(mech: UpdatingMechanism) -> Self {
        let transition = (0..mech.m_size)
            .map(|m| {
                (0..mech.alphabet)
                    .map(|s| mech.row(m, s).to_vec())
                    .collect()
            })
            .collect();
        MechanismRepr {
            m: mech.m_size,
            transition,
            decision: mech.decision,
            initial: mech.initial,
        }
    }
}

impl UpdatingMechanism {
    /// Builds a mechanism from `transition[m][s][m']`.
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        decision: Vec<usize>,
        initial: usize,
    ) -> Result<Self> {
        let m_size = transition.len();
        let alphabet = transition.first().map(Vec::len).unwrap_or(0);
        if m_size == 0 || alphabet == 0 {
            return Err(Error::Shape(
                "mechanism needs at least one memory state and signal".into(),
            ));
        }
        let mut flat = Vec::with_capacity(m_size * alphabet * m_size);
        for (m, per_signal) in transition.iter().enumerate() {
            if per_signal.len() != alphabet {
                return Err(Error::Shape(format!(
                    "memory state {m} has {} signal rows, expected {alphabet}",
                    per_signal.len()
                )));
            }
            for row in per_signal {
                if row.len() != m_size {
                    return Err(Error::Shape(format!(
                        "memory state {m} has a row of length {}, expected {m_size}",
                        row.len()
                    )));
                }
                flat.extend_from_slice(row);
            }
        }
        Self::from_flat(m_size, alphabet, flat, decision, initial)
    }

    pub(crate) fn from_flat(
        m_size: usize,
        alphabet: usize,
        transition: Vec<f64>,
        decision: Vec<usize>,
        initial: usize,
    ) -> Result<Self> {
        if m_size == 0 || alphabet == 0 {
            return Err(Error::Shape(
                "mechanism needs at least one memory state and one signal".into(),
            ));
        }
        debug_assert_eq!(transition.len(), m_size * alphabet * m_size);
        for (idx, row) in transition.chunks(m_size).enumerate() {
            let (m, s) = (idx / alphabet, idx % alphabet);
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::MalformedRow {
                    row: m,
                    reason: format!("negative or non-finite transition on signal {s}"),
                });
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::MalformedRow {
                    row: m,
                    reason: format!("transition on signal {s} sums to {total}"),
                });
            }
        }
        if decision.len() != m_size {
            return Err(Error::Shape(format!(
                "decision has {} entries for {m_size} memory states",
                decision.len()
            )));
        }
        if initial >= m_size {
            return Err(Error::OutOfRange {
                what: "initial memory state",
                index: initial,
                len: m_size,
            });
        }
        Ok(Self {
            m_size,
            alphabet,
            transition,
            decision,
            initial,
        })
    }

    /// The one-state mechanism that always plays `action`.
    pub fn constant(action: usize, alphabet: usize) -> Self {
        Self {
            m_size: 1,
            alphabet,
            transition: vec![1.0; alphabet],
            decision: vec![action],
            initial: 0,
        }
    }

    pub fn m_size(&self) -> usize {
        self.m_size
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet
    }

    pub fn decision(&self) -> &[usize] {
        &self.decision
    }

    pub fn initial_state(&self) -> usize {
        self.initial
    }

    /// Flat `[m][s][m']` tensor.
    pub fn tensor(&self) -> &[f64] {
        &self.transition
    }

    /// Successor distribution from memory state `m` on signal `s`.
    pub fn row(&self, m: usize, s: usize) -> &[f64] {
        let start = (m * self.alphabet + s) * self.m_size;
        &self.transition[start..start + self.m_size]
    }

    pub fn transition(&self, m: usize, s: usize, next: usize) -> f64 {
        self.row(m, s)[next]
    }

    /// Memory states that play `action`.
    pub fn region(&self, action: usize) -> impl Iterator<Item = usize> + '_ {
        self.decision
            .iter()
            .enumerate()
            .filter(move |(_, a)| **a == action)
            .map(|(m, _)| m)
    }

    /// Same transitions with a different decision rule.
    pub fn with_decisions(&self, decision: Vec<usize>) -> Result<Self> {
        Self::from_flat(
            self.m_size,
            self.alphabet,
            self.transition.clone(),
            decision,
            self.initial,
        )
    }

    pub fn with_initial(&self, initial: usize) -> Result<Self> {
        Self::from_flat(
            self.m_size,
            self.alphabet,
            self.transition.clone(),
            self.decision.clone(),
            initial,
        )
    }

    /// Appends absorbing memory states, playing action 0, up to `m_size`.
    pub fn padded(&self, m_size: usize) -> Result<Self> {
        if m_size < self.m_size {
            return Err(Error::Parameter(format!(
                "cannot pad {} memory states down to {m_size}",
                self.m_size
            )));
        }
        let k = self.alphabet;
        let mut transition = vec![0.0; m_size * k * m_size];
        for m in 0..m_size {
            for s in 0..k {
                let start = (m * k + s) * m_size;
                if m < self.m_size {
                    transition[start..start + self.m_size].copy_from_slice(self.row(m, s));
                } else {
                    transition[start + m] = 1.0;
                }
            }
        }
        let mut decision = self.decision.clone();
        decision.resize(m_size, 0);
        Self::from_flat(m_size, k, transition, decision, self.initial)
    }

    /// Checks decision entries against an action count.
    pub fn check_actions(&self, n_actions: usize) -> Result<()> {
        match self.decision.iter().find(|a| **a >= n_actions) {
            Some(a) => Err(Error::OutOfRange {
                what: "action",
                index: *a,
                len: n_actions,
            }),
            None => Ok(()),
        }
    }
}

/// `Q^w = sum_s Q(s) mass[w][s]`.
pub fn expected_transition_matrix(
    mech: &UpdatingMechanism,
    model: &SignalModel,
    w: usize,
) -> Result<DMatrix<f64>> {
    if mech.alphabet_size() != model.alphabet_size() {
        return Err(Error::Shape(format!(
            "mechanism alphabet {} does not match model alphabet {}",
            mech.alphabet_size(),
            model.alphabet_size()
        )));
    }
    if w >= model.n_states() {
        return Err(Error::OutOfRange {
            what: "state",
            index: w,
            len: model.n_states(),
        });
    }
    let m = mech.m_size();
    let masses = model.row(w);
    Ok(DMatrix::from_fn(m, m, |i, j| {
        masses
            .iter()
            .enumerate()
            .map(|(s, f)| f * mech.transition(i, s, j))
            .sum()
    }))
}

/// One period: act on the current memory state, then transit on `s`.
pub fn step<R: Rng + ?Sized>(
    mech: &UpdatingMechanism,
    m: usize,
    s: usize,
    rng: &mut R,
) -> Result<(usize, usize)> {
    if m >= mech.m_size() {
        return Err(Error::OutOfRange {
            what: "memory state",
            index: m,
            len: mech.m_size(),
        });
    }
    if s >= mech.alphabet_size() {
        return Err(Error::OutOfRange {
            what: "signal",
            index: s,
            len: mech.alphabet_size(),
        });
    }
    let action = mech.decision()[m];
    Ok((action, sample_index(mech.row(m, s), rng)))
}

/// Inverse-CDF draw from a probability row; falls back to the last
/// positive entry when rounding leaves the cumulative sum below one.
pub(crate) fn sample_index<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in row.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Deterministic switch: signal `s` jumps to memory state `targets[s]`, or
/// leaves the state unchanged when the target is `None`.
pub fn build_switch(
    targets: &[Option<usize>],
    decision: Vec<usize>,
    initial: usize,
) -> Result<UpdatingMechanism> {
    let m_size = decision.len();
    let k = targets.len();
    if let Some(t) = targets.iter().flatten().find(|t| **t >= m_size) {
        return Err(Error::OutOfRange {
            what: "memory state",
            index: *t,
            len: m_size,
        });
    }
    let mut transition = vec![0.0; m_size * k * m_size];
    for m in 0..m_size {
        for (s, t) in targets.iter().enumerate() {
            transition[(m * k + s) * m_size + t.unwrap_or(m)] = 1.0;
        }
    }
    UpdatingMechanism::from_flat(m_size, k, transition, decision, initial)
}

/// Birth-death line automaton for two-state models: up on signals favouring
/// state 0, down otherwise (ties go down). The lower half plays action 1.
pub fn build_line(model: &SignalModel, m_size: usize) -> Result<UpdatingMechanism> {
    if model.n_states() != 2 {
        return Err(Error::Shape(format!(
            "line mechanism needs a two-state model, got {}",
            model.n_states()
        )));
    }
    if m_size < 2 {
        return Err(Error::Parameter(format!(
            "line mechanism needs m_size >= 2, got {m_size}"
        )));
    }
    let k = model.alphabet_size();
    let favours_first: Vec<bool> = (0..k)
        .map(|s| model.mass(0, s) > model.mass(1, s))
        .collect();
    let mut transition = vec![0.0; m_size * k * m_size];
    for m in 0..m_size {
        for (s, up) in favours_first.iter().enumerate() {
            let next = if *up {
                (m + 1).min(m_size - 1)
            } else {
                m.saturating_sub(1)
            };
            transition[(m * k + s) * m_size + next] = 1.0;
        }
    }
    let decision = (0..m_size)
        .map(|m| if 2 * m < m_size { 1 } else { 0 })
        .collect();
    UpdatingMechanism::from_flat(m_size, k, transition, decision, 0)
}

/// Memory index of branch `branch`, depth `depth` (1..=lam) in a star.
pub fn star_index(lam: usize, branch: usize, depth: usize) -> usize {
    debug_assert!((1..=lam).contains(&depth));
    1 + branch * lam + (depth - 1)
}

/// `delta * F^w(S^b) / sum_{b' != b} F^w(S^b')` for every state `w` and branch `b`.
pub fn star_ratios(model: &SignalModel, lotteries: &[Lottery], delta: f64) -> Vec<Vec<f64>> {
    (0..model.n_states())
        .map(|w| {
            let masses: Vec<f64> = lotteries.iter().map(|l| model.lottery_mass(w, l)).collect();
            let total: f64 = masses.iter().sum();
            masses
                .iter()
                .map(|own| {
                    let rival = total - own;
                    if rival > 0.0 {
                        delta * own / rival
                    } else {
                        f64::INFINITY
                    }
                })
                .collect()
        })
        .collect()
}

/// Smallest admissible underreaction scale for `lotteries`, doubled.
pub fn suggested_star_delta(model: &SignalModel, lotteries: &[Lottery]) -> f64 {
    let binding = star_ratios(model, lotteries, 1.0)
        .iter()
        .flatten()
        .map(|r| 1.0 / r)
        .fold(1.0, f64::max);
    2.0 * binding
}

pub(crate) fn check_star_inputs(
    model: &SignalModel,
    lam: usize,
    delta: f64,
    lotteries: &[Lottery],
) -> Result<()> {
    let n = model.n_states();
    if lam == 0 {
        return Err(Error::Parameter("star branches need length >= 1".into()));
    }
    if !(delta > 1.0) || !delta.is_finite() {
        return Err(Error::Parameter(format!(
            "star needs delta > 1, got {delta}"
        )));
    }
    if lotteries.len() != n {
        return Err(Error::Shape(format!(
            "{} lotteries for {n} states",
            lotteries.len()
        )));
    }
    if let Some(l) = lotteries
        .iter()
        .find(|l| l.weights.len() != model.alphabet_size())
    {
        return Err(Error::Shape(format!(
            "lottery over {} signals, model alphabet is {}",
            l.weights.len(),
            model.alphabet_size()
        )));
    }
    for s in 0..model.alphabet_size() {
        let labelled: f64 = lotteries.iter().map(|l| l.weights[s]).sum();
        if labelled > 1.0 + ROW_TOLERANCE {
            return Err(Error::Parameter(format!(
                "lotteries label signal {s} with total probability {labelled} > 1"
            )));
        }
    }
    for (w, row) in star_ratios(model, lotteries, delta).iter().enumerate() {
        for (b, r) in row.iter().enumerate() {
            if !(*r > 1.0) {
                return Err(Error::Parameter(format!(
                    "delta = {delta} violates the drift condition at state {w}, branch {b} (ratio {r})"
                )));
            }
        }
    }
    Ok(())
}

/// Star mechanism with `n_states` branches of length `lam` around a centre.
///
/// On signal `s` each branch label `b` is drawn with probability
/// `S^b(s)`: an own-branch label moves one step outward, a rival label moves
/// one step inward with probability `1/delta`, anything else stays. The
/// centre plays action 0 and starts the chain.
pub fn build_star(
    model: &SignalModel,
    lam: usize,
    delta: f64,
    lotteries: &[Lottery],
) -> Result<UpdatingMechanism> {
    build_noisy_star(model, lam, delta, 0.0, lotteries)
}

/// Star mechanism that, with probability `gamma`, ignores the signal and
/// slips to a neighbouring memory state instead.
///
/// Slips: centre to each depth-1 state with `1/N`; depth 1 splits evenly
/// between depth 2 and the centre; interior depths split evenly up and down;
/// the tip always slips inward. With `lam = 1` the tip rule applies, so the
/// single branch state slips back to the centre.
pub fn build_noisy_star(
    model: &SignalModel,
    lam: usize,
    delta: f64,
    gamma: f64,
    lotteries: &[Lottery],
) -> Result<UpdatingMechanism> {
    check_star_inputs(model, lam, delta, lotteries)?;
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Parameter(format!(
            "slip probability must be in [0, 1), got {gamma}"
        )));
    }
    let n = model.n_states();
    let k = model.alphabet_size();
    let m_size = n * lam + 1;
    let mut transition = vec![0.0; m_size * k * m_size];
    let keep = 1.0 - gamma;

    for s in 0..k {
        let labels: Vec<f64> = lotteries.iter().map(|l| l.weights[s]).collect();
        let labelled: f64 = labels.iter().sum();

        let row = &mut transition[s * m_size..(s + 1) * m_size];
        for (b, p) in labels.iter().enumerate() {
            row[star_index(lam, b, 1)] += keep * p + gamma / n as f64;
        }
        row[0] += keep * (1.0 - labelled).max(0.0);

        for b in 0..n {
            let own = labels[b];
            let down = (labelled - own) / delta;
            for depth in 1..=lam {
                let m = star_index(lam, b, depth);
                let inward = if depth == 1 {
                    0
                } else {
                    star_index(lam, b, depth - 1)
                };
                let row = &mut transition[(m * k + s) * m_size..(m * k + s + 1) * m_size];
                let mut moved = down;
                row[inward] += keep * down;
                if depth < lam {
                    row[star_index(lam, b, depth + 1)] += keep * own;
                    moved += own;
                }
                row[m] += keep * (1.0 - moved).max(0.0);

                if gamma > 0.0 {
                    if depth == lam {
                        row[inward] += gamma;
                    } else {
                        row[star_index(lam, b, depth + 1)] += gamma / 2.0;
                        row[inward] += gamma / 2.0;
                    }
                }
            }
        }
    }

    let mut decision = vec![0; m_size];
    for b in 0..n {
        for depth in 1..=lam {
            decision[star_index(lam, b, depth)] = b;
        }
    }
    UpdatingMechanism::from_flat(m_size, k, transition, decision, 0)
}

/// One memory state per action; a signal supporting state `w` moves to
/// memory state `w` with probability `delta`. Returns the matching
/// symmetric signal model with informativeness `info`.
pub fn build_symmetric_full(
    n: usize,
    delta: f64,
    info: f64,
) -> Result<(UpdatingMechanism, SignalModel)> {
    if n < 2 {
        return Err(Error::Parameter(format!(
            "symmetric mechanism needs n >= 2, got {n}"
        )));
    }
    check_symmetric_delta(delta)?;
    let model = signals::symmetric_model(n, info)?;
    let mut transition = vec![0.0; n * n * n];
    for m in 0..n {
        for s in 0..n {
            let row = &mut transition[(m * n + s) * n..(m * n + s + 1) * n];
            row[s] += delta;
            row[m] += 1.0 - delta;
        }
    }
    let mech = UpdatingMechanism::from_flat(n, n, transition, (0..n).collect(), 0)?;
    Ok((mech, model))
}

/// Two memory states per action for the first `n/2` actions; the rest are
/// never played. Action `w` owns memory states `2w` (less confident) and
/// `2w + 1` (more confident). Signals supporting ignored states are ignored.
pub fn build_symmetric_ignorant(
    n: usize,
    delta: f64,
    info: f64,
) -> Result<(UpdatingMechanism, SignalModel)> {
    if n < 4 || !n.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "ignorant symmetric mechanism needs an even n >= 4, got {n}"
        )));
    }
    check_symmetric_delta(delta)?;
    let model = signals::symmetric_model(n, info)?;
    let half = n / 2;
    let less = |w: usize| 2 * w;
    let more = |w: usize| 2 * w + 1;
    let mut transition = vec![0.0; n * n * n];
    for m in 0..n {
        let w = m / 2;
        let confident = m == more(w);
        for s in 0..n {
            let row = &mut transition[(m * n + s) * n..(m * n + s + 1) * n];
            if s >= half {
                row[m] = 1.0;
            } else if s == w {
                row[more(w)] = 1.0;
            } else if confident {
                row[less(w)] += delta;
                row[m] += 1.0 - delta;
            } else {
                row[less(s)] += delta;
                row[m] += 1.0 - delta;
            }
        }
    }
    let decision = (0..n).map(|m| m / 2).collect();
    let mech = UpdatingMechanism::from_flat(n, n, transition, decision, 0)?;
    Ok((mech, model))
}

fn check_symmetric_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!(
            "transition probability must be in (0, 1), got {delta}"
        )));
    }
    Ok(())
}

/// Serializable recipe for a mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MechanismBlueprint {
    /// Plays `action` from a single memory state.
    Constant {
        action: usize,
    },
    Line {
        m_size: usize,
    },
    /// `delta` defaults to [`suggested_star_delta`]; `m_size` pads with
    /// unreachable absorbing states.
    Star {
        lam: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delta: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m_size: Option<usize>,
    },
    NoisyStar {
        lam: usize,
        gamma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delta: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m_size: Option<usize>,
    },
    SymmetricFull {
        n: usize,
        delta: f64,
        info: f64,
    },
    SymmetricIgnorant {
        n: usize,
        delta: f64,
        info: f64,
    },
}

impl MechanismBlueprint {
    /// The signal model a symmetric family carries with it.
    pub fn implied_model(&self) -> Option<Result<SignalModel>> {
        match self {
            Self::SymmetricFull { n, info, .. } | Self::SymmetricIgnorant { n, info, .. } => {
                Some(signals::symmetric_model(*n, *info))
            }
            _ => None,
        }
    }

    pub fn build(&self, model: &SignalModel) -> Result<UpdatingMechanism> {
        match *self {
            Self::Constant { action } => {
                if action >= model.n_states() {
                    return Err(Error::OutOfRange {
                        what: "action",
                        index: action,
                        len: model.n_states(),
                    });
                }
                Ok(UpdatingMechanism::constant(action, model.alphabet_size()))
            }
            Self::Line { m_size } => build_line(model, m_size),
            Self::Star { lam, delta, m_size } => {
                let lotteries = signals::confirmatory_lotteries(model)?;
                let delta = delta.unwrap_or_else(|| suggested_star_delta(model, &lotteries));
                let mech = build_star(model, lam, delta, &lotteries)?;
                pad(mech, m_size)
            }
            Self::NoisyStar {
                lam,
                gamma,
                delta,
                m_size,
            } => {
                let lotteries = signals::confirmatory_lotteries(model)?;
                let delta = delta.unwrap_or_else(|| suggested_star_delta(model, &lotteries));
                let mech = build_noisy_star(model, lam, delta, gamma, &lotteries)?;
                pad(mech, m_size)
            }
            Self::SymmetricFull { n, delta, info } => {
                let (mech, own) = build_symmetric_full(n, delta, info)?;
                check_alphabet(&mech, model, &own)?;
                Ok(mech)
            }
            Self::SymmetricIgnorant { n, delta, info } => {
                let (mech, own) = build_symmetric_ignorant(n, delta, info)?;
                check_alphabet(&mech, model, &own)?;
                Ok(mech)
            }
        }
    }
}

fn pad(mech: UpdatingMechanism, m_size: Option<usize>) -> Result<UpdatingMechanism> {
    match m_size {
        Some(m) => mech.padded(m),
        None => Ok(mech),
    }
}

fn check_alphabet(mech: &UpdatingMechanism, model: &SignalModel, own: &SignalModel) -> Result<()> {
    if model.alphabet_size() != own.alphabet_size() || model.n_states() != own.n_states() {
        return Err(Error::Shape(format!(
            "symmetric family needs {} states over {} signals",
            own.n_states(),
            mech.alphabet_size()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn binary(p: f64, q: f64) -> SignalModel {
        SignalModel::new(vec![vec![p, 1.0 - p], vec![q, 1.0 - q]]).unwrap()
    }

    fn assert_stochastic(mech: &UpdatingMechanism) {
        for m in 0..mech.m_size() {
            for s in 0..mech.alphabet_size() {
                let total: f64 = mech.row(m, s).iter().sum();
                assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
                assert!(mech.row(m, s).iter().all(|p| *p >= 0.0));
            }
        }
    }

    #[test]
    fn signal_blind_kernel_is_its_own_expectation() {
        let kernel = [vec![0.2, 0.8], vec![0.6, 0.4]];
        let transition = kernel
            .iter()
            .map(|row| vec![row.clone(), row.clone()])
            .collect();
        let mech = UpdatingMechanism::new(transition, vec![0, 1], 0).unwrap();
        let model = binary(0.9, 0.3);
        for w in 0..2 {
            let q = expected_transition_matrix(&mech, &model, w).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    assert_abs_diff_eq!(q[(i, j)], kernel[i][j], epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn line_matches_figure() {
        let model = binary(0.7, 0.3);
        let mech = build_line(&model, 4).unwrap();
        assert_eq!(mech.decision(), &[1, 1, 0, 0]);
        assert_eq!(mech.initial_state(), 0);
        // signal 0 favours state 0: up; signal 1: down; saturating ends
        assert_eq!(mech.row(1, 0), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(mech.row(1, 1), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(mech.row(3, 0), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(mech.row(0, 1), &[1.0, 0.0, 0.0, 0.0]);
        let q = expected_transition_matrix(&mech, &model, 0).unwrap();
        let row: Vec<f64> = (0..4).map(|j| q[(1, j)]).collect();
        for (got, want) in row.iter().zip([0.3, 0.0, 0.7, 0.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn line_ties_move_down_and_degenerate_switch() {
        let model = SignalModel::new(vec![vec![0.5, 0.2, 0.3], vec![0.2, 0.5, 0.3]]).unwrap();
        let mech = build_line(&model, 2).unwrap();
        assert_eq!(mech.row(1, 2), &[1.0, 0.0]);
        assert_eq!(mech.row(0, 0), &[0.0, 1.0]);
        assert_eq!(mech.decision(), &[1, 0]);
        assert!(build_line(&signals::alternating_family(3).unwrap(), 4).is_err());
    }

    #[test]
    fn star_tip_down_move() {
        let model = binary(0.8, 0.2);
        let lotteries = signals::confirmatory_lotteries(&model).unwrap();
        let mech = build_star(&model, 1, 5.0, &lotteries).unwrap();
        assert_eq!(mech.m_size(), 3);
        assert_stochastic(&mech);
        let tip = star_index(1, 0, 1);
        assert_abs_diff_eq!(mech.transition(tip, 1, 0), 0.16, epsilon = 1e-12);
        assert_eq!(mech.decision(), &[0, 0, 1]);
    }

    #[test]
    fn star_rejects_small_delta() {
        let model = binary(0.8, 0.2);
        let lotteries = signals::confirmatory_lotteries(&model).unwrap();
        // binding ratio: F^0(S^1) / F^0(S^0) = 0.32 / 0.68; delta 1.2 fails at (0, 1)
        let err = build_star(&model, 3, 1.2, &lotteries).unwrap_err();
        match err {
            Error::Parameter(msg) => assert!(msg.contains("state 0, branch 1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        let suggested = suggested_star_delta(&model, &lotteries);
        assert_abs_diff_eq!(suggested, 2.0 * 0.68 / 0.32, epsilon = 1e-12);
        assert!(build_star(&model, 3, suggested, &lotteries).is_ok());
    }

    #[test]
    fn noisy_star_with_zero_slip_is_the_star() {
        let model = signals::alternating_family(3).unwrap();
        let lotteries = signals::confirmatory_lotteries(&model).unwrap();
        let delta = suggested_star_delta(&model, &lotteries);
        let star = build_star(&model, 4, delta, &lotteries).unwrap();
        let noisy = build_noisy_star(&model, 4, delta, 0.0, &lotteries).unwrap();
        assert_eq!(star.tensor(), noisy.tensor());
    }

    #[test]
    fn noisy_star_centre_slips() {
        let model = binary(0.8, 0.2);
        let lotteries = signals::confirmatory_lotteries(&model).unwrap();
        let star = build_star(&model, 1, 5.0, &lotteries).unwrap();
        let noisy = build_noisy_star(&model, 1, 5.0, 0.5, &lotteries).unwrap();
        assert_stochastic(&noisy);
        for s in 0..2 {
            for b in 0..2 {
                let m = star_index(1, b, 1);
                assert_abs_diff_eq!(
                    noisy.transition(0, s, m),
                    0.25 + 0.5 * star.transition(0, s, m),
                    epsilon = 1e-15
                );
            }
        }
        assert!(build_noisy_star(&model, 1, 5.0, 1.0, &lotteries).is_err());
    }

    #[test]
    fn noisy_star_rows_sum_to_one() {
        let model = signals::alternating_family(2).unwrap();
        let lotteries = signals::confirmatory_lotteries(&model).unwrap();
        let delta = suggested_star_delta(&model, &lotteries);
        for gamma in [0.0, 0.1, 0.5, 0.9, 0.999] {
            for lam in [1, 2, 3, 6] {
                assert_stochastic(
                    &build_noisy_star(&model, lam, delta, gamma, &lotteries).unwrap(),
                );
            }
        }
    }

    #[test]
    fn symmetric_full_matches_figure() {
        let (mech, model) = build_symmetric_full(4, 0.3, 2.0).unwrap();
        assert_eq!(model.n_states(), 4);
        assert_eq!(mech.decision(), &[0, 1, 2, 3]);
        for m in 0..4 {
            for s in 0..4 {
                for next in 0..4 {
                    let want = if s == m && next == m {
                        1.0
                    } else if next == s {
                        0.3
                    } else if next == m {
                        0.7
                    } else {
                        0.0
                    };
                    assert_abs_diff_eq!(mech.transition(m, s, next), want, epsilon = 1e-15);
                }
            }
        }
        assert!(build_symmetric_full(1, 0.3, 2.0).is_err());
    }

    #[test]
    fn symmetric_ignorant_matches_figure() {
        let (mech, _) = build_symmetric_ignorant(4, 0.25, 3.0).unwrap();
        assert_stochastic(&mech);
        assert_eq!(mech.decision(), &[0, 0, 1, 1]);
        // more confident state of action 0 on a rival signal
        assert_eq!(mech.row(1, 1), &[0.25, 0.75, 0.0, 0.0]);
        assert_eq!(mech.row(1, 0), &[0.0, 1.0, 0.0, 0.0]);
        // less confident state of action 0
        assert_eq!(mech.row(0, 0), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(mech.row(0, 1), &[0.75, 0.0, 0.25, 0.0]);
        // ignored signals never move
        for m in 0..4 {
            for s in 2..4 {
                assert_eq!(mech.transition(m, s, m), 1.0);
            }
        }
        assert!(build_symmetric_ignorant(5, 0.25, 3.0).is_err());
    }

    #[test]
    fn step_follows_deterministic_rows() {
        let model = binary(0.7, 0.3);
        let mech = build_line(&model, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(step(&mech, 1, 0, &mut rng).unwrap(), (1, 2));
        }
        assert!(step(&mech, 4, 0, &mut rng).is_err());
        assert!(step(&mech, 0, 2, &mut rng).is_err());
    }

    #[test]
    fn step_frequencies_match_row() {
        let model = binary(0.8, 0.2);
        let lotteries = signals::confirmatory_lotteries(&model).unwrap();
        let mech = build_noisy_star(&model, 3, 5.0, 0.3, &lotteries).unwrap();
        let (m, s) = (star_index(3, 0, 2), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mut counts = vec![0usize; mech.m_size()];
        for _ in 0..draws {
            counts[step(&mech, m, s, &mut rng).unwrap().1] += 1;
        }
        for (c, p) in counts.iter().zip(mech.row(m, s)) {
            assert!((*c as f64 / draws as f64 - p).abs() < 0.01);
        }
    }

    #[test]
    fn blueprint_round_trip_is_bitwise() {
        let model = signals::alternating_family(3).unwrap();
        let blueprints = vec![
            MechanismBlueprint::Star {
                lam: 5,
                delta: None,
                m_size: Some(20),
            },
            MechanismBlueprint::NoisyStar {
                lam: 3,
                gamma: 0.4,
                delta: Some(7.5),
                m_size: None,
            },
        ];
        for bp in blueprints {
            let json = serde_json::to_string(&bp).unwrap();
            let back: MechanismBlueprint = serde_json::from_str(&json).unwrap();
            let a = bp.build(&model).unwrap();
            let b = back.build(&model).unwrap();
            assert!(a
                .tensor()
                .iter()
                .zip(b.tensor())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let bp: MechanismBlueprint =
            serde_json::from_str(r#"{"family":"symmetric_ignorant","n":6,"delta":0.1,"info":2.0}"#)
                .unwrap();
        let model = bp.implied_model().unwrap().unwrap();
        assert_eq!(bp.build(&model).unwrap().m_size(), 6);
    }

    #[test]
    fn mechanism_json_round_trip() {
        let mech = build_line(&binary(0.7, 0.3), 3).unwrap();
        let json = serde_json::to_value(&mech).unwrap();
        assert_eq!(json["m"], 3);
        assert_eq!(json["initial"], 0);
        let back: UpdatingMechanism = serde_json::from_value(json).unwrap();
        assert_eq!(back, mech);
    }

    #[test]
    fn padding_adds_absorbing_states() {
        let model = signals::alternating_family(3).unwrap();
        let lotteries = signals::confirmatory_lotteries(&model).unwrap();
        let delta = suggested_star_delta(&model, &lotteries);
        let mech = build_star(&model, 5, delta, &lotteries)
            .unwrap()
            .padded(20)
            .unwrap();
        assert_eq!(mech.m_size(), 20);
        for m in 16..20 {
            for s in 0..model.alphabet_size() {
                assert_eq!(mech.transition(m, s, m), 1.0);
            }
        }
        for m in 0..16 {
            for s in 0..model.alphabet_size() {
                assert!(mech.row(m, s)[16..].iter().all(|p| *p == 0.0));
            }
        }
    }
}
