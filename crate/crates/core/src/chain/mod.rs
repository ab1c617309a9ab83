//! Stationary analysis of updating mechanisms under each state of the world.

mod montecarlo;
mod product;
pub mod stationary;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::automata::{expected_transition_matrix, UpdatingMechanism};
use crate::error::{Error, Result};
use crate::signals::SignalModel;

pub use montecarlo::{monte_carlo_occupancy, MonteCarloRun};
pub use product::{disagreement_probability, joint_occupancy, Disagreement, JointOccupancy};
pub use stationary::{recurrent_classes, stationary, ClassStructure};

/// Tolerance on the prior sum.
pub const PRIOR_TOLERANCE: f64 = 1e-12;

/// Utilities, priors and the signal model of an inference problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProblemRepr", into = "ProblemRepr")]
pub struct Problem {
    utilities: Vec<f64>,
    priors: Vec<f64>,
    model: SignalModel,
}

#[derive(Serialize, Deserialize)]
struct ProblemRepr {
    utilities: Vec<f64>,
    priors: Vec<f64>,
    model: SignalModel,
}

impl TryFrom<ProblemRepr> for Problem {
    type Error = Error;
    fn try_from(r: ProblemRepr) -> Result<Self> {
        Problem::new(r.utilities, r.priors, r.model)
    }
}

impl From<Problem> for ProblemRepr {
    fn from(p: Problem) -> Self {
        ProblemRepr {
            utilities: p.utilities,
            priors: p.priors,
            model: p.model,
        }
    }
}

impl Problem {
    pub fn new(utilities: Vec<f64>, priors: Vec<f64>, model: SignalModel) -> Result<Self> {
        let n = model.n_states();
        if utilities.len() != n || priors.len() != n {
            return Err(Error::Shape(format!(
                "{} utilities and {} priors for {n} states",
                utilities.len(),
                priors.len()
            )));
        }
        if let Some(u) = utilities.iter().find(|u| !(**u > 0.0) || !u.is_finite()) {
            return Err(Error::Parameter(format!(
                "utilities must be positive, got {u}"
            )));
        }
        if let Some(p) = priors.iter().find(|p| !(**p > 0.0)) {
            return Err(Error::Parameter(format!(
                "priors must be positive, got {p}"
            )));
        }
        let total: f64 = priors.iter().sum();
        if (total - 1.0).abs() > PRIOR_TOLERANCE {
            return Err(Error::Parameter(format!("priors sum to {total}")));
        }
        Ok(Self {
            utilities,
            priors,
            model,
        })
    }

    /// Unit utilities and a uniform prior.
    pub fn uniform(model: SignalModel) -> Self {
        let n = model.n_states();
        Self {
            utilities: vec![1.0; n],
            priors: vec![1.0 / n as f64; n],
            model,
        }
    }

    pub fn n_states(&self) -> usize {
        self.model.n_states()
    }

    pub fn model(&self) -> &SignalModel {
        &self.model
    }

    pub fn utilities(&self) -> &[f64] {
        &self.utilities
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    /// `u^w p^w`.
    pub fn weight(&self, w: usize) -> f64 {
        self.utilities[w] * self.priors[w]
    }

    /// `sum_w u^w p^w`, the utility of always being right.
    pub fn total_weight(&self) -> f64 {
        (0..self.n_states()).map(|w| self.weight(w)).sum()
    }

    pub fn max_utility(&self) -> f64 {
        self.utilities.iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn min_utility(&self) -> f64 {
        self.utilities.iter().copied().fold(f64::MAX, f64::min)
    }

    pub(crate) fn check_mechanism(&self, mech: &UpdatingMechanism) -> Result<()> {
        if mech.alphabet_size() != self.model.alphabet_size() {
            return Err(Error::Shape(format!(
                "mechanism alphabet {} does not match model alphabet {}",
                mech.alphabet_size(),
                self.model.alphabet_size()
            )));
        }
        mech.check_actions(self.n_states())
    }
}

/// Per-state occupancy of a mechanism's memory states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryProfile {
    /// `occupancy[w][m]`.
    pub occupancy: Vec<Vec<f64>>,
    /// Class structure of `Q^w`, one per state of the world.
    pub structure: Vec<ClassStructure>,
    /// `absorption[w][j]`: probability of ending in closed class `j` of
    /// `structure[w]` from the mechanism's initial state.
    pub absorption: Vec<Vec<f64>>,
}

impl StationaryProfile {
    pub fn n_states(&self) -> usize {
        self.occupancy.len()
    }

    pub fn m_size(&self) -> usize {
        self.occupancy.first().map(Vec::len).unwrap_or(0)
    }

    /// Probability of playing `action` in state `w` under `decision`.
    pub fn action_mass(&self, decision: &[usize], w: usize, action: usize) -> f64 {
        decision
            .iter()
            .zip(&self.occupancy[w])
            .filter(|(a, _)| **a == action)
            .map(|(_, mu)| mu)
            .sum()
    }

    /// Occupancy of states whose action differs from `w`.
    pub fn mistake_mass(&self, decision: &[usize], w: usize) -> f64 {
        decision
            .iter()
            .zip(&self.occupancy[w])
            .filter(|(a, _)| **a != w)
            .map(|(_, mu)| mu)
            .sum()
    }

    /// States of the world under which some reached class is periodic.
    pub fn periodic_states(&self) -> Vec<usize> {
        (0..self.n_states())
            .filter(|&w| {
                self.structure[w]
                    .periods
                    .iter()
                    .zip(&self.absorption[w])
                    .any(|(p, a)| *p > 1 && *a > 0.0)
            })
            .collect()
    }
}

/// Stationary analysis of `mech` under every state of the world.
pub fn occupancy_profile(problem: &Problem, mech: &UpdatingMechanism) -> Result<StationaryProfile> {
    if mech.alphabet_size() != problem.model().alphabet_size() {
        return Err(Error::Shape(format!(
            "mechanism alphabet {} does not match model alphabet {}",
            mech.alphabet_size(),
            problem.model().alphabet_size()
        )));
    }
    let per_state: Vec<stationary::Stationary> = (0..problem.n_states())
        .into_par_iter()
        .map(|w| {
            let q = expected_transition_matrix(mech, problem.model(), w)?;
            stationary::stationary_detailed(&q, mech.initial_state())
        })
        .collect::<Result<_>>()?;
    let mut profile = StationaryProfile {
        occupancy: Vec::with_capacity(per_state.len()),
        structure: Vec::with_capacity(per_state.len()),
        absorption: Vec::with_capacity(per_state.len()),
    };
    for s in per_state {
        profile.occupancy.push(s.occupancy);
        profile.structure.push(s.structure);
        profile.absorption.push(s.absorption);
    }
    Ok(profile)
}

/// Per memory state, the action maximising `u^w p^w mu^w_m`; ties go to
/// the lowest action index.
pub fn optimal_decisions(problem: &Problem, profile: &StationaryProfile) -> Vec<usize> {
    (0..profile.m_size())
        .map(|m| {
            let mut best = (0, f64::NEG_INFINITY);
            for w in 0..problem.n_states() {
                let value = problem.weight(w) * profile.occupancy[w][m];
                if value > best.1 {
                    best = (w, value);
                }
            }
            best.0
        })
        .collect()
}

/// Utility and loss of a mechanism, with the profile they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub utility: f64,
    pub loss: f64,
    pub profile: StationaryProfile,
}

pub fn utility_from_profile(
    problem: &Problem,
    decision: &[usize],
    profile: &StationaryProfile,
) -> f64 {
    (0..problem.n_states())
        .map(|w| problem.weight(w) * profile.action_mass(decision, w, w))
        .sum()
}

/// Loss summed from mistake mass directly, so small losses keep their
/// relative precision.
pub fn loss_from_profile(
    problem: &Problem,
    decision: &[usize],
    profile: &StationaryProfile,
) -> f64 {
    (0..problem.n_states())
        .map(|w| problem.weight(w) * profile.mistake_mass(decision, w))
        .sum()
}

pub fn evaluate(problem: &Problem, mech: &UpdatingMechanism) -> Result<Evaluation> {
    problem.check_mechanism(mech)?;
    let profile = occupancy_profile(problem, mech)?;
    Ok(Evaluation {
        utility: utility_from_profile(problem, mech.decision(), &profile),
        loss: loss_from_profile(problem, mech.decision(), &profile),
        profile,
    })
}

/// `sum_w u^w p^w sum_{m in M^w} mu^w_m`.
pub fn asymptotic_utility(problem: &Problem, mech: &UpdatingMechanism) -> Result<f64> {
    evaluate(problem, mech).map(|e| e.utility)
}

/// `sum_w u^w p^w (1 - sum_{m in M^w} mu^w_m)`.
pub fn utility_loss(problem: &Problem, mech: &UpdatingMechanism) -> Result<f64> {
    evaluate(problem, mech).map(|e| e.loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::{build_line, build_symmetric_full};
    use crate::signals::SignalModel;
    use approx::assert_abs_diff_eq;

    fn binary(p: f64, q: f64) -> SignalModel {
        SignalModel::new(vec![vec![p, 1.0 - p], vec![q, 1.0 - q]]).unwrap()
    }

    #[test]
    fn line_occupancy_is_birth_death() {
        let problem = Problem::uniform(binary(0.7, 0.3));
        let mech = build_line(problem.model(), 4).unwrap();
        let profile = occupancy_profile(&problem, &mech).unwrap();
        // detailed balance: mu_{k+1} / mu_k = 7/3
        let r: f64 = 7.0 / 3.0;
        let norm = 1.0 + r + r * r + r * r * r;
        for k in 0..4 {
            assert_abs_diff_eq!(
                profile.occupancy[0][k],
                r.powi(k as i32) / norm,
                epsilon = 1e-14
            );
        }
        assert_abs_diff_eq!(
            profile.action_mass(mech.decision(), 0, 0),
            49.0 / 58.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn line_decisions_are_optimal() {
        let problem = Problem::uniform(binary(0.7, 0.3));
        let mech = build_line(problem.model(), 4).unwrap();
        let profile = occupancy_profile(&problem, &mech).unwrap();
        assert_eq!(optimal_decisions(&problem, &profile), vec![1, 1, 0, 0]);
    }

    #[test]
    fn optimal_decisions_follow_concentration_and_ties() {
        let problem = Problem::uniform(SignalModel::new(vec![vec![1.0]; 3]).unwrap());
        let profile = StationaryProfile {
            occupancy: vec![
                vec![0.9, 0.05, 0.05],
                vec![0.05, 0.9, 0.05],
                vec![0.05, 0.05, 0.9],
            ],
            structure: vec![],
            absorption: vec![],
        };
        assert_eq!(optimal_decisions(&problem, &profile), vec![0, 1, 2]);
        let flat = StationaryProfile {
            occupancy: vec![vec![0.5, 0.5]; 3],
            structure: vec![],
            absorption: vec![],
        };
        assert_eq!(optimal_decisions(&problem, &flat), vec![0, 0]);
    }

    #[test]
    fn constant_mechanism_losses() {
        let model = SignalModel::new(vec![vec![0.6, 0.4], vec![0.3, 0.7], vec![0.5, 0.5]]).unwrap();
        let problem = Problem::new(vec![1.0, 2.0, 0.5], vec![0.2, 0.3, 0.5], model).unwrap();
        let mech = UpdatingMechanism::constant(0, 2);
        let eval = evaluate(&problem, &mech).unwrap();
        assert_eq!(eval.profile.occupancy, vec![vec![1.0]; 3]);
        assert_abs_diff_eq!(eval.utility, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(eval.loss, 0.6 + 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(
            eval.utility + eval.loss,
            problem.total_weight(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn symmetric_full_utility() {
        let (mech, model) = build_symmetric_full(10, 0.3, 2.0).unwrap();
        let problem = Problem::uniform(model);
        assert_abs_diff_eq!(
            asymptotic_utility(&problem, &mech).unwrap(),
            2.0 / 11.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn star_concentrates_on_the_true_branch() {
        use crate::automata::{build_star, suggested_star_delta};
        use crate::signals::{alternating_family, confirmatory_lotteries};
        let model = alternating_family(3).unwrap();
        let lotteries = confirmatory_lotteries(&model).unwrap();
        let delta = suggested_star_delta(&model, &lotteries);
        let branch = |lam: usize, w: usize, b: usize, profile: &StationaryProfile| -> f64 {
            profile.occupancy[w][1 + b * lam..1 + (b + 1) * lam]
                .iter()
                .sum()
        };
        for lam in [5, 30] {
            let mech = build_star(&model, lam, delta, &lotteries).unwrap();
            let profile = occupancy_profile(&Problem::uniform(model.clone()), &mech).unwrap();
            for w in 0..3 {
                let own = branch(lam, w, w, &profile);
                assert!((0..3)
                    .filter(|b| *b != w)
                    .all(|b| branch(lam, w, b, &profile) < own));
                if lam == 30 {
                    assert!(own > 0.9, "state {w}: own-branch mass {own}");
                }
            }
        }
    }

    #[test]
    fn single_state_occupancy_is_one() {
        let problem = Problem::uniform(binary(0.7, 0.3));
        let profile = occupancy_profile(&problem, &UpdatingMechanism::constant(1, 2)).unwrap();
        assert_eq!(profile.occupancy, vec![vec![1.0], vec![1.0]]);
    }

    #[test]
    fn problem_validation() {
        let model = binary(0.7, 0.3);
        assert!(Problem::new(vec![1.0, 1.0], vec![0.5, 0.6], model.clone()).is_err());
        assert!(Problem::new(vec![1.0, 1.0], vec![1.0, 0.0], model.clone()).is_err());
        assert!(Problem::new(vec![1.0, -1.0], vec![0.5, 0.5], model.clone()).is_err());
        assert!(Problem::new(vec![1.0], vec![1.0], model).is_err());
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let problem = Problem::uniform(binary(0.7, 0.3));
        let mech = UpdatingMechanism::constant(0, 3);
        assert!(matches!(evaluate(&problem, &mech), Err(Error::Shape(_))));
        let mech = UpdatingMechanism::constant(2, 2);
        assert!(matches!(
            evaluate(&problem, &mech),
            Err(Error::OutOfRange { .. })
        ));
    }
}
