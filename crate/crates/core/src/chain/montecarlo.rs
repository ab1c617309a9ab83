use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Problem;
use crate::automata::{sample_index, UpdatingMechanism};
use crate::error::{Error, Result};

/// Number of equal step buckets recorded after burn-in.
pub const BUCKETS: usize = 10;

/// Empirical frequencies from one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloRun {
    pub occupancy: Vec<f64>,
    pub action_frequencies: Vec<f64>,
    /// `buckets[b][m]`: occupancy within the `b`-th slice of the tallied steps.
    pub buckets: Vec<Vec<f64>>,
}

impl MonteCarloRun {
    /// CSV rows `bucket,state,frequency`, with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket,state,frequency\n");
        for (b, row) in self.buckets.iter().enumerate() {
            for (m, f) in row.iter().enumerate() {
                out.push_str(&format!("{b},{m},{f}\n"));
            }
        }
        out
    }

    pub fn total_variation(&self, exact: &[f64]) -> f64 {
        0.5 * self
            .occupancy
            .iter()
            .zip(exact)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Simulates the act/observe/transit loop under state `w` and tallies the
/// memory states visited after `burn_in` steps.
pub fn monte_carlo_occupancy(
    problem: &Problem,
    mech: &UpdatingMechanism,
    w: usize,
    steps: usize,
    burn_in: usize,
    seed: u64,
) -> Result<MonteCarloRun> {
    problem.check_mechanism(mech)?;
    if w >= problem.n_states() {
        return Err(Error::OutOfRange {
            what: "state",
            index: w,
            len: problem.n_states(),
        });
    }
    if steps <= burn_in {
        return Err(Error::Parameter(format!(
            "steps ({steps}) must exceed burn-in ({burn_in})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let row = problem.model().row(w);
    let tallied = steps - burn_in;
    let bucket_len = tallied.div_ceil(BUCKETS);
    let mut counts = vec![0u64; mech.m_size()];
    let mut bucket_counts = vec![vec![0u64; mech.m_size()]; tallied.div_ceil(bucket_len)];
    let mut m = mech.initial_state();
    for t in 0..steps {
        if t >= burn_in {
            let k = t - burn_in;
            counts[m] += 1;
            bucket_counts[k / bucket_len][m] += 1;
        }
        let s = sample_index(row, &mut rng);
        m = sample_index(mech.row(m, s), &mut rng);
    }
    let occupancy: Vec<f64> = counts.iter().map(|c| *c as f64 / tallied as f64).collect();
    let mut action_frequencies = vec![0.0; problem.n_states()];
    for (m, f) in occupancy.iter().enumerate() {
        action_frequencies[mech.decision()[m]] += f;
    }
    let buckets = bucket_counts
        .into_iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            row.into_iter().map(|c| c as f64 / total as f64).collect()
        })
        .collect();
    Ok(MonteCarloRun {
        occupancy,
        action_frequencies,
        buckets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::build_line;
    use crate::chain::occupancy_profile;
    use crate::signals::SignalModel;

    fn fig2() -> (Problem, UpdatingMechanism) {
        let model = SignalModel::new(vec![vec![0.7, 0.3], vec![0.3, 0.7]]).unwrap();
        let mech = build_line(&model, 4).unwrap();
        (Problem::uniform(model), mech)
    }

    #[test]
    fn single_state_is_exact() {
        let (problem, _) = fig2();
        let mech = UpdatingMechanism::constant(1, 2);
        let run = monte_carlo_occupancy(&problem, &mech, 0, 1000, 0, 3).unwrap();
        assert_eq!(run.occupancy, vec![1.0]);
        assert_eq!(run.action_frequencies, vec![0.0, 1.0]);
    }

    #[test]
    fn close_to_exact_and_reproducible() {
        let (problem, mech) = fig2();
        let exact = occupancy_profile(&problem, &mech).unwrap();
        let a = monte_carlo_occupancy(&problem, &mech, 0, 200_000, 1000, 11).unwrap();
        let b = monte_carlo_occupancy(&problem, &mech, 0, 200_000, 1000, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.total_variation(&exact.occupancy[0]) < 0.02);
        assert_eq!(a.buckets.len(), BUCKETS);
        assert!(a.to_csv().starts_with("bucket,state,frequency\n0,0,"));
    }

    #[test]
    fn absorber_keeps_all_mass() {
        let model = SignalModel::new(vec![vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap();
        let stay = vec![
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
        ];
        let mech = UpdatingMechanism::new(stay, vec![0, 1], 1).unwrap();
        let run = monte_carlo_occupancy(&Problem::uniform(model), &mech, 0, 500, 10, 0).unwrap();
        assert_eq!(run.occupancy, vec![0.0, 1.0]);
    }

    #[test]
    fn rejects_short_runs() {
        let (problem, mech) = fig2();
        assert!(monte_carlo_occupancy(&problem, &mech, 0, 10, 10, 0).is_err());
    }
}
