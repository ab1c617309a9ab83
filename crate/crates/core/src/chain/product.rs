//! Two agents observing the same public signal stream.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stationary::{stationary_detailed, ClassStructure};
use super::Problem;
use crate::automata::UpdatingMechanism;
use crate::error::{Error, Result};

/// Long-run occupancy of pairs `(m_a, m_b)`, indexed `m_a * m_b_size + m_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointOccupancy {
    pub m_a: usize,
    pub m_b: usize,
    pub occupancy: Vec<f64>,
    pub structure: ClassStructure,
    /// Some reached class has period above one, so the occupancy is a
    /// time average rather than a per-period limit.
    pub periodic: bool,
}

impl JointOccupancy {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.occupancy[a * self.m_b + b]
    }

    pub fn marginal_a(&self) -> Vec<f64> {
        (0..self.m_a)
            .map(|a| (0..self.m_b).map(|b| self.get(a, b)).sum())
            .collect()
    }

    pub fn marginal_b(&self) -> Vec<f64> {
        (0..self.m_b)
            .map(|b| (0..self.m_a).map(|a| self.get(a, b)).sum())
            .collect()
    }
}

/// Per-state probability that the two agents play different actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub probability: Vec<f64>,
    pub periodic: Vec<bool>,
}

fn product_matrix(
    problem: &Problem,
    a: &UpdatingMechanism,
    b: &UpdatingMechanism,
    w: usize,
) -> DMatrix<f64> {
    let (ma, mb) = (a.m_size(), b.m_size());
    let n = ma * mb;
    let mut q = DMatrix::zeros(n, n);
    for (s, f) in problem.model().row(w).iter().enumerate() {
        if *f == 0.0 {
            continue;
        }
        for i in 0..ma {
            let ra = a.row(i, s);
            for j in 0..mb {
                let rb = b.row(j, s);
                let from = i * mb + j;
                for (i2, pa) in ra.iter().enumerate().filter(|(_, p)| **p > 0.0) {
                    for (j2, pb) in rb.iter().enumerate().filter(|(_, p)| **p > 0.0) {
                        q[(from, i2 * mb + j2)] += f * pa * pb;
                    }
                }
            }
        }
    }
    q
}

fn check_pair(problem: &Problem, a: &UpdatingMechanism, b: &UpdatingMechanism) -> Result<()> {
    problem.check_mechanism(a)?;
    problem.check_mechanism(b)
}

pub fn joint_occupancy(
    problem: &Problem,
    a: &UpdatingMechanism,
    b: &UpdatingMechanism,
    w: usize,
) -> Result<JointOccupancy> {
    check_pair(problem, a, b)?;
    if w >= problem.n_states() {
        return Err(Error::OutOfRange {
            what: "state",
            index: w,
            len: problem.n_states(),
        });
    }
    let q = product_matrix(problem, a, b, w);
    let start = a.initial_state() * b.m_size() + b.initial_state();
    let st = stationary_detailed(&q, start)?;
    let periodic = st.is_periodic();
    Ok(JointOccupancy {
        m_a: a.m_size(),
        m_b: b.m_size(),
        occupancy: st.occupancy,
        structure: st.structure,
        periodic,
    })
}

pub fn disagreement_probability(
    problem: &Problem,
    a: &UpdatingMechanism,
    b: &UpdatingMechanism,
) -> Result<Disagreement> {
    check_pair(problem, a, b)?;
    let joints: Vec<JointOccupancy> = (0..problem.n_states())
        .into_par_iter()
        .map(|w| joint_occupancy(problem, a, b, w))
        .collect::<Result<_>>()?;
    let mut out = Disagreement {
        probability: Vec::with_capacity(joints.len()),
        periodic: Vec::with_capacity(joints.len()),
    };
    for joint in joints {
        let mut p = 0.0;
        for (i, da) in a.decision().iter().enumerate() {
            for (j, db) in b.decision().iter().enumerate() {
                if da != db {
                    p += joint.get(i, j);
                }
            }
        }
        out.probability.push(p.min(1.0));
        out.periodic.push(joint.periodic);
    }
    Ok(out)
}
