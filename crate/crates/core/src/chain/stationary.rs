//! Long-run occupancy of finite Markov chains, reducible or not.
//!
//! Within each closed class the stationary vector comes from
//! Grassmann-Taksar-Heyman state reduction, which is Gaussian elimination
//! on `Q^T - I` arranged so that no subtraction occurs; tiny occupancies
//! keep full relative precision. Classes are mixed by their absorption
//! probabilities from the initial state; transient states get zero mass.

use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance when checking that a matrix is stochastic.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-9;

/// Residual above which a stationary solve is reported as failed.
const RESIDUAL_LIMIT: f64 = 1e-8;

/// Communicating-class decomposition of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStructure {
    /// Closed classes, each sorted, ordered by smallest member.
    pub recurrent: Vec<Vec<usize>>,
    /// States outside every closed class.
    pub transient: Vec<usize>,
    /// Period of each closed class (1 = aperiodic).
    pub periods: Vec<usize>,
}

impl ClassStructure {
    pub fn class_of(&self, state: usize) -> Option<usize> {
        self.recurrent
            .iter()
            .position(|c| c.binary_search(&state).is_ok())
    }
}

/// Occupancy together with the class structure that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stationary {
    pub occupancy: Vec<f64>,
    pub structure: ClassStructure,
    /// Probability of ending in each closed class from the initial state.
    pub absorption: Vec<f64>,
}

impl Stationary {
    /// True when some class reached with positive probability is periodic,
    /// so the occupancy is a time average rather than a per-period limit.
    pub fn is_periodic(&self) -> bool {
        self.structure
            .periods
            .iter()
            .zip(&self.absorption)
            .any(|(p, a)| *p > 1 && *a > 0.0)
    }
}

pub fn check_stochastic(q: &DMatrix<f64>) -> Result<()> {
    if q.nrows() != q.ncols() || q.nrows() == 0 {
        return Err(Error::Shape(format!(
            "transition matrix is {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    for (i, row) in q.row_iter().enumerate() {
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::MalformedRow {
                row: i,
                reason: "negative or non-finite entry".into(),
            });
        }
        let total = row.sum();
        if (total - 1.0).abs() > STOCHASTIC_TOLERANCE {
            return Err(Error::MalformedRow {
                row: i,
                reason: format!("row sums to {total}"),
            });
        }
    }
    Ok(())
}

/// Strongly connected components of the support graph; components with no
/// outgoing edge are the recurrent classes.
pub fn recurrent_classes(q: &DMatrix<f64>) -> Result<ClassStructure> {
    check_stochastic(q)?;
    let n = q.nrows();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, n * 2);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if q[(i, j)] > 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut component = vec![0usize; n];
    let sccs = tarjan_scc(&graph);
    for (c, members) in sccs.iter().enumerate() {
        for node in members {
            component[node.index()] = c;
        }
    }
    let mut recurrent = Vec::new();
    let mut transient = Vec::new();
    for (c, members) in sccs.iter().enumerate() {
        let mut states: Vec<usize> = members.iter().map(|v| v.index()).collect();
        states.sort_unstable();
        let closed = states
            .iter()
            .all(|&i| (0..n).all(|j| q[(i, j)] == 0.0 || component[j] == c));
        if closed {
            recurrent.push(states);
        } else {
            transient.extend(states);
        }
    }
    recurrent.sort_by_key(|c| c[0]);
    transient.sort_unstable();
    let periods = recurrent.iter().map(|c| class_period(q, c)).collect();
    Ok(ClassStructure {
        recurrent,
        transient,
        periods,
    })
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// gcd over in-class edges of `level(u) + 1 - level(v)` from a BFS labelling.
fn class_period(q: &DMatrix<f64>, class: &[usize]) -> usize {
    let mut level = vec![usize::MAX; q.nrows()];
    let mut queue = std::collections::VecDeque::from([class[0]]);
    level[class[0]] = 0;
    while let Some(u) = queue.pop_front() {
        for &v in class {
            if q[(u, v)] > 0.0 && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut period = 0;
    for &u in class {
        for &v in class {
            if q[(u, v)] > 0.0 {
                period = gcd(period, (level[u] + 1).abs_diff(level[v]));
            }
        }
    }
    period.max(1)
}

/// Stationary distribution of the chain restricted to a closed class, by
/// state reduction.
pub fn class_stationary(q: &DMatrix<f64>, class: &[usize]) -> Result<Vec<f64>> {
    let n = class.len();
    let mut a = DMatrix::from_fn(n, n, |i, j| q[(class[i], class[j])]);
    for k in (1..n).rev() {
        let outflow: f64 = (0..k).map(|j| a[(k, j)]).sum();
        if !(outflow > 0.0) {
            return Err(Error::Solver { residual: f64::NAN });
        }
        for i in 0..k {
            a[(i, k)] /= outflow;
        }
        for i in 0..k {
            let aik = a[(i, k)];
            if aik == 0.0 {
                continue;
            }
            for j in 0..k {
                a[(i, j)] += aik * a[(k, j)];
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for j in 1..n {
        pi[j] = (0..j).map(|i| pi[i] * a[(i, j)]).sum();
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    Ok(pi)
}

/// Probability of ending in each closed class when started at `initial`.
pub fn absorption_probabilities(
    q: &DMatrix<f64>,
    structure: &ClassStructure,
    initial: usize,
) -> Result<Vec<f64>> {
    let r = structure.recurrent.len();
    if let Some(j) = structure.class_of(initial) {
        let mut out = vec![0.0; r];
        out[j] = 1.0;
        return Ok(out);
    }
    let transient = &structure.transient;
    let t = transient.len();
    let row = transient
        .binary_search(&initial)
        .map_err(|_| Error::OutOfRange {
            what: "state",
            index: initial,
            len: q.nrows(),
        })?;
    // (I - Q_TT) X = Q_TR 1_j for every closed class j at once.
    let lhs = DMatrix::from_fn(t, t, |i, j| {
        let eye = if i == j { 1.0 } else { 0.0 };
        eye - q[(transient[i], transient[j])]
    });
    let rhs = DMatrix::from_fn(t, r, |i, j| {
        structure.recurrent[j]
            .iter()
            .map(|&k| q[(transient[i], k)])
            .sum()
    });
    let x = lhs.clone().lu().solve(&rhs).ok_or(Error::Solver {
        residual: f64::INFINITY,
    })?;
    let residual = (&lhs * &x - &rhs).amax();
    if residual > RESIDUAL_LIMIT {
        return Err(Error::Solver { residual });
    }
    let mut out: Vec<f64> = (0..r).map(|j| x[(row, j)].max(0.0)).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// Long-run (Cesàro) occupancy from `initial`, with class structure.
pub fn stationary_detailed(q: &DMatrix<f64>, initial: usize) -> Result<Stationary> {
    let structure = recurrent_classes(q)?;
    if initial >= q.nrows() {
        return Err(Error::OutOfRange {
            what: "initial state",
            index: initial,
            len: q.nrows(),
        });
    }
    let absorption = absorption_probabilities(q, &structure, initial)?;
    let mut occupancy = vec![0.0; q.nrows()];
    for (class, weight) in structure.recurrent.iter().zip(&absorption) {
        if *weight == 0.0 {
            continue;
        }
        for (state, p) in class.iter().zip(class_stationary(q, class)?) {
            occupancy[*state] = weight * p;
        }
    }
    let residual = stationarity_residual(q, &occupancy);
    if !(residual <= RESIDUAL_LIMIT) {
        return Err(Error::Solver { residual });
    }
    Ok(Stationary {
        occupancy,
        structure,
        absorption,
    })
}

/// Long-run (Cesàro) occupancy from `initial`.
pub fn stationary(q: &DMatrix<f64>, initial: usize) -> Result<Vec<f64>> {
    stationary_detailed(q, initial).map(|s| s.occupancy)
}

/// `max_j |(mu^T Q)_j - mu_j|`.
pub fn stationarity_residual(q: &DMatrix<f64>, mu: &[f64]) -> f64 {
    let n = q.nrows();
    (0..n)
        .map(|j| ((0..n).map(|i| mu[i] * q[(i, j)]).sum::<f64>() - mu[j]).abs())
        .fold(0.0, f64::max)
}

/// Dense solve of `(Q^T - I) mu = 0` with the last equation replaced by
/// `sum(mu) = 1`. Only meaningful for chains with a single closed class.
pub fn stationary_dense(q: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_stochastic(q)?;
    let n = q.nrows();
    let mut a = q.transpose() - DMatrix::identity(n, n);
    let mut b = nalgebra::DVector::zeros(n);
    a.row_mut(n - 1).fill(1.0);
    b[n - 1] = 1.0;
    let mu = a.lu().solve(&b).ok_or(Error::Solver {
        residual: f64::INFINITY,
    })?;
    let mu: Vec<f64> = mu.iter().copied().collect();
    let residual = stationarity_residual(q, &mu);
    if residual > RESIDUAL_LIMIT {
        return Err(Error::Solver { residual });
    }
    Ok(mu)
}

/// Cesàro-averaged power iteration from a point mass at `initial`.
pub fn stationary_power(q: &DMatrix<f64>, initial: usize, iterations: usize) -> Vec<f64> {
    let n = q.nrows();
    let mut current = nalgebra::RowDVector::zeros(n);
    current[initial] = 1.0;
    let mut average = nalgebra::RowDVector::zeros(n);
    for _ in 0..iterations {
        average += &current;
        current = &current * q;
    }
    (average / iterations as f64).iter().copied().collect()
}
