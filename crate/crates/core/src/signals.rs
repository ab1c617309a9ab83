//! Finite-alphabet signal structures.
//!
//! A [`SignalModel`] holds one probability mass vector per state of the world.
//! Everything downstream (expected transition matrices, lotteries, likelihood
//! bounds) reads the masses through this type.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums and on the "identical rows" test.
pub const ROW_TOLERANCE: f64 = 1e-12;

/// Largest state count accepted by [`alternating_family`]; the alphabet has
/// `2^n` bins.
pub const ALTERNATING_FAMILY_CAP: usize = 16;

/// Per-state signal distributions over a finite alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SignalModelRepr", into = "SignalModelRepr")]
pub struct SignalModel {
    alphabet: usize,
    mass: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SignalModelRepr {
    states: usize,
    alphabet: usize,
    mass: Vec<Vec<f64>>,
}

impl TryFrom<SignalModelRepr> for SignalModel {
    type Error = Error;

    fn try_from(repr: SignalModelRepr) -> Result<Self> {
        if repr.mass.len() != repr.states {
            return Err(Error::Shape(format!(
                "declared {} states but mass has {} rows",
                repr.states,
                repr.mass.len()
            )));
        }
        if let Some((row, r)) = repr
            .mass
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != repr.alphabet)
        {
            return Err(Error::Shape(format!(
                "row {row} has {} entries, alphabet is {}",
                r.len(),
                repr.alphabet
            )));
        }
        SignalModel::new(repr.mass)
    }
}

impl From<SignalModel> for SignalModelRepr {
    fn from(model: SignalModel) -> Self {
        SignalModelRepr {
            states: model.mass.len(),
            alphabet: model.alphabet,
            mass: model.mass,
        }
    }
}

impl SignalModel {
    /// Builds a model from row-major masses, one row per state.
    pub fn new(mass: Vec<Vec<f64>>) -> Result<Self> {
        let alphabet = mass.first().map(Vec::len).unwrap_or(0);
        if mass.is_empty() || alphabet == 0 {
            return Err(Error::Shape(
                "model needs at least one state and one signal".into(),
            ));
        }
        for (row, masses) in mass.iter().enumerate() {
            if masses.len() != alphabet {
                return Err(Error::Shape(format!(
                    "row {row} has {} entries, expected {alphabet}",
                    masses.len()
                )));
            }
            if let Some(bad) = masses.iter().find(|p| !p.is_finite() || **p < 0.0) {
                return Err(Error::MalformedRow {
                    row,
                    reason: format!("entry {bad} is not a probability"),
                });
            }
            let total: f64 = masses.iter().sum();
            if (total - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::MalformedRow {
                    row,
                    reason: format!("row sums to {total}"),
                });
            }
        }
        Ok(Self { alphabet, mass })
    }

    pub fn n_states(&self) -> usize {
        self.mass.len()
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet
    }

    /// Mass vector of state `w`.
    pub fn row(&self, w: usize) -> &[f64] {
        &self.mass[w]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.mass
    }

    pub fn mass(&self, w: usize, s: usize) -> f64 {
        self.mass[w][s]
    }

    /// Probability that a signal drawn under state `w` is labelled by `lottery`.
    pub fn lottery_mass(&self, w: usize, lottery: &Lottery) -> f64 {
        self.mass[w]
            .iter()
            .zip(&lottery.weights)
            .map(|(f, g)| f * g)
            .sum()
    }

    /// Smallest density ratio `mass[w][s] / mass[w2][s]` over all pairs and
    /// signals, with its location.
    pub fn min_density_ratio(&self) -> (f64, (usize, usize, usize)) {
        let mut best = (f64::INFINITY, (0, 0, 0));
        for (w, a) in self.mass.iter().enumerate() {
            for (w2, b) in self.mass.iter().enumerate() {
                if w == w2 {
                    continue;
                }
                for s in 0..self.alphabet {
                    let ratio = if b[s] == 0.0 {
                        if a[s] == 0.0 {
                            // 0/0 carries no information but the signal rules out both.
                            0.0
                        } else {
                            f64::INFINITY
                        }
                    } else {
                        a[s] / b[s]
                    };
                    if ratio < best.0 {
                        best = (ratio, (w, w2, s));
                    }
                }
            }
        }
        if self.n_states() == 1 {
            // A single state has no cross ratios; nothing is ruled out.
            best.0 = 1.0;
        }
        best
    }

    /// First pair of rows that agree entrywise within [`ROW_TOLERANCE`].
    pub fn identical_pair(&self) -> Option<(usize, usize)> {
        for w in 0..self.n_states() {
            for w2 in (w + 1)..self.n_states() {
                if rows_identical(&self.mass[w], &self.mass[w2]) {
                    return Some((w, w2));
                }
            }
        }
        None
    }

    fn check_state(&self, w: usize) -> Result<()> {
        if w >= self.n_states() {
            return Err(Error::OutOfRange {
                what: "state",
                index: w,
                len: self.n_states(),
            });
        }
        Ok(())
    }
}

fn rows_identical(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() < ROW_TOLERANCE)
}

/// A randomised labelling rule: each signal `s` is labelled with
/// probability `weights[s]`, and left unlabelled with the remaining mass.
/// `null_mass` is the unconditional weight left on the empty outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lottery {
    pub weights: Vec<f64>,
    pub null_mass: f64,
}

impl Lottery {
    /// Builds a lottery from signal weights; the null mass is whatever is left.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Parameter(
                "lottery weights must be non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total > 1.0 + ROW_TOLERANCE {
            return Err(Error::Parameter(format!(
                "lottery weights sum to {total} > 1"
            )));
        }
        Ok(Self {
            weights,
            null_mass: (1.0 - total).max(0.0),
        })
    }

    /// Rescales every signal weight by `beta`, moving the difference to the
    /// null outcome.
    pub fn scaled(&self, beta: f64) -> Self {
        let weights: Vec<f64> = self.weights.iter().map(|w| w * beta).collect();
        let total: f64 = weights.iter().sum();
        Self {
            weights,
            null_mass: (1.0 - total).max(0.0),
        }
    }
}

/// Outcome of [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub varsigma: f64,
    pub min_ratio: f64,
    /// `(state, other state, signal)` where the minimum ratio occurs.
    pub min_ratio_at: (usize, usize, usize),
    pub identical_rows: Option<(usize, usize)>,
}

/// Checks full support against `varsigma` and pairwise identifiability.
pub fn validate(model: &SignalModel, varsigma: f64) -> ValidationReport {
    let (min_ratio, min_ratio_at) = model.min_density_ratio();
    let identical_rows = model.identical_pair();
    ValidationReport {
        passed: min_ratio > varsigma && identical_rows.is_none(),
        varsigma,
        min_ratio,
        min_ratio_at,
        identical_rows,
    }
}

/// `max_s mass[w][s] / mass[w2][s]`.
pub fn sup_likelihood_ratio(model: &SignalModel, w: usize, w2: usize) -> Result<f64> {
    model.check_state(w)?;
    model.check_state(w2)?;
    if w == w2 {
        return Err(Error::DegeneratePair(w, w2));
    }
    let (a, b) = (model.row(w), model.row(w2));
    Ok(a.iter()
        .zip(b)
        .filter(|(x, y)| **x > 0.0 || **y > 0.0)
        .map(|(x, y)| if *y == 0.0 { f64::INFINITY } else { x / y })
        .fold(0.0, f64::max))
}

/// Cauchy-Schwarz distance between two rows; zero iff the rows are parallel.
pub fn cs_distance(model: &SignalModel, w: usize, w2: usize) -> Result<f64> {
    model.check_state(w)?;
    model.check_state(w2)?;
    let (a, b) = (model.row(w), model.row(w2));
    let cross: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm_a: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    // Rounding can push the cosine a hair above one.
    Ok((-(cross / (norm_a * norm_b)).ln()).max(0.0))
}

/// Builds one lottery per state whose own-state labelling probability is
/// strictly larger than any rival lottery's, scaled by a common factor so
/// the lotteries jointly never label a signal with probability above one.
pub fn confirmatory_lotteries(model: &SignalModel) -> Result<Vec<Lottery>> {
    if let Some((a, b)) = model.identical_pair() {
        return Err(Error::IdenticalRows(a, b));
    }
    let raw: Vec<Vec<f64>> = model
        .rows()
        .iter()
        .map(|row| {
            let norm = row.iter().map(|f| f * f).sum::<f64>().sqrt();
            row.iter().map(|f| f / norm).collect()
        })
        .collect();
    let column_max = (0..model.alphabet_size())
        .map(|s| raw.iter().map(|r| r[s]).sum::<f64>())
        .fold(0.0, f64::max);
    let beta = if column_max > 0.0 {
        (1.0 / column_max).min(1.0)
    } else {
        1.0
    };
    Ok(raw
        .into_iter()
        .map(|weights| {
            let weights: Vec<f64> = weights.into_iter().map(|w| w * beta).collect();
            let total: f64 = weights.iter().sum();
            Lottery {
                weights,
                null_mass: (1.0 - total).max(0.0),
            }
        })
        .collect())
}

/// States with alternating low/high densities on a dyadic grid.
///
/// State `w` (zero-based) splits `[0, 1)` into `2^(w+1)` equal intervals with
/// density 2/3 on even intervals and 4/3 on odd ones; the unit interval is
/// discretised into `2^n_states` bins.
pub fn alternating_family(n_states: usize) -> Result<SignalModel> {
    if n_states == 0 || n_states > ALTERNATING_FAMILY_CAP {
        return Err(Error::SizeCap {
            requested: n_states,
            cap: ALTERNATING_FAMILY_CAP,
        });
    }
    let bins = 1usize << n_states;
    let low = (2.0 / 3.0) / bins as f64;
    let high = (4.0 / 3.0) / bins as f64;
    let mass = (0..n_states)
        .map(|w| {
            let shift = n_states - (w + 1);
            (0..bins)
                .map(|b| if (b >> shift) & 1 == 0 { low } else { high })
                .collect()
        })
        .collect();
    SignalModel::new(mass)
}

/// Symmetric `n`-signal model where signal `s^w` is `info` times more likely
/// under state `w` than under any other state.
pub fn symmetric_model(n: usize, info: f64) -> Result<SignalModel> {
    if n < 2 {
        return Err(Error::Parameter(format!(
            "symmetric model needs n >= 2, got {n}"
        )));
    }
    if !(info > 1.0) || !info.is_finite() {
        return Err(Error::Parameter(format!(
            "informativeness must exceed 1, got {info}"
        )));
    }
    let denom = n as f64 - 1.0 + info;
    let mass = (0..n)
        .map(|w| {
            (0..n)
                .map(|s| if s == w { info / denom } else { 1.0 / denom })
                .collect()
        })
        .collect();
    SignalModel::new(mass)
}

/// Three states, three signals, attaining `sup f1/f_n = sup f_n/f1 = sqrt(1+tau)`
/// for `n = 2, 3` and `sup f2/f3 = sup f3/f2 = sqrt(1+ups)` exactly.
///
/// Rows are `(e, e, g)`, `(a, b, c)`, `(b, a, c)`. Requires
/// `1 + ups <= (1 + tau)^2`, otherwise no model attains both sups.
pub fn sup_ratio_model(tau: f64, ups: f64) -> Result<SignalModel> {
    if !(tau > 0.0 && ups > 0.0) {
        return Err(Error::Parameter("tau and ups must be positive".into()));
    }
    let r = (1.0 + tau).sqrt();
    let q = (1.0 + ups).sqrt();
    if q > r * r {
        return Err(Error::Parameter(format!(
            "1+ups = {} exceeds (1+tau)^2 = {}; the sups are inconsistent",
            1.0 + ups,
            (1.0 + tau) * (1.0 + tau)
        )));
    }
    let denom = 1.0 + 1.0 / q - 2.0 / (r * r);
    let a = (1.0 - 1.0 / r) / denom;
    let (e, b) = (a / r, a / q);
    let g = 1.0 - 2.0 * e;
    let c = g / r;
    if !(denom > 0.0 && g > 0.0 && a > 0.0) {
        return Err(Error::Parameter(format!(
            "no three-signal model attains tau = {tau}, ups = {ups}"
        )));
    }
    // Normalise away last-bit drift.
    let norm = |row: [f64; 3]| -> Vec<f64> {
        let t: f64 = row.iter().sum();
        row.iter().map(|x| x / t).collect()
    };
    SignalModel::new(vec![norm([e, e, g]), norm([a, b, c]), norm([b, a, c])])
}
