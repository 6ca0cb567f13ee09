//! The lowest-unique-positive-integer game with a Poisson population, and
//! the primitives every model shares: win probabilities, expected utilities
//! and the logit (quantal) response.
//!
//! Actions are the integers `1..=K`. Storage is zero-based, but every
//! method that takes an *action* takes it one-based.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Game parameters: number of actions, Poisson mean of the population size
/// and the prize paid to the winner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameSpec<T> {
    k: usize,
    n: T,
    prize: T,
}

impl<T: Scalar> GameSpec<T> {
    pub fn new(k: usize, n: T, prize: T) -> Result<Self> {
        if k < 2 {
            return Err(Error::arg(format!("need at least 2 actions, got {k}")));
        }
        if !(n > T::zero() && n.is_finite()) {
            return Err(Error::arg(format!("population mean must be positive, got {n}")));
        }
        if !(prize > T::zero() && prize.is_finite()) {
            return Err(Error::arg(format!("prize must be positive, got {prize}")));
        }
        Ok(GameSpec { k, n, prize })
    }

    /// The laboratory game: numbers 1..99, Poisson(26.9) active players,
    /// unit prize.
    pub fn lab() -> Self {
        GameSpec {
            k: 99,
            n: T::lit(26.9),
            prize: T::one(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> T {
        self.n
    }

    pub fn prize(&self) -> T {
        self.prize
    }
}

/// Slack allowed on the sum of a probability vector.
pub(crate) fn simplex_tol<T: Scalar>(len: usize) -> T {
    let scaled = T::epsilon() * T::from_count(64 * len.max(1));
    scaled.max(T::lit(1e-9))
}

/// A mixed strategy over actions `1..=K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Strategy<T> {
    probs: Vec<T>,
}

impl<T: Scalar> Strategy<T> {
    /// Validates nonnegativity and unit sum.
    pub fn new(probs: Vec<T>) -> Result<Self> {
        check_simplex(&probs, "strategy")?;
        Ok(Strategy { probs })
    }

    /// Skips validation. Callers guarantee the simplex invariant.
    pub(crate) fn from_vec_unchecked(probs: Vec<T>) -> Self {
        Strategy { probs }
    }

    pub fn uniform(k: usize) -> Self {
        let p = T::one() / T::from_count(k);
        Strategy { probs: vec![p; k] }
    }

    /// All mass on `action` (one-based).
    pub fn point_mass(k: usize, action: usize) -> Result<Self> {
        check_action(action, k)?;
        let mut probs = vec![T::zero(); k];
        probs[action - 1] = T::one();
        Ok(Strategy { probs })
    }

    /// Normalized frequencies from a count vector with positive total.
    pub fn from_counts(counts: &[T]) -> Result<Self> {
        if counts.iter().any(|c| !(*c >= T::zero()) || !c.is_finite()) {
            return Err(Error::arg("counts must be finite and nonnegative"));
        }
        let total: T = counts.iter().copied().sum();
        if total <= T::zero() {
            return Err(Error::arg("counts must have a positive total"));
        }
        Ok(Strategy {
            probs: counts.iter().map(|&c| c / total).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probability of `action` (one-based).
    pub fn prob(&self, action: usize) -> T {
        self.probs[action - 1]
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<T> {
        self.probs
    }
}

pub(crate) fn check_simplex<T: Scalar>(v: &[T], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::arg(format!("{what} is empty")));
    }
    if let Some(i) = v.iter().position(|x| !(*x >= T::zero()) || !x.is_finite()) {
        return Err(Error::arg(format!(
            "{what} entry {i} is not a finite nonnegative number ({})",
            v[i]
        )));
    }
    let sum: T = v.iter().copied().sum();
    if (sum - T::one()).abs() > simplex_tol(v.len()) {
        return Err(Error::arg(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

fn check_action(action: usize, k: usize) -> Result<()> {
    if action == 0 || action > k {
        return Err(Error::arg(format!("action {action} outside 1..={k}")));
    }
    Ok(())
}

/// Expected utility of each action against a given opponent strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UtilityVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> UtilityVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        UtilityVector { values }
    }

    /// Utility of `action` (one-based).
    pub fn value(&self, action: usize) -> T {
        self.values[action - 1]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `1 - n p e^{-n p}`: the chance a number played with probability `p` is
/// not picked by exactly one opponent.
#[inline]
pub(crate) fn not_uniquely_taken<T: Scalar>(n: T, p: T) -> T {
    let np = n * p;
    T::one() - np * (-np).exp()
}

/// Probability that a player choosing `action` wins against a Poisson
/// population playing `opp`.
///
/// Opponent counts per number are independent Poisson(`n * opp[j]`), so the
/// player wins iff nobody else picks `action` and no lower number is picked
/// by exactly one opponent.
pub fn win_probability<T: Scalar>(action: usize, opp: &Strategy<T>, spec: &GameSpec<T>) -> Result<T> {
    check_action(action, spec.k)?;
    if opp.len() != spec.k {
        return Err(Error::DimensionMismatch {
            expected: spec.k,
            got: opp.len(),
        });
    }
    let n = spec.n;
    let blocked = opp.probs[..action - 1]
        .iter()
        .fold(T::one(), |acc, &p| acc * not_uniquely_taken(n, p));
    Ok((-n * opp.prob(action)).exp() * blocked)
}

/// `prize * win_probability(k)` for every action, in a single O(K) pass.
pub fn expected_utilities<T: Scalar>(opp: &Strategy<T>, spec: &GameSpec<T>) -> Result<UtilityVector<T>> {
    if opp.len() != spec.k {
        return Err(Error::DimensionMismatch {
            expected: spec.k,
            got: opp.len(),
        });
    }
    let n = spec.n;
    let mut prefix = T::one();
    let values = opp
        .probs
        .iter()
        .map(|&p| {
            let u = spec.prize * (-n * p).exp() * prefix;
            prefix = prefix * not_uniquely_taken(n, p);
            u
        })
        .collect();
    Ok(UtilityVector { values })
}

/// Logit response with precision `lambda`. The maximum exponent is
/// subtracted before exponentiating.
pub fn quantal_response<T: Scalar>(utilities: &UtilityVector<T>, lambda: T) -> Result<Strategy<T>> {
    if lambda.is_nan() || lambda < T::zero() {
        return Err(Error::arg(format!("precision must be nonnegative, got {lambda}")));
    }
    if utilities.is_empty() {
        return Err(Error::arg("empty utility vector"));
    }
    if utilities.values.iter().any(|u| !u.is_finite()) {
        return Err(Error::arg("utilities must be finite"));
    }
    Ok(softmax(&utilities.values, lambda))
}

pub(crate) fn softmax<T: Scalar>(values: &[T], lambda: T) -> Strategy<T> {
    let shift = values
        .iter()
        .map(|&u| lambda * u)
        .fold(T::neg_infinity(), T::max);
    let weights: Vec<T> = values.iter().map(|&u| (lambda * u - shift).exp()).collect();
    let total: T = weights.iter().copied().sum();
    Strategy {
        probs: weights.into_iter().map(|w| w / total).collect(),
    }
}
