//! Quantal cognitive hierarchies for the symmetric LUPI game.
//!
//! Level 0 plays uniformly. A level-k player quantally best responds to the
//! mixture of levels `0..k`, weighted by the level distribution and
//! renormalized over those levels. Because the population is Poisson, every
//! opponent is an independent draw from that mixture, so its expected
//! utilities come straight from [`expected_utilities`].

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{check_simplex, expected_utilities, softmax, GameSpec, Strategy};
use crate::metrics::log_likelihood;
use crate::scalar::Scalar;

/// Default highest reasoning level.
pub const DEFAULT_MAX_LEVEL: usize = 40;

/// Probability vector over reasoning levels `0..=m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LevelDistribution<T> {
    weights: Vec<T>,
}

impl<T: Scalar> LevelDistribution<T> {
    pub fn new(weights: Vec<T>) -> Result<Self> {
        check_simplex(&weights, "level distribution")?;
        Ok(LevelDistribution { weights })
    }

    pub(crate) fn from_vec_unchecked(weights: Vec<T>) -> Self {
        LevelDistribution { weights }
    }

    pub fn uniform(max_level: usize) -> Self {
        let w = T::one() / T::from_count(max_level + 1);
        LevelDistribution {
            weights: vec![w; max_level + 1],
        }
    }

    pub fn point_mass(max_level: usize, level: usize) -> Result<Self> {
        if level > max_level {
            return Err(Error::arg(format!("level {level} above maximum {max_level}")));
        }
        let mut weights = vec![T::zero(); max_level + 1];
        weights[level] = T::one();
        Ok(LevelDistribution { weights })
    }

    /// Highest level `m`.
    pub fn max_level(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weight(&self, level: usize) -> T {
        self.weights[level]
    }

    /// `Σ l · w[l]`.
    pub fn mean_level(&self) -> T {
        self.weights
            .iter()
            .enumerate()
            .map(|(l, &w)| T::from_count(l) * w)
            .sum()
    }

    /// Euclidean distance to another distribution of the same length.
    pub fn l2_distance(&self, other: &Self) -> T {
        crate::scalar::sq_dist(&self.weights, &other.weights).sqrt()
    }
}

/// Poisson(`tau`) weights truncated to levels `0..=m` and renormalized.
pub fn poisson_levels<T: Scalar>(tau: T, max_level: usize) -> Result<LevelDistribution<T>> {
    if !(tau > T::zero() && tau.is_finite()) {
        return Err(Error::arg(format!("tau must be positive, got {tau}")));
    }
    // log-space: -tau + l ln(tau) - ln(l!)
    let ln_tau = tau.ln();
    let mut ln_fact = T::zero();
    let logs: Vec<T> = (0..=max_level)
        .map(|l| {
            if l > 0 {
                ln_fact = ln_fact + T::from_count(l).ln();
            }
            T::from_count(l) * ln_tau - ln_fact - tau
        })
        .collect();
    let top = logs.iter().copied().fold(T::neg_infinity(), T::max);
    let raw: Vec<T> = logs.iter().map(|&x| (x - top).exp()).collect();
    let total: T = raw.iter().copied().sum();
    Ok(LevelDistribution {
        weights: raw.into_iter().map(|w| w / total).collect(),
    })
}

/// Level strategies `π_0..π_m` and the precision that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy<T> {
    levels: Vec<Strategy<T>>,
    lambda: T,
    spec: GameSpec<T>,
    /// Levels whose lower-level mixture had zero total weight and fell back
    /// to an equal-weight mixture.
    fallback_levels: Vec<usize>,
}

impl<T: Scalar> Hierarchy<T> {
    pub fn levels(&self) -> &[Strategy<T>] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &Strategy<T> {
        &self.levels[l]
    }

    pub fn max_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn spec(&self) -> &GameSpec<T> {
        &self.spec
    }

    pub fn fallback_levels(&self) -> &[usize] {
        &self.fallback_levels
    }

    /// True when some level's opponent mixture was undefined and replaced.
    pub fn has_warnings(&self) -> bool {
        !self.fallback_levels.is_empty()
    }
}

/// Builds `π_0..π_m` for the given level distribution and precision.
pub fn build_hierarchy<T: Scalar>(
    level_dist: &LevelDistribution<T>,
    lambda: T,
    spec: &GameSpec<T>,
) -> Result<Hierarchy<T>> {
    if lambda.is_nan() || lambda < T::zero() {
        return Err(Error::arg(format!("precision must be nonnegative, got {lambda}")));
    }
    let k = spec.k();
    let m = level_dist.max_level();
    let mut levels: Vec<Strategy<T>> = Vec::with_capacity(m + 1);
    levels.push(Strategy::uniform(k));

    let mut fallback_levels = Vec::new();
    // Running Σ_{l<level} p_l π_l and Σ_{l<level} p_l.
    let mut acc = vec![T::zero(); k];
    let mut acc_weight = T::zero();

    for level in 1..=m {
        let below = level - 1;
        let w = level_dist.weight(below);
        for (a, &p) in acc.iter_mut().zip(levels[below].probs()) {
            *a = *a + w * p;
        }
        acc_weight = acc_weight + w;

        let mixture = if acc_weight > T::zero() {
            Strategy::from_vec_unchecked(acc.iter().map(|&a| a / acc_weight).collect())
        } else {
            fallback_levels.push(level);
            let count = T::from_count(level);
            let mut mix = vec![T::zero(); k];
            for s in &levels {
                for (x, &p) in mix.iter_mut().zip(s.probs()) {
                    *x = *x + p / count;
                }
            }
            Strategy::from_vec_unchecked(mix)
        };

        let utilities = expected_utilities(&mixture, spec)?;
        levels.push(softmax(utilities.values(), lambda));
    }

    Ok(Hierarchy {
        levels,
        lambda,
        spec: *spec,
        fallback_levels,
    })
}

/// Aggregate action distribution `Σ_l w[l] π_l`.
pub fn predict<T: Scalar>(level_dist: &LevelDistribution<T>, hierarchy: &Hierarchy<T>) -> Result<Strategy<T>> {
    if level_dist.weights.len() != hierarchy.levels.len() {
        return Err(Error::DimensionMismatch {
            expected: hierarchy.levels.len(),
            got: level_dist.weights.len(),
        });
    }
    let k = hierarchy.spec.k();
    let mut out = vec![T::zero(); k];
    for (&w, s) in level_dist.weights.iter().zip(&hierarchy.levels) {
        if w == T::zero() {
            continue;
        }
        for (o, &p) in out.iter_mut().zip(s.probs()) {
            *o = *o + w * p;
        }
    }
    Ok(Strategy::from_vec_unchecked(out))
}

/// Evenly spaced precision grid `lo..=hi` with `count` points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        let g = GridSpec { lo, hi, count };
        g.validate()?;
        Ok(g)
    }

    /// A grid holding the single value `lambda`.
    pub fn single(lambda: f64) -> Self {
        GridSpec {
            lo: lambda,
            hi: lambda,
            count: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::arg("grid needs at least one point"));
        }
        if !(self.lo > 0.0 && self.lo.is_finite() && self.hi.is_finite()) {
            return Err(Error::arg(format!("grid bounds must be positive, got {}", self)));
        }
        if self.count == 1 {
            if self.lo != self.hi {
                return Err(Error::arg("a single-point grid needs lo == hi"));
            }
        } else if !(self.lo < self.hi) {
            return Err(Error::arg(format!("grid needs lo < hi, got {}", self)));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        if self.count <= 1 {
            0.0
        } else {
            (self.hi - self.lo) / (self.count - 1) as f64
        }
    }

    pub fn points(&self) -> Vec<f64> {
        let step = self.step();
        (0..self.count)
            .map(|i| if i + 1 == self.count { self.hi } else { self.lo + step * i as f64 })
            .collect()
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lo: 1.0,
            hi: 20.0,
            count: 500,
        }
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.lo, self.hi, self.count)
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    /// Parses `lo:hi:count`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::arg(format!("expected lo:hi:count, got `{s}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo = parts[0].trim().parse().map_err(|_| bad())?;
        let hi = parts[1].trim().parse().map_err(|_| bad())?;
        let count = parts[2].trim().parse().map_err(|_| bad())?;
        GridSpec::new(lo, hi, count)
    }
}

/// Where the level distribution of a QCH fit comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum LevelSource<T> {
    Fixed(LevelDistribution<T>),
    /// Truncated Poisson(`tau`) over `0..=max_level`.
    Poisson { tau: T, max_level: usize },
}

impl<T: Scalar> LevelSource<T> {
    pub fn resolve(&self) -> Result<LevelDistribution<T>> {
        match self {
            LevelSource::Fixed(d) => Ok(d.clone()),
            LevelSource::Poisson { tau, max_level } => poisson_levels(*tau, *max_level),
        }
    }
}

/// Maximum-likelihood precision on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaFit<T> {
    pub lambda: T,
    pub loglik: T,
    pub prediction: Strategy<T>,
}

/// Grid search for the precision maximizing `Σ counts[a] ln predicted[a]`.
/// Ties go to the smaller precision.
pub fn fit_lambda<T: Scalar>(
    counts: &[T],
    level_source: &LevelSource<T>,
    spec: &GameSpec<T>,
    grid: &GridSpec,
) -> Result<LambdaFit<T>> {
    grid.validate()?;
    if counts.len() != spec.k() {
        return Err(Error::DimensionMismatch {
            expected: spec.k(),
            got: counts.len(),
        });
    }
    if counts.iter().any(|c| !(*c >= T::zero())) {
        return Err(Error::arg("counts must be nonnegative"));
    }
    if counts.iter().copied().sum::<T>() <= T::zero() {
        return Err(Error::arg("counts must have a positive total"));
    }
    let level_dist = level_source.resolve()?;

    let scored: Vec<(T, T, Strategy<T>)> = grid
        .points()
        .into_par_iter()
        .map(|lambda| {
            let lambda = T::lit(lambda);
            let h = build_hierarchy(&level_dist, lambda, spec)?;
            let pred = predict(&level_dist, &h)?;
            let ll = log_likelihood(counts, &pred)?;
            Ok((lambda, ll, pred))
        })
        .collect::<Result<_>>()?;

    let mut best: Option<(T, T, Strategy<T>)> = None;
    for cand in scored {
        let better = match &best {
            None => true,
            Some(b) => cand.1 > b.1 || (b.1.is_nan() && !cand.1.is_nan()),
        };
        if better {
            best = Some(cand);
        }
    }
    let (lambda, loglik, prediction) = best.expect("grid is nonempty");
    Ok(LambdaFit {
        lambda,
        loglik,
        prediction,
    })
}
