//! Goodness-of-fit measures: log-likelihood, binned Pearson χ², the overlap
//! ("proportion below") and the 1-D Wasserstein distance.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::game::Strategy;
use crate::scalar::Scalar;

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

/// Default χ² binning: two numbers per bin, six bins (numbers 1..=12).
pub const DEFAULT_BIN_SIZE: usize = 2;
pub const DEFAULT_NUM_BINS: usize = 6;
/// Every participant submits a number each round.
pub const DEFAULT_SUBMISSIONS_PER_DAY: f64 = 38.0;
/// Expected bin counts below this make the χ² approximation unreliable.
pub const MIN_EXPECTED_COUNT: f64 = 5.0;

fn floor<T: Scalar>() -> T {
    // 1e-300 underflows in f32
    T::lit(PROB_FLOOR).max(T::min_positive_value())
}

fn same_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `Σ counts[a] ln max(predicted[a], 1e-300)`.
pub fn log_likelihood<T: Scalar>(counts: &[T], predicted: &Strategy<T>) -> Result<T> {
    same_len(predicted.len(), counts.len())?;
    let fl = floor::<T>();
    Ok(counts
        .iter()
        .zip(predicted.probs())
        .filter(|(c, _)| **c != T::zero())
        .map(|(&c, &p)| c * p.max(fl).ln())
        .sum())
}

/// One χ² category: actions `first..=last` (one-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin<T> {
    pub first: usize,
    pub last: usize,
    pub observed: T,
    pub expected: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedCounts<T> {
    pub bins: Vec<Bin<T>>,
    pub df: usize,
}

impl<T: Scalar> BinnedCounts<T> {
    /// `Σ (O_i - E_i)² / E_i`.
    pub fn statistic(&self) -> T {
        self.bins
            .iter()
            .map(|b| (b.observed - b.expected).powi(2) / b.expected)
            .sum()
    }

    /// Bins whose expected count is below [`MIN_EXPECTED_COUNT`].
    pub fn sparse_bins(&self) -> Vec<usize> {
        let min = T::lit(MIN_EXPECTED_COUNT);
        self.bins
            .iter()
            .enumerate()
            .filter(|(_, b)| b.expected < min)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquaredResult<T> {
    pub chi2: T,
    pub df: usize,
    pub binned: BinnedCounts<T>,
}

impl<T: Scalar> ChiSquaredResult<T> {
    pub fn significance(&self) -> Significance {
        Significance::classify(self.chi2.as_f64(), self.df)
    }

    pub fn has_sparse_bins(&self) -> bool {
        !self.binned.sparse_bins().is_empty()
    }
}

/// Pearson χ² on binned average daily counts.
///
/// `observed_avg_freq[a]` is the average number of submissions of action
/// `a + 1` per day; expected counts are `submissions_per_day` times the
/// predicted mass of each bin.
pub fn chi_squared<T: Scalar>(
    observed_avg_freq: &[T],
    predicted: &Strategy<T>,
    submissions_per_day: T,
    bin_size: usize,
    num_bins: usize,
) -> Result<ChiSquaredResult<T>> {
    same_len(predicted.len(), observed_avg_freq.len())?;
    if bin_size == 0 {
        return Err(Error::arg("bin size must be at least 1"));
    }
    if num_bins < 2 {
        return Err(Error::arg("need at least 2 bins"));
    }
    if bin_size * num_bins > predicted.len() {
        return Err(Error::arg(format!(
            "{num_bins} bins of size {bin_size} exceed {} actions",
            predicted.len()
        )));
    }
    if !(submissions_per_day > T::zero()) {
        return Err(Error::arg("submissions per day must be positive"));
    }
    let bins = (0..num_bins)
        .map(|i| {
            let range = i * bin_size..(i + 1) * bin_size;
            let observed: T = observed_avg_freq[range.clone()].iter().copied().sum();
            let mass: T = predicted.probs()[range.clone()].iter().copied().sum();
            let expected = submissions_per_day * mass;
            if !(expected > T::zero()) {
                return Err(Error::arg(format!(
                    "expected count of bin {}..={} is zero",
                    range.start + 1,
                    range.end
                )));
            }
            Ok(Bin {
                first: range.start + 1,
                last: range.end,
                observed,
                expected,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let binned = BinnedCounts {
        bins,
        df: num_bins - 1,
    };
    Ok(ChiSquaredResult {
        chi2: binned.statistic(),
        df: binned.df,
        binned,
    })
}

/// Rejection level of a χ² test, reported with the usual star notation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Significance {
    NotSignificant,
    TenPercent,
    FivePercent,
    OnePercent,
}

/// χ² critical values at 10 %, 5 % and 1 % for five degrees of freedom.
pub const CRITICAL_DF5: [f64; 3] = [9.236, 11.070, 15.086];

impl Significance {
    /// Critical values at 10 %, 5 %, 1 %.
    pub fn critical_values(df: usize) -> [f64; 3] {
        if df == 5 {
            return CRITICAL_DF5;
        }
        let dist = ChiSquared::new(df as f64).expect("df is positive");
        [0.90, 0.95, 0.99].map(|q| dist.inverse_cdf(q))
    }

    pub fn classify(chi2: f64, df: usize) -> Self {
        if df == 0 {
            return Significance::NotSignificant;
        }
        let [c10, c5, c1] = Self::critical_values(df);
        if chi2 > c1 {
            Significance::OnePercent
        } else if chi2 > c5 {
            Significance::FivePercent
        } else if chi2 > c10 {
            Significance::TenPercent
        } else {
            Significance::NotSignificant
        }
    }

    pub fn stars(self) -> &'static str {
        match self {
            Significance::NotSignificant => "",
            Significance::TenPercent => "*",
            Significance::FivePercent => "**",
            Significance::OnePercent => "***",
        }
    }
}

/// Overlap of two densities as a percentage: `100 Σ min(emp, pred)`.
pub fn proportion_below<T: Scalar>(empirical: &Strategy<T>, predicted: &Strategy<T>) -> Result<T> {
    same_len(empirical.len(), predicted.len())?;
    let overlap: T = empirical
        .probs()
        .iter()
        .zip(predicted.probs())
        .map(|(&e, &p)| e.min(p))
        .sum();
    Ok(T::lit(100.0) * overlap)
}

/// Exact W1 distance on the unit-spaced action grid: `Σ |CDF_a - CDF_b|`.
pub fn wasserstein_1d<T: Scalar>(a: &Strategy<T>, b: &Strategy<T>) -> Result<T> {
    same_len(a.len(), b.len())?;
    let k = a.len();
    let mut diff = T::zero();
    let mut total = T::zero();
    for (&x, &y) in a.probs()[..k - 1].iter().zip(&b.probs()[..k - 1]) {
        diff = diff + x - y;
        total = total + diff.abs();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::strategy::Strategy as _;
    type Strategy = crate::game::Strategy<f64>;
    use proptest::prelude::*;

    fn s(v: &[f64]) -> Strategy {
        Strategy::new(v.to_vec()).unwrap()
    }

    #[test]
    fn log_likelihood_examples() {
        assert_eq!(log_likelihood(&[0.0, 0.0], &s(&[0.5, 0.5])).unwrap(), 0.0);
        let ll = log_likelihood(&[1.0, 0.0], &s(&[0.5, 0.5])).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-15);
        // zero probability on an observed action hits the floor, not -inf
        let ll = log_likelihood(&[1.0, 1.0], &s(&[1.0, 0.0])).unwrap();
        assert!((ll - PROB_FLOOR.ln()).abs() < 1e-9);
        assert!(log_likelihood(&[1.0], &s(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn chi_squared_perfect_fit() {
        let pred = s(&[0.1, 0.2, 0.3, 0.4]);
        let obs: Vec<f64> = pred.probs().iter().map(|p| p * 38.0).collect();
        let r = chi_squared(&obs, &pred, 38.0, 1, 4).unwrap();
        assert!(r.chi2.abs() < 1e-12);
        assert_eq!(r.df, 3);
        assert_eq!(r.significance(), Significance::NotSignificant);
    }

    #[test]
    fn chi_squared_hand_example() {
        let pred = s(&[0.5, 0.5]);
        let r = chi_squared(&[6.0, 4.0], &pred, 10.0, 1, 2).unwrap();
        assert!((r.chi2 - 0.4).abs() < 1e-12);
        assert_eq!(r.df, 1);
        assert_eq!(r.binned.bins[0].expected, 5.0);
    }

    #[test]
    fn chi_squared_default_binning() {
        let pred = Strategy::uniform(99);
        let obs = vec![38.0 / 99.0; 99];
        let r = chi_squared(&obs, &pred, 38.0, DEFAULT_BIN_SIZE, DEFAULT_NUM_BINS).unwrap();
        assert_eq!(r.binned.bins.len(), 6);
        assert_eq!((r.binned.bins[5].first, r.binned.bins[5].last), (11, 12));
        assert_eq!(r.df, 5);
        // uniform over 99 puts < 5 expected in each 2-number bin
        assert!(r.has_sparse_bins());
    }

    #[test]
    fn chi_squared_errors() {
        let pred = s(&[0.0, 0.0, 0.5, 0.5]);
        assert!(chi_squared(&[1.0, 1.0, 1.0, 1.0], &pred, 38.0, 1, 2).is_err());
        assert!(chi_squared(&[1.0; 4], &pred, 38.0, 0, 2).is_err());
        assert!(chi_squared(&[1.0; 4], &pred, 38.0, 1, 1).is_err());
        assert!(chi_squared(&[1.0; 4], &pred, 38.0, 3, 2).is_err());
    }

    #[test]
    fn significance_thresholds() {
        assert_eq!(Significance::classify(24.69, 5).stars(), "***");
        assert_eq!(Significance::classify(11.58, 5).stars(), "**");
        assert_eq!(Significance::classify(10.06, 5).stars(), "*");
        assert_eq!(Significance::classify(8.49, 5).stars(), "");
        // table values agree with the distribution
        let cv = ChiSquared::new(5.0).unwrap();
        for (q, c) in [0.90, 0.95, 0.99].iter().zip(CRITICAL_DF5) {
            assert!((cv.inverse_cdf(*q) - c).abs() < 1e-3);
        }
        let c3 = Significance::critical_values(3);
        assert!((c3[1] - 7.815).abs() < 1e-3);
    }

    #[test]
    fn proportion_below_examples() {
        let a = s(&[0.2, 0.3, 0.5]);
        assert!((proportion_below(&a, &a).unwrap() - 100.0).abs() < 1e-12);
        let p1 = Strategy::point_mass(3, 1).unwrap();
        let p2 = Strategy::point_mass(3, 2).unwrap();
        assert_eq!(proportion_below(&p1, &p2).unwrap(), 0.0);
    }

    #[test]
    fn wasserstein_examples() {
        let a = s(&[0.1, 0.6, 0.3]);
        assert_eq!(wasserstein_1d(&a, &a).unwrap(), 0.0);
        let p1 = Strategy::point_mass(5, 1).unwrap();
        let p4 = Strategy::point_mass(5, 4).unwrap();
        assert!((wasserstein_1d(&p1, &p4).unwrap() - 3.0).abs() < 1e-15);
        let x = s(&[0.5, 0.5, 0.0]);
        let y = s(&[0.0, 0.5, 0.5]);
        assert!((wasserstein_1d(&x, &y).unwrap() - 1.0).abs() < 1e-15);
    }

    fn simplex(k: usize) -> impl proptest::strategy::Strategy<Value = Strategy> {
        proptest::collection::vec(0.0f64..1.0, k).prop_filter_map("mass", |w| {
            let t: f64 = w.iter().sum();
            (t > 1e-6).then(|| Strategy::from_counts(&w).unwrap())
        })
    }

    proptest! {
        #[test]
        fn proportion_below_bounded(a in simplex(10), b in simplex(10)) {
            let v = proportion_below(&a, &b).unwrap();
            prop_assert!((0.0..=100.0 + 1e-9).contains(&v));
        }

        #[test]
        fn chi_squared_nonnegative(a in simplex(12), b in simplex(12)) {
            prop_assume!(b.probs().chunks(2).all(|c| c[0] + c[1] > 1e-9));
            let obs: Vec<f64> = a.probs().iter().map(|p| p * 38.0).collect();
            let r = chi_squared(&obs, &b, 38.0, 2, 6).unwrap();
            prop_assert!(r.chi2 >= 0.0);
        }

        #[test]
        fn loglik_order_survives_rescaling(
            counts in proptest::collection::vec(0.0f64..20.0, 6),
            a in simplex(6), b in simplex(6), scale in 0.01f64..100.0,
        ) {
            let la = log_likelihood(&counts, &a).unwrap();
            let lb = log_likelihood(&counts, &b).unwrap();
            let scaled: Vec<f64> = counts.iter().map(|c| c * scale).collect();
            let sa = log_likelihood(&scaled, &a).unwrap();
            let sb = log_likelihood(&scaled, &b).unwrap();
            prop_assume!((la - lb).abs() > 1e-9 * la.abs().max(1.0));
            prop_assert_eq!(la > lb, sa > sb);
        }
    }
}
