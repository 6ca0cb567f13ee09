//! Poisson-Nash equilibrium of the LUPI game.
//!
//! Indifference between consecutive supported numbers gives the recursion
//! `p_{k+1} = p_k + ln(1 - n p_k e^{-n p_k}) / n`. The whole equilibrium is
//! therefore determined by `p_1`, and the total mass of the generated
//! sequence is continuous and increasing in `p_1`, so bisection on `p_1`
//! against a unit sum finds it.

use crate::error::{Error, Result};
use crate::game::{expected_utilities, not_uniquely_taken, GameSpec, Strategy};
use crate::scalar::Scalar;

/// Bisection steps on `p_1`.
pub const BISECTION_STEPS: usize = 200;

/// Slack on the no-profitable-deviation check for unsupported numbers.
pub const DEVIATION_SLACK: f64 = 1e-9;

/// Default tolerance on the probability-sum residual.
pub const DEFAULT_TOL: f64 = 1e-12;

/// Probability of the next number implied by indifference with `p`.
///
/// Evaluated as `ln(e^{np} − np) / n`, which equals the recursion above but
/// keeps its precision once `p` is small (the direct form cancels to zero
/// long before the true value, roughly `n p² / 2`, underflows).
pub fn next_probability<T: Scalar>(p: T, n: T) -> T {
    exp_minus_one_minus(n * p).ln_1p() / n
}

/// `e^y − 1 − y` without cancellation for small `y`.
fn exp_minus_one_minus<T: Scalar>(y: T) -> T {
    if y.abs() > T::lit(0.5) {
        return y.exp_m1() - y;
    }
    // Taylor series from the quadratic term
    let mut term = y * y / T::lit(2.0);
    let mut sum = term;
    let mut j = 2.0;
    while term.abs() > sum.abs() * T::epsilon() {
        j += 1.0;
        term = term * y / T::lit(j);
        sum = sum + term;
    }
    sum
}

/// `(p_k - p_{k+1}) + ln(1 - n p_k e^{-n p_k}) / n`: zero when the pair is
/// in equilibrium.
pub fn recursion_residual<T: Scalar>(pk: T, pk_next: T, n: T) -> T {
    (pk - pk_next) + not_uniquely_taken(n, pk).ln() / n
}

fn forward_sequence<T: Scalar>(p1: T, n: T, cap: usize) -> Vec<T> {
    let mut seq = Vec::with_capacity(cap.min(256));
    seq.push(p1);
    while seq.len() < cap {
        let next = next_probability(*seq.last().unwrap(), n);
        if !(next > T::zero()) {
            break;
        }
        seq.push(next);
    }
    seq
}

fn total<T: Scalar>(seq: &[T]) -> T {
    seq.iter().copied().sum()
}

/// Solves for the equilibrium. `tol` bounds `|sum - 1|`; `max_support`
/// optionally caps the number of supported actions (defaults to K).
pub fn solve_pne<T: Scalar>(spec: &GameSpec<T>, tol: T, max_support: Option<usize>) -> Result<Strategy<T>> {
    if !(tol > T::zero()) {
        return Err(Error::arg(format!("tolerance must be positive, got {tol}")));
    }
    let k = spec.k();
    let cap = match max_support {
        Some(0) => return Err(Error::arg("support cap must be at least 1")),
        Some(c) => c.min(k),
        None => k,
    };
    let n = spec.n();

    let (mut lo, mut hi) = (T::zero(), T::one());
    for _ in 0..BISECTION_STEPS {
        let mid = (lo + hi) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(&forward_sequence(mid, n, cap)) < T::one() {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let best = [lo, hi]
        .into_iter()
        .filter(|p| *p > T::zero())
        .map(|p1| {
            let seq = forward_sequence(p1, n, cap);
            let resid = (total(&seq) - T::one()).abs();
            (seq, resid)
        })
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .expect("upper bracket is always positive");

    let (seq, resid) = best;
    if resid > tol {
        return Err(Error::NoConvergence {
            iterations: BISECTION_STEPS,
            residual: resid.as_f64(),
        });
    }

    let mut probs = vec![T::zero(); k];
    probs[..seq.len()].copy_from_slice(&seq);
    let strategy = Strategy::from_vec_unchecked(probs);
    check_no_profitable_deviation(&strategy, spec)?;
    Ok(strategy)
}

fn check_no_profitable_deviation<T: Scalar>(p: &Strategy<T>, spec: &GameSpec<T>) -> Result<()> {
    let u = expected_utilities(p, spec)?;
    let supported_max = supported_utilities(p, u.values()).fold(T::neg_infinity(), T::max);
    let slack = T::lit(DEVIATION_SLACK);
    for (i, (&pk, &uk)) in p.probs().iter().zip(u.values()).enumerate() {
        if pk == T::zero() && uk > supported_max + slack {
            return Err(Error::Equilibrium(format!(
                "unsupported action {} earns {uk:e} > supported {supported_max:e}",
                i + 1
            )));
        }
    }
    Ok(())
}

fn supported_utilities<'a, T: Scalar>(p: &'a Strategy<T>, u: &'a [T]) -> impl Iterator<Item = T> + 'a {
    p.probs()
        .iter()
        .zip(u)
        .filter(|(p, _)| **p > T::zero())
        .map(|(_, u)| *u)
}

/// Spread (max - min) of expected utilities over the supported actions.
pub fn indifference_residual<T: Scalar>(p: &Strategy<T>, spec: &GameSpec<T>) -> Result<T> {
    let u = expected_utilities(p, spec)?;
    let (lo, hi) = supported_utilities(p, u.values())
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| (lo.min(v), hi.max(v)));
    Ok(hi - lo)
}

/// Largest equilibrium-recursion residual over consecutive supported pairs.
pub fn max_recursion_residual<T: Scalar>(p: &Strategy<T>, n: T) -> T {
    p.probs()
        .windows(2)
        .filter(|w| w[0] > T::zero() && w[1] > T::zero())
        .map(|w| recursion_residual(w[0], w[1], n).abs())
        .fold(T::zero(), T::max)
}

/// Number of actions with positive probability.
pub fn support_size<T: Scalar>(p: &Strategy<T>) -> usize {
    p.probs().iter().filter(|&&x| x > T::zero()).count()
}
