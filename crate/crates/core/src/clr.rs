//! Simplex-constrained least squares:
//!
//! ```text
//! min_β ‖y − Σ_l β_l π_l‖²   s.t.  Σ_l β_l = 1,  β_l ≥ 0
//! ```
//!
//! Level strategies that coincide exactly are merged before solving and
//! their weight is split evenly afterwards, which is the minimum-norm way to
//! distribute it. The default solver is a primal active-set method that
//! walks between supports until the optimality conditions hold. Exhaustive
//! support enumeration (up to [`MAX_ENUMERATED_LEVELS`] distinct strategies)
//! and accelerated projected gradient are available as alternatives.

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::scalar::Scalar;

/// Largest number of distinct level strategies solved by support enumeration.
pub const MAX_ENUMERATED_LEVELS: usize = 13;
/// Iteration cap for the projected-gradient path.
pub const PG_MAX_ITER: usize = 10_000;
/// Projected gradient stops once the objective moves by less than this.
pub const PG_TOL: f64 = 1e-12;
/// Support solutions with coefficients above `-FEASIBILITY_TOL` are accepted.
pub const FEASIBILITY_TOL: f64 = 1e-12;
/// Level strategies closer than this (max-abs) are treated as identical.
pub const DUPLICATE_TOL: f64 = 1e-12;
/// Optimality slack on the gradient of excluded levels in the primal method.
pub const KKT_TOL: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClrMethod {
    /// Exact: every support subset's equality-constrained solution.
    Enumeration,
    /// Exact: primal active-set iterations from the best single level.
    ActiveSet,
    /// Accelerated projected gradient with sort-based simplex projection.
    ProjectedGradient,
}

/// Solution of one regression.
#[derive(Clone, Debug, PartialEq)]
pub struct ClrSolution<T> {
    pub beta: Vec<T>,
    pub residual: T,
}

/// Regression design shared by all agents fitted against one hierarchy.
#[derive(Clone, Debug)]
pub struct ClrSolver<T> {
    k: usize,
    n_levels: usize,
    /// One representative strategy per group of identical levels.
    columns: Vec<Vec<T>>,
    /// Level indices belonging to each distinct column.
    groups: Vec<Vec<usize>>,
    gram: Vec<Vec<T>>,
    method: ClrMethod,
}

impl<T: Scalar> ClrSolver<T> {
    /// Uses the primal active-set method.
    pub fn new(hierarchy: &Hierarchy<T>) -> Self {
        let levels: Vec<&[T]> = hierarchy.levels().iter().map(|s| s.probs()).collect();
        Self::from_columns(&levels, None)
    }

    pub fn with_method(hierarchy: &Hierarchy<T>, method: ClrMethod) -> Self {
        let levels: Vec<&[T]> = hierarchy.levels().iter().map(|s| s.probs()).collect();
        Self::from_columns(&levels, Some(method))
    }

    /// Builds a solver from raw columns (each of length K).
    pub fn from_columns(levels: &[&[T]], method: Option<ClrMethod>) -> Self {
        let k = levels.first().map_or(0, |c| c.len());
        let dup = T::lit(DUPLICATE_TOL);
        let mut columns: Vec<Vec<T>> = Vec::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (l, col) in levels.iter().enumerate() {
            let same = columns
                .iter()
                .position(|c| c.iter().zip(col.iter()).all(|(a, b)| (*a - *b).abs() <= dup));
            match same {
                Some(g) => groups[g].push(l),
                None => {
                    columns.push(col.to_vec());
                    groups.push(vec![l]);
                }
            }
        }
        let d = columns.len();
        let mut gram = vec![vec![T::zero(); d]; d];
        for i in 0..d {
            for j in i..d {
                let v = dot(&columns[i], &columns[j]);
                gram[i][j] = v;
                gram[j][i] = v;
            }
        }
        let method = method.unwrap_or(ClrMethod::ActiveSet);
        ClrSolver {
            k,
            n_levels: levels.len(),
            columns,
            groups,
            gram,
            method,
        }
    }

    pub fn method(&self) -> ClrMethod {
        self.method
    }

    /// Number of distinct level strategies after merging duplicates.
    pub fn distinct_levels(&self) -> usize {
        self.columns.len()
    }

    pub fn solve(&self, y: &[T]) -> Result<ClrSolution<T>> {
        if y.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                got: y.len(),
            });
        }
        let b: Vec<T> = self.columns.iter().map(|c| dot(c, y)).collect();
        let reduced = match self.method {
            ClrMethod::Enumeration => self.solve_enumeration(&b)?,
            ClrMethod::ActiveSet => self.solve_active_set(&b),
            ClrMethod::ProjectedGradient => self.solve_projected_gradient(&b),
        };
        let residual = self.residual(&reduced, y);
        Ok(ClrSolution {
            beta: self.expand(&reduced),
            residual,
        })
    }

    /// Objective in Gram form, up to the constant `yᵀy`.
    fn gram_objective(&self, beta: &[T], b: &[T]) -> T {
        let d = beta.len();
        let mut quad = T::zero();
        for i in 0..d {
            if beta[i] == T::zero() {
                continue;
            }
            quad = quad + beta[i] * dot(&self.gram[i], beta);
        }
        quad - T::lit(2.0) * dot(beta, b)
    }

    fn residual(&self, reduced: &[T], y: &[T]) -> T {
        let mut fitted = vec![T::zero(); self.k];
        for (w, col) in reduced.iter().zip(&self.columns) {
            if *w == T::zero() {
                continue;
            }
            for (f, &c) in fitted.iter_mut().zip(col) {
                *f = *f + *w * c;
            }
        }
        crate::scalar::sq_dist(y, &fitted)
    }

    fn expand(&self, reduced: &[T]) -> Vec<T> {
        let mut beta = vec![T::zero(); self.n_levels];
        for (w, group) in reduced.iter().zip(&self.groups) {
            let share = *w / T::from_count(group.len());
            for &l in group {
                beta[l] = share;
            }
        }
        beta
    }

    fn solve_enumeration(&self, b: &[T]) -> Result<Vec<T>> {
        let d = self.columns.len();
        if d > MAX_ENUMERATED_LEVELS {
            return Err(Error::arg(format!(
                "support enumeration over {d} distinct levels exceeds the limit of {MAX_ENUMERATED_LEVELS}"
            )));
        }
        let feas = T::lit(FEASIBILITY_TOL);
        let tie = T::lit(1e-15);
        let mut best: Option<(T, T, Vec<T>)> = None;
        let mut support = Vec::with_capacity(d);
        for mask in 1u32..(1u32 << d) {
            support.clear();
            support.extend((0..d).filter(|i| mask & (1 << i) != 0));
            let Some(coef) = self.solve_on_support(&support, b) else {
                continue;
            };
            if coef.iter().any(|&c| c < -feas) {
                continue;
            }
            let mut beta = vec![T::zero(); d];
            for (&i, &c) in support.iter().zip(&coef) {
                beta[i] = c.max(T::zero());
            }
            let total: T = beta.iter().copied().sum();
            if !(total > T::zero()) {
                continue;
            }
            beta.iter_mut().for_each(|x| *x = *x / total);
            let obj = self.gram_objective(&beta, b);
            let norm = dot(&beta, &beta);
            let better = match &best {
                None => true,
                Some((bo, bn, _)) => obj < *bo - tie || ((obj - *bo).abs() <= tie && norm < *bn),
            };
            if better {
                best = Some((obj, norm, beta));
            }
        }
        // singletons are always solvable, so some support is feasible
        Ok(best.expect("a single-level support is always feasible").2)
    }

    /// Equality-constrained least squares on `support` via the KKT system
    /// `[G_S 1; 1ᵀ 0] [β; μ] = [b_S; 1]`. `None` if the system is singular.
    fn solve_on_support(&self, support: &[usize], b: &[T]) -> Option<Vec<T>> {
        let s = support.len();
        if s == 1 {
            return Some(vec![T::one()]);
        }
        let n = s + 1;
        let w = n + 1;
        let mut a = vec![T::zero(); n * w];
        for (r, &i) in support.iter().enumerate() {
            let row = &mut a[r * w..(r + 1) * w];
            for (c, &j) in support.iter().enumerate() {
                row[c] = self.gram[i][j];
            }
            row[s] = T::one();
            row[n] = b[i];
        }
        a[s * w..s * w + s].iter_mut().for_each(|v| *v = T::one());
        a[s * w + n] = T::one();
        let mut x = gauss_solve(&mut a, n)?;
        x.truncate(s);
        Some(x)
    }

    /// Primal active-set method on `½βᵀGβ − bᵀβ` over the simplex.
    ///
    /// The free set starts at the best vertex. Each pass solves the
    /// equality-constrained problem on the free set; an infeasible solution
    /// is approached as far as nonnegativity allows and the blocking levels
    /// are dropped, a feasible one is accepted and the excluded level with
    /// the most negative reduced gradient joins. Levels whose KKT system
    /// turns singular are skipped until the free set changes again.
    fn solve_active_set(&self, b: &[T]) -> Vec<T> {
        let d = self.columns.len();
        let start = (0..d)
            .min_by(|&i, &j| {
                let fi = self.gram[i][i] - T::lit(2.0) * b[i];
                let fj = self.gram[j][j] - T::lit(2.0) * b[j];
                fi.partial_cmp(&fj).unwrap()
            })
            .expect("at least one level");
        let mut beta = vec![T::zero(); d];
        beta[start] = T::one();
        let mut free = vec![start];
        let mut skipped = vec![false; d];
        let scale = (0..d).map(|i| self.gram[i][i]).fold(T::zero(), T::max).max(T::min_positive_value());
        let tol = T::lit(KKT_TOL) * scale;

        for _ in 0..(20 * d + 100) {
            let Some(z) = self.solve_on_support(&free, b) else {
                // the newest level made the system singular: undo and skip it
                let last = free.pop().expect("singletons are solvable");
                skipped[last] = true;
                continue;
            };
            if z.iter().all(|&v| v >= T::zero()) {
                for (&i, &v) in free.iter().zip(&z) {
                    beta[i] = v;
                }
                let grad: Vec<T> = (0..d).map(|i| dot(&self.gram[i], &beta) - b[i]).collect();
                let level = free.iter().map(|&i| grad[i]).sum::<T>() / T::from_count(free.len());
                let entering = (0..d)
                    .filter(|&i| !skipped[i] && beta[i] == T::zero() && !free.contains(&i))
                    .map(|i| (i, grad[i] - level))
                    .filter(|&(_, r)| r < -tol)
                    .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
                match entering {
                    Some((i, _)) => free.push(i),
                    None => break,
                }
            } else {
                let mut alpha = T::one();
                for (&i, &v) in free.iter().zip(&z) {
                    if v < T::zero() {
                        alpha = alpha.min(beta[i] / (beta[i] - v));
                    }
                }
                for (&i, &v) in free.iter().zip(&z) {
                    beta[i] = beta[i] + alpha * (v - beta[i]);
                }
                let blocking: Vec<usize> = free
                    .iter()
                    .zip(&z)
                    .filter(|&(&i, &v)| v < T::zero() && beta[i] <= T::epsilon())
                    .map(|(&i, _)| i)
                    .collect();
                let fallback = free
                    .iter()
                    .copied()
                    .min_by(|&i, &j| beta[i].partial_cmp(&beta[j]).unwrap())
                    .unwrap();
                let drop = if blocking.is_empty() { vec![fallback] } else { blocking };
                for i in drop {
                    beta[i] = T::zero();
                }
                free.retain(|&i| beta[i] > T::zero());
                let total: T = beta.iter().copied().sum();
                beta.iter_mut().for_each(|x| *x = *x / total);
            }
            skipped.iter_mut().for_each(|s| *s = false);
        }
        beta
    }

    fn solve_projected_gradient(&self, b: &[T]) -> Vec<T> {
        let d = self.columns.len();
        // f(β) = ½ βᵀGβ − bᵀβ, ∇f = Gβ − b, Lipschitz ≤ tr G
        let lipschitz = (0..d).map(|i| self.gram[i][i]).fold(T::zero(), |a, v| a + v);
        if !(lipschitz > T::zero()) {
            return self.initial_point();
        }
        let step = T::one() / lipschitz;
        let tol = T::lit(PG_TOL);
        let half = T::lit(0.5);

        let mut x = self.initial_point();
        let mut x_prev = x.clone();
        let mut t = T::one();
        let mut f_prev = self.gram_objective(&x, b) * half;
        let mut z = vec![T::zero(); d];
        let mut grad = vec![T::zero(); d];
        for _ in 0..PG_MAX_ITER {
            let t_next = (T::one() + (T::one() + T::lit(4.0) * t * t).sqrt()) * half;
            let momentum = (t - T::one()) / t_next;
            for i in 0..d {
                z[i] = x[i] + momentum * (x[i] - x_prev[i]);
            }
            for i in 0..d {
                grad[i] = dot(&self.gram[i], &z) - b[i];
            }
            for i in 0..d {
                z[i] = z[i] - step * grad[i];
            }
            let next = project_onto_simplex(&z);
            let f = self.gram_objective(&next, b) * half;
            if f > f_prev {
                // restart momentum from a plain gradient step at x
                t = T::one();
                for i in 0..d {
                    grad[i] = dot(&self.gram[i], &x) - b[i];
                    z[i] = x[i] - step * grad[i];
                }
                let plain = project_onto_simplex(&z);
                let fp = self.gram_objective(&plain, b) * half;
                let done = (f_prev - fp).abs() < tol;
                x_prev = std::mem::replace(&mut x, plain);
                f_prev = fp.min(f_prev);
                if done {
                    break;
                }
                continue;
            }
            let done = (f_prev - f).abs() < tol;
            x_prev = std::mem::replace(&mut x, next);
            t = t_next;
            f_prev = f;
            if done {
                break;
            }
        }
        x
    }

    /// Uniform over all levels, expressed on the merged columns.
    fn initial_point(&self) -> Vec<T> {
        let total = T::from_count(self.n_levels);
        self.groups.iter().map(|g| T::from_count(g.len()) / total).collect()
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Gaussian elimination with partial pivoting on a row-major augmented
/// `n × (n + 1)` matrix.
fn gauss_solve<T: Scalar>(a: &mut [T], n: usize) -> Option<Vec<T>> {
    let w = n + 1;
    let scale = (0..n)
        .flat_map(|r| a[r * w..r * w + n].iter())
        .fold(T::zero(), |m, v| m.max(v.abs()));
    if !(scale > T::zero()) {
        return None;
    }
    let tiny = scale * T::epsilon() * T::from_count(16 * n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * w + col].abs().partial_cmp(&a[j * w + col].abs()).unwrap())
            .unwrap();
        if a[pivot * w + col].abs() <= tiny {
            return None;
        }
        if pivot != col {
            for c in 0..w {
                a.swap(col * w + c, pivot * w + c);
            }
        }
        let (upper, lower) = a.split_at_mut((col + 1) * w);
        let prow = &upper[col * w..];
        for row in lower.chunks_exact_mut(w) {
            let f = row[col] / prow[col];
            if f == T::zero() {
                continue;
            }
            for c in col..w {
                row[c] = row[c] - f * prow[c];
            }
        }
    }
    let mut x = vec![T::zero(); n];
    for r in (0..n).rev() {
        let mut acc = a[r * w + n];
        for c in r + 1..n {
            acc = acc - a[r * w + c] * x[c];
        }
        x[r] = acc / a[r * w + r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_onto_simplex<T: Scalar>(v: &[T]) -> Vec<T> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = T::zero();
    let mut theta = T::zero();
    for (j, &uj) in u.iter().enumerate() {
        cumsum = cumsum + uj;
        let t = (cumsum - T::one()) / T::from_count(j + 1);
        if uj - t > T::zero() {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(T::zero())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    type GameSpec = crate::game::GameSpec<f64>;

    fn cols(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(|c| c.as_slice()).collect()
    }

    fn basis() -> Vec<Vec<f64>> {
        vec![
            vec![0.25, 0.25, 0.25, 0.25],
            vec![0.7, 0.2, 0.05, 0.05],
            vec![0.1, 0.6, 0.2, 0.1],
            vec![0.05, 0.15, 0.3, 0.5],
        ]
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_onto_simplex::<f64>(&[0.2, 0.8]), vec![0.2, 0.8]);
        let p = project_onto_simplex::<f64>(&[2.0, 0.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let p = project_onto_simplex::<f64>(&[0.5, 0.5, 0.5, 0.5]);
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let p = project_onto_simplex::<f64>(&[-3.0, 1.0, 1.5]);
        assert!((p[0]).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15 && (p[2] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn exact_member_recovered() {
        let b = basis();
        for method in [ClrMethod::Enumeration, ClrMethod::ActiveSet, ClrMethod::ProjectedGradient] {
            let solver = ClrSolver::from_columns(&cols(&b), Some(method));
            let sol = solver.solve(&b[2]).unwrap();
            assert!((sol.beta[2] - 1.0).abs() < 1e-6, "{method:?} {:?}", sol.beta);
            assert!(sol.residual < 1e-12);
        }
    }

    #[test]
    fn exact_combination_recovered() {
        let b = basis();
        let y: Vec<f64> = (0..4).map(|a| 0.3 * b[0][a] + 0.7 * b[1][a]).collect();
        let solver = ClrSolver::from_columns(&cols(&b), Some(ClrMethod::Enumeration));
        let sol = solver.solve(&y).unwrap();
        assert!((sol.beta[0] - 0.3).abs() < 1e-12 && (sol.beta[1] - 0.7).abs() < 1e-12);
        assert!(sol.residual <= 1e-12);
    }

    #[test]
    fn duplicates_split_evenly() {
        let u = vec![0.25; 4];
        let cols_v = vec![u.clone(), u.clone(), u.clone()];
        for method in [ClrMethod::Enumeration, ClrMethod::ActiveSet, ClrMethod::ProjectedGradient] {
            let solver = ClrSolver::from_columns(&cols(&cols_v), Some(method));
            assert_eq!(solver.distinct_levels(), 1);
            let sol = solver.solve(&[1.0, 0.0, 0.0, 0.0]).unwrap();
            assert!(sol.beta.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn outside_hull_projects_to_face() {
        // y lies beyond level 1 away from level 0: optimum is the vertex
        let b = vec![vec![0.5, 0.5], vec![0.8, 0.2]];
        let solver = ClrSolver::from_columns(&cols(&b), Some(ClrMethod::Enumeration));
        let sol = solver.solve(&[1.0, 0.0]).unwrap();
        assert_eq!(sol.beta, vec![0.0, 1.0]);
        assert!((sol.residual - 0.08).abs() < 1e-15);
    }

    #[test]
    fn dimension_checked() {
        let b = basis();
        let solver = ClrSolver::from_columns(&cols(&b), None);
        assert!(solver.solve(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn methods_agree_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let k = 12;
            let d = 6;
            let b: Vec<Vec<f64>> = (0..d)
                .map(|_| {
                    let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
                    let s: f64 = w.iter().sum();
                    w.into_iter().map(|x| x / s).collect()
                })
                .collect();
            let y: Vec<f64> = {
                let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>().powi(3)).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|x| x / s).collect()
            };
            let exact = ClrSolver::from_columns(&cols(&b), Some(ClrMethod::Enumeration)).solve(&y).unwrap();
            let pg = ClrSolver::from_columns(&cols(&b), Some(ClrMethod::ProjectedGradient))
                .solve(&y)
                .unwrap();
            assert!(pg.residual >= exact.residual - 1e-14);
            assert!(pg.residual - exact.residual < 1e-8, "{} vs {}", pg.residual, exact.residual);
            let primal = ClrSolver::from_columns(&cols(&b), Some(ClrMethod::ActiveSet)).solve(&y).unwrap();
            assert!((primal.residual - exact.residual).abs() < 1e-14, "{} vs {}", primal.residual, exact.residual);
            assert!((primal.beta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(primal.beta.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn active_set_matches_enumeration_with_many_levels() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let (k, d) = (20, 12);
            let b: Vec<Vec<f64>> = (0..d)
                .map(|_| {
                    let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>().powi(4)).collect();
                    let s: f64 = w.iter().sum();
                    w.into_iter().map(|x| x / s).collect()
                })
                .collect();
            let mut y = vec![0.0; k];
            for _ in 0..7 {
                y[rng.random_range(0..k)] += 1.0 / 7.0;
            }
            let exact = ClrSolver::from_columns(&cols(&b), Some(ClrMethod::Enumeration)).solve(&y).unwrap();
            let primal = ClrSolver::from_columns(&cols(&b), Some(ClrMethod::ActiveSet)).solve(&y).unwrap();
            assert!((primal.residual - exact.residual).abs() < 1e-13, "{} vs {}", primal.residual, exact.residual);
        }
    }

    #[test]
    fn active_set_is_default_on_deep_hierarchies() {
        use crate::hierarchy::{build_hierarchy, LevelDistribution};
        use rand::{Rng, SeedableRng};
        let spec = GameSpec::lab();
        let h = build_hierarchy(&LevelDistribution::uniform(40), 8.0, &spec).unwrap();
        let solver = ClrSolver::new(&h);
        assert_eq!(solver.method(), ClrMethod::ActiveSet);
        let pg = ClrSolver::with_method(&h, ClrMethod::ProjectedGradient);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let mut y = vec![0.0; 99];
            for _ in 0..7 {
                y[rng.random_range(0..15)] += 1.0 / 7.0;
            }
            let a = solver.solve(&y).unwrap();
            let p = pg.solve(&y).unwrap();
            // the exact method is never worse than the iterative one
            assert!(a.residual <= p.residual + 1e-12, "{} vs {}", a.residual, p.residual);
            assert!((a.beta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
