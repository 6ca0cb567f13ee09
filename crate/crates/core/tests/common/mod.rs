//! Independent reference computations used by the acceptance checks.

use rand::Rng;
use rand_distr::{weighted::WeightedAliasIndex, Distribution, Poisson};

/// Dense Gaussian elimination with partial pivoting; `None` when singular.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Optimal transport cost between `a` and `b` on points `0..n` with cost
/// `|i − j|`, by enumerating every basic solution of the transport LP.
pub fn transport_lp(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let basis = 2 * n - 1;
    let mut best = f64::INFINITY;
    for subset in combinations(cells.len(), basis) {
        // row sums for every row, column sums for all but the last column
        let mut m = vec![vec![0.0; basis]; basis];
        let mut rhs = vec![0.0; basis];
        for (v, &ci) in subset.iter().enumerate() {
            let (i, j) = cells[ci];
            m[i][v] = 1.0;
            if j + 1 < n {
                m[n + j][v] = 1.0;
            }
        }
        rhs[..n].copy_from_slice(a);
        rhs[n..].copy_from_slice(&b[..n - 1]);
        let Some(x) = solve_linear(m, rhs) else {
            continue;
        };
        if x.iter().any(|&v| v < -1e-12) {
            continue;
        }
        let cost: f64 = subset
            .iter()
            .zip(&x)
            .map(|(&ci, &v)| {
                let (i, j) = cells[ci];
                v * (i as f64 - j as f64).abs()
            })
            .sum();
        best = best.min(cost);
    }
    best
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Minimum of `‖y − Σ β_l col_l‖²` over the grid `β ∈ {0, h, 2h, ..} ∩ simplex`
/// for exactly four columns, `h = 1 / steps`.
pub fn simplex_grid_min(cols: &[Vec<f64>], y: &[f64], steps: usize) -> f64 {
    assert_eq!(cols.len(), 4);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let g: Vec<Vec<f64>> = cols.iter().map(|a| cols.iter().map(|b| dot(a, b)).collect()).collect();
    let c: Vec<f64> = cols.iter().map(|a| dot(a, y)).collect();
    let yy = dot(y, y);
    let h = 1.0 / steps as f64;
    let mut best = f64::INFINITY;
    for i in 0..=steps {
        for j in 0..=steps - i {
            let (b0, b1) = (i as f64 * h, j as f64 * h);
            let rest = steps - i - j;
            let r = rest as f64 * h;
            // β = (b0, b1, t, r − t); objective is quadratic in t
            let base = [b0, b1, 0.0, r];
            let dir = [0.0, 0.0, 1.0, -1.0];
            let quad = |u: &[f64; 4], v: &[f64; 4]| -> f64 {
                let mut s = 0.0;
                for p in 0..4 {
                    for q in 0..4 {
                        s += u[p] * g[p][q] * v[q];
                    }
                }
                s
            };
            let lin = |u: &[f64; 4]| -> f64 { (0..4).map(|p| u[p] * c[p]).sum() };
            let a2 = quad(&dir, &dir);
            let a1 = 2.0 * quad(&base, &dir) - 2.0 * lin(&dir);
            let a0 = quad(&base, &base) - 2.0 * lin(&base) + yy;
            for l in 0..=rest {
                let t = l as f64 * h;
                let f = a0 + t * (a1 + t * a2);
                if f < best {
                    best = f;
                }
            }
        }
    }
    best.max(0.0)
}

/// Monte-Carlo estimate of each action's win probability against a
/// Poisson(`n`) population mixing over `strategy`: a player on action `k`
/// wins when nobody else picked `k` and no lower action was picked by
/// exactly one other player.
pub fn simulate_win_probabilities<R: Rng>(strategy: &[f64], n: f64, trials: u64, rng: &mut R) -> Vec<f64> {
    let k = strategy.len();
    let pick = WeightedAliasIndex::new(strategy.to_vec()).expect("valid weights");
    let pop = Poisson::new(n).expect("positive mean");
    let mut wins = vec![0u64; k];
    let mut counts = vec![0u32; k];
    for _ in 0..trials {
        counts.iter_mut().for_each(|c| *c = 0);
        let others = pop.sample(rng) as u64;
        for _ in 0..others {
            counts[pick.sample(rng)] += 1;
        }
        let mut blocked = false;
        for a in 0..k {
            if counts[a] == 0 && !blocked {
                wins[a] += 1;
            }
            blocked |= counts[a] == 1;
        }
    }
    wins.into_iter().map(|w| w as f64 / trials as f64).collect()
}

/// Root of a continuous increasing function on `[lo, hi]` by bisection.
pub fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A point drawn uniformly from the probability simplex of dimension `k`.
pub fn random_simplex<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}
