//! Iterative population learning.
//!
//! Starting from a random population level distribution `p`, each iteration
//! builds the quantal hierarchy for `p`, regresses every agent's action
//! frequencies onto the level strategies (simplex-constrained least
//! squares), and averages the per-agent weights into the next `p`. The loop
//! stops once `p` moves by less than `ε` in L2. The precision is held fixed
//! inside the loop; [`ipl_fit_lambda`] searches it on a grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clr::ClrSolver;
use crate::data::pooled_counts;
use crate::error::{Error, Result};
use crate::game::{GameSpec, Strategy};
use crate::hierarchy::{build_hierarchy, predict, GridSpec, Hierarchy, LevelDistribution, DEFAULT_MAX_LEVEL};
use crate::metrics::log_likelihood;
use crate::scalar::Scalar;

/// One participant's choices over a window of rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrace<T> {
    agent_id: u32,
    choices: Vec<usize>,
    freq: Strategy<T>,
}

impl<T: Scalar> AgentTrace<T> {
    /// `choices` are one-based actions in `1..=k`.
    pub fn new(agent_id: u32, choices: Vec<usize>, k: usize) -> Result<Self> {
        if choices.is_empty() {
            return Err(Error::arg(format!("agent {agent_id} has no choices")));
        }
        if let Some(bad) = choices.iter().find(|&&c| c == 0 || c > k) {
            return Err(Error::arg(format!("agent {agent_id} choice {bad} outside 1..={k}")));
        }
        let mut counts = vec![T::zero(); k];
        for &c in &choices {
            counts[c - 1] = counts[c - 1] + T::one();
        }
        let freq = Strategy::from_counts(&counts)?;
        Ok(AgentTrace {
            agent_id,
            choices,
            freq,
        })
    }

    pub fn agent_id(&self) -> u32 {
        self.agent_id
    }

    pub fn choices(&self) -> &[usize] {
        &self.choices
    }

    /// Empirical action frequencies.
    pub fn freq(&self) -> &Strategy<T> {
        &self.freq
    }
}

/// Per-agent regression result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentFit<T> {
    pub agent_id: u32,
    pub beta: LevelDistribution<T>,
    /// Attained sum of squared residuals.
    pub residual: T,
    pub mean_level: T,
}

/// Regresses one agent's frequencies onto the hierarchy's level strategies.
pub fn clr_fit<T: Scalar>(hierarchy: &Hierarchy<T>, trace: &AgentTrace<T>) -> Result<AgentFit<T>> {
    fit_with(&ClrSolver::new(hierarchy), hierarchy, trace)
}

fn fit_with<T: Scalar>(solver: &ClrSolver<T>, hierarchy: &Hierarchy<T>, trace: &AgentTrace<T>) -> Result<AgentFit<T>> {
    if trace.freq.len() != hierarchy.spec().k() {
        return Err(Error::DimensionMismatch {
            expected: hierarchy.spec().k(),
            got: trace.freq.len(),
        });
    }
    let sol = solver.solve(trace.freq.probs())?;
    let beta = LevelDistribution::from_vec_unchecked(sol.beta);
    Ok(AgentFit {
        agent_id: trace.agent_id,
        mean_level: beta.mean_level(),
        beta,
        residual: sol.residual,
    })
}

/// Fits every agent against one hierarchy, sharing the regression design.
pub fn clr_fit_all<T: Scalar>(hierarchy: &Hierarchy<T>, traces: &[AgentTrace<T>]) -> Result<Vec<AgentFit<T>>> {
    let solver = ClrSolver::new(hierarchy);
    traces
        .par_iter()
        .map(|t| fit_with(&solver, hierarchy, t))
        .collect()
}

/// Simple average of the agents' level weights.
pub fn aggregate<T: Scalar>(fits: &[AgentFit<T>]) -> Result<LevelDistribution<T>> {
    let betas: Vec<&LevelDistribution<T>> = fits.iter().map(|f| &f.beta).collect();
    average(&betas)
}

pub(crate) fn aggregate_betas<T: Scalar>(betas: &[LevelDistribution<T>]) -> Result<LevelDistribution<T>> {
    let refs: Vec<&LevelDistribution<T>> = betas.iter().collect();
    average(&refs)
}

fn average<T: Scalar>(betas: &[&LevelDistribution<T>]) -> Result<LevelDistribution<T>> {
    let first = betas.first().ok_or_else(|| Error::arg("cannot aggregate zero agents"))?;
    let len = first.weights().len();
    let mut sum = vec![T::zero(); len];
    for b in betas {
        if b.weights().len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                got: b.weights().len(),
            });
        }
        for (s, &w) in sum.iter_mut().zip(b.weights()) {
            *s = *s + w;
        }
    }
    let n = T::from_count(betas.len());
    Ok(LevelDistribution::from_vec_unchecked(sum.into_iter().map(|s| s / n).collect()))
}

/// Loop settings shared by [`ipl_run`] and [`ipl_fit_lambda`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IplConfig {
    /// Highest reasoning level `m`.
    pub max_level: usize,
    /// L2 threshold on consecutive population vectors.
    pub epsilon: f64,
    pub max_iter: usize,
}

impl Default for IplConfig {
    fn default() -> Self {
        IplConfig {
            max_level: DEFAULT_MAX_LEVEL,
            epsilon: 1e-4,
            max_iter: 100,
        }
    }
}

impl IplConfig {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::arg(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iter == 0 {
            return Err(Error::arg("max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// State of one iteration: the population it started from, its
/// log-likelihood and how far the update moved it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord<T> {
    pub population: LevelDistribution<T>,
    pub loglik: T,
    /// `‖p^{t+1} − p^t‖₂`.
    pub step: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IplResult<T> {
    /// Population the returned hierarchy was built from.
    pub population: LevelDistribution<T>,
    pub hierarchy: Hierarchy<T>,
    /// Agent regressions against `hierarchy`.
    pub agent_fits: Vec<AgentFit<T>>,
    /// Iterations executed.
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood of the pooled counts under `predict(population, hierarchy)`.
    pub loglik: T,
    pub trajectory: Vec<IterationRecord<T>>,
    pub seed: u64,
}

impl<T: Scalar> IplResult<T> {
    pub fn lambda(&self) -> T {
        self.hierarchy.lambda()
    }

    /// Aggregate action distribution predicted by the returned state.
    pub fn prediction(&self) -> Strategy<T> {
        predict(&self.population, &self.hierarchy).expect("dimensions agree by construction")
    }
}

struct IterationState<T> {
    population: LevelDistribution<T>,
    hierarchy: Hierarchy<T>,
    fits: Vec<AgentFit<T>>,
    next: LevelDistribution<T>,
    loglik: T,
}

fn iterate<T: Scalar>(
    population: LevelDistribution<T>,
    lambda: T,
    spec: &GameSpec<T>,
    traces: &[AgentTrace<T>],
    counts: &[T],
) -> Result<IterationState<T>> {
    let hierarchy = build_hierarchy(&population, lambda, spec)?;
    let fits = clr_fit_all(&hierarchy, traces)?;
    let next = aggregate(&fits)?;
    let loglik = log_likelihood(counts, &predict(&population, &hierarchy)?)?;
    Ok(IterationState {
        population,
        hierarchy,
        fits,
        next,
        loglik,
    })
}

fn random_population<T: Scalar>(max_level: usize, seed: u64) -> LevelDistribution<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..=max_level).map(|_| rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    LevelDistribution::from_vec_unchecked(raw.into_iter().map(|x| T::lit(x / total)).collect())
}

fn check_traces<T: Scalar>(traces: &[AgentTrace<T>], spec: &GameSpec<T>) -> Result<()> {
    if traces.is_empty() {
        return Err(Error::arg("need at least one agent trace"));
    }
    if let Some(t) = traces.iter().find(|t| t.freq.len() != spec.k()) {
        return Err(Error::DimensionMismatch {
            expected: spec.k(),
            got: t.freq.len(),
        });
    }
    Ok(())
}

/// Runs the learning loop at a fixed precision.
///
/// On convergence the returned state is the iteration whose update moved
/// the population by less than `ε`. Otherwise it is the visited state with
/// the highest pooled log-likelihood (earliest on ties).
pub fn ipl_run<T: Scalar>(
    traces: &[AgentTrace<T>],
    lambda: T,
    spec: &GameSpec<T>,
    config: &IplConfig,
    seed: u64,
) -> Result<IplResult<T>> {
    config.validate()?;
    check_traces(traces, spec)?;
    if lambda.is_nan() || lambda < T::zero() {
        return Err(Error::arg(format!("precision must be nonnegative, got {lambda}")));
    }
    let counts = pooled_counts(traces);
    let epsilon = T::lit(config.epsilon);

    let mut population = random_population(config.max_level, seed);
    let mut trajectory = Vec::new();
    let mut best: Option<IterationState<T>> = None;

    for t in 1..=config.max_iter {
        let state = iterate(population, lambda, spec, traces, &counts)?;
        let step = state.population.l2_distance(&state.next);
        trajectory.push(IterationRecord {
            population: state.population.clone(),
            loglik: state.loglik,
            step,
        });
        if step < epsilon {
            return Ok(finish(state, t, true, trajectory, seed));
        }
        population = state.next.clone();
        if best.as_ref().is_none_or(|b| state.loglik > b.loglik) {
            best = Some(state);
        }
    }
    let best = best.expect("at least one iteration ran");
    Ok(finish(best, config.max_iter, false, trajectory, seed))
}

fn finish<T: Scalar>(
    state: IterationState<T>,
    iterations: usize,
    converged: bool,
    trajectory: Vec<IterationRecord<T>>,
    seed: u64,
) -> IplResult<T> {
    IplResult {
        population: state.population,
        hierarchy: state.hierarchy,
        agent_fits: state.fits,
        iterations,
        converged,
        loglik: state.loglik,
        trajectory,
        seed,
    }
}

/// Seed of restart `r` derived from the base seed.
pub fn restart_seed(seed: u64, restart: usize) -> u64 {
    // splitmix64 step keeps neighbouring restarts decorrelated
    let mut z = seed.wrapping_add((restart as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Grid search over the precision with several random restarts each.
///
/// Returns the run with the highest final log-likelihood; ties go to the
/// smaller precision, then the lower restart index.
pub fn ipl_fit_lambda<T: Scalar>(
    traces: &[AgentTrace<T>],
    spec: &GameSpec<T>,
    grid: &GridSpec,
    config: &IplConfig,
    restarts: usize,
    seed: u64,
) -> Result<(IplResult<T>, T)> {
    grid.validate()?;
    config.validate()?;
    check_traces(traces, spec)?;
    if restarts == 0 {
        return Err(Error::arg("restarts must be at least 1"));
    }
    let jobs: Vec<(usize, f64, usize)> = grid
        .points()
        .into_iter()
        .enumerate()
        .flat_map(|(i, l)| (0..restarts).map(move |r| (i, l, r)))
        .collect();
    // jobs are ordered by (grid index, restart); the lowest index wins ties
    let better = |a: (usize, IplResult<T>), b: (usize, IplResult<T>)| {
        if b.1.loglik > a.1.loglik || (b.1.loglik == a.1.loglik && b.0 < a.0) {
            b
        } else {
            a
        }
    };
    let best = jobs
        .par_iter()
        .enumerate()
        .map(|(idx, &(_, l, r))| ipl_run(traces, T::lit(l), spec, config, restart_seed(seed, r)).map(|run| (idx, run)))
        .try_reduce_with(|a, b| Ok(better(a, b)))
        .expect("grid and restarts are nonempty")?
        .1;
    let lambda = best.lambda();
    Ok((best, lambda))
}

/// L2 distance between `result.population` and the population one further
/// iteration produces from it.
pub fn fixed_point_residual<T: Scalar>(
    result: &IplResult<T>,
    traces: &[AgentTrace<T>],
    spec: &GameSpec<T>,
) -> Result<T> {
    check_traces(traces, spec)?;
    let hierarchy = build_hierarchy(&result.population, result.lambda(), spec)?;
    let next = aggregate(&clr_fit_all(&hierarchy, traces)?)?;
    Ok(result.population.l2_distance(&next))
}
