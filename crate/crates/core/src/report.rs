//! Model fits on a window of rounds and the goodness-of-fit record for each.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::pooled_counts;
use crate::error::{Error, Result};
use crate::game::{GameSpec, Strategy};
use crate::hierarchy::{fit_lambda, GridSpec, LevelSource};
use crate::ipl::{ipl_fit_lambda, AgentTrace, IplConfig};
use crate::metrics::{
    chi_squared, log_likelihood, proportion_below, wasserstein_1d, DEFAULT_BIN_SIZE, DEFAULT_NUM_BINS,
};
use crate::pne::{solve_pne, DEFAULT_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Pne,
    Qch,
    QchIpl,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Pne => "pne",
            ModelKind::Qch => "qch",
            ModelKind::QchIpl => "qch-ipl",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pne" => Ok(ModelKind::Pne),
            "qch" => Ok(ModelKind::Qch),
            "qch-ipl" => Ok(ModelKind::QchIpl),
            other => Err(Error::arg(format!("unknown model `{other}` (expected pne, qch or qch-ipl)"))),
        }
    }
}

/// Everything a fit needs besides the data.
#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub spec: GameSpec<f64>,
    /// Poisson mean of the level distribution; required for `qch`.
    pub tau: Option<f64>,
    pub grid: GridSpec,
    pub ipl: IplConfig,
    pub restarts: usize,
    pub seed: u64,
    pub bin_size: usize,
    pub num_bins: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            spec: GameSpec::lab(),
            tau: None,
            grid: GridSpec::default(),
            ipl: IplConfig::default(),
            restarts: 5,
            seed: 0,
            bin_size: DEFAULT_BIN_SIZE,
            num_bins: DEFAULT_NUM_BINS,
        }
    }
}

/// A fitted model's predicted action distribution and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub model: ModelKind,
    pub prediction: Strategy<f64>,
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
    /// Population level distribution (qch-ipl).
    pub population: Option<Vec<f64>>,
    /// `(agent id, mean reasoning level)` (qch-ipl).
    pub mean_levels: Option<Vec<(u32, f64)>>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
}

impl ModelFit {
    fn bare(model: ModelKind, prediction: Strategy<f64>) -> Self {
        ModelFit {
            model,
            prediction,
            lambda: None,
            tau: None,
            population: None,
            mean_levels: None,
            iterations: None,
            converged: None,
        }
    }
}

pub fn fit_model(model: ModelKind, traces: &[AgentTrace<f64>], opts: &FitOptions) -> Result<ModelFit> {
    match model {
        ModelKind::Pne => Ok(ModelFit::bare(model, solve_pne(&opts.spec, DEFAULT_TOL, None)?)),
        ModelKind::Qch => {
            let tau = opts
                .tau
                .ok_or_else(|| Error::arg("the qch model needs a tau value"))?;
            let counts = pooled_counts(traces);
            let source = LevelSource::Poisson {
                tau,
                max_level: opts.ipl.max_level,
            };
            let fit = fit_lambda(&counts, &source, &opts.spec, &opts.grid)?;
            Ok(ModelFit {
                lambda: Some(fit.lambda),
                tau: Some(tau),
                ..ModelFit::bare(model, fit.prediction)
            })
        }
        ModelKind::QchIpl => {
            let (result, lambda) =
                ipl_fit_lambda(traces, &opts.spec, &opts.grid, &opts.ipl, opts.restarts, opts.seed)?;
            Ok(ModelFit {
                lambda: Some(lambda),
                population: Some(result.population.weights().to_vec()),
                mean_levels: Some(result.agent_fits.iter().map(|f| (f.agent_id, f.mean_level)).collect()),
                iterations: Some(result.iterations),
                converged: Some(result.converged),
                ..ModelFit::bare(model, result.prediction())
            })
        }
    }
}

/// Goodness-of-fit record of one model on one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: ModelKind,
    pub week: Option<u32>,
    pub first_round: u32,
    pub last_round: u32,
    pub loglik: f64,
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
    pub chi2: f64,
    pub df: usize,
    pub stars: String,
    /// χ² bins with expected count below 5.
    pub sparse_bins: Vec<usize>,
    pub proportion_below: f64,
    pub wasserstein: f64,
    /// Fitted action distribution over `1..=k`.
    pub prediction: Vec<f64>,
    pub population: Option<Vec<f64>>,
    pub mean_levels: Option<Vec<(u32, f64)>>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
}

/// Average submissions of each action per round.
pub fn average_daily_counts(traces: &[AgentTrace<f64>]) -> Result<Vec<f64>> {
    let days = traces
        .first()
        .map(|t| t.choices().len())
        .ok_or_else(|| Error::arg("no traces"))?;
    if traces.iter().any(|t| t.choices().len() != days) {
        return Err(Error::arg("traces cover different numbers of rounds"));
    }
    Ok(pooled_counts(traces).into_iter().map(|c| c / days as f64).collect())
}

/// Scores a fitted prediction against the window's traces. `first_round`
/// and `last_round` only label the record.
pub fn evaluate(
    fit: &ModelFit,
    traces: &[AgentTrace<f64>],
    week: Option<u32>,
    rounds: (u32, u32),
    opts: &FitOptions,
) -> Result<FitReport> {
    let counts = pooled_counts(traces);
    let empirical = Strategy::from_counts(&counts)?;
    let daily = average_daily_counts(traces)?;
    let per_day = traces.len() as f64;
    let chi = chi_squared(&daily, &fit.prediction, per_day, opts.bin_size, opts.num_bins)?;
    Ok(FitReport {
        model: fit.model,
        week,
        first_round: rounds.0,
        last_round: rounds.1,
        loglik: log_likelihood(&counts, &fit.prediction)?,
        lambda: fit.lambda,
        tau: fit.tau,
        chi2: chi.chi2,
        df: chi.df,
        stars: chi.significance().stars().to_string(),
        sparse_bins: chi.binned.sparse_bins(),
        proportion_below: proportion_below(&empirical, &fit.prediction)?,
        wasserstein: wasserstein_1d(&empirical, &fit.prediction)?,
        prediction: fit.prediction.probs().to_vec(),
        population: fit.population.clone(),
        mean_levels: fit.mean_levels.clone(),
        iterations: fit.iterations,
        converged: fit.converged,
    })
}

impl FitReport {
    /// One-line JSON document.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse {
            line: e.line() as u64,
            message: e.to_string(),
        })
    }
}

/// Renders reports of several models and weeks as a goodness-of-fit table.
pub fn render_table(reports: &[FitReport]) -> String {
    let mut weeks: Vec<Option<u32>> = reports.iter().map(|r| r.week).collect();
    weeks.sort();
    weeks.dedup();
    let mut models: Vec<ModelKind> = Vec::new();
    for r in reports {
        if !models.contains(&r.model) {
            models.push(r.model);
        }
    }

    let label = |w: &Option<u32>| w.map_or_else(|| "all".to_string(), |w| format!("({w})"));
    let mut out = String::new();
    out.push_str(&format!("{:<34}", "Week"));
    for w in &weeks {
        out.push_str(&format!("{:>10}", label(w)));
    }
    out.push_str(&format!("{:>10}\n", "Average"));

    for model in models {
        let row = |w: &Option<u32>| reports.iter().find(|r| r.model == model && r.week == *w);
        out.push_str(&format!("{}\n", model_title(model)));
        let mut line = |name: &str, cell: &dyn Fn(&FitReport) -> Option<String>, avg: Option<&dyn Fn(&FitReport) -> f64>| {
            let cells: Vec<Option<String>> = weeks.iter().map(|w| row(w).and_then(cell)).collect();
            if cells.iter().all(Option::is_none) {
                return;
            }
            out.push_str(&format!("  {:<32}", name));
            for c in &cells {
                out.push_str(&format!("{:>10}", c.as_deref().unwrap_or("-")));
            }
            let avg = avg.and_then(|f| {
                let vals: Vec<f64> = weeks.iter().filter_map(|w| row(w)).map(f).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            });
            out.push_str(&format!("{:>10}\n", avg.map_or("-".to_string(), |a| format!("{a:.4}"))));
        };
        if model != ModelKind::Pne {
            line("Log-likelihood", &|r| Some(format!("{:.1}", r.loglik)), None);
        }
        line("tau", &|r| r.tau.map(|t| format!("{t:.2}")), None);
        line("lambda", &|r| r.lambda.map(|l| format!("{l:.2}")), None);
        line("Chi-squared (average frequency)", &|r| Some(format!("{:.2}", r.chi2)), None);
        line("(Degrees of freedom)", &|r| Some(format!("({}){}", r.df, r.stars)), None);
        line(
            "Proportion below (percent)",
            &|r| Some(format!("{:.2}", r.proportion_below)),
            Some(&|r| r.proportion_below),
        );
        line(
            "Wasserstein distance",
            &|r| Some(format!("{:.4}", r.wasserstein)),
            Some(&|r| r.wasserstein),
        );
    }
    out
}

fn model_title(model: ModelKind) -> &'static str {
    match model {
        ModelKind::Pne => "Poisson-Nash equilibrium",
        ModelKind::Qch => "QCH model",
        ModelKind::QchIpl => "QCH-IPL model",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    type GameSpec = crate::game::GameSpec<f64>;
    use crate::data::synthesize_traces;
    use crate::hierarchy::poisson_levels;

    fn traces() -> Vec<AgentTrace<f64>> {
        let spec = GameSpec::lab();
        let p = poisson_levels(2.0, 4).unwrap();
        synthesize_traces(&vec![p; 38], 8.0, &spec, 7, 4).unwrap()
    }

    fn opts() -> FitOptions {
        FitOptions {
            tau: Some(2.0),
            grid: GridSpec::new(2.0, 14.0, 13).unwrap(),
            ipl: IplConfig {
                max_level: 4,
                ..IplConfig::default()
            },
            restarts: 2,
            ..FitOptions::default()
        }
    }

    #[test]
    fn model_names_round_trip() {
        for m in [ModelKind::Pne, ModelKind::Qch, ModelKind::QchIpl] {
            assert_eq!(m.name().parse::<ModelKind>().unwrap(), m);
        }
        assert!("ql".parse::<ModelKind>().is_err());
    }

    #[test]
    fn qch_needs_tau() {
        let o = FitOptions { tau: None, ..opts() };
        assert!(fit_model(ModelKind::Qch, &traces(), &o).is_err());
    }

    #[test]
    fn reports_serialize_and_render() {
        let t = traces();
        let o = opts();
        let mut reports = Vec::new();
        for m in [ModelKind::Pne, ModelKind::Qch, ModelKind::QchIpl] {
            let fit = fit_model(m, &t, &o).unwrap();
            let r = evaluate(&fit, &t, Some(1), (1, 7), &o).unwrap();
            assert_eq!(r.df, 5);
            assert!((0.0..=100.0).contains(&r.proportion_below));
            let back = FitReport::from_json(&r.to_json()).unwrap();
            assert_eq!(back, r);
            reports.push(r);
        }
        let ipl = &reports[2];
        assert_eq!(ipl.mean_levels.as_ref().unwrap().len(), 38);
        assert_eq!(ipl.population.as_ref().unwrap().len(), 5);
        let table = render_table(&reports);
        assert!(table.contains("Poisson-Nash equilibrium"));
        assert!(table.contains("QCH-IPL model"));
        assert!(table.contains("Wasserstein distance"));
    }

    #[test]
    fn daily_counts_average_over_rounds() {
        let t = traces();
        let daily = average_daily_counts(&t).unwrap();
        assert!((daily.iter().sum::<f64>() - 38.0).abs() < 1e-12);
    }
}
