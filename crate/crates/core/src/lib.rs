//! Behavioral models for the lowest-unique-positive-integer (LUPI) game.
//!
//! Three models are fitted to choice data:
//!
//! * the Poisson-Nash equilibrium ([`pne`]),
//! * the Poisson quantal cognitive hierarchy with a fixed level
//!   distribution ([`hierarchy`]),
//! * iterative population learning, which learns each agent's level mixture
//!   by constrained regression and re-derives the hierarchy until the
//!   population settles ([`ipl`], [`clr`]).
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64`/`*32` aliases below pin the common choices.

pub mod clr;
pub mod data;
pub mod error;
pub mod game;
pub mod hierarchy;
pub mod ipl;
pub mod metrics;
pub mod pne;
pub mod report;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use data::{
    load_lab_dataset, pooled_counts, synthesize_traces, weekly_traces, window_traces, DatasetShape, LabDataset,
    WeekWindow,
};
pub use game::{expected_utilities, quantal_response, win_probability};
pub use hierarchy::{build_hierarchy, fit_lambda, poisson_levels, predict, GridSpec, LevelSource};
pub use ipl::{aggregate, clr_fit, fixed_point_residual, ipl_fit_lambda, ipl_run, IplConfig};
pub use metrics::{chi_squared, log_likelihood, proportion_below, wasserstein_1d, Significance};
pub use pne::solve_pne;
pub use report::{evaluate, fit_model, render_table, FitOptions, FitReport, ModelFit, ModelKind};

pub type GameSpec64 = game::GameSpec<f64>;
pub type Strategy64 = game::Strategy<f64>;
pub type UtilityVector64 = game::UtilityVector<f64>;
pub type LevelDistribution64 = hierarchy::LevelDistribution<f64>;
pub type Hierarchy64 = hierarchy::Hierarchy<f64>;
pub type AgentTrace64 = ipl::AgentTrace<f64>;
pub type AgentFit64 = ipl::AgentFit<f64>;
pub type IplResult64 = ipl::IplResult<f64>;

pub type GameSpec32 = game::GameSpec<f32>;
pub type Strategy32 = game::Strategy<f32>;
pub type UtilityVector32 = game::UtilityVector<f32>;
pub type LevelDistribution32 = hierarchy::LevelDistribution<f32>;
pub type Hierarchy32 = hierarchy::Hierarchy<f32>;
pub type AgentTrace32 = ipl::AgentTrace<f32>;
pub type AgentFit32 = ipl::AgentFit<f32>;
pub type IplResult32 = ipl::IplResult<f32>;
