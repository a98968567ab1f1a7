//! Core engine for robust mission scheduling.
//!
//! A mission is a set of research projects, each an activity network with
//! uncertain durations, competing for crew and equipment on a sol-structured
//! calendar. This crate provides:
//!
//! - [`model`]: project/activity/constraint types, validation, merging and the
//!   canonical model file format;
//! - [`durations`]: duration sampling (modified PERT, discrete), counter-based
//!   scenario streams and exact scenario enumeration;
//! - [`dispatch`]: the as-soon-as-possible dispatcher that executes a schedule
//!   under one scenario;
//! - [`robustness`]: Monte Carlo and exact success probability plus KPIs;
//! - [`tree`]: decision/scenario trees and backward induction;
//! - [`optimizer`]: local search over schedules under common random numbers;
//! - [`mission`]: the event-sourced mission ledger and online reoptimization.

pub mod dispatch;
pub mod durations;
pub mod fixtures;
pub mod mission;
pub mod model;
pub mod optimizer;
pub mod robustness;
pub mod synth;
pub mod tree;

mod network;

pub use dispatch::{
    deterministic_view, dispatch, DispatchError, DispatchProtocol, ExecutionTrace, FailureKind,
    FailureReason, Schedule, TraceEntry,
};
pub use durations::{enumerate_scenarios, sample_duration, sample_scenario, Scenario, ScenarioError};
pub use mission::{ActualEvent, EventKind, MissionCommand, MissionError, MissionJournal, MissionState, ModelEdit};
pub use model::{
    merge_mission, validate_model, Activity, DurationModel, KpiWeights, MissionCalendar,
    MissionModel, ModelError, ModelFile, ProjectModel, Resource, TemporalConstraint,
    ValidationReport,
};
pub use optimizer::{optimize, score_schedule, CancelToken, SearchConfig, SearchResult};
pub use robustness::{compare_schedules, estimate_robustness, exact_robustness, RobustnessEstimate};
pub use tree::{evaluate_multistage, DecisionTree};

/// Absolute time in minutes since the start of sol 0.
pub type Minute = i64;
