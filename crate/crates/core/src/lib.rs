//! Multi-resource allocation by additive increase / multiplicative decrease.
//!
//! Devices hold private convex costs and only ever see one bit per resource
//! per step from a control unit. Each device grows its demand linearly and,
//! on a capacity event, backs off either deterministically (by a scaling
//! factor derived from its own marginal cost) or with that factor as a
//! probability. Long-run average allocations approach the social optimum,
//! which [`oracle`] computes centrally for comparison.

pub mod aimd;
pub mod compare;
pub mod config;
pub mod control;
pub mod cost;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod report;
pub mod seeds;

pub use aimd::{
    additive_increase, md_deterministic, md_stochastic, scaling_factor, update_average,
    DeviceState, Mode, ResourceParams,
};
pub use compare::{compare_modes, compare_traces, ComparisonReport};
pub use config::{parse_config, serialize_config, Config, CostSpec, RunMode};
pub use control::{evaluate_capacity_events, CapacityEventVector, EventLog};
pub use cost::{Cost, CostCase, CostCoefficients, CostFunction};
pub use engine::{init_world, run, step_world, Trace, WorldState};
pub use error::{Error, Result};
pub use metrics::{collect_metrics, MetricsReport};
pub use oracle::{kkt_residual, solve_projected_gradient, solve_separable, OptimalAllocation};
pub use report::export_trace;
