//! Joint bandwidth partitioning, traffic steering, association and power
//! control for a spectrum-sharing satellite–terrestrial downlink, planned on
//! digital-twin predictions and recalibrated on actual channels.

pub mod algorithms;
pub mod channel;
pub mod error;
pub mod harness;
pub mod model;
pub mod rb_grid;
pub mod rng;
pub mod sca;
pub mod scenario;
pub mod units;

pub use algorithms::{run_policy, Instance, Policy, PolicyOptions, PolicyResult};
pub use channel::{ChannelParams, ChannelSet, Gains, Side};
pub use error::{Error, Result};
pub use harness::{run_experiment, ExperimentConfig, ExperimentResult, Sweep, SweepAxis};
pub use model::{AllocationState, FiniteBlocklength, FramePlan, QueueState, Splits, SystemParams};
pub use rb_grid::{BwpAllocation, NumerologyParams, RbGrid, Service};
pub use sca::{BandSplit, ScaParams};
pub use scenario::{Realization, Scenario, ScenarioParams};
