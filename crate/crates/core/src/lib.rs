//! Forward-in-time learning of optimal controls for CTRNN parameters, with
//! the costate estimated by a small neural network.

pub mod config;
pub mod costate_net;
pub mod error;
pub mod hamiltonian;
pub mod harness;
pub mod lq_analytic;
pub mod optim;
pub mod riccati_flow;
pub mod state_model;

pub use config::SimConfig;
pub use costate_net::{CostateEstimator, CostateNet};
pub use error::{Error, Result};
pub use hamiltonian::{ControlProblem, Drive, TrackingProblem};
pub use harness::experiment::{Experiment, ExperimentRegistry};
pub use optim::{InnerOptimizer, OptimizerRegistry};
pub use riccati_flow::{run_simulation, ForwardFlow, Simulation, TraceRecord};
