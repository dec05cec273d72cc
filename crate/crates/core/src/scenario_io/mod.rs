//! Scenario files in, result documents out.

mod results;
mod scenario;

pub use results::*;
pub use scenario::{
    load_scenario, parse_scenario, raster_centers, AgentSource, DiagnosticCode, Scenario, ScenarioError, Sweep,
    SweepParameter,
};
