//! Bee-inspired QoS circuit setup on a 2D-mesh network-on-chip.
//!
//! Forward bees flood from the source towards the destination recording the
//! ports they take; the destination turns the first three into backward bees
//! that retrace those paths reserving SDM wires; the first backward bee home
//! wins the circuit and its siblings release what they reserved. After the
//! transfer the source tears the circuit down.
//!
//! The crate is a deterministic discrete-event simulator of that protocol
//! plus an exhaustive path oracle for small meshes and a CSV metrics
//! pipeline.

pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod oracle;
pub mod protocol;
pub mod report;
pub mod router;
pub mod topology;
pub mod traffic;

pub use config::RunConfig;
pub use engine::{FlowStatus, Phase, Simulation};
pub use error::{Error, Result};
pub use protocol::{BackwardBee, ControlKind, ControlPacket, FlowId, ForwardBee, Packet, PortList};
pub use report::MetricsReport;
pub use topology::{hop_limit, HopLimitMetric, LinkState, Mesh, NodeId, PortDir};
pub use traffic::FlowSpec;

/// Loads or generates the workload described by `config`.
pub fn workload(config: &RunConfig) -> Result<Vec<FlowSpec>> {
    match &config.workload {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            traffic::parse_workload(&text, config.mesh_width, config.mesh_height)
        }
        None => {
            let mut rng = traffic::rng_stream(config.seed);
            traffic::generate_traffic(&config.traffic, config.mesh_width, config.mesh_height, &mut rng)
        }
    }
}

/// Runs one complete simulation and aggregates its metrics.
pub fn run(config: &RunConfig, flows: &[FlowSpec]) -> Result<(Simulation, MetricsReport)> {
    let mut sim = Simulation::new(config)?;
    sim.run(flows)?;
    let report = MetricsReport::from_simulation(&sim);
    Ok((sim, report))
}
