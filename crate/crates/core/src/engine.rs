//! Discrete-event simulation core.
//!
//! One global clock, one event queue ordered by `(time, seq)`. Every packet
//! crosses a link in exactly `t_hop` cycles and node processing is free, so
//! the first bee to arrive anywhere is one that took the fewest hops.
//!
//! Flow lifecycle: arrival → forward-bee flood → backward-bee reservation →
//! established for `hold_time` cycles → teardown. A flow that is not
//! established within `setup_timeout_factor × hop_limit × t_hop` cycles fails;
//! backward bees still in flight for it are invalidated on their next hop and
//! release what they hold.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::protocol::{ControlKind, FlowId, ForwardBee, Packet, PortList};
use crate::router::{
    abort_backward_bee, handle_backward_bee, handle_control, handle_forward_bee, start_teardown, BackwardOutcome,
    ForwardVerdict, NodeState, RouterParams, MAX_BACKWARD_BEES,
};
use crate::topology::{hop_limit, Holder, Mesh, NodeId, PortDir};
use crate::traffic::FlowSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Discovering,
    Reserving,
    Established,
    TornDown,
    Failed,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Discovering => "discovering",
            Phase::Reserving => "reserving",
            Phase::Established => "established",
            Phase::TornDown => "torn_down",
            Phase::Failed => "failed",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::TornDown | Phase::Failed)
    }

    /// Whether a circuit was set up at some point.
    pub fn was_established(self) -> bool {
        matches!(self, Phase::Established | Phase::TornDown)
    }

    fn can_become(self, next: Phase) -> bool {
        use Phase::*;
        matches!(
            (self, next),
            (Discovering, Reserving)
                | (Reserving, Established)
                | (Established, TornDown)
                | (Discovering, Failed)
                | (Reserving, Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowStatus {
    pub spec: FlowSpec,
    pub phase: Phase,
    pub setup_latency: Option<u64>,
    pub path_length: Option<u32>,
    /// Source-to-destination path of the accepted circuit.
    pub path: Option<PortList>,
    pub forward_events: u64,
    pub backward_bees: u8,
    pub control_packets: u64,
}

impl FlowStatus {
    pub fn manhattan(&self) -> u32 {
        self.spec.source.manhattan(self.spec.destination)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum EventKind {
    FlowArrival(usize),
    PacketDelivery {
        node: NodeId,
        packet: Packet,
        arrival_port: PortDir,
    },
    FlowComplete(usize),
    SetupTimeout(usize),
}

#[derive(Debug, Clone, PartialEq)]
struct Event {
    time: u64,
    seq: u64,
    kind: EventKind,
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// One trace line. `kind` names the decision taken, e.g. `fwd_duplicate`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub cycle: u64,
    pub kind: &'static str,
    pub node: NodeId,
    pub flow: FlowId,
    pub packet: &'static str,
    pub port: PortDir,
    pub hop_counter: usize,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{},{}\t{},{}#{}\t{}\t{}\t{}",
            self.cycle,
            self.kind,
            self.node.x,
            self.node.y,
            self.flow.source.x,
            self.flow.source.y,
            self.flow.sequence,
            self.packet,
            self.port,
            self.hop_counter
        )
    }
}

/// Time-integrated wire occupancy for one link class.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UtilizationStats {
    pub links: u64,
    /// Highest fraction of wires held on any single link, ever.
    pub peak: f64,
    /// Σ held wires × cycles.
    pub wire_cycles: u128,
}

impl UtilizationStats {
    pub fn mean(&self, wire_count: u32, horizon: u64) -> f64 {
        let capacity = self.links as f64 * f64::from(wire_count) * horizon as f64;
        if capacity == 0.0 {
            0.0
        } else {
            self.wire_cycles as f64 / capacity
        }
    }
}

pub struct Simulation {
    config: RunConfig,
    params: RouterParams,
    mesh: Mesh,
    nodes: Vec<NodeState>,
    flows: Vec<FlowStatus>,
    index: BTreeMap<FlowId, usize>,
    queue: BinaryHeap<Reverse<Event>>,
    now: u64,
    next_seq: u64,
    events: u64,
    forward_cap: u64,
    trace: Option<Vec<TraceRecord>>,
    horizontal: UtilizationStats,
    vertical: UtilizationStats,
    held_horizontal: u64,
    held_vertical: u64,
}

impl Simulation {
    pub fn new(config: &RunConfig) -> Result<Simulation> {
        config.validate()?;
        let mesh = Mesh::new(config.mesh_width, config.mesh_height, config.wire_count, config.wire_bandwidth);
        let nodes = mesh.nodes().map(NodeState::new).collect();
        let (mut horizontal, mut vertical) = (UtilizationStats::default(), UtilizationStats::default());
        for link in mesh.links() {
            if link.dir.is_horizontal() {
                horizontal.links += 1;
            } else {
                vertical.links += 1;
            }
        }
        Ok(Simulation {
            params: RouterParams {
                metric: config.hop_limit_metric,
                backward_bees: config.backward_bee_count,
            },
            forward_cap: 4 * mesh.node_count() as u64,
            nodes,
            mesh,
            flows: Vec::new(),
            index: BTreeMap::new(),
            queue: BinaryHeap::new(),
            now: 0,
            next_seq: 0,
            events: 0,
            trace: config.trace.then(Vec::new),
            horizontal,
            vertical,
            held_horizontal: 0,
            held_vertical: 0,
            config: config.clone(),
        })
    }

    /// Occupies `wires` on one link with background load before the run.
    pub fn preload(&mut self, node: NodeId, dir: PortDir, wires: u32) -> Result<()> {
        let link = self
            .mesh
            .link_mut(node, dir)
            .ok_or_else(|| Error::config("preload", None, format!("no link {node}->{dir}")))?;
        if !link.reserve_wires(Holder::Background, wires) {
            return Err(Error::config("preload", None, format!("cannot hold {wires} wires on {node}->{dir}")));
        }
        self.recount_held();
        Ok(())
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn node(&self, id: NodeId) -> &NodeState {
        &self.nodes[self.mesh.index(id)]
    }

    pub fn flows(&self) -> &[FlowStatus] {
        &self.flows
    }

    pub fn flow(&self, id: &FlowId) -> Option<&FlowStatus> {
        self.index.get(id).map(|&i| &self.flows[i])
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn events_processed(&self) -> u64 {
        self.events
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Per-flow cap on forward-bee deliveries.
    pub fn forward_cap(&self) -> u64 {
        self.forward_cap
    }

    pub fn horizontal_utilization(&self) -> &UtilizationStats {
        &self.horizontal
    }

    pub fn vertical_utilization(&self) -> &UtilizationStats {
        &self.vertical
    }

    /// Adds flows and schedules their arrivals.
    pub fn submit(&mut self, flows: &[FlowSpec]) -> Result<()> {
        for spec in flows {
            spec.validate(self.mesh.width(), self.mesh.height())?;
            if self.index.contains_key(&spec.flow) {
                return Err(Error::config("workload", None, format!("flow {} submitted twice", spec.flow)));
            }
            let i = self.flows.len();
            self.index.insert(spec.flow, i);
            self.flows.push(FlowStatus {
                spec: spec.clone(),
                phase: Phase::Discovering,
                setup_latency: None,
                path_length: None,
                path: None,
                forward_events: 0,
                backward_bees: 0,
                control_packets: 0,
            });
            self.schedule(spec.arrival_time, EventKind::FlowArrival(i));
        }
        Ok(())
    }

    /// Submits `flows` and runs until the queue drains or `max_cycles` passes.
    pub fn run(&mut self, flows: &[FlowSpec]) -> Result<()> {
        self.submit(flows)?;
        self.run_until(self.config.max_cycles)
    }

    pub fn run_until(&mut self, horizon: u64) -> Result<()> {
        while let Some(Reverse(event)) = self.queue.peek() {
            if event.time > horizon {
                break;
            }
            let Reverse(event) = self.queue.pop().unwrap();
            self.step(event)?;
        }
        Ok(())
    }

    fn schedule(&mut self, time: u64, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Event { time, seq, kind }));
    }

    /// Sends `packet` from `from` through `dir`; it arrives `t_hop` later.
    fn transit(&mut self, from: NodeId, dir: PortDir, packet: Packet) -> Result<()> {
        let to = self.mesh.neighbor(from, dir).ok_or_else(|| {
            Error::ProtocolCorruption(format!("{} packet of {} sent off-mesh at {from}->{dir}", packet.kind_str(), packet.flow()))
        })?;
        if let Packet::Control(_) = packet {
            let i = self.flow_index(&packet.flow())?;
            self.flows[i].control_packets += 1;
        }
        self.schedule(
            self.now + self.config.t_hop,
            EventKind::PacketDelivery {
                node: to,
                packet,
                arrival_port: dir.opposite(),
            },
        );
        Ok(())
    }

    fn flow_index(&self, id: &FlowId) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::ProtocolCorruption(format!("packet for unknown flow {id}")))
    }

    fn violation(&self, message: String) -> Error {
        Error::InvariantViolation {
            event: self.events,
            message,
        }
    }

    fn set_phase(&mut self, i: usize, next: Phase) -> Result<()> {
        let current = self.flows[i].phase;
        if !current.can_become(next) {
            return Err(self.violation(format!(
                "flow {} cannot go from {} to {}",
                self.flows[i].spec.flow,
                current.as_str(),
                next.as_str()
            )));
        }
        self.flows[i].phase = next;
        Ok(())
    }

    fn record(&mut self, kind: &'static str, node: NodeId, flow: FlowId, packet: &'static str, port: PortDir, hop: usize) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRecord {
                cycle: self.now,
                kind,
                node,
                flow,
                packet,
                port,
                hop_counter: hop,
            });
        }
    }

    fn step(&mut self, event: Event) -> Result<()> {
        if event.time < self.now {
            return Err(self.violation(format!("clock went back from {} to {}", self.now, event.time)));
        }
        self.accumulate(event.time);
        self.now = event.time;
        self.events += 1;
        match event.kind {
            EventKind::FlowArrival(i) => self.on_flow_arrival(i)?,
            EventKind::PacketDelivery {
                node,
                packet,
                arrival_port,
            } => self.on_delivery(node, packet, arrival_port)?,
            EventKind::FlowComplete(i) => self.on_flow_complete(i)?,
            EventKind::SetupTimeout(i) => self.on_setup_timeout(i)?,
        }
        self.after_event()
    }

    fn on_flow_arrival(&mut self, i: usize) -> Result<()> {
        let spec = self.flows[i].spec.clone();
        let limit = hop_limit(spec.source, spec.destination, self.config.hop_limit_metric)?;
        let timeout = (self.config.setup_timeout_factor * f64::from(limit) * self.config.t_hop as f64).ceil() as u64;
        self.schedule(self.now + timeout.max(1), EventKind::SetupTimeout(i));

        self.record("flow_arrival", spec.source, spec.flow, "forward", PortDir::Local, 0);
        let bee = ForwardBee::new(spec.flow, spec.destination, spec.required_bandwidth);
        let node = self.mesh.index(spec.source);
        let outcome = handle_forward_bee(&mut self.nodes[node], &self.mesh, &self.params, bee, PortDir::Local)?;
        for (dir, pkt) in outcome.emissions {
            self.transit(spec.source, dir, pkt)?;
        }
        Ok(())
    }

    fn on_delivery(&mut self, node: NodeId, packet: Packet, arrival_port: PortDir) -> Result<()> {
        let i = self.flow_index(&packet.flow())?;
        let n = self.mesh.index(node);
        match packet {
            Packet::Forward(bee) => {
                let flow = &mut self.flows[i];
                flow.forward_events += 1;
                if flow.forward_events > self.forward_cap {
                    return Err(self.violation(format!(
                        "flow {} exceeded {} forward-bee events",
                        bee.flow, self.forward_cap
                    )));
                }
                let limit = hop_limit(bee.source, bee.destination, self.config.hop_limit_metric)?;
                if bee.hop_counter > limit {
                    return Err(self.violation(format!("forward bee of {} over its hop limit", bee.flow)));
                }
                let (flow_id, hop) = (bee.flow, bee.hop_counter as usize);
                let outcome = handle_forward_bee(&mut self.nodes[n], &self.mesh, &self.params, bee, arrival_port)?;
                let kind = match outcome.verdict {
                    ForwardVerdict::Converted { .. } => "fwd_convert",
                    ForwardVerdict::KilledSurplus => "fwd_surplus",
                    ForwardVerdict::KilledDuplicate => "fwd_duplicate",
                    ForwardVerdict::KilledHopLimit => "fwd_hop_limit",
                    ForwardVerdict::Broadcast(0) => "fwd_no_route",
                    ForwardVerdict::Broadcast(_) => "fwd_broadcast",
                };
                self.record(kind, node, flow_id, "forward", arrival_port, hop);
                if let ForwardVerdict::Converted { .. } = outcome.verdict {
                    let flow = &mut self.flows[i];
                    flow.backward_bees += 1;
                    if flow.backward_bees > MAX_BACKWARD_BEES {
                        return Err(self.violation(format!("flow {flow_id} created a fourth backward bee")));
                    }
                    if flow.phase == Phase::Discovering {
                        self.set_phase(i, Phase::Reserving)?;
                    }
                }
                for (dir, pkt) in outcome.emissions {
                    self.transit(node, dir, pkt)?;
                }
            }
            Packet::Backward(bee) => {
                let (flow_id, hop) = (bee.flow, bee.next_index);
                if self.flows[i].phase == Phase::Failed {
                    self.record("bwd_invalidated", node, flow_id, "backward", arrival_port, hop);
                    if let Some((dir, pkt)) = abort_backward_bee(&bee) {
                        self.transit(node, dir, Packet::Control(pkt))?;
                    }
                    return Ok(());
                }
                let outcome = handle_backward_bee(&mut self.nodes[n], &mut self.mesh, bee, arrival_port)?;
                match outcome {
                    BackwardOutcome::Forwarded(dir, next) => {
                        self.record("bwd_forward", node, flow_id, "backward", arrival_port, hop);
                        self.transit(node, dir, Packet::Backward(next))?;
                    }
                    BackwardOutcome::Accepted { path, .. } => {
                        self.record("bwd_accept", node, flow_id, "backward", arrival_port, hop);
                        if self.flows[i].phase == Phase::Discovering {
                            return Err(self.violation(format!("flow {flow_id} accepted without a backward bee")));
                        }
                        self.set_phase(i, Phase::Established)?;
                        let flow = &mut self.flows[i];
                        flow.setup_latency = Some(self.now - flow.spec.arrival_time);
                        flow.path_length = Some(path.len() as u32);
                        flow.path = Some(path);
                        let complete_at = self.now + flow.spec.hold_time;
                        self.schedule(complete_at, EventKind::FlowComplete(i));
                    }
                    BackwardOutcome::Lost(release) => {
                        self.record("bwd_lost", node, flow_id, "backward", arrival_port, hop);
                        if let Some((dir, pkt)) = release {
                            self.transit(node, dir, Packet::Control(pkt))?;
                        }
                    }
                    BackwardOutcome::Aborted(release) => {
                        self.record("bwd_abort", node, flow_id, "backward", arrival_port, hop);
                        if let Some((dir, pkt)) = release {
                            self.transit(node, dir, Packet::Control(pkt))?;
                        }
                    }
                }
            }
            Packet::Control(pkt) => {
                let (flow_id, hop, kind) = (pkt.flow, pkt.next_index, pkt.kind);
                let outcome = handle_control(&mut self.nodes[n], &mut self.mesh, pkt, arrival_port)?;
                let label = match (kind, outcome.freed) {
                    (ControlKind::Teardown, true) => "teardown_free",
                    (ControlKind::Teardown, false) => "teardown_noop",
                    (ControlKind::Release, true) => "release_free",
                    (ControlKind::Release, false) => "release_noop",
                };
                self.record(label, node, flow_id, kind.as_str(), arrival_port, hop);
                if let Some((dir, next)) = outcome.forward {
                    self.transit(node, dir, Packet::Control(next))?;
                }
            }
        }
        Ok(())
    }

    fn on_flow_complete(&mut self, i: usize) -> Result<()> {
        let spec = self.flows[i].spec.clone();
        self.record("flow_complete", spec.source, spec.flow, "teardown", PortDir::Local, 0);
        self.set_phase(i, Phase::TornDown)?;
        let n = self.mesh.index(spec.source);
        if let Some((dir, pkt)) = start_teardown(&mut self.nodes[n], &mut self.mesh, spec.flow) {
            self.transit(spec.source, dir, Packet::Control(pkt))?;
        }
        Ok(())
    }

    fn on_setup_timeout(&mut self, i: usize) -> Result<()> {
        let flow = &self.flows[i];
        if !matches!(flow.phase, Phase::Discovering | Phase::Reserving) {
            return Ok(());
        }
        let (source, id) = (flow.spec.source, flow.spec.flow);
        self.record("setup_timeout", source, id, "-", PortDir::Local, 0);
        self.set_phase(i, Phase::Failed)
    }

    fn accumulate(&mut self, until: u64) {
        let dt = u128::from(until.saturating_sub(self.now));
        self.horizontal.wire_cycles += u128::from(self.held_horizontal) * dt;
        self.vertical.wire_cycles += u128::from(self.held_vertical) * dt;
    }

    fn recount_held(&mut self) {
        let (mut h, mut v) = (0u64, 0u64);
        let wires = f64::from(self.mesh.wire_count());
        for link in self.mesh.links() {
            let util = f64::from(link.held_wires()) / wires;
            if link.dir.is_horizontal() {
                h += u64::from(link.held_wires());
                self.horizontal.peak = self.horizontal.peak.max(util);
            } else {
                v += u64::from(link.held_wires());
                self.vertical.peak = self.vertical.peak.max(util);
            }
        }
        self.held_horizontal = h;
        self.held_vertical = v;
    }

    fn after_event(&mut self) -> Result<()> {
        if let Err(message) = self.mesh.check_wire_invariant() {
            return Err(self.violation(message));
        }
        self.recount_held();
        Ok(())
    }

    /// Wires held by flows, grouped by flow.
    pub fn wires_by_flow(&self) -> BTreeMap<FlowId, u64> {
        let mut out = BTreeMap::new();
        for link in self.mesh.links() {
            for (holder, wires) in link.reservations() {
                if let Holder::Bee { flow, .. } = holder {
                    *out.entry(*flow).or_insert(0) += u64::from(*wires);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::wires_for;

    fn spec(src: (u16, u16), dst: (u16, u16), bw: f64, at: u64, hold: u64) -> FlowSpec {
        let source = NodeId::new(src.0, src.1);
        FlowSpec {
            flow: FlowId::new(source, at as u32),
            source,
            destination: NodeId::new(dst.0, dst.1),
            required_bandwidth: bw,
            arrival_time: at,
            hold_time: hold,
        }
    }

    fn config(w: u16, h: u16) -> RunConfig {
        let mut c = RunConfig::new(w, h, 1);
        c.trace = true;
        c
    }

    #[test]
    fn idle_corner_to_corner() {
        let mut sim = Simulation::new(&config(4, 4)).unwrap();
        let f = spec((0, 0), (3, 3), 2.0, 0, 50);
        sim.submit(std::slice::from_ref(&f)).unwrap();
        sim.run_until(12).unwrap();
        let st = sim.flow(&f.flow).unwrap();
        assert_eq!(st.phase, Phase::Established);
        assert_eq!(st.path_length, Some(6));
        assert_eq!(st.setup_latency, Some(12));
        let held = sim.wires_by_flow();
        // Winner plus any siblings still racing home.
        assert!(held[&f.flow] >= 6 * u64::from(wires_for(2.0, 1.0)));

        sim.run_until(u64::MAX).unwrap();
        let st = sim.flow(&f.flow).unwrap();
        assert_eq!(st.phase, Phase::TornDown);
        assert_eq!(sim.mesh().total_held_wires(), 0);
        assert!(st.backward_bees <= 3);
    }

    #[test]
    fn impossible_bandwidth_fails_at_timeout() {
        let mut sim = Simulation::new(&config(4, 4)).unwrap();
        let f = spec((0, 0), (3, 3), 9.0, 3, 50);
        sim.run(std::slice::from_ref(&f)).unwrap();
        let st = sim.flow(&f.flow).unwrap();
        assert_eq!(st.phase, Phase::Failed);
        assert_eq!(st.control_packets, 0);
        assert_eq!(sim.mesh().total_held_wires(), 0);
        // 4 × hop limit (ceil(2·√18) = 9) after arrival.
        let timeout = sim.trace().iter().find(|r| r.kind == "setup_timeout").unwrap();
        assert_eq!(timeout.cycle, 3 + 36);
    }

    #[test]
    fn empty_workload() {
        let mut sim = Simulation::new(&config(4, 4)).unwrap();
        sim.run(&[]).unwrap();
        assert_eq!(sim.events_processed(), 0);
        assert!(sim.flows().is_empty());
    }

    #[test]
    fn transit_timing_and_arrival_port() {
        let mut c = config(3, 2);
        c.t_hop = 5;
        let mut sim = Simulation::new(&c).unwrap();
        let f = spec((0, 0), (2, 0), 1.0, 5, 10);
        sim.run(std::slice::from_ref(&f)).unwrap();
        let first = sim.trace().iter().find(|r| r.kind == "fwd_broadcast").unwrap();
        assert_eq!(first.cycle, 10);
        assert_eq!(first.node, NodeId::new(1, 0));
        assert_eq!(first.port, PortDir::West);
        assert_eq!(sim.flow(&f.flow).unwrap().setup_latency, Some(20));
    }

    #[test]
    fn same_cycle_events_keep_send_order() {
        let mut sim = Simulation::new(&config(3, 3)).unwrap();
        let f = spec((1, 1), (2, 2), 1.0, 0, 10);
        sim.submit(std::slice::from_ref(&f)).unwrap();
        sim.run_until(1).unwrap();
        // The centre broadcasts S, W, E, N in that order.
        let order: Vec<NodeId> = sim
            .trace()
            .iter()
            .filter(|r| r.cycle == 1)
            .map(|r| r.node)
            .collect();
        assert_eq!(
            order,
            vec![NodeId::new(1, 0), NodeId::new(0, 1), NodeId::new(2, 1), NodeId::new(1, 2)]
        );
    }

    #[test]
    fn timeout_invalidates_bee_mid_route() {
        // (0,0)->(4,0) on 5x2, hop limit 8. The first forward bee reaches
        // (4,0) at t=4 and its backward bee reaches (1,0) at t=7, holding
        // two links. A timeout at t=7 invalidates it there.
        let mut c = config(5, 2);
        c.setup_timeout_factor = 7.0 / 8.0;
        let mut sim = Simulation::new(&c).unwrap();
        let f = spec((0, 0), (4, 0), 1.0, 0, 10);
        sim.run(std::slice::from_ref(&f)).unwrap();
        let st = sim.flow(&f.flow).unwrap();
        assert_eq!(st.phase, Phase::Failed);
        let kinds: Vec<&str> = sim.trace().iter().map(|r| r.kind).collect();
        assert!(kinds.contains(&"bwd_invalidated"));
        assert_eq!(kinds.iter().filter(|k| **k == "release_free").count(), 2);
        assert_eq!(sim.mesh().total_held_wires(), 0);
    }

    #[test]
    fn background_preload_blocks() {
        let mut sim = Simulation::new(&config(2, 2)).unwrap();
        sim.preload(NodeId::new(0, 0), PortDir::East, 8).unwrap();
        sim.preload(NodeId::new(0, 0), PortDir::North, 8).unwrap();
        assert!(sim.preload(NodeId::new(0, 0), PortDir::West, 1).is_err());
        let f = spec((0, 0), (1, 1), 1.0, 0, 10);
        sim.run(std::slice::from_ref(&f)).unwrap();
        assert_eq!(sim.flow(&f.flow).unwrap().phase, Phase::Failed);
        assert_eq!(sim.mesh().circuit_wires(), 0);
    }
}
