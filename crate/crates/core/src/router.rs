//! Per-node protocol handlers.
//!
//! Each handler is a transition `(node state, links, packet) → emissions`.
//! Links are owned by the [`Mesh`]; a node only ever touches the links that
//! leave it.
//!
//! Reservations follow the data direction. A backward bee arriving at node
//! `n` over port `a` reserves the link leaving `n` through `a`, which is the
//! link the circuit's data will use from `n` towards the destination. The
//! destination itself holds nothing.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;

use crate::error::{Error, Result};
use crate::protocol::{BackwardBee, ControlKind, ControlPacket, FlowId, ForwardBee, Packet, PortList};
use crate::topology::{hop_limit, HopLimitMetric, Holder, Mesh, NodeId, PortDir};

/// Hard cap on backward bees converted per flow.
pub const MAX_BACKWARD_BEES: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowTableEntry {
    pub flow: FlowId,
    /// Port the backward bee arrived on; the reserved link leaves through it.
    pub in_port: PortDir,
    /// Port the backward bee left through (`Local` at the source).
    pub out_port: PortDir,
    pub wires_held: u32,
}

/// What the source remembers about a circuit it accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptedCircuit {
    pub bee: u8,
    /// Source-to-destination port list.
    pub path: PortList,
    pub torn_down: bool,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub seen: BTreeSet<FlowId>,
    pub flow_table: BTreeMap<(FlowId, u8), FlowTableEntry>,
    pub dest_arrivals: BTreeMap<FlowId, u8>,
    pub source_accepted: BTreeMap<FlowId, AcceptedCircuit>,
}

impl NodeState {
    pub fn new(id: NodeId) -> Self {
        NodeState {
            id,
            seen: BTreeSet::new(),
            flow_table: BTreeMap::new(),
            dest_arrivals: BTreeMap::new(),
            source_accepted: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouterParams {
    pub metric: HopLimitMetric,
    /// Forward bees converted at the destination, `1..=3`.
    pub backward_bees: u8,
}

impl Default for RouterParams {
    fn default() -> Self {
        RouterParams {
            metric: HopLimitMetric::Euclidean,
            backward_bees: MAX_BACKWARD_BEES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardVerdict {
    /// Became backward bee number `bee` at the destination.
    Converted { bee: u8 },
    /// Reached the destination after the quota was used up.
    KilledSurplus,
    KilledDuplicate,
    KilledHopLimit,
    /// Re-broadcast on this many ports (zero when no output was feasible).
    Broadcast(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutcome {
    pub verdict: ForwardVerdict,
    pub emissions: Vec<(PortDir, Packet)>,
}

/// Processes a forward bee arriving on `arrival_port` (`Local` when the
/// source injects a fresh bee).
pub fn handle_forward_bee(
    state: &mut NodeState,
    mesh: &Mesh,
    params: &RouterParams,
    bee: ForwardBee,
    arrival_port: PortDir,
) -> Result<ForwardOutcome> {
    if !bee.is_well_formed() {
        return Err(Error::ProtocolCorruption(format!(
            "forward bee of {} has hop counter {} but {} ports",
            bee.flow,
            bee.hop_counter,
            bee.ports.len()
        )));
    }

    if state.id == bee.destination {
        let count = state.dest_arrivals.entry(bee.flow).or_insert(0);
        if *count >= params.backward_bees.min(MAX_BACKWARD_BEES) {
            return Ok(ForwardOutcome {
                verdict: ForwardVerdict::KilledSurplus,
                emissions: Vec::new(),
            });
        }
        let index = *count;
        *count += 1;
        let route = bee.ports.reverse_complement();
        let first = route
            .get(0)
            .ok_or_else(|| Error::ProtocolCorruption(format!("empty route for {} at destination", bee.flow)))?;
        let backward = BackwardBee {
            flow: bee.flow,
            bee: index,
            route,
            next_index: 1,
            required_bandwidth: bee.required_bandwidth,
        };
        return Ok(ForwardOutcome {
            verdict: ForwardVerdict::Converted { bee: index },
            emissions: vec![(first, Packet::Backward(backward))],
        });
    }

    if !state.seen.insert(bee.flow) {
        return Ok(ForwardOutcome {
            verdict: ForwardVerdict::KilledDuplicate,
            emissions: Vec::new(),
        });
    }

    let limit = hop_limit(bee.source, bee.destination, params.metric)?;
    if bee.hop_counter >= limit {
        return Ok(ForwardOutcome {
            verdict: ForwardVerdict::KilledHopLimit,
            emissions: Vec::new(),
        });
    }

    let mut emissions = Vec::new();
    for dir in PortDir::MESH {
        if dir == arrival_port {
            continue;
        }
        let feasible = mesh
            .link(state.id, dir)
            .is_some_and(|link| link.admits(bee.required_bandwidth));
        if !feasible {
            continue;
        }
        let mut copy = bee.clone();
        copy.ports.push(dir, limit as usize)?;
        copy.hop_counter += 1;
        emissions.push((dir, Packet::Forward(copy)));
    }
    Ok(ForwardOutcome {
        verdict: ForwardVerdict::Broadcast(emissions.len()),
        emissions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackwardOutcome {
    /// Reserved here and moved on.
    Forwarded(PortDir, BackwardBee),
    /// First bee back at the source: the circuit is up.
    Accepted { bee: u8, path: PortList },
    /// A later sibling reached the source; everything it holds is released.
    Lost(Option<(PortDir, ControlPacket)>),
    /// Reservation failed here; the already-reserved prefix is released.
    Aborted(Option<(PortDir, ControlPacket)>),
}

/// Processes a backward bee arriving on `arrival_port`.
pub fn handle_backward_bee(
    state: &mut NodeState,
    mesh: &mut Mesh,
    bee: BackwardBee,
    arrival_port: PortDir,
) -> Result<BackwardOutcome> {
    let traversed = bee.next_index;
    let came_on = traversed
        .checked_sub(1)
        .and_then(|i| bee.route.get(i))
        .ok_or_else(|| Error::ProtocolCorruption(format!("backward bee of {} has not moved", bee.flow)))?;
    if came_on.opposite() != arrival_port {
        return Err(Error::ProtocolCorruption(format!(
            "backward bee of {} arrived on {} but its route says {}",
            bee.flow,
            arrival_port,
            came_on.opposite()
        )));
    }

    let holder = Holder::Bee {
        flow: bee.flow,
        bee: bee.bee,
    };
    let link = mesh
        .link_mut(state.id, arrival_port)
        .ok_or_else(|| Error::ProtocolCorruption(format!("no link {}->{}", state.id, arrival_port)))?;
    let Some(wires) = link.reserve(holder, bee.required_bandwidth) else {
        return Ok(BackwardOutcome::Aborted(release_prefix(&bee, traversed)));
    };

    let out_port = bee.route.get(traversed).unwrap_or(PortDir::Local);
    state.flow_table.insert(
        (bee.flow, bee.bee),
        FlowTableEntry {
            flow: bee.flow,
            in_port: arrival_port,
            out_port,
            wires_held: wires,
        },
    );

    if bee.at_source() {
        if state.id != bee.flow.source {
            return Err(Error::ProtocolCorruption(format!(
                "route of {} ends at {} instead of the source",
                bee.flow, state.id
            )));
        }
        if state.source_accepted.contains_key(&bee.flow) {
            let (_, release) = start_control(state, mesh, ControlKind::Release, bee.flow, bee.bee, &release_route(&bee, traversed));
            return Ok(BackwardOutcome::Lost(release));
        }
        let path = bee.route.reverse_complement();
        state.source_accepted.insert(
            bee.flow,
            AcceptedCircuit {
                bee: bee.bee,
                path: path.clone(),
                torn_down: false,
            },
        );
        return Ok(BackwardOutcome::Accepted { bee: bee.bee, path });
    }

    if mesh.neighbor(state.id, out_port).is_none() {
        return Err(Error::ProtocolCorruption(format!(
            "route of {} leaves the mesh at {}",
            bee.flow, state.id
        )));
    }
    let mut next = bee;
    next.next_index += 1;
    Ok(BackwardOutcome::Forwarded(out_port, next))
}

/// Invalidates a backward bee whose flow has been given up on: nothing is
/// reserved here and the prefix it already holds is released.
pub fn abort_backward_bee(bee: &BackwardBee) -> Option<(PortDir, ControlPacket)> {
    release_prefix(bee, bee.next_index)
}

/// Route from the node reached after `traversed` hops back to the first node
/// that reserved (the destination's neighbour on the route).
fn release_route(bee: &BackwardBee, traversed: usize) -> PortList {
    bee.route
        .prefix(traversed)
        .reverse_complement()
        .prefix(traversed.saturating_sub(1))
}

/// Release packet for a bee that failed at the node reached after
/// `traversed` hops, before reserving there.
fn release_prefix(bee: &BackwardBee, traversed: usize) -> Option<(PortDir, ControlPacket)> {
    emit_along(ControlKind::Release, bee.flow, bee.bee, release_route(bee, traversed))
}

fn emit_along(kind: ControlKind, flow: FlowId, bee: u8, route: PortList) -> Option<(PortDir, ControlPacket)> {
    let first = route.get(0)?;
    Some((
        first,
        ControlPacket {
            kind,
            flow,
            bee,
            route,
            next_index: 1,
        },
    ))
}

/// Frees this node's share of `(flow, bee)`. Returns `false` when there was
/// nothing to free.
fn free_local(state: &mut NodeState, mesh: &mut Mesh, flow: FlowId, bee: u8) -> bool {
    let Some(entry) = state.flow_table.remove(&(flow, bee)) else {
        return false;
    };
    let freed = mesh
        .link_mut(state.id, entry.in_port)
        .and_then(|link| link.release(&Holder::Bee { flow, bee }));
    debug_assert_eq!(freed, Some(entry.wires_held));
    freed.is_some()
}

/// Frees the local share of `(flow, bee)` and emits a control packet along
/// `route` for the rest. Returns whether anything was freed locally.
pub fn start_control(
    state: &mut NodeState,
    mesh: &mut Mesh,
    kind: ControlKind,
    flow: FlowId,
    bee: u8,
    route: &PortList,
) -> (bool, Option<(PortDir, ControlPacket)>) {
    let freed = free_local(state, mesh, flow, bee);
    (freed, emit_along(kind, flow, bee, route.clone()))
}

/// Teardown issued by the source after the data transfer: frees the source's
/// link and sends the packet down the circuit. The accepted record stays, so
/// late siblings are still recognised as losers; a second teardown is a
/// warning and a no-op.
pub fn start_teardown(state: &mut NodeState, mesh: &mut Mesh, flow: FlowId) -> Option<(PortDir, ControlPacket)> {
    let circuit = match state.source_accepted.get_mut(&flow) {
        Some(c) if !c.torn_down => {
            c.torn_down = true;
            c.clone()
        }
        Some(_) => {
            warn!("teardown of {flow} at {}: already torn down", state.id);
            return None;
        }
        None => {
            warn!("teardown of {flow} at {}: no accepted circuit", state.id);
            return None;
        }
    };
    let route = circuit.path.prefix(circuit.path.len().saturating_sub(1));
    let (freed, pkt) = start_control(state, mesh, ControlKind::Teardown, flow, circuit.bee, &route);
    if !freed {
        warn!("teardown of {flow} at {}: nothing reserved", state.id);
    }
    pkt
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutcome {
    /// Whether this node actually held wires for the packet's bee.
    pub freed: bool,
    pub forward: Option<(PortDir, ControlPacket)>,
}

/// Processes a teardown or release packet. Releasing something that is not
/// reserved is a warning, not an error.
pub fn handle_control(
    state: &mut NodeState,
    mesh: &mut Mesh,
    pkt: ControlPacket,
    _arrival_port: PortDir,
) -> Result<ControlOutcome> {
    let freed = free_local(state, mesh, pkt.flow, pkt.bee);
    if !freed {
        warn!(
            "{} of {} bee {} at {}: no reservation held",
            pkt.kind.as_str(),
            pkt.flow,
            pkt.bee,
            state.id
        );
    }
    let forward = match pkt.route.get(pkt.next_index) {
        None => None,
        Some(dir) => {
            if mesh.neighbor(state.id, dir).is_none() {
                return Err(Error::ProtocolCorruption(format!(
                    "{} route of {} leaves the mesh at {}",
                    pkt.kind.as_str(),
                    pkt.flow,
                    state.id
                )));
            }
            let mut next = pkt;
            next.next_index += 1;
            Some((dir, next))
        }
    };
    Ok(ControlOutcome { freed, forward })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(x: u16, y: u16) -> NodeId {
        NodeId::new(x, y)
    }

    fn flow() -> FlowId {
        FlowId::new(n(0, 0), 0)
    }

    fn bee_with(ports: &[PortDir], dest: NodeId, bw: f64) -> ForwardBee {
        let mut bee = ForwardBee::new(flow(), dest, bw);
        bee.ports = PortList::from_dirs(ports.iter().copied()).unwrap();
        bee.hop_counter = ports.len() as u32;
        bee
    }

    fn emitted_ports(out: &ForwardOutcome) -> Vec<PortDir> {
        out.emissions.iter().map(|(d, _)| *d).collect()
    }

    #[test]
    fn duplicate_is_killed() {
        let mesh = Mesh::new(3, 3, 4, 1.0);
        let mut state = NodeState::new(n(1, 0));
        let params = RouterParams::default();
        let bee = bee_with(&[PortDir::East], n(2, 2), 1.0);
        let first = handle_forward_bee(&mut state, &mesh, &params, bee.clone(), PortDir::West).unwrap();
        assert!(matches!(first.verdict, ForwardVerdict::Broadcast(_)));
        let second = handle_forward_bee(&mut state, &mesh, &params, bee, PortDir::South).unwrap();
        assert_eq!(second.verdict, ForwardVerdict::KilledDuplicate);
        assert!(second.emissions.is_empty());
    }

    #[test]
    fn hop_limit_kill() {
        // (0,0)->(1,0): limit 2. A bee that wandered two hops and is not at
        // the destination dies.
        let mesh = Mesh::new(3, 3, 4, 1.0);
        let mut state = NodeState::new(n(1, 1));
        let bee = bee_with(&[PortDir::North, PortDir::East], n(1, 0), 1.0);
        let out = handle_forward_bee(&mut state, &mesh, &RouterParams::default(), bee, PortDir::West).unwrap();
        assert_eq!(out.verdict, ForwardVerdict::KilledHopLimit);
        assert!(out.emissions.is_empty());
    }

    #[test]
    fn destination_converts_first_three() {
        let mesh = Mesh::new(3, 3, 4, 1.0);
        let mut state = NodeState::new(n(1, 0));
        let params = RouterParams::default();
        let bee = bee_with(&[PortDir::East], n(1, 0), 1.0);
        for i in 0..3u8 {
            let out = handle_forward_bee(&mut state, &mesh, &params, bee.clone(), PortDir::West).unwrap();
            assert_eq!(out.verdict, ForwardVerdict::Converted { bee: i });
            let (dir, Packet::Backward(b)) = &out.emissions[0] else { panic!() };
            assert_eq!(*dir, PortDir::West);
            assert_eq!(b.route.bit_string(), "01");
            assert_eq!(b.next_index, 1);
        }
        let out = handle_forward_bee(&mut state, &mesh, &params, bee, PortDir::West).unwrap();
        assert_eq!(out.verdict, ForwardVerdict::KilledSurplus);
        assert!(out.emissions.is_empty());
    }

    #[test]
    fn k_ablation_converts_fewer() {
        let mesh = Mesh::new(3, 3, 4, 1.0);
        let mut state = NodeState::new(n(1, 0));
        let params = RouterParams {
            backward_bees: 1,
            ..RouterParams::default()
        };
        let bee = bee_with(&[PortDir::East], n(1, 0), 1.0);
        let first = handle_forward_bee(&mut state, &mesh, &params, bee.clone(), PortDir::West).unwrap();
        assert_eq!(first.verdict, ForwardVerdict::Converted { bee: 0 });
        let second = handle_forward_bee(&mut state, &mesh, &params, bee, PortDir::West).unwrap();
        assert_eq!(second.verdict, ForwardVerdict::KilledSurplus);
    }

    #[test]
    fn centre_node_never_u_turns() {
        // Source (0,0), destination (2,2); the bee reaches (1,1) from the West.
        let mut mesh = Mesh::new(3, 3, 4, 1.0);
        let params = RouterParams::default();
        let bee = bee_with(&[PortDir::North, PortDir::East], n(2, 2), 1.0);

        let mut state = NodeState::new(n(1, 1));
        let out = handle_forward_bee(&mut state, &mesh, &params, bee.clone(), PortDir::West).unwrap();
        assert_eq!(emitted_ports(&out), vec![PortDir::South, PortDir::East, PortDir::North]);
        for (dir, pkt) in &out.emissions {
            let Packet::Forward(f) = pkt else { panic!() };
            assert_eq!(f.hop_counter, 3);
            assert_eq!(f.ports.last(), Some(*dir));
        }

        // Saturate the northbound link: only South and East remain.
        mesh.link_mut(n(1, 1), PortDir::North)
            .unwrap()
            .reserve_wires(Holder::Background, 4);
        let mut state = NodeState::new(n(1, 1));
        let out = handle_forward_bee(&mut state, &mesh, &params, bee, PortDir::West).unwrap();
        assert_eq!(emitted_ports(&out), vec![PortDir::South, PortDir::East]);
    }

    #[test]
    fn no_feasible_output_kills() {
        let mut mesh = Mesh::new(2, 2, 2, 1.0);
        mesh.link_mut(n(0, 0), PortDir::East).unwrap().reserve_wires(Holder::Background, 2);
        mesh.link_mut(n(0, 0), PortDir::North).unwrap().reserve_wires(Holder::Background, 1);
        let mut state = NodeState::new(n(0, 0));
        let bee = ForwardBee::new(flow(), n(1, 1), 2.0);
        let out = handle_forward_bee(&mut state, &mesh, &RouterParams::default(), bee, PortDir::Local).unwrap();
        assert_eq!(out.verdict, ForwardVerdict::Broadcast(0));
    }

    #[test]
    fn forward_bees_reserve_nothing() {
        let mesh = Mesh::new(3, 3, 4, 1.0);
        let before = mesh.clone();
        let mut state = NodeState::new(n(0, 0));
        let bee = ForwardBee::new(flow(), n(2, 2), 3.0);
        handle_forward_bee(&mut state, &mesh, &RouterParams::default(), bee, PortDir::Local).unwrap();
        assert_eq!(mesh, before);
    }

    #[test]
    fn malformed_forward_bee() {
        let mesh = Mesh::new(3, 3, 4, 1.0);
        let mut state = NodeState::new(n(1, 0));
        let mut bee = bee_with(&[PortDir::East], n(2, 2), 1.0);
        bee.hop_counter = 5;
        let err = handle_forward_bee(&mut state, &mesh, &RouterParams::default(), bee, PortDir::West);
        assert!(matches!(err, Err(Error::ProtocolCorruption(_))));
    }

    fn backward(route: &[PortDir], bee: u8, next_index: usize, bw: f64) -> BackwardBee {
        BackwardBee {
            flow: flow(),
            bee,
            route: PortList::from_dirs(route.iter().copied()).unwrap(),
            next_index,
            required_bandwidth: bw,
        }
    }

    #[test]
    fn single_hop_reservation_and_accept() {
        // Source (0,0), destination (1,0); route back is West.
        let mut mesh = Mesh::new(2, 2, 4, 1.0);
        let mut src = NodeState::new(n(0, 0));
        let bee = backward(&[PortDir::West], 0, 1, 2.0);
        let out = handle_backward_bee(&mut src, &mut mesh, bee, PortDir::East).unwrap();
        assert_eq!(
            out,
            BackwardOutcome::Accepted {
                bee: 0,
                path: PortList::from_dirs([PortDir::East]).unwrap()
            }
        );
        assert_eq!(mesh.link(n(0, 0), PortDir::East).unwrap().free_wires(), 2);
        let entry = src.flow_table[&(flow(), 0)];
        assert_eq!((entry.in_port, entry.out_port, entry.wires_held), (PortDir::East, PortDir::Local, 2));
    }

    #[test]
    fn saturated_hop_releases_prefix() {
        // Destination (2,0), source (0,0); route West, West.
        let mut mesh = Mesh::new(3, 1, 4, 1.0);
        let mut mid = NodeState::new(n(1, 0));
        let mut src = NodeState::new(n(0, 0));
        let bee = backward(&[PortDir::West, PortDir::West], 0, 1, 1.0);

        let BackwardOutcome::Forwarded(dir, bee) = handle_backward_bee(&mut mid, &mut mesh, bee, PortDir::East).unwrap()
        else {
            panic!()
        };
        assert_eq!(dir, PortDir::West);
        assert_eq!(bee.reserved_prefix(), 1);
        assert_eq!(bee.next_index, 2);
        assert_eq!(mesh.link(n(1, 0), PortDir::East).unwrap().held_wires(), 1);

        mesh.link_mut(n(0, 0), PortDir::East).unwrap().reserve_wires(Holder::Background, 4);
        let out = handle_backward_bee(&mut src, &mut mesh, bee, PortDir::East).unwrap();
        let BackwardOutcome::Aborted(Some((dir, rel))) = out else { panic!("{out:?}") };
        assert_eq!(dir, PortDir::East);
        assert_eq!(rel.kind, ControlKind::Release);
        assert_eq!(rel.route.len(), 1);
        assert!(src.flow_table.is_empty());

        let done = handle_control(&mut mid, &mut mesh, rel, PortDir::West).unwrap();
        assert!(done.freed);
        assert_eq!(done.forward, None);
        assert_eq!(mesh.circuit_wires(), 0);
    }

    #[test]
    fn first_hop_failure_emits_nothing() {
        let mut mesh = Mesh::new(2, 1, 1, 1.0);
        mesh.link_mut(n(0, 0), PortDir::East).unwrap().reserve_wires(Holder::Background, 1);
        let mut src = NodeState::new(n(0, 0));
        let bee = backward(&[PortDir::West], 0, 1, 1.0);
        let out = handle_backward_bee(&mut src, &mut mesh, bee, PortDir::East).unwrap();
        assert_eq!(out, BackwardOutcome::Aborted(None));
    }

    #[test]
    fn second_bee_at_source_is_released() {
        let mut mesh = Mesh::new(2, 2, 4, 1.0);
        let mut src = NodeState::new(n(0, 0));
        let winner = backward(&[PortDir::West], 0, 1, 1.0);
        let loser = backward(&[PortDir::West], 1, 1, 1.0);
        handle_backward_bee(&mut src, &mut mesh, winner, PortDir::East).unwrap();
        let out = handle_backward_bee(&mut src, &mut mesh, loser, PortDir::East).unwrap();
        assert_eq!(out, BackwardOutcome::Lost(None));
        let link = mesh.link(n(0, 0), PortDir::East).unwrap();
        assert_eq!(link.held_wires(), 1);
        assert_eq!(link.held_by(&Holder::Bee { flow: flow(), bee: 0 }), 1);
    }

    #[test]
    fn corrupt_arrival_port() {
        let mut mesh = Mesh::new(2, 2, 4, 1.0);
        let mut src = NodeState::new(n(0, 0));
        let bee = backward(&[PortDir::West], 0, 1, 1.0);
        let err = handle_backward_bee(&mut src, &mut mesh, bee, PortDir::North);
        assert!(matches!(err, Err(Error::ProtocolCorruption(_))));
    }

    #[test]
    fn control_over_empty_route_and_double_release() {
        let mut mesh = Mesh::new(2, 2, 4, 1.0);
        let mut state = NodeState::new(n(1, 1));
        let pkt = ControlPacket {
            kind: ControlKind::Teardown,
            flow: flow(),
            bee: 0,
            route: PortList::new(),
            next_index: 0,
        };
        let out = handle_control(&mut state, &mut mesh, pkt.clone(), PortDir::West).unwrap();
        assert_eq!(out, ControlOutcome { freed: false, forward: None });
        let again = handle_control(&mut state, &mut mesh, pkt, PortDir::West).unwrap();
        assert!(!again.freed);
    }
}
