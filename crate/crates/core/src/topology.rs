//! 2D mesh geometry and SDM link state.
//!
//! Every node has up to four mesh ports. Each physical channel between two
//! neighbours is modelled as two directed [`LinkState`]s, one per direction,
//! each owning its own pool of wires. North is `+y` and East is `+x`.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::protocol::FlowId;

/// Tolerance applied before rounding a bandwidth/wire ratio up, so that
/// representation error such as `1.1 / 0.1 = 11.000000000000002` does not
/// cost an extra wire.
const WIRE_RATIO_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub x: u16,
    pub y: u16,
}

impl NodeId {
    pub const fn new(x: u16, y: u16) -> Self {
        NodeId { x, y }
    }

    pub fn manhattan(self, other: NodeId) -> u32 {
        u32::from(self.x.abs_diff(other.x)) + u32::from(self.y.abs_diff(other.y))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PortDir {
    South,
    West,
    North,
    East,
    Local,
}

impl PortDir {
    /// The four mesh ports, in 2-bit code order (00, 01, 10, 11).
    pub const MESH: [PortDir; 4] = [PortDir::South, PortDir::West, PortDir::East, PortDir::North];

    pub fn opposite(self) -> PortDir {
        match self {
            PortDir::South => PortDir::North,
            PortDir::North => PortDir::South,
            PortDir::West => PortDir::East,
            PortDir::East => PortDir::West,
            PortDir::Local => PortDir::Local,
        }
    }

    fn slot(self) -> Option<usize> {
        match self {
            PortDir::South => Some(0),
            PortDir::West => Some(1),
            PortDir::North => Some(2),
            PortDir::East => Some(3),
            PortDir::Local => None,
        }
    }

    pub fn is_horizontal(self) -> bool {
        matches!(self, PortDir::East | PortDir::West)
    }

    pub fn name(self) -> &'static str {
        match self {
            PortDir::South => "S",
            PortDir::West => "W",
            PortDir::North => "N",
            PortDir::East => "E",
            PortDir::Local => "L",
        }
    }
}

impl fmt::Display for PortDir {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which metric the forward-bee hop budget is derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HopLimitMetric {
    #[default]
    Euclidean,
    Manhattan,
}

impl HopLimitMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            HopLimitMetric::Euclidean => "euclidean",
            HopLimitMetric::Manhattan => "manhattan",
        }
    }
}

/// Forward-bee hop budget: twice the source/destination distance, rounded up.
///
/// The Euclidean variant is computed exactly in integers as the smallest `h`
/// with `h² ≥ 4(dx² + dy²)`.
pub fn hop_limit(src: NodeId, dst: NodeId, metric: HopLimitMetric) -> Result<u32> {
    if src == dst {
        return Err(Error::DegenerateFlow(src.to_string()));
    }
    let dx = u64::from(src.x.abs_diff(dst.x));
    let dy = u64::from(src.y.abs_diff(dst.y));
    Ok(match metric {
        HopLimitMetric::Manhattan => (2 * (dx + dy)) as u32,
        HopLimitMetric::Euclidean => {
            let target = 4 * (dx * dx + dy * dy);
            let mut h = (target as f64).sqrt() as u64;
            while h * h < target {
                h += 1;
            }
            while h > 0 && (h - 1) * (h - 1) >= target {
                h -= 1;
            }
            h as u32
        }
    })
}

/// Number of wires a reservation of `bandwidth` occupies.
pub fn wires_for(bandwidth: f64, wire_bandwidth: f64) -> u32 {
    let ratio = bandwidth / wire_bandwidth;
    ((ratio - WIRE_RATIO_EPS).ceil().max(1.0)) as u32
}

/// Owner of a wire reservation.
///
/// Sibling backward bees of one flow hold separate reservations so that a
/// losing bee's release never touches the winner's wires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Holder {
    Bee { flow: FlowId, bee: u8 },
    /// Pre-loaded load not owned by any simulated flow.
    Background,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    pub from: NodeId,
    pub dir: PortDir,
    pub wire_count: u32,
    pub wire_bandwidth: f64,
    reservations: BTreeMap<Holder, u32>,
    held: u32,
}

impl LinkState {
    pub fn new(from: NodeId, dir: PortDir, wire_count: u32, wire_bandwidth: f64) -> Self {
        assert!(dir != PortDir::Local, "links have a mesh direction");
        assert!(wire_count >= 1 && wire_bandwidth > 0.0);
        LinkState {
            from,
            dir,
            wire_count,
            wire_bandwidth,
            reservations: BTreeMap::new(),
            held: 0,
        }
    }

    pub fn held_wires(&self) -> u32 {
        self.held
    }

    pub fn free_wires(&self) -> u32 {
        self.wire_count - self.held
    }

    pub fn residual_bandwidth(&self) -> f64 {
        f64::from(self.free_wires()) * self.wire_bandwidth
    }

    pub fn reservations(&self) -> impl Iterator<Item = (&Holder, &u32)> {
        self.reservations.iter()
    }

    pub fn held_by(&self, holder: &Holder) -> u32 {
        self.reservations.get(holder).copied().unwrap_or(0)
    }

    /// Whether a reservation of `bandwidth` would currently fit.
    pub fn admits(&self, bandwidth: f64) -> bool {
        wires_for(bandwidth, self.wire_bandwidth) <= self.free_wires()
    }

    /// Reserves `ceil(bandwidth / wire_bandwidth)` wires for `holder`.
    /// Returns the number of wires taken, or `None` with the link unchanged.
    pub fn reserve(&mut self, holder: Holder, bandwidth: f64) -> Option<u32> {
        let wires = wires_for(bandwidth, self.wire_bandwidth);
        self.reserve_wires(holder, wires).then_some(wires)
    }

    pub fn reserve_wires(&mut self, holder: Holder, wires: u32) -> bool {
        if wires == 0 || wires > self.free_wires() {
            return false;
        }
        *self.reservations.entry(holder).or_insert(0) += wires;
        self.held += wires;
        true
    }

    /// Frees everything `holder` has on this link; returns the wires freed.
    pub fn release(&mut self, holder: &Holder) -> Option<u32> {
        let wires = self.reservations.remove(holder)?;
        self.held -= wires;
        Some(wires)
    }

    pub(crate) fn check(&self) -> std::result::Result<(), String> {
        let sum: u32 = self.reservations.values().sum();
        if sum != self.held || sum > self.wire_count {
            return Err(format!(
                "link {}->{}: {} wires held of {} (cached {})",
                self.from, self.dir, sum, self.wire_count, self.held
            ));
        }
        Ok(())
    }
}

/// A `width × height` mesh with one directed link per existing neighbour pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    width: u16,
    height: u16,
    wire_count: u32,
    wire_bandwidth: f64,
    links: Vec<Option<LinkState>>,
}

impl Mesh {
    pub fn new(width: u16, height: u16, wire_count: u32, wire_bandwidth: f64) -> Self {
        assert!(width >= 1 && height >= 1);
        let mut mesh = Mesh {
            width,
            height,
            wire_count,
            wire_bandwidth,
            links: Vec::with_capacity(usize::from(width) * usize::from(height) * 4),
        };
        for y in 0..height {
            for x in 0..width {
                let node = NodeId::new(x, y);
                for slot in 0..4 {
                    let dir = [PortDir::South, PortDir::West, PortDir::North, PortDir::East][slot];
                    let link = mesh
                        .neighbor(node, dir)
                        .map(|_| LinkState::new(node, dir, wire_count, wire_bandwidth));
                    mesh.links.push(link);
                }
            }
        }
        mesh
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn wire_count(&self) -> u32 {
        self.wire_count
    }

    pub fn wire_bandwidth(&self) -> f64 {
        self.wire_bandwidth
    }

    pub fn node_count(&self) -> usize {
        usize::from(self.width) * usize::from(self.height)
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node.x < self.width && node.y < self.height
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| NodeId::new(x, y)))
    }

    pub fn index(&self, node: NodeId) -> usize {
        usize::from(node.y) * usize::from(self.width) + usize::from(node.x)
    }

    /// Adjacent node in `dir`, or `None` at the mesh edge (and for `Local`).
    pub fn neighbor(&self, node: NodeId, dir: PortDir) -> Option<NodeId> {
        let NodeId { x, y } = node;
        match dir {
            PortDir::East if x + 1 < self.width => Some(NodeId::new(x + 1, y)),
            PortDir::West if x > 0 => Some(NodeId::new(x - 1, y)),
            PortDir::North if y + 1 < self.height => Some(NodeId::new(x, y + 1)),
            PortDir::South if y > 0 => Some(NodeId::new(x, y - 1)),
            _ => None,
        }
    }

    fn slot(&self, node: NodeId, dir: PortDir) -> Option<usize> {
        if !self.contains(node) {
            return None;
        }
        dir.slot().map(|s| self.index(node) * 4 + s)
    }

    pub fn link(&self, node: NodeId, dir: PortDir) -> Option<&LinkState> {
        self.slot(node, dir).and_then(|i| self.links[i].as_ref())
    }

    pub fn link_mut(&mut self, node: NodeId, dir: PortDir) -> Option<&mut LinkState> {
        self.slot(node, dir).and_then(move |i| self.links[i].as_mut())
    }

    pub fn links(&self) -> impl Iterator<Item = &LinkState> {
        self.links.iter().flatten()
    }

    pub fn total_held_wires(&self) -> u64 {
        self.links().map(|l| u64::from(l.held_wires())).sum()
    }

    /// Wires held across the network by every holder except `Background`.
    pub fn circuit_wires(&self) -> u64 {
        self.links()
            .map(|l| u64::from(l.held_wires() - l.held_by(&Holder::Background)))
            .sum()
    }

    /// Checks `Σ wires-held ≤ wire_count` on every link.
    pub fn check_wire_invariant(&self) -> std::result::Result<(), String> {
        self.links().try_for_each(LinkState::check)
    }
}
