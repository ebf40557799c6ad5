//! Packet formats and the bit-packed port list.
//!
//! A path is recorded as the sequence of output ports taken, two bits per
//! hop, so its size depends only on the hop count and never on the width of
//! node addresses:
//!
//! | port  | code |
//! |-------|------|
//! | South | `00` |
//! | West  | `01` |
//! | North | `11` |
//! | East  | `10` |
//!
//! Complementing both bits of a code yields the opposite port, which is what
//! makes [`PortList::reverse_complement`] a route back to the origin.
//!
//! # Wire layout
//!
//! [`ForwardBee::to_bytes`] produces the trace-log record, all integers
//! big-endian:
//!
//! ```text
//! offset  size  field
//!      0     2  flow source x
//!      2     2  flow source y
//!      4     4  flow sequence
//!      8     2  destination x
//!     10     2  destination y
//!     12     2  hop counter
//!     14     8  required bandwidth (IEEE-754 binary64)
//!     22     2  port-list length L (entries)
//!     24     ⌈2L/8⌉  port-list bits, first entry in the two most significant bits
//! ```

use std::fmt;

use crate::error::{Error, Result};
use crate::topology::{Mesh, NodeId, PortDir};

pub fn encode_port(dir: PortDir) -> Result<u8> {
    match dir {
        PortDir::South => Ok(0b00),
        PortDir::West => Ok(0b01),
        PortDir::North => Ok(0b11),
        PortDir::East => Ok(0b10),
        PortDir::Local => Err(Error::InvalidPort),
    }
}

/// Decodes the low two bits of `code`.
pub fn decode_port(code: u8) -> PortDir {
    match code & 0b11 {
        0b00 => PortDir::South,
        0b01 => PortDir::West,
        0b11 => PortDir::North,
        _ => PortDir::East,
    }
}

/// Packed sequence of 2-bit port codes, first entry most significant.
///
/// Bits past the last entry are always zero, so derived equality compares
/// paths.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct PortList {
    bytes: Vec<u8>,
    len: usize,
}

impl PortList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn code(&self, index: usize) -> Option<u8> {
        (index < self.len).then(|| (self.bytes[index / 4] >> (6 - 2 * (index % 4))) & 0b11)
    }

    pub fn get(&self, index: usize) -> Option<PortDir> {
        self.code(index).map(decode_port)
    }

    pub fn last(&self) -> Option<PortDir> {
        self.len.checked_sub(1).and_then(|i| self.get(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = PortDir> + '_ {
        (0..self.len).map(move |i| self.get(i).unwrap())
    }

    pub fn codes(&self) -> impl Iterator<Item = u8> + '_ {
        (0..self.len).map(move |i| self.code(i).unwrap())
    }

    fn push_code(&mut self, code: u8) {
        if self.len.is_multiple_of(4) {
            self.bytes.push(0);
        }
        let shift = 6 - 2 * (self.len % 4);
        self.bytes[self.len / 4] |= (code & 0b11) << shift;
        self.len += 1;
    }

    /// Appends `dir`, refusing to grow past `limit` entries.
    pub fn push(&mut self, dir: PortDir, limit: usize) -> Result<()> {
        let code = encode_port(dir)?;
        if self.len >= limit {
            return Err(Error::PortListOverflow { limit });
        }
        self.push_code(code);
        Ok(())
    }

    /// Copy of `self` with `dir` appended.
    pub fn pushed(&self, dir: PortDir, limit: usize) -> Result<PortList> {
        let mut next = self.clone();
        next.push(dir, limit)?;
        Ok(next)
    }

    /// First `n` entries.
    pub fn prefix(&self, n: usize) -> PortList {
        let mut out = PortList::new();
        for code in self.codes().take(n) {
            out.push_code(code);
        }
        out
    }

    /// Reverses the entry order (at 2-bit granularity) and flips every bit,
    /// turning the path `s → d` into the path `d → s`.
    pub fn reverse_complement(&self) -> PortList {
        let mut out = PortList::new();
        for i in (0..self.len).rev() {
            out.push_code(!self.code(i).unwrap());
        }
        out
    }

    /// Nodes visited when following the list from `start`, `start` included.
    pub fn walk(&self, mesh: &Mesh, start: NodeId) -> Result<Vec<NodeId>> {
        if !mesh.contains(start) {
            return Err(Error::InvalidPath {
                step: 0,
                at: start.to_string(),
            });
        }
        let mut nodes = Vec::with_capacity(self.len + 1);
        nodes.push(start);
        let mut at = start;
        for (step, dir) in self.iter().enumerate() {
            at = mesh.neighbor(at, dir).ok_or_else(|| Error::InvalidPath {
                step,
                at: at.to_string(),
            })?;
            nodes.push(at);
        }
        Ok(nodes)
    }

    /// ASCII rendering, two characters per entry.
    pub fn bit_string(&self) -> String {
        self.codes()
            .flat_map(|c| [(c >> 1) & 1, c & 1])
            .map(|b| if b == 1 { '1' } else { '0' })
            .collect()
    }

    pub fn from_bit_string(bits: &str) -> Result<PortList> {
        let bits = bits.as_bytes();
        if !bits.len().is_multiple_of(2) {
            return Err(Error::MalformedPortList(format!("odd bit count {}", bits.len())));
        }
        let mut out = PortList::new();
        for pair in bits.chunks(2) {
            let mut code = 0u8;
            for &b in pair {
                code = (code << 1)
                    | match b {
                        b'0' => 0,
                        b'1' => 1,
                        other => {
                            return Err(Error::MalformedPortList(format!(
                                "unexpected character {:?}",
                                other as char
                            )))
                        }
                    };
            }
            out.push_code(code);
        }
        Ok(out)
    }

    pub fn from_dirs<I: IntoIterator<Item = PortDir>>(dirs: I) -> Result<PortList> {
        let mut out = PortList::new();
        for dir in dirs {
            out.push(dir, usize::MAX)?;
        }
        Ok(out)
    }

    /// Packed bits only, `⌈2L/8⌉` bytes.
    pub fn packed(&self) -> &[u8] {
        &self.bytes
    }

    /// Length (`u16`, big-endian) followed by the packed bits.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + self.bytes.len());
        out.extend_from_slice(&(self.len as u16).to_be_bytes());
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn from_bytes(raw: &[u8]) -> Result<(PortList, usize)> {
        if raw.len() < 2 {
            return Err(Error::MalformedPortList("missing length".into()));
        }
        let len = usize::from(u16::from_be_bytes([raw[0], raw[1]]));
        let nbytes = len.div_ceil(4);
        let body = raw
            .get(2..2 + nbytes)
            .ok_or_else(|| Error::MalformedPortList(format!("truncated: need {nbytes} bytes")))?;
        let mut out = PortList::new();
        for i in 0..len {
            out.push_code(body[i / 4] >> (6 - 2 * (i % 4)));
        }
        if out.bytes != body {
            return Err(Error::MalformedPortList("nonzero padding bits".into()));
        }
        Ok((out, 2 + nbytes))
    }
}

impl fmt::Debug for PortList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PortList(")?;
        for dir in self.iter() {
            f.write_str(dir.name())?;
        }
        write!(f, ")")
    }
}

/// Identity of one offered flow: its source plus a per-source counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowId {
    pub source: NodeId,
    pub sequence: u32,
}

impl FlowId {
    pub const fn new(source: NodeId, sequence: u32) -> Self {
        FlowId { source, sequence }
    }
}

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.source, self.sequence)
    }
}

/// Discovery packet. Reserves nothing; records the ports it took.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardBee {
    pub flow: FlowId,
    pub source: NodeId,
    pub destination: NodeId,
    pub hop_counter: u32,
    pub required_bandwidth: f64,
    pub ports: PortList,
}

impl ForwardBee {
    pub fn new(flow: FlowId, destination: NodeId, required_bandwidth: f64) -> Self {
        ForwardBee {
            flow,
            source: flow.source,
            destination,
            hop_counter: 0,
            required_bandwidth,
            ports: PortList::new(),
        }
    }

    pub fn is_well_formed(&self) -> bool {
        self.hop_counter as usize == self.ports.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.ports.packed().len());
        out.extend_from_slice(&self.source.x.to_be_bytes());
        out.extend_from_slice(&self.source.y.to_be_bytes());
        out.extend_from_slice(&self.flow.sequence.to_be_bytes());
        out.extend_from_slice(&self.destination.x.to_be_bytes());
        out.extend_from_slice(&self.destination.y.to_be_bytes());
        out.extend_from_slice(&(self.hop_counter as u16).to_be_bytes());
        out.extend_from_slice(&self.required_bandwidth.to_be_bytes());
        out.extend_from_slice(&self.ports.to_bytes());
        out
    }

    pub fn from_bytes(raw: &[u8]) -> Result<ForwardBee> {
        if raw.len() < 24 {
            return Err(Error::MalformedPortList("forward bee record shorter than 24 bytes".into()));
        }
        let u16_at = |i: usize| u16::from_be_bytes([raw[i], raw[i + 1]]);
        let source = NodeId::new(u16_at(0), u16_at(2));
        let sequence = u32::from_be_bytes(raw[4..8].try_into().unwrap());
        let destination = NodeId::new(u16_at(8), u16_at(10));
        let hop_counter = u32::from(u16_at(12));
        let required_bandwidth = f64::from_be_bytes(raw[14..22].try_into().unwrap());
        let (ports, _) = PortList::from_bytes(&raw[22..])?;
        Ok(ForwardBee {
            flow: FlowId::new(source, sequence),
            source,
            destination,
            hop_counter,
            required_bandwidth,
            ports,
        })
    }
}

/// Reservation packet travelling from the destination back to the source.
///
/// `route` is the reverse complement of the forward bee's port list;
/// `next_index` counts the entries already traversed, the hop in flight
/// included. Each node after the destination reserves the data-direction link
/// the bee just crossed, so a bee in flight holds `next_index - 1` links.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardBee {
    pub flow: FlowId,
    /// Which of the (at most three) sibling bees of the flow this is.
    pub bee: u8,
    pub route: PortList,
    pub next_index: usize,
    pub required_bandwidth: f64,
}

impl BackwardBee {
    /// Links held for this bee while it is in flight.
    pub fn reserved_prefix(&self) -> usize {
        self.next_index.saturating_sub(1)
    }

    pub fn at_source(&self) -> bool {
        self.next_index == self.route.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlKind {
    Teardown,
    Release,
}

impl ControlKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ControlKind::Teardown => "teardown",
            ControlKind::Release => "release",
        }
    }
}

/// Frees one circuit's (or one bee's) wires node by node along `route`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPacket {
    pub kind: ControlKind,
    pub flow: FlowId,
    pub bee: u8,
    pub route: PortList,
    pub next_index: usize,
}

/// Anything that travels over a link.
#[derive(Debug, Clone, PartialEq)]
pub enum Packet {
    Forward(ForwardBee),
    Backward(BackwardBee),
    Control(ControlPacket),
}

impl Packet {
    pub fn flow(&self) -> FlowId {
        match self {
            Packet::Forward(b) => b.flow,
            Packet::Backward(b) => b.flow,
            Packet::Control(c) => c.flow,
        }
    }

    pub fn kind_str(&self) -> &'static str {
        match self {
            Packet::Forward(_) => "forward",
            Packet::Backward(_) => "backward",
            Packet::Control(c) => c.kind.as_str(),
        }
    }

    /// Hop counter for forward bees, route progress for the others.
    pub fn hop_counter(&self) -> usize {
        match self {
            Packet::Forward(b) => b.hop_counter as usize,
            Packet::Backward(b) => b.next_index,
            Packet::Control(c) => c.next_index,
        }
    }
}
