//! Offered load: flow specs, the random generator and the workload file.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric};

use crate::config::{DestinationPattern, HoldTime, TrafficParams};
use crate::error::{Error, Result};
use crate::protocol::FlowId;
use crate::topology::NodeId;

/// The run's random stream: ChaCha8 seeded through `seed_from_u64`, which is
/// platform independent.
pub type RngStream = ChaCha8Rng;

pub fn rng_stream(seed: u64) -> RngStream {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    pub flow: FlowId,
    pub source: NodeId,
    pub destination: NodeId,
    pub required_bandwidth: f64,
    pub arrival_time: u64,
    pub hold_time: u64,
}

impl FlowSpec {
    pub fn validate(&self, width: u16, height: u16) -> Result<()> {
        let inside = |n: NodeId| n.x < width && n.y < height;
        if !inside(self.source) || !inside(self.destination) {
            return Err(Error::config("workload", None, format!("flow {} leaves the {width}x{height} mesh", self.flow)));
        }
        if self.source == self.destination {
            return Err(Error::DegenerateFlow(self.source.to_string()));
        }
        if !(self.required_bandwidth > 0.0 && self.required_bandwidth.is_finite()) {
            return Err(Error::config("workload", None, format!("flow {}: bandwidth must be positive", self.flow)));
        }
        if self.hold_time == 0 {
            return Err(Error::config("workload", None, format!("flow {}: hold time must be positive", self.flow)));
        }
        Ok(())
    }
}

/// Sorts by arrival (stable) and numbers flows per source in that order.
fn number_flows(mut flows: Vec<FlowSpec>) -> Vec<FlowSpec> {
    flows.sort_by_key(|f| f.arrival_time);
    let mut counters: BTreeMap<NodeId, u32> = BTreeMap::new();
    for f in &mut flows {
        let seq = counters.entry(f.source).or_insert(0);
        f.flow = FlowId::new(f.source, *seq);
        *seq += 1;
    }
    flows
}

/// Generates `params.flow_count` flows.
///
/// Arrivals are a Poisson process of rate `arrival_rate` at every eligible
/// source, realised as one merged process with a uniformly drawn source.
/// Arrival instants are truncated to whole cycles.
pub fn generate_traffic(params: &TrafficParams, width: u16, height: u16, rng: &mut RngStream) -> Result<Vec<FlowSpec>> {
    if params.arrival_rate < 0.0 || !params.arrival_rate.is_finite() {
        return Err(Error::config("arrival_rate", None, "must be non-negative"));
    }
    if params.bandwidths.is_empty() {
        return Err(Error::config("bandwidths", None, "needs at least one value"));
    }
    if params.arrival_rate == 0.0 || params.flow_count == 0 {
        return Ok(Vec::new());
    }
    if matches!(params.pattern, DestinationPattern::Transpose) && width != height {
        return Err(Error::config("destination_pattern", None, "transpose needs a square mesh"));
    }

    let nodes: Vec<NodeId> = (0..height)
        .flat_map(|y| (0..width).map(move |x| NodeId::new(x, y)))
        .collect();
    let sources: Vec<NodeId> = match params.pattern {
        DestinationPattern::Transpose => nodes.iter().copied().filter(|n| n.x != n.y).collect(),
        _ => nodes.clone(),
    };

    let gap = Exp::new(params.arrival_rate * sources.len() as f64)
        .map_err(|e| Error::config("arrival_rate", None, e.to_string()))?;
    let weights = WeightedIndex::new(params.bandwidths.iter().map(|&(_, w)| w))
        .map_err(|e| Error::config("bandwidths", None, e.to_string()))?;
    let geometric = match params.hold_time {
        HoldTime::Geometric(mean) => Some(
            Geometric::new(1.0 / mean).map_err(|e| Error::config("hold_time", None, e.to_string()))?,
        ),
        HoldTime::Fixed(_) => None,
    };

    let mut clock = 0.0f64;
    let mut flows = Vec::with_capacity(params.flow_count);
    for _ in 0..params.flow_count {
        clock += gap.sample(rng);
        let source = sources[rng.random_range(0..sources.len())];
        let destination = match &params.pattern {
            DestinationPattern::Transpose => NodeId::new(source.y, source.x),
            DestinationPattern::Hotspot { node, p } if *node != source && rng.random_bool(*p) => *node,
            _ => {
                let pick = rng.random_range(0..nodes.len() - 1);
                let candidate = nodes[pick];
                if candidate == source {
                    nodes[nodes.len() - 1]
                } else {
                    candidate
                }
            }
        };
        let required_bandwidth = params.bandwidths[weights.sample(rng)].0;
        let hold_time = match (params.hold_time, &geometric) {
            (HoldTime::Fixed(n), _) => n,
            (_, Some(g)) => 1 + g.sample(rng),
            _ => unreachable!(),
        };
        flows.push(FlowSpec {
            flow: FlowId::new(source, 0),
            source,
            destination,
            required_bandwidth,
            arrival_time: clock as u64,
            hold_time,
        });
    }
    Ok(number_flows(flows))
}

/// Parses a workload file: one flow per line,
/// `src_x,src_y,dst_x,dst_y,bandwidth,arrival_cycle,hold_cycles`.
/// Blank lines and `#` comments are skipped.
pub fn parse_workload(text: &str, width: u16, height: u16) -> Result<Vec<FlowSpec>> {
    let mut flows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(Error::config("workload", Some(lineno), format!("expected 7 fields, found {}", fields.len())));
        }
        let bad = |what: &str| Error::config("workload", Some(lineno), format!("cannot parse {what}"));
        let int = |i: usize| fields[i].parse::<u16>().map_err(|_| bad(fields[i]));
        let big = |i: usize| fields[i].parse::<u64>().map_err(|_| bad(fields[i]));
        let source = NodeId::new(int(0)?, int(1)?);
        let spec = FlowSpec {
            flow: FlowId::new(source, 0),
            source,
            destination: NodeId::new(int(2)?, int(3)?),
            required_bandwidth: fields[4].parse().map_err(|_| bad(fields[4]))?,
            arrival_time: big(5)?,
            hold_time: big(6)?,
        };
        spec.validate(width, height).map_err(|e| match e {
            Error::Config { key, message, .. } => Error::Config {
                key,
                line: Some(lineno),
                message,
            },
            Error::DegenerateFlow(n) => Error::config("workload", Some(lineno), format!("source equals destination {n}")),
            other => other,
        })?;
        flows.push(spec);
    }
    Ok(number_flows(flows))
}
