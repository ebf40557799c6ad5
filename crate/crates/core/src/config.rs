//! Run configuration.
//!
//! The format is line oriented: `key = value`, one per line. Blank lines and
//! everything after `#` are ignored. Unknown and repeated keys are errors.
//!
//! | key                    | default        | notes                                   |
//! |------------------------|----------------|-----------------------------------------|
//! | `mesh_width`           | required       | ≥ 2                                     |
//! | `mesh_height`          | required       | ≥ 2                                     |
//! | `seed`                 | required       | u64                                     |
//! | `wire_count`           | 8              | wires per directed link                 |
//! | `wire_bandwidth`       | 1.0            | bandwidth units per wire                |
//! | `t_hop`                | 1              | cycles per hop for every packet         |
//! | `setup_timeout_factor` | 4.0            | timeout = factor × hop limit × t_hop    |
//! | `hop_limit_metric`     | euclidean      | `euclidean` or `manhattan`              |
//! | `backward_bee_count`   | 3              | 1..=3                                   |
//! | `max_cycles`           | 10000000       | simulation horizon                      |
//! | `trace`                | false          |                                         |
//! | `workload`             | (generated)    | path to a workload file                 |
//! | `arrival_rate`         | 0.005          | flows per node per cycle                |
//! | `flow_count`           | 200            | flows generated                         |
//! | `destination_pattern`  | uniform        | `uniform`, `transpose`, `hotspot:X,Y,P` |
//! | `bandwidths`           | 1:1            | `value:weight` pairs, comma separated   |
//! | `hold_time`            | fixed:200      | `fixed:N` or `geometric:MEAN`           |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::router::MAX_BACKWARD_BEES;
use crate::topology::{HopLimitMetric, NodeId};

#[derive(Debug, Clone, PartialEq)]
pub enum DestinationPattern {
    Uniform,
    /// `(x, y) → (y, x)`; needs a square mesh. Diagonal nodes send nothing.
    Transpose,
    /// With probability `p` the hotspot, otherwise uniform.
    Hotspot { node: NodeId, p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HoldTime {
    Fixed(u64),
    /// Geometric on `1, 2, …` with the given mean.
    Geometric(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficParams {
    pub arrival_rate: f64,
    pub flow_count: usize,
    pub pattern: DestinationPattern,
    /// `(bandwidth, weight)` pairs.
    pub bandwidths: Vec<(f64, f64)>,
    pub hold_time: HoldTime,
}

impl Default for TrafficParams {
    fn default() -> Self {
        TrafficParams {
            arrival_rate: 0.005,
            flow_count: 200,
            pattern: DestinationPattern::Uniform,
            bandwidths: vec![(1.0, 1.0)],
            hold_time: HoldTime::Fixed(200),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mesh_width: u16,
    pub mesh_height: u16,
    pub wire_count: u32,
    pub wire_bandwidth: f64,
    pub t_hop: u64,
    pub setup_timeout_factor: f64,
    pub hop_limit_metric: HopLimitMetric,
    pub backward_bee_count: u8,
    pub max_cycles: u64,
    pub seed: u64,
    pub workload: Option<PathBuf>,
    pub traffic: TrafficParams,
    pub trace: bool,
    /// Keys that were not given and took their default.
    pub defaulted: Vec<&'static str>,
}

const KEYS: &[&str] = &[
    "mesh_width",
    "mesh_height",
    "seed",
    "wire_count",
    "wire_bandwidth",
    "t_hop",
    "setup_timeout_factor",
    "hop_limit_metric",
    "backward_bee_count",
    "max_cycles",
    "trace",
    "workload",
    "arrival_rate",
    "flow_count",
    "destination_pattern",
    "bandwidths",
    "hold_time",
];

impl RunConfig {
    /// A config with every optional key at its default.
    pub fn new(mesh_width: u16, mesh_height: u16, seed: u64) -> Self {
        RunConfig {
            mesh_width,
            mesh_height,
            wire_count: 8,
            wire_bandwidth: 1.0,
            t_hop: 1,
            setup_timeout_factor: 4.0,
            hop_limit_metric: HopLimitMetric::Euclidean,
            backward_bee_count: MAX_BACKWARD_BEES,
            max_cycles: 10_000_000,
            seed,
            workload: None,
            traffic: TrafficParams::default(),
            trace: false,
            defaulted: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut entries: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, Some(lineno), "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            let Some(&known) = KEYS.iter().find(|k| **k == key) else {
                return Err(Error::config(key, Some(lineno), "unknown key"));
            };
            if let Some((first, _)) = entries.insert(known, (lineno, value)) {
                return Err(Error::config(key, Some(lineno), format!("duplicate key (first set on line {first})")));
            }
        }

        let required = |key: &'static str| {
            entries
                .get(key)
                .copied()
                .ok_or_else(|| Error::config(key, None, "missing required key"))
        };
        let (l, v) = required("mesh_width")?;
        let width: u16 = parse_value("mesh_width", l, v)?;
        let (l, v) = required("mesh_height")?;
        let height: u16 = parse_value("mesh_height", l, v)?;
        let (l, v) = required("seed")?;
        let seed: u64 = parse_value("seed", l, v)?;

        let mut cfg = RunConfig::new(width, height, seed);
        for &key in &KEYS[3..] {
            let Some(&(l, v)) = entries.get(key) else {
                cfg.defaulted.push(key);
                continue;
            };
            match key {
                "wire_count" => cfg.wire_count = parse_value(key, l, v)?,
                "wire_bandwidth" => cfg.wire_bandwidth = parse_value(key, l, v)?,
                "t_hop" => cfg.t_hop = parse_value(key, l, v)?,
                "setup_timeout_factor" => cfg.setup_timeout_factor = parse_value(key, l, v)?,
                "hop_limit_metric" => {
                    cfg.hop_limit_metric = match v {
                        "euclidean" => HopLimitMetric::Euclidean,
                        "manhattan" => HopLimitMetric::Manhattan,
                        _ => return Err(Error::config(key, Some(l), "expected `euclidean` or `manhattan`")),
                    }
                }
                "backward_bee_count" => cfg.backward_bee_count = parse_value(key, l, v)?,
                "max_cycles" => cfg.max_cycles = parse_value(key, l, v)?,
                "trace" => cfg.trace = parse_value(key, l, v)?,
                "workload" => cfg.workload = Some(PathBuf::from(v)),
                "arrival_rate" => cfg.traffic.arrival_rate = parse_value(key, l, v)?,
                "flow_count" => cfg.traffic.flow_count = parse_value(key, l, v)?,
                "destination_pattern" => cfg.traffic.pattern = parse_pattern(l, v)?,
                "bandwidths" => cfg.traffic.bandwidths = parse_bandwidths(l, v)?,
                "hold_time" => cfg.traffic.hold_time = parse_hold(l, v)?,
                _ => unreachable!("key list and match arms disagree on {key}"),
            }
        }
        cfg.validate_with(|key| entries.get(key).map(|(l, _)| *l))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(|_| None)
    }

    fn validate_with(&self, line_of: impl Fn(&str) -> Option<usize>) -> Result<()> {
        let fail = |key: &str, msg: &str| Err(Error::config(key, line_of(key), msg));
        if self.mesh_width < 2 {
            return fail("mesh_width", "must be at least 2");
        }
        if self.mesh_height < 2 {
            return fail("mesh_height", "must be at least 2");
        }
        if self.wire_count == 0 {
            return fail("wire_count", "must be at least 1");
        }
        if !(self.wire_bandwidth.is_finite() && self.wire_bandwidth > 0.0) {
            return fail("wire_bandwidth", "must be positive");
        }
        if self.t_hop == 0 {
            return fail("t_hop", "must be at least 1");
        }
        if !(self.setup_timeout_factor.is_finite() && self.setup_timeout_factor > 0.0) {
            return fail("setup_timeout_factor", "must be positive");
        }
        if !(1..=MAX_BACKWARD_BEES).contains(&self.backward_bee_count) {
            return fail("backward_bee_count", "must be 1, 2 or 3");
        }
        let t = &self.traffic;
        if !(t.arrival_rate.is_finite() && t.arrival_rate >= 0.0) {
            return fail("arrival_rate", "must be non-negative");
        }
        if t.bandwidths.is_empty() {
            return fail("bandwidths", "needs at least one value");
        }
        if t.bandwidths.iter().any(|&(b, w)| !(b > 0.0 && b.is_finite() && w > 0.0 && w.is_finite())) {
            return fail("bandwidths", "values and weights must be positive");
        }
        match t.hold_time {
            HoldTime::Fixed(0) => return fail("hold_time", "must be at least 1 cycle"),
            HoldTime::Geometric(m) if !(m >= 1.0 && m.is_finite()) => {
                return fail("hold_time", "geometric mean must be at least 1")
            }
            _ => {}
        }
        match &t.pattern {
            DestinationPattern::Transpose if self.mesh_width != self.mesh_height => {
                return fail("destination_pattern", "transpose needs a square mesh")
            }
            DestinationPattern::Hotspot { node, p } => {
                if node.x >= self.mesh_width || node.y >= self.mesh_height {
                    return fail("destination_pattern", "hotspot outside the mesh");
                }
                if !(0.0..=1.0).contains(p) {
                    return fail("destination_pattern", "hotspot probability must be in [0, 1]");
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Effective configuration as `key = value` lines; defaulted keys are
    /// marked.
    pub fn effective_lines(&self) -> Vec<String> {
        let t = &self.traffic;
        let pattern = match &t.pattern {
            DestinationPattern::Uniform => "uniform".to_string(),
            DestinationPattern::Transpose => "transpose".to_string(),
            DestinationPattern::Hotspot { node, p } => format!("hotspot:{},{},{}", node.x, node.y, p),
        };
        let bandwidths = t
            .bandwidths
            .iter()
            .map(|(b, w)| format!("{b}:{w}"))
            .collect::<Vec<_>>()
            .join(",");
        let hold = match t.hold_time {
            HoldTime::Fixed(n) => format!("fixed:{n}"),
            HoldTime::Geometric(m) => format!("geometric:{m}"),
        };
        let workload = self
            .workload
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "(generated)".into());
        let values: [(&str, String); 17] = [
            ("mesh_width", self.mesh_width.to_string()),
            ("mesh_height", self.mesh_height.to_string()),
            ("seed", self.seed.to_string()),
            ("wire_count", self.wire_count.to_string()),
            ("wire_bandwidth", self.wire_bandwidth.to_string()),
            ("t_hop", self.t_hop.to_string()),
            ("setup_timeout_factor", self.setup_timeout_factor.to_string()),
            ("hop_limit_metric", self.hop_limit_metric.as_str().to_string()),
            ("backward_bee_count", self.backward_bee_count.to_string()),
            ("max_cycles", self.max_cycles.to_string()),
            ("trace", self.trace.to_string()),
            ("workload", workload),
            ("arrival_rate", t.arrival_rate.to_string()),
            ("flow_count", t.flow_count.to_string()),
            ("destination_pattern", pattern),
            ("bandwidths", bandwidths),
            ("hold_time", hold),
        ];
        values
            .into_iter()
            .map(|(k, v)| {
                let mut line = format!("{k} = {v}");
                if self.defaulted.contains(&k) {
                    let _ = write!(line, "  # default");
                }
                line
            })
            .collect()
    }
}

fn parse_value<T: FromStr>(key: &str, line: usize, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, Some(line), format!("cannot parse {value:?}")))
}

fn parse_pattern(line: usize, value: &str) -> Result<DestinationPattern> {
    let key = "destination_pattern";
    match value {
        "uniform" => Ok(DestinationPattern::Uniform),
        "transpose" => Ok(DestinationPattern::Transpose),
        _ => {
            let args = value
                .strip_prefix("hotspot:")
                .ok_or_else(|| Error::config(key, Some(line), "expected uniform, transpose or hotspot:X,Y,P"))?;
            let parts: Vec<&str> = args.split(',').map(str::trim).collect();
            let [x, y, p] = parts[..] else {
                return Err(Error::config(key, Some(line), "hotspot takes X,Y,P"));
            };
            Ok(DestinationPattern::Hotspot {
                node: NodeId::new(parse_value(key, line, x)?, parse_value(key, line, y)?),
                p: parse_value(key, line, p)?,
            })
        }
    }
}

fn parse_bandwidths(line: usize, value: &str) -> Result<Vec<(f64, f64)>> {
    let key = "bandwidths";
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (b, w) = item.split_once(':').unwrap_or((item, "1"));
            Ok((parse_value(key, line, b.trim())?, parse_value(key, line, w.trim())?))
        })
        .collect()
}

fn parse_hold(line: usize, value: &str) -> Result<HoldTime> {
    let key = "hold_time";
    if let Some(n) = value.strip_prefix("fixed:") {
        Ok(HoldTime::Fixed(parse_value(key, line, n.trim())?))
    } else if let Some(m) = value.strip_prefix("geometric:") {
        Ok(HoldTime::Geometric(parse_value(key, line, m.trim())?))
    } else {
        Err(Error::config(key, Some(line), "expected fixed:N or geometric:MEAN"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::parse("mesh_width = 4\nmesh_height = 4\nseed = 7\n").unwrap();
        assert_eq!(cfg.wire_count, 8);
        assert_eq!(cfg.backward_bee_count, 3);
        assert_eq!(cfg.hop_limit_metric, HopLimitMetric::Euclidean);
        assert_eq!(cfg.defaulted.len(), KEYS.len() - 3);
        let lines = cfg.effective_lines();
        assert_eq!(lines.len(), KEYS.len());
        assert!(lines.iter().filter(|l| l.ends_with("# default")).count() == KEYS.len() - 3);
        assert_eq!(lines[0], "mesh_width = 4");
    }

    #[test]
    fn full_config() {
        let text = "\
# comment
mesh_width = 6
mesh_height = 6
seed = 1
wire_count = 4   # trailing comment
wire_bandwidth = 0.5
hop_limit_metric = manhattan
backward_bee_count = 1
destination_pattern = hotspot:2,3,0.25
bandwidths = 1:0.5, 2:0.5
hold_time = geometric:300
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.wire_count, 4);
        assert_eq!(cfg.backward_bee_count, 1);
        assert_eq!(cfg.traffic.bandwidths, vec![(1.0, 0.5), (2.0, 0.5)]);
        assert_eq!(
            cfg.traffic.pattern,
            DestinationPattern::Hotspot {
                node: NodeId::new(2, 3),
                p: 0.25
            }
        );
        assert_eq!(cfg.traffic.hold_time, HoldTime::Geometric(300.0));
    }

    fn key_of(err: Error) -> (String, Option<usize>) {
        match err {
            Error::Config { key, line, .. } => (key, line),
            other => panic!("not a config error: {other}"),
        }
    }

    #[test]
    fn rejects_bad_input() {
        let base = "mesh_width = 4\nmesh_height = 4\nseed = 7\n";
        let err = RunConfig::parse(&format!("{base}backward_bee_count = 4\n")).unwrap_err();
        assert_eq!(key_of(err), ("backward_bee_count".into(), Some(4)));

        let err = RunConfig::parse(&format!("{base}seed = 8\n")).unwrap_err();
        assert_eq!(key_of(err), ("seed".into(), Some(4)));

        let err = RunConfig::parse(&format!("{base}colour = blue\n")).unwrap_err();
        assert_eq!(key_of(err), ("colour".into(), Some(4)));

        let err = RunConfig::parse("mesh_width = 4\nseed = 1\n").unwrap_err();
        assert_eq!(key_of(err), ("mesh_height".into(), None));

        let err = RunConfig::parse("mesh_width = 1\nmesh_height = 4\nseed = 1\n").unwrap_err();
        assert_eq!(key_of(err), ("mesh_width".into(), Some(1)));

        let err = RunConfig::parse(&format!("{base}arrival_rate = -1\n")).unwrap_err();
        assert_eq!(key_of(err).0, "arrival_rate");

        let err = RunConfig::parse(&format!("{base}bandwidths = \n")).unwrap_err();
        assert_eq!(key_of(err).0, "bandwidths");

        let err = RunConfig::parse("mesh_width = 4\nmesh_height = 3\nseed = 1\ndestination_pattern = transpose\n")
            .unwrap_err();
        assert_eq!(key_of(err).0, "destination_pattern");

        assert_eq!(Error::config("x", None, "y").exit_code(), 2);
    }
}
