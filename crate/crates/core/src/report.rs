//! Metrics aggregation and CSV output.
//!
//! `flows.csv` columns:
//! `flow_seq,src_x,src_y,dst_x,dst_y,bandwidth,phase,setup_latency,path_length,manhattan`
//! (`setup_latency` and `path_length` are empty for flows never established).
//!
//! `summary.csv` columns, in order: [`SUMMARY_HEADER`]. Reals are written
//! fixed-point with six decimals. `config.txt` echoes the effective
//! configuration, defaults marked.

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::engine::{Phase, Simulation};
use crate::error::Result;
use crate::topology::NodeId;

pub const FLOWS_HEADER: &str = "flow_seq,src_x,src_y,dst_x,dst_y,bandwidth,phase,setup_latency,path_length,manhattan";

pub const SUMMARY_HEADER: &str = "offered,established,failed,success_ratio,mean_setup_latency,p95_setup_latency,\
mean_path_stretch,control_packets_per_flow,peak_util_horizontal,mean_util_horizontal,peak_util_vertical,\
mean_util_vertical,events,end_cycle";

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub sequence: u32,
    pub source: NodeId,
    pub destination: NodeId,
    pub bandwidth: f64,
    pub phase: Phase,
    pub setup_latency: Option<u64>,
    pub path_length: Option<u32>,
    pub manhattan: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    pub offered: usize,
    pub established: usize,
    pub failed: usize,
    pub success_ratio: f64,
    pub mean_setup_latency: f64,
    pub p95_setup_latency: f64,
    pub mean_path_stretch: f64,
    pub control_packets_per_flow: f64,
    pub peak_util_horizontal: f64,
    pub mean_util_horizontal: f64,
    pub peak_util_vertical: f64,
    pub mean_util_vertical: f64,
    pub events: u64,
    pub end_cycle: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Effective configuration lines, defaults marked.
    pub header: Vec<String>,
    pub flows: Vec<FlowRecord>,
    pub summary: Summary,
}

/// Aggregates over flow records: the part of the summary that `flows.csv`
/// alone determines.
pub fn flow_aggregates(flows: &[FlowRecord]) -> Summary {
    let offered = flows.len();
    let established: Vec<&FlowRecord> = flows.iter().filter(|f| f.phase.was_established()).collect();
    let failed = flows.iter().filter(|f| f.phase == Phase::Failed).count();
    let mut latencies: Vec<u64> = established.iter().filter_map(|f| f.setup_latency).collect();
    latencies.sort_unstable();
    let mean = |xs: &[f64]| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    let lat_f: Vec<f64> = latencies.iter().map(|&l| l as f64).collect();
    let p95 = if latencies.is_empty() {
        0.0
    } else {
        let rank = (0.95 * latencies.len() as f64).ceil() as usize;
        latencies[rank.max(1) - 1] as f64
    };
    let stretch: Vec<f64> = established
        .iter()
        .filter_map(|f| f.path_length.map(|p| f64::from(p) / f64::from(f.manhattan)))
        .collect();
    Summary {
        offered,
        established: established.len(),
        failed,
        success_ratio: if offered == 0 { 0.0 } else { established.len() as f64 / offered as f64 },
        mean_setup_latency: mean(&lat_f),
        p95_setup_latency: p95,
        mean_path_stretch: mean(&stretch),
        ..Summary::default()
    }
}

impl MetricsReport {
    pub fn from_simulation(sim: &Simulation) -> MetricsReport {
        let config: &RunConfig = sim.config();
        let flows: Vec<FlowRecord> = sim
            .flows()
            .iter()
            .map(|st| FlowRecord {
                sequence: st.spec.flow.sequence,
                source: st.spec.source,
                destination: st.spec.destination,
                bandwidth: st.spec.required_bandwidth,
                phase: st.phase,
                setup_latency: st.setup_latency,
                path_length: st.path_length,
                manhattan: st.manhattan(),
            })
            .collect();
        let mut summary = flow_aggregates(&flows);
        let control: u64 = sim.flows().iter().map(|f| f.control_packets).sum();
        summary.control_packets_per_flow = if flows.is_empty() {
            0.0
        } else {
            control as f64 / flows.len() as f64
        };
        let horizon = sim.now();
        let (h, v) = (sim.horizontal_utilization(), sim.vertical_utilization());
        summary.peak_util_horizontal = h.peak;
        summary.mean_util_horizontal = h.mean(config.wire_count, horizon);
        summary.peak_util_vertical = v.peak;
        summary.mean_util_vertical = v.mean(config.wire_count, horizon);
        summary.events = sim.events_processed();
        summary.end_cycle = horizon;
        MetricsReport {
            header: config.effective_lines(),
            flows,
            summary,
        }
    }

    pub fn flows_csv(&self) -> String {
        let mut out = String::from(FLOWS_HEADER);
        out.push('\n');
        for f in &self.flows {
            let opt = |v: Option<String>| v.unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{:.6},{},{},{},{}\n",
                f.sequence,
                f.source.x,
                f.source.y,
                f.destination.x,
                f.destination.y,
                f.bandwidth,
                f.phase.as_str(),
                opt(f.setup_latency.map(|v| v.to_string())),
                opt(f.path_length.map(|v| v.to_string())),
                f.manhattan
            ));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let s = &self.summary;
        format!(
            "{SUMMARY_HEADER}\n{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}\n",
            s.offered,
            s.established,
            s.failed,
            s.success_ratio,
            s.mean_setup_latency,
            s.p95_setup_latency,
            s.mean_path_stretch,
            s.control_packets_per_flow,
            s.peak_util_horizontal,
            s.mean_util_horizontal,
            s.peak_util_vertical,
            s.mean_util_vertical,
            s.events,
            s.end_cycle
        )
    }

    pub fn config_txt(&self) -> String {
        let mut out = self.header.join("\n");
        out.push('\n');
        out
    }

    /// Writes `flows.csv`, `summary.csv` and `config.txt` into `dir`,
    /// creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("flows.csv"), self.flows_csv())?;
        fs::write(dir.join("summary.csv"), self.summary_csv())?;
        fs::write(dir.join("config.txt"), self.config_txt())?;
        Ok(())
    }
}

/// Parses `flows.csv` back into records.
pub fn parse_flows_csv(text: &str) -> Option<Vec<FlowRecord>> {
    let mut lines = text.lines();
    if lines.next()? != FLOWS_HEADER {
        return None;
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return None;
            }
            let phase = match f[6] {
                "discovering" => Phase::Discovering,
                "reserving" => Phase::Reserving,
                "established" => Phase::Established,
                "torn_down" => Phase::TornDown,
                "failed" => Phase::Failed,
                _ => return None,
            };
            let opt = |s: &str| if s.is_empty() { Some(None) } else { s.parse().ok().map(Some) };
            Some(FlowRecord {
                sequence: f[0].parse().ok()?,
                source: NodeId::new(f[1].parse().ok()?, f[2].parse().ok()?),
                destination: NodeId::new(f[3].parse().ok()?, f[4].parse().ok()?),
                bandwidth: f[5].parse().ok()?,
                phase,
                setup_latency: opt(f[7])?,
                path_length: opt(f[8])?.map(|v: u64| v as u32),
                manhattan: f[9].parse().ok()?,
            })
        })
        .collect()
}
