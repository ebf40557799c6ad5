//! Python bindings: route encoding, configuration, simulation runs and the
//! path oracle.

use beenoc_core::oracle::{self, SuiteSummary};
use beenoc_core::protocol::{decode_port, encode_port};
use beenoc_core::report::FlowRecord;
use beenoc_core::topology::Holder;
use beenoc_core::{Error, HopLimitMetric, Mesh, MetricsReport, NodeId, PortDir};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        Error::Config { .. } | Error::OracleGuard(_) | Error::DegenerateFlow(_) | Error::InvalidPort => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_dir(name: &str) -> PyResult<PortDir> {
    match name {
        "S" | "south" => Ok(PortDir::South),
        "W" | "west" => Ok(PortDir::West),
        "N" | "north" => Ok(PortDir::North),
        "E" | "east" => Ok(PortDir::East),
        _ => Err(PyValueError::new_err(format!("unknown port {name:?}, expected one of N, E, S, W"))),
    }
}

fn parse_metric(name: &str) -> PyResult<HopLimitMetric> {
    match name {
        "euclidean" => Ok(HopLimitMetric::Euclidean),
        "manhattan" => Ok(HopLimitMetric::Manhattan),
        _ => Err(PyValueError::new_err(format!("unknown metric {name:?}"))),
    }
}

fn node((x, y): (u16, u16)) -> NodeId {
    NodeId::new(x, y)
}

/// Packed list of 2-bit output ports.
#[pyclass(name = "PortList", module = "beenoc")]
pub struct PyPortList {
    inner: beenoc_core::PortList,
}

#[pymethods]
impl PyPortList {
    /// Builds a list from port letters, e.g. `["E", "E", "S"]`.
    #[new]
    #[pyo3(signature = (ports=Vec::new()))]
    fn new(ports: Vec<String>) -> PyResult<Self> {
        let dirs = ports.iter().map(|p| parse_dir(p)).collect::<PyResult<Vec<_>>>()?;
        let inner = beenoc_core::PortList::from_dirs(dirs).map_err(to_py)?;
        Ok(PyPortList { inner })
    }

    #[staticmethod]
    fn from_bits(bits: &str) -> PyResult<Self> {
        let inner = beenoc_core::PortList::from_bit_string(bits).map_err(to_py)?;
        Ok(PyPortList { inner })
    }

    fn bits(&self) -> String {
        self.inner.bit_string()
    }

    fn ports(&self) -> Vec<&'static str> {
        self.inner.iter().map(PortDir::name).collect()
    }

    fn reverse_complement(&self) -> Self {
        PyPortList {
            inner: self.inner.reverse_complement(),
        }
    }

    /// Nodes visited from `start` on a `width` x `height` mesh.
    fn walk(&self, width: u16, height: u16, start: (u16, u16)) -> PyResult<Vec<(u16, u16)>> {
        let mesh = Mesh::new(width, height, 1, 1.0);
        let nodes = self.inner.walk(&mesh, node(start)).map_err(to_py)?;
        Ok(nodes.into_iter().map(|n| (n.x, n.y)).collect())
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.inner.to_bytes()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: PyRef<'_, PyPortList>) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("PortList('{}')", self.inner.bit_string())
    }
}

#[pyfunction(name = "encode_port")]
fn py_encode_port(port: &str) -> PyResult<u8> {
    encode_port(parse_dir(port)?).map_err(to_py)
}

#[pyfunction(name = "decode_port")]
fn py_decode_port(code: u8) -> PyResult<&'static str> {
    if code > 0b11 {
        return Err(PyValueError::new_err(format!("port code {code} is wider than two bits")));
    }
    Ok(decode_port(code).name())
}

#[pyfunction(name = "hop_limit", signature = (src, dst, metric="euclidean"))]
fn py_hop_limit(src: (u16, u16), dst: (u16, u16), metric: &str) -> PyResult<u32> {
    beenoc_core::hop_limit(node(src), node(dst), parse_metric(metric)?).map_err(to_py)
}

/// Run configuration in the `key = value` text format.
#[pyclass(name = "RunConfig", module = "beenoc")]
pub struct PyRunConfig {
    inner: beenoc_core::RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    fn new(mesh_width: u16, mesh_height: u16, seed: u64) -> Self {
        PyRunConfig {
            inner: beenoc_core::RunConfig::new(mesh_width, mesh_height, seed),
        }
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(PyRunConfig {
            inner: beenoc_core::RunConfig::parse(text).map_err(to_py)?,
        })
    }

    #[getter]
    fn mesh_width(&self) -> u16 {
        self.inner.mesh_width
    }

    #[getter]
    fn mesh_height(&self) -> u16 {
        self.inner.mesh_height
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn wire_count(&self) -> u32 {
        self.inner.wire_count
    }

    #[setter]
    fn set_wire_count(&mut self, v: u32) {
        self.inner.wire_count = v;
    }

    #[getter]
    fn backward_bee_count(&self) -> u8 {
        self.inner.backward_bee_count
    }

    #[setter]
    fn set_backward_bee_count(&mut self, v: u8) {
        self.inner.backward_bee_count = v;
    }

    #[getter]
    fn arrival_rate(&self) -> f64 {
        self.inner.traffic.arrival_rate
    }

    #[setter]
    fn set_arrival_rate(&mut self, v: f64) {
        self.inner.traffic.arrival_rate = v;
    }

    #[getter]
    fn flow_count(&self) -> usize {
        self.inner.traffic.flow_count
    }

    #[setter]
    fn set_flow_count(&mut self, v: usize) {
        self.inner.traffic.flow_count = v;
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    fn effective_lines(&self) -> Vec<String> {
        self.inner.effective_lines()
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig({}x{}, seed={}, wire_count={})",
            self.inner.mesh_width, self.inner.mesh_height, self.inner.seed, self.inner.wire_count
        )
    }
}

/// Metrics of one finished run.
#[pyclass(name = "Report", module = "beenoc")]
pub struct PyReport {
    inner: MetricsReport,
}

fn flow_dict<'py>(py: Python<'py>, f: &FlowRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("sequence", f.sequence)?;
    d.set_item("source", (f.source.x, f.source.y))?;
    d.set_item("destination", (f.destination.x, f.destination.y))?;
    d.set_item("bandwidth", f.bandwidth)?;
    d.set_item("phase", f.phase.as_str())?;
    d.set_item("setup_latency", f.setup_latency)?;
    d.set_item("path_length", f.path_length)?;
    d.set_item("manhattan", f.manhattan)?;
    Ok(d)
}

#[pymethods]
impl PyReport {
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = &self.inner.summary;
        let d = PyDict::new(py);
        d.set_item("offered", s.offered)?;
        d.set_item("established", s.established)?;
        d.set_item("failed", s.failed)?;
        d.set_item("success_ratio", s.success_ratio)?;
        d.set_item("mean_setup_latency", s.mean_setup_latency)?;
        d.set_item("p95_setup_latency", s.p95_setup_latency)?;
        d.set_item("mean_path_stretch", s.mean_path_stretch)?;
        d.set_item("control_packets_per_flow", s.control_packets_per_flow)?;
        d.set_item("peak_util_horizontal", s.peak_util_horizontal)?;
        d.set_item("mean_util_horizontal", s.mean_util_horizontal)?;
        d.set_item("peak_util_vertical", s.peak_util_vertical)?;
        d.set_item("mean_util_vertical", s.mean_util_vertical)?;
        d.set_item("events", s.events)?;
        d.set_item("end_cycle", s.end_cycle)?;
        Ok(d)
    }

    fn flows<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner.flows.iter().map(|f| flow_dict(py, f)).collect()
    }

    fn flows_csv(&self) -> String {
        self.inner.flows_csv()
    }

    fn summary_csv(&self) -> String {
        self.inner.summary_csv()
    }

    /// Writes flows.csv, summary.csv and config.txt into `dir`.
    fn write(&self, dir: std::path::PathBuf) -> PyResult<()> {
        self.inner.write(&dir).map_err(to_py)
    }
}

/// Generates (or loads) the workload and runs it to completion.
#[pyfunction]
fn run(py: Python<'_>, config: PyRef<'_, PyRunConfig>) -> PyResult<PyReport> {
    let cfg = config.inner.clone();
    let report = py.detach(move || -> beenoc_core::Result<MetricsReport> {
        cfg.validate()?;
        let flows = beenoc_core::workload(&cfg)?;
        Ok(beenoc_core::run(&cfg, &flows)?.1)
    });
    Ok(PyReport {
        inner: report.map_err(to_py)?,
    })
}

/// All simple paths of at most `bound` hops whose links carry `bandwidth`,
/// as bit strings. `background` lists `((x, y), port, wires)` already held.
#[pyfunction]
#[pyo3(signature = (width, height, wire_count, src, dst, bandwidth, bound, background=Vec::new()))]
#[allow(clippy::too_many_arguments)]
fn enumerate_feasible(
    width: u16,
    height: u16,
    wire_count: u32,
    src: (u16, u16),
    dst: (u16, u16),
    bandwidth: f64,
    bound: u32,
    background: Vec<((u16, u16), String, u32)>,
) -> PyResult<Vec<String>> {
    let mut mesh = Mesh::new(width, height, wire_count, 1.0);
    for (at, port, wires) in background {
        let dir = parse_dir(&port)?;
        let link = mesh
            .link_mut(node(at), dir)
            .ok_or_else(|| PyValueError::new_err(format!("no link leaving {at:?} towards {port}")))?;
        if !link.reserve_wires(Holder::Background, wires) {
            return Err(PyValueError::new_err(format!("cannot hold {wires} wires on {at:?} {port}")));
        }
    }
    let set = oracle::enumerate_feasible(&mesh, node(src), node(dst), bandwidth, bound).map_err(to_py)?;
    Ok(set.paths.iter().map(|p| p.bit_string()).collect())
}

/// Random single-flow scenarios checked against the oracle.
#[pyfunction]
#[pyo3(signature = (config, scenarios=100))]
fn oracle_check<'py>(py: Python<'py>, config: PyRef<'_, PyRunConfig>, scenarios: usize) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.inner.clone();
    let s: SuiteSummary = py.detach(move || oracle::soundness_suite(&cfg, scenarios)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("scenarios", s.scenarios)?;
    d.set_item("established", s.established)?;
    d.set_item("failed", s.failed)?;
    d.set_item("idle_checked", s.idle_checked)?;
    Ok(d)
}

#[pymodule]
pub fn beenoc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPortList>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(py_encode_port, m)?)?;
    m.add_function(wrap_pyfunction!(py_decode_port, m)?)?;
    m.add_function(wrap_pyfunction!(py_hop_limit, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_feasible, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_check, m)?)?;
    Ok(())
}
