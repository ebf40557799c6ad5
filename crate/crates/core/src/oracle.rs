//! Exhaustive ground truth for small meshes.
//!
//! Enumerates every simple path within a hop bound whose links all have
//! `residual_bandwidth ≥ B_req` in a frozen snapshot. Works on residual
//! bandwidth directly, not on the wire arithmetic the routers use.

use rand::Rng;

use crate::config::RunConfig;
use crate::engine::{Phase, Simulation};
use crate::error::{Error, Result};
use crate::protocol::{FlowId, PortList};
use crate::topology::{hop_limit, Mesh, NodeId, PortDir};
use crate::traffic::{rng_stream, FlowSpec, RngStream};

const RESIDUAL_EPS: f64 = 1e-9;

/// Largest mesh side enumerated regardless of the bound.
pub const MAX_SIDE: u16 = 5;
/// Largest bound enumerated regardless of the mesh size.
pub const MAX_BOUND: u32 = 12;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeasibleSet {
    /// Lexicographic by port code.
    pub paths: Vec<PortList>,
}

impl FeasibleSet {
    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn contains(&self, path: &PortList) -> bool {
        self.paths.iter().any(|p| p == path)
    }

    pub fn min_len(&self) -> Option<usize> {
        self.paths.iter().map(PortList::len).min()
    }
}

pub fn check_guard(mesh: &Mesh, bound: u32) -> Result<()> {
    let small_mesh = mesh.width() <= MAX_SIDE && mesh.height() <= MAX_SIDE;
    if small_mesh || bound <= MAX_BOUND {
        Ok(())
    } else {
        Err(Error::OracleGuard(format!(
            "{}x{} mesh with hop bound {bound} is too large to enumerate (limit {MAX_SIDE}x{MAX_SIDE} or bound {MAX_BOUND})",
            mesh.width(),
            mesh.height()
        )))
    }
}

pub fn enumerate_feasible(snapshot: &Mesh, src: NodeId, dst: NodeId, required: f64, bound: u32) -> Result<FeasibleSet> {
    if src == dst {
        return Err(Error::DegenerateFlow(src.to_string()));
    }
    check_guard(snapshot, bound)?;
    let mut visited = vec![false; snapshot.node_count()];
    visited[snapshot.index(src)] = true;
    let mut out = FeasibleSet::default();
    let mut trail = Vec::new();
    dfs(snapshot, src, dst, required, bound as usize, &mut visited, &mut trail, &mut out);
    out.paths.sort_by(|a, b| a.codes().cmp(b.codes()));
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    mesh: &Mesh,
    at: NodeId,
    dst: NodeId,
    required: f64,
    bound: usize,
    visited: &mut [bool],
    trail: &mut Vec<PortDir>,
    out: &mut FeasibleSet,
) {
    if at == dst {
        out.paths.push(PortList::from_dirs(trail.iter().copied()).expect("mesh ports only"));
        return;
    }
    if trail.len() == bound {
        return;
    }
    for dir in PortDir::MESH {
        let Some(next) = mesh.neighbor(at, dir) else { continue };
        let i = mesh.index(next);
        if visited[i] {
            continue;
        }
        let link = mesh.link(at, dir).expect("link exists for every neighbour");
        if link.residual_bandwidth() + RESIDUAL_EPS < required {
            continue;
        }
        visited[i] = true;
        trail.push(dir);
        dfs(mesh, next, dst, required, bound, visited, trail, out);
        trail.pop();
        visited[i] = false;
    }
}

/// Outcome of one isolated flow checked against the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleFlowCheck {
    pub phase: Phase,
    pub path: Option<PortList>,
    pub feasible: FeasibleSet,
}

impl SingleFlowCheck {
    /// An established circuit must be one of the feasible paths.
    pub fn is_sound(&self) -> bool {
        match &self.path {
            Some(p) => self.feasible.contains(p),
            None => true,
        }
    }
}

/// Runs one flow on a mesh pre-loaded with `background` (link, wires) and
/// compares the result with the oracle evaluated before setup.
pub fn check_single_flow(
    config: &RunConfig,
    background: &[(NodeId, PortDir, u32)],
    src: NodeId,
    dst: NodeId,
    required: f64,
) -> Result<SingleFlowCheck> {
    let mut sim = Simulation::new(config)?;
    for &(node, dir, wires) in background {
        sim.preload(node, dir, wires)?;
    }
    let bound = hop_limit(src, dst, config.hop_limit_metric)?;
    let feasible = enumerate_feasible(sim.mesh(), src, dst, required, bound)?;
    let spec = FlowSpec {
        flow: FlowId::new(src, 0),
        source: src,
        destination: dst,
        required_bandwidth: required,
        arrival_time: 0,
        hold_time: 1,
    };
    sim.submit(std::slice::from_ref(&spec))?;
    // Stop right after setup; the snapshot comparison does not need teardown.
    let mut horizon = 0;
    loop {
        sim.run_until(horizon)?;
        let st = sim.flow(&spec.flow).expect("submitted");
        if st.phase != Phase::Discovering && st.phase != Phase::Reserving {
            break;
        }
        horizon += 1;
    }
    let st = sim.flow(&spec.flow).expect("submitted");
    Ok(SingleFlowCheck {
        phase: st.phase,
        path: st.path.clone(),
        feasible,
    })
}

/// Counts from [`soundness_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SuiteSummary {
    pub scenarios: usize,
    pub established: usize,
    pub failed: usize,
    pub idle_checked: usize,
}

/// Random background load: each directed link is hit with probability
/// `p_hit` and then holds a uniform `1..=wire_count` wires.
pub fn random_background(mesh: &Mesh, p_hit: f64, rng: &mut RngStream) -> Vec<(NodeId, PortDir, u32)> {
    let mut out = Vec::new();
    for link in mesh.links() {
        if rng.random_bool(p_hit) {
            out.push((link.from, link.dir, rng.random_range(1..=link.wire_count)));
        }
    }
    out
}

/// Runs `scenarios` random single-flow checks on the configured mesh: one
/// with random background load (soundness) and one on the idle mesh
/// (completeness and minimal length). Any disagreement is an invariant
/// violation.
pub fn soundness_suite(config: &RunConfig, scenarios: usize) -> Result<SuiteSummary> {
    let idle = Mesh::new(config.mesh_width, config.mesh_height, config.wire_count, config.wire_bandwidth);
    let corner = hop_limit(
        NodeId::new(0, 0),
        NodeId::new(config.mesh_width - 1, config.mesh_height - 1),
        config.hop_limit_metric,
    )?;
    check_guard(&idle, corner)?;
    let mut rng = rng_stream(config.seed);
    let nodes: Vec<NodeId> = idle.nodes().collect();
    let mut summary = SuiteSummary::default();
    let violation = |message: String| Error::InvariantViolation { event: 0, message };
    for _ in 0..scenarios {
        let src = nodes[rng.random_range(0..nodes.len())];
        let mut dst = src;
        while dst == src {
            dst = nodes[rng.random_range(0..nodes.len())];
        }
        let (bw, _) = config.traffic.bandwidths[rng.random_range(0..config.traffic.bandwidths.len())];
        let background = random_background(&idle, 0.3, &mut rng);

        let loaded = check_single_flow(config, &background, src, dst, bw)?;
        if !loaded.is_sound() {
            return Err(violation(format!("{src}->{dst}: circuit {:?} not in the feasible set", loaded.path)));
        }
        summary.scenarios += 1;
        if loaded.phase == Phase::Established {
            summary.established += 1;
        } else {
            summary.failed += 1;
        }

        let clean = check_single_flow(config, &[], src, dst, bw)?;
        let want = clean.feasible.min_len();
        let got = clean.path.as_ref().map(PortList::len);
        if want != got || !clean.is_sound() {
            return Err(violation(format!("{src}->{dst} on an idle mesh: circuit length {got:?}, oracle minimum {want:?}")));
        }
        summary.idle_checked += 1;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Holder;

    #[test]
    fn two_by_two_idle() {
        let mesh = Mesh::new(2, 2, 4, 1.0);
        let set = enumerate_feasible(&mesh, NodeId::new(0, 0), NodeId::new(1, 1), 1.0, 4).unwrap();
        let rendered: Vec<String> = set.paths.iter().map(PortList::bit_string).collect();
        // East then North, North then East.
        assert_eq!(rendered, vec!["1011", "1110"]);
    }

    #[test]
    fn degenerate() {
        let mesh = Mesh::new(2, 2, 4, 1.0);
        assert!(matches!(
            enumerate_feasible(&mesh, NodeId::new(1, 1), NodeId::new(1, 1), 1.0, 4),
            Err(Error::DegenerateFlow(_))
        ));
    }

    #[test]
    fn saturated_cut_is_empty() {
        let mut mesh = Mesh::new(3, 3, 2, 1.0);
        let src = NodeId::new(0, 0);
        mesh.link_mut(src, PortDir::East).unwrap().reserve_wires(Holder::Background, 2);
        mesh.link_mut(src, PortDir::North).unwrap().reserve_wires(Holder::Background, 1);
        let set = enumerate_feasible(&mesh, src, NodeId::new(2, 2), 2.0, 6).unwrap();
        assert!(set.is_empty());
        let set = enumerate_feasible(&mesh, src, NodeId::new(2, 2), 1.0, 6).unwrap();
        assert!(!set.is_empty());
        assert!(set.paths.iter().all(|p| p.get(0) == Some(PortDir::North)));
    }

    #[test]
    fn guard() {
        let big = Mesh::new(6, 6, 1, 1.0);
        assert!(matches!(
            enumerate_feasible(&big, NodeId::new(0, 0), NodeId::new(5, 5), 1.0, 15),
            Err(Error::OracleGuard(_))
        ));
        assert!(enumerate_feasible(&big, NodeId::new(0, 0), NodeId::new(1, 0), 1.0, 2).is_ok());
    }

    /// Counting oracle: the number of monotone lattice paths from (0,0) to
    /// (a,b) is C(a+b, a). With the bound at the Manhattan distance the
    /// feasible set is exactly those paths.
    #[test]
    fn shortest_paths_count_binomial() {
        let mesh = Mesh::new(4, 4, 1, 1.0);
        for (a, b, want) in [(1u16, 1u16, 2usize), (2, 1, 3), (2, 2, 6), (3, 3, 20), (3, 1, 4)] {
            let set = enumerate_feasible(&mesh, NodeId::new(0, 0), NodeId::new(a, b), 1.0, u32::from(a + b)).unwrap();
            assert_eq!(set.paths.len(), want, "({a},{b})");
        }
    }

    #[test]
    fn every_path_is_simple_and_feasible() {
        let mesh = Mesh::new(3, 3, 1, 1.0);
        let src = NodeId::new(0, 0);
        let dst = NodeId::new(2, 1);
        let set = enumerate_feasible(&mesh, src, dst, 1.0, 8).unwrap();
        for p in &set.paths {
            let nodes = p.walk(&mesh, src).unwrap();
            assert_eq!(*nodes.last().unwrap(), dst);
            let mut sorted = nodes.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted.len(), nodes.len());
            assert!(p.len() <= 8);
        }
        assert!(set.paths.windows(2).all(|w| w[0].codes().cmp(w[1].codes()).is_lt()));
    }
}
