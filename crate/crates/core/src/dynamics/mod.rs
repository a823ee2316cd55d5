//! Memristive edge dynamics and the per-timestep circuit solve.
//!
//! Each edge carries a state `λ` (volt·seconds) that sets its conductance.
//! A frame of electrode voltages is held for `steps_per_frame` substeps; each
//! substep solves the network for node voltages and advances every `λ` with
//! one forward-Euler step of the threshold equation of state.

mod cholesky;
mod snapshot;
mod solver;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgen::NetworkGraph;
pub use snapshot::{read_snapshot, write_snapshot};
pub use solver::{KirchhoffSolver, SolverStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConfig {
    pub v_set: f64,
    pub v_reset: f64,
    pub lambda_max: f64,
    pub dt: f64,
    pub steps_per_frame: usize,
    pub g_off: f64,
    pub g_on: f64,
    pub solver_tolerance: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            v_set: 1e-2,
            v_reset: 5e-3,
            lambda_max: 1.5e-2,
            dt: 1e-3,
            steps_per_frame: 10,
            g_off: 7.77e-8,
            g_on: 7.75e-5,
            solver_tolerance: 1e-10,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.v_reset && self.v_reset < self.v_set) {
            return Err(Error::Config(format!(
                "need 0 < v_reset < v_set, got v_reset={} v_set={}",
                self.v_reset, self.v_set
            )));
        }
        if !(self.lambda_max > 0.0) {
            return Err(Error::Config("lambda_max must be positive".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if self.steps_per_frame == 0 {
            return Err(Error::Config("steps_per_frame must be positive".into()));
        }
        if !(self.g_on > self.g_off && self.g_off > 0.0) {
            return Err(Error::Config("need g_on > g_off > 0".into()));
        }
        if !(self.solver_tolerance > 0.0) {
            return Err(Error::Config("solver_tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Duration of one presented frame in seconds.
    pub fn frame_duration(&self) -> f64 {
        self.dt * self.steps_per_frame as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetworkState {
    pub lambda: Vec<f64>,
    pub node_voltage: Vec<f64>,
    pub time: f64,
}

impl NetworkState {
    pub fn new(graph: &NetworkGraph) -> Self {
        NetworkState {
            lambda: vec![0.0; graph.n_edges()],
            node_voltage: vec![0.0; graph.n_nodes()],
            time: 0.0,
        }
    }

    pub fn reset(&mut self) {
        self.lambda.iter_mut().for_each(|l| *l = 0.0);
        self.node_voltage.iter_mut().for_each(|v| *v = 0.0);
        self.time = 0.0;
    }
}

/// Applied electrode voltages for one frame, in electrode-grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct InputFrame {
    pub voltages: Vec<f64>,
    pub driven_mask: Vec<bool>,
}

/// Sanity bound on applied voltages.
pub const MAX_INPUT_VOLTS: f64 = 10.0;

impl InputFrame {
    pub fn all_driven(voltages: Vec<f64>) -> Self {
        let driven_mask = vec![true; voltages.len()];
        InputFrame {
            voltages,
            driven_mask,
        }
    }

    pub fn validate(&self, graph: &NetworkGraph) -> Result<()> {
        if self.voltages.len() != self.driven_mask.len() {
            return Err(Error::LengthMismatch {
                expected: self.driven_mask.len(),
                actual: self.voltages.len(),
            });
        }
        if self.voltages.len() != graph.input_index.len() {
            return Err(Error::LengthMismatch {
                expected: graph.input_index.len(),
                actual: self.voltages.len(),
            });
        }
        if let Some(v) = self
            .voltages
            .iter()
            .find(|v| !(v.is_finite() && v.abs() <= MAX_INPUT_VOLTS))
        {
            return Err(Error::Input(format!("applied voltage {v} out of range")));
        }
        Ok(())
    }
}

/// Conductance of an edge: linear in `|λ|` from `g_off` to `g_on`.
#[inline]
pub fn edge_conductance(lambda: f64, config: &DynamicsConfig) -> f64 {
    let frac = (lambda.abs() / config.lambda_max).min(1.0);
    config.g_off + (config.g_on - config.g_off) * frac
}

#[inline]
fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `dλ/dt` for an edge at state `lambda` with voltage `v` across it.
#[inline]
pub fn lambda_rate(lambda: f64, v: f64, config: &DynamicsConfig) -> f64 {
    let mag = v.abs();
    let rate = if mag > config.v_set {
        (mag - config.v_set) * sgn(v)
    } else if mag >= config.v_reset {
        0.0
    } else {
        (mag - config.v_reset) * sgn(lambda)
    };
    // Saturated edges stop growing but may still relax.
    if lambda.abs() >= config.lambda_max && rate * sgn(lambda) > 0.0 {
        0.0
    } else {
        rate
    }
}

/// One forward-Euler substep for a single edge.
#[inline]
pub fn advance_lambda(lambda: f64, v: f64, dt: f64, config: &DynamicsConfig) -> f64 {
    let rate = lambda_rate(lambda, v, config);
    let mut next = lambda + rate * dt;
    if v.abs() < config.v_reset && sgn(next) != sgn(lambda) {
        // decay stops at zero
        next = 0.0;
    }
    next.clamp(-config.lambda_max, config.lambda_max)
}

/// Node voltages for the given conductances and frame.
///
/// Builds a fresh solver; use [`Simulator`] for repeated solves.
pub fn solve_kirchhoff(
    graph: &NetworkGraph,
    conductance: &[f64],
    frame: &InputFrame,
    tolerance: f64,
) -> Result<Vec<f64>> {
    let mut solver = KirchhoffSolver::new(graph);
    let mut voltages = vec![0.0; graph.n_nodes()];
    let (driven, applied) = node_boundary(graph, frame)?;
    solver.solve(
        graph,
        conductance,
        &driven,
        &applied,
        tolerance,
        &mut voltages,
    )?;
    Ok(voltages)
}

fn node_boundary(graph: &NetworkGraph, frame: &InputFrame) -> Result<(Vec<bool>, Vec<f64>)> {
    let mut driven = vec![false; graph.n_nodes()];
    let mut applied = vec![0.0; graph.n_nodes()];
    fill_boundary(graph, frame, &mut driven, &mut applied)?;
    Ok((driven, applied))
}

fn fill_boundary(
    graph: &NetworkGraph,
    frame: &InputFrame,
    driven: &mut [bool],
    applied: &mut [f64],
) -> Result<()> {
    frame.validate(graph)?;
    driven.iter_mut().for_each(|d| *d = false);
    applied.iter_mut().for_each(|a| *a = 0.0);
    for ((&node, &v), &on) in graph
        .input_index
        .iter()
        .zip(&frame.voltages)
        .zip(&frame.driven_mask)
    {
        if on {
            driven[node] = true;
            applied[node] = v;
        }
    }
    Ok(())
}

/// One band-network: topology, evolving state and solver workspace.
#[derive(Debug, Clone)]
pub struct Simulator<'g> {
    graph: &'g NetworkGraph,
    config: DynamicsConfig,
    state: NetworkState,
    solver: KirchhoffSolver,
    conductance: Vec<f64>,
    driven: Vec<bool>,
    applied: Vec<f64>,
}

impl<'g> Simulator<'g> {
    pub fn new(graph: &'g NetworkGraph, config: DynamicsConfig) -> Result<Self> {
        config.validate()?;
        Ok(Simulator {
            graph,
            config,
            state: NetworkState::new(graph),
            solver: KirchhoffSolver::new(graph),
            conductance: vec![0.0; graph.n_edges()],
            driven: vec![false; graph.n_nodes()],
            applied: vec![0.0; graph.n_nodes()],
        })
    }

    pub fn with_state(mut self, state: NetworkState) -> Result<Self> {
        if state.lambda.len() != self.graph.n_edges()
            || state.node_voltage.len() != self.graph.n_nodes()
        {
            return Err(Error::Input("state does not match graph".into()));
        }
        self.state = state;
        self.solver.invalidate();
        Ok(self)
    }

    pub fn graph(&self) -> &'g NetworkGraph {
        self.graph
    }

    pub fn config(&self) -> &DynamicsConfig {
        &self.config
    }

    pub fn state(&self) -> &NetworkState {
        &self.state
    }

    pub fn into_state(self) -> NetworkState {
        self.state
    }

    /// Zero the state and forget solver history, so what follows does not
    /// depend on anything presented before.
    pub fn reset(&mut self) {
        self.state.reset();
        self.solver.invalidate();
    }

    pub fn solver_stats(&self) -> solver::SolverStats {
        self.solver.stats()
    }

    /// Present one frame for `steps_per_frame` substeps.
    pub fn step(&mut self, frame: &InputFrame) -> Result<()> {
        fill_boundary(self.graph, frame, &mut self.driven, &mut self.applied)?;
        let cfg = &self.config;
        for _ in 0..cfg.steps_per_frame {
            for (g, &l) in self.conductance.iter_mut().zip(&self.state.lambda) {
                *g = edge_conductance(l, cfg);
            }
            self.solver.solve(
                self.graph,
                &self.conductance,
                &self.driven,
                &self.applied,
                cfg.solver_tolerance,
                &mut self.state.node_voltage,
            )?;
            let v = &self.state.node_voltage;
            for (l, e) in self.state.lambda.iter_mut().zip(&self.graph.edges) {
                *l = advance_lambda(*l, v[e.a] - v[e.b], cfg.dt, cfg);
            }
            self.state.time += cfg.dt;
        }
        Ok(())
    }

    /// Readout node voltages from the last solve, in id-sorted order.
    pub fn readout(&self) -> Vec<f64> {
        readout(&self.state, self.graph)
    }

    pub fn readout_into(&self, out: &mut Vec<f64>) {
        out.extend(
            self.graph
                .readout_ids
                .iter()
                .map(|&i| self.state.node_voltage[i]),
        );
    }
}

/// Advance `state` by one frame, returning the new state.
pub fn step(
    state: &NetworkState,
    graph: &NetworkGraph,
    frame: &InputFrame,
    config: &DynamicsConfig,
) -> Result<NetworkState> {
    let mut sim = Simulator::new(graph, config.clone())?.with_state(state.clone())?;
    sim.step(frame)?;
    Ok(sim.into_state())
}

pub fn readout(state: &NetworkState, graph: &NetworkGraph) -> Vec<f64> {
    graph
        .readout_ids
        .iter()
        .map(|&i| state.node_voltage[i])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgen::{EdgeKind, Junction, NetgenConfig, NodeKind, Point};

    fn cfg() -> DynamicsConfig {
        DynamicsConfig::default()
    }

    /// Two electrodes joined through one wire: a - w - b.
    pub(crate) fn divider_graph() -> NetworkGraph {
        let p = Point::new(0.0, 0.0);
        NetworkGraph::from_parts(
            NetgenConfig::default(),
            vec![NodeKind::Wire, NodeKind::Electrode, NodeKind::Electrode],
            vec![
                Junction {
                    a: 0,
                    b: 1,
                    kind: EdgeKind::WireElectrode,
                    point: p,
                },
                Junction {
                    a: 0,
                    b: 2,
                    kind: EdgeKind::WireElectrode,
                    point: p,
                },
            ],
            vec![0],
            vec![1, 2],
        )
        .unwrap()
    }

    #[test]
    fn conductance_endpoints() {
        let c = cfg();
        assert_eq!(edge_conductance(0.0, &c), c.g_off);
        assert_eq!(edge_conductance(c.lambda_max, &c), c.g_on);
        assert_eq!(edge_conductance(-c.lambda_max, &c), c.g_on);
        let mid = edge_conductance(c.lambda_max / 2.0, &c);
        assert!((mid - (c.g_off + c.g_on) / 2.0).abs() <= 1e-20);
    }

    #[test]
    fn rate_branches() {
        let c = cfg();
        assert!((lambda_rate(0.0, 0.02, &c) - 0.01).abs() < 1e-15);
        assert!((lambda_rate(0.0, -0.02, &c) + 0.01).abs() < 1e-15);
        assert_eq!(lambda_rate(0.003, 0.008, &c), 0.0);
        assert_eq!(lambda_rate(0.003, 0.005, &c), 0.0);
        assert_eq!(lambda_rate(0.003, 0.01, &c), 0.0);
        assert!((lambda_rate(0.003, 0.0, &c) + 0.005).abs() < 1e-15);
        assert!((lambda_rate(-0.003, 0.0, &c) - 0.005).abs() < 1e-15);
        assert_eq!(lambda_rate(0.0, 0.001, &c), 0.0);
        // saturated: growth held, relaxation allowed
        assert_eq!(lambda_rate(c.lambda_max, 0.5, &c), 0.0);
        assert!(lambda_rate(c.lambda_max, -0.5, &c) < 0.0);
        assert!(lambda_rate(c.lambda_max, 0.0, &c) < 0.0);
    }

    #[test]
    fn decay_never_crosses_zero() {
        let c = cfg();
        let next = advance_lambda(1e-6, 0.0, c.dt, &c);
        assert_eq!(next, 0.0);
        let next = advance_lambda(-1e-6, 0.0, c.dt, &c);
        assert_eq!(next, 0.0);
    }

    #[test]
    fn divider_midpoint() {
        let g = divider_graph();
        let frame = InputFrame::all_driven(vec![1.0, 0.0]);
        let v = solve_kirchhoff(&g, &[1.0, 1.0], &frame, 1e-12).unwrap();
        assert!((v[0] - 0.5).abs() <= 1e-12);
        assert_eq!(v[1], 1.0);
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn zero_inputs_give_zero_voltages() {
        let net = NetgenConfig::default().with_seed(4);
        let g = crate::netgen::generate_network(&net, 4, 400).unwrap();
        let frame = InputFrame::all_driven(vec![0.0; 256]);
        let gs = vec![cfg().g_off; g.n_edges()];
        let v = solve_kirchhoff(&g, &gs, &frame, 1e-10).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn floating_nodes_are_grounded() {
        let p = Point::new(0.0, 0.0);
        // wire 0 touches electrode 3; wires 1-2 form an isolated pair
        let g = NetworkGraph::from_parts(
            NetgenConfig::default(),
            vec![
                NodeKind::Wire,
                NodeKind::Wire,
                NodeKind::Wire,
                NodeKind::Electrode,
            ],
            vec![
                Junction {
                    a: 0,
                    b: 3,
                    kind: EdgeKind::WireElectrode,
                    point: p,
                },
                Junction {
                    a: 1,
                    b: 2,
                    kind: EdgeKind::WireWire,
                    point: p,
                },
            ],
            vec![],
            vec![3],
        )
        .unwrap();
        let v =
            solve_kirchhoff(&g, &[1.0, 1.0], &InputFrame::all_driven(vec![0.7]), 1e-12).unwrap();
        assert!((v[0] - 0.7).abs() < 1e-15);
        assert_eq!(v[1], 0.0);
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn undriven_electrode_floats() {
        let g = divider_graph();
        let frame = InputFrame {
            voltages: vec![0.3, 0.9],
            driven_mask: vec![true, false],
        };
        let v = solve_kirchhoff(&g, &[1.0, 2.0], &frame, 1e-12).unwrap();
        assert!((v[0] - 0.3).abs() < 1e-15);
        assert!((v[2] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_frames_and_conductances() {
        let g = divider_graph();
        let bad = InputFrame::all_driven(vec![11.0, 0.0]);
        assert!(solve_kirchhoff(&g, &[1.0, 1.0], &bad, 1e-12).is_err());
        let short = InputFrame::all_driven(vec![1.0]);
        assert!(solve_kirchhoff(&g, &[1.0, 1.0], &short, 1e-12).is_err());
        let ok = InputFrame::all_driven(vec![1.0, 0.0]);
        assert!(solve_kirchhoff(&g, &[1.0, 0.0], &ok, 1e-12).is_err());
        assert!(solve_kirchhoff(&g, &[1.0], &ok, 1e-12).is_err());
    }

    #[test]
    fn constant_drive_grows_lambda_linearly() {
        // ±0.04 V across the divider puts 0.02 V on each edge
        let g = divider_graph();
        let c = cfg();
        let frame = InputFrame::all_driven(vec![0.04, 0.0]);
        let mut sim = Simulator::new(
            &g,
            DynamicsConfig {
                steps_per_frame: 1,
                ..c.clone()
            },
        )
        .unwrap();
        sim.step(&frame).unwrap();
        for l in &sim.state().lambda {
            assert!((l.abs() - 1e-5).abs() < 1e-12, "{l}");
        }
    }

    #[test]
    fn zero_drive_is_a_fixed_point() {
        let g = divider_graph();
        let mut sim = Simulator::new(&g, cfg()).unwrap();
        sim.step(&InputFrame::all_driven(vec![0.0, 0.0])).unwrap();
        assert!(sim.state().lambda.iter().all(|&l| l == 0.0));
        assert!((sim.state().time - 0.01).abs() < 1e-15);
    }

    #[test]
    fn saturated_state_decays_linearly() {
        let g = divider_graph();
        let c = cfg();
        let state = NetworkState {
            lambda: vec![c.lambda_max, -c.lambda_max],
            node_voltage: vec![0.0; 3],
            time: 0.0,
        };
        let next = step(&state, &g, &InputFrame::all_driven(vec![0.0, 0.0]), &c).unwrap();
        let expected = c.lambda_max - 5e-3 * c.frame_duration();
        assert!((next.lambda[0] - expected).abs() < 1e-15);
        assert!((next.lambda[1] + expected).abs() < 1e-15);
    }

    #[test]
    fn readout_on_zero_frame() {
        let g = divider_graph();
        let mut sim = Simulator::new(&g, cfg()).unwrap();
        sim.step(&InputFrame::all_driven(vec![0.0, 0.0])).unwrap();
        assert_eq!(sim.readout(), vec![0.0]);
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let bad = DynamicsConfig {
            v_reset: 0.02,
            ..cfg()
        };
        assert!(bad.validate().is_err());
        let bad = DynamicsConfig {
            g_on: 1e-9,
            ..cfg()
        };
        assert!(bad.validate().is_err());
        let bad = DynamicsConfig { dt: 0.0, ..cfg() };
        assert!(bad.validate().is_err());
    }
}
