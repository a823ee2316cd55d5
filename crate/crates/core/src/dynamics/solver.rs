//! Nodal solve for a resistive network with Dirichlet (driven) nodes.
//!
//! Driven electrodes are eliminated, leaving the weighted graph Laplacian over
//! the undriven nodes that can reach a driven node. That reduced matrix is
//! symmetric positive definite. It is factored with a supernodal Cholesky
//! whose ordering and symbolic analysis depend only on topology and driven
//! mask, so they are computed once per mask.
//!
//! Between refactorizations a solve first runs conjugate gradients
//! preconditioned by the previous factor and warm-started from the previous
//! solution. Conductances drift slowly from one substep to the next, so this
//! usually converges in a handful of iterations; otherwise the matrix is
//! refactored and solved directly.

use super::cholesky::{gather_dot, minimum_degree_order, SupernodalCholesky};
use crate::error::{Error, Result};
use crate::netgen::NetworkGraph;

const NONE: usize = usize::MAX;

/// Preconditioned CG iterations tried before refactoring.
const CG_MAX_ITER: usize = 8;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// How a single edge contributes to the reduced system.
#[derive(Debug, Clone, Copy)]
enum Stamp {
    /// Both ends unknown.
    Inner {
        a: usize,
        b: usize,
        diag_a: usize,
        diag_b: usize,
        off: usize,
    },
    /// One end unknown, the other driven.
    Boundary {
        unknown: usize,
        diag: usize,
        driven_node: usize,
    },
    /// Both ends driven, or inside a floating component.
    Inert,
}

#[derive(Debug, Clone)]
struct Analysis {
    driven: Vec<bool>,
    /// Node id to position in the permuted system, `NONE` if not an unknown.
    position: Vec<usize>,
    /// Position to node id.
    node_at: Vec<usize>,
    stamps: Vec<Stamp>,
    /// Off-diagonal pattern by row: the neighbouring unknown and the edge
    /// joining them, for every edge between two unknowns.
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    edge: Vec<usize>,
    chol: SupernodalCholesky,
}

/// Counters for how solves were carried out.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolverStats {
    pub solves: u64,
    pub factorizations: u64,
    pub cg_iterations: u64,
}

/// Reusable solver workspace for one network topology.
#[derive(Debug, Clone)]
pub struct KirchhoffSolver {
    n_nodes: usize,
    analysis: Option<Analysis>,
    factored: bool,
    rhs: Vec<f64>,
    /// Diagonal and off-diagonal conductances of the reduced matrix.
    diag: Vec<f64>,
    off: Vec<f64>,
    /// Last solution in system order; the warm start for the next solve.
    sol: Vec<f64>,
    /// Solutions of the two solves before last, valid for the last `history`
    /// solves that shared the driven voltages.
    prev_sol: Vec<f64>,
    prev2_sol: Vec<f64>,
    history: usize,
    last_applied: Vec<f64>,
    residual: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    p: Vec<f64>,
    ap: Vec<f64>,
    stats: SolverStats,
}

impl KirchhoffSolver {
    pub fn new(graph: &NetworkGraph) -> Self {
        KirchhoffSolver {
            n_nodes: graph.n_nodes(),
            analysis: None,
            factored: false,
            rhs: Vec::new(),
            diag: Vec::new(),
            off: Vec::new(),
            sol: Vec::new(),
            prev_sol: Vec::new(),
            prev2_sol: Vec::new(),
            history: 0,
            last_applied: Vec::new(),
            residual: Vec::new(),
            r: Vec::new(),
            z: Vec::new(),
            p: Vec::new(),
            ap: Vec::new(),
            stats: SolverStats::default(),
        }
    }

    pub fn stats(&self) -> SolverStats {
        self.stats
    }

    /// Number of unknowns in the current reduced system.
    pub fn n_unknowns(&self) -> usize {
        self.analysis.as_ref().map_or(0, |a| a.node_at.len())
    }

    /// Stored entries of the current factor.
    pub fn factor_size(&self) -> usize {
        self.analysis.as_ref().map_or(0, |a| a.chol.stored())
    }

    /// Drop the cached factor and warm start so the next solve starts fresh.
    pub fn invalidate(&mut self) {
        self.factored = false;
        self.sol.iter_mut().for_each(|v| *v = 0.0);
        self.history = 0;
        self.last_applied.clear();
    }

    /// Solve for all node voltages.
    ///
    /// `driven` is indexed by node id; `applied` holds the voltage of every
    /// driven node (other entries are ignored). Undriven nodes that cannot
    /// reach a driven node are set to 0 V. Returns the relative residual of
    /// the reduced system, which is at most `tolerance`.
    pub fn solve(
        &mut self,
        graph: &NetworkGraph,
        conductance: &[f64],
        driven: &[bool],
        applied: &[f64],
        tolerance: f64,
        voltages: &mut [f64],
    ) -> Result<f64> {
        assert_eq!(
            graph.n_nodes(),
            self.n_nodes,
            "solver built for another graph"
        );
        if conductance.len() != graph.n_edges() {
            return Err(Error::LengthMismatch {
                expected: graph.n_edges(),
                actual: conductance.len(),
            });
        }
        for len in [driven.len(), applied.len(), voltages.len()] {
            if len != self.n_nodes {
                return Err(Error::LengthMismatch {
                    expected: self.n_nodes,
                    actual: len,
                });
            }
        }
        if let Some(g) = conductance.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(Error::Input(format!(
                "conductance must be positive, got {g}"
            )));
        }
        if self.analysis.as_ref().is_none_or(|a| a.driven != driven) {
            self.analyze(graph, driven);
        }
        self.stats.solves += 1;

        let analysis = self.analysis.as_ref().expect("analysis ran");
        self.rhs.iter_mut().for_each(|v| *v = 0.0);
        self.diag.iter_mut().for_each(|v| *v = 0.0);
        for (stamp, &g) in analysis.stamps.iter().zip(conductance) {
            if let Stamp::Boundary {
                unknown,
                driven_node,
                ..
            } = *stamp
            {
                self.rhs[unknown] += g * applied[driven_node];
                self.diag[unknown] += g;
            }
        }
        for (i, d) in self.diag.iter_mut().enumerate() {
            let (k0, k1) = (analysis.row_ptr[i], analysis.row_ptr[i + 1]);
            for (o, &e) in self.off[k0..k1].iter_mut().zip(&analysis.edge[k0..k1]) {
                let g = conductance[e];
                *o = g;
                *d += g;
            }
        }
        let b_norm = norm(&self.rhs);

        // Same driven voltages as last time: extrapolate the warm start from
        // up to three previous solutions.
        if self.last_applied.as_slice() == applied {
            let n = self.sol.len();
            match self.history {
                0 => self.prev_sol.clone_from(&self.sol),
                1 => {
                    self.prev2_sol.resize(n, 0.0);
                    for ((x, p), q) in self
                        .sol
                        .iter_mut()
                        .zip(&mut self.prev_sol)
                        .zip(&mut self.prev2_sol)
                    {
                        let cur = *x;
                        *x = 2.0 * cur - *p;
                        *q = *p;
                        *p = cur;
                    }
                }
                _ => {
                    for ((x, p), q) in self
                        .sol
                        .iter_mut()
                        .zip(&mut self.prev_sol)
                        .zip(&mut self.prev2_sol)
                    {
                        let cur = *x;
                        *x = 3.0 * (cur - *p) + *q;
                        *q = *p;
                        *p = cur;
                    }
                }
            }
            self.history = (self.history + 1).min(2);
        } else {
            self.history = 0;
            self.last_applied.clear();
            self.last_applied.extend_from_slice(applied);
        }

        let solved = self.factored && self.preconditioned_cg(0.5 * tolerance * b_norm);
        if !solved {
            self.factor(conductance)?;
            self.sol.copy_from_slice(&self.rhs);
            let analysis = self.analysis.as_ref().expect("analysis ran");
            analysis.chol.solve_in_place(&mut self.sol);
        }

        let analysis = self.analysis.as_ref().expect("analysis ran");
        for (node, v) in voltages.iter_mut().enumerate() {
            *v = if driven[node] {
                applied[node]
            } else {
                match analysis.position[node] {
                    NONE => 0.0,
                    p => self.sol[p],
                }
            };
        }

        // The acceptance check uses currents recomputed from the edge list,
        // independent of the factor.
        let mut rel = self.relative_residual(graph, conductance, voltages, b_norm);
        let mut rounds = 0;
        while rel > tolerance && rounds < 3 {
            self.factor(conductance)?;
            let analysis = self.analysis.as_ref().expect("analysis ran");
            let mut delta: Vec<f64> = analysis.node_at.iter().map(|&u| self.residual[u]).collect();
            analysis.chol.solve_in_place(&mut delta);
            for (p, d) in delta.into_iter().enumerate() {
                voltages[analysis.node_at[p]] += d;
            }
            rel = self.relative_residual(graph, conductance, voltages, b_norm);
            rounds += 1;
        }
        if rel > tolerance {
            self.factored = false;
            return Err(Error::Solver {
                residual: rel,
                tolerance,
            });
        }
        let analysis = self.analysis.as_ref().expect("analysis ran");
        for (p, &node) in analysis.node_at.iter().enumerate() {
            self.sol[p] = voltages[node];
        }
        Ok(rel)
    }

    fn factor(&mut self, conductance: &[f64]) -> Result<()> {
        let analysis = self.analysis.as_mut().expect("analysis ran");
        let vals = analysis.chol.values_mut();
        vals.iter_mut().for_each(|v| *v = 0.0);
        for (stamp, &g) in analysis.stamps.iter().zip(conductance) {
            match *stamp {
                Stamp::Inner {
                    diag_a,
                    diag_b,
                    off,
                    ..
                } => {
                    vals[diag_a] += g;
                    vals[diag_b] += g;
                    vals[off] -= g;
                }
                Stamp::Boundary { diag, .. } => vals[diag] += g,
                Stamp::Inert => {}
            }
        }
        self.stats.factorizations += 1;
        match analysis.chol.factor() {
            Ok(()) => {
                self.factored = true;
                Ok(())
            }
            Err(_) => {
                self.factored = false;
                Err(Error::Solver {
                    residual: f64::INFINITY,
                    tolerance: 0.0,
                })
            }
        }
    }

    /// `out = A x` for the reduced matrix in row form.
    fn apply_matrix(analysis: &Analysis, diag: &[f64], off: &[f64], x: &[f64], out: &mut [f64]) {
        for (i, (o, &d)) in out.iter_mut().zip(diag).enumerate() {
            let (k0, k1) = (analysis.row_ptr[i], analysis.row_ptr[i + 1]);
            *o = d * x[i] - gather_dot(&off[k0..k1], &analysis.col[k0..k1], x);
        }
    }

    /// CG on the current conductances, preconditioned by the last factor and
    /// warm-started from `self.sol`. Returns whether `‖r‖ ≤ target` was met.
    fn preconditioned_cg(&mut self, target: f64) -> bool {
        let analysis = self.analysis.as_ref().expect("analysis ran");
        let n = self.sol.len();
        let (r, z, p, ap) = (&mut self.r, &mut self.z, &mut self.p, &mut self.ap);
        for v in [&mut *r, &mut *z, &mut *p, &mut *ap] {
            v.resize(n, 0.0);
        }
        Self::apply_matrix(analysis, &self.diag, &self.off, &self.sol, ap);
        for i in 0..n {
            r[i] = self.rhs[i] - ap[i];
        }
        if norm(r) <= target {
            return true;
        }
        z.copy_from_slice(r);
        analysis.chol.solve_in_place(z);
        p.copy_from_slice(z);
        let mut rz = dot(r, z);
        for _ in 0..CG_MAX_ITER {
            self.stats.cg_iterations += 1;
            Self::apply_matrix(analysis, &self.diag, &self.off, p, ap);
            let pap = dot(p, ap);
            if !(pap > 0.0) {
                return false;
            }
            let alpha = rz / pap;
            for i in 0..n {
                self.sol[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if norm(r) <= target {
                return true;
            }
            z.copy_from_slice(r);
            analysis.chol.solve_in_place(z);
            let rz_next = dot(r, z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        false
    }

    /// Kirchhoff residual over the unknowns relative to the right-hand side.
    /// Leaves the per-node net inflow in `self.residual`.
    fn relative_residual(
        &mut self,
        graph: &NetworkGraph,
        conductance: &[f64],
        voltages: &[f64],
        b_norm: f64,
    ) -> f64 {
        self.residual.clear();
        self.residual.resize(self.n_nodes, 0.0);
        for (e, &g) in graph.edges.iter().zip(conductance) {
            let i = g * (voltages[e.a] - voltages[e.b]);
            self.residual[e.a] -= i;
            self.residual[e.b] += i;
        }
        let analysis = self.analysis.as_ref().expect("analysis ran");
        let r_norm = analysis
            .node_at
            .iter()
            .map(|&u| self.residual[u] * self.residual[u])
            .sum::<f64>()
            .sqrt();
        if b_norm > 0.0 {
            r_norm / b_norm
        } else {
            r_norm
        }
    }

    fn analyze(&mut self, graph: &NetworkGraph, driven: &[bool]) {
        let n_nodes = self.n_nodes;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for e in &graph.edges {
            adj[e.a].push(e.b);
            adj[e.b].push(e.a);
        }

        // Undriven components that touch at least one driven node.
        let mut active = vec![false; n_nodes];
        let mut seen = vec![false; n_nodes];
        let mut stack = Vec::new();
        let mut members = Vec::new();
        for start in 0..n_nodes {
            if driven[start] || seen[start] {
                continue;
            }
            members.clear();
            let mut grounded = false;
            seen[start] = true;
            stack.push(start);
            while let Some(u) = stack.pop() {
                members.push(u);
                for &w in &adj[u] {
                    if driven[w] {
                        grounded = true;
                    } else if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            if grounded {
                for &u in &members {
                    active[u] = true;
                }
            }
        }

        // Compact labels for the unknowns, then a fill-reducing order.
        let mut compact = vec![NONE; n_nodes];
        let mut nodes = Vec::new();
        for u in 0..n_nodes {
            if active[u] {
                compact[u] = nodes.len();
                nodes.push(u);
            }
        }
        let n = nodes.len();
        let local_adj: Vec<Vec<usize>> = nodes
            .iter()
            .map(|&u| {
                adj[u]
                    .iter()
                    .filter(|&&w| active[w])
                    .map(|&w| compact[w])
                    .collect()
            })
            .collect();
        let order = minimum_degree_order(&local_adj);
        let mut position = vec![NONE; n_nodes];
        let mut node_at = vec![0; n];
        for (p, &c) in order.iter().enumerate() {
            position[nodes[c]] = p;
            node_at[p] = nodes[c];
        }

        let mut lower: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in &graph.edges {
            let (pa, pb) = (position[e.a], position[e.b]);
            if pa != NONE && pb != NONE {
                lower[pa.min(pb)].push(pa.max(pb));
            }
        }
        for col in &mut lower {
            col.sort_unstable();
            col.dedup();
        }
        let chol = SupernodalCholesky::analyze(&lower);

        let stamps: Vec<Stamp> = graph
            .edges
            .iter()
            .map(|e| {
                let (pa, pb) = (position[e.a], position[e.b]);
                match (pa != NONE, pb != NONE) {
                    (true, true) => Stamp::Inner {
                        a: pa,
                        b: pb,
                        diag_a: chol.slot(pa, pa),
                        diag_b: chol.slot(pb, pb),
                        off: chol.slot(pa.max(pb), pa.min(pb)),
                    },
                    (true, false) if driven[e.b] => Stamp::Boundary {
                        unknown: pa,
                        diag: chol.slot(pa, pa),
                        driven_node: e.b,
                    },
                    (false, true) if driven[e.a] => Stamp::Boundary {
                        unknown: pb,
                        diag: chol.slot(pb, pb),
                        driven_node: e.a,
                    },
                    _ => Stamp::Inert,
                }
            })
            .collect();

        let mut by_row: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (e, st) in stamps.iter().enumerate() {
            if let Stamp::Inner { a, b, .. } = *st {
                by_row[a].push((b, e));
                by_row[b].push((a, e));
            }
        }
        let mut row_ptr = vec![0];
        let (mut col, mut edge) = (Vec::new(), Vec::new());
        for row in &by_row {
            for &(j, e) in row {
                col.push(j);
                edge.push(e);
            }
            row_ptr.push(col.len());
        }
        self.rhs = vec![0.0; n];
        self.diag = vec![0.0; n];
        self.off = vec![0.0; col.len()];
        self.sol = vec![0.0; n];
        self.factored = false;
        self.analysis = Some(Analysis {
            driven: driven.to_vec(),
            position,
            node_at,
            stamps,
            row_ptr,
            col,
            edge,
            chol,
        });
    }
}
