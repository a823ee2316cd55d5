//! Stochastic nanowire layout, junction detection and the graph built from them.
//!
//! Wires are straight segments scattered over a square plane; electrodes are
//! disks on a regular grid. Every wire–wire crossing and every wire–electrode
//! contact becomes one edge of the [`NetworkGraph`]. Node ids put wires first
//! (`0..n_wires`) followed by electrodes in row-major grid order.

pub mod geometry;

use std::collections::HashMap;
use std::io;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use geometry::{Point, Segment};

/// Number of readout nodes drawn from the wire nodes by default.
pub const DEFAULT_READOUT: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetgenConfig {
    /// Side of the square plane (µm).
    pub plane_side: f64,
    pub n_wires: usize,
    pub wire_len_mean: f64,
    pub wire_len_std: f64,
    /// Shape of the generalized normal used for wire centers.
    pub center_beta: f64,
    /// Scale of the generalized normal; `None` means `plane_side / 2`.
    pub center_scale: Option<f64>,
    /// Electrodes per side of the square grid.
    pub electrode_grid: usize,
    pub electrode_diameter: f64,
    pub electrode_margin: f64,
    pub electrode_pitch: f64,
    pub seed: u64,
}

impl Default for NetgenConfig {
    fn default() -> Self {
        NetgenConfig {
            plane_side: 158.0,
            n_wires: 803,
            wire_len_mean: 30.0,
            wire_len_std: 6.0,
            center_beta: 5.0,
            center_scale: None,
            electrode_grid: 16,
            electrode_diameter: 5.0,
            electrode_margin: 15.0,
            electrode_pitch: 8.0,
            seed: 0,
        }
    }
}

impl NetgenConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn n_electrodes(&self) -> usize {
        self.electrode_grid * self.electrode_grid
    }

    pub fn center_scale(&self) -> f64 {
        self.center_scale.unwrap_or(self.plane_side / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("plane_side", self.plane_side),
            ("wire_len_mean", self.wire_len_mean),
            ("center_beta", self.center_beta),
            ("center_scale", self.center_scale()),
            ("electrode_diameter", self.electrode_diameter),
            ("electrode_pitch", self.electrode_pitch),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.wire_len_std.is_finite() && self.wire_len_std >= 0.0) {
            return Err(Error::Config(format!(
                "wire_len_std must be non-negative, got {}",
                self.wire_len_std
            )));
        }
        if self.n_wires == 0 {
            return Err(Error::Config("n_wires must be positive".into()));
        }
        if self.electrode_grid == 0 {
            return Err(Error::Config("electrode_grid must be positive".into()));
        }
        if !(self.electrode_margin >= 0.0) {
            return Err(Error::Config(
                "electrode_margin must be non-negative".into(),
            ));
        }
        let span = self.electrode_margin + (self.electrode_grid - 1) as f64 * self.electrode_pitch;
        if span > self.plane_side {
            return Err(Error::Config(format!(
                "electrode grid extends to {span} µm, beyond the {} µm plane",
                self.plane_side
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wire {
    pub center: Point,
    /// Orientation in `[0, π)`.
    pub angle: f64,
    pub length: f64,
}

impl Wire {
    pub fn segment(&self) -> Segment {
        let half = 0.5 * self.length;
        let dir = Point::new(self.angle.cos() * half, self.angle.sin() * half);
        Segment::new(
            self.center.add_scaled(dir, -1.0),
            self.center.add_scaled(dir, 1.0),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Electrode {
    pub center: Point,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NanowireLayout {
    pub plane_side: f64,
    pub wires: Vec<Wire>,
    /// Row-major over the electrode grid.
    pub electrodes: Vec<Electrode>,
}

impl NanowireLayout {
    pub fn n_nodes(&self) -> usize {
        self.wires.len() + self.electrodes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Wire,
    Electrode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    WireWire,
    WireElectrode,
}

/// A contact between two nodes; `a < b` always.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Junction {
    pub a: usize,
    pub b: usize,
    pub kind: EdgeKind,
    pub point: Point,
}

/// Sample one coordinate from a generalized normal centred at `mean`,
/// resampling until it falls inside `[0, side]`.
fn sample_center_coord(
    rng: &mut ChaCha8Rng,
    gamma: &Gamma<f64>,
    beta: f64,
    scale: f64,
    mean: f64,
    side: f64,
) -> f64 {
    loop {
        let g: f64 = gamma.sample(rng);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let x = mean + sign * scale * g.powf(1.0 / beta);
        if (0.0..=side).contains(&x) {
            return x;
        }
    }
}

pub fn generate_layout(config: &NetgenConfig) -> Result<NanowireLayout> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let side = config.plane_side;
    let beta = config.center_beta;
    let scale = config.center_scale();
    let gamma =
        Gamma::new(1.0 / beta, 1.0).map_err(|e| Error::Config(format!("center_beta: {e}")))?;
    let lengths = Normal::new(config.wire_len_mean, config.wire_len_std)
        .map_err(|e| Error::Config(format!("wire length distribution: {e}")))?;

    let mut wires = Vec::with_capacity(config.n_wires);
    for _ in 0..config.n_wires {
        let x = sample_center_coord(&mut rng, &gamma, beta, scale, side / 2.0, side);
        let y = sample_center_coord(&mut rng, &gamma, beta, scale, side / 2.0, side);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let length = loop {
            let l = lengths.sample(&mut rng);
            if l > 0.0 {
                break l;
            }
        };
        wires.push(Wire {
            center: Point::new(x, y),
            angle,
            length,
        });
    }

    let radius = config.electrode_diameter / 2.0;
    let mut electrodes = Vec::with_capacity(config.n_electrodes());
    for row in 0..config.electrode_grid {
        for col in 0..config.electrode_grid {
            electrodes.push(Electrode {
                center: Point::new(
                    config.electrode_margin + col as f64 * config.electrode_pitch,
                    config.electrode_margin + row as f64 * config.electrode_pitch,
                ),
                radius,
            });
        }
    }

    Ok(NanowireLayout {
        plane_side: side,
        wires,
        electrodes,
    })
}

/// Uniform-grid broad phase over axis-aligned boxes.
struct BroadPhase {
    origin: Point,
    cell: f64,
    cols: usize,
    rows: usize,
    cells: Vec<Vec<usize>>,
}

impl BroadPhase {
    fn new(boxes: &[(Point, Point)], cell: f64) -> Self {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (a, b) in boxes {
            lo = Point::new(lo.x.min(a.x), lo.y.min(a.y));
            hi = Point::new(hi.x.max(b.x), hi.y.max(b.y));
        }
        if boxes.is_empty() {
            lo = Point::new(0.0, 0.0);
            hi = lo;
        }
        let cols = (((hi.x - lo.x) / cell).floor() as usize + 1).max(1);
        let rows = (((hi.y - lo.y) / cell).floor() as usize + 1).max(1);
        let mut grid = BroadPhase {
            origin: lo,
            cell,
            cols,
            rows,
            cells: vec![Vec::new(); cols * rows],
        };
        for (i, bb) in boxes.iter().enumerate() {
            let (c0, r0, c1, r1) = grid.range(bb);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    grid.cells[r * cols + c].push(i);
                }
            }
        }
        grid
    }

    fn range(&self, (a, b): &(Point, Point)) -> (usize, usize, usize, usize) {
        let clamp_c = |v: f64| {
            (((v - self.origin.x) / self.cell).floor().max(0.0) as usize).min(self.cols - 1)
        };
        let clamp_r = |v: f64| {
            (((v - self.origin.y) / self.cell).floor().max(0.0) as usize).min(self.rows - 1)
        };
        (clamp_c(a.x), clamp_r(a.y), clamp_c(b.x), clamp_r(b.y))
    }
}

/// Find every wire–wire crossing and wire–electrode contact.
///
/// The result is sorted by `(a, b)` and holds at most one junction per node
/// pair.
pub fn detect_junctions(layout: &NanowireLayout) -> Vec<Junction> {
    let n_wires = layout.wires.len();
    let segments: Vec<Segment> = layout.wires.iter().map(Wire::segment).collect();
    let boxes: Vec<(Point, Point)> = segments.iter().map(Segment::bbox).collect();
    let max_len = layout.wires.iter().map(|w| w.length).fold(0.0, f64::max);
    let cell = if max_len > 0.0 { max_len } else { 1.0 };
    let grid = BroadPhase::new(&boxes, cell);

    let mut junctions = Vec::new();

    // Each candidate pair is tested only in the first cell both boxes share.
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let members = &grid.cells[r * grid.cols + c];
            for (k, &i) in members.iter().enumerate() {
                let (ci0, ri0, _, _) = grid.range(&boxes[i]);
                for &j in &members[k + 1..] {
                    let (cj0, rj0, _, _) = grid.range(&boxes[j]);
                    if ci0.max(cj0) != c || ri0.max(rj0) != r {
                        continue;
                    }
                    if let Some(p) = segments[i].intersection(&segments[j]) {
                        let (a, b) = if i < j { (i, j) } else { (j, i) };
                        junctions.push(Junction {
                            a,
                            b,
                            kind: EdgeKind::WireWire,
                            point: p,
                        });
                    }
                }
            }
        }
    }

    for (e, electrode) in layout.electrodes.iter().enumerate() {
        let r = electrode.radius;
        let bb = (
            Point::new(electrode.center.x - r, electrode.center.y - r),
            Point::new(electrode.center.x + r, electrode.center.y + r),
        );
        let (c0, r0, c1, r1) = grid.range(&bb);
        let mut candidates: Vec<usize> = (r0..=r1)
            .flat_map(|row| (c0..=c1).map(move |col| (row, col)))
            .flat_map(|(row, col)| grid.cells[row * grid.cols + col].iter().copied())
            .collect();
        candidates.sort_unstable();
        candidates.dedup();
        for w in candidates {
            let closest = segments[w].closest_point(electrode.center);
            if closest.distance(electrode.center) <= r {
                junctions.push(Junction {
                    a: w,
                    b: n_wires + e,
                    kind: EdgeKind::WireElectrode,
                    point: closest,
                });
            }
        }
    }

    junctions.sort_by_key(|j| (j.a, j.b));
    junctions.dedup_by(|x, y| x.a == y.a && x.b == y.b);
    junctions
}

/// Immutable network topology shared by every band-network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkGraph {
    pub config: NetgenConfig,
    pub nodes: Vec<NodeKind>,
    pub edges: Vec<Junction>,
    /// Sorted, distinct wire node ids.
    pub readout_ids: Vec<usize>,
    /// Electrode grid position (row-major) to node id.
    pub input_index: Vec<usize>,
}

impl NetworkGraph {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Assemble a graph from explicit parts, checking structural invariants.
    pub fn from_parts(
        config: NetgenConfig,
        nodes: Vec<NodeKind>,
        mut edges: Vec<Junction>,
        mut readout_ids: Vec<usize>,
        input_index: Vec<usize>,
    ) -> Result<Self> {
        let n = nodes.len();
        for e in &mut edges {
            if e.a > e.b {
                std::mem::swap(&mut e.a, &mut e.b);
            }
            if e.a == e.b {
                return Err(Error::Input(format!("self-edge on node {}", e.a)));
            }
            if e.b >= n {
                return Err(Error::Input(format!("edge endpoint {} out of range", e.b)));
            }
        }
        edges.sort_by_key(|e| (e.a, e.b));
        if edges
            .windows(2)
            .any(|w| (w[0].a, w[0].b) == (w[1].a, w[1].b))
        {
            return Err(Error::Input(
                "duplicate edge between the same node pair".into(),
            ));
        }
        readout_ids.sort_unstable();
        if readout_ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Input("duplicate readout id".into()));
        }
        if let Some(&id) = readout_ids.iter().find(|&&id| id >= n) {
            return Err(Error::Input(format!("readout id {id} out of range")));
        }
        if let Some(&id) = input_index
            .iter()
            .find(|&&id| id >= n || nodes[id] != NodeKind::Electrode)
        {
            return Err(Error::Input(format!("input node {id} is not an electrode")));
        }
        Ok(NetworkGraph {
            config,
            nodes,
            edges,
            readout_ids,
            input_index,
        })
    }

    /// Serialize as JSON with every float printed to 17 significant digits.
    pub fn to_json(&self) -> Result<String> {
        let mut buf = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17Formatter);
        self.serialize(&mut ser)?;
        Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Compact JSON formatter that prints floats in exponent form with 17
/// significant digits.
pub(crate) struct Sig17Formatter;

impl serde_json::ser::Formatter for Sig17Formatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{:.16e}", value as f64)
    }
}

pub fn build_graph(
    config: &NetgenConfig,
    layout: &NanowireLayout,
    junctions: &[Junction],
    seed: u64,
    n_readout: usize,
) -> Result<NetworkGraph> {
    let n_wires = layout.wires.len();
    if n_readout > n_wires {
        return Err(Error::Config(format!(
            "cannot draw {n_readout} readout nodes from {n_wires} wires"
        )));
    }
    let mut nodes = vec![NodeKind::Wire; n_wires];
    nodes.extend(std::iter::repeat_n(
        NodeKind::Electrode,
        layout.electrodes.len(),
    ));

    // Parallel contacts between the same pair collapse into the first one.
    let mut seen: HashMap<(usize, usize), ()> = HashMap::with_capacity(junctions.len());
    let mut edges = Vec::with_capacity(junctions.len());
    for j in junctions {
        let key = (j.a.min(j.b), j.a.max(j.b));
        if key.0 != key.1 && seen.insert(key, ()).is_none() {
            edges.push(Junction {
                a: key.0,
                b: key.1,
                ..*j
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let readout_ids = index::sample(&mut rng, n_wires, n_readout).into_vec();
    let input_index = (n_wires..n_wires + layout.electrodes.len()).collect();

    NetworkGraph::from_parts(config.clone(), nodes, edges, readout_ids, input_index)
}

/// Layout, junctions and graph in one call.
pub fn generate_network(
    config: &NetgenConfig,
    readout_seed: u64,
    n_readout: usize,
) -> Result<NetworkGraph> {
    let layout = generate_layout(config)?;
    let junctions = detect_junctions(&layout);
    build_graph(config, &layout, &junctions, readout_seed, n_readout)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> NetgenConfig {
        NetgenConfig {
            n_wires: 60,
            ..NetgenConfig::default()
        }
        .with_seed(7)
    }

    #[test]
    fn default_counts() {
        let cfg = NetgenConfig::default().with_seed(1);
        let layout = generate_layout(&cfg).unwrap();
        assert_eq!(layout.wires.len(), 803);
        assert_eq!(layout.electrodes.len(), 256);
    }

    #[test]
    fn electrode_grid_span() {
        let cfg = NetgenConfig::default();
        let layout = generate_layout(&cfg).unwrap();
        assert_eq!(layout.electrodes[0].center, Point::new(15.0, 15.0));
        assert_eq!(layout.electrodes[255].center, Point::new(135.0, 135.0));
        // row-major: index 1 moves along x
        assert_eq!(layout.electrodes[1].center, Point::new(23.0, 15.0));
        assert!(15.0 + 15.0 * 8.0 <= cfg.plane_side);
        assert_eq!(layout.electrodes[0].radius, 2.5);
    }

    #[test]
    fn layout_is_deterministic() {
        let cfg = NetgenConfig {
            n_wires: 1,
            ..NetgenConfig::default()
        }
        .with_seed(99);
        assert_eq!(
            generate_layout(&cfg).unwrap(),
            generate_layout(&cfg).unwrap()
        );
    }

    #[test]
    fn layout_invariants() {
        let cfg = NetgenConfig::default().with_seed(3);
        let layout = generate_layout(&cfg).unwrap();
        for w in &layout.wires {
            assert!((0.0..=cfg.plane_side).contains(&w.center.x));
            assert!((0.0..=cfg.plane_side).contains(&w.center.y));
            assert!((0.0..std::f64::consts::PI).contains(&w.angle));
            assert!(w.length > 0.0);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            NetgenConfig {
                wire_len_mean: 0.0,
                ..NetgenConfig::default()
            },
            NetgenConfig {
                n_wires: 0,
                ..NetgenConfig::default()
            },
            NetgenConfig {
                plane_side: -1.0,
                ..NetgenConfig::default()
            },
            NetgenConfig {
                electrode_margin: 40.0,
                ..NetgenConfig::default()
            },
        ];
        for cfg in bad {
            assert!(
                matches!(generate_layout(&cfg), Err(Error::Config(_))),
                "{cfg:?}"
            );
        }
    }

    fn layout_of(wires: Vec<Wire>) -> NanowireLayout {
        NanowireLayout {
            plane_side: 100.0,
            wires,
            electrodes: vec![],
        }
    }

    #[test]
    fn constructed_crossing_gives_one_junction() {
        let layout = layout_of(vec![
            Wire {
                center: Point::new(10.0, 10.0),
                angle: 0.0,
                length: 10.0,
            },
            Wire {
                center: Point::new(10.0, 10.0),
                angle: std::f64::consts::FRAC_PI_2,
                length: 10.0,
            },
        ]);
        let js = detect_junctions(&layout);
        assert_eq!(js.len(), 1);
        assert_eq!((js[0].a, js[0].b), (0, 1));
        assert!(js[0].point.distance(Point::new(10.0, 10.0)) < 1e-12);
    }

    #[test]
    fn parallel_wires_have_no_junction() {
        let layout = layout_of(vec![
            Wire {
                center: Point::new(10.0, 10.0),
                angle: 0.0,
                length: 10.0,
            },
            Wire {
                center: Point::new(10.0, 12.0),
                angle: 0.0,
                length: 10.0,
            },
        ]);
        assert!(detect_junctions(&layout).is_empty());
    }

    #[test]
    fn broad_phase_matches_brute_force() {
        let cfg = NetgenConfig::default().with_seed(11);
        let layout = generate_layout(&cfg).unwrap();
        let got = detect_junctions(&layout);
        let segs: Vec<Segment> = layout.wires.iter().map(Wire::segment).collect();
        let mut expected = Vec::new();
        for i in 0..segs.len() {
            for j in i + 1..segs.len() {
                if segs[i].intersection(&segs[j]).is_some() {
                    expected.push((i, j));
                }
            }
            for (e, el) in layout.electrodes.iter().enumerate() {
                if segs[i].distance_to_point(el.center) <= el.radius {
                    expected.push((i, segs.len() + e));
                }
            }
        }
        expected.sort_unstable();
        let got: Vec<(usize, usize)> = got.iter().map(|j| (j.a, j.b)).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn junctions_lie_on_both_primitives() {
        let cfg = NetgenConfig::default().with_seed(5);
        let layout = generate_layout(&cfg).unwrap();
        let n_wires = layout.wires.len();
        for j in detect_junctions(&layout) {
            let sa = layout.wires[j.a].segment();
            assert!(sa.distance_to_point(j.point) <= 1e-9);
            match j.kind {
                EdgeKind::WireWire => {
                    let sb = layout.wires[j.b].segment();
                    assert!(sb.distance_to_point(j.point) <= 1e-9);
                }
                EdgeKind::WireElectrode => {
                    let el = layout.electrodes[j.b - n_wires];
                    assert!(j.point.distance(el.center) <= el.radius + 1e-9);
                }
            }
        }
    }

    #[test]
    fn graph_counts_and_readouts() {
        let cfg = NetgenConfig::default().with_seed(2);
        let g = generate_network(&cfg, 17, DEFAULT_READOUT).unwrap();
        assert_eq!(g.n_nodes(), 1059);
        assert_eq!(g.readout_ids.len(), 400);
        assert!(g.readout_ids.windows(2).all(|w| w[0] < w[1]));
        assert!(g.readout_ids.iter().all(|&i| g.nodes[i] == NodeKind::Wire));
        assert_eq!(g.input_index.len(), 256);
        assert!(g.edges.iter().all(|e| e.a < e.b));
    }

    #[test]
    fn graph_without_junctions_keeps_all_nodes() {
        let cfg = NetgenConfig::default();
        let layout = generate_layout(&cfg).unwrap();
        let g = build_graph(&cfg, &layout, &[], 0, 400).unwrap();
        assert_eq!(g.n_nodes(), 1059);
        assert_eq!(g.n_edges(), 0);
    }

    #[test]
    fn too_many_readouts_rejected() {
        let cfg = small_config();
        let layout = generate_layout(&cfg).unwrap();
        let js = detect_junctions(&layout);
        assert!(build_graph(&cfg, &layout, &js, 0, 61).is_err());
        assert!(build_graph(&cfg, &layout, &js, 0, 60).is_ok());
    }

    #[test]
    fn duplicate_contacts_merge() {
        let cfg = small_config();
        let layout = generate_layout(&cfg).unwrap();
        let p = Point::new(0.0, 0.0);
        let js = vec![
            Junction {
                a: 0,
                b: 1,
                kind: EdgeKind::WireWire,
                point: p,
            },
            Junction {
                a: 1,
                b: 0,
                kind: EdgeKind::WireWire,
                point: p,
            },
        ];
        let g = build_graph(&cfg, &layout, &js, 0, 10).unwrap();
        assert_eq!(g.n_edges(), 1);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let cfg = small_config();
        let g = generate_network(&cfg, 1, 10).unwrap();
        let text = g.to_json().unwrap();
        let back = NetworkGraph::from_json(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_json().unwrap(), text);
        assert!(text.contains("1.5800000000000000e2"));
    }

    #[test]
    fn relabeling_wires_gives_isomorphic_graph() {
        let cfg = NetgenConfig::default().with_seed(21);
        let layout = generate_layout(&cfg).unwrap();
        let n = layout.wires.len();
        // new position k holds old wire perm[k]
        let perm: Vec<usize> = (0..n).rev().collect();
        let mut shuffled = layout.clone();
        shuffled.wires = perm.iter().map(|&i| layout.wires[i]).collect();

        let canon = |js: &[Junction], map: &dyn Fn(usize) -> usize| {
            let mut v: Vec<(usize, usize)> = js
                .iter()
                .map(|j| {
                    let (a, b) = (map(j.a), map(j.b));
                    (a.min(b), a.max(b))
                })
                .collect();
            v.sort_unstable();
            v
        };
        let original = canon(&detect_junctions(&layout), &|i| i);
        let relabeled = canon(&detect_junctions(&shuffled), &|i| {
            if i < n {
                perm[i]
            } else {
                i
            }
        });
        assert_eq!(original, relabeled);
    }
}
