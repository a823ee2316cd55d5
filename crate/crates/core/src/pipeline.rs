//! Scene → tile sequences → per-band network features.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::dynamics::{DynamicsConfig, InputFrame, NetworkState, Simulator};
use crate::error::{Error, Result};
use crate::netgen::NetworkGraph;
use crate::scene::{LogRange, SceneBundle};

/// Value given to missing pixels after scaling.
pub const MISSING_FILL: f64 = 0.005;
/// Side of the pooled tile, matching the electrode grid.
pub const POOLED_SIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    /// Network state carries over from tile to tile (and event to event).
    #[default]
    Persistent,
    /// State is zeroed before every tile sequence.
    PerTile,
}

/// Log-scale one band into [-1, 1]. Missing or non-positive pixels get
/// [`MISSING_FILL`].
pub fn normalize_band(values: &[f32], range: LogRange, missing: &[bool]) -> Vec<f64> {
    let span = range.max - range.min;
    values
        .iter()
        .zip(missing)
        .map(|(&x, &m)| {
            let x = f64::from(x);
            if m || !(x > 0.0) || !x.is_finite() {
                MISSING_FILL
            } else {
                (2.0 * (x.ln() - range.min) / span - 1.0).clamp(-1.0, 1.0)
            }
        })
        .collect()
}

/// Normalized values of a subset of bands for every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedScene {
    pub height: usize,
    pub width: usize,
    /// Zero-based band positions held, ascending.
    pub bands: Vec<usize>,
    pub n_frames: usize,
    /// `[frame][band][row][col]`
    pub data: Vec<f64>,
}

impl NormalizedScene {
    pub fn plane(&self, frame: usize, k: usize) -> &[f64] {
        let n = self.height * self.width;
        let o = (frame * self.bands.len() + k) * n;
        &self.data[o..o + n]
    }
}

pub fn normalize(scene: &SceneBundle, bands: &[usize]) -> Result<NormalizedScene> {
    for &b in bands {
        if b >= scene.n_bands() {
            return Err(Error::Input(format!(
                "band position {b} not present in scene '{}' ({} bands)",
                scene.name,
                scene.n_bands()
            )));
        }
    }
    let mut data = Vec::with_capacity(scene.frames.len() * bands.len() * scene.n_pixels());
    for frame in &scene.frames {
        for &b in bands {
            data.extend(normalize_band(
                frame.band(b),
                scene.norm_stats[b],
                &scene.missing,
            ));
        }
    }
    Ok(NormalizedScene {
        height: scene.height,
        width: scene.width,
        bands: bands.to_vec(),
        n_frames: scene.frames.len(),
        data,
    })
}

/// Tile grid coordinates: `a` is the tile row, `b` the tile column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileLoc {
    pub a: usize,
    pub b: usize,
}

/// Full tiles of a `height × width` image, column by column from the top left.
pub fn tile_grid(height: usize, width: usize, side: usize) -> Result<Vec<TileLoc>> {
    if side == 0 {
        return Err(Error::Config("tile side must be positive".into()));
    }
    let (rows, cols) = (height / side, width / side);
    if rows == 0 || cols == 0 {
        return Err(Error::Input(format!(
            "{height}x{width} image is smaller than one {side}x{side} tile"
        )));
    }
    Ok((0..cols)
        .flat_map(|b| (0..rows).map(move |a| TileLoc { a, b }))
        .collect())
}

/// 2×2, stride-2 max pooling of a square `side × side` plane.
pub fn maxpool(tile: &[f64], side: usize) -> Result<Vec<f64>> {
    if !side.is_multiple_of(2) || tile.len() != side * side {
        return Err(Error::Input(format!(
            "cannot pool a {}-pixel tile with side {side}",
            tile.len()
        )));
    }
    let half = side / 2;
    let mut out = Vec::with_capacity(half * half);
    for r in 0..half {
        let top = &tile[2 * r * side..(2 * r + 1) * side];
        let bottom = &tile[(2 * r + 1) * side..(2 * r + 2) * side];
        for c in 0..half {
            let m = top[2 * c]
                .max(top[2 * c + 1])
                .max(bottom[2 * c])
                .max(bottom[2 * c + 1]);
            out.push(m);
        }
    }
    Ok(out)
}

/// The frames of one tile location.
#[derive(Debug, Clone, PartialEq)]
pub struct TileSequence {
    pub loc: TileLoc,
    pub side: usize,
    pub n_bands: usize,
    pub n_frames: usize,
    /// `[frame][band][row][col]`, `side × side` per plane.
    pub tiles: Vec<f64>,
    /// `[frame][band][row][col]`, 16 × 16 per plane.
    pub pooled: Vec<f64>,
}

impl TileSequence {
    pub fn pooled_plane(&self, frame: usize, k: usize) -> &[f64] {
        let n = POOLED_SIDE * POOLED_SIDE;
        let o = (frame * self.n_bands + k) * n;
        &self.pooled[o..o + n]
    }

    /// All pooled bands of one frame, concatenated.
    pub fn pooled_frame(&self, frame: usize) -> &[f64] {
        let n = self.n_bands * POOLED_SIDE * POOLED_SIDE;
        &self.pooled[frame * n..(frame + 1) * n]
    }

    /// All unpooled bands of one frame, concatenated.
    pub fn raw_frame(&self, frame: usize) -> &[f64] {
        let n = self.n_bands * self.side * self.side;
        &self.tiles[frame * n..(frame + 1) * n]
    }
}

/// Cut every full tile out of `scene` and pool each plane down to 16 × 16.
/// Sides above 16 are halved until they reach 16; 16 × 16 tiles pass as is.
pub fn tile(scene: &NormalizedScene, side: usize) -> Result<Vec<TileSequence>> {
    let mut s = side;
    while s > POOLED_SIDE {
        if !s.is_multiple_of(2) {
            break;
        }
        s /= 2;
    }
    if s != POOLED_SIDE {
        return Err(Error::Config(format!(
            "tile side {side} does not pool down to {POOLED_SIDE}"
        )));
    }
    let locs = tile_grid(scene.height, scene.width, side)?;
    let nb = scene.bands.len();
    Ok(locs
        .into_iter()
        .map(|loc| {
            let mut tiles = Vec::with_capacity(scene.n_frames * nb * side * side);
            let mut pooled = Vec::with_capacity(scene.n_frames * nb * POOLED_SIDE * POOLED_SIDE);
            for t in 0..scene.n_frames {
                for k in 0..nb {
                    let plane = scene.plane(t, k);
                    let start = tiles.len();
                    for r in 0..side {
                        let o = (loc.a * side + r) * scene.width + loc.b * side;
                        tiles.extend_from_slice(&plane[o..o + side]);
                    }
                    let mut p = tiles[start..].to_vec();
                    let mut ps = side;
                    while ps > POOLED_SIDE {
                        p = maxpool(&p, ps).expect("side checked above");
                        ps /= 2;
                    }
                    pooled.extend_from_slice(&p);
                }
            }
            TileSequence {
                loc,
                side,
                n_bands: nb,
                n_frames: scene.n_frames,
                tiles,
                pooled,
            }
        })
        .collect())
}

/// Network features of one tile location.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub loc: TileLoc,
    /// One vector per frame, readouts of each band network concatenated.
    pub features: Vec<Vec<f64>>,
    /// Zero-based band positions in concatenation order.
    pub band_order: Vec<usize>,
}

/// Run every tile through its band networks.
///
/// `states[k]` is the state of the network for `bands[k]`; in persistent mode
/// it is advanced in place. In per-tile mode each tile starts from zero state
/// and `states` is left untouched.
pub fn extract_features(
    tiles: &[TileSequence],
    bands: &[usize],
    graph: &NetworkGraph,
    states: &mut [NetworkState],
    config: &DynamicsConfig,
    reset: ResetMode,
) -> Result<Vec<FeatureSequence>> {
    if states.len() != bands.len() {
        return Err(Error::LengthMismatch {
            expected: bands.len(),
            actual: states.len(),
        });
    }
    if let Some(t) = tiles.iter().find(|t| t.n_bands != bands.len()) {
        return Err(Error::Input(format!(
            "tile ({}, {}) holds {} bands, {} selected",
            t.loc.a,
            t.loc.b,
            t.n_bands,
            bands.len()
        )));
    }
    if graph.input_index.len() != POOLED_SIDE * POOLED_SIDE {
        return Err(Error::Config(format!(
            "network has {} electrodes, tiles need {}",
            graph.input_index.len(),
            POOLED_SIDE * POOLED_SIDE
        )));
    }
    let n_read = graph.readout_ids.len();
    let nb = bands.len();

    // per band: [tile][frame] readouts, flattened
    let per_band: Vec<Vec<f64>> = match reset {
        ResetMode::Persistent => states
            .par_iter_mut()
            .enumerate()
            .map(|(k, state)| {
                let mut sim =
                    Simulator::new(graph, config.clone())?.with_state(std::mem::take(state))?;
                let mut out = Vec::with_capacity(tiles.len() * n_read * 5);
                let res = run_band(&mut sim, tiles, k, &mut out);
                log::debug!("band slot {k}: {:?}", sim.solver_stats());
                *state = sim.into_state();
                res.map(|()| out)
            })
            .collect::<Result<_>>()?,
        ResetMode::PerTile => {
            let per_tile: Vec<Vec<Vec<f64>>> = tiles
                .par_iter()
                .map(|tile| {
                    (0..nb)
                        .map(|k| {
                            let mut sim = Simulator::new(graph, config.clone())?;
                            let mut out = Vec::with_capacity(tile.n_frames * n_read);
                            run_band(&mut sim, std::slice::from_ref(tile), k, &mut out)?;
                            Ok(out)
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            (0..nb)
                .map(|k| per_tile.iter().flat_map(|t| t[k].iter().copied()).collect())
                .collect()
        }
    };

    let mut offset = 0;
    Ok(tiles
        .iter()
        .map(|tile| {
            let features = (0..tile.n_frames)
                .map(|t| {
                    let mut f = Vec::with_capacity(nb * n_read);
                    for band in &per_band {
                        let o = offset + t * n_read;
                        f.extend_from_slice(&band[o..o + n_read]);
                    }
                    f
                })
                .collect();
            offset += tile.n_frames * n_read;
            FeatureSequence {
                loc: tile.loc,
                features,
                band_order: bands.to_vec(),
            }
        })
        .collect())
}

fn run_band(
    sim: &mut Simulator<'_>,
    tiles: &[TileSequence],
    k: usize,
    out: &mut Vec<f64>,
) -> Result<()> {
    for tile in tiles {
        for t in 0..tile.n_frames {
            let frame = InputFrame::all_driven(tile.pooled_plane(t, k).to_vec());
            sim.step(&frame).map_err(|e| {
                Error::Input(format!(
                    "tile ({}, {}) frame {} band slot {k}: {e}",
                    tile.loc.a,
                    tile.loc.b,
                    t + 1
                ))
            })?;
            sim.readout_into(out);
        }
    }
    Ok(())
}

/// Write features as CSV: `event,tile_a,tile_b,frame,f_0..f_{K-1}`, frames 1-based.
pub fn write_features_csv<W: Write>(
    mut w: W,
    event: &str,
    features: &[FeatureSequence],
    header: bool,
) -> std::io::Result<()> {
    let k = features
        .first()
        .and_then(|f| f.features.first())
        .map_or(0, Vec::len);
    if header {
        write!(w, "event,tile_a,tile_b,frame")?;
        for i in 0..k {
            write!(w, ",f_{i}")?;
        }
        writeln!(w)?;
    }
    for seq in features {
        for (t, f) in seq.features.iter().enumerate() {
            write!(w, "{event},{},{},{}", seq.loc.a, seq.loc.b, t + 1)?;
            for v in f {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}
