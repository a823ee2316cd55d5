//! Seeded synthetic scenes with labeled change regions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::featureng::DisasterClass;
use crate::scene::{LogRange, Raster, SceneBundle, Sensor, LABEL_AFFECTED, LABEL_CLOUD, N_FRAMES};

/// Reflectance floor after noise and deltas.
const MIN_REFLECTANCE: f64 = 1e-4;
/// Reflectance of cloud pixels in the last frame.
const CLOUD_REFLECTANCE: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row && r < self.row + self.height && c >= self.col && c < self.col + self.width
    }

    fn fits(&self, height: usize, width: usize) -> bool {
        self.height > 0
            && self.width > 0
            && self.row + self.height <= height
            && self.col + self.width <= width
    }
}

/// Smooth background: each band is `base · (1 + amplitude · field)` where
/// `field` is a normalized mixture of random plane cosines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub base: Vec<f64>,
    pub amplitude: f64,
    pub n_waves: usize,
    /// Highest spatial frequency, in cycles across the image.
    pub max_cycles: f64,
}

/// A region whose reflectance shifts by `delta` (per band) in the last frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeRegion {
    pub rect: Rect,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub name: String,
    pub sensor: Sensor,
    pub height: usize,
    pub width: usize,
    pub background: Background,
    #[serde(default)]
    pub changes: Vec<ChangeRegion>,
    /// Cloud over the last frame; labeled 2.
    #[serde(default)]
    pub clouds: Vec<Rect>,
    /// No data in any frame.
    #[serde(default)]
    pub missing: Vec<Rect>,
    pub noise_std: f64,
    pub seed: u64,
    #[serde(default)]
    pub event_class_hint: Option<DisasterClass>,
    /// Defaults to `[ln 0.005, 0]` for every band.
    #[serde(default)]
    pub norm_stats: Option<Vec<LogRange>>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| {
            Err(Error::Config(format!(
                "synthetic scene '{}': {msg}",
                self.name
            )))
        };
        if self.height == 0 || self.width == 0 {
            return bad("empty dimensions".into());
        }
        let nb = self.sensor.n_bands();
        if self.background.base.len() != nb {
            return bad(format!("background needs {nb} band values"));
        }
        if self
            .background
            .base
            .iter()
            .any(|b| !(b.is_finite() && *b > 0.0))
            || !(self.background.amplitude.is_finite() && self.background.amplitude >= 0.0)
            || !(self.noise_std.is_finite() && self.noise_std >= 0.0)
        {
            return bad("background and noise must be finite and non-negative".into());
        }
        for ch in &self.changes {
            if !ch.rect.fits(self.height, self.width) {
                return bad(format!("change rect {:?} outside the scene", ch.rect));
            }
            if ch.delta.len() != nb || ch.delta.iter().any(|d| !d.is_finite()) {
                return bad(format!("change delta needs {nb} finite values"));
            }
        }
        for r in self.clouds.iter().chain(&self.missing) {
            if !r.fits(self.height, self.width) {
                return bad(format!("rect {r:?} outside the scene"));
            }
        }
        if let Some(stats) = &self.norm_stats {
            if stats.len() != nb {
                return bad(format!("norm_stats needs {nb} ranges"));
            }
        }
        Ok(())
    }
}

fn background_field(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (h, w) = (spec.height, spec.width);
    let bg = &spec.background;
    let mut field = vec![0.0; h * w];
    if bg.n_waves == 0 {
        return field;
    }
    let mut total = 0.0;
    for _ in 0..bg.n_waves {
        let fy = rng.random_range(-bg.max_cycles..=bg.max_cycles) / h as f64;
        let fx = rng.random_range(-bg.max_cycles..=bg.max_cycles) / w as f64;
        let phase = rng.random_range(0.0..TAU);
        let weight = rng.random_range(0.5..1.0);
        total += weight;
        for r in 0..h {
            for c in 0..w {
                field[r * w + c] += weight * (TAU * (fx * c as f64 + fy * r as f64) + phase).cos();
            }
        }
    }
    field.iter_mut().for_each(|v| *v /= total);
    field
}

pub fn generate_scene(spec: &SynthSpec) -> Result<SceneBundle> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let nb = spec.sensor.n_bands();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;

    let mut clean = Raster::zeros(nb, h, w);
    for b in 0..nb {
        let field = background_field(spec, &mut rng);
        let base = spec.background.base[b];
        for (v, f) in clean.band_mut(b).iter_mut().zip(&field) {
            *v = (base * (1.0 + spec.background.amplitude * f)).max(MIN_REFLECTANCE) as f32;
        }
    }

    let mut mask = vec![0u8; h * w];
    let mut missing = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            if spec.changes.iter().any(|ch| ch.rect.contains(r, c)) {
                mask[p] = LABEL_AFFECTED;
            }
            if spec.clouds.iter().any(|rect| rect.contains(r, c)) {
                mask[p] = LABEL_CLOUD;
            }
            missing[p] = spec.missing.iter().any(|rect| rect.contains(r, c));
        }
    }

    let mut frames = Vec::with_capacity(N_FRAMES);
    for t in 0..N_FRAMES {
        let last = t == N_FRAMES - 1;
        let mut frame = clean.clone();
        for b in 0..nb {
            let band = frame.band_mut(b);
            for r in 0..h {
                for c in 0..w {
                    let p = r * w + c;
                    let mut v = f64::from(band[p]);
                    if last {
                        for ch in spec.changes.iter().filter(|ch| ch.rect.contains(r, c)) {
                            v += ch.delta[b];
                        }
                        if mask[p] == LABEL_CLOUD {
                            v = CLOUD_REFLECTANCE;
                        }
                    }
                    if spec.noise_std > 0.0 {
                        v += noise.sample(&mut rng);
                    }
                    band[p] = if missing[p] {
                        0.0
                    } else {
                        v.clamp(MIN_REFLECTANCE, 1.0) as f32
                    };
                }
            }
        }
        frames.push(frame);
    }

    let stats = spec.norm_stats.clone().unwrap_or_else(|| {
        vec![
            LogRange {
                min: 0.005f64.ln(),
                max: 0.0,
            };
            nb
        ]
    });
    let scene = SceneBundle {
        name: spec.name.clone(),
        sensor: spec.sensor,
        height: h,
        width: w,
        band_labels: spec
            .sensor
            .band_labels()
            .iter()
            .map(|s| s.to_string())
            .collect(),
        norm_stats: stats,
        frames,
        mask,
        missing,
        event_class_hint: spec.event_class_hint,
    };
    scene.validate()?;
    Ok(scene)
}

/// Ready-made scene types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Burn scar: NIR down, SWIR up.
    Fire,
    /// Standing water: NIR and SWIR collapse, green rises.
    Flood,
    /// Noise only.
    Quiet,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fire" => Ok(Preset::Fire),
            "flood" => Ok(Preset::Flood),
            "quiet" => Ok(Preset::Quiet),
            _ => Err(Error::Config(format!("unknown preset '{s}'"))),
        }
    }
}

struct Signatures {
    vegetation: &'static [f64],
    burn: &'static [f64],
    water: &'static [f64],
}

// Sentinel-2 order: B2 B3 B4 B5 B6 B7 B8 B8a B11 B12
const S2_SIGNATURES: Signatures = Signatures {
    vegetation: &[0.05, 0.08, 0.06, 0.12, 0.25, 0.30, 0.35, 0.36, 0.20, 0.12],
    burn: &[
        0.01, 0.0, 0.02, -0.04, -0.12, -0.16, -0.23, -0.22, 0.10, 0.18,
    ],
    water: &[
        0.01, 0.04, -0.02, -0.08, -0.20, -0.25, -0.28, -0.29, -0.17, -0.115,
    ],
};

// LandSat-8 order: B2 B3 B4 B5 B6 B7 B9 B10 B11
const L8_SIGNATURES: Signatures = Signatures {
    vegetation: &[0.05, 0.08, 0.06, 0.35, 0.20, 0.12, 0.02, 0.30, 0.30],
    burn: &[0.01, 0.0, 0.02, -0.23, 0.10, 0.18, 0.0, 0.10, 0.10],
    water: &[0.01, 0.04, -0.02, -0.28, -0.17, -0.115, 0.0, -0.10, -0.10],
};

fn align(v: usize, side: usize) -> usize {
    v / side * side
}

/// A preset scene scaled to `height × width`, with regions aligned to the
/// sensor's tile grid.
pub fn preset(kind: Preset, sensor: Sensor, height: usize, width: usize, seed: u64) -> SynthSpec {
    let sig = match sensor {
        Sensor::Sentinel2 => &S2_SIGNATURES,
        Sensor::LandSat8 => &L8_SIGNATURES,
    };
    let s = sensor.tile_side();
    let rect = |row: usize, col: usize, rh: usize, cw: usize| Rect {
        row: align(row, s),
        col: align(col, s),
        height: align(rh, s).max(s),
        width: align(cw, s).max(s),
    };
    let mut spec = SynthSpec {
        name: format!(
            "{}_{}",
            match kind {
                Preset::Fire => "fire",
                Preset::Flood => "flood",
                Preset::Quiet => "quiet",
            },
            seed
        ),
        sensor,
        height,
        width,
        background: Background {
            base: sig.vegetation.to_vec(),
            amplitude: 0.1,
            n_waves: 6,
            max_cycles: 3.0,
        },
        changes: Vec::new(),
        clouds: Vec::new(),
        missing: Vec::new(),
        noise_std: 0.004,
        seed,
        event_class_hint: None,
        norm_stats: None,
    };
    let tiles_fit = height >= 2 * s && width >= 2 * s;
    match kind {
        Preset::Fire if tiles_fit => {
            spec.changes.push(ChangeRegion {
                rect: rect(height / 4, width * 3 / 8, height * 3 / 8, width / 2),
                delta: sig.burn.to_vec(),
            });
            spec.clouds.push(Rect {
                row: 0,
                col: align(width, s) - s,
                height: s,
                width: s,
            });
            spec.event_class_hint = Some(DisasterClass::Fire);
        }
        Preset::Flood if tiles_fit => {
            spec.changes.push(ChangeRegion {
                rect: rect(height / 2, width / 8, height * 3 / 8, width / 2),
                delta: sig.water.to_vec(),
            });
            spec.missing.push(Rect {
                row: height * 3 / 4 + 8.min(height / 8),
                col: 8.min(width / 8),
                height: 8.min(height / 8).max(1),
                width: 8.min(width / 8).max(1),
            });
            spec.event_class_hint = Some(DisasterClass::Flood);
        }
        _ => {}
    }
    spec
}
