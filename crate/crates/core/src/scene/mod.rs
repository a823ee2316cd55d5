//! Multi-frame scene bundles: in-memory form and the on-disk directory format.
//!
//! A bundle directory holds `manifest.json`, one `frame_<t>.raw` per frame
//! (t = 1..T), `mask.raw` and `missing.raw`.

mod io;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::featureng::DisasterClass;

pub use io::{load_bundle, read_frame, save_bundle, write_frame, FRAME_MAGIC, FRAME_VERSION};

/// Frames per bundle: four before the event, one after.
pub const N_FRAMES: usize = 5;

/// Change-mask labels.
pub const LABEL_UNAFFECTED: u8 = 0;
pub const LABEL_AFFECTED: u8 = 1;
pub const LABEL_CLOUD: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sensor {
    #[serde(rename = "sentinel2", alias = "s2")]
    Sentinel2,
    #[serde(rename = "landsat8", alias = "l8")]
    LandSat8,
}

const S2_BANDS: [&str; 10] = [
    "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8a", "B11", "B12",
];
const L8_BANDS: [&str; 9] = ["B2", "B3", "B4", "B5", "B6", "B7", "B9", "B10", "B11"];

impl Sensor {
    /// Band labels in canonical order; band number `k` (1-based) is entry `k - 1`.
    pub fn band_labels(self) -> &'static [&'static str] {
        match self {
            Sensor::Sentinel2 => &S2_BANDS,
            Sensor::LandSat8 => &L8_BANDS,
        }
    }

    pub fn n_bands(self) -> usize {
        self.band_labels().len()
    }

    /// Tile side in pixels before pooling.
    pub fn tile_side(self) -> usize {
        match self {
            Sensor::Sentinel2 => 32,
            Sensor::LandSat8 => 16,
        }
    }

    /// Position of a band label, case-insensitive.
    pub fn band_position(self, label: &str) -> Option<usize> {
        self.band_labels()
            .iter()
            .position(|l| l.eq_ignore_ascii_case(label))
    }
}

impl fmt::Display for Sensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sensor::Sentinel2 => "sentinel2",
            Sensor::LandSat8 => "landsat8",
        })
    }
}

impl FromStr for Sensor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sentinel2" | "s2" => Ok(Sensor::Sentinel2),
            "landsat8" | "l8" => Ok(Sensor::LandSat8),
            _ => Err(Error::Config(format!("unknown sensor '{s}'"))),
        }
    }
}

/// One frame: `bands × height × width` reflectance, band-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn zeros(bands: usize, height: usize, width: usize) -> Self {
        Raster {
            bands,
            height,
            width,
            data: vec![0.0; bands * height * width],
        }
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn get(&self, b: usize, row: usize, col: usize) -> f32 {
        self.data[(b * self.height + row) * self.width + col]
    }
}

/// Per-band normalization bounds in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct LogRange {
    pub min: f64,
    pub max: f64,
}

impl From<[f64; 2]> for LogRange {
    fn from([min, max]: [f64; 2]) -> Self {
        LogRange { min, max }
    }
}

impl From<LogRange> for [f64; 2] {
    fn from(r: LogRange) -> Self {
        [r.min, r.max]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    /// Event identifier, used in reports and file names.
    pub name: String,
    pub sensor: Sensor,
    pub height: usize,
    pub width: usize,
    pub band_labels: Vec<String>,
    pub norm_stats: Vec<LogRange>,
    pub frames: Vec<Raster>,
    /// Change mask, row-major, labels 0/1/2.
    pub mask: Vec<u8>,
    /// Missing-data flags, row-major.
    pub missing: Vec<bool>,
    pub event_class_hint: Option<DisasterClass>,
}

impl SceneBundle {
    pub fn n_bands(&self) -> usize {
        self.band_labels.len()
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Input(format!("scene '{}': {msg}", self.name)));
        if self.height == 0 || self.width == 0 {
            return bad("empty dimensions".into());
        }
        if self.frames.len() != N_FRAMES {
            return bad(format!(
                "expected {N_FRAMES} frames, found {}",
                self.frames.len()
            ));
        }
        let expected_bands = self.sensor.n_bands();
        if self.band_labels.len() != expected_bands {
            return bad(format!(
                "{} expects {expected_bands} bands, manifest lists {}",
                self.sensor,
                self.band_labels.len()
            ));
        }
        for (label, canonical) in self.band_labels.iter().zip(self.sensor.band_labels()) {
            if !label.eq_ignore_ascii_case(canonical) {
                return bad(format!("band '{label}' where '{canonical}' was expected"));
            }
        }
        if self.norm_stats.len() != expected_bands {
            return bad(format!(
                "{} normalization ranges for {expected_bands} bands",
                self.norm_stats.len()
            ));
        }
        for (label, r) in self.band_labels.iter().zip(&self.norm_stats) {
            if !(r.min.is_finite() && r.max.is_finite() && r.min < r.max) {
                return bad(format!(
                    "band {label}: degenerate range [{}, {}]",
                    r.min, r.max
                ));
            }
        }
        for (t, frame) in self.frames.iter().enumerate() {
            if (frame.bands, frame.height, frame.width) != (expected_bands, self.height, self.width)
                || frame.data.len() != expected_bands * self.n_pixels()
            {
                return bad(format!(
                    "frame {} is {}x{}x{}, expected {expected_bands}x{}x{}",
                    t + 1,
                    frame.bands,
                    frame.height,
                    frame.width,
                    self.height,
                    self.width
                ));
            }
        }
        if self.mask.len() != self.n_pixels() || self.missing.len() != self.n_pixels() {
            return bad("mask or missing layer does not match the frame size".into());
        }
        if let Some(v) = self.mask.iter().find(|&&v| v > LABEL_CLOUD) {
            return bad(format!("mask label {v} outside 0..=2"));
        }
        Ok(())
    }
}
