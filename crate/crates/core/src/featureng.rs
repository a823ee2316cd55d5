//! Training-free event classification from spectral-index flips, and the
//! per-class band subsets that decide which band networks run.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scene::{Raster, SceneBundle, Sensor, LABEL_CLOUD, N_FRAMES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisasterClass {
    Fire,
    Flood,
    Landslide,
    Hurricane,
}

impl DisasterClass {
    pub const ALL: [DisasterClass; 4] = [
        DisasterClass::Fire,
        DisasterClass::Flood,
        DisasterClass::Landslide,
        DisasterClass::Hurricane,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DisasterClass::Fire => "fire",
            DisasterClass::Flood => "flood",
            DisasterClass::Landslide => "landslide",
            DisasterClass::Hurricane => "hurricane",
        }
    }
}

impl fmt::Display for DisasterClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DisasterClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DisasterClass::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown disaster class '{s}'")))
    }
}

/// One binary test of the decision chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRule {
    pub name: String,
    pub band_x: String,
    pub band_y: String,
    pub binarize_threshold: f64,
    pub score_threshold: f64,
    pub class_on_true: DisasterClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEngSpec {
    pub sensor: Sensor,
    /// Tested in order; the first rule that fires decides the class.
    pub rules: Vec<IndexRule>,
    pub fallback: DisasterClass,
    /// Band numbers (1-based, canonical sensor order) per class.
    pub band_subsets: BTreeMap<DisasterClass, Vec<usize>>,
}

fn rule(
    name: &str,
    band_x: &str,
    band_y: &str,
    binarize_threshold: f64,
    class_on_true: DisasterClass,
) -> IndexRule {
    IndexRule {
        name: name.into(),
        band_x: band_x.into(),
        band_y: band_y.into(),
        binarize_threshold,
        score_threshold: 0.05,
        class_on_true,
    }
}

impl FeatureEngSpec {
    /// Default chain for Sentinel-2: NBR (fire), NDWI (flood), NDVI (landslide),
    /// otherwise hurricane.
    pub fn sentinel2() -> Self {
        use DisasterClass::*;
        FeatureEngSpec {
            sensor: Sensor::Sentinel2,
            rules: vec![
                rule("nbr", "B8", "B12", 0.2, Fire),
                rule("ndwi", "B3", "B8", 0.0, Flood),
                rule("ndvi", "B8", "B4", 0.3, Landslide),
            ],
            fallback: Hurricane,
            band_subsets: BTreeMap::from([
                (Fire, vec![7, 8, 9, 10]),
                (Flood, vec![2, 3, 7, 9]),
                (Landslide, vec![1, 2, 3, 7]),
                (Hurricane, vec![1, 2, 3, 9]),
            ]),
        }
    }

    /// Same structure for LandSat-8, mapped onto its band numbering
    /// (NIR = B5, red = B4, green = B3, SWIR = B6/B7).
    pub fn landsat8() -> Self {
        use DisasterClass::*;
        FeatureEngSpec {
            sensor: Sensor::LandSat8,
            rules: vec![
                rule("nbr", "B5", "B7", 0.2, Fire),
                rule("ndwi", "B3", "B5", 0.0, Flood),
                rule("ndvi", "B5", "B4", 0.3, Landslide),
            ],
            fallback: Hurricane,
            band_subsets: BTreeMap::from([
                (Fire, vec![4, 5, 6, 8]),
                (Flood, vec![2, 3, 4, 5]),
                (Landslide, vec![1, 2, 3, 4]),
                (Hurricane, vec![1, 2, 3, 5]),
            ]),
        }
    }

    pub fn for_sensor(sensor: Sensor) -> Self {
        match sensor {
            Sensor::Sentinel2 => Self::sentinel2(),
            Sensor::LandSat8 => Self::landsat8(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: FeatureEngSpec =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("feature spec: {msg}")));
        for r in &self.rules {
            for band in [&r.band_x, &r.band_y] {
                if self.sensor.band_position(band).is_none() {
                    return bad(format!(
                        "rule '{}': no band {band} on {}",
                        r.name, self.sensor
                    ));
                }
            }
            if r.band_x.eq_ignore_ascii_case(&r.band_y) {
                return bad(format!("rule '{}' compares a band with itself", r.name));
            }
            if !r.binarize_threshold.is_finite() || !(0.0..=1.0).contains(&r.score_threshold) {
                return bad(format!("rule '{}' has invalid thresholds", r.name));
            }
        }
        let n_bands = self.sensor.n_bands();
        for class in DisasterClass::ALL {
            let reachable =
                self.fallback == class || self.rules.iter().any(|r| r.class_on_true == class);
            let Some(subset) = self.band_subsets.get(&class) else {
                if reachable {
                    return bad(format!("class {class} is reachable but has no band subset"));
                }
                continue;
            };
            if subset.is_empty() || subset.iter().any(|&b| b == 0 || b > n_bands) {
                return bad(format!(
                    "class {class}: band numbers must lie in 1..={n_bands}"
                ));
            }
            let mut sorted = subset.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != subset.len() {
                return bad(format!("class {class}: repeated band"));
            }
        }
        Ok(())
    }
}

/// Normalized difference `(BX − BY) / (BX + BY)`, 0 where the sum is 0.
pub fn index_image(frame: &Raster, band_x: usize, band_y: usize) -> Vec<f64> {
    frame
        .band(band_x)
        .iter()
        .zip(frame.band(band_y))
        .map(|(&x, &y)| {
            let (x, y) = (f64::from(x), f64::from(y));
            let sum = x + y;
            if sum == 0.0 {
                0.0
            } else {
                (x - y) / sum
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScore {
    pub score: f64,
    /// Every pixel was excluded; `score` is then 0.
    pub all_excluded: bool,
}

/// Fraction of pixels whose binarized index flips between the two frames.
///
/// `excluded` marks pixels left out of both numerator and denominator.
pub fn class_score(
    before: &Raster,
    after: &Raster,
    rule: &IndexRule,
    sensor: Sensor,
    excluded: &[bool],
) -> Result<ClassScore> {
    let position = |label: &str| {
        sensor
            .band_position(label)
            .ok_or_else(|| Error::Config(format!("rule '{}': no band {label}", rule.name)))
    };
    let (bx, by) = (position(&rule.band_x)?, position(&rule.band_y)?);
    let a = index_image(before, bx, by);
    let b = index_image(after, bx, by);
    if excluded.len() != a.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: excluded.len(),
        });
    }
    let t = rule.binarize_threshold;
    let (mut flips, mut counted) = (0usize, 0usize);
    for ((x, y), &skip) in a.iter().zip(&b).zip(excluded) {
        if skip {
            continue;
        }
        counted += 1;
        if (*x > t) != (*y > t) {
            flips += 1;
        }
    }
    Ok(if counted == 0 {
        ClassScore {
            score: 0.0,
            all_excluded: true,
        }
    } else {
        ClassScore {
            score: flips as f64 / counted as f64,
            all_excluded: false,
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub class: DisasterClass,
    /// Score of every rule that was evaluated, in order.
    pub scores: Vec<(String, ClassScore)>,
}

/// Pixels left out of class scoring: missing data and cloud.
pub fn excluded_pixels(scene: &SceneBundle) -> Vec<bool> {
    scene
        .missing
        .iter()
        .zip(&scene.mask)
        .map(|(&m, &label)| m || label == LABEL_CLOUD)
        .collect()
}

/// Walk the rule chain on the frames directly before and after the event.
pub fn classify_event(scene: &SceneBundle, spec: &FeatureEngSpec) -> Result<Classification> {
    if spec.sensor != scene.sensor {
        return Err(Error::Config(format!(
            "feature spec targets {} but scene '{}' is {}",
            spec.sensor, scene.name, scene.sensor
        )));
    }
    let before = &scene.frames[N_FRAMES - 2];
    let after = &scene.frames[N_FRAMES - 1];
    let excluded = excluded_pixels(scene);
    let mut scores = Vec::new();
    for r in &spec.rules {
        let s = class_score(before, after, r, scene.sensor, &excluded)?;
        if s.all_excluded {
            log::warn!(
                "scene '{}': every pixel excluded from rule '{}'",
                scene.name,
                r.name
            );
        }
        scores.push((r.name.clone(), s));
        if s.score >= r.score_threshold {
            return Ok(Classification {
                class: r.class_on_true,
                scores,
            });
        }
    }
    Ok(Classification {
        class: spec.fallback,
        scores,
    })
}

/// Zero-based positions of the bands used for `class`, ascending.
pub fn select_bands(class: DisasterClass, spec: &FeatureEngSpec) -> Result<Vec<usize>> {
    let subset = spec
        .band_subsets
        .get(&class)
        .ok_or_else(|| Error::Config(format!("no band subset for class {class}")))?;
    let mut out: Vec<usize> = subset.iter().map(|b| b - 1).collect();
    out.sort_unstable();
    Ok(out)
}

/// How the event class is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassMode {
    /// Decision chain.
    Tree,
    /// The bundle's `event_class_hint`, falling back to the chain when absent.
    Hint,
    /// Fixed class for every event.
    Fixed(DisasterClass),
}

impl FromStr for ClassMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tree" => Ok(ClassMode::Tree),
            "hint" => Ok(ClassMode::Hint),
            other => other.parse().map(ClassMode::Fixed),
        }
    }
}

pub fn decide_class(
    scene: &SceneBundle,
    spec: &FeatureEngSpec,
    mode: ClassMode,
) -> Result<Classification> {
    match (mode, scene.event_class_hint) {
        (ClassMode::Fixed(class), _) | (ClassMode::Hint, Some(class)) => Ok(Classification {
            class,
            scores: Vec::new(),
        }),
        _ => classify_event(scene, spec),
    }
}
