//! Distance-based change scores and per-pixel change maps.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pipeline::TileLoc;
use crate::scene::LABEL_CLOUD;

/// Earlier frames compared against the last one.
pub const LOOKBACK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Cosine,
    Correlation,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Euclidean, Metric::Cosine, Metric::Correlation];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
            Metric::Correlation => "correlation",
        }
    }

    pub fn distance(self, u: &[f64], v: &[f64]) -> Result<f64> {
        match self {
            Metric::Euclidean => euclidean_dist(u, v),
            Metric::Cosine => cosine_dist(u, v),
            Metric::Correlation => correlation_dist(u, v),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown metric '{s}'")))
    }
}

fn same_len(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() == v.len() {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            expected: u.len(),
            actual: v.len(),
        })
    }
}

pub fn euclidean_dist(u: &[f64], v: &[f64]) -> Result<f64> {
    same_len(u, v)?;
    Ok(u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// `1 − u·v / (‖u‖‖v‖)`, clamped to [0, 2]; 1 when either norm is zero.
pub fn cosine_dist(u: &[f64], v: &[f64]) -> Result<f64> {
    same_len(u, v)?;
    let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - uv / (uu.sqrt() * vv.sqrt())).clamp(0.0, 2.0))
}

/// Cosine distance after subtracting each vector's mean.
pub fn correlation_dist(u: &[f64], v: &[f64]) -> Result<f64> {
    same_len(u, v)?;
    if u.is_empty() {
        return Ok(1.0);
    }
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        let (a, b) = (a - mu, b - mv);
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - uv / (uu.sqrt() * vv.sqrt())).clamp(0.0, 2.0))
}

/// Smallest distance between the last frame and each of the up to four frames
/// before it.
pub fn change_score<V: AsRef<[f64]>>(frames: &[V], metric: Metric) -> Result<f64> {
    let Some((last, earlier)) = frames.split_last().filter(|(_, e)| !e.is_empty()) else {
        return Err(Error::Input(format!(
            "a change score needs at least 2 frames, got {}",
            frames.len()
        )));
    };
    let start = earlier.len().saturating_sub(LOOKBACK);
    earlier[start..]
        .iter()
        .map(|f| metric.distance(f.as_ref(), last.as_ref()))
        .try_fold(f64::INFINITY, |m, d| d.map(|d| m.min(d)))
}

/// Per-pixel scores for one event.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeMap {
    pub event: String,
    pub metric: Metric,
    pub height: usize,
    pub width: usize,
    /// Row-major; 0 where invalid.
    pub scores: Vec<f64>,
    /// False on cloud and on pixels outside every full tile.
    pub valid: Vec<bool>,
}

impl ChangeMap {
    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Broadcast tile scores onto their pixel blocks.
pub fn assemble_change_map(
    event: &str,
    metric: Metric,
    scores: &[f64],
    locs: &[TileLoc],
    (height, width): (usize, usize),
    side: usize,
    mask: &[u8],
) -> Result<ChangeMap> {
    if scores.len() != locs.len() {
        return Err(Error::LengthMismatch {
            expected: locs.len(),
            actual: scores.len(),
        });
    }
    if mask.len() != height * width {
        return Err(Error::LengthMismatch {
            expected: height * width,
            actual: mask.len(),
        });
    }
    let mut out = vec![0.0; height * width];
    let mut valid = vec![false; height * width];
    for (&s, loc) in scores.iter().zip(locs) {
        if (loc.a + 1) * side > height || (loc.b + 1) * side > width {
            return Err(Error::Input(format!(
                "tile ({}, {}) lies outside a {height}x{width} scene",
                loc.a, loc.b
            )));
        }
        if !s.is_finite() {
            return Err(Error::Input(format!(
                "non-finite score for tile ({}, {})",
                loc.a, loc.b
            )));
        }
        for r in loc.a * side..(loc.a + 1) * side {
            for p in r * width + loc.b * side..r * width + (loc.b + 1) * side {
                if mask[p] != LABEL_CLOUD {
                    out[p] = s;
                    valid[p] = true;
                }
            }
        }
    }
    Ok(ChangeMap {
        event: event.into(),
        metric,
        height,
        width,
        scores: out,
        valid,
    })
}

pub const CMAP_MAGIC: &[u8; 4] = b"CMAP";

/// Raw map: "CMAP", height and width as u32 LE, then f64 LE row-major.
/// Invalid pixels are written as NaN.
pub fn write_cmap<W: Write>(mut w: W, map: &ChangeMap) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(12 + 8 * map.scores.len());
    buf.extend_from_slice(CMAP_MAGIC);
    for d in [map.height, map.width] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for (&s, &ok) in map.scores.iter().zip(&map.valid) {
        let v = if ok { s } else { f64::NAN };
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

/// Read a raw map back as `(height, width, values)`; NaN marks invalid pixels.
pub fn read_cmap(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != CMAP_MAGIC {
        return Err(Error::format(path, "not a CMAP file"));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 12 + 8 * h * w {
        return Err(Error::format(
            path,
            "payload size does not match dimensions",
        ));
    }
    let vals = bytes[12..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((h, w, vals))
}

/// 16-bit binary PGM scaled min-max over valid pixels; invalid pixels are 0.
pub fn write_pgm<W: Write>(mut w: W, map: &ChangeMap) -> std::io::Result<()> {
    let (lo, hi) = map
        .scores
        .iter()
        .zip(&map.valid)
        .filter(|(_, &ok)| ok)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&s, _)| {
            (lo.min(s), hi.max(s))
        });
    let span = hi - lo;
    write!(w, "P5\n{} {}\n65535\n", map.width, map.height)?;
    let mut buf = Vec::with_capacity(2 * map.scores.len());
    for (&s, &ok) in map.scores.iter().zip(&map.valid) {
        let v = if !ok {
            0
        } else if span > 0.0 {
            ((s - lo) / span * 65535.0).round() as u16
        } else {
            0
        };
        buf.extend_from_slice(&v.to_be_bytes());
    }
    w.write_all(&buf)
}

/// Binary PBM of the invalid pixels (1 = invalid).
pub fn write_invalid_pbm<W: Write>(mut w: W, map: &ChangeMap) -> std::io::Result<()> {
    write!(w, "P4\n{} {}\n", map.width, map.height)?;
    let row_bytes = map.width.div_ceil(8);
    let mut buf = vec![0u8; row_bytes * map.height];
    for r in 0..map.height {
        for c in 0..map.width {
            if !map.valid[r * map.width + c] {
                buf[r * row_bytes + c / 8] |= 0x80 >> (c % 8);
            }
        }
    }
    w.write_all(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        let u = [1.0, 2.0, 3.0];
        assert_eq!(cosine_dist(&u, &u).unwrap(), 0.0);
        assert_eq!(cosine_dist(&[1.0, 0.0], &[0.0, 5.0]).unwrap(), 1.0);
        assert_eq!(cosine_dist(&u, &[-1.0, -2.0, -3.0]).unwrap(), 2.0);
        assert_eq!(cosine_dist(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(cosine_dist(&u, &[1.0]).is_err());
    }

    #[test]
    fn correlation_examples() {
        let u = [1.0, 4.0, 2.0, 8.0];
        let shifted: Vec<f64> = u.iter().map(|x| x + 10.0).collect();
        let scaled: Vec<f64> = u.iter().map(|x| 3.0 * x).collect();
        assert!(correlation_dist(&u, &shifted).unwrap() < 1e-15);
        assert!(correlation_dist(&u, &scaled).unwrap() < 1e-15);
        let z = [1.0, -1.0, 2.0, -2.0];
        let neg: Vec<f64> = z.iter().map(|x| -x).collect();
        assert!((correlation_dist(&z, &neg).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(correlation_dist(&[3.0; 4], &u).unwrap(), 1.0);
    }

    #[test]
    fn euclidean_example() {
        assert_eq!(euclidean_dist(&[0.0, 3.0], &[4.0, 0.0]).unwrap(), 5.0);
    }

    #[test]
    fn change_score_uses_min() {
        let a = vec![1.0, 0.0];
        let b = vec![0.0, 1.0];
        assert_eq!(
            change_score(&vec![a.clone(); 5], Metric::Euclidean).unwrap(),
            0.0
        );
        let frames = vec![b.clone(), b.clone(), b.clone(), a.clone(), a.clone()];
        assert_eq!(change_score(&frames, Metric::Cosine).unwrap(), 0.0);
        let frames = vec![b.clone(), b.clone(), b.clone(), b.clone(), a.clone()];
        assert_eq!(change_score(&frames, Metric::Cosine).unwrap(), 1.0);
        // the sixth-from-last frame is outside the lookback window
        let frames = vec![
            a.clone(),
            b.clone(),
            b.clone(),
            b.clone(),
            b.clone(),
            a.clone(),
        ];
        assert_eq!(change_score(&frames, Metric::Cosine).unwrap(), 1.0);
        assert!(change_score(&[a], Metric::Cosine).is_err());
        assert!(change_score::<Vec<f64>>(&[], Metric::Cosine).is_err());
    }

    #[test]
    fn map_broadcast() {
        let locs = vec![
            TileLoc { a: 0, b: 0 },
            TileLoc { a: 1, b: 0 },
            TileLoc { a: 0, b: 1 },
            TileLoc { a: 1, b: 1 },
        ];
        let mask = vec![0u8; 64 * 70];
        let m = assemble_change_map(
            "e",
            Metric::Cosine,
            &[0.0, 1.0, 2.0, 3.0],
            &locs,
            (64, 70),
            32,
            &mask,
        )
        .unwrap();
        assert_eq!(m.scores[40 * 70 + 5], 1.0);
        assert_eq!(m.scores[5 * 70 + 40], 2.0);
        assert_eq!(m.scores[63 * 70 + 63], 3.0);
        assert!(!m.valid[10 * 70 + 66]);
        assert_eq!(m.n_valid(), 64 * 64);

        let cloud = vec![LABEL_CLOUD; 64 * 70];
        let m = assemble_change_map("e", Metric::Cosine, &[0.0; 4], &locs, (64, 70), 32, &cloud)
            .unwrap();
        assert_eq!(m.n_valid(), 0);
        assert!(
            assemble_change_map("e", Metric::Cosine, &[0.0; 3], &locs, (64, 70), 32, &mask)
                .is_err()
        );
        assert!(assemble_change_map(
            "e",
            Metric::Cosine,
            &[0.0; 4],
            &locs,
            (40, 70),
            32,
            &mask[..40 * 70]
        )
        .is_err());
    }

    #[test]
    fn exports() {
        let dir = tempfile::tempdir().unwrap();
        let map = ChangeMap {
            event: "e".into(),
            metric: Metric::Euclidean,
            height: 2,
            width: 9,
            scores: (0..18).map(|i| i as f64).collect(),
            valid: (0..18).map(|i| i != 4).collect(),
        };
        let path = dir.path().join("m.cmap");
        write_cmap(std::fs::File::create(&path).unwrap(), &map).unwrap();
        let (h, w, vals) = read_cmap(&path).unwrap();
        assert_eq!((h, w), (2, 9));
        assert!(vals[4].is_nan());
        assert_eq!(vals[17], 17.0);

        let mut pgm = Vec::new();
        write_pgm(&mut pgm, &map).unwrap();
        let header = b"P5\n9 2\n65535\n";
        assert_eq!(&pgm[..header.len()], header);
        let px = &pgm[header.len()..];
        assert_eq!(px.len(), 36);
        assert_eq!(&px[34..36], &[0xff, 0xff]);
        assert_eq!(&px[0..2], &[0, 0]);

        let mut pbm = Vec::new();
        write_invalid_pbm(&mut pbm, &map).unwrap();
        assert_eq!(&pbm[..7], b"P4\n9 2\n");
        assert_eq!(&pbm[7..], &[0b0000_1000, 0, 0, 0]);
    }
}
