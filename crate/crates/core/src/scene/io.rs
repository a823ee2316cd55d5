use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{LogRange, Raster, SceneBundle, Sensor, N_FRAMES};
use crate::error::{Error, Result};
use crate::featureng::DisasterClass;

pub const FRAME_MAGIC: &[u8; 4] = b"SBND";
pub const FRAME_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 3 * 4;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    sensor: Sensor,
    /// `[height, width]`
    dims: [usize; 2],
    #[serde(rename = "T")]
    t: usize,
    band_labels: Vec<String>,
    norm_stats: Vec<LogRange>,
    paths: Paths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    event_class_hint: Option<DisasterClass>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Paths {
    frames: Vec<String>,
    mask: String,
    missing: String,
}

/// Write one frame file.
pub fn write_frame(path: &Path, raster: &Raster) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * raster.data.len());
    buf.extend_from_slice(FRAME_MAGIC);
    buf.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    for d in [raster.bands, raster.height, raster.width] {
        let d = u32::try_from(d).map_err(|_| Error::format(path, "dimension exceeds u32"))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in &raster.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Read one frame file.
pub fn read_frame(path: &Path) -> Result<Raster> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "truncated header"));
    }
    if &bytes[..4] != FRAME_MAGIC {
        return Err(Error::format(path, "bad magic, expected SBND"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FRAME_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let dim = |k: usize| {
        let o = 6 + 4 * k;
        u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize
    };
    let (bands, height, width) = (dim(0), dim(1), dim(2));
    let n = bands
        .checked_mul(height)
        .and_then(|x| x.checked_mul(width))
        .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * n {
        return Err(Error::format(
            path,
            format!(
                "payload is {} bytes, header implies {}",
                payload.len(),
                4 * n
            ),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Raster {
        bands,
        height,
        width,
        data,
    })
}

fn read_layer(path: &Path, n: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != n {
        return Err(Error::format(
            path,
            format!("{} bytes, expected {n}", bytes.len()),
        ));
    }
    Ok(bytes)
}

/// Load and validate a bundle directory.
pub fn load_bundle(dir: &Path) -> Result<SceneBundle> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    if m.t != N_FRAMES || m.paths.frames.len() != m.t {
        return Err(Error::format(
            &manifest_path,
            format!(
                "T = {} with {} frame paths; exactly {N_FRAMES} are required",
                m.t,
                m.paths.frames.len()
            ),
        ));
    }
    let [height, width] = m.dims;
    let frames = m
        .paths
        .frames
        .iter()
        .map(|p| {
            let path = dir.join(p);
            let r = read_frame(&path)?;
            if (r.height, r.width) != (height, width) {
                return Err(Error::format(
                    &path,
                    format!(
                        "frame is {}x{}, manifest says {height}x{width}",
                        r.height, r.width
                    ),
                ));
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = height * width;
    let mask = read_layer(&dir.join(&m.paths.mask), n)?;
    let missing = read_layer(&dir.join(&m.paths.missing), n)?
        .into_iter()
        .map(|v| v != 0)
        .collect();
    let name = m.name.unwrap_or_else(|| {
        dir.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "event".into())
    });
    let scene = SceneBundle {
        name,
        sensor: m.sensor,
        height,
        width,
        band_labels: m.band_labels,
        norm_stats: m.norm_stats,
        frames,
        mask,
        missing,
        event_class_hint: m.event_class_hint,
    };
    scene.validate()?;
    Ok(scene)
}

/// Write a bundle directory, creating it if needed.
pub fn save_bundle(scene: &SceneBundle, dir: &Path) -> Result<()> {
    scene.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let frame_names: Vec<String> = (1..=scene.frames.len())
        .map(|t| format!("frame_{t}.raw"))
        .collect();
    for (raster, name) in scene.frames.iter().zip(&frame_names) {
        write_frame(&dir.join(name), raster)?;
    }
    let write =
        |path: PathBuf, bytes: &[u8]| fs::write(&path, bytes).map_err(|e| Error::io(&path, e));
    write(dir.join("mask.raw"), &scene.mask)?;
    let missing: Vec<u8> = scene.missing.iter().map(|&m| u8::from(m)).collect();
    write(dir.join("missing.raw"), &missing)?;
    let manifest = Manifest {
        name: Some(scene.name.clone()),
        sensor: scene.sensor,
        dims: [scene.height, scene.width],
        t: scene.frames.len(),
        band_labels: scene.band_labels.clone(),
        norm_stats: scene.norm_stats.clone(),
        paths: Paths {
            frames: frame_names,
            mask: "mask.raw".into(),
            missing: "missing.raw".into(),
        },
        event_class_hint: scene.event_class_hint,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    write(dir.join("manifest.json"), text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_scene;
    use super::*;

    #[test]
    fn bundle_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let scene = tiny_scene();
        save_bundle(&scene, dir.path()).unwrap();
        let back = load_bundle(dir.path()).unwrap();
        assert_eq!(back, scene);
    }

    #[test]
    fn frame_header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.raw");
        let mut r = Raster::zeros(2, 1, 3);
        r.data[4] = 1.5;
        write_frame(&path, &r).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"SBND");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[2, 0, 0, 0]);
        assert_eq!(&bytes[10..14], &[1, 0, 0, 0]);
        assert_eq!(&bytes[14..18], &[3, 0, 0, 0]);
        assert_eq!(bytes.len(), 18 + 24);
        assert_eq!(&bytes[18 + 16..18 + 20], &1.5f32.to_le_bytes());
        assert_eq!(read_frame(&path).unwrap(), r);
    }

    #[test]
    fn rejects_corrupt_frames() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.raw");
        write_frame(&path, &Raster::zeros(1, 2, 2)).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        assert!(read_frame(&path).is_err());
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(read_frame(&path).is_err());
    }

    #[test]
    fn rejects_wrong_frame_count() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&tiny_scene(), dir.path()).unwrap();
        let mpath = dir.path().join("manifest.json");
        let mut m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&mpath).unwrap()).unwrap();
        m["T"] = 4.into();
        m["paths"]["frames"].as_array_mut().unwrap().pop();
        fs::write(&mpath, m.to_string()).unwrap();
        let err = load_bundle(dir.path()).unwrap_err();
        assert!(err.to_string().contains("exactly 5"), "{err}");
    }

    #[test]
    fn manifest_without_name_uses_directory() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("event_17");
        save_bundle(&tiny_scene(), &dir).unwrap();
        let mpath = dir.join("manifest.json");
        let mut m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&mpath).unwrap()).unwrap();
        m.as_object_mut().unwrap().remove("name");
        m["stats_source"] = "computed".into();
        fs::write(&mpath, m.to_string()).unwrap();
        assert_eq!(load_bundle(&dir).unwrap().name, "event_17");
    }
}
