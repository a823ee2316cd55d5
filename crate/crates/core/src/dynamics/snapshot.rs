//! Binary snapshot of the edge states: magic `NWNS`, version `u16`, edge
//! count `u32`, `λ` as `f64` values, then the elapsed time as `f64`. All
//! little-endian. Node voltages are not stored; the next solve recomputes them.

use std::io::{Read, Write};
use std::path::Path;

use super::NetworkState;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NWNS";
const VERSION: u16 = 1;

pub fn write_snapshot(state: &NetworkState, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(state.lambda.len() as u32).to_le_bytes())?;
    for l in &state.lambda {
        w.write_all(&l.to_le_bytes())?;
    }
    w.write_all(&state.time.to_le_bytes())
}

/// Read a snapshot; `n_nodes` sizes the (zeroed) voltage vector.
pub fn read_snapshot(mut r: impl Read, n_nodes: usize, path: &Path) -> Result<NetworkState> {
    let io = |e| Error::io(path, e);
    let mut head = [0u8; 10];
    r.read_exact(&mut head).map_err(io)?;
    if &head[..4] != MAGIC {
        return Err(Error::format(path, "missing NWNS magic"));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let n = u32::from_le_bytes(head[6..10].try_into().unwrap()) as usize;
    let mut buf = vec![0u8; 8 * (n + 1)];
    r.read_exact(&mut buf).map_err(io)?;
    let mut vals = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let lambda: Vec<f64> = vals.by_ref().take(n).collect();
    let time = vals.next().expect("buffer sized for time");
    Ok(NetworkState {
        lambda,
        node_voltage: vec![0.0; n_nodes],
        time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let state = NetworkState {
            lambda: vec![0.0, -1.5e-2, 3.25e-3],
            node_voltage: vec![0.0; 4],
            time: 0.42,
        };
        let mut bytes = Vec::new();
        write_snapshot(&state, &mut bytes).unwrap();
        assert_eq!(bytes.len(), 4 + 2 + 4 + 8 * 4);
        assert_eq!(&bytes[..4], b"NWNS");
        let back = read_snapshot(bytes.as_slice(), 4, Path::new("mem")).unwrap();
        assert_eq!(back, state);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let state = NetworkState {
            lambda: vec![1.0],
            node_voltage: vec![],
            time: 0.0,
        };
        let mut bytes = Vec::new();
        write_snapshot(&state, &mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_snapshot(bad.as_slice(), 0, Path::new("m")).is_err());
        bytes.truncate(bytes.len() - 1);
        assert!(read_snapshot(bytes.as_slice(), 0, Path::new("m")).is_err());
    }
}
