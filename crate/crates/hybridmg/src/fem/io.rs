//! State snapshot format: `hybridmg-state v1`, level, node count, time,
//! little-endian float64 (p, vx, vy) triples.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fem::{StateVector, N_COMP};

const STATE_MAGIC: &[u8] = b"hybridmg-state v1\n";

pub fn write_state<W: Write>(x: &StateVector, w: &mut W) -> Result<()> {
    w.write_all(STATE_MAGIC)?;
    w.write_all(&(x.level as u32).to_le_bytes())?;
    w.write_all(&(x.n_nodes() as u64).to_le_bytes())?;
    w.write_all(&x.time.to_le_bytes())?;
    for v in &x.coeffs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_state<R: Read>(mut r: R) -> Result<StateVector> {
    let mut magic = vec![0u8; STATE_MAGIC.len()];
    r.read_exact(&mut magic)?;
    if magic != STATE_MAGIC {
        return Err(Error::Format("bad state magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let level = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n_nodes = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let time = f64::from_le_bytes(b8);
    let mut coeffs = Vec::with_capacity(N_COMP * n_nodes);
    for _ in 0..N_COMP * n_nodes {
        r.read_exact(&mut b8).map_err(|_| Error::Format("truncated state file".into()))?;
        coeffs.push(f64::from_le_bytes(b8));
    }
    Ok(StateVector { level, time, coeffs })
}

pub fn write_state_file(x: &StateVector, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_state(x, &mut f)
}

pub fn read_state_file(path: &Path) -> Result<StateVector> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_state(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_roundtrip_is_bit_exact() {
        let x = StateVector {
            level: 3,
            time: 1.25,
            coeffs: (0..30).map(|i| (i as f64).sin()).collect(),
        };
        let mut buf = Vec::new();
        write_state(&x, &mut buf).unwrap();
        let y = read_state(buf.as_slice()).unwrap();
        assert_eq!(x.level, y.level);
        assert_eq!(x.time, y.time);
        assert_eq!(x.coeffs, y.coeffs);
    }

    #[test]
    fn truncated_state_is_reported() {
        let x = StateVector { level: 0, time: 0.0, coeffs: vec![1.0; 9] };
        let mut buf = Vec::new();
        write_state(&x, &mut buf).unwrap();
        buf.truncate(buf.len() - 4);
        assert!(read_state(buf.as_slice()).is_err());
    }
}
