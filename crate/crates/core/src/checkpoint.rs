//! Binary parameter checkpoints.
//!
//! Layout, all little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `DECACNET` |
//! | 4 | format version (`u32`) |
//! | 5 x 8 | `m`, `D`, `d`, `head_rows`, `seed` (`u64`) |
//! | 8 x m d | `H`, column-major |
//! | 8 x D m^2 | `W(0)`, layer by layer, column-major |
//! | 8 x D m^2 | `W`, same order |
//! | 8 x head_rows m | `b`, column-major |
//!
//! A JSON sidecar (`<file>.json`) records the config hash and the role of the
//! network.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{FcNet, HiddenStack};

pub const MAGIC: &[u8; 8] = b"DECACNET";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    /// `actor` or `critic`.
    pub role: String,
    pub agent: usize,
}

fn put_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(net: &FcNet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [net.width(), net.depth(), net.input_dim(), net.head_rows()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&net.seed().to_le_bytes());
    put_matrix(&mut out, net.input_map());
    for w in net.init_hidden().iter().chain(net.hidden()) {
        put_matrix(&mut out, w);
    }
    put_matrix(&mut out, net.head());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Domain(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let len = rows.checked_mul(cols).and_then(|n| n.checked_mul(8));
        let raw = self.take(len.ok_or_else(|| Error::Domain("checkpoint dimensions overflow".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        Ok(DMatrix::from_iterator(rows, cols, data))
    }
}

pub fn decode(bytes: &[u8]) -> Result<FcNet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Domain("not a network checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Unsupported(format!("checkpoint format version {version}")));
    }
    let m = r.u64()? as usize;
    let depth = r.u64()? as usize;
    let d = r.u64()? as usize;
    let head_rows = r.u64()? as usize;
    let seed = r.u64()?;
    let h = r.matrix(m, d)?;
    let init: HiddenStack = (0..depth).map(|_| r.matrix(m, m)).collect::<Result<_>>()?;
    let hidden: HiddenStack = (0..depth).map(|_| r.matrix(m, m)).collect::<Result<_>>()?;
    let head = r.matrix(head_rows, m)?;
    if r.pos != bytes.len() {
        return Err(Error::Domain(format!("{} trailing bytes in checkpoint", bytes.len() - r.pos)));
    }
    FcNet::from_parts(h, init, hidden, head, seed)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save(path: &Path, net: &FcNet, sidecar: &Sidecar) -> Result<()> {
    std::fs::write(path, encode(net)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn load(path: &Path) -> Result<(FcNet, Sidecar)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let net = decode(&bytes)?;
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: side.clone(),
        message: e.to_string(),
    })?;
    Ok((net, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::TrainableSet;

    #[test]
    fn roundtrip_preserves_every_parameter() {
        let mut net = FcNet::init(4, 3, 5, 2, 11).unwrap();
        let mut w = net.trainable_flat(TrainableSet::Hidden);
        w.iter_mut().enumerate().for_each(|(i, v)| *v += i as f64 * 1e-3);
        net.set_trainable_flat(TrainableSet::Hidden, &w).unwrap();
        let bytes = encode(&net);
        assert_eq!(bytes.len(), 8 + 4 + 40 + 8 * (4 * 5 + 2 * 3 * 16 + 2 * 4));
        let back = decode(&bytes).unwrap();
        assert_eq!(back.input_map(), net.input_map());
        assert_eq!(back.init_hidden(), net.init_hidden());
        assert_eq!(back.hidden(), net.hidden());
        assert_eq!(back.head(), net.head());
        assert_eq!(back.seed(), 11);
    }

    #[test]
    fn rejects_bad_inputs() {
        let bytes = encode(&FcNet::init(2, 1, 2, 1, 0).unwrap());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
    }

    #[test]
    fn save_and_load_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("actor_0.bin");
        let net = FcNet::init(3, 2, 4, 5, 1).unwrap();
        let side = Sidecar {
            format_version: FORMAT_VERSION,
            config_hash: "abc".into(),
            seed: 1,
            role: "actor".into(),
            agent: 0,
        };
        save(&p, &net, &side).unwrap();
        let (back, s) = load(&p).unwrap();
        assert_eq!(s, side);
        assert_eq!(back.hidden(), net.hidden());
    }
}
