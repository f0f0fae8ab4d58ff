//! Binary model file. All integers and floats are little-endian:
//!
//! | field            | type            |
//! |------------------|-----------------|
//! | magic            | 8 bytes `PLTNLSTM` |
//! | format version   | u32             |
//! | input dimension  | u32             |
//! | layer count `L`  | u32             |
//! | hidden sizes     | `L` x u32       |
//! | feature means    | 3 x f64         |
//! | feature stds     | 3 x f64         |
//! | parameter count  | u64             |
//! | parameters       | count x f64, in `theta` layout order |
//!
//! Floats are stored as raw IEEE-754 bits, so a round trip is lossless.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{FeatureNorm, NetworkParams, INPUT_DIM};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"PLTNLSTM";
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn write_model<W: Write>(params: &NetworkParams, mut w: W) -> std::io::Result<()> {
    let hidden = params.hidden_sizes();
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(INPUT_DIM as u32).to_le_bytes())?;
    w.write_all(&(hidden.len() as u32).to_le_bytes())?;
    for &h in hidden {
        w.write_all(&(h as u32).to_le_bytes())?;
    }
    for v in params.norm.mean.iter().chain(&params.norm.std) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(params.theta().len() as u64).to_le_bytes())?;
    for v in params.theta() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::ModelFormat(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_model<R: Read>(mut r: R) -> Result<NetworkParams> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::ModelFormat(format!("read failed: {e}")))?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(8, "magic")? != MODEL_MAGIC {
        return Err(Error::ModelFormat("not a model file (bad magic)".into()));
    }
    let version = c.u32("version")?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelFormat(format!("unsupported format version {version}")));
    }
    let input_dim = c.u32("input dimension")?;
    if input_dim as usize != INPUT_DIM {
        return Err(Error::ModelFormat(format!(
            "input dimension {input_dim}, expected {INPUT_DIM}"
        )));
    }
    let layers = c.u32("layer count")? as usize;
    if layers == 0 || layers > 64 {
        return Err(Error::ModelFormat(format!("implausible layer count {layers}")));
    }
    let hidden = (0..layers)
        .map(|_| c.u32("hidden size").map(|h| h as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut norm = FeatureNorm::default();
    for m in &mut norm.mean {
        *m = c.f64("feature mean")?;
    }
    for s in &mut norm.std {
        *s = c.f64("feature std")?;
    }
    let count = c.u64("parameter count")? as usize;
    if count.checked_mul(8) != Some(buf.len() - c.pos) {
        return Err(Error::ModelFormat(format!(
            "parameter count {count} does not match remaining {} bytes",
            buf.len() - c.pos
        )));
    }
    let theta = (0..count).map(|_| c.f64("parameter")).collect::<Result<Vec<_>>>()?;
    NetworkParams::from_theta(&hidden, theta, norm)
}

pub fn save_model(params: &NetworkParams, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    write_model(params, &mut bytes).expect("writing to memory");
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<NetworkParams> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_params;

    #[test]
    fn header_layout() {
        let p = NetworkParams::zeros(&[2]);
        let mut bytes = Vec::new();
        write_model(&p, &mut bytes).unwrap();
        assert_eq!(&bytes[..8], b"PLTNLSTM");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2);
        let n = p.num_params();
        assert_eq!(bytes.len(), 24 + 48 + 8 + 8 * n);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = Vec::new();
        write_model(&init_params(1), &mut bytes).unwrap();
        assert!(read_model(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_model(bad.as_slice()).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(read_model(bad.as_slice()).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(read_model(extra.as_slice()).is_err());
    }

    proptest::proptest! {
        #[test]
        fn round_trip_is_bitwise(seed in 0u64..1000, m0 in -50.0..50.0f64, s0 in 0.01..20.0f64) {
            let mut p = init_params(seed);
            p.norm.mean[0] = m0;
            p.norm.std[2] = s0;
            let mut bytes = Vec::new();
            write_model(&p, &mut bytes).unwrap();
            let q = read_model(bytes.as_slice()).unwrap();
            proptest::prop_assert_eq!(p.hidden_sizes(), q.hidden_sizes());
            for (a, b) in p.theta().iter().zip(q.theta()) {
                proptest::prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            proptest::prop_assert_eq!(p.norm, q.norm);
        }
    }
}
