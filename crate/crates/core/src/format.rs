//! Little-endian binary containers for networks, calibration sets and masks.
//!
//! Network container:
//!
//! ```text
//! "SPAL" | u32 version = 1 | u8 activation (0 linear, 1 relu) | u32 L
//!        | L × (u32 rows, u32 cols) | L × rows·cols f64, row-major
//!        | u32 label length | label bytes (UTF-8)
//! ```
//!
//! Calibration sets use the same container with `L = 1`.
//!
//! Mask container: the activation byte is replaced by the 4-byte tag
//! `"MASK"` and the payload holds one byte per entry (1 kept, 0 pruned):
//!
//! ```text
//! "SPAL" | u32 version = 1 | "MASK" | u32 L | L × (u32 rows, u32 cols)
//!        | L × rows·cols u8
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::netmodel::{Activation, CalibrationSet, LayerNet};
use crate::pruner::Mask;

pub const MAGIC: &[u8; 4] = b"SPAL";
pub const MASK_TAG: &[u8; 4] = b"MASK";
pub const FORMAT_VERSION: u32 = 1;

const CALIBRATION_LABEL: &str = "calibration";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Corrupt(format!(
                    "unexpected end of data: need {n} bytes at offset {}, {} available",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes after payload",
                self.remaining()
            )));
        }
        Ok(())
    }
}

fn write_header(out: &mut Vec<u8>, shapes: &[(usize, usize)]) {
    out.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    for &(r, c) in shapes {
        out.extend_from_slice(&(r as u32).to_le_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
}

fn read_preamble(rd: &mut Reader<'_>) -> Result<()> {
    if rd.take(4)? != MAGIC {
        return Err(Error::Corrupt("bad magic, not a SPAL container".into()));
    }
    let version = rd.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    Ok(())
}

fn read_shapes(rd: &mut Reader<'_>, bytes_per_entry: usize) -> Result<Vec<(usize, usize)>> {
    let count = rd.u32()? as usize;
    if count == 0 {
        return Err(Error::Corrupt("container holds zero layers".into()));
    }
    if count.saturating_mul(8) > rd.remaining() {
        return Err(Error::Corrupt(format!("layer count {count} exceeds file size")));
    }
    let mut shapes = Vec::with_capacity(count);
    let mut payload: usize = 0;
    for _ in 0..count {
        let r = rd.u32()? as usize;
        let c = rd.u32()? as usize;
        if r == 0 || c == 0 {
            return Err(Error::Corrupt(format!("empty layer shape {r}x{c}")));
        }
        payload = r
            .checked_mul(c)
            .and_then(|n| n.checked_mul(bytes_per_entry))
            .and_then(|n| payload.checked_add(n))
            .ok_or_else(|| Error::Corrupt("layer sizes overflow".into()))?;
        shapes.push((r, c));
    }
    if payload > rd.remaining() {
        return Err(Error::Corrupt(format!(
            "payload needs {payload} bytes, only {} present",
            rd.remaining()
        )));
    }
    Ok(shapes)
}

pub fn encode_net(net: &LayerNet) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + net.total_weights() * 8 + net.label().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(net.activation().to_byte());
    let shapes: Vec<_> = net.layers().iter().map(DenseMatrix::shape).collect();
    write_header(&mut out, &shapes);
    for w in net.layers() {
        for v in w.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(net.label().len() as u32).to_le_bytes());
    out.extend_from_slice(net.label().as_bytes());
    out
}

pub fn decode_net(buf: &[u8]) -> Result<LayerNet> {
    let mut rd = Reader::new(buf);
    read_preamble(&mut rd)?;
    let act_byte = rd.u8()?;
    let activation = Activation::from_byte(act_byte).ok_or_else(|| {
        if act_byte == MASK_TAG[0] {
            Error::Corrupt("container holds masks, not a network".into())
        } else {
            Error::Corrupt(format!("unknown activation byte {act_byte}"))
        }
    })?;
    let shapes = read_shapes(&mut rd, 8)?;
    let mut layers = Vec::with_capacity(shapes.len());
    for (r, c) in shapes {
        let data = (0..r * c).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
        layers.push(DenseMatrix::new(r, c, data).map_err(|e| Error::Corrupt(e.to_string()))?);
    }
    let label_len = rd.u32()? as usize;
    let label = std::str::from_utf8(rd.take(label_len)?)
        .map_err(|_| Error::Corrupt("label is not valid UTF-8".into()))?
        .to_owned();
    rd.finish()?;
    LayerNet::new(layers, activation, label).map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn encode_masks(masks: &[Mask]) -> Vec<u8> {
    let total: usize = masks.iter().map(Mask::numel).sum();
    let mut out = Vec::with_capacity(16 + masks.len() * 8 + total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(MASK_TAG);
    let shapes: Vec<_> = masks.iter().map(Mask::shape).collect();
    write_header(&mut out, &shapes);
    for m in masks {
        out.extend(m.keep().iter().map(|&k| u8::from(k)));
    }
    out
}

pub fn decode_masks(buf: &[u8]) -> Result<Vec<Mask>> {
    let mut rd = Reader::new(buf);
    read_preamble(&mut rd)?;
    if rd.take(4)? != MASK_TAG {
        return Err(Error::Corrupt("missing MASK tag".into()));
    }
    let shapes = read_shapes(&mut rd, 1)?;
    let mut masks = Vec::with_capacity(shapes.len());
    for (r, c) in shapes {
        let keep = rd
            .take(r * c)?
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Corrupt(format!("mask byte {other} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        masks.push(Mask::from_keep(r, c, keep)?);
    }
    rd.finish()?;
    Ok(masks)
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Io(std::io::Error::other("path has no file name")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn save_net(net: &LayerNet, path: &Path) -> Result<()> {
    write_atomic(path, &encode_net(net))
}

pub fn load_net(path: &Path) -> Result<LayerNet> {
    decode_net(&std::fs::read(path)?)
}

pub fn save_calibration(calib: &CalibrationSet, path: &Path) -> Result<()> {
    let net = LayerNet::new(vec![calib.x0.clone()], Activation::Linear, CALIBRATION_LABEL)?;
    save_net(&net, path)
}

pub fn load_calibration(path: &Path) -> Result<CalibrationSet> {
    let net = load_net(path)?;
    if net.depth() != 1 {
        return Err(Error::Corrupt(format!(
            "calibration container must hold one matrix, found {}",
            net.depth()
        )));
    }
    Ok(CalibrationSet::new(net.layer(0).clone()))
}

pub fn save_masks(masks: &[Mask], path: &Path) -> Result<()> {
    write_atomic(path, &encode_masks(masks))
}

pub fn load_masks(path: &Path) -> Result<Vec<Mask>> {
    decode_masks(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{generate_calibration, generate_net};

    fn sample_net() -> LayerNet {
        generate_net(3, &[4, 5, 3, 2], Activation::Relu, 21).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_net(&sample_net());
        assert_eq!(&bytes[0..4], b"SPAL");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(bytes[8], 1);
        assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 3);
        // first shape: 5 rows × 4 cols
        assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(bytes[17..21].try_into().unwrap()), 4);
    }

    #[test]
    fn net_round_trip() {
        let net = sample_net();
        let bytes = encode_net(&net);
        let back = decode_net(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(encode_net(&back), bytes);
    }

    #[test]
    fn truncated_is_corrupt() {
        let bytes = encode_net(&sample_net());
        for cut in [3, 9, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(decode_net(&bytes[..cut]), Err(Error::Corrupt(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn trailing_bytes_are_corrupt() {
        let mut bytes = encode_net(&sample_net());
        bytes.push(0);
        assert!(matches!(decode_net(&bytes), Err(Error::Corrupt(_))));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode_net(&sample_net());
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_net(&bytes),
            Err(Error::Version { found: 2, supported: 1 })
        ));
    }

    #[test]
    fn mask_container_round_trip() {
        let masks = vec![
            Mask::from_keep(2, 3, vec![true, false, true, true, false, false]).unwrap(),
            Mask::from_keep(1, 2, vec![false, true]).unwrap(),
        ];
        let bytes = encode_masks(&masks);
        assert_eq!(&bytes[8..12], b"MASK");
        assert_eq!(decode_masks(&bytes).unwrap(), masks);
        assert!(matches!(decode_net(&bytes), Err(Error::Corrupt(_))));
        assert!(matches!(
            decode_masks(&encode_net(&sample_net())),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn bad_mask_byte() {
        let masks = vec![Mask::from_keep(1, 2, vec![true, false]).unwrap()];
        let mut bytes = encode_masks(&masks);
        let last = bytes.len() - 1;
        bytes[last] = 7;
        assert!(matches!(decode_masks(&bytes), Err(Error::Corrupt(_))));
    }

    #[test]
    fn files_round_trip() {
        let dir = std::env::temp_dir().join(format!("sparsalloc-format-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let net = sample_net();
        let p = dir.join("net.spal");
        save_net(&net, &p).unwrap();
        assert_eq!(load_net(&p).unwrap(), net);

        let calib = generate_calibration(4, 6, 2).unwrap();
        let c = dir.join("calib.spal");
        save_calibration(&calib, &c).unwrap();
        assert_eq!(load_calibration(&c).unwrap(), calib);
        assert!(load_calibration(&p).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
