//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic            8 bytes  "LIMBPOSE"
//! format version   u32      (currently 1)
//! network kind     u8       1 = detection, 2 = regression
//! flags            u8       bit 0: encoder-decoder skips
//! reserved         u16      0
//! base width       u32
//! width count      u32, then that many u32 block/layer widths
//! epoch            u32      epoch the parameters were taken from
//! validation score f64
//! tensor count     u32
//! per tensor:
//!   name length    u16, then UTF-8 name
//!   rank           u8, then rank × u32 dims
//!   trainable      u8
//!   values         f32 × product(dims)
//! ```
//!
//! Tensors appear in the network's parameter visit order. Loading rebuilds the
//! network from the descriptor and requires every tensor name and shape to
//! match.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DetectionArch, DetectionNet, NetError, Network, RegressionArch, RegressionNet};

pub const MAGIC: &[u8; 8] = b"LIMBPOSE";
pub const FORMAT_VERSION: u32 = 1;
const KIND_DETECTION: u8 = 1;
const KIND_REGRESSION: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CheckpointMeta {
    pub epoch: u32,
    pub validation_score: f64,
}

struct Descriptor {
    kind: u8,
    flags: u8,
    base_width: u32,
    widths: Vec<u32>,
}

impl Descriptor {
    fn detection(arch: &DetectionArch) -> Self {
        Descriptor {
            kind: KIND_DETECTION,
            flags: arch.skips as u8,
            base_width: arch.base_width as u32,
            widths: arch.block_widths().iter().map(|&w| w as u32).collect(),
        }
    }

    fn regression(arch: &RegressionArch) -> Self {
        Descriptor {
            kind: KIND_REGRESSION,
            flags: 0,
            base_width: arch.base_width as u32,
            widths: arch.layer_widths().iter().map(|&w| w as u32).collect(),
        }
    }

    fn kind_name(kind: u8) -> &'static str {
        match kind {
            KIND_DETECTION => "detection",
            KIND_REGRESSION => "regression",
            _ => "unknown",
        }
    }
}

fn bad(msg: impl Into<String>) -> NetError {
    NetError::Checkpoint(msg.into())
}

fn write_all<T: Network<f32>>(
    net: &mut T,
    desc: &Descriptor,
    meta: CheckpointMeta,
    w: &mut impl Write,
) -> Result<(), NetError> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[desc.kind, desc.flags])?;
    w.write_all(&0u16.to_le_bytes())?;
    w.write_all(&desc.base_width.to_le_bytes())?;
    w.write_all(&(desc.widths.len() as u32).to_le_bytes())?;
    for v in &desc.widths {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&meta.epoch.to_le_bytes())?;
    w.write_all(&meta.validation_score.to_le_bytes())?;
    let mut tensors = Vec::new();
    net.visit_params(&mut |name, p| tensors.push((name.to_string(), p.shape.clone(), p.trainable, p.value.clone())));
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, shape, trainable, values) in tensors {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[shape.len() as u8])?;
        for d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&[trainable as u8])?;
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], NetError> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| bad(format!("truncated checkpoint: {e}")))?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8, NetError> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16, NetError> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }
    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64, NetError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

fn read_header(r: &mut Reader<impl Read>) -> Result<(Descriptor, CheckpointMeta), NetError> {
    if &r.bytes::<8>()? != MAGIC {
        return Err(bad("not a limbpose checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let kind = r.u8()?;
    let flags = r.u8()?;
    let _reserved = r.u16()?;
    let base_width = r.u32()?;
    let n = r.u32()?;
    if n > 64 {
        return Err(bad(format!("implausible width count {n}")));
    }
    let widths = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
    let meta = CheckpointMeta {
        epoch: r.u32()?,
        validation_score: r.f64()?,
    };
    Ok((
        Descriptor {
            kind,
            flags,
            base_width,
            widths,
        },
        meta,
    ))
}

fn read_tensors<T: Network<f32>>(net: &mut T, r: &mut Reader<impl Read>) -> Result<(), NetError> {
    let mut expected = Vec::new();
    net.visit_params(&mut |name, p| expected.push((name.to_string(), p.shape.clone())));
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(bad(format!("checkpoint has {count} tensors, network has {}", expected.len())));
    }
    let mut loaded = Vec::with_capacity(count);
    for (name, shape) in &expected {
        let len = r.u16()? as usize;
        let mut buf = vec![0u8; len];
        r.inner.read_exact(&mut buf).map_err(|e| bad(format!("truncated: {e}")))?;
        let got = String::from_utf8(buf).map_err(|_| bad("tensor name is not UTF-8"))?;
        if &got != name {
            return Err(bad(format!("expected tensor {name}, found {got}")));
        }
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        if &dims != shape {
            return Err(bad(format!("tensor {name}: shape {dims:?}, expected {shape:?}")));
        }
        let _trainable = r.u8()?;
        let n: usize = dims.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(f32::from_le_bytes(r.bytes()?));
        }
        loaded.push(values);
    }
    let mut it = loaded.into_iter();
    net.visit_params(&mut |_, p| p.value = it.next().expect("counted above"));
    Ok(())
}

fn check_kind(desc: &Descriptor, kind: u8) -> Result<(), NetError> {
    if desc.kind != kind {
        return Err(NetError::ArchMismatch {
            expected: format!("{} network", Descriptor::kind_name(kind)),
            found: format!("{} network", Descriptor::kind_name(desc.kind)),
        });
    }
    Ok(())
}

pub fn write_detection(
    net: &mut DetectionNet<f32>,
    meta: CheckpointMeta,
    w: &mut impl Write,
) -> Result<(), NetError> {
    let desc = Descriptor::detection(&net.arch);
    write_all(net, &desc, meta, w)
}

pub fn write_regression(
    net: &mut RegressionNet<f32>,
    meta: CheckpointMeta,
    w: &mut impl Write,
) -> Result<(), NetError> {
    let desc = Descriptor::regression(&net.arch);
    write_all(net, &desc, meta, w)
}

/// Reads a detection checkpoint. When `expected` is given the stored
/// architecture must equal it.
pub fn read_detection(
    r: impl Read,
    expected: Option<&DetectionArch>,
) -> Result<(DetectionNet<f32>, CheckpointMeta), NetError> {
    let mut r = Reader { inner: r };
    let (desc, meta) = read_header(&mut r)?;
    check_kind(&desc, KIND_DETECTION)?;
    let arch = DetectionArch {
        base_width: desc.base_width as usize,
        skips: desc.flags & 1 != 0,
    };
    if Descriptor::detection(&arch).widths != desc.widths {
        return Err(bad(format!("block widths {:?} do not follow the detection topology", desc.widths)));
    }
    if let Some(e) = expected {
        if *e != arch {
            return Err(NetError::ArchMismatch {
                expected: format!("{e:?}"),
                found: format!("{arch:?}"),
            });
        }
    }
    let mut net = DetectionNet::new(arch, 0)?;
    read_tensors(&mut net, &mut r)?;
    Ok((net, meta))
}

pub fn read_regression(
    r: impl Read,
    expected: Option<&RegressionArch>,
) -> Result<(RegressionNet<f32>, CheckpointMeta), NetError> {
    let mut r = Reader { inner: r };
    let (desc, meta) = read_header(&mut r)?;
    check_kind(&desc, KIND_REGRESSION)?;
    let arch = RegressionArch {
        base_width: desc.base_width as usize,
    };
    if Descriptor::regression(&arch).widths != desc.widths {
        return Err(bad(format!("layer widths {:?} do not follow the regression topology", desc.widths)));
    }
    if let Some(e) = expected {
        if *e != arch {
            return Err(NetError::ArchMismatch {
                expected: format!("{e:?}"),
                found: format!("{arch:?}"),
            });
        }
    }
    let mut net = RegressionNet::new(arch, 0)?;
    read_tensors(&mut net, &mut r)?;
    Ok((net, meta))
}

pub fn save_detection(net: &mut DetectionNet<f32>, meta: CheckpointMeta, path: &Path) -> Result<(), NetError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_detection(net, meta, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn save_regression(net: &mut RegressionNet<f32>, meta: CheckpointMeta, path: &Path) -> Result<(), NetError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_regression(net, meta, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_detection(
    path: &Path,
    expected: Option<&DetectionArch>,
) -> Result<(DetectionNet<f32>, CheckpointMeta), NetError> {
    read_detection(BufReader::new(File::open(path)?), expected)
}

pub fn load_regression(
    path: &Path,
    expected: Option<&RegressionArch>,
) -> Result<(RegressionNet<f32>, CheckpointMeta), NetError> {
    read_regression(BufReader::new(File::open(path)?), expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::param_values;

    #[test]
    fn detection_round_trip() {
        let arch = DetectionArch { base_width: 2, skips: true };
        let mut net = DetectionNet::<f32>::new(arch, 42).unwrap();
        let meta = CheckpointMeta {
            epoch: 7,
            validation_score: 0.625,
        };
        let mut buf = Vec::new();
        write_detection(&mut net, meta, &mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let (mut back, m) = read_detection(buf.as_slice(), Some(&arch)).unwrap();
        assert_eq!(m, meta);
        assert_eq!(param_values(&mut back), param_values(&mut net));
    }

    #[test]
    fn rejects_wrong_kind_arch_and_garbage() {
        let mut net = RegressionNet::<f32>::new(RegressionArch { base_width: 2 }, 1).unwrap();
        let mut buf = Vec::new();
        write_regression(&mut net, CheckpointMeta::default(), &mut buf).unwrap();
        assert!(matches!(read_detection(buf.as_slice(), None), Err(NetError::ArchMismatch { .. })));
        assert!(matches!(
            read_regression(buf.as_slice(), Some(&RegressionArch { base_width: 4 })),
            Err(NetError::ArchMismatch { .. })
        ));
        assert!(read_regression(&buf[..buf.len() - 3], None).is_err());
        assert!(read_regression(&b"NOTACKPT...."[..], None).is_err());
        let (_, _) = read_regression(buf.as_slice(), None).unwrap();
    }
}
