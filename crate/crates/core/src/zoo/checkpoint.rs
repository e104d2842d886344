//! `SFCKPT` checkpoint files.
//!
//! Layout, little-endian: magic `SFCKPT\0`, u32 version, u32 tensor count,
//! then per tensor a u32 name length, the UTF-8 name, u32 rank, u32 dims and
//! an f32 payload. The first tensor is named `arch:<id>` and holds the input
//! dims followed by the class count; `norm.mean` and `norm.std` hold the
//! input normalization; every network parameter follows under its own name.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{ArchitectureSpec, Family};
use crate::audio::ChannelStats;
use crate::error::{Error, Result};
use crate::nn::{Network, Tensor};

pub const MAGIC: &[u8; 7] = b"SFCKPT\0";
pub const VERSION: u32 = 1;

const ARCH_PREFIX: &str = "arch:";
const MAX_RANK: usize = 8;

/// Per-channel (or per-feature) input standardization: `(x - mean) / std`,
/// with the statistic chosen by `index % len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    pub fn identity(len: usize) -> Self {
        Self {
            mean: vec![0.0; len],
            std: vec![1.0; len],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.is_empty() || self.mean.len() != self.std.len() {
            return Err(Error::Shape(format!(
                "normalization has {} means and {} deviations",
                self.mean.len(),
                self.std.len()
            )));
        }
        if let Some(c) = self.std.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::DegenerateChannel(format!(
                "channel {c} has standard deviation {}",
                self.std[c]
            )));
        }
        Ok(())
    }

    /// Standardizes an interleaved block in place.
    pub fn apply(&self, block: &mut [f32]) -> Result<()> {
        self.validate()?;
        let n = self.mean.len();
        if block.len() % n != 0 {
            return Err(Error::Shape(format!(
                "block of {} values is not a multiple of {n} channels",
                block.len()
            )));
        }
        for px in block.chunks_exact_mut(n) {
            for ((v, m), s) in px.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }
}

impl From<&ChannelStats> for Normalization {
    fn from(stats: &ChannelStats) -> Self {
        Self {
            mean: stats.mean.iter().map(|v| *v as f32).collect(),
            std: stats.std.iter().map(|v| *v as f32).collect(),
        }
    }
}

pub struct Checkpoint {
    pub arch: ArchitectureSpec,
    pub network: Network<f32>,
    pub norm: Normalization,
}

impl Checkpoint {
    /// Fails with a shape error when the checkpoint holds another family.
    pub fn require(&self, family: Family) -> Result<()> {
        if self.arch.family != family {
            return Err(Error::Shape(format!(
                "checkpoint holds a {} network, expected {family}",
                self.arch.id()
            )));
        }
        Ok(())
    }
}

fn put_tensor<W: Write>(w: &mut W, name: &str, dims: &[usize], data: &[f32]) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for d in dims {
        w.write_all(&(*d as u32).to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    arch: &ArchitectureSpec,
    network: &Network<f32>,
    norm: &Normalization,
) -> Result<()> {
    norm.validate()?;
    if network.layer_specs() != arch.layers() || network.input_dims() != arch.input_dims {
        return Err(Error::Shape(format!("network does not match {}", arch.id())));
    }
    let params = network.params();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32 + 3).to_le_bytes())?;
    let header: Vec<f32> = arch
        .input_dims
        .iter()
        .chain(std::iter::once(&arch.classes))
        .map(|v| *v as f32)
        .collect();
    put_tensor(&mut w, &format!("{ARCH_PREFIX}{}", arch.id()), &[header.len()], &header)?;
    put_tensor(&mut w, "norm.mean", &[norm.mean.len()], &norm.mean)?;
    put_tensor(&mut w, "norm.std", &[norm.std.len()], &norm.std)?;
    for p in params {
        put_tensor(&mut w, &p.name, p.value.dims(), p.value.data())?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    arch: &ArchitectureSpec,
    network: &Network<f32>,
    norm: &Normalization,
) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, arch, network, norm)?;
    fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corruption(format!(
                "checkpoint truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

struct RawTensor {
    name: String,
    dims: Vec<usize>,
    data: Vec<f32>,
}

fn get_tensor(c: &mut Cursor) -> Result<RawTensor> {
    let len = c.u32()? as usize;
    let name = std::str::from_utf8(c.take(len)?)
        .map_err(|_| Error::Corruption("tensor name is not UTF-8".into()))?
        .to_string();
    let rank = c.u32()? as usize;
    if rank > MAX_RANK {
        return Err(Error::Corruption(format!("{name}: rank {rank}")));
    }
    let dims = (0..rank)
        .map(|_| c.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let count = dims
        .iter()
        .try_fold(1usize, |a, d| a.checked_mul(*d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Corruption(format!("{name}: dims {dims:?} overflow")))?;
    let data = c
        .take(count)?
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(RawTensor { name, dims, data })
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < MAGIC.len() + 8 {
        return Err(if bytes.starts_with(&MAGIC[..bytes.len().min(MAGIC.len())]) {
            Error::Corruption("checkpoint truncated in header".into())
        } else {
            Error::Format("not a checkpoint file".into())
        });
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let mut c = Cursor {
        bytes: &bytes,
        pos: MAGIC.len(),
    };
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = c.u32()? as usize;
    let mut tensors = Vec::new();
    for _ in 0..count {
        tensors.push(get_tensor(&mut c)?);
    }
    if c.pos != bytes.len() {
        return Err(Error::Corruption(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - c.pos
        )));
    }

    let mut tensors = tensors.into_iter();
    let arch = tensors
        .next()
        .filter(|t| t.name.starts_with(ARCH_PREFIX))
        .ok_or_else(|| Error::Corruption("checkpoint lacks an architecture record".into()))?;
    let header: Vec<usize> = arch.data.iter().map(|v| *v as usize).collect();
    let (classes, input_dims) = header
        .split_last()
        .ok_or_else(|| Error::Corruption("empty architecture record".into()))?;
    let spec = ArchitectureSpec::from_id(&arch.name[ARCH_PREFIX.len()..], input_dims, *classes)
        .map_err(|e| Error::Corruption(format!("architecture record: {e}")))?;

    let mut next_named = |name: &str| -> Result<RawTensor> {
        match tensors.next() {
            Some(t) if t.name == name => Ok(t),
            Some(t) => Err(Error::Corruption(format!("expected tensor {name}, found {}", t.name))),
            None => Err(Error::Corruption(format!("missing tensor {name}"))),
        }
    };
    let norm = Normalization {
        mean: next_named("norm.mean")?.data,
        std: next_named("norm.std")?.data,
    };
    norm.validate()
        .map_err(|e| Error::Corruption(format!("normalization: {e}")))?;

    let mut network = spec.build::<f32>(0)?;
    for p in network.params_mut() {
        let t = next_named(&p.name)?;
        if t.dims != p.value.dims() {
            return Err(Error::Corruption(format!(
                "{} has dims {:?}, architecture needs {:?}",
                t.name,
                t.dims,
                p.value.dims()
            )));
        }
        p.value = Tensor::from_vec(&t.dims, t.data)?;
    }
    if let Some(extra) = tensors.next() {
        return Err(Error::Corruption(format!("unexpected tensor {}", extra.name)));
    }
    Ok(Checkpoint {
        arch: spec,
        network,
        norm,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build_mlp, build_vgg14};

    fn mlp_bytes() -> Vec<u8> {
        let arch = build_mlp(8, 3, 1.0 / 512.0).unwrap();
        let net = arch.build::<f32>(1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &arch, &net, &Normalization::identity(8)).unwrap();
        buf
    }

    #[test]
    fn round_trip_preserves_params() {
        let arch = build_vgg14(&[16, 16, 2], 4, 0.125).unwrap();
        let net = arch.build::<f32>(9).unwrap();
        let norm = Normalization {
            mean: vec![0.5, -1.0],
            std: vec![2.0, 0.25],
        };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &arch, &net, &norm).unwrap();
        let ck = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(ck.arch, arch);
        assert_eq!(ck.norm, norm);
        for (a, b) in ck.network.params().iter().zip(net.params()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn every_truncation_is_detected() {
        let buf = mlp_bytes();
        for cut in [buf.len() - 1, buf.len() / 2, 20, 9] {
            let err = read_checkpoint(&buf[..cut]).err().unwrap();
            assert!(matches!(err, Error::Corruption(_)), "cut {cut}: {err:?}");
        }
    }

    #[test]
    fn magic_and_version_are_format_errors() {
        let mut buf = mlp_bytes();
        buf[0] = b'X';
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(Error::Format(_))));
        let mut buf = mlp_bytes();
        buf[7] = 2;
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn family_mismatch_is_shape_error() {
        let ck = read_checkpoint(mlp_bytes().as_slice()).unwrap();
        assert!(ck.require(Family::Mlp).is_ok());
        assert!(matches!(ck.require(Family::Vgg14), Err(Error::Shape(_))));
    }

    #[test]
    fn normalization_applies_per_channel() {
        let norm = Normalization {
            mean: vec![1.0, 2.0],
            std: vec![2.0, 4.0],
        };
        let mut block = vec![3.0, 6.0, 1.0, 2.0];
        norm.apply(&mut block).unwrap();
        assert_eq!(block, vec![1.0, 1.0, 0.0, 0.0]);
        let zero = Normalization {
            mean: vec![0.0],
            std: vec![0.0],
        };
        assert!(matches!(zero.apply(&mut [1.0]), Err(Error::DegenerateChannel(_))));
    }
}
