use std::io::{Read, Write};
use std::path::Path;

use super::filterbank::{FilterKind, Filterbank, FilterbankSpec, N_FILTERS};
use super::stft::stft_power;
use super::wav::AudioClip;
use super::Matrix;
use crate::error::{Error, Result};

pub const FRAMES: usize = 704;
pub const CHANNELS: usize = 6;
pub const PATCH_FRAMES: usize = 128;
pub const PATCH_HOP: usize = 64;
pub const PATCHES: usize = 10;

const DELTA_HALF_WIDTH: usize = 4;
const LOG_OFFSET: f64 = 1e-10;
const DYNAMIC_RANGE_DB: f64 = 80.0;

const FEATURE_MAGIC: &[u8; 6] = b"SFTEN\0";
const FEATURE_VERSION: u32 = 1;

/// 10·log10(x + 1e-10), floored at 80 dB below the matrix maximum.
pub fn log_compress(bands: &Matrix) -> Result<Matrix> {
    if let Some(v) = bands.data().iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("log compression of negative value {v}")));
    }
    let db = bands.map(|v| 10.0 * (v + LOG_OFFSET).log10());
    let max = db.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = max - DYNAMIC_RANGE_DB;
    Ok(db.map(|v| v.max(floor)))
}

/// Regression delta over a 9-frame window with replicated edges.
///
/// `order` 2 applies the first-order delta twice.
pub fn delta(features: &Matrix, order: usize) -> Result<Matrix> {
    let frames = features.cols();
    if frames < 2 * DELTA_HALF_WIDTH + 1 {
        return Err(Error::TooShort(format!(
            "delta needs at least {} frames, got {frames}",
            2 * DELTA_HALF_WIDTH + 1
        )));
    }
    match order {
        1 => Ok(delta_once(features)),
        2 => Ok(delta_once(&delta_once(features))),
        _ => Err(Error::Spec(format!("delta order must be 1 or 2, got {order}"))),
    }
}

fn delta_once(x: &Matrix) -> Matrix {
    let frames = x.cols() as isize;
    let n = DELTA_HALF_WIDTH as isize;
    let denom = 2.0 * (1..=n).map(|k| (k * k) as f64).sum::<f64>();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let src = x.row(r);
        let at = |t: isize| src[t.clamp(0, frames - 1) as usize];
        for (t, dst) in out.row_mut(r).iter_mut().enumerate() {
            let t = t as isize;
            let num: f64 = (1..=n).map(|k| k as f64 * (at(t + k) - at(t - k))).sum();
            *dst = num / denom;
        }
    }
    out
}

/// 128 bins × 704 frames × 6 channels, row-major in that order.
///
/// Channel layout: left static, left delta, left delta-delta, then the same
/// three for the right channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramTensor {
    kind: FilterKind,
    data: Vec<f32>,
}

impl SpectrogramTensor {
    pub const DIMS: [usize; 3] = [N_FILTERS, FRAMES, CHANNELS];

    pub fn from_vec(kind: FilterKind, data: Vec<f32>) -> Result<Self> {
        let expected = N_FILTERS * FRAMES * CHANNELS;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "spectrogram tensor needs {expected} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("spectrogram tensor has non-finite entries".into()));
        }
        Ok(Self { kind, data })
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, bin: usize, frame: usize, channel: usize) -> f32 {
        self.data[(bin * FRAMES + frame) * CHANNELS + channel]
    }
}

fn fit_frames(m: &Matrix) -> Matrix {
    let f = m.cols();
    if f >= FRAMES {
        let lead = (f - FRAMES) / 2;
        Matrix::from_fn(m.rows(), FRAMES, |r, c| m.get(r, c + lead))
    } else {
        let lead = (FRAMES - f) / 2;
        Matrix::from_fn(m.rows(), FRAMES, |r, c| {
            m.get(r, c.saturating_sub(lead).min(f - 1))
        })
    }
}

/// Builds the 6-channel tensor from the two static (log band) matrices.
///
/// Deltas are taken on the full frame range; the result is then centre-cropped
/// or edge-padded to exactly 704 frames.
pub fn assemble_tensor(kind: FilterKind, ch0: &Matrix, ch1: &Matrix) -> Result<SpectrogramTensor> {
    if ch0.rows() != ch1.rows() || ch0.cols() != ch1.cols() {
        return Err(Error::Shape(format!(
            "channel shapes differ: {}x{} vs {}x{}",
            ch0.rows(),
            ch0.cols(),
            ch1.rows(),
            ch1.cols()
        )));
    }
    if ch0.rows() != N_FILTERS {
        return Err(Error::Shape(format!(
            "expected {N_FILTERS} bins, got {}",
            ch0.rows()
        )));
    }
    let mut planes = Vec::with_capacity(CHANNELS);
    for ch in [ch0, ch1] {
        planes.push(fit_frames(ch));
        planes.push(fit_frames(&delta(ch, 1)?));
        planes.push(fit_frames(&delta(ch, 2)?));
    }
    let mut data = vec![0f32; N_FILTERS * FRAMES * CHANNELS];
    for (c, plane) in planes.iter().enumerate() {
        for (i, v) in plane.data().iter().enumerate() {
            data[i * CHANNELS + c] = *v as f32;
        }
    }
    SpectrogramTensor::from_vec(kind, data)
}

/// Log band energies of one channel.
fn static_bands(samples: &[f32], spec: &FilterbankSpec, bank: &Filterbank) -> Result<Matrix> {
    let power = stft_power(samples, spec)?;
    log_compress(&bank.apply(&power)?)
}

/// Full front-end for one clip and one filterbank kind.
pub fn extract(clip: &AudioClip, kind: FilterKind) -> Result<SpectrogramTensor> {
    let spec = FilterbankSpec::new(kind, clip.sample_rate());
    let bank = Filterbank::new(&spec)?;
    let left = static_bands(clip.channel(0), &spec, &bank)?;
    let right = static_bands(clip.channel(1), &spec, &bank)?;
    assemble_tensor(kind, &left, &right)
}

/// Ten 128-frame patches with a 64-frame hop.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub patches: Vec<Vec<f32>>,
    pub starts: Vec<usize>,
}

impl PatchSet {
    /// Values per patch (128 × 128 × 6).
    pub const PATCH_LEN: usize = N_FILTERS * PATCH_FRAMES * CHANNELS;

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Patch start offsets for `frames` frames.
pub fn patch_starts(frames: usize, width: usize, hop: usize) -> Vec<usize> {
    if frames < width {
        return Vec::new();
    }
    (0..=(frames - width) / hop).map(|i| i * hop).collect()
}

pub fn split_patches(t: &SpectrogramTensor) -> PatchSet {
    let starts = patch_starts(FRAMES, PATCH_FRAMES, PATCH_HOP);
    let patches = starts
        .iter()
        .map(|&start| {
            let mut p = Vec::with_capacity(PatchSet::PATCH_LEN);
            for bin in 0..N_FILTERS {
                let row = (bin * FRAMES + start) * CHANNELS;
                p.extend_from_slice(&t.data[row..row + PATCH_FRAMES * CHANNELS]);
            }
            p
        })
        .collect();
    PatchSet { patches, starts }
}

/// Averages non-overlapping `factor`×`factor` blocks of an H×W×C block.
pub fn downsample(block: &[f32], h: usize, w: usize, c: usize, factor: usize) -> Result<Vec<f32>> {
    if factor == 0 || h % factor != 0 || w % factor != 0 || block.len() != h * w * c {
        return Err(Error::Shape(format!(
            "cannot pool {h}x{w}x{c} ({} values) by {factor}",
            block.len()
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = vec![0f32; oh * ow * c];
    for y in 0..h {
        for x in 0..w {
            let src = (y * w + x) * c;
            let dst = ((y / factor) * ow + x / factor) * c;
            for ch in 0..c {
                out[dst + ch] += block[src + ch];
            }
        }
    }
    let scale = 1.0 / (factor * factor) as f32;
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

/// Per-channel mean and standard deviation over a training split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

impl ChannelStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; CHANNELS],
            std: [1.0; CHANNELS],
        }
    }

    /// Moments of channel-interleaved data (`…, CHANNELS` last axis).
    pub fn from_interleaved<'a>(blocks: impl IntoIterator<Item = &'a [f32]>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum = [0f64; CHANNELS];
        let mut sq = [0f64; CHANNELS];
        for block in blocks {
            if block.len() % CHANNELS != 0 {
                return Err(Error::Shape("block not a multiple of 6 channels".into()));
            }
            for px in block.chunks_exact(CHANNELS) {
                for c in 0..CHANNELS {
                    let v = px[c] as f64;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            count += block.len() / CHANNELS;
        }
        if count == 0 {
            return Err(Error::Data("no data for channel statistics".into()));
        }
        let n = count as f64;
        let mut stats = Self::identity();
        for c in 0..CHANNELS {
            let mean = sum[c] / n;
            stats.mean[c] = mean;
            stats.std[c] = (sq[c] / n - mean * mean).max(0.0).sqrt();
        }
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        for (c, s) in self.std.iter().enumerate() {
            if !(*s > 1e-12) || !s.is_finite() {
                return Err(Error::DegenerateChannel(format!(
                    "channel {c} has standard deviation {s}"
                )));
            }
        }
        Ok(())
    }

    /// Normalizes one channel-interleaved block in place.
    pub fn apply(&self, block: &mut [f32]) -> Result<()> {
        self.validate()?;
        for px in block.chunks_exact_mut(CHANNELS) {
            for c in 0..CHANNELS {
                px[c] = ((px[c] as f64 - self.mean[c]) / self.std[c]) as f32;
            }
        }
        Ok(())
    }

    pub fn normalize(&self, patches: &PatchSet) -> Result<PatchSet> {
        self.validate()?;
        let mut out = patches.clone();
        for p in &mut out.patches {
            self.apply(p)?;
        }
        Ok(out)
    }
}

pub fn write_feature_file<W: Write>(t: &SpectrogramTensor, mut w: W) -> Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&[t.kind.code()])?;
    for d in SpectrogramTensor::DIMS {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut payload = Vec::with_capacity(t.data.len() * 4);
    for v in &t.data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_feature_file<R: Read>(mut r: R) -> Result<SpectrogramTensor> {
    let mut magic = [0u8; 6];
    read_exact(&mut r, &mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::Format("not a feature file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!("unsupported feature file version {version}")));
    }
    let mut kind = [0u8; 1];
    read_exact(&mut r, &mut kind)?;
    let kind = FilterKind::from_code(kind[0])
        .ok_or_else(|| Error::Format(format!("unknown filterbank code {}", kind[0])))?;
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = read_u32(&mut r)? as usize;
    }
    if dims != SpectrogramTensor::DIMS {
        return Err(Error::Shape(format!("feature dims {dims:?}, expected 128x704x6")));
    }
    let mut payload = vec![0u8; dims.iter().product::<usize>() * 4];
    read_exact(&mut r, &mut payload)?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    SpectrogramTensor::from_vec(kind, data)
}

pub fn save_feature_file(t: &SpectrogramTensor, path: impl AsRef<Path>) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_feature_file(t, f)
}

pub fn load_feature_file(path: impl AsRef<Path>) -> Result<SpectrogramTensor> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_feature_file(f)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Corruption("truncated file".into()),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}
