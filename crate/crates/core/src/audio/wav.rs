use std::io::{Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Sample rate of the recordings the pipeline was designed around.
pub const DEFAULT_SAMPLE_RATE: u32 = 48_000;

/// A two-channel clip with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    channels: [Vec<f32>; 2],
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(left: Vec<f32>, right: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if left.len() != right.len() {
            return Err(Error::Shape(format!(
                "channel lengths differ: {} vs {}",
                left.len(),
                right.len()
            )));
        }
        if left.is_empty() {
            return Err(Error::TooShort("clip has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Spec("sample rate must be positive".into()));
        }
        if left.iter().chain(right.iter()).any(|s| !s.is_finite()) {
            return Err(Error::Domain("clip contains non-finite samples".into()));
        }
        Ok(Self {
            channels: [left, right],
            sample_rate,
        })
    }

    /// Builds a stereo clip from a mono signal by duplicating it.
    pub fn from_mono(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        Self::new(samples.clone(), samples, sample_rate)
    }

    pub fn channel(&self, index: usize) -> &[f32] {
        &self.channels[index]
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }
}

fn map_hound(err: hound::Error) -> Error {
    match err {
        // hound reports short reads as `Other`
        hound::Error::IoError(e)
            if matches!(
                e.kind(),
                std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::Other
            ) =>
        {
            Error::Format(format!("truncated file: {e}"))
        }
        hound::Error::IoError(e) => Error::Io(e),
        hound::Error::FormatError(msg) => Error::Format(msg.to_string()),
        hound::Error::Unsupported => Error::UnsupportedCodec("unsupported wave encoding".into()),
        other => Error::Format(other.to_string()),
    }
}

/// Reads a RIFF/WAVE file (16-bit PCM or 32-bit float, mono or stereo).
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| match map_hound(e) {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    decode(reader)
}

/// Same as [`load_wav`] but from any seekable reader.
pub fn read_wav<R: Read>(reader: R) -> Result<AudioClip> {
    decode(WavReader::new(reader).map_err(map_hound)?)
}

fn decode<R: Read>(reader: WavReader<R>) -> Result<AudioClip> {
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels != 1 && channels != 2 {
        return Err(Error::UnsupportedCodec(format!(
            "{channels} channels (expected 1 or 2)"
        )));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v.clamp(-1.0, 1.0)))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (fmt, bits) => {
            return Err(Error::UnsupportedCodec(format!(
                "{bits}-bit {fmt:?} samples (expected 16-bit PCM or 32-bit float)"
            )))
        }
    };
    if interleaved.len() % channels != 0 {
        return Err(Error::Format("partial sample frame at end of data".into()));
    }
    if channels == 1 {
        AudioClip::from_mono(interleaved, spec.sample_rate)
    } else {
        let left = interleaved.iter().step_by(2).copied().collect();
        let right = interleaved.iter().skip(1).step_by(2).copied().collect();
        AudioClip::new(left, right, spec.sample_rate)
    }
}

/// Writes a clip as 16-bit stereo PCM.
pub fn write_wav<W: Write + Seek>(clip: &AudioClip, writer: W) -> Result<()> {
    let spec = WavSpec {
        channels: 2,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::new(writer, spec).map_err(map_hound)?;
    for (l, r) in clip.channel(0).iter().zip(clip.channel(1)) {
        w.write_sample(to_i16(*l)).map_err(map_hound)?;
        w.write_sample(to_i16(*r)).map_err(map_hound)?;
    }
    w.finalize().map_err(map_hound)
}

pub fn save_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_wav(clip, file)
}

fn to_i16(v: f32) -> i16 {
    (v.clamp(-1.0, 1.0) * 32767.0).round() as i16
}
