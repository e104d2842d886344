use std::fmt;
use std::str::FromStr;

use super::Matrix;
use crate::error::{Error, Result};

pub const N_FILTERS: usize = 128;
pub const WINDOW_SECS: f64 = 0.080;
pub const HOP_SECS: f64 = 0.014;

const CQT_FMIN: f64 = 32.7;
const CQT_BINS_PER_OCTAVE: f64 = 16.0;
const GAM_FMIN: f64 = 50.0;
const GAMMATONE_ORDER: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    Mel,
    Gammatone,
    ConstantQ,
}

impl FilterKind {
    pub const ALL: [FilterKind; 3] = [FilterKind::Mel, FilterKind::Gammatone, FilterKind::ConstantQ];

    /// Byte tag used in feature files.
    pub fn code(self) -> u8 {
        match self {
            FilterKind::Mel => 0,
            FilterKind::Gammatone => 1,
            FilterKind::ConstantQ => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::Mel => "mel",
            FilterKind::Gammatone => "gam",
            FilterKind::ConstantQ => "cqt",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mel" => Ok(FilterKind::Mel),
            "gam" | "gammatone" => Ok(FilterKind::Gammatone),
            "cqt" => Ok(FilterKind::ConstantQ),
            other => Err(Error::Spec(format!("unknown filterbank kind {other:?}"))),
        }
    }
}

/// Analysis parameters shared by all three spectrogram kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterbankSpec {
    pub kind: FilterKind,
    pub n_filters: usize,
    pub window_secs: f64,
    pub hop_secs: f64,
    pub fmin: f64,
    pub fmax: f64,
    pub sample_rate: u32,
}

impl FilterbankSpec {
    /// Default parameters for `kind` at `sample_rate`.
    pub fn new(kind: FilterKind, sample_rate: u32) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let fmin = match kind {
            FilterKind::Mel => 0.0,
            FilterKind::Gammatone => GAM_FMIN,
            FilterKind::ConstantQ => CQT_FMIN,
        };
        Self {
            kind,
            n_filters: N_FILTERS,
            window_secs: WINDOW_SECS,
            hop_secs: HOP_SECS,
            fmin,
            fmax: nyquist,
            sample_rate,
        }
    }

    pub fn window_samples(&self) -> usize {
        (self.window_secs * self.sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_secs * self.sample_rate as f64).round() as usize
    }

    /// Number of FFT bins in the power spectrogram this spec consumes.
    pub fn fft_bins(&self) -> usize {
        self.window_samples() / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_filters != N_FILTERS {
            return Err(Error::Spec(format!(
                "n_filters must be {N_FILTERS}, got {}",
                self.n_filters
            )));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        // The mel bank starts at DC; the other two need a positive lower edge.
        let fmin_ok = match self.kind {
            FilterKind::Mel => self.fmin >= 0.0,
            _ => self.fmin > 0.0,
        };
        if !(fmin_ok && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(Error::Spec(format!(
                "frequency range [{}, {}] invalid for Nyquist {nyquist}",
                self.fmin, self.fmax
            )));
        }
        if !(self.window_secs > self.hop_secs && self.hop_secs > 0.0) {
            return Err(Error::Spec("require window > hop > 0".into()));
        }
        if self.hop_samples() == 0 {
            return Err(Error::Spec("hop rounds to zero samples".into()));
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Equivalent rectangular bandwidth (Glasberg & Moore) in Hz.
pub fn erb(hz: f64) -> f64 {
    24.7 * (4.37 * hz / 1000.0 + 1.0)
}

pub fn hz_to_erb_rate(hz: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * hz).log10()
}

pub fn erb_rate_to_hz(rate: f64) -> f64 {
    (10f64.powf(rate / 21.4) - 1.0) / 0.00437
}

#[derive(Debug, Clone)]
struct Band {
    start: usize,
    weights: Vec<f64>,
}

/// A bank of non-negative spectral weightings, one row per output band.
#[derive(Debug, Clone)]
pub struct Filterbank {
    bands: Vec<Band>,
    centers: Vec<f64>,
    fft_bins: usize,
}

impl Filterbank {
    pub fn new(spec: &FilterbankSpec) -> Result<Self> {
        spec.validate()?;
        let fft_bins = spec.fft_bins();
        let bin_hz = spec.sample_rate as f64 / spec.window_samples() as f64;
        let freqs: Vec<f64> = (0..fft_bins).map(|b| b as f64 * bin_hz).collect();
        let (centers, dense) = match spec.kind {
            FilterKind::Mel => mel_bank(spec, &freqs),
            FilterKind::Gammatone => gammatone_bank(spec, &freqs),
            FilterKind::ConstantQ => constant_q_bank(spec, &freqs, bin_hz),
        };
        let bands = dense.into_iter().map(compact).collect();
        Ok(Self {
            bands,
            centers,
            fft_bins,
        })
    }

    /// Centre frequency of each band in Hz.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Weight of FFT bin `bin` in band `band`.
    pub fn weight(&self, band: usize, bin: usize) -> f64 {
        let b = &self.bands[band];
        if bin < b.start {
            return 0.0;
        }
        b.weights.get(bin - b.start).copied().unwrap_or(0.0)
    }

    /// Projects a power spectrogram onto the bands.
    pub fn apply(&self, power: &Matrix) -> Result<Matrix> {
        if power.rows() != self.fft_bins {
            return Err(Error::Shape(format!(
                "power spectrogram has {} bins, filterbank expects {}",
                power.rows(),
                self.fft_bins
            )));
        }
        let frames = power.cols();
        let mut out = Matrix::zeros(self.bands.len(), frames);
        for (row, band) in self.bands.iter().enumerate() {
            let dst = out.row_mut(row);
            for (offset, w) in band.weights.iter().enumerate() {
                let src = power.row(band.start + offset);
                for (d, p) in dst.iter_mut().zip(src) {
                    *d += w * p;
                }
            }
        }
        Ok(out)
    }
}

fn compact(dense: Vec<f64>) -> Band {
    let first = dense.iter().position(|&w| w > 0.0);
    match first {
        None => Band {
            start: 0,
            weights: Vec::new(),
        },
        Some(start) => {
            let end = dense.iter().rposition(|&w| w > 0.0).unwrap() + 1;
            Band {
                start,
                weights: dense[start..end].to_vec(),
            }
        }
    }
}

/// Triangular filters with edges evenly spaced on the mel scale.
fn mel_bank(spec: &FilterbankSpec, freqs: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = spec.n_filters;
    let (lo, hi) = (hz_to_mel(spec.fmin), hz_to_mel(spec.fmax));
    let edges: Vec<f64> = (0..n + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n + 1) as f64))
        .collect();
    let bank = (0..n)
        .map(|i| {
            let (left, center, right) = (edges[i], edges[i + 1], edges[i + 2]);
            freqs
                .iter()
                .map(|&f| {
                    let up = (f - left) / (center - left);
                    let down = (right - f) / (right - center);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect();
    (edges[1..=n].to_vec(), bank)
}

/// Power responses of 4th-order gammatone filters at ERB-spaced centres.
fn gammatone_bank(spec: &FilterbankSpec, freqs: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = spec.n_filters;
    let (lo, hi) = (hz_to_erb_rate(spec.fmin), hz_to_erb_rate(spec.fmax));
    let centers: Vec<f64> = (0..n)
        .map(|i| erb_rate_to_hz(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect();
    let bank = centers
        .iter()
        .map(|&fc| {
            let b = 1.019 * erb(fc);
            freqs
                .iter()
                .map(|&f| {
                    let x = (f - fc) / b;
                    // |H|^2 of an order-n gammatone: (1 + x^2)^(-n)
                    let w = (1.0 + x * x).powi(-GAMMATONE_ORDER);
                    if w < 1e-6 {
                        0.0
                    } else {
                        w
                    }
                })
                .collect()
        })
        .collect();
    (centers, bank)
}

/// Geometrically spaced constant-Q bandpass weights on the STFT grid.
///
/// Bandwidths narrower than one FFT bin are widened to one bin so every band
/// sees at least its nearest bin.
fn constant_q_bank(spec: &FilterbankSpec, freqs: &[f64], bin_hz: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = spec.n_filters;
    let q = 1.0 / (2f64.powf(1.0 / CQT_BINS_PER_OCTAVE) - 1.0);
    let centers: Vec<f64> = (0..n)
        .map(|i| spec.fmin * 2f64.powf(i as f64 / CQT_BINS_PER_OCTAVE))
        .collect();
    let bank = centers
        .iter()
        .map(|&fc| {
            let sigma = (fc / q).max(bin_hz) / 2.0;
            freqs
                .iter()
                .map(|&f| {
                    let z = (f - fc) / sigma;
                    if z.abs() > 3.0 {
                        0.0
                    } else {
                        (-0.5 * z * z).exp()
                    }
                })
                .collect()
        })
        .collect();
    (centers, bank)
}

/// Convenience wrapper: builds the bank described by `spec` and applies it.
pub fn apply_filterbank(power: &Matrix, spec: &FilterbankSpec) -> Result<Matrix> {
    Filterbank::new(spec)?.apply(power)
}
