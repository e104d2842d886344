use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::filterbank::FilterbankSpec;
use super::Matrix;
use crate::error::{Error, Result};

/// Periodic Hann window of `len` samples.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Number of frames produced without centering padding.
pub fn frame_count(samples: usize, window: usize, hop: usize) -> usize {
    if samples < window {
        0
    } else {
        (samples - window) / hop + 1
    }
}

/// Power spectrogram (`window/2 + 1` bins × frames) of one channel.
///
/// The FFT size equals the window length, so the bin spacing is
/// `1 / window_secs` Hz regardless of sample rate.
pub fn stft_power(samples: &[f32], spec: &FilterbankSpec) -> Result<Matrix> {
    let win = spec.window_samples();
    let hop = spec.hop_samples();
    if win == 0 || hop == 0 {
        return Err(Error::Spec("window and hop must be at least one sample".into()));
    }
    if samples.len() < win {
        return Err(Error::TooShort(format!(
            "{} samples is shorter than one {win}-sample window",
            samples.len()
        )));
    }
    let frames = frame_count(samples.len(), win, hop);
    let bins = win / 2 + 1;
    let window = hann_window(win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(win);
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(0.0, 0.0); win];
    let mut out = Matrix::zeros(bins, frames);
    for frame in 0..frames {
        let offset = frame * hop;
        for (slot, (s, w)) in buf
            .iter_mut()
            .zip(samples[offset..offset + win].iter().zip(&window))
        {
            *slot = Complex::new(*s as f64 * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (bin, c) in buf.iter().take(bins).enumerate() {
            out.set(bin, frame, c.norm_sqr());
        }
    }
    Ok(out)
}
