//! Stereo WAV → 6-channel spectrogram tensors → half-overlapping patches.

pub mod features;
pub mod filterbank;
pub mod stft;
pub mod wav;

pub use features::{
    assemble_tensor, delta, downsample, extract, log_compress, read_feature_file, split_patches,
    load_feature_file, save_feature_file,
    write_feature_file, ChannelStats, PatchSet, SpectrogramTensor, CHANNELS, FRAMES, PATCHES,
    PATCH_FRAMES, PATCH_HOP,
};
pub use filterbank::{apply_filterbank, FilterKind, Filterbank, FilterbankSpec, N_FILTERS};
pub use stft::stft_power;
pub use wav::{load_wav, save_wav, AudioClip, DEFAULT_SAMPLE_RATE};

/// Dense row-major matrix used by the front-end.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}
