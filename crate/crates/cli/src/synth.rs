//! Synthetic desk-scale dataset: class-tagged stereo WAVs, Gaussian
//! embeddings and a manifest.
//!
//! Class k is a tone at 300·2^(k/2) Hz with a second partial, amplitude
//! modulated at a class-specific rate and buried in white noise. Per clip the
//! pitch, level, modulation phase, noise level and stereo balance vary.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenefuse_core::audio::{save_wav, AudioClip};
use scenefuse_core::embedding::{save_embeddings, synth_labeled};
use scenefuse_core::labels::{class_name, SCENE_NAMES};

use crate::manifest::{Entry, Manifest, Split};

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub classes: usize,
    pub train_per_class: usize,
    pub eval_per_class: usize,
    pub seed: u64,
    pub sample_rate: u32,
    pub duration: f64,
    pub emb_source: String,
    pub emb_dim: usize,
    pub emb_spread: f64,
    pub audio: bool,
}

pub struct SynthOutput {
    pub manifest: PathBuf,
    pub embeddings: PathBuf,
    pub clips: usize,
}

pub fn class_tone(class: usize) -> f64 {
    300.0 * 2f64.powf(class as f64 / 2.0)
}

fn clip_audio(class: usize, opts: &SynthOptions, rng: &mut ChaCha8Rng) -> Result<AudioClip> {
    let sr = opts.sample_rate as f64;
    let n = (opts.duration * sr).round() as usize;
    let f0 = class_tone(class) * (1.0 + rng.gen_range(-0.02..0.02));
    let amp = rng.gen_range(0.15..0.3);
    let partial = if 2.0 * f0 < 0.45 * sr { 0.5 } else { 0.0 };
    let am_rate = 0.5 + 0.3 * class as f64;
    let am_phase = rng.gen_range(0.0..TAU);
    let phase = rng.gen_range(0.0..TAU);
    let noise = rng.gen_range(0.02..0.06);
    let balance = rng.gen_range(0.8..1.0);
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let env = (1.0 + 0.5 * (TAU * am_rate * t + am_phase).sin()) / 1.5;
        let tone = amp
            * env
            * ((TAU * f0 * t + phase).sin() + partial * (TAU * 2.0 * f0 * t + 2.0 * phase).sin());
        let l = tone + noise * rng.gen_range(-1.0..1.0);
        let r = balance * tone + noise * rng.gen_range(-1.0..1.0);
        left.push(l.clamp(-1.0, 1.0) as f32);
        right.push(r.clamp(-1.0, 1.0) as f32);
    }
    Ok(AudioClip::new(left, right, opts.sample_rate)?)
}

pub fn synthesize(out: &Path, opts: &SynthOptions) -> Result<SynthOutput> {
    if opts.classes == 0 || opts.classes > SCENE_NAMES.len() {
        bail!("--classes must lie in 1..={}", SCENE_NAMES.len());
    }
    if opts.train_per_class == 0 || opts.eval_per_class == 0 {
        bail!("both splits need at least one clip per class");
    }
    let audio_dir = out.join("audio");
    fs::create_dir_all(&audio_dir)
        .with_context(|| format!("cannot create {}", audio_dir.display()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut entries = Vec::new();
    for (split, per_class) in [(Split::Train, opts.train_per_class), (Split::Eval, opts.eval_per_class)] {
        for class in 0..opts.classes {
            for n in 0..per_class {
                let rel = format!("audio/{}_{split}_{n:03}.wav", class_name(class)?);
                let clip_seed: u64 = rng.gen();
                if opts.audio {
                    let clip = clip_audio(class, opts, &mut ChaCha8Rng::seed_from_u64(clip_seed))?;
                    save_wav(&clip, out.join(&rel))
                        .with_context(|| format!("cannot write {rel}"))?;
                }
                entries.push(Entry {
                    resolved: out.join(&rel),
                    path: rel,
                    label: class,
                    split,
                });
            }
        }
    }
    let manifest = Manifest { entries };
    let manifest_path = out.join("manifest.csv");
    manifest.write(&manifest_path)?;

    let rows: Vec<(String, usize)> = manifest.entries.iter().map(|e| (e.id(), e.label)).collect();
    let set = synth_labeled(
        &opts.emb_source,
        opts.emb_dim,
        opts.classes,
        &rows,
        opts.emb_spread,
        rng.gen(),
    )?;
    let embeddings = out.join("embeddings.sfemb");
    save_embeddings(&set, &embeddings)?;
    Ok(SynthOutput {
        manifest: manifest_path,
        embeddings,
        clips: manifest.entries.len(),
    })
}
