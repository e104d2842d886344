use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use scenefuse_core::audio::{
    downsample, extract, load_feature_file, load_wav, save_feature_file, split_patches, ChannelStats,
    FilterKind, CHANNELS, N_FILTERS, PATCH_FRAMES,
};
use scenefuse_core::embedding::{load_embeddings, EmbeddingSet};
use scenefuse_core::fusion::io::{
    read_patch_probabilities, read_probabilities, write_confusion, write_early_curve,
    write_patch_probabilities, write_probabilities, PatchTable,
};
use scenefuse_core::fusion::{
    accuracy, early_detection_curve, fuse, mean_over_patches, EvaluationResult, FrameworkProbabilities,
    Strategy,
};
use scenefuse_core::labels::{to_meta, META_NAMES};
use scenefuse_core::nn::{predict_proba, train_with, Dataset, Tensor, TrainingConfig};
use scenefuse_core::zoo::{
    build_mlp, build_vgg14, load_checkpoint, parse_scale, save_checkpoint, Family, Normalization,
    SCENE_CLASSES,
};

use crate::manifest::{Entry, Manifest, Split};
use crate::snapshot::{beside, Snapshot};

/// Whether a command finished cleanly or recorded per-item failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failures,
}

pub fn feature_path(dir: &Path, kind: FilterKind, id: &str) -> PathBuf {
    dir.join(kind.as_str()).join(format!("{id}.sften"))
}

fn up_to_date(input: &Path, output: &Path) -> bool {
    let modified = |p: &Path| fs::metadata(p).and_then(|m| m.modified()).ok();
    match (modified(input), modified(output)) {
        (Some(i), Some(o)) => o >= i,
        _ => false,
    }
}

// ---------------------------------------------------------------------------

pub struct ExtractArgs {
    pub manifest: PathBuf,
    pub kind: FilterKind,
    pub out: PathBuf,
    pub jobs: usize,
}

pub fn cmd_extract(args: &ExtractArgs) -> Result<Outcome> {
    let manifest = Manifest::load(&args.manifest)?;
    let dir = args.out.join(args.kind.as_str());
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;

    let next = AtomicUsize::new(0);
    let written = AtomicUsize::new(0);
    let skipped = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    let work = |entry: &Entry| -> Result<bool> {
        let out = feature_path(&args.out, args.kind, &entry.id());
        if up_to_date(&entry.resolved, &out) {
            return Ok(false);
        }
        let clip = load_wav(&entry.resolved)?;
        let tensor = extract(&clip, args.kind)?;
        // write to a temporary name so an interrupted run leaves no partial file
        let tmp = out.with_extension("sften.tmp");
        save_feature_file(&tensor, &tmp)?;
        fs::rename(&tmp, &out)?;
        Ok(true)
    };
    std::thread::scope(|scope| {
        for _ in 0..args.jobs.max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(entry) = manifest.entries.get(i) else {
                    break;
                };
                match work(entry) {
                    Ok(true) => {
                        written.fetch_add(1, Ordering::Relaxed);
                    }
                    Ok(false) => {
                        skipped.fetch_add(1, Ordering::Relaxed);
                    }
                    Err(e) => failures.lock().unwrap().push((i, format!("{}: {e:#}", entry.path))),
                }
            });
        }
    });
    let mut failures = failures.into_inner().unwrap();
    failures.sort();
    for (_, msg) in &failures {
        eprintln!("failed: {msg}");
    }
    let mut snap = Snapshot::new("extract");
    snap.set("manifest", args.manifest.display())
        .set("kind", args.kind)
        .set("out", args.out.display())
        .set("jobs", args.jobs);
    snap.write(&args.out.join(format!("extract_{}_config.txt", args.kind)))?;
    println!(
        "extracted={} up_to_date={} failed={}",
        written.load(Ordering::Relaxed),
        skipped.load(Ordering::Relaxed),
        failures.len()
    );
    Ok(if failures.is_empty() {
        Outcome::Success
    } else {
        Outcome::Failures
    })
}

// ---------------------------------------------------------------------------

pub struct TrainArgs {
    pub manifest: PathBuf,
    pub features: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub kind: FilterKind,
    pub arch: Family,
    pub scale: String,
    pub input_size: Option<usize>,
    pub config: TrainingConfig,
    pub out: PathBuf,
}

/// Side of the square network input: full patches at full width, 4×4
/// average-pooled patches for the narrower variants.
pub fn default_input_size(scale: f64) -> usize {
    if scale == 1.0 {
        PATCH_FRAMES
    } else {
        PATCH_FRAMES / 4
    }
}

/// Pooled, un-normalized network inputs for one clip's ten patches.
fn clip_patches(
    features: &Path,
    kind: FilterKind,
    manifest: &Path,
    entry: &Entry,
    side: usize,
) -> Result<Vec<Vec<f32>>> {
    let path = feature_path(features, kind, &entry.id());
    if !path.exists() {
        bail!(
            "missing {kind} features for {} ({}); run `scenefuse extract --manifest {} --kind {kind} --out {}` first",
            entry.path,
            path.display(),
            manifest.display(),
            features.display()
        );
    }
    let tensor = load_feature_file(&path).with_context(|| format!("reading {}", path.display()))?;
    if tensor.kind() != kind {
        bail!("{} holds {} features, expected {kind}", path.display(), tensor.kind());
    }
    if side == 0 || PATCH_FRAMES % side != 0 {
        bail!("input size {side} does not divide the {PATCH_FRAMES}-frame patch");
    }
    let factor = PATCH_FRAMES / side;
    split_patches(&tensor)
        .patches
        .iter()
        .map(|p| Ok(downsample(p, N_FILTERS, PATCH_FRAMES, CHANNELS, factor)?))
        .collect()
}

fn embedding_rows<'a>(set: &'a EmbeddingSet, entries: &[&Entry]) -> Result<Vec<&'a [f32]>> {
    let index: std::collections::HashMap<&str, &[f32]> =
        set.rows().iter().map(|r| (r.id.as_str(), r.vector.as_slice())).collect();
    entries
        .iter()
        .map(|e| {
            index
                .get(e.id().as_str())
                .copied()
                .ok_or_else(|| anyhow!("no embedding row for clip {}", e.id()))
        })
        .collect()
}

pub fn cmd_train(args: &TrainArgs) -> Result<Outcome> {
    let manifest = Manifest::load(&args.manifest)?;
    let train = manifest.split(Split::Train);
    if train.is_empty() || manifest.split(Split::Eval).is_empty() {
        bail!("training runs need non-empty train and eval splits");
    }
    let scale = parse_scale(&args.scale)?;
    args.config.validate()?;
    fs::create_dir_all(&args.out)?;

    let mut snap = Snapshot::new("train");
    snap.set("manifest", args.manifest.display()).set("arch", args.arch).set("scale", scale);

    let (arch, norm, data) = match args.arch {
        Family::Vgg14 => {
            let features = args
                .features
                .as_ref()
                .ok_or_else(|| anyhow!("vgg14 training needs --features"))?;
            let side = args.input_size.unwrap_or_else(|| default_input_size(scale));
            let arch = build_vgg14(&[side, side, CHANNELS], SCENE_CLASSES, scale)?;
            let mut inputs = Vec::new();
            for entry in &train {
                for p in clip_patches(features, args.kind, &args.manifest, entry, side)? {
                    inputs.push((p, entry.label));
                }
            }
            let stats = ChannelStats::from_interleaved(inputs.iter().map(|(p, _)| p.as_slice()))?;
            stats.validate()?;
            let norm = Normalization::from(&stats);
            let mut data = Dataset::new(&arch.input_dims, SCENE_CLASSES);
            for (mut p, label) in inputs {
                norm.apply(&mut p)?;
                data.push_class(&p, label)?;
            }
            snap.set("features", features.display())
                .set("kind", args.kind)
                .set("input_size", side);
            (arch, norm, data)
        }
        Family::Mlp => {
            let path = args
                .embeddings
                .as_ref()
                .ok_or_else(|| anyhow!("mlp training needs --embeddings"))?;
            let set = load_embeddings(path).with_context(|| format!("reading {}", path.display()))?;
            let arch = build_mlp(set.dim(), SCENE_CLASSES, scale)?;
            let mut data = Dataset::new(&arch.input_dims, SCENE_CLASSES);
            for (row, entry) in embedding_rows(&set, &train)?.into_iter().zip(&train) {
                data.push_class(row, entry.label)?;
            }
            snap.set("embeddings", path.display()).set("source", set.source());
            (arch, Normalization::identity(set.dim()), data)
        }
    };

    let c = &args.config;
    snap.set("arch_id", arch.id())
        .set("epochs", c.epochs)
        .set("lr", c.lr)
        .set("l2", c.l2)
        .set("mixup_alpha", c.mixup_alpha.map_or("off".to_string(), |a| a.to_string()))
        .set("batch", c.batch_size)
        .set("seed", c.seed)
        .set("dropout", c.dropout)
        .set("out", args.out.display());
    snap.write(&args.out.join("run_config.txt"))?;

    let mut net = arch.build::<f32>(c.seed)?;
    log::info!("training {} on {} samples", arch.id(), data.len());
    let report = train_with(&mut net, &data, c, |epoch, loss| {
        log::info!("epoch {epoch}: loss {loss}");
    })?;

    let mut w = csv::Writer::from_path(args.out.join("loss.csv"))?;
    w.write_record(["epoch", "loss"])?;
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), loss.to_string()])?;
    }
    w.flush()?;
    save_checkpoint(args.out.join("model.sfckpt"), &arch, &net, &norm)?;
    println!(
        "trained {} for {} epochs: first loss {} final loss {}",
        arch.id(),
        report.epoch_losses.len(),
        report.epoch_losses[0],
        report.epoch_losses.last().unwrap()
    );
    Ok(Outcome::Success)
}

// ---------------------------------------------------------------------------

pub struct PredictArgs {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub split: Split,
    pub features: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub kind: FilterKind,
    pub out: PathBuf,
    pub per_patch: Option<PathBuf>,
    pub batch: usize,
}

pub fn cmd_predict(args: &PredictArgs) -> Result<Outcome> {
    let manifest = Manifest::load(&args.manifest)?;
    let entries = manifest.split(args.split);
    if entries.is_empty() {
        bail!("the {} split is empty", args.split);
    }
    let mut ck = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("reading {}", args.checkpoint.display()))?;
    let classes = ck.arch.classes;
    let mut clip_ids = Vec::new();
    let mut truth = Vec::new();
    let mut clip_probs = Vec::new();
    let mut patch_probs = Vec::new();

    match ck.arch.family {
        Family::Vgg14 => {
            let features = args
                .features
                .as_ref()
                .ok_or_else(|| anyhow!("vgg14 checkpoints need --features"))?;
            let side = ck.arch.input_dims[0];
            for entry in &entries {
                let patches = clip_patches(features, args.kind, &args.manifest, entry, side)?;
                let n = patches.len();
                let mut flat = Vec::with_capacity(n * patches[0].len());
                for mut p in patches {
                    ck.norm.apply(&mut p)?;
                    flat.extend(p);
                }
                let mut dims = vec![n];
                dims.extend(&ck.arch.input_dims);
                let x = Tensor::from_vec(&dims, flat)?;
                let per_patch = predict_proba(&mut ck.network, &x, args.batch)?;
                clip_probs.push(mean_over_patches(&per_patch)?.into_vec());
                patch_probs.push(per_patch);
                clip_ids.push(entry.id());
                truth.push(entry.label);
            }
        }
        Family::Mlp => {
            if args.per_patch.is_some() {
                bail!("per-patch output needs a spectrogram (vgg14) checkpoint");
            }
            let path = args
                .embeddings
                .as_ref()
                .ok_or_else(|| anyhow!("mlp checkpoints need --embeddings"))?;
            let set = load_embeddings(path)?;
            if [set.dim()] != ck.arch.input_dims.as_slice() {
                bail!(
                    "embedding dimension {} does not match the checkpoint input {:?}",
                    set.dim(),
                    ck.arch.input_dims
                );
            }
            let rows = embedding_rows(&set, &entries)?;
            let mut flat = Vec::with_capacity(rows.len() * set.dim());
            for r in &rows {
                let mut v = r.to_vec();
                ck.norm.apply(&mut v)?;
                flat.extend(v);
            }
            let x = Tensor::from_vec(&[rows.len(), set.dim()], flat)?;
            clip_probs = predict_proba(&mut ck.network, &x, args.batch)?;
            for entry in &entries {
                clip_ids.push(entry.id());
                truth.push(entry.label);
            }
        }
    }

    if let Some(parent) = args.out.parent() {
        fs::create_dir_all(parent).ok();
    }
    write_probabilities(fs::File::create(&args.out)?, &clip_ids, &truth, &clip_probs)?;
    if let Some(pp) = &args.per_patch {
        let table = PatchTable {
            clip_ids: clip_ids.clone(),
            truth: truth.clone(),
            probs: patch_probs,
        };
        write_patch_probabilities(fs::File::create(pp)?, &table)?;
    }
    let preds = clip_probs
        .iter()
        .map(|p| scenefuse_core::fusion::argmax_label(p))
        .collect::<scenefuse_core::Result<Vec<_>>>()?;
    let result = accuracy(&preds, &truth, classes)?;

    let mut snap = Snapshot::new("predict");
    snap.set("checkpoint", args.checkpoint.display())
        .set("arch_id", ck.arch.id())
        .set("manifest", args.manifest.display())
        .set("split", args.split)
        .set("kind", args.kind)
        .set("out", args.out.display());
    snap.write(&beside(&args.out))?;
    println!("clips={} accuracy={}", clip_ids.len(), result.accuracy);
    Ok(Outcome::Success)
}

// ---------------------------------------------------------------------------

fn framework_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn load_frameworks(inputs: &[PathBuf]) -> Result<FrameworkProbabilities> {
    if inputs.is_empty() {
        bail!("at least one probability file is required");
    }
    let tables = inputs
        .iter()
        .map(|p| {
            let f = fs::File::open(p).with_context(|| format!("cannot open {}", p.display()))?;
            read_probabilities(f, &framework_name(p)).with_context(|| format!("reading {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameworkProbabilities::new(tables)?)
}

fn report(result: &EvaluationResult, truth: &[usize], preds: &[usize], meta: bool) -> Result<()> {
    println!(
        "correct={} total={} accuracy={}",
        result.correct, result.total, result.accuracy
    );
    if meta {
        let m = accuracy(&to_meta(preds)?, &to_meta(truth)?, META_NAMES.len())?;
        println!("meta_accuracy={}", m.accuracy);
    }
    Ok(())
}

pub struct FuseArgs {
    pub inputs: Vec<PathBuf>,
    pub strategy: Strategy,
    pub out: PathBuf,
    pub confusion: Option<PathBuf>,
    pub meta: bool,
}

pub fn cmd_fuse(args: &FuseArgs) -> Result<Outcome> {
    let p = load_frameworks(&args.inputs)?;
    let fused = fuse(&p, args.strategy)?;
    let result = accuracy(&fused.labels, p.truth(), p.classes())?;
    // PROD and MAX scores are rescaled to sum to one so the output can be
    // fed back into fusion; labels are unaffected
    write_probabilities(
        fs::File::create(&args.out)?,
        p.clip_ids(),
        p.truth(),
        &fused.normalized_scores(),
    )?;
    if let Some(c) = &args.confusion {
        write_confusion(fs::File::create(c)?, &result)?;
    }
    let mut snap = Snapshot::new("fuse");
    snap.set("inputs", args.inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(";"))
        .set("strategy", args.strategy)
        .set("out", args.out.display());
    snap.write(&beside(&args.out))?;
    println!("strategy={} frameworks={}", args.strategy, p.len());
    report(&result, p.truth(), &fused.labels, args.meta)?;
    Ok(Outcome::Success)
}

pub struct EvalArgs {
    pub input: PathBuf,
    pub confusion: Option<PathBuf>,
    pub meta: bool,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<Outcome> {
    let p = load_frameworks(std::slice::from_ref(&args.input))?;
    let preds = p
        .framework(0)
        .iter()
        .map(|row| scenefuse_core::fusion::argmax_label(row))
        .collect::<scenefuse_core::Result<Vec<_>>>()?;
    let result = accuracy(&preds, p.truth(), p.classes())?;
    if let Some(c) = &args.confusion {
        write_confusion(fs::File::create(c)?, &result)?;
        let mut snap = Snapshot::new("eval");
        snap.set("input", args.input.display()).set("confusion", c.display());
        snap.write(&beside(c))?;
    }
    report(&result, p.truth(), &preds, args.meta)?;
    Ok(Outcome::Success)
}

pub struct EarlyArgs {
    pub input: PathBuf,
    pub out: PathBuf,
}

pub fn cmd_early(args: &EarlyArgs) -> Result<Outcome> {
    let f = fs::File::open(&args.input).with_context(|| format!("cannot open {}", args.input.display()))?;
    let table = read_patch_probabilities(f)?;
    let classes = table
        .probs
        .first()
        .and_then(|c| c.first())
        .map(|r| r.len())
        .ok_or_else(|| anyhow!("{} has no rows", args.input.display()))?;
    let curve = early_detection_curve(&table.probs, &table.truth, classes)?;
    write_early_curve(fs::File::create(&args.out)?, &curve)?;
    let mut snap = Snapshot::new("early");
    snap.set("input", args.input.display()).set("out", args.out.display());
    snap.write(&beside(&args.out))?;
    for (k, acc) in curve.accuracies.iter().enumerate() {
        println!("k={} accuracy={acc}", k + 1);
    }
    Ok(Outcome::Success)
}
