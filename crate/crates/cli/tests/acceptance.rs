//! End-to-end acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line reaches the terminal. The
//! process exits non-zero when any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Context as _, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenefuse_core::audio::{
    extract, load_wav, save_wav, split_patches, AudioClip, FilterKind, SpectrogramTensor, CHANNELS, FRAMES,
    N_FILTERS, PATCH_FRAMES,
};
use scenefuse_core::fusion::io::read_probabilities;
use scenefuse_core::fusion::{
    accuracy, early_detection_curve, fuse, fuse_scores, FrameworkProbabilities, FrameworkTable, Strategy,
};
use scenefuse_core::nn::gradcheck::{check_layer, check_loss};
use scenefuse_core::nn::{kl_loss, LayerSpec, Mode, Network, Tensor};
use scenefuse_core::zoo::{build_mlp, build_vgg14};

// pinned tolerances and budgets
const EXTRACT_BUDGET: Duration = Duration::from_secs(5);
const GRAD_TOL_F64: f64 = 1e-5;
const GRAD_TOL_F32: f64 = 1e-3;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const LOSS_TOL_SELF: f64 = 1e-9;
const LOSS_TOL_LN2: f64 = 1e-6;
const LOSS_TOL_L2: f64 = 1e-9;
const FUSION_TOL: f64 = 1e-12;
const TRIALS: usize = 1000;
const TOY_ACCURACY: f64 = 90.0;
const TOY_FUSION_MARGIN: f64 = 2.0;
const TOY_EPOCHS: usize = 6;
const TOY_BUDGET: Duration = Duration::from_secs(600);
const EMB_ACCURACY: f64 = 95.0;
const EMB_EPOCHS: usize = 20;
const EMB_BUDGET: Duration = Duration::from_secs(60);
// the toy problem converges within budget at this rate; the CLI default
// (1e-4) needs far more epochs
const TOY_LR: &str = "1e-3";

const TABLE1_OUTPUTS: [&[usize]; 14] = [
    &[128, 128, 64],
    &[64, 64, 64],
    &[64, 64, 128],
    &[32, 32, 128],
    &[32, 32, 256],
    &[32, 32, 256],
    &[32, 32, 256],
    &[16, 16, 256],
    &[16, 16, 512],
    &[16, 16, 512],
    &[16, 16, 512],
    &[512],
    &[1024],
    &[10],
];

fn cli(args: &[&str]) -> Result<String> {
    let out = Command::new(env!("CARGO_BIN_EXE_scenefuse"))
        .args(args)
        .output()
        .context("cannot launch scenefuse")?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    if !out.status.success() {
        bail!(
            "`scenefuse {}` exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        );
    }
    Ok(stdout)
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Value of `key=` in whitespace-separated CLI output.
fn field(output: &str, key: &str) -> Result<f64> {
    let prefix = format!("{key}=");
    output
        .split_whitespace()
        .find_map(|tok| tok.strip_prefix(&prefix))
        .ok_or_else(|| anyhow!("no {key} in output {output:?}"))?
        .parse()
        .map_err(|e| anyhow!("bad {key}: {e}"))
}

fn random_distribution(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(1e-3..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|v| v / sum).collect()
}

fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------

fn criterion_1(tmp: &Path) -> Result<String> {
    let sr = 48_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 10 * sr as usize;
    let left: Vec<f32> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let right: Vec<f32> = (0..n)
        .map(|i| 0.3 * (std::f32::consts::TAU * 440.0 * i as f32 / sr as f32).sin())
        .collect();
    let path = tmp.join("c1.wav");
    save_wav(&AudioClip::new(left, right, sr)?, &path)?;
    let mut slowest = Duration::ZERO;
    for kind in [FilterKind::Mel, FilterKind::Gammatone, FilterKind::ConstantQ] {
        let t0 = Instant::now();
        let tensor = extract(&load_wav(&path)?, kind)?;
        let took = t0.elapsed();
        slowest = slowest.max(took);
        ensure!(took < EXTRACT_BUDGET, "{kind}: {took:?} per clip");
        ensure!(SpectrogramTensor::DIMS == [128, 704, 6], "tensor dims {:?}", SpectrogramTensor::DIMS);
        ensure!(tensor.data().len() == 128 * 704 * 6, "{kind}: {} values", tensor.data().len());
        let set = split_patches(&tensor);
        ensure!(set.patches.len() == 10, "{kind}: {} patches", set.patches.len());
        ensure!(set.starts == (0..10).map(|i| 64 * i).collect::<Vec<_>>(), "starts {:?}", set.starts);
        for (patch, &start) in set.patches.iter().zip(&set.starts) {
            ensure!(patch.len() == 128 * 128 * 6, "{kind}: patch of {} values", patch.len());
            for (i, v) in patch.iter().enumerate() {
                let (b, f, c) = (i / (PATCH_FRAMES * CHANNELS), i / CHANNELS % PATCH_FRAMES, i % CHANNELS);
                ensure!(*v == tensor.get(b, start + f, c), "{kind}: patch at {start} differs at {i}");
            }
        }
    }
    Ok(format!(
        "{N_FILTERS}x{FRAMES}x{CHANNELS} tensors, 10 patches at 0..576 for mel/gam/cqt; slowest {:.2}s",
        slowest.as_secs_f64()
    ))
}

fn criterion_2() -> Result<String> {
    let vgg = build_vgg14(&[128, 128, 6], 10, 1.0)?;
    let outs = vgg.row_outputs()?;
    ensure!(outs.len() == TABLE1_OUTPUTS.len(), "{} rows", outs.len());
    for (i, (got, want)) in outs.iter().zip(TABLE1_OUTPUTS).enumerate() {
        ensure!(got.as_slice() == want, "row {}: {got:?} vs {want:?}", i + 1);
    }
    let convs = vgg.layers().iter().filter(|l| matches!(l, LayerSpec::Conv { .. })).count();
    let fcs = vgg.layers().iter().filter(|l| matches!(l, LayerSpec::Dense { .. })).count();
    ensure!((convs, fcs) == (12, 2), "{convs} conv, {fcs} fc");
    ensure!(vgg.weight_layer_count() == 14);
    for d in [512, 2048] {
        let mlp = build_mlp(d, 10, 1.0)?;
        let outs = mlp.row_outputs()?;
        let want: [&[usize]; 4] = [&[8192], &[8192], &[1024], &[10]];
        ensure!(outs.len() == 4 && outs.iter().zip(want).all(|(g, w)| g.as_slice() == w), "mlp d={d}: {outs:?}");
    }
    Ok("vgg14 14 rows, 12 conv + 2 fc; mlp 8192/8192/1024/10".into())
}

fn random_case(rng: &mut ChaCha8Rng) -> Vec<(LayerSpec, Vec<usize>, usize)> {
    let mut r = |lo: usize, hi: usize| rng.gen_range(lo..=hi);
    vec![
        (LayerSpec::Conv { filters: r(1, 3) }, vec![r(3, 6), r(3, 6), r(1, 3)], r(1, 2)),
        (LayerSpec::BatchNorm, vec![r(2, 4), r(2, 4), r(1, 3)], r(2, 3)),
        (LayerSpec::BatchNorm, vec![r(2, 6)], r(2, 5)),
        (LayerSpec::Relu, vec![r(2, 4), r(2, 4), r(1, 3)], r(1, 3)),
        (LayerSpec::AvgPool, vec![2 * r(1, 3), 2 * r(1, 3), r(1, 3)], r(1, 3)),
        (LayerSpec::GlobalAvgPool, vec![r(1, 4), r(1, 4), r(1, 3)], r(1, 3)),
        (LayerSpec::Dense { units: r(1, 4) }, vec![r(1, 6)], r(1, 3)),
        (LayerSpec::Softmax, vec![r(2, 8)], r(1, 3)),
        (LayerSpec::Dropout { rate: 0.4 }, vec![r(4, 12)], r(1, 3)),
    ]
}

fn criterion_3() -> Result<String> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst64, mut worst32, mut cases) = (0.0f64, 0.0f64, 0);
    for round in 0..3u64 {
        for (i, (spec, dims, batch)) in random_case(&mut rng).into_iter().enumerate() {
            let seed = 100 * round + i as u64;
            let r64 = check_layer::<f64>(spec, &dims, batch, Mode::Train, seed)?;
            let r32 = check_layer::<f32>(spec, &dims, batch, Mode::Train, seed)?;
            ensure!(r64.checked > 0, "{spec:?} checked nothing");
            ensure!(r64.max_rel_error < GRAD_TOL_F64, "f64 {spec:?} {dims:?}: {}", r64.max_rel_error);
            ensure!(r32.max_rel_error < GRAD_TOL_F32, "f32 {spec:?} {dims:?}: {}", r32.max_rel_error);
            worst64 = worst64.max(r64.max_rel_error);
            worst32 = worst32.max(r32.max_rel_error);
            cases += 1;
        }
        let (batch, classes) = (rng.gen_range(1..=5), rng.gen_range(2..=10));
        let lambda = rng.gen_range(0.0..0.5);
        let l64 = check_loss::<f64>(batch, classes, lambda, round)?;
        let l32 = check_loss::<f32>(batch, classes, lambda, round)?;
        ensure!(l64.max_rel_error < GRAD_TOL_F64, "f64 loss: {}", l64.max_rel_error);
        ensure!(l32.max_rel_error < GRAD_TOL_F32, "f32 loss: {}", l32.max_rel_error);
        worst64 = worst64.max(l64.max_rel_error);
        worst32 = worst32.max(l32.max_rel_error);
        cases += 1;
    }
    let took = t0.elapsed();
    ensure!(took < GRAD_BUDGET, "took {took:?}");
    Ok(format!(
        "{cases} cases; max rel error f64 {worst64:.2e}, f32 {worst32:.2e}; {:.1}s",
        took.as_secs_f64()
    ))
}

fn criterion_4() -> Result<String> {
    let net = Network::<f64>::new(&[4], &[LayerSpec::Dense { units: 3 }, LayerSpec::BatchNorm], 4)?;
    let params = net.params();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rows: Vec<f64> = (0..5).flat_map(|_| random_distribution(&mut rng, 10)).collect();
    let y = Tensor::from_vec(&[5, 10], rows)?;
    let same = kl_loss(&y, &y, &params, 0.0)?.value;
    ensure!(same.abs() < LOSS_TOL_SELF, "kl(y, y) = {same}");

    let half = kl_loss(
        &Tensor::from_vec(&[1, 2], vec![1.0, 0.0])?,
        &Tensor::from_vec(&[1, 2], vec![0.5, 0.5])?,
        &params,
        0.0,
    )?
    .value;
    ensure!((half - 2f64.ln()).abs() < LOSS_TOL_LN2, "[1,0] vs [.5,.5] = {half}");

    let lambda = 0.37;
    let norm_sq: f64 = params
        .iter()
        .filter(|p| p.trainable)
        .flat_map(|p| p.value.data())
        .map(|v| v * v)
        .sum();
    let l2 = kl_loss(&y, &y, &params, lambda)?.value;
    ensure!((l2 - lambda / 2.0 * norm_sq).abs() < LOSS_TOL_L2, "l2 {l2} vs {}", lambda / 2.0 * norm_sq);
    Ok(format!("kl(y,y)={same:.1e}, ln2 error {:.1e}, l2 error {:.1e}", (half - 2f64.ln()).abs(), (l2 - lambda / 2.0 * norm_sq).abs()))
}

fn tables(probs: &[Vec<Vec<f64>>]) -> Result<FrameworkProbabilities> {
    let clips = probs[0].len();
    Ok(FrameworkProbabilities::new(
        probs
            .iter()
            .enumerate()
            .map(|(i, p)| FrameworkTable {
                name: format!("f{i}"),
                clip_ids: (0..clips).map(|t| format!("c{t}")).collect(),
                truth: vec![0; clips],
                probs: p.clone(),
            })
            .collect(),
    )?)
}

fn criterion_5() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = 10;
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let frameworks = rng.gen_range(1..=7);
        let clips = rng.gen_range(1..=6);
        let probs: Vec<Vec<Vec<f64>>> = (0..frameworks)
            .map(|_| (0..clips).map(|_| random_distribution(&mut rng, c)).collect())
            .collect();
        let p = tables(&probs)?;
        for strategy in Strategy::ALL {
            let got = fuse(&p, strategy)?;
            for t in 0..clips {
                let want: Vec<f64> = (0..c)
                    .map(|k| {
                        let column = probs.iter().map(|fw| fw[t][k]);
                        match strategy {
                            Strategy::Mean => column.sum::<f64>() / frameworks as f64,
                            Strategy::Prod => column.product::<f64>() / frameworks as f64,
                            Strategy::Max => column.fold(f64::MIN, f64::max),
                        }
                    })
                    .collect();
                for (a, b) in got.scores[t].iter().zip(&want) {
                    worst = worst.max((a - b).abs());
                    ensure!((a - b).abs() <= FUSION_TOL, "trial {trial} {strategy}: {a} vs {b}");
                }
                ensure!(got.labels[t] == first_argmax(&want), "trial {trial} {strategy}: label");
            }
        }
        if frameworks == 1 {
            let labels: Vec<_> = Strategy::ALL.iter().map(|st| fuse(&p, *st).map(|r| r.labels)).collect::<std::result::Result<_, _>>()?;
            ensure!(labels.windows(2).all(|w| w[0] == w[1]), "trial {trial}: S=1 strategies disagree");
        }
    }
    for trial in 0..TRIALS {
        let frameworks = rng.gen_range(1..=7);
        let probs: Vec<Vec<Vec<f64>>> = (0..frameworks)
            .map(|_| (0..4).map(|_| random_distribution(&mut rng, c)).collect())
            .collect();
        let base = fuse(&tables(&probs)?, Strategy::Prod)?.labels;
        let scaled: Vec<Vec<Vec<f64>>> = probs
            .iter()
            .map(|fw| {
                let a = 10f64.powf(rng.gen_range(-2.0..2.0));
                fw.iter().map(|row| row.iter().map(|v| a * v).collect()).collect()
            })
            .collect();
        ensure!(fuse_scores(&scaled, Strategy::Prod)?.labels == base, "trial {trial}: scaling moved a PROD label");
    }
    // dedicated single-framework sweep
    for trial in 0..TRIALS {
        let probs = vec![(0..3).map(|_| random_distribution(&mut rng, c)).collect::<Vec<_>>()];
        let p = tables(&probs)?;
        let mean = fuse(&p, Strategy::Mean)?.labels;
        ensure!(fuse(&p, Strategy::Prod)?.labels == mean && fuse(&p, Strategy::Max)?.labels == mean, "S=1 trial {trial}");
    }
    Ok(format!("{TRIALS} instances x 3 strategies, max abs error {worst:.1e}; PROD scale-invariant; S=1 agrees"))
}

fn criterion_6() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..TRIALS {
        let classes = rng.gen_range(2..=10);
        let n = rng.gen_range(1..=200);
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let preds: Vec<usize> = truth
            .iter()
            .map(|&t| if rng.gen_bool(0.6) { t } else { rng.gen_range(0..classes) })
            .collect();
        let r = accuracy(&preds, &truth, classes)?;
        let mut confusion = vec![vec![0usize; classes]; classes];
        let mut correct = 0;
        for (p, t) in preds.iter().zip(&truth) {
            confusion[*t][*p] += 1;
            correct += usize::from(p == t);
        }
        ensure!(r.confusion == confusion, "trial {trial}: confusion");
        ensure!(r.correct == correct && r.total == n, "trial {trial}: counts");
        ensure!(r.accuracy == 100.0 * correct as f64 / n as f64, "trial {trial}: accuracy");
        ensure!(r.trace() == r.correct, "trial {trial}: trace");
        let supports = r.supports();
        for k in 0..classes {
            ensure!(supports[k] == truth.iter().filter(|&&t| t == k).count(), "trial {trial}: support {k}");
        }
        ensure!(supports.iter().sum::<usize>() == n, "trial {trial}: row sums");
    }
    Ok(format!("{TRIALS} random label vectors match brute-force counts"))
}

/// Outputs shared by the toy-run criteria.
struct ToyRun {
    root: PathBuf,
    mel_acc: f64,
    cqt_acc: f64,
    fused_acc: f64,
    elapsed: Duration,
}

fn train_and_predict(root: &Path, kind: &str, out: &Path) -> Result<f64> {
    let (manifest, feat) = (root.join("manifest.csv"), root.join("feat"));
    cli(&[
        "train", "--manifest", s(&manifest), "--features", s(&feat), "--kind", kind, "--arch", "vgg14",
        "--scale", "1/8", "--epochs", &TOY_EPOCHS.to_string(), "--lr", TOY_LR, "--seed", "7", "--out", s(out),
    ])?;
    let stdout = cli(&[
        "predict", "--checkpoint", s(&out.join("model.sfckpt")), "--manifest", s(&manifest), "--features",
        s(&feat), "--kind", kind, "--out", s(&out.join("eval.csv")), "--per-patch", s(&out.join("patch.csv")),
    ])?;
    field(&stdout, "accuracy")
}

fn synth_and_extract(root: &Path) -> Result<()> {
    cli(&["synth", "--out", s(root), "--classes", "4", "--train-per-class", "50", "--eval-per-class", "25", "--seed", "11"])?;
    for kind in ["mel", "cqt"] {
        let out = cli(&["extract", "--manifest", s(&root.join("manifest.csv")), "--kind", kind, "--out", s(&root.join("feat"))])?;
        ensure!(field(&out, "failed")? == 0.0, "extract {kind}: {out}");
    }
    Ok(())
}

fn toy_run(tmp: &Path) -> Result<ToyRun> {
    let root = tmp.join("toy");
    let t0 = Instant::now();
    synth_and_extract(&root)?;
    let mel_acc = train_and_predict(&root, "mel", &root.join("mel"))?;
    let cqt_acc = train_and_predict(&root, "cqt", &root.join("cqt"))?;
    let fused = cli(&[
        "fuse", "--inputs", s(&root.join("mel/eval.csv")), s(&root.join("cqt/eval.csv")), "--strategy", "prod",
        "--out", s(&root.join("fused.csv")),
    ])?;
    Ok(ToyRun {
        fused_acc: field(&fused, "accuracy")?,
        root,
        mel_acc,
        cqt_acc,
        elapsed: t0.elapsed(),
    })
}

fn criterion_7(run: &Result<ToyRun>) -> Result<String> {
    let run = run.as_ref().map_err(|e| anyhow!("{e:#}"))?;
    let best = run.mel_acc.max(run.cqt_acc);
    let summary = format!(
        "mel {:.1}%, cqt {:.1}%, prod {:.1}%, {TOY_EPOCHS} epochs, {:.0}s",
        run.mel_acc,
        run.cqt_acc,
        run.fused_acc,
        run.elapsed.as_secs_f64()
    );
    ensure!(run.mel_acc >= TOY_ACCURACY, "{summary}: mel below {TOY_ACCURACY}%");
    ensure!(run.fused_acc >= best - TOY_FUSION_MARGIN, "{summary}: fusion below best - {TOY_FUSION_MARGIN}");
    ensure!(run.elapsed <= TOY_BUDGET, "{summary}: over budget");
    Ok(summary)
}

fn criterion_8(tmp: &Path) -> Result<String> {
    let root = tmp.join("emb");
    let t0 = Instant::now();
    cli(&["synth", "--out", s(&root), "--no-audio", "--seed", "8", "--emb-dim", "2048"])?;
    let (manifest, emb) = (root.join("manifest.csv"), root.join("embeddings.sfemb"));
    cli(&[
        "train", "--manifest", s(&manifest), "--embeddings", s(&emb), "--arch", "mlp", "--scale", "1/64",
        "--epochs", &EMB_EPOCHS.to_string(), "--lr", TOY_LR, "--seed", "8", "--out", s(&root.join("mlp")),
    ])?;
    let out = cli(&[
        "predict", "--checkpoint", s(&root.join("mlp/model.sfckpt")), "--manifest", s(&manifest), "--embeddings",
        s(&emb), "--out", s(&root.join("mlp/eval.csv")),
    ])?;
    let acc = field(&out, "accuracy")?;
    let took = t0.elapsed();
    ensure!(acc >= EMB_ACCURACY, "accuracy {acc}%");
    ensure!(took <= EMB_BUDGET, "took {took:?}");
    Ok(format!("accuracy {acc:.1}% in {EMB_EPOCHS} epochs, {:.1}s", took.as_secs_f64()))
}

fn criterion_9(run: &Result<ToyRun>, tmp: &Path) -> Result<String> {
    let run = run.as_ref().map_err(|e| anyhow!("{e:#}"))?;
    let curve_path = run.root.join("early.csv");
    cli(&["early", "--input", s(&run.root.join("mel/patch.csv")), "--out", s(&curve_path)])?;
    let mut rdr = csv::Reader::from_path(&curve_path)?;
    let curve: Vec<(usize, f64)> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    ensure!(curve.len() == 10, "{} curve entries", curve.len());
    ensure!(curve.iter().map(|(k, _)| *k).eq(1..=10), "k column {curve:?}");
    let table = read_probabilities(fs::File::open(run.root.join("mel/eval.csv"))?, "mel")?;
    let preds: Vec<usize> = table.probs.iter().map(|r| first_argmax(r)).collect();
    let full = accuracy(&preds, &table.truth, 10)?.accuracy;
    ensure!(curve[9].1 == full && full == run.mel_acc, "k=10 {} vs full {full}", curve[9].1);

    // late-signal fixture: the first patches favour a wrong class, later ones the truth
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut per_patch, mut truth) = (Vec::new(), Vec::new());
    for t in 0..40 {
        let label = t % 10;
        let decoy = (label + 1 + rng.gen_range(0..9)) % 10;
        let onset = rng.gen_range(1..6);
        let clip: Vec<Vec<f64>> = (0..10)
            .map(|i| {
                let mut p = vec![0.02; 10];
                p[if i < onset { decoy } else { label }] += 0.8;
                p
            })
            .collect();
        per_patch.push(clip);
        truth.push(label);
    }
    let lib_curve = early_detection_curve(&per_patch, &truth, 10)?;
    ensure!(lib_curve.accuracies[0] <= lib_curve.accuracies[9], "fixture {:?}", lib_curve.accuracies);
    // the same fixture through the CLI
    let fixture = tmp.join("late.csv");
    let mut w = csv::Writer::from_path(&fixture)?;
    let mut header = vec!["clip_id".to_string(), "truth".into(), "patch".into()];
    header.extend((0..10).map(|k| format!("p{k}")));
    w.write_record(&header)?;
    for (t, clip) in per_patch.iter().enumerate() {
        for (i, p) in clip.iter().enumerate() {
            let mut rec = vec![format!("clip{t:02}"), truth[t].to_string(), i.to_string()];
            rec.extend(p.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    let out = cli(&["early", "--input", s(&fixture), "--out", s(&tmp.join("late_curve.csv"))])?;
    let lines: Vec<&str> = out.lines().collect();
    ensure!(lines.len() == 10, "cli curve {out:?}");
    let cli_first = field(lines[0], "accuracy")?;
    let cli_last = field(lines[9], "accuracy")?;
    ensure!(
        cli_first == lib_curve.accuracies[0] && cli_last == lib_curve.accuracies[9],
        "cli {cli_first}/{cli_last} vs library {:?}",
        lib_curve.accuracies
    );
    Ok(format!(
        "toy k=10 {:.1}% == full {full:.1}%; fixture k=1 {:.1}% <= k=10 {:.1}%",
        curve[9].1, lib_curve.accuracies[0], lib_curve.accuracies[9]
    ))
}

fn criterion_10(run: &Result<ToyRun>, tmp: &Path) -> Result<String> {
    let run = run.as_ref().map_err(|e| anyhow!("{e:#}"))?;
    let again = tmp.join("again");
    synth_and_extract(&again)?;
    for name in ["manifest.csv", "embeddings.sfemb"] {
        ensure!(fs::read(run.root.join(name))? == fs::read(again.join(name))?, "{name} differs");
    }
    let acc = train_and_predict(&again, "mel", &again.join("mel"))?;
    let (a, b) = (fs::read(run.root.join("mel/loss.csv"))?, fs::read(again.join("mel/loss.csv"))?);
    ensure!(a == b, "loss logs differ");
    ensure!(
        fs::read(run.root.join("mel/eval.csv"))? == fs::read(again.join("mel/eval.csv"))?,
        "eval probabilities differ"
    );
    ensure!(acc.to_bits() == run.mel_acc.to_bits(), "accuracy {acc} vs {}", run.mel_acc);
    Ok(format!("loss log ({} bytes), probabilities and accuracy {acc:.1}% identical", a.len()))
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored
    let tmp = tempfile::tempdir().expect("temp dir");
    let tmp = tmp.path();
    let mut results: Vec<(usize, &str, Result<String>)> = Vec::new();
    let mut report = |n: usize, name: &'static str, r: Result<String>| {
        match &r {
            Ok(detail) => println!("PASS criterion {n:>2} {name}: {detail}"),
            Err(e) => println!("FAIL criterion {n:>2} {name}: {e:#}"),
        }
        results.push((n, name, r));
    };
    report(1, "shape fidelity", criterion_1(tmp));
    report(2, "architecture fidelity", criterion_2());
    report(3, "gradient suite", criterion_3());
    report(4, "loss identities", criterion_4());
    report(5, "fusion oracles", criterion_5());
    report(6, "metric oracle", criterion_6());
    let toy = toy_run(tmp);
    report(7, "end-to-end toy run", criterion_7(&toy));
    report(8, "embedding path", criterion_8(tmp));
    report(9, "early detection", criterion_9(&toy, tmp));
    report(10, "determinism", criterion_10(&toy, tmp));
    let failed = results.iter().filter(|(_, _, r)| r.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
