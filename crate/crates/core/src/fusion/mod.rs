//! Patch averaging, late fusion of several frameworks, and evaluation.

pub mod io;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

const DIST_TOLERANCE: f64 = 1e-6;
/// Probability floor used by the log-domain product.
pub const PROD_FLOOR: f64 = 1e-12;

/// A length-C probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityDistribution(Vec<f64>);

impl ProbabilityDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_distribution(&probs)?;
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn label(&self) -> usize {
        argmax_label(&self.0).expect("non-empty distribution")
    }
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Data("empty probability vector".into()));
    }
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || (sum - 1.0).abs() > DIST_TOLERANCE {
        return Err(Error::Data(format!("not a probability distribution (sum {sum})")));
    }
    Ok(())
}

/// Entrywise mean of N per-patch (or per-frame) distributions.
pub fn mean_over_patches(patches: &[Vec<f64>]) -> Result<ProbabilityDistribution> {
    let first = patches
        .first()
        .ok_or_else(|| Error::Data("no patch probabilities to average".into()))?;
    let c = first.len();
    let mut mean = vec![0.0; c];
    for p in patches {
        if p.len() != c {
            return Err(Error::Shape(format!("patch with {} classes, expected {c}", p.len())));
        }
        check_distribution(p)?;
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    let n = patches.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    ProbabilityDistribution::new(mean)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_label(scores: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in scores.iter().enumerate() {
        if v.is_nan() {
            return Err(Error::Data(format!("NaN score at class {i}")));
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::Data("argmax of an empty vector".into()))
}

/// Clip-level probabilities of S frameworks over the same T clips.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameworkProbabilities {
    frameworks: Vec<String>,
    clip_ids: Vec<String>,
    truth: Vec<usize>,
    /// [framework][clip][class]
    probs: Vec<Vec<Vec<f64>>>,
}

/// One framework's per-clip predictions (one probability CSV).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameworkTable {
    pub name: String,
    pub clip_ids: Vec<String>,
    pub truth: Vec<usize>,
    pub probs: Vec<Vec<f64>>,
}

impl FrameworkProbabilities {
    /// Aligns the tables; clip order, truth and class count must agree.
    pub fn new(tables: Vec<FrameworkTable>) -> Result<Self> {
        let first = tables
            .first()
            .ok_or_else(|| Error::Data("fusion needs at least one framework".into()))?;
        let classes = first.probs.first().map(|r| r.len()).unwrap_or(0);
        for table in &tables {
            if table.clip_ids.len() != table.probs.len() || table.truth.len() != table.probs.len() {
                return Err(Error::Shape(format!("{}: ragged table", table.name)));
            }
            let offenders: Vec<String> = table
                .clip_ids
                .iter()
                .zip(&first.clip_ids)
                .enumerate()
                .filter(|(_, (a, b))| a != b)
                .map(|(i, (a, b))| format!("row {i}: {a} vs {b}"))
                .collect();
            if !offenders.is_empty() || table.clip_ids.len() != first.clip_ids.len() {
                return Err(Error::Alignment(format!(
                    "{} is not aligned with {} ({} vs {} clips) {}",
                    table.name,
                    first.name,
                    table.clip_ids.len(),
                    first.clip_ids.len(),
                    offenders.join("; ")
                )));
            }
            if table.truth != first.truth {
                return Err(Error::Alignment(format!(
                    "{} disagrees with {} on ground truth",
                    table.name, first.name
                )));
            }
            for (row, clip) in table.probs.iter().zip(&table.clip_ids) {
                if row.len() != classes {
                    return Err(Error::Alignment(format!(
                        "{}: clip {clip} has {} classes, expected {classes}",
                        table.name,
                        row.len()
                    )));
                }
                check_distribution(row)
                    .map_err(|e| Error::Data(format!("{}: clip {clip}: {e}", table.name)))?;
            }
        }
        Ok(Self {
            frameworks: tables.iter().map(|t| t.name.clone()).collect(),
            clip_ids: first.clip_ids.clone(),
            truth: first.truth.clone(),
            probs: tables.into_iter().map(|t| t.probs).collect(),
        })
    }

    pub fn frameworks(&self) -> &[String] {
        &self.frameworks
    }

    pub fn clip_ids(&self) -> &[String] {
        &self.clip_ids
    }

    pub fn truth(&self) -> &[usize] {
        &self.truth
    }

    pub fn framework(&self, s: usize) -> &[Vec<f64>] {
        &self.probs[s]
    }

    pub fn clips(&self) -> usize {
        self.clip_ids.len()
    }

    pub fn classes(&self) -> usize {
        self.probs[0].first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.frameworks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frameworks.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Mean,
    Prod,
    Max,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Mean, Strategy::Prod, Strategy::Max];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Mean => "mean",
            Strategy::Prod => "prod",
            Strategy::Max => "max",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(Strategy::Mean),
            "prod" => Ok(Strategy::Prod),
            "max" => Ok(Strategy::Max),
            other => Err(Error::Spec(format!("unknown fusion strategy {other:?}"))),
        }
    }
}

/// Fused per-clip scores and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub strategy: Strategy,
    pub scores: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl FusionResult {
    /// Scores rescaled to sum to one (for reporting PROD/MAX outputs).
    pub fn normalized_scores(&self) -> Vec<Vec<f64>> {
        self.scores
            .iter()
            .map(|row| {
                let sum: f64 = row.iter().sum();
                if sum > 0.0 {
                    row.iter().map(|v| v / sum).collect()
                } else {
                    row.clone()
                }
            })
            .collect()
    }
}

/// p_c = (1/S) Σ_s p_sc
pub fn fuse_mean(p: &FrameworkProbabilities) -> Result<FusionResult> {
    mean_of(&p.probs)
}

fn mean_of(probs: &[Vec<Vec<f64>>]) -> Result<FusionResult> {
    let s = probs.len() as f64;
    let (clips, classes) = (probs[0].len(), probs[0].first().map_or(0, |r| r.len()));
    let mut scores = Vec::with_capacity(clips);
    let mut labels = Vec::with_capacity(clips);
    for t in 0..clips {
        let mut row = vec![0.0; classes];
        for fw in probs {
            for (acc, v) in row.iter_mut().zip(&fw[t]) {
                *acc += v;
            }
        }
        row.iter_mut().for_each(|v| *v /= s);
        labels.push(argmax_label(&row)?);
        scores.push(row);
    }
    Ok(FusionResult {
        strategy: Strategy::Mean,
        scores,
        labels,
    })
}

/// p_c = (1/S) Π_s p_sc, with labels taken in the log domain.
pub fn fuse_prod(p: &FrameworkProbabilities) -> Result<FusionResult> {
    prod_of(&p.probs, &p.clip_ids)
}

fn prod_of(probs: &[Vec<Vec<f64>>], clip_ids: &[String]) -> Result<FusionResult> {
    let s = probs.len() as f64;
    let (clips, c) = (probs[0].len(), probs[0].first().map_or(0, |r| r.len()));
    let mut scores = Vec::with_capacity(clips);
    let mut labels = Vec::with_capacity(clips);
    for t in 0..clips {
        let mut product = vec![1.0 / s; c];
        let mut log_sum = vec![0.0; c];
        let mut zeroed = vec![false; c];
        for fw in probs {
            for k in 0..c {
                let v = fw[t][k];
                product[k] *= v;
                log_sum[k] += v.max(PROD_FLOOR).ln();
                zeroed[k] |= v == 0.0;
            }
        }
        if zeroed.iter().all(|z| *z) {
            return Err(Error::DegenerateFusion(format!(
                "clip {}: every class has zero probability in some framework",
                clip_ids.get(t).map_or(t.to_string(), |id| id.clone())
            )));
        }
        labels.push(argmax_label(&log_sum)?);
        scores.push(product);
    }
    Ok(FusionResult {
        strategy: Strategy::Prod,
        scores,
        labels,
    })
}

/// p_c = max_s p_sc
pub fn fuse_max(p: &FrameworkProbabilities) -> Result<FusionResult> {
    max_of(&p.probs)
}

fn max_of(probs: &[Vec<Vec<f64>>]) -> Result<FusionResult> {
    let (clips, classes) = (probs[0].len(), probs[0].first().map_or(0, |r| r.len()));
    let mut scores = Vec::with_capacity(clips);
    let mut labels = Vec::with_capacity(clips);
    for t in 0..clips {
        let mut row = vec![f64::NEG_INFINITY; classes];
        for fw in probs {
            for (acc, v) in row.iter_mut().zip(&fw[t]) {
                *acc = acc.max(*v);
            }
        }
        labels.push(argmax_label(&row)?);
        scores.push(row);
    }
    Ok(FusionResult {
        strategy: Strategy::Max,
        scores,
        labels,
    })
}

pub fn fuse(p: &FrameworkProbabilities, strategy: Strategy) -> Result<FusionResult> {
    match strategy {
        Strategy::Mean => fuse_mean(p),
        Strategy::Prod => fuse_prod(p),
        Strategy::Max => fuse_max(p),
    }
}

/// Fuses raw non-negative scores `[framework][clip][class]` that need not sum
/// to one, e.g. unnormalized model outputs.
pub fn fuse_scores(scores: &[Vec<Vec<f64>>], strategy: Strategy) -> Result<FusionResult> {
    let first = scores
        .first()
        .ok_or_else(|| Error::Data("fusion needs at least one framework".into()))?;
    let classes = first.first().map_or(0, |r| r.len());
    if first.is_empty() || classes == 0 {
        return Err(Error::Data("no scores to fuse".into()));
    }
    for fw in scores {
        if fw.len() != first.len() || fw.iter().any(|r| r.len() != classes) {
            return Err(Error::Shape("score matrices differ in shape".into()));
        }
        if fw.iter().flatten().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Data("scores must be finite and non-negative".into()));
        }
    }
    match strategy {
        Strategy::Mean => mean_of(scores),
        Strategy::Prod => prod_of(scores, &[]),
        Strategy::Max => max_of(scores),
    }
}

/// Accuracy and confusion matrix (rows = truth, columns = prediction).
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationResult {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
}

impl EvaluationResult {
    pub fn trace(&self) -> usize {
        (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum()
    }

    /// Test clips per true class.
    pub fn supports(&self) -> Vec<usize> {
        self.confusion.iter().map(|r| r.iter().sum()).collect()
    }
}

pub fn accuracy(preds: &[usize], truth: &[usize], classes: usize) -> Result<EvaluationResult> {
    if preds.len() != truth.len() {
        return Err(Error::Alignment(format!(
            "{} predictions vs {} labels",
            preds.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Data("accuracy of an empty test set".into()));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &t) in preds.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::Label(format!(
                "class id {} outside 0..{classes}",
                p.max(t)
            )));
        }
        confusion[t][p] += 1;
    }
    let correct = (0..classes).map(|i| confusion[i][i]).sum();
    Ok(EvaluationResult {
        correct,
        total: truth.len(),
        accuracy: 100.0 * correct as f64 / truth.len() as f64,
        confusion,
    })
}

/// Accuracy when only the first k patches of each clip are averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyDetectionCurve {
    /// Entry k-1 holds the accuracy (percent) for the first k patches.
    pub accuracies: Vec<f64>,
}

pub const EARLY_STEPS: usize = 10;

/// `per_patch[t]` holds clip t's patch distributions in temporal order.
pub fn early_detection_curve(
    per_patch: &[Vec<Vec<f64>>],
    truth: &[usize],
    classes: usize,
) -> Result<EarlyDetectionCurve> {
    if per_patch.len() != truth.len() {
        return Err(Error::Alignment(format!(
            "{} clips vs {} labels",
            per_patch.len(),
            truth.len()
        )));
    }
    if let Some(t) = per_patch.iter().position(|p| p.len() < EARLY_STEPS) {
        return Err(Error::Data(format!(
            "clip {t} has {} patches, need {EARLY_STEPS}",
            per_patch[t].len()
        )));
    }
    let accuracies = (1..=EARLY_STEPS)
        .map(|k| {
            let preds = per_patch
                .iter()
                .map(|patches| mean_over_patches(&patches[..k]).map(|p| p.label()))
                .collect::<Result<Vec<_>>>()?;
            Ok(accuracy(&preds, truth, classes)?.accuracy)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EarlyDetectionCurve { accuracies })
}
