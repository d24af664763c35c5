//! Relation prediction from pair embeddings with leave-one-conversation-out
//! evaluation.
//!
//! Each non-rejected annotation is a training row with a multi-hot target. A ridge
//! regression per label maps an embedding to twelve scores, which become a
//! probability vector through a softmax (or clipped normalization). Evaluation
//! reports strict top-1 metrics, in-set recall against the union of annotators'
//! labels, and cross-entropy against the annotators' label distribution.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{LabelSet, RelationLabel, N_LABELS};
use crate::linalg::{Cholesky, Matrix};
use crate::pairs::PairType;
use crate::scalar::Scalar;
use crate::store::{AnnotatedCorpus, Annotation};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("vector for {key} has dimension {got}, expected {expected}")]
    DimMismatch { key: String, expected: usize, got: usize },
    #[error("duplicate embedding for task {0}")]
    DuplicateKey(String),
    #[error("line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("no embedding for task {0}")]
    MissingEmbedding(String),
    #[error("leave-one-conversation-out needs at least two dialogues")]
    SingleDialogue,
    #[error("task {0} has no non-rejected annotations")]
    NoAnnotations(String),
    #[error("annotation refers to unknown task {0}")]
    UnknownTask(String),
    #[error("annotator {0} has no team")]
    UnknownAnnotator(String),
    #[error("alpha must be positive, got {0}")]
    InvalidAlpha(f64),
    #[error("no training rows")]
    NoRows,
    #[error("normal equations are singular")]
    Singular,
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ClassifierError {
    pub fn code(&self) -> &'static str {
        match self {
            ClassifierError::DimMismatch { .. } => "dim_mismatch",
            ClassifierError::DuplicateKey(_) => "duplicate_key",
            ClassifierError::Malformed { .. } => "malformed",
            ClassifierError::MissingEmbedding(_) => "missing_embedding",
            ClassifierError::SingleDialogue => "single_dialogue",
            ClassifierError::NoAnnotations(_) => "no_annotations",
            ClassifierError::UnknownTask(_) => "unknown_task",
            ClassifierError::UnknownAnnotator(_) => "unknown_annotator",
            ClassifierError::InvalidAlpha(_) => "invalid_alpha",
            ClassifierError::NoRows => "no_rows",
            ClassifierError::Singular => "singular",
            ClassifierError::Io(_) => "io",
        }
    }
}

/// Task id → fixed-length vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<F> {
    dim: usize,
    entries: BTreeMap<String, Vec<F>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbeddingLine {
    Entry { task_id: String, vector: Vec<f64> },
    Header { dim: usize },
}

#[derive(Serialize)]
struct EntryOut<'a> {
    task_id: &'a str,
    vector: Vec<f64>,
}

impl<F: Scalar> EmbeddingTable<F> {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, task_id: &str) -> Option<&[F]> {
        self.entries.get(task_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[F])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn insert(&mut self, task_id: &str, vector: Vec<F>) -> Result<(), ClassifierError> {
        if vector.len() != self.dim {
            return Err(ClassifierError::DimMismatch {
                key: task_id.to_string(),
                expected: self.dim,
                got: vector.len(),
            });
        }
        if self.entries.contains_key(task_id) {
            return Err(ClassifierError::DuplicateKey(task_id.to_string()));
        }
        self.entries.insert(task_id.to_string(), vector);
        Ok(())
    }

    /// Writes an optional-header line-delimited file; `f64` values round-trip
    /// bit-exactly.
    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        serde_json::to_writer(&mut w, &serde_json::json!({ "dim": self.dim }))?;
        w.write_all(b"\n")?;
        for (k, v) in &self.entries {
            let entry = EntryOut {
                task_id: k,
                vector: v.iter().map(|x| x.to_f64_lossy()).collect(),
            };
            serde_json::to_writer(&mut w, &entry)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn write_file(&self, path: &Path) -> io::Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        crate::jsonl::write_atomic(path, &buf)
    }
}

/// Reads `{"dim": n}` (optional, first line only) followed by
/// `{"task_id": .., "vector": [..]}` lines.
pub fn load_embeddings<F: Scalar, R: BufRead>(reader: R) -> Result<EmbeddingTable<F>, ClassifierError> {
    let mut table: Option<EmbeddingTable<F>> = None;
    let mut seen_content = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |detail: String| ClassifierError::Malformed { line: i + 1, detail };
        let parsed: EmbeddingLine = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        match parsed {
            EmbeddingLine::Header { dim } => {
                if seen_content {
                    return Err(malformed("header must be the first line".into()));
                }
                if dim == 0 {
                    return Err(malformed("dim must be positive".into()));
                }
                table = Some(EmbeddingTable::new(dim));
            }
            EmbeddingLine::Entry { task_id, vector } => {
                if vector.is_empty() {
                    return Err(malformed("empty vector".into()));
                }
                let t = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
                let v = vector.into_iter().map(F::lit).collect();
                t.insert(&task_id, v)?;
            }
        }
        seen_content = true;
    }
    table.ok_or(ClassifierError::Malformed {
        line: 0,
        detail: "no dimension: file has neither header nor entries".into(),
    })
}

pub fn load_embeddings_file<F: Scalar>(path: &Path) -> Result<EmbeddingTable<F>, ClassifierError> {
    let file = std::fs::File::open(path)?;
    load_embeddings(io::BufReader::new(file))
}

/// One non-rejected annotation as a training example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainRow {
    pub task_id: String,
    pub dialogue_id: String,
    pub annotator_id: String,
    pub team_id: String,
    pub target: LabelSet,
    pub pair_type: PairType,
}

pub fn build_train_rows(corpus: &AnnotatedCorpus) -> Result<Vec<TrainRow>, ClassifierError> {
    let tasks = corpus.task_index();
    corpus
        .annotations
        .iter()
        .filter(|a| !a.rejected && !a.labels.is_empty())
        .map(|a| {
            let task = tasks
                .get(a.task_id.as_str())
                .ok_or_else(|| ClassifierError::UnknownTask(a.task_id.clone()))?;
            let team = corpus
                .annotator_teams
                .get(&a.annotator_id)
                .ok_or_else(|| ClassifierError::UnknownAnnotator(a.annotator_id.clone()))?;
            Ok(TrainRow {
                task_id: a.task_id.clone(),
                dialogue_id: task.dialogue_id.clone(),
                annotator_id: a.annotator_id.clone(),
                team_id: team.clone(),
                target: a.labels,
                pair_type: task.pair_type,
            })
        })
        .collect()
}

/// Row indices held out for one dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub dialogue_id: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per dialogue, in dialogue-id order.
pub fn loco_folds(rows: &[TrainRow]) -> Result<Vec<Fold>, ClassifierError> {
    let dialogues: BTreeSet<&str> = rows.iter().map(|r| r.dialogue_id.as_str()).collect();
    if dialogues.len() < 2 {
        return Err(ClassifierError::SingleDialogue);
    }
    Ok(dialogues
        .into_iter()
        .map(|d| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..rows.len()).partition(|&i| rows[i].dialogue_id == d);
            Fold {
                dialogue_id: d.to_string(),
                train,
                test,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMapping {
    #[default]
    Softmax,
    /// Scores clipped below at 1e−12, then divided by their sum.
    ClippedNormalized,
}

/// How a prediction becomes a label set for the strict metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrictRule {
    #[default]
    Argmax,
    /// Every label whose ridge score reaches the threshold; the argmax if none does.
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub alpha: f64,
    pub fit_intercept: bool,
    pub mapping: ScoreMapping,
    pub strict: StrictRule,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            alpha: 1.0,
            fit_intercept: true,
            mapping: ScoreMapping::Softmax,
            strict: StrictRule::Argmax,
        }
    }
}

/// Per-label linear scores `weights[ℓ]·x + intercepts[ℓ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel<F> {
    pub dim: usize,
    pub weights: Vec<Vec<F>>,
    pub intercepts: Vec<F>,
    pub alpha: F,
}

impl<F: Scalar> LinearModel<F> {
    pub fn scores(&self, x: &[F]) -> Result<Vec<F>, ClassifierError> {
        if x.len() != self.dim {
            return Err(ClassifierError::DimMismatch {
                key: "input".into(),
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.intercepts)
            .map(|(w, &b)| crate::linalg::dot(w, x) + b)
            .collect())
    }
}

/// Ridge regression for each of the twelve labels on `(embedding, 0/1)` pairs,
/// minimizing ‖Xw + b − y‖² + α‖w‖². The intercept `b` is unpenalized; with
/// `fit_intercept = false` it is fixed at 0.
pub fn fit_ridge_ovr<F: Scalar>(
    rows: &[&TrainRow],
    embeddings: &EmbeddingTable<F>,
    alpha: F,
    fit_intercept: bool,
) -> Result<LinearModel<F>, ClassifierError> {
    if alpha <= F::zero() || !alpha.is_finite() {
        return Err(ClassifierError::InvalidAlpha(alpha.to_f64_lossy()));
    }
    if rows.is_empty() {
        return Err(ClassifierError::NoRows);
    }
    let d = embeddings.dim();
    let xs: Vec<&[F]> = rows
        .iter()
        .map(|r| {
            embeddings
                .get(&r.task_id)
                .ok_or_else(|| ClassifierError::MissingEmbedding(r.task_id.clone()))
        })
        .collect::<Result<_, _>>()?;
    let n = F::of_usize(rows.len());
    let (x_mean, y_mean) = if fit_intercept {
        let mut xm = vec![F::zero(); d];
        for x in &xs {
            for (m, &v) in xm.iter_mut().zip(*x) {
                *m += v;
            }
        }
        let mut ym = vec![F::zero(); N_LABELS];
        for r in rows {
            for l in r.target.iter() {
                ym[l.index()] += F::one();
            }
        }
        (xm.into_iter().map(|v| v / n).collect(), ym.into_iter().map(|v| v / n).collect())
    } else {
        (vec![F::zero(); d], vec![F::zero(); N_LABELS])
    };
    let mut gram = Matrix::identity(d);
    for j in 0..d {
        gram[(j, j)] = alpha;
    }
    let mut rhs = vec![vec![F::zero(); d]; N_LABELS];
    let mut centered = vec![F::zero(); d];
    for (x, r) in xs.iter().zip(rows) {
        for ((c, &v), &m) in centered.iter_mut().zip(*x).zip(&x_mean) {
            *c = v - m;
        }
        gram.add_outer(&centered, F::one());
        for (l, b) in rhs.iter_mut().enumerate() {
            let y = if r.target.contains(RelationLabel::ALL[l]) { F::one() } else { F::zero() };
            let yc = y - y_mean[l];
            if yc != F::zero() {
                for (bj, &c) in b.iter_mut().zip(&centered) {
                    *bj += yc * c;
                }
            }
        }
    }
    let chol = Cholesky::factor(&gram).map_err(|_| ClassifierError::Singular)?;
    let weights: Vec<Vec<F>> = rhs.iter().map(|b| chol.solve(b)).collect();
    let intercepts = weights
        .iter()
        .zip(&y_mean)
        .map(|(w, &ym)| ym - crate::linalg::dot(w, &x_mean))
        .collect();
    Ok(LinearModel {
        dim: d,
        weights,
        intercepts,
        alpha,
    })
}

/// Lower bound applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Maps twelve scores to a probability vector.
pub fn scores_to_distribution<F: Scalar>(scores: &[F], mapping: ScoreMapping) -> Vec<F> {
    match mapping {
        ScoreMapping::Softmax => {
            let max = scores.iter().copied().fold(F::neg_infinity(), F::max);
            let exps: Vec<F> = scores.iter().map(|&s| (s - max).exp()).collect();
            let z: F = exps.iter().copied().sum();
            exps.into_iter().map(|e| e / z).collect()
        }
        ScoreMapping::ClippedNormalized => {
            let clipped: Vec<F> = scores.iter().map(|&s| s.max(F::lit(PROB_FLOOR))).collect();
            let z: F = clipped.iter().copied().sum();
            clipped.into_iter().map(|c| c / z).collect()
        }
    }
}

pub fn predict_distribution<F: Scalar>(
    model: &LinearModel<F>,
    embedding: &[F],
    mapping: ScoreMapping,
) -> Result<Vec<F>, ClassifierError> {
    Ok(scores_to_distribution(&model.scores(embedding)?, mapping))
}

/// Label counts over a task's non-rejected annotations, normalized to sum 1.
pub fn gold_distribution<F: Scalar>(task_id: &str, annotations: &[Annotation]) -> Result<Vec<F>, ClassifierError> {
    gold_from_sets(
        task_id,
        annotations
            .iter()
            .filter(|a| a.task_id == task_id && !a.rejected)
            .map(|a| a.labels),
    )
}

fn gold_from_sets<F: Scalar>(task_id: &str, sets: impl Iterator<Item = LabelSet>) -> Result<Vec<F>, ClassifierError> {
    let mut counts = vec![F::zero(); N_LABELS];
    for set in sets {
        for l in set.iter() {
            counts[l.index()] += F::one();
        }
    }
    let total: F = counts.iter().copied().sum();
    if total <= F::zero() {
        return Err(ClassifierError::NoAnnotations(task_id.to_string()));
    }
    Ok(counts.into_iter().map(|c| c / total).collect())
}

/// −Σ gold·ln(pred), with predictions floored at [`PROB_FLOOR`].
pub fn cross_entropy<F: Scalar>(gold: &[F], pred: &[F]) -> F {
    gold.iter()
        .zip(pred)
        .filter(|(g, _)| **g > F::zero())
        .map(|(&g, &p)| -g * p.max(F::lit(PROB_FLOOR)).ln())
        .sum()
}

pub fn entropy<F: Scalar>(dist: &[F]) -> F {
    dist.iter().filter(|p| **p > F::zero()).map(|&p| -p * p.ln()).sum()
}

fn argmax<F: Scalar>(v: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Model output for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskPrediction<F> {
    pub scores: Vec<F>,
    pub distribution: Vec<F>,
}

impl<F: Scalar> TaskPrediction<F> {
    pub fn top(&self) -> RelationLabel {
        RelationLabel::ALL[argmax(&self.distribution)]
    }

    pub fn strict_set(&self, rule: StrictRule) -> LabelSet {
        match rule {
            StrictRule::Argmax => LabelSet::single(self.top()),
            StrictRule::Threshold(t) => {
                let set: LabelSet = RelationLabel::ALL
                    .iter()
                    .filter(|l| self.scores[l.index()].to_f64_lossy() >= t)
                    .copied()
                    .collect();
                if set.is_empty() {
                    LabelSet::single(self.top())
                } else {
                    set
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScores<F> {
    pub label: RelationLabel,
    pub support: usize,
    pub precision: F,
    pub recall: F,
    pub f1: F,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary<F> {
    pub dialogue_id: String,
    pub n_train: usize,
    pub n_test: usize,
    pub n_tasks: usize,
    pub in_set_recall: F,
    pub mean_cross_entropy: F,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<F> {
    pub macro_precision: F,
    pub macro_recall: F,
    pub macro_f1: F,
    pub in_set_recall_overall: F,
    pub in_set_recall_by_group_mean: F,
    pub cross_entropy_by_pair_type: BTreeMap<PairType, F>,
    pub cross_entropy_overall: F,
    pub per_label: Vec<LabelScores<F>>,
    /// Labels without gold support, excluded from the macro averages.
    pub skipped_labels: Vec<RelationLabel>,
    pub n_rows: usize,
    pub n_tasks: usize,
    pub folds: Vec<FoldSummary<F>>,
    pub config: ClassifierConfig,
    pub notes: Vec<String>,
}

impl<F: Scalar> EvalReport<F> {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        let mut line = |k: &str, v: F| {
            let _ = writeln!(out, "{k}\t{:.4}", v.to_f64_lossy());
        };
        line("macro_precision", self.macro_precision);
        line("macro_recall", self.macro_recall);
        line("macro_f1", self.macro_f1);
        line("in_set_recall_overall", self.in_set_recall_overall);
        line("in_set_recall_by_group_mean", self.in_set_recall_by_group_mean);
        line("cross_entropy_overall", self.cross_entropy_overall);
        for (pt, v) in &self.cross_entropy_by_pair_type {
            line(&format!("cross_entropy_{pt}"), *v);
        }
        out
    }

    pub fn folds_tsv(&self) -> String {
        let mut out = String::from("dialogue_id\tn_train\tn_test\tn_tasks\tin_set_recall\tmean_cross_entropy\n");
        for f in &self.folds {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.4}\t{:.4}",
                f.dialogue_id,
                f.n_train,
                f.n_test,
                f.n_tasks,
                f.in_set_recall.to_f64_lossy(),
                f.mean_cross_entropy.to_f64_lossy()
            );
        }
        out
    }
}

/// Task-level aggregates of held-out predictions.
struct TaskOutcome<F> {
    in_set: bool,
    cross_entropy: F,
}

fn ratio<F: Scalar>(num: usize, den: usize) -> F {
    if den == 0 {
        F::zero()
    } else {
        F::of_usize(num) / F::of_usize(den)
    }
}

/// Scores held-out predictions. `predictions` must cover every row's task.
pub fn score_predictions<F: Scalar>(
    rows: &[TrainRow],
    predictions: &HashMap<String, TaskPrediction<F>>,
    strict: StrictRule,
) -> Result<EvalReportCore<F>, ClassifierError> {
    let pred_of = |task: &str| {
        predictions
            .get(task)
            .ok_or_else(|| ClassifierError::MissingEmbedding(task.to_string()))
    };
    let mut tp = [0usize; N_LABELS];
    let mut fp = [0usize; N_LABELS];
    let mut fn_ = [0usize; N_LABELS];
    for r in rows {
        let predicted = pred_of(&r.task_id)?.strict_set(strict);
        for l in RelationLabel::ALL {
            match (predicted.contains(l), r.target.contains(l)) {
                (true, true) => tp[l.index()] += 1,
                (true, false) => fp[l.index()] += 1,
                (false, true) => fn_[l.index()] += 1,
                (false, false) => {}
            }
        }
    }
    let mut per_label = Vec::new();
    let mut skipped = Vec::new();
    for l in RelationLabel::ALL {
        let i = l.index();
        let support = tp[i] + fn_[i];
        if support == 0 {
            skipped.push(l);
            continue;
        }
        let precision: F = ratio(tp[i], tp[i] + fp[i]);
        let recall: F = ratio(tp[i], support);
        let f1 = if precision + recall > F::zero() {
            F::lit(2.0) * precision * recall / (precision + recall)
        } else {
            F::zero()
        };
        per_label.push(LabelScores {
            label: l,
            support,
            precision,
            recall,
            f1,
        });
    }
    let k = F::of_usize(per_label.len().max(1));
    let macro_of = |f: fn(&LabelScores<F>) -> F| per_label.iter().map(f).sum::<F>() / k;

    // Per task: union of all labels, and per team union.
    let mut task_sets: BTreeMap<&str, (PairType, Vec<LabelSet>)> = BTreeMap::new();
    let mut team_sets: BTreeMap<(&str, &str), LabelSet> = BTreeMap::new();
    for r in rows {
        task_sets
            .entry(&r.task_id)
            .or_insert_with(|| (r.pair_type, Vec::new()))
            .1
            .push(r.target);
        let e = team_sets.entry((&r.team_id, &r.task_id)).or_insert(LabelSet::EMPTY);
        *e = e.union(r.target);
    }
    let mut outcomes: BTreeMap<&str, TaskOutcome<F>> = BTreeMap::new();
    let mut ce_by_type: BTreeMap<PairType, Vec<F>> = BTreeMap::new();
    for (task, (pt, sets)) in &task_sets {
        let pred = pred_of(task)?;
        let union = sets.iter().fold(LabelSet::EMPTY, |a, &b| a.union(b));
        let gold: Vec<F> = gold_from_sets(task, sets.iter().copied())?;
        let ce = cross_entropy(&gold, &pred.distribution);
        ce_by_type.entry(*pt).or_default().push(ce);
        outcomes.insert(
            task,
            TaskOutcome {
                in_set: union.contains(pred.top()),
                cross_entropy: ce,
            },
        );
    }
    let n_tasks = outcomes.len();
    let in_set_overall = ratio(outcomes.values().filter(|o| o.in_set).count(), n_tasks);
    let mut per_team: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for ((team, task), set) in &team_sets {
        let hit = set.contains(pred_of(task)?.top());
        let e = per_team.entry(team).or_default();
        e.0 += usize::from(hit);
        e.1 += 1;
    }
    let by_group = per_team.values().map(|&(h, n)| ratio::<F>(h, n)).sum::<F>() / F::of_usize(per_team.len().max(1));
    let ce_mean = |v: &[F]| v.iter().copied().sum::<F>() / F::of_usize(v.len().max(1));
    let all_ce: Vec<F> = outcomes.values().map(|o| o.cross_entropy).collect();
    Ok(EvalReportCore {
        macro_precision: macro_of(|s| s.precision),
        macro_recall: macro_of(|s| s.recall),
        macro_f1: macro_of(|s| s.f1),
        in_set_recall_overall: in_set_overall,
        in_set_recall_by_group_mean: by_group,
        cross_entropy_by_pair_type: ce_by_type.iter().map(|(k, v)| (*k, ce_mean(v))).collect(),
        cross_entropy_overall: ce_mean(&all_ce),
        per_label,
        skipped_labels: skipped,
        n_rows: rows.len(),
        n_tasks,
    })
}

/// Metrics of [`EvalReport`] that depend only on rows and predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReportCore<F> {
    pub macro_precision: F,
    pub macro_recall: F,
    pub macro_f1: F,
    pub in_set_recall_overall: F,
    pub in_set_recall_by_group_mean: F,
    pub cross_entropy_by_pair_type: BTreeMap<PairType, F>,
    pub cross_entropy_overall: F,
    pub per_label: Vec<LabelScores<F>>,
    pub skipped_labels: Vec<RelationLabel>,
    pub n_rows: usize,
    pub n_tasks: usize,
}

/// Trains on each fold's training rows and predicts its held-out tasks; folds
/// run in parallel and are combined in fold order.
pub fn evaluate<F: Scalar>(
    rows: &[TrainRow],
    folds: &[Fold],
    embeddings: &EmbeddingTable<F>,
    config: &ClassifierConfig,
) -> Result<EvalReport<F>, ClassifierError> {
    let alpha = F::lit(config.alpha);
    type FoldOutput<F> = (FoldSummary<F>, Vec<(String, TaskPrediction<F>)>);
    let per_fold: Vec<Result<FoldOutput<F>, ClassifierError>> = folds
        .par_iter()
        .map(|fold| {
            let train: Vec<&TrainRow> = fold.train.iter().map(|&i| &rows[i]).collect();
            let model = fit_ridge_ovr(&train, embeddings, alpha, config.fit_intercept)?;
            let tasks: BTreeSet<&str> = fold.test.iter().map(|&i| rows[i].task_id.as_str()).collect();
            let mut preds = Vec::new();
            for t in tasks {
                let x = embeddings
                    .get(t)
                    .ok_or_else(|| ClassifierError::MissingEmbedding(t.to_string()))?;
                let scores = model.scores(x)?;
                let distribution = scores_to_distribution(&scores, config.mapping);
                preds.push((t.to_string(), TaskPrediction { scores, distribution }));
            }
            let test_rows: Vec<TrainRow> = fold.test.iter().map(|&i| rows[i].clone()).collect();
            let local: HashMap<String, TaskPrediction<F>> = preds.iter().cloned().collect();
            let core = score_predictions(&test_rows, &local, config.strict)?;
            let summary = FoldSummary {
                dialogue_id: fold.dialogue_id.clone(),
                n_train: fold.train.len(),
                n_test: fold.test.len(),
                n_tasks: core.n_tasks,
                in_set_recall: core.in_set_recall_overall,
                mean_cross_entropy: core.cross_entropy_overall,
            };
            Ok((summary, preds))
        })
        .collect();
    let mut summaries = Vec::new();
    let mut predictions = HashMap::new();
    for r in per_fold {
        let (s, p) = r?;
        summaries.push(s);
        predictions.extend(p);
    }
    let tested: Vec<TrainRow> = folds.iter().flat_map(|f| f.test.iter().map(|&i| rows[i].clone())).collect();
    let core = score_predictions(&tested, &predictions, config.strict)?;
    let mut notes = vec![match config.mapping {
        ScoreMapping::Softmax => "probabilities are a softmax over ridge scores (modeling choice)".to_string(),
        ScoreMapping::ClippedNormalized => "probabilities are clipped, normalized ridge scores (modeling choice)".to_string(),
    }];
    if !core.skipped_labels.is_empty() {
        notes.push(format!(
            "labels without gold support excluded from macro averages: {}",
            core.skipped_labels.iter().map(|l| l.name()).collect::<Vec<_>>().join(", ")
        ));
    }
    Ok(EvalReport {
        macro_precision: core.macro_precision,
        macro_recall: core.macro_recall,
        macro_f1: core.macro_f1,
        in_set_recall_overall: core.in_set_recall_overall,
        in_set_recall_by_group_mean: core.in_set_recall_by_group_mean,
        cross_entropy_by_pair_type: core.cross_entropy_by_pair_type,
        cross_entropy_overall: core.cross_entropy_overall,
        per_label: core.per_label,
        skipped_labels: core.skipped_labels,
        n_rows: core.n_rows,
        n_tasks: core.n_tasks,
        folds: summaries,
        config: *config,
        notes,
    })
}
