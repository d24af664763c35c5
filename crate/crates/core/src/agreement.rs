//! Multi-label inter-annotator agreement with bootstrap chance correction.
//!
//! Six metrics are computed over every unordered annotator pair and every item both
//! annotators labeled, averaged first over items and then over pairs:
//!
//! | metric        | item score for first annotator A, second B |
//! |---------------|--------------------------------------------|
//! | `soft_match`  | 1 if A ∩ B ≠ ∅                               |
//! | `augmented`   | \|A∩B\| / max(\|A\|, \|B\|)                   |
//! | `boot_match`  | same as `soft_match`                         |
//! | `boot_precision` | \|A∩B\| / \|A\|                           |
//! | `boot_recall` | \|A∩B\| / \|B\|                               |
//! | `boot_f1`     | harmonic mean of the two above               |
//!
//! Expected agreement for the `boot_*` metrics is the mean metric over pseudo
//! matrices whose cells are resampled from each annotator's observed label sets.
//! `soft_match` and `augmented` use label-marginal chance by default, where each
//! label of a k-label set carries weight 1/k; [`ChanceModel::Bootstrap`] switches
//! them to the bootstrap as well.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{LabelMatrix, LabelSet, N_LABELS};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AgreementError {
    #[error("no item is labeled by two annotators")]
    NoOverlap,
    #[error("expected agreement is 1; chance-adjusted agreement is undefined")]
    DegenerateExpected,
    #[error("n_resamples must be at least 100, got {0}")]
    TooFewResamples(usize),
}

impl AgreementError {
    pub fn code(&self) -> &'static str {
        match self {
            AgreementError::NoOverlap => "no_overlap",
            AgreementError::DegenerateExpected => "degenerate_expected",
            AgreementError::TooFewResamples(_) => "too_few_resamples",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    SoftMatch,
    Augmented,
    BootMatch,
    BootRecall,
    BootPrecision,
    BootF1,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::SoftMatch,
        Metric::Augmented,
        Metric::BootMatch,
        Metric::BootRecall,
        Metric::BootPrecision,
        Metric::BootF1,
    ];

    /// Row label used in the TSV table.
    pub fn display_name(self) -> &'static str {
        match self {
            Metric::SoftMatch => "soft-match",
            Metric::Augmented => "augmented",
            Metric::BootMatch => "boot-match",
            Metric::BootRecall => "boot-rec.",
            Metric::BootPrecision => "boot-prec.",
            Metric::BootF1 => "boot-F1",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    #[default]
    AllAnnotatorPairs,
}

/// Where bootstrap cells are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Each annotator's own observed label sets.
    #[default]
    PerAnnotator,
    /// All observed label sets of all annotators.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentedDenominator {
    #[default]
    Max,
    Mean,
}

/// Chance model for `soft_match` and `augmented`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChanceModel {
    #[default]
    LabelMarginals,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementConfig {
    pub n_resamples: usize,
    pub seed: u64,
    pub pairing: Pairing,
    pub pooling: Pooling,
    /// Rejections take part as empty label sets; when false they are dropped.
    pub include_rejections: bool,
    pub augmented_denominator: AugmentedDenominator,
    pub soft_chance: ChanceModel,
}

impl Default for AgreementConfig {
    fn default() -> Self {
        AgreementConfig {
            n_resamples: 10_000,
            seed: 0,
            pairing: Pairing::AllAnnotatorPairs,
            pooling: Pooling::PerAnnotator,
            include_rejections: true,
            augmented_denominator: AugmentedDenominator::Max,
            soft_chance: ChanceModel::LabelMarginals,
        }
    }
}

impl AgreementConfig {
    fn validate(&self) -> Result<(), AgreementError> {
        if self.n_resamples < 100 {
            return Err(AgreementError::TooFewResamples(self.n_resamples));
        }
        Ok(())
    }
}

fn ratio<F: Scalar>(num: usize, den: usize) -> F {
    if den == 0 {
        F::zero()
    } else {
        F::of_usize(num) / F::of_usize(den)
    }
}

/// All six item scores for one ordered pair of label sets.
fn item_scores<F: Scalar>(a: LabelSet, b: LabelSet, denom: AugmentedDenominator) -> [F; 6] {
    let inter = a.intersection(b).len();
    let soft = if inter > 0 { F::one() } else { F::zero() };
    let augmented = match denom {
        AugmentedDenominator::Max => ratio(inter, a.len().max(b.len())),
        AugmentedDenominator::Mean => ratio(2 * inter, a.len() + b.len()),
    };
    let precision: F = ratio(inter, a.len());
    let recall: F = ratio(inter, b.len());
    let f1 = if precision + recall > F::zero() {
        F::lit(2.0) * precision * recall / (precision + recall)
    } else {
        F::zero()
    };
    [soft, augmented, soft, recall, precision, f1]
}

/// Annotator pairs with the rows both of them labeled.
struct PairLayout {
    pairs: Vec<(usize, usize, Vec<usize>)>,
}

impl PairLayout {
    fn new(matrix: &LabelMatrix) -> Result<Self, AgreementError> {
        let n = matrix.n_annotators();
        let mut pairs = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                let items: Vec<usize> = (0..matrix.n_tasks())
                    .filter(|&i| matrix.cell(i, a).is_some() && matrix.cell(i, b).is_some())
                    .collect();
                if !items.is_empty() {
                    pairs.push((a, b, items));
                }
            }
        }
        if pairs.is_empty() {
            return Err(AgreementError::NoOverlap);
        }
        Ok(PairLayout { pairs })
    }

    /// Pair-averaged metric vector over a grid of cells.
    fn scores<F: Scalar>(&self, cell: impl Fn(usize, usize) -> LabelSet, denom: AugmentedDenominator) -> [F; 6] {
        let mut total = [F::zero(); 6];
        for (a, b, items) in &self.pairs {
            let mut acc = [F::zero(); 6];
            for &i in items {
                let s = item_scores::<F>(cell(i, *a), cell(i, *b), denom);
                for k in 0..6 {
                    acc[k] += s[k];
                }
            }
            let n = F::of_usize(items.len());
            for k in 0..6 {
                total[k] += acc[k] / n;
            }
        }
        let p = F::of_usize(self.pairs.len());
        total.map(|x| x / p)
    }
}

fn prepared(matrix: &LabelMatrix, config: &AgreementConfig) -> LabelMatrix {
    if config.include_rejections {
        matrix.clone()
    } else {
        matrix.without_rejections()
    }
}

fn observed_all<F: Scalar>(matrix: &LabelMatrix, config: &AgreementConfig) -> Result<[F; 6], AgreementError> {
    let m = prepared(matrix, config);
    let layout = PairLayout::new(&m)?;
    Ok(layout.scores(|i, a| m.cell(i, a).expect("co-annotated"), config.augmented_denominator))
}

/// Observed agreement for one metric.
pub fn observed_metric<F: Scalar>(
    matrix: &LabelMatrix,
    metric: Metric,
    config: &AgreementConfig,
) -> Result<F, AgreementError> {
    Ok(observed_all::<F>(matrix, config)?[metric.slot()])
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEstimate<F> {
    pub mean: F,
    pub std_error: F,
}

fn round_seed(seed: u64, round: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e3779b97f4a7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }
    splitmix(seed ^ splitmix(round))
}

/// Per-round metric vectors; round `r` uses a generator seeded from `(seed, r)`.
fn bootstrap_rounds<F: Scalar>(matrix: &LabelMatrix, config: &AgreementConfig) -> Result<Vec<[F; 6]>, AgreementError> {
    config.validate()?;
    let m = prepared(matrix, config);
    let layout = PairLayout::new(&m)?;
    let n_annot = m.n_annotators();
    let pools: Vec<Vec<LabelSet>> = match config.pooling {
        Pooling::PerAnnotator => (0..n_annot).map(|a| m.column_sets(a)).collect(),
        Pooling::Global => {
            let all: Vec<LabelSet> = (0..n_annot).flat_map(|a| m.column_sets(a)).collect();
            vec![all; n_annot]
        }
    };
    let populated: Vec<(usize, usize)> = (0..m.n_tasks())
        .flat_map(|i| (0..n_annot).map(move |a| (i, a)))
        .filter(|&(i, a)| m.cell(i, a).is_some())
        .collect();
    let rounds = (0..config.n_resamples as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(round_seed(config.seed, r));
            let mut grid = vec![LabelSet::EMPTY; m.n_tasks() * n_annot];
            for &(i, a) in &populated {
                let pool = &pools[a];
                grid[i * n_annot + a] = pool[rng.random_range(0..pool.len())];
            }
            layout.scores::<F>(|i, a| grid[i * n_annot + a], config.augmented_denominator)
        })
        .collect();
    Ok(rounds)
}

fn summarize<F: Scalar>(values: impl Iterator<Item = F> + Clone) -> BootstrapEstimate<F> {
    let n = values.clone().count();
    let mean = values.clone().sum::<F>() / F::of_usize(n);
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<F>() / F::of_usize(n.saturating_sub(1).max(1));
    BootstrapEstimate {
        mean,
        std_error: (var / F::of_usize(n)).sqrt(),
    }
}

/// Bootstrap estimate of chance agreement for one metric.
pub fn expected_metric_bootstrap_with_error<F: Scalar>(
    matrix: &LabelMatrix,
    metric: Metric,
    config: &AgreementConfig,
) -> Result<BootstrapEstimate<F>, AgreementError> {
    let rounds = bootstrap_rounds::<F>(matrix, config)?;
    Ok(summarize(rounds.iter().map(|r| r[metric.slot()])))
}

/// Bootstrap estimate of chance agreement for one metric. Deterministic in
/// `config.seed`.
pub fn expected_metric_bootstrap<F: Scalar>(
    matrix: &LabelMatrix,
    metric: Metric,
    config: &AgreementConfig,
) -> Result<F, AgreementError> {
    Ok(expected_metric_bootstrap_with_error(matrix, metric, config)?.mean)
}

/// Label-marginal chance agreement Σₗ pₐ(l)·p_b(l), averaged over annotator pairs,
/// where each label of a k-label set contributes 1/k.
pub fn expected_label_marginal<F: Scalar>(matrix: &LabelMatrix, config: &AgreementConfig) -> Result<F, AgreementError> {
    let m = prepared(matrix, config);
    let layout = PairLayout::new(&m)?;
    let mut total = F::zero();
    for (a, b, items) in &layout.pairs {
        let marginal = |col: usize| {
            let mut p = [F::zero(); N_LABELS];
            for &i in items {
                let set = m.cell(i, col).expect("co-annotated");
                if set.is_empty() {
                    continue;
                }
                let w = F::one() / F::of_usize(set.len());
                for l in set.iter() {
                    p[l.index()] += w;
                }
            }
            let n = F::of_usize(items.len());
            p.map(|x| x / n)
        };
        let (pa, pb) = (marginal(*a), marginal(*b));
        total += pa.iter().zip(&pb).map(|(&x, &y)| x * y).sum::<F>();
    }
    Ok(total / F::of_usize(layout.pairs.len()))
}

/// (observed − expected) / (1 − expected).
pub fn adjust_kappa<F: Scalar>(observed: F, expected: F) -> Result<F, AgreementError> {
    if expected >= F::one() {
        return Err(AgreementError::DegenerateExpected);
    }
    Ok((observed - expected) / (F::one() - expected))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple<F> {
    pub observed: F,
    pub expected: F,
    pub adjusted: F,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport<F> {
    pub soft_match: MetricTriple<F>,
    pub augmented: MetricTriple<F>,
    pub boot_match: MetricTriple<F>,
    pub boot_recall: MetricTriple<F>,
    pub boot_precision: MetricTriple<F>,
    pub boot_f1: MetricTriple<F>,
    pub n_items: usize,
    pub n_annotators: usize,
    pub n_annotator_pairs: usize,
    pub config: AgreementConfig,
}

impl<F: Scalar> AgreementReport<F> {
    pub fn get(&self, metric: Metric) -> &MetricTriple<F> {
        match metric {
            Metric::SoftMatch => &self.soft_match,
            Metric::Augmented => &self.augmented,
            Metric::BootMatch => &self.boot_match,
            Metric::BootRecall => &self.boot_recall,
            Metric::BootPrecision => &self.boot_precision,
            Metric::BootF1 => &self.boot_f1,
        }
    }

    /// `metric  observed  expected  adjusted` with two decimals.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tobserved\texpected\tadjusted\n");
        for m in Metric::ALL {
            let t = self.get(m);
            out.push_str(&format!(
                "{}\t{:.2}\t{:.2}\t{:.2}\n",
                m.display_name(),
                t.observed.to_f64_lossy(),
                t.expected.to_f64_lossy(),
                t.adjusted.to_f64_lossy()
            ));
        }
        out
    }
}

/// Observed, expected and adjusted agreement for all six metrics.
///
/// When expected agreement is 1 and observed agreement is also 1 (every annotator
/// always uses the same single set), adjusted agreement is reported as 1.
pub fn agreement_report<F: Scalar>(
    matrix: &LabelMatrix,
    config: &AgreementConfig,
) -> Result<AgreementReport<F>, AgreementError> {
    let observed = observed_all::<F>(matrix, config)?;
    let rounds = bootstrap_rounds::<F>(matrix, config)?;
    let mut expected = [F::zero(); 6];
    for m in Metric::ALL {
        expected[m.slot()] = summarize(rounds.iter().map(|r| r[m.slot()])).mean;
    }
    if config.soft_chance == ChanceModel::LabelMarginals {
        let chance = expected_label_marginal::<F>(matrix, config)?;
        expected[Metric::SoftMatch.slot()] = chance;
        expected[Metric::Augmented.slot()] = chance;
    }
    let triple = |m: Metric| -> Result<MetricTriple<F>, AgreementError> {
        let (o, e) = (observed[m.slot()], expected[m.slot()]);
        let adjusted = match adjust_kappa(o, e) {
            Err(AgreementError::DegenerateExpected) if o >= F::one() => F::one(),
            r => r?,
        };
        Ok(MetricTriple {
            observed: o,
            expected: e,
            adjusted,
        })
    };
    let m = prepared(matrix, config);
    let layout = PairLayout::new(&m)?;
    let n_items = (0..m.n_tasks())
        .filter(|&i| (0..m.n_annotators()).filter(|&a| m.cell(i, a).is_some()).count() >= 2)
        .count();
    Ok(AgreementReport {
        soft_match: triple(Metric::SoftMatch)?,
        augmented: triple(Metric::Augmented)?,
        boot_match: triple(Metric::BootMatch)?,
        boot_recall: triple(Metric::BootRecall)?,
        boot_precision: triple(Metric::BootPrecision)?,
        boot_f1: triple(Metric::BootF1)?,
        n_items,
        n_annotators: m.n_annotators(),
        n_annotator_pairs: layout.pairs.len(),
        config: *config,
    })
}
