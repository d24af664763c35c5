//! How relation use varies with discourse context.
//!
//! Annotations expand into one [`ObservationRow`] per selected label. Those rows
//! feed a per-context label distribution, labels-per-pair summaries with t tests,
//! and one-vs-rest logistic regressions compared by likelihood-ratio tests.
//!
//! Context is coded with two indicators, `different_speaker` and `within_turn`;
//! cross-turn same-speaker pairs are the reference level. Team effects use one
//! indicator per team except the first in sorted order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{RelationLabel, N_LABELS};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::pairs::PairType;
use crate::scalar::Scalar;
use crate::stats::{chi_square_sf, two_sample_t, StatsError, TTestResult};
use crate::store::AnnotatedCorpus;

#[derive(Debug, Error, PartialEq)]
pub enum ContextError {
    #[error("no annotations to group")]
    EmptyGroup,
    #[error("annotation refers to unknown task {0}")]
    UnknownTask(String),
    #[error("annotator {0} has no team")]
    UnknownAnnotator(String),
    #[error("no observation rows")]
    NoRows,
    #[error("label {label}: fit did not converge to finite coefficients (separation)")]
    Separation { label: RelationLabel },
    #[error("label {label}: design matrix is rank deficient")]
    RankDeficient { label: RelationLabel },
    #[error("fits are not nested: {0}")]
    NotNested(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

impl ContextError {
    pub fn code(&self) -> &'static str {
        match self {
            ContextError::EmptyGroup => "empty_group",
            ContextError::UnknownTask(_) => "unknown_task",
            ContextError::UnknownAnnotator(_) => "unknown_annotator",
            ContextError::NoRows => "no_rows",
            ContextError::Separation { .. } => "separation",
            ContextError::RankDeficient { .. } => "rank_deficient",
            ContextError::NotNested(_) => "not_nested",
            ContextError::Stats(StatsError::ZeroVariance) => "zero_variance",
            ContextError::Stats(StatsError::TooFewObservations { .. }) => "too_few_observations",
        }
    }
}

/// One selected label of one annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationRow {
    pub label: RelationLabel,
    pub different_speaker: u8,
    pub within_turn: u8,
    pub pair_type: PairType,
    pub team_id: String,
    pub task_id: String,
    pub annotator_id: String,
}

fn context_code(pair_type: PairType) -> (u8, u8) {
    match pair_type {
        PairType::WithinTurn => (0, 1),
        PairType::CrossTurnDifferentSpeaker => (1, 0),
        PairType::CrossTurnSameSpeaker => (0, 0),
    }
}

/// Expands non-rejected annotations into rows, in annotation order then label order.
pub fn build_rows(corpus: &AnnotatedCorpus) -> Result<Vec<ObservationRow>, ContextError> {
    let tasks = corpus.task_index();
    let mut rows = Vec::new();
    for ann in corpus.annotations.iter().filter(|a| !a.rejected) {
        let task = tasks
            .get(ann.task_id.as_str())
            .ok_or_else(|| ContextError::UnknownTask(ann.task_id.clone()))?;
        let team = corpus
            .annotator_teams
            .get(&ann.annotator_id)
            .ok_or_else(|| ContextError::UnknownAnnotator(ann.annotator_id.clone()))?;
        let (different_speaker, within_turn) = context_code(task.pair_type);
        for label in ann.labels.iter() {
            rows.push(ObservationRow {
                label,
                different_speaker,
                within_turn,
                pair_type: task.pair_type,
                team_id: team.clone(),
                task_id: ann.task_id.clone(),
                annotator_id: ann.annotator_id.clone(),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Team,
    Annotator,
}

/// Label counts per task unit, summarized by context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelsPerPair<F> {
    pub grouping: Grouping,
    pub means: BTreeMap<PairType, F>,
    /// One value per (task, group) unit.
    pub samples: BTreeMap<PairType, Vec<F>>,
}

impl<F: Scalar> LabelsPerPair<F> {
    pub fn overall_mean(&self) -> F {
        let all: Vec<F> = self.samples.values().flatten().copied().collect();
        crate::scalar::mean(&all).unwrap_or_else(F::zero)
    }

    /// Pooled-variance t test of context `a` against context `b`.
    pub fn compare(&self, a: PairType, b: PairType) -> Result<TTestResult<F>, ContextError> {
        let empty = Vec::new();
        let xs = self.samples.get(&a).unwrap_or(&empty);
        let ys = self.samples.get(&b).unwrap_or(&empty);
        Ok(two_sample_t(xs, ys)?)
    }
}

/// Mean number of selected labels per task, where a unit is a (task, team) sum
/// or a single (task, annotator) annotation. Rejected annotations are skipped.
pub fn labels_per_pair<F: Scalar>(corpus: &AnnotatedCorpus, grouping: Grouping) -> Result<LabelsPerPair<F>, ContextError> {
    let tasks = corpus.task_index();
    let mut units: BTreeMap<(PairType, &str, &str), usize> = BTreeMap::new();
    for ann in corpus.annotations.iter().filter(|a| !a.rejected) {
        let task = tasks
            .get(ann.task_id.as_str())
            .ok_or_else(|| ContextError::UnknownTask(ann.task_id.clone()))?;
        let group = match grouping {
            Grouping::Annotator => ann.annotator_id.as_str(),
            Grouping::Team => corpus
                .annotator_teams
                .get(&ann.annotator_id)
                .ok_or_else(|| ContextError::UnknownAnnotator(ann.annotator_id.clone()))?
                .as_str(),
        };
        *units.entry((task.pair_type, ann.task_id.as_str(), group)).or_default() += ann.labels.len();
    }
    if units.is_empty() {
        return Err(ContextError::EmptyGroup);
    }
    let mut samples: BTreeMap<PairType, Vec<F>> = BTreeMap::new();
    for ((pt, _, _), n) in units {
        samples.entry(pt).or_default().push(F::of_usize(n));
    }
    let means = samples
        .iter()
        .map(|(pt, v)| (*pt, crate::scalar::mean(v).expect("non-empty")))
        .collect();
    Ok(LabelsPerPair {
        grouping,
        means,
        samples,
    })
}

/// Which covariates enter the model besides the intercept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub context: bool,
    pub teams: bool,
}

impl FeatureSpec {
    pub const BASE: FeatureSpec = FeatureSpec {
        context: false,
        teams: false,
    };
    pub const CONTEXT: FeatureSpec = FeatureSpec {
        context: true,
        teams: false,
    };
    pub const CONTEXT_AND_TEAMS: FeatureSpec = FeatureSpec {
        context: true,
        teams: true,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions<F> {
    /// Ridge penalty on every coefficient except the intercept.
    pub penalty: F,
    pub max_iter: usize,
    pub grad_tol: F,
    /// Largest coefficient magnitude accepted before a fit is declared separated.
    pub separation_bound: F,
    /// Labels to model; `None` models every label present in the rows.
    pub labels: Option<Vec<RelationLabel>>,
}

impl<F: Scalar> Default for FitOptions<F> {
    fn default() -> Self {
        FitOptions {
            penalty: F::zero(),
            max_iter: 200,
            grad_tol: F::lit(1e-8),
            separation_bound: F::lit(15.0),
            labels: None,
        }
    }
}

/// Grouped-binomial logistic regression: row `i` carries `trials[i]` Bernoulli
/// draws with `successes[i]` ones at covariates `x.row(i)`. Column 0 is the
/// intercept and is never penalized.
#[derive(Debug, Clone)]
pub struct BinaryProblem<F> {
    pub x: Matrix<F>,
    pub trials: Vec<F>,
    pub successes: Vec<F>,
    pub penalty: F,
}

fn softplus<F: Scalar>(eta: F) -> F {
    eta.max(F::zero()) + (-eta.abs()).exp().ln_1p()
}

fn sigmoid<F: Scalar>(eta: F) -> F {
    if eta >= F::zero() {
        F::one() / (F::one() + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (F::one() + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFit<F> {
    pub beta: Vec<F>,
    pub std_errors: Vec<F>,
    /// Unpenalized log-likelihood at `beta`.
    pub log_likelihood: F,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryFitError {
    Separation,
    RankDeficient,
}

impl<F: Scalar> BinaryProblem<F> {
    pub fn n_params(&self) -> usize {
        self.x.cols()
    }

    fn penalty_term(&self, beta: &[F]) -> F {
        F::lit(0.5) * self.penalty * beta[1..].iter().map(|&b| b * b).sum::<F>()
    }

    /// Unpenalized binomial log-likelihood (the binomial coefficient is omitted).
    pub fn log_likelihood(&self, beta: &[F]) -> F {
        (0..self.x.rows())
            .map(|i| {
                let eta = dot(self.x.row(i), beta);
                self.successes[i] * eta - self.trials[i] * softplus(eta)
            })
            .sum()
    }

    /// Objective maximized by [`BinaryProblem::fit`].
    pub fn penalized_log_likelihood(&self, beta: &[F]) -> F {
        self.log_likelihood(beta) - self.penalty_term(beta)
    }

    /// Gradient of the penalized log-likelihood.
    pub fn gradient(&self, beta: &[F]) -> Vec<F> {
        let mut g = vec![F::zero(); beta.len()];
        for i in 0..self.x.rows() {
            let row = self.x.row(i);
            let r = self.successes[i] - self.trials[i] * sigmoid(dot(row, beta));
            for (gj, &xj) in g.iter_mut().zip(row) {
                *gj += r * xj;
            }
        }
        for j in 1..g.len() {
            g[j] -= self.penalty * beta[j];
        }
        g
    }

    /// Negative Hessian of the penalized log-likelihood.
    pub fn information(&self, beta: &[F]) -> Matrix<F> {
        let p = beta.len();
        let mut h = Matrix::zeros(p, p);
        for i in 0..self.x.rows() {
            let row = self.x.row(i);
            let mu = sigmoid(dot(row, beta));
            h.add_outer(row, self.trials[i] * mu * (F::one() - mu));
        }
        for j in 1..p {
            h[(j, j)] += self.penalty;
        }
        h
    }

    /// Newton iterations with step halving, started from the intercept-only MLE.
    pub fn fit(&self, opts: &FitOptions<F>) -> Result<BinaryFit<F>, BinaryFitError> {
        let p = self.n_params();
        let total: F = self.trials.iter().copied().sum();
        let hits: F = self.successes.iter().copied().sum();
        if hits <= F::zero() || hits >= total {
            return Err(BinaryFitError::Separation);
        }
        let mut beta = vec![F::zero(); p];
        beta[0] = (hits / (total - hits)).ln();
        // The tolerance cannot go below the rounding level of a sum over all trials.
        let tol = opts.grad_tol.max(F::epsilon() * total * F::lit(16.0));
        let mut objective = self.penalized_log_likelihood(&beta);
        let mut converged = false;
        let mut iterations = 0;
        let mut chol = None;
        while iterations < opts.max_iter {
            let g = self.gradient(&beta);
            let info = self.information(&beta);
            let factor = Cholesky::factor(&info).map_err(|_| BinaryFitError::RankDeficient)?;
            if dot(&g, &g).sqrt() <= tol {
                converged = true;
                chol = Some(factor);
                break;
            }
            let delta = factor.solve(&g);
            iterations += 1;
            let slack = F::epsilon() * F::lit(64.0) * objective.abs().max(F::one());
            let mut step = F::one();
            let mut accepted = false;
            while step > F::lit(1e-10) {
                let trial: Vec<F> = beta.iter().zip(&delta).map(|(&b, &d)| b + step * d).collect();
                let value = self.penalized_log_likelihood(&trial);
                if value.is_finite() && value >= objective - slack {
                    beta = trial;
                    objective = value;
                    accepted = true;
                    break;
                }
                step *= F::lit(0.5);
            }
            if !accepted {
                break;
            }
        }
        if !converged || beta.iter().any(|b| !b.is_finite() || b.abs() > opts.separation_bound) {
            return Err(BinaryFitError::Separation);
        }
        let chol = chol.expect("set on convergence");
        let std_errors = (0..p)
            .map(|j| {
                let mut e = vec![F::zero(); p];
                e[j] = F::one();
                chol.solve(&e)[j].sqrt()
            })
            .collect();
        Ok(BinaryFit {
            log_likelihood: self.log_likelihood(&beta),
            beta,
            std_errors,
            iterations,
            converged,
        })
    }
}

/// Distinct covariate rows with their multiplicities per label.
struct GroupedDesign<F> {
    feature_names: Vec<String>,
    dropped_features: Vec<String>,
    x: Matrix<F>,
    trials: Vec<F>,
    label_counts: Vec<[usize; N_LABELS]>,
}

fn grouped_design<F: Scalar>(rows: &[ObservationRow], spec: FeatureSpec) -> GroupedDesign<F> {
    let teams: Vec<&str> = rows
        .iter()
        .map(|r| r.team_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut names = vec!["intercept".to_string()];
    if spec.context {
        names.push("different_speaker".into());
        names.push("within_turn".into());
    }
    if spec.teams {
        names.extend(teams.iter().skip(1).map(|t| format!("team:{t}")));
    }
    let team_pos: HashMap<&str, usize> = teams.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let encode = |r: &ObservationRow| -> Vec<u8> {
        let mut v = vec![1u8];
        if spec.context {
            v.push(r.different_speaker);
            v.push(r.within_turn);
        }
        if spec.teams {
            let k = team_pos[r.team_id.as_str()];
            v.extend((1..teams.len()).map(|j| u8::from(j == k)));
        }
        v
    };
    let mut groups: BTreeMap<Vec<u8>, [usize; N_LABELS]> = BTreeMap::new();
    for r in rows {
        groups.entry(encode(r)).or_insert([0; N_LABELS])[r.label.index()] += 1;
    }
    // Empty categories give all-zero columns; drop them.
    let keep: Vec<usize> = (0..names.len())
        .filter(|&j| j == 0 || groups.keys().any(|k| k[j] != 0))
        .collect();
    let dropped_features = (0..names.len())
        .filter(|j| !keep.contains(j))
        .map(|j| names[j].clone())
        .collect();
    let x_rows: Vec<Vec<F>> = groups
        .keys()
        .map(|k| keep.iter().map(|&j| F::of_usize(k[j] as usize)).collect())
        .collect();
    GroupedDesign {
        feature_names: keep.iter().map(|&j| names[j].clone()).collect(),
        dropped_features,
        x: Matrix::from_rows(&x_rows),
        trials: groups.values().map(|c| F::of_usize(c.iter().sum())).collect(),
        label_counts: groups.into_values().collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFit<F> {
    pub label: RelationLabel,
    pub coefficients: Vec<F>,
    pub std_errors: Vec<F>,
    pub log_likelihood: F,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<F> {
    pub spec: FeatureSpec,
    pub feature_names: Vec<String>,
    pub dropped_features: Vec<String>,
    pub per_label: Vec<LabelFit<F>>,
    pub log_likelihood: F,
    /// Feature count × number of modeled labels.
    pub n_params: usize,
    pub n_rows: usize,
    pub converged: bool,
    pub penalty: F,
    pub notes: Vec<String>,
}

impl<F: Scalar> FitResult<F> {
    pub fn labels(&self) -> Vec<RelationLabel> {
        self.per_label.iter().map(|l| l.label).collect()
    }

    pub fn coefficient(&self, label: RelationLabel, feature: &str) -> Option<F> {
        let j = self.feature_names.iter().position(|n| n == feature)?;
        self.per_label.iter().find(|l| l.label == label).map(|l| l.coefficients[j])
    }

    /// One row per label, one column per feature, two decimals.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("label");
        for n in &self.feature_names {
            out.push('\t');
            out.push_str(n);
        }
        out.push('\n');
        for l in &self.per_label {
            out.push_str(l.label.name());
            for c in &l.coefficients {
                let _ = write!(out, "\t{:.2}", c.to_f64_lossy());
            }
            out.push('\n');
        }
        out
    }
}

/// One binary logistic model per label (label versus all other rows), fit
/// independently; the total log-likelihood is the sum over labels.
pub fn fit_ovr_logistic<F: Scalar>(
    rows: &[ObservationRow],
    spec: FeatureSpec,
    opts: &FitOptions<F>,
) -> Result<FitResult<F>, ContextError> {
    if rows.is_empty() {
        return Err(ContextError::NoRows);
    }
    let design = grouped_design::<F>(rows, spec);
    let labels: Vec<RelationLabel> = match &opts.labels {
        Some(ls) => ls.clone(),
        None => {
            let present: BTreeSet<RelationLabel> = rows.iter().map(|r| r.label).collect();
            present.into_iter().collect()
        }
    };
    let fits: Vec<Result<LabelFit<F>, ContextError>> = labels
        .par_iter()
        .map(|&label| {
            let problem = BinaryProblem {
                x: design.x.clone(),
                trials: design.trials.clone(),
                successes: design
                    .label_counts
                    .iter()
                    .map(|c| F::of_usize(c[label.index()]))
                    .collect(),
                penalty: opts.penalty,
            };
            let fit = problem.fit(opts).map_err(|e| match e {
                BinaryFitError::Separation => ContextError::Separation { label },
                BinaryFitError::RankDeficient => ContextError::RankDeficient { label },
            })?;
            Ok(LabelFit {
                label,
                coefficients: fit.beta,
                std_errors: fit.std_errors,
                log_likelihood: fit.log_likelihood,
                iterations: fit.iterations,
            })
        })
        .collect();
    let per_label = fits.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut notes = Vec::new();
    if labels.contains(&RelationLabel::Acknowledgement) {
        notes.push("Acknowledgement is modeled like every other label".to_string());
    }
    if opts.penalty > F::zero() {
        notes.push(format!(
            "penalized fit (penalty {}); likelihood-ratio p-values assume unpenalized estimates",
            opts.penalty
        ));
    }
    Ok(FitResult {
        spec,
        n_params: design.feature_names.len() * per_label.len(),
        feature_names: design.feature_names,
        dropped_features: design.dropped_features,
        log_likelihood: per_label.iter().map(|l| l.log_likelihood).sum(),
        per_label,
        n_rows: rows.len(),
        converged: true,
        penalty: opts.penalty,
        notes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrtResult<F> {
    pub statistic: F,
    pub df: usize,
    pub p_value: F,
    pub penalized: bool,
}

/// `2·(ll_alt − ll_null)` against chi-square with the difference in parameters.
pub fn likelihood_ratio_test<F: Scalar>(null: &FitResult<F>, alt: &FitResult<F>) -> Result<LrtResult<F>, ContextError> {
    if null.n_rows != alt.n_rows {
        return Err(ContextError::NotNested(format!(
            "fits use {} and {} rows",
            null.n_rows, alt.n_rows
        )));
    }
    if null.labels() != alt.labels() {
        return Err(ContextError::NotNested("fits model different labels".into()));
    }
    if alt.n_params <= null.n_params {
        return Err(ContextError::NotNested(format!(
            "alternative has {} parameters, null has {}",
            alt.n_params, null.n_params
        )));
    }
    let diff = alt.log_likelihood - null.log_likelihood;
    if diff < -F::lit(1e-6) {
        return Err(ContextError::NotNested(format!(
            "alternative log-likelihood is lower by {}",
            -diff
        )));
    }
    let statistic = (F::lit(2.0) * diff).max(F::zero());
    let df = alt.n_params - null.n_params;
    Ok(LrtResult {
        statistic,
        df,
        p_value: chi_square_sf(statistic, df),
        penalized: null.penalty > F::zero() || alt.penalty > F::zero(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextDistribution<F> {
    pub pair_type: PairType,
    pub total: usize,
    pub counts: BTreeMap<RelationLabel, usize>,
    pub proportions: BTreeMap<RelationLabel, F>,
}

/// Label counts and proportions per context; contexts without rows are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport<F> {
    pub contexts: Vec<ContextDistribution<F>>,
}

pub fn distribution_report<F: Scalar>(rows: &[ObservationRow]) -> DistributionReport<F> {
    let mut counts: BTreeMap<PairType, [usize; N_LABELS]> = BTreeMap::new();
    for r in rows {
        counts.entry(r.pair_type).or_insert([0; N_LABELS])[r.label.index()] += 1;
    }
    let contexts = counts
        .into_iter()
        .map(|(pair_type, c)| {
            let total: usize = c.iter().sum();
            ContextDistribution {
                pair_type,
                total,
                counts: RelationLabel::ALL.iter().map(|&l| (l, c[l.index()])).collect(),
                proportions: RelationLabel::ALL
                    .iter()
                    .map(|&l| (l, F::of_usize(c[l.index()]) / F::of_usize(total)))
                    .collect(),
            }
        })
        .collect();
    DistributionReport { contexts }
}

const BAR_COLORS: [&str; 3] = ["#4c72b0", "#dd8452", "#55a868"];

impl<F: Scalar> DistributionReport<F> {
    pub fn context(&self, pair_type: PairType) -> Option<&ContextDistribution<F>> {
        self.contexts.iter().find(|c| c.pair_type == pair_type)
    }

    /// `pair_type  label  count  proportion` with four-decimal proportions.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("pair_type\tlabel\tcount\tproportion\n");
        for c in &self.contexts {
            for l in RelationLabel::ALL {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{:.4}",
                    c.pair_type,
                    l.name(),
                    c.counts[&l],
                    c.proportions[&l].to_f64_lossy()
                );
            }
        }
        out
    }

    /// Horizontal grouped bar chart, one group per label, one bar per context,
    /// annotated with counts.
    pub fn to_svg(&self) -> String {
        let (left, top, bar_h, gap, width) = (160.0, 40.0, 9.0, 8.0, 420.0);
        let n_ctx = self.contexts.len().max(1) as f64;
        let group_h = bar_h * n_ctx + gap;
        let height = top + group_h * N_LABELS as f64 + 30.0;
        let max_p = self
            .contexts
            .iter()
            .flat_map(|c| c.proportions.values())
            .map(|p| p.to_f64_lossy())
            .fold(0.0, f64::max)
            .max(1e-9);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif" font-size="10">"#,
            left + width + 60.0
        );
        for (k, c) in self.contexts.iter().enumerate() {
            let x = left + 130.0 * k as f64;
            let color = BAR_COLORS[k % BAR_COLORS.len()];
            let _ = writeln!(s, r#"<rect x="{x}" y="12" width="10" height="10" fill="{color}"/>"#);
            let _ = writeln!(s, r#"<text x="{}" y="21">{}</text>"#, x + 14.0, c.pair_type);
        }
        for (i, l) in RelationLabel::ALL.iter().enumerate() {
            let y0 = top + group_h * i as f64;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                left - 6.0,
                y0 + bar_h * n_ctx / 2.0 + 3.0,
                l.name()
            );
            for (k, c) in self.contexts.iter().enumerate() {
                let p = c.proportions[l].to_f64_lossy();
                let w = width * p / max_p;
                let y = y0 + bar_h * k as f64;
                let color = BAR_COLORS[k % BAR_COLORS.len()];
                let _ = writeln!(
                    s,
                    r#"<rect x="{left}" y="{y}" width="{w:.2}" height="{}" fill="{color}"/>"#,
                    bar_h - 1.0
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{}">{}</text>"#,
                    left + w + 3.0,
                    y + bar_h - 2.0,
                    c.counts[l]
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#,
            height - 30.0
        );
        s.push_str("</svg>\n");
        s
    }
}
