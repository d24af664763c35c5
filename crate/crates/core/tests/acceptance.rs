//! Acceptance criteria, one line of output per criterion.
//!
//! Runs with `harness = false`: `cargo test --test acceptance` prints a PASS/FAIL
//! line for each criterion and exits non-zero if any fails.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use dialrel_core::agreement::{
    adjust_kappa, agreement_report, expected_metric_bootstrap, observed_metric, AgreementConfig, Metric,
};
use dialrel_core::classifier::{
    cross_entropy, entropy, evaluate, fit_ridge_ovr, loco_folds, ClassifierConfig, TrainRow,
};
use dialrel_core::context::{
    build_rows, distribution_report, fit_ovr_logistic, likelihood_ratio_test, BinaryProblem, FeatureSpec,
    FitOptions, ObservationRow,
};
use dialrel_core::corpus::{ingest_transcripts, read_transcripts_file, MarkerConfig};
use dialrel_core::jsonl::read_jsonl_file;
use dialrel_core::linalg::{dot, Matrix};
use dialrel_core::pairs::{PairPolicy, PairStrategy};
use dialrel_core::segmenter::{segment_dialogue, SegmentationRules, SyntacticAnnotation, SyntaxIndex};
use dialrel_core::stats::chi_square_sf;
use dialrel_core::store::{Annotation, AnnotationStore, AppendLog, StoreConfig};
use dialrel_core::synth::{
    build_tasks, simulate_annotations, synth_embeddings, synth_transcripts, synthetic_timestamp, DialogueSpec,
    PlantedModel,
};
use dialrel_core::{LabelMatrix, LabelSet, PairType, RelationLabel, N_LABELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

// ---------------------------------------------------------------------------

fn kappa_table() -> Outcome {
    let rows = [
        ("soft-match", 0.43, 0.11, 0.36),
        ("augmented", 0.27, 0.11, 0.18),
        ("boot-match", 0.43, 0.21, 0.27),
        ("boot-rec.", 0.33, 0.14, 0.22),
        ("boot-prec.", 0.36, 0.17, 0.23),
        ("boot-F1", 0.32, 0.13, 0.21),
    ];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, o, e, published) in rows {
        let k: f64 = adjust_kappa(o, e).map_err(|e| e.to_string())?;
        worst = worst.max((k - published).abs());
        parts.push(format!("{name} {k:.3}"));
    }
    check(
        worst <= 0.01,
        format!("max |Δ| = {worst:.4}; {}", parts.join(", ")),
        format!("max |Δ| = {worst:.4} > 0.01; {}", parts.join(", ")),
    )
}

// ---------------------------------------------------------------------------

fn naive_score(metric: Metric, a: LabelSet, b: LabelSet) -> f64 {
    let i = a.intersection(b).len() as f64;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let div = |x: f64, y: f64| if y == 0.0 { 0.0 } else { x / y };
    match metric {
        Metric::SoftMatch | Metric::BootMatch => f64::from(u8::from(i > 0.0)),
        Metric::Augmented => div(i, na.max(nb)),
        Metric::BootPrecision => div(i, na),
        Metric::BootRecall => div(i, nb),
        Metric::BootF1 => {
            let (p, r) = (div(i, na), div(i, nb));
            div(2.0 * p * r, p + r)
        }
    }
}

/// Exact expected agreement when every populated cell is redrawn uniformly from its
/// annotator's observed sets: enumerate each co-annotated item's pool product.
fn enumerate_expected(m: &LabelMatrix, metric: Metric) -> f64 {
    let pools: Vec<Vec<LabelSet>> = (0..m.n_annotators()).map(|a| m.column_sets(a)).collect();
    let mut pair_means = Vec::new();
    for a in 0..m.n_annotators() {
        for b in a + 1..m.n_annotators() {
            let items: Vec<usize> = (0..m.n_tasks())
                .filter(|&i| m.cell(i, a).is_some() && m.cell(i, b).is_some())
                .collect();
            if items.is_empty() {
                continue;
            }
            let mut sum = 0.0;
            for _ in &items {
                let mut cell = 0.0;
                for &s in &pools[a] {
                    for &t in &pools[b] {
                        cell += naive_score(metric, s, t);
                    }
                }
                sum += cell / (pools[a].len() * pools[b].len()) as f64;
            }
            pair_means.push(sum / items.len() as f64);
        }
    }
    pair_means.iter().sum::<f64>() / pair_means.len() as f64
}

fn small_fixtures(n: usize) -> Vec<LabelMatrix> {
    let universe = [RelationLabel::Comment, RelationLabel::Elaboration, RelationLabel::Result];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();
    while out.len() < n {
        let annotators = rng.random_range(2..=3);
        let items = rng.random_range(1..=4);
        let cells: Vec<Vec<Option<LabelSet>>> = (0..items)
            .map(|_| {
                (0..annotators)
                    .map(|_| {
                        if rng.random_bool(0.1) {
                            return None;
                        }
                        let set: LabelSet = universe.iter().filter(|_| rng.random_bool(0.4)).copied().collect();
                        if set.is_empty() && rng.random_bool(0.7) {
                            Some(LabelSet::single(universe[rng.random_range(0..3)]))
                        } else {
                            Some(set)
                        }
                    })
                    .collect()
            })
            .collect();
        let m = LabelMatrix::from_cells(cells);
        let overlap = (0..m.n_tasks()).any(|i| (0..m.n_annotators()).filter(|&a| m.cell(i, a).is_some()).count() >= 2);
        if overlap {
            out.push(m);
        }
    }
    out
}

fn bootstrap_vs_enumeration() -> Outcome {
    let fixtures = small_fixtures(24);
    let cfg = AgreementConfig {
        n_resamples: 10_000,
        seed: 7,
        ..AgreementConfig::default()
    };
    let mut worst: (f64, usize, Metric) = (0.0, 0, Metric::SoftMatch);
    for (k, m) in fixtures.iter().enumerate() {
        for metric in Metric::ALL {
            let boot: f64 = expected_metric_bootstrap(m, metric, &cfg).map_err(|e| e.to_string())?;
            let exact = enumerate_expected(m, metric);
            let d = (boot - exact).abs();
            if d > worst.0 {
                worst = (d, k, metric);
            }
        }
    }
    let detail = format!(
        "{} fixtures × 6 metrics; max |Δ| = {:.4} (fixture {}, {})",
        fixtures.len(),
        worst.0,
        worst.1,
        worst.2.display_name()
    );
    check(worst.0 <= 0.02, detail.clone(), detail)
}

// ---------------------------------------------------------------------------

fn degenerate_laws() -> Outcome {
    use RelationLabel::*;
    let s = |ls: &[RelationLabel]| Some(ls.iter().copied().collect::<LabelSet>());
    let perfect = [
        LabelMatrix::from_cells(vec![vec![s(&[Comment]); 3], vec![s(&[Result]); 3], vec![s(&[Elaboration, Contrast]); 3]]),
        LabelMatrix::from_cells(vec![vec![s(&[Narration]); 2]; 5]),
        LabelMatrix::from_cells(vec![
            vec![s(&[Acknowledgement]), s(&[Acknowledgement]), None],
            vec![None, s(&[QuestionAnswerPair, Comment]), s(&[QuestionAnswerPair, Comment])],
            vec![s(&[Explanation]), s(&[Explanation]), s(&[Explanation])],
        ]),
    ];
    let cfg = AgreementConfig {
        n_resamples: 1000,
        seed: 1,
        ..AgreementConfig::default()
    };
    for (k, m) in perfect.iter().enumerate() {
        let r = agreement_report::<f64>(m, &cfg).map_err(|e| e.to_string())?;
        for metric in Metric::ALL {
            let t = r.get(metric);
            if t.observed != 1.0 || t.adjusted != 1.0 {
                return Err(format!(
                    "perfect matrix {k}: {} observed {} adjusted {}",
                    metric.display_name(),
                    t.observed,
                    t.adjusted
                ));
            }
        }
    }
    let disjoint = LabelMatrix::from_cells(vec![
        vec![s(&[Comment]), s(&[Result]), s(&[Elaboration])],
        vec![s(&[Contrast, Other]), s(&[Narration]), s(&[Background])],
    ]);
    let soft: f64 = observed_metric(&disjoint, Metric::SoftMatch, &cfg).map_err(|e| e.to_string())?;
    check(
        soft == 0.0,
        format!("{} perfect matrices give observed = adjusted = 1; disjoint soft-match = 0", perfect.len()),
        format!("disjoint soft-match observed {soft}"),
    )
}

// ---------------------------------------------------------------------------

fn context_code(pt: PairType) -> (u8, u8) {
    match pt {
        PairType::WithinTurn => (0, 1),
        PairType::CrossTurnDifferentSpeaker => (1, 0),
        PairType::CrossTurnSameSpeaker => (0, 0),
    }
}

fn obs_row(label: RelationLabel, pt: PairType, team: &str) -> ObservationRow {
    let (ds, wt) = context_code(pt);
    ObservationRow {
        label,
        different_speaker: ds,
        within_turn: wt,
        pair_type: pt,
        team_id: team.to_string(),
        task_id: String::new(),
        annotator_id: String::new(),
    }
}

fn logistic_recovery() -> Outcome {
    // Binary outcome: Comment with probability sigmoid(b0 + b1·ds + b2·wt), else Result.
    let truth = [-0.4, 1.1, -0.7];
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let rows: Vec<ObservationRow> = (0..5000)
        .map(|_| {
            let pt = PairType::ALL[rng.random_range(0..3)];
            let (ds, wt) = context_code(pt);
            let eta = truth[0] + truth[1] * f64::from(ds) + truth[2] * f64::from(wt);
            let p = 1.0 / (1.0 + (-eta).exp());
            obs_row(if rng.random_bool(p) { RelationLabel::Comment } else { RelationLabel::Result }, pt, "t")
        })
        .collect();
    let fit = fit_ovr_logistic::<f64>(&rows, FeatureSpec::CONTEXT, &FitOptions::default()).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (label, sign) in [(RelationLabel::Comment, 1.0), (RelationLabel::Result, -1.0)] {
        for (j, name) in ["intercept", "different_speaker", "within_turn"].iter().enumerate() {
            let got = fit.coefficient(label, name).ok_or("missing coefficient")?;
            worst = worst.max((got - sign * truth[j]).abs());
        }
    }

    // Finite differences on a design with continuous covariates and a penalty.
    let x: Vec<Vec<f64>> = (0..200)
        .map(|_| vec![1.0, rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), f64::from(rng.random_range(0..2u8))])
        .collect();
    let trials: Vec<f64> = (0..200).map(|_| f64::from(rng.random_range(1..8u8))).collect();
    let successes: Vec<f64> = trials.iter().map(|&t| f64::from(rng.random_range(0..=t as u8))).collect();
    let problem = BinaryProblem {
        x: Matrix::from_rows(&x),
        trials,
        successes,
        penalty: 0.3,
    };
    let mut worst_fd: f64 = 0.0;
    for _ in 0..10 {
        let beta: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
        let g = problem.gradient(&beta);
        for j in 0..4 {
            let (mut up, mut down) = (beta.clone(), beta.clone());
            up[j] += 1e-5;
            down[j] -= 1e-5;
            let fd = (problem.penalized_log_likelihood(&up) - problem.penalized_log_likelihood(&down)) / 2e-5;
            worst_fd = worst_fd.max((fd - g[j]).abs() / g[j].abs().max(1.0));
        }
    }
    let detail = format!("max coefficient error {worst:.4} (n=5000); max gradient relative error {worst_fd:.2e}");
    check(worst <= 0.15 && worst_fd <= 1e-4, detail.clone(), detail)
}

// ---------------------------------------------------------------------------

fn lrt_calibration() -> Outcome {
    let sf = chi_square_sf(3.841f64, 1);
    let labels: Vec<RelationLabel> = RelationLabel::ALL
        .iter()
        .copied()
        .filter(|&l| l != RelationLabel::Acknowledgement)
        .collect();
    let opts = FitOptions {
        labels: Some(labels.clone()),
        ..FitOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let reps = 1000;
    let mut stats = Vec::with_capacity(reps);
    let mut dfs = std::collections::BTreeSet::new();
    for _ in 0..reps {
        // Labels independent of context.
        let rows: Vec<ObservationRow> = (0..3000)
            .map(|_| obs_row(labels[rng.random_range(0..labels.len())], PairType::ALL[rng.random_range(0..3)], "t"))
            .collect();
        let base = fit_ovr_logistic::<f64>(&rows, FeatureSpec::BASE, &opts).map_err(|e| e.to_string())?;
        let ctx = fit_ovr_logistic::<f64>(&rows, FeatureSpec::CONTEXT, &opts).map_err(|e| e.to_string())?;
        let lrt = likelihood_ratio_test(&base, &ctx).map_err(|e| e.to_string())?;
        dfs.insert(lrt.df);
        stats.push(lrt.statistic);
    }
    let mean = stats.iter().sum::<f64>() / reps as f64;
    let df = *dfs.iter().next().ok_or("no replications")?;
    let rel = (mean - df as f64).abs() / df as f64;
    let detail = format!(
        "sf(3.841, 1) = {sf:.5}; df = {df} over 11 labels; null mean statistic {mean:.3} ({:.1}% from df, {reps} replications)",
        100.0 * rel
    );
    check(
        (sf - 0.05).abs() <= 0.0005 && dfs.len() == 1 && df == 22 && rel <= 0.05,
        detail.clone(),
        detail,
    )
}

// ---------------------------------------------------------------------------

fn planted_effect_end_to_end() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(314);
    let spec = DialogueSpec {
        n_dialogues: 10,
        min_turns: 60,
        max_turns: 80,
        ..DialogueSpec::default()
    };
    let transcripts = synth_transcripts(&spec, &mut rng);
    let dialogues = ingest_transcripts(transcripts.records, &MarkerConfig::default()).map_err(|e| e.to_string())?;
    let policy = PairPolicy {
        max_per_dialogue: Some(50),
        strategy: PairStrategy::Adjacency,
    };
    let tasks = build_tasks(&dialogues, &SyntaxIndex::new(transcripts.syntax), &SegmentationRules::default(), &policy)
        .map_err(|e| e.to_string())?;
    if tasks.len() != 500 {
        return Err(format!("generated {} tasks, expected 500", tasks.len()));
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = StoreConfig {
        sync_writes: false,
        ..StoreConfig::default()
    };
    let mut store = AnnotationStore::open(dir.path(), tasks.clone(), cfg).map_err(|e| e.to_string())?;
    let model = PlantedModel::default();
    simulate_annotations(&mut store, &model, &mut rng).map_err(|e| e.to_string())?;
    drop(store);
    // Analyze what was replayed from disk.
    let store = AnnotationStore::open(dir.path(), tasks, cfg).map_err(|e| e.to_string())?;
    let corpus = store.snapshot();
    let rows = build_rows(&corpus).map_err(|e| e.to_string())?;
    let base = fit_ovr_logistic::<f64>(&rows, FeatureSpec::BASE, &FitOptions::default()).map_err(|e| e.to_string())?;
    let ctx = fit_ovr_logistic::<f64>(&rows, FeatureSpec::CONTEXT, &FitOptions::default()).map_err(|e| e.to_string())?;
    let lrt = likelihood_ratio_test(&base, &ctx).map_err(|e| e.to_string())?;
    let dist = distribution_report::<f64>(&rows);
    let mut worst: f64 = 0.0;
    for c in &dist.contexts {
        let expected = model.expected_row_proportions(c.pair_type);
        for l in RelationLabel::ALL {
            worst = worst.max((c.proportions[&l] - expected[l.index()]).abs());
        }
    }
    let detail = format!(
        "500 tasks × 5 annotators, {} rows; LRT X²({}) = {:.1}, p = {:.2e}; max proportion error {worst:.4}",
        rows.len(),
        lrt.df,
        lrt.statistic,
        lrt.p_value
    );
    check(lrt.p_value < 0.001 && worst <= 0.03 && dist.contexts.len() == 3, detail.clone(), detail)
}

// ---------------------------------------------------------------------------

fn classifier_laws() -> Outcome {
    // 400 tasks × 5 annotators over 8 dialogues; labels cycle through all 12.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut latent = BTreeMap::new();
    let mut rows = Vec::new();
    for t in 0..400 {
        let task = format!("task{t:03}");
        let label = RelationLabel::ALL[t % N_LABELS];
        latent.insert(task.clone(), label);
        for a in 0..5 {
            let mut target = LabelSet::single(label);
            if rng.random_bool(0.3) {
                target.insert(RelationLabel::ALL[rng.random_range(0..N_LABELS)]);
            }
            rows.push(TrainRow {
                task_id: task.clone(),
                dialogue_id: format!("d{}", t % 8),
                annotator_id: format!("d{}-a{a}", t % 8),
                team_id: format!("team{}", t % 8),
                target,
                pair_type: PairType::ALL[t % 3],
            });
        }
    }
    let embeddings = synth_embeddings(&latent, 50, 4.0, 0.4, &mut rng);

    let folds = loco_folds(&rows).map_err(|e| e.to_string())?;
    let mut seen = vec![0usize; rows.len()];
    for f in &folds {
        for &i in &f.test {
            seen[i] += 1;
        }
        let held = &rows[f.test[0]].dialogue_id;
        if f.train.iter().any(|&i| &rows[i].dialogue_id == held) || f.test.iter().any(|&i| &rows[i].dialogue_id != held) {
            return Err(format!("fold {} leaks", f.dialogue_id));
        }
        if f.train.len() + f.test.len() != rows.len() {
            return Err(format!("fold {} does not cover all rows", f.dialogue_id));
        }
    }
    if seen.iter().any(|&c| c != 1) {
        return Err("test sets do not partition rows".into());
    }

    // Normal equations on the first fold's training data.
    let train: Vec<&TrainRow> = folds[0].train.iter().map(|&i| &rows[i]).collect();
    let alpha = 1.0;
    let model = fit_ridge_ovr(&train, &embeddings, alpha, true).map_err(|e| e.to_string())?;
    let xs: Vec<&[f64]> = train.iter().map(|r| embeddings.get(&r.task_id).unwrap()).collect();
    let n = xs.len() as f64;
    let d = embeddings.dim();
    let xbar: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let centered: Vec<Vec<f64>> = xs.iter().map(|x| x.iter().zip(&xbar).map(|(a, b)| a - b).collect()).collect();
    let mut residual: f64 = 0.0;
    for l in RelationLabel::ALL {
        let y: Vec<f64> = train.iter().map(|r| f64::from(u8::from(r.target.contains(l)))).collect();
        let ybar = y.iter().sum::<f64>() / n;
        let w = &model.weights[l.index()];
        let fitted: Vec<f64> = centered.iter().map(|c| dot(c, w)).collect();
        for j in 0..d {
            let lhs: f64 = centered.iter().zip(&fitted).map(|(c, f)| c[j] * f).sum::<f64>() + alpha * w[j];
            let rhs: f64 = centered.iter().zip(&y).map(|(c, yi)| c[j] * (yi - ybar)).sum();
            residual = residual.max((lhs - rhs).abs());
        }
    }

    // Gibbs' inequality on random pairs, some with zeros in the gold distribution.
    let mut gibbs_ok = true;
    for k in 0..1000 {
        let draw = |rng: &mut ChaCha8Rng, sparse: bool| {
            let raw: Vec<f64> = (0..N_LABELS)
                .map(|_| if sparse && rng.random_bool(0.5) { 0.0 } else { rng.random::<f64>() + 1e-3 })
                .collect();
            let z: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / z).collect::<Vec<f64>>()
        };
        let gold = draw(&mut rng, k % 2 == 0);
        let pred = draw(&mut rng, false);
        let h = entropy(&gold);
        if cross_entropy(&gold, &pred) < h - 1e-9 || (cross_entropy(&gold, &gold) - h).abs() > 1e-9 {
            gibbs_ok = false;
        }
        if gold != pred && cross_entropy(&gold, &pred) - h <= 1e-9 {
            gibbs_ok = false;
        }
    }

    let report = evaluate(&rows, &folds, &embeddings, &ClassifierConfig::default()).map_err(|e| e.to_string())?;
    let detail = format!(
        "{} folds partition {} rows; normal-equation residual {residual:.2e}; Gibbs {}; in-set recall {:.3}",
        folds.len(),
        rows.len(),
        if gibbs_ok { "holds on 1000 pairs" } else { "VIOLATED" },
        report.in_set_recall_overall
    );
    check(
        residual <= 1e-6 && gibbs_ok && report.in_set_recall_overall >= 0.90,
        detail.clone(),
        detail,
    )
}

// ---------------------------------------------------------------------------

fn segmentation_and_pairing() -> Outcome {
    let dir = fixtures_dir().join("recycling");
    let records = read_transcripts_file(&dir.join("transcripts.jsonl")).map_err(|e| e.to_string())?;
    let dialogues = ingest_transcripts(records, &MarkerConfig::default()).map_err(|e| e.to_string())?;
    let syntax: Vec<SyntacticAnnotation> = read_jsonl_file(&dir.join("syntax.jsonl")).map_err(|e| e.to_string())?;
    let edus = segment_dialogue(&dialogues[0], &SyntaxIndex::new(syntax), &SegmentationRules::default())
        .map_err(|e| e.to_string())?;
    let by_turn = |t: usize| edus.iter().filter(|e| e.turn_index == t).map(|e| e.text.as_str()).collect::<Vec<_>>();
    let expected: [(usize, &str, Vec<&str>); 3] = [
        (0, "Explanation", vec!["and they discontinued them", "because people were coming and dumping their trash in them."]),
        (
            2,
            "Elaboration",
            vec!["The city brought ought,", "you know,", "set tr-, separate trash cans", "and you separated your stuff"],
        ),
        (3, "Contrast", vec!["I don't work, though,", "but I used to work and,"]),
    ];
    for (turn, row, want) in &expected {
        if by_turn(*turn) != *want {
            return Err(format!("{row} row: got {:?}", by_turn(*turn)));
        }
    }

    let mut n_tasks = 0;
    let mut counts: HashMap<PairType, usize> = HashMap::new();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let spec = DialogueSpec {
            n_dialogues: 1,
            min_turns: 4,
            max_turns: 30,
            backchannel_rate: rng.random_range(0.0..0.5),
            marker_rate: rng.random_range(0.0..0.4),
        };
        let t = synth_transcripts(&spec, &mut rng);
        let ds = ingest_transcripts(t.records, &MarkerConfig::default()).map_err(|e| e.to_string())?;
        let strategy = if seed % 2 == 0 { PairStrategy::Adjacency } else { PairStrategy::AllCombinations };
        let policy = PairPolicy {
            max_per_dialogue: None,
            strategy,
        };
        let tasks = build_tasks(&ds, &SyntaxIndex::new(t.syntax), &SegmentationRules::default(), &policy)
            .map_err(|e| e.to_string())?;
        let d = &ds[0];
        for task in &tasks {
            let (p1, p2) = (&task.pi1, &task.pi2);
            let speaker = |turn: usize| d.turns[turn].speaker.as_str();
            let ok = match task.pair_type {
                PairType::WithinTurn => {
                    p1.turn_start == p1.turn_end
                        && p2.turn_start == p2.turn_end
                        && p1.turn_end == p2.turn_start
                        && p1.end_token <= p2.start_token
                }
                PairType::CrossTurnDifferentSpeaker => {
                    p2.turn_start == p1.turn_end + 1 && speaker(p1.turn_end) != speaker(p2.turn_start)
                }
                PairType::CrossTurnSameSpeaker => {
                    p2.turn_start == p1.turn_end + 2 && speaker(p1.turn_end) == speaker(p2.turn_start)
                }
            };
            if !ok || task.recomputed_pair_type() != Some(task.pair_type) {
                return Err(format!("seed {seed}: task {} violates {}", task.task_id, task.pair_type));
            }
            *counts.entry(task.pair_type).or_default() += 1;
        }
        n_tasks += tasks.len();
    }
    check(
        counts.len() == 3,
        format!(
            "Explanation/Elaboration/Contrast boundaries exact; {n_tasks} pairs over 100 random dialogues satisfy adjacency ({} within, {} cross-same, {} cross-diff)",
            counts.get(&PairType::WithinTurn).unwrap_or(&0),
            counts.get(&PairType::CrossTurnSameSpeaker).unwrap_or(&0),
            counts.get(&PairType::CrossTurnDifferentSpeaker).unwrap_or(&0)
        ),
        format!("not every pair type occurred: {counts:?}"),
    )
}

// ---------------------------------------------------------------------------

fn store_durability() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let t = synth_transcripts(
        &DialogueSpec {
            n_dialogues: 1,
            min_turns: 40,
            max_turns: 40,
            ..DialogueSpec::default()
        },
        &mut rng,
    );
    let dialogues = ingest_transcripts(t.records, &MarkerConfig::default()).map_err(|e| e.to_string())?;
    let tasks = build_tasks(&dialogues, &SyntaxIndex::new(t.syntax), &SegmentationRules::default(), &PairPolicy::default())
        .map_err(|e| e.to_string())?;
    let n = tasks.len().min(30);

    // Reference run: record n annotations and keep the exact log lines.
    let reference = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut store = AnnotationStore::open(reference.path(), tasks.clone(), StoreConfig::default()).map_err(|e| e.to_string())?;
    store.assign_team("team", &dialogues[0].dialogue_id).map_err(|e| e.to_string())?;
    store.register_annotator("ann", "team").map_err(|e| e.to_string())?;
    let mut recorded: Vec<Annotation> = Vec::new();
    for (k, task) in tasks.iter().take(n).enumerate() {
        let ann = Annotation {
            task_id: task.task_id.clone(),
            annotator_id: "ann".into(),
            labels: LabelSet::single(RelationLabel::ALL[k % N_LABELS]),
            confidence: Some((k % 5 + 1) as u8),
            rejected: false,
            ts: synthetic_timestamp(k),
        };
        store.record_annotation(ann.clone()).map_err(|e| e.to_string())?;
        recorded.push(ann);
    }
    let paths: Vec<PathBuf> = store.log_paths().ok_or("no log paths")?.iter().map(|p| p.to_path_buf()).collect();
    drop(store);
    let lines: Vec<Vec<u8>> = recorded.iter().map(AppendLog::<Annotation>::encode).collect();
    let replayed_full = AnnotationStore::open(reference.path(), tasks.clone(), StoreConfig::default())
        .map_err(|e| e.to_string())?
        .history()
        .to_vec();
    if replayed_full != recorded {
        return Err("clean replay differs from recorded annotations".into());
    }

    // Crash points: k complete records followed by a prefix of record k.
    for point in 0..50 {
        let k = rng.random_range(0..n);
        let cut = rng.random_range(0..lines[k].len());
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        for p in &paths[..2] {
            fs::copy(p, dir.path().join(p.file_name().unwrap())).map_err(|e| e.to_string())?;
        }
        let mut bytes: Vec<u8> = lines[..k].concat();
        bytes.extend_from_slice(&lines[k][..cut]);
        fs::write(dir.path().join(paths[2].file_name().unwrap()), &bytes).map_err(|e| e.to_string())?;

        let mut store = AnnotationStore::open(dir.path(), tasks.clone(), StoreConfig::default())
            .map_err(|e| format!("crash point {point}: replay failed: {e}"))?;
        if store.history() != &recorded[..k] {
            return Err(format!("crash point {point} (record {k}, byte {cut}): replay differs"));
        }
        // The recovered log must accept the interrupted record and replay it intact.
        store.record_annotation(recorded[k].clone()).map_err(|e| e.to_string())?;
        drop(store);
        let again = AnnotationStore::open(dir.path(), tasks.clone(), StoreConfig::default()).map_err(|e| e.to_string())?;
        if again.history() != &recorded[..=k] {
            return Err(format!("crash point {point}: re-recorded record not replayed"));
        }
    }
    Ok(format!("50 crash points over {n} records: no torn record replayed; recorded == replayed"))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 9] = [
        ("kappa consistency with published agreement table", Duration::from_secs(1), kappa_table),
        ("bootstrap vs exact enumeration", Duration::from_secs(60), bootstrap_vs_enumeration),
        ("degenerate agreement laws", Duration::from_secs(1), degenerate_laws),
        ("logistic recovery and gradient check", Duration::from_secs(30), logistic_recovery),
        ("LRT calibration", Duration::from_secs(120), lrt_calibration),
        ("planted-effect end to end", Duration::from_secs(120), planted_effect_end_to_end),
        ("classifier laws", Duration::from_secs(60), classifier_laws),
        ("segmentation and pairing invariants", Duration::from_secs(5), segmentation_and_pairing),
        ("store durability under crash injection", Duration::from_secs(30), store_durability),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let over = elapsed > budget;
        let (status, detail) = match (&outcome, over) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d}; exceeded {:.0?} budget", budget)),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} {name} [{:.2}s] {detail}", elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
