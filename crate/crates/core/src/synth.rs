//! Synthetic dialogues, annotations and embeddings with planted structure.
//!
//! Used by tests and by the `synth-corpus` / `simulate-annotations` commands to
//! exercise the pipeline where the generating distributions are known.

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classifier::EmbeddingTable;
use crate::corpus::{normalize_turn, word_key, Dialogue, MarkerConfig, TokenKind, TurnRecord};
use crate::labels::{LabelSet, RelationLabel, N_LABELS};
use crate::pairs::{generate_pairs, AnnotationTask, PairPolicy, PairType};
use crate::segmenter::{segment_dialogue, DiscourseUnit, SegmentError, SegmentationRules, SyntacticAnnotation, SyntaxIndex};
use crate::store::{Annotation, AnnotationStore, StoreError};

const SUBJECTS: &[&str] = &["I", "we", "they", "my sister", "the city", "people", "you", "my husband"];
const VERBS: &[&str] = &[
    "work", "find", "bought", "like", "recycle", "pay", "live", "collect", "separated", "started", "moved", "drive",
];
const OBJECTS: &[&str] = &[
    "friends", "the cans", "the trash", "a nickel", "it", "the kids", "downtown", "every week", "the paper", "that",
];
const CONNECTIVES: &[&str] = &["and", "but", "because", "so"];
const BACKCHANNELS: &[&str] = &["Okay.", "Uh-huh.", "Yeah.", "Right.", "Oh, really?"];
const TOPICS: &[&str] = &["recycling", "childcare", "gun control", "vacations", "music"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DialogueSpec {
    pub n_dialogues: usize,
    pub min_turns: usize,
    pub max_turns: usize,
    /// Probability that a turn is a bare backchannel.
    pub backchannel_rate: f64,
    /// Probability of a disfluency, laughter, parenthetical or restart per clause.
    pub marker_rate: f64,
}

impl Default for DialogueSpec {
    fn default() -> Self {
        DialogueSpec {
            n_dialogues: 10,
            min_turns: 24,
            max_turns: 40,
            backchannel_rate: 0.25,
            marker_rate: 0.15,
        }
    }
}

/// Turn records plus the per-turn verb/root sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTranscripts {
    pub records: Vec<TurnRecord>,
    pub syntax: Vec<SyntacticAnnotation>,
}

fn pick<'a, R: Rng + ?Sized>(rng: &mut R, items: &[&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

fn clause<R: Rng + ?Sized>(rng: &mut R, marker_rate: f64) -> String {
    let subject = pick(rng, SUBJECTS);
    let verb = pick(rng, VERBS);
    let object = pick(rng, OBJECTS);
    if rng.random_bool(marker_rate) {
        match rng.random_range(0..3) {
            0 => format!("uh {subject} {verb} {object}"),
            1 => format!("{subject} {verb} {object} [laughter]"),
            _ => {
                let cut: String = object.chars().take(2).collect();
                format!("{subject} {verb} {cut}-, {object}")
            }
        }
    } else {
        format!("{subject} {verb} {object}")
    }
}

fn turn_text<R: Rng + ?Sized>(rng: &mut R, spec: &DialogueSpec) -> String {
    if rng.random_bool(spec.backchannel_rate) {
        return pick(rng, BACKCHANNELS).to_string();
    }
    let n_clauses = rng.random_range(1..=4);
    let mut text = clause(rng, spec.marker_rate);
    for _ in 1..n_clauses {
        if rng.random_bool(spec.marker_rate) {
            text.push_str(", you know,");
        }
        text.push(' ');
        text.push_str(pick(rng, CONNECTIVES));
        text.push(' ');
        text.push_str(&clause(rng, spec.marker_rate));
    }
    let mut chars = text.chars();
    let first = chars.next().map(|c| c.to_uppercase().collect::<String>()).unwrap_or_default();
    format!("{first}{}{}", chars.as_str(), if rng.random_bool(0.15) { "?" } else { "." })
}

/// Verb flags from the verb lexicon; the first verb (or the first word of a
/// verbless turn) is the root.
fn syntax_for(dialogue_id: &str, turn_index: usize, text: &str) -> SyntacticAnnotation {
    let tokens = normalize_turn(text, &MarkerConfig::default()).expect("generated text has closed brackets");
    let words: Vec<String> = tokens
        .iter()
        .filter(|t| t.kind == TokenKind::Word)
        .map(|t| word_key(&t.surface))
        .collect();
    let is_verb: Vec<bool> = words.iter().map(|w| VERBS.contains(&w.as_str())).collect();
    let root = is_verb.iter().position(|&v| v).unwrap_or(0);
    let is_root = (0..words.len()).map(|i| i == root).collect();
    SyntacticAnnotation {
        dialogue_id: dialogue_id.to_string(),
        turn_index,
        is_verb,
        is_root,
    }
}

/// Two-speaker dialogues with alternating turns.
pub fn synth_transcripts<R: Rng + ?Sized>(spec: &DialogueSpec, rng: &mut R) -> SyntheticTranscripts {
    let mut records = Vec::new();
    let mut syntax = Vec::new();
    for d in 0..spec.n_dialogues {
        let dialogue_id = format!("synth{d:03}");
        let topic = pick(rng, TOPICS).to_string();
        let n_turns = rng.random_range(spec.min_turns.max(2)..=spec.max_turns.max(spec.min_turns.max(2)));
        for t in 0..n_turns {
            let text = turn_text(rng, spec);
            syntax.push(syntax_for(&dialogue_id, t, &text));
            records.push(TurnRecord {
                dialogue_id: dialogue_id.clone(),
                turn_index: t,
                speaker: if t % 2 == 0 { "A" } else { "B" }.to_string(),
                text,
                topic: Some(topic.clone()),
            });
        }
    }
    SyntheticTranscripts { records, syntax }
}

/// Segments and pairs every dialogue.
pub fn build_tasks(
    dialogues: &[Dialogue],
    syntax: &SyntaxIndex,
    rules: &SegmentationRules,
    policy: &PairPolicy,
) -> Result<Vec<AnnotationTask>, SegmentError> {
    let mut tasks = Vec::new();
    for d in dialogues {
        let units: Vec<DiscourseUnit> = segment_dialogue(d, syntax, rules)?
            .into_iter()
            .map(DiscourseUnit::Edu)
            .collect();
        tasks.extend(generate_pairs(d, &units, policy));
    }
    Ok(tasks)
}

/// Per-context label distributions and annotator behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    pub label_probs: BTreeMap<PairType, [f64; N_LABELS]>,
    /// Probability that an annotator adds a second, distinct label.
    pub second_label_rate: BTreeMap<PairType, f64>,
    /// Probability that an annotator's first label is the task's latent label
    /// rather than a fresh draw from the context distribution.
    pub fidelity: f64,
    pub rejection_rate: f64,
    pub annotators_per_team: usize,
}

impl Default for PlantedModel {
    /// Acknowledgement-heavy across speakers, Elaboration-heavy within a speaker's
    /// material.
    fn default() -> Self {
        use PairType::*;
        let label_probs = BTreeMap::from([
            (WithinTurn, [0.01, 0.05, 0.01, 0.10, 0.15, 0.10, 0.25, 0.12, 0.06, 0.01, 0.10, 0.04]),
            (CrossTurnSameSpeaker, [0.02, 0.06, 0.01, 0.12, 0.18, 0.07, 0.22, 0.08, 0.10, 0.02, 0.08, 0.04]),
            (CrossTurnDifferentSpeaker, [0.25, 0.02, 0.08, 0.22, 0.04, 0.04, 0.08, 0.03, 0.02, 0.15, 0.03, 0.04]),
        ]);
        PlantedModel {
            label_probs,
            second_label_rate: BTreeMap::from([(WithinTurn, 0.45), (CrossTurnSameSpeaker, 0.40), (CrossTurnDifferentSpeaker, 0.25)]),
            fidelity: 0.6,
            rejection_rate: 0.02,
            annotators_per_team: 5,
        }
    }
}

impl PlantedModel {
    /// Expected share of each label among selected labels in a context.
    pub fn expected_row_proportions(&self, pair_type: PairType) -> [f64; N_LABELS] {
        let p = &self.label_probs[&pair_type];
        let q = self.second_label_rate[&pair_type];
        let mut e = [0.0; N_LABELS];
        for l in 0..N_LABELS {
            let second: f64 = (0..N_LABELS)
                .filter(|&m| m != l && p[m] < 1.0)
                .map(|m| p[m] * p[l] / (1.0 - p[m]))
                .sum();
            e[l] = p[l] + q * second;
        }
        let z: f64 = e.iter().sum();
        e.map(|x| x / z)
    }

    fn draw<R: Rng + ?Sized>(&self, pair_type: PairType, exclude: Option<RelationLabel>, rng: &mut R) -> RelationLabel {
        let p = &self.label_probs[&pair_type];
        loop {
            let mut u: f64 = rng.random();
            let mut pick = N_LABELS - 1;
            for (i, &pi) in p.iter().enumerate() {
                if u < pi {
                    pick = i;
                    break;
                }
                u -= pi;
            }
            let label = RelationLabel::ALL[pick];
            if Some(label) != exclude {
                return label;
            }
        }
    }
}

/// Labels dealt from a shuffled deck whose composition matches `probs` as closely
/// as integer counts allow (largest-remainder rounding).
fn deck<R: Rng + ?Sized>(probs: &[f64; N_LABELS], n: usize, rng: &mut R) -> Vec<RelationLabel> {
    let exact: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..N_LABELS).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    let mut cards: Vec<RelationLabel> = counts
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat_n(RelationLabel::ALL[i], c))
        .collect();
    cards.shuffle(rng);
    cards
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub latent: BTreeMap<String, RelationLabel>,
    pub teams: Vec<String>,
    pub n_annotations: usize,
}

pub fn synthetic_timestamp(sequence: usize) -> DateTime<Utc> {
    Utc.timestamp_opt(1_700_000_000 + sequence as i64, 0).single().expect("valid timestamp")
}

/// Registers one team per dialogue, assigns it, and has every member annotate
/// every task through the store's serving order.
pub fn simulate_annotations<R: Rng + ?Sized>(
    store: &mut AnnotationStore,
    model: &PlantedModel,
    rng: &mut R,
) -> Result<SimulationSummary, StoreError> {
    // Latent labels per task come from a per-context deck.
    let mut by_context: BTreeMap<PairType, Vec<String>> = BTreeMap::new();
    for t in store.tasks() {
        by_context.entry(t.pair_type).or_default().push(t.task_id.clone());
    }
    let mut latent = BTreeMap::new();
    for (pt, ids) in &by_context {
        for (id, label) in ids.iter().zip(deck(&model.label_probs[pt], ids.len(), rng)) {
            latent.insert(id.clone(), label);
        }
    }
    let dialogues: Vec<String> = store.dialogue_ids().map(str::to_string).collect();
    let mut teams = Vec::new();
    let mut sequence = 0;
    for (k, dialogue) in dialogues.iter().enumerate() {
        let team = format!("team{k:02}");
        store.assign_team(&team, dialogue)?;
        for j in 0..model.annotators_per_team {
            let annotator = format!("{team}-a{j}");
            store.register_annotator(&annotator, &team)?;
            while let Some(task) = store.next_task(&annotator)?.cloned() {
                let (labels, rejected) = if rng.random_bool(model.rejection_rate) {
                    (LabelSet::EMPTY, true)
                } else {
                    let first = if rng.random_bool(model.fidelity) {
                        latent[&task.task_id]
                    } else {
                        model.draw(task.pair_type, None, rng)
                    };
                    let mut set = LabelSet::single(first);
                    if rng.random_bool(model.second_label_rate[&task.pair_type]) {
                        set.insert(model.draw(task.pair_type, Some(first), rng));
                    }
                    (set, false)
                };
                store.record_annotation(Annotation {
                    task_id: task.task_id.clone(),
                    annotator_id: annotator.clone(),
                    labels,
                    confidence: Some(rng.random_range(1..=5)),
                    rejected,
                    ts: synthetic_timestamp(sequence),
                })?;
                sequence += 1;
            }
        }
        teams.push(team);
    }
    Ok(SimulationSummary {
        latent,
        teams,
        n_annotations: sequence,
    })
}

/// Embeddings clustered by latent label: a random unit centroid per label scaled
/// by `separation`, plus isotropic Gaussian noise of scale `noise`.
pub fn synth_embeddings<R: Rng + ?Sized>(
    latent: &BTreeMap<String, RelationLabel>,
    dim: usize,
    separation: f64,
    noise: f64,
    rng: &mut R,
) -> EmbeddingTable<f64> {
    let centroids: Vec<Vec<f64>> = (0..N_LABELS)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| separation * x / norm).collect()
        })
        .collect();
    let mut table = EmbeddingTable::new(dim);
    for (task, label) in latent {
        let c = &centroids[label.index()];
        let v = c
            .iter()
            .map(|&m| {
                let z: f64 = StandardNormal.sample(rng);
                m + noise * z
            })
            .collect();
        table.insert(task, v).expect("distinct task ids with fixed dim");
    }
    table
}

/// Counts of annotations per context implied by a store's tasks.
pub fn tasks_per_context(tasks: &[AnnotationTask]) -> HashMap<PairType, usize> {
    let mut out = HashMap::new();
    for t in tasks {
        *out.entry(t.pair_type).or_default() += 1;
    }
    out
}
