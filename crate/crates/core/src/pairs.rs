//! Candidate (π₁, π₂) annotation tasks and their dialogue context.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Dialogue;
use crate::segmenter::DiscourseUnit;

#[derive(Debug, Error)]
pub enum PairError {
    #[error("task {task_id} refers to dialogue {expected}, got {found}")]
    UnknownDialogue {
        task_id: String,
        expected: String,
        found: String,
    },
    #[error("task {task_id} refers to turn {turn_index} outside the dialogue")]
    TurnOutOfRange { task_id: String, turn_index: usize },
    #[error("io: {0}")]
    IoFailure(#[from] io::Error),
    #[error("malformed task at line {line}: {detail}")]
    Malformed { line: usize, detail: String },
}

impl PairError {
    pub fn code(&self) -> &'static str {
        match self {
            PairError::UnknownDialogue { .. } => "unknown_dialogue",
            PairError::TurnOutOfRange { .. } => "turn_out_of_range",
            PairError::IoFailure(_) => "io_failure",
            PairError::Malformed { .. } => "malformed_task",
        }
    }
}

/// Discourse context of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PairType {
    #[serde(rename = "within_turn")]
    WithinTurn,
    #[serde(rename = "cross_same")]
    CrossTurnSameSpeaker,
    #[serde(rename = "cross_diff")]
    CrossTurnDifferentSpeaker,
}

impl PairType {
    pub const ALL: [PairType; 3] = [
        PairType::WithinTurn,
        PairType::CrossTurnSameSpeaker,
        PairType::CrossTurnDifferentSpeaker,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PairType::WithinTurn => "within_turn",
            PairType::CrossTurnSameSpeaker => "cross_same",
            PairType::CrossTurnDifferentSpeaker => "cross_diff",
        }
    }

    pub fn parse(s: &str) -> Option<PairType> {
        PairType::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

impl std::fmt::Display for PairType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitStyle {
    Italic,
    Bold,
}

/// One argument of a task as shown to annotators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskUnit {
    pub unit_id: String,
    pub edu_ids: Vec<String>,
    pub speaker: String,
    pub turn_start: usize,
    pub turn_end: usize,
    pub start_token: usize,
    pub end_token: usize,
    pub text: String,
    pub segments: Vec<String>,
    /// Segments joined with `||` boundaries.
    pub rendered: String,
    pub style: UnitStyle,
}

impl TaskUnit {
    fn from_unit(unit: &DiscourseUnit, speaker: &str, style: UnitStyle) -> Self {
        let (turn_start, start_token) = unit.start();
        let (turn_end, end_token) = unit.end();
        let segments = unit.segments();
        TaskUnit {
            unit_id: unit.id().to_string(),
            edu_ids: unit.edu_ids(),
            speaker: speaker.to_string(),
            turn_start,
            turn_end,
            start_token,
            end_token,
            text: unit.text().to_string(),
            rendered: segments.join(" || "),
            segments,
            style,
        }
    }

    fn start(&self) -> (usize, usize) {
        (self.turn_start, self.start_token)
    }

    fn end(&self) -> (usize, usize) {
        (self.turn_end, self.end_token)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextTurn {
    pub turn_index: usize,
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub dialogue_id: String,
    pub pair_type: PairType,
    pub pi1: TaskUnit,
    pub pi2: TaskUnit,
    pub context_before: Vec<ContextTurn>,
    /// Turns strictly between π₁ and π₂ (the interrupting turn of a same-speaker pair).
    #[serde(default)]
    pub intervening: Vec<ContextTurn>,
    pub context_after: Vec<ContextTurn>,
}

impl AnnotationTask {
    /// Pair type implied by the two units alone.
    pub fn recomputed_pair_type(&self) -> Option<PairType> {
        classify_pair(&self.pi1, &self.pi2)
    }

    fn order_key(&self) -> (String, [(usize, usize); 4]) {
        (
            self.dialogue_id.clone(),
            [self.pi1.start(), self.pi2.start(), self.pi1.end(), self.pi2.end()],
        )
    }
}

/// Which pair type two ordered units form, if any.
pub fn classify_pair(pi1: &TaskUnit, pi2: &TaskUnit) -> Option<PairType> {
    if pi1.end() > pi2.start() {
        return None;
    }
    let single_turn = |u: &TaskUnit| u.turn_start == u.turn_end;
    if single_turn(pi1) && single_turn(pi2) && pi1.turn_start == pi2.turn_start {
        return Some(PairType::WithinTurn);
    }
    match (pi2.turn_start.checked_sub(pi1.turn_end), pi1.speaker == pi2.speaker) {
        (Some(1), false) => Some(PairType::CrossTurnDifferentSpeaker),
        (Some(2), true) => Some(PairType::CrossTurnSameSpeaker),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStrategy {
    /// Consecutive units within a turn; last unit of a turn to first unit of the next
    /// eligible turn.
    #[default]
    Adjacency,
    /// Every ordered pair of units that forms one of the three pair types.
    AllCombinations,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairPolicy {
    pub max_per_dialogue: Option<usize>,
    pub strategy: PairStrategy,
}

fn content_id(dialogue_id: &str, pi1: &TaskUnit, pi2: &TaskUnit) -> String {
    let mut h = Sha256::new();
    h.update(dialogue_id.as_bytes());
    h.update([0u8]);
    h.update(pi1.edu_ids.join(",").as_bytes());
    h.update([0u8]);
    h.update(pi2.edu_ids.join(",").as_bytes());
    let digest = h.finalize();
    hex::encode(&digest[..8])
}

/// Generates the candidate tasks of one dialogue, with context attached, in
/// document order.
pub fn generate_pairs(
    dialogue: &Dialogue,
    units: &[DiscourseUnit],
    policy: &PairPolicy,
) -> Vec<AnnotationTask> {
    let mut seen = HashSet::new();
    let mut units: Vec<&DiscourseUnit> = units
        .iter()
        .filter(|u| u.dialogue_id() == dialogue.dialogue_id)
        .filter(|u| u.turn_span().1 < dialogue.turns.len())
        .filter(|u| seen.insert(u.id().to_string()))
        .collect();
    units.sort_by_key(|u| (u.start(), u.end()));

    let speaker = |u: &DiscourseUnit| dialogue.turns[u.start().0].speaker.clone();

    // EDU extents per turn, used for adjacency.
    let mut edu_starts: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut edu_ends: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for u in &units {
        if let DiscourseUnit::Edu(e) = u {
            edu_starts.entry(e.turn_index).or_default().push(e.start_token);
            edu_ends.entry(e.turn_index).or_default().push(e.end_token);
        }
    }
    let next_edu_start = |turn: usize, after: usize| -> Option<usize> {
        edu_starts.get(&turn)?.iter().copied().filter(|&s| s >= after).min()
    };
    let last_edu_end = |turn: usize| edu_ends.get(&turn).and_then(|v| v.iter().copied().max());
    let first_edu_start = |turn: usize| edu_starts.get(&turn).and_then(|v| v.iter().copied().min());

    let mut tasks = Vec::new();
    for (i, u) in units.iter().enumerate() {
        let pi1 = TaskUnit::from_unit(u, &speaker(u), UnitStyle::Italic);
        for v in &units[i + 1..] {
            let pi2 = TaskUnit::from_unit(v, &speaker(v), UnitStyle::Bold);
            let Some(pair_type) = classify_pair(&pi1, &pi2) else {
                continue;
            };
            let keep = match policy.strategy {
                PairStrategy::AllCombinations => true,
                PairStrategy::Adjacency => match pair_type {
                    PairType::WithinTurn => {
                        next_edu_start(pi1.turn_end, pi1.end_token) == Some(pi2.start_token)
                    }
                    _ => {
                        last_edu_end(pi1.turn_end) == Some(pi1.end_token)
                            && first_edu_start(pi2.turn_start) == Some(pi2.start_token)
                    }
                },
            };
            if !keep {
                continue;
            }
            let task = AnnotationTask {
                task_id: content_id(&dialogue.dialogue_id, &pi1, &pi2),
                dialogue_id: dialogue.dialogue_id.clone(),
                pair_type,
                pi1: pi1.clone(),
                pi2,
                context_before: Vec::new(),
                intervening: Vec::new(),
                context_after: Vec::new(),
            };
            tasks.push(attach_context(task, dialogue).expect("units validated against dialogue"));
        }
    }
    tasks.sort_by_key(AnnotationTask::order_key);
    if let Some(cap) = policy.max_per_dialogue {
        tasks.truncate(cap);
    }
    tasks
}

fn context_turn(dialogue: &Dialogue, i: usize) -> ContextTurn {
    let t = &dialogue.turns[i];
    ContextTurn {
        turn_index: t.turn_index,
        speaker: t.speaker.clone(),
        text: t.raw_text.clone(),
    }
}

/// Fills in up to two turns before the earliest and after the latest π-bearing turn.
pub fn attach_context(mut task: AnnotationTask, dialogue: &Dialogue) -> Result<AnnotationTask, PairError> {
    if task.dialogue_id != dialogue.dialogue_id {
        return Err(PairError::UnknownDialogue {
            task_id: task.task_id.clone(),
            expected: task.dialogue_id.clone(),
            found: dialogue.dialogue_id.clone(),
        });
    }
    let n = dialogue.turns.len();
    let earliest = task.pi1.turn_start.min(task.pi2.turn_start);
    let latest = task.pi1.turn_end.max(task.pi2.turn_end);
    if latest >= n {
        return Err(PairError::TurnOutOfRange {
            task_id: task.task_id.clone(),
            turn_index: latest,
        });
    }
    let bearing = |i: usize| {
        (task.pi1.turn_start..=task.pi1.turn_end).contains(&i)
            || (task.pi2.turn_start..=task.pi2.turn_end).contains(&i)
    };
    task.context_before = (earliest.saturating_sub(2)..earliest)
        .map(|i| context_turn(dialogue, i))
        .collect();
    task.intervening = (earliest + 1..latest)
        .filter(|&i| !bearing(i))
        .map(|i| context_turn(dialogue, i))
        .collect();
    task.context_after = (latest + 1..n.min(latest + 3))
        .map(|i| context_turn(dialogue, i))
        .collect();
    Ok(task)
}

/// Writes tasks one per line in (dialogue, document) order.
pub fn export_tasks<W: Write>(tasks: &[AnnotationTask], writer: W) -> Result<(), PairError> {
    let mut sorted: Vec<&AnnotationTask> = tasks.iter().collect();
    sorted.sort_by_key(|t| t.order_key());
    crate::jsonl::write_jsonl(writer, &sorted)?;
    Ok(())
}

pub fn export_tasks_file(tasks: &[AnnotationTask], path: &Path) -> Result<(), PairError> {
    let mut buf = Vec::new();
    export_tasks(tasks, &mut buf)?;
    crate::jsonl::write_atomic(path, &buf)?;
    Ok(())
}

pub fn import_tasks<R: BufRead>(reader: R) -> Result<Vec<AnnotationTask>, PairError> {
    crate::jsonl::read_jsonl(reader).map_err(|e| match e {
        crate::jsonl::JsonlError::Parse { line, source } => PairError::Malformed {
            line,
            detail: source.to_string(),
        },
        crate::jsonl::JsonlError::Io(e) => PairError::IoFailure(e),
    })
}

pub fn import_tasks_file(path: &Path) -> Result<Vec<AnnotationTask>, PairError> {
    import_tasks(io::BufReader::new(std::fs::File::open(path)?))
}
