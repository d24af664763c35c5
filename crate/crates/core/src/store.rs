//! Annotation task serving and durable storage of multi-label decisions.
//!
//! State lives in three append-only JSON-lines logs inside a store directory:
//!
//! * `annotators.jsonl`: `{"annotator_id", "team_id"}`
//! * `assignments.jsonl`: `{"team_id", "dialogue_id"}`
//! * `annotations.jsonl`: `{"task_id", "annotator_id", "labels", "confidence", "rejected", "ts"}`
//!
//! Each record is written with a single `write_all` of the line including its
//! terminating newline. On open, a trailing fragment without a newline is a torn
//! write: it is dropped and truncated away before new appends. Later annotation
//! records for the same `(task_id, annotator_id)` supersede earlier ones; history
//! stays in the log.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{LabelMatrix, LabelSet};
use crate::pairs::{AnnotationTask, PairType};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown dialogue `{0}`")]
    UnknownDialogue(String),
    #[error("team `{team_id}` is already assigned to dialogue `{dialogue_id}`")]
    AlreadyAssigned { team_id: String, dialogue_id: String },
    #[error("unknown annotator `{0}`")]
    UnknownAnnotator(String),
    #[error("annotator `{annotator_id}` already belongs to team `{team_id}`")]
    AnnotatorConflict { annotator_id: String, team_id: String },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("team `{0}` has no assigned dialogue")]
    NotAssigned(String),
    #[error("annotator `{annotator_id}` is not on a team assigned to dialogue `{dialogue_id}`")]
    WrongTeam {
        annotator_id: String,
        dialogue_id: String,
    },
    #[error("an annotation that is not rejected needs at least one label")]
    InvalidLabels,
    #[error("a rejected annotation cannot carry labels")]
    RejectedWithLabels,
    #[error("confidence {0} outside 1..=5")]
    ConfidenceRange(u8),
    #[error("corrupt record in {path} at line {line}: {detail}")]
    CorruptLog {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::UnknownDialogue(_) => "unknown_dialogue",
            StoreError::AlreadyAssigned { .. } => "already_assigned",
            StoreError::UnknownAnnotator(_) => "unknown_annotator",
            StoreError::AnnotatorConflict { .. } => "annotator_conflict",
            StoreError::UnknownTask(_) => "unknown_task",
            StoreError::NotAssigned(_) => "not_assigned",
            StoreError::WrongTeam { .. } => "wrong_team",
            StoreError::InvalidLabels => "invalid_labels",
            StoreError::RejectedWithLabels => "rejected_with_labels",
            StoreError::ConfidenceRange(_) => "confidence_range",
            StoreError::CorruptLog { .. } => "corrupt_log",
            StoreError::Io(_) => "io_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotator {
    pub annotator_id: String,
    pub team_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub team_id: String,
    pub dialogue_id: String,
}

/// One annotator's decision on one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub task_id: String,
    pub annotator_id: String,
    pub labels: LabelSet,
    #[serde(default)]
    pub confidence: Option<u8>,
    pub rejected: bool,
    pub ts: DateTime<Utc>,
}

impl Annotation {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.rejected && !self.labels.is_empty() {
            return Err(StoreError::RejectedWithLabels);
        }
        if !self.rejected && self.labels.is_empty() {
            return Err(StoreError::InvalidLabels);
        }
        if let Some(c) = self.confidence {
            if !(1..=5).contains(&c) {
                return Err(StoreError::ConfidenceRange(c));
            }
        }
        Ok(())
    }
}

/// Append-only JSON-lines log with torn-tail recovery.
#[derive(Debug)]
pub struct AppendLog<T> {
    path: PathBuf,
    file: File,
    sync: bool,
    _record: PhantomData<fn(T)>,
}

impl<T: Serialize + DeserializeOwned> AppendLog<T> {
    /// Opens (creating if needed) and replays the log.
    pub fn open(path: &Path, sync: bool) -> Result<(Self, Vec<T>), StoreError> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        let bytes = fs::read(path)?;
        let committed = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
        if committed < bytes.len() {
            log::warn!(
                "{}: dropping {} bytes of torn record",
                path.display(),
                bytes.len() - committed
            );
            file.set_len(committed as u64)?;
            file.sync_data()?;
        }
        let mut records = Vec::new();
        for (i, line) in bytes[..committed].split(|&b| b == b'\n').enumerate() {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let rec = serde_json::from_slice(line).map_err(|e| StoreError::CorruptLog {
                path: path.to_path_buf(),
                line: i + 1,
                detail: e.to_string(),
            })?;
            records.push(rec);
        }
        file.flush()?;
        Ok((
            AppendLog {
                path: path.to_path_buf(),
                file,
                sync,
                _record: PhantomData,
            },
            records,
        ))
    }

    /// Serialized form of one record, newline included.
    pub fn encode(record: &T) -> Vec<u8> {
        let mut line = serde_json::to_vec(record).expect("log records serialize");
        line.push(b'\n');
        line
    }

    pub fn append(&mut self, record: &T) -> Result<(), StoreError> {
        self.file.write_all(&Self::encode(record))?;
        self.file.flush()?;
        if self.sync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "order")]
pub enum ServeOrder {
    #[default]
    Document,
    /// Per-annotator permutation derived from `seed` and the annotator id.
    Shuffled { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub serve_order: ServeOrder,
    /// `fsync` after every append.
    pub sync_writes: bool,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            serve_order: ServeOrder::Document,
            sync_writes: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub task_id: String,
    pub annotator_id: String,
    /// True when this record replaced an earlier answer by the same annotator.
    pub superseded: bool,
    pub sequence: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixFilter {
    pub dialogue_id: Option<String>,
    pub team_id: Option<String>,
    pub pair_type: Option<PairType>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub team_id: String,
    pub answered: usize,
    pub total: usize,
    pub per_annotator: BTreeMap<String, usize>,
}

/// Read-only view of tasks, current annotations, and team membership.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedCorpus {
    pub tasks: Vec<AnnotationTask>,
    /// Latest annotation per `(task, annotator)`, in task then annotator order.
    pub annotations: Vec<Annotation>,
    pub annotator_teams: BTreeMap<String, String>,
}

impl AnnotatedCorpus {
    pub fn task_index(&self) -> HashMap<&str, &AnnotationTask> {
        self.tasks.iter().map(|t| (t.task_id.as_str(), t)).collect()
    }
}

struct Logs {
    annotators: AppendLog<Annotator>,
    assignments: AppendLog<Assignment>,
    annotations: AppendLog<Annotation>,
}

pub struct AnnotationStore {
    tasks: Vec<AnnotationTask>,
    task_pos: HashMap<String, usize>,
    dialogue_tasks: BTreeMap<String, Vec<usize>>,
    annotators: BTreeMap<String, String>,
    assignments: BTreeMap<String, String>,
    /// (task position, annotator id) → latest annotation.
    answers: BTreeMap<(usize, String), Annotation>,
    history: Vec<Annotation>,
    config: StoreConfig,
    logs: Option<Logs>,
}

impl AnnotationStore {
    pub const ANNOTATORS_FILE: &'static str = "annotators.jsonl";
    pub const ASSIGNMENTS_FILE: &'static str = "assignments.jsonl";
    pub const ANNOTATIONS_FILE: &'static str = "annotations.jsonl";

    /// A store without files, for tests and simulations.
    pub fn in_memory(tasks: Vec<AnnotationTask>, config: StoreConfig) -> Self {
        let mut tasks = tasks;
        tasks.sort_by(|a, b| {
            (&a.dialogue_id, a.pi1.turn_start, a.pi1.start_token, a.pi2.turn_start, a.pi2.start_token)
                .cmp(&(&b.dialogue_id, b.pi1.turn_start, b.pi1.start_token, b.pi2.turn_start, b.pi2.start_token))
                .then_with(|| a.task_id.cmp(&b.task_id))
        });
        let task_pos = tasks.iter().enumerate().map(|(i, t)| (t.task_id.clone(), i)).collect();
        let mut dialogue_tasks: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, t) in tasks.iter().enumerate() {
            dialogue_tasks.entry(t.dialogue_id.clone()).or_default().push(i);
        }
        AnnotationStore {
            tasks,
            task_pos,
            dialogue_tasks,
            annotators: BTreeMap::new(),
            assignments: BTreeMap::new(),
            answers: BTreeMap::new(),
            history: Vec::new(),
            config,
            logs: None,
        }
    }

    /// Opens the logs in `dir` and replays them.
    pub fn open(dir: &Path, tasks: Vec<AnnotationTask>, config: StoreConfig) -> Result<Self, StoreError> {
        let mut store = Self::in_memory(tasks, config);
        let (annotators, roster) = AppendLog::<Annotator>::open(&dir.join(Self::ANNOTATORS_FILE), config.sync_writes)?;
        let (assignments, assigned) =
            AppendLog::<Assignment>::open(&dir.join(Self::ASSIGNMENTS_FILE), config.sync_writes)?;
        let (annotations, answered) =
            AppendLog::<Annotation>::open(&dir.join(Self::ANNOTATIONS_FILE), config.sync_writes)?;
        for a in roster {
            store.annotators.insert(a.annotator_id, a.team_id);
        }
        for a in assigned {
            store.assignments.insert(a.team_id, a.dialogue_id);
        }
        for a in answered {
            match store.task_pos.get(&a.task_id) {
                Some(&pos) => {
                    store.answers.insert((pos, a.annotator_id.clone()), a.clone());
                }
                None => log::warn!("log references unknown task {}", a.task_id),
            }
            store.history.push(a);
        }
        store.logs = Some(Logs {
            annotators,
            assignments,
            annotations,
        });
        Ok(store)
    }

    pub fn tasks(&self) -> &[AnnotationTask] {
        &self.tasks
    }

    pub fn task(&self, task_id: &str) -> Option<&AnnotationTask> {
        self.task_pos.get(task_id).map(|&i| &self.tasks[i])
    }

    pub fn team_of(&self, annotator_id: &str) -> Option<&str> {
        self.annotators.get(annotator_id).map(String::as_str)
    }

    pub fn assignment(&self, team_id: &str) -> Option<&str> {
        self.assignments.get(team_id).map(String::as_str)
    }

    pub fn dialogue_ids(&self) -> impl Iterator<Item = &str> {
        self.dialogue_tasks.keys().map(String::as_str)
    }

    /// Every annotation record in arrival order, including superseded ones.
    pub fn history(&self) -> &[Annotation] {
        &self.history
    }

    pub fn register_annotator(&mut self, annotator_id: &str, team_id: &str) -> Result<Annotator, StoreError> {
        let rec = Annotator {
            annotator_id: annotator_id.to_string(),
            team_id: team_id.to_string(),
        };
        match self.annotators.get(annotator_id) {
            Some(t) if t == team_id => return Ok(rec),
            Some(t) => {
                return Err(StoreError::AnnotatorConflict {
                    annotator_id: annotator_id.to_string(),
                    team_id: t.clone(),
                })
            }
            None => {}
        }
        if let Some(logs) = &mut self.logs {
            logs.annotators.append(&rec)?;
        }
        self.annotators.insert(rec.annotator_id.clone(), rec.team_id.clone());
        Ok(rec)
    }

    /// Gives a team a dialogue; all of that dialogue's tasks enter the team's queue.
    pub fn assign_team(&mut self, team_id: &str, dialogue_id: &str) -> Result<Assignment, StoreError> {
        if !self.dialogue_tasks.contains_key(dialogue_id) {
            return Err(StoreError::UnknownDialogue(dialogue_id.to_string()));
        }
        if let Some(d) = self.assignments.get(team_id) {
            return Err(StoreError::AlreadyAssigned {
                team_id: team_id.to_string(),
                dialogue_id: d.clone(),
            });
        }
        let rec = Assignment {
            team_id: team_id.to_string(),
            dialogue_id: dialogue_id.to_string(),
        };
        if let Some(logs) = &mut self.logs {
            logs.assignments.append(&rec)?;
        }
        self.assignments.insert(rec.team_id.clone(), rec.dialogue_id.clone());
        Ok(rec)
    }

    fn queue_of(&self, annotator_id: &str) -> Result<Vec<usize>, StoreError> {
        let team = self
            .annotators
            .get(annotator_id)
            .ok_or_else(|| StoreError::UnknownAnnotator(annotator_id.to_string()))?;
        let dialogue = self
            .assignments
            .get(team)
            .ok_or_else(|| StoreError::NotAssigned(team.clone()))?;
        let mut queue = self.dialogue_tasks.get(dialogue).cloned().unwrap_or_default();
        if let ServeOrder::Shuffled { seed } = self.config.serve_order {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(annotator_id.as_bytes()));
            queue.shuffle(&mut rng);
        }
        Ok(queue)
    }

    /// The first task in the annotator's queue they have not answered yet.
    pub fn next_task(&self, annotator_id: &str) -> Result<Option<&AnnotationTask>, StoreError> {
        let queue = self.queue_of(annotator_id)?;
        Ok(queue
            .into_iter()
            .find(|&pos| !self.answers.contains_key(&(pos, annotator_id.to_string())))
            .map(|pos| &self.tasks[pos]))
    }

    pub fn record_annotation(&mut self, annotation: Annotation) -> Result<Receipt, StoreError> {
        let &pos = self
            .task_pos
            .get(&annotation.task_id)
            .ok_or_else(|| StoreError::UnknownTask(annotation.task_id.clone()))?;
        let team = self
            .annotators
            .get(&annotation.annotator_id)
            .ok_or_else(|| StoreError::UnknownAnnotator(annotation.annotator_id.clone()))?;
        let dialogue_id = &self.tasks[pos].dialogue_id;
        if self.assignments.get(team) != Some(dialogue_id) {
            return Err(StoreError::WrongTeam {
                annotator_id: annotation.annotator_id.clone(),
                dialogue_id: dialogue_id.clone(),
            });
        }
        annotation.validate()?;
        if let Some(logs) = &mut self.logs {
            logs.annotations.append(&annotation)?;
        }
        let key = (pos, annotation.annotator_id.clone());
        let superseded = self.answers.contains_key(&key);
        if superseded {
            log::info!(
                "annotation by {} on {} supersedes an earlier answer",
                annotation.annotator_id,
                annotation.task_id
            );
        }
        let receipt = Receipt {
            task_id: annotation.task_id.clone(),
            annotator_id: annotation.annotator_id.clone(),
            superseded,
            sequence: self.history.len() as u64,
        };
        self.history.push(annotation.clone());
        self.answers.insert(key, annotation);
        Ok(receipt)
    }

    /// Task × annotator matrix; rejections are explicit empty sets.
    pub fn label_matrix(&self, filter: &MatrixFilter) -> LabelMatrix {
        let team_dialogue = filter.team_id.as_ref().map(|t| self.assignments.get(t));
        let rows: Vec<usize> = (0..self.tasks.len())
            .filter(|&i| {
                let t = &self.tasks[i];
                filter.dialogue_id.as_ref().is_none_or(|d| &t.dialogue_id == d)
                    && filter.pair_type.is_none_or(|p| t.pair_type == p)
                    && team_dialogue.is_none_or(|d| d == Some(&t.dialogue_id))
            })
            .collect();
        let row_set: BTreeSet<usize> = rows.iter().copied().collect();
        let columns: Vec<String> = self
            .answers
            .keys()
            .filter(|(pos, a)| {
                row_set.contains(pos)
                    && filter
                        .team_id
                        .as_ref()
                        .is_none_or(|t| self.annotators.get(a) == Some(t))
            })
            .map(|(_, a)| a.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let cells = rows
            .iter()
            .map(|&pos| {
                columns
                    .iter()
                    .map(|a| self.answers.get(&(pos, a.clone())).map(|x| x.labels))
                    .collect()
            })
            .collect();
        LabelMatrix::new(
            rows.iter().map(|&i| self.tasks[i].task_id.clone()).collect(),
            columns,
            cells,
        )
    }

    pub fn progress(&self, team_id: &str) -> Result<Progress, StoreError> {
        let dialogue = self
            .assignments
            .get(team_id)
            .ok_or_else(|| StoreError::NotAssigned(team_id.to_string()))?;
        let positions = self.dialogue_tasks.get(dialogue).cloned().unwrap_or_default();
        let members: Vec<&String> = self
            .annotators
            .iter()
            .filter(|(_, t)| *t == team_id)
            .map(|(a, _)| a)
            .collect();
        let per_annotator: BTreeMap<String, usize> = members
            .iter()
            .map(|a| {
                let n = positions
                    .iter()
                    .filter(|&&p| self.answers.contains_key(&(p, (*a).clone())))
                    .count();
                ((*a).clone(), n)
            })
            .collect();
        Ok(Progress {
            team_id: team_id.to_string(),
            answered: per_annotator.values().sum(),
            total: positions.len() * members.len(),
            per_annotator,
        })
    }

    /// Current annotations in (task, annotator) order.
    pub fn annotations(&self) -> impl Iterator<Item = &Annotation> {
        self.answers.values()
    }

    pub fn snapshot(&self) -> AnnotatedCorpus {
        AnnotatedCorpus {
            tasks: self.tasks.clone(),
            annotations: self.answers.values().cloned().collect(),
            annotator_teams: self.annotators.clone(),
        }
    }

    pub fn log_paths(&self) -> Option<[&Path; 3]> {
        self.logs.as_ref().map(|l| {
            [
                l.annotators.path(),
                l.assignments.path(),
                l.annotations.path(),
            ]
        })
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::labels::RelationLabel;
    use crate::pairs::{ContextTurn, TaskUnit, UnitStyle};

    fn unit(turn: usize, tok: usize, style: UnitStyle) -> TaskUnit {
        TaskUnit {
            unit_id: format!("e{turn}.{tok}"),
            edu_ids: vec![format!("e{turn}.{tok}")],
            speaker: "A".into(),
            turn_start: turn,
            turn_end: turn,
            start_token: tok,
            end_token: tok + 1,
            text: "x".into(),
            segments: vec!["x".into()],
            rendered: "x".into(),
            style,
        }
    }

    pub(crate) fn tasks(dialogue: &str, n: usize) -> Vec<AnnotationTask> {
        (0..n)
            .map(|i| AnnotationTask {
                task_id: format!("{dialogue}-{i:03}"),
                dialogue_id: dialogue.into(),
                pair_type: if i % 3 == 0 { PairType::WithinTurn } else { PairType::CrossTurnDifferentSpeaker },
                pi1: unit(i, 0, UnitStyle::Italic),
                pi2: unit(i, 1, UnitStyle::Bold),
                context_before: Vec::<ContextTurn>::new(),
                intervening: Vec::new(),
                context_after: Vec::new(),
            })
            .collect()
    }

    fn ann(task: &str, who: &str, labels: &[RelationLabel]) -> Annotation {
        Annotation {
            task_id: task.into(),
            annotator_id: who.into(),
            labels: labels.iter().copied().collect(),
            confidence: Some(3),
            rejected: labels.is_empty(),
            ts: DateTime::from_timestamp(1_700_000_000, 0).unwrap(),
        }
    }

    fn store_with_team(n_tasks: usize) -> AnnotationStore {
        let mut s = AnnotationStore::in_memory(tasks("d1", n_tasks), StoreConfig::default());
        s.register_annotator("ann1", "t1").unwrap();
        s.register_annotator("ann2", "t1").unwrap();
        s.assign_team("t1", "d1").unwrap();
        s
    }

    #[test]
    fn assignment_errors() {
        let mut s = AnnotationStore::in_memory([tasks("d1", 2), tasks("d2", 2)].concat(), StoreConfig::default());
        s.assign_team("t1", "d1").unwrap();
        assert_eq!(s.assign_team("t1", "d2").unwrap_err().code(), "already_assigned");
        assert_eq!(s.assign_team("t2", "missing").unwrap_err().code(), "unknown_dialogue");
    }

    #[test]
    fn nineteen_teams_nineteen_dialogues() {
        let all: Vec<AnnotationTask> = (0..19).flat_map(|d| tasks(&format!("d{d:02}"), 3)).collect();
        let mut s = AnnotationStore::in_memory(all, StoreConfig::default());
        for d in 0..19 {
            s.assign_team(&format!("team{d:02}"), &format!("d{d:02}")).unwrap();
        }
        let dialogues: BTreeSet<&str> = (0..19).map(|d| s.assignment(&format!("team{d:02}")).unwrap()).collect();
        assert_eq!(dialogues.len(), 19);
    }

    #[test]
    fn serving_walks_the_queue_once() {
        let mut s = store_with_team(25);
        assert_eq!(s.next_task("ann1").unwrap().unwrap().task_id, "d1-000");
        for i in 0..25 {
            let id = s.next_task("ann1").unwrap().unwrap().task_id.clone();
            assert_eq!(id, format!("d1-{i:03}"));
            s.record_annotation(ann(&id, "ann1", &[RelationLabel::Comment])).unwrap();
        }
        assert!(s.next_task("ann1").unwrap().is_none());
        assert_eq!(s.next_task("ann2").unwrap().unwrap().task_id, "d1-000");
        assert_eq!(s.next_task("nobody").unwrap_err().code(), "unknown_annotator");
    }

    #[test]
    fn interleaved_annotators_each_see_everything() {
        let mut s = store_with_team(7);
        let mut seen: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        let mut turn = 0;
        loop {
            let who = if turn % 3 == 0 { "ann2" } else { "ann1" };
            turn += 1;
            let Some(task) = s.next_task(who).unwrap().map(|t| t.task_id.clone()) else {
                let other = if who == "ann1" { "ann2" } else { "ann1" };
                if s.next_task(other).unwrap().is_none() {
                    break;
                }
                continue;
            };
            // Oracle: the served task is the first of (all tasks − answered by who).
            let answered: BTreeSet<&String> = seen.get(who).map(|v| v.iter().collect()).unwrap_or_default();
            let expected = s.tasks().iter().map(|t| &t.task_id).find(|id| !answered.contains(id)).unwrap();
            assert_eq!(&task, expected);
            s.record_annotation(ann(&task, who, &[RelationLabel::Result])).unwrap();
            seen.entry(who).or_default().push(task);
        }
        let all: Vec<String> = s.tasks().iter().map(|t| t.task_id.clone()).collect();
        assert_eq!(seen["ann1"], all);
        assert_eq!(seen["ann2"], all);
    }

    #[test]
    fn shuffled_order_is_a_permutation() {
        let mut s = AnnotationStore::in_memory(tasks("d1", 10), StoreConfig {
            serve_order: ServeOrder::Shuffled { seed: 7 },
            sync_writes: false,
        });
        s.register_annotator("a", "t").unwrap();
        s.assign_team("t", "d1").unwrap();
        let mut got = Vec::new();
        while let Some(t) = s.next_task("a").unwrap().map(|t| t.task_id.clone()) {
            s.record_annotation(ann(&t, "a", &[RelationLabel::Other])).unwrap();
            got.push(t);
        }
        let mut sorted = got.clone();
        sorted.sort();
        assert_ne!(got, sorted);
        assert_eq!(sorted, s.tasks().iter().map(|t| t.task_id.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn validation_errors() {
        let mut s = store_with_team(2);
        let mut bad = ann("d1-000", "ann1", &[]);
        bad.rejected = false;
        assert_eq!(s.record_annotation(bad).unwrap_err().code(), "invalid_labels");
        let mut bad = ann("d1-000", "ann1", &[RelationLabel::Comment]);
        bad.confidence = Some(6);
        assert_eq!(s.record_annotation(bad).unwrap_err().code(), "confidence_range");
        let mut bad = ann("d1-000", "ann1", &[RelationLabel::Comment]);
        bad.rejected = true;
        assert_eq!(s.record_annotation(bad).unwrap_err().code(), "rejected_with_labels");
        s.register_annotator("outsider", "t2").unwrap();
        assert_eq!(
            s.record_annotation(ann("d1-000", "outsider", &[RelationLabel::Comment])).unwrap_err().code(),
            "wrong_team"
        );
        assert_eq!(
            s.record_annotation(ann("nope", "ann1", &[RelationLabel::Comment])).unwrap_err().code(),
            "unknown_task"
        );
        assert_eq!(s.register_annotator("ann1", "t9").unwrap_err().code(), "annotator_conflict");
    }

    #[test]
    fn multi_label_and_supersession() {
        let mut s = store_with_team(2);
        let r = s
            .record_annotation(ann("d1-000", "ann1", &[RelationLabel::Elaboration, RelationLabel::Comment]))
            .unwrap();
        assert!(!r.superseded);
        let m = s.label_matrix(&MatrixFilter::default());
        assert_eq!(m.cell(0, 0).unwrap().len(), 2);
        let r = s.record_annotation(ann("d1-000", "ann1", &[RelationLabel::Result])).unwrap();
        assert!(r.superseded);
        let m = s.label_matrix(&MatrixFilter::default());
        assert_eq!(m.cell(0, 0), Some(LabelSet::single(RelationLabel::Result)));
        assert_eq!(s.history().len(), 2);
    }

    #[test]
    fn matrix_cells_and_filters() {
        let mut s = store_with_team(6);
        s.register_annotator("ann3", "t1").unwrap();
        for t in ["d1-000", "d1-001"] {
            for a in ["ann1", "ann2", "ann3"] {
                s.record_annotation(ann(t, a, &[RelationLabel::Comment])).unwrap();
            }
        }
        s.record_annotation(ann("d1-003", "ann2", &[])).unwrap();
        let m = s.label_matrix(&MatrixFilter::default());
        let populated: usize = m.cells.iter().flatten().filter(|c| c.is_some()).count();
        assert_eq!(populated, 7);
        // The rejection is an explicit empty set, the rest of row 3 is missing.
        assert_eq!(m.cell(3, 1), Some(LabelSet::EMPTY));
        assert_eq!(m.cell(3, 0), None);

        let within = s.label_matrix(&MatrixFilter {
            pair_type: Some(PairType::WithinTurn),
            ..Default::default()
        });
        assert_eq!(within.task_ids, ["d1-000", "d1-003"]);

        // Marginals equal per-annotator counts recounted from the raw history.
        let mut recount: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for a in s.history() {
            recount.entry(&a.annotator_id).or_default().insert(&a.task_id);
        }
        let counts = m.column_counts();
        for (j, a) in m.annotator_ids.iter().enumerate() {
            assert_eq!(counts[j], recount[a.as_str()].len());
        }
    }

    #[test]
    fn progress_counts() {
        let mut s = store_with_team(3);
        s.record_annotation(ann("d1-000", "ann1", &[RelationLabel::Comment])).unwrap();
        s.record_annotation(ann("d1-001", "ann1", &[])).unwrap();
        let p = s.progress("t1").unwrap();
        assert_eq!((p.answered, p.total), (2, 6));
        assert_eq!(p.per_annotator["ann1"], 2);
        assert_eq!(p.per_annotator["ann2"], 0);
    }

    #[test]
    fn reopen_replays_state() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = StoreConfig::default();
        {
            let mut s = AnnotationStore::open(dir.path(), tasks("d1", 3), cfg).unwrap();
            s.register_annotator("ann1", "t1").unwrap();
            s.assign_team("t1", "d1").unwrap();
            s.record_annotation(ann("d1-000", "ann1", &[RelationLabel::Comment])).unwrap();
            s.record_annotation(ann("d1-000", "ann1", &[RelationLabel::Contrast])).unwrap();
        }
        let s = AnnotationStore::open(dir.path(), tasks("d1", 3), cfg).unwrap();
        assert_eq!(s.history().len(), 2);
        assert_eq!(s.next_task("ann1").unwrap().unwrap().task_id, "d1-001");
        let m = s.label_matrix(&MatrixFilter::default());
        assert_eq!(m.cell(0, 0), Some(LabelSet::single(RelationLabel::Contrast)));
    }

    #[test]
    fn torn_tail_is_dropped_and_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let a = ann("x", "y", &[RelationLabel::Comment]);
        let line = AppendLog::<Annotation>::encode(&a);
        let mut bytes = line.clone();
        bytes.extend_from_slice(&line[..line.len() / 2]);
        fs::write(&path, &bytes).unwrap();
        let (mut log, recs) = AppendLog::<Annotation>::open(&path, false).unwrap();
        assert_eq!(recs, vec![a.clone()]);
        log.append(&a).unwrap();
        let (_, recs) = AppendLog::<Annotation>::open(&path, false).unwrap();
        assert_eq!(recs.len(), 2);
    }

    #[test]
    fn wire_format_of_annotation() {
        let a = ann("t", "a", &[RelationLabel::Elaboration, RelationLabel::Comment]);
        let v: serde_json::Value = serde_json::to_value(&a).unwrap();
        assert_eq!(v["labels"], serde_json::json!(["Comment", "Elaboration"]));
        assert_eq!(v["ts"], "2023-11-14T22:13:20Z");
        let parsed: Annotation = serde_json::from_str(
            r#"{"task_id":"t","annotator_id":"a","labels":[],"rejected":true,"ts":"2023-11-14T22:13:20Z"}"#,
        )
        .unwrap();
        assert_eq!(parsed.confidence, None);
    }
}
