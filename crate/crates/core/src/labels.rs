//! Relation inventory, multi-label sets, and the task × annotator label matrix.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// The eleven relations offered to annotators plus `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelationLabel {
    Acknowledgement,
    Background,
    ClarificationQuestion,
    Comment,
    Continuation,
    Contrast,
    Elaboration,
    Explanation,
    Narration,
    QuestionAnswerPair,
    Result,
    Other,
}

pub const N_LABELS: usize = 12;

impl RelationLabel {
    pub const ALL: [RelationLabel; N_LABELS] = [
        RelationLabel::Acknowledgement,
        RelationLabel::Background,
        RelationLabel::ClarificationQuestion,
        RelationLabel::Comment,
        RelationLabel::Continuation,
        RelationLabel::Contrast,
        RelationLabel::Elaboration,
        RelationLabel::Explanation,
        RelationLabel::Narration,
        RelationLabel::QuestionAnswerPair,
        RelationLabel::Result,
        RelationLabel::Other,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            RelationLabel::Acknowledgement => "Acknowledgement",
            RelationLabel::Background => "Background",
            RelationLabel::ClarificationQuestion => "ClarificationQuestion",
            RelationLabel::Comment => "Comment",
            RelationLabel::Continuation => "Continuation",
            RelationLabel::Contrast => "Contrast",
            RelationLabel::Elaboration => "Elaboration",
            RelationLabel::Explanation => "Explanation",
            RelationLabel::Narration => "Narration",
            RelationLabel::QuestionAnswerPair => "QuestionAnswerPair",
            RelationLabel::Result => "Result",
            RelationLabel::Other => "Other",
        }
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown relation label `{0}`")]
pub struct UnknownLabel(pub String);

impl FromStr for RelationLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        let label = match key.as_str() {
            "acknowledgement" | "acknowledgment" | "ack" => RelationLabel::Acknowledgement,
            "background" => RelationLabel::Background,
            "clarificationquestion" | "clarificationq" | "clarifq" => {
                RelationLabel::ClarificationQuestion
            }
            "comment" => RelationLabel::Comment,
            "continuation" => RelationLabel::Continuation,
            "contrast" => RelationLabel::Contrast,
            "elaboration" => RelationLabel::Elaboration,
            "explanation" => RelationLabel::Explanation,
            "narration" => RelationLabel::Narration,
            "questionanswerpair" | "qapair" | "qap" => RelationLabel::QuestionAnswerPair,
            "result" => RelationLabel::Result,
            "other" => RelationLabel::Other,
            _ => return Err(UnknownLabel(s.to_string())),
        };
        Ok(label)
    }
}

/// A set of relation labels stored as a 12-bit mask.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LabelSet(u16);

impl LabelSet {
    pub const EMPTY: LabelSet = LabelSet(0);

    pub fn from_bits(bits: u16) -> Self {
        LabelSet(bits & ((1 << N_LABELS) - 1))
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn single(label: RelationLabel) -> Self {
        LabelSet(1 << label.index())
    }

    pub fn insert(&mut self, label: RelationLabel) {
        self.0 |= 1 << label.index();
    }

    pub fn contains(self, label: RelationLabel) -> bool {
        self.0 & (1 << label.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersection(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 & other.0)
    }

    pub fn union(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 | other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = RelationLabel> {
        RelationLabel::ALL
            .into_iter()
            .filter(move |l| self.contains(*l))
    }
}

impl FromIterator<RelationLabel> for LabelSet {
    fn from_iter<I: IntoIterator<Item = RelationLabel>>(iter: I) -> Self {
        let mut set = LabelSet::EMPTY;
        for l in iter {
            set.insert(l);
        }
        set
    }
}

impl fmt::Debug for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl Serialize for LabelSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for LabelSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(deserializer)?;
        names
            .iter()
            .map(|n| n.parse::<RelationLabel>())
            .collect::<Result<LabelSet, _>>()
            .map_err(serde::de::Error::custom)
    }
}

/// Task × annotator grid of label decisions.
///
/// `None` is a missing cell (not annotated); `Some(LabelSet::EMPTY)` is an explicit
/// rejection.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelMatrix {
    pub task_ids: Vec<String>,
    pub annotator_ids: Vec<String>,
    pub cells: Vec<Vec<Option<LabelSet>>>,
}

impl LabelMatrix {
    /// Builds a matrix from rows of cells; panics if a row length differs from the
    /// annotator count.
    pub fn new(
        task_ids: Vec<String>,
        annotator_ids: Vec<String>,
        cells: Vec<Vec<Option<LabelSet>>>,
    ) -> Self {
        assert_eq!(task_ids.len(), cells.len(), "one cell row per task");
        for row in &cells {
            assert_eq!(row.len(), annotator_ids.len(), "one cell per annotator");
        }
        LabelMatrix {
            task_ids,
            annotator_ids,
            cells,
        }
    }

    /// Convenience constructor with generated ids (`t0..`, `a0..`).
    pub fn from_cells(cells: Vec<Vec<Option<LabelSet>>>) -> Self {
        let n_annot = cells.first().map_or(0, Vec::len);
        let task_ids = (0..cells.len()).map(|i| format!("t{i}")).collect();
        let annotator_ids = (0..n_annot).map(|j| format!("a{j}")).collect();
        Self::new(task_ids, annotator_ids, cells)
    }

    pub fn n_tasks(&self) -> usize {
        self.task_ids.len()
    }

    pub fn n_annotators(&self) -> usize {
        self.annotator_ids.len()
    }

    pub fn cell(&self, task: usize, annotator: usize) -> Option<LabelSet> {
        self.cells[task][annotator]
    }

    /// Number of populated cells per annotator column.
    pub fn column_counts(&self) -> Vec<usize> {
        (0..self.n_annotators())
            .map(|j| self.cells.iter().filter(|row| row[j].is_some()).count())
            .collect()
    }

    /// All populated cells of one annotator, in row order.
    pub fn column_sets(&self, annotator: usize) -> Vec<LabelSet> {
        self.cells.iter().filter_map(|row| row[annotator]).collect()
    }

    /// Copy with rejection cells turned into missing cells.
    pub fn without_rejections(&self) -> LabelMatrix {
        let cells = self
            .cells
            .iter()
            .map(|row| {
                row.iter()
                    .map(|c| c.filter(|s| !s.is_empty()))
                    .collect()
            })
            .collect();
        LabelMatrix {
            task_ids: self.task_ids.clone(),
            annotator_ids: self.annotator_ids.clone(),
            cells,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn twelve_labels_with_stable_indices() {
        assert_eq!(RelationLabel::ALL.len(), 12);
        for (i, l) in RelationLabel::ALL.iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(RelationLabel::from_index(i), Some(*l));
            assert_eq!(l.name().parse::<RelationLabel>(), Ok(*l));
        }
        assert_eq!(RelationLabel::from_index(12), None);
    }

    #[test]
    fn parses_table_style_names() {
        assert_eq!("Q-A Pair".parse(), Ok(RelationLabel::QuestionAnswerPair));
        assert_eq!("Clarification Q.".parse(), Ok(RelationLabel::ClarificationQuestion));
        assert!("Summary".parse::<RelationLabel>().is_err());
    }

    #[test]
    fn label_set_serializes_as_names() {
        let set: LabelSet = [RelationLabel::Elaboration, RelationLabel::Comment]
            .into_iter()
            .collect();
        let json = serde_json::to_string(&set).unwrap();
        assert_eq!(json, r#"["Comment","Elaboration"]"#);
        assert_eq!(serde_json::from_str::<LabelSet>(&json).unwrap(), set);
        assert!(serde_json::from_str::<LabelSet>(r#"["Nope"]"#).is_err());
    }

    proptest! {
        #[test]
        fn set_algebra_matches_bit_counts(a in 0u16..4096, b in 0u16..4096) {
            let (sa, sb) = (LabelSet::from_bits(a), LabelSet::from_bits(b));
            prop_assert_eq!(sa.intersection(sb).len(), (a & b).count_ones() as usize);
            prop_assert_eq!(sa.union(sb).len() + sa.intersection(sb).len(), sa.len() + sb.len());
            prop_assert_eq!(sa.iter().collect::<LabelSet>(), sa);
        }
    }
}
