//! Turn eligibility and EDU segmentation.
//!
//! Syntactic information comes from a sidecar file with one record per turn, holding
//! `is_verb`/`is_root` flags aligned to the turn's `Word` tokens. Segmentation places
//! boundaries
//!
//! * before a clause-initial connective (a connective followed by a non-verb word and
//!   by a verb before the next connective or hard boundary),
//! * around discourse-marker parentheticals such as "you know",
//! * around bracketed non-speech events, which are excluded from every EDU.
//!
//! Disfluencies and restart fragments stay inside the EDU they occur in. A stretch
//! with no `Word` token never forms an EDU.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{word_key, Dialogue, TokenKind, Turn};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SegmentError {
    #[error("dialogue {dialogue_id} turn {turn_index}: {detail}")]
    AlignmentError {
        dialogue_id: String,
        turn_index: usize,
        detail: String,
    },
    #[error("dialogue {dialogue_id} turn {turn_index} is not eligible for segmentation")]
    NotEligible {
        dialogue_id: String,
        turn_index: usize,
    },
    #[error("no syntactic annotation for dialogue {dialogue_id} turn {turn_index}")]
    MissingSyntax {
        dialogue_id: String,
        turn_index: usize,
    },
    #[error("unknown EDU `{0}`")]
    UnknownEdu(String),
    #[error("a complex unit needs at least two members, got {0}")]
    TooFewMembers(usize),
    #[error("EDUs {0} and {1} are not contiguous")]
    NonContiguous(String, String),
    #[error("EDUs {0} and {1} belong to different speakers")]
    CrossSpeaker(String, String),
    #[error("EDUs {0} and {1} belong to different dialogues")]
    CrossDialogue(String, String),
}

impl SegmentError {
    pub fn code(&self) -> &'static str {
        match self {
            SegmentError::AlignmentError { .. } => "alignment_error",
            SegmentError::NotEligible { .. } => "not_eligible",
            SegmentError::MissingSyntax { .. } => "missing_syntax",
            SegmentError::UnknownEdu(_) => "unknown_edu",
            SegmentError::TooFewMembers(_) => "too_few_members",
            SegmentError::NonContiguous(..) => "non_contiguous",
            SegmentError::CrossSpeaker(..) => "cross_speaker",
            SegmentError::CrossDialogue(..) => "cross_dialogue",
        }
    }
}

/// Per-turn parser output: one flag pair per `Word` token, in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntacticAnnotation {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub is_verb: Vec<bool>,
    pub is_root: Vec<bool>,
}

/// Sidecar records keyed by `(dialogue_id, turn_index)`.
#[derive(Debug, Clone, Default)]
pub struct SyntaxIndex {
    map: HashMap<(String, usize), SyntacticAnnotation>,
}

impl SyntaxIndex {
    pub fn new(records: impl IntoIterator<Item = SyntacticAnnotation>) -> Self {
        let map = records
            .into_iter()
            .map(|r| ((r.dialogue_id.clone(), r.turn_index), r))
            .collect();
        SyntaxIndex { map }
    }

    pub fn get(&self, dialogue_id: &str, turn_index: usize) -> Option<&SyntacticAnnotation> {
        self.map.get(&(dialogue_id.to_string(), turn_index))
    }
}

/// How "at least two roots or verbs" is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EligibilityRule {
    /// ≥2 roots, or ≥2 verbs.
    #[default]
    RootsOrVerbs,
    /// ≥2 words that are a root or a verb (or both).
    CombinedCount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationRules {
    pub connectives: BTreeSet<String>,
    /// Multi-word discourse markers, lowercased.
    pub parentheticals: Vec<Vec<String>>,
    pub eligibility: EligibilityRule,
}

impl Default for SegmentationRules {
    fn default() -> Self {
        let words = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        SegmentationRules {
            connectives: words(&[
                "and", "but", "because", "'cause", "cause", "so", "or", "since", "although",
            ])
            .into_iter()
            .collect(),
            parentheticals: vec![words(&["you", "know"]), words(&["i", "mean"]), words(&["you", "see"])],
            eligibility: EligibilityRule::RootsOrVerbs,
        }
    }
}

/// Elementary discourse unit: a token range `[start_token, end_token)` of one turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edu {
    pub edu_id: String,
    pub dialogue_id: String,
    pub turn_index: usize,
    pub start_token: usize,
    pub end_token: usize,
    pub text: String,
}

/// Contiguous same-speaker EDUs acting as a single argument.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cdu {
    pub cdu_id: String,
    pub member_ids: Vec<String>,
    pub dialogue_id: String,
    pub text: String,
    /// Texts of the member EDUs, in order.
    pub member_texts: Vec<String>,
    pub turn_start: usize,
    pub turn_end: usize,
    pub start_token: usize,
    pub end_token: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "unit", rename_all = "snake_case")]
pub enum DiscourseUnit {
    Edu(Edu),
    Cdu(Cdu),
}

impl DiscourseUnit {
    pub fn id(&self) -> &str {
        match self {
            DiscourseUnit::Edu(e) => &e.edu_id,
            DiscourseUnit::Cdu(c) => &c.cdu_id,
        }
    }

    pub fn dialogue_id(&self) -> &str {
        match self {
            DiscourseUnit::Edu(e) => &e.dialogue_id,
            DiscourseUnit::Cdu(c) => &c.dialogue_id,
        }
    }

    /// Constituent EDU ids in document order.
    pub fn edu_ids(&self) -> Vec<String> {
        match self {
            DiscourseUnit::Edu(e) => vec![e.edu_id.clone()],
            DiscourseUnit::Cdu(c) => c.member_ids.clone(),
        }
    }

    pub fn segments(&self) -> Vec<String> {
        match self {
            DiscourseUnit::Edu(e) => vec![e.text.clone()],
            DiscourseUnit::Cdu(c) => c.member_texts.clone(),
        }
    }

    pub fn text(&self) -> &str {
        match self {
            DiscourseUnit::Edu(e) => &e.text,
            DiscourseUnit::Cdu(c) => &c.text,
        }
    }

    /// `(turn, token)` where the unit starts.
    pub fn start(&self) -> (usize, usize) {
        match self {
            DiscourseUnit::Edu(e) => (e.turn_index, e.start_token),
            DiscourseUnit::Cdu(c) => (c.turn_start, c.start_token),
        }
    }

    /// `(turn, token)` one past where the unit ends.
    pub fn end(&self) -> (usize, usize) {
        match self {
            DiscourseUnit::Edu(e) => (e.turn_index, e.end_token),
            DiscourseUnit::Cdu(c) => (c.turn_end, c.end_token),
        }
    }

    pub fn turn_span(&self) -> (usize, usize) {
        (self.start().0, self.end().0)
    }
}

fn check_alignment(turn: &Turn, dialogue_id: &str, syn: &SyntacticAnnotation) -> Result<(), SegmentError> {
    let words = turn.word_count();
    let err = |detail: String| SegmentError::AlignmentError {
        dialogue_id: dialogue_id.to_string(),
        turn_index: turn.turn_index,
        detail,
    };
    if syn.turn_index != turn.turn_index {
        return Err(err(format!("flags are for turn {}", syn.turn_index)));
    }
    if syn.is_verb.len() != words || syn.is_root.len() != words {
        return Err(err(format!(
            "{} words but {} verb flags and {} root flags",
            words,
            syn.is_verb.len(),
            syn.is_root.len()
        )));
    }
    Ok(())
}

/// Whether a turn qualifies for segmentation under `rule`.
pub fn turn_is_eligible(
    turn: &Turn,
    syn: &SyntacticAnnotation,
    rule: EligibilityRule,
) -> Result<bool, SegmentError> {
    check_alignment(turn, &syn.dialogue_id, syn)?;
    let roots = syn.is_root.iter().filter(|&&r| r).count();
    let verbs = syn.is_verb.iter().filter(|&&v| v).count();
    Ok(match rule {
        EligibilityRule::RootsOrVerbs => roots >= 2 || verbs >= 2,
        EligibilityRule::CombinedCount => {
            syn.is_root
                .iter()
                .zip(&syn.is_verb)
                .filter(|(r, v)| **r || **v)
                .count()
                >= 2
        }
    })
}

fn ends_with_punct(surface: &str) -> bool {
    surface
        .chars()
        .last()
        .is_some_and(|c| matches!(c, ',' | '.' | '?' | '!' | ';' | ':'))
}

fn is_non_speech(kind: TokenKind) -> bool {
    matches!(kind, TokenKind::Laughter | TokenKind::Noise)
}

/// Segments an eligible turn into EDUs.
pub fn segment_turn(
    turn: &Turn,
    syn: &SyntacticAnnotation,
    rules: &SegmentationRules,
) -> Result<Vec<Edu>, SegmentError> {
    if !turn_is_eligible(turn, syn, rules.eligibility)? {
        return Err(SegmentError::NotEligible {
            dialogue_id: syn.dialogue_id.clone(),
            turn_index: turn.turn_index,
        });
    }
    let toks = &turn.tokens;
    let n = toks.len();

    // is_verb per token; None for non-words.
    let mut verb = vec![None; n];
    let mut w = 0;
    for (i, t) in toks.iter().enumerate() {
        if t.kind == TokenKind::Word {
            verb[i] = Some(syn.is_verb[w]);
            w += 1;
        }
    }
    let keys: Vec<String> = toks.iter().map(|t| word_key(&t.surface)).collect();

    // boundary[i]: a new segment starts at token i.
    let mut boundary = vec![false; n + 1];
    let mut excluded = vec![false; n];
    for (i, t) in toks.iter().enumerate() {
        if is_non_speech(t.kind) {
            excluded[i] = true;
            boundary[i] = true;
            boundary[i + 1] = true;
        }
    }

    let mut i = 0;
    while i < n {
        let matched = rules.parentheticals.iter().find(|pat| {
            let k = pat.len();
            k > 0
                && i + k <= n
                && (0..k).all(|j| toks[i + j].kind == TokenKind::Word && keys[i + j] == pat[j])
                && (i == 0 || ends_with_punct(&toks[i - 1].surface) || is_non_speech(toks[i - 1].kind))
                && (i + k == n
                    || ends_with_punct(&toks[i + k - 1].surface)
                    || is_non_speech(toks[i + k].kind))
        });
        if let Some(pat) = matched {
            boundary[i] = true;
            boundary[i + pat.len()] = true;
            i += pat.len();
        } else {
            i += 1;
        }
    }

    let hard = boundary.clone();
    for i in 0..n {
        if verb[i].is_none() || !rules.connectives.contains(&keys[i]) {
            continue;
        }
        if !(0..i).any(|j| verb[j].is_some()) {
            continue;
        }
        // Words of the clause the connective would introduce.
        let mut clause = Vec::new();
        for j in i + 1..n {
            if hard[j] || (verb[j].is_some() && rules.connectives.contains(&keys[j])) {
                break;
            }
            if let Some(v) = verb[j] {
                clause.push(v);
            }
        }
        let introduces_clause = matches!(clause.first(), Some(false)) && clause.iter().any(|&v| v);
        if introduces_clause {
            boundary[i] = true;
        }
    }

    let mut edus = Vec::new();
    let mut seg_start: Option<usize> = None;
    let flush = |start: usize, end: usize, edus: &mut Vec<Edu>| {
        if (start..end).any(|j| toks[j].kind == TokenKind::Word) {
            let text = turn.raw_text[toks[start].char_span.0..toks[end - 1].char_span.1].to_string();
            edus.push(Edu {
                edu_id: format!("{}.t{}.e{}", syn.dialogue_id, turn.turn_index, edus.len()),
                dialogue_id: syn.dialogue_id.clone(),
                turn_index: turn.turn_index,
                start_token: start,
                end_token: end,
                text,
            });
        }
    };
    for i in 0..n {
        if boundary[i] {
            if let Some(s) = seg_start.take() {
                flush(s, i, &mut edus);
            }
        }
        if excluded[i] {
            continue;
        }
        if seg_start.is_none() {
            seg_start = Some(i);
        }
    }
    if let Some(s) = seg_start {
        flush(s, n, &mut edus);
    }
    Ok(edus)
}

/// Segments every eligible turn of a dialogue. Every turn needs a sidecar record.
pub fn segment_dialogue(
    dialogue: &Dialogue,
    syntax: &SyntaxIndex,
    rules: &SegmentationRules,
) -> Result<Vec<Edu>, SegmentError> {
    let mut out = Vec::new();
    for turn in &dialogue.turns {
        let syn = syntax
            .get(&dialogue.dialogue_id, turn.turn_index)
            .ok_or_else(|| SegmentError::MissingSyntax {
                dialogue_id: dialogue.dialogue_id.clone(),
                turn_index: turn.turn_index,
            })?;
        if turn_is_eligible(turn, syn, rules.eligibility)? {
            out.extend(segment_turn(turn, syn, rules)?);
        }
    }
    Ok(out)
}

/// Lookup of EDUs with speaker information, used to validate complex units.
#[derive(Debug, Clone)]
pub struct EduIndex {
    edus: Vec<Edu>,
    by_id: HashMap<String, usize>,
    speaker: Vec<String>,
    /// Position of each EDU within its speaker's material, in document order.
    speaker_pos: Vec<usize>,
}

impl EduIndex {
    /// `dialogues` supplies speakers; EDUs of unknown dialogues get an empty speaker.
    pub fn new(mut edus: Vec<Edu>, dialogues: &[Dialogue]) -> Self {
        edus.sort_by(|a, b| {
            (&a.dialogue_id, a.turn_index, a.start_token).cmp(&(&b.dialogue_id, b.turn_index, b.start_token))
        });
        let by_dialogue: HashMap<&str, &Dialogue> =
            dialogues.iter().map(|d| (d.dialogue_id.as_str(), d)).collect();
        let speaker: Vec<String> = edus
            .iter()
            .map(|e| {
                by_dialogue
                    .get(e.dialogue_id.as_str())
                    .and_then(|d| d.turn(e.turn_index))
                    .map(|t| t.speaker.clone())
                    .unwrap_or_default()
            })
            .collect();
        let mut counters: HashMap<(String, String), usize> = HashMap::new();
        let speaker_pos = edus
            .iter()
            .zip(&speaker)
            .map(|(e, s)| {
                let c = counters.entry((e.dialogue_id.clone(), s.clone())).or_default();
                *c += 1;
                *c - 1
            })
            .collect();
        let by_id = edus.iter().enumerate().map(|(i, e)| (e.edu_id.clone(), i)).collect();
        EduIndex {
            edus,
            by_id,
            speaker,
            speaker_pos,
        }
    }

    pub fn get(&self, edu_id: &str) -> Option<&Edu> {
        self.by_id.get(edu_id).map(|&i| &self.edus[i])
    }

    pub fn speaker_of(&self, edu_id: &str) -> Option<&str> {
        self.by_id.get(edu_id).map(|&i| self.speaker[i].as_str())
    }

    pub fn edus(&self) -> &[Edu] {
        &self.edus
    }
}

/// Groups contiguous same-speaker EDUs into a complex unit.
pub fn build_cdu(member_ids: &[String], index: &EduIndex) -> Result<Cdu, SegmentError> {
    if member_ids.len() < 2 {
        return Err(SegmentError::TooFewMembers(member_ids.len()));
    }
    let idx: Vec<usize> = member_ids
        .iter()
        .map(|id| index.by_id.get(id).copied().ok_or_else(|| SegmentError::UnknownEdu(id.clone())))
        .collect::<Result<_, _>>()?;
    for w in idx.windows(2) {
        let (a, b) = (&index.edus[w[0]], &index.edus[w[1]]);
        if a.dialogue_id != b.dialogue_id {
            return Err(SegmentError::CrossDialogue(a.edu_id.clone(), b.edu_id.clone()));
        }
        if index.speaker[w[0]] != index.speaker[w[1]] {
            return Err(SegmentError::CrossSpeaker(a.edu_id.clone(), b.edu_id.clone()));
        }
        if index.speaker_pos[w[1]] != index.speaker_pos[w[0]] + 1 {
            return Err(SegmentError::NonContiguous(a.edu_id.clone(), b.edu_id.clone()));
        }
    }
    let members: Vec<&Edu> = idx.iter().map(|&i| &index.edus[i]).collect();
    let first = members[0];
    let last = members[members.len() - 1];
    let member_texts: Vec<String> = members.iter().map(|e| e.text.clone()).collect();
    Ok(Cdu {
        cdu_id: member_ids.join("+"),
        member_ids: member_ids.to_vec(),
        dialogue_id: first.dialogue_id.clone(),
        text: member_texts.join(" "),
        member_texts,
        turn_start: first.turn_index,
        turn_end: last.turn_index,
        start_token: first.start_token,
        end_token: last.end_token,
    })
}
