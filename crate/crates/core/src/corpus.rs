//! Dialogue transcripts and spoken-language token normalization.
//!
//! Transcripts arrive as one JSON turn record per line:
//!
//! ```text
//! {"dialogue_id": "sw2005", "turn_index": 0, "speaker": "A", "text": "it starts recording now."}
//! ```
//!
//! Records may be unsorted. [`ingest_transcripts`] groups them into dyadic
//! [`Dialogue`]s and tokenizes each turn with [`normalize_turn`].

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("malformed record at line {line}: {detail}")]
    MalformedRecord { line: usize, detail: String },
    #[error("dialogue {dialogue_id} has {n_speakers} distinct speakers, expected 2")]
    NonDyadic {
        dialogue_id: String,
        n_speakers: usize,
    },
    #[error("dialogue {dialogue_id}: expected turn index {expected}, found {found}")]
    IndexGap {
        dialogue_id: String,
        expected: usize,
        found: usize,
    },
    #[error("dialogue {dialogue_id}: turn index {turn_index} appears more than once")]
    DuplicateTurn {
        dialogue_id: String,
        turn_index: usize,
    },
    #[error("unclosed bracket at byte {offset}")]
    UnclosedBracket { offset: usize },
    #[error("io: {0}")]
    Io(String),
}

impl CorpusError {
    pub fn code(&self) -> &'static str {
        match self {
            CorpusError::MalformedRecord { .. } => "malformed_record",
            CorpusError::NonDyadic { .. } => "non_dyadic",
            CorpusError::IndexGap { .. } => "index_gap",
            CorpusError::DuplicateTurn { .. } => "duplicate_turn",
            CorpusError::UnclosedBracket { .. } => "unclosed_bracket",
            CorpusError::Io(_) => "io_failure",
        }
    }
}

/// One line of the transcripts file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub speaker: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Word,
    Laughter,
    Noise,
    Disfluency,
    RestartFragment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub kind: TokenKind,
    /// Byte offsets `[start, end)` into the turn's raw text.
    pub char_span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_index: usize,
    pub speaker: String,
    pub raw_text: String,
    pub tokens: Vec<Token>,
}

impl Turn {
    pub fn word_count(&self) -> usize {
        self.tokens
            .iter()
            .filter(|t| t.kind == TokenKind::Word)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub topic: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn turn(&self, index: usize) -> Option<&Turn> {
        self.turns.get(index)
    }

    /// Back to transcript records, one per turn.
    pub fn to_records(&self) -> Vec<TurnRecord> {
        self.turns
            .iter()
            .map(|t| TurnRecord {
                dialogue_id: self.dialogue_id.clone(),
                turn_index: t.turn_index,
                speaker: t.speaker.clone(),
                text: t.raw_text.clone(),
                topic: (!self.topic.is_empty()).then(|| self.topic.clone()),
            })
            .collect()
    }
}

/// Bracketed event names and the disfluency lexicon used by [`normalize_turn`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerConfig {
    /// Bracket contents treated as laughter, e.g. `laughter` for `[laughter]`.
    pub laughter: BTreeSet<String>,
    /// Known noise events. Unknown bracketed events are also noise.
    pub noise: BTreeSet<String>,
    /// Filled pauses. Backchannels such as "uh-huh" and "okay" are words.
    pub disfluencies: BTreeSet<String>,
}

impl Default for MarkerConfig {
    fn default() -> Self {
        let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        MarkerConfig {
            laughter: set(&["laughter"]),
            noise: set(&["noise", "vocalized-noise", "static"]),
            disfluencies: set(&["uh", "um", "er", "ah"]),
        }
    }
}

fn is_edge_punct(c: char) -> bool {
    matches!(c, ',' | '.' | '?' | '!' | ';' | ':' | '"' | '(' | ')')
}

/// Strips surrounding punctuation (but not hyphens) and lowercases.
pub fn word_key(surface: &str) -> String {
    surface
        .trim_matches(is_edge_punct)
        .to_lowercase()
}

fn classify_word(surface: &str, config: &MarkerConfig) -> TokenKind {
    let key = word_key(surface);
    if config.disfluencies.contains(&key) {
        TokenKind::Disfluency
    } else if key.ends_with('-') && key.chars().any(char::is_alphanumeric) {
        TokenKind::RestartFragment
    } else {
        TokenKind::Word
    }
}

/// Splits a turn into typed tokens.
///
/// Tokens are whitespace-delimited with punctuation attached; a `[...]` event is
/// always its own token, even when written flush against a word.
pub fn normalize_turn(raw_text: &str, config: &MarkerConfig) -> Result<Vec<Token>, CorpusError> {
    let mut tokens = Vec::new();
    let bytes = raw_text.as_bytes();
    let mut pos = 0;
    while pos < raw_text.len() {
        let c = raw_text[pos..].chars().next().expect("in bounds");
        if c.is_whitespace() {
            pos += c.len_utf8();
            continue;
        }
        if c == '[' {
            let close = raw_text[pos..]
                .find(']')
                .ok_or(CorpusError::UnclosedBracket { offset: pos })?;
            let end = pos + close + 1;
            let inner = raw_text[pos + 1..end - 1].trim().to_lowercase();
            let kind = if config.laughter.contains(&inner) {
                TokenKind::Laughter
            } else {
                TokenKind::Noise
            };
            tokens.push(Token {
                surface: raw_text[pos..end].to_string(),
                kind,
                char_span: (pos, end),
            });
            pos = end;
            continue;
        }
        let start = pos;
        while pos < raw_text.len() {
            let c = raw_text[pos..].chars().next().expect("in bounds");
            if c.is_whitespace() || bytes[pos] == b'[' {
                break;
            }
            pos += c.len_utf8();
        }
        let surface = &raw_text[start..pos];
        tokens.push(Token {
            surface: surface.to_string(),
            kind: classify_word(surface, config),
            char_span: (start, pos),
        });
    }
    Ok(tokens)
}

/// Groups records into dialogues (sorted by id) with turns sorted by index.
pub fn ingest_transcripts(
    records: impl IntoIterator<Item = TurnRecord>,
    config: &MarkerConfig,
) -> Result<Vec<Dialogue>, CorpusError> {
    let mut grouped: BTreeMap<String, Vec<TurnRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.dialogue_id.clone()).or_default().push(r);
    }
    let mut dialogues = Vec::with_capacity(grouped.len());
    for (dialogue_id, mut recs) in grouped {
        recs.sort_by_key(|r| r.turn_index);
        let speakers: BTreeSet<&str> = recs.iter().map(|r| r.speaker.as_str()).collect();
        if speakers.len() != 2 {
            return Err(CorpusError::NonDyadic {
                dialogue_id,
                n_speakers: speakers.len(),
            });
        }
        let mut turns = Vec::with_capacity(recs.len());
        let mut topic = String::new();
        for (expected, r) in recs.into_iter().enumerate() {
            if r.turn_index < expected {
                return Err(CorpusError::DuplicateTurn {
                    dialogue_id,
                    turn_index: r.turn_index,
                });
            }
            if r.turn_index != expected {
                return Err(CorpusError::IndexGap {
                    dialogue_id,
                    expected,
                    found: r.turn_index,
                });
            }
            if topic.is_empty() {
                if let Some(t) = r.topic {
                    topic = t;
                }
            }
            let tokens = normalize_turn(&r.text, config)?;
            turns.push(Turn {
                turn_index: r.turn_index,
                speaker: r.speaker,
                raw_text: r.text,
                tokens,
            });
        }
        dialogues.push(Dialogue {
            dialogue_id,
            topic,
            turns,
        });
    }
    Ok(dialogues)
}

/// Reads a transcripts file. Every line must carry `dialogue_id`, `turn_index`,
/// `speaker` and `text`; other fields are ignored.
pub fn read_transcripts<R: BufRead>(reader: R) -> Result<Vec<TurnRecord>, CorpusError> {
    crate::jsonl::read_jsonl(reader).map_err(|e| match e {
        crate::jsonl::JsonlError::Parse { line, source } => CorpusError::MalformedRecord {
            line,
            detail: source.to_string(),
        },
        crate::jsonl::JsonlError::Io(e) => CorpusError::Io(e.to_string()),
    })
}

/// Reads a transcripts file from disk.
pub fn read_transcripts_file(path: &std::path::Path) -> Result<Vec<TurnRecord>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| CorpusError::Io(format!("{}: {e}", path.display())))?;
    read_transcripts(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(d: &str, i: usize, s: &str, text: &str) -> TurnRecord {
        TurnRecord {
            dialogue_id: d.into(),
            turn_index: i,
            speaker: s.into(),
            text: text.into(),
            topic: None,
        }
    }

    fn kinds(text: &str) -> Vec<(String, TokenKind)> {
        normalize_turn(text, &MarkerConfig::default())
            .unwrap()
            .into_iter()
            .map(|t| (t.surface, t.kind))
            .collect()
    }

    #[test]
    fn minimal_dyad() {
        let ds = ingest_transcripts(
            [rec("d1", 0, "A", "hi"), rec("d1", 1, "B", "hello")],
            &MarkerConfig::default(),
        )
        .unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds[0].turns.len(), 2);
    }

    #[test]
    fn three_speakers_is_non_dyadic() {
        let err = ingest_transcripts(
            [
                rec("d1", 0, "A", "a"),
                rec("d1", 1, "B", "b"),
                rec("d1", 2, "C", "c"),
            ],
            &MarkerConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err.code(), "non_dyadic");
    }

    #[test]
    fn gaps_and_duplicates_are_rejected() {
        let cfg = MarkerConfig::default();
        let gap = ingest_transcripts([rec("d", 0, "A", "x"), rec("d", 2, "B", "y")], &cfg);
        assert!(matches!(gap, Err(CorpusError::IndexGap { expected: 1, found: 2, .. })));
        let late_start = ingest_transcripts([rec("d", 1, "A", "x"), rec("d", 2, "B", "y")], &cfg);
        assert!(matches!(late_start, Err(CorpusError::IndexGap { expected: 0, .. })));
        let dup = ingest_transcripts(
            [rec("d", 0, "A", "x"), rec("d", 1, "B", "y"), rec("d", 1, "A", "z")],
            &cfg,
        );
        assert!(matches!(dup, Err(CorpusError::DuplicateTurn { turn_index: 1, .. })));
    }

    #[test]
    fn shuffled_input_matches_sorted_reference() {
        let sorted = vec![
            rec("d1", 0, "A", "we live in the Saginaw area."),
            rec("d1", 1, "B", "Saginaw?"),
            rec("d1", 2, "A", "Uh-huh."),
            rec("d2", 0, "B", "it starts recording now."),
            rec("d2", 1, "A", "Okay."),
            rec("d2", 2, "B", "so uh [laughter] yeah"),
        ];
        let mut shuffled = sorted.clone();
        shuffled.swap(0, 5);
        shuffled.swap(1, 3);
        shuffled.swap(2, 4);
        let cfg = MarkerConfig::default();
        // Reference: sort by (dialogue, turn), then group contiguous runs.
        let mut reference = shuffled.clone();
        reference.sort_by(|a, b| (&a.dialogue_id, a.turn_index).cmp(&(&b.dialogue_id, b.turn_index)));
        let mut expected_ids: Vec<(String, Vec<usize>)> = Vec::new();
        for r in &reference {
            match expected_ids.last_mut() {
                Some((d, turns)) if *d == r.dialogue_id => turns.push(r.turn_index),
                _ => expected_ids.push((r.dialogue_id.clone(), vec![r.turn_index])),
            }
        }
        let got = ingest_transcripts(shuffled, &cfg).unwrap();
        let got_ids: Vec<(String, Vec<usize>)> = got
            .iter()
            .map(|d| (d.dialogue_id.clone(), d.turns.iter().map(|t| t.turn_index).collect()))
            .collect();
        assert_eq!(got_ids, expected_ids);
        assert_eq!(got, ingest_transcripts(sorted, &cfg).unwrap());
    }

    #[test]
    fn laughter_token() {
        let toks = kinds("So you don't see too many thrown out around the [laughter] streets.");
        let laughs: Vec<_> = toks.iter().filter(|(_, k)| *k == TokenKind::Laughter).collect();
        assert_eq!(laughs.len(), 1);
        assert_eq!(laughs[0].0, "[laughter]");
        assert_eq!(toks.last().unwrap(), &("streets.".to_string(), TokenKind::Word));
    }

    #[test]
    fn restart_fragment() {
        let toks = kinds("and so--");
        assert_eq!(toks.last().unwrap(), &("so--".to_string(), TokenKind::RestartFragment));
        let toks = kinds("set tr-, separate trash cans");
        assert_eq!(toks[1], ("tr-,".to_string(), TokenKind::RestartFragment));
        // Bare dashes are punctuation, not truncated words.
        assert_eq!(kinds("well -- yes")[1].1, TokenKind::Word);
    }

    #[test]
    fn disfluency_vs_backchannel() {
        assert_eq!(
            kinds("uh okay"),
            vec![
                ("uh".to_string(), TokenKind::Disfluency),
                ("okay".to_string(), TokenKind::Word)
            ]
        );
        assert_eq!(kinds("Uh-huh.")[0].1, TokenKind::Word);
        assert_eq!(kinds("Um, yes")[0].1, TokenKind::Disfluency);
    }

    #[test]
    fn unknown_bracket_is_noise_and_unclosed_errors() {
        assert_eq!(kinds("[door slams] ok")[0].1, TokenKind::Noise);
        assert_eq!(kinds("yes[noise]")[1], ("[noise]".to_string(), TokenKind::Noise));
        assert_eq!(
            normalize_turn("and [laugh", &MarkerConfig::default()),
            Err(CorpusError::UnclosedBracket { offset: 4 })
        );
    }

    #[test]
    fn missing_field_is_malformed() {
        let input = "{\"dialogue_id\":\"d\",\"turn_index\":0,\"speaker\":\"A\"}\n";
        let err = read_transcripts(input.as_bytes()).unwrap_err();
        assert_eq!(err.code(), "malformed_record");
        let ok = "{\"dialogue_id\":\"d\",\"turn_index\":0,\"speaker\":\"A\",\"text\":\"x\",\"extra\":1}\n";
        assert_eq!(read_transcripts(ok.as_bytes()).unwrap().len(), 1);
    }

    fn text_strategy() -> impl Strategy<Value = String> {
        let piece = prop_oneof![
            "[a-zA-Z']{1,7}[,.?]?",
            Just("uh".to_string()),
            Just("tr-".to_string()),
            Just("[laughter]".to_string()),
            Just("[noise]".to_string()),
            Just("--".to_string()),
        ];
        (prop::collection::vec(piece, 1..12), prop::collection::vec(" {1,3}|\t", 12))
            .prop_map(|(pieces, seps)| {
                let mut s = String::new();
                for (p, sep) in pieces.iter().zip(seps.iter()) {
                    s.push_str(p);
                    s.push_str(sep);
                }
                s
            })
    }

    proptest! {
        #[test]
        fn spans_partition_non_whitespace(text in text_strategy()) {
            let cfg = MarkerConfig::default();
            let toks = normalize_turn(&text, &cfg).unwrap();
            let mut last_end = 0;
            for t in &toks {
                prop_assert!(t.char_span.0 >= last_end);
                prop_assert!(t.char_span.0 < t.char_span.1);
                prop_assert!(text[last_end..t.char_span.0].chars().all(char::is_whitespace));
                prop_assert_eq!(&text[t.char_span.0..t.char_span.1], t.surface.as_str());
                last_end = t.char_span.1;
            }
            prop_assert!(text[last_end..].chars().all(char::is_whitespace));
            prop_assert_eq!(toks.clone(), normalize_turn(&text, &cfg).unwrap());
        }

        #[test]
        fn ingest_is_idempotent(texts in prop::collection::vec(text_strategy(), 2..6)) {
            let cfg = MarkerConfig::default();
            let records: Vec<TurnRecord> = texts
                .iter()
                .enumerate()
                .map(|(i, t)| rec("d", i, if i % 2 == 0 { "A" } else { "B" }, t))
                .collect();
            let once = ingest_transcripts(records, &cfg).unwrap();
            let again = ingest_transcripts(once[0].to_records(), &cfg).unwrap();
            prop_assert_eq!(
                serde_json::to_string(&once).unwrap(),
                serde_json::to_string(&again).unwrap()
            );
        }
    }
}
