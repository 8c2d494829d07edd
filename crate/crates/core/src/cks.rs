//! Per-conversation record of questions, sub-questions, retrieved summaries
//! and answers, kept as a canonical JSON document.
//!
//! Canonical form: keys in the order `round`, `original_question`,
//! `optimized_question`, `sub_questions`, `information_summaries`, `answer`,
//! then any unknown keys in input order; two-space indentation; no trailing
//! newline.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const TOP_LEVEL_KEY: &str = "Contextual knowledge set";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub original_question: String,
    pub optimized_question: String,
    pub sub_questions: IndexMap<String, String>,
    pub information_summaries: IndexMap<String, String>,
    pub answer: String,
    #[serde(flatten)]
    pub extra: IndexMap<String, Value>,
}

impl RoundRecord {
    /// Keys `sub1..subK` and `infor1..inforK` are assigned by position; a
    /// sub-question without retrieved information gets an empty summary.
    pub fn new(
        round: u64,
        original_question: impl Into<String>,
        optimized_question: impl Into<String>,
        sub_questions: Vec<String>,
        mut summaries: Vec<String>,
        answer: impl Into<String>,
    ) -> Self {
        summaries.resize(sub_questions.len().max(summaries.len()), String::new());
        Self {
            round,
            original_question: original_question.into(),
            optimized_question: optimized_question.into(),
            sub_questions: sub_questions
                .into_iter()
                .enumerate()
                .map(|(i, s)| (format!("sub{}", i + 1), s))
                .collect(),
            information_summaries: summaries
                .into_iter()
                .enumerate()
                .map(|(i, s)| (format!("infor{}", i + 1), s))
                .collect(),
            answer: answer.into(),
            extra: IndexMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextualKnowledgeSet {
    #[serde(rename = "Contextual knowledge set")]
    rounds: Vec<RoundRecord>,
    #[serde(flatten)]
    extra: IndexMap<String, Value>,
}

impl ContextualKnowledgeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rounds(&self) -> &[RoundRecord] {
        &self.rounds
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn last_round(&self) -> u64 {
        self.rounds.last().map_or(0, |r| r.round)
    }

    /// Returns a new set with `record` appended; `record.round` must be the
    /// next round number.
    pub fn append_round(&self, record: RoundRecord) -> Result<Self> {
        let last = self.last_round();
        if record.round != last + 1 {
            return Err(Error::RoundSequenceError {
                last,
                got: record.round,
            });
        }
        let mut next = self.clone();
        next.rounds.push(record);
        Ok(next)
    }

    /// The canonical document, as substituted into prompts.
    pub fn render_for_prompt(&self) -> String {
        serde_json::to_string_pretty(self).expect("CKS values always serialize")
    }

    pub fn serialize(&self) -> Vec<u8> {
        self.render_for_prompt().into_bytes()
    }

    /// Every information summary and answer, most recent round first; within
    /// a round, summaries in key order followed by the answer.
    pub fn reference_segments(&self) -> Vec<String> {
        self.rounds
            .iter()
            .rev()
            .flat_map(|r| {
                r.information_summaries
                    .values()
                    .cloned()
                    .chain(std::iter::once(r.answer.clone()))
            })
            .collect()
    }

    /// Accepts any key order; rejects missing fields and non-contiguous
    /// round numbers.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let cks: Self = serde_json::from_slice(bytes).map_err(|e| Error::CksParseError {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        for (i, r) in cks.rounds.iter().enumerate() {
            let expected = i as u64 + 1;
            if r.round != expected {
                return Err(Error::RoundSequenceError {
                    last: i as u64,
                    got: r.round,
                });
            }
        }
        Ok(cks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PHOTOSYNTHESIS_SET: &str = r#"{
  "Contextual knowledge set": [
    {
      "round": 1,
      "original_question": "What is the process of ...?",
      "optimized_question": "Explain the steps involved ...",
      "sub_questions": {
        "sub1": "What are the light-dependent reactions ...",
        "sub2": "What are the light-independent reactions ...",
        "sub3": "How do plants convert sunlight into ..."
      },
      "information_summaries": {
        "infor1": "Light-dependent reactions use light ...",
        "infor2": "Light-independent reactions, or the ...",
        "infor3": "Plants convert sunlight into chemical ..."
      },
      "answer": "Photosynthesis is a process where..."
    }
  ]
}"#;

    fn record(round: u64) -> RoundRecord {
        RoundRecord::new(
            round,
            format!("q{round}"),
            format!("o{round}"),
            vec![format!("s{round}a"), format!("s{round}b")],
            vec![format!("i{round}a"), format!("i{round}b")],
            format!("a{round}"),
        )
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let cks = ContextualKnowledgeSet::parse(PHOTOSYNTHESIS_SET.as_bytes()).unwrap();
        assert_eq!(cks.len(), 1);
        assert_eq!(cks.serialize(), PHOTOSYNTHESIS_SET.as_bytes());
        assert!(cks.render_for_prompt().contains("Light-dependent reactions use light"));
    }

    #[test]
    fn empty_set_renders_empty_array() {
        let empty = ContextualKnowledgeSet::new();
        assert_eq!(empty.render_for_prompt(), "{\n  \"Contextual knowledge set\": []\n}");
        assert_eq!(ContextualKnowledgeSet::parse(&empty.serialize()).unwrap(), empty);
        assert!(empty.reference_segments().is_empty());
    }

    #[test]
    fn append_requires_contiguous_rounds() {
        let one = ContextualKnowledgeSet::new().append_round(record(1)).unwrap();
        assert_eq!(one.len(), 1);
        assert!(matches!(
            one.append_round(record(3)),
            Err(Error::RoundSequenceError { last: 1, got: 3 })
        ));
        assert!(ContextualKnowledgeSet::new().append_round(record(2)).is_err());
    }

    #[test]
    fn five_rounds_serialize_in_order() {
        let mut cks = ContextualKnowledgeSet::new();
        for r in 1..=5 {
            cks = cks.append_round(record(r)).unwrap();
        }
        let back = ContextualKnowledgeSet::parse(&cks.serialize()).unwrap();
        assert_eq!(back, cks);
        let rounds: Vec<u64> = back.rounds().iter().map(|r| r.round).collect();
        assert_eq!(rounds, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn reference_segments_most_recent_first() {
        let cks = ContextualKnowledgeSet::new()
            .append_round(record(1))
            .unwrap()
            .append_round(record(2))
            .unwrap();
        assert_eq!(
            cks.reference_segments(),
            vec!["i2a", "i2b", "a2", "i1a", "i1b", "a1"]
        );
        let photo = ContextualKnowledgeSet::parse(PHOTOSYNTHESIS_SET.as_bytes()).unwrap();
        assert_eq!(photo.reference_segments().len(), 4);
    }

    #[test]
    fn missing_answer_is_parse_error() {
        let bad = PHOTOSYNTHESIS_SET.replace(",\n      \"answer\": \"Photosynthesis is a process where...\"", "");
        match ContextualKnowledgeSet::parse(bad.as_bytes()) {
            Err(Error::CksParseError { line, message, .. }) => {
                assert!(line > 1);
                assert!(message.contains("answer"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_position() {
        match ContextualKnowledgeSet::parse(b"{\n  \"Contextual knowledge set\": [\n    {,\n") {
            Err(Error::CksParseError { line, column, .. }) => assert_eq!((line, column), (3, 6)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_contiguous_rounds_rejected_on_parse() {
        let two = PHOTOSYNTHESIS_SET.replace("\"round\": 1", "\"round\": 2");
        assert!(matches!(
            ContextualKnowledgeSet::parse(two.as_bytes()),
            Err(Error::RoundSequenceError { last: 0, got: 2 })
        ));
    }

    #[test]
    fn any_key_order_accepted_and_unknown_fields_kept_after_known() {
        let shuffled = r#"{"Contextual knowledge set": [{"answer": "a", "confidence": 0.5,
            "information_summaries": {"infor1": "i"}, "round": 1, "sub_questions": {"sub1": "s"},
            "optimized_question": "o", "original_question": "q"}], "version": 2}"#;
        let cks = ContextualKnowledgeSet::parse(shuffled.as_bytes()).unwrap();
        let text = cks.render_for_prompt();
        let answer = text.find("\"answer\"").unwrap();
        let confidence = text.find("\"confidence\"").unwrap();
        assert!(answer < confidence);
        assert!(text.trim_end().ends_with("\"version\": 2\n}"));
        assert_eq!(ContextualKnowledgeSet::parse(text.as_bytes()).unwrap(), cks);
    }

    #[test]
    fn summaries_padded_to_sub_question_count() {
        let r = RoundRecord::new(1, "q", "q", vec!["a".into(), "b".into()], vec!["x".into()], "ans");
        assert_eq!(r.information_summaries.get("infor2").map(String::as_str), Some(""));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn text() -> impl Strategy<Value = String> {
            proptest::string::string_regex("[ -~\u{e9}\u{4e2d}\"\\\\\n\t]{0,20}").unwrap()
        }

        fn round_parts() -> impl Strategy<Value = (String, String, Vec<String>, Vec<String>, String)> {
            (text(), text(), proptest::collection::vec(text(), 0..4), proptest::collection::vec(text(), 0..4), text())
        }

        proptest! {
            #[test]
            fn parse_serialize_round_trip(parts in proptest::collection::vec(round_parts(), 0..4)) {
                let mut cks = ContextualKnowledgeSet::new();
                for (i, (q, o, s, inf, a)) in parts.into_iter().enumerate() {
                    cks = cks.append_round(RoundRecord::new(i as u64 + 1, q, o, s, inf, a)).unwrap();
                }
                let bytes = cks.serialize();
                let back = ContextualKnowledgeSet::parse(&bytes).unwrap();
                prop_assert_eq!(&back, &cks);
                prop_assert_eq!(back.serialize(), bytes);
                let expected: usize = cks.rounds().iter().map(|r| r.information_summaries.len() + 1).sum();
                prop_assert_eq!(cks.reference_segments().len(), expected);
            }
        }
    }
}
