//! Annotation task and record types shared by the labeling service and the
//! dataset builder.

use serde::{Deserialize, Serialize};

use crate::notes::char_slice;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    DescribesCharacter,
    NotDescribes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Assigned,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    /// Sample this task labels; duplicates share it with their original.
    pub sample_id: String,
    pub note_text: String,
    pub trait_surface: String,
    /// Character offsets of the highlighted trait in `note_text`.
    pub trait_span: (usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub underlined: Option<String>,
    pub status: TaskStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_group: Option<String>,
}

impl AnnotationTask {
    pub fn validate(&self) -> Result<(), String> {
        let (s, e) = self.trait_span;
        match char_slice(&self.note_text, s, e) {
            Some(sub) if s < e && sub == self.trait_surface => Ok(()),
            _ => Err(format!("trait span {s}..{e} does not hold {:?} in the note text", self.trait_surface)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub task_id: String,
    pub annotator_id: String,
    pub decision: Decision,
    /// Character offsets into the note text; present iff the decision is positive.
    #[serde(default)]
    pub character_span: Option<(usize, usize)>,
    pub elapsed: f64,
    #[serde(default)]
    pub duplicate_group: Option<String>,
}

impl AnnotationRecord {
    /// Check the record against the note it labels.
    pub fn validate(&self, note_text: &str) -> Result<(), String> {
        if !self.elapsed.is_finite() || self.elapsed < 0.0 {
            return Err(format!("invalid elapsed time {}", self.elapsed));
        }
        match (self.decision, self.character_span) {
            (Decision::DescribesCharacter, None) => Err("positive decision requires a character span".into()),
            (Decision::NotDescribes, Some(_)) => Err("negative decision must leave the character span empty".into()),
            (Decision::DescribesCharacter, Some((s, e))) => {
                let len = note_text.chars().count();
                if s >= e || e > len {
                    Err(format!("character span {s}..{e} is empty or outside a note of {len} characters"))
                } else {
                    Ok(())
                }
            }
            (Decision::NotDescribes, None) => Ok(()),
        }
    }

    pub fn character_surface(&self, note_text: &str) -> Option<String> {
        self.character_span.and_then(|(s, e)| char_slice(note_text, s, e))
    }
}

/// Exported label for one completed sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub sample_id: String,
    pub task_id: String,
    pub annotator_id: String,
    pub decision: Decision,
    pub note_text: String,
    #[serde(default)]
    pub character_span: Option<(usize, usize)>,
    #[serde(default)]
    pub character: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(decision: Decision, span: Option<(usize, usize)>) -> AnnotationRecord {
        AnnotationRecord {
            task_id: "t".into(),
            annotator_id: "a".into(),
            decision,
            character_span: span,
            elapsed: 12.0,
            duplicate_group: None,
        }
    }

    #[test]
    fn span_presence_follows_decision() {
        let note = "Dantes is brave";
        assert!(rec(Decision::DescribesCharacter, Some((0, 6))).validate(note).is_ok());
        assert!(rec(Decision::DescribesCharacter, None).validate(note).is_err());
        assert!(rec(Decision::DescribesCharacter, Some((3, 3))).validate(note).is_err());
        assert!(rec(Decision::DescribesCharacter, Some((10, 16))).validate(note).is_err());
        assert!(rec(Decision::NotDescribes, None).validate(note).is_ok());
        assert!(rec(Decision::NotDescribes, Some((0, 6))).validate(note).is_err());
        assert_eq!(rec(Decision::DescribesCharacter, Some((0, 6))).character_surface(note).unwrap(), "Dantes");
    }

    #[test]
    fn task_highlight_must_match() {
        let mut t = AnnotationTask {
            task_id: "t".into(),
            sample_id: "s".into(),
            note_text: "他很勇敢".into(),
            trait_surface: "勇敢".into(),
            trait_span: (2, 4),
            underlined: None,
            status: TaskStatus::Pending,
            duplicate_group: None,
        };
        assert!(t.validate().is_ok());
        t.trait_span = (1, 3);
        assert!(t.validate().is_err());
    }
}
