//! Annotation service: task queue with duplicate injection, append-only
//! persistence, label export and agreement reporting, plus its HTTP API.

pub mod api;
pub mod store;

pub use api::{router, serve};
pub use store::{AgreementReport, Export, LabelConflict, Store, StoreConfig, StoreError};

/// Version tag carried by every payload and log line.
pub const SCHEMA: &str = "forge-annotate/1";

/// Instructions shown to annotators.
pub const GUIDELINE: &str = "\
Each task shows a reader's note with one personality trait word highlighted.
The passage of the book the note was written on can be opened below the note;
reading it is optional.

1. Decide whether the note uses the highlighted word to describe a character
   of the book.
2. If it does, answer yes and select the character's name inside the note
   text with the mouse. Select only the name, as it is written in the note.
3. If the word describes the reader, the author, a situation, or nobody in
   particular, answer no and leave the name empty.
4. When the note names several characters, select the one the trait word
   is about.

Some notes are shown to more than one annotator. Judge every note on its own.
";
