//! Lecture-grounded feedback for programming exercises.
//!
//! SRT transcripts are cut into overlapping windows ([`chunker`]), embedded
//! ([`embedding`]) and kept in an exact-scan [`store`]. [`chain::FeedbackChain`]
//! asks the model which concepts the student misses, retrieves matching
//! lecture chunks and streams feedback whose `[^n]` footnotes link to video
//! timestamps ([`citation`]). [`exercises`] compiles and tests submissions.

pub mod chain;
pub mod chunker;
pub mod citation;
pub mod embedding;
pub mod exercises;
pub mod llm;
pub mod prompt;
pub mod srt;
pub mod store;
