//! Fixed-size sliding-window chunking of transcripts.
//!
//! Segment texts are joined with a single space into one character stream in
//! which every character remembers the start time of the segment it came
//! from. Windows of `size` characters are then cut every `size - overlap`
//! characters, and each chunk is stamped with the time of its first character.
//! Lengths are counted in Unicode scalar values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::srt::{Timestamp, Transcript};

pub const DEFAULT_CHUNK_SIZE: usize = 512;
pub const DEFAULT_CHUNK_OVERLAP: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChunkError {
    #[error("invalid chunk parameters: size {size} must exceed overlap {overlap}")]
    InvalidChunkParams { size: usize, overlap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkParams {
    pub size: usize,
    pub overlap: usize,
}

impl ChunkParams {
    pub fn new(size: usize, overlap: usize) -> Result<Self, ChunkError> {
        if size <= overlap {
            return Err(ChunkError::InvalidChunkParams { size, overlap });
        }
        Ok(Self { size, overlap })
    }

    pub fn stride(&self) -> usize {
        self.size - self.overlap
    }
}

impl Default for ChunkParams {
    fn default() -> Self {
        Self {
            size: DEFAULT_CHUNK_SIZE,
            overlap: DEFAULT_CHUNK_OVERLAP,
        }
    }
}

/// A transcript flattened into characters, each tagged with its segment's start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharTimeline {
    pub video_file: String,
    chars: Vec<char>,
    char_start: Vec<Timestamp>,
}

impl CharTimeline {
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn text(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn char_starts(&self) -> &[Timestamp] {
        &self.char_start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LectureChunk {
    pub chunk_id: String,
    pub video_file: String,
    pub start: Timestamp,
    pub text: String,
}

/// `<video_file>#<ordinal>` with the ordinal zero-padded to five digits, so
/// lexicographic order matches emission order within a video.
pub fn chunk_id(video_file: &str, ordinal: usize) -> String {
    format!("{video_file}#{ordinal:05}")
}

pub fn build_timeline(transcript: &Transcript) -> CharTimeline {
    let mut chars = Vec::new();
    let mut char_start = Vec::new();
    for (i, seg) in transcript.segments.iter().enumerate() {
        if i > 0 {
            // the joiner belongs to the preceding segment
            let prev = *char_start.last().unwrap_or(&seg.start);
            chars.push(' ');
            char_start.push(prev);
        }
        for c in seg.text.chars() {
            chars.push(c);
            char_start.push(seg.start);
        }
    }
    CharTimeline {
        video_file: transcript.video_file.clone(),
        chars,
        char_start,
    }
}

/// Window offsets `[start, end)` for a stream of `len` characters.
pub fn window_ranges(len: usize, params: ChunkParams) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let mut offset = 0;
    while offset < len {
        let end = (offset + params.size).min(len);
        ranges.push((offset, end));
        if end == len {
            break;
        }
        offset += params.stride();
    }
    ranges
}

pub fn chunk_timeline(timeline: &CharTimeline, params: ChunkParams) -> Vec<LectureChunk> {
    window_ranges(timeline.len(), params)
        .into_iter()
        .enumerate()
        .map(|(ordinal, (start, end))| LectureChunk {
            chunk_id: chunk_id(&timeline.video_file, ordinal),
            video_file: timeline.video_file.clone(),
            start: timeline.char_start[start],
            text: timeline.chars[start..end].iter().collect(),
        })
        .collect()
}

pub fn chunk_transcript(transcript: &Transcript, params: ChunkParams) -> Vec<LectureChunk> {
    chunk_timeline(&build_timeline(transcript), params)
}
