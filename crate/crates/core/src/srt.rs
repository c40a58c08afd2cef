//! SubRip (`.srt`) transcript parsing.
//!
//! A transcript is a sequence of blocks separated by blank lines:
//!
//! ```text
//! 1
//! 00:00:01,000 --> 00:00:03,000
//! Hello world
//! ```
//!
//! Both LF and CRLF line endings are accepted, as is a leading UTF-8 BOM.
//! Blocks without any text are skipped and counted in [`ParsedTranscript::skipped_blocks`].
//! Segments are returned sorted by start time; overlapping segments are kept as-is.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const MS_PER_SECOND: u32 = 1_000;
const MS_PER_MINUTE: u32 = 60 * MS_PER_SECOND;
const MS_PER_HOUR: u32 = 60 * MS_PER_MINUTE;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SrtError {
    #[error("malformed timestamp {input:?}: {reason}")]
    MalformedTimestamp { input: String, reason: &'static str },
    #[error("malformed block #{block}: {reason}")]
    MalformedBlock { block: usize, reason: String },
    #[error("transcript contains no valid blocks")]
    EmptyTranscript,
    #[error("transcript is not valid UTF-8 (byte offset {offset})")]
    InvalidUtf8 { offset: usize },
}

/// Milliseconds since the start of a video, capped at `99:59:59,999`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Timestamp(u32);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);
    pub const MAX: Timestamp = Timestamp(99 * MS_PER_HOUR + 59 * MS_PER_MINUTE + 59 * MS_PER_SECOND + 999);

    pub fn from_millis(ms: u32) -> Option<Self> {
        (ms <= Self::MAX.0).then_some(Timestamp(ms))
    }

    pub fn as_millis(self) -> u32 {
        self.0
    }

    /// Whole seconds, truncated.
    pub fn as_secs(self) -> u32 {
        self.0 / MS_PER_SECOND
    }

    fn fields(self) -> (u32, u32, u32, u32) {
        let ms = self.0;
        (
            ms / MS_PER_HOUR,
            ms % MS_PER_HOUR / MS_PER_MINUTE,
            ms % MS_PER_MINUTE / MS_PER_SECOND,
            ms % MS_PER_SECOND,
        )
    }

    /// `HH:MM:SS` with the milliseconds dropped.
    pub fn to_hms(self) -> String {
        let (h, m, s, _) = self.fields();
        format!("{h:02}:{m:02}:{s:02}")
    }
}

impl TryFrom<u32> for Timestamp {
    type Error = String;

    fn try_from(ms: u32) -> Result<Self, Self::Error> {
        Timestamp::from_millis(ms).ok_or_else(|| format!("timestamp {ms} ms exceeds {}", Self::MAX.0))
    }
}

impl From<Timestamp> for u32 {
    fn from(t: Timestamp) -> u32 {
        t.0
    }
}

/// Formats as SRT `HH:MM:SS,mmm`.
impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (h, m, s, ms) = self.fields();
        write!(f, "{h:02}:{m:02}:{s:02},{ms:03}")
    }
}

impl FromStr for Timestamp {
    type Err = SrtError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_timestamp(s)
    }
}

/// Parses an SRT timestamp of the exact shape `HH:MM:SS,mmm`.
pub fn parse_timestamp(s: &str) -> Result<Timestamp, SrtError> {
    let malformed = |reason| SrtError::MalformedTimestamp {
        input: s.to_string(),
        reason,
    };
    let b = s.as_bytes();
    if b.len() != 12 || b[2] != b':' || b[5] != b':' || b[8] != b',' {
        return Err(malformed("expected HH:MM:SS,mmm"));
    }
    let field = |range: std::ops::Range<usize>| -> Result<u32, SrtError> {
        let digits = &b[range];
        if !digits.iter().all(u8::is_ascii_digit) {
            return Err(malformed("non-digit character"));
        }
        Ok(digits.iter().fold(0, |acc, d| acc * 10 + u32::from(d - b'0')))
    };
    let (h, m, sec, ms) = (field(0..2)?, field(3..5)?, field(6..8)?, field(9..12)?);
    if m >= 60 {
        return Err(malformed("minutes out of range"));
    }
    if sec >= 60 {
        return Err(malformed("seconds out of range"));
    }
    Ok(Timestamp(h * MS_PER_HOUR + m * MS_PER_MINUTE + sec * MS_PER_SECOND + ms))
}

pub fn format_timestamp_srt(t: Timestamp) -> String {
    t.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptSegment {
    pub index: u32,
    pub start: Timestamp,
    pub end: Timestamp,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub video_file: String,
    pub segments: Vec<TranscriptSegment>,
}

impl Transcript {
    /// Serializes back to SRT, one block per segment in the current order.
    pub fn to_srt(&self) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            out.push_str(&format!("{}\n{} --> {}\n{}\n\n", seg.index, seg.start, seg.end, seg.text));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTranscript {
    pub transcript: Transcript,
    /// Blocks dropped because they carried no text.
    pub skipped_blocks: usize,
}

/// Parses SRT bytes into a transcript sorted by segment start.
pub fn parse_srt(content: &[u8], video_file: &str) -> Result<ParsedTranscript, SrtError> {
    let text = std::str::from_utf8(content).map_err(|e| SrtError::InvalidUtf8 {
        offset: e.valid_up_to(),
    })?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);

    let mut segments = Vec::new();
    let mut skipped_blocks = 0;
    let mut block: Vec<&str> = Vec::new();
    let mut ordinal = 0;

    // `lines()` strips a trailing `\r` as well as `\n`.
    for line in text.lines().chain(std::iter::once("")) {
        if !line.trim().is_empty() {
            block.push(line);
            continue;
        }
        if block.is_empty() {
            continue;
        }
        ordinal += 1;
        match parse_block(&block, ordinal)? {
            Some(seg) => segments.push(seg),
            None => {
                tracing::warn!(block = ordinal, "skipping SRT block without text");
                skipped_blocks += 1;
            }
        }
        block.clear();
    }

    if segments.is_empty() {
        return Err(SrtError::EmptyTranscript);
    }
    segments.sort_by_key(|s: &TranscriptSegment| s.start);
    Ok(ParsedTranscript {
        transcript: Transcript {
            video_file: video_file.to_string(),
            segments,
        },
        skipped_blocks,
    })
}

fn parse_block(lines: &[&str], ordinal: usize) -> Result<Option<TranscriptSegment>, SrtError> {
    let malformed = |reason: &str| SrtError::MalformedBlock {
        block: ordinal,
        reason: reason.to_string(),
    };
    let index: u32 = lines[0]
        .trim()
        .parse()
        .map_err(|_| malformed("index line is not a number"))?;
    let timing = lines.get(1).ok_or_else(|| malformed("missing timestamp line"))?;
    let (start, end) = timing
        .split_once("-->")
        .ok_or_else(|| malformed("timestamp line lacks `-->`"))?;
    let start = parse_timestamp(start.trim())?;
    // Some emitters append positioning hints after the end timestamp.
    let end = parse_timestamp(end.split_whitespace().next().unwrap_or(""))?;
    if end < start {
        return Err(malformed("end timestamp precedes start"));
    }

    let text = lines[2..].iter().map(|l| l.trim()).collect::<Vec<_>>().join("\n");
    let text = text.trim();
    if text.is_empty() {
        return Ok(None);
    }
    Ok(Some(TranscriptSegment {
        index,
        start,
        end,
        text: text.to_string(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamp_examples() {
        assert_eq!(parse_timestamp("00:00:00,000").unwrap().as_millis(), 0);
        assert_eq!(parse_timestamp("00:14:32,000").unwrap().as_millis(), 872_000);
        // 1 h + 2 min + 3 s + 450 ms
        assert_eq!(parse_timestamp("01:02:03,450").unwrap().as_millis(), 3_600_000 + 120_000 + 3_000 + 450);
        assert_eq!(format_timestamp_srt(Timestamp::ZERO), "00:00:00,000");
        assert_eq!(format_timestamp_srt(Timestamp(872_000)), "00:14:32,000");
        assert_eq!(format_timestamp_srt(Timestamp(3_723_450)), "01:02:03,450");
        assert_eq!(Timestamp::MAX.to_string(), "99:59:59,999");
        assert_eq!(Timestamp::MAX.as_millis(), 359_999_999);
    }

    #[test]
    fn timestamp_rejections() {
        for bad in [
            "00:60:00,000",
            "00:00:60,000",
            "0:00:00,000",
            "00:00:00.000",
            "00:00:00,00",
            "aa:00:00,000",
            "00:0a:00,000",
            "",
            "00:00:00,0000",
        ] {
            assert!(
                matches!(parse_timestamp(bad), Err(SrtError::MalformedTimestamp { .. })),
                "{bad}"
            );
        }
        assert!(Timestamp::from_millis(360_000_000).is_none());
    }

    #[test]
    fn minimal_block() {
        let parsed = parse_srt(b"1\n00:00:01,000 --> 00:00:03,000\nHello world\n\n", "l.mp4").unwrap();
        assert_eq!(
            parsed.transcript.segments,
            vec![TranscriptSegment {
                index: 1,
                start: Timestamp(1000),
                end: Timestamp(3000),
                text: "Hello world".into(),
            }]
        );
        assert_eq!(parsed.transcript.video_file, "l.mp4");
        assert_eq!(parsed.skipped_blocks, 0);
    }

    #[test]
    fn reverse_order_is_sorted() {
        let src = "2\n00:00:05,000 --> 00:00:06,000\nsecond\n\n1\n00:00:01,000 --> 00:00:02,000\nfirst\n";
        let t = parse_srt(src.as_bytes(), "v").unwrap().transcript;
        let texts: Vec<_> = t.segments.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, ["first", "second"]);
    }

    #[test]
    fn bad_separator_is_malformed_block() {
        let err = parse_srt(b"1\n00:00:01,000 -- 00:00:03,000\nHi\n", "v").unwrap_err();
        assert!(matches!(err, SrtError::MalformedBlock { block: 1, .. }), "{err:?}");
    }

    #[test]
    fn non_numeric_index_reports_ordinal() {
        let src = "1\n00:00:01,000 --> 00:00:02,000\nok\n\nx\n00:00:03,000 --> 00:00:04,000\nbad\n";
        let err = parse_srt(src.as_bytes(), "v").unwrap_err();
        assert!(matches!(err, SrtError::MalformedBlock { block: 2, .. }), "{err:?}");
    }

    #[test]
    fn bad_timestamp_propagates() {
        let err = parse_srt(b"1\n00:00:01,000 --> 00:61:00,000\nHi\n", "v").unwrap_err();
        assert!(matches!(err, SrtError::MalformedTimestamp { .. }));
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(parse_srt(b"", "v").unwrap_err(), SrtError::EmptyTranscript);
        assert_eq!(parse_srt(b"\n\n\r\n", "v").unwrap_err(), SrtError::EmptyTranscript);
        // a block with no text lines is skipped, leaving nothing
        assert_eq!(
            parse_srt(b"1\n00:00:01,000 --> 00:00:02,000\n", "v").unwrap_err(),
            SrtError::EmptyTranscript
        );
    }

    #[test]
    fn textless_blocks_are_counted() {
        let src = "1\n00:00:01,000 --> 00:00:02,000\n\n2\n00:00:02,000 --> 00:00:03,000\nkept\n";
        let parsed = parse_srt(src.as_bytes(), "v").unwrap();
        assert_eq!(parsed.skipped_blocks, 1);
        assert_eq!(parsed.transcript.segments.len(), 1);
    }

    #[test]
    fn crlf_bom_and_multiline() {
        let src = "\u{feff}1\r\n00:00:01,000 --> 00:00:02,500\r\n  first line  \r\n<i>second</i>\r\n\r\n\r\n";
        let seg = &parse_srt(src.as_bytes(), "v").unwrap().transcript.segments[0];
        assert_eq!(seg.text, "first line\n<i>second</i>");
        assert_eq!(seg.end.as_millis(), 2_500);
    }

    #[test]
    fn invalid_utf8_reports_offset() {
        let mut bytes = b"1\n00:00:01,000 --> 00:00:02,000\nab".to_vec();
        bytes.push(0xff);
        let offset = bytes.len() - 1;
        assert_eq!(parse_srt(&bytes, "v").unwrap_err(), SrtError::InvalidUtf8 { offset });
    }

    #[test]
    fn end_before_start_is_rejected() {
        let err = parse_srt(b"1\n00:00:05,000 --> 00:00:01,000\nHi\n", "v").unwrap_err();
        assert!(matches!(err, SrtError::MalformedBlock { .. }));
    }

    #[test]
    fn overlapping_segments_are_kept() {
        let src = "1\n00:00:01,000 --> 00:00:05,000\na\n\n2\n00:00:03,000 --> 00:00:07,000\nb\n";
        assert_eq!(parse_srt(src.as_bytes(), "v").unwrap().transcript.segments.len(), 2);
    }
}
