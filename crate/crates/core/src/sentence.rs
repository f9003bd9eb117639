//! Streaming sentence aggregation between the LLM token stream and TTS.
//!
//! Tokens are appended to a buffer and complete sentences are cut off the
//! front as soon as they are known to be complete:
//!
//! 1. a terminator (`.`, `!`, `?`) followed by an observed whitespace char;
//! 2. not the last character of a configured abbreviation, and for `.` not
//!    sitting between two digits;
//! 3. the candidate is at least `min_sentence_chars` long (trimmed), otherwise
//!    it stays in the buffer and merges with what follows;
//! 4. [`SentenceBuffer::flush`] releases whatever is left when the stream ends.
//!
//! A terminator at the very end of the buffer is undecided until the next
//! character arrives, which makes the output independent of how the text is
//! split into tokens. Chunks keep their leading whitespace so concatenating
//! all output reproduces the input exactly.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceBufferConfig {
    pub min_sentence_chars: usize,
    pub abbreviations: BTreeSet<String>,
    pub terminators: BTreeSet<char>,
}

impl Default for SentenceBufferConfig {
    fn default() -> Self {
        Self {
            min_sentence_chars: 10,
            abbreviations: [
                "Dr.", "Mr.", "Mrs.", "Ms.", "PM.", "AM.", "St.", "Jr.", "Sr.", "vs.", "e.g.", "i.e.",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
            terminators: ['.', '!', '?'].into_iter().collect(),
        }
    }
}

impl SentenceBufferConfig {
    /// Checks `min_sentence_chars >= 1` and that every abbreviation ends in a
    /// terminator.
    pub fn validate(&self) -> Result<(), String> {
        if self.min_sentence_chars == 0 {
            return Err("min_sentence_chars must be at least 1".into());
        }
        for abbr in &self.abbreviations {
            match abbr.chars().last() {
                Some(c) if self.terminators.contains(&c) => {}
                _ => return Err(format!("abbreviation {abbr:?} does not end with a terminator")),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceChunk {
    pub text: String,
    pub emitted_at_ms: f64,
    /// Produced by [`SentenceBuffer::flush`] rather than a detected boundary.
    pub is_flush: bool,
}

#[derive(Debug)]
pub struct SentenceBuffer {
    config: SentenceBufferConfig,
    buf: String,
    /// Byte offset of the first character not yet ruled out as a boundary.
    cursor: usize,
    epoch: Instant,
}

impl SentenceBuffer {
    pub fn new(config: SentenceBufferConfig) -> Self {
        Self::with_epoch(config, Instant::now())
    }

    /// Chunk timestamps are measured in milliseconds from `epoch`.
    pub fn with_epoch(config: SentenceBufferConfig, epoch: Instant) -> Self {
        Self {
            config,
            buf: String::new(),
            cursor: 0,
            epoch,
        }
    }

    pub fn config(&self) -> &SentenceBufferConfig {
        &self.config
    }

    /// Text currently held back.
    pub fn pending(&self) -> &str {
        &self.buf
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn push(&mut self, token: &str) -> Vec<SentenceChunk> {
        self.buf.push_str(token);
        let mut out = Vec::new();
        while let Some(end) = self.next_boundary() {
            let text: String = self.buf.drain(..end).collect();
            self.cursor = 0;
            out.push(SentenceChunk {
                text,
                emitted_at_ms: self.now_ms(),
                is_flush: false,
            });
        }
        out
    }

    /// Release everything still buffered, ignoring the minimum length.
    pub fn flush(&mut self) -> Option<SentenceChunk> {
        self.cursor = 0;
        if self.buf.is_empty() {
            return None;
        }
        Some(SentenceChunk {
            text: std::mem::take(&mut self.buf),
            emitted_at_ms: self.now_ms(),
            is_flush: true,
        })
    }

    fn now_ms(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64() * 1000.0
    }

    /// Scans forward from the cursor. Returns the byte end (exclusive) of the
    /// first accepted sentence, advancing the cursor past every terminator that
    /// was permanently rejected.
    fn next_boundary(&mut self) -> Option<usize> {
        let mut chars = self.buf[self.cursor..]
            .char_indices()
            .map(|(i, c)| (i + self.cursor, c))
            .peekable();
        let mut prev: Option<char> = self.buf[..self.cursor].chars().next_back();
        while let Some((i, c)) = chars.next() {
            if self.config.terminators.contains(&c) {
                let Some(&(_, next)) = chars.peek() else {
                    // undecided until the next char shows up
                    self.cursor = i;
                    return None;
                };
                let end = i + c.len_utf8();
                if next.is_whitespace() && self.accepts(end, prev, next) {
                    return Some(end);
                }
            }
            prev = Some(c);
        }
        self.cursor = self.buf.len();
        None
    }

    fn accepts(&self, end: usize, prev: Option<char>, next: char) -> bool {
        let candidate = &self.buf[..end];
        if candidate.ends_with('.') && prev.is_some_and(|p| p.is_ascii_digit()) && next.is_ascii_digit() {
            return false;
        }
        // the whitespace-delimited word ending at the terminator
        let word_start = candidate
            .char_indices()
            .rev()
            .find(|(_, c)| c.is_whitespace())
            .map(|(i, c)| i + c.len_utf8())
            .unwrap_or(0);
        let word = &candidate[word_start..];
        if self.config.abbreviations.iter().any(|a| word.ends_with(a.as_str())) {
            return false;
        }
        candidate.trim().chars().count() >= self.config.min_sentence_chars
    }
}
