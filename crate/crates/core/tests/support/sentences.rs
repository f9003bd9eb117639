//! Shared by the sentence-buffer tests and the acceptance harness: a
//! 50-sentence corpus and a whole-text reference for the boundary rules.
#![allow(dead_code)]

use voxline_core::{SentenceBuffer, SentenceBufferConfig, SentenceChunk};

pub const CORPUS: [&str; 50] = [
    "Good morning, thank you for calling the clinic.",
    "How can I help you today?",
    "Dr. Smith is available on Tuesday at 9:30 AM.",
    "Hi.",
    "OK.",
    "Your copay is $12.50 for this visit.",
    "Please arrive 15 minutes early!",
    "Mrs. Patel asked about her results.",
    "The lab is on Elm St. next to the pharmacy.",
    "Yes.",
    "Could you spell your last name for me?",
    "That's G-A-R-C-I-A, correct?",
    "We close at 5 PM. on Fridays.",
    "Ms. Chen, your appointment is confirmed.",
    "The dosage is 2.5 mg twice daily.",
    "Is there anything else?",
    "Sure.",
    "I'll transfer you to Mr. Okafor in billing.",
    "Our address is 1200 Market St. in the north wing.",
    "Wait!",
    "Dr. Lee and Dr. Garcia share the Tuesday clinic.",
    "The fee went from 3.75 to 4.25 this year.",
    "Great, see you then!",
    "Are you a new patient?",
    "We'll need your insurance card, e.g. the front and back.",
    "Visiting hours end at 8 PM. sharp.",
    "The café downstairs opens at seven.",
    "Naïve questions are welcome here.",
    "Thanks!",
    "Version 1.2.3 of the portal is live.",
    "Please hold while I check.",
    "Mr. and Mrs. Jones are both booked.",
    "Jr. residents rotate weekly.",
    "Your temperature was 98.6 degrees.",
    "Perfect.",
    "No.",
    "Which doctor did you see last time?",
    "That slot is taken, sorry.",
    "The next opening is March 11 at 10:00.",
    "Would 1:00 or 3:00 work better?",
    "Let me read that back to you.",
    "P002, Brian Chen, born 1984.",
    "Is this the best number to reach you?",
    "We text reminders 24 hours ahead.",
    "Sr. staff handle urgent calls.",
    "You can cancel up to a day before.",
    "Really?",
    "Absolutely, that's no problem at all.",
    "Bring a list of current medications, i.e. everything you take.",
    "Have a wonderful day, goodbye!",
];

pub fn corpus_text() -> String {
    // mixed separators so boundaries see both spaces and newlines
    let mut out = String::new();
    for (i, s) in CORPUS.iter().enumerate() {
        if i > 0 {
            out.push_str(if i % 7 == 0 { "\n" } else { " " });
        }
        out.push_str(s);
    }
    out
}

/// Whole-text reimplementation of the boundary rules, used as the reference.
/// Returns chunk texts with the flushed remainder last.
pub fn oracle(text: &str, config: &SentenceBufferConfig) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0;
    for (k, &(i, c)) in chars.iter().enumerate() {
        if !config.terminators.contains(&c) {
            continue;
        }
        let Some(&(_, next)) = chars.get(k + 1) else { continue };
        if !next.is_whitespace() {
            continue;
        }
        let end = i + c.len_utf8();
        let prev = k.checked_sub(1).map(|p| chars[p].1);
        if c == '.' && prev.is_some_and(|p| p.is_ascii_digit()) && next.is_ascii_digit() {
            continue;
        }
        let word = text[start..end].split_whitespace().last().unwrap_or("");
        if config.abbreviations.iter().any(|a| word.ends_with(a.as_str())) {
            continue;
        }
        if text[start..end].trim().chars().count() < config.min_sentence_chars {
            continue;
        }
        out.push(text[start..end].to_string());
        start = end;
    }
    if start < text.len() {
        out.push(text[start..].to_string());
    }
    out
}

pub fn run(tokens: &[&str], config: &SentenceBufferConfig) -> Vec<SentenceChunk> {
    let mut b = SentenceBuffer::new(config.clone());
    let mut out: Vec<SentenceChunk> = tokens.iter().flat_map(|t| b.push(t)).collect();
    out.extend(b.flush());
    out
}

pub fn split_at_chars<'a>(text: &'a str, cuts: &[usize]) -> Vec<&'a str> {
    let offsets: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
    if offsets.is_empty() {
        return Vec::new();
    }
    let mut bytes: Vec<usize> = cuts.iter().map(|&c| offsets[c % offsets.len()]).collect();
    bytes.push(0);
    bytes.push(text.len());
    bytes.sort_unstable();
    bytes.dedup();
    bytes.windows(2).map(|w| &text[w[0]..w[1]]).collect()
}
