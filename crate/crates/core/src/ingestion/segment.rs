use super::lexicon::KeywordLexicon;
use crate::error::{Error, Result};

/// Characters kept from a note that has no recognized heading.
pub const FALLBACK_CHARS: usize = 4000;

/// Weights of the four segment features (keywords, "Diagnosis:", "mg", long).
pub const SCORE_WEIGHTS: [u32; 4] = [2, 5, 1, 3];

/// Cap on the "mg" occurrence feature.
pub const MG_CAP: u32 = 9;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Section {
    pub heading: String,
    pub body: String,
    pub features: [u32; 4],
    pub score: u32,
    /// Position of the section in its note.
    pub position: usize,
}

impl Section {
    pub fn unscored(heading: impl Into<String>, body: impl Into<String>, position: usize) -> Self {
        Self {
            heading: heading.into(),
            body: body.into(),
            features: [0; 4],
            score: 0,
            position,
        }
    }
}

/// Heading recognized at the start of a line, returning the byte offset where
/// the body begins (after an optional colon).
fn match_heading<'h>(line: &str, headings: &'h [String]) -> Option<(&'h str, usize)> {
    let trimmed = line.trim_start();
    let indent = line.len() - trimmed.len();
    let lower = trimmed.to_lowercase();
    headings
        .iter()
        .filter(|h| {
            let hl = h.to_lowercase();
            // Lowercasing can change byte lengths for some scripts; require a
            // clean prefix match on the original text as well.
            lower.starts_with(&hl) && trimmed.is_char_boundary(h.len()) && {
                let rest = &trimmed[h.len()..];
                rest.trim().is_empty() || rest.starts_with(':')
            }
        })
        .max_by_key(|h| h.len())
        .map(|h| {
            let rest = &trimmed[h.len()..];
            let skip = if rest.starts_with(':') { 1 } else { 0 };
            (h.as_str(), indent + h.len() + skip)
        })
}

/// Splits a note into sections at recognized headings.
///
/// A heading must begin a line (leading whitespace allowed) and be followed
/// by a colon or the end of the line. Each section runs to the next heading
/// or the end of the note; text before the first heading is discarded. With
/// no heading at all, a single section holds the first 4000 characters.
pub fn segment_note(note: &str, lexicon: &KeywordLexicon) -> Result<Vec<Section>> {
    if note.trim().is_empty() {
        return Err(Error::EmptyInput("note"));
    }
    let mut marks: Vec<(&str, usize, usize)> = Vec::new(); // heading, line start, body start
    let mut offset = 0;
    for line in note.split_inclusive('\n') {
        if let Some((h, body_off)) = match_heading(line, lexicon.headings()) {
            marks.push((h, offset, offset + body_off));
        }
        offset += line.len();
    }

    if marks.is_empty() {
        let body: String = note.chars().take(FALLBACK_CHARS).collect();
        return Ok(vec![Section::unscored("", body, 0)]);
    }

    let mut sections = Vec::with_capacity(marks.len());
    for (i, &(heading, _, body_start)) in marks.iter().enumerate() {
        let end = marks.get(i + 1).map_or(note.len(), |m| m.1);
        if lexicon.is_blocked(heading) {
            continue;
        }
        let body = note[body_start..end].trim();
        sections.push(Section::unscored(heading, body, i));
    }
    Ok(sections)
}

/// Splits text into sentences at '.', '!' or '?' followed by whitespace or
/// the end of the text. Terminators are dropped and pieces trimmed; empty
/// pieces are skipped.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let boundary = chars.peek().is_none_or(|(_, n)| n.is_whitespace());
            if boundary {
                let piece = text[start..i].trim();
                if !piece.is_empty() {
                    out.push(piece);
                }
                start = i + c.len_utf8();
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// `[f1, f2, f3, f4]`: distinct keywords, literal "Diagnosis:", capped count
/// of the substring "mg", and whether there are more than two sentences.
pub fn segment_features(body: &str, lexicon: &KeywordLexicon) -> [u32; 4] {
    let f1 = lexicon.count_distinct(body) as u32;
    let f2 = u32::from(body.contains("Diagnosis:"));
    let f3 = (body.matches("mg").count() as u32).min(MG_CAP);
    let f4 = u32::from(split_sentences(body).len() > 2);
    [f1, f2, f3, f4]
}

pub fn score_segment(mut section: Section, lexicon: &KeywordLexicon) -> Section {
    section.features = segment_features(&section.body, lexicon);
    section.score = section.features.iter().zip(SCORE_WEIGHTS).map(|(f, w)| f * w).sum();
    section
}

/// The `k` highest-scoring sections, best first; ties go to the section that
/// appears earlier in the note.
pub fn select_top_segments(mut sections: Vec<Section>, k: usize) -> Vec<Section> {
    sections.sort_by(|a, b| b.score.cmp(&a.score).then(a.position.cmp(&b.position)));
    sections.truncate(k);
    sections
}
