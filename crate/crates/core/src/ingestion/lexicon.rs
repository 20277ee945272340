use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};

const DEFAULT_KEYWORDS: &str = include_str!("../../data/keywords.txt");
const DEFAULT_HEADINGS: &str = include_str!("../../data/headings.txt");

/// Medical keyword set and recognized section headings.
///
/// Terms are stored lowercased; every lookup is case-insensitive.
#[derive(Clone, Debug, PartialEq)]
pub struct KeywordLexicon {
    keywords: BTreeSet<String>,
    headings: Vec<String>,
    blocked_headings: BTreeSet<String>,
}

/// Parses a term list: one term per line, blank lines and `#` comments skipped.
pub fn parse_term_list(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

fn read_terms(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_term_list(&text))
}

impl Default for KeywordLexicon {
    fn default() -> Self {
        Self::new(parse_term_list(DEFAULT_KEYWORDS), parse_term_list(DEFAULT_HEADINGS))
            .expect("bundled lexicon is nonempty")
    }
}

impl KeywordLexicon {
    pub fn new(keywords: Vec<String>, headings: Vec<String>) -> Result<Self> {
        let keywords: BTreeSet<String> = keywords
            .into_iter()
            .map(|k| k.trim().to_lowercase())
            .filter(|k| !k.is_empty())
            .collect();
        let mut seen = BTreeSet::new();
        let headings: Vec<String> = headings
            .into_iter()
            .map(|h| h.trim().to_string())
            .filter(|h| !h.is_empty() && seen.insert(h.to_lowercase()))
            .collect();
        if keywords.is_empty() {
            return Err(Error::Config("keyword lexicon is empty".into()));
        }
        if headings.is_empty() {
            return Err(Error::Config("heading list is empty".into()));
        }
        Ok(Self {
            keywords,
            headings,
            blocked_headings: BTreeSet::new(),
        })
    }

    /// Loads keywords from `keywords_path` and headings from `headings_path`,
    /// falling back to the bundled heading list when no path is given.
    pub fn load(keywords_path: &Path, headings_path: Option<&Path>) -> Result<Self> {
        let keywords = read_terms(keywords_path)?;
        let headings = match headings_path {
            Some(p) => read_terms(p)?,
            None => parse_term_list(DEFAULT_HEADINGS),
        };
        Self::new(keywords, headings)
    }

    /// Sections under these headings are discarded during segmentation.
    pub fn with_blocked_headings(mut self, blocked: impl IntoIterator<Item = String>) -> Self {
        self.blocked_headings = blocked.into_iter().map(|h| h.trim().to_lowercase()).collect();
        self
    }

    pub fn keywords(&self) -> impl Iterator<Item = &str> {
        self.keywords.iter().map(String::as_str)
    }

    pub fn headings(&self) -> &[String] {
        &self.headings
    }

    pub fn is_blocked(&self, heading: &str) -> bool {
        self.blocked_headings.contains(&heading.to_lowercase())
    }

    pub fn is_keyword(&self, term: &str) -> bool {
        self.keywords.contains(&term.trim().to_lowercase())
    }

    /// Number of distinct keywords occurring in `text` as whole words.
    pub fn count_distinct(&self, text: &str) -> usize {
        let lower = text.to_lowercase();
        self.keywords.iter().filter(|k| contains_term(&lower, k)).count()
    }

    pub fn contains_any(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        self.keywords.iter().any(|k| contains_term(&lower, k))
    }
}

/// Whole-word containment of an already-lowercased `term` in `haystack`.
pub(crate) fn contains_term(haystack: &str, term: &str) -> bool {
    haystack.match_indices(term).any(|(start, _)| {
        let before = haystack[..start].chars().next_back();
        let after = haystack[start + term.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}
