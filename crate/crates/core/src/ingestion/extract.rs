use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::lexicon::KeywordLexicon;
use super::segment::{split_sentences, Section};
use crate::error::Result;

/// Maximum number of propositions kept per admission.
pub const PROPOSITION_CAP: usize = 50;

/// Maps one text segment to atomic propositions.
pub trait PropositionExtractor: Send + Sync {
    fn extract(&self, segment: &str) -> Result<Vec<String>>;
}

/// Keeps every sentence mentioning at least one lexicon keyword.
#[derive(Clone, Debug)]
pub struct RuleExtractor {
    lexicon: KeywordLexicon,
}

impl RuleExtractor {
    pub fn new(lexicon: KeywordLexicon) -> Self {
        Self { lexicon }
    }
}

impl PropositionExtractor for RuleExtractor {
    fn extract(&self, segment: &str) -> Result<Vec<String>> {
        Ok(split_sentences(segment)
            .into_iter()
            .filter(|s| self.lexicon.contains_any(s))
            .map(str::to_string)
            .collect())
    }
}

/// Wraps a primary extractor and answers with the rule-based one whenever the
/// primary fails.
pub struct FallbackExtractor<P> {
    primary: P,
    fallback: RuleExtractor,
    fallbacks: AtomicUsize,
}

impl<P: PropositionExtractor> FallbackExtractor<P> {
    pub fn new(primary: P, fallback: RuleExtractor) -> Self {
        Self {
            primary,
            fallback,
            fallbacks: AtomicUsize::new(0),
        }
    }

    /// Number of segments answered by the fallback so far.
    pub fn fallback_count(&self) -> usize {
        self.fallbacks.load(Ordering::Relaxed)
    }
}

impl<P: PropositionExtractor> PropositionExtractor for FallbackExtractor<P> {
    fn extract(&self, segment: &str) -> Result<Vec<String>> {
        match self.primary.extract(segment) {
            Ok(p) => Ok(p),
            Err(e) => {
                log::warn!("proposition extractor failed ({e}); using rule-based fallback");
                self.fallbacks.fetch_add(1, Ordering::Relaxed);
                self.fallback.extract(segment)
            }
        }
    }
}

/// Union of per-section extractions, deduplicated case-sensitively in
/// first-occurrence order and truncated to `cap`.
pub fn extract_propositions(
    sections: &[Section],
    extractor: &dyn PropositionExtractor,
    cap: usize,
) -> Result<Vec<String>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for s in sections {
        for p in extractor.extract(&s.body)? {
            let p = p.trim().to_string();
            if p.is_empty() || !seen.insert(p.clone()) {
                continue;
            }
            out.push(p);
            if out.len() == cap {
                return Ok(out);
            }
        }
    }
    Ok(out)
}

#[cfg(feature = "remote-extractor")]
pub use remote::RemoteExtractor;

#[cfg(feature = "remote-extractor")]
mod remote {
    use std::time::Duration;

    use serde::{Deserialize, Serialize};

    use super::PropositionExtractor;
    use crate::error::{Error, Result};

    /// Environment variable holding the bearer token for the remote extractor.
    pub const TOKEN_ENV: &str = "THCM_EXTRACTOR_TOKEN";

    #[derive(Serialize)]
    struct Request<'a> {
        segment: &'a str,
    }

    #[derive(Deserialize)]
    struct Response {
        propositions: Vec<String>,
    }

    /// HTTP client for an extraction service: POST `{"segment": ...}`,
    /// expect `{"propositions": [...]}`. Requests are sequential with up to
    /// three attempts and exponential backoff.
    pub struct RemoteExtractor {
        endpoint: String,
        token: Option<String>,
        client: reqwest::blocking::Client,
        attempts: u32,
        backoff: Duration,
    }

    impl RemoteExtractor {
        pub fn new(endpoint: impl Into<String>) -> Result<Self> {
            let client = reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .map_err(|e| Error::Extractor(e.to_string()))?;
            Ok(Self {
                endpoint: endpoint.into(),
                token: std::env::var(TOKEN_ENV).ok(),
                client,
                attempts: 3,
                backoff: Duration::from_millis(250),
            })
        }

        fn attempt(&self, segment: &str) -> Result<Vec<String>> {
            let mut req = self.client.post(&self.endpoint).json(&Request { segment });
            if let Some(t) = &self.token {
                req = req.bearer_auth(t);
            }
            let resp = req
                .send()
                .and_then(|r| r.error_for_status())
                .map_err(|e| Error::Extractor(e.to_string()))?;
            let body: Response = resp.json().map_err(|e| Error::Extractor(e.to_string()))?;
            Ok(body.propositions)
        }
    }

    impl PropositionExtractor for RemoteExtractor {
        fn extract(&self, segment: &str) -> Result<Vec<String>> {
            let mut last = None;
            for i in 0..self.attempts {
                match self.attempt(segment) {
                    Ok(p) => return Ok(p),
                    Err(e) => {
                        last = Some(e);
                        if i + 1 < self.attempts {
                            std::thread::sleep(self.backoff * 2u32.pow(i));
                        }
                    }
                }
            }
            Err(last.unwrap_or_else(|| Error::Extractor("no attempts made".into())))
        }
    }
}
