//! Stage 1: note segmentation and scoring, proposition extraction, ICD-9
//! normalization and cohort loading.

mod cohort;
mod extract;
mod icd;
mod lexicon;
mod segment;

pub use cohort::{
    build_cohort, load_cohort, load_cohort_files, parse_cohort, write_cohort, AdmissionRecord, RawAdmission, Stage1,
    Stage1Config, Trajectory,
};
#[cfg(feature = "remote-extractor")]
pub use extract::RemoteExtractor;
pub use extract::{extract_propositions, FallbackExtractor, PropositionExtractor, RuleExtractor, PROPOSITION_CAP};
pub use icd::{canonicalize_icd9, normalize_icd, IcdMap, NormalizedCodes, CODE_CAP};
pub use lexicon::{parse_term_list, KeywordLexicon};
pub use segment::{
    score_segment, segment_features, segment_note, select_top_segments, split_sentences, Section, FALLBACK_CHARS,
    MG_CAP, SCORE_WEIGHTS,
};
