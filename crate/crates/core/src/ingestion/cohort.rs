use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::extract::{extract_propositions, PropositionExtractor, RuleExtractor, PROPOSITION_CAP};
use super::icd::{normalize_icd, IcdMap, CODE_CAP};
use super::lexicon::KeywordLexicon;
use super::segment::{score_segment, segment_note, select_top_segments};
use crate::error::{Error, Result};

/// One line of the cohort file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAdmission {
    pub patient_id: String,
    pub timestamp: f64,
    pub note: String,
    pub codes: Vec<String>,
}

/// A hospitalization together with its Stage-1 derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissionRecord {
    pub patient_id: String,
    /// Seconds since the epoch.
    pub timestamp: f64,
    pub note_text: String,
    pub raw_codes: Vec<String>,
    pub propositions: Vec<String>,
    pub norm_codes: Vec<String>,
    /// Aligned index-wise with `norm_codes`.
    pub descriptions: Vec<String>,
}

impl AdmissionRecord {
    /// Copy keeping only the first `cap` propositions.
    pub fn with_proposition_cap(&self, cap: usize) -> Self {
        let mut r = self.clone();
        r.propositions.truncate(cap);
        r
    }

    pub fn to_raw(&self) -> RawAdmission {
        RawAdmission {
            patient_id: self.patient_id.clone(),
            timestamp: self.timestamp,
            note: self.note_text.clone(),
            codes: self.raw_codes.clone(),
        }
    }
}

/// A patient's admissions in chronological order.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub patient_id: String,
    pub admissions: Vec<AdmissionRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    /// Sections retained after scoring.
    pub top_k: usize,
    pub proposition_cap: usize,
    pub code_cap: usize,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            top_k: 3,
            proposition_cap: PROPOSITION_CAP,
            code_cap: CODE_CAP,
        }
    }
}

/// Everything needed to turn raw admissions into [`AdmissionRecord`]s.
pub struct Stage1 {
    pub lexicon: KeywordLexicon,
    pub icd: IcdMap,
    pub config: Stage1Config,
    extractor: Box<dyn PropositionExtractor>,
}

impl Stage1 {
    /// Uses the rule-based extractor over `lexicon`.
    pub fn new(lexicon: KeywordLexicon, icd: IcdMap, config: Stage1Config) -> Self {
        let extractor = Box::new(RuleExtractor::new(lexicon.clone()));
        Self {
            lexicon,
            icd,
            config,
            extractor,
        }
    }

    pub fn with_extractor(mut self, extractor: Box<dyn PropositionExtractor>) -> Self {
        self.extractor = extractor;
        self
    }

    pub fn process(&self, raw: &RawAdmission) -> Result<AdmissionRecord> {
        let propositions = if raw.note.trim().is_empty() {
            Vec::new()
        } else {
            let sections = segment_note(&raw.note, &self.lexicon)?
                .into_iter()
                .map(|s| score_segment(s, &self.lexicon))
                .collect();
            let top = select_top_segments(sections, self.config.top_k);
            extract_propositions(&top, self.extractor.as_ref(), self.config.proposition_cap)?
        };
        let codes = normalize_icd(&raw.codes, &self.icd, self.config.code_cap)?;
        Ok(AdmissionRecord {
            patient_id: raw.patient_id.clone(),
            timestamp: raw.timestamp,
            note_text: raw.note.clone(),
            raw_codes: raw.codes.clone(),
            propositions,
            norm_codes: codes.codes,
            descriptions: codes.descriptions,
        })
    }
}

/// Parses a JSON-lines cohort; blank lines are ignored.
pub fn parse_cohort(reader: impl Read) -> Result<Vec<RawAdmission>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawAdmission = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !raw.timestamp.is_finite() {
            return Err(Error::Parse {
                line: i + 1,
                message: "timestamp must be finite".into(),
            });
        }
        out.push(raw);
    }
    Ok(out)
}

/// Groups admissions by patient, sorts each patient's admissions by time,
/// drops patients with fewer than two admissions and runs Stage 1 on the
/// rest. Patients come out ordered by id.
pub fn build_cohort(raws: Vec<RawAdmission>, stage1: &Stage1) -> Result<Vec<Trajectory>> {
    let mut seen = HashSet::new();
    let mut by_patient: BTreeMap<String, Vec<RawAdmission>> = BTreeMap::new();
    for r in raws {
        if !seen.insert((r.patient_id.clone(), r.timestamp.to_bits())) {
            return Err(Error::Validation(format!(
                "duplicate admission for patient {} at timestamp {}",
                r.patient_id, r.timestamp
            )));
        }
        by_patient.entry(r.patient_id.clone()).or_default().push(r);
    }
    let mut out = Vec::new();
    let mut excluded = 0usize;
    for (patient_id, mut adms) in by_patient {
        if adms.len() < 2 {
            excluded += 1;
            continue;
        }
        adms.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let admissions = adms.iter().map(|r| stage1.process(r)).collect::<Result<Vec<_>>>()?;
        out.push(Trajectory { patient_id, admissions });
    }
    if excluded > 0 {
        log::info!("excluded {excluded} patients with fewer than two admissions");
    }
    Ok(out)
}

pub fn load_cohort(path: &Path, stage1: &Stage1) -> Result<Vec<Trajectory>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    build_cohort(parse_cohort(f)?, stage1)
}

/// Convenience loader reading the ICD map and keyword list from files.
pub fn load_cohort_files(
    cohort: &Path,
    icd_map: &Path,
    keywords: &Path,
    headings: Option<&Path>,
) -> Result<Vec<Trajectory>> {
    let stage1 = Stage1::new(
        KeywordLexicon::load(keywords, headings)?,
        IcdMap::load(icd_map)?,
        Stage1Config::default(),
    );
    load_cohort(cohort, &stage1)
}

/// Writes the raw fields of every admission as JSON lines.
pub fn write_cohort(trajectories: &[Trajectory], mut w: impl Write) -> Result<()> {
    for t in trajectories {
        for a in &t.admissions {
            serde_json::to_writer(&mut w, &a.to_raw())?;
            w.write_all(b"\n").map_err(|e| Error::io("<cohort>", e))?;
        }
    }
    Ok(())
}
