//! Synthetic longitudinal cohorts with planted causal structure.
//!
//! Each patient carries a few latent conditions. A condition has a trigger
//! proposition that, when the condition is active at a visit, fires the
//! condition's primary code with the trigger probability (a PC edge).
//! Codes then fire comorbid codes along a DAG (CC edges), and codes of one
//! visit can propagate to the next (inter edges). Symptom propositions of a
//! condition appear at any visit, active or not. Base rates add codes with
//! a power-law frequency profile over the code ranks.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeType, ExportedEdge};
use crate::ingestion::{KeywordLexicon, RawAdmission};

const CLINICAL_HEADINGS: [&str; 4] = [
    "Chief Complaint",
    "History of Present Illness",
    "Hospital Course",
    "Assessment",
];
const DISTRACTOR_HEADING: &str = "Past Medical History";

/// Sentences free of lexicon keywords and of the substring "mg".
const DISTRACTORS: [&str; 16] = [
    "Patient seen on morning rounds",
    "Family present at the bedside",
    "Vitals reviewed with nursing staff",
    "Patient ambulating in the hallway",
    "Diet advanced as tolerated",
    "Social work consulted for discharge planning",
    "Lives at home with spouse",
    "Former smoker who quit years ago",
    "Physical therapy evaluation completed",
    "Patient resting comfortably overnight",
    "Discussed plan of care with the patient",
    "Outpatient records requested",
    "Follow up arranged with primary care",
    "Patient alert and oriented",
    "No recent travel reported",
    "Code status confirmed as full",
];

const CONNECTORS: [&str; 6] = ["with", "after", "during", "despite", "following", "near"];
const SUFFIXES: [&str; 6] = ["itis", "osis", "opathy", "emia", "algia", "oma"];
const CONSONANTS: [&str; 12] = ["b", "d", "f", "k", "l", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Required.
    pub seed: Option<u64>,
    pub n_patients: usize,
    pub min_admissions: usize,
    pub max_admissions: usize,
    /// Size of the code vocabulary, 50 to 300.
    pub n_codes: usize,
    /// Total proposition templates, at least 100.
    pub n_templates: usize,
    /// Conditions, each with one planted PC trigger.
    pub n_conditions: usize,
    pub symptoms_per_condition: usize,
    pub trigger_prob: f64,
    pub symptom_prob: f64,
    /// Probability that a patient's condition is active at a visit.
    pub active_prob: f64,
    pub conditions_per_patient: (usize, usize),
    pub n_comorbidities: usize,
    pub comorbidity_prob: f64,
    pub n_propagations: usize,
    pub propagation_prob: f64,
    /// Base rate of the most frequent code; rank `r` (from 1) gets
    /// `base_rate_max · r^(−power_law_exponent)`.
    pub base_rate_max: f64,
    pub power_law_exponent: f64,
    /// Background propositions per visit.
    pub background_per_visit: (usize, usize),
    /// Chance of a distractor sentence after each proposition sentence.
    pub distractor_rate: f64,
    /// Chance that a visit lists one raw code missing from the ICD map.
    pub unknown_code_rate: f64,
    /// Attempts at drawing a non-empty code set for one visit.
    pub max_resamples: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: None,
            n_patients: 500,
            min_admissions: 3,
            max_admissions: 5,
            n_codes: 80,
            n_templates: 120,
            n_conditions: 20,
            symptoms_per_condition: 2,
            trigger_prob: 0.9,
            symptom_prob: 0.15,
            active_prob: 0.5,
            conditions_per_patient: (1, 3),
            n_comorbidities: 15,
            comorbidity_prob: 0.5,
            n_propagations: 15,
            propagation_prob: 0.4,
            base_rate_max: 0.4,
            power_law_exponent: 1.0,
            background_per_visit: (1, 3),
            distractor_rate: 0.3,
            unknown_code_rate: 0.05,
            max_resamples: 100,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<u64> {
        let seed = self.seed.ok_or_else(|| Error::Config("seed required".into()))?;
        let fail = |m: String| Err(Error::Config(m));
        if !(50..=300).contains(&self.n_codes) {
            return fail(format!("n_codes must lie in 50..=300, got {}", self.n_codes));
        }
        if self.n_templates < 100 {
            return fail(format!("n_templates must be at least 100, got {}", self.n_templates));
        }
        let planted = self.n_conditions * (1 + self.symptoms_per_condition);
        if planted + self.background_per_visit.1 > self.n_templates {
            return fail("n_templates too small for the planted and background propositions".into());
        }
        if self.n_conditions > self.n_codes {
            return fail("more conditions than codes".into());
        }
        if self.n_patients == 0 {
            return fail("n_patients must be positive".into());
        }
        if self.min_admissions < 2 || self.min_admissions > self.max_admissions {
            return fail(format!(
                "admission range {}..={} must start at 2 or more",
                self.min_admissions, self.max_admissions
            ));
        }
        let (lo, hi) = self.conditions_per_patient;
        if lo > hi || (self.n_conditions > 0 && hi > self.n_conditions) {
            return fail("conditions_per_patient is inconsistent with n_conditions".into());
        }
        if self.background_per_visit.0 > self.background_per_visit.1 {
            return fail("background_per_visit range is inverted".into());
        }
        let probs = [
            ("trigger_prob", self.trigger_prob),
            ("symptom_prob", self.symptom_prob),
            ("active_prob", self.active_prob),
            ("comorbidity_prob", self.comorbidity_prob),
            ("propagation_prob", self.propagation_prob),
            ("base_rate_max", self.base_rate_max),
            ("distractor_rate", self.distractor_rate),
            ("unknown_code_rate", self.unknown_code_rate),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(self.power_law_exponent >= 0.0 && self.power_law_exponent.is_finite()) {
            return fail("power_law_exponent must be non-negative".into());
        }
        let max_edges = self.n_codes * (self.n_codes - 1) / 2;
        if self.n_comorbidities > max_edges || self.n_propagations > self.n_codes * self.n_codes {
            return fail("too many planted code edges for the vocabulary".into());
        }
        Ok(seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeInfo {
    pub code: String,
    pub description: String,
    pub base_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Trigger,
    Symptom,
    Background,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub text: String,
    pub kind: TemplateKind,
    pub condition: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedTrigger {
    pub proposition: String,
    pub code: String,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedEdge {
    pub src: String,
    pub dst: String,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizedEdge {
    pub edge_type: EdgeType,
    pub src: String,
    pub dst: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissionTruth {
    pub patient_id: String,
    pub visit: usize,
    pub codes: Vec<String>,
    pub propositions: Vec<String>,
    pub edges: Vec<RealizedEdge>,
}

/// Sidecar written next to a generated cohort; never read by the pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub codes: Vec<CodeInfo>,
    pub templates: Vec<Template>,
    pub triggers: Vec<PlantedTrigger>,
    pub comorbidities: Vec<PlantedEdge>,
    pub propagations: Vec<PlantedEdge>,
    pub admissions: Vec<AdmissionTruth>,
}

impl GroundTruth {
    pub fn admission(&self, patient_id: &str, visit: usize) -> Option<&AdmissionTruth> {
        self.admissions
            .iter()
            .find(|a| a.patient_id == patient_id && a.visit == visit)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedCohort {
    pub admissions: Vec<RawAdmission>,
    /// `(canonical code, description)` rows for the ICD map.
    pub icd_map: Vec<(String, String)>,
    pub truth: GroundTruth,
}

impl GeneratedCohort {
    pub fn write_cohort(&self, mut w: impl Write) -> Result<()> {
        for a in &self.admissions {
            serde_json::to_writer(&mut w, a)?;
            w.write_all(b"\n").map_err(|e| Error::io("<cohort>", e))?;
        }
        Ok(())
    }

    pub fn write_icd_map(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["code", "description"])?;
        for (c, d) in &self.icd_map {
            out.write_record([c, d])?;
        }
        out.flush().map_err(|e| Error::io("<icd map>", e))
    }

    pub fn write_truth(&self, w: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.truth)?;
        Ok(())
    }
}

/// Canonical code string for vocabulary index `j`.
fn code_string(j: usize) -> String {
    format!("{:03}.{}", 100 + j / 10, j % 10)
}

struct WordSource {
    used: HashSet<String>,
    lexicon: KeywordLexicon,
}

impl WordSource {
    fn fresh(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let n = rng.random_range(2..=3);
            let w: String = (0..n)
                .map(|_| format!("{}{}", CONSONANTS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
                .collect();
            if !self.lexicon.is_keyword(&w) && self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

struct Vocabulary {
    codes: Vec<CodeInfo>,
    templates: Vec<Template>,
    /// Primary code of each condition.
    condition_code: Vec<usize>,
    trigger_template: Vec<usize>,
    symptom_templates: Vec<Vec<usize>>,
    background: Vec<usize>,
    comorbid: Vec<(usize, usize)>,
    propagate: Vec<(usize, usize)>,
}

fn build_vocabulary(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Vocabulary {
    let lexicon = KeywordLexicon::default();
    let keywords: Vec<String> = lexicon.keywords().map(str::to_string).collect();
    let mut words = WordSource {
        used: HashSet::new(),
        lexicon,
    };

    let codes: Vec<CodeInfo> = (0..config.n_codes)
        .map(|j| {
            let first = capitalize(&words.fresh(rng));
            let second = format!("{}{}", words.fresh(rng), SUFFIXES.choose(rng).unwrap());
            CodeInfo {
                code: code_string(j),
                description: format!("{first} {second}"),
                base_rate: config.base_rate_max * ((j + 1) as f64).powf(-config.power_law_exponent),
            }
        })
        .collect();

    let mut code_order: Vec<usize> = (0..config.n_codes).collect();
    code_order.shuffle(rng);
    let condition_code: Vec<usize> = code_order[..config.n_conditions].to_vec();

    let mut templates = Vec::with_capacity(config.n_templates);
    let mut trigger_template = Vec::new();
    let mut symptom_templates = Vec::new();
    for (c, &code) in condition_code.iter().enumerate() {
        let kw = capitalize(keywords.choose(rng).unwrap());
        trigger_template.push(templates.len());
        templates.push(Template {
            text: format!("{kw} consistent with {}", codes[code].description.to_lowercase()),
            kind: TemplateKind::Trigger,
            condition: Some(c),
        });
        let mut ids = Vec::new();
        for _ in 0..config.symptoms_per_condition {
            let kw = capitalize(keywords.choose(rng).unwrap());
            ids.push(templates.len());
            templates.push(Template {
                text: format!("{kw} with {} involvement", words.fresh(rng)),
                kind: TemplateKind::Symptom,
                condition: Some(c),
            });
        }
        symptom_templates.push(ids);
    }
    let mut background = Vec::new();
    while templates.len() < config.n_templates {
        let kw = capitalize(keywords.choose(rng).unwrap());
        let conn = CONNECTORS.choose(rng).unwrap();
        background.push(templates.len());
        templates.push(Template {
            text: format!("{kw} {conn} {} exposure", words.fresh(rng)),
            kind: TemplateKind::Background,
            condition: None,
        });
    }

    // Comorbidity edges go from lower to higher code index, so the planted
    // intra-visit code graph is a DAG.
    let mut comorbid = BTreeSet::new();
    while comorbid.len() < config.n_comorbidities {
        let a = rng.random_range(0..config.n_codes);
        let b = rng.random_range(0..config.n_codes);
        if a != b {
            comorbid.insert((a.min(b), a.max(b)));
        }
    }
    let mut propagate = BTreeSet::new();
    while propagate.len() < config.n_propagations {
        propagate.insert((rng.random_range(0..config.n_codes), rng.random_range(0..config.n_codes)));
    }

    Vocabulary {
        codes,
        templates,
        condition_code,
        trigger_template,
        symptom_templates,
        background,
        comorbid: comorbid.into_iter().collect(),
        propagate: propagate.into_iter().collect(),
    }
}

struct Visit {
    props: Vec<usize>,
    codes: BTreeSet<usize>,
    edges: Vec<RealizedEdge>,
}

fn sample_visit(
    config: &GeneratorConfig,
    vocab: &Vocabulary,
    conditions: &[usize],
    prev_codes: &BTreeSet<usize>,
    rng: &mut ChaCha8Rng,
) -> Visit {
    let code_of = |j: usize| vocab.codes[j].code.clone();
    let mut props = Vec::new();
    let mut codes = BTreeSet::new();
    let mut edges = Vec::new();

    for &c in conditions {
        if rng.random::<f64>() < config.active_prob {
            let t = vocab.trigger_template[c];
            props.push(t);
            if rng.random::<f64>() < config.trigger_prob {
                let code = vocab.condition_code[c];
                codes.insert(code);
                edges.push(RealizedEdge {
                    edge_type: EdgeType::PropCode,
                    src: vocab.templates[t].text.clone(),
                    dst: code_of(code),
                });
            }
        }
        for &s in &vocab.symptom_templates[c] {
            if rng.random::<f64>() < config.symptom_prob {
                props.push(s);
            }
        }
    }
    let (lo, hi) = config.background_per_visit;
    let n_bg = rng.random_range(lo..=hi).min(vocab.background.len());
    props.extend(vocab.background.choose_multiple(rng, n_bg).copied());

    for &(src, dst) in &vocab.propagate {
        if prev_codes.contains(&src) && rng.random::<f64>() < config.propagation_prob {
            codes.insert(dst);
            edges.push(RealizedEdge {
                edge_type: EdgeType::Inter,
                src: code_of(src),
                dst: code_of(dst),
            });
        }
    }
    for (j, info) in vocab.codes.iter().enumerate() {
        if rng.random::<f64>() < info.base_rate {
            codes.insert(j);
        }
    }
    // Edges are sorted by source, so chains resolve in one pass.
    for &(src, dst) in &vocab.comorbid {
        if codes.contains(&src) && rng.random::<f64>() < config.comorbidity_prob {
            codes.insert(dst);
            edges.push(RealizedEdge {
                edge_type: EdgeType::CodeCode,
                src: code_of(src),
                dst: code_of(dst),
            });
        }
    }
    Visit { props, codes, edges }
}

fn render_note(
    patient_id: &str,
    visit: usize,
    props: &[&str],
    config: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
) -> String {
    let mut note = format!("Admission record {patient_id} visit {}\n", visit + 1);
    let n_sections = props.len().clamp(1, 3);
    let mut bodies: Vec<Vec<String>> = vec![Vec::new(); n_sections];
    for (i, p) in props.iter().enumerate() {
        let body = &mut bodies[i % n_sections];
        body.push(p.to_string());
        if rng.random::<f64>() < config.distractor_rate {
            body.push(DISTRACTORS.choose(rng).unwrap().to_string());
        }
    }
    let mut sections: Vec<(&str, Vec<String>)> = CLINICAL_HEADINGS[..n_sections].iter().copied().zip(bodies).collect();
    // Low-scoring filler: at most two sentences, no keywords.
    let filler = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(1..=2);
        DISTRACTORS
            .choose_multiple(rng, n)
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
    };
    sections.insert(rng.random_range(0..=sections.len()), (DISTRACTOR_HEADING, filler(rng)));
    if n_sections < CLINICAL_HEADINGS.len() {
        sections.push((CLINICAL_HEADINGS[CLINICAL_HEADINGS.len() - 1], filler(rng)));
    }
    for (heading, sentences) in sections {
        note.push_str(heading);
        note.push_str(": ");
        let body: Vec<String> = sentences.iter().map(|s| format!("{s}.")).collect();
        note.push_str(&body.join(" "));
        note.push('\n');
    }
    note
}

/// Generates a cohort in the ingestion format plus its ground truth.
pub fn generate_cohort(config: &GeneratorConfig) -> Result<GeneratedCohort> {
    let seed = config.validate()?;
    let mut vocab_rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = build_vocabulary(config, &mut vocab_rng);

    let mut admissions = Vec::new();
    let mut truths = Vec::new();
    for p in 0..config.n_patients {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64 + 1);
        let patient_id = format!("P{p:05}");
        let n_adm = rng.random_range(config.min_admissions..=config.max_admissions);
        let (lo, hi) = config.conditions_per_patient;
        let n_cond = rng.random_range(lo..=hi).min(config.n_conditions);
        let conditions: Vec<usize> = rand::seq::index::sample(&mut rng, config.n_conditions, n_cond).into_vec();
        let mut timestamp = 1.2e9 + rng.random_range(0..100_000) as f64 * 3600.0;
        let mut prev_codes = BTreeSet::new();

        for visit in 0..n_adm {
            let mut drawn = None;
            for _ in 0..config.max_resamples.max(1) {
                let v = sample_visit(config, &vocab, &conditions, &prev_codes, &mut rng);
                if !v.codes.is_empty() {
                    drawn = Some(v);
                    break;
                }
            }
            let v = drawn.ok_or_else(|| {
                Error::Config(format!(
                    "could not draw a non-empty code set for {patient_id} in {} attempts",
                    config.max_resamples
                ))
            })?;

            let props: Vec<&str> = v.props.iter().map(|&t| vocab.templates[t].text.as_str()).collect();
            let note = render_note(&patient_id, visit, &props, config, &mut rng);
            let mut raw_codes: Vec<String> = v.codes.iter().map(|&j| vocab.codes[j].code.replace('.', "")).collect();
            if rng.random::<f64>() < config.unknown_code_rate {
                raw_codes.push(format!("E99{}", rng.random_range(10..100)));
            }
            admissions.push(RawAdmission {
                patient_id: patient_id.clone(),
                timestamp,
                note,
                codes: raw_codes,
            });
            truths.push(AdmissionTruth {
                patient_id: patient_id.clone(),
                visit,
                codes: v.codes.iter().map(|&j| vocab.codes[j].code.clone()).collect(),
                propositions: props.iter().map(|s| s.to_string()).collect(),
                edges: v.edges,
            });
            timestamp += rng.random_range(30..400) as f64 * 86_400.0;
            prev_codes = v.codes;
        }
    }

    let code = |j: usize| vocab.codes[j].code.clone();
    let truth = GroundTruth {
        triggers: vocab
            .condition_code
            .iter()
            .zip(&vocab.trigger_template)
            .map(|(&c, &t)| PlantedTrigger {
                proposition: vocab.templates[t].text.clone(),
                code: code(c),
                probability: config.trigger_prob,
            })
            .collect(),
        comorbidities: vocab
            .comorbid
            .iter()
            .map(|&(a, b)| PlantedEdge {
                src: code(a),
                dst: code(b),
                probability: config.comorbidity_prob,
            })
            .collect(),
        propagations: vocab
            .propagate
            .iter()
            .map(|&(a, b)| PlantedEdge {
                src: code(a),
                dst: code(b),
                probability: config.propagation_prob,
            })
            .collect(),
        codes: vocab.codes,
        templates: vocab.templates,
        admissions: truths,
    };
    let icd_map = truth
        .codes
        .iter()
        .map(|c| (c.code.clone(), c.description.clone()))
        .collect();
    Ok(GeneratedCohort {
        admissions,
        icd_map,
        truth,
    })
}

/// Exported graph edges of one patient; `slice` indexes the patient's
/// admissions in time order.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientGraph {
    pub patient_id: String,
    pub edges: Vec<ExportedEdge>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScore {
    /// `None` when no PC edge was exported.
    pub precision: Option<f64>,
    pub recall: f64,
    pub exported: usize,
    pub hits: usize,
    pub planted: usize,
}

/// Precision and recall of exported PC edges against planted triggers.
///
/// An exported PC edge (proposition text → code description) is a hit when
/// the pair is a planted trigger. Recall is over the trigger pairs realized
/// in the scored admissions.
pub fn structure_recovery_score(graphs: &[PatientGraph], truth: &GroundTruth, threshold: f64) -> RecoveryScore {
    let code_of_desc: std::collections::HashMap<&str, &str> = truth
        .codes
        .iter()
        .map(|c| (c.description.as_str(), c.code.as_str()))
        .collect();
    let planted: HashSet<(&str, &str)> = truth
        .triggers
        .iter()
        .map(|t| (t.proposition.as_str(), t.code.as_str()))
        .collect();
    let (mut exported, mut hits, mut realized, mut recovered) = (0, 0, 0, 0);
    for g in graphs {
        let mut found: HashSet<(usize, &str, &str)> = HashSet::new();
        for e in &g.edges {
            if e.edge_type != EdgeType::PropCode || e.weight < threshold {
                continue;
            }
            exported += 1;
            let code = code_of_desc.get(e.dst_label.as_str()).copied().unwrap_or("");
            if planted.contains(&(e.src_label.as_str(), code)) {
                hits += 1;
                found.insert((e.slice, e.src_label.as_str(), code));
            }
        }
        for a in truth.admissions.iter().filter(|a| a.patient_id == g.patient_id) {
            for e in a.edges.iter().filter(|e| e.edge_type == EdgeType::PropCode) {
                realized += 1;
                if found.contains(&(a.visit, e.src.as_str(), e.dst.as_str())) {
                    recovered += 1;
                }
            }
        }
    }
    RecoveryScore {
        precision: (exported > 0).then(|| hits as f64 / exported as f64),
        recall: if realized == 0 {
            0.0
        } else {
            recovered as f64 / realized as f64
        },
        exported,
        hits,
        planted: realized,
    }
}

/// Recall expected from a model whose PC rows pick a code uniformly at
/// random: the mean of `1 / J` over realized trigger pairs, `J` being the
/// number of codes in the pair's admission.
pub fn random_baseline_recall(truth: &GroundTruth, patients: &[String]) -> f64 {
    let wanted: HashSet<&str> = patients.iter().map(String::as_str).collect();
    let (mut sum, mut n) = (0.0, 0usize);
    for a in truth
        .admissions
        .iter()
        .filter(|a| wanted.contains(a.patient_id.as_str()))
    {
        let pairs = a.edges.iter().filter(|e| e.edge_type == EdgeType::PropCode).count();
        if pairs > 0 {
            sum += pairs as f64 / a.codes.len() as f64;
            n += pairs;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
