//! Stage 2: text encoders, modality projections and per-admission feature
//! matrices.
//!
//! Feature matrices are node-major: one row per node, propositions first and
//! codes after them.

use std::collections::HashMap;
use std::hash::Hasher;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use fnv::FnvHasher;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::AdmissionRecord;
use crate::tensor::{Matrix, SparseRows, Tape, Var};

/// Default text embedding width.
pub const DEFAULT_TEXT_DIM: usize = 768;

/// Maps text to a fixed-width real vector. Implementations must be
/// deterministic.
pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<Vec<f64>>;
}

fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Stable key for a text in pre-computed embedding tables: FNV-1a 64 of the
/// UTF-8 bytes as 16 lowercase hex digits.
pub fn text_hash(text: &str) -> String {
    format!("{:016x}", fnv64(text.as_bytes()))
}

/// Signed feature hashing of lowercase word unigrams and bigrams, followed by
/// L2 normalization.
#[derive(Clone, Debug)]
pub struct HashingEncoder {
    dim: usize,
}

impl HashingEncoder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("encoder dimension must be positive".into()));
        }
        Ok(Self { dim })
    }

    fn add_feature(&self, v: &mut [f64], feature: &str) {
        let h = fnv64(feature.as_bytes());
        let bucket = (h % self.dim as u64) as usize;
        // Sign from an independent hash of the same feature.
        let mut sh = FnvHasher::with_key(0x9e37_79b9_7f4a_7c15);
        sh.write(feature.as_bytes());
        let sign = if sh.finish() & 1 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
}

impl Default for HashingEncoder {
    fn default() -> Self {
        Self { dim: DEFAULT_TEXT_DIM }
    }
}

impl TextEncoder for HashingEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        if text.trim().is_empty() {
            return Err(Error::EmptyInput("text"));
        }
        let lower = text.to_lowercase();
        let words: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        let mut v = vec![0.0; self.dim];
        for w in &words {
            self.add_feature(&mut v, w);
        }
        for pair in words.windows(2) {
            self.add_feature(&mut v, &format!("{} {}", pair[0], pair[1]));
        }
        let mut norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // No word characters, or features cancelled exactly.
            self.add_feature(&mut v, &format!("\u{0}{lower}"));
            norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

/// Lookup of externally computed embeddings.
///
/// The table is a header-less CSV; each row is `text_hash,v_1,...,v_d` with
/// the key produced by [`text_hash`]. Unknown texts are an error.
#[derive(Clone, Debug)]
pub struct FileEncoder {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl FileEncoder {
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut table = HashMap::new();
        let mut dim = None;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse_err = |message: String| Error::Parse { line: i + 1, message };
            let key = rec
                .get(0)
                .ok_or_else(|| parse_err("missing key".into()))?
                .trim()
                .to_string();
            let values = rec
                .iter()
                .skip(1)
                .map(|s| s.trim().parse::<f64>().map_err(|e| parse_err(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(parse_err("non-finite embedding value".into()));
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(parse_err(format!("expected {d} values, found {}", values.len())))
                }
                _ => {}
            }
            table.insert(key, values);
        }
        let dim = dim.filter(|d| *d > 0).ok_or(Error::EmptyInput("embedding table"))?;
        Ok(Self { dim, table })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f)
    }
}

impl TextEncoder for FileEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        if text.is_empty() {
            return Err(Error::EmptyInput("text"));
        }
        self.table
            .get(&text_hash(text))
            .cloned()
            .ok_or_else(|| Error::Validation(format!("no pre-computed embedding for {text:?}")))
    }
}

pub fn encode_text(encoder: &dyn TextEncoder, text: &str) -> Result<Vec<f64>> {
    encoder.encode(text)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Proposition,
    Code,
}

/// Modality-specific projections into the shared node space.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionParams {
    /// `d′ × d`.
    pub w_p: Matrix,
    /// `1 × d′`.
    pub b_p: Matrix,
    pub w_c: Matrix,
    pub b_c: Matrix,
    pub dropout_rate: f64,
}

impl ProjectionParams {
    pub fn zeros(text_dim: usize, proj_dim: usize, dropout_rate: f64) -> Self {
        Self {
            w_p: Matrix::zeros(proj_dim, text_dim),
            b_p: Matrix::zeros(1, proj_dim),
            w_c: Matrix::zeros(proj_dim, text_dim),
            b_c: Matrix::zeros(1, proj_dim),
            dropout_rate,
        }
    }

    pub fn text_dim(&self) -> usize {
        self.w_p.cols()
    }

    pub fn proj_dim(&self) -> usize {
        self.w_p.rows()
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ProjectionVars {
        let mut reg = |m: &Matrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        ProjectionVars {
            w_p: reg(&self.w_p),
            b_p: reg(&self.b_p),
            w_c: reg(&self.w_c),
            b_c: reg(&self.b_c),
            dropout_rate: self.dropout_rate,
        }
    }
}

/// Tape handles for [`ProjectionParams`].
#[derive(Clone, Copy, Debug)]
pub struct ProjectionVars {
    pub w_p: Var,
    pub b_p: Var,
    pub w_c: Var,
    pub b_c: Var,
    pub dropout_rate: f64,
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 − rate)`. Draws are taken in row-major order.
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Matrix {
    let keep = 1.0 / (1.0 - rate);
    Matrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < rate { 0.0 } else { keep })
}

/// `ReLU(W·h + b)` for one embedding; inverted dropout at the configured
/// rate when `rng` is given (training mode).
pub fn project<R: Rng + ?Sized>(
    h: &[f64],
    modality: Modality,
    params: &ProjectionParams,
    rng: Option<&mut R>,
) -> Result<Vec<f64>> {
    if h.len() != params.text_dim() {
        return Err(Error::Dimension {
            op: "project",
            left: (1, h.len()),
            right: (params.proj_dim(), params.text_dim()),
        });
    }
    let (w, b) = match modality {
        Modality::Proposition => (&params.w_p, &params.b_p),
        Modality::Code => (&params.w_c, &params.b_c),
    };
    let mut out: Vec<f64> = (0..w.rows())
        .map(|o| {
            let z: f64 = w.row(o).iter().zip(h).map(|(a, x)| a * x).sum::<f64>() + b.data()[o];
            z.max(0.0)
        })
        .collect();
    if let Some(rng) = rng {
        if params.dropout_rate > 0.0 {
            let mask = dropout_mask(1, out.len(), params.dropout_rate, rng);
            out.iter_mut().zip(mask.data()).for_each(|(o, m)| *o *= m);
        }
    }
    Ok(out)
}

/// Encoded text of one admission, ready for projection.
#[derive(Clone, Debug)]
pub struct EncodedAdmission {
    pub propositions: Arc<SparseRows>,
    pub codes: Arc<SparseRows>,
    pub proposition_texts: Vec<String>,
    pub code_ids: Vec<String>,
    pub code_descriptions: Vec<String>,
}

impl EncodedAdmission {
    pub fn n_props(&self) -> usize {
        self.propositions.n_rows()
    }

    pub fn n_codes(&self) -> usize {
        self.codes.n_rows()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_props() + self.n_codes()
    }

    /// Labels for graph export: proposition text, then code descriptions.
    pub fn node_labels(&self) -> Vec<String> {
        self.proposition_texts
            .iter()
            .chain(&self.code_descriptions)
            .cloned()
            .collect()
    }

    /// Keys for graph export: proposition text, then canonical code.
    pub fn node_keys(&self) -> Vec<String> {
        self.proposition_texts.iter().chain(&self.code_ids).cloned().collect()
    }

    /// Copy keeping only the first `cap` propositions.
    pub fn with_proposition_cap(&self, cap: usize) -> Self {
        let mut out = self.clone();
        if cap < self.n_props() {
            let mut rows = SparseRows::new(self.propositions.n_cols());
            for i in 0..cap {
                rows.push_sparse(self.propositions.row(i).to_vec());
            }
            out.propositions = Arc::new(rows);
            out.proposition_texts.truncate(cap);
        }
        out
    }
}

/// Memoizing wrapper around a [`TextEncoder`].
pub struct EncoderCache<'a> {
    encoder: &'a dyn TextEncoder,
    cache: HashMap<String, Vec<(usize, f64)>>,
}

impl<'a> EncoderCache<'a> {
    pub fn new(encoder: &'a dyn TextEncoder) -> Self {
        Self {
            encoder,
            cache: HashMap::new(),
        }
    }

    fn sparse(&mut self, text: &str) -> Result<Vec<(usize, f64)>> {
        if let Some(v) = self.cache.get(text) {
            return Ok(v.clone());
        }
        let dense = self.encoder.encode(text)?;
        let sparse: Vec<(usize, f64)> = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, v)| (k, *v))
            .collect();
        self.cache.insert(text.to_string(), sparse.clone());
        Ok(sparse)
    }

    pub fn encode_admission(&mut self, record: &AdmissionRecord) -> Result<EncodedAdmission> {
        let d = self.encoder.dim();
        let mut props = SparseRows::new(d);
        for p in &record.propositions {
            props.push_sparse(self.sparse(p)?);
        }
        let mut codes = SparseRows::new(d);
        for desc in &record.descriptions {
            codes.push_sparse(self.sparse(desc)?);
        }
        Ok(EncodedAdmission {
            propositions: Arc::new(props),
            codes: Arc::new(codes),
            proposition_texts: record.propositions.clone(),
            code_ids: record.norm_codes.clone(),
            code_descriptions: record.descriptions.clone(),
        })
    }
}

/// Node-feature matrix of one admission.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceFeatures {
    /// `ND × d′`, proposition rows first.
    pub x: Matrix,
    pub n_props: usize,
    pub n_codes: usize,
}

impl SliceFeatures {
    pub fn n_nodes(&self) -> usize {
        self.n_props + self.n_codes
    }
}

/// Tape handle of an assembled feature matrix.
#[derive(Clone, Copy, Debug)]
pub struct SliceVars {
    pub x: Var,
    pub n_props: usize,
    pub n_codes: usize,
}

fn project_rows<R: Rng + ?Sized>(
    tape: &mut Tape,
    rows: &Arc<SparseRows>,
    w: Var,
    b: Var,
    dropout: f64,
    rng: Option<&mut R>,
) -> Result<Var> {
    let z = tape.sparse_project(rows.clone(), w)?;
    let z = tape.add_row(z, b)?;
    let x = tape.relu(z);
    match rng {
        Some(rng) if dropout > 0.0 => {
            let (r, c) = tape.shape(x);
            let mask = dropout_mask(r, c, dropout, rng);
            tape.mul_const(x, mask)
        }
        _ => Ok(x),
    }
}

/// Projects and stacks one admission's nodes on the tape. Dropout is applied
/// when `rng` is given.
pub fn assemble_on_tape<R: Rng + ?Sized>(
    tape: &mut Tape,
    admission: &EncodedAdmission,
    vars: &ProjectionVars,
    index: usize,
    mut rng: Option<&mut R>,
) -> Result<SliceVars> {
    let (i, j) = (admission.n_props(), admission.n_codes());
    if i + j == 0 {
        return Err(Error::DegenerateSlice(index));
    }
    let mut parts = Vec::with_capacity(2);
    if i > 0 {
        parts.push(project_rows(
            tape,
            &admission.propositions,
            vars.w_p,
            vars.b_p,
            vars.dropout_rate,
            rng.as_deref_mut(),
        )?);
    }
    if j > 0 {
        parts.push(project_rows(
            tape,
            &admission.codes,
            vars.w_c,
            vars.b_c,
            vars.dropout_rate,
            rng,
        )?);
    }
    let x = if parts.len() == 1 {
        parts[0]
    } else {
        tape.stack_rows(&parts)?
    };
    Ok(SliceVars {
        x,
        n_props: i,
        n_codes: j,
    })
}

/// Stacks projected proposition vectors, then projected code vectors.
pub fn assemble_features<R: Rng + ?Sized>(
    record: &AdmissionRecord,
    encoder: &dyn TextEncoder,
    params: &ProjectionParams,
    rng: Option<&mut R>,
) -> Result<SliceFeatures> {
    let encoded = EncoderCache::new(encoder).encode_admission(record)?;
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let s = assemble_on_tape(&mut tape, &encoded, &vars, 0, rng)?;
    Ok(SliceFeatures {
        x: tape.value(s.x).clone(),
        n_props: s.n_props,
        n_codes: s.n_codes,
    })
}
