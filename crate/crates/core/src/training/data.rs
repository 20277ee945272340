use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{EncodedAdmission, EncoderCache, TextEncoder};
use crate::error::{Error, Result};
use crate::ingestion::Trajectory;
use crate::tensor::Matrix;

/// Closed label space: sorted codes seen in the training split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct LabelVocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for LabelVocab {
    fn from(labels: Vec<String>) -> Self {
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Self { labels, index }
    }
}

impl From<LabelVocab> for Vec<String> {
    fn from(v: LabelVocab) -> Self {
        v.labels
    }
}

impl LabelVocab {
    pub fn from_trajectories<'a>(trajectories: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        let set: BTreeSet<&str> = trajectories
            .into_iter()
            .flat_map(|t| &t.admissions)
            .flat_map(|a| &a.norm_codes)
            .map(String::as_str)
            .collect();
        set.into_iter().map(str::to_string).collect::<Vec<_>>().into()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    /// Sorted indices of the in-vocabulary codes.
    pub fn encode(&self, codes: &[String]) -> Vec<usize> {
        let mut out: Vec<usize> = codes.iter().filter_map(|c| self.get(c)).collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Patient indices of the train, validation and test splits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded patient-level split. Sizes are `round(n · train_fraction)` and
/// `round(n · valid_fraction)`; the test split takes the rest.
pub fn split_patients(n: usize, train_fraction: f64, valid_fraction: f64, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5e11);
    idx.shuffle(&mut rng);
    let n_train = ((n as f64 * train_fraction).round() as usize).min(n);
    let n_valid = ((n as f64 * valid_fraction).round() as usize).min(n - n_train);
    let mut train = idx[..n_train].to_vec();
    let mut valid = idx[n_train..n_train + n_valid].to_vec();
    let mut test = idx[n_train + n_valid..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    Split { train, valid, test }
}

/// A trajectory with its text encoded and its codes mapped to label indices.
#[derive(Clone, Debug)]
pub struct PreparedTrajectory {
    pub patient_id: String,
    pub admissions: Vec<EncodedAdmission>,
    /// Label indices per admission.
    pub labels: Vec<Vec<usize>>,
}

impl PreparedTrajectory {
    /// All admissions but the last.
    pub fn context(&self) -> &[EncodedAdmission] {
        &self.admissions[..self.admissions.len().saturating_sub(1)]
    }

    /// Labels of the admission to predict.
    pub fn final_labels(&self) -> &[usize] {
        self.labels.last().map_or(&[], Vec::as_slice)
    }

    /// `rows × L` targets where row `r` holds the labels of the admission
    /// following `admission_of_row[r]`.
    pub fn next_step_targets(&self, admission_of_row: &[usize], n_labels: usize) -> Matrix {
        let mut y = Matrix::zeros(admission_of_row.len(), n_labels);
        for (r, &t) in admission_of_row.iter().enumerate() {
            for &j in &self.labels[t + 1] {
                y.set(r, j, 1.0);
            }
        }
        y
    }
}

pub fn prepare_trajectories(
    trajectories: &[Trajectory],
    encoder: &dyn TextEncoder,
    vocab: &LabelVocab,
) -> Result<Vec<PreparedTrajectory>> {
    let mut cache = EncoderCache::new(encoder);
    trajectories
        .iter()
        .map(|t| {
            if t.admissions.len() < 2 {
                return Err(Error::Validation(format!(
                    "patient {} has fewer than two admissions",
                    t.patient_id
                )));
            }
            let admissions = t
                .admissions
                .iter()
                .map(|a| cache.encode_admission(a))
                .collect::<Result<Vec<_>>>()?;
            let labels = t.admissions.iter().map(|a| vocab.encode(&a.norm_codes)).collect();
            Ok(PreparedTrajectory {
                patient_id: t.patient_id.clone(),
                admissions,
                labels,
            })
        })
        .collect()
}
