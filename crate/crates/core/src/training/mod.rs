//! Stage 4: prediction head, focal loss, combined objective and the
//! optimizer loop with temperature annealing and early stopping.
//!
//! Row `r` of a trajectory embedding predicts the codes of the admission
//! after the one it pools, so every admission but the first supervises the
//! model; the last row is the next-admission prediction.

mod checkpoint;
mod config;
mod data;
mod model;
mod optim;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{anneal_temperature, EdgeInit, TrainConfig};
pub use data::{prepare_trajectories, split_patients, LabelVocab, PreparedTrajectory, Split};
pub use model::{predict_probs, predict_probs_on_tape, ModelParams, ModelVars, PredictionHead, TENSOR_NAMES};
pub use optim::{Adam, EarlyStopping, StopDecision, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::encoding::{EncodedAdmission, ProjectionVars, TextEncoder};
use crate::error::{Error, Result};
use crate::evaluation::precision_recall_at_k;
use crate::graph::{export_graph, forward_trajectory, CausalGraphSample, ExportedEdge, GraphVars, Variant};
use crate::ingestion::Trajectory;
use crate::tensor::{Matrix, Tape, Var};

/// Summed focal loss with probabilities clamped away from 0 and 1.
pub fn focal_loss(probs: &Matrix, targets: &Matrix, alpha: f64, gamma: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone());
    let l = tape.focal_loss(p, targets, alpha, gamma)?;
    Ok(tape.scalar(l))
}

/// `L_FL + λ_acyc · Σh + λ_ℓ1 · Σℓ1`.
pub fn total_loss(focal: f64, acyclicity: f64, sparsity: f64, config: &TrainConfig) -> f64 {
    focal + config.lambda_acyc * acyclicity + config.lambda_l1 * sparsity
}

impl ModelVars {
    /// Rebuilds handles from a slice in [`TENSOR_NAMES`] order.
    pub fn from_slice(vars: &[Var], dropout_rate: f64) -> Result<Self> {
        let v: &[Var; 16] = vars
            .try_into()
            .map_err(|_| Error::Parameter(format!("expected 16 parameter handles, got {}", vars.len())))?;
        Ok(Self {
            projection: ProjectionVars {
                w_p: v[0],
                b_p: v[1],
                w_c: v[2],
                b_c: v[3],
                dropout_rate,
            },
            graph: GraphVars {
                w_pp: v[4],
                w_pc: v[5],
                w_cc: v[6],
                w_inter: v[7],
                w1: v[8],
                w2: v[9],
                pool_w1: v[10],
                pool_b1: v[11],
                pool_w2: v[12],
                pool_b2: v[13],
            },
            w_o: v[14],
            b_o: v[15],
        })
    }
}

/// Scalar nodes of one objective evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: Var,
    pub focal: Var,
    pub acyclicity: Var,
    pub sparsity: Var,
}

/// Teacher-forced objective of one trajectory on `tape`.
pub fn trajectory_loss(
    tape: &mut Tape,
    vars: &ModelVars,
    trajectory: &PreparedTrajectory,
    config: &TrainConfig,
    temperature: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<LossNodes> {
    let fwd = forward_trajectory(
        tape,
        trajectory.context(),
        &vars.projection,
        &vars.graph,
        temperature,
        config.variant,
        rng,
    )?;
    let probs = predict_probs_on_tape(tape, fwd.z, vars.w_o, vars.b_o)?;
    let rows: Vec<usize> = fwd.slices.iter().map(|s| s.admission).collect();
    let targets = trajectory.next_step_targets(&rows, tape.shape(probs).1);
    let focal = tape.focal_loss(probs, &targets, config.focal_alpha, config.focal_gamma)?;
    let h = tape.scale(fwd.acyclicity, config.lambda_acyc);
    let l1 = tape.scale(fwd.sparsity, config.lambda_l1);
    let parts = tape.stack_rows(&[focal, h, l1])?;
    let total = tape.sum(parts);
    Ok(LossNodes {
        total,
        focal,
        acyclicity: fwd.acyclicity,
        sparsity: fwd.sparsity,
    })
}

/// RNG stream for one trajectory in one epoch.
pub fn trajectory_rng(seed: u64, epoch: usize, patient: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64 + 1) << 32) | patient as u64);
    rng
}

fn shuffle_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64 + 1) << 32) | 0xffff_ffff);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub temperature: f64,
    pub loss: f64,
    pub focal: f64,
    pub acyclicity: f64,
    pub sparsity: f64,
    /// Noise-free `Σh` over the validation trajectories.
    pub valid_acyclicity: f64,
    pub valid_precision: f64,
    pub valid_recall: f64,
    pub improved: bool,
}

/// Everything needed to continue or reuse a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub vocab: LabelVocab,
    pub best: ModelParams,
    pub last: ModelParams,
    pub adam: Adam,
    pub stopping: EarlyStopping,
    /// Temperature of the epoch that produced `best`.
    pub best_temperature: f64,
    pub history: Vec<EpochRecord>,
    pub next_epoch: usize,
}

impl TrainState {
    pub fn new(config: TrainConfig, vocab: LabelVocab) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::init(&config, vocab.len(), &mut rng)?;
        let adam = Adam::new(
            config.lr,
            config.weight_decay,
            params.tensors().iter().map(|m| m.shape()),
        );
        Ok(Self {
            stopping: EarlyStopping::new(config.patience),
            best_temperature: config.temp_start,
            best: params.clone(),
            last: params,
            adam,
            vocab,
            config,
            history: Vec::new(),
            next_epoch: 0,
        })
    }

    pub fn finished(&self) -> bool {
        self.next_epoch >= self.config.max_epochs || self.stopping.should_stop()
    }
}

/// The cohort split and encoded for training.
pub struct PreparedCohort {
    pub trajectories: Vec<PreparedTrajectory>,
    pub split: Split,
    pub vocab: LabelVocab,
}

/// Splits by patient, builds the label vocabulary from the training split
/// and encodes every trajectory.
pub fn prepare_cohort(
    cohort: &[Trajectory],
    encoder: &dyn TextEncoder,
    config: &TrainConfig,
) -> Result<PreparedCohort> {
    let split = split_patients(cohort.len(), config.train_fraction, config.valid_fraction, config.seed);
    if split.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let vocab = LabelVocab::from_trajectories(split.train.iter().map(|&i| &cohort[i]));
    if vocab.is_empty() {
        return Err(Error::Config("training split has no codes".into()));
    }
    prepare_with_vocab(cohort, encoder, config, vocab)
}

/// Like [`prepare_cohort`] with a fixed vocabulary, e.g. from a checkpoint.
pub fn prepare_with_vocab(
    cohort: &[Trajectory],
    encoder: &dyn TextEncoder,
    config: &TrainConfig,
    vocab: LabelVocab,
) -> Result<PreparedCohort> {
    if encoder.dim() != config.text_dim {
        return Err(Error::Config(format!(
            "encoder dimension {} differs from text_dim {}",
            encoder.dim(),
            config.text_dim
        )));
    }
    let split = split_patients(cohort.len(), config.train_fraction, config.valid_fraction, config.seed);
    let trajectories = prepare_trajectories(cohort, encoder, &vocab)?;
    Ok(PreparedCohort {
        trajectories,
        split,
        vocab,
    })
}

/// Trains from scratch; see [`continue_training`].
pub fn train(
    cohort: &[Trajectory],
    encoder: &dyn TextEncoder,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainState> {
    config.validate()?;
    let prepared = prepare_cohort(cohort, encoder, config)?;
    let mut state = TrainState::new(config.clone(), prepared.vocab.clone())?;
    continue_training(&mut state, &prepared, on_epoch)?;
    Ok(state)
}

/// Runs epochs until early stopping or `max_epochs`. Each epoch shuffles
/// the training patients, takes one Adam step per batch on the summed
/// objective and scores validation Recall@K on the final admissions.
pub fn continue_training(
    state: &mut TrainState,
    data: &PreparedCohort,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<()> {
    let config = state.config.clone();
    let selection: &[usize] = if data.split.valid.is_empty() {
        log::warn!("validation split is empty; selecting on the training split");
        &data.split.train
    } else {
        &data.split.valid
    };
    while !state.finished() {
        let epoch = state.next_epoch;
        let temperature = anneal_temperature(epoch, &config);
        let mut order = data.split.train.clone();
        order.shuffle(&mut shuffle_rng(config.seed, epoch));

        let (mut loss, mut focal, mut acyc, mut sparsity) = (0.0, 0.0, 0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let vars = state.last.register(&mut tape, true);
            let mut totals = Vec::with_capacity(batch.len());
            for &p in batch {
                let mut rng = trajectory_rng(config.seed, epoch, p);
                let nodes = trajectory_loss(
                    &mut tape,
                    &vars,
                    &data.trajectories[p],
                    &config,
                    temperature,
                    Some(&mut rng),
                )?;
                focal += tape.scalar(nodes.focal);
                acyc += tape.scalar(nodes.acyclicity);
                sparsity += tape.scalar(nodes.sparsity);
                totals.push(nodes.total);
            }
            let stacked = tape.stack_rows(&totals)?;
            let batch_loss = tape.sum(stacked);
            let value = tape.scalar(batch_loss);
            if !value.is_finite() {
                return Err(Error::Evaluation(format!("non-finite loss at epoch {epoch}")));
            }
            loss += value;
            let mut grads = tape.backward(batch_loss)?;
            let g: Vec<Matrix> = vars.all().iter().map(|v| grads.take(*v)).collect();
            state.adam.update(&mut state.last.tensors_mut(), &g)?;
        }

        let (precision, recall, valid_acyc) =
            selection_metrics(&state.last, &data.trajectories, selection, temperature, &config)?;
        let improved = state.stopping.observe(epoch, recall) == StopDecision::Improved;
        if improved {
            state.best = state.last.clone();
            state.best_temperature = temperature;
        }
        let record = EpochRecord {
            epoch,
            temperature,
            loss,
            focal,
            acyclicity: acyc,
            sparsity,
            valid_acyclicity: valid_acyc,
            valid_precision: precision,
            valid_recall: recall,
            improved,
        };
        log::info!(
            "epoch {epoch}: loss {loss:.4} focal {focal:.4} h {acyc:.4} valid R@{} {recall:.4}",
            config.early_stopping_k
        );
        on_epoch(&record);
        state.history.push(record);
        state.next_epoch += 1;
    }
    Ok(())
}

fn selection_metrics(
    params: &ModelParams,
    trajectories: &[PreparedTrajectory],
    idx: &[usize],
    temperature: f64,
    config: &TrainConfig,
) -> Result<(f64, f64, f64)> {
    let (mut p_sum, mut r_sum, mut n, mut h) = (0.0, 0.0, 0usize, 0.0);
    for &i in idx {
        let t = &trajectories[i];
        let out = infer(params, t.context(), temperature, config.variant)?;
        h += out.acyclicity;
        if t.final_labels().is_empty() {
            continue;
        }
        let (p, r) = precision_recall_at_k(out.final_probs(), t.final_labels(), config.early_stopping_k)?;
        p_sum += p;
        r_sum += r;
        n += 1;
    }
    let n = n.max(1) as f64;
    Ok((p_sum / n, r_sum / n, h))
}

/// Noise-free forward pass over a list of admissions.
#[derive(Clone, Debug)]
pub struct Inference {
    /// `T′ × L`, one row per retained admission.
    pub probs: Matrix,
    /// Input index of each row's admission.
    pub admissions: Vec<usize>,
    pub samples: Vec<Option<CausalGraphSample>>,
    pub acyclicity: f64,
    pub sparsity: f64,
}

impl Inference {
    /// Probabilities for the admission after the last input admission.
    pub fn final_probs(&self) -> &[f64] {
        self.probs.row(self.probs.rows() - 1)
    }
}

/// Evaluation-mode forward pass: no dropout, zero Gumbel noise.
pub fn infer(
    params: &ModelParams,
    admissions: &[EncodedAdmission],
    temperature: f64,
    variant: Variant,
) -> Result<Inference> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let fwd = forward_trajectory::<ChaCha8Rng>(
        &mut tape,
        admissions,
        &vars.projection,
        &vars.graph,
        temperature,
        variant,
        None,
    )?;
    let probs = predict_probs_on_tape(&mut tape, fwd.z, vars.w_o, vars.b_o)?;
    Ok(Inference {
        probs: tape.value(probs).clone(),
        admissions: fwd.slices.iter().map(|s| s.admission).collect(),
        samples: fwd.samples(&tape),
        acyclicity: tape.scalar(fwd.acyclicity),
        sparsity: tape.scalar(fwd.sparsity),
    })
}

/// Final-admission predictions for a set of patients.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub patient_ids: Vec<String>,
    /// One row per patient.
    pub probs: Matrix,
    pub truth: Vec<Vec<usize>>,
}

/// Predicts the final admission of each listed trajectory from the ones
/// before it, optionally keeping only the first `prop_cap` propositions.
pub fn predict_final(
    params: &ModelParams,
    trajectories: &[PreparedTrajectory],
    idx: &[usize],
    temperature: f64,
    variant: Variant,
    prop_cap: Option<usize>,
) -> Result<Predictions> {
    let l = params.head.n_labels();
    let mut data = Vec::with_capacity(idx.len() * l);
    let mut truth = Vec::with_capacity(idx.len());
    let mut ids = Vec::with_capacity(idx.len());
    for &i in idx {
        let t = &trajectories[i];
        let capped: Vec<EncodedAdmission>;
        let context = match prop_cap {
            Some(cap) => {
                capped = t.context().iter().map(|a| a.with_proposition_cap(cap)).collect();
                &capped[..]
            }
            None => t.context(),
        };
        let out = infer(params, context, temperature, variant)?;
        data.extend_from_slice(out.final_probs());
        truth.push(t.final_labels().to_vec());
        ids.push(t.patient_id.clone());
    }
    Ok(Predictions {
        patient_ids: ids,
        probs: Matrix::from_vec(idx.len(), l, data)?,
        truth,
    })
}

/// Evaluation-mode graphs of every admission, thresholded. Edge `slice`
/// values index `admissions`; PC edges read proposition text → code
/// description.
pub fn export_trajectory(
    params: &ModelParams,
    admissions: &[EncodedAdmission],
    temperature: f64,
    variant: Variant,
    threshold: f64,
) -> Result<Vec<ExportedEdge>> {
    let out = infer(params, admissions, temperature, variant)?;
    let mut edges = Vec::new();
    let mut prev: Option<Vec<String>> = None;
    for (&t, sample) in out.admissions.iter().zip(&out.samples) {
        let labels = admissions[t].node_labels();
        if let Some(sample) = sample {
            edges.extend(export_graph(sample, t, &labels, prev.as_deref(), threshold)?);
        }
        prev = Some(labels);
    }
    Ok(edges)
}
