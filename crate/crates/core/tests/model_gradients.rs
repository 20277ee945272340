//! Gradient checks for the full training objective on a two-patient cohort,
//! plus the constant-operand and sparse primitives.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thcm_core::encoding::HashingEncoder;
use thcm_core::ingestion::{AdmissionRecord, Trajectory};
use thcm_core::tensor::{gradient_check, Matrix, SparseRows, Tape, Var};
use thcm_core::training::{
    prepare_trajectories, trajectory_loss, trajectory_rng, LabelVocab, ModelParams, ModelVars, TrainConfig,
};
use thcm_core::Result;

const PRIMITIVE_TOL: f64 = 1e-6;

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| {
        let v: f64 = rng.random_range(0.1..1.0);
        if rng.random::<bool>() {
            v
        } else {
            -v
        }
    })
}

/// Reduces `out` to a scalar through a fixed random weighting.
fn weighted_sum(tape: &mut Tape, out: Var) -> Result<Var> {
    let (r, c) = tape.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64((r * 31 + c) as u64);
    let w = Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let y = tape.mul_const(out, w)?;
    Ok(tape.sum(y))
}

fn check(name: &str, shapes: &[(usize, usize)], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
    let params: Vec<Matrix> = shapes.iter().map(|&(r, c)| rand_matrix(&mut rng, r, c)).collect();
    let err = gradient_check(
        |tape, v| {
            let out = f(tape, v)?;
            weighted_sum(tape, out)
        },
        &params,
    )
    .unwrap();
    assert!(err < PRIMITIVE_TOL, "{name}: {err:e}");
}

#[test]
fn constant_operand_primitives() {
    check("add_const", &[(2, 2)], |t, v| {
        t.add_const(v[0], &Matrix::filled(2, 2, 0.3))
    });
    check("mul_const", &[(2, 3)], |t, v| {
        t.mul_const(v[0], Matrix::from_fn(2, 3, |i, j| i as f64 - j as f64))
    });
}

#[test]
fn sparse_projection() {
    let mut sp = SparseRows::new(6);
    sp.push_sparse(vec![(0, 0.5), (3, -1.0)]);
    sp.push_sparse(vec![]);
    sp.push_sparse(vec![(1, 2.0), (5, 0.25), (2, 1.0)]);
    let sp = Arc::new(sp);
    check("sparse_project", &[(4, 6)], move |t, v| {
        t.sparse_project(sp.clone(), v[0])
    });
}

fn admission(pid: &str, ts: f64, props: &[&str], codes: &[(&str, &str)]) -> AdmissionRecord {
    AdmissionRecord {
        patient_id: pid.into(),
        timestamp: ts,
        note_text: String::new(),
        raw_codes: codes.iter().map(|c| c.0.replace('.', "")).collect(),
        propositions: props.iter().map(|s| s.to_string()).collect(),
        norm_codes: codes.iter().map(|c| c.0.to_string()).collect(),
        descriptions: codes.iter().map(|c| c.1.to_string()).collect(),
    }
}

fn micro_cohort(second_len: usize) -> Vec<Trajectory> {
    let a = vec![
        admission(
            "A",
            0.0,
            &["Fever with chills", "Cough after exposure", "Chest pain at rest"],
            &[
                ("486", "Pneumonia, organism unspecified"),
                ("401.9", "Unspecified essential hypertension"),
            ],
        ),
        admission(
            "A",
            1.0,
            &["Dyspnea on exertion"],
            &[("428.0", "Congestive heart failure")],
        ),
    ];
    let mut b = vec![
        admission(
            "B",
            0.0,
            &["Nausea and vomiting"],
            &[
                ("250.00", "Diabetes mellitus"),
                ("401.9", "Unspecified essential hypertension"),
            ],
        ),
        admission(
            "B",
            1.0,
            &["Edema of legs", "Fatigue"],
            &[("428.0", "Congestive heart failure")],
        ),
        admission("B", 2.0, &[], &[("486", "Pneumonia, organism unspecified")]),
    ];
    b.truncate(second_len);
    vec![
        Trajectory {
            patient_id: "A".into(),
            admissions: a,
        },
        Trajectory {
            patient_id: "B".into(),
            admissions: b,
        },
    ]
}

fn end_to_end_error(second_len: usize) -> f64 {
    let cfg = TrainConfig {
        text_dim: 16,
        proj_dim: 4,
        pool_hidden: 5,
        embed_dim: 3,
        edge_init_scale: 2.0,
        seed: 11,
        ..TrainConfig::default()
    };
    let cohort = micro_cohort(second_len);
    let vocab = LabelVocab::from_trajectories(&cohort);
    let enc = HashingEncoder::new(cfg.text_dim).unwrap();
    let trajs = prepare_trajectories(&cohort, &enc, &vocab).unwrap();
    let params = ModelParams::init(&cfg, vocab.len(), &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
    let tensors: Vec<Matrix> = params.tensors().into_iter().cloned().collect();
    let temperature = 0.7;
    gradient_check(
        |tape, v| {
            let vars = ModelVars::from_slice(v, cfg.dropout)?;
            let mut totals = Vec::new();
            for (p, t) in trajs.iter().enumerate() {
                // A fresh stream per evaluation keeps dropout and Gumbel noise fixed.
                let mut rng = trajectory_rng(cfg.seed, 0, p);
                totals.push(trajectory_loss(tape, &vars, t, &cfg, temperature, Some(&mut rng))?.total);
            }
            let s = tape.stack_rows(&totals)?;
            Ok(tape.sum(s))
        },
        &tensors,
    )
    .unwrap()
}

#[test]
fn end_to_end_two_admissions() {
    let err = end_to_end_error(2);
    assert!(err < 1e-4, "{err:e}");
}

#[test]
fn end_to_end_with_inter_slice_edges() {
    let err = end_to_end_error(3);
    assert!(err < 1e-4, "{err:e}");
}
