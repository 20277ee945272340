//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any fails. Run with
//! `cargo test --release -p thcm-cli --test acceptance`.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thcm_core::conformal::{calibrate, conformal_metrics, nonconformity, predict_set};
use thcm_core::encoding::HashingEncoder;
use thcm_core::evaluation::evaluate_predictions;
use thcm_core::graph::{forward_trajectory, Variant};
use thcm_core::ingestion::{build_cohort, AdmissionRecord, IcdMap, KeywordLexicon, Stage1, Stage1Config, Trajectory};
use thcm_core::synthetic::{
    generate_cohort, random_baseline_recall, structure_recovery_score, GeneratedCohort, GeneratorConfig, PatientGraph,
};
use thcm_core::tensor::{gradient_check, trace_expm_hadamard, Matrix, SparseRows, Tape, Var};
use thcm_core::training::{
    export_trajectory, infer, predict_final, prepare_cohort, prepare_trajectories, train, trajectory_loss,
    trajectory_rng, LabelVocab, ModelParams, ModelVars, PreparedCohort, TrainConfig, TrainState,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn synthetic(cfg: &GeneratorConfig) -> (GeneratedCohort, Vec<Trajectory>) {
    let gen = generate_cohort(cfg).unwrap();
    let stage1 = Stage1::new(
        KeywordLexicon::default(),
        IcdMap::from_pairs(gen.icd_map.clone()),
        Stage1Config::default(),
    );
    let cohort = build_cohort(gen.admissions.clone(), &stage1).unwrap();
    (gen, cohort)
}

fn desk_config(seed: u64, variant: Variant) -> TrainConfig {
    TrainConfig {
        seed,
        variant,
        lr: 1e-3,
        proj_dim: 64,
        pool_hidden: 64,
        embed_dim: 64,
        max_epochs: 60,
        patience: 60,
        ..TrainConfig::default()
    }
}

struct Trained {
    state: TrainState,
    data: PreparedCohort,
}

fn fit(cohort: &[Trajectory], cfg: &TrainConfig) -> Trained {
    let enc = HashingEncoder::new(cfg.text_dim).unwrap();
    let data = prepare_cohort(cohort, &enc, cfg).unwrap();
    let state = train(cohort, &enc, cfg, |_| {}).unwrap();
    Trained { state, data }
}

fn test_recall(t: &Trained, cap: Option<usize>) -> f64 {
    let s = &t.state;
    let p = predict_final(
        &s.best,
        &t.data.trajectories,
        &t.data.split.test,
        s.best_temperature,
        s.config.variant,
        cap,
    )
    .unwrap();
    evaluate_predictions(&p.probs, &p.truth, &[20]).unwrap().recall_at[&20]
}

fn coverage(ie_errors: &mut Vec<f64>) -> Outcome {
    let (_, cohort) = synthetic(&GeneratorConfig {
        seed: Some(100),
        n_patients: 800,
        ..GeneratorConfig::default()
    });
    let cfg = TrainConfig {
        max_epochs: 20,
        patience: 20,
        ..desk_config(100, Variant::Full)
    };
    let t = fit(&cohort, &cfg);
    let s = &t.state;
    let mut rows: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
    for traj in &t.data.trajectories {
        let out = infer(&s.best, &traj.admissions, s.best_temperature, Variant::Full).unwrap();
        for (r, &a) in out.admissions.iter().enumerate() {
            if a + 1 < traj.labels.len() && !traj.labels[a + 1].is_empty() {
                rows.push((out.probs.row(r).to_vec(), traj.labels[a + 1].clone()));
            }
        }
    }
    let l = t.data.vocab.len();
    let mut pass = true;
    let mut detail = Vec::new();
    let mut min_cal = usize::MAX;
    for eps in [0.05, 0.1, 0.2] {
        let mut total = 0.0;
        for trial in 0..20u64 {
            let mut idx: Vec<usize> = (0..rows.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(trial));
            let (cal, test) = idx.split_at(rows.len() / 2);
            let scores: Vec<f64> = cal
                .iter()
                .flat_map(|&i| nonconformity(&rows[i].0, &rows[i].1))
                .collect();
            min_cal = min_cal.min(scores.len());
            let c = calibrate(scores, eps).unwrap();
            let sets: Vec<_> = test.iter().map(|&i| predict_set(&rows[i].0, &c)).collect();
            let truth: Vec<Vec<usize>> = test.iter().map(|&i| rows[i].1.clone()).collect();
            let m = conformal_metrics(&sets, &truth, l).unwrap();
            if let Some(ie) = m.ie {
                ie_errors.push((ie * m.miw - 1.0).abs());
            }
            total += m.coverage;
        }
        let cov = total / 20.0;
        let ok = cov >= 1.0 - eps - 0.02 && cov <= 1.0 - eps + 0.03;
        pass &= ok;
        detail.push(format!("eps {eps}: {cov:.4}"));
    }
    pass &= min_cal >= 2000;
    outcome(pass, format!("{}; >= {min_cal} calibration scores", detail.join(", ")))
}

fn ie_identity(ie_errors: &[f64], cli_metrics: Option<&serde_json::Value>) -> Outcome {
    let mut worst = ie_errors.iter().copied().fold(0.0, f64::max);
    let mut n = ie_errors.len();
    if let Some(m) = cli_metrics {
        if let (Some(ie), Some(miw)) = (m["ie"].as_f64(), m["miw"].as_f64()) {
            worst = worst.max((ie * miw - 1.0).abs());
            n += 1;
        }
    }
    outcome(
        n > 0 && worst < 1e-6,
        format!("{n} runs, max |ie*miw - 1| = {worst:.2e}"),
    )
}

fn has_cycle(a: &Matrix) -> bool {
    fn visit(a: &Matrix, u: usize, state: &mut [u8]) -> bool {
        state[u] = 1;
        for v in 0..a.cols() {
            if a.get(u, v) != 0.0 && (state[v] == 1 || (state[v] == 0 && visit(a, v, state))) {
                return true;
            }
        }
        state[u] = 2;
        false
    }
    let mut state = vec![0u8; a.rows()];
    (0..a.rows()).any(|u| state[u] == 0 && visit(a, u, &mut state))
}

fn taylor_penalty(a: &Matrix) -> f64 {
    let m = a.hadamard(a).unwrap();
    let n = a.rows();
    let (mut sum, mut term) = (Matrix::identity(n), Matrix::identity(n));
    for k in 1..30 {
        term = term.matmul(&m).unwrap().scale(1.0 / k as f64);
        sum = sum.add(&term).unwrap();
    }
    sum.trace() - n as f64
}

fn dag_oracle() -> Outcome {
    let (mut graphs, mut failures, mut worst) = (0usize, 0usize, 0.0f64);
    for n in 1..=4usize {
        for mask in 0u32..(1 << (n * n)) {
            let a = Matrix::from_fn(n, n, |i, j| if mask >> (i * n + j) & 1 == 1 { 0.5 } else { 0.0 });
            let (h, _) = trace_expm_hadamard(&a).unwrap();
            graphs += 1;
            if has_cycle(&a) {
                let err = (h - taylor_penalty(&a)).abs();
                worst = worst.max(err);
                failures += usize::from(h <= 0.0 || err > 1e-8);
            } else {
                failures += usize::from(h != 0.0);
            }
        }
    }
    outcome(
        failures == 0,
        format!("{graphs} digraphs, {failures} mismatches, max Taylor gap {worst:.2e}"),
    )
}

fn weighted_sum(t: &mut Tape, v: Var) -> thcm_core::Result<Var> {
    let (r, c) = t.shape(v);
    let w = Matrix::from_fn(r, c, |i, j| 0.3 + ((i * 7 + j * 3) % 5) as f64 * 0.37);
    let y = t.mul_const(v, w)?;
    Ok(t.sum(y))
}

type Primitive = Box<dyn Fn(&mut Tape, &[Var]) -> thcm_core::Result<Var>>;
type Case = (&'static str, Vec<(usize, usize)>, Primitive);

fn primitive_errors() -> Vec<(&'static str, f64)> {
    let mut sp = SparseRows::new(5);
    sp.push_sparse(vec![(0, 0.5), (3, -1.0)]);
    sp.push_sparse(vec![(1, 2.0), (4, 0.25)]);
    let sp = Arc::new(sp);
    let y = Matrix::from_rows(&[[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]]);
    let cases: Vec<Case> = vec![
        ("matmul", vec![(3, 4), (4, 2)], Box::new(|t, v| t.matmul(v[0], v[1]))),
        (
            "sparse_project",
            vec![(3, 5)],
            Box::new(move |t, v| t.sparse_project(sp.clone(), v[0])),
        ),
        ("add", vec![(2, 3), (2, 3)], Box::new(|t, v| t.add(v[0], v[1]))),
        ("add_row", vec![(3, 2), (1, 2)], Box::new(|t, v| t.add_row(v[0], v[1]))),
        (
            "hadamard",
            vec![(2, 3), (2, 3)],
            Box::new(|t, v| t.hadamard(v[0], v[1])),
        ),
        ("relu", vec![(3, 3)], Box::new(|t, v| Ok(t.relu(v[0])))),
        ("sigmoid", vec![(3, 3)], Box::new(|t, v| Ok(t.sigmoid(v[0])))),
        ("transpose", vec![(2, 4)], Box::new(|t, v| Ok(t.transpose(v[0])))),
        ("row_mean", vec![(3, 4)], Box::new(|t, v| Ok(t.row_mean(v[0])))),
        ("abs_sum", vec![(3, 3)], Box::new(|t, v| Ok(t.abs_sum(v[0])))),
        ("softmax_rows", vec![(3, 4)], Box::new(|t, v| Ok(t.softmax_rows(v[0])))),
        (
            "softmax_rows_masked",
            vec![(4, 4)],
            Box::new(|t, v| {
                let m = t.mask_diagonal(v[0], -1e9)?;
                Ok(t.softmax_rows_masked(m))
            }),
        ),
        (
            "trace_expm_hadamard",
            vec![(4, 4)],
            Box::new(|t, v| t.trace_expm_hadamard(v[0])),
        ),
        (
            "stack_rows",
            vec![(2, 3), (1, 3)],
            Box::new(|t, v| t.stack_rows(&[v[0], v[1]])),
        ),
        (
            "concat_cols",
            vec![(2, 3), (2, 2)],
            Box::new(|t, v| t.concat_cols(&[v[0], v[1]])),
        ),
        ("slice_rows", vec![(4, 2)], Box::new(|t, v| t.slice_rows(v[0], 1, 3))),
        (
            "upper_blocks",
            vec![(2, 2), (2, 3), (3, 3)],
            Box::new(|t, v| t.upper_blocks(v[0], v[1], v[2])),
        ),
        (
            "focal_loss",
            vec![(2, 3)],
            Box::new(move |t, v| {
                let p = t.sigmoid(v[0]);
                t.focal_loss(p, &y, 0.25, 2.0)
            }),
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    cases
        .into_iter()
        .map(|(name, shapes, f)| {
            let params: Vec<Matrix> = shapes
                .iter()
                .map(|&(r, c)| {
                    Matrix::from_fn(r, c, |_, _| {
                        let m: f64 = rng.random_range(0.1..1.0);
                        if rng.random::<bool>() {
                            m
                        } else {
                            -m
                        }
                    })
                })
                .collect();
            let err = gradient_check(
                |t, v| {
                    let out = f(t, v)?;
                    weighted_sum(t, out)
                },
                &params,
            )
            .unwrap();
            (name, err)
        })
        .collect()
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

fn micro_cohort() -> Vec<Trajectory> {
    let (pna, htn, chf) = (
        ("486", "Pneumonia, organism unspecified"),
        ("401.9", "Unspecified essential hypertension"),
        ("428.0", "Congestive heart failure"),
    );
    vec![
        Trajectory {
            patient_id: "A".into(),
            admissions: vec![
                admission("A", 0.0, &["Fever with chills", "Cough after exposure"], &[pna, htn]),
                admission("A", 1.0, &["Dyspnea on exertion"], &[chf]),
            ],
        },
        Trajectory {
            patient_id: "B".into(),
            admissions: vec![
                admission("B", 0.0, &["Nausea and vomiting"], &[htn]),
                admission("B", 1.0, &["Edema of legs", "Fatigue"], &[chf, htn]),
                admission("B", 2.0, &[], &[pna]),
            ],
        },
    ]
}

fn end_to_end_error() -> f64 {
    let cfg = TrainConfig {
        text_dim: 16,
        proj_dim: 4,
        pool_hidden: 5,
        embed_dim: 3,
        edge_init_scale: 2.0,
        seed: 11,
        ..TrainConfig::default()
    };
    let cohort = micro_cohort();
    let vocab = LabelVocab::from_trajectories(&cohort);
    let trajs = prepare_trajectories(&cohort, &HashingEncoder::new(cfg.text_dim).unwrap(), &vocab).unwrap();
    let params = ModelParams::init(&cfg, vocab.len(), &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
    let tensors: Vec<Matrix> = params.tensors().into_iter().cloned().collect();
    gradient_check(
        |tape, v| {
            let vars = ModelVars::from_slice(v, cfg.dropout)?;
            let mut totals = Vec::new();
            for (p, t) in trajs.iter().enumerate() {
                let mut rng = trajectory_rng(cfg.seed, 0, p);
                totals.push(trajectory_loss(tape, &vars, t, &cfg, 0.7, Some(&mut rng))?.total);
            }
            let s = tape.stack_rows(&totals)?;
            Ok(tape.sum(s))
        },
        &tensors,
    )
    .unwrap()
}

fn gradient_suite() -> Outcome {
    let prims = primitive_errors();
    let (worst_name, worst) = prims
        .iter()
        .fold(("", 0.0), |acc, &(n, e)| if e > acc.1 { (n, e) } else { acc });
    let e2e = end_to_end_error();
    outcome(
        worst < 1e-6 && e2e < 1e-4,
        format!(
            "{} primitives, worst {worst_name} {worst:.2e}; end-to-end {e2e:.2e}",
            prims.len()
        ),
    )
}

fn focal_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (r, c) = (rng.random_range(1..6), rng.random_range(1..8));
        let p = Matrix::from_fn(r, c, |_, _| rng.random_range(0.01..0.99));
        let y = Matrix::from_fn(r, c, |_, _| if rng.random::<bool>() { 1.0 } else { 0.0 });
        let bce: f64 = p
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
            .sum();
        let mut t = Tape::new();
        let pv = t.constant(p);
        let fl = t.focal_loss(pv, &y, 0.5, 0.0).unwrap();
        worst = worst.max((t.scalar(fl) - 0.5 * bce).abs());
    }
    outcome(worst <= 1e-10, format!("100 matrices, max gap {worst:.2e}"))
}

fn directionality() -> Outcome {
    let (_, cohort) = synthetic(&GeneratorConfig {
        seed: Some(7),
        n_patients: 60,
        ..GeneratorConfig::default()
    });
    let cfg = TrainConfig {
        text_dim: 128,
        proj_dim: 16,
        pool_hidden: 16,
        embed_dim: 16,
        max_epochs: 2,
        patience: 2,
        ..desk_config(7, Variant::Full)
    };
    let t = fit(&cohort, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut graphs, mut nonzero, mut worst_row) = (0usize, 0usize, 0.0f64);
    'outer: for traj in &t.data.trajectories {
        let mut tape = Tape::new();
        let vars = t.state.best.register(&mut tape, false);
        let fwd = forward_trajectory(
            &mut tape,
            &traj.admissions,
            &vars.projection,
            &vars.graph,
            1.0,
            Variant::Full,
            Some(&mut rng),
        )
        .unwrap();
        for (slice, sample) in fwd.slices.iter().zip(fwd.samples(&tape)) {
            let Some(g) = sample else { continue };
            let i = slice.n_props;
            for r in i..g.a.rows() {
                nonzero += (0..i).filter(|&c| g.a.get(r, c) != 0.0).count();
            }
            let blocks = [(&g.s_pp, 2), (&g.s_cc, 2), (&g.s_pc, 1)];
            for (m, min_cols) in blocks.into_iter().chain(g.s_inter.as_ref().map(|m| (m, 1))) {
                if m.cols() < min_cols {
                    continue;
                }
                for r in 0..m.rows() {
                    worst_row = worst_row.max((m.row(r).iter().sum::<f64>() - 1.0).abs());
                }
            }
            graphs += 1;
            if graphs == 50 {
                break 'outer;
            }
        }
    }
    outcome(
        graphs == 50 && nonzero == 0 && worst_row <= 1e-9,
        format!("{graphs} graphs, {nonzero} code->proposition entries, max row gap {worst_row:.1e}"),
    )
}

fn structure_recovery(models: &mut Vec<Trained>) -> Outcome {
    let mut ratios = Vec::new();
    for seed in 0..3 {
        let (gen, cohort) = synthetic(&GeneratorConfig {
            seed: Some(seed),
            n_patients: 500,
            ..GeneratorConfig::default()
        });
        let t = fit(&cohort, &desk_config(seed, Variant::Full));
        let s = &t.state;
        let mut graphs = Vec::new();
        for &i in &t.data.split.test {
            let traj = &t.data.trajectories[i];
            let edges = export_trajectory(&s.best, &traj.admissions, s.best_temperature, Variant::Full, 0.5).unwrap();
            graphs.push(PatientGraph {
                patient_id: traj.patient_id.clone(),
                edges,
            });
        }
        let ids: Vec<String> = graphs.iter().map(|g| g.patient_id.clone()).collect();
        let score = structure_recovery_score(&graphs, &gen.truth, 0.5);
        let base = random_baseline_recall(&gen.truth, &ids);
        ratios.push(score.recall / base);
        models.push(t);
    }
    let text: Vec<String> = ratios.iter().map(|r| format!("{r:.2}x")).collect();
    outcome(
        ratios.iter().all(|&r| r >= 2.0),
        format!("recall over random baseline {}", text.join(", ")),
    )
}

fn ablation() -> Outcome {
    let mut strict = 0;
    let mut rows = Vec::new();
    for seed in 0..3 {
        let (_, cohort) = synthetic(&GeneratorConfig {
            seed: Some(seed),
            n_patients: 1000,
            n_codes: 150,
            base_rate_max: 0.1,
            ..GeneratorConfig::default()
        });
        let r: Vec<f64> = [Variant::Full, Variant::NoPropositions, Variant::NoGraph]
            .into_iter()
            .map(|v| test_recall(&fit(&cohort, &desk_config(seed, v)), None))
            .collect();
        strict += usize::from(r[0] > r[1] && r[1] > r[2]);
        rows.push(format!("[{:.3} {:.3} {:.3}]", r[0], r[1], r[2]));
    }
    outcome(
        strict >= 2,
        format!("R@20 full/no-prop/no-graph {}; strict in {strict}/3", rows.join(" ")),
    )
}

fn prop_cap_sweep(models: &[Trained]) -> Outcome {
    let caps = [0usize, 10, 20, 30];
    let medians: Vec<f64> = caps
        .iter()
        .map(|&cap| {
            let mut r: Vec<f64> = models.iter().map(|t| test_recall(t, Some(cap))).collect();
            r.sort_by(f64::total_cmp);
            r[r.len() / 2]
        })
        .collect();
    let text: Vec<String> = caps.iter().zip(&medians).map(|(c, m)| format!("{c}: {m:.4}")).collect();
    outcome(
        models.len() == 3 && medians.windows(2).all(|w| w[1] >= w[0]),
        format!("median R@20 {}", text.join(", ")),
    )
}

fn thcm(args: &[&str]) -> bool {
    let out = Command::new(env!("CARGO_BIN_EXE_thcm")).args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("thcm {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.success()
}

fn determinism(metrics: &mut Option<serde_json::Value>) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("gen.toml"),
        "output_dir = \"data\"\n[generator]\nseed = 5\nn_patients = 150\n",
    )
    .unwrap();
    fs::write(
        d.join("run.toml"),
        "[paths]\ncohort = \"data/cohort.jsonl\"\nicd_map = \"data/icd_map.csv\"\n\
         [train]\nseed = 2\nmax_epochs = 4\npatience = 4\nproj_dim = 16\npool_hidden = 16\nembed_dim = 16\n",
    )
    .unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let run = s(&d.join("run.toml"));
    let (a, b) = (d.join("a"), d.join("b"));
    let ran = thcm(&["generate", "--config", &s(&d.join("gen.toml"))])
        && thcm(&["train", "--config", &run, "--out", &s(&a)])
        && thcm(&["train", "--config", &run, "--out", &s(&b)]);
    if !ran {
        return outcome(false, "a command failed");
    }
    let same = |f: &str| fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap();
    let (ckpt, hist) = (same("checkpoint.bin"), same("history.jsonl"));
    if thcm(&["evaluate", "--config", &run, "--out", &s(&a)]) {
        *metrics = serde_json::from_str(&fs::read_to_string(a.join("metrics.json")).unwrap()).ok();
    }
    outcome(
        ckpt && hist,
        format!("checkpoint identical: {ckpt}, history identical: {hist}"),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, start: Instant, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("{tag} {name}: {} ({:.1}s)", o.detail, start.elapsed().as_secs_f64());
    };

    let t = Instant::now();
    report("dag penalty oracle", t, dag_oracle());
    let t = Instant::now();
    report("focal identity", t, focal_identity());
    let t = Instant::now();
    report("gradient suite", t, gradient_suite());
    let t = Instant::now();
    report("structural directionality", t, directionality());
    let t = Instant::now();
    let mut cli_metrics = None;
    report("determinism", t, determinism(&mut cli_metrics));
    let t = Instant::now();
    let mut ie_errors = Vec::new();
    report("conformal coverage", t, coverage(&mut ie_errors));
    let t = Instant::now();
    report("ie identity", t, ie_identity(&ie_errors, cli_metrics.as_ref()));
    let t = Instant::now();
    let mut models = Vec::new();
    report("structure recovery", t, structure_recovery(&mut models));
    let t = Instant::now();
    report("proposition cap sweep", t, prop_cap_sweep(&models));
    let t = Instant::now();
    report("ablation ordering", t, ablation());

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
