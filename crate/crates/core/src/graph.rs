//! Stage 3: differentiable causal graph over proposition and code nodes.
//!
//! Each admission gets a block adjacency `[[S_PP, S_PC], [0, S_CC]]` sampled
//! row-wise with Gumbel-Softmax from bilinear edge scores. Consecutive
//! admissions are linked by a rectangular `S_inter` whose rows are the nodes
//! of the later admission and whose columns are the nodes of the earlier one.

use std::borrow::Cow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{assemble_on_tape, EncodedAdmission, ProjectionVars};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tape, Var};

/// Logit written on the PP and CC diagonals so no node selects itself.
pub const DIAGONAL_MASK: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeType {
    #[serde(rename = "PP")]
    PropProp,
    #[serde(rename = "PC")]
    PropCode,
    #[serde(rename = "CC")]
    CodeCode,
    #[serde(rename = "inter")]
    Inter,
}

impl EdgeType {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::PropProp => "PP",
            EdgeType::PropCode => "PC",
            EdgeType::CodeCode => "CC",
            EdgeType::Inter => "inter",
        }
    }
}

/// Model variants used for ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Code nodes only.
    NoPropositions,
    /// No sampled edges: pooled features go straight to the head.
    NoGraph,
}

/// Bilinear edge-score forms, one per edge type (`d′ × d′` each).
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeLogitParams {
    pub w_pp: Matrix,
    pub w_pc: Matrix,
    pub w_cc: Matrix,
    pub w_inter: Matrix,
}

/// Message-passing weights and the pooling MLP
/// (`2d′ → hidden → k`, ReLU between).
#[derive(Clone, Debug, PartialEq)]
pub struct GraphLayerParams {
    pub w1: Matrix,
    pub w2: Matrix,
    pub pool_w1: Matrix,
    pub pool_b1: Matrix,
    pub pool_w2: Matrix,
    pub pool_b2: Matrix,
}

impl GraphLayerParams {
    pub fn embed_dim(&self) -> usize {
        self.pool_w2.cols()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GraphVars {
    pub w_pp: Var,
    pub w_pc: Var,
    pub w_cc: Var,
    pub w_inter: Var,
    pub w1: Var,
    pub w2: Var,
    pub pool_w1: Var,
    pub pool_b1: Var,
    pub pool_w2: Var,
    pub pool_b2: Var,
}

impl GraphVars {
    pub fn register(edges: &EdgeLogitParams, layers: &GraphLayerParams, tape: &mut Tape, trainable: bool) -> Self {
        let mut reg = |m: &Matrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        Self {
            w_pp: reg(&edges.w_pp),
            w_pc: reg(&edges.w_pc),
            w_cc: reg(&edges.w_cc),
            w_inter: reg(&edges.w_inter),
            w1: reg(&layers.w1),
            w2: reg(&layers.w2),
            pool_w1: reg(&layers.pool_w1),
            pool_b1: reg(&layers.pool_b1),
            pool_w2: reg(&layers.pool_w2),
            pool_b2: reg(&layers.pool_b2),
        }
    }
}

/// `X_src · W · X_dstᵀ`, with the diagonal masked when `mask_diagonal`.
pub fn edge_logits(tape: &mut Tape, x_src: Var, x_dst: Var, w: Var, mask_diagonal: bool) -> Result<Var> {
    let left = tape.matmul(x_src, w)?;
    let right = tape.transpose(x_dst);
    let e = tape.matmul(left, right)?;
    if mask_diagonal {
        tape.mask_diagonal(e, DIAGONAL_MASK)
    } else {
        Ok(e)
    }
}

/// Value-level [`edge_logits`]. PP and CC forms get a masked diagonal; for
/// `Inter`, `x_src` are the target (later) nodes and `x_dst` the sources.
pub fn edge_logits_value(x_src: &Matrix, x_dst: &Matrix, w: &Matrix, edge_type: EdgeType) -> Result<Matrix> {
    let mut tape = Tape::new();
    let (s, d, w) = (
        tape.constant(x_src.clone()),
        tape.constant(x_dst.clone()),
        tape.constant(w.clone()),
    );
    let mask = matches!(edge_type, EdgeType::PropProp | EdgeType::CodeCode);
    let e = edge_logits(&mut tape, s, d, w, mask)?;
    Ok(tape.value(e).clone())
}

/// Standard Gumbel noise `−ln(−ln U)`.
pub fn gumbel_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        -(-u.ln()).ln()
    })
}

/// Row-wise `softmax((E + G) / τ)`. Without `rng` the noise is zero.
/// Entries masked with [`DIAGONAL_MASK`] get weight exactly zero.
pub fn gumbel_softmax<R: Rng + ?Sized>(
    tape: &mut Tape,
    logits: Var,
    temperature: f64,
    rng: Option<&mut R>,
) -> Result<Var> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Parameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let (r, c) = tape.shape(logits);
    let noisy = match rng {
        Some(rng) if r * c > 0 => {
            let g = gumbel_noise(r, c, rng);
            tape.add_const(logits, &g)?
        }
        _ => logits,
    };
    let scaled = tape.scale(noisy, 1.0 / temperature);
    Ok(tape.softmax_rows_masked(scaled))
}

pub fn gumbel_softmax_value<R: Rng + ?Sized>(e: &Matrix, temperature: f64, rng: Option<&mut R>) -> Result<Matrix> {
    let mut tape = Tape::new();
    let v = tape.constant(e.clone());
    let s = gumbel_softmax(&mut tape, v, temperature, rng)?;
    Ok(tape.value(s).clone())
}

/// `[[S_PP, S_PC], [0, S_CC]]`.
pub fn build_intra_adjacency(s_pp: &Matrix, s_pc: &Matrix, s_cc: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let (a, b, c) = (
        tape.constant(s_pp.clone()),
        tape.constant(s_pc.clone()),
        tape.constant(s_cc.clone()),
    );
    let out = tape.upper_blocks(a, b, c)?;
    Ok(tape.value(out).clone())
}

/// `tr(exp(A ∘ A)) − n`.
pub fn acyclicity_penalty(a: &Matrix) -> Result<f64> {
    Ok(crate::tensor::trace_expm_hadamard(a)?.0)
}

/// `ReLU(A · X · W1) + X`.
pub fn gc_intra(tape: &mut Tape, a: Var, x: Var, w1: Var) -> Result<Var> {
    let ax = tape.matmul(a, x)?;
    let axw = tape.matmul(ax, w1)?;
    let r = tape.relu(axw);
    tape.add(r, x)
}

/// `S_inter · X̃_prev · W2 + X_next`.
pub fn gc_inter(tape: &mut Tape, s_inter: Var, x_tilde_prev: Var, x_next: Var, w2: Var) -> Result<Var> {
    let sx = tape.matmul(s_inter, x_tilde_prev)?;
    let sxw = tape.matmul(sx, w2)?;
    tape.add(sxw, x_next)
}

/// `MLP([mean of proposition rows ; mean of code rows])` as a `1 × k` row.
/// An empty partition contributes zeros.
pub fn pool_slice(tape: &mut Tape, x_tilde: Var, n_props: usize, vars: &GraphVars) -> Result<Var> {
    let n = tape.shape(x_tilde).0;
    let props = tape.slice_rows(x_tilde, 0, n_props)?;
    let codes = tape.slice_rows(x_tilde, n_props, n)?;
    let mp = tape.row_mean(props);
    let mc = tape.row_mean(codes);
    let cat = tape.concat_cols(&[mp, mc])?;
    let h = tape.matmul(cat, vars.pool_w1)?;
    let h = tape.add_row(h, vars.pool_b1)?;
    let h = tape.relu(h);
    let z = tape.matmul(h, vars.pool_w2)?;
    tape.add_row(z, vars.pool_b2)
}

/// Sampled adjacency of one admission.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalGraphSample {
    pub s_pp: Matrix,
    pub s_pc: Matrix,
    pub s_cc: Matrix,
    pub a: Matrix,
    /// Incoming edges from the previous retained admission
    /// (`ND_t × ND_prev`); absent for the first.
    pub s_inter: Option<Matrix>,
}

#[derive(Clone, Copy, Debug)]
pub struct SliceGraphVars {
    pub s_pp: Var,
    pub s_pc: Var,
    pub s_cc: Var,
    pub a: Var,
    pub s_inter: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct SliceRecord {
    /// Index of the admission in the input list.
    pub admission: usize,
    pub n_props: usize,
    pub n_codes: usize,
    pub graph: Option<SliceGraphVars>,
}

#[derive(Clone, Debug)]
pub struct TrajectoryForward {
    /// `T′ × k`, one row per retained admission.
    pub z: Var,
    /// `Σ_t h(A_t)` as a `1×1` node.
    pub acyclicity: Var,
    /// Sum of absolute values over all sampled blocks, `S_inter` included.
    pub sparsity: Var,
    pub slices: Vec<SliceRecord>,
}

impl TrajectoryForward {
    pub fn samples(&self, tape: &Tape) -> Vec<Option<CausalGraphSample>> {
        self.slices
            .iter()
            .map(|s| {
                s.graph.map(|g| CausalGraphSample {
                    s_pp: tape.value(g.s_pp).clone(),
                    s_pc: tape.value(g.s_pc).clone(),
                    s_cc: tape.value(g.s_cc).clone(),
                    a: tape.value(g.a).clone(),
                    s_inter: g.s_inter.map(|v| tape.value(v).clone()),
                })
            })
            .collect()
    }
}

/// Runs Stage 3 over one trajectory on `tape`.
///
/// With `rng`, dropout and Gumbel noise are drawn from it in a fixed order
/// (per admission: dropout, inter edges, PP, PC, CC). Admissions without any
/// node are skipped with a warning.
pub fn forward_trajectory<R: Rng + ?Sized>(
    tape: &mut Tape,
    admissions: &[EncodedAdmission],
    proj: &ProjectionVars,
    vars: &GraphVars,
    temperature: f64,
    variant: Variant,
    mut rng: Option<&mut R>,
) -> Result<TrajectoryForward> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Parameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut z_rows = Vec::with_capacity(admissions.len());
    let mut h_terms = Vec::new();
    let mut l1_terms = Vec::new();
    let mut slices = Vec::with_capacity(admissions.len());
    let mut prev: Option<Var> = None;

    for (t, adm) in admissions.iter().enumerate() {
        let adm = match variant {
            Variant::NoPropositions => Cow::Owned(adm.with_proposition_cap(0)),
            _ => Cow::Borrowed(adm),
        };
        let sv = match assemble_on_tape(tape, &adm, proj, t, rng.as_deref_mut()) {
            Ok(sv) => sv,
            Err(Error::DegenerateSlice(i)) => {
                log::warn!("skipping admission {i}: no propositions and no codes");
                continue;
            }
            Err(e) => return Err(e),
        };
        let (i, n) = (sv.n_props, sv.n_props + sv.n_codes);

        if variant == Variant::NoGraph {
            z_rows.push(pool_slice(tape, sv.x, i, vars)?);
            slices.push(SliceRecord {
                admission: t,
                n_props: sv.n_props,
                n_codes: sv.n_codes,
                graph: None,
            });
            continue;
        }

        let mut x = sv.x;
        let mut s_inter = None;
        if let Some(p) = prev {
            let e = edge_logits(tape, x, p, vars.w_inter, false)?;
            let s = gumbel_softmax(tape, e, temperature, rng.as_deref_mut())?;
            l1_terms.push(tape.abs_sum(s));
            x = gc_inter(tape, s, p, x, vars.w2)?;
            s_inter = Some(s);
        }

        let xp = tape.slice_rows(x, 0, i)?;
        let xc = tape.slice_rows(x, i, n)?;
        let e_pp = edge_logits(tape, xp, xp, vars.w_pp, true)?;
        let s_pp = gumbel_softmax(tape, e_pp, temperature, rng.as_deref_mut())?;
        let e_pc = edge_logits(tape, xp, xc, vars.w_pc, false)?;
        let s_pc = gumbel_softmax(tape, e_pc, temperature, rng.as_deref_mut())?;
        let e_cc = edge_logits(tape, xc, xc, vars.w_cc, true)?;
        let s_cc = gumbel_softmax(tape, e_cc, temperature, rng.as_deref_mut())?;
        let a = tape.upper_blocks(s_pp, s_pc, s_cc)?;

        h_terms.push(tape.trace_expm_hadamard(a)?);
        for s in [s_pp, s_pc, s_cc] {
            l1_terms.push(tape.abs_sum(s));
        }

        let x_tilde = gc_intra(tape, a, x, vars.w1)?;
        z_rows.push(pool_slice(tape, x_tilde, i, vars)?);
        prev = Some(x_tilde);
        slices.push(SliceRecord {
            admission: t,
            n_props: sv.n_props,
            n_codes: sv.n_codes,
            graph: Some(SliceGraphVars {
                s_pp,
                s_pc,
                s_cc,
                a,
                s_inter,
            }),
        });
    }

    if z_rows.is_empty() {
        return Err(Error::Trajectory(
            "every admission in the trajectory is degenerate".into(),
        ));
    }
    let z = tape.stack_rows(&z_rows)?;
    let acyclicity = sum_scalars(tape, &h_terms)?;
    let sparsity = sum_scalars(tape, &l1_terms)?;
    Ok(TrajectoryForward {
        z,
        acyclicity,
        sparsity,
        slices,
    })
}

fn sum_scalars(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    if terms.is_empty() {
        return Ok(tape.constant(Matrix::zeros(1, 1)));
    }
    let stacked = tape.stack_rows(terms)?;
    Ok(tape.sum(stacked))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportedEdge {
    pub slice: usize,
    pub edge_type: EdgeType,
    pub src_label: String,
    pub dst_label: String,
    pub weight: f64,
}

/// Edges of `sample` with weight ≥ `threshold`.
///
/// `labels` name this admission's nodes (propositions first) and
/// `prev_labels` the previous admission's nodes, used for inter edges. Inter
/// edges are reported source → target, i.e. earlier node → later node.
pub fn export_graph(
    sample: &CausalGraphSample,
    slice: usize,
    labels: &[String],
    prev_labels: Option<&[String]>,
    threshold: f64,
) -> Result<Vec<ExportedEdge>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Parameter(format!(
            "threshold must lie in [0, 1], got {threshold}"
        )));
    }
    let i = sample.s_pp.rows();
    let n = sample.a.rows();
    if labels.len() != n {
        return Err(Error::Dimension {
            op: "export_graph",
            left: (n, n),
            right: (labels.len(), 1),
        });
    }
    let mut out = Vec::new();
    let mut push = |edge_type, src: &str, dst: &str, weight: f64| {
        if weight >= threshold {
            out.push(ExportedEdge {
                slice,
                edge_type,
                src_label: src.to_string(),
                dst_label: dst.to_string(),
                weight,
            });
        }
    };
    for r in 0..n {
        for c in 0..n {
            let edge_type = match (r < i, c < i) {
                (true, true) if r != c => EdgeType::PropProp,
                (true, false) => EdgeType::PropCode,
                (false, false) if r != c => EdgeType::CodeCode,
                _ => continue,
            };
            push(edge_type, &labels[r], &labels[c], sample.a.get(r, c));
        }
    }
    if let (Some(s), Some(prev)) = (&sample.s_inter, prev_labels) {
        if s.shape() != (n, prev.len()) {
            return Err(Error::Dimension {
                op: "export_graph",
                left: s.shape(),
                right: (n, prev.len()),
            });
        }
        for (r, dst) in labels.iter().enumerate() {
            for (c, src) in prev.iter().enumerate() {
                push(EdgeType::Inter, src, dst, s.get(r, c));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    type NoRng = ChaCha8Rng;

    fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    fn row_sums(m: &Matrix) -> Vec<f64> {
        (0..m.rows()).map(|i| m.row(i).iter().sum()).collect()
    }

    #[test]
    fn zero_form_gives_zero_logits_off_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = randn(3, 4, &mut rng);
        let e = edge_logits_value(&x, &x, &Matrix::zeros(4, 4), EdgeType::PropProp).unwrap();
        assert_eq!(e.shape(), (3, 3));
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(e.get(r, c), if r == c { DIAGONAL_MASK } else { 0.0 });
            }
        }
    }

    #[test]
    fn empty_partitions_give_empty_blocks() {
        let xp = Matrix::zeros(0, 4);
        let xc = Matrix::filled(2, 4, 1.0);
        let w = Matrix::identity(4);
        assert_eq!(
            edge_logits_value(&xp, &xp, &w, EdgeType::PropProp).unwrap().shape(),
            (0, 0)
        );
        assert_eq!(
            edge_logits_value(&xp, &xc, &w, EdgeType::PropCode).unwrap().shape(),
            (0, 2)
        );
    }

    #[test]
    fn gumbel_softmax_without_noise() {
        let s = gumbel_softmax_value::<NoRng>(&Matrix::from_rows(&[[0.0, 0.0]]), 1.0, None).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = gumbel_softmax_value::<NoRng>(&Matrix::from_rows(&[[2.0, 1.0]]), 0.01, None).unwrap();
        assert!(s.get(0, 0) > 1.0 - 1e-12 && s.get(0, 1) < 1e-12);
        assert!(matches!(
            gumbel_softmax_value::<NoRng>(&Matrix::zeros(1, 2), 0.0, None),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn gumbel_softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for tau in [0.1, 1.0] {
            for _ in 0..20 {
                let e = randn(5, 7, &mut rng);
                let s = gumbel_softmax_value(&e, tau, Some(&mut rng)).unwrap();
                for v in row_sums(&s) {
                    assert!((v - 1.0).abs() < 1e-9);
                }
                assert!(s.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn intra_adjacency_layout() {
        let a =
            build_intra_adjacency(&Matrix::zeros(1, 1), &Matrix::from_rows(&[[0.7]]), &Matrix::zeros(1, 1)).unwrap();
        assert_eq!(a, Matrix::from_rows(&[[0.0, 0.7], [0.0, 0.0]]));

        let cc = Matrix::from_rows(&[[0.0, 0.4], [0.6, 0.0]]);
        let a = build_intra_adjacency(&Matrix::zeros(0, 0), &Matrix::zeros(0, 2), &cc).unwrap();
        assert_eq!(a, cc);

        assert!(build_intra_adjacency(&Matrix::zeros(1, 1), &Matrix::zeros(2, 1), &Matrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn penalty_of_two_cycle() {
        let a = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        assert!((acyclicity_penalty(&a).unwrap() - (2.0 * 1f64.cosh() - 2.0)).abs() < 1e-10);
        assert_eq!(acyclicity_penalty(&Matrix::zeros(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn residual_paths_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xv = randn(4, 3, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(xv.clone());
        let a0 = tape.constant(Matrix::zeros(4, 4));
        let w = tape.constant(randn(3, 3, &mut rng));
        let out = gc_intra(&mut tape, a0, x, w).unwrap();
        assert_eq!(tape.value(out), &xv);

        let a = tape.constant(randn(4, 4, &mut rng));
        let w0 = tape.constant(Matrix::zeros(3, 3));
        let out = gc_intra(&mut tape, a, x, w0).unwrap();
        assert_eq!(tape.value(out), &xv);

        let prev = tape.constant(randn(2, 3, &mut rng));
        let s0 = tape.constant(Matrix::zeros(4, 2));
        let out = gc_inter(&mut tape, s0, prev, x, w).unwrap();
        assert_eq!(tape.value(out), &xv);
    }

    #[test]
    fn one_hot_inter_row_copies_a_message() {
        let mut tape = Tape::new();
        let prev = tape.constant(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
        let next = tape.constant(Matrix::zeros(1, 2));
        let s = tape.constant(Matrix::from_rows(&[[0.0, 1.0]]));
        let w = tape.constant(Matrix::identity(2));
        let out = gc_inter(&mut tape, s, prev, next, w).unwrap();
        assert_eq!(tape.value(out).data(), &[3.0, 4.0]);
    }

    fn layers(d: usize, hidden: usize, k: usize, rng: &mut ChaCha8Rng) -> GraphLayerParams {
        GraphLayerParams {
            w1: randn(d, d, rng),
            w2: randn(d, d, rng),
            pool_w1: randn(2 * d, hidden, rng),
            pool_b1: randn(1, hidden, rng),
            pool_w2: randn(hidden, k, rng),
            pool_b2: randn(1, k, rng),
        }
    }

    fn zero_edges(d: usize) -> EdgeLogitParams {
        EdgeLogitParams {
            w_pp: Matrix::zeros(d, d),
            w_pc: Matrix::zeros(d, d),
            w_cc: Matrix::zeros(d, d),
            w_inter: Matrix::zeros(d, d),
        }
    }

    #[test]
    fn pooling_with_identical_rows_and_empty_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = layers(3, 5, 2, &mut rng);
        let row = [0.5, -1.0, 2.0];
        let mut t1 = Tape::new();
        let vars = GraphVars::register(&zero_edges(3), &l, &mut t1, false);
        let x = t1.constant(Matrix::from_rows(&[row, row, row]));
        let z1 = pool_slice(&mut t1, x, 1, &vars).unwrap();
        assert_eq!(t1.shape(z1), (1, 2));

        // Same as pooling a single proposition row and a single code row.
        let mut t2 = Tape::new();
        let vars2 = GraphVars::register(&zero_edges(3), &l, &mut t2, false);
        let x2 = t2.constant(Matrix::from_rows(&[row, row]));
        let z2 = pool_slice(&mut t2, x2, 1, &vars2).unwrap();
        assert_eq!(t1.value(z1), t2.value(z2));

        // No propositions: the first half of the concatenation is zero.
        let mut t3 = Tape::new();
        let vars3 = GraphVars::register(&zero_edges(3), &l, &mut t3, false);
        let x3 = t3.constant(Matrix::from_rows(&[row]));
        let z3 = pool_slice(&mut t3, x3, 0, &vars3).unwrap();
        let cat = Matrix::from_rows(&[[0.0, 0.0, 0.0, row[0], row[1], row[2]]]);
        let h = cat
            .matmul(&l.pool_w1)
            .unwrap()
            .add(&l.pool_b1)
            .unwrap()
            .map(|v| v.max(0.0));
        let expect = h.matmul(&l.pool_w2).unwrap().add(&l.pool_b2).unwrap();
        assert!(t3.value(z3).sub(&expect).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn export_thresholds_and_tags() {
        let sample = CausalGraphSample {
            s_pp: Matrix::zeros(1, 1),
            s_pc: Matrix::from_rows(&[[0.3, 0.7]]),
            s_cc: Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]),
            a: build_intra_adjacency(
                &Matrix::zeros(1, 1),
                &Matrix::from_rows(&[[0.3, 0.7]]),
                &Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]),
            )
            .unwrap(),
            s_inter: Some(Matrix::from_rows(&[[1.0], [0.2], [0.8]])),
        };
        let labels: Vec<String> = ["fever", "Sepsis", "Pneumonia"].iter().map(|s| s.to_string()).collect();
        let prev = vec!["old code".to_string()];

        let all = export_graph(&sample, 1, &labels, Some(&prev), 0.0).unwrap();
        // 2 PC + 2 CC + 3 inter; no code→proposition and no self edges.
        assert_eq!(all.len(), 7);
        assert!(all
            .iter()
            .all(|e| !(e.edge_type == EdgeType::PropCode && e.src_label != "fever")));

        let ones = export_graph(&sample, 1, &labels, Some(&prev), 1.0).unwrap();
        assert_eq!(ones.len(), 3);
        assert!(ones.iter().all(|e| e.weight == 1.0));

        let half = export_graph(&sample, 1, &labels, Some(&prev), 0.5).unwrap();
        let pc: Vec<_> = half.iter().filter(|e| e.edge_type == EdgeType::PropCode).collect();
        assert_eq!(pc.len(), 1);
        assert_eq!(
            (pc[0].src_label.as_str(), pc[0].dst_label.as_str()),
            ("fever", "Pneumonia")
        );
        let inter: Vec<_> = half.iter().filter(|e| e.edge_type == EdgeType::Inter).collect();
        assert_eq!(inter.len(), 2);
        assert!(inter.iter().all(|e| e.src_label == "old code"));
    }
}
