use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{EdgeInit, TrainConfig};
use crate::encoding::{ProjectionParams, ProjectionVars};
use crate::error::{Error, Result};
use crate::graph::{EdgeLogitParams, GraphLayerParams, GraphVars};
use crate::tensor::{Matrix, Tape, Var};

/// Sigmoid output layer: `Y = Z · W_o + 1 b_oᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionHead {
    /// `k × L`.
    pub w_o: Matrix,
    /// `1 × L`.
    pub b_o: Matrix,
}

impl PredictionHead {
    pub fn n_labels(&self) -> usize {
        self.w_o.cols()
    }
}

/// Every trainable matrix of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub projection: ProjectionParams,
    pub edges: EdgeLogitParams,
    pub layers: GraphLayerParams,
    pub head: PredictionHead,
}

/// Names of the tensors in [`ModelParams::tensors`] order.
pub const TENSOR_NAMES: [&str; 16] = [
    "proj.w_p",
    "proj.b_p",
    "proj.w_c",
    "proj.b_c",
    "edge.w_pp",
    "edge.w_pc",
    "edge.w_cc",
    "edge.w_inter",
    "layer.w1",
    "layer.w2",
    "pool.w1",
    "pool.b1",
    "pool.w2",
    "pool.b2",
    "head.w_o",
    "head.b_o",
];

fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Matrix {
    let n = Normal::new(0.0, std).expect("finite standard deviation");
    Matrix::from_fn(rows, cols, |_, _| n.sample(rng))
}

impl ModelParams {
    /// Random initialization. The two projections start from the same draw
    /// so that a proposition and a code description sharing words land close
    /// together.
    pub fn init<R: Rng + ?Sized>(config: &TrainConfig, n_labels: usize, rng: &mut R) -> Result<Self> {
        if n_labels == 0 {
            return Err(Error::Config("label vocabulary is empty".into()));
        }
        let (d, dp, h, k) = (config.text_dim, config.proj_dim, config.pool_hidden, config.embed_dim);
        let w_p = gaussian(dp, d, (1.0 / dp as f64).sqrt(), rng);
        let projection = ProjectionParams {
            w_c: w_p.clone(),
            w_p,
            b_p: Matrix::zeros(1, dp),
            b_c: Matrix::zeros(1, dp),
            dropout_rate: config.dropout,
        };
        let edge = |rng: &mut R| match config.edge_init {
            EdgeInit::Identity => Matrix::identity(dp).scale(config.edge_init_scale),
            EdgeInit::Random => gaussian(dp, dp, config.edge_init_scale / dp as f64, rng),
        };
        let edges = EdgeLogitParams {
            w_pp: edge(rng),
            w_pc: edge(rng),
            w_cc: edge(rng),
            w_inter: edge(rng),
        };
        let small = 0.1 / (dp as f64).sqrt();
        let layers = GraphLayerParams {
            w1: gaussian(dp, dp, small, rng),
            w2: gaussian(dp, dp, small, rng),
            pool_w1: gaussian(2 * dp, h, (2.0 / (2 * dp) as f64).sqrt(), rng),
            pool_b1: Matrix::zeros(1, h),
            pool_w2: gaussian(h, k, (1.0 / h as f64).sqrt(), rng),
            pool_b2: Matrix::zeros(1, k),
        };
        let head = PredictionHead {
            w_o: gaussian(k, n_labels, (1.0 / k as f64).sqrt(), rng),
            b_o: Matrix::zeros(1, n_labels),
        };
        Ok(Self {
            projection,
            edges,
            layers,
            head,
        })
    }

    pub fn tensors(&self) -> [&Matrix; 16] {
        let (p, e, l, h) = (&self.projection, &self.edges, &self.layers, &self.head);
        [
            &p.w_p, &p.b_p, &p.w_c, &p.b_c, &e.w_pp, &e.w_pc, &e.w_cc, &e.w_inter, &l.w1, &l.w2, &l.pool_w1,
            &l.pool_b1, &l.pool_w2, &l.pool_b2, &h.w_o, &h.b_o,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 16] {
        let (p, e, l, h) = (&mut self.projection, &mut self.edges, &mut self.layers, &mut self.head);
        [
            &mut p.w_p,
            &mut p.b_p,
            &mut p.w_c,
            &mut p.b_c,
            &mut e.w_pp,
            &mut e.w_pc,
            &mut e.w_cc,
            &mut e.w_inter,
            &mut l.w1,
            &mut l.w2,
            &mut l.pool_w1,
            &mut l.pool_b1,
            &mut l.pool_w2,
            &mut l.pool_b2,
            &mut h.w_o,
            &mut h.b_o,
        ]
    }

    /// Rebuilds parameters from tensors in [`TENSOR_NAMES`] order.
    pub fn from_tensors(tensors: Vec<Matrix>, dropout_rate: f64) -> Result<Self> {
        let arr: [Matrix; 16] = tensors
            .try_into()
            .map_err(|v: Vec<Matrix>| Error::Checkpoint(format!("expected 16 tensors, found {}", v.len())))?;
        let [w_p, b_p, w_c, b_c, w_pp, w_pc, w_cc, w_inter, w1, w2, pool_w1, pool_b1, pool_w2, pool_b2, w_o, b_o] = arr;
        let params = Self {
            projection: ProjectionParams {
                w_p,
                b_p,
                w_c,
                b_c,
                dropout_rate,
            },
            edges: EdgeLogitParams {
                w_pp,
                w_pc,
                w_cc,
                w_inter,
            },
            layers: GraphLayerParams {
                w1,
                w2,
                pool_w1,
                pool_b1,
                pool_w2,
                pool_b2,
            },
            head: PredictionHead { w_o, b_o },
        };
        params.check_shapes()?;
        Ok(params)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let dp = self.projection.proj_dim();
        let d = self.projection.text_dim();
        let h = self.layers.pool_w1.cols();
        let k = self.layers.pool_w2.cols();
        let l = self.head.n_labels();
        let expected = [
            (dp, d),
            (1, dp),
            (dp, d),
            (1, dp),
            (dp, dp),
            (dp, dp),
            (dp, dp),
            (dp, dp),
            (dp, dp),
            (dp, dp),
            (2 * dp, h),
            (1, h),
            (h, k),
            (1, k),
            (k, l),
            (1, l),
        ];
        for ((name, m), want) in TENSOR_NAMES.iter().zip(self.tensors()).zip(expected) {
            if m.shape() != want {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {want:?}",
                    m.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
        let projection = self.projection.register(tape, trainable);
        let graph = GraphVars::register(&self.edges, &self.layers, tape, trainable);
        let mut reg = |m: &Matrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        let w_o = reg(&self.head.w_o);
        let b_o = reg(&self.head.b_o);
        ModelVars {
            projection,
            graph,
            w_o,
            b_o,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ModelVars {
    pub projection: ProjectionVars,
    pub graph: GraphVars,
    pub w_o: Var,
    pub b_o: Var,
}

impl ModelVars {
    /// Handles in [`TENSOR_NAMES`] order.
    pub fn all(&self) -> [Var; 16] {
        let (p, g) = (&self.projection, &self.graph);
        [
            p.w_p, p.b_p, p.w_c, p.b_c, g.w_pp, g.w_pc, g.w_cc, g.w_inter, g.w1, g.w2, g.pool_w1, g.pool_b1, g.pool_w2,
            g.pool_b2, self.w_o, self.b_o,
        ]
    }
}

/// `σ(Z · W_o + b_o)` on the tape.
pub fn predict_probs_on_tape(tape: &mut Tape, z: Var, w_o: Var, b_o: Var) -> Result<Var> {
    let y = tape.matmul(z, w_o)?;
    let y = tape.add_row(y, b_o)?;
    Ok(tape.sigmoid(y))
}

/// `σ(Z · W_o + b_o)`; rows follow the rows of `z`.
pub fn predict_probs(z: &Matrix, head: &PredictionHead) -> Result<Matrix> {
    if head.n_labels() == 0 {
        return Err(Error::Config("label vocabulary is empty".into()));
    }
    let mut tape = Tape::new();
    let (zv, w, b) = (
        tape.constant(z.clone()),
        tape.constant(head.w_o.clone()),
        tape.constant(head.b_o.clone()),
    );
    let p = predict_probs_on_tape(&mut tape, zv, w, b)?;
    Ok(tape.value(p).clone())
}
