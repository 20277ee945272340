use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Check only every `stride`-th entry of each parameter (1 = all).
    pub stride: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, stride: 1 }
    }
}

/// Compares tape gradients of a scalar computation against central finite
/// differences and returns `max |analytic − numeric| / max(1, |numeric|)`.
///
/// `f` receives a fresh tape with `params` registered as trainable leaves, in
/// order, and must return a `1×1` node.
pub fn gradient_check<F>(f: F, params: &[Matrix]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    gradient_check_with(f, params, GradCheckOptions::default())
}

pub fn gradient_check_with<F>(f: F, params: &[Matrix], opts: GradCheckOptions) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.scalar(out);
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("non-finite objective {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut work: Vec<Matrix> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for k in (0..params[pi].data().len()).step_by(opts.stride.max(1)) {
            let orig = params[pi].data()[k];
            work[pi].data_mut()[k] = orig + opts.step;
            let up = eval(&work)?;
            work[pi].data_mut()[k] = orig - opts.step;
            let down = eval(&work)?;
            work[pi].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let err = (analytic.data()[k] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
