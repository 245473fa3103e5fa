use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AdError, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Denominator floor for the relative error, so coordinates with
    /// vanishing gradients are compared absolutely.
    pub floor: f64,
    /// Check only this many randomly chosen coordinates.
    pub sample: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
            sample: None,
            seed: 0,
        }
    }
}

impl GradCheckConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckFailure {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst_rel_err: f64,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares the tape gradient of a scalar function against central
/// differences, coordinate by coordinate.
///
/// `f` is re-run on a fresh tape for every evaluation. Errors from `f`
/// propagate; mismatches are reported, not returned as errors.
pub fn grad_check<F>(f: F, x: &Tensor, cfg: &GradCheckConfig) -> Result<GradCheckReport, AdError>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>, AdError>,
{
    let tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let root = f(&tape, leaf)?;
    tape.backward(root)?;
    let analytic = tape.grad_or_zeros(leaf);

    let eval = |probe: Tensor| -> Result<f64, AdError> {
        let tape = Tape::new();
        let v = tape.leaf(probe);
        Ok(f(&tape, v)?.item())
    };

    let coords: Vec<usize> = match cfg.sample {
        Some(k) if k < x.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut idx = sample(&mut rng, x.len(), k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..x.len()).collect(),
    };

    let mut report = GradCheckReport {
        checked: coords.len(),
        worst_rel_err: 0.0,
        failures: Vec::new(),
    };
    for i in coords {
        let mut plus = x.clone();
        plus.data_mut()[i] += cfg.step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= cfg.step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * cfg.step);
        let a = analytic.data()[i];
        let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
        report.worst_rel_err = report.worst_rel_err.max(rel_err);
        if !(rel_err <= cfg.tol) {
            report.failures.push(GradCheckFailure {
                index: i,
                analytic: a,
                numeric,
                rel_err,
            });
        }
    }
    Ok(report)
}
