//! Central finite-difference checking of [`Graph::backward`].
//!
//! The numeric side only ever evaluates forward passes, so it stays
//! independent of the analytic gradient rules it is checking.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Half-width of the central difference.
    pub eps: f64,
    /// Gradients smaller than this are compared in absolute terms.
    pub floor: f64,
    /// Check at most this many coordinates per input (all when `None`).
    pub samples_per_input: Option<usize>,
    pub seed: u64,
}

impl GradCheck {
    pub fn new(eps: f64) -> Self {
        GradCheck {
            eps,
            floor: 1e-2,
            samples_per_input: None,
            seed: 0,
        }
    }

    pub fn sampled(mut self, n: usize, seed: u64) -> Self {
        self.samples_per_input = Some(n);
        self.seed = seed;
        self
    }

    pub fn floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates whose central difference straddles a kink.
    pub skipped: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// A scalar-valued computation that can be recorded at any precision.
pub trait GraphFn {
    fn build<R: Real>(&self, g: &mut Graph<R>, inputs: &[Var]) -> Result<Var>;
}

fn evaluate<F: GraphFn>(inputs: &[Tensor<f64>], f: &F) -> Result<(f64, u64)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = f.build(&mut g, &vars)?;
    Ok((g.value(root).item()?, g.branch_signature()))
}

/// Compares the analytic gradient of `f` (recorded at precision `T`) with
/// central differences of `f` evaluated in double precision on the same
/// inputs. Evaluating the differences in `f64` keeps the rounding of a
/// single-precision loss value out of the oracle.
pub fn check<T: Real, F: GraphFn>(
    inputs: &[Tensor<T>],
    cfg: &GradCheck,
    f: &F,
) -> Result<GradCheckReport> {
    let mut g = Graph::<T>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = f.build(&mut g, &vars)?;
    let grads = g.backward(root)?;

    let reference: Vec<Tensor<f64>> = inputs.iter().map(Tensor::cast).collect();
    let (_, base_signature) = evaluate(&reference, f)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport::default();
    let mut work = reference.clone();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        let n = inputs[i].len();
        let coords: Vec<usize> = match cfg.samples_per_input {
            Some(k) if k < n => {
                let mut c = index::sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for j in coords {
            let x = reference[i].data()[j];
            work[i].data_mut()[j] = x + cfg.eps;
            let (fp, sp) = evaluate(&work, f)?;
            work[i].data_mut()[j] = x - cfg.eps;
            let (fm, sm) = evaluate(&work, f)?;
            work[i].data_mut()[j] = x;
            if sp != base_signature || sm != base_signature {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * cfg.eps);
            let err = relative_error(analytic.data()[j].as_f64(), numeric, cfg.floor);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}
