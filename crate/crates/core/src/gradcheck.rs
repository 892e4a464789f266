//! Central-difference verification of reverse-mode adjoints.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Tensors with at most this many entries are checked coordinate by coordinate.
pub const EXHAUSTIVE_LIMIT: usize = 10_000;
/// Coordinates sampled from larger tensors.
pub const SAMPLED_COORDS: usize = 256;
const SAMPLE_SEED: u64 = 0x6772_6164;

#[derive(Clone, Debug)]
pub struct GradReport {
    /// Worst relative error per parameter tensor, in input order.
    pub max_rel_err: Vec<f64>,
    pub pass: bool,
    pub h: f64,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_err.iter().fold(0.0, |m, &e| m.max(e))
    }
}

/// `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn coordinates(len: usize, salt: u64) -> Vec<usize> {
    if len <= EXHAUSTIVE_LIMIT {
        (0..len).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED ^ salt);
        let mut idx = sample(&mut rng, len, SAMPLED_COORDS).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Compares supplied analytic gradients of `objective` against central
/// differences.
pub fn grad_check_with<F>(
    objective: F,
    params: &[Tensor],
    analytic: &[Tensor],
    h: f64,
    tol: f64,
) -> Result<GradReport>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::contract("grad_check", format!("step size must be positive, got {h}")));
    }
    if params.len() != analytic.len() {
        return Err(Error::contract(
            "grad_check",
            format!("{} params but {} gradients", params.len(), analytic.len()),
        ));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel_err = Vec::with_capacity(params.len());
    for (p, grad) in analytic.iter().enumerate() {
        if grad.dims() != params[p].dims() {
            return Err(Error::contract(
                "grad_check",
                format!("gradient {p} has dims {:?}, param {:?}", grad.dims(), params[p].dims()),
            ));
        }
        let mut worst: f64 = 0.0;
        for i in coordinates(params[p].len(), p as u64) {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let up = objective(&work)?;
            work[p].data_mut()[i] = orig - h;
            let down = objective(&work)?;
            work[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(grad.data()[i], numeric));
        }
        max_rel_err.push(worst);
    }
    let pass = max_rel_err.iter().all(|&e| e <= tol);
    Ok(GradReport { max_rel_err, pass, h })
}

/// Checks the adjoints from [`Graph::backward`] for a scalar objective built
/// by `builder` from leaves bound to `params`.
pub fn grad_check<F>(builder: F, params: &[Tensor], h: f64, tol: f64) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let out = builder(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let objective = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|t| g.constant(t.clone())).collect();
        let out = builder(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };
    grad_check_with(objective, params, &analytic, h, tol)
}
