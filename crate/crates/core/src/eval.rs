//! Permutation alignment, KL divergence, and clustering accuracy.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::min_cost_assignment;
use crate::error::{Error, Result};
use crate::model::{sample, MixtureModel};
use crate::pipeline::RawEstimate;

/// Largest outcome count `ℓⁿ` that [`kl_exact`] will enumerate.
pub const MAX_ENUMERATED_OUTCOMES: f64 = 1e6;

/// Matching of estimated components to true ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// `permutation[q]` is the 0-based estimated component matched to true component `q`.
    pub permutation: Vec<usize>,
    /// `|ŵ_{P(q)} − w_q|`.
    pub w_errors: Vec<f64>,
    /// `‖π̂_{P(q)} − π_q‖₂`.
    pub pi_errors: Vec<f64>,
    /// Largest entrywise `|Π̂_{·,P(q)} − Π_{·,q}|`.
    pub pi_max_abs: f64,
    pub max_w_error: f64,
    pub max_pi_error: f64,
    pub mean_w_error: f64,
    pub mean_pi_error: f64,
    /// `Σ_q ‖π̂_{P(q)} − π_q‖²`.
    pub total_cost: f64,
}

/// Aligns a fitted model to the truth by minimizing `Σ_q ‖π̂_{P(q)} − π_q‖²`.
pub fn align(truth: &MixtureModel, est: &MixtureModel) -> Result<AlignmentResult> {
    if (truth.n(), truth.ell(), truth.r()) != (est.n(), est.ell(), est.r()) {
        return Err(Error::DimensionMismatch(format!(
            "models have (n, ℓ, r) = {:?} and {:?}",
            (truth.n(), truth.ell(), truth.r()),
            (est.n(), est.ell(), est.r())
        )));
    }
    align_parameters(truth.weights(), truth.pi(), est.weights(), est.pi())
}

/// [`align`] against an unclamped estimate.
pub fn align_raw(truth: &MixtureModel, raw: &RawEstimate) -> Result<AlignmentResult> {
    align_parameters(truth.weights(), truth.pi(), &DVector::from_column_slice(&raw.w), &raw.pi)
}

pub fn align_parameters(
    w: &DVector<f64>,
    pi: &DMatrix<f64>,
    w_hat: &DVector<f64>,
    pi_hat: &DMatrix<f64>,
) -> Result<AlignmentResult> {
    let r = w.len();
    if w_hat.len() != r || pi.shape() != pi_hat.shape() || pi.ncols() != r {
        return Err(Error::DimensionMismatch(format!(
            "cannot align {}×{} with {}×{}",
            pi.nrows(),
            pi.ncols(),
            pi_hat.nrows(),
            pi_hat.ncols()
        )));
    }
    let cost = DMatrix::from_fn(r, r, |q, p| (pi_hat.column(p) - pi.column(q)).norm_squared());
    let permutation = min_cost_assignment(&cost);
    let w_errors: Vec<f64> = (0..r).map(|q| (w_hat[permutation[q]] - w[q]).abs()).collect();
    let pi_errors: Vec<f64> = (0..r).map(|q| cost[(q, permutation[q])].sqrt()).collect();
    let pi_max_abs = (0..r)
        .map(|q| (pi_hat.column(permutation[q]) - pi.column(q)).amax())
        .fold(0.0, f64::max);
    let total_cost = (0..r).map(|q| cost[(q, permutation[q])]).sum();
    Ok(AlignmentResult {
        max_w_error: w_errors.iter().cloned().fold(0.0, f64::max),
        max_pi_error: pi_errors.iter().cloned().fold(0.0, f64::max),
        mean_w_error: w_errors.iter().sum::<f64>() / r as f64,
        mean_pi_error: pi_errors.iter().sum::<f64>() / r as f64,
        permutation,
        w_errors,
        pi_errors,
        pi_max_abs,
        total_cost,
    })
}

fn check_same_space(p: &MixtureModel, q: &MixtureModel) -> Result<()> {
    if (p.n(), p.ell()) != (q.n(), q.ell()) {
        return Err(Error::DimensionMismatch(format!(
            "models live on (n, ℓ) = {:?} and {:?}",
            (p.n(), p.ell()),
            (q.n(), q.ell())
        )));
    }
    Ok(())
}

/// `ℓⁿ` as a float, so the gate check cannot overflow.
pub fn outcome_count(model: &MixtureModel) -> f64 {
    (model.ell() as f64).powi(model.n() as i32)
}

/// Exact `D_KL(p ‖ q)` in nats by enumerating all `ℓⁿ` outcomes.
/// Infinite when `q` assigns zero probability to an outcome `p` can emit.
pub fn kl_exact(p: &MixtureModel, q: &MixtureModel) -> Result<f64> {
    check_same_space(p, q)?;
    let outcomes = outcome_count(p);
    if outcomes > MAX_ENUMERATED_OUTCOMES {
        return Err(Error::EnumerationGate { outcomes, limit: MAX_ENUMERATED_OUTCOMES });
    }
    let (n, ell) = (p.n(), p.ell());
    let terms: Vec<f64> = (0..outcomes as usize)
        .into_par_iter()
        .map(|mut code| {
            let labels: Vec<u32> = (0..n)
                .map(|_| {
                    let y = (code % ell) as u32 + 1;
                    code /= ell;
                    y
                })
                .collect();
            let lp = p.log_prob(&labels);
            if lp == f64::NEG_INFINITY {
                return 0.0;
            }
            lp.exp() * (lp - q.log_prob(&labels))
        })
        .collect();
    Ok(terms.iter().sum::<f64>().max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub draws: usize,
}

/// Monte Carlo `D_KL(p ‖ q)`: mean of `log p(x) − log q(x)` over `draws`
/// samples of `p`, with its standard error.
pub fn kl_mc(p: &MixtureModel, q: &MixtureModel, draws: usize, seed: u64) -> Result<KlEstimate> {
    check_same_space(p, q)?;
    if draws < 2 {
        return Err(Error::InvalidInput("Monte Carlo KL needs at least 2 draws".into()));
    }
    let samples = sample(p, draws, seed);
    let terms: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|t| {
            let row = samples.row(t);
            p.log_prob(row) - q.log_prob(row)
        })
        .collect();
    let mean = terms.iter().sum::<f64>() / draws as f64;
    let var = terms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    Ok(KlEstimate { estimate: mean, std_error: (var / draws as f64).sqrt(), draws })
}

/// Best agreement fraction between two labelings over all relabelings of
/// the first (1-based labels).
pub fn clustering_accuracy(labels: &[u32], truth: &[u32]) -> Result<f64> {
    if labels.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels vs {} true types",
            labels.len(),
            truth.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("empty labeling".into()));
    }
    if labels.iter().chain(truth).any(|&l| l == 0) {
        return Err(Error::InvalidInput("labels are 1-based".into()));
    }
    let k = labels.iter().chain(truth).cloned().max().unwrap() as usize;
    let mut confusion = DMatrix::<f64>::zeros(k, k);
    for (&a, &b) in labels.iter().zip(truth) {
        confusion[(a as usize - 1, b as usize - 1)] += 1.0;
    }
    let perm = min_cost_assignment(&(-&confusion));
    let agree: f64 = perm.iter().enumerate().map(|(i, &j)| confusion[(i, j)]).sum();
    Ok(agree / labels.len() as f64)
}
