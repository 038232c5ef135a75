//! Robust tensor power method with deflation for symmetric, (nearly)
//! orthogonally decomposable `r×r×r` tensors.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::rng;
use crate::tensor::CoreTensor;

/// Default bound on `|⟨v_p, v_q⟩|` for an accepted decomposition.
pub const ORTHOGONALITY_TOL: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerConfig {
    /// Random starts per extracted component.
    pub restarts: usize,
    /// Power updates per start.
    pub iters: usize,
    /// Extra updates applied to the winning start.
    pub polish_iters: usize,
    pub orthogonality_tol: f64,
}

impl PowerConfig {
    /// `20 + ⌈10 ln r⌉` restarts, 30 iterations, 30 polishing iterations.
    pub fn for_rank(r: usize) -> Self {
        let restarts = 20 + (10.0 * (r.max(1) as f64).ln()).ceil() as usize;
        Self { restarts, iters: 30, polish_iters: 30, orthogonality_tol: ORTHOGONALITY_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEigenDecomposition {
    /// Positive eigenvalues, descending.
    pub lambdas: Vec<f64>,
    /// Unit eigenvectors as columns, in the order of `lambdas`.
    #[serde(with = "crate::serde_matrix")]
    pub vectors: DMatrix<f64>,
    /// `‖T − Σ λ v⊗v⊗v‖_F` against the input tensor.
    pub residual_norm: f64,
}

impl TensorEigenDecomposition {
    pub fn reconstruct(&self) -> CoreTensor {
        CoreTensor::from_rank_one_sum(&self.lambdas, &self.vectors)
    }

    pub fn max_coherence(&self) -> f64 {
        let g = self.vectors.transpose() * &self.vectors;
        let mut worst: f64 = 0.0;
        for p in 0..g.nrows() {
            for q in 0..p {
                worst = worst.max(g[(p, q)].abs());
            }
        }
        worst
    }
}

/// Positional form of [`decompose`] with default polishing and tolerance.
pub fn tensor_power_decompose(
    t: &CoreTensor,
    r: usize,
    restarts: usize,
    iters: usize,
    seed: u64,
) -> Result<TensorEigenDecomposition> {
    let cfg = PowerConfig { restarts, iters, ..PowerConfig::for_rank(r) };
    decompose(t, r, &cfg, seed)
}

/// Extracts `r` eigenpairs one at a time. Each round runs `restarts`
/// random starts (start `k` of round `j` draws from substream `(j, k)`),
/// keeps the one with the largest `T[v,v,v]` (lowest `k` on ties), polishes
/// it, and deflates a working copy of the tensor.
pub fn decompose(t: &CoreTensor, r: usize, cfg: &PowerConfig, seed: u64) -> Result<TensorEigenDecomposition> {
    let dim = t.dim();
    if r == 0 || r > dim || cfg.restarts == 0 {
        return Err(Error::InvalidInput(format!(
            "cannot extract {r} components from a {dim}-dimensional tensor with {} restarts",
            cfg.restarts
        )));
    }
    let norm = t.frobenius_norm();
    if !t.is_finite() || t.asymmetry() > 1e-8 * norm.max(1.0) {
        return Err(Error::InvalidInput("power method needs a finite symmetric tensor".into()));
    }

    let mut work = t.clone();
    let mut pairs: Vec<(f64, Vec<f64>)> = Vec::with_capacity(r);
    for round in 0..r {
        let candidates: Vec<(f64, Vec<f64>)> = (0..cfg.restarts)
            .into_par_iter()
            .map(|k| {
                let mut g = rng::substream(seed, rng::stream_id(round as u32, k as u32));
                let start: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut g)).collect();
                let v = iterate(&work, normalized(start), cfg.iters);
                oriented(&work, v)
            })
            .collect();
        let mut best = 0;
        for (k, cand) in candidates.iter().enumerate() {
            if cand.0 > candidates[best].0 {
                best = k;
            }
        }
        let v = iterate(&work, candidates[best].1.clone(), cfg.polish_iters);
        let (lambda, v) = oriented(&work, v);
        work.add_rank_one(-lambda, &v);
        pairs.push((lambda, v));
    }

    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let lambdas: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let vectors = DMatrix::from_fn(dim, r, |i, q| pairs[q].1[i]);
    let residual_norm = t.sub(&CoreTensor::from_rank_one_sum(&lambdas, &vectors)).frobenius_norm();
    let out = TensorEigenDecomposition { lambdas, vectors, residual_norm };

    if let Some(bad) = out.lambdas.iter().find(|&&l| !(l > 1e-10)) {
        return Err(Error::DecompositionFailed {
            stage: Stage::PowerMethod,
            detail: format!("eigenvalue {bad:.3e} is not positive"),
        });
    }
    if out.residual_norm > 0.5 * norm {
        return Err(Error::DecompositionFailed {
            stage: Stage::PowerMethod,
            detail: format!("residual {:.3e} exceeds half the tensor norm {norm:.3e}", out.residual_norm),
        });
    }
    let coherence = out.max_coherence();
    if coherence > cfg.orthogonality_tol {
        return Err(Error::DecompositionFailed {
            stage: Stage::PowerMethod,
            detail: format!("eigenvectors overlap by {coherence:.3} > {}", cfg.orthogonality_tol),
        });
    }
    Ok(out)
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// `v ← T[I,v,v] / ‖T[I,v,v]‖`, stopping early if the image vanishes.
fn iterate(t: &CoreTensor, mut v: Vec<f64>, iters: usize) -> Vec<f64> {
    for _ in 0..iters {
        let next = t.contract_two(&v);
        let n = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(n > 0.0) {
            break;
        }
        v = next.into_iter().map(|x| x / n).collect();
    }
    v
}

/// `(λ, v)` with the sign of `v` chosen so that `λ = T[v,v,v] ≥ 0`.
fn oriented(t: &CoreTensor, v: Vec<f64>) -> (f64, Vec<f64>) {
    let lambda = t.eval(&v);
    if lambda < 0.0 {
        (-lambda, v.into_iter().map(|x| -x).collect())
    } else {
        (lambda, v)
    }
}
