//! Least-squares recovery of the whitened third-moment core.
//!
//! Only off-block entries of the third moment are observable. For a
//! candidate core `Z`, `ν̂(Z)` lifts it back to `(ℓn)³` with the un-whitening
//! map and masks it; `Â(Z)` whitens the result again. The core estimate
//! solves `Â(Z) = P_Ω₃(S₃)[W, W, W]` in the least-squares sense.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result, Stage};
use crate::linalg;
use crate::tensor::CoreTensor;

/// Largest `r³` for which `Â` is materialized densely.
pub const MAX_DENSE_UNKNOWNS: usize = 30_000;

/// Smallest singular value of `Â` accepted by [`solve_core`].
pub const MIN_SINGULAR_VALUE: f64 = 1e-8;

/// Whitening `U Σ^{-1/2}` and un-whitening `U Σ^{1/2}` maps built from a
/// rank-`r` eigendecomposition of the completed second moment.
#[derive(Debug, Clone)]
pub struct WhiteningOperator {
    pub q_down: DMatrix<f64>,
    pub q_up: DMatrix<f64>,
    block: usize,
}

impl WhiteningOperator {
    pub fn new(u: &DMatrix<f64>, sigma: &DVector<f64>, block: usize) -> Result<Self> {
        if u.ncols() != sigma.len() || block == 0 || !u.nrows().is_multiple_of(block) {
            return Err(Error::DimensionMismatch(format!(
                "{}×{} basis, {} eigenvalues, block {block}",
                u.nrows(),
                u.ncols(),
                sigma.len()
            )));
        }
        if sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::IllConditioned {
                stage: Stage::TensorLs,
                detail: "whitening needs positive eigenvalues".into(),
            });
        }
        let down = DMatrix::from_diagonal(&sigma.map(|s| 1.0 / s.sqrt()));
        let up = DMatrix::from_diagonal(&sigma.map(f64::sqrt));
        Ok(Self { q_down: u * down, q_up: u * up, block })
    }

    pub fn rank(&self) -> usize {
        self.q_down.ncols()
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn blocks(&self) -> usize {
        self.q_down.nrows() / self.block
    }

    /// Per-block cross Gram `K⁽ᵐ⁾ = q_up⁽ᵐ⁾ᵀ q_down⁽ᵐ⁾`.
    pub fn block_grams(&self) -> Vec<DMatrix<f64>> {
        (0..self.blocks())
            .map(|m| {
                let up = self.q_up.rows(m * self.block, self.block);
                let down = self.q_down.rows(m * self.block, self.block);
                up.transpose() * down
            })
            .collect()
    }
}

/// Dense `r³ × r³` matrix of `Z ↦ Â(Z)` acting on row-major vectorized cores.
#[derive(Debug, Clone)]
pub struct LinearOperatorA {
    r: usize,
    matrix: DMatrix<f64>,
}

impl LinearOperatorA {
    pub fn from_matrix(r: usize, matrix: DMatrix<f64>) -> Result<Self> {
        let k = r * r * r;
        if matrix.nrows() != k || matrix.ncols() != k {
            return Err(Error::DimensionMismatch(format!("operator must be {k}×{k}")));
        }
        Ok(Self { r, matrix })
    }

    pub fn identity(r: usize) -> Self {
        let k = r * r * r;
        Self { r, matrix: DMatrix::identity(k, k) }
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, z: &CoreTensor) -> CoreTensor {
        assert_eq!(z.dim(), self.r);
        CoreTensor::from_vector(self.r, &(&self.matrix * z.to_vector()))
    }

    /// Singular values, descending.
    pub fn singular_values(&self) -> DVector<f64> {
        linalg::singular_values(&self.matrix)
    }
}

/// Materializes `Â`.
///
/// Writing `K = Σ_m K⁽ᵐ⁾` for the block Grams of the whitening pair, the
/// entry coupling input `(a,b,c)` to output `(d,e,f)` is the sum over
/// pairwise distinct blocks `m₁, m₂, m₃` of `K⁽ᵐ¹⁾_ad K⁽ᵐ²⁾_be K⁽ᵐ³⁾_cf`:
///
/// `K_ad K_be K_cf − P_{ad,be} K_cf − P_{ad,cf} K_be − P_{be,cf} K_ad + 2 T_{ad,be,cf}`
///
/// with `P` and `T` the same-block pair and triple sums. Cost is
/// `O(n r⁶)`.
pub fn build_nu_contracted(white: &WhiteningOperator) -> Result<LinearOperatorA> {
    let r = white.rank();
    let k = r * r * r;
    if k > MAX_DENSE_UNKNOWNS {
        return Err(Error::InvalidInput(format!(
            "r³ = {k} exceeds the dense operator limit {MAX_DENSE_UNKNOWNS}"
        )));
    }
    let grams = white.block_grams();
    let total = grams.iter().fold(DMatrix::zeros(r, r), |acc, g| acc + g);
    let r2 = r * r;
    // pair[(a·r + d)·r² + b·r + e] = Σ_m K⁽ᵐ⁾_ad K⁽ᵐ⁾_be
    let mut pair = vec![0.0; r2 * r2];
    for g in &grams {
        for a in 0..r {
            for d in 0..r {
                let gad = g[(a, d)];
                for b in 0..r {
                    for e in 0..r {
                        pair[(a * r + d) * r2 + b * r + e] += gad * g[(b, e)];
                    }
                }
            }
        }
    }
    let pair_at = |a: usize, d: usize, b: usize, e: usize| pair[(a * r + d) * r2 + b * r + e];

    let rows: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|row| {
            let (d, e, f) = (row / r2, (row / r) % r, row % r);
            let mut out = vec![0.0; k];
            for a in 0..r {
                for b in 0..r {
                    for c in 0..r {
                        let mut triple = 0.0;
                        for g in &grams {
                            triple += g[(a, d)] * g[(b, e)] * g[(c, f)];
                        }
                        out[(a * r + b) * r + c] = total[(a, d)] * total[(b, e)] * total[(c, f)]
                            - pair_at(a, d, b, e) * total[(c, f)]
                            - pair_at(a, d, c, f) * total[(b, e)]
                            - pair_at(b, e, c, f) * total[(a, d)]
                            + 2.0 * triple;
                    }
                }
            }
            out
        })
        .collect();
    let matrix = DMatrix::from_fn(k, k, |i, j| rows[i][j]);
    Ok(LinearOperatorA { r, matrix })
}

/// Least-squares solve of `Â(Z) = rhs`.
pub fn solve_core(a_op: &LinearOperatorA, rhs: &CoreTensor) -> Result<CoreTensor> {
    if rhs.dim() != a_op.r {
        return Err(Error::DimensionMismatch(format!(
            "rhs is {0}×{0}×{0}, operator expects r = {1}",
            rhs.dim(),
            a_op.r
        )));
    }
    let sv = a_op.singular_values();
    let smallest = sv[sv.len() - 1];
    if !(smallest >= MIN_SINGULAR_VALUE) {
        return Err(Error::RankDeficient {
            stage: Stage::TensorLs,
            detail: format!("smallest singular value of Â is {smallest:.3e}"),
        });
    }
    let b = rhs.to_vector();
    let x = a_op
        .matrix
        .clone()
        .qr()
        .solve(&b)
        .ok_or_else(|| Error::RankDeficient {
            stage: Stage::TensorLs,
            detail: "QR solve failed".into(),
        })?;
    let z = CoreTensor::from_vector(a_op.r, &x);
    if !z.is_finite() {
        return Err(Error::RankDeficient { stage: Stage::TensorLs, detail: "non-finite solution".into() });
    }
    Ok(z)
}

/// Lower bound `1 − 72 r³ σ₁² / (n σ_r²)` on the smallest singular value of
/// `Â`; vacuous when not positive.
pub fn isometry_lower_bound(n: usize, r: usize, sigma_1: f64, sigma_r: f64) -> f64 {
    1.0 - 72.0 * (r as f64).powi(3) * (sigma_1 / sigma_r).powi(2) / n as f64
}

/// Whether `n ≥ 144 r³ σ₁²/σ_r²`, the dimension condition under which the
/// core estimate carries its error guarantee.
pub fn dimension_condition_holds(n: usize, r: usize, sigma_1: f64, sigma_r: f64) -> bool {
    n as f64 >= 144.0 * (r as f64).powi(3) * (sigma_1 / sigma_r).powi(2)
}
