#![allow(dead_code)]

use mixspec::linalg::orthonormalize;
use mixspec::rng::substream;
use mixspec::{CoreTensor, MixtureModel, RandomModelSpec};
use mixspec::WhiteningOperator;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// n=30, ℓ=3, r=3 model used by most end-to-end checks.
pub fn reference_model() -> MixtureModel {
    RandomModelSpec::new(30, 3, 3, 11).build().unwrap()
}

/// Same shape as the reference model with pure Dirichlet columns, so the
/// components sit further apart.
pub fn well_separated_model() -> MixtureModel {
    RandomModelSpec { uniform_mix: 0.0, ..RandomModelSpec::new(30, 3, 3, 11) }.build().unwrap()
}

pub fn uniform_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut g = substream(seed, 0);
    DMatrix::from_fn(rows, cols, |_, _| g.random_range(-1.0..1.0))
}

pub fn random_orthonormal(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    orthonormalize(&uniform_matrix(rows, cols, seed))
}

/// Symmetric tensor with Frobenius norm `norm`. The Frobenius norm bounds
/// the spectral norm, so this is also a spectral-norm budget.
pub fn symmetric_noise(dim: usize, norm: f64, seed: u64) -> CoreTensor {
    let mut g = substream(seed, 1);
    let raw = CoreTensor::from_fn(dim, |_, _, _| g.random_range(-1.0..1.0));
    let mut t = raw.symmetrized();
    t.scale(norm / t.frobenius_norm());
    t
}

/// `Σ_q λ_q v_q⊗v_q⊗v_q` with orthonormal `v_q`.
pub fn orthogonal_tensor(lambdas: &[f64], seed: u64) -> (CoreTensor, DMatrix<f64>) {
    let v = random_orthonormal(lambdas.len(), lambdas.len(), seed);
    (CoreTensor::from_rank_one_sum(lambdas, &v), v)
}

/// Block of `ℓn` index `i`.
pub fn block_of(i: usize, ell: usize) -> usize {
    i / ell
}

pub fn pairwise_distinct(a: usize, b: usize, c: usize) -> bool {
    a != b && a != c && b != c
}

/// Every `(n, ℓ)` with `ℓn ≤ 12` and at least three blocks.
pub fn tiny_shapes() -> Vec<(usize, usize)> {
    let mut out = vec![];
    for ell in 1..=4 {
        for n in 3..=12 {
            if n * ell <= 12 {
                out.push((n, ell));
            }
        }
    }
    out
}

/// `(1/N) Σ_t Σ_{i,j,k} x_i x_j x_k Q_ia Q_jb Q_kc` over entries whose
/// blocks are pairwise distinct.
pub fn direct_contraction(xs: &[DVector<f64>], q: &DMatrix<f64>, ell: usize) -> CoreTensor {
    let d = q.nrows();
    let r = q.ncols();
    let mut out = CoreTensor::zeros(r);
    for x in xs {
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    if !pairwise_distinct(block_of(i, ell), block_of(j, ell), block_of(k, ell)) {
                        continue;
                    }
                    let xijk = x[i] * x[j] * x[k];
                    if xijk == 0.0 {
                        continue;
                    }
                    for a in 0..r {
                        for b in 0..r {
                            for c in 0..r {
                                let v = out.get(a, b, c) + xijk * q[(i, a)] * q[(j, b)] * q[(k, c)];
                                out.set(a, b, c, v);
                            }
                        }
                    }
                }
            }
        }
    }
    out.scale(1.0 / xs.len() as f64);
    out
}

/// Lift `Z` with `q_up`, mask to pairwise distinct blocks, whiten with `q_down`.
pub fn definitional_a(white: &WhiteningOperator, z: &CoreTensor, ell: usize) -> CoreTensor {
    let (up, down) = (&white.q_up, &white.q_down);
    let d = up.nrows();
    let r = up.ncols();
    let mut lifted = vec![0.0; d * d * d];
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                if !pairwise_distinct(block_of(i, ell), block_of(j, ell), block_of(k, ell)) {
                    continue;
                }
                let mut s = 0.0;
                for a in 0..r {
                    for b in 0..r {
                        for c in 0..r {
                            s += z.get(a, b, c) * up[(i, a)] * up[(j, b)] * up[(k, c)];
                        }
                    }
                }
                lifted[(i * d + j) * d + k] = s;
            }
        }
    }
    CoreTensor::from_fn(r, |a, b, c| {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    s += lifted[(i * d + j) * d + k] * down[(i, a)] * down[(j, b)] * down[(k, c)];
                }
            }
        }
        s
    })
}

pub fn max_abs_diff(a: &CoreTensor, b: &CoreTensor) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
