//! Block-masked low-rank matrix completion by alternating minimization.
//!
//! The unknown `ℓ×ℓ` diagonal blocks of a symmetric rank-`r` matrix are
//! filled in by writing it as `Û Uᵀ`, solving for `Û` by least squares on
//! the observed entries with `U` fixed, and re-orthonormalizing `Û` by QR
//! to get the next `U`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::linalg::{self, sym_eigen_desc};
use crate::model::{block_incoherence, zero_block_diagonal, MaskedMatrix};

/// Condition number above which a per-block normal matrix counts as singular.
pub const MAX_BLOCK_CONDITION: f64 = 1e12;

/// Eigenvalues below this fraction of the largest are treated as missing.
pub const MIN_RELATIVE_EIGENVALUE: f64 = 1e-10;

/// How the spectral initialization is truncated before iterating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "cap")]
pub enum Truncation {
    /// Plain top-`r` eigenvectors.
    #[default]
    None,
    /// Cap at `2 μ̂ √(r/n)` with `μ̂` the incoherence of the plain init.
    Auto,
    /// Zero every block whose Frobenius norm exceeds the given cap.
    Cap(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AltMinConfig {
    pub rank: usize,
    pub max_iters: usize,
    pub init_truncation: Truncation,
    /// Stop once the relative change of the residual drops below this.
    pub convergence_tol: f64,
}

impl AltMinConfig {
    pub fn new(rank: usize) -> Self {
        Self { rank, max_iters: 100, init_truncation: Truncation::None, convergence_tol: 1e-10 }
    }

    pub fn with_max_iters(mut self, iters: usize) -> Self {
        self.max_iters = iters;
        self
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.rank == 0 || self.max_iters == 0 || !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidInput(format!("invalid completion config {self:?}")));
        }
        if self.rank > dim {
            return Err(Error::InvalidInput(format!("rank {} exceeds dimension {dim}", self.rank)));
        }
        if let Truncation::Cap(c) = self.init_truncation {
            if !(c > 0.0) {
                return Err(Error::InvalidInput(format!("truncation cap {c} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CompletionResult {
    /// Last least-squares iterate `Û_T`.
    pub u_hat: DMatrix<f64>,
    /// Orthonormal basis `U_{T−1}` it was solved against.
    pub u_prev: DMatrix<f64>,
    /// Top-`r` eigenvectors of the symmetrized completion.
    pub u: DMatrix<f64>,
    /// Matching eigenvalues, descending and positive.
    pub sigma: DVector<f64>,
    pub iters_run: usize,
    /// `‖P_Ω₂(S₂) − P_Ω₂(Û_{t+1} U_tᵀ)‖_F` after each iteration.
    pub residual_history: Vec<f64>,
    pub init_incoherence: f64,
    pub truncation_cap: Option<f64>,
}

impl CompletionResult {
    /// `(Û_T U_{T−1}ᵀ + U_{T−1} Û_Tᵀ) / 2`.
    pub fn symmetrized_product(&self) -> DMatrix<f64> {
        let p = &self.u_hat * self.u_prev.transpose();
        (&p + p.transpose()) * 0.5
    }

    /// Rank-`r` completion `U Σ Uᵀ`.
    pub fn m2_hat(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.sigma) * self.u.transpose()
    }

    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::NAN)
    }
}

/// Stepwise driver, exposed so callers can observe every iterate.
pub struct AltMinSolver<'a> {
    s2: &'a MaskedMatrix,
    cfg: AltMinConfig,
    u: DMatrix<f64>,
    u_hat: Option<DMatrix<f64>>,
    u_prev: Option<DMatrix<f64>>,
    residuals: Vec<f64>,
    init_incoherence: f64,
    truncation_cap: Option<f64>,
    converged: bool,
}

impl<'a> AltMinSolver<'a> {
    /// Spectral initialization from the top-`r` eigenvectors of `P_Ω₂(S₂)`.
    pub fn new(s2: &'a MaskedMatrix, cfg: AltMinConfig) -> Result<Self> {
        let dim = s2.dim();
        cfg.validate(dim)?;
        let r = cfg.rank;
        if (s2.data() - s2.data().transpose()).amax() > 1e-12 * s2.data().amax().max(1.0) {
            return Err(Error::InvalidInput("masked second moment is not symmetric".into()));
        }
        let (_, vecs) = sym_eigen_desc(s2.data());
        let mut u = vecs.columns(0, r).into_owned();
        let init_incoherence = block_incoherence(&u, s2.block())?;
        let blocks = s2.blocks();
        let cap = match cfg.init_truncation {
            Truncation::None => None,
            Truncation::Auto => Some(2.0 * init_incoherence * (r as f64 / blocks as f64).sqrt()),
            Truncation::Cap(c) => Some(c),
        };
        if let Some(cap) = cap {
            let block = s2.block();
            let mut kept = 0;
            for i in 0..blocks {
                let mut view = u.rows_mut(i * block, block);
                if view.norm() > cap {
                    view.fill(0.0);
                } else {
                    kept += 1;
                }
            }
            if kept == 0 {
                return Err(Error::IllConditioned {
                    stage: Stage::Completion,
                    detail: format!("truncation cap {cap:.3e} removed every block"),
                });
            }
            u = linalg::orthonormalize(&u);
        }
        Ok(Self {
            s2,
            cfg,
            u,
            u_hat: None,
            u_prev: None,
            residuals: Vec::new(),
            init_incoherence,
            truncation_cap: cap,
            converged: false,
        })
    }

    /// Current orthonormal iterate `U_t`.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn is_converged(&self) -> bool {
        self.converged
    }

    /// One least-squares update followed by QR. Returns the residual of the
    /// new bilinear fit on the observed entries.
    pub fn step(&mut self) -> Result<f64> {
        let block = self.s2.block();
        let blocks = self.s2.blocks();
        let r = self.cfg.rank;
        let u = &self.u;
        let su = self.s2.data() * u;
        let gram = u.transpose() * u;

        // B⁽ⁱ⁾ = UᵀU − U⁽ⁱ⁾ᵀU⁽ⁱ⁾ is shared by the ℓ rows of block i.
        let solved: Vec<Result<DMatrix<f64>>> = (0..blocks)
            .into_par_iter()
            .map(|i| {
                let ui = u.rows(i * block, block);
                let b = &gram - ui.transpose() * ui;
                let (vals, vecs) = sym_eigen_desc(&b);
                let (hi, lo) = (vals[0], vals[r - 1]);
                if !(lo > 0.0) || hi / lo > MAX_BLOCK_CONDITION {
                    return Err(Error::IllConditioned {
                        stage: Stage::Completion,
                        detail: format!("normal matrix of block {i} is singular (eigenvalues {lo:.3e}..{hi:.3e})"),
                    });
                }
                let inv = &vecs * DMatrix::from_diagonal(&vals.map(|v| 1.0 / v)) * vecs.transpose();
                Ok(su.rows(i * block, block) * inv)
            })
            .collect();
        let mut u_hat = DMatrix::zeros(self.s2.dim(), r);
        for (i, rows) in solved.into_iter().enumerate() {
            u_hat.rows_mut(i * block, block).copy_from(&rows?);
        }

        let mut fit = &u_hat * u.transpose();
        zero_block_diagonal(&mut fit, block);
        let residual = (self.s2.data() - fit).norm();

        let scale = self.s2.data().norm();
        if let Some(&prev) = self.residuals.last() {
            let change = (prev - residual).abs() / prev.max(f64::MIN_POSITIVE);
            if change < self.cfg.convergence_tol {
                self.converged = true;
            }
        }
        if residual <= 1e-14 * scale {
            self.converged = true;
        }
        self.residuals.push(residual);

        let next = linalg::orthonormalize(&u_hat);
        self.u_prev = Some(std::mem::replace(&mut self.u, next));
        self.u_hat = Some(u_hat);
        Ok(residual)
    }

    /// Symmetrizes `Û_T U_{T−1}ᵀ` and extracts its top-`r` eigenpairs.
    pub fn finish(self) -> Result<CompletionResult> {
        let r = self.cfg.rank;
        let (u_hat, u_prev) = match (self.u_hat, self.u_prev) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::InvalidInput("finish() called before any iteration".into())),
        };
        let (sigma, u) = top_eigenpairs_of_product(&u_hat, &u_prev, r);
        let top = sigma[0];
        let good = sigma.iter().filter(|&&s| s > MIN_RELATIVE_EIGENVALUE * top).count();
        if !(top > 0.0) || good < r {
            return Err(Error::IllConditioned {
                stage: Stage::Completion,
                detail: format!(
                    "only {good} of {r} eigenvalues of the completion are positive (spectrum {:?})",
                    sigma.as_slice()
                ),
            });
        }
        Ok(CompletionResult {
            u_hat,
            u_prev,
            u,
            sigma,
            iters_run: self.residuals.len(),
            residual_history: self.residuals,
            init_incoherence: self.init_incoherence,
            truncation_cap: self.truncation_cap,
        })
    }
}

/// Top-`r` eigenpairs of `(A Bᵀ + B Aᵀ)/2` through a QR of `[A B]`, so the
/// `ℓn × ℓn` product is never decomposed.
fn top_eigenpairs_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>, r: usize) -> (DVector<f64>, DMatrix<f64>) {
    let (d, k) = (a.nrows(), a.ncols());
    let mut z = DMatrix::zeros(d, 2 * k);
    z.columns_mut(0, k).copy_from(a);
    z.columns_mut(k, k).copy_from(b);
    let qr = z.qr();
    let (q, rf) = (qr.q(), qr.r());
    let mut swap = DMatrix::zeros(2 * k, 2 * k);
    for i in 0..k {
        swap[(i, k + i)] = 0.5;
        swap[(k + i, i)] = 0.5;
    }
    let small = &rf * swap * rf.transpose();
    let small = (&small + small.transpose()) * 0.5;
    let (vals, vecs) = sym_eigen_desc(&small);
    let u = &q * vecs.columns(0, r);
    (vals.rows(0, r).into_owned(), u)
}

/// Runs the solver to completion: at most `max_iters` updates, stopping
/// early on convergence.
pub fn altmin_complete(s2: &MaskedMatrix, cfg: AltMinConfig) -> Result<CompletionResult> {
    let mut solver = AltMinSolver::new(s2, cfg)?;
    for _ in 0..cfg.max_iters {
        solver.step()?;
        if solver.is_converged() {
            break;
        }
    }
    solver.finish()
}
