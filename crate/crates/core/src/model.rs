//! Mixture-model domain types, exact moments, and synthetic sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use crate::tensor::CoreTensor;

/// Tolerance for probability-vector checks on constructed models.
pub const PROB_TOL: f64 = 1e-12;

/// Tolerance accepted by [`MixtureModel::repaired`] before renormalizing.
pub const REPAIR_TOL: f64 = 1e-6;

/// A mixture of `r` product distributions over `n` coordinates, each
/// coordinate taking one of `ell` labels.
///
/// `pi` is `ℓn × r`: rows `i·ℓ .. (i+1)·ℓ` hold the block `π⁽ⁱ⁾` whose
/// column `q` is the label distribution of coordinate `i` under component
/// `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    n: usize,
    ell: usize,
    r: usize,
    w: DVector<f64>,
    pi: DMatrix<f64>,
}

impl MixtureModel {
    /// Strict constructor: weights and every column block must already be
    /// probability vectors to within [`PROB_TOL`].
    pub fn new(n: usize, ell: usize, r: usize, w: Vec<f64>, pi: DMatrix<f64>) -> Result<Self> {
        check_shape(n, ell, r, &w, &pi)?;
        for (q, &wq) in w.iter().enumerate() {
            if !(wq > 0.0) || !wq.is_finite() {
                return Err(Error::InvalidModel(format!("weight w[{q}] = {wq} is not positive")));
            }
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidModel(format!("weights sum to {total}, not 1")));
        }
        for q in 0..r {
            for i in 0..n {
                let mut s = 0.0;
                for a in 0..ell {
                    let p = pi[(i * ell + a, q)];
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::InvalidModel(format!(
                            "pi[{}, {q}] = {p} outside [0, 1]",
                            i * ell + a
                        )));
                    }
                    s += p;
                }
                if (s - 1.0).abs() > PROB_TOL {
                    return Err(Error::InvalidModel(format!(
                        "block {i} of component {q} sums to {s}, not 1"
                    )));
                }
            }
        }
        Ok(Self { n, ell, r, w: DVector::from_vec(w), pi })
    }

    /// Lenient constructor for ingested data: entries within [`REPAIR_TOL`]
    /// of the simplex are clipped at zero and renormalized.
    pub fn repaired(n: usize, ell: usize, r: usize, mut w: Vec<f64>, mut pi: DMatrix<f64>) -> Result<Self> {
        check_shape(n, ell, r, &w, &pi)?;
        repair_simplex(&mut w, "weights")?;
        for q in 0..r {
            for i in 0..n {
                let mut block: Vec<f64> = (0..ell).map(|a| pi[(i * ell + a, q)]).collect();
                repair_simplex(&mut block, &format!("block {i} of component {q}"))?;
                for (a, p) in block.into_iter().enumerate() {
                    pi[(i * ell + a, q)] = p;
                }
            }
        }
        if w.iter().any(|&x| x <= 0.0) {
            return Err(Error::InvalidModel("zero mixing weight".into()));
        }
        Self::new(n, ell, r, w, pi)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// `ℓn`, the length of the binary encoding.
    pub fn dim(&self) -> usize {
        self.n * self.ell
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn pi(&self) -> &DMatrix<f64> {
        &self.pi
    }

    /// Probability that coordinate `i` shows 0-based label `a` under component `q`.
    #[inline]
    pub fn prob(&self, i: usize, a: usize, q: usize) -> f64 {
        self.pi[(i * self.ell + a, q)]
    }

    /// Marginal label distribution of coordinate `i`.
    pub fn marginal(&self, i: usize) -> Vec<f64> {
        (0..self.ell)
            .map(|a| (0..self.r).map(|q| self.w[q] * self.prob(i, a, q)).sum())
            .collect()
    }

    /// `log P(y | type q)` for a 1-based label row.
    pub fn log_prob_given(&self, labels: &[u32], q: usize) -> f64 {
        labels
            .iter()
            .enumerate()
            .map(|(i, &y)| self.prob(i, y as usize - 1, q).ln())
            .sum()
    }

    /// `log P(y)` under the mixture.
    pub fn log_prob(&self, labels: &[u32]) -> f64 {
        let terms: Vec<f64> = (0..self.r)
            .map(|q| self.w[q].ln() + self.log_prob_given(labels, q))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            n: self.n,
            ell: self.ell,
            r: self.r,
            w: self.w.iter().cloned().collect(),
            pi: (0..self.dim())
                .flat_map(|row| (0..self.r).map(move |q| (row, q)))
                .map(|(row, q)| self.pi[(row, q)])
                .collect(),
        }
    }

    /// Builds a model from its file form, repairing small drift.
    pub fn from_file(file: ModelFile) -> Result<Self> {
        let dim = file.n * file.ell;
        if file.pi.len() != dim * file.r {
            return Err(Error::InvalidModel(format!(
                "pi has {} entries, expected {}",
                file.pi.len(),
                dim * file.r
            )));
        }
        let pi = DMatrix::from_row_slice(dim, file.r, &file.pi);
        Self::repaired(file.n, file.ell, file.r, file.w, pi)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }
}

fn check_shape(n: usize, ell: usize, r: usize, w: &[f64], pi: &DMatrix<f64>) -> Result<()> {
    if n == 0 || r == 0 {
        return Err(Error::InvalidModel("n and r must be positive".into()));
    }
    if ell < 2 {
        return Err(Error::InvalidModel(format!("alphabet size {ell} < 2")));
    }
    if r > ell * n {
        return Err(Error::InvalidModel(format!("r = {r} exceeds ℓn = {}", ell * n)));
    }
    if w.len() != r {
        return Err(Error::InvalidModel(format!("{} weights for r = {r}", w.len())));
    }
    if pi.nrows() != ell * n || pi.ncols() != r {
        return Err(Error::InvalidModel(format!(
            "pi is {}×{}, expected {}×{r}",
            pi.nrows(),
            pi.ncols(),
            ell * n
        )));
    }
    if w.iter().chain(pi.iter()).any(|x| !x.is_finite()) {
        return Err(Error::InvalidModel("non-finite parameter".into()));
    }
    Ok(())
}

fn repair_simplex(v: &mut [f64], what: &str) -> Result<()> {
    if v.iter().any(|&x| x < -REPAIR_TOL) {
        return Err(Error::InvalidModel(format!("{what} has a negative entry")));
    }
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > REPAIR_TOL {
        return Err(Error::InvalidModel(format!("{what} sums to {s}, not 1")));
    }
    v.iter_mut().for_each(|x| *x /= s);
    Ok(())
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// On-disk model format: `pi` is the `ℓn × r` matrix flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub n: usize,
    pub ell: usize,
    pub r: usize,
    pub w: Vec<f64>,
    pub pi: Vec<f64>,
}

/// `N` samples of `n` labels each, labels 1-based, stored row-major.
///
/// Synthetic sets also carry the hidden component of each sample; the
/// estimators never read it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    n: usize,
    ell: usize,
    labels: Vec<u32>,
    types: Option<Vec<u32>>,
}

impl SampleSet {
    pub fn new(n: usize, ell: usize, labels: Vec<u32>) -> Result<Self> {
        if n == 0 || ell == 0 {
            return Err(Error::InvalidInput("n and ℓ must be positive".into()));
        }
        if !labels.len().is_multiple_of(n) {
            return Err(Error::InvalidInput(format!(
                "{} labels is not a multiple of n = {n}",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y == 0 || y as usize > ell) {
            return Err(Error::InvalidInput(format!("label {bad} outside 1..={ell}")));
        }
        Ok(Self { n, ell, labels, types: None })
    }

    pub fn from_rows(n: usize, ell: usize, rows: &[Vec<u32>]) -> Result<Self> {
        if let Some(row) = rows.iter().find(|row| row.len() != n) {
            return Err(Error::InvalidInput(format!("sample of length {} (expected {n})", row.len())));
        }
        Self::new(n, ell, rows.concat())
    }

    /// Attach hidden component labels (1-based).
    pub fn with_types(mut self, types: Vec<u32>) -> Result<Self> {
        if types.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} types for {} samples",
                types.len(),
                self.len()
            )));
        }
        self.types = Some(types);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn len(&self) -> usize {
        self.labels.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, t: usize) -> &[u32] {
        &self.labels[t * self.n..(t + 1) * self.n]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[u32]> + '_ {
        self.labels.chunks_exact(self.n)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn types(&self) -> Option<&[u32]> {
        self.types.as_deref()
    }

    /// Samples `range`, keeping the matching hidden types.
    pub fn slice(&self, range: std::ops::Range<usize>) -> SampleSet {
        SampleSet {
            n: self.n,
            ell: self.ell,
            labels: self.labels[range.start * self.n..range.end * self.n].to_vec(),
            types: self.types.as_ref().map(|t| t[range].to_vec()),
        }
    }

    /// Row index into the binary encoding for coordinate `i` with 1-based label `y`.
    #[inline]
    pub fn encoded_index(&self, i: usize, y: u32) -> usize {
        i * self.ell + y as usize - 1
    }

    /// Binary encoding `x ∈ {0,1}^{ℓn}` of sample `t`.
    pub fn encode(&self, t: usize) -> DVector<f64> {
        let mut x = DVector::zeros(self.n * self.ell);
        for (i, &y) in self.row(t).iter().enumerate() {
            x[self.encoded_index(i, y)] = 1.0;
        }
        x
    }
}

/// Draws `count` i.i.d. samples. Sample `t` uses substream `t` of `seed`:
/// one uniform picks the component, then one uniform per coordinate picks
/// its label. The hidden components are attached to the result.
pub fn sample(model: &MixtureModel, count: usize, seed: u64) -> SampleSet {
    let (n, ell, r) = (model.n, model.ell, model.r);
    let weight_cdf = cumulative(model.w.iter().cloned());
    // cdf[(q * n + i) * ell + a]
    let mut cdf = Vec::with_capacity(r * n * ell);
    for q in 0..r {
        for i in 0..n {
            cdf.extend(cumulative((0..ell).map(|a| model.prob(i, a, q))));
        }
    }
    let rows: Vec<(u32, Vec<u32>)> = (0..count)
        .into_par_iter()
        .map(|t| {
            let mut g = rng::substream(seed, t as u64);
            let q = pick(&weight_cdf, g.random::<f64>());
            let labels = (0..n)
                .map(|i| {
                    let table = &cdf[(q * n + i) * ell..(q * n + i + 1) * ell];
                    pick(table, g.random::<f64>()) as u32 + 1
                })
                .collect();
            (q as u32 + 1, labels)
        })
        .collect();
    let mut labels = Vec::with_capacity(count * n);
    let mut types = Vec::with_capacity(count);
    for (q, row) in rows {
        types.push(q);
        labels.extend(row);
    }
    SampleSet { n, ell, labels, types: Some(types) }
}

fn cumulative(p: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    p.map(|x| {
        acc += x;
        acc
    })
    .collect()
}

fn pick(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().expect("non-empty cdf");
    let target = u * total;
    cdf.iter()
        .position(|&c| target < c)
        .unwrap_or_else(|| cdf.iter().rposition(|&c| c > 0.0).unwrap_or(cdf.len() - 1))
}

/// Symmetric `ℓn × ℓn` matrix whose same-block (block-diagonal) entries
/// are unobserved and stored as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix {
    block: usize,
    data: DMatrix<f64>,
}

impl MaskedMatrix {
    /// Applies the off-block-diagonal mask to `m`.
    pub fn mask(mut m: DMatrix<f64>, block: usize) -> Result<Self> {
        if block == 0 || m.nrows() != m.ncols() || !m.nrows().is_multiple_of(block) {
            return Err(Error::DimensionMismatch(format!(
                "{}×{} matrix with block size {block}",
                m.nrows(),
                m.ncols()
            )));
        }
        zero_block_diagonal(&mut m, block);
        Ok(Self { block, data: m })
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn blocks(&self) -> usize {
        self.dim() / self.block
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        i / self.block != j / self.block
    }
}

/// In-place `P_Ω₂`: zero every entry whose row and column share a block.
pub fn zero_block_diagonal(m: &mut DMatrix<f64>, block: usize) {
    for start in (0..m.nrows()).step_by(block) {
        m.view_mut((start, start), (block, block)).fill(0.0);
    }
}

/// Exact second moment `Π W Πᵀ`.
pub fn oracle_m2(model: &MixtureModel) -> DMatrix<f64> {
    let weighted = &model.pi * DMatrix::from_diagonal(&model.w);
    let m = weighted * model.pi.transpose();
    (&m + m.transpose()) * 0.5
}

/// Exact third moment `Σ_q w_q π_q⊗π_q⊗π_q` as a dense `(ℓn)³` tensor.
/// Only meant for small instances.
pub fn oracle_m3(model: &MixtureModel) -> CoreTensor {
    CoreTensor::from_rank_one_sum(model.w.as_slice(), &model.pi)
}

/// Smallest `μ` with `‖U⁽ⁱ⁾‖₂ ≤ μ √(r/n)` for every `block`-row block of `u`.
pub fn block_incoherence(u: &DMatrix<f64>, block: usize) -> Result<f64> {
    if block == 0 || !u.nrows().is_multiple_of(block) || u.ncols() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "{}×{} matrix with block size {block}",
            u.nrows(),
            u.ncols()
        )));
    }
    let defect = linalg::orthonormality_defect(u);
    if defect > 1e-8 {
        return Err(Error::InvalidInput(format!("columns not orthonormal (defect {defect:.3e})")));
    }
    let n = u.nrows() / block;
    let r = u.ncols();
    let worst = (0..n)
        .map(|i| linalg::spectral_norm(&u.rows(i * block, block).into_owned()))
        .fold(0.0, f64::max);
    Ok(worst * (n as f64 / r as f64).sqrt())
}

/// Recipe for a random synthetic model.
///
/// Weights are `w_q ∝ 1 + u_q` with `u_q` uniform, so no weight is more
/// than twice another. Each column block is a flat-Dirichlet draw mixed
/// with the uniform distribution by `uniform_mix`, which keeps every
/// probability at least `uniform_mix / ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomModelSpec {
    pub n: usize,
    pub ell: usize,
    pub r: usize,
    pub seed: u64,
    pub uniform_mix: f64,
}

impl RandomModelSpec {
    pub fn new(n: usize, ell: usize, r: usize, seed: u64) -> Self {
        Self { n, ell, r, seed, uniform_mix: 0.1 }
    }

    pub fn build(&self) -> Result<MixtureModel> {
        if !(0.0..1.0).contains(&self.uniform_mix) {
            return Err(Error::InvalidInput(format!(
                "uniform_mix {} outside [0, 1)",
                self.uniform_mix
            )));
        }
        let (w, raw) = self.draw();
        let beta = self.uniform_mix;
        let pi = raw.map(|p| (1.0 - beta) * p + beta / self.ell as f64);
        MixtureModel::new(self.n, self.ell, self.r, w, normalize_blocks(pi, self.ell))
    }

    /// Like [`build`](Self::build) but picks `uniform_mix` by bisection so
    /// that `σ₁(M₂)/σ_r(M₂)` matches `kappa`. Fails when `kappa` is below
    /// the condition number of the unmixed draw.
    pub fn build_with_condition(&self, kappa: f64) -> Result<MixtureModel> {
        let kappa_of = |beta: f64| -> Result<(f64, MixtureModel)> {
            let m = RandomModelSpec { uniform_mix: beta, ..*self }.build()?;
            Ok((condition_number(&m), m))
        };
        let (k0, m0) = kappa_of(0.0)?;
        if kappa < k0 {
            return Err(Error::InvalidInput(format!(
                "condition target {kappa} below the attainable minimum {k0:.4}"
            )));
        }
        if (kappa - k0).abs() <= 1e-9 * k0 {
            return Ok(m0);
        }
        let (mut lo, mut hi) = (0.0, 1.0 - 1e-9);
        let mut best = m0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            let (k, m) = kappa_of(mid)?;
            best = m;
            if (k - kappa).abs() <= 1e-9 * kappa {
                break;
            }
            if k < kappa {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(best)
    }

    fn draw(&self) -> (Vec<f64>, DMatrix<f64>) {
        let mut g = rng::substream(self.seed, rng::MODEL_STREAM);
        let raw_w: Vec<f64> = (0..self.r).map(|_| 1.0 + g.random::<f64>()).collect();
        let total: f64 = raw_w.iter().sum();
        let w = raw_w.iter().map(|x| x / total).collect();
        let dim = self.n * self.ell;
        let mut pi = DMatrix::zeros(dim, self.r);
        for q in 0..self.r {
            for i in 0..self.n {
                let draws: Vec<f64> = (0..self.ell).map(|_| Exp1.sample(&mut g)).collect();
                let s: f64 = draws.iter().sum();
                for (a, d) in draws.into_iter().enumerate() {
                    pi[(i * self.ell + a, q)] = d / s;
                }
            }
        }
        (w, pi)
    }
}

fn normalize_blocks(mut pi: DMatrix<f64>, ell: usize) -> DMatrix<f64> {
    for q in 0..pi.ncols() {
        for start in (0..pi.nrows()).step_by(ell) {
            let s: f64 = (start..start + ell).map(|row| pi[(row, q)]).sum();
            for row in start..start + ell {
                pi[(row, q)] /= s;
            }
        }
    }
    pi
}

/// `σ₁(M₂)/σ_r(M₂)` of the exact second moment.
pub fn condition_number(model: &MixtureModel) -> f64 {
    let (vals, _) = linalg::sym_eigen_desc(&oracle_m2(model));
    vals[0] / vals[model.r - 1]
}
