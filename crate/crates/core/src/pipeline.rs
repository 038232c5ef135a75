//! End-to-end spectral fit: masked moments → completion → whitened core
//! least squares → power method → parameter assembly → clamping.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::altmin::{altmin_complete, AltMinConfig, CompletionResult};
use crate::error::{Error, Result};
use crate::model::{block_incoherence, MaskedMatrix, MixtureModel, SampleSet, PROB_TOL};
use crate::moments;
use crate::power::{self, PowerConfig, TensorEigenDecomposition};
use crate::tensorls::{self, WhiteningOperator};

/// Version tag written into serialized reports.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Floor for automatically chosen clamp thresholds.
pub const MIN_AUTO_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub r: usize,
    pub altmin: AltMinConfig,
    pub power: PowerConfig,
    /// Weight floor; `None` picks `max(1e-6, 1/√N₂)`.
    pub eps_w: Option<f64>,
    /// Probability floor; `None` picks `max(1e-6, 1/√N₂)`.
    pub eps_pi: Option<f64>,
    pub seed: u64,
}

impl FitConfig {
    pub fn new(r: usize, seed: u64) -> Self {
        Self {
            r,
            altmin: AltMinConfig::new(r),
            power: PowerConfig::for_rank(r),
            eps_w: None,
            eps_pi: None,
            seed,
        }
    }

    fn validate(&self, n: usize, ell: usize) -> Result<()> {
        if self.r == 0 || self.r > n * ell {
            return Err(Error::InvalidInput(format!("r = {} must lie in 1..={}", self.r, n * ell)));
        }
        if self.altmin.rank != self.r {
            return Err(Error::InvalidInput(format!(
                "completion rank {} differs from r = {}",
                self.altmin.rank, self.r
            )));
        }
        for (name, eps) in [("eps_w", self.eps_w), ("eps_pi", self.eps_pi)] {
            if let Some(e) = eps {
                if !(e > 0.0 && e < 1.0) {
                    return Err(Error::InvalidInput(format!("{name} = {e} outside (0, 1)")));
                }
            }
        }
        Ok(())
    }
}

/// Unconstrained estimate `(ŵ, Π̂)`; entries may be negative and blocks
/// need not sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEstimate {
    pub w: Vec<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub pi: DMatrix<f64>,
}

impl RawEstimate {
    pub fn r(&self) -> usize {
        self.w.len()
    }

    /// Reorders components by descending weight (stable).
    pub fn sorted_by_weight(&self) -> RawEstimate {
        let mut order: Vec<usize> = (0..self.r()).collect();
        order.sort_by(|&a, &b| self.w[b].total_cmp(&self.w[a]));
        RawEstimate {
            w: order.iter().map(|&q| self.w[q]).collect(),
            pi: DMatrix::from_fn(self.pi.nrows(), self.r(), |i, q| self.pi[(i, order[q])]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `exact` when moments came from a model, `samples` otherwise.
    pub moment_source: String,
    pub second_moment_samples: usize,
    pub third_moment_samples: usize,
    /// Top-`r` eigenvalues of the completed second moment.
    pub sigma_hat: Vec<f64>,
    pub altmin_iters: usize,
    pub altmin_residuals: Vec<f64>,
    pub init_incoherence: f64,
    pub completion_incoherence: f64,
    pub a_sigma_min: f64,
    pub a_sigma_max: f64,
    pub a_condition: f64,
    /// `1 − 72 r³ σ̂₁²/(n σ̂_r²)`.
    pub a_isometry_bound: f64,
    /// Whether `n ≥ 144 r³ σ̂₁²/σ̂_r²` holds for the completed spectrum.
    pub dimension_condition_holds: bool,
    /// `‖Â(Ĝ) − rhs‖_F` before symmetrization.
    pub core_residual: f64,
    pub core_asymmetry: f64,
    pub power_lambdas: Vec<f64>,
    pub power_residual: f64,
    pub power_coherence: f64,
    pub eps_w: f64,
    pub eps_pi: f64,
    /// Plug-in proxy `‖P_Ω₂(S₂ − M̂₂)‖_F / σ̂_r` for the relative
    /// second-moment error.
    pub eps_m_proxy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub moments_ms: f64,
    pub completion_ms: f64,
    pub tensor_ls_ms: f64,
    pub power_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub config: FitConfig,
    pub n: usize,
    pub ell: usize,
    pub raw_model: RawEstimate,
    pub valid_model: MixtureModel,
    pub diagnostics: Diagnostics,
    pub timings: Timings,
}

impl FitReport {
    /// Versioned JSON. Timings are wall-clock and left out unless asked
    /// for, so reports of seeded runs compare byte for byte.
    pub fn to_json_value(&self, include_timings: bool) -> serde_json::Value {
        let mut v = json!({
            "schema_version": REPORT_SCHEMA_VERSION,
            "n": self.n,
            "ell": self.ell,
            "config": self.config,
            "raw_model": {
                "w": self.raw_model.w,
                "pi": row_major(&self.raw_model.pi),
            },
            "model": self.valid_model.to_file(),
            "diagnostics": self.diagnostics,
        });
        if include_timings {
            v["timings"] = json!(self.timings);
        }
        v
    }

    pub fn to_json(&self, include_timings: bool) -> String {
        serde_json::to_string_pretty(&self.to_json_value(include_timings)).expect("report serializes")
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter().flat_map(|r| r.iter().cloned().collect::<Vec<_>>()).collect()
}

enum MomentSource<'a> {
    Samples(&'a SampleSet),
    Exact(&'a MixtureModel),
}

/// Fits an `r`-component mixture to `samples`.
pub fn fit(samples: &SampleSet, cfg: &FitConfig) -> Result<FitReport> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {}", samples.len())));
    }
    run(MomentSource::Samples(samples), samples.n(), samples.ell(), cfg)
}

/// Runs the same stages on exact masked moments of `model`, bypassing
/// sampling entirely.
pub fn fit_exact(model: &MixtureModel, cfg: &FitConfig) -> Result<FitReport> {
    run(MomentSource::Exact(model), model.n(), model.ell(), cfg)
}

fn run(source: MomentSource<'_>, n: usize, ell: usize, cfg: &FitConfig) -> Result<FitReport> {
    cfg.validate(n, ell)?;
    let r = cfg.r;
    let total_start = Instant::now();
    let mut timings = Timings::default();

    let clock = Instant::now();
    let (s2, counts): (MaskedMatrix, [usize; 2]) = match &source {
        MomentSource::Samples(s) => {
            let m = moments::masked_second_moment(s)?;
            (m.s2_masked, m.n_used)
        }
        MomentSource::Exact(model) => (moments::exact_masked_second_moment(model), [0, 0]),
    };
    timings.moments_ms += ms(clock);

    let clock = Instant::now();
    let completion = altmin_complete(&s2, cfg.altmin)?;
    timings.completion_ms = ms(clock);

    let clock = Instant::now();
    let white = WhiteningOperator::new(&completion.u, &completion.sigma, ell)?;
    let rhs = match &source {
        MomentSource::Samples(s) => moments::masked_third_contraction(s, &white.q_down)?,
        MomentSource::Exact(model) => moments::exact_masked_third_contraction(model, &white.q_down)?,
    };
    let a_op = tensorls::build_nu_contracted(&white)?;
    let core = tensorls::solve_core(&a_op, &rhs)?;
    let sv = a_op.singular_values();
    let core_residual = a_op.apply(&core).sub(&rhs).frobenius_norm();
    let core_asymmetry = core.asymmetry();
    let core = core.symmetrized();
    timings.tensor_ls_ms = ms(clock);

    let clock = Instant::now();
    let decomp = power::decompose(&core, r, &cfg.power, cfg.seed)?;
    timings.power_ms = ms(clock);

    let raw = assemble_parameters(&completion.u, &completion.sigma, &decomp)?.sorted_by_weight();
    let auto = match counts[1] {
        0 => MIN_AUTO_THRESHOLD,
        k => (1.0 / (k as f64).sqrt()).max(MIN_AUTO_THRESHOLD),
    };
    let eps_w = cfg.eps_w.unwrap_or(auto);
    let eps_pi = cfg.eps_pi.unwrap_or(auto);
    let valid_model = clamp_to_valid(&raw, n, ell, eps_w, eps_pi)?;
    timings.total_ms = ms(total_start);

    let sigma_1 = completion.sigma[0];
    let sigma_r = completion.sigma[r - 1];
    let diagnostics = Diagnostics {
        moment_source: match source {
            MomentSource::Samples(_) => "samples",
            MomentSource::Exact(_) => "exact",
        }
        .into(),
        second_moment_samples: counts[0],
        third_moment_samples: counts[1],
        sigma_hat: completion.sigma.iter().cloned().collect(),
        altmin_iters: completion.iters_run,
        altmin_residuals: completion.residual_history.clone(),
        init_incoherence: completion.init_incoherence,
        completion_incoherence: block_incoherence(&completion.u, ell)?,
        a_sigma_min: sv[sv.len() - 1],
        a_sigma_max: sv[0],
        a_condition: sv[0] / sv[sv.len() - 1],
        a_isometry_bound: tensorls::isometry_lower_bound(n, r, sigma_1, sigma_r),
        dimension_condition_holds: tensorls::dimension_condition_holds(n, r, sigma_1, sigma_r),
        core_residual,
        core_asymmetry,
        power_lambdas: decomp.lambdas.clone(),
        power_residual: decomp.residual_norm,
        power_coherence: decomp.max_coherence(),
        eps_w,
        eps_pi,
        eps_m_proxy: eps_m_proxy(&completion),
    };
    Ok(FitReport { config: *cfg, n, ell, raw_model: raw, valid_model, diagnostics, timings })
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn eps_m_proxy(c: &CompletionResult) -> f64 {
    c.final_residual() / c.sigma[c.sigma.len() - 1]
}

/// `Π̂ = U Σ^{1/2} V Λ` and `ŵ_q = λ_q^{-2}`.
pub fn assemble_parameters(
    u: &DMatrix<f64>,
    sigma: &DVector<f64>,
    decomp: &TensorEigenDecomposition,
) -> Result<RawEstimate> {
    let r = decomp.lambdas.len();
    if u.ncols() != sigma.len() || decomp.vectors.nrows() != sigma.len() || decomp.vectors.ncols() != r {
        return Err(Error::DimensionMismatch(format!(
            "basis {}×{}, {} eigenvalues, eigenvectors {}×{}",
            u.nrows(),
            u.ncols(),
            sigma.len(),
            decomp.vectors.nrows(),
            decomp.vectors.ncols()
        )));
    }
    let lambda = DVector::from_column_slice(&decomp.lambdas);
    let pi = u
        * DMatrix::from_diagonal(&sigma.map(f64::sqrt))
        * &decomp.vectors
        * DMatrix::from_diagonal(&lambda);
    let w = decomp.lambdas.iter().map(|l| l.powi(-2)).collect();
    Ok(RawEstimate { w, pi })
}

/// Turns a raw estimate into a valid model: each weight is floored at
/// `eps_w` and each `ℓ`-block of each column at `eps_pi`, then the vector is
/// renormalized. See [`clamp_simplex`].
pub fn clamp_to_valid(raw: &RawEstimate, n: usize, ell: usize, eps_w: f64, eps_pi: f64) -> Result<MixtureModel> {
    for (name, eps) in [("eps_w", eps_w), ("eps_pi", eps_pi)] {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidInput(format!("{name} = {eps} outside (0, 1)")));
        }
    }
    let r = raw.r();
    if raw.pi.nrows() != n * ell || raw.pi.ncols() != r {
        return Err(Error::DimensionMismatch(format!(
            "raw pi is {}×{}, expected {}×{r}",
            raw.pi.nrows(),
            raw.pi.ncols(),
            n * ell
        )));
    }
    let w = clamp_simplex(&raw.w, eps_w);
    let mut pi = raw.pi.clone();
    for q in 0..r {
        for i in 0..n {
            let block: Vec<f64> = (0..ell).map(|a| raw.pi[(i * ell + a, q)]).collect();
            for (a, p) in clamp_simplex(&block, eps_pi).into_iter().enumerate() {
                pi[(i * ell + a, q)] = p;
            }
        }
    }
    MixtureModel::new(n, ell, r, w, pi)
}

/// Floors every entry at `eps` and renormalizes.
///
/// When the floored vector sums to at most one this is a single
/// floor-and-divide. When it sums to more than one, dividing can push
/// floored entries back under `eps`; the result is then the fixed point of
/// repeating floor-and-divide: entries pinned at `eps` and the rest scaled
/// to fill the remaining mass. A vector that is already a probability vector
/// with every entry at or above `eps` is returned untouched, which makes the
/// map idempotent.
pub fn clamp_simplex(x: &[f64], eps: f64) -> Vec<f64> {
    let total: f64 = x.iter().sum();
    if x.iter().all(|&v| v >= eps * (1.0 - 1e-12)) && (total - 1.0).abs() <= PROB_TOL {
        return x.to_vec();
    }
    let floored: Vec<f64> = x.iter().map(|&v| v.max(eps)).collect();
    let s: f64 = floored.iter().sum();
    if s <= 1.0 {
        return floored.into_iter().map(|v| v / s).collect();
    }
    let mut pinned: Vec<bool> = x.iter().map(|&v| !(v >= eps)).collect();
    loop {
        let count = pinned.iter().filter(|&&p| p).count();
        let free_mass: f64 = x.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(v, _)| v).sum();
        let room = 1.0 - count as f64 * eps;
        if count == x.len() || room <= 0.0 || !(free_mass > 0.0) {
            return vec![1.0 / x.len() as f64; x.len()];
        }
        let scale = room / free_mass;
        let mut changed = false;
        for (v, p) in x.iter().zip(pinned.iter_mut()) {
            if !*p && scale * v < eps {
                *p = true;
                changed = true;
            }
        }
        if !changed {
            return x
                .iter()
                .zip(&pinned)
                .map(|(&v, &p)| if p { eps } else { scale * v })
                .collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_weight_example() {
        let w = clamp_simplex(&[0.5, -0.01], 0.02);
        assert!((w[0] - 25.0 / 26.0).abs() < 1e-15);
        assert!((w[1] - 1.0 / 26.0).abs() < 1e-15);
    }

    #[test]
    fn clamp_negative_block_is_uniform() {
        let out = clamp_simplex(&[-0.2, -0.1, -0.3], 0.01);
        assert!(out.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(out[0], out[1]);
        assert_eq!(out[1], out[2]);
    }

    #[test]
    fn clamp_keeps_valid_vectors() {
        let v = [0.2, 0.3, 0.5];
        assert_eq!(clamp_simplex(&v, 0.05), v.to_vec());
    }

    #[test]
    fn clamp_overfull_vector_respects_floor() {
        let out = clamp_simplex(&[1.5, 0.0], 0.02);
        assert_eq!(out[1], 0.02);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(clamp_simplex(&out, 0.02), out);
    }

    #[test]
    fn assemble_identity_case() {
        let decomp = TensorEigenDecomposition {
            lambdas: vec![1.0, 1.0],
            vectors: DMatrix::identity(2, 2),
            residual_norm: 0.0,
        };
        let raw = assemble_parameters(&DMatrix::identity(2, 2), &DVector::from_element(2, 1.0), &decomp).unwrap();
        assert_eq!(raw.pi, DMatrix::identity(2, 2));
        assert_eq!(raw.w, vec![1.0, 1.0]);

        let doubled = TensorEigenDecomposition { lambdas: vec![2.0, 2.0], ..decomp };
        let raw2 = assemble_parameters(&DMatrix::identity(2, 2), &DVector::from_element(2, 1.0), &doubled).unwrap();
        assert_eq!(raw2.w, vec![0.25, 0.25]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = FitConfig::new(2, 0);
        cfg.eps_w = Some(1.5);
        let m = crate::model::RandomModelSpec::new(5, 2, 2, 0).build().unwrap();
        assert!(fit_exact(&m, &cfg).is_err());
        assert!(fit_exact(&m, &FitConfig::new(11, 0)).is_err());
    }
}
