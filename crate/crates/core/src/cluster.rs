//! Assigning samples to components of a fitted model.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MixtureModel, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterMethod {
    ProjectedDistance,
    PosteriorMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// 1-based component per sample.
    pub labels: Vec<u32>,
    pub method: ClusterMethod,
}

fn check_dims(samples: &SampleSet, model: &MixtureModel) -> Result<()> {
    if (samples.n(), samples.ell()) != (model.n(), model.ell()) {
        return Err(Error::DimensionMismatch(format!(
            "samples have (n, ℓ) = {:?}, model {:?}",
            (samples.n(), samples.ell()),
            (model.n(), model.ell())
        )));
    }
    Ok(())
}

/// Nearest center after projecting by `Πᵀ`: sample `x` maps to `Πᵀx` and
/// component `q` to `Πᵀπ_q`. Ties go to the lowest component.
pub fn cluster_projected(samples: &SampleSet, model: &MixtureModel) -> Result<ClusterAssignment> {
    check_dims(samples, model)?;
    let pi = model.pi();
    let r = model.r();
    let centers = pi.transpose() * pi;
    let labels = (0..samples.len())
        .into_par_iter()
        .map(|t| {
            let mut z = DVector::<f64>::zeros(r);
            for (i, &y) in samples.row(t).iter().enumerate() {
                z += pi.row(samples.encoded_index(i, y)).transpose();
            }
            let mut best = (f64::INFINITY, 0);
            for q in 0..r {
                let d = (&z - centers.column(q)).norm_squared();
                if d < best.0 {
                    best = (d, q);
                }
            }
            best.1 as u32 + 1
        })
        .collect();
    Ok(ClusterAssignment { labels, method: ClusterMethod::ProjectedDistance })
}

/// Posterior mode `argmax_q log w_q + Σ_i log π⁽ⁱ⁾_{y_i,q}`, lowest `q` on
/// ties. Zero probabilities are floored at the smallest positive double.
pub fn cluster_map(samples: &SampleSet, model: &MixtureModel) -> Result<ClusterAssignment> {
    check_dims(samples, model)?;
    let r = model.r();
    let log_w: Vec<f64> = model.weights().iter().map(|w| w.max(f64::MIN_POSITIVE).ln()).collect();
    let log_pi = model.pi().map(|p| p.max(f64::MIN_POSITIVE).ln());
    let labels = (0..samples.len())
        .into_par_iter()
        .map(|t| {
            let row = samples.row(t);
            let mut best = (f64::NEG_INFINITY, 0);
            for q in 0..r {
                let score = log_w[q]
                    + row
                        .iter()
                        .enumerate()
                        .map(|(i, &y)| log_pi[(samples.encoded_index(i, y), q)])
                        .sum::<f64>();
                if score > best.0 {
                    best = (score, q);
                }
            }
            best.1 as u32 + 1
        })
        .collect();
    Ok(ClusterAssignment { labels, method: ClusterMethod::PosteriorMap })
}

/// Separation margin
/// `max_{i≠j} (‖π_i−π_j‖² − 2‖Π‖_F √(2 log(r/δ))) / ((‖π_i−π_j‖ + 2√(2 log(r/δ))) √r)`
/// of a model; positive values indicate the projected distances separate
/// the components. `None` for a single component.
pub fn separation_margin(model: &MixtureModel, delta: f64) -> Option<f64> {
    let r = model.r();
    if r < 2 {
        return None;
    }
    let pi = model.pi();
    let slack = (2.0 * (r as f64 / delta).ln()).sqrt();
    let frob = pi.norm();
    let mut best = f64::NEG_INFINITY;
    for i in 0..r {
        for j in 0..r {
            if i == j {
                continue;
            }
            let dist = (pi.column(i) - pi.column(j)).norm();
            let value = (dist * dist - 2.0 * frob * slack) / ((dist + 2.0 * slack) * (r as f64).sqrt());
            best = best.max(value);
        }
    }
    Some(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn point_mass_model() -> MixtureModel {
        let pi = DMatrix::from_row_slice(6, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        MixtureModel::new(3, 2, 2, vec![0.4, 0.6], pi).unwrap()
    }

    #[test]
    fn point_masses_are_recovered_by_both_methods() {
        let m = point_mass_model();
        let s = crate::model::sample(&m, 200, 4);
        let truth = s.types().unwrap().to_vec();
        assert_eq!(cluster_projected(&s, &m).unwrap().labels, truth);
        assert_eq!(cluster_map(&s, &m).unwrap().labels, truth);
    }

    #[test]
    fn uniform_model_ties_to_first() {
        let m = MixtureModel::new(2, 2, 2, vec![0.5, 0.5], DMatrix::from_element(4, 2, 0.5)).unwrap();
        let s = crate::model::sample(&m, 30, 1);
        assert!(cluster_map(&s, &m).unwrap().labels.iter().all(|&l| l == 1));
        assert!(cluster_projected(&s, &m).unwrap().labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn single_component() {
        let m = crate::model::RandomModelSpec::new(4, 3, 1, 2).build().unwrap();
        let s = crate::model::sample(&m, 20, 0);
        assert!(cluster_projected(&s, &m).unwrap().labels.iter().all(|&l| l == 1));
        assert_eq!(separation_margin(&m, 0.05), None);
    }
}
