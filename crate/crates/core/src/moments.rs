//! Empirical masked moments.
//!
//! The first `⌊N/2⌋` samples feed the second moment and the remaining ones
//! feed the third. Neither the block-diagonal part of the second moment nor
//! the `(ℓn)³` third moment is ever formed: the third moment only exists
//! through its contraction by a `ℓn × r` matrix.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result, Stage};
use crate::model::{MaskedMatrix, MixtureModel, SampleSet};
use crate::tensor::CoreTensor;

/// Masked second moment of the first half of a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments {
    pub s2_masked: MaskedMatrix,
    /// Index of the first sample of the second half.
    pub sample_split: usize,
    /// Samples in the first and second halves.
    pub n_used: [usize; 2],
}

/// First half gets `⌊N/2⌋` samples, the second half the rest.
pub fn split_point(len: usize) -> usize {
    len / 2
}

/// `P_Ω₂((1/N₁) Σ_{t<N₁} x_t x_tᵀ)` over the first half.
///
/// Each sample touches only the `n(n−1)` off-block cells selected by its
/// labels. Co-occurrences are counted in integers, so the result does not
/// depend on how the work is split across threads.
pub fn masked_second_moment(samples: &SampleSet) -> Result<EmpiricalMoments> {
    let len = samples.len();
    if len < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {len}")));
    }
    let split = split_point(len);
    let first = samples.slice(0..split);
    let counts = cooccurrence_counts(&first);
    let d = samples.n() * samples.ell();
    let data = DMatrix::from_fn(d, d, |i, j| counts[i * d + j] as f64 / split as f64);
    Ok(EmpiricalMoments {
        s2_masked: MaskedMatrix::mask(data, samples.ell())?,
        sample_split: split,
        n_used: [split, len - split],
    })
}

fn cooccurrence_counts(samples: &SampleSet) -> Vec<u64> {
    let n = samples.n();
    let d = n * samples.ell();
    let len = samples.len();
    // bound the number of per-chunk count tables by memory
    let max_tables = ((1usize << 26) / (d * d).max(1)).max(1);
    let chunk = len.div_ceil(len.div_ceil(2048).clamp(1, max_tables)).max(1);
    let partials: Vec<Vec<u64>> = samples
        .labels()
        .par_chunks(chunk * n)
        .map(|rows| {
            let mut counts = vec![0u64; d * d];
            let mut idx = vec![0usize; n];
            for row in rows.chunks_exact(n) {
                for (i, &y) in row.iter().enumerate() {
                    idx[i] = samples.encoded_index(i, y);
                }
                for i in 0..n {
                    let base = idx[i] * d;
                    for j in 0..n {
                        if i != j {
                            counts[base + idx[j]] += 1;
                        }
                    }
                }
            }
            counts
        })
        .collect();
    partials
        .into_iter()
        .reduce(|mut a, b| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            a
        })
        .unwrap_or_else(|| vec![0; d * d])
}

/// `P_Ω₃(S₃)[Q, Q, Q]` with `S₃` the empirical third moment of the second
/// half of `samples`.
pub fn masked_third_contraction(samples: &SampleSet, q: &DMatrix<f64>) -> Result<CoreTensor> {
    let split = split_point(samples.len());
    if samples.len() - split == 0 {
        return Err(Error::InvalidInput("second half of the sample set is empty".into()));
    }
    third_contraction_of(&samples.slice(split..samples.len()), q)
}

/// `P_Ω₃((1/N) Σ_t x_t⊗x_t⊗x_t)[Q, Q, Q]` over every sample in `samples`.
///
/// With `a_m = Q⁽ᵐ⁾ᵀ x⁽ᵐ⁾` (the row of `Q` picked by the label of
/// coordinate `m`), the per-sample term is the sum of `a_i⊗a_j⊗a_k` over
/// pairwise distinct blocks, obtained by inclusion–exclusion from the full
/// triple product; see [`distinct_block_cube`].
pub fn third_contraction_of(samples: &SampleSet, q: &DMatrix<f64>) -> Result<CoreTensor> {
    let n = samples.n();
    let d = n * samples.ell();
    if q.nrows() != d {
        return Err(Error::DimensionMismatch(format!("Q has {} rows, expected ℓn = {d}", q.nrows())));
    }
    let len = samples.len();
    if len == 0 {
        return Err(Error::InvalidInput("empty sample set".into()));
    }
    let r = q.ncols();
    let chunk = fixed_chunk(len);
    let partials: Vec<CoreTensor> = samples
        .labels()
        .par_chunks(chunk * n)
        .map(|rows| {
            let mut acc = CubeAccumulator::new(r);
            let mut picked = DMatrix::zeros(n, r);
            for row in rows.chunks_exact(n) {
                for (m, &y) in row.iter().enumerate() {
                    picked.row_mut(m).copy_from(&q.row(samples.encoded_index(m, y)));
                }
                acc.add(1.0, &picked);
            }
            acc.finish()
        })
        .collect();
    let mut total = pairwise_sum(partials);
    total.scale(1.0 / len as f64);
    if !total.is_finite() {
        return Err(Error::IllConditioned {
            stage: Stage::Moments,
            detail: "non-finite third-moment contraction".into(),
        });
    }
    Ok(total)
}

/// Sum of `a_i ⊗ a_j ⊗ a_k` over pairwise distinct rows `i, j, k` of
/// `vectors` (one row per block):
///
/// `s⊗s⊗s − Σ_perm s⊗P − ... + 2C` with `s = Σ a_m`, `P = Σ a_m a_mᵀ`,
/// `C = Σ a_m⊗a_m⊗a_m`.
pub fn distinct_block_cube(vectors: &DMatrix<f64>) -> CoreTensor {
    let mut acc = CubeAccumulator::new(vectors.ncols());
    acc.add(1.0, vectors);
    acc.finish()
}

/// Accumulates weighted distinct-block cubes without allocating per term.
struct CubeAccumulator {
    r: usize,
    out: CoreTensor,
    s: Vec<f64>,
    pair: Vec<f64>,
}

impl CubeAccumulator {
    fn new(r: usize) -> Self {
        Self { r, out: CoreTensor::zeros(r), s: vec![0.0; r], pair: vec![0.0; r * r] }
    }

    fn add(&mut self, weight: f64, vectors: &DMatrix<f64>) {
        let r = self.r;
        self.s.iter_mut().for_each(|x| *x = 0.0);
        self.pair.iter_mut().for_each(|x| *x = 0.0);
        let out = self.out.as_mut_slice();
        for m in 0..vectors.nrows() {
            let a: Vec<f64> = vectors.row(m).iter().cloned().collect();
            for x in 0..r {
                self.s[x] += a[x];
                for y in 0..r {
                    self.pair[x * r + y] += a[x] * a[y];
                }
            }
            // +2 C
            for x in 0..r {
                for y in 0..r {
                    let axy = 2.0 * weight * a[x] * a[y];
                    for z in 0..r {
                        out[(x * r + y) * r + z] += axy * a[z];
                    }
                }
            }
        }
        let (s, p) = (&self.s, &self.pair);
        for x in 0..r {
            for y in 0..r {
                for z in 0..r {
                    out[(x * r + y) * r + z] += weight
                        * (s[x] * s[y] * s[z]
                            - s[x] * p[y * r + z]
                            - s[y] * p[x * r + z]
                            - s[z] * p[x * r + y]);
                }
            }
        }
    }

    fn finish(self) -> CoreTensor {
        self.out
    }
}

/// Chunk length that depends only on the number of items.
fn fixed_chunk(len: usize) -> usize {
    len.div_ceil(len.div_ceil(1024).min(256)).max(1)
}

/// Ordered pairwise reduction, so the rounding pattern is fixed by the
/// number of partials alone.
pub(crate) fn pairwise_sum(mut parts: Vec<CoreTensor>) -> CoreTensor {
    assert!(!parts.is_empty());
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.add_assign(&b);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap()
}

/// `P_Ω₂(M₂)` from the exact model.
pub fn exact_masked_second_moment(model: &MixtureModel) -> MaskedMatrix {
    MaskedMatrix::mask(crate::model::oracle_m2(model), model.ell()).expect("model dimensions are consistent")
}

/// `P_Ω₃(M₃)[Q, Q, Q]` from the exact model, via the same distinct-block
/// expansion applied to `Q⁽ᵐ⁾ᵀ π_q⁽ᵐ⁾` for each component.
pub fn exact_masked_third_contraction(model: &MixtureModel, q: &DMatrix<f64>) -> Result<CoreTensor> {
    let (n, ell) = (model.n(), model.ell());
    if q.nrows() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "Q has {} rows, expected ℓn = {}",
            q.nrows(),
            model.dim()
        )));
    }
    let mut acc = CubeAccumulator::new(q.ncols());
    for comp in 0..model.r() {
        let mut vectors = DMatrix::zeros(n, q.ncols());
        for m in 0..n {
            let block = q.rows(m * ell, ell);
            let p = model.pi().view((m * ell, comp), (ell, 1));
            vectors.row_mut(m).copy_from(&(p.transpose() * block));
        }
        acc.add(model.weights()[comp], &vectors);
    }
    Ok(acc.finish())
}

/// Unmasked whitened third moment `M₃[Q, Q, Q] = Σ_q w_q (Qᵀπ_q)^{⊗3}`.
pub fn exact_whitened_third_moment(model: &MixtureModel, q: &DMatrix<f64>) -> CoreTensor {
    let projected = q.transpose() * model.pi();
    CoreTensor::from_rank_one_sum(model.weights().as_slice(), &projected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{oracle_m2, zero_block_diagonal, RandomModelSpec};

    #[test]
    fn point_mass_pair_gives_unit_off_block_entries() {
        let s = SampleSet::from_rows(2, 2, &[vec![1, 2], vec![1, 2]]).unwrap();
        let m = masked_second_moment(&s).unwrap();
        assert_eq!(m.n_used, [1, 1]);
        let d = m.s2_masked.data();
        // labels (1, 2) encode to indices 0 and 3
        assert_eq!(d[(0, 3)], 1.0);
        assert_eq!(d[(3, 0)], 1.0);
        assert_eq!(d.iter().filter(|&&x| x != 0.0).count(), 2);
    }

    #[test]
    fn handmade_four_samples() {
        // first half: (1,1), (2,1); second half ignored
        let s = SampleSet::from_rows(2, 2, &[vec![1, 1], vec![2, 1], vec![2, 2], vec![2, 2]]).unwrap();
        let m = masked_second_moment(&s).unwrap();
        let want = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 0.0, 0.5, 0.0, //
                0.0, 0.0, 0.5, 0.0, //
                0.5, 0.5, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0,
            ],
        );
        assert_eq!(m.s2_masked.data(), &want);
    }

    #[test]
    fn odd_count_split() {
        let s = SampleSet::from_rows(2, 2, &[vec![1, 1], vec![2, 1], vec![2, 2]]).unwrap();
        let m = masked_second_moment(&s).unwrap();
        assert_eq!((m.sample_split, m.n_used), (1, [1, 2]));
        assert!(masked_second_moment(&SampleSet::from_rows(2, 2, &[vec![1, 1]]).unwrap()).is_err());
    }

    #[test]
    fn zero_q_gives_zero_tensor() {
        let m = RandomModelSpec::new(4, 3, 2, 1).build().unwrap();
        let s = crate::model::sample(&m, 20, 0);
        let t = masked_third_contraction(&s, &DMatrix::zeros(12, 2)).unwrap();
        assert_eq!(t.frobenius_norm(), 0.0);
    }

    #[test]
    fn exact_contraction_matches_masked_oracle() {
        let m = RandomModelSpec::new(4, 2, 2, 3).build().unwrap();
        let q = DMatrix::from_fn(8, 2, |i, j| ((i * 3 + j * 5) % 7) as f64 - 3.0);
        let full = crate::model::oracle_m3(&m);
        let masked = CoreTensor::from_fn(8, |i, j, k| {
            let (bi, bj, bk) = (i / 2, j / 2, k / 2);
            if bi != bj && bj != bk && bi != bk {
                full.get(i, j, k)
            } else {
                0.0
            }
        });
        let want = masked.multilinear(&q);
        let got = exact_masked_third_contraction(&m, &q).unwrap();
        assert!(got.sub(&want).frobenius_norm() < 1e-12);
    }

    #[test]
    fn large_sample_second_moment_approaches_oracle() {
        let m = RandomModelSpec::new(5, 3, 2, 7).build().unwrap();
        let s = crate::model::sample(&m, 100_000, 5);
        let got = masked_second_moment(&s).unwrap();
        let mut want = oracle_m2(&m);
        zero_block_diagonal(&mut want, 3);
        let err = crate::linalg::spectral_norm(&(got.s2_masked.data() - want));
        // 8 √(n² log(nℓ/δ) / |S|) with δ = 0.01
        let bound = 8.0 * (25.0 * (15.0f64 / 0.01).ln() / 100_000.0).sqrt();
        assert!(err < bound, "{err} vs {bound}");
    }
}
