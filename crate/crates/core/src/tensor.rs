//! Dense cubic third-order tensors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Dense `d×d×d` tensor stored row-major: entry `(a, b, c)` lives at
/// `a·d² + b·d + c`. Used for the whitened `r×r×r` core and, on tiny
/// instances, for the full third moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreTensor {
    dim: usize,
    data: Vec<f64>,
}

impl CoreTensor {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim * dim] }
    }

    pub fn from_vec(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim * dim * dim, "tensor data length");
        Self { dim, data }
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(dim);
        for a in 0..dim {
            for b in 0..dim {
                for c in 0..dim {
                    t.data[(a * dim + b) * dim + c] = f(a, b, c);
                }
            }
        }
        t
    }

    /// `Σ_q weights[q] · v_q ⊗ v_q ⊗ v_q` with `v_q` the columns of `vectors`.
    pub fn from_rank_one_sum(weights: &[f64], vectors: &DMatrix<f64>) -> Self {
        let mut t = Self::zeros(vectors.nrows());
        for (q, &lambda) in weights.iter().enumerate() {
            let v: Vec<f64> = vectors.column(q).iter().cloned().collect();
            t.add_rank_one(lambda, &v);
        }
        t
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[(a * self.dim + b) * self.dim + c]
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, c: usize, value: f64) {
        let d = self.dim;
        self.data[(a * d + b) * d + c] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `self += lambda · v ⊗ v ⊗ v`.
    pub fn add_rank_one(&mut self, lambda: f64, v: &[f64]) {
        let d = self.dim;
        debug_assert_eq!(v.len(), d);
        for a in 0..d {
            let la = lambda * v[a];
            for b in 0..d {
                let lab = la * v[b];
                let row = &mut self.data[(a * d + b) * d..(a * d + b + 1) * d];
                for (slot, &vc) in row.iter_mut().zip(v) {
                    *slot += lab * vc;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn add_assign(&mut self, other: &CoreTensor) {
        assert_eq!(self.dim, other.dim);
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += y;
        }
    }

    pub fn sub(&self, other: &CoreTensor) -> CoreTensor {
        assert_eq!(self.dim, other.dim);
        let data = self.data.iter().zip(&other.data).map(|(x, y)| x - y).collect();
        CoreTensor { dim: self.dim, data }
    }

    /// `T[v, v, v]`.
    pub fn eval(&self, v: &[f64]) -> f64 {
        let tv = self.contract_two(v);
        tv.iter().zip(v).map(|(x, y)| x * y).sum()
    }

    /// `T[I, v, v]`, the vector with entries `Σ_bc T_abc v_b v_c`.
    pub fn contract_two(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|a| {
                let mut acc = 0.0;
                for b in 0..d {
                    let row = &self.data[(a * d + b) * d..(a * d + b + 1) * d];
                    let inner: f64 = row.iter().zip(v).map(|(x, y)| x * y).sum();
                    acc += v[b] * inner;
                }
                acc
            })
            .collect()
    }

    /// Multilinear map `T[Q, Q, Q]` for a `dim × k` matrix `Q`.
    pub fn multilinear(&self, q: &DMatrix<f64>) -> CoreTensor {
        let d = self.dim;
        let k = q.ncols();
        assert_eq!(q.nrows(), d);
        // contract one mode at a time: d³ → d²k → dk² → k³
        let mut stage1 = vec![0.0; d * d * k];
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    let t = self.get(a, b, c);
                    if t == 0.0 {
                        continue;
                    }
                    for z in 0..k {
                        stage1[(a * d + b) * k + z] += t * q[(c, z)];
                    }
                }
            }
        }
        let mut stage2 = vec![0.0; d * k * k];
        for a in 0..d {
            for b in 0..d {
                for z in 0..k {
                    let t = stage1[(a * d + b) * k + z];
                    for y in 0..k {
                        stage2[(a * k + y) * k + z] += t * q[(b, y)];
                    }
                }
            }
        }
        let mut out = CoreTensor::zeros(k);
        for a in 0..d {
            for y in 0..k {
                for z in 0..k {
                    let t = stage2[(a * k + y) * k + z];
                    for x in 0..k {
                        out.data[(x * k + y) * k + z] += t * q[(a, x)];
                    }
                }
            }
        }
        out
    }

    /// Average over the six index permutations.
    pub fn symmetrized(&self) -> CoreTensor {
        CoreTensor::from_fn(self.dim, |a, b, c| {
            (self.get(a, b, c)
                + self.get(a, c, b)
                + self.get(b, a, c)
                + self.get(b, c, a)
                + self.get(c, a, b)
                + self.get(c, b, a))
                / 6.0
        })
    }

    /// Largest deviation from permutation symmetry.
    pub fn asymmetry(&self) -> f64 {
        let sym = self.symmetrized();
        self.data
            .iter()
            .zip(&sym.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.data)
    }

    pub fn from_vector(dim: usize, v: &DVector<f64>) -> CoreTensor {
        CoreTensor::from_vec(dim, v.iter().cloned().collect())
    }
}
