//! Quenched synaptic weight laws and their sampling.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Law of the entries `J_ij`, expressed through N-independent scales.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightLaw {
    /// Independent entries `N(mean / N, variance / N)`.
    Gaussian { mean: f64, variance: f64 },
    /// Every neuron receives exactly `connections` inputs of weight
    /// `-magnitude` from distinct presynaptic neurons.
    DiluteTwoPoint {
        magnitude: f64,
        connections: usize,
        #[serde(default = "default_true")]
        exclude_self: bool,
    },
}

fn default_true() -> bool {
    true
}

impl WeightLaw {
    pub fn gaussian(mean: f64, variance: f64) -> Self {
        WeightLaw::Gaussian { mean, variance }
    }

    pub fn dilute(magnitude: f64, connections: usize) -> Self {
        WeightLaw::DiluteTwoPoint {
            magnitude,
            connections,
            exclude_self: true,
        }
    }

    /// `(J̄, J²)` such that the field `Σ_j J_ij x_j` has mean `J̄ x̄` and
    /// variance `J² mean(x²)` to leading order. For the dilute law these are
    /// `-J C` and `J² C`.
    pub fn order_scales(&self) -> (f64, f64) {
        match *self {
            WeightLaw::Gaussian { mean, variance } => (mean, variance),
            WeightLaw::DiluteTwoPoint {
                magnitude, connections, ..
            } => (
                -magnitude * connections as f64,
                magnitude * magnitude * connections as f64,
            ),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            WeightLaw::Gaussian { mean, variance } => {
                if !mean.is_finite() || !variance.is_finite() || variance < 0.0 {
                    return Err(Error::config(format!(
                        "gaussian weight law needs finite mean and variance >= 0 (got {mean}, {variance})"
                    )));
                }
            }
            WeightLaw::DiluteTwoPoint {
                magnitude,
                connections,
                exclude_self,
            } => {
                let available = if exclude_self { n.saturating_sub(1) } else { n };
                if connections > available {
                    return Err(Error::config(format!(
                        "dilute law with C = {connections} connections exceeds the {available} available presynaptic neurons (N = {n})"
                    )));
                }
                if !magnitude.is_finite() || magnitude < 0.0 {
                    return Err(Error::config(format!(
                        "weight magnitude must be >= 0 (got {magnitude})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Dense row-major `N x N` matrix; row `i` holds the inputs of neuron `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// Fixed in-degree matrix whose nonzero entries all equal `value`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRows {
    pub n: usize,
    pub value: f64,
    /// Presynaptic indices of each row, sorted.
    pub rows: Vec<Vec<u32>>,
}

impl SparseRows {
    /// Postsynaptic targets of each neuron (transpose adjacency).
    pub fn targets(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.n];
        for (i, row) in self.rows.iter().enumerate() {
            for &j in row {
                out[j as usize].push(i as u32);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum WeightMatrix {
    Dense(DenseMatrix),
    Sparse(SparseRows),
}

impl WeightMatrix {
    pub fn n(&self) -> usize {
        match self {
            WeightMatrix::Dense(m) => m.n,
            WeightMatrix::Sparse(m) => m.n,
        }
    }

    /// `out_i = sum_j J_ij x_j`; each row is summed sequentially so the
    /// result does not depend on the thread count.
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        match self {
            WeightMatrix::Dense(m) => {
                out.par_iter_mut().enumerate().with_min_len(64).for_each(|(i, o)| {
                    *o = m.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
                });
            }
            WeightMatrix::Sparse(m) => {
                out.par_iter_mut().enumerate().with_min_len(64).for_each(|(i, o)| {
                    *o = m.value * m.rows[i].iter().map(|&j| x[j as usize]).sum::<f64>();
                });
            }
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            WeightMatrix::Dense(m) => m.clone(),
            WeightMatrix::Sparse(s) => {
                let mut m = DenseMatrix::zeros(s.n);
                for (i, row) in s.rows.iter().enumerate() {
                    for &j in row {
                        m.data[i * s.n + j as usize] = s.value;
                    }
                }
                m
            }
        }
    }

    /// Relabels neurons: new neuron `k` is old neuron `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> WeightMatrix {
        let d = self.to_dense();
        let n = d.n;
        let mut out = DenseMatrix::zeros(n);
        for a in 0..n {
            for b in 0..n {
                out.data[a * n + b] = d.get(perm[a], perm[b]);
            }
        }
        WeightMatrix::Dense(out)
    }
}

/// Draws one quenched weight matrix for `n` neurons.
pub fn sample_weights(law: &WeightLaw, n: usize, rng: &mut RngStream) -> Result<WeightMatrix> {
    if n == 0 {
        return Err(Error::config("network size N must be >= 1"));
    }
    law.validate(n)?;
    match *law {
        WeightLaw::Gaussian { mean, variance } => {
            let loc = mean / n as f64;
            let scale = (variance / n as f64).sqrt();
            let data = (0..n * n)
                .map(|_| {
                    if scale == 0.0 {
                        loc
                    } else {
                        loc + scale * rng.sample::<f64, _>(StandardNormal)
                    }
                })
                .collect();
            Ok(WeightMatrix::Dense(DenseMatrix { n, data }))
        }
        WeightLaw::DiluteTwoPoint {
            magnitude,
            connections,
            exclude_self,
        } => {
            let rows = (0..n)
                .map(|i| {
                    let mut row: Vec<u32> = if exclude_self {
                        index::sample(rng, n - 1, connections)
                            .into_iter()
                            .map(|j| if j >= i { j + 1 } else { j } as u32)
                            .collect()
                    } else {
                        index::sample(rng, n, connections)
                            .into_iter()
                            .map(|j| j as u32)
                            .collect()
                    };
                    row.sort_unstable();
                    row
                })
                .collect();
            Ok(WeightMatrix::Sparse(SparseRows {
                n,
                value: -magnitude,
                rows,
            }))
        }
    }
}

/// Gaussian block statistics of a two-population network: entries of
/// block `(k, j)` are `N(mean[k][j] / N_j, variance[k][j] / N_j)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockLaw {
    pub sizes: [usize; 2],
    pub mean: [[f64; 2]; 2],
    pub variance: [[f64; 2]; 2],
}

impl BlockLaw {
    pub fn n(&self) -> usize {
        self.sizes[0] + self.sizes[1]
    }

    pub fn population_of(&self, i: usize) -> usize {
        usize::from(i >= self.sizes[0])
    }
}

pub fn sample_block_weights(law: &BlockLaw, rng: &mut RngStream) -> Result<WeightMatrix> {
    let n = law.n();
    if law.sizes.contains(&0) {
        return Err(Error::config("both populations need at least one neuron"));
    }
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        let k = law.population_of(i);
        for j in 0..n {
            let p = law.population_of(j);
            let nj = law.sizes[p] as f64;
            let loc = law.mean[k][p] / nj;
            let scale = (law.variance[k][p] / nj).sqrt();
            let z: f64 = rng.sample(StandardNormal);
            data.push(loc + scale * z);
        }
    }
    Ok(WeightMatrix::Dense(DenseMatrix { n, data }))
}
