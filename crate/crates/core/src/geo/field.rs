use nalgebra::{Cholesky, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::StructuredGrid;
use crate::error::{invalid, Error, Result};

const BASE_JITTER: f64 = 1e-10;
const MAX_JITTER: f64 = 1e-6;

/// Exponential-covariance Gaussian sampler for log-permeability over the
/// cell centres of a grid.
///
/// `Cov(x_i, x_j) = sigma * exp(-|x_i - x_j| / corr_len)` with Euclidean
/// distance. The dense lower Cholesky factor is computed once; the sampler is
/// immutable afterwards and can be shared between threads.
#[derive(Clone, Debug)]
pub struct GaussianFieldSampler {
    sigma: f64,
    corr_len: f64,
    seed: u64,
    jitter: f64,
    factor: DMatrix<f64>,
}

impl GaussianFieldSampler {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn corr_len(&self) -> f64 {
        self.corr_len
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Absolute diagonal jitter that was needed for the factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower-triangular factor `L` with `L Lᵀ ≈ Cov`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn len(&self) -> usize {
        self.factor.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Draws the field for one realization. The standard-normal stream is
    /// seeded with `seed + realization`, so the result is a pure function of
    /// the sampler and the realization id.
    pub fn sample(&self, realization: u64) -> PermeabilityField {
        let stream_seed = self.seed.wrapping_add(realization);
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
        let n = self.len();
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut log_k = vec![0.0; n];
        for j in 0..n {
            let zj = z[j];
            let col = self.factor.column(j);
            for i in j..n {
                log_k[i] += col[i] * zj;
            }
        }
        PermeabilityField {
            values: log_k.iter().map(|v| v.exp()).collect(),
            seed: stream_seed,
            realization,
        }
    }
}

/// Per-cell positive permeability values (m²) for one realization.
#[derive(Clone, Debug, PartialEq)]
pub struct PermeabilityField {
    values: Vec<f64>,
    seed: u64,
    realization: u64,
}

impl PermeabilityField {
    pub fn new(values: Vec<f64>, seed: u64, realization: u64) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(invalid(format!("permeability must be positive and finite, got {bad}")));
        }
        Ok(Self {
            values,
            seed,
            realization,
        })
    }

    /// Homogeneous field, mostly useful for tests.
    pub fn uniform(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n], 0, 0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn log_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.ln()).collect()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn realization(&self) -> u64 {
        self.realization
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Dense exponential covariance over the grid cell centres.
pub fn exponential_covariance(grid: &StructuredGrid, sigma: f64, corr_len: f64) -> DMatrix<f64> {
    let centers = grid.centers();
    let n = centers.len();
    let mut cov = DMatrix::zeros(n, n);
    for j in 0..n {
        cov[(j, j)] = sigma;
        for i in (j + 1)..n {
            let dx = centers[i][0] - centers[j][0];
            let dy = centers[i][1] - centers[j][1];
            let c = sigma * (-(dx * dx + dy * dy).sqrt() / corr_len).exp();
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    cov
}

pub fn build_sampler(
    grid: &StructuredGrid,
    sigma: f64,
    corr_len: f64,
    seed: u64,
) -> Result<GaussianFieldSampler> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("field variance must be positive, got {sigma}")));
    }
    if !(corr_len > 0.0 && corr_len.is_finite()) {
        return Err(invalid(format!("correlation length must be positive, got {corr_len}")));
    }
    let mut jitter = 0.0;
    loop {
        let mut cov = exponential_covariance(grid, sigma, corr_len);
        if jitter > 0.0 {
            for i in 0..cov.nrows() {
                cov[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(cov) {
            return Ok(GaussianFieldSampler {
                sigma,
                corr_len,
                seed,
                jitter,
                factor: chol.unpack(),
            });
        }
        jitter = if jitter == 0.0 { BASE_JITTER * sigma } else { jitter * 10.0 };
        if jitter > MAX_JITTER * sigma {
            return Err(Error::Factorization { jitter });
        }
    }
}

pub fn sample_field(sampler: &GaussianFieldSampler, realization: u64) -> PermeabilityField {
    sampler.sample(realization)
}
