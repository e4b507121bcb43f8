use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;

use super::PodBasis;
use crate::error::{invalid, Error, Result};
use crate::sparse::dense_t_sparse;

/// Greedy DEIM interpolation indices of the columns of `v`.
///
/// The first index maximizes `|v₁|`; each later one maximizes the residual of
/// interpolating the next column at the indices chosen so far. Ties go to the
/// smallest row.
pub fn deim_select_points(v: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (n, m) = v.shape();
    if m == 0 || m > n {
        return Err(invalid(format!("DEIM basis shape {:?} is not tall", v.shape())));
    }
    let argmax = |col: &DVector<f64>| -> usize {
        col.iter().enumerate().fold(0, |best, (i, x)| if x.abs() > col[best].abs() { i } else { best })
    };
    let mut points = Vec::with_capacity(m);
    for j in 0..m {
        let vj = v.column(j).into_owned();
        let residual = if j == 0 {
            vj.clone()
        } else {
            let pv = DMatrix::from_fn(j, j, |a, b| v[(points[a], b)]);
            let rhs = DVector::from_fn(j, |a, _| v[(points[a], j)]);
            let c = pv
                .lu()
                .solve(&rhs)
                .ok_or_else(|| invalid("singular interpolation matrix during DEIM selection"))?;
            &vj - v.columns(0, j) * c
        };
        let p = argmax(&residual);
        if !(residual[p].abs() > 1e-12 * vj.norm().max(f64::MIN_POSITIVE)) {
            return Err(invalid(format!("DEIM basis is rank deficient at column {j}")));
        }
        points.push(p);
    }
    Ok(points)
}

/// Nonlinearity basis `V`, its interpolation indices, and the oblique
/// projector factor `W = V (PᵀV)⁻¹` shared by every DEIM matrix built on it.
#[derive(Clone, Debug)]
pub struct DeimBasis {
    v: DMatrix<f64>,
    points: Vec<usize>,
    w: DMatrix<f64>,
    condition: f64,
}

impl DeimBasis {
    pub fn new(v: DMatrix<f64>, points: Vec<usize>) -> Result<Self> {
        let (n, m) = v.shape();
        if points.len() != m || points.iter().any(|&p| p >= n) {
            return Err(invalid("DEIM points do not match the basis"));
        }
        let mut seen = points.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != m {
            return Err(invalid("DEIM points are not distinct"));
        }
        let pv = DMatrix::from_fn(m, m, |a, b| v[(points[a], b)]);
        let sv = pv.singular_values();
        let condition = sv.max() / sv.min();
        let inv = pv
            .try_inverse()
            .filter(|_| condition.is_finite())
            .ok_or_else(|| Error::Numeric("PᵀV is singular".into()))?;
        let w = &v * inv;
        Ok(Self { v, points, w, condition })
    }

    /// POD of the nonlinearity snapshots truncated at `m`, with greedy points.
    pub fn from_snapshots(x_f: &DMatrix<f64>, m: usize) -> Result<Self> {
        let pod = super::compute_pod(x_f, m)?;
        Self::from_pod(&pod)
    }

    pub fn from_pod(pod: &PodBasis) -> Result<Self> {
        let v = pod.matrix().clone();
        let points = deim_select_points(&v)?;
        Self::new(v, points)
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// 2-norm condition number of `PᵀV`.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `W = V (PᵀV)⁻¹`.
    pub fn interpolator(&self) -> &DMatrix<f64> {
        &self.w
    }
}

/// DEIM matrix `D = U_sᵀ B V (PᵀV)⁻¹` and the sampled rows `PᵀU_s`.
#[derive(Clone, Debug)]
pub struct DeimOperator {
    pub d: DMatrix<f64>,
    pub sampled_basis: DMatrix<f64>,
    pub points: Vec<usize>,
}

pub fn build_deim_operator(u_s: &DMatrix<f64>, b: &CsrMatrix<f64>, deim: &DeimBasis) -> Result<DeimOperator> {
    if u_s.nrows() != b.nrows() || b.ncols() != deim.v.nrows() {
        return Err(invalid("DEIM operator inputs disagree in size"));
    }
    let ut_b = dense_t_sparse(u_s, b);
    Ok(DeimOperator {
        d: ut_b * &deim.w,
        sampled_basis: DMatrix::from_fn(deim.len(), u_s.ncols(), |a, c| u_s[(deim.points[a], c)]),
        points: deim.points.clone(),
    })
}
