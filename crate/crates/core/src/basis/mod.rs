//! Snapshot collection, POD bases and DEIM interpolation.

mod deim;

pub use deim::{build_deim_operator, deim_select_points, DeimBasis, DeimOperator};

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::fom::Trajectory;

/// Column-stacked snapshots of several trajectories, realization-major and
/// time-minor: column `l·T + t` is step `t` of realization `l`.
#[derive(Clone, Debug)]
pub struct SnapshotSet {
    pub pressure: DMatrix<f64>,
    pub saturation: DMatrix<f64>,
    pub nonlinearity: DMatrix<f64>,
    pub realizations: usize,
    pub steps: usize,
}

pub fn collect_snapshots(trajectories: &[Trajectory]) -> Result<SnapshotSet> {
    let first = trajectories.first().ok_or_else(|| invalid("no trajectories to collect"))?;
    let n = first.saturation.nrows();
    let (t, tp) = (first.saturation.ncols(), first.pressure.ncols());
    if trajectories.iter().any(|tr| {
        tr.saturation.shape() != (n, t) || tr.pressure.shape() != (n, tp) || tr.fractional_flow.shape() != (n, t)
    }) {
        return Err(invalid("trajectories differ in size"));
    }
    let l = trajectories.len();
    let stack = |cols: usize, pick: &dyn Fn(&Trajectory) -> &DMatrix<f64>| {
        let mut x = DMatrix::zeros(n, l * cols);
        for (k, tr) in trajectories.iter().enumerate() {
            x.columns_mut(k * cols, cols).copy_from(pick(tr));
        }
        x
    };
    Ok(SnapshotSet {
        pressure: stack(tp, &|tr| &tr.pressure),
        saturation: stack(t, &|tr| &tr.saturation),
        nonlinearity: stack(t, &|tr| &tr.fractional_flow),
        realizations: l,
        steps: t,
    })
}

/// Truncated orthonormal POD basis together with the full singular spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct PodBasis {
    u: DMatrix<f64>,
    sigma: Vec<f64>,
}

impl PodBasis {
    /// Wraps an externally built orthonormal basis.
    pub fn from_orthonormal(u: DMatrix<f64>, sigma: Vec<f64>) -> Result<Self> {
        if u.ncols() == 0 || u.ncols() > u.nrows() {
            return Err(invalid(format!("basis shape {:?} is not tall", u.shape())));
        }
        let defect = (u.transpose() * &u - DMatrix::identity(u.ncols(), u.ncols())).amax();
        if defect > 1e-10 {
            return Err(invalid(format!("basis columns are not orthonormal (defect {defect:e})")));
        }
        Ok(Self { u, sigma })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            u: DMatrix::identity(n, n),
            sigma: vec![1.0; n],
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    /// Leading `r` columns of this basis.
    pub fn truncated(&self, r: usize) -> Result<Self> {
        if r == 0 || r > self.rank() {
            return Err(invalid(format!("cannot truncate rank {} basis to {r}", self.rank())));
        }
        Ok(Self {
            u: self.u.columns(0, r).into_owned(),
            sigma: self.sigma.clone(),
        })
    }

    pub fn project(&self, y: &[f64]) -> DVector<f64> {
        self.u.tr_mul(&DVector::from_column_slice(y))
    }

    pub fn reconstruct(&self, y_r: &DVector<f64>) -> DVector<f64> {
        &self.u * y_r
    }

    pub fn project_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.u.tr_mul(x)
    }
}

/// Thin SVD of `x`, keeping `r` left singular vectors. Singular values are
/// sorted descending and every vector is signed so that its largest-magnitude
/// entry is positive.
pub fn compute_pod(x: &DMatrix<f64>, r: usize) -> Result<PodBasis> {
    let k = x.nrows().min(x.ncols());
    if r == 0 || r > k {
        return Err(invalid(format!("rank {r} outside 1..={k}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("snapshot matrix has non-finite entries".into()));
    }
    let svd = x
        .clone()
        .try_svd(true, false, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("SVD did not converge".into()))?;
    let u_all = svd.u.ok_or_else(|| Error::Numeric("SVD returned no left vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut u = DMatrix::zeros(x.nrows(), r);
    for (c, &i) in order.iter().take(r).enumerate() {
        let col = u_all.column(i);
        let lead = col.iter().enumerate().fold(0, |best, (j, v)| if v.abs() > col[best].abs() { j } else { best });
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        u.set_column(c, &(col * sign));
    }
    Ok(PodBasis { u, sigma })
}

/// Smallest rank whose omitted singular-value fraction falls below `threshold`.
pub fn select_rank(sigma: &[f64], threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(invalid(format!("threshold {threshold} outside (0, 1]")));
    }
    if sigma.iter().any(|s| *s < 0.0 || !s.is_finite()) || sigma.windows(2).any(|w| w[1] > w[0]) {
        return Err(invalid("singular values must be finite, nonnegative and nonincreasing"));
    }
    let total: f64 = sigma.iter().sum();
    if total <= 0.0 {
        return Err(invalid("all singular values are zero"));
    }
    let mut tail = total;
    for (r, s) in sigma.iter().enumerate() {
        tail -= s;
        if tail.max(0.0) / total < threshold {
            return Ok(r + 1);
        }
    }
    Ok(sigma.len())
}

/// Number of singular values above `rtol · σ₁`.
pub fn numerical_rank(sigma: &[f64], rtol: f64) -> usize {
    let top = sigma.first().copied().unwrap_or(0.0);
    sigma.iter().take_while(|s| **s > rtol * top).count()
}

pub fn ls_project(basis: &PodBasis, y: &[f64]) -> DVector<f64> {
    basis.project(y)
}

pub fn ls_reconstruct(basis: &PodBasis, y_r: &DVector<f64>) -> DVector<f64> {
    basis.reconstruct(y_r)
}

/// `‖y − U Uᵀ y‖₂`.
pub fn ls_error(basis: &PodBasis, y: &[f64]) -> f64 {
    let fit = basis.reconstruct(&basis.project(y));
    y.iter().zip(fit.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// Frobenius norm of `X − U Uᵀ X`.
pub fn ls_error_matrix(basis: &PodBasis, x: &DMatrix<f64>) -> f64 {
    (x - basis.matrix() * basis.project_matrix(x)).norm()
}
