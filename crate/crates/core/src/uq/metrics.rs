use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// `(‖y − ŷ‖₂, ‖y − ŷ‖∞)` for one realization and time.
pub fn time_error_metrics(reference: &[f64], candidate: &[f64]) -> Result<(f64, f64)> {
    if reference.len() != candidate.len() {
        return Err(invalid("metric inputs differ in length"));
    }
    let (sq, inf) = reference
        .iter()
        .zip(candidate)
        .fold((0.0, 0.0f64), |(s, m), (a, b)| (s + (a - b).powi(2), m.max((a - b).abs())));
    Ok((sq.sqrt(), inf))
}

/// `‖(y − ŷ) / y‖₂` with elementwise division.
pub fn relative_norm(reference: &[f64], candidate: &[f64]) -> Result<f64> {
    if reference.len() != candidate.len() {
        return Err(invalid("metric inputs differ in length"));
    }
    let mut sq = 0.0;
    for (a, b) in reference.iter().zip(candidate) {
        if *a == 0.0 {
            return Err(Error::InvalidInput("reference has a zero component".into()));
        }
        sq += ((a - b) / a).powi(2);
    }
    Ok(sq.sqrt())
}

/// Running mean and maximum of per-(realization, time) relative norms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RelativeErrorAccumulator {
    sum: f64,
    max: f64,
    count: usize,
}

impl RelativeErrorAccumulator {
    /// Adds every column of an `n × T` pair.
    pub fn add_trajectory(&mut self, reference: &DMatrix<f64>, candidate: &DMatrix<f64>) -> Result<()> {
        if reference.shape() != candidate.shape() {
            return Err(invalid("trajectory shapes differ"));
        }
        for (a, b) in reference.column_iter().zip(candidate.column_iter()) {
            let v = relative_norm(a.as_slice(), b.as_slice())?;
            self.add(v);
        }
        Ok(())
    }

    pub fn add(&mut self, value: f64) {
        self.sum += value;
        self.max = self.max.max(value);
        self.count += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        self.sum += other.sum;
        self.max = self.max.max(other.max);
        self.count += other.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `(L2_rel, L2_rel_max)`.
    pub fn finish(&self) -> Option<(f64, f64)> {
        (self.count > 0).then(|| (self.sum / self.count as f64, self.max))
    }
}

/// `(L2_rel, L2_rel_max)` over matching ensembles of `n × T` trajectories.
pub fn relative_error_metrics(reference: &[DMatrix<f64>], candidate: &[DMatrix<f64>]) -> Result<(f64, f64)> {
    if reference.len() != candidate.len() || reference.is_empty() {
        return Err(invalid("ensembles differ in size or are empty"));
    }
    let mut acc = RelativeErrorAccumulator::default();
    for (a, b) in reference.iter().zip(candidate) {
        acc.add_trajectory(a, b)?;
    }
    acc.finish().ok_or_else(|| invalid("ensembles have no time steps"))
}

/// Column-wise `(L2, L∞)` errors of one trajectory.
pub fn trajectory_time_errors(reference: &DMatrix<f64>, candidate: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    if reference.shape() != candidate.shape() {
        return Err(invalid("trajectory shapes differ"));
    }
    reference
        .column_iter()
        .zip(candidate.column_iter())
        .map(|(a, b)| time_error_metrics(a.as_slice(), b.as_slice()))
        .collect()
}

/// LS fit `U Uᵀ Y` of a trajectory (not clamped).
pub fn ls_fit(u: &DMatrix<f64>, saturation: &DMatrix<f64>) -> DMatrix<f64> {
    u * u.tr_mul(saturation)
}

pub fn column(m: &DMatrix<f64>, t: usize) -> DVector<f64> {
    m.column(t).into_owned()
}
