use nalgebra::DVector;

use crate::error::{invalid, Error, Result};
use crate::geo::StructuredGrid;

/// Per-cell sample mean and standard deviation (divisor `N − 1`).
pub fn ensemble_stats(states: &[DVector<f64>]) -> Result<(DVector<f64>, DVector<f64>)> {
    if states.is_empty() {
        return Err(Error::AllFailed);
    }
    if states.len() < 2 {
        return Err(invalid("ensemble statistics need at least two realizations"));
    }
    let n = states[0].len();
    if states.iter().any(|s| s.len() != n) {
        return Err(invalid("ensemble members differ in length"));
    }
    let count = states.len() as f64;
    let mean = states.iter().fold(DVector::zeros(n), |acc, s| acc + s) / count;
    let var = states
        .iter()
        .fold(DVector::zeros(n), |acc: DVector<f64>, s| acc + (s - &mean).map(|d| d * d))
        / (count - 1.0);
    Ok((mean, var.map(f64::sqrt)))
}

/// Smallest bandwidth used when the samples have no spread.
pub const MIN_BANDWIDTH: f64 = 1e-3;

/// Scott's rule `σ̂ · N^(−1/5)`, floored at [`MIN_BANDWIDTH`].
pub fn scott_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("no samples for the density estimate"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok((var.sqrt() * n.powf(-0.2)).max(MIN_BANDWIDTH))
}

/// Gaussian kernel density with bandwidth `h`.
pub fn kde_with_bandwidth(samples: &[f64], h: f64, points: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(invalid("no samples for the density estimate"));
    }
    if !(h > 0.0) {
        return Err(invalid("bandwidth must be positive"));
    }
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(points
        .iter()
        .map(|x| norm * samples.iter().map(|s| (-0.5 * ((x - s) / h).powi(2)).exp()).sum::<f64>())
        .collect())
}

/// Gaussian KDE with Scott's-rule bandwidth.
pub fn kde_pdf(samples: &[f64], points: &[f64]) -> Result<Vec<f64>> {
    kde_with_bandwidth(samples, scott_bandwidth(samples)?, points)
}

/// Probe cells where saturation histories and densities are reported.
#[derive(Clone, Debug, PartialEq)]
pub struct MonitorSet {
    pub cells: Vec<usize>,
    pub coords: Vec<[f64; 2]>,
}

impl MonitorSet {
    pub fn new(grid: &StructuredGrid, coords: &[[f64; 2]]) -> Result<Self> {
        let cells = coords.iter().map(|c| grid.cell_at(c[0], c[1])).collect::<Result<_>>()?;
        Ok(Self {
            cells,
            coords: coords.to_vec(),
        })
    }

    /// Diagonal probes for the quarter five-spot case.
    pub fn diagonal() -> Vec<[f64; 2]> {
        [0.2, 0.35, 0.5, 0.65, 0.8].iter().map(|&v| [v, v]).collect()
    }

    /// Centerline probes for the uniform-flow case.
    pub fn centerline() -> Vec<[f64; 2]> {
        [0.1, 0.3, 0.5, 0.7, 0.9].iter().map(|&x| [x, 0.5]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn stats_hand_values() {
        let s = |v: f64| DVector::from_element(2, v);
        let (mean, std) = ensemble_stats(&[s(0.2), s(0.4), s(0.6)]).unwrap();
        assert_abs_diff_eq!(mean[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(std[1], 0.2, epsilon = 1e-15);
        let (_, std) = ensemble_stats(&[s(0.3), s(0.3)]).unwrap();
        assert_eq!(std.amax(), 0.0);
        assert!(matches!(ensemble_stats(&[]), Err(Error::AllFailed)));
    }

    #[test]
    fn kde_hand_value() {
        let v = kde_with_bandwidth(&[0.0, 1.0], 0.5, &[0.5]).unwrap()[0];
        let normal = (-0.5f64).exp() / (0.5 * (2.0 * std::f64::consts::PI).sqrt());
        assert_abs_diff_eq!(v, normal, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.483941, epsilon = 1e-6);
    }

    fn integral(samples: &[f64]) -> f64 {
        let h = scott_bandwidth(samples).unwrap();
        let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 6.0 * h;
        let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 6.0 * h;
        let n = 4001;
        let dx = (hi - lo) / (n - 1) as f64;
        let pts: Vec<f64> = (0..n).map(|i| lo + i as f64 * dx).collect();
        let d = kde_pdf(samples, &pts).unwrap();
        // trapezoid rule
        dx * (d.iter().sum::<f64>() - 0.5 * (d[0] + d[n - 1]))
    }

    #[test]
    fn kde_integrates_to_one() {
        assert!((integral(&[0.2, 0.25, 0.4, 0.7, 0.71]) - 1.0).abs() < 1e-3);
        let repeated = [0.5; 10];
        assert_eq!(scott_bandwidth(&repeated).unwrap(), MIN_BANDWIDTH);
        assert!((integral(&repeated) - 1.0).abs() < 1e-3);
        let peak = kde_pdf(&repeated, &[0.5, 0.6]).unwrap();
        assert!(peak[0] > 100.0 && peak[1] < 1e-10);
        assert!(kde_pdf(&[], &[0.0]).is_err());
    }

    #[test]
    fn monitor_cells() {
        let g = crate::geo::build_grid(10, 10, 0.2).unwrap();
        let m = MonitorSet::new(&g, &MonitorSet::diagonal()).unwrap();
        assert_eq!(m.cells[0], g.index(2, 2));
        assert_eq!(m.cells[4], g.index(8, 8));
        assert!(MonitorSet::new(&g, &[[1.5, 0.0]]).is_err());
    }
}
