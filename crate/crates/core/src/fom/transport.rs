use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;

use super::fluid::{fractional_flow_into, FluidProps};
use super::SourceConfig;
use crate::error::{Error, Result};
use crate::geo::{Face, StructuredGrid};
use crate::sparse::{csr_from_triplets, dependency_order, spmv};

/// Semi-discrete saturation operator: `ds/dt + B f_w(s) = d`.
///
/// `B` holds upwinded face-flux coefficients and producer withdrawals, and
/// `d` the pure-water injection, both divided by the cell pore volume.
#[derive(Clone, Debug)]
pub struct SaturationOperator {
    b: CsrMatrix<f64>,
    d: DVector<f64>,
    order: Option<Vec<usize>>,
}

impl SaturationOperator {
    pub fn new(b: CsrMatrix<f64>, d: DVector<f64>) -> Self {
        let order = dependency_order(&b);
        Self { b, d, order }
    }

    pub fn b(&self) -> &CsrMatrix<f64> {
        &self.b
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// `ds/dt` at state `s`: `d − B f_w(s)`.
    pub fn rate(&self, s: &[f64], props: &FluidProps) -> DVector<f64> {
        let n = s.len();
        let (mut f, mut df) = (vec![0.0; n], vec![0.0; n]);
        fractional_flow_into(s, props, &mut f, &mut df);
        &self.d - spmv(&self.b, &f)
    }

    /// Implicit Euler residual `s − s_t + dt B f_w(s) − dt d`, plus `f_w'(s)`.
    pub fn residual(&self, s: &[f64], s_t: &[f64], dt: f64, props: &FluidProps) -> (DVector<f64>, Vec<f64>) {
        let n = s.len();
        let (mut f, mut df) = (vec![0.0; n], vec![0.0; n]);
        fractional_flow_into(s, props, &mut f, &mut df);
        let bf = spmv(&self.b, &f);
        let r = DVector::from_fn(n, |i, _| s[i] - s_t[i] + dt * (bf[i] - self.d[i]));
        (r, df)
    }

    /// `(I + dt B diag(df)) x`.
    pub fn apply_jacobian(&self, df: &[f64], dt: f64, x: &[f64]) -> DVector<f64> {
        let scaled: Vec<f64> = x.iter().zip(df).map(|(a, b)| a * b).collect();
        let bx = spmv(&self.b, &scaled);
        DVector::from_fn(x.len(), |i, _| x[i] + dt * bx[i])
    }

    /// Solves `(I + dt B diag(df)) x = rhs`. The upwind pattern is acyclic for
    /// potential flow, so this is a substitution in dependency order; a dense
    /// LU handles hand-built operators with cycles.
    pub fn solve_jacobian(&self, df: &[f64], dt: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let n = rhs.len();
        match &self.order {
            Some(order) => {
                let mut x = DVector::zeros(n);
                for &i in order {
                    let row = self.b.row(i);
                    let mut acc = rhs[i];
                    let mut diag = 1.0;
                    for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                        if j == i {
                            diag += dt * v * df[i];
                        } else {
                            acc -= dt * v * df[j] * x[j];
                        }
                    }
                    x[i] = acc / diag;
                }
                Ok(x)
            }
            None => {
                let mut jac = DMatrix::identity(n, n);
                for (i, row) in self.b.row_iter().enumerate() {
                    for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                        jac[(i, j)] += dt * v * df[j];
                    }
                }
                jac.lu()
                    .solve(rhs)
                    .ok_or_else(|| Error::Numeric("singular saturation Jacobian".into()))
            }
        }
    }
}

/// Builds `B` and `d` from face fluxes (positive lower → upper).
pub fn assemble_saturation_operator(
    grid: &StructuredGrid,
    faces: &[Face],
    flux: &[f64],
    src: &SourceConfig,
) -> SaturationOperator {
    let n = grid.len();
    let scale = 1.0 / (grid.porosity() * grid.cell_volume());
    let mut trip = Vec::with_capacity(n + 2 * faces.len());
    for (face, &v) in faces.iter().zip(flux) {
        let (donor, receiver) = if v >= 0.0 { (face.lower, face.upper) } else { (face.upper, face.lower) };
        let c = v.abs() * scale;
        if c > 0.0 {
            trip.push((donor, donor, c));
            trip.push((receiver, donor, -c));
        }
    }
    let mut d = DVector::zeros(n);
    for (i, &q) in src.rates().iter().enumerate() {
        if q > 0.0 {
            d[i] = q * scale;
        } else if q < 0.0 {
            trip.push((i, i, -q * scale));
        }
    }
    SaturationOperator::new(csr_from_triplets(n, n, &trip), d)
}

/// Controls for the implicit saturation solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    /// Convergence when `‖r‖₂ ≤ tol · √n`.
    pub tol: f64,
    /// Converged iterations continue toward `‖r‖₂ ≤ target · √n` while the
    /// residual keeps contracting and iterations remain.
    pub target: f64,
    pub max_iter: usize,
    /// Largest per-cell saturation change accepted in one iteration.
    pub max_update: f64,
    /// How many times a failed step may be split in half.
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            target: 1e-10,
            max_iter: 20,
            max_update: 0.2,
            max_halvings: 6,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NewtonReport {
    pub iterations: usize,
    pub substeps: usize,
    pub residual: f64,
}

fn newton_solve(
    op: &SaturationOperator,
    s_t: &[f64],
    dt: f64,
    props: &FluidProps,
    opts: &NewtonOptions,
) -> Result<Option<(DVector<f64>, usize, f64)>> {
    let n = s_t.len();
    let tol = opts.tol * (n as f64).sqrt();
    let target = opts.target.min(opts.tol) * (n as f64).sqrt();
    let mut s: Vec<f64> = s_t.iter().map(|&v| props.clamp(v)).collect();
    let mut prev = f64::INFINITY;
    for it in 0..=opts.max_iter {
        let (r, df) = op.residual(&s, s_t, dt, props);
        let rn = r.norm();
        if !rn.is_finite() {
            return Ok(None);
        }
        let stalled = rn > 0.5 * prev;
        if rn <= target || (rn <= tol && (stalled || it == opts.max_iter)) {
            return Ok(Some((DVector::from_vec(s), it, rn)));
        }
        if it == opts.max_iter {
            break;
        }
        prev = rn;
        let delta = op.solve_jacobian(&df, dt, &r)?;
        for (si, di) in s.iter_mut().zip(delta.iter()) {
            let step = (-di).clamp(-opts.max_update, opts.max_update);
            *si = props.clamp(*si + step);
        }
    }
    Ok(None)
}

fn step_recursive(
    op: &SaturationOperator,
    s_t: &[f64],
    dt: f64,
    props: &FluidProps,
    opts: &NewtonOptions,
    depth: usize,
    report: &mut NewtonReport,
) -> Result<DVector<f64>> {
    if let Some((s, it, rn)) = newton_solve(op, s_t, dt, props, opts)? {
        report.iterations += it;
        report.substeps += 1;
        report.residual = report.residual.max(rn);
        return Ok(s);
    }
    if depth >= opts.max_halvings {
        return Err(Error::Numeric(format!(
            "Newton did not converge within {} iterations after {depth} halvings",
            opts.max_iter
        )));
    }
    let half = step_recursive(op, s_t, 0.5 * dt, props, opts, depth + 1, report)?;
    step_recursive(op, half.as_slice(), 0.5 * dt, props, opts, depth + 1, report)
}

/// One implicit Euler step of `ds/dt + B f_w(s) = d` solved by Newton
/// iteration with per-cell update limiting and projection onto the mobile
/// range. A step whose Newton iteration fails is retried as two half steps.
pub fn step_saturation_implicit(
    op: &SaturationOperator,
    s_t: &[f64],
    dt: f64,
    props: &FluidProps,
    opts: &NewtonOptions,
) -> Result<(DVector<f64>, NewtonReport)> {
    if !(dt > 0.0) {
        return Err(crate::error::invalid(format!("time step must be positive, got {dt}")));
    }
    if s_t.len() != op.len() {
        return Err(crate::error::invalid("saturation length does not match the operator"));
    }
    let mut report = NewtonReport::default();
    let mut s = step_recursive(op, s_t, dt, props, opts, 0, &mut report)?;
    s.apply(|v| *v = props.clamp(*v));
    Ok((s, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fom::fluid::fractional_flow;
    use crate::geo::build_grid;
    use crate::sparse::to_dense;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain() -> (StructuredGrid, SaturationOperator) {
        let g = build_grid(2, 1, 0.2).unwrap();
        let src = SourceConfig::new(vec![1.0, -1.0], 1).unwrap();
        let op = assemble_saturation_operator(&g, &g.faces(), &[1.0], &src);
        (g, op)
    }

    /// Root of the monotone scalar equation `g(s) = 0` on the mobile range.
    fn bisect(g: impl Fn(f64) -> f64, props: &FluidProps) -> f64 {
        let (mut lo, mut hi) = (props.s_wc, props.s_max());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn zero_operator_is_stationary() {
        let g = build_grid(3, 2, 0.2).unwrap();
        let src = SourceConfig::new(vec![0.0; 6], 0).unwrap();
        let faces = g.faces();
        let op = assemble_saturation_operator(&g, &faces, &vec![0.0; faces.len()], &src);
        assert_eq!(op.b().nnz(), 0);
        assert!(op.d().iter().all(|v| *v == 0.0));
        let s0 = [0.3, 0.4, 0.5, 0.2, 0.7, 0.25];
        let (s1, _) = step_saturation_implicit(&op, &s0, 0.1, &FluidProps::default(), &NewtonOptions::default()).unwrap();
        assert_eq!(s1.as_slice(), &s0);
    }

    #[test]
    fn pure_injection_is_linear() {
        let op = SaturationOperator::new(csr_from_triplets(1, 1, &[]), DVector::from_vec(vec![5.0]));
        let (s1, rep) = step_saturation_implicit(&op, &[0.2], 0.01, &FluidProps::default(), &NewtonOptions::default()).unwrap();
        assert!((s1[0] - 0.25).abs() < 1e-15);
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn two_cell_operator_matches_hand_ode() {
        let (g, op) = chain();
        let pv = g.porosity() * g.cell_volume();
        let props = FluidProps::default();
        let s = [0.45, 0.3];
        let (f1, f2) = (fractional_flow(s[0], &props).0, fractional_flow(s[1], &props).0);
        let expected = [(1.0 - 1.0 * f1) / pv, (1.0 * f1 - 1.0 * f2) / pv];
        let rate = op.rate(&s, &props);
        assert!((rate[0] - expected[0]).abs() < 1e-12);
        assert!((rate[1] - expected[1]).abs() < 1e-12);
        let dense = to_dense(op.b());
        assert_eq!(dense, DMatrix::from_row_slice(2, 2, &[1.0 / pv, 0.0, -1.0 / pv, 1.0 / pv]));
    }

    #[test]
    fn two_cell_step_matches_sequential_bisection() {
        let (g, op) = chain();
        let props = FluidProps::default();
        let pv = g.porosity() * g.cell_volume();
        let dt = 0.01;
        let s_t = [0.2, 0.2];
        let (s1, _) = step_saturation_implicit(&op, &s_t, dt, &props, &NewtonOptions::default()).unwrap();
        let f = |s: f64| fractional_flow(s, &props).0;
        let a = dt / pv;
        let o1 = bisect(|s| s - s_t[0] + a * (f(s) - 1.0), &props);
        let o2 = bisect(|s| s - s_t[1] + a * (f(s) - f(o1)), &props);
        assert!((s1[0] - o1).abs() < 1e-8, "{} vs {o1}", s1[0]);
        assert!((s1[1] - o2).abs() < 1e-8, "{} vs {o2}", s1[1]);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let g = build_grid(4, 4, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let faces = g.faces();
        let flux: Vec<f64> = faces.iter().map(|_| rng.random::<f64>() + 0.1).collect();
        let mut q = vec![0.0; 16];
        q[0] = 1.0;
        q[15] = -1.0;
        let src = SourceConfig::new(q, 15).unwrap();
        let op = assemble_saturation_operator(&g, &faces, &flux, &src);
        let props = FluidProps::default();
        let dt = 0.03;
        for _ in 0..5 {
            let s: Vec<f64> = (0..16).map(|_| 0.21 + 0.58 * rng.random::<f64>()).collect();
            let s_t = vec![0.2; 16];
            let (_, df) = op.residual(&s, &s_t, dt, &props);
            let h = 1e-6;
            for j in 0..16 {
                let mut e = vec![0.0; 16];
                e[j] = 1.0;
                let col = op.apply_jacobian(&df, dt, &e);
                let (mut sp, mut sm) = (s.clone(), s.clone());
                sp[j] += h;
                sm[j] -= h;
                let fd = (op.residual(&sp, &s_t, dt, &props).0 - op.residual(&sm, &s_t, dt, &props).0) / (2.0 * h);
                let scale = col.amax();
                assert!((col - fd).amax() <= 1e-6 * scale);
            }
            // the substitution solve inverts the Jacobian
            let rhs = DVector::from_fn(16, |i, _| (i as f64).sin());
            let x = op.solve_jacobian(&df, dt, &rhs).unwrap();
            assert!((op.apply_jacobian(&df, dt, x.as_slice()) - rhs).amax() < 1e-12);
        }
    }

    #[test]
    fn cyclic_operator_uses_dense_fallback() {
        let b = csr_from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 1.0)]);
        let op = SaturationOperator::new(b, DVector::from_vec(vec![0.5, 0.5]));
        let df = [0.7, 1.3];
        let rhs = DVector::from_vec(vec![1.0, 2.0]);
        let x = op.solve_jacobian(&df, 0.1, &rhs).unwrap();
        assert!((op.apply_jacobian(&df, 0.1, x.as_slice()) - rhs).amax() < 1e-14);
    }
}
