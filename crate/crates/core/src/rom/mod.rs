//! POD-Galerkin and POD-DEIM reduced models on the full model's
//! sequential-implicit schedule.
//!
//! The pressure equation is re-projected from the freshly assembled full
//! operator at every pressure update; between updates the reduced saturation
//! residual `ỹ − ỹ_t + dt·L f_w(E ỹ) − dt·d̃` is driven to zero by Newton.
//! For Galerkin `L = U_sᵀB` and `E = U_s`; for DEIM `L = D` and `E = PᵀU_s`.

use nalgebra::{DMatrix, DVector};

use crate::basis::{build_deim_operator, DeimBasis, PodBasis};
use crate::error::{invalid, Error, Result};
use crate::fom::{
    assemble_pressure, assemble_saturation_operator, compute_velocity, fractional_flow_into, FaceMobility,
    FlowProblem, FluidProps, PressureSystem, SaturationOperator, Transmissibility,
};
use crate::geo::PermeabilityField;
use crate::sparse::{dense_t_sparse, spmm};

/// Solves `(U_pᵀ A U_p) ỹ_p = U_pᵀ b` densely, returning `ỹ_p` and `U_p ỹ_p`.
///
/// `A` is the pinned matrix, whose pinned column is a unit vector, so a basis
/// built from pinned snapshots keeps the projected system definite.
pub fn reduce_and_solve_pressure(sys: &PressureSystem, u_p: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    if u_p.nrows() != sys.rhs().len() {
        return Err(invalid("pressure basis does not match the system"));
    }
    let a_r = u_p.tr_mul(&spmm(sys.matrix(), u_p));
    let b_r = u_p.tr_mul(sys.rhs());
    let y_r = a_r
        .clone()
        .cholesky()
        .map(|c| c.solve(&b_r))
        .or_else(|| a_r.lu().solve(&b_r))
        .filter(|y| y.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numeric("reduced pressure matrix is singular".into()))?;
    let y = u_p * &y_r;
    Ok((y_r, y))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RomVariant {
    Galerkin,
    Deim,
}

impl RomVariant {
    pub fn name(&self) -> &'static str {
        match self {
            RomVariant::Galerkin => "galerkin",
            RomVariant::Deim => "deim",
        }
    }
}

/// Reduced saturation residual `ỹ − ỹ_t + dt·L f_w(E ỹ) − dt·d̃`.
#[derive(Clone, Debug)]
pub struct ReducedSaturationOp {
    variant: RomVariant,
    left: DMatrix<f64>,
    eval: DMatrix<f64>,
    d: DVector<f64>,
}

impl ReducedSaturationOp {
    /// Galerkin form: `L = U_sᵀB` (r × n), `E = U_s`.
    pub fn galerkin(u_s: &DMatrix<f64>, op: &SaturationOperator) -> Result<Self> {
        if u_s.nrows() != op.len() {
            return Err(invalid("saturation basis does not match the operator"));
        }
        Ok(Self {
            variant: RomVariant::Galerkin,
            left: dense_t_sparse(u_s, op.b()),
            eval: u_s.clone(),
            d: u_s.tr_mul(op.d()),
        })
    }

    /// DEIM form: `L = D` (r × m), `E = PᵀU_s`.
    pub fn deim(u_s: &DMatrix<f64>, deim: &DeimBasis, op: &SaturationOperator) -> Result<Self> {
        let dop = build_deim_operator(u_s, op.b(), deim)?;
        Ok(Self {
            variant: RomVariant::Deim,
            left: dop.d,
            eval: dop.sampled_basis,
            d: u_s.tr_mul(op.d()),
        })
    }

    /// Builds a residual from raw parts; `left` is r × k and `eval` k × r.
    pub fn from_parts(variant: RomVariant, left: DMatrix<f64>, eval: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        let r = d.len();
        if left.nrows() != r || eval.ncols() != r || left.ncols() != eval.nrows() {
            return Err(invalid("reduced operator parts disagree in size"));
        }
        Ok(Self { variant, left, eval, d })
    }

    pub fn variant(&self) -> RomVariant {
        self.variant
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    /// Number of components at which `f_w` is evaluated.
    pub fn eval_len(&self) -> usize {
        self.eval.nrows()
    }

    pub fn left(&self) -> &DMatrix<f64> {
        &self.left
    }

    pub fn eval(&self) -> &DMatrix<f64> {
        &self.eval
    }

    pub fn source(&self) -> &DVector<f64> {
        &self.d
    }

    /// Saturations `E ỹ` at which the nonlinearity is evaluated.
    pub fn evaluated(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.eval * y
    }

    fn flow(&self, y: &DVector<f64>, props: &FluidProps) -> (DVector<f64>, DVector<f64>) {
        let s = self.evaluated(y);
        let k = s.len();
        let (mut f, mut df) = (DVector::zeros(k), DVector::zeros(k));
        fractional_flow_into(s.as_slice(), props, f.as_mut_slice(), df.as_mut_slice());
        (f, df)
    }

    pub fn residual(&self, y_next: &DVector<f64>, y_cur: &DVector<f64>, dt: f64, props: &FluidProps) -> DVector<f64> {
        let (f, _) = self.flow(y_next, props);
        y_next - y_cur + (&self.left * f - &self.d) * dt
    }

    /// `∂r̃/∂ỹ_next = I + dt·L diag(f_w′) E`.
    pub fn jacobian(&self, y_next: &DVector<f64>, dt: f64, props: &FluidProps) -> DMatrix<f64> {
        let (_, df) = self.flow(y_next, props);
        let mut scaled = self.eval.clone();
        for (mut row, g) in scaled.row_iter_mut().zip(df.iter()) {
            row *= *g;
        }
        let mut j = &self.left * scaled * dt;
        for i in 0..j.nrows() {
            j[(i, i)] += 1.0;
        }
        j
    }

    /// `(∂r̃/∂ỹ_next)ᵀ v` without forming the Jacobian.
    pub fn jacobian_t_mul(&self, y_next: &DVector<f64>, dt: f64, props: &FluidProps, v: &DVector<f64>) -> DVector<f64> {
        let (_, df) = self.flow(y_next, props);
        let lv = self.left.tr_mul(v).component_mul(&df);
        v + self.eval.tr_mul(&lv) * dt
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RomNewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Largest change of any evaluated saturation per Newton update.
    pub max_update: f64,
}

impl Default for RomNewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20,
            max_update: 0.2,
        }
    }
}

/// Result of one reduced time step.
#[derive(Clone, Debug)]
pub struct ReducedStep {
    pub y: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

/// Newton iteration on the reduced residual from `ỹ_t`, with dense r × r
/// solves. Updates are scaled uniformly so no evaluated saturation moves by
/// more than `max_update`. A failed step returns its last finite iterate.
pub fn step_rom_newton(
    op: &ReducedSaturationOp,
    y_cur: &DVector<f64>,
    dt: f64,
    props: &FluidProps,
    opts: &RomNewtonOptions,
) -> ReducedStep {
    let mut y = y_cur.clone();
    let mut res = op.residual(&y, y_cur, dt, props).norm();
    for it in 0..=opts.max_iter {
        if res <= opts.tol {
            return ReducedStep {
                y,
                converged: true,
                iterations: it,
                residual: res,
            };
        }
        if it == opts.max_iter {
            break;
        }
        let r = op.residual(&y, y_cur, dt, props);
        let Some(delta) = op.jacobian(&y, dt, props).lu().solve(&r) else {
            break;
        };
        let change = op.evaluated(&delta).amax();
        let scale = if change > opts.max_update { opts.max_update / change } else { 1.0 };
        let next = &y - delta * scale;
        let next_res = op.residual(&next, y_cur, dt, props).norm();
        if !next.iter().all(|v| v.is_finite()) || !next_res.is_finite() {
            break;
        }
        y = next;
        res = next_res;
    }
    ReducedStep {
        y,
        converged: false,
        iterations: opts.max_iter,
        residual: res,
    }
}

/// Bases shared by every reduced model of one experiment.
#[derive(Clone, Debug)]
pub struct RomBases {
    pub pressure: PodBasis,
    pub saturation: PodBasis,
    pub deim: Option<DeimBasis>,
}

impl RomBases {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.pressure.dim() != n || self.saturation.dim() != n {
            return Err(invalid("basis dimension does not match the grid"));
        }
        if let Some(d) = &self.deim {
            if d.basis().nrows() != n {
                return Err(invalid("DEIM basis dimension does not match the grid"));
            }
        }
        Ok(())
    }
}

/// Rebuilds reduced operators from a full-dimensional saturation, carrying
/// the face fluxes between pressure updates for upstream mobility.
pub struct ReducedCoupling<'a> {
    problem: &'a FlowProblem,
    bases: &'a RomBases,
    variant: RomVariant,
    trans: Transmissibility,
    flux: Vec<f64>,
}

impl<'a> ReducedCoupling<'a> {
    pub fn new(
        perm: &PermeabilityField,
        problem: &'a FlowProblem,
        bases: &'a RomBases,
        variant: RomVariant,
    ) -> Result<Self> {
        bases.validate(problem.grid.len())?;
        if variant == RomVariant::Deim && bases.deim.is_none() {
            return Err(invalid("DEIM variant requested without a DEIM basis"));
        }
        Ok(Self {
            problem,
            bases,
            variant,
            trans: Transmissibility::new(&problem.grid, perm)?,
            flux: Vec::new(),
        })
    }

    /// Reduced pressure solve at saturation `s`, then the reduced saturation
    /// operator for the resulting fluxes.
    pub fn update(&mut self, s: &[f64]) -> Result<ReducedSaturationOp> {
        let p = self.problem;
        let mobility = if self.flux.is_empty() {
            FaceMobility::ArithmeticMean
        } else {
            FaceMobility::Upstream(&self.flux)
        };
        let sys = assemble_pressure(&self.trans, s, &p.sources, &p.props, mobility)?;
        let (_, pressure) = reduce_and_solve_pressure(&sys, self.bases.pressure.matrix())?;
        self.flux = compute_velocity(&self.trans, sys.conductance(), pressure.as_slice());
        let op = assemble_saturation_operator(&p.grid, self.trans.faces(), &self.flux, &p.sources);
        let u_s = self.bases.saturation.matrix();
        match (self.variant, &self.bases.deim) {
            (RomVariant::Galerkin, _) => ReducedSaturationOp::galerkin(u_s, &op),
            (RomVariant::Deim, Some(deim)) => ReducedSaturationOp::deim(u_s, deim, &op),
            (RomVariant::Deim, None) => unreachable!("checked in new"),
        }
    }
}

/// Reduced run of one realization.
#[derive(Clone, Debug)]
pub struct RomTrajectory {
    /// `r × T` reduced states.
    pub reduced: DMatrix<f64>,
    /// `n × T` reconstructed saturations, clamped to the mobile range.
    pub saturation: DMatrix<f64>,
    /// Steps whose reduced solve did not converge.
    pub failed_steps: Vec<usize>,
    pub iterations: usize,
}

/// Drives any reduced stepper over the full schedule. `step` receives the
/// step index, the current operator and state.
pub fn run_reduced<F>(
    perm: &PermeabilityField,
    problem: &FlowProblem,
    bases: &RomBases,
    variant: RomVariant,
    mut step: F,
) -> Result<RomTrajectory>
where
    F: FnMut(usize, &ReducedSaturationOp, &DVector<f64>) -> ReducedStep,
{
    let sched = problem.schedule;
    let u_s = bases.saturation.matrix();
    let (n, r) = u_s.shape();
    let mut coupling = ReducedCoupling::new(perm, problem, bases, variant)?;
    let mut y = bases.saturation.project(problem.initial_saturation().as_slice());
    let mut reduced = DMatrix::zeros(r, sched.steps);
    let mut saturation = DMatrix::zeros(n, sched.steps);
    let mut failed_steps = Vec::new();
    let mut iterations = 0;
    let mut op = None;
    for t in 0..sched.steps {
        if sched.is_pressure_step(t) || op.is_none() {
            op = Some(coupling.update((u_s * &y).as_slice())?);
        }
        let out = step(t, op.as_ref().expect("operator built above"), &y);
        if !out.y.iter().all(|v| v.is_finite()) {
            return Err(Error::RolloutFailure { step: t });
        }
        if !out.converged {
            failed_steps.push(t);
        }
        iterations += out.iterations;
        y = out.y;
        reduced.set_column(t, &y);
        let props = &problem.props;
        saturation.set_column(t, &(u_s * &y).map(|v| props.clamp(v)));
    }
    Ok(RomTrajectory {
        reduced,
        saturation,
        failed_steps,
        iterations,
    })
}

/// POD-Galerkin or POD-DEIM reduced model with Newton time stepping.
pub fn run_rom(
    perm: &PermeabilityField,
    problem: &FlowProblem,
    bases: &RomBases,
    variant: RomVariant,
    opts: &RomNewtonOptions,
) -> Result<RomTrajectory> {
    let dt = problem.solver_dt();
    let props = problem.props;
    run_reduced(perm, problem, bases, variant, |_, op, y| step_rom_newton(op, y, dt, &props, opts))
}
