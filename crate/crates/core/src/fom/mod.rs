//! Full-order sequential-implicit two-phase flow simulator.
//!
//! Pressure is solved with a two-point flux approximation every
//! `pressure_every` steps; between pressure updates the water saturation is
//! advanced by implicit Euler on an upwind finite-volume discretization.

mod fluid;
mod pressure;
mod transport;

pub use fluid::{corey_mobilities, fractional_flow, fractional_flow_into, total_mobility, FluidProps};
pub use pressure::{
    assemble_pressure, compute_velocity, divergence, solve_pressure, FaceMobility, PressureSystem,
    Transmissibility,
};
pub use transport::{
    assemble_saturation_operator, step_saturation_implicit, NewtonOptions, NewtonReport, SaturationOperator,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::geo::{PermeabilityField, StructuredGrid};

/// Per-cell volumetric source rates (positive injects water) and the cell
/// whose pressure is pinned to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceConfig {
    rates: Vec<f64>,
    pin: usize,
}

impl SourceConfig {
    pub fn new(rates: Vec<f64>, pin: usize) -> Result<Self> {
        if pin >= rates.len() {
            return Err(invalid(format!("pinned cell {pin} outside {} cells", rates.len())));
        }
        let sum: f64 = rates.iter().sum();
        let scale: f64 = rates.iter().map(|q| q.abs()).sum();
        if sum.abs() > 1e-12 * scale.max(1.0) {
            return Err(invalid(format!("source rates must sum to zero, got {sum:e}")));
        }
        Ok(Self { rates, pin })
    }

    /// Injector in the lower-left cell, producer in the upper-right cell.
    pub fn quarter_five_spot(grid: &StructuredGrid, rate: f64) -> Result<Self> {
        let n = grid.len();
        if n < 2 {
            return Err(invalid("quarter five-spot needs at least two cells"));
        }
        let mut q = vec![0.0; n];
        q[0] = rate;
        q[n - 1] = -rate;
        Self::new(q, n - 1)
    }

    /// Uniform inflow over the left column, outflow over the right column.
    pub fn uniform_flow(grid: &StructuredGrid, rate: f64) -> Result<Self> {
        if grid.nx() < 2 {
            return Err(invalid("uniform flow needs at least two columns"));
        }
        let mut q = vec![0.0; grid.len()];
        let per_cell = rate / grid.ny() as f64;
        for iy in 0..grid.ny() {
            q[grid.index(0, iy)] = per_cell;
            q[grid.index(grid.nx() - 1, iy)] = -per_cell;
        }
        Self::new(q, grid.index(grid.nx() - 1, 0))
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn pin(&self) -> usize {
        self.pin
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn injectors(&self) -> Vec<usize> {
        (0..self.rates.len()).filter(|&i| self.rates[i] > 0.0).collect()
    }

    pub fn producers(&self) -> Vec<usize> {
        (0..self.rates.len()).filter(|&i| self.rates[i] < 0.0).collect()
    }

    pub fn total_injection(&self) -> f64 {
        self.rates.iter().filter(|q| **q > 0.0).sum()
    }
}

/// Time stepping in pore volumes injected.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub dt_pvi: f64,
    pub steps: usize,
    pub pressure_every: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            dt_pvi: 0.015,
            steps: 160,
            pressure_every: 8,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_pvi > 0.0) || self.steps == 0 || self.pressure_every == 0 {
            return Err(invalid(format!("invalid schedule {self:?}")));
        }
        Ok(())
    }

    pub fn is_pressure_step(&self, step: usize) -> bool {
        step % self.pressure_every == 0
    }

    pub fn pressure_updates(&self) -> usize {
        self.steps.div_ceil(self.pressure_every)
    }

    /// Index (1-based, into the recorded states) of the step nearest `pvi`.
    pub fn step_at_pvi(&self, pvi: f64) -> usize {
        ((pvi / self.dt_pvi).round() as usize).clamp(1, self.steps)
    }
}

/// Everything except the permeability that defines a flow problem.
#[derive(Clone, Debug)]
pub struct FlowProblem {
    pub grid: StructuredGrid,
    pub props: FluidProps,
    pub sources: SourceConfig,
    pub schedule: Schedule,
    pub newton: NewtonOptions,
}

impl FlowProblem {
    pub fn new(grid: StructuredGrid, props: FluidProps, sources: SourceConfig, schedule: Schedule) -> Result<Self> {
        schedule.validate()?;
        if sources.len() != grid.len() {
            return Err(invalid("source vector does not match the grid"));
        }
        if sources.total_injection() <= 0.0 {
            return Err(invalid("flow problem needs a positive injection rate"));
        }
        Ok(Self {
            grid,
            props,
            sources,
            schedule,
            newton: NewtonOptions::default(),
        })
    }

    /// Solver time step: `dt_pvi · pore volume / injection rate`.
    pub fn solver_dt(&self) -> f64 {
        self.schedule.dt_pvi * self.grid.pore_volume() / self.sources.total_injection()
    }

    pub fn initial_saturation(&self) -> DVector<f64> {
        DVector::from_element(self.grid.len(), self.props.s_wc)
    }
}

/// Current full-order state.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub pressure: DVector<f64>,
    pub saturation: DVector<f64>,
    /// Face fluxes from the latest pressure solve.
    pub flux: Vec<f64>,
    pub step: usize,
    pub pvi: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct StepInfo {
    pub pressure_updated: bool,
    pub newton: NewtonReport,
}

/// Recorded run of the full model for one realization.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub initial: DVector<f64>,
    /// `n × T`, state after every step.
    pub saturation: DMatrix<f64>,
    /// `n × T_p`, one column per pressure solve.
    pub pressure: DMatrix<f64>,
    /// `n × T`, `f_w` of every saturation column.
    pub fractional_flow: DMatrix<f64>,
    pub newton_iterations: usize,
    pub substeps: usize,
}

/// Stateful simulator over one permeability realization.
pub struct FullOrderModel<'a> {
    problem: &'a FlowProblem,
    trans: Transmissibility,
    state: FlowState,
    operator: Option<SaturationOperator>,
    dt: f64,
}

impl<'a> FullOrderModel<'a> {
    pub fn new(problem: &'a FlowProblem, perm: &PermeabilityField) -> Result<Self> {
        let trans = Transmissibility::new(&problem.grid, perm)?;
        let n = problem.grid.len();
        Ok(Self {
            problem,
            state: FlowState {
                pressure: DVector::zeros(n),
                saturation: problem.initial_saturation(),
                flux: Vec::new(),
                step: 0,
                pvi: 0.0,
            },
            trans,
            operator: None,
            dt: problem.solver_dt(),
        })
    }

    pub fn state(&self) -> &FlowState {
        &self.state
    }

    pub fn transmissibility(&self) -> &Transmissibility {
        &self.trans
    }

    /// Saturation operator used by the latest step.
    pub fn operator(&self) -> Option<&SaturationOperator> {
        self.operator.as_ref()
    }

    pub fn solver_dt(&self) -> f64 {
        self.dt
    }

    fn update_pressure(&mut self) -> Result<()> {
        let p = self.problem;
        let mobility = if self.state.flux.is_empty() {
            FaceMobility::ArithmeticMean
        } else {
            FaceMobility::Upstream(&self.state.flux)
        };
        let sys = assemble_pressure(&self.trans, self.state.saturation.as_slice(), &p.sources, &p.props, mobility)?;
        let pressure = solve_pressure(&sys)?;
        let flux = compute_velocity(&self.trans, sys.conductance(), pressure.as_slice());
        self.operator = Some(assemble_saturation_operator(&p.grid, self.trans.faces(), &flux, &p.sources));
        self.state.pressure = pressure;
        self.state.flux = flux;
        Ok(())
    }

    pub fn step(&mut self) -> Result<StepInfo> {
        let p = self.problem;
        let step = self.state.step;
        let pressure_updated = p.schedule.is_pressure_step(step);
        if pressure_updated || self.operator.is_none() {
            self.update_pressure()?;
        }
        let op = self.operator.as_ref().expect("operator assembled above");
        let (s, newton) = step_saturation_implicit(op, self.state.saturation.as_slice(), self.dt, &p.props, &p.newton)
            .map_err(|e| Error::StepFailure {
                step,
                reason: e.to_string(),
            })?;
        self.state.saturation = s;
        self.state.step += 1;
        self.state.pvi += p.schedule.dt_pvi;
        Ok(StepInfo {
            pressure_updated,
            newton,
        })
    }
}

/// Runs the full model over the whole schedule, recording saturation,
/// pressure and fractional-flow snapshots.
pub fn run_fom(perm: &PermeabilityField, problem: &FlowProblem) -> Result<Trajectory> {
    let n = problem.grid.len();
    let sched = problem.schedule;
    let mut model = FullOrderModel::new(problem, perm)?;
    let mut saturation = DMatrix::zeros(n, sched.steps);
    let mut fw = DMatrix::zeros(n, sched.steps);
    let mut pressure = DMatrix::zeros(n, sched.pressure_updates());
    let (mut iterations, mut substeps, mut p_col) = (0, 0, 0);
    let (mut f, mut df) = (vec![0.0; n], vec![0.0; n]);
    for t in 0..sched.steps {
        let info = model.step()?;
        iterations += info.newton.iterations;
        substeps += info.newton.substeps;
        if info.pressure_updated {
            pressure.set_column(p_col, &model.state().pressure);
            p_col += 1;
        }
        let s = &model.state().saturation;
        saturation.set_column(t, s);
        fractional_flow_into(s.as_slice(), &problem.props, &mut f, &mut df);
        fw.set_column(t, &DVector::from_column_slice(&f));
    }
    Ok(Trajectory {
        initial: problem.initial_saturation(),
        saturation,
        pressure,
        fractional_flow: fw,
        newton_iterations: iterations,
        substeps,
    })
}
