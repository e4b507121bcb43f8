//! Deep residual recurrent network driven by a reduced time-step residual.
//!
//! Each time step runs `K` layers. Layer 1 applies
//! `y¹ = y⁰ − w ∘ tanh(U r¹)`; layers `k ≥ 2` take RMS-normalized residual
//! steps `yᵏ = yᵏ⁻¹ − η_k rᵏ / √(G_k + ε)` with `G_k = γ‖rᵏ‖² + ζ G_{k−1}`.
//! Gradients of the rollout loss are computed by hand-written reverse mode
//! through every layer and step.

mod train;

pub use train::{train, TrainOptions, TrainReport};

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::fom::{FlowProblem, FluidProps, Trajectory};
use crate::geo::PermeabilityField;
use crate::rom::{run_reduced, ReducedCoupling, ReducedSaturationOp, ReducedStep, RomBases, RomTrajectory, RomVariant};

/// Trainable weights `{U, w, η₂..η_K}` and fixed hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DrRnnParams {
    pub u: DMatrix<f64>,
    pub w: DVector<f64>,
    pub eta: Vec<f64>,
    pub gamma: f64,
    pub zeta: f64,
    pub eps: f64,
}

impl DrRnnParams {
    pub fn validate(&self) -> Result<()> {
        let r = self.w.len();
        if r == 0 || self.u.shape() != (r, r) {
            return Err(invalid(format!("U must be {r}×{r}, got {:?}", self.u.shape())));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.zeta) || !(self.eps > 0.0) {
            return Err(invalid("γ and ζ must lie in [0, 1] and ε must be positive"));
        }
        if !self.u.iter().chain(self.w.iter()).chain(&self.eta).all(|v| v.is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn layers(&self) -> usize {
        self.eta.len() + 1
    }

    pub fn n_weights(&self) -> usize {
        self.u.len() + self.w.len() + self.eta.len()
    }

    /// Weights flattened as `[U (column-major), w, η]`.
    pub fn weights(&self) -> Vec<f64> {
        self.u.iter().chain(self.w.iter()).chain(&self.eta).copied().collect()
    }

    pub fn set_weights(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_weights(), "weight vector length");
        let (nu, nw) = (self.u.len(), self.w.len());
        self.u.as_mut_slice().copy_from_slice(&flat[..nu]);
        self.w.as_mut_slice().copy_from_slice(&flat[nu..nu + nw]);
        self.eta.copy_from_slice(&flat[nu + nw..]);
    }
}

/// Random initialization: `U ~ U[0.01, 0.02]`, `w ~ U[0.1, 0.5]`,
/// `η ~ U[0.1, 0.4]`, with `γ = 0.1`, `ζ = 0.9`, `ε = 1e-8`.
pub fn init_params(r: usize, layers: usize, seed: u64) -> Result<DrRnnParams> {
    if r == 0 || layers == 0 {
        return Err(invalid("DR-RNN needs r ≥ 1 and K ≥ 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = DMatrix::from_fn(r, r, |_, _| rng.random_range(0.01..=0.02));
    let w = DVector::from_fn(r, |_, _| rng.random_range(0.1..=0.5));
    let eta = (1..layers).map(|_| rng.random_range(0.1..=0.4)).collect();
    Ok(DrRnnParams {
        u,
        w,
        eta,
        gamma: 0.1,
        zeta: 0.9,
        eps: 1e-8,
    })
}

/// Time-step residual `r(y_next, y_cur)` with exact transposed Jacobian products.
pub trait ResidualOracle: Sync {
    fn dim(&self) -> usize;
    fn residual(&self, y_next: &DVector<f64>, y_cur: &DVector<f64>) -> DVector<f64>;
    /// `((∂r/∂y_next)ᵀ v, (∂r/∂y_cur)ᵀ v)`.
    fn vjp(&self, y_next: &DVector<f64>, y_cur: &DVector<f64>, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>);
}

/// Reduced saturation residual at a fixed time step.
#[derive(Clone, Debug)]
pub struct ReducedOracle<'a> {
    op: Cow<'a, ReducedSaturationOp>,
    dt: f64,
    props: FluidProps,
}

impl<'a> ReducedOracle<'a> {
    pub fn borrowed(op: &'a ReducedSaturationOp, dt: f64, props: FluidProps) -> Self {
        Self {
            op: Cow::Borrowed(op),
            dt,
            props,
        }
    }

    pub fn owned(op: ReducedSaturationOp, dt: f64, props: FluidProps) -> ReducedOracle<'static> {
        ReducedOracle {
            op: Cow::Owned(op),
            dt,
            props,
        }
    }

    pub fn operator(&self) -> &ReducedSaturationOp {
        &self.op
    }
}

impl ResidualOracle for ReducedOracle<'_> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn residual(&self, y_next: &DVector<f64>, y_cur: &DVector<f64>) -> DVector<f64> {
        self.op.residual(y_next, y_cur, self.dt, &self.props)
    }

    fn vjp(&self, y_next: &DVector<f64>, _y_cur: &DVector<f64>, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (self.op.jacobian_t_mul(y_next, self.dt, &self.props, v), -v)
    }
}

#[derive(Clone, Debug)]
struct LayerTape {
    y_in: DVector<f64>,
    r: DVector<f64>,
    g: f64,
    /// `tanh(U r¹)` on layer 1.
    act: DVector<f64>,
}

fn step_forward<O: ResidualOracle + ?Sized>(
    p: &DrRnnParams,
    y_t: &DVector<f64>,
    oracle: &O,
    mut tape: Option<&mut Vec<LayerTape>>,
) -> DVector<f64> {
    let r1 = oracle.residual(y_t, y_t);
    let act = (&p.u * &r1).map(f64::tanh);
    let mut g = p.gamma * r1.norm_squared();
    let mut y = y_t - p.w.component_mul(&act);
    if let Some(t) = tape.as_deref_mut() {
        t.clear();
        t.push(LayerTape {
            y_in: y_t.clone(),
            r: r1,
            g,
            act,
        });
    }
    for eta in &p.eta {
        let r = oracle.residual(&y, y_t);
        g = p.gamma * r.norm_squared() + p.zeta * g;
        let next = &y - &r * (eta / (g + p.eps).sqrt());
        if let Some(t) = tape.as_deref_mut() {
            t.push(LayerTape {
                y_in: y,
                r,
                g,
                act: DVector::zeros(0),
            });
        }
        y = next;
    }
    y
}

/// One explicit DR-RNN time step from `ỹ_t`.
pub fn drrnn_step<O: ResidualOracle + ?Sized>(params: &DrRnnParams, y_t: &DVector<f64>, oracle: &O) -> DVector<f64> {
    step_forward(params, y_t, oracle, None)
}

/// Oracle for step `t` when operators are refreshed every `every` steps.
fn oracle_at<O>(oracles: &[O], every: usize, t: usize) -> &O {
    &oracles[(t / every).min(oracles.len() - 1)]
}

/// Free-running rollout over `steps` steps; column `t` is the state after
/// step `t`.
pub fn rollout<O: ResidualOracle>(
    params: &DrRnnParams,
    y0: &DVector<f64>,
    oracles: &[O],
    every: usize,
    steps: usize,
) -> Result<DMatrix<f64>> {
    if oracles.is_empty() || every == 0 {
        return Err(invalid("rollout needs at least one oracle and a positive refresh interval"));
    }
    let mut out = DMatrix::zeros(y0.len(), steps);
    let mut y = y0.clone();
    for t in 0..steps {
        y = drrnn_step(params, &y, oracle_at(oracles, every, t));
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::RolloutFailure { step: t });
        }
        out.set_column(t, &y);
    }
    Ok(out)
}

/// `(1/L) Σ_ℓ Σ_t ‖ỹ*_t − ỹ_t‖²`.
pub fn mse_loss(predicted: &[DMatrix<f64>], targets: &[DMatrix<f64>]) -> Result<f64> {
    if predicted.len() != targets.len() || predicted.is_empty() {
        return Err(invalid("prediction and target counts differ"));
    }
    let mut total = 0.0;
    for (p, t) in predicted.iter().zip(targets) {
        if p.shape() != t.shape() {
            return Err(invalid("prediction and target shapes differ"));
        }
        total += (p - t).norm_squared();
    }
    Ok(total / predicted.len() as f64)
}

/// One training trajectory: initial reduced state, LS-projected targets and
/// the residual oracles in force between pressure updates.
#[derive(Clone, Debug)]
pub struct TrainingSequence<O> {
    pub y0: DVector<f64>,
    /// `r × T`, target after each step.
    pub targets: DMatrix<f64>,
    pub oracles: Vec<O>,
    pub every: usize,
}

#[derive(Clone, Debug)]
pub struct TrainingSet<O> {
    pub sequences: Vec<TrainingSequence<O>>,
}

impl<O: ResidualOracle> TrainingSet<O> {
    pub fn validate(&self, r: usize) -> Result<()> {
        let first = self.sequences.first().ok_or_else(|| invalid("empty training set"))?;
        let steps = first.targets.ncols();
        for s in &self.sequences {
            if s.y0.len() != r || s.targets.shape() != (r, steps) || s.oracles.iter().any(|o| o.dim() != r) {
                return Err(invalid("training sequences disagree in shape"));
            }
            if s.oracles.is_empty() || s.every == 0 {
                return Err(invalid("training sequence without oracles"));
            }
            if !s.targets.iter().chain(s.y0.iter()).all(|v| v.is_finite()) {
                return Err(invalid("training targets must be finite"));
            }
        }
        Ok(())
    }
}

/// Gradients with the same layout as [`DrRnnParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub u: DMatrix<f64>,
    pub w: DVector<f64>,
    pub eta: Vec<f64>,
}

impl Gradients {
    fn zeros(p: &DrRnnParams) -> Self {
        Self {
            u: DMatrix::zeros(p.u.nrows(), p.u.ncols()),
            w: DVector::zeros(p.w.len()),
            eta: vec![0.0; p.eta.len()],
        }
    }

    fn add(&mut self, other: &Gradients) {
        self.u += &other.u;
        self.w += &other.w;
        self.eta.iter_mut().zip(&other.eta).for_each(|(a, b)| *a += b);
    }

    /// Flattened in the order of [`DrRnnParams::weights`].
    pub fn flat(&self) -> Vec<f64> {
        self.u.iter().chain(self.w.iter()).chain(&self.eta).copied().collect()
    }
}

/// Reverse pass through one step; returns the adjoint of `y_t`.
fn step_backward<O: ResidualOracle + ?Sized>(
    p: &DrRnnParams,
    y_t: &DVector<f64>,
    oracle: &O,
    tape: &[LayerTape],
    y_bar_out: DVector<f64>,
    grad: &mut Gradients,
) -> DVector<f64> {
    let mut y_bar = y_bar_out;
    let mut g_bar = 0.0;
    let mut cur_bar = DVector::zeros(y_t.len());
    for k in (1..tape.len()).rev() {
        let layer = &tape[k];
        let eta = p.eta[k - 1];
        let inv = 1.0 / (layer.g + p.eps).sqrt();
        let s_bar = -y_bar.dot(&layer.r);
        grad.eta[k - 1] += s_bar * inv;
        g_bar += s_bar * eta * (-0.5) * inv * inv * inv;
        let r_bar = &y_bar * (-eta * inv) + &layer.r * (2.0 * p.gamma * g_bar);
        let (jn, jc) = oracle.vjp(&layer.y_in, y_t, &r_bar);
        y_bar += jn;
        cur_bar += jc;
        g_bar *= p.zeta;
    }
    let first = &tape[0];
    let act_bar = -y_bar.component_mul(&p.w);
    grad.w -= y_bar.component_mul(&first.act);
    let a_bar = act_bar.component_mul(&first.act.map(|t| 1.0 - t * t));
    grad.u += &a_bar * first.r.transpose();
    let r_bar = p.u.tr_mul(&a_bar) + &first.r * (2.0 * p.gamma * g_bar);
    let (jn, jc) = oracle.vjp(y_t, y_t, &r_bar);
    y_bar + jn + jc + cur_bar
}

fn sequence_loss_grad<O: ResidualOracle>(p: &DrRnnParams, seq: &TrainingSequence<O>, scale: f64) -> Result<(f64, Gradients)> {
    let steps = seq.targets.ncols();
    let mut states = Vec::with_capacity(steps + 1);
    let mut tapes = Vec::with_capacity(steps);
    states.push(seq.y0.clone());
    for t in 0..steps {
        let mut tape = Vec::with_capacity(p.layers());
        let y = step_forward(p, &states[t], oracle_at(&seq.oracles, seq.every, t), Some(&mut tape));
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::RolloutFailure { step: t });
        }
        states.push(y);
        tapes.push(tape);
    }
    let mut loss = 0.0;
    let mut grad = Gradients::zeros(p);
    let mut carry = DVector::zeros(seq.y0.len());
    for t in (0..steps).rev() {
        let diff = &states[t + 1] - seq.targets.column(t);
        loss += diff.norm_squared();
        let y_bar = carry + diff * (2.0 * scale);
        carry = step_backward(p, &states[t], oracle_at(&seq.oracles, seq.every, t), &tapes[t], y_bar, &mut grad);
    }
    Ok((loss * scale, grad))
}

/// Loss and its gradient over a training set. Sequences are evaluated in
/// parallel and reduced in their stored order, so results do not depend on
/// the thread count.
pub fn loss_and_gradients<O: ResidualOracle>(params: &DrRnnParams, set: &TrainingSet<O>) -> Result<(f64, Gradients)> {
    params.validate()?;
    set.validate(params.dim())?;
    let scale = 1.0 / set.sequences.len() as f64;
    let parts: Vec<Result<(f64, Gradients)>> =
        set.sequences.par_iter().map(|s| sequence_loss_grad(params, s, scale)).collect();
    let mut loss = 0.0;
    let mut grad = Gradients::zeros(params);
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grad.add(&g);
    }
    Ok((loss, grad))
}

pub fn bptt_gradients<O: ResidualOracle>(params: &DrRnnParams, set: &TrainingSet<O>) -> Result<Gradients> {
    let (_, g) = loss_and_gradients(params, set)?;
    if !g.flat().iter().all(|v| v.is_finite()) {
        return Err(Error::TrainingFailure {
            epoch: 0,
            reason: "non-finite gradient".into(),
            history: Vec::new(),
        });
    }
    Ok(g)
}

pub fn training_loss<O: ResidualOracle>(params: &DrRnnParams, set: &TrainingSet<O>) -> Result<f64> {
    params.validate()?;
    set.validate(params.dim())?;
    let preds: Vec<Result<DMatrix<f64>>> = set
        .sequences
        .par_iter()
        .map(|s| rollout(params, &s.y0, &s.oracles, s.every, s.targets.ncols()))
        .collect();
    let preds = preds.into_iter().collect::<Result<Vec<_>>>()?;
    let targets: Vec<DMatrix<f64>> = set.sequences.iter().map(|s| s.targets.clone()).collect();
    mse_loss(&preds, &targets)
}

/// Training sequence for one full-model trajectory: targets are the LS
/// projections `U_sᵀ y_s`, and the operator at each pressure update is built
/// from a reduced pressure solve at the LS-reconstructed state of that step.
pub fn build_training_sequence(
    perm: &PermeabilityField,
    problem: &FlowProblem,
    bases: &RomBases,
    variant: RomVariant,
    fom: &Trajectory,
) -> Result<TrainingSequence<ReducedOracle<'static>>> {
    let sched = problem.schedule;
    if fom.saturation.ncols() != sched.steps {
        return Err(invalid("trajectory length does not match the schedule"));
    }
    let pod = &bases.saturation;
    let mut coupling = ReducedCoupling::new(perm, problem, bases, variant)?;
    let dt = problem.solver_dt();
    let mut oracles = Vec::with_capacity(sched.pressure_updates());
    for t in (0..sched.steps).step_by(sched.pressure_every) {
        let s = if t == 0 { fom.initial.clone() } else { fom.saturation.column(t - 1).into_owned() };
        let fit = pod.reconstruct(&pod.project(s.as_slice()));
        oracles.push(ReducedOracle::owned(coupling.update(fit.as_slice())?, dt, problem.props));
    }
    Ok(TrainingSequence {
        y0: pod.project(fom.initial.as_slice()),
        targets: pod.project_matrix(&fom.saturation),
        oracles,
        every: sched.pressure_every,
    })
}

/// DR-RNN surrogate on the reduced sequential schedule of [`run_reduced`].
pub fn run_drrnn(
    perm: &PermeabilityField,
    problem: &FlowProblem,
    bases: &RomBases,
    variant: RomVariant,
    params: &DrRnnParams,
) -> Result<RomTrajectory> {
    params.validate()?;
    if params.dim() != bases.saturation.rank() {
        return Err(invalid("DR-RNN dimension does not match the saturation basis"));
    }
    let dt = problem.solver_dt();
    let props = problem.props;
    run_reduced(perm, problem, bases, variant, |_, op, y| {
        let oracle = ReducedOracle::borrowed(op, dt, props);
        let next = drrnn_step(params, y, &oracle);
        let residual = oracle.residual(&next, y).norm();
        ReducedStep {
            y: next,
            converged: true,
            iterations: params.layers(),
            residual,
        }
    })
}
