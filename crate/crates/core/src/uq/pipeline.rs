use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::config::{ExperimentConfig, ModelKind};
use super::io::{write_csv, write_matrix};
use super::metrics::{time_error_metrics, RelativeErrorAccumulator};
use super::stats::{ensemble_stats, kde_pdf, MonitorSet};
use super::{simulate, ReducedModels};
use crate::basis::{collect_snapshots, compute_pod, DeimBasis, SnapshotSet};
use crate::drrnn::{build_training_sequence, init_params, train, DrRnnParams, TrainOptions, TrainReport, TrainingSet};
use crate::error::{invalid, Result};
use crate::fom::{run_fom, FlowProblem, Trajectory};
use crate::geo::{build_sampler, cluster_realizations, PermeabilityField};
use crate::rom::{RomBases, RomNewtonOptions, RomVariant};

/// Everything produced before the evaluation ensemble is run.
pub struct ExperimentArtifacts {
    pub problem: FlowProblem,
    pub fields: Vec<PermeabilityField>,
    /// Indices into `fields` of the clustered training realizations.
    pub training: Vec<usize>,
    pub models: ReducedModels,
    pub sigma_saturation: Vec<f64>,
    pub sigma_pressure: Vec<f64>,
    pub train_reports: BTreeMap<ModelKind, TrainReport>,
}

pub fn train_options(cfg: &ExperimentConfig) -> TrainOptions {
    TrainOptions {
        lr: cfg.lr,
        decay: cfg.decay,
        max_epochs: cfg.epochs,
        patience: cfg.patience,
        ..Default::default()
    }
}

/// The two variants draw their initial weights from different seeds.
pub fn init_seed_offset(variant: RomVariant) -> u64 {
    match variant {
        RomVariant::Galerkin => 0,
        RomVariant::Deim => 1,
    }
}

/// Paper initialization, with the `η_k` draws mapped affinely onto
/// `cfg.eta_init`.
pub fn initial_params(cfg: &ExperimentConfig, seed_offset: u64) -> Result<DrRnnParams> {
    let mut p = init_params(cfg.r, cfg.layers, cfg.drrnn_seed + seed_offset)?;
    let [lo, hi] = cfg.eta_init;
    if cfg.eta_init != [0.1, 0.4] {
        for eta in &mut p.eta {
            *eta = lo + (*eta - 0.1) / 0.3 * (hi - lo);
        }
    }
    p.gamma = cfg.gamma;
    p.zeta = cfg.zeta;
    p.eps = cfg.eps;
    p.validate()?;
    Ok(p)
}

/// POD bases of pressure and saturation snapshots, plus the DEIM basis when
/// `with_deim` is set.
pub fn build_bases(cfg: &ExperimentConfig, snaps: &SnapshotSet, with_deim: bool) -> Result<RomBases> {
    Ok(RomBases {
        pressure: compute_pod(&snaps.pressure, cfg.r_p)?,
        saturation: compute_pod(&snaps.saturation, cfg.r)?,
        deim: if with_deim {
            Some(DeimBasis::from_snapshots(&snaps.nonlinearity, cfg.m)?)
        } else {
            None
        },
    })
}

/// Trains one DR-RNN variant on the training trajectories.
pub fn train_variant(
    cfg: &ExperimentConfig,
    problem: &FlowProblem,
    bases: &RomBases,
    variant: RomVariant,
    fields: &[&PermeabilityField],
    foms: &[Trajectory],
) -> Result<(DrRnnParams, TrainReport)> {
    let sequences: Vec<Result<_>> = fields
        .par_iter()
        .zip(foms.par_iter())
        .map(|(perm, fom)| build_training_sequence(perm, problem, bases, variant, fom))
        .collect();
    let set = TrainingSet {
        sequences: sequences.into_iter().collect::<Result<Vec<_>>>()?,
    };
    train(&initial_params(cfg, init_seed_offset(variant))?, &set, &train_options(cfg))
}

/// Samples the ensemble, clusters it for training realizations, runs the
/// full model on those, and builds bases and trained surrogates.
pub fn prepare(cfg: &ExperimentConfig) -> Result<ExperimentArtifacts> {
    let problem = cfg.problem()?;
    let sampler = build_sampler(&problem.grid, cfg.sigma, cfg.corr_len, cfg.field_seed)?;
    let fields: Vec<PermeabilityField> = (0..cfg.field_count as u64).into_par_iter().map(|l| sampler.sample(l)).collect();
    let training = cluster_realizations(&fields, cfg.train_count, cfg.train_seed)?;
    let train_fields: Vec<&PermeabilityField> = training.iter().map(|&i| &fields[i]).collect();
    let foms: Vec<Result<Trajectory>> = train_fields.par_iter().map(|f| run_fom(f, &problem)).collect();
    let foms = foms.into_iter().collect::<Result<Vec<_>>>()?;
    let snaps = collect_snapshots(&foms)?;
    let with_deim = cfg.models.iter().any(|m| matches!(m, ModelKind::PodDeim | ModelKind::DrRnnPd));
    let bases = build_bases(cfg, &snaps, with_deim)?;
    let mut train_reports = BTreeMap::new();
    let mut models = ReducedModels {
        bases,
        drrnn_p: None,
        drrnn_pd: None,
        newton: RomNewtonOptions::default(),
    };
    for (kind, variant) in [(ModelKind::DrRnnP, RomVariant::Galerkin), (ModelKind::DrRnnPd, RomVariant::Deim)] {
        if cfg.models.contains(&kind) {
            let (params, report) = train_variant(cfg, &problem, &models.bases, variant, &train_fields, &foms)?;
            train_reports.insert(kind, report);
            match kind {
                ModelKind::DrRnnP => models.drrnn_p = Some(params),
                _ => models.drrnn_pd = Some(params),
            }
        }
    }
    Ok(ExperimentArtifacts {
        sigma_saturation: models.bases.saturation.sigma().to_vec(),
        sigma_pressure: models.bases.pressure.sigma().to_vec(),
        problem,
        fields,
        training,
        models,
        train_reports,
    })
}

/// Comparison of one candidate trajectory against the full model.
#[derive(Clone, Debug)]
pub struct Assessment {
    pub relative: RelativeErrorAccumulator,
    /// `(L2, L∞)` at the report step.
    pub report_errors: (f64, f64),
    pub report_state: DVector<f64>,
    /// Saturation at the probe cells at the report step.
    pub probe_values: Vec<f64>,
    /// `k × T` saturation history at the probe cells.
    pub monitor_series: DMatrix<f64>,
    pub failed_steps: usize,
}

pub fn assess(
    reference: &DMatrix<f64>,
    candidate: &DMatrix<f64>,
    report_column: usize,
    monitors: &MonitorSet,
    failed_steps: usize,
) -> Result<Assessment> {
    if reference.shape() != candidate.shape() || report_column >= reference.ncols() {
        return Err(invalid("assessment inputs disagree in shape"));
    }
    let mut relative = RelativeErrorAccumulator::default();
    relative.add_trajectory(reference, candidate)?;
    let report_state = candidate.column(report_column).into_owned();
    let report_errors = time_error_metrics(reference.column(report_column).as_slice(), report_state.as_slice())?;
    let probe_values = monitors.cells.iter().map(|&c| report_state[c]).collect();
    let monitor_series = DMatrix::from_fn(monitors.cells.len(), candidate.ncols(), |k, t| candidate[(monitors.cells[k], t)]);
    Ok(Assessment {
        relative,
        report_errors,
        report_state,
        probe_values,
        monitor_series,
        failed_steps,
    })
}

#[derive(Clone, Debug, Default)]
struct ModelAggregate {
    relative: RelativeErrorAccumulator,
    attempted: usize,
    failed: Vec<u64>,
    failed_steps: usize,
    report_states: Vec<DVector<f64>>,
    probe_values: Vec<Vec<f64>>,
    report_errors: Vec<(u64, f64, f64)>,
    monitor_sum: Option<DMatrix<f64>>,
}

/// Serial fold of per-realization assessments, in realization order.
#[derive(Clone, Debug, Default)]
pub struct Aggregate {
    models: BTreeMap<ModelKind, ModelAggregate>,
}

impl Aggregate {
    pub fn add(&mut self, kind: ModelKind, id: u64, outcome: std::result::Result<Assessment, String>) {
        let agg = self.models.entry(kind).or_default();
        agg.attempted += 1;
        match outcome {
            Ok(a) => {
                agg.relative.merge(&a.relative);
                agg.failed_steps += a.failed_steps;
                agg.report_errors.push((id, a.report_errors.0, a.report_errors.1));
                agg.report_states.push(a.report_state);
                agg.probe_values.push(a.probe_values);
                agg.monitor_sum = Some(match agg.monitor_sum.take() {
                    Some(s) => s + a.monitor_series,
                    None => a.monitor_series,
                });
            }
            Err(_) => agg.failed.push(id),
        }
    }

    pub fn finish(self, kde_grid: &[f64]) -> Result<ExperimentReport> {
        let mut rows = Vec::new();
        let mut fields = BTreeMap::new();
        let mut kde = BTreeMap::new();
        let mut monitor_means = BTreeMap::new();
        let mut report_errors = BTreeMap::new();
        for (kind, agg) in self.models {
            let ok = agg.attempted - agg.failed.len();
            let (l2_rel, l2_rel_max) = agg.relative.finish().unwrap_or((f64::NAN, f64::NAN));
            rows.push(ModelSummary {
                kind,
                l2_rel,
                l2_rel_max,
                realizations: agg.attempted,
                failed: agg.failed.clone(),
                failed_steps: agg.failed_steps,
                bounded_fraction: ok as f64 / agg.attempted.max(1) as f64,
            });
            if agg.report_states.len() >= 2 {
                fields.insert(kind, ensemble_stats(&agg.report_states)?);
            }
            if let Some(sum) = agg.monitor_sum {
                let k = sum.nrows();
                monitor_means.insert(kind, sum / ok as f64);
                if !agg.report_states.is_empty() && !kde_grid.is_empty() {
                    let curves = (0..k)
                        .map(|j| {
                            let samples: Vec<f64> = agg.probe_values.iter().map(|p| p[j]).collect();
                            kde_pdf(&samples, kde_grid)
                        })
                        .collect::<Result<Vec<_>>>();
                    kde.insert(kind, curves?);
                }
            }
            report_errors.insert(kind, agg.report_errors);
        }
        Ok(ExperimentReport {
            rows,
            fields,
            kde,
            kde_grid: kde_grid.to_vec(),
            monitor_means,
            report_errors,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSummary {
    pub kind: ModelKind,
    pub l2_rel: f64,
    pub l2_rel_max: f64,
    pub realizations: usize,
    pub failed: Vec<u64>,
    /// Reduced Newton steps that did not converge, summed over realizations.
    pub failed_steps: usize,
    /// Fraction of realizations finishing with finite states.
    pub bounded_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub rows: Vec<ModelSummary>,
    /// Mean and standard deviation field at the report step.
    pub fields: BTreeMap<ModelKind, (DVector<f64>, DVector<f64>)>,
    /// One density curve per probe, evaluated on `kde_grid`.
    pub kde: BTreeMap<ModelKind, Vec<Vec<f64>>>,
    pub kde_grid: Vec<f64>,
    /// Ensemble-mean probe saturation over time.
    pub monitor_means: BTreeMap<ModelKind, DMatrix<f64>>,
    /// `(realization, L2, L∞)` at the report step.
    pub report_errors: BTreeMap<ModelKind, Vec<(u64, f64, f64)>>,
}

impl ExperimentReport {
    pub fn row(&self, kind: ModelKind) -> Option<&ModelSummary> {
        self.rows.iter().find(|r| r.kind == kind)
    }
}

pub fn kde_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..points).map(|i| i as f64 / (points - 1) as f64).collect(),
    }
}

/// Runs the full model and every configured model on each field, assessing
/// them against the full model realization by realization.
pub fn evaluate(cfg: &ExperimentConfig, art: &ExperimentArtifacts) -> Result<ExperimentReport> {
    let monitors = cfg.monitor_set()?;
    let col = cfg.report_column();
    let kinds: Vec<ModelKind> = std::iter::once(ModelKind::Fom).chain(cfg.models.iter().copied()).collect();
    let per_field: Vec<Result<Vec<(ModelKind, std::result::Result<Assessment, String>)>>> = art
        .fields
        .par_iter()
        .map(|perm| {
            let fom = run_fom(perm, &art.problem)?;
            kinds
                .iter()
                .map(|&kind| {
                    let run = if kind == ModelKind::Fom {
                        Ok(super::ModelRun {
                            saturation: fom.saturation.clone(),
                            failed_steps: 0,
                        })
                    } else {
                        simulate(kind, perm, &art.problem, Some(&art.models), Some(&fom))
                    };
                    let outcome = run
                        .and_then(|r| assess(&fom.saturation, &r.saturation, col, &monitors, r.failed_steps))
                        .map_err(|e| e.to_string());
                    Ok((kind, outcome))
                })
                .collect()
        })
        .collect();
    let mut agg = Aggregate::default();
    for (perm, res) in art.fields.iter().zip(per_field) {
        for (kind, outcome) in res? {
            agg.add(kind, perm.realization(), outcome);
        }
    }
    agg.finish(&kde_grid(cfg.kde_points))
}

fn grid_rows(v: &DVector<f64>, nx: usize) -> Vec<Vec<String>> {
    v.as_slice().chunks(nx).map(|row| row.iter().map(|x| format!("{x:.10e}")).collect()).collect()
}

/// Writes CSV tables: `errors.csv`, and per model the mean/std fields, the
/// probe densities, probe histories and report-step errors.
pub fn write_report(dir: &Path, cfg: &ExperimentConfig, report: &ExperimentReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.kind.label().to_string(),
                format!("{:.6e}", r.l2_rel),
                format!("{:.6e}", r.l2_rel_max),
                r.realizations.to_string(),
                r.failed.len().to_string(),
                r.failed_steps.to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("errors.csv"),
        &["model", "l2_rel", "l2_rel_max", "realizations", "failed", "failed_steps"],
        &rows,
    )?;
    let header_x: Vec<String> = (0..cfg.nx).map(|i| format!("x{i}")).collect();
    let header_x: Vec<&str> = header_x.iter().map(String::as_str).collect();
    for (kind, (mean, std)) in &report.fields {
        write_csv(&dir.join(format!("mean_{}.csv", kind.key())), &header_x, &grid_rows(mean, cfg.nx))?;
        write_csv(&dir.join(format!("std_{}.csv", kind.key())), &header_x, &grid_rows(std, cfg.nx))?;
        write_matrix(&dir.join(format!("mean_{}.romx", kind.key())), &DMatrix::from_column_slice(mean.len(), 1, mean.as_slice()))?;
    }
    for (kind, curves) in &report.kde {
        let mut rows = Vec::new();
        for (k, curve) in curves.iter().enumerate() {
            for (x, d) in report.kde_grid.iter().zip(curve) {
                rows.push(vec![(k + 1).to_string(), format!("{x:.6}"), format!("{d:.8e}")]);
            }
        }
        write_csv(&dir.join(format!("kde_{}.csv", kind.key())), &["probe", "saturation", "density"], &rows)?;
    }
    let dt = cfg.schedule.dt_pvi;
    for (kind, means) in &report.monitor_means {
        let header: Vec<String> = ["step".to_string(), "pvi".to_string()]
            .into_iter()
            .chain((1..=means.nrows()).map(|k| format!("probe{k}")))
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows: Vec<Vec<String>> = (0..means.ncols())
            .map(|t| {
                [(t + 1).to_string(), format!("{:.4}", (t + 1) as f64 * dt)]
                    .into_iter()
                    .chain(means.column(t).iter().map(|v| format!("{v:.8e}")))
                    .collect()
            })
            .collect();
        write_csv(&dir.join(format!("probes_{}.csv", kind.key())), &header, &rows)?;
    }
    for (kind, errs) in &report.report_errors {
        let rows: Vec<Vec<String>> = errs
            .iter()
            .map(|(id, l2, linf)| vec![id.to_string(), format!("{l2:.8e}"), format!("{linf:.8e}")])
            .collect();
        write_csv(&dir.join(format!("time_errors_{}.csv", kind.key())), &["realization", "l2", "linf"], &rows)?;
    }
    Ok(())
}
