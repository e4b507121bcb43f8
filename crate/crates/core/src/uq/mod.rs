//! Monte-Carlo ensembles, error metrics, ensemble statistics and persistence.

pub mod config;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod store;
pub mod stats;

pub use config::{ExperimentConfig, ModelKind};
pub use io::{read_matrix, write_matrix};
pub use metrics::{relative_error_metrics, ls_fit, time_error_metrics, RelativeErrorAccumulator};
pub use pipeline::{
    assess, evaluate, prepare, write_report, Aggregate, Assessment, ExperimentArtifacts, ExperimentReport, ModelSummary,
};
pub use stats::{ensemble_stats, kde_pdf, MonitorSet};

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::drrnn::{run_drrnn, DrRnnParams};
use crate::error::{invalid, Error, Result};
use crate::fom::{run_fom, FlowProblem, Trajectory};
use crate::geo::PermeabilityField;
use crate::rom::{run_rom, RomBases, RomNewtonOptions, RomVariant};

/// Worker count from `ROM_THREADS`, or `None` for rayon's default.
pub fn env_threads() -> Option<usize> {
    std::env::var("ROM_THREADS").ok().and_then(|v| v.trim().parse().ok()).filter(|n| *n > 0)
}

/// Runs `f` on a dedicated pool of `threads` workers (`ROM_THREADS` when `None`).
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.or_else(env_threads).unwrap_or(0))
        .build()
        .map_err(|e| invalid(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Trained reduced-model artefacts shared read-only by all realizations.
#[derive(Clone, Debug)]
pub struct ReducedModels {
    pub bases: RomBases,
    pub drrnn_p: Option<DrRnnParams>,
    pub drrnn_pd: Option<DrRnnParams>,
    pub newton: RomNewtonOptions,
}

/// Saturation history of one model on one realization.
#[derive(Clone, Debug)]
pub struct ModelRun {
    /// `n × T`.
    pub saturation: DMatrix<f64>,
    pub failed_steps: usize,
}

fn need<'a, T>(x: Option<&'a T>, what: &str) -> Result<&'a T> {
    x.ok_or_else(|| invalid(format!("{what} is required for this model")))
}

/// Runs one model on one realization. The LS fit projects `fom` when given,
/// otherwise it runs the full model first.
pub fn simulate(
    kind: ModelKind,
    perm: &PermeabilityField,
    problem: &FlowProblem,
    models: Option<&ReducedModels>,
    fom: Option<&Trajectory>,
) -> Result<ModelRun> {
    let rom = |variant| {
        let m = need(models, "a reduced basis")?;
        let t = run_rom(perm, problem, &m.bases, variant, &m.newton)?;
        Ok(ModelRun {
            saturation: t.saturation,
            failed_steps: t.failed_steps.len(),
        })
    };
    let rnn = |variant, params: Option<&DrRnnParams>| {
        let m = need(models, "a reduced basis")?;
        let t = run_drrnn(perm, problem, &m.bases, variant, need(params, "trained DR-RNN parameters")?)?;
        Ok(ModelRun {
            saturation: t.saturation,
            failed_steps: 0,
        })
    };
    match kind {
        ModelKind::Fom => Ok(ModelRun {
            saturation: run_fom(perm, problem)?.saturation,
            failed_steps: 0,
        }),
        ModelKind::LsFit => {
            let m = need(models, "a reduced basis")?;
            let sat = match fom {
                Some(t) => ls_fit(m.bases.saturation.matrix(), &t.saturation),
                None => ls_fit(m.bases.saturation.matrix(), &run_fom(perm, problem)?.saturation),
            };
            Ok(ModelRun {
                saturation: sat,
                failed_steps: 0,
            })
        }
        ModelKind::Pod => rom(RomVariant::Galerkin),
        ModelKind::PodDeim => rom(RomVariant::Deim),
        ModelKind::DrRnnP => rnn(RomVariant::Galerkin, models.and_then(|m| m.drrnn_p.as_ref())),
        ModelKind::DrRnnPd => rnn(RomVariant::Deim, models.and_then(|m| m.drrnn_pd.as_ref())),
    }
}

#[derive(Clone, Debug, Default)]
pub struct McOptions {
    /// Directory receiving `real_<id>.romx` per realization and `meta.txt`.
    pub out_dir: Option<PathBuf>,
    /// Keep full trajectories in the result.
    pub keep_trajectories: bool,
}

/// Outcome of one realization; failures carry their error message.
#[derive(Clone, Debug)]
pub struct RealizationRecord {
    pub id: u64,
    pub outcome: std::result::Result<ModelRun, String>,
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub model: ModelKind,
    pub records: Vec<RealizationRecord>,
}

impl EnsembleResult {
    pub fn failures(&self) -> Vec<u64> {
        self.records.iter().filter(|r| r.outcome.is_err()).map(|r| r.id).collect()
    }

    pub fn successes(&self) -> impl Iterator<Item = (u64, &ModelRun)> {
        self.records.iter().filter_map(|r| r.outcome.as_ref().ok().map(|m| (r.id, m)))
    }
}

pub fn realization_path(dir: &std::path::Path, id: u64) -> PathBuf {
    dir.join(format!("real_{id:05}.romx"))
}

/// Runs `kind` over every field in parallel. Per-realization failures are
/// recorded, not fatal; trajectories are written as they finish.
pub fn run_monte_carlo(
    kind: ModelKind,
    problem: &FlowProblem,
    models: Option<&ReducedModels>,
    fields: &[PermeabilityField],
    opts: &McOptions,
) -> Result<EnsembleResult> {
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let records: Vec<Result<RealizationRecord>> = fields
        .par_iter()
        .map(|perm| {
            let id = perm.realization();
            let outcome = simulate(kind, perm, problem, models, None).map_err(|e| e.to_string());
            if let (Some(dir), Ok(run)) = (&opts.out_dir, &outcome) {
                write_matrix(&realization_path(dir, id), &run.saturation)?;
            }
            let outcome = outcome.map(|mut run| {
                if !opts.keep_trajectories {
                    run.saturation = DMatrix::zeros(0, 0);
                }
                run
            });
            Ok(RealizationRecord { id, outcome })
        })
        .collect();
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    let result = EnsembleResult { model: kind, records };
    if let Some(dir) = &opts.out_dir {
        let mut meta = BTreeMap::new();
        meta.insert("model".to_string(), kind.key().to_string());
        meta.insert("realizations".to_string(), fields.len().to_string());
        let failed: Vec<String> = result.failures().iter().map(u64::to_string).collect();
        meta.insert("failed".to_string(), failed.join(","));
        for r in &result.records {
            if let Ok(run) = &r.outcome {
                meta.insert(format!("failed_steps.{:05}", r.id), run.failed_steps.to_string());
            }
        }
        io::write_sidecar(&dir.join("meta.txt"), &meta)?;
    }
    if result.records.iter().all(|r| r.outcome.is_err()) && !result.records.is_empty() {
        return Err(Error::AllFailed);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fom::{FluidProps, Schedule, SourceConfig};
    use crate::geo::{build_grid, build_sampler};

    fn small_problem() -> FlowProblem {
        let g = build_grid(6, 6, 0.2).unwrap();
        let src = SourceConfig::quarter_five_spot(&g, 0.05).unwrap();
        let sched = Schedule {
            steps: 12,
            ..Default::default()
        };
        FlowProblem::new(g, FluidProps::default(), src, sched).unwrap()
    }

    #[test]
    fn single_realization_matches_direct_call() {
        let p = small_problem();
        let sampler = build_sampler(&p.grid, 1.0, 0.1, 3).unwrap();
        let field = sampler.sample(0);
        let opts = McOptions {
            keep_trajectories: true,
            ..Default::default()
        };
        let res = run_monte_carlo(ModelKind::Fom, &p, None, std::slice::from_ref(&field), &opts).unwrap();
        let direct = run_fom(&field, &p).unwrap();
        let (_, run) = res.successes().next().unwrap();
        assert_eq!(run.saturation, direct.saturation);
    }

    #[test]
    fn ensemble_is_independent_of_thread_count() {
        let p = small_problem();
        let sampler = build_sampler(&p.grid, 1.0, 0.1, 5).unwrap();
        let fields: Vec<_> = (0..6).map(|l| sampler.sample(l)).collect();
        let dir = tempfile::tempdir().unwrap();
        let run = |threads, sub: &str| {
            let opts = McOptions {
                out_dir: Some(dir.path().join(sub)),
                keep_trajectories: true,
            };
            with_threads(Some(threads), || run_monte_carlo(ModelKind::Fom, &p, None, &fields, &opts).unwrap()).unwrap()
        };
        let (a, b) = (run(1, "a"), run(4, "b"));
        for (x, y) in a.successes().zip(b.successes()) {
            assert_eq!(x.0, y.0);
            assert!(x.1.saturation.iter().zip(y.1.saturation.iter()).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
        let fa = std::fs::read(realization_path(&dir.path().join("a"), 3)).unwrap();
        let fb = std::fs::read(realization_path(&dir.path().join("b"), 3)).unwrap();
        assert_eq!(fa, fb);
    }
}
