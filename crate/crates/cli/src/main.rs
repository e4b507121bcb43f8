//! `porous-rom` command-line driver.
//!
//! Stages share one output directory:
//!
//! ```text
//! <dir>/config.txt            resolved configuration of the last stage
//! <dir>/fields/               permeability realizations, training.txt
//! <dir>/train/real_<id>/      full trajectories of the training realizations
//! <dir>/fom/                  full-model saturation per realization
//! <dir>/r<r>/basis/           POD and DEIM bases
//! <dir>/r<r>/drrnn/           trained DR-RNN weights and loss histories
//! <dir>/r<r>/<model>/         reduced-model saturation per realization
//! <dir>/r<r>/report/          CSV tables, field statistics, densities
//! ```

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use porous_rom::fom::{run_fom, Trajectory};
use porous_rom::geo::{build_sampler, cluster_realizations, PermeabilityField};
use porous_rom::rom::RomVariant;
use porous_rom::uq::io::{read_indices, read_matrix, read_sidecar, write_csv, write_indices, write_matrix, write_sidecar};
use porous_rom::uq::metrics::ls_fit;
use porous_rom::uq::pipeline::{assess, build_bases, init_seed_offset, kde_grid, train_variant, Aggregate};
use porous_rom::uq::store::{
    load_bases, load_fields, load_params, load_trajectory, save_bases, save_fields, save_params, save_trajectory,
    trajectory_dir,
};
use porous_rom::uq::{
    env_threads, realization_path, run_monte_carlo, with_threads, write_report, ExperimentConfig, McOptions,
    ModelKind, ReducedModels,
};
use porous_rom::{basis::collect_snapshots, Error};
use rayon::prelude::*;

#[derive(Parser, Debug)]
#[command(name = "porous-rom", version, about = "Reduced models for two-phase porous-media flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample the permeability ensemble and pick training realizations.
    GenerateFields(Common),
    /// Run the full model on the training and evaluation realizations.
    RunFom(Common),
    /// Build POD and DEIM bases from the training trajectories.
    BuildBasis(Common),
    /// Train the configured DR-RNN variants.
    TrainDrrnn(Common),
    /// Run every configured reduced model on the ensemble.
    RunRom(Common),
    /// Compare models against the full model and write CSV tables.
    Report(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Working directory for artifacts.
    #[arg(long, default_value = "out")]
    dir: PathBuf,
    /// Test case (1 or 2); shorthand for `--set case=N`.
    #[arg(long)]
    case: Option<u8>,
    /// Saturation basis rank; shorthand for `--set basis.r=N`.
    #[arg(long)]
    r: Option<usize>,
    /// Override one configuration key, `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

impl Common {
    fn resolve(&self) -> CliResult<ExperimentConfig> {
        let usage = |e: Error| Failure::Usage(e.to_string());
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
                ExperimentConfig::parse(&text).map_err(usage)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(c) = self.case {
            cfg.set("case", &c.to_string()).map_err(usage)?;
        }
        if let Some(r) = self.r {
            cfg.set("basis.r", &r.to_string()).map_err(usage)?;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("--set expects key=value, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim()).map_err(usage)?;
        }
        Ok(cfg)
    }
}

struct Layout {
    root: PathBuf,
    rank: PathBuf,
}

impl Layout {
    fn new(dir: &Path, cfg: &ExperimentConfig) -> Self {
        Self {
            root: dir.to_path_buf(),
            rank: dir.join(format!("r{}", cfg.r)),
        }
    }

    fn fields(&self) -> PathBuf {
        self.root.join("fields")
    }

    fn training_list(&self) -> PathBuf {
        self.fields().join("training.txt")
    }

    fn train(&self) -> PathBuf {
        self.root.join("train")
    }

    fn fom(&self) -> PathBuf {
        self.root.join("fom")
    }

    fn basis(&self) -> PathBuf {
        self.rank.join("basis")
    }

    fn drrnn(&self) -> PathBuf {
        self.rank.join("drrnn")
    }

    fn model(&self, kind: ModelKind) -> PathBuf {
        self.rank.join(kind.key())
    }

    fn report(&self) -> PathBuf {
        self.rank.join("report")
    }
}

fn training_fields(layout: &Layout) -> CliResult<(Vec<PermeabilityField>, Vec<usize>)> {
    let fields = load_fields(&layout.fields())?;
    let training = read_indices(&layout.training_list())?;
    if let Some(bad) = training.iter().find(|&&i| i >= fields.len()) {
        return Err(Failure::Runtime(Error::InvalidInput(format!("training index {bad} out of range"))));
    }
    Ok((fields, training))
}

fn load_training_trajectories(layout: &Layout, fields: &[PermeabilityField], training: &[usize]) -> CliResult<Vec<Trajectory>> {
    Ok(training
        .iter()
        .map(|&i| load_trajectory(&trajectory_dir(&layout.train(), fields[i].realization())))
        .collect::<Result<Vec<_>, _>>()?)
}

fn generate_fields(cfg: &ExperimentConfig, layout: &Layout) -> CliResult {
    let grid = cfg.grid()?;
    let sampler = build_sampler(&grid, cfg.sigma, cfg.corr_len, cfg.field_seed)?;
    let fields: Vec<PermeabilityField> = (0..cfg.field_count as u64).into_par_iter().map(|l| sampler.sample(l)).collect();
    save_fields(&layout.fields(), &fields)?;
    let training = cluster_realizations(&fields, cfg.train_count, cfg.train_seed)?;
    write_indices(&layout.training_list(), &training)?;
    println!("wrote {} fields, {} training realizations", fields.len(), training.len());
    Ok(())
}

fn run_fom_stage(cfg: &ExperimentConfig, layout: &Layout) -> CliResult {
    let problem = cfg.problem()?;
    let (fields, training) = training_fields(layout)?;
    let saved: Vec<porous_rom::Result<()>> = training
        .par_iter()
        .map(|&i| {
            let t = run_fom(&fields[i], &problem)?;
            save_trajectory(&trajectory_dir(&layout.train(), fields[i].realization()), &t)
        })
        .collect();
    saved.into_iter().collect::<Result<Vec<_>, _>>()?;
    let opts = McOptions {
        out_dir: Some(layout.fom()),
        keep_trajectories: false,
    };
    let res = run_monte_carlo(ModelKind::Fom, &problem, None, &fields, &opts)?;
    println!(
        "full model: {} training trajectories, {} realizations, {} failed",
        training.len(),
        fields.len(),
        res.failures().len()
    );
    Ok(())
}

fn wants_deim(cfg: &ExperimentConfig) -> bool {
    cfg.models.iter().any(|m| matches!(m, ModelKind::PodDeim | ModelKind::DrRnnPd))
}

fn build_basis_stage(cfg: &ExperimentConfig, layout: &Layout) -> CliResult {
    let (fields, training) = training_fields(layout)?;
    let trajs = load_training_trajectories(layout, &fields, &training)?;
    let snaps = collect_snapshots(&trajs)?;
    let bases = build_bases(cfg, &snaps, wants_deim(cfg))?;
    save_bases(&layout.basis(), &bases)?;
    match &bases.deim {
        Some(d) => println!(
            "bases: r_p = {}, r = {}, m = {} (DEIM condition {:.3e})",
            bases.pressure.rank(),
            bases.saturation.rank(),
            d.len(),
            d.condition()
        ),
        None => println!("bases: r_p = {}, r = {}", bases.pressure.rank(), bases.saturation.rank()),
    }
    Ok(())
}

const DRRNN_VARIANTS: [(ModelKind, RomVariant); 2] = [(ModelKind::DrRnnP, RomVariant::Galerkin), (ModelKind::DrRnnPd, RomVariant::Deim)];

fn train_stage(cfg: &ExperimentConfig, layout: &Layout) -> CliResult {
    let problem = cfg.problem()?;
    let bases = load_bases(&layout.basis())?;
    let (fields, training) = training_fields(layout)?;
    let trajs = load_training_trajectories(layout, &fields, &training)?;
    let train_fields: Vec<&PermeabilityField> = training.iter().map(|&i| &fields[i]).collect();
    let mut trained = 0;
    for (kind, variant) in DRRNN_VARIANTS {
        if !cfg.models.contains(&kind) {
            continue;
        }
        let (params, report) = train_variant(cfg, &problem, &bases, variant, &train_fields, &trajs)?;
        let seed = cfg.drrnn_seed + init_seed_offset(variant);
        save_params(&layout.drrnn(), kind.key(), &params, Some(seed))?;
        let rows: Vec<Vec<String>> = report
            .history
            .iter()
            .enumerate()
            .map(|(e, l)| vec![e.to_string(), format!("{l:.10e}")])
            .collect();
        write_csv(&layout.drrnn().join(format!("{}_history.csv", kind.key())), &["epoch", "loss"], &rows)?;
        println!(
            "{}: best loss {:.6e} at epoch {} of {}",
            kind.label(),
            report.best_loss,
            report.best_epoch,
            report.history.len()
        );
        trained += 1;
    }
    if trained == 0 {
        println!("no DR-RNN model configured in report.models");
    }
    Ok(())
}

fn reduced_models(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<ReducedModels> {
    let mut models = ReducedModels {
        bases: load_bases(&layout.basis())?,
        drrnn_p: None,
        drrnn_pd: None,
        newton: Default::default(),
    };
    if cfg.models.contains(&ModelKind::DrRnnP) {
        models.drrnn_p = Some(load_params(&layout.drrnn(), ModelKind::DrRnnP.key())?);
    }
    if cfg.models.contains(&ModelKind::DrRnnPd) {
        models.drrnn_pd = Some(load_params(&layout.drrnn(), ModelKind::DrRnnPd.key())?);
    }
    Ok(models)
}

fn write_ls_fits(models: &ReducedModels, layout: &Layout, fields: &[PermeabilityField]) -> CliResult<usize> {
    let out = layout.model(ModelKind::LsFit);
    std::fs::create_dir_all(&out)?;
    let u = models.bases.saturation.matrix();
    let written: Vec<porous_rom::Result<bool>> = fields
        .par_iter()
        .map(|f| {
            let src = realization_path(&layout.fom(), f.realization());
            if !src.exists() {
                return Ok(false);
            }
            write_matrix(&realization_path(&out, f.realization()), &ls_fit(u, &read_matrix(&src)?))?;
            Ok(true)
        })
        .collect();
    let missing = written.into_iter().collect::<Result<Vec<_>, _>>()?.iter().filter(|ok| !**ok).count();
    let mut meta = std::collections::BTreeMap::new();
    meta.insert("model".to_string(), ModelKind::LsFit.key().to_string());
    meta.insert("realizations".to_string(), fields.len().to_string());
    meta.insert("failed".to_string(), String::new());
    write_sidecar(&out.join("meta.txt"), &meta)?;
    Ok(missing)
}

fn run_rom_stage(cfg: &ExperimentConfig, layout: &Layout) -> CliResult {
    let problem = cfg.problem()?;
    let models = reduced_models(cfg, layout)?;
    let fields = load_fields(&layout.fields())?;
    for &kind in &cfg.models {
        if kind == ModelKind::Fom {
            continue;
        }
        if kind == ModelKind::LsFit {
            let missing = write_ls_fits(&models, layout, &fields)?;
            println!("{}: {} realizations ({} without a full-model run)", kind.label(), fields.len(), missing);
            continue;
        }
        let opts = McOptions {
            out_dir: Some(layout.model(kind)),
            keep_trajectories: false,
        };
        let res = match run_monte_carlo(kind, &problem, Some(&models), &fields, &opts) {
            Ok(r) => r.failures().len(),
            Err(Error::AllFailed) => fields.len(),
            Err(e) => return Err(e.into()),
        };
        println!("{}: {} realizations, {} failed", kind.label(), fields.len(), res);
    }
    Ok(())
}

fn failed_steps(meta: &std::collections::BTreeMap<String, String>, id: u64) -> usize {
    meta.get(&format!("failed_steps.{id:05}")).and_then(|v| v.parse().ok()).unwrap_or(0)
}

fn report_stage(cfg: &ExperimentConfig, layout: &Layout) -> CliResult {
    let fields = load_fields(&layout.fields())?;
    let monitors = cfg.monitor_set()?;
    let col = cfg.report_column();
    let kinds: Vec<ModelKind> = std::iter::once(ModelKind::Fom).chain(cfg.models.iter().copied()).collect();
    let metas = kinds
        .iter()
        .map(|&k| {
            let dir = if k == ModelKind::Fom { layout.fom() } else { layout.model(k) };
            read_sidecar(&dir.join("meta.txt")).map(|m| (dir, m))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let per_field: Vec<porous_rom::Result<Vec<_>>> = fields
        .par_iter()
        .map(|f| {
            let id = f.realization();
            let fom_path = realization_path(&layout.fom(), id);
            let reference = if fom_path.exists() { Some(read_matrix(&fom_path)?) } else { None };
            kinds
                .iter()
                .zip(&metas)
                .map(|(&kind, (dir, meta))| {
                    let path = realization_path(dir, id);
                    let outcome = match &reference {
                        None => Err("full model failed".to_string()),
                        Some(_) if !path.exists() => Err("no trajectory".to_string()),
                        Some(r) => {
                            let cand = read_matrix(&path)?;
                            assess(r, &cand, col, &monitors, failed_steps(meta, id)).map_err(|e| e.to_string())
                        }
                    };
                    Ok((kind, outcome))
                })
                .collect()
        })
        .collect();
    let mut agg = Aggregate::default();
    for (f, res) in fields.iter().zip(per_field) {
        for (kind, outcome) in res? {
            agg.add(kind, f.realization(), outcome);
        }
    }
    let report = agg.finish(&kde_grid(cfg.kde_points))?;
    write_report(&layout.report(), cfg, &report)?;
    println!("model,l2_rel,l2_rel_max,realizations,failed");
    for row in &report.rows {
        println!(
            "{},{:.6e},{:.6e},{},{}",
            row.kind.label(),
            row.l2_rel,
            row.l2_rel_max,
            row.realizations,
            row.failed.len()
        );
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let (common, stage): (&Common, fn(&ExperimentConfig, &Layout) -> CliResult) = match &cli.command {
        Command::GenerateFields(c) => (c, generate_fields),
        Command::RunFom(c) => (c, run_fom_stage),
        Command::BuildBasis(c) => (c, build_basis_stage),
        Command::TrainDrrnn(c) => (c, train_stage),
        Command::RunRom(c) => (c, run_rom_stage),
        Command::Report(c) => (c, report_stage),
    };
    let cfg = common.resolve()?;
    cfg.problem().map_err(|e| Failure::Usage(e.to_string()))?;
    let layout = Layout::new(&common.dir, &cfg);
    std::fs::create_dir_all(&layout.root)?;
    write_sidecar(&layout.root.join("config.txt"), &cfg.to_entries())?;
    with_threads(env_threads(), || stage(&cfg, &layout))?
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
