//! Flat `key = value` experiment configuration.
//!
//! Every key is optional and defaults to the full-scale setting:
//!
//! | key | default |
//! |---|---|
//! | `case` | `1` (quarter five-spot; `2` is uniform flow) |
//! | `grid.nx`, `grid.ny`, `grid.porosity` | `64`, `64`, `0.2` |
//! | `fluid.mu_w`, `fluid.mu_o`, `fluid.s_wc`, `fluid.s_or` | `1`, `1.5`, `0.2`, `0.2` |
//! | `source.rate` | `0.05` |
//! | `field.sigma`, `field.corr_len`, `field.seed`, `field.count` | `1`, `0.1`, `2024`, `2000` |
//! | `schedule.dt_pvi`, `schedule.steps`, `schedule.pressure_every` | `0.015`, `160`, `8` |
//! | `train.count`, `train.seed` | `45`, `7` |
//! | `basis.r`, `basis.r_p`, `basis.m` | `10`, `5`, `35` |
//! | `drrnn.layers`, `drrnn.gamma`, `drrnn.zeta`, `drrnn.eps`, `drrnn.seed` | `6`, `0.1`, `0.9`, `1e-8`, `11` |
//! | `drrnn.eta_init` | `0.1:0.4` (interval of the initial `η_k`) |
//! | `drrnn.lr`, `drrnn.decay`, `drrnn.epochs`, `drrnn.patience` | `0.001`, `0.9`, `5000`, `200` |
//! | `report.pvi` | `0.3` for case 1, `0.4` for case 2 |
//! | `report.models` | `ls,pod,drrnn_p,drrnn_pd` |
//! | `report.kde_points` | `201` |
//! | `monitor.points` | `x:y` pairs separated by `,`; case-dependent default |

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Result};
use crate::fom::{FlowProblem, FluidProps, Schedule, SourceConfig};
use crate::geo::{build_grid, StructuredGrid};
use crate::uq::io::parse_key_values;
use crate::uq::stats::MonitorSet;

/// A model whose saturation is compared against the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Fom,
    LsFit,
    Pod,
    PodDeim,
    DrRnnP,
    DrRnnPd,
}

impl ModelKind {
    pub const REDUCED: [ModelKind; 5] = [ModelKind::LsFit, ModelKind::Pod, ModelKind::PodDeim, ModelKind::DrRnnP, ModelKind::DrRnnPd];

    pub fn key(&self) -> &'static str {
        match self {
            ModelKind::Fom => "fom",
            ModelKind::LsFit => "ls",
            ModelKind::Pod => "pod",
            ModelKind::PodDeim => "deim",
            ModelKind::DrRnnP => "drrnn_p",
            ModelKind::DrRnnPd => "drrnn_pd",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Fom => "FOM",
            ModelKind::LsFit => "LS-fit",
            ModelKind::Pod => "POD",
            ModelKind::PodDeim => "POD-DEIM",
            ModelKind::DrRnnP => "DR-RNN^p",
            ModelKind::DrRnnPd => "DR-RNN^pd",
        }
    }
}

impl FromStr for ModelKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        [ModelKind::Fom]
            .into_iter()
            .chain(ModelKind::REDUCED)
            .find(|m| m.key() == s)
            .ok_or_else(|| invalid(format!("unknown model {s:?}")))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub case: u8,
    pub nx: usize,
    pub ny: usize,
    pub porosity: f64,
    pub fluid: FluidProps,
    pub rate: f64,
    pub sigma: f64,
    pub corr_len: f64,
    pub field_seed: u64,
    pub field_count: usize,
    pub schedule: Schedule,
    pub train_count: usize,
    pub train_seed: u64,
    pub r: usize,
    pub r_p: usize,
    pub m: usize,
    pub layers: usize,
    pub gamma: f64,
    pub zeta: f64,
    pub eps: f64,
    pub drrnn_seed: u64,
    /// Interval the initial layer step sizes `η_k` are drawn from.
    pub eta_init: [f64; 2],
    pub lr: f64,
    pub decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub report_pvi: Option<f64>,
    pub models: Vec<ModelKind>,
    pub kde_points: usize,
    pub monitors: Option<Vec<[f64; 2]>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            case: 1,
            nx: 64,
            ny: 64,
            porosity: 0.2,
            fluid: FluidProps::default(),
            rate: 0.05,
            sigma: 1.0,
            corr_len: 0.1,
            field_seed: 2024,
            field_count: 2000,
            schedule: Schedule::default(),
            train_count: 45,
            train_seed: 7,
            r: 10,
            r_p: 5,
            m: 35,
            layers: 6,
            gamma: 0.1,
            zeta: 0.9,
            eps: 1e-8,
            drrnn_seed: 11,
            eta_init: [0.1, 0.4],
            lr: 0.001,
            decay: 0.9,
            epochs: 5000,
            patience: 200,
            report_pvi: None,
            models: vec![ModelKind::LsFit, ModelKind::Pod, ModelKind::DrRnnP, ModelKind::DrRnnPd],
            kde_points: 201,
            monitors: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| invalid(format!("bad value {value:?} for key {key}")))
}

fn parse_points(key: &str, value: &str) -> Result<Vec<[f64; 2]>> {
    value
        .split(',')
        .map(|p| {
            let (x, y) = p
                .trim()
                .split_once(':')
                .ok_or_else(|| invalid(format!("bad point {p:?} for key {key}")))?;
            Ok([parse(key, x.trim())?, parse(key, y.trim())?])
        })
        .collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let entries = parse_key_values(text).map_err(invalid)?;
        for (k, v) in &entries {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "case" => {
                self.case = parse(key, value)?;
                if !matches!(self.case, 1 | 2) {
                    return Err(invalid(format!("case must be 1 or 2, got {value}")));
                }
            }
            "grid.nx" => self.nx = parse(key, value)?,
            "grid.ny" => self.ny = parse(key, value)?,
            "grid.porosity" => self.porosity = parse(key, value)?,
            "fluid.mu_w" => self.fluid.mu_w = parse(key, value)?,
            "fluid.mu_o" => self.fluid.mu_o = parse(key, value)?,
            "fluid.s_wc" => self.fluid.s_wc = parse(key, value)?,
            "fluid.s_or" => self.fluid.s_or = parse(key, value)?,
            "source.rate" => self.rate = parse(key, value)?,
            "field.sigma" => self.sigma = parse(key, value)?,
            "field.corr_len" => self.corr_len = parse(key, value)?,
            "field.seed" => self.field_seed = parse(key, value)?,
            "field.count" => self.field_count = parse(key, value)?,
            "schedule.dt_pvi" => self.schedule.dt_pvi = parse(key, value)?,
            "schedule.steps" => self.schedule.steps = parse(key, value)?,
            "schedule.pressure_every" => self.schedule.pressure_every = parse(key, value)?,
            "train.count" => self.train_count = parse(key, value)?,
            "train.seed" => self.train_seed = parse(key, value)?,
            "basis.r" => self.r = parse(key, value)?,
            "basis.r_p" => self.r_p = parse(key, value)?,
            "basis.m" => self.m = parse(key, value)?,
            "drrnn.layers" => self.layers = parse(key, value)?,
            "drrnn.gamma" => self.gamma = parse(key, value)?,
            "drrnn.zeta" => self.zeta = parse(key, value)?,
            "drrnn.eps" => self.eps = parse(key, value)?,
            "drrnn.seed" => self.drrnn_seed = parse(key, value)?,
            "drrnn.eta_init" => {
                let (lo, hi) = value
                    .split_once(':')
                    .ok_or_else(|| invalid(format!("bad interval {value:?} for key {key}, expected lo:hi")))?;
                let (lo, hi): (f64, f64) = (parse(key, lo.trim())?, parse(key, hi.trim())?);
                if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                    return Err(invalid(format!("bad interval {value:?} for key {key}")));
                }
                self.eta_init = [lo, hi];
            }
            "drrnn.lr" => self.lr = parse(key, value)?,
            "drrnn.decay" => self.decay = parse(key, value)?,
            "drrnn.epochs" => self.epochs = parse(key, value)?,
            "drrnn.patience" => self.patience = parse(key, value)?,
            "report.pvi" => self.report_pvi = Some(parse(key, value)?),
            "report.models" => {
                self.models = value
                    .split(',')
                    .map(|m| m.trim().parse::<ModelKind>())
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .filter(|m| *m != ModelKind::Fom)
                    .collect()
            }
            "report.kde_points" => self.kde_points = parse(key, value)?,
            "monitor.points" => self.monitors = Some(parse_points(key, value)?),
            _ => return Err(invalid(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Canonical text form, parseable by [`ExperimentConfig::parse`].
    pub fn to_entries(&self) -> BTreeMap<String, String> {
        let s = &self.schedule;
        let models: Vec<&str> = self.models.iter().map(|m| m.key()).collect();
        let points: Vec<String> = self.monitor_coords().iter().map(|p| format!("{}:{}", p[0], p[1])).collect();
        [
            ("case", self.case.to_string()),
            ("grid.nx", self.nx.to_string()),
            ("grid.ny", self.ny.to_string()),
            ("grid.porosity", self.porosity.to_string()),
            ("fluid.mu_w", self.fluid.mu_w.to_string()),
            ("fluid.mu_o", self.fluid.mu_o.to_string()),
            ("fluid.s_wc", self.fluid.s_wc.to_string()),
            ("fluid.s_or", self.fluid.s_or.to_string()),
            ("source.rate", self.rate.to_string()),
            ("field.sigma", self.sigma.to_string()),
            ("field.corr_len", self.corr_len.to_string()),
            ("field.seed", self.field_seed.to_string()),
            ("field.count", self.field_count.to_string()),
            ("schedule.dt_pvi", s.dt_pvi.to_string()),
            ("schedule.steps", s.steps.to_string()),
            ("schedule.pressure_every", s.pressure_every.to_string()),
            ("train.count", self.train_count.to_string()),
            ("train.seed", self.train_seed.to_string()),
            ("basis.r", self.r.to_string()),
            ("basis.r_p", self.r_p.to_string()),
            ("basis.m", self.m.to_string()),
            ("drrnn.layers", self.layers.to_string()),
            ("drrnn.gamma", self.gamma.to_string()),
            ("drrnn.zeta", self.zeta.to_string()),
            ("drrnn.eps", self.eps.to_string()),
            ("drrnn.seed", self.drrnn_seed.to_string()),
            ("drrnn.eta_init", format!("{}:{}", self.eta_init[0], self.eta_init[1])),
            ("drrnn.lr", self.lr.to_string()),
            ("drrnn.decay", self.decay.to_string()),
            ("drrnn.epochs", self.epochs.to_string()),
            ("drrnn.patience", self.patience.to_string()),
            ("report.pvi", self.report_time().to_string()),
            ("report.models", models.join(",")),
            ("report.kde_points", self.kde_points.to_string()),
            ("monitor.points", points.join(",")),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn grid(&self) -> Result<StructuredGrid> {
        build_grid(self.nx, self.ny, self.porosity)
    }

    pub fn problem(&self) -> Result<FlowProblem> {
        let grid = self.grid()?;
        let props = FluidProps::new(self.fluid.mu_w, self.fluid.mu_o, self.fluid.s_wc, self.fluid.s_or)?;
        let sources = match self.case {
            1 => SourceConfig::quarter_five_spot(&grid, self.rate)?,
            _ => SourceConfig::uniform_flow(&grid, self.rate)?,
        };
        FlowProblem::new(grid, props, sources, self.schedule)
    }

    pub fn report_time(&self) -> f64 {
        self.report_pvi.unwrap_or(if self.case == 1 { 0.3 } else { 0.4 })
    }

    /// 0-based column of the recorded trajectory nearest the report time.
    pub fn report_column(&self) -> usize {
        self.schedule.step_at_pvi(self.report_time()) - 1
    }

    pub fn monitor_coords(&self) -> Vec<[f64; 2]> {
        self.monitors.clone().unwrap_or_else(|| {
            if self.case == 1 {
                MonitorSet::diagonal()
            } else {
                MonitorSet::centerline()
            }
        })
    }

    pub fn monitor_set(&self) -> Result<MonitorSet> {
        MonitorSet::new(&self.grid()?, &self.monitor_coords())
    }
}
