//! On-disk layout of pipeline artifacts.
//!
//! Every matrix is a ROMX file; scalars live in `key=value` sidecars.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use super::io::{read_indices, read_matrix, read_sidecar, write_indices, write_matrix, write_sidecar};
use crate::basis::{DeimBasis, PodBasis};
use crate::drrnn::DrRnnParams;
use crate::error::{Error, Result};
use crate::fom::Trajectory;
use crate::geo::PermeabilityField;
use crate::rom::RomBases;

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn column(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

fn read_column(path: &Path) -> Result<Vec<f64>> {
    let m = read_matrix(path)?;
    if m.ncols() != 1 {
        return Err(format_err(path, format!("expected a column, found {}×{}", m.nrows(), m.ncols())));
    }
    Ok(m.as_slice().to_vec())
}

fn get<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<T> {
    meta.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format_err(path, format!("missing or bad {key}")))
}

/// Writes `real_<id>.romx` per field, `ids.txt`, and the sampler seed in
/// `meta.txt`.
pub fn save_fields(dir: &Path, fields: &[PermeabilityField]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for f in fields {
        write_matrix(&super::realization_path(dir, f.realization()), &column(f.values()))?;
    }
    let mut meta = BTreeMap::new();
    meta.insert("count".to_string(), fields.len().to_string());
    if let Some(f) = fields.first() {
        meta.insert("seed".to_string(), f.seed().wrapping_sub(f.realization()).to_string());
    }
    write_sidecar(&dir.join("meta.txt"), &meta)?;
    let ids: Vec<usize> = fields.iter().map(|f| f.realization() as usize).collect();
    write_indices(&dir.join("ids.txt"), &ids)
}

pub fn load_fields(dir: &Path) -> Result<Vec<PermeabilityField>> {
    let meta_path = dir.join("meta.txt");
    let meta = read_sidecar(&meta_path)?;
    let seed: u64 = get(&meta, "seed", &meta_path)?;
    read_indices(&dir.join("ids.txt"))?
        .into_iter()
        .map(|id| {
            let id = id as u64;
            PermeabilityField::new(read_column(&super::realization_path(dir, id))?, seed.wrapping_add(id), id)
        })
        .collect()
}

pub fn save_trajectory(dir: &Path, t: &Trajectory) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_matrix(&dir.join("initial.romx"), &column(t.initial.as_slice()))?;
    write_matrix(&dir.join("saturation.romx"), &t.saturation)?;
    write_matrix(&dir.join("pressure.romx"), &t.pressure)?;
    write_matrix(&dir.join("fractional_flow.romx"), &t.fractional_flow)?;
    let mut meta = BTreeMap::new();
    meta.insert("newton_iterations".to_string(), t.newton_iterations.to_string());
    meta.insert("substeps".to_string(), t.substeps.to_string());
    write_sidecar(&dir.join("meta.txt"), &meta)
}

pub fn load_trajectory(dir: &Path) -> Result<Trajectory> {
    let meta_path = dir.join("meta.txt");
    let meta = read_sidecar(&meta_path)?;
    Ok(Trajectory {
        initial: DVector::from_vec(read_column(&dir.join("initial.romx"))?),
        saturation: read_matrix(&dir.join("saturation.romx"))?,
        pressure: read_matrix(&dir.join("pressure.romx"))?,
        fractional_flow: read_matrix(&dir.join("fractional_flow.romx"))?,
        newton_iterations: get(&meta, "newton_iterations", &meta_path)?,
        substeps: get(&meta, "substeps", &meta_path)?,
    })
}

pub fn trajectory_dir(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("real_{id:05}"))
}

fn save_pod(dir: &Path, name: &str, pod: &PodBasis) -> Result<()> {
    write_matrix(&dir.join(format!("{name}.romx")), pod.matrix())?;
    write_matrix(&dir.join(format!("{name}_sigma.romx")), &column(pod.sigma()))
}

fn load_pod(dir: &Path, name: &str) -> Result<PodBasis> {
    PodBasis::from_orthonormal(
        read_matrix(&dir.join(format!("{name}.romx")))?,
        read_column(&dir.join(format!("{name}_sigma.romx")))?,
    )
}

/// Bases as `pressure.romx`, `saturation.romx` with singular values, and
/// optionally `deim.romx` with `deim_points.txt`.
pub fn save_bases(dir: &Path, bases: &RomBases) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_pod(dir, "pressure", &bases.pressure)?;
    save_pod(dir, "saturation", &bases.saturation)?;
    let deim_path = dir.join("deim.romx");
    match &bases.deim {
        Some(d) => {
            write_matrix(&deim_path, d.basis())?;
            write_indices(&dir.join("deim_points.txt"), d.points())?;
        }
        None if deim_path.exists() => std::fs::remove_file(&deim_path)?,
        None => {}
    }
    Ok(())
}

pub fn load_bases(dir: &Path) -> Result<RomBases> {
    let deim_path = dir.join("deim.romx");
    let deim = if deim_path.exists() {
        Some(DeimBasis::new(read_matrix(&deim_path)?, read_indices(&dir.join("deim_points.txt"))?)?)
    } else {
        None
    };
    Ok(RomBases {
        pressure: load_pod(dir, "pressure")?,
        saturation: load_pod(dir, "saturation")?,
        deim,
    })
}

/// DR-RNN weights as `<name>_u.romx`, `<name>_w.romx`, `<name>_eta.romx` and
/// the shape, fixed scalars and initialization seed in `<name>.txt`.
pub fn save_params(dir: &Path, name: &str, p: &DrRnnParams, seed: Option<u64>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_matrix(&dir.join(format!("{name}_u.romx")), &p.u)?;
    write_matrix(&dir.join(format!("{name}_w.romx")), &column(p.w.as_slice()))?;
    write_matrix(&dir.join(format!("{name}_eta.romx")), &column(&p.eta))?;
    let mut meta: BTreeMap<String, String> = [("gamma", p.gamma), ("zeta", p.zeta), ("eps", p.eps)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), format!("{v:e}")))
        .collect();
    meta.insert("r".to_string(), p.dim().to_string());
    meta.insert("layers".to_string(), p.layers().to_string());
    if let Some(seed) = seed {
        meta.insert("seed".to_string(), seed.to_string());
    }
    write_sidecar(&dir.join(format!("{name}.txt")), &meta)
}

pub fn load_params(dir: &Path, name: &str) -> Result<DrRnnParams> {
    let meta_path = dir.join(format!("{name}.txt"));
    let meta = read_sidecar(&meta_path)?;
    let p = DrRnnParams {
        u: read_matrix(&dir.join(format!("{name}_u.romx")))?,
        w: DVector::from_vec(read_column(&dir.join(format!("{name}_w.romx")))?),
        eta: read_column(&dir.join(format!("{name}_eta.romx")))?,
        gamma: get(&meta, "gamma", &meta_path)?,
        zeta: get(&meta, "zeta", &meta_path)?,
        eps: get(&meta, "eps", &meta_path)?,
    };
    p.validate()?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drrnn::init_params;
    use crate::geo::{build_grid, build_sampler};

    #[test]
    fn fields_round_trip() {
        let g = build_grid(5, 4, 0.2).unwrap();
        let s = build_sampler(&g, 1.0, 0.1, 42).unwrap();
        let fields: Vec<_> = (3..6).map(|l| s.sample(l)).collect();
        let dir = tempfile::tempdir().unwrap();
        save_fields(dir.path(), &fields).unwrap();
        let back = load_fields(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in fields.iter().zip(&back) {
            assert_eq!(a.values(), b.values());
            assert_eq!((a.seed(), a.realization()), (b.seed(), b.realization()));
        }
    }

    #[test]
    fn params_round_trip() {
        let mut p = init_params(4, 3, 1).unwrap();
        p.gamma = 0.3;
        let dir = tempfile::tempdir().unwrap();
        save_params(dir.path(), "net", &p, Some(5)).unwrap();
        let meta = read_sidecar(&dir.path().join("net.txt")).unwrap();
        assert_eq!((meta["r"].as_str(), meta["layers"].as_str(), meta["seed"].as_str()), ("4", "3", "5"));
        assert_eq!(load_params(dir.path(), "net").unwrap(), p);
    }

    #[test]
    fn bases_round_trip() {
        let x = DMatrix::from_fn(12, 6, |i, j| ((i * 7 + j * 3) as f64).sin() + 0.1 * i as f64);
        let pod = crate::basis::compute_pod(&x, 3).unwrap();
        let bases = RomBases {
            pressure: pod.truncated(2).unwrap(),
            deim: Some(DeimBasis::from_pod(&pod).unwrap()),
            saturation: pod,
        };
        let dir = tempfile::tempdir().unwrap();
        save_bases(dir.path(), &bases).unwrap();
        let back = load_bases(dir.path()).unwrap();
        assert_eq!(back.saturation.matrix(), bases.saturation.matrix());
        assert_eq!(back.pressure.sigma(), bases.pressure.sigma());
        assert_eq!(back.deim.unwrap().points(), bases.deim.unwrap().points());
    }
}
