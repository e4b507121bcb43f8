use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{factorization::CscCholesky, CscMatrix, CsrMatrix};

use super::fluid::{total_mobility, FluidProps};
use super::SourceConfig;
use crate::error::{invalid, Error, Result};
use crate::geo::{Face, PermeabilityField, StructuredGrid};
use crate::sparse::{csr_from_triplets, spmv};

const RESIDUAL_BOUND: f64 = 1e-10;
const MAX_REFINEMENTS: usize = 3;

/// Face transmissibilities `T = harmonic(k_i, k_j) · area / distance` for
/// every interior face of a grid.
#[derive(Clone, Debug)]
pub struct Transmissibility {
    n: usize,
    faces: Vec<Face>,
    values: Vec<f64>,
}

impl Transmissibility {
    pub fn new(grid: &StructuredGrid, perm: &PermeabilityField) -> Result<Self> {
        if perm.len() != grid.len() {
            return Err(invalid(format!(
                "permeability has {} cells, grid has {}",
                perm.len(),
                grid.len()
            )));
        }
        let k = perm.values();
        let faces = grid.faces();
        let values = faces
            .iter()
            .map(|f| {
                let (a, b) = (k[f.lower], k[f.upper]);
                2.0 * a * b / (a + b) * f.area / f.distance
            })
            .collect();
        Ok(Self {
            n: grid.len(),
            faces,
            values,
        })
    }

    pub fn cells(&self) -> usize {
        self.n
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// How the total mobility on a face is chosen.
#[derive(Clone, Copy, Debug)]
pub enum FaceMobility<'a> {
    /// Mean of the two cell mobilities; used before any flux is known.
    ArithmeticMean,
    /// Mobility of the upstream cell according to the sign of the given face
    /// fluxes (positive means lower → upper). Zero flux falls back to the mean.
    Upstream(&'a [f64]),
}

/// Discrete pressure system `A p = b` with one cell pinned to `p = 0`.
#[derive(Clone, Debug)]
pub struct PressureSystem {
    operator: CsrMatrix<f64>,
    matrix: CsrMatrix<f64>,
    rhs: DVector<f64>,
    conductance: Vec<f64>,
    pin: Option<usize>,
}

impl PressureSystem {
    /// Wraps an already nonsingular system, without face data.
    pub fn from_parts(matrix: CsrMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() != rhs.len() {
            return Err(invalid("pressure system dimensions disagree"));
        }
        Ok(Self {
            operator: matrix.clone(),
            matrix,
            rhs,
            conductance: Vec::new(),
            pin: None,
        })
    }

    /// Operator before pinning (zero row sums, symmetric).
    pub fn operator(&self) -> &CsrMatrix<f64> {
        &self.operator
    }

    /// Pinned matrix actually solved.
    pub fn matrix(&self) -> &CsrMatrix<f64> {
        &self.matrix
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    /// Per-face `T · λ_face`, shared with the velocity computation.
    pub fn conductance(&self) -> &[f64] {
        &self.conductance
    }

    pub fn pin(&self) -> Option<usize> {
        self.pin
    }
}

/// Assembles the two-point flux pressure system for saturation `y_s`.
///
/// The pinned cell's row and column are replaced by the identity (its value
/// is zero, so the right-hand side does not change), which keeps the solved
/// matrix symmetric positive definite.
pub fn assemble_pressure(
    trans: &Transmissibility,
    y_s: &[f64],
    src: &SourceConfig,
    props: &FluidProps,
    mobility: FaceMobility<'_>,
) -> Result<PressureSystem> {
    let n = trans.cells();
    if y_s.len() != n || src.len() != n {
        return Err(invalid(format!(
            "pressure assembly expects {n} cells, got saturation {} and sources {}",
            y_s.len(),
            src.len()
        )));
    }
    if let FaceMobility::Upstream(flux) = mobility {
        if flux.len() != trans.faces().len() {
            return Err(invalid("previous flux does not match the face count"));
        }
    }
    let cell_mob: Vec<f64> = y_s.iter().map(|&s| total_mobility(s, props)).collect();
    let conductance: Vec<f64> = trans
        .faces()
        .iter()
        .zip(trans.values())
        .enumerate()
        .map(|(f, (face, &t))| {
            let (ml, mu) = (cell_mob[face.lower], cell_mob[face.upper]);
            let lam = match mobility {
                FaceMobility::Upstream(flux) if flux[f] > 0.0 => ml,
                FaceMobility::Upstream(flux) if flux[f] < 0.0 => mu,
                _ => 0.5 * (ml + mu),
            };
            t * lam
        })
        .collect();

    let pin = src.pin();
    let mut full = Vec::with_capacity(n + 4 * conductance.len());
    let mut pinned = Vec::with_capacity(n + 4 * conductance.len());
    for i in 0..n {
        full.push((i, i, 0.0));
    }
    pinned.push((pin, pin, 1.0));
    for (face, &c) in trans.faces().iter().zip(&conductance) {
        let (a, b) = (face.lower, face.upper);
        let entries = [(a, a, c), (b, b, c), (a, b, -c), (b, a, -c)];
        full.extend_from_slice(&entries);
        pinned.extend(entries.into_iter().filter(|&(i, j, _)| i != pin && j != pin));
    }
    let mut rhs = DVector::from_column_slice(src.rates());
    rhs[pin] = 0.0;
    Ok(PressureSystem {
        operator: csr_from_triplets(n, n, &full),
        matrix: csr_from_triplets(n, n, &pinned),
        rhs,
        conductance,
        pin: Some(pin),
    })
}

/// Solves the pinned pressure system with a sparse Cholesky factorization
/// plus iterative refinement; fails unless `‖A p − b‖ ≤ 1e-10 ‖b‖`.
pub fn solve_pressure(sys: &PressureSystem) -> Result<DVector<f64>> {
    let a = sys.matrix();
    let b = sys.rhs();
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(DVector::zeros(b.len()));
    }
    let csc = CscMatrix::from(a);
    let chol = CscCholesky::factor(&csc)
        .map_err(|e| Error::Solver(format!("pressure factorization failed: {e:?}")))?;
    let solve = |rhs: &DVector<f64>| -> DVector<f64> {
        let x: DMatrix<f64> = chol.solve(rhs);
        DVector::from_column_slice(x.as_slice())
    };
    let mut x = solve(b);
    for _ in 0..=MAX_REFINEMENTS {
        let r = b - spmv(a, x.as_slice());
        if r.norm() <= RESIDUAL_BOUND * b_norm {
            return Ok(x);
        }
        x += solve(&r);
    }
    let r = (b - spmv(a, x.as_slice())).norm();
    Err(Error::Solver(format!(
        "pressure residual {:.3e} exceeds bound {:.3e}",
        r,
        RESIDUAL_BOUND * b_norm
    )))
}

/// Face fluxes `v = −(T λ)(p_upper − p_lower)`; positive values flow from the
/// lower to the upper cell.
pub fn compute_velocity(trans: &Transmissibility, conductance: &[f64], y_p: &[f64]) -> Vec<f64> {
    trans
        .faces()
        .iter()
        .zip(conductance)
        .map(|(f, &c)| -c * (y_p[f.upper] - y_p[f.lower]))
        .collect()
}

/// Net outflow of every cell for the given face fluxes.
pub fn divergence(faces: &[Face], flux: &[f64], n: usize) -> Vec<f64> {
    let mut div = vec![0.0; n];
    for (f, &v) in faces.iter().zip(flux) {
        div[f.lower] += v;
        div[f.upper] -= v;
    }
    div
}
