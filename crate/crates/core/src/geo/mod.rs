//! Structured grids on the unit square, log-normal permeability fields and
//! realization clustering.

mod cluster;
mod field;

pub use cluster::cluster_realizations;
pub use field::{build_sampler, sample_field, GaussianFieldSampler, PermeabilityField};

use crate::error::{invalid, Result};

/// Uniform `nx × ny` cell grid tiling `[0, 1] × [0, 1]`.
///
/// Cells are numbered row-major with x fastest: `i = iy * nx + ix`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredGrid {
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    porosity: f64,
}

impl StructuredGrid {
    pub fn new(nx: usize, ny: usize, porosity: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(invalid(format!("grid dimensions must be positive, got {nx}×{ny}")));
        }
        if !(porosity > 0.0 && porosity < 1.0) {
            return Err(invalid(format!("porosity must lie in (0, 1), got {porosity}")));
        }
        Ok(Self {
            nx,
            ny,
            dx: 1.0 / nx as f64,
            dy: 1.0 / ny as f64,
            porosity,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn porosity(&self) -> f64 {
        self.porosity
    }

    /// Number of cells.
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy
    }

    pub fn pore_volume(&self) -> f64 {
        self.porosity * self.cell_volume() * self.len() as f64
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.ny);
        iy * self.nx + ix
    }

    pub fn coords(&self, i: usize) -> (usize, usize) {
        (i % self.nx, i / self.nx)
    }

    pub fn center(&self, i: usize) -> [f64; 2] {
        let (ix, iy) = self.coords(i);
        [(ix as f64 + 0.5) * self.dx, (iy as f64 + 0.5) * self.dy]
    }

    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    /// Cell containing the point `(x, y)`; points on the outer boundary map to
    /// the adjacent cell.
    pub fn cell_at(&self, x: f64, y: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(invalid(format!("point ({x}, {y}) lies outside the unit square")));
        }
        let ix = ((x / self.dx) as usize).min(self.nx - 1);
        let iy = ((y / self.dy) as usize).min(self.ny - 1);
        Ok(self.index(ix, iy))
    }

    /// Interior faces as `(lower, upper, area, distance)` where `upper` is the
    /// neighbour in the +x or +y direction. X-faces come first.
    pub fn faces(&self) -> Vec<Face> {
        let mut faces = Vec::with_capacity(2 * self.len());
        for iy in 0..self.ny {
            for ix in 0..self.nx.saturating_sub(1) {
                faces.push(Face {
                    lower: self.index(ix, iy),
                    upper: self.index(ix + 1, iy),
                    area: self.dy,
                    distance: self.dx,
                });
            }
        }
        for iy in 0..self.ny.saturating_sub(1) {
            for ix in 0..self.nx {
                faces.push(Face {
                    lower: self.index(ix, iy),
                    upper: self.index(ix, iy + 1),
                    area: self.dx,
                    distance: self.dy,
                });
            }
        }
        faces
    }
}

/// Interior face between two neighbouring cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Face {
    pub lower: usize,
    pub upper: usize,
    pub area: f64,
    pub distance: f64,
}

pub fn build_grid(nx: usize, ny: usize, porosity: f64) -> Result<StructuredGrid> {
    StructuredGrid::new(nx, ny, porosity)
}
