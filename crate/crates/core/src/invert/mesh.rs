use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::SpatialGrid;

/// Tensor partition of `Ω` into equal cells; every interior node belongs to exactly one cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryMesh {
    cells_per_axis: usize,
    dim: usize,
    assignment: Vec<usize>,
    counts: Vec<usize>,
    centers: Vec<Vec<f64>>,
    widths: Vec<f64>,
}

impl RecoveryMesh {
    pub fn new(grid: &SpatialGrid, cells_per_axis: usize) -> Result<Self> {
        if cells_per_axis == 0 {
            return Err(Error::Config("recovery mesh needs at least one cell per axis".into()));
        }
        let dim = grid.dim();
        let omega = grid.omega();
        let widths: Vec<f64> = (0..dim).map(|d| (omega.hi[d] - omega.lo[d]) / cells_per_axis as f64).collect();
        let n_cells = cells_per_axis.pow(dim as u32);
        let mut assignment = Vec::with_capacity(grid.n_omega());
        let mut counts = vec![0usize; n_cells];
        for &node in grid.omega_nodes() {
            let x = grid.coord(node);
            let mut cell = 0;
            for d in (0..dim).rev() {
                let k = (((x[d] - omega.lo[d]) / widths[d]).floor() as isize).clamp(0, cells_per_axis as isize - 1) as usize;
                cell = cell * cells_per_axis + k;
            }
            counts[cell] += 1;
            assignment.push(cell);
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Config(format!(
                "recovery cell {empty} contains no grid node; use fewer cells or a finer grid"
            )));
        }
        let centers = (0..n_cells)
            .map(|mut cell| {
                let mut c = vec![0.0; dim];
                for (d, slot) in c.iter_mut().enumerate() {
                    let k = cell % cells_per_axis;
                    cell /= cells_per_axis;
                    *slot = omega.lo[d] + (k as f64 + 0.5) * widths[d];
                }
                c
            })
            .collect();
        Ok(Self {
            cells_per_axis,
            dim,
            assignment,
            counts,
            centers,
            widths,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.counts.len()
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cell index of the `i`-th interior node.
    pub fn cell_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    /// Piecewise-constant interior field from cell values.
    pub fn prolong(&self, cells: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.assignment.len(), self.assignment.iter().map(|&c| cells[c]))
    }

    /// Node averages per cell.
    pub fn average(&self, interior: &DVector<f64>) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_cells()];
        for (i, &c) in self.assignment.iter().enumerate() {
            sums[c] += interior[i];
        }
        sums.iter().zip(&self.counts).map(|(s, &n)| s / n as f64).collect()
    }

    /// Discrete `L²` norm of cell values (cell measure weighted).
    pub fn l2_norm(&self, cells: &[f64]) -> f64 {
        let vol: f64 = self.widths.iter().product();
        (vol * cells.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }
}
