use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible number of nodes per axis.
pub const MIN_POINTS_PER_AXIS: usize = 8;

const EDGE_TOL: f64 = 1e-12;

/// Axis-aligned open box used for the interior domain and for measurement windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl OpenBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self { lo, hi }
    }

    /// Strict interior membership (with a tiny tolerance so nodes exactly on an edge are excluded).
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&xi, (&lo, &hi))| xi > lo + EDGE_TOL && xi < hi - EDGE_TOL)
    }

    /// Membership in the closure.
    pub fn closure_contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&xi, (&lo, &hi))| xi >= lo - EDGE_TOL && xi <= hi + EDGE_TOL)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (b - a)).collect()
    }
}

/// Named exterior measurement window together with the grid nodes it contains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExteriorWindow {
    pub name: String,
    pub region: OpenBox,
    pub nodes: Vec<usize>,
}

/// Uniform tensor grid on the truncation box `[-R, R]^n`.
///
/// Nodes are numbered with the first axis running fastest. Values outside the box are
/// taken to be zero by every operator built on the grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpatialGrid {
    dim: usize,
    halfwidth: f64,
    n_per_axis: usize,
    spacing: f64,
    coords: Vec<[f64; 2]>,
    omega: OpenBox,
    omega_mask: Vec<bool>,
    omega_nodes: Vec<usize>,
    windows: Vec<ExteriorWindow>,
}

impl SpatialGrid {
    /// Grid with the default geometry: `Omega = (-1,1)^n`, `W1` a slab with first coordinate
    /// in `(-1.8,-1.2)` and `W2` its mirror image in `(1.2,1.8)`.
    pub fn new(dim: usize, halfwidth: f64, n_per_axis: usize) -> Result<Self> {
        let omega = OpenBox::new(vec![-1.0; dim], vec![1.0; dim]);
        let mut lo1 = vec![-1.0; dim];
        let mut hi1 = vec![1.0; dim];
        lo1[0] = -1.8;
        hi1[0] = -1.2;
        let mut lo2 = vec![-1.0; dim];
        let mut hi2 = vec![1.0; dim];
        lo2[0] = 1.2;
        hi2[0] = 1.8;
        Self::with_geometry(
            dim,
            halfwidth,
            n_per_axis,
            omega,
            vec![
                ("W1".to_string(), OpenBox::new(lo1, hi1)),
                ("W2".to_string(), OpenBox::new(lo2, hi2)),
            ],
        )
    }

    /// One-dimensional default grid on `[-2, 2]`.
    pub fn default_1d(n_points: usize) -> Result<Self> {
        Self::new(1, 2.0, n_points)
    }

    pub fn with_geometry(
        dim: usize,
        halfwidth: f64,
        n_per_axis: usize,
        omega: OpenBox,
        windows: Vec<(String, OpenBox)>,
    ) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Config(format!("dimension must be 1 or 2, got {dim}")));
        }
        if n_per_axis < MIN_POINTS_PER_AXIS {
            return Err(Error::Config(format!(
                "grid too small: {n_per_axis} nodes per axis (need at least {MIN_POINTS_PER_AXIS})"
            )));
        }
        if !(halfwidth > 0.0 && halfwidth.is_finite()) {
            return Err(Error::Config(format!("box half-width must be positive, got {halfwidth}")));
        }
        let boxed = |b: &OpenBox| {
            b.lo.len() == dim
                && b.hi.len() == dim
                && b.lo.iter().zip(&b.hi).all(|(l, h)| l < h && *l >= -halfwidth && *h <= halfwidth)
        };
        if !boxed(&omega) {
            return Err(Error::Config("interior domain must be a nonempty box inside the truncation box".into()));
        }

        let spacing = 2.0 * halfwidth / (n_per_axis - 1) as f64;
        let n_nodes = n_per_axis.pow(dim as u32);
        let coords: Vec<[f64; 2]> = (0..n_nodes)
            .map(|k| {
                let i = k % n_per_axis;
                let j = k / n_per_axis;
                let x = -halfwidth + i as f64 * spacing;
                let y = if dim == 2 { -halfwidth + j as f64 * spacing } else { 0.0 };
                [x, y]
            })
            .collect();
        let point = |k: usize| &coords[k][..dim];

        let omega_mask: Vec<bool> = (0..n_nodes).map(|k| omega.contains(point(k))).collect();
        let omega_nodes: Vec<usize> = (0..n_nodes).filter(|&k| omega_mask[k]).collect();
        if omega_nodes.is_empty() {
            return Err(Error::Config("interior domain contains no grid nodes".into()));
        }

        let mut built = Vec::with_capacity(windows.len());
        for (name, region) in windows {
            if !boxed(&region) {
                return Err(Error::Config(format!("window {name} must be a nonempty box inside the truncation box")));
            }
            // The window must avoid the closure of the interior domain.
            let overlaps = region
                .lo
                .iter()
                .zip(&region.hi)
                .zip(omega.lo.iter().zip(&omega.hi))
                .all(|((wl, wh), (ol, oh))| *wl < *oh && *wh > *ol);
            let touches = region
                .lo
                .iter()
                .zip(&region.hi)
                .zip(omega.lo.iter().zip(&omega.hi))
                .all(|((wl, wh), (ol, oh))| *wl <= *oh && *wh >= *ol);
            if overlaps || touches {
                return Err(Error::Config(format!("window {name} meets the closure of the interior domain")));
            }
            let nodes: Vec<usize> = (0..n_nodes).filter(|&k| region.contains(point(k))).collect();
            if nodes.is_empty() {
                return Err(Error::Config(format!("window {name} contains no grid nodes at this resolution")));
            }
            if nodes.iter().any(|&k| omega_mask[k]) {
                return Err(Error::Internal(format!("window {name} shares nodes with the interior")));
            }
            built.push(ExteriorWindow { name, region, nodes });
        }

        Ok(Self {
            dim,
            halfwidth,
            n_per_axis,
            spacing,
            coords,
            omega,
            omega_mask,
            omega_nodes,
            windows: built,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn halfwidth(&self) -> f64 {
        self.halfwidth
    }

    pub fn n_per_axis(&self) -> usize {
        self.n_per_axis
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Quadrature weight of one node, `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn coord(&self, node: usize) -> &[f64] {
        &self.coords[node][..self.dim]
    }

    pub fn omega(&self) -> &OpenBox {
        &self.omega
    }

    pub fn omega_mask(&self) -> &[bool] {
        &self.omega_mask
    }

    /// Grid indices of the interior nodes, in increasing order.
    pub fn omega_nodes(&self) -> &[usize] {
        &self.omega_nodes
    }

    pub fn n_omega(&self) -> usize {
        self.omega_nodes.len()
    }

    pub fn windows(&self) -> &[ExteriorWindow] {
        &self.windows
    }

    pub fn window(&self, name: &str) -> Result<&ExteriorWindow> {
        self.windows
            .iter()
            .find(|w| w.name == name)
            .ok_or_else(|| Error::Config(format!("unknown exterior window {name:?}")))
    }

    /// Grid refined by a factor of two in spacing (`2(n-1)+1` nodes per axis), same geometry.
    pub fn refined(&self) -> Result<Self> {
        Self::with_geometry(
            self.dim,
            self.halfwidth,
            2 * (self.n_per_axis - 1) + 1,
            self.omega.clone(),
            self.windows
                .iter()
                .map(|w| (w.name.clone(), w.region.clone()))
                .collect(),
        )
    }

    /// Evaluate a function at every node.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.n_nodes()).map(|k| f(self.coord(k))).collect()
    }

    /// Evaluate a function at the interior nodes only (ordering of [`Self::omega_nodes`]).
    pub fn sample_omega(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        self.omega_nodes.iter().map(|&k| f(self.coord(k))).collect()
    }

    /// Scatter an interior vector into a full-grid vector that vanishes off `Omega`.
    pub fn extend_omega(&self, interior: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_nodes()];
        for (&k, &v) in self.omega_nodes.iter().zip(interior) {
            full[k] = v;
        }
        full
    }

    /// Gather the interior entries of a full-grid vector.
    pub fn restrict_omega(&self, full: &[f64]) -> Vec<f64> {
        self.omega_nodes.iter().map(|&k| full[k]).collect()
    }
}
