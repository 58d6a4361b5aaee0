use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::profiles::{SpatialBump, TimeProfile};
use super::time::TimeGrid;
use crate::error::{Error, Result};
use crate::operator::SpatialGrid;

const COMPAT_TOL: f64 = 1e-12;

/// One tensor element `χ(x) σ(t)` with `χ` a bump restricted to the nodes of a named window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExteriorElement {
    pub window: String,
    pub spatial: SpatialBump,
    pub temporal: TimeProfile,
}

impl ExteriorElement {
    pub fn new(window: &str, spatial: SpatialBump, temporal: TimeProfile) -> Self {
        Self {
            window: window.to_string(),
            spatial,
            temporal,
        }
    }

    /// Bump values on the full grid, zero off the window nodes.
    pub fn spatial_values(&self, grid: &SpatialGrid) -> Result<Vec<f64>> {
        let w = grid.window(&self.window)?;
        let lo = self.spatial.support_lo();
        let hi = self.spatial.support_hi();
        if lo.len() != grid.dim() || hi.len() != grid.dim() {
            return Err(Error::Config(format!("bump in window {} has the wrong dimension", self.window)));
        }
        let inside = lo.iter().zip(&hi).zip(w.region.lo.iter().zip(&w.region.hi)).all(|((l, h), (wl, wh))| l >= &(wl - 1e-12) && h <= &(wh + 1e-12));
        if !inside {
            return Err(Error::Config(format!(
                "bump support [{lo:?}, {hi:?}] leaves window {} [{:?}, {:?}]",
                self.window, w.region.lo, w.region.hi
            )));
        }
        let mut vals = vec![0.0; grid.n_nodes()];
        for &k in &w.nodes {
            vals[k] = self.spatial.eval(grid.coord(k));
        }
        Ok(vals)
    }

    pub fn reversed(&self, total: f64) -> Self {
        Self {
            window: self.window.clone(),
            spatial: self.spatial.clone(),
            temporal: self.temporal.reversed(total),
        }
    }
}

/// Exterior Dirichlet data `φ = Σ_k c_k χ_k(x) σ_k(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ExteriorData {
    pub elements: Vec<ExteriorElement>,
    pub coefficients: Vec<f64>,
}

/// Nodal samples of `φ`, `∂_t φ`, `∂_t² φ` (full grid, one column per instant).
#[derive(Debug, Clone)]
pub struct SampledExterior {
    pub value: DMatrix<f64>,
    pub d1: DMatrix<f64>,
    pub d2: DMatrix<f64>,
}

impl ExteriorData {
    pub fn new(elements: Vec<ExteriorElement>, coefficients: Vec<f64>) -> Result<Self> {
        if elements.len() != coefficients.len() {
            return Err(Error::Shape {
                context: "exterior coefficients",
                expected: elements.len(),
                got: coefficients.len(),
            });
        }
        Ok(Self { elements, coefficients })
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn single(element: ExteriorElement) -> Self {
        Self {
            elements: vec![element],
            coefficients: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            elements: self.elements.clone(),
            coefficients: self.coefficients.iter().map(|c| c * factor).collect(),
        }
    }

    /// Concatenation `self + other`.
    pub fn plus(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.elements.extend(other.elements.iter().cloned());
        out.coefficients.extend(other.coefficients.iter().copied());
        out
    }

    /// `φ⋆(t) = φ(T - t)`.
    pub fn reversed(&self, total: f64) -> Self {
        Self {
            elements: self.elements.iter().map(|e| e.reversed(total)).collect(),
            coefficients: self.coefficients.clone(),
        }
    }

    /// Names of the windows touched by nonzero elements.
    pub fn windows(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for (e, c) in self.elements.iter().zip(&self.coefficients) {
            if *c != 0.0 && !names.contains(&e.window.as_str()) {
                names.push(&e.window);
            }
        }
        names
    }

    pub fn sample(&self, grid: &SpatialGrid, tg: &TimeGrid) -> Result<SampledExterior> {
        let n = grid.n_nodes();
        let nt = tg.n_times();
        let mut value = DMatrix::zeros(n, nt);
        let mut d1 = DMatrix::zeros(n, nt);
        let mut d2 = DMatrix::zeros(n, nt);
        for (e, &c) in self.elements.iter().zip(&self.coefficients) {
            if c == 0.0 {
                continue;
            }
            let chi = e.spatial_values(grid)?;
            let support: Vec<usize> = (0..n).filter(|&k| chi[k] != 0.0).collect();
            for j in 0..nt {
                let (s0, s1, s2) = e.temporal.eval3(tg.time(j));
                for &k in &support {
                    value[(k, j)] += c * chi[k] * s0;
                    d1[(k, j)] += c * chi[k] * s1;
                    d2[(k, j)] += c * chi[k] * s2;
                }
            }
        }
        Ok(SampledExterior { value, d1, d2 })
    }

    /// Zero initial data are compatible only if every profile has `σ(0) = σ'(0) = 0`.
    pub fn check_start_compatibility(&self) -> Result<()> {
        for (e, &c) in self.elements.iter().zip(&self.coefficients) {
            if c == 0.0 {
                continue;
            }
            let (v, d, _) = e.temporal.eval3(0.0);
            if v.abs() > COMPAT_TOL || d.abs() > COMPAT_TOL {
                return Err(Error::Config(format!(
                    "exterior element in {} is incompatible with zero initial data (σ(0) = {v:e}, σ'(0) = {d:e})",
                    e.window
                )));
            }
        }
        Ok(())
    }
}
