//! Runge approximation: exterior controls whose interior responses `u_φ - φ` approximate a
//! prescribed interior space-time target in the discrete `L²(0,T; H̃^s(Ω))` norm.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coeffs::Coefficients;
use crate::error::{Error, Result};
use crate::forward::{pair, solve_exterior, ExteriorData, ExteriorElement, SpatialBump, TimeGrid, TimeProfile, TimeQuadrature};
use crate::operator::FractionalOperator;

/// Interior space-time field with its time derivative, one column per instant.
#[derive(Debug, Clone)]
pub struct InteriorTarget {
    pub values: DMatrix<f64>,
    pub time_derivative: DMatrix<f64>,
}

impl InteriorTarget {
    pub fn zero(op: &FractionalOperator, tg: &TimeGrid) -> Self {
        let z = DMatrix::zeros(op.grid().n_omega(), tg.n_times());
        Self {
            values: z.clone(),
            time_derivative: z,
        }
    }

    /// `χ(x) σ(t)` with `χ` given on the interior nodes.
    pub fn separable(spatial: &[f64], profile: &TimeProfile, tg: &TimeGrid) -> Self {
        let nt = tg.n_times();
        let mut values = DMatrix::zeros(spatial.len(), nt);
        let mut time_derivative = DMatrix::zeros(spatial.len(), nt);
        for j in 0..nt {
            let (s0, s1, _) = profile.eval3(tg.time(j));
            for (i, &x) in spatial.iter().enumerate() {
                values[(i, j)] = x * s0;
                time_derivative[(i, j)] = x * s1;
            }
        }
        Self { values, time_derivative }
    }

    /// `h(x) σ(t)` where `h = -(A_ΩΩ + q)^{-1} (A β)|_Ω` is the static interior field driven by
    /// the exterior profile `β`.
    pub fn quasi_static(
        op: &FractionalOperator,
        coeffs: &Coefficients,
        exterior: &ExteriorElement,
        profile: &TimeProfile,
        tg: &TimeGrid,
    ) -> Result<Self> {
        let grid = op.grid();
        let beta = DVector::from_vec(exterior.spatial_values(grid)?);
        let forcing = op.apply(&beta)?;
        let rhs = DVector::from_vec(grid.restrict_omega(forcing.as_slice()));
        let mut m = op.interior_matrix().clone();
        for (k, q) in coeffs.q_omega(grid).iter().enumerate() {
            m[(k, k)] += q;
        }
        let h = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::IllConditioned("interior operator is singular".into()))?;
        let h: Vec<f64> = h.iter().map(|v| -v).collect();
        Ok(Self::separable(&h, profile, tg))
    }

    pub fn plus(&self, other: &Self) -> Self {
        Self {
            values: &self.values + &other.values,
            time_derivative: &self.time_derivative + &other.time_derivative,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: &self.values * factor,
            time_derivative: &self.time_derivative * factor,
        }
    }

    /// Content hash of the sampled values.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for v in self.values.iter() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Exterior basis with cached interior responses `W_k = (u_{β_k} - β_k)|_Ω`, their time
/// derivatives, and the Gram matrix `G_jk = ∫ h W_j^T A_ΩΩ W_k dt` (trapezoid in time).
#[derive(Debug, Clone)]
pub struct RungeBasis {
    elements: Vec<ExteriorData>,
    responses: Vec<DMatrix<f64>>,
    velocities: Vec<DMatrix<f64>>,
    energy_responses: Vec<DMatrix<f64>>,
    gram: DMatrix<f64>,
    dt: f64,
    weight: f64,
    coefficients_hash: String,
}

impl RungeBasis {
    pub fn build(op: &FractionalOperator, coeffs: &Coefficients, elements: Vec<ExteriorData>, tg: &TimeGrid) -> Result<Self> {
        let mut window: Option<String> = None;
        for e in &elements {
            for w in e.windows() {
                match &window {
                    None => window = Some(w.to_string()),
                    Some(x) if x != w => {
                        return Err(Error::Config(format!("basis spans two windows ({x} and {w})")));
                    }
                    _ => {}
                }
            }
        }
        let idx = op.grid().omega_nodes();
        let mut responses = Vec::with_capacity(elements.len());
        let mut velocities = Vec::with_capacity(elements.len());
        let mut energy_responses = Vec::with_capacity(elements.len());
        for e in &elements {
            let traj = solve_exterior(op, coeffs, e, tg)?;
            let w = traj.u_rows(idx);
            energy_responses.push(op.interior_matrix() * &w);
            velocities.push(traj.v_rows(idx));
            responses.push(w);
        }
        let dt = tg.dt();
        let weight = op.grid().cell_volume();
        let n = elements.len();
        let mut gram = DMatrix::zeros(n, n);
        for j in 0..n {
            for k in 0..=j {
                let g = pair(&responses[j], &energy_responses[k], dt, weight, TimeQuadrature::Trapezoid);
                gram[(j, k)] = g;
                gram[(k, j)] = g;
            }
        }
        Ok(Self {
            elements,
            responses,
            velocities,
            energy_responses,
            gram,
            dt,
            weight,
            coefficients_hash: coeffs.hash(),
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[ExteriorData] {
        &self.elements
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn response(&self, k: usize) -> &DMatrix<f64> {
        &self.responses[k]
    }

    /// The first `k` elements (bases built by [`nested_basis`] are nested under prefixes).
    pub fn prefix(&self, k: usize) -> Self {
        let k = k.min(self.len());
        Self {
            elements: self.elements[..k].to_vec(),
            responses: self.responses[..k].to_vec(),
            velocities: self.velocities[..k].to_vec(),
            energy_responses: self.energy_responses[..k].to_vec(),
            gram: self.gram.view((0, 0), (k, k)).into_owned(),
            dt: self.dt,
            weight: self.weight,
            coefficients_hash: self.coefficients_hash.clone(),
        }
    }

    /// `Σ c_k W_k` and its time derivative.
    pub fn combine(&self, c: &[f64]) -> InteriorTarget {
        let (rows, cols) = self.responses.first().map(|r| r.shape()).unwrap_or((0, 0));
        let mut values = DMatrix::zeros(rows, cols);
        let mut time_derivative = DMatrix::zeros(rows, cols);
        for (k, &ck) in c.iter().enumerate() {
            values += &self.responses[k] * ck;
            time_derivative += &self.velocities[k] * ck;
        }
        InteriorTarget { values, time_derivative }
    }

    /// Exterior data `Σ c_k β_k`.
    pub fn control(&self, c: &[f64]) -> ExteriorData {
        let mut out = ExteriorData::zero();
        for (e, &ck) in self.elements.iter().zip(c) {
            out = out.plus(&e.scaled(ck));
        }
        out
    }

    /// `‖x‖_{L²(0,T;H̃^s)}` for an interior field.
    pub fn energy_norm(&self, op: &FractionalOperator, x: &DMatrix<f64>) -> f64 {
        let ax = op.interior_matrix() * x;
        pair(x, &ax, self.dt, self.weight, TimeQuadrature::Trapezoid).max(0.0).sqrt()
    }

    fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.coefficients_hash.as_bytes());
        h.update(serde_json::to_vec(&self.elements).unwrap_or_default());
        hex::encode(h.finalize())
    }
}

/// Nested exterior basis: element `k` uses spatial center `k mod n_centers` and a time
/// bump of width `width` whose start follows the base-2 van der Corput sequence over
/// `[0, t_final - width]`, so every prefix is spread over the window and the interval.
pub fn nested_basis(window: &str, centers: &[f64], radius: f64, width: f64, t_final: f64, size: usize) -> Vec<ExteriorData> {
    let latest = (t_final - width).max(0.0);
    (0..size)
        .map(|k| {
            let c = centers[k % centers.len()];
            let slot = k / centers.len();
            let start = latest * van_der_corput(slot);
            ExteriorData::single(ExteriorElement::new(window, SpatialBump::new(vec![c], vec![radius]), TimeProfile::bump(start, start + width)))
        })
        .collect()
}

fn van_der_corput(mut n: usize) -> f64 {
    let mut x = 0.0;
    let mut base = 0.5;
    while n > 0 {
        if n & 1 == 1 {
            x += base;
        }
        base *= 0.5;
        n >>= 1;
    }
    x
}

/// Result of a regularized least-squares control fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlFit {
    pub coefficients: Vec<f64>,
    /// `‖Σ c_k W_k - Φ‖` in the discrete `L²(0,T;H̃^s)` norm.
    pub residual: f64,
    pub target_norm: f64,
    pub alpha: f64,
    pub gram_condition: f64,
    pub basis_size: usize,
    /// Identifies basis, coefficients and target.
    pub hash: String,
}

impl ControlFit {
    pub fn relative_residual(&self) -> f64 {
        if self.target_norm > 0.0 {
            self.residual / self.target_norm
        } else {
            self.residual
        }
    }
}

/// `1e-8 · trace(G) / size`.
pub fn default_alpha(gram: &DMatrix<f64>) -> f64 {
    if gram.nrows() == 0 {
        0.0
    } else {
        1e-8 * gram.trace() / gram.nrows() as f64
    }
}

/// Solve `(G + α I) c = b` with `b_k = ∫ h W_k^T A_ΩΩ Φ dt`; `alpha = None` uses [`default_alpha`].
pub fn fit_with_basis(op: &FractionalOperator, basis: &RungeBasis, target: &InteriorTarget, alpha: Option<f64>) -> Result<ControlFit> {
    let n = basis.len();
    let alpha = alpha.unwrap_or_else(|| default_alpha(&basis.gram));
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("regularization must be nonnegative, got {alpha}")));
    }
    if let Some(r) = basis.responses.first() {
        if r.shape() != target.values.shape() {
            return Err(Error::Shape {
                context: "Runge target (interior nodes x instants)",
                expected: r.len(),
                got: target.values.len(),
            });
        }
    }
    let rhs = DVector::from_iterator(
        n,
        basis
            .energy_responses
            .iter()
            .map(|aw| pair(aw, &target.values, basis.dt, basis.weight, TimeQuadrature::Trapezoid)),
    );
    let mut system = basis.gram.clone();
    for i in 0..n {
        system[(i, i)] += alpha;
    }
    let (gram_condition, coefficients) = if n == 0 {
        (1.0, DVector::zeros(0))
    } else {
        let eig = SymmetricEigen::new(system.clone());
        let lmax = eig.eigenvalues.max();
        let lmin = eig.eigenvalues.min();
        let cond = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
        if alpha == 0.0 && !(lmin > 1e-13 * lmax) {
            return Err(Error::IllConditioned(format!(
                "Gram matrix is numerically singular (condition {cond:e}); use a positive regularization"
            )));
        }
        let solve = |r: &DVector<f64>| -> Result<DVector<f64>> {
            match system.clone().cholesky() {
                Some(ch) => Ok(ch.solve(r)),
                None => system
                    .clone()
                    .lu()
                    .solve(r)
                    .ok_or_else(|| Error::IllConditioned("normal system could not be solved".into())),
            }
        };
        let mut c = solve(&rhs)?;
        // two refinement sweeps tighten the normal-equation residual on ill-conditioned Grams
        for _ in 0..2 {
            let r = &rhs - &system * &c;
            c += solve(&r)?;
        }
        (cond, c)
    };

    let fitted = basis.combine(coefficients.as_slice());
    let residual = basis.energy_norm(op, &(fitted.values - &target.values));
    let target_norm = basis.energy_norm(op, &target.values);
    let mut h = Sha256::new();
    h.update(basis.hash().as_bytes());
    h.update(target.hash().as_bytes());
    for c in coefficients.iter() {
        h.update(c.to_le_bytes());
    }
    h.update(alpha.to_le_bytes());
    Ok(ControlFit {
        coefficients: coefficients.as_slice().to_vec(),
        residual,
        target_norm,
        alpha,
        gram_condition,
        basis_size: n,
        hash: hex::encode(h.finalize()),
    })
}

/// Build the cached basis and fit one target.
pub fn fit_control(
    op: &FractionalOperator,
    coeffs: &Coefficients,
    target: &InteriorTarget,
    elements: Vec<ExteriorData>,
    alpha: Option<f64>,
    tg: &TimeGrid,
) -> Result<(RungeBasis, ControlFit)> {
    let basis = RungeBasis::build(op, coeffs, elements, tg)?;
    let fit = fit_with_basis(op, &basis, target, alpha)?;
    Ok((basis, fit))
}

/// `‖(G + αI) c - b‖ / ‖b‖`: optimality of the normal equations.
pub fn normal_equation_defect(basis: &RungeBasis, target: &InteriorTarget, fit: &ControlFit) -> f64 {
    let n = basis.len();
    let b = DVector::from_iterator(
        n,
        basis
            .energy_responses
            .iter()
            .map(|aw| pair(aw, &target.values, basis.dt, basis.weight, TimeQuadrature::Trapezoid)),
    );
    let c = DVector::from_column_slice(&fit.coefficients);
    let lhs = &basis.gram * &c + &c * fit.alpha;
    let scale = b.norm().max(f64::MIN_POSITIVE);
    (lhs - b).norm() / scale
}

/// `|∫⟨∂_t(Σ c_k W_k), Ψ⟩ - ∫⟨∂_t Φ, Ψ⟩|` without checking the end conditions.
pub fn time_derivative_defect(basis: &RungeBasis, fit: &ControlFit, target: &InteriorTarget, psi: &InteriorTarget) -> f64 {
    let fitted = basis.combine(&fit.coefficients);
    let a = pair(&fitted.time_derivative, &psi.values, basis.dt, basis.weight, TimeQuadrature::Trapezoid);
    let b = pair(&target.time_derivative, &psi.values, basis.dt, basis.weight, TimeQuadrature::Trapezoid);
    (a - b).abs()
}

/// As [`time_derivative_defect`], after checking `Ψ(T) = Φ(0) = 0` or `Ψ(T) = Ψ(0) = 0`.
pub fn verify_time_derivative_limit(basis: &RungeBasis, fit: &ControlFit, target: &InteriorTarget, psi: &InteriorTarget) -> Result<f64> {
    let last = psi.values.ncols().saturating_sub(1);
    let tol = 1e-12 * (1.0 + psi.values.amax() + target.values.amax());
    let vanishes = |m: &DMatrix<f64>, j: usize| m.ncols() == 0 || m.column(j).amax() <= tol;
    let psi_end = vanishes(&psi.values, last);
    let cond_a = psi_end && vanishes(&target.values, 0);
    let cond_b = psi_end && vanishes(&psi.values, 0);
    if !(cond_a || cond_b) {
        return Err(Error::Config(
            "test function must satisfy Ψ(T) = Φ(0) = 0 or Ψ(T) = Ψ(0) = 0 for the boundary terms to drop".into(),
        ));
    }
    Ok(time_derivative_defect(basis, fit, target, psi))
}
