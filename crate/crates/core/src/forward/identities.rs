use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::time::{cumulative, pair, TimeGrid, TimeQuadrature};
use super::trajectory::Trajectory;
use super::{solve_backward, solve_homogeneous, ExteriorData};
use crate::coeffs::Coefficients;
use crate::error::{check_len, Result};
use crate::operator::{FractionalOperator, SpatialGrid};

/// Discrete energy `‖v(t)‖² + ‖A^{1/2} u(t)‖²` of a trajectory supported in `Ω`.
pub fn energy_series(op: &FractionalOperator, traj: &Trajectory) -> Vec<f64> {
    let grid = op.grid();
    let idx = grid.omega_nodes();
    let u = traj.u_rows(idx);
    let v = traj.v_rows(idx);
    let au = op.interior_matrix() * &u;
    (0..traj.n_times())
        .map(|n| grid.cell_volume() * (v.column(n).norm_squared() + u.column(n).dot(&au.column(n))))
        .collect()
}

/// Per-instant defect of the energy identity
/// `E(t) + 2∫⟨γv + qu, v⟩ - E(0) - 2∫⟨F, v⟩` for a trajectory of the homogeneous problem.
///
/// With [`TimeQuadrature::StepAverage`] the integrals use step-averaged velocities and the
/// identity is exact for the scheme; the trapezoid rule leaves an `O(dt²)` defect.
pub fn energy_identity_residual(
    op: &FractionalOperator,
    traj: &Trajectory,
    coeffs: &Coefficients,
    f: &DMatrix<f64>,
    rule: TimeQuadrature,
) -> Result<Vec<f64>> {
    let grid = op.grid();
    let idx = grid.omega_nodes();
    check_len("source rows (interior nodes)", idx.len(), f.nrows())?;
    check_len("source columns (instants)", traj.n_times(), f.ncols())?;
    let energy = energy_series(op, traj);
    let u = traj.u_rows(idx);
    let v = traj.v_rows(idx);
    let g = coeffs.gamma_omega(grid);
    let q = coeffs.q_omega(grid);
    let h = grid.cell_volume();
    let dt = if traj.n_times() > 1 { traj.times[1] - traj.times[0] } else { 0.0 };
    let density = |uu: DVector<f64>, vv: DVector<f64>, ff: DVector<f64>| -> f64 {
        let damp = g.component_mul(&vv) + q.component_mul(&uu);
        h * (damp.dot(&vv) - ff.dot(&vv))
    };
    let integrand: Vec<f64> = match rule {
        TimeQuadrature::Trapezoid => (0..traj.n_times())
            .map(|n| density(u.column(n).into(), v.column(n).into(), f.column(n).into()))
            .collect(),
        TimeQuadrature::StepAverage => (0..traj.n_times() - 1)
            .map(|n| {
                let avg = |m: &DMatrix<f64>| (m.column(n) + m.column(n + 1)) * 0.5;
                density(avg(&u), avg(&v), avg(f))
            })
            .collect(),
    };
    let work = cumulative(&integrand, dt, rule);
    Ok((0..traj.n_times())
        .map(|n| (energy[n] - energy[0] + 2.0 * work[n]).abs())
        .collect())
}

/// Random smooth interior source: a sum of three Gaussian bumps in space, each modulated
/// by a sinusoid in time.
pub fn random_smooth_source<R: Rng>(grid: &SpatialGrid, tg: &TimeGrid, rng: &mut R) -> DMatrix<f64> {
    let omega = grid.omega();
    let idx = grid.omega_nodes();
    let mut g = DMatrix::zeros(idx.len(), tg.n_times());
    for _ in 0..3 {
        let amp: f64 = rng.random_range(-1.0..1.0);
        let center: Vec<f64> = omega.lo.iter().zip(&omega.hi).map(|(l, h)| rng.random_range(*l..*h)).collect();
        let width: f64 = rng.random_range(0.15..0.4);
        let freq: f64 = rng.random_range(0.5..6.0);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        for (i, &k) in idx.iter().enumerate() {
            let r2: f64 = grid.coord(k).iter().zip(&center).map(|(x, c)| (x - c) * (x - c)).sum();
            let space = amp * (-0.5 * r2 / (width * width)).exp();
            for j in 0..tg.n_times() {
                g[(i, j)] += space * (freq * tg.time(j) + phase).sin();
            }
        }
    }
    g
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TranspositionOptions {
    pub n_probes: usize,
    pub seed: u64,
    /// Keep the damping boundary term `⟨γ u0, v(0)⟩`; switching it off is a negative control.
    pub include_gamma_term: bool,
    pub rule: TimeQuadrature,
}

impl Default for TranspositionOptions {
    fn default() -> Self {
        Self {
            n_probes: 8,
            seed: 0,
            include_gamma_term: true,
            rule: TimeQuadrature::StepAverage,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranspositionReport {
    /// Absolute defect per probe.
    pub defects: Vec<f64>,
    /// Sum of the absolute values of the terms of the identity, per probe.
    pub scales: Vec<f64>,
    pub max_defect: f64,
    /// `max_p defect_p / scale_p`.
    pub max_relative: f64,
}

/// Test the forward solution with data `(u0, u1, F)` against adjoint solutions
/// `(L_{-γ} + q) v = G`, `v(T) = v'(T) = 0`, for random smooth `G`:
/// `∫⟨G,u⟩ - ∫⟨F,v⟩ - ⟨u1,v(0)⟩ + ⟨u0,v'(0)⟩ - ⟨γu0,v(0)⟩`.
pub fn verify_transposition(
    op: &FractionalOperator,
    coeffs: &Coefficients,
    u0: &DVector<f64>,
    u1: &DVector<f64>,
    f: &DMatrix<f64>,
    tg: &TimeGrid,
    opts: &TranspositionOptions,
) -> Result<TranspositionReport> {
    let grid = op.grid();
    let idx = grid.omega_nodes();
    check_len("initial displacement (interior)", idx.len(), u0.len())?;
    check_len("initial velocity (interior)", idx.len(), u1.len())?;
    let full = |x: &DVector<f64>| DVector::from_vec(grid.extend_omega(x.as_slice()));
    let traj = solve_homogeneous(op, coeffs, f, &full(u0), &full(u1), tg)?;
    let u = traj.u_rows(idx);
    let h = grid.cell_volume();
    let dt = tg.dt();
    let gamma = coeffs.gamma_omega(grid);
    let zero = DVector::zeros(grid.n_nodes());

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut defects = Vec::with_capacity(opts.n_probes);
    let mut scales = Vec::with_capacity(opts.n_probes);
    for _ in 0..opts.n_probes {
        let g = random_smooth_source(grid, tg, &mut rng);
        let adj = solve_backward(op, coeffs, &g, &ExteriorData::zero(), &zero, &zero, tg)?;
        let v = adj.u_rows(idx);
        let v0 = v.column(0).into_owned();
        let dv0 = adj.v_rows(idx).column(0).into_owned();
        let terms = [
            pair(&g, &u, dt, h, opts.rule),
            -pair(f, &v, dt, h, opts.rule),
            -h * u1.dot(&v0),
            h * u0.dot(&dv0),
            if opts.include_gamma_term {
                -h * gamma.component_mul(u0).dot(&v0)
            } else {
                0.0
            },
        ];
        defects.push(terms.iter().sum::<f64>().abs());
        scales.push(terms.iter().map(|t| t.abs()).sum());
    }
    let max_defect = defects.iter().copied().fold(0.0, f64::max);
    let max_relative = defects
        .iter()
        .zip(&scales)
        .map(|(d, s)| if *s > 0.0 { d / s } else { *d })
        .fold(0.0, f64::max);
    Ok(TranspositionReport {
        defects,
        scales,
        max_defect,
        max_relative,
    })
}

/// `sup_t (‖v‖ + ‖A^{1/2}u‖) / (‖u1‖ + ‖A^{1/2}u0‖ + ‖F‖_{L²L²})` for a homogeneous trajectory.
pub fn gronwall_ratio(op: &FractionalOperator, traj: &Trajectory, f: &DMatrix<f64>) -> f64 {
    let grid = op.grid();
    let idx = grid.omega_nodes();
    let h = grid.cell_volume();
    let u = traj.u_rows(idx);
    let v = traj.v_rows(idx);
    let au = op.interior_matrix() * &u;
    let part = |n: usize| ((h * v.column(n).norm_squared()).sqrt(), (h * u.column(n).dot(&au.column(n))).max(0.0).sqrt());
    let sup = (0..traj.n_times()).map(|n| part(n).0 + part(n).1).fold(0.0, f64::max);
    let dt = if traj.n_times() > 1 { traj.times[1] - traj.times[0] } else { 0.0 };
    let f_norm = pair(f, f, dt, h, TimeQuadrature::Trapezoid).sqrt();
    let (v0, a0) = part(0);
    let data = v0 + a0 + f_norm;
    if data == 0.0 {
        0.0
    } else {
        sup / data
    }
}

/// A priori constant `√2 exp(K T / 2)` with `K = 1 + 2‖γ‖∞ + ‖q‖∞ λ_min^{-1/2}`, where
/// `λ_min` is the smallest eigenvalue of the interior block.
pub fn gronwall_bound(op: &FractionalOperator, coeffs: &Coefficients, t_final: f64) -> f64 {
    let g = coeffs.gamma_omega(op.grid()).amax();
    let q = coeffs.q_omega(op.grid()).amax();
    let lmin = op.interior_spectrum().values[0];
    let k = 1.0 + 2.0 * g + q / lmin.sqrt();
    std::f64::consts::SQRT_2 * (0.5 * k * t_final).exp()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReversalReport {
    /// `max |ũ - u|` where `ũ` is the backward solve with damping `-γ` from `(u(T), u'(T))`.
    pub backward: f64,
    /// `max |w - u⋆|` where `w` solves the reversed problem with terminal data `(u0, -u1)`.
    pub reversed: f64,
    /// Largest nodal value of `u` or `u'`.
    pub scale: f64,
}

impl ReversalReport {
    pub fn relative(&self) -> f64 {
        let d = self.backward.max(self.reversed);
        if self.scale > 0.0 {
            d / self.scale
        } else {
            d
        }
    }
}

/// Both node-wise forms of the time-reversal identity for one forward problem: marching back
/// with negated damping recovers `u`, and `u⋆(t) = u(T-t)` solves the problem with reversed
/// source and exterior data.
pub fn verify_time_reversal(
    op: &FractionalOperator,
    coeffs: &Coefficients,
    f: &DMatrix<f64>,
    exterior: &ExteriorData,
    u0: &DVector<f64>,
    u1: &DVector<f64>,
    tg: &TimeGrid,
) -> Result<ReversalReport> {
    let fwd = super::solve_inhomogeneous(op, coeffs, f, exterior, u0, u1, tg)?;
    let nt = tg.n_times();
    let ut = fwd.u.column(nt - 1).into_owned();
    let vt = fwd.v.column(nt - 1).into_owned();
    let back = solve_backward(op, &coeffs.with_negated_damping(), f, exterior, &ut, &vt, tg)?;
    let backward = (&back.u - &fwd.u).amax().max((&back.v - &fwd.v).amax());
    let star = solve_backward(op, coeffs, &super::reverse_columns(f), &exterior.reversed(tg.t_final()), u0, &(-u1), tg)?;
    let reversed = (&star.u - super::reverse_columns(&fwd.u))
        .amax()
        .max((&star.v + super::reverse_columns(&fwd.v)).amax());
    Ok(ReversalReport {
        backward,
        reversed,
        scale: fwd.u.amax().max(fwd.v.amax()),
    })
}
