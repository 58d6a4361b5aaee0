//! Implicit-midpoint time stepping for `u'' + γ u' + (-Δ)^s u + q u = F` in `Ω` with
//! exterior Dirichlet data, plus the discrete identities the scheme satisfies.

mod exterior;
mod identities;
mod profiles;
mod semilinear;
mod time;
mod trajectory;

pub use exterior::{ExteriorData, ExteriorElement, SampledExterior};
pub use identities::{
    energy_identity_residual, energy_series, gronwall_bound, gronwall_ratio, random_smooth_source, verify_time_reversal,
    verify_transposition, ReversalReport, TranspositionOptions, TranspositionReport,
};
pub use profiles::{SpatialBump, TimeProfile};
pub use semilinear::{solve_semilinear, PicardLog, PicardOptions, SemilinearMode, SemilinearSolution};
pub use time::{cumulative, pair, reverse_columns, TimeGrid, TimeQuadrature};
pub use trajectory::{Trajectory, TrajectoryMeta};

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::coeffs::Coefficients;
use crate::error::{check_len, Error, Result};
use crate::operator::FractionalOperator;

pub(crate) const SCHEME: &str = "implicit-midpoint";

/// One implicit-midpoint step of the interior system `u' = w`, `w' = f̄ - G w - M u`
/// with `M = A_ΩΩ + diag(q_Ω)` and `G = diag(γ_Ω)`, factorized once.
pub(crate) struct Stepper {
    lu: LU<f64, Dyn, Dyn>,
    m: DMatrix<f64>,
    g: DVector<f64>,
    dt: f64,
}

impl Stepper {
    pub(crate) fn new(op: &FractionalOperator, coeffs: &Coefficients, dt: f64) -> Result<Self> {
        let grid = op.grid();
        check_len("damping field", grid.n_nodes(), coeffs.gamma().len())?;
        let q = coeffs.q_omega(grid);
        let g = coeffs.gamma_omega(grid);
        let mut m = op.interior_matrix().clone();
        for i in 0..m.nrows() {
            m[(i, i)] += q[i];
        }
        let n = m.nrows();
        let mut p = &m * (0.25 * dt * dt);
        for i in 0..n {
            p[(i, i)] += 1.0 + 0.5 * dt * g[i];
        }
        let lu = p.lu();
        if !lu.is_invertible() {
            return Err(Error::Internal("singular implicit-midpoint matrix".into()));
        }
        Ok(Self { lu, m, g, dt })
    }

    /// Advance `(u, w)` by one step with step-averaged source `fbar`.
    pub(crate) fn step(&self, u: &DVector<f64>, w: &DVector<f64>, fbar: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let dt = self.dt;
        let mw = &self.m * w;
        let mu = &self.m * u;
        let mut rhs = w - mw * (0.25 * dt * dt) - mu * dt + fbar * dt;
        for i in 0..rhs.len() {
            rhs[i] -= 0.5 * dt * self.g[i] * w[i];
        }
        let w_new = self.lu.solve(&rhs).expect("factorization checked at construction");
        let u_new = u + (w + &w_new) * (0.5 * dt);
        (u_new, w_new)
    }
}

/// March the interior system from `(u0, w0)`; `fbar(n, u_n)` supplies the source for step `n`.
pub(crate) fn march(
    stepper: &Stepper,
    u0: DVector<f64>,
    w0: DVector<f64>,
    n_steps: usize,
    mut fbar: impl FnMut(usize, &DVector<f64>) -> Result<DVector<f64>>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = u0.len();
    let mut us = DMatrix::zeros(n, n_steps + 1);
    let mut ws = DMatrix::zeros(n, n_steps + 1);
    us.set_column(0, &u0);
    ws.set_column(0, &w0);
    let (mut u, mut w) = (u0, w0);
    for k in 0..n_steps {
        let f = fbar(k, &u)?;
        let (un, wn) = stepper.step(&u, &w, &f);
        us.set_column(k + 1, &un);
        ws.set_column(k + 1, &wn);
        u = un;
        w = wn;
    }
    Ok((us, ws))
}

/// Interior source with one column per instant, all zeros.
pub fn zero_source(op: &FractionalOperator, tg: &TimeGrid) -> DMatrix<f64> {
    DMatrix::zeros(op.grid().n_omega(), tg.n_times())
}

fn check_source(op: &FractionalOperator, f: &DMatrix<f64>, tg: &TimeGrid) -> Result<()> {
    check_len("source rows (interior nodes)", op.grid().n_omega(), f.nrows())?;
    check_len("source columns (instants)", tg.n_times(), f.ncols())
}

fn step_average(f: &DMatrix<f64>, k: usize) -> DVector<f64> {
    (f.column(k) + f.column(k + 1)) * 0.5
}

fn scatter(op: &FractionalOperator, interior: &DMatrix<f64>) -> DMatrix<f64> {
    let grid = op.grid();
    let mut full = DMatrix::zeros(grid.n_nodes(), interior.ncols());
    for (i, &k) in grid.omega_nodes().iter().enumerate() {
        full.set_row(k, &interior.row(i));
    }
    full
}

fn meta(coeffs: &Coefficients, label: &str) -> TrajectoryMeta {
    TrajectoryMeta {
        coefficients_hash: coeffs.hash(),
        scheme: SCHEME.to_string(),
        label: label.to_string(),
    }
}

/// Zero exterior data; `u0`, `u1` are full-grid vectors that must vanish off `Ω`.
pub fn solve_homogeneous(
    op: &FractionalOperator,
    coeffs: &Coefficients,
    f: &DMatrix<f64>,
    u0: &DVector<f64>,
    u1: &DVector<f64>,
    tg: &TimeGrid,
) -> Result<Trajectory> {
    let grid = op.grid();
    check_len("initial displacement", grid.n_nodes(), u0.len())?;
    check_len("initial velocity", grid.n_nodes(), u1.len())?;
    let mask = grid.omega_mask();
    if (0..grid.n_nodes()).any(|k| !mask[k] && (u0[k] != 0.0 || u1[k] != 0.0)) {
        return Err(Error::Config("homogeneous problem needs initial data supported in the interior".into()));
    }
    let mut traj = solve_inhomogeneous(op, coeffs, f, &ExteriorData::zero(), u0, u1, tg)?;
    traj.meta.label = "homogeneous".into();
    Ok(traj)
}

/// Interior source of the lifted problem for `w = u - φ`: `F - (φ'' + γφ' + Aφ + qφ)` on `Ω`.
pub(crate) fn lifted_source(
    op: &FractionalOperator,
    coeffs: &Coefficients,
    f: &DMatrix<f64>,
    phi: &SampledExterior,
) -> DMatrix<f64> {
    let grid = op.grid();
    let idx = grid.omega_nodes();
    let a_rows = op.matrix().select_rows(idx);
    let a_phi = &a_rows * &phi.value;
    let mut src = f.clone();
    for (i, &k) in idx.iter().enumerate() {
        let (g, q) = (coeffs.gamma()[k], coeffs.q()[k]);
        for j in 0..src.ncols() {
            src[(i, j)] -= phi.d2[(k, j)] + g * phi.d1[(k, j)] + a_phi[(i, j)] + q * phi.value[(k, j)];
        }
    }
    src
}

/// Full-grid initial data must agree with `φ(0)`, `∂_t φ(0)` off `Ω`.
fn check_compatibility(op: &FractionalOperator, phi: &SampledExterior, u0: &DVector<f64>, u1: &DVector<f64>) -> Result<()> {
    let grid = op.grid();
    let mask = grid.omega_mask();
    let scale = 1.0 + phi.value.amax() + phi.d1.amax();
    for k in 0..grid.n_nodes() {
        if mask[k] {
            continue;
        }
        let du = (u0[k] - phi.value[(k, 0)]).abs();
        let dv = (u1[k] - phi.d1[(k, 0)]).abs();
        if du > 1e-12 * scale || dv > 1e-12 * scale {
            return Err(Error::Config(format!(
                "initial data incompatible with the exterior condition at node {k} (mismatch {du:e}, {dv:e})"
            )));
        }
    }
    Ok(())
}

/// Exterior data `φ`; the solution equals `φ` on every exterior node.
pub fn solve_inhomogeneous(
    op: &FractionalOperator,
    coeffs: &Coefficients,
    f: &DMatrix<f64>,
    exterior: &ExteriorData,
    u0: &DVector<f64>,
    u1: &DVector<f64>,
    tg: &TimeGrid,
) -> Result<Trajectory> {
    let grid = op.grid();
    check_source(op, f, tg)?;
    check_len("initial displacement", grid.n_nodes(), u0.len())?;
    check_len("initial velocity", grid.n_nodes(), u1.len())?;
    let phi = exterior.sample(grid, tg)?;
    check_compatibility(op, &phi, u0, u1)?;

    let src = lifted_source(op, coeffs, f, &phi);
    let w0 = DVector::from_vec(grid.restrict_omega(u0.as_slice()));
    let w1 = DVector::from_vec(grid.restrict_omega(u1.as_slice()));
    let stepper = Stepper::new(op, coeffs, tg.dt())?;
    let (wu, wv) = march(&stepper, w0, w1, tg.n_steps(), |k, _| Ok(step_average(&src, k)))?;

    let u = scatter(op, &wu) + &phi.value;
    let v = scatter(op, &wv) + &phi.d1;
    Ok(Trajectory {
        times: tg.times(),
        u,
        v,
        meta: meta(coeffs, "inhomogeneous"),
    })
}

/// Zero initial data driven by exterior data only: the response `u_φ`.
pub fn solve_exterior(op: &FractionalOperator, coeffs: &Coefficients, exterior: &ExteriorData, tg: &TimeGrid) -> Result<Trajectory> {
    exterior.check_start_compatibility()?;
    let n = op.grid().n_nodes();
    let z = DVector::zeros(n);
    solve_inhomogeneous(op, coeffs, &zero_source(op, tg), exterior, &z, &z, tg)
}

/// Terminal-value problem `v'' - γ v' + A v + q v = F` with `v(T) = u_t`, `v'(T) = v_t`
/// and exterior data `φ`, where `γ` and `q` are read from `coeffs` as given.
///
/// The substitution `w(t) = v(T - t)` turns this into a forward problem for the damped
/// operator with the same `γ`, data `(u_t, -v_t)`, source `F⋆` and exterior data `φ⋆`.
pub fn solve_backward(
    op: &FractionalOperator,
    coeffs: &Coefficients,
    f: &DMatrix<f64>,
    exterior: &ExteriorData,
    u_t: &DVector<f64>,
    v_t: &DVector<f64>,
    tg: &TimeGrid,
) -> Result<Trajectory> {
    check_source(op, f, tg)?;
    let f_rev = reverse_columns(f);
    let ext_rev = exterior.reversed(tg.t_final());
    let fwd = solve_inhomogeneous(op, coeffs, &f_rev, &ext_rev, u_t, &(-v_t), tg)?;
    Ok(Trajectory {
        times: tg.times(),
        u: reverse_columns(&fwd.u),
        v: -reverse_columns(&fwd.v),
        meta: meta(coeffs, "backward"),
    })
}
