use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::time::TimeGrid;
use super::trajectory::Trajectory;
use super::{lifted_source, march, meta, scatter, solve_inhomogeneous, zero_source, ExteriorData, Stepper};
use crate::coeffs::{Coefficients, Nonlinearity};
use crate::error::{Error, Result};
use crate::operator::FractionalOperator;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    /// Initial weight in `e^{-θ t}`.
    pub theta: f64,
    /// Stop when the weighted gap falls below `tol` times the weighted size of the iterate.
    pub tol: f64,
    pub max_iter: usize,
    /// Number of `θ ← 4θ` escalations allowed when a gap ratio reaches 1.
    pub max_escalations: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            theta: 1.0,
            tol: 1e-11,
            max_iter: 100,
            max_escalations: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SemilinearMode {
    /// Linear part by implicit midpoint, nonlinearity at the previous step (first order).
    Imex,
    /// Fixed-point iteration on full linear solves.
    Picard(PicardOptions),
}

/// Iteration history of the fixed-point solve, with gaps measured in the final weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PicardLog {
    pub theta: f64,
    pub escalations: usize,
    pub iterations: usize,
    /// `sup_t e^{-θt} (‖Δu‖_{L²} + ‖A_ΩΩ^{-1/2} Δv‖_{L²})` per iteration.
    pub gaps: Vec<f64>,
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SemilinearSolution {
    pub trajectory: Trajectory,
    pub log: Option<PicardLog>,
}

/// `u'' + γu' + Au + qu + f(u) = 0` in `Ω`, exterior data `φ`, zero initial data.
pub fn solve_semilinear(
    op: &FractionalOperator,
    coeffs: &Coefficients,
    f: &Nonlinearity,
    exterior: &ExteriorData,
    tg: &TimeGrid,
    mode: SemilinearMode,
) -> Result<SemilinearSolution> {
    exterior.check_start_compatibility()?;
    if f.q_f().len() != op.grid().n_omega() {
        return Err(Error::Shape {
            context: "nonlinearity coefficient",
            expected: op.grid().n_omega(),
            got: f.q_f().len(),
        });
    }
    match mode {
        SemilinearMode::Imex => imex(op, coeffs, f, exterior, tg).map(|trajectory| SemilinearSolution { trajectory, log: None }),
        SemilinearMode::Picard(opts) => picard(op, coeffs, f, exterior, tg, &opts),
    }
}

fn imex(op: &FractionalOperator, coeffs: &Coefficients, f: &Nonlinearity, exterior: &ExteriorData, tg: &TimeGrid) -> Result<Trajectory> {
    let grid = op.grid();
    let phi = exterior.sample(grid, tg)?;
    let src = lifted_source(op, coeffs, &zero_source(op, tg), &phi);
    let stepper = Stepper::new(op, coeffs, tg.dt())?;
    let n = grid.n_omega();
    let (wu, wv) = march(&stepper, DVector::zeros(n), DVector::zeros(n), tg.n_steps(), |k, u| {
        let lin = (src.column(k) + src.column(k + 1)) * 0.5;
        Ok(lin - f.eval(u)?)
    })?;
    let mut m = meta(coeffs, "semilinear-imex");
    m.scheme = "implicit-midpoint linear part, explicit nonlinearity".into();
    Ok(Trajectory {
        times: tg.times(),
        u: scatter(op, &wu) + &phi.value,
        v: scatter(op, &wv) + &phi.d1,
        meta: m,
    })
}

/// Per-instant `‖x‖_{L²}` and `‖A_ΩΩ^{-1/2} y‖_{L²}` summed, for interior blocks.
fn gap_series(op: &FractionalOperator, du: &DMatrix<f64>, dv: &DMatrix<f64>) -> Vec<f64> {
    let h = op.grid().cell_volume();
    let sp = op.interior_spectrum();
    let inv_half = DVector::from_iterator(sp.len(), sp.values.iter().map(|&l| if l > 0.0 { 1.0 / l.sqrt() } else { 0.0 }));
    let coeff = sp.vectors.tr_mul(dv);
    (0..du.ncols())
        .map(|n| {
            let a = (h * du.column(n).norm_squared()).sqrt();
            let b = (h * coeff.column(n).component_mul(&inv_half).norm_squared()).sqrt();
            a + b
        })
        .collect()
}

fn weighted_sup(series: &[f64], times: &[f64], theta: f64) -> f64 {
    series
        .iter()
        .zip(times)
        .map(|(g, t)| (-theta * t).exp() * g)
        .fold(0.0, f64::max)
}

fn picard(
    op: &FractionalOperator,
    coeffs: &Coefficients,
    f: &Nonlinearity,
    exterior: &ExteriorData,
    tg: &TimeGrid,
    opts: &PicardOptions,
) -> Result<SemilinearSolution> {
    let grid = op.grid();
    let idx = grid.omega_nodes();
    let times = tg.times();
    let zero = DVector::zeros(grid.n_nodes());
    let base_src = zero_source(op, tg);
    let mut current = solve_inhomogeneous(op, coeffs, &base_src, exterior, &zero, &zero, tg)?;
    let mut raw: Vec<Vec<f64>> = Vec::new();
    let mut theta = opts.theta;
    let mut escalations = 0;
    let mut gaps: Vec<f64> = Vec::new();

    if f.is_zero() {
        let mut trajectory = current;
        trajectory.meta.label = "semilinear-picard".into();
        let log = PicardLog {
            theta,
            escalations,
            iterations: 0,
            gaps,
            ratios: Vec::new(),
        };
        return Ok(SemilinearSolution { trajectory, log: Some(log) });
    }

    for iter in 1..=opts.max_iter {
        let u_in = current.u_rows(idx);
        let mut src = base_src.clone();
        for j in 0..tg.n_times() {
            let col = f.eval(&u_in.column(j).into_owned())?;
            src.set_column(j, &(-col));
        }
        let next = solve_inhomogeneous(op, coeffs, &src, exterior, &zero, &zero, tg)?;
        let du = next.u_rows(idx) - &u_in;
        let dv = next.v_rows(idx) - current.v_rows(idx);
        raw.push(gap_series(op, &du, &dv));
        let size = gap_series(op, &next.u_rows(idx), &next.v_rows(idx));
        current = next;

        gaps = raw.iter().map(|s| weighted_sup(s, &times, theta)).collect();
        let k = gaps.len();
        if k >= 2 && gaps[k - 1] >= gaps[k - 2] && escalations < opts.max_escalations {
            theta *= 4.0;
            escalations += 1;
            warn!("picard gap ratio {:.3} at iteration {iter}; escalating θ to {theta}", gaps[k - 1] / gaps[k - 2]);
            gaps = raw.iter().map(|s| weighted_sup(s, &times, theta)).collect();
        }
        let last = *gaps.last().expect("nonempty");
        if !last.is_finite() || (k >= 2 && last > 1e8 * gaps[0]) {
            return Err(Error::Divergence {
                iterations: iter,
                last_gap: last,
                gaps,
            });
        }
        let scale = weighted_sup(&size, &times, theta).max(f64::MIN_POSITIVE);
        if last <= opts.tol * scale {
            let ratios = gaps.windows(2).map(|w| w[1] / w[0]).collect();
            let mut trajectory = current;
            trajectory.meta.label = "semilinear-picard".into();
            return Ok(SemilinearSolution {
                trajectory,
                log: Some(PicardLog {
                    theta,
                    escalations,
                    iterations: iter,
                    gaps,
                    ratios,
                }),
            });
        }
    }
    let last = gaps.last().copied().unwrap_or(f64::NAN);
    Err(Error::Divergence {
        iterations: opts.max_iter,
        last_gap: last,
        gaps,
    })
}
