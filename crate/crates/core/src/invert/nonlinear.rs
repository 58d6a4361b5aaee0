use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Simulator;
use crate::coeffs::{Coefficients, Nonlinearity};
use crate::error::{Error, Result};
use crate::forward::{lifted_source, solve_exterior, solve_semilinear, zero_source, ExteriorData, SemilinearMode, TimeGrid, Trajectory};
use crate::operator::FractionalOperator;

/// Remainders `sup_t ‖u_ε(t) - ε v(t)‖_{L²(Ω)}` over decreasing amplitudes, with the log-log fit
/// `log10 ‖R_ε‖ ≈ slope · log10 ε + intercept`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AmplitudeScan {
    pub amplitudes: Vec<f64>,
    pub norms: Vec<f64>,
    /// `+∞` when every remainder vanishes.
    pub slope: f64,
    pub intercept: f64,
    /// Amplitudes whose semilinear solve diverged.
    pub dropped: Vec<f64>,
    /// Largest Picard gap ratio seen across the kept solves, when available.
    pub max_gap_ratio: Option<f64>,
}

/// At least four strictly decreasing positive amplitudes spanning 1.5 decades.
pub fn validate_amplitudes(eps: &[f64]) -> Result<()> {
    if eps.len() < 4 {
        return Err(Error::Config(format!("amplitude scan needs at least 4 amplitudes, got {}", eps.len())));
    }
    if eps.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(Error::Config("amplitudes must be finite and positive".into()));
    }
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("amplitudes must be strictly decreasing".into()));
    }
    let decades = (eps[0] / eps[eps.len() - 1]).log10();
    if decades < 1.5 - 1e-12 {
        return Err(Error::Config(format!("amplitudes span {decades:.2} decades; at least 1.5 are required")));
    }
    Ok(())
}

/// Remainders below this fraction of `ε sup_t ‖v‖` count as zero.
pub const REMAINDER_FLOOR: f64 = 1e-10;

fn sup_l2(op: &FractionalOperator, r: &DMatrix<f64>) -> f64 {
    let h = op.grid().cell_volume();
    r.column_iter().map(|c| (h * c.norm_squared()).sqrt()).fold(0.0, f64::max)
}

fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

struct ScanRun {
    scan: AmplitudeScan,
    linear: DMatrix<f64>,
    kept: Vec<(f64, Trajectory)>,
}

fn scan_core(
    op: &FractionalOperator,
    coeffs: &Coefficients,
    eta: &ExteriorData,
    epsilons: &[f64],
    tg: &TimeGrid,
    mut solve: impl FnMut(&ExteriorData) -> Result<(Trajectory, Option<f64>)>,
) -> Result<ScanRun> {
    validate_amplitudes(epsilons)?;
    let idx = op.grid().omega_nodes();
    let linear = solve_exterior(op, coeffs, eta, tg)?.u_rows(idx);
    let v_size = sup_l2(op, &linear);
    let mut amplitudes = Vec::new();
    let mut norms = Vec::new();
    let mut dropped = Vec::new();
    let mut kept = Vec::new();
    let mut max_ratio: Option<f64> = None;
    for &eps in epsilons {
        match solve(&eta.scaled(eps)) {
            Ok((traj, ratio)) => {
                let r = traj.u_rows(idx) - &linear * eps;
                let mut norm = sup_l2(op, &r);
                // below the fixed-point tolerance a remainder is indistinguishable from roundoff
                if norm <= REMAINDER_FLOOR * eps * v_size {
                    norm = 0.0;
                }
                if !norm.is_finite() {
                    warn!("dropping amplitude {eps:e}: non-finite remainder");
                    dropped.push(eps);
                    continue;
                }
                if let Some(q) = ratio {
                    max_ratio = Some(max_ratio.map_or(q, |m: f64| m.max(q)));
                }
                amplitudes.push(eps);
                norms.push(norm);
                kept.push((eps, traj));
            }
            Err(Error::Divergence { iterations, last_gap, .. }) => {
                warn!("dropping amplitude {eps:e}: semilinear solve diverged after {iterations} iterations (gap {last_gap:e})");
                dropped.push(eps);
            }
            Err(e) => return Err(e),
        }
    }
    if amplitudes.len() < 3 {
        return Err(Error::Scan(format!(
            "only {} amplitudes survived ({} dropped); lower the largest amplitude",
            amplitudes.len(),
            dropped.len()
        )));
    }
    let (slope, intercept) = if norms.iter().all(|&n| n == 0.0) {
        (f64::INFINITY, f64::NEG_INFINITY)
    } else {
        let pts: Vec<(f64, f64)> = amplitudes
            .iter()
            .zip(&norms)
            .filter(|(_, &n)| n > 0.0)
            .map(|(&e, &n)| (e.log10(), n.log10()))
            .collect();
        if pts.len() < 3 {
            return Err(Error::Scan("fewer than 3 nonzero remainders for the log-log fit".into()));
        }
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        fit_line(&x, &y)
    };
    Ok(ScanRun {
        scan: AmplitudeScan {
            amplitudes,
            norms,
            slope,
            intercept,
            dropped,
            max_gap_ratio: max_ratio,
        },
        linear,
        kept,
    })
}

/// Scan with a known nonlinearity.
pub fn amplitude_scan(
    op: &FractionalOperator,
    coeffs: &Coefficients,
    f: &Nonlinearity,
    eta: &ExteriorData,
    epsilons: &[f64],
    tg: &TimeGrid,
    mode: SemilinearMode,
) -> Result<AmplitudeScan> {
    let run = scan_core(op, coeffs, eta, epsilons, tg, |data| {
        let sol = solve_semilinear(op, coeffs, f, data, tg, mode)?;
        let ratio = sol.log.as_ref().and_then(|l| l.ratios.iter().copied().reduce(f64::max));
        Ok((sol.trajectory, ratio))
    })?;
    Ok(run.scan)
}

/// Scan against a simulator whose nonlinearity is hidden; `coeffs` are the matched linear fields.
pub fn amplitude_scan_with(
    op: &FractionalOperator,
    coeffs: &Coefficients,
    sim: &dyn Simulator,
    eta: &ExteriorData,
    epsilons: &[f64],
    tg: &TimeGrid,
) -> Result<AmplitudeScan> {
    Ok(scan_core(op, coeffs, eta, epsilons, tg, |data| Ok((sim.semilinear(data, tg)?, None)))?.scan)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonlinearOptions {
    /// Grid on which the exponent estimate is snapped.
    pub exponent_step: f64,
    /// Samples where the linear response per unit amplitude is below this are discarded.
    pub v_floor: f64,
    /// An amplitude is reliable when its remainder exceeds this fraction of `ε sup‖v‖`.
    pub reliability: f64,
}

impl Default for NonlinearOptions {
    fn default() -> Self {
        Self {
            exponent_step: 0.25,
            v_floor: 1e-3,
            reliability: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonlinearityRecovery {
    /// `None` when every remainder vanishes (no nonlinearity to see).
    pub r_hat: Option<f64>,
    /// Median scan slope over probes.
    pub slope: f64,
    /// Amplitude used for the coefficient readoff, per probe.
    pub epsilon_used: Vec<f64>,
    /// `q̂_f` on interior nodes (zero where unrecoverable).
    pub q_f: Vec<f64>,
    pub recoverable: Vec<bool>,
    pub scans: Vec<AmplitudeScan>,
    pub relative_error: Option<f64>,
}

impl NonlinearityRecovery {
    /// Interior node indices where every probe stayed below the floor.
    pub fn flagged(&self) -> Vec<usize> {
        self.recoverable.iter().enumerate().filter(|(_, &r)| !r).map(|(i, _)| i).collect()
    }

    /// Relative `L²` error on recoverable nodes (absolute when the truth vanishes there).
    pub fn score(&mut self, truth: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for ((&q, &t), &ok) in self.q_f.iter().zip(truth).zip(&self.recoverable) {
            if ok {
                num += (q - t) * (q - t);
                den += t * t;
            }
        }
        let err = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
        self.relative_error = Some(err);
        err
    }
}

/// Per-step residual of the linear midpoint scheme along an interior trajectory:
/// `(w_{k+1}-w_k)/dt + γ w̄ + (A_ΩΩ + q) ū - s̄`, which equals `-f̄` for a converged semilinear solve.
fn step_residual(op: &FractionalOperator, coeffs: &Coefficients, data: &ExteriorData, traj: &Trajectory, tg: &TimeGrid) -> Result<DMatrix<f64>> {
    let grid = op.grid();
    let idx = grid.omega_nodes();
    let phi = data.sample(grid, tg)?;
    let src = lifted_source(op, coeffs, &zero_source(op, tg), &phi);
    let u = traj.u_rows(idx);
    let w = traj.v_rows(idx);
    let g = coeffs.gamma_omega(grid);
    let q = coeffs.q_omega(grid);
    let a = op.interior_matrix();
    let dt = tg.dt();
    let n = tg.n_steps();
    let mut out = DMatrix::zeros(idx.len(), n);
    for k in 0..n {
        let ub = (u.column(k) + u.column(k + 1)) * 0.5;
        let wb = (w.column(k) + w.column(k + 1)) * 0.5;
        let sb = (src.column(k) + src.column(k + 1)) * 0.5;
        let col = (w.column(k + 1) - w.column(k)) / dt + wb.component_mul(&g) + a * &ub + ub.component_mul(&q) - sb;
        out.set_column(k, &col);
    }
    Ok(out)
}

fn snap(x: f64, step: f64) -> f64 {
    (x / step).round() * step
}

/// Recover `r` from the amplitude scans (median slope minus one, snapped) and `q_f` by least
/// squares of the extracted nonlinear term against `ε^{r+1} |v|^r v` at the smallest reliable
/// amplitude of each probe. `coeffs` carries the matched linear fields.
pub fn recover_nonlinearity(
    op: &FractionalOperator,
    coeffs: &Coefficients,
    sim: &dyn Simulator,
    probes: &[ExteriorData],
    epsilons: &[f64],
    tg: &TimeGrid,
    opts: &NonlinearOptions,
) -> Result<NonlinearityRecovery> {
    if probes.is_empty() {
        return Err(Error::Config("nonlinearity recovery needs at least one probe".into()));
    }
    let n = op.grid().n_omega();
    let mut runs = Vec::with_capacity(probes.len());
    for eta in probes {
        runs.push(scan_core(op, coeffs, eta, epsilons, tg, |data| Ok((sim.semilinear(data, tg)?, None)))?);
    }
    let mut slopes: Vec<f64> = runs.iter().map(|r| r.scan.slope).collect();
    slopes.sort_by(f64::total_cmp);
    let slope = if slopes.len() % 2 == 1 {
        slopes[slopes.len() / 2]
    } else {
        0.5 * (slopes[slopes.len() / 2 - 1] + slopes[slopes.len() / 2])
    };
    let r_hat = slope.is_finite().then(|| snap(slope - 1.0, opts.exponent_step).max(0.0));

    let mut num = DVector::<f64>::zeros(n);
    let mut den = DVector::<f64>::zeros(n);
    let mut epsilon_used = Vec::with_capacity(runs.len());
    for (eta, run) in probes.iter().zip(&runs) {
        let vmax = run.linear.amax();
        let pick = run
            .kept
            .iter()
            .zip(&run.scan.norms)
            .rev()
            .find(|((eps, _), &norm)| norm >= opts.reliability * eps * vmax)
            .map(|(k, _)| k)
            .unwrap_or(&run.kept[0]);
        let (eps, traj) = (pick.0, &pick.1);
        epsilon_used.push(eps);
        let v = &run.linear;
        let resid = match r_hat {
            Some(_) => Some(step_residual(op, coeffs, &eta.scaled(eps), traj, tg)?),
            None => None,
        };
        let r = r_hat.unwrap_or(0.0);
        let scale = eps.powf(r + 1.0);
        for k in 0..tg.n_steps() {
            for i in 0..n {
                let (a, b) = (v[(i, k)], v[(i, k + 1)]);
                if a.abs().min(b.abs()) < opts.v_floor {
                    continue;
                }
                let g = scale * 0.5 * (a.abs().powf(r) * a + b.abs().powf(r) * b);
                den[i] += g * g;
                if let Some(res) = &resid {
                    num[i] -= res[(i, k)] * g;
                }
            }
        }
    }
    let recoverable: Vec<bool> = den.iter().map(|&d| d > 0.0).collect();
    let q_f: Vec<f64> = (0..n).map(|i| if recoverable[i] { num[i] / den[i] } else { 0.0 }).collect();
    Ok(NonlinearityRecovery {
        r_hat,
        slope,
        epsilon_used,
        q_f,
        recoverable,
        scans: runs.into_iter().map(|r| r.scan).collect(),
        relative_error: None,
    })
}
