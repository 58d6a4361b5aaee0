use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative regularization ladder `10^{-1} … 10^{-8}`, scaled by `σ_max(K)²` at solve time.
pub fn default_ladder() -> Vec<f64> {
    (1..=8).map(|k| 10f64.powi(-k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LCurvePoint {
    pub lambda: f64,
    pub residual_norm: f64,
    pub solution_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TikhonovSolution {
    pub x: Vec<f64>,
    /// Absolute `λ` of the selected rung (0 without regularization).
    pub lambda: f64,
    pub residual_norm: f64,
    pub numerical_rank: usize,
    pub curve: Vec<LCurvePoint>,
}

/// `argmin ‖Kx - b‖² + λ‖x‖²` with `λ` picked at the L-curve corner (largest Menger curvature
/// of `(log ‖Kx-b‖, log ‖x‖)` along the ladder). An empty ladder gives plain least squares and
/// fails on a rank-deficient `K`.
pub fn solve_lcurve(k: &DMatrix<f64>, b: &DVector<f64>, ladder: &[f64]) -> Result<TikhonovSolution> {
    if k.nrows() != b.len() {
        return Err(Error::Shape {
            context: "probe system right-hand side",
            expected: k.nrows(),
            got: b.len(),
        });
    }
    let n = k.ncols();
    let svd = k.clone().svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Internal("singular value decomposition failed".into())),
    };
    let sv = svd.singular_values;
    let smax = sv.max();
    let rank = sv.iter().filter(|&&s| s > 1e-10 * smax).count();
    let beta = u.tr_mul(b);
    let solve = |lambda: f64| -> DVector<f64> {
        let mut x = DVector::zeros(n);
        for i in 0..sv.len() {
            let s = sv[i];
            let filt = if lambda > 0.0 {
                s / (s * s + lambda)
            } else if s > 1e-10 * smax {
                1.0 / s
            } else {
                0.0
            };
            x += vt.row(i).transpose() * (filt * beta[i]);
        }
        x
    };

    if ladder.is_empty() {
        if rank < n {
            return Err(Error::RankDeficient(format!(
                "numerical rank {rank} < {n} unknowns; add more or better-spread interior probes"
            )));
        }
        let x = solve(0.0);
        let residual_norm = (k * &x - b).norm();
        return Ok(TikhonovSolution {
            x: x.as_slice().to_vec(),
            lambda: 0.0,
            residual_norm,
            numerical_rank: rank,
            curve: Vec::new(),
        });
    }

    let mut lambdas: Vec<f64> = ladder.iter().map(|r| r * smax * smax).collect();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    let sols: Vec<DVector<f64>> = lambdas.iter().map(|&l| solve(l)).collect();
    let curve: Vec<LCurvePoint> = lambdas
        .iter()
        .zip(&sols)
        .map(|(&lambda, x)| LCurvePoint {
            lambda,
            residual_norm: (k * x - b).norm(),
            solution_norm: x.norm(),
        })
        .collect();
    let pick = corner(&curve);
    Ok(TikhonovSolution {
        x: sols[pick].as_slice().to_vec(),
        lambda: curve[pick].lambda,
        residual_norm: curve[pick].residual_norm,
        numerical_rank: rank,
        curve,
    })
}

fn corner(curve: &[LCurvePoint]) -> usize {
    let pts: Vec<Option<(f64, f64)>> = curve
        .iter()
        .map(|p| {
            (p.residual_norm > 0.0 && p.solution_norm > 0.0).then(|| (p.residual_norm.ln(), p.solution_norm.ln()))
        })
        .collect();
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 1..curve.len().saturating_sub(1) {
        let (Some(a), Some(b), Some(c)) = (pts[i - 1], pts[i], pts[i + 1]) else {
            continue;
        };
        let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
        let d = |p: (f64, f64), q: (f64, f64)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
        let denom = d(a, b) * d(b, c) * d(a, c);
        if denom <= 0.0 {
            continue;
        }
        // the corner turns clockwise when walking towards smaller λ
        let kappa = -2.0 * cross / denom;
        if kappa > best.1 {
            best = (i, kappa);
        }
    }
    if best.1.is_finite() {
        best.0
    } else {
        0
    }
}
