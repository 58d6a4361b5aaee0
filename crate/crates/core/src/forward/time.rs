use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid on `[0, T]` with `n_steps` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_final: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::Config(format!("final time must be positive, got {t_final}")));
        }
        if n_steps < 2 {
            return Err(Error::Config(format!("need at least 2 time steps, got {n_steps}")));
        }
        Ok(Self { t_final, n_steps })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_times(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        // exact endpoints regardless of rounding in dt
        if n == self.n_steps {
            self.t_final
        } else {
            n as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|n| self.time(n)).collect()
    }

    /// Same interval, twice as many steps.
    pub fn refined(&self) -> Self {
        Self {
            t_final: self.t_final,
            n_steps: 2 * self.n_steps,
        }
    }
}

/// Rule used to integrate products of step-grid samples over `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeQuadrature {
    /// Composite trapezoid on the nodal samples.
    #[default]
    Trapezoid,
    /// `Σ_n dt ⟨(a_n + a_{n+1})/2, (b_n + b_{n+1})/2⟩`: the summation-by-parts partner of
    /// the implicit midpoint rule, under which the discrete duality identities are exact.
    StepAverage,
}

/// Space-time pairing `∫_0^T ⟨a(t), b(t)⟩ dt` of two fields stored column-per-instant,
/// with spatial weight `weight` (the cell volume).
pub fn pair(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64, weight: f64, rule: TimeQuadrature) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let n = a.ncols();
    if n < 2 {
        return 0.0;
    }
    let dots: Vec<f64>;
    let total = match rule {
        TimeQuadrature::Trapezoid => {
            dots = (0..n).map(|k| a.column(k).dot(&b.column(k))).collect();
            dots[1..n - 1].iter().sum::<f64>() + 0.5 * (dots[0] + dots[n - 1])
        }
        TimeQuadrature::StepAverage => (0..n - 1)
            .map(|k| {
                let am = (a.column(k) + a.column(k + 1)) * 0.5;
                let bm = (b.column(k) + b.column(k + 1)) * 0.5;
                am.dot(&bm)
            })
            .sum(),
    };
    total * dt * weight
}

/// Cumulative version of [`pair`] for scalar integrands `g(t_n)` (or step values for
/// [`TimeQuadrature::StepAverage`], where `g` has one entry per step).
pub fn cumulative(g: &[f64], dt: f64, rule: TimeQuadrature) -> Vec<f64> {
    let mut out = Vec::with_capacity(g.len() + 1);
    out.push(0.0);
    let mut acc = 0.0;
    match rule {
        TimeQuadrature::Trapezoid => {
            for w in g.windows(2) {
                acc += 0.5 * dt * (w[0] + w[1]);
                out.push(acc);
            }
        }
        TimeQuadrature::StepAverage => {
            for &v in g {
                acc += dt * v;
                out.push(acc);
            }
        }
    }
    out
}

/// Columns in reverse order: the samples of `g(T - t)`.
pub fn reverse_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.ncols();
    DMatrix::from_fn(m.nrows(), n, |i, j| m[(i, n - 1 - j)])
}
