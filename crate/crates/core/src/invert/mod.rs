//! Coefficient recovery from synthetic measurements: potential and damping from DN-map
//! differences through Runge-fitted probes, and a homogeneous nonlinearity from amplitude
//! asymptotics.

mod linear;
mod mesh;
mod nonlinear;
mod tikhonov;

pub use linear::*;
pub use mesh::RecoveryMesh;
pub use nonlinear::*;
pub use tikhonov::{default_ladder, solve_lcurve, LCurvePoint, TikhonovSolution};

use crate::coeffs::{Coefficients, Nonlinearity};
use crate::dnmap::pair_response;
use crate::error::Result;
use crate::forward::{solve_exterior, solve_semilinear, ExteriorData, SemilinearMode, TimeGrid, TimeQuadrature, Trajectory};
use crate::operator::FractionalOperator;

/// Measurement access to a system whose coefficients the inverter does not see.
pub trait Simulator {
    /// `⟨Λ φ, ψ⟩` for each test `ψ`, from one forward solve.
    fn pairings(&self, phi: &ExteriorData, tests: &[ExteriorData], tg: &TimeGrid, rule: TimeQuadrature) -> Result<Vec<f64>>;

    /// Full trajectory of the semilinear problem driven by exterior data `eta`.
    fn semilinear(&self, eta: &ExteriorData, tg: &TimeGrid) -> Result<Trajectory>;
}

/// Simulator backed by known ground-truth fields.
pub struct SyntheticTwin<'a> {
    op: &'a FractionalOperator,
    truth: Coefficients,
    nonlinearity: Nonlinearity,
    mode: SemilinearMode,
}

impl<'a> SyntheticTwin<'a> {
    pub fn new(op: &'a FractionalOperator, truth: Coefficients) -> Self {
        let n = op.grid().n_omega();
        Self {
            op,
            truth,
            nonlinearity: Nonlinearity::zero(n, 1.0),
            mode: SemilinearMode::Picard(Default::default()),
        }
    }

    pub fn with_nonlinearity(mut self, f: Nonlinearity, mode: SemilinearMode) -> Self {
        self.nonlinearity = f;
        self.mode = mode;
        self
    }

    pub fn truth(&self) -> &Coefficients {
        &self.truth
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nonlinearity
    }
}

impl Simulator for SyntheticTwin<'_> {
    fn pairings(&self, phi: &ExteriorData, tests: &[ExteriorData], tg: &TimeGrid, rule: TimeQuadrature) -> Result<Vec<f64>> {
        let traj = solve_exterior(self.op, &self.truth, phi, tg)?;
        tests.iter().map(|psi| pair_response(self.op, &traj, psi, tg, rule)).collect()
    }

    fn semilinear(&self, eta: &ExteriorData, tg: &TimeGrid) -> Result<Trajectory> {
        Ok(solve_semilinear(self.op, &self.truth, &self.nonlinearity, eta, tg, self.mode)?.trajectory)
    }
}
