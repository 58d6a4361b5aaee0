//! Dirichlet-to-Neumann pairings `⟨Λφ, ψ⟩ = ∫⟨A u_φ, ψ⟩` and the identities they satisfy.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coeffs::Coefficients;
use crate::error::{Error, Result};
use crate::forward::{pair, reverse_columns, solve_exterior, ExteriorData, TimeGrid, TimeQuadrature, Trajectory};
use crate::operator::{FractionalOperator, QuadratureMeta};

/// `∫_0^T ⟨A u(t), ψ(t)⟩ dt` for a precomputed response `u`.
pub fn pair_response(op: &FractionalOperator, response: &Trajectory, psi: &ExteriorData, tg: &TimeGrid, rule: TimeQuadrature) -> Result<f64> {
    let grid = op.grid();
    let psi_s = psi.sample(grid, tg)?;
    // only rows where ψ lives are needed
    let rows: Vec<usize> = (0..grid.n_nodes()).filter(|&k| psi_s.value.row(k).amax() != 0.0).collect();
    if rows.is_empty() {
        return Ok(0.0);
    }
    let a_rows = op.matrix().select_rows(&rows);
    let au = a_rows * &response.u;
    let p = psi_s.value.select_rows(&rows);
    Ok(pair(&au, &p, tg.dt(), grid.cell_volume(), rule))
}

/// `⟨Λ_{γ,q} φ, ψ⟩`: one forward solve with exterior data `φ` and zero initial data.
pub fn dn_pairing(
    op: &FractionalOperator,
    coeffs: &Coefficients,
    phi: &ExteriorData,
    psi: &ExteriorData,
    tg: &TimeGrid,
    rule: TimeQuadrature,
) -> Result<f64> {
    check_disjoint(phi, psi)?;
    let u = solve_exterior(op, coeffs, phi, tg)?;
    pair_response(op, &u, psi, tg, rule)
}

fn check_disjoint(phi: &ExteriorData, psi: &ExteriorData) -> Result<()> {
    let a = phi.windows();
    if let Some(w) = psi.windows().iter().find(|w| a.contains(w)) {
        return Err(Error::Config(format!("source and test data share the window {w}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DnMeta {
    pub coefficients_hash: String,
    pub discretization: QuadratureMeta,
    pub t_final: f64,
    pub n_steps: usize,
    pub quadrature: TimeQuadrature,
    pub reversed_tests: bool,
    pub sources: Vec<ExteriorData>,
    pub tests: Vec<ExteriorData>,
}

/// `entries[(j, i)] = ⟨Λ φ_i, ψ_j⋆⟩` (or `ψ_j` without reversal).
#[derive(Debug, Clone)]
pub struct DNMatrix {
    pub entries: DMatrix<f64>,
    pub meta: DnMeta,
}

impl DNMatrix {
    pub fn scale(&self) -> f64 {
        self.entries.amax()
    }

    fn sidecar(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    /// Entries as CSV (`row,col,value`) plus a JSON metadata sidecar next to it.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["row", "col", "value"])?;
        for j in 0..self.entries.nrows() {
            for i in 0..self.entries.ncols() {
                w.write_record([j.to_string(), i.to_string(), format!("{:.17e}", self.entries[(j, i)])])?;
            }
        }
        w.flush()?;
        std::fs::write(Self::sidecar(path), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let meta: DnMeta = serde_json::from_str(&std::fs::read_to_string(Self::sidecar(path))?)?;
        let mut entries = DMatrix::zeros(meta.tests.len(), meta.sources.len());
        let mut r = csv::Reader::from_path(path)?;
        for rec in r.records() {
            let rec = rec?;
            let parse = |k: usize| -> Result<&str> { rec.get(k).ok_or_else(|| Error::Config("short DN matrix record".into())) };
            let j: usize = parse(0)?.parse().map_err(|_| Error::Config("bad row index".into()))?;
            let i: usize = parse(1)?.parse().map_err(|_| Error::Config("bad column index".into()))?;
            let v: f64 = parse(2)?.parse().map_err(|_| Error::Config("bad value".into()))?;
            if j >= entries.nrows() || i >= entries.ncols() {
                return Err(Error::Config(format!("DN matrix entry ({j},{i}) outside the declared bases")));
            }
            entries[(j, i)] = v;
        }
        Ok(Self { entries, meta })
    }
}

/// Batched pairings: one forward solve per source element, tested against every `ψ_j⋆`.
pub fn dn_matrix(
    op: &FractionalOperator,
    coeffs: &Coefficients,
    sources: &[ExteriorData],
    tests: &[ExteriorData],
    tg: &TimeGrid,
    rule: TimeQuadrature,
) -> Result<DNMatrix> {
    dn_matrix_with(op, coeffs, sources, tests, tg, rule, true)
}

/// As [`dn_matrix`], choosing whether the test functions are time-reversed.
pub fn dn_matrix_with(
    op: &FractionalOperator,
    coeffs: &Coefficients,
    sources: &[ExteriorData],
    tests: &[ExteriorData],
    tg: &TimeGrid,
    rule: TimeQuadrature,
    reverse_tests: bool,
) -> Result<DNMatrix> {
    let t = tg.t_final();
    let tests_used: Vec<ExteriorData> = tests.iter().map(|p| if reverse_tests { p.reversed(t) } else { p.clone() }).collect();
    let mut entries = DMatrix::zeros(tests.len(), sources.len());
    for (i, phi) in sources.iter().enumerate() {
        for psi in tests {
            check_disjoint(phi, psi)?;
        }
        let u = solve_exterior(op, coeffs, phi, tg)?;
        for (j, psi) in tests_used.iter().enumerate() {
            entries[(j, i)] = pair_response(op, &u, psi, tg, rule)?;
        }
    }
    if entries.iter().any(|v| !v.is_finite()) {
        return Err(Error::Internal("non-finite DN entry".into()));
    }
    Ok(DNMatrix {
        entries,
        meta: DnMeta {
            coefficients_hash: coeffs.hash(),
            discretization: op.meta().clone(),
            t_final: t,
            n_steps: tg.n_steps(),
            quadrature: rule,
            reversed_tests: reverse_tests,
            sources: sources.to_vec(),
            tests: tests.to_vec(),
        },
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfAdjointnessReport {
    /// `max_{i,j} |⟨Λφ_i, ψ_j⋆⟩ - ⟨Λψ_j, φ_i⋆⟩|`.
    pub defect: f64,
    /// Largest absolute pairing.
    pub scale: f64,
}

impl SelfAdjointnessReport {
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.defect / self.scale
        } else {
            self.defect
        }
    }
}

/// Compare `⟨Λφ_i, ψ_j⋆⟩` with `⟨Λψ_j, φ_i⋆⟩`; with `reverse = false` the `⋆` is dropped
/// (a negative control).
pub fn check_self_adjointness(
    op: &FractionalOperator,
    coeffs: &Coefficients,
    basis1: &[ExteriorData],
    basis2: &[ExteriorData],
    tg: &TimeGrid,
    rule: TimeQuadrature,
    reverse: bool,
) -> Result<SelfAdjointnessReport> {
    let m12 = dn_matrix_with(op, coeffs, basis1, basis2, tg, rule, reverse)?;
    let m21 = dn_matrix_with(op, coeffs, basis2, basis1, tg, rule, reverse)?;
    let defect = (&m12.entries - m21.entries.transpose()).amax();
    let scale = m12.scale().max(m21.scale());
    Ok(SelfAdjointnessReport { defect, scale })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IntegralIdentity {
    pub lhs: f64,
    pub rhs: f64,
    pub defect: f64,
}

/// Second-order time derivative of sampled columns: centred inside, one-sided at the ends.
pub fn centred_time_derivative(m: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let n = m.ncols();
    let mut d = DMatrix::zeros(m.nrows(), n);
    if n < 3 {
        return d;
    }
    for j in 1..n - 1 {
        d.set_column(j, &((m.column(j + 1) - m.column(j - 1)) / (2.0 * dt)));
    }
    d.set_column(0, &((m.column(1) * 4.0 - m.column(0) * 3.0 - m.column(2)) / (2.0 * dt)));
    d.set_column(n - 1, &((m.column(n - 1) * 3.0 - m.column(n - 2) * 4.0 + m.column(n - 3)) / (2.0 * dt)));
    d
}

/// Both sides of `⟨(Λ₁ - Λ₂)φ₁, φ₂⋆⟩ = ∫_Ω [(γ₁-γ₂)∂_t + q₁-q₂](u₁-φ₁) (u₂-φ₂)⋆`, where `u₁`
/// solves with `(γ₁,q₁)` and data `φ₁`, and `u₂` with `(γ₂,q₂)` and data `φ₂`.
///
/// Under [`TimeQuadrature::StepAverage`] the time derivative is the scheme velocity and
/// the identity holds to roundoff; under the trapezoid rule `∂_t` is a centred difference.
pub fn check_integral_identity(
    op: &FractionalOperator,
    c1: &Coefficients,
    c2: &Coefficients,
    phi1: &ExteriorData,
    phi2: &ExteriorData,
    tg: &TimeGrid,
    rule: TimeQuadrature,
) -> Result<IntegralIdentity> {
    check_disjoint(phi1, phi2)?;
    let grid = op.grid();
    let idx = grid.omega_nodes();
    let t = tg.t_final();
    let phi2_star = phi2.reversed(t);

    let u11 = solve_exterior(op, c1, phi1, tg)?;
    let u21 = solve_exterior(op, c2, phi1, tg)?;
    let lhs = pair_response(op, &u11, &phi2_star, tg, rule)? - pair_response(op, &u21, &phi2_star, tg, rule)?;

    let u22 = solve_exterior(op, c2, phi2, tg)?;
    let w1 = u11.u_rows(idx);
    let dw1 = match rule {
        TimeQuadrature::StepAverage => u11.v_rows(idx),
        TimeQuadrature::Trapezoid => centred_time_derivative(&w1, tg.dt()),
    };
    let w2_star = reverse_columns(&u22.u_rows(idx));
    let dg = c1.gamma_omega(grid) - c2.gamma_omega(grid);
    let dq = c1.q_omega(grid) - c2.q_omega(grid);
    let mut integrand = DMatrix::zeros(idx.len(), tg.n_times());
    for i in 0..idx.len() {
        for j in 0..tg.n_times() {
            integrand[(i, j)] = dg[i] * dw1[(i, j)] + dq[i] * w1[(i, j)];
        }
    }
    let rhs = pair(&integrand, &w2_star, tg.dt(), grid.cell_volume(), rule);
    Ok(IntegralIdentity {
        lhs,
        rhs,
        defect: (lhs - rhs).abs(),
    })
}
