use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::mesh::RecoveryMesh;
use super::tikhonov::{default_ladder, solve_lcurve, LCurvePoint, TikhonovSolution};
use super::Simulator;
use crate::coeffs::Coefficients;
use crate::dnmap::{centred_time_derivative, pair_response};
use crate::error::{Error, Result};
use crate::forward::{pair, reverse_columns, solve_exterior, ExteriorData, ExteriorElement, SpatialBump, TimeGrid, TimeProfile, TimeQuadrature};
use crate::operator::FractionalOperator;
use crate::runge::{fit_with_basis, nested_basis, InteriorTarget, RungeBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveredField {
    Potential,
    Damping,
}

/// How the rows of the probe system are modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProbeModel {
    /// Exact identity rows from the simulated interior responses, refreshed by Born iteration.
    #[default]
    Responses,
    /// Rows `∫ δ Φ₁ Φ₂⋆` from the Runge targets themselves.
    Targets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryOrder {
    #[default]
    PotentialFirst,
    DampingFirst,
}

/// Geometry of the Runge bases and probe targets (one space dimension).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeDesign {
    pub basis_size: usize,
    /// Spatial centres of the `W1` basis; the `W2` basis uses their mirror images.
    pub basis_centres: Vec<f64>,
    pub basis_radius: f64,
    pub basis_width: f64,
    pub alpha: Option<f64>,
    /// The cutoff `χ_ω` equals one on `|x| ≤ inner` and vanishes for `|x| ≥ outer`.
    pub cutoff_inner: f64,
    pub cutoff_outer: f64,
    /// Radius of the interior bumps `Φ₂` in units of the cell width.
    pub bump_radius_cells: f64,
    /// Number of first probes: `χ_ω` times the cosine modes `cos(jπ(x+1)/2)`, `j < first_modes`.
    pub first_modes: usize,
}

impl Default for ProbeDesign {
    fn default() -> Self {
        Self {
            basis_size: 32,
            basis_centres: vec![-1.7, -1.6, -1.5, -1.4],
            basis_radius: 0.08,
            basis_width: 0.6,
            alpha: None,
            cutoff_inner: 0.7,
            cutoff_outer: 0.95,
            bump_radius_cells: 1.5,
            first_modes: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub role: String,
    pub fit_hash: String,
    pub relative_residual: f64,
}

#[derive(Debug, Clone)]
pub struct Probe {
    pub control: ExteriorData,
    pub target: InteriorTarget,
    pub record: ProbeRecord,
}

/// Runge-fitted controls: `first` in `W1` (approximating `Φ₁`), `second` in `W2` (approximating the `Φ₂` bumps).
#[derive(Debug, Clone)]
pub struct ProbeSet {
    pub field: RecoveredField,
    pub first: Vec<Probe>,
    pub second: Vec<Probe>,
}

impl ProbeSet {
    pub fn records(&self) -> Vec<ProbeRecord> {
        self.first.iter().chain(&self.second).map(|p| p.record.clone()).collect()
    }

    pub fn max_residual(&self) -> f64 {
        self.first.iter().chain(&self.second).map(|p| p.record.relative_residual).fold(0.0, f64::max)
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
}

fn cutoff(x: f64, inner: f64, outer: f64) -> f64 {
    1.0 - smoothstep((x.abs() - inner) / (outer - inner))
}

fn fit_probe(op: &FractionalOperator, basis: &RungeBasis, target: InteriorTarget, alpha: Option<f64>, role: String) -> Result<Probe> {
    let fit = fit_with_basis(op, basis, &target, alpha)?;
    Ok(Probe {
        control: basis.control(&fit.coefficients),
        record: ProbeRecord {
            role,
            fit_hash: fit.hash.clone(),
            relative_residual: fit.relative_residual(),
        },
        target,
    })
}

/// Build the probe family for one field. Potential probes use `Φ₁ = χ_ω σ(t)` with a plateau
/// `σ` that is flat on the bulk of `(0,T)`; damping probes use `Φ₁ = χ_ω ∫₀ᵗ η` so that
/// `∂_tΦ₁ = χ_ω η`. The `Φ₂` are space-time bumps centred on the recovery cells.
pub fn build_probes(
    op: &FractionalOperator,
    reference: &Coefficients,
    mesh: &RecoveryMesh,
    field: RecoveredField,
    tg: &TimeGrid,
    design: &ProbeDesign,
) -> Result<ProbeSet> {
    let grid = op.grid();
    if grid.dim() != 1 {
        return Err(Error::Config("probe design is implemented for one space dimension".into()));
    }
    let t = tg.t_final();
    let mirrored: Vec<f64> = design.basis_centres.iter().map(|c| -c).collect();
    let b1 = RungeBasis::build(
        op,
        reference,
        nested_basis("W1", &design.basis_centres, design.basis_radius, design.basis_width, t, design.basis_size),
        tg,
    )?;
    let b2 = RungeBasis::build(
        op,
        reference,
        nested_basis("W2", &mirrored, design.basis_radius, design.basis_width, t, design.basis_size),
        tg,
    )?;
    let alpha1 = design.alpha.unwrap_or_else(|| crate::runge::default_alpha(b1.gram()));
    let alpha2 = design.alpha.unwrap_or_else(|| crate::runge::default_alpha(b2.gram()));

    if design.first_modes == 0 {
        return Err(Error::Config("probe design needs at least one first probe".into()));
    }
    let profile = match field {
        RecoveredField::Potential => TimeProfile::Plateau {
            start: 0.0,
            end: t,
            ramp: 0.25 * t,
        },
        RecoveredField::Damping => TimeProfile::IntegratedBump { start: 0.05 * t, end: 0.55 * t },
    };
    let mut first = Vec::with_capacity(design.first_modes);
    for j in 0..design.first_modes {
        let k = j as f64 * std::f64::consts::FRAC_PI_2;
        let chi = grid.sample_omega(|x| cutoff(x[0], design.cutoff_inner, design.cutoff_outer) * (k * (x[0] + 1.0)).cos());
        first.push(fit_probe(op, &b1, InteriorTarget::separable(&chi, &profile, tg), Some(alpha1), format!("phi1[{j}]"))?);
    }

    let lo = grid.omega().lo[0];
    let hi = grid.omega().hi[0];
    let mut second = Vec::with_capacity(mesh.n_cells());
    for (m, c) in mesh.centers().iter().enumerate() {
        let r = (design.bump_radius_cells * mesh.widths()[0]).min(0.999 * (c[0] - lo).min(hi - c[0]));
        let bump = SpatialBump::new(vec![c[0]], vec![r]);
        let shape = grid.sample_omega(|x| bump.eval(x));
        let target = InteriorTarget::separable(&shape, &TimeProfile::bump(0.1 * t, 0.9 * t), tg);
        second.push(fit_probe(op, &b2, target, Some(alpha2), format!("phi2[{m}]"))?);
    }
    Ok(ProbeSet { field, first, second })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryOptions {
    /// Relative Tikhonov ladder (empty: unregularized).
    pub ladder: Vec<f64>,
    pub model: ProbeModel,
    /// Pair against time-reversed tests `φ₂⋆` (switching this off is an ablation).
    pub time_reversal: bool,
    pub born_iterations: usize,
    pub born_tol: f64,
    pub rule: TimeQuadrature,
    /// Probe residuals above this trigger a warning under [`ProbeModel::Targets`].
    pub residual_warning: f64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            ladder: default_ladder(),
            model: ProbeModel::Responses,
            time_reversal: true,
            born_iterations: 8,
            born_tol: 1e-6,
            rule: TimeQuadrature::StepAverage,
            residual_warning: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InversionResult {
    pub field: RecoveredField,
    /// Correction per recovery cell.
    pub cells: Vec<f64>,
    /// Reference plus correction on interior nodes.
    pub recovered: Vec<f64>,
    pub lambda: f64,
    pub l_curve: Vec<LCurvePoint>,
    pub born_iterations: usize,
    /// `‖K δ - b‖ / ‖b‖` at the final iterate.
    pub data_misfit: f64,
    pub reference_hash: String,
    pub probes: Vec<ProbeRecord>,
    pub warnings: Vec<String>,
    /// Relative `L²` error of the correction against the cell-averaged truth (synthetic runs only).
    pub relative_error: Option<f64>,
}

impl InversionResult {
    /// Record the error against a known interior correction; returns it. When the true
    /// correction vanishes the absolute norm is reported instead.
    pub fn score(&mut self, mesh: &RecoveryMesh, true_correction: &DVector<f64>) -> f64 {
        let truth = mesh.average(true_correction);
        let diff: Vec<f64> = self.cells.iter().zip(&truth).map(|(a, b)| a - b).collect();
        let denom = mesh.l2_norm(&truth);
        let err = if denom > 0.0 { mesh.l2_norm(&diff) / denom } else { mesh.l2_norm(&diff) };
        self.relative_error = Some(err);
        err
    }
}

fn tests_for(probes: &ProbeSet, t: f64, reversal: bool) -> Vec<ExteriorData> {
    probes
        .second
        .iter()
        .map(|p| if reversal { p.control.reversed(t) } else { p.control.clone() })
        .collect()
}

/// `b_{(j,m)} = ⟨(Λ_true - Λ_ref) φ₁ⱼ, ψ_m⟩` with `ψ_m = φ₂ₘ⋆` (or `φ₂ₘ` when reversal is off).
pub fn measure(
    op: &FractionalOperator,
    reference: &Coefficients,
    sim: &dyn Simulator,
    probes: &ProbeSet,
    tg: &TimeGrid,
    opts: &RecoveryOptions,
) -> Result<DVector<f64>> {
    let tests = tests_for(probes, tg.t_final(), opts.time_reversal);
    let mut b = Vec::with_capacity(probes.first.len() * tests.len());
    for p in &probes.first {
        let hidden = sim.pairings(&p.control, &tests, tg, opts.rule)?;
        let traj = solve_exterior(op, reference, &p.control, tg)?;
        for (psi, h) in tests.iter().zip(hidden) {
            b.push(h - pair_response(op, &traj, psi, tg, opts.rule)?);
        }
    }
    Ok(DVector::from_vec(b))
}

/// Per-node time pairings `∫ a_i b_i dt` (no spatial weight).
fn node_pairs(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64, rule: TimeQuadrature) -> Vec<f64> {
    (0..a.nrows())
        .map(|i| pair(&a.rows(i, 1).into_owned(), &b.rows(i, 1).into_owned(), dt, 1.0, rule))
        .collect()
}

struct SecondFields {
    fields: Vec<DMatrix<f64>>,
}

fn second_fields(op: &FractionalOperator, reference: &Coefficients, probes: &ProbeSet, tg: &TimeGrid, opts: &RecoveryOptions) -> Result<SecondFields> {
    let idx = op.grid().omega_nodes();
    let mut fields = Vec::with_capacity(probes.second.len());
    for p in &probes.second {
        let w = match opts.model {
            ProbeModel::Responses => solve_exterior(op, reference, &p.control, tg)?.u_rows(idx),
            ProbeModel::Targets => p.target.values.clone(),
        };
        fields.push(if opts.time_reversal { reverse_columns(&w) } else { w });
    }
    Ok(SecondFields { fields })
}

fn model_matrix(
    op: &FractionalOperator,
    estimate: &Coefficients,
    probes: &ProbeSet,
    second: &SecondFields,
    mesh: &RecoveryMesh,
    tg: &TimeGrid,
    opts: &RecoveryOptions,
) -> Result<DMatrix<f64>> {
    let grid = op.grid();
    let idx = grid.omega_nodes();
    let h = grid.cell_volume();
    let n2 = second.fields.len();
    let mut k = DMatrix::zeros(probes.first.len() * n2, mesh.n_cells());
    for (j, p) in probes.first.iter().enumerate() {
        let g = match (opts.model, probes.field) {
            (ProbeModel::Targets, RecoveredField::Potential) => p.target.values.clone(),
            (ProbeModel::Targets, RecoveredField::Damping) => p.target.time_derivative.clone(),
            (ProbeModel::Responses, field) => {
                let traj = solve_exterior(op, estimate, &p.control, tg)?;
                match (field, opts.rule) {
                    (RecoveredField::Potential, _) => traj.u_rows(idx),
                    (RecoveredField::Damping, TimeQuadrature::StepAverage) => traj.v_rows(idx),
                    (RecoveredField::Damping, TimeQuadrature::Trapezoid) => centred_time_derivative(&traj.u_rows(idx), tg.dt()),
                }
            }
        };
        for (m, w2) in second.fields.iter().enumerate() {
            let row = j * n2 + m;
            for (i, v) in node_pairs(&g, w2, tg.dt(), opts.rule).into_iter().enumerate() {
                k[(row, mesh.cell_of(i))] += h * v;
            }
        }
    }
    Ok(k)
}

/// Rows `K[(j,m), c] = Σ_{i∈c} h P(g_j, w₂ₘ⋆)_i` of the measurement model around `estimate`,
/// where `g_j` is the first-probe response (or its velocity for damping). For a cell-constant
/// correction `δ` and `estimate = truth`, `K δ` reproduces the measured data.
pub fn probe_matrix(
    op: &FractionalOperator,
    reference: &Coefficients,
    estimate: &Coefficients,
    probes: &ProbeSet,
    mesh: &RecoveryMesh,
    tg: &TimeGrid,
    opts: &RecoveryOptions,
) -> Result<DMatrix<f64>> {
    let second = second_fields(op, reference, probes, tg, opts)?;
    model_matrix(op, estimate, probes, &second, mesh, tg, opts)
}

fn apply_correction(reference: &Coefficients, op: &FractionalOperator, field: RecoveredField, delta: &DVector<f64>) -> Coefficients {
    match field {
        RecoveredField::Potential => reference.perturbed(op.grid(), None, Some(delta)),
        RecoveredField::Damping => reference.perturbed(op.grid(), Some(delta), None),
    }
}

fn recover(
    op: &FractionalOperator,
    reference: &Coefficients,
    sim: &dyn Simulator,
    probes: &ProbeSet,
    mesh: &RecoveryMesh,
    tg: &TimeGrid,
    opts: &RecoveryOptions,
) -> Result<InversionResult> {
    let field = probes.field;
    let b = measure(op, reference, sim, probes, tg, opts)?;
    let second = second_fields(op, reference, probes, tg, opts)?;
    // The estimate is cell-constant, so `K(δ) δ` is exactly its predicted data: the true
    // misfit of each iterate is free, and the loop keeps the best one.
    let mut cells = vec![0.0; mesh.n_cells()];
    let mut best: Option<(f64, Vec<f64>, TikhonovSolution)> = None;
    let mut iterations = 0;
    let max_iter = match opts.model {
        ProbeModel::Responses => opts.born_iterations.max(1),
        ProbeModel::Targets => 1,
    };
    let mut k = model_matrix(op, reference, probes, &second, mesh, tg, opts)?;
    for _ in 0..max_iter {
        iterations += 1;
        let s = solve_lcurve(&k, &b, &opts.ladder)?;
        let change: f64 = s.x.iter().zip(&cells).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
        let size: f64 = s.x.iter().map(|a| a * a).sum::<f64>().sqrt();
        cells = s.x.clone();
        if opts.model == ProbeModel::Targets {
            best = Some((0.0, cells.clone(), s));
            break;
        }
        let estimate = apply_correction(reference, op, field, &mesh.prolong(&cells));
        k = model_matrix(op, &estimate, probes, &second, mesh, tg, opts)?;
        let misfit = (&k * DVector::from_column_slice(&cells) - &b).norm();
        let improved = best.as_ref().is_none_or(|(m, _, _)| misfit < *m);
        if improved {
            best = Some((misfit, cells.clone(), s));
        }
        if !improved || change <= opts.born_tol * size || size == 0.0 {
            break;
        }
    }
    let (_, cells, sol) = best.expect("at least one Born step");

    let mut warnings = Vec::new();
    if sol.numerical_rank < mesh.n_cells() {
        warnings.push(format!(
            "probe system has numerical rank {} for {} cells; regularization fills the gap",
            sol.numerical_rank,
            mesh.n_cells()
        ));
    }
    if opts.model == ProbeModel::Targets && probes.max_residual() > opts.residual_warning {
        warnings.push(format!(
            "largest Runge residual {:.3} exceeds {:.3}; probe substitution error dominates",
            probes.max_residual(),
            opts.residual_warning
        ));
    }
    let base = match field {
        RecoveredField::Potential => reference.q_omega(op.grid()),
        RecoveredField::Damping => reference.gamma_omega(op.grid()),
    };
    let recovered = base + mesh.prolong(&cells);
    let bn = b.norm();
    Ok(InversionResult {
        field,
        cells,
        recovered: recovered.as_slice().to_vec(),
        lambda: sol.lambda,
        l_curve: sol.curve,
        born_iterations: iterations,
        data_misfit: if bn > 0.0 { sol.residual_norm / bn } else { 0.0 },
        reference_hash: reference.hash(),
        probes: probes.records(),
        warnings,
        relative_error: None,
    })
}

/// Recover `q` on the mesh; the damping term is neglected (`∂_tΦ₁ ≈ 0` on the bulk).
pub fn recover_potential(
    op: &FractionalOperator,
    reference: &Coefficients,
    sim: &dyn Simulator,
    probes: &ProbeSet,
    mesh: &RecoveryMesh,
    tg: &TimeGrid,
    opts: &RecoveryOptions,
) -> Result<InversionResult> {
    if probes.field != RecoveredField::Potential {
        return Err(Error::Config("potential recovery needs potential probes".into()));
    }
    recover(op, reference, sim, probes, mesh, tg, opts)
}

/// Recover `γ` on the mesh assuming `reference` already carries the matched potential.
pub fn recover_damping(
    op: &FractionalOperator,
    reference: &Coefficients,
    sim: &dyn Simulator,
    probes: &ProbeSet,
    mesh: &RecoveryMesh,
    tg: &TimeGrid,
    opts: &RecoveryOptions,
) -> Result<InversionResult> {
    if probes.field != RecoveredField::Damping {
        return Err(Error::Config("damping recovery needs damping probes".into()));
    }
    recover(op, reference, sim, probes, mesh, tg, opts)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearRecovery {
    pub order: RecoveryOrder,
    pub potential: InversionResult,
    pub damping: InversionResult,
}

/// Both fields in the given order, the second step using the first one's output as reference.
#[allow(clippy::too_many_arguments)]
pub fn recover_linear(
    op: &FractionalOperator,
    reference: &Coefficients,
    sim: &dyn Simulator,
    potential_probes: &ProbeSet,
    damping_probes: &ProbeSet,
    mesh: &RecoveryMesh,
    tg: &TimeGrid,
    opts: &RecoveryOptions,
    order: RecoveryOrder,
) -> Result<LinearRecovery> {
    let grid = op.grid();
    let (potential, damping) = match order {
        RecoveryOrder::PotentialFirst => {
            let q = recover_potential(op, reference, sim, potential_probes, mesh, tg, opts)?;
            let matched = reference.perturbed(grid, None, Some(&mesh.prolong(&q.cells)));
            let g = recover_damping(op, &matched, sim, damping_probes, mesh, tg, opts)?;
            (q, g)
        }
        RecoveryOrder::DampingFirst => {
            let g = recover_damping(op, reference, sim, damping_probes, mesh, tg, opts)?;
            let matched = reference.perturbed(grid, Some(&mesh.prolong(&g.cells)), None);
            let q = recover_potential(op, &matched, sim, potential_probes, mesh, tg, opts)?;
            (q, g)
        }
    };
    Ok(LinearRecovery { order, potential, damping })
}

/// Exterior datum made of one bump.
pub fn single_probe(window: &str, centre: f64, radius: f64, profile: TimeProfile) -> ExteriorData {
    ExteriorData::single(ExteriorElement::new(window, SpatialBump::new(vec![centre], vec![radius]), profile))
}
