//! Acceptance suite: every criterion at its stated tolerance, one line each.
//! Runs without the libtest harness so the summary is always printed.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use nlwave::coeffs::Coefficients;
use nlwave::dnmap::{check_integral_identity, check_self_adjointness, dn_matrix};
use nlwave::experiments::{run_experiment, ExperimentConfig, ExperimentKind, Manifest};
use nlwave::forward::*;
use nlwave::operator::{FractionalOperator, SpatialGrid};
use nlwave::runge::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::gamma;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Option<Duration>, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn op(n: usize, s: f64) -> FractionalOperator {
    FractionalOperator::build(SpatialGrid::default_1d(n).unwrap(), s).unwrap()
}

fn constant_coeffs(op: &FractionalOperator, g: f64, q: f64) -> Coefficients {
    let n = op.grid().n_nodes();
    Coefficients::bounded(op.grid(), op.s(), DVector::from_element(n, g), DVector::from_element(n, q)).unwrap()
}

fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn random_interior(op: &FractionalOperator, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let g = op.grid();
    let c: f64 = rng.random_range(-0.6..0.6);
    let w: f64 = rng.random_range(0.15..0.4);
    let a: f64 = rng.random_range(-1.0..1.0);
    DVector::from_vec(g.extend_omega(&g.sample_omega(|x| a * (-(x[0] - c).powi(2) / (2.0 * w * w)).exp() * (1.0 - x[0] * x[0]))))
}

fn random_field(op: &FractionalOperator, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> DVector<f64> {
    let c: f64 = rng.random_range(-1.0..1.0);
    let base: f64 = rng.random_range(lo..hi);
    let amp: f64 = rng.random_range(0.0..(hi - base));
    DVector::from_vec(op.grid().sample(|x| base + amp * (-(x[0] - c).powi(2) / 0.1).exp()))
}

// 1: A (1-x²)_+^s is constant on (-1,1); deviation on |x| < 1/2 under two refinements.
fn operator_consistency() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for s in [0.25, 0.5, 0.75] {
        let c = 4f64.powf(s) * gamma(1.0 + s) * gamma(0.5 + s) / gamma(0.5);
        let devs: Vec<f64> = [29, 57, 113]
            .iter()
            .map(|&n| {
                let a = op(n, s);
                let g = a.grid();
                let au = a.apply(&DVector::from_vec(g.sample(|x| (1.0 - x[0] * x[0]).max(0.0).powf(s)))).unwrap();
                let nodes: Vec<usize> = g.omega_nodes().iter().copied().filter(|&k| g.coord(k)[0].abs() < 0.5).collect();
                let mean = nodes.iter().map(|&k| au[k]).sum::<f64>() / nodes.len() as f64;
                (nodes.iter().map(|&k| (au[k] - mean).powi(2)).sum::<f64>() / nodes.len() as f64).sqrt() / c
            })
            .collect();
        let slope = (devs[0] / devs[2]).ln() / 4f64.ln();
        ok &= devs[0] > devs[1] && devs[1] > devs[2] && slope >= 0.8;
        lines.push(format!("s={s} slope {slope:.2}"));
    }
    ensure(ok, lines.join(", "))
}

fn damped_mode(lambda: f64, g: f64, a: f64, b: f64, t: f64) -> f64 {
    let disc = g * g / 4.0 - lambda;
    let decay = (-0.5 * g * t).exp();
    if disc < -1e-14 {
        let w = (-disc).sqrt();
        decay * (a * (w * t).cos() + (b + 0.5 * g * a) / w * (w * t).sin())
    } else if disc > 1e-14 {
        let w = disc.sqrt();
        decay * (a * (w * t).cosh() + (b + 0.5 * g * a) / w * (w * t).sinh())
    } else {
        decay * (a + (b + 0.5 * g * a) * t)
    }
}

// 2: constant γ, q = 0 against the eigenmode closed form, three dt levels.
fn spectral_oracle() -> Outcome {
    let a = op(64, 0.5);
    let grid = a.grid();
    let sp = a.interior_spectrum();
    let amps = [(1.0, 0.3), (-0.5, 0.8), (0.25, -0.4), (0.1, 0.2)];
    let mut u0 = DVector::zeros(grid.n_omega());
    let mut u1 = DVector::zeros(grid.n_omega());
    for (k, (x, y)) in amps.iter().enumerate() {
        u0 += sp.vectors.column(k) * *x;
        u1 += sp.vectors.column(k) * *y;
    }
    let full = |x: &DVector<f64>| DVector::from_vec(grid.extend_omega(x.as_slice()));
    let mut lines = Vec::new();
    let mut ok = true;
    for g in [0.0, 0.5] {
        let c = constant_coeffs(&a, g, 0.0);
        let steps = [50, 100, 200];
        let errs: Vec<f64> = steps
            .iter()
            .map(|&n| {
                let tg = TimeGrid::new(2.0, n).unwrap();
                let traj = solve_homogeneous(&a, &c, &zero_source(&a, &tg), &full(&u0), &full(&u1), &tg).unwrap();
                let u = traj.u_rows(grid.omega_nodes());
                let (mut err, mut size) = (0.0f64, 0.0f64);
                for m in 0..tg.n_times() {
                    let mut exact = DVector::zeros(grid.n_omega());
                    for (k, (x, y)) in amps.iter().enumerate() {
                        exact += sp.vectors.column(k) * damped_mode(sp.values[k], g, *x, *y, tg.time(m));
                    }
                    err = err.max((u.column(m) - &exact).norm());
                    size = size.max(exact.norm());
                }
                err / size
            })
            .collect();
        let dts: Vec<f64> = steps.iter().map(|&n| 2.0 / n as f64).collect();
        let slope = log_slope(&dts, &errs);
        ok &= (slope - 2.0).abs() <= 0.2;
        lines.push(format!("γ={g} slope {slope:.3}"));
    }
    ensure(ok, lines.join(", "))
}

// 3: exact invariant without damping, potential and source; O(dt²) trapezoid defect otherwise.
fn energy_identity() -> Outcome {
    let a = op(64, 0.5);
    let grid = a.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tg = TimeGrid::new(2.0, 200).unwrap();
    let c = Coefficients::zero(grid);
    let (u0, u1) = (random_interior(&a, &mut rng), random_interior(&a, &mut rng));
    let f = zero_source(&a, &tg);
    let traj = solve_homogeneous(&a, &c, &f, &u0, &u1, &tg).unwrap();
    let e0 = energy_series(&a, &traj)[0];
    let free = energy_identity_residual(&a, &traj, &c, &f, TimeQuadrature::Trapezoid).unwrap().into_iter().fold(0.0, f64::max) / e0;

    let c = Coefficients::bounded(grid, 0.5, random_field(&a, &mut rng, 0.2, 1.0), random_field(&a, &mut rng, 0.0, 2.0)).unwrap();
    let (u0, u1) = (random_interior(&a, &mut rng), random_interior(&a, &mut rng));
    let mut defects = Vec::new();
    let mut dts = Vec::new();
    for n in [50, 100, 200] {
        let tg = TimeGrid::new(2.0, n).unwrap();
        let f = random_smooth_source(grid, &tg, &mut ChaCha8Rng::seed_from_u64(3));
        let traj = solve_homogeneous(&a, &c, &f, &u0, &u1, &tg).unwrap();
        let e0 = energy_series(&a, &traj)[0];
        let trap = energy_identity_residual(&a, &traj, &c, &f, TimeQuadrature::Trapezoid).unwrap();
        defects.push(trap.into_iter().fold(0.0, f64::max) / e0);
        dts.push(tg.dt());
    }
    let slope = log_slope(&dts, &defects);
    ensure(free <= 1e-10 && slope >= 1.8, format!("free defect {free:.1e}, active-term defect slope {slope:.2}"))
}

// 4: q = F = 0, γ ≥ 0: nonincreasing energy on 20 seeded cases.
fn energy_dissipation() -> Outcome {
    let a = op(48, 0.5);
    let grid = a.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let tg = TimeGrid::new(2.0, 100).unwrap();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..20 {
        let c = Coefficients::bounded(grid, 0.5, random_field(&a, &mut rng, 0.0, 2.0), DVector::zeros(grid.n_nodes())).unwrap();
        let (u0, u1) = (random_interior(&a, &mut rng), random_interior(&a, &mut rng));
        let traj = solve_homogeneous(&a, &c, &zero_source(&a, &tg), &u0, &u1, &tg).unwrap();
        let e = energy_series(&a, &traj);
        for w in e.windows(2) {
            worst = worst.max((w[1] - w[0]) / e[0]);
        }
    }
    ensure(worst <= 1e-13, format!("largest relative step increase {worst:.1e} over 20 cases"))
}

fn random_exterior(rng: &mut ChaCha8Rng, t_final: f64) -> ExteriorData {
    let c: f64 = rng.random_range(-1.6..-1.4);
    let start: f64 = rng.random_range(0.0..0.3 * t_final);
    let end: f64 = start + rng.random_range(0.3..0.7) * t_final;
    let amp: f64 = rng.random_range(-2.0..2.0);
    ExteriorData::new(vec![ExteriorElement::new("W1", SpatialBump::new(vec![c], vec![0.18]), TimeProfile::bump(start, end))], vec![amp]).unwrap()
}

// 5: node-wise reversal on 10 random linear problems.
fn time_reversal() -> Outcome {
    let a = op(64, 0.5);
    let grid = a.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let tg = TimeGrid::new(2.0, 160).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let c = Coefficients::bounded(grid, 0.5, random_field(&a, &mut rng, -0.5, 1.0), random_field(&a, &mut rng, -0.5, 1.5)).unwrap();
        let ext = random_exterior(&mut rng, tg.t_final());
        let f = random_smooth_source(grid, &tg, &mut rng);
        let (u0, u1) = (random_interior(&a, &mut rng), random_interior(&a, &mut rng));
        worst = worst.max(verify_time_reversal(&a, &c, &f, &ext, &u0, &u1, &tg).unwrap().relative());
    }
    ensure(worst <= 1e-10, format!("max relative defect {worst:.1e}"))
}

// 6: 8 random probes with nonzero data and the γ boundary term; ablation without it.
fn transposition() -> Outcome {
    let a = op(64, 0.5);
    let grid = a.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let tg = TimeGrid::new(2.0, 120).unwrap();
    let q = random_field(&a, &mut rng, 0.0, 1.0);
    let c = Coefficients::bounded(grid, 0.5, DVector::from_element(grid.n_nodes(), 1.0), q).unwrap();
    let u0 = DVector::from_vec(grid.restrict_omega(random_interior(&a, &mut rng).as_slice()));
    let u1 = DVector::from_vec(grid.restrict_omega(random_interior(&a, &mut rng).as_slice()));
    let f = random_smooth_source(grid, &tg, &mut rng);
    let opts = TranspositionOptions::default();
    let rep = verify_transposition(&a, &c, &u0, &u1, &f, &tg, &opts).unwrap();
    let bad = verify_transposition(&a, &c, &u0, &u1, &f, &tg, &TranspositionOptions { include_gamma_term: false, ..opts }).unwrap();
    ensure(
        rep.defects.len() == 8 && rep.max_relative <= 1e-8 && bad.max_relative >= 0.1,
        format!("{} probes, defect {:.1e}, without γ term {:.2}", rep.defects.len(), rep.max_relative, bad.max_relative),
    )
}

fn dn_element(window: &str, c: f64, start: f64, radius: f64) -> ExteriorData {
    ExteriorData::single(ExteriorElement::new(window, SpatialBump::new(vec![c], vec![radius]), TimeProfile::bump(start, start + 1.0)))
}

fn dn_basis(window: &str, sign: f64) -> Vec<ExteriorData> {
    [(1.65, 0.0), (1.5, 0.3), (1.35, 0.6)].iter().map(|&(c, t0)| dn_element(window, sign * c, t0, 0.14)).collect()
}

fn dn_coeffs(op: &FractionalOperator, g: f64, q_amp: f64) -> Coefficients {
    let grid = op.grid();
    let q = DVector::from_vec(grid.sample(|x| q_amp * (-(x[0] - 0.2).powi(2) / 0.1).exp()));
    Coefficients::bounded(grid, op.s(), DVector::from_element(grid.n_nodes(), g), q).unwrap()
}

// 7: 3×3 bases. The discrete pairing is symmetric to roundoff under either rule, so the
// O(dt²) decay is measured across resolutions: |M₁₂(dt) - M₂₁(dt/2)ᵀ|.
fn dn_self_adjointness() -> Outcome {
    let a = op(64, 0.5);
    let c = dn_coeffs(&a, 0.5, 2.0);
    let (b1, b2) = (dn_basis("W1", -1.0), dn_basis("W2", 1.0));
    let mut worst = 0.0f64;
    for rule in [TimeQuadrature::StepAverage, TimeQuadrature::Trapezoid] {
        for n in [50, 100, 200] {
            let rep = check_self_adjointness(&a, &c, &b1, &b2, &TimeGrid::new(2.0, n).unwrap(), rule, true).unwrap();
            worst = worst.max(rep.defect / rep.scale);
        }
    }
    let m = |from: &[ExteriorData], to: &[ExteriorData], n: usize| dn_matrix(&a, &c, from, to, &TimeGrid::new(2.0, n).unwrap(), TimeQuadrature::Trapezoid).unwrap().entries;
    let cross: Vec<f64> = [25, 50, 100, 200].iter().map(|&n| (m(&b1, &b2, n) - m(&b2, &b1, 2 * n).transpose()).amax()).collect();
    let rates: Vec<f64> = cross.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    ensure(
        worst <= 1e-9 && rates.iter().all(|&r| r > 1.7),
        format!("same-grid defect {worst:.1e}, cross-resolution rates {}", rates.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(" ")),
    )
}

// 8: |LHS - RHS| ≤ C dt² |RHS| with C stable across dt. A defect already at the roundoff
// floor under the trapezoid rule satisfies the bound for every C and carries no rate.
fn integral_identity() -> Outcome {
    let a = op(64, 0.5);
    let cases = [("δq", dn_coeffs(&a, 0.3, 2.0), dn_coeffs(&a, 0.3, 0.0)), ("δγ", dn_coeffs(&a, 0.8, 1.0), dn_coeffs(&a, 0.3, 1.0))];
    let (f1, f2) = (dn_element("W1", -1.5, 0.0, 0.14), dn_element("W2", 1.5, 0.2, 0.14));
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, c1, c2) in &cases {
        let run = |n: usize, rule| check_integral_identity(&a, c1, c2, &f1, &f2, &TimeGrid::new(2.0, n).unwrap(), rule).unwrap();
        let exact = run(100, TimeQuadrature::StepAverage);
        ok &= exact.defect <= 1e-10 * exact.rhs.abs();
        let trap: Vec<(f64, f64)> = [50, 100, 200]
            .iter()
            .map(|&n| {
                let r = run(n, TimeQuadrature::Trapezoid);
                let dt = 2.0 / n as f64;
                (r.defect / r.rhs.abs(), r.defect / (dt * dt * r.rhs.abs()))
            })
            .collect();
        if trap.iter().all(|&(rel, _)| rel <= 1e-12) {
            lines.push(format!("{name}: exact {:.1e}, trapezoid at roundoff", exact.defect / exact.rhs.abs()));
            continue;
        }
        let consts: Vec<f64> = trap.iter().map(|t| t.1).collect();
        let spread = consts.iter().copied().fold(0.0, f64::max) / consts.iter().copied().fold(f64::INFINITY, f64::min);
        ok &= spread < 1.5;
        lines.push(format!("{name}: exact {:.1e}, C = {:.3} (spread {spread:.3})", exact.defect / exact.rhs.abs(), consts[2]));
    }
    ensure(ok, lines.join(", "))
}

struct RungeSetup {
    op: FractionalOperator,
    coeffs: Coefficients,
    tg: TimeGrid,
    basis: RungeBasis,
}

const T_RUNGE: f64 = 4.0;

fn runge_setup() -> RungeSetup {
    let op = op(64, 0.5);
    let g = op.grid();
    let q = DVector::from_vec(g.sample(|x| 1.0 + 0.5 * x[0]));
    let coeffs = Coefficients::bounded(g, 0.5, DVector::from_element(g.n_nodes(), 0.3), q).unwrap();
    let tg = TimeGrid::new(T_RUNGE, 100).unwrap();
    let basis = RungeBasis::build(&op, &coeffs, nested_basis("W1", &[-1.7, -1.6, -1.5, -1.4], 0.08, 0.6, T_RUNGE, 32), &tg).unwrap();
    RungeSetup { op, coeffs, tg, basis }
}

fn quasi_static(s: &RungeSetup, sigma: TimeProfile) -> InteriorTarget {
    let beta = ExteriorElement::new("W1", SpatialBump::new(vec![-1.5], vec![0.29]), TimeProfile::Constant { value: 1.0 });
    InteriorTarget::quasi_static(&s.op, &s.coeffs, &beta, &sigma, &s.tg).unwrap()
}

fn plateau() -> TimeProfile {
    TimeProfile::Plateau { start: 0.1 * T_RUNGE, end: 0.95 * T_RUNGE, ramp: 0.3 * T_RUNGE }
}

// 9: strictly decreasing residuals over nested bases for two targets; one ends ≤ 0.1.
fn runge_decay(s: &RungeSetup) -> Outcome {
    let alpha = default_alpha(s.basis.gram());
    let chi = s.op.grid().sample_omega(|x| SpatialBump::new(vec![-0.5], vec![0.5]).eval(x));
    let targets = [("quasi-static", quasi_static(s, plateau())), ("bump", InteriorTarget::separable(&chi, &TimeProfile::bump(0.5 * T_RUNGE, T_RUNGE), &s.tg))];
    let mut ok = true;
    let mut terminal = f64::INFINITY;
    let mut lines = Vec::new();
    for (name, t) in &targets {
        let r: Vec<f64> = [4, 8, 16, 32].iter().map(|&k| fit_with_basis(&s.op, &s.basis.prefix(k), t, Some(alpha)).unwrap().relative_residual()).collect();
        ok &= r.windows(2).all(|w| w[1] < w[0]);
        terminal = terminal.min(r[3]);
        lines.push(format!("{name} {:.3} -> {:.3}", r[0], r[3]));
    }
    ensure(ok && terminal <= 0.1, lines.join(", "))
}

// 10: the time-derivative pairing defect follows the residual; violated end conditions do not.
fn time_derivative_limit(s: &RungeSetup) -> Outcome {
    let alpha = default_alpha(s.basis.gram());
    let cutoff = |profile: TimeProfile| {
        let chi = s.op.grid().sample_omega(|x| SpatialBump::new(vec![-0.2], vec![0.7]).eval(x));
        InteriorTarget::separable(&chi, &profile, &s.tg)
    };
    let target = quasi_static(s, plateau());
    let psi = cutoff(TimeProfile::bump(0.0, T_RUNGE));
    let (mut rho, mut defect) = (Vec::new(), Vec::new());
    for k in [4, 8, 12, 16, 24, 32] {
        let b = s.basis.prefix(k);
        let fit = fit_with_basis(&s.op, &b, &target, Some(alpha)).unwrap();
        rho.push(fit.residual);
        defect.push(verify_time_derivative_limit(&b, &fit, &target, &psi).unwrap());
    }
    let r = pearson(&rho, &defect);

    let bad_target = quasi_static(s, TimeProfile::Constant { value: 1.0 });
    let bad_psi = cutoff(TimeProfile::Constant { value: 1.0 });
    let (mut bad_rho, mut bad) = (Vec::new(), Vec::new());
    for k in [4, 8, 16, 32] {
        let b = s.basis.prefix(k);
        let fit = fit_with_basis(&s.op, &b, &bad_target, Some(alpha)).unwrap();
        bad_rho.push(fit.residual);
        bad.push(time_derivative_defect(&b, &fit, &bad_target, &bad_psi));
    }
    ensure(
        r >= 0.9 && defect[5] < defect[0] && bad_rho[3] < 0.5 * bad_rho[0] && bad[3] > 0.5 * bad[0],
        format!("Pearson {r:.3} over 6 fits; control keeps {:.0}% of its defect", 100.0 * bad[3] / bad[0]),
    )
}

fn run_kind(kind: ExperimentKind, set: &[(&str, &str, &str)]) -> Manifest {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::defaults(kind);
    for (s, k, v) in set {
        cfg.set(s, k, v).unwrap();
    }
    run_experiment(&cfg, dir.path(), false).unwrap().manifest
}

fn check_value(m: &Manifest, name: &str) -> f64 {
    m.check(name).and_then(|c| c.value).unwrap_or(f64::NAN)
}

// 11: synthetic-twin δq bump and δγ step, zero controls, ordering ablation.
fn linear_inversion() -> Outcome {
    let m = run_kind(ExperimentKind::InvertLinear, &[]);
    let failed: Vec<&str> = m.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    ensure(
        m.passed()
            && check_value(&m, "potential_error") <= 0.10
            && check_value(&m, "damping_error") <= 0.10
            && check_value(&m, "potential_zero_difference") <= 1e-12
            && check_value(&m, "damping_zero_difference") <= 1e-12,
        format!(
            "δq error {:.3}, δγ error {:.3}, zero controls {:.0e}/{:.0e}, order bias ×{:.1}{}",
            check_value(&m, "potential_error"),
            check_value(&m, "damping_error"),
            check_value(&m, "potential_zero_difference"),
            check_value(&m, "damping_zero_difference"),
            check_value(&m, "damping_first_bias_ratio"),
            if failed.is_empty() { String::new() } else { format!("; failed {failed:?}") }
        ),
    )
}

// 12: log-log slope ≥ r + 1 - 0.1 and contracting Picard iterations for r = 1, 2.
fn semilinear_scaling() -> Outcome {
    let mut ok = true;
    let mut lines = Vec::new();
    for r in ["1", "2"] {
        let m = run_kind(ExperimentKind::Scan, &[("nonlinear", "r", r)]);
        let slope = check_value(&m, "scan_slope");
        ok &= m.passed() && slope >= r.parse::<f64>().unwrap() + 0.9 && check_value(&m, "picard_gap_ratio") < 1.0;
        lines.push(format!("r={r}: slope {slope:.3}, gap ratio {:.1e}", check_value(&m, "picard_gap_ratio")));
    }
    ensure(ok, lines.join(", "))
}

// 13: exact exponent and q_f within 10% on recoverable nodes.
fn nonlinearity_recovery() -> Outcome {
    let m = run_kind(ExperimentKind::InvertSemilinear, &[]);
    let err = check_value(&m, "q_f_error");
    ensure(
        m.passed() && m.check("r_hat").is_some_and(|c| c.passed) && err <= 0.10,
        format!("r̂ = {}, q_f error {err:.1e}", check_value(&m, "r_hat")),
    )
}

fn csv_tables(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

// 14: every kind twice with the same seed, tables compared byte for byte.
fn determinism() -> Outcome {
    let mut files = 0;
    for kind in ExperimentKind::ALL {
        let cfg = ExperimentConfig::defaults(kind).with_seed(2718);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_experiment(&cfg, a.path(), false).unwrap();
        run_experiment(&cfg, b.path(), false).unwrap();
        let (ta, tb) = (csv_tables(a.path()), csv_tables(b.path()));
        if ta.is_empty() || ta != tb {
            return Err(format!("{kind}: tables differ"));
        }
        files += ta.len();
    }
    Ok(format!("{files} tables identical across 7 kinds"))
}

fn main() -> ExitCode {
    let runge = std::sync::OnceLock::new();
    let runge = || runge.get_or_init(runge_setup);
    let criteria: Vec<Criterion> = vec![
        ("operator consistency", Some(Duration::from_secs(10)), Box::new(operator_consistency)),
        ("spectral oracle", Some(Duration::from_secs(30)), Box::new(spectral_oracle)),
        ("energy identity", None, Box::new(energy_identity)),
        ("energy dissipation", None, Box::new(energy_dissipation)),
        ("time reversal", None, Box::new(time_reversal)),
        ("transposition identity", None, Box::new(transposition)),
        ("DN self-adjointness", None, Box::new(dn_self_adjointness)),
        ("integral identity", None, Box::new(integral_identity)),
        ("Runge decay", None, Box::new(|| runge_decay(runge()))),
        ("time-derivative limit", None, Box::new(|| time_derivative_limit(runge()))),
        ("linear inversion", Some(Duration::from_secs(300)), Box::new(linear_inversion)),
        ("semilinear scaling", None, Box::new(semilinear_scaling)),
        ("nonlinearity recovery", Some(Duration::from_secs(300)), Box::new(nonlinearity_recovery)),
        ("determinism", None, Box::new(determinism)),
    ];
    let mut failures = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = start.elapsed();
        let outcome = match (outcome, budget) {
            (Ok(d), Some(b)) if took > *b => Err(format!("{d}; took {took:.1?}, budget {b:?}")),
            (o, _) => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("AC{:<2} {tag} {name:<24} {detail} [{:.2}s]", i + 1, took.as_secs_f64());
    }
    println!("{} of {} acceptance criteria pass", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
