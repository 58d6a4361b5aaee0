use nalgebra::DVector;
use nlwave::coeffs::{Coefficients, Nonlinearity};
use nlwave::forward::*;
use nlwave::operator::{FractionalOperator, SpatialGrid};
use nlwave::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn op(n: usize, s: f64) -> FractionalOperator {
    FractionalOperator::build(SpatialGrid::default_1d(n).unwrap(), s).unwrap()
}

fn constant_coeffs(op: &FractionalOperator, g: f64, q: f64) -> Coefficients {
    let n = op.grid().n_nodes();
    Coefficients::bounded(op.grid(), op.s(), DVector::from_element(n, g), DVector::from_element(n, q)).unwrap()
}

/// Closed-form solution of `y'' + g y' + λ y = 0`, `y(0) = a`, `y'(0) = b`.
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

fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

fn spectral_error(op: &FractionalOperator, g: f64, n_steps: usize) -> f64 {
    let grid = op.grid();
    let sp = op.interior_spectrum();
    let tg = TimeGrid::new(2.0, n_steps).unwrap();
    let c = constant_coeffs(op, g, 0.0);
    // a few low modes with fixed amplitudes
    let mut u0 = DVector::zeros(grid.n_omega());
    let mut u1 = DVector::zeros(grid.n_omega());
    let amps = [(1.0, 0.3), (-0.5, 0.8), (0.25, -0.4), (0.1, 0.2)];
    for (k, (a, b)) in amps.iter().enumerate() {
        u0 += sp.vectors.column(k) * *a;
        u1 += sp.vectors.column(k) * *b;
    }
    let full = |x: &DVector<f64>| DVector::from_vec(grid.extend_omega(x.as_slice()));
    let traj = solve_homogeneous(op, &c, &zero_source(op, &tg), &full(&u0), &full(&u1), &tg).unwrap();
    let u = traj.u_rows(grid.omega_nodes());
    let mut err = 0.0f64;
    let mut size = 0.0f64;
    for n in 0..tg.n_times() {
        let t = tg.time(n);
        let mut exact = DVector::zeros(grid.n_omega());
        for (k, (a, b)) in amps.iter().enumerate() {
            exact += sp.vectors.column(k) * damped_mode(sp.values[k], g, *a, *b, t);
        }
        err = err.max((u.column(n) - &exact).norm());
        size = size.max(exact.norm());
    }
    err / size
}

#[test]
fn spectral_oracle_second_order() {
    let a = op(64, 0.5);
    for g in [0.0, 0.5] {
        let steps = [50, 100, 200];
        let errs: Vec<f64> = steps.iter().map(|&n| spectral_error(&a, g, n)).collect();
        let dts: Vec<f64> = steps.iter().map(|&n| 2.0 / n as f64).collect();
        let slope = log_slope(&dts, &errs);
        assert!((slope - 2.0).abs() <= 0.2, "g={g}: slope {slope}, errors {errs:?}");
    }
}

#[test]
fn single_eigenvector_oscillates_as_cosine() {
    let a = op(48, 0.6);
    let grid = a.grid();
    let sp = a.interior_spectrum();
    let k = 2;
    let v = sp.vectors.column(k).into_owned();
    let tg = TimeGrid::new(1.5, 300).unwrap();
    let c = Coefficients::zero(grid);
    let u0 = DVector::from_vec(grid.extend_omega(v.as_slice()));
    let traj = solve_homogeneous(&a, &c, &zero_source(&a, &tg), &u0, &DVector::zeros(grid.n_nodes()), &tg).unwrap();
    let w = sp.values[k].sqrt();
    for n in (0..tg.n_times()).step_by(30) {
        let want = &v * (w * tg.time(n)).cos();
        let got = traj.u_rows(grid.omega_nodes()).column(n).into_owned();
        assert!((got - want).norm() < 5e-3, "n={n}");
    }
}

#[test]
fn energy_conserved_without_damping_and_potential() {
    let a = op(64, 0.5);
    let grid = a.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tg = TimeGrid::new(2.0, 200).unwrap();
    let c = Coefficients::zero(grid);
    let u0 = random_interior(&a, &mut rng);
    let u1 = random_interior(&a, &mut rng);
    let f = zero_source(&a, &tg);
    let traj = solve_homogeneous(&a, &c, &f, &u0, &u1, &tg).unwrap();
    let e = energy_series(&a, &traj);
    for rule in [TimeQuadrature::Trapezoid, TimeQuadrature::StepAverage] {
        let res = energy_identity_residual(&a, &traj, &c, &f, rule).unwrap();
        let worst = res.iter().copied().fold(0.0, f64::max);
        assert!(worst <= 1e-10 * e[0], "{rule:?}: {worst}");
    }
}

#[test]
fn energy_identity_with_active_terms() {
    let a = op(64, 0.5);
    let grid = a.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let gamma = random_field(&a, &mut rng, 0.2, 1.0);
    let q = random_field(&a, &mut rng, 0.0, 2.0);
    let c = Coefficients::bounded(grid, 0.5, gamma, q).unwrap();
    let u0 = random_interior(&a, &mut rng);
    let u1 = random_interior(&a, &mut rng);
    let mut defects = Vec::new();
    let mut dts = Vec::new();
    for n in [50, 100, 200] {
        let tg = TimeGrid::new(2.0, n).unwrap();
        let mut frng = ChaCha8Rng::seed_from_u64(3);
        let f = random_smooth_source(grid, &tg, &mut frng);
        let traj = solve_homogeneous(&a, &c, &f, &u0, &u1, &tg).unwrap();
        let e0 = energy_series(&a, &traj)[0];
        let exact = energy_identity_residual(&a, &traj, &c, &f, TimeQuadrature::StepAverage).unwrap();
        assert!(exact.iter().all(|&r| r <= 1e-10 * e0), "step-average identity not exact");
        let trap = energy_identity_residual(&a, &traj, &c, &f, TimeQuadrature::Trapezoid).unwrap();
        defects.push(trap.iter().copied().fold(0.0, f64::max) / e0);
        dts.push(tg.dt());
    }
    let slope = log_slope(&dts, &defects);
    assert!(slope >= 1.8, "slope {slope}, {defects:?}");
}

#[test]
fn energy_nonincreasing_with_nonnegative_damping() {
    let a = op(48, 0.5);
    let grid = a.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let tg = TimeGrid::new(2.0, 100).unwrap();
    for case in 0..20 {
        let gamma = random_field(&a, &mut rng, 0.0, 2.0);
        let c = Coefficients::bounded(grid, 0.5, gamma, DVector::zeros(grid.n_nodes())).unwrap();
        let u0 = random_interior(&a, &mut rng);
        let u1 = random_interior(&a, &mut rng);
        let traj = solve_homogeneous(&a, &c, &zero_source(&a, &tg), &u0, &u1, &tg).unwrap();
        let e = energy_series(&a, &traj);
        for w in e.windows(2) {
            assert!(w[1] <= w[0] + 1e-13 * e[0], "case {case}: {} > {}", w[1], w[0]);
        }
    }
}

fn random_exterior(rng: &mut ChaCha8Rng, t_final: f64) -> ExteriorData {
    let c: f64 = rng.random_range(-1.6..-1.4);
    let start: f64 = rng.random_range(0.0..0.3 * t_final);
    let end: f64 = start + rng.random_range(0.3..0.7) * t_final;
    let amp: f64 = rng.random_range(-2.0..2.0);
    let e = ExteriorElement::new("W1", SpatialBump::new(vec![c], vec![0.18]), TimeProfile::bump(start, end));
    ExteriorData::new(vec![e], vec![amp]).unwrap()
}

#[test]
fn time_reversal_identity() {
    let a = op(64, 0.5);
    let grid = a.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let tg = TimeGrid::new(2.0, 160).unwrap();
    let t_final = tg.t_final();
    for case in 0..10 {
        let gamma = random_field(&a, &mut rng, -0.5, 1.0);
        let q = random_field(&a, &mut rng, -0.5, 1.5);
        let c = Coefficients::bounded(grid, 0.5, gamma, q).unwrap();
        let ext = random_exterior(&mut rng, t_final);
        let f = random_smooth_source(grid, &tg, &mut rng);
        let u0 = random_interior(&a, &mut rng);
        let u1 = random_interior(&a, &mut rng);
        let fwd = solve_inhomogeneous(&a, &c, &f, &ext, &u0, &u1, &tg).unwrap();
        let scale = fwd.u.amax().max(fwd.v.amax());
        let nt = tg.n_times();

        // backward with damping -γ from the terminal state recovers u itself
        let ut = fwd.u.column(nt - 1).into_owned();
        let vt = fwd.v.column(nt - 1).into_owned();
        let back = solve_backward(&a, &c.with_negated_damping(), &f, &ext, &ut, &vt, &tg).unwrap();
        let d = (&back.u - &fwd.u).amax().max((&back.v - &fwd.v).amax());
        assert!(d <= 1e-10 * scale, "case {case}: {d:e}");

        // u⋆ solves the reversed problem with terminal data (u0, -u1)
        let star = solve_backward(&a, &c, &reverse_columns(&f), &ext.reversed(t_final), &u0, &(-&u1), &tg).unwrap();
        let d = (&star.u - reverse_columns(&fwd.u)).amax().max((&star.v + reverse_columns(&fwd.v)).amax());
        assert!(d <= 1e-10 * scale, "case {case} (reversed): {d:e}");
    }
}

#[test]
fn backward_with_zero_damping_is_forward_on_reversed_data() {
    let a = op(32, 0.5);
    let grid = a.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tg = TimeGrid::new(1.0, 40).unwrap();
    let q = random_field(&a, &mut rng, 0.0, 1.0);
    let c = Coefficients::bounded(grid, 0.5, DVector::zeros(grid.n_nodes()), q).unwrap();
    let f = random_smooth_source(grid, &tg, &mut rng);
    let ut = random_interior(&a, &mut rng);
    let vt = random_interior(&a, &mut rng);
    let back = solve_backward(&a, &c, &f, &ExteriorData::zero(), &ut, &vt, &tg).unwrap();
    let fwd = solve_homogeneous(&a, &c, &reverse_columns(&f), &ut, &(-&vt), &tg).unwrap();
    assert!((back.u - reverse_columns(&fwd.u)).amax() <= 1e-12 * fwd.u.amax());
}

#[test]
fn backward_zero_problem_is_zero() {
    let a = op(32, 0.5);
    let tg = TimeGrid::new(1.0, 10).unwrap();
    let c = constant_coeffs(&a, 0.7, 0.3);
    let z = DVector::zeros(32);
    let t = solve_backward(&a, &c, &zero_source(&a, &tg), &ExteriorData::zero(), &z, &z, &tg).unwrap();
    assert_eq!(t.u.amax(), 0.0);
}

#[test]
fn transposition_identity_and_gamma_term_control() {
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
    assert_eq!(rep.defects.len(), 8);
    assert!(rep.max_relative <= 1e-8, "{rep:?}");

    let ablated = TranspositionOptions {
        include_gamma_term: false,
        ..opts
    };
    let bad = verify_transposition(&a, &c, &u0, &u1, &f, &tg, &ablated).unwrap();
    assert!(bad.max_relative >= 1e-2, "{bad:?}");

    // the trapezoid rule leaves only a small quadrature defect
    let trap = TranspositionOptions {
        rule: TimeQuadrature::Trapezoid,
        ..opts
    };
    let t = verify_transposition(&a, &c, &u0, &u1, &f, &tg, &trap).unwrap();
    assert!(t.max_relative < 1e-2, "{t:?}");
}

#[test]
fn transposition_with_zero_data_is_zero() {
    let a = op(32, 0.5);
    let tg = TimeGrid::new(1.0, 20).unwrap();
    let c = constant_coeffs(&a, 0.4, 0.0);
    let n = a.grid().n_omega();
    let rep = verify_transposition(&a, &c, &DVector::zeros(n), &DVector::zeros(n), &zero_source(&a, &tg), &tg, &TranspositionOptions::default()).unwrap();
    assert_eq!(rep.max_defect, 0.0);
}

#[test]
fn inhomogeneous_matches_exterior_data_and_converges() {
    let a = op(64, 0.5);
    let grid = a.grid();
    let c = constant_coeffs(&a, 0.3, 0.5);
    let ext = ExteriorData::single(ExteriorElement::new("W1", SpatialBump::new(vec![-1.5], vec![0.25]), TimeProfile::bump(0.0, 1.0)));
    let mut sols = Vec::new();
    for n in [50, 100, 200, 400] {
        let tg = TimeGrid::new(2.0, n).unwrap();
        let traj = solve_exterior(&a, &c, &ext, &tg).unwrap();
        let phi = ext.sample(grid, &tg).unwrap();
        let mask = grid.omega_mask();
        for k in (0..grid.n_nodes()).filter(|&k| !mask[k]) {
            for j in 0..tg.n_times() {
                assert_eq!(traj.u[(k, j)], phi.value[(k, j)]);
            }
        }
        sols.push(traj);
    }
    // discrepancy against the next finer run at shared instants
    let disc: Vec<f64> = sols
        .windows(2)
        .map(|w| {
            let coarse = &w[0];
            let fine = &w[1];
            let mut d = 0.0f64;
            for j in 0..coarse.n_times() {
                d = d.max((coarse.u.column(j) - fine.u.column(2 * j)).amax());
            }
            d / fine.u.amax()
        })
        .collect();
    let slope = log_slope(&[4.0, 2.0, 1.0], &disc);
    assert!((slope - 2.0).abs() <= 0.2, "{disc:?} slope {slope}");
}

#[test]
fn zero_exterior_data_reduce_to_homogeneous() {
    let a = op(32, 0.5);
    let grid = a.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tg = TimeGrid::new(1.0, 30).unwrap();
    let c = constant_coeffs(&a, 0.2, 0.1);
    let u0 = random_interior(&a, &mut rng);
    let u1 = random_interior(&a, &mut rng);
    let f = random_smooth_source(grid, &tg, &mut rng);
    let ext = random_exterior(&mut rng, 1.0).scaled(0.0);
    let x = solve_inhomogeneous(&a, &c, &f, &ext, &u0, &u1, &tg).unwrap();
    let y = solve_homogeneous(&a, &c, &f, &u0, &u1, &tg).unwrap();
    assert_eq!(x.u, y.u);
}

#[test]
fn incompatible_initial_data_are_rejected() {
    let a = op(32, 0.5);
    let tg = TimeGrid::new(1.0, 30).unwrap();
    let c = constant_coeffs(&a, 0.2, 0.1);
    let ext = ExteriorData::single(ExteriorElement::new("W1", SpatialBump::new(vec![-1.5], vec![0.25]), TimeProfile::SineSquared { omega: 1.0 }.reversed(0.5)));
    let z = DVector::zeros(32);
    let res = solve_inhomogeneous(&a, &c, &zero_source(&a, &tg), &ext, &z, &z, &tg);
    assert!(matches!(res, Err(Error::Config(_))));
}

#[test]
fn gronwall_bound_holds_on_random_suite() {
    let a = op(48, 0.5);
    let grid = a.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let tg = TimeGrid::new(2.0, 100).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..12 {
        let gamma = random_field(&a, &mut rng, -0.5, 1.0);
        let q = random_field(&a, &mut rng, -1.0, 2.0);
        let c = Coefficients::bounded(grid, 0.5, gamma, q).unwrap();
        let u0 = random_interior(&a, &mut rng);
        let u1 = random_interior(&a, &mut rng);
        let f = random_smooth_source(grid, &tg, &mut rng);
        let traj = solve_homogeneous(&a, &c, &f, &u0, &u1, &tg).unwrap();
        let ratio = gronwall_ratio(&a, &traj, &f);
        let bound = gronwall_bound(&a, &c, tg.t_final());
        assert!(ratio.is_finite() && ratio <= bound, "{ratio} > {bound}");
        worst = worst.max(ratio / bound);
    }
    assert!(worst > 0.0);
}

fn bump_nonlinearity(op: &FractionalOperator, amp: f64, r: f64) -> Nonlinearity {
    let qf = op.grid().sample_omega(|x| amp * (-(x[0] * x[0]) / 0.2).exp());
    Nonlinearity::new(DVector::from_vec(qf), r, 1, op.s()).unwrap()
}

fn w1_bump(amp: f64) -> ExteriorData {
    let e = ExteriorElement::new("W1", SpatialBump::new(vec![-1.5], vec![0.28]), TimeProfile::bump(0.0, 1.0));
    ExteriorData::new(vec![e], vec![amp]).unwrap()
}

#[test]
fn semilinear_without_nonlinearity_is_linear() {
    let a = op(48, 0.5);
    let tg = TimeGrid::new(2.0, 80).unwrap();
    let c = constant_coeffs(&a, 0.3, 0.0);
    let f = Nonlinearity::zero(a.grid().n_omega(), 1.0);
    let ext = w1_bump(1.0);
    let lin = solve_exterior(&a, &c, &ext, &tg).unwrap();
    for mode in [SemilinearMode::Imex, SemilinearMode::Picard(PicardOptions::default())] {
        let sol = solve_semilinear(&a, &c, &f, &ext, &tg, mode).unwrap();
        assert!((sol.trajectory.u - &lin.u).amax() <= 1e-14 * lin.u.amax());
    }
}

#[test]
fn picard_contracts_and_agrees_with_imex() {
    let a = op(48, 0.5);
    let c = constant_coeffs(&a, 0.3, 0.0);
    let f = bump_nonlinearity(&a, 2.0, 1.0);
    let ext = w1_bump(1.0);
    let mut gaps = Vec::new();
    for n in [100, 200, 400] {
        let tg = TimeGrid::new(2.0, n).unwrap();
        let p = solve_semilinear(&a, &c, &f, &ext, &tg, SemilinearMode::Picard(PicardOptions::default())).unwrap();
        let log = p.log.as_ref().unwrap();
        assert!(log.ratios.iter().all(|&r| r < 1.0), "{log:?}");
        let i = solve_semilinear(&a, &c, &f, &ext, &tg, SemilinearMode::Imex).unwrap();
        gaps.push((p.trajectory.u - i.trajectory.u).amax());
    }
    // first-order agreement
    assert!(gaps[1] < 0.6 * gaps[0] && gaps[2] < 0.6 * gaps[1], "{gaps:?}");
}

#[test]
fn picard_divergence_is_reported() {
    let a = op(32, 0.5);
    let tg = TimeGrid::new(2.0, 40).unwrap();
    let c = constant_coeffs(&a, 0.0, 0.0);
    let f = bump_nonlinearity(&a, 50.0, 2.0);
    let ext = w1_bump(200.0);
    let opts = PicardOptions {
        max_iter: 30,
        ..PicardOptions::default()
    };
    match solve_semilinear(&a, &c, &f, &ext, &tg, SemilinearMode::Picard(opts)) {
        Err(Error::Divergence { gaps, .. }) => assert!(!gaps.is_empty()),
        other => panic!("expected divergence, got {:?}", other.map(|s| s.log)),
    }
}

#[test]
fn trajectory_export_roundtrip() {
    let a = op(16, 0.5);
    let tg = TimeGrid::new(1.0, 8).unwrap();
    let c = constant_coeffs(&a, 0.1, 0.0);
    let traj = solve_exterior(&a, &c, &w1_bump(1.0), &tg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("traj.bin");
    traj.write_binary(&p).unwrap();
    let back = Trajectory::read_binary(&p).unwrap();
    assert_eq!(back.u, traj.u);
    assert_eq!(back.v, traj.v);
}
