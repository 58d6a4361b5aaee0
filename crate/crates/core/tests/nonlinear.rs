use std::sync::OnceLock;

use nalgebra::DVector;
use nlwave::coeffs::{Coefficients, FieldPreset, Nonlinearity};
use nlwave::forward::{ExteriorData, SemilinearMode, TimeGrid, TimeProfile};
use nlwave::invert::*;
use nlwave::operator::{FractionalOperator, SpatialGrid};
use nlwave::Error;
use proptest::prelude::*;

const T: f64 = 4.0;
const EPS: [f64; 6] = [0.8, 0.4, 0.2, 0.1, 0.05, 0.02];

struct Setup {
    op: FractionalOperator,
    tg: TimeGrid,
    coeffs: Coefficients,
}

fn setup() -> &'static Setup {
    static CELL: OnceLock<Setup> = OnceLock::new();
    CELL.get_or_init(|| {
        let op = FractionalOperator::build(SpatialGrid::default_1d(64).unwrap(), 0.5).unwrap();
        let g = op.grid();
        let coeffs = Coefficients::bounded(g, 0.5, DVector::from_element(g.n_nodes(), 0.3), DVector::from_element(g.n_nodes(), 1.0)).unwrap();
        Setup { op, tg: TimeGrid::new(T, 100).unwrap(), coeffs }
    })
}

fn q_f_bump(s: &Setup) -> DVector<f64> {
    let preset = FieldPreset::Gaussian { amplitude: 2.0, center: vec![-0.1], width: 0.3 };
    DVector::from_vec(s.op.grid().sample_omega(|x| preset.eval(x)))
}

fn nonlinearity(s: &Setup, r: f64) -> Nonlinearity {
    Nonlinearity::new(q_f_bump(s), r, 1, 0.5).unwrap()
}

fn picard() -> SemilinearMode {
    SemilinearMode::Picard(Default::default())
}

fn eta() -> ExteriorData {
    single_probe("W1", -1.5, 0.29, TimeProfile::bump(0.0, 0.6 * T))
}

fn probes() -> Vec<ExteriorData> {
    vec![
        eta(),
        single_probe("W2", 1.5, 0.29, TimeProfile::bump(0.3 * T, 0.9 * T)),
        single_probe("W1", -1.4, 0.2, TimeProfile::bump(0.4 * T, T)),
    ]
}

#[test]
fn linear_equation_has_no_remainder() {
    let s = setup();
    let f = Nonlinearity::zero(s.op.grid().n_omega(), 1.0);
    let scan = amplitude_scan(&s.op, &s.coeffs, &f, &eta(), &EPS, &s.tg, picard()).unwrap();
    assert!(scan.norms.iter().all(|&n| n == 0.0), "{:?}", scan.norms);
    assert!(scan.slope.is_infinite() && scan.slope > 0.0);
}

fn check_slope(r: f64) -> AmplitudeScan {
    let s = setup();
    let scan = amplitude_scan(&s.op, &s.coeffs, &nonlinearity(s, r), &eta(), &EPS, &s.tg, picard()).unwrap();
    eprintln!("r = {r}: slope {} norms {:?} ratio {:?}", scan.slope, scan.norms, scan.max_gap_ratio);
    assert!(scan.slope >= r + 1.0 - 0.1, "slope {}", scan.slope);
    assert!(scan.dropped.is_empty());
    let ratio = scan.max_gap_ratio.expect("Picard log");
    assert!(ratio < 1.0, "gap ratio {ratio}");
    scan
}

#[test]
fn cubic_nonlinearity_scales_quadratically() {
    let scan = check_slope(1.0);
    assert!(scan.slope <= 2.3, "slope {}", scan.slope);
}

#[test]
fn quartic_nonlinearity_scales_cubically() {
    check_slope(2.0);
}

#[test]
fn amplitude_ladders_are_validated() {
    assert!(validate_amplitudes(&[0.8, 0.4, 0.2]).is_err());
    assert!(validate_amplitudes(&[0.8, 0.4, 0.4, 0.01]).is_err());
    assert!(validate_amplitudes(&[0.8, 0.4, 0.2, 0.1]).is_err());
    assert!(validate_amplitudes(&[0.8, 0.4, -0.2, 0.01]).is_err());
    assert!(validate_amplitudes(&[0.8, 0.4, 0.1, 0.02]).is_ok());
}

#[test]
fn too_many_divergent_amplitudes_fail_the_scan() {
    let s = setup();
    let strong = Nonlinearity::new(q_f_bump(s) * 1e4, 2.0, 1, 0.5).unwrap();
    let mode = SemilinearMode::Picard(nlwave::forward::PicardOptions { max_iter: 15, max_escalations: 0, ..Default::default() });
    let res = amplitude_scan(&s.op, &s.coeffs, &strong, &eta(), &[100.0, 50.0, 20.0, 10.0, 2.0], &s.tg, mode);
    match res {
        Err(Error::Scan(msg)) => eprintln!("{msg}"),
        Ok(scan) => panic!("expected a scan error, kept {:?} dropped {:?}", scan.amplitudes, scan.dropped),
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn nonlinearity_is_recovered() {
    let s = setup();
    let sim = SyntheticTwin::new(&s.op, s.coeffs.clone()).with_nonlinearity(nonlinearity(s, 1.0), picard());
    let mut rec = recover_nonlinearity(&s.op, &s.coeffs, &sim, &probes(), &EPS, &s.tg, &NonlinearOptions::default()).unwrap();
    let err = rec.score(q_f_bump(s).as_slice());
    eprintln!("r_hat {:?} slope {} eps {:?} err {err} flagged {}", rec.r_hat, rec.slope, rec.epsilon_used, rec.flagged().len());
    assert_eq!(rec.r_hat, Some(1.0));
    assert!(err <= 0.10, "{err}");
}

#[test]
fn quartic_exponent_is_recovered() {
    let s = setup();
    let sim = SyntheticTwin::new(&s.op, s.coeffs.clone()).with_nonlinearity(nonlinearity(s, 2.0), picard());
    let mut rec = recover_nonlinearity(&s.op, &s.coeffs, &sim, &probes(), &EPS, &s.tg, &NonlinearOptions::default()).unwrap();
    let err = rec.score(q_f_bump(s).as_slice());
    eprintln!("r_hat {:?} slope {} err {err}", rec.r_hat, rec.slope);
    assert_eq!(rec.r_hat, Some(2.0));
    assert!(err <= 0.10, "{err}");
}

#[test]
fn equal_nonlinearities_give_zero_difference() {
    let s = setup();
    let sim = SyntheticTwin::new(&s.op, s.coeffs.clone());
    let rec = recover_nonlinearity(&s.op, &s.coeffs, &sim, &probes(), &EPS, &s.tg, &NonlinearOptions::default()).unwrap();
    assert_eq!(rec.r_hat, None);
    assert!(rec.q_f.iter().all(|&q| q == 0.0));
}

#[test]
fn richer_probe_sets_flag_fewer_nodes() {
    let s = setup();
    let sim = SyntheticTwin::new(&s.op, s.coeffs.clone()).with_nonlinearity(nonlinearity(s, 1.0), picard());
    let opts = NonlinearOptions { v_floor: 2e-2, ..Default::default() };
    let all = probes();
    let small = recover_nonlinearity(&s.op, &s.coeffs, &sim, &all[..1], &EPS, &s.tg, &opts).unwrap();
    let large = recover_nonlinearity(&s.op, &s.coeffs, &sim, &all, &EPS, &s.tg, &opts).unwrap();
    let (a, b) = (small.flagged(), large.flagged());
    eprintln!("flagged {} -> {}", a.len(), b.len());
    assert!(b.iter().all(|i| a.contains(i)));
    assert!(b.len() < a.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn scan_invariants(amp in 0.5f64..3.0, centre in -0.5f64..0.5, r in prop_oneof![Just(1.0), Just(1.5), Just(2.0)]) {
        let s = setup();
        let preset = FieldPreset::Gaussian { amplitude: amp, center: vec![centre], width: 0.3 };
        let q = DVector::from_vec(s.op.grid().sample_omega(|x| preset.eval(x)));
        let f = Nonlinearity::new(q, r, 1, 0.5).unwrap();
        let scan = amplitude_scan(&s.op, &s.coeffs, &f, &eta(), &EPS, &s.tg, picard()).unwrap();
        prop_assert!(scan.amplitudes.windows(2).all(|w| w[1] < w[0]));
        prop_assert!(scan.norms.iter().all(|&n| n >= 0.0));
        prop_assert!(scan.slope >= r + 1.0 - 0.1, "slope {}", scan.slope);
    }
}

#[test]
fn divergent_amplitudes_are_dropped() {
    let s = setup();
    let strong = Nonlinearity::new(q_f_bump(s) * 1e4, 2.0, 1, 0.5).unwrap();
    let mode = SemilinearMode::Picard(nlwave::forward::PicardOptions { max_iter: 15, max_escalations: 0, ..Default::default() });
    let eps = [20.0, 5.0, 0.05, 0.02, 0.01, 0.005];
    let scan = amplitude_scan(&s.op, &s.coeffs, &strong, &eta(), &eps, &s.tg, mode).unwrap();
    eprintln!("kept {:?} dropped {:?} slope {}", scan.amplitudes, scan.dropped, scan.slope);
    assert!(!scan.dropped.is_empty());
    assert_eq!(scan.amplitudes.len() + scan.dropped.len(), eps.len());
    assert!(scan.slope >= 2.9);
}
