//! Quadrature weights for the hypersingular integral
//! `(-Δ)^s u(x) = c_{n,s} p.v. ∫ (u(x) - u(y)) / |x - y|^{n+2s} dy`.
//!
//! 1D: the near zone `|x - y| < h` is handled by a second-order Taylor expansion
//! (second difference times the exact kernel moment); the far zone integrates the
//! kernel exactly against the piecewise-linear interpolant of `u`, extended by zero
//! outside the box. The resulting matrix is symmetric Toeplitz on the box nodes.
//!
//! 2D: the singular cell `[-h/2, h/2]^2` uses the same Taylor device with the
//! five-point Laplacian; every other cell contributes its exact kernel mass (tensor
//! Gauss–Legendre) times the nodal value, and the diagonal carries the total kernel
//! mass outside the singular cell.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use statrs::function::gamma::gamma;

/// `c_{n,s} = 4^s Γ(n/2 + s) / (π^{n/2} |Γ(-s)|)`.
pub fn normalization_constant(dim: usize, s: f64) -> f64 {
    let n = dim as f64;
    4f64.powf(s) * gamma(0.5 * n + s) / (PI.powf(0.5 * n) * gamma(-s).abs())
}

fn rule(degree: usize) -> GaussLegendre {
    GaussLegendre::new(NonZeroUsize::new(degree).expect("positive degree"))
}

/// Second antiderivative of `z^{-1-2s}` and its first derivative (unit spacing).
fn kernel_antiderivatives(s: f64) -> (impl Fn(f64) -> f64, impl Fn(f64) -> f64) {
    let half = (s - 0.5).abs() < 1e-14;
    let g = move |z: f64| {
        if half {
            -z.ln()
        } else {
            z.powf(1.0 - 2.0 * s) / (-2.0 * s * (1.0 - 2.0 * s))
        }
    };
    let dg = move |z: f64| {
        if half {
            -1.0 / z
        } else {
            z.powf(-2.0 * s) / (-2.0 * s)
        }
    };
    (g, dg)
}

/// Far-zone weights `ω_k`, `k = 1..=max_offset`, for unit spacing: the integral of the
/// hat function centred at `k` (truncated to `[1, 2]` for `k = 1`) against `z^{-1-2s}`.
pub fn hat_weights_1d(s: f64, max_offset: usize) -> Vec<f64> {
    let (g, dg) = kernel_antiderivatives(s);
    (1..=max_offset)
        .map(|k| {
            let k = k as f64;
            if k == 1.0 {
                -dg(1.0) + g(2.0) - g(1.0)
            } else {
                g(k + 1.0) - 2.0 * g(k) + g(k - 1.0)
            }
        })
        .collect()
}

/// Dense 1D matrix of `(-Δ)^s` on `n` box nodes with spacing `h`.
pub fn assemble_1d(n: usize, h: f64, s: f64) -> Vec<f64> {
    let c = normalization_constant(1, s);
    let scale = h.powf(-2.0 * s);
    let omega = hat_weights_1d(s, n.saturating_sub(1).max(1));
    // near zone: -u'' h^{2-2s}/(2-2s), u'' by the centred second difference
    let taylor = 1.0 / (2.0 - 2.0 * s);
    let diag = c * scale * (1.0 / s + 2.0 * taylor);

    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = diag;
        for j in 0..n {
            if j == i {
                continue;
            }
            let k = i.abs_diff(j);
            let mut w = omega[k - 1];
            if k == 1 {
                w += taylor;
            }
            a[i * n + j] = -c * scale * w;
        }
    }
    a
}

/// `∫_{[-h/2,h/2]^2} |z|^{-2s} dz`.
fn singular_cell_moment(h: f64, s: f64) -> f64 {
    let q = rule(48);
    let r = 0.5 * h;
    8.0 * q.integrate(0.0, PI / 4.0, |t| (r / t.cos()).powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s))
}

/// `∫_{R^2 \ [-h/2,h/2]^2} |z|^{-2-2s} dz`.
fn exterior_mass_2d(h: f64, s: f64) -> f64 {
    let q = rule(48);
    let r = 0.5 * h;
    8.0 * q.integrate(0.0, PI / 4.0, |t| (r / t.cos()).powf(-2.0 * s) / (2.0 * s))
}

/// Kernel mass of the cell centred at offset `(di, dj)` (in cells) for spacing `h`.
fn cell_mass_2d(di: i64, dj: i64, h: f64, s: f64, near: &GaussLegendre, far: &GaussLegendre) -> f64 {
    let rule = if di.abs().max(dj.abs()) <= 3 { near } else { far };
    let (cx, cy) = (di as f64 * h, dj as f64 * h);
    rule.integrate(cx - 0.5 * h, cx + 0.5 * h, |x| {
        rule.integrate(cy - 0.5 * h, cy + 0.5 * h, |y| (x * x + y * y).powf(-1.0 - s))
    })
}

/// Dense 2D matrix on `m x m` box nodes (first axis fastest) with spacing `h`.
pub fn assemble_2d(m: usize, h: f64, s: f64) -> Vec<f64> {
    let c = normalization_constant(2, s);
    let near = rule(12);
    let far = rule(4);
    let span = m as i64;
    let width = (2 * span - 1) as usize;
    let mut table = vec![0.0; width * width];
    for di in -(span - 1)..span {
        for dj in -(span - 1)..span {
            if di == 0 && dj == 0 {
                continue;
            }
            // symmetric in sign and in swapping axes; compute one representative
            let (a, b) = (di.abs().max(dj.abs()), di.abs().min(dj.abs()));
            let idx = |p: i64, q: i64| ((p + span - 1) as usize) * width + (q + span - 1) as usize;
            if table[idx(a, b)] == 0.0 {
                table[idx(a, b)] = cell_mass_2d(a, b, h, s, &near, &far);
            }
            table[idx(di, dj)] = table[idx(a, b)];
        }
    }
    let lap = singular_cell_moment(h, s) / (4.0 * h * h);
    let diag = c * (exterior_mass_2d(h, s) + 4.0 * lap);

    let n = m * m;
    let mut a = vec![0.0; n * n];
    for p in 0..n {
        let (pi, pj) = ((p % m) as i64, (p / m) as i64);
        a[p * n + p] = diag;
        for q in 0..n {
            if q == p {
                continue;
            }
            let (di, dj) = ((q % m) as i64 - pi, (q / m) as i64 - pj);
            let mut w = table[((di + span - 1) as usize) * width + (dj + span - 1) as usize];
            if di.abs() + dj.abs() == 1 {
                w += lap;
            }
            a[p * n + q] = -c * w;
        }
    }
    a
}
