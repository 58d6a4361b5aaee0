use serde::{Deserialize, Serialize};

/// Scalar time profile with analytic first and second derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeProfile {
    /// `64 ξ^3 (1-ξ)^3` for `ξ = (t-start)/(end-start) ∈ [0,1]`, zero elsewhere.
    /// Peak value 1; twice continuously differentiable.
    Bump { start: f64, end: f64 },
    /// Rises from 0 to 1 on `[start, start+ramp]` by the quintic smoothstep, stays at 1,
    /// and falls back to 0 on `[end-ramp, end]`.
    Plateau { start: f64, end: f64, ramp: f64 },
    /// `∫_0^t inner(τ) dτ` for a bump `inner`; reaches a constant after the bump.
    IntegratedBump { start: f64, end: f64 },
    /// `sin(ω t)^2`.
    SineSquared { omega: f64 },
    Constant { value: f64 },
    /// `inner(total - t)`.
    Reversed { inner: Box<TimeProfile>, total: f64 },
}

fn bump_parts(x: f64) -> (f64, f64, f64) {
    // 64 x^3 (1-x)^3 and its derivatives in x
    if !(0.0..=1.0).contains(&x) {
        return (0.0, 0.0, 0.0);
    }
    let y = 1.0 - x;
    let v = 64.0 * x.powi(3) * y.powi(3);
    let d1 = 64.0 * 3.0 * x * x * y * y * (y - x);
    let d2 = 64.0 * 6.0 * x * y * (y * y - 3.0 * x * y + x * x);
    (v, d1, d2)
}

fn smoothstep(x: f64) -> (f64, f64, f64) {
    if x <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if x >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let v = x * x * x * (10.0 - 15.0 * x + 6.0 * x * x);
    let d1 = 30.0 * x * x * (1.0 - x) * (1.0 - x);
    let d2 = 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x);
    (v, d1, d2)
}

impl TimeProfile {
    pub fn bump(start: f64, end: f64) -> Self {
        TimeProfile::Bump { start, end }
    }

    /// Value, first and second derivative at `t`.
    pub fn eval3(&self, t: f64) -> (f64, f64, f64) {
        match self {
            TimeProfile::Bump { start, end } => {
                let w = end - start;
                let (v, d1, d2) = bump_parts((t - start) / w);
                (v, d1 / w, d2 / (w * w))
            }
            TimeProfile::Plateau { start, end, ramp } => {
                let (a, a1, a2) = smoothstep((t - start) / ramp);
                let (b, b1, b2) = smoothstep((end - t) / ramp);
                // product of rising and falling edges
                let v = a * b;
                let d1 = (a1 * b - a * b1) / ramp;
                let d2 = (a2 * b - 2.0 * a1 * b1 + a * b2) / (ramp * ramp);
                (v, d1, d2)
            }
            TimeProfile::IntegratedBump { start, end } => {
                let w = end - start;
                let x = ((t - start) / w).clamp(0.0, 1.0);
                // ∫_0^x 64 ξ^3 (1-ξ)^3 dξ = 64 (x^4/4 - 3x^5/5 + x^6/2 - x^7/7)
                let prim = 64.0 * (x.powi(4) / 4.0 - 3.0 * x.powi(5) / 5.0 + x.powi(6) / 2.0 - x.powi(7) / 7.0);
                let (v, d1, _) = bump_parts((t - start) / w);
                (w * prim, v, d1 / w)
            }
            TimeProfile::SineSquared { omega } => {
                let (s, c) = (omega * t).sin_cos();
                (s * s, 2.0 * omega * s * c, 2.0 * omega * omega * (c * c - s * s))
            }
            TimeProfile::Constant { value } => (*value, 0.0, 0.0),
            TimeProfile::Reversed { inner, total } => {
                let (v, d1, d2) = inner.eval3(total - t);
                (v, -d1, d2)
            }
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.eval3(t).0
    }

    pub fn reversed(&self, total: f64) -> Self {
        match self {
            TimeProfile::Reversed { inner, total: t0 } if (*t0 - total).abs() < 1e-14 => (**inner).clone(),
            _ => TimeProfile::Reversed {
                inner: Box::new(self.clone()),
                total,
            },
        }
    }
}

/// Smooth compactly supported spatial bump `Π_a exp(1 - 1/(1 - ((x_a - c_a)/r_a)^2))`, peak 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialBump {
    pub center: Vec<f64>,
    pub radius: Vec<f64>,
}

impl SpatialBump {
    pub fn new(center: Vec<f64>, radius: Vec<f64>) -> Self {
        Self { center, radius }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = 1.0;
        for ((xi, c), r) in x.iter().zip(&self.center).zip(&self.radius) {
            let z = (xi - c) / r;
            if z.abs() >= 1.0 {
                return 0.0;
            }
            v *= (1.0 - 1.0 / (1.0 - z * z)).exp();
        }
        v
    }

    pub fn support_lo(&self) -> Vec<f64> {
        self.center.iter().zip(&self.radius).map(|(c, r)| c - r).collect()
    }

    pub fn support_hi(&self) -> Vec<f64> {
        self.center.iter().zip(&self.radius).map(|(c, r)| c + r).collect()
    }
}
