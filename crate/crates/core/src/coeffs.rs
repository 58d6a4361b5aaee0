//! Damping, potential and homogeneous nonlinearities, with the admissible exponent windows.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};
use crate::operator::SpatialGrid;

const EQ_TOL: f64 = 1e-12;

/// One constraint of an exponent validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<ConstraintCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConstraintCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Check the integrability window for `p` and the growth window for `r` in dimension `n`.
/// Use `f64::INFINITY` for `p = ∞`.
pub fn validate_exponents(n: usize, s: f64, p: f64, r: f64) -> ValidationReport {
    let nf = n as f64;
    let two_s = 2.0 * s;
    let mut checks = Vec::new();

    let (p_ok, p_detail) = if two_s < nf - EQ_TOL {
        (p >= nf / s - EQ_TOL, format!("2s < n requires n/s = {} <= p <= inf", nf / s))
    } else if (two_s - nf).abs() <= EQ_TOL {
        (p > 2.0, "2s = n requires 2 < p <= inf".to_string())
    } else {
        (p >= 2.0, "2s > n requires 2 <= p <= inf".to_string())
    };
    checks.push(ConstraintCheck {
        name: "p".into(),
        passed: p_ok && !p.is_nan(),
        detail: format!("{p_detail}; got p = {p}"),
    });

    let (r_ok, r_detail) = if two_s >= nf - EQ_TOL {
        (r >= 0.0 && r.is_finite(), "2s >= n allows 0 <= r < inf".to_string())
    } else {
        let cap = two_s / (nf - two_s);
        (r >= 0.0 && r <= cap + EQ_TOL, format!("2s < n requires 0 <= r <= 2s/(n-2s) = {cap}"))
    };
    checks.push(ConstraintCheck {
        name: "r".into(),
        passed: r_ok,
        detail: format!("{r_detail}; got r = {r}"),
    });

    let s_ok = s > 0.0 && s < 1.0 && (n == 1 || n == 2);
    checks.push(ConstraintCheck {
        name: "setting".into(),
        passed: s_ok,
        detail: format!("need n in {{1,2}} and 0 < s < 1; got n = {n}, s = {s}"),
    });

    ValidationReport { checks }
}

/// Analytic coefficient profiles selectable from experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldPreset {
    Constant { value: f64 },
    /// `amplitude * exp(-|x - center|^2 / (2 width^2))`.
    Gaussian { amplitude: f64, center: Vec<f64>, width: f64 },
    /// Step across the first coordinate: `left` for `x_1 < position`, `right` above.
    /// `mollify > 0` replaces the jump by a smooth `tanh` transition of that width.
    Step { left: f64, right: f64, position: f64, mollify: f64 },
}

impl FieldPreset {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            FieldPreset::Constant { value } => *value,
            FieldPreset::Gaussian { amplitude, center, width } => {
                let d2: f64 = x.iter().zip(center.iter().chain(std::iter::repeat(&0.0))).map(|(a, b)| (a - b).powi(2)).sum();
                amplitude * (-d2 / (2.0 * width * width)).exp()
            }
            FieldPreset::Step { left, right, position, mollify } => {
                let t = if *mollify > 0.0 {
                    0.5 * (1.0 + ((x[0] - position) / mollify).tanh())
                } else if x[0] < *position {
                    0.0
                } else {
                    1.0
                };
                left + (right - left) * t
            }
        }
    }

    pub fn sample(&self, grid: &SpatialGrid) -> DVector<f64> {
        DVector::from_vec(grid.sample(|x| self.eval(x)))
    }
}

/// Read a full-grid field from CSV rows `node,value`; nodes not listed are zero.
pub fn load_field_csv(path: &Path, grid: &SpatialGrid) -> Result<DVector<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)?;
    let mut field = DVector::zeros(grid.n_nodes());
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let parse = |i: usize| -> Result<&str> {
            row.get(i)
                .map(str::trim)
                .ok_or_else(|| Error::Config(format!("{}: row {} has fewer than 2 columns", path.display(), line + 2)))
        };
        let node: usize = parse(0)?
            .parse()
            .map_err(|e| Error::Config(format!("{}: row {}: bad node index: {e}", path.display(), line + 2)))?;
        let value: f64 = parse(1)?
            .parse()
            .map_err(|e| Error::Config(format!("{}: row {}: bad value: {e}", path.display(), line + 2)))?;
        if node >= grid.n_nodes() {
            return Err(Error::Config(format!(
                "{}: row {}: node {node} outside grid of {} nodes",
                path.display(),
                line + 2,
                grid.n_nodes()
            )));
        }
        field[node] = value;
    }
    Ok(field)
}

/// Write a full-grid field as `node,x,value` CSV.
pub fn write_field_csv(path: &Path, grid: &SpatialGrid, field: &DVector<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["node", "x", "value"])?;
    for k in 0..grid.n_nodes() {
        w.write_record([k.to_string(), format!("{:.17e}", grid.coord(k)[0]), format!("{:.17e}", field[k])])?;
    }
    w.flush()?;
    Ok(())
}

/// Damping `γ` (full grid) and potential `q` (interior, zero elsewhere).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Coefficients {
    gamma: Vec<f64>,
    q: Vec<f64>,
    p_exponent: f64,
    alpha: f64,
}

impl Coefficients {
    /// Build and validate. `q` is zeroed outside `Ω`; the exponent window for `p` and
    /// `alpha > s` are enforced.
    pub fn new(
        grid: &SpatialGrid,
        s: f64,
        gamma: DVector<f64>,
        q: DVector<f64>,
        p_exponent: f64,
        alpha: f64,
    ) -> Result<Self> {
        check_len("damping field", grid.n_nodes(), gamma.len())?;
        check_len("potential field", grid.n_nodes(), q.len())?;
        let report = validate_exponents(grid.dim(), s, p_exponent, 0.0);
        if !report.passed() {
            let why: Vec<_> = report.failures().map(|c| c.detail.clone()).collect();
            return Err(Error::Config(format!("coefficient exponents rejected: {}", why.join("; "))));
        }
        if !(alpha > s && alpha <= 1.0) {
            return Err(Error::Config(format!("Hölder exponent must satisfy s < alpha <= 1, got alpha = {alpha}, s = {s}")));
        }
        if gamma.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("coefficient fields must be finite".into()));
        }
        let mask = grid.omega_mask();
        let q: Vec<f64> = q.iter().zip(mask).map(|(&v, &m)| if m { v } else { 0.0 }).collect();
        Ok(Self {
            gamma: gamma.as_slice().to_vec(),
            q,
            p_exponent,
            alpha,
        })
    }

    /// `γ = q = 0` with `p = ∞`, `α = 1`.
    pub fn zero(grid: &SpatialGrid) -> Self {
        Self {
            gamma: vec![0.0; grid.n_nodes()],
            q: vec![0.0; grid.n_nodes()],
            p_exponent: f64::INFINITY,
            alpha: 1.0,
        }
    }

    /// Bounded fields with the default exponents `p = ∞`, `α = 1`.
    pub fn bounded(grid: &SpatialGrid, s: f64, gamma: DVector<f64>, q: DVector<f64>) -> Result<Self> {
        Self::new(grid, s, gamma, q, f64::INFINITY, 1.0)
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn p_exponent(&self) -> f64 {
        self.p_exponent
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Interior restriction of `γ`.
    pub fn gamma_omega(&self, grid: &SpatialGrid) -> DVector<f64> {
        DVector::from_vec(grid.restrict_omega(&self.gamma))
    }

    pub fn q_omega(&self, grid: &SpatialGrid) -> DVector<f64> {
        DVector::from_vec(grid.restrict_omega(&self.q))
    }

    /// Same potential, damping sign flipped.
    pub fn with_negated_damping(&self) -> Self {
        let mut c = self.clone();
        c.gamma.iter_mut().for_each(|g| *g = -*g);
        c
    }

    /// Replace the interior values of `γ` and `q` by `γ_Ω + dγ`, `q_Ω + dq`.
    pub fn perturbed(&self, grid: &SpatialGrid, d_gamma: Option<&DVector<f64>>, d_q: Option<&DVector<f64>>) -> Self {
        let mut c = self.clone();
        for (i, &k) in grid.omega_nodes().iter().enumerate() {
            if let Some(d) = d_gamma {
                c.gamma[k] += d[i];
            }
            if let Some(d) = d_q {
                c.q[k] += d[i];
            }
        }
        c
    }

    /// Content hash of the fields (hex SHA-256 of the little-endian bytes).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for v in self.gamma.iter().chain(&self.q).chain([&self.p_exponent, &self.alpha]) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// `f(x, τ) = q_f(x) |τ|^r τ` on interior nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Nonlinearity {
    q_f: Vec<f64>,
    r: f64,
}

impl Nonlinearity {
    /// Checks `q_f >= 0` and the growth window for `r` in the given setting.
    pub fn new(q_f: DVector<f64>, r: f64, dim: usize, s: f64) -> Result<Self> {
        if q_f.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("nonlinearity coefficient q_f must be finite and nonnegative".into()));
        }
        let report = validate_exponents(dim, s, f64::INFINITY, r);
        if !report.passed() {
            let why: Vec<_> = report.failures().map(|c| c.detail.clone()).collect();
            return Err(Error::Config(format!("nonlinearity exponent rejected: {}", why.join("; "))));
        }
        Ok(Self {
            q_f: q_f.as_slice().to_vec(),
            r,
        })
    }

    pub fn zero(n_omega: usize, r: f64) -> Self {
        Self { q_f: vec![0.0; n_omega], r }
    }

    pub fn q_f(&self) -> &[f64] {
        &self.q_f
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn is_zero(&self) -> bool {
        self.q_f.iter().all(|&v| v == 0.0)
    }

    /// Pointwise `q_f |u|^r u`.
    pub fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("nonlinearity", self.q_f.len(), u.len())?;
        Ok(DVector::from_iterator(
            u.len(),
            u.iter().zip(&self.q_f).map(|(&x, &c)| c * x.abs().powf(self.r) * x),
        ))
    }

    /// Pointwise `q_f |u|^{r+2} / (r+2)`.
    pub fn antiderivative(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("nonlinearity antiderivative", self.q_f.len(), u.len())?;
        Ok(DVector::from_iterator(
            u.len(),
            u.iter().zip(&self.q_f).map(|(&x, &c)| c * x.abs().powf(self.r + 2.0) / (self.r + 2.0)),
        ))
    }
}
