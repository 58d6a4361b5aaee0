use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use serde::{Deserialize, Serialize};

use crate::coeffs::FieldPreset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Forward,
    Identities,
    Dn,
    Runge,
    InvertLinear,
    InvertSemilinear,
    Scan,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Forward,
        ExperimentKind::Identities,
        ExperimentKind::Dn,
        ExperimentKind::Runge,
        ExperimentKind::InvertLinear,
        ExperimentKind::InvertSemilinear,
        ExperimentKind::Scan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Forward => "forward",
            ExperimentKind::Identities => "identities",
            ExperimentKind::Dn => "dn",
            ExperimentKind::Runge => "runge",
            ExperimentKind::InvertLinear => "invert-linear",
            ExperimentKind::InvertSemilinear => "invert-semilinear",
            ExperimentKind::Scan => "scan",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind '{s}' (expected one of {})", kind_list())))
    }
}

fn kind_list() -> String {
    ExperimentKind::ALL.map(|k| k.name()).join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ty {
    Float,
    Int,
    Text,
    Floats,
    /// `none`, `constant V`, `gaussian AMP CENTER WIDTH`, `step LEFT RIGHT POSITION MOLLIFY`.
    Field,
    /// Optional path, resolved against the config file's directory.
    File,
    Choice(&'static [&'static str]),
}

struct Key {
    section: &'static str,
    name: &'static str,
    ty: Ty,
    default: &'static str,
}

const fn key(section: &'static str, name: &'static str, ty: Ty, default: &'static str) -> Key {
    Key { section, name, ty, default }
}

const QUADRATURES: &[&str] = &["step_average", "trapezoid"];
const ORDERS: &[&str] = &["potential_first", "damping_first"];
const WINDOWS: &[&str] = &["W1", "W2"];

/// Every accepted key with its type and default.
const SCHEMA: &[Key] = &[
    key("experiment", "kind", Ty::Text, ""),
    key("experiment", "seed", Ty::Int, "0"),
    key("experiment", "label", Ty::Text, ""),
    key("grid", "n", Ty::Int, "64"),
    key("grid", "s", Ty::Float, "0.5"),
    key("time", "t_final", Ty::Float, "4"),
    key("time", "steps", Ty::Int, "100"),
    key("time", "quadrature", Ty::Choice(QUADRATURES), "step_average"),
    key("coefficients", "gamma", Ty::Field, "constant 0.3"),
    key("coefficients", "q", Ty::Field, "constant 1"),
    key("coefficients", "gamma_file", Ty::File, ""),
    key("coefficients", "q_file", Ty::File, ""),
    key("data", "window", Ty::Choice(WINDOWS), "W1"),
    key("data", "center", Ty::Float, "-1.5"),
    key("data", "radius", Ty::Float, "0.29"),
    key("data", "amplitude", Ty::Float, "1"),
    key("data", "start", Ty::Float, "0"),
    key("data", "end", Ty::Float, "2.4"),
    key("data", "initial", Ty::Field, "none"),
    key("data", "forcing", Ty::Float, "0"),
    key("dn", "basis", Ty::Int, "3"),
    key("dn", "radius", Ty::Float, "0.14"),
    key("runge", "basis", Ty::Int, "32"),
    key("runge", "centers", Ty::Floats, "-1.7 -1.6 -1.5 -1.4"),
    key("runge", "radius", Ty::Float, "0.08"),
    key("runge", "width", Ty::Float, "0.6"),
    key("runge", "alpha", Ty::Float, "-1"),
    key("runge", "sizes", Ty::Floats, "4 8 16 32"),
    key("inversion", "cells", Ty::Int, "16"),
    key("inversion", "delta_q", Ty::Field, "gaussian 0.8 0.15 0.2"),
    key("inversion", "delta_gamma", Ty::Field, "step 0 0.3 0 0.15"),
    key("inversion", "first_modes", Ty::Int, "4"),
    key("inversion", "born_iterations", Ty::Int, "8"),
    key("inversion", "order", Ty::Choice(ORDERS), "potential_first"),
    key("inversion", "ladder", Ty::Floats, "1e-1 1e-2 1e-3 1e-4 1e-5 1e-6 1e-7 1e-8"),
    key("nonlinear", "r", Ty::Float, "1"),
    key("nonlinear", "q_f", Ty::Field, "gaussian 2 -0.1 0.3"),
    key("nonlinear", "epsilons", Ty::Floats, "0.8 0.4 0.2 0.1 0.05 0.02"),
    key("nonlinear", "v_floor", Ty::Float, "1e-3"),
    key("nonlinear", "exponent_step", Ty::Float, "0.25"),
    key("tolerances", "energy", Ty::Float, "1e-10"),
    key("tolerances", "reversal", Ty::Float, "1e-10"),
    key("tolerances", "transposition", Ty::Float, "1e-8"),
    key("tolerances", "self_adjoint", Ty::Float, "1e-9"),
    key("tolerances", "integral_identity", Ty::Float, "1e-10"),
    key("tolerances", "runge_terminal", Ty::Float, "0.1"),
    key("tolerances", "inversion", Ty::Float, "0.1"),
    key("tolerances", "zero_floor", Ty::Float, "1e-12"),
    key("tolerances", "slope_margin", Ty::Float, "0.1"),
    key("tolerances", "nonlinear", Ty::Float, "0.1"),
];

/// A parsed, schema-checked value.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Float(f64),
    Int(u64),
    Text(String),
    Floats(Vec<f64>),
    Field(Option<FieldPreset>),
    File(Option<PathBuf>),
}

fn parse_field(raw: &str) -> std::result::Result<Option<FieldPreset>, String> {
    let parts: Vec<&str> = raw.split_whitespace().collect();
    let nums = |n: usize| -> std::result::Result<Vec<f64>, String> {
        if parts.len() != n + 1 {
            return Err(format!("'{}' takes {n} numbers", parts[0]));
        }
        parts[1..].iter().map(|p| p.parse::<f64>().map_err(|_| format!("'{p}' is not a number"))).collect()
    };
    match parts.first().copied() {
        None | Some("none") => Ok(None),
        Some("constant") => Ok(Some(FieldPreset::Constant { value: nums(1)?[0] })),
        Some("gaussian") => {
            let v = nums(3)?;
            Ok(Some(FieldPreset::Gaussian { amplitude: v[0], center: vec![v[1]], width: v[2] }))
        }
        Some("step") => {
            let v = nums(4)?;
            Ok(Some(FieldPreset::Step { left: v[0], right: v[1], position: v[2], mollify: v[3] }))
        }
        Some(other) => Err(format!("unknown field preset '{other}' (none, constant, gaussian, step)")),
    }
}

fn parse_value(ty: Ty, raw: &str, base: &Path) -> std::result::Result<Value, String> {
    let raw = raw.trim();
    match ty {
        Ty::Float => raw.parse::<f64>().map(Value::Float).map_err(|_| format!("'{raw}' is not a number")),
        Ty::Int => raw.parse::<u64>().map(Value::Int).map_err(|_| format!("'{raw}' is not a nonnegative integer")),
        Ty::Text => Ok(Value::Text(raw.to_string())),
        Ty::Floats => raw
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<f64>().map_err(|_| format!("'{p}' is not a number")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Value::Floats),
        Ty::Field => parse_field(raw).map(Value::Field),
        Ty::File => {
            if raw.is_empty() {
                return Ok(Value::File(None));
            }
            let p = base.join(raw);
            if !p.is_file() {
                return Err(format!("file '{}' does not exist", p.display()));
            }
            Ok(Value::File(Some(p)))
        }
        Ty::Choice(options) => {
            if options.contains(&raw) {
                Ok(Value::Text(raw.to_string()))
            } else {
                Err(format!("'{raw}' is not one of {}", options.join(", ")))
            }
        }
    }
}

fn canonical(v: &Value) -> String {
    let floats = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    match v {
        Value::Float(x) => x.to_string(),
        Value::Int(i) => i.to_string(),
        Value::Text(s) => s.clone(),
        Value::Floats(xs) => floats(xs),
        Value::Field(None) => "none".into(),
        Value::Field(Some(FieldPreset::Constant { value })) => format!("constant {value}"),
        Value::Field(Some(FieldPreset::Gaussian { amplitude, center, width })) => format!("gaussian {amplitude} {} {width}", floats(center)),
        Value::Field(Some(FieldPreset::Step { left, right, position, mollify })) => format!("step {left} {right} {position} {mollify}"),
        Value::File(None) => String::new(),
        Value::File(Some(p)) => p.display().to_string(),
    }
}

/// Line of `key` inside `[section]` in the raw text, for error messages.
fn locate(text: &str, section: &str, name: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
        } else if current == section && t.split(['=', ':']).next().map(str::trim) == Some(name) {
            return Some(i + 1);
        }
    }
    None
}

fn at(text: &str, section: &str, name: &str) -> String {
    match locate(text, section, name) {
        Some(l) => format!("line {l}: [{section}] {name}"),
        None => format!("[{section}] {name}"),
    }
}

/// Resolved experiment configuration: every schema key carries a value (defaults filled in).
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    values: BTreeMap<(String, String), Value>,
    source: Option<PathBuf>,
}

impl ExperimentConfig {
    /// All defaults for `kind`.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mut values = BTreeMap::new();
        for k in SCHEMA {
            let v = parse_value(k.ty, k.default, Path::new(".")).expect("schema defaults parse");
            values.insert((k.section.to_string(), k.name.to_string()), v);
        }
        values.insert(("experiment".into(), "kind".into()), Value::Text(kind.name().into()));
        Self { kind, values, source: None }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config '{}': {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut cfg = Self::parse_str(&text, &base, None)?;
        cfg.source = Some(path.to_path_buf());
        Ok(cfg)
    }

    /// Parse INI text. `kind` fills in a missing `[experiment] kind` and must agree with it
    /// when both are present.
    pub fn parse_str(text: &str, base: &Path, kind: Option<ExperimentKind>) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        let mut raw: Vec<(String, String, String)> = Vec::new();
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(Error::Config(format!("{}: key outside any section", at(text, "", k))));
                }
                continue;
            };
            for (k, v) in props.iter() {
                raw.push((section.to_string(), k.to_string(), v.to_string()));
            }
        }
        let declared = raw
            .iter()
            .find(|(s, k, _)| s == "experiment" && k == "kind")
            .map(|(_, _, v)| v.trim().parse::<ExperimentKind>().map_err(|e| Error::Config(format!("{}: {e}", at(text, "experiment", "kind")))))
            .transpose()?;
        let kind = match (declared, kind) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Config(format!(
                    "{}: config is for '{a}' but '{b}' was requested",
                    at(text, "experiment", "kind")
                )))
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err(Error::Config("[experiment] kind is required".into())),
        };
        let mut cfg = Self::defaults(kind);
        for (section, name, value) in raw {
            let Some(entry) = SCHEMA.iter().find(|k| k.section == section && k.name == name) else {
                let known = SCHEMA.iter().any(|k| k.section == section);
                let what = if known { "unknown key" } else { "unknown section" };
                return Err(Error::Config(format!("{}: {what}", at(text, &section, &name))));
            };
            if section == "experiment" && name == "kind" {
                continue;
            }
            let v = parse_value(entry.ty, &value, base).map_err(|e| Error::Config(format!("{}: {e}", at(text, &section, &name))))?;
            cfg.values.insert((section, name), v);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Override one key from its textual form.
    pub fn set(&mut self, section: &str, name: &str, raw: &str) -> Result<()> {
        let entry = SCHEMA
            .iter()
            .find(|k| k.section == section && k.name == name)
            .ok_or_else(|| Error::Config(format!("[{section}] {name}: unknown key")))?;
        let base = self.source.as_ref().and_then(|p| p.parent()).map(Path::to_path_buf).unwrap_or_default();
        let v = parse_value(entry.ty, raw, &base).map_err(|e| Error::Config(format!("[{section}] {name}: {e}")))?;
        self.values.insert((section.into(), name.into()), v);
        self.validate()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.values.insert(("experiment".into(), "seed".into()), Value::Int(seed));
        self
    }

    pub fn seed(&self) -> u64 {
        self.int("experiment", "seed").unwrap_or(0) as u64
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    fn get(&self, section: &str, name: &str) -> Result<&Value> {
        self.values
            .get(&(section.to_string(), name.to_string()))
            .ok_or_else(|| Error::Config(format!("[{section}] {name}: missing")))
    }

    fn mismatch(section: &str, name: &str, want: &str) -> Error {
        Error::Config(format!("[{section}] {name}: expected {want}"))
    }

    pub fn float(&self, section: &str, name: &str) -> Result<f64> {
        match self.get(section, name)? {
            Value::Float(x) => Ok(*x),
            _ => Err(Self::mismatch(section, name, "a number")),
        }
    }

    pub fn int(&self, section: &str, name: &str) -> Result<usize> {
        match self.get(section, name)? {
            Value::Int(i) => Ok(*i as usize),
            _ => Err(Self::mismatch(section, name, "an integer")),
        }
    }

    pub fn text(&self, section: &str, name: &str) -> Result<&str> {
        match self.get(section, name)? {
            Value::Text(s) => Ok(s),
            _ => Err(Self::mismatch(section, name, "text")),
        }
    }

    pub fn floats(&self, section: &str, name: &str) -> Result<&[f64]> {
        match self.get(section, name)? {
            Value::Floats(v) => Ok(v),
            _ => Err(Self::mismatch(section, name, "a list of numbers")),
        }
    }

    pub fn field(&self, section: &str, name: &str) -> Result<Option<&FieldPreset>> {
        match self.get(section, name)? {
            Value::Field(f) => Ok(f.as_ref()),
            _ => Err(Self::mismatch(section, name, "a field preset")),
        }
    }

    pub fn file(&self, section: &str, name: &str) -> Result<Option<&Path>> {
        match self.get(section, name)? {
            Value::File(p) => Ok(p.as_deref()),
            _ => Err(Self::mismatch(section, name, "a path")),
        }
    }

    /// `section.key -> canonical value` for every key.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        self.values.iter().map(|((s, k), v)| (format!("{s}.{k}"), canonical(v))).collect()
    }

    /// Every `[tolerances]` entry.
    pub fn tolerances(&self) -> BTreeMap<String, f64> {
        self.values
            .iter()
            .filter(|((s, _), _)| s == "tolerances")
            .filter_map(|((_, k), v)| match v {
                Value::Float(x) => Some((k.clone(), *x)),
                _ => None,
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let positive = |section: &str, name: &str| -> Result<()> {
            let x = self.float(section, name)?;
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::Config(format!("[{section}] {name}: must be positive, got {x}")));
            }
            Ok(())
        };
        positive("time", "t_final")?;
        if self.int("time", "steps")? == 0 {
            return Err(Error::Config("[time] steps: must be at least 1".into()));
        }
        let s = self.float("grid", "s")?;
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Config(format!("[grid] s: must lie in (0,1), got {s}")));
        }
        for (section, name) in self.values.keys().filter(|(s, _)| s == "tolerances") {
            positive(section, name)?;
        }
        match self.kind {
            ExperimentKind::Runge => {
                let sizes = self.floats("runge", "sizes")?;
                let basis = self.int("runge", "basis")? as f64;
                if sizes.len() < 2 || sizes.windows(2).any(|w| w[1] <= w[0]) || sizes.iter().any(|&k| k < 1.0 || k > basis || k.fract() != 0.0) {
                    return Err(Error::Config(format!(
                        "[runge] sizes: need at least two increasing integers within the basis size {basis}"
                    )));
                }
            }
            ExperimentKind::InvertLinear => {
                if self.field("inversion", "delta_q")?.is_none() && self.field("inversion", "delta_gamma")?.is_none() {
                    return Err(Error::Config("[inversion] delta_q and delta_gamma are both none; nothing to recover".into()));
                }
            }
            ExperimentKind::InvertSemilinear | ExperimentKind::Scan => {
                positive("nonlinear", "r")?;
                positive("nonlinear", "exponent_step")?;
                crate::invert::validate_amplitudes(self.floats("nonlinear", "epsilons")?)
                    .map_err(|e| Error::Config(format!("[nonlinear] epsilons: {e}")))?;
            }
            _ => {}
        }
        Ok(())
    }
}
