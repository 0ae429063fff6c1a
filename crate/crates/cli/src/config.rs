//! Analysis config: TOML with top-level settings, a `[g]` table and one
//! `[[estimate]]` table per set of estimates.
//!
//! ```toml
//! alpha = 0.05
//! methods = ["BN1", "BN2", "Projection", "Wald"]
//! seed = 20240229
//! out = "ci.csv"
//!
//! [g]
//! name = "product"
//!
//! [[estimate]]
//! label = "full sample"
//! theta_hat = [0.199, -0.119]
//! t_stat = [3.140, -5.343]
//! correlation = 0.0
//! ```
//!
//! An estimate gives exactly one of `sigma_hat`, `se` or `t_stat`
//! (`se = |theta_hat / t_stat|`). `correlation` goes with `se` or `t_stat`.
//! `r_n` defaults to 1; `n` sets `r_n = √n` instead.

use std::ops::Range;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use toml::Spanned;

use mdci::{EstimateInput, GFunction, Method};

pub const DEFAULT_SEED: u64 = 20240229;
pub const DEFAULT_METHODS: [Method; 4] = [Method::Bn1, Method::Bn2, Method::Projection, Method::Wald];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config error{}{}: {message}",
    .line.map(|l| format!(" at line {l}")).unwrap_or_default(),
    .field.as_ref().map(|f| format!(" in `{f}`")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            line: None,
            field: None,
            message: message.into(),
        }
    }

    fn at(line: Option<usize>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            line,
            field: Some(field.into()),
            message: message.into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    alpha: Option<f64>,
    eta: Option<f64>,
    methods: Option<Vec<String>>,
    seed: Option<u64>,
    out: Option<String>,
    bn2_draws: Option<usize>,
    boot_draws: Option<usize>,
    g: Option<Spanned<RawG>>,
    estimate: Option<Vec<Spanned<RawEstimate>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawG {
    name: String,
    power: Option<u32>,
    matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEstimate {
    label: Option<String>,
    theta_hat: Vec<f64>,
    sigma_hat: Option<Vec<Vec<f64>>>,
    se: Option<Vec<f64>>,
    t_stat: Option<Vec<f64>>,
    correlation: Option<f64>,
    r_n: Option<f64>,
    n: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub label: String,
    pub input: EstimateInput,
}

#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub g: GFunction,
    pub alpha: f64,
    pub eta: Option<f64>,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub bn2_draws: Option<usize>,
    pub boot_draws: Option<usize>,
    pub estimates: Vec<Estimate>,
}

fn line_of(text: &str, span: Range<usize>) -> usize {
    text[..span.start.min(text.len())].matches('\n').count() + 1
}

pub fn parse_method(s: &str) -> Result<Method, ConfigError> {
    let m: Method = s.parse().map_err(|e: mdci::Error| ConfigError::new(e.to_string()))?;
    if m == Method::Am {
        return Err(ConfigError::new("method AM is not implemented"));
    }
    Ok(m)
}

pub fn parse_config(text: &str) -> Result<AnalysisConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError {
        line: e.span().map(|s| line_of(text, s)),
        field: None,
        message: e.message().trim().to_string(),
    })?;

    let alpha = raw.alpha.unwrap_or(0.05);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConfigError::at(None, "alpha", format!("{alpha} outside (0, 1)")));
    }
    if let Some(eta) = raw.eta {
        if !(eta > 0.0 && eta < alpha) {
            return Err(ConfigError::at(None, "eta", format!("{eta} outside (0, alpha)")));
        }
    }
    let methods = match raw.methods {
        Some(list) if list.is_empty() => return Err(ConfigError::at(None, "methods", "empty list")),
        Some(list) => list
            .iter()
            .map(|m| parse_method(m).map_err(|e| ConfigError::at(None, "methods", e.message)))
            .collect::<Result<Vec<_>, _>>()?,
        None => DEFAULT_METHODS.to_vec(),
    };
    if raw.bn2_draws.is_some_and(|b| b < 500) {
        return Err(ConfigError::at(None, "bn2_draws", "must be at least 500"));
    }
    if raw.boot_draws.is_some_and(|b| b < 100) {
        return Err(ConfigError::at(None, "boot_draws", "must be at least 100"));
    }

    let g = match raw.g {
        None => GFunction::product(),
        Some(spanned) => {
            let line = Some(line_of(text, spanned.span()));
            build_g(spanned.into_inner()).map_err(|(f, m)| ConfigError::at(line, f, m))?
        }
    };

    let raw_estimates = raw.estimate.unwrap_or_default();
    if raw_estimates.is_empty() {
        return Err(ConfigError::at(None, "estimate", "at least one [[estimate]] table is required"));
    }
    let estimates = raw_estimates
        .into_iter()
        .enumerate()
        .map(|(i, spanned)| {
            let line = Some(line_of(text, spanned.span()));
            build_estimate(&g, i, spanned.into_inner())
                .map_err(|(f, m)| ConfigError::at(line, format!("estimate[{i}].{f}"), m))
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(AnalysisConfig {
        g,
        alpha,
        eta: raw.eta,
        methods,
        seed: raw.seed.unwrap_or(DEFAULT_SEED),
        out: raw.out.map(PathBuf::from),
        bn2_draws: raw.bn2_draws,
        boot_draws: raw.boot_draws,
        estimates,
    })
}

type FieldError = (String, String);

fn field_err(field: &str, msg: impl ToString) -> FieldError {
    (field.to_string(), msg.to_string())
}

fn matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>, FieldError> {
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(field_err(field, "must be a nonempty square array of arrays"));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn build_g(raw: RawG) -> Result<GFunction, FieldError> {
    let name = raw.name.trim().to_ascii_lowercase();
    let unexpected = |f: &str| field_err(&format!("g.{f}"), format!("not used by g = \"{name}\""));
    match name.as_str() {
        "product" => {
            if raw.power.is_some() {
                return Err(unexpected("power"));
            }
            if raw.matrix.is_some() {
                return Err(unexpected("matrix"));
            }
            Ok(GFunction::product())
        }
        "monomial" => {
            if raw.matrix.is_some() {
                return Err(unexpected("matrix"));
            }
            let p = raw.power.ok_or_else(|| field_err("g.power", "required for a monomial"))?;
            GFunction::monomial(p).map_err(|e| field_err("g.power", e))
        }
        "quadratic_form" => {
            if raw.power.is_some() {
                return Err(unexpected("power"));
            }
            let m = raw.matrix.ok_or_else(|| field_err("g.matrix", "required for a quadratic form"))?;
            GFunction::quadratic_form(matrix(&m, "g.matrix")?).map_err(|e| field_err("g.matrix", e))
        }
        "custom" => Err(field_err("g.name", "custom transformations are available from the library only")),
        other => Err(field_err(
            "g.name",
            format!("unknown transformation '{other}' (expected product, monomial or quadratic_form)"),
        )),
    }
}

fn build_estimate(g: &GFunction, index: usize, raw: RawEstimate) -> Result<Estimate, FieldError> {
    let d = g.dim();
    if raw.theta_hat.len() != d {
        return Err(field_err("theta_hat", format!("has {} entries, g needs {d}", raw.theta_hat.len())));
    }
    let given = [raw.sigma_hat.is_some(), raw.se.is_some(), raw.t_stat.is_some()];
    if given.iter().filter(|b| **b).count() != 1 {
        return Err(field_err("sigma_hat", "give exactly one of sigma_hat, se, t_stat"));
    }
    let sigma = if let Some(rows) = &raw.sigma_hat {
        if raw.correlation.is_some() {
            return Err(field_err("correlation", "only allowed with se or t_stat"));
        }
        let m = matrix(rows, "sigma_hat")?;
        if m.nrows() != d {
            return Err(field_err("sigma_hat", format!("must be {d}x{d}")));
        }
        m
    } else {
        let (field, se) = match (&raw.se, &raw.t_stat) {
            (Some(se), _) => ("se", se.clone()),
            (_, Some(t)) => {
                if t.len() != d {
                    return Err(field_err("t_stat", format!("has {} entries, g needs {d}", t.len())));
                }
                ("t_stat", raw.theta_hat.iter().zip(t).map(|(e, t)| (e / t).abs()).collect())
            }
            _ => unreachable!(),
        };
        if se.len() != d {
            return Err(field_err(field, format!("has {} entries, g needs {d}", se.len())));
        }
        if se.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(field_err(field, "implied standard errors must be positive and finite"));
        }
        let rho = raw.correlation.unwrap_or(0.0);
        if !(rho.abs() < 1.0) {
            return Err(field_err("correlation", format!("{rho} outside (-1, 1)")));
        }
        if d != 2 && rho != 0.0 {
            return Err(field_err("correlation", "a scalar correlation needs d = 2"));
        }
        DMatrix::from_fn(d, d, |i, j| if i == j { se[i] * se[i] } else { rho * se[i] * se[j] })
    };
    let r_n = match (raw.r_n, raw.n) {
        (Some(_), Some(_)) => return Err(field_err("n", "give r_n or n, not both")),
        (Some(r), None) => r,
        (None, Some(n)) if n > 0.0 => n.sqrt(),
        (None, Some(n)) => return Err(field_err("n", format!("{n} must be positive"))),
        (None, None) => 1.0,
    };
    let input = EstimateInput::new(
        DVector::from_vec(raw.theta_hat),
        sigma,
        r_n,
        g.theta_star().clone(),
    )
    .map_err(|e| field_err("sigma_hat", e))?;
    Ok(Estimate {
        label: raw.label.unwrap_or_else(|| format!("estimate {}", index + 1)),
        input,
    })
}
