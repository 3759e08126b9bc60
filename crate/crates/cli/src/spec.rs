//! System-spec files.

use std::path::Path;

use geomint::catalog;
use geomint::discrete::JacobianMode;
use geomint::{CatalogSystem, Expr, IndexSplit, LinearConstraintSystem, MartinetSystem, NewtonConfig};
use serde::Deserialize;

use crate::error::CliError;

pub const SCHEMA: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    schema: u32,
    name: Option<String>,
    catalog: Option<CatalogRef>,
    n: Option<usize>,
    varnames: Option<Vec<String>>,
    metric: Option<MetricSpec>,
    potential: Option<String>,
    #[serde(default)]
    constraints: Vec<RawConstraint>,
    initial: Option<Initial>,
    run: Option<RunSection>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum CatalogRef {
    Name(String),
    Martinet { martinet: MartinetParams },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MartinetParams {
    beta: f64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MetricSpec {
    Named(String),
    Matrix(Vec<Vec<String>>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstraint {
    alpha_index: usize,
    coeffs: Vec<String>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Initial {
    pub q: Option<Vec<f64>>,
    pub p: Option<Vec<f64>>,
    pub v: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub integrator: Option<String>,
    pub h: Option<f64>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub newton: Option<NewtonOverrides>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonOverrides {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    /// `"exact"` or `"fd"`.
    pub jacobian: Option<String>,
    pub fd_step: Option<f64>,
}

impl NewtonOverrides {
    pub fn apply(&self, mut cfg: NewtonConfig) -> Result<NewtonConfig, CliError> {
        if let Some(t) = self.tol {
            cfg.tol = t;
        }
        if let Some(m) = self.max_iter {
            cfg.max_iter = m;
        }
        let fd = self.fd_step.unwrap_or(NewtonConfig::FD_STEP);
        match self.jacobian.as_deref() {
            None => {}
            Some("exact") => cfg.jacobian = JacobianMode::Exact,
            Some("fd") => cfg.jacobian = JacobianMode::FiniteDifference(fd),
            Some(other) => return Err(CliError::validation(format!("run.newton.jacobian: expected \"exact\" or \"fd\", got \"{other}\""))),
        }
        cfg.validate().map_err(|e| CliError::validation(format!("run.newton: {e}")))?;
        Ok(cfg)
    }
}

/// A validated spec ready to run.
#[derive(Clone, Debug)]
pub struct LoadedSpec {
    pub name: String,
    pub system: CatalogSystem,
    pub varnames: Vec<String>,
    pub initial: Initial,
    pub run: RunSection,
}

impl LoadedSpec {
    pub fn linear(&self, what: &str) -> Result<&LinearConstraintSystem, CliError> {
        self.system
            .as_linear()
            .ok_or_else(|| CliError::validation(format!("{what} requires a linear constraint system, `{}` is not one", self.name)))
    }
}

pub fn load(path: &Path) -> Result<LoadedSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| e.context(&path.display().to_string()))
}

pub fn parse(text: &str) -> Result<LoadedSpec, CliError> {
    let raw: RawSpec = serde_json::from_str(text).map_err(|e| CliError::validation(e.to_string()))?;
    if raw.schema != SCHEMA {
        return Err(CliError::validation(format!("schema: unsupported version {}, expected {SCHEMA}", raw.schema)));
    }
    let initial = raw.initial.clone().unwrap_or_default();
    let run = raw.run.clone().unwrap_or_default();
    if let Some(cat) = &raw.catalog {
        if raw.n.is_some() || raw.metric.is_some() || raw.potential.is_some() || !raw.constraints.is_empty() || raw.varnames.is_some() {
            return Err(CliError::validation("catalog: cannot be combined with n, varnames, metric, potential or constraints"));
        }
        let (name, system) = match cat {
            CatalogRef::Name(n) => (n.clone(), CatalogSystem::by_name(n).map_err(|e| CliError::validation(format!("catalog: {e}")))?),
            CatalogRef::Martinet { martinet } => (
                "martinet".to_string(),
                CatalogSystem::Martinet(MartinetSystem::new(martinet.beta).map_err(|e| CliError::validation(format!("catalog.martinet.beta: {e}")))?),
            ),
        };
        let n = geomint::HamiltonianSystem::dim(&system);
        let varnames = default_varnames(n);
        return Ok(LoadedSpec { name: raw.name.unwrap_or(name), system, varnames, initial, run });
    }
    let sys = build_linear(&raw)?;
    let varnames = raw.varnames.clone().unwrap_or_else(|| default_varnames(sys.n()));
    Ok(LoadedSpec {
        name: raw.name.unwrap_or_else(|| "custom".into()),
        system: CatalogSystem::Linear(sys),
        varnames,
        initial,
        run,
    })
}

fn default_varnames(n: usize) -> Vec<String> {
    if n == 3 {
        return vec!["x".into(), "y".into(), "z".into()];
    }
    (1..=n).map(|i| format!("q{i}")).collect()
}

fn expr(text: &str, names: &[String], field: &str) -> Result<Expr, CliError> {
    geomint::parse_expr(text, names).map_err(|e| CliError::validation(format!("{field}: {e}")))
}

fn build_linear(raw: &RawSpec) -> Result<LinearConstraintSystem, CliError> {
    let n = raw.n.ok_or_else(|| CliError::validation("n: missing (or give `catalog`)"))?;
    if n == 0 {
        return Err(CliError::validation("n: must be at least 1"));
    }
    let names = raw.varnames.clone().unwrap_or_else(|| default_varnames(n));
    if names.len() != n {
        return Err(CliError::validation(format!("varnames: expected {n} names, got {}", names.len())));
    }
    let metric = match &raw.metric {
        None => LinearConstraintSystem::identity_metric(n),
        Some(MetricSpec::Named(s)) if s == "identity" => LinearConstraintSystem::identity_metric(n),
        Some(MetricSpec::Named(s)) => return Err(CliError::validation(format!("metric: expected \"identity\" or a matrix, got \"{s}\""))),
        Some(MetricSpec::Matrix(rows)) => {
            if rows.len() != n {
                return Err(CliError::validation(format!("metric: expected {n} rows, got {}", rows.len())));
            }
            let mut out = Vec::with_capacity(n);
            for (i, row) in rows.iter().enumerate() {
                if row.len() != n {
                    return Err(CliError::validation(format!("metric[{i}]: expected {n} entries, got {}", row.len())));
                }
                out.push(
                    row.iter()
                        .enumerate()
                        .map(|(j, s)| expr(s, &names, &format!("metric[{i}][{j}]")))
                        .collect::<Result<Vec<_>, _>>()?,
                );
            }
            out
        }
    };
    let potential = match &raw.potential {
        Some(s) => expr(s, &names, "potential")?,
        None => Expr::num(0.0),
    };
    let constrained: Vec<usize> = raw.constraints.iter().map(|c| c.alpha_index).collect();
    let free: Vec<usize> = (0..n).filter(|i| !constrained.contains(i)).collect();
    let split = IndexSplit::new(n, free, constrained).map_err(|e| CliError::validation(format!("constraints: {e}")))?;
    let mut gamma = Vec::with_capacity(raw.constraints.len());
    for (a, c) in raw.constraints.iter().enumerate() {
        if c.coeffs.len() != split.m() {
            return Err(CliError::validation(format!(
                "constraints[{a}].coeffs: expected {} entries (one per free variable), got {}",
                split.m(),
                c.coeffs.len()
            )));
        }
        gamma.push(
            c.coeffs
                .iter()
                .enumerate()
                .map(|(b, s)| expr(s, &names, &format!("constraints[{a}].coeffs[{b}]")))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    LinearConstraintSystem::new(split, metric, potential, gamma).map_err(|e| CliError::validation(e.to_string()))
}

/// Spec text for a catalog entry, as written by `geomint catalog`.
pub fn catalog_spec(name: &str) -> Result<String, CliError> {
    if !catalog::CATALOG_NAMES.contains(&name) {
        return Err(CliError::validation(format!("unknown catalog system `{name}`")));
    }
    Ok(format!("{{\n  \"schema\": {SCHEMA},\n  \"catalog\": \"{name}\"\n}}\n"))
}
