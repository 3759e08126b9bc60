//! `compare` and `diagnose` reports.

use geomint::compare::{common_solution_scan, curvature, discrete_common_solution_check, MuFit};
use geomint::continuous::{oracle_endpoint, oracle_integrate, NonholonomicField, NonholonomicState};
use geomint::dense::{max_abs_diff, norm_inf};
use geomint::diagnostics::{
    convergence_order, fit_slope, random_states, reversibility_defect, symplecticity_defect, DiagnosticReport,
    DEFAULT_FD_STEP, REFERENCE_REFINEMENT,
};
use geomint::discrete::{discrete_constraint, discrete_nonholonomic_step};
use geomint::{Discretization, HamiltonianSystem, LinearConstraintSystem, NewtonConfig, PhaseState};
use serde_json::{json, Value};

use crate::error::CliError;
use crate::output::fmt_value;
use crate::run::{initial_phase, initial_tangent, phase_step, tangent_energy, Integrator, Settings};
use crate::spec::{LoadedSpec, SCHEMA};

/// Random states per symplecticity check.
pub const DEFECT_STATES: usize = 10;
pub const DEFECT_TOL: f64 = 1e-5;
pub const IDENTITY_DEFECT_TOL: f64 = 1e-9;
pub const ORDER_TOL: f64 = 0.1;
pub const RK4_ORDER_TOL: f64 = 0.2;
pub const REVERSIBILITY_TOL: f64 = 1e-11;
/// Energy drift passes below `DRIFT_FACTOR · h^order · max(1, |H₀|)`.
pub const DRIFT_FACTOR: f64 = 10.0;
const ORDER_T: f64 = 1.0;
const ORDER_HS: [f64; 3] = [0.02, 0.01, 0.005];
const RK4_ORDER_HS: [f64; 3] = [0.1, 0.05, 0.025];

fn report_json(r: &DiagnosticReport) -> Value {
    json!({
        "name": r.name,
        "value": r.value,
        "tolerance": r.tolerance,
        "pass": r.pass,
        "context": r.context,
    })
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_value(x)).collect::<Vec<_>>().join(" ")
}

fn constrained(spec: &LoadedSpec) -> Result<&LinearConstraintSystem, CliError> {
    match spec.system.as_linear() {
        Some(s) if s.split().k() > 0 => Ok(s),
        Some(_) => Err(CliError::validation(format!("compare requires constraints; `{}` has none", spec.name))),
        None => Err(CliError::validation(format!("compare requires constraints in linear form; `{}` has none", spec.name))),
    }
}

pub fn compare(spec: &LoadedSpec, set: &Settings) -> Result<Value, CliError> {
    let sys = constrained(spec)?;
    let start = initial_tangent(spec, sys)?;
    let x0: Vec<f64> = start.q.iter().chain(&start.v).copied().collect();
    let traj = oracle_integrate(&NonholonomicField(sys), &x0, set.h, set.steps)?;
    let scan = common_solution_scan(sys, &traj, &MuFit::Propagated)?;
    let r0 = curvature(sys, &start.q)?;

    let series: Vec<Value> = scan
        .samples
        .iter()
        .map(|s| json!({ "t": s.t, "residual": s.residual, "mu": s.mu }))
        .collect();
    let discrete = if set.steps >= 2 {
        let q1: Vec<f64> = start.q.iter().zip(&start.v).map(|(q, v)| q + set.h * v).collect();
        let d = discrete_common_solution_check(sys, &start.q, &q1, set.h, &set.newton)?;
        json!({
            "residual": d.residual,
            "tolerance": d.tolerance,
            "verdict": verdict(d.common),
            "lambda": d.lambda,
            "mu_prev": d.mu_prev,
            "mu_next": d.mu_next,
            "seed_constraint": d.seed_constraint,
        })
    } else {
        Value::Null
    };
    Ok(json!({
        "schema": SCHEMA,
        "command": "compare",
        "system": spec.name,
        "variables": spec.varnames,
        "h": set.h,
        "steps": set.steps,
        "curvature": {
            "max_abs": scan.max_curvature,
            "at_initial": r0.r.iter().map(|m| (0..m.rows()).map(|a| (0..m.cols()).map(|b| m[(a, b)]).collect::<Vec<_>>()).collect::<Vec<_>>()).collect::<Vec<_>>(),
        },
        "mu_fit": "least-squares fit of the initial multiplier, propagated along the trajectory",
        "mu0": scan.mu0,
        "fit_residual": scan.fit_residual,
        "curvature_residual": scan.curvature_residual,
        "tolerance": scan.tolerance,
        "verdict": verdict(scan.common),
        "series": series,
        "discrete": discrete,
    }))
}

fn verdict(common: bool) -> &'static str {
    if common {
        "common"
    } else {
        "not common"
    }
}

pub fn diagnose(spec: &LoadedSpec, set: &Settings) -> Result<Value, CliError> {
    let reports = if set.integrator.is_phase_map() {
        diagnose_phase(spec, set)?
    } else {
        diagnose_nonholonomic(spec, set)?
    };
    Ok(json!({
        "schema": SCHEMA,
        "command": "diagnose",
        "system": spec.name,
        "variables": spec.varnames,
        "integrator": set.integrator.name(),
        "h": set.h,
        "steps": set.steps,
        "seed": set.seed,
        "reports": reports.iter().map(report_json).collect::<Vec<_>>(),
    }))
}

fn drift_tolerance(h: f64, order: Option<u32>, h0: f64) -> f64 {
    match order {
        Some(p) => DRIFT_FACTOR * h.powi(p as i32) * h0.abs().max(1.0),
        None => 1e-12,
    }
}

fn diagnose_phase(spec: &LoadedSpec, set: &Settings) -> Result<Vec<DiagnosticReport>, CliError> {
    let sys = &spec.system;
    let integ = set.integrator;
    let cfg = set.newton;
    let step = |s: &PhaseState, h: f64| phase_step(integ, sys, s, h, &cfg).map(|o| o.state);
    let mut out = Vec::new();

    let pole = sys.as_martinet().map(|m| m.beta);
    let mut worst = 0.0f64;
    for s in random_states(sys.dim(), DEFECT_STATES, set.seed, pole) {
        worst = worst.max(symplecticity_defect(step, &s, set.h, DEFAULT_FD_STEP)?);
    }
    let tol = if integ == Integrator::None { IDENTITY_DEFECT_TOL } else { DEFECT_TOL };
    out.push(
        DiagnosticReport::new("symplecticity_defect", worst, tol)
            .with("states", DEFECT_STATES)
            .with("fd_step", fmt_value(DEFAULT_FD_STEP)),
    );

    let start = initial_phase(spec)?;
    if let Some(order) = integ.order() {
        let (hs, otol) = if integ == Integrator::OracleRk4 { (RK4_ORDER_HS, RK4_ORDER_TOL) } else { (ORDER_HS, ORDER_TOL) };
        let fit = convergence_order(step, sys, &start, ORDER_T, &hs)?;
        out.push(
            DiagnosticReport::new("convergence_order", (fit.slope - order as f64).abs(), otol)
                .with("slope", fmt_value(fit.slope))
                .with("expected", order)
                .with("h", list(&fit.hs))
                .with("errors", list(&fit.errors))
                .with("T", fmt_value(ORDER_T)),
        );
    }

    let h0 = sys.hamiltonian(&start.q, &start.p)?;
    let mut s = start.clone();
    let (mut max_drift, mut final_drift, mut max_res) = (0.0f64, 0.0, 0.0f64);
    for _ in 0..set.steps {
        let o = phase_step(integ, sys, &s, set.h, &cfg)?;
        final_drift = (sys.hamiltonian(&o.state.q, &o.state.p)? - h0).abs();
        max_drift = max_drift.max(final_drift);
        if let Some(r) = o.discrete_residual {
            max_res = max_res.max(r);
        }
        s = o.state;
    }
    out.push(
        DiagnosticReport::new("energy_drift", max_drift, drift_tolerance(set.h, integ.order(), h0))
            .with("final", fmt_value(final_drift))
            .with("H0", fmt_value(h0)),
    );
    if integ.discretization().is_some() {
        out.push(DiagnosticReport::new("constraint_residual", max_res, cfg.tol).with("kind", "discrete"));
    }
    if let Some(scheme) = integ.scheme().filter(|s| s.order() == 2) {
        let d = reversibility_defect(|s: &PhaseState, h| scheme.step_signed(sys, s, h, &cfg), &start, set.h)?;
        out.push(DiagnosticReport::new("reversibility", d, REVERSIBILITY_TOL));
    }
    Ok(out)
}

/// Configurations after `steps` discrete nonholonomic steps, seeded with
/// `q₁ = q₀ + h v₀`.
fn nonholonomic_endpoint(
    sys: &LinearConstraintSystem,
    start: &NonholonomicState,
    h: f64,
    steps: usize,
    cfg: &NewtonConfig,
    mut visit: impl FnMut(&[f64], &[f64]) -> geomint::Result<()>,
) -> geomint::Result<Vec<f64>> {
    let mut prev = start.q.clone();
    let mut cur: Vec<f64> = start.q.iter().zip(&start.v).map(|(q, v)| q + h * v).collect();
    visit(&prev, &cur)?;
    let mut guess: Option<Vec<f64>> = None;
    for _ in 1..steps {
        let (next, l) = discrete_nonholonomic_step(sys, &prev, &cur, h, guess.as_deref(), cfg)?;
        guess = Some(l);
        prev = std::mem::replace(&mut cur, next);
        visit(&prev, &cur)?;
    }
    Ok(cur)
}

fn diagnose_nonholonomic(spec: &LoadedSpec, set: &Settings) -> Result<Vec<DiagnosticReport>, CliError> {
    let sys = spec.linear("nonholonomic diagnostics")?;
    let start = initial_tangent(spec, sys)?;
    let cfg = set.newton;
    let n = sys.n();
    let mut out = Vec::new();

    let ref_steps = (ORDER_T / ORDER_HS[2]).round() as usize * REFERENCE_REFINEMENT as usize;
    let x0: Vec<f64> = start.q.iter().chain(&start.v).copied().collect();
    let reference = oracle_endpoint(&NonholonomicField(sys), &x0, ORDER_T / ref_steps as f64, ref_steps)?;
    let mut errors = Vec::new();
    for h in ORDER_HS {
        let steps = (ORDER_T / h).round() as usize;
        let q = nonholonomic_endpoint(sys, &start, h, steps, &cfg, |_, _| Ok(()))?;
        errors.push(max_abs_diff(&q, &reference[..n]));
    }
    let slope = fit_slope(&ORDER_HS, &errors);
    out.push(
        DiagnosticReport::new("convergence_order", (slope - 1.0).abs(), ORDER_TOL)
            .with("slope", fmt_value(slope))
            .with("expected", 1)
            .with("h", list(&ORDER_HS))
            .with("errors", list(&errors))
            .with("compared", "q"),
    );

    let e0 = tangent_energy(sys, &start.q, &start.v)?;
    let (mut max_drift, mut final_drift, mut max_res) = (0.0f64, 0.0, 0.0f64);
    let h = set.h;
    nonholonomic_endpoint(sys, &start, h, set.steps, &cfg, |prev, cur| {
        let v: Vec<f64> = cur.iter().zip(prev).map(|(a, b)| (a - b) / h).collect();
        final_drift = (tangent_energy(sys, cur, &v)? - e0).abs();
        max_drift = max_drift.max(final_drift);
        max_res = max_res.max(norm_inf(&discrete_constraint(sys, prev, cur, Discretization::Euler)?));
        Ok(())
    })?;
    out.push(
        DiagnosticReport::new("energy_drift", max_drift, drift_tolerance(h, Some(1), e0))
            .with("final", fmt_value(final_drift))
            .with("H0", fmt_value(e0)),
    );
    out.push(DiagnosticReport::new("constraint_residual", max_res, cfg.tol).with("kind", "discrete"));
    Ok(out)
}
