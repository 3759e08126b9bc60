//! Integrator selection, run settings and the `simulate` loops.

use clap::ValueEnum;
use geomint::continuous::{rk4_step, HamiltonianField, NonholonomicState};
use geomint::dense::norm_inf;
use geomint::discrete::{discrete_constraint, discrete_nonholonomic_step, discrete_vakonomic_step};
use geomint::{CatalogSystem, Discretization, HamiltonianSystem, LinearConstraintSystem, NewtonConfig, PhaseState, Scheme};

use crate::error::CliError;
use crate::output::Sink;
use crate::spec::LoadedSpec;

pub const DEFAULT_H: f64 = 0.1;
pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_SEED: u64 = geomint::diagnostics::DEFAULT_SEED;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Integrator {
    SymplecticEuler,
    Midpoint,
    Verlet,
    OracleRk4,
    VakonomicEuler,
    VakonomicMidpoint,
    NonholonomicDiscrete,
    /// Identity map; a baseline for diagnostics.
    None,
}

impl Integrator {
    pub fn name(self) -> String {
        self.to_possible_value().expect("no skipped variants").get_name().to_string()
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        <Self as ValueEnum>::from_str(s, false).map_err(|_| {
            let known: Vec<String> = Self::value_variants().iter().map(|v| v.name()).collect();
            CliError::validation(format!("run.integrator: unknown integrator \"{s}\" (known: {})", known.join(", ")))
        })
    }

    pub fn scheme(self) -> Option<Scheme> {
        match self {
            Integrator::SymplecticEuler => Some(Scheme::SymplecticEuler),
            Integrator::Midpoint => Some(Scheme::Midpoint),
            Integrator::Verlet => Some(Scheme::StormerVerlet),
            _ => None,
        }
    }

    pub fn discretization(self) -> Option<Discretization> {
        match self {
            Integrator::VakonomicEuler => Some(Discretization::Euler),
            Integrator::VakonomicMidpoint => Some(Discretization::Midpoint),
            _ => None,
        }
    }

    /// Nominal order of accuracy; `None` for the identity stub.
    pub fn order(self) -> Option<u32> {
        match self {
            Integrator::SymplecticEuler | Integrator::VakonomicEuler | Integrator::NonholonomicDiscrete => Some(1),
            Integrator::Midpoint | Integrator::Verlet | Integrator::VakonomicMidpoint => Some(2),
            Integrator::OracleRk4 => Some(4),
            Integrator::None => None,
        }
    }

    /// Whether the integrator is a map on `(q, p)`.
    pub fn is_phase_map(self) -> bool {
        self != Integrator::NonholonomicDiscrete
    }
}

/// Command-line values that take precedence over the spec's `run` section.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub integrator: Option<Integrator>,
    pub h: Option<f64>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct Settings {
    pub integrator: Integrator,
    pub h: f64,
    pub steps: usize,
    pub seed: u64,
    pub newton: NewtonConfig,
}

impl Settings {
    pub fn resolve(spec: &LoadedSpec, cli: &Overrides, default: Integrator) -> Result<Self, CliError> {
        let integrator = match (cli.integrator, &spec.run.integrator) {
            (Some(i), _) => i,
            (None, Some(s)) => Integrator::parse(s)?,
            (None, None) => default,
        };
        let h = cli.h.or(spec.run.h).unwrap_or(DEFAULT_H);
        if !(h > 0.0 && h.is_finite()) {
            return Err(CliError::validation(format!("h: must be positive and finite, got {h}")));
        }
        let steps = cli.steps.or(spec.run.steps).unwrap_or(DEFAULT_STEPS);
        if steps == 0 {
            return Err(CliError::validation("steps: must be at least 1"));
        }
        let seed = cli.seed.or(spec.run.seed).unwrap_or(DEFAULT_SEED);
        let mut newton = NewtonConfig::from_env().map_err(|e| CliError::validation(e.to_string()))?;
        if let Some(o) = &spec.run.newton {
            newton = o.apply(newton)?;
        }
        if integrator.discretization().is_some() || integrator == Integrator::NonholonomicDiscrete {
            spec.linear(&integrator.name())?;
        }
        Ok(Settings { integrator, h, steps, seed, newton })
    }
}

fn default_q(n: usize) -> Vec<f64> {
    match n {
        1 => vec![1.0],
        3 => vec![0.1, 0.2, 0.0],
        _ => (0..n).map(|i| 0.1 * (i + 1) as f64).collect(),
    }
}

fn default_p(n: usize) -> Vec<f64> {
    match n {
        1 => vec![0.0],
        3 => vec![0.5, -0.3, 0.4],
        _ => (0..n).map(|i| if i % 2 == 0 { 0.5 } else { -0.25 } / (i / 2 + 1) as f64).collect(),
    }
}

fn check_len(field: &str, v: &[f64], n: usize) -> Result<(), CliError> {
    if v.len() != n {
        return Err(CliError::validation(format!("{field}: expected {n} entries, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CliError::validation(format!("{field}: entries must be finite")));
    }
    Ok(())
}

/// `(q, p)` from the spec's `initial` block, with defaults.
pub fn initial_phase(spec: &LoadedSpec) -> Result<PhaseState, CliError> {
    let n = spec.system.dim();
    let q = spec.initial.q.clone().unwrap_or_else(|| default_q(n));
    let p = spec.initial.p.clone().unwrap_or_else(|| default_p(n));
    check_len("initial.q", &q, n)?;
    check_len("initial.p", &p, n)?;
    Ok(PhaseState { q, p })
}

/// On-constraint `(q, v)`: `initial.v` when given, else `∂H/∂p` at the
/// initial `(q, p)`.
pub fn initial_tangent(spec: &LoadedSpec, sys: &LinearConstraintSystem) -> Result<NonholonomicState, CliError> {
    let s = initial_phase(spec)?;
    let v = match &spec.initial.v {
        Some(v) => {
            check_len("initial.v", v, sys.n())?;
            v.clone()
        }
        None => sys.gradient(&s.q, &s.p)?.1,
    };
    NonholonomicState::new(sys, s.q, v).map_err(|e| CliError::validation(format!("initial.v: {e}")))
}

/// One step of a phase-space integrator: next state, multipliers (empty
/// unless vakonomic), and the discrete constraint residual when defined.
pub struct PhaseOutcome {
    pub state: PhaseState,
    pub lambda: Vec<f64>,
    pub discrete_residual: Option<f64>,
}

pub fn phase_step(
    integrator: Integrator,
    sys: &CatalogSystem,
    s: &PhaseState,
    h: f64,
    cfg: &NewtonConfig,
) -> geomint::Result<PhaseOutcome> {
    let plain = |state| PhaseOutcome { state, lambda: Vec::new(), discrete_residual: None };
    if let Some(scheme) = integrator.scheme() {
        return Ok(plain(scheme.step(sys, s, h, cfg)?));
    }
    if let Some(disc) = integrator.discretization() {
        let lin = sys
            .as_linear()
            .ok_or_else(|| geomint::Error::InvalidSystem("vakonomic steps need a linear constraint system".into()))?;
        let st = discrete_vakonomic_step(lin, &s.q, &s.p, disc, h, None, cfg)?;
        return Ok(PhaseOutcome {
            state: PhaseState { q: st.q1, p: st.p1 },
            lambda: st.lambda1,
            discrete_residual: Some(st.constraint_residual),
        });
    }
    match integrator {
        Integrator::OracleRk4 => Ok(plain(PhaseState::from_slice(&rk4_step(&HamiltonianField(sys), &s.to_vec(), h)?))),
        Integrator::None => Ok(plain(s.clone())),
        _ => Err(geomint::Error::InvalidSystem(format!("{} is not a phase-space map", integrator.name()))),
    }
}

/// `‖φ(q, ∂H/∂p)‖∞`
pub fn phase_constraint_residual(sys: &CatalogSystem, s: &PhaseState) -> geomint::Result<f64> {
    let (_, v) = sys.gradient(&s.q, &s.p)?;
    Ok(norm_inf(&sys.velocity_constraint(&s.q, &v)?))
}

/// `½ gvv + V`
pub fn tangent_energy(sys: &LinearConstraintSystem, q: &[f64], v: &[f64]) -> geomint::Result<f64> {
    Ok(0.5 * sys.metric(q)?.bilinear(v, v) + sys.potential(q)?)
}

fn names(prefix: &str, k: usize) -> impl Iterator<Item = String> + '_ {
    (1..=k).map(move |i| format!("{prefix}{i}"))
}

fn check_finite(step: usize, xs: &[f64]) -> geomint::Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(geomint::Error::NonFinite { step });
    }
    Ok(())
}

/// Runs the configured integrator and streams rows into `sink`. A numerical
/// failure after the header writes a failure record and maps to exit 2.
pub fn simulate(spec: &LoadedSpec, set: &Settings, sink: &mut dyn Sink) -> Result<(), CliError> {
    if set.integrator == Integrator::NonholonomicDiscrete {
        simulate_nonholonomic(spec, set, sink)
    } else {
        simulate_phase(spec, set, sink)
    }
}

fn fail(sink: &mut dyn Sink, step: usize, e: geomint::Error) -> CliError {
    let err = CliError::from(e);
    let msg = err.to_string();
    match sink.failure(step, &msg) {
        Ok(()) => err,
        Err(io) => CliError::io(io.to_string()),
    }
}

fn simulate_phase(spec: &LoadedSpec, set: &Settings, sink: &mut dyn Sink) -> Result<(), CliError> {
    let sys = &spec.system;
    let n = sys.dim();
    let k = match set.integrator.discretization() {
        Some(_) => spec.linear("vakonomic integration")?.split().k(),
        None => 0,
    };
    let mut s = initial_phase(spec)?;
    let h0 = sys.hamiltonian(&s.q, &s.p)?;
    let r0 = phase_constraint_residual(sys, &s)?;

    let mut cols = vec!["t".to_string()];
    cols.extend(names("q", n));
    cols.extend(names("p", n));
    cols.extend(names("lambda", k));
    cols.extend(["H", "drift", "constraint_residual"].map(String::from));
    sink.header(&cols)?;
    let row = |t: f64, s: &PhaseState, lambda: &[f64], hval: f64, res: f64| -> Vec<f64> {
        let mut r = vec![t];
        r.extend(&s.q);
        r.extend(&s.p);
        r.extend(lambda);
        r.extend([hval, hval - h0, res]);
        r
    };
    sink.row(&row(0.0, &s, &vec![f64::NAN; k], h0, r0))?;
    for step in 1..=set.steps {
        let out = phase_step(set.integrator, sys, &s, set.h, &set.newton)
            .and_then(|o| check_finite(step, &o.state.to_vec()).map(|_| o))
            .and_then(|o| {
                let hval = sys.hamiltonian(&o.state.q, &o.state.p)?;
                let res = match o.discrete_residual {
                    Some(r) => r,
                    None => phase_constraint_residual(sys, &o.state)?,
                };
                Ok((o, hval, res))
            });
        let (o, hval, res) = match out {
            Ok(v) => v,
            Err(e) => return Err(fail(sink, step, e)),
        };
        sink.row(&row(step as f64 * set.h, &o.state, &o.lambda, hval, res))?;
        s = o.state;
    }
    sink.finish()?;
    Ok(())
}

fn simulate_nonholonomic(spec: &LoadedSpec, set: &Settings, sink: &mut dyn Sink) -> Result<(), CliError> {
    let sys = spec.linear("nonholonomic integration")?;
    let (n, k) = (sys.n(), sys.split().k());
    let start = initial_tangent(spec, sys)?;
    let e0 = tangent_energy(sys, &start.q, &start.v)?;
    let r0 = norm_inf(&sys.constraint(&start.q, &start.v)?);

    let mut cols = vec!["t".to_string()];
    cols.extend(names("q", n));
    cols.extend(names("v", n));
    cols.extend(names("lambda", k));
    cols.extend(["H", "drift", "constraint_residual"].map(String::from));
    sink.header(&cols)?;
    let row = |t: f64, q: &[f64], v: &[f64], lambda: &[f64], e: f64, res: f64| -> Vec<f64> {
        let mut r = vec![t];
        r.extend(q);
        r.extend(v);
        r.extend(lambda);
        r.extend([e, e - e0, res]);
        r
    };
    sink.row(&row(0.0, &start.q, &start.v, &vec![f64::NAN; k], e0, r0))?;

    let h = set.h;
    // the first pair comes from the initial velocity; φ_d vanishes on it exactly
    let q1: Vec<f64> = start.q.iter().zip(&start.v).map(|(q, v)| q + h * v).collect();
    let mut prev = start.q.clone();
    let mut cur = q1;
    let mut lambda = vec![f64::NAN; k];
    let mut guess: Option<Vec<f64>> = None;
    for step in 1..=set.steps {
        if step > 1 {
            match discrete_nonholonomic_step(sys, &prev, &cur, h, guess.as_deref(), &set.newton)
                .and_then(|(qn, l)| check_finite(step, &qn).map(|_| (qn, l)))
            {
                Ok((qn, l)) => {
                    prev = std::mem::replace(&mut cur, qn);
                    guess = Some(l.clone());
                    lambda = l;
                }
                Err(e) => return Err(fail(sink, step, e)),
            }
        }
        let v: Vec<f64> = cur.iter().zip(&prev).map(|(a, b)| (a - b) / h).collect();
        let vals = tangent_energy(sys, &cur, &v)
            .and_then(|e| Ok((e, norm_inf(&discrete_constraint(sys, &prev, &cur, Discretization::Euler)?))));
        let (e, res) = match vals {
            Ok(x) => x,
            Err(err) => return Err(fail(sink, step, err)),
        };
        sink.row(&row(step as f64 * h, &cur, &v, &lambda, e, res))?;
    }
    sink.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::parse;

    #[test]
    fn integrator_names_round_trip() {
        for v in Integrator::value_variants() {
            assert_eq!(Integrator::parse(&v.name()).unwrap(), *v);
        }
        assert_eq!(Integrator::OracleRk4.name(), "oracle_rk4");
        assert!(Integrator::parse("leapfrog").is_err());
    }

    #[test]
    fn settings_precedence_and_validation() {
        let spec = parse(r#"{"schema": 1, "catalog": "oscillator", "run": {"integrator": "midpoint", "h": 0.05, "steps": 7}}"#).unwrap();
        let s = Settings::resolve(&spec, &Overrides::default(), Integrator::Verlet).unwrap();
        assert_eq!((s.integrator, s.h, s.steps, s.seed), (Integrator::Midpoint, 0.05, 7, DEFAULT_SEED));
        let o = Overrides { integrator: Some(Integrator::Verlet), h: Some(0.2), ..Default::default() };
        let s = Settings::resolve(&spec, &o, Integrator::None).unwrap();
        assert_eq!((s.integrator, s.h), (Integrator::Verlet, 0.2));
        let bad = Overrides { h: Some(-1.0), ..Default::default() };
        assert_eq!(Settings::resolve(&spec, &bad, Integrator::Verlet).unwrap_err().code(), 1);
        let bad = Overrides { steps: Some(0), ..Default::default() };
        assert!(Settings::resolve(&spec, &bad, Integrator::Verlet).is_err());
    }

    #[test]
    fn initial_lengths_are_checked() {
        let spec = parse(r#"{"schema": 1, "catalog": "free", "initial": {"q": [1, 2, 3]}}"#).unwrap();
        assert!(initial_phase(&spec).unwrap_err().to_string().contains("initial.q"));
    }

    #[test]
    fn identity_integrator_keeps_state() {
        let sys = CatalogSystem::by_name("heisenberg").unwrap();
        let s = PhaseState { q: vec![0.1, 0.2, 0.3], p: vec![1.0, 2.0, 3.0] };
        let o = phase_step(Integrator::None, &sys, &s, 0.1, &NewtonConfig::default()).unwrap();
        assert_eq!(o.state, s);
    }
}
