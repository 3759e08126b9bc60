//! Quantitative checks on integrators and trajectories.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::continuous::{oracle_endpoint, HamiltonianField};
use crate::dense::Mat;
use crate::discrete::{discrete_constraint, Discretization};
use crate::error::{Error, Result};
use crate::hamiltonian::{canonical_field, HamiltonianSystem};
use crate::linsys::LinearConstraintSystem;
use crate::state::{PhaseState, Trajectory};

pub const DEFAULT_FD_STEP: f64 = 1e-6;
pub const DEFAULT_SEED: u64 = 20_240_611;
/// Sampling box for random states: `|q_i|, |p_i| ≤ STATE_RANGE`.
pub const STATE_RANGE: f64 = 2.0;
/// Minimum `|1 + βx|` for random Martinet states.
pub const POLE_CLEARANCE: f64 = 0.5;
/// Reference step of [`convergence_order`] is the smallest tested step over this.
pub const REFERENCE_REFINEMENT: f64 = 16.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticReport {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub context: BTreeMap<String, String>,
}

impl DiagnosticReport {
    /// `pass` is derived, so it always agrees with `value ≤ tolerance`.
    pub fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        DiagnosticReport {
            name: name.into(),
            value,
            tolerance,
            pass: value <= tolerance,
            context: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.context.insert(key.into(), value.to_string());
        self
    }
}

/// Canonical symplectic matrix `[[0, I], [−I, 0]]`.
pub fn canonical_j(n: usize) -> Mat<f64> {
    Mat::from_fn(2 * n, 2 * n, |i, j| {
        if i < n && j == i + n {
            1.0
        } else if i >= n && j + n == i {
            -1.0
        } else {
            0.0
        }
    })
}

/// Central-difference Jacobian of a one-step map on `[q; p]`.
pub fn step_jacobian<F>(step: &F, state: &PhaseState, h: f64, fd_step: f64) -> Result<Mat<f64>>
where
    F: Fn(&PhaseState, f64) -> Result<PhaseState>,
{
    if !(fd_step > 0.0) {
        return Err(Error::InvalidStep(fd_step));
    }
    let x = state.to_vec();
    let d = x.len();
    let mut jac = Mat::zeros(d, d);
    for j in 0..d {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += fd_step;
        xm[j] -= fd_step;
        let fp = step(&PhaseState::from_slice(&xp), h)?.to_vec();
        let fm = step(&PhaseState::from_slice(&xm), h)?.to_vec();
        for i in 0..d {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * fd_step);
        }
    }
    Ok(jac)
}

/// `‖DΦᵀ J DΦ − J‖∞` (max-abs entry) with `DΦ` from central differences of
/// the whole step, inner Newton solve included.
pub fn symplecticity_defect<F>(step: F, state: &PhaseState, h: f64, fd_step: f64) -> Result<f64>
where
    F: Fn(&PhaseState, f64) -> Result<PhaseState>,
{
    let dphi = step_jacobian(&step, state, h, fd_step)?;
    let j = canonical_j(state.dim());
    let pull = dphi.transpose().matmul(&j).matmul(&dphi);
    Ok(pull.sub(&j).max_abs())
}

/// Explicit Euler on the canonical field. Not symplectic; used as a control.
pub fn explicit_euler_step<S: HamiltonianSystem>(sys: &S, state: &PhaseState, h: f64) -> Result<PhaseState> {
    let (qd, pd) = canonical_field(sys, &state.q, &state.p)?;
    Ok(PhaseState {
        q: state.q.iter().zip(&qd).map(|(q, d)| q + h * d).collect(),
        p: state.p.iter().zip(&pd).map(|(p, d)| p + h * d).collect(),
    })
}

/// `‖Φ₋ₕ(Φₕ(x)) − x‖∞` for a step that accepts signed `h`.
pub fn reversibility_defect<F>(step: F, state: &PhaseState, h: f64) -> Result<f64>
where
    F: Fn(&PhaseState, f64) -> Result<PhaseState>,
{
    let back = step(&step(state, h)?, -h)?;
    Ok(crate::dense::max_abs_diff(&back.to_vec(), &state.to_vec()))
}

/// Max and final `|H(t) − H(0)|` along a trajectory with `q`, `p` columns.
pub fn energy_drift<S: HamiltonianSystem>(sys: &S, traj: &Trajectory) -> Result<(f64, f64)> {
    let series = energy_series(sys, traj)?;
    let Some(&h0) = series.first() else {
        return Ok((0.0, 0.0));
    };
    let devs: Vec<f64> = series.iter().map(|h| (h - h0).abs()).collect();
    let max = devs.iter().cloned().fold(0.0, f64::max);
    Ok((max, *devs.last().unwrap()))
}

pub fn energy_series<S: HamiltonianSystem>(sys: &S, traj: &Trajectory) -> Result<Vec<f64>> {
    let q = traj.column("q")?;
    let p = traj.column("p")?;
    (0..traj.len()).map(|i| sys.hamiltonian(q.row(i), p.row(i))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualKind {
    /// `φ(q, v)` on each sample; needs a full-width `v` column.
    Continuous,
    /// `φ_d(q_k, q_{k+1})` on consecutive samples.
    Discrete(Discretization),
}

/// Max over samples of `‖φ‖∞`.
pub fn constraint_residual(sys: &LinearConstraintSystem, traj: &Trajectory, kind: ResidualKind) -> Result<f64> {
    let q = traj.column("q")?;
    let mut worst = 0.0f64;
    match kind {
        ResidualKind::Continuous => {
            let v = traj.column("v")?;
            if v.width != sys.n() {
                return Err(Error::Dimension { expected: sys.n(), got: v.width });
            }
            for i in 0..traj.len() {
                worst = worst.max(crate::dense::norm_inf(&sys.constraint(q.row(i), v.row(i))?));
            }
        }
        ResidualKind::Discrete(disc) => {
            for i in 1..traj.len() {
                let phi = discrete_constraint(sys, q.row(i - 1), q.row(i), disc)?;
                worst = worst.max(crate::dense::norm_inf(&phi));
            }
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceFit {
    pub slope: f64,
    pub hs: Vec<f64>,
    pub errors: Vec<f64>,
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn step_count(t_end: f64, h: f64) -> Result<usize> {
    if !(h > 0.0) {
        return Err(Error::InvalidStep(h));
    }
    let steps = (t_end / h).round();
    if steps < 1.0 || (steps * h - t_end).abs() > 1e-9 * t_end.abs().max(1.0) {
        return Err(Error::InvalidSystem(format!("step {h} does not divide T = {t_end}")));
    }
    Ok(steps as usize)
}

/// Empirical order of `step` on `sys`: endpoint errors at `T` against an RK4
/// reference run at `min(h_list) / REFERENCE_REFINEMENT`.
pub fn convergence_order<S, F>(step: F, sys: &S, state: &PhaseState, t_end: f64, h_list: &[f64]) -> Result<ConvergenceFit>
where
    S: HamiltonianSystem,
    F: Fn(&PhaseState, f64) -> Result<PhaseState>,
{
    if h_list.len() < 3 {
        return Err(Error::InvalidSystem(format!("need at least 3 step sizes, got {}", h_list.len())));
    }
    let counts = h_list.iter().map(|&h| step_count(t_end, h)).collect::<Result<Vec<_>>>()?;
    let h_min = h_list.iter().cloned().fold(f64::INFINITY, f64::min);
    let ref_steps = step_count(t_end, h_min)? * REFERENCE_REFINEMENT as usize;
    let reference = oracle_endpoint(&HamiltonianField(sys), &state.to_vec(), t_end / ref_steps as f64, ref_steps)?;
    let mut errors = Vec::with_capacity(h_list.len());
    for (&h, &steps) in h_list.iter().zip(&counts) {
        let mut x = state.clone();
        for _ in 0..steps {
            x = step(&x, h)?;
        }
        errors.push(crate::dense::max_abs_diff(&x.to_vec(), &reference));
    }
    Ok(ConvergenceFit { slope: fit_slope(h_list, &errors), hs: h_list.to_vec(), errors })
}

/// Reproducible random phase states in the box `|q_i|, |p_i| ≤ STATE_RANGE`.
///
/// With `pole = Some(β)`, `x = q_0` is redrawn until `|1 + βx| ≥ POLE_CLEARANCE`.
pub fn random_states(dim: usize, count: usize, seed: u64, pole: Option<f64>) -> Vec<PhaseState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| rng.gen_range(-STATE_RANGE..=STATE_RANGE);
    (0..count)
        .map(|_| {
            let mut q: Vec<f64> = (0..dim).map(|_| draw(&mut rng)).collect();
            let p: Vec<f64> = (0..dim).map(|_| draw(&mut rng)).collect();
            if let (Some(beta), true) = (pole, dim > 0) {
                while (1.0 + beta * q[0]).abs() < POLE_CLEARANCE {
                    q[0] = draw(&mut rng);
                }
            }
            PhaseState { q, p }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::continuous::{oracle_integrate, rk4_step, NonholonomicField};
    use crate::discrete::{NewtonConfig, Scheme};
    use crate::martinet::MartinetSystem;

    fn rotation(s: &PhaseState, h: f64) -> Result<PhaseState> {
        let (c, sn) = (h.cos(), h.sin());
        Ok(PhaseState { q: vec![c * s.q[0] + sn * s.p[0]], p: vec![-sn * s.q[0] + c * s.p[0]] })
    }

    fn osc0() -> PhaseState {
        PhaseState { q: vec![1.0], p: vec![0.0] }
    }

    #[test]
    fn report_pass_tracks_tolerance() {
        assert!(DiagnosticReport::new("a", 1.0, 1.0).pass);
        assert!(!DiagnosticReport::new("a", 1.5, 1.0).pass);
        assert!(!DiagnosticReport::new("a", f64::NAN, 1.0).pass);
    }

    #[test]
    fn exact_flow_and_identity_are_symplectic() {
        assert!(symplecticity_defect(rotation, &osc0(), 0.1, 1e-6).unwrap() <= 1e-9);
        let s = PhaseState { q: vec![0.3, -1.0, 0.2], p: vec![0.5, 0.1, -0.7] };
        assert!(symplecticity_defect(|s: &PhaseState, _| Ok(s.clone()), &s, 0.1, 1e-6).unwrap() <= 1e-9);
    }

    #[test]
    fn explicit_euler_defect_is_h_squared() {
        let osc = catalog::oscillator();
        let d = symplecticity_defect(|s: &PhaseState, h| explicit_euler_step(&osc, s, h), &osc0(), 0.1, 1e-6).unwrap();
        assert!((d - 0.01).abs() <= 1e-3, "{d}");
    }

    #[test]
    fn symplectic_euler_on_martinet() {
        let m = MartinetSystem::default();
        let cfg = NewtonConfig::default();
        let s = PhaseState { q: vec![0.2, -0.3, 0.1], p: vec![0.4, 0.6, -0.5] };
        let d = symplecticity_defect(|s: &PhaseState, h| Scheme::SymplecticEuler.step(&m, s, h, &cfg), &s, 0.1, 1e-6).unwrap();
        assert!(d <= 1e-5, "{d}");
    }

    #[test]
    fn energy_drift_examples() {
        let osc = catalog::oscillator();
        let mut exact = Trajectory::new(&[("q", 1), ("p", 1)]);
        for i in 0..50 {
            let s = rotation(&osc0(), i as f64 * 0.1).unwrap();
            exact.push(i as f64 * 0.1, &[&s.q, &s.p]).unwrap();
        }
        assert!(energy_drift(&osc, &exact).unwrap().0 <= 1e-15);

        let rk = oracle_integrate(&HamiltonianField(&osc), &[1.0, 0.0], 1e-3, 1000).unwrap();
        assert!(energy_drift(&osc, &rk).unwrap().0 <= 1e-8);

        let cfg = NewtonConfig::default();
        let mut s = osc0();
        let h0 = osc.hamiltonian(&s.q, &s.p).unwrap();
        let mut early = 0.0f64;
        let mut last = 0.0;
        for i in 1..=10_000 {
            s = Scheme::StormerVerlet.step(&osc, &s, 0.1, &cfg).unwrap();
            last = (osc.hamiltonian(&s.q, &s.p).unwrap() - h0).abs();
            if i <= 100 {
                early = early.max(last);
            }
        }
        assert!(last <= 2.0 * early, "{last} vs {early}");
    }

    #[test]
    fn constraint_residual_examples() {
        let sys = catalog::heisenberg();
        let x0 = [0.1, 0.2, 0.0, 1.0, 0.5, 0.2];
        let traj = oracle_integrate(&NonholonomicField(&sys), &x0, 1e-2, 100).unwrap();
        assert!(constraint_residual(&sys, &traj, ResidualKind::Continuous).unwrap() <= 1e-7);

        let mut off = Trajectory::new(&[("q", 3), ("v", 3)]);
        off.push(0.0, &[&[0.0, 1.0, 0.0], &[1.0, 0.0, 1.25]]).unwrap();
        let r = constraint_residual(&sys, &off, ResidualKind::Continuous).unwrap();
        assert!((r - 0.25).abs() < 1e-15);
        let mut pairs = Trajectory::new(&[("q", 3)]);
        pairs.push(0.0, &[&[0.0, 1.0, 0.0]]).unwrap();
        pairs.push(1.0, &[&[0.5, 1.0, 0.75]]).unwrap();
        let r = constraint_residual(&sys, &pairs, ResidualKind::Discrete(Discretization::Euler)).unwrap();
        assert!((r - 0.25).abs() < 1e-15);
        assert!(matches!(
            constraint_residual(&sys, &pairs, ResidualKind::Continuous),
            Err(Error::MissingColumn(_))
        ));
    }

    #[test]
    fn orders() {
        let cfg = NewtonConfig::default();
        let hs = [0.02, 0.01, 0.005];
        let osc = catalog::oscillator();
        let se = convergence_order(|s: &PhaseState, h| Scheme::SymplecticEuler.step(&osc, s, h, &cfg), &osc, &osc0(), 1.0, &hs)
            .unwrap();
        assert!((se.slope - 1.0).abs() <= 0.1, "{se:?}");

        let m = MartinetSystem::default();
        let s0 = PhaseState { q: vec![0.1, 0.2, 0.0], p: vec![0.5, -0.3, 0.4] };
        for scheme in [Scheme::Midpoint, Scheme::StormerVerlet] {
            let fit = convergence_order(|s: &PhaseState, h| scheme.step(&m, s, h, &cfg), &m, &s0, 1.0, &hs).unwrap();
            assert!((fit.slope - 2.0).abs() <= 0.1, "{scheme:?} {fit:?}");
        }

        let field = HamiltonianField(&osc);
        let rk = |s: &PhaseState, h: f64| Ok(PhaseState::from_slice(&rk4_step(&field, &s.to_vec(), h)?));
        let fit = convergence_order(rk, &osc, &osc0(), 1.0, &[0.1, 0.05, 0.025]).unwrap();
        assert!((fit.slope - 4.0).abs() <= 0.2, "{fit:?}");
    }

    #[test]
    fn order_preconditions() {
        let osc = catalog::oscillator();
        let id = |s: &PhaseState, _h: f64| Ok(s.clone());
        assert!(convergence_order(id, &osc, &osc0(), 1.0, &[0.1, 0.05]).is_err());
        assert!(convergence_order(id, &osc, &osc0(), 1.0, &[0.3, 0.1, 0.05]).is_err());
    }

    #[test]
    fn random_states_are_reproducible_and_bounded() {
        let a = random_states(3, 200, 7, Some(0.5));
        assert_eq!(a, random_states(3, 200, 7, Some(0.5)));
        assert_ne!(a, random_states(3, 200, 8, Some(0.5)));
        for s in &a {
            assert!(s.q.iter().chain(&s.p).all(|x| x.abs() <= STATE_RANGE));
            assert!((1.0 + 0.5 * s.q[0]).abs() >= POLE_CLEARANCE);
        }
    }

    #[test]
    fn reversibility_of_symmetric_schemes() {
        let m = MartinetSystem::default();
        let cfg = NewtonConfig::default();
        let s = PhaseState { q: vec![0.2, -0.3, 0.1], p: vec![0.4, 0.6, -0.5] };
        for scheme in [Scheme::Midpoint, Scheme::StormerVerlet] {
            let d = reversibility_defect(|s: &PhaseState, h| scheme.step_signed(&m, s, h, &cfg), &s, 0.1).unwrap();
            assert!(d <= 1e-11, "{scheme:?} {d}");
        }
    }
}
