use geomint::catalog;
use geomint::diagnostics::random_states;
use geomint::{parse_expr, HamiltonianSystem, LinearConstraintSystem, MartinetSystem, PhaseState, VakonomicState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SAMPLES: usize = 1000;

fn constrained_systems() -> Vec<(&'static str, LinearConstraintSystem)> {
    vec![
        ("heisenberg", catalog::heisenberg()),
        ("martinet_distribution", catalog::martinet_distribution()),
        ("holonomic_demo", catalog::holonomic_demo()),
    ]
}

fn random_vak(rng: &mut ChaCha8Rng) -> VakonomicState {
    let mut u = || rng.gen_range(-2.0..=2.0);
    VakonomicState { q: vec![u(), u(), u()], vfree: vec![u(), u()], mu: vec![u()] }
}

#[test]
fn dilation_of_martinet_hamiltonian_is_twice_h() {
    let m = MartinetSystem::default();
    for s in random_states(3, SAMPLES, 1, Some(m.beta)) {
        let h = m.hamiltonian(&s.q, &s.p).unwrap();
        let (_, hp) = m.gradient(&s.q, &s.p).unwrap();
        let dil: f64 = s.p.iter().zip(&hp).map(|(p, d)| p * d).sum();
        assert!((dil - 2.0 * h).abs() <= 1e-13 * h.abs().max(1e-300), "{s:?}");
    }
}

#[test]
fn recovered_lagrangian_matches_closed_form() {
    let m = MartinetSystem::default();
    for s in random_states(3, 100, 2, Some(m.beta)) {
        let v = m.fiber_derivative(&s).unwrap();
        let rec = m.recovered_lagrangian(&s.q, &s.p).unwrap();
        let closed = m.lagrangian(&v.q, &v.v).unwrap();
        assert!((rec - closed).abs() <= 1e-12 * closed.abs().max(1.0));
    }
}

#[test]
fn energy_equals_hamiltonian_of_legendre_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (name, sys) in constrained_systems() {
        for _ in 0..SAMPLES {
            let s = random_vak(&mut rng);
            let e = sys.energy(&s).unwrap();
            let ps = sys.constrained_legendre(&s).unwrap();
            let h = sys.hamiltonian(&ps.q, &ps.p).unwrap();
            assert!((e - h).abs() <= 1e-10 * e.abs().max(1.0), "{name}: {e} vs {h}");
        }
    }
}

#[test]
fn legendre_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (name, sys) in constrained_systems() {
        for _ in 0..SAMPLES {
            let s = random_vak(&mut rng);
            let back = sys.legendre_inverse(&sys.constrained_legendre(&s).unwrap()).unwrap();
            let err = back
                .vfree
                .iter()
                .zip(&s.vfree)
                .chain(back.mu.iter().zip(&s.mu))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1e-12, "{name}: {err}");
            assert_eq!(back.q, s.q);
        }
    }
}

#[test]
fn inverse_metric_derivative_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (name, sys) in constrained_systems() {
        for _ in 0..SAMPLES {
            let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..=2.0)).collect();
            let rm = sys.reduced_metric(&q).unwrap();
            for a in 0..3 {
                let lhs = rm.dgamma_inv(a).matmul(&rm.gamma);
                let rhs = rm.gamma_inv.matmul(&rm.dgamma[a]).scale(-1.0);
                assert!(lhs.sub(&rhs).max_abs() <= 1e-10, "{name} at {q:?}");
            }
        }
    }
}

#[test]
fn expression_gradients_match_finite_differences() {
    let names = ["x", "y", "z"];
    let sources = [
        "x^2*y - 3*z",
        "y^2/2",
        "(1 + 0.5*x)^2",
        "x/(1 + y^2)",
        "-(x - y)^3 + z*x*y",
        "(x + 2*y + z^2)/(2 + x^2 + z^2)",
        "((x*y)^2 - z)^2",
    ];
    let exprs: Vec<_> = sources.iter().map(|s| parse_expr(s, &names).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let fd = 1e-6;
    for case in 0..SAMPLES {
        let e = &exprs[case % exprs.len()];
        let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..=2.0)).collect();
        let (_, grad) = e.eval_grad(&q).unwrap();
        for i in 0..3 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += fd;
            qm[i] -= fd;
            let num = (e.eval(&qp).unwrap() - e.eval(&qm).unwrap()) / (2.0 * fd);
            assert!((grad[i] - num).abs() <= 1e-6 * grad[i].abs().max(1.0), "{} at {q:?}", sources[case % sources.len()]);
        }
    }
}

#[test]
fn hamiltonian_state_round_trip_through_flat_vectors() {
    let s = PhaseState { q: vec![1.0, 2.0], p: vec![3.0, 4.0] };
    assert_eq!(PhaseState::from_slice(&s.to_vec()), s);
}
