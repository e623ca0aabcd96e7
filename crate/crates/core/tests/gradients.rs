//! Finite-difference checks of every hand-written derivative.

use oc_core::problem::{ControlProblem, Problem};
use oc_core::rollout::{integrate, rhs, rollout_adjoint, LossSeed, SampleTerms};
use oc_core::scenarios::{build, ScenarioId};
use oc_core::value_net::ValueNet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn randn(n: usize, std: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, std).unwrap();
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

/// A network with all parameter groups active.
fn busy_net(d: usize, m: usize, seed: u64) -> ValueNet<f64> {
    let n = oc_core::value_net::param_count(d, m);
    ValueNet::from_params(d, m, randn(n, 0.4, seed)).unwrap()
}

fn central_diff(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

fn assert_close(what: &str, got: f64, want: f64, tol: f64) {
    assert!(
        (got - want).abs() <= tol * (1.0 + want.abs()),
        "{what}: got {got}, want {want}"
    );
}

#[test]
fn phi_gradient_matches_fd() {
    let net = busy_net(4, 7, 1);
    let x = [0.3, -0.7, 1.1, 0.2, 0.4];
    let (_, g) = net.phi_grad(&x).unwrap();
    for k in 0..5 {
        let fd = central_diff(
            |e| {
                let mut y = x;
                y[k] += e;
                net.phi(&y).unwrap()
            },
            1e-5,
        );
        assert_close("dPhi/dx", g[k], fd, 1e-7);
    }
}

#[test]
fn parameter_adjoint_matches_fd() {
    let (d, m) = (3, 5);
    let net = busy_net(d, m, 2);
    let x = [0.5, -0.2, 0.9, 0.3];
    let sv = 0.7;
    let v = [0.4, -1.3, 0.8, 0.25];
    let f = |n: &ValueNet<f64>, x: &[f64]| {
        let (p, g) = n.phi_grad(x).unwrap();
        sv * p + g.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()
    };
    let bar = net.phi_param_adjoint(&x, sv, &v).unwrap();
    for i in 0..net.num_params() {
        let fd = central_diff(
            |e| {
                let mut n = net.clone();
                n.params_mut()[i] += e;
                f(&n, &x)
            },
            1e-5,
        );
        assert_close(&format!("theta[{i}]"), bar[i], fd, 1e-6);
    }
}

#[test]
fn input_adjoint_is_gradient_plus_hessian_vector() {
    let net = busy_net(3, 6, 3);
    let x = [0.1, 0.6, -0.4, 0.5];
    let sv = -0.3;
    let v = [1.0, 0.5, -0.5, 2.0];
    let mut ws = net.workspace();
    let mut theta_bar = vec![0.0; net.num_params()];
    let mut x_bar = vec![0.0; 4];
    net.vjp_with(&x, sv, &v, &mut ws, &mut theta_bar, &mut x_bar);
    for k in 0..4 {
        let fd = central_diff(
            |e| {
                let mut y = x;
                y[k] += e;
                let (p, g) = net.phi_grad(&y).unwrap();
                sv * p + g.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()
            },
            1e-5,
        );
        assert_close("x_bar", x_bar[k], fd, 1e-6);
    }
}

/// Checks `H = -p·f(u*) - L(u*)`, `u*` optimality, `∇_p H` and the Hamiltonian VJP.
fn check_hamiltonian(problem: &Problem<f64>, z: &[f64], p: &[f64], s: f64) {
    let d = problem.state_dim();
    let a = problem.control_dim();
    let h = problem.hamiltonian(s, z, p);
    let mut u = vec![0.0; a];
    problem.feedback_control(s, z, p, &mut u);
    let pre = |u: &[f64]| {
        let mut f = vec![0.0; d];
        problem.dynamics(s, z, u, &mut f);
        -p.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() - problem.running_cost(s, z, u)
    };
    assert_close("H = pre-Hamiltonian at u*", h, pre(&u), 1e-10);
    for (i, du) in randn(4 * a, 0.05, 9).chunks(a).enumerate() {
        let up: Vec<f64> = u.iter().zip(du).map(|(x, y)| x + y).collect();
        assert!(pre(&up) <= h + 1e-9, "perturbation {i} beats u*");
    }

    let mut hp = vec![0.0; d];
    problem.hamiltonian_grad_p(s, z, p, &mut hp);
    for k in 0..d {
        let fd = central_diff(
            |e| {
                let mut q = p.to_vec();
                q[k] += e;
                problem.hamiltonian(s, z, &q)
            },
            1e-3,
        );
        assert_close("dH/dp", hp[k], fd, 1e-6);
    }

    // VJP of (H, ∇_p H) with random seeds.
    let bar_h = 0.8;
    let bar_hp = randn(d, 1.0, 11);
    let mut bar_z = vec![0.0; d];
    let mut bar_p = vec![0.0; d];
    problem.hamiltonian_vjp(s, z, p, bar_h, &bar_hp, &mut bar_z, &mut bar_p);
    let f = |z: &[f64], p: &[f64]| {
        let mut g = vec![0.0; d];
        problem.hamiltonian_grad_p(s, z, p, &mut g);
        bar_h * problem.hamiltonian(s, z, p) + g.iter().zip(&bar_hp).map(|(a, b)| a * b).sum::<f64>()
    };
    for k in 0..d {
        let fz = central_diff(
            |e| {
                let mut y = z.to_vec();
                y[k] += e;
                f(&y, p)
            },
            1e-6,
        );
        let fp = central_diff(
            |e| {
                let mut q = p.to_vec();
                q[k] += e;
                f(z, &q)
            },
            1e-4,
        );
        // Absolute slack for cancellation in FD of an O(|H|) function.
        let slack = 1e-8 * h.abs();
        assert_close("H vjp z", bar_z[k], fz, 1e-5 + slack / (1.0 + fz.abs()));
        assert_close("H vjp p", bar_p[k], fp, 1e-5 + slack / (1.0 + fp.abs()));
    }

    // Dynamics and running-cost VJPs.
    let bar_f = randn(d, 1.0, 12);
    let mut gz = vec![0.0; d];
    let mut gu = vec![0.0; a];
    problem.dynamics_vjp(s, z, &u, &bar_f, &mut gz, &mut gu);
    problem.running_cost_vjp(s, z, &u, 0.6, &mut gz, &mut gu);
    let g = |z: &[f64], u: &[f64]| {
        let mut f = vec![0.0; d];
        problem.dynamics(s, z, u, &mut f);
        f.iter().zip(&bar_f).map(|(a, b)| a * b).sum::<f64>() + 0.6 * problem.running_cost(s, z, u)
    };
    for k in 0..d {
        let fd = central_diff(
            |e| {
                let mut y = z.to_vec();
                y[k] += e;
                g(&y, &u)
            },
            1e-6,
        );
        let slack = 1e-8 * g(z, &u).abs();
        assert_close("dynamics/cost vjp z", gz[k], fd, 1e-5 + slack / (1.0 + fd.abs()));
    }
    for k in 0..a {
        let fd = central_diff(
            |e| {
                let mut v = u.clone();
                v[k] += e;
                g(z, &v)
            },
            1e-6,
        );
        let slack = 1e-8 * g(z, &u).abs();
        assert_close("dynamics/cost vjp u", gu[k], fd, 1e-5 + slack / (1.0 + fd.abs()));
    }
}

#[test]
fn multi_agent_hamiltonians() {
    for (id, z) in [
        (ScenarioId::Corridor, vec![-1.8, 0.3, 2.1, -0.2]),
        (ScenarioId::Corridor, vec![0.2, 0.1, 0.5, 0.3]),
        (ScenarioId::Swap2, vec![0.5, 1.5, -0.3, 0.2]),
        (ScenarioId::Swap12, {
            let (x0, _) = oc_core::scenarios::swap_layout(6);
            x0.iter().map(|v| v * 0.04).collect()
        }),
    ] {
        let problem = build::<f64>(id).unwrap().problem;
        let p = randn(z.len(), 1.5, 4);
        check_hamiltonian(&problem, &z, &p, 0.3);
    }
}

#[test]
fn quadcopter_hamiltonian() {
    let problem = build::<f64>(ScenarioId::Quadcopter).unwrap().problem;
    for seed in 0..4 {
        let z = randn(12, 0.7, 20 + seed);
        let p = randn(12, 2.0, 40 + seed);
        check_hamiltonian(&problem, &z, &p, 0.5);
    }
}

#[test]
fn running_cost_rate_equals_lagrangian_at_feedback() {
    let problem = build::<f64>(ScenarioId::Quadcopter).unwrap().problem;
    let net = busy_net(12, 6, 5);
    let z = randn(12, 0.5, 6);
    let s = 0.25;
    let mut aug = z.clone();
    aug.extend([0.0, 0.0]);
    let out = rhs(&net, &problem, s, &aug).unwrap();
    let mut x = z.clone();
    x.push(s);
    let (_, g) = net.phi_grad(&x).unwrap();
    let mut u = vec![0.0; 4];
    problem.feedback_control(s, &z, &g[..12], &mut u);
    assert_close("ell rate", out[12], problem.running_cost(s, &z, &u), 1e-10);
    let mut f = vec![0.0; 12];
    problem.dynamics(s, &z, &u, &mut f);
    for k in 0..12 {
        assert_close("state rate", out[k], f[k], 1e-10);
    }
}

fn check_rollout_adjoint(problem: &Problem<f64>, net: &ValueNet<f64>, x: &[f64], n_t: usize) {
    let seed = LossSeed {
        ell: 1.0,
        terminal: 0.9,
        c_hjt: 0.3,
        c_hjfin: 0.2,
        c_hjgrad: 0.1,
    };
    let objective = |n: &ValueNet<f64>| {
        let r = integrate(n, problem, x, n_t).unwrap();
        r.terms.objective(&seed)
    };
    let mut grad = vec![0.0; net.num_params()];
    let terms: SampleTerms<f64> = rollout_adjoint(net, problem, x, n_t, &seed, &mut grad).unwrap();
    assert_close("forward objective", terms.objective(&seed), objective(net), 1e-12);
    for i in 0..net.num_params() {
        let fd = central_diff(
            |e| {
                let mut n = net.clone();
                n.params_mut()[i] += e;
                objective(&n)
            },
            // G is O(1e5) for the quadcopter; smaller steps drown in roundoff.
            1e-4,
        );
        assert_close(&format!("theta[{i}]"), grad[i], fd, 1e-6);
    }
}

#[test]
fn rollout_adjoint_corridor() {
    let problem = build::<f64>(ScenarioId::Corridor).unwrap().problem;
    let net = busy_net(4, 4, 7);
    check_rollout_adjoint(&problem, &net, &[-2.0, -2.0, 2.0, -2.0], 5);
}

#[test]
fn rollout_adjoint_quadcopter() {
    let problem = build::<f64>(ScenarioId::Quadcopter).unwrap().problem;
    let mut net = busy_net(12, 3, 8);
    net.params_mut().iter_mut().for_each(|v| *v *= 0.3);
    let x = randn(12, 0.3, 9);
    check_rollout_adjoint(&problem, &net, &x, 4);
}
