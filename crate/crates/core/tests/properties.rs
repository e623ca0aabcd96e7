use oc_core::evaluation::{bootstrap_ci, linear_fit, BootstrapConfig};
use oc_core::problem::{ControlProblem, Problem};
use oc_core::rollout::{integrate, integrate_with_shock};
use oc_core::scenarios::{build, ScenarioId};
use oc_core::trainer::loss_and_grad;
use oc_core::value_net::{activation, ValueNet};
use oc_core::{Scenario64, ValueNet64};
use proptest::prelude::*;

fn scenario(id: ScenarioId) -> Scenario64 {
    build::<f64>(id).unwrap()
}

fn small_net(d: usize, seed: u64) -> ValueNet64 {
    let mut net = ValueNet::init(d, 6, seed).unwrap();
    // Nonzero quadratic and linear heads so the policy is not trivial.
    let l = *net.layout();
    for (i, v) in net.params_mut()[l.a..l.c].iter_mut().enumerate() {
        *v = 0.1 * ((i * 7 + seed as usize) % 5) as f64 - 0.2;
    }
    net
}

fn id_strategy() -> impl Strategy<Value = ScenarioId> {
    prop_oneof![
        Just(ScenarioId::Corridor),
        Just(ScenarioId::Swap2),
        Just(ScenarioId::SwapK(3)),
        Just(ScenarioId::Quadcopter),
    ]
}

/// Plain RK4 on `(z, ℓ)` assembled from the problem's own pieces.
fn reference_rollout(net: &ValueNet64, p: &Problem<f64>, x: &[f64], n: usize) -> (Vec<f64>, f64) {
    let d = p.state_dim();
    let a = p.control_dim();
    let h = p.horizon() / n as f64;
    let f = |s: f64, z: &[f64]| -> Vec<f64> {
        let mut inp = z.to_vec();
        inp.push(s);
        let (_, g) = net.phi_grad(&inp).unwrap();
        let mut u = vec![0.0; a];
        p.feedback_control(s, z, &g[..d], &mut u);
        let mut out = vec![0.0; d + 1];
        p.dynamics(s, z, &u, &mut out[..d]);
        out[d] = p.running_cost(s, z, &u);
        out
    };
    let mut y: Vec<f64> = x.to_vec();
    y.push(0.0);
    for k in 0..n {
        let s = k as f64 * h;
        let k1 = f(s, &y[..d]);
        let y2: Vec<f64> = y.iter().zip(&k1).map(|(v, k)| v + 0.5 * h * k).collect();
        let k2 = f(s + 0.5 * h, &y2[..d]);
        let y3: Vec<f64> = y.iter().zip(&k2).map(|(v, k)| v + 0.5 * h * k).collect();
        let k3 = f(s + 0.5 * h, &y3[..d]);
        let y4: Vec<f64> = y.iter().zip(&k3).map(|(v, k)| v + h * k).collect();
        let k4 = f(s + h, &y4[..d]);
        for i in 0..=d {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    let ell = y.pop().unwrap();
    (y, ell)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sigma_is_even_with_tanh_slope(x in -30.0f64..30.0) {
        prop_assert_eq!(activation(x), activation(-x));
        let h = 1e-5;
        let slope = (activation(x + h) - activation(x - h)) / (2.0 * h);
        prop_assert!((slope - x.tanh()).abs() < 1e-8);
        prop_assert!(activation(x) >= x.abs());
    }

    #[test]
    fn zero_shock_is_bit_identical(id in id_strategy(), seed in 0u64..1000, n in 2usize..12, frac in 0.0f64..=1.0) {
        let sc = scenario(id);
        let d = sc.problem.state_dim();
        let net = small_net(d, seed);
        let x = sc.rho.sample(1, seed).pop().unwrap();
        let k = (frac * n as f64).round() as usize;
        let plain = integrate(&net, &sc.problem, &x, n).unwrap();
        let shocked = integrate_with_shock(&net, &sc.problem, &x, n, k, &vec![0.0; d]).unwrap();
        prop_assert_eq!(plain, shocked);
    }

    #[test]
    fn rollout_matches_reference_rk4(id in id_strategy(), seed in 0u64..1000, n in 1usize..10) {
        let sc = scenario(id);
        let p = sc.problem.validation();
        let net = small_net(p.state_dim(), seed);
        let x = sc.rho.sample(1, seed ^ 0x55).pop().unwrap();
        let r = integrate(&net, &p, &x, n).unwrap();
        let (z, ell) = reference_rollout(&net, &p, &x, n);
        let scale = 1.0 + ell.abs();
        prop_assert!((r.terms.ell - ell).abs() <= 1e-8 * scale, "ell {} vs {}", r.terms.ell, ell);
        for (a, b) in r.final_state().iter().zip(&z) {
            prop_assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn optimal_dynamics_are_minus_grad_p_hamiltonian(id in id_strategy(), seed in 0u64..1000) {
        let sc = scenario(id);
        let p = &sc.problem;
        let d = p.state_dim();
        let z = sc.rho.sample(1, seed).pop().unwrap();
        let q: Vec<f64> = sc.rho.sample(1, seed + 1).pop().unwrap().iter().map(|v| 0.3 * v).collect();
        let mut u = vec![0.0; p.control_dim()];
        p.feedback_control(0.3, &z, &q, &mut u);
        let mut f = vec![0.0; d];
        p.dynamics(0.3, &z, &u, &mut f);
        let mut hp = vec![0.0; d];
        p.hamiltonian_grad_p(0.3, &z, &q, &mut hp);
        for (a, b) in f.iter().zip(&hp) {
            prop_assert!((a + b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
        // H = max_u { -p·f - L } is attained at u*.
        let h = p.hamiltonian(0.3, &z, &q);
        let at_u = -q.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() - p.running_cost(0.3, &z, &u);
        prop_assert!((h - at_u).abs() <= 1e-9 * (1.0 + h.abs()));
    }

    #[test]
    fn interaction_is_symmetric_and_nonnegative(a in prop::collection::vec(-1.5f64..1.5, 4)) {
        let sc = scenario(ScenarioId::Corridor);
        let swapped = [a[2], a[3], a[0], a[1]];
        let w = sc.problem.interaction_cost(&a);
        prop_assert!(w >= 0.0);
        prop_assert_eq!(w, sc.problem.interaction_cost(&swapped));
    }

    #[test]
    fn sampling_is_seeded(seed in any::<u64>()) {
        let sc = scenario(ScenarioId::Swap2);
        prop_assert_eq!(sc.rho.sample(5, seed), sc.rho.sample(5, seed));
        let (a, b) = (ValueNet64::init(4, 8, seed).unwrap(), ValueNet64::init(4, 8, seed).unwrap());
        prop_assert_eq!(a.params(), b.params());
    }

    #[test]
    fn linear_fit_is_exact_on_lines(slope in -10.0f64..10.0, icpt in -10.0f64..10.0) {
        prop_assume!(slope.abs() > 1e-3);
        let xs = [1.0, 2.0, 4.0, 7.0];
        let ys: Vec<f64> = xs.iter().map(|x| slope * x + icpt).collect();
        let fit = linear_fit(&xs, &ys).unwrap();
        prop_assert!((fit.slope - slope).abs() < 1e-9);
        prop_assert!((fit.r2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bootstrap_interval_is_ordered(v in prop::collection::vec(-5.0f64..5.0, 2..40)) {
        let (lo, hi) = bootstrap_ci(&v, &BootstrapConfig::default());
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min <= lo + 1e-12 && lo <= hi && hi <= max + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn batch_gradient_is_thread_count_invariant(seed in 0u64..1000, batch in 1usize..70) {
        let sc = scenario(ScenarioId::Corridor);
        let net = small_net(4, seed);
        let xs = sc.rho.sample(batch, seed);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut g = vec![0.0; net.num_params()];
                let t = loss_and_grad(&net, &sc.problem, &xs, 4, [0.02, 0.02, 0.02], &mut g).unwrap();
                (t, g)
            })
        };
        let (t1, g1) = run(1);
        let (t4, g4) = run(4);
        prop_assert_eq!(t1, t4);
        let bits = |g: &[f64]| g.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&g1), bits(&g4));
    }
}
