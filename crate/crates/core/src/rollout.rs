//! Characteristic rollouts driven by the value network.
//!
//! The augmented state `(z, ℓ, c)` follows
//!
//! ```text
//! ż = −∇_p H(s, z, ∇_zΦ)
//! ℓ̇ = −H(s, z, ∇_zΦ) + ∇_zΦ · ∇_p H(s, z, ∇_zΦ)     (= L at the feedback control)
//! ċ = |∂_sΦ − H(s, z, ∇_zΦ)|
//! ```
//!
//! and is integrated with classical RK4 on a uniform grid. Gradients with
//! respect to the network parameters are obtained by differentiating the
//! discrete scheme exactly (reverse mode over the stored RK4 stages).

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::problem::ControlProblem;
use crate::scalar::Scalar;
use crate::value_net::{NetWorkspace, ValueNet};

/// Weights of the per-sample objective terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSeed<T> {
    pub ell: T,
    pub terminal: T,
    pub c_hjt: T,
    pub c_hjfin: T,
    pub c_hjgrad: T,
}

impl<T: Scalar> LossSeed<T> {
    /// `ℓ + G + β1 c_HJt + β2 c_HJfin + β3 c_HJgrad`, all scaled by `scale`.
    pub fn training(betas: [T; 3], scale: T) -> Self {
        Self {
            ell: scale,
            terminal: scale,
            c_hjt: betas[0] * scale,
            c_hjfin: betas[1] * scale,
            c_hjgrad: betas[2] * scale,
        }
    }
}

/// Per-trajectory quantities entering the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleTerms<T> {
    /// Accumulated running cost.
    pub ell: T,
    /// Terminal cost `G(z(T))`.
    pub terminal: T,
    pub c_hjt: T,
    /// `|Φ(z(T), T) − G(z(T))|`
    pub c_hjfin: T,
    /// `‖∇_zΦ(z(T), T) − ∇G(z(T))‖₁`
    pub c_hjgrad: T,
}

impl<T: Scalar> SampleTerms<T> {
    pub fn objective(&self, seed: &LossSeed<T>) -> T {
        seed.ell * self.ell
            + seed.terminal * self.terminal
            + seed.c_hjt * self.c_hjt
            + seed.c_hjfin * self.c_hjfin
            + seed.c_hjgrad * self.c_hjgrad
    }

    /// `ℓ + G`
    pub fn control_objective(&self) -> T {
        self.ell + self.terminal
    }

    pub fn add(&mut self, o: &Self) {
        self.ell += o.ell;
        self.terminal += o.terminal;
        self.c_hjt += o.c_hjt;
        self.c_hjfin += o.c_hjfin;
        self.c_hjgrad += o.c_hjgrad;
    }

    pub fn scaled(&self, k: T) -> Self {
        Self {
            ell: self.ell * k,
            terminal: self.terminal * k,
            c_hjt: self.c_hjt * k,
            c_hjfin: self.c_hjfin * k,
            c_hjgrad: self.c_hjgrad * k,
        }
    }

    fn is_finite(&self) -> bool {
        [self.ell, self.terminal, self.c_hjt, self.c_hjfin, self.c_hjgrad]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// A recorded closed-loop trajectory on the grid `s_k = t0 + k h`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult<T> {
    pub times: Vec<T>,
    pub states: Vec<Vec<T>>,
    /// Feedback control at each grid point.
    pub controls: Vec<Vec<T>>,
    /// Running cost accumulated up to each grid point.
    pub ell: Vec<T>,
    pub c_hjt: Vec<T>,
    pub terms: SampleTerms<T>,
}

impl<T: Scalar> RolloutResult<T> {
    pub fn final_state(&self) -> &[T] {
        self.states.last().expect("rollout has at least one state")
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }


    /// Writes `s, z0.., u0.., ell, c_hjt` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.states[0].len();
        let a = self.controls[0].len();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["s".to_string()];
        header.extend((0..d).map(|i| format!("z{i}")));
        header.extend((0..a).map(|i| format!("u{i}")));
        header.push("ell".into());
        header.push("c_hjt".into());
        w.write_record(&header)?;
        for k in 0..self.times.len() {
            let mut row = Vec::with_capacity(header.len());
            row.push(self.times[k].to_f64_lossy().to_string());
            row.extend(self.states[k].iter().map(|v| v.to_f64_lossy().to_string()));
            row.extend(self.controls[k].iter().map(|v| v.to_f64_lossy().to_string()));
            row.push(self.ell[k].to_f64_lossy().to_string());
            row.push(self.c_hjt[k].to_f64_lossy().to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Buffers for evaluating the characteristic vector field and its adjoint.
pub(crate) struct Engine<'a, T: Scalar, P: ?Sized> {
    net: &'a ValueNet<T>,
    problem: &'a P,
    d: usize,
    ws: NetWorkspace<T>,
    x: Vec<T>,
    g: Vec<T>,
    hp: Vec<T>,
    bar_hp: Vec<T>,
    v: Vec<T>,
    x_bar: Vec<T>,
    // RK4 scratch
    k: [Vec<T>; 4],
    stage: Vec<T>,
    kbar: [Vec<T>; 4],
    zbar: Vec<T>,
    /// `∇_zΦ` at the first stage of the last step (the grid-point gradient).
    g_grid: Vec<T>,
}

impl<'a, T: Scalar, P: ControlProblem<T> + ?Sized> Engine<'a, T, P> {
    pub(crate) fn new(net: &'a ValueNet<T>, problem: &'a P) -> Result<Self> {
        let d = problem.state_dim();
        check_dim("network state dimension", d, net.state_dim())?;
        let z = |n| vec![T::zero(); n];
        Ok(Self {
            net,
            problem,
            d,
            ws: net.workspace(),
            x: z(d + 1),
            g: z(d + 1),
            hp: z(d),
            bar_hp: z(d),
            v: z(d + 1),
            x_bar: z(d + 1),
            k: [z(d), z(d), z(d), z(d)],
            stage: z(d),
            kbar: [z(d), z(d), z(d), z(d)],
            zbar: z(d),
            g_grid: z(d),
        })
    }

    fn load_input(&mut self, s: T, z: &[T]) {
        self.x[..self.d].copy_from_slice(z);
        self.x[self.d] = s;
    }

    /// Evaluates `ż` into `dz`; returns `(ℓ̇, ċ)`.
    fn rhs_into(&mut self, s: T, z: &[T], dz: &mut [T]) -> (T, T) {
        let d = self.d;
        self.load_input(s, z);
        self.net.grad_with(&self.x, &mut self.ws, &mut self.g);
        let p = &self.g[..d];
        let h = self.problem.hamiltonian(s, z, p);
        self.problem.hamiltonian_grad_p(s, z, p, &mut self.hp);
        let mut ldot = -h;
        for i in 0..d {
            dz[i] = -self.hp[i];
            ldot += p[i] * self.hp[i];
        }
        (ldot, (self.g[d] - h).abs())
    }

    /// Pulls `(k̄_z, k̄_ℓ, k̄_c)` on the vector field at `(s, z)` back to `z`
    /// (accumulated into `z_bar`) and to `θ` (accumulated into `theta_bar`).
    #[allow(clippy::too_many_arguments)]
    fn rhs_vjp(
        &mut self,
        s: T,
        z: &[T],
        kz: &[T],
        kl: T,
        kc: T,
        theta_bar: &mut [T],
        z_bar: &mut [T],
    ) {
        let d = self.d;
        self.load_input(s, z);
        self.net.grad_with(&self.x, &mut self.ws, &mut self.g);
        let (gz, gt) = (&self.g[..d], self.g[d]);
        let h = self.problem.hamiltonian(s, z, gz);
        self.problem.hamiltonian_grad_p(s, z, gz, &mut self.hp);
        let sg = (gt - h).sgn();

        for i in 0..d {
            self.bar_hp[i] = -kz[i] + kl * gz[i];
            self.v[i] = kl * self.hp[i];
        }
        self.v[d] = kc * sg;
        let bar_h = -kl - kc * sg;
        self.problem
            .hamiltonian_vjp(s, z, gz, bar_h, &self.bar_hp, z_bar, &mut self.v[..d]);

        self.x_bar.iter_mut().for_each(|v| *v = T::zero());
        self.net
            .vjp_from_cache(&self.x, T::zero(), &self.v, &mut self.ws, theta_bar, &mut self.x_bar);
        for i in 0..d {
            z_bar[i] += self.x_bar[i];
        }
    }

    /// One RK4 step of the augmented system. Stage states are appended to
    /// `tape` when given.
    fn step(&mut self, s: T, h: T, z: &mut [T], ell: &mut T, c: &mut T, tape: Option<&mut Vec<T>>) {
        let d = self.d;
        let half = T::half() * h;
        let mut kz = std::mem::take(&mut self.k);
        let mut stage = std::mem::take(&mut self.stage);
        let mut kl = [T::zero(); 4];
        let mut kc = [T::zero(); 4];

        let offsets = [T::zero(), half, half, h];
        let mut tape = tape;
        for j in 0..4 {
            if j == 0 {
                stage.copy_from_slice(z);
            } else {
                let scale = if j == 3 { h } else { half };
                for i in 0..d {
                    stage[i] = z[i] + scale * kz[j - 1][i];
                }
            }
            if let Some(t) = tape.as_deref_mut() {
                t.extend_from_slice(&stage);
            }
            let (l, cc) = self.rhs_into(s + offsets[j], &stage, &mut kz[j]);
            if j == 0 {
                self.g_grid.copy_from_slice(&self.g[..d]);
            }
            kl[j] = l;
            kc[j] = cc;
        }
        let sixth = h / T::lit(6.0);
        for i in 0..d {
            z[i] += sixth * (kz[0][i] + T::two() * (kz[1][i] + kz[2][i]) + kz[3][i]);
        }
        *ell += sixth * (kl[0] + T::two() * (kl[1] + kl[2]) + kl[3]);
        *c += sixth * (kc[0] + T::two() * (kc[1] + kc[2]) + kc[3]);
        self.k = kz;
        self.stage = stage;
    }

    /// Reverse of [`step`](Self::step): updates `lam_z` in place from the
    /// taped stage states and accumulates into `theta_bar`.
    fn step_adjoint(&mut self, s: T, h: T, stages: &[T], lam_z: &mut [T], lam_l: T, lam_c: T, theta_bar: &mut [T]) {
        let d = self.d;
        let half = T::half() * h;
        let w = [h / T::lit(6.0), h / T::lit(3.0), h / T::lit(3.0), h / T::lit(6.0)];
        let mut kbar = std::mem::take(&mut self.kbar);
        let mut zbar = std::mem::take(&mut self.zbar);
        for j in 0..4 {
            for i in 0..d {
                kbar[j][i] = w[j] * lam_z[i];
            }
        }
        let offsets = [T::zero(), half, half, h];
        // Stage j's input depends on k_{j-1} with weight `feed[j]`.
        let feed = [T::zero(), half, half, h];
        for j in (0..4).rev() {
            zbar.iter_mut().for_each(|v| *v = T::zero());
            let stage = &stages[j * d..(j + 1) * d];
            self.rhs_vjp(
                s + offsets[j],
                stage,
                &kbar[j],
                w[j] * lam_l,
                w[j] * lam_c,
                theta_bar,
                &mut zbar,
            );
            for i in 0..d {
                lam_z[i] += zbar[i];
            }
            if j > 0 {
                for i in 0..d {
                    kbar[j - 1][i] += feed[j] * zbar[i];
                }
            }
        }
        self.kbar = kbar;
        self.zbar = zbar;
    }

    fn terminal_terms(&mut self, t: T, z: &[T]) -> (SampleTerms<T>, T) {
        let d = self.d;
        self.load_input(t, z);
        let phi = self.net.phi_grad_with(&self.x, &mut self.ws, &mut self.g);
        let g_val = self.problem.terminal_cost(z);
        self.problem.terminal_cost_grad(z, &mut self.hp);
        let grad_res = (0..d).fold(T::zero(), |acc, i| acc + (self.g[i] - self.hp[i]).abs());
        (
            SampleTerms {
                ell: T::zero(),
                terminal: g_val,
                c_hjt: T::zero(),
                c_hjfin: (phi - g_val).abs(),
                c_hjgrad: grad_res,
            },
            phi,
        )
    }

    /// Gradient of the terminal part of the objective: returns `λ_z(T)` and
    /// accumulates the direct parameter contribution.
    fn terminal_adjoint(&mut self, t: T, z: &[T], phi: T, seed: &LossSeed<T>, lam_z: &mut [T], theta_bar: &mut [T]) {
        let d = self.d;
        self.load_input(t, z);
        self.net.phi_grad_with(&self.x, &mut self.ws, &mut self.g);
        self.problem.terminal_cost_grad(z, &mut self.hp);
        let g_val = self.problem.terminal_cost(z);
        let sf = (phi - g_val).sgn();
        let alpha1 = self.problem.terminal().alpha1;
        for i in 0..d {
            let sr = (self.g[i] - self.hp[i]).sgn();
            self.v[i] = seed.c_hjgrad * sr;
            lam_z[i] = (seed.terminal - seed.c_hjfin * sf) * self.hp[i] - seed.c_hjgrad * alpha1 * sr;
        }
        self.v[d] = T::zero();
        self.x_bar.iter_mut().for_each(|v| *v = T::zero());
        self.net.vjp_from_cache(
            &self.x,
            seed.c_hjfin * sf,
            &self.v,
            &mut self.ws,
            theta_bar,
            &mut self.x_bar,
        );
        for i in 0..d {
            lam_z[i] += self.x_bar[i];
        }
    }

    /// Objective terms for one trajectory from `(0, x)`, accumulating
    /// `∂(seed·terms)/∂θ` into `theta_bar`.
    pub(crate) fn adjoint(
        &mut self,
        x: &[T],
        n_steps: usize,
        seed: &LossSeed<T>,
        tape: &mut Vec<T>,
        theta_bar: &mut [T],
    ) -> Result<SampleTerms<T>> {
        let d = self.d;
        check_dim("initial state", d, x.len())?;
        let t_end = self.problem.horizon();
        let h = t_end / T::from_usize(n_steps).unwrap();
        let mut z = x.to_vec();
        let (mut ell, mut c) = (T::zero(), T::zero());
        tape.clear();
        for k in 0..n_steps {
            let s = T::from_usize(k).unwrap() * h;
            self.step(s, h, &mut z, &mut ell, &mut c, Some(tape));
            check_finite(&z, ell, c, s + h)?;
        }
        let (mut terms, phi) = self.terminal_terms(t_end, &z);
        terms.ell = ell;
        terms.c_hjt = c;
        if !terms.is_finite() {
            return Err(non_finite("terminal", t_end));
        }

        let mut lam = vec![T::zero(); d];
        self.terminal_adjoint(t_end, &z, phi, seed, &mut lam, theta_bar);
        for k in (0..n_steps).rev() {
            let s = T::from_usize(k).unwrap() * h;
            let stages = &tape[k * 4 * d..(k + 1) * 4 * d];
            self.step_adjoint(s, h, stages, &mut lam, seed.ell, seed.c_hjt, theta_bar);
        }
        Ok(terms)
    }

    /// Forward-only rollout from `(t0, x)` with `n_steps` steps to the horizon.
    pub(crate) fn integrate(&mut self, t0: T, x: &[T], n_steps: usize, record: bool) -> Result<RolloutResult<T>> {
        self.integrate_shocked(t0, x, n_steps, record, None)
    }

    /// [`integrate`](Self::integrate) with `shock = (k, ξ)` added to the state
    /// at grid point `k`.
    pub(crate) fn integrate_shocked(
        &mut self,
        t0: T,
        x: &[T],
        n_steps: usize,
        record: bool,
        shock: Option<(usize, &[T])>,
    ) -> Result<RolloutResult<T>> {
        let d = self.d;
        check_dim("initial state", d, x.len())?;
        let t_end = self.problem.horizon();
        let a = self.problem.control_dim();
        let h = if n_steps > 0 {
            (t_end - t0) / T::from_usize(n_steps).unwrap()
        } else {
            T::zero()
        };
        let mut z = x.to_vec();
        let (mut ell, mut c) = (T::zero(), T::zero());
        let cap = if record { n_steps + 1 } else { 1 };
        let mut out = RolloutResult {
            times: Vec::with_capacity(cap),
            states: Vec::with_capacity(cap),
            controls: Vec::with_capacity(cap),
            ell: Vec::with_capacity(cap),
            c_hjt: Vec::with_capacity(cap),
            terms: SampleTerms::default(),
        };
        // Control from the grid-point gradient `∇_zΦ(s, z)`.
        let push = |this: &Self, s: T, z: &[T], grad: &[T], ell: T, c: T, out: &mut RolloutResult<T>| {
            let mut u = vec![T::zero(); a];
            this.problem.feedback_control(s, z, grad, &mut u);
            out.times.push(s);
            out.states.push(z.to_vec());
            out.controls.push(u);
            out.ell.push(ell);
            out.c_hjt.push(c);
        };
        let shock_at = |k: usize| shock.filter(|(at, _)| *at == k).map(|(_, xi)| xi);
        let mut z_prev = vec![T::zero(); d];
        for k in 0..n_steps {
            let s = t0 + T::from_usize(k).unwrap() * h;
            if let Some(xi) = shock_at(k) {
                add_assign(&mut z, xi);
            }
            z_prev.copy_from_slice(&z);
            let (ell_prev, c_prev) = (ell, c);
            self.step(s, h, &mut z, &mut ell, &mut c, None);
            if record {
                push(self, s, &z_prev, &self.g_grid, ell_prev, c_prev, &mut out);
            }
            let s_next = if k + 1 == n_steps { t_end } else { s + h };
            check_finite(&z, ell, c, s_next)?;
        }
        let (mut terms, _) = self.terminal_terms(t_end, &z);
        push(self, t_end, &z, &self.g[..d], ell, c, &mut out);
        terms.ell = ell;
        terms.c_hjt = c;
        if !terms.is_finite() {
            return Err(non_finite("terminal", t_end));
        }
        out.terms = terms;
        Ok(out)
    }
}

fn add_assign<T: Scalar>(z: &mut [T], xi: &[T]) {
    for (zi, &e) in z.iter_mut().zip(xi) {
        *zi += e;
    }
}

fn non_finite<T: Scalar>(stage: &'static str, time: T) -> Error {
    Error::NonFinite {
        stage,
        time: time.to_f64_lossy(),
        sample: 0,
    }
}

fn check_finite<T: Scalar>(z: &[T], ell: T, c: T, time: T) -> Result<()> {
    if ell.is_finite() && c.is_finite() && z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(non_finite("rollout", time))
    }
}

/// Time derivative of the augmented state `(z, ℓ, c)` at time `s`.
pub fn rhs<T: Scalar, P: ControlProblem<T> + ?Sized>(
    net: &ValueNet<T>,
    problem: &P,
    s: T,
    aug: &[T],
) -> Result<Vec<T>> {
    let d = problem.state_dim();
    check_dim("augmented state", d + 2, aug.len())?;
    let mut eng = Engine::new(net, problem)?;
    let mut out = vec![T::zero(); d + 2];
    let (l, c) = eng.rhs_into(s, &aug[..d], &mut out[..d]);
    out[d] = l;
    out[d + 1] = c;
    Ok(out)
}

/// Closed-loop rollout from `(0, x)` with `n_steps` RK4 steps.
pub fn integrate<T: Scalar, P: ControlProblem<T> + ?Sized>(
    net: &ValueNet<T>,
    problem: &P,
    x: &[T],
    n_steps: usize,
) -> Result<RolloutResult<T>> {
    integrate_from(net, problem, T::zero(), x, n_steps)
}

/// Closed-loop rollout from `(t0, x)` to the horizon. `n_steps = 0` is allowed
/// only when `t0` equals the horizon.
pub fn integrate_from<T: Scalar, P: ControlProblem<T> + ?Sized>(
    net: &ValueNet<T>,
    problem: &P,
    t0: T,
    x: &[T],
    n_steps: usize,
) -> Result<RolloutResult<T>> {
    let t_end = problem.horizon();
    if !(t0 >= T::zero() && t0 <= t_end) {
        return Err(Error::config(format!("start time {t0} outside [0, {t_end}]")));
    }
    if n_steps == 0 && t0 < t_end {
        return Err(Error::config("rollout needs at least one time step"));
    }
    Engine::new(net, problem)?.integrate(t0, x, n_steps, true)
}

/// Closed-loop rollout from `(0, x)` in which the state jumps by `xi` at grid
/// point `shock_step` (`0 <= shock_step <= n_steps`). With `xi = 0` the result
/// is identical to [`integrate`].
pub fn integrate_with_shock<T: Scalar, P: ControlProblem<T> + ?Sized>(
    net: &ValueNet<T>,
    problem: &P,
    x: &[T],
    n_steps: usize,
    shock_step: usize,
    xi: &[T],
) -> Result<RolloutResult<T>> {
    check_dim("shock displacement", problem.state_dim(), xi.len())?;
    if n_steps == 0 || shock_step > n_steps {
        return Err(Error::config("shock step must lie on the rollout grid"));
    }
    let mut eng = Engine::new(net, problem)?;
    if shock_step == n_steps {
        // Shock at the horizon only changes the terminal state.
        let mut r = eng.integrate(T::zero(), x, n_steps, true)?;
        let mut z = r.final_state().to_vec();
        add_assign(&mut z, xi);
        let t_end = problem.horizon();
        let (terms, _) = eng.terminal_terms(t_end, &z);
        r.terms = SampleTerms {
            ell: r.terms.ell,
            c_hjt: r.terms.c_hjt,
            ..terms
        };
        *r.states.last_mut().unwrap() = z;
        return Ok(r);
    }
    eng.integrate_shocked(T::zero(), x, n_steps, true, Some((shock_step, xi)))
}

/// Objective terms of one trajectory from `(0, x)` and the parameter gradient
/// of `seed·terms`, accumulated into `theta_bar`.
pub fn rollout_adjoint<T: Scalar, P: ControlProblem<T> + ?Sized>(
    net: &ValueNet<T>,
    problem: &P,
    x: &[T],
    n_steps: usize,
    seed: &LossSeed<T>,
    theta_bar: &mut [T],
) -> Result<SampleTerms<T>> {
    if n_steps == 0 {
        return Err(Error::config("rollout needs at least one time step"));
    }
    check_dim("parameter gradient", net.num_params(), theta_bar.len())?;
    let mut tape = Vec::new();
    Engine::new(net, problem)?.adjoint(x, n_steps, seed, &mut tape, theta_bar)
}

/// Objective terms of one trajectory without recording it.
pub fn rollout_terms<T: Scalar, P: ControlProblem<T> + ?Sized>(
    net: &ValueNet<T>,
    problem: &P,
    x: &[T],
    n_steps: usize,
) -> Result<SampleTerms<T>> {
    if n_steps == 0 {
        return Err(Error::config("rollout needs at least one time step"));
    }
    Ok(Engine::new(net, problem)?
        .integrate(T::zero(), x, n_steps, false)?
        .terms)
}
