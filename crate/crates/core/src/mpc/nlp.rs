//! Smooth encoding of the two-trajectory problem (and the single-trajectory
//! baseline) for continuous models.
//!
//! Single shooting: decision variables are the shared first input, the two
//! input tails and the two setpoints. States follow from the rollout, so
//! predicted trajectories are dynamically consistent to machine precision
//! and the shared first input is shared by construction. Gradients run one
//! adjoint sweep per trajectory.
//!
//! The safe set's union-of-sensed-disks membership is disjunctive; each
//! backup knot is pinned to one covering disk chosen from the warm start,
//! which keeps the program smooth. Assignments are re-chosen every step.

use crate::costs::WeightMatrix;
use crate::dynamics::SmoothDynamics;
use crate::environment::{Obstacle, Setpoint};
use crate::solver::SmoothProblem;

/// Variable layout. The first input block is shared between trajectories.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub two_traj: bool,
}

impl Layout {
    pub fn u0(&self) -> usize {
        0
    }
    /// Input block of learning stage `k`, `1 <= k <= N-1`.
    pub fn ul(&self, k: usize) -> usize {
        self.m + (k - 1) * self.m
    }
    pub fn ub(&self, k: usize) -> usize {
        debug_assert!(self.two_traj);
        self.m + (self.horizon - 1) * self.m + (k - 1) * self.m
    }
    pub fn rl(&self) -> usize {
        let tails = if self.two_traj { 2 } else { 1 };
        self.m + tails * (self.horizon - 1) * self.m
    }
    pub fn rb(&self) -> usize {
        debug_assert!(self.two_traj);
        self.rl() + self.n + self.m
    }
    pub fn total(&self) -> usize {
        let setpoints = if self.two_traj { 2 } else { 1 };
        self.rl() + setpoints * (self.n + self.m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Traj {
    Learning,
    Backup,
}

#[derive(Clone, Copy, Debug)]
enum Ineq {
    /// `(lo + eta) - x_k[d] <= 0`
    KnotLower { traj: Traj, k: usize, dim: usize },
    /// `x_k[d] - (hi - eta) <= 0`
    KnotUpper { traj: Traj, k: usize, dim: usize },
    /// `(r_i + eta)^2 - ||y_k - o_i||^2 <= 0`
    KnotObstacle { traj: Traj, k: usize, ob: usize },
    /// `||y_k - c_j||^2 - (R - eta)^2 <= 0`
    KnotDisk { traj: Traj, k: usize, disk: usize },
    /// setpoint clear of obstacle with the manifold margin
    SetpointObstacle { traj: Traj, ob: usize },
    /// backup setpoint ball inside its assigned sensed disk
    SetpointDisk { traj: Traj, disk: usize },
    /// `eps * V_N(backup) + T(r_B) - (budget - margin) <= 0`
    Budget,
}

/// One trajectory's membership constraints.
#[derive(Clone, Debug)]
pub struct TrajMembership {
    /// Sensed-disk assignment per knot `1..=N`; empty disables disk terms.
    pub knot_disks: Vec<usize>,
    pub setpoint_disk: Option<usize>,
}

pub struct TrajectoryNlp<'a> {
    pub model: &'a dyn SmoothDynamics,
    pub layout: Layout,
    pub x0: Vec<f64>,
    /// State box (first n coordinates of the `(x, u)` box).
    pub state_lower: Vec<f64>,
    pub state_upper: Vec<f64>,
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
    /// Discovered obstacles only.
    pub obstacles: Vec<Obstacle>,
    pub sensed: Vec<[f64; 2]>,
    pub sense_radius: f64,
    pub learning_membership: TrajMembership,
    pub backup_membership: Option<TrajMembership>,
    pub q: WeightMatrix,
    pub r_w: WeightMatrix,
    pub p_w: WeightMatrix,
    pub y_desired: Vec<f64>,
    pub epsilon: f64,
    /// Weight on the tracking sum in the objective: 1 for the proposed
    /// scheme, epsilon for the baseline.
    pub tracking_weight: f64,
    /// Margined convergence budget; `None` disables the constraint.
    pub budget: Option<f64>,
    pub budget_margin: f64,
    /// Manifold margin used on setpoint constraints.
    pub lambda: f64,
    /// Backoff on knot memberships so exact set checks pass afterwards.
    pub eta: f64,
    /// Scale on steady-state equalities; tightens setpoint residuals.
    pub steady_scale: f64,
    ineq: Vec<Ineq>,
}

struct Rollout {
    /// Flat, `(N+1) * n`.
    states: Vec<f64>,
}

impl Rollout {
    fn state(&self, n: usize, k: usize) -> &[f64] {
        &self.states[k * n..(k + 1) * n]
    }
}

impl<'a> TrajectoryNlp<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &'a dyn SmoothDynamics,
        layout: Layout,
        x0: Vec<f64>,
        state_lower: Vec<f64>,
        state_upper: Vec<f64>,
        input_lower: Vec<f64>,
        input_upper: Vec<f64>,
        obstacles: Vec<Obstacle>,
        sensed: Vec<[f64; 2]>,
        sense_radius: f64,
        learning_membership: TrajMembership,
        backup_membership: Option<TrajMembership>,
        q: WeightMatrix,
        r_w: WeightMatrix,
        p_w: WeightMatrix,
        y_desired: Vec<f64>,
        epsilon: f64,
        tracking_weight: f64,
        budget: Option<f64>,
        budget_margin: f64,
        lambda: f64,
    ) -> Self {
        let mut nlp = TrajectoryNlp {
            model,
            layout,
            x0,
            state_lower,
            state_upper,
            input_lower,
            input_upper,
            obstacles,
            sensed,
            sense_radius,
            learning_membership,
            backup_membership,
            q,
            r_w,
            p_w,
            y_desired,
            epsilon,
            tracking_weight,
            budget,
            budget_margin,
            lambda,
            eta: 1e-4,
            steady_scale: 1e3,
            ineq: Vec::new(),
        };
        nlp.build_descriptors();
        nlp
    }

    fn build_descriptors(&mut self) {
        let n = self.layout.n;
        let horizon = self.layout.horizon;
        let mut list = Vec::new();
        let trajs: Vec<(Traj, &TrajMembership)> = match &self.backup_membership {
            Some(b) => vec![
                (Traj::Learning, &self.learning_membership),
                (Traj::Backup, b),
            ],
            None => vec![(Traj::Learning, &self.learning_membership)],
        };
        for (traj, membership) in &trajs {
            for k in 1..=horizon {
                for d in 0..n {
                    if self.state_lower[d].is_finite() {
                        list.push(Ineq::KnotLower {
                            traj: *traj,
                            k,
                            dim: d,
                        });
                    }
                    if self.state_upper[d].is_finite() {
                        list.push(Ineq::KnotUpper {
                            traj: *traj,
                            k,
                            dim: d,
                        });
                    }
                }
                for ob in 0..self.obstacles.len() {
                    list.push(Ineq::KnotObstacle { traj: *traj, k, ob });
                }
                if !membership.knot_disks.is_empty() {
                    list.push(Ineq::KnotDisk {
                        traj: *traj,
                        k,
                        disk: membership.knot_disks[k - 1],
                    });
                }
            }
            for ob in 0..self.obstacles.len() {
                list.push(Ineq::SetpointObstacle { traj: *traj, ob });
            }
            if let Some(disk) = membership.setpoint_disk {
                list.push(Ineq::SetpointDisk { traj: *traj, disk });
            }
        }
        if self.budget.is_some() {
            list.push(Ineq::Budget);
        }
        self.ineq = list;
    }

    fn setpoint_of(&self, z: &[f64], traj: Traj) -> Setpoint {
        let (n, m) = (self.layout.n, self.layout.m);
        let off = match traj {
            Traj::Learning => self.layout.rl(),
            Traj::Backup => self.layout.rb(),
        };
        Setpoint::new(z[off..off + n].to_vec(), z[off + n..off + n + m].to_vec())
    }

    fn input_at(&self, z: &[f64], traj: Traj, k: usize) -> Vec<f64> {
        let m = self.layout.m;
        if k == 0 {
            return z[..m].to_vec();
        }
        let off = match traj {
            Traj::Learning => self.layout.ul(k),
            Traj::Backup => self.layout.ub(k),
        };
        z[off..off + m].to_vec()
    }

    fn rollout(&self, z: &[f64], traj: Traj) -> Rollout {
        let (n, horizon) = (self.layout.n, self.layout.horizon);
        let mut states = vec![0.0; (horizon + 1) * n];
        states[..n].copy_from_slice(&self.x0);
        for k in 0..horizon {
            let u = self.input_at(z, traj, k);
            let (head, tail) = states.split_at_mut((k + 1) * n);
            let x = &head[k * n..];
            self.model.step_into(x, &u, &mut tail[..n]);
        }
        Rollout { states }
    }

    pub fn decode(&self, z: &[f64]) -> (Vec<Vec<f64>>, Option<Vec<Vec<f64>>>, Setpoint, Option<Setpoint>) {
        let horizon = self.layout.horizon;
        let ul: Vec<Vec<f64>> = (0..horizon).map(|k| self.input_at(z, Traj::Learning, k)).collect();
        let rl = self.setpoint_of(z, Traj::Learning);
        if self.layout.two_traj {
            let ub: Vec<Vec<f64>> = (0..horizon).map(|k| self.input_at(z, Traj::Backup, k)).collect();
            let rb = self.setpoint_of(z, Traj::Backup);
            (ul, Some(ub), rl, Some(rb))
        } else {
            (ul, None, rl, None)
        }
    }

    pub fn encode(
        &self,
        learning_inputs: &[Vec<f64>],
        backup_inputs: Option<&[Vec<f64>]>,
        rl: &Setpoint,
        rb: Option<&Setpoint>,
    ) -> Vec<f64> {
        let lay = self.layout;
        let mut z = vec![0.0; lay.total()];
        z[..lay.m].copy_from_slice(&learning_inputs[0]);
        for k in 1..lay.horizon {
            z[lay.ul(k)..lay.ul(k) + lay.m].copy_from_slice(&learning_inputs[k]);
        }
        if lay.two_traj {
            let ub = backup_inputs.expect("backup inputs required");
            for k in 1..lay.horizon {
                z[lay.ub(k)..lay.ub(k) + lay.m].copy_from_slice(&ub[k]);
            }
        }
        let rl_off = lay.rl();
        z[rl_off..rl_off + lay.n].copy_from_slice(&rl.x);
        z[rl_off + lay.n..rl_off + lay.n + lay.m].copy_from_slice(&rl.u);
        if lay.two_traj {
            let rb = rb.expect("backup setpoint required");
            let rb_off = lay.rb();
            z[rb_off..rb_off + lay.n].copy_from_slice(&rb.x);
            z[rb_off + lay.n..rb_off + lay.n + lay.m].copy_from_slice(&rb.u);
        }
        z
    }

    fn stage_sum(&self, z: &[f64], roll: &Rollout, traj: Traj, r: &Setpoint) -> f64 {
        let (n, horizon) = (self.layout.n, self.layout.horizon);
        let mut total = 0.0;
        let mut dx = vec![0.0; n];
        let mut du = vec![0.0; self.layout.m];
        for k in 0..horizon {
            let x = roll.state(n, k);
            for i in 0..n {
                dx[i] = x[i] - r.x[i];
            }
            let u = self.input_at(z, traj, k);
            for i in 0..du.len() {
                du[i] = u[i] - r.u[i];
            }
            total += self.q.quad(&dx) + self.r_w.quad(&du);
        }
        total
    }

    fn offset_of(&self, r: &Setpoint) -> f64 {
        let p = self.y_desired.len();
        let d: Vec<f64> = (0..p).map(|i| r.x[i] - self.y_desired[i]).collect();
        self.p_w.quad(&d)
    }

    fn ineq_value(&self, which: Ineq, rolls: &[Rollout], z: &[f64]) -> f64 {
        let n = self.layout.n;
        let roll = |t: Traj| -> &Rollout {
            match t {
                Traj::Learning => &rolls[0],
                Traj::Backup => &rolls[1],
            }
        };
        match which {
            Ineq::KnotLower { traj, k, dim } => {
                (self.state_lower[dim] + self.eta) - roll(traj).state(n, k)[dim]
            }
            Ineq::KnotUpper { traj, k, dim } => {
                roll(traj).state(n, k)[dim] - (self.state_upper[dim] - self.eta)
            }
            Ineq::KnotObstacle { traj, k, ob } => {
                let y = roll(traj).state(n, k);
                let o = &self.obstacles[ob];
                let d2 = (y[0] - o.center[0]).powi(2) + (y[1] - o.center[1]).powi(2);
                (o.radius + self.eta).powi(2) - d2
            }
            Ineq::KnotDisk { traj, k, disk } => {
                let y = roll(traj).state(n, k);
                let c = &self.sensed[disk];
                let d2 = (y[0] - c[0]).powi(2) + (y[1] - c[1]).powi(2);
                d2 - (self.sense_radius - self.eta).powi(2)
            }
            Ineq::SetpointObstacle { traj, ob } => {
                let r = self.setpoint_of(z, traj);
                let o = &self.obstacles[ob];
                let d2 = (r.x[0] - o.center[0]).powi(2) + (r.x[1] - o.center[1]).powi(2);
                (o.radius + self.lambda + 1e-5).powi(2) - d2
            }
            Ineq::SetpointDisk { traj, disk } => {
                let r = self.setpoint_of(z, traj);
                let c = &self.sensed[disk];
                let d2 = (r.x[0] - c[0]).powi(2) + (r.x[1] - c[1]).powi(2);
                d2 - (self.sense_radius - self.lambda - 1e-5).powi(2)
            }
            Ineq::Budget => {
                let rb = self.setpoint_of(z, Traj::Backup);
                let vnb = self.stage_sum(z, &rolls[1], Traj::Backup, &rb);
                self.epsilon * vnb + self.offset_of(&rb)
                    - (self.budget.unwrap() - self.budget_margin)
            }
        }
    }

    /// Steady-state defect `scale * (f(r) - r.x)` written into `out`.
    fn steady_eq(&self, r: &Setpoint, out: &mut [f64]) {
        let n = self.layout.n;
        let mut next = vec![0.0; n];
        self.model.step_into(&r.x, &r.u, &mut next);
        for i in 0..n {
            out[i] = self.steady_scale * (next[i] - r.x[i]);
        }
    }
}

impl SmoothProblem for TrajectoryNlp<'_> {
    fn num_vars(&self) -> usize {
        self.layout.total()
    }

    fn num_eq(&self) -> usize {
        // terminal + steady per trajectory
        if self.layout.two_traj {
            4 * self.layout.n
        } else {
            2 * self.layout.n
        }
    }

    fn num_ineq(&self) -> usize {
        self.ineq.len()
    }

    fn bound(&self, i: usize) -> (f64, f64) {
        let lay = self.layout;
        let (n, m) = (lay.n, lay.m);
        let rl_off = lay.rl();
        if i < rl_off {
            // input variable
            let d = i % m;
            return (self.input_lower[d], self.input_upper[d]);
        }
        let local = (i - rl_off) % (n + m);
        let margin = self.lambda + 1e-5;
        if local < n {
            let lo = if self.state_lower[local].is_finite() {
                self.state_lower[local] + margin
            } else {
                f64::NEG_INFINITY
            };
            let hi = if self.state_upper[local].is_finite() {
                self.state_upper[local] - margin
            } else {
                f64::INFINITY
            };
            (lo, hi)
        } else {
            let d = local - n;
            (
                self.input_lower[d] + margin,
                self.input_upper[d] - margin,
            )
        }
    }

    fn eval(&self, z: &[f64], eq: &mut [f64], ineq: &mut [f64]) -> f64 {
        let n = self.layout.n;
        let rolls: Vec<Rollout> = if self.layout.two_traj {
            vec![self.rollout(z, Traj::Learning), self.rollout(z, Traj::Backup)]
        } else {
            vec![self.rollout(z, Traj::Learning)]
        };
        let rl = self.setpoint_of(z, Traj::Learning);

        // equalities: terminal then steady, learning then backup
        let xl_n = rolls[0].state(n, self.layout.horizon);
        for i in 0..n {
            eq[i] = xl_n[i] - rl.x[i];
        }
        self.steady_eq(&rl, &mut eq[n..2 * n]);
        if self.layout.two_traj {
            let rb = self.setpoint_of(z, Traj::Backup);
            let xb_n = rolls[1].state(n, self.layout.horizon);
            for i in 0..n {
                eq[2 * n + i] = xb_n[i] - rb.x[i];
            }
            self.steady_eq(&rb, &mut eq[3 * n..4 * n]);
        }

        for (j, desc) in self.ineq.iter().enumerate() {
            ineq[j] = self.ineq_value(*desc, &rolls, z);
        }

        let mut f = self.tracking_weight * self.stage_sum(z, &rolls[0], Traj::Learning, &rl)
            + self.offset_of(&rl);
        if self.layout.two_traj {
            let rb = self.setpoint_of(z, Traj::Backup);
            f += self.epsilon * self.offset_of(&rb);
        }
        f
    }

    fn grad_weighted(&self, z: &[f64], w_obj: f64, w_eq: &[f64], w_ineq: &[f64], grad: &mut [f64]) {
        let lay = self.layout;
        let (n, m, horizon) = (lay.n, lay.m, lay.horizon);
        grad.fill(0.0);

        let trajs: &[Traj] = if lay.two_traj {
            &[Traj::Learning, Traj::Backup]
        } else {
            &[Traj::Learning]
        };
        let rolls: Vec<Rollout> = trajs.iter().map(|t| self.rollout(z, *t)).collect();

        // knot-state sources and direct input sources per trajectory
        let mut src: Vec<Vec<f64>> = trajs.iter().map(|_| vec![0.0; (horizon + 1) * n]).collect();
        let mut usrc: Vec<Vec<f64>> = trajs.iter().map(|_| vec![0.0; horizon * m]).collect();

        let idx_of = |t: Traj| -> usize {
            match t {
                Traj::Learning => 0,
                Traj::Backup => 1,
            }
        };

        // objective: tracking sum on learning + offsets
        {
            let rl = self.setpoint_of(z, Traj::Learning);
            let w = w_obj * self.tracking_weight;
            if w != 0.0 {
                self.add_tracking_sources(
                    z,
                    &rolls[0],
                    Traj::Learning,
                    &rl,
                    w,
                    &mut src[0],
                    &mut usrc[0],
                    grad,
                );
            }
            if w_obj != 0.0 {
                self.add_offset_grad(&rl, w_obj, lay.rl(), grad);
                if lay.two_traj {
                    let rb = self.setpoint_of(z, Traj::Backup);
                    self.add_offset_grad(&rb, w_obj * self.epsilon, lay.rb(), grad);
                }
            }
        }

        // equalities
        let mut jx = vec![0.0; n * n];
        let mut ju = vec![0.0; n * m];
        for (t_i, traj) in trajs.iter().enumerate() {
            let base = 2 * n * t_i;
            let r_off = match traj {
                Traj::Learning => lay.rl(),
                Traj::Backup => lay.rb(),
            };
            // terminal: x_N - r.x
            for i in 0..n {
                let w = w_eq[base + i];
                if w != 0.0 {
                    src[t_i][horizon * n + i] += w;
                    grad[r_off + i] -= w;
                }
            }
            // steady: scale * (f(r) - r.x)
            let r = self.setpoint_of(z, *traj);
            self.model.step_jacobians(&r.x, &r.u, &mut jx, &mut ju);
            for i in 0..n {
                let w = w_eq[base + n + i] * self.steady_scale;
                if w == 0.0 {
                    continue;
                }
                for d in 0..n {
                    let mut v = jx[i * n + d];
                    if i == d {
                        v -= 1.0;
                    }
                    grad[r_off + d] += w * v;
                }
                for d in 0..m {
                    grad[r_off + n + d] += w * ju[i * m + d];
                }
            }
        }

        // inequalities
        for (j, desc) in self.ineq.iter().enumerate() {
            let w = w_ineq[j];
            if w == 0.0 {
                continue;
            }
            match *desc {
                Ineq::KnotLower { traj, k, dim } => {
                    src[idx_of(traj)][k * n + dim] -= w;
                }
                Ineq::KnotUpper { traj, k, dim } => {
                    src[idx_of(traj)][k * n + dim] += w;
                }
                Ineq::KnotObstacle { traj, k, ob } => {
                    let t_i = idx_of(traj);
                    let y0 = rolls[t_i].state(n, k)[0] - self.obstacles[ob].center[0];
                    let y1 = rolls[t_i].state(n, k)[1] - self.obstacles[ob].center[1];
                    src[t_i][k * n] += w * -2.0 * y0;
                    src[t_i][k * n + 1] += w * -2.0 * y1;
                }
                Ineq::KnotDisk { traj, k, disk } => {
                    let t_i = idx_of(traj);
                    let y0 = rolls[t_i].state(n, k)[0] - self.sensed[disk][0];
                    let y1 = rolls[t_i].state(n, k)[1] - self.sensed[disk][1];
                    src[t_i][k * n] += w * 2.0 * y0;
                    src[t_i][k * n + 1] += w * 2.0 * y1;
                }
                Ineq::SetpointObstacle { traj, ob } => {
                    let off = match traj {
                        Traj::Learning => lay.rl(),
                        Traj::Backup => lay.rb(),
                    };
                    let dx0 = z[off] - self.obstacles[ob].center[0];
                    let dx1 = z[off + 1] - self.obstacles[ob].center[1];
                    grad[off] += w * -2.0 * dx0;
                    grad[off + 1] += w * -2.0 * dx1;
                }
                Ineq::SetpointDisk { traj, disk } => {
                    let off = match traj {
                        Traj::Learning => lay.rl(),
                        Traj::Backup => lay.rb(),
                    };
                    let dx0 = z[off] - self.sensed[disk][0];
                    let dx1 = z[off + 1] - self.sensed[disk][1];
                    grad[off] += w * 2.0 * dx0;
                    grad[off + 1] += w * 2.0 * dx1;
                }
                Ineq::Budget => {
                    let rb = self.setpoint_of(z, Traj::Backup);
                    self.add_tracking_sources(
                        z,
                        &rolls[1],
                        Traj::Backup,
                        &rb,
                        w * self.epsilon,
                        &mut src[1],
                        &mut usrc[1],
                        grad,
                    );
                    self.add_offset_grad(&rb, w, lay.rb(), grad);
                }
            }
        }

        // adjoint sweeps: fold state sources into input gradients
        for (t_i, traj) in trajs.iter().enumerate() {
            let mut p = src[t_i][horizon * n..].to_vec();
            for k in (0..horizon).rev() {
                let x = rolls[t_i].state(n, k);
                let u = self.input_at(z, *traj, k);
                self.model.step_jacobians(x, &u, &mut jx, &mut ju);
                // input gradient
                let uslot = if k == 0 {
                    lay.u0()
                } else {
                    match traj {
                        Traj::Learning => lay.ul(k),
                        Traj::Backup => lay.ub(k),
                    }
                };
                for d in 0..m {
                    let mut acc = usrc[t_i][k * m + d];
                    for i in 0..n {
                        acc += ju[i * m + d] * p[i];
                    }
                    grad[uslot + d] += acc;
                }
                if k == 0 {
                    break;
                }
                // costate
                let mut pk = vec![0.0; n];
                for d in 0..n {
                    let mut acc = src[t_i][k * n + d];
                    for i in 0..n {
                        acc += jx[i * n + d] * p[i];
                    }
                    pk[d] = acc;
                }
                p = pk;
            }
        }
    }
}

impl TrajectoryNlp<'_> {
    /// Adds `w * d/dz sum_k l(x_k, u_k, r)` into sources and setpoint slots.
    #[allow(clippy::too_many_arguments)]
    fn add_tracking_sources(
        &self,
        z: &[f64],
        roll: &Rollout,
        traj: Traj,
        r: &Setpoint,
        w: f64,
        src: &mut [f64],
        usrc: &mut [f64],
        grad: &mut [f64],
    ) {
        let lay = self.layout;
        let (n, m, horizon) = (lay.n, lay.m, lay.horizon);
        let r_off = match traj {
            Traj::Learning => lay.rl(),
            Traj::Backup => lay.rb(),
        };
        let mut dx = vec![0.0; n];
        let mut du = vec![0.0; m];
        for k in 0..horizon {
            let x = roll.state(n, k);
            for i in 0..n {
                dx[i] = x[i] - r.x[i];
            }
            // state source (k=0 is constant but writing is harmless: the
            // adjoint never reads slot 0 sources into gradients)
            self.q.add_scaled_grad(&dx, w, &mut src[k * n..(k + 1) * n]);
            // setpoint-x gradient gets the negative
            let mut neg = vec![0.0; n];
            self.q.add_scaled_grad(&dx, -w, &mut neg);
            for i in 0..n {
                grad[r_off + i] += neg[i];
            }
            let u = self.input_at(z, traj, k);
            for i in 0..m {
                du[i] = u[i] - r.u[i];
            }
            self.r_w
                .add_scaled_grad(&du, w, &mut usrc[k * m..(k + 1) * m]);
            let mut negu = vec![0.0; m];
            self.r_w.add_scaled_grad(&du, -w, &mut negu);
            for i in 0..m {
                grad[r_off + n + i] += negu[i];
            }
        }
    }

    fn add_offset_grad(&self, r: &Setpoint, w: f64, r_off: usize, grad: &mut [f64]) {
        let p = self.y_desired.len();
        let d: Vec<f64> = (0..p).map(|i| r.x[i] - self.y_desired[i]).collect();
        let mut g = vec![0.0; p];
        self.p_w.add_scaled_grad(&d, w, &mut g);
        for i in 0..p {
            grad[r_off + i] += g[i];
        }
    }

    /// Human-readable name of inequality `j`, for diagnostics.
    pub fn describe_ineq(&self, j: usize) -> String {
        format!("{:?}", self.ineq[j])
    }

    /// Nearest covering sensed disk per knot output; falls back to the
    /// nearest center when no disk covers (the solver then pulls the knot
    /// back in).
    pub fn assign_disks(sensed: &[[f64; 2]], radius: f64, outputs: &[[f64; 2]]) -> Vec<usize> {
        outputs
            .iter()
            .map(|y| {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (j, c) in sensed.iter().enumerate() {
                    let d = ((y[0] - c[0]).powi(2) + (y[1] - c[1]).powi(2)).sqrt();
                    let covered = d <= radius;
                    let best_covered = best_d <= radius;
                    let better = match (covered, best_covered) {
                        (true, false) => true,
                        (false, true) => false,
                        _ => d < best_d,
                    };
                    if better {
                        best = j;
                        best_d = d;
                    }
                }
                best
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Bicycle, BicycleParams};
    use crate::solver::check_gradients;

    fn small_nlp(model: &Bicycle) -> TrajectoryNlp<'_> {
        let deg = std::f64::consts::PI / 180.0;
        let horizon = 6;
        let layout = Layout {
            n: 5,
            m: 2,
            horizon,
            two_traj: true,
        };
        TrajectoryNlp::new(
            model,
            layout,
            vec![1.5, 0.0, 0.0, 5.0, 0.0],
            vec![
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
                -1.0,
                -37.0 * deg,
            ],
            vec![12.0, 2.0, f64::INFINITY, 36.0, 37.0 * deg],
            vec![-10.0, -10.0 * deg],
            vec![1.0, 10.0 * deg],
            vec![
                Obstacle {
                    center: [4.0, 0.3],
                    radius: 0.51,
                },
                Obstacle {
                    center: [4.0, -0.3],
                    radius: 0.51,
                },
            ],
            vec![[1.5, 0.0]],
            2.5,
            TrajMembership {
                knot_disks: Vec::new(),
                setpoint_disk: None,
            },
            Some(TrajMembership {
                knot_disks: vec![0; horizon],
                setpoint_disk: Some(0),
            }),
            WeightMatrix::Diagonal(vec![1.0, 1.0, 1e-5, 1e-5, 1e-5]),
            WeightMatrix::Diagonal(vec![1.0, 1.0]),
            WeightMatrix::identity(2),
            vec![12.0, 1.0],
            0.01,
            1.0,
            Some(50.0),
            1e-4,
            0.01,
        )
    }

    #[test]
    fn layout_offsets_are_disjoint_and_total() {
        let lay = Layout {
            n: 5,
            m: 2,
            horizon: 6,
            two_traj: true,
        };
        assert_eq!(lay.u0(), 0);
        assert_eq!(lay.ul(1), 2);
        assert_eq!(lay.ub(1), 2 + 5 * 2);
        assert_eq!(lay.rl(), 2 + 2 * 5 * 2);
        assert_eq!(lay.rb(), lay.rl() + 7);
        assert_eq!(lay.total(), lay.rb() + 7);
    }

    #[test]
    fn encode_decode_roundtrip() {
        let model = Bicycle::new(BicycleParams::default());
        let nlp = small_nlp(&model);
        let ul: Vec<Vec<f64>> = (0..6).map(|k| vec![0.1 * k as f64, 0.01]).collect();
        let mut ub = ul.clone();
        for u in ub.iter_mut().skip(1) {
            u[0] -= 0.05;
        }
        let rl = Setpoint::new(vec![3.0, 0.5, 0.1, 0.0, 0.0], vec![0.0, 0.0]);
        let rb = Setpoint::new(vec![2.5, 0.0, 0.0, 0.0, 0.0], vec![0.0, 0.0]);
        let z = nlp.encode(&ul, Some(&ub), &rl, Some(&rb));
        let (ul2, ub2, rl2, rb2) = nlp.decode(&z);
        assert_eq!(ul2, ul);
        assert_eq!(ub2.unwrap()[1..], ub[1..]); // first input is shared
        assert_eq!(rl2, rl);
        assert_eq!(rb2.unwrap(), rb);
    }

    #[test]
    fn weighted_gradients_match_finite_differences() {
        let model = Bicycle::new(BicycleParams::default());
        let nlp = small_nlp(&model);
        let ul: Vec<Vec<f64>> = (0..6).map(|_| vec![-0.5, 0.02]).collect();
        let ub: Vec<Vec<f64>> = (0..6).map(|_| vec![-0.5, -0.01]).collect();
        let rl = Setpoint::new(vec![2.6, 0.2, 0.05, 0.0, 0.0], vec![0.0, 0.0]);
        let rb = Setpoint::new(vec![2.4, -0.1, 0.0, 0.0, 0.0], vec![0.0, 0.0]);
        let z = nlp.encode(&ul, Some(&ub), &rl, Some(&rb));
        let rep = check_gradients(&nlp, &z);
        assert!(
            rep.max_relative_deviation < 1e-4,
            "deviation {}",
            rep.max_relative_deviation
        );
    }

    #[test]
    fn disk_assignment_prefers_covering_disks() {
        let sensed = vec![[0.0, 0.0], [3.0, 0.0]];
        let assign = TrajectoryNlp::assign_disks(&sensed, 2.0, &[[0.5, 0.0], [2.6, 0.0], [5.5, 0.0]]);
        assert_eq!(assign, vec![0, 1, 1]);
    }
}
