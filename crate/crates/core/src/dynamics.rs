//! Discrete-time plant models behind one interface.
//!
//! Two models ship with the crate: the kinematic bicycle car under
//! forward-Euler discretization (the only integrator used here) and a
//! one-dimensional finite system `x+ = u` whose trajectories stay on exact
//! integers.

use serde::{Deserialize, Serialize};

use crate::environment::Setpoint;
use crate::error::Error;
use crate::util::dist2;
use crate::Result;

/// A deterministic, time-invariant, discrete-time system with an output map.
///
/// `step_into` and `output_into` are total on their declared dimensions and
/// never mutate their arguments.
pub trait SystemModel {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Writes `f(x, u)` into `out`.
    fn step_into(&self, x: &[f64], u: &[f64], out: &mut [f64]);

    /// Writes `h(x, u)` into `out`.
    fn output_into(&self, x: &[f64], u: &[f64], out: &mut [f64]);

    /// Sampling time of the underlying continuous model, when there is one.
    fn sample_time(&self) -> Option<f64> {
        None
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim()];
        self.step_into(x, u, &mut out);
        out
    }

    fn output(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.output_into(x, u, &mut out);
        out
    }

    fn check_dims(&self, x: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                what: "state",
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        if u.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "input",
                expected: self.input_dim(),
                got: u.len(),
            });
        }
        Ok(())
    }
}

/// Models with hand-coded step Jacobians, as needed by the smooth solver.
/// The output map is assumed to read the first `output_dim` state coordinates.
pub trait SmoothDynamics: SystemModel {
    /// Writes `df/dx` (row-major `n x n`) and `df/du` (row-major `n x m`)
    /// evaluated at `(x, u)`.
    fn step_jacobians(&self, x: &[f64], u: &[f64], jx: &mut [f64], ju: &mut [f64]);
}

/// Kinematic bicycle parameters.
///
/// `l_r` is the distance from the center of mass to the rear axle.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BicycleParams {
    pub l_r: f64,
    pub sample_time: f64,
}

impl Default for BicycleParams {
    fn default() -> Self {
        BicycleParams {
            l_r: 1.7,
            sample_time: 0.2,
        }
    }
}

impl BicycleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.l_r > 0.0) {
            return Err(Error::Config(format!("l_r must be positive, got {}", self.l_r)));
        }
        if !(self.sample_time > 0.0) {
            return Err(Error::Config(format!(
                "sample_time must be positive, got {}",
                self.sample_time
            )));
        }
        Ok(())
    }
}

/// Kinematic bicycle car, state `[x1, x2, psi, v, beta]`, input `[u1, u2]`
/// (longitudinal acceleration, steering-angle rate), output `[x1, x2]`.
/// Angles in radians.
#[derive(Clone, Copy, Debug)]
pub struct Bicycle {
    pub params: BicycleParams,
}

impl Bicycle {
    pub fn new(params: BicycleParams) -> Self {
        Bicycle { params }
    }

    /// Continuous-time state derivative.
    pub fn derivative(&self, x: &[f64], u: &[f64]) -> [f64; 5] {
        let (psi, v, beta) = (x[2], x[3], x[4]);
        [
            v * (psi + beta).cos(),
            v * (psi + beta).sin(),
            v / self.params.l_r * beta.sin(),
            u[0],
            u[1],
        ]
    }
}

impl SystemModel for Bicycle {
    fn state_dim(&self) -> usize {
        5
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        2
    }

    fn step_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let h = self.params.sample_time;
        let d = self.derivative(x, u);
        for i in 0..5 {
            out[i] = x[i] + h * d[i];
        }
    }

    fn output_into(&self, x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = x[0];
        out[1] = x[1];
    }

    fn sample_time(&self) -> Option<f64> {
        Some(self.params.sample_time)
    }
}

impl SmoothDynamics for Bicycle {
    fn step_jacobians(&self, x: &[f64], _u: &[f64], jx: &mut [f64], ju: &mut [f64]) {
        let h = self.params.sample_time;
        let (psi, v, beta) = (x[2], x[3], x[4]);
        let (s, c) = (psi + beta).sin_cos();
        let (sb, cb) = beta.sin_cos();
        let l = self.params.l_r;

        // jx = I + h * dg/dx, row-major 5x5
        jx.fill(0.0);
        for i in 0..5 {
            jx[i * 5 + i] = 1.0;
        }
        jx[2] += -h * v * s; // dx1/dpsi
        jx[3] += h * c; // dx1/dv
        jx[4] += -h * v * s; // dx1/dbeta
        jx[5 + 2] += h * v * c;
        jx[5 + 3] += h * s;
        jx[5 + 4] += h * v * c;
        jx[2 * 5 + 3] += h * sb / l;
        jx[2 * 5 + 4] += h * v * cb / l;

        // ju, row-major 5x2
        ju.fill(0.0);
        ju[3 * 2] = h;
        ju[4 * 2 + 1] = h;
    }
}

/// One-dimensional finite system `x+ = u` from the counter-example scenario.
/// Output is the state itself. Exact on integers.
#[derive(Clone, Copy, Debug, Default)]
pub struct Integrator1d;

impl SystemModel for Integrator1d {
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }

    fn step_into(&self, _x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = u[0];
    }

    fn output_into(&self, x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = x[0];
    }
}

/// Convenience step for the bicycle with explicit parameter passing.
pub fn bicycle_step(x: &[f64], u: &[f64], params: &BicycleParams) -> Result<Vec<f64>> {
    let model = Bicycle::new(*params);
    model.check_dims(x, u)?;
    Ok(model.step(x, u))
}

/// `toy_step(x, u) = u`.
pub fn toy_step(x: i64, u: i64) -> i64 {
    let _ = x;
    u
}

/// An open-loop state/input sequence with `states.len() == inputs.len() + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// Maximum dynamic-consistency residual `||x_{k+1} - f(x_k, u_k)||`.
    pub fn consistency_residual(&self, model: &dyn SystemModel) -> f64 {
        let mut worst = 0.0f64;
        let mut buf = vec![0.0; model.state_dim()];
        for k in 0..self.inputs.len() {
            model.step_into(&self.states[k], &self.inputs[k], &mut buf);
            worst = worst.max(dist2(&buf, &self.states[k + 1]));
        }
        worst
    }
}

/// Simulates `model` from `x0` under `inputs`; the result satisfies the
/// dynamic-consistency invariant by construction.
pub fn rollout(model: &dyn SystemModel, x0: &[f64], inputs: &[Vec<f64>]) -> Result<Trajectory> {
    if inputs.is_empty() {
        return Err(Error::Config("rollout needs at least one input".into()));
    }
    model.check_dims(x0, &inputs[0])?;
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0.to_vec());
    for u in inputs {
        model.check_dims(x0, u)?;
        let next = model.step(states.last().unwrap(), u);
        states.push(next);
    }
    Ok(Trajectory {
        states,
        inputs: inputs.to_vec(),
    })
}

/// `||f(x, u) - x||` for a setpoint candidate; zero iff `(x, u)` is steady.
pub fn steady_residual(model: &dyn SystemModel, r: &Setpoint) -> f64 {
    let next = model.step(&r.x, &r.u);
    dist2(&next, &r.x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn car() -> Bicycle {
        Bicycle::new(BicycleParams::default())
    }

    #[test]
    fn straight_line_at_five_mps() {
        let x = bicycle_step(&[1.5, 0.0, 0.0, 5.0, 0.0], &[0.0, 0.0], &BicycleParams::default())
            .unwrap();
        assert_eq!(x, vec![2.5, 0.0, 0.0, 5.0, 0.0]);
    }

    #[test]
    fn rest_is_a_fixed_point() {
        let x = bicycle_step(&[0.0; 5], &[0.0, 0.0], &BicycleParams::default()).unwrap();
        assert_eq!(x, vec![0.0; 5]);
    }

    #[test]
    fn euler_update_matches_hand_evaluation() {
        // Independent scalar evaluation of the five update expressions.
        let (x1, x2, psi, v, beta) = (1.5, 0.0, 0.0, 5.0, 0.1);
        let (u1, u2) = (1.0, 0.05);
        let (h, lr) = (0.2, 1.7);
        let expected = [
            x1 + h * v * f64::cos(psi + beta),
            x2 + h * v * f64::sin(psi + beta),
            psi + h * v / lr * f64::sin(beta),
            v + h * u1,
            beta + h * u2,
        ];
        let got = bicycle_step(&[x1, x2, psi, v, beta], &[u1, u2], &BicycleParams::default())
            .unwrap();
        for i in 0..5 {
            assert!((got[i] - expected[i]).abs() < 1e-12, "coord {i}");
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let err = bicycle_step(&[0.0; 4], &[0.0, 0.0], &BicycleParams::default()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn toy_step_examples() {
        assert_eq!(toy_step(2, 1), 1);
        assert_eq!(toy_step(2, 2), 2);
        assert_eq!(toy_step(0, 0), 0);
    }

    #[test]
    fn toy_rollouts_reproduce_counter_example_trajectories() {
        let m = Integrator1d;
        let learning = rollout(&m, &[2.0], &[vec![2.0], vec![1.0], vec![0.0]]).unwrap();
        assert_eq!(
            learning.states,
            vec![vec![2.0], vec![2.0], vec![1.0], vec![0.0]]
        );
        let backup = rollout(&m, &[2.0], &[vec![2.0], vec![0.0], vec![0.0]]).unwrap();
        assert_eq!(
            backup.states,
            vec![vec![2.0], vec![2.0], vec![0.0], vec![0.0]]
        );
    }

    #[test]
    fn steady_residual_examples() {
        let m = car();
        let rest = Setpoint {
            x: vec![3.0, -1.0, 0.4, 0.0, 0.2],
            u: vec![0.0, 0.0],
        };
        assert_eq!(steady_residual(&m, &rest), 0.0);

        let rolling = Setpoint {
            x: vec![0.0, 0.0, 0.0, 5.0, 0.0],
            u: vec![0.0, 0.0],
        };
        assert!((steady_residual(&m, &rolling) - 1.0).abs() < 1e-15);

        let toy = Setpoint {
            x: vec![0.0],
            u: vec![0.0],
        };
        assert_eq!(steady_residual(&Integrator1d, &toy), 0.0);
    }

    #[test]
    fn euler_is_first_order_consistent() {
        // One full step vs two half steps; the defect must shrink ~4x when
        // the step is halved again.
        let x = [1.0, -0.5, 0.3, 4.0, 0.2];
        let u = [0.5, 0.1];
        let defect = |h: f64| {
            let full = Bicycle::new(BicycleParams {
                l_r: 1.7,
                sample_time: h,
            });
            let half = Bicycle::new(BicycleParams {
                l_r: 1.7,
                sample_time: h / 2.0,
            });
            let a = full.step(&x, &u);
            let b = half.step(&half.step(&x, &u), &u);
            dist2(&a, &b)
        };
        let d1 = defect(0.2);
        let d2 = defect(0.1);
        let ratio = d1 / d2;
        assert!(
            (2.5..6.0).contains(&ratio),
            "expected ~O(h^2) defect, got ratio {ratio}"
        );
    }

    #[test]
    fn bicycle_jacobians_match_finite_differences() {
        let m = car();
        let x = [1.0, 2.0, 0.3, 4.0, -0.2];
        let u = [0.4, 0.05];
        let mut jx = vec![0.0; 25];
        let mut ju = vec![0.0; 10];
        m.step_jacobians(&x, &u, &mut jx, &mut ju);
        let eps = 1e-6;
        for j in 0..5 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += eps;
            xm[j] -= eps;
            let fp = m.step(&xp, &u);
            let fm = m.step(&xm, &u);
            for i in 0..5 {
                let fd = (fp[i] - fm[i]) / (2.0 * eps);
                assert!(
                    (jx[i * 5 + j] - fd).abs() < 1e-6,
                    "jx[{i}][{j}] = {} vs fd {}",
                    jx[i * 5 + j],
                    fd
                );
            }
        }
        for j in 0..2 {
            let mut up = u;
            let mut um = u;
            up[j] += eps;
            um[j] -= eps;
            let fp = m.step(&x, &up);
            let fm = m.step(&x, &um);
            for i in 0..5 {
                let fd = (fp[i] - fm[i]) / (2.0 * eps);
                assert!((ju[i * 2 + j] - fd).abs() < 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn rollout_then_extract_inputs_is_identity(
            seed_inputs in proptest::collection::vec(
                (-2.0f64..1.0, -0.17f64..0.17), 1..20)
        ) {
            let m = car();
            let inputs: Vec<Vec<f64>> =
                seed_inputs.iter().map(|(a, b)| vec![*a, *b]).collect();
            let traj = rollout(&m, &[1.5, 0.0, 0.0, 5.0, 0.0], &inputs).unwrap();
            prop_assert!(traj.consistency_residual(&m) == 0.0);
            let again = rollout(&m, &traj.states[0], &traj.inputs).unwrap();
            prop_assert_eq!(again.states, traj.states);
        }
    }
}
