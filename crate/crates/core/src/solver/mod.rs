//! Two optimization back-ends behind one contract: an exact global solver
//! for finite scenarios and a smooth augmented-Lagrangian NLP solver for
//! continuous ones.

pub mod discrete;
pub mod smooth;

pub use discrete::{
    min_tracking_plan, solve_exact_discrete, DiscreteSide, DiscreteSolution,
    DiscreteTrajectoryProblem, DpPlan, FinitePairs, MAX_TRAJECTORIES,
};
pub use smooth::{check_gradients, solve_nlp, GradCheckReport, SmoothProblem};

use serde::{Deserialize, Serialize};

/// Solver tolerances. The defaults are declared engineering values, all
/// overridable from the scenario file.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SolveTolerances {
    /// Max accepted constraint violation, recomputed at the returned point.
    pub feas: f64,
    /// Projected-gradient stationarity target.
    pub stat: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
}

impl Default for SolveTolerances {
    fn default() -> Self {
        SolveTolerances {
            feas: 1e-6,
            stat: 1e-4,
            max_outer: 30,
            max_inner: 200,
            penalty_init: 10.0,
            penalty_growth: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Global optimum (exact back-end).
    Optimal,
    /// Feasible point satisfying first-order conditions (smooth back-end).
    LocalOptimal,
    /// Feasible but not certified stationary.
    Feasible,
    Infeasible,
    Failed,
}

/// Outcome of one smooth solve. Residuals are recomputed from the returned
/// point, never trusted from the inner loop.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub point: Vec<f64>,
    pub objective: f64,
    pub max_eq_residual: f64,
    pub max_ineq_violation: f64,
    pub stationarity: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// A problem ready for one of the two back-ends.
pub enum NlpSpec<'a> {
    Smooth(Box<dyn SmoothProblem + 'a>),
    Discrete(DiscreteTrajectoryProblem<'a>),
}

#[cfg(test)]
mod tests {
    use super::smooth::test_problems::Quadratic;
    use super::*;
    use crate::dynamics::SystemModel;

    /// 2-D single integrator used for the brute-force cross-check.
    struct Integrator2d;
    impl SystemModel for Integrator2d {
        fn state_dim(&self) -> usize {
            2
        }
        fn input_dim(&self) -> usize {
            2
        }
        fn output_dim(&self) -> usize {
            2
        }
        fn step_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
            out[0] = x[0] + u[0];
            out[1] = x[1] + u[1];
        }
        fn output_into(&self, x: &[f64], _u: &[f64], out: &mut [f64]) {
            out.copy_from_slice(&x[..2]);
        }
    }

    /// Two-step obstacle-avoidance instance: decision variables are the two
    /// input vectors, states follow by rollout.
    struct AvoidProblem {
        x0: [f64; 2],
        target: [f64; 2],
        disk: ([f64; 2], f64),
    }

    impl AvoidProblem {
        fn states(&self, z: &[f64]) -> ([f64; 2], [f64; 2]) {
            let x1 = [self.x0[0] + z[0], self.x0[1] + z[1]];
            let x2 = [x1[0] + z[2], x1[1] + z[3]];
            (x1, x2)
        }
        fn objective(&self, z: &[f64]) -> f64 {
            let (x1, x2) = self.states(z);
            let d1 = (x1[0] - self.target[0]).powi(2) + (x1[1] - self.target[1]).powi(2);
            let d2 = (x2[0] - self.target[0]).powi(2) + (x2[1] - self.target[1]).powi(2);
            let effort: f64 = z.iter().map(|v| 0.1 * v * v).sum();
            d1 + d2 + effort
        }
    }

    impl SmoothProblem for AvoidProblem {
        fn num_vars(&self) -> usize {
            4
        }
        fn num_eq(&self) -> usize {
            0
        }
        fn num_ineq(&self) -> usize {
            2
        }
        fn bound(&self, _i: usize) -> (f64, f64) {
            (-1.0, 1.0)
        }
        fn eval(&self, z: &[f64], _eq: &mut [f64], ineq: &mut [f64]) -> f64 {
            let (x1, x2) = self.states(z);
            let (c, r) = self.disk;
            ineq[0] = r * r - (x1[0] - c[0]).powi(2) - (x1[1] - c[1]).powi(2);
            ineq[1] = r * r - (x2[0] - c[0]).powi(2) - (x2[1] - c[1]).powi(2);
            self.objective(z)
        }
        fn grad_weighted(
            &self,
            z: &[f64],
            w_obj: f64,
            _w_eq: &[f64],
            w_ineq: &[f64],
            grad: &mut [f64],
        ) {
            let (x1, x2) = self.states(z);
            let (c, _) = self.disk;
            // d/dx sources per knot
            let mut s1 = [
                w_obj * 2.0 * (x1[0] - self.target[0]) + w_ineq[0] * -2.0 * (x1[0] - c[0]),
                w_obj * 2.0 * (x1[1] - self.target[1]) + w_ineq[0] * -2.0 * (x1[1] - c[1]),
            ];
            let s2 = [
                w_obj * 2.0 * (x2[0] - self.target[0]) + w_ineq[1] * -2.0 * (x2[0] - c[0]),
                w_obj * 2.0 * (x2[1] - self.target[1]) + w_ineq[1] * -2.0 * (x2[1] - c[1]),
            ];
            // backward: x2 depends on both inputs, x1 on the first
            grad[2] = s2[0] + w_obj * 0.2 * z[2];
            grad[3] = s2[1] + w_obj * 0.2 * z[3];
            s1[0] += s2[0];
            s1[1] += s2[1];
            grad[0] = s1[0] + w_obj * 0.2 * z[0];
            grad[1] = s1[1] + w_obj * 0.2 * z[1];
        }
    }

    #[test]
    fn nlp_matches_brute_force_grid_on_obstacle_instance() {
        let p = AvoidProblem {
            x0: [-1.0, 0.0],
            target: [1.0, 0.0],
            disk: ([0.0, 0.0], 0.5),
        };
        // brute force at resolution 0.05 over both inputs
        let grid: Vec<f64> = (0..=40).map(|i| -1.0 + 0.05 * i as f64).collect();
        let mut best = f64::INFINITY;
        let mut eq = vec![];
        let mut ineq = vec![0.0, 0.0];
        for a in &grid {
            for b in &grid {
                for c in &grid {
                    for d in &grid {
                        let z = [*a, *b, *c, *d];
                        let f = p.eval(&z, &mut eq, &mut ineq);
                        if ineq[0] <= 0.0 && ineq[1] <= 0.0 && f < best {
                            best = f;
                        }
                    }
                }
            }
        }
        let rep = solve_nlp(&p, &[0.0, 0.5, 0.0, -0.5], &SolveTolerances::default()).unwrap();
        assert!(rep.max_ineq_violation <= 1e-6);
        assert!(
            rep.objective <= best + 1e-2,
            "nlp {} vs grid {}",
            rep.objective,
            best
        );
        let check = check_gradients(&p, &rep.point);
        assert!(check.max_relative_deviation < 1e-6);
    }

    #[test]
    fn feasible_monotone_on_random_starts() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let p = Quadratic {
            target: vec![0.0, 0.0],
            sum_to_one: false,
            keep_out: Some(([0.0, 0.0], 1.0)),
            bounds: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut tried = 0;
        while tried < 100 {
            let start = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let mut eq = vec![];
            let mut ineq = vec![0.0];
            let f0 = p.eval(&start, &mut eq, &mut ineq);
            if ineq[0] > 0.0 {
                continue;
            }
            tried += 1;
            let rep = solve_nlp(&p, &start, &SolveTolerances::default()).unwrap();
            assert!(rep.objective <= f0 + 1e-9);
            assert!(rep.max_ineq_violation <= 1e-6);
        }
    }
}
