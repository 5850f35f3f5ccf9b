//! Finite-world control step backed by the exact solver.

use crate::costs::CostModel;
use crate::dynamics::rollout;
use crate::error::Error;
use crate::solver::solve_exact_discrete;
use crate::Result;

use super::builder::build_finite_problem;
use super::{
    check_pair_feasibility, solution_from_pair, FiniteWorld, MpcConfig, MpcSolution,
    ProblemWorld, SolverOutcome, TrajectoryPair,
};

/// Solves the finite step problem globally; falls back to the candidate only
/// if enumeration reports infeasibility, which cannot happen while the
/// candidate itself is feasible.
pub fn solve_step(
    w: &FiniteWorld,
    cfg: &MpcConfig,
    costs: &CostModel,
    x_t: &[f64],
    budget: Option<f64>,
    candidate: &MpcSolution,
) -> Result<MpcSolution> {
    let problem = build_finite_problem(w, cfg, costs, x_t, budget)?;
    let solved = match solve_exact_discrete(&problem) {
        Ok(s) => s,
        Err(Error::Infeasible) => return Ok(candidate.clone()),
        Err(e) => return Err(e),
    };

    let learning = rollout(w.model, x_t, &solved.learning.plan.inputs)?;
    let backup = rollout(w.model, x_t, &solved.backup.plan.inputs)?;
    let pair = TrajectoryPair {
        learning,
        backup,
        learning_setpoint: solved.learning.setpoint.clone(),
        backup_setpoint: solved.backup.setpoint.clone(),
    };

    // The enumerated optimum must satisfy exactly what the candidate must.
    let world = ProblemWorld::Finite(FiniteWorld {
        model: w.model,
        knowledge: w.knowledge,
        fixed_setpoints: w.fixed_setpoints,
    });
    let residuals = check_pair_feasibility(&world, cfg, costs, &pair, budget)
        .map_err(Error::InvariantBreach)?;
    let sol = solution_from_pair(&world, cfg, costs, pair, SolverOutcome::Optimal, residuals)?;

    // Cross-check the enumerated objective against the recomputed one.
    if (sol.objective - solved.objective).abs() > 1e-9 {
        return Err(Error::InvariantBreach(format!(
            "enumerated objective {} disagrees with recomputation {}",
            solved.objective, sol.objective
        )));
    }
    if sol.objective > candidate.objective + 1e-9 {
        // The global optimum can never lose to a feasible candidate.
        return Err(Error::InvariantBreach(format!(
            "global optimum {} worse than candidate {}",
            sol.objective, candidate.objective
        )));
    }
    Ok(sol)
}
