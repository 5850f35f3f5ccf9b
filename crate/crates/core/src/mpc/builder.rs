//! Assembles the per-step optimization problem for either back-end.

use crate::costs::{CostModel, StageCost, WeightMatrix};
use crate::environment::Setpoint;
use crate::error::Error;
use crate::solver::{DiscreteTrajectoryProblem, FinitePairs, NlpSpec};
use crate::Result;

use super::nlp::{Layout, TrajMembership, TrajectoryNlp};
use super::{ContinuousWorld, FiniteWorld, Mode, MpcConfig, ProblemWorld, TrajectoryPair};

/// Builds the step problem: the two-trajectory program with the convergence
/// budget (or its baseline degeneration) against the current knowledge sets.
/// The warm start fixes the sensed-disk assignments of the smooth encoding.
pub fn build_proposed_problem<'a>(
    world: &'a ProblemWorld<'a>,
    cfg: &MpcConfig,
    costs: &'a CostModel,
    x_t: &[f64],
    budget: Option<f64>,
    warm: &TrajectoryPair,
) -> Result<NlpSpec<'a>> {
    match world {
        ProblemWorld::Continuous(w) => Ok(NlpSpec::Smooth(Box::new(build_continuous_nlp(
            w, cfg, costs, x_t, budget, warm,
        )?))),
        ProblemWorld::Finite(w) => Ok(NlpSpec::Discrete(build_finite_problem(
            w, cfg, costs, x_t, budget,
        )?)),
    }
}

/// Quadratic weights of the scenario cost; continuous worlds require them.
fn quadratic_weights(costs: &CostModel) -> Result<(WeightMatrix, WeightMatrix)> {
    match &costs.stage {
        StageCost::Quadratic { q, r } => Ok((q.clone(), r.clone())),
        StageCost::Tabular(_) => Err(Error::Config(
            "continuous scenarios need a quadratic stage cost".into(),
        )),
    }
}

fn offset_weights(costs: &CostModel, output_dim: usize) -> (WeightMatrix, Vec<f64>) {
    match &costs.offset {
        crate::costs::OffsetCost::Quadratic { p, y_desired } => (p.clone(), y_desired.clone()),
        crate::costs::OffsetCost::None => {
            (WeightMatrix::Diagonal(vec![0.0; output_dim]), vec![0.0; output_dim])
        }
    }
}

pub fn build_continuous_nlp<'a>(
    w: &ContinuousWorld<'a>,
    cfg: &MpcConfig,
    costs: &CostModel,
    x_t: &[f64],
    budget: Option<f64>,
    warm: &TrajectoryPair,
) -> Result<TrajectoryNlp<'a>> {
    let model = w.model;
    let n = model.state_dim();
    let m = model.input_dim();
    let k = w.knowledge;
    let (q, r_w) = quadratic_weights(costs)?;
    let (p_w, y_desired) = offset_weights(costs, model.output_dim());

    let state_lower = k.z_lower[..n].to_vec();
    let state_upper = k.z_upper[..n].to_vec();
    let input_lower = k.z_lower[n..].to_vec();
    let input_upper = k.z_upper[n..].to_vec();
    let obstacles: Vec<_> = k
        .discovered
        .iter()
        .map(|&i| k.obstacles[i])
        .collect();

    let baseline = cfg.mode == Mode::Baseline;
    let layout = Layout {
        n,
        m,
        horizon: cfg.horizon,
        two_traj: !baseline,
    };

    let knot_outputs = |traj: &crate::dynamics::Trajectory| -> Vec<[f64; 2]> {
        (1..=cfg.horizon)
            .map(|i| [traj.states[i][0], traj.states[i][1]])
            .collect()
    };
    let setpoint_disk = |r: &Setpoint| -> usize {
        let y = [r.x[0], r.x[1]];
        TrajectoryNlp::assign_disks(
            &k.sensed_centers,
            k.sense_radius - cfg.lambda - 1e-5,
            &[y],
        )[0]
    };

    let (learning_membership, backup_membership) = if baseline {
        (
            TrajMembership {
                knot_disks: TrajectoryNlp::assign_disks(
                    &k.sensed_centers,
                    k.sense_radius,
                    &knot_outputs(&warm.learning),
                ),
                setpoint_disk: Some(setpoint_disk(&warm.learning_setpoint)),
            },
            None,
        )
    } else {
        (
            TrajMembership {
                knot_disks: Vec::new(),
                setpoint_disk: None,
            },
            Some(TrajMembership {
                knot_disks: TrajectoryNlp::assign_disks(
                    &k.sensed_centers,
                    k.sense_radius,
                    &knot_outputs(&warm.backup),
                ),
                setpoint_disk: Some(setpoint_disk(&warm.backup_setpoint)),
            }),
        )
    };

    let budget_margin = budget.map_or(0.0, |b| 1e-4 * (1.0 + b.abs()));
    Ok(TrajectoryNlp::new(
        model,
        layout,
        x_t.to_vec(),
        state_lower,
        state_upper,
        input_lower,
        input_upper,
        obstacles,
        k.sensed_centers.clone(),
        k.sense_radius,
        learning_membership,
        backup_membership,
        q,
        r_w,
        p_w,
        y_desired,
        cfg.epsilon,
        if baseline { cfg.epsilon } else { 1.0 },
        budget,
        budget_margin,
        cfg.lambda,
    ))
}

pub fn build_finite_problem<'a>(
    w: &FiniteWorld<'a>,
    cfg: &MpcConfig,
    costs: &'a CostModel,
    x_t: &[f64],
    budget: Option<f64>,
) -> Result<DiscreteTrajectoryProblem<'a>> {
    let model = w.model;
    let safe = FinitePairs::new(&w.knowledge.safe_pairs);
    let estimated = FinitePairs::new(&w.knowledge.estimated_pairs());

    let (backup_setpoints, learning_setpoints) = match w.fixed_setpoints {
        Some(list) => (list.to_vec(), list.to_vec()),
        None => (safe.steady_pairs(model), estimated.steady_pairs(model)),
    };
    if backup_setpoints.is_empty() || learning_setpoints.is_empty() {
        return Err(Error::NoSteadySetpoint);
    }

    Ok(DiscreteTrajectoryProblem {
        model,
        horizon: cfg.horizon,
        x0: x_t.to_vec(),
        learning_pairs: estimated,
        backup_pairs: safe,
        learning_setpoints,
        backup_setpoints,
        stage: Box::new(move |x, u, r| costs.stage_cost(x, u, r)),
        terminal: Box::new(move |x, r| costs.terminal_cost(x, r)),
        offset: Box::new(move |r| {
            let y = model.output(&r.x, &r.u);
            costs.offset_cost_of_output(&y)
        }),
        epsilon: cfg.epsilon,
        budget,
        baseline: cfg.mode == Mode::Baseline,
    })
}
