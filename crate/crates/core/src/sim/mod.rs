//! Closed-loop simulator: sense, update knowledge, control, apply, log.

pub mod log;
pub mod scenario;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::costs::{CostModel, OffsetCost};
use crate::dynamics::SystemModel;
use crate::environment::{
    is_steady_admissible, sense, update_knowledge, KnowledgeState, Setpoint,
};
use crate::error::Error;
use crate::mpc::{
    candidate_shift, check_pair_feasibility, control_step, seeds, Mode, MpcConfig, MpcSolution,
    ProblemWorld, StorageState, TrajectoryPair,
};
use crate::solver::FinitePairs;
use crate::Result;

pub use log::{export_plot_data, read_run, write_run, RunHeader, StepLog};
pub use scenario::{
    car_partially_unknown, counterexample_toy, gap_grid_scenario, prop1_grid_scenario,
    random_grid_scenario, with_world, BuiltScenario, ModelInstance, ScenarioConfig,
};

/// Per-run overrides of the scenario defaults.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub mode: Option<Mode>,
    pub max_steps: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunOutcome {
    /// Steady convergence: stage cost below 1e-8 for 10 consecutive steps at
    /// an admissible setpoint.
    Converged,
    MaxSteps,
    /// Safety or feasibility abort; the log up to the abort is retained.
    Aborted(String),
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub header: RunHeader,
    pub logs: Vec<StepLog>,
    pub outcome: RunOutcome,
    pub final_state: Vec<f64>,
    pub final_output: Vec<f64>,
}

impl RunResult {
    pub fn converged(&self) -> bool {
        self.outcome == RunOutcome::Converged
    }

    /// Steps until the convergence window closed (or the full length).
    pub fn steps(&self) -> usize {
        self.logs.len()
    }
}

fn set_desired_output(costs: &mut CostModel, y: &[f64]) {
    if let OffsetCost::Quadratic { y_desired, .. } = &mut costs.offset {
        *y_desired = y.to_vec();
    }
}

/// Initial feasible plan before any solution exists.
fn initial_plan(
    built: &BuiltScenario,
    knowledge: &KnowledgeState,
    cfg: &MpcConfig,
    x0: &[f64],
) -> Result<TrajectoryPair> {
    match (&built.model, knowledge) {
        (ModelInstance::Bicycle(b), KnowledgeState::Continuous(k)) => {
            let n = b.state_dim();
            let project = |r: &mut Setpoint| {
                r.x[3] = 0.0;
                r.u = vec![0.0, 0.0];
            };
            seeds::brake_to_rest(b, cfg, &k.z_lower[n..], &k.z_upper[n..], x0, &project)
                .ok_or_else(|| {
                    Error::InfeasibleStart("cannot stop within the horizon".into())
                })
        }
        (ModelInstance::Toy(m), KnowledgeState::Finite(k)) => {
            // A budget-free exact solve yields a feasible plan whenever one
            // exists (the enumeration needs no warm start).
            let world = crate::mpc::FiniteWorld {
                model: m,
                knowledge: k,
                fixed_setpoints: built.fixed_setpoints.as_deref(),
            };
            let problem =
                crate::mpc::builder::build_finite_problem(&world, cfg, &built.costs, x0, None)?;
            let solved = crate::solver::solve_exact_discrete(&problem)
                .map_err(|e| Error::InfeasibleStart(e.to_string()))?;
            let learning = crate::dynamics::rollout(m, x0, &solved.learning.plan.inputs)?;
            let backup = crate::dynamics::rollout(m, x0, &solved.backup.plan.inputs)?;
            Ok(TrajectoryPair {
                learning,
                backup,
                learning_setpoint: solved.learning.setpoint.clone(),
                backup_setpoint: solved.backup.setpoint.clone(),
            })
        }
        _ => Err(Error::Config("model and environment kinds do not match".into())),
    }
}

/// Asserts the set-update condition: the previous optimal backup plan and
/// its terminal setpoint stay inside the updated safe set.
fn assert_set_update(
    built: &BuiltScenario,
    knowledge: &KnowledgeState,
    cfg: &MpcConfig,
    prev: &MpcSolution,
) -> Result<()> {
    let safe = knowledge.safe();
    let backup = &prev.pair.backup;
    for k in 0..backup.inputs.len() {
        if !safe.contains(&backup.states[k], &backup.inputs[k]) {
            return Err(Error::InvariantBreach(format!(
                "set update dropped backup knot {k} from the safe set"
            )));
        }
    }
    let model = built.model.system();
    if !is_steady_admissible(model, &prev.pair.backup_setpoint, &safe, cfg.lambda) {
        return Err(Error::InvariantBreach(
            "set update dropped the backup setpoint from the safe manifold".into(),
        ));
    }
    Ok(())
}

/// Simulates the closed loop. Aborts keep the log collected so far and are
/// reported in the outcome rather than as a hard error.
pub fn run_closed_loop(config: &ScenarioConfig, opts: &RunOptions) -> Result<RunResult> {
    let mut cfg = config.mpc.clone();
    if let Some(mode) = opts.mode {
        cfg.mode = mode;
    }
    let max_steps = opts.max_steps.unwrap_or(config.max_steps);
    let seed = opts.seed.unwrap_or(config.seed);

    let built = config.build()?;
    let model_instance = built.model.clone();
    let model: &dyn SystemModel = model_instance.system();
    let mut costs = built.costs.clone();
    let mut knowledge = built.knowledge.clone();
    let truth = knowledge.truth();
    let mut storage = StorageState::initial(&cfg);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let mut x = config.initial_state.clone();
    let mut u_check = scenario::neutral_input(&model_instance, &x);
    let mut prev_solution: Option<MpcSolution> = None;
    let mut logs: Vec<StepLog> = Vec::new();
    let mut quiet_steps = 0usize;
    let mut outcome = RunOutcome::MaxSteps;

    for t in 0..max_steps {
        for ev in &config.events {
            if ev.t == t {
                set_desired_output(&mut costs, &ev.y_desired);
            }
        }

        let report = match sense(&knowledge, model, &x, &u_check) {
            Ok(r) => r,
            Err(e) => {
                outcome = RunOutcome::Aborted(e.to_string());
                break;
            }
        };
        update_knowledge(&mut knowledge, &report);
        if let Some(prev) = &prev_solution {
            if let Err(e) = assert_set_update(&built, &knowledge, &cfg, prev) {
                outcome = RunOutcome::Aborted(e.to_string());
                break;
            }
        }

        let warm = match &prev_solution {
            Some(prev) => candidate_shift(model, prev, &x)?,
            None => initial_plan(&built, &knowledge, &cfg, &x)?,
        };

        let started = Instant::now();
        let stepped = with_world(
            &model_instance,
            &knowledge,
            built.fixed_setpoints.as_deref(),
            |world| control_step(world, &cfg, &costs, &storage, &x, &warm, &mut rng),
        )?;
        let (u, solution, storage_next) = match stepped {
            Ok(v) => v,
            Err(Error::RecursiveFeasibilityBreach(msg)) if t == 0 => {
                return Err(Error::InfeasibleStart(msg));
            }
            Err(e) => {
                outcome = RunOutcome::Aborted(e.to_string());
                break;
            }
        };
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;

        if !truth.contains(&x, &u) {
            outcome =
                RunOutcome::Aborted(format!("applied pair left the true set at t={t}"));
            break;
        }

        logs.push(StepLog {
            t,
            x: x.clone(),
            u: u.clone(),
            y: model.output(&x, &u),
            s: storage.s,
            f_hat: storage.f_hat,
            f_star: solution.f_star,
            objective: solution.objective,
            solution: solution.clone(),
            newly_discovered: report.newly_discovered.clone(),
            sensed_center: report.center.clone(),
            wall_ms,
        });

        let stage = costs
            .stage_cost(&x, &u, &solution.pair.backup_setpoint)
            .unwrap_or(f64::INFINITY);
        let admissible = is_steady_admissible(
            model,
            &solution.pair.backup_setpoint,
            &knowledge.safe(),
            cfg.lambda,
        );
        if stage < 1e-8 && admissible {
            quiet_steps += 1;
        } else {
            quiet_steps = 0;
        }

        x = model.step(&x, &u);
        u_check = u;
        storage = storage_next;
        prev_solution = Some(solution);

        if quiet_steps >= 10 {
            outcome = RunOutcome::Converged;
            break;
        }
    }

    let final_output = model.output(&x, &u_check);
    Ok(RunResult {
        header: RunHeader {
            scenario: config.clone(),
            seed,
            mode: cfg.mode,
        },
        logs,
        outcome,
        final_state: x,
        final_output,
    })
}

/// One comparison row per mode.
#[derive(Clone, Debug)]
pub struct ModeSummary {
    pub mode: Mode,
    pub final_output: Vec<f64>,
    pub final_offset_cost: f64,
    pub steps: usize,
    pub converged: bool,
    pub total_applied_stage_cost: f64,
}

/// Runs the scenario once per mode and tabulates the outcomes.
pub fn compare_modes(config: &ScenarioConfig, modes: &[Mode]) -> Result<Vec<ModeSummary>> {
    let built = config.build()?;
    let costs = built.costs.clone();
    let mut rows = Vec::new();
    for &mode in modes {
        let result = run_closed_loop(
            config,
            &RunOptions {
                mode: Some(mode),
                ..Default::default()
            },
        )?;
        if let RunOutcome::Aborted(reason) = &result.outcome {
            return Err(Error::InvariantBreach(format!(
                "{mode:?} run aborted: {reason}"
            )));
        }
        let total_applied_stage_cost = result
            .logs
            .iter()
            .filter_map(|l| costs.stage_cost(&l.x, &l.u, &l.solution.pair.backup_setpoint))
            .sum();
        rows.push(ModeSummary {
            mode,
            final_offset_cost: costs.offset_cost_of_output(&result.final_output),
            final_output: result.final_output.clone(),
            steps: result.steps(),
            converged: result.converged(),
            total_applied_stage_cost,
        });
    }
    Ok(rows)
}

/// Re-checks that a warm-start pair is feasible for the given scenario state;
/// exposed for tests that probe recursive feasibility directly.
pub fn pair_feasible_now(
    built: &BuiltScenario,
    knowledge: &KnowledgeState,
    cfg: &MpcConfig,
    costs: &CostModel,
    pair: &TrajectoryPair,
    budget: Option<f64>,
) -> Result<std::result::Result<(), String>> {
    with_world(
        &built.model,
        knowledge,
        built.fixed_setpoints.as_deref(),
        |world: &ProblemWorld| check_pair_feasibility(world, cfg, costs, pair, budget).map(|_| ()),
    )
}
