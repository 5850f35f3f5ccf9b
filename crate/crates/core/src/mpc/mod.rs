//! The two-trajectory controller: problem assembly for both back-ends, the
//! shift-candidate construction, the storage recursion and the per-step
//! control logic.
//!
//! Safety and convergence rest on the candidate-fallback rule: the shifted
//! previous backup plan is always feasible, so solver output is accepted
//! only when it beats the candidate and passes exact constraint checks
//! against the true sets.

pub mod builder;
pub mod finite;
pub mod nlp;
pub mod seeds;

pub use builder::build_proposed_problem;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::costs::CostModel;
use crate::dynamics::{rollout, SmoothDynamics, SystemModel, Trajectory};
use crate::environment::{
    is_steady_admissible, ContinuousKnowledge, FiniteKnowledge, Setpoint,
};
use crate::error::Error;
use crate::solver::{solve_nlp, SolveStatus, SolveTolerances};
use crate::util::dist2;
use crate::Result;

/// Controller operating mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Two trajectories with the convergence budget.
    Proposed,
    /// Two trajectories, no convergence budget.
    ProposedWithout9j,
    /// Single safe-set trajectory, objective `eps * V_N + T`.
    Baseline,
}

/// Initial value policy for the backup-cost bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FHat0 {
    /// Arbitrarily large: the budget constraint starts at t = 1.
    Unbounded,
    Value(f64),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MpcConfig {
    pub horizon: usize,
    pub epsilon: f64,
    pub alpha: f64,
    /// Manifold margin for setpoint admissibility.
    pub lambda: f64,
    pub mode: Mode,
    pub s0: f64,
    pub f_hat0: FHat0,
    pub tolerances: SolveTolerances,
    /// Multi-start cap per control step (warm start included).
    pub multi_starts: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            horizon: 50,
            epsilon: 0.01,
            alpha: 1.0,
            lambda: 0.01,
            mode: Mode::Proposed,
            s0: 1.0,
            f_hat0: FHat0::Unbounded,
            tolerances: SolveTolerances::default(),
            multi_starts: 4,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must be in (0,1], got {}", self.alpha)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.s0 < 0.0 {
            return Err(Error::Config("S0 must be nonnegative".into()));
        }
        if self.multi_starts == 0 || self.multi_starts > 4 {
            return Err(Error::Config("multi_starts must be in 1..=4".into()));
        }
        Ok(())
    }
}

/// Running storage scalars `(S_t, F_hat_t)`. `f_hat` is `None` while the
/// bound is still the arbitrarily-large initial one.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StorageState {
    pub s: f64,
    pub f_hat: Option<f64>,
    pub f_star_prev: Option<f64>,
}

impl StorageState {
    pub fn initial(cfg: &MpcConfig) -> Self {
        StorageState {
            s: cfg.s0,
            f_hat: match cfg.f_hat0 {
                FHat0::Unbounded => None,
                FHat0::Value(v) => Some(v),
            },
            f_star_prev: None,
        }
    }

    /// `S_t + F_hat_t`, the right-hand side of the convergence constraint.
    pub fn budget(&self) -> Option<f64> {
        self.f_hat.map(|f| self.s + f)
    }
}

/// Advances the storage recursion after a step with realized backup cost
/// `f_star` and first-stage cost `stage0`.
///
/// While the initial bound is unbounded the storage is carried over
/// unchanged, matching the start-at-t=1 convention for the constraint.
pub fn storage_update(
    storage: &StorageState,
    f_star: f64,
    stage0: f64,
    epsilon: f64,
    alpha: f64,
    budget_active: bool,
) -> Result<StorageState> {
    if budget_active {
        if let Some(b) = storage.budget() {
            if f_star > b + 1e-6 {
                return Err(Error::InvariantBreach(format!(
                    "realized backup cost {f_star} exceeds budget {b}"
                )));
            }
        }
    }
    let f_hat_next = f_star - epsilon * alpha * stage0;
    let s_next = match storage.f_hat {
        Some(f_hat_old) => storage.s + f_hat_old - f_star,
        None => storage.s,
    };
    Ok(StorageState {
        s: s_next,
        f_hat: Some(f_hat_next),
        f_star_prev: Some(f_star),
    })
}

/// The jointly optimized open-loop plans. Both share the current state and
/// the first input.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryPair {
    pub learning: Trajectory,
    pub backup: Trajectory,
    pub learning_setpoint: Setpoint,
    pub backup_setpoint: Setpoint,
}

impl TrajectoryPair {
    pub fn shared_first_input(&self) -> &[f64] {
        &self.backup.inputs[0]
    }

    pub fn validate_shared(&self) -> Result<()> {
        if self.learning.states[0] != self.backup.states[0] {
            return Err(Error::InvariantBreach("initial states differ".into()));
        }
        if self.learning.inputs[0] != self.backup.inputs[0] {
            return Err(Error::InvariantBreach("first inputs differ".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverOutcome {
    Optimal,
    LocalOptimal,
    CandidateFallback,
}

/// Max violations per constraint group, recomputed from the stored pair.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct ConstraintResiduals {
    pub dynamics: f64,
    pub terminal: f64,
    pub steady: f64,
    /// 0 when every visited pair is a member of its set, 1 otherwise.
    pub membership: f64,
    pub shared_first_input: f64,
    /// `max(0, F - budget)` when the budget constraint is active.
    pub budget: f64,
}

impl ConstraintResiduals {
    pub fn worst(&self) -> f64 {
        self.dynamics
            .max(self.terminal)
            .max(self.steady)
            .max(self.membership)
            .max(self.shared_first_input)
            .max(self.budget)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MpcSolution {
    pub pair: TrajectoryPair,
    pub objective: f64,
    /// Realized backup cost `eps * V_N(backup) + T(r_backup)`.
    pub f_star: f64,
    pub backup_tracking_cost: f64,
    pub solver_status: SolverOutcome,
    pub residuals: ConstraintResiduals,
}

/// World handles the controller needs to assemble its problem.
pub struct ContinuousWorld<'a> {
    pub model: &'a dyn SmoothDynamics,
    pub knowledge: &'a ContinuousKnowledge,
    /// Rest setpoint at a given output position.
    pub rest: &'a dyn Fn(&[f64]) -> Setpoint,
    /// Projects a near-steady setpoint to exact steadiness.
    pub project_steady: &'a dyn Fn(&mut Setpoint),
}

pub struct FiniteWorld<'a> {
    pub model: &'a dyn SystemModel,
    pub knowledge: &'a FiniteKnowledge,
    /// Overrides the steady-manifold setpoint candidates (terminal-set pin).
    pub fixed_setpoints: Option<&'a [Setpoint]>,
}

pub enum ProblemWorld<'a> {
    Continuous(ContinuousWorld<'a>),
    Finite(FiniteWorld<'a>),
}

impl ProblemWorld<'_> {
    pub fn model(&self) -> &dyn SystemModel {
        match self {
            ProblemWorld::Continuous(w) => w.model,
            ProblemWorld::Finite(w) => w.model,
        }
    }
}

/// Shifts the previous optimal backup plan one step and appends the terminal
/// controller (under terminal equality: the setpoint input and state). Both
/// candidate trajectories coincide.
pub fn candidate_shift(
    model: &dyn SystemModel,
    prev: &MpcSolution,
    x_next: &[f64],
) -> Result<TrajectoryPair> {
    let expected = &prev.pair.backup.states[1];
    let gap = dist2(expected, x_next);
    if gap > 1e-9 {
        return Err(Error::ModelInconsistency { norm: gap });
    }
    let mut inputs: Vec<Vec<f64>> = prev.pair.backup.inputs[1..].to_vec();
    inputs.push(prev.pair.backup_setpoint.u.clone());
    let traj = rollout(model, x_next, &inputs)?;
    Ok(TrajectoryPair {
        learning: traj.clone(),
        backup: traj,
        learning_setpoint: prev.pair.backup_setpoint.clone(),
        backup_setpoint: prev.pair.backup_setpoint.clone(),
    })
}

/// Exact feasibility check of a pair against the current sets and budget.
/// Tolerances: dynamics 1e-9, terminal equality 1e-5 (solver output drifts
/// below this), budget 1e-9, memberships exact.
pub fn check_pair_feasibility(
    world: &ProblemWorld,
    cfg: &MpcConfig,
    costs: &CostModel,
    pair: &TrajectoryPair,
    budget: Option<f64>,
) -> std::result::Result<ConstraintResiduals, String> {
    let model = world.model();
    pair.validate_shared().map_err(|e| e.to_string())?;
    let mut res = ConstraintResiduals::default();

    res.dynamics = pair
        .learning
        .consistency_residual(model)
        .max(pair.backup.consistency_residual(model));
    if res.dynamics > 1e-9 {
        return Err(format!("dynamic consistency residual {}", res.dynamics));
    }

    let (safe, estimated) = match world {
        ProblemWorld::Continuous(w) => (w.knowledge.safe(), w.knowledge.estimated()),
        ProblemWorld::Finite(w) => (w.knowledge.safe(), w.knowledge.estimated()),
    };

    let baseline = cfg.mode == Mode::Baseline;
    for k in 0..pair.backup.inputs.len() {
        let (x, u) = (&pair.backup.states[k], &pair.backup.inputs[k]);
        if !safe.contains(x, u) {
            return Err(format!("backup pair {k} outside the safe set: {x:?}"));
        }
    }
    if !baseline {
        for k in 0..pair.learning.inputs.len() {
            let (x, u) = (&pair.learning.states[k], &pair.learning.inputs[k]);
            if !estimated.contains(x, u) {
                return Err(format!("learning pair {k} outside the estimated set: {x:?}"));
            }
        }
    }

    let tl = dist_inf(pair.learning.states.last().unwrap(), &pair.learning_setpoint.x);
    let tb = dist_inf(pair.backup.states.last().unwrap(), &pair.backup_setpoint.x);
    res.terminal = tl.max(tb);
    if res.terminal > 1e-5 {
        return Err(format!("terminal equality residual {}", res.terminal));
    }

    res.steady = crate::dynamics::steady_residual(model, &pair.backup_setpoint)
        .max(crate::dynamics::steady_residual(model, &pair.learning_setpoint));
    if !is_steady_admissible(model, &pair.backup_setpoint, &safe, cfg.lambda) {
        return Err("backup setpoint not steady-admissible in the safe set".into());
    }
    if !baseline && !is_steady_admissible(model, &pair.learning_setpoint, &estimated, cfg.lambda)
    {
        return Err("learning setpoint not steady-admissible in the estimated set".into());
    }

    if let Some(b) = budget {
        let f = realized_backup_cost(model, cfg, costs, pair).map_err(|e| e.to_string())?;
        res.budget = (f - b).max(0.0);
        if f > b + 1e-9 {
            return Err(format!("backup cost {f} exceeds budget {b}"));
        }
    }
    Ok(res)
}

fn dist_inf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// `F = eps * V_N(backup) + T(r_backup)`.
pub fn realized_backup_cost(
    model: &dyn SystemModel,
    cfg: &MpcConfig,
    costs: &CostModel,
    pair: &TrajectoryPair,
) -> Result<f64> {
    let vn = costs.tracking_cost(&pair.backup, &pair.backup_setpoint)?;
    Ok(cfg.epsilon * vn + costs.offset_cost(model, &pair.backup_setpoint))
}

/// Objective value of a pair under the configured mode.
pub fn pair_objective(
    model: &dyn SystemModel,
    cfg: &MpcConfig,
    costs: &CostModel,
    pair: &TrajectoryPair,
) -> Result<f64> {
    let vn_l = costs.tracking_cost(&pair.learning, &pair.learning_setpoint)?;
    let t_l = costs.offset_cost(model, &pair.learning_setpoint);
    Ok(match cfg.mode {
        Mode::Baseline => cfg.epsilon * vn_l + t_l,
        _ => {
            let t_b = costs.offset_cost(model, &pair.backup_setpoint);
            vn_l + t_l + cfg.epsilon * t_b
        }
    })
}

fn solution_from_pair(
    world: &ProblemWorld,
    cfg: &MpcConfig,
    costs: &CostModel,
    pair: TrajectoryPair,
    status: SolverOutcome,
    residuals: ConstraintResiduals,
) -> Result<MpcSolution> {
    let model = world.model();
    let objective = pair_objective(model, cfg, costs, &pair)?;
    let vn_b = costs.tracking_cost(&pair.backup, &pair.backup_setpoint)?;
    let f_star = cfg.epsilon * vn_b + costs.offset_cost(model, &pair.backup_setpoint);
    Ok(MpcSolution {
        pair,
        objective,
        f_star,
        backup_tracking_cost: vn_b,
        solver_status: status,
        residuals,
    })
}

/// One controller step: solve from the warm start, fall back to the
/// candidate when the solver cannot beat it, advance the storage.
///
/// Returns the applied input (the shared first input), the solution and the
/// storage for the next step.
pub fn control_step<R: Rng>(
    world: &ProblemWorld,
    cfg: &MpcConfig,
    costs: &CostModel,
    storage: &StorageState,
    x_t: &[f64],
    warm: &TrajectoryPair,
    rng: &mut R,
) -> Result<(Vec<f64>, MpcSolution, StorageState)> {
    let budget = if cfg.mode == Mode::Proposed {
        storage.budget()
    } else {
        None
    };

    let warm_res = check_pair_feasibility(world, cfg, costs, warm, budget)
        .map_err(Error::RecursiveFeasibilityBreach)?;
    let candidate = solution_from_pair(
        world,
        cfg,
        costs,
        warm.clone(),
        SolverOutcome::CandidateFallback,
        warm_res,
    )?;

    let solution = match world {
        ProblemWorld::Finite(w) => finite::solve_step(w, cfg, costs, x_t, budget, &candidate)?,
        ProblemWorld::Continuous(w) => {
            continuous_solve_step(w, world, cfg, costs, x_t, budget, &candidate, rng)?
        }
    };

    let applied = solution.pair.shared_first_input().to_vec();
    let storage_next = match cfg.mode {
        Mode::Baseline => *storage,
        _ => {
            let stage0 = costs
                .stage_cost(x_t, &applied, &solution.pair.backup_setpoint)
                .ok_or(Error::Infeasible)?;
            storage_update(
                storage,
                solution.f_star,
                stage0,
                cfg.epsilon,
                cfg.alpha,
                cfg.mode == Mode::Proposed && budget.is_some(),
            )?
        }
    };
    Ok((applied, solution, storage_next))
}

/// Continuous path: multi-start NLP with exact acceptance checks.
#[allow(clippy::too_many_arguments)]
fn continuous_solve_step<R: Rng>(
    w: &ContinuousWorld,
    world: &ProblemWorld,
    cfg: &MpcConfig,
    costs: &CostModel,
    x_t: &[f64],
    budget: Option<f64>,
    candidate: &MpcSolution,
    rng: &mut R,
) -> Result<MpcSolution> {
    let mut starts: Vec<TrajectoryPair> = vec![candidate.pair.clone()];
    for pair in seeds::perturbed_starts(
        w,
        cfg,
        costs,
        candidate,
        rng,
        cfg.multi_starts.saturating_sub(2),
    ) {
        starts.push(pair);
    }
    if starts.len() < cfg.multi_starts {
        if let Some(seed) = seeds::guided_seed(w, cfg, costs, x_t, candidate) {
            starts.push(seed);
        }
    }

    let debug = std::env::var_os("SEMPC_DEBUG").is_some();
    let mut best: Option<MpcSolution> = None;
    for (idx, start) in starts.iter().enumerate() {
        let solved = solve_one_start(w, world, cfg, costs, x_t, budget, candidate, start)?;
        if debug {
            match &solved {
                Some(s) => eprintln!(
                    "  start {idx}: accepted obj={:.4} f*={:.4} rB=({:.2},{:.2})",
                    s.objective,
                    s.f_star,
                    s.pair.backup_setpoint.x[0],
                    s.pair.backup_setpoint.x[1]
                ),
                None => eprintln!("  start {idx}: rejected"),
            }
        }
        let Some(sol) = solved else {
            continue;
        };
        if best.as_ref().map_or(true, |b| sol.objective < b.objective) {
            best = Some(sol);
        }
    }

    Ok(best.unwrap_or_else(|| candidate.clone()))
}

#[allow(clippy::too_many_arguments)]
fn solve_one_start(
    w: &ContinuousWorld,
    world: &ProblemWorld,
    cfg: &MpcConfig,
    costs: &CostModel,
    x_t: &[f64],
    budget: Option<f64>,
    candidate: &MpcSolution,
    start: &TrajectoryPair,
) -> Result<Option<MpcSolution>> {
    let nlp = builder::build_continuous_nlp(w, cfg, costs, x_t, budget, start)?;
    let z0 = nlp.encode(
        &start.learning.inputs,
        Some(&start.backup.inputs),
        &start.learning_setpoint,
        Some(&start.backup_setpoint),
    );
    let debug = std::env::var_os("SEMPC_DEBUG").is_some();
    if debug {
        use crate::solver::SmoothProblem;
        let mut eq = vec![0.0; nlp.num_eq()];
        let mut ineq = vec![0.0; nlp.num_ineq()];
        let f0 = nlp.eval(&z0, &mut eq, &mut ineq);
        let max_eq = eq.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let (jmax, gmax) = ineq
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, g)| {
                if *g > acc.1 {
                    (j, *g)
                } else {
                    acc
                }
            });
        eprintln!(
            "    start point: f={f0:.3} eq={max_eq:.2e} worst ineq={gmax:.3e} [{}]",
            if nlp.num_ineq() > 0 {
                nlp.describe_ineq(jmax)
            } else {
                "-".into()
            }
        );
    }
    let report = match solve_nlp(&nlp, &z0, &cfg.tolerances) {
        Ok(r) => r,
        Err(e) => {
            if debug {
                eprintln!("    solve error: {e}");
            }
            return Ok(None);
        }
    };
    if matches!(report.status, SolveStatus::Failed | SolveStatus::Infeasible) {
        if debug {
            eprintln!(
                "    solver status {:?}, eq {:.2e}, ineq {:.2e}",
                report.status, report.max_eq_residual, report.max_ineq_violation
            );
        }
        return Ok(None);
    }
    let (ul, ub, mut rl, rb) = nlp.decode(&report.point);
    let (ub, mut rb) = (ub.expect("two trajectories"), rb.expect("two setpoints"));
    (w.project_steady)(&mut rl);
    (w.project_steady)(&mut rb);
    let learning = rollout(w.model, x_t, &ul)?;
    let backup = rollout(w.model, x_t, &ub)?;
    let pair = TrajectoryPair {
        learning,
        backup,
        learning_setpoint: rl,
        backup_setpoint: rb,
    };
    // exact acceptance: feasibility against the true sets and an objective
    // no worse than the candidate's
    let debug = std::env::var_os("SEMPC_DEBUG").is_some();
    let res = match check_pair_feasibility(world, cfg, costs, &pair, budget) {
        Ok(r) => r,
        Err(msg) => {
            if debug {
                eprintln!("    infeasible: {msg} (solver status {:?})", report.status);
            }
            return Ok(None);
        }
    };
    let sol = solution_from_pair(world, cfg, costs, pair, SolverOutcome::LocalOptimal, res)?;
    if sol.objective > candidate.objective + 1e-9 {
        if debug {
            eprintln!(
                "    worse than candidate: {:.4} > {:.4}",
                sol.objective, candidate.objective
            );
        }
        return Ok(None);
    }
    Ok(Some(sol))
}
