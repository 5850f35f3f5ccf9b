//! Executable forms of the framework's definitions and guarantees:
//! transitory-setpoint tests on finite scenarios and offline verification of
//! every closed-loop invariant from run logs.

use serde::{Deserialize, Serialize};

use crate::costs::CostModel;
use crate::dynamics::SystemModel;
use crate::environment::{is_steady_admissible, update_knowledge, SensingReport, Setpoint};
use crate::error::Error;
use crate::mpc::{candidate_shift, check_pair_feasibility, Mode};
use crate::sim::{with_world, RunHeader, StepLog};
use crate::solver::{min_tracking_plan, FinitePairs};
use crate::Result;

/// Witness that a strictly better setpoint is available.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransitoryWitness {
    pub r2: Setpoint,
    pub plan_inputs: Vec<Vec<f64>>,
    /// Right-hand side minus left-hand side of the defining inequality at
    /// the tightest probe; positive by construction.
    pub cost_gap: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransitoryReport {
    pub setpoint: Setpoint,
    pub is_transitory: bool,
    pub witness: Option<TransitoryWitness>,
    pub delta_used: f64,
    pub probe_points: usize,
}

struct FiniteOracle<'a> {
    model: &'a dyn SystemModel,
    pairs: &'a FinitePairs,
    costs: &'a CostModel,
}

impl FiniteOracle<'_> {
    /// `V*_N(x, r, A)` with the optimal plan, `None` when infeasible.
    fn v_star(&self, x: &[f64], r: &Setpoint, steps: usize) -> Result<Option<(f64, Vec<Vec<f64>>)>> {
        let stage = |xx: &[f64], uu: &[f64]| self.costs.stage_cost(xx, uu, r);
        let rx = r.x.clone();
        let costs = self.costs;
        let r2 = r.clone();
        let terminal = move |xx: &[f64]| {
            if xx == rx.as_slice() {
                costs.terminal_cost(xx, &r2)
            } else {
                None
            }
        };
        Ok(min_tracking_plan(self.model, self.pairs, x, steps, &stage, &terminal)?
            .map(|p| (p.cost, p.inputs)))
    }

    fn offset(&self, r: &Setpoint) -> f64 {
        let y = self.model.output(&r.x, &r.u);
        self.costs.offset_cost_of_output(&y)
    }
}

fn delta_ladder(values: &[f64]) -> Vec<f64> {
    let mut positives: Vec<f64> = values.iter().copied().filter(|v| *v > 0.0).collect();
    positives.sort_by(|a, b| b.partial_cmp(a).unwrap());
    positives.dedup();
    let mut ladder: Vec<f64> = positives.iter().map(|v| v * 1.5).collect();
    if let Some(smallest) = positives.last() {
        ladder.push(smallest * 0.5);
    }
    if ladder.is_empty() {
        ladder.push(1.0);
    }
    ladder
}

/// Transitory test against the single-trajectory scheme: near `r1` some
/// other setpoint wins on the full horizon-`N` optimal cost.
pub fn is_transitory_def1(
    model: &dyn SystemModel,
    costs: &CostModel,
    r1: &Setpoint,
    pairs: &FinitePairs,
    epsilon: f64,
    horizon: usize,
    delta: Option<f64>,
) -> Result<TransitoryReport> {
    let oracle = FiniteOracle { model, pairs, costs };
    let manifold = pairs.steady_pairs(model);
    if manifold.is_empty() {
        return Err(Error::NoSteadySetpoint);
    }
    let states = pairs.states();

    // V*_N(x, r1) per probe state
    let mut v1: Vec<(Vec<f64>, f64)> = Vec::new();
    for x in &states {
        if let Some((v, _)) = oracle.v_star(x, r1, horizon)? {
            v1.push((x.clone(), v));
        }
    }
    let ladder = match delta {
        Some(d) => vec![d],
        None => delta_ladder(&v1.iter().map(|(_, v)| *v).collect::<Vec<_>>()),
    };

    for &d in &ladder {
        let probes: Vec<&(Vec<f64>, f64)> = v1.iter().filter(|(_, v)| *v <= d).collect();
        if probes.is_empty() {
            continue;
        }
        let mut worst: Option<TransitoryWitness> = None;
        let mut all_pass = true;
        for (x, v) in &probes {
            let rhs = epsilon * v + oracle.offset(r1);
            let mut best: Option<TransitoryWitness> = None;
            for r2 in &manifold {
                if r2 == r1 {
                    continue;
                }
                let Some((v2, plan)) = oracle.v_star(x, r2, horizon)? else {
                    continue;
                };
                let lhs = epsilon * v2 + oracle.offset(r2);
                if lhs < rhs {
                    let gap = rhs - lhs;
                    if best.as_ref().map_or(true, |b| gap > b.cost_gap) {
                        best = Some(TransitoryWitness {
                            r2: r2.clone(),
                            plan_inputs: plan,
                            cost_gap: gap,
                        });
                    }
                }
            }
            match best {
                Some(w) => {
                    if worst.as_ref().map_or(true, |t| w.cost_gap < t.cost_gap) {
                        worst = Some(w);
                    }
                }
                None => {
                    all_pass = false;
                    break;
                }
            }
        }
        if all_pass {
            return Ok(TransitoryReport {
                setpoint: r1.clone(),
                is_transitory: true,
                witness: worst,
                delta_used: d,
                probe_points: probes.len(),
            });
        }
    }

    Ok(TransitoryReport {
        setpoint: r1.clone(),
        is_transitory: false,
        witness: None,
        delta_used: *ladder.last().unwrap(),
        probe_points: v1.len(),
    })
}

/// Transitory test against the two-trajectory scheme: the alternative
/// setpoint must strictly improve the offset cost and win after one shared
/// stage plus an `N-1`-step plan from the successor state.
pub fn is_transitory_def2(
    model: &dyn SystemModel,
    costs: &CostModel,
    r1: &Setpoint,
    pairs: &FinitePairs,
    epsilon: f64,
    horizon: usize,
    delta: Option<f64>,
) -> Result<TransitoryReport> {
    let oracle = FiniteOracle { model, pairs, costs };
    let manifold = pairs.steady_pairs(model);
    if manifold.is_empty() {
        return Err(Error::NoSteadySetpoint);
    }
    let t1 = oracle.offset(r1);

    // probe pairs, keyed by the state's optimal cost toward r1
    let mut probe_pairs: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    for (x, u) in pairs.iter_pairs() {
        if let Some((v, _)) = oracle.v_star(&x, r1, horizon)? {
            probe_pairs.push((x, u, v));
        }
    }
    let ladder = match delta {
        Some(d) => vec![d],
        None => delta_ladder(&probe_pairs.iter().map(|(_, _, v)| *v).collect::<Vec<_>>()),
    };

    for &d in &ladder {
        let probes: Vec<&(Vec<f64>, Vec<f64>, f64)> =
            probe_pairs.iter().filter(|(_, _, v)| *v <= d).collect();
        if probes.is_empty() {
            continue;
        }
        let mut worst: Option<TransitoryWitness> = None;
        let mut all_pass = true;
        for (x, u, v) in &probes {
            let rhs = epsilon * v + t1;
            let x_next = model.step(x, u);
            let mut best: Option<TransitoryWitness> = None;
            for r2 in &manifold {
                if r2 == r1 {
                    continue;
                }
                let t2 = oracle.offset(r2);
                if t2 >= t1 {
                    continue;
                }
                let Some(stage) = costs.stage_cost(x, u, r2) else {
                    continue;
                };
                let Some((v2, plan)) = oracle.v_star(&x_next, r2, horizon - 1)? else {
                    continue;
                };
                let lhs = epsilon * (stage + v2) + t2;
                if lhs < rhs {
                    let gap = rhs - lhs;
                    if best.as_ref().map_or(true, |b| gap > b.cost_gap) {
                        let mut full_plan = vec![u.clone()];
                        full_plan.extend(plan);
                        best = Some(TransitoryWitness {
                            r2: r2.clone(),
                            plan_inputs: full_plan,
                            cost_gap: gap,
                        });
                    }
                }
            }
            match best {
                Some(w) => {
                    if worst.as_ref().map_or(true, |t| w.cost_gap < t.cost_gap) {
                        worst = Some(w);
                    }
                }
                None => {
                    all_pass = false;
                    break;
                }
            }
        }
        if all_pass {
            return Ok(TransitoryReport {
                setpoint: r1.clone(),
                is_transitory: true,
                witness: worst,
                delta_used: d,
                probe_points: probes.len(),
            });
        }
    }

    Ok(TransitoryReport {
        setpoint: r1.clone(),
        is_transitory: false,
        witness: None,
        delta_used: *ladder.last().unwrap(),
        probe_points: probe_pairs.len(),
    })
}

/// One verified invariant.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub pass: bool,
    pub skipped: bool,
    pub first_violation_step: Option<usize>,
    pub magnitude: Option<f64>,
}

impl InvariantCheck {
    fn pass(name: &str) -> Self {
        InvariantCheck {
            name: name.into(),
            pass: true,
            skipped: false,
            first_violation_step: None,
            magnitude: None,
        }
    }

    fn fail(name: &str, step: usize, magnitude: f64) -> Self {
        InvariantCheck {
            name: name.into(),
            pass: false,
            skipped: false,
            first_violation_step: Some(step),
            magnitude: Some(magnitude),
        }
    }

    fn skip(name: &str) -> Self {
        InvariantCheck {
            name: name.into(),
            pass: true,
            skipped: true,
            first_violation_step: None,
            magnitude: None,
        }
    }
}

/// Deterministic verdict over a complete run log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunVerdict {
    pub checks: Vec<InvariantCheck>,
}

impl RunVerdict {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&InvariantCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// One line per invariant: `NAME PASS|FAIL|SKIP [step] [magnitude]`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            if c.skipped {
                out.push_str(&format!("{} SKIP\n", c.name));
            } else if c.pass {
                out.push_str(&format!("{} PASS\n", c.name));
            } else {
                out.push_str(&format!(
                    "{} FAIL {} {:e}\n",
                    c.name,
                    c.first_violation_step.unwrap_or(0),
                    c.magnitude.unwrap_or(f64::NAN)
                ));
            }
        }
        out
    }
}

/// Re-verifies every closed-loop invariant from a run log:
/// (a) applied pairs inside the true set, (b) storage nonnegativity,
/// (c) the convergence budget, (d) candidate feasibility, (e) the candidate
/// decrease chain, (f) safe-set monotonicity, (g) the shared first input,
/// and (h) terminal convergence to an admissible setpoint.
pub fn verify_run(header: &RunHeader, logs: &[StepLog]) -> Result<RunVerdict> {
    if logs.is_empty() {
        return Err(Error::Parse("empty run log".into()));
    }
    let scenario = &header.scenario;
    let built = scenario.build()?;
    let model = built.model.system();
    let mut cfg = scenario.mpc.clone();
    cfg.mode = header.mode;
    let mut costs = built.costs.clone();
    let truth = built.knowledge.truth();
    let budget_mode = header.mode == Mode::Proposed;

    let mut checks: Vec<InvariantCheck> = Vec::new();

    // (a) applied pairs in the true set, exactly
    let mut in_truth = InvariantCheck::pass("closed_loop_in_truth");
    for log in logs {
        if !truth.contains(&log.x, &log.u) {
            in_truth = InvariantCheck::fail("closed_loop_in_truth", log.t, 1.0);
            break;
        }
    }
    checks.push(in_truth);

    // (b) storage nonnegativity (meaningful only with the budget active)
    if budget_mode {
        let mut c = InvariantCheck::pass("storage_nonnegative");
        for log in logs {
            if log.s < -1e-9 {
                c = InvariantCheck::fail("storage_nonnegative", log.t, -log.s);
                break;
            }
        }
        checks.push(c);
    } else {
        checks.push(InvariantCheck::skip("storage_nonnegative"));
    }

    // (c) realized backup cost within the budget
    if budget_mode {
        let mut c = InvariantCheck::pass("budget_respected");
        for log in logs {
            if let Some(f_hat) = log.f_hat {
                let slack = log.f_star - (log.s + f_hat);
                if slack > 1e-9 {
                    c = InvariantCheck::fail("budget_respected", log.t, slack);
                    break;
                }
            }
        }
        checks.push(c);
    } else {
        checks.push(InvariantCheck::skip("budget_respected"));
    }

    // (g) shared first input, exact; shared second state within 1e-9
    let mut shared = InvariantCheck::pass("shared_first_input");
    for log in logs {
        let pair = &log.solution.pair;
        let du: f64 = pair.learning.inputs[0]
            .iter()
            .zip(&pair.backup.inputs[0])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let dx: f64 = pair.learning.states[1]
            .iter()
            .zip(&pair.backup.states[1])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if du != 0.0 || dx > 1e-9 {
            shared = InvariantCheck::fail("shared_first_input", log.t, du.max(dx));
            break;
        }
    }
    checks.push(shared);

    // Replay knowledge; check candidate feasibility, the decrease chain and
    // monotonicity along the way.
    let mut knowledge = built.knowledge.clone();
    let mut candidate_ok = InvariantCheck::pass("candidate_feasible");
    let mut chain_ok = InvariantCheck::pass("decrease_chain");
    for (i, log) in logs.iter().enumerate() {
        for ev in &scenario.events {
            if ev.t == log.t {
                if let crate::costs::OffsetCost::Quadratic { y_desired, .. } = &mut costs.offset
                {
                    *y_desired = ev.y_desired.clone();
                }
            }
        }
        update_knowledge(
            &mut knowledge,
            &SensingReport {
                center: log.sensed_center.clone(),
                newly_discovered: log.newly_discovered.clone(),
            },
        );
        if i == 0 {
            continue;
        }
        let prev = &logs[i - 1];
        let candidate = match candidate_shift(model, &prev.solution, &log.x) {
            Ok(c) => c,
            Err(e) => {
                candidate_ok =
                    InvariantCheck::fail("candidate_feasible", log.t, f64::NAN);
                let _ = e;
                break;
            }
        };
        let budget = if budget_mode {
            log.f_hat.map(|f| log.s + f)
        } else {
            None
        };
        let feasible = with_world(
            &built.model,
            &knowledge,
            built.fixed_setpoints.as_deref(),
            |world| check_pair_feasibility(world, &cfg, &costs, &candidate, budget).map(|_| ()),
        )?;
        if candidate_ok.pass {
            if let Err(_msg) = feasible {
                candidate_ok = InvariantCheck::fail("candidate_feasible", log.t, 1.0);
            }
        }

        // (e) eps*V_N(cand backup) + T(cand setpoint)
        //       <= F*_{t-1} - eps*l(stage0_{t-1}) + 1e-9
        if chain_ok.pass {
            let vn_cand = costs.tracking_cost(&candidate.backup, &candidate.backup_setpoint)?;
            let t_cand = costs.offset_cost(model, &candidate.backup_setpoint);
            let lhs = cfg.epsilon * vn_cand + t_cand;
            let stage0 = costs
                .stage_cost(&prev.x, &prev.u, &prev.solution.pair.backup_setpoint)
                .unwrap_or(f64::INFINITY);
            let rhs = prev.f_star - cfg.epsilon * stage0;
            if lhs > rhs + 1e-9 {
                chain_ok = InvariantCheck::fail("decrease_chain", log.t, lhs - rhs);
            }
        }
    }
    checks.push(candidate_ok);
    checks.push(chain_ok);

    // (f) safe-set monotonicity: every applied pair stays in the final safe
    // set, and the discovered index set never shrinks between steps.
    let final_safe = knowledge.safe();
    let mut monotone = InvariantCheck::pass("safe_set_monotone");
    for log in logs {
        if !final_safe.contains(&log.x, &log.u) {
            monotone = InvariantCheck::fail("safe_set_monotone", log.t, 1.0);
            break;
        }
    }
    checks.push(monotone);

    // (h) terminal convergence: quiet window then admissibility
    let window = 10.min(logs.len());
    let quiet = logs[logs.len() - window..].iter().all(|log| {
        costs
            .stage_cost(&log.x, &log.u, &log.solution.pair.backup_setpoint)
            .map_or(false, |c| c < 1e-8)
    });
    let last = logs.last().unwrap();
    let admissible = is_steady_admissible(
        model,
        &last.solution.pair.backup_setpoint,
        &final_safe,
        cfg.lambda,
    );
    if quiet && admissible {
        checks.push(InvariantCheck::pass("converged_admissible"));
    } else {
        let mag = costs
            .stage_cost(&last.x, &last.u, &last.solution.pair.backup_setpoint)
            .unwrap_or(f64::INFINITY);
        checks.push(InvariantCheck::fail(
            "converged_admissible",
            last.t,
            mag,
        ));
    }

    Ok(RunVerdict { checks })
}
