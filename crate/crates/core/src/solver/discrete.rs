//! Exact global solver for finite scenarios: enumeration over admissible
//! input sequences with memoized dynamic programming on `(stage, state)`.
//! Ties are broken toward the lexicographically smallest input sequence, so
//! results are deterministic and independent of enumeration order.

use std::collections::{BTreeMap, HashMap};

use crate::dynamics::SystemModel;
use crate::environment::Setpoint;
use crate::error::Error;
use crate::util::{lex_less, ExactPoint};
use crate::Result;

/// Enumeration guard: scenarios whose raw trajectory count exceeds this are
/// refused even though memoization would often cope.
pub const MAX_TRAJECTORIES: f64 = 1e7;

/// A finite admissible-pair set with per-state input lists.
#[derive(Clone, Debug)]
pub struct FinitePairs {
    by_state: BTreeMap<ExactPoint, Vec<Vec<f64>>>,
    n_pairs: usize,
}

impl FinitePairs {
    pub fn new(pairs: &[(Vec<f64>, Vec<f64>)]) -> Self {
        let mut by_state: BTreeMap<ExactPoint, Vec<Vec<f64>>> = BTreeMap::new();
        let mut n_pairs = 0;
        for (x, u) in pairs {
            let inputs = by_state.entry(ExactPoint::new(x)).or_default();
            if !inputs.iter().any(|v| v == u) {
                inputs.push(u.clone());
                n_pairs += 1;
            }
        }
        for inputs in by_state.values_mut() {
            inputs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        }
        FinitePairs { by_state, n_pairs }
    }

    pub fn contains(&self, x: &[f64], u: &[f64]) -> bool {
        self.by_state
            .get(&ExactPoint::new(x))
            .map_or(false, |inputs| inputs.iter().any(|v| v == u))
    }

    /// Inputs admissible at `x`, sorted ascending.
    pub fn inputs_at(&self, x: &[f64]) -> &[Vec<f64>] {
        self.by_state
            .get(&ExactPoint::new(x))
            .map_or(&[], |v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.n_pairs
    }

    pub fn is_empty(&self) -> bool {
        self.n_pairs == 0
    }

    pub fn max_branching(&self) -> usize {
        self.by_state.values().map(Vec::len).max().unwrap_or(0)
    }

    /// All steady pairs `(x, u)` with `f(x, u) == x`, in order.
    pub fn steady_pairs(&self, model: &dyn SystemModel) -> Vec<Setpoint> {
        let mut out = Vec::new();
        for (x, u) in self.iter_pairs() {
            if model.step(&x, &u) == x {
                out.push(Setpoint::new(x, u));
            }
        }
        out
    }

    pub fn iter_pairs(&self) -> impl Iterator<Item = (Vec<f64>, Vec<f64>)> + '_ {
        self.by_state.iter().flat_map(|(k, inputs)| {
            let x = decode_key(k);
            inputs.iter().map(move |u| (x.clone(), u.clone()))
        })
    }

    /// Distinct states, in key order.
    pub fn states(&self) -> Vec<Vec<f64>> {
        self.by_state.keys().map(decode_key).collect()
    }
}

fn decode_key(k: &ExactPoint) -> Vec<f64> {
    k.bits().iter().map(|b| f64::from_bits(*b)).collect()
}

/// A finite open-loop plan.
#[derive(Clone, Debug, PartialEq)]
pub struct DpPlan {
    pub cost: f64,
    pub inputs: Vec<Vec<f64>>,
}

/// Minimum-cost plan of `steps` inputs from `x0`, every visited pair
/// admissible, terminal state accepted by `terminal`. `stage` and `terminal`
/// return `None` where the cost is undefined, which marks infeasibility.
///
/// Deterministic: among equal-cost plans the lexicographically smallest input
/// sequence is returned.
pub fn min_tracking_plan(
    model: &dyn SystemModel,
    pairs: &FinitePairs,
    x0: &[f64],
    steps: usize,
    stage: &dyn Fn(&[f64], &[f64]) -> Option<f64>,
    terminal: &dyn Fn(&[f64]) -> Option<f64>,
) -> Result<Option<DpPlan>> {
    let branching = pairs.max_branching() as f64;
    if branching.powi(steps as i32) > MAX_TRAJECTORIES {
        return Err(Error::ScenarioTooLarge {
            estimated: branching.powi(steps as i32),
            limit: MAX_TRAJECTORIES,
        });
    }

    // memo: (stage, state) -> best (cost-to-go, chosen input index) or None
    let mut memo: HashMap<(usize, ExactPoint), Option<(f64, usize)>> = HashMap::new();

    fn value(
        model: &dyn SystemModel,
        pairs: &FinitePairs,
        memo: &mut HashMap<(usize, ExactPoint), Option<(f64, usize)>>,
        x: &[f64],
        k: usize,
        steps: usize,
        stage: &dyn Fn(&[f64], &[f64]) -> Option<f64>,
        terminal: &dyn Fn(&[f64]) -> Option<f64>,
    ) -> Option<(f64, usize)> {
        if k == steps {
            return terminal(x).map(|c| (c, usize::MAX));
        }
        let key = (k, ExactPoint::new(x));
        if let Some(v) = memo.get(&key) {
            return *v;
        }
        let mut best: Option<(f64, usize)> = None;
        let inputs = pairs.inputs_at(x).to_vec();
        for (idx, u) in inputs.iter().enumerate() {
            let Some(sc) = stage(x, u) else { continue };
            let next = model.step(x, u);
            if let Some((tail, _)) = value(model, pairs, memo, &next, k + 1, steps, stage, terminal)
            {
                let total = sc + tail;
                // strictly-less keeps the first (lex-smallest) input on ties
                if best.map_or(true, |(bc, _)| total < bc) {
                    best = Some((total, idx));
                }
            }
        }
        memo.insert(key, best);
        best
    }

    let root = value(model, pairs, &mut memo, x0, 0, steps, stage, terminal);
    let Some((cost, _)) = root else {
        return Ok(None);
    };

    // reconstruct the lex-smallest optimal input sequence
    let mut inputs = Vec::with_capacity(steps);
    let mut x = x0.to_vec();
    for k in 0..steps {
        let (_, idx) = value(model, pairs, &mut memo, &x, k, steps, stage, terminal)
            .expect("memoized feasible node");
        let u = pairs.inputs_at(&x)[idx].clone();
        x = model.step(&x, &u);
        inputs.push(u);
    }
    Ok(Some(DpPlan { cost, inputs }))
}

/// One side (learning or backup) of a solved finite problem.
#[derive(Clone, Debug)]
pub struct DiscreteSide {
    pub plan: DpPlan,
    pub setpoint: Setpoint,
}

/// Finite encoding of the two-trajectory problem (and of the single-trajectory
/// baseline scheme when `baseline` is set).
pub struct DiscreteTrajectoryProblem<'a> {
    pub model: &'a dyn SystemModel,
    pub horizon: usize,
    pub x0: Vec<f64>,
    /// Admissible pairs for the learning trajectory (estimated set).
    pub learning_pairs: FinitePairs,
    /// Admissible pairs for the backup trajectory (safe set).
    pub backup_pairs: FinitePairs,
    pub learning_setpoints: Vec<Setpoint>,
    pub backup_setpoints: Vec<Setpoint>,
    /// Stage cost; `None` marks pairs outside the cost domain.
    pub stage: Box<dyn Fn(&[f64], &[f64], &Setpoint) -> Option<f64> + 'a>,
    /// Terminal cost at the terminal-equality state; `None` marks infeasible.
    pub terminal: Box<dyn Fn(&[f64], &Setpoint) -> Option<f64> + 'a>,
    pub offset: Box<dyn Fn(&Setpoint) -> f64 + 'a>,
    pub epsilon: f64,
    /// Right-hand side of the convergence constraint; `None` disables it.
    pub budget: Option<f64>,
    pub baseline: bool,
}

/// Globally optimal solution of a finite problem.
#[derive(Clone, Debug)]
pub struct DiscreteSolution {
    pub learning: DiscreteSide,
    pub backup: DiscreteSide,
    pub objective: f64,
    /// Realized backup cost `eps * V_N(backup) + T(r_backup)`.
    pub f_star: f64,
    pub backup_tracking_cost: f64,
}

/// Best plan toward one setpoint from `x0` under fixed admissible pairs.
fn plan_for_setpoint(
    p: &DiscreteTrajectoryProblem,
    pairs: &FinitePairs,
    x0: &[f64],
    steps: usize,
    r: &Setpoint,
) -> Result<Option<DpPlan>> {
    let stage = |x: &[f64], u: &[f64]| (p.stage)(x, u, r);
    let rx = r.x.clone();
    let terminal = move |x: &[f64]| {
        if x == rx.as_slice() {
            (p.terminal)(x, r)
        } else {
            None
        }
    };
    min_tracking_plan(p.model, pairs, x0, steps, &stage, &terminal)
}

/// Exhaustive solve. Returns the global optimum with deterministic
/// tie-breaking: objective, then learning inputs, then backup inputs.
pub fn solve_exact_discrete(p: &DiscreteTrajectoryProblem) -> Result<DiscreteSolution> {
    if p.baseline {
        return solve_baseline(p);
    }

    let u0s = p.backup_pairs.inputs_at(&p.x0).to_vec();
    let mut best: Option<(f64, DiscreteSolution)> = None;

    for u0 in &u0s {
        if !p.learning_pairs.contains(&p.x0, u0) {
            continue;
        }
        let x1 = p.model.step(&p.x0, u0);

        // learning side: min V_N + T over setpoints
        let mut learn: Option<(f64, DiscreteSide)> = None;
        for r in &p.learning_setpoints {
            let Some(head) = (p.stage)(&p.x0, u0, r) else {
                continue;
            };
            let Some(tail) = plan_for_setpoint(p, &p.learning_pairs, &x1, p.horizon - 1, r)?
            else {
                continue;
            };
            let tracking = head + tail.cost;
            let total = tracking + (p.offset)(r);
            let mut inputs = vec![u0.clone()];
            inputs.extend(tail.inputs);
            let side = DiscreteSide {
                plan: DpPlan {
                    cost: tracking,
                    inputs,
                },
                setpoint: r.clone(),
            };
            let better = match &learn {
                None => true,
                Some((bc, bs)) => {
                    total < *bc - 1e-12
                        || ((total - *bc).abs() <= 1e-12
                            && lex_less(&side.plan.inputs, &bs.plan.inputs))
                }
            };
            if better {
                learn = Some((total, side));
            }
        }
        let Some((learn_total, learn_side)) = learn else {
            continue;
        };

        // backup side: min eps*T(r) subject to the budget, then smallest
        // tracking cost, then lex inputs
        let mut back: Option<(f64, f64, DiscreteSide)> = None;
        for r in &p.backup_setpoints {
            let Some(head) = (p.stage)(&p.x0, u0, r) else {
                continue;
            };
            let Some(tail) = plan_for_setpoint(p, &p.backup_pairs, &x1, p.horizon - 1, r)? else {
                continue;
            };
            let vn = head + tail.cost;
            let f = p.epsilon * vn + (p.offset)(r);
            if let Some(b) = p.budget {
                if f > b + 1e-9 {
                    continue;
                }
            }
            let mut inputs = vec![u0.clone()];
            inputs.extend(tail.inputs);
            let side = DiscreteSide {
                plan: DpPlan { cost: vn, inputs },
                setpoint: r.clone(),
            };
            let key = (p.offset)(r);
            let better = match &back {
                None => true,
                Some((bk, bvn, bs)) => {
                    key < *bk - 1e-12
                        || ((key - *bk).abs() <= 1e-12
                            && (vn < *bvn - 1e-12
                                || ((vn - *bvn).abs() <= 1e-12
                                    && lex_less(&side.plan.inputs, &bs.plan.inputs))))
                }
            };
            if better {
                back = Some((key, vn, side));
            }
        }
        let Some((back_offset, back_vn, back_side)) = back else {
            continue;
        };

        let objective = learn_total + p.epsilon * back_offset;
        let f_star = p.epsilon * back_vn + back_offset;
        let cand = DiscreteSolution {
            learning: learn_side,
            backup: back_side,
            objective,
            f_star,
            backup_tracking_cost: back_vn,
        };
        let better = match &best {
            None => true,
            Some((bo, bs)) => {
                objective < *bo - 1e-12
                    || ((objective - *bo).abs() <= 1e-12
                        && (lex_less(&cand.learning.plan.inputs, &bs.learning.plan.inputs)
                            || (cand.learning.plan.inputs == bs.learning.plan.inputs
                                && lex_less(&cand.backup.plan.inputs, &bs.backup.plan.inputs))))
            }
        };
        if better {
            best = Some((objective, cand));
        }
    }

    best.map(|(_, s)| s).ok_or(Error::Infeasible)
}

/// Single-trajectory scheme over the safe pairs, objective `eps*V_N + T`.
fn solve_baseline(p: &DiscreteTrajectoryProblem) -> Result<DiscreteSolution> {
    let mut best: Option<(f64, DiscreteSide, f64)> = None;
    for r in &p.backup_setpoints {
        let Some(plan) = plan_for_setpoint(p, &p.backup_pairs, &p.x0, p.horizon, r)? else {
            continue;
        };
        let total = p.epsilon * plan.cost + (p.offset)(r);
        let vn = plan.cost;
        let side = DiscreteSide {
            plan,
            setpoint: r.clone(),
        };
        let better = match &best {
            None => true,
            Some((bc, bs, _)) => {
                total < *bc - 1e-12
                    || ((total - *bc).abs() <= 1e-12
                        && lex_less(&side.plan.inputs, &bs.plan.inputs))
            }
        };
        if better {
            best = Some((total, side, vn));
        }
    }
    let Some((objective, side, vn)) = best else {
        return Err(Error::Infeasible);
    };
    Ok(DiscreteSolution {
        learning: side.clone(),
        backup: side,
        objective,
        f_star: objective,
        backup_tracking_cost: vn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Integrator1d;

    fn toy_pairs_safe() -> Vec<(Vec<f64>, Vec<f64>)> {
        vec![
            (vec![2.0], vec![2.0]),
            (vec![2.0], vec![0.0]),
            (vec![0.0], vec![0.0]),
        ]
    }

    fn toy_pairs_estimated() -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut p = toy_pairs_safe();
        p.push((vec![2.0], vec![1.0]));
        p.push((vec![1.0], vec![0.0]));
        p
    }

    fn toy_stage(x: &[f64], u: &[f64]) -> Option<f64> {
        match (x[0] as i64, u[0] as i64) {
            (2, 2) => Some(2.0),
            (2, 1) => Some(1.0),
            (2, 0) => Some(10.0),
            (1, 0) => Some(1.0),
            (0, 0) => Some(0.0),
            _ => None,
        }
    }

    fn toy_problem(budget: Option<f64>) -> DiscreteTrajectoryProblem<'static> {
        DiscreteTrajectoryProblem {
            model: &Integrator1d,
            horizon: 3,
            x0: vec![2.0],
            learning_pairs: FinitePairs::new(&toy_pairs_estimated()),
            backup_pairs: FinitePairs::new(&toy_pairs_safe()),
            learning_setpoints: vec![Setpoint::new(vec![0.0], vec![0.0])],
            backup_setpoints: vec![Setpoint::new(vec![0.0], vec![0.0])],
            stage: Box::new(|x, u, _| toy_stage(x, u)),
            terminal: Box::new(|x, _| if x[0] == 0.0 { Some(0.0) } else { None }),
            offset: Box::new(|_| 0.0),
            epsilon: 1.0,
            budget,
            baseline: false,
        }
    }

    #[test]
    fn counter_example_optimum_at_t0() {
        let sol = solve_exact_discrete(&toy_problem(None)).unwrap();
        assert_eq!(sol.learning.plan.cost, 4.0);
        assert_eq!(sol.backup.plan.cost, 12.0);
        assert_eq!(
            sol.learning.plan.inputs,
            vec![vec![2.0], vec![1.0], vec![0.0]]
        );
        assert_eq!(
            sol.backup.plan.inputs,
            vec![vec![2.0], vec![0.0], vec![0.0]]
        );
    }

    #[test]
    fn tight_budget_forces_the_safe_plan() {
        // With the budget at 11 the stay-then-explore pair is gone; the only
        // feasible first input is 0.
        let sol = solve_exact_discrete(&toy_problem(Some(11.0))).unwrap();
        assert_eq!(
            sol.backup.plan.inputs,
            vec![vec![0.0], vec![0.0], vec![0.0]]
        );
        assert_eq!(sol.backup.plan.cost, 10.0);
        assert_eq!(sol.learning.plan.inputs, sol.backup.plan.inputs);
    }

    #[test]
    fn single_feasible_point_is_returned() {
        let pairs = vec![(vec![0.0], vec![0.0])];
        let p = DiscreteTrajectoryProblem {
            model: &Integrator1d,
            horizon: 2,
            x0: vec![0.0],
            learning_pairs: FinitePairs::new(&pairs),
            backup_pairs: FinitePairs::new(&pairs),
            learning_setpoints: vec![Setpoint::new(vec![0.0], vec![0.0])],
            backup_setpoints: vec![Setpoint::new(vec![0.0], vec![0.0])],
            stage: Box::new(|_, _, _| Some(0.0)),
            terminal: Box::new(|_, _| Some(0.0)),
            offset: Box::new(|_| 0.0),
            epsilon: 1.0,
            budget: None,
            baseline: false,
        };
        let sol = solve_exact_discrete(&p).unwrap();
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn enumeration_order_does_not_change_the_optimum() {
        let mut pairs = toy_pairs_estimated();
        let base = solve_exact_discrete(&toy_problem(None)).unwrap();
        pairs.reverse();
        let p = DiscreteTrajectoryProblem {
            learning_pairs: FinitePairs::new(&pairs),
            ..toy_problem(None)
        };
        let sol = solve_exact_discrete(&p).unwrap();
        assert_eq!(sol.objective, base.objective);
        assert_eq!(sol.learning.plan.inputs, base.learning.plan.inputs);
    }

    #[test]
    fn guard_refuses_oversized_scenarios() {
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..40)
            .flat_map(|x| (0..40).map(move |u| (vec![x as f64], vec![u as f64])))
            .collect();
        let fp = FinitePairs::new(&pairs);
        let err = min_tracking_plan(
            &Integrator1d,
            &fp,
            &[0.0],
            5,
            &|_, _| Some(0.0),
            &|_| Some(0.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::ScenarioTooLarge { .. }));
    }

    #[test]
    fn infeasible_terminal_reports_empty() {
        let pairs = vec![(vec![2.0], vec![2.0])];
        let fp = FinitePairs::new(&pairs);
        let plan = min_tracking_plan(
            &Integrator1d,
            &fp,
            &[2.0],
            2,
            &|x, u| toy_stage(x, u),
            &|x| if x[0] == 0.0 { Some(0.0) } else { None },
        )
        .unwrap();
        assert!(plan.is_none());
    }
}
