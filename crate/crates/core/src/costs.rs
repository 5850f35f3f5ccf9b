//! Stage, tracking and offset costs, plus setpoint search over the
//! steady-state manifold.
//!
//! Terminal-equality mode is the only terminal ingredient shipped: the
//! terminal cost is identically zero and the constraint `x_N = x^s` lives in
//! the problem builder. The general interface (cost, controller, region) is
//! captured by [`TerminalCost`] but only the equality instantiation exists.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dynamics::{SystemModel, Trajectory};
use crate::environment::{is_steady_admissible, RegionExpr, Setpoint};
use crate::error::Error;
use crate::solver::{solve_nlp, SmoothProblem, SolveTolerances};
use crate::util::ExactPoint;
use crate::Result;

/// Symmetric positive-definite weight, stored diagonally or dense row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightMatrix {
    Diagonal(Vec<f64>),
    Full { dim: usize, data: Vec<f64> },
}

impl WeightMatrix {
    pub fn identity(dim: usize) -> Self {
        WeightMatrix::Diagonal(vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        match self {
            WeightMatrix::Diagonal(d) => d.len(),
            WeightMatrix::Full { dim, .. } => *dim,
        }
    }

    /// `d' W d`.
    pub fn quad(&self, d: &[f64]) -> f64 {
        match self {
            WeightMatrix::Diagonal(w) => d.iter().zip(w).map(|(x, wi)| wi * x * x).sum(),
            WeightMatrix::Full { dim, data } => {
                let mut acc = 0.0;
                for i in 0..*dim {
                    for j in 0..*dim {
                        acc += d[i] * data[i * dim + j] * d[j];
                    }
                }
                acc
            }
        }
    }

    /// `out += scale * 2 W d`, the gradient of the quadratic form.
    pub fn add_scaled_grad(&self, d: &[f64], scale: f64, out: &mut [f64]) {
        match self {
            WeightMatrix::Diagonal(w) => {
                for i in 0..d.len() {
                    out[i] += scale * 2.0 * w[i] * d[i];
                }
            }
            WeightMatrix::Full { dim, data } => {
                for i in 0..*dim {
                    let mut row = 0.0;
                    for j in 0..*dim {
                        row += data[i * dim + j] * d[j];
                    }
                    out[i] += scale * 2.0 * row;
                }
            }
        }
    }

    pub fn min_diagonal(&self) -> f64 {
        match self {
            WeightMatrix::Diagonal(w) => w.iter().cloned().fold(f64::INFINITY, f64::min),
            WeightMatrix::Full { dim, data } => (0..*dim)
                .map(|i| data[i * dim + i])
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Positive definiteness via sign check (diagonal) or Cholesky (dense).
    pub fn is_positive_definite(&self) -> bool {
        match self {
            WeightMatrix::Diagonal(w) => w.iter().all(|&x| x > 0.0),
            WeightMatrix::Full { dim, data } => {
                let n = *dim;
                if data.len() != n * n {
                    return false;
                }
                let mut l = vec![0.0f64; n * n];
                for i in 0..n {
                    for j in 0..=i {
                        let mut s = data[i * n + j];
                        for k in 0..j {
                            s -= l[i * n + k] * l[j * n + k];
                        }
                        if i == j {
                            if s <= 0.0 {
                                return false;
                            }
                            l[i * n + i] = s.sqrt();
                        } else {
                            l[i * n + j] = s / l[j * n + j];
                        }
                    }
                }
                true
            }
        }
    }
}

/// Quadratic tracking-cost weights and the desired output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CostConfig {
    pub q: WeightMatrix,
    pub r: WeightMatrix,
    pub p: WeightMatrix,
    pub y_desired: Vec<f64>,
}

impl CostConfig {
    pub fn validate(&self, state_dim: usize, input_dim: usize, output_dim: usize) -> Result<()> {
        if self.q.dim() != state_dim {
            return Err(Error::Config(format!(
                "Q has dim {}, state dim is {state_dim}",
                self.q.dim()
            )));
        }
        if self.r.dim() != input_dim {
            return Err(Error::Config(format!(
                "R has dim {}, input dim is {input_dim}",
                self.r.dim()
            )));
        }
        if self.p.dim() != output_dim || self.y_desired.len() != output_dim {
            return Err(Error::Config("P / y_desired dimension mismatch".into()));
        }
        for (name, w) in [("Q", &self.q), ("R", &self.r), ("P", &self.p)] {
            if !w.is_positive_definite() {
                return Err(Error::Config(format!("{name} is not positive definite")));
            }
        }
        Ok(())
    }
}

/// Exact tabular costs for finite scenarios. Stage costs are keyed by the
/// `(x, u)` pair; terminal costs by `(x, setpoint)`.
#[derive(Clone, Debug, Default)]
pub struct TabularCost {
    pub stage: BTreeMap<ExactPoint, f64>,
    pub terminal: BTreeMap<ExactPoint, f64>,
}

impl TabularCost {
    pub fn stage_entry(&mut self, x: &[f64], u: &[f64], cost: f64) {
        self.stage.insert(ExactPoint::from_pair(x, u), cost);
    }

    pub fn terminal_entry(&mut self, x: &[f64], r: &Setpoint, cost: f64) {
        let mut key = x.to_vec();
        key.extend_from_slice(&r.x);
        key.extend_from_slice(&r.u);
        self.terminal.insert(ExactPoint::new(&key), cost);
    }

    pub fn stage_lookup(&self, x: &[f64], u: &[f64]) -> Option<f64> {
        self.stage.get(&ExactPoint::from_pair(x, u)).copied()
    }

    pub fn terminal_lookup(&self, x: &[f64], r: &Setpoint) -> Option<f64> {
        let mut key = x.to_vec();
        key.extend_from_slice(&r.x);
        key.extend_from_slice(&r.u);
        self.terminal.get(&ExactPoint::new(&key)).copied()
    }
}

/// Stage cost `l(x, u, r)`.
#[derive(Clone, Debug)]
pub enum StageCost {
    Quadratic { q: WeightMatrix, r: WeightMatrix },
    Tabular(TabularCost),
}

/// Terminal cost `V_f(x_N, r)`; zero under terminal equality.
#[derive(Clone, Debug)]
pub enum TerminalCost {
    EqualityZero,
    Tabular(TabularCost),
}

/// Offset cost `T(r) = ||h(r) - y_d||^2_P`, or absent.
#[derive(Clone, Debug)]
pub enum OffsetCost {
    None,
    Quadratic { p: WeightMatrix, y_desired: Vec<f64> },
}

/// The cost ingredients of one scenario.
#[derive(Clone, Debug)]
pub struct CostModel {
    pub stage: StageCost,
    pub terminal: TerminalCost,
    pub offset: OffsetCost,
}

impl CostModel {
    pub fn quadratic(cfg: &CostConfig) -> Self {
        CostModel {
            stage: StageCost::Quadratic {
                q: cfg.q.clone(),
                r: cfg.r.clone(),
            },
            terminal: TerminalCost::EqualityZero,
            offset: OffsetCost::Quadratic {
                p: cfg.p.clone(),
                y_desired: cfg.y_desired.clone(),
            },
        }
    }

    pub fn tabular(t: TabularCost) -> Self {
        CostModel {
            stage: StageCost::Tabular(t.clone()),
            terminal: TerminalCost::Tabular(t),
            offset: OffsetCost::None,
        }
    }

    /// `l(x, u, r)`; `None` when a tabular pair is outside the cost domain.
    pub fn stage_cost(&self, x: &[f64], u: &[f64], r: &Setpoint) -> Option<f64> {
        match &self.stage {
            StageCost::Quadratic { q, r: rw } => {
                let dx: Vec<f64> = x.iter().zip(&r.x).map(|(a, b)| a - b).collect();
                let du: Vec<f64> = u.iter().zip(&r.u).map(|(a, b)| a - b).collect();
                Some(q.quad(&dx) + rw.quad(&du))
            }
            StageCost::Tabular(t) => t.stage_lookup(x, u),
        }
    }

    pub fn terminal_cost(&self, x: &[f64], r: &Setpoint) -> Option<f64> {
        match &self.terminal {
            TerminalCost::EqualityZero => Some(0.0),
            TerminalCost::Tabular(t) => t.terminal_lookup(x, r),
        }
    }

    /// `V_N = sum_k l(x_k, u_k, r) + V_f(x_N, r)`.
    pub fn tracking_cost(&self, traj: &Trajectory, r: &Setpoint) -> Result<f64> {
        if traj.states.len() != traj.inputs.len() + 1 {
            return Err(Error::DimensionMismatch {
                what: "trajectory",
                expected: traj.inputs.len() + 1,
                got: traj.states.len(),
            });
        }
        let mut total = 0.0;
        for k in 0..traj.inputs.len() {
            total += self
                .stage_cost(&traj.states[k], &traj.inputs[k], r)
                .ok_or(Error::Infeasible)?;
        }
        total += self
            .terminal_cost(traj.states.last().unwrap(), r)
            .ok_or(Error::Infeasible)?;
        Ok(total)
    }

    /// `T(r) = ||h(r) - y_d||^2_P` (zero when no offset cost is configured).
    pub fn offset_cost(&self, model: &dyn SystemModel, r: &Setpoint) -> f64 {
        self.offset_cost_of_output(&model.output(&r.x, &r.u))
    }

    pub fn offset_cost_of_output(&self, y: &[f64]) -> f64 {
        match &self.offset {
            OffsetCost::None => 0.0,
            OffsetCost::Quadratic { p, y_desired } => {
                let d: Vec<f64> = y.iter().zip(y_desired).map(|(a, b)| a - b).collect();
                p.quad(&d)
            }
        }
    }
}

/// Empirical stage-cost bounds and cost-controllability constants. Estimated
/// for property tests only; the controller never uses them.
#[derive(Clone, Copy, Debug)]
pub struct AssumptionConstants {
    pub a1: f64,
    pub a2: f64,
    pub gamma: f64,
    pub chi: f64,
}

/// Minimum stage cost over admissible inputs at `x`:
/// exhaustive for finite regions; for box-like regions the minimizing input
/// is the setpoint input clamped to its bounds (disks never constrain `u`).
pub fn min_stage_cost(
    cost: &CostModel,
    region: &RegionExpr,
    x: &[f64],
    r: &Setpoint,
) -> Option<f64> {
    match region {
        RegionExpr::FinitePointSet { points } => {
            let mut best: Option<f64> = None;
            for p in points {
                let flat: Vec<f64> = p.bits().iter().map(|b| f64::from_bits(*b)).collect();
                if flat.len() <= x.len() || &flat[..x.len()] != x {
                    continue;
                }
                let u = &flat[x.len()..];
                if let Some(c) = cost.stage_cost(x, u, r) {
                    best = Some(best.map_or(c, |b: f64| b.min(c)));
                }
            }
            best
        }
        _ => {
            let (lo, hi) = input_bounds_of(region, x.len(), r.u.len())?;
            let u: Vec<f64> = r
                .u
                .iter()
                .enumerate()
                .map(|(i, v)| v.clamp(lo[i], hi[i]))
                .collect();
            cost.stage_cost(x, &u, r)
        }
    }
}

/// Extracts the input-coordinate box of a region built from boxes and output
/// disks. Disks act on output coordinates only, so the input box is exact.
fn input_bounds_of(
    region: &RegionExpr,
    state_dim: usize,
    input_dim: usize,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut lo = vec![f64::NEG_INFINITY; input_dim];
    let mut hi = vec![f64::INFINITY; input_dim];
    fn walk(
        region: &RegionExpr,
        state_dim: usize,
        lo: &mut [f64],
        hi: &mut [f64],
    ) -> bool {
        match region {
            RegionExpr::HyperBox { lower, upper } => {
                for i in 0..lo.len() {
                    lo[i] = lo[i].max(lower[state_dim + i]);
                    hi[i] = hi[i].min(upper[state_dim + i]);
                }
                true
            }
            RegionExpr::OutputDisk { .. } => true,
            RegionExpr::Intersection(parts) => {
                parts.iter().all(|p| walk(p, state_dim, lo, hi))
            }
            RegionExpr::Union(parts) => parts.iter().all(|p| walk(p, state_dim, lo, hi)),
            RegionExpr::FinitePointSet { .. } => false,
        }
    }
    if walk(region, state_dim, &mut lo, &mut hi) {
        Some((lo, hi))
    } else {
        None
    }
}

/// Empirical Assumption-style constants from `(state, setpoint)` samples.
/// `v_star` optionally supplies the optimal-cost function for the gamma
/// estimate; samples at the setpoint itself are excluded as degenerate.
pub fn estimate_assumption_constants(
    cost: &CostModel,
    region: &RegionExpr,
    samples: &[(Vec<f64>, Setpoint)],
    chi: f64,
    v_star: Option<&dyn Fn(&[f64], &Setpoint) -> Option<f64>>,
) -> Result<AssumptionConstants> {
    if samples.len() < 100 {
        return Err(Error::Config(format!(
            "need at least 100 samples, got {}",
            samples.len()
        )));
    }
    let mut a1 = f64::INFINITY;
    let mut a2 = 0.0f64;
    let mut gamma = 0.0f64;
    let mut used = 0;
    for (x, r) in samples {
        let dist2: f64 = x.iter().zip(&r.x).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist2 == 0.0 {
            continue;
        }
        let Some(lstar) = min_stage_cost(cost, region, x, r) else {
            continue;
        };
        used += 1;
        let ratio = lstar / dist2;
        a1 = a1.min(ratio);
        a2 = a2.max(ratio);
        if dist2 <= chi && lstar > 0.0 {
            if let Some(vs) = v_star {
                if let Some(v) = vs(x, r) {
                    gamma = gamma.max(v / lstar);
                }
            }
        }
    }
    if used == 0 {
        return Err(Error::Config("all samples degenerate".into()));
    }
    Ok(AssumptionConstants { a1, a2, gamma, chi })
}

/// Result of a best-reachable-setpoint search.
#[derive(Clone, Debug)]
pub struct SetpointSearch {
    pub setpoint: Setpoint,
    pub objective: f64,
    /// For continuous regions: |NLP optimum - dense grid scan|.
    pub optimality_gap: Option<f64>,
}

/// Rest setpoints per model family, used to seed and cross-check continuous
/// setpoint searches in the output plane.
pub trait RestSetpoint {
    fn rest_at(&self, y: &[f64]) -> Option<Setpoint>;
}

impl RestSetpoint for crate::dynamics::Bicycle {
    fn rest_at(&self, y: &[f64]) -> Option<Setpoint> {
        Some(Setpoint::new(
            vec![y[0], y[1], 0.0, 0.0, 0.0],
            vec![0.0, 0.0],
        ))
    }
}

impl RestSetpoint for crate::dynamics::Integrator1d {
    fn rest_at(&self, y: &[f64]) -> Option<Setpoint> {
        Some(Setpoint::new(vec![y[0]], vec![y[0]]))
    }
}

/// Minimizer of the offset cost over the steady admissible setpoints of
/// `region`. Exhaustive for finite regions; dense position scan refined by a
/// small NLP for continuous ones.
pub fn best_reachable_setpoint(
    model: &dyn SystemModel,
    region: &RegionExpr,
    cost: &CostModel,
    lambda: f64,
    rest: Option<&dyn Fn(&[f64]) -> Setpoint>,
    scan: Option<&PositionScan>,
) -> Result<SetpointSearch> {
    if let RegionExpr::FinitePointSet { points } = region {
        let mut best: Option<SetpointSearch> = None;
        for p in points {
            let flat: Vec<f64> = p.bits().iter().map(|b| f64::from_bits(*b)).collect();
            let n = model.state_dim();
            let r = Setpoint::new(flat[..n].to_vec(), flat[n..].to_vec());
            if !is_steady_admissible(model, &r, region, lambda) {
                continue;
            }
            let t = cost.offset_cost(model, &r);
            if best.as_ref().map_or(true, |b| t < b.objective) {
                best = Some(SetpointSearch {
                    setpoint: r,
                    objective: t,
                    optimality_gap: Some(0.0),
                });
            }
        }
        return best.ok_or(Error::NoSteadySetpoint);
    }

    let rest = rest.ok_or_else(|| {
        Error::Config("continuous setpoint search needs a rest-setpoint template".into())
    })?;
    let scan = scan.ok_or_else(|| {
        Error::Config("continuous setpoint search needs a position scan window".into())
    })?;

    // Dense scan over rest positions.
    let mut best: Option<(f64, Setpoint)> = None;
    let nx = ((scan.x_max - scan.x_min) / scan.resolution).ceil() as usize;
    let ny = ((scan.y_max - scan.y_min) / scan.resolution).ceil() as usize;
    for i in 0..=nx {
        let px = scan.x_min + i as f64 * scan.resolution;
        for j in 0..=ny {
            let py = scan.y_min + j as f64 * scan.resolution;
            let r = rest(&[px, py]);
            if !is_steady_admissible(model, &r, region, lambda) {
                continue;
            }
            let t = cost.offset_cost(model, &r);
            if best.as_ref().map_or(true, |(bt, _)| t < *bt) {
                best = Some((t, r));
            }
        }
    }
    let (grid_obj, grid_r) = best.ok_or(Error::NoSteadySetpoint)?;

    // Local polish: descend the offset cost along the two position
    // coordinates while staying admissible.
    let polished = polish_rest_position(model, region, cost, lambda, rest, &grid_r, scan);
    let (obj, setpoint) = polished.unwrap_or((grid_obj, grid_r));
    Ok(SetpointSearch {
        optimality_gap: Some((grid_obj - obj).abs()),
        setpoint,
        objective: obj,
    })
}

/// Window and resolution for continuous setpoint scans.
#[derive(Clone, Copy, Debug)]
pub struct PositionScan {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub resolution: f64,
}

fn polish_rest_position(
    model: &dyn SystemModel,
    region: &RegionExpr,
    cost: &CostModel,
    lambda: f64,
    rest: &dyn Fn(&[f64]) -> Setpoint,
    start: &Setpoint,
    scan: &PositionScan,
) -> Option<(f64, Setpoint)> {
    let y0 = model.output(&start.x, &start.u);
    struct P<'a> {
        model: &'a dyn SystemModel,
        cost: &'a CostModel,
        rest: &'a dyn Fn(&[f64]) -> Setpoint,
    }
    impl SmoothProblem for P<'_> {
        fn num_vars(&self) -> usize {
            2
        }
        fn num_eq(&self) -> usize {
            0
        }
        fn num_ineq(&self) -> usize {
            0
        }
        fn bound(&self, _i: usize) -> (f64, f64) {
            (f64::NEG_INFINITY, f64::INFINITY)
        }
        fn eval(&self, z: &[f64], _eq: &mut [f64], _ineq: &mut [f64]) -> f64 {
            let r = (self.rest)(z);
            self.cost.offset_cost(self.model, &r)
        }
        fn grad_weighted(
            &self,
            z: &[f64],
            w_obj: f64,
            _w_eq: &[f64],
            _w_ineq: &[f64],
            grad: &mut [f64],
        ) {
            // central differences; the polish problem is 2-D and cheap
            let mut e = [0.0; 0];
            let mut g = [0.0; 0];
            let mut zp = [z[0], z[1]];
            for i in 0..2 {
                let h = 1e-7 * (1.0 + z[i].abs());
                zp[i] = z[i] + h;
                let fp = self.eval(&zp, &mut e, &mut g);
                zp[i] = z[i] - h;
                let fm = self.eval(&zp, &mut e, &mut g);
                zp[i] = z[i];
                grad[i] = w_obj * (fp - fm) / (2.0 * h);
            }
        }
    }
    let p = P { model, cost, rest };
    let rep = solve_nlp(&p, &y0, &SolveTolerances::default()).ok()?;
    // Project the unconstrained descent back to admissibility by a short
    // line search toward the scan point.
    let mut best: Option<(f64, Setpoint)> = None;
    for t in 0..=20 {
        let a = t as f64 / 20.0;
        let y = [
            y0[0] + a * (rep.point[0] - y0[0]),
            y0[1] + a * (rep.point[1] - y0[1]),
        ];
        if y[0] < scan.x_min - 1.0
            || y[0] > scan.x_max + 1.0
            || y[1] < scan.y_min - 1.0
            || y[1] > scan.y_max + 1.0
        {
            break;
        }
        let r = rest(&y);
        if is_steady_admissible(model, &r, region, lambda) {
            let obj = cost.offset_cost(model, &r);
            if best.as_ref().map_or(true, |(b, _)| obj < *b) {
                best = Some((obj, r));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Bicycle, BicycleParams, Integrator1d};
    use crate::environment::DiskSense;

    fn vi_cost() -> CostConfig {
        CostConfig {
            q: WeightMatrix::Diagonal(vec![1.0, 1.0, 1e-5, 1e-5, 1e-5]),
            r: WeightMatrix::Diagonal(vec![1.0, 1.0]),
            p: WeightMatrix::identity(2),
            y_desired: vec![12.0, 1.0],
        }
    }

    fn toy_table() -> TabularCost {
        let mut t = TabularCost::default();
        let zero = Setpoint::new(vec![0.0], vec![0.0]);
        t.stage_entry(&[2.0], &[2.0], 2.0);
        t.stage_entry(&[2.0], &[1.0], 1.0);
        t.stage_entry(&[2.0], &[0.0], 10.0);
        t.stage_entry(&[1.0], &[0.0], 1.0);
        t.stage_entry(&[0.0], &[0.0], 0.0);
        t.terminal_entry(&[0.0], &zero, 0.0);
        t
    }

    #[test]
    fn stage_cost_examples() {
        let cm = CostModel::quadratic(&CostConfig {
            q: WeightMatrix::identity(2),
            r: WeightMatrix::identity(1),
            p: WeightMatrix::identity(2),
            y_desired: vec![0.0, 0.0],
        });
        let r = Setpoint::new(vec![1.0, 1.0], vec![0.5]);
        assert_eq!(cm.stage_cost(&[1.0, 1.0], &[0.5], &r), Some(0.0));
        assert_eq!(cm.stage_cost(&[2.0, 1.0], &[2.5], &r), Some(5.0));

        let vi = CostModel::quadratic(&vi_cost());
        let r5 = Setpoint::new(vec![0.0; 5], vec![0.0, 0.0]);
        assert_eq!(
            vi.stage_cost(&[1.0, 1.0, 0.0, 0.0, 0.0], &[0.0, 0.0], &r5),
            Some(2.0)
        );
    }

    #[test]
    fn tracking_cost_reproduces_counter_example_values() {
        let cm = CostModel::tabular(toy_table());
        let zero = Setpoint::new(vec![0.0], vec![0.0]);
        let learning = Trajectory {
            states: vec![vec![2.0], vec![2.0], vec![1.0], vec![0.0]],
            inputs: vec![vec![2.0], vec![1.0], vec![0.0]],
        };
        assert_eq!(cm.tracking_cost(&learning, &zero).unwrap(), 4.0);
        let backup = Trajectory {
            states: vec![vec![2.0], vec![2.0], vec![0.0], vec![0.0]],
            inputs: vec![vec![2.0], vec![0.0], vec![0.0]],
        };
        assert_eq!(cm.tracking_cost(&backup, &zero).unwrap(), 12.0);
    }

    #[test]
    fn constant_trajectory_at_setpoint_costs_nothing() {
        let cm = CostModel::quadratic(&vi_cost());
        let r = Setpoint::new(vec![3.0, 1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0]);
        let traj = Trajectory {
            states: vec![r.x.clone(); 4],
            inputs: vec![r.u.clone(); 3],
        };
        assert_eq!(cm.tracking_cost(&traj, &r).unwrap(), 0.0);

        // Appending the terminal controller step at the setpoint adds zero.
        let mut longer = traj.clone();
        longer.states.push(r.x.clone());
        longer.inputs.push(r.u.clone());
        assert_eq!(
            cm.tracking_cost(&longer, &r).unwrap(),
            cm.tracking_cost(&traj, &r).unwrap()
        );
    }

    #[test]
    fn offset_cost_examples() {
        let cm = CostModel::quadratic(&vi_cost());
        let model = Bicycle::new(BicycleParams::default());
        let at_goal = Setpoint::new(vec![12.0, 1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0]);
        assert_eq!(cm.offset_cost(&model, &at_goal), 0.0);
        let stuck = Setpoint::new(vec![3.5, 0.0, 0.0, 0.0, 0.0], vec![0.0, 0.0]);
        // independent arithmetic: 8.5^2 + 1^2
        let expected = 8.5f64 * 8.5 + 1.0;
        assert!((cm.offset_cost(&model, &stuck) - expected).abs() < 1e-12);
        assert_eq!(expected, 73.25);
    }

    #[test]
    fn min_stage_cost_over_estimated_toy_set() {
        let cm = CostModel::tabular(toy_table());
        let z_t = RegionExpr::finite_from_pairs(&[
            (vec![2.0], vec![2.0]),
            (vec![2.0], vec![1.0]),
            (vec![2.0], vec![0.0]),
            (vec![1.0], vec![0.0]),
            (vec![0.0], vec![0.0]),
        ]);
        let zero = Setpoint::new(vec![0.0], vec![0.0]);
        assert_eq!(min_stage_cost(&cm, &z_t, &[2.0], &zero), Some(1.0));
    }

    #[test]
    fn best_reachable_in_finite_region_with_quadratic_offset() {
        // Toy region with T(x) = x^2: the unique zero-cost point is (0, 0).
        let cm = CostModel {
            stage: StageCost::Tabular(toy_table()),
            terminal: TerminalCost::Tabular(toy_table()),
            offset: OffsetCost::Quadratic {
                p: WeightMatrix::identity(1),
                y_desired: vec![0.0],
            },
        };
        let e = RegionExpr::finite_from_pairs(&[
            (vec![2.0], vec![2.0]),
            (vec![2.0], vec![0.0]),
            (vec![0.0], vec![0.0]),
        ]);
        let found =
            best_reachable_setpoint(&Integrator1d, &e, &cm, 0.01, None, None).unwrap();
        assert_eq!(found.setpoint.x, vec![0.0]);
        assert_eq!(found.objective, 0.0);
    }

    #[test]
    fn best_reachable_for_the_car_truth_set() {
        let model = Bicycle::new(BicycleParams::default());
        let cm = CostModel::quadratic(&vi_cost());
        let (lo, hi) = crate::environment::test_fixtures::car_bounds();
        let mut parts = vec![RegionExpr::HyperBox {
            lower: lo,
            upper: hi,
        }];
        for ob in crate::environment::test_fixtures::car_obstacles() {
            parts.push(RegionExpr::OutputDisk {
                center: ob.center,
                radius: ob.radius,
                sense: DiskSense::Outside,
            });
        }
        let truth = RegionExpr::Intersection(parts);
        let rest = |y: &[f64]| Setpoint::new(vec![y[0], y[1], 0.0, 0.0, 0.0], vec![0.0, 0.0]);
        let scan = PositionScan {
            x_min: 0.0,
            x_max: 12.0,
            y_min: -2.0,
            y_max: 2.0,
            resolution: 0.01,
        };
        let found =
            best_reachable_setpoint(&model, &truth, &cm, 0.01, Some(&rest), Some(&scan))
                .unwrap();
        let y = model.output(&found.setpoint.x, &found.setpoint.u);
        assert!(
            (y[0] - 12.0).abs() <= 0.1 && (y[1] - 1.0).abs() <= 0.1,
            "best reachable output {y:?}"
        );
        assert!(found.optimality_gap.unwrap() <= 1e-4 + 1e-9);
    }

    #[test]
    fn assumption_sandwich_matches_min_eigenvalue() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let cfg = vi_cost();
        let cm = CostModel::quadratic(&cfg);
        let (lo, hi) = crate::environment::test_fixtures::car_bounds();
        let region = RegionExpr::HyperBox {
            lower: lo,
            upper: hi,
        };
        let r = Setpoint::new(vec![5.0, 0.0, 0.0, 0.0, 0.0], vec![0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut samples: Vec<(Vec<f64>, Setpoint)> = Vec::with_capacity(10_000);
        // Axis-aligned probes reach the extreme Rayleigh quotients exactly.
        for d in 0..5 {
            for s in [-1.0, 1.0] {
                let mut x = r.x.clone();
                x[d] += s * 0.5;
                samples.push((x, r.clone()));
            }
        }
        while samples.len() < 10_000 {
            let x: Vec<f64> = (0..5)
                .map(|i| r.x[i] + rng.gen_range(-0.5..0.5))
                .collect();
            samples.push((x, r.clone()));
        }
        let est = estimate_assumption_constants(&cm, &region, &samples, 1.0, None).unwrap();
        assert!((est.a1 - 1e-5).abs() < 1e-12, "a1 = {}", est.a1);
        assert!(est.a2 <= 1.0 + 1e-12);
        assert!(est.a1 <= est.a2);
    }

    #[test]
    fn quadratic_cost_with_scalar_weight_has_constant_ratio() {
        let cm = CostModel::quadratic(&CostConfig {
            q: WeightMatrix::Diagonal(vec![3.0, 3.0]),
            r: WeightMatrix::Diagonal(vec![1.0]),
            p: WeightMatrix::identity(2),
            y_desired: vec![0.0, 0.0],
        });
        let region = RegionExpr::HyperBox {
            lower: vec![-10.0, -10.0, -10.0],
            upper: vec![10.0, 10.0, 10.0],
        };
        let r = Setpoint::new(vec![0.0, 0.0], vec![0.0]);
        let samples: Vec<(Vec<f64>, Setpoint)> = (0..200)
            .map(|i| {
                let a = i as f64 * 0.03 + 0.01;
                (vec![a.cos(), a.sin()], r.clone())
            })
            .collect();
        let est = estimate_assumption_constants(&cm, &region, &samples, 10.0, None).unwrap();
        assert!((est.a1 - 3.0).abs() < 1e-9);
        assert!((est.a2 - 3.0).abs() < 1e-9);
    }

    #[test]
    fn full_matrix_pd_check_and_quad_form() {
        let w = WeightMatrix::Full {
            dim: 2,
            data: vec![2.0, 1.0, 1.0, 2.0],
        };
        assert!(w.is_positive_definite());
        assert_eq!(w.quad(&[1.0, 1.0]), 6.0);
        let bad = WeightMatrix::Full {
            dim: 2,
            data: vec![1.0, 2.0, 2.0, 1.0],
        };
        assert!(!bad.is_positive_definite());
    }

    #[test]
    fn positive_definiteness_of_stage_cost() {
        let cm = CostModel::quadratic(&vi_cost());
        let r = Setpoint::new(vec![1.0, 2.0, 0.3, 0.0, 0.1], vec![0.2, 0.0]);
        assert_eq!(cm.stage_cost(&r.x, &r.u, &r), Some(0.0));
        let mut x = r.x.clone();
        x[2] += 1e-3;
        assert!(cm.stage_cost(&x, &r.u, &r).unwrap() > 0.0);
        let mut u = r.u.clone();
        u[1] -= 1e-3;
        assert!(cm.stage_cost(&r.x, &u, &r).unwrap() > 0.0);
    }
}
