//! Warm-start seeds for the smooth back-end: setpoint perturbations toward
//! the desired output and a planner-backed pursuit toward the best sensed
//! rest position. Seeds only propose starts; every result still passes the
//! exact acceptance checks in `control_step`.

use rand::Rng;

use crate::costs::{CostModel, OffsetCost};
use crate::dynamics::rollout;
use crate::environment::{is_steady_admissible, Setpoint};

use super::{ContinuousWorld, MpcConfig, MpcSolution, TrajectoryPair};

fn desired_output(costs: &CostModel) -> Option<Vec<f64>> {
    match &costs.offset {
        OffsetCost::Quadratic { y_desired, .. } => Some(y_desired.clone()),
        OffsetCost::None => None,
    }
}

/// Candidate variants with both setpoints dragged toward the desired output.
pub fn perturbed_starts<R: Rng>(
    _w: &ContinuousWorld,
    _cfg: &MpcConfig,
    costs: &CostModel,
    candidate: &MpcSolution,
    rng: &mut R,
    count: usize,
) -> Vec<TrajectoryPair> {
    let Some(y_d) = desired_output(costs) else {
        return Vec::new();
    };
    (0..count)
        .map(|_| {
            let theta = rng.gen_range(0.2..0.9);
            let mut pair = candidate.pair.clone();
            for r in [&mut pair.backup_setpoint, &mut pair.learning_setpoint] {
                for i in 0..y_d.len() {
                    r.x[i] += theta * (y_d[i] - r.x[i]);
                }
            }
            pair
        })
        .collect()
}

/// Occupancy view of the sensed output plane.
struct SensedGrid {
    x_min: f64,
    y_min: f64,
    res: f64,
    nx: usize,
    ny: usize,
    free: Vec<bool>,
}

impl SensedGrid {
    fn cell_of(&self, p: &[f64]) -> Option<usize> {
        let i = ((p[0] - self.x_min) / self.res).floor();
        let j = ((p[1] - self.y_min) / self.res).floor();
        if i < 0.0 || j < 0.0 {
            return None;
        }
        let (i, j) = (i as usize, j as usize);
        if i >= self.nx || j >= self.ny {
            return None;
        }
        Some(j * self.nx + i)
    }

    fn center_of(&self, cell: usize) -> [f64; 2] {
        let i = cell % self.nx;
        let j = cell / self.nx;
        [
            self.x_min + (i as f64 + 0.5) * self.res,
            self.y_min + (j as f64 + 0.5) * self.res,
        ]
    }
}

fn build_grid(w: &ContinuousWorld, clearance: f64) -> Option<SensedGrid> {
    let k = w.knowledge;
    if k.sensed_centers.is_empty() {
        return None;
    }
    let reach = k.sense_radius;
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in &k.sensed_centers {
        x_min = x_min.min(c[0] - reach);
        x_max = x_max.max(c[0] + reach);
        y_min = y_min.min(c[1] - reach);
        y_max = y_max.max(c[1] + reach);
    }
    if k.z_lower[0].is_finite() {
        x_min = x_min.max(k.z_lower[0]);
    }
    if k.z_upper[0].is_finite() {
        x_max = x_max.min(k.z_upper[0]);
    }
    if k.z_lower[1].is_finite() {
        y_min = y_min.max(k.z_lower[1]);
    }
    if k.z_upper[1].is_finite() {
        y_max = y_max.min(k.z_upper[1]);
    }
    let res = 0.1;
    let nx = ((x_max - x_min) / res).ceil() as usize + 1;
    let ny = ((y_max - y_min) / res).ceil() as usize + 1;
    if nx == 0 || ny == 0 || nx * ny > 200_000 {
        return None;
    }
    let mut free = vec![false; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let p = [
                x_min + (i as f64 + 0.5) * res,
                y_min + (j as f64 + 0.5) * res,
            ];
            let in_box = (!k.z_lower[0].is_finite() || p[0] >= k.z_lower[0] + clearance)
                && (!k.z_upper[0].is_finite() || p[0] <= k.z_upper[0] - clearance)
                && (!k.z_lower[1].is_finite() || p[1] >= k.z_lower[1] + clearance)
                && (!k.z_upper[1].is_finite() || p[1] <= k.z_upper[1] - clearance);
            let in_disk = k.sensed_centers.iter().any(|c| {
                let d = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
                d <= k.sense_radius - clearance
            });
            let clear = k.discovered.iter().all(|&idx| {
                let ob = &k.obstacles[idx];
                let d = ((p[0] - ob.center[0]).powi(2) + (p[1] - ob.center[1]).powi(2)).sqrt();
                d >= ob.radius + clearance
            });
            free[j * nx + i] = in_box && in_disk && clear;
        }
    }
    Some(SensedGrid {
        x_min,
        y_min,
        res,
        nx,
        ny,
        free,
    })
}

/// Dijkstra over the 8-connected free cells; returns distances and parents.
fn shortest_paths(grid: &SensedGrid, start: usize) -> (Vec<f64>, Vec<usize>) {
    use std::cmp::Ordering;
    use std::collections::BinaryHeap;

    #[derive(PartialEq)]
    struct Node(f64, usize);
    impl Eq for Node {}
    impl Ord for Node {
        fn cmp(&self, other: &Self) -> Ordering {
            other.0.partial_cmp(&self.0).unwrap_or(Ordering::Equal)
        }
    }
    impl PartialOrd for Node {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }

    let total = grid.free.len();
    let mut dist = vec![f64::INFINITY; total];
    let mut parent = vec![usize::MAX; total];
    let mut heap = BinaryHeap::new();
    dist[start] = 0.0;
    heap.push(Node(0.0, start));
    let (nx, ny) = (grid.nx as i64, grid.ny as i64);
    while let Some(Node(d, cell)) = heap.pop() {
        if d > dist[cell] {
            continue;
        }
        let ci = (cell % grid.nx) as i64;
        let cj = (cell / grid.nx) as i64;
        for dj in -1..=1i64 {
            for di in -1..=1i64 {
                if di == 0 && dj == 0 {
                    continue;
                }
                let (ni, nj) = (ci + di, cj + dj);
                if ni < 0 || nj < 0 || ni >= nx || nj >= ny {
                    continue;
                }
                let next = (nj * nx + ni) as usize;
                if !grid.free[next] {
                    continue;
                }
                let step = ((di * di + dj * dj) as f64).sqrt() * grid.res;
                let nd = d + step;
                if nd < dist[next] {
                    dist[next] = nd;
                    parent[next] = cell;
                    heap.push(Node(nd, next));
                }
            }
        }
    }
    (dist, parent)
}

/// Planner-backed seed for kinematic-car worlds: keep the candidate's
/// learning plan and shared first input, and re-plan only the backup tail
/// toward the reachable sensed rest position with the best offset cost,
/// following a clearance path from a grid planner. Improving the backup
/// setpoint is what drains the convergence budget at a stall.
pub fn guided_seed(
    w: &ContinuousWorld,
    cfg: &MpcConfig,
    costs: &CostModel,
    x_t: &[f64],
    candidate: &MpcSolution,
) -> Option<TrajectoryPair> {
    let model = w.model;
    if model.state_dim() != 5 || model.input_dim() != 2 {
        return None;
    }
    let h = model.sample_time()?;
    desired_output(costs)?;

    let u0 = candidate.pair.backup.inputs[0].clone();
    let x1 = model.step(x_t, &u0);

    let clearance = 0.12;
    let mut grid = build_grid(w, clearance)?;
    let start = grid.cell_of(&x1[..2])?;
    // the car legally occupies its own cell even when clearance says no
    let si = (start % grid.nx) as i64;
    let sj = (start / grid.nx) as i64;
    for dj in -1..=1i64 {
        for di in -1..=1i64 {
            let (ni, nj) = (si + di, sj + dj);
            if ni >= 0 && nj >= 0 && (ni as usize) < grid.nx && (nj as usize) < grid.ny {
                let cell = nj as usize * grid.nx + ni as usize;
                let p = grid.center_of(cell);
                let clear_of_obstacles = w.knowledge.discovered.iter().all(|&idx| {
                    let ob = &w.knowledge.obstacles[idx];
                    let d =
                        ((p[0] - ob.center[0]).powi(2) + (p[1] - ob.center[1]).powi(2)).sqrt();
                    d > ob.radius + cfg.lambda
                });
                if clear_of_obstacles {
                    grid.free[cell] = true;
                }
            }
        }
    }

    let (dist, parent) = shortest_paths(&grid, start);

    // best reachable rest cell by offset cost
    let safe = w.knowledge.safe();
    let mut best: Option<(f64, usize)> = None;
    for (cell, d) in dist.iter().enumerate() {
        if !d.is_finite() {
            continue;
        }
        let p = grid.center_of(cell);
        let r = (w.rest)(&p);
        if !is_steady_admissible(model, &r, &safe, cfg.lambda) {
            continue;
        }
        let t = costs.offset_cost(model, &r);
        if best.map_or(true, |(bt, _)| t < bt) {
            best = Some((t, cell));
        }
    }
    let (_, target_cell) = best?;

    // reconstruct the cell path start -> target
    let mut path: Vec<[f64; 2]> = Vec::new();
    let mut cur = target_cell;
    while cur != usize::MAX && cur != start {
        path.push(grid.center_of(cur));
        cur = parent[cur];
    }
    path.push([x1[0], x1[1]]);
    path.reverse();

    // creep along the path with a lookahead carrot, stop at the end
    let u2_max = 10.0 * std::f64::consts::PI / 180.0;
    let lookahead = 0.6;
    let goal = *path.last().unwrap();
    let mut x = x1.clone();
    let mut inputs = vec![u0];
    for k in 0..cfg.horizon - 1 {
        let dist_goal = ((goal[0] - x[0]).powi(2) + (goal[1] - x[1]).powi(2)).sqrt();
        let v = x[3];
        let steps_left = cfg.horizon - 1 - k;
        let (u1, u2);
        if steps_left <= 4
            || dist_goal < 0.05
            || (v.abs() < 1e-12 && dist_goal < 0.15)
        {
            // stop here (or stay stopped); partial progress still helps
            u1 = (-v / h).clamp(-10.0, 1.0);
            u2 = 0.0;
        } else {
            let mut carrot = goal;
            for p in path.iter().rev() {
                let d = ((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2)).sqrt();
                if d <= lookahead {
                    carrot = *p;
                    break;
                }
            }
            let bearing = (carrot[1] - x[1]).atan2(carrot[0] - x[0]);
            let err = wrap_pi(bearing - (x[2] + x[4]));
            // creep slowly while turning hard, faster when straight
            let v_des = if dist_goal < 0.4 {
                0.15
            } else if err.abs() > 0.3 {
                0.2
            } else {
                0.45
            };
            let stopping = v * v / (2.0 * 9.0);
            let v_des = if stopping >= dist_goal { 0.0 } else { v_des };
            u1 = ((v_des - v) / h).clamp(-10.0, 1.0);
            let beta_des = err.clamp(-0.55, 0.55);
            u2 = ((beta_des - x[4]) / h).clamp(-u2_max, u2_max);
        }
        let u = vec![u1, u2];
        x = model.step(&x, &u);
        inputs.push(u);
    }
    if x[3].abs() > 1e-9 {
        return None; // did not come to rest within the horizon
    }
    let backup = rollout(model, x_t, &inputs).ok()?;
    let mut setpoint = Setpoint::new(backup.states.last().unwrap().clone(), vec![0.0, 0.0]);
    (w.project_steady)(&mut setpoint);
    if std::env::var_os("SEMPC_DEBUG").is_some() {
        let tp = grid.center_of(target_cell);
        eprintln!(
            "    seed: target=({:.2},{:.2}) rest=({:.2},{:.2}) v_end={:.2e} path_len={}",
            tp[0],
            tp[1],
            setpoint.x[0],
            setpoint.x[1],
            backup.states.last().unwrap()[3],
            path.len()
        );
    }
    Some(TrajectoryPair {
        learning: candidate.pair.learning.clone(),
        backup,
        learning_setpoint: candidate.pair.learning_setpoint.clone(),
        backup_setpoint: setpoint,
    })
}

/// Straight-line braking plan: stop as fast as the input box allows, then
/// rest. The terminal setpoint is the rest state itself, which makes this a
/// feasible initial plan whenever the braking corridor is sensed and clear.
pub fn brake_to_rest(
    model: &dyn crate::dynamics::SmoothDynamics,
    cfg: &MpcConfig,
    input_lower: &[f64],
    input_upper: &[f64],
    x_t: &[f64],
    project_steady: &dyn Fn(&mut Setpoint),
) -> Option<TrajectoryPair> {
    if model.state_dim() != 5 || model.input_dim() != 2 {
        return None;
    }
    let h = model.sample_time()?;
    let mut x = x_t.to_vec();
    let mut inputs = Vec::with_capacity(cfg.horizon);
    for _ in 0..cfg.horizon {
        let v = x[3];
        let u1 = (-v / h).clamp(input_lower[0], input_upper[0]);
        let u = vec![u1, 0.0];
        x = model.step(&x, &u);
        inputs.push(u);
    }
    if x[3].abs() > 1e-12 {
        return None; // horizon too short to stop
    }
    let traj = rollout(model, x_t, &inputs).ok()?;
    let mut setpoint = Setpoint::new(traj.states.last().unwrap().clone(), vec![0.0, 0.0]);
    project_steady(&mut setpoint);
    Some(TrajectoryPair {
        learning: traj.clone(),
        backup: traj,
        learning_setpoint: setpoint.clone(),
        backup_setpoint: setpoint,
    })
}

fn wrap_pi(a: f64) -> f64 {
    let mut v = a % std::f64::consts::TAU;
    if v > std::f64::consts::PI {
        v -= std::f64::consts::TAU;
    } else if v < -std::f64::consts::PI {
        v += std::f64::consts::TAU;
    }
    v
}
