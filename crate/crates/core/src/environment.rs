//! Ground-truth constraint set, grown safe/estimated knowledge sets, sensing,
//! and steady-state-manifold membership with a margin.
//!
//! Region expressions evaluate membership of `(x, u)` pairs exactly (up to
//! floating arithmetic; exactly for finite point sets). Output-space disks
//! read the leading two state coordinates, which is the output convention of
//! every continuous model in this crate.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dynamics::{steady_residual, SystemModel};
use crate::error::Error;
use crate::util::{dist2, ExactPoint};
use crate::Result;

/// A steady state/input candidate `r = (x, u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Setpoint {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl Setpoint {
    pub fn new(x: Vec<f64>, u: Vec<f64>) -> Self {
        Setpoint { x, u }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiskSense {
    /// Membership means being in the closed disk.
    Inside,
    /// Membership means being strictly outside the closed disk.
    Outside,
}

/// Symbolic set over the `(x, u)` space.
#[derive(Clone, Debug)]
pub enum RegionExpr {
    /// Axis-aligned box over the concatenated `(x, u)` coordinates;
    /// infinite bounds allowed.
    HyperBox { lower: Vec<f64>, upper: Vec<f64> },
    /// Disk in the output coordinates `(x1, x2)`.
    OutputDisk {
        center: [f64; 2],
        radius: f64,
        sense: DiskSense,
    },
    /// Explicit list of exact `(x, u)` pairs.
    FinitePointSet { points: BTreeSet<ExactPoint> },
    Intersection(Vec<RegionExpr>),
    Union(Vec<RegionExpr>),
}

impl RegionExpr {
    pub fn finite_from_pairs(pairs: &[(Vec<f64>, Vec<f64>)]) -> Self {
        RegionExpr::FinitePointSet {
            points: pairs
                .iter()
                .map(|(x, u)| ExactPoint::from_pair(x, u))
                .collect(),
        }
    }

    /// Exact membership of the pair `(x, u)` under the expression semantics.
    /// Outside-disks exclude their closed interior.
    pub fn contains(&self, x: &[f64], u: &[f64]) -> bool {
        match self {
            RegionExpr::HyperBox { lower, upper } => {
                let z = x.iter().chain(u.iter());
                z.enumerate()
                    .all(|(i, v)| *v >= lower[i] && *v <= upper[i])
            }
            RegionExpr::OutputDisk {
                center,
                radius,
                sense,
            } => {
                let d = dist2(&x[..2], center);
                match sense {
                    DiskSense::Inside => d <= *radius,
                    DiskSense::Outside => d > *radius,
                }
            }
            RegionExpr::FinitePointSet { points } => points.contains(&ExactPoint::from_pair(x, u)),
            RegionExpr::Intersection(parts) => parts.iter().all(|p| p.contains(x, u)),
            RegionExpr::Union(parts) => parts.iter().any(|p| p.contains(x, u)),
        }
    }

    /// Whether the closed `lambda`-ball around `(x, u)` lies in the region.
    /// For finite point sets the margin is ignored and membership is exact.
    pub fn contains_ball(&self, x: &[f64], u: &[f64], lambda: f64) -> bool {
        match self {
            RegionExpr::HyperBox { lower, upper } => {
                let z = x.iter().chain(u.iter());
                z.enumerate().all(|(i, v)| {
                    (lower[i].is_infinite() || *v - lower[i] >= lambda)
                        && (upper[i].is_infinite() || upper[i] - *v >= lambda)
                })
            }
            RegionExpr::OutputDisk {
                center,
                radius,
                sense,
            } => {
                let d = dist2(&x[..2], center);
                match sense {
                    DiskSense::Inside => d <= radius - lambda,
                    DiskSense::Outside => d >= radius + lambda,
                }
            }
            RegionExpr::FinitePointSet { .. } => self.contains(x, u),
            RegionExpr::Intersection(parts) => {
                parts.iter().all(|p| p.contains_ball(x, u, lambda))
            }
            // A ball inside a union is certified by one covering member; this
            // matches the per-disk assignment the solver uses.
            RegionExpr::Union(parts) => parts.iter().any(|p| p.contains_ball(x, u, lambda)),
        }
    }
}

/// `contains(region, z)` from the module contract.
pub fn contains(region: &RegionExpr, x: &[f64], u: &[f64]) -> bool {
    region.contains(x, u)
}

/// Circular obstacle in the output plane.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

/// When an obstacle counts as discovered.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscoveryRule {
    /// The obstacle disk intersects the closed sensing disk. Keeps the safe
    /// set consistent: no sensed point can lie in an undiscovered obstacle.
    #[default]
    Intersection,
    /// The obstacle center is within sensing range.
    CenterInRange,
}

/// What one sensing pass reports.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensingReport {
    /// Current output, center of the newly sensed neighborhood.
    pub center: Vec<f64>,
    pub newly_discovered: Vec<usize>,
}

/// Knowledge about a continuous world: static limits `Z_sc`, obstacle list,
/// sensed disk centers and the discovered-obstacle index set.
#[derive(Clone, Debug)]
pub struct ContinuousKnowledge {
    /// Box bounds over the concatenated `(x, u)` coordinates.
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
    pub obstacles: Vec<Obstacle>,
    pub discovered: BTreeSet<usize>,
    pub sensed_centers: Vec<[f64; 2]>,
    pub sense_radius: f64,
    pub discovery: DiscoveryRule,
}

/// Knowledge about a finite world given as explicit pair lists. When
/// `sense_radius` is `None`, the safe and estimated sets are static.
#[derive(Clone, Debug)]
pub struct FiniteKnowledge {
    pub truth_pairs: Vec<(Vec<f64>, Vec<f64>)>,
    /// Static-limit pairs, the analog of `Z_sc`.
    pub z_sc_pairs: Vec<(Vec<f64>, Vec<f64>)>,
    /// Each obstacle is a set of blocked states.
    pub obstacle_cells: Vec<Vec<Vec<f64>>>,
    pub discovered: BTreeSet<usize>,
    pub sensed_states: Vec<Vec<f64>>,
    pub sense_radius: Option<f64>,
    /// Explicit safe pairs; grows on updates when sensing is enabled.
    pub safe_pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

#[derive(Clone, Debug)]
pub enum KnowledgeState {
    Continuous(ContinuousKnowledge),
    Finite(FiniteKnowledge),
}

impl ContinuousKnowledge {
    fn z_sc_box(&self) -> RegionExpr {
        RegionExpr::HyperBox {
            lower: self.z_lower.clone(),
            upper: self.z_upper.clone(),
        }
    }

    fn obstacle_region(&self, idx: usize, margin: f64) -> RegionExpr {
        RegionExpr::OutputDisk {
            center: self.obstacles[idx].center,
            radius: self.obstacles[idx].radius + margin,
            sense: DiskSense::Outside,
        }
    }

    /// True constraint set: static limits minus every obstacle interior.
    pub fn truth(&self) -> RegionExpr {
        let mut parts = vec![self.z_sc_box()];
        for i in 0..self.obstacles.len() {
            parts.push(self.obstacle_region(i, 0.0));
        }
        RegionExpr::Intersection(parts)
    }

    /// Verified safe set: static limits, inside some sensed disk, outside
    /// every discovered obstacle.
    pub fn safe(&self) -> RegionExpr {
        let disks = RegionExpr::Union(
            self.sensed_centers
                .iter()
                .map(|c| RegionExpr::OutputDisk {
                    center: *c,
                    radius: self.sense_radius,
                    sense: DiskSense::Inside,
                })
                .collect(),
        );
        let mut parts = vec![self.z_sc_box(), disks];
        for &i in &self.discovered {
            parts.push(self.obstacle_region(i, 0.0));
        }
        RegionExpr::Intersection(parts)
    }

    /// Estimated constraint set: static limits minus discovered obstacles.
    pub fn estimated(&self) -> RegionExpr {
        let mut parts = vec![self.z_sc_box()];
        for &i in &self.discovered {
            parts.push(self.obstacle_region(i, 0.0));
        }
        RegionExpr::Intersection(parts)
    }
}

impl FiniteKnowledge {
    pub fn truth(&self) -> RegionExpr {
        RegionExpr::finite_from_pairs(&self.truth_pairs)
    }

    pub fn safe(&self) -> RegionExpr {
        RegionExpr::finite_from_pairs(&self.safe_pairs)
    }

    pub fn estimated_pairs(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let blocked: BTreeSet<ExactPoint> = self
            .discovered
            .iter()
            .flat_map(|&i| self.obstacle_cells[i].iter().map(|c| ExactPoint::new(c)))
            .collect();
        self.z_sc_pairs
            .iter()
            .filter(|(x, u)| {
                !blocked.contains(&ExactPoint::new(x)) && !blocked.contains(&ExactPoint::new(u))
            })
            .cloned()
            .collect()
    }

    pub fn estimated(&self) -> RegionExpr {
        RegionExpr::finite_from_pairs(&self.estimated_pairs())
    }
}

impl KnowledgeState {
    pub fn truth(&self) -> RegionExpr {
        match self {
            KnowledgeState::Continuous(k) => k.truth(),
            KnowledgeState::Finite(k) => k.truth(),
        }
    }

    pub fn safe(&self) -> RegionExpr {
        match self {
            KnowledgeState::Continuous(k) => k.safe(),
            KnowledgeState::Finite(k) => k.safe(),
        }
    }

    pub fn estimated(&self) -> RegionExpr {
        match self {
            KnowledgeState::Continuous(k) => k.estimated(),
            KnowledgeState::Finite(k) => k.estimated(),
        }
    }

    pub fn discovered(&self) -> &BTreeSet<usize> {
        match self {
            KnowledgeState::Continuous(k) => &k.discovered,
            KnowledgeState::Finite(k) => &k.discovered,
        }
    }
}

/// Senses the neighborhood of the current pair `z = (x, u)`.
///
/// The report center is the current output; `newly_discovered` lists every
/// not-yet-discovered obstacle visible under the discovery rule. The pair
/// must lie in the true constraint set; anything else means the closed loop
/// already failed, so the run is aborted.
pub fn sense(
    k: &KnowledgeState,
    model: &dyn SystemModel,
    x: &[f64],
    u: &[f64],
) -> Result<SensingReport> {
    if !k.truth().contains(x, u) {
        return Err(Error::SafetyBreach(format!(
            "sensing from a pair outside the true constraint set: x={x:?} u={u:?}"
        )));
    }
    let y = model.output(x, u);
    match k {
        KnowledgeState::Continuous(c) => {
            let mut newly = Vec::new();
            for (i, ob) in c.obstacles.iter().enumerate() {
                if c.discovered.contains(&i) {
                    continue;
                }
                let d = dist2(&y, &ob.center);
                let visible = match c.discovery {
                    DiscoveryRule::Intersection => d <= c.sense_radius + ob.radius,
                    DiscoveryRule::CenterInRange => d <= c.sense_radius,
                };
                if visible {
                    newly.push(i);
                }
            }
            Ok(SensingReport {
                center: y,
                newly_discovered: newly,
            })
        }
        KnowledgeState::Finite(f) => {
            let mut newly = Vec::new();
            if let Some(h) = f.sense_radius {
                for (i, cells) in f.obstacle_cells.iter().enumerate() {
                    if f.discovered.contains(&i) {
                        continue;
                    }
                    if cells.iter().any(|c| dist2(c, x) <= h) {
                        newly.push(i);
                    }
                }
            }
            Ok(SensingReport {
                center: x.to_vec(),
                newly_discovered: newly,
            })
        }
    }
}

/// Applies a sensing report: the safe set gains the sensed neighborhood and
/// the estimated set loses the newly discovered obstacles. Both updates keep
/// the safe set monotone nondecreasing.
pub fn update_knowledge(k: &mut KnowledgeState, report: &SensingReport) {
    match k {
        KnowledgeState::Continuous(c) => {
            c.discovered.extend(report.newly_discovered.iter().copied());
            let center = [report.center[0], report.center[1]];
            if !c.sensed_centers.contains(&center) {
                c.sensed_centers.push(center);
            }
        }
        KnowledgeState::Finite(f) => {
            f.discovered.extend(report.newly_discovered.iter().copied());
            if let Some(h) = f.sense_radius {
                if !f.sensed_states.contains(&report.center) {
                    f.sensed_states.push(report.center.clone());
                }
                let have: BTreeSet<ExactPoint> = f
                    .safe_pairs
                    .iter()
                    .map(|(x, u)| ExactPoint::from_pair(x, u))
                    .collect();
                for (x, u) in &f.truth_pairs {
                    if dist2(x, &report.center) <= h
                        && !have.contains(&ExactPoint::from_pair(x, u))
                    {
                        f.safe_pairs.push((x.clone(), u.clone()));
                    }
                }
            }
        }
    }
}

/// Whether `r` is steady and its `lambda`-ball lies in `region`.
///
/// Discrete models (no sampling time) must be exactly steady; discretized
/// continuous models get a small residual allowance.
pub fn is_steady_admissible(
    model: &dyn SystemModel,
    r: &Setpoint,
    region: &RegionExpr,
    lambda: f64,
) -> bool {
    let tol = if model.sample_time().is_some() {
        1e-8
    } else {
        0.0
    };
    steady_residual(model, r) <= tol && region.contains_ball(&r.x, &r.u, lambda)
}

#[cfg(test)]
pub(crate) mod test_fixtures {
    use super::Obstacle;

    pub fn car_bounds() -> (Vec<f64>, Vec<f64>) {
        let deg = std::f64::consts::PI / 180.0;
        (
            vec![
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
                -1.0,
                -37.0 * deg,
                -10.0,
                -10.0 * deg,
            ],
            vec![
                12.0,
                2.0,
                f64::INFINITY,
                36.0,
                37.0 * deg,
                1.0,
                10.0 * deg,
            ],
        )
    }

    pub fn car_obstacles() -> Vec<Obstacle> {
        vec![
            Obstacle {
                center: [4.0, 0.3],
                radius: 0.51,
            },
            Obstacle {
                center: [4.0, -0.3],
                radius: 0.51,
            },
            Obstacle {
                center: [10.0, 1.0],
                radius: 1.50,
            },
            Obstacle {
                center: [7.0, -1.0],
                radius: 1.00,
            },
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::test_fixtures::{car_bounds, car_obstacles};
    use super::*;
    use crate::dynamics::{Bicycle, BicycleParams, Integrator1d};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn car_knowledge() -> ContinuousKnowledge {
        let (lo, hi) = car_bounds();
        ContinuousKnowledge {
            z_lower: lo,
            z_upper: hi,
            obstacles: car_obstacles(),
            discovered: BTreeSet::new(),
            sensed_centers: Vec::new(),
            sense_radius: 2.5,
            discovery: DiscoveryRule::Intersection,
        }
    }

    #[test]
    fn initial_car_state_is_feasible() {
        let k = car_knowledge();
        let zsc = RegionExpr::HyperBox {
            lower: k.z_lower.clone(),
            upper: k.z_upper.clone(),
        };
        assert!(zsc.contains(&[1.5, 0.0, 0.0, 5.0, 0.0], &[0.0, 0.0]));
        assert!(k.truth().contains(&[1.5, 0.0, 0.0, 5.0, 0.0], &[0.0, 0.0]));
    }

    #[test]
    fn obstacle_center_is_not_a_member() {
        let disk = RegionExpr::OutputDisk {
            center: [4.0, 0.3],
            radius: 0.51,
            sense: DiskSense::Outside,
        };
        assert!(!disk.contains(&[4.0, 0.3, 0.0, 0.0, 0.0], &[0.0, 0.0]));
        // Boundary belongs to the obstacle as well.
        assert!(!disk.contains(&[4.51, 0.3, 0.0, 0.0, 0.0], &[0.0, 0.0]));
        assert!(disk.contains(&[4.52, 0.3, 0.0, 0.0, 0.0], &[0.0, 0.0]));
    }

    #[test]
    fn finite_point_set_membership_is_exact() {
        let e = RegionExpr::finite_from_pairs(&[
            (vec![2.0], vec![2.0]),
            (vec![2.0], vec![0.0]),
            (vec![0.0], vec![0.0]),
        ]);
        assert!(e.contains(&[2.0], &[0.0]));
        assert!(!e.contains(&[2.0], &[1.0]));
    }

    #[test]
    fn sensing_from_initial_car_state_discovers_the_wall() {
        let mut k = KnowledgeState::Continuous(car_knowledge());
        let model = Bicycle::new(BicycleParams::default());
        let report = sense(&k, &model, &[1.5, 0.0, 0.0, 5.0, 0.0], &[0.0, 0.0]).unwrap();
        // dist((1.5,0),(4,±0.3)) ≈ 2.518 ≤ 2.5 + 0.51, the others are farther
        // than 2.5 + r.
        assert_eq!(report.newly_discovered, vec![0, 1]);
        update_knowledge(&mut k, &report);

        // Idempotence: sensing again from the same spot discovers nothing new.
        let again = sense(&k, &model, &[1.5, 0.0, 0.0, 5.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!(again.newly_discovered.is_empty());
    }

    #[test]
    fn sensing_far_from_everything_discovers_nothing() {
        let k = KnowledgeState::Continuous(car_knowledge());
        let model = Bicycle::new(BicycleParams::default());
        let report = sense(&k, &model, &[-10.0, 0.0, 0.0, 0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!(report.newly_discovered.is_empty());
    }

    #[test]
    fn sensing_outside_truth_is_a_safety_breach() {
        let k = KnowledgeState::Continuous(car_knowledge());
        let model = Bicycle::new(BicycleParams::default());
        let err = sense(&k, &model, &[4.0, 0.3, 0.0, 0.0, 0.0], &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::SafetyBreach(_)));
    }

    #[test]
    fn updated_safe_set_is_the_sensed_disk_minus_obstacles() {
        let mut k = KnowledgeState::Continuous(car_knowledge());
        let model = Bicycle::new(BicycleParams::default());
        let report = sense(&k, &model, &[1.5, 0.0, 0.0, 5.0, 0.0], &[0.0, 0.0]).unwrap();
        update_knowledge(&mut k, &report);
        let safe = k.safe();
        // In the disk and clear of the wall.
        assert!(safe.contains(&[2.0, 0.5, 0.0, 0.0, 0.0], &[0.0, 0.0]));
        // In the disk but inside obstacle 1.
        assert!(!safe.contains(&[3.8, 0.3, 0.0, 0.0, 0.0], &[0.0, 0.0]));
        // Outside the disk.
        assert!(!safe.contains(&[6.0, 0.0, 0.0, 0.0, 0.0], &[0.0, 0.0]));

        // Duplicate update leaves membership unchanged on a probe grid.
        let before: Vec<bool> = (0..200)
            .map(|i| {
                let x = -1.0 + 0.05 * i as f64;
                safe.contains(&[x, 0.2, 0.0, 0.0, 0.0], &[0.0, 0.0])
            })
            .collect();
        update_knowledge(&mut k, &report);
        let safe2 = k.safe();
        let after: Vec<bool> = (0..200)
            .map(|i| {
                let x = -1.0 + 0.05 * i as f64;
                safe2.contains(&[x, 0.2, 0.0, 0.0, 0.0], &[0.0, 0.0])
            })
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn knowledge_inclusions_hold_on_random_samples() {
        let mut k = KnowledgeState::Continuous(car_knowledge());
        let model = Bicycle::new(BicycleParams::default());
        let poses = [
            [1.5, 0.0, 0.0, 5.0, 0.0],
            [2.5, 0.5, 0.1, 2.0, 0.0],
            [3.2, -0.5, 0.0, 1.0, 0.0],
        ];
        for p in &poses {
            let r = sense(&k, &model, p, &[0.0, 0.0]).unwrap();
            update_knowledge(&mut k, &r);
        }
        let (safe, est, truth) = (k.safe(), k.estimated(), k.truth());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0usize;
        for _ in 0..10_000 {
            let x = vec![
                rng.gen_range(-2.0..12.0),
                rng.gen_range(-3.0..2.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..36.0),
                rng.gen_range(-0.6..0.6),
            ];
            let u = vec![rng.gen_range(-10.0..1.0), rng.gen_range(-0.17..0.17)];
            if safe.contains(&x, &u) {
                assert!(truth.contains(&x, &u), "E ⊆ Z violated at {x:?}");
                assert!(est.contains(&x, &u), "E ⊆ Z_t violated at {x:?}");
                checked += 1;
            }
            if est.contains(&x, &u) {
                // Z_t ⊆ Z_sc holds structurally; spot-check the box.
                let zsc = RegionExpr::HyperBox {
                    lower: match &k {
                        KnowledgeState::Continuous(c) => c.z_lower.clone(),
                        _ => unreachable!(),
                    },
                    upper: match &k {
                        KnowledgeState::Continuous(c) => c.z_upper.clone(),
                        _ => unreachable!(),
                    },
                };
                assert!(zsc.contains(&x, &u));
            }
        }
        assert!(checked > 100, "sampler never hit the safe set");
    }

    #[test]
    fn sensed_neighborhood_is_inside_updated_safe_set() {
        let mut k = KnowledgeState::Continuous(car_knowledge());
        let model = Bicycle::new(BicycleParams::default());
        let z = [2.0, 0.5, 0.0, 1.0, 0.0];
        let r = sense(&k, &model, &z, &[0.0, 0.0]).unwrap();
        update_knowledge(&mut k, &r);
        let (safe, truth) = (k.safe(), k.truth());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let ang = rng.gen_range(0.0..std::f64::consts::TAU);
            let rad = rng.gen_range(0.0..2.5);
            let x = vec![
                2.0 + rad * ang.cos(),
                (0.5 + rad * ang.sin()).min(2.0),
                0.0,
                0.0,
                0.0,
            ];
            let u = vec![0.0, 0.0];
            // H(z) = ball ∩ Z must be inside E after the update.
            if dist2(&x[..2], &[2.0, 0.5]) <= 2.5 && truth.contains(&x, &u) {
                assert!(safe.contains(&x, &u));
            }
        }
    }

    #[test]
    fn safe_set_monotone_under_update_sequences() {
        let mut k = KnowledgeState::Continuous(car_knowledge());
        let model = Bicycle::new(BicycleParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut sample = |rng: &mut ChaCha8Rng| {
            (
                vec![
                    rng.gen_range(-2.0..12.0),
                    rng.gen_range(-3.0..2.0),
                    0.0,
                    rng.gen_range(-1.0..5.0),
                    0.0,
                ],
                vec![rng.gen_range(-10.0..1.0), 0.0],
            )
        };
        let poses = [
            [1.5, 0.0, 0.0, 5.0, 0.0],
            [2.5, 0.8, 0.0, 2.0, 0.0],
            [3.0, 1.2, 0.0, 1.0, 0.0],
            [4.2, 1.5, 0.0, 1.0, 0.0],
        ];
        for p in &poses {
            let safe_before = k.safe();
            let members: Vec<(Vec<f64>, Vec<f64>)> = (0..1000)
                .map(|_| sample(&mut rng))
                .filter(|(x, u)| safe_before.contains(x, u))
                .collect();
            let r = sense(&k, &model, p, &[0.0, 0.0]).unwrap();
            update_knowledge(&mut k, &r);
            let safe_after = k.safe();
            for (x, u) in &members {
                assert!(safe_after.contains(x, u), "monotonicity broke at {x:?}");
            }
        }
        // Discovered set only grows and stays discovered.
        assert!(k.discovered().contains(&0) && k.discovered().contains(&1));
    }

    #[test]
    fn steady_admissibility_examples() {
        // Toy: (0,0) is steady and in the finite set; margins are ignored.
        let e = RegionExpr::finite_from_pairs(&[
            (vec![2.0], vec![2.0]),
            (vec![2.0], vec![0.0]),
            (vec![0.0], vec![0.0]),
        ]);
        let r = Setpoint::new(vec![0.0], vec![0.0]);
        assert!(is_steady_admissible(&Integrator1d, &r, &e, 0.01));

        let model = Bicycle::new(BicycleParams::default());
        let truth = KnowledgeState::Continuous(car_knowledge()).truth();
        // Componentwise margin keeps the ball off the x1 <= 12 face, so the
        // admissible optimum sits just inside the bound.
        let at_margin = Setpoint::new(vec![11.985, 1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0]);
        assert!(is_steady_admissible(&model, &at_margin, &truth, 0.01));
        let on_bound = Setpoint::new(vec![12.0, 1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0]);
        assert!(!is_steady_admissible(&model, &on_bound, &truth, 0.01));

        // Nonzero velocity is not steady.
        let rolling = Setpoint::new(vec![6.0, 0.0, 0.0, 5.0, 0.0], vec![0.0, 0.0]);
        assert!(!is_steady_admissible(&model, &rolling, &truth, 0.01));
    }
}
