//! Scenario configuration: file schema, validation, instantiation, and the
//! randomized finite-grid generators used by the verification suites.

use std::collections::BTreeSet;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costs::{CostConfig, CostModel, TabularCost, WeightMatrix};
use crate::dynamics::{Bicycle, BicycleParams, Integrator1d, SmoothDynamics, SystemModel};
use crate::environment::{
    ContinuousKnowledge, DiscoveryRule, FiniteKnowledge, KnowledgeState, Obstacle, Setpoint,
};
use crate::error::Error;
use crate::mpc::{ContinuousWorld, FiniteWorld, MpcConfig, ProblemWorld};
use crate::Result;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelConfig {
    Bicycle { l_r: f64, sample_time: f64 },
    Integrator1d,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairConfig {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObstacleConfig {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Continuous {
        /// Box over the concatenated `(x, u)` coordinates; `inf` allowed.
        z_lower: Vec<f64>,
        z_upper: Vec<f64>,
        obstacles: Vec<ObstacleConfig>,
        sense_radius: f64,
        #[serde(default)]
        discovery: DiscoveryRule,
    },
    Finite {
        /// Static-limit pairs (the full candidate set).
        z_sc: Vec<PairConfig>,
        /// True pairs; defaults to `z_sc` minus obstacle cells.
        #[serde(default)]
        truth: Option<Vec<PairConfig>>,
        /// Each obstacle is a list of blocked states.
        #[serde(default)]
        obstacle_cells: Vec<Vec<Vec<f64>>>,
        /// Sensing radius in state space; absent means static knowledge.
        #[serde(default)]
        sense_radius: Option<f64>,
        /// Initial safe pairs; may be empty when sensing populates them.
        #[serde(default)]
        safe: Vec<PairConfig>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostsConfig {
    Quadratic {
        q: WeightMatrix,
        r: WeightMatrix,
        p: WeightMatrix,
        y_desired: Vec<f64>,
    },
    Tabular {
        stage: Vec<StageEntry>,
        terminal: Vec<TerminalEntry>,
        /// Optional quadratic offset on top of the tables.
        #[serde(default)]
        offset: Option<QuadraticOffset>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadraticOffset {
    pub p: WeightMatrix,
    pub y_desired: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageEntry {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub cost: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TerminalEntry {
    pub x: Vec<f64>,
    pub rx: Vec<f64>,
    pub ru: Vec<f64>,
    pub cost: f64,
}

/// Timed change of the desired output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Event {
    pub t: usize,
    pub y_desired: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub max_steps: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub costs: CostsConfig,
    pub mpc: MpcConfig,
    pub environment: EnvConfig,
    pub initial_state: Vec<f64>,
    /// Pins the setpoint candidates of finite scenarios (terminal-set pin).
    #[serde(default)]
    pub terminal_setpoints: Option<Vec<PairConfig>>,
    #[serde(default)]
    pub events: Vec<Event>,
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse(format!("scenario: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(format!("scenario: {e}")))
    }

    /// Instantiates and validates the scenario.
    pub fn build(&self) -> Result<BuiltScenario> {
        self.mpc.validate()?;
        let model = match &self.model {
            ModelConfig::Bicycle { l_r, sample_time } => {
                let params = BicycleParams {
                    l_r: *l_r,
                    sample_time: *sample_time,
                };
                params.validate()?;
                ModelInstance::Bicycle(Bicycle::new(params))
            }
            ModelConfig::Integrator1d => ModelInstance::Toy(Integrator1d),
        };
        let sys = model.system();
        if self.initial_state.len() != sys.state_dim() {
            return Err(Error::DimensionMismatch {
                what: "initial state",
                expected: sys.state_dim(),
                got: self.initial_state.len(),
            });
        }

        let costs = match &self.costs {
            CostsConfig::Quadratic { q, r, p, y_desired } => {
                let cfg = CostConfig {
                    q: q.clone(),
                    r: r.clone(),
                    p: p.clone(),
                    y_desired: y_desired.clone(),
                };
                cfg.validate(sys.state_dim(), sys.input_dim(), sys.output_dim())?;
                CostModel::quadratic(&cfg)
            }
            CostsConfig::Tabular {
                stage,
                terminal,
                offset,
            } => {
                let mut table = TabularCost::default();
                for e in stage {
                    table.stage_entry(&e.x, &e.u, e.cost);
                }
                for e in terminal {
                    table.terminal_entry(&e.x, &Setpoint::new(e.rx.clone(), e.ru.clone()), e.cost);
                }
                let mut cm = CostModel::tabular(table);
                if let Some(off) = offset {
                    cm.offset = crate::costs::OffsetCost::Quadratic {
                        p: off.p.clone(),
                        y_desired: off.y_desired.clone(),
                    };
                }
                cm
            }
        };

        let knowledge = match &self.environment {
            EnvConfig::Continuous {
                z_lower,
                z_upper,
                obstacles,
                sense_radius,
                discovery,
            } => {
                let dims = sys.state_dim() + sys.input_dim();
                if z_lower.len() != dims || z_upper.len() != dims {
                    return Err(Error::Config("z bounds must cover (x, u)".into()));
                }
                KnowledgeState::Continuous(ContinuousKnowledge {
                    z_lower: z_lower.clone(),
                    z_upper: z_upper.clone(),
                    obstacles: obstacles
                        .iter()
                        .map(|o| Obstacle {
                            center: o.center,
                            radius: o.radius,
                        })
                        .collect(),
                    discovered: BTreeSet::new(),
                    sensed_centers: Vec::new(),
                    sense_radius: *sense_radius,
                    discovery: *discovery,
                })
            }
            EnvConfig::Finite {
                z_sc,
                truth,
                obstacle_cells,
                sense_radius,
                safe,
            } => {
                let to_pairs = |v: &[PairConfig]| -> Vec<(Vec<f64>, Vec<f64>)> {
                    v.iter().map(|p| (p.x.clone(), p.u.clone())).collect()
                };
                let z_sc_pairs = to_pairs(z_sc);
                let truth_pairs = match truth {
                    Some(t) => to_pairs(t),
                    None => {
                        let blocked: Vec<&Vec<f64>> =
                            obstacle_cells.iter().flatten().collect();
                        z_sc_pairs
                            .iter()
                            .filter(|(x, u)| {
                                !blocked.iter().any(|c| *c == x || *c == u)
                            })
                            .cloned()
                            .collect()
                    }
                };
                KnowledgeState::Finite(FiniteKnowledge {
                    truth_pairs,
                    z_sc_pairs,
                    obstacle_cells: obstacle_cells.clone(),
                    discovered: BTreeSet::new(),
                    sensed_states: Vec::new(),
                    sense_radius: *sense_radius,
                    safe_pairs: to_pairs(safe),
                })
            }
        };

        let fixed_setpoints = self.terminal_setpoints.as_ref().map(|list| {
            list.iter()
                .map(|p| Setpoint::new(p.x.clone(), p.u.clone()))
                .collect::<Vec<_>>()
        });

        // The initial state must lie in the true set with the neutral input.
        let u0 = neutral_input(&model, &self.initial_state);
        if !knowledge.truth().contains(&self.initial_state, &u0) {
            return Err(Error::Config(
                "initial state is outside the true constraint set".into(),
            ));
        }

        Ok(BuiltScenario {
            model,
            costs,
            knowledge,
            fixed_setpoints,
        })
    }
}

/// A neutral admissible input used for sensing-time membership checks.
pub fn neutral_input(model: &ModelInstance, x: &[f64]) -> Vec<f64> {
    match model {
        ModelInstance::Bicycle(_) => vec![0.0, 0.0],
        ModelInstance::Toy(_) => x.to_vec(),
    }
}

#[derive(Clone, Debug)]
pub enum ModelInstance {
    Bicycle(Bicycle),
    Toy(Integrator1d),
}

impl ModelInstance {
    pub fn system(&self) -> &dyn SystemModel {
        match self {
            ModelInstance::Bicycle(b) => b,
            ModelInstance::Toy(t) => t,
        }
    }

    pub fn smooth(&self) -> Option<&dyn SmoothDynamics> {
        match self {
            ModelInstance::Bicycle(b) => Some(b),
            ModelInstance::Toy(_) => None,
        }
    }
}

/// Instantiated scenario pieces.
pub struct BuiltScenario {
    pub model: ModelInstance,
    pub costs: CostModel,
    pub knowledge: KnowledgeState,
    pub fixed_setpoints: Option<Vec<Setpoint>>,
}

/// Runs `f` with a problem-world view assembled from the pieces. The rest
/// and steady-projection templates of the car family live here.
pub fn with_world<R>(
    model: &ModelInstance,
    knowledge: &KnowledgeState,
    fixed_setpoints: Option<&[Setpoint]>,
    f: impl FnOnce(&ProblemWorld) -> R,
) -> Result<R> {
    match (model, knowledge) {
        (ModelInstance::Bicycle(b), KnowledgeState::Continuous(k)) => {
            let rest = |y: &[f64]| -> Setpoint {
                Setpoint::new(vec![y[0], y[1], 0.0, 0.0, 0.0], vec![0.0, 0.0])
            };
            let project = |r: &mut Setpoint| {
                r.x[3] = 0.0;
                r.u = vec![0.0, 0.0];
            };
            let world = ProblemWorld::Continuous(ContinuousWorld {
                model: b,
                knowledge: k,
                rest: &rest,
                project_steady: &project,
            });
            Ok(f(&world))
        }
        (ModelInstance::Toy(m), KnowledgeState::Finite(k)) => {
            let world = ProblemWorld::Finite(FiniteWorld {
                model: m,
                knowledge: k,
                fixed_setpoints,
            });
            Ok(f(&world))
        }
        _ => Err(Error::Config(
            "model and environment kinds do not match".into(),
        )),
    }
}

/// The finite counter-example scenario.
pub fn counterexample_toy() -> ScenarioConfig {
    let pairs = |v: &[(f64, f64)]| -> Vec<PairConfig> {
        v.iter()
            .map(|(x, u)| PairConfig {
                x: vec![*x],
                u: vec![*u],
            })
            .collect()
    };
    ScenarioConfig {
        name: "counterexample_toy".into(),
        max_steps: 20,
        seed: 0,
        model: ModelConfig::Integrator1d,
        costs: CostsConfig::Tabular {
            stage: vec![
                StageEntry { x: vec![2.0], u: vec![2.0], cost: 2.0 },
                StageEntry { x: vec![2.0], u: vec![1.0], cost: 1.0 },
                StageEntry { x: vec![2.0], u: vec![0.0], cost: 10.0 },
                StageEntry { x: vec![1.0], u: vec![0.0], cost: 1.0 },
                StageEntry { x: vec![0.0], u: vec![0.0], cost: 0.0 },
            ],
            terminal: vec![TerminalEntry {
                x: vec![0.0],
                rx: vec![0.0],
                ru: vec![0.0],
                cost: 0.0,
            }],
            offset: None,
        },
        mpc: MpcConfig {
            horizon: 3,
            epsilon: 1.0,
            alpha: 1.0,
            lambda: 0.01,
            mode: crate::mpc::Mode::Proposed,
            s0: 3.0,
            f_hat0: crate::mpc::FHat0::Unbounded,
            tolerances: Default::default(),
            multi_starts: 1,
        },
        environment: EnvConfig::Finite {
            z_sc: pairs(&[(2.0, 2.0), (2.0, 1.0), (2.0, 0.0), (1.0, 0.0), (0.0, 0.0)]),
            truth: None,
            obstacle_cells: Vec::new(),
            sense_radius: None,
            safe: pairs(&[(2.0, 2.0), (2.0, 0.0), (0.0, 0.0)]),
        },
        initial_state: vec![2.0],
        terminal_setpoints: Some(vec![PairConfig {
            x: vec![0.0],
            u: vec![0.0],
        }]),
        events: Vec::new(),
    }
}

/// The partially unknown car world.
pub fn car_partially_unknown() -> ScenarioConfig {
    let deg = std::f64::consts::PI / 180.0;
    ScenarioConfig {
        name: "car_partially_unknown".into(),
        max_steps: 600,
        seed: 1,
        model: ModelConfig::Bicycle {
            l_r: 1.7,
            sample_time: 0.2,
        },
        costs: CostsConfig::Quadratic {
            q: WeightMatrix::Diagonal(vec![1.0, 1.0, 1e-5, 1e-5, 1e-5]),
            r: WeightMatrix::Diagonal(vec![1.0, 1.0]),
            p: WeightMatrix::identity(2),
            y_desired: vec![12.0, 1.0],
        },
        mpc: MpcConfig {
            horizon: 50,
            epsilon: 0.01,
            alpha: 1.0,
            lambda: 0.01,
            mode: crate::mpc::Mode::Proposed,
            s0: 1.0,
            f_hat0: crate::mpc::FHat0::Unbounded,
            tolerances: Default::default(),
            multi_starts: 4,
        },
        environment: EnvConfig::Continuous {
            z_lower: vec![
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
                -1.0,
                -37.0 * deg,
                -10.0,
                -10.0 * deg,
            ],
            z_upper: vec![12.0, 2.0, f64::INFINITY, 36.0, 37.0 * deg, 1.0, 10.0 * deg],
            obstacles: vec![
                ObstacleConfig { center: [4.0, 0.3], radius: 0.51 },
                ObstacleConfig { center: [4.0, -0.3], radius: 0.51 },
                ObstacleConfig { center: [10.0, 1.0], radius: 1.50 },
                ObstacleConfig { center: [7.0, -1.0], radius: 1.00 },
            ],
            sense_radius: 2.5,
            discovery: DiscoveryRule::Intersection,
        },
        initial_state: vec![1.5, 0.0, 0.0, 5.0, 0.0],
        terminal_setpoints: None,
        events: Vec::new(),
    }
}

/// Random 1-D line world with sensing and blocked cells, for the
/// invariant-suite runs.
pub fn random_grid_scenario(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = rng.gen_range(8..=13) as i64;
    let x0 = rng.gen_range(0..=2) as f64;
    let goal = cells as f64 + rng.gen_range(1..=3) as f64;
    let q = rng.gen_range(0.05..0.15);
    let r_w = rng.gen_range(0.01..0.03);
    let scale = rng.gen_range(1.5..3.0);

    // one or two blocked cells, away from the start
    let mut blocked: BTreeSet<i64> = BTreeSet::new();
    for _ in 0..rng.gen_range(1..=2) {
        blocked.insert(rng.gen_range(3..cells - 1));
    }

    let mut z_sc = Vec::new();
    for x in 0..=cells {
        for u in [x - 1, x, x + 1] {
            if u < 0 || u > cells {
                continue;
            }
            z_sc.push(PairConfig {
                x: vec![x as f64],
                u: vec![u as f64],
            });
        }
    }
    let obstacle_cells: Vec<Vec<Vec<f64>>> =
        blocked.iter().map(|c| vec![vec![*c as f64]]).collect();

    ScenarioConfig {
        name: format!("grid_{seed}"),
        max_steps: 25,
        seed,
        model: ModelConfig::Integrator1d,
        costs: CostsConfig::Quadratic {
            q: WeightMatrix::Diagonal(vec![q]),
            r: WeightMatrix::Diagonal(vec![r_w]),
            p: WeightMatrix::Diagonal(vec![scale]),
            y_desired: vec![goal],
        },
        mpc: MpcConfig {
            horizon: rng.gen_range(3..=5),
            epsilon: *[1.0, 0.1].choose(&mut rng).unwrap(),
            alpha: 1.0,
            lambda: 0.01,
            mode: crate::mpc::Mode::Proposed,
            s0: rng.gen_range(0.5..3.0),
            f_hat0: crate::mpc::FHat0::Unbounded,
            tolerances: Default::default(),
            multi_starts: 1,
        },
        environment: EnvConfig::Finite {
            z_sc,
            truth: None,
            obstacle_cells,
            sense_radius: Some(*[1.0, 1.5, 2.0].choose(&mut rng).unwrap()),
            safe: Vec::new(),
        },
        initial_state: vec![x0],
        terminal_setpoints: None,
        events: Vec::new(),
    }
}

/// Full-manifold grid with strictly improving offset toward a goal beyond
/// the line end; interior setpoints all satisfy the sliding property.
pub fn prop1_grid_scenario(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b9).wrapping_add(seed));
    let cells = rng.gen_range(5..=9) as i64;
    let goal = cells as f64 + rng.gen_range(3..=5) as f64;
    let q = rng.gen_range(0.05..0.15);
    let r_w = rng.gen_range(0.01..0.03);
    let scale = rng.gen_range(1.5..3.0);
    let mut z_sc = Vec::new();
    for x in 0..=cells {
        for u in [x - 1, x, x + 1] {
            if u < 0 || u > cells {
                continue;
            }
            z_sc.push(PairConfig {
                x: vec![x as f64],
                u: vec![u as f64],
            });
        }
    }
    ScenarioConfig {
        name: format!("prop1_grid_{seed}"),
        max_steps: 20,
        seed,
        model: ModelConfig::Integrator1d,
        costs: CostsConfig::Quadratic {
            q: WeightMatrix::Diagonal(vec![q]),
            r: WeightMatrix::Diagonal(vec![r_w]),
            p: WeightMatrix::Diagonal(vec![scale]),
            y_desired: vec![goal],
        },
        mpc: MpcConfig {
            horizon: rng.gen_range(3..=5),
            epsilon: 1.0,
            alpha: 1.0,
            lambda: 0.01,
            mode: crate::mpc::Mode::Proposed,
            s0: 1.0,
            f_hat0: crate::mpc::FHat0::Unbounded,
            tolerances: Default::default(),
            multi_starts: 1,
        },
        environment: EnvConfig::Finite {
            z_sc,
            truth: None,
            obstacle_cells: Vec::new(),
            sense_radius: None,
            safe: Vec::new(),
        },
        initial_state: vec![0.0],
        terminal_setpoints: None,
        events: Vec::new(),
    }
}

/// Gap-obstacle line: staying is forbidden on the gap cells, transit is
/// allowed, and the far manifold island is much closer to the goal. The
/// boundary setpoint in front of the gap flips from non-transitory to
/// transitory as epsilon drops one order of magnitude.
pub fn gap_grid_scenario() -> ScenarioConfig {
    let mut z_sc = Vec::new();
    for x in 0..=10i64 {
        for u in [x - 1, x, x + 1] {
            if u < 0 || u > 10 {
                continue;
            }
            // staying inside the gap cells 5..=9 is not admissible
            if x == u && (5..=9).contains(&x) {
                continue;
            }
            z_sc.push(PairConfig {
                x: vec![x as f64],
                u: vec![u as f64],
            });
        }
    }
    ScenarioConfig {
        name: "gap_grid".into(),
        max_steps: 30,
        seed: 7,
        model: ModelConfig::Integrator1d,
        costs: CostsConfig::Quadratic {
            q: WeightMatrix::Diagonal(vec![1.0]),
            r: WeightMatrix::Diagonal(vec![0.1]),
            p: WeightMatrix::Diagonal(vec![2.0]),
            y_desired: vec![10.0],
        },
        mpc: MpcConfig {
            horizon: 7,
            epsilon: 1.0,
            alpha: 1.0,
            lambda: 0.01,
            mode: crate::mpc::Mode::Proposed,
            s0: 1.0,
            f_hat0: crate::mpc::FHat0::Unbounded,
            tolerances: Default::default(),
            multi_starts: 1,
        },
        environment: EnvConfig::Finite {
            z_sc,
            truth: None,
            obstacle_cells: Vec::new(),
            sense_radius: None,
            safe: Vec::new(),
        },
        initial_state: vec![4.0],
        terminal_setpoints: None,
        events: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_scenario_builds_and_roundtrips_through_toml() {
        let sc = counterexample_toy();
        let text = sc.to_toml_string().unwrap();
        let back = ScenarioConfig::from_toml_str(&text).unwrap();
        let built = back.build().unwrap();
        assert!(matches!(built.model, ModelInstance::Toy(_)));
        match &built.knowledge {
            KnowledgeState::Finite(k) => {
                assert_eq!(k.safe_pairs.len(), 3);
                assert_eq!(k.z_sc_pairs.len(), 5);
            }
            _ => panic!("expected finite knowledge"),
        }
    }

    #[test]
    fn car_scenario_builds_with_infinite_bounds() {
        let sc = car_partially_unknown();
        let text = sc.to_toml_string().unwrap();
        let back = ScenarioConfig::from_toml_str(&text).unwrap();
        let built = back.build().unwrap();
        match &built.knowledge {
            KnowledgeState::Continuous(k) => {
                assert_eq!(k.obstacles.len(), 4);
                assert!(k.z_upper[2].is_infinite());
                assert_eq!(k.sense_radius, 2.5);
            }
            _ => panic!("expected continuous knowledge"),
        }
    }

    #[test]
    fn initial_state_outside_truth_is_rejected() {
        let mut sc = car_partially_unknown();
        sc.initial_state = vec![4.0, 0.3, 0.0, 0.0, 0.0]; // obstacle center
        assert!(matches!(sc.build(), Err(Error::Config(_))));
    }

    #[test]
    fn random_grids_are_reproducible() {
        let a = random_grid_scenario(42);
        let b = random_grid_scenario(42);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        a.build().unwrap();
    }
}
