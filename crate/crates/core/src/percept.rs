//! Per-robot observations: constant-velocity trajectory predictions and the
//! visibility-masked interaction graph.
//!
//! The same [`Predictions`] value feeds both the node features and the
//! prediction penalty of the reward.

use crate::geom::Vec2;
use crate::numcore::Tensor;
use crate::sim::{visibility_matrix, EntityKind, EntityState, Visibility, World};

/// Number of predicted future poses per entity.
pub const HORIZON: usize = 5;
/// Current position plus `HORIZON` predictions (x, y each) and a 2-way kind one-hot.
pub const NODE_DIM: usize = 2 * (HORIZON + 1) + 2;
/// `[px, py, vx, vy, gx, gy, θ, r, v_pref]`.
pub const INTRINSIC_DIM: usize = 9;

/// Positions `p + k·v̂·dt` for `k = 1..=horizon`, with `v̂` estimated from the
/// current and previous positions.
pub fn predict_trajectory(entity: &EntityState, dt: f64, horizon: usize) -> Vec<Vec2> {
    let v_hat = (entity.position - entity.prev_position) / dt;
    (1..=horizon)
        .map(|k| entity.position + v_hat * (k as f64 * dt))
        .collect()
}

/// Constant-velocity predictions of every entity in a world.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub poses: Vec<[Vec2; HORIZON]>,
}

impl Predictions {
    pub fn from_world(world: &World) -> Self {
        let poses = world
            .entities
            .iter()
            .map(|e| {
                let p = predict_trajectory(e, world.dt(), HORIZON);
                std::array::from_fn(|k| p[k])
            })
            .collect();
        Self { poses }
    }
}

/// Node features plus the adjacency mask of one robot's view.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionGraph {
    /// `[N, NODE_DIM]`; rows of entities the robot cannot see are zero.
    pub features: Tensor,
    /// Row-major `N × N` adjacency, equal to the visibility matrix.
    pub adjacency: Vec<bool>,
    /// Row index of the observing robot.
    pub agent: usize,
}

impl InteractionGraph {
    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    /// Whether node `i` is visible to the observing robot.
    pub fn node_visible(&self, i: usize) -> bool {
        let n = self.num_nodes();
        self.adjacency[i * n + i]
    }

    /// Reorders nodes: new node `k` is old node `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let n = self.num_nodes();
        let mut features = Tensor::zeros(self.features.shape());
        let mut adjacency = vec![false; n * n];
        for (new_i, &old_i) in order.iter().enumerate() {
            features
                .row_slice_mut(new_i)
                .copy_from_slice(self.features.row_slice(old_i));
            for (new_k, &old_k) in order.iter().enumerate() {
                adjacency[new_i * n + new_k] = self.adjacency[old_i * n + old_k];
            }
        }
        let agent = order.iter().position(|&o| o == self.agent).expect("agent kept");
        Self {
            features,
            adjacency,
            agent,
        }
    }
}

/// Input of the policy for one robot at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub graph: InteractionGraph,
    pub intrinsic: [f64; INTRINSIC_DIM],
}

/// Assembles robot `agent`'s observation. With `agent_centric` set in the
/// scenario config, positions are expressed relative to the robot.
pub fn build_observation(world: &World, agent: usize, predictions: &Predictions) -> Observation {
    let vis = visibility_matrix(world, agent);
    build_observation_with(world, agent, predictions, &vis)
}

pub fn build_observation_with(
    world: &World,
    agent: usize,
    predictions: &Predictions,
    vis: &Visibility,
) -> Observation {
    let n = world.entities.len();
    let me = &world.entities[agent];
    let origin = if world.config.agent_centric {
        me.position
    } else {
        Vec2::ZERO
    };
    let mut features = Tensor::zeros(&[n, NODE_DIM]);
    for (i, e) in world.entities.iter().enumerate() {
        if !vis.get(i, i) {
            continue;
        }
        let row = features.row_slice_mut(i);
        let p = e.position - origin;
        row[0] = p.x;
        row[1] = p.y;
        for (k, q) in predictions.poses[i].iter().enumerate() {
            let q = *q - origin;
            row[2 + 2 * k] = q.x;
            row[3 + 2 * k] = q.y;
        }
        match e.kind {
            EntityKind::Robot => row[NODE_DIM - 2] = 1.0,
            EntityKind::Human => row[NODE_DIM - 1] = 1.0,
        }
    }
    let p = me.position - origin;
    let g = me.goal - origin;
    let intrinsic = [
        p.x,
        p.y,
        me.velocity.x,
        me.velocity.y,
        g.x,
        g.y,
        me.heading,
        me.radius,
        me.v_pref,
    ];
    Observation {
        graph: InteractionGraph {
            features,
            adjacency: vis.cells().to_vec(),
            agent,
        },
        intrinsic,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;
    use crate::humanpol::Behavior;
    use crate::rng::Rng;
    use crate::sim::Status;
    use rand::{Rng as _, SeedableRng};

    fn entity(id: usize, kind: EntityKind, p: Vec2, prev: Vec2) -> EntityState {
        EntityState {
            id,
            kind,
            position: p,
            prev_position: prev,
            velocity: (p - prev) / 0.25,
            goal: Vec2::new(5.0, 5.0),
            heading: 0.0,
            radius: 0.3,
            v_pref: 1.0,
            status: Status::Active,
            behavior: if kind == EntityKind::Robot {
                Behavior::Learned
            } else {
                Behavior::Orca
            },
        }
    }

    fn world(entities: Vec<EntityState>, cfg: ScenarioConfig) -> World {
        World {
            entities,
            t: 0,
            config: cfg,
            rng: Rng::seed_from_u64(0),
        }
    }

    #[test]
    fn closed_form_prediction() {
        let e = entity(0, EntityKind::Human, Vec2::new(1.0, 0.0), Vec2::new(0.75, 0.0));
        let p = predict_trajectory(&e, 0.25, 5);
        let want = [1.25, 1.5, 1.75, 2.0, 2.25];
        for (got, x) in p.iter().zip(want) {
            assert!((got.x - x).abs() < 1e-12 && got.y == 0.0);
        }
    }

    #[test]
    fn stationary_prediction_stays_put() {
        let e = entity(0, EntityKind::Human, Vec2::new(2.0, -1.0), Vec2::new(2.0, -1.0));
        assert!(predict_trajectory(&e, 0.25, 5)
            .iter()
            .all(|&q| q == Vec2::new(2.0, -1.0)));
    }

    #[test]
    fn random_walk_matches_loop_oracle() {
        let mut rng = Rng::seed_from_u64(5);
        let mut cur = Vec2::ZERO;
        for _ in 0..100 {
            let step = Vec2::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
            let prev = cur;
            cur = cur + step;
            let e = entity(0, EntityKind::Human, cur, prev);
            let got = predict_trajectory(&e, 0.25, 5);
            // Oracle: repeatedly add the last displacement.
            let mut q = cur;
            for g in got {
                q = q + (cur - prev);
                assert!((g - q).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn lone_robot_graph_is_self_loop() {
        let w = world(
            vec![entity(0, EntityKind::Robot, Vec2::ZERO, Vec2::ZERO)],
            ScenarioConfig::default(),
        );
        let obs = build_observation(&w, 0, &Predictions::from_world(&w));
        assert_eq!(obs.graph.num_nodes(), 1);
        assert_eq!(obs.graph.adjacency, vec![true]);
        assert_eq!(obs.graph.features.row_slice(0)[NODE_DIM - 2], 1.0);
    }

    #[test]
    fn out_of_range_entity_is_zeroed_and_disconnected() {
        let w = world(
            vec![
                entity(0, EntityKind::Robot, Vec2::ZERO, Vec2::ZERO),
                entity(1, EntityKind::Human, Vec2::new(9.0, 0.0), Vec2::new(9.0, 0.0)),
                entity(2, EntityKind::Human, Vec2::new(1.0, 0.0), Vec2::new(1.0, 0.0)),
            ],
            ScenarioConfig::default(),
        );
        let obs = build_observation(&w, 0, &Predictions::from_world(&w));
        let g = &obs.graph;
        assert!(g.features.row_slice(1).iter().all(|&v| v == 0.0));
        for k in 0..3 {
            assert!(!g.adjacency[3 + k] && !g.adjacency[k * 3 + 1]);
        }
        assert!(g.node_visible(2));
        assert_eq!(g.features.row_slice(2)[NODE_DIM - 1], 1.0);
    }

    #[test]
    fn agent_centric_features_are_relative() {
        let cfg = ScenarioConfig {
            agent_centric: true,
            ..ScenarioConfig::default()
        };
        let w = world(
            vec![
                entity(0, EntityKind::Robot, Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0)),
                entity(1, EntityKind::Human, Vec2::new(2.0, 1.0), Vec2::new(2.0, 1.0)),
            ],
            cfg,
        );
        let obs = build_observation(&w, 0, &Predictions::from_world(&w));
        assert_eq!(&obs.intrinsic[..2], &[0.0, 0.0]);
        assert_eq!(&obs.intrinsic[4..6], &[4.0, 4.0]);
        assert_eq!(&obs.graph.features.row_slice(1)[..2], &[1.0, 0.0]);
    }
}
