use std::f64::consts::TAU;

use rand::Rng as _;

use super::{EntityKind, EntityState, SimError, Status, World};
use crate::config::ScenarioConfig;
use crate::geom::Vec2;
use crate::humanpol::{Behavior, HumanPolicyKind};
use crate::rng::Rng;

const MAX_TRIES: usize = 2_000;

fn noise(rng: &mut Rng, amp: f64) -> Vec2 {
    if amp <= 0.0 {
        return Vec2::ZERO;
    }
    Vec2::new(rng.random_range(-amp..=amp), rng.random_range(-amp..=amp))
}

fn uniform_in_disk(rng: &mut Rng, radius: f64) -> Vec2 {
    let r = radius * rng.random::<f64>().sqrt();
    Vec2::from_angle(rng.random_range(0.0..TAU)) * r
}

fn clear_of(p: Vec2, radius: f64, others: &[(Vec2, f64)], margin: f64) -> bool {
    others.iter().all(|&(q, r)| p.distance(q) >= radius + r + margin)
}

/// Human start on the noisy circle and its goal near the antipode.
pub(crate) fn circle_crossing_pair(rng: &mut Rng, cfg: &ScenarioConfig) -> (Vec2, Vec2) {
    let base = Vec2::from_angle(rng.random_range(0.0..TAU)) * cfg.circle_radius;
    let start = base + noise(rng, cfg.position_noise);
    let goal = -base + noise(rng, cfg.position_noise);
    (start, goal)
}

/// Builds the initial world: humans on a circle with noisy near-antipodal
/// goals, robots and their goals uniformly inside the circle.
pub fn generate_scenario(cfg: &ScenarioConfig, mut rng: Rng) -> Result<World, SimError> {
    let mut entities = Vec::with_capacity(cfg.robots + cfg.humans);
    let mut starts: Vec<(Vec2, f64)> = Vec::new();
    let mut goals: Vec<(Vec2, f64)> = Vec::new();

    for id in 0..cfg.robots {
        let mut placed = None;
        for _ in 0..MAX_TRIES {
            let p = uniform_in_disk(&mut rng, cfg.circle_radius);
            let g = uniform_in_disk(&mut rng, cfg.circle_radius);
            if p.distance(g) >= cfg.robot_min_goal_dist
                && clear_of(p, cfg.robot_radius, &starts, cfg.placement_margin)
                && clear_of(g, cfg.robot_radius, &goals, cfg.placement_margin)
            {
                placed = Some((p, g));
                break;
            }
        }
        let (p, g) = placed.ok_or_else(|| SimError::Scenario(format!("could not place robot {id}")))?;
        starts.push((p, cfg.robot_radius));
        goals.push((g, cfg.robot_radius));
        entities.push(EntityState {
            id,
            kind: EntityKind::Robot,
            position: p,
            prev_position: p,
            velocity: Vec2::ZERO,
            goal: g,
            heading: (g - p).angle(),
            radius: cfg.robot_radius,
            v_pref: cfg.robot_v_pref,
            status: Status::Active,
            behavior: Behavior::Learned,
        });
    }

    for k in 0..cfg.humans {
        let id = cfg.robots + k;
        let mut placed = None;
        for _ in 0..MAX_TRIES {
            let (p, g) = circle_crossing_pair(&mut rng, cfg);
            if clear_of(p, cfg.human_radius, &starts, cfg.placement_margin) {
                placed = Some((p, g));
                break;
            }
        }
        let (p, g) = placed.ok_or_else(|| SimError::Scenario(format!("could not place human {id}")))?;
        starts.push((p, cfg.human_radius));
        let behavior = match cfg.human_policy {
            HumanPolicyKind::Orca => Behavior::Orca,
            HumanPolicyKind::SocialForce => Behavior::SocialForce,
            HumanPolicyKind::OrcaFov => Behavior::OrcaFov,
            HumanPolicyKind::OrcaSf => {
                if rng.random_bool(0.5) {
                    Behavior::Orca
                } else {
                    Behavior::SocialForce
                }
            }
        };
        entities.push(EntityState {
            id,
            kind: EntityKind::Human,
            position: p,
            prev_position: p,
            velocity: Vec2::ZERO,
            goal: g,
            heading: (g - p).angle(),
            radius: cfg.human_radius,
            v_pref: cfg.human_v_pref,
            status: Status::Active,
            behavior,
        });
    }

    Ok(World {
        entities,
        t: 0,
        config: cfg.clone(),
        rng,
    })
}
