//! World fixtures and the brute-force reward evaluator.

use multisoc::config::ScenarioConfig;
use multisoc::geom::Vec2;
use multisoc::humanpol::Behavior;
use multisoc::percept::{Predictions, HORIZON};
use multisoc::sim::{compute_reward, EntityKind, EntityState, Status, World};
use rand::{Rng as _, SeedableRng};

use super::rng;

pub fn entity(id: usize, kind: EntityKind, p: Vec2, goal: Vec2) -> EntityState {
    EntityState {
        id,
        kind,
        position: p,
        prev_position: p,
        velocity: Vec2::default(),
        goal,
        heading: 0.0,
        radius: 0.3,
        v_pref: 1.0,
        status: Status::Active,
        behavior: match kind {
            EntityKind::Robot => Behavior::Learned,
            EntityKind::Human => Behavior::Orca,
        },
    }
}

/// Range test plus a cone test written with a dot product instead of angles.
pub fn oracle_sees(a: &EntityState, b: &EntityState, fov_deg: f64, range: f64) -> bool {
    if a.id == b.id {
        return true;
    }
    let d = b.position - a.position;
    let dist = d.norm();
    if dist > range {
        return false;
    }
    if fov_deg >= 360.0 || dist == 0.0 {
        return true;
    }
    let h = Vec2::new(a.heading.cos(), a.heading.sin());
    d.dot(h) >= dist * (fov_deg.to_radians() / 2.0).cos()
}

/// Brute-force reward: enumerate every visible entity and horizon.
pub fn oracle_reward(before: &World, after: &World, j: usize, preds: &Predictions) -> f64 {
    let cfg = &after.config;
    let r_c = cfg.collision_penalty;
    let me = &after.entities[j];
    if me.status == Status::Collided && before.entities[j].status != Status::Collided {
        return r_c;
    }
    let mut terms = vec![0.0];
    for (i, e) in after.entities.iter().enumerate() {
        if i == j || !oracle_sees(me, e, cfg.fov_deg, cfg.sensor_range) {
            continue;
        }
        for k in 1..=HORIZON {
            if (me.position - preds.poses[i][k - 1]).norm() < me.radius + e.radius {
                terms.push(r_c / 2f64.powi(k as i32));
            }
        }
    }
    let r_pred = terms.into_iter().fold(f64::INFINITY, f64::min);
    (before.entities[j].goal_distance() - me.goal_distance()) + r_pred
}

pub fn random_pair(seed: u64) -> (World, World, Predictions) {
    let mut r = rng("reward-state", seed);
    let n = r.random_range(1..8);
    let fov = [360.0, 180.0, 120.0][r.random_range(0..3)];
    let cfg = ScenarioConfig {
        robots: 1,
        humans: n - 1,
        fov_deg: fov,
        sensor_range: r.random_range(1.0..5.0),
        ..ScenarioConfig::default()
    };
    let mut pt = |s: f64| Vec2::new(r.random_range(-s..s), r.random_range(-s..s));
    let mut before_e = Vec::new();
    let mut after_e = Vec::new();
    let mut poses = Vec::new();
    for id in 0..n {
        let kind = if id == 0 {
            EntityKind::Robot
        } else {
            EntityKind::Human
        };
        let p = pt(2.0);
        let mut b = entity(id, kind, p, pt(4.0));
        let mut a = b.clone();
        a.prev_position = p;
        a.position = p + pt(0.25);
        a.heading = pt(1.0).angle();
        b.heading = a.heading;
        let mut pose = [Vec2::default(); HORIZON];
        let v = pt(1.0);
        for (k, q) in pose.iter_mut().enumerate() {
            *q = a.position + v * ((k + 1) as f64 * 0.25);
        }
        poses.push(pose);
        before_e.push(b);
        after_e.push(a);
    }
    let coin: f64 = r.random();
    if coin < 0.1 {
        after_e[0].status = Status::Collided;
    }
    let world = |entities| World {
        entities,
        t: 0,
        config: cfg.clone(),
        rng: multisoc::rng::Rng::seed_from_u64(0),
    };
    (world(before_e), world(after_e), Predictions { poses })
}

/// Compares `compute_reward` bit-for-bit with the oracle on `states` random
/// states. Returns (mismatches, collision states, collision states not
/// scored exactly at the penalty).
pub fn reward_oracle_mismatches(states: u64) -> (usize, usize, usize) {
    let (mut bad, mut collisions, mut bad_collisions) = (0, 0, 0);
    for seed in 0..states {
        let (before, after, preds) = random_pair(seed);
        let got = compute_reward(&before, &after, 0, &preds);
        let want = oracle_reward(&before, &after, 0, &preds);
        if got.to_bits() != want.to_bits() {
            bad += 1;
        }
        if after.entities[0].status == Status::Collided {
            collisions += 1;
            if got != -20.0 {
                bad_collisions += 1;
            }
        }
    }
    (bad, collisions, bad_collisions)
}
