//! Crowd-model fixtures.

use multisoc::config::ScenarioConfig;
use multisoc::geom::Vec2;
use multisoc::humanpol::{human_velocity, orca_velocity, Behavior, HumanParams, HumanPolicyKind};
use multisoc::rng::indexed_stream;
use multisoc::sim::{EntityKind, EntityState, Status};
use rand::Rng as _;

pub fn human(id: usize, p: Vec2, goal: Vec2, v: Vec2, behavior: Behavior) -> EntityState {
    EntityState {
        id,
        kind: EntityKind::Human,
        position: p,
        prev_position: p,
        velocity: v,
        goal,
        heading: v.angle(),
        radius: 0.3,
        v_pref: 1.0,
        status: Status::Active,
        behavior,
    }
}

pub fn params(kind: HumanPolicyKind) -> HumanParams {
    HumanParams::from_config(&ScenarioConfig {
        human_policy: kind,
        ..ScenarioConfig::default()
    })
}

/// Two ORCA agents swapping places along a line, with small random offsets.
/// Returns the smallest center distance seen and the larger final goal
/// distance.
pub fn head_on_swap(seed: u64) -> (f64, f64) {
    let mut r = indexed_stream(99, "swap", seed);
    let p = params(HumanPolicyKind::Orca);
    let jitter =
        |r: &mut multisoc::rng::Rng| Vec2::new(r.random_range(-0.05..0.05), r.random_range(-0.05..0.05));
    let a0 = Vec2::new(-4.0, 0.0) + jitter(&mut r);
    let b0 = Vec2::new(4.0, 0.0) + jitter(&mut r);
    let mut a = human(0, a0, b0, Vec2::default(), Behavior::Orca);
    let mut b = human(1, b0, a0, Vec2::default(), Behavior::Orca);
    let dt = 0.25;
    let mut min_d = f64::INFINITY;
    for _ in 0..200 {
        let va = human_velocity(&a, &[&b], &p);
        let vb = human_velocity(&b, &[&a], &p);
        for (e, v) in [(&mut a, va), (&mut b, vb)] {
            e.prev_position = e.position;
            e.position = e.position + v * dt;
            e.velocity = v;
        }
        min_d = min_d.min(a.position.distance(b.position));
    }
    (min_d, a.goal_distance().max(b.goal_distance()))
}

/// Largest `|v_orca − v_pref|` for a lone ORCA agent over `trials` random
/// positions, goals and current velocities.
pub fn single_agent_max_err(trials: u64) -> f64 {
    let p = params(HumanPolicyKind::Orca);
    let mut worst = 0.0_f64;
    for t in 0..trials {
        let mut r = indexed_stream(99, "single", t);
        let mut pt = |s: f64| Vec2::new(r.random_range(-s..s), r.random_range(-s..s));
        let me = human(0, pt(10.0), pt(10.0), pt(1.0), Behavior::Orca);
        let v = orca_velocity(&me, &[], &p.orca);
        worst = worst.max((v - me.preferred_velocity(p.orca.dt)).norm());
    }
    worst
}
