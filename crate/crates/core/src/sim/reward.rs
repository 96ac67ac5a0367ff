use super::{sees, EntityId, Status, World};
use crate::percept::Predictions;

/// Most negative `r_c / 2^k` over visible entities `i ≠ j` whose `k`-th
/// predicted pose overlaps robot `j`'s current disc; zero without overlaps.
pub fn prediction_penalty(
    world: &World,
    j: EntityId,
    predictions: &Predictions,
    collision_penalty: f64,
) -> f64 {
    let me = &world.entities[j];
    let mut worst = 0.0_f64;
    for (i, other) in world.entities.iter().enumerate() {
        if i == j || !sees(world, j, i) {
            continue;
        }
        let reach = me.radius + other.radius;
        // The earliest overlapping horizon gives this entity's largest penalty.
        if let Some(k) = predictions.poses[i]
            .iter()
            .position(|q| me.position.distance(*q) < reach)
        {
            worst = worst.min(collision_penalty / 2f64.powi(k as i32 + 1));
        }
    }
    worst
}

/// Reward of robot `j` for the transition `before → after`: the collision
/// penalty when it collided during this step, otherwise progress toward the
/// goal plus the prediction penalty. Reaching the goal earns nothing extra.
pub fn compute_reward(before: &World, after: &World, j: EntityId, predictions: &Predictions) -> f64 {
    let r_c = after.config.collision_penalty;
    let now = &after.entities[j];
    if now.status == Status::Collided && before.entities[j].status != Status::Collided {
        return r_c;
    }
    let r_pot = before.entities[j].goal_distance() - now.goal_distance();
    r_pot + prediction_penalty(after, j, predictions, r_c)
}
