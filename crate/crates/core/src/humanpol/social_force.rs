use crate::geom::Vec2;
use crate::sim::EntityState;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SocialForceParams {
    /// Repulsion strength `A`.
    pub a: f64,
    /// Repulsion range `B`, metres.
    pub b: f64,
    /// Relaxation time of the goal attraction, seconds.
    pub relax_time: f64,
    pub dt: f64,
}

impl Default for SocialForceParams {
    fn default() -> Self {
        Self {
            a: 2.0,
            b: 0.5,
            relax_time: 0.5,
            dt: 0.25,
        }
    }
}

/// Repulsion exerted on `me` by `other`: `A·exp((r_sum − d)/B)` along the
/// unit vector from `other` to `me`.
pub fn repulsion(me: &EntityState, other: &EntityState, params: &SocialForceParams) -> Vec2 {
    let diff = me.position - other.position;
    let d = diff.norm();
    let dir = if d > 0.0 {
        diff / d
    } else {
        // Coincident: push along a fixed axis ordered by id so the pair separates.
        Vec2::new(if me.id < other.id { -1.0 } else { 1.0 }, 0.0)
    };
    dir * (params.a * ((me.radius + other.radius - d) / params.b).exp())
}

/// Net force: goal relaxation plus the sum of neighbor repulsions.
pub fn social_force(me: &EntityState, neighbors: &[&EntityState], params: &SocialForceParams) -> Vec2 {
    let desired = me.preferred_velocity(params.dt);
    let mut force = (desired - me.velocity) / params.relax_time;
    for n in neighbors.iter().filter(|n| n.id != me.id) {
        force += repulsion(me, n, params);
    }
    force
}

/// Velocity after one explicit Euler step of the force, clipped to the
/// preferred speed.
pub fn social_force_velocity(
    me: &EntityState,
    neighbors: &[&EntityState],
    params: &SocialForceParams,
) -> Vec2 {
    let f = social_force(me, neighbors, params);
    (me.velocity + f * params.dt).clamp_norm(me.v_pref)
}
