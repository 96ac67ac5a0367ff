//! Optimal reciprocal collision avoidance between agents (no static
//! obstacles), following the RVO2 reference formulation: one half-plane per
//! neighbor in velocity space, solved as a 2D linear program with the 3D
//! fallback that minimizes the largest violation when infeasible.

use crate::geom::Vec2;
use crate::sim::EntityState;

const EPSILON: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrcaParams {
    pub time_horizon: f64,
    pub neighbor_dist: f64,
    /// Added to each agent's radius when building constraints.
    pub safety_space: f64,
    /// Simulation step, used when agents already overlap.
    pub dt: f64,
}

impl Default for OrcaParams {
    fn default() -> Self {
        Self {
            time_horizon: 5.0,
            neighbor_dist: 10.0,
            safety_space: 0.01,
            dt: 0.25,
        }
    }
}

/// Valid velocities lie to the left of `direction` through `point`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrcaLine {
    pub point: Vec2,
    pub direction: Vec2,
}

/// Half-plane that `me` must respect to share avoidance of `other` equally.
pub fn orca_line(me: &EntityState, other: &EntityState, params: &OrcaParams) -> OrcaLine {
    let rel_pos = other.position - me.position;
    let rel_vel = me.velocity - other.velocity;
    let dist_sq = rel_pos.norm_sq();
    let combined_radius = me.radius + other.radius + 2.0 * params.safety_space;
    let combined_radius_sq = combined_radius * combined_radius;
    let inv_th = 1.0 / params.time_horizon;

    let (direction, u);
    if dist_sq > combined_radius_sq {
        // Vector from cutoff center to relative velocity.
        let w = rel_vel - rel_pos * inv_th;
        let w_len_sq = w.norm_sq();
        let dot1 = w.dot(rel_pos);
        if dot1 < 0.0 && dot1 * dot1 > combined_radius_sq * w_len_sq {
            // Project on cutoff circle.
            let w_len = w_len_sq.sqrt();
            let unit_w = w / w_len;
            direction = Vec2::new(unit_w.y, -unit_w.x);
            u = unit_w * (combined_radius * inv_th - w_len);
        } else {
            // Project on legs.
            let leg = (dist_sq - combined_radius_sq).sqrt();
            direction = if rel_pos.det(w) > 0.0 {
                Vec2::new(
                    rel_pos.x * leg - rel_pos.y * combined_radius,
                    rel_pos.x * combined_radius + rel_pos.y * leg,
                ) / dist_sq
            } else {
                -Vec2::new(
                    rel_pos.x * leg + rel_pos.y * combined_radius,
                    -rel_pos.x * combined_radius + rel_pos.y * leg,
                ) / dist_sq
            };
            let dot2 = rel_vel.dot(direction);
            u = direction * dot2 - rel_vel;
        }
    } else {
        // Already overlapping: resolve within one step.
        let inv_dt = 1.0 / params.dt;
        let w = rel_vel - rel_pos * inv_dt;
        let w_len = w.norm();
        let unit_w = if w_len > EPSILON {
            w / w_len
        } else {
            // Coincident centers with equal velocities; any direction works.
            Vec2::new(1.0, 0.0)
        };
        direction = Vec2::new(unit_w.y, -unit_w.x);
        u = unit_w * (combined_radius * inv_dt - w_len);
    }
    OrcaLine {
        point: me.velocity + u * 0.5,
        direction,
    }
}

fn linear_program1(
    lines: &[OrcaLine],
    line_no: usize,
    radius: f64,
    opt_velocity: Vec2,
    direction_opt: bool,
) -> Option<Vec2> {
    let line = lines[line_no];
    let dot = line.point.dot(line.direction);
    let discriminant = dot * dot + radius * radius - line.point.norm_sq();
    if discriminant < 0.0 {
        return None;
    }
    let sqrt_disc = discriminant.sqrt();
    let mut t_left = -dot - sqrt_disc;
    let mut t_right = -dot + sqrt_disc;

    for prior in &lines[..line_no] {
        let denominator = line.direction.det(prior.direction);
        let numerator = prior.direction.det(line.point - prior.point);
        if denominator.abs() <= EPSILON {
            if numerator < 0.0 {
                return None;
            }
            continue;
        }
        let t = numerator / denominator;
        if denominator >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return None;
        }
    }

    let t = if direction_opt {
        if opt_velocity.dot(line.direction) > 0.0 {
            t_right
        } else {
            t_left
        }
    } else {
        line.direction
            .dot(opt_velocity - line.point)
            .clamp(t_left, t_right)
    };
    Some(line.point + line.direction * t)
}

/// Returns the optimum and the index of the first infeasible line
/// (`lines.len()` when feasible).
fn linear_program2(
    lines: &[OrcaLine],
    radius: f64,
    opt_velocity: Vec2,
    direction_opt: bool,
) -> (Vec2, usize) {
    let mut result = if direction_opt {
        opt_velocity * radius
    } else if opt_velocity.norm_sq() > radius * radius {
        opt_velocity.normalized() * radius
    } else {
        opt_velocity
    };
    for i in 0..lines.len() {
        if lines[i].direction.det(lines[i].point - result) > 0.0 {
            let previous = result;
            match linear_program1(lines, i, radius, opt_velocity, direction_opt) {
                Some(v) => result = v,
                None => {
                    return (previous, i);
                }
            }
        }
    }
    (result, lines.len())
}

fn linear_program3(lines: &[OrcaLine], begin_line: usize, radius: f64, mut result: Vec2) -> Vec2 {
    let mut distance = 0.0;
    for i in begin_line..lines.len() {
        if lines[i].direction.det(lines[i].point - result) <= distance {
            continue;
        }
        let mut proj_lines = Vec::with_capacity(i);
        for j in 0..i {
            let determinant = lines[i].direction.det(lines[j].direction);
            let point = if determinant.abs() <= EPSILON {
                if lines[i].direction.dot(lines[j].direction) > 0.0 {
                    continue;
                }
                (lines[i].point + lines[j].point) * 0.5
            } else {
                lines[i].point
                    + lines[i].direction
                        * (lines[j].direction.det(lines[i].point - lines[j].point) / determinant)
            };
            proj_lines.push(OrcaLine {
                point,
                direction: (lines[j].direction - lines[i].direction).normalized(),
            });
        }
        let temp = result;
        let opt = Vec2::new(-lines[i].direction.y, lines[i].direction.x);
        let (candidate, failed) = linear_program2(&proj_lines, radius, opt, true);
        // Floating point can make the sub-program look infeasible; keep the
        // previous result then.
        result = if failed < proj_lines.len() {
            temp
        } else {
            candidate
        };
        distance = lines[i].direction.det(lines[i].point - result);
    }
    result
}

/// Feasible velocity closest to `preferred` within `max_speed`.
pub fn solve(lines: &[OrcaLine], preferred: Vec2, max_speed: f64) -> Vec2 {
    let (result, failed) = linear_program2(lines, max_speed, preferred, false);
    if failed < lines.len() {
        linear_program3(lines, failed, max_speed, result)
    } else {
        result
    }
}

/// ORCA velocity of `me` among `neighbors`. Neighbors beyond the configured
/// neighbor distance are ignored.
pub fn orca_velocity(me: &EntityState, neighbors: &[&EntityState], params: &OrcaParams) -> Vec2 {
    let preferred = me.preferred_velocity(params.dt);
    let mut near: Vec<(f64, &EntityState)> = neighbors
        .iter()
        .filter(|n| n.id != me.id)
        .map(|n| (n.position.distance(me.position), *n))
        .filter(|(d, _)| *d <= params.neighbor_dist)
        .collect();
    near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
    let lines: Vec<OrcaLine> = near.iter().map(|(_, n)| orca_line(me, n, params)).collect();
    solve(&lines, preferred, me.v_pref)
}
