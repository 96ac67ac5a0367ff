use std::f64::consts::TAU;

use super::scenario::circle_crossing_pair;
use super::{compute_reward, EntityId, EntityState, SimError, Status, World};
use crate::geom::{angle_between, Vec2};
use crate::humanpol::{human_velocity, HumanParams};
use crate::percept::Predictions;

/// Whether entity `i` perceives entity `k` (range and FoV cone on `i`'s
/// heading). Every entity sees itself.
pub fn sees(world: &World, i: EntityId, k: EntityId) -> bool {
    if i == k {
        return true;
    }
    let a = &world.entities[i];
    let b = &world.entities[k];
    let (fov, range) = world.perception(a.kind);
    let d = b.position - a.position;
    if d.norm() > range {
        return false;
    }
    fov >= TAU - 1e-12 || d.norm_sq() == 0.0 || angle_between(d.angle(), a.heading) <= fov / 2.0
}

/// Row-major boolean `N × N` matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Visibility {
    n: usize,
    cells: Vec<bool>,
}

impl Visibility {
    pub fn from_cells(n: usize, cells: Vec<bool>) -> Self {
        assert_eq!(cells.len(), n * n);
        Self { n, cells }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, k: usize) -> bool {
        self.cells[i * self.n + k]
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    /// Entities on the diagonal, i.e. visible to the observing agent.
    pub fn visible(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(|&i| self.get(i, i))
    }
}

/// Agent `j`'s view: `M[i][k]` is set when `j` sees both `i` and `k` and `i`
/// sees `k`. The diagonal is set for every entity `j` sees.
pub fn visibility_matrix(world: &World, j: EntityId) -> Visibility {
    let n = world.entities.len();
    let seen: Vec<bool> = (0..n).map(|i| sees(world, j, i)).collect();
    let mut cells = vec![false; n * n];
    for i in (0..n).filter(|&i| seen[i]) {
        for k in (0..n).filter(|&k| seen[k]) {
            cells[i * n + k] = i == k || sees(world, i, k);
        }
    }
    Visibility { n, cells }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    /// Collided with entity `other` (lowest id among the overlapping ones).
    Collision {
        other: EntityId,
    },
    Reached,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    /// Timestep index after the transition.
    pub t: usize,
    pub robot: EntityId,
    pub kind: EventKind,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// Reward of every robot that was active before the step, by id.
    pub rewards: Vec<(EntityId, f64)>,
    pub events: Vec<Event>,
    /// Predictions for the post-step world; shared with the next observations.
    pub predictions: Predictions,
}

impl StepOutcome {
    pub fn reward_of(&self, id: EntityId) -> Option<f64> {
        self.rewards.iter().find(|(r, _)| *r == id).map(|&(_, r)| r)
    }
}

fn check_actions(world: &World, actions: &[(EntityId, Vec2)]) -> Result<Vec<Option<Vec2>>, SimError> {
    let mut cmd = vec![None; world.entities.len()];
    for &(id, a) in actions {
        let e = world
            .entities
            .get(id)
            .filter(|e| e.is_robot())
            .ok_or(SimError::UnknownRobot(id))?;
        if !e.is_active() {
            return Err(SimError::InactiveRobot(id));
        }
        if !a.is_finite() {
            return Err(SimError::NonFiniteAction(id));
        }
        cmd[id] = Some(a);
    }
    if let Some(r) = world.robots().find(|r| r.is_active() && cmd[r.id].is_none()) {
        return Err(SimError::MissingAction(r.id));
    }
    Ok(cmd)
}

fn next_velocity(world: &World, e: &EntityState, cmd: Option<Vec2>, params: &HumanParams) -> Vec2 {
    if e.is_robot() {
        return match cmd {
            Some(a) => a.clamp_norm(e.v_pref),
            // Finished robots drift to their goal as obstacles.
            None => e.preferred_velocity(world.dt()),
        };
    }
    let react = world.config.humans_react_to_robots;
    let neighbors: Vec<&EntityState> = world
        .entities
        .iter()
        .filter(|o| o.id != e.id && (react || !o.is_robot()))
        .collect();
    human_velocity(e, &neighbors, params)
}

impl World {
    /// Advances one timestep. Every active robot needs exactly one velocity
    /// command; commands are clipped to the robot's preferred speed.
    pub fn step(
        &mut self,
        actions: &[(EntityId, Vec2)],
        params: &HumanParams,
    ) -> Result<StepOutcome, SimError> {
        let cmd = check_actions(self, actions)?;
        let before = self.clone();
        let dt = self.dt();

        let velocities: Vec<Vec2> = before
            .entities
            .iter()
            .map(|e| next_velocity(&before, e, cmd[e.id], params))
            .collect();
        for (e, v) in self.entities.iter_mut().zip(&velocities) {
            e.prev_position = e.position;
            e.position += *v * dt;
            e.velocity = *v;
            if v.norm() > 1e-9 {
                e.heading = v.angle();
            }
        }

        // Humans that arrive pick a fresh crossing goal.
        for i in 0..self.entities.len() {
            let e = &self.entities[i];
            if !e.is_robot() && e.goal_distance() < e.radius {
                let (_, goal) = circle_crossing_pair(&mut self.rng, &self.config);
                self.entities[i].goal = goal;
            }
        }

        self.t += 1;
        let mut events = Vec::new();
        for j in 0..self.entities.len() {
            let e = &self.entities[j];
            if !e.is_robot() || !e.is_active() {
                continue;
            }
            let hit = self
                .entities
                .iter()
                .find(|o| o.id != j && e.position.distance(o.position) < e.radius + o.radius)
                .map(|o| o.id);
            let kind = match hit {
                Some(other) => EventKind::Collision { other },
                None if e.goal_distance() < e.radius => EventKind::Reached,
                None => continue,
            };
            events.push(Event {
                t: self.t,
                robot: j,
                kind,
            });
        }
        for ev in &events {
            self.entities[ev.robot].status = match ev.kind {
                EventKind::Collision { .. } => Status::Collided,
                EventKind::Reached => Status::Reached,
            };
        }

        let predictions = Predictions::from_world(self);
        let rewards = before
            .robots()
            .filter(|r| r.is_active())
            .map(|r| (r.id, compute_reward(&before, self, r.id, &predictions)))
            .collect();
        Ok(StepOutcome {
            rewards,
            events,
            predictions,
        })
    }
}

/// Functional form of [`World::step`].
pub fn step_world(
    world: &World,
    actions: &[(EntityId, Vec2)],
    params: &HumanParams,
) -> Result<(World, StepOutcome), SimError> {
    let mut next = world.clone();
    let out = next.step(actions, params)?;
    Ok((next, out))
}
