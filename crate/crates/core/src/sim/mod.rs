//! Discrete-time 2D crowd world shared by all robots.
//!
//! Robots occupy entity ids `0..R`, humans `R..R+H`. Robots move with
//! holonomic velocity commands; humans follow a scripted policy from
//! [`crate::humanpol`] and, by default, ignore robots entirely.

mod log;
mod metrics;
mod reward;
mod scenario;
mod world;

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::geom::Vec2;
use crate::humanpol::Behavior;
use crate::rng::Rng;

pub use log::{read_episode_csv, write_episode_csv, CsvRow, EpisodeLog, StepRecord};
pub use metrics::{compute_metrics, MetricsReport};
pub use reward::{compute_reward, prediction_penalty};
pub use scenario::generate_scenario;
pub use world::{sees, step_world, visibility_matrix, Event, EventKind, StepOutcome, Visibility};

pub type EntityId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntityKind {
    Robot,
    Human,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Robot => "robot",
            EntityKind::Human => "human",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Active,
    Reached,
    Collided,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Active => "active",
            Status::Reached => "reached",
            Status::Collided => "collided",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "active" => Some(Status::Active),
            "reached" => Some(Status::Reached),
            "collided" => Some(Status::Collided),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityState {
    pub id: EntityId,
    pub kind: EntityKind,
    pub position: Vec2,
    pub prev_position: Vec2,
    pub velocity: Vec2,
    pub goal: Vec2,
    /// Heading in radians; follows the velocity direction while moving.
    pub heading: f64,
    pub radius: f64,
    pub v_pref: f64,
    pub status: Status,
    pub behavior: Behavior,
}

impl EntityState {
    pub fn is_robot(&self) -> bool {
        self.kind == EntityKind::Robot
    }

    pub fn is_active(&self) -> bool {
        self.status == Status::Active
    }

    pub fn goal_distance(&self) -> f64 {
        self.position.distance(self.goal)
    }

    /// Velocity toward the goal at preferred speed, slowing down on the
    /// last step so the goal is not overshot.
    pub fn preferred_velocity(&self, dt: f64) -> Vec2 {
        let to_goal = self.goal - self.position;
        let d = to_goal.norm();
        if d <= self.v_pref * dt {
            to_goal / dt
        } else {
            to_goal * (self.v_pref / d)
        }
    }
}

/// Complete state of one environment instance.
#[derive(Clone, Debug)]
pub struct World {
    pub entities: Vec<EntityState>,
    pub t: usize,
    pub config: ScenarioConfig,
    pub rng: Rng,
}

impl World {
    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    pub fn num_robots(&self) -> usize {
        self.entities.iter().filter(|e| e.is_robot()).count()
    }

    pub fn robots(&self) -> impl Iterator<Item = &EntityState> {
        self.entities.iter().filter(|e| e.is_robot())
    }

    pub fn humans(&self) -> impl Iterator<Item = &EntityState> {
        self.entities.iter().filter(|e| !e.is_robot())
    }

    pub fn all_robots_done(&self) -> bool {
        self.robots().all(|r| !r.is_active())
    }

    /// True once every robot finished or the step cap is reached.
    pub fn is_terminal(&self) -> bool {
        self.all_robots_done() || self.t >= self.config.max_episode_steps
    }

    /// FoV cone (full angle, radians) and sensor range of `kind`.
    pub fn perception(&self, kind: EntityKind) -> (f64, f64) {
        match kind {
            EntityKind::Robot => (self.config.fov_deg.to_radians(), self.config.sensor_range),
            EntityKind::Human => (
                self.config.human_fov_deg.to_radians(),
                self.config.human_sensor_range,
            ),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("scenario placement failed: {0}")]
    Scenario(String),
    #[error("action for unknown entity {0}")]
    UnknownRobot(EntityId),
    #[error("action for inactive robot {0}")]
    InactiveRobot(EntityId),
    #[error("no action given for active robot {0}")]
    MissingAction(EntityId),
    #[error("non-finite action for robot {0}")]
    NonFiniteAction(EntityId),
    #[error("episode csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("empty episode log set")]
    NoEpisodes,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
