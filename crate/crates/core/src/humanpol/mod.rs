//! Scripted pedestrian policies.

mod orca;
mod social_force;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use orca::{orca_line, orca_velocity, solve as solve_orca, OrcaLine, OrcaParams};
pub use social_force::{repulsion, social_force, social_force_velocity, SocialForceParams};

use crate::config::ScenarioConfig;
use crate::geom::{angle_between, Vec2};
use crate::sim::EntityState;

/// Crowd policy selected in the scenario config (`human_policy`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HumanPolicyKind {
    Orca,
    SocialForce,
    /// Each human draws ORCA or Social Force uniformly at scenario creation.
    OrcaSf,
    /// ORCA restricted to neighbors inside a reduced field of view.
    OrcaFov,
}

impl FromStr for HumanPolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "orca" => Ok(Self::Orca),
            "sf" => Ok(Self::SocialForce),
            "orca+sf" => Ok(Self::OrcaSf),
            "orca+fov" => Ok(Self::OrcaFov),
            other => Err(format!(
                "unknown human policy {other:?} (expected orca, sf, orca+sf or orca+fov)"
            )),
        }
    }
}

impl fmt::Display for HumanPolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Orca => "orca",
            Self::SocialForce => "sf",
            Self::OrcaSf => "orca+sf",
            Self::OrcaFov => "orca+fov",
        })
    }
}

/// Controller attached to one entity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Behavior {
    /// Robot driven by external velocity commands.
    Learned,
    Orca,
    OrcaFov,
    SocialForce,
}

/// Constants shared by all scripted humans of a world.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HumanParams {
    pub orca: OrcaParams,
    pub social_force: SocialForceParams,
    /// Full cone angle (radians) used by the `orca+fov` neighbor filter.
    pub reduced_fov: f64,
}

impl HumanParams {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            orca: OrcaParams {
                time_horizon: cfg.orca_time_horizon,
                neighbor_dist: cfg.orca_neighbor_dist,
                safety_space: cfg.orca_safety_space,
                dt: cfg.dt,
            },
            social_force: SocialForceParams {
                a: cfg.sf_a,
                b: cfg.sf_b,
                relax_time: cfg.sf_relax_time,
                dt: cfg.dt,
            },
            reduced_fov: cfg.human_reduced_fov_deg.to_radians(),
        }
    }
}

fn in_cone(me: &EntityState, other: &EntityState, fov: f64) -> bool {
    let d = other.position - me.position;
    d.norm_sq() == 0.0 || angle_between(d.angle(), me.heading) <= fov / 2.0
}

/// Next velocity of a scripted entity given the entities it reacts to.
pub fn human_velocity(me: &EntityState, neighbors: &[&EntityState], params: &HumanParams) -> Vec2 {
    match me.behavior {
        Behavior::Orca => orca_velocity(me, neighbors, &params.orca),
        Behavior::OrcaFov => {
            let visible: Vec<&EntityState> = neighbors
                .iter()
                .copied()
                .filter(|n| in_cone(me, n, params.reduced_fov))
                .collect();
            orca_velocity(me, &visible, &params.orca)
        }
        Behavior::SocialForce => social_force_velocity(me, neighbors, &params.social_force),
        Behavior::Learned => me.preferred_velocity(params.orca.dt),
    }
}
