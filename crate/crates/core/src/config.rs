//! `key = value` configuration files.
//!
//! One file carries scenario, architecture and training keys. Architecture
//! and training keys follow the hyperparameter table names with spaces
//! replaced by underscores. Lines starting with `#` are comments.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::humanpol::HumanPolicyKind;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("invalid value {value:?} for key `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
}

pub trait ConfigValue: Sized {
    fn parse_value(key: &str, raw: &str) -> Result<Self, ConfigError>;
    fn format_value(&self) -> String;
}

fn invalid(key: &str, raw: &str, reason: impl Display) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        value: raw.to_string(),
        reason: reason.to_string(),
    }
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(key: &str, raw: &str) -> Result<Self, ConfigError> {
                raw.replace('_', "").parse::<$t>().map_err(|e| invalid(key, raw, e))
            }
            fn format_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

from_str_value!(f64, usize, u64);

impl ConfigValue for bool {
    fn parse_value(key: &str, raw: &str) -> Result<Self, ConfigError> {
        match raw.to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            _ => Err(invalid(key, raw, "expected true or false")),
        }
    }
    fn format_value(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for HumanPolicyKind {
    fn parse_value(key: &str, raw: &str) -> Result<Self, ConfigError> {
        HumanPolicyKind::from_str(raw).map_err(|e| invalid(key, raw, e))
    }
    fn format_value(&self) -> String {
        self.to_string()
    }
}

macro_rules! config_section {
    (
        $(#[$meta:meta])*
        pub struct $name:ident {
            $( $(#[$fmeta:meta])* $field:ident : $ty:ty = $default:expr, )*
        }
    ) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            $( $(#[$fmeta])* pub $field: $ty, )*
        }

        impl Default for $name {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        impl $name {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            /// Sets `key` if this section owns it; `Ok(false)` otherwise.
            pub fn set(&mut self, key: &str, raw: &str) -> Result<bool, ConfigError> {
                match key {
                    $( stringify!($field) => {
                        self.$field = <$ty as ConfigValue>::parse_value(key, raw)?;
                        Ok(true)
                    } )*
                    _ => Ok(false),
                }
            }

            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( (stringify!($field), self.$field.format_value()), )*]
            }
        }
    };
}

config_section! {
    /// World, crowd and reward settings.
    pub struct ScenarioConfig {
        humans: usize = 4,
        robots: usize = 2,
        circle_radius: f64 = 6.0,
        /// Half-width of the uniform noise on human start and goal positions.
        position_noise: f64 = 0.5,
        /// Robot field of view, degrees.
        fov_deg: f64 = 360.0,
        /// Robot sensor range, metres.
        sensor_range: f64 = 5.0,
        human_fov_deg: f64 = 360.0,
        human_sensor_range: f64 = 5.0,
        /// Field of view used to filter ORCA neighbors under `orca+fov`.
        human_reduced_fov_deg: f64 = 120.0,
        dt: f64 = 0.25,
        seed: u64 = 0,
        human_policy: HumanPolicyKind = HumanPolicyKind::Orca,
        robot_radius: f64 = 0.3,
        human_radius: f64 = 0.3,
        robot_v_pref: f64 = 1.0,
        human_v_pref: f64 = 1.0,
        /// Extra gap beyond the summed radii that counts as "too close".
        discomfort_dist: f64 = 0.25,
        max_episode_steps: usize = 150,
        robot_min_goal_dist: f64 = 3.0,
        placement_margin: f64 = 0.1,
        humans_react_to_robots: bool = false,
        collision_penalty: f64 = -20.0,
        orca_time_horizon: f64 = 5.0,
        orca_neighbor_dist: f64 = 10.0,
        orca_safety_space: f64 = 0.01,
        sf_a: f64 = 2.0,
        sf_b: f64 = 0.5,
        sf_relax_time: f64 = 0.5,
        /// Express node features and the intrinsic vector relative to the
        /// observing robot.
        agent_centric: bool = false,
    }
}

config_section! {
    /// Network sizes. Keys not used by the architecture are kept for
    /// round-tripping and reported when set.
    pub struct ArchConfig {
        human_node_rnn_size: usize = 128,
        human_node_output_size: usize = 256,
        edge_selector_embedding_size: usize = 32,
        agent_embedding_size: usize = 64,
        human_node_embedding_size: usize = 64,
        human_human_edge_embedding_size: usize = 32,
        attention_size: usize = 64,
        human_node_input_size: usize = 3,
        human_human_edge_input_size: usize = 2,
        human_human_edge_rnn_size: usize = 256,
        edge_selector_emb_size: usize = 512,
        edge_selector_num_head: usize = 4,
        mha_emb_size: usize = 256,
        mha_num_head: usize = 8,
        /// Factor applied to node features and the intrinsic vector before
        /// the first layers.
        input_scale: f64 = 1.0,
        log_std_init: f64 = 0.0,
        log_std_min: f64 = -5.0,
        log_std_max: f64 = 1.0,
    }
}

impl ArchConfig {
    pub const UNUSED_KEYS: &'static [&'static str] = &[
        "human_node_output_size",
        "edge_selector_embedding_size",
        "human_node_embedding_size",
        "human_human_edge_embedding_size",
        "attention_size",
        "human_node_input_size",
        "human_human_edge_input_size",
        "human_human_edge_rnn_size",
    ];
}

config_section! {
    /// MAPPO settings and the Gumbel temperature schedule.
    pub struct TrainConfig {
        nrolloutthread: usize = 16,
        numminibatch: usize = 2,
        episode_length: usize = 50,
        data_chunk_length: usize = 50,
        num_env_steps: u64 = 20_000_000,
        ppo_epoch: usize = 5,
        /// Initialization gain of the action-mean layer.
        gain: f64 = 0.01,
        lr: f64 = 4e-5,
        critic_lr: f64 = 4e-5,
        temperature_at_beginning: f64 = 5.0,
        base_temperature: f64 = 0.05,
        min_temperature: f64 = 0.03,
        gamma: f64 = 0.99,
        gae_lambda: f64 = 0.95,
        clip_param: f64 = 0.2,
        entropy_coef: f64 = 0.01,
        value_loss_coef: f64 = 1.0,
        max_grad_norm: f64 = 10.0,
        adam_eps: f64 = 1e-5,
        checkpoint_interval: u64 = 100_000,
        success_window: usize = 100,
    }
}

/// Complete resolved configuration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub scenario: ScenarioConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    text: raw_line.to_string(),
                });
            };
            cfg.set(key.trim(), value.trim(), line_no)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        if self.scenario.set(key, value)? || self.train.set(key, value)? {
            return Ok(());
        }
        if self.arch.set(key, value)? {
            if ArchConfig::UNUSED_KEYS.contains(&key) {
                log::warn!("config key `{key}` is accepted but not used by the architecture");
            }
            return Ok(());
        }
        Err(ConfigError::UnknownKey {
            line,
            key: key.to_string(),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.scenario;
        let a = &self.arch;
        let t = &self.train;
        let check = |ok: bool, key: &str, value: String, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(invalid(key, &value, reason))
            }
        };
        check(
            s.robots >= 1,
            "robots",
            s.robots.to_string(),
            "need at least one robot",
        )?;
        check(s.dt > 0.0, "dt", s.dt.to_string(), "must be positive")?;
        check(
            s.circle_radius > 0.0,
            "circle_radius",
            s.circle_radius.to_string(),
            "must be positive",
        )?;
        check(
            s.robot_radius > 0.0,
            "robot_radius",
            s.robot_radius.to_string(),
            "must be positive",
        )?;
        check(
            s.human_radius > 0.0,
            "human_radius",
            s.human_radius.to_string(),
            "must be positive",
        )?;
        check(
            s.robot_v_pref > 0.0,
            "robot_v_pref",
            s.robot_v_pref.to_string(),
            "must be positive",
        )?;
        check(
            s.human_v_pref > 0.0,
            "human_v_pref",
            s.human_v_pref.to_string(),
            "must be positive",
        )?;
        check(
            s.max_episode_steps >= 1,
            "max_episode_steps",
            s.max_episode_steps.to_string(),
            "must be at least 1",
        )?;
        check(
            s.collision_penalty < 0.0,
            "collision_penalty",
            s.collision_penalty.to_string(),
            "must be negative",
        )?;
        for (key, v) in [
            ("fov_deg", s.fov_deg),
            ("human_fov_deg", s.human_fov_deg),
            ("human_reduced_fov_deg", s.human_reduced_fov_deg),
        ] {
            check(v > 0.0 && v <= 360.0, key, v.to_string(), "must be in (0, 360]")?;
        }
        check(
            a.edge_selector_num_head >= 1,
            "edge_selector_num_head",
            a.edge_selector_num_head.to_string(),
            "must be at least 1",
        )?;
        check(
            a.mha_num_head >= 1,
            "mha_num_head",
            a.mha_num_head.to_string(),
            "must be at least 1",
        )?;
        check(
            a.edge_selector_emb_size % a.edge_selector_num_head == 0 && a.edge_selector_emb_size > 0,
            "edge_selector_emb_size",
            a.edge_selector_emb_size.to_string(),
            "must be a positive multiple of edge_selector_num_head",
        )?;
        check(
            a.mha_emb_size % a.mha_num_head == 0 && a.mha_emb_size > 0,
            "mha_emb_size",
            a.mha_emb_size.to_string(),
            "must be a positive multiple of mha_num_head",
        )?;
        check(
            a.human_node_rnn_size > 0,
            "human_node_rnn_size",
            a.human_node_rnn_size.to_string(),
            "must be positive",
        )?;
        check(
            a.agent_embedding_size > 0,
            "agent_embedding_size",
            a.agent_embedding_size.to_string(),
            "must be positive",
        )?;
        check(
            a.input_scale > 0.0 && a.input_scale.is_finite(),
            "input_scale",
            a.input_scale.to_string(),
            "must be positive",
        )?;
        check(
            a.log_std_min < a.log_std_max,
            "log_std_min",
            a.log_std_min.to_string(),
            "must be below log_std_max",
        )?;
        check(
            t.nrolloutthread >= 1,
            "nrolloutthread",
            t.nrolloutthread.to_string(),
            "must be at least 1",
        )?;
        check(
            t.numminibatch >= 1,
            "numminibatch",
            t.numminibatch.to_string(),
            "must be at least 1",
        )?;
        check(
            t.episode_length >= 1,
            "episode_length",
            t.episode_length.to_string(),
            "must be at least 1",
        )?;
        check(
            t.data_chunk_length >= 1 && t.episode_length % t.data_chunk_length == 0,
            "data_chunk_length",
            t.data_chunk_length.to_string(),
            "must divide episode_length",
        )?;
        check(t.lr > 0.0, "lr", t.lr.to_string(), "must be positive")?;
        check(
            t.critic_lr > 0.0,
            "critic_lr",
            t.critic_lr.to_string(),
            "must be positive",
        )?;
        check(
            t.temperature_at_beginning > 0.0 && t.base_temperature > 0.0 && t.min_temperature > 0.0,
            "temperature_at_beginning",
            t.temperature_at_beginning.to_string(),
            "temperatures must be positive",
        )?;
        check(
            t.success_window >= 1,
            "success_window",
            t.success_window.to_string(),
            "must be at least 1",
        )?;
        Ok(())
    }

    /// Canonical `key = value` text of every key, used for frozen copies.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        for (title, entries) in [
            ("scenario", self.scenario.entries()),
            ("architecture", self.arch.entries()),
            ("training", self.train.entries()),
        ] {
            out.push_str(&format!("# {title}\n"));
            for (k, v) in entries {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }
}
