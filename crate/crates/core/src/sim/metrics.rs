use serde::{Deserialize, Serialize};

use super::{EpisodeLog, SimError, Status};

/// Aggregate navigation statistics over evaluation episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub success_rate: f64,
    pub collision_rate: f64,
    pub timeout_rate: f64,
    /// Percentage of active timesteps spent too close to a human.
    pub intrusion_ratio: f64,
    /// Seconds until the robot finished (or the episode ended).
    pub travel_time: f64,
    /// Metres travelled until the robot finished (or the episode ended).
    pub travel_length: f64,
    /// Mean cumulative reward per robot.
    pub reward: f64,
    pub episodes: usize,
    pub robots: usize,
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 6] = [
        "success",
        "collision",
        "intrusion_ratio",
        "travel_time",
        "travel_length",
        "reward",
    ];

    pub fn values(&self) -> [f64; 6] {
        [
            self.success_rate,
            self.collision_rate,
            self.intrusion_ratio,
            self.travel_time,
            self.travel_length,
            self.reward,
        ]
    }

    /// Fixed-width table, one header row and one value row.
    pub fn table(&self) -> String {
        let mut out = String::new();
        for c in Self::COLUMNS {
            out.push_str(&format!("{c:>16}"));
        }
        out.push('\n');
        for v in self.values() {
            out.push_str(&format!("{v:>16.4}"));
        }
        out.push('\n');
        out
    }
}

/// Aggregates episode logs. A robot counts as intruding at a step when it
/// was active before the step and its new position lies within
/// `r_robot + r_human + discomfort_dist` of some human.
pub fn compute_metrics(logs: &[EpisodeLog], discomfort_dist: f64) -> Result<MetricsReport, SimError> {
    if logs.is_empty() {
        return Err(SimError::NoEpisodes);
    }
    let (mut robots, mut success, mut collision) = (0usize, 0usize, 0usize);
    let (mut time, mut length, mut reward) = (0.0, 0.0, 0.0);
    let mut intrusion_sum = 0.0;

    for log in logs {
        let (mut active_steps, mut intruding) = (0usize, 0usize);
        for id in log.robot_ids() {
            robots += 1;
            let mut finish = log.len();
            for t in 1..log.records.len() {
                let prev = &log.records[t - 1].entities[id];
                let cur = &log.records[t].entities;
                if prev.status != Status::Active {
                    finish = t - 1;
                    break;
                }
                length += prev.position.distance(cur[id].position);
                active_steps += 1;
                let me = &cur[id];
                let close = cur.iter().any(|h| {
                    !h.is_robot() && me.position.distance(h.position) < me.radius + h.radius + discomfort_dist
                });
                intruding += close as usize;
            }
            time += finish as f64 * log.dt;
            match log.records.last().map(|r| r.entities[id].status) {
                Some(Status::Reached) => success += 1,
                Some(Status::Collided) => collision += 1,
                _ => {}
            }
            reward += log.cumulative_reward(id);
        }
        if active_steps > 0 {
            intrusion_sum += 100.0 * intruding as f64 / active_steps as f64;
        }
    }
    let n = robots.max(1) as f64;
    Ok(MetricsReport {
        success_rate: success as f64 / n,
        collision_rate: collision as f64 / n,
        timeout_rate: (robots - success - collision) as f64 / n,
        intrusion_ratio: intrusion_sum / logs.len() as f64,
        travel_time: time / n,
        travel_length: length / n,
        reward: reward / n,
        episodes: logs.len(),
        robots,
    })
}
