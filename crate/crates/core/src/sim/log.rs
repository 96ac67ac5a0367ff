use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{sees, EntityKind, EntityState, SimError, Status, StepOutcome, World};
use crate::geom::Vec2;
use crate::humanpol::Behavior;

/// Snapshot of every entity at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub entities: Vec<EntityState>,
    /// Reward received on the transition into this step, per entity; `None`
    /// for humans, for robots already finished, and for the initial snapshot.
    pub rewards: Vec<Option<f64>>,
    /// Whether any robot perceives the entity.
    pub visible: Vec<bool>,
}

/// Full trace of one episode, initial snapshot included.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub dt: f64,
    pub records: Vec<StepRecord>,
}

fn seen_by_robots(world: &World) -> Vec<bool> {
    (0..world.entities.len())
        .map(|i| world.robots().any(|r| sees(world, r.id, i)))
        .collect()
}

impl EpisodeLog {
    pub fn new(world: &World) -> Self {
        Self {
            dt: world.dt(),
            records: vec![StepRecord {
                t: world.t,
                entities: world.entities.clone(),
                rewards: vec![None; world.entities.len()],
                visible: seen_by_robots(world),
            }],
        }
    }

    /// Appends the post-step world together with the step's rewards.
    pub fn push(&mut self, world: &World, outcome: &StepOutcome) {
        let mut rewards = vec![None; world.entities.len()];
        for &(id, r) in &outcome.rewards {
            rewards[id] = Some(r);
        }
        self.records.push(StepRecord {
            t: world.t,
            entities: world.entities.clone(),
            rewards,
            visible: seen_by_robots(world),
        });
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn robot_ids(&self) -> Vec<usize> {
        self.records
            .first()
            .map(|r| r.entities.iter().filter(|e| e.is_robot()).map(|e| e.id).collect())
            .unwrap_or_default()
    }

    /// Status of each robot in the final snapshot.
    pub fn terminal_statuses(&self) -> Vec<Status> {
        let ids = self.robot_ids();
        let last = self.records.last();
        ids.iter()
            .map(|&i| last.map(|r| r.entities[i].status).unwrap_or(Status::Active))
            .collect()
    }

    /// Final distance to goal of each robot.
    pub fn goal_distances(&self) -> Vec<f64> {
        let ids = self.robot_ids();
        let last = self.records.last();
        ids.iter()
            .map(|&i| last.map(|r| r.entities[i].goal_distance()).unwrap_or(0.0))
            .collect()
    }

    /// Sum of rewards received by `robot` over the episode.
    pub fn cumulative_reward(&self, robot: usize) -> f64 {
        self.records.iter().filter_map(|r| r.rewards[robot]).sum()
    }
}

/// One CSV line: an entity at a timestep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub t: usize,
    pub time: f64,
    pub entity_id: usize,
    pub kind: String,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub status: String,
    pub reward: Option<f64>,
    pub gx: f64,
    pub gy: f64,
    pub heading: f64,
    pub radius: f64,
    pub v_pref: f64,
    pub visible: u8,
}

pub fn write_episode_csv<W: Write>(log: &EpisodeLog, out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    for rec in &log.records {
        for (i, e) in rec.entities.iter().enumerate() {
            w.serialize(CsvRow {
                t: rec.t,
                time: rec.t as f64 * log.dt,
                entity_id: e.id,
                kind: e.kind.as_str().to_string(),
                x: e.position.x,
                y: e.position.y,
                vx: e.velocity.x,
                vy: e.velocity.y,
                status: e.status.as_str().to_string(),
                reward: rec.rewards[i],
                gx: e.goal.x,
                gy: e.goal.y,
                heading: e.heading,
                radius: e.radius,
                v_pref: e.v_pref,
                visible: rec.visible[i] as u8,
            })
            .map_err(|e| SimError::Csv {
                line: 0,
                message: e.to_string(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(line: usize, message: impl Into<String>) -> SimError {
    SimError::Csv {
        line,
        message: message.into(),
    }
}

/// Parses a log written by [`write_episode_csv`]. Errors carry the 1-based
/// line number of the offending row.
pub fn read_episode_csv<R: Read>(input: R) -> Result<EpisodeLog, SimError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut records: Vec<StepRecord> = Vec::new();
    let mut dt = None;
    for row in rdr.deserialize::<CsvRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            csv_err(line, e.to_string())
        })?;
        // Header is line 1; data rows follow.
        let line = records.iter().map(|r| r.entities.len()).sum::<usize>() + 2;
        let kind = match row.kind.as_str() {
            "robot" => EntityKind::Robot,
            "human" => EntityKind::Human,
            other => return Err(csv_err(line, format!("unknown kind {other:?}"))),
        };
        let status = Status::parse(&row.status)
            .ok_or_else(|| csv_err(line, format!("unknown status {:?}", row.status)))?;
        if !(row.radius > 0.0) {
            return Err(csv_err(line, "radius must be positive"));
        }
        if row.t > 0 && dt.is_none() {
            dt = Some(row.time / row.t as f64);
        }
        if records.last().map_or(true, |r| r.t != row.t) {
            if let Some(prev) = records.last() {
                if row.t != prev.t + 1 {
                    return Err(csv_err(line, format!("timestep {} follows {}", row.t, prev.t)));
                }
                if let Some(first) = records.first() {
                    if prev.entities.len() != first.entities.len() {
                        return Err(csv_err(line, "entity count changed within the episode"));
                    }
                }
            }
            records.push(StepRecord {
                t: row.t,
                entities: Vec::new(),
                rewards: Vec::new(),
                visible: Vec::new(),
            });
        }
        let rec = records.last_mut().expect("pushed above");
        if row.entity_id != rec.entities.len() {
            return Err(csv_err(
                line,
                format!("entity {} out of order at t={}", row.entity_id, row.t),
            ));
        }
        let position = Vec2::new(row.x, row.y);
        rec.entities.push(EntityState {
            id: row.entity_id,
            kind,
            position,
            prev_position: position - Vec2::new(row.vx, row.vy) * dt.unwrap_or(0.0),
            velocity: Vec2::new(row.vx, row.vy),
            goal: Vec2::new(row.gx, row.gy),
            heading: row.heading,
            radius: row.radius,
            v_pref: row.v_pref,
            status,
            behavior: match kind {
                EntityKind::Robot => Behavior::Learned,
                EntityKind::Human => Behavior::Orca,
            },
        });
        rec.rewards.push(row.reward);
        rec.visible.push(row.visible != 0);
    }
    if let (Some(first), Some(last)) = (records.first(), records.last()) {
        if first.entities.len() != last.entities.len() {
            return Err(csv_err(0, "entity count changed within the episode"));
        }
    }
    Ok(EpisodeLog {
        dt: dt.unwrap_or(0.25),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;
    use crate::humanpol::HumanParams;
    use crate::rng::Rng;
    use crate::sim::generate_scenario;
    use rand::SeedableRng;

    fn short_episode() -> EpisodeLog {
        let cfg = ScenarioConfig::default();
        let mut w = generate_scenario(&cfg, Rng::seed_from_u64(3)).unwrap();
        let params = HumanParams::from_config(&cfg);
        let mut log = EpisodeLog::new(&w);
        for _ in 0..10 {
            let acts: Vec<_> = w
                .robots()
                .filter(|r| r.is_active())
                .map(|r| (r.id, r.preferred_velocity(w.dt())))
                .collect();
            let out = w.step(&acts, &params).unwrap();
            log.push(&w, &out);
        }
        log
    }

    #[test]
    fn csv_round_trip() {
        let log = short_episode();
        let mut buf = Vec::new();
        write_episode_csv(&log, &mut buf).unwrap();
        let back = read_episode_csv(buf.as_slice()).unwrap();
        assert_eq!(back.records.len(), log.records.len());
        assert!((back.dt - log.dt).abs() < 1e-12);
        for (a, b) in back.records.iter().zip(&log.records) {
            assert_eq!(a.rewards, b.rewards);
            assert_eq!(a.visible, b.visible);
            for (x, y) in a.entities.iter().zip(&b.entities) {
                assert_eq!(
                    (x.position, x.goal, x.status, x.kind),
                    (y.position, y.goal, y.status, y.kind)
                );
            }
        }
    }

    #[test]
    fn bad_row_reports_line() {
        let log = short_episode();
        let mut buf = Vec::new();
        write_episode_csv(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        lines[4] = lines[4].replacen("human", "ghost", 1);
        let err = read_episode_csv(lines.join("\n").as_bytes()).unwrap_err();
        match err {
            SimError::Csv { line, .. } => assert_eq!(line, 5),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_input_is_empty_log() {
        let log = read_episode_csv(
            "t,time,entity_id,kind,x,y,vx,vy,status,reward,gx,gy,heading,radius,v_pref,visible\n".as_bytes(),
        )
        .unwrap();
        assert!(log.records.is_empty());
        assert!(log.is_empty());
    }
}
