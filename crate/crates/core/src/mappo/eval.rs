use rand::Rng as _;
use rayon::prelude::*;

use super::MappoError;
use crate::config::ScenarioConfig;
use crate::geom::Vec2;
use crate::humanpol::HumanParams;
use crate::numcore::{ParamSet, Tensor};
use crate::percept::{build_observation, Observation, Predictions};
use crate::policy::{forward, ActionMode, Hyper};
use crate::rng::{indexed_stream, Rng};
use crate::sim::{compute_metrics, generate_scenario, EntityId, EpisodeLog, MetricsReport, World};

/// Produces velocity commands for the active robots of a world.
pub trait Controller {
    fn reset(&mut self, world: &World);
    fn act(&mut self, world: &World, predictions: &Predictions) -> Result<Vec<(EntityId, Vec2)>, MappoError>;
}

fn active_robots(world: &World) -> impl Iterator<Item = EntityId> + '_ {
    world.robots().filter(|r| r.is_active()).map(|r| r.id)
}

/// Heads straight for the goal at preferred speed, ignoring everyone.
#[derive(Clone, Debug, Default)]
pub struct GoalSeeker;

impl Controller for GoalSeeker {
    fn reset(&mut self, _: &World) {}

    fn act(&mut self, world: &World, _: &Predictions) -> Result<Vec<(EntityId, Vec2)>, MappoError> {
        Ok(active_robots(world)
            .map(|id| (id, world.entities[id].preferred_velocity(world.dt())))
            .collect())
    }
}

/// Velocity drawn uniformly from the disc of preferred speed.
#[derive(Clone, Debug)]
pub struct RandomController {
    pub rng: Rng,
}

impl Controller for RandomController {
    fn reset(&mut self, _: &World) {}

    fn act(&mut self, world: &World, _: &Predictions) -> Result<Vec<(EntityId, Vec2)>, MappoError> {
        let ids: Vec<_> = active_robots(world).collect();
        Ok(ids
            .into_iter()
            .map(|id| {
                let vp = world.entities[id].v_pref;
                let r = vp * self.rng.random::<f64>().sqrt();
                let a = self.rng.random_range(0.0..std::f64::consts::TAU);
                (id, Vec2::from_angle(a) * r)
            })
            .collect())
    }
}

/// The trained network; every robot runs its own copy with its own GRU
/// state.
pub struct LearnedController<'p> {
    pub params: &'p ParamSet,
    pub hyper: Hyper,
    pub mode: ActionMode,
    pub tau: f64,
    pub rng: Rng,
    hidden: Vec<Vec<f64>>,
}

impl<'p> LearnedController<'p> {
    pub fn new(params: &'p ParamSet, hyper: Hyper, mode: ActionMode, tau: f64, rng: Rng) -> Self {
        Self {
            params,
            hyper,
            mode,
            tau,
            rng,
            hidden: Vec::new(),
        }
    }
}

impl Controller for LearnedController<'_> {
    fn reset(&mut self, world: &World) {
        self.hidden = vec![vec![0.0; self.hyper.rnn]; world.num_robots()];
    }

    fn act(&mut self, world: &World, predictions: &Predictions) -> Result<Vec<(EntityId, Vec2)>, MappoError> {
        let ids: Vec<_> = active_robots(world).collect();
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        let obs: Vec<Observation> = ids
            .iter()
            .map(|&j| build_observation(world, j, predictions))
            .collect();
        let refs: Vec<&Observation> = obs.iter().collect();
        let h: Vec<f64> = ids.iter().flat_map(|&j| self.hidden[j].iter().copied()).collect();
        let h = Tensor::new(vec![ids.len(), self.hyper.rnn], h)?;
        let out = forward(
            &refs,
            &h,
            self.params,
            &self.hyper,
            self.tau,
            &mut self.rng,
            self.mode,
        )?;
        Ok(ids
            .iter()
            .enumerate()
            .map(|(b, &j)| {
                self.hidden[j] = out.hidden.row_slice(b).to_vec();
                (j, Vec2::new(out.action.get(b, 0), out.action.get(b, 1)))
            })
            .collect())
    }
}

/// Runs one episode to termination and returns its log.
pub fn run_episode(
    mut world: World,
    controller: &mut dyn Controller,
    human: &HumanParams,
) -> Result<EpisodeLog, MappoError> {
    let mut log = EpisodeLog::new(&world);
    let mut predictions = Predictions::from_world(&world);
    controller.reset(&world);
    while !world.is_terminal() {
        let actions = controller.act(&world, &predictions)?;
        let out = world.step(&actions, human)?;
        log.push(&world, &out);
        predictions = out.predictions;
    }
    Ok(log)
}

/// Evaluates `episodes` fresh scenarios. Episode `i` uses scenario stream
/// `("eval-scenario", i)` and a controller built by `make(i)`, so results do
/// not depend on the number of worker threads.
pub fn evaluate<C, F>(
    cfg: &ScenarioConfig,
    episodes: usize,
    seed: u64,
    make: F,
) -> Result<(MetricsReport, Vec<EpisodeLog>), MappoError>
where
    C: Controller,
    F: Fn(usize) -> C + Sync,
{
    let human = HumanParams::from_config(cfg);
    let logs: Vec<EpisodeLog> = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let world = generate_scenario(cfg, indexed_stream(seed, "eval-scenario", i as u64))?;
            let mut c = make(i);
            run_episode(world, &mut c, &human)
        })
        .collect::<Result<_, _>>()?;
    let report = compute_metrics(&logs, cfg.discomfort_dist)?;
    Ok((report, logs))
}

/// Per-episode controller stream for policies that need randomness.
pub fn controller_rng(seed: u64, episode: usize) -> Rng {
    indexed_stream(seed, "eval-policy", episode as u64)
}
