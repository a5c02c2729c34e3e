//! Greedy one-step planning over a world model and the depth-wise L1
//! rollout evaluation.

use wm_numeric::{solve_assignment, Array, ParamStore};

use crate::dataset::Dataset;
use crate::env::{step, step_traced, DynamicsMode, FactoredAction, SceneState, Trajectory};
use crate::error::{Error, Result};
use crate::metrics::{eq_distance, squared_distances};
use crate::splits::ObjectType;
use crate::training::frame_at;
use crate::transition::WorldModel;

/// Anything that can predict a successor and compare two states.
pub trait PlanModel {
    type State: Clone;

    fn num_objects(&self, state: &Self::State) -> usize;
    fn predict(&self, state: &Self::State, action: FactoredAction) -> Result<Self::State>;
    /// Hungarian distance between two states.
    fn distance(&self, a: &Self::State, b: &Self::State) -> Result<f64>;
}

/// The environment itself, comparing object positions.
#[derive(Clone, Copy, Debug)]
pub struct OracleModel {
    pub mode: DynamicsMode,
}

fn position_array(s: &SceneState) -> Array {
    let rows: Vec<Vec<f64>> = s.objects.iter().map(|o| vec![o.x as f64, o.y as f64]).collect();
    Array::from_rows(&rows).unwrap_or_else(|_| Array::zeros(&[0, 2]))
}

impl PlanModel for OracleModel {
    type State = SceneState;

    fn num_objects(&self, state: &SceneState) -> usize {
        state.k()
    }

    fn predict(&self, state: &SceneState, action: FactoredAction) -> Result<SceneState> {
        Ok(step(state, action, self.mode))
    }

    fn distance(&self, a: &SceneState, b: &SceneState) -> Result<f64> {
        if a.k() != b.k() {
            return Err(Error::Model("states hold different object counts".into()));
        }
        if a.k() == 0 {
            return Ok(0.0);
        }
        let cost = squared_distances(&position_array(a), &position_array(b));
        Ok(solve_assignment(&cost)?.total_cost.max(0.0).sqrt())
    }
}

/// A trained world model acting on slot sets.
pub struct LatentModel<'a> {
    pub model: &'a WorldModel,
    pub store: &'a ParamStore,
    /// Object types in mask order, naming each action's target.
    pub types: Vec<ObjectType>,
}

impl PlanModel for LatentModel<'_> {
    type State = Array;

    fn num_objects(&self, state: &Array) -> usize {
        state.rows()
    }

    fn predict(&self, state: &Array, action: FactoredAction) -> Result<Array> {
        self.model.predict_slots(self.store, state, action, &self.types)
    }

    fn distance(&self, a: &Array, b: &Array) -> Result<f64> {
        eq_distance(a, b)
    }
}

/// Enumerates all `k·4` actions in index order and returns the one whose
/// predicted successor is closest to `goal`; ties keep the lower index.
pub fn greedy_step<M: PlanModel>(model: &M, current: &M::State, goal: &M::State) -> Result<(FactoredAction, M::State)> {
    let k = model.num_objects(current);
    if k == 0 {
        return Err(Error::Model("no objects to act on".into()));
    }
    let mut best: Option<(f64, FactoredAction, M::State)> = None;
    for idx in 0..k * 4 {
        let a = FactoredAction::from_index(idx);
        let next = model.predict(current, a)?;
        let d = model.distance(&next, goal)?;
        if best.as_ref().is_none_or(|(bd, ..)| d < *bd) {
            best = Some((d, a, next));
        }
    }
    let (_, a, s) = best.expect("at least one action");
    Ok((a, s))
}

/// Repeats greedy steps until the distance to `goal` is zero or
/// `max_steps` is reached. Returns the actions taken.
pub fn plan_to_goal<M: PlanModel>(
    model: &M,
    start: &M::State,
    goal: &M::State,
    max_steps: usize,
) -> Result<Vec<FactoredAction>> {
    let mut cur = start.clone();
    let mut actions = Vec::new();
    while actions.len() < max_steps && model.distance(&cur, goal)? > 0.0 {
        let (a, next) = greedy_step(model, &cur, goal)?;
        actions.push(a);
        cur = next;
    }
    Ok(actions)
}

/// One rollout episode: a start state, the goal for every depth, and the
/// ground-truth per-object displacement at every depth.
#[derive(Clone, Debug)]
pub struct Episode<S> {
    pub start: S,
    pub goals: Vec<S>,
    pub true_moves: Vec<Vec<(i64, i64)>>,
}

/// Mean L1 between predicted and true displacement accumulators per depth;
/// entry 0 is depth 0.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthCurve {
    pub mean_l1: Vec<f64>,
}

/// Per-depth L1 for one sequence of chosen actions against the true moves.
/// The predicted trace moves only the acted object by the chosen direction.
pub fn depth_errors(chosen: &[FactoredAction], true_moves: &[Vec<(i64, i64)>], k: usize) -> Vec<f64> {
    let mut pred = vec![(0i64, 0i64); k];
    let mut truth = vec![(0i64, 0i64); k];
    let mut out = vec![0.0];
    for (a, moves) in chosen.iter().zip(true_moves) {
        let (dx, dy) = a.direction.delta();
        pred[a.target].0 += dx;
        pred[a.target].1 += dy;
        for (t, m) in truth.iter_mut().zip(moves) {
            t.0 += m.0;
            t.1 += m.1;
        }
        let l1: i64 = pred.iter().zip(&truth).map(|(p, t)| (p.0 - t.0).abs() + (p.1 - t.1).abs()).sum();
        out.push(l1 as f64);
    }
    out
}

/// Plans greedily for `horizon` steps per episode, feeding the model's own
/// predictions forward, and averages the per-depth L1 over episodes.
pub fn rollout_downstream_eval<M: PlanModel>(
    model: &M,
    episodes: &[Episode<M::State>],
    horizon: usize,
) -> Result<DepthCurve> {
    let mut sums = vec![0.0; horizon + 1];
    for ep in episodes {
        if ep.goals.len() < horizon || ep.true_moves.len() < horizon {
            return Err(Error::Model(format!("episode shorter than horizon {horizon}")));
        }
        let k = model.num_objects(&ep.start);
        let mut cur = ep.start.clone();
        let mut chosen = Vec::with_capacity(horizon);
        for goal in &ep.goals[..horizon] {
            let (a, next) = greedy_step(model, &cur, goal)?;
            chosen.push(a);
            cur = next;
        }
        for (s, e) in sums.iter_mut().zip(depth_errors(&chosen, &ep.true_moves[..horizon], k)) {
            *s += e;
        }
    }
    let n = episodes.len().max(1) as f64;
    Ok(DepthCurve {
        mean_l1: sums.into_iter().map(|s| s / n).collect(),
    })
}

/// Displacement of every object between consecutive states.
pub fn true_moves(traj: &Trajectory, horizon: usize) -> Vec<Vec<(i64, i64)>> {
    traj.states
        .windows(2)
        .take(horizon)
        .map(|w| {
            w[0].objects
                .iter()
                .zip(&w[1].objects)
                .map(|(a, b)| (b.x as i64 - a.x as i64, b.y as i64 - a.y as i64))
                .collect()
        })
        .collect()
}

pub fn oracle_episode(traj: &Trajectory, horizon: usize) -> Result<Episode<SceneState>> {
    if traj.states.len() <= horizon {
        return Err(Error::Model(format!("trajectory shorter than horizon {horizon}")));
    }
    Ok(Episode {
        start: traj.states[0].clone(),
        goals: traj.states[1..=horizon].to_vec(),
        true_moves: true_moves(traj, horizon),
    })
}

/// Episode over slot encodings of trajectory `index`: the goal at depth `d`
/// is the encoding of ground-truth frame `d`.
pub fn latent_episode(model: &WorldModel, store: &ParamStore, ds: &Dataset, index: usize, horizon: usize) -> Result<Episode<Array>> {
    let traj = &ds.trajectories[index];
    if traj.states.len() <= horizon {
        return Err(Error::Model(format!("trajectory shorter than horizon {horizon}")));
    }
    let encode = |t: usize| model.encode_values(store, &frame_at(ds, index, t));
    Ok(Episode {
        start: encode(0)?,
        goals: (1..=horizon).map(encode).collect::<Result<_>>()?,
        true_moves: true_moves(traj, horizon),
    })
}

/// Greedy planning curve of a trained model over the first `episodes`
/// trajectories of `ds`.
pub fn latent_depth_curve(
    model: &WorldModel,
    store: &ParamStore,
    ds: &Dataset,
    episodes: usize,
    horizon: usize,
) -> Result<DepthCurve> {
    let mut sums = vec![0.0; horizon + 1];
    let n = episodes.min(ds.trajectories.len());
    for i in 0..n {
        let ep = latent_episode(model, store, ds, i, horizon)?;
        let types = ds.trajectories[i].states[0].objects.iter().map(|o| o.kind()).collect();
        let lm = LatentModel { model, store, types };
        let c = rollout_downstream_eval(&lm, std::slice::from_ref(&ep), horizon)?;
        for (s, v) in sums.iter_mut().zip(c.mean_l1) {
            *s += v;
        }
    }
    Ok(DepthCurve {
        mean_l1: sums.into_iter().map(|s| s / n.max(1) as f64).collect(),
    })
}

/// Displacements the environment would apply for `action` (for callers
/// that score actions without a trajectory).
pub fn applied_moves(state: &SceneState, action: FactoredAction, mode: DynamicsMode) -> Vec<(i64, i64)> {
    let (next, _) = step_traced(state, action, mode);
    state
        .objects
        .iter()
        .zip(&next.objects)
        .map(|(a, b)| (b.x as i64 - a.x as i64, b.y as i64 - a.y as i64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Direction, ObjectSpec};

    fn single(x: usize, y: usize, grid: (usize, usize)) -> SceneState {
        SceneState {
            objects: vec![ObjectSpec::new(0, 0, x, y)],
            sticky_pair: None,
            grid,
        }
    }

    #[test]
    fn first_action_heads_toward_goal() {
        let m = OracleModel { mode: DynamicsMode::Ec };
        let (a, _) = greedy_step(&m, &single(0, 0, (5, 5)), &single(2, 1, (5, 5))).unwrap();
        assert!(matches!(a.direction, Direction::East | Direction::South));
        assert_eq!(a.target, 0);
    }

    #[test]
    fn at_goal_picks_index_zero() {
        let m = OracleModel { mode: DynamicsMode::Ec };
        let s = single(2, 2, (5, 5));
        // Every action moves one cell away: a four-way tie.
        let (a, _) = greedy_step(&m, &s, &s).unwrap();
        assert_eq!(a.index(), 0);
        let corner = single(0, 0, (5, 5));
        let (a, _) = greedy_step(&m, &corner, &corner).unwrap();
        assert_eq!(a, FactoredAction::new(0, Direction::North));
    }

    #[test]
    fn only_improving_action_is_chosen() {
        // A 1-wide corridor: east and west are walls, north is the top edge.
        let m = OracleModel { mode: DynamicsMode::Ec };
        let (a, _) = greedy_step(&m, &single(0, 0, (1, 3)), &single(0, 2, (1, 3))).unwrap();
        assert_eq!(a.direction, Direction::South);
    }

    #[test]
    fn wrong_direction_costs_two() {
        let chosen = [FactoredAction::new(0, Direction::West)];
        let truth = vec![vec![(1, 0)]];
        assert_eq!(depth_errors(&chosen, &truth, 1), vec![0.0, 2.0]);
    }

    #[test]
    fn manhattan_steps_to_goal() {
        let m = OracleModel { mode: DynamicsMode::Ec };
        for (sx, sy, gx, gy) in [(0, 0, 4, 4), (3, 1, 0, 2), (2, 2, 2, 2), (4, 0, 0, 0)] {
            let plan = plan_to_goal(&m, &single(sx, sy, (5, 5)), &single(gx, gy, (5, 5)), 50).unwrap();
            assert_eq!(plan.len(), sx.abs_diff(gx) + sy.abs_diff(gy));
        }
    }
}
