//! Imitation and actor-critic training for the policy.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grounding::Taxonomy;
use crate::nn::Adam;
use crate::rng::{stream, substream};
use crate::runner::{run_episode, Models, RunConfig, RunError, RunOptions};
use crate::tracker::TrackerMode;
use crate::world::generate::TaskSpec;
use crate::world::planner::next_expert_action;
use crate::world::{evaluate_goal, Action, ActionKind, ObjectId, Subtask, WorldState, NUM_ACTIONS};

use super::features::{featurize, FEATURE_DIM, SELECTOR_DIM};
use super::policy::{PolicyModel, StepLoss, DEFAULT_HIDDEN, INTERACTIONS};
use super::{Agent, StepContext};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub nav_step: f64,
    pub interaction_match: f64,
    pub visibility: f64,
    pub final_reward: f64,
    pub gamma: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { nav_step: 1.0, interaction_match: 1.0, visibility: 1.0, final_reward: 3.0, gamma: 0.99 }
    }
}

fn target_distance(s: &WorldState, target: ObjectId) -> Option<f64> {
    if s.is_carried(target) {
        return Some(0.0);
    }
    s.object(target).map(|o| s.agent.cell.distance(o.position))
}

/// Reward of one transition. `expert_kinds` are the interaction kinds of the expert segment for
/// the subtask in progress; `success` is whether every goal condition holds after the action.
pub fn rewards(
    cfg: &RewardConfig,
    before: &WorldState,
    after: &WorldState,
    action: ActionKind,
    target: Option<ObjectId>,
    expert_kinds: &[ActionKind],
    success: bool,
) -> f64 {
    let gained = target
        .and_then(|t| Some(target_distance(before, t)? - target_distance(after, t)?))
        .is_some_and(|d| d > 0.0);
    let mut r = if gained { cfg.nav_step } else { -cfg.nav_step };
    if action.is_interaction() {
        r += if expert_kinds.contains(&action) { cfg.interaction_match } else { -cfg.interaction_match };
        let visible = target.is_some_and(|t| {
            after.is_carried(t) || after.object(t).is_some_and(|o| crate::world::reachable(after, o))
        });
        r += if visible { cfg.visibility } else { -cfg.visibility };
    }
    if action == ActionKind::Stop {
        r += if success { cfg.final_reward } else { -cfg.final_reward };
    }
    r
}

/// Object and expert interaction kinds for the gold subtask at `index`.
pub fn reward_context(task: &TaskSpec, index: usize) -> (Option<ObjectId>, Vec<ActionKind>) {
    match task.subtasks.get(index) {
        None => (None, Vec::new()),
        Some(st) => (
            Some(st.subtask.target),
            task.expert_actions[st.expert.clone()]
                .iter()
                .filter(|a| a.kind.is_interaction())
                .map(|a| a.kind)
                .collect(),
        ),
    }
}

/// One recorded decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub avail: [bool; NUM_ACTIONS],
    /// Expert action kind, when the policy could emit it.
    pub expert: Option<usize>,
    /// Interaction kind, candidate features and the index of the expert's object.
    pub selector: Option<(ActionKind, Vec<Vec<f64>>, usize)>,
    pub before: Option<WorldState>,
    pub gold_subtask: usize,
}

fn expert_label(ctx: &StepContext) -> Option<crate::world::ExpertAction> {
    let from = ctx.gold_subtask.min(ctx.task.subtasks.len());
    let rest: Vec<Subtask> = ctx.task.subtasks[from..].iter().map(|r| r.subtask.clone()).collect();
    next_expert_action(ctx.world, &rest)
}

/// Records features and expert labels while acting with a mix of expert and policy.
pub struct RecordingAgent<'m> {
    pub model: &'m PolicyModel,
    tax: &'static Taxonomy,
    /// Probability of executing the expert's action instead of the policy's.
    beta: f64,
    /// Sample from the policy distribution instead of taking the top kind.
    stochastic: bool,
    keep_states: bool,
    rng: ChaCha8Rng,
    pub samples: Vec<Sample>,
}

impl<'m> RecordingAgent<'m> {
    pub fn new(model: &'m PolicyModel, beta: f64, stochastic: bool, keep_states: bool, rng: ChaCha8Rng) -> Self {
        RecordingAgent { model, tax: Taxonomy::shipped(), beta, stochastic, keep_states, rng, samples: Vec::new() }
    }
}

fn with_navs(best: Action) -> Vec<(Action, f64)> {
    let kind = best.kind;
    let mut out = vec![(best, 1.0)];
    for k in [ActionKind::RotateRight, ActionKind::MoveAhead, ActionKind::RotateLeft] {
        if k != kind {
            out.push((Action::nav(k), 0.0));
        }
    }
    out
}

impl Agent for RecordingAgent<'_> {
    fn name(&self) -> &str {
        "recording"
    }

    fn act(&mut self, ctx: &StepContext) -> Vec<(Action, f64)> {
        let x = featurize(self.tax, ctx.detections, ctx.held, ctx.instruction, ctx.memory, ctx.hint, &ctx.pose);
        let cands = self.model.candidates(self.tax, ctx.instruction, ctx.detections);
        let avail = PolicyModel::availability(!cands.is_empty());
        let expert = expert_label(ctx);
        let label = expert.map(|e| e.kind.index()).filter(|&k| avail[k]);
        let selector = expert.and_then(|e| {
            let id = e.object?;
            let pos = cands.iter().position(|(i, _)| ctx.detections[*i].source_id == id)?;
            Some((e.kind, cands.iter().map(|c| c.1.clone()).collect(), pos))
        });
        let use_expert = self.beta >= 1.0 || (self.beta > 0.0 && self.rng.gen_bool(self.beta));
        let ranked = if use_expert {
            match expert.and_then(|e| e.realize(ctx.world)) {
                Some(a) => with_navs(a),
                None => with_navs(Action::nav(ActionKind::RotateRight)),
            }
        } else {
            let mut ranked = self.model.rank(&x, &cands, ctx.detections);
            if self.stochastic {
                let fw = self.model.forward(&x, &avail);
                let u: f64 = self.rng.gen();
                let mut acc = 0.0;
                let mut pick = ranked[0].0.kind.index();
                for (i, p) in fw.probs.iter().enumerate() {
                    acc += p;
                    if *p > 0.0 && u < acc {
                        pick = i;
                        break;
                    }
                }
                let pos = ranked.iter().position(|(a, _)| a.kind.index() == pick).unwrap();
                let chosen = ranked.remove(pos);
                ranked.insert(0, chosen);
            }
            ranked
        };
        self.samples.push(Sample {
            x,
            avail,
            expert: label,
            selector,
            before: self.keep_states.then(|| ctx.world.clone()),
            gold_subtask: ctx.gold_subtask,
        });
        ranked
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub hidden: usize,
    pub bc_epochs: usize,
    pub bc_lr: f64,
    pub batch: usize,
    /// Extra collection rounds where the policy drives and the expert labels.
    pub dagger_rounds: usize,
    pub a2c_iterations: usize,
    pub a2c_episodes: usize,
    pub a2c_lr: f64,
    pub w_bc: f64,
    pub w_pg: f64,
    pub w_critic: f64,
    pub rewards: RewardConfig,
    pub divergence_limit: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            hidden: DEFAULT_HIDDEN,
            bc_epochs: 12,
            bc_lr: 3e-3,
            batch: 64,
            dagger_rounds: 3,
            a2c_iterations: 4,
            a2c_episodes: 64,
            a2c_lr: 2e-4,
            w_bc: 1.0,
            w_pg: 1.0,
            w_critic: 0.5,
            rewards: RewardConfig::default(),
            divergence_limit: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("empty training set")]
    Empty,
    #[error("weights diverged (mean |w| = {0})")]
    Diverged(f64),
    #[error(transparent)]
    Run(#[from] RunError),
}

/// Per-phase training diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub bc_samples: usize,
    pub bc_loss: Vec<f64>,
    pub bc_accuracy: f64,
    pub a2c_return: Vec<f64>,
    pub a2c_success: Vec<f64>,
}

fn guard(model: &PolicyModel, limit: f64) -> Result<(), TrainError> {
    let m = model.mean_abs_weight();
    if !m.is_finite() || m > limit {
        return Err(TrainError::Diverged(m));
    }
    Ok(())
}

/// Fraction of labelled samples whose top available kind is the expert's.
pub fn bc_accuracy(model: &PolicyModel, samples: &[Sample]) -> f64 {
    let labelled: Vec<&Sample> = samples.iter().filter(|s| s.expert.is_some()).collect();
    if labelled.is_empty() {
        return 0.0;
    }
    let hits = labelled
        .iter()
        .filter(|s| {
            let p = model.forward(&s.x, &s.avail).probs;
            let best = (0..NUM_ACTIONS).max_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap().then(b.cmp(&a))).unwrap();
            Some(best) == s.expert
        })
        .count();
    hits as f64 / labelled.len() as f64
}

/// Cross-entropy training of the action head and the object selector. Returns per-epoch mean loss.
pub fn train_bc(model: &mut PolicyModel, samples: &[Sample], epochs: usize, lr: f64, batch: usize, seed: u64) -> Result<Vec<f64>, TrainError> {
    if samples.iter().all(|s| s.expert.is_none() && s.selector.is_none()) {
        return Err(TrainError::Empty);
    }
    let mut rng = substream(seed, &[stream::TRAIN, 0xBC]);
    let mut opt = Adam::new(model.n_params(), lr);
    let mut sel_opt = Adam::new(model.selector.len(), lr);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut losses = Vec::with_capacity(epochs);
    let batch = batch.max(1);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let mut g = vec![0.0; model.n_params()];
            let mut gs = vec![0.0; model.selector.len()];
            let mut n = 0usize;
            for &i in chunk {
                let s = &samples[i];
                if s.expert.is_some() {
                    let terms = StepLoss { expert: s.expert, w_bc: 1.0, ..Default::default() };
                    total += model.step_grad(&s.x, &s.avail, &terms, &mut g);
                    n += 1;
                }
                if let Some((kind, cands, label)) = &s.selector {
                    total += model.selector_grad(*kind, cands, *label, &mut gs);
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            g.iter_mut().for_each(|v| *v *= scale);
            gs.iter_mut().for_each(|v| *v *= scale);
            let mut p = model.params();
            if n > 0 {
                opt.step(&mut p, &g);
                model.set_params(&p);
            }
            sel_opt.step(&mut model.selector, &gs);
        }
        losses.push(total / samples.len() as f64);
    }
    Ok(losses)
}

/// One step of an actor-critic rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub x: Vec<f64>,
    pub avail: [bool; NUM_ACTIONS],
    pub action: usize,
    pub reward: f64,
    pub expert: Option<usize>,
}

/// Loss gradient of one rollout (policy gradient on advantages, critic regression, optional
/// imitation term), summed over steps. Returns (gradient, discounted return of step 0).
pub fn a2c_gradient(model: &PolicyModel, steps: &[RolloutStep], cfg: &TrainConfig) -> (Vec<f64>, f64) {
    let mut g = vec![0.0; model.n_params()];
    let mut ret = 0.0;
    let mut returns = vec![0.0; steps.len()];
    for (i, s) in steps.iter().enumerate().rev() {
        ret = s.reward + cfg.rewards.gamma * ret;
        returns[i] = ret;
    }
    for (s, &r) in steps.iter().zip(&returns) {
        let value = model.forward(&s.x, &s.avail).value;
        let terms = StepLoss {
            expert: s.expert,
            sampled: s.avail[s.action].then_some((s.action, r - value)),
            ret: Some(r),
            w_bc: cfg.w_bc,
            w_pg: cfg.w_pg,
            w_critic: cfg.w_critic,
        };
        model.step_grad(&s.x, &s.avail, &terms, &mut g);
    }
    (g, returns.first().copied().unwrap_or(0.0))
}

fn collect(
    model: &PolicyModel,
    tasks: &[TaskSpec],
    run: &RunConfig,
    models: Models,
    tax: &Taxonomy,
    beta: f64,
    stochastic: bool,
    keep: bool,
    keys: &[u64],
) -> Result<Vec<(usize, Vec<Sample>, crate::runner::Episode)>, RunError> {
    tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut k = keys.to_vec();
            k.push(i as u64);
            let rng = substream(run.detector.seed ^ t.seed, &k);
            let mut agent = RecordingAgent::new(model, beta, stochastic, keep, rng);
            let ep = run_episode(t, &mut agent, run, models, tax, RunOptions::default())?;
            Ok((i, agent.samples, ep))
        })
        .collect()
}

/// Imitation rounds followed by actor-critic fine-tuning, for one tracker mode.
pub fn train_agent(
    tasks: &[TaskSpec],
    mode: TrackerMode,
    models: Models,
    run: &RunConfig,
    cfg: &TrainConfig,
    tax: &Taxonomy,
) -> Result<(PolicyModel, TrainLog), TrainError> {
    if tasks.is_empty() {
        return Err(TrainError::Empty);
    }
    let mut run = run.clone();
    run.tracker.mode = mode;
    let mut rng = substream(cfg.seed, &[stream::POLICY]);
    let mut model = PolicyModel::random(FEATURE_DIM, cfg.hidden, &mut rng);
    model.seed = cfg.seed;
    model.config = serde_json::json!({ "mode": mode.name(), "train": cfg, "selector_dim": SELECTOR_DIM });
    let mut log = TrainLog::default();
    let mut data: Vec<Sample> = Vec::new();
    for round in 0..=cfg.dagger_rounds {
        let beta = 0.5f64.powi(round as i32);
        let eps = collect(&model, tasks, &run, models, tax, beta, false, false, &[stream::TRAIN, round as u64])?;
        for (_, s, _) in eps {
            data.extend(s);
        }
        let epochs = if round == 0 { cfg.bc_epochs } else { cfg.bc_epochs.div_ceil(2) };
        let losses = train_bc(&mut model, &data, epochs, cfg.bc_lr, cfg.batch, cfg.seed ^ round as u64)?;
        log.bc_loss.extend(losses);
        guard(&model, cfg.divergence_limit)?;
    }
    log.bc_samples = data.len();
    log.bc_accuracy = bc_accuracy(&model, &data);

    let mut opt = Adam::new(model.n_params(), cfg.a2c_lr);
    for it in 0..cfg.a2c_iterations {
        let mut picks: Vec<TaskSpec> = Vec::with_capacity(cfg.a2c_episodes);
        for _ in 0..cfg.a2c_episodes {
            picks.push(tasks[rng.gen_range(0..tasks.len())].clone());
        }
        let eps = collect(&model, &picks, &run, models, tax, 0.0, true, true, &[stream::TRAIN, 0xA2C, it as u64])?;
        let mut grad = vec![0.0; model.n_params()];
        let mut n_steps = 0usize;
        let mut ret_sum = 0.0;
        let mut succ = 0usize;
        for (i, samples, ep) in &eps {
            let task = &picks[*i];
            let mut steps = Vec::with_capacity(samples.len());
            for (j, s) in samples.iter().enumerate() {
                let before = s.before.as_ref().expect("states kept");
                let after = samples.get(j + 1).and_then(|n| n.before.as_ref()).unwrap_or(&ep.final_state);
                let action = ep.trace[j].action;
                let (target, kinds) = reward_context(task, s.gold_subtask);
                let (met, total) = evaluate_goal(after, &task.goal);
                let r = rewards(&cfg.rewards, before, after, action, target, &kinds, met == total && total > 0);
                steps.push(RolloutStep { x: s.x.clone(), avail: s.avail, action: action.index(), reward: r, expert: s.expert });
            }
            let (g, r0) = a2c_gradient(&model, &steps, cfg);
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
            n_steps += steps.len();
            ret_sum += r0;
            succ += ep.result.success as usize;
        }
        let scale = 1.0 / n_steps.max(1) as f64;
        grad.iter_mut().for_each(|v| *v *= scale);
        let mut p = model.params();
        opt.step(&mut p, &grad);
        model.set_params(&p);
        guard(&model, cfg.divergence_limit)?;
        log.a2c_return.push(ret_sum / eps.len().max(1) as f64);
        log.a2c_success.push(succ as f64 / eps.len().max(1) as f64);
    }
    Ok((model, log))
}

/// (features, label) pairs for the binary checker, from expert rollouts under passive tracking.
pub fn binary_training_data(
    tasks: &[TaskSpec],
    models: Models,
    run: &RunConfig,
    tax: &Taxonomy,
) -> Result<Vec<(Vec<f64>, bool)>, RunError> {
    let mut run = run.clone();
    run.tracker.mode = TrackerMode::Passive;
    let per: Vec<Result<Vec<(Vec<f64>, bool)>, RunError>> = tasks
        .par_iter()
        .map(|t| {
            let opts = RunOptions { collect_binary: true };
            let model = PolicyModel::zeros(FEATURE_DIM, 1);
            let rng = substream(t.seed, &[stream::TRAIN, 0xB1]);
            let mut agent = RecordingAgent::new(&model, 0.8, false, false, rng);
            Ok(run_episode(t, &mut agent, &run, models, tax, opts)?.binary_samples)
        })
        .collect();
    let mut out = Vec::new();
    for p in per {
        out.extend(p?);
    }
    Ok(out)
}

/// Kinds that own a selector row; re-exported for callers that inspect the model.
pub fn selector_kinds() -> &'static [ActionKind] {
    &INTERACTIONS
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::generate::{generate_task, LayoutConfig, TaskType};
    use crate::world::{AgentPose, Cell, Grid, Heading, ObjectInstance, Pitch};

    fn room() -> WorldState {
        WorldState {
            grid: Grid::walled(10, 10),
            objects: vec![ObjectInstance::of_class(ObjectId(0), "apple", Cell::new(7, 2))],
            agent: AgentPose { cell: Cell::new(1, 2), heading: Heading::E, pitch: Pitch::Level },
            held: None,
            step_count: 0,
            stopped: false,
        }
    }

    #[test]
    fn reward_table() {
        let cfg = RewardConfig::default();
        let a = room();
        let mut b = a.clone();
        b.agent.cell = Cell::new(2, 2);
        // 6 cells to 5 cells.
        assert_eq!(rewards(&cfg, &a, &b, ActionKind::MoveAhead, Some(ObjectId(0)), &[], false), 1.0);
        assert_eq!(rewards(&cfg, &b, &a, ActionKind::MoveAhead, Some(ObjectId(0)), &[], false), -1.0);
        // Successful Stop: distance unchanged (-1) plus the final bonus.
        assert_eq!(rewards(&cfg, &a, &a, ActionKind::Stop, Some(ObjectId(0)), &[], true), 2.0);
        assert_eq!(rewards(&cfg, &a, &a, ActionKind::Stop, None, &[], false), -4.0);
        // Matching pickup with the target in reach: +1 +1, and the distance term.
        let mut near = a.clone();
        near.agent.cell = Cell::new(6, 2);
        let mut held = near.clone();
        held.held = Some(ObjectId(0));
        let r = rewards(&cfg, &near, &held, ActionKind::PickupObject, Some(ObjectId(0)), &[ActionKind::PickupObject], false);
        assert_eq!(r, 1.0 + 2.0);
        let r = rewards(&cfg, &near, &near, ActionKind::OpenObject, Some(ObjectId(0)), &[ActionKind::PickupObject], false);
        assert_eq!(r, -1.0 - 1.0 + 1.0);
    }

    fn synthetic(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = substream(seed, &[]);
        (0..n)
            .map(|i| Sample {
                x: (0..FEATURE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                avail: [true; NUM_ACTIONS],
                expert: Some(i % NUM_ACTIONS),
                selector: None,
                before: None,
                gold_subtask: 0,
            })
            .collect()
    }

    #[test]
    fn bc_memorizes_ten_examples() {
        let data = synthetic(10, 4);
        let mut m = PolicyModel::random(FEATURE_DIM, DEFAULT_HIDDEN, &mut substream(1, &[]));
        let losses = train_bc(&mut m, &data, 200, 1e-2, 10, 0).unwrap();
        assert_eq!(bc_accuracy(&m, &data), 1.0);
        assert!(losses.last().unwrap() < &losses[0]);
    }

    #[test]
    fn full_batch_descent_is_monotone_at_small_rate() {
        let data = synthetic(20, 8);
        let mut m = PolicyModel::random(FEATURE_DIM, 8, &mut substream(2, &[]));
        let loss = |m: &PolicyModel| -> f64 {
            let mut sink = vec![0.0; m.n_params()];
            data.iter()
                .map(|s| m.step_grad(&s.x, &s.avail, &StepLoss { expert: s.expert, w_bc: 1.0, ..Default::default() }, &mut sink))
                .sum()
        };
        let mut prev = loss(&m);
        for _ in 0..50 {
            let mut g = vec![0.0; m.n_params()];
            for s in &data {
                m.step_grad(&s.x, &s.avail, &StepLoss { expert: s.expert, w_bc: 1.0, ..Default::default() }, &mut g);
            }
            let p: Vec<f64> = m.params().iter().zip(&g).map(|(p, g)| p - 1e-3 * g).collect();
            m.set_params(&p);
            let l = loss(&m);
            assert!(l <= prev + 1e-12, "{l} > {prev}");
            prev = l;
        }
    }

    /// Two steps with fixed features; reward depends on both actions.
    fn bandit_reward(a1: usize, a2: usize) -> (f64, f64) {
        let r1 = if a1 == 2 { 1.0 } else { -0.5 };
        let r2 = if a2 == a1 % 5 { 2.0 } else { (a2 as f64) / 13.0 - 0.3 };
        (r1, r2)
    }

    #[test]
    fn a2c_update_matches_closed_form_expectation() {
        let mut rng = substream(17, &[]);
        let mut m = PolicyModel::random(6, 4, &mut rng);
        m.critic_w = (0..6).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let x1: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x2: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let avail = [true; NUM_ACTIONS];
        let p1 = m.forward(&x1, &avail).probs;
        let p2 = m.forward(&x2, &avail).probs;
        let cfg = TrainConfig { w_bc: 0.0, ..Default::default() };
        let rollout = |a1: usize, a2: usize| {
            let (r1, r2) = bandit_reward(a1, a2);
            vec![
                RolloutStep { x: x1.clone(), avail, action: a1, reward: r1, expert: None },
                RolloutStep { x: x2.clone(), avail, action: a2, reward: r2, expert: None },
            ]
        };
        let n = m.n_params();
        let mut expected = vec![0.0; n];
        for a1 in 0..NUM_ACTIONS {
            for a2 in 0..NUM_ACTIONS {
                let (g, _) = a2c_gradient(&m, &rollout(a1, a2), &cfg);
                let w = p1[a1] * p2[a2];
                for (e, v) in expected.iter_mut().zip(g) {
                    *e += w * v;
                }
            }
        }
        let draw = |p: &[f64], rng: &mut ChaCha8Rng| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, &q) in p.iter().enumerate() {
                acc += q;
                if u < acc {
                    return i;
                }
            }
            NUM_ACTIONS - 1
        };
        let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let trials = 10_000;
        let mut proj = Vec::with_capacity(trials);
        let mut mean = vec![0.0; n];
        let mut sq = vec![0.0; n];
        for _ in 0..trials {
            let (a1, a2) = (draw(&p1, &mut rng), draw(&p2, &mut rng));
            let (g, _) = a2c_gradient(&m, &rollout(a1, a2), &cfg);
            proj.push(g.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>());
            for i in 0..n {
                mean[i] += g[i];
                sq[i] += g[i] * g[i];
            }
        }
        let t = trials as f64;
        let pm = proj.iter().sum::<f64>() / t;
        let pv = proj.iter().map(|v| (v - pm).powi(2)).sum::<f64>() / (t - 1.0);
        let pe: f64 = expected.iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert!((pm - pe).abs() <= 2.0 * (pv / t).sqrt(), "projection {pm} vs {pe}");
        for i in 0..n {
            let mu = mean[i] / t;
            let se = ((sq[i] / t - mu * mu).max(0.0) / t).sqrt();
            assert!((mu - expected[i]).abs() <= 5.0 * se + 1e-12, "coordinate {i}: {mu} vs {}", expected[i]);
        }
    }

    #[test]
    fn zero_advantage_rollout_only_moves_the_critic() {
        let mut m = PolicyModel::random(6, 4, &mut substream(3, &[]));
        m.critic_w = vec![0.0; 6];
        let x = vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        m.critic_w[5] = 2.0;
        let cfg = TrainConfig { w_bc: 0.0, rewards: RewardConfig { gamma: 0.0, ..Default::default() }, ..Default::default() };
        let steps = vec![RolloutStep { x, avail: [true; NUM_ACTIONS], action: 4, reward: 2.0, expert: None }];
        let (g, _) = a2c_gradient(&m, &steps, &cfg);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_training_is_deterministic() {
        let tax = Taxonomy::shipped();
        let tasks: Vec<TaskSpec> = (0..4)
            .map(|i| generate_task(300 + i, TaskType::ALL[i as usize % 7], &LayoutConfig::default(), tax).unwrap().1)
            .collect();
        let cfg = TrainConfig { bc_epochs: 2, dagger_rounds: 1, a2c_iterations: 1, a2c_episodes: 3, ..Default::default() };
        let run = RunConfig::with_mode(TrackerMode::Oracle);
        let (a, log) = train_agent(&tasks, TrackerMode::Oracle, Models::default(), &run, &cfg, tax).unwrap();
        let (b, _) = train_agent(&tasks, TrackerMode::Oracle, Models::default(), &run, &cfg, tax).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(log.bc_samples > 0);
    }

    #[test]
    fn divergence_guard_fires() {
        let mut m = PolicyModel::zeros(FEATURE_DIM, 2);
        m.w1.iter_mut().for_each(|w| *w = 1e7);
        assert!(matches!(guard(&m, 1e6), Err(TrainError::Diverged(_))));
    }
}
