//! Episode loop: perception, tracker feeding and checking, the proactive filter, a shadow oracle
//! tracker for diagnostics, and per-step traces.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentMemory, StepContext, TrackerHint};
use crate::eval::{classify_fatal, EpisodeResult, FatalClass, FatalConfig};
use crate::grounding::{ground_target, Taxonomy};
use crate::mask::iou;
use crate::milestone::Milestone;
use crate::perception::{detect_step, Detection, DetectorConfig};
use crate::tagger::TaggerModel;
use crate::tracker::{binary_features, BinaryChecker, CheckOutcome, TrackerConfig, TrackerMode, TrackerState};
use crate::world::generate::TaskSpec;
use crate::world::{evaluate_goal, resolve_mask, step, within_reach, Action, ActionKind, StepEvent, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub max_steps: u32,
    pub detector: DetectorConfig,
    pub tracker: TrackerConfig,
    pub fatal: FatalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_steps: 400,
            detector: DetectorConfig::default(),
            tracker: TrackerConfig::default(),
            fatal: FatalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn with_mode(mode: TrackerMode) -> Self {
        RunConfig { tracker: TrackerConfig::with_mode(mode), ..Default::default() }
    }
}

/// Learned components a mode may need.
#[derive(Clone, Copy, Default)]
pub struct Models<'a> {
    pub tagger: Option<&'a TaggerModel>,
    pub binary: Option<&'a BinaryChecker>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RunError {
    #[error("mode {0} needs a {1} model")]
    MissingModel(TrackerMode, &'static str),
    #[error("tracker: {0}")]
    Tracker(#[from] crate::tracker::TrackerError),
    #[error("agent produced a malformed action at step {0}")]
    Malformed(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: u32,
    /// Tracker cursor when the action was chosen.
    pub subtask_index: usize,
    /// Shadow oracle cursor when the action was chosen (gold subtask in progress).
    pub shadow_index: usize,
    pub milestone: Option<String>,
    pub outcome: Option<CheckOutcome>,
    pub action: ActionKind,
    /// Class of the object the action's mask selected (oracle information).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
    pub filtered: bool,
    pub event: StepEvent,
    /// x, y, heading index, pitch degrees after the action.
    pub pose: (i32, i32, usize, i32),
    /// Best IoU of an executed interaction mask against the grounded open targets of the
    /// tracker milestone; absent for navigation or when there was no grounded target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_iou: Option<f64>,
    pub fed: Range<usize>,
    pub skip_to_next: bool,
    /// A successful interaction on an object matching none of the current subtask's targets.
    pub interact_other: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub result: EpisodeResult,
    pub trace: Vec<TraceStep>,
    pub final_state: WorldState,
    /// Tracker cursor advances as (step count, new cursor); settle-time advances carry the step
    /// count at which they happened.
    pub advances: Vec<(u32, usize)>,
    /// (features, passive checker decision) at every check point; only filled when requested.
    pub binary_samples: Vec<(Vec<f64>, bool)>,
}

fn milestone_label(m: &Milestone) -> String {
    format!("{}:{}", m.kind.short(), m.targets.join(","))
}

fn hint_of(t: &TrackerState) -> TrackerHint {
    if !t.config.mode.tracks() {
        TrackerHint::Off
    } else {
        TrackerHint::from_kind(t.current_milestone().map(|m| m.kind), t.finished)
    }
}

/// Advances while the current milestone is settled, re-checking navigation on `view`.
fn drain(t: &mut TrackerState, tax: &Taxonomy, view: &[Detection], step: u32, log: Option<&mut Vec<(u32, usize)>>) {
    let mut log = log;
    loop {
        if t.pending.is_none() {
            if t.config.mode == TrackerMode::Binary {
                break;
            }
            t.settle(tax, view);
        }
        if t.pending.is_none() || t.finished {
            break;
        }
        t.advance().expect("pending outcome allows advance");
        if let Some(l) = log.as_deref_mut() {
            l.push((step, t.subtask_index));
        }
    }
}

/// Options that only training and diagnostics use.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub collect_binary: bool,
}

/// Runs one episode of `agent` on `task`.
pub fn run_episode(
    task: &TaskSpec,
    agent: &mut dyn Agent,
    cfg: &RunConfig,
    models: Models,
    tax: &Taxonomy,
    opts: RunOptions,
) -> Result<Episode, RunError> {
    let mode = cfg.tracker.mode;
    if mode.needs_tagger() && models.tagger.is_none() {
        return Err(RunError::MissingModel(mode, "tagger"));
    }
    if mode == TrackerMode::Binary && models.binary.is_none() {
        return Err(RunError::MissingModel(mode, "binary checker"));
    }
    let mut tracker = TrackerState::init(task, models.tagger, cfg.tracker)?;
    let mut shadow = TrackerState::init(task, None, TrackerConfig { mode: TrackerMode::Oracle, ..cfg.tracker })?;
    let mut state = task.world.clone();
    let mut dets = detect_step(&state, &cfg.detector, tax, task.seed, 0);
    let mut advances = Vec::new();
    let mut binary_samples = Vec::new();
    drain(&mut tracker, tax, &dets, 0, Some(&mut advances));
    drain(&mut shadow, tax, &dets, 0, None);
    let mut memory = AgentMemory::default();
    agent.reset(task);
    let mut trace = Vec::new();
    let mut last_instruction = tracker.current_instruction();
    let mut steps = 0u32;
    while steps < cfg.max_steps && !state.stopped {
        let instruction = tracker.current_instruction();
        if instruction != last_instruction {
            memory.new_instruction();
            last_instruction = instruction.clone();
        }
        memory.visit(state.agent);
        let subtask_index = tracker.subtask_index;
        let shadow_index = shadow.subtask_index;
        let milestone = tracker.current_milestone().map(milestone_label);
        let fed = tracker.fed_instructions();
        let ranked = {
            let ctx = StepContext {
                detections: &dets,
                instruction: &instruction,
                hint: hint_of(&tracker),
                held: state.held.is_some(),
                memory: &memory,
                pose: state.agent,
                world: &state,
                task,
                gold_subtask: shadow.current_slot().map_or(task.low_level.len(), |s| s.instructions.start),
                step: steps,
            };
            agent.act(&ctx)
        };
        let (action, rank) = if mode.filters() {
            let d = tracker.filter_action(tax, &ranked, &dets)?;
            (d.action, d.rank)
        } else {
            let a = ranked.first().map(|r| r.0.clone()).unwrap_or_else(|| Action::nav(ActionKind::RotateRight));
            (a, 0)
        };
        let target_iou = match (&action.mask, tracker.current_milestone()) {
            (Some(mask), Some(_)) if action.kind.is_interaction() && mode.tracks() => tracker
                .open_targets()
                .iter()
                .filter_map(|t| ground_target(t, &dets, tax, &cfg.tracker.grounding))
                .map(|d| iou(mask, &d.mask))
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v)))),
            _ => None,
        };
        let current_targets: Vec<String> = {
            let slot = if mode.tracks() { tracker.current_slot() } else { shadow.current_slot() };
            slot.map_or_else(Vec::new, |s| s.phases.iter().flat_map(|m| m.targets.iter().cloned()).collect())
        };
        let object = resolve_mask(&state, &action).and_then(|id| state.object(id)).map(|o| o.class_label.clone());
        let (next, event) = step(&state, &action).map_err(|_| RunError::Malformed(steps))?;
        steps += 1;
        let next_dets = detect_step(&next, &cfg.detector, tax, task.seed, steps as u64);
        let succeeded = !matches!(event, StepEvent::Collision | StepEvent::InteractionFailed);
        let executed = (succeeded && action.kind.is_interaction()).then_some(&action);
        memory.steps_in_subtask += 1;
        memory.last_action = Some(action.kind);
        memory.last_succeeded = succeeded;
        if executed.is_some() {
            memory.interactions += 1;
            if !mode.tracks() {
                memory.steps_in_subtask = 0;
                memory.visited_poses.clear();
            }
        }
        let interact_other = executed.is_some()
            && !current_targets.is_empty()
            && object.as_deref().is_some_and(|label| {
                current_targets.iter().all(|t| tax.phrase_similarity(t, label) < cfg.tracker.grounding.similarity_threshold)
            });

        // Tracker check.
        let outcome = if !mode.tracks() || tracker.finished {
            None
        } else if mode == TrackerMode::Binary {
            let checker = models.binary.expect("checked above");
            let targets = tracker.current_milestone().map_or_else(Vec::new, |m| m.targets.clone());
            let trefs: Vec<&str> = targets.iter().map(|s| s.as_str()).collect();
            let f = binary_features(
                tax,
                &cfg.tracker.grounding,
                &trefs,
                tracker.current_milestone().map(|m| m.kind),
                &next_dets,
                Some(action.kind),
                memory.steps_in_subtask,
            );
            Some(tracker.check_binary(checker.reached(&f)))
        } else {
            let before_pending = tracker.pending;
            let o = tracker.check(tax, &dets, &next_dets, executed);
            if opts.collect_binary && before_pending.is_none() {
                let targets = tracker.current_slot().map_or_else(Vec::new, |s| {
                    s.phases.iter().flat_map(|m| m.targets.iter().cloned()).collect::<Vec<_>>()
                });
                let trefs: Vec<&str> = targets.iter().map(|s| s.as_str()).collect();
                let kind = tracker.current_slot().and_then(|s| s.phases.last()).map(|m| m.kind);
                let f = binary_features(
                    tax,
                    &cfg.tracker.grounding,
                    &trefs,
                    kind,
                    &next_dets,
                    Some(action.kind),
                    memory.steps_in_subtask,
                );
                binary_samples.push((f, o == CheckOutcome::Reached));
            }
            Some(o)
        };
        let shadow_outcome = if shadow.finished { None } else { Some(shadow.check(tax, &dets, &next_dets, executed)) };

        // Premature progress on the following subtask while the current one is still open.
        let current_range = if mode.tracks() {
            tracker.current_slot().map(|s| s.instructions.clone())
        } else {
            shadow.current_slot().map(|s| s.instructions.clone())
        };
        let current_open = if mode.tracks() {
            outcome == Some(CheckOutcome::NotReached)
        } else {
            shadow_outcome == Some(CheckOutcome::NotReached)
        };
        let skip_to_next = match current_range {
            Some(r) if current_open && r.end < task.subtasks.len() && fed.contains(&r.end) => {
                let near = |s: &WorldState, id| {
                    s.object(id).is_some_and(|o| !s.is_carried(id) && within_reach(s.agent.cell, o.position))
                };
                let at_current = task.subtasks[r.clone()].iter().flat_map(|st| &st.target_ids).any(|&id| near(&next, id));
                !at_current && task.subtasks[r.end].target_ids.iter().any(|&id| near(&next, id) && !near(&state, id))
            }
            _ => false,
        };

        if mode.tracks() {
            if tracker.pending.is_some() && !tracker.finished {
                tracker.advance()?;
                advances.push((steps, tracker.subtask_index));
            }
            drain(&mut tracker, tax, &next_dets, steps, Some(&mut advances));
        }
        if shadow.pending.is_some() && !shadow.finished {
            shadow.advance()?;
        }
        drain(&mut shadow, tax, &next_dets, steps, None);

        trace.push(TraceStep {
            step: steps,
            subtask_index,
            shadow_index,
            milestone,
            outcome,
            action: action.kind,
            object,
            filtered: rank != 0,
            event,
            pose: (next.agent.cell.x, next.agent.cell.y, next.agent.heading.index(), next.agent.pitch.degrees()),
            target_iou,
            fed,
            skip_to_next,
            interact_other,
        });
        state = next;
        dets = next_dets;
    }
    let (met, total) = evaluate_goal(&state, &task.goal);
    let success = met == total && total > 0;
    let mut result = EpisodeResult {
        format_version: crate::eval::FORMAT_VERSION,
        task_seed: task.seed,
        task_type: task.task_type,
        mode,
        success,
        gc_met: met,
        gc_total: total,
        agent_len: steps.max(1),
        expert_len: task.expert_len() as u32,
        fatal_error: FatalClass::None,
        trace_ref: None,
        skipped: tracker.skipped,
        filtered: trace.iter().filter(|s| s.filtered).count() as u32,
        stopped: state.stopped,
    };
    if !success {
        result.fatal_error = classify_fatal(&trace, &cfg.fatal);
    }
    Ok(Episode { result, trace, final_state: state, advances, binary_samples })
}

/// (step count, new cursor) at which a tracker following the gold milestones should advance when
/// the expert trajectory is replayed: right after each subtask's last expert action.
pub fn gold_boundaries(task: &TaskSpec) -> Vec<(u32, usize)> {
    task.subtasks.iter().enumerate().map(|(i, s)| (s.expert.end as u32, i + 1)).collect()
}

/// Replays the expert under oracle tracking with a noiseless detector and compares the tracker's
/// advances with the gold boundaries.
pub fn check_oracle_equivalence(task: &TaskSpec, tax: &Taxonomy) -> Result<(), String> {
    let cfg = RunConfig {
        detector: DetectorConfig { seed: task.seed, ..DetectorConfig::noiseless() },
        tracker: TrackerConfig::with_mode(TrackerMode::Oracle),
        ..Default::default()
    };
    let mut agent = crate::agent::ExpertAgent::default();
    let ep = run_episode(task, &mut agent, &cfg, Models::default(), tax, RunOptions::default()).map_err(|e| e.to_string())?;
    let gold = gold_boundaries(task);
    if ep.advances != gold {
        return Err(format!("task {}: advances {:?}, gold {:?}", task.seed, ep.advances, gold));
    }
    if !ep.result.success {
        return Err(format!("task {}: expert replay failed", task.seed));
    }
    Ok(())
}
