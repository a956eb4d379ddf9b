//! Scripted agents that read the true world state.

use crate::grounding::{NodeId, Taxonomy};
use crate::perception::Detection;
use crate::world::catalog::class_info;
use crate::world::generate::TaskSpec;
use crate::world::planner::next_expert_action;
use crate::world::{bfs_nav, interaction_pose_ok, Action, ActionKind, ObjectId, Subtask, WorldState};

use super::features::{instruction_mentions, verb_cues};
use super::{Agent, StepContext, TrackerHint};

const MATCH: f64 = 0.8;
const NAV_FALLBACKS: [ActionKind; 3] = [ActionKind::RotateRight, ActionKind::MoveAhead, ActionKind::RotateLeft];

/// `best` followed by plain navigation alternatives.
fn with_fallbacks(best: Action) -> Vec<(Action, f64)> {
    let kind = best.kind;
    let mut out = vec![(best, 1.0)];
    out.extend(NAV_FALLBACKS.iter().filter(|&&k| k != kind).map(|&k| (Action::nav(k), 0.0)));
    out
}

/// Replays the stored expert trajectory verbatim.
#[derive(Debug, Default)]
pub struct ExpertAgent {
    cursor: usize,
}

impl Agent for ExpertAgent {
    fn name(&self) -> &str {
        "expert"
    }

    fn reset(&mut self, _task: &TaskSpec) {
        self.cursor = 0;
    }

    fn act(&mut self, ctx: &StepContext) -> Vec<(Action, f64)> {
        let a = ctx.task.expert_actions.get(self.cursor).copied();
        self.cursor += 1;
        let action = a.and_then(|a| a.realize(ctx.world)).unwrap_or_else(Action::stop);
        with_fallbacks(action)
    }
}

/// Re-plans from the current state for the gold subtasks still open. Used for imitation labels.
#[derive(Debug, Default)]
pub struct PlannerAgent;

impl PlannerAgent {
    pub fn next(ctx: &StepContext) -> Option<Action> {
        let rest: Vec<Subtask> = ctx.task.subtasks[ctx.gold_subtask.min(ctx.task.subtasks.len())..]
            .iter()
            .map(|r| r.subtask.clone())
            .collect();
        next_expert_action(ctx.world, &rest).and_then(|a| a.realize(ctx.world))
    }
}

impl Agent for PlannerAgent {
    fn name(&self) -> &str {
        "planner"
    }

    fn act(&mut self, ctx: &StepContext) -> Vec<(Action, f64)> {
        with_fallbacks(PlannerAgent::next(ctx).unwrap_or_else(|| Action::nav(ActionKind::RotateRight)))
    }
}

/// Reads the fed text, picks a target from its mentions and verb, walks there with breadth-first
/// search over the true map, and interacts through the best matching detection.
pub struct GreedyAgent {
    tax: &'static Taxonomy,
}

impl Default for GreedyAgent {
    fn default() -> Self {
        GreedyAgent { tax: Taxonomy::shipped() }
    }
}

fn is(node: &str, p: fn(&crate::world::catalog::ClassInfo) -> bool) -> bool {
    class_info(node).is_some_and(p)
}

impl GreedyAgent {
    fn matches(&self, n: NodeId, label: &str) -> bool {
        self.tax.node(label).is_some_and(|l| self.tax.wup(n, l) >= MATCH)
    }

    /// Interaction kind and the mention it applies to.
    fn intent(&self, ctx: &StepContext, mentions: &[NodeId]) -> Option<(Option<ActionKind>, NodeId)> {
        let [pickup, put, open, toggle, _] = verb_cues(ctx.instruction);
        let name = |n: NodeId| self.tax.name(n).to_string();
        let first = |p: fn(&crate::world::catalog::ClassInfo) -> bool| mentions.iter().copied().find(|&n| is(&name(n), p));
        let held_label = ctx.world.held.and_then(|id| ctx.world.object(id)).map(|o| o.class_label.clone());
        if ctx.hint == TrackerHint::Navigation {
            return mentions.first().map(|&n| (None, n));
        }
        if toggle {
            return first(|c| c.toggleable).map(|n| (Some(ActionKind::ToggleOnObject), n));
        }
        if put && ctx.held {
            let dest = mentions
                .iter()
                .copied()
                .find(|&n| is(&name(n), |c| c.receptacle) && held_label.as_deref().is_none_or(|h| !self.matches(n, h)));
            return dest.map(|n| (Some(ActionKind::PutObject), n));
        }
        if pickup && !ctx.held {
            let item = first(|c| c.pickupable)?;
            let closed_source = mentions.iter().copied().find(|&n| {
                is(&name(n), |c| c.openable) && ctx.world.objects.iter().any(|o| self.matches(n, &o.class_label) && !o.open)
            });
            let item_visible = ctx.detections.iter().any(|d| d.reachable && self.matches(item, &d.label));
            if let (Some(src), false) = (closed_source, item_visible) {
                return Some((Some(ActionKind::OpenObject), src));
            }
            return Some((Some(ActionKind::PickupObject), item));
        }
        if open {
            return first(|c| c.openable).map(|n| (Some(ActionKind::OpenObject), n));
        }
        mentions.first().map(|&n| (None, n))
    }

    fn nearest_instance(&self, world: &WorldState, n: NodeId) -> Option<ObjectId> {
        world
            .objects
            .iter()
            .filter(|o| self.matches(n, &o.class_label) && !world.is_carried(o.id) && !world.enclosed_by_closed(o.id))
            .min_by(|a, b| {
                let da = world.agent.cell.distance(a.position);
                let db = world.agent.cell.distance(b.position);
                da.partial_cmp(&db).unwrap().then(a.id.cmp(&b.id))
            })
            .map(|o| o.id)
    }

    fn grounded<'a>(&self, dets: &'a [Detection], n: NodeId) -> Option<&'a Detection> {
        dets.iter()
            .filter(|d| d.reachable && self.matches(n, &d.label))
            .max_by(|a, b| a.score.partial_cmp(&b.score).unwrap())
    }
}

impl Agent for GreedyAgent {
    fn name(&self) -> &str {
        "greedy"
    }

    fn act(&mut self, ctx: &StepContext) -> Vec<(Action, f64)> {
        if ctx.hint == TrackerHint::Finished {
            return with_fallbacks(Action::stop());
        }
        let mentions = instruction_mentions(self.tax, ctx.instruction);
        let Some((kind, node)) = self.intent(ctx, &mentions) else {
            return with_fallbacks(Action::nav(ActionKind::RotateRight));
        };
        if let (Some(k), Some(d)) = (kind, self.grounded(ctx.detections, node)) {
            return with_fallbacks(Action::interact(k, d.mask.clone()));
        }
        let Some(id) = self.nearest_instance(ctx.world, node) else {
            return with_fallbacks(Action::nav(ActionKind::RotateRight));
        };
        let path = bfs_nav(ctx.world, |s| interaction_pose_ok(s, id));
        let next = match path.as_deref() {
            Some([first, ..]) => *first,
            Some([]) if kind.is_none() => ActionKind::Stop,
            _ => ActionKind::RotateRight,
        };
        if next == ActionKind::Stop {
            // Arrived at a navigation target: the tracker advances, or (untracked) nothing more to do.
            if ctx.hint == TrackerHint::Off {
                return with_fallbacks(Action::stop());
            }
            return with_fallbacks(Action::nav(ActionKind::RotateRight));
        }
        with_fallbacks(Action::nav(next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::DetectorConfig;
    use crate::runner::{run_episode, Models, RunConfig, RunOptions};
    use crate::tracker::TrackerMode;
    use crate::world::generate::{generate_task, LayoutConfig, TaskType};

    #[test]
    fn expert_replay_succeeds_under_oracle_tracking() {
        let tax = Taxonomy::shipped();
        for (i, ty) in TaskType::ALL.iter().enumerate() {
            let (_, task) = generate_task(50 + i as u64, *ty, &LayoutConfig::default(), tax).unwrap();
            let mut cfg = RunConfig::with_mode(TrackerMode::Oracle);
            cfg.detector = DetectorConfig::noiseless();
            let ep = run_episode(&task, &mut ExpertAgent::default(), &cfg, Models::default(), tax, RunOptions::default()).unwrap();
            assert!(ep.result.success, "{ty:?}");
            assert_eq!(ep.result.agent_len as usize, task.expert_len());
        }
    }

    #[test]
    fn planner_agent_solves_tasks() {
        let tax = Taxonomy::shipped();
        for (i, ty) in TaskType::ALL.iter().enumerate() {
            let (_, task) = generate_task(90 + i as u64, *ty, &LayoutConfig::default(), tax).unwrap();
            let cfg = RunConfig::with_mode(TrackerMode::Oracle);
            let ep = run_episode(&task, &mut PlannerAgent, &cfg, Models::default(), tax, RunOptions::default()).unwrap();
            assert!(ep.result.success, "{ty:?}");
        }
    }
}
