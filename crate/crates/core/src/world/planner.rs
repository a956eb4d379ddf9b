//! Expert planner: breadth-first navigation plus scripted interaction macros per subtask.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::action::{Action, ActionKind};
use super::step::{reachable, step, StepEvent};
use super::types::*;
use crate::perception::render_view;

/// Longest expert segment a generated task may contain.
pub const MAX_SEGMENT: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubtaskKind {
    Goto,
    Pickup,
    Put,
    Open,
    ToggleOn,
}

/// One low-level step of a task, with the objects it is about.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    pub kind: SubtaskKind,
    pub target: ObjectId,
    /// Closed container that must be opened before a pickup.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<ObjectId>,
    /// Object being carried by a put, or the open container a pickup starts from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<ObjectId>,
}

impl Subtask {
    pub fn new(kind: SubtaskKind, target: ObjectId) -> Self {
        Subtask { kind, target, source: None, context: None }
    }
}

/// Expert action with the acted-on object; the mask is produced at replay time from the rendered view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertAction {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<ObjectId>,
}

impl ExpertAction {
    pub fn nav(kind: ActionKind) -> Self {
        ExpertAction { kind, object: None }
    }

    pub fn on(kind: ActionKind, object: ObjectId) -> Self {
        ExpertAction { kind, object: Some(object) }
    }

    /// Concrete action against `state`, or `None` when the object is not in view.
    pub fn realize(&self, state: &WorldState) -> Option<Action> {
        match self.object {
            None => Some(Action { kind: self.kind, mask: None }),
            Some(id) => render_view(state)
                .into_iter()
                .find(|r| r.id == id)
                .map(|r| Action::interact(self.kind, r.mask)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("no pose reaches {0} from the current position")]
    Unreachable(ObjectId),
    #[error("segment for subtask {index} needs {len} actions")]
    TooLong { index: usize, len: usize },
    #[error("expert action {0:?} failed during planning")]
    ActionFailed(ExpertAction),
    #[error("goal not satisfied after replay ({0}/{1})")]
    GoalUnmet(u32, u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertPlan {
    /// Full trajectory, ending with Stop.
    pub actions: Vec<ExpertAction>,
    /// Slice of `actions` covering each subtask.
    pub segments: Vec<Range<usize>>,
}

/// The expert may act on `target` from here: it is drawn and reachable, and any other drawn,
/// reachable object of the same class is more than half a cell farther away.
pub fn interaction_pose_ok(state: &WorldState, target: ObjectId) -> bool {
    let Some(t) = state.object(target) else { return false };
    if !reachable(state, t) {
        return false;
    }
    let view = render_view(state);
    if !view.iter().any(|r| r.id == target) {
        return false;
    }
    let d = state.agent.cell.distance(t.position);
    view.iter()
        .filter(|r| r.id != target && r.label == t.class_label && r.reachable)
        .all(|r| r.distance > d + 0.5)
}

fn pose_key(p: &AgentPose) -> (i32, i32, usize) {
    (p.cell.x, p.cell.y, p.heading.index())
}

/// Shortest MoveAhead/Rotate sequence to a pose satisfying `goal`. Among the poses at minimal
/// depth the smallest (x, y, heading) wins. Pitch is left unchanged.
pub fn bfs_nav(state: &WorldState, goal: impl Fn(&WorldState) -> bool) -> Option<Vec<ActionKind>> {
    let w = state.grid.width() as usize;
    let h = state.grid.height() as usize;
    let idx = |p: &AgentPose| (p.cell.y as usize * w + p.cell.x as usize) * 4 + p.heading.index();
    let mut parent: Vec<Option<(usize, ActionKind)>> = vec![None; w * h * 4];
    let mut seen = vec![false; w * h * 4];
    let mut probe = state.clone();
    let start = state.agent;
    seen[idx(&start)] = true;
    let mut frontier = vec![start];
    while !frontier.is_empty() {
        let mut hits: Vec<AgentPose> = frontier
            .iter()
            .copied()
            .filter(|p| {
                probe.agent = *p;
                goal(&probe)
            })
            .collect();
        if !hits.is_empty() {
            hits.sort_by_key(pose_key);
            let mut path = Vec::new();
            let mut cur = idx(&hits[0]);
            while let Some((prev, a)) = parent[cur] {
                path.push(a);
                cur = prev;
            }
            path.reverse();
            return Some(path);
        }
        let mut next = Vec::new();
        for p in frontier {
            for a in [ActionKind::MoveAhead, ActionKind::RotateRight, ActionKind::RotateLeft] {
                let mut q = p;
                match a {
                    ActionKind::MoveAhead => {
                        let (dx, dy) = p.heading.delta();
                        q.cell = p.cell.offset(dx, dy);
                        if !state.walkable(q.cell) {
                            continue;
                        }
                    }
                    ActionKind::RotateRight => q.heading = p.heading.right(),
                    _ => q.heading = p.heading.left(),
                }
                let k = idx(&q);
                if !seen[k] {
                    seen[k] = true;
                    parent[k] = Some((idx(&p), a));
                    next.push(q);
                }
            }
        }
        frontier = next;
    }
    None
}

fn apply(state: &mut WorldState, a: ExpertAction, out: &mut Vec<ExpertAction>) -> Result<(), PlanError> {
    let action = a.realize(state).ok_or(PlanError::ActionFailed(a))?;
    let (next, ev) = step(state, &action).map_err(|_| PlanError::ActionFailed(a))?;
    if matches!(ev, StepEvent::Collision | StepEvent::InteractionFailed) {
        return Err(PlanError::ActionFailed(a));
    }
    *state = next;
    out.push(a);
    Ok(())
}

fn goto(state: &mut WorldState, target: ObjectId, out: &mut Vec<ExpertAction>) -> Result<(), PlanError> {
    let path = bfs_nav(state, |s| interaction_pose_ok(s, target)).ok_or(PlanError::Unreachable(target))?;
    for k in path {
        apply(state, ExpertAction::nav(k), out)?;
    }
    Ok(())
}

/// Appends the actions for one subtask, skipping steps the state already satisfies.
fn plan_subtask(state: &mut WorldState, st: &Subtask, actions: &mut Vec<ExpertAction>) -> Result<(), PlanError> {
    let obj = |s: &WorldState, id: ObjectId| s.object(id).cloned().ok_or(PlanError::Unreachable(id));
    match st.kind {
        SubtaskKind::Goto => goto(state, st.target, actions)?,
        SubtaskKind::Pickup => {
            if state.held == Some(st.target) {
                return Ok(());
            }
            if let Some(src) = st.source {
                if !obj(state, src)?.open {
                    goto(state, src, actions)?;
                    apply(state, ExpertAction::on(ActionKind::OpenObject, src), actions)?;
                }
            }
            goto(state, st.target, actions)?;
            apply(state, ExpertAction::on(ActionKind::PickupObject, st.target), actions)?;
        }
        SubtaskKind::Put | SubtaskKind::Open | SubtaskKind::ToggleOn => {
            let t = obj(state, st.target)?;
            let done = match st.kind {
                SubtaskKind::Put => st.context.is_some_and(|c| {
                    state.held != Some(c) && state.object(c).is_some_and(|o| o.contained_in == Some(st.target))
                }),
                SubtaskKind::Open => t.open,
                _ => t.on,
            };
            if done {
                return Ok(());
            }
            goto(state, st.target, actions)?;
            let kind = match st.kind {
                SubtaskKind::Put => ActionKind::PutObject,
                SubtaskKind::Open => ActionKind::OpenObject,
                _ => ActionKind::ToggleOnObject,
            };
            apply(state, ExpertAction::on(kind, st.target), actions)?;
        }
    }
    Ok(())
}

/// Plans every subtask in order from `world`, returning the trajectory and per-subtask segments.
pub fn plan_expert(world: &WorldState, subtasks: &[Subtask]) -> Result<ExpertPlan, PlanError> {
    let mut state = world.clone();
    let mut actions = Vec::new();
    let mut segments = Vec::with_capacity(subtasks.len());
    for (index, st) in subtasks.iter().enumerate() {
        let begin = actions.len();
        plan_subtask(&mut state, st, &mut actions)?;
        let len = actions.len() - begin;
        if len > MAX_SEGMENT {
            return Err(PlanError::TooLong { index, len });
        }
        segments.push(begin..actions.len());
    }
    actions.push(ExpertAction::nav(ActionKind::Stop));
    Ok(ExpertPlan { actions, segments })
}

/// First expert action from `state` for the remaining `subtasks` (Stop when nothing is left),
/// or `None` when the next unfinished subtask cannot be planned from here.
pub fn next_expert_action(state: &WorldState, subtasks: &[Subtask]) -> Option<ExpertAction> {
    for st in subtasks {
        let mut s = state.clone();
        let mut actions = Vec::new();
        plan_subtask(&mut s, st, &mut actions).ok()?;
        if let Some(&a) = actions.first() {
            return Some(a);
        }
    }
    Some(ExpertAction::nav(ActionKind::Stop))
}

/// Replays an expert trajectory, returning every visited state (initial state first).
pub fn replay(world: &WorldState, actions: &[ExpertAction]) -> Result<Vec<WorldState>, PlanError> {
    let mut states = vec![world.clone()];
    let mut state = world.clone();
    for &a in actions {
        let mut sink = Vec::new();
        apply(&mut state, a, &mut sink)?;
        states.push(state.clone());
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;
    use crate::world::{evaluate_goal, GoalCondition};

    fn room() -> WorldState {
        let desk = ObjectInstance::of_class(ObjectId(0), "desk", Cell::new(8, 1));
        let table = ObjectInstance::of_class(ObjectId(1), "sidetable", Cell::new(1, 8));
        let mut mug = ObjectInstance::of_class(ObjectId(2), "mug", Cell::new(1, 8));
        mug.contained_in = Some(ObjectId(1));
        WorldState {
            grid: Grid::walled(10, 10),
            objects: vec![desk, table, mug],
            agent: AgentPose { cell: Cell::new(8, 8), heading: Heading::N, pitch: Pitch::Level },
            held: None,
            step_count: 0,
            stopped: false,
        }
    }

    fn pick_place() -> Vec<Subtask> {
        vec![
            Subtask::new(SubtaskKind::Goto, ObjectId(1)),
            Subtask::new(SubtaskKind::Pickup, ObjectId(2)),
            Subtask::new(SubtaskKind::Goto, ObjectId(0)),
            Subtask { context: Some(ObjectId(2)), ..Subtask::new(SubtaskKind::Put, ObjectId(0)) },
        ]
    }

    #[test]
    fn pick_and_place_structure() {
        let w = room();
        let plan = plan_expert(&w, &pick_place()).unwrap();
        let kinds_in = |r: &Range<usize>| plan.actions[r.clone()].iter().map(|a| a.kind).collect::<Vec<_>>();
        assert!(kinds_in(&plan.segments[0]).iter().all(|k| k.is_navigation()));
        assert_eq!(kinds_in(&plan.segments[1]), vec![ActionKind::PickupObject]);
        assert!(kinds_in(&plan.segments[2]).iter().all(|k| k.is_navigation()));
        assert_eq!(kinds_in(&plan.segments[3]), vec![ActionKind::PutObject]);
        assert_eq!(plan.actions.last().unwrap().kind, ActionKind::Stop);
        let states = replay(&w, &plan.actions).unwrap();
        assert_eq!(evaluate_goal(states.last().unwrap(), &[GoalCondition::at("mug", "desk")]), (1, 1));
    }

    #[test]
    fn reachable_target_needs_no_navigation() {
        let mut w = room();
        w.agent = AgentPose { cell: Cell::new(3, 8), heading: Heading::W, pitch: Pitch::Level };
        let plan = plan_expert(&w, &pick_place()[..1]).unwrap();
        assert!(plan.segments[0].is_empty());
    }

    #[test]
    fn navigation_segment_is_minimal() {
        // Oracle: plain BFS over poses counting depth only.
        let w = room();
        let path = bfs_nav(&w, |s| interaction_pose_ok(s, ObjectId(1))).unwrap();
        let mut depth = std::collections::HashMap::new();
        let mut q = VecDeque::new();
        depth.insert(pose_key(&w.agent), 0usize);
        q.push_back(w.agent);
        let mut best = usize::MAX;
        let mut probe = w.clone();
        while let Some(p) = q.pop_front() {
            let d = depth[&pose_key(&p)];
            probe.agent = p;
            if interaction_pose_ok(&probe, ObjectId(1)) {
                best = best.min(d);
            }
            for (k, nxt) in [
                (0, AgentPose { cell: p.cell.offset(p.heading.delta().0, p.heading.delta().1), ..p }),
                (1, AgentPose { heading: p.heading.right(), ..p }),
                (2, AgentPose { heading: p.heading.left(), ..p }),
            ] {
                if k == 0 && !w.walkable(nxt.cell) {
                    continue;
                }
                if let std::collections::hash_map::Entry::Vacant(e) = depth.entry(pose_key(&nxt)) {
                    e.insert(d + 1);
                    q.push_back(nxt);
                }
            }
        }
        assert_eq!(path.len(), best);
    }

    #[test]
    fn closed_source_is_opened_first() {
        let mut w = room();
        w.objects[1] = ObjectInstance::of_class(ObjectId(1), "cabinet", Cell::new(1, 8));
        let st = Subtask { source: Some(ObjectId(1)), ..Subtask::new(SubtaskKind::Pickup, ObjectId(2)) };
        let plan = plan_expert(&w, &[Subtask::new(SubtaskKind::Goto, ObjectId(1)), st]).unwrap();
        let seg: Vec<_> = plan.actions[plan.segments[1].clone()].to_vec();
        assert_eq!(seg, vec![ExpertAction::on(ActionKind::OpenObject, ObjectId(1)), ExpertAction::on(ActionKind::PickupObject, ObjectId(2))]);
    }
}
