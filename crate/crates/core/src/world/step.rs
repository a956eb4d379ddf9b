//! Transition function and the reachability predicate.

use serde::{Deserialize, Serialize};

use super::action::{Action, ActionKind, MalformedAction};
use super::catalog;
use super::types::*;
use crate::mask::iou;
use crate::perception::render_view;

/// Minimum IoU for an action mask to select a rendered object.
pub const SELECT_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepEvent {
    None,
    Collision,
    InteractionFailed,
    Stopped,
    /// The episode was already stopped; nothing happened.
    Frozen,
}

/// Forward depth and lateral offset of `cell` as seen from `pose`.
pub fn local_coords(pose: &AgentPose, cell: Cell) -> (i32, i32) {
    pose.heading.to_local(cell.x - pose.cell.x, cell.y - pose.cell.y)
}

/// 90-degree wedge ahead of the agent, depth band set by pitch.
pub fn in_frustum(pose: &AgentPose, cell: Cell) -> bool {
    let (f, lat) = local_coords(pose, cell);
    let (lo, hi) = pose.pitch.depth_band();
    f >= lo && f <= hi && lat.abs() <= f
}

pub fn within_reach(from: Cell, to: Cell) -> bool {
    from.distance(to) * CELL_SIZE_M <= REACH_M + 1e-9
}

/// Within 1.5 m and inside the view wedge; carried objects are never reachable.
pub fn reachable(state: &WorldState, obj: &ObjectInstance) -> bool {
    !state.is_carried(obj.id)
        && within_reach(state.agent.cell, obj.position)
        && in_frustum(&state.agent, obj.position)
}

/// Rendered object whose mask best overlaps `action`'s mask, if the overlap is at least [`SELECT_IOU`].
pub fn resolve_mask(state: &WorldState, action: &Action) -> Option<ObjectId> {
    let mask = action.mask.as_ref()?;
    let mut best: Option<(f64, ObjectId)> = None;
    for r in render_view(state) {
        let v = iou(mask, &r.mask);
        if v >= SELECT_IOU && best.is_none_or(|(b, _)| v > b) {
            best = Some((v, r.id));
        }
    }
    best.map(|(_, id)| id)
}

pub fn step(state: &WorldState, action: &Action) -> Result<(WorldState, StepEvent), MalformedAction> {
    action.validate()?;
    if state.stopped {
        return Ok((state.clone(), StepEvent::Frozen));
    }
    let mut next = state.clone();
    let event = match action.kind {
        ActionKind::MoveAhead => {
            let (dx, dy) = next.agent.heading.delta();
            let target = next.agent.cell.offset(dx, dy);
            if !next.walkable(target) {
                return Ok((state.clone(), StepEvent::Collision));
            }
            next.agent.cell = target;
            if let Some(h) = next.held {
                move_subtree(&mut next, h, target);
            }
            StepEvent::None
        }
        ActionKind::RotateRight => {
            next.agent.heading = next.agent.heading.right();
            StepEvent::None
        }
        ActionKind::RotateLeft => {
            next.agent.heading = next.agent.heading.left();
            StepEvent::None
        }
        ActionKind::LookUp => {
            next.agent.pitch = next.agent.pitch.up();
            StepEvent::None
        }
        ActionKind::LookDown => {
            next.agent.pitch = next.agent.pitch.down();
            StepEvent::None
        }
        ActionKind::Stop => {
            next.stopped = true;
            StepEvent::Stopped
        }
        kind => {
            let target = resolve_mask(state, action)
                .filter(|&id| state.object(id).is_some_and(|o| reachable(state, o)));
            match target {
                Some(id) if interact(&mut next, kind, id) => StepEvent::None,
                _ => return Ok((state.clone(), StepEvent::InteractionFailed)),
            }
        }
    };
    next.step_count += 1;
    Ok((next, event))
}

fn move_subtree(state: &mut WorldState, root: ObjectId, to: Cell) {
    for id in state.subtree(root) {
        if let Some(o) = state.object_mut(id) {
            o.position = to;
        }
    }
}

fn set_subtree_temperature(state: &mut WorldState, root: ObjectId, t: Temperature) {
    for id in state.subtree(root).into_iter().skip(1) {
        if let Some(o) = state.object_mut(id) {
            o.temperature = t;
        }
    }
}

fn apply_appliance(state: &mut WorldState, appliance: ObjectId) {
    let Some(app) = state.object(appliance) else { return };
    if !app.on {
        return;
    }
    let label = app.class_label.clone();
    if catalog::is_heater(&label) {
        set_subtree_temperature(state, appliance, Temperature::Hot);
    } else if label == "fridge" {
        set_subtree_temperature(state, appliance, Temperature::Cold);
    } else if label == "faucet" {
        if let Some(basin) = state.object(appliance).and_then(|o| o.contained_in) {
            for id in state.subtree(basin).into_iter().skip(1) {
                if let Some(o) = state.object_mut(id) {
                    if o.pickupable {
                        o.clean = true;
                    }
                }
            }
        }
    }
}

/// Applies an interaction to `id`; returns false (leaving `state` untouched) when a precondition fails.
fn interact(state: &mut WorldState, kind: ActionKind, id: ObjectId) -> bool {
    let obj = state.object(id).expect("resolved object exists").clone();
    match kind {
        ActionKind::PickupObject => {
            if !obj.pickupable || state.held.is_some() || state.enclosed_by_closed(id) {
                return false;
            }
            let agent = state.agent.cell;
            state.object_mut(id).unwrap().contained_in = None;
            move_subtree(state, id, agent);
            state.held = Some(id);
            true
        }
        ActionKind::PutObject => {
            let Some(h) = state.held else { return false };
            if !obj.receptacle || state.is_carried(id) || (obj.openable && !obj.open) {
                return false;
            }
            let o = state.object_mut(h).unwrap();
            o.contained_in = Some(id);
            move_subtree(state, h, obj.position);
            state.held = None;
            // An appliance that is already running acts on whatever is put in it.
            let mut cur = Some(id);
            while let Some(c) = cur {
                apply_appliance(state, c);
                cur = state.object(c).and_then(|o| o.contained_in);
            }
            for f in state.contents(id) {
                if state.object(f).is_some_and(|o| o.class_label == "faucet") {
                    apply_appliance(state, f);
                }
            }
            true
        }
        ActionKind::OpenObject | ActionKind::CloseObject => {
            let opening = kind == ActionKind::OpenObject;
            if !obj.openable || obj.open == opening {
                return false;
            }
            state.object_mut(id).unwrap().open = opening;
            true
        }
        ActionKind::ToggleOnObject | ActionKind::ToggleOffObject => {
            let on = kind == ActionKind::ToggleOnObject;
            if !obj.toggleable || obj.on == on {
                return false;
            }
            state.object_mut(id).unwrap().on = on;
            apply_appliance(state, id);
            true
        }
        ActionKind::SliceObject => {
            let cutter = state.held.and_then(|h| state.object(h)).is_some_and(|o| catalog::is_cutter(&o.class_label));
            if !obj.sliceable || obj.sliced || !cutter {
                return false;
            }
            state.object_mut(id).unwrap().sliced = true;
            true
        }
        _ => unreachable!("navigation kinds are handled by step"),
    }
}
