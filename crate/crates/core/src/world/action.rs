use serde::{Deserialize, Serialize};

use crate::mask::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    MoveAhead,
    RotateRight,
    RotateLeft,
    LookUp,
    LookDown,
    PickupObject,
    PutObject,
    OpenObject,
    CloseObject,
    ToggleOnObject,
    ToggleOffObject,
    SliceObject,
    Stop,
}

pub const NUM_ACTIONS: usize = 13;

impl ActionKind {
    pub const ALL: [ActionKind; NUM_ACTIONS] = [
        ActionKind::MoveAhead,
        ActionKind::RotateRight,
        ActionKind::RotateLeft,
        ActionKind::LookUp,
        ActionKind::LookDown,
        ActionKind::PickupObject,
        ActionKind::PutObject,
        ActionKind::OpenObject,
        ActionKind::CloseObject,
        ActionKind::ToggleOnObject,
        ActionKind::ToggleOffObject,
        ActionKind::SliceObject,
        ActionKind::Stop,
    ];

    pub const NAVIGATION: [ActionKind; 5] = [
        ActionKind::MoveAhead,
        ActionKind::RotateRight,
        ActionKind::RotateLeft,
        ActionKind::LookUp,
        ActionKind::LookDown,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ActionKind> {
        ActionKind::ALL.get(i).copied()
    }

    pub fn is_interaction(self) -> bool {
        matches!(
            self,
            ActionKind::PickupObject
                | ActionKind::PutObject
                | ActionKind::OpenObject
                | ActionKind::CloseObject
                | ActionKind::ToggleOnObject
                | ActionKind::ToggleOffObject
                | ActionKind::SliceObject
        )
    }

    pub fn is_navigation(self) -> bool {
        !self.is_interaction() && self != ActionKind::Stop
    }
}

/// One agent action; interaction kinds carry a mask selecting their target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Mask>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MalformedAction {
    #[error("{0:?} must not carry a mask")]
    UnexpectedMask(ActionKind),
    #[error("{0:?} requires a mask")]
    MissingMask(ActionKind),
    #[error("{0:?} has an empty mask")]
    EmptyMask(ActionKind),
}

impl Action {
    pub fn nav(kind: ActionKind) -> Self {
        debug_assert!(!kind.is_interaction());
        Action { kind, mask: None }
    }

    pub fn interact(kind: ActionKind, mask: Mask) -> Self {
        debug_assert!(kind.is_interaction());
        Action { kind, mask: Some(mask) }
    }

    pub fn stop() -> Self {
        Action { kind: ActionKind::Stop, mask: None }
    }

    pub fn validate(&self) -> Result<(), MalformedAction> {
        match (&self.mask, self.kind.is_interaction()) {
            (Some(_), false) => Err(MalformedAction::UnexpectedMask(self.kind)),
            (None, true) => Err(MalformedAction::MissingMask(self.kind)),
            (Some(m), true) if m.is_empty() => Err(MalformedAction::EmptyMask(self.kind)),
            _ => Ok(()),
        }
    }
}
