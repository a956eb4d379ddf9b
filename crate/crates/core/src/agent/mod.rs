//! Agent interface and implementations: expert replay, a privileged greedy agent and a learned policy.

pub mod features;
pub mod policy;
pub mod scripted;
pub mod train;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::milestone::MilestoneKind;
use crate::perception::Detection;
use crate::world::generate::TaskSpec;
use crate::world::{Action, ActionKind, AgentPose, WorldState};

pub use features::{featurize, selector_features, FEATURE_DIM, SELECTOR_DIM};
pub use policy::{PolicyAgent, PolicyModel};
pub use scripted::{ExpertAgent, GreedyAgent, PlannerAgent};

/// What the tracker tells the agent about the current milestone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackerHint {
    Off,
    Navigation,
    Interaction,
    Finished,
}

impl TrackerHint {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_kind(kind: Option<MilestoneKind>, finished: bool) -> Self {
        match (finished, kind) {
            (true, _) => TrackerHint::Finished,
            (false, Some(MilestoneKind::Navigation)) => TrackerHint::Navigation,
            (false, Some(MilestoneKind::Interaction)) => TrackerHint::Interaction,
            (false, None) => TrackerHint::Navigation,
        }
    }
}

/// Per-episode recollection: time spent on the current instruction and poses visited under it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentMemory {
    pub steps_in_subtask: u32,
    pub visited_poses: HashMap<AgentPose, u32>,
    /// Successful interactions since the instruction last changed.
    pub interactions: u32,
    pub last_action: Option<ActionKind>,
    pub last_succeeded: bool,
}

impl AgentMemory {
    pub fn reset(&mut self) {
        *self = AgentMemory::default();
    }

    /// Forgets per-instruction counters when the fed instruction changes.
    pub fn new_instruction(&mut self) {
        self.steps_in_subtask = 0;
        self.visited_poses.clear();
        self.interactions = 0;
    }

    pub fn visit(&mut self, pose: AgentPose) -> u32 {
        let c = self.visited_poses.entry(pose).or_insert(0);
        *c += 1;
        *c
    }

    pub fn revisits(&self, pose: &AgentPose) -> u32 {
        self.visited_poses.get(pose).copied().unwrap_or(0)
    }
}

/// Everything an agent sees at one step. `world`, `task` and `gold_subtask` are privileged and
/// only read by the scripted agents and by training code.
pub struct StepContext<'a> {
    pub detections: &'a [Detection],
    pub instruction: &'a str,
    pub hint: TrackerHint,
    pub held: bool,
    pub memory: &'a AgentMemory,
    pub pose: AgentPose,
    pub world: &'a WorldState,
    pub task: &'a TaskSpec,
    /// Index of the gold subtask currently in progress (shadow oracle cursor).
    pub gold_subtask: usize,
    pub step: u32,
}

pub trait Agent: Send {
    fn name(&self) -> &str;

    fn reset(&mut self, _task: &TaskSpec) {}

    /// Full ranking of candidate actions, best first.
    fn act(&mut self, ctx: &StepContext) -> Vec<(Action, f64)>;
}
