//! Discrete household world: state, transitions, goals, expert planning and task generation.

pub mod action;
pub mod catalog;
pub mod generate;
pub mod goal;
pub mod planner;
pub mod step;
pub mod templates;
pub mod types;

pub use action::{Action, ActionKind, MalformedAction, NUM_ACTIONS};
pub use generate::{generate_task, split_seed, GenerateError, LayoutConfig, SubtaskRecord, TaskSpec, TaskType};
pub use goal::{evaluate_goal, GoalCondition};
pub use planner::{bfs_nav, interaction_pose_ok, plan_expert, replay, ExpertAction, PlanError, Subtask, SubtaskKind};
pub use step::{in_frustum, local_coords, reachable, resolve_mask, step, within_reach, StepEvent};
pub use types::*;
