//! Milestone tracking: subtask slots, passive/proactive checking, the top-N action filter and the skip rule.

pub mod binary;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::grounding::{ground_target, GroundingConfig, Taxonomy};
use crate::mask::iou;
use crate::milestone::{Milestone, MilestoneKind};
use crate::perception::Detection;
use crate::tagger::{extract_milestones, TaggerModel};
use crate::world::generate::{TaskSpec, SEPARATOR};
use crate::world::{Action, ActionKind};

pub use binary::{BinaryTrainConfig, binary_features, BinaryChecker, BINARY_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackerMode {
    Off,
    Binary,
    Passive,
    Proactive,
    Oracle,
}

impl TrackerMode {
    pub const ALL: [TrackerMode; 5] =
        [TrackerMode::Off, TrackerMode::Binary, TrackerMode::Passive, TrackerMode::Proactive, TrackerMode::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            TrackerMode::Off => "off",
            TrackerMode::Binary => "binary",
            TrackerMode::Passive => "passive",
            TrackerMode::Proactive => "proactive",
            TrackerMode::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<TrackerMode> {
        TrackerMode::ALL.into_iter().find(|m| m.name() == s.trim().to_ascii_lowercase())
    }

    /// Modes that feed one slot at a time.
    pub fn tracks(self) -> bool {
        self != TrackerMode::Off
    }

    /// Modes that vet the agent's ranking before execution.
    pub fn filters(self) -> bool {
        matches!(self, TrackerMode::Proactive | TrackerMode::Oracle)
    }

    pub fn needs_tagger(self) -> bool {
        matches!(self, TrackerMode::Binary | TrackerMode::Passive | TrackerMode::Proactive)
    }
}

impl std::fmt::Display for TrackerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub mode: TrackerMode,
    pub iou_threshold: f64,
    pub top_n: usize,
    pub max_consecutive_failures: u32,
    pub grounding: GroundingConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            mode: TrackerMode::Proactive,
            iou_threshold: 0.5,
            top_n: 5,
            max_consecutive_failures: 15,
            grounding: GroundingConfig::default(),
        }
    }
}

impl TrackerConfig {
    pub fn with_mode(mode: TrackerMode) -> Self {
        TrackerConfig { mode, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), TrackerError> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(TrackerError::Config(format!("iou_threshold {} outside (0, 1]", self.iou_threshold)));
        }
        if self.top_n == 0 {
            return Err(TrackerError::Config("top_n must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckOutcome {
    Reached,
    NotReached,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TrackerError {
    #[error("tracker configuration: {0}")]
    Config(String),
    #[error("advance called while the current milestone is neither reached nor skipped")]
    ContractViolation,
    #[error("empty action ranking")]
    EmptyRanking,
}

/// One cursor position: the instructions it covers and the milestones checked in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub instructions: Range<usize>,
    pub text: String,
    pub phases: Vec<Milestone>,
}

/// Result of the proactive filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterDecision {
    pub action: Action,
    /// Position of the accepted entry in the ranking.
    pub rank: usize,
    /// No navigation action existed, so the top entry was taken unvetted.
    pub warning: bool,
}

impl FilterDecision {
    pub fn filtered(&self) -> bool {
        self.rank != 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerState {
    pub config: TrackerConfig,
    pub high_level: String,
    pub all_instructions: Vec<String>,
    pub slots: Vec<Slot>,
    /// Cursor into `slots`.
    pub subtask_index: usize,
    /// Milestone being checked inside the current slot.
    pub phase: usize,
    pub failure_count: u32,
    pub finished: bool,
    pub pending: Option<CheckOutcome>,
    pub skipped: u32,
}

/// Groups instructions into cursor slots. Instructions without milestones are merged into the
/// next one that has some; trailing ones join the last slot.
pub fn build_slots(instructions: &[String], milestones: &[Vec<Milestone>]) -> Vec<Slot> {
    let mut slots: Vec<Slot> = Vec::new();
    let mut start = 0;
    for (i, ms) in milestones.iter().enumerate() {
        if ms.is_empty() {
            continue;
        }
        let range = start..i + 1;
        slots.push(Slot {
            text: instructions[range.clone()].join(" "),
            instructions: range,
            phases: ms.iter().cloned().map(Milestone::normalized).collect(),
        });
        start = i + 1;
    }
    if start < instructions.len() {
        match slots.last_mut() {
            Some(last) => {
                last.instructions.end = instructions.len();
                last.text = instructions[last.instructions.clone()].join(" ");
            }
            None => slots.push(Slot {
                instructions: 0..instructions.len(),
                text: instructions.join(" "),
                phases: Vec::new(),
            }),
        }
    }
    slots
}

impl TrackerState {
    /// Builds the slots of `task` with the tagger, or from gold milestones in oracle mode.
    pub fn init(task: &TaskSpec, model: Option<&TaggerModel>, config: TrackerConfig) -> Result<Self, TrackerError> {
        config.validate()?;
        let milestones: Vec<Vec<Milestone>> = match config.mode {
            TrackerMode::Oracle | TrackerMode::Off => task.gold_milestones.clone(),
            _ => {
                let model = model.ok_or_else(|| TrackerError::Config(format!("mode {} needs a tagger", config.mode)))?;
                task.low_level.iter().map(|s| extract_milestones(&model.tag_text(s))).collect()
            }
        };
        Ok(Self::from_milestones(&task.high_level, &task.low_level, &milestones, config))
    }

    pub fn from_milestones(
        high_level: &str,
        instructions: &[String],
        milestones: &[Vec<Milestone>],
        config: TrackerConfig,
    ) -> Self {
        let slots = build_slots(instructions, milestones);
        TrackerState {
            config,
            high_level: high_level.to_string(),
            all_instructions: instructions.to_vec(),
            finished: slots.is_empty(),
            slots,
            subtask_index: 0,
            phase: 0,
            failure_count: 0,
            pending: None,
            skipped: 0,
        }
    }

    pub fn current_slot(&self) -> Option<&Slot> {
        if self.finished {
            None
        } else {
            self.slots.get(self.subtask_index)
        }
    }

    pub fn current_milestone(&self) -> Option<&Milestone> {
        self.current_slot().and_then(|s| s.phases.get(self.phase))
    }

    /// Instruction indices whose text the agent currently receives.
    pub fn fed_instructions(&self) -> Range<usize> {
        if !self.config.mode.tracks() {
            return 0..self.all_instructions.len();
        }
        self.current_slot().map_or(0..0, |s| s.instructions.clone())
    }

    /// Goal text plus the current slot (or every instruction when tracking is off).
    pub fn current_instruction(&self) -> String {
        if !self.config.mode.tracks() {
            let mut s = self.high_level.clone();
            for l in &self.all_instructions {
                s.push_str(SEPARATOR);
                s.push_str(l);
            }
            return s;
        }
        match self.current_slot() {
            Some(slot) => format!("{}{}{}", self.high_level, SEPARATOR, slot.text),
            None => String::new(),
        }
    }

    /// Targets of the milestone being checked, not yet done.
    pub fn open_targets(&self) -> Vec<&str> {
        self.current_milestone().map_or_else(Vec::new, |m| {
            m.targets.iter().zip(&m.done).filter(|(_, &d)| !d).map(|(t, _)| t.as_str()).collect()
        })
    }

    fn finish_phase(&mut self) -> bool {
        self.phase += 1;
        let n = self.slots[self.subtask_index].phases.len();
        if self.phase >= n {
            self.pending = Some(CheckOutcome::Reached);
            true
        } else {
            false
        }
    }

    /// Progress from the current phase onward. Returns (reached, any progress).
    fn progress(
        &mut self,
        tax: &Taxonomy,
        before: &[Detection],
        after: &[Detection],
        executed: Option<&Action>,
    ) -> (bool, bool) {
        let mut any = false;
        let mut interaction_used = false;
        if self.slots[self.subtask_index].phases.is_empty() {
            self.pending = Some(CheckOutcome::Reached);
            return (true, true);
        }
        loop {
            let g = self.config.grounding;
            let thr = self.config.iou_threshold;
            let m = &mut self.slots[self.subtask_index].phases[self.phase];
            match m.kind {
                MilestoneKind::Navigation => {
                    if m.targets.iter().any(|t| ground_target(t, after, tax, &g).is_some()) {
                        m.done.iter_mut().for_each(|d| *d = true);
                    }
                }
                MilestoneKind::Interaction => {
                    if interaction_used {
                        break;
                    }
                    let Some(Action { kind, mask: Some(mask) }) = executed else { break };
                    if !kind.is_interaction() {
                        break;
                    }
                    interaction_used = true;
                    for (t, done) in m.targets.iter().zip(m.done.iter_mut()) {
                        if *done {
                            continue;
                        }
                        if let Some(d) = ground_target(t, before, tax, &g) {
                            if iou(mask, &d.mask) >= thr {
                                *done = true;
                                any = true;
                            }
                        }
                    }
                }
            }
            if !m.all_done() {
                break;
            }
            any = true;
            if self.finish_phase() {
                return (true, true);
            }
        }
        (false, any)
    }

    /// Checks the current milestone after an executed step. Navigation is judged on the
    /// post-action detections, interaction on the pre-action detections and the executed mask.
    pub fn check(
        &mut self,
        tax: &Taxonomy,
        before: &[Detection],
        after: &[Detection],
        executed: Option<&Action>,
    ) -> CheckOutcome {
        if self.finished {
            return CheckOutcome::Reached;
        }
        if let Some(p) = self.pending {
            return p;
        }
        let (reached, progressed) = self.progress(tax, before, after, executed);
        if reached {
            return CheckOutcome::Reached;
        }
        if progressed {
            self.failure_count = 0;
        } else {
            self.failure_count += 1;
        }
        if self.failure_count >= self.config.max_consecutive_failures {
            self.pending = Some(CheckOutcome::Skipped);
            self.skipped += 1;
            return CheckOutcome::Skipped;
        }
        CheckOutcome::NotReached
    }

    /// Re-checks navigation against the current view without counting a failure.
    pub fn settle(&mut self, tax: &Taxonomy, view: &[Detection]) -> Option<CheckOutcome> {
        if self.finished {
            return None;
        }
        if self.pending.is_none() {
            self.progress(tax, view, view, None);
        }
        self.pending
    }

    /// Binary-classifier variant: the caller's decision replaces milestone checking.
    pub fn check_binary(&mut self, reached: bool) -> CheckOutcome {
        if self.finished {
            return CheckOutcome::Reached;
        }
        if let Some(p) = self.pending {
            return p;
        }
        if reached {
            self.pending = Some(CheckOutcome::Reached);
            return CheckOutcome::Reached;
        }
        self.failure_count += 1;
        if self.failure_count >= self.config.max_consecutive_failures {
            self.pending = Some(CheckOutcome::Skipped);
            self.skipped += 1;
            return CheckOutcome::Skipped;
        }
        CheckOutcome::NotReached
    }

    pub fn advance(&mut self) -> Result<(), TrackerError> {
        if self.finished {
            return Ok(());
        }
        if self.pending.take().is_none() {
            return Err(TrackerError::ContractViolation);
        }
        self.subtask_index += 1;
        self.phase = 0;
        self.failure_count = 0;
        if self.subtask_index >= self.slots.len() {
            self.finished = true;
        }
        Ok(())
    }

    /// Picks the action to execute from the agent's ranking.
    pub fn filter_action(
        &self,
        tax: &Taxonomy,
        ranked: &[(Action, f64)],
        detections: &[Detection],
    ) -> Result<FilterDecision, TrackerError> {
        if ranked.is_empty() {
            return Err(TrackerError::EmptyRanking);
        }
        let interaction_targets: Vec<&Detection> = match self.current_milestone() {
            Some(m) if m.kind == MilestoneKind::Interaction => self
                .open_targets()
                .iter()
                .filter_map(|t| ground_target(t, detections, tax, &self.config.grounding))
                .collect(),
            _ => Vec::new(),
        };
        for (rank, (action, _)) in ranked.iter().take(self.config.top_n).enumerate() {
            let accept = match action.kind {
                ActionKind::Stop => self.finished,
                k if k.is_interaction() => action
                    .mask
                    .as_ref()
                    .is_some_and(|m| interaction_targets.iter().any(|d| iou(m, &d.mask) >= self.config.iou_threshold)),
                _ => true,
            };
            if accept {
                return Ok(FilterDecision { action: action.clone(), rank, warning: false });
            }
        }
        match ranked.iter().position(|(a, _)| a.kind.is_navigation()) {
            Some(rank) => Ok(FilterDecision { action: ranked[rank].0.clone(), rank, warning: false }),
            None => Ok(FilterDecision { action: ranked[0].0.clone(), rank: 0, warning: true }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::Mask;
    use crate::world::ObjectId;

    fn det(label: &str, x: i64, reachable: bool) -> Detection {
        Detection {
            label: label.into(),
            score: 0.9,
            mask: Mask::rect(x, 20, x + 10, 30),
            reachable,
            source_id: ObjectId(x as u32),
        }
    }

    fn tracker(ms: Vec<Vec<Milestone>>) -> TrackerState {
        let text: Vec<String> = (0..ms.len()).map(|i| format!("step {i}.")).collect();
        TrackerState::from_milestones("Do it.", &text, &ms, TrackerConfig::default())
    }

    #[test]
    fn zero_milestone_instructions_merge_forward() {
        let t = tracker(vec![vec![], vec![Milestone::nav("mug")], vec![Milestone::int(&["mug"])], vec![]]);
        assert_eq!(t.slots.len(), 2);
        assert_eq!(t.slots[0].instructions, 0..2);
        assert_eq!(t.slots[0].text, "step 0. step 1.");
        assert_eq!(t.slots[1].instructions, 2..4);
        assert_eq!(t.current_instruction(), "Do it. <SEP> step 0. step 1.");
    }

    #[test]
    fn six_subtasks_give_six_slots() {
        let ms = vec![
            vec![Milestone::nav("fridge")],
            vec![Milestone::int(&["potato", "fridge"])],
            vec![Milestone::nav("microwave")],
            vec![Milestone::int(&["microwave"])],
            vec![Milestone::nav("countertop")],
            vec![Milestone::int(&["countertop"])],
        ];
        let t = tracker(ms);
        let kinds: Vec<&str> = t.slots.iter().map(|s| s.phases[0].kind.short()).collect();
        assert_eq!(kinds, ["nav", "int", "nav", "int", "nav", "int"]);
    }

    #[test]
    fn navigation_needs_a_reachable_grounding() {
        let tax = Taxonomy::shipped();
        let mut t = tracker(vec![vec![Milestone::nav("mug")], vec![Milestone::nav("sink")]]);
        assert_eq!(t.check(tax, &[], &[det("mug", 0, false)], None), CheckOutcome::NotReached);
        assert_eq!(t.check(tax, &[], &[det("mug", 0, true)], None), CheckOutcome::Reached);
        t.advance().unwrap();
        assert_eq!(t.subtask_index, 1);
        assert_eq!(t.current_instruction(), "Do it. <SEP> step 1.");
    }

    #[test]
    fn checklist_marks_targets_one_by_one() {
        let tax = Taxonomy::shipped();
        let mut t = tracker(vec![vec![Milestone::int(&["potato", "fridge"])]]);
        let fridge = det("fridge", 0, true);
        let potato = det("potato", 30, true);
        let open = Action::interact(ActionKind::OpenObject, fridge.mask.clone());
        let view = vec![fridge.clone()];
        assert_eq!(t.check(tax, &view, &view, Some(&open)), CheckOutcome::NotReached);
        assert_eq!(t.slots[0].phases[0].done, vec![false, true]);
        // Re-checking never unsets a done target.
        assert_eq!(t.check(tax, &view, &view, Some(&open)), CheckOutcome::NotReached);
        assert_eq!(t.slots[0].phases[0].done, vec![false, true]);
        let view = vec![fridge, potato.clone()];
        let pick = Action::interact(ActionKind::PickupObject, potato.mask.clone());
        assert_eq!(t.check(tax, &view, &[], Some(&pick)), CheckOutcome::Reached);
        t.advance().unwrap();
        assert!(t.finished);
        assert_eq!(t.current_instruction(), "");
    }

    #[test]
    fn fifteen_failures_skip() {
        let tax = Taxonomy::shipped();
        let mut t = tracker(vec![vec![Milestone::nav("mug")], vec![Milestone::nav("cup")]]);
        for _ in 0..14 {
            assert_eq!(t.check(tax, &[], &[], None), CheckOutcome::NotReached);
        }
        assert_eq!(t.check(tax, &[], &[], None), CheckOutcome::Skipped);
        assert_eq!(t.skipped, 1);
        t.advance().unwrap();
        assert_eq!((t.subtask_index, t.failure_count), (1, 0));
    }

    #[test]
    fn advancing_unreached_is_a_contract_violation() {
        let mut t = tracker(vec![vec![Milestone::nav("mug")]]);
        assert_eq!(t.advance(), Err(TrackerError::ContractViolation));
        assert_eq!(t.subtask_index, 0);
    }

    #[test]
    fn navigation_phase_precedes_interaction() {
        let tax = Taxonomy::shipped();
        let mut t = tracker(vec![vec![Milestone::nav("sink"), Milestone::int(&["mug"])]]);
        let mug = det("mug", 0, true);
        let pick = Action::interact(ActionKind::PickupObject, mug.mask.clone());
        let view = vec![mug];
        assert_eq!(t.check(tax, &view, &view, Some(&pick)), CheckOutcome::NotReached);
        assert_eq!(t.phase, 0);
        let view = vec![det("sinkbasin", 30, true), det("mug", 0, true)];
        assert_eq!(t.check(tax, &view, &view, None), CheckOutcome::NotReached);
        assert_eq!(t.phase, 1);
        assert_eq!(t.check(tax, &view, &view, Some(&pick)), CheckOutcome::Reached);
    }

    #[test]
    fn filter_rejects_wrong_object() {
        let tax = Taxonomy::shipped();
        let t = tracker(vec![vec![Milestone::int(&["fork"])]]);
        let sponge = det("dishsponge", 0, true);
        let fork = det("fork", 30, true);
        let ranked = vec![
            (Action::interact(ActionKind::PickupObject, sponge.mask.clone()), 0.5),
            (Action::interact(ActionKind::PickupObject, fork.mask.clone()), 0.3),
            (Action::nav(ActionKind::MoveAhead), 0.2),
        ];
        let d = t.filter_action(tax, &ranked, &[sponge, fork]).unwrap();
        assert_eq!(d.rank, 1);
        assert!(d.filtered());
    }

    #[test]
    fn filter_takes_first_navigation_for_nav_milestones() {
        let tax = Taxonomy::shipped();
        let t = tracker(vec![vec![Milestone::nav("fork")]]);
        let fork = det("fork", 30, true);
        let ranked = vec![
            (Action::interact(ActionKind::PickupObject, fork.mask.clone()), 0.5),
            (Action::nav(ActionKind::Stop), 0.3),
            (Action::nav(ActionKind::MoveAhead), 0.2),
        ];
        let d = t.filter_action(tax, &ranked, &[fork]).unwrap();
        assert_eq!(d.action.kind, ActionKind::MoveAhead);
    }

    #[test]
    fn filter_falls_back_past_top_n() {
        let tax = Taxonomy::shipped();
        let t = tracker(vec![vec![Milestone::int(&["fork"])]]);
        let sponge = det("dishsponge", 0, true);
        let mut ranked: Vec<(Action, f64)> = (0..6)
            .map(|i| (Action::interact(ActionKind::PickupObject, sponge.mask.clone()), 1.0 - i as f64 * 0.1))
            .collect();
        ranked.push((Action::nav(ActionKind::RotateLeft), 0.2));
        ranked.push((Action::nav(ActionKind::MoveAhead), 0.1));
        let d = t.filter_action(tax, &ranked, std::slice::from_ref(&sponge)).unwrap();
        assert_eq!((d.rank, d.action.kind), (6, ActionKind::RotateLeft));

        let only = vec![(Action::interact(ActionKind::PickupObject, sponge.mask.clone()), 1.0)];
        let d = t.filter_action(tax, &only, &[sponge]).unwrap();
        assert!(d.warning);
        assert_eq!(t.filter_action(tax, &[], &[]), Err(TrackerError::EmptyRanking));
    }

    #[test]
    fn stop_only_when_finished() {
        let tax = Taxonomy::shipped();
        let mut t = tracker(vec![vec![Milestone::nav("mug")]]);
        let ranked = vec![(Action::stop(), 0.9), (Action::nav(ActionKind::RotateRight), 0.1)];
        assert_eq!(t.filter_action(tax, &ranked, &[]).unwrap().action.kind, ActionKind::RotateRight);
        t.check(tax, &[], &[det("mug", 0, true)], None);
        t.advance().unwrap();
        assert_eq!(t.filter_action(tax, &ranked, &[]).unwrap().action.kind, ActionKind::Stop);
    }

    #[test]
    fn off_mode_feeds_everything() {
        let text = vec!["A.".to_string(), "B.".to_string()];
        let ms = vec![vec![Milestone::nav("mug")], vec![Milestone::nav("cup")]];
        let t = TrackerState::from_milestones("G.", &text, &ms, TrackerConfig::with_mode(TrackerMode::Off));
        assert_eq!(t.current_instruction(), "G. <SEP> A. <SEP> B.");
        assert_eq!(t.fed_instructions(), 0..2);
    }
}
