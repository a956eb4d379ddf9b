use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MilestoneKind {
    Navigation,
    Interaction,
}

impl MilestoneKind {
    pub fn short(self) -> &'static str {
        match self {
            MilestoneKind::Navigation => "nav",
            MilestoneKind::Interaction => "int",
        }
    }
}

/// Necessary completion condition for one subtask: a type plus target phrases with a checklist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Milestone {
    pub kind: MilestoneKind,
    pub targets: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub done: Vec<bool>,
}

impl Milestone {
    pub fn new(kind: MilestoneKind, targets: Vec<String>) -> Self {
        assert!(!targets.is_empty(), "milestone needs at least one target");
        let done = vec![false; targets.len()];
        Milestone { kind, targets, done }
    }

    pub fn nav(target: &str) -> Self {
        Milestone::new(MilestoneKind::Navigation, vec![target.to_string()])
    }

    pub fn int(targets: &[&str]) -> Self {
        Milestone::new(MilestoneKind::Interaction, targets.iter().map(|s| s.to_string()).collect())
    }

    /// Restores the checklist after deserializing a record that omitted it.
    pub fn normalized(mut self) -> Self {
        if self.done.len() != self.targets.len() {
            self.done = vec![false; self.targets.len()];
        }
        self
    }

    pub fn all_done(&self) -> bool {
        self.done.iter().all(|&d| d)
    }

    pub fn reset(&mut self) {
        self.done.iter_mut().for_each(|d| *d = false);
    }

    /// Same type and targets, ignoring checklist state.
    pub fn same_targets(&self, other: &Milestone) -> bool {
        self.kind == other.kind && self.targets == other.targets
    }
}
