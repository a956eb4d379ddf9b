//! Metrics, first-fatal-error classification and the tracker-mode ablation grid.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::grounding::Taxonomy;
use crate::runner::{run_episode, Episode, Models, RunConfig, RunError, RunOptions, TraceStep};
use crate::tracker::TrackerMode;
use crate::world::generate::{TaskSpec, TaskType};
use crate::world::{ActionKind, StepEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FatalClass {
    Collision,
    InteractOther,
    Wander,
    SkipToNext,
    None,
}

impl FatalClass {
    pub const ALL: [FatalClass; 5] =
        [FatalClass::Collision, FatalClass::InteractOther, FatalClass::Wander, FatalClass::SkipToNext, FatalClass::None];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FatalConfig {
    /// Consecutive blocked MoveAheads that count as a collision failure.
    pub collision_run: u32,
    /// Revisits of one (pose, subtask) that count as wandering.
    pub wander_revisits: u32,
}

impl Default for FatalConfig {
    fn default() -> Self {
        FatalConfig { collision_run: 10, wander_revisits: 5 }
    }
}

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub format_version: u32,
    pub task_seed: u64,
    pub task_type: TaskType,
    pub mode: TrackerMode,
    pub success: bool,
    pub gc_met: u32,
    pub gc_total: u32,
    pub agent_len: u32,
    pub expert_len: u32,
    pub fatal_error: FatalClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_ref: Option<String>,
    /// Milestones the tracker gave up on.
    #[serde(default)]
    pub skipped: u32,
    /// Steps where the filter replaced the agent's first choice.
    #[serde(default)]
    pub filtered: u32,
    #[serde(default)]
    pub stopped: bool,
}

impl EpisodeResult {
    pub fn validate(&self) -> Result<(), MetricError> {
        if self.format_version != FORMAT_VERSION {
            return Err(MetricError::Version(self.format_version));
        }
        if self.gc_met > self.gc_total || (self.success && self.gc_met != self.gc_total) {
            return Err(MetricError::Inconsistent(self.task_seed));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("no results")]
    Empty,
    #[error("path lengths must be at least 1 (agent {agent}, expert {expert})")]
    ZeroLength { agent: u32, expert: u32 },
    #[error("no goal conditions in batch")]
    NoConditions,
    #[error("result for task {0} has inconsistent goal-condition counts")]
    Inconsistent(u64),
    #[error("unsupported result format version {0}")]
    Version(u32),
}

pub fn success_rate(results: &[EpisodeResult]) -> Result<f64, MetricError> {
    if results.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(results.iter().filter(|r| r.success).count() as f64 / results.len() as f64)
}

/// Path-length weighted success of one episode.
pub fn plwsr(success: bool, expert_len: u32, agent_len: u32) -> Result<f64, MetricError> {
    if expert_len == 0 || agent_len == 0 {
        return Err(MetricError::ZeroLength { agent: agent_len, expert: expert_len });
    }
    if !success {
        return Ok(0.0);
    }
    Ok(expert_len as f64 / expert_len.max(agent_len) as f64)
}

pub fn mean_plwsr(results: &[EpisodeResult]) -> Result<f64, MetricError> {
    if results.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut s = 0.0;
    for r in results {
        s += plwsr(r.success, r.expert_len, r.agent_len)?;
    }
    Ok(s / results.len() as f64)
}

/// Pooled goal-condition rate over (met, total) pairs.
pub fn gc_rate(counts: &[(u32, u32)]) -> Result<f64, MetricError> {
    if counts.is_empty() {
        return Err(MetricError::Empty);
    }
    let met: u64 = counts.iter().map(|c| c.0 as u64).sum();
    let total: u64 = counts.iter().map(|c| c.1 as u64).sum();
    if total == 0 {
        return Err(MetricError::NoConditions);
    }
    Ok(met as f64 / total as f64)
}

pub fn gc_of(results: &[EpisodeResult]) -> Result<f64, MetricError> {
    gc_rate(&results.iter().map(|r| (r.gc_met, r.gc_total)).collect::<Vec<_>>())
}

/// First fatal error in trace order.
pub fn classify_fatal(trace: &[TraceStep], cfg: &FatalConfig) -> FatalClass {
    let mut blocked = 0u32;
    let mut visits: HashMap<((i32, i32, usize, i32), usize), u32> = HashMap::new();
    for s in trace {
        if s.action == ActionKind::MoveAhead && s.event == StepEvent::Collision {
            blocked += 1;
            if blocked >= cfg.collision_run {
                return FatalClass::Collision;
            }
        } else {
            blocked = 0;
        }
        if s.interact_other {
            return FatalClass::InteractOther;
        }
        let v = visits.entry((s.pose, s.shadow_index)).or_insert(0);
        *v += 1;
        if *v > cfg.wander_revisits {
            return FatalClass::Wander;
        }
        if s.skip_to_next {
            return FatalClass::SkipToNext;
        }
    }
    FatalClass::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub tracker_mode: TrackerMode,
    pub sr: f64,
    pub plwsr: f64,
    pub gc: f64,
    pub episode_count: usize,
}

impl AblationCell {
    pub fn from_results(mode: TrackerMode, results: &[EpisodeResult]) -> Result<Self, MetricError> {
        Ok(AblationCell {
            tracker_mode: mode,
            sr: success_rate(results)?,
            plwsr: mean_plwsr(results)?,
            gc: gc_of(results)?,
            episode_count: results.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeRate {
    pub tracker_mode: TrackerMode,
    pub task_type: TaskType,
    pub completed: usize,
    pub total: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FatalCount {
    pub tracker_mode: TrackerMode,
    pub counts: BTreeMap<FatalClass, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub cells: Vec<AblationCell>,
    pub per_type: Vec<TypeRate>,
    pub fatal: Vec<FatalCount>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Builds the grid, per-type completion rates and fatal-error counts from stored results.
pub fn build_report(results: &[EpisodeResult], warnings: Vec<String>) -> Result<Report, MetricError> {
    let mut by_mode: BTreeMap<usize, (TrackerMode, Vec<EpisodeResult>)> = BTreeMap::new();
    for r in results {
        by_mode.entry(r.mode as usize).or_insert_with(|| (r.mode, Vec::new())).1.push(r.clone());
    }
    let mut cells = Vec::new();
    let mut per_type = Vec::new();
    let mut fatal = Vec::new();
    for (mode, rs) in by_mode.values() {
        cells.push(AblationCell::from_results(*mode, rs)?);
        for ty in TaskType::ALL {
            let of: Vec<&EpisodeResult> = rs.iter().filter(|r| r.task_type == ty).collect();
            if of.is_empty() {
                continue;
            }
            let completed = of.iter().filter(|r| r.success).count();
            per_type.push(TypeRate {
                tracker_mode: *mode,
                task_type: ty,
                completed,
                total: of.len(),
                rate: completed as f64 / of.len() as f64,
            });
        }
        let mut counts: BTreeMap<FatalClass, usize> = FatalClass::ALL.iter().map(|&c| (c, 0)).collect();
        for r in rs.iter().filter(|r| !r.success) {
            *counts.entry(r.fatal_error).or_default() += 1;
        }
        fatal.push(FatalCount { tracker_mode: *mode, counts });
    }
    Ok(Report { format_version: FORMAT_VERSION, cells, per_type, fatal, warnings })
}

impl Report {
    pub fn cell(&self, mode: TrackerMode) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.tracker_mode == mode)
    }

    pub fn fatal_count(&self, mode: TrackerMode, class: FatalClass) -> usize {
        self.fatal
            .iter()
            .find(|f| f.tracker_mode == mode)
            .and_then(|f| f.counts.get(&class).copied())
            .unwrap_or(0)
    }

    /// Aligned plain-text rendering.
    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<10} {:>7} {:>7} {:>7} {:>8}", "mode", "SR", "PLWSR", "GC", "episodes").unwrap();
        for c in &self.cells {
            writeln!(
                s,
                "{:<10} {:>7.2} {:>7.2} {:>7.2} {:>8}",
                c.tracker_mode.name(),
                100.0 * c.sr,
                100.0 * c.plwsr,
                100.0 * c.gc,
                c.episode_count
            )
            .unwrap();
        }
        if !self.per_type.is_empty() {
            writeln!(s).unwrap();
            let modes: Vec<TrackerMode> = self.cells.iter().map(|c| c.tracker_mode).collect();
            write!(s, "{:<28}", "task type").unwrap();
            for m in &modes {
                write!(s, " {:>9}", m.name()).unwrap();
            }
            writeln!(s).unwrap();
            for ty in TaskType::ALL {
                if !self.per_type.iter().any(|t| t.task_type == ty) {
                    continue;
                }
                write!(s, "{:<28}", ty.name()).unwrap();
                for m in &modes {
                    match self.per_type.iter().find(|t| t.task_type == ty && t.tracker_mode == *m) {
                        Some(t) => write!(s, " {:>9.1}", 100.0 * t.rate).unwrap(),
                        None => write!(s, " {:>9}", "-").unwrap(),
                    }
                }
                writeln!(s).unwrap();
            }
        }
        if !self.fatal.is_empty() {
            writeln!(s).unwrap();
            write!(s, "{:<10}", "fatal").unwrap();
            for c in &FatalClass::ALL[..4] {
                write!(s, " {:>13}", format!("{c:?}")).unwrap();
            }
            writeln!(s).unwrap();
            for f in &self.fatal {
                write!(s, "{:<10}", f.tracker_mode.name()).unwrap();
                for c in &FatalClass::ALL[..4] {
                    write!(s, " {:>13}", f.counts.get(c).copied().unwrap_or(0)).unwrap();
                }
                writeln!(s).unwrap();
            }
        }
        for w in &self.warnings {
            writeln!(s, "warning: {w}").unwrap();
        }
        s
    }
}

/// Agent constructor per mode; `None` means no model is available for that mode.
pub type AgentFactory<'a> = dyn Fn(TrackerMode) -> Option<Box<dyn Agent>> + Sync + 'a;

/// Evaluates every mode on the same tasks. Modes whose models are missing are skipped with a
/// warning. Episodes run in parallel on the current rayon pool; results keep task order.
pub fn run_ablation(
    tasks: &[TaskSpec],
    modes: &[TrackerMode],
    make_agent: &AgentFactory,
    models: Models,
    base: &RunConfig,
    tax: &Taxonomy,
) -> Result<(Vec<(EpisodeResult, Vec<TraceStep>)>, Vec<String>), RunError> {
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for &mode in modes {
        if mode.needs_tagger() && models.tagger.is_none() {
            warnings.push(format!("skipped mode {}: no tagger model", mode.name()));
            continue;
        }
        if mode == TrackerMode::Binary && models.binary.is_none() {
            warnings.push(format!("skipped mode {}: no binary checker model", mode.name()));
            continue;
        }
        if make_agent(mode).is_none() {
            warnings.push(format!("skipped mode {}: no agent model", mode.name()));
            continue;
        }
        let mut cfg = base.clone();
        cfg.tracker.mode = mode;
        let eps: Vec<Result<Episode, RunError>> = tasks
            .par_iter()
            .map(|t| {
                let mut agent = make_agent(mode).expect("checked above");
                run_episode(t, agent.as_mut(), &cfg, models, tax, RunOptions::default())
            })
            .collect();
        for e in eps {
            let e = e?;
            out.push((e.result, e.trace));
        }
    }
    Ok((out, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn result(success: bool, met: u32, total: u32) -> EpisodeResult {
        EpisodeResult {
            format_version: FORMAT_VERSION,
            task_seed: 0,
            task_type: TaskType::PickPlace,
            mode: TrackerMode::Off,
            success,
            gc_met: met,
            gc_total: total,
            agent_len: 10,
            expert_len: 10,
            fatal_error: FatalClass::None,
            trace_ref: None,
            skipped: 0,
            filtered: 0,
            stopped: true,
        }
    }

    fn step(i: u32, action: ActionKind, event: StepEvent, pose: (i32, i32, usize, i32)) -> TraceStep {
        TraceStep {
            step: i,
            subtask_index: 0,
            shadow_index: 0,
            milestone: None,
            outcome: None,
            action,
            object: None,
            filtered: false,
            event,
            pose,
            target_iou: None,
            fed: 0..1,
            skip_to_next: false,
            interact_other: false,
        }
    }

    #[test]
    fn metric_arithmetic() {
        assert_eq!(plwsr(true, 20, 40).unwrap(), 0.5);
        assert_eq!(plwsr(true, 20, 12).unwrap(), 1.0);
        assert_eq!(plwsr(false, 20, 12).unwrap(), 0.0);
        assert!(plwsr(true, 0, 3).is_err());
        assert_eq!(gc_rate(&[(3, 3), (0, 3)]).unwrap(), 0.5);
        assert_eq!(gc_rate(&[(0, 2), (0, 1)]).unwrap(), 0.0);
        assert!(gc_rate(&[(0, 0)]).is_err());
        assert!(success_rate(&[]).is_err());
        let mut rs: Vec<EpisodeResult> = (0..10).map(|_| result(false, 0, 2)).collect();
        for r in rs.iter_mut().take(3) {
            *r = result(true, 2, 2);
        }
        assert_eq!(success_rate(&rs).unwrap(), 0.3);
    }

    #[test]
    fn mixed_fixture_matches_hand_count() {
        let flags = [true, false, true, true, false, false, true];
        let rs: Vec<EpisodeResult> = flags.iter().map(|&s| result(s, s as u32, 1)).collect();
        assert!((success_rate(&rs).unwrap() - 4.0 / 7.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn plwsr_never_exceeds_success(s: bool, e in 1u32..500, a in 1u32..500) {
            let p = plwsr(s, e, a).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!(p <= s as u8 as f64);
        }
    }

    #[test]
    fn blocked_run_is_collision() {
        let mut trace = vec![step(1, ActionKind::RotateLeft, StepEvent::None, (1, 1, 0, 0))];
        for i in 0..12 {
            trace.push(step(i + 2, ActionKind::MoveAhead, StepEvent::Collision, (1, 1, 0, 0)));
        }
        // Poses repeat too, but the collision run completes first (10 blocked moves vs 6 visits
        // of the same pose happening at the 6th step).
        let cfg = FatalConfig { collision_run: 10, wander_revisits: 20 };
        assert_eq!(classify_fatal(&trace, &cfg), FatalClass::Collision);
    }

    #[test]
    fn pose_cycle_is_wander() {
        let poses = [(1, 1, 0, 0), (1, 1, 1, 0), (1, 1, 2, 0), (1, 1, 3, 0)];
        let trace: Vec<TraceStep> = (0..24)
            .map(|i| step(i, ActionKind::RotateRight, StepEvent::None, poses[i as usize % 4]))
            .collect();
        assert_eq!(classify_fatal(&trace, &FatalConfig::default()), FatalClass::Wander);
        assert_eq!(classify_fatal(&trace[..20], &FatalConfig::default()), FatalClass::None);
    }

    #[test]
    fn first_match_wins() {
        let mut a = step(1, ActionKind::PickupObject, StepEvent::None, (2, 2, 0, 0));
        a.interact_other = true;
        let mut b = step(2, ActionKind::MoveAhead, StepEvent::None, (2, 3, 0, 0));
        b.skip_to_next = true;
        assert_eq!(classify_fatal(&[a.clone(), b.clone()], &FatalConfig::default()), FatalClass::InteractOther);
        assert_eq!(classify_fatal(&[b, a], &FatalConfig::default()), FatalClass::SkipToNext);
    }

    #[test]
    fn report_round_trips() {
        let mut rs = vec![result(true, 2, 2), result(false, 1, 2)];
        rs[1].mode = TrackerMode::Proactive;
        rs[1].fatal_error = FatalClass::Wander;
        let rep = build_report(&rs, vec!["w".into()]).unwrap();
        assert_eq!(rep.cells.len(), 2);
        assert_eq!(rep.fatal_count(TrackerMode::Proactive, FatalClass::Wander), 1);
        let back: Report = serde_json::from_str(&serde_json::to_string(&rep).unwrap()).unwrap();
        assert_eq!(back, rep);
        assert!(rep.table().contains("proactive"));
    }
}
