//! Symbolic features for the learned policy and its object selector.

use crate::grounding::{NodeId, Taxonomy};
use crate::perception::{apparent_bearing, apparent_distance, Detection};
use crate::tagger::tokenize;
use crate::tracker::binary::steps_bucket;
use crate::world::catalog::class_info;
use crate::world::generate::SEPARATOR;
use crate::world::{AgentPose, NUM_ACTIONS};

use super::{AgentMemory, TrackerHint};

const MATCH: f64 = 0.8;
const MENTION_BLOCK: usize = 12;
pub const FEATURE_DIM: usize = 2 * MENTION_BLOCK + 2 + 8 + 1 + NUM_ACTIONS + 1 + 4 + 5 + 4 + 5 + 3 + 1;
pub const SELECTOR_DIM: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bearing {
    Left,
    Ahead,
    Right,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceBucket {
    Near,
    InReach,
    Far,
    None,
}

pub fn bearing_bucket(d: Option<&Detection>) -> Bearing {
    match d.map(apparent_bearing) {
        None => Bearing::None,
        Some(r) if r < -0.1 => Bearing::Left,
        Some(r) if r > 0.1 => Bearing::Right,
        Some(_) => Bearing::Ahead,
    }
}

pub fn distance_bucket(d: Option<&Detection>) -> DistanceBucket {
    match d.map(apparent_distance) {
        None => DistanceBucket::None,
        Some(x) if x <= 2.5 => DistanceBucket::Near,
        Some(x) if x <= 6.0 => DistanceBucket::InReach,
        Some(_) => DistanceBucket::Far,
    }
}

/// Low-level part of a fed instruction (everything after the first separator).
pub fn low_level_part(instruction: &str) -> &str {
    instruction.split_once(SEPARATOR).map_or(instruction, |(_, rest)| rest)
}

/// Class mentions of the low-level part, in order.
pub fn instruction_mentions(tax: &Taxonomy, instruction: &str) -> Vec<NodeId> {
    tax.mentions(low_level_part(instruction)).into_iter().map(|(_, n)| n).collect()
}

fn similarity(tax: &Taxonomy, node: NodeId, d: &Detection) -> f64 {
    tax.node(&d.label).map_or(0.0, |l| tax.wup(node, l))
}

/// Best matching detection for `node`: reachable ones first, then by score.
fn best_for<'a>(tax: &Taxonomy, nodes: &[NodeId], dets: &'a [Detection]) -> Option<&'a Detection> {
    dets.iter()
        .filter(|d| nodes.iter().any(|&n| similarity(tax, n, d) >= MATCH))
        .max_by(|a, b| (a.reachable, a.score).partial_cmp(&(b.reachable, b.score)).unwrap())
}

fn push_onehot(f: &mut Vec<f64>, n: usize, i: Option<usize>) {
    let base = f.len();
    f.resize(base + n, 0.0);
    if let Some(i) = i {
        f[base + i.min(n - 1)] = 1.0;
    }
}

fn push_place(f: &mut Vec<f64>, d: Option<&Detection>) {
    push_onehot(f, 4, Some(bearing_bucket(d) as usize));
    push_onehot(f, 4, Some(distance_bucket(d) as usize));
}

const PICKUP_WORDS: &[&str] = &["pick", "take", "grab", "lift", "remove"];
const PUT_WORDS: &[&str] = &["put", "place", "set"];
const GOTO_WORDS: &[&str] = &["go", "walk", "head", "move"];

/// Verb cues of the low-level text: pickup, put, open, toggle, goto.
pub fn verb_cues(instruction: &str) -> [bool; 5] {
    let toks = tokenize(low_level_part(instruction));
    let has = |ws: &[&str]| toks.iter().any(|t| ws.contains(&t.as_str()));
    let toggle = has(&["switch"]) || (has(&["turn"]) && has(&["on"]));
    [has(PICKUP_WORDS), has(PUT_WORDS), has(&["open"]), toggle, has(GOTO_WORDS)]
}

/// Fixed-length policy input.
pub fn featurize(
    tax: &Taxonomy,
    detections: &[Detection],
    held: bool,
    instruction: &str,
    memory: &AgentMemory,
    hint: TrackerHint,
    pose: &AgentPose,
) -> Vec<f64> {
    let mentions = instruction_mentions(tax, instruction);
    let mut f = Vec::with_capacity(FEATURE_DIM);
    for j in 0..2 {
        match mentions.get(j) {
            None => {
                f.extend([0.0, 0.0, 0.0]);
                push_place(&mut f, None);
                f.push(0.0);
            }
            Some(&n) => {
                let sims: Vec<f64> = detections.iter().map(|d| similarity(tax, n, d)).collect();
                let visible = sims.iter().any(|&s| s >= MATCH);
                let reach = detections.iter().zip(&sims).any(|(d, &s)| d.reachable && s >= MATCH);
                f.extend([1.0, visible as u8 as f64, reach as u8 as f64]);
                push_place(&mut f, best_for(tax, &[n], detections));
                f.push(sims.iter().copied().fold(0.0, f64::max));
            }
        }
    }
    let per_det: Vec<f64> = detections
        .iter()
        .map(|d| mentions.iter().map(|&n| similarity(tax, n, d)).fold(0.0, f64::max))
        .collect();
    let max = per_det.iter().copied().fold(0.0, f64::max);
    let mean = if per_det.is_empty() { 0.0 } else { per_det.iter().sum::<f64>() / per_det.len() as f64 };
    f.extend([max, mean]);
    let reachable: Vec<Detection> = detections.iter().filter(|d| d.reachable).cloned().collect();
    push_place(&mut f, best_for(tax, &mentions, &reachable));
    f.push(held as u8 as f64);
    push_onehot(&mut f, NUM_ACTIONS, memory.last_action.map(|a| a.index()));
    f.push(memory.last_succeeded as u8 as f64);
    push_onehot(&mut f, 4, Some(hint.index()));
    push_onehot(&mut f, 5, Some(steps_bucket(memory.steps_in_subtask)));
    let revisit = match memory.revisits(pose) {
        0 | 1 => 0,
        2 => 1,
        3 | 4 => 2,
        _ => 3,
    };
    push_onehot(&mut f, 4, Some(revisit));
    f.extend(verb_cues(instruction).map(|b| b as u8 as f64));
    push_onehot(&mut f, 3, Some(memory.interactions.min(2) as usize));
    f.push(1.0);
    debug_assert_eq!(f.len(), FEATURE_DIM);
    f
}

/// Candidate features for choosing which reachable detection an interaction acts on.
pub fn selector_features(tax: &Taxonomy, mentions: &[NodeId], d: &Detection) -> Vec<f64> {
    let sim = |n: Option<&NodeId>| n.map_or(0.0, |&n| similarity(tax, n, d));
    let (s0, s1, sl) = (sim(mentions.first()), sim(mentions.get(1)), sim(mentions.last()));
    let smax = mentions.iter().map(|&n| similarity(tax, n, d)).fold(0.0, f64::max);
    let info = class_info(&d.label);
    let flag = |p: fn(&crate::world::catalog::ClassInfo) -> bool| info.is_some_and(p) as u8 as f64;
    let centered = (1.0 - apparent_bearing(d).abs()).max(0.0);
    vec![
        s0,
        s1,
        sl,
        smax,
        (s0 >= MATCH) as u8 as f64,
        (s1 >= MATCH) as u8 as f64,
        flag(|c| c.pickupable),
        flag(|c| c.openable),
        flag(|c| c.toggleable),
        flag(|c| c.receptacle),
        flag(|c| c.enclosing),
        flag(|c| c.furniture),
        d.score,
        centered,
        1.0,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::Mask;
    use crate::world::{Cell, Heading, ObjectId, Pitch};

    fn pose() -> AgentPose {
        AgentPose { cell: Cell::new(3, 3), heading: Heading::N, pitch: Pitch::Level }
    }

    #[test]
    fn no_detections_gives_sentinels() {
        let tax = Taxonomy::shipped();
        let f = featurize(tax, &[], false, "Goal. <SEP> Go to the sink.", &AgentMemory::default(), TrackerHint::Navigation, &pose());
        assert_eq!(f.len(), FEATURE_DIM);
        // First mention present but unseen: bearing and distance at the sentinel.
        assert_eq!(&f[0..3], &[1.0, 0.0, 0.0]);
        assert_eq!(f[3 + Bearing::None as usize], 1.0);
        assert_eq!(f[7 + DistanceBucket::None as usize], 1.0);
        assert_eq!(f[11], 0.0);
        assert_eq!(&f[24..26], &[0.0, 0.0]);
    }

    #[test]
    fn straight_ahead_at_two_cells_is_ahead_and_near() {
        // Forward 2, lateral 0: side 48/sqrt(3), centre x 32; score 1 - 0.1.
        let side = 48.0 / 3f64.sqrt();
        let x0 = (32.0 - side / 2.0_f64).round() as i64;
        let w = side.round() as i64;
        let d = Detection {
            label: "sinkbasin".into(),
            score: 0.9,
            mask: Mask::rect(x0, 20, x0 + w, 20 + w),
            reachable: true,
            source_id: ObjectId(0),
        };
        assert_eq!(bearing_bucket(Some(&d)), Bearing::Ahead);
        assert_eq!(distance_bucket(Some(&d)), DistanceBucket::Near);
    }

    #[test]
    fn featurize_is_pure() {
        let tax = Taxonomy::shipped();
        let d = Detection {
            label: "mug".into(),
            score: 0.8,
            mask: Mask::rect(40, 20, 50, 30),
            reachable: true,
            source_id: ObjectId(3),
        };
        let mut mem = AgentMemory::default();
        mem.visit(pose());
        let a = featurize(tax, std::slice::from_ref(&d), true, "G <SEP> Put the mug in the sink.", &mem, TrackerHint::Interaction, &pose());
        let b = featurize(tax, &[d], true, "G <SEP> Put the mug in the sink.", &mem, TrackerHint::Interaction, &pose());
        assert_eq!(a, b);
        assert_eq!(verb_cues("G <SEP> Turn on the lamp."), [false, false, false, true, false]);
        assert_eq!(verb_cues("G <SEP> Turn left and walk to the lamp."), [false, false, false, false, true]);
    }

    #[test]
    fn mentions_use_synonyms() {
        let tax = Taxonomy::shipped();
        let m = instruction_mentions(tax, "Put a mug away. <SEP> Go to the trash can next to the sink.");
        let names: Vec<&str> = m.iter().map(|&n| tax.name(n)).collect();
        assert_eq!(names, ["garbagecan", "sinkbasin"]);
    }
}
