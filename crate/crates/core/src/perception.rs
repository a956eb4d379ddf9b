//! Egocentric projection and a simulated noisy object detector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grounding::Taxonomy;
use crate::mask::{Mask, RASTER};
use crate::world::{in_frustum, local_coords, reachable, ObjectId, Pitch, WorldState};

/// One object projected into the raster, before detector noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub id: ObjectId,
    pub label: String,
    pub mask: Mask,
    /// Euclidean distance in cells.
    pub distance: f64,
    pub reachable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub score: f64,
    pub mask: Mask,
    pub reachable: bool,
    /// Ground-truth object; only oracles and tests may look at it.
    pub source_id: ObjectId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub miss_rate: f64,
    pub label_flip_rate: f64,
    pub reach_error_rate: f64,
    pub max_detections: usize,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { miss_rate: 0.05, label_flip_rate: 0.03, reach_error_rate: 0.05, max_detections: 20, seed: 0 }
    }
}

impl DetectorConfig {
    pub fn noiseless() -> Self {
        DetectorConfig { miss_rate: 0.0, label_flip_rate: 0.0, reach_error_rate: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, r) in [
            ("miss_rate", self.miss_rate),
            ("label_flip_rate", self.label_flip_rate),
            ("reach_error_rate", self.reach_error_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(format!("{name} = {r} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Square {
    cx: f64,
    cy: f64,
    side: f64,
}

impl Square {
    fn mask(&self) -> Mask {
        let x0 = (self.cx - self.side / 2.0).round() as i64;
        let y0 = (self.cy - self.side / 2.0).round() as i64;
        let w = (self.side.round() as i64).max(1);
        Mask::rect(x0, y0, x0 + w, y0 + w)
    }

    fn child(&self, slot: usize) -> Square {
        let q = self.side / 4.0;
        let (sx, sy) = match slot % 4 {
            0 => (-1.0, -1.0),
            1 => (1.0, -1.0),
            2 => (-1.0, 1.0),
            _ => (1.0, 1.0),
        };
        Square { cx: self.cx + sx * q, cy: self.cy + sy * q, side: self.side / 2.0 }
    }
}

fn pitch_shift(p: Pitch) -> f64 {
    match p {
        Pitch::Up => 8.0,
        Pitch::Level => 0.0,
        Pitch::Down => -8.0,
    }
}

/// Visible objects with their projected rectangles, ordered by object id.
///
/// Objects inside a closed container, and carried objects, are not drawn. Contents of a drawn
/// receptacle are drawn nested inside its rectangle at half the side per level.
pub fn render_view(state: &WorldState) -> Vec<Rendered> {
    let pose = &state.agent;
    let mut out = Vec::new();
    let mut stack: Vec<(ObjectId, Square)> = Vec::new();
    for o in &state.objects {
        if o.contained_in.is_some() || state.is_carried(o.id) || !in_frustum(pose, o.position) {
            continue;
        }
        let (f, lat) = local_coords(pose, o.position);
        let d = state.agent.cell.distance(o.position);
        let sq = Square {
            cx: RASTER as f64 / 2.0 + 28.0 * lat as f64 / f as f64,
            cy: 24.0 + 16.0 / f as f64 + pitch_shift(pose.pitch),
            side: 48.0 / (1.0 + d).sqrt(),
        };
        stack.push((o.id, sq));
    }
    while let Some((id, sq)) = stack.pop() {
        let o = state.object(id).expect("object exists");
        let mask = sq.mask();
        if mask.is_empty() {
            continue;
        }
        out.push(Rendered {
            id,
            label: o.class_label.clone(),
            mask,
            distance: state.agent.cell.distance(o.position),
            reachable: reachable(state, o),
        });
        if o.openable && !o.open {
            continue;
        }
        for (slot, child) in state.contents(id).into_iter().enumerate() {
            stack.push((child, sq.child(slot)));
        }
    }
    out.sort_by_key(|r| r.id);
    out
}

/// Applies miss / label-flip / reach noise per object (in id order), then keeps the top
/// `max_detections` by score.
pub fn detect<R: Rng>(view: &[Rendered], config: &DetectorConfig, tax: &Taxonomy, rng: &mut R) -> Vec<Detection> {
    let mut dets = Vec::with_capacity(view.len());
    for r in view {
        let missed = rng.gen::<f64>() < config.miss_rate;
        let flip = rng.gen::<f64>() < config.label_flip_rate;
        let sibling_pick: f64 = rng.gen();
        let reach_err = rng.gen::<f64>() < config.reach_error_rate;
        let jitter = rng.gen::<f64>() * 0.01;
        if missed {
            continue;
        }
        let mut label = r.label.clone();
        if flip {
            let sibs = tax.leaf_siblings(&r.label);
            if !sibs.is_empty() {
                let i = ((sibling_pick * sibs.len() as f64) as usize).min(sibs.len() - 1);
                label = sibs[i].to_string();
            }
        }
        let score = ((1.0 - 0.05 * r.distance).max(0.0) + jitter).min(1.0);
        dets.push(Detection { label, score, mask: r.mask.clone(), reachable: r.reachable ^ reach_err, source_id: r.id });
    }
    dets.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.source_id.cmp(&b.source_id)));
    dets.truncate(config.max_detections);
    dets
}

/// Distance in cells implied by a detection's score (scores fall 0.05 per cell).
pub fn apparent_distance(d: &Detection) -> f64 {
    ((1.0 - d.score) / 0.05).max(0.0)
}

/// Horizontal bearing as lateral/forward ratio, recovered from the mask centroid.
pub fn apparent_bearing(d: &Detection) -> f64 {
    (d.mask.centroid().0 + 0.5 - RASTER as f64 / 2.0) / 28.0
}

/// Detections for one step of an episode, drawn from the (seed, step) substream.
pub fn detect_step(state: &WorldState, config: &DetectorConfig, tax: &Taxonomy, episode_seed: u64, step: u64) -> Vec<Detection> {
    let mut rng = crate::rng::substream(config.seed, &[crate::rng::stream::DETECT, episode_seed, step]);
    detect(&render_view(state), config, tax, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::world::*;

    fn world(objects: Vec<ObjectInstance>) -> WorldState {
        WorldState {
            grid: Grid::walled(20, 20),
            objects,
            agent: AgentPose { cell: Cell::new(10, 10), heading: Heading::N, pitch: Pitch::Level },
            held: None,
            step_count: 0,
            stopped: false,
        }
    }

    #[test]
    fn closed_fridge_hides_contents() {
        let fridge = ObjectInstance::of_class(ObjectId(0), "fridge", Cell::new(10, 8));
        let mut apple = ObjectInstance::of_class(ObjectId(1), "apple", Cell::new(10, 8));
        apple.contained_in = Some(ObjectId(0));
        let mut w = world(vec![fridge, apple]);
        let ids: Vec<_> = render_view(&w).iter().map(|r| r.id).collect();
        assert_eq!(ids, vec![ObjectId(0)]);
        w.objects[0].open = true;
        let ids: Vec<_> = render_view(&w).iter().map(|r| r.id).collect();
        assert_eq!(ids, vec![ObjectId(0), ObjectId(1)]);
    }

    #[test]
    fn facing_cell_projects_to_center() {
        // d = 1: side 48/sqrt(2) = 33.94, center (32, 24 + 16) -> x 15.03..48.97, y 23.03..56.97.
        let w = world(vec![ObjectInstance::of_class(ObjectId(0), "mug", Cell::new(10, 9))]);
        let v = render_view(&w);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].mask.bbox(), Some([15, 23, 49, 57]));
        assert!(v[0].mask.contains(32, 40));
        assert!(v[0].reachable);
    }

    #[test]
    fn empty_frustum_renders_nothing() {
        let w = world(vec![ObjectInstance::of_class(ObjectId(0), "mug", Cell::new(10, 12))]);
        assert!(render_view(&w).is_empty());
    }

    fn five_objects() -> WorldState {
        let cells = [(10, 8), (9, 7), (11, 7), (10, 6), (12, 6)];
        world(
            cells
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| ObjectInstance::of_class(ObjectId(i as u32), "mug", Cell::new(x, y)))
                .collect(),
        )
    }

    #[test]
    fn noiseless_mirrors_ground_truth() {
        let w = five_objects();
        let tax = Taxonomy::shipped();
        let v = render_view(&w);
        let dets = detect(&v, &DetectorConfig::noiseless(), tax, &mut substream(1, &[]));
        assert_eq!(dets.len(), 5);
        for d in dets {
            let o = w.object(d.source_id).unwrap();
            assert_eq!(d.label, o.class_label);
            assert_eq!(d.reachable, reachable(&w, o));
        }
    }

    #[test]
    fn full_miss_rate_drops_everything() {
        let cfg = DetectorConfig { miss_rate: 1.0, ..DetectorConfig::noiseless() };
        let v = render_view(&five_objects());
        assert!(detect(&v, &cfg, Taxonomy::shipped(), &mut substream(1, &[])).is_empty());
    }

    #[test]
    fn miss_rate_binomial_mean() {
        let cfg = DetectorConfig { miss_rate: 0.2, ..DetectorConfig::noiseless() };
        let v = render_view(&five_objects());
        let tax = Taxonomy::shipped();
        let mut rng = substream(2, &[]);
        let total: usize = (0..10_000).map(|_| detect(&v, &cfg, tax, &mut rng).len()).sum();
        let mean = total as f64 / 10_000.0;
        assert!((mean - 4.0).abs() <= 0.1, "mean {mean}");
    }

    #[test]
    fn detect_is_deterministic() {
        let w = five_objects();
        let tax = Taxonomy::shipped();
        let cfg = DetectorConfig { seed: 9, ..Default::default() };
        assert_eq!(detect_step(&w, &cfg, tax, 3, 4), detect_step(&w, &cfg, tax, 3, 4));
    }
}
