//! Seeded task generation: room layout, object placement, expert plan and instructions.

use std::collections::{BTreeSet, VecDeque};
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::catalog::{self, placement_preposition};
use super::goal::{evaluate_goal, GoalCondition};
use super::planner::{plan_expert, replay, ExpertAction, PlanError, Subtask, SubtaskKind};
use super::templates::{self, Fill, Sentence};
use super::types::*;
use crate::grounding::Taxonomy;
use crate::milestone::{Milestone, MilestoneKind};
use crate::tagger::{extract_milestones, Tag, TagSeq};

pub const FORMAT_VERSION: u32 = 1;
pub const SEPARATOR: &str = " <SEP> ";
pub const ROOM_TEMPLATES: usize = 8;
pub const SEEN_ROOMS: [usize; 6] = [0, 1, 2, 3, 4, 5];
pub const UNSEEN_ROOMS: [usize; 2] = [6, 7];
/// Seeds of the unseen split start here, so the two splits never share a seed.
pub const UNSEEN_SEED_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskType {
    #[serde(rename = "Pick&Place")]
    PickPlace,
    #[serde(rename = "Stack&Place")]
    StackPlace,
    #[serde(rename = "PlaceTwo")]
    PlaceTwo,
    #[serde(rename = "Examine")]
    Examine,
    #[serde(rename = "Heat&Place")]
    HeatPlace,
    #[serde(rename = "Cool&Place")]
    CoolPlace,
    #[serde(rename = "Clean&Place")]
    CleanPlace,
}

impl TaskType {
    pub const ALL: [TaskType; 7] = [
        TaskType::PickPlace,
        TaskType::StackPlace,
        TaskType::PlaceTwo,
        TaskType::Examine,
        TaskType::HeatPlace,
        TaskType::CoolPlace,
        TaskType::CleanPlace,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskType::PickPlace => "Pick&Place",
            TaskType::StackPlace => "Stack&Place",
            TaskType::PlaceTwo => "PlaceTwo",
            TaskType::Examine => "Examine",
            TaskType::HeatPlace => "Heat&Place",
            TaskType::CoolPlace => "Cool&Place",
            TaskType::CleanPlace => "Clean&Place",
        }
    }

    pub fn parse(s: &str) -> Option<TaskType> {
        TaskType::ALL.into_iter().find(|t| t.name().eq_ignore_ascii_case(s))
    }
}

impl std::fmt::Display for TaskType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    pub grid_w: i32,
    pub grid_h: i32,
    /// Room template ids allowed for this split.
    pub rooms: Vec<usize>,
    /// Small-object classes that may appear; empty means all.
    #[serde(default)]
    pub object_pool: Vec<String>,
    /// Probability of a distractor clause in each instruction.
    pub template_noise: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig { grid_w: 14, grid_h: 14, rooms: SEEN_ROOMS.to_vec(), object_pool: Vec::new(), template_noise: 0.2 }
    }
}

impl LayoutConfig {
    pub fn unseen() -> Self {
        LayoutConfig { rooms: UNSEEN_ROOMS.to_vec(), ..Default::default() }
    }
}

/// Everything downstream needs about one subtask besides its sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskRecord {
    #[serde(flatten)]
    pub subtask: Subtask,
    /// Planner action tuples, e.g. ("GotoLocation", "fridge").
    pub tuple: Vec<(String, String)>,
    /// Objects named by the gold targets, in target order.
    pub target_ids: Vec<ObjectId>,
    pub expert: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub format_version: u32,
    pub seed: u64,
    pub task_type: TaskType,
    /// Initial world.
    pub world: WorldState,
    pub high_level: String,
    pub low_level: Vec<String>,
    pub gold_tags: Vec<TagSeq>,
    pub gold_milestones: Vec<Vec<Milestone>>,
    pub expert_actions: Vec<ExpertAction>,
    pub goal: Vec<GoalCondition>,
    pub subtasks: Vec<SubtaskRecord>,
}

impl TaskSpec {
    /// Expert path length, including the final Stop.
    pub fn expert_len(&self) -> usize {
        self.expert_actions.len()
    }

    pub fn whole_instruction(&self) -> String {
        let mut s = self.high_level.clone();
        for l in &self.low_level {
            s.push_str(SEPARATOR);
            s.push_str(l);
        }
        s
    }

    /// Structural checks run after loading a dataset line.
    pub fn validate(&self) -> Result<(), String> {
        if self.format_version != FORMAT_VERSION {
            return Err(format!("unsupported task format version {}", self.format_version));
        }
        let n = self.low_level.len();
        if self.gold_milestones.len() != n || self.gold_tags.len() != n || self.subtasks.len() != n {
            return Err("per-subtask lists disagree in length".into());
        }
        if self.gold_tags.iter().any(|t| !t.is_valid()) {
            return Err("gold tags are not BIO-valid".into());
        }
        self.world.check_invariants()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenerateError {
    #[error("no valid layout for seed {seed} after {attempts} attempts")]
    Rejected { seed: u64, attempts: usize },
    #[error("bad layout config: {0}")]
    Config(String),
}

const SOURCES: &[&str] = &[
    "countertop", "diningtable", "desk", "sidetable", "coffeetable", "shelf", "dresser", "cabinet", "drawer",
    "sofa", "armchair", "bed", "fridge",
];
const PLACES: &[&str] = &[
    "countertop", "diningtable", "desk", "sidetable", "coffeetable", "shelf", "dresser", "sofa", "armchair", "bed",
    "garbagecan",
];
const SURFACES: &[&str] = &["countertop", "diningtable", "desk", "sidetable", "coffeetable", "shelf", "dresser"];
const STACK_CONTAINERS: &[&str] = &["bowl", "plate", "pot", "pan", "mug", "cup"];
const HEATABLE: &[&str] = &["potato", "apple", "tomato", "bread", "egg", "mug", "cup"];
const COOLABLE: &[&str] = &["potato", "apple", "tomato", "lettuce", "bread", "egg", "winebottle", "mug", "cup"];
const CLEANABLE: &[&str] = &[
    "mug", "cup", "bowl", "plate", "pan", "pot", "fork", "knife", "butterknife", "spoon", "spatula", "ladle", "apple",
    "potato", "tomato", "lettuce",
];
const EXAMINABLE: &[&str] = &[
    "book", "cellphone", "alarmclock", "cd", "creditcard", "keychain", "watch", "pen", "pencil", "remotecontrol",
    "newspaper", "vase", "statue", "candle",
];
const DISTRACTOR_FURNITURE: &[&str] = &[
    "countertop", "diningtable", "desk", "sidetable", "coffeetable", "shelf", "dresser", "cabinet", "drawer", "sofa",
    "armchair", "bed", "fridge", "microwave", "stoveburner", "sinkbasin", "garbagecan", "floorlamp",
];
const MAX_ATTEMPTS: usize = 400;

/// Walled room for template `id` (interior shapes differ per template).
pub fn room_grid(id: usize) -> Grid {
    let (w, h) = match id {
        0 => (10, 10),
        1 => (12, 9),
        2 => (9, 12),
        3 => (11, 11),
        4 => (12, 10),
        5 => (10, 11),
        6 => (12, 12),
        _ => (12, 10),
    };
    let mut g = Grid::walled(w + 2, h + 2);
    let mut wall = |x: i32, y: i32| g.set(Cell::new(x, y), CellKind::Wall);
    match id {
        3 => {
            for (x, y) in [(5, 5), (6, 5), (5, 6), (6, 6)] {
                wall(x, y);
            }
        }
        4 => {
            for y in 1..5 {
                wall(7, y);
            }
        }
        6 => {
            // L-shape: the top-right quadrant is solid.
            for x in 8..=12 {
                for y in 1..=5 {
                    wall(x, y);
                }
            }
        }
        7 => {
            for y in 1..4 {
                wall(4, y);
            }
            for y in 8..=10 {
                wall(9, y);
            }
        }
        _ => {}
    }
    g
}

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    grid: Grid,
    objects: Vec<ObjectInstance>,
    free_perimeter: Vec<Cell>,
}

impl Builder<'_> {
    fn next_id(&self) -> ObjectId {
        ObjectId(self.objects.len() as u32)
    }

    fn walkable(&self, c: Cell) -> bool {
        !self.grid.is_wall(c) && !self.objects.iter().any(|o| o.obstacle && o.position == c)
    }

    fn free_connected(&self) -> bool {
        let free: Vec<Cell> = self.grid.cells().filter(|&c| self.walkable(c)).collect();
        let Some(&start) = free.first() else { return false };
        let mut seen = BTreeSet::from([start]);
        let mut q = VecDeque::from([start]);
        while let Some(c) = q.pop_front() {
            for (dx, dy) in [(0, -1), (1, 0), (0, 1), (-1, 0)] {
                let n = c.offset(dx, dy);
                if self.walkable(n) && seen.insert(n) {
                    q.push_back(n);
                }
            }
        }
        seen.len() == free.len()
    }

    fn place_furniture(&mut self, class: &str) -> Option<ObjectId> {
        let mut cells = self.free_perimeter.clone();
        cells.shuffle(self.rng);
        for c in cells {
            if !self.walkable(c) {
                continue;
            }
            let id = self.next_id();
            self.objects.push(ObjectInstance::of_class(id, class, c));
            let has_access = [(0, -1), (1, 0), (0, 1), (-1, 0)].iter().any(|&(dx, dy)| self.walkable(c.offset(dx, dy)));
            if has_access && self.free_connected() {
                self.free_perimeter.retain(|&p| p != c);
                if class == "sinkbasin" {
                    let f = self.next_id();
                    let mut faucet = ObjectInstance::of_class(f, "faucet", c);
                    faucet.contained_in = Some(id);
                    self.objects.push(faucet);
                }
                return Some(id);
            }
            self.objects.pop();
        }
        None
    }

    fn small_count(&self, holder: ObjectId) -> usize {
        self.objects.iter().filter(|o| o.contained_in == Some(holder) && o.pickupable).count()
    }

    fn place_small(&mut self, class: &str, holder: ObjectId) -> ObjectId {
        let id = self.next_id();
        let pos = self.objects[holder.0 as usize].position;
        let mut o = ObjectInstance::of_class(id, class, pos);
        o.contained_in = Some(holder);
        if self.objects[holder.0 as usize].class_label == "fridge" {
            o.temperature = Temperature::Cold;
        }
        self.objects.push(o);
        id
    }
}

fn pick<'a, R: Rng>(rng: &mut R, options: &[&'a str], exclude: &[&str]) -> Option<&'a str> {
    let v: Vec<&str> = options.iter().copied().filter(|o| !exclude.contains(o)).collect();
    v.choose(rng).copied()
}

/// Roles of a sampled task: which objects play which part.
struct Roles {
    subtasks: Vec<Subtask>,
    goal: Vec<GoalCondition>,
    high_level: String,
}

fn surface<R: Rng>(rng: &mut R, tax: &Taxonomy, class: &str) -> String {
    let forms = tax.node(class).map(|n| tax.surface_forms(n)).unwrap_or(&[]);
    forms.choose(rng).cloned().unwrap_or_else(|| class.to_string())
}

fn high_level_text<R: Rng>(rng: &mut R, tax: &Taxonomy, tt: TaskType, x: &str, r: &str, c: Option<&str>) -> String {
    let (xs, rs) = (surface(rng, tax, x), surface(rng, tax, r));
    let p = placement_preposition(r);
    let options: Vec<String> = match tt {
        TaskType::PickPlace => vec![format!("Put a {xs} {p} the {rs}."), format!("Move the {xs} to the {rs}.")],
        TaskType::PlaceTwo => {
            vec![format!("Put two {xs} items {p} the {rs}."), format!("Place a pair of {xs} items {p} the {rs}.")]
        }
        TaskType::StackPlace => {
            let cs = surface(rng, tax, c.unwrap_or("bowl"));
            vec![
                format!("Put a {xs} in a {cs} and set it {p} the {rs}."),
                format!("Move the {cs} holding a {xs} to the {rs}."),
            ]
        }
        TaskType::Examine => vec![format!("Examine the {xs} by the light of the {rs}."), format!("Look at a {xs} under the {rs}.")],
        TaskType::HeatPlace => vec![format!("Heat a {xs} and put it {p} the {rs}."), format!("Put a warm {xs} {p} the {rs}.")],
        TaskType::CoolPlace => vec![format!("Chill a {xs} and put it {p} the {rs}."), format!("Put a cold {xs} {p} the {rs}.")],
        TaskType::CleanPlace => vec![format!("Rinse a {xs} and put it {p} the {rs}."), format!("Put a clean {xs} {p} the {rs}.")],
    };
    options.choose(rng).unwrap().clone()
}

fn sample_roles(b: &mut Builder, tt: TaskType, pool: &[&str], tax: &Taxonomy) -> Option<Roles> {
    let small = |b: &mut Builder, allowed: &[&str], exclude: &[&str]| -> Option<String> {
        let v: Vec<&str> = allowed.iter().copied().filter(|c| pool.contains(c) && !exclude.contains(c)).collect();
        v.choose(b.rng).map(|s| s.to_string())
    };
    let non_receptacle: Vec<&str> = pool
        .iter()
        .copied()
        .filter(|c| catalog::class_info(c).is_some_and(|i| !i.receptacle && i.pickupable))
        .collect();
    let st = |k, t| Subtask::new(k, t);
    let put = |t: ObjectId, held: ObjectId| Subtask { context: Some(held), ..Subtask::new(SubtaskKind::Put, t) };
    let pickup = |b: &Builder, x: ObjectId, src: ObjectId| {
        let s = &b.objects[src.0 as usize];
        if s.openable && !s.open {
            Subtask { source: Some(src), ..Subtask::new(SubtaskKind::Pickup, x) }
        } else {
            Subtask { context: Some(src), ..Subtask::new(SubtaskKind::Pickup, x) }
        }
    };
    let mut used_furniture: Vec<&str> = Vec::new();
    let furniture = |b: &mut Builder, options: &[&str], exclude: &[&str], used: &mut Vec<&'static str>| -> Option<ObjectId> {
        let mut ex: Vec<&str> = exclude.to_vec();
        ex.extend(used.iter().copied());
        let class = pick(b.rng, options, &ex)?;
        let class: &'static str = catalog::class_info(class)?.name;
        used.push(class);
        b.place_furniture(class)
    };
    let (subtasks, goal, x_class, r_class, c_class) = match tt {
        TaskType::PickPlace | TaskType::HeatPlace | TaskType::CoolPlace | TaskType::CleanPlace | TaskType::Examine => {
            let (xs, appliance): (&[&str], Option<&str>) = match tt {
                TaskType::HeatPlace => (HEATABLE, Some("microwave")),
                TaskType::CoolPlace => (COOLABLE, Some("fridge")),
                TaskType::CleanPlace => (CLEANABLE, Some("sinkbasin")),
                TaskType::Examine => (EXAMINABLE, Some("floorlamp")),
                _ => (&non_receptacle[..], None),
            };
            let x_class = small(b, xs, &[])?;
            let a = furniture(b, SOURCES, &appliance.into_iter().collect::<Vec<_>>(), &mut used_furniture)?;
            let m = match appliance {
                Some(app) => {
                    let app: &'static str = catalog::class_info(app)?.name;
                    used_furniture.push(app);
                    Some(b.place_furniture(app)?)
                }
                None => None,
            };
            let r = if tt == TaskType::Examine { m } else { Some(furniture(b, PLACES, &[], &mut used_furniture)?) };
            let x = b.place_small(&x_class, a);
            if tt == TaskType::CleanPlace {
                b.objects[x.0 as usize].clean = false;
            }
            let mut subs = vec![st(SubtaskKind::Goto, a), pickup(b, x, a)];
            let r = r.unwrap();
            let r_class = b.objects[r.0 as usize].class_label.clone();
            let goal = match tt {
                TaskType::PickPlace => vec![GoalCondition::at(&x_class, &r_class)],
                TaskType::Examine => vec![GoalCondition::Examined { object: x_class.clone() }],
                _ => {
                    let state = match tt {
                        TaskType::HeatPlace => GoalCondition::Heated { object: x_class.clone() },
                        TaskType::CoolPlace => GoalCondition::Cooled { object: x_class.clone() },
                        _ => GoalCondition::Cleaned { object: x_class.clone() },
                    };
                    let at = GoalCondition::at(&x_class, &r_class);
                    vec![state.clone(), at.clone(), GoalCondition::Composite { all: vec![state, at] }]
                }
            };
            if let Some(m) = m {
                subs.push(st(SubtaskKind::Goto, m));
                match tt {
                    TaskType::HeatPlace => {
                        subs.push(st(SubtaskKind::Open, m));
                        subs.push(put(m, x));
                        subs.push(st(SubtaskKind::ToggleOn, m));
                        subs.push(Subtask { context: Some(m), ..st(SubtaskKind::Pickup, x) });
                    }
                    TaskType::CoolPlace => {
                        subs.push(st(SubtaskKind::Open, m));
                        subs.push(put(m, x));
                        subs.push(Subtask { context: Some(m), ..st(SubtaskKind::Pickup, x) });
                    }
                    TaskType::CleanPlace => {
                        let faucet = ObjectId(m.0 + 1);
                        subs.push(put(m, x));
                        subs.push(st(SubtaskKind::ToggleOn, faucet));
                        subs.push(Subtask { context: Some(m), ..st(SubtaskKind::Pickup, x) });
                    }
                    _ => subs.push(st(SubtaskKind::ToggleOn, m)),
                }
            }
            if tt != TaskType::Examine {
                subs.push(st(SubtaskKind::Goto, r));
                subs.push(put(r, x));
            }
            (subs, goal, x_class, r_class, None)
        }
        TaskType::PlaceTwo => {
            let x_class = small(b, &non_receptacle, &[])?;
            let a1 = furniture(b, SOURCES, &[], &mut used_furniture)?;
            let a2 = furniture(b, SOURCES, &[], &mut used_furniture)?;
            let r = furniture(b, PLACES, &[], &mut used_furniture)?;
            let x1 = b.place_small(&x_class, a1);
            let x2 = b.place_small(&x_class, a2);
            let r_class = b.objects[r.0 as usize].class_label.clone();
            let subs = vec![
                st(SubtaskKind::Goto, a1),
                pickup(b, x1, a1),
                st(SubtaskKind::Goto, r),
                put(r, x1),
                st(SubtaskKind::Goto, a2),
                pickup(b, x2, a2),
                st(SubtaskKind::Goto, r),
                put(r, x2),
            ];
            let goal = vec![
                GoalCondition::At { object: x_class.clone(), receptacle: r_class.clone(), count: 1 },
                GoalCondition::At { object: x_class.clone(), receptacle: r_class.clone(), count: 2 },
            ];
            (subs, goal, x_class, r_class, None)
        }
        TaskType::StackPlace => {
            let c_class = small(b, STACK_CONTAINERS, &[])?;
            let x_class = small(b, &non_receptacle, &[])?;
            let a = furniture(b, SOURCES, &[], &mut used_furniture)?;
            let bb = furniture(b, SURFACES, &[], &mut used_furniture)?;
            let r = furniture(b, PLACES, &[], &mut used_furniture)?;
            let x = b.place_small(&x_class, a);
            let c = b.place_small(&c_class, bb);
            let r_class = b.objects[r.0 as usize].class_label.clone();
            let subs = vec![
                st(SubtaskKind::Goto, a),
                pickup(b, x, a),
                st(SubtaskKind::Goto, bb),
                put(c, x),
                Subtask { context: Some(bb), ..st(SubtaskKind::Pickup, c) },
                st(SubtaskKind::Goto, r),
                put(r, c),
            ];
            let at_xc = GoalCondition::at(&x_class, &c_class);
            let at_cr = GoalCondition::at(&c_class, &r_class);
            let goal = vec![at_xc.clone(), at_cr.clone(), GoalCondition::Composite { all: vec![at_xc, at_cr] }];
            (subs, goal, x_class, r_class, Some(c_class))
        }
    };
    // Distractor furniture, then distractor small objects with unique classes.
    let extra = b.rng.gen_range(1..=3);
    for _ in 0..extra {
        let _ = furniture(b, DISTRACTOR_FURNITURE, &[], &mut used_furniture);
    }
    let mut used_small: Vec<String> = b.objects.iter().filter(|o| o.pickupable).map(|o| o.class_label.clone()).collect();
    let n_small = b.rng.gen_range(2..=4);
    for _ in 0..n_small {
        let exclude: Vec<&str> = used_small.iter().map(|s| s.as_str()).collect();
        let Some(class) = small(b, pool, &exclude) else { break };
        let holders: Vec<ObjectId> = b
            .objects
            .iter()
            .filter(|o| o.obstacle && o.receptacle && b.small_count(o.id) < 2)
            .map(|o| o.id)
            .collect();
        let Some(&h) = holders.choose(b.rng) else { break };
        b.place_small(&class, h);
        used_small.push(class);
    }
    if b.objects.iter().filter(|o| o.obstacle).any(|f| b.small_count(f.id) > 2) {
        return None;
    }
    let high_level = high_level_text(b.rng, tax, tt, &x_class, &r_class, c_class.as_deref());
    Some(Roles { subtasks, goal, high_level })
}

fn class_of(world: &WorldState, id: ObjectId) -> &str {
    &world.object(id).expect("object exists").class_label
}

fn tuple_of(world: &WorldState, st: &Subtask) -> Vec<(String, String)> {
    let c = |id| class_of(world, id).to_string();
    match st.kind {
        SubtaskKind::Goto => vec![("GotoLocation".into(), c(st.target))],
        SubtaskKind::Pickup => {
            let mut v = Vec::new();
            if let Some(s) = st.source {
                v.push(("OpenObject".into(), c(s)));
            }
            v.push(("PickupObject".into(), c(st.target)));
            v
        }
        SubtaskKind::Put => vec![("PutObject".into(), c(st.target))],
        SubtaskKind::Open => vec![("OpenObject".into(), c(st.target))],
        SubtaskKind::ToggleOn => vec![("ToggleObject".into(), c(st.target))],
    }
}

/// Renders one subtask sentence; returns it with the object ids of its tagged targets in order.
fn render_subtask(
    rng: &mut ChaCha8Rng,
    tax: &Taxonomy,
    world: &WorldState,
    st: &Subtask,
    noise: f64,
) -> (Sentence, Vec<ObjectId>) {
    let phrase = |rng: &mut ChaCha8Rng, id: ObjectId| surface(rng, tax, class_of(world, id));
    let target = phrase(rng, st.target);
    let mut named: Vec<&str> = vec![class_of(world, st.target)];
    named.extend(st.source.iter().chain(st.context.iter()).map(|&i| class_of(world, i)));
    let others: Vec<&ObjectInstance> =
        world.objects.iter().filter(|o| !named.contains(&o.class_label.as_str()) && o.class_label != "faucet").collect();
    let distractor = others.choose(rng).map(|o| surface(rng, tax, &o.class_label));
    let mut fill = Fill { target, ..Default::default() };
    let int = MilestoneKind::Interaction;
    let (list, kind): (&[&str], MilestoneKind) = match st.kind {
        SubtaskKind::Goto => (templates::GOTO, MilestoneKind::Navigation),
        SubtaskKind::Pickup => match (st.source, st.context) {
            (Some(src), _) => {
                fill.second = Some(phrase(rng, src));
                (templates::PICKUP_CLOSED, int)
            }
            (None, Some(ctx)) => {
                fill.source = Some(phrase(rng, ctx));
                (templates::PICKUP, int)
            }
            (None, None) => (&templates::PICKUP[..2], int),
        },
        SubtaskKind::Put => {
            fill.held = Some(phrase(rng, st.context.expect("put names the carried object")));
            fill.preposition = Some(placement_preposition(class_of(world, st.target)).to_string());
            (templates::PUT, int)
        }
        SubtaskKind::Open => (templates::OPEN, int),
        SubtaskKind::ToggleOn => (templates::TOGGLE_ON, int),
    };
    let sentence = templates::render_random(rng, list, fill.clone(), kind, noise, distractor.as_deref());
    // Map tagged spans back to objects: the target phrase first unless the template names {S} earlier.
    let mut ids = Vec::new();
    let spans = crate::tagger::spans(&sentence.gold.tags);
    let target_tokens: Vec<String> = crate::tagger::tokenize(&fill.target);
    for (_, s, e) in spans {
        if sentence.gold.tokens[s..e] == target_tokens[..] && !ids.contains(&st.target) {
            ids.push(st.target);
        } else if let Some(src) = st.source {
            ids.push(src);
        }
    }
    (sentence, ids)
}

/// Samples a world and task for `seed`; the same inputs always give the same pair.
pub fn generate_task(
    seed: u64,
    task_type: TaskType,
    layout: &LayoutConfig,
    tax: &Taxonomy,
) -> Result<(WorldState, TaskSpec), GenerateError> {
    if layout.rooms.is_empty() || layout.rooms.iter().any(|&r| r >= ROOM_TEMPLATES) {
        return Err(GenerateError::Config("rooms must name templates 0..8".into()));
    }
    if !(0.0..=1.0).contains(&layout.template_noise) {
        return Err(GenerateError::Config("template_noise outside [0, 1]".into()));
    }
    let pool: Vec<&str> = if layout.object_pool.is_empty() {
        catalog::small_classes().map(|c| c.name).collect()
    } else {
        layout.object_pool.iter().map(|s| s.as_str()).collect()
    };
    let mut rng = crate::rng::substream(seed, &[crate::rng::stream::GENERATE, task_type as u64]);
    for _ in 0..MAX_ATTEMPTS {
        let room = *layout.rooms.choose(&mut rng).unwrap();
        let grid = room_grid(room);
        if grid.width() > layout.grid_w || grid.height() > layout.grid_h {
            return Err(GenerateError::Config(format!("room {room} exceeds {}x{}", layout.grid_w, layout.grid_h)));
        }
        let free_perimeter: Vec<Cell> = grid
            .cells()
            .filter(|&c| {
                !grid.is_wall(c) && [(0, -1), (1, 0), (0, 1), (-1, 0)].iter().any(|&(dx, dy)| grid.is_wall(c.offset(dx, dy)))
            })
            .collect();
        let mut b = Builder { rng: &mut rng, grid, objects: Vec::new(), free_perimeter };
        let Some(roles) = sample_roles(&mut b, task_type, &pool, tax) else { continue };
        let Builder { grid, objects, .. } = b;
        let free: Vec<Cell> = grid
            .cells()
            .filter(|&c| !grid.is_wall(c) && !objects.iter().any(|o| o.obstacle && o.position == c))
            .collect();
        let cell = *free.choose(&mut rng).unwrap();
        let heading = *Heading::ALL.choose(&mut rng).unwrap();
        let world = WorldState {
            grid,
            objects,
            agent: AgentPose { cell, heading, pitch: Pitch::Level },
            held: None,
            step_count: 0,
            stopped: false,
        };
        if world.check_invariants().is_err() {
            continue;
        }
        let plan = match plan_expert(&world, &roles.subtasks) {
            Ok(p) => p,
            Err(PlanError::Unreachable(_) | PlanError::TooLong { .. } | PlanError::ActionFailed(_)) => continue,
            Err(PlanError::GoalUnmet(..)) => continue,
        };
        let Ok(states) = replay(&world, &plan.actions) else { continue };
        let (met, total) = evaluate_goal(states.last().unwrap(), &roles.goal);
        if met != total || evaluate_goal(&world, &roles.goal).0 == total {
            continue;
        }
        let mut low_level = Vec::new();
        let mut gold_tags = Vec::new();
        let mut gold_milestones = Vec::new();
        let mut subtasks = Vec::new();
        for (st, range) in roles.subtasks.iter().zip(&plan.segments) {
            let (sentence, target_ids) = render_subtask(&mut rng, tax, &world, st, layout.template_noise);
            gold_milestones.push(extract_milestones(&sentence.gold));
            low_level.push(sentence.text);
            gold_tags.push(sentence.gold);
            subtasks.push(SubtaskRecord {
                subtask: st.clone(),
                tuple: tuple_of(&world, st),
                target_ids,
                expert: range.clone(),
            });
        }
        let spec = TaskSpec {
            format_version: FORMAT_VERSION,
            seed,
            task_type,
            world: world.clone(),
            high_level: roles.high_level,
            low_level,
            gold_tags,
            gold_milestones,
            expert_actions: plan.actions,
            goal: roles.goal,
            subtasks,
        };
        return Ok((world, spec));
    }
    Err(GenerateError::Rejected { seed, attempts: MAX_ATTEMPTS })
}

/// Seed of the `i`-th task in a split.
pub fn split_seed(unseen: bool, base: u64, i: u64) -> u64 {
    let s = base.wrapping_add(i) % UNSEEN_SEED_BASE;
    if unseen { UNSEEN_SEED_BASE + s } else { s }
}

/// Gold tag sequence of every low-level instruction, flattened (tagger corpus).
pub fn tag_corpus(tasks: &[TaskSpec]) -> Vec<TagSeq> {
    tasks.iter().flat_map(|t| t.gold_tags.iter().cloned()).collect()
}

/// True when every tag in `seq` is O.
pub fn all_outside(seq: &TagSeq) -> bool {
    seq.tags.iter().all(|&t| t == Tag::O)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::planner::replay;

    #[test]
    fn generation_is_deterministic() {
        let tax = Taxonomy::shipped();
        let a = generate_task(7, TaskType::PickPlace, &LayoutConfig::default(), tax).unwrap();
        let b = generate_task(7, TaskType::PickPlace, &LayoutConfig::default(), tax).unwrap();
        assert_eq!(a, b);
        let c = generate_task(8, TaskType::PickPlace, &LayoutConfig::default(), tax).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn every_type_replays_to_success() {
        let tax = Taxonomy::shipped();
        for tt in TaskType::ALL {
            for seed in 0..6 {
                for layout in [LayoutConfig::default(), LayoutConfig::unseen()] {
                    let (world, spec) = generate_task(seed, tt, &layout, tax).unwrap();
                    spec.validate().unwrap();
                    let states = replay(&world, &spec.expert_actions).unwrap();
                    let (met, total) = evaluate_goal(states.last().unwrap(), &spec.goal);
                    assert_eq!(met, total, "{tt} seed {seed}");
                    for (tags, ms) in spec.gold_tags.iter().zip(&spec.gold_milestones) {
                        assert_eq!(&extract_milestones(tags), ms);
                        assert_eq!(ms.len(), 1, "{tt}: {:?}", tags.tokens);
                    }
                }
            }
        }
    }

    #[test]
    fn put_sentences_never_tag_the_carried_object() {
        let tax = Taxonomy::shipped();
        for seed in 0..20 {
            let (world, spec) = generate_task(seed, TaskType::HeatPlace, &LayoutConfig::default(), tax).unwrap();
            for (rec, ms) in spec.subtasks.iter().zip(&spec.gold_milestones) {
                if rec.subtask.kind == SubtaskKind::Put {
                    assert_eq!(ms[0].targets.len(), 1);
                    assert_eq!(rec.target_ids, vec![rec.subtask.target]);
                    let held = rec.subtask.context.unwrap();
                    assert_ne!(world.object(held).unwrap().class_label, class_of(&world, rec.subtask.target));
                }
            }
        }
    }

    #[test]
    fn split_seeds_are_disjoint() {
        let seen: BTreeSet<u64> = (0..1000).map(|i| split_seed(false, 0, i)).collect();
        assert!((0..1000).all(|i| !seen.contains(&split_seed(true, 0, i))));
    }
}
