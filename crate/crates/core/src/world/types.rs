use serde::{Deserialize, Serialize};

use crate::world::catalog;

/// Meters per grid cell.
pub const CELL_SIZE_M: f64 = 0.25;
/// Interaction reach in meters.
pub const REACH_M: f64 = 1.5;
/// Maximum forward depth of the view wedge, in cells.
pub const VIEW_DEPTH: i32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub u32);

impl std::fmt::Display for ObjectId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "obj{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Cell {
        Cell::new(self.x + dx, self.y + dy)
    }

    /// Euclidean distance in cells.
    pub fn distance(self, other: Cell) -> f64 {
        let (dx, dy) = ((self.x - other.x) as f64, (self.y - other.y) as f64);
        (dx * dx + dy * dy).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];

    /// Unit step; y grows southwards.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::N => (0, -1),
            Heading::E => (1, 0),
            Heading::S => (0, 1),
            Heading::W => (-1, 0),
        }
    }

    pub fn right(self) -> Heading {
        match self {
            Heading::N => Heading::E,
            Heading::E => Heading::S,
            Heading::S => Heading::W,
            Heading::W => Heading::N,
        }
    }

    pub fn left(self) -> Heading {
        self.right().right().right()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// (forward, lateral) coordinates of `offset` in this heading's frame; lateral grows to the right.
    pub fn to_local(self, dx: i32, dy: i32) -> (i32, i32) {
        match self {
            Heading::N => (-dy, dx),
            Heading::E => (dx, dy),
            Heading::S => (dy, -dx),
            Heading::W => (-dx, -dy),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pitch {
    #[serde(rename = "-30")]
    Down,
    #[serde(rename = "0")]
    Level,
    #[serde(rename = "30")]
    Up,
}

impl Pitch {
    pub fn degrees(self) -> i32 {
        match self {
            Pitch::Down => -30,
            Pitch::Level => 0,
            Pitch::Up => 30,
        }
    }

    pub fn up(self) -> Pitch {
        match self {
            Pitch::Down => Pitch::Level,
            _ => Pitch::Up,
        }
    }

    pub fn down(self) -> Pitch {
        match self {
            Pitch::Up => Pitch::Level,
            _ => Pitch::Down,
        }
    }

    /// Inclusive forward-depth band visible at this pitch.
    pub fn depth_band(self) -> (i32, i32) {
        match self {
            Pitch::Down => (1, 4),
            Pitch::Level => (1, VIEW_DEPTH),
            Pitch::Up => (3, VIEW_DEPTH),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentPose {
    pub cell: Cell,
    pub heading: Heading,
    pub pitch: Pitch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Temperature {
    Hot,
    Cold,
    Room,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: ObjectId,
    pub class_label: String,
    pub position: Cell,
    /// Occupies its cell and blocks movement (furniture).
    pub obstacle: bool,
    pub openable: bool,
    pub open: bool,
    pub toggleable: bool,
    pub on: bool,
    pub pickupable: bool,
    pub sliceable: bool,
    pub sliced: bool,
    pub temperature: Temperature,
    pub clean: bool,
    pub receptacle: bool,
    pub contained_in: Option<ObjectId>,
}

impl ObjectInstance {
    /// Fresh instance with the catalog's affordances for `class_label` (unknown classes are plain small objects).
    pub fn of_class(id: ObjectId, class_label: &str, position: Cell) -> Self {
        let info = catalog::class_info(class_label);
        ObjectInstance {
            id,
            class_label: class_label.to_string(),
            position,
            obstacle: info.is_some_and(|c| c.furniture),
            openable: info.is_some_and(|c| c.openable),
            open: false,
            toggleable: info.is_some_and(|c| c.toggleable),
            on: class_label == "fridge",
            pickupable: info.is_none_or(|c| c.pickupable),
            sliceable: info.is_some_and(|c| c.sliceable),
            sliced: false,
            temperature: Temperature::Room,
            clean: true,
            receptacle: info.is_some_and(|c| c.receptacle),
            contained_in: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    Free,
    Wall,
}

/// Occupancy lattice; serialized as rows of `.` (free) and `#` (wall).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Grid {
    width: i32,
    height: i32,
    cells: Vec<CellKind>,
}

impl Grid {
    pub fn new(width: i32, height: i32) -> Self {
        assert!(width > 0 && height > 0);
        Grid { width, height, cells: vec![CellKind::Free; (width * height) as usize] }
    }

    /// Rectangle of free cells enclosed by a one-cell wall border.
    pub fn walled(width: i32, height: i32) -> Self {
        let mut g = Grid::new(width, height);
        for x in 0..width {
            g.set(Cell::new(x, 0), CellKind::Wall);
            g.set(Cell::new(x, height - 1), CellKind::Wall);
        }
        for y in 0..height {
            g.set(Cell::new(0, y), CellKind::Wall);
            g.set(Cell::new(width - 1, y), CellKind::Wall);
        }
        g
    }

    pub fn width(&self) -> i32 {
        self.width
    }

    pub fn height(&self) -> i32 {
        self.height
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && c.x < self.width && c.y < self.height
    }

    pub fn get(&self, c: Cell) -> CellKind {
        if !self.in_bounds(c) {
            return CellKind::Wall;
        }
        self.cells[(c.y * self.width + c.x) as usize]
    }

    pub fn set(&mut self, c: Cell, kind: CellKind) {
        assert!(self.in_bounds(c));
        self.cells[(c.y * self.width + c.x) as usize] = kind;
    }

    pub fn is_wall(&self, c: Cell) -> bool {
        self.get(c) == CellKind::Wall
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| Cell::new(x, y)))
    }

    fn to_rows(&self) -> Vec<String> {
        (0..self.height)
            .map(|y| {
                (0..self.width)
                    .map(|x| if self.is_wall(Cell::new(x, y)) { '#' } else { '.' })
                    .collect()
            })
            .collect()
    }

    fn from_rows(rows: &[String]) -> Result<Self, String> {
        let height = rows.len() as i32;
        let width = rows.first().map_or(0, |r| r.chars().count()) as i32;
        if width == 0 || height == 0 {
            return Err("empty grid".into());
        }
        let mut g = Grid::new(width, height);
        for (y, row) in rows.iter().enumerate() {
            if row.chars().count() as i32 != width {
                return Err(format!("ragged grid row {y}"));
            }
            for (x, ch) in row.chars().enumerate() {
                let kind = match ch {
                    '#' => CellKind::Wall,
                    '.' => CellKind::Free,
                    other => return Err(format!("bad grid cell {other:?}")),
                };
                g.set(Cell::new(x as i32, y as i32), kind);
            }
        }
        Ok(g)
    }
}

impl Serialize for Grid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Grid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<String>::deserialize(d)?;
        Grid::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub grid: Grid,
    pub objects: Vec<ObjectInstance>,
    pub agent: AgentPose,
    pub held: Option<ObjectId>,
    /// Number of actions that changed the world.
    pub step_count: u32,
    #[serde(default)]
    pub stopped: bool,
}

impl WorldState {
    pub fn object(&self, id: ObjectId) -> Option<&ObjectInstance> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_mut(&mut self, id: ObjectId) -> Option<&mut ObjectInstance> {
        self.objects.iter_mut().find(|o| o.id == id)
    }

    pub fn objects_of_class<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a ObjectInstance> + 'a {
        self.objects.iter().filter(move |o| o.class_label == class)
    }

    /// Direct contents of `id`, ordered by id.
    pub fn contents(&self, id: ObjectId) -> Vec<ObjectId> {
        let mut v: Vec<ObjectId> =
            self.objects.iter().filter(|o| o.contained_in == Some(id)).map(|o| o.id).collect();
        v.sort();
        v
    }

    /// `id` and everything transitively inside it.
    pub fn subtree(&self, id: ObjectId) -> Vec<ObjectId> {
        let mut out = vec![id];
        let mut i = 0;
        while i < out.len() {
            let cur = out[i];
            out.extend(self.contents(cur));
            i += 1;
        }
        out
    }

    /// Whether some enclosing container of `id` is closed.
    pub fn enclosed_by_closed(&self, id: ObjectId) -> bool {
        let mut cur = self.object(id).and_then(|o| o.contained_in);
        let mut guard = 0;
        while let Some(parent) = cur {
            let Some(p) = self.object(parent) else { return false };
            if p.openable && !p.open {
                return true;
            }
            cur = p.contained_in;
            guard += 1;
            if guard > self.objects.len() {
                return false;
            }
        }
        false
    }

    /// Whether `id` is the held object or inside it.
    pub fn is_carried(&self, id: ObjectId) -> bool {
        let Some(held) = self.held else { return false };
        let mut cur = Some(id);
        let mut guard = 0;
        while let Some(c) = cur {
            if c == held {
                return true;
            }
            cur = self.object(c).and_then(|o| o.contained_in);
            guard += 1;
            if guard > self.objects.len() {
                return false;
            }
        }
        false
    }

    /// Cell is walkable: in bounds, not a wall, no obstacle on it.
    pub fn walkable(&self, c: Cell) -> bool {
        !self.grid.is_wall(c) && !self.objects.iter().any(|o| o.obstacle && o.position == c)
    }

    /// Checks the structural invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut ids: Vec<ObjectId> = self.objects.iter().map(|o| o.id).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err("duplicate object id".into());
        }
        for o in &self.objects {
            if !self.grid.in_bounds(o.position) || self.grid.is_wall(o.position) {
                return Err(format!("{} lies outside the free grid", o.id));
            }
            if (o.open && !o.openable) || (o.on && !o.toggleable) || (o.sliced && !o.sliceable) {
                return Err(format!("{} has an inconsistent state flag", o.id));
            }
            if let Some(p) = o.contained_in {
                match self.object(p) {
                    Some(r) if r.receptacle => {}
                    _ => return Err(format!("{} contained in a non-receptacle", o.id)),
                }
            }
        }
        if let Some(h) = self.held {
            let Some(o) = self.object(h) else { return Err("held object missing".into()) };
            if o.position != self.agent.cell {
                return Err("held object is not at the agent".into());
            }
            if o.contained_in.is_some() {
                return Err("held object is inside a receptacle".into());
            }
        }
        if !self.walkable(self.agent.cell) {
            return Err("agent stands on a blocked cell".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_frame_matches_heading() {
        for h in Heading::ALL {
            let (dx, dy) = h.delta();
            assert_eq!(h.to_local(dx, dy), (1, 0), "{h:?}");
            let (rx, ry) = h.right().delta();
            assert_eq!(h.to_local(rx, ry), (0, 1), "{h:?}");
        }
    }

    #[test]
    fn grid_serializes_as_rows() {
        let g = Grid::walled(4, 3);
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, "[\"####\",\"#..#\",\"####\"]");
        let back: Grid = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn pitch_clamps() {
        assert_eq!(Pitch::Up.up(), Pitch::Up);
        assert_eq!(Pitch::Down.down(), Pitch::Down);
        assert_eq!(Pitch::Level.down(), Pitch::Down);
    }
}
