use serde::{Deserialize, Serialize};

use super::catalog;
use super::step::reachable;
use super::types::{Temperature, WorldState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "predicate", rename_all = "snake_case")]
pub enum GoalCondition {
    /// At least `count` objects of class `object` sit directly in/on a `receptacle`.
    At {
        object: String,
        receptacle: String,
        #[serde(default = "one")]
        count: u32,
    },
    Heated { object: String },
    Cooled { object: String },
    Cleaned { object: String },
    Sliced { object: String },
    /// Held while a switched-on light source is within reach.
    Examined { object: String },
    Composite { all: Vec<GoalCondition> },
}

fn one() -> u32 {
    1
}

impl GoalCondition {
    pub fn at(object: &str, receptacle: &str) -> Self {
        GoalCondition::At { object: object.into(), receptacle: receptacle.into(), count: 1 }
    }

    pub fn holds(&self, s: &WorldState) -> bool {
        let any = |class: &str, pred: &dyn Fn(&super::ObjectInstance) -> bool| {
            s.objects.iter().any(|o| o.class_label == class && pred(o))
        };
        match self {
            GoalCondition::At { object, receptacle, count } => {
                let n = s
                    .objects
                    .iter()
                    .filter(|o| &o.class_label == object)
                    .filter(|o| {
                        o.contained_in
                            .and_then(|p| s.object(p))
                            .is_some_and(|p| &p.class_label == receptacle)
                    })
                    .count();
                n as u32 >= *count
            }
            GoalCondition::Heated { object } => any(object, &|o| o.temperature == Temperature::Hot),
            GoalCondition::Cooled { object } => any(object, &|o| o.temperature == Temperature::Cold),
            GoalCondition::Cleaned { object } => any(object, &|o| o.clean),
            GoalCondition::Sliced { object } => any(object, &|o| o.sliced),
            GoalCondition::Examined { object } => {
                let held = s.held.and_then(|h| s.object(h)).is_some_and(|o| &o.class_label == object);
                held && s
                    .objects
                    .iter()
                    .any(|l| catalog::is_light_source(&l.class_label) && l.on && reachable(s, l))
            }
            GoalCondition::Composite { all } => all.iter().all(|g| g.holds(s)),
        }
    }
}

/// (satisfied, total) over the listed conditions.
pub fn evaluate_goal(state: &WorldState, goal: &[GoalCondition]) -> (u32, u32) {
    let met = goal.iter().filter(|g| g.holds(state)).count() as u32;
    (met, goal.len() as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::types::*;

    fn heat_goal() -> Vec<GoalCondition> {
        let heated = GoalCondition::Heated { object: "potato".into() };
        let at = GoalCondition::at("potato", "countertop");
        vec![heated.clone(), at.clone(), GoalCondition::Composite { all: vec![heated, at] }]
    }

    fn fixture() -> WorldState {
        let counter = ObjectInstance::of_class(ObjectId(0), "countertop", Cell::new(3, 1));
        let table = ObjectInstance::of_class(ObjectId(2), "diningtable", Cell::new(1, 4));
        let mut potato = ObjectInstance::of_class(ObjectId(1), "potato", Cell::new(1, 4));
        potato.contained_in = Some(ObjectId(2));
        WorldState {
            grid: Grid::walled(6, 6),
            objects: vec![counter, potato, table],
            agent: AgentPose { cell: Cell::new(3, 2), heading: Heading::N, pitch: Pitch::Level },
            held: None,
            step_count: 0,
            stopped: false,
        }
    }

    #[test]
    fn heat_and_place_counts() {
        let mut s = fixture();
        assert_eq!(evaluate_goal(&s, &heat_goal()), (0, 3));

        s.objects[1].temperature = Temperature::Hot;
        s.objects[1].contained_in = Some(ObjectId(0));
        s.objects[1].position = Cell::new(3, 1);
        assert_eq!(evaluate_goal(&s, &heat_goal()), (3, 3));

        s.objects[1].contained_in = None;
        s.objects[1].position = s.agent.cell;
        s.held = Some(ObjectId(1));
        assert_eq!(evaluate_goal(&s, &heat_goal()), (1, 3));
    }

    #[test]
    fn serde_tagging() {
        let g = GoalCondition::at("mug", "desk");
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"predicate":"at","object":"mug","receptacle":"desk","count":1}"#);
        let back: GoalCondition = serde_json::from_str(r#"{"predicate":"at","object":"mug","receptacle":"desk"}"#).unwrap();
        assert_eq!(back, g);
    }
}
