//! Static affordance table for every simulator class.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassInfo {
    pub name: &'static str,
    /// Occupies its cell and blocks movement.
    pub furniture: bool,
    pub pickupable: bool,
    pub receptacle: bool,
    pub openable: bool,
    pub toggleable: bool,
    pub sliceable: bool,
    /// Things are put *in* it rather than *on* it.
    pub enclosing: bool,
}

const fn furniture(name: &'static str, openable: bool, toggleable: bool, enclosing: bool) -> ClassInfo {
    ClassInfo {
        name,
        furniture: true,
        pickupable: false,
        receptacle: true,
        openable,
        toggleable,
        sliceable: false,
        enclosing,
    }
}

const fn small(name: &'static str, receptacle: bool, sliceable: bool, enclosing: bool) -> ClassInfo {
    ClassInfo {
        name,
        furniture: false,
        pickupable: true,
        receptacle,
        openable: false,
        toggleable: false,
        sliceable,
        enclosing,
    }
}

const fn fixture(name: &'static str, furniture: bool) -> ClassInfo {
    ClassInfo {
        name,
        furniture,
        pickupable: false,
        receptacle: false,
        openable: false,
        toggleable: true,
        sliceable: false,
        enclosing: false,
    }
}

pub static CLASSES: &[ClassInfo] = &[
    furniture("countertop", false, false, false),
    furniture("diningtable", false, false, false),
    furniture("desk", false, false, false),
    furniture("sidetable", false, false, false),
    furniture("coffeetable", false, false, false),
    furniture("shelf", false, false, false),
    furniture("dresser", false, false, false),
    furniture("cabinet", true, false, true),
    furniture("drawer", true, false, true),
    furniture("sofa", false, false, false),
    furniture("armchair", false, false, false),
    furniture("bed", false, false, false),
    furniture("fridge", true, true, true),
    furniture("microwave", true, true, true),
    furniture("stoveburner", false, true, false),
    furniture("sinkbasin", false, false, true),
    furniture("garbagecan", false, false, true),
    fixture("floorlamp", true),
    fixture("desklamp", false),
    fixture("faucet", false),
    small("potato", false, true, false),
    small("apple", false, true, false),
    small("tomato", false, true, false),
    small("lettuce", false, true, false),
    small("bread", false, true, false),
    small("egg", false, false, false),
    small("saltshaker", false, false, false),
    small("peppershaker", false, false, false),
    small("fork", false, false, false),
    small("knife", false, false, false),
    small("butterknife", false, false, false),
    small("spoon", false, false, false),
    small("spatula", false, false, false),
    small("ladle", false, false, false),
    small("mug", true, false, true),
    small("cup", true, false, true),
    small("winebottle", false, false, false),
    small("bowl", true, false, true),
    small("plate", true, false, false),
    small("pan", true, false, true),
    small("pot", true, false, true),
    small("kettle", false, false, false),
    small("cellphone", false, false, false),
    small("laptop", false, false, false),
    small("remotecontrol", false, false, false),
    small("alarmclock", false, false, false),
    small("cd", false, false, false),
    small("pen", false, false, false),
    small("pencil", false, false, false),
    small("book", false, false, false),
    small("newspaper", false, false, false),
    small("creditcard", false, false, false),
    small("keychain", false, false, false),
    small("watch", false, false, false),
    small("soapbar", false, false, false),
    small("dishsponge", false, false, false),
    small("cloth", false, false, false),
    small("spraybottle", false, false, false),
    small("vase", false, false, false),
    small("candle", false, false, false),
    small("statue", false, false, false),
    small("pillow", false, false, false),
];

pub fn class_info(name: &str) -> Option<&'static ClassInfo> {
    CLASSES.iter().find(|c| c.name == name)
}

pub fn is_light_source(name: &str) -> bool {
    matches!(name, "floorlamp" | "desklamp")
}

pub fn is_heater(name: &str) -> bool {
    matches!(name, "microwave" | "stoveburner")
}

pub fn is_cutter(name: &str) -> bool {
    matches!(name, "knife" | "butterknife")
}

/// Preposition used when placing something into/onto `receptacle`.
pub fn placement_preposition(receptacle: &str) -> &'static str {
    match class_info(receptacle) {
        Some(c) if c.enclosing => "in",
        _ => "on",
    }
}

pub fn small_classes() -> impl Iterator<Item = &'static ClassInfo> {
    CLASSES.iter().filter(|c| c.pickupable)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::Taxonomy;

    #[test]
    fn every_class_is_a_taxonomy_leaf() {
        let tax = Taxonomy::shipped();
        for c in CLASSES {
            let node = tax.node(c.name).unwrap_or_else(|| panic!("{} missing", c.name));
            assert!(tax.is_leaf(node), "{} is not a leaf", c.name);
        }
        assert_eq!(CLASSES.len(), tax.leaves().count());
    }

    #[test]
    fn flags_are_consistent() {
        for c in CLASSES {
            assert!(!(c.furniture && c.pickupable), "{}", c.name);
            if c.openable {
                assert!(c.receptacle, "{}", c.name);
            }
        }
    }
}
