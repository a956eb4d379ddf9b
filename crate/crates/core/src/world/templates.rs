//! Instruction templates and the renderer that derives gold BIO tags from slot positions.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::milestone::MilestoneKind;
use crate::tagger::{tokenize, Tag, TagSeq};

pub const GOTO: &[&str] = &[
    "Go to the {T}.",
    "Walk over to the {T}.",
    "Turn around and head to the {T}.",
    "Go to the {T} on the far side of the kitchen",
    "Move to the {T}.",
    "Turn left and walk to the {T}.",
    "Head over to the {T}.",
];

/// Pickups whose source is open; the source, when named, is not a target.
pub const PICKUP: &[&str] = &[
    "Pick up the {T}.",
    "Take the {T}.",
    "Pick the {T} up from the {A}.",
    "Lift the {T} off the {A}.",
    "Remove the {T} from the {A}.",
];

/// Pickups from a closed container; the container is a target too.
pub const PICKUP_CLOSED: &[&str] = &[
    "Grab the {T} from the {S}.",
    "Open the {S} and take out the {T}.",
    "Open the {S} and grab the {T}.",
];

/// The carried object {H} is never a target.
pub const PUT: &[&str] = &[
    "Put the {H} {P} the {T}.",
    "Place the {H} {P} the {T}.",
    "Set the {H} down {P} the {T}.",
    "Put down the {H} {P} the {T}.",
];

pub const OPEN: &[&str] = &["Open the {T}.", "Pull open the {T}.", "Open up the {T}."];

pub const TOGGLE_ON: &[&str] = &["Turn on the {T}.", "Switch on the {T}.", "Turn the {T} on."];

pub const DISTRACTOR_PREPOSITIONS: &[&str] = &["near", "next to", "by"];

/// Phrases substituted into a template.
#[derive(Debug, Clone, Default)]
pub struct Fill {
    pub target: String,
    pub second: Option<String>,
    pub held: Option<String>,
    pub source: Option<String>,
    pub preposition: Option<String>,
    /// Prepositional clause naming a non-target class, attached after the target phrase.
    pub distractor: Option<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub text: String,
    pub gold: TagSeq,
}

fn push_phrase(words: &mut Vec<String>, tags: &mut Vec<Tag>, phrase: &str, kind: Option<MilestoneKind>) {
    for (i, w) in phrase.split_whitespace().enumerate() {
        words.push(w.to_string());
        tags.push(match kind {
            None => Tag::O,
            Some(k) if i == 0 => Tag::begin(k),
            Some(k) => Tag::inside(k),
        });
    }
}

/// Renders `template`; `{T}` and `{S}` become `kind` spans, everything else is tagged O.
pub fn render(template: &str, fill: &Fill, kind: MilestoneKind) -> Sentence {
    // Words as they will appear in the text; punctuation stays attached to the word before it.
    let mut words: Vec<String> = Vec::new();
    let mut tags: Vec<Tag> = Vec::new();
    for raw in template.split_whitespace() {
        let core = raw.trim_end_matches(['.', ',', '!', '?', ';', ':']);
        let punct = &raw[core.len()..];
        let slot = |s: &Option<String>| s.clone().unwrap_or_else(|| panic!("template {template:?} needs {core}"));
        match core {
            "{T}" => {
                push_phrase(&mut words, &mut tags, &fill.target, Some(kind));
                if let Some((prep, phrase)) = &fill.distractor {
                    push_phrase(&mut words, &mut tags, &format!("{prep} the {phrase}"), None);
                }
            }
            "{S}" => push_phrase(&mut words, &mut tags, &slot(&fill.second), Some(kind)),
            "{H}" => push_phrase(&mut words, &mut tags, &slot(&fill.held), None),
            "{A}" => push_phrase(&mut words, &mut tags, &slot(&fill.source), None),
            "{P}" => push_phrase(&mut words, &mut tags, &slot(&fill.preposition), None),
            w => push_phrase(&mut words, &mut tags, w, None),
        }
        if !punct.is_empty() {
            words.last_mut().expect("punctuation follows a word").push_str(punct);
            for _ in punct.chars() {
                tags.push(Tag::O);
            }
        }
    }
    let mut text = words.join(" ");
    if let Some(first) = text.get(..1) {
        let upper = first.to_uppercase();
        text.replace_range(..1, &upper);
    }
    let tokens = tokenize(&text);
    assert_eq!(tokens.len(), tags.len(), "render of {template:?} misaligned");
    Sentence { text, gold: TagSeq::new(tokens, tags) }
}

/// Picks a template and, with probability `noise`, a distractor clause.
pub fn render_random<R: Rng>(
    rng: &mut R,
    templates: &[&str],
    mut fill: Fill,
    kind: MilestoneKind,
    noise: f64,
    distractor_phrase: Option<&str>,
) -> Sentence {
    let template = templates.choose(rng).expect("non-empty template list");
    let roll: f64 = rng.gen();
    let prep = *DISTRACTOR_PREPOSITIONS.choose(rng).unwrap();
    if roll < noise {
        if let Some(d) = distractor_phrase {
            fill.distractor = Some((prep.to_string(), d.to_string()));
        }
    }
    render(template, &fill, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Tag::*;

    #[test]
    fn far_side_example_has_twelve_tags() {
        let s = render(
            "Go to the {T} on the far side of the kitchen",
            &Fill { target: "trash can".into(), ..Default::default() },
            MilestoneKind::Navigation,
        );
        assert_eq!(s.text, "Go to the trash can on the far side of the kitchen");
        assert_eq!(s.gold.tags, vec![O, O, O, BNav, INav, O, O, O, O, O, O, O]);
    }

    #[test]
    fn held_object_is_never_tagged() {
        let fill = Fill {
            target: "counter".into(),
            held: Some("potato".into()),
            preposition: Some("on".into()),
            ..Default::default()
        };
        let s = render("Put down the {H} {P} the {T}.", &fill, MilestoneKind::Interaction);
        assert_eq!(s.text, "Put down the potato on the counter.");
        assert_eq!(s.gold.tags, vec![O, O, O, O, O, O, BInt, O]);
    }

    #[test]
    fn distractor_follows_target_untagged() {
        let fill = Fill {
            target: "sink".into(),
            distractor: Some(("next to".into(), "coffee mug".into())),
            ..Default::default()
        };
        let s = render("Go to the {T}.", &fill, MilestoneKind::Navigation);
        assert_eq!(s.text, "Go to the sink next to the coffee mug.");
        assert_eq!(s.gold.tags, vec![O, O, O, BNav, O, O, O, O, O, O]);
    }

    #[test]
    fn every_template_renders_aligned() {
        let fill = Fill {
            target: "loaf of bread".into(),
            second: Some("kitchen cabinet".into()),
            held: Some("tea mug".into()),
            source: Some("side table".into()),
            preposition: Some("in".into()),
            distractor: Some(("by".into(), "floor lamp".into())),
        };
        for t in GOTO.iter().chain(PICKUP).chain(PICKUP_CLOSED).chain(PUT).chain(OPEN).chain(TOGGLE_ON) {
            let s = render(t, &fill, MilestoneKind::Interaction);
            assert!(s.gold.is_valid(), "{t}");
        }
    }
}
