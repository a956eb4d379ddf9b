//! Class taxonomy, Wu-Palmer similarity and phrase-to-detection grounding.

use std::collections::HashMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::perception::Detection;

static SHIPPED: &str = include_str!("../data/taxonomy.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Debug, Serialize, Deserialize)]
struct RawNode {
    name: String,
    parent: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSynonym {
    phrase: String,
    node: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawTaxonomy {
    nodes: Vec<RawNode>,
    #[serde(default)]
    synonyms: Vec<RawSynonym>,
}

#[derive(Debug, thiserror::Error)]
pub enum TaxonomyError {
    #[error("taxonomy json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate node {0:?}")]
    DuplicateNode(String),
    #[error("node {0:?} has unknown parent {1:?}")]
    UnknownParent(String, String),
    #[error("expected exactly one root named \"object\"")]
    BadRoot,
    #[error("cycle through {0:?}")]
    Cycle(String),
    #[error("synonym {0:?} maps to unknown node {1:?}")]
    UnknownSynonymTarget(String, String),
    #[error("synonym {0:?} maps to more than one node")]
    AmbiguousSynonym(String),
}

#[derive(Debug, Clone)]
pub struct Taxonomy {
    names: Vec<String>,
    parent: Vec<Option<NodeId>>,
    depth: Vec<u32>,
    children: Vec<Vec<NodeId>>,
    by_name: HashMap<String, NodeId>,
    synonyms: HashMap<String, NodeId>,
    /// Synonym phrases per node, in file order.
    surfaces: Vec<Vec<String>>,
}

impl Taxonomy {
    pub fn from_json(text: &str) -> Result<Self, TaxonomyError> {
        let raw: RawTaxonomy = serde_json::from_str(text)?;
        let mut by_name = HashMap::new();
        for (i, n) in raw.nodes.iter().enumerate() {
            if by_name.insert(n.name.clone(), NodeId(i)).is_some() {
                return Err(TaxonomyError::DuplicateNode(n.name.clone()));
            }
        }
        let mut parent = Vec::with_capacity(raw.nodes.len());
        let mut roots = 0;
        for n in &raw.nodes {
            match &n.parent {
                None => {
                    roots += 1;
                    if n.name != "object" {
                        return Err(TaxonomyError::BadRoot);
                    }
                    parent.push(None);
                }
                Some(p) => match by_name.get(p) {
                    Some(&id) => parent.push(Some(id)),
                    None => return Err(TaxonomyError::UnknownParent(n.name.clone(), p.clone())),
                },
            }
        }
        if roots != 1 {
            return Err(TaxonomyError::BadRoot);
        }
        let count = raw.nodes.len();
        let mut depth = vec![0u32; count];
        for i in 0..count {
            let mut d = 1;
            let mut cur = parent[i];
            while let Some(p) = cur {
                d += 1;
                if d as usize > count {
                    return Err(TaxonomyError::Cycle(raw.nodes[i].name.clone()));
                }
                cur = parent[p.0];
            }
            depth[i] = d;
        }
        let mut children = vec![Vec::new(); count];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[p.0].push(NodeId(i));
            }
        }
        let mut synonyms: HashMap<String, NodeId> = HashMap::new();
        let mut surfaces = vec![Vec::new(); count];
        for s in &raw.synonyms {
            let Some(&node) = by_name.get(&s.node) else {
                return Err(TaxonomyError::UnknownSynonymTarget(s.phrase.clone(), s.node.clone()));
            };
            let phrase = s.phrase.to_lowercase();
            match synonyms.get(&phrase) {
                Some(&prev) if prev != node => return Err(TaxonomyError::AmbiguousSynonym(phrase)),
                Some(_) => {}
                None => {
                    synonyms.insert(phrase.clone(), node);
                    surfaces[node.0].push(phrase);
                }
            }
        }
        Ok(Taxonomy {
            names: raw.nodes.into_iter().map(|n| n.name).collect(),
            parent,
            depth,
            children,
            by_name,
            synonyms,
            surfaces,
        })
    }

    /// The bundled household taxonomy.
    pub fn shipped() -> &'static Taxonomy {
        static TAX: OnceLock<Taxonomy> = OnceLock::new();
        TAX.get_or_init(|| Taxonomy::from_json(SHIPPED).expect("bundled taxonomy is valid"))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn root(&self) -> NodeId {
        NodeId(self.parent.iter().position(Option::is_none).expect("root exists"))
    }

    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, n: NodeId) -> &str {
        &self.names[n.0]
    }

    pub fn parent(&self, n: NodeId) -> Option<NodeId> {
        self.parent[n.0]
    }

    pub fn depth(&self, n: NodeId) -> u32 {
        self.depth[n.0]
    }

    pub fn children(&self, n: NodeId) -> &[NodeId] {
        &self.children[n.0]
    }

    pub fn is_leaf(&self, n: NodeId) -> bool {
        self.children[n.0].is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.names.len()).map(NodeId)
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes().filter(|&n| self.is_leaf(n))
    }

    /// Synonym phrases listed for `n` (may be empty).
    pub fn surface_forms(&self, n: NodeId) -> &[String] {
        &self.surfaces[n.0]
    }

    /// Other leaves sharing the parent of the leaf named `label`.
    pub fn leaf_siblings(&self, label: &str) -> Vec<&str> {
        let Some(n) = self.node(label) else { return Vec::new() };
        let Some(p) = self.parent(n) else { return Vec::new() };
        self.children(p)
            .iter()
            .filter(|&&c| c != n && self.is_leaf(c))
            .map(|&c| self.name(c))
            .collect()
    }

    /// Synonym table first, then node name, then the phrase's last token.
    pub fn lookup(&self, phrase: &str) -> Option<NodeId> {
        let p = phrase.trim().to_lowercase();
        let direct = |s: &str| self.synonyms.get(s).copied().or_else(|| self.node(s));
        direct(&p).or_else(|| p.split_whitespace().last().and_then(direct))
    }

    /// Exact synonym or node-name match, without the last-token fallback.
    pub fn lookup_exact(&self, phrase: &str) -> Option<NodeId> {
        let p = phrase.trim().to_lowercase();
        self.synonyms.get(&p).copied().or_else(|| self.node(&p))
    }

    /// Class mentions in `text`, longest match first (up to three tokens), left to right.
    pub fn mentions(&self, text: &str) -> Vec<(String, NodeId)> {
        let tokens: Vec<String> = crate::tagger::tokenize(text).into_iter().map(|t| t.to_lowercase()).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let hit = (1..=3).rev().filter(|n| i + n <= tokens.len()).find_map(|n| {
                let phrase = tokens[i..i + n].join(" ");
                self.lookup_exact(&phrase).filter(|&id| self.is_leaf(id)).map(|id| (phrase, id, n))
            });
            match hit {
                Some((phrase, id, n)) => {
                    out.push((phrase, id));
                    i += n;
                }
                None => i += 1,
            }
        }
        out
    }

    /// Deepest common ancestor.
    pub fn lcs(&self, a: NodeId, b: NodeId) -> NodeId {
        let (mut a, mut b) = (a, b);
        while self.depth(a) > self.depth(b) {
            a = self.parent(a).unwrap();
        }
        while self.depth(b) > self.depth(a) {
            b = self.parent(b).unwrap();
        }
        while a != b {
            a = self.parent(a).unwrap();
            b = self.parent(b).unwrap();
        }
        a
    }

    pub fn wup(&self, a: NodeId, b: NodeId) -> f64 {
        let l = self.lcs(a, b);
        2.0 * self.depth(l) as f64 / (self.depth(a) + self.depth(b)) as f64
    }

    /// WUP between a phrase and a class label, 0 when either does not resolve.
    pub fn phrase_similarity(&self, phrase: &str, label: &str) -> f64 {
        match (self.lookup(phrase), self.node(label).or_else(|| self.lookup(label))) {
            (Some(a), Some(b)) => self.wup(a, b),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundingConfig {
    pub similarity_threshold: f64,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        GroundingConfig { similarity_threshold: 0.8 }
    }
}

fn center_distance(d: &Detection) -> f64 {
    let (x, y) = d.mask.centroid();
    let c = (crate::mask::RASTER as f64 - 1.0) / 2.0;
    ((x - c).powi(2) + (y - c).powi(2)).sqrt()
}

/// Index of the reachable detection most similar to `phrase`, if that similarity clears the threshold.
pub fn ground_index(phrase: &str, detections: &[Detection], tax: &Taxonomy, config: &GroundingConfig) -> Option<usize> {
    let target = tax.lookup(phrase)?;
    let mut best: Option<(usize, f64, f64, f64)> = None;
    for (i, d) in detections.iter().enumerate() {
        if !d.reachable {
            continue;
        }
        let Some(node) = tax.node(&d.label) else { continue };
        let sim = tax.wup(target, node);
        if sim < config.similarity_threshold {
            continue;
        }
        let cd = center_distance(d);
        let better = match best {
            None => true,
            Some((_, bs, bscore, bcd)) => {
                sim > bs || (sim == bs && (d.score > bscore || (d.score == bscore && cd < bcd)))
            }
        };
        if better {
            best = Some((i, sim, d.score, cd));
        }
    }
    best.map(|b| b.0)
}

pub fn ground_target<'a>(
    phrase: &str,
    detections: &'a [Detection],
    tax: &Taxonomy,
    config: &GroundingConfig,
) -> Option<&'a Detection> {
    ground_index(phrase, detections, tax, config).map(|i| &detections[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::Mask;
    use crate::world::ObjectId;

    fn toy() -> Taxonomy {
        Taxonomy::from_json(
            r#"{"nodes":[
                {"name":"object","parent":null},
                {"name":"furniture","parent":"object"},
                {"name":"table","parent":"furniture"},
                {"name":"desk","parent":"table"},
                {"name":"counter","parent":"furniture"}
            ],"synonyms":[{"phrase":"writing desk","node":"desk"}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn toy_wup_values() {
        let t = toy();
        let (desk, counter, table) = (t.node("desk").unwrap(), t.node("counter").unwrap(), t.node("table").unwrap());
        assert_eq!(t.wup(desk, desk), 1.0);
        assert!((t.wup(desk, counter) - 4.0 / 7.0).abs() < 1e-12);
        assert!((t.wup(desk, table) - 6.0 / 7.0).abs() < 1e-12);
        assert_eq!(t.depth(t.root()), 1);
    }

    #[test]
    fn lookup_order() {
        let t = Taxonomy::shipped();
        assert_eq!(t.lookup("kitchen island"), t.node("countertop"));
        assert_eq!(t.lookup("mug"), t.node("mug"));
        assert_eq!(t.lookup("flibbertigibbet"), None);
        assert_eq!(t.lookup("Garbage Can"), t.node("garbagecan"));
        assert_eq!(t.lookup("red mug"), t.node("mug"));
    }

    #[test]
    fn malformed_taxonomies_are_rejected() {
        let dup = r#"{"nodes":[{"name":"object","parent":null},{"name":"object","parent":"object"}]}"#;
        assert!(matches!(Taxonomy::from_json(dup), Err(TaxonomyError::DuplicateNode(_))));
        let orphan = r#"{"nodes":[{"name":"object","parent":null},{"name":"a","parent":"b"}]}"#;
        assert!(matches!(Taxonomy::from_json(orphan), Err(TaxonomyError::UnknownParent(..))));
        let amb = r#"{"nodes":[{"name":"object","parent":null},{"name":"a","parent":"object"},{"name":"b","parent":"object"}],
            "synonyms":[{"phrase":"x","node":"a"},{"phrase":"x","node":"b"}]}"#;
        assert!(matches!(Taxonomy::from_json(amb), Err(TaxonomyError::AmbiguousSynonym(_))));
    }

    fn det(label: &str, reachable: bool, score: f64, x: i64) -> Detection {
        Detection {
            label: label.into(),
            score,
            mask: Mask::rect(x, 20, x + 10, 30),
            reachable,
            source_id: ObjectId(0),
        }
    }

    #[test]
    fn grounding_examples() {
        let t = Taxonomy::shipped();
        let cfg = GroundingConfig::default();
        let dets = vec![det("garbagecan", true, 0.9, 10)];
        assert_eq!(ground_index("garbage can", &dets, t, &cfg), Some(0));
        let dets = vec![det("garbagecan", false, 0.9, 10)];
        assert_eq!(ground_index("garbage can", &dets, t, &cfg), None);
        let dets = vec![det("dishsponge", true, 0.99, 10), det("fork", true, 0.5, 30)];
        assert_eq!(ground_index("fork", &dets, t, &cfg), Some(1));
    }

    #[test]
    fn ties_prefer_score_then_center() {
        let t = Taxonomy::shipped();
        let cfg = GroundingConfig::default();
        let dets = vec![det("mug", true, 0.5, 0), det("mug", true, 0.7, 50)];
        assert_eq!(ground_index("mug", &dets, t, &cfg), Some(1));
        let dets = vec![det("mug", true, 0.5, 0), det("mug", true, 0.5, 27)];
        assert_eq!(ground_index("mug", &dets, t, &cfg), Some(1));
    }
}
