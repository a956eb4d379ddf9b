//! BIO milestone tagger: tokenizer, averaged structured perceptron and exact Viterbi decoding.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::milestone::{Milestone, MilestoneKind};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    #[serde(rename = "B-Nav")]
    BNav,
    #[serde(rename = "I-Nav")]
    INav,
    #[serde(rename = "B-Int")]
    BInt,
    #[serde(rename = "I-Int")]
    IInt,
    #[serde(rename = "O")]
    O,
}

pub const NUM_TAGS: usize = 5;
const START: usize = 5;
const STOP: usize = 6;

impl Tag {
    pub const ALL: [Tag; NUM_TAGS] = [Tag::BNav, Tag::INav, Tag::BInt, Tag::IInt, Tag::O];

    /// Preference among equal-scoring alternatives: O, then lexicographic by name.
    const BY_PREFERENCE: [Tag; NUM_TAGS] = [Tag::O, Tag::BInt, Tag::BNav, Tag::IInt, Tag::INav];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::BNav => "B-Nav",
            Tag::INav => "I-Nav",
            Tag::BInt => "B-Int",
            Tag::IInt => "I-Int",
            Tag::O => "O",
        }
    }

    pub fn parse(s: &str) -> Option<Tag> {
        Tag::ALL.into_iter().find(|t| t.as_str() == s)
    }

    pub fn kind(self) -> Option<MilestoneKind> {
        match self {
            Tag::BNav | Tag::INav => Some(MilestoneKind::Navigation),
            Tag::BInt | Tag::IInt => Some(MilestoneKind::Interaction),
            Tag::O => None,
        }
    }

    pub fn begin(kind: MilestoneKind) -> Tag {
        match kind {
            MilestoneKind::Navigation => Tag::BNav,
            MilestoneKind::Interaction => Tag::BInt,
        }
    }

    pub fn inside(kind: MilestoneKind) -> Tag {
        match kind {
            MilestoneKind::Navigation => Tag::INav,
            MilestoneKind::Interaction => Tag::IInt,
        }
    }
}

/// Whether `next` may follow `prev` (`None` = sentence start).
pub fn transition_allowed(prev: Option<Tag>, next: Tag) -> bool {
    match next {
        Tag::INav => matches!(prev, Some(Tag::BNav | Tag::INav)),
        Tag::IInt => matches!(prev, Some(Tag::BInt | Tag::IInt)),
        _ => true,
    }
}

pub fn is_bio_valid(tags: &[Tag]) -> bool {
    let mut prev = None;
    for &t in tags {
        if !transition_allowed(prev, t) {
            return false;
        }
        prev = Some(t);
    }
    true
}

const TERMINAL_PUNCT: &[char] = &['.', ',', '!', '?', ';', ':'];

/// Lowercases, splits on whitespace and splits trailing punctuation into its own tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        let word = lower.trim_end_matches(TERMINAL_PUNCT);
        if !word.is_empty() {
            out.push(word.to_string());
        }
        out.extend(lower[word.len()..].chars().map(String::from));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSeq {
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
}

impl TagSeq {
    pub fn new(tokens: Vec<String>, tags: Vec<Tag>) -> Self {
        assert_eq!(tokens.len(), tags.len());
        TagSeq { tokens, tags }
    }

    pub fn is_valid(&self) -> bool {
        self.tokens.len() == self.tags.len() && is_bio_valid(&self.tags)
    }
}

/// Maximal `B-X (I-X)*` spans as (kind, start, end-exclusive).
pub fn spans(tags: &[Tag]) -> Vec<(MilestoneKind, usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tags.len() {
        match tags[i] {
            Tag::BNav | Tag::BInt => {
                let kind = tags[i].kind().unwrap();
                let inside = Tag::inside(kind);
                let mut j = i + 1;
                while j < tags.len() && tags[j] == inside {
                    j += 1;
                }
                out.push((kind, i, j));
                i = j;
            }
            _ => i += 1,
        }
    }
    out
}

/// One milestone per run of same-type spans, in sentence order.
pub fn extract_milestones(seq: &TagSeq) -> Vec<Milestone> {
    let mut out: Vec<Milestone> = Vec::new();
    let mut last_kind = None;
    for (kind, s, e) in spans(&seq.tags) {
        let phrase = seq.tokens[s..e].join(" ");
        if last_kind == Some(kind) {
            let m = out.last_mut().unwrap();
            m.targets.push(phrase);
            m.done.push(false);
        } else {
            out.push(Milestone::new(kind, vec![phrase]));
        }
        last_kind = Some(kind);
    }
    out
}

fn shape(w: &str) -> String {
    let mut s = String::new();
    for c in w.chars() {
        let k = if c.is_ascii_digit() {
            'd'
        } else if c.is_alphabetic() {
            'x'
        } else {
            c
        };
        if !s.ends_with(k) {
            s.push(k);
        }
    }
    s
}

fn position_bucket(i: usize) -> &'static str {
    match i {
        0 => "0",
        1 => "1",
        2 => "2",
        3..=5 => "3-5",
        6..=9 => "6-9",
        _ => "10+",
    }
}

const CUES: &[&str] = &["to", "near", "by", "from", "in", "into", "on", "onto", "inside", "beside", "next", "at", "and"];

/// Emission feature strings for every token.
pub fn token_features(tokens: &[String]) -> Vec<Vec<String>> {
    let at = |i: isize| -> &str {
        if i < 0 {
            "<s>"
        } else {
            tokens.get(i as usize).map_or("</s>", |s| s.as_str())
        }
    };
    let first = at(0).to_string();
    let first2 = format!("{}_{}", at(0), at(1));
    (0..tokens.len())
        .map(|i| {
            let w = &tokens[i];
            let ii = i as isize;
            let chars: Vec<char> = w.chars().collect();
            let mut f = vec![
                "bias".to_string(),
                format!("w={w}"),
                format!("sh={}", shape(w)),
                format!("w-1={}", at(ii - 1)),
                format!("w+1={}", at(ii + 1)),
                format!("w-2={}", at(ii - 2)),
                format!("w+2={}", at(ii + 2)),
                format!("pos={}", position_bucket(i)),
                format!("first={first}"),
                format!("first2={first2}"),
                format!("w-2,w-1={}_{}", at(ii - 2), at(ii - 1)),
                format!("cue={}", last_cue(tokens, i, 0)),
                format!("cue2={}_{}", last_cue(tokens, i, 1), last_cue(tokens, i, 0)),
            ];
            for k in 1..=3.min(chars.len()) {
                f.push(format!("p{k}={}", chars[..k].iter().collect::<String>()));
                f.push(format!("s{k}={}", chars[chars.len() - k..].iter().collect::<String>()));
            }
            f
        })
        .collect()
}

/// The `skip`-th closest earlier token from a small set of function words.
fn last_cue(tokens: &[String], i: usize, skip: usize) -> &str {
    tokens[..i]
        .iter()
        .rev()
        .filter(|t| CUES.contains(&t.as_str()))
        .nth(skip)
        .map_or("<none>", |s| s.as_str())
}

#[derive(Debug, thiserror::Error)]
pub enum TaggerError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("gold sentence {0} is not BIO-valid")]
    InvalidGold(usize),
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported tagger format version {0}")]
    Version(u32),
    #[error("malformed model: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    index: HashMap<String, usize>,
    names: Vec<String>,
    weights: Vec<[f64; NUM_TAGS]>,
    /// Rows: 5 tags then START; columns: 5 tags then STOP (column 5 unused).
    transitions: [[f64; 7]; 7],
    pub averaged: bool,
}

fn structural_transitions() -> [[f64; 7]; 7] {
    let mut t = [[0.0; 7]; 7];
    for (r, row) in t.iter_mut().enumerate() {
        let prev = if r == START { None } else if r < NUM_TAGS { Some(Tag::ALL[r]) } else { continue };
        for (c, cell) in row.iter_mut().enumerate().take(NUM_TAGS) {
            if !transition_allowed(prev, Tag::ALL[c]) {
                *cell = f64::NEG_INFINITY;
            }
        }
    }
    for row in t.iter_mut() {
        row[START] = f64::NEG_INFINITY;
    }
    t[STOP] = [f64::NEG_INFINITY; 7];
    t[START][STOP] = f64::NEG_INFINITY;
    t
}

impl Default for TaggerModel {
    fn default() -> Self {
        TaggerModel::zero()
    }
}

impl TaggerModel {
    pub fn zero() -> Self {
        TaggerModel {
            index: HashMap::new(),
            names: Vec::new(),
            weights: Vec::new(),
            transitions: structural_transitions(),
            averaged: false,
        }
    }

    pub fn feature_count(&self) -> usize {
        self.names.len()
    }

    pub fn transition(&self, prev: Option<Tag>, next: Option<Tag>) -> f64 {
        let r = prev.map_or(START, Tag::index);
        let c = next.map_or(STOP, Tag::index);
        self.transitions[r][c]
    }

    /// Sets a transition weight; structurally invalid entries stay at minus infinity.
    pub fn set_transition(&mut self, prev: Option<Tag>, next: Option<Tag>, w: f64) {
        let r = prev.map_or(START, Tag::index);
        let c = next.map_or(STOP, Tag::index);
        if self.transitions[r][c].is_finite() {
            self.transitions[r][c] = w;
        }
    }

    pub fn feature_weight(&self, feature: &str, tag: Tag) -> f64 {
        self.index.get(feature).map_or(0.0, |&i| self.weights[i][tag.index()])
    }

    pub fn set_feature_weight(&mut self, feature: &str, tag: Tag, w: f64) {
        let i = self.intern(feature);
        self.weights[i][tag.index()] = w;
    }

    fn intern(&mut self, feature: &str) -> usize {
        if let Some(&i) = self.index.get(feature) {
            return i;
        }
        let i = self.names.len();
        self.index.insert(feature.to_string(), i);
        self.names.push(feature.to_string());
        self.weights.push([0.0; NUM_TAGS]);
        i
    }

    /// Emission score table, one row per token.
    pub fn emissions(&self, tokens: &[String]) -> Vec<[f64; NUM_TAGS]> {
        token_features(tokens)
            .iter()
            .map(|fs| {
                let mut row = [0.0; NUM_TAGS];
                for f in fs {
                    if let Some(&i) = self.index.get(f) {
                        for (k, r) in row.iter_mut().enumerate() {
                            *r += self.weights[i][k];
                        }
                    }
                }
                row
            })
            .collect()
    }

    /// Total score of a tag sequence under this model.
    pub fn score(&self, tokens: &[String], tags: &[Tag]) -> f64 {
        score_with(&self.emissions(tokens), &self.transitions, tags)
    }

    pub fn decode(&self, tokens: &[String]) -> TagSeq {
        let tags = viterbi(&self.emissions(tokens), &self.transitions);
        TagSeq::new(tokens.to_vec(), tags)
    }

    pub fn tag_text(&self, text: &str) -> TagSeq {
        self.decode(&tokenize(text))
    }

    pub fn to_json(&self) -> String {
        let mut features = Vec::new();
        let mut order: Vec<usize> = (0..self.names.len()).collect();
        order.sort_by(|&a, &b| self.names[a].cmp(&self.names[b]));
        for i in order {
            for t in Tag::ALL {
                let w = self.weights[i][t.index()];
                if w != 0.0 {
                    features.push((self.names[i].clone(), t.as_str().to_string(), w));
                }
            }
        }
        let transitions: Vec<Vec<Option<f64>>> = self
            .transitions
            .iter()
            .map(|row| row.iter().map(|&w| w.is_finite().then_some(w)).collect())
            .collect();
        let file = ModelFile { format_version: FORMAT_VERSION, averaged: self.averaged, features, transitions };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TaggerError> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(TaggerError::Version(file.format_version));
        }
        if file.transitions.len() != 7 || file.transitions.iter().any(|r| r.len() != 7) {
            return Err(TaggerError::Malformed("transitions must be 7x7".into()));
        }
        let mut m = TaggerModel::zero();
        m.averaged = file.averaged;
        for (f, tag, w) in file.features {
            let tag = Tag::parse(&tag).ok_or_else(|| TaggerError::Malformed(format!("unknown tag {tag:?}")))?;
            m.set_feature_weight(&f, tag, w);
        }
        let base = structural_transitions();
        for r in 0..7 {
            for c in 0..7 {
                m.transitions[r][c] = match (base[r][c].is_finite(), file.transitions[r][c]) {
                    (true, Some(w)) => w,
                    (true, None) => 0.0,
                    (false, _) => f64::NEG_INFINITY,
                };
            }
        }
        Ok(m)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    #[serde(default)]
    averaged: bool,
    features: Vec<(String, String, f64)>,
    transitions: Vec<Vec<Option<f64>>>,
}

fn score_with(emit: &[[f64; NUM_TAGS]], trans: &[[f64; 7]; 7], tags: &[Tag]) -> f64 {
    let mut prev = START;
    let mut s = 0.0;
    for (row, t) in emit.iter().zip(tags) {
        s += trans[prev][t.index()] + row[t.index()];
        prev = t.index();
    }
    s + trans[prev][STOP]
}

/// Exact decoding. Runs the recursion right-to-left so that the read-out from the left picks,
/// at each position, the most preferred tag among those that still admit an optimal completion.
fn viterbi(emit: &[[f64; NUM_TAGS]], trans: &[[f64; 7]; 7]) -> Vec<Tag> {
    let n = emit.len();
    if n == 0 {
        return Vec::new();
    }
    // beta[t][y]: best score of positions t.. given tag y at t (including STOP).
    let mut beta = vec![[f64::NEG_INFINITY; NUM_TAGS]; n];
    let mut next = vec![[0usize; NUM_TAGS]; n];
    for y in 0..NUM_TAGS {
        beta[n - 1][y] = emit[n - 1][y] + trans[y][STOP];
    }
    for t in (0..n - 1).rev() {
        for y in 0..NUM_TAGS {
            let mut best = f64::NEG_INFINITY;
            let mut arg = Tag::O.index();
            for cand in Tag::BY_PREFERENCE {
                let v = trans[y][cand.index()] + beta[t + 1][cand.index()];
                if v > best {
                    best = v;
                    arg = cand.index();
                }
            }
            beta[t][y] = emit[t][y] + best;
            next[t][y] = arg;
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut y = Tag::O.index();
    for cand in Tag::BY_PREFERENCE {
        let v = trans[START][cand.index()] + beta[0][cand.index()];
        if v > best {
            best = v;
            y = cand.index();
        }
    }
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        out.push(Tag::ALL[y]);
        if t + 1 < n {
            y = next[t][y];
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 8, seed: 0 }
    }
}

/// Averaged structured perceptron.
pub fn train(corpus: &[TagSeq], config: &TrainConfig) -> Result<TaggerModel, TaggerError> {
    if corpus.is_empty() {
        return Err(TaggerError::EmptyCorpus);
    }
    if let Some(i) = corpus.iter().position(|s| !s.is_valid()) {
        return Err(TaggerError::InvalidGold(i));
    }
    let mut model = TaggerModel::zero();
    let feats: Vec<Vec<Vec<usize>>> = corpus
        .iter()
        .map(|s| {
            token_features(&s.tokens)
                .into_iter()
                .map(|fs| fs.iter().map(|f| model.intern(f)).collect())
                .collect()
        })
        .collect();
    let nf = model.names.len();
    let mut acc_w = vec![[0.0; NUM_TAGS]; nf];
    let mut acc_t = [[0.0; 7]; 7];
    let mut c = 1.0;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = crate::rng::substream(config.seed, &[crate::rng::stream::TRAIN]);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &si in &order {
            let gold = &corpus[si].tags;
            let emit: Vec<[f64; NUM_TAGS]> = feats[si]
                .iter()
                .map(|fs| {
                    let mut row = [0.0; NUM_TAGS];
                    for &f in fs {
                        for (k, r) in row.iter_mut().enumerate() {
                            *r += model.weights[f][k];
                        }
                    }
                    row
                })
                .collect();
            let pred = viterbi(&emit, &model.transitions);
            if &pred != gold {
                for (t, fs) in feats[si].iter().enumerate() {
                    let (g, p) = (gold[t].index(), pred[t].index());
                    if g == p {
                        continue;
                    }
                    for &f in fs {
                        model.weights[f][g] += 1.0;
                        model.weights[f][p] -= 1.0;
                        acc_w[f][g] += c;
                        acc_w[f][p] -= c;
                    }
                }
                let mut bump = |seq: &[Tag], d: f64, model: &mut TaggerModel| {
                    let mut prev = START;
                    for t in seq.iter().map(|t| t.index()).chain(std::iter::once(STOP)) {
                        model.transitions[prev][t] += d;
                        acc_t[prev][t] += c * d;
                        prev = t;
                    }
                };
                bump(gold, 1.0, &mut model);
                bump(&pred, -1.0, &mut model);
            }
            c += 1.0;
        }
    }
    for (w, a) in model.weights.iter_mut().zip(&acc_w) {
        for k in 0..NUM_TAGS {
            w[k] -= a[k] / c;
        }
    }
    for r in 0..7 {
        for col in 0..7 {
            if model.transitions[r][col].is_finite() {
                model.transitions[r][col] -= acc_t[r][col] / c;
            }
        }
    }
    model.averaged = true;
    Ok(model)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SpanCounts {
    pub tp: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl SpanCounts {
    pub fn precision(&self) -> f64 {
        if self.predicted == 0 { 1.0 } else { self.tp as f64 / self.predicted as f64 }
    }

    pub fn recall(&self) -> f64 {
        if self.gold == 0 { 1.0 } else { self.tp as f64 / self.gold as f64 }
    }

    pub fn f1(&self) -> f64 {
        if self.predicted == 0 && self.gold == 0 {
            return 1.0;
        }
        if self.tp == 0 {
            return 0.0;
        }
        let (p, r) = (self.precision(), self.recall());
        2.0 * p * r / (p + r)
    }
}

/// Per-type span counts of `pred` against `gold`, as (nav, int).
pub fn span_counts(gold: &[Tag], pred: &[Tag]) -> (SpanCounts, SpanCounts) {
    let g = spans(gold);
    let p = spans(pred);
    let mut out = (SpanCounts::default(), SpanCounts::default());
    for (kind, counts) in [(MilestoneKind::Navigation, &mut out.0), (MilestoneKind::Interaction, &mut out.1)] {
        let gk: Vec<_> = g.iter().filter(|s| s.0 == kind).collect();
        let pk: Vec<_> = p.iter().filter(|s| s.0 == kind).collect();
        counts.gold += gk.len();
        counts.predicted += pk.len();
        counts.tp += pk.iter().filter(|s| gk.contains(s)).count();
    }
    out
}

/// Micro-averaged span F1 per type over a held-out set: (nav_f1, int_f1).
pub fn evaluate_f1(model: &TaggerModel, heldout: &[TagSeq]) -> (f64, f64) {
    let preds: Vec<Vec<Tag>> = heldout.iter().map(|s| model.decode(&s.tokens).tags).collect();
    f1_of(heldout.iter().map(|s| s.tags.as_slice()).zip(preds.iter().map(|p| p.as_slice())))
}

pub fn f1_of<'a>(pairs: impl Iterator<Item = (&'a [Tag], &'a [Tag])>) -> (f64, f64) {
    let (mut nav, mut int) = (SpanCounts::default(), SpanCounts::default());
    for (g, p) in pairs {
        let (n, i) = span_counts(g, p);
        nav.tp += n.tp;
        nav.predicted += n.predicted;
        nav.gold += n.gold;
        int.tp += i.tp;
        int.predicted += i.predicted;
        int.gold += i.gold;
    }
    (nav.f1(), int.f1())
}
