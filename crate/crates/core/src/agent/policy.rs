//! Two-layer action scorer with a linear critic and a per-kind linear object selector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grounding::Taxonomy;
use crate::nn::{log_softmax, matvec, softmax, uniform_init};
use crate::perception::Detection;
use crate::world::{Action, ActionKind, NUM_ACTIONS};

use super::features::{featurize, instruction_mentions, selector_features, FEATURE_DIM, SELECTOR_DIM};
use super::{Agent, StepContext};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN: usize = 32;
/// Interaction kinds, in action-index order, that own a selector row.
pub const INTERACTIONS: [ActionKind; 7] = [
    ActionKind::PickupObject,
    ActionKind::PutObject,
    ActionKind::OpenObject,
    ActionKind::CloseObject,
    ActionKind::ToggleOnObject,
    ActionKind::ToggleOffObject,
    ActionKind::SliceObject,
];

fn selector_row(kind: ActionKind) -> usize {
    kind.index() - ActionKind::PickupObject.index()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub format_version: u32,
    pub feat_dim: usize,
    pub hidden: usize,
    /// hidden × feat_dim (the last feature is a constant 1, so no separate bias).
    #[serde(rename = "W1")]
    pub w1: Vec<f64>,
    /// NUM_ACTIONS × (hidden + 1); the extra column is the output bias.
    #[serde(rename = "W2")]
    pub w2: Vec<f64>,
    pub critic_w: Vec<f64>,
    /// INTERACTIONS.len() × SELECTOR_DIM.
    pub selector: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub config: serde_json::Value,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    /// Probabilities over action kinds; unavailable kinds get exactly 0.
    pub probs: Vec<f64>,
    pub value: f64,
}

/// Loss terms for one step; each contributes only when present.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepLoss {
    /// Expert action kind for the cross-entropy term.
    pub expert: Option<usize>,
    /// Sampled action and its advantage for the policy-gradient term.
    pub sampled: Option<(usize, f64)>,
    /// Discounted return for the critic.
    pub ret: Option<f64>,
    pub w_bc: f64,
    pub w_pg: f64,
    pub w_critic: f64,
}

impl PolicyModel {
    pub fn zeros(feat_dim: usize, hidden: usize) -> Self {
        PolicyModel {
            format_version: FORMAT_VERSION,
            feat_dim,
            hidden,
            w1: vec![0.0; hidden * feat_dim],
            w2: vec![0.0; NUM_ACTIONS * (hidden + 1)],
            critic_w: vec![0.0; feat_dim],
            selector: vec![0.0; INTERACTIONS.len() * SELECTOR_DIM],
            seed: 0,
            config: serde_json::Value::Null,
        }
    }

    pub fn random<R: Rng>(feat_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut m = PolicyModel::zeros(feat_dim, hidden);
        m.w1 = uniform_init(rng, hidden * feat_dim, (3.0 / feat_dim as f64).sqrt());
        m.w2 = uniform_init(rng, NUM_ACTIONS * (hidden + 1), (3.0 / hidden as f64).sqrt() * 0.5);
        m
    }

    pub fn default_shape<R: Rng>(rng: &mut R) -> Self {
        PolicyModel::random(FEATURE_DIM, DEFAULT_HIDDEN, rng)
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.w2.len() + self.critic_w.len()
    }

    /// Network and critic parameters, flattened (selector excluded).
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.w1.clone();
        p.extend(&self.w2);
        p.extend(&self.critic_w);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (a, b) = (self.w1.len(), self.w2.len());
        self.w1.copy_from_slice(&p[..a]);
        self.w2.copy_from_slice(&p[a..a + b]);
        self.critic_w.copy_from_slice(&p[a + b..]);
    }

    pub fn forward(&self, x: &[f64], available: &[bool; NUM_ACTIONS]) -> Forward {
        let hidden: Vec<f64> = matvec(&self.w1, self.hidden, self.feat_dim, x).into_iter().map(f64::tanh).collect();
        let mut hb = hidden.clone();
        hb.push(1.0);
        let logits = matvec(&self.w2, NUM_ACTIONS, self.hidden + 1, &hb);
        let idx: Vec<usize> = (0..NUM_ACTIONS).filter(|&i| available[i]).collect();
        let sub: Vec<f64> = idx.iter().map(|&i| logits[i]).collect();
        let mut probs = vec![0.0; NUM_ACTIONS];
        for (&i, p) in idx.iter().zip(softmax(&sub)) {
            probs[i] = p;
        }
        let value = self.critic_w.iter().zip(x).map(|(a, b)| a * b).sum();
        Forward { hidden, logits, probs, value }
    }

    /// Loss and gradient (in `params` order) for one step.
    pub fn step_grad(&self, x: &[f64], available: &[bool; NUM_ACTIONS], terms: &StepLoss, grad: &mut [f64]) -> f64 {
        let fw = self.forward(x, available);
        let idx: Vec<usize> = (0..NUM_ACTIONS).filter(|&i| available[i]).collect();
        let sub: Vec<f64> = idx.iter().map(|&i| fw.logits[i]).collect();
        let logp_sub = log_softmax(&sub);
        let mut logp = [f64::NEG_INFINITY; NUM_ACTIONS];
        for (&i, l) in idx.iter().zip(logp_sub) {
            logp[i] = l;
        }
        let mut loss = 0.0;
        let mut dz = [0.0; NUM_ACTIONS];
        if let Some(y) = terms.expert {
            loss += -terms.w_bc * logp[y];
            for &i in &idx {
                dz[i] += terms.w_bc * (fw.probs[i] - (i == y) as u8 as f64);
            }
        }
        if let Some((a, adv)) = terms.sampled {
            loss += -terms.w_pg * adv * logp[a];
            for &i in &idx {
                dz[i] += terms.w_pg * adv * (fw.probs[i] - (i == a) as u8 as f64);
            }
        }
        let (n1, n2) = (self.w1.len(), self.w2.len());
        let h1 = self.hidden + 1;
        let mut dh = vec![0.0; self.hidden];
        for (k, &g) in dz.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for j in 0..self.hidden {
                grad[n1 + k * h1 + j] += g * fw.hidden[j];
                dh[j] += g * self.w2[k * h1 + j];
            }
            grad[n1 + k * h1 + self.hidden] += g;
        }
        for j in 0..self.hidden {
            let dpre = dh[j] * (1.0 - fw.hidden[j] * fw.hidden[j]);
            if dpre == 0.0 {
                continue;
            }
            for (i, xi) in x.iter().enumerate() {
                grad[j * self.feat_dim + i] += dpre * xi;
            }
        }
        if let Some(r) = terms.ret {
            let err = r - fw.value;
            loss += terms.w_critic * 0.5 * err * err;
            for (i, xi) in x.iter().enumerate() {
                grad[n1 + n2 + i] += -terms.w_critic * err * xi;
            }
        }
        loss
    }

    pub fn selector_score(&self, kind: ActionKind, phi: &[f64]) -> f64 {
        let r = selector_row(kind) * SELECTOR_DIM;
        self.selector[r..r + SELECTOR_DIM].iter().zip(phi).map(|(a, b)| a * b).sum()
    }

    /// Cross-entropy of picking candidate `label` for `kind`; gradient added into `grad` (selector layout).
    pub fn selector_grad(&self, kind: ActionKind, candidates: &[Vec<f64>], label: usize, grad: &mut [f64]) -> f64 {
        let scores: Vec<f64> = candidates.iter().map(|c| self.selector_score(kind, c)).collect();
        let p = softmax(&scores);
        let r = selector_row(kind) * SELECTOR_DIM;
        for (j, c) in candidates.iter().enumerate() {
            let g = p[j] - (j == label) as u8 as f64;
            for (i, v) in c.iter().enumerate() {
                grad[r + i] += g * v;
            }
        }
        -p[label].max(1e-300).ln()
    }

    /// Reachable detections as selector candidates: (index into detections, features).
    pub fn candidates(&self, tax: &Taxonomy, instruction: &str, detections: &[Detection]) -> Vec<(usize, Vec<f64>)> {
        let mentions = instruction_mentions(tax, instruction);
        detections
            .iter()
            .enumerate()
            .filter(|(_, d)| d.reachable)
            .map(|(i, d)| (i, selector_features(tax, &mentions, d)))
            .collect()
    }

    /// Which kinds can be emitted: interactions need some reachable detection.
    pub fn availability(any_candidate: bool) -> [bool; NUM_ACTIONS] {
        let mut a = [true; NUM_ACTIONS];
        for k in INTERACTIONS {
            a[k.index()] = any_candidate;
        }
        a
    }

    /// Descending ranking of all kinds; interactions carry the selector's chosen mask and rank
    /// below every navigation kind when no reachable detection exists.
    pub fn rank(&self, x: &[f64], candidates: &[(usize, Vec<f64>)], detections: &[Detection]) -> Vec<(Action, f64)> {
        let available = Self::availability(!candidates.is_empty());
        let fw = self.forward(x, &available);
        let mut order: Vec<usize> = (0..NUM_ACTIONS).collect();
        order.sort_by(|&a, &b| {
            (available[b], fw.probs[b]).partial_cmp(&(available[a], fw.probs[a])).unwrap().then(a.cmp(&b))
        });
        order
            .into_iter()
            .map(|i| {
                let kind = ActionKind::from_index(i).unwrap();
                let action = if kind.is_interaction() {
                    match self.choose_object(kind, candidates) {
                        Some(j) => Action::interact(kind, detections[j].mask.clone()),
                        None => Action { kind, mask: None },
                    }
                } else {
                    Action::nav(kind)
                };
                (action, fw.probs[i])
            })
            .collect()
    }

    /// Index (into detections) of the selector's favourite candidate.
    pub fn choose_object(&self, kind: ActionKind, candidates: &[(usize, Vec<f64>)]) -> Option<usize> {
        candidates
            .iter()
            .map(|(i, c)| (*i, self.selector_score(kind, c)))
            .fold(None, |best: Option<(usize, f64)>, (i, s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((i, s)),
            })
            .map(|(i, _)| i)
    }

    pub fn mean_abs_weight(&self) -> f64 {
        let p = self.params();
        let all: Vec<f64> = p.iter().chain(&self.selector).copied().collect();
        crate::nn::mean_abs(&all)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let m: PolicyModel = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if m.format_version != FORMAT_VERSION {
            return Err(format!("unsupported policy format version {}", m.format_version));
        }
        if m.w1.len() != m.hidden * m.feat_dim
            || m.w2.len() != NUM_ACTIONS * (m.hidden + 1)
            || m.critic_w.len() != m.feat_dim
            || m.selector.len() != INTERACTIONS.len() * SELECTOR_DIM
        {
            return Err("policy weight shapes disagree with metadata".into());
        }
        if m.feat_dim != FEATURE_DIM {
            return Err(format!("policy expects {} features, this build produces {FEATURE_DIM}", m.feat_dim));
        }
        Ok(m)
    }
}

/// The learned agent: featurize, score, rank. Deterministic (argmax ranking).
pub struct PolicyAgent {
    pub model: PolicyModel,
    pub tax: &'static Taxonomy,
}

impl PolicyAgent {
    pub fn new(model: PolicyModel) -> Self {
        PolicyAgent { model, tax: Taxonomy::shipped() }
    }

    pub fn features(&self, ctx: &StepContext) -> Vec<f64> {
        featurize(self.tax, ctx.detections, ctx.held, ctx.instruction, ctx.memory, ctx.hint, &ctx.pose)
    }
}

impl Agent for PolicyAgent {
    fn name(&self) -> &str {
        "policy"
    }

    fn act(&mut self, ctx: &StepContext) -> Vec<(Action, f64)> {
        let x = self.features(ctx);
        let cands = self.model.candidates(self.tax, ctx.instruction, ctx.detections);
        self.model.rank(&x, &cands, ctx.detections)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn random_setup(seed: u64) -> (PolicyModel, Vec<f64>, [bool; NUM_ACTIONS]) {
        let mut rng = substream(seed, &[1]);
        let mut m = PolicyModel::random(9, 5, &mut rng);
        m.critic_w = uniform_init(&mut rng, 9, 1.0);
        let x: Vec<f64> = (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut avail = [true; NUM_ACTIONS];
        if rng.gen_bool(0.5) {
            avail = PolicyModel::availability(false);
        }
        (m, x, avail)
    }

    #[test]
    fn probabilities_form_a_simplex() {
        for seed in 0..200 {
            let (m, x, avail) = random_setup(seed);
            let fw = m.forward(&x, &avail);
            assert!(fw.probs.iter().all(|&p| p >= 0.0));
            assert!((fw.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (i, &a) in avail.iter().enumerate() {
                if !a {
                    assert_eq!(fw.probs[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..100 {
            let (mut m, x, avail) = random_setup(seed);
            let mut rng = substream(seed, &[2]);
            let legal: Vec<usize> = (0..NUM_ACTIONS).filter(|&i| avail[i]).collect();
            let terms = StepLoss {
                expert: Some(legal[rng.gen_range(0..legal.len())]),
                sampled: Some((legal[rng.gen_range(0..legal.len())], rng.gen_range(-3.0..3.0))),
                ret: Some(rng.gen_range(-5.0..5.0)),
                w_bc: 1.0,
                w_pg: 1.0,
                w_critic: 0.5,
            };
            let p = m.params();
            let mut g = vec![0.0; p.len()];
            m.step_grad(&x, &avail, &terms, &mut g);
            let h = 1e-5;
            let mut num = vec![0.0; p.len()];
            for i in 0..p.len() {
                let mut q = p.clone();
                q[i] += h;
                m.set_params(&q);
                let mut sink = vec![0.0; p.len()];
                let up = m.step_grad(&x, &avail, &terms, &mut sink);
                q[i] -= 2.0 * h;
                m.set_params(&q);
                let down = m.step_grad(&x, &avail, &terms, &mut sink);
                num[i] = (up - down) / (2.0 * h);
            }
            m.set_params(&p);
            let diff: f64 = g.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt() + num.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(diff / scale.max(1e-12) < 1e-5, "seed {seed}: relative error {}", diff / scale);
        }
    }

    #[test]
    fn zero_advantage_leaves_the_policy_alone() {
        let (m, x, avail) = random_setup(3);
        let mut g = vec![0.0; m.n_params()];
        let terms = StepLoss { sampled: Some((0, 0.0)), w_pg: 1.0, ..Default::default() };
        m.step_grad(&x, &avail, &terms, &mut g);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_candidates_demote_interactions() {
        let mut rng = substream(5, &[]);
        let mut m = PolicyModel::random(FEATURE_DIM, 8, &mut rng);
        // Make Pickup the network's favourite.
        let h1 = m.hidden + 1;
        m.w2[ActionKind::PickupObject.index() * h1 + m.hidden] = 50.0;
        let x = vec![0.1; FEATURE_DIM];
        let ranked = m.rank(&x, &[], &[]);
        assert!(ranked[0].0.kind.is_navigation() || ranked[0].0.kind == ActionKind::Stop);
        let first_int = ranked.iter().position(|(a, _)| a.kind.is_interaction()).unwrap();
        assert!(ranked[..first_int].iter().filter(|(a, _)| a.kind.is_navigation()).count() == 5);
        assert_eq!(m.rank(&x, &[], &[]), ranked);
    }

    #[test]
    fn persistence_round_trips() {
        let mut rng = substream(9, &[]);
        let m = PolicyModel::default_shape(&mut rng);
        let back = PolicyModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let mut bad: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        bad["hidden"] = 7.into();
        assert!(PolicyModel::from_json(&bad.to_string()).is_err());
    }
}
