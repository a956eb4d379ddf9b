//! Binary "subtask finished?" classifier used as the learned-checker ablation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::grounding::{GroundingConfig, Taxonomy};
use crate::milestone::MilestoneKind;
use crate::nn::{sigmoid, uniform_init, Adam};
use crate::perception::{apparent_distance, Detection};
use crate::world::{ActionKind, NUM_ACTIONS};

/// distance bucket (4) + visible + reachable + last action (13) + steps bucket (5) + milestone kind (2)
pub const BINARY_FEATURES: usize = 4 + 2 + NUM_ACTIONS + 5 + 2;
pub const FORMAT_VERSION: u32 = 1;

pub fn steps_bucket(steps: u32) -> usize {
    match steps {
        0 => 0,
        1 => 1,
        2..=3 => 2,
        4..=7 => 3,
        _ => 4,
    }
}

/// Symbolic features for the checker: how close the best match for a target looks, whether it is
/// visible and flagged reachable, the last action, time spent on the subtask and the milestone type.
pub fn binary_features(
    tax: &Taxonomy,
    grounding: &GroundingConfig,
    targets: &[&str],
    kind: Option<MilestoneKind>,
    detections: &[Detection],
    last_action: Option<ActionKind>,
    steps_in_subtask: u32,
) -> Vec<f64> {
    let mut f = vec![0.0; BINARY_FEATURES];
    let mut best: Option<&Detection> = None;
    for d in detections {
        let sim = targets.iter().map(|t| tax.phrase_similarity(t, &d.label)).fold(0.0, f64::max);
        if sim >= grounding.similarity_threshold && best.is_none_or(|b| d.score > b.score) {
            best = Some(d);
        }
    }
    match best {
        None => f[3] = 1.0,
        Some(d) => {
            let dist = apparent_distance(d);
            f[if dist <= 2.5 { 0 } else if dist <= 6.0 { 1 } else { 2 }] = 1.0;
            f[4] = 1.0;
        }
    }
    let reachable = detections.iter().any(|d| {
        d.reachable && targets.iter().any(|t| tax.phrase_similarity(t, &d.label) >= grounding.similarity_threshold)
    });
    f[5] = reachable as u8 as f64;
    if let Some(a) = last_action {
        f[6 + a.index()] = 1.0;
    }
    f[6 + NUM_ACTIONS + steps_bucket(steps_in_subtask)] = 1.0;
    match kind {
        Some(MilestoneKind::Navigation) => f[BINARY_FEATURES - 2] = 1.0,
        Some(MilestoneKind::Interaction) => f[BINARY_FEATURES - 1] = 1.0,
        None => {}
    }
    f
}

/// Two-layer scorer with a sigmoid output: tanh hidden layer, then a single logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryChecker {
    pub format_version: u32,
    pub input: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinaryTrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for BinaryTrainConfig {
    fn default() -> Self {
        BinaryTrainConfig { hidden: 16, epochs: 30, lr: 0.01, batch: 64, seed: 0 }
    }
}

impl BinaryChecker {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        BinaryChecker {
            format_version: FORMAT_VERSION,
            input,
            hidden,
            w1: vec![0.0; input * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    fn hidden_act(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|h| {
                let row = &self.w1[h * self.input..(h + 1) * self.input];
                (row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.b1[h]).tanh()
            })
            .collect()
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        let h = self.hidden_act(x);
        sigmoid(h.iter().zip(&self.w2).map(|(a, b)| a * b).sum::<f64>() + self.b2)
    }

    pub fn reached(&self, x: &[f64]) -> bool {
        self.probability(x) > 0.5
    }

    fn params(&self) -> Vec<f64> {
        let mut p = self.w1.clone();
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.push(self.b2);
        p
    }

    fn set_params(&mut self, p: &[f64]) {
        let (n1, h) = (self.w1.len(), self.hidden);
        self.w1.copy_from_slice(&p[..n1]);
        self.b1.copy_from_slice(&p[n1..n1 + h]);
        self.w2.copy_from_slice(&p[n1 + h..n1 + 2 * h]);
        self.b2 = p[n1 + 2 * h];
    }

    /// Gradient of the log loss for one example, accumulated into `g` (parameter order of `params`).
    fn accumulate_grad(&self, x: &[f64], y: bool, g: &mut [f64]) -> f64 {
        let h = self.hidden_act(x);
        let z: f64 = h.iter().zip(&self.w2).map(|(a, b)| a * b).sum::<f64>() + self.b2;
        let p = sigmoid(z);
        let t = y as u8 as f64;
        let dz = p - t;
        let (n1, hn) = (self.w1.len(), self.hidden);
        for j in 0..hn {
            g[n1 + hn + j] += dz * h[j];
            let dh = dz * self.w2[j] * (1.0 - h[j] * h[j]);
            g[n1 + j] += dh;
            for (i, xi) in x.iter().enumerate() {
                g[j * self.input + i] += dh * xi;
            }
        }
        g[n1 + 2 * hn] += dz;
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
    }

    /// Minibatch Adam on the log loss; deterministic for a fixed seed.
    pub fn train(data: &[(Vec<f64>, bool)], cfg: &BinaryTrainConfig) -> BinaryChecker {
        let input = data.first().map_or(BINARY_FEATURES, |d| d.0.len());
        let mut rng = crate::rng::substream(cfg.seed, &[crate::rng::stream::TRAIN, 0xB1]);
        let mut model = BinaryChecker::zeros(input, cfg.hidden);
        model.w1 = uniform_init(&mut rng, input * cfg.hidden, (1.0 / input as f64).sqrt());
        model.w2 = uniform_init(&mut rng, cfg.hidden, (1.0 / cfg.hidden as f64).sqrt());
        let mut params = model.params();
        let mut opt = Adam::new(params.len(), cfg.lr);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch.max(1)) {
                let mut g = vec![0.0; params.len()];
                for &i in chunk {
                    model.accumulate_grad(&data[i].0, data[i].1, &mut g);
                }
                g.iter_mut().for_each(|v| *v /= chunk.len() as f64);
                opt.step(&mut params, &g);
                model.set_params(&params);
            }
        }
        model
    }

    pub fn mean_loss(&self, data: &[(Vec<f64>, bool)]) -> f64 {
        let mut g = vec![0.0; self.params().len()];
        data.iter().map(|(x, y)| self.accumulate_grad(x, *y, &mut g)).sum::<f64>() / data.len().max(1) as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checker serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let m: BinaryChecker = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if m.format_version != FORMAT_VERSION {
            return Err(format!("unsupported checker format version {}", m.format_version));
        }
        if m.w1.len() != m.input * m.hidden || m.b1.len() != m.hidden || m.w2.len() != m.hidden {
            return Err("checker weight shapes disagree with metadata".into());
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_never_fire() {
        let m = BinaryChecker::zeros(BINARY_FEATURES, 8);
        let x = vec![1.0; BINARY_FEATURES];
        assert_eq!(m.probability(&x), 0.5);
        assert!(!m.reached(&x));
    }

    #[test]
    fn memorizes_a_boundary() {
        let tax = Taxonomy::shipped();
        let g = GroundingConfig::default();
        let boundary = binary_features(tax, &g, &["mug"], Some(MilestoneKind::Interaction), &[], Some(ActionKind::PickupObject), 3);
        let other = binary_features(tax, &g, &["mug"], Some(MilestoneKind::Interaction), &[], Some(ActionKind::MoveAhead), 2);
        let data = vec![(boundary.clone(), true), (other.clone(), false)];
        let m = BinaryChecker::train(&data, &BinaryTrainConfig { epochs: 300, ..Default::default() });
        assert!(m.reached(&boundary));
        assert!(!m.reached(&other));
        let back = BinaryChecker::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = vec![(vec![0.3, -1.2, 0.5], true), (vec![1.0, 0.2, -0.7], false)];
        let mut m = BinaryChecker::train(&data, &BinaryTrainConfig { hidden: 4, epochs: 3, ..Default::default() });
        let p = m.params();
        let mut g = vec![0.0; p.len()];
        for (x, y) in &data {
            m.accumulate_grad(x, *y, &mut g);
        }
        let h = 1e-5;
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i] += h;
            m.set_params(&q);
            let up = m.mean_loss(&data) * 2.0;
            q[i] -= 2.0 * h;
            m.set_params(&q);
            let down = m.mean_loss(&data) * 2.0;
            let num = (up - down) / (2.0 * h);
            assert!((num - g[i]).abs() <= 1e-6 * (1.0 + num.abs()), "param {i}: {num} vs {}", g[i]);
        }
    }
}
