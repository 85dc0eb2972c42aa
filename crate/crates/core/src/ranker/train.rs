use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::NUM_FEATURES;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Mean cross-entropy of sigmoid(w·x + b) against the labels.
    #[default]
    Logistic,
    /// Mean hinge loss max(0, 1 - (s_pos - s_neg)) over positive/negative
    /// pairs within each question.
    PairwiseHinge,
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logistic" => Ok(Objective::Logistic),
            "pairwise-hinge" => Ok(Objective::PairwiseHinge),
            other => Err(format!("unknown objective `{other}` (expected logistic|pairwise-hinge)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            epochs: 2000,
            l2: 1e-4,
            objective: Objective::Logistic,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// A training problem over standardized features. Parameters are laid out as
/// the weights followed by the bias. The bias is not regularized.
#[derive(Debug, Clone)]
pub struct Problem {
    pub x: Vec<[f64; NUM_FEATURES]>,
    pub y: Vec<bool>,
    /// Instances of one question, for the pairwise objective.
    pub groups: Vec<Range<usize>>,
    pub objective: Objective,
    pub l2: f64,
}

impl Problem {
    fn dot(w: &[f64], x: &[f64; NUM_FEATURES]) -> f64 {
        w.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.groups.iter().flat_map(move |g| {
            g.clone()
                .filter(|&i| self.y[i])
                .flat_map(move |p| g.clone().filter(|&n| !self.y[n]).map(move |n| (p, n)))
        })
    }

    fn penalty(&self, w: &[f64]) -> f64 {
        0.5 * self.l2 * w.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn loss(&self, params: &[f64]) -> f64 {
        let (w, b) = params.split_at(NUM_FEATURES);
        let b = b[0];
        let data = match self.objective {
            Objective::Logistic => {
                let n = self.x.len().max(1) as f64;
                self.x
                    .iter()
                    .zip(&self.y)
                    .map(|(x, &y)| {
                        let z = Self::dot(w, x) + b;
                        softplus(z) - if y { z } else { 0.0 }
                    })
                    .sum::<f64>()
                    / n
            }
            Objective::PairwiseHinge => {
                let mut total = 0.0;
                let mut count = 0usize;
                for (p, n) in self.pairs() {
                    let margin = Self::dot(w, &self.x[p]) - Self::dot(w, &self.x[n]);
                    total += (1.0 - margin).max(0.0);
                    count += 1;
                }
                total / count.max(1) as f64
            }
        };
        data + self.penalty(w)
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let (w, b) = params.split_at(NUM_FEATURES);
        let b = b[0];
        let mut g = vec![0.0; NUM_FEATURES + 1];
        match self.objective {
            Objective::Logistic => {
                let n = self.x.len().max(1) as f64;
                for (x, &y) in self.x.iter().zip(&self.y) {
                    let r = sigmoid(Self::dot(w, x) + b) - if y { 1.0 } else { 0.0 };
                    for (gi, xi) in g.iter_mut().zip(x) {
                        *gi += r * xi;
                    }
                    g[NUM_FEATURES] += r;
                }
                g.iter_mut().for_each(|v| *v /= n);
            }
            Objective::PairwiseHinge => {
                let mut count = 0usize;
                for (p, n) in self.pairs() {
                    count += 1;
                    let margin = Self::dot(w, &self.x[p]) - Self::dot(w, &self.x[n]);
                    if margin < 1.0 {
                        for (k, gk) in g.iter_mut().take(NUM_FEATURES).enumerate() {
                            *gk -= self.x[p][k] - self.x[n][k];
                        }
                    }
                }
                let c = count.max(1) as f64;
                g.iter_mut().for_each(|v| *v /= c);
            }
        }
        for (gk, wk) in g.iter_mut().zip(w) {
            *gk += self.l2 * wk;
        }
        g
    }

    /// Full-batch gradient descent from zero. Returns the parameters and the
    /// loss before each epoch followed by the final loss.
    pub fn descend(&self, lr: f64, epochs: usize) -> (Vec<f64>, Vec<f64>) {
        let mut params = vec![0.0; NUM_FEATURES + 1];
        let mut losses = Vec::with_capacity(epochs + 1);
        for _ in 0..epochs {
            losses.push(self.loss(&params));
            let g = self.gradient(&params);
            for (p, gi) in params.iter_mut().zip(&g) {
                *p -= lr * gi;
            }
        }
        losses.push(self.loss(&params));
        (params, losses)
    }
}
