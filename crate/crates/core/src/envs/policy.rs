use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::common::N_DISCRETE_STATES;
use super::task::{LearnerKind, MetaTask};

/// Number of inputs of the linear policy, including the constant bias input.
pub const N_FEATURES: usize = 5;

/// Trainable meta-policy parameters and bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub kind: LearnerKind,
    pub n_actions: usize,
    /// Row-major `N_DISCRETE_STATES x n_actions` action values (tabular learner only).
    pub q_table: Vec<f64>,
    /// Row-major `n_actions x N_FEATURES` weights (linear learner only).
    pub weights: Vec<f64>,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub training_step: u64,
    pub episodes_trained: u64,
    pub training_progress: f64,
}

impl PolicyState {
    pub fn untrained(task: &MetaTask) -> Self {
        let n_actions = task.task_id.n_actions();
        let p = &task.policy;
        let (q_table, weights) = match p.learner {
            LearnerKind::QLearning => (vec![0.0; N_DISCRETE_STATES * n_actions], Vec::new()),
            LearnerKind::LinearEs => (Vec::new(), vec![0.0; n_actions * N_FEATURES]),
            LearnerKind::Random => (Vec::new(), Vec::new()),
        };
        Self {
            kind: p.learner,
            n_actions,
            q_table,
            weights,
            epsilon: p.epsilon,
            learning_rate: p.learning_rate,
            gamma: p.gamma,
            sigma: p.sigma,
            training_step: 0,
            episodes_trained: 0,
            training_progress: 0.0,
        }
    }

    /// SHA-256 of the JSON serialization.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("policy state serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn q_row(&self, s: usize) -> &[f64] {
        &self.q_table[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Greedy action; ties go to the lowest index.
    pub fn greedy(&self, s: usize) -> usize {
        let row = self.q_row(s);
        let mut best = 0;
        for (a, q) in row.iter().enumerate() {
            if *q > row[best] {
                best = a;
            }
        }
        best
    }

    /// Picks a discrete action. The random learner samples uniformly; the
    /// tabular learner is epsilon-greedy while learning and greedy otherwise.
    pub fn choose(&self, s: usize, learning: bool, rng: &mut ChaCha8Rng) -> usize {
        match self.kind {
            LearnerKind::QLearning => {
                if learning && rng.random::<f64>() < self.epsilon {
                    rng.random_range(0..self.n_actions)
                } else {
                    self.greedy(s)
                }
            }
            _ => rng.random_range(0..self.n_actions),
        }
    }

    /// One-step Q-learning update; `next = None` marks a terminal transition.
    pub fn q_update(&mut self, s: usize, a: usize, r: f64, next: Option<usize>) {
        let target = match next {
            Some(n) => r + self.gamma * self.q_row(n).iter().copied().fold(f64::NEG_INFINITY, f64::max),
            None => r,
        };
        let idx = s * self.n_actions + a;
        self.q_table[idx] += self.learning_rate * (target - self.q_table[idx]);
        self.training_step += 1;
    }

    /// Probability of each discrete action in state `s` under the acting rule.
    pub fn action_probs(&self, s: usize, learning: bool) -> Vec<f64> {
        let n = self.n_actions;
        match self.kind {
            LearnerKind::QLearning => {
                let eps = if learning { self.epsilon } else { 0.0 };
                let mut p = vec![eps / n as f64; n];
                p[self.greedy(s)] += 1.0 - eps;
                p
            }
            _ => vec![1.0 / n as f64; n],
        }
    }

    /// Linear policy output squashed into [0, 1].
    pub fn linear_action(&self, features: &[f64; N_FEATURES]) -> Vec<f64> {
        (0..self.n_actions)
            .map(|a| {
                let row = &self.weights[a * N_FEATURES..(a + 1) * N_FEATURES];
                let z: f64 = row.iter().zip(features).map(|(w, f)| w * f).sum();
                1.0 / (1.0 + (-z).exp())
            })
            .collect()
    }

    /// Log density of the mean action under the isotropic Gaussian perturbation law.
    pub fn gaussian_log_prob(&self) -> f64 {
        let var = self.sigma * self.sigma;
        -0.5 * self.n_actions as f64 * (2.0 * std::f64::consts::PI * var).ln()
    }

    pub fn gaussian_entropy(&self) -> f64 {
        let var = self.sigma * self.sigma;
        0.5 * self.n_actions as f64 * (1.0 + (2.0 * std::f64::consts::PI * var).ln())
    }
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

pub fn softmax(q: &[f64]) -> Vec<f64> {
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = q.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}
