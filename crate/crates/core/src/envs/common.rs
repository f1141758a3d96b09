use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::context::RewardContext;
use crate::problems::ProblemInstance;
use crate::rsl::{Matrix, Value};

/// Objective wrapper that counts every evaluation and refuses to exceed its budget.
pub struct CountingObjective<'a> {
    instance: &'a ProblemInstance,
    fes: u64,
    budget: u64,
}

impl<'a> CountingObjective<'a> {
    pub fn new(instance: &'a ProblemInstance, budget: u64) -> Self {
        Self {
            instance,
            fes: 0,
            budget,
        }
    }

    pub fn fes(&self) -> u64 {
        self.fes
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn remaining(&self) -> u64 {
        self.budget - self.fes
    }

    pub fn dim(&self) -> usize {
        self.instance.dimension()
    }

    pub fn lower(&self) -> f64 {
        self.instance.lower_bound()
    }

    pub fn upper(&self) -> f64 {
        self.instance.upper_bound()
    }

    pub fn eval(&mut self, x: &[f64]) -> f64 {
        assert!(self.fes < self.budget, "function evaluation budget exhausted");
        self.fes += 1;
        self.instance
            .evaluate(x)
            .expect("point dimension is fixed by the optimizer")
    }
}

pub fn uniform_point(rng: &mut ChaCha8Rng, dim: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn std(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// Mean over dimensions of the per-dimension standard deviation.
pub fn diversity(pop: &[Vec<f64>]) -> f64 {
    if pop.is_empty() {
        return 0.0;
    }
    let dim = pop[0].len();
    let n = pop.len() as f64;
    let mut total = 0.0;
    for d in 0..dim {
        let m = pop.iter().map(|x| x[d]).sum::<f64>() / n;
        let var = pop.iter().map(|x| (x[d] - m) * (x[d] - m)).sum::<f64>() / n;
        total += var.sqrt();
    }
    total / dim as f64
}

pub fn matrix(rows: &[Vec<f64>], dim: usize) -> Matrix {
    let mut data = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        data.extend_from_slice(r);
    }
    Matrix::new(rows.len(), dim, data)
}

/// Builds a reward context, skipping fields the reward program never reads.
pub struct ContextBuilder<'w> {
    ctx: RewardContext,
    wanted: Option<&'w BTreeSet<String>>,
}

impl<'w> ContextBuilder<'w> {
    pub fn new(wanted: Option<&'w BTreeSet<String>>) -> Self {
        Self {
            ctx: RewardContext::new(),
            wanted,
        }
    }

    pub fn wants(&self, name: &str) -> bool {
        self.wanted.is_none_or(|w| w.contains(name))
    }

    pub fn put(&mut self, name: &str, value: impl FnOnce() -> Value) {
        if self.wants(name) {
            self.ctx.set(name, value());
        }
    }

    pub fn put_opt(&mut self, name: &str, value: impl FnOnce() -> Option<Value>) {
        if self.wants(name) {
            self.ctx.set_opt(name, value());
        }
    }

    pub fn finish(self) -> RewardContext {
        self.ctx
    }
}

/// Sliding window over the last `cap` rewards.
#[derive(Clone, Debug, Default)]
pub struct RewardWindow {
    values: std::collections::VecDeque<f64>,
    cap: usize,
}

impl RewardWindow {
    pub fn new(cap: usize) -> Self {
        Self {
            values: Default::default(),
            cap,
        }
    }

    pub fn push(&mut self, r: f64) {
        if self.values.len() == self.cap {
            self.values.pop_front();
        }
        self.values.push_back(r);
    }

    pub fn mean(&self) -> Option<f64> {
        if self.values.is_empty() {
            None
        } else {
            Some(self.values.iter().sum::<f64>() / self.values.len() as f64)
        }
    }

    pub fn max(&self) -> Option<f64> {
        self.values.iter().copied().reduce(f64::max)
    }

    #[cfg(test)]
    pub fn to_vec(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }
}

/// Discrete state used by the tabular learner: progress (5 bins) x whether the
/// best cost improved recently (2) x diversity relative to its initial value (4 bins).
pub fn discrete_state(progress: f64, improved: bool, rel_diversity: f64) -> usize {
    let p = ((progress * 5.0).floor() as usize).min(4);
    let d = if rel_diversity < 0.1 {
        0
    } else if rel_diversity < 0.3 {
        1
    } else if rel_diversity < 0.6 {
        2
    } else {
        3
    };
    (p * 2 + improved as usize) * 4 + d
}

pub const N_DISCRETE_STATES: usize = 40;
