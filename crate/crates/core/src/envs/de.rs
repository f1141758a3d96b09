use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::common::{argmin, diversity, discrete_state, matrix, mean, median, std, uniform_point, ContextBuilder, CountingObjective, RewardWindow};
use super::policy::{entropy, softmax};
use super::{Action, EnvError, EpisodeLog, LearnerKind, Run, StepRecord};
use crate::rsl::Value;

pub(crate) const MEMORY_SIZE: usize = 6;
const HISTORY_LEN: usize = 20;

/// SHADE-style success-history memory for F and Cr.
#[derive(Clone, Debug)]
pub(crate) struct ShadeMemory {
    m_f: [f64; MEMORY_SIZE],
    m_cr: [f64; MEMORY_SIZE],
    k: usize,
    s_f: Vec<f64>,
    s_cr: Vec<f64>,
    s_w: Vec<f64>,
}

impl ShadeMemory {
    pub(crate) fn new() -> Self {
        Self {
            m_f: [0.5; MEMORY_SIZE],
            m_cr: [0.5; MEMORY_SIZE],
            k: 0,
            s_f: Vec::new(),
            s_cr: Vec::new(),
            s_w: Vec::new(),
        }
    }

    /// Samples (F, Cr) around a random memory slot.
    pub(crate) fn sample(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let r = rng.random_range(0..MEMORY_SIZE);
        let z: f64 = rng.sample(StandardNormal);
        let cr = (self.m_cr[r] + 0.1 * z).clamp(0.0, 1.0);
        let f = loop {
            let u: f64 = rng.random();
            let x = self.m_f[r] + 0.1 * (std::f64::consts::PI * (u - 0.5)).tan();
            if x > 0.0 {
                break x.min(1.0);
            }
        };
        (f, cr)
    }

    pub(crate) fn record(&mut self, f: f64, cr: f64, gain: f64) {
        self.s_f.push(f);
        self.s_cr.push(cr);
        self.s_w.push(gain);
    }

    /// Weighted Lehmer mean update at the end of a generation.
    pub(crate) fn update(&mut self) {
        if self.s_f.is_empty() {
            return;
        }
        let total: f64 = self.s_w.iter().sum();
        if total > 0.0 {
            let w: Vec<f64> = self.s_w.iter().map(|x| x / total).collect();
            self.m_cr[self.k] = w.iter().zip(&self.s_cr).map(|(w, c)| w * c).sum();
            let num: f64 = w.iter().zip(&self.s_f).map(|(w, f)| w * f * f).sum();
            let den: f64 = w.iter().zip(&self.s_f).map(|(w, f)| w * f).sum();
            if den > 0.0 {
                self.m_f[self.k] = num / den;
            }
            self.k = (self.k + 1) % MEMORY_SIZE;
        }
        self.s_f.clear();
        self.s_cr.clear();
        self.s_w.clear();
    }
}

/// `count` distinct indices in `0..n`, all different from `exclude`.
pub(crate) fn distinct(rng: &mut ChaCha8Rng, n: usize, exclude: usize, count: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let r = rng.random_range(0..n);
        if r != exclude && !out.contains(&r) {
            out.push(r);
        }
    }
    out
}

/// Pulls an out-of-range coordinate halfway back toward the parent.
pub(crate) fn repair(v: &mut [f64], parent: &[f64], lo: f64, hi: f64) {
    for (t, p) in v.iter_mut().zip(parent) {
        if *t < lo {
            *t = (lo + p) / 2.0;
        } else if *t > hi {
            *t = (hi + p) / 2.0;
        }
    }
}

pub(crate) fn binomial(rng: &mut ChaCha8Rng, target: &[f64], donor: &[f64], cr: f64) -> Vec<f64> {
    let dim = target.len();
    let jrand = rng.random_range(0..dim);
    (0..dim)
        .map(|d| if d == jrand || rng.random::<f64>() < cr { donor[d] } else { target[d] })
        .collect()
}

pub(super) fn run(r: &mut Run) -> Result<EpisodeLog, EnvError> {
    let np = r.task.optimizer.population_size;
    let wanted = r.wanted();
    let budget = r.fe_budget;
    let instance = r.instance;
    let mut obj = CountingObjective::new(instance, budget);
    let dim = obj.dim();
    let (lo, hi) = (obj.lower(), obj.upper());
    let mut rng = r.optimizer_rng();
    let mut arng = r.agent_rng();

    let mut pop: Vec<Vec<f64>> = (0..np).map(|_| uniform_point(&mut rng, dim, lo, hi)).collect();
    let mut costs: Vec<f64> = pop.iter().map(|x| obj.eval(x)).collect();
    let mut survival = vec![0.0; np];
    let mut best = argmin(&costs);
    let mut gbest = costs[best];
    let y_initial = gbest;
    let init_div = diversity(&pop).max(f64::MIN_POSITIVE);
    let mut div = init_div;
    let mut memory = ShadeMemory::new();
    let mut history: Vec<f64> = Vec::new();
    let mut ema = 0.0;
    let mut window = RewardWindow::new(HISTORY_LEN);
    let mut last_improve: Option<u64> = None;
    let mut pending: Option<(usize, usize, f64)> = None;
    let mut steps = Vec::new();
    let mut generation = 0u64;
    let is_q = r.policy.kind == LearnerKind::QLearning;

    'run: loop {
        for i in 0..np {
            if obj.remaining() == 0 {
                break 'run;
            }
            let progress = obj.fes() as f64 / budget as f64;
            let improved = last_improve.is_some_and(|f| obj.fes() - f <= np as u64);
            let s = discrete_state(progress, improved, div / init_div);
            if let Some((ps, pa, pr)) = pending.take() {
                if r.learning && is_q {
                    r.policy.q_update(ps, pa, pr, Some(s));
                }
            }
            let action = r.policy.choose(s, r.learning, &mut arng);

            let (f, cr) = memory.sample(&mut rng);
            let x = &pop[i];
            let trial = match action {
                0 => {
                    let k = distinct(&mut rng, np, i, 3);
                    let donor: Vec<f64> = (0..dim).map(|d| pop[k[0]][d] + f * (pop[k[1]][d] - pop[k[2]][d])).collect();
                    binomial(&mut rng, x, &donor, cr)
                }
                1 => {
                    let k = distinct(&mut rng, np, i, 3);
                    let kk: f64 = rng.random();
                    (0..dim)
                        .map(|d| x[d] + kk * (pop[k[0]][d] - x[d]) + f * (pop[k[1]][d] - pop[k[2]][d]))
                        .collect()
                }
                _ => {
                    let k = distinct(&mut rng, np, i, 4);
                    let donor: Vec<f64> = (0..dim)
                        .map(|d| pop[best][d] + f * (pop[k[0]][d] - pop[k[1]][d]) + f * (pop[k[2]][d] - pop[k[3]][d]))
                        .collect();
                    binomial(&mut rng, x, &donor, cr)
                }
            };
            let mut trial = trial;
            repair(&mut trial, x, lo, hi);
            let trial_cost = obj.eval(&trial);
            let parent_cost = costs[i];
            let parent_age = survival[i];
            let accepted = trial_cost <= parent_cost;
            if trial_cost < parent_cost {
                memory.record(f, cr, parent_cost - trial_cost);
            }
            if accepted {
                pop[i] = trial;
                costs[i] = trial_cost;
                survival[i] = 0.0;
                div = diversity(&pop);
            } else {
                survival[i] += 1.0;
            }
            let prev_gbest = gbest;
            if trial_cost < gbest {
                gbest = trial_cost;
                best = i;
                last_improve = Some(obj.fes());
            }
            let gbest_improve = prev_gbest - gbest;
            let mean_c = mean(&costs);
            let std_c = std(&costs);
            if gbest_improve > 0.0 {
                let scale = mean_c.abs().max(std_c).max(gbest.abs()).max(1e-12);
                let norm = gbest_improve / scale;
                if history.len() == HISTORY_LEN {
                    history.remove(0);
                }
                history.push(norm);
                ema = 0.9 * ema + 0.1 * norm;
            }

            let fes = obj.fes();
            let mut b = ContextBuilder::new(wanted);
            b.put("survival", || Value::from(survival.clone()));
            b.put("pointer", || Value::from(i));
            b.put("population", || Value::from(matrix(&pop, dim)));
            b.put("costs", || Value::from(costs.clone()));
            b.put("parent_cost", || Value::Num(parent_cost));
            b.put("trial_cost", || Value::Num(trial_cost));
            b.put("gbest_cost", || Value::Num(gbest));
            b.put("median_cost", || Value::Num(median(&costs)));
            b.put("mean_cost", || Value::Num(mean_c));
            b.put("std_cost", || Value::Num(std_c));
            b.put("diversity", || Value::Num(div));
            b.put("FEs", || Value::Num(fes as f64));
            b.put("MaxFEs", || Value::Num(budget as f64));
            b.put("progress", || Value::Num(fes as f64 / budget as f64));
            b.put("action", || Value::from(action));
            b.put("generation", || Value::Num(generation as f64));
            b.put("accepted", || Value::Num(accepted as u8 as f64));
            b.put("delta_cost", || Value::Num(parent_cost - trial_cost));
            b.put("gbest_improve", || Value::Num(gbest_improve));
            b.put("pointer_age", || Value::Num(parent_age));
            let policy = &*r.policy;
            b.put_opt("q_values", || is_q.then(|| Value::from(policy.q_row(s).to_vec())));
            b.put_opt("greedy_action", || is_q.then(|| Value::from(policy.greedy(s))));
            b.put_opt("q_span", || {
                is_q.then(|| {
                    let row = policy.q_row(s);
                    let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
                    Value::Num(hi - lo)
                })
            });
            b.put_opt("q_entropy", || is_q.then(|| Value::Num(entropy(&softmax(policy.q_row(s))))));
            b.put_opt("recent_reward_mean", || window.mean().map(Value::Num));
            b.put_opt("recent_reward_max", || window.max().map(Value::Num));
            b.put_opt("training_step", || is_q.then_some(Value::Num(policy.training_step as f64)));
            b.put("improvement_history", || Value::from(history.clone()));
            b.put("long_ema_improvement", || Value::Num(ema));
            let reward = r.emit(b.finish())?;

            window.push(reward);
            pending = Some((s, action, reward));
            steps.push(StepRecord {
                step: steps.len() as u64,
                action: Action::Discrete(action),
                reward,
                gbest,
            });
        }
        memory.update();
        generation += 1;
    }
    if let Some((ps, pa, pr)) = pending {
        if r.learning && is_q {
            r.policy.q_update(ps, pa, pr, None);
        }
    }
    Ok(r.finish(steps, y_initial, gbest, obj.fes()))
}
