use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::common::{argmin, discrete_state, diversity, matrix, uniform_point, ContextBuilder, CountingObjective};
use super::de::{binomial, distinct, repair, ShadeMemory};
use super::policy::entropy;
use super::{Action, EnvError, EpisodeLog, LearnerKind, Run, StepRecord};
use crate::rsl::Value;

const PBEST_RATE: f64 = 0.11;
const JDE_TAU: f64 = 0.1;

struct Population {
    x: Vec<Vec<f64>>,
    cost: Vec<f64>,
    archive: Vec<Vec<f64>>,
    capacity: usize,
    best: usize,
}

impl Population {
    fn gbest(&self) -> f64 {
        self.cost[self.best]
    }

    /// Index of a random individual among the best `ceil(rate * NP)` (at least 2).
    fn pbest(&self, rng: &mut ChaCha8Rng) -> usize {
        let n = self.x.len();
        let top = ((PBEST_RATE * n as f64).ceil() as usize).clamp(2, n);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|a, b| self.cost[*a].total_cmp(&self.cost[*b]));
        idx[rng.random_range(0..top)]
    }

    /// A random member of population ∪ archive, distinct from `i` and `r1`.
    fn union_member(&self, rng: &mut ChaCha8Rng, i: usize, r1: usize) -> &[f64] {
        let n = self.x.len();
        loop {
            let r = rng.random_range(0..n + self.archive.len());
            if r >= n {
                return &self.archive[r - n];
            }
            if r != i && r != r1 {
                return &self.x[r];
            }
        }
    }

    /// Greedy replacement; returns (accepted, strict gain).
    fn offer(&mut self, rng: &mut ChaCha8Rng, i: usize, trial: Vec<f64>, cost: f64) -> (bool, f64) {
        if cost > self.cost[i] {
            return (false, 0.0);
        }
        let gain = self.cost[i] - cost;
        if gain > 0.0 && self.capacity > 0 {
            let old = std::mem::replace(&mut self.x[i], trial);
            if self.archive.len() == self.capacity {
                let k = rng.random_range(0..self.capacity);
                self.archive[k] = old;
            } else {
                self.archive.push(old);
            }
        } else {
            self.x[i] = trial;
        }
        self.cost[i] = cost;
        if cost < self.cost[self.best] {
            self.best = i;
        }
        (true, gain)
    }

    fn current_to_pbest(&self, rng: &mut ChaCha8Rng, i: usize, f: f64) -> Vec<f64> {
        let pb = self.pbest(rng);
        let r1 = distinct(rng, self.x.len(), i, 1)[0];
        let r2 = self.union_member(rng, i, r1);
        let (x, p, a) = (&self.x[i], &self.x[pb], &self.x[r1]);
        (0..x.len()).map(|d| x[d] + f * (p[d] - x[d]) + f * (a[d] - r2[d])).collect()
    }
}

/// SHADE-style current-to-pbest/1 with archive.
struct Shade {
    memory: ShadeMemory,
    pointer: usize,
}

/// MadDE-style mixture of current-to-pbest/1 and current-to-rand/1 with
/// success-adapted strategy probabilities.
struct Madde {
    memory: ShadeMemory,
    prob: [f64; 2],
    wins: [f64; 2],
    tries: [f64; 2],
    pointer: usize,
}

/// jDE-style rand/1/bin with per-individual self-adaptive F and Cr.
struct Jde {
    f: Vec<f64>,
    cr: Vec<f64>,
    pointer: usize,
}

/// Per-variant internal state survives while the variant is switched out.
struct Pool {
    shade: Shade,
    madde: Madde,
    jde: Jde,
}

impl Pool {
    fn new(np: usize) -> Self {
        Self {
            shade: Shade {
                memory: ShadeMemory::new(),
                pointer: 0,
            },
            madde: Madde {
                memory: ShadeMemory::new(),
                prob: [0.5, 0.5],
                wins: [0.0; 2],
                tries: [0.0; 2],
                pointer: 0,
            },
            jde: Jde {
                f: vec![0.5; np],
                cr: vec![0.9; np],
                pointer: 0,
            },
        }
    }

    /// One trial of variant `a` on the next individual in its own cycle.
    fn trial(&mut self, a: usize, pop: &mut Population, obj: &mut CountingObjective, rng: &mut ChaCha8Rng) {
        let np = pop.x.len();
        let (lo, hi) = (obj.lower(), obj.upper());
        match a {
            0 => {
                let s = &mut self.shade;
                let i = s.pointer;
                let (f, cr) = s.memory.sample(rng);
                let donor = pop.current_to_pbest(rng, i, f);
                let mut t = binomial(rng, &pop.x[i], &donor, cr);
                repair(&mut t, &pop.x[i], lo, hi);
                let c = obj.eval(&t);
                let (_, gain) = pop.offer(rng, i, t, c);
                if gain > 0.0 {
                    s.memory.record(f, cr, gain);
                }
                s.pointer = (i + 1) % np;
                if s.pointer == 0 {
                    s.memory.update();
                }
            }
            1 => {
                let m = &mut self.madde;
                let i = m.pointer;
                let (f, cr) = m.memory.sample(rng);
                let k = usize::from(rng.random::<f64>() >= m.prob[0]);
                let mut t = if k == 0 {
                    let donor = pop.current_to_pbest(rng, i, f);
                    binomial(rng, &pop.x[i], &donor, cr)
                } else {
                    let r = distinct(rng, np, i, 3);
                    let x = &pop.x[i];
                    let kk: f64 = rng.random();
                    (0..x.len())
                        .map(|d| x[d] + kk * (pop.x[r[0]][d] - x[d]) + f * (pop.x[r[1]][d] - pop.x[r[2]][d]))
                        .collect()
                };
                repair(&mut t, &pop.x[i], lo, hi);
                let c = obj.eval(&t);
                let (_, gain) = pop.offer(rng, i, t, c);
                m.tries[k] += 1.0;
                if gain > 0.0 {
                    m.memory.record(f, cr, gain);
                    m.wins[k] += 1.0;
                }
                m.pointer = (i + 1) % np;
                if m.pointer == 0 {
                    m.memory.update();
                    let rate = [0, 1].map(|k| (m.wins[k] / m.tries[k].max(1.0)).max(0.01));
                    let total = rate[0] + rate[1];
                    m.prob = [(rate[0] / total).clamp(0.1, 0.9), 0.0];
                    m.prob[1] = 1.0 - m.prob[0];
                    m.wins = [0.0; 2];
                    m.tries = [0.0; 2];
                }
            }
            _ => {
                let j = &mut self.jde;
                let i = j.pointer;
                let f = if rng.random::<f64>() < JDE_TAU { 0.1 + 0.9 * rng.random::<f64>() } else { j.f[i] };
                let cr = if rng.random::<f64>() < JDE_TAU { rng.random::<f64>() } else { j.cr[i] };
                let r = distinct(rng, np, i, 3);
                let donor: Vec<f64> = (0..pop.x[i].len())
                    .map(|d| pop.x[r[0]][d] + f * (pop.x[r[1]][d] - pop.x[r[2]][d]))
                    .collect();
                let mut t = binomial(rng, &pop.x[i], &donor, cr);
                repair(&mut t, &pop.x[i], lo, hi);
                let c = obj.eval(&t);
                let (accepted, _) = pop.offer(rng, i, t, c);
                if accepted {
                    j.f[i] = f;
                    j.cr[i] = cr;
                }
                j.pointer = (i + 1) % np;
            }
        }
    }
}

pub(super) fn run(r: &mut Run) -> Result<EpisodeLog, EnvError> {
    let np = r.task.optimizer.population_size;
    let interval = r.task.optimizer.decision_interval;
    let wanted = r.wanted();
    let budget = r.fe_budget;
    let instance = r.instance;
    let mut obj = CountingObjective::new(instance, budget);
    let dim = obj.dim();
    let mut rng = r.optimizer_rng();
    let mut arng = r.agent_rng();

    let x: Vec<Vec<f64>> = (0..np).map(|_| uniform_point(&mut rng, dim, obj.lower(), obj.upper())).collect();
    let cost: Vec<f64> = x.iter().map(|p| obj.eval(p)).collect();
    let best = argmin(&cost);
    let mut pop = Population {
        x,
        cost,
        archive: Vec::new(),
        capacity: np,
        best,
    };
    let y_initial = pop.gbest();
    let scale = if y_initial > 0.0 { y_initial } else { 1.0 };
    let init_div = diversity(&pop.x).max(f64::MIN_POSITIVE);
    let mut pool = Pool::new(np);
    let mut improved = false;
    let mut pending: Option<(usize, usize, f64)> = None;
    let mut steps = Vec::new();
    let is_q = r.policy.kind == LearnerKind::QLearning;

    while obj.remaining() > 0 {
        let progress = obj.fes() as f64 / budget as f64;
        let s = discrete_state(progress, improved, diversity(&pop.x) / init_div);
        if let Some((ps, pa, pr)) = pending.take() {
            if r.learning && is_q {
                r.policy.q_update(ps, pa, pr, Some(s));
            }
        }
        let probs = r.policy.action_probs(s, r.learning);
        let action = r.policy.choose(s, r.learning, &mut arng);
        let last_cost = pop.gbest();
        let end = (obj.fes() + interval).min(budget);
        while obj.fes() < end {
            pool.trial(action, &mut pop, &mut obj, &mut rng);
        }
        let gbest = pop.gbest();
        improved = gbest < last_cost;

        let fes = obj.fes();
        let policy = &*r.policy;
        let mut b = ContextBuilder::new(wanted);
        b.put("last_cost", || Value::Num(last_cost));
        b.put("current_gbest", || Value::Num(gbest));
        b.put("cost_scale_factor", || Value::Num(scale));
        b.put("FEs", || Value::Num(fes as f64));
        b.put("MaxFEs", || Value::Num(budget as f64));
        b.put("action", || Value::from(action));
        b.put("population.group", || Value::from(matrix(&pop.x, dim)));
        b.put("population.cost", || Value::from(pop.cost.clone()));
        b.put("population.gbest", || Value::Num(gbest));
        b.put("population.gbest_solution", || Value::from(pop.x[pop.best].clone()));
        b.put("population.archive", || Value::from(matrix(&pop.archive, dim)));
        b.put("population.NP", || Value::from(np));
        b.put("population.NA", || Value::from(pop.capacity));
        b.put("population.dim", || Value::from(dim));
        b.put("policy_entropy", || Value::Num(entropy(&probs)));
        b.put("log_probability", || Value::Num(probs[action].ln()));
        b.put_opt("value_estimation", || {
            is_q.then(|| Value::Num(policy.q_row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)))
        });
        b.put_opt("gamma", || is_q.then_some(Value::Num(policy.gamma)));
        b.put_opt("learning_rate", || is_q.then_some(Value::Num(policy.learning_rate)));
        b.put_opt("training_progress", || is_q.then_some(Value::Num(policy.training_progress)));
        let reward = r.emit(b.finish())?;

        pending = Some((s, action, reward));
        steps.push(StepRecord {
            step: steps.len() as u64,
            action: Action::Discrete(action),
            reward,
            gbest,
        });
    }
    if let Some((ps, pa, pr)) = pending {
        if r.learning && is_q {
            r.policy.q_update(ps, pa, pr, None);
        }
    }
    Ok(r.finish(steps, y_initial, pop.gbest(), obj.fes()))
}
