use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::common::{argmin, diversity, matrix, mean, median, std, uniform_point, ContextBuilder, CountingObjective};
use super::policy::N_FEATURES;
use super::{Action, EnvError, EpisodeLog, LearnerKind, Run, StepRecord};
use crate::rsl::Value;

pub(crate) const N_GROUPS: usize = 5;
pub(crate) const N_PARAMS: usize = 7;
const REFRESH_GAP: u32 = 7;
const VMAX_FRACTION: f64 = 0.2;

/// Velocity-update parameters of one sub-swarm decoded from seven values in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct GroupParams {
    pub w: f64,
    pub mutation: f64,
    /// Acceleration coefficients for the CLPSO exemplar, FDR target, own pbest and gbest.
    pub c: [f64; 4],
}

impl GroupParams {
    /// w in [0.4, 0.9], mutation probability in [0, 0.01], and c1..c4 normalized
    /// to sum to 1 + 3 * scale (equal split when all four are zero).
    pub(crate) fn decode(a: &[f64]) -> Self {
        let a: Vec<f64> = a.iter().map(|x| x.clamp(0.0, 1.0)).collect();
        let total = 1.0 + 3.0 * a[2];
        let raw = [a[3], a[4], a[5], a[6]];
        let s: f64 = raw.iter().sum();
        let c = if s > 0.0 { raw.map(|x| total * x / s) } else { [total / 4.0; 4] };
        Self {
            w: 0.4 + 0.5 * a[0],
            mutation: 0.01 * a[1],
            c,
        }
    }
}

/// CLPSO learning probability of particle `i` out of `np`.
pub(crate) fn learning_probability(i: usize, np: usize) -> f64 {
    let t = if np > 1 { i as f64 / (np - 1) as f64 } else { 0.0 };
    0.05 + 0.45 * ((10.0 * t).exp() - 1.0) / (10f64.exp() - 1.0)
}

struct Swarm {
    x: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    cost: Vec<f64>,
    pbest: Vec<f64>,
    pbest_x: Vec<Vec<f64>>,
    gbest: usize,
    exemplar: Vec<Vec<usize>>,
    since_refresh: Vec<u32>,
    per_no_improve: Vec<f64>,
    pci: Vec<f64>,
}

impl Swarm {
    fn refresh_exemplar(&mut self, i: usize, rng: &mut ChaCha8Rng) {
        let np = self.x.len();
        let dim = self.x[i].len();
        let mut e = vec![i; dim];
        for slot in e.iter_mut() {
            if rng.random::<f64>() < self.pci[i] {
                let a = rng.random_range(0..np);
                let b = rng.random_range(0..np);
                *slot = if self.pbest[a] <= self.pbest[b] { a } else { b };
            }
        }
        if e.iter().all(|&j| j == i) && np > 1 {
            let d = rng.random_range(0..dim);
            let mut j = rng.random_range(0..np - 1);
            if j >= i {
                j += 1;
            }
            e[d] = j;
        }
        self.exemplar[i] = e;
        self.since_refresh[i] = 0;
    }

    /// Per-dimension FDR-PSO target: the pbest maximizing fitness gain over distance.
    fn fdr_target(&self, i: usize, d: usize) -> f64 {
        let mut best = f64::NEG_INFINITY;
        let mut target = self.pbest_x[i][d];
        for j in 0..self.x.len() {
            if j == i {
                continue;
            }
            let dist = (self.pbest_x[j][d] - self.x[i][d]).abs();
            if dist == 0.0 {
                continue;
            }
            let ratio = (self.cost[i] - self.pbest[j]) / dist;
            if ratio > best {
                best = ratio;
                target = self.pbest_x[j][d];
            }
        }
        target
    }

    fn group_best(&self, n_group: usize) -> Vec<f64> {
        let size = self.x.len() / n_group;
        (0..n_group)
            .map(|g| self.cost[g * size..(g + 1) * size].iter().copied().fold(f64::INFINITY, f64::min))
            .collect()
    }
}

pub(super) fn run(r: &mut Run) -> Result<EpisodeLog, EnvError> {
    let np = r.task.optimizer.population_size;
    let wanted = r.wanted();
    let budget = r.fe_budget;
    let instance = r.instance;
    let mut obj = CountingObjective::new(instance, budget);
    let dim = obj.dim();
    let (lo, hi) = (obj.lower(), obj.upper());
    let vmax = VMAX_FRACTION * (hi - lo);
    let group_size = np / N_GROUPS;
    let mut rng = r.optimizer_rng();
    let mut arng = r.agent_rng();

    let x: Vec<Vec<f64>> = (0..np).map(|_| uniform_point(&mut rng, dim, lo, hi)).collect();
    let v: Vec<Vec<f64>> = (0..np).map(|_| uniform_point(&mut rng, dim, -vmax, vmax)).collect();
    let cost: Vec<f64> = x.iter().map(|p| obj.eval(p)).collect();
    let gbest = argmin(&cost);
    let mut sw = Swarm {
        pbest: cost.clone(),
        pbest_x: x.clone(),
        x,
        v,
        cost,
        gbest,
        exemplar: vec![Vec::new(); np],
        since_refresh: vec![0; np],
        per_no_improve: vec![0.0; np],
        pci: (0..np).map(|i| learning_probability(i, np)).collect(),
    };
    for i in 0..np {
        sw.refresh_exemplar(i, &mut rng);
    }
    let y_initial = sw.pbest[sw.gbest];
    let init_div = diversity(&sw.x).max(f64::MIN_POSITIVE);
    let mut no_improve = 0u64;
    let mut improved_frac = 0.0;
    let mut group_prev_best = sw.group_best(N_GROUPS);
    let mut steps = Vec::new();
    let is_linear = r.policy.kind == LearnerKind::LinearEs;

    while obj.remaining() >= np as u64 {
        let progress = obj.fes() as f64 / budget as f64;
        let features: [f64; N_FEATURES] = [
            progress,
            (diversity(&sw.x) / init_div).min(1.0),
            (no_improve as f64 / 10.0).min(1.0),
            improved_frac,
            1.0,
        ];
        let action: Vec<f64> = if is_linear {
            r.policy.linear_action(&features)
        } else {
            (0..N_GROUPS * N_PARAMS).map(|_| arng.random::<f64>()).collect()
        };
        let params: Vec<GroupParams> = action.chunks(N_PARAMS).map(GroupParams::decode).collect();
        let pre_gbest = sw.pbest[sw.gbest];

        let fdr: Vec<Vec<f64>> = (0..np).map(|i| (0..dim).map(|d| sw.fdr_target(i, d)).collect()).collect();
        let g = sw.pbest_x[sw.gbest].clone();
        for i in 0..np {
            let p = params[(i / group_size).min(N_GROUPS - 1)];
            for d in 0..dim {
                let ex = sw.pbest_x[sw.exemplar[i][d]][d];
                let xi = sw.x[i][d];
                let targets = [ex, fdr[i][d], sw.pbest_x[i][d], g[d]];
                let mut vel = p.w * sw.v[i][d];
                for (c, t) in p.c.iter().zip(targets) {
                    vel += c * rng.random::<f64>() * (t - xi);
                }
                sw.v[i][d] = vel.clamp(-vmax, vmax);
                sw.x[i][d] = (xi + sw.v[i][d]).clamp(lo, hi);
            }
            if rng.random::<f64>() < p.mutation {
                sw.x[i] = uniform_point(&mut rng, dim, lo, hi);
                sw.v[i] = vec![0.0; dim];
            }
        }
        let mut n_improved = 0;
        for i in 0..np {
            sw.cost[i] = obj.eval(&sw.x[i]);
            if sw.cost[i] < sw.pbest[i] {
                sw.pbest[i] = sw.cost[i];
                sw.pbest_x[i] = sw.x[i].clone();
                sw.per_no_improve[i] = 0.0;
                n_improved += 1;
            } else {
                sw.per_no_improve[i] += 1.0;
                sw.since_refresh[i] += 1;
            }
            if sw.since_refresh[i] >= REFRESH_GAP {
                sw.refresh_exemplar(i, &mut rng);
            }
        }
        improved_frac = n_improved as f64 / np as f64;
        sw.gbest = argmin(&sw.pbest);
        let gbest_val = sw.pbest[sw.gbest];
        if gbest_val < pre_gbest {
            no_improve = 0;
        } else {
            no_improve += 1;
        }

        let fes = obj.fes();
        let policy = &*r.policy;
        let mut b = ContextBuilder::new(wanted);
        b.put("gbest_val", || Value::Num(gbest_val));
        b.put("pre_gbest", || Value::Num(pre_gbest));
        b.put("fes", || Value::Num(fes as f64));
        b.put("maxFEs", || Value::Num(budget as f64));
        b.put("progress", || Value::Num(fes as f64 / budget as f64));
        b.put("NP", || Value::from(np));
        b.put("dim", || Value::from(dim));
        b.put("current_position", || Value::from(matrix(&sw.x, dim)));
        b.put("velocity", || Value::from(matrix(&sw.v, dim)));
        b.put("c_cost", || Value::from(sw.cost.clone()));
        b.put("pbest", || Value::from(sw.pbest.clone()));
        b.put("pbest_position", || Value::from(matrix(&sw.pbest_x, dim)));
        b.put("gbest_position", || Value::from(sw.pbest_x[sw.gbest].clone()));
        b.put("gbest_index", || Value::from(sw.gbest));
        b.put("no_improve", || Value::Num(no_improve as f64));
        b.put("per_no_improve", || Value::from(sw.per_no_improve.clone()));
        b.put("n_group", || Value::from(N_GROUPS));
        b.put("pci", || Value::from(sw.pci.clone()));
        b.put("action", || Value::from(action.clone()));
        b.put("mean_cost", || Value::Num(mean(&sw.cost)));
        b.put("median_cost", || Value::Num(median(&sw.cost)));
        b.put("std_cost", || Value::Num(std(&sw.cost)));
        b.put("diversity", || Value::Num(diversity(&sw.x)));
        b.put("gbest_improve", || Value::Num(pre_gbest - gbest_val));
        b.put("group_prev_best", || Value::from(group_prev_best.clone()));
        b.put_opt("log_prob", || is_linear.then(|| Value::Num(policy.gaussian_log_prob())));
        b.put_opt("entropy", || is_linear.then(|| Value::Num(policy.gaussian_entropy())));
        b.put_opt("training_step", || is_linear.then_some(Value::Num(policy.training_step as f64)));
        b.put_opt("training_progress", || is_linear.then_some(Value::Num(policy.training_progress)));
        b.put_opt("learning_rate", || is_linear.then_some(Value::Num(policy.learning_rate)));
        b.put_opt("gamma", || is_linear.then_some(Value::Num(policy.gamma)));
        let reward = r.emit(b.finish())?;

        group_prev_best = sw.group_best(N_GROUPS);
        steps.push(StepRecord {
            step: steps.len() as u64,
            action: Action::Continuous(action),
            reward,
            gbest: gbest_val,
        });
    }
    Ok(r.finish(steps, y_initial, sw.pbest[sw.gbest], obj.fes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoded_coefficients_sum_to_the_scaled_total() {
        let p = GroupParams::decode(&[1.0, 0.5, 1.0, 0.2, 0.2, 0.4, 0.2]);
        assert!((p.w - 0.9).abs() < 1e-15);
        assert!((p.mutation - 0.005).abs() < 1e-15);
        assert!((p.c.iter().sum::<f64>() - 4.0).abs() < 1e-12);
        assert!((p.c[2] - 1.6).abs() < 1e-12);
        let z = GroupParams::decode(&[0.0; 7]);
        assert_eq!(z.c, [0.25; 4]);
        assert_eq!(z.w, 0.4);
    }

    #[test]
    fn learning_probability_spans_its_range() {
        assert!((learning_probability(0, 100) - 0.05).abs() < 1e-15);
        assert!((learning_probability(99, 100) - 0.5).abs() < 1e-12);
        assert!(learning_probability(50, 100) < learning_probability(51, 100));
    }
}
