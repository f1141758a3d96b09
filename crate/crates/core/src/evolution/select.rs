use rand::Rng;

use super::Individual;

/// Indices of the valid members sorted best first: fitness ascending, then
/// older generation, then id.
pub fn rank_order(pool: &[Individual]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].is_valid()).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (&pool[a], &pool[b]);
        x.fitness
            .total_cmp(&y.fitness)
            .then(x.generation.cmp(&y.generation))
            .then(x.id.cmp(&y.id))
    });
    idx
}

/// Weight `1 / (rank + nominal)` of each rank in a pool of `len`.
pub fn selection_weights(len: usize, nominal: usize) -> Vec<f64> {
    (0..len).map(|r| 1.0 / (r + nominal) as f64).collect()
}

/// Draws `k` distinct indices, each draw proportional to the remaining weights.
pub fn draw_without_replacement(weights: &[f64], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut left: Vec<usize> = (0..weights.len()).collect();
    let mut out = Vec::with_capacity(k.min(weights.len()));
    while out.len() < k && !left.is_empty() {
        let total: f64 = left.iter().map(|&i| weights[i]).sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = left.len() - 1;
        for (pos, &i) in left.iter().enumerate() {
            if u < weights[i] {
                pick = pos;
                break;
            }
            u -= weights[i];
        }
        out.push(left.remove(pick));
    }
    out
}

/// Picks `n` survivors from the valid members of `pool` with rank-based
/// weights; `nominal` is the nominal pool size used in the weights. Returns
/// (survivors in draw order, the rest in rank order). Invalid members are dropped.
pub fn select_survivors(pool: Vec<Individual>, n: usize, nominal: usize, rng: &mut impl Rng) -> (Vec<Individual>, Vec<Individual>) {
    let order = rank_order(&pool);
    if order.len() <= n {
        if order.len() < n {
            log::warn!("only {} valid candidates for {n} places; all survive", order.len());
        }
        let mut slots: Vec<Option<Individual>> = pool.into_iter().map(Some).collect();
        let survivors = order.iter().map(|&i| slots[i].take().unwrap()).collect();
        return (survivors, Vec::new());
    }
    let weights = selection_weights(order.len(), nominal);
    let drawn = draw_without_replacement(&weights, n, rng);
    let mut slots: Vec<Option<Individual>> = pool.into_iter().map(Some).collect();
    let survivors: Vec<Individual> = drawn.iter().map(|&r| slots[order[r]].take().unwrap()).collect();
    let eliminated = order.iter().filter_map(|&i| slots[i].take()).collect();
    (survivors, eliminated)
}
