use rand::Rng;

use crate::error::{Error, Result};
use crate::seeding::{rng_for, Stream};

/// Draws `m` distinct clients without replacement. Each draw picks a client
/// with probability proportional to its weight among those not yet drawn;
/// if the remaining weight is all zero the draw is uniform over the rest.
///
/// The result is sorted by client id.
pub fn sample_clients(weights: &[f64], m: usize, round: usize, seed: u64) -> Result<Vec<usize>> {
    let k = weights.len();
    if m > k {
        return Err(Error::TooManyClients {
            requested: m,
            available: k,
        });
    }
    if let Some(bad) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::config(
            "fedfv.weights",
            format!("invalid weight {bad}"),
        ));
    }
    let mut rng = rng_for(seed, Stream::Sampling, &[round as u64]);
    let mut pool: Vec<usize> = (0..k).collect();
    let mut chosen = Vec::with_capacity(m);
    for _ in 0..m {
        let mass: f64 = pool.iter().map(|&i| weights[i]).sum();
        let pick = if mass > 0.0 {
            let target = rng.random::<f64>() * mass;
            let mut acc = 0.0;
            let mut pick = None;
            for (pos, &i) in pool.iter().enumerate() {
                acc += weights[i];
                if weights[i] > 0.0 && target < acc {
                    pick = Some(pos);
                    break;
                }
            }
            // round-off can leave target == mass; fall back to the last
            // client with positive weight
            pick.unwrap_or_else(|| pool.iter().rposition(|&i| weights[i] > 0.0).unwrap())
        } else {
            rng.random_range(0..pool.len())
        };
        chosen.push(pool.remove(pick));
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Independently drops each selected client with probability `dropout_prob`.
/// At least one client survives: if every client drops, the one with the
/// smallest id is kept.
pub fn apply_dropout(selected: &[usize], dropout_prob: f64, round: usize, seed: u64) -> Vec<usize> {
    let mut sorted = selected.to_vec();
    sorted.sort_unstable();
    if dropout_prob <= 0.0 {
        return sorted;
    }
    let mut rng = rng_for(seed, Stream::Dropout, &[round as u64]);
    let survivors: Vec<usize> = sorted
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() >= dropout_prob)
        .collect();
    if survivors.is_empty() {
        return sorted.into_iter().take(1).collect();
    }
    survivors
}
