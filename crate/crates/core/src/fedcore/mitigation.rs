//! Conflict mitigation: projecting order, internal projection and
//! projection against the gradient history.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ClientUpdate;
use crate::seeding::{rng_for, Stream};
use crate::vecmath::{dot, project_to_normal_plane, ParamVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub grad: ParamVector,
    pub round: usize,
}

/// Latest pseudo-gradient reported by each client, with the round it came
/// from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientHistory {
    entries: BTreeMap<usize, HistoryEntry>,
}

impl GradientHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `grad` as client `client_id`'s latest gradient. Rounds must
    /// strictly increase per client.
    pub fn record(&mut self, client_id: usize, grad: ParamVector, round: usize) -> Result<()> {
        if let Some(prev) = self.entries.get(&client_id) {
            if prev.round >= round {
                return Err(Error::Domain {
                    what: "history round",
                    reason: format!(
                        "client {client_id} already has round {}, cannot record {round}",
                        prev.round
                    ),
                });
            }
        }
        self.entries.insert(client_id, HistoryEntry { grad, round });
        Ok(())
    }

    pub fn get(&self, client_id: usize) -> Option<&HistoryEntry> {
        self.entries.get(&client_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &HistoryEntry)> {
        self.entries.iter().map(|(&k, v)| (k, v))
    }
}

/// How the projection targets are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMode {
    /// Ascending training loss; the highest-loss client is projected on last.
    #[default]
    LossAscending,
    /// Uniformly random, reseeded every round.
    Random,
    /// Descending training loss.
    Reverse,
}

impl std::str::FromStr for OrderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss_ascending" | "loss" => Ok(OrderMode::LossAscending),
            "random" => Ok(OrderMode::Random),
            "reverse" => Ok(OrderMode::Reverse),
            other => Err(Error::config(
                "order_mode",
                format!("unknown mode `{other}` (loss_ascending, random, reverse)"),
            )),
        }
    }
}

impl std::fmt::Display for OrderMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OrderMode::LossAscending => "loss_ascending",
            OrderMode::Random => "random",
            OrderMode::Reverse => "reverse",
        })
    }
}

/// The round's updates in the order they serve as projection targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectingOrder {
    ordered: Vec<ClientUpdate>,
}

impl ProjectingOrder {
    pub fn updates(&self) -> &[ClientUpdate] {
        &self.ordered
    }

    pub fn client_ids(&self) -> Vec<usize> {
        self.ordered.iter().map(|u| u.client_id).collect()
    }

    pub fn len(&self) -> usize {
        self.ordered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered.is_empty()
    }
}

/// Sorts updates by ascending loss, ties broken by ascending client id.
pub fn build_projecting_order(updates: &[ClientUpdate]) -> ProjectingOrder {
    let mut ordered = updates.to_vec();
    ordered.sort_by(|a, b| {
        a.loss
            .total_cmp(&b.loss)
            .then(a.client_id.cmp(&b.client_id))
    });
    ProjectingOrder { ordered }
}

/// Projecting order under an ablation mode. `Random` draws a fresh
/// permutation from `(seed, round)`.
pub fn arrange_order(
    updates: &[ClientUpdate],
    mode: OrderMode,
    seed: u64,
    round: usize,
) -> ProjectingOrder {
    let mut order = build_projecting_order(updates);
    match mode {
        OrderMode::LossAscending => {}
        OrderMode::Reverse => order.ordered.reverse(),
        OrderMode::Random => {
            order
                .ordered
                .shuffle(&mut rng_for(seed, Stream::Order, &[round as u64]));
        }
    }
    order
}

/// Number of clients, counted from the front of the order, whose gradients
/// get projected: `floor((1 - alpha) * m)`. The remaining `m - that` clients
/// at the end of the order keep their original gradients.
pub fn projected_count(alpha: f64, m: usize) -> usize {
    // the small slack keeps e.g. (1 - 0.1) * 10 from flooring to 8
    (((1.0 - alpha) * m as f64) + 1e-9)
        .floor()
        .clamp(0.0, m as f64) as usize
}

/// `sum_k w_k g_k`, accumulated in the order given.
pub(crate) fn weighted_sum<'a>(
    dim: usize,
    terms: impl IntoIterator<Item = (f64, &'a ParamVector)>,
) -> Result<ParamVector> {
    let mut acc = ParamVector::zeros(dim);
    for (w, g) in terms {
        acc.add_scaled(w, g)?;
    }
    Ok(acc)
}

/// `(1/m) sum_k g_k`, summed in ascending client id order.
pub fn plain_mean(updates: &[ClientUpdate]) -> Result<ParamVector> {
    let first = updates.first().ok_or(Error::NoUpdates)?;
    let mut by_id: Vec<&ClientUpdate> = updates.iter().collect();
    by_id.sort_by_key(|u| u.client_id);
    let w = 1.0 / updates.len() as f64;
    weighted_sum(first.grad.dim(), by_id.into_iter().map(|u| (w, &u.grad)))
}

/// Counts unordered pairs of updates whose gradients conflict.
pub fn conflict_pairs(updates: &[ClientUpdate]) -> Result<usize> {
    let mut n = 0;
    for (i, a) in updates.iter().enumerate() {
        for b in &updates[i + 1..] {
            if dot(&a.grad, &b.grad)? < 0.0 {
                n += 1;
            }
        }
    }
    Ok(n)
}

/// Result of internal conflict mitigation.
#[derive(Debug, Clone, PartialEq)]
pub struct InternalOutcome {
    /// `(1/m) sum_k g_k^PC`, summed in ascending client id order.
    pub mean: ParamVector,
    /// `(client_id, g_k^PC)` in projecting order.
    pub projected: Vec<(usize, ParamVector)>,
    /// Number of projection steps that fired.
    pub projections: usize,
}

/// Projects `g` onto the normal plane of every conflicting target, in the
/// order given, skipping the entry at position `skip`. Returns the projected
/// vector and the number of projections applied.
pub fn project_sequentially(
    g: &ParamVector,
    targets: &[&ParamVector],
    skip: Option<usize>,
) -> Result<(ParamVector, usize)> {
    let mut out = g.clone();
    let mut fired = 0;
    for (j, target) in targets.iter().enumerate() {
        if Some(j) == skip {
            continue;
        }
        // a zero target has zero dot product and never conflicts
        if dot(&out, target)? < 0.0 {
            out = project_to_normal_plane(&out, target)?;
            fired += 1;
        }
    }
    Ok((out, fired))
}

/// Internal conflict mitigation.
///
/// The first `floor((1 - alpha) m)` clients of `order` (the lowest losses)
/// are projected, one target at a time and in order, onto the normal plane of
/// every original gradient they conflict with. The remaining highest-loss
/// clients keep their gradients untouched. With `alpha = 1` this is the plain
/// mean; with `alpha = 0` every client is projected.
pub fn mitigate_internal(order: &ProjectingOrder, alpha: f64) -> Result<InternalOutcome> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config("fedfv.alpha", "must lie in [0, 1]"));
    }
    let updates = order.updates();
    let first = updates.first().ok_or(Error::NoUpdates)?;
    let m = updates.len();
    let n_proj = projected_count(alpha, m);
    let targets: Vec<&ParamVector> = updates.iter().map(|u| &u.grad).collect();

    let mut projected = Vec::with_capacity(m);
    let mut projections = 0;
    for (pos, u) in updates.iter().enumerate() {
        if pos < n_proj {
            let (g, fired) = project_sequentially(&u.grad, &targets, Some(pos))?;
            projections += fired;
            projected.push((u.client_id, g));
        } else {
            projected.push((u.client_id, u.grad.clone()));
        }
    }

    let mut by_id: Vec<&(usize, ParamVector)> = projected.iter().collect();
    by_id.sort_by_key(|(id, _)| *id);
    let w = 1.0 / m as f64;
    let mean = weighted_sum(first.grad.dim(), by_id.into_iter().map(|(_, g)| (w, g)))?;
    Ok(InternalOutcome {
        mean,
        projected,
        projections,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalOutcome {
    pub update: ParamVector,
    pub projections: usize,
}

/// External conflict mitigation against the gradient history.
///
/// For lags `i = tau, tau-1, ..., 1`, the stored gradients from round
/// `t - i` that conflict with the current update are summed; if the sum
/// itself conflicts with the update, the update is projected onto its
/// normal plane. Older rounds go first so the most recent round is the last
/// target.
pub fn mitigate_external(
    g: &ParamVector,
    history: &GradientHistory,
    current_round: usize,
    tau: usize,
) -> Result<ExternalOutcome> {
    if current_round < tau {
        return Err(Error::Domain {
            what: "external mitigation",
            reason: format!("round {current_round} is earlier than tau = {tau}"),
        });
    }
    let mut update = g.clone();
    let mut projections = 0;
    for lag in (1..=tau).rev() {
        let past = current_round - lag;
        let mut g_con = ParamVector::zeros(update.dim());
        for (_, entry) in history.iter().filter(|(_, e)| e.round == past) {
            if dot(&update, &entry.grad)? < 0.0 {
                g_con.add_scaled(1.0, &entry.grad)?;
            }
        }
        if dot(&update, &g_con)? < 0.0 {
            update = project_to_normal_plane(&update, &g_con)?;
            projections += 1;
        }
    }
    Ok(ExternalOutcome {
        update,
        projections,
    })
}
