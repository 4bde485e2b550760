use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mitigation::{
    arrange_order, conflict_pairs, mitigate_external, mitigate_internal, plain_mean, weighted_sum,
    GradientHistory, OrderMode,
};
use super::sampling::{apply_dropout, sample_clients};
use crate::dataset::ClientDataset;
use crate::error::{Error, Result};
use crate::models::{local_train, ClientUpdate, LocalTrainConfig, Model};
use crate::vecmath::{cosine, norm, rescale_to, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    FedAvg,
    FedFv,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedavg" | "fed_avg" => Ok(Algorithm::FedAvg),
            "fedfv" | "fed_fv" => Ok(Algorithm::FedFv),
            other => Err(Error::config(
                "algorithm",
                format!("unknown algorithm `{other}` (fedavg, fedfv)"),
            )),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedFv => "fedfv",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedFvConfig {
    pub alpha: f64,
    pub tau: usize,
    pub sample_count: usize,
    pub dropout_prob: f64,
    pub total_rounds: usize,
    /// Sampling probability per client; sums to one.
    pub weights: Vec<f64>,
}

impl FedFvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("fedfv.alpha", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::config("fedfv.dropout", "must lie in [0, 1)"));
        }
        let k = self.weights.len();
        if self.sample_count == 0 || self.sample_count > k {
            return Err(Error::config(
                "fedfv.sample_count",
                format!("must lie in 1..={k}, got {}", self.sample_count),
            ));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config(
                "fedfv.weights",
                "must be finite and non-negative",
            ));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "fedfv.weights",
                format!("sum to {total}, not 1"),
            ));
        }
        Ok(())
    }
}

/// Everything that fixes the behaviour of a run besides the data and the
/// initial model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub algorithm: Algorithm,
    pub fedfv: FedFvConfig,
    pub order_mode: OrderMode,
    pub train: LocalTrainConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientLoss {
    pub client_id: usize,
    pub loss: f64,
}

/// One line of the per-round log stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub algorithm: Algorithm,
    pub selected: Vec<usize>,
    pub survivors: Vec<usize>,
    pub losses: Vec<ClientLoss>,
    pub conflict_pairs: usize,
    pub internal_projections: usize,
    pub external_projections: usize,
    /// Cosine between the plain survivor mean and the applied update.
    pub cos_mean_final: Option<f64>,
    pub update_norm: f64,
    pub plain_mean_norm: f64,
    /// The final update had zero norm and the model was left unchanged.
    pub skipped: bool,
}

impl RoundLog {
    pub fn write_json_line<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, self)?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

/// `sum_k w_k g_k` with weights renormalised over the given updates.
pub fn fedavg_aggregate(updates: &[ClientUpdate], weights: &[f64]) -> Result<ParamVector> {
    let first = updates.first().ok_or(Error::NoUpdates)?;
    if weights.len() != updates.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} updates",
            weights.len(),
            updates.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::config(
            "weights",
            "must be non-negative with a positive sum",
        ));
    }
    weighted_sum(
        first.grad.dim(),
        updates
            .iter()
            .zip(weights)
            .map(|(u, w)| (w / total, &u.grad)),
    )
}

/// Server-side result of one FedFV aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct FedFvAggregate {
    /// Update to subtract from the model, rescaled to the plain mean's length.
    pub update: ParamVector,
    pub plain_mean: ParamVector,
    pub internal_projections: usize,
    pub external_projections: usize,
}

/// One FedFV aggregation: records `updates` in `history`, mitigates
/// internal conflicts, then external ones when `round >= tau`, and rescales.
/// A zero mitigated update is returned as is.
pub fn fedfv_aggregate(
    updates: &[ClientUpdate],
    history: &mut GradientHistory,
    round: usize,
    alpha: f64,
    tau: usize,
    order_mode: OrderMode,
    seed: u64,
) -> Result<FedFvAggregate> {
    for u in updates {
        history.record(u.client_id, u.grad.clone(), round)?;
    }
    let order = arrange_order(updates, order_mode, seed, round);
    let internal = mitigate_internal(&order, alpha)?;
    let mut g = internal.mean;
    let mut external_projections = 0;
    if round >= tau {
        let out = mitigate_external(&g, history, round, tau)?;
        g = out.update;
        external_projections = out.projections;
    }
    let plain_mean = plain_mean(updates)?;
    let update = if norm(&g) == 0.0 {
        g
    } else {
        rescale_to(&g, norm(&plain_mean))?
    };
    Ok(FedFvAggregate {
        update,
        plain_mean,
        internal_projections: internal.projections,
        external_projections,
    })
}

/// Server state for one simulated federation.
#[derive(Debug, Clone)]
pub struct FederatedRun {
    settings: RunSettings,
    model: Model,
    history: GradientHistory,
    round: usize,
    logs: Vec<RoundLog>,
}

impl FederatedRun {
    pub fn new(settings: RunSettings, model: Model) -> Result<Self> {
        settings.fedfv.validate()?;
        Ok(Self {
            settings,
            model,
            history: GradientHistory::new(),
            round: 0,
            logs: Vec::new(),
        })
    }

    pub fn settings(&self) -> &RunSettings {
        &self.settings
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn history(&self) -> &GradientHistory {
        &self.history
    }

    /// Index of the next round to run.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn logs(&self) -> &[RoundLog] {
        &self.logs
    }

    pub fn is_finished(&self) -> bool {
        self.round >= self.settings.fedfv.total_rounds
    }

    /// Client selection for the current round: sampled ids and the
    /// survivors of dropout.
    pub fn select(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        let cfg = &self.settings.fedfv;
        let selected = sample_clients(
            &cfg.weights,
            cfg.sample_count,
            self.round,
            self.settings.seed,
        )?;
        let survivors = apply_dropout(&selected, cfg.dropout_prob, self.round, self.settings.seed);
        Ok((selected, survivors))
    }

    /// Runs one round end to end.
    pub fn step(&mut self, clients: &[ClientDataset]) -> Result<&RoundLog> {
        if self.is_finished() {
            return Err(Error::Domain {
                what: "round",
                reason: format!(
                    "all {} rounds already ran",
                    self.settings.fedfv.total_rounds
                ),
            });
        }
        if clients.len() != self.settings.fedfv.weights.len() {
            return Err(Error::Shape(format!(
                "{} clients but {} sampling weights",
                clients.len(),
                self.settings.fedfv.weights.len()
            )));
        }
        let (selected, survivors) = self.select()?;
        let updates = survivors
            .par_iter()
            .map(|&k| {
                let data = &clients[k];
                if data.client_id != k {
                    return Err(Error::Shape(format!(
                        "client at position {k} reports id {}",
                        data.client_id
                    )));
                }
                local_train(&self.model, data, &self.settings.train, self.round, k)
            })
            .collect::<Result<Vec<_>>>()?;
        self.apply_updates(selected, updates)
    }

    /// Server half of a round: aggregates `updates` from the surviving
    /// clients and moves the model.
    ///
    /// [`step`](Self::step) calls this after local training; tests can call
    /// it directly with hand-made updates.
    pub fn apply_updates(
        &mut self,
        selected: Vec<usize>,
        mut updates: Vec<ClientUpdate>,
    ) -> Result<&RoundLog> {
        if updates.is_empty() {
            return Err(Error::NoUpdates);
        }
        let t = self.round;
        updates.sort_by_key(|u| u.client_id);
        let survivors: Vec<usize> = updates.iter().map(|u| u.client_id).collect();
        let losses = updates
            .iter()
            .map(|u| ClientLoss {
                client_id: u.client_id,
                loss: u.loss,
            })
            .collect();
        let conflicts = conflict_pairs(&updates)?;

        let (update, plain, internal, external) = match self.settings.algorithm {
            Algorithm::FedAvg => {
                let sizes: Vec<f64> = updates.iter().map(|u| u.num_samples as f64).collect();
                let g = fedavg_aggregate(&updates, &sizes)?;
                (g.clone(), g, 0, 0)
            }
            Algorithm::FedFv => {
                let cfg = &self.settings.fedfv;
                let agg = fedfv_aggregate(
                    &updates,
                    &mut self.history,
                    t,
                    cfg.alpha,
                    cfg.tau,
                    self.settings.order_mode,
                    self.settings.seed,
                )?;
                (
                    agg.update,
                    agg.plain_mean,
                    agg.internal_projections,
                    agg.external_projections,
                )
            }
        };

        let update_norm = norm(&update);
        let skipped = update_norm == 0.0;
        if !skipped {
            let next = self.model.params().sub(&update)?;
            self.model.set_params(next)?;
        }
        let cos_mean_final = cosine(&plain, &update).ok();
        self.logs.push(RoundLog {
            round: t,
            algorithm: self.settings.algorithm,
            selected,
            survivors,
            losses,
            conflict_pairs: conflicts,
            internal_projections: internal,
            external_projections: external,
            cos_mean_final,
            update_norm,
            plain_mean_norm: norm(&plain),
            skipped,
        });
        self.round += 1;
        Ok(self.logs.last().unwrap())
    }

    /// Runs every remaining round, calling `after_round` after each one.
    pub fn run<F>(&mut self, clients: &[ClientDataset], mut after_round: F) -> Result<()>
    where
        F: FnMut(&FederatedRun) -> Result<()>,
    {
        while !self.is_finished() {
            self.step(clients)?;
            after_round(self)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BatchSize, ModelKind};

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn upd(id: usize, loss: f64, g: &[f64]) -> ClientUpdate {
        ClientUpdate {
            client_id: id,
            grad: pv(g),
            loss,
            round: 0,
            num_samples: 1,
        }
    }

    fn settings(alpha: f64, tau: usize, k: usize) -> RunSettings {
        RunSettings {
            algorithm: Algorithm::FedFv,
            fedfv: FedFvConfig {
                alpha,
                tau,
                sample_count: k,
                dropout_prob: 0.0,
                total_rounds: 10,
                weights: vec![1.0 / k as f64; k],
            },
            order_mode: OrderMode::LossAscending,
            train: LocalTrainConfig {
                epochs: 1,
                batch_size: BatchSize::Full,
                learning_rate: 0.1,
                shuffle_seed: 0,
            },
            seed: 0,
        }
    }

    /// Softmax regression with one input and two classes has 4 parameters;
    /// the tests only need some 2-d-compatible vector space, so use a model
    /// whose params are replaced by hand.
    fn model_with(params: &[f64]) -> Model {
        let m = Model::zeroed(ModelKind::SoftmaxRegression, 1, 1).unwrap();
        assert_eq!(m.params().dim(), 2);
        Model::with_params(m.kind(), 1, 1, pv(params)).unwrap()
    }

    #[test]
    fn fedavg_aggregate_examples() {
        let one = [upd(0, 0.0, &[1.0, 2.0])];
        assert_eq!(fedavg_aggregate(&one, &[5.0]).unwrap(), pv(&[1.0, 2.0]));
        let two = [upd(0, 0.0, &[1.0, 0.0]), upd(1, 0.0, &[0.0, 1.0])];
        assert_eq!(
            fedavg_aggregate(&two, &[1.0, 1.0]).unwrap(),
            pv(&[0.5, 0.5])
        );
        let sized = [upd(0, 0.0, &[4.0, 0.0]), upd(1, 0.0, &[0.0, 4.0])];
        assert_eq!(
            fedavg_aggregate(&sized, &[3.0, 1.0]).unwrap(),
            pv(&[3.0, 1.0])
        );
        assert!(matches!(fedavg_aggregate(&[], &[]), Err(Error::NoUpdates)));
    }

    #[test]
    fn worked_two_client_round() {
        let mut run = FederatedRun::new(settings(0.0, 0, 2), model_with(&[0.0, 0.0])).unwrap();
        let log = run
            .apply_updates(
                vec![0, 1],
                vec![upd(0, 0.5, &[1.0, 0.0]), upd(1, 1.0, &[-1.0, 1.0])],
            )
            .unwrap()
            .clone();
        // plain mean (0, 0.5) has norm 0.5; mitigated mean (0.25, 0.75)
        let scale = 0.5 / (0.25f64 * 0.25 + 0.75 * 0.75).sqrt();
        let want = [-0.25 * scale, -0.75 * scale];
        let got = run.model().params();
        assert!((got[0] - want[0]).abs() < 1e-15 && (got[1] - want[1]).abs() < 1e-15);
        assert_eq!(log.internal_projections, 2);
        assert_eq!(log.conflict_pairs, 1);
        assert!((log.update_norm - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_update_leaves_model_unchanged() {
        let mut run = FederatedRun::new(settings(0.0, 0, 2), model_with(&[1.0, 2.0])).unwrap();
        let log = run
            .apply_updates(
                vec![0, 1],
                vec![upd(0, 0.1, &[1.0, 0.0]), upd(1, 0.2, &[-1.0, 0.0])],
            )
            .unwrap();
        assert!(log.skipped);
        assert_eq!(run.model().params(), &pv(&[1.0, 2.0]));
        assert_eq!(run.round(), 1);
    }

    #[test]
    fn history_tracks_survivors_only() {
        let mut run = FederatedRun::new(settings(0.0, 1, 3), model_with(&[0.0, 0.0])).unwrap();
        run.apply_updates(
            vec![0, 1],
            vec![upd(0, 0.1, &[1.0, 0.0]), upd(1, 0.2, &[0.0, 1.0])],
        )
        .unwrap();
        run.apply_updates(vec![1, 2], vec![upd(1, 0.1, &[1.0, 1.0])])
            .unwrap();
        assert_eq!(run.history().get(0).unwrap().round, 0);
        assert_eq!(run.history().get(1).unwrap().round, 1);
        assert!(run.history().get(2).is_none());
    }

    #[test]
    fn external_step_uses_stale_history() {
        let mut run = FederatedRun::new(settings(0.0, 1, 2), model_with(&[0.0, 0.0])).unwrap();
        run.apply_updates(vec![0], vec![upd(0, 0.1, &[-1.0, 0.0])])
            .unwrap();
        let before = run.model().params().clone();
        let log = run
            .apply_updates(vec![1], vec![upd(1, 0.1, &[1.0, 0.5])])
            .unwrap()
            .clone();
        assert_eq!(log.external_projections, 1);
        // (1, 0.5) projected against (-1, 0) is (0, 0.5), rescaled to the
        // plain mean's length sqrt(1.25)
        let step = before.sub(run.model().params()).unwrap();
        assert!(step[0].abs() < 1e-15);
        assert!((step[1] - 1.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut s = settings(0.0, 0, 2);
        s.fedfv.alpha = 1.2;
        assert!(FederatedRun::new(s.clone(), model_with(&[0.0, 0.0])).is_err());
        s.fedfv.alpha = 0.5;
        s.fedfv.weights = vec![0.5, 0.6];
        assert!(s.fedfv.validate().is_err());
        s.fedfv.weights = vec![0.5, 0.5];
        s.fedfv.sample_count = 3;
        assert!(s.fedfv.validate().is_err());
        s.fedfv.sample_count = 2;
        s.fedfv.dropout_prob = 1.0;
        assert!(s.fedfv.validate().is_err());
    }

    #[test]
    fn round_log_is_one_json_line() {
        let mut run = FederatedRun::new(settings(0.0, 0, 2), model_with(&[0.0, 0.0])).unwrap();
        let log = run
            .apply_updates(vec![0], vec![upd(0, 0.3, &[1.0, 0.0])])
            .unwrap();
        let mut buf = Vec::new();
        log.write_json_line(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        let back: RoundLog = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(&back, log);
    }
}
