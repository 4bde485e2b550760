//! Per-client test accuracy and the spread statistics computed from it.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ClientDataset;
use crate::error::{Error, Result};
use crate::models::Model;

/// Test-set accuracy of `model` on each client, in the order given.
pub fn evaluate_clients(model: &Model, clients: &[ClientDataset]) -> Result<Vec<f64>> {
    clients
        .par_iter()
        .map(|c| {
            if c.test.is_empty() {
                return Err(Error::EmptyDataset {
                    client_id: c.client_id,
                    part: "test",
                });
            }
            let pred = model.predict(&c.test.features)?;
            let hits = pred
                .iter()
                .zip(&c.test.labels)
                .filter(|(p, y)| p == y)
                .count();
            Ok(hits as f64 / c.test.len() as f64)
        })
        .collect()
}

/// Size of each tail used for the worst-5% and best-5% statistics.
pub fn tail_count(k: usize) -> usize {
    // 0.05 * k is inexact for most k; ceil of the exact ratio k / 20
    k.div_ceil(20)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub round: usize,
    pub per_client_acc: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub variance: f64,
    /// Mean of the lowest `ceil(0.05 K)` accuracies.
    pub worst5: f64,
    /// Mean of the highest `ceil(0.05 K)` accuracies.
    pub best5: f64,
}

impl FairnessReport {
    pub fn new(accs: &[f64], round: usize) -> Result<Self> {
        if accs.is_empty() {
            return Err(Error::Domain {
                what: "fairness report",
                reason: "no client accuracies".into(),
            });
        }
        let k = accs.len() as f64;
        let mean = accs.iter().sum::<f64>() / k;
        let variance = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / k;
        let mut sorted = accs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let tail = tail_count(accs.len());
        let worst5 = sorted[..tail].iter().sum::<f64>() / tail as f64;
        let best5 = sorted[sorted.len() - tail..].iter().sum::<f64>() / tail as f64;
        Ok(Self {
            round,
            per_client_acc: accs.to_vec(),
            mean,
            std: variance.sqrt(),
            variance,
            worst5,
            best5,
        })
    }
}

#[derive(Serialize)]
struct FairnessRow {
    round: usize,
    mean: f64,
    std: f64,
    variance: f64,
    worst5: f64,
    best5: f64,
}

#[derive(Serialize)]
struct ClientRow {
    round: usize,
    client_id: usize,
    acc: f64,
}

/// Appends fairness rows (`round,mean,std,variance,worst5,best5`) and
/// per-client rows (`round,client_id,acc`) to two CSV streams.
pub struct ReportWriter<W: Write> {
    fairness: csv::Writer<W>,
    clients: csv::Writer<W>,
}

impl<W: Write> ReportWriter<W> {
    pub fn new(fairness: W, clients: W) -> Self {
        Self {
            fairness: csv::Writer::from_writer(fairness),
            clients: csv::Writer::from_writer(clients),
        }
    }

    pub fn write(&mut self, report: &FairnessReport) -> Result<()> {
        self.fairness.serialize(FairnessRow {
            round: report.round,
            mean: report.mean,
            std: report.std,
            variance: report.variance,
            worst5: report.worst5,
            best5: report.best5,
        })?;
        for (client_id, &acc) in report.per_client_acc.iter().enumerate() {
            self.clients.serialize(ClientRow {
                round: report.round,
                client_id,
                acc,
            })?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.fairness.flush()?;
        self.clients.flush()?;
        Ok(())
    }
}
