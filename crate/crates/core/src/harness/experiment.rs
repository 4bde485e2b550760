use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{DataSource, ExperimentConfig};
use crate::datagen::{load_idx, shard_partition};
use crate::dataset::ClientDataset;
use crate::error::{Error, Result};
use crate::fedcore::{Algorithm, FedFvConfig, FederatedRun, OrderMode, RunSettings};
use crate::metrics::{evaluate_clients, FairnessReport, ReportWriter};
use crate::models::Model;
use crate::theory::{theory_suite, TheoryReport};
use crate::vecmath::ParamVector;

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.toml";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const FAIRNESS_FILE: &str = "fairness.csv";
pub const CLIENTS_FILE: &str = "clients.csv";
pub const ROUNDS_FILE: &str = "rounds.jsonl";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const THEORY_FILE: &str = "theory_report.jsonl";

/// Statistics reported per seed and averaged in the summary.
pub const STATISTICS: [&str; 5] = ["mean", "std", "variance", "worst5", "best5"];

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(BufWriter::new(file))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Clients, feature dimension and class count for one seed.
pub struct Federation {
    pub clients: Vec<ClientDataset>,
    pub input_dim: usize,
    pub num_classes: usize,
}

pub fn build_federation(cfg: &ExperimentConfig, seed: u64) -> Result<Federation> {
    let d = &cfg.data;
    let data = match d.source {
        DataSource::Synthetic => d.synth_spec(seed).generate()?,
        DataSource::Idx => {
            let images = d
                .images
                .as_ref()
                .ok_or(Error::config("data.images", "missing"))?;
            let labels = d
                .labels
                .as_ref()
                .ok_or(Error::config("data.labels", "missing"))?;
            load_idx(images, labels)?
        }
    };
    let num_classes = data.labels.iter().max().map_or(0, |m| m + 1);
    let input_dim = data.feature_dim();
    let clients = shard_partition(&data, &d.federation_spec(seed))?;
    Ok(Federation {
        clients,
        input_dim,
        num_classes,
    })
}

/// Server settings for one seed. Sampling weights are `n_k / n` over the
/// training splits.
pub fn run_settings(
    cfg: &ExperimentConfig,
    seed: u64,
    clients: &[ClientDataset],
) -> Result<RunSettings> {
    let total: usize = clients.iter().map(ClientDataset::n_k).sum();
    if total == 0 {
        return Err(Error::config("data", "no training examples"));
    }
    let weights = clients
        .iter()
        .map(|c| c.n_k() as f64 / total as f64)
        .collect();
    let settings = RunSettings {
        algorithm: cfg.run.algorithm,
        fedfv: FedFvConfig {
            alpha: cfg.fedfv.alpha,
            tau: cfg.fedfv.tau,
            sample_count: cfg.sample_count(),
            dropout_prob: cfg.fedfv.dropout,
            total_rounds: cfg.run.rounds,
            weights,
        },
        order_mode: cfg.run.order_mode,
        train: cfg.train.local_config(seed),
        seed,
    };
    settings.fedfv.validate()?;
    settings.train.validate()?;
    Ok(settings)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub final_report: FairnessReport,
    pub final_params: ParamVector,
    pub dir: PathBuf,
}

fn statistic(report: &FairnessReport, name: &str) -> f64 {
    match name {
        "mean" => report.mean,
        "std" => report.std,
        "variance" => report.variance,
        "worst5" => report.worst5,
        "best5" => report.best5,
        _ => unreachable!("unknown statistic {name}"),
    }
}

/// Trains one seed and writes `fairness.csv`, `clients.csv` and
/// `rounds.jsonl` into `dir`. Accuracy is evaluated before the first round,
/// every `eval_every` rounds and after the last round; the `round` column
/// counts completed rounds.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<SeedResult> {
    create_dir(dir)?;
    let fed = build_federation(cfg, seed)?;
    let settings = run_settings(cfg, seed, &fed.clients)?;
    let model = Model::new(cfg.model.model_kind(), fed.input_dim, fed.num_classes, seed)?;
    let mut run = FederatedRun::new(settings, model)?;

    let mut reports = ReportWriter::new(
        create(&dir.join(FAIRNESS_FILE))?,
        create(&dir.join(CLIENTS_FILE))?,
    );
    let mut rounds = create(&dir.join(ROUNDS_FILE))?;
    let evaluate = |run: &FederatedRun| -> Result<FairnessReport> {
        let accs = evaluate_clients(run.model(), &fed.clients)?;
        FairnessReport::new(&accs, run.round())
    };

    let mut last = evaluate(&run)?;
    reports.write(&last)?;
    let total = cfg.run.rounds;
    let every = cfg.run.eval_every;
    run.run(&fed.clients, |run| {
        run.logs().last().unwrap().write_json_line(&mut rounds)?;
        let done = run.round();
        if done % every == 0 || done == total {
            last = evaluate(run)?;
            reports.write(&last)?;
        }
        Ok(())
    })?;
    reports.flush()?;
    rounds.flush()?;
    Ok(SeedResult {
        seed,
        final_report: last,
        final_params: run.model().params().clone(),
        dir: dir.to_path_buf(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryStat {
    pub label: String,
    pub statistic: String,
    pub seeds: usize,
    /// Mean over seeds of the final-round value.
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub label: String,
    pub seeds: Vec<SeedResult>,
    pub stats: Vec<SummaryStat>,
}

impl ExperimentSummary {
    fn new(label: String, seeds: Vec<SeedResult>) -> Self {
        let n = seeds.len() as f64;
        let stats = STATISTICS
            .iter()
            .map(|&name| {
                let values: Vec<f64> = seeds
                    .iter()
                    .map(|s| statistic(&s.final_report, name))
                    .collect();
                let mean = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                SummaryStat {
                    label: label.clone(),
                    statistic: name.to_string(),
                    seeds: seeds.len(),
                    mean,
                    std: var.sqrt(),
                }
            })
            .collect();
        Self {
            label,
            seeds,
            stats,
        }
    }

    /// Cross-seed statistic by name: `mean`, `std`, `variance`, `worst5` or
    /// `best5`.
    pub fn stat(&self, name: &str) -> Option<&SummaryStat> {
        self.stats.iter().find(|s| s.statistic == name)
    }
}

fn write_summary(path: &Path, summaries: &[&ExperimentSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for s in summaries {
        for stat in &s.stats {
            w.serialize(stat)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn run_seeds(cfg: &ExperimentConfig, out: &Path, label: String) -> Result<ExperimentSummary> {
    create_dir(out)?;
    let mut text = cfg.to_toml_string()?;
    text.insert_str(0, &format!("# effective configuration for {label}\n"));
    fs::write(out.join(EFFECTIVE_CONFIG_FILE), text).map_err(|source| Error::File {
        path: out.join(EFFECTIVE_CONFIG_FILE),
        source,
    })?;
    let seeds = cfg
        .run
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, seed, &out.join(format!("seed_{seed}"))))
        .collect::<Result<Vec<_>>>()?;
    let summary = ExperimentSummary::new(label, seeds);
    write_summary(&out.join(SUMMARY_FILE), &[&summary])?;
    Ok(summary)
}

/// Runs every seed of `cfg` into `cfg.run.output_dir` and writes the
/// effective config and the cross-seed summary next to the per-seed
/// directories.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let label = match cfg.run.algorithm {
        Algorithm::FedAvg => "fedavg".to_string(),
        Algorithm::FedFv => format!("fedfv_{}", cfg.run.order_mode),
    };
    run_seeds(cfg, &cfg.run.output_dir, label)
}

pub const ORDER_MODES: [OrderMode; 3] = [
    OrderMode::LossAscending,
    OrderMode::Random,
    OrderMode::Reverse,
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub order_mode: String,
    pub seeds: usize,
    pub mean_final_std: f64,
    pub std_final_std: f64,
    pub mean_final_worst5: f64,
    pub mean_final_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub runs: Vec<(OrderMode, ExperimentSummary)>,
}

impl AblationResult {
    pub fn summary(&self, mode: OrderMode) -> Option<&ExperimentSummary> {
        self.runs.iter().find(|(m, _)| *m == mode).map(|(_, s)| s)
    }

    /// Seed-averaged final standard deviation of client accuracy.
    pub fn mean_final_std(&self, mode: OrderMode) -> Option<f64> {
        Some(self.summary(mode)?.stat("std")?.mean)
    }

    pub fn rows(&self) -> Vec<AblationRow> {
        self.runs
            .iter()
            .map(|(mode, s)| {
                let get = |name| s.stat(name).unwrap();
                AblationRow {
                    order_mode: mode.to_string(),
                    seeds: s.seeds.len(),
                    mean_final_std: get("std").mean,
                    std_final_std: get("std").std,
                    mean_final_worst5: get("worst5").mean,
                    mean_final_mean: get("mean").mean,
                }
            })
            .collect()
    }
}

/// Runs FedFV under each projecting order on the same federations and
/// seeds. Needs `alpha = 0` and `tau = 0`, so only the order differs.
/// Each mode goes to `<output_dir>/<mode>/`; the comparison goes to
/// `<output_dir>/ablation.csv`.
pub fn run_order_ablation(cfg: &ExperimentConfig) -> Result<AblationResult> {
    cfg.validate()?;
    if cfg.fedfv.alpha != 0.0 {
        return Err(Error::config(
            "fedfv.alpha",
            "the order ablation needs alpha = 0",
        ));
    }
    if cfg.fedfv.tau != 0 {
        return Err(Error::config(
            "fedfv.tau",
            "the order ablation needs tau = 0",
        ));
    }
    let out = &cfg.run.output_dir;
    let mut runs = Vec::new();
    for mode in ORDER_MODES {
        let mut c = cfg.clone();
        c.run.algorithm = Algorithm::FedFv;
        c.run.order_mode = mode;
        let dir = out.join(mode.to_string());
        c.run.output_dir = dir.clone();
        runs.push((mode, run_seeds(&c, &dir, format!("fedfv_{mode}"))?));
    }
    let result = AblationResult { runs };
    let mut w = csv::Writer::from_writer(create(&out.join(ABLATION_FILE))?);
    for row in result.rows() {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(result)
}

/// Runs the theory sweeps and writes one record per check plus a summary
/// line to `<out_dir>/theory_report.jsonl`.
pub fn run_theory_suite(seed: u64, count: usize, out_dir: &Path) -> Result<TheoryReport> {
    let report = theory_suite(seed, count)?;
    create_dir(out_dir)?;
    let mut w = create(&out_dir.join(THEORY_FILE))?;
    report.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(report)
}
