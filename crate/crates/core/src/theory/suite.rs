//! Randomised sweeps over all theory checks, with structured records.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bounds::{
    constructed_ensemble, f_bound, ordered_projection_run, theorem1_bounds, theorem1_check,
    theorem2_check_with, BoundCheck, BoundFn, Outcome,
};
use super::pareto::{pareto_stationary, PARETO_TOL_TRAJECTORY};
use super::quadratic::{
    average_optimum, run_two_objective_fedfv, theorem4_run, ConvexQuadratic, GradientConvention,
    Theorem4Run,
};
use crate::error::{Error, Result};
use crate::seeding::{rng_for, Stream};
use crate::vecmath::{norm, ParamVector};

/// Steps given to each two-objective problem by [`theory_suite`]. Problems
/// with nearly equal curvatures zig-zag across the Pareto set and can need
/// more than 5000 steps to get within `1e-4` of it.
pub const CONVERGENCE_STEPS: usize = 20_000;
/// Rounds given to each Theorem 4 run.
pub const MONITOR_ROUNDS: usize = 200;
/// Tolerance on per-step objective increase and descent shortfall.
pub const DESCENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub pass: usize,
    pub skip: usize,
    pub fail: usize,
}

impl OutcomeCounts {
    pub fn add(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Pass => self.pass += 1,
            Outcome::Skip => self.skip += 1,
            Outcome::Fail => self.fail += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSweepRecord {
    pub index: u64,
    pub m: usize,
    pub d: usize,
    pub premise_holds: bool,
    pub eps1: f64,
    pub eps2: f64,
    pub max_shrinkage_error: f64,
    pub theorem1_monotone: bool,
    pub theorem1: Outcome,
    pub theorem2: Outcome,
    pub theorem1_checks: Vec<BoundCheck>,
    pub theorem2_checks: Vec<BoundCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub index: u64,
    pub d: usize,
    pub scales: [f64; 2],
    pub eta: f64,
    pub steps: usize,
    pub max_increase: f64,
    pub max_descent_shortfall: f64,
    pub distance_to_optimum: f64,
    pub pareto_stationary: bool,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorRecord {
    pub index: u64,
    pub m: usize,
    pub d: usize,
    pub run: Theorem4Run,
    pub outcome: Outcome,
}

/// One line of the theory report stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum TheoryRecord {
    Bounds(BoundSweepRecord),
    Convergence(ConvergenceRecord),
    Monitor(MonitorRecord),
    Summary(TheorySummary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySummary {
    pub seed: u64,
    pub count: usize,
    pub theorem1: OutcomeCounts,
    pub theorem2: OutcomeCounts,
    pub theorem3: OutcomeCounts,
    pub theorem4: OutcomeCounts,
}

impl TheorySummary {
    pub fn failures(&self) -> usize {
        self.theorem1.fail + self.theorem2.fail + self.theorem3.fail + self.theorem4.fail
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport {
    pub summary: TheorySummary,
    pub bounds: Vec<BoundSweepRecord>,
    pub convergence: Vec<ConvergenceRecord>,
    pub monitor: Vec<MonitorRecord>,
}

impl TheoryReport {
    pub fn failures(&self) -> usize {
        self.summary.failures()
    }

    /// One JSON record per line: every check, then the summary.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let records = self
            .bounds
            .iter()
            .cloned()
            .map(TheoryRecord::Bounds)
            .chain(
                self.convergence
                    .iter()
                    .cloned()
                    .map(TheoryRecord::Convergence),
            )
            .chain(self.monitor.iter().cloned().map(TheoryRecord::Monitor))
            .chain(std::iter::once(TheoryRecord::Summary(self.summary.clone())));
        for r in records {
            serde_json::to_writer(&mut out, &r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn bound_record(
    index: u64,
    m: usize,
    d: usize,
    seed: u64,
    f: &BoundFn,
) -> Result<BoundSweepRecord> {
    let ensemble = constructed_ensemble(seed, index, m, d)?;
    let run = ordered_projection_run(&ensemble)?;
    let t1 = theorem1_check(&ensemble, &run)?;
    let t2 = theorem2_check_with(&ensemble, &run, f)?;
    let monotone = theorem1_bounds(&run).windows(2).all(|w| w[1] <= w[0]);
    let mut theorem1 = Outcome::combine(t1.iter().map(|c| c.outcome));
    let mut theorem2 = Outcome::combine(t2.iter().map(|c| c.outcome));
    if run.premise_holds && !monotone {
        theorem1 = Outcome::Fail;
    }
    if run.max_shrinkage_error > 1e-9 {
        theorem2 = Outcome::Fail;
    }
    Ok(BoundSweepRecord {
        index,
        m,
        d,
        premise_holds: run.premise_holds,
        eps1: run.eps1(),
        eps2: run.eps2(),
        max_shrinkage_error: run.max_shrinkage_error,
        theorem1_monotone: monotone,
        theorem1,
        theorem2,
        theorem1_checks: t1,
        theorem2_checks: t2,
    })
}

/// Draws ensembles (`m` in 2..=6, `d` in max(2, m-1)..=8) until `count` of
/// them satisfy the conflict premise. Ensembles that do not are kept as
/// skipped records.
pub fn bound_sweep(seed: u64, count: usize, f: &BoundFn) -> Result<Vec<BoundSweepRecord>> {
    let max_attempts = 50 * count.max(1);
    let mut records = Vec::new();
    let mut holding = 0;
    let mut index = 0u64;
    while holding < count {
        if index as usize >= max_attempts {
            return Err(Error::Domain {
                what: "bound sweep",
                reason: format!("only {holding} of {count} ensembles met the premise"),
            });
        }
        let mut rng = rng_for(seed, Stream::Theory, &[3, index]);
        let m = rng.random_range(2..=6usize);
        let d = rng.random_range((m - 1).max(2)..=8usize);
        let rec = bound_record(index, m, d, seed, f)?;
        holding += usize::from(rec.premise_holds);
        records.push(rec);
        index += 1;
    }
    Ok(records)
}

fn gaussian(rng: &mut impl Rng, d: usize, scale: f64) -> Result<ParamVector> {
    let v = (0..d)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(ParamVector::new(v)?)
}

/// A random two-quadratic problem: centers and start point Gaussian,
/// curvatures in `[0.1, 1]`.
pub fn random_two_objective(
    seed: u64,
    index: u64,
) -> Result<(ConvexQuadratic, ConvexQuadratic, ParamVector)> {
    let mut rng = rng_for(seed, Stream::Theory, &[1, index]);
    let d = rng.random_range(2..=8usize);
    let a = ConvexQuadratic::new(gaussian(&mut rng, d, 2.0)?, rng.random_range(0.1..=1.0))?;
    let b = ConvexQuadratic::new(gaussian(&mut rng, d, 2.0)?, rng.random_range(0.1..=1.0))?;
    let theta0 = gaussian(&mut rng, d, 3.0)?;
    Ok((a, b, theta0))
}

pub fn convergence_record(seed: u64, index: u64, steps: usize) -> Result<ConvergenceRecord> {
    let (a, b, theta0) = random_two_objective(seed, index)?;
    let eta = 1.0 / a.scale.max(b.scale);
    let tr = run_two_objective_fedfv(
        &a,
        &b,
        &theta0,
        eta,
        steps,
        GradientConvention::ObjectiveShare,
    )?;
    let end = tr.last();
    let optimum = average_optimum(&[a.clone(), b.clone()])?;
    let distance = norm(&end.sub(&optimum)?);
    let stationary =
        pareto_stationary(&[a.gradient(end)?, b.gradient(end)?], PARETO_TOL_TRAJECTORY)?;
    let max_increase = tr.max_increase();
    let shortfall = tr.max_descent_shortfall();
    let ok = max_increase <= DESCENT_TOL
        && shortfall <= DESCENT_TOL
        && (stationary || distance < PARETO_TOL_TRAJECTORY);
    Ok(ConvergenceRecord {
        index,
        d: theta0.dim(),
        scales: [a.scale, b.scale],
        eta,
        steps,
        max_increase,
        max_descent_shortfall: shortfall,
        distance_to_optimum: distance,
        pareto_stationary: stationary,
        outcome: if ok { Outcome::Pass } else { Outcome::Fail },
    })
}

pub fn monitor_record(seed: u64, index: u64) -> Result<MonitorRecord> {
    let mut rng = rng_for(seed, Stream::Theory, &[2, index]);
    let m = rng.random_range(2..=6usize);
    let d = rng.random_range(2..=8usize);
    let objectives = (0..m)
        .map(|_| ConvexQuadratic::new(gaussian(&mut rng, d, 2.0)?, rng.random_range(0.1..=1.0)))
        .collect::<Result<Vec<_>>>()?;
    let theta0 = gaussian(&mut rng, d, 3.0)?;
    let eta = 1.0 / objectives.iter().map(|q| q.scale).fold(0.0, f64::max);
    let run = theorem4_run(&objectives, &theta0, eta, MONITOR_ROUNDS)?;
    let outcome = if run.violations > 0 || run.norm_failures > 0 {
        Outcome::Fail
    } else if run.premise_rounds == 0 {
        Outcome::Skip
    } else {
        Outcome::Pass
    };
    Ok(MonitorRecord {
        index,
        m,
        d,
        run,
        outcome,
    })
}

/// Runs `count` premise-holding bound ensembles, `count` two-objective
/// problems and `count` Theorem 4 runs.
pub fn theory_suite(seed: u64, count: usize) -> Result<TheoryReport> {
    theory_suite_with(seed, count, &f_bound)
}

/// [`theory_suite`] with a replacement for `f_bound` in the Theorem 2 check.
pub fn theory_suite_with(seed: u64, count: usize, f: &BoundFn) -> Result<TheoryReport> {
    if count == 0 {
        return Err(Error::config("theory.count", "must be at least 1"));
    }
    let bounds = bound_sweep(seed, count, f)?;
    let convergence = (0..count as u64)
        .into_par_iter()
        .map(|i| convergence_record(seed, i, CONVERGENCE_STEPS))
        .collect::<Result<Vec<_>>>()?;
    let monitor = (0..count as u64)
        .into_par_iter()
        .map(|i| monitor_record(seed, i))
        .collect::<Result<Vec<_>>>()?;

    let mut summary = TheorySummary {
        seed,
        count,
        theorem1: OutcomeCounts::default(),
        theorem2: OutcomeCounts::default(),
        theorem3: OutcomeCounts::default(),
        theorem4: OutcomeCounts::default(),
    };
    for r in &bounds {
        summary.theorem1.add(r.theorem1);
        summary.theorem2.add(r.theorem2);
    }
    convergence
        .iter()
        .for_each(|r| summary.theorem3.add(r.outcome));
    monitor.iter().for_each(|r| summary.theorem4.add(r.outcome));
    Ok(TheoryReport {
        summary,
        bounds,
        convergence,
        monitor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let report = theory_suite(5, 20).unwrap();
        assert_eq!(report.failures(), 0, "{:?}", report.summary);
        assert_eq!(report.summary.theorem1.pass, 20);
        assert_eq!(report.summary.theorem3.pass, 20);
    }

    #[test]
    fn corrupted_bound_is_caught() {
        let zero = |_: usize, _: usize, _: f64, _: f64| Ok(0.0);
        let report = theory_suite_with(5, 20, &zero).unwrap();
        assert!(report.summary.theorem2.fail > 0);
        assert_eq!(report.summary.theorem1.fail, 0);
    }

    #[test]
    fn report_stream_ends_with_summary() {
        let report = theory_suite(1, 2).unwrap();
        let mut buf = Vec::new();
        report.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let last: TheoryRecord = serde_json::from_str(text.lines().last().unwrap()).unwrap();
        assert!(matches!(last, TheoryRecord::Summary(s) if s.count == 2));
        assert!(theory_suite(1, 0).is_err());
    }
}
