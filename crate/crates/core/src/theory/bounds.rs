//! Sequential projection of a gradient set and the two conflict bounds on
//! the resulting mean.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::simplex_directions;
use crate::error::{Error, Result};
use crate::seeding::{rng_for, Stream};
use crate::vecmath::{dot, norm, project_to_normal_plane, ParamVector};

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEnsemble {
    grads: Vec<ParamVector>,
}

impl GradientEnsemble {
    pub fn new(grads: Vec<ParamVector>) -> Result<Self> {
        if grads.len() < 2 {
            return Err(Error::Domain {
                what: "gradient ensemble",
                reason: format!("need at least 2 gradients, got {}", grads.len()),
            });
        }
        let d = grads[0].dim();
        if let Some(g) = grads.iter().find(|g| g.dim() != d) {
            return Err(Error::Shape(format!(
                "gradient dimensions {d} and {} differ",
                g.dim()
            )));
        }
        if grads.iter().any(ParamVector::is_zero) {
            return Err(Error::Domain {
                what: "gradient ensemble",
                reason: "zero gradient".into(),
            });
        }
        Ok(Self { grads })
    }

    pub fn grads(&self) -> &[ParamVector] {
        &self.grads
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.grads[0].dim()
    }

    pub fn max_norm(&self) -> f64 {
        self.grads.iter().map(norm).fold(0.0, f64::max)
    }
}

/// Every intermediate of projecting each gradient, in turn, onto the normal
/// planes of `g_1, ..., g_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRun {
    /// `g_i^(m)` for each i.
    pub projected: Vec<ParamVector>,
    /// `(1/m) sum_i g_i^(m)`.
    pub mean: ParamVector,
    /// `|cos|` of every original pair and of every projection that fired.
    pub cosines: Vec<f64>,
    /// `norms[j][i] = ||g_i^(j)||` for `j = 0..=m`.
    pub norms: Vec<Vec<f64>>,
    /// All original pairs conflict and every projection step fired.
    pub premise_holds: bool,
    /// Largest relative deviation from `||g^(k)||^2 = (1 - cos^2) ||g^(k-1)||^2`
    /// over the steps that fired.
    pub max_shrinkage_error: f64,
}

impl ProjectionRun {
    pub fn eps1(&self) -> f64 {
        self.cosines.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn eps2(&self) -> f64 {
        self.cosines.iter().copied().fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.projected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projected.is_empty()
    }
}

/// `g_i^(k) = g_i^(k-1) - (g_i^(k-1).g_k / ||g_k||^2) g_k` when the two
/// conflict and `k != i`, otherwise `g_i^(k) = g_i^(k-1)`.
pub fn ordered_projection_run(ensemble: &GradientEnsemble) -> Result<ProjectionRun> {
    let grads = ensemble.grads();
    let m = grads.len();
    let mut premise_holds = true;
    let mut cosines = Vec::new();
    for (i, a) in grads.iter().enumerate() {
        for b in &grads[i + 1..] {
            let d = dot(a, b)?;
            premise_holds &= d < 0.0;
            cosines.push((d / (norm(a) * norm(b))).abs().min(1.0));
        }
    }

    let mut current = grads.to_vec();
    let mut norms = vec![current.iter().map(norm).collect::<Vec<_>>()];
    let mut max_shrinkage_error: f64 = 0.0;
    for (k, target) in grads.iter().enumerate() {
        let target_norm = norm(target);
        for (i, g) in current.iter_mut().enumerate() {
            if i == k {
                continue;
            }
            let d = dot(g, target)?;
            if d < 0.0 {
                let before = dot(g, g)?;
                let cos = (d / (before.sqrt() * target_norm)).clamp(-1.0, 1.0);
                *g = project_to_normal_plane(g, target)?;
                let after = dot(g, g)?;
                let err = (after - (1.0 - cos * cos) * before).abs() / before;
                max_shrinkage_error = max_shrinkage_error.max(err);
                cosines.push(cos.abs());
            } else {
                premise_holds = false;
            }
        }
        norms.push(current.iter().map(norm).collect());
    }

    let mut mean = ParamVector::zeros(ensemble.dim());
    for g in &current {
        mean.add_scaled(1.0 / m as f64, g)?;
    }
    Ok(ProjectionRun {
        projected: current,
        mean,
        cosines,
        norms,
        premise_holds,
        max_shrinkage_error,
    })
}

/// `f(m, k, eps1, eps2) = eps2^2 r (1 - r^(m-k)) / (1 - r)` with
/// `r = sqrt(1 - eps1^2)`; zero when `eps1 = 1`.
pub fn f_bound(m: usize, k: usize, eps1: f64, eps2: f64) -> Result<f64> {
    if !(eps1 > 0.0 && eps1 <= eps2 && eps2 <= 1.0) {
        return Err(Error::Domain {
            what: "f_bound",
            reason: format!("need 0 < eps1 <= eps2 <= 1, got eps1={eps1}, eps2={eps2}"),
        });
    }
    if !(1..=m).contains(&k) {
        return Err(Error::Domain {
            what: "f_bound",
            reason: format!("need 1 <= k <= m, got k={k}, m={m}"),
        });
    }
    let r = (1.0 - eps1 * eps1).sqrt();
    if r == 0.0 {
        return Ok(0.0);
    }
    Ok(eps2 * eps2 * r * (1.0 - r.powi((m - k) as i32)) / (1.0 - r))
}

/// The Theorem 1 bound for every `k = 1..=m`:
/// `(eps^2 / m) sum_{j=k}^{m-1} sum_{i != j+1} ||g_i^(j)||` with `eps = eps2`.
///
/// Built as suffix sums, so the result is non-increasing in `k` even in
/// floating point.
pub fn theorem1_bounds(run: &ProjectionRun) -> Vec<f64> {
    let m = run.len();
    let eps = run.eps2();
    let mut bounds = vec![0.0; m];
    let mut acc = 0.0;
    for j in (1..m).rev() {
        // 1-based target j + 1 is the 0-based index j
        acc += (0..m)
            .filter(|&i| i != j)
            .map(|i| run.norms[j][i])
            .sum::<f64>();
        bounds[j - 1] = eps * eps / m as f64 * acc;
    }
    bounds
}

pub fn theorem1_bound(run: &ProjectionRun, k: usize) -> Result<f64> {
    if !(1..=run.len()).contains(&k) {
        return Err(Error::Domain {
            what: "theorem1_bound",
            reason: format!("k={k} outside 1..={}", run.len()),
        });
    }
    Ok(theorem1_bounds(run)[k - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Skip,
    Fail,
}

impl Outcome {
    /// `Fail` if any input failed, else `Skip` if all skipped, else `Pass`.
    pub fn combine(outcomes: impl IntoIterator<Item = Outcome>) -> Outcome {
        let mut any_pass = false;
        let mut any = false;
        for o in outcomes {
            any = true;
            match o {
                Outcome::Fail => return Outcome::Fail,
                Outcome::Pass => any_pass = true,
                Outcome::Skip => {}
            }
        }
        if any_pass || !any {
            Outcome::Pass
        } else {
            Outcome::Skip
        }
    }
}

/// One target's conflict with the projected mean against its bound.
///
/// Only the conflict side is checked: `observed >= -bound`. The bounds do
/// not cap agreement (at `k = m` the bound is zero while the last target
/// usually agrees with the mean).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub k: usize,
    pub observed: f64,
    pub bound: f64,
    pub outcome: Outcome,
}

fn judge(premise: bool, observed: f64, bound: f64, slack: f64) -> Outcome {
    if !premise {
        Outcome::Skip
    } else if observed >= -bound - slack {
        Outcome::Pass
    } else {
        Outcome::Fail
    }
}

/// Theorem 1: `(g_k / ||g_k||) . mean >= -bound_k` for each k.
pub fn theorem1_check(ensemble: &GradientEnsemble, run: &ProjectionRun) -> Result<Vec<BoundCheck>> {
    let bounds = theorem1_bounds(run);
    let slack = 1e-9 * ensemble.max_norm();
    ensemble
        .grads()
        .iter()
        .zip(bounds)
        .enumerate()
        .map(|(i, (g, bound))| {
            let observed = dot(g, &run.mean)? / norm(g);
            Ok(BoundCheck {
                k: i + 1,
                observed,
                bound,
                outcome: judge(run.premise_holds, observed, bound, slack),
            })
        })
        .collect()
}

/// Signature of [`f_bound`], so a check can be run against a replacement.
pub type BoundFn = dyn Fn(usize, usize, f64, f64) -> Result<f64> + Sync;

/// Theorem 2: `g_k . mean >= -(m-1)/m (max ||g_i||)^2 f(m, k, eps1, eps2)`.
pub fn theorem2_check(ensemble: &GradientEnsemble, run: &ProjectionRun) -> Result<Vec<BoundCheck>> {
    theorem2_check_with(ensemble, run, &f_bound)
}

pub fn theorem2_check_with(
    ensemble: &GradientEnsemble,
    run: &ProjectionRun,
    f: &BoundFn,
) -> Result<Vec<BoundCheck>> {
    let m = ensemble.len();
    let max2 = ensemble.max_norm().powi(2);
    let slack = 1e-9 * max2;
    ensemble
        .grads()
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let k = i + 1;
            let observed = dot(g, &run.mean)?;
            if !run.premise_holds {
                return Ok(BoundCheck {
                    k,
                    observed,
                    bound: f64::NAN,
                    outcome: Outcome::Skip,
                });
            }
            let bound = (m - 1) as f64 / m as f64 * max2 * f(m, k, run.eps1(), run.eps2())?;
            Ok(BoundCheck {
                k,
                observed,
                bound,
                outcome: judge(true, observed, bound, slack),
            })
        })
        .collect()
}

/// Random ensemble built around a regular simplex: `m` directions with
/// pairwise cosine `-1/(m-1)`, perturbed by noise of random scale up to 0.3
/// and given random lengths in `[0.2, 3]`. Most draws, but not all, satisfy
/// the all-pairs-conflict premise.
pub fn constructed_ensemble(seed: u64, index: u64, m: usize, d: usize) -> Result<GradientEnsemble> {
    if m < 2 || d + 1 < m {
        return Err(Error::Domain {
            what: "constructed ensemble",
            reason: format!("need m >= 2 and d >= m - 1, got m={m}, d={d}"),
        });
    }
    let mut rng = rng_for(seed, Stream::Theory, &[0, index]);
    let noise = rng.random_range(0.0..0.3);
    let dirs = simplex_directions(m, d, &mut rng);
    let grads = dirs
        .into_iter()
        .map(|mut v| {
            v.iter_mut()
                .for_each(|x| *x += noise * rng.sample::<f64, _>(rand_distr::StandardNormal));
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let len = rng.random_range(0.2..=3.0);
            ParamVector::new(v.into_iter().map(|x| x / n * len).collect())
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    GradientEnsemble::new(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn hand_ensemble() {
        let e = GradientEnsemble::new(vec![pv(&[1.0, 0.0]), pv(&[-1.0, 1.0])]).unwrap();
        let run = ordered_projection_run(&e).unwrap();
        assert_eq!(run.projected, vec![pv(&[0.5, 0.5]), pv(&[0.0, 1.0])]);
        assert_eq!(run.mean, pv(&[0.25, 0.75]));
        assert!(run.premise_holds);
        let c = 0.5f64.sqrt();
        assert!((run.eps1() - c).abs() < 1e-15 && (run.eps2() - c).abs() < 1e-15);

        let t2 = theorem2_check(&e, &run).unwrap();
        assert!((t2[0].observed - 0.25).abs() < 1e-15);
        assert!((t2[0].bound - 0.353_553_390_593_273_8).abs() < 1e-12);
        assert!(t2.iter().all(|c| c.outcome == Outcome::Pass));
        assert_eq!(t2[1].bound, 0.0);
    }

    #[test]
    fn orthogonal_ensemble_is_untouched() {
        let e = GradientEnsemble::new(vec![pv(&[2.0, 0.0, 0.0]), pv(&[0.0, 1.0, 0.0])]).unwrap();
        let run = ordered_projection_run(&e).unwrap();
        assert_eq!(run.mean, pv(&[1.0, 0.5, 0.0]));
        assert!(!run.premise_holds);
        for c in theorem2_check(&e, &run).unwrap() {
            assert_eq!(c.outcome, Outcome::Skip);
            assert!(c.observed >= 0.0);
        }
    }

    #[test]
    fn f_bound_values() {
        assert!((f_bound(3, 1, 0.6, 0.8).unwrap() - 0.9216).abs() < 1e-12);
        assert_eq!(f_bound(5, 5, 0.3, 0.7).unwrap(), 0.0);
        assert_eq!(f_bound(4, 2, 1.0, 1.0).unwrap(), 0.0);
        assert!(f_bound(3, 1, 0.0, 0.5).is_err());
        assert!(f_bound(3, 1, 0.7, 0.5).is_err());
        assert!(f_bound(3, 4, 0.5, 0.5).is_err());
        assert!(f_bound(3, 0, 0.5, 0.5).is_err());
        assert!(f_bound(3, 1, 0.5, 1.1).is_err());
    }

    #[test]
    fn theorem1_last_bound_is_zero_and_monotone() {
        for idx in 0..50 {
            let e = constructed_ensemble(3, idx, 5, 6).unwrap();
            let run = ordered_projection_run(&e).unwrap();
            let b = theorem1_bounds(&run);
            assert_eq!(b[4], 0.0);
            assert!(b.windows(2).all(|w| w[1] <= w[0]));
            assert_eq!(theorem1_bound(&run, 2).unwrap(), b[1]);
        }
    }

    #[test]
    fn shrinkage_identity_holds() {
        for idx in 0..100 {
            let e = constructed_ensemble(9, idx, 4, 3).unwrap();
            let run = ordered_projection_run(&e).unwrap();
            assert!(
                run.max_shrinkage_error < 1e-9,
                "{}",
                run.max_shrinkage_error
            );
        }
    }

    #[test]
    fn constructed_ensembles_mostly_conflict() {
        let holding = (0..200)
            .filter(|&i| {
                let e = constructed_ensemble(1, i, 4, 5).unwrap();
                ordered_projection_run(&e).unwrap().premise_holds
            })
            .count();
        assert!(holding > 50, "{holding}");
    }

    #[test]
    fn ensemble_validation() {
        assert!(GradientEnsemble::new(vec![pv(&[1.0])]).is_err());
        assert!(GradientEnsemble::new(vec![pv(&[1.0]), pv(&[0.0])]).is_err());
        assert!(GradientEnsemble::new(vec![pv(&[1.0]), pv(&[1.0, 0.0])]).is_err());
        assert!(constructed_ensemble(0, 0, 5, 3).is_err());
    }

    #[test]
    fn outcome_combination() {
        use Outcome::*;
        assert_eq!(Outcome::combine([Pass, Skip]), Pass);
        assert_eq!(Outcome::combine([Skip, Skip]), Skip);
        assert_eq!(Outcome::combine([Pass, Fail]), Fail);
    }
}
