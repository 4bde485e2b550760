//! Minimum-norm element of the convex hull of a gradient set.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::vecmath::{dot, norm, ParamVector};

pub const SIMPLEX_MAX_ITERS: usize = 500;

/// Default tolerance for analytic gradient sets.
pub const PARETO_TOL_ANALYTIC: f64 = 1e-6;
/// Default tolerance for gradients taken along a trajectory.
pub const PARETO_TOL_TRAJECTORY: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct MinNormPoint {
    /// Convex weights, one per gradient.
    pub weights: Vec<f64>,
    /// `||sum_i w_i g_i||`, computed from the combined vector.
    pub norm: f64,
}

fn check_input(grads: &[ParamVector]) -> Result<()> {
    let first = grads.first().ok_or(Error::Domain {
        what: "pareto",
        reason: "empty gradient set".into(),
    })?;
    if let Some(g) = grads.iter().find(|g| g.dim() != first.dim()) {
        return Err(Error::Shape(format!(
            "gradient dimensions {} and {} differ",
            first.dim(),
            g.dim()
        )));
    }
    Ok(())
}

fn combine(grads: &[ParamVector], weights: &[f64]) -> Result<ParamVector> {
    let mut acc = ParamVector::zeros(grads[0].dim());
    for (g, w) in grads.iter().zip(weights) {
        acc.add_scaled(*w, g)?;
    }
    Ok(acc)
}

fn point(grads: &[ParamVector], weights: Vec<f64>) -> Result<MinNormPoint> {
    let norm = norm(&combine(grads, &weights)?);
    Ok(MinNormPoint { weights, norm })
}

/// Closed form for two gradients: line search of `||p g1 + (1-p) g2||`.
fn two_point(g1: &ParamVector, g2: &ParamVector) -> Result<Vec<f64>> {
    let diff = g1.sub(g2)?;
    let dd = dot(&diff, &diff)?;
    let p = if dd == 0.0 {
        1.0
    } else {
        (-dot(&diff, g2)? / dd).clamp(0.0, 1.0)
    };
    Ok(vec![p, 1.0 - p])
}

struct FwState {
    p: Vec<f64>,
    f: f64,
    decided: Option<bool>,
}

/// Away-step Frank-Wolfe with exact line search on `f(p) = p^T G p`.
///
/// `stop(f, gap)` is consulted every iteration; `gap` is the Frank-Wolfe
/// duality gap, so `f - gap` bounds the minimum from below. A stalled line
/// search ends the loop with `decided = None`.
fn frank_wolfe(
    gram: &[Vec<f64>],
    mut stop: impl FnMut(f64, f64) -> Option<bool>,
) -> Result<FwState> {
    let m = gram.len();
    let start = (0..m)
        .min_by(|&a, &b| gram[a][a].total_cmp(&gram[b][b]))
        .unwrap();
    let mut p = vec![0.0; m];
    p[start] = 1.0;
    let quad = |u: &[f64], v: &[f64]| -> f64 {
        (0..m)
            .map(|i| u[i] * (0..m).map(|j| gram[i][j] * v[j]).sum::<f64>())
            .sum()
    };
    for _ in 0..SIMPLEX_MAX_ITERS {
        let gp: Vec<f64> = (0..m)
            .map(|i| (0..m).map(|j| gram[i][j] * p[j]).sum())
            .collect();
        let f = p.iter().zip(&gp).map(|(a, b)| a * b).sum::<f64>().max(0.0);
        let s = (0..m).min_by(|&a, &b| gp[a].total_cmp(&gp[b])).unwrap();
        let fw_gap = (f - gp[s]).max(0.0);
        if let Some(answer) = stop(f, 2.0 * fw_gap) {
            return Ok(FwState {
                p,
                f,
                decided: Some(answer),
            });
        }
        let a = (0..m)
            .filter(|&i| p[i] > 0.0)
            .max_by(|&x, &y| gp[x].total_cmp(&gp[y]))
            .unwrap();
        let away_gap = gp[a] - f;
        let toward = fw_gap >= away_gap || p[a] >= 1.0;
        let (dir, gamma_max) = if toward {
            let mut d: Vec<f64> = p.iter().map(|v| -v).collect();
            d[s] += 1.0;
            (d, 1.0)
        } else {
            let mut d = p.clone();
            d[a] -= 1.0;
            (d, p[a] / (1.0 - p[a]))
        };
        let slope: f64 = dir.iter().zip(&gp).map(|(d, g)| d * g).sum();
        let curv = quad(&dir, &dir);
        let gamma = if curv > 0.0 {
            (-slope / curv).clamp(0.0, gamma_max)
        } else {
            gamma_max
        };
        if gamma <= 0.0 {
            return Ok(FwState {
                p,
                f,
                decided: None,
            });
        }
        for (pi, di) in p.iter_mut().zip(&dir) {
            *pi = (*pi + gamma * di).max(0.0);
        }
        if !toward && gamma == gamma_max {
            p[a] = 0.0;
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        if let Some(q) = face_minimizer(gram, &p) {
            if quad(&q, &q) < quad(&p, &p) {
                p = q;
            }
        }
    }
    Err(Error::NoConvergence {
        iterations: SIMPLEX_MAX_ITERS,
    })
}

/// Minimizer of `p^T G p` over the affine hull of the support of `p`, if it
/// lies strictly inside the simplex face and the face is not degenerate.
fn face_minimizer(gram: &[Vec<f64>], p: &[f64]) -> Option<Vec<f64>> {
    let support: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
    let k = support.len();
    if k < 2 {
        return None;
    }
    // KKT system [G_S 1; 1^T 0] [w; lambda] = [0; 1]
    let kkt = DMatrix::from_fn(k + 1, k + 1, |r, c| match (r < k, c < k) {
        (true, true) => gram[support[r]][support[c]],
        (false, false) => 0.0,
        _ => 1.0,
    });
    let mut rhs = DVector::zeros(k + 1);
    rhs[k] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    let w: Vec<f64> = sol.iter().take(k).copied().collect();
    if w.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
        return None;
    }
    let mut q = vec![0.0; p.len()];
    for (&i, v) in support.iter().zip(w) {
        q[i] = v;
    }
    Some(q)
}

fn gram_matrix(grads: &[ParamVector]) -> Result<Vec<Vec<f64>>> {
    grads
        .iter()
        .map(|a| grads.iter().map(|b| Ok(dot(a, b)?)).collect())
        .collect()
}

/// Minimum-norm point of the convex hull of `grads`, to a duality gap of
/// `1e-12` times the largest squared gradient norm.
pub fn min_norm_element(grads: &[ParamVector]) -> Result<MinNormPoint> {
    check_input(grads)?;
    match grads.len() {
        1 => point(grads, vec![1.0]),
        2 => point(grads, two_point(&grads[0], &grads[1])?),
        _ => {
            let gram = gram_matrix(grads)?;
            let scale = (0..grads.len()).map(|i| gram[i][i]).fold(0.0, f64::max);
            let state = frank_wolfe(&gram, |_, gap| (gap <= 1e-12 * scale).then_some(true))?;
            point(grads, state.p)
        }
    }
}

/// True iff some convex combination of `grads` has norm at most `tol`.
///
/// Stops as soon as the iterate is within `tol` or the duality gap proves
/// the minimum exceeds it; fails with [`Error::NoConvergence`] if neither
/// happens within [`SIMPLEX_MAX_ITERS`] iterations.
pub fn pareto_stationary(grads: &[ParamVector], tol: f64) -> Result<bool> {
    check_input(grads)?;
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(Error::Domain {
            what: "pareto tolerance",
            reason: format!("{tol} is not a finite non-negative number"),
        });
    }
    if grads.len() <= 2 {
        return Ok(min_norm_element(grads)?.norm <= tol);
    }
    let gram = gram_matrix(grads)?;
    let tol2 = tol * tol;
    let state = frank_wolfe(&gram, |f, gap| {
        if f <= tol2 {
            Some(true)
        } else if f - gap > tol2 {
            Some(false)
        } else {
            None
        }
    })?;
    Ok(state.decided.unwrap_or(state.f <= tol2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn worked_examples() {
        let anti = [pv(&[1.0, 0.0]), pv(&[-2.0, 0.0])];
        assert!(pareto_stationary(&anti, PARETO_TOL_ANALYTIC).unwrap());
        let w = min_norm_element(&anti).unwrap().weights;
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15);

        let ortho = [pv(&[1.0, 0.0]), pv(&[0.0, 1.0])];
        assert!(!pareto_stationary(&ortho, PARETO_TOL_ANALYTIC).unwrap());
        let mn = min_norm_element(&ortho).unwrap();
        assert!((mn.norm - 0.5f64.sqrt()).abs() < 1e-15);

        assert!(pareto_stationary(&[pv(&[0.0, 0.0])], PARETO_TOL_ANALYTIC).unwrap());
        assert!(!pareto_stationary(&[pv(&[0.0, 1e-3])], PARETO_TOL_ANALYTIC).unwrap());
    }

    #[test]
    fn three_point_cases() {
        // origin strictly inside the triangle
        let tri = [pv(&[1.0, 0.0]), pv(&[-1.0, 1.0]), pv(&[-1.0, -1.0])];
        assert!(pareto_stationary(&tri, 1e-6).unwrap());
        assert!(min_norm_element(&tri).unwrap().norm < 1e-5);
        // minimum on an edge: the segment between the two lower points
        let edge = [pv(&[1.0, 1.0]), pv(&[-1.0, 1.0]), pv(&[0.0, 3.0])];
        let mn = min_norm_element(&edge).unwrap();
        assert!((mn.norm - 1.0).abs() < 1e-9);
        assert!(mn.weights[2] < 1e-9);
        assert!(!pareto_stationary(&edge, 0.99).unwrap());
        assert!(pareto_stationary(&edge, 1.01).unwrap());
    }

    #[test]
    fn bad_inputs() {
        assert!(pareto_stationary(&[], 1e-6).is_err());
        assert!(pareto_stationary(&[pv(&[1.0]), pv(&[1.0, 2.0])], 1e-6).is_err());
        assert!(pareto_stationary(&[pv(&[1.0])], -1.0).is_err());
    }

    #[test]
    fn duplicate_gradients() {
        let g = pv(&[0.3, -0.4]);
        let mn = min_norm_element(&[g.clone(), g.clone(), g.clone()]).unwrap();
        assert!((mn.norm - 0.5).abs() < 1e-12);
    }

    #[test]
    fn thin_hull_converges() {
        // nearly opposed pair: the minimum sits on a long, thin edge
        let grads = [
            pv(&[1.0, 0.001, 0.2]),
            pv(&[-1.7, 0.0015, -0.34]),
            pv(&[0.3, 1.0, -0.5]),
        ];
        let mn = min_norm_element(&grads).unwrap();
        let direct = norm(&combine(&grads, &mn.weights).unwrap());
        assert!((mn.norm - direct).abs() < 1e-15);
        assert!(mn.norm < 2e-3);
        assert!(pareto_stationary(&grads, 1e-2).unwrap());
        assert!(!pareto_stationary(&grads, 1e-4).unwrap());
    }
}
