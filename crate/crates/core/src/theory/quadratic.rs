//! Convex quadratic objectives for the convergence theorems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedcore::{fedfv_aggregate, plain_mean, GradientHistory, OrderMode};
use crate::models::ClientUpdate;
use crate::vecmath::{cosine, dot, norm, ParamVector};

/// `F(theta) = scale/2 * ||theta - center||^2`, which is `scale`-smooth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexQuadratic {
    pub center: ParamVector,
    pub scale: f64,
}

impl ConvexQuadratic {
    pub fn new(center: ParamVector, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Domain {
                what: "quadratic scale",
                reason: format!("{scale} is not positive"),
            });
        }
        Ok(Self { center, scale })
    }

    pub fn value(&self, theta: &ParamVector) -> Result<f64> {
        let d = theta.sub(&self.center)?;
        Ok(0.5 * self.scale * dot(&d, &d)?)
    }

    pub fn gradient(&self, theta: &ParamVector) -> Result<ParamVector> {
        Ok(theta.sub(&self.center)?.scaled(self.scale))
    }
}

/// Minimiser of the average of `objectives`.
pub fn average_optimum(objectives: &[ConvexQuadratic]) -> Result<ParamVector> {
    let first = objectives.first().ok_or(Error::NoUpdates)?;
    let total: f64 = objectives.iter().map(|q| q.scale).sum();
    let mut acc = ParamVector::zeros(first.center.dim());
    for q in objectives {
        acc.add_scaled(q.scale / total, &q.center)?;
    }
    Ok(acc)
}

/// What the two "client gradients" in the two-objective iteration are.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientConvention {
    /// `g_i = grad(F_i) / 2`: each client's share of the average objective,
    /// so `g_1 + g_2 = grad(F)` and the conflict step descends `F`.
    #[default]
    ObjectiveShare,
    /// `g_i = grad(F_i)`, with the averaged step `(g_1 + g_2)/2` when there
    /// is no conflict. The projected sum then has twice the scale of
    /// `grad(F)` and `F` can rise on a conflict step.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `theta_0 ..= theta_steps`.
    pub thetas: Vec<ParamVector>,
    /// `F(theta_t)` for the average objective `F = (F_1 + F_2)/2`.
    pub objective: Vec<f64>,
    /// Whether step `t` took the projected (conflict) branch.
    pub conflicted: Vec<bool>,
    /// `(eta/2)(1 - cos^2) ||grad F||^2` on conflict steps and
    /// `(eta/2) ||grad F||^2` otherwise: the decrease the descent lemma
    /// promises under [`GradientConvention::ObjectiveShare`].
    pub promised_decrease: Vec<f64>,
}

impl Trajectory {
    pub fn last(&self) -> &ParamVector {
        self.thetas.last().unwrap()
    }

    /// Largest `F(theta_{t+1}) - F(theta_t)`.
    pub fn max_increase(&self) -> f64 {
        self.objective
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest shortfall of the actual decrease against the promised one.
    pub fn max_descent_shortfall(&self) -> f64 {
        self.objective
            .windows(2)
            .zip(&self.promised_decrease)
            .map(|(w, promised)| promised - (w[0] - w[1]))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Two-client FedFV on a pair of quadratics: when the two gradients
/// conflict each is projected onto the other's normal plane and the SUM of
/// the projections is applied, with no rescale; otherwise the plain step.
pub fn run_two_objective_fedfv(
    f1: &ConvexQuadratic,
    f2: &ConvexQuadratic,
    theta0: &ParamVector,
    eta: f64,
    steps: usize,
    convention: GradientConvention,
) -> Result<Trajectory> {
    let lipschitz = f1.scale.max(f2.scale);
    if !(eta > 0.0 && eta <= (1.0 / lipschitz) * (1.0 + 1e-12)) {
        return Err(Error::Domain {
            what: "step size",
            reason: format!("need 0 < eta <= 1/L = {}, got {eta}", 1.0 / lipschitz),
        });
    }
    let avg = |t: &ParamVector| -> Result<f64> { Ok(0.5 * (f1.value(t)? + f2.value(t)?)) };
    let mut theta = theta0.clone();
    let mut out = Trajectory {
        thetas: vec![theta.clone()],
        objective: vec![avg(&theta)?],
        conflicted: Vec::with_capacity(steps),
        promised_decrease: Vec::with_capacity(steps),
    };
    let share = match convention {
        GradientConvention::ObjectiveShare => 0.5,
        GradientConvention::Full => 1.0,
    };
    for _ in 0..steps {
        let g1 = f1.gradient(&theta)?.scaled(share);
        let g2 = f2.gradient(&theta)?.scaled(share);
        let grad_f = f1.gradient(&theta)?.add(&f2.gradient(&theta)?)?.scaled(0.5);
        let d12 = dot(&g1, &g2)?;
        let conflict = d12 < 0.0;
        let (step, promised) = if conflict {
            let mut s = g1.add(&g2)?;
            s.add_scaled(-d12 / dot(&g1, &g1)?, &g1)?;
            s.add_scaled(-d12 / dot(&g2, &g2)?, &g2)?;
            let cos = cosine(&g1, &g2)?;
            (s, 0.5 * eta * (1.0 - cos * cos) * dot(&grad_f, &grad_f)?)
        } else {
            let s = match convention {
                GradientConvention::ObjectiveShare => g1.add(&g2)?,
                GradientConvention::Full => g1.add(&g2)?.scaled(0.5),
            };
            (s, 0.5 * eta * dot(&grad_f, &grad_f)?)
        };
        theta.add_scaled(-eta, &step)?;
        out.thetas.push(theta.clone());
        out.objective.push(avg(&theta)?);
        out.conflicted.push(conflict);
        out.promised_decrease.push(promised);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem4Record {
    pub cos: f64,
    pub norm_ok: bool,
    pub premise_holds: bool,
}

/// Compares the true average gradient `gbar` with the applied update
/// `gbar_prime`. `norm_ok` allows a relative `1e-12` so that an update
/// rescaled to `||gbar||` passes despite rounding.
pub fn theorem4_monitor(gbar: &ParamVector, gbar_prime: &ParamVector) -> Result<Theorem4Record> {
    let cos = cosine(gbar, gbar_prime)?;
    let norm_ok = norm(gbar) >= norm(gbar_prime) * (1.0 - 1e-12);
    Ok(Theorem4Record {
        cos,
        norm_ok,
        premise_holds: cos >= 0.5 && norm_ok,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem4Run {
    pub rounds: usize,
    pub premise_rounds: usize,
    /// Rounds where the premise held but the average objective rose.
    pub violations: usize,
    /// Rounds where the rescaled update was longer than the true gradient.
    pub norm_failures: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub optimum_objective: f64,
}

/// FedFV (`alpha = 0`, full participation) on `objectives`, one local
/// gradient step of size `eta` per client per round, with the Theorem 4
/// monitor evaluated every round. Stops early once the true gradient
/// vanishes.
pub fn theorem4_run(
    objectives: &[ConvexQuadratic],
    theta0: &ParamVector,
    eta: f64,
    rounds: usize,
) -> Result<Theorem4Run> {
    let avg = |t: &ParamVector| -> Result<f64> {
        let mut s = 0.0;
        for q in objectives {
            s += q.value(t)?;
        }
        Ok(s / objectives.len() as f64)
    };
    let mut theta = theta0.clone();
    let mut history = GradientHistory::new();
    let mut out = Theorem4Run {
        rounds: 0,
        premise_rounds: 0,
        violations: 0,
        norm_failures: 0,
        initial_objective: avg(&theta)?,
        final_objective: 0.0,
        optimum_objective: avg(&average_optimum(objectives)?)?,
    };
    for round in 0..rounds {
        let updates = objectives
            .iter()
            .enumerate()
            .map(|(k, q)| {
                Ok(ClientUpdate {
                    client_id: k,
                    grad: q.gradient(&theta)?.scaled(eta),
                    loss: q.value(&theta)?,
                    round,
                    num_samples: 1,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let gbar = plain_mean(&updates)?;
        if gbar.is_zero() {
            break;
        }
        let agg = fedfv_aggregate(
            &updates,
            &mut history,
            round,
            0.0,
            0,
            OrderMode::LossAscending,
            0,
        )?;
        if agg.update.is_zero() {
            break;
        }
        let rec = theorem4_monitor(&gbar, &agg.update)?;
        let before = avg(&theta)?;
        theta = theta.sub(&agg.update)?;
        let after = avg(&theta)?;
        out.rounds += 1;
        out.norm_failures += usize::from(!rec.norm_ok);
        if rec.premise_holds {
            out.premise_rounds += 1;
            if after > before + 1e-12 * before.abs().max(1.0) {
                out.violations += 1;
            }
        }
    }
    out.final_objective = avg(&theta)?;
    Ok(out)
}
