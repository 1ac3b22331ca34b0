//! Constraint sets and normal-cone elements.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{self, Functional};
use crate::measures::DiscreteMeasure;
use crate::tangent::{self, PlanSign, Variation};
use crate::transport::{self, CostFunction};

/// Default relative boundary tolerance.
pub const BOUNDARY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Constraint {
    #[serde(rename = "full")]
    FullSpace,
    /// `W2(μ, ref) ≤ eps`
    #[serde(rename = "w2ball")]
    WassersteinBall {
        #[serde(rename = "ref")]
        reference: DiscreteMeasure,
        eps: f64,
    },
    /// `E_μ‖x‖² ≤ eps²`
    #[serde(rename = "moment2")]
    SecondMomentBall { eps: f64 },
    /// `J(μ) ≤ c`
    Sublevel {
        #[serde(rename = "J")]
        j: Functional,
        c: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Interior,
    Boundary,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActivityReport {
    pub activity: Activity,
    /// `None` for the full space (infinite slack).
    pub slack: Option<f64>,
}

/// A normal-cone element and the plan vertex it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalElement {
    pub variation: Variation,
    pub plan_id: usize,
    /// Multiplier actually used; interior points force it to zero.
    pub lambda: f64,
}

impl Constraint {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let radius = |eps: f64| {
            if eps.is_finite() && eps > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("radius must be finite and positive, got {eps}")))
            }
        };
        match self {
            Constraint::FullSpace => Ok(()),
            Constraint::WassersteinBall { reference, eps } => {
                radius(*eps)?;
                if reference.dim() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: reference.dim() });
                }
                Ok(())
            }
            Constraint::SecondMomentBall { eps } => radius(*eps),
            Constraint::Sublevel { j, c } => {
                if !c.is_finite() {
                    return Err(Error::NonFiniteInput("sublevel level".into()));
                }
                j.validate(dim)
            }
        }
    }

    /// Scale used by the relative boundary tolerance.
    fn tol_scale(&self) -> f64 {
        match self {
            Constraint::FullSpace => 1.0,
            Constraint::WassersteinBall { eps, .. } | Constraint::SecondMomentBall { eps } => 1.0 + eps,
            Constraint::Sublevel { c, .. } => 1.0 + c.abs(),
        }
    }
}

/// Slack and classification of `mu` with respect to `c`; `tol` is relative.
pub fn activity(c: &Constraint, mu: &DiscreteMeasure, tol: f64) -> Result<ActivityReport> {
    c.validate(mu.dim())?;
    let slack = match c {
        Constraint::FullSpace => return Ok(ActivityReport { activity: Activity::Interior, slack: None }),
        Constraint::WassersteinBall { reference, eps } => eps - transport::w2(mu, reference)?.0,
        Constraint::SecondMomentBall { eps } => eps * eps - mu.second_moment(),
        Constraint::Sublevel { j, c } => c - functionals::evaluate(j, mu)?,
    };
    let band = tol * c.tol_scale();
    let activity = if slack.abs() <= band {
        Activity::Boundary
    } else if slack > 0.0 {
        Activity::Interior
    } else {
        Activity::Infeasible
    };
    Ok(ActivityReport { activity, slack: Some(slack) })
}

/// All normal candidates at multiplier `lambda` (one per plan vertex for the
/// Wasserstein ball or per subgradient candidate for sublevel sets).
pub fn normal_candidates(c: &Constraint, mu: &DiscreteMeasure, lambda: f64) -> Result<Vec<NormalElement>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("multiplier must be nonnegative, got {lambda}")));
    }
    let act = activity(c, mu, BOUNDARY_TOL)?;
    match act.activity {
        Activity::Infeasible => return Err(Error::InfeasiblePoint { slack: act.slack.unwrap_or(0.0) }),
        Activity::Interior => {
            return Ok(vec![NormalElement { variation: tangent::local_zero(mu), plan_id: 0, lambda: 0.0 }])
        }
        Activity::Boundary => {}
    }
    match c {
        Constraint::FullSpace => unreachable!("full space is always interior"),
        Constraint::WassersteinBall { reference, .. } => {
            let vertices = transport::optimal_plan_vertices(mu, reference, &CostFunction::SqEuclidean)?;
            vertices
                .plans
                .iter()
                .enumerate()
                .map(|(id, plan)| {
                    let xi = tangent::from_plan(mu, reference, plan, PlanSign::Negative)?;
                    Ok(NormalElement { variation: tangent::scale(2.0 * lambda, &xi), plan_id: id, lambda })
                })
                .collect()
        }
        Constraint::SecondMomentBall { .. } => {
            let xi = Variation::from_map(mu, |x| x.iter().map(|xi| 2.0 * lambda * xi).collect())?;
            Ok(vec![NormalElement { variation: xi, plan_id: 0, lambda }])
        }
        Constraint::Sublevel { j, .. } => {
            let cands = functionals::subgradient_candidates(j, mu)?;
            if cands.iter().all(|s| s.variation.norm() <= 1e-12) {
                return Err(Error::QualificationFailure);
            }
            Ok(cands
                .into_iter()
                .filter(|s| s.variation.norm() > 1e-12)
                .map(|s| NormalElement { variation: tangent::scale(lambda, &s.variation), plan_id: s.plan_id, lambda })
                .collect())
        }
    }
}

/// The first normal candidate.
pub fn normal_element(c: &Constraint, mu: &DiscreteMeasure, lambda: f64) -> Result<NormalElement> {
    Ok(normal_candidates(c, mu, lambda)?.swap_remove(0))
}
