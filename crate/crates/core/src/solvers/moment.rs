use serde::Serialize;

use crate::constraints::Constraint;
use crate::error::{Error, Result};
use crate::functionals::{self, Functional, Potential};
use crate::linalg;
use crate::measures::DiscreteMeasure;
use crate::optimality::{self, StationarityReport};

/// Minimizer of `E_μ⟨θ,x⟩` over `E_μ‖x‖² ≤ ε²`.
#[derive(Debug, Clone, Serialize)]
pub struct SecondMomentSolution {
    pub mu_star: DiscreteMeasure,
    pub lambda_star: f64,
    pub objective: f64,
    pub stationarity: StationarityReport,
}

pub fn solve_linear_second_moment(theta: &[f64], eps: f64) -> Result<SecondMomentSolution> {
    if theta.is_empty() || !linalg::all_finite(theta) {
        return Err(Error::NonFiniteInput("theta".into()));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let tn = linalg::norm(theta);
    if tn == 0.0 {
        return Err(Error::ZeroTheta);
    }
    let x: Vec<f64> = theta.iter().map(|t| -eps * t / tn).collect();
    let mu_star = DiscreteMeasure::dirac(x)?;
    let j = Functional::expected_value(Potential::Linear { a: theta.to_vec() });
    let objective = functionals::evaluate(&j, &mu_star)?;
    let stationarity = optimality::kkt_residual(&j, &Constraint::SecondMomentBall { eps }, &mu_star)?;
    Ok(SecondMomentSolution { mu_star, lambda_star: tn / (2.0 * eps), objective, stationarity })
}
