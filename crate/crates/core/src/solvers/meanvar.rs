//! Worst-case mean-variance risk of a linear position over a Wasserstein ball.
//!
//! Risk is `E⟨θ,x⟩ + (ρ/2) Var⟨θ,x⟩`; the objective minimized is its negative.

use nalgebra::Matrix4;
use serde::Serialize;

use crate::constraints::Constraint;
use crate::error::{Error, Result};
use crate::functionals::{self, Functional};
use crate::linalg;
use crate::measures::{self, DiscreteMeasure};
use crate::optimality::{self, StationarityReport};
use crate::transport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DroBranch {
    /// Root of the quartic in λ (reference variance positive).
    Quartic,
    /// Zero reference variance, `λ = ρ‖θ‖²/2`: each atom splits along θ.
    SplitAlongTheta,
    /// Zero reference variance, `λ = ‖θ‖/(2ε)`: rigid shift along θ.
    Shift,
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchCandidate {
    pub branch: DroBranch,
    pub lambda: f64,
    pub feasible: bool,
    pub cost_direct: Option<f64>,
    pub cost_formula: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct DroSolution {
    pub branch: DroBranch,
    pub lambda_star: f64,
    /// `y = map_matrix · x + offset` sends the worst case back to the reference.
    pub map_matrix: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
    pub worst_case: DiscreteMeasure,
    /// Risk evaluated directly at the worst case (authoritative).
    pub cost_direct: f64,
    /// Closed-form cost expression for the selected branch.
    pub cost_formula: f64,
    /// `|cost_direct − cost_formula| > 1e-6 (1 + |cost_direct|)`.
    pub formula_mismatch: bool,
    /// Objective value `−risk`.
    pub objective: f64,
    pub radius_check: f64,
    pub real_roots: Vec<f64>,
    pub candidates: Vec<BranchCandidate>,
    pub stationarity: StationarityReport,
}

struct Built {
    branch: DroBranch,
    lambda: f64,
    map_matrix: Vec<Vec<f64>>,
    offset: Vec<f64>,
    worst_case: DiscreteMeasure,
    cost_formula: f64,
}

fn risk(mu: &DiscreteMeasure, theta: &[f64], rho: f64) -> Result<f64> {
    let j = Functional::MeanVariance { theta: theta.to_vec(), rho, sign: 1.0 };
    functionals::evaluate(&j, mu)
}

/// `A = I − ρθθᵀ/(2λ)`, `offset = −(1 − ρ m)θ/(2λ)` with `m = E⟨θ,y⟩ + ‖θ‖²/(2λ)`.
fn affine_map(theta: &[f64], rho: f64, lambda: f64, mean_ref: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = theta.len();
    let t = linalg::norm_sq(theta);
    let a: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| f64::from(u8::from(i == j)) - rho * theta[i] * theta[j] / (2.0 * lambda)).collect())
        .collect();
    let m = mean_ref + t / (2.0 * lambda);
    let offset = linalg::scaled(theta, -(1.0 - rho * m) / (2.0 * lambda));
    (a, offset)
}

fn quartic_coeffs(t: f64, rho: f64, eps: f64, var_ref: f64) -> [f64; 5] {
    // (ρt − 2λ)²(4λ²ε² − t) − 4λ²ρ²t·Var = 0, highest degree first.
    let a = rho * t;
    let e2 = eps * eps;
    [
        16.0 * e2,
        -16.0 * a * e2,
        4.0 * a * a * e2 - 4.0 * t - 4.0 * rho * rho * t * var_ref,
        4.0 * a * t,
        -a * a * t,
    ]
}

fn poly(c: &[f64; 5], x: f64) -> (f64, f64) {
    let mut p = 0.0;
    let mut dp = 0.0;
    for &ci in c {
        dp = dp * x + p;
        p = p * x + ci;
    }
    (p, dp)
}

fn real_roots(c: &[f64; 5]) -> Vec<f64> {
    let lead = c[0];
    let mut m = Matrix4::<f64>::zeros();
    for j in 0..4 {
        m[(0, j)] = -c[j + 1] / lead;
    }
    for i in 1..4 {
        m[(i, i - 1)] = 1.0;
    }
    let mut roots: Vec<f64> = m
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-8 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..50 {
                let (p, dp) = poly(c, x);
                if dp == 0.0 {
                    break;
                }
                let nx = x - p / dp;
                if (nx - x).abs() <= 1e-16 * (1.0 + x.abs()) {
                    x = nx;
                    break;
                }
                x = nx;
            }
            x
        })
        .collect();
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    roots
}

fn quartic_branch(nu_hat: &DiscreteMeasure, theta: &[f64], rho: f64, lambda: f64, mean_ref: f64, var_ref: f64) -> Result<Built> {
    let t = linalg::norm_sq(theta);
    let det = 1.0 - rho * t / (2.0 * lambda);
    if det.abs() <= 1e-12 {
        return Err(Error::SingularMap { lambda });
    }
    let (map_matrix, offset) = affine_map(theta, rho, lambda, mean_ref);
    // x = A⁻¹(y − offset), A⁻¹ = I + ρ/(2λ − ρt) θθᵀ
    let k = rho / (2.0 * lambda - rho * t);
    let worst_case = measures::pushforward(nu_hat, |y| {
        let z = linalg::sub(y, &offset);
        let s = k * linalg::dot(theta, &z);
        linalg::axpy(&z, s, theta)
    })?;
    let cost_formula =
        t / (2.0 * lambda) + mean_ref + rho / (4.0 * lambda * lambda * (rho * t - 2.0 * lambda).powi(2)) * var_ref;
    Ok(Built { branch: DroBranch::Quartic, lambda, map_matrix, offset, worst_case, cost_formula })
}

fn shift_branch(nu_hat: &DiscreteMeasure, theta: &[f64], rho: f64, eps: f64, mean_ref: f64) -> Result<Built> {
    let tn = linalg::norm(theta);
    let lambda = tn / (2.0 * eps);
    let (map_matrix, offset) = affine_map(theta, rho, lambda, mean_ref);
    let shift = linalg::scaled(theta, eps / tn);
    let worst_case = nu_hat.shift(&shift)?;
    Ok(Built { branch: DroBranch::Shift, lambda, map_matrix, offset, worst_case, cost_formula: mean_ref + tn * eps })
}

/// Each atom `y` splits into `y + s±θ` with `E s = 1/(ρt)` and
/// `Var s = ε²/t − 1/(ρ²t²)`; needs `ρ²tε² ≥ 1`.
fn split_branch(nu_hat: &DiscreteMeasure, theta: &[f64], rho: f64, eps: f64, mean_ref: f64) -> Result<Option<Built>> {
    let t = linalg::norm_sq(theta);
    if rho <= 0.0 || rho * rho * t * eps * eps < 1.0 {
        return Ok(None);
    }
    let lambda = rho * t / 2.0;
    let es = 1.0 / (rho * t);
    let sd = (eps * eps / t - 1.0 / (rho * rho * t * t)).max(0.0).sqrt();
    let mut points = Vec::with_capacity(2 * nu_hat.len());
    let mut weights = Vec::with_capacity(2 * nu_hat.len());
    for (y, w) in nu_hat.atoms() {
        for s in [es - sd, es + sd] {
            points.push(linalg::axpy(y, s, theta));
            weights.push(0.5 * w);
        }
    }
    let worst_case = DiscreteMeasure::new(nu_hat.dim(), points, weights)?;
    let (map_matrix, offset) = affine_map(theta, rho, lambda, mean_ref);
    Ok(Some(Built {
        branch: DroBranch::SplitAlongTheta,
        lambda,
        map_matrix,
        offset,
        worst_case,
        cost_formula: mean_ref + rho * t * eps * eps,
    }))
}

pub fn solve_meanvar_dro(theta: &[f64], rho: f64, eps: f64, nu_hat: &DiscreteMeasure) -> Result<DroSolution> {
    if theta.len() != nu_hat.dim() {
        return Err(Error::DimensionMismatch { expected: nu_hat.dim(), got: theta.len() });
    }
    if !linalg::all_finite(theta) {
        return Err(Error::NonFiniteInput("theta".into()));
    }
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::InvalidParameter(format!("rho must be nonnegative, got {rho}")));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let t = linalg::norm_sq(theta);
    if t == 0.0 {
        return Err(Error::ZeroTheta);
    }
    let f = |y: &[f64]| linalg::dot(theta, y);
    let mean_ref = measures::expected_value(nu_hat, f)?;
    let var_ref = measures::variance(nu_hat, f)?;
    let second = measures::expected_value(nu_hat, |y| f(y).powi(2))?;
    let degenerate = var_ref <= 1e-14 * (1.0 + second);

    let mut real = Vec::new();
    let mut built = Vec::new();
    let mut candidates = Vec::new();
    if degenerate {
        built.push(shift_branch(nu_hat, theta, rho, eps, mean_ref)?);
        match split_branch(nu_hat, theta, rho, eps, mean_ref)? {
            Some(b) => built.push(b),
            None => candidates.push(BranchCandidate {
                branch: DroBranch::SplitAlongTheta,
                lambda: rho * t / 2.0,
                feasible: false,
                cost_direct: None,
                cost_formula: None,
                note: "requires ρ²‖θ‖²ε² ≥ 1".into(),
            }),
        }
    } else {
        real = real_roots(&quartic_coeffs(t, rho, eps, var_ref));
        let lam_floor = rho * t / 2.0;
        let lam_radius = t.sqrt() / (2.0 * eps);
        for &l in &real {
            let admissible = l > lam_floor * (1.0 + 1e-12) && l >= lam_radius * (1.0 - 1e-10);
            if !admissible {
                continue;
            }
            built.push(quartic_branch(nu_hat, theta, rho, l, mean_ref, var_ref)?);
        }
        if built.is_empty() {
            return Err(Error::NoValidRoot {
                roots: real,
                reason: format!("need λ > ρ‖θ‖²/2 = {lam_floor} and λ ≥ ‖θ‖/(2ε) = {lam_radius}"),
            });
        }
    }

    // Evaluate every candidate directly and keep the radius-feasible minimizer of −risk.
    let mut best: Option<(f64, Built, f64)> = None;
    for b in built {
        let (w2, _) = transport::w2(&b.worst_case, nu_hat)?;
        let r = risk(&b.worst_case, theta, rho)?;
        let feasible = (w2 - eps).abs() <= 1e-6 * (1.0 + eps);
        candidates.push(BranchCandidate {
            branch: b.branch,
            lambda: b.lambda,
            feasible,
            cost_direct: Some(r),
            cost_formula: Some(b.cost_formula),
            note: format!("W2 to reference {w2}"),
        });
        if feasible && best.as_ref().is_none_or(|(br, _, _)| -r < -br) {
            best = Some((r, b, w2));
        }
    }
    let Some((cost_direct, b, radius_check)) = best else {
        return Err(Error::NoValidRoot { roots: real, reason: "no candidate lies on the ball boundary".into() });
    };

    let j = Functional::mean_variance(theta.to_vec(), rho);
    let c = Constraint::WassersteinBall { reference: nu_hat.clone(), eps };
    let stationarity = optimality::kkt_residual(&j, &c, &b.worst_case)?;
    Ok(DroSolution {
        branch: b.branch,
        lambda_star: b.lambda,
        map_matrix: b.map_matrix,
        offset: b.offset,
        worst_case: b.worst_case,
        cost_direct,
        cost_formula: b.cost_formula,
        formula_mismatch: (cost_direct - b.cost_formula).abs() > 1e-6 * (1.0 + cost_direct.abs()),
        objective: -cost_direct,
        radius_check,
        real_roots: real,
        candidates,
        stationarity,
    })
}
