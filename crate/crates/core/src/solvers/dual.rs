//! Two-dimensional dual of the worst-case `E V + ρ Var V` over a Wasserstein ball.
//!
//! `D(λ, β) = λε² + Σ_k w_k max_y { V(y) + ρ(V(y) − β)² − λ‖y − x̂_k‖² }`

use std::cell::RefCell;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rayon::prelude::*;
use serde::Serialize;

use crate::constraints::Constraint;
use crate::error::{Error, Result};
use crate::functionals::{self, Functional, Potential};
use crate::linalg;
use crate::measures::DiscreteMeasure;
use crate::optimality::{self, StationarityReport};
use crate::transport;

use super::atom_rng;
use super::local::{self, DescentOptions, LocalResult, Status};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualOptions {
    pub multistart: usize,
    pub seed: u64,
    /// Nelder-Mead restarts from the incumbent.
    pub restarts: usize,
}

impl Default for DualOptions {
    fn default() -> Self {
        DualOptions { multistart: 4, seed: 0, restarts: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VisitedPoint {
    pub lambda: f64,
    pub beta: f64,
    pub dual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DualSolution {
    pub lambda_star: f64,
    /// Smallest multiplier with a finite inner maximum (bisection estimate).
    pub lambda_min: f64,
    pub beta_star: f64,
    /// `D(λ*, β*)`; the worst-case objective is its negative.
    pub dual_value: f64,
    /// Distinct maximizers found for each reference atom.
    pub per_atom_maximizers: Vec<Vec<Vec<f64>>>,
    pub reconstructed_primal: DiscreteMeasure,
    /// `E V + ρ Var V` at the reconstructed primal.
    pub primal_value: f64,
    pub gap: f64,
    pub radius_check: f64,
    pub visited: Vec<VisitedPoint>,
    /// Visited `(λ, β)` where `D` fell below the reference value (should be 0).
    pub weak_duality_violations: usize,
    pub stationarity: Option<StationarityReport>,
    pub stationarity_error: Option<String>,
}

struct Inner<'a> {
    v: &'a Potential,
    rho: f64,
    nu_hat: &'a DiscreteMeasure,
    multistart: usize,
    seed: u64,
}

struct AtomMax {
    value: f64,
    maximizers: Vec<Vec<f64>>,
}

enum InnerOutcome {
    Bounded(Vec<AtomMax>),
    Unbounded(usize),
}

impl Inner<'_> {
    fn h(&self, y: &[f64], beta: f64, lambda: f64, xhat: &[f64]) -> f64 {
        let v = self.v.eval(y);
        v + self.rho * (v - beta).powi(2) - lambda * linalg::dist_sq(y, xhat)
    }

    fn grad_h(&self, y: &[f64], beta: f64, lambda: f64, xhat: &[f64]) -> Vec<f64> {
        let v = self.v.eval(y);
        let gv = self.v.grad(y);
        let c = 1.0 + 2.0 * self.rho * (v - beta);
        gv.iter().zip(y.iter().zip(xhat)).map(|(g, (yi, xi))| c * g - 2.0 * lambda * (yi - xi)).collect()
    }

    fn atom(&self, k: usize, beta: f64, lambda: f64, warm: Option<&[f64]>) -> Option<AtomMax> {
        let xhat = self.nu_hat.point(k);
        let scale = 1.0 + linalg::norm(xhat);
        let mut starts = local::starts(xhat, self.multistart, &mut atom_rng(self.seed, k));
        if let Some(w) = warm {
            starts.insert(1, w.to_vec());
        }
        let opts = DescentOptions { max_iter: 20_000, gtol: 1e-11 * scale, radius: 1e6 * scale };
        let mut results: Vec<LocalResult> = Vec::with_capacity(starts.len());
        for z0 in starts {
            let r = local::descend(
                |y| -self.h(y, beta, lambda, xhat),
                |y| linalg::scaled(&self.grad_h(y, beta, lambda, xhat), -1.0),
                z0,
                xhat,
                opts,
            );
            if r.status == Status::Diverged {
                return None;
            }
            results.push(r);
        }
        let best = results.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
        let band = 1e-9 * (1.0 + best.abs());
        let mut maximizers: Vec<Vec<f64>> = Vec::new();
        let first = local::select(&results, 1e-9, 1e-6);
        maximizers.push(results[first].z.clone());
        for r in &results {
            if r.value <= best + band && maximizers.iter().all(|m| linalg::dist_sq(m, &r.z).sqrt() > 1e-6 * scale) {
                maximizers.push(r.z.clone());
            }
        }
        Some(AtomMax { value: -best, maximizers })
    }

    fn all(&self, beta: f64, lambda: f64, warm: Option<&[Vec<f64>]>) -> InnerOutcome {
        let out: Vec<Option<AtomMax>> = (0..self.nu_hat.len())
            .into_par_iter()
            .map(|k| self.atom(k, beta, lambda, warm.map(|w| w[k].as_slice())))
            .collect();
        match out.iter().position(Option::is_none) {
            Some(k) => InnerOutcome::Unbounded(k),
            None => InnerOutcome::Bounded(out.into_iter().map(Option::unwrap).collect()),
        }
    }
}

struct DualProblem<'a> {
    inner: Inner<'a>,
    eps: f64,
    lambda_min: f64,
    reference_value: f64,
    visited: RefCell<Vec<VisitedPoint>>,
    warm: RefCell<Option<Vec<Vec<f64>>>>,
}

impl DualProblem<'_> {
    fn lambda_of(&self, t: f64) -> f64 {
        self.lambda_min + t.exp()
    }

    fn dual(&self, lambda: f64, beta: f64) -> Option<(f64, Vec<AtomMax>)> {
        let warm = self.warm.borrow().clone();
        match self.inner.all(beta, lambda, warm.as_deref()) {
            InnerOutcome::Unbounded(_) => None,
            InnerOutcome::Bounded(maxes) => {
                let s: f64 = maxes.iter().zip(self.inner.nu_hat.weights()).map(|(m, w)| w * m.value).sum();
                Some((lambda * self.eps * self.eps + s, maxes))
            }
        }
    }
}

struct Objective<'p, 'a>(&'p DualProblem<'a>);

impl CostFunction for Objective<'_, '_> {
    type Param = Vec<f64>;
    type Output = f64;

    // Failures map to +∞: the simplex initialization unwraps costs.
    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let this = self.0;
        let lambda = this.lambda_of(p[0]);
        let beta = p[1];
        if !lambda.is_finite() || !beta.is_finite() {
            return Ok(f64::INFINITY);
        }
        let d = match this.dual(lambda, beta) {
            Some((d, maxes)) => {
                *this.warm.borrow_mut() = Some(maxes.into_iter().map(|m| m.maximizers[0].clone()).collect());
                d
            }
            None => f64::INFINITY,
        };
        if d.is_finite() {
            this.visited.borrow_mut().push(VisitedPoint { lambda, beta, dual: d });
        }
        Ok(d)
    }
}

fn primal_functional(v: &Potential, rho: f64) -> Functional {
    Functional::LinearCombination {
        terms: vec![(1.0, Functional::expected_value(v.clone())), (rho, Functional::Variance { v: v.clone() })],
    }
}

/// Bisection for the smallest λ making every inner maximum finite.
fn find_lambda_min(inner: &Inner, beta: f64) -> Result<f64> {
    if let InnerOutcome::Bounded(_) = inner.all(beta, 0.0, None) {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while let InnerOutcome::Unbounded(k) = inner.all(beta, hi, None) {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(Error::UnboundedInner { atom: k });
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        match inner.all(beta, mid, None) {
            InnerOutcome::Bounded(_) => hi = mid,
            InnerOutcome::Unbounded(_) => lo = mid,
        }
        if hi - lo <= 1e-10 * (1.0 + hi) {
            break;
        }
    }
    Ok(hi)
}

/// Splits atom mass between its nearest and farthest maximizers so that
/// the transport budget matches `ε²` when the maximizer sets allow it.
fn reconstruct(nu_hat: &DiscreteMeasure, maxes: &[Vec<Vec<f64>>], eps: f64) -> Result<DiscreteMeasure> {
    let mut near = Vec::new();
    let mut far = Vec::new();
    for (k, set) in maxes.iter().enumerate() {
        let x = nu_hat.point(k);
        let by_dist = |a: &&Vec<f64>, b: &&Vec<f64>| {
            linalg::dist_sq(a, x).total_cmp(&linalg::dist_sq(b, x)).then(linalg::lex_cmp(a, b))
        };
        near.push(set.iter().min_by(by_dist).expect("nonempty").clone());
        far.push(set.iter().max_by(by_dist).expect("nonempty").clone());
    }
    let budget = |pts: &[Vec<f64>]| -> f64 {
        pts.iter().enumerate().map(|(k, p)| nu_hat.weight(k) * linalg::dist_sq(p, nu_hat.point(k))).sum()
    };
    let (c_lo, c_hi) = (budget(&near), budget(&far));
    let tau = if c_hi > c_lo { ((eps * eps - c_lo) / (c_hi - c_lo)).clamp(0.0, 1.0) } else { 0.0 };
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for k in 0..nu_hat.len() {
        let w = nu_hat.weight(k);
        if near[k] == far[k] || tau == 0.0 {
            points.push(near[k].clone());
            weights.push(w);
        } else {
            points.push(near[k].clone());
            weights.push(w * (1.0 - tau));
            points.push(far[k].clone());
            weights.push(w * tau);
        }
    }
    DiscreteMeasure::new(nu_hat.dim(), points, weights)
}

pub fn solve_nonlinear_dro_dual(
    v: &Potential,
    rho: f64,
    eps: f64,
    nu_hat: &DiscreteMeasure,
    opts: &DualOptions,
) -> Result<DualSolution> {
    v.check_dim(nu_hat.dim())?;
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::InvalidParameter(format!("rho must be nonnegative, got {rho}")));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if opts.multistart == 0 {
        return Err(Error::InvalidParameter("multistart must be at least 1".into()));
    }
    let inner = Inner { v, rho, nu_hat, multistart: opts.multistart, seed: opts.seed };
    let j_primal = primal_functional(v, rho);
    let reference_value = functionals::evaluate(&j_primal, nu_hat)?;
    let beta0 = functionals::evaluate(&Functional::expected_value(v.clone()), nu_hat)?;
    let lambda_min = find_lambda_min(&inner, beta0)?;

    let problem = DualProblem {
        inner,
        eps,
        lambda_min,
        reference_value,
        visited: RefCell::new(Vec::new()),
        warm: RefCell::new(None),
    };
    let mut best = vec![0.0, beta0];
    let mut size = (1.0, 1.0 + beta0.abs());
    for _ in 0..opts.restarts.max(1) {
        let simplex = vec![best.clone(), vec![best[0] + size.0, best[1]], vec![best[0], best[1] + size.1]];
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-15)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let res = Executor::new(Objective(&problem), solver)
            .configure(|s| s.max_iters(2000))
            .run()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        if let Some(p) = res.state().get_best_param() {
            best = p.clone();
        }
        size = (0.1 * size.0, 0.1 * size.1);
    }

    let lambda_star = problem.lambda_of(best[0]);
    let beta_star = best[1];
    *problem.warm.borrow_mut() = None;
    let Some((dual_value, maxes)) = problem.dual(lambda_star, beta_star) else {
        return Err(Error::UnboundedInner { atom: 0 });
    };
    let per_atom_maximizers: Vec<Vec<Vec<f64>>> = maxes.into_iter().map(|m| m.maximizers).collect();
    let reconstructed_primal = reconstruct(nu_hat, &per_atom_maximizers, eps)?;
    let primal_value = functionals::evaluate(&j_primal, &reconstructed_primal)?;
    let (radius_check, _) = transport::w2(&reconstructed_primal, nu_hat)?;
    let visited = problem.visited.into_inner();
    let tol = 1e-9 * (1.0 + problem.reference_value.abs());
    let mut weak_duality_violations = visited.iter().filter(|p| p.dual < problem.reference_value - tol).count();
    if radius_check <= eps * (1.0 + 1e-9) {
        weak_duality_violations += visited.iter().filter(|p| p.dual < primal_value - tol).count();
    }

    let neg = Functional::LinearCombination {
        terms: vec![(-1.0, Functional::expected_value(v.clone())), (-rho, Functional::Variance { v: v.clone() })],
    };
    let c = Constraint::WassersteinBall { reference: nu_hat.clone(), eps };
    let (stationarity, stationarity_error) = match optimality::kkt_residual(&neg, &c, &reconstructed_primal) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };

    Ok(DualSolution {
        lambda_star,
        lambda_min,
        beta_star,
        dual_value,
        per_atom_maximizers,
        reconstructed_primal,
        primal_value,
        gap: (dual_value - primal_value).abs(),
        radius_check,
        visited,
        weak_duality_violations,
        stationarity,
        stationarity_error,
    })
}
