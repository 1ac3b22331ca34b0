//! Stationarity residuals: Fermat's rule and the constrained KKT condition.
//!
//! A residual is the smallest local norm of `g ⊕ λ n` found over the searched
//! subgradient candidates `g`, normal candidates `n`, multipliers `λ ≥ 0` and
//! gluings. Zero is necessary for optimality; a positive value certifies
//! non-stationarity only relative to the searched candidates, and the report
//! says how many were searched.

use serde::Serialize;

use crate::constraints::{self, Activity, Constraint};
use crate::error::{Error, Result};
use crate::functionals::{self, Functional, Subgradient};
use crate::measures::DiscreteMeasure;
use crate::tangent::{self, GluedCoupling, Variation};

/// Default relative stationarity tolerance, scaled by `1 + ‖g‖`.
pub const STATIONARY_TOL: f64 = 1e-6;
const GRID_POINTS: usize = 41;
const GOLDEN_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    StationaryWithin { tol: f64 },
    NotStationary { lower_bound: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMethod {
    /// No multiplier (interior point or unconstrained).
    None,
    /// Exact minimizer of the quadratic `aλ² + bλ + c`.
    ClosedForm,
    /// Grid scan refined by golden-section search and coupling polish.
    GoldenSection,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityReport {
    pub residual: f64,
    pub lambda: f64,
    pub activity: Activity,
    pub slack: Option<f64>,
    /// Subgradient candidate (plan vertex) realizing the minimum.
    pub plan_id: usize,
    /// Normal candidate (plan vertex) realizing the minimum, if constrained.
    pub normal_plan_id: Option<usize>,
    pub coupling: GluedCoupling,
    pub verdict: Verdict,
    /// Local norm of the subgradient realizing the minimum.
    pub g_norm: f64,
    pub subgradient_candidates: usize,
    pub normal_candidates: usize,
    pub lambda_method: LambdaMethod,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualOptions {
    /// Relative tolerance: stationary when residual ≤ tol·(1 + ‖g‖).
    pub tol: f64,
    /// Search λ with the golden-section path even when the closed form applies.
    pub force_golden: bool,
    /// Use at most this many subgradient candidates.
    pub max_candidates: Option<usize>,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        ResidualOptions { tol: STATIONARY_TOL, force_golden: false, max_candidates: None }
    }
}

impl StationarityReport {
    /// Re-judges the verdict at relative tolerance `tol`.
    pub fn retolerance(&mut self, tol: f64) {
        self.verdict = verdict(self.residual, self.g_norm, tol);
    }

    pub fn is_stationary(&self) -> bool {
        matches!(self.verdict, Verdict::StationaryWithin { .. })
    }
}

fn verdict(residual: f64, g_norm: f64, tol: f64) -> Verdict {
    let t = tol * (1.0 + g_norm);
    if residual <= t {
        Verdict::StationaryWithin { tol: t }
    } else {
        Verdict::NotStationary { lower_bound: residual }
    }
}

fn limited(mut cands: Vec<Subgradient>, opts: &ResidualOptions) -> Vec<Subgradient> {
    if let Some(k) = opts.max_candidates {
        cands.truncate(k.max(1));
    }
    cands
}

pub fn fermat_residual(j: &Functional, mu: &DiscreteMeasure) -> Result<StationarityReport> {
    fermat_residual_with(j, mu, &ResidualOptions::default())
}

pub fn fermat_residual_with(j: &Functional, mu: &DiscreteMeasure, opts: &ResidualOptions) -> Result<StationarityReport> {
    let cands = limited(functionals::subgradient_candidates(j, mu)?, opts);
    let searched = cands.len();
    let best = cands
        .into_iter()
        .map(|s| (s.variation.norm(), s))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.plan_id.cmp(&b.1.plan_id)))
        .expect("at least one subgradient candidate");
    let (residual, g) = best;
    let (_, coupling) = tangent::local_inner(&g.variation, &tangent::local_zero(mu))?;
    let mut notes = vec![g.provenance.clone()];
    if searched > 1 || !j.is_differentiable() {
        notes.push(format!("minimum over {searched} searched subgradient candidate(s)"));
    }
    Ok(StationarityReport {
        residual,
        lambda: 0.0,
        activity: Activity::Interior,
        slack: None,
        plan_id: g.plan_id,
        normal_plan_id: None,
        coupling,
        verdict: verdict(residual, residual, opts.tol),
        g_norm: residual,
        subgradient_candidates: searched,
        normal_candidates: 0,
        lambda_method: LambdaMethod::None,
        notes,
    })
}

pub fn kkt_residual(j: &Functional, c: &Constraint, mu: &DiscreteMeasure) -> Result<StationarityReport> {
    kkt_residual_with(j, c, mu, &ResidualOptions::default())
}

struct Candidate {
    residual: f64,
    lambda: f64,
    coupling: GluedCoupling,
    g_id: usize,
    n_id: usize,
    g_norm: f64,
    method: LambdaMethod,
}

pub fn kkt_residual_with(
    j: &Functional,
    c: &Constraint,
    mu: &DiscreteMeasure,
    opts: &ResidualOptions,
) -> Result<StationarityReport> {
    j.validate(mu.dim())?;
    let act = constraints::activity(c, mu, constraints::BOUNDARY_TOL)?;
    match act.activity {
        Activity::Infeasible => return Err(Error::InfeasiblePoint { slack: act.slack.unwrap_or(0.0) }),
        Activity::Interior => {
            let mut r = fermat_residual_with(j, mu, opts)?;
            r.slack = act.slack;
            return Ok(r);
        }
        Activity::Boundary => {}
    }
    let subgrads = limited(functionals::subgradient_candidates(j, mu)?, opts);
    let normals = constraints::normal_candidates(c, mu, 1.0)?;

    let mut best: Option<Candidate> = None;
    for g in &subgrads {
        for n in &normals {
            let cand = residual_for_pair(&g.variation, &n.variation, opts.force_golden)?;
            let cand = Candidate { g_id: g.plan_id, n_id: n.plan_id, ..cand };
            let better = match &best {
                None => true,
                Some(b) => {
                    cand.residual < b.residual
                        || (cand.residual == b.residual && (cand.g_id, cand.n_id) < (b.g_id, b.n_id))
                        || (cand.residual == b.residual && (cand.g_id, cand.n_id) == (b.g_id, b.n_id) && cand.lambda < b.lambda)
                }
            };
            if better {
                best = Some(cand);
            }
        }
    }
    let best = best.expect("candidate lists are nonempty");
    let mut notes = vec![
        "constraint qualification and SNC assumed for catalog constraints".to_string(),
        format!(
            "minimum over {} subgradient x {} normal candidate(s); a positive residual is relative to this search",
            subgrads.len(),
            normals.len()
        ),
    ];
    if let Some(g) = subgrads.iter().find(|g| g.plan_id == best.g_id) {
        notes.push(g.provenance.clone());
    }
    Ok(StationarityReport {
        residual: best.residual,
        lambda: best.lambda,
        activity: Activity::Boundary,
        slack: act.slack,
        plan_id: best.g_id,
        normal_plan_id: Some(best.n_id),
        coupling: best.coupling,
        verdict: verdict(best.residual, best.g_norm, opts.tol),
        g_norm: best.g_norm,
        subgradient_candidates: subgrads.len(),
        normal_candidates: normals.len(),
        lambda_method: best.method,
        notes,
    })
}

/// Coefficients `(a, b, c)` of `Σ mass ‖g + λ n‖²` along a fixed gluing.
fn quadratic_along(g: &Variation, n: &Variation, alpha: &GluedCoupling) -> (f64, f64, f64) {
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for e in &alpha.entries {
        let gv = &g.arrows()[e.a].v;
        let nv = &n.arrows()[e.b].v;
        a += e.mass * crate::linalg::norm_sq(nv);
        b += 2.0 * e.mass * crate::linalg::dot(gv, nv);
        c += e.mass * crate::linalg::norm_sq(gv);
    }
    (a, b, c)
}

fn quadratic_argmin(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        (-b / (2.0 * a)).max(0.0)
    } else {
        0.0
    }
}

/// Evaluates `Σ mass ‖g + λ n‖²` directly (no cancellation).
fn sum_norm_along(g: &Variation, n: &Variation, alpha: &GluedCoupling, lambda: f64) -> f64 {
    alpha
        .entries
        .iter()
        .map(|e| {
            let gv = &g.arrows()[e.a].v;
            let nv = &n.arrows()[e.b].v;
            e.mass * gv.iter().zip(nv).map(|(x, y)| (x + lambda * y).powi(2)).sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

fn residual_for_pair(g: &Variation, n_unit: &Variation, force_golden: bool) -> Result<Candidate> {
    let g_norm = g.norm();
    let forced = g.is_map_induced() || n_unit.is_map_induced();
    if forced && !force_golden {
        // Gluing is unique, so the objective is one quadratic in λ.
        let (_, alpha) = tangent::local_inner(g, n_unit)?;
        let (a, b, _) = quadratic_along(g, n_unit, &alpha);
        let lambda = quadratic_argmin(a, b);
        let residual = sum_norm_along(g, n_unit, &alpha, lambda);
        return Ok(Candidate {
            residual,
            lambda,
            coupling: alpha,
            g_id: 0,
            n_id: 0,
            g_norm,
            method: LambdaMethod::ClosedForm,
        });
    }

    let n_norm = n_unit.norm();
    let eval = |lambda: f64| -> Result<(f64, GluedCoupling)> {
        tangent::min_sum_norm(g, &tangent::scale(lambda, n_unit))
    };
    if n_norm <= 0.0 {
        let (r, alpha) = eval(0.0)?;
        return Ok(Candidate { residual: r, lambda: 0.0, coupling: alpha, g_id: 0, n_id: 0, g_norm, method: LambdaMethod::GoldenSection });
    }
    let lambda_max = 20.0 * (1.0 + g_norm) / n_norm;
    let step = lambda_max / (GRID_POINTS - 1) as f64;
    let mut grid_best = (f64::INFINITY, 0usize);
    for i in 0..GRID_POINTS {
        let (r, _) = eval(i as f64 * step)?;
        if r < grid_best.0 {
            grid_best = (r, i);
        }
    }
    let i = grid_best.1;
    let (mut lo, mut hi) = ((i as f64 - 1.0).max(0.0) * step, ((i + 1) as f64 * step).min(lambda_max));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = eval(x1)?.0;
    let mut f2 = eval(x2)?.0;
    while hi - lo > GOLDEN_TOL * (1.0 + lambda_max) {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = eval(x1)?.0;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = eval(x2)?.0;
        }
    }
    let mut lambda = 0.5 * (lo + hi);
    let (mut residual, mut alpha) = eval(lambda)?;
    for cand_l in [0.0, i as f64 * step] {
        let (r, a) = eval(cand_l)?;
        if r < residual {
            (residual, alpha, lambda) = (r, a, cand_l);
        }
    }
    // Polish: with the gluing fixed, the objective is quadratic in λ.
    for _ in 0..20 {
        let (a, b, _) = quadratic_along(g, n_unit, &alpha);
        let next = quadratic_argmin(a, b);
        let (r, a2) = eval(next)?;
        if r < residual - 1e-15 {
            (residual, alpha, lambda) = (r, a2, next);
        } else {
            break;
        }
    }
    Ok(Candidate { residual, lambda, coupling: alpha, g_id: 0, n_id: 0, g_norm, method: LambdaMethod::GoldenSection })
}
