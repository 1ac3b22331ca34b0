//! Functional catalog: evaluation and subgradient elements.
//!
//! Each [`Functional`] returns one or more candidate subgradient elements as
//! variations anchored at the evaluation measure. Functionals built on an
//! optimal transport plan (W2², OT discrepancies) produce one candidate per
//! optimal plan vertex found by the transport module; everything else is
//! differentiable and produces a single map-induced candidate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::measures::{self, DiscreteMeasure};
use crate::tangent::{self, PlanSign, Variation};
use crate::transport::{self, CostFunction};

/// Cap on combined candidates for sums and compositions.
const MAX_COMBINED_CANDIDATES: usize = 64;

/// Scalar potential on R^d with a closed-form gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Potential {
    /// `½ xᵀ A x + bᵀ x + c`
    QuadraticForm { a: Vec<Vec<f64>>, b: Vec<f64>, c: f64 },
    /// `⟨a, x⟩`
    Linear { a: Vec<f64> },
    /// `s ‖x‖²`
    SqNorm { scale: f64 },
    /// `(‖x‖² − 1)²`
    DoubleWell,
    /// `log Σ_i exp(x_i)`
    LogSumExp,
    /// `Σ_i c_i x^i` on R.
    #[serde(rename = "polynomial_1d")]
    Polynomial1d { coeffs: Vec<f64> },
}

impl Potential {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Potential::QuadraticForm { a, b, c } => {
                let quad: f64 = a.iter().zip(x).map(|(row, xi)| xi * linalg::dot(row, x)).sum();
                0.5 * quad + linalg::dot(b, x) + c
            }
            Potential::Linear { a } => linalg::dot(a, x),
            Potential::SqNorm { scale } => scale * linalg::norm_sq(x),
            Potential::DoubleWell => {
                let r = linalg::norm_sq(x) - 1.0;
                r * r
            }
            Potential::LogSumExp => log_sum_exp(x),
            Potential::Polynomial1d { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * x[0] + c),
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Potential::QuadraticForm { a, b, .. } => (0..x.len())
                .map(|i| {
                    let sym: f64 = (0..x.len()).map(|j| 0.5 * (a[i][j] + a[j][i]) * x[j]).sum();
                    sym + b[i]
                })
                .collect(),
            Potential::Linear { a } => a.clone(),
            Potential::SqNorm { scale } => linalg::scaled(x, 2.0 * scale),
            Potential::DoubleWell => linalg::scaled(x, 4.0 * (linalg::norm_sq(x) - 1.0)),
            Potential::LogSumExp => {
                let lse = log_sum_exp(x);
                x.iter().map(|xi| (xi - lse).exp()).collect()
            }
            Potential::Polynomial1d { coeffs } => {
                let d = coeffs
                    .iter()
                    .enumerate()
                    .skip(1)
                    .rev()
                    .fold(0.0, |acc, (i, c)| acc * x[0] + i as f64 * c);
                vec![d]
            }
        }
    }

    /// Checks that the parameters fit dimension `d`.
    pub fn check_dim(&self, d: usize) -> Result<()> {
        let bad = |got| Err(Error::DimensionMismatch { expected: d, got });
        match self {
            Potential::QuadraticForm { a, b, c } => {
                if b.len() != d {
                    return bad(b.len());
                }
                if let Some(row) = a.iter().find(|r| r.len() != d) {
                    return bad(row.len());
                }
                if a.len() != d {
                    return bad(a.len());
                }
                if !c.is_finite() || !a.iter().all(|r| linalg::all_finite(r)) || !linalg::all_finite(b) {
                    return Err(Error::NonFiniteInput("quadratic form".into()));
                }
                Ok(())
            }
            Potential::Linear { a } if a.len() != d => bad(a.len()),
            Potential::Polynomial1d { .. } if d != 1 => bad(1),
            _ => Ok(()),
        }
    }
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|xi| (xi - m).exp()).sum::<f64>().ln()
}

/// Smooth outer function `g: R^m → R` for compositions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outer {
    /// `Σ a_i t_i`
    Linear { coeffs: Vec<f64> },
    /// `t²` (one argument)
    Square,
    /// `t1 · t2` (two arguments)
    Product,
}

impl Outer {
    fn arity(&self) -> Option<usize> {
        match self {
            Outer::Linear { coeffs } => Some(coeffs.len()),
            Outer::Square => Some(1),
            Outer::Product => Some(2),
        }
    }

    pub fn eval(&self, t: &[f64]) -> f64 {
        match self {
            Outer::Linear { coeffs } => linalg::dot(coeffs, t),
            Outer::Square => t[0] * t[0],
            Outer::Product => t[0] * t[1],
        }
    }

    pub fn grad(&self, t: &[f64]) -> Vec<f64> {
        match self {
            Outer::Linear { coeffs } => coeffs.clone(),
            Outer::Square => vec![2.0 * t[0]],
            Outer::Product => vec![t[1], t[0]],
        }
    }
}

fn default_half() -> f64 {
    0.5
}

fn default_sign() -> f64 {
    -1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Functional {
    /// `E_μ[V]`
    ExpectedValue {
        #[serde(rename = "V")]
        v: Potential,
    },
    /// `Var_μ[V]`
    Variance {
        #[serde(rename = "V")]
        v: Potential,
    },
    /// `sign · (E[⟨θ,x⟩] + (ρ/2) Var[⟨θ,x⟩])`
    MeanVariance {
        theta: Vec<f64>,
        rho: f64,
        #[serde(default = "default_sign")]
        sign: f64,
    },
    /// `scale · W2(μ, ref)²`
    #[serde(rename = "w2sq")]
    W2Squared {
        #[serde(rename = "ref")]
        reference: DiscreteMeasure,
        #[serde(default = "default_half")]
        scale: f64,
    },
    /// Optimal transport cost to `ref` under `cost`.
    #[serde(rename = "ot")]
    OtDiscrepancy {
        #[serde(rename = "ref")]
        reference: DiscreteMeasure,
        cost: CostFunction,
    },
    /// `scale · ∬ W(x − y) dμ dμ`
    Interaction {
        #[serde(rename = "W")]
        w: Potential,
        #[serde(default = "default_half")]
        scale: f64,
    },
    /// Negative log-likelihood of `data` under `μ * φ`, φ the unit Gaussian.
    #[serde(rename = "gmm_nll")]
    GaussianMixtureNll { data: Vec<Vec<f64>> },
    /// `Σ c_i J_i`; negative `c_i` only on differentiable terms.
    LinearCombination { terms: Vec<(f64, Functional)> },
    /// `g(J_1, …, J_m)`
    Composition { g: Outer, inner: Vec<Functional> },
}

/// A subgradient element with a note on how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgradient {
    pub variation: Variation,
    /// Index of the plan vertex (or vertex combination) used; 0 for plan-free functionals.
    pub plan_id: usize,
    pub provenance: String,
}

impl Functional {
    pub fn expected_value(v: Potential) -> Self {
        Functional::ExpectedValue { v }
    }

    pub fn mean_variance(theta: Vec<f64>, rho: f64) -> Self {
        Functional::MeanVariance { theta, rho, sign: -1.0 }
    }

    pub fn w2_squared(reference: DiscreteMeasure) -> Self {
        Functional::W2Squared { reference, scale: 0.5 }
    }

    /// Validates catalog parameters against the ambient dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let finite = |x: f64, what: &str| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(Error::NonFiniteInput(what.to_string()))
            }
        };
        match self {
            Functional::ExpectedValue { v } | Functional::Variance { v } => v.check_dim(dim),
            Functional::MeanVariance { theta, rho, sign } => {
                if theta.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: theta.len() });
                }
                if !linalg::all_finite(theta) {
                    return Err(Error::NonFiniteInput("theta".into()));
                }
                finite(*rho, "rho")?;
                if *rho < 0.0 {
                    return Err(Error::InvalidParameter(format!("rho must be nonnegative, got {rho}")));
                }
                if *sign != 1.0 && *sign != -1.0 {
                    return Err(Error::InvalidParameter(format!("sign must be ±1, got {sign}")));
                }
                Ok(())
            }
            Functional::W2Squared { reference, scale } => {
                finite(*scale, "scale")?;
                if reference.dim() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: reference.dim() });
                }
                Ok(())
            }
            Functional::OtDiscrepancy { reference, cost } => {
                if !cost.has_grad() {
                    return Err(Error::InvalidParameter("OT discrepancy needs a cost with ∇_x c".into()));
                }
                if reference.dim() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: reference.dim() });
                }
                Ok(())
            }
            Functional::Interaction { w, scale } => {
                finite(*scale, "scale")?;
                w.check_dim(dim)
            }
            Functional::GaussianMixtureNll { data } => {
                if data.is_empty() {
                    return Err(Error::InvalidParameter("GMM data is empty".into()));
                }
                for x in data {
                    if x.len() != dim {
                        return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
                    }
                    if !linalg::all_finite(x) {
                        return Err(Error::NonFiniteInput("GMM data".into()));
                    }
                }
                Ok(())
            }
            Functional::LinearCombination { terms } => {
                for (c, j) in terms {
                    finite(*c, "coefficient")?;
                    if *c < 0.0 && !j.is_differentiable() {
                        return Err(Error::InvalidParameter(format!(
                            "coefficient {c} is negative on a non-differentiable term"
                        )));
                    }
                    j.validate(dim)?;
                }
                Ok(())
            }
            Functional::Composition { g, inner } => {
                if g.arity() != Some(inner.len()) {
                    return Err(Error::InvalidParameter(format!(
                        "outer function takes {:?} arguments, {} inner functionals given",
                        g.arity(),
                        inner.len()
                    )));
                }
                inner.iter().try_for_each(|j| j.validate(dim))
            }
        }
    }

    /// True for catalog items with a unique (map-induced) gradient everywhere.
    pub fn is_differentiable(&self) -> bool {
        match self {
            Functional::W2Squared { .. } | Functional::OtDiscrepancy { .. } => false,
            Functional::LinearCombination { terms } => terms.iter().all(|(_, j)| j.is_differentiable()),
            Functional::Composition { inner, .. } => inner.iter().all(|j| j.is_differentiable()),
            _ => true,
        }
    }
}

fn theta_dot(theta: &[f64]) -> impl Fn(&[f64]) -> f64 + '_ {
    move |x| linalg::dot(theta, x)
}

/// Log of the unit Gaussian kernel at `z`.
pub fn log_gaussian_kernel(z: &[f64]) -> f64 {
    -0.5 * z.len() as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * linalg::norm_sq(z)
}

/// `log Σ_k w_k φ(x_k − X_i)` for every data point.
pub(crate) fn gmm_log_densities(data: &[Vec<f64>], mu: &DiscreteMeasure) -> Result<Vec<f64>> {
    data.iter()
        .enumerate()
        .map(|(i, xi)| {
            let terms: Vec<f64> = mu
                .atoms()
                .map(|(x, w)| w.ln() + log_gaussian_kernel(&linalg::sub(x, xi)))
                .collect();
            let l = log_sum_exp(&terms);
            if l.is_finite() {
                Ok(l)
            } else {
                Err(Error::LogOfZero { index: i })
            }
        })
        .collect()
}

pub fn evaluate(j: &Functional, mu: &DiscreteMeasure) -> Result<f64> {
    j.validate(mu.dim())?;
    evaluate_unchecked(j, mu)
}

fn evaluate_unchecked(j: &Functional, mu: &DiscreteMeasure) -> Result<f64> {
    match j {
        Functional::ExpectedValue { v } => measures::expected_value(mu, |x| v.eval(x)),
        Functional::Variance { v } => measures::variance(mu, |x| v.eval(x)),
        Functional::MeanVariance { theta, rho, sign } => {
            let f = theta_dot(theta);
            let m = measures::expected_value(mu, &f)?;
            let var = measures::variance(mu, &f)?;
            Ok(sign * (m + 0.5 * rho * var))
        }
        Functional::W2Squared { reference, scale } => {
            let (d, _) = transport::w2(mu, reference)?;
            Ok(scale * d * d)
        }
        Functional::OtDiscrepancy { reference, cost } => Ok(transport::solve_ot(mu, reference, cost)?.value),
        Functional::Interaction { w, scale } => {
            let mut acc = 0.0;
            for (x, wx) in mu.atoms() {
                for (y, wy) in mu.atoms() {
                    acc += wx * wy * w.eval(&linalg::sub(x, y));
                }
            }
            Ok(scale * acc)
        }
        Functional::GaussianMixtureNll { data } => Ok(-gmm_log_densities(data, mu)?.iter().sum::<f64>()),
        Functional::LinearCombination { terms } => {
            let mut acc = 0.0;
            for (c, inner) in terms {
                acc += c * evaluate_unchecked(inner, mu)?;
            }
            Ok(acc)
        }
        Functional::Composition { g, inner } => {
            let vals = inner.iter().map(|i| evaluate_unchecked(i, mu)).collect::<Result<Vec<_>>>()?;
            Ok(g.eval(&vals))
        }
    }
}

/// One subgradient element (the first candidate).
pub fn subgradient_element(j: &Functional, mu: &DiscreteMeasure) -> Result<Subgradient> {
    let mut c = subgradient_candidates(j, mu)?;
    Ok(c.swap_remove(0))
}

/// Candidate subgradient elements: one per optimal plan vertex for
/// plan-based functionals, a single gradient otherwise.
pub fn subgradient_candidates(j: &Functional, mu: &DiscreteMeasure) -> Result<Vec<Subgradient>> {
    j.validate(mu.dim())?;
    candidates(j, mu)
}

fn single(variation: Variation, provenance: &str) -> Vec<Subgradient> {
    vec![Subgradient { variation, plan_id: 0, provenance: provenance.to_string() }]
}

fn candidates(j: &Functional, mu: &DiscreteMeasure) -> Result<Vec<Subgradient>> {
    match j {
        Functional::ExpectedValue { v } => {
            Ok(single(Variation::from_map(mu, |x| v.grad(x))?, "expected value: ∇V"))
        }
        Functional::Variance { v } => {
            let mean = measures::expected_value(mu, |x| v.eval(x))?;
            let xi = Variation::from_map(mu, |x| linalg::scaled(&v.grad(x), 2.0 * (v.eval(x) - mean)))?;
            Ok(single(xi, "variance: 2(V − E V)∇V"))
        }
        Functional::MeanVariance { theta, rho, sign } => {
            let f = theta_dot(theta);
            let mean = measures::expected_value(mu, &f)?;
            let xi = Variation::from_map(mu, |x| linalg::scaled(theta, sign * (1.0 + rho * (f(x) - mean))))?;
            Ok(single(xi, "mean-variance: sign(1 + ρ(⟨θ,x⟩ − E⟨θ,x⟩))θ"))
        }
        Functional::W2Squared { reference, scale } => {
            let vertices = transport::optimal_plan_vertices(mu, reference, &CostFunction::SqEuclidean)
                .map_err(|e| Error::PlanRequired(e.to_string()))?;
            let searched = vertices.plans.len();
            vertices
                .plans
                .iter()
                .enumerate()
                .map(|(id, plan)| {
                    let xi = tangent::from_plan(mu, reference, plan, PlanSign::Negative)?;
                    Ok(Subgradient {
                        variation: tangent::scale(2.0 * scale, &xi),
                        plan_id: id,
                        provenance: format!(
                            "w2sq: 2·scale·(x − y) over optimal plan vertex {id} of {searched} (enumerated: {})",
                            vertices.enumerated
                        ),
                    })
                })
                .collect()
        }
        Functional::OtDiscrepancy { reference, cost } => {
            let vertices =
                transport::optimal_plan_vertices(mu, reference, cost).map_err(|e| Error::PlanRequired(e.to_string()))?;
            let searched = vertices.plans.len();
            vertices
                .plans
                .iter()
                .enumerate()
                .map(|(id, plan)| {
                    let arrows = plan
                        .entries
                        .iter()
                        .map(|e| {
                            let v = cost
                                .grad_x(mu.point(e.i), reference.point(e.j))
                                .expect("validated: cost has a gradient");
                            tangent::Arrow { k: e.i, v, mass: e.mass }
                        })
                        .collect();
                    Ok(Subgradient {
                        variation: Variation::new(mu.clone(), arrows)?,
                        plan_id: id,
                        provenance: format!("ot: ∇_x c over optimal plan vertex {id} of {searched}"),
                    })
                })
                .collect()
        }
        Functional::Interaction { w, scale } => {
            let xi = Variation::from_map(mu, |x| {
                let mut g = vec![0.0; x.len()];
                for (y, wy) in mu.atoms() {
                    let fwd = w.grad(&linalg::sub(x, y));
                    let bwd = w.grad(&linalg::sub(y, x));
                    for (gi, (f, b)) in g.iter_mut().zip(fwd.iter().zip(&bwd)) {
                        *gi += scale * wy * (f - b);
                    }
                }
                g
            })?;
            Ok(single(xi, "interaction: scale·Σ_l w_l (∇W(x − x_l) − ∇W(x_l − x))"))
        }
        Functional::GaussianMixtureNll { data } => {
            let log_dens = gmm_log_densities(data, mu)?;
            let xi = Variation::from_map(mu, |x| gmm_arrow(x, data, &log_dens))?;
            Ok(single(xi, "gmm_nll: Σ_i (x − X_i)φ(x − X_i)/(μ*φ)(X_i)"))
        }
        Functional::LinearCombination { terms } => {
            let parts = terms
                .iter()
                .map(|(c, inner)| {
                    Ok(candidates(inner, mu)?
                        .into_iter()
                        .map(|s| (tangent::scale(*c, &s.variation), s.provenance))
                        .collect::<Vec<_>>())
                })
                .collect::<Result<Vec<_>>>()?;
            combine(mu, parts, "linear combination")
        }
        Functional::Composition { g, inner } => {
            let vals = inner.iter().map(|i| evaluate_unchecked(i, mu)).collect::<Result<Vec<_>>>()?;
            let partials = g.grad(&vals);
            let parts = inner
                .iter()
                .zip(&partials)
                .enumerate()
                .map(|(term, (i, &p))| {
                    let cands = candidates(i, mu)?;
                    if p < 0.0 && cands.iter().any(|s| !s.variation.is_map_induced()) {
                        return Err(Error::UnsupportedComposition { term });
                    }
                    Ok(cands.into_iter().map(|s| (tangent::scale(p, &s.variation), s.provenance)).collect())
                })
                .collect::<Result<Vec<_>>>()?;
            combine(mu, parts, "composition")
        }
    }
}

pub(crate) fn gmm_arrow(x: &[f64], data: &[Vec<f64>], log_dens: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    for (xi, ld) in data.iter().zip(log_dens) {
        let z = linalg::sub(x, xi);
        let r = (log_gaussian_kernel(&z) - ld).exp();
        for (gk, zk) in g.iter_mut().zip(&z) {
            *gk += r * zk;
        }
    }
    g
}

/// Sums one candidate from each part along maximally aligned gluings, over
/// the product of candidate lists (capped).
fn combine(mu: &DiscreteMeasure, parts: Vec<Vec<(Variation, String)>>, what: &str) -> Result<Vec<Subgradient>> {
    let mut combos: Vec<(Variation, Vec<String>)> = vec![(tangent::local_zero(mu), Vec::new())];
    for part in &parts {
        let mut next = Vec::new();
        'outer: for (acc, notes) in &combos {
            for (xi, note) in part {
                if next.len() >= MAX_COMBINED_CANDIDATES {
                    break 'outer;
                }
                let mut notes = notes.clone();
                notes.push(note.clone());
                next.push((tangent::aligned_sum(acc, xi)?, notes));
            }
        }
        combos = next;
    }
    Ok(combos
        .into_iter()
        .enumerate()
        .map(|(id, (variation, notes))| Subgradient {
            variation,
            plan_id: id,
            provenance: format!("{what} (aligned gluing): [{}]", notes.join("; ")),
        })
        .collect())
}

/// Forward difference `(J(apply(ξ, ε)) − J(μ)) / ε` along a variation at `mu`.
pub fn fd_directional(j: &Functional, mu: &DiscreteMeasure, xi: &Variation, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if !xi.anchor().canonically_equal(mu, tangent::MARGINAL_TOL) {
        return Err(Error::AnchorMismatch);
    }
    let base = evaluate(j, mu)?;
    let moved = evaluate(j, &tangent::apply(xi, eps)?)?;
    Ok((moved - base) / eps)
}
