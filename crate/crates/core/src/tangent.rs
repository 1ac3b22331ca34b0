//! Variations anchored at a discrete measure.
//!
//! A [`Variation`] is a measure over (anchor atom, arrow) pairs whose first
//! marginal is the anchor. Binary operations glue two variations along the
//! shared anchor; since the anchor is discrete the gluing decomposes into one
//! small assignment LP per anchor atom, solved with the transport simplex.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::measures::DiscreteMeasure;
use crate::transport::{self, TransportPlan};

/// Tolerance on the first-marginal condition and on gluing marginals.
pub const MARGINAL_TOL: f64 = 1e-9;
/// Anchors with at least this many atoms glue atoms in parallel.
const PAR_THRESHOLD: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arrow {
    /// Index of the anchor atom the arrow starts from.
    pub k: usize,
    pub v: Vec<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVariation")]
pub struct Variation {
    anchor: DiscreteMeasure,
    arrows: Vec<Arrow>,
}

#[derive(Deserialize)]
struct RawVariation {
    anchor: DiscreteMeasure,
    arrows: Vec<Arrow>,
}

impl TryFrom<RawVariation> for Variation {
    type Error = Error;
    fn try_from(raw: RawVariation) -> Result<Self> {
        Variation::new(raw.anchor, raw.arrows)
    }
}

/// One cell of a gluing: mass shared by left arrow `a` and right arrow `b`,
/// both starting at anchor atom `k`. Arrow indices refer to the variations'
/// arrow lists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlueEntry {
    pub k: usize,
    pub a: usize,
    pub b: usize,
    pub mass: f64,
}

/// A coupling of two variations along their common anchor.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GluedCoupling {
    pub entries: Vec<GlueEntry>,
}

impl Variation {
    pub fn new(anchor: DiscreteMeasure, arrows: Vec<Arrow>) -> Result<Self> {
        let mut per_atom = vec![0.0; anchor.len()];
        for (idx, a) in arrows.iter().enumerate() {
            if a.k >= anchor.len() {
                return Err(Error::InvalidParameter(format!("arrow {idx} starts at missing atom {}", a.k)));
            }
            if a.v.len() != anchor.dim() {
                return Err(Error::DimensionMismatch { expected: anchor.dim(), got: a.v.len() });
            }
            if !linalg::all_finite(&a.v) || !a.mass.is_finite() {
                return Err(Error::NonFiniteInput(format!("arrow {idx}")));
            }
            if !(a.mass > 0.0) {
                return Err(Error::InvalidParameter(format!("arrow {idx} has mass {}", a.mass)));
            }
            per_atom[a.k] += a.mass;
        }
        for (k, (&got, &want)) in per_atom.iter().zip(anchor.weights()).enumerate() {
            if (got - want).abs() > MARGINAL_TOL {
                return Err(Error::MarginalMismatch(format!(
                    "arrows at atom {k} carry {got}, atom weight is {want}"
                )));
            }
        }
        Ok(Variation { anchor, arrows })
    }

    /// One arrow `f(x_k)` per anchor atom.
    pub fn from_map<F>(anchor: &DiscreteMeasure, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        let arrows = anchor
            .atoms()
            .enumerate()
            .map(|(k, (x, w))| Arrow { k, v: f(x), mass: w })
            .collect();
        Variation::new(anchor.clone(), arrows)
    }

    pub fn anchor(&self) -> &DiscreteMeasure {
        &self.anchor
    }

    pub fn arrows(&self) -> &[Arrow] {
        &self.arrows
    }

    pub fn dim(&self) -> usize {
        self.anchor.dim()
    }

    /// Arrow indices grouped by anchor atom.
    pub fn arrows_by_atom(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.anchor.len()];
        for (idx, a) in self.arrows.iter().enumerate() {
            out[a.k].push(idx);
        }
        out
    }

    /// True when every anchor atom carries exactly one arrow.
    pub fn is_map_induced(&self) -> bool {
        self.arrows_by_atom().iter().all(|a| a.len() == 1)
    }

    /// The arrow of atom `k` for map-induced variations.
    pub fn map_arrow(&self, k: usize) -> Option<&[f64]> {
        let mut it = self.arrows.iter().filter(|a| a.k == k);
        match (it.next(), it.next()) {
            (Some(a), None) => Some(&a.v),
            _ => None,
        }
    }

    pub fn norm(&self) -> f64 {
        local_norm(self)
    }
}

fn same_anchor(a: &Variation, b: &Variation) -> Result<()> {
    if a.anchor.canonically_equal(&b.anchor, MARGINAL_TOL) {
        Ok(())
    } else {
        Err(Error::AnchorMismatch)
    }
}

/// All-zero arrows, one per atom.
pub fn local_zero(anchor: &DiscreteMeasure) -> Variation {
    let d = anchor.dim();
    Variation {
        anchor: anchor.clone(),
        arrows: anchor
            .weights()
            .iter()
            .enumerate()
            .map(|(k, &w)| Arrow { k, v: vec![0.0; d], mass: w })
            .collect(),
    }
}

pub fn local_norm(xi: &Variation) -> f64 {
    xi.arrows.iter().map(|a| a.mass * linalg::norm_sq(&a.v)).sum::<f64>().sqrt()
}

pub fn scale(tau: f64, xi: &Variation) -> Variation {
    Variation {
        anchor: xi.anchor.clone(),
        arrows: xi
            .arrows
            .iter()
            .map(|a| Arrow { k: a.k, v: linalg::scaled(&a.v, tau), mass: a.mass })
            .collect(),
    }
}

/// Minimizes `Σ mass · cost(v1, v2)` over gluings, atom by atom.
fn glue_min<C>(xi1: &Variation, xi2: &Variation, cost: C) -> Result<(f64, GluedCoupling)>
where
    C: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    same_anchor(xi1, xi2)?;
    let left = xi1.arrows_by_atom();
    let right = xi2.arrows_by_atom();
    let solve_atom = |k: usize| -> Result<(f64, Vec<GlueEntry>)> {
        let (l, r) = (&left[k], &right[k]);
        if l.len() == 1 || r.len() == 1 {
            // Forced gluing.
            let mut total = 0.0;
            let mut entries = Vec::with_capacity(l.len() * r.len());
            for &a in l {
                for &b in r {
                    let mass = if l.len() == 1 { xi2.arrows[b].mass } else { xi1.arrows[a].mass };
                    total += mass * cost(&xi1.arrows[a].v, &xi2.arrows[b].v);
                    entries.push(GlueEntry { k, a, b, mass });
                }
            }
            return Ok((total, entries));
        }
        let supply: Vec<f64> = l.iter().map(|&a| xi1.arrows[a].mass).collect();
        let demand: Vec<f64> = r.iter().map(|&b| xi2.arrows[b].mass).collect();
        let c: Vec<f64> = l
            .iter()
            .flat_map(|&a| r.iter().map(move |&b| (a, b)))
            .map(|(a, b)| cost(&xi1.arrows[a].v, &xi2.arrows[b].v))
            .collect();
        let sol = transport::solve_transportation(&supply, &demand, &c)?;
        let entries = sol
            .entries(0.0)
            .into_iter()
            .map(|e| GlueEntry { k, a: l[e.i], b: r[e.j], mass: e.mass })
            .collect();
        Ok((sol.value, entries))
    };
    let n = xi1.anchor.len();
    let per_atom: Vec<Result<(f64, Vec<GlueEntry>)>> = if n >= PAR_THRESHOLD {
        (0..n).into_par_iter().map(solve_atom).collect()
    } else {
        (0..n).map(solve_atom).collect()
    };
    let mut total = 0.0;
    let mut coupling = GluedCoupling::default();
    for r in per_atom {
        let (v, e) = r?;
        total += v;
        coupling.entries.extend(e);
    }
    Ok((total, coupling))
}

/// Maximal-alignment inner product and the coupling attaining it.
pub fn local_inner(xi1: &Variation, xi2: &Variation) -> Result<(f64, GluedCoupling)> {
    let (neg, coupling) = glue_min(xi1, xi2, |a, b| -linalg::dot(a, b))?;
    Ok((-neg, coupling))
}

/// Minimal local distance and the coupling attaining it.
pub fn local_distance(xi1: &Variation, xi2: &Variation) -> Result<(f64, GluedCoupling)> {
    let (sq, coupling) = glue_min(xi1, xi2, linalg::dist_sq)?;
    Ok((sq.max(0.0).sqrt(), coupling))
}

/// `min_α ‖ξ1 ⊕_α ξ2‖`, solved as the distance between `ξ1` and `−ξ2`.
pub fn min_sum_norm(xi1: &Variation, xi2: &Variation) -> Result<(f64, GluedCoupling)> {
    local_distance(xi1, &scale(-1.0, xi2))
}

/// Arrow-wise sum `v1 + v2` along the gluing `alpha`.
pub fn coupled_sum(xi1: &Variation, xi2: &Variation, alpha: &GluedCoupling) -> Result<Variation> {
    same_anchor(xi1, xi2)?;
    let mut left = vec![0.0; xi1.arrows.len()];
    let mut right = vec![0.0; xi2.arrows.len()];
    let mut arrows = Vec::with_capacity(alpha.entries.len());
    for e in &alpha.entries {
        let (Some(a), Some(b)) = (xi1.arrows.get(e.a), xi2.arrows.get(e.b)) else {
            return Err(Error::CouplingMarginalMismatch(format!("arrow index ({}, {}) out of range", e.a, e.b)));
        };
        if a.k != e.k || b.k != e.k {
            return Err(Error::CouplingMarginalMismatch(format!("entry glues arrows of different atoms at {}", e.k)));
        }
        if !(e.mass > 0.0) {
            continue;
        }
        left[e.a] += e.mass;
        right[e.b] += e.mass;
        arrows.push(Arrow { k: e.k, v: linalg::add(&a.v, &b.v), mass: e.mass });
    }
    for (side, got, arrows) in [("left", &left, &xi1.arrows), ("right", &right, &xi2.arrows)] {
        for (idx, (g, a)) in got.iter().zip(arrows.iter()).enumerate() {
            if (g - a.mass).abs() > MARGINAL_TOL {
                return Err(Error::CouplingMarginalMismatch(format!(
                    "{side} arrow {idx}: glued mass {g} vs arrow mass {}",
                    a.mass
                )));
            }
        }
    }
    Variation::new(xi1.anchor.clone(), arrows)
}

/// Sum along the maximally aligned gluing.
pub fn aligned_sum(xi1: &Variation, xi2: &Variation) -> Result<Variation> {
    let (_, alpha) = local_inner(xi1, xi2)?;
    coupled_sum(xi1, xi2, &alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSign {
    /// Arrows `y − x`.
    Displacement,
    /// Arrows `x − y`.
    Negative,
}

/// The variation a transport plan induces at its source.
pub fn from_plan(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    plan: &TransportPlan,
    sign: PlanSign,
) -> Result<Variation> {
    if !plan.source.canonically_equal(mu, MARGINAL_TOL) || !plan.target.canonically_equal(nu, MARGINAL_TOL) {
        return Err(Error::MarginalMismatch("plan does not couple the given measures".into()));
    }
    let arrows = plan
        .entries
        .iter()
        .map(|e| {
            let (x, y) = (mu.point(e.i), nu.point(e.j));
            let v = match sign {
                PlanSign::Displacement => linalg::sub(y, x),
                PlanSign::Negative => linalg::sub(x, y),
            };
            Arrow { k: e.i, v, mass: e.mass }
        })
        .collect();
    Variation::new(mu.clone(), arrows)
}

/// `(π1 + ε π2) # ξ`: moves every arrow's mass to `x + ε v`.
pub fn apply(xi: &Variation, eps: f64) -> Result<DiscreteMeasure> {
    let points = xi
        .arrows
        .iter()
        .map(|a| linalg::axpy(xi.anchor.point(a.k), eps, &a.v))
        .collect();
    let weights = xi.arrows.iter().map(|a| a.mass).collect();
    DiscreteMeasure::from_unnormalized(xi.dim(), points, weights)
}

pub const DEFAULT_EPS_GRID: [f64; 4] = [-1e-2, -1e-3, 1e-3, 1e-2];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TangentProbe {
    pub eps: f64,
    /// Cost of the plan `(π1, π1 + ε π2) # ξ`.
    pub plan_cost: f64,
    /// Squared W2 between the anchor and the perturbed measure.
    pub w2_sq: f64,
    pub optimal: bool,
}

/// Membership evidence on a finite step grid. `grid_verified` means every
/// probe's induced plan was optimal; it does not certify membership in the
/// closure that defines the tangent space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TangentReport {
    pub grid: Vec<f64>,
    pub probes: Vec<TangentProbe>,
    pub grid_verified: bool,
}

pub fn is_tangent(xi: &Variation, eps_grid: &[f64]) -> Result<TangentReport> {
    let norm_sq = local_norm(xi).powi(2);
    let mut probes = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let moved = apply(xi, eps)?;
        let (d, _) = transport::w2(&xi.anchor, &moved)?;
        let plan_cost = eps * eps * norm_sq;
        let w2_sq = d * d;
        let optimal = (plan_cost - w2_sq).abs() <= 1e-8 * plan_cost + 1e-18;
        probes.push(TangentProbe { eps, plan_cost, w2_sq, optimal });
    }
    Ok(TangentReport {
        grid: eps_grid.to_vec(),
        grid_verified: probes.iter().all(|p| p.optimal),
        probes,
    })
}
