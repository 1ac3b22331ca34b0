use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{Functional, Potential};
use crate::linalg;
use crate::measures::DiscreteMeasure;
use crate::optimality::{self, StationarityReport};

use super::atom_rng;
use super::local::{self, DescentOptions, Status};

/// First-order check threshold `‖∇V(x*) + x* − y‖`.
const FIRST_ORDER_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AtomFailure {
    pub atom: usize,
    pub grad_norm: f64,
}

impl From<AtomFailure> for Error {
    fn from(f: AtomFailure) -> Self {
        Error::DescentFailure { atom: f.atom, grad_norm: f.grad_norm }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProxSolution {
    pub mu_star: DiscreteMeasure,
    pub cost: f64,
    /// Image `x*(y)` of each atom of the input, in input order.
    pub images: Vec<Vec<f64>>,
    /// `‖∇V(x*) + x* − y‖` per input atom.
    pub first_order: Vec<f64>,
    /// Atoms whose best local minimizer misses the first-order threshold.
    pub failures: Vec<AtomFailure>,
    pub stationarity: StationarityReport,
}

/// `argmin_μ E_μ V + ½ W2(μ, μ̄)²` atom by atom.
pub fn prox(v: &Potential, mu_bar: &DiscreteMeasure, multistart: usize, seed: u64) -> Result<ProxSolution> {
    v.check_dim(mu_bar.dim())?;
    if multistart == 0 {
        return Err(Error::InvalidParameter("multistart must be at least 1".into()));
    }
    let per_atom: Vec<(Vec<f64>, f64, f64)> = mu_bar
        .points()
        .par_iter()
        .enumerate()
        .map(|(k, y)| {
            let f = |z: &[f64]| v.eval(z) + 0.5 * linalg::dist_sq(z, y);
            let g = |z: &[f64]| linalg::add(&v.grad(z), &linalg::sub(z, y));
            let scale = 1.0 + linalg::norm(y);
            let opts = DescentOptions { max_iter: 20_000, gtol: 1e-12 * scale, radius: 1e8 * scale };
            let mut rng = atom_rng(seed, k);
            let results: Vec<_> = local::starts(y, multistart, &mut rng)
                .into_iter()
                .map(|z0| local::descend(f, g, z0, y, opts))
                .filter(|r| r.status != Status::Diverged)
                .collect();
            if results.is_empty() {
                return (y.clone(), f64::INFINITY, f64::INFINITY);
            }
            let best = &results[local::select(&results, 1e-12, 1e-6)];
            (best.z.clone(), best.value, best.grad_norm)
        })
        .collect();

    let mut failures = Vec::new();
    let mut cost = 0.0;
    for (k, (_, value, gn)) in per_atom.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::DescentFailure { atom: k, grad_norm: *gn });
        }
        if *gn > FIRST_ORDER_TOL {
            failures.push(AtomFailure { atom: k, grad_norm: *gn });
        }
        cost += mu_bar.weight(k) * value;
    }
    let images: Vec<Vec<f64>> = per_atom.iter().map(|(z, _, _)| z.clone()).collect();
    let first_order = per_atom.iter().map(|(_, _, g)| *g).collect();
    let mu_star = DiscreteMeasure::new(mu_bar.dim(), images.clone(), mu_bar.weights().to_vec())?;
    let j = Functional::LinearCombination {
        terms: vec![
            (1.0, Functional::expected_value(v.clone())),
            (1.0, Functional::w2_squared(mu_bar.clone())),
        ],
    };
    let stationarity = optimality::fermat_residual(&j, &mu_star)?;
    Ok(ProxSolution { mu_star, cost, images, first_order, failures, stationarity })
}
