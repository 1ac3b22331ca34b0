//! Local descent with Barzilai-Borwein steps and Armijo backtracking.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Status {
    Converged,
    /// Line search could not make progress (usually at round-off level).
    Stalled,
    MaxIter,
    /// Iterates left the trust radius or the value ran off to −∞.
    Diverged,
}

#[derive(Debug, Clone)]
pub(crate) struct LocalResult {
    pub z: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub status: Status,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DescentOptions {
    pub max_iter: usize,
    pub gtol: f64,
    /// Divergence radius around `center`.
    pub radius: f64,
}

pub(crate) fn descend<F, G>(f: F, g: G, z0: Vec<f64>, center: &[f64], opts: DescentOptions) -> LocalResult
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let mut z = z0;
    let mut fz = f(&z);
    let mut gz = g(&z);
    let mut step = 1.0;
    let mut status = Status::MaxIter;
    for _ in 0..opts.max_iter {
        let gn2 = linalg::norm_sq(&gz);
        if gn2.sqrt() <= opts.gtol {
            status = Status::Converged;
            break;
        }
        let mut s = step;
        let accepted = loop {
            let zn = linalg::axpy(&z, -s, &gz);
            let fzn = f(&zn);
            if fzn.is_finite() && fzn <= fz - 1e-4 * s * gn2 {
                break Some((zn, fzn));
            }
            s *= 0.5;
            if s < 1e-20 {
                break None;
            }
        };
        let Some((zn, fzn)) = accepted else {
            status = Status::Stalled;
            break;
        };
        let gzn = g(&zn);
        let sk = linalg::sub(&zn, &z);
        let yk = linalg::sub(&gzn, &gz);
        let sy = linalg::dot(&sk, &yk);
        step = if sy > 0.0 { (linalg::norm_sq(&sk) / sy).clamp(1e-10, 1e10) } else { (2.0 * s).min(1e10) };
        z = zn;
        fz = fzn;
        gz = gzn;
        if linalg::dist_sq(&z, center).sqrt() > opts.radius || fz < -1e100 {
            status = Status::Diverged;
            break;
        }
    }
    LocalResult { grad_norm: linalg::norm(&gz), z, value: fz, status }
}

/// `y` followed by `count − 1` Gaussian perturbations of scale `1 + ‖y‖`.
pub(crate) fn starts<R: Rng>(y: &[f64], count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0 + linalg::norm(y)).expect("positive scale");
    let mut out = vec![y.to_vec()];
    for _ in 1..count.max(1) {
        out.push(y.iter().map(|yi| yi + normal.sample(rng)).collect());
    }
    out
}

/// Picks among local results: smallest value, then (within `tie` relative)
/// the lexicographically smallest cluster representative. Clusters group
/// points within `merge` of each other; the earliest result represents it.
pub(crate) fn select(results: &[LocalResult], tie: f64, merge: f64) -> usize {
    let best = results.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    let band = tie * (1.0 + best.abs());
    let mut reps: Vec<usize> = Vec::new();
    for (i, r) in results.iter().enumerate() {
        if r.value > best + band {
            continue;
        }
        if reps.iter().any(|&j| linalg::dist_sq(&results[j].z, &r.z).sqrt() <= merge) {
            continue;
        }
        reps.push(i);
    }
    reps.into_iter()
        .min_by(|&a, &b| linalg::lex_cmp(&results[a].z, &results[b].z))
        .expect("at least one result")
}
