//! Unit-covariance Gaussian mixture fitting over atoms and simplex weights.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{log_gaussian_kernel, Functional};
use crate::linalg;
use crate::measures::DiscreteMeasure;
use crate::optimality::{self, StationarityReport};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmOptions {
    pub components: usize,
    pub seed: u64,
    pub max_iter: usize,
}

impl GmmOptions {
    pub fn new(components: usize, seed: u64) -> Self {
        GmmOptions { components, seed, max_iter: 5000 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GmmFit {
    pub mu_star: DiscreteMeasure,
    /// Total negative log-likelihood `−Σ_i log (μ*φ)(X_i)`.
    pub nll: f64,
    /// Local norm of the NLL subgradient at the fit.
    pub residual: f64,
    pub iterations: usize,
    /// NLL after each accepted step (first entry is the initialization).
    pub nll_trace: Vec<f64>,
    /// Residual after each accepted step, logged only.
    pub residual_trace: Vec<f64>,
    pub stationarity: StationarityReport,
}

struct State {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

/// `log φ(X_i − x_k)` for every datum and atom.
fn log_kernels(data: &[Vec<f64>], points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    data.par_iter()
        .map(|xi| points.iter().map(|x| log_gaussian_kernel(&linalg::sub(xi, x))).collect())
        .collect()
}

fn log_dens(lk: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    lk.iter()
        .map(|row| {
            let terms: Vec<f64> =
                row.iter().zip(weights).filter(|(_, w)| **w > 0.0).map(|(l, w)| w.ln() + l).collect();
            let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
        })
        .collect()
}

fn mean_nll(data: &[Vec<f64>], s: &State) -> f64 {
    let ld = log_dens(&log_kernels(data, &s.points), &s.weights);
    -ld.iter().sum::<f64>() / data.len() as f64
}

fn kmeans_pp(data: &[Vec<f64>], m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![data[rng.random_range(0..data.len())].clone()];
    while centers.len() < m {
        let d2: Vec<f64> = data
            .iter()
            .map(|x| centers.iter().map(|c| linalg::dist_sq(x, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let idx = WeightedIndex::new(&d2).expect("distinct points remain").sample(rng);
        centers.push(data[idx].clone());
    }
    centers
}

fn distinct_count(data: &[Vec<f64>]) -> usize {
    let mut sorted: Vec<&Vec<f64>> = data.iter().collect();
    sorted.sort_by(|a, b| linalg::lex_cmp(a, b));
    sorted.dedup();
    sorted.len()
}

pub fn fit_gaussian_mixture(data: &[Vec<f64>], opts: &GmmOptions) -> Result<GmmFit> {
    let m = opts.components;
    if m == 0 {
        return Err(Error::InvalidParameter("component count must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let d = data[0].len();
    if d == 0 {
        return Err(Error::InvalidParameter("data dimension is zero".into()));
    }
    for x in data {
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        if !linalg::all_finite(x) {
            return Err(Error::NonFiniteInput("data".into()));
        }
    }
    let distinct = distinct_count(data);
    if m > distinct {
        return Err(Error::DegenerateInit { components: m, distinct });
    }
    let n = data.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut s = State { points: kmeans_pp(data, m, &mut rng), weights: vec![1.0 / m as f64; m] };
    let mut f = mean_nll(data, &s);
    let mut nll_trace = vec![f * n];
    let mut residual_trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..opts.max_iter {
        let lk = log_kernels(data, &s.points);
        let ld = log_dens(&lk, &s.weights);
        // q_ik = φ(X_i − x_k) / (μ*φ)(X_i)
        let mut arrows = vec![vec![0.0; d]; m];
        let mut gw = vec![0.0; m];
        for (i, xi) in data.iter().enumerate() {
            for k in 0..m {
                let q = (lk[i][k] - ld[i]).exp();
                gw[k] -= q / n;
                for (a, (xk, xik)) in arrows[k].iter_mut().zip(s.points[k].iter().zip(xi)) {
                    *a += q * (xk - xik);
                }
            }
        }
        residual_trace.push(
            arrows.iter().zip(&s.weights).map(|(a, w)| w * linalg::norm_sq(a)).sum::<f64>().sqrt(),
        );
        // Preconditioned step: atom k moves along −arrow_k / Σ_i q_ik, which lands
        // on the responsibility-weighted mean at t = 1; weights scale by −gw_k.
        let mass: Vec<f64> = gw.iter().map(|g| -g * n).collect();
        let full: Vec<Vec<f64>> = s
            .points
            .iter()
            .zip(&arrows)
            .zip(&mass)
            .map(|((x, a), c)| if *c > 0.0 { linalg::axpy(x, -1.0 / c, a) } else { x.clone() })
            .collect();
        let target = {
            let w: Vec<f64> = s.weights.iter().zip(&gw).map(|(w, g)| -w * g).collect();
            let tot: f64 = w.iter().sum();
            w.iter().map(|x| x / tot).collect::<Vec<_>>()
        };
        let mut t = 1.0;
        let accepted = loop {
            let points: Vec<Vec<f64>> = s
                .points
                .iter()
                .zip(&full)
                .map(|(x, y)| x.iter().zip(y).map(|(a, b)| a + t * (b - a)).collect())
                .collect();
            let weights: Vec<f64> =
                s.weights.iter().zip(&target).map(|(a, b)| a + t * (b - a)).collect();
            let cand = State { points, weights };
            let fc = mean_nll(data, &cand);
            if fc.is_finite() && fc <= f {
                break Some((cand, fc));
            }
            t *= 0.5;
            if t < 1e-14 {
                break None;
            }
        };
        let Some((cand, fc)) = accepted else { break };
        iterations += 1;
        let decrease = f - fc;
        s = cand;
        f = fc;
        nll_trace.push(f * n);
        if decrease <= 1e-15 * (1.0 + f.abs()) {
            break;
        }
    }

    let mu_star = DiscreteMeasure::new(d, s.points, s.weights)?;
    let j = Functional::GaussianMixtureNll { data: data.to_vec() };
    let stationarity = optimality::fermat_residual(&j, &mu_star)?;
    residual_trace.push(stationarity.residual);
    Ok(GmmFit {
        nll: f * n,
        residual: stationarity.residual,
        mu_star,
        iterations,
        nll_trace,
        residual_trace,
        stationarity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn one_component_lands_on_mean() {
        let data = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![-1.0, 0.5], vec![4.0, -2.0]];
        let fit = fit_gaussian_mixture(&data, &GmmOptions::new(1, 0)).unwrap();
        let x = fit.mu_star.point(0);
        assert_abs_diff_eq!(x[0], 1.25, epsilon = 1e-9);
        assert_abs_diff_eq!(x[1], 0.625, epsilon = 1e-9);
        assert!(fit.residual < 1e-8);
    }

    #[test]
    fn degenerate_init() {
        let data = vec![vec![1.0], vec![1.0], vec![2.0]];
        let e = fit_gaussian_mixture(&data, &GmmOptions::new(3, 0)).unwrap_err();
        assert_eq!(e, Error::DegenerateInit { components: 3, distinct: 2 });
    }

    #[test]
    fn nll_is_monotone() {
        let data: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.37).sin() * 3.0 + if i % 2 == 0 { 4.0 } else { -4.0 }]).collect();
        let fit = fit_gaussian_mixture(&data, &GmmOptions::new(2, 5)).unwrap();
        assert!(fit.nll_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(fit.residual.is_finite());
    }
}
