//! Independent oracles shared by integration tests. Nothing here calls the
//! solver paths it is used to check.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use wassercalc_core::tangent::{Arrow, Variation};
use wassercalc_core::DiscreteMeasure;

pub fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Squared-Euclidean OT between equal-size uniform point sets by enumerating
/// every permutation.
pub fn assignment_oracle(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let n = xs.len();
    permutations(n)
        .iter()
        .map(|p| (0..n).map(|i| sq(&xs[i], &ys[p[i]])).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}

/// Minimum of `Σ π_ij c_ij` over couplings of `a` and `b`, by enumerating all
/// basic feasible solutions of the transportation polytope.
pub fn transport_vertex_oracle(a: &[f64], b: &[f64], cost: &[Vec<f64>]) -> f64 {
    let (p, q) = (a.len(), b.len());
    let cells: Vec<(usize, usize)> = (0..p).flat_map(|i| (0..q).map(move |j| (i, j))).collect();
    let rank = p + q - 1;
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(rank);
    subsets(&cells, rank, 0, &mut chosen, &mut |sel: &[(usize, usize)]| {
        // Rows: p supply equations, first q−1 demand equations.
        let mut m = DMatrix::<f64>::zeros(rank, rank);
        let mut rhs = DVector::<f64>::zeros(rank);
        for (c, &(i, j)) in sel.iter().enumerate() {
            m[(i, c)] = 1.0;
            if j < q - 1 {
                m[(p + j, c)] = 1.0;
            }
        }
        for i in 0..p {
            rhs[i] = a[i];
        }
        for j in 0..q - 1 {
            rhs[p + j] = b[j];
        }
        let Some(x) = m.clone().lu().solve(&rhs) else { return };
        if (&m * &x - &rhs).amax() > 1e-9 || x.iter().any(|v| *v < -1e-12) {
            return;
        }
        // Last demand row is implied but check it.
        let last: f64 = sel.iter().zip(x.iter()).filter(|((_, j), _)| *j == q - 1).map(|(_, v)| v).sum();
        if (last - b[q - 1]).abs() > 1e-9 {
            return;
        }
        let c: f64 = sel.iter().zip(x.iter()).map(|(&(i, j), v)| v * cost[i][j]).sum();
        best = best.min(c);
    });
    best
}

fn subsets<T: Copy, F: FnMut(&[T])>(items: &[T], k: usize, start: usize, cur: &mut Vec<T>, f: &mut F) {
    if cur.len() == k {
        f(cur);
        return;
    }
    for i in start..items.len() {
        if items.len() - i < k - cur.len() {
            break;
        }
        cur.push(items[i]);
        subsets(items, k, i + 1, cur, f);
        cur.pop();
    }
}

/// `min over gluings Σ ‖v1 − v2‖²` atom by atom, via the vertex oracle.
pub fn local_distance_sq_oracle(x1: &Variation, x2: &Variation) -> f64 {
    let n = x1.anchor().len();
    let mut total = 0.0;
    for k in 0..n {
        let a1: Vec<&Arrow> = x1.arrows().iter().filter(|a| a.k == k).collect();
        let a2: Vec<&Arrow> = x2.arrows().iter().filter(|a| a.k == k).collect();
        let cost: Vec<Vec<f64>> = a1.iter().map(|u| a2.iter().map(|v| sq(&u.v, &v.v)).collect()).collect();
        let ma: Vec<f64> = a1.iter().map(|u| u.mass).collect();
        let mb: Vec<f64> = a2.iter().map(|v| v.mass).collect();
        total += transport_vertex_oracle(&ma, &mb, &cost);
    }
    total
}

pub fn random_point(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|w| w / s).collect()
}

pub fn random_measure(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> DiscreteMeasure {
    let pts = (0..n).map(|_| random_point(rng, d, scale)).collect();
    DiscreteMeasure::from_unnormalized(d, pts, random_weights(rng, n)).unwrap()
}

/// Random variation with 1..=max_arrows arrows at each atom.
pub fn random_variation(rng: &mut ChaCha8Rng, mu: &DiscreteMeasure, max_arrows: usize, scale: f64) -> Variation {
    let mut arrows = Vec::new();
    for k in 0..mu.len() {
        let count = rng.random_range(1..=max_arrows);
        let split = random_weights(rng, count);
        for s in split {
            arrows.push(Arrow { k, v: random_point(rng, mu.dim(), scale), mass: s * mu.weight(k) });
        }
    }
    Variation::new(mu.clone(), arrows).unwrap()
}

/// `E⟨θ,x⟩ + (ρ/2) Var⟨θ,x⟩`, computed from scratch.
pub fn risk(points: &[Vec<f64>], weights: &[f64], theta: &[f64], rho: f64) -> f64 {
    let s: Vec<f64> = points.iter().map(|x| dot(theta, x)).collect();
    let m: f64 = s.iter().zip(weights).map(|(a, w)| a * w).sum();
    let v: f64 = s.iter().zip(weights).map(|(a, w)| w * (a - m) * (a - m)).sum();
    m + 0.5 * rho * v
}

/// Worst-case risk over transports of the reference atoms with
/// `Σ w_k ‖d_k‖² ≤ ε²`, by projected gradient ascent from a shift along θ.
pub fn meanvar_primal_baseline(nu: &DiscreteMeasure, theta: &[f64], rho: f64, eps: f64) -> f64 {
    let n = nu.len();
    let tn = dot(theta, theta).sqrt();
    let w = nu.weights().to_vec();
    let mut d: Vec<Vec<f64>> = vec![theta.iter().map(|t| eps * t / tn).collect(); n];
    let project = |d: &mut Vec<Vec<f64>>| {
        let r: f64 = d.iter().zip(&w).map(|(di, wi)| wi * dot(di, di)).sum::<f64>().sqrt();
        if r > eps {
            for di in d.iter_mut() {
                for c in di.iter_mut() {
                    *c *= eps / r;
                }
            }
        }
    };
    let pts = |d: &[Vec<f64>]| -> Vec<Vec<f64>> {
        nu.points().iter().zip(d).map(|(y, di)| y.iter().zip(di).map(|(a, b)| a + b).collect()).collect()
    };
    let mut best = risk(&pts(&d), &w, theta, rho);
    let eta = 0.05 / (tn * tn * (1.0 + rho));
    for _ in 0..200_000 {
        let x = pts(&d);
        let s: Vec<f64> = x.iter().map(|xi| dot(theta, xi)).collect();
        let m: f64 = s.iter().zip(&w).map(|(a, wi)| a * wi).sum();
        let mut next = d.clone();
        for k in 0..n {
            // Gradient per unit mass.
            let c = 1.0 + rho * (s[k] - m);
            for (nk, t) in next[k].iter_mut().zip(theta) {
                *nk += eta * c * t;
            }
        }
        project(&mut next);
        let r = risk(&pts(&next), &w, theta, rho);
        let moved: f64 = next.iter().zip(&d).map(|(a, b)| sq(a, b)).sum();
        d = next;
        best = best.max(r);
        if moved < 1e-28 {
            break;
        }
    }
    best
}

/// Scan of `f` over `[lo, hi]` at `step`; ties go to the smaller point.
pub fn grid_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
    let n = ((hi - lo) / step).round() as usize;
    let mut best = (f64::INFINITY, lo);
    for i in 0..=n {
        let x = lo + i as f64 * step;
        let v = f(x);
        if v < best.0 - 1e-12 {
            best = (v, x);
        }
    }
    best.1
}
