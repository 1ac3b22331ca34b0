//! Finitely supported probability measures on R^d.
//!
//! A [`DiscreteMeasure`] is always kept in canonical form: atoms closer than
//! [`MERGE_TOL`] are merged, zero-mass atoms are dropped, weights sum to one
//! and atoms are sorted lexicographically. Two measures describing the same
//! distribution therefore compare equal atom by atom, which the tangent-space
//! operations rely on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Euclidean distance below which two atoms are considered the same point.
pub const MERGE_TOL: f64 = 1e-9;
/// Accepted deviation of the raw weight sum from one before renormalization.
pub const WEIGHT_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure")]
pub struct DiscreteMeasure {
    dim: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMeasure {
    dim: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<RawMeasure> for DiscreteMeasure {
    type Error = Error;

    fn try_from(raw: RawMeasure) -> Result<Self> {
        DiscreteMeasure::new(raw.dim, raw.points, raw.weights)
    }
}

impl DiscreteMeasure {
    /// Validates and canonicalizes a weighted point cloud.
    pub fn new(dim: usize, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be positive".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::InvalidParameter(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        for (k, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
            }
            if !linalg::all_finite(p) {
                return Err(Error::NonFiniteInput(format!("coordinate of atom {k}")));
            }
        }
        for (k, &w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::NonFiniteInput(format!("weight of atom {k}")));
            }
            if w < 0.0 {
                return Err(Error::NegativeWeight { index: k, weight: w });
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidWeights { sum });
        }
        canonicalize_parts(dim, points, weights)
    }

    /// Builds a measure from weights that may sum to any positive total;
    /// the weights are divided by their sum.
    pub fn from_unnormalized(dim: usize, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::EmptyMeasure);
        }
        let weights = weights.into_iter().map(|w| w / sum).collect();
        Self::new(dim, points, weights)
    }

    pub fn dirac(point: Vec<f64>) -> Result<Self> {
        Self::new(point.len(), vec![point], vec![1.0])
    }

    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::EmptyMeasure);
        }
        let dim = points[0].len();
        Self::new(dim, points, vec![1.0 / n as f64; n])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k]
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points.iter().map(|p| p.as_slice()).zip(self.weights.iter().copied())
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (p, w) in self.atoms() {
            for (mi, pi) in m.iter_mut().zip(p) {
                *mi += w * pi;
            }
        }
        m
    }

    pub fn second_moment(&self) -> f64 {
        self.atoms().map(|(p, w)| w * linalg::norm_sq(p)).sum()
    }

    /// Atom-by-atom comparison of two canonical measures.
    pub fn canonically_equal(&self, other: &Self, tol: f64) -> bool {
        self.dim == other.dim
            && self.len() == other.len()
            && self
                .atoms()
                .zip(other.atoms())
                .all(|((p, w), (q, v))| linalg::dist_sq(p, q).sqrt() <= tol && (w - v).abs() <= tol)
    }

    /// Translates every atom by `a`.
    pub fn shift(&self, a: &[f64]) -> Result<Self> {
        if a.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: a.len() });
        }
        pushforward(self, |x| linalg::add(x, a))
    }

    /// Index of the atom at `x` (within the merge tolerance), if any.
    pub fn find_atom(&self, x: &[f64]) -> Option<usize> {
        self.points
            .iter()
            .position(|p| linalg::dist_sq(p, x) <= MERGE_TOL * MERGE_TOL)
    }
}

/// Re-applies canonical form; the identity on measures built through
/// [`DiscreteMeasure::new`].
pub fn canonicalize(m: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    canonicalize_parts(m.dim, m.points.clone(), m.weights.clone())
}

fn canonicalize_parts(dim: usize, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<DiscreteMeasure> {
    let mut reps: Vec<Vec<f64>> = Vec::new();
    let mut mass: Vec<f64> = Vec::new();
    for (p, w) in points.into_iter().zip(weights) {
        if !w.is_finite() || !linalg::all_finite(&p) {
            return Err(Error::NonFiniteInput("atom".into()));
        }
        if w <= 0.0 {
            continue;
        }
        match reps
            .iter()
            .position(|r| linalg::dist_sq(r, &p) <= MERGE_TOL * MERGE_TOL)
        {
            Some(i) => mass[i] += w,
            None => {
                reps.push(p);
                mass.push(w);
            }
        }
    }
    if reps.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let mut order: Vec<usize> = (0..reps.len()).collect();
    order.sort_by(|&a, &b| linalg::lex_cmp(&reps[a], &reps[b]));
    let total: f64 = mass.iter().sum();
    // Totals within rounding of 1 are left alone so canonical form is a fixed point.
    let exact = (total - 1.0).abs() <= 2.0 * f64::EPSILON * (mass.len() as f64 + 1.0);
    let (points, weights) = order
        .into_iter()
        .map(|i| (reps[i].clone(), if exact { mass[i] } else { mass[i] / total }))
        .unzip();
    Ok(DiscreteMeasure { dim, points, weights })
}

/// Image measure `f # m`, canonicalized.
pub fn pushforward<F>(m: &DiscreteMeasure, f: F) -> Result<DiscreteMeasure>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let images: Vec<Vec<f64>> = m.points.iter().map(|p| f(p)).collect();
    let dim = images[0].len();
    for (k, img) in images.iter().enumerate() {
        if img.len() != dim || dim == 0 {
            return Err(Error::DimensionMismatch { expected: dim, got: img.len() });
        }
        if !linalg::all_finite(img) {
            return Err(Error::NonFiniteImage { index: k });
        }
    }
    canonicalize_parts(dim, images, m.weights.clone())
}

pub fn second_moment(m: &DiscreteMeasure) -> f64 {
    m.second_moment()
}

/// `Σ_k w_k V(x_k)`.
pub fn expected_value<V>(m: &DiscreteMeasure, v: V) -> Result<f64>
where
    V: Fn(&[f64]) -> f64,
{
    let mut acc = 0.0;
    for (k, (p, w)) in m.atoms().enumerate() {
        let val = v(p);
        if !val.is_finite() {
            return Err(Error::NonFinitePotential { index: k });
        }
        acc += w * val;
    }
    Ok(acc)
}

/// `E[V²] − E[V]²`, computed around the mean to limit cancellation. Small
/// negative rounding residue is clamped to zero.
pub fn variance<V>(m: &DiscreteMeasure, v: V) -> Result<f64>
where
    V: Fn(&[f64]) -> f64,
{
    let vals: Vec<f64> = m.points.iter().map(|p| v(p)).collect();
    if let Some(k) = vals.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinitePotential { index: k });
    }
    let mean: f64 = vals.iter().zip(&m.weights).map(|(x, w)| w * x).sum();
    let var: f64 = vals
        .iter()
        .zip(&m.weights)
        .map(|(x, w)| w * (x - mean) * (x - mean))
        .sum();
    Ok(if (-1e-12..0.0).contains(&var) { 0.0 } else { var })
}
