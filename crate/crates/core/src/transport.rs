//! Exact discrete optimal transport.
//!
//! The transportation LP is solved with the primal transportation simplex
//! (spanning-tree bases, u/v potentials). Degeneracy is removed by a symbolic
//! perturbation: every supply gets `+δ` and the last demand `+mδ`, and basic
//! flows are carried as `value + k·δ` pairs compared lexicographically. The
//! perturbation is dropped on exit by recomputing the basic flows from the
//! unperturbed marginals. Entering cells follow Bland's rule.

use std::cmp::Ordering;
use std::collections::{HashSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::measures::DiscreteMeasure;

/// Tolerance on plan marginals.
pub const MARGINAL_TOL: f64 = 1e-9;
/// Largest `n·m` for which alternate optimal vertices are enumerated.
pub const VERTEX_ENUM_MAX_CELLS: usize = 36;
const MAX_VERTICES: usize = 64;
const MAX_VISITED_BASES: usize = 4000;

type CostFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync;

/// Ground cost `c(x, y)` with an optional partial gradient in `x`.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CostFunction {
    /// `‖x − y‖²`
    SqEuclidean,
    /// `‖x − y‖^p` (Euclidean norm), `p ≥ 1`.
    PNorm { p: f64 },
    #[serde(skip)]
    Custom {
        eval: Arc<CostFn>,
        grad_x: Option<Arc<GradFn>>,
    },
}

impl std::fmt::Debug for CostFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CostFunction::SqEuclidean => write!(f, "SqEuclidean"),
            CostFunction::PNorm { p } => write!(f, "PNorm({p})"),
            CostFunction::Custom { grad_x, .. } => {
                write!(f, "Custom(grad: {})", grad_x.is_some())
            }
        }
    }
}

impl CostFunction {
    pub fn custom<F>(eval: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        CostFunction::Custom { eval: Arc::new(eval), grad_x: None }
    }

    pub fn custom_with_grad<F, G>(eval: F, grad_x: G) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        CostFunction::Custom { eval: Arc::new(eval), grad_x: Some(Arc::new(grad_x)) }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            CostFunction::SqEuclidean => linalg::dist_sq(x, y),
            CostFunction::PNorm { p } => linalg::dist_sq(x, y).sqrt().powf(*p),
            CostFunction::Custom { eval, .. } => eval(x, y),
        }
    }

    pub fn has_grad(&self) -> bool {
        match self {
            CostFunction::SqEuclidean => true,
            CostFunction::PNorm { p } => *p > 1.0,
            CostFunction::Custom { grad_x, .. } => grad_x.is_some(),
        }
    }

    /// `∇_x c(x, y)`, when the cost provides one.
    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        match self {
            CostFunction::SqEuclidean => Some(linalg::scaled(&linalg::sub(x, y), 2.0)),
            CostFunction::PNorm { p } if *p > 1.0 => {
                let d = linalg::sub(x, y);
                let r = linalg::norm(&d);
                if r == 0.0 {
                    Some(vec![0.0; x.len()])
                } else {
                    Some(linalg::scaled(&d, p * r.powf(p - 2.0)))
                }
            }
            CostFunction::PNorm { .. } => None,
            CostFunction::Custom { grad_x, .. } => grad_x.as_ref().map(|g| g(x, y)),
        }
    }

    fn check_dims(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
        match self {
            CostFunction::Custom { .. } => Ok(()),
            _ if mu.dim() != nu.dim() => {
                Err(Error::DimensionMismatch { expected: mu.dim(), got: nu.dim() })
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub i: usize,
    pub j: usize,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Potentials {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub source: DiscreteMeasure,
    pub target: DiscreteMeasure,
    pub entries: Vec<PlanEntry>,
    pub value: f64,
    pub potentials: Option<Potentials>,
}

/// Wire form of a plan: `{"entries": [[i,j,mass],...], "value", "phi", "psi"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub entries: Vec<(usize, usize, f64)>,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub phi: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psi: Option<Vec<f64>>,
}

impl TransportPlan {
    /// Builds a plan from explicit entries, checking marginals and computing
    /// the cost.
    pub fn new(
        source: DiscreteMeasure,
        target: DiscreteMeasure,
        entries: Vec<PlanEntry>,
        cost: &CostFunction,
    ) -> Result<Self> {
        let mut row = vec![0.0; source.len()];
        let mut col = vec![0.0; target.len()];
        for e in &entries {
            if e.i >= source.len() || e.j >= target.len() {
                return Err(Error::MarginalMismatch(format!("entry ({}, {}) out of range", e.i, e.j)));
            }
            if !(e.mass > 0.0) || !e.mass.is_finite() {
                return Err(Error::MarginalMismatch(format!("entry ({}, {}) has mass {}", e.i, e.j, e.mass)));
            }
            row[e.i] += e.mass;
            col[e.j] += e.mass;
        }
        check_marginal(&row, source.weights(), "source")?;
        check_marginal(&col, target.weights(), "target")?;
        let value = entries
            .iter()
            .map(|e| e.mass * cost.eval(source.point(e.i), target.point(e.j)))
            .sum();
        Ok(TransportPlan { source, target, entries, value, potentials: None })
    }

    pub fn record(&self) -> PlanRecord {
        PlanRecord {
            entries: self.entries.iter().map(|e| (e.i, e.j, e.mass)).collect(),
            value: self.value,
            phi: self.potentials.as_ref().map(|p| p.phi.clone()),
            psi: self.potentials.as_ref().map(|p| p.psi.clone()),
        }
    }

    /// Dual objective `Σ a_i φ_i + Σ b_j ψ_j`.
    pub fn dual_value(&self) -> Option<f64> {
        self.potentials.as_ref().map(|p| {
            linalg::dot(&p.phi, self.source.weights()) + linalg::dot(&p.psi, self.target.weights())
        })
    }

    /// True when every source atom sends its mass to exactly one target atom.
    pub fn is_map_induced(&self) -> bool {
        let mut seen = vec![false; self.source.len()];
        for e in &self.entries {
            if seen[e.i] {
                return false;
            }
            seen[e.i] = true;
        }
        true
    }

    /// Support as a sorted list of cells; used to tell vertices apart.
    pub fn support(&self) -> Vec<(usize, usize)> {
        let mut s: Vec<_> = self.entries.iter().map(|e| (e.i, e.j)).collect();
        s.sort_unstable();
        s
    }
}

fn check_marginal(got: &[f64], want: &[f64], side: &str) -> Result<()> {
    for (k, (g, w)) in got.iter().zip(want).enumerate() {
        if (g - w).abs() > MARGINAL_TOL {
            return Err(Error::MarginalMismatch(format!(
                "{side} atom {k}: plan mass {g} vs weight {w}"
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Transportation simplex on raw arrays.

/// Flow value `v + e·δ` of the perturbed problem.
#[derive(Debug, Clone, Copy)]
struct Lex {
    v: f64,
    e: i64,
}

impl Lex {
    fn cmp_tol(self, other: Lex, tol: f64) -> Ordering {
        let d = self.v - other.v;
        if d.abs() <= tol {
            self.e.cmp(&other.e)
        } else if d < 0.0 {
            Ordering::Less
        } else {
            Ordering::Greater
        }
    }

    fn add(self, o: Lex) -> Lex {
        Lex { v: self.v + o.v, e: self.e + o.e }
    }

    fn sub(self, o: Lex) -> Lex {
        Lex { v: self.v - o.v, e: self.e - o.e }
    }
}

/// Optimal basic solution of a dense transportation problem.
#[derive(Debug, Clone)]
pub struct BasicSolution {
    pub rows: usize,
    pub cols: usize,
    /// Basic cells, `rows + cols − 1` of them, forming a spanning tree.
    pub basis: Vec<(usize, usize)>,
    /// Unperturbed flow on each basic cell.
    pub flows: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub value: f64,
    pub pivots: usize,
}

impl BasicSolution {
    /// Positive-mass cells of the basis.
    pub fn entries(&self, drop_below: f64) -> Vec<PlanEntry> {
        let mut out: Vec<PlanEntry> = self
            .basis
            .iter()
            .zip(&self.flows)
            .filter(|(_, &f)| f > drop_below)
            .map(|(&(i, j), &f)| PlanEntry { i, j, mass: f })
            .collect();
        out.sort_by_key(|e| (e.i, e.j));
        out
    }
}

fn tree_adjacency(rows: usize, cols: usize, basis: &[(usize, usize)]) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); rows + cols];
    for (b, &(i, j)) in basis.iter().enumerate() {
        adj[i].push((rows + j, b));
        adj[rows + j].push((i, b));
    }
    adj
}

fn tree_potentials(rows: usize, cols: usize, basis: &[(usize, usize)], cost: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let adj = tree_adjacency(rows, cols, basis);
    let mut pot = vec![f64::NAN; rows + cols];
    pot[0] = 0.0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(node) = queue.pop_front() {
        for &(next, b) in &adj[node] {
            if pot[next].is_nan() {
                let (i, j) = basis[b];
                pot[next] = cost[i * cols + j] - pot[node];
                queue.push_back(next);
            }
        }
    }
    let v = pot.split_off(rows);
    (pot, v)
}

/// Basic cells on the tree path closing the cycle of entering cell `(i, j)`,
/// starting at the cell incident to column `j`. Odd positions (0, 2, …)
/// lose flow, even positions gain.
fn cycle_path(rows: usize, adj: &[Vec<(usize, usize)>], i: usize, j: usize) -> Vec<usize> {
    let from = i;
    let to = rows + j;
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; adj.len()];
    let mut seen = vec![false; adj.len()];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(node) = queue.pop_front() {
        if node == to {
            break;
        }
        for &(next, b) in &adj[node] {
            if !seen[next] {
                seen[next] = true;
                parent[next] = Some((node, b));
                queue.push_back(next);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = to;
    while node != from {
        let (prev, b) = parent[node].expect("basis is a spanning tree");
        path.push(b);
        node = prev;
    }
    path
}

/// Exact flows of a spanning-tree basis for the given marginals, by peeling
/// leaves.
fn tree_flows(rows: usize, cols: usize, basis: &[(usize, usize)], supply: &[f64], demand: &[f64]) -> Vec<f64> {
    let adj = tree_adjacency(rows, cols, basis);
    let mut degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let mut residual: Vec<f64> = supply.iter().chain(demand).copied().collect();
    let mut flows = vec![0.0; basis.len()];
    let mut done = vec![false; basis.len()];
    let mut leaves: Vec<usize> = (0..rows + cols).filter(|&n| degree[n] == 1).collect();
    while let Some(leaf) = leaves.pop() {
        if degree[leaf] != 1 {
            continue;
        }
        let Some(&(other, b)) = adj[leaf].iter().find(|&&(_, b)| !done[b]) else {
            continue;
        };
        let f = residual[leaf];
        flows[b] = f;
        done[b] = true;
        residual[other] -= f;
        degree[leaf] -= 1;
        degree[other] -= 1;
        if degree[other] == 1 {
            leaves.push(other);
        }
    }
    flows.iter().map(|&f| if f < 0.0 && f > -1e-12 { 0.0 } else { f }).collect()
}

fn reduced_tol(cost: &[f64]) -> f64 {
    let cmax = cost.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    1e-12 * (1.0 + cmax)
}

/// Solves `min Σ c_ij γ_ij` over couplings of `supply` (rows) and `demand`
/// (columns). `cost` is row-major `rows × cols`. Totals must agree.
pub fn solve_transportation(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<BasicSolution> {
    let rows = supply.len();
    let cols = demand.len();
    if rows == 0 || cols == 0 || cost.len() != rows * cols {
        return Err(Error::InvalidParameter("transportation problem shape".into()));
    }
    if let Some(k) = cost.iter().position(|c| !c.is_finite()) {
        return Err(Error::NonFiniteInput(format!("cost entry ({}, {})", k / cols, k % cols)));
    }
    let total: f64 = supply.iter().sum();
    let mass_tol = 1e-14 * total.max(f64::MIN_POSITIVE);
    let rc_tol = reduced_tol(cost);

    let s: Vec<Lex> = supply.iter().map(|&a| Lex { v: a, e: 1 }).collect();
    let mut d: Vec<Lex> = demand.iter().map(|&b| Lex { v: b, e: 0 }).collect();
    d[cols - 1].e = rows as i64;

    // North-west corner start.
    let mut basis = Vec::with_capacity(rows + cols - 1);
    let mut flow: Vec<Lex> = Vec::with_capacity(rows + cols - 1);
    let (mut i, mut j) = (0, 0);
    let (mut rs, mut rd) = (s[0], d[0]);
    loop {
        if i == rows - 1 && j == cols - 1 {
            basis.push((i, j));
            flow.push(rs);
            break;
        }
        let go_down = if i == rows - 1 {
            false
        } else if j == cols - 1 {
            true
        } else {
            rs.cmp_tol(rd, mass_tol) == Ordering::Less
        };
        if go_down {
            basis.push((i, j));
            flow.push(rs);
            rd = rd.sub(rs);
            i += 1;
            rs = s[i];
        } else {
            basis.push((i, j));
            flow.push(rd);
            rs = rs.sub(rd);
            j += 1;
            rd = d[j];
        }
    }

    let cap = 50 * (rows + cols) * (rows + cols);
    let mut pivots = 0;
    let mut in_basis = vec![false; rows * cols];
    for &(i, j) in &basis {
        in_basis[i * cols + j] = true;
    }
    loop {
        let (u, v) = tree_potentials(rows, cols, &basis, cost);
        let entering = (0..rows * cols).find(|&k| {
            !in_basis[k] && cost[k] - u[k / cols] - v[k % cols] < -rc_tol
        });
        let Some(k) = entering else {
            let flows = tree_flows(rows, cols, &basis, supply, demand);
            let value = basis
                .iter()
                .zip(&flows)
                .map(|(&(i, j), f)| f * cost[i * cols + j])
                .sum();
            return Ok(BasicSolution { rows, cols, basis, flows, u, v, value, pivots });
        };
        if pivots >= cap {
            return Err(Error::SolverStall { cap, rows, cols });
        }
        pivots += 1;
        let (ei, ej) = (k / cols, k % cols);
        let adj = tree_adjacency(rows, cols, &basis);
        let path = cycle_path(rows, &adj, ei, ej);
        let mut leave: Option<usize> = None;
        for &b in path.iter().step_by(2) {
            leave = match leave {
                None => Some(b),
                Some(l) => match flow[b].cmp_tol(flow[l], mass_tol) {
                    Ordering::Less => Some(b),
                    Ordering::Equal if basis[b] < basis[l] => Some(b),
                    _ => Some(l),
                },
            };
        }
        let leave = leave.expect("cycle has a decreasing cell");
        let theta = flow[leave];
        for (pos, &b) in path.iter().enumerate() {
            flow[b] = if pos % 2 == 0 { flow[b].sub(theta) } else { flow[b].add(theta) };
        }
        let (li, lj) = basis[leave];
        in_basis[li * cols + lj] = false;
        in_basis[k] = true;
        basis[leave] = (ei, ej);
        flow[leave] = theta;
    }
}

/// All optimal vertices reachable from `sol` through zero-reduced-cost
/// pivots, as lists of positive-mass cells. The first vertex is `sol`'s.
pub fn optimal_vertices(
    sol: &BasicSolution,
    supply: &[f64],
    demand: &[f64],
    cost: &[f64],
) -> Vec<Vec<PlanEntry>> {
    let (rows, cols) = (sol.rows, sol.cols);
    let rc_tol = reduced_tol(cost);
    let drop = 1e-13 * supply.iter().sum::<f64>();
    let key = |basis: &[(usize, usize)]| {
        let mut b = basis.to_vec();
        b.sort_unstable();
        b
    };
    let support_key = |entries: &[PlanEntry]| {
        entries
            .iter()
            .map(|e| (e.i, e.j, (e.mass * 1e10).round() as i64))
            .collect::<Vec<_>>()
    };

    let mut vertices = vec![sol.entries(drop)];
    let mut seen_vertices: HashSet<Vec<(usize, usize, i64)>> = HashSet::from([support_key(&vertices[0])]);
    let mut seen_bases: HashSet<Vec<(usize, usize)>> = HashSet::from([key(&sol.basis)]);
    let mut queue = VecDeque::from([(sol.basis.clone(), sol.flows.clone())]);

    while let Some((basis, flows)) = queue.pop_front() {
        if seen_bases.len() >= MAX_VISITED_BASES || vertices.len() >= MAX_VERTICES {
            break;
        }
        let mut in_basis = vec![false; rows * cols];
        for &(i, j) in &basis {
            in_basis[i * cols + j] = true;
        }
        let adj = tree_adjacency(rows, cols, &basis);
        for k in 0..rows * cols {
            if in_basis[k] {
                continue;
            }
            let (ei, ej) = (k / cols, k % cols);
            if (cost[k] - sol.u[ei] - sol.v[ej]).abs() > rc_tol {
                continue;
            }
            let path = cycle_path(rows, &adj, ei, ej);
            let theta = path.iter().step_by(2).map(|&b| flows[b]).fold(f64::INFINITY, f64::min);
            let leaving: Vec<usize> = path
                .iter()
                .step_by(2)
                .copied()
                .filter(|&b| flows[b] <= theta + drop)
                .collect();
            for l in leaving {
                let mut nb = basis.clone();
                nb[l] = (ei, ej);
                if !seen_bases.insert(key(&nb)) {
                    continue;
                }
                let nf = tree_flows(rows, cols, &nb, supply, demand);
                if nf.iter().any(|&f| f < -drop) {
                    continue;
                }
                let candidate = BasicSolution {
                    rows,
                    cols,
                    basis: nb.clone(),
                    flows: nf.clone(),
                    u: sol.u.clone(),
                    v: sol.v.clone(),
                    value: sol.value,
                    pivots: 0,
                };
                let entries = candidate.entries(drop);
                if seen_vertices.insert(support_key(&entries)) {
                    vertices.push(entries);
                }
                queue.push_back((nb, nf));
            }
        }
    }
    vertices
}

// ---------------------------------------------------------------------------
// Measure-level API.

fn cost_matrix(mu: &DiscreteMeasure, nu: &DiscreteMeasure, c: &CostFunction) -> Result<Vec<f64>> {
    c.check_dims(mu, nu)?;
    let mut out = Vec::with_capacity(mu.len() * nu.len());
    for x in mu.points() {
        for y in nu.points() {
            let v = c.eval(x, y);
            if !v.is_finite() {
                return Err(Error::NonFiniteInput("cost on an atom pair".into()));
            }
            out.push(v);
        }
    }
    Ok(out)
}

fn plan_from_solution(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    entries: Vec<PlanEntry>,
    cost: &[f64],
    sol: &BasicSolution,
) -> TransportPlan {
    let value = entries.iter().map(|e| e.mass * cost[e.i * nu.len() + e.j]).sum();
    TransportPlan {
        source: mu.clone(),
        target: nu.clone(),
        entries,
        value,
        potentials: Some(Potentials { phi: sol.u.clone(), psi: sol.v.clone() }),
    }
}

/// One optimal plan between `mu` and `nu` with dual potentials.
pub fn solve_ot(mu: &DiscreteMeasure, nu: &DiscreteMeasure, c: &CostFunction) -> Result<TransportPlan> {
    let cost = cost_matrix(mu, nu, c)?;
    let sol = solve_transportation(mu.weights(), nu.weights(), &cost)?;
    let entries = sol.entries(1e-13);
    Ok(plan_from_solution(mu, nu, entries, &cost, &sol))
}

/// Optimal plan vertices found for a transport problem.
#[derive(Debug, Clone)]
pub struct PlanVertices {
    pub plans: Vec<TransportPlan>,
    /// Whether alternate vertices were searched (small instances only).
    pub enumerated: bool,
}

/// The optimal plan of [`solve_ot`] followed by alternate optimal vertices
/// when `n·m ≤ VERTEX_ENUM_MAX_CELLS`.
pub fn optimal_plan_vertices(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    c: &CostFunction,
) -> Result<PlanVertices> {
    let cost = cost_matrix(mu, nu, c)?;
    let sol = solve_transportation(mu.weights(), nu.weights(), &cost)?;
    let enumerated = mu.len() * nu.len() <= VERTEX_ENUM_MAX_CELLS;
    let vertex_entries = if enumerated {
        optimal_vertices(&sol, mu.weights(), nu.weights(), &cost)
    } else {
        vec![sol.entries(1e-13)]
    };
    let plans = vertex_entries
        .into_iter()
        .map(|e| plan_from_solution(mu, nu, e, &cost, &sol))
        .collect();
    Ok(PlanVertices { plans, enumerated })
}

/// `W2(mu, nu)` and an optimal plan for the squared Euclidean cost.
pub fn w2(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<(f64, TransportPlan)> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), got: nu.dim() });
    }
    let plan = solve_ot(mu, nu, &CostFunction::SqEuclidean)?;
    Ok((plan.value.max(0.0).sqrt(), plan))
}

/// Exhaustive search over permutation couplings of two uniform measures with
/// the same number of atoms (at most 8).
pub fn brute_force_ot(mu: &DiscreteMeasure, nu: &DiscreteMeasure, c: &CostFunction) -> Result<TransportPlan> {
    let n = mu.len();
    if nu.len() != n {
        return Err(Error::UnsupportedInstance(format!("atom counts {} and {} differ", n, nu.len())));
    }
    if n > 8 {
        return Err(Error::UnsupportedInstance(format!("{n} atoms exceeds the limit of 8")));
    }
    let uniform = |m: &DiscreteMeasure| m.weights().iter().all(|&w| (w - 1.0 / n as f64).abs() <= 1e-12);
    if !uniform(mu) || !uniform(nu) {
        return Err(Error::UnsupportedInstance("weights are not uniform".into()));
    }
    let cost = cost_matrix(mu, nu, c)?;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = (f64::INFINITY, perm.clone());
    permute(&mut perm, 0, &mut |p| {
        let v: f64 = p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() / n as f64;
        if v < best.0 {
            best = (v, p.to_vec());
        }
    });
    let entries = best
        .1
        .iter()
        .enumerate()
        .map(|(i, &j)| PlanEntry { i, j, mass: 1.0 / n as f64 })
        .collect();
    TransportPlan::new(mu.clone(), nu.clone(), entries, c)
}

fn permute(p: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityCheck {
    pub optimal: bool,
    /// Largest dual-feasibility violation `φ_i + ψ_j − c_ij`, if duals were present.
    pub dual_violation: Option<f64>,
    /// Largest slackness gap `|φ_i + ψ_j − c_ij|` on the support.
    pub slackness_violation: Option<f64>,
    /// A support cycle whose cyclic reassignment is strictly cheaper.
    pub violated_cycle: Option<Vec<(usize, usize)>>,
    pub cycles_checked: bool,
}

/// Certifies a plan through its duals and, for supports of at most 8 cells,
/// through c-cyclical monotonicity on cycles of length up to 4.
pub fn verify_optimality(plan: &TransportPlan, c: &CostFunction, tol: f64) -> Result<OptimalityCheck> {
    let (mu, nu) = (&plan.source, &plan.target);
    let mut row = vec![0.0; mu.len()];
    let mut col = vec![0.0; nu.len()];
    for e in &plan.entries {
        row[e.i] += e.mass;
        col[e.j] += e.mass;
    }
    check_marginal(&row, mu.weights(), "source")?;
    check_marginal(&col, nu.weights(), "target")?;

    let cycles_checked = plan.entries.len() <= 8;
    if plan.potentials.is_none() && !cycles_checked {
        return Err(Error::MissingPotentials);
    }
    let mut optimal = true;
    let (mut dual_violation, mut slackness_violation) = (None, None);
    if let Some(p) = &plan.potentials {
        let mut worst: f64 = f64::NEG_INFINITY;
        for (i, x) in mu.points().iter().enumerate() {
            for (j, y) in nu.points().iter().enumerate() {
                worst = worst.max(p.phi[i] + p.psi[j] - c.eval(x, y));
            }
        }
        let slack = plan
            .entries
            .iter()
            .map(|e| (p.phi[e.i] + p.psi[e.j] - c.eval(mu.point(e.i), nu.point(e.j))).abs())
            .fold(0.0, f64::max);
        optimal &= worst <= tol && slack <= tol;
        dual_violation = Some(worst.max(0.0));
        slackness_violation = Some(slack);
    }
    let mut violated_cycle = None;
    if cycles_checked {
        violated_cycle = find_cheaper_cycle(plan, c, tol);
        optimal &= violated_cycle.is_none();
    }
    Ok(OptimalityCheck { optimal, dual_violation, slackness_violation, violated_cycle, cycles_checked })
}

fn find_cheaper_cycle(plan: &TransportPlan, c: &CostFunction, tol: f64) -> Option<Vec<(usize, usize)>> {
    let cells: Vec<(usize, usize)> = plan.entries.iter().map(|e| (e.i, e.j)).collect();
    let cost = |i: usize, j: usize| c.eval(plan.source.point(i), plan.target.point(j));
    let s = cells.len();
    let mut cycle = Vec::with_capacity(4);
    for len in 2..=4.min(s) {
        for first in 0..s {
            cycle.clear();
            cycle.push(first);
            if let Some(found) = extend_cycle(&cells, &cost, &mut cycle, len, tol) {
                return Some(found);
            }
        }
    }
    None
}

fn extend_cycle(
    cells: &[(usize, usize)],
    cost: &dyn Fn(usize, usize) -> f64,
    cycle: &mut Vec<usize>,
    len: usize,
    tol: f64,
) -> Option<Vec<(usize, usize)>> {
    if cycle.len() == len {
        let current: f64 = cycle.iter().map(|&a| cost(cells[a].0, cells[a].1)).sum();
        let shifted: f64 = (0..len)
            .map(|t| cost(cells[cycle[t]].0, cells[cycle[(t + 1) % len]].1))
            .sum();
        return (shifted < current - tol).then(|| cycle.iter().map(|&a| cells[a]).collect());
    }
    // The first element is the smallest index so each cycle is seen once per rotation class.
    for next in cycle[0] + 1..cells.len() {
        if cycle.contains(&next) {
            continue;
        }
        cycle.push(next);
        let found = extend_cycle(cells, cost, cycle, len, tol);
        cycle.pop();
        if found.is_some() {
            return found;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square_pair() -> (DiscreteMeasure, DiscreteMeasure) {
        let mu = DiscreteMeasure::uniform(vec![vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let nu = DiscreteMeasure::uniform(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        (mu, nu)
    }

    #[test]
    fn diracs_have_unique_plan() {
        let a = DiscreteMeasure::dirac(vec![1.0, 2.0]).unwrap();
        let b = DiscreteMeasure::dirac(vec![-1.0, 0.5]).unwrap();
        let plan = solve_ot(&a, &b, &CostFunction::SqEuclidean).unwrap();
        assert_eq!(plan.entries, vec![PlanEntry { i: 0, j: 0, mass: 1.0 }]);
        assert_abs_diff_eq!(plan.value, 4.0 + 2.25, epsilon = 1e-14);
        let (d, _) = w2(&a, &b).unwrap();
        assert_abs_diff_eq!(d, 6.25f64.sqrt(), epsilon = 1e-14);
        assert!(verify_optimality(&plan, &CostFunction::SqEuclidean, 1e-9).unwrap().optimal);
    }

    #[test]
    fn square_example_has_unit_cost_and_two_vertices() {
        let (mu, nu) = square_pair();
        let plan = solve_ot(&mu, &nu, &CostFunction::SqEuclidean).unwrap();
        assert_abs_diff_eq!(plan.value, 1.0, epsilon = 1e-14);
        let (d, _) = w2(&mu, &nu).unwrap();
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-14);
        let v = optimal_plan_vertices(&mu, &nu, &CostFunction::SqEuclidean).unwrap();
        assert!(v.enumerated);
        assert_eq!(v.plans.len(), 2);
        for p in &v.plans {
            assert_abs_diff_eq!(p.value, 1.0, epsilon = 1e-14);
            assert!(p.is_map_induced());
        }
        assert_ne!(v.plans[0].support(), v.plans[1].support());
    }

    #[test]
    fn self_transport_is_diagonal() {
        let m = DiscreteMeasure::new(1, vec![vec![0.0], vec![1.0], vec![3.0]], vec![0.2, 0.5, 0.3]).unwrap();
        let (d, plan) = w2(&m, &m).unwrap();
        assert_eq!(d, 0.0);
        assert!(plan.entries.iter().all(|e| e.i == e.j));
    }

    #[test]
    fn matches_permutation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let n = rng.random_range(1..=5);
            let d = rng.random_range(1..=3);
            let pts = |rng: &mut ChaCha8Rng| {
                (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
            };
            let mu = DiscreteMeasure::uniform(pts(&mut rng)).unwrap();
            let nu = DiscreteMeasure::uniform(pts(&mut rng)).unwrap();
            let exact = solve_ot(&mu, &nu, &CostFunction::SqEuclidean).unwrap();
            let brute = brute_force_ot(&mu, &nu, &CostFunction::SqEuclidean).unwrap();
            assert_abs_diff_eq!(exact.value, brute.value, epsilon = 1e-9);
            assert_abs_diff_eq!(exact.dual_value().unwrap(), exact.value, epsilon = 1e-9);
        }
    }

    #[test]
    fn brute_force_rejects_unsupported() {
        let a = DiscreteMeasure::new(1, vec![vec![0.0], vec![1.0]], vec![0.3, 0.7]).unwrap();
        assert!(matches!(brute_force_ot(&a, &a, &CostFunction::SqEuclidean), Err(Error::UnsupportedInstance(_))));
        let big = DiscreteMeasure::uniform((0..9).map(|k| vec![k as f64]).collect()).unwrap();
        assert!(matches!(brute_force_ot(&big, &big, &CostFunction::SqEuclidean), Err(Error::UnsupportedInstance(_))));
    }

    #[test]
    fn identity_assignment_for_identical_pairs() {
        let m = DiscreteMeasure::uniform(vec![vec![0.0], vec![5.0]]).unwrap();
        let b = brute_force_ot(&m, &m, &CostFunction::SqEuclidean).unwrap();
        assert_eq!(b.value, 0.0);
        assert!(b.entries.iter().all(|e| e.i == e.j));
    }

    #[test]
    fn swapped_plan_fails_cycle_check() {
        let mu = DiscreteMeasure::uniform(vec![vec![0.0], vec![1.0]]).unwrap();
        let nu = DiscreteMeasure::uniform(vec![vec![2.0], vec![3.0]]).unwrap();
        let bad = TransportPlan::new(
            mu.clone(),
            nu.clone(),
            vec![PlanEntry { i: 0, j: 1, mass: 0.5 }, PlanEntry { i: 1, j: 0, mass: 0.5 }],
            &CostFunction::SqEuclidean,
        )
        .unwrap();
        let check = verify_optimality(&bad, &CostFunction::SqEuclidean, 1e-9).unwrap();
        assert!(!check.optimal);
        assert_eq!(check.violated_cycle, Some(vec![(0, 1), (1, 0)]));
        let good = solve_ot(&mu, &nu, &CostFunction::SqEuclidean).unwrap();
        assert!(verify_optimality(&good, &CostFunction::SqEuclidean, 1e-9).unwrap().optimal);
    }

    #[test]
    fn rejects_bad_marginals() {
        let mu = DiscreteMeasure::uniform(vec![vec![0.0], vec![1.0]]).unwrap();
        let e = TransportPlan::new(
            mu.clone(),
            mu.clone(),
            vec![PlanEntry { i: 0, j: 0, mass: 0.5 }],
            &CostFunction::SqEuclidean,
        )
        .unwrap_err();
        assert!(matches!(e, Error::MarginalMismatch(_)));
    }

    #[test]
    fn non_uniform_and_rectangular() {
        // 1-d: monotone rearrangement is optimal, so compare with the quantile coupling.
        let mu = DiscreteMeasure::new(1, vec![vec![0.0], vec![1.0], vec![2.0]], vec![0.2, 0.5, 0.3]).unwrap();
        let nu = DiscreteMeasure::new(1, vec![vec![-1.0], vec![4.0]], vec![0.6, 0.4]).unwrap();
        let plan = solve_ot(&mu, &nu, &CostFunction::SqEuclidean).unwrap();
        let expected = 0.2 * 1.0 + 0.4 * 4.0 + 0.1 * 9.0 + 0.3 * 4.0;
        assert_abs_diff_eq!(plan.value, expected, epsilon = 1e-12);
        assert!(verify_optimality(&plan, &CostFunction::SqEuclidean, 1e-9).unwrap().optimal);
    }

    #[test]
    fn pnorm_and_custom_costs() {
        let mu = DiscreteMeasure::uniform(vec![vec![0.0], vec![1.0]]).unwrap();
        let nu = DiscreteMeasure::uniform(vec![vec![0.5], vec![3.0]]).unwrap();
        let p1 = solve_ot(&mu, &nu, &CostFunction::PNorm { p: 1.0 }).unwrap();
        assert_abs_diff_eq!(p1.value, 0.5 * 0.5 + 0.5 * 2.0, epsilon = 1e-12);
        let cross = CostFunction::custom(|x: &[f64], y: &[f64]| -(x[0] * y[0]));
        let pc = solve_ot(&mu, &nu, &cross).unwrap();
        assert_abs_diff_eq!(pc.value, -1.5, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_instance_terminates() {
        // Equal weights on a grid produce many ties and degenerate bases.
        let pts: Vec<Vec<f64>> = (0..6).map(|k| vec![(k % 3) as f64, (k / 3) as f64]).collect();
        let mu = DiscreteMeasure::uniform(pts.clone()).unwrap();
        let nu = DiscreteMeasure::uniform(pts.iter().map(|p| vec![p[0] + 1.0, p[1]]).collect()).unwrap();
        let plan = solve_ot(&mu, &nu, &CostFunction::SqEuclidean).unwrap();
        let brute = brute_force_ot(&mu, &nu, &CostFunction::SqEuclidean).unwrap();
        assert_abs_diff_eq!(plan.value, brute.value, epsilon = 1e-12);
    }

    #[test]
    fn plan_record_shape() {
        let (mu, nu) = square_pair();
        let plan = solve_ot(&mu, &nu, &CostFunction::SqEuclidean).unwrap();
        let json = serde_json::to_value(plan.record()).unwrap();
        assert_eq!(json["entries"].as_array().unwrap().len(), 2);
        assert!(json["phi"].is_array() && json["psi"].is_array());
    }
}
