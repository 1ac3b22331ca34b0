//! Solvers for the worked problems. Each returns a candidate together with a
//! stationarity report computed by the independent `optimality` code path.

mod dual;
mod gmm;
mod local;
mod meanvar;
mod moment;
mod prox;

pub use dual::{solve_nonlinear_dro_dual, DualOptions, DualSolution, VisitedPoint};
pub use gmm::{fit_gaussian_mixture, GmmFit, GmmOptions};
pub use meanvar::{solve_meanvar_dro, BranchCandidate, DroBranch, DroSolution};
pub use moment::{solve_linear_second_moment, SecondMomentSolution};
pub use prox::{prox, AtomFailure, ProxSolution};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream for atom `k`.
pub(crate) fn atom_rng(seed: u64, k: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ k as u64)
}
