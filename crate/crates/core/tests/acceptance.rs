//! Acceptance suite: one line per criterion.
//!
//! Runs as a plain binary so every line is printed. A criterion that cannot
//! be met by a faithful implementation is printed as FAIL with the observed
//! outcome; the process only exits nonzero when a criterion fails in some
//! other way.

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wassercalc_core::constraints::Constraint;
use wassercalc_core::functionals::{self, Functional, Outer, Potential};
use wassercalc_core::optimality;
use wassercalc_core::solvers::{self, DualOptions, GmmOptions};
use wassercalc_core::tangent;
use wassercalc_core::transport;
use wassercalc_core::{CostFunction, DiscreteMeasure, Error};

use common::*;

enum Outcome {
    Pass(String),
    Fail(String),
    /// Fails exactly as analysed for an unattainable criterion.
    KnownFail(String),
}

type Run<'a> = Box<dyn Fn() -> String + 'a>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn c1_ot_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..=6);
        let d = rng.random_range(1..=3);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| random_point(&mut rng, d, 2.0)).collect();
        let ys: Vec<Vec<f64>> = (0..n).map(|_| random_point(&mut rng, d, 2.0)).collect();
        let mu = DiscreteMeasure::uniform(xs.clone()).unwrap();
        let nu = DiscreteMeasure::uniform(ys.clone()).unwrap();
        let v = transport::solve_ot(&mu, &nu, &CostFunction::SqEuclidean).unwrap().value;
        let brute = transport::brute_force_ot(&mu, &nu, &CostFunction::SqEuclidean).unwrap().value;
        let oracle = assignment_oracle(&xs, &ys);
        worst = worst.max((v - brute).abs()).max((v - oracle).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst <= 1e-9 && secs < 10.0, format!("max |solve − brute| = {worst:.2e}, {secs:.2} s"))
}

fn c2_square_example() -> Outcome {
    let mu = DiscreteMeasure::uniform(vec![vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
    let nu_bar = DiscreteMeasure::uniform(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let v = functionals::evaluate(&Functional::w2_squared(nu_bar), &mu).unwrap();
    check((v - 0.5).abs() <= 1e-12, format!("J(μ) = {v}"))
}

fn c3_metric() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut asym, mut slack) = (0.0f64, f64::INFINITY);
    for _ in 0..100 {
        let d = rng.random_range(1..=3);
        let m: Vec<DiscreteMeasure> = (0..3)
            .map(|_| {
                let n = rng.random_range(1..=6);
                random_measure(&mut rng, n, d, 2.0)
            })
            .collect();
        let w = |a: &DiscreteMeasure, b: &DiscreteMeasure| transport::w2(a, b).unwrap().0;
        let (ab, ba) = (w(&m[0], &m[1]), w(&m[1], &m[0]));
        asym = asym.max((ab - ba).abs());
        slack = slack.min(w(&m[0], &m[2]) + w(&m[2], &m[1]) - ab);
    }
    check(asym <= 1e-9 && slack >= -1e-8, format!("max asymmetry {asym:.2e}, min triangle slack {slack:.2e}"))
}

fn c4_tangent_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut worst_id, mut worst_lp) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let d = rng.random_range(1..=3);
        let n = rng.random_range(1..=4);
        let mu = random_measure(&mut rng, n, d, 1.0);
        let x1 = random_variation(&mut rng, &mu, 4, 1.0);
        let x2 = random_variation(&mut rng, &mu, 4, 1.0);
        let (dist, _) = tangent::local_distance(&x1, &x2).unwrap();
        let (inner, _) = tangent::local_inner(&x1, &x2).unwrap();
        let (n1, n2) = (tangent::local_norm(&x1), tangent::local_norm(&x2));
        worst_id = worst_id.max((dist * dist - (n1 * n1 - 2.0 * inner + n2 * n2)).abs());
        worst_lp = worst_lp.max((dist * dist - local_distance_sq_oracle(&x1, &x2)).abs());
    }
    check(
        worst_id <= 1e-8 && worst_lp <= 1e-8,
        format!("identity error {worst_id:.2e}, per-atom LP vs enumeration {worst_lp:.2e}"),
    )
}

fn catalog(rng: &mut ChaCha8Rng, d: usize) -> Vec<(String, Functional)> {
    let mut out = vec![
        ("E[linear]".to_string(), Functional::expected_value(Potential::Linear { a: random_point(rng, d, 1.0) })),
        ("E[sq_norm]".into(), Functional::expected_value(Potential::SqNorm { scale: 0.7 })),
        ("E[double_well]".into(), Functional::expected_value(Potential::DoubleWell)),
        ("E[log_sum_exp]".into(), Functional::expected_value(Potential::LogSumExp)),
        (
            "E[quadratic_form]".into(),
            Functional::expected_value(Potential::QuadraticForm {
                a: (0..d).map(|i| (0..d).map(|j| if i == j { 2.0 } else { 0.3 }).collect()).collect(),
                b: random_point(rng, d, 1.0),
                c: 0.4,
            }),
        ),
        ("Var[double_well]".into(), Functional::Variance { v: Potential::DoubleWell }),
        ("mean_variance".into(), Functional::mean_variance(random_point(rng, d, 1.0), 0.8)),
        ("interaction".into(), Functional::Interaction { w: Potential::DoubleWell, scale: 0.5 }),
        (
            "gmm_nll".into(),
            Functional::GaussianMixtureNll { data: (0..6).map(|_| random_point(rng, d, 2.0)).collect() },
        ),
        (
            "linear_combination".into(),
            Functional::LinearCombination {
                terms: vec![
                    (0.5, Functional::expected_value(Potential::LogSumExp)),
                    (2.0, Functional::Variance { v: Potential::SqNorm { scale: 1.0 } }),
                ],
            },
        ),
        (
            "composition".into(),
            Functional::Composition {
                g: Outer::Product,
                inner: vec![
                    Functional::expected_value(Potential::LogSumExp),
                    Functional::expected_value(Potential::SqNorm { scale: 1.0 }),
                ],
            },
        ),
    ];
    if d == 1 {
        out.push((
            "E[polynomial_1d]".into(),
            Functional::expected_value(Potential::Polynomial1d { coeffs: vec![0.5, -1.0, 0.25, 0.1] }),
        ));
    }
    out
}

fn c5_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for d in [1, 2] {
        for (name, j) in catalog(&mut rng, d) {
            for _ in 0..20 {
                let n = rng.random_range(1..=4);
                let mu = random_measure(&mut rng, n, d, 1.5);
                let xi = random_variation(&mut rng, &mu, 3, 1.0);
                let value = functionals::evaluate(&j, &mu).unwrap();
                let grad = functionals::subgradient_element(&j, &mu).unwrap();
                let (lin, _) = tangent::local_inner(&grad.variation, &xi).unwrap();
                let fd = functionals::fd_directional(&j, &mu, &xi, 1e-5).unwrap();
                let err = (fd - lin).abs() / (1.0 + value.abs());
                worst = worst.max(err);
                count += 1;
                if err > 1e-3 {
                    failures.push(format!("{name} (d={d}): {err:.2e}"));
                }
            }
        }
    }
    check(
        failures.is_empty(),
        format!("{count} pairs, worst scaled error {worst:.2e}{}", if failures.is_empty() { String::new() } else { format!("; {failures:?}") }),
    )
}

fn c6_closed_form_kkt() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (mut res, mut lam) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let d = rng.random_range(1..=3);
        let mut theta = random_point(&mut rng, d, 3.0);
        if dot(&theta, &theta) < 1e-4 {
            theta[0] += 1.0;
        }
        let eps = rng.random_range(0.1..3.0);
        let tn = dot(&theta, &theta).sqrt();
        let mu = DiscreteMeasure::dirac(theta.iter().map(|t| -eps * t / tn).collect()).unwrap();
        let j = Functional::expected_value(Potential::Linear { a: theta.clone() });
        let r = optimality::kkt_residual(&j, &Constraint::SecondMomentBall { eps }, &mu).unwrap();
        res = res.max(r.residual);
        lam = lam.max((r.lambda - tn / (2.0 * eps)).abs());
    }
    check(res <= 1e-10 && lam <= 1e-9, format!("max residual {res:.2e}, max |λ − ‖θ‖/(2ε)| {lam:.2e}"))
}

fn c7_non_attainment() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst: f64 = 0.0;
    let mut below = 0;
    for _ in 0..50 {
        let d = rng.random_range(1..=3);
        let n = rng.random_range(1..=6);
        let mu = random_measure(&mut rng, n, d, 2.0);
        let theta = random_point(&mut rng, d, 2.0);
        let rho = rng.random_range(0.0..3.0);
        let r = optimality::fermat_residual(&Functional::mean_variance(theta.clone(), rho), &mu).unwrap();
        let s: Vec<f64> = mu.points().iter().map(|x| dot(&theta, x)).collect();
        let m: f64 = s.iter().zip(mu.weights()).map(|(a, w)| a * w).sum();
        let var: f64 = s.iter().zip(mu.weights()).map(|(a, w)| w * (a - m).powi(2)).sum();
        let tn = dot(&theta, &theta).sqrt();
        let expected = tn * (1.0 + rho * rho * var).sqrt();
        worst = worst.max((r.residual - expected).abs());
        if r.residual < tn - 1e-12 {
            below += 1;
        }
    }
    check(worst <= 1e-9 && below == 0, format!("max error {worst:.2e}, residuals below ‖θ‖: {below}"))
}

fn c8_meanvar_dro() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let (mut radius, mut residual, mut lam_floor, mut rel) = (0.0f64, 0.0f64, f64::INFINITY, 0.0f64);
    let mut done = 0;
    while done < 10 {
        let d = rng.random_range(1..=2);
        let n = rng.random_range(2..=5);
        let nu = random_measure(&mut rng, n, d, 1.0);
        let theta = random_point(&mut rng, d, 1.5);
        let s: Vec<f64> = nu.points().iter().map(|x| dot(&theta, x)).collect();
        let m: f64 = s.iter().zip(nu.weights()).map(|(a, w)| a * w).sum();
        let var: f64 = s.iter().zip(nu.weights()).map(|(a, w)| w * (a - m).powi(2)).sum();
        if var < 1e-3 || dot(&theta, &theta) < 1e-2 {
            continue;
        }
        let rho = rng.random_range(0.1..2.0);
        let eps = rng.random_range(0.05..1.0);
        let sol = match solvers::solve_meanvar_dro(&theta, rho, eps, &nu) {
            Ok(s) => s,
            Err(e) => return Outcome::Fail(format!("solver error {e}")),
        };
        let w2 = transport::w2(&sol.worst_case, &nu).unwrap().0;
        radius = radius.max((w2 - eps).abs());
        let r = optimality::kkt_residual(
            &Functional::mean_variance(theta.clone(), rho),
            &Constraint::WassersteinBall { reference: nu.clone(), eps },
            &sol.worst_case,
        )
        .unwrap();
        residual = residual.max(r.residual);
        lam_floor = lam_floor.min(sol.lambda_star - rho * dot(&theta, &theta) / 2.0);
        let direct = risk(sol.worst_case.points(), sol.worst_case.weights(), &theta, rho);
        let baseline = meanvar_primal_baseline(&nu, &theta, rho, eps);
        rel = rel.max((direct - baseline).abs() / baseline.abs().max(1e-12));
        done += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        radius <= 1e-6 && residual <= 1e-6 && lam_floor >= -1e-9 && rel <= 1e-3 && secs < 60.0,
        format!(
            "max |W2 − ε| {radius:.2e}, max residual {residual:.2e}, min λ* − ρ‖θ‖²/2 {lam_floor:.2e}, max rel. cost diff vs baseline {rel:.2e}, {secs:.2} s"
        ),
    )
}

fn c9_nonlinear_duality() -> Outcome {
    let nu = DiscreteMeasure::new(2, vec![vec![0.0, 0.5], vec![1.0, -1.0], vec![-0.5, 2.0]], vec![0.2, 0.5, 0.3]).unwrap();
    let theta = vec![0.8, -0.6];
    let eps = 0.25;
    let opts = DualOptions { multistart: 4, seed: 9, restarts: 3 };
    let linear = match solvers::solve_nonlinear_dro_dual(&Potential::Linear { a: theta.clone() }, 0.0, eps, &nu, &opts) {
        Ok(s) => s,
        Err(e) => return Outcome::Fail(format!("linear case error {e}")),
    };
    let mean: f64 = nu.atoms().map(|(x, w)| w * dot(&theta, x)).sum();
    let target = mean + eps * dot(&theta, &theta).sqrt();
    let closed = solvers::solve_meanvar_dro(&theta, 0.0, eps, &nu).unwrap().cost_direct;
    let lin_err = (linear.dual_value - target).abs().max((linear.dual_value - closed).abs());
    if lin_err > 1e-6 {
        return Outcome::Fail(format!("linear case off by {lin_err:.2e}"));
    }
    let desk = DiscreteMeasure::uniform(vec![vec![-1.0], vec![1.0]]).unwrap();
    match solvers::solve_nonlinear_dro_dual(&Potential::SqNorm { scale: 1.0 }, 0.5, 0.1, &desk, &opts) {
        Ok(s) if s.gap <= 1e-3 => Outcome::Pass(format!("linear error {lin_err:.2e}, quadratic gap {:.2e}", s.gap)),
        Ok(s) => Outcome::Fail(format!("linear error {lin_err:.2e}, quadratic gap {:.2e}", s.gap)),
        Err(Error::UnboundedInner { atom }) => Outcome::KnownFail(format!(
            "linear error {lin_err:.2e}; quadratic V = x², ρ = 0.5 instance: inner maximization unbounded for every λ (witness atom {atom}), so the dual is +∞ and no gap exists"
        )),
        Err(e) => Outcome::Fail(format!("quadratic instance error {e}")),
    }
}

fn c10_prox() -> Outcome {
    let mu = DiscreteMeasure::new(2, vec![vec![1.0, -2.0], vec![0.5, 3.0], vec![-4.0, 0.25]], vec![0.2, 0.3, 0.5]).unwrap();
    let s = solvers::prox(&Potential::SqNorm { scale: 0.5 }, &mu, 5, 3).unwrap();
    let half = wassercalc_core::measures::pushforward(&mu, |x| x.iter().map(|c| 0.5 * c).collect()).unwrap();
    let exact = s.mu_star.canonically_equal(&half, 1e-12);
    let well = solvers::prox(&Potential::DoubleWell, &DiscreteMeasure::dirac(vec![0.0]).unwrap(), 8, 3).unwrap();
    let oracle = grid_argmin(|z| (z * z - 1.0).powi(2) + 0.5 * z * z, -3.0, 3.0, 1e-4);
    let err = (well.images[0][0] - oracle).abs();
    check(exact && err <= 1e-4, format!("half map exact: {exact}; double-well x* = {:.6} vs grid {oracle:.4}", well.images[0][0]))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps the oracle independent of the library's sampler.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn c11_gmm() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let data: Vec<Vec<f64>> = (0..50).map(|_| vec![gaussian(&mut rng) + 1.0, gaussian(&mut rng) - 2.0]).collect();
    let n = data.len() as f64;
    let mean = [data.iter().map(|x| x[0]).sum::<f64>() / n, data.iter().map(|x| x[1]).sum::<f64>() / n];
    let one = solvers::fit_gaussian_mixture(&data, &GmmOptions::new(1, 7)).unwrap();
    let mean_err = sq(one.mu_star.point(0), &mean).sqrt();

    let centers = [[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]];
    let data: Vec<Vec<f64>> = (0..500)
        .map(|i| {
            let c = centers[i % 3];
            vec![c[0] + gaussian(&mut rng), c[1] + gaussian(&mut rng)]
        })
        .collect();
    let fit = solvers::fit_gaussian_mixture(&data, &GmmOptions::new(3, 7)).unwrap();
    let worst = centers
        .iter()
        .map(|c| fit.mu_star.points().iter().map(|x| sq(x, c).sqrt()).fold(f64::INFINITY, f64::min))
        .fold(0.0f64, f64::max);
    check(
        mean_err <= 1e-6 && worst <= 0.2 && fit.mu_star.len() == 3 && fit.residual.is_finite(),
        format!("m=1 distance to mean {mean_err:.2e}; m=3 worst center distance {worst:.3}, residual {:.3e}", fit.residual),
    )
}

fn c12_determinism() -> Outcome {
    let nu = DiscreteMeasure::new(2, vec![vec![0.0, 0.0], vec![1.0, 0.5], vec![-0.3, 1.2]], vec![0.3, 0.3, 0.4]).unwrap();
    let data: Vec<Vec<f64>> = (0..60).map(|i| vec![(i as f64 * 0.7).sin() * 2.0 + (i % 2) as f64 * 5.0, (i as f64 * 1.3).cos()]).collect();
    let runs: Vec<(&str, Run<'_>)> = vec![
        ("second_moment", Box::new(|| serde_json::to_string(&solvers::solve_linear_second_moment(&[1.0, 2.0], 0.5).unwrap()).unwrap())),
        ("meanvar_dro", Box::new(|| serde_json::to_string(&solvers::solve_meanvar_dro(&[1.0, -1.0], 0.7, 0.3, &nu).unwrap()).unwrap())),
        ("prox", Box::new(|| serde_json::to_string(&solvers::prox(&Potential::DoubleWell, &nu, 6, 5).unwrap()).unwrap())),
        ("gmm", Box::new(|| serde_json::to_string(&solvers::fit_gaussian_mixture(&data, &GmmOptions::new(2, 5)).unwrap()).unwrap())),
        (
            "dro_dual",
            Box::new(|| {
                let opts = DualOptions { multistart: 3, seed: 5, restarts: 2 };
                serde_json::to_string(&solvers::solve_nonlinear_dro_dual(&Potential::LogSumExp, 0.5, 0.2, &nu, &opts).unwrap()).unwrap()
            }),
        ),
    ];
    let mut differing = Vec::new();
    for (name, run) in &runs {
        if run() != run() {
            differing.push(*name);
        }
    }
    check(differing.is_empty(), format!("{} solvers run twice; differing: {differing:?}", runs.len()))
}

fn main() {
    let criteria: [Criterion; 12] = [
        (1, "OT oracle equivalence", c1_ot_oracle),
        (2, "square example value", c2_square_example),
        (3, "metric axioms", c3_metric),
        (4, "tangent identity", c4_tangent_identity),
        (5, "gradient checks", c5_gradients),
        (6, "closed-form KKT", c6_closed_form_kkt),
        (7, "non-attainment certificate", c7_non_attainment),
        (8, "mean-variance DRO", c8_meanvar_dro),
        (9, "nonlinear DRO duality", c9_nonlinear_duality),
        (10, "proximal operator", c10_prox),
        (11, "Gaussian mixture fitting", c11_gmm),
        (12, "determinism", c12_determinism),
    ];
    let mut unexpected = 0;
    for (id, name, f) in criteria {
        match f() {
            Outcome::Pass(d) => println!("criterion {id:>2} [{name}]: PASS ({d})"),
            Outcome::Fail(d) => {
                unexpected += 1;
                println!("criterion {id:>2} [{name}]: FAIL ({d})");
            }
            Outcome::KnownFail(d) => println!("criterion {id:>2} [{name}]: FAIL, unattainable as stated ({d})"),
        }
    }
    if unexpected > 0 {
        println!("{unexpected} criterion/criteria failed unexpectedly");
        std::process::exit(1);
    }
}
