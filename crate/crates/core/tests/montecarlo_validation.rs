//! Monte Carlo means versus closed forms on a small battery of instances.
//! The full 30-cell battery lives in the acceptance suite; these tests keep
//! the core loop honest during development.

use clreg::design::NoiseLaw;
use clreg::montecarlo::{estimate, Method};
use clreg::problem::{make_instance, Basis, ProblemInstance, Spectrum};
use clreg::theory::theory_report;

fn diag_instance(l1: &[f64], l2: &[f64], w: &[f64], sigma2: f64) -> ProblemInstance {
    make_instance(
        l1.len(),
        Basis::Identity,
        Spectrum::new(l1.to_vec()).unwrap(),
        Spectrum::new(l2.to_vec()).unwrap(),
        w.to_vec(),
        sigma2,
    )
    .unwrap()
}

fn check_cell(inst: &ProblemInstance, n: usize, mu: f64, noise: NoiseLaw, seed: u64) {
    let trials = 10_000;
    let stats = estimate(inst, n, mu, trials, seed, &[Method::Rcl], noise).unwrap();
    let theory = theory_report(inst, n, mu).unwrap();
    let m = stats.method(Method::Rcl).unwrap();
    let cases = [
        ("excess", m.excess, theory.excess_risk),
        ("forgetting", m.forgetting.unwrap(), theory.forgetting),
        ("intransigence", m.intransigence.unwrap(), theory.intransigence),
    ];
    for (what, got, want) in cases {
        let slack = 4.0 * got.stderr.max(1e-12);
        assert!(
            (got.mean - want).abs() <= slack,
            "{what} at n={n}, mu={mu}, {noise}: mc {} vs theory {want} (stderr {})",
            got.mean,
            got.stderr
        );
    }
}

#[test]
fn theory_matches_simulation_full_rank() {
    let inst = diag_instance(&[1.5, 0.8, 0.4], &[0.2, 0.6, 1.1], &[1.0, -0.5, 0.3], 1.0);
    for (i, &(n, mu)) in [(10usize, 0.0f64), (10, 0.5), (100, 0.05)].iter().enumerate() {
        check_cell(&inst, n, mu, NoiseLaw::Gaussian, 100 + i as u64);
    }
}

#[test]
fn theory_matches_simulation_with_bias() {
    // rank-deficient first task with signal where only task two looks
    let inst = diag_instance(
        &[1.0, 0.5, 0.0, 0.0],
        &[0.3, 0.0, 0.7, 0.9],
        &[0.5, 1.0, -1.0, 0.8],
        0.5,
    );
    let report = theory_report(&inst, 20, 0.3).unwrap();
    assert!(report.bias > 0.0);
    check_cell(&inst, 20, 0.3, NoiseLaw::Gaussian, 7);
}

#[test]
fn theory_is_distribution_free() {
    // Identical closed forms must hold under Rademacher noise.
    let inst = diag_instance(&[1.0, 0.4], &[0.6, 1.2], &[1.0, -1.0], 2.0);
    check_cell(&inst, 25, 0.1, NoiseLaw::Gaussian, 11);
    check_cell(&inst, 25, 0.1, NoiseLaw::Rademacher, 11);
}

#[test]
fn scheduled_regularization_rate_shows_up_in_simulation() {
    // Simulated excess under mu = n^(-2/3) follows the scheduled rate, with
    // generous slack for constants at these sample sizes.
    use clreg::experiments::{fit_rate, sweep_n, InstanceFamily, MuPolicy, Source};
    use clreg::problem::ExampleId;
    let table = sweep_n(
        &InstanceFamily::Example(ExampleId::Ex35),
        &[100, 1000, 10_000],
        &[Method::Rcl],
        &MuPolicy::Schedule { exponent: -2.0 / 3.0 },
        200,
        0,
        NoiseLaw::Gaussian,
    )
    .unwrap();
    let fit = fit_rate(&table, Method::Rcl, Source::MonteCarlo).unwrap();
    assert!(
        (-0.83..=-0.5).contains(&fit.slope),
        "MC slope {} outside [-0.83, -0.5]",
        fit.slope
    );
}

#[test]
fn ocl_forgetting_blows_up_on_shrinking_second_task() {
    // lambda_2 = 1/n exhibits constant forgetting while intransigence fades.
    let n = 100;
    let inst = diag_instance(&[1.0], &[1.0 / n as f64], &[1.0], 1.0);
    let stats = estimate(&inst, n, 0.0, 10_000, 5, &[Method::Ocl], NoiseLaw::Gaussian).unwrap();
    let m = stats.method(Method::Ocl).unwrap();
    let f = m.forgetting.unwrap();
    assert!((f.mean - 0.99).abs() <= 4.0 * f.stderr);
    assert!(f.mean > 0.5);
}
