//! Monte Carlo estimation of expected excess risk, forgetting, and
//! intransigence. This is the empirical counterpart of [`crate::theory`]:
//! the design is fixed, labels are resampled per trial from
//! counter-derived streams, and population risks are evaluated in closed
//! form, so the only randomness is the label noise itself.
//!
//! Trials are independent and may run in parallel; results are collected by
//! trial index and reduced sequentially with compensated summation, so the
//! outcome is bit-identical regardless of scheduling.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::design::{build_design, derive_stream, sample_labels, NoiseLaw};
use crate::error::{Error, Result};
use crate::estimators;
use crate::problem::{ProblemInstance, Task};
use crate::theory::population_risk;

/// The learner being simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    /// Ordinary continual learning (no regularization, `mu = 0`).
    Ocl,
    /// Regularized continual learning at the configured `mu`.
    Rcl,
    /// Joint learning on both datasets at once.
    Jl,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ocl, Method::Rcl, Method::Jl];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Ocl => "ocl",
            Method::Rcl => "rcl",
            Method::Jl => "jl",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ocl" => Ok(Method::Ocl),
            "rcl" => Ok(Method::Rcl),
            "jl" => Ok(Method::Jl),
            other => Err(Error::InvalidShape(format!("unknown method '{other}'"))),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

/// One trial's risk record. Forgetting and intransigence are defined for the
/// two continual learners only; joint learning reports excess risk alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub excess: f64,
    pub forgetting: Option<f64>,
    pub intransigence: Option<f64>,
}

fn evaluate_method(
    instance: &ProblemInstance,
    dataset: &crate::design::Dataset,
    method: Method,
    mu: f64,
) -> Result<TrialOutcome> {
    let sigma2 = instance.sigma2();
    match method {
        Method::Jl => {
            let w = estimators::fit_joint(instance, dataset);
            let r1 = population_risk(instance, &w, Task::One)?;
            let r2 = population_risk(instance, &w, Task::Two)?;
            Ok(TrialOutcome {
                excess: r1 + r2 - 2.0 * sigma2,
                forgetting: None,
                intransigence: None,
            })
        }
        Method::Ocl | Method::Rcl => {
            let mu = if method == Method::Ocl { 0.0 } else { mu };
            let fit = estimators::fit_cl(instance, dataset, mu)?;
            let r1_first = population_risk(instance, &fit.w1, Task::One)?;
            let r1_final = population_risk(instance, &fit.w2, Task::One)?;
            let r2_final = population_risk(instance, &fit.w2, Task::Two)?;
            // min R_k(.) = sigma^2: the shared optimum attains the noise floor.
            Ok(TrialOutcome {
                excess: r1_final + r2_final - 2.0 * sigma2,
                forgetting: Some(r1_final - r1_first),
                intransigence: Some((r2_final - sigma2) + (r1_first - sigma2)),
            })
        }
    }
}

/// Runs a single trial: build the design, draw labels from `seed`, fit, and
/// evaluate population risks in closed form.
pub fn run_trial(
    instance: &ProblemInstance,
    n: usize,
    mu: f64,
    seed: u64,
    method: Method,
    noise: NoiseLaw,
) -> Result<TrialOutcome> {
    let design = Arc::new(build_design(instance, n)?);
    let dataset = sample_labels(&design, instance, noise, seed);
    evaluate_method(instance, &dataset, method, mu)
}

/// All per-trial records of one simulation run, ordered by `(trial, method)`.
#[derive(Debug, Clone)]
pub struct TrialSet {
    pub mu: f64,
    pub records: Vec<(u64, Method, TrialOutcome)>,
    pub trials: u64,
}

impl TrialSet {
    /// Per-trial CSV, `trial,method,mu,excess,forgetting,intransigence`.
    /// The `mu` column holds the strength the method actually used, so it is
    /// 0 for `ocl` and empty for `jl`; fields that do not apply are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,method,mu,excess,forgetting,intransigence\n");
        let opt = |v: Option<f64>| v.map(crate::g17).unwrap_or_default();
        for (trial, method, rec) in &self.records {
            let mu = match method {
                Method::Ocl => crate::g17(0.0),
                Method::Rcl => crate::g17(self.mu),
                Method::Jl => String::new(),
            };
            out.push_str(&format!(
                "{trial},{method},{mu},{},{},{}\n",
                crate::g17(rec.excess),
                opt(rec.forgetting),
                opt(rec.intransigence),
            ));
        }
        out
    }
}

/// Draws `trials` label realizations (streams keyed by trial index) and
/// evaluates every requested method on each realization, in parallel.
pub fn run_trials(
    instance: &ProblemInstance,
    n: usize,
    mu: f64,
    trials: u64,
    base_seed: u64,
    methods: &[Method],
    noise: NoiseLaw,
) -> Result<TrialSet> {
    if trials == 0 {
        return Err(Error::InvalidShape("need at least one trial".into()));
    }
    let design = Arc::new(build_design(instance, n)?);
    let per_trial: Vec<Result<Vec<(Method, TrialOutcome)>>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let dataset = sample_labels(&design, instance, noise, derive_stream(base_seed, trial));
            methods
                .iter()
                .map(|&m| Ok((m, evaluate_method(instance, &dataset, m, mu)?)))
                .collect()
        })
        .collect();

    let mut records = Vec::with_capacity(trials as usize * methods.len());
    for (trial, row) in per_trial.into_iter().enumerate() {
        for (method, outcome) in row? {
            records.push((trial as u64, method, outcome));
        }
    }
    Ok(TrialSet {
        mu,
        records,
        trials,
    })
}

/// Mean and standard error of one risk component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComponentStats {
    pub mean: f64,
    pub stderr: f64,
}

/// Aggregated statistics for one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodStats {
    pub excess: ComponentStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forgetting: Option<ComponentStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intransigence: Option<ComponentStats>,
}

/// Monte Carlo summary over all trials and methods.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialStatistics {
    pub trials: u64,
    pub mu: f64,
    /// False when `trials = 1`: the sample standard deviation is undefined
    /// and every stderr field is reported as 0.
    pub stderr_valid: bool,
    pub per_method: BTreeMap<Method, MethodStats>,
}

/// Neumaier-compensated accumulator; sequential and order-deterministic.
#[derive(Default, Clone, Copy)]
struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }
    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn component_stats(values: &[f64]) -> ComponentStats {
    let count = values.len() as f64;
    let mut sum = Kahan::default();
    for &v in values {
        sum.add(v);
    }
    let mean = sum.value() / count;
    if values.len() < 2 {
        return ComponentStats { mean, stderr: 0.0 };
    }
    let mut sq = Kahan::default();
    for &v in values {
        sq.add((v - mean) * (v - mean));
    }
    let variance = sq.value() / (count - 1.0);
    ComponentStats {
        mean,
        stderr: (variance / count).sqrt(),
    }
}

impl TrialStatistics {
    pub fn from_trials(set: &TrialSet, methods: &[Method]) -> Self {
        let mut per_method = BTreeMap::new();
        for &method in methods {
            let outcomes: Vec<&TrialOutcome> = set
                .records
                .iter()
                .filter(|(_, m, _)| *m == method)
                .map(|(_, _, o)| o)
                .collect();
            let excess: Vec<f64> = outcomes.iter().map(|o| o.excess).collect();
            let forgetting: Option<Vec<f64>> =
                outcomes.iter().map(|o| o.forgetting).collect();
            let intransigence: Option<Vec<f64>> =
                outcomes.iter().map(|o| o.intransigence).collect();
            per_method.insert(
                method,
                MethodStats {
                    excess: component_stats(&excess),
                    forgetting: forgetting.as_deref().map(component_stats),
                    intransigence: intransigence.as_deref().map(component_stats),
                },
            );
        }
        TrialStatistics {
            trials: set.trials,
            mu: set.mu,
            stderr_valid: set.trials >= 2,
            per_method,
        }
    }

    pub fn method(&self, method: Method) -> Option<&MethodStats> {
        self.per_method.get(&method)
    }
}

/// Convenience wrapper: run the trials and aggregate.
pub fn estimate(
    instance: &ProblemInstance,
    n: usize,
    mu: f64,
    trials: u64,
    base_seed: u64,
    methods: &[Method],
    noise: NoiseLaw,
) -> Result<TrialStatistics> {
    let set = run_trials(instance, n, mu, trials, base_seed, methods, noise)?;
    Ok(TrialStatistics::from_trials(&set, methods))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{generate_q, make_instance, Basis, Spectrum};
    use crate::theory::{jl_excess_risk, theory_report};

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

    #[test]
    fn zero_noise_means_zero_excess() {
        let inst = diag_instance(&[1.0, 0.5], &[0.5, 1.0], &[1.0, 2.0], 1.0);
        for method in Method::ALL {
            let rec = run_trial(&inst, 4, 0.3, 5, method, NoiseLaw::Zero).unwrap();
            assert!(rec.excess.abs() < 1e-12, "{method}: {}", rec.excess);
        }
    }

    #[test]
    fn trials_are_deterministic() {
        let inst = diag_instance(&[1.0], &[0.5], &[1.0], 1.0);
        let a = run_trial(&inst, 8, 0.1, 77, Method::Rcl, NoiseLaw::Gaussian).unwrap();
        let b = run_trial(&inst, 8, 0.1, 77, Method::Rcl, NoiseLaw::Gaussian).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn per_trial_identity_holds() {
        let inst = diag_instance(&[1.0, 0.0], &[0.5, 0.5], &[1.0, 1.0], 1.0);
        let rec = run_trial(&inst, 10, 0.2, 3, Method::Rcl, NoiseLaw::Gaussian).unwrap();
        let sum = rec.forgetting.unwrap() + rec.intransigence.unwrap();
        assert!((rec.excess - sum).abs() < 1e-10);
    }

    #[test]
    fn single_trial_statistics_are_flagged() {
        let inst = diag_instance(&[1.0], &[1.0], &[1.0], 1.0);
        let stats = estimate(&inst, 2, 0.0, 1, 0, &[Method::Ocl], NoiseLaw::Gaussian).unwrap();
        assert!(!stats.stderr_valid);
        let m = stats.method(Method::Ocl).unwrap();
        assert_eq!(m.excess.stderr, 0.0);
        let rec = run_trial(&inst, 2, 0.0, derive_stream(0, 0), Method::Ocl, NoiseLaw::Gaussian)
            .unwrap();
        assert_eq!(m.excess.mean, rec.excess);
    }

    #[test]
    fn scalar_ocl_matches_theory_within_stderr() {
        // l1 = l2 = 1, mu = 0, sigma^2 = 1, n = 10: expected excess 0.2.
        let inst = diag_instance(&[1.0], &[1.0], &[1.0], 1.0);
        let stats = estimate(&inst, 10, 0.0, 100_000, 12, &[Method::Ocl], NoiseLaw::Gaussian)
            .unwrap();
        let m = stats.method(Method::Ocl).unwrap();
        let theory = theory_report(&inst, 10, 0.0).unwrap();
        assert!((theory.excess_risk - 0.2).abs() < 1e-15);
        assert!(
            (m.excess.mean - theory.excess_risk).abs() <= 3.0 * m.excess.stderr,
            "mean {} vs theory {} (stderr {})",
            m.excess.mean,
            theory.excess_risk,
            m.excess.stderr
        );
    }

    #[test]
    fn jl_on_q_matches_closed_form() {
        let q = generate_q(5, 0, 200).unwrap();
        let stats = estimate(&q, 2000, 0.0, 20, 0, &[Method::Jl], NoiseLaw::Gaussian).unwrap();
        let m = stats.method(Method::Jl).unwrap();
        assert!(m.forgetting.is_none());
        let expect = jl_excess_risk(&q, 2000);
        assert!((m.excess.mean - expect).abs() <= 3.0 * m.excess.stderr);
    }

    #[test]
    fn mean_identity_for_cl_methods() {
        let inst = diag_instance(&[1.0, 0.4], &[0.6, 1.2], &[1.0, -1.0], 2.0);
        let stats =
            estimate(&inst, 10, 0.5, 500, 9, &[Method::Ocl, Method::Rcl], NoiseLaw::Rademacher)
                .unwrap();
        for method in [Method::Ocl, Method::Rcl] {
            let m = stats.method(method).unwrap();
            let sum = m.forgetting.unwrap().mean + m.intransigence.unwrap().mean;
            assert!((m.excess.mean - sum).abs() < 1e-10);
        }
    }

    #[test]
    fn per_trial_csv_shape() {
        let inst = diag_instance(&[1.0], &[1.0], &[1.0], 1.0);
        let set = run_trials(&inst, 2, 0.0, 3, 0, &[Method::Ocl, Method::Jl], NoiseLaw::Gaussian)
            .unwrap();
        let csv = set.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 6);
        assert!(lines[0].starts_with("trial,method,mu,"));
        // joint-learning rows leave forgetting/intransigence empty
        let jl_line = lines.iter().find(|l| l.contains(",jl,")).unwrap();
        assert!(jl_line.ends_with(",,"));
    }

    #[test]
    fn scheduling_independence() {
        let inst = diag_instance(&[1.0, 0.5], &[0.5, 1.0], &[1.0, 1.0], 1.0);
        let run = || {
            estimate(&inst, 8, 0.1, 64, 4, &[Method::Rcl], NoiseLaw::Gaussian)
                .unwrap()
        };
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool8 = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
        let seq = pool1.install(run);
        let par = pool8.install(run);
        assert_eq!(seq, par);
    }
}
