//! Experiment orchestration: sample-size sweeps, regularization sweeps,
//! grid tuning, power-law rate fits, and the verdict checks for the worked
//! examples.

use serde::Serialize;
use std::fmt;
use std::str::FromStr;

use crate::design::{derive_stream, NoiseLaw};
use crate::error::{Error, Result};
use crate::montecarlo::{estimate, Method};
use crate::problem::{
    example_instance, make_instance, Basis, ExampleId, ProblemInstance, Spectrum, EXAMPLE_DIM,
};
use crate::theory::{jl_excess_risk, theory_report, RiskReport};

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && count >= 1, "bad grid spec");
    if count == 1 {
        return vec![lo];
    }
    let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| {
            if k == 0 {
                lo
            } else if k == count - 1 {
                hi
            } else {
                (ln_lo + (ln_hi - ln_lo) * k as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

/// Default 33-point log grid on `[1e-6, 1e2]` used for tuning and sweeps.
pub fn default_mu_grid() -> Vec<f64> {
    log_grid(1e-6, 1e2, 33)
}

/// Exhaustive tuning: the grid point (with `mu = 0` prepended) minimizing the
/// closed-form excess risk. Ties keep the smaller candidate, so doing
/// nothing wins over regularizing when regularizing does not help.
pub fn tune_mu(instance: &ProblemInstance, n: usize, grid: &[f64]) -> Result<(f64, RiskReport)> {
    let mut best: Option<(f64, RiskReport)> = None;
    for mu in std::iter::once(0.0).chain(grid.iter().copied()) {
        let report = theory_report(instance, n, mu)?;
        match &best {
            Some((_, b)) if b.excess_risk <= report.excess_risk => {}
            _ => best = Some((mu, report)),
        }
    }
    Ok(best.expect("grid plus the zero anchor is never empty"))
}

/// How the regularization strength is chosen along a sample-size sweep.
#[derive(Debug, Clone)]
pub enum MuPolicy {
    Fixed(f64),
    /// Minimize closed-form excess per `n` over this grid (plus `mu = 0`).
    TunedPerN(Vec<f64>),
    /// `mu = n^exponent`.
    Schedule { exponent: f64 },
}

impl MuPolicy {
    fn resolve(&self, instance: &ProblemInstance, n: usize) -> Result<f64> {
        match self {
            MuPolicy::Fixed(mu) => {
                if *mu < 0.0 {
                    Err(Error::NegativeMu(*mu))
                } else {
                    Ok(*mu)
                }
            }
            MuPolicy::TunedPerN(grid) => Ok(tune_mu(instance, n, grid)?.0),
            MuPolicy::Schedule { exponent } => Ok((n as f64).powf(*exponent)),
        }
    }
}

/// An instance that may depend on the sample size (the worked examples embed
/// `n` in their spectra; benchmark instances do not).
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)] // one per sweep, never stored in bulk
pub enum InstanceFamily {
    Fixed(ProblemInstance),
    Example(ExampleId),
}

impl InstanceFamily {
    pub fn instantiate(&self, n: usize) -> Result<ProblemInstance> {
        match self {
            InstanceFamily::Fixed(instance) => Ok(instance.clone()),
            InstanceFamily::Example(id) => example_instance(*id, n),
        }
    }
}

/// Whether a row comes from the closed forms or from simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    Theory,
    MonteCarlo,
}

impl Source {
    pub fn name(&self) -> &'static str {
        match self {
            Source::Theory => "theory",
            Source::MonteCarlo => "montecarlo",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Source {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub method: Method,
    pub source: Source,
    pub excess: f64,
    pub forgetting: Option<f64>,
    pub intransigence: Option<f64>,
    pub stderr_excess: Option<f64>,
    pub stderr_forgetting: Option<f64>,
    pub stderr_intransigence: Option<f64>,
}

/// Table of sweep results, sorted by `(value, method, source)`.
#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    /// Name of the swept variable, `"n"` or `"mu"`.
    pub independent: String,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub const CSV_HEADER: &'static str = "independent,value,method,source,excess,forgetting,\
                                          intransigence,stderr_excess,stderr_forgetting,\
                                          stderr_intransigence";

    fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            a.value
                .partial_cmp(&b.value)
                .unwrap()
                .then(a.method.cmp(&b.method))
                .then(a.source.cmp(&b.source))
        });
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(crate::g17).unwrap_or_default();
        for row in &self.rows {
            // Integral sweep values (sample sizes) print plainly.
            let value = if row.value.fract() == 0.0 && row.value.abs() < 1e15 {
                format!("{}", row.value as i64)
            } else {
                crate::g17(row.value)
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                self.independent,
                value,
                row.method,
                row.source,
                crate::g17(row.excess),
                opt(row.forgetting),
                opt(row.intransigence),
                opt(row.stderr_excess),
                opt(row.stderr_forgetting),
                opt(row.stderr_intransigence),
            ));
        }
        out
    }

    pub fn select(&self, method: Method, source: Source) -> Vec<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.method == method && r.source == source)
            .collect()
    }
}

fn theory_row(value: f64, method: Method, report: &RiskReport) -> SweepRow {
    SweepRow {
        value,
        method,
        source: Source::Theory,
        excess: report.excess_risk,
        forgetting: Some(report.forgetting),
        intransigence: Some(report.intransigence),
        stderr_excess: None,
        stderr_forgetting: None,
        stderr_intransigence: None,
    }
}

fn ensure_increasing<T: PartialOrd + fmt::Debug>(values: &[T], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidShape(format!("{what} must be non-empty")));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidShape(format!(
            "{what} must be strictly increasing: {values:?}"
        )));
    }
    Ok(())
}

/// Sample-size sweep: closed-form and Monte Carlo rows for each requested
/// method at each `n`. The regularized learner's `mu` follows `mu_policy`.
pub fn sweep_n(
    family: &InstanceFamily,
    n_values: &[usize],
    methods: &[Method],
    mu_policy: &MuPolicy,
    trials: u64,
    seed: u64,
    noise: NoiseLaw,
) -> Result<SweepTable> {
    ensure_increasing(n_values, "n values")?;
    let mut table = SweepTable {
        independent: "n".to_string(),
        rows: Vec::new(),
    };
    for (cell, &n) in n_values.iter().enumerate() {
        let instance = family.instantiate(n)?;
        let mu = mu_policy.resolve(&instance, n)?;
        for &method in methods {
            match method {
                Method::Ocl => {
                    table
                        .rows
                        .push(theory_row(n as f64, method, &theory_report(&instance, n, 0.0)?));
                }
                Method::Rcl => {
                    table
                        .rows
                        .push(theory_row(n as f64, method, &theory_report(&instance, n, mu)?));
                }
                Method::Jl => table.rows.push(SweepRow {
                    value: n as f64,
                    method,
                    source: Source::Theory,
                    excess: jl_excess_risk(&instance, n),
                    forgetting: None,
                    intransigence: None,
                    stderr_excess: None,
                    stderr_forgetting: None,
                    stderr_intransigence: None,
                }),
            }
        }
        if trials > 0 {
            let stats = estimate(
                &instance,
                n,
                mu,
                trials,
                derive_stream(seed, cell as u64),
                methods,
                noise,
            )?;
            for &method in methods {
                let m = stats.method(method).expect("requested method present");
                table.rows.push(SweepRow {
                    value: n as f64,
                    method,
                    source: Source::MonteCarlo,
                    excess: m.excess.mean,
                    forgetting: m.forgetting.map(|c| c.mean),
                    intransigence: m.intransigence.map(|c| c.mean),
                    stderr_excess: Some(m.excess.stderr),
                    stderr_forgetting: m.forgetting.map(|c| c.stderr),
                    stderr_intransigence: m.intransigence.map(|c| c.stderr),
                });
            }
        }
    }
    table.sort();
    Ok(table)
}

/// Regularization sweep for the continual learner at fixed `n`. The
/// unregularized endpoint `mu = 0` is always included; every row is labeled
/// `rcl` since the `mu = 0` fit is exactly the ordinary learner.
pub fn sweep_mu(
    instance: &ProblemInstance,
    n: usize,
    mu_values: &[f64],
    trials: u64,
    seed: u64,
    noise: NoiseLaw,
) -> Result<SweepTable> {
    ensure_increasing(mu_values, "mu values")?;
    if mu_values.len() < 2 {
        return Err(Error::InvalidShape(
            "a mu sweep needs at least two grid points".into(),
        ));
    }
    if mu_values[0] < 0.0 {
        return Err(Error::NegativeMu(mu_values[0]));
    }
    let mut grid: Vec<f64> = Vec::with_capacity(mu_values.len() + 1);
    if mu_values[0] > 0.0 {
        grid.push(0.0);
    }
    grid.extend_from_slice(mu_values);

    let mut table = SweepTable {
        independent: "mu".to_string(),
        rows: Vec::new(),
    };
    for (cell, &mu) in grid.iter().enumerate() {
        table
            .rows
            .push(theory_row(mu, Method::Rcl, &theory_report(instance, n, mu)?));
        if trials > 0 {
            let stats = estimate(
                instance,
                n,
                mu,
                trials,
                derive_stream(seed, cell as u64),
                &[Method::Rcl],
                noise,
            )?;
            let m = stats.method(Method::Rcl).expect("rcl stats present");
            table.rows.push(SweepRow {
                value: mu,
                method: Method::Rcl,
                source: Source::MonteCarlo,
                excess: m.excess.mean,
                forgetting: m.forgetting.map(|c| c.mean),
                intransigence: m.intransigence.map(|c| c.mean),
                stderr_excess: Some(m.excess.stderr),
                stderr_forgetting: m.forgetting.map(|c| c.stderr),
                stderr_intransigence: m.intransigence.map(|c| c.stderr),
            });
        }
    }
    table.sort();
    Ok(table)
}

/// Ordinary least squares of `log(excess)` on `log(value)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
}

fn ols_loglog(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: points.len(),
        });
    }
    if let Some(&(_, y)) = points.iter().find(|&&(_, y)| y <= 0.0) {
        return Err(Error::NonPositiveExcess(y));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let count = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / count;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / count;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = logs
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            r * r
        })
        .sum();
    Ok(RateFit {
        slope,
        intercept,
        residual_rms: (ss_res / count).sqrt(),
    })
}

/// Fits a power law to the excess-risk column of the given method/source.
pub fn fit_rate(table: &SweepTable, method: Method, source: Source) -> Result<RateFit> {
    let points: Vec<(f64, f64)> = table
        .select(method, source)
        .iter()
        .map(|r| (r.value, r.excess))
        .collect();
    ols_loglog(&points)
}

// --- worked-example verification ------------------------------------------

/// The verifiable claims: three named example families plus the easy-rate
/// case whose second-task eigenvalue decays like `n^(r-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyWhich {
    Ex34Case1,
    Ex34Case2,
    Ex35,
    Ex36,
}

impl VerifyWhich {
    pub fn name(&self) -> &'static str {
        match self {
            VerifyWhich::Ex34Case1 => "ex34_case1",
            VerifyWhich::Ex34Case2 => "ex34_case2",
            VerifyWhich::Ex35 => "ex35",
            VerifyWhich::Ex36 => "ex36",
        }
    }
}

impl fmt::Display for VerifyWhich {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VerifyWhich {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ex34_case1" => Ok(VerifyWhich::Ex34Case1),
            "ex34_case2" => Ok(VerifyWhich::Ex34Case2),
            "ex35" => Ok(VerifyWhich::Ex35),
            "ex36" => Ok(VerifyWhich::Ex36),
            other => Err(Error::UnknownExample(other.to_string())),
        }
    }
}

/// Decay rate used to construct the easy case: the second task's only
/// eigenvalue is `n^(CASE1_RATE - 1)`, giving an `n^(-CASE1_RATE)` excess.
pub const CASE1_RATE: f64 = 0.5;

fn case1_instance(n: usize) -> Result<ProblemInstance> {
    let mut lambda1 = vec![0.0; EXAMPLE_DIM];
    let mut lambda2 = vec![0.0; EXAMPLE_DIM];
    let mut w_star = vec![0.0; EXAMPLE_DIM];
    lambda1[0] = 1.0;
    lambda2[0] = (n as f64).powf(CASE1_RATE - 1.0);
    w_star[0] = 1.0;
    make_instance(
        EXAMPLE_DIM,
        Basis::Identity,
        Spectrum::new(lambda1)?,
        Spectrum::new(lambda2)?,
        w_star,
        1.0,
    )
}

/// One verdict line: `observed` compared against `bound` under `relation`.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub observed: f64,
    pub bound: f64,
    pub relation: &'static str,
    pub pass: bool,
}

impl CheckResult {
    fn ge(name: &str, observed: f64, bound: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            observed,
            bound,
            relation: ">=",
            pass: observed >= bound,
        }
    }
    fn le(name: &str, observed: f64, bound: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            observed,
            bound,
            relation: "<=",
            pass: observed <= bound,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExampleVerdict {
    pub example: String,
    pub n_values: Vec<usize>,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
}

/// Evaluates the named example's stated behavior along the closed-form path.
///
/// Rate-based verdicts (`ex34_case1`, `ex35`) need at least three sample
/// sizes for the log-log fit; the bound-based verdicts accept any non-empty
/// increasing list.
pub fn verify_example(which: VerifyWhich, n_values: &[usize]) -> Result<ExampleVerdict> {
    ensure_increasing(n_values, "n values")?;
    let needs_fit = matches!(which, VerifyWhich::Ex34Case1 | VerifyWhich::Ex35);
    if needs_fit && n_values.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: n_values.len(),
        });
    }

    let mut checks = Vec::new();
    match which {
        VerifyWhich::Ex34Case1 => {
            let points: Vec<(f64, f64)> = n_values
                .iter()
                .map(|&n| {
                    Ok((
                        n as f64,
                        theory_report(&case1_instance(n)?, n, 0.0)?.excess_risk,
                    ))
                })
                .collect::<Result<_>>()?;
            let fit = ols_loglog(&points)?;
            checks.push(CheckResult::ge(
                "ocl_slope_lower",
                fit.slope,
                -CASE1_RATE - 0.1,
            ));
            checks.push(CheckResult::le(
                "ocl_slope_upper",
                fit.slope,
                -CASE1_RATE + 0.1,
            ));
        }
        VerifyWhich::Ex34Case2 => {
            let mut min_excess = f64::INFINITY;
            for &n in n_values {
                let inst = example_instance(ExampleId::Ex34Case2, n)?;
                min_excess = min_excess.min(theory_report(&inst, n, 0.0)?.excess_risk);
            }
            checks.push(CheckResult::ge("ocl_excess_floor", min_excess, 0.9));
        }
        VerifyWhich::Ex35 => {
            let mut min_ocl = f64::INFINITY;
            let mut points = Vec::with_capacity(n_values.len());
            for &n in n_values {
                let inst = example_instance(ExampleId::Ex35, n)?;
                min_ocl = min_ocl.min(theory_report(&inst, n, 0.0)?.excess_risk);
                let mu = (n as f64).powf(-2.0 / 3.0);
                points.push((n as f64, theory_report(&inst, n, mu)?.excess_risk));
            }
            checks.push(CheckResult::ge("ocl_excess_floor", min_ocl, 0.5));
            let fit = ols_loglog(&points)?;
            checks.push(CheckResult::ge("rcl_slope_lower", fit.slope, -0.75));
            checks.push(CheckResult::le("rcl_slope_upper", fit.slope, -0.6));
        }
        VerifyWhich::Ex36 => {
            let grid = log_grid(1e-5, 1.0, 101);
            let mut min_grid_excess = f64::INFINITY;
            // worst case over n for each regime claim
            let mut small_f = f64::INFINITY;
            let mut small_i_scaled = f64::NEG_INFINITY;
            let mut mid_f = f64::INFINITY;
            let mut mid_i = f64::INFINITY;
            let mut mid_total = f64::INFINITY;
            let mut large_f_scaled = f64::NEG_INFINITY;
            let mut large_i = f64::INFINITY;
            for &n in n_values {
                let inst = example_instance(ExampleId::Ex36, n)?;
                for &mu in &grid {
                    min_grid_excess =
                        min_grid_excess.min(theory_report(&inst, n, mu)?.excess_risk);
                }
                let nf = n as f64;
                let small = theory_report(&inst, n, nf.powf(-1.5))?;
                small_f = small_f.min(small.forgetting);
                small_i_scaled = small_i_scaled.max(small.intransigence * nf);
                let mid = theory_report(&inst, n, 1.0 / nf)?;
                mid_f = mid_f.min(mid.forgetting);
                mid_i = mid_i.min(mid.intransigence);
                mid_total = mid_total.min(mid.excess_risk);
                let large = theory_report(&inst, n, nf.powf(-0.5))?;
                large_f_scaled = large_f_scaled.max(large.forgetting * nf);
                large_i = large_i.min(large.intransigence);
            }
            checks.push(CheckResult::ge("min_excess_over_grid", min_grid_excess, 0.5));
            checks.push(CheckResult::ge("small_mu_forgetting", small_f, 0.5));
            checks.push(CheckResult::le(
                "small_mu_intransigence_times_n",
                small_i_scaled,
                10.0,
            ));
            checks.push(CheckResult::ge("mid_mu_forgetting", mid_f, 0.2));
            checks.push(CheckResult::ge("mid_mu_intransigence", mid_i, 0.2));
            checks.push(CheckResult::ge("mid_mu_excess", mid_total, 0.5));
            checks.push(CheckResult::le(
                "large_mu_forgetting_times_n",
                large_f_scaled,
                10.0,
            ));
            checks.push(CheckResult::ge("large_mu_intransigence", large_i, 0.5));
        }
    }

    let pass = checks.iter().all(|c| c.pass);
    Ok(ExampleVerdict {
        example: which.name().to_string(),
        n_values: n_values.to_vec(),
        checks,
        pass,
    })
}
