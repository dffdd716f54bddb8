//! Closed-form expected-risk machinery.
//!
//! For the regularized continual learner with strength `mu`, the expected
//! excess risk over both tasks decomposes exactly into forgetting and
//! intransigence:
//!
//! ```text
//! E[excess]        = E[forgetting] + E[intransigence]
//! E[forgetting]    = (sigma^2 / n) * dim_F
//! E[intransigence] = bias + (sigma^2 / n) * dim_I
//! ```
//!
//! with effective dimensions, evaluated per eigenvalue in the shared basis,
//!
//! ```text
//! dim_F = sum_{i in K} (l1 - l2 - 2 mu) * l2 / (l2 + mu)^2
//! dim_I = sum_i (mu^2 * pinv(l1) + l2) * l2 / (l2 + mu)^2  +  rank(H1)
//! bias  = sum_{i not in K} <v_i, w*>^2 * mu^2 * l2 / (l2 + mu)^2
//! ```
//!
//! where `K = { i : l1_i > 0 }` and all inverses follow the pseudo-inverse
//! convention `1/0 -> 0`. At `mu = 0` ratios degenerate; the conventions used
//! here reproduce the ordinary-continual-learning closed form
//! `dim_F = tr(H1 pinv(H2)) - rank(H1 H2)`, `dim_I = rank(H1) + rank(H2)`,
//! `bias = 0` exactly (see [`ocl_effective_dims`]).
//!
//! `dim_F` is signed: large `mu` can make expected forgetting negative
//! (backward transfer), and the report deliberately does not clamp it.
//!
//! Everything here is a pure function of the instance; the [`dense`]
//! submodule recomputes the same traces on materialized matrices as an
//! independent validation path.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{ProblemInstance, Task};

/// Expected excess risk with its full breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub n: usize,
    pub mu: f64,
    #[serde(rename = "dim_F")]
    pub dim_f: f64,
    #[serde(rename = "dim_I")]
    pub dim_i: f64,
    pub bias: f64,
    pub forgetting: f64,
    pub intransigence: f64,
    pub excess_risk: f64,
}

impl RiskReport {
    pub const CSV_HEADER: &'static str =
        "n,mu,dim_F,dim_I,bias,forgetting,intransigence,excess_risk";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.n,
            crate::g17(self.mu),
            crate::g17(self.dim_f),
            crate::g17(self.dim_i),
            crate::g17(self.bias),
            crate::g17(self.forgetting),
            crate::g17(self.intransigence),
            crate::g17(self.excess_risk),
        )
    }
}

/// The three effective-dimension quantities for one `(instance, mu)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveDims {
    pub dim_f: f64,
    pub dim_i: f64,
    pub bias: f64,
}

fn pinv_scalar(v: f64, threshold: f64) -> f64 {
    if v > threshold {
        1.0 / v
    } else {
        0.0
    }
}

/// `l2 / (l2 + mu)^2` and `l2 / (l2 + mu)` with the zero conventions.
#[inline]
fn ratios(l2: f64, mu: f64) -> (f64, f64) {
    let denom = l2 + mu;
    if denom > 0.0 {
        let t = l2 / denom;
        (t / denom, t)
    } else {
        (0.0, 0.0)
    }
}

/// Per-eigenvalue evaluation of the effective dimensions.
pub fn effective_dims(instance: &ProblemInstance, mu: f64) -> Result<EffectiveDims> {
    if mu < 0.0 {
        return Err(Error::NegativeMu(mu));
    }
    let thr = instance.zero_threshold();
    let s1 = instance.spectrum(Task::One);
    let s2 = instance.spectrum(Task::Two);
    let w_eig = instance.w_star_eig();

    let mut dim_f = 0.0;
    let mut dim_i = 0.0;
    let mut bias = 0.0;
    for i in 0..instance.dim() {
        let (l1, l2) = (s1[i], s2[i]);
        let (b, t) = ratios(l2, mu);
        if l1 > thr {
            dim_f += (l1 - l2 - 2.0 * mu) * b;
        } else {
            bias += w_eig[i] * w_eig[i] * (mu * mu * b);
        }
        dim_i += mu * mu * pinv_scalar(l1, thr) * b + t * t;
    }
    dim_i += instance.rank(Task::One) as f64;
    Ok(EffectiveDims { dim_f, dim_i, bias })
}

/// Closed form at `mu = 0`, stated directly:
/// `dim_F = tr(H1 pinv(H2)) - rank(H1 H2)`, `dim_I = rank(H1) + rank(H2)`.
/// Kept as a separate route so the degenerate-`mu` conventions of
/// [`effective_dims`] can be checked against it.
pub fn ocl_effective_dims(instance: &ProblemInstance) -> EffectiveDims {
    let thr = instance.zero_threshold();
    let s1 = instance.spectrum(Task::One);
    let s2 = instance.spectrum(Task::Two);
    let mut trace = 0.0;
    let mut joint_rank = 0usize;
    for i in 0..instance.dim() {
        if s2[i] > thr {
            trace += s1[i] / s2[i];
            if s1[i] > thr {
                joint_rank += 1;
            }
        }
    }
    EffectiveDims {
        dim_f: trace - joint_rank as f64,
        dim_i: (instance.rank(Task::One) + instance.rank(Task::Two)) as f64,
        bias: 0.0,
    }
}

/// Expected-risk report for the continual learner at sample size `n` and
/// regularization `mu`. `mu = 0` is the ordinary (unregularized) learner.
pub fn theory_report(instance: &ProblemInstance, n: usize, mu: f64) -> Result<RiskReport> {
    if n == 0 {
        return Err(Error::InvalidShape("sample size must be >= 1".into()));
    }
    let dims = effective_dims(instance, mu)?;
    let noise_per_sample = instance.sigma2() / n as f64;
    let forgetting = noise_per_sample * dims.dim_f;
    let intransigence = dims.bias + noise_per_sample * dims.dim_i;
    Ok(RiskReport {
        n,
        mu,
        dim_f: dims.dim_f,
        dim_i: dims.dim_i,
        bias: dims.bias,
        forgetting,
        intransigence,
        excess_risk: forgetting + intransigence,
    })
}

/// Expected excess risk computed along an independent algebraic route: the
/// quadratic form of the final parameter's error covariance against
/// `H1 + H2`, accumulated per eigenvalue without ever forming the
/// forgetting/intransigence split. Agreement with
/// `theory_report(..).excess_risk` is the decomposition identity.
pub fn excess_via_covariance(instance: &ProblemInstance, n: usize, mu: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidShape("sample size must be >= 1".into()));
    }
    if mu < 0.0 {
        return Err(Error::NegativeMu(mu));
    }
    let thr = instance.zero_threshold();
    let s1 = instance.spectrum(Task::One);
    let s2 = instance.spectrum(Task::Two);
    let w_eig = instance.w_star_eig();
    let noise_per_sample = instance.sigma2() / n as f64;

    let mut excess = 0.0;
    for i in 0..instance.dim() {
        let (l1, l2) = (s1[i], s2[i]);
        let (b, _) = ratios(l2, mu);
        // mu^2 / (l2 + mu)^2; the mu = 0, l2 = 0 corner is the identity map
        // (nothing shrinks a direction neither task observes).
        let shrink = if mu > 0.0 {
            let f = mu / (l2 + mu);
            f * f
        } else if l2 > thr {
            0.0
        } else {
            1.0
        };
        let first_phase_var = if l1 > thr {
            noise_per_sample / l1
        } else {
            w_eig[i] * w_eig[i]
        };
        let cov_ii = shrink * first_phase_var + noise_per_sample * b;
        excess += (l1 + l2) * cov_ii;
    }
    Ok(excess)
}

/// Population risk of a parameter on one task, `(w - w*)^T H (w - w*) + sigma^2`.
pub fn population_risk(instance: &ProblemInstance, w: &DVector<f64>, task: Task) -> Result<f64> {
    if w.len() != instance.dim() {
        return Err(Error::DimensionMismatch(format!(
            "parameter has length {} for dimension {}",
            w.len(),
            instance.dim()
        )));
    }
    let w_eig = instance.basis().transpose_mul(w);
    let w_star_eig = instance.w_star_eig();
    let spectrum = instance.spectrum(task);
    let mut quad = 0.0;
    for i in 0..instance.dim() {
        let delta = w_eig[i] - w_star_eig[i];
        quad += spectrum[i] * delta * delta;
    }
    Ok(quad + instance.sigma2())
}

/// Expected excess risk of joint learning: `sigma^2 / n * rank(H1 + H2)`.
pub fn jl_excess_risk(instance: &ProblemInstance, n: usize) -> f64 {
    debug_assert!(n >= 1);
    let thr = instance.zero_threshold();
    let joint_rank = (0..instance.dim())
        .filter(|&i| {
            instance.spectrum(Task::One)[i] > thr || instance.spectrum(Task::Two)[i] > thr
        })
        .count();
    instance.sigma2() / n as f64 * joint_rank as f64
}

/// The loose ends of the bound chains: upper bounds on the effective
/// dimensions and the bias that hold for every `mu >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpperBounds {
    /// `tr(H1 (H2 + mu I)^-1) >= dim_F`
    #[serde(rename = "dimF_ub")]
    pub dim_f: f64,
    /// `mu tr(pinv(H1)) + rank(H1) + rank(H2) >= dim_I`
    #[serde(rename = "dimI_ub")]
    pub dim_i: f64,
    /// `mu ||w*||^2 >= bias`
    #[serde(rename = "bias_ub")]
    pub bias: f64,
}

pub fn upper_bounds(instance: &ProblemInstance, mu: f64) -> Result<UpperBounds> {
    if mu < 0.0 {
        return Err(Error::NegativeMu(mu));
    }
    let thr = instance.zero_threshold();
    let s1 = instance.spectrum(Task::One);
    let s2 = instance.spectrum(Task::Two);
    let mut dim_f = 0.0;
    let mut inv_trace = 0.0;
    for i in 0..instance.dim() {
        dim_f += s1[i] * pinv_scalar(s2[i] + mu, 0.0);
        inv_trace += pinv_scalar(s1[i], thr);
    }
    let dim_i = mu * inv_trace + (instance.rank(Task::One) + instance.rank(Task::Two)) as f64;
    let bias = mu * instance.w_star().norm_squared();
    Ok(UpperBounds { dim_f, dim_i, bias })
}

/// Finite-`n` surrogates of the learnability conditions, reported raw for the
/// caller to inspect across a sample-size sweep. No asymptotic verdict is
/// decided here.
#[derive(Debug, Clone, Serialize)]
pub struct LearnabilityReport {
    pub n: usize,
    /// `rank(H1) / n` and `rank(H2) / n`: joint learning needs both small.
    pub rank1_over_n: f64,
    pub rank2_over_n: f64,
    /// `tr(H1 pinv(H2)) / n`: the task-similarity measure governing the
    /// unregularized learner.
    pub similarity_over_n: f64,
    pub per_mu: Vec<MuCondition>,
    /// Grid point minimizing the closed-form excess risk, and its value.
    pub best_mu: f64,
    pub best_excess: f64,
}

/// The regularized learnability triple at one grid point.
#[derive(Debug, Clone, Serialize)]
pub struct MuCondition {
    pub mu: f64,
    /// `tr(H1 (H2 + mu I)^-1) / n`
    pub trace_ratio: f64,
    /// `mu tr(pinv(H1)) / n`
    pub mu_trace_ratio: f64,
}

pub fn learnability_verdicts(
    instance: &ProblemInstance,
    n: usize,
    mu_grid: &[f64],
) -> Result<LearnabilityReport> {
    assert!(!mu_grid.is_empty(), "mu grid must be non-empty");
    let nf = n as f64;
    let thr = instance.zero_threshold();
    let s1 = instance.spectrum(Task::One);
    let s2 = instance.spectrum(Task::Two);

    let mut similarity = 0.0;
    let mut inv_trace1 = 0.0;
    for i in 0..instance.dim() {
        similarity += s1[i] * pinv_scalar(s2[i], thr);
        inv_trace1 += pinv_scalar(s1[i], thr);
    }

    let mut per_mu = Vec::with_capacity(mu_grid.len());
    let mut best = (f64::INFINITY, 0.0f64);
    for &mu in mu_grid {
        let report = theory_report(instance, n, mu)?;
        if report.excess_risk < best.0 {
            best = (report.excess_risk, mu);
        }
        let trace: f64 = (0..instance.dim())
            .map(|i| s1[i] * pinv_scalar(s2[i] + mu, 0.0))
            .sum();
        per_mu.push(MuCondition {
            mu,
            trace_ratio: trace / nf,
            mu_trace_ratio: mu * inv_trace1 / nf,
        });
    }

    Ok(LearnabilityReport {
        n,
        rank1_over_n: instance.rank(Task::One) as f64 / nf,
        rank2_over_n: instance.rank(Task::Two) as f64 / nf,
        similarity_over_n: similarity / nf,
        per_mu,
        best_mu: best.1,
        best_excess: best.0,
    })
}

/// Trace formulas evaluated on materialized matrices. Used to validate the
/// per-eigenvalue path; rounding aside, the two must agree.
pub mod dense {
    use nalgebra::{DMatrix, DVector};

    use crate::linalg::{rank_psd, spectral_apply, sym_eigen, PINV_RCUT};

    use super::EffectiveDims;

    /// Effective dimensions from `H1`, `H2`, `w*` alone.
    pub fn effective_dims(
        h1: &DMatrix<f64>,
        h2: &DMatrix<f64>,
        w_star: &DVector<f64>,
        mu: f64,
    ) -> EffectiveDims {
        let d = h1.nrows();
        let (vals1, vecs1) = sym_eigen(h1);
        let cut1 = PINV_RCUT * vals1.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let mut proj_k = DMatrix::zeros(d, d);
        let mut pinv1 = DMatrix::zeros(d, d);
        let mut rank1 = 0usize;
        for (j, &l) in vals1.iter().enumerate() {
            if l > cut1 {
                let u = vecs1.column(j);
                proj_k += u * u.transpose();
                pinv1 += u * u.transpose() / l;
                rank1 += 1;
            }
        }
        let proj_kc = DMatrix::identity(d, d) - &proj_k;

        // H2 (H2 + mu I)^-2 as a spectral function, with l2 = mu = 0 -> 0.
        let g2 = spectral_apply(h2, |l2| {
            let denom = l2 + mu;
            if denom > 0.0 {
                l2 / (denom * denom)
            } else {
                0.0
            }
        });

        let middle = h1 - h2 - DMatrix::identity(d, d) * (2.0 * mu);
        let dim_f = (&proj_k * middle * &g2).trace();
        let dim_i = ((pinv1 * (mu * mu) + h2) * &g2).trace() + rank1 as f64;
        let bias = (&proj_kc * w_star).dot(&(&g2 * w_star * (mu * mu)));
        EffectiveDims { dim_f, dim_i, bias }
    }

    /// `rank(H1 + H2)` under the relative eigenvalue cutoff.
    pub fn jl_effective_rank(h1: &DMatrix<f64>, h2: &DMatrix<f64>) -> usize {
        rank_psd(&(h1 + h2))
    }
}
