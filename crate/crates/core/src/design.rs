//! Fixed design matrices and label sampling.
//!
//! Features are deterministic: for each task the design is the canonical
//! matrix whose empirical second moment reproduces the task covariance
//! exactly, `X_k = sqrt(n) Q_k diag(sqrt(lambda_r)) V_r^T`, where `Q_k` embeds
//! the `r` active directions into the first `r` sample rows. Only the labels
//! are random: `y = X w* + eps` with i.i.d. noise of variance `sigma^2`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::problem::{ProblemInstance, Task};

/// Deterministic per-index stream derivation, `seed' = hash(seed, index)`.
/// Trials keyed this way are reproducible independently of execution order.
pub fn derive_stream(seed: u64, index: u64) -> u64 {
    fn splitmix64(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix64(splitmix64(seed) ^ splitmix64(index.wrapping_mul(0xA24B_AED4_963E_E407)))
}

/// Label-noise law. All closed forms depend only on the first two moments,
/// so swapping the law is a distribution-freeness check, not a model change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseLaw {
    #[default]
    Gaussian,
    /// `+sigma` or `-sigma` with equal probability.
    Rademacher,
    /// No noise; labels are exact. Useful for recovery tests.
    Zero,
}

impl fmt::Display for NoiseLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseLaw::Gaussian => "gaussian",
            NoiseLaw::Rademacher => "rademacher",
            NoiseLaw::Zero => "zero",
        })
    }
}

impl FromStr for NoiseLaw {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseLaw::Gaussian),
            "rademacher" => Ok(NoiseLaw::Rademacher),
            "zero" => Ok(NoiseLaw::Zero),
            other => Err(Error::InvalidShape(format!("unknown noise law '{other}'"))),
        }
    }
}

/// The two materialized design matrices for one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedDesign {
    n: usize,
    x1: DMatrix<f64>,
    x2: DMatrix<f64>,
}

impl FixedDesign {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn x(&self, task: Task) -> &DMatrix<f64> {
        match task {
            Task::One => &self.x1,
            Task::Two => &self.x2,
        }
    }

    /// Relative Frobenius error of the Gram identity `(1/n) X^T X = H`.
    pub fn gram_error(&self, instance: &ProblemInstance, task: Task) -> f64 {
        let x = self.x(task);
        let h = instance.covariance(task);
        let gram = x.transpose() * x / self.n as f64;
        (gram - &h).norm() / h.norm().max(1.0)
    }
}

/// Materializes the canonical fixed design for `instance` with `n` samples
/// per task. Fails when `n` is below the rank of either covariance.
pub fn build_design(instance: &ProblemInstance, n: usize) -> Result<FixedDesign> {
    let build_one = |task: Task| -> Result<DMatrix<f64>> {
        let spectrum = instance.spectrum(task);
        let threshold = instance.zero_threshold();
        let active: Vec<usize> = (0..instance.dim())
            .filter(|&i| spectrum[i] > threshold)
            .collect();
        if active.len() > n {
            return Err(Error::RankExceedsSamples {
                rank: active.len(),
                n,
            });
        }
        let sqrt_n = (n as f64).sqrt();
        let mut x = DMatrix::zeros(n, instance.dim());
        for (row, &i) in active.iter().enumerate() {
            let scale = sqrt_n * spectrum[i].sqrt();
            let v = instance.basis().column(instance.dim(), i);
            for c in 0..instance.dim() {
                x[(row, c)] = scale * v[c];
            }
        }
        Ok(x)
    };
    Ok(FixedDesign {
        n,
        x1: build_one(Task::One)?,
        x2: build_one(Task::Two)?,
    })
}

/// One sampled label realization on a fixed design.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub design: Arc<FixedDesign>,
    pub y1: DVector<f64>,
    pub y2: DVector<f64>,
    /// Stream seed the labels were drawn from.
    pub seed: u64,
}

impl Dataset {
    /// Moment vector `X_k^T y_k / n` used by all closed-form fits.
    pub fn moment(&self, task: Task) -> DVector<f64> {
        let (x, y) = match task {
            Task::One => (&self.design.x1, &self.y1),
            Task::Two => (&self.design.x2, &self.y2),
        };
        x.transpose() * y / self.design.n as f64
    }

    /// Debug CSV: one row per sample, `task,x_1..x_d,y`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let d = self.design.x1.ncols();
        out.push_str("task");
        for j in 1..=d {
            out.push_str(&format!(",x{j}"));
        }
        out.push_str(",y\n");
        for (task, x, y) in [(1, &self.design.x1, &self.y1), (2, &self.design.x2, &self.y2)] {
            for t in 0..self.design.n {
                out.push_str(&task.to_string());
                for j in 0..d {
                    out.push(',');
                    out.push_str(&crate::g17(x[(t, j)]));
                }
                out.push(',');
                out.push_str(&crate::g17(y[t]));
                out.push('\n');
            }
        }
        out
    }
}

fn noise_vector(rng: &mut ChaCha8Rng, n: usize, sigma: f64, law: NoiseLaw) -> DVector<f64> {
    match law {
        NoiseLaw::Gaussian => {
            DVector::from_iterator(n, (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)))
        }
        NoiseLaw::Rademacher => DVector::from_iterator(
            n,
            (0..n).map(|_| if rng.gen::<bool>() { sigma } else { -sigma }),
        ),
        NoiseLaw::Zero => DVector::zeros(n),
    }
}

/// Draws one label realization. The two tasks' noise vectors come from
/// disjoint portions of the same stream, hence are independent.
pub fn sample_labels(
    design: &Arc<FixedDesign>,
    instance: &ProblemInstance,
    law: NoiseLaw,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = instance.sigma2().sqrt();
    let eps1 = noise_vector(&mut rng, design.n, sigma, law);
    let eps2 = noise_vector(&mut rng, design.n, sigma, law);
    let y1 = &design.x1 * instance.w_star() + eps1;
    let y2 = &design.x2 * instance.w_star() + eps2;
    Dataset {
        design: Arc::clone(design),
        y1,
        y2,
        seed,
    }
}
