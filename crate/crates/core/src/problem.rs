//! Two-task problem instances: a shared eigenbasis, one eigenvalue sequence
//! per task, a common optimal parameter, and a label-noise variance.
//!
//! Both task covariances are stored spectrally as `H_k = V diag(lambda_k) V^T`
//! with one orthogonal `V`, so they commute by construction. Generators cover
//! the geometric benchmark family [`generate_q`] and the named diagonal
//! instances of [`example_instance`].

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Frobenius tolerance above which a basis is rejected as non-orthogonal.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

/// Frobenius tolerance for the materialized commutation check
/// `||H1 H2 - H2 H1||_F`.
pub const COMMUTATION_TOL: f64 = 1e-10;

/// Ordered eigenvalue sequence of one task covariance. All entries are
/// non-negative; the length equals the ambient dimension of the instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Spectrum(Vec<f64>);

impl Spectrum {
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        for (index, &value) in eigenvalues.iter().enumerate() {
            if value.is_nan() || value < 0.0 {
                return Err(Error::NegativeEigenvalue { index, value });
            }
        }
        Ok(Self(eigenvalues))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Number of entries strictly above `threshold`.
    pub fn rank(&self, threshold: f64) -> usize {
        self.0.iter().filter(|&&v| v > threshold).count()
    }
}

impl std::ops::Index<usize> for Spectrum {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Shared eigenbasis. The identity is kept symbolic: it is the canonical
/// serialized form and lets the spectral paths skip rotations.
#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    Identity,
    Orthogonal(DMatrix<f64>),
}

impl Basis {
    pub fn is_identity(&self) -> bool {
        matches!(self, Basis::Identity)
    }

    /// Materializes the basis as a `d x d` matrix.
    pub fn to_matrix(&self, d: usize) -> DMatrix<f64> {
        match self {
            Basis::Identity => DMatrix::identity(d, d),
            Basis::Orthogonal(v) => v.clone(),
        }
    }

    /// `V x`: maps eigenbasis coordinates back to the ambient basis.
    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Basis::Identity => x.clone(),
            Basis::Orthogonal(v) => v * x,
        }
    }

    /// `V^T x`: coordinates of `x` in the eigenbasis.
    pub fn transpose_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Basis::Identity => x.clone(),
            Basis::Orthogonal(v) => v.transpose() * x,
        }
    }

    /// The `i`-th eigenvector.
    pub fn column(&self, d: usize, i: usize) -> DVector<f64> {
        match self {
            Basis::Identity => {
                let mut e = DVector::zeros(d);
                e[i] = 1.0;
                e
            }
            Basis::Orthogonal(v) => v.column(i).into_owned(),
        }
    }
}

/// Indices where the first task's covariance acts (`lambda_1 > 0`) and its
/// complement, computed against the instance's zero threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexSets {
    pub k: Vec<usize>,
    pub k_complement: Vec<usize>,
}

impl IndexSets {
    fn from_spectrum(spectrum: &Spectrum, threshold: f64) -> Self {
        let (k, k_complement) = (0..spectrum.len()).partition(|&i| spectrum[i] > threshold);
        Self { k, k_complement }
    }
}

/// A validated two-task continual-learning problem.
///
/// Immutable after construction; cheap to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    d: usize,
    basis: Basis,
    spectrum1: Spectrum,
    spectrum2: Spectrum,
    w_star: DVector<f64>,
    sigma2: f64,
    zero_threshold: f64,
    index_sets: IndexSets,
    /// Cached `V^T w*`.
    w_star_eig: DVector<f64>,
}

/// Validates and packages an instance. Checks dimensions, non-negativity of
/// the spectra, positivity of the noise variance, orthogonality of the basis,
/// and that the materialized covariances commute.
pub fn make_instance(
    d: usize,
    basis: Basis,
    spectrum1: Spectrum,
    spectrum2: Spectrum,
    w_star: Vec<f64>,
    sigma2: f64,
) -> Result<ProblemInstance> {
    ProblemInstance::with_zero_threshold(d, basis, spectrum1, spectrum2, w_star, sigma2, 0.0)
}

impl ProblemInstance {
    /// Same as [`make_instance`] with an explicit zero threshold for the
    /// index-set split. Generators produce exact zeros, so the default
    /// threshold is exact `0`.
    pub fn with_zero_threshold(
        d: usize,
        basis: Basis,
        spectrum1: Spectrum,
        spectrum2: Spectrum,
        w_star: Vec<f64>,
        sigma2: f64,
        zero_threshold: f64,
    ) -> Result<Self> {
        if spectrum1.len() != d || spectrum2.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "spectra of lengths {} and {} for dimension {}",
                spectrum1.len(),
                spectrum2.len(),
                d
            )));
        }
        if w_star.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "w* has length {} for dimension {}",
                w_star.len(),
                d
            )));
        }
        if let Basis::Orthogonal(v) = &basis {
            if v.nrows() != d || v.ncols() != d {
                return Err(Error::DimensionMismatch(format!(
                    "basis is {}x{} for dimension {}",
                    v.nrows(),
                    v.ncols(),
                    d
                )));
            }
            let deviation = linalg::orthogonality_deviation(v);
            if deviation > ORTHOGONALITY_TOL {
                return Err(Error::NonOrthogonalBasis {
                    deviation,
                    tolerance: ORTHOGONALITY_TOL,
                });
            }
        }
        if sigma2.is_nan() || sigma2 <= 0.0 {
            return Err(Error::NonPositiveNoise(sigma2));
        }

        let index_sets = IndexSets::from_spectrum(&spectrum1, zero_threshold);
        let w_star = DVector::from_vec(w_star);
        let w_star_eig = basis.transpose_mul(&w_star);
        let instance = Self {
            d,
            basis,
            spectrum1,
            spectrum2,
            w_star,
            sigma2,
            zero_threshold,
            index_sets,
            w_star_eig,
        };

        // Commutation holds by construction for a shared orthogonal basis;
        // the materialized check guards against a basis that slipped past the
        // orthogonality tolerance in a direction that matters.
        if !instance.basis.is_identity() {
            let h1 = instance.covariance(Task::One);
            let h2 = instance.covariance(Task::Two);
            let commutator = (&h1 * &h2 - &h2 * &h1).norm();
            if commutator > COMMUTATION_TOL {
                return Err(Error::NonOrthogonalBasis {
                    deviation: commutator,
                    tolerance: COMMUTATION_TOL,
                });
            }
        }
        Ok(instance)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn spectrum(&self, task: Task) -> &Spectrum {
        match task {
            Task::One => &self.spectrum1,
            Task::Two => &self.spectrum2,
        }
    }

    pub fn w_star(&self) -> &DVector<f64> {
        &self.w_star
    }

    /// `V^T w*`, the optimal parameter in eigenbasis coordinates.
    pub fn w_star_eig(&self) -> &DVector<f64> {
        &self.w_star_eig
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn zero_threshold(&self) -> f64 {
        self.zero_threshold
    }

    pub fn index_sets(&self) -> &IndexSets {
        &self.index_sets
    }

    /// True when `lambda_1[i]` is above the zero threshold.
    pub fn in_k(&self, i: usize) -> bool {
        self.spectrum1[i] > self.zero_threshold
    }

    pub fn rank(&self, task: Task) -> usize {
        self.spectrum(task).rank(self.zero_threshold)
    }

    /// Materializes `H_k = V diag(lambda_k) V^T`.
    pub fn covariance(&self, task: Task) -> DMatrix<f64> {
        let lambda = DVector::from_column_slice(self.spectrum(task).as_slice());
        let diag = DMatrix::from_diagonal(&lambda);
        match &self.basis {
            Basis::Identity => diag,
            Basis::Orthogonal(v) => v * diag * v.transpose(),
        }
    }
}

/// Task selector for the two regression problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    One,
    Two,
}

/// Geometric benchmark instance `Q(k, l)` in dimension `d`.
///
/// Task one has the geometric spectrum `1, 1/2, 1/4, ...`; task two reverses
/// the leading block of `k` eigenvalues and the following block of `l`
/// eigenvalues, which controls how far the two tasks' head directions are
/// misaligned. The optimal parameter has unit entries on the first `k + l + 2`
/// coordinates and a harmonic tail; the noise variance is 1.
pub fn generate_q(k: usize, l: usize, d: usize) -> Result<ProblemInstance> {
    if k + l + 2 > d {
        return Err(Error::InvalidShape(format!(
            "Q({k},{l}) requires dimension >= {}, got {d}",
            k + l + 2
        )));
    }
    let lambda1: Vec<f64> = (0..d).map(|i| 0.5f64.powi(i as i32)).collect();
    let mut lambda2 = lambda1.clone();
    lambda2[..k].reverse();
    lambda2[k..k + l].reverse();
    let w_star: Vec<f64> = (0..d)
        .map(|i| {
            if i < k + l + 2 {
                1.0
            } else {
                1.0 / (i + 1) as f64
            }
        })
        .collect();
    make_instance(
        d,
        Basis::Identity,
        Spectrum::new(lambda1)?,
        Spectrum::new(lambda2)?,
        w_star,
        1.0,
    )
}

/// Named diagonal instances used by the worked examples. Each is a family
/// parameterized by the sample size `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleId {
    /// One shared direction where the second task's signal decays like `1/n`:
    /// ordinary continual learning forgets catastrophically.
    Ex34Case2,
    /// The second task is weak on the first task's main direction and carries
    /// a fresh direction at scale `n^(-2/3)`; a scheduled regularization
    /// recovers an `n^(-2/3)` rate.
    Ex35,
    /// Two directions whose scales are so mismatched that no single
    /// regularization strength can make both forgetting and intransigence
    /// small.
    Ex36,
}

impl ExampleId {
    pub const ALL: [ExampleId; 3] = [ExampleId::Ex34Case2, ExampleId::Ex35, ExampleId::Ex36];

    pub fn name(&self) -> &'static str {
        match self {
            ExampleId::Ex34Case2 => "ex34_case2",
            ExampleId::Ex35 => "ex35",
            ExampleId::Ex36 => "ex36",
        }
    }
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExampleId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ex34_case2" => Ok(ExampleId::Ex34Case2),
            "ex35" => Ok(ExampleId::Ex35),
            "ex36" => Ok(ExampleId::Ex36),
            other => Err(Error::UnknownExample(other.to_string())),
        }
    }
}

/// Ambient dimension used for the named examples: constant-size blocks are
/// fixed at 3 and the remaining coordinates are zero-padded.
pub const EXAMPLE_DIM: usize = 8;

/// Builds the named example instance at sample size `n` (`n >= 2`).
pub fn example_instance(which: ExampleId, n: usize) -> Result<ProblemInstance> {
    if n < 2 {
        return Err(Error::InvalidShape(format!(
            "example instances need n >= 2, got {n}"
        )));
    }
    let d = EXAMPLE_DIM;
    let nf = n as f64;
    let mut lambda1 = vec![0.0; d];
    let mut lambda2 = vec![0.0; d];
    let mut w_star = vec![0.0; d];
    match which {
        ExampleId::Ex34Case2 => {
            lambda1[0] = 1.0;
            lambda2[0] = 1.0 / nf;
            w_star[0] = 1.0;
        }
        ExampleId::Ex35 => {
            lambda1[0] = 1.0;
            lambda2[0] = 1.0 / nf;
            lambda2[1] = nf.powf(-2.0 / 3.0);
            for i in 2..5 {
                lambda1[i] = 1.0;
                lambda2[i] = 1.0;
            }
            w_star[1] = 1.0;
        }
        ExampleId::Ex36 => {
            lambda1[0] = 1.0;
            lambda1[1] = nf.powi(-2);
            lambda2[0] = 1.0 / nf;
            lambda2[1] = 1.0 / nf;
            w_star[0] = 1.0;
        }
    }
    make_instance(
        d,
        Basis::Identity,
        Spectrum::new(lambda1)?,
        Spectrum::new(lambda2)?,
        w_star,
        1.0,
    )
}

// --- serialization -------------------------------------------------------

/// Wire form of an instance: the basis is either the string `"identity"` or a
/// flat row-major `d*d` array.
#[derive(Serialize, Deserialize)]
struct InstanceJson {
    d: usize,
    basis: BasisJson,
    spectrum1: Vec<f64>,
    spectrum2: Vec<f64>,
    w_star: Vec<f64>,
    sigma2: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BasisJson {
    Named(String),
    RowMajor(Vec<f64>),
}

impl ProblemInstance {
    pub fn to_json(&self) -> String {
        let basis = match &self.basis {
            Basis::Identity => BasisJson::Named("identity".to_string()),
            Basis::Orthogonal(v) => {
                let mut flat = Vec::with_capacity(self.d * self.d);
                for r in 0..self.d {
                    for c in 0..self.d {
                        flat.push(v[(r, c)]);
                    }
                }
                BasisJson::RowMajor(flat)
            }
        };
        let doc = InstanceJson {
            d: self.d,
            basis,
            spectrum1: self.spectrum1.as_slice().to_vec(),
            spectrum2: self.spectrum2.as_slice().to_vec(),
            w_star: self.w_star.as_slice().to_vec(),
            sigma2: self.sigma2,
        };
        serde_json::to_string_pretty(&doc).expect("instance serialization cannot fail")
    }

    /// Parses and re-validates an instance document produced by [`Self::to_json`].
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: InstanceJson = serde_json::from_str(text)
            .map_err(|e| Error::InvalidShape(format!("instance JSON: {e}")))?;
        let basis = match doc.basis {
            BasisJson::Named(name) if name == "identity" => Basis::Identity,
            BasisJson::Named(name) => {
                return Err(Error::InvalidShape(format!("unknown basis '{name}'")))
            }
            BasisJson::RowMajor(flat) => {
                if flat.len() != doc.d * doc.d {
                    return Err(Error::DimensionMismatch(format!(
                        "basis array has {} entries for dimension {}",
                        flat.len(),
                        doc.d
                    )));
                }
                Basis::Orthogonal(DMatrix::from_row_slice(doc.d, doc.d, &flat))
            }
        };
        make_instance(
            doc.d,
            basis,
            Spectrum::new(doc.spectrum1)?,
            Spectrum::new(doc.spectrum2)?,
            doc.w_star,
            doc.sigma2,
        )
    }
}

/// Shared handle used by the simulation layers.
pub type InstanceRef = Arc<ProblemInstance>;

#[cfg(test)]
mod tests {
    use super::*;

    fn spectrum(v: &[f64]) -> Spectrum {
        Spectrum::new(v.to_vec()).unwrap()
    }

    #[test]
    fn index_sets_from_definition() {
        let inst = make_instance(
            2,
            Basis::Identity,
            spectrum(&[1.0, 0.0]),
            spectrum(&[1.0, 1.0]),
            vec![1.0, 0.0],
            1.0,
        )
        .unwrap();
        assert_eq!(inst.index_sets().k, vec![0]);
        assert_eq!(inst.index_sets().k_complement, vec![1]);
    }

    #[test]
    fn negative_eigenvalue_rejected() {
        let err = Spectrum::new(vec![1.0, -0.1]).unwrap_err();
        assert!(matches!(err, Error::NegativeEigenvalue { index: 1, .. }));
    }

    #[test]
    fn non_positive_noise_rejected() {
        let err = make_instance(
            1,
            Basis::Identity,
            spectrum(&[1.0]),
            spectrum(&[1.0]),
            vec![1.0],
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonPositiveNoise(_)));
    }

    #[test]
    fn non_orthogonal_basis_rejected() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let err = make_instance(
            2,
            Basis::Orthogonal(v),
            spectrum(&[1.0, 0.5]),
            spectrum(&[0.5, 1.0]),
            vec![1.0, 1.0],
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonOrthogonalBasis { .. }));
    }

    #[test]
    fn rotated_instance_commutes() {
        let v = linalg::givens(3, 0, 1, 0.7);
        let inst = make_instance(
            3,
            Basis::Orthogonal(v),
            spectrum(&[1.0, 0.5, 0.25]),
            spectrum(&[0.25, 0.5, 1.0]),
            vec![1.0, 1.0, 1.0],
            1.0,
        )
        .unwrap();
        let h1 = inst.covariance(Task::One);
        let h2 = inst.covariance(Task::Two);
        assert!((&h1 * &h2 - &h2 * &h1).norm() < 1e-12);
    }

    #[test]
    fn q_generator_matches_block_reversal() {
        let q = generate_q(0, 0, 4).unwrap();
        assert_eq!(q.spectrum(Task::Two).as_slice(), &[1.0, 0.5, 0.25, 0.125]);
        assert_eq!(q.w_star().as_slice(), &[1.0, 1.0, 1.0 / 3.0, 0.25]);

        let q = generate_q(3, 0, 6).unwrap();
        assert_eq!(
            q.spectrum(Task::Two).as_slice(),
            &[0.25, 0.5, 1.0, 0.125, 0.0625, 0.03125]
        );

        let q = generate_q(2, 2, 8).unwrap();
        assert_eq!(
            q.spectrum(Task::Two).as_slice(),
            &[0.5, 1.0, 0.125, 0.25, 0.0625, 0.03125, 0.015625, 0.0078125]
        );
        assert_eq!(
            q.w_star().as_slice(),
            &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0 / 7.0, 0.125]
        );

        // a 5-block reversal puts 1/16 first
        let q = generate_q(5, 0, 200).unwrap();
        assert_eq!(q.spectrum(Task::Two)[0], 0.0625);
    }

    #[test]
    fn q_generator_rejects_small_dimension() {
        assert!(matches!(generate_q(1, 0, 1), Err(Error::InvalidShape(_))));
        assert!(matches!(generate_q(3, 0, 4), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn q_spectra_are_permutations() {
        for (k, l, d) in [(0usize, 0usize, 4usize), (5, 0, 30), (3, 4, 12), (15, 15, 40)] {
            let q = generate_q(k, l, d).unwrap();
            let mut s1 = q.spectrum(Task::One).as_slice().to_vec();
            let mut s2 = q.spectrum(Task::Two).as_slice().to_vec();
            s1.sort_by(|a, b| a.partial_cmp(b).unwrap());
            s2.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(s1, s2);
        }
    }

    #[test]
    fn q_block_reversal_is_involution() {
        let (k, l, d) = (4usize, 3usize, 12usize);
        let q = generate_q(k, l, d).unwrap();
        let mut s2 = q.spectrum(Task::Two).as_slice().to_vec();
        s2[..k].reverse();
        s2[k..k + l].reverse();
        assert_eq!(s2, q.spectrum(Task::One).as_slice());
    }

    #[test]
    fn example_instances_match_definitions() {
        let inst = example_instance(ExampleId::Ex36, 100).unwrap();
        assert_eq!(
            inst.spectrum(Task::One).as_slice(),
            &[1.0, 1e-4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            inst.spectrum(Task::Two).as_slice(),
            &[0.01, 0.01, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );

        let inst = example_instance(ExampleId::Ex35, 1000).unwrap();
        let s2 = inst.spectrum(Task::Two).as_slice();
        assert!((s2[0] - 1e-3).abs() < 1e-15);
        assert!((s2[1] - 1e-2).abs() < 1e-12);
        assert_eq!(&s2[2..], &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);

        let inst = example_instance(ExampleId::Ex34Case2, 50).unwrap();
        assert_eq!(inst.spectrum(Task::One)[0], 1.0);
        assert!((inst.spectrum(Task::Two)[0] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn unknown_example_name() {
        assert!(matches!(
            "ex99".parse::<ExampleId>(),
            Err(Error::UnknownExample(_))
        ));
    }

    #[test]
    fn json_round_trip_identity() {
        let q = generate_q(5, 0, 20).unwrap();
        let text = q.to_json();
        assert!(text.contains("\"identity\""));
        let back = ProblemInstance::from_json(&text).unwrap();
        assert_eq!(&back, &q);
    }

    #[test]
    fn json_round_trip_rotated() {
        let v = linalg::givens(3, 1, 2, -0.3);
        let inst = make_instance(
            3,
            Basis::Orthogonal(v),
            spectrum(&[2.0, 1.0, 0.0]),
            spectrum(&[0.5, 1.0, 1.5]),
            vec![1.0, -1.0, 0.5],
            2.0,
        )
        .unwrap();
        let back = ProblemInstance::from_json(&inst.to_json()).unwrap();
        assert_eq!(back.dim(), 3);
        assert!((back.covariance(Task::One) - inst.covariance(Task::One)).norm() < 1e-15);
        assert_eq!(back.w_star(), inst.w_star());
    }

    #[test]
    fn json_rejects_bad_documents() {
        assert!(ProblemInstance::from_json("{\"d\": 1}").is_err());
        let bad = r#"{"d":2,"basis":"identity","spectrum1":[1.0,-0.5],"spectrum2":[1.0,1.0],"w_star":[1.0,0.0],"sigma2":1.0}"#;
        assert!(matches!(
            ProblemInstance::from_json(bad),
            Err(Error::NegativeEigenvalue { .. })
        ));
    }
}
