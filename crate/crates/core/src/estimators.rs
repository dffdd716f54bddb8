//! The four closed-form learners.
//!
//! * `fit_first` - minimum-norm least squares on task one (the long-term
//!   memory vector).
//! * `fit_second` with `mu > 0` - ridge-style fit of task two penalizing the
//!   squared deviation from the stored first-phase parameter.
//! * `fit_second` with `mu = 0` - the ordinary continual-learning update: the
//!   least-squares correction of minimal norm, which leaves directions unseen
//!   by task two untouched.
//! * `fit_joint` - minimum-norm least squares on both datasets stacked, the
//!   imaginary baseline with unlimited memory.
//!
//! Two computation paths exist. The spectral path works per-eigenvalue in the
//! instance's shared basis and is the production path; [`dense`] recomputes
//! the same quantities from raw matrices via eigendecomposition-based
//! pseudo-inverses and serves as the cross-checking oracle.

use nalgebra::DVector;

use crate::design::Dataset;
use crate::error::{Error, Result};
use crate::problem::{ProblemInstance, Task};

/// Result of running a continual learner: the stored first-phase parameter,
/// the reported final parameter, and the regularization strength used.
#[derive(Debug, Clone)]
pub struct EstimatorOutput {
    pub w1: DVector<f64>,
    pub w2: DVector<f64>,
    pub mu: f64,
}

fn pinv_scalar(v: f64, threshold: f64) -> f64 {
    if v > threshold {
        1.0 / v
    } else {
        0.0
    }
}

/// Minimum-norm least-squares fit of the first dataset.
pub fn fit_first(instance: &ProblemInstance, dataset: &Dataset) -> DVector<f64> {
    let m1 = instance.basis().transpose_mul(&dataset.moment(Task::One));
    let s1 = instance.spectrum(Task::One);
    let thr = instance.zero_threshold();
    let w1 = DVector::from_iterator(
        instance.dim(),
        (0..instance.dim()).map(|i| m1[i] * pinv_scalar(s1[i], thr)),
    );
    instance.basis().mul(&w1)
}

/// Second-phase fit given the stored parameter `w1`.
///
/// For `mu > 0` this solves the regularized normal equation
/// `(H2 + mu I) w = X2^T y2 / n + mu w1`. For `mu = 0` it returns the
/// minimum-deviation correction `w1 + pinv(X2^T X2) X2^T (y2 - X2 w1)`,
/// which is the limit of the regularized solution and keeps the tie-break
/// well defined when `H2` is singular.
pub fn fit_second(
    instance: &ProblemInstance,
    dataset: &Dataset,
    w1: &DVector<f64>,
    mu: f64,
) -> Result<DVector<f64>> {
    if mu < 0.0 {
        return Err(Error::NegativeMu(mu));
    }
    let m2 = instance.basis().transpose_mul(&dataset.moment(Task::Two));
    let w1_eig = instance.basis().transpose_mul(w1);
    let s2 = instance.spectrum(Task::Two);
    let thr = instance.zero_threshold();
    let w2 = DVector::from_iterator(
        instance.dim(),
        (0..instance.dim()).map(|i| {
            if mu > 0.0 {
                (m2[i] + mu * w1_eig[i]) / (s2[i] + mu)
            } else if s2[i] > thr {
                m2[i] / s2[i]
            } else {
                w1_eig[i]
            }
        }),
    );
    Ok(instance.basis().mul(&w2))
}

/// Runs both phases and packages the output.
pub fn fit_cl(instance: &ProblemInstance, dataset: &Dataset, mu: f64) -> Result<EstimatorOutput> {
    let w1 = fit_first(instance, dataset);
    let w2 = fit_second(instance, dataset, &w1, mu)?;
    Ok(EstimatorOutput { w1, w2, mu })
}

/// Minimum-norm least squares on the stacked two-task system.
pub fn fit_joint(instance: &ProblemInstance, dataset: &Dataset) -> DVector<f64> {
    let m1 = instance.basis().transpose_mul(&dataset.moment(Task::One));
    let m2 = instance.basis().transpose_mul(&dataset.moment(Task::Two));
    let s1 = instance.spectrum(Task::One);
    let s2 = instance.spectrum(Task::Two);
    let thr = instance.zero_threshold();
    let w = DVector::from_iterator(
        instance.dim(),
        (0..instance.dim())
            .map(|i| (m1[i] + m2[i]) * pinv_scalar(s1[i] + s2[i], thr)),
    );
    instance.basis().mul(&w)
}

/// Dense-matrix oracle path: the same estimators computed from raw design
/// matrices with no knowledge of the shared eigenbasis.
pub mod dense {
    use nalgebra::{DMatrix, DVector};

    use crate::error::{Error, Result};
    use crate::linalg::pinv_psd;

    /// Minimum-norm least squares `pinv(X^T X) X^T y` for an arbitrary design.
    pub fn min_norm_ols(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
        let gram = x.transpose() * x;
        pinv_psd(&gram) * (x.transpose() * y)
    }

    /// Second-phase fit from raw matrices; `mu = 0` falls back to the
    /// minimum-deviation correction.
    pub fn fit_second(
        x2: &DMatrix<f64>,
        y2: &DVector<f64>,
        w1: &DVector<f64>,
        mu: f64,
    ) -> Result<DVector<f64>> {
        if mu < 0.0 {
            return Err(Error::NegativeMu(mu));
        }
        let n = x2.nrows() as f64;
        if mu == 0.0 {
            let residual = y2 - x2 * w1;
            return Ok(w1 + min_norm_ols(x2, &residual));
        }
        let d = x2.ncols();
        let lhs = x2.transpose() * x2 / n + DMatrix::identity(d, d) * mu;
        let rhs = x2.transpose() * y2 / n + w1 * mu;
        let chol = lhs
            .cholesky()
            .expect("H2 + mu I is positive definite for mu > 0");
        Ok(chol.solve(&rhs))
    }

    /// Minimum-norm least squares on the row-stacked system.
    pub fn fit_joint(
        x1: &DMatrix<f64>,
        y1: &DVector<f64>,
        x2: &DMatrix<f64>,
        y2: &DVector<f64>,
    ) -> DVector<f64> {
        let mut x = DMatrix::zeros(x1.nrows() + x2.nrows(), x1.ncols());
        x.rows_mut(0, x1.nrows()).copy_from(x1);
        x.rows_mut(x1.nrows(), x2.nrows()).copy_from(x2);
        let mut y = DVector::zeros(y1.len() + y2.len());
        y.rows_mut(0, y1.len()).copy_from(y1);
        y.rows_mut(y1.len(), y2.len()).copy_from(y2);
        min_norm_ols(&x, &y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_design, sample_labels, NoiseLaw};
    use crate::problem::{make_instance, Basis, Spectrum};
    use nalgebra::DMatrix;
    use std::sync::Arc;

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

    fn noiseless(instance: &ProblemInstance, n: usize) -> Dataset {
        let design = Arc::new(build_design(instance, n).unwrap());
        sample_labels(&design, instance, NoiseLaw::Zero, 0)
    }

    #[test]
    fn full_rank_noiseless_recovery() {
        let inst = diag_instance(&[1.0, 0.5], &[0.5, 1.0], &[1.5, -2.0], 1.0);
        let ds = noiseless(&inst, 3);
        let w1 = fit_first(&inst, &ds);
        assert!((&w1 - inst.w_star()).norm() < 1e-12);
        for mu in [0.0, 0.3, 7.0] {
            let w2 = fit_second(&inst, &ds, &w1, mu).unwrap();
            assert!((&w2 - inst.w_star()).norm() < 1e-12, "mu={mu}");
        }
    }

    #[test]
    fn min_norm_zeroes_unseen_coordinate() {
        let inst = diag_instance(&[1.0, 0.0], &[1.0, 1.0], &[1.0, 1.0], 1.0);
        let ds = noiseless(&inst, 2);
        let w1 = fit_first(&inst, &ds);
        assert!((w1[0] - 1.0).abs() < 1e-14);
        assert_eq!(w1[1], 0.0);
    }

    #[test]
    fn dense_first_fit_solves_hand_system() {
        // 2x2 system solved by hand.
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 3.0]);
        let w = dense::min_norm_ols(&x, &y);
        assert!((w[0] - 1.0).abs() < 1e-12);
        assert!((w[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_ridge_first_order_condition() {
        // d=1, n=1, X2=(1), y2=(2), w1=0, mu=1 -> w2 = 2/(1+1) = 1.
        let x2 = DMatrix::from_row_slice(1, 1, &[1.0]);
        let y2 = DVector::from_vec(vec![2.0]);
        let w1 = DVector::from_vec(vec![0.0]);
        let w2 = dense::fit_second(&x2, &y2, &w1, 1.0).unwrap();
        assert!((w2[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn huge_mu_pins_output_to_memory() {
        let inst = diag_instance(&[1.0, 0.5], &[0.5, 1.0], &[1.0, 1.0], 1.0);
        let design = Arc::new(build_design(&inst, 4).unwrap());
        let ds = sample_labels(&design, &inst, NoiseLaw::Gaussian, 11);
        let w1 = fit_first(&inst, &ds);
        let w2 = fit_second(&inst, &ds, &w1, 1e8).unwrap();
        let scale = 1.0 + w1.norm() + ds.moment(Task::Two).norm();
        assert!((&w2 - &w1).norm() <= 1e-6 * scale);
    }

    #[test]
    fn mu_zero_is_limit_of_small_mu() {
        let inst = diag_instance(&[1.0, 0.7], &[0.6, 1.2], &[1.0, -1.0], 1.0);
        let design = Arc::new(build_design(&inst, 4).unwrap());
        let ds = sample_labels(&design, &inst, NoiseLaw::Gaussian, 5);
        let w1 = fit_first(&inst, &ds);
        let a = fit_second(&inst, &ds, &w1, 1e-10).unwrap();
        let b = fit_second(&inst, &ds, &w1, 0.0).unwrap();
        assert!((a - b).norm() < 1e-6);
    }

    #[test]
    fn pull_toward_memory_is_monotone_in_mu() {
        let inst = diag_instance(&[1.0, 0.4, 0.0], &[0.3, 1.1, 0.8], &[1.0, 2.0, -1.0], 2.0);
        let design = Arc::new(build_design(&inst, 5).unwrap());
        let ds = sample_labels(&design, &inst, NoiseLaw::Gaussian, 21);
        let w1 = fit_first(&inst, &ds);
        let mut last = f64::INFINITY;
        for mu in [0.0, 1e-3, 1e-2, 0.1, 1.0, 10.0, 1e3] {
            let dist = (fit_second(&inst, &ds, &w1, mu).unwrap() - &w1).norm();
            assert!(dist <= last + 1e-12, "mu={mu}: {dist} > {last}");
            last = dist;
        }
    }

    #[test]
    fn joint_recovers_from_complementary_tasks() {
        let inst = diag_instance(&[1.0, 0.0], &[0.0, 1.0], &[3.0, 4.0], 1.0);
        let ds = noiseless(&inst, 2);
        let w = fit_joint(&inst, &ds);
        assert!((&w - inst.w_star()).norm() < 1e-12);
    }

    #[test]
    fn joint_on_duplicated_data_equals_first_fit() {
        let inst = diag_instance(&[1.0, 0.5], &[1.0, 0.5], &[1.0, -1.0], 1.0);
        let design = Arc::new(build_design(&inst, 3).unwrap());
        let mut ds = sample_labels(&design, &inst, NoiseLaw::Gaussian, 2);
        ds.y2 = ds.y1.clone();
        let w1 = fit_first(&inst, &ds);
        let wj = fit_joint(&inst, &ds);
        assert!((w1 - wj).norm() < 1e-12);
    }

    #[test]
    fn negative_mu_rejected() {
        let inst = diag_instance(&[1.0], &[1.0], &[1.0], 1.0);
        let ds = noiseless(&inst, 1);
        let w1 = fit_first(&inst, &ds);
        assert!(matches!(
            fit_second(&inst, &ds, &w1, -0.1),
            Err(Error::NegativeMu(_))
        ));
    }

    #[test]
    fn first_fit_stays_in_row_space() {
        let inst = diag_instance(&[1.0, 0.0, 0.6, 0.0], &[1.0; 4], &[1.0, 2.0, 3.0, 4.0], 1.0);
        let design = Arc::new(build_design(&inst, 4).unwrap());
        let ds = sample_labels(&design, &inst, NoiseLaw::Gaussian, 13);
        let w1 = fit_first(&inst, &ds);
        // Null space of X1 is spanned by the zero-eigenvalue directions.
        assert!(w1[1].abs() < 1e-8 && w1[3].abs() < 1e-8);
    }
}
