use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::linalg::{check_psd, sym_inv_sqrt, sym_sqrt, symmetrize};
use crate::optimizer::ExactOracle;
use crate::sampling::GaussianPolicy;
use crate::scalar::Real;

/// Gibbs tilt of `N(μ, Σ)` by `exp(−(½uᵀQu + cᵀu)/τ)` without truncation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TiltedGaussian<T: Real> {
    /// `Λ = Σ⁻¹ + Q/τ`.
    pub precision: DMatrix<T>,
    /// `m = Λ⁻¹(Σ⁻¹μ − c/τ)`.
    pub mean: DVector<T>,
    /// `Λ⁻¹`, independent of `μ`.
    pub covariance: DMatrix<T>,
}

fn check_quadratic<T: Real>(policy: &GaussianPolicy<T>, q: &DMatrix<T>, c: &DVector<T>) -> Result<()> {
    let n = policy.dim();
    check_len("Q rows", n, q.nrows())?;
    check_len("Q cols", n, q.ncols())?;
    check_len("c", n, c.len())?;
    check_psd("Q", q, T::lit(1e-10))
}

fn precision_matrix<T: Real>(policy: &GaussianPolicy<T>) -> DMatrix<T> {
    let n = policy.dim();
    symmetrize(&policy.covariance().clone().cholesky().expect("policy covariance is SPD").solve(&DMatrix::identity(n, n)))
}

pub fn tilted_moments_quadratic<T: Real>(
    policy: &GaussianPolicy<T>,
    q: &DMatrix<T>,
    c: &DVector<T>,
) -> Result<TiltedGaussian<T>> {
    check_quadratic(policy, q, c)?;
    let tau = policy.tau();
    let precision = symmetrize(&(precision_matrix(policy) + q / tau));
    let chol = precision
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("tilted precision"))?;
    let h = policy.precision_times(policy.mean()) - c / tau;
    let n = policy.dim();
    Ok(TiltedGaussian {
        mean: chol.solve(&h),
        covariance: symmetrize(&chol.solve(&DMatrix::identity(n, n))),
        precision,
    })
}

/// `F(μ) = −τ log ∫ N(u; μ, Σ) exp(−(½uᵀQu + cᵀu)/τ) du` over `ℝⁿ`:
/// `(τ/2)(log|ΣΛ| − hᵀΛ⁻¹h + μᵀΣ⁻¹μ)` with `h = Σ⁻¹μ − c/τ`.
pub fn free_energy_quadratic<T: Real>(policy: &GaussianPolicy<T>, q: &DMatrix<T>, c: &DVector<T>) -> Result<T> {
    check_quadratic(policy, q, c)?;
    let tau = policy.tau();
    let mu = policy.mean();
    let sinv_mu = policy.precision_times(mu);
    let h = &sinv_mu - c / tau;
    let s = sym_sqrt(policy.covariance())?;
    // ΣΛ = I + ΣQ/τ is similar to I + Σ^{1/2}QΣ^{1/2}/τ.
    let n = policy.dim();
    let m = symmetrize(&(DMatrix::identity(n, n) + &s * q * &s / tau));
    let chol_m = m.cholesky().ok_or(Error::NotPositiveDefinite("I + Σ^{1/2}QΣ^{1/2}/τ"))?;
    let log_det = chol_m.l_dirty().diagonal().iter().fold(T::zero(), |a, d| a + d.ln()) * T::lit(2.0);
    let tilt = tilted_moments_quadratic(policy, q, c)?;
    let quad = h.dot(&tilt.mean);
    Ok((log_det - quad + mu.dot(&sinv_mu)) * tau * T::lit(0.5))
}

/// Hessian of the free energy in the mean together with its `Σ/τ`
/// preconditioned form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeEnergyHessian<T: Real> {
    /// `τΣ⁻¹ − τΣ⁻¹ Cov Σ⁻¹`.
    pub hessian: DMatrix<T>,
    /// `(Σ/τ)^{1/2} ∇²F (Σ/τ)^{1/2}`.
    pub preconditioned: DMatrix<T>,
}

pub fn hessian_f_gaussian<T: Real>(policy: &GaussianPolicy<T>, cov_tilt: &DMatrix<T>) -> Result<FreeEnergyHessian<T>> {
    let n = policy.dim();
    check_len("tilt covariance rows", n, cov_tilt.nrows())?;
    check_len("tilt covariance cols", n, cov_tilt.ncols())?;
    let tau = policy.tau();
    let sinv = precision_matrix(policy);
    let hessian = symmetrize(&((&sinv - &sinv * cov_tilt * &sinv) * tau));
    let p_half = sym_sqrt(&(policy.covariance() / tau))?;
    let preconditioned = symmetrize(&(&p_half * &hessian * &p_half));
    Ok(FreeEnergyHessian {
        hessian,
        preconditioned,
    })
}

/// `I − Σ^{-1/2} Cov Σ^{-1/2}`, computed without `τ`.
pub fn preconditioned_hessian_direct<T: Real>(sigma: &DMatrix<T>, cov_tilt: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_len("tilt covariance rows", sigma.nrows(), cov_tilt.nrows())?;
    check_len("tilt covariance cols", sigma.ncols(), cov_tilt.ncols())?;
    let w = sym_inv_sqrt(sigma)?;
    let n = sigma.nrows();
    Ok(symmetrize(&(DMatrix::identity(n, n) - &w * cov_tilt * &w)))
}

/// Closed-form oracle for an unconstrained quadratic objective.
#[derive(Debug, Clone)]
pub struct QuadraticOracle<T: Real> {
    pub q: DMatrix<T>,
    pub c: DVector<T>,
}

impl<T: Real> QuadraticOracle<T> {
    pub fn new(q: DMatrix<T>, c: DVector<T>) -> Self {
        Self { q, c }
    }

    /// `∇F(μ) = −τΣ⁻¹(m − μ)`.
    pub fn gradient(&self, policy: &GaussianPolicy<T>) -> Result<DVector<T>> {
        let m = tilted_moments_quadratic(policy, &self.q, &self.c)?.mean;
        Ok(policy.precision_times(&(m - policy.mean())) * (-policy.tau()))
    }
}

impl<T: Real> ExactOracle<T> for QuadraticOracle<T> {
    fn tilted_mean(&self, policy: &GaussianPolicy<T>) -> Result<DVector<T>> {
        Ok(tilted_moments_quadratic(policy, &self.q, &self.c)?.mean)
    }

    fn free_energy(&self, policy: &GaussianPolicy<T>) -> Result<T> {
        free_energy_quadratic(policy, &self.q, &self.c)
    }
}
