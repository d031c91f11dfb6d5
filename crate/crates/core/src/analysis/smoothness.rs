use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::quadrature::{tilted_moments_quadrature, BoxedObjective, QuadratureOptions};
use crate::error::{check_len, Error, Result};
use crate::linalg::{check_psd, lambda_min, sym_inv_sqrt, sym_spectral_norm, symmetrize};
use crate::sampling::GaussianPolicy;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothnessMethod {
    ClosedFormQuadratic,
    DiameterBound,
    NumericHessian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothnessEstimate<T> {
    pub l_sigma: T,
    pub method: SmoothnessMethod,
}

/// `L_Σ = ‖I − Σ^{-1/2}(Σ⁻¹ + Q/τ)⁻¹Σ^{-1/2}‖` for `f0 = ½uᵀQu + cᵀu`
/// without truncation, through a symmetric eigendecomposition.
pub fn l_sigma_quadratic<T: Real>(sigma: &DMatrix<T>, q: &DMatrix<T>, tau: T) -> Result<SmoothnessEstimate<T>> {
    let n = sigma.nrows();
    check_len("Σ cols", n, sigma.ncols())?;
    check_len("Q rows", n, q.nrows())?;
    check_len("Q cols", n, q.ncols())?;
    check_psd("Q", q, T::lit(1e-10))?;
    if !(tau > T::zero()) {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("Σ"))?;
    let precision = symmetrize(&(chol.solve(&DMatrix::identity(n, n)) + q / tau));
    let cov = symmetrize(
        &precision
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("tilted precision"))?
            .solve(&DMatrix::identity(n, n)),
    );
    let w = sym_inv_sqrt(sigma)?;
    let m = symmetrize(&(DMatrix::identity(n, n) - &w * cov * &w));
    Ok(SmoothnessEstimate {
        l_sigma: sym_spectral_norm(&m),
        method: SmoothnessMethod::ClosedFormQuadratic,
    })
}

/// Scalar-covariance form `1 − τ/(τ + σ²λ_max(Q))`.
pub fn l_sigma_quadratic_scalar<T: Real>(sigma2: T, lambda_max_q: T, tau: T) -> T {
    T::one() - tau / (tau + sigma2 * lambda_max_q)
}

/// `max_μ |1 − Var_ρμ(u)/σ²|` over a grid of means, for a 1-D objective with
/// truncation by its box. Variances come from quadrature.
pub fn l_sigma_numeric<T: Real, O: BoxedObjective<T> + ?Sized>(
    objective: &O,
    sigma2: T,
    tau: T,
    mu_grid: &[T],
    options: &QuadratureOptions<T>,
) -> Result<SmoothnessEstimate<T>> {
    if objective.dim() != 1 {
        return Err(Error::Unsupported("numeric L_Σ is one-dimensional".into()));
    }
    if mu_grid.is_empty() {
        return Err(Error::InvalidArgument("empty mean grid".into()));
    }
    let mut worst = T::zero();
    for mu in mu_grid {
        let policy = GaussianPolicy::isotropic(DVector::from_element(1, *mu), sigma2, tau)?;
        let m = tilted_moments_quadrature(objective, &policy, options)?;
        worst = worst.max((T::one() - m.covariance[(0, 0)] / sigma2).abs());
    }
    Ok(SmoothnessEstimate {
        l_sigma: worst,
        method: SmoothnessMethod::NumericHessian,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiameterRoute {
    /// Diagonal `Σ`: `D² = Σ_i (u_i − l_i)²/Σ_ii`, exact.
    DiagonalExact,
    /// Dense `Σ`: `D² ≤ D_2²/λ_min(Σ)`.
    DenseEigenBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiameterBound<T> {
    /// `D²_{Σ⁻¹}` (or its upper bound on the dense route).
    pub d2: T,
    /// Euclidean `D²` of the box.
    pub euclidean_d2: T,
    pub estimate: SmoothnessEstimate<T>,
    /// `D²_{Σ⁻¹} < 12`, so `η = 1` is admissible.
    pub unit_step_admissible: bool,
    /// `λ_min(Σ) ≥ D²/12`.
    pub covariance_rule: bool,
    pub route: DiameterRoute,
}

/// `max{1, D²/4 − 1}`.
pub fn diameter_bound_value<T: Real>(d2: T) -> T {
    T::one().max(d2 / T::lit(4.0) - T::one())
}

pub fn l_sigma_diameter_bound<T: Real>(
    sigma: &DMatrix<T>,
    lower: &DVector<T>,
    upper: &DVector<T>,
) -> Result<DiameterBound<T>> {
    let n = sigma.nrows();
    check_len("Σ cols", n, sigma.ncols())?;
    check_len("lower bound", n, lower.len())?;
    check_len("upper bound", n, upper.len())?;
    if lower.iter().chain(upper.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("feasible box is unbounded".into()));
    }
    if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
        return Err(Error::InvalidArgument("box bounds are not ordered".into()));
    }
    if sigma.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("Σ"));
    }
    let widths = upper - lower;
    let euclidean_d2 = widths.norm_squared();
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || sigma[(i, j)] == T::zero()));
    let lmin = lambda_min(sigma);
    let (d2, route) = if diagonal {
        let d2 = (0..n).fold(T::zero(), |a, i| a + widths[i] * widths[i] / sigma[(i, i)]);
        (d2, DiameterRoute::DiagonalExact)
    } else {
        (euclidean_d2 / lmin, DiameterRoute::DenseEigenBound)
    };
    Ok(DiameterBound {
        d2,
        euclidean_d2,
        estimate: SmoothnessEstimate {
            l_sigma: diameter_bound_value(d2),
            method: SmoothnessMethod::DiameterBound,
        },
        unit_step_admissible: d2 < T::lit(12.0),
        covariance_rule: lmin >= euclidean_d2 / T::lit(12.0),
        route,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoPointMax<T> {
    pub variance: T,
    /// Support points and the mass on `b`.
    pub a: T,
    pub b: T,
    pub p: T,
}

/// Brute-force maximum of `p(1 − p)(b − a)²` over two-point laws on
/// `[0, D]`, with `a`, `b` and `p` on uniform grids of `resolution + 1` points.
pub fn two_point_variance_max<T: Real>(d: T, resolution: usize) -> Result<TwoPointMax<T>> {
    if !(d > T::zero()) || resolution < 2 {
        return Err(Error::InvalidArgument("need D > 0 and resolution ≥ 2".into()));
    }
    let r = T::from_usize_lossy(resolution);
    let mut best = TwoPointMax {
        variance: T::zero(),
        a: T::zero(),
        b: T::zero(),
        p: T::zero(),
    };
    for i in 0..=resolution {
        let a = d * T::from_usize_lossy(i) / r;
        for j in i..=resolution {
            let b = d * T::from_usize_lossy(j) / r;
            let gap2 = (b - a) * (b - a);
            for k in 0..=resolution {
                let p = T::from_usize_lossy(k) / r;
                let v = p * (T::one() - p) * gap2;
                if v > best.variance {
                    best = TwoPointMax { variance: v, a, b, p };
                }
            }
        }
    }
    Ok(best)
}
