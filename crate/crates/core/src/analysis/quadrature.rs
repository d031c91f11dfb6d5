use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::optimizer::ExactOracle;
use crate::problems::QuadraticProblem;
use crate::sampling::GaussianPolicy;
use crate::scalar::Real;

/// An objective `f0` with a box feasible set, evaluable pointwise.
pub trait BoxedObjective<T: Real>: Sync {
    fn dim(&self) -> usize;
    /// Lower box corner; entries may be `−∞`.
    fn lower(&self) -> DVector<T>;
    /// Upper box corner; entries may be `+∞`.
    fn upper(&self) -> DVector<T>;
    fn cost(&self, u: &[T]) -> T;
}

impl<T: Real> BoxedObjective<T> for QuadraticProblem<T> {
    fn dim(&self) -> usize {
        QuadraticProblem::dim(self)
    }

    fn lower(&self) -> DVector<T> {
        QuadraticProblem::lower(self).clone()
    }

    fn upper(&self) -> DVector<T> {
        QuadraticProblem::upper(self).clone()
    }

    fn cost(&self, u: &[T]) -> T {
        self.value(u)
    }
}

/// Closure-backed [`BoxedObjective`].
pub struct FnObjective<T: Real, F> {
    lower: DVector<T>,
    upper: DVector<T>,
    f: F,
}

impl<T: Real, F: Fn(&[T]) -> T + Sync> FnObjective<T, F> {
    pub fn new(lower: DVector<T>, upper: DVector<T>, f: F) -> Result<Self> {
        check_len("upper bound", lower.len(), upper.len())?;
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidArgument("box bounds must satisfy lower < upper".into()));
        }
        Ok(Self { lower, upper, f })
    }
}

impl<T: Real, F: Fn(&[T]) -> T + Sync> BoxedObjective<T> for FnObjective<T, F> {
    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn lower(&self) -> DVector<T> {
        self.lower.clone()
    }

    fn upper(&self) -> DVector<T> {
        self.upper.clone()
    }

    fn cost(&self, u: &[T]) -> T {
        (self.f)(u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureOptions<T> {
    /// Successive refinements must agree to `tol` (relative, see
    /// [`tilted_moments_quadrature`]) twice in a row.
    pub tol: T,
    /// First level tried: `2^min_level` intervals per axis.
    pub min_level: u32,
    pub max_level_1d: u32,
    pub max_level_2d: u32,
    /// Unbounded box sides are clipped to `μ ± window_sigmas·σ`.
    pub window_sigmas: T,
}

impl<T: Real> Default for QuadratureOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-8),
            min_level: 4,
            max_level_1d: 20,
            max_level_2d: 11,
            window_sigmas: T::lit(40.0),
        }
    }
}

impl<T: Real> QuadratureOptions<T> {
    pub fn with_tol(tol: T) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

/// Tilted statistics over `C` by composite Simpson quadrature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureMoments<T: Real> {
    /// `log ∫_C N(u; μ, Σ) exp(−f0(u)/τ) du`.
    pub log_z: T,
    pub free_energy: T,
    pub mean: DVector<T>,
    pub covariance: DMatrix<T>,
    pub intervals_per_axis: usize,
}

/// Unnormalised log-density evaluated on grid nodes.
type LogDensity<'a, T> = &'a (dyn Fn(&[T]) -> T + Sync);

struct Domain<T> {
    lo: Vec<T>,
    hi: Vec<T>,
}

fn domain<T: Real, O: BoxedObjective<T> + ?Sized>(
    objective: &O,
    policy: &GaussianPolicy<T>,
    window: T,
) -> Result<Domain<T>> {
    let (lower, upper) = (objective.lower(), objective.upper());
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for i in 0..objective.dim() {
        let s = policy.covariance()[(i, i)].sqrt();
        let (wl, wh) = (policy.mean()[i] - s * window, policy.mean()[i] + s * window);
        let (mut a, mut b) = (lower[i].max(wl), upper[i].min(wh));
        if !(a < b) {
            // The box lies outside the window; integrate over the box itself.
            a = lower[i];
            b = upper[i];
        }
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidArgument("integration domain is unbounded".into()));
        }
        lo.push(a);
        hi.push(b);
    }
    Ok(Domain { lo, hi })
}

fn simpson_weights<T: Real>(a: T, b: T, n: usize) -> (Vec<T>, Vec<T>) {
    let h = (b - a) / T::from_usize_lossy(n);
    let third = h / T::lit(3.0);
    let nodes = (0..=n).map(|i| a + h * T::from_usize_lossy(i)).collect();
    let weights = (0..=n)
        .map(|i| {
            if i == 0 || i == n {
                third
            } else if i % 2 == 1 {
                third * T::lit(4.0)
            } else {
                third * T::lit(2.0)
            }
        })
        .collect();
    (nodes, weights)
}

/// Nodes, log Simpson weights and log integrand values on a tensor grid.
struct Grid<T> {
    points: Vec<Vec<T>>,
    log_terms: Vec<T>,
}

fn grid<T: Real, O: BoxedObjective<T> + ?Sized>(
    objective: &O,
    policy: &GaussianPolicy<T>,
    dom: &Domain<T>,
    n: usize,
    log_rho: Option<LogDensity<'_, T>>,
) -> Grid<T> {
    let axes: Vec<(Vec<T>, Vec<T>)> = (0..dom.lo.len())
        .map(|i| simpson_weights(dom.lo[i], dom.hi[i], n))
        .collect();
    let mut index: Vec<(Vec<T>, T)> = vec![(Vec::new(), T::zero())];
    for (nodes, weights) in &axes {
        index = index
            .into_iter()
            .flat_map(|(p, lw)| {
                nodes.iter().zip(weights.iter()).map(move |(x, w)| {
                    let mut q = p.clone();
                    q.push(*x);
                    (q, lw + w.ln())
                })
            })
            .collect();
    }
    let log_terms = index
        .par_iter()
        .map(|(p, lw)| {
            let l = match log_rho {
                Some(f) => f(p),
                None => log_tilt(objective, policy, p),
            };
            *lw + l
        })
        .collect();
    Grid {
        points: index.into_iter().map(|(p, _)| p).collect(),
        log_terms,
    }
}

fn log_tilt<T: Real, O: BoxedObjective<T> + ?Sized>(objective: &O, policy: &GaussianPolicy<T>, u: &[T]) -> T {
    let v = DVector::from_column_slice(u);
    policy.log_density(&v).expect("dimension checked") - objective.cost(u) / policy.tau()
}

fn log_sum_exp<T: Real>(values: &[T]) -> T {
    let m = values.iter().fold(T::lit(f64::NEG_INFINITY), |a, v| a.max(*v));
    if !m.is_finite() {
        return m;
    }
    m + values.iter().fold(T::zero(), |a, v| a + (*v - m).exp()).ln()
}

fn moments_at<T: Real, O: BoxedObjective<T> + ?Sized>(
    objective: &O,
    policy: &GaussianPolicy<T>,
    dom: &Domain<T>,
    n: usize,
) -> Result<QuadratureMoments<T>> {
    let g = grid(objective, policy, dom, n, None);
    let log_z = log_sum_exp(&g.log_terms);
    if !log_z.is_finite() {
        return Err(Error::Infeasible("tilted mass vanishes on the grid".into()));
    }
    let d = dom.lo.len();
    let probs: Vec<T> = g.log_terms.iter().map(|l| (*l - log_z).exp()).collect();
    let mut mean = DVector::zeros(d);
    for (p, w) in g.points.iter().zip(probs.iter()) {
        for i in 0..d {
            mean[i] += *w * p[i];
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for (p, w) in g.points.iter().zip(probs.iter()) {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += *w * (p[i] - mean[i]) * (p[j] - mean[j]);
            }
        }
    }
    Ok(QuadratureMoments {
        log_z,
        free_energy: -policy.tau() * log_z,
        mean,
        covariance: cov,
        intervals_per_axis: n,
    })
}

fn check_dims<T: Real, O: BoxedObjective<T> + ?Sized>(objective: &O, policy: &GaussianPolicy<T>) -> Result<()> {
    check_len("policy mean", objective.dim(), policy.dim())?;
    if objective.dim() == 0 || objective.dim() > 2 {
        return Err(Error::Unsupported(format!(
            "quadrature handles dimension 1 or 2, got {}",
            objective.dim()
        )));
    }
    Ok(())
}

/// Mean and covariance of the truncated tilt and `F(μ)`, refined
/// dyadically until `|ΔF| ≤ tol(1 + |F|)`, `‖Δm‖∞ ≤ tol(‖m‖∞ + σ_max)` and
/// `‖ΔCov‖∞ ≤ tol·‖Σ‖∞` hold on two consecutive refinements.
pub fn tilted_moments_quadrature<T: Real, O: BoxedObjective<T> + ?Sized>(
    objective: &O,
    policy: &GaussianPolicy<T>,
    options: &QuadratureOptions<T>,
) -> Result<QuadratureMoments<T>> {
    check_dims(objective, policy)?;
    let dom = domain(objective, policy, options.window_sigmas)?;
    let max_level = if objective.dim() == 1 {
        options.max_level_1d
    } else {
        options.max_level_2d
    };
    let sigma_scale = policy.covariance().amax();
    let tol = options.tol;
    let mut prev = moments_at(objective, policy, &dom, 1 << options.min_level)?;
    let mut streak = 0;
    let mut last_change = T::lit(f64::INFINITY);
    for level in options.min_level + 1..=max_level {
        let cur = moments_at(objective, policy, &dom, 1 << level)?;
        let df = (cur.free_energy - prev.free_energy).abs() / (T::one() + cur.free_energy.abs());
        let dm = (&cur.mean - &prev.mean).amax() / (cur.mean.amax() + sigma_scale.sqrt());
        let dc = (&cur.covariance - &prev.covariance).amax() / sigma_scale;
        last_change = df.max(dm).max(dc);
        streak = if last_change <= tol { streak + 1 } else { 0 };
        prev = cur;
        if streak >= 2 {
            return Ok(prev);
        }
    }
    Err(Error::NotConverged {
        iterations: 1 << max_level,
        residual: last_change.as_f64(),
        best: vec![prev.free_energy.as_f64()],
    })
}

/// `F(μ) = −τ log ∫_C N(u; μ, Σ) exp(−f0(u)/τ) du` by quadrature.
pub fn free_energy_quadrature<T: Real, O: BoxedObjective<T> + ?Sized>(
    objective: &O,
    policy: &GaussianPolicy<T>,
    options: &QuadratureOptions<T>,
) -> Result<T> {
    Ok(tilted_moments_quadrature(objective, policy, options)?.free_energy)
}

/// Exact-mode oracle backed by quadrature; dimension 1 or 2 only.
pub struct QuadratureOracle<'a, T: Real, O: BoxedObjective<T> + ?Sized> {
    pub objective: &'a O,
    pub options: QuadratureOptions<T>,
}

impl<'a, T: Real, O: BoxedObjective<T> + ?Sized> QuadratureOracle<'a, T, O> {
    pub fn new(objective: &'a O, options: QuadratureOptions<T>) -> Self {
        Self { objective, options }
    }
}

impl<T: Real, O: BoxedObjective<T> + ?Sized> ExactOracle<T> for QuadratureOracle<'_, T, O> {
    fn tilted_mean(&self, policy: &GaussianPolicy<T>) -> Result<DVector<T>> {
        Ok(tilted_moments_quadrature(self.objective, policy, &self.options)?.mean)
    }

    fn free_energy(&self, policy: &GaussianPolicy<T>) -> Result<T> {
        free_energy_quadrature(self.objective, policy, &self.options)
    }
}

/// Candidate `ρ` for the variational identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoSpec<T> {
    /// The Gibbs tilt `ρ* ∝ π exp(−f0/τ) 1_C`.
    Tilt,
    /// `π` restricted to `C` and renormalised.
    RestrictedBase,
    /// `N(mean, std²)` restricted to `C` and renormalised.
    ShiftedGaussian { mean: T, std: T },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GibbsResidual<T> {
    /// `E_ρ[f0] + τ KL(ρ‖π)`.
    pub lhs: T,
    /// `−τ log Z + τ KL(ρ‖ρ*)`.
    pub rhs: T,
    pub residual: T,
    pub intervals: usize,
}

struct GibbsSides<T> {
    lhs: T,
    rhs: T,
}

fn gibbs_sides<T: Real, O: BoxedObjective<T> + ?Sized>(
    objective: &O,
    policy: &GaussianPolicy<T>,
    rho: RhoSpec<T>,
    dom: &Domain<T>,
    n: usize,
) -> Result<GibbsSides<T>> {
    let tau = policy.tau();
    let (nodes, weights) = simpson_weights(dom.lo[0], dom.hi[0], n);
    let log_pi: Vec<T> = nodes
        .iter()
        .map(|u| policy.log_density(&DVector::from_element(1, *u)).expect("1-D"))
        .collect();
    let f0: Vec<T> = nodes.iter().map(|u| objective.cost(&[*u])).collect();
    let log_w: Vec<T> = weights.iter().map(|w| w.ln()).collect();
    let tilt: Vec<T> = (0..=n).map(|i| log_pi[i] - f0[i] / tau).collect();
    let with_w = |v: &[T]| -> Vec<T> { v.iter().zip(log_w.iter()).map(|(a, b)| *a + *b).collect() };
    let log_z = log_sum_exp(&with_w(&tilt));
    let raw_rho: Vec<T> = match rho {
        RhoSpec::Tilt => tilt.clone(),
        RhoSpec::RestrictedBase => log_pi.clone(),
        RhoSpec::ShiftedGaussian { mean, std } => {
            if !(std > T::zero()) {
                return Err(Error::InvalidArgument("shifted Gaussian needs a positive std".into()));
            }
            nodes
                .iter()
                .map(|u| {
                    let z = (*u - mean) / std;
                    -z * z * T::lit(0.5)
                })
                .collect()
        }
    };
    let log_norm = log_sum_exp(&with_w(&raw_rho));
    if !log_norm.is_finite() || !log_z.is_finite() {
        return Err(Error::InvalidArgument(
            "ρ or the tilt has no mass on the grid".into(),
        ));
    }
    let mut e_f0 = T::zero();
    let mut kl_pi = T::zero();
    let mut kl_star = T::zero();
    for i in 0..=n {
        let lr = raw_rho[i] - log_norm;
        let mass = (lr + log_w[i]).exp();
        if mass == T::zero() {
            continue;
        }
        e_f0 += mass * f0[i];
        kl_pi += mass * (lr - log_pi[i]);
        kl_star += mass * (lr - (tilt[i] - log_z));
    }
    Ok(GibbsSides {
        lhs: e_f0 + tau * kl_pi,
        rhs: -tau * log_z + tau * kl_star,
    })
}

/// Evaluates both sides of
/// `E_ρ[f0] + τKL(ρ‖π) = −τ log Z + τKL(ρ‖ρ*)` by quadrature over a bounded
/// 1-D box, each refined until it changes by at most `tol(1 + |side|)`.
pub fn gibbs_identity_check<T: Real, O: BoxedObjective<T> + ?Sized>(
    objective: &O,
    policy: &GaussianPolicy<T>,
    rho: RhoSpec<T>,
    options: &QuadratureOptions<T>,
) -> Result<GibbsResidual<T>> {
    check_len("policy mean", objective.dim(), policy.dim())?;
    if objective.dim() != 1 {
        return Err(Error::Unsupported("the identity check is one-dimensional".into()));
    }
    let (lo, hi) = (objective.lower()[0], objective.upper()[0]);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument("the identity check needs a bounded box".into()));
    }
    let dom = Domain { lo: vec![lo], hi: vec![hi] };
    let mut prev = gibbs_sides(objective, policy, rho, &dom, 1 << options.min_level)?;
    let mut streak = 0;
    for level in options.min_level + 1..=options.max_level_1d {
        let n = 1usize << level;
        let cur = gibbs_sides(objective, policy, rho, &dom, n)?;
        let dl = (cur.lhs - prev.lhs).abs() / (T::one() + cur.lhs.abs());
        let dr = (cur.rhs - prev.rhs).abs() / (T::one() + cur.rhs.abs());
        streak = if dl.max(dr) <= options.tol { streak + 1 } else { 0 };
        prev = cur;
        if streak >= 2 {
            return Ok(GibbsResidual {
                lhs: prev.lhs,
                rhs: prev.rhs,
                residual: (prev.lhs - prev.rhs).abs(),
                intervals: n,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: 1 << options.max_level_1d,
        residual: (prev.lhs - prev.rhs).abs().as_f64(),
        best: vec![prev.lhs.as_f64(), prev.rhs.as_f64()],
    })
}
