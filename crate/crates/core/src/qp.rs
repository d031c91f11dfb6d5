//! Convex QP lifting of the constrained LQR problem and a self-contained
//! reference solver used as the optimality-gap oracle.
//!
//! Problem form:
//! `min ½ uᵀQu + cᵀu  s.t.  lower <= u <= upper,  a_lower <= A u <= a_upper`.
//! Bounds may be infinite.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::linalg::{block_diag, check_psd, inf_norm, lambda_max, spectral_norm_sq};
use crate::problems::LqrSpec;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpProblem<T: Real> {
    pub q: DMatrix<T>,
    pub c: DVector<T>,
    pub lower: DVector<T>,
    pub upper: DVector<T>,
    pub a: DMatrix<T>,
    pub a_lower: DVector<T>,
    pub a_upper: DVector<T>,
    /// Constant dropped from the objective; `objective + constant` recovers
    /// the original cost when the QP comes from [`lift`].
    pub constant: T,
}

impl<T: Real> QpProblem<T> {
    pub fn new(
        q: DMatrix<T>,
        c: DVector<T>,
        lower: DVector<T>,
        upper: DVector<T>,
        a: DMatrix<T>,
        a_lower: DVector<T>,
        a_upper: DVector<T>,
    ) -> Result<Self> {
        let qp = Self {
            q,
            c,
            lower,
            upper,
            a,
            a_lower,
            a_upper,
            constant: T::zero(),
        };
        qp.validate()?;
        Ok(qp)
    }

    /// Box constraints only.
    pub fn boxed(q: DMatrix<T>, c: DVector<T>, lower: DVector<T>, upper: DVector<T>) -> Result<Self> {
        let n = c.len();
        Self::new(
            q,
            c,
            lower,
            upper,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DVector::zeros(0),
        )
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        check_len("Q rows", n, self.q.nrows())?;
        check_len("Q cols", n, self.q.ncols())?;
        check_len("lower", n, self.lower.len())?;
        check_len("upper", n, self.upper.len())?;
        check_len("A cols", n, self.a.ncols())?;
        check_len("a_lower", self.a.nrows(), self.a_lower.len())?;
        check_len("a_upper", self.a.nrows(), self.a_upper.len())?;
        check_psd("Q_qp", &self.q, T::lit(1e-8))?;
        let ordered = self.lower.iter().zip(self.upper.iter()).all(|(l, h)| l <= h)
            && self.a_lower.iter().zip(self.a_upper.iter()).all(|(l, h)| l <= h);
        if !ordered {
            return Err(Error::Infeasible("a lower bound exceeds its upper bound".into()));
        }
        Ok(())
    }

    /// `½ uᵀQu + cᵀu` (without [`Self::constant`]).
    pub fn objective(&self, u: &DVector<T>) -> T {
        (u.transpose() * &self.q * u)[(0, 0)] * T::lit(0.5) + self.c.dot(u)
    }

    /// Largest constraint violation in the ∞-norm.
    pub fn violation(&self, u: &DVector<T>) -> T {
        let box_viol = box_distance(u, &self.lower, &self.upper);
        let au = &self.a * u;
        box_viol.max(box_distance(&au, &self.a_lower, &self.a_upper))
    }

    /// Same constraints, objective `½‖u − v‖²`.
    pub fn projection_problem(&self, v: &DVector<T>) -> Self {
        let n = self.dim();
        Self {
            q: DMatrix::identity(n, n),
            c: -v,
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            a: self.a.clone(),
            a_lower: self.a_lower.clone(),
            a_upper: self.a_upper.clone(),
            constant: T::zero(),
        }
    }
}

/// The QP together with the pieces of the LQR lift `x = M u + b`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LqrLift<T: Real> {
    pub qp: QpProblem<T>,
    pub m: DMatrix<T>,
    pub b: DVector<T>,
    pub q_bar: DMatrix<T>,
    pub r_bar: DMatrix<T>,
}

/// Lifts the LQR problem to a QP over the stacked controls `u_0..u_{T-1}`.
///
/// States `x_1..x_T` are stacked as `x = M u + b` with
/// `M[t, j] = A^{t-j-1} B` (block lower triangular, `t = 1..T`) and
/// `b_t = A^t x_0`. The stage costs carry no ½, so the block-diagonal
/// weights are `Q̄ = blkdiag(2Q)` and `R̄ = blkdiag(2R)`; then
/// `Q_qp = MᵀQ̄M + R̄`, `c = MᵀQ̄b` and
/// `J(u) = ½uᵀQ_qp u + cᵀu + ½bᵀQ̄b` exactly.
pub fn lift<T: Real>(spec: &LqrSpec<T>) -> Result<LqrLift<T>> {
    spec.validate()?;
    let n = spec.state_dim();
    let m = spec.control_dim();
    let h = spec.horizon;

    // powers[k] = A^k
    let mut powers = Vec::with_capacity(h + 1);
    powers.push(DMatrix::<T>::identity(n, n));
    for k in 1..=h {
        let next = &spec.a * &powers[k - 1];
        powers.push(next);
    }

    let mut big_m = DMatrix::zeros(n * h, m * h);
    let mut b = DVector::zeros(n * h);
    for t in 1..=h {
        let row = (t - 1) * n;
        b.rows_mut(row, n).copy_from(&(&powers[t] * &spec.x0));
        for j in 0..t {
            let block = &powers[t - j - 1] * &spec.b;
            big_m.view_mut((row, j * m), (n, m)).copy_from(&block);
        }
    }

    let two = T::lit(2.0);
    let q_bar = block_diag(&(&spec.q * two), h);
    let r_bar = block_diag(&(&spec.r * two), h);
    let mt_q = big_m.transpose() * &q_bar;
    let q_qp = crate::linalg::symmetrize(&(&mt_q * &big_m + &r_bar));
    let c = &mt_q * &b;
    let constant = (b.transpose() * &q_bar * &b)[(0, 0)] * T::lit(0.5);

    let lower = DVector::from_fn(m * h, |i, _| spec.u_min[i % m]);
    let upper = DVector::from_fn(m * h, |i, _| spec.u_max[i % m]);
    let a_lower = DVector::from_fn(n * h, |i, _| spec.x_min[i % n] - b[i]);
    let a_upper = DVector::from_fn(n * h, |i, _| spec.x_max[i % n] - b[i]);

    let mut qp = QpProblem::new(q_qp, c, lower, upper, big_m.clone(), a_lower, a_upper)?;
    qp.constant = constant;
    Ok(LqrLift {
        qp,
        m: big_m,
        b,
        q_bar,
        r_bar,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpSolution<T: Real> {
    pub u_star: DVector<T>,
    /// `½u*ᵀQu* + cᵀu*`, excluding the constant.
    pub f_star: T,
    pub kkt_residual: T,
    pub iterations: usize,
}

fn clip<T: Real>(v: &DVector<T>, lo: &DVector<T>, hi: &DVector<T>) -> DVector<T> {
    DVector::from_fn(v.len(), |i, _| v[i].max(lo[i]).min(hi[i]))
}

fn box_distance<T: Real>(v: &DVector<T>, lo: &DVector<T>, hi: &DVector<T>) -> T {
    v.iter()
        .zip(lo.iter().zip(hi.iter()))
        .fold(T::zero(), |acc, (x, (l, h))| {
            acc.max(*l - *x).max(*x - *h)
        })
}

/// Minimises a smooth convex function over a box with FISTA and
/// gradient-based restarts. Stops when the unit-step projected-gradient
/// residual drops below `tol`. Returns the iterate and iterations used.
fn fista_box<T: Real>(
    grad: impl Fn(&DVector<T>) -> DVector<T>,
    lipschitz: T,
    lo: &DVector<T>,
    hi: &DVector<T>,
    start: DVector<T>,
    tol: T,
    max_iter: usize,
) -> (DVector<T>, T, usize) {
    let step = T::one() / lipschitz.max(T::lit(1e-300));
    let mut x = clip(&start, lo, hi);
    let mut y = x.clone();
    let mut theta = T::one();
    let mut residual = T::max_value().unwrap_or_else(T::one);
    for it in 0..max_iter {
        let gx = grad(&x);
        residual = inf_norm(&(&x - clip(&(&x - &gx), lo, hi)));
        if residual <= tol {
            return (x, residual, it);
        }
        let gy = grad(&y);
        let next = clip(&(&y - gy * step), lo, hi);
        let theta_next = (T::one() + (T::one() + T::lit(4.0) * theta * theta).sqrt()) * T::lit(0.5);
        let restart = (&y - &next).dot(&(&next - &x)) > T::zero();
        if restart {
            theta = T::one();
            y = next.clone();
        } else {
            let beta = (theta - T::one()) / theta_next;
            y = &next + (&next - &x) * beta;
            theta = theta_next;
        }
        x = next;
    }
    (x, residual, max_iter)
}

/// Solver knobs for [`solve_reference_with`].
#[derive(Debug, Clone, Copy)]
pub struct ReferenceOptions<T> {
    pub tol: T,
    /// Cap on the total number of inner FISTA iterations.
    pub max_iterations: usize,
    /// Iterations allowed for the feasibility-restoration phase.
    pub restoration_iterations: usize,
    /// Initial penalty relative to `λ_max(Q) / ‖A‖²`.
    pub penalty_scale: T,
}

impl<T: Real> ReferenceOptions<T> {
    pub fn with_tol(tol: T) -> Self {
        Self {
            tol,
            max_iterations: 2_000_000,
            restoration_iterations: 10_000,
            penalty_scale: T::lit(10.0),
        }
    }
}

/// Accelerated projected gradient on the box, with the linear constraints
/// handled by an augmented-Lagrangian outer loop.
pub fn solve_reference<T: Real>(qp: &QpProblem<T>, tol: T) -> Result<QpSolution<T>> {
    solve_reference_with(qp, &ReferenceOptions::with_tol(tol), None)
}

pub fn solve_reference_with<T: Real>(
    qp: &QpProblem<T>,
    opts: &ReferenceOptions<T>,
    warm_start: Option<&DVector<T>>,
) -> Result<QpSolution<T>> {
    qp.validate()?;
    let n = qp.dim();
    let k = qp.a.nrows();
    let tol = opts.tol;
    let mut u = match warm_start {
        Some(w) => {
            check_len("warm start", n, w.len())?;
            clip(w, &qp.lower, &qp.upper)
        }
        None => clip(&DVector::zeros(n), &qp.lower, &qp.upper),
    };
    let lq = lambda_max(&qp.q).max(T::zero());
    let la = spectral_norm_sq(&qp.a);
    let mut used = 0usize;

    if k > 0 && box_distance(&(&qp.a * &u), &qp.a_lower, &qp.a_upper) > tol {
        // Restoration: minimise ½ dist²(Au, [a_lower, a_upper]) over the box.
        let grad = |v: &DVector<T>| {
            let av = &qp.a * v;
            let r = &av - clip(&av, &qp.a_lower, &qp.a_upper);
            qp.a.transpose() * r
        };
        let (v, _, it) = fista_box(
            grad,
            la,
            &qp.lower,
            &qp.upper,
            u,
            tol * T::lit(1e-2),
            opts.restoration_iterations,
        );
        used += it;
        let viol = qp.violation(&v);
        let scale = T::one()
            + qp.a_lower
                .iter()
                .chain(qp.a_upper.iter())
                .filter(|x| x.is_finite())
                .fold(T::zero(), |acc, x| acc.max(x.abs()));
        if viol > T::lit(1e-6) * scale {
            return Err(Error::Infeasible(format!(
                "constraint violation {:e} remains after {} restoration iterations",
                viol.as_f64(),
                opts.restoration_iterations
            )));
        }
        u = v;
    }

    let kkt = |u: &DVector<T>, y: &DVector<T>| {
        let g = &qp.q * u + &qp.c + qp.a.transpose() * y;
        let stat = inf_norm(&(u - clip(&(u - g), &qp.lower, &qp.upper)));
        let au = &qp.a * u;
        stat.max(box_distance(&au, &qp.a_lower, &qp.a_upper))
    };

    if k == 0 {
        let grad = |v: &DVector<T>| &qp.q * v + &qp.c;
        let (v, _, it) = fista_box(grad, lq, &qp.lower, &qp.upper, u, tol, opts.max_iterations);
        used += it;
        let residual = kkt(&v, &DVector::zeros(0));
        if residual > tol {
            return Err(Error::NotConverged {
                iterations: used,
                residual: residual.as_f64(),
                best: v.iter().map(|x| x.as_f64()).collect(),
            });
        }
        return Ok(QpSolution {
            f_star: qp.objective(&v),
            u_star: v,
            kkt_residual: residual,
            iterations: used,
        });
    }

    let mut y = DVector::zeros(k);
    let mut rho = opts.penalty_scale * lq.max(T::one()) / la.max(T::lit(1e-12));
    let rho_max = rho * T::lit(1e10);
    let mut prev_primal = T::max_value().unwrap_or_else(T::one);
    let mut best = (u.clone(), T::max_value().unwrap_or_else(T::one));
    while used < opts.max_iterations {
        let y_now = y.clone();
        let grad = |v: &DVector<T>| {
            let z = &qp.a * v + &y_now / rho;
            let r = &z - clip(&z, &qp.a_lower, &qp.a_upper);
            &qp.q * v + &qp.c + qp.a.transpose() * r * rho
        };
        let (v, _, it) = fista_box(
            grad,
            lq + rho * la,
            &qp.lower,
            &qp.upper,
            u,
            tol * T::lit(0.1),
            opts.max_iterations - used,
        );
        used += it.max(1);
        u = v;
        let z = &qp.a * &u + &y / rho;
        y = (&z - clip(&z, &qp.a_lower, &qp.a_upper)) * rho;
        let residual = kkt(&u, &y);
        if residual < best.1 {
            best = (u.clone(), residual);
        }
        if residual <= tol {
            return Ok(QpSolution {
                f_star: qp.objective(&u),
                u_star: u,
                kkt_residual: residual,
                iterations: used,
            });
        }
        let primal = box_distance(&(&qp.a * &u), &qp.a_lower, &qp.a_upper);
        if primal > T::lit(0.25) * prev_primal && rho < rho_max {
            rho *= T::lit(10.0);
        }
        prev_primal = primal;
    }
    Err(Error::NotConverged {
        iterations: used,
        residual: best.1.as_f64(),
        best: best.0.iter().map(|x| x.as_f64()).collect(),
    })
}

/// Hildreth's coordinate ascent on the dual; needs `Q ≻ 0`.
///
/// Independent of [`solve_reference`]: it works on the multipliers of the
/// stacked inequalities `G u <= h` and recovers `u = -Q⁻¹(c + Gᵀλ)`.
pub fn solve_dual<T: Real>(qp: &QpProblem<T>, tol: T, max_sweeps: usize) -> Result<QpSolution<T>> {
    qp.validate()?;
    let n = qp.dim();
    let chol = qp
        .q
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Unsupported("dual pass needs a positive definite Q".into()))?;

    let mut rows: Vec<DVector<T>> = Vec::new();
    let mut rhs: Vec<T> = Vec::new();
    for i in 0..n {
        let e = DVector::from_fn(n, |j, _| if i == j { T::one() } else { T::zero() });
        if qp.upper[i].is_finite() {
            rows.push(e.clone());
            rhs.push(qp.upper[i]);
        }
        if qp.lower[i].is_finite() {
            rows.push(-e);
            rhs.push(-qp.lower[i]);
        }
    }
    for i in 0..qp.a.nrows() {
        let a = qp.a.row(i).transpose();
        if qp.a_upper[i].is_finite() {
            rows.push(a.clone());
            rhs.push(qp.a_upper[i]);
        }
        if qp.a_lower[i].is_finite() {
            rows.push(-a);
            rhs.push(-qp.a_lower[i]);
        }
    }
    let m = rows.len();
    let g = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
    let h = DVector::from_vec(rhs);
    let q_inv_gt = chol.solve(&g.transpose());
    let hess = &g * &q_inv_gt;
    let q_inv_c = chol.solve(&qp.c);
    let kvec = &h + &g * &q_inv_c;

    let primal = |lambda: &DVector<T>| -(&q_inv_c + &q_inv_gt * lambda);
    let mut lambda = DVector::<T>::zeros(m);
    let mut residual = T::max_value().unwrap_or_else(T::one);
    for sweep in 0..max_sweeps {
        for i in 0..m {
            let hii = hess[(i, i)];
            if hii <= T::zero() {
                continue;
            }
            let gradient = kvec[i] + hess.row(i).dot(&lambda.transpose());
            lambda[i] = (lambda[i] - gradient / hii).max(T::zero());
        }
        if sweep % 10 == 0 || sweep + 1 == max_sweeps {
            let u = primal(&lambda);
            let slack = &h - &g * &u;
            residual = slack
                .iter()
                .zip(lambda.iter())
                .fold(T::zero(), |acc, (s, l)| acc.max(-*s).max((*s * *l).abs()));
            if residual <= tol {
                return Ok(QpSolution {
                    f_star: qp.objective(&u),
                    u_star: u,
                    kkt_residual: residual,
                    iterations: sweep + 1,
                });
            }
        }
    }
    let u = primal(&lambda);
    Err(Error::NotConverged {
        iterations: max_sweeps,
        residual: residual.as_f64(),
        best: u.iter().map(|x| x.as_f64()).collect(),
    })
}

/// Optimal value treated as oracle truth: the primal augmented-Lagrangian
/// solve and the dual coordinate-ascent pass must agree to
/// `1e-6 · (1 + |f*|)`.
pub fn certified_optimum<T: Real>(qp: &QpProblem<T>, tol: T) -> Result<QpSolution<T>> {
    let primal = solve_reference(qp, tol)?;
    let dual = solve_dual(qp, tol, 2_000_000)?;
    let gap = (primal.f_star - dual.f_star).abs();
    if gap > T::lit(1e-6) * (T::one() + primal.f_star.abs()) {
        return Err(Error::OracleDisagreement {
            first: primal.f_star.as_f64(),
            second: dual.f_star.as_f64(),
        });
    }
    Ok(primal)
}

/// Euclidean projection onto the QP's feasible set.
pub fn project<T: Real>(qp: &QpProblem<T>, v: &DVector<T>, tol: T) -> Result<DVector<T>> {
    check_len("projection point", qp.dim(), v.len())?;
    if qp.violation(v) <= T::zero() {
        return Ok(v.clone());
    }
    let proj = qp.projection_problem(v);
    Ok(solve_reference_with(&proj, &ReferenceOptions::with_tol(tol), Some(v))?.u_star)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{ControlSequence, LqrProblem, TrajectoryProblem};
    use approx::assert_relative_eq;

    fn unit_box(n: usize) -> (DVector<f64>, DVector<f64>) {
        (DVector::from_element(n, -1.0), DVector::from_element(n, 1.0))
    }

    #[test]
    fn horizon_one_lift_by_hand() {
        let mut spec = LqrSpec::<f64>::double_integrator();
        spec.horizon = 1;
        let lift = lift(&spec).unwrap();
        assert_relative_eq!(lift.m, spec.b, epsilon = 1e-15);
        assert_relative_eq!(lift.b, &spec.a * &spec.x0, epsilon = 1e-15);
        let two = 2.0;
        let q_qp = (spec.b.transpose() * &spec.q * &spec.b + &spec.r) * two;
        let c = spec.b.transpose() * &spec.q * &spec.a * &spec.x0 * two;
        assert_relative_eq!(lift.qp.q, q_qp, epsilon = 1e-12);
        assert_relative_eq!(lift.qp.c, c, epsilon = 1e-12);
    }

    #[test]
    fn zero_dynamics_lift() {
        let mut spec = LqrSpec::<f64>::double_integrator();
        spec.a = DMatrix::zeros(2, 2);
        spec.b = DMatrix::zeros(2, 1);
        let lift = lift(&spec).unwrap();
        assert_relative_eq!(lift.qp.q, lift.r_bar, epsilon = 1e-15);
        assert!(lift.qp.c.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn lift_matches_rollout_cost() {
        let spec = LqrSpec::<f64>::double_integrator();
        let lifted = lift(&spec).unwrap();
        let problem = LqrProblem::new(spec).unwrap();
        assert_eq!(lifted.qp.q.shape(), (10, 10));
        let mut state = 12345u64;
        for _ in 0..100 {
            let u = DVector::from_fn(10, |_, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
            });
            let j = problem.objective(&ControlSequence::new(u.clone())).unwrap();
            let quad = lifted.qp.objective(&u) + lifted.qp.constant;
            assert!((j - quad).abs() <= 1e-9 * (1.0 + j.abs()), "{j} vs {quad}");
        }
        assert_relative_eq!(lifted.qp.constant, 62.5, epsilon = 1e-12);
    }

    #[test]
    fn identity_qp_on_unit_box() {
        let (lo, hi) = unit_box(4);
        let qp = QpProblem::boxed(DMatrix::identity(4, 4), DVector::zeros(4), lo, hi).unwrap();
        let sol = solve_reference(&qp, 1e-8).unwrap();
        assert!(inf_norm(&sol.u_star) <= 1e-8);
        assert!(sol.f_star.abs() <= 1e-12);
    }

    #[test]
    fn clipped_one_dimensional_minimiser() {
        let (lo, hi) = unit_box(3);
        let c = DVector::from_column_slice(&[-3.0, 0.0, 0.0]);
        let qp = QpProblem::boxed(DMatrix::identity(3, 3), c, lo, hi).unwrap();
        let sol = solve_reference(&qp, 1e-8).unwrap();
        assert_relative_eq!(sol.u_star[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(sol.f_star, -2.5, epsilon = 1e-8);
        let dual = solve_dual(&qp, 1e-10, 100_000).unwrap();
        assert_relative_eq!(dual.f_star, -2.5, epsilon = 1e-8);
    }

    #[test]
    fn paper_instance_two_methods_agree() {
        let lifted = lift(&LqrSpec::<f64>::double_integrator()).unwrap();
        let sol = certified_optimum(&lifted.qp, 1e-8).unwrap();
        assert!(lifted.qp.violation(&sol.u_star) <= 1e-8);
        assert!(sol.kkt_residual <= 1e-8);
        // Reference value of J(u*) from an external interior-point solve.
        assert!((sol.f_star + lifted.qp.constant - 8.5837514).abs() < 1e-5);
    }

    #[test]
    fn detects_infeasible_region() {
        let (lo, hi) = unit_box(2);
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let qp = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            lo,
            hi,
            a,
            DVector::from_element(1, 5.0),
            DVector::from_element(1, 6.0),
        )
        .unwrap();
        assert!(matches!(solve_reference(&qp, 1e-8), Err(Error::Infeasible(_))));
    }

    #[test]
    fn projection_lands_in_set() {
        let lifted = lift(&LqrSpec::<f64>::double_integrator()).unwrap();
        let v = DVector::from_element(10, 0.9);
        let p = project(&lifted.qp, &v, 1e-10).unwrap();
        assert!(lifted.qp.violation(&p) <= 1e-9);
        assert!(lifted.qp.violation(&v) > 0.1);
    }
}
