//! Log-barrier interior-point solver for small smooth concave programs.
//!
//! Two problem shapes are exposed: a concave objective under linear
//! inequalities with a nonnegative orthant, and a concave quadratic in a complex
//! vector confined to the unit ball with an optional concave quadratic
//! constraint. Both are reduced to [`ConcaveProgram`] over real coordinates and
//! solved by Newton centering along the central path.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::numerics::{ComplexVector, HermitianMatrix, C64};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CvxError {
    #[error("no strictly feasible point exists (best margin {margin:e})")]
    Infeasible { margin: f64 },
    #[error("iteration limit reached (duality gap {gap:e})")]
    MaxIter { gap: f64 },
    #[error("non-finite value encountered")]
    NonFinite,
}

/// Value, gradient and Hessian of a twice-differentiable function.
#[derive(Debug, Clone)]
pub struct SmoothValue {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// `max f(x)` subject to `g_i(x) ≥ 0`, with `f` and every `g_i` concave.
pub trait ConcaveProgram {
    fn dim(&self) -> usize;
    fn objective(&self, x: &DVector<f64>) -> SmoothValue;
    fn num_constraints(&self) -> usize;
    fn constraint(&self, i: usize, x: &DVector<f64>) -> SmoothValue;
    fn constraint_value(&self, i: usize, x: &DVector<f64>) -> f64 {
        self.constraint(i, x).value
    }
    fn objective_value(&self, x: &DVector<f64>) -> f64 {
        self.objective(x).value
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvxOptions {
    /// Target duality gap `m/t`.
    pub tol: f64,
    pub t0: f64,
    pub mu: f64,
    pub max_newton: usize,
    pub max_outer: usize,
}

impl Default for CvxOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            t0: 1.0,
            mu: 10.0,
            max_newton: 100,
            max_outer: 60,
        }
    }
}

impl CvxOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct BarrierOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    /// Dual estimates `1/(t·g_i)`, one per constraint.
    pub multipliers: DVector<f64>,
    pub newton_steps: usize,
    /// Objective after each centering step.
    pub trace: Vec<f64>,
    pub gap: f64,
}

fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn strictly_feasible<P: ConcaveProgram>(p: &P, x: &DVector<f64>) -> bool {
    (0..p.num_constraints()).all(|i| {
        let g = p.constraint_value(i, x);
        g > 0.0 && g.is_finite()
    })
}

fn barrier_value<P: ConcaveProgram>(p: &P, t: f64, x: &DVector<f64>) -> f64 {
    let mut phi = t * p.objective_value(x);
    for i in 0..p.num_constraints() {
        let g = p.constraint_value(i, x);
        if g <= 0.0 {
            return f64::NEG_INFINITY;
        }
        phi += g.ln();
    }
    phi
}

/// Newton ascent direction for the barrier function at `x`.
fn newton_direction<P: ConcaveProgram>(p: &P, t: f64, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>), CvxError> {
    let n = p.dim();
    let f = p.objective(x);
    let mut grad = &f.gradient * t;
    let mut neg_hess = &f.hessian * (-t);
    for i in 0..p.num_constraints() {
        let g = p.constraint(i, x);
        let inv = 1.0 / g.value;
        grad += &g.gradient * inv;
        neg_hess -= &g.hessian * inv;
        neg_hess += (&g.gradient * g.gradient.transpose()) * (inv * inv);
    }
    if !all_finite(&grad) || neg_hess.iter().any(|v| !v.is_finite()) {
        return Err(CvxError::NonFinite);
    }
    let scale = (0..n).map(|i| neg_hess[(i, i)].abs()).fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
    let mut reg = 0.0;
    for _ in 0..8 {
        let mut h = neg_hess.clone();
        for i in 0..n {
            h[(i, i)] += reg;
        }
        if let Some(ch) = h.cholesky() {
            let dx = ch.solve(&grad);
            if all_finite(&dx) {
                return Ok((dx, grad));
            }
        }
        reg = if reg == 0.0 { 1e-12 * scale } else { reg * 100.0 };
    }
    // Gradient fallback, scaled by the Hessian diagonal.
    let dx = &grad / scale;
    Ok((dx, grad))
}

fn center<P: ConcaveProgram>(p: &P, t: f64, x: &mut DVector<f64>, opts: &CvxOptions) -> Result<usize, CvxError> {
    const ALPHA: f64 = 0.01;
    for it in 0..opts.max_newton {
        let (dx, grad) = newton_direction(p, t, x)?;
        let decrement = grad.dot(&dx);
        if decrement <= 2e-14 || !decrement.is_finite() {
            return Ok(it);
        }
        let phi0 = barrier_value(p, t, x);
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..80 {
            let cand = &*x + &dx * s;
            if strictly_feasible(p, &cand) {
                let phi = barrier_value(p, t, &cand);
                if phi >= phi0 + ALPHA * s * decrement {
                    *x = cand;
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !accepted {
            return Ok(it);
        }
    }
    Ok(opts.max_newton)
}

/// Barrier method from a strictly feasible `x0`.
pub fn barrier_solve<P: ConcaveProgram>(p: &P, x0: &DVector<f64>, opts: &CvxOptions) -> Result<BarrierOutcome, CvxError> {
    let m = p.num_constraints();
    let mut x = x0.clone();
    if !strictly_feasible(p, &x) {
        return Err(CvxError::Infeasible { margin: 0.0 });
    }
    let mut t = opts.t0;
    let mut steps = 0;
    let mut trace = Vec::new();
    let mut outer = 0;
    loop {
        steps += center(p, t, &mut x, opts)?;
        trace.push(p.objective_value(&x));
        let gap = m as f64 / t;
        if gap <= opts.tol || m == 0 {
            break;
        }
        outer += 1;
        if outer >= opts.max_outer {
            return Err(CvxError::MaxIter { gap });
        }
        t *= opts.mu;
    }
    let multipliers = DVector::from_fn(m, |i, _| 1.0 / (t * p.constraint_value(i, &x)));
    let value = p.objective_value(&x);
    if !value.is_finite() || !all_finite(&x) {
        return Err(CvxError::NonFinite);
    }
    Ok(BarrierOutcome {
        x,
        value,
        multipliers,
        newton_steps: steps,
        trace,
        gap: m as f64 / t,
    })
}

/// `max s` subject to `g_i(x) ≥ s` and `s ≤ 1`.
struct PhaseOne<'a, P: ConcaveProgram> {
    inner: &'a P,
}

impl<P: ConcaveProgram> PhaseOne<'_, P> {
    fn split(&self, z: &DVector<f64>) -> (DVector<f64>, f64) {
        let n = self.inner.dim();
        (z.rows(0, n).into_owned(), z[n])
    }
}

impl<P: ConcaveProgram> ConcaveProgram for PhaseOne<'_, P> {
    fn dim(&self) -> usize {
        self.inner.dim() + 1
    }

    fn objective(&self, z: &DVector<f64>) -> SmoothValue {
        let n = self.inner.dim();
        let mut gradient = DVector::zeros(n + 1);
        gradient[n] = 1.0;
        SmoothValue {
            value: z[n],
            gradient,
            hessian: DMatrix::zeros(n + 1, n + 1),
        }
    }

    fn num_constraints(&self) -> usize {
        self.inner.num_constraints() + 1
    }

    fn constraint(&self, i: usize, z: &DVector<f64>) -> SmoothValue {
        let n = self.inner.dim();
        let (x, s) = self.split(z);
        if i == self.inner.num_constraints() {
            let mut gradient = DVector::zeros(n + 1);
            gradient[n] = -1.0;
            return SmoothValue {
                value: 1.0 - s,
                gradient,
                hessian: DMatrix::zeros(n + 1, n + 1),
            };
        }
        let g = self.inner.constraint(i, &x);
        let mut gradient = DVector::zeros(n + 1);
        gradient.rows_mut(0, n).copy_from(&g.gradient);
        gradient[n] = -1.0;
        let mut hessian = DMatrix::zeros(n + 1, n + 1);
        hessian.view_mut((0, 0), (n, n)).copy_from(&g.hessian);
        SmoothValue {
            value: g.value - s,
            gradient,
            hessian,
        }
    }

    fn constraint_value(&self, i: usize, z: &DVector<f64>) -> f64 {
        let (x, s) = self.split(z);
        if i == self.inner.num_constraints() {
            1.0 - s
        } else {
            self.inner.constraint_value(i, &x) - s
        }
    }
}

/// Maximizer of the smallest constraint margin `min_i g_i(x)`, capped at 1,
/// together with that margin. The margin is negative when the constraint
/// set is empty.
pub fn most_feasible_point<P: ConcaveProgram>(p: &P, x0: &DVector<f64>) -> Result<(DVector<f64>, f64), CvxError> {
    let n = p.dim();
    let worst = (0..p.num_constraints())
        .map(|i| p.constraint_value(i, x0))
        .fold(f64::INFINITY, f64::min);
    if !worst.is_finite() {
        return Err(CvxError::NonFinite);
    }
    let mut z = DVector::zeros(n + 1);
    z.rows_mut(0, n).copy_from(x0);
    z[n] = worst.min(0.0) - 1.0;
    let phase = PhaseOne { inner: p };
    let opts = CvxOptions {
        tol: 1e-10,
        ..CvxOptions::default()
    };
    let out = match barrier_solve(&phase, &z, &opts) {
        Ok(o) => o,
        Err(CvxError::MaxIter { .. }) => return Err(CvxError::Infeasible { margin: 0.0 }),
        Err(e) => return Err(e),
    };
    let (x, s) = phase.split(&out.x);
    Ok((x, s))
}

/// Returns `x0` if it is strictly feasible, otherwise the maximizer of the
/// smallest constraint margin, provided that margin is positive.
pub fn find_strictly_feasible<P: ConcaveProgram>(p: &P, x0: &DVector<f64>) -> Result<DVector<f64>, CvxError> {
    if strictly_feasible(p, x0) {
        return Ok(x0.clone());
    }
    let (x, s) = most_feasible_point(p, x0)?;
    if s > 0.0 && strictly_feasible(p, &x) {
        Ok(x)
    } else {
        Err(CvxError::Infeasible { margin: s })
    }
}

/// Concave objective under `A x ≤ b` and `x ≥ 0`.
pub struct LinConstrainedConcaveProblem<'a> {
    pub objective: Box<dyn Fn(&DVector<f64>) -> SmoothValue + 'a>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LinConstrainedConcaveProblem<'_> {
    pub fn dim(&self) -> usize {
        self.a.ncols()
    }
}

impl ConcaveProgram for LinConstrainedConcaveProblem<'_> {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn objective(&self, x: &DVector<f64>) -> SmoothValue {
        (self.objective)(x)
    }

    fn num_constraints(&self) -> usize {
        self.a.nrows() + self.a.ncols()
    }

    fn constraint(&self, i: usize, x: &DVector<f64>) -> SmoothValue {
        let n = self.dim();
        let rows = self.a.nrows();
        let (value, gradient) = if i < rows {
            (self.b[i] - self.a.row(i).dot(&x.transpose()), -self.a.row(i).transpose())
        } else {
            let mut e = DVector::zeros(n);
            e[i - rows] = 1.0;
            (x[i - rows], e)
        };
        SmoothValue {
            value,
            gradient,
            hessian: DMatrix::zeros(n, n),
        }
    }

    fn constraint_value(&self, i: usize, x: &DVector<f64>) -> f64 {
        let rows = self.a.nrows();
        if i < rows {
            self.b[i] - self.a.row(i).dot(&x.transpose())
        } else {
            x[i - rows]
        }
    }
}

#[derive(Debug, Clone)]
pub struct CvxSolution {
    pub x: DVector<f64>,
    pub value: f64,
    /// Multipliers for the rows of `A` followed by the bounds `x ≥ 0`.
    pub multipliers: DVector<f64>,
    pub trace: Vec<f64>,
}

pub fn solve_linconstrained_concave(
    prob: &LinConstrainedConcaveProblem<'_>,
    x0: &DVector<f64>,
    tol: f64,
) -> Result<CvxSolution, CvxError> {
    let start = find_strictly_feasible(prob, x0)?;
    let out = barrier_solve(prob, &start, &CvxOptions::with_tol(tol))?;
    Ok(CvxSolution {
        x: out.x,
        value: out.value,
        multipliers: out.multipliers,
        trace: out.trace,
    })
}

/// `q(u) = c + 2Re{bᴴu} − uᴴAu` with `A` PSD.
#[derive(Debug, Clone)]
pub struct ConcaveQuadratic {
    pub c: f64,
    pub b: ComplexVector,
    pub a: HermitianMatrix,
}

impl ConcaveQuadratic {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn eval(&self, u: &ComplexVector) -> f64 {
        self.c + 2.0 * self.b.dotc(u).re - self.a.quad_form(u)
    }

    /// Real representation `Â = [[Re A, −Im A], [Im A, Re A]]`.
    fn real_block(&self) -> DMatrix<f64> {
        let n = self.dim();
        let a = self.a.matrix();
        DMatrix::from_fn(2 * n, 2 * n, |i, j| {
            let (ib, jb) = (i / n, j / n);
            let z = a[(i % n, j % n)];
            match (ib, jb) {
                (0, 0) | (1, 1) => z.re,
                (0, 1) => -z.im,
                _ => z.im,
            }
        })
    }

    fn real_linear(&self) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(2 * n, |i, _| if i < n { self.b[i].re } else { self.b[i - n].im })
    }
}

pub fn to_real(u: &ComplexVector) -> DVector<f64> {
    let n = u.len();
    DVector::from_fn(2 * n, |i, _| if i < n { u[i].re } else { u[i - n].im })
}

pub fn to_complex(x: &DVector<f64>) -> ComplexVector {
    let n = x.len() / 2;
    ComplexVector::from_fn(n, |i, _| C64::new(x[i], x[i + n]))
}

/// Real-coordinate quadratic `c + 2lᵀx − xᵀQx`.
#[derive(Debug, Clone)]
struct RealQuadratic {
    c: f64,
    l: DVector<f64>,
    q: DMatrix<f64>,
}

impl RealQuadratic {
    fn from_complex(cq: &ConcaveQuadratic) -> Self {
        Self {
            c: cq.c,
            l: cq.real_linear(),
            q: cq.real_block(),
        }
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.c + 2.0 * self.l.dot(x) - (x.transpose() * &self.q * x)[(0, 0)]
    }

    fn smooth(&self, x: &DVector<f64>) -> SmoothValue {
        let qx = &self.q * x;
        SmoothValue {
            value: self.c + 2.0 * self.l.dot(x) - x.dot(&qx),
            gradient: (&self.l - &qx) * 2.0,
            hessian: &self.q * -2.0,
        }
    }
}

/// Concave quadratic maximization over the unit ball with an optional
/// `q1(u) ≥ r` constraint.
#[derive(Debug, Clone)]
pub struct UnitBallQcqp {
    pub objective: ConcaveQuadratic,
    pub constraint: Option<(ConcaveQuadratic, f64)>,
}

struct RealQcqp {
    f: RealQuadratic,
    g: Option<(RealQuadratic, f64)>,
    n: usize,
}

impl ConcaveProgram for RealQcqp {
    fn dim(&self) -> usize {
        self.n
    }

    fn objective(&self, x: &DVector<f64>) -> SmoothValue {
        self.f.smooth(x)
    }

    fn objective_value(&self, x: &DVector<f64>) -> f64 {
        self.f.value(x)
    }

    fn num_constraints(&self) -> usize {
        1 + usize::from(self.g.is_some())
    }

    fn constraint(&self, i: usize, x: &DVector<f64>) -> SmoothValue {
        if i == 0 {
            SmoothValue {
                value: 1.0 - x.norm_squared(),
                gradient: x * -2.0,
                hessian: DMatrix::identity(self.n, self.n) * -2.0,
            }
        } else {
            let (g, r) = self.g.as_ref().expect("second constraint present");
            let mut s = g.smooth(x);
            s.value -= r;
            s
        }
    }

    fn constraint_value(&self, i: usize, x: &DVector<f64>) -> f64 {
        if i == 0 {
            1.0 - x.norm_squared()
        } else {
            let (g, r) = self.g.as_ref().expect("second constraint present");
            g.value(x) - r
        }
    }
}

#[derive(Debug, Clone)]
pub struct QcqpSolution {
    pub u: ComplexVector,
    pub value: f64,
    /// Multiplier of the ball constraint, then of `q1 ≥ r` when present.
    pub multipliers: Vec<f64>,
    pub trace: Vec<f64>,
}

pub fn solve_unit_ball_qcqp(prob: &UnitBallQcqp, u0: &ComplexVector, tol: f64) -> Result<QcqpSolution, CvxError> {
    let rp = RealQcqp {
        f: RealQuadratic::from_complex(&prob.objective),
        g: prob
            .constraint
            .as_ref()
            .map(|(q, r)| (RealQuadratic::from_complex(q), *r)),
        n: 2 * prob.objective.dim(),
    };
    let start = find_strictly_feasible(&rp, &to_real(u0))?;
    let out = barrier_solve(&rp, &start, &CvxOptions::with_tol(tol))?;
    Ok(QcqpSolution {
        u: to_complex(&out.x),
        value: out.value,
        multipliers: out.multipliers.iter().copied().collect(),
        trace: out.trace,
    })
}
