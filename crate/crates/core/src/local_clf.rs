//! Local control-Lyapunov functions `V_loc` with a stabilizing feedback
//! `u_loc`, the target set `Omega_c = {V_loc <= c}` and the tools that build
//! and certify them: linearization, Lyapunov and Riccati solvers, level search
//! and the Petrov check.

use crate::numerics::{bisect, powell_minimize_scaled, Bracket};
use crate::par::{map_indexed, Execution};
use crate::rng::stream;
use crate::shooting::sphere_from_angles;
use crate::system::{dot, eval_extremal_control, ControlSystem};
use crate::{Error, Result};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// User-supplied local CLF with its gradient and feedback.
pub trait AnalyticClf: Send + Sync {
    fn name(&self) -> &str;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    fn feedback(&self, x: &[f64], out: &mut [f64]);
}

/// `V = x1^4 / 4 + x2^2 / 2` with the saturated feedback
/// `u = -4 x1` when `|4 x1| <= a`, otherwise `-x1 max(a / |x1|, 1 + b)`.
#[derive(Debug, Clone)]
pub struct Example2dClf {
    pub a: f64,
    pub b: f64,
}

impl AnalyticClf for Example2dClf {
    fn name(&self) -> &str {
        "example2d-quartic"
    }

    fn value(&self, x: &[f64]) -> f64 {
        0.25 * x[0].powi(4) + 0.5 * x[1] * x[1]
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0].powi(3);
        out[1] = x[1];
    }

    fn feedback(&self, x: &[f64], out: &mut [f64]) {
        let x1 = x[0];
        out[0] = if (4.0 * x1).abs() <= self.a { -4.0 * x1 } else { -x1 * (self.a / x1.abs()).max(1.0 + self.b) };
    }
}

#[derive(Clone)]
pub enum ClfKind {
    /// `V = x^T P x`, `u_loc = S x`.
    Quadratic { p: DMatrix<f64>, s: DMatrix<f64>, alpha: f64 },
    Analytic(Arc<dyn AnalyticClf>),
}

impl fmt::Debug for ClfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClfKind::Quadratic { p, s, alpha } => {
                f.debug_struct("Quadratic").field("p", p).field("s", s).field("alpha", alpha).finish()
            }
            ClfKind::Analytic(a) => f.debug_tuple("Analytic").field(&a.name()).finish(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalClf {
    kind: ClfKind,
    c: f64,
    c1: f64,
    lambda_max: f64,
}

fn check_levels(c: f64, c1: f64) -> Result<()> {
    if !(c > 0.0) || !(c1 > 0.0) || c1 > c || !c.is_finite() {
        return Err(Error::InvalidParameter(format!("levels must satisfy 0 < c1 <= c, got c = {c}, c1 = {c1}")));
    }
    Ok(())
}

impl LocalClf {
    pub fn quadratic(p: DMatrix<f64>, s: DMatrix<f64>, alpha: f64, c: f64, c1: f64) -> Result<Self> {
        check_levels(c, c1)?;
        let n = p.nrows();
        if n == 0 || p.ncols() != n || s.ncols() != n {
            return Err(Error::InvalidParameter("P must be n x n and S must be m x n".into()));
        }
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter("alpha must be positive".into()));
        }
        let asym = (&p - p.transpose()).abs().max();
        if asym > 1e-12 * p.abs().max().max(1.0) {
            return Err(Error::InvalidParameter(format!("P is not symmetric (defect {asym:e})")));
        }
        let p = 0.5 * (&p + p.transpose());
        if min_eigenvalue(&p) <= 0.0 {
            return Err(Error::InvalidParameter("P is not positive definite".into()));
        }
        Ok(Self { kind: ClfKind::Quadratic { p, s, alpha }, c, c1, lambda_max: f64::INFINITY })
    }

    /// `lambda_max` bounds the radial bisection of [`terminal_state_on_level`].
    pub fn analytic(clf: Arc<dyn AnalyticClf>, c: f64, c1: f64, lambda_max: f64) -> Result<Self> {
        check_levels(c, c1)?;
        if !(lambda_max > 0.0) {
            return Err(Error::InvalidParameter("lambda_max must be positive".into()));
        }
        Ok(Self { kind: ClfKind::Analytic(clf), c, c1, lambda_max })
    }

    pub fn example_2d(a: f64, b: f64, c: f64, c1: f64) -> Result<Self> {
        if !(a > 0.0) || !(b > 0.0) {
            return Err(Error::InvalidParameter("a and b must be positive".into()));
        }
        Self::analytic(Arc::new(Example2dClf { a, b }), c, c1, 0.5)
    }

    /// `P` from `(A + BS)^T P + P (A + BS) = -alpha I` for a given feedback `S`.
    pub fn from_lyapunov(sys: &dyn ControlSystem, s: DMatrix<f64>, alpha: f64, c: f64, c1: f64) -> Result<Self> {
        let (a, b) = linearize(sys)?;
        if s.nrows() != b.ncols() || s.ncols() != a.nrows() {
            return Err(Error::InvalidParameter("S must be m x n".into()));
        }
        let p = solve_lyapunov(&(a + b * &s), alpha)?;
        Self::quadratic(p, s, alpha, c, c1)
    }

    /// LQR design on the linearization. `alpha` records the smallest
    /// eigenvalue of `Q + S^T R S`, the decay rate the closed-loop identity
    /// guarantees.
    pub fn from_riccati(
        sys: &dyn ControlSystem,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        c: f64,
        c1: f64,
    ) -> Result<Self> {
        let (a, b) = linearize(sys)?;
        let (p, s) = solve_riccati(&a, &b, q, r)?;
        let alpha = min_eigenvalue(&(q + s.transpose() * r * &s));
        Self::quadratic(p, s, alpha, c, c1)
    }

    pub fn kind(&self) -> &ClfKind {
        &self.kind
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn with_levels(&self, c: f64, c1: f64) -> Result<Self> {
        check_levels(c, c1)?;
        Ok(Self { c, c1, ..self.clone() })
    }

    pub fn with_lambda_max(&self, lambda_max: f64) -> Self {
        Self { lambda_max, ..self.clone() }
    }

    pub fn p(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            ClfKind::Quadratic { p, .. } => Some(p),
            ClfKind::Analytic(_) => None,
        }
    }

    pub fn s(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            ClfKind::Quadratic { s, .. } => Some(s),
            ClfKind::Analytic(_) => None,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.kind {
            ClfKind::Quadratic { p, .. } => quad_form(p, x),
            ClfKind::Analytic(a) => a.value(x),
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            ClfKind::Quadratic { p, .. } => {
                let n = x.len();
                for i in 0..n {
                    out[i] = 2.0 * (0..n).map(|j| p[(i, j)] * x[j]).sum::<f64>();
                }
            }
            ClfKind::Analytic(a) => a.gradient(x, out),
        }
    }

    pub fn gradient_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.gradient(x, &mut g);
        g
    }

    /// Local feedback, not clamped to `U`.
    pub fn feedback(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            ClfKind::Quadratic { s, .. } => {
                for i in 0..s.nrows() {
                    out[i] = (0..x.len()).map(|j| s[(i, j)] * x[j]).sum();
                }
            }
            ClfKind::Analytic(a) => a.feedback(x, out),
        }
    }

    pub fn feedback_vec(&self, x: &[f64], m: usize) -> Vec<f64> {
        let mut u = vec![0.0; m];
        self.feedback(x, &mut u);
        u
    }

    pub fn in_target(&self, x: &[f64]) -> bool {
        self.value(x) <= self.c
    }

    /// `V_loc(x) - c`: negative inside the target.
    pub fn excess(&self, x: &[f64]) -> f64 {
        self.value(x) - self.c
    }
}

fn quad_form(p: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut v = 0.0;
    for i in 0..n {
        let row: f64 = (0..n).map(|j| p[(i, j)] * x[j]).sum();
        v += x[i] * row;
    }
    v
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// Largest real part of the spectrum.
pub fn max_real_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// `A = df/dx(0, 0)`, `B = df/du(0, 0)` (central differences, step 1e-6).
pub fn linearize(sys: &dyn ControlSystem) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = sys.state_dim();
    let m = sys.control_dim();
    let x0 = vec![0.0; n];
    let mut u = vec![0.0; m];
    let mut f = vec![0.0; n];
    sys.dynamics(&x0, &u, &mut f);
    let defect = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if defect > 1e-10 {
        return Err(Error::NotAnEquilibrium(defect));
    }
    let mut jac = vec![0.0; n * n];
    sys.jac_dynamics_x(&x0, &u, &mut jac);
    let a = DMatrix::from_row_slice(n, n, &jac);
    let mut b = DMatrix::zeros(n, m);
    let h = 1e-6;
    let mut fm = vec![0.0; n];
    for j in 0..m {
        u[j] = h;
        sys.dynamics(&x0, &u, &mut f);
        u[j] = -h;
        sys.dynamics(&x0, &u, &mut fm);
        u[j] = 0.0;
        for i in 0..n {
            b[(i, j)] = (f[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok((a, b))
}

/// Solves `F^T X + X F = -M` through the Kronecker system
/// `(I (x) F^T + F^T (x) I) vec X = -vec M`.
pub fn solve_lyapunov_general(f: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let ft = f.transpose();
    let k = eye.kronecker(&ft) + ft.kronecker(&eye);
    let rhs = -DMatrix::from_column_slice(n * n, 1, m.as_slice());
    let sol = k.lu().solve(&rhs).ok_or(Error::Singular)?;
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok(0.5 * (&x + x.transpose()))
}

/// Symmetric `P` with `Acl^T P + P Acl = -alpha I`.
pub fn solve_lyapunov(acl: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    let n = acl.nrows();
    if n == 0 || acl.ncols() != n {
        return Err(Error::InvalidParameter("Lyapunov matrix must be square".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter("alpha must be positive".into()));
    }
    let max_re = max_real_eigenvalue(acl);
    if max_re >= 0.0 {
        return Err(Error::NotHurwitz { max_real_part: max_re });
    }
    solve_lyapunov_general(acl, &(DMatrix::identity(n, n) * alpha))
}

pub fn lyapunov_residual(acl: &DMatrix<f64>, p: &DMatrix<f64>, alpha: f64) -> f64 {
    let n = acl.nrows();
    (acl.transpose() * p + p * acl + DMatrix::identity(n, n) * alpha).norm()
}

/// Rank of `[B, AB, ..., A^{n-1} B]`.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for k in 0..n {
        ctrb.columns_mut(k * m, m).copy_from(&blk);
        blk = a * blk;
    }
    let scale = ctrb.abs().max().max(1.0);
    ctrb.rank(1e-10 * scale)
}

pub fn riccati_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let rinv = r.clone().try_inverse().unwrap_or_else(|| DMatrix::from_element(r.nrows(), r.ncols(), f64::NAN));
    (a.transpose() * p + p * a - p * b * rinv * b.transpose() * p + q).norm()
}

/// Stabilizing initial feedback for Kleinman's iteration.
fn initial_feedback(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    if max_real_eigenvalue(a) < 0.0 {
        return Ok(DMatrix::zeros(b.ncols(), n));
    }
    // pole shift: P0 from (A - sigma I)^T P0 + P0 (A - sigma I) = -I
    let sigma = 1.0 + max_real_eigenvalue(a).max(0.0);
    let p0 = solve_lyapunov_general(&(a - &eye * sigma), &eye)?;
    let s0 = -(b.transpose() * p0) * sigma;
    if max_real_eigenvalue(&(a + b * &s0)) < 0.0 {
        return Ok(s0);
    }
    // Bass: (A + beta I) Z + Z (A + beta I)^T = 2 B B^T, S0 = -B^T Z^{-1}
    let beta = a.norm() + 1.0;
    let shifted = a + &eye * beta;
    let z = solve_lyapunov_general(&(-shifted.transpose()), &(b * b.transpose() * 2.0))?;
    let zinv = z.try_inverse().ok_or(Error::Singular)?;
    Ok(-(b.transpose() * zinv))
}

/// Stabilizing solution of `A^T P + P A - P B R^{-1} B^T P + Q = 0` by
/// Kleinman–Newton iteration; returns `(P, S)` with `S = -R^{-1} B^T P`.
pub fn solve_riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::InvalidParameter("Riccati data have inconsistent shapes".into()));
    }
    if min_eigenvalue(q) <= 0.0 || min_eigenvalue(r) <= 0.0 {
        return Err(Error::InvalidParameter("Q and R must be positive definite".into()));
    }
    let rank = controllability_rank(a, b);
    if rank < n {
        return Err(Error::NotControllable { rank, n });
    }
    let rinv = r.clone().try_inverse().ok_or(Error::Singular)?;
    let mut s = initial_feedback(a, b)?;
    let mut p_prev: Option<DMatrix<f64>> = None;
    for _ in 0..100 {
        let acl = a + b * &s;
        let rhs = q + s.transpose() * r * &s;
        let max_re = max_real_eigenvalue(&acl);
        if max_re >= 0.0 {
            return Err(Error::NotHurwitz { max_real_part: max_re });
        }
        let p = solve_lyapunov_general(&acl, &rhs)?;
        s = -(&rinv * b.transpose() * &p);
        if let Some(prev) = &p_prev {
            if (&p - prev).norm() <= 1e-14 * p.norm().max(1.0) {
                return finish_riccati(a, b, q, r, p, s);
            }
        }
        p_prev = Some(p);
    }
    let p = p_prev.unwrap_or_else(|| DMatrix::zeros(n, n));
    let res = riccati_residual(a, b, q, r, &p);
    if res <= 1e-8 {
        return finish_riccati(a, b, q, r, p, s);
    }
    Err(Error::NoConvergence(format!("Kleinman iteration stalled with residual {res:e}")))
}

fn finish_riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: DMatrix<f64>,
    s: DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let res = riccati_residual(a, b, q, r, &p);
    if res > 1e-8 {
        return Err(Error::NoConvergence(format!("Riccati residual {res:e} above 1e-8")));
    }
    Ok((p, s))
}

/// The point `lambda xi` with `V_loc(lambda xi) = level`.
pub fn terminal_state_on_level(clf: &LocalClf, xi: &[f64], level: f64) -> Result<Vec<f64>> {
    terminal_state_with_bound(clf, xi, level, clf.lambda_max)
}

fn terminal_state_with_bound(clf: &LocalClf, xi: &[f64], level: f64, lambda_max: f64) -> Result<Vec<f64>> {
    if !(level > 0.0) {
        return Err(Error::InvalidParameter(format!("level must be positive, got {level}")));
    }
    let nrm = dot(xi, xi).sqrt();
    if (nrm - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!("direction must be a unit vector, norm {nrm}")));
    }
    let lambda = match &clf.kind {
        ClfKind::Quadratic { p, .. } => (level / quad_form(p, xi)).sqrt(),
        ClfKind::Analytic(a) => {
            let at = |l: f64| a.value(&xi.iter().map(|v| l * v).collect::<Vec<_>>()) - level;
            let top = at(lambda_max);
            if top < 0.0 {
                return Err(Error::LambdaMaxTooSmall { value: top + level, level });
            }
            bisect(at, Bracket::new(0.0, lambda_max), 1e-13)?
        }
    };
    Ok(xi.iter().map(|v| lambda * v).collect())
}

/// Like [`terminal_state_on_level`] but doubles the radial bound as needed.
fn boundary_point(clf: &LocalClf, xi: &[f64], level: f64) -> Result<Vec<f64>> {
    let mut bound = if clf.lambda_max.is_finite() { clf.lambda_max } else { 1.0 };
    for _ in 0..60 {
        match terminal_state_with_bound(clf, xi, level, bound) {
            Err(Error::LambdaMaxTooSmall { .. }) => bound *= 2.0,
            other => return other,
        }
    }
    Err(Error::LambdaMaxTooSmall { value: f64::NAN, level })
}

pub(crate) fn random_unit<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let nrm = dot(&v, &v).sqrt();
        if nrm > 1e-12 {
            return v.into_iter().map(|x| x / nrm).collect();
        }
    }
}

/// `<grad V_loc(x), f(x, u_loc(x))>` and the box violation of `u_loc(x)`.
fn decrease_and_slack(sys: &dyn ControlSystem, clf: &LocalClf, x: &[f64]) -> (f64, f64) {
    let n = sys.state_dim();
    let u = clf.feedback_vec(x, sys.control_dim());
    let mut f = vec![0.0; n];
    sys.dynamics(x, &u, &mut f);
    let grad = clf.gradient_vec(x);
    (dot(&grad, &f), sys.control_box().violation(&u))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub level: f64,
    /// Largest `<grad V_loc, f(x, u_loc)>` found on the level set.
    pub worst_decrease: f64,
    /// Largest violation of `u_loc` against the control box (`<= 0` inside).
    pub worst_slack: f64,
    pub admissible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSearchReport {
    pub c_tilde: f64,
    /// Largest level of the admissible prefix, absent when the first level fails.
    pub c_sup: Option<f64>,
    pub levels: Vec<LevelRecord>,
}

impl LevelSearchReport {
    pub fn require_c_sup(&self) -> Result<f64> {
        self.c_sup.ok_or(Error::NoAdmissibleLevel)
    }

    /// Recommended level, a little below `c_sup`.
    pub fn suggested_c(&self) -> Option<f64> {
        self.c_sup.map(|c| 0.96 * c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LevelSearchConfig {
    pub c_tilde: f64,
    pub n_levels: usize,
    pub n_samples: usize,
    pub n_guesses: usize,
    pub seed: u64,
}

impl Default for LevelSearchConfig {
    fn default() -> Self {
        Self { c_tilde: 0.05, n_levels: 200, n_samples: 1000, n_guesses: 20, seed: 0 }
    }
}

fn direction_from_angles(n: usize, angles: &[f64]) -> Vec<f64> {
    sphere_from_angles(n, angles)
}

/// Sampled and Powell-refined worst values on the level set `{V_loc = level}`.
fn probe_level(
    sys: &dyn ControlSystem,
    clf: &LocalClf,
    level: f64,
    n_samples: usize,
    n_guesses: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let n = sys.state_dim();
    let mut rng = stream(seed, 0);
    let mut samples: Vec<(Vec<f64>, f64, f64)> = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let xi = random_unit(&mut rng, n);
        let x = boundary_point(clf, &xi, level)?;
        let (d, s) = decrease_and_slack(sys, clf, &x);
        samples.push((xi, d, s));
    }
    let mut worst_d = samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let mut worst_s = samples.iter().map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);
    if n < 2 || n_guesses == 0 {
        return Ok((worst_d, worst_s));
    }
    // refine from the worst samples of each kind
    for which in 0..2 {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let key = |i: usize| if which == 0 { samples[i].1 } else { samples[i].2 };
        order.sort_by(|&i, &j| key(j).total_cmp(&key(i)));
        for &i in order.iter().take(n_guesses) {
            let theta0 = crate::shooting::angles_from_sphere(&samples[i].0);
            let obj = |th: &[f64]| {
                let xi = direction_from_angles(n, th);
                match boundary_point(clf, &xi, level) {
                    Ok(x) => {
                        let (d, s) = decrease_and_slack(sys, clf, &x);
                        -(if which == 0 { d } else { s })
                    }
                    Err(_) => f64::INFINITY,
                }
            };
            if let Ok(r) = powell_minimize_scaled(obj, &theta0, 0.05, 1e-10, 200) {
                let x = boundary_point(clf, &direction_from_angles(n, &r.argmin), level)?;
                let (d, s) = decrease_and_slack(sys, clf, &x);
                worst_d = worst_d.max(d);
                worst_s = worst_s.max(s);
            }
        }
    }
    Ok((worst_d, worst_s))
}

/// Tests `n_levels` equally spaced levels in `(0, c_tilde]`.
pub fn find_level_sup(
    sys: &dyn ControlSystem,
    clf: &LocalClf,
    cfg: &LevelSearchConfig,
    exec: Execution,
) -> Result<LevelSearchReport> {
    if !(cfg.c_tilde > 0.0) || cfg.n_levels == 0 || cfg.n_samples == 0 {
        return Err(Error::InvalidParameter("level search needs c_tilde > 0 and positive counts".into()));
    }
    let records = map_indexed(cfg.n_levels, exec, |j| {
        let level = cfg.c_tilde * (j + 1) as f64 / cfg.n_levels as f64;
        let seed = crate::rng::sub_seed(cfg.seed, j as u64);
        probe_level(sys, clf, level, cfg.n_samples, cfg.n_guesses, seed).map(|(d, s)| LevelRecord {
            level,
            worst_decrease: d,
            worst_slack: s,
            admissible: d < 0.0 && s <= 0.0,
        })
    });
    let levels = records.into_iter().collect::<Result<Vec<_>>>()?;
    let c_sup = levels.iter().take_while(|r| r.admissible).last().map(|r| r.level);
    Ok(LevelSearchReport { c_tilde: cfg.c_tilde, c_sup, levels })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelCheck {
    pub level: f64,
    pub worst_decrease: f64,
    pub worst_slack: f64,
    pub n_points: usize,
}

impl LevelCheck {
    pub fn admissible(&self) -> bool {
        self.worst_decrease < 0.0 && self.worst_slack <= 0.0
    }
}

/// Decrease and constraint check at `n_samples` boundary points and
/// `n_samples` interior points of `Omega_level` (origin excluded).
pub fn check_level(sys: &dyn ControlSystem, clf: &LocalClf, level: f64, n_samples: usize, seed: u64) -> Result<LevelCheck> {
    let n = sys.state_dim();
    let mut rng = stream(seed, 1);
    let mut worst_d = f64::NEG_INFINITY;
    let mut worst_s = f64::NEG_INFINITY;
    for k in 0..2 * n_samples {
        let xi = random_unit(&mut rng, n);
        let sub = if k < n_samples { level } else { level * rng.random_range(1e-6..1.0) };
        let x = boundary_point(clf, &xi, sub)?;
        let (d, s) = decrease_and_slack(sys, clf, &x);
        worst_d = worst_d.max(d);
        worst_s = worst_s.max(s);
    }
    Ok(LevelCheck { level, worst_decrease: worst_d, worst_slack: worst_s, n_points: 2 * n_samples })
}

/// Dense control grid over the box: about `target` points, endpoints included.
pub(crate) fn control_grid(sys: &dyn ControlSystem, target: usize) -> Vec<Vec<f64>> {
    let bx = sys.control_box();
    let m = bx.dim();
    let per = ((target as f64).powf(1.0 / m as f64).ceil() as usize).max(2);
    let total = per.pow(m as u32);
    (0..total)
        .map(|mut k| {
            (0..m)
                .map(|i| {
                    let j = k % per;
                    k /= per;
                    bx.lo()[i] + (bx.hi()[i] - bx.lo()[i]) * j as f64 / (per - 1) as f64
                })
                .collect()
        })
        .collect()
}

/// Largest over sampled `x` in `l_c` of `min_u <nu(x), f(x, u)>`, with
/// `nu = grad V_loc / |grad V_loc|`. Negative means the condition holds.
pub fn check_petrov(sys: &dyn ControlSystem, clf: &LocalClf, n_samples: usize, seed: u64) -> Result<f64> {
    let n = sys.state_dim();
    let grid = control_grid(sys, 1000);
    let mut rng = stream(seed, 2);
    let mut f = vec![0.0; n];
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n_samples {
        let xi = random_unit(&mut rng, n);
        let x = boundary_point(clf, &xi, clf.c)?;
        let g = clf.gradient_vec(&x);
        let gn = dot(&g, &g).sqrt();
        if !(gn > 1e-300) {
            return Err(Error::DegenerateGradient(x));
        }
        let nu: Vec<f64> = g.iter().map(|v| v / gn).collect();
        let mut best = f64::INFINITY;
        for u in grid.iter().chain(std::iter::once(&eval_extremal_control(sys, &x, &nu, 0.0))) {
            sys.dynamics(&x, u, &mut f);
            best = best.min(dot(&nu, &f));
        }
        worst = worst.max(best);
    }
    Ok(worst)
}
