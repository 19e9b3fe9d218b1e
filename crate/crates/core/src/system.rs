//! Control-system model `x' = f(x, u)`, `u` in a box `U`, with running cost
//! `g(x, u) >= 0`, plus the two built-in benchmark systems.
//!
//! Vectors are plain slices. Jacobians are written row-major:
//! `jac[i * n + j] = d f_i / d x_j`.

use crate::numerics::{golden_section, powell_minimize_scaled};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Axis-aligned box `[lo_1, hi_1] x ... x [lo_m, hi_m]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxControlSet {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxControlSet {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::InvalidParameter("control box bounds must be non-empty and of equal length".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::InvalidParameter("control box requires finite lo <= hi".into()));
        }
        Ok(Self { lo, hi })
    }

    /// `[-a_1, a_1] x ... x [-a_m, a_m]`.
    pub fn symmetric(half_widths: &[f64]) -> Result<Self> {
        Self::new(half_widths.iter().map(|a| -a).collect(), half_widths.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn clamp_in_place(&self, u: &mut [f64]) {
        for ((v, l), h) in u.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn clamp(&self, u: &[f64]) -> Vec<f64> {
        let mut v = u.to_vec();
        self.clamp_in_place(&mut v);
        v
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        u.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| *v >= l - tol && *v <= h + tol)
    }

    /// Largest componentwise violation (`<= 0` inside the box).
    pub fn violation(&self, u: &[f64]) -> f64 {
        u.iter()
            .zip(&self.lo)
            .zip(&self.hi)
            .map(|((v, l), h)| (l - v).max(v - h))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    /// Vertex number `k`: bit `i` of `k` selects `hi_i` over `lo_i`.
    pub fn corner(&self, k: usize) -> Vec<f64> {
        (0..self.dim()).map(|i| if (k >> i) & 1 == 1 { self.hi[i] } else { self.lo[i] }).collect()
    }

    /// Point of coordinate `i` closest to zero.
    fn closest_to_zero(&self, i: usize) -> f64 {
        0.0f64.clamp(self.lo[i], self.hi[i])
    }
}

/// Time-invariant control system with running cost.
///
/// Implementations are immutable and shared across threads.
pub trait ControlSystem: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn control_box(&self) -> &BoxControlSet;
    fn dynamics(&self, x: &[f64], u: &[f64], out: &mut [f64]);
    fn running_cost(&self, x: &[f64], u: &[f64]) -> f64;

    fn control_dim(&self) -> usize {
        self.control_box().dim()
    }

    fn jac_dynamics_x(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        fd_jac_dynamics_x(self, x, u, out);
    }

    fn jac_cost_x(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        fd_jac_cost_x(self, x, u, out);
    }

    /// Closed-form minimizer of `<p, f(x, u)> + ptilde g(x, u)` over the box.
    /// Returns `false` when the system has none.
    fn extremal_control_closed_form(&self, _x: &[f64], _p: &[f64], _ptilde: f64, _out: &mut [f64]) -> bool {
        false
    }

    /// Whether the Hamiltonian is a sum of functions of single control coordinates.
    fn hamiltonian_separable_in_control(&self) -> bool {
        false
    }

    /// Label of the smooth piece of `(x, p, ptilde) -> u*` containing the
    /// argument, if the system knows its kinks better than the generic
    /// saturation pattern does.
    fn control_regime_hint(&self, _x: &[f64], _p: &[f64], _ptilde: f64) -> Option<u64> {
        None
    }
}

/// Label of the smooth piece of the extremal control. Defaults to the
/// pattern of coordinates sitting at their lower or upper bound.
pub fn control_regime(sys: &dyn ControlSystem, x: &[f64], p: &[f64], ptilde: f64, scratch: &mut [f64]) -> u64 {
    if let Some(r) = sys.control_regime_hint(x, p, ptilde) {
        return r;
    }
    extremal_control_into(sys, x, p, ptilde, scratch);
    let bx = sys.control_box();
    scratch.iter().enumerate().fold(0u64, |acc, (i, &u)| {
        let code = if u <= bx.lo()[i] {
            0
        } else if u >= bx.hi()[i] {
            2
        } else {
            1
        };
        acc.wrapping_mul(3).wrapping_add(code)
    })
}

fn fd_step(v: f64) -> f64 {
    1e-6 * (1.0 + v.abs())
}

/// Central-difference state Jacobian of the dynamics.
pub fn fd_jac_dynamics_x<S: ControlSystem + ?Sized>(sys: &S, x: &[f64], u: &[f64], out: &mut [f64]) {
    let n = sys.state_dim();
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let h = fd_step(x[j]);
        xp[j] = x[j] + h;
        sys.dynamics(&xp, u, &mut fp);
        xp[j] = x[j] - h;
        sys.dynamics(&xp, u, &mut fm);
        xp[j] = x[j];
        for i in 0..n {
            out[i * n + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
}

/// Central-difference state gradient of the running cost.
pub fn fd_jac_cost_x<S: ControlSystem + ?Sized>(sys: &S, x: &[f64], u: &[f64], out: &mut [f64]) {
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = fd_step(x[j]);
        xp[j] = x[j] + h;
        let gp = sys.running_cost(&xp, u);
        xp[j] = x[j] - h;
        let gm = sys.running_cost(&xp, u);
        xp[j] = x[j];
        out[j] = (gp - gm) / (2.0 * h);
    }
}

/// `H(x, u, p, ptilde) = <p, f(x, u)> + ptilde g(x, u)` at a given control.
pub fn hamiltonian_at(sys: &dyn ControlSystem, x: &[f64], u: &[f64], p: &[f64], ptilde: f64) -> f64 {
    let mut f = vec![0.0; sys.state_dim()];
    sys.dynamics(x, u, &mut f);
    dot(p, &f) + ptilde * sys.running_cost(x, u)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// An element of `Arg min_{u in U} H(x, u, p, ptilde)`.
pub fn eval_extremal_control(sys: &dyn ControlSystem, x: &[f64], p: &[f64], ptilde: f64) -> Vec<f64> {
    let mut u = vec![0.0; sys.control_dim()];
    extremal_control_into(sys, x, p, ptilde, &mut u);
    u
}

/// In-place variant of [`eval_extremal_control`].
pub fn extremal_control_into(sys: &dyn ControlSystem, x: &[f64], p: &[f64], ptilde: f64, out: &mut [f64]) {
    if sys.extremal_control_closed_form(x, p, ptilde, out) {
        return;
    }
    if sys.hamiltonian_separable_in_control() {
        separable_fallback(sys, x, p, ptilde, out);
    } else {
        powell_fallback(sys, x, p, ptilde, out);
    }
}

/// Smallest norm first, then lexicographic.
fn prefer(a: &[f64], b: &[f64]) -> bool {
    let (na, nb) = (dot(a, a), dot(b, b));
    if na != nb {
        return na < nb;
    }
    a.iter().zip(b).find(|(x, y)| x != y).map(|(x, y)| x < y).unwrap_or(false)
}

fn separable_fallback(sys: &dyn ControlSystem, x: &[f64], p: &[f64], ptilde: f64, out: &mut [f64]) {
    const SCAN: usize = 64;
    let bx = sys.control_box();
    let mut u = bx.center();
    for i in 0..bx.dim() {
        let (lo, hi) = (bx.lo()[i], bx.hi()[i]);
        if lo == hi {
            out[i] = lo;
            continue;
        }
        let mut h = |s: f64| {
            u[i] = s;
            hamiltonian_at(sys, x, &u, p, ptilde)
        };
        let grid: Vec<f64> = (0..=SCAN).map(|k| lo + (hi - lo) * k as f64 / SCAN as f64).collect();
        let vals: Vec<f64> = grid.iter().map(|&s| h(s)).collect();
        let (kmin, vmin) = vals
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bk, bv), (k, &v)| if v < bv { (k, v) } else { (bk, bv) });
        let vmax = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let best = if vmax - vmin <= 1e-14 * vmax.abs().max(1.0) {
            // flat in this coordinate: every point is extremal
            bx.closest_to_zero(i)
        } else {
            let a = grid[kmin.saturating_sub(1)];
            let b = grid[(kmin + 1).min(SCAN)];
            let (s, hs) = golden_section(&mut h, a, b, 1e-12 * (hi - lo));
            if hs <= vmin {
                s
            } else {
                grid[kmin]
            }
        };
        u[i] = best;
        out[i] = best;
    }
}

fn powell_fallback(sys: &dyn ControlSystem, x: &[f64], p: &[f64], ptilde: f64, out: &mut [f64]) {
    let bx = sys.control_box();
    let m = bx.dim();
    let width = bx.lo().iter().zip(bx.hi()).map(|(l, h)| h - l).fold(0.0, f64::max).max(1e-12);
    let mut starts = vec![bx.center()];
    let n_corners = (1usize << m.min(16)).min(4);
    for k in 0..n_corners {
        starts.push(bx.corner(k));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for s in starts {
        let obj = |u: &[f64]| {
            let c = bx.clamp(u);
            let pen: f64 = u.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
            hamiltonian_at(sys, x, &c, p, ptilde) + pen
        };
        let Ok(r) = powell_minimize_scaled(obj, &s, 0.25 * width, 1e-12, 200) else { continue };
        let cand = bx.clamp(&r.argmin);
        let h = hamiltonian_at(sys, x, &cand, p, ptilde);
        let replace = match &best {
            None => true,
            Some((hb, ub)) => {
                let tol = 1e-12 * hb.abs().max(1.0);
                h < hb - tol || ((h - hb).abs() <= tol && prefer(&cand, ub))
            }
        };
        if replace {
            best = Some((h, cand));
        }
    }
    let u = best.map(|b| b.1).unwrap_or_else(|| bx.center());
    out.copy_from_slice(&u);
}

/// Two-dimensional benchmark: `f = (x1 + 2 x2 + u, -x2 - 2 x1^3)`,
/// `g = 2 x1^4 + x2^2 + u^4 / 256`, `U = [-a, a]`.
#[derive(Debug, Clone)]
pub struct Example2d {
    a: f64,
    control_box: BoxControlSet,
}

pub fn make_example_2d(a: f64) -> Result<Example2d> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::InvalidParameter(format!("control bound a must be positive, got {a}")));
    }
    Ok(Example2d { a, control_box: BoxControlSet::symmetric(&[a])? })
}

impl Example2d {
    pub fn control_bound(&self) -> f64 {
        self.a
    }
}

impl ControlSystem for Example2d {
    fn name(&self) -> &str {
        "example2d"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn control_box(&self) -> &BoxControlSet {
        &self.control_box
    }

    fn dynamics(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = x[0] + 2.0 * x[1] + u[0];
        out[1] = -x[1] - 2.0 * x[0].powi(3);
    }

    fn running_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        2.0 * x[0].powi(4) + x[1] * x[1] + u[0].powi(4) / 256.0
    }

    fn jac_dynamics_x(&self, x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        out[1] = 2.0;
        out[2] = -6.0 * x[0] * x[0];
        out[3] = -1.0;
    }

    fn jac_cost_x(&self, x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 8.0 * x[0].powi(3);
        out[1] = 2.0 * x[1];
    }

    fn extremal_control_closed_form(&self, _x: &[f64], p: &[f64], ptilde: f64, out: &mut [f64]) -> bool {
        let a = self.a;
        let p1 = p[0];
        out[0] = if ptilde > 0.0 {
            // u -> p1 u + ptilde u^4 / 256 is strictly convex
            let phi = |u: f64| p1 * u + ptilde * u.powi(4) / 256.0;
            let stationary = (-(64.0 * p1 / ptilde).cbrt()).clamp(-a, a);
            [stationary, -a, a]
                .into_iter()
                .fold((f64::INFINITY, 0.0f64), |(bv, bu), u| {
                    let v = phi(u);
                    if v < bv || (v == bv && u.abs() < bu.abs()) {
                        (v, u)
                    } else {
                        (bv, bu)
                    }
                })
                .1
        } else if p1 > 0.0 {
            -a
        } else if p1 < 0.0 {
            a
        } else {
            0.0
        };
        true
    }

    fn hamiltonian_separable_in_control(&self) -> bool {
        true
    }

    fn control_regime_hint(&self, _x: &[f64], p: &[f64], ptilde: f64) -> Option<u64> {
        // the cube root has a vertical tangent at p1 = 0
        let s = if ptilde > 0.0 { -(64.0 * p[0] / ptilde).cbrt() } else { -p[0] };
        let a = self.a;
        Some(if ptilde > 0.0 && s <= -a || ptilde <= 0.0 && s < 0.0 {
            0
        } else if s < 0.0 {
            1
        } else if ptilde > 0.0 && s < a || ptilde <= 0.0 && s == 0.0 {
            2
        } else {
            3
        })
    }
}

/// Planar vertical takeoff and landing aircraft with box thrust/moment
/// constraints and quadratic running cost.
#[derive(Debug, Clone)]
pub struct Pvtol {
    alpha: f64,
    lam1: f64,
    lam2: f64,
    control_box: BoxControlSet,
}

pub fn make_pvtol(alpha: f64, a1: f64, a2: f64, lam1: f64, lam2: f64) -> Result<Pvtol> {
    for (name, v) in [("alpha", alpha), ("a1", a1), ("a2", a2), ("lambda1", lam1), ("lambda2", lam2)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(Pvtol { alpha, lam1, lam2, control_box: BoxControlSet::symmetric(&[a1, a2])? })
}

impl Pvtol {
    /// Coefficients of `u1`, `u2` in `<p, f(x, u)>`.
    fn control_coefficients(&self, x: &[f64], p: &[f64]) -> (f64, f64) {
        let (s, c) = x[4].sin_cos();
        let b1 = -p[1] * s + p[3] * c;
        let b2 = self.alpha * (p[1] * c + p[3] * s) + p[5];
        (b1, b2)
    }
}

impl ControlSystem for Pvtol {
    fn name(&self) -> &str {
        "pvtol"
    }

    fn state_dim(&self) -> usize {
        6
    }

    fn control_box(&self) -> &BoxControlSet {
        &self.control_box
    }

    fn dynamics(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let (s, c) = x[4].sin_cos();
        let thrust = 1.0 + u[0];
        out[0] = x[1];
        out[1] = -thrust * s + self.alpha * u[1] * c;
        out[2] = x[3];
        out[3] = thrust * c + self.alpha * u[1] * s - 1.0;
        out[4] = x[5];
        out[5] = u[1];
    }

    fn running_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        0.5 * self.lam1 * dot(x, x) + 0.5 * self.lam2 * dot(u, u)
    }

    fn jac_dynamics_x(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let (s, c) = x[4].sin_cos();
        let thrust = 1.0 + u[0];
        out.iter_mut().for_each(|v| *v = 0.0);
        out[1] = 1.0;
        out[6 + 4] = -thrust * c - self.alpha * u[1] * s;
        out[2 * 6 + 3] = 1.0;
        out[3 * 6 + 4] = -thrust * s + self.alpha * u[1] * c;
        out[4 * 6 + 5] = 1.0;
    }

    fn jac_cost_x(&self, x: &[f64], _u: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = self.lam1 * v;
        }
    }

    fn extremal_control_closed_form(&self, x: &[f64], p: &[f64], ptilde: f64, out: &mut [f64]) -> bool {
        let (b1, b2) = self.control_coefficients(x, p);
        let bx = &self.control_box;
        for (i, b) in [b1, b2].into_iter().enumerate() {
            let (lo, hi) = (bx.lo()[i], bx.hi()[i]);
            out[i] = if ptilde > 0.0 {
                (-b / (ptilde * self.lam2)).clamp(lo, hi)
            } else if b > 0.0 {
                lo
            } else if b < 0.0 {
                hi
            } else {
                0.0
            };
        }
        true
    }

    fn hamiltonian_separable_in_control(&self) -> bool {
        true
    }
}

type DynFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
type CostFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// User-defined system from closures; Jacobians by central differences and
/// extremal controls by the generic numerical search.
pub struct FnSystem {
    name: String,
    n: usize,
    control_box: BoxControlSet,
    dynamics: Box<DynFn>,
    cost: Box<CostFn>,
    separable: bool,
}

impl FnSystem {
    pub fn new<F, G>(name: &str, n: usize, control_box: BoxControlSet, dynamics: F, cost: G) -> Result<Self>
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        G: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        if n == 0 {
            return Err(Error::InvalidParameter("state dimension must be positive".into()));
        }
        Ok(Self {
            name: name.to_string(),
            n,
            control_box,
            dynamics: Box::new(dynamics),
            cost: Box::new(cost),
            separable: false,
        })
    }

    /// Declares the Hamiltonian separable in the control coordinates, which
    /// switches the extremal search to per-coordinate golden section.
    pub fn separable(mut self, yes: bool) -> Self {
        self.separable = yes;
        self
    }
}

impl ControlSystem for FnSystem {
    fn name(&self) -> &str {
        &self.name
    }

    fn state_dim(&self) -> usize {
        self.n
    }

    fn control_box(&self) -> &BoxControlSet {
        &self.control_box
    }

    fn dynamics(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.dynamics)(x, u, out)
    }

    fn running_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        (self.cost)(x, u)
    }

    fn hamiltonian_separable_in_control(&self) -> bool {
        self.separable
    }
}
