//! Derivative-free minimization and scalar root finding.
//!
//! Powell's conjugate-direction method with a Brent line search, bisection,
//! and uniform-scan root bracketing. Non-finite objective values are mapped
//! to `+inf` inside line searches so that blown-up evaluations are avoided
//! rather than fatal; only a non-finite value at the starting point is
//! reported as [`Error::EvaluationFailure`].

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

const GOLD: f64 = 1.618_033_988_749_895;
const CGOLD: f64 = 0.381_966_011_250_105_1;
const GLIMIT: f64 = 100.0;
const TINY: f64 = 1e-20;
const ZEPS: f64 = 1e-18;
/// Fractional abscissa tolerance of the Brent line search.
pub const LINE_SEARCH_TOL: f64 = 3.0e-8;
pub const DEFAULT_MAX_CYCLES: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub argmin: Vec<f64>,
    pub fmin: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Sign-change interval for a scalar function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub a: f64,
    pub b: f64,
}

impl Bracket {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.a.min(self.b) && x <= self.a.max(self.b)
    }
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Downhill bracketing by golden-ratio expansion with parabolic steps.
/// Returns `(a, b, c, fb)` with `f(b) <= f(a)`, `f(b) <= f(c)`.
fn bracket_minimum<G: FnMut(f64) -> f64>(g: &mut G, a0: f64, b0: f64) -> (f64, f64, f64, f64) {
    let (mut ax, mut bx) = (a0, b0);
    let mut fa = g(ax);
    let mut fb = g(bx);
    if fb > fa {
        std::mem::swap(&mut ax, &mut bx);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut cx = bx + GOLD * (bx - ax);
    let mut fc = g(cx);
    let mut guard = 0;
    while fb > fc && guard < 200 {
        guard += 1;
        let r = (bx - ax) * (fb - fc);
        let q = (bx - cx) * (fb - fa);
        let mut u = bx - ((bx - cx) * q - (bx - ax) * r) / (2.0 * sign((q - r).abs().max(TINY), q - r));
        let ulim = bx + GLIMIT * (cx - bx);
        let mut fu;
        if !u.is_finite() {
            u = cx + GOLD * (cx - bx);
            fu = g(u);
        } else if (bx - u) * (u - cx) > 0.0 {
            fu = g(u);
            if fu < fc {
                return (bx, u, cx, fu);
            } else if fu > fb {
                return (ax, bx, u, fb);
            }
            u = cx + GOLD * (cx - bx);
            fu = g(u);
        } else if (cx - u) * (u - ulim) > 0.0 {
            fu = g(u);
            if fu < fc {
                bx = cx;
                cx = u;
                u = cx + GOLD * (cx - bx);
                fb = fc;
                fc = fu;
                fu = g(u);
            }
        } else if (u - ulim) * (ulim - cx) >= 0.0 {
            u = ulim;
            fu = g(u);
        } else {
            u = cx + GOLD * (cx - bx);
            fu = g(u);
        }
        ax = bx;
        bx = cx;
        cx = u;
        fa = fb;
        fb = fc;
        fc = fu;
    }
    let _ = fa;
    (ax, bx, cx, fb)
}

/// Brent's parabolic/golden minimization on a bracketing triple.
fn brent<G: FnMut(f64) -> f64>(g: &mut G, ax: f64, bx: f64, cx: f64, fbx: f64, tol: f64) -> (f64, f64) {
    let mut a = ax.min(cx);
    let mut b = ax.max(cx);
    let (mut x, mut w, mut v) = (bx, bx, bx);
    let (mut fx, mut fw, mut fv) = (fbx, fbx, fbx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..200 {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + ZEPS;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            if p.is_finite()
                && q.is_finite()
                && !(p.abs() >= (0.5 * q * etemp).abs() || p <= q * (a - x) || p >= q * (b - x))
            {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = sign(tol1, xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + sign(tol1, d) };
        let fu = g(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            w = x;
            x = u;
            fv = fw;
            fw = fx;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                w = u;
                fv = fw;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

/// Minimizes a scalar function starting from the bracketing guesses `a`, `b`.
pub fn line_minimize<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let mut g = |t: f64| finite_or_inf(f(t));
    let (ax, bx, cx, fb) = bracket_minimum(&mut g, a, b);
    brent(&mut g, ax, bx, cx, fb, tol)
}

/// Minimizes `objective` along `p + t d`; updates `p` in place and scales `d`
/// to the displacement actually taken.
fn linmin<F: FnMut(&[f64]) -> f64>(objective: &mut F, p: &mut [f64], d: &mut [f64], buf: &mut [f64]) -> f64 {
    let mut g = |t: f64| {
        for j in 0..p.len() {
            buf[j] = p[j] + t * d[j];
        }
        finite_or_inf(objective(buf))
    };
    let (ax, bx, cx, fb) = bracket_minimum(&mut g, 0.0, 1.0);
    let (t, fmin) = brent(&mut g, ax, bx, cx, fb, LINE_SEARCH_TOL);
    for j in 0..p.len() {
        p[j] += t * d[j];
        d[j] *= t;
    }
    fmin
}

/// Powell minimization with unit initial directions.
pub fn powell_minimize<F: FnMut(&[f64]) -> f64>(
    objective: F,
    x0: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<OptimResult> {
    powell_minimize_scaled(objective, x0, 1.0, tol, max_iters)
}

/// Powell's conjugate-direction method. The direction set starts (and is
/// reset every `k + 1` cycles) as the coordinate axes scaled by `step`.
/// Terminates when the fractional decrease over a full cycle is below `tol`.
pub fn powell_minimize_scaled<F: FnMut(&[f64]) -> f64>(
    mut objective: F,
    x0: &[f64],
    step: f64,
    tol: f64,
    max_iters: usize,
) -> Result<OptimResult> {
    let k = x0.len();
    if k == 0 {
        return Err(Error::InvalidParameter("powell: empty start point".into()));
    }
    if !(tol > 0.0) || !(step > 0.0) {
        return Err(Error::InvalidParameter("powell: tol and step must be positive".into()));
    }
    let reset = |dirs: &mut Vec<Vec<f64>>| {
        for (i, d) in dirs.iter_mut().enumerate() {
            d.iter_mut().for_each(|v| *v = 0.0);
            d[i] = step;
        }
    };
    let mut dirs = vec![vec![0.0; k]; k];
    reset(&mut dirs);

    let mut p = x0.to_vec();
    let mut fret = objective(&p);
    if !fret.is_finite() {
        return Err(Error::EvaluationFailure { point: p });
    }
    let mut pt = p.clone();
    let mut buf = vec![0.0; k];
    let mut xit = vec![0.0; k];
    let mut ptt = vec![0.0; k];

    for iter in 1..=max_iters {
        if iter > 1 && (iter - 1) % (k + 1) == 0 {
            reset(&mut dirs);
        }
        let fp = fret;
        let mut ibig = 0;
        let mut del = 0.0;
        for (i, dir) in dirs.iter_mut().enumerate() {
            let fptt = fret;
            fret = linmin(&mut objective, &mut p, dir, &mut buf);
            if fptt - fret > del {
                del = fptt - fret;
                ibig = i;
            }
        }
        if 2.0 * (fp - fret) <= tol * (fp.abs() + fret.abs()) + TINY {
            return Ok(OptimResult { argmin: p, fmin: fret, iterations: iter, converged: true });
        }
        for j in 0..k {
            ptt[j] = 2.0 * p[j] - pt[j];
            xit[j] = p[j] - pt[j];
            pt[j] = p[j];
        }
        let fptt = finite_or_inf(objective(&ptt));
        if fptt < fp {
            let t = 2.0 * (fp - 2.0 * fret + fptt) * (fp - fret - del).powi(2) - del * (fp - fptt).powi(2);
            if t < 0.0 {
                fret = linmin(&mut objective, &mut p, &mut xit, &mut buf);
                dirs[ibig] = dirs[k - 1].clone();
                dirs[k - 1] = xit.clone();
            }
        }
    }
    Ok(OptimResult { argmin: p, fmin: fret, iterations: max_iters, converged: false })
}

/// Root of a sign-changing function by bisection; the returned point is the
/// midpoint of a final sign-change interval no wider than `tol`.
pub fn bisect<F: FnMut(f64) -> f64>(mut objective: F, bracket: Bracket, tol: f64) -> Result<f64> {
    let (mut a, mut b) = (bracket.a.min(bracket.b), bracket.a.max(bracket.b));
    let fa = objective(a);
    let fb = objective(b);
    if !(fa * fb <= 0.0) {
        return Err(Error::Bracket { a, b, fa, fb });
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    let mut fa_pos = fa > 0.0;
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = objective(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm > 0.0) == fa_pos {
            a = mid;
            fa_pos = fm > 0.0;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// Scans `n_segments` equal subintervals of `[lo, hi]` and returns those
/// where the function changes sign, in ascending order. A zero located
/// exactly on a scan node is reported once, in the interval ending there.
pub fn zbrak<F: FnMut(f64) -> f64>(mut objective: F, lo: f64, hi: f64, n_segments: usize) -> Vec<Bracket> {
    let mut out = Vec::new();
    if !(lo < hi) || n_segments == 0 {
        return out;
    }
    let dx = (hi - lo) / n_segments as f64;
    let mut x_prev = lo;
    let mut fp = objective(lo);
    for i in 1..=n_segments {
        let x = if i == n_segments { hi } else { lo + i as f64 * dx };
        let fc = objective(x);
        if fp * fc < 0.0 || fc == 0.0 || (i == 1 && fp == 0.0) {
            out.push(Bracket::new(x_prev, x));
        }
        x_prev = x;
        fp = fc;
    }
    out
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - (b - a) / GOLD;
    let mut x2 = a + (b - a) / GOLD;
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (b - a).abs() > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - (b - a) / GOLD;
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + (b - a) / GOLD;
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}
