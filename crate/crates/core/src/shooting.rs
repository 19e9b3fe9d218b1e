//! Auxiliary shooting problem: over launch directions `xi` on the unit sphere
//! and the admissible multipliers `ptilde`, find the reverse characteristic
//! that passes closest to a query state.

use crate::characteristics::{hamiltonian, reverse_observed, reverse_seed, ExitParams, Target};
use crate::integrator::IntegratorConfig;
use crate::numerics::{bisect, powell_minimize_scaled, zbrak};
use crate::par::{map_indexed, Execution};
use crate::rng::stream;
use crate::system::ControlSystem;
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Unit vector from `n - 1` angles:
/// `xi_1 = prod sin(theta_i)`, `xi_j = cos(theta_{j-1}) prod_{i >= j} sin(theta_i)`,
/// `xi_n = cos(theta_{n-1})`. Defined for all real angles.
pub fn sphere_from_angles(n: usize, theta: &[f64]) -> Vec<f64> {
    if n <= 1 {
        return vec![1.0];
    }
    debug_assert_eq!(theta.len(), n - 1);
    let mut xi = vec![0.0; n];
    // tail[j] = prod_{k >= j} sin(theta[k])
    let mut tail = vec![1.0; n];
    for k in (0..n - 1).rev() {
        tail[k] = tail[k + 1] * theta[k].sin();
    }
    xi[0] = tail[0];
    for j in 1..n {
        xi[j] = theta[j - 1].cos() * tail[j];
    }
    xi
}

/// Inverse of [`sphere_from_angles`] with `theta_1` in `[0, 2 pi)` and the
/// other angles in `[0, pi]`.
pub fn angles_from_sphere(xi: &[f64]) -> Vec<f64> {
    let n = xi.len();
    if n <= 1 {
        return vec![];
    }
    let mut theta = vec![0.0; n - 1];
    let mut r2: f64 = xi[0] * xi[0] + xi[1] * xi[1];
    let mut t1 = xi[0].atan2(xi[1]);
    if t1 < 0.0 {
        t1 += 2.0 * PI;
    }
    theta[0] = t1;
    for j in 2..n {
        theta[j - 1] = r2.sqrt().atan2(xi[j]);
        r2 += xi[j] * xi[j];
    }
    theta
}

/// Roots in `(0, 1)` of `ptilde -> H(x_launch, sqrt(1 - ptilde^2) nu, ptilde)`,
/// ascending.
pub fn terminal_multiplier_roots(sys: &dyn ControlSystem, target: &Target, xi: &[f64]) -> Result<Vec<f64>> {
    let x = target.launch_state(xi)?;
    let nu = target.normal(&x)?;
    let mut p = vec![0.0; nu.len()];
    let mut phi = |pt: f64| {
        let k = (1.0 - pt * pt).max(0.0).sqrt();
        for (pi, ni) in p.iter_mut().zip(&nu) {
            *pi = k * ni;
        }
        hamiltonian(sys, &x, &p, pt)
    };
    let mut roots = Vec::new();
    for br in zbrak(&mut phi, 0.0, 1.0, 100) {
        let r = bisect(&mut phi, br, 1e-13)?;
        if r > 0.0 && r < 1.0 {
            roots.push(r);
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup();
    Ok(roots)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShootingParams {
    pub n_guesses: usize,
    pub seed: u64,
    pub powell_tol: f64,
    pub max_iters: usize,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for ShootingParams {
    fn default() -> Self {
        Self { n_guesses: 4, seed: 0, powell_tol: 1e-8, max_iters: 200, exec: Execution::Sequential }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingResult {
    pub angles: Vec<f64>,
    pub xi: Vec<f64>,
    pub ptilde_root: f64,
    pub tau_star: f64,
    pub x_hat: Vec<f64>,
    pub p_hat: Vec<f64>,
    /// Accumulated running cost from the launch point to `x_hat`.
    pub cost_to_launch: f64,
    pub deviation: f64,
}

/// Output node of a reverse characteristic: time, `(x, p, cost)`, squared distance.
#[derive(Debug, Clone)]
struct Node {
    t: f64,
    y: Vec<f64>,
    d2: f64,
}

/// Closest approach of one reverse characteristic.
#[derive(Debug, Clone)]
struct Approach {
    tau: f64,
    y: Vec<f64>,
    d2: f64,
}

/// Tracks the grid minimum of the squared distance together with its two
/// neighbours, then refines by a parabola through the three nodes.
#[derive(Default)]
struct Tracker {
    prev: Option<Node>,
    best: Option<(Option<Node>, Node, Option<Node>)>,
    awaiting_next: bool,
}

impl Tracker {
    fn observe(&mut self, t: f64, y: &[f64], x0: &[f64]) {
        let n = x0.len();
        let d2: f64 = y[..n].iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum();
        let node = Node { t, y: y.to_vec(), d2 };
        if self.awaiting_next {
            if let Some(b) = self.best.as_mut() {
                if d2 >= b.1.d2 {
                    b.2 = Some(node.clone());
                    self.awaiting_next = false;
                }
            }
        }
        if self.best.as_ref().map_or(true, |b| d2 < b.1.d2) {
            self.best = Some((self.prev.take(), node.clone(), None));
            self.awaiting_next = true;
        }
        self.prev = Some(node);
    }

    fn finish(self, x0: &[f64]) -> Option<Approach> {
        let (prev, mid, next) = self.best?;
        let n = x0.len();
        let fallback = Approach { tau: mid.t, y: mid.y.clone(), d2: mid.d2 };
        let (Some(a), Some(c)) = (prev, next) else { return Some(fallback) };
        let (t0, t1, t2) = (a.t, mid.t, c.t);
        let (d0, d1, d2) = (a.d2, mid.d2, c.d2);
        let num = (t1 - t0).powi(2) * (d1 - d2) - (t1 - t2).powi(2) * (d1 - d0);
        let den = (t1 - t0) * (d1 - d2) - (t1 - t2) * (d1 - d0);
        if den == 0.0 || !den.is_finite() {
            return Some(fallback);
        }
        let tau = t1 - 0.5 * num / den;
        if !(tau > t0 && tau < t2) {
            return Some(fallback);
        }
        // quadratic Lagrange interpolation of (x, p, cost) at tau
        let l0 = (tau - t1) * (tau - t2) / ((t0 - t1) * (t0 - t2));
        let l1 = (tau - t0) * (tau - t2) / ((t1 - t0) * (t1 - t2));
        let l2 = (tau - t0) * (tau - t1) / ((t2 - t0) * (t2 - t1));
        let y: Vec<f64> = (0..a.y.len()).map(|i| l0 * a.y[i] + l1 * mid.y[i] + l2 * c.y[i]).collect();
        let dev2: f64 = y[..n].iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum();
        if dev2 <= d1 {
            Some(Approach { tau, y, d2: dev2 })
        } else {
            Some(fallback)
        }
    }
}

/// Closest approach to `x0` over all multiplier roots for direction `xi`.
fn closest_approach(
    sys: &dyn ControlSystem,
    target: &Target,
    x0: &[f64],
    xi: &[f64],
    exit: &ExitParams,
    config: &IntegratorConfig,
) -> Option<(f64, Approach)> {
    let roots = terminal_multiplier_roots(sys, target, xi).ok()?;
    let mut best: Option<(f64, Approach)> = None;
    for r in roots {
        let Ok((xs, ps)) = reverse_seed(target, xi, r) else { continue };
        let mut tr = Tracker::default();
        let (status, _) = reverse_observed(sys, &xs, &ps, r, exit, config, |t, y| {
            tr.observe(t, y, x0);
            true
        });
        let _ = status;
        if let Some(ap) = tr.finish(x0) {
            if best.as_ref().map_or(true, |(_, b)| ap.d2 < b.d2) {
                best = Some((r, ap));
            }
        }
    }
    best
}

fn angle_dim(n: usize) -> usize {
    n.saturating_sub(1)
}

/// Multistart Powell search over launch angles minimizing the squared
/// closest-approach distance of reverse characteristics to `x0`.
pub fn solve_shooting(
    sys: &dyn ControlSystem,
    target: &Target,
    x0: &[f64],
    params: &ShootingParams,
    exit: &ExitParams,
    config: &IntegratorConfig,
) -> Result<ShootingResult> {
    exit.validate()?;
    let n = sys.state_dim();
    if x0.len() != n {
        return Err(Error::InvalidParameter("query state has wrong dimension".into()));
    }
    if params.n_guesses == 0 {
        return Err(Error::InvalidParameter("n_guesses must be positive".into()));
    }
    let objective = |theta: &[f64]| -> f64 {
        let xi = sphere_from_angles(n, theta);
        closest_approach(sys, target, x0, &xi, exit, config).map_or(f64::INFINITY, |(_, a)| a.d2)
    };

    let candidates: Vec<Option<(Vec<f64>, f64)>> = if n == 1 {
        [1.0, -1.0]
            .iter()
            .map(|s| {
                closest_approach(sys, target, x0, &[*s], exit, config).map(|(_, a)| (vec![if *s > 0.0 { 0.0 } else { PI }], a.d2))
            })
            .collect()
    } else {
        map_indexed(params.n_guesses, params.exec, |g| {
            let mut rng = stream(params.seed, g as u64);
            let theta0: Vec<f64> = (0..angle_dim(n))
                .map(|j| if j == 0 { rng.random_range(0.0..2.0 * PI) } else { rng.random_range(0.0..=PI) })
                .collect();
            powell_minimize_scaled(objective, &theta0, 0.5, params.powell_tol, params.max_iters)
                .ok()
                .map(|r| (r.argmin, r.fmin))
        })
    };
    let best = candidates
        .into_iter()
        .flatten()
        .filter(|(_, f)| f.is_finite())
        .fold(None::<(Vec<f64>, f64)>, |acc, c| match acc {
            Some(a) if a.1 <= c.1 => Some(a),
            _ => Some(c),
        })
        .ok_or(Error::ShootingFailed)?;

    let (angles, xi) = if n == 1 {
        let s = if best.0[0] == 0.0 { 1.0 } else { -1.0 };
        (vec![], vec![s])
    } else {
        (best.0.clone(), sphere_from_angles(n, &best.0))
    };
    let (root, ap) = closest_approach(sys, target, x0, &xi, exit, config).ok_or(Error::ShootingFailed)?;
    Ok(ShootingResult {
        angles,
        xi,
        ptilde_root: root,
        tau_star: ap.tau,
        x_hat: ap.y[..n].to_vec(),
        p_hat: ap.y[n..2 * n].to_vec(),
        cost_to_launch: ap.y[2 * n],
        deviation: ap.d2.sqrt(),
    })
}

/// `p_hat / ptilde`, the costate guess for the main problem.
pub fn costate_guess(res: &ShootingResult) -> Vec<f64> {
    res.p_hat.iter().map(|v| v / res.ptilde_root).collect()
}
