//! Per-state evaluation of the Kruzhkov-transformed global CLF `v = 1 - exp(-V)`
//! and of the stabilizing control action.
//!
//! Outside the target the pipeline is: reverse-time shooting for a costate
//! guess, Powell over the initial costate of forward characteristics (with the
//! terminal multiplier fixed to 1), one rerun with a longer horizon and more
//! shooting guesses if the cost saturates, and finally a first-order estimate
//! from the closest shooting state.

use crate::characteristics::{forward_cost, CostQuadrature, ExitParams, ExitStatus, ExitTag, Target};
use crate::integrator::IntegratorConfig;
use crate::local_clf::LocalClf;
use crate::numerics::powell_minimize;
use crate::par::{map_indexed, Execution};
use crate::rng::sub_seed;
use crate::shooting::{costate_guess, solve_shooting, ShootingParams, ShootingResult};
use crate::system::{dot, eval_extremal_control, ControlSystem};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    pub t_max: f64,
    pub t_max_recompute: f64,
    pub n_guesses: usize,
    pub n_guesses_recompute: usize,
    pub eps: f64,
    /// Threshold of the inner domain estimate `v < 1 - eps1`.
    pub eps1: f64,
    /// Largest shooting deviation admitting the first-order estimate.
    pub delta1: f64,
    /// Largest `|v1 - v(x_hat)|` accepted by the first-order estimate.
    pub delta2: f64,
    pub powell_tol_main: f64,
    pub powell_tol_aux: f64,
    pub max_iters_main: usize,
    pub max_iters_aux: usize,
    /// Box that stops reverse characteristics; `None` lets them run to the horizon.
    pub reverse_box: Option<Vec<[f64; 2]>>,
    pub cost_quadrature: CostQuadrature,
    pub integrator: IntegratorConfig,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            t_max: 10.0,
            t_max_recompute: 20.0,
            n_guesses: 4,
            n_guesses_recompute: 5,
            eps: 1e-15,
            eps1: 0.005,
            delta1: 0.005,
            delta2: 0.005,
            powell_tol_main: 1e-6,
            powell_tol_aux: 1e-8,
            max_iters_main: 200,
            max_iters_aux: 200,
            reverse_box: None,
            cost_quadrature: CostQuadrature::ExtraState,
            integrator: IntegratorConfig::default(),
        }
    }
}

impl EvalParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.t_max > 0.0) || !(self.t_max_recompute >= self.t_max) {
            return bad("need 0 < t_max <= t_max_recompute");
        }
        if self.n_guesses == 0 || self.n_guesses_recompute < self.n_guesses {
            return bad("need 0 < n_guesses <= n_guesses_recompute");
        }
        if !(self.eps > 0.0 && self.eps <= self.eps1 && self.eps1 < 1.0) {
            return bad("need 0 < eps <= eps1 < 1");
        }
        if !(self.delta1 > 0.0) || !(self.delta2 > 0.0) {
            return bad("delta1 and delta2 must be positive");
        }
        if !(self.powell_tol_main > 0.0) || !(self.powell_tol_aux > 0.0) {
            return bad("Powell tolerances must be positive");
        }
        self.integrator.validate()
    }

    /// Exit rules of characteristics launched with horizon `t_max`.
    pub fn exit(&self, t_max: f64) -> ExitParams {
        ExitParams {
            t_max,
            eps: self.eps,
            bounding_box: self.reverse_box.clone(),
            cost_quadrature: self.cost_quadrature,
        }
    }

    /// Largest representable value `1 - eps`.
    pub fn v_saturated(&self) -> f64 {
        1.0 - self.eps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum ValueStatus {
    InTarget,
    Solved,
    ReplacedFirstOrder,
    Saturated,
}

impl ValueStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            ValueStatus::InTarget => "in_target",
            ValueStatus::Solved => "solved",
            ValueStatus::ReplacedFirstOrder => "replaced_first_order",
            ValueStatus::Saturated => "saturated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueResult {
    /// Kruzhkov value `1 - exp(-V)`.
    pub v: f64,
    /// `V`; infinite when saturated.
    pub value: f64,
    pub control: Vec<f64>,
    pub costate: Option<Vec<f64>>,
    pub status: ValueStatus,
    pub shooting_error: f64,
    pub shooting_time: f64,
    pub replacement_indicator: f64,
    /// Target-entry time of the optimal forward characteristic (0 inside the target).
    pub exit_time: Option<f64>,
}

/// Outcome of the main costate optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct MainSolution {
    pub v: f64,
    pub p0: Vec<f64>,
    pub exit: ExitStatus,
}

/// Minimizes the Kruzhkov cost of forward characteristics from `x0` over the
/// initial costate, with the terminal multiplier fixed to 1.
pub fn solve_main(
    sys: &dyn ControlSystem,
    target: &Target,
    x0: &[f64],
    p0_init: &[f64],
    t_max: f64,
    params: &EvalParams,
) -> Result<MainSolution> {
    let exit = params.exit(t_max);
    exit.validate()?;
    if target.contains(x0) {
        return Err(Error::InvalidParameter("main problem needs x0 outside the target".into()));
    }
    let config = &params.integrator;
    let objective = |p: &[f64]| forward_cost(sys, target, x0, p, 1.0, &exit, config).map_or(f64::INFINITY, |r| r.0);
    let opt = powell_minimize(objective, p0_init, params.powell_tol_main, params.max_iters_main)?;
    let (v, status) = forward_cost(sys, target, x0, &opt.argmin, 1.0, &exit, config)?;
    Ok(MainSolution { v, p0: opt.argmin, exit: status })
}

fn kruzhkov_inverse(v: f64) -> f64 {
    -(1.0 - v).ln()
}

/// Evaluates the global CLF with target `Omega_c` of `clf`.
pub fn evaluate_state(
    sys: &dyn ControlSystem,
    clf: &LocalClf,
    x0: &[f64],
    params: &EvalParams,
    seed: u64,
) -> Result<ValueResult> {
    params.validate()?;
    if clf.in_target(x0) {
        let value = clf.value(x0);
        return Ok(ValueResult {
            v: 1.0 - (-value).exp(),
            value,
            control: clf.feedback_vec(x0, sys.control_dim()),
            costate: Some(clf.gradient_vec(x0)),
            status: ValueStatus::InTarget,
            shooting_error: 0.0,
            shooting_time: 0.0,
            replacement_indicator: 0.0,
            exit_time: Some(0.0),
        });
    }
    pipeline(sys, &Target::Sublevel(clf), x0, params, seed)
}

/// Evaluates the ball-target value `V_delta` (terminal cost 0).
pub fn evaluate_state_ball(
    sys: &dyn ControlSystem,
    delta: f64,
    x0: &[f64],
    params: &EvalParams,
    seed: u64,
) -> Result<ValueResult> {
    params.validate()?;
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!("ball radius must be positive, got {delta}")));
    }
    let target = Target::ball(delta);
    if target.contains(x0) {
        let bx = sys.control_box();
        return Ok(ValueResult {
            v: 0.0,
            value: 0.0,
            control: bx.clamp(&vec![0.0; sys.control_dim()]),
            costate: None,
            status: ValueStatus::InTarget,
            shooting_error: 0.0,
            shooting_time: 0.0,
            replacement_indicator: 0.0,
            exit_time: Some(0.0),
        });
    }
    pipeline(sys, &target, x0, params, seed)
}

/// One shooting + main-problem attempt.
struct Attempt {
    shot: Option<ShootingResult>,
    p_init: Vec<f64>,
    main: MainSolution,
}

fn attempt(
    sys: &dyn ControlSystem,
    target: &Target,
    x0: &[f64],
    params: &EvalParams,
    t_max: f64,
    n_guesses: usize,
    seed: u64,
) -> Result<Attempt> {
    let sp = ShootingParams {
        n_guesses,
        seed,
        powell_tol: params.powell_tol_aux,
        max_iters: params.max_iters_aux,
        exec: Execution::Sequential,
    };
    let shot = solve_shooting(sys, target, x0, &sp, &params.exit(t_max), &params.integrator).ok();
    let p_init = match &shot {
        Some(s) => costate_guess(s),
        // no usable reverse characteristic: start from the outward normal direction
        None => target.normal(x0).unwrap_or_else(|_| vec![0.0; x0.len()]),
    };
    let main = solve_main(sys, target, x0, &p_init, t_max, params)?;
    Ok(Attempt { shot, p_init, main })
}

fn solved(sys: &dyn ControlSystem, x0: &[f64], a: &Attempt) -> ValueResult {
    let value = kruzhkov_inverse(a.main.v);
    let (err, time) = a.shot.as_ref().map_or((f64::NAN, f64::NAN), |s| (s.deviation, s.tau_star));
    ValueResult {
        v: a.main.v,
        value,
        control: eval_extremal_control(sys, x0, &a.main.p0, 1.0),
        costate: Some(a.main.p0.clone()),
        status: ValueStatus::Solved,
        shooting_error: err,
        shooting_time: time,
        replacement_indicator: 0.0,
        exit_time: Some(a.main.exit.exit_time),
    }
}

fn pipeline(sys: &dyn ControlSystem, target: &Target, x0: &[f64], params: &EvalParams, seed: u64) -> Result<ValueResult> {
    if x0.len() != sys.state_dim() {
        return Err(Error::InvalidParameter("state has wrong dimension".into()));
    }
    let v_sat = params.v_saturated();
    let first = attempt(sys, target, x0, params, params.t_max, params.n_guesses, sub_seed(seed, 0))?;
    if first.main.v < v_sat {
        return Ok(solved(sys, x0, &first));
    }
    let second = attempt(sys, target, x0, params, params.t_max_recompute, params.n_guesses_recompute, sub_seed(seed, 1))?;
    if second.main.v < v_sat {
        return Ok(solved(sys, x0, &second));
    }

    let (err, time) = second.shot.as_ref().map_or((f64::NAN, f64::NAN), |s| (s.deviation, s.tau_star));
    let mut result = ValueResult {
        v: v_sat,
        value: f64::INFINITY,
        control: eval_extremal_control(sys, x0, &second.main.p0, 1.0),
        costate: None,
        status: ValueStatus::Saturated,
        shooting_error: err,
        shooting_time: time,
        replacement_indicator: 0.0,
        exit_time: None,
    };

    // first-order estimate from the closest state of the optimal shooting characteristic
    let Some(shot) = second.shot.as_ref() else { return Ok(result) };
    if !(shot.deviation < params.delta1) || target.contains(&shot.x_hat) {
        return Ok(result);
    }
    let x_hat = &shot.x_hat;
    let mut hat = solve_main(sys, target, x_hat, &second.p_init, params.t_max, params)?;
    if !(hat.v < v_sat) {
        hat = solve_main(sys, target, x_hat, &second.p_init, params.t_max_recompute, params)?;
    }
    if !(hat.v < v_sat) {
        return Ok(result);
    }
    let dx: Vec<f64> = x0.iter().zip(x_hat).map(|(a, b)| a - b).collect();
    let v1_big = kruzhkov_inverse(hat.v) + dot(&hat.p0, &dx);
    let v1 = 1.0 - (-v1_big).exp();
    let gap = (v1 - hat.v).abs();
    if v1 >= 0.0 && v1 < v_sat && gap < params.delta2 {
        result.v = v1;
        result.value = v1_big;
        result.status = ValueStatus::ReplacedFirstOrder;
        result.replacement_indicator = gap;
        result.costate = Some(hat.p0.clone());
        result.exit_time = Some(hat.exit.exit_time);
    }
    // the control comes from the costate at x_hat whether or not the estimate is kept
    result.control = eval_extremal_control(sys, x0, &hat.p0, 1.0);
    Ok(result)
}

/// Axis-aligned grid `lo[i] + k * step[i]`, `k = 0..counts[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
}

impl GridSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let g = Self { lo, hi, counts };
        g.validate()?;
        Ok(g)
    }

    /// Grid with the given spatial steps; `hi` is included when it lies on the lattice.
    pub fn from_steps(lo: Vec<f64>, hi: Vec<f64>, steps: &[f64]) -> Result<Self> {
        if steps.len() != lo.len() || steps.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter("grid steps must be positive, one per coordinate".into()));
        }
        let counts = lo
            .iter()
            .zip(&hi)
            .zip(steps)
            .map(|((l, h), s)| ((h - l) / s + 1e-9).floor() as usize + 1)
            .collect();
        let hi = lo.iter().zip(steps).zip(&counts).map(|((l, s), k): ((&f64, &f64), &usize)| l + s * (*k - 1) as f64).collect();
        Self::new(lo, hi, counts)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.lo.len();
        if d == 0 || self.hi.len() != d || self.counts.len() != d {
            return Err(Error::InvalidParameter("grid bounds and counts must share a positive dimension".into()));
        }
        for i in 0..d {
            if self.counts[i] == 0 || !(self.lo[i] <= self.hi[i]) || (self.counts[i] > 1 && self.lo[i] == self.hi[i]) {
                return Err(Error::InvalidParameter(format!("bad grid along coordinate {i}")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// The rectangle scaled by `factor` about its center.
    pub fn inflated(&self, factor: f64) -> Vec<[f64; 2]> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| {
                let (m, r) = (0.5 * (l + h), 0.5 * (h - l) * factor);
                [m - r, m + r]
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step(&self, i: usize) -> f64 {
        if self.counts[i] > 1 {
            (self.hi[i] - self.lo[i]) / (self.counts[i] - 1) as f64
        } else {
            0.0
        }
    }

    /// Node `idx` in row-major order (last coordinate fastest).
    pub fn node(&self, mut idx: usize) -> Vec<f64> {
        let d = self.dim();
        let mut x = vec![0.0; d];
        for i in (0..d).rev() {
            let k = idx % self.counts[i];
            idx /= self.counts[i];
            x[i] = if self.counts[i] > 1 && k == self.counts[i] - 1 { self.hi[i] } else { self.lo[i] + k as f64 * self.step(i) };
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub grid: GridSpec,
    pub nodes: Vec<Vec<f64>>,
    pub results: Vec<ValueResult>,
    /// Inner estimate of the null-controllability domain.
    pub mask: Vec<bool>,
}

/// Mask rule of the inner domain estimate.
pub fn in_domain_estimate(r: &ValueResult, eps1: f64) -> bool {
    r.status == ValueStatus::InTarget || r.v < 1.0 - eps1
}

/// Evaluates every node independently with seed `sub_seed(seed, node index)`.
/// Without an explicit `reverse_box`, reverse characteristics stop on leaving
/// the grid rectangle inflated by 50%.
pub fn evaluate_grid(
    sys: &dyn ControlSystem,
    clf: &LocalClf,
    grid: &GridSpec,
    params: &EvalParams,
    seed: u64,
    exec: Execution,
) -> Result<GridResult> {
    grid.validate()?;
    params.validate()?;
    if grid.dim() != sys.state_dim() {
        return Err(Error::InvalidParameter("grid dimension differs from the state dimension".into()));
    }
    let mut params = params.clone();
    if params.reverse_box.is_none() {
        params.reverse_box = Some(grid.inflated(1.5));
    }
    let params = &params;
    let nodes: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.node(i)).collect();
    let results = map_indexed(nodes.len(), exec, |i| evaluate_state(sys, clf, &nodes[i], params, sub_seed(seed, i as u64)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mask = results.iter().map(|r| in_domain_estimate(r, params.eps1)).collect();
    Ok(GridResult { grid: grid.clone(), nodes, results, mask })
}

/// `min g(x, u)` over `u` in a control grid and `x` sampled on the grid
/// rectangle outside the target interior and on `l_c`. A positive result is
/// the constant of the exit-time lower bound `V - c >= C * T_exit`.
pub fn running_cost_floor(sys: &dyn ControlSystem, clf: &LocalClf, grid: &GridSpec, per_axis: usize, seed: u64) -> f64 {
    let dense = GridSpec { lo: grid.lo.clone(), hi: grid.hi.clone(), counts: vec![per_axis.max(2); grid.dim()] };
    let mut controls = crate::local_clf::control_grid(sys, 9);
    controls.push(sys.control_box().clamp(&vec![0.0; sys.control_dim()]));
    let mut rng = crate::rng::stream(seed, 0);
    let on_level: Vec<Vec<f64>> = (0..per_axis.max(2) * 4)
        .filter_map(|_| {
            let xi = crate::local_clf::random_unit(&mut rng, sys.state_dim());
            crate::local_clf::terminal_state_on_level(clf, &xi, clf.c()).ok()
        })
        .collect();
    (0..dense.len())
        .map(|i| dense.node(i))
        .filter(|x| clf.excess(x) >= 0.0)
        .chain(on_level)
        .flat_map(|x| controls.iter().map(|u| sys.running_cost(&x, u)).collect::<Vec<_>>())
        .fold(f64::INFINITY, f64::min)
}

/// Whether a forward exit status counts as reaching the target.
pub fn reached(exit: &ExitStatus) -> bool {
    exit.tag == ExitTag::ReachedTarget
}
