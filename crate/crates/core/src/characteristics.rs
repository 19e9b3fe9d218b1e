//! Hamiltonian and characteristic (state–costate) integration with the
//! practical exit rules: horizon `t_max`, target entry, and cost saturation
//! `1 - exp(-cost - terminal) >= 1 - eps`.

use crate::integrator::{integrate_observed_with_regime, EventFn, IntegratorConfig, Termination};
use crate::local_clf::{terminal_state_on_level, LocalClf};
use crate::system::{control_regime, dot, extremal_control_into, norm, ControlSystem};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Terminal set of the exit-time problem.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    /// `Omega_c` of a local CLF; terminal cost `c`; reverse seeds on `l_{c1}`.
    Sublevel(&'a LocalClf),
    /// Ball of radius `delta`; terminal cost 0; reverse seeds on radius `shrink * delta`.
    Ball { delta: f64, shrink: f64 },
}

impl<'a> Target<'a> {
    pub fn ball(delta: f64) -> Self {
        Target::Ball { delta, shrink: 0.9 }
    }

    /// Negative strictly inside the target.
    pub fn excess(&self, x: &[f64]) -> f64 {
        match self {
            Target::Sublevel(clf) => clf.excess(x),
            Target::Ball { delta, .. } => dot(x, x) - delta * delta,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.excess(x) <= 0.0
    }

    pub fn terminal_cost(&self) -> f64 {
        match self {
            Target::Sublevel(clf) => clf.c(),
            Target::Ball { .. } => 0.0,
        }
    }

    /// Launch point of the reverse characteristic in direction `xi`.
    pub fn launch_state(&self, xi: &[f64]) -> Result<Vec<f64>> {
        match self {
            Target::Sublevel(clf) => terminal_state_on_level(clf, xi, clf.c1()),
            Target::Ball { delta, shrink } => {
                let nrm = norm(xi);
                if (nrm - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!("direction must be a unit vector, norm {nrm}")));
                }
                Ok(xi.iter().map(|v| shrink * delta * v).collect())
            }
        }
    }

    /// Terminal cost attached to launch points (`c1` or 0).
    pub fn launch_cost(&self) -> f64 {
        match self {
            Target::Sublevel(clf) => clf.c1(),
            Target::Ball { .. } => 0.0,
        }
    }

    /// Outward unit normal of the launch surface at `x`.
    pub fn normal(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = match self {
            Target::Sublevel(clf) => clf.gradient_vec(x),
            Target::Ball { .. } => x.to_vec(),
        };
        let gn = norm(&g);
        if !(gn > 0.0) || !gn.is_finite() {
            return Err(Error::DegenerateGradient(x.to_vec()));
        }
        Ok(g.into_iter().map(|v| v / gn).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum ExitTag {
    ReachedTarget,
    HorizonExhausted,
    CostSaturated,
    IntegratorFailed,
    /// Reverse integration left the bounding box.
    LeftDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitStatus {
    pub tag: ExitTag,
    pub exit_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CostQuadrature {
    /// Cost integrated as an extra state coordinate.
    #[default]
    ExtraState,
    /// Trapezoid rule on the output grid.
    TrapezoidOnGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExitParams {
    pub t_max: f64,
    pub eps: f64,
    /// Per-coordinate `[lo, hi]`; reverse integration stops on leaving it.
    pub bounding_box: Option<Vec<[f64; 2]>>,
    pub cost_quadrature: CostQuadrature,
}

impl Default for ExitParams {
    fn default() -> Self {
        Self { t_max: 10.0, eps: 1e-15, bounding_box: None, cost_quadrature: CostQuadrature::ExtraState }
    }
}

impl ExitParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_max > 0.0) || !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidParameter("exit parameters need t_max > 0 and 0 < eps < 1".into()));
        }
        Ok(())
    }

    /// Cost level `-ln eps` at which the Kruzhkov cost saturates.
    pub fn saturation_cost(&self) -> f64 {
        -self.eps.ln()
    }

    fn inside_box(&self, x: &[f64]) -> bool {
        match &self.bounding_box {
            None => true,
            Some(b) => x.iter().zip(b).all(|(v, [lo, hi])| *v >= *lo && *v <= *hi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Characteristic {
    pub direction: Direction,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub costates: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    /// Accumulated running cost at each node.
    pub costs: Vec<f64>,
    pub ptilde: f64,
    pub accumulated_cost: f64,
    pub kruzhkov_cost: f64,
    pub exit: ExitStatus,
}

/// `min_u <p, f(x, u)> + ptilde g(x, u)`.
pub fn hamiltonian(sys: &dyn ControlSystem, x: &[f64], p: &[f64], ptilde: f64) -> f64 {
    let mut u = vec![0.0; sys.control_dim()];
    extremal_control_into(sys, x, p, ptilde, &mut u);
    crate::system::hamiltonian_at(sys, x, &u, p, ptilde)
}

/// Right-hand side of the characteristic system on `y = (x, p, cost)`.
/// `sign = 1` is forward time, `sign = -1` reverse time; the cost
/// coordinate always grows.
pub(crate) struct CharRhs<'a> {
    sys: &'a dyn ControlSystem,
    ptilde: f64,
    sign: f64,
    n: usize,
    u: Vec<f64>,
    f: Vec<f64>,
    jf: Vec<f64>,
    jg: Vec<f64>,
}

impl<'a> CharRhs<'a> {
    pub(crate) fn new(sys: &'a dyn ControlSystem, ptilde: f64, sign: f64) -> Self {
        let n = sys.state_dim();
        Self {
            sys,
            ptilde,
            sign,
            n,
            u: vec![0.0; sys.control_dim()],
            f: vec![0.0; n],
            jf: vec![0.0; n * n],
            jg: vec![0.0; n],
        }
    }

    pub(crate) fn eval(&mut self, y: &[f64], out: &mut [f64]) {
        let n = self.n;
        let (x, p) = (&y[..n], &y[n..2 * n]);
        extremal_control_into(self.sys, x, p, self.ptilde, &mut self.u);
        self.sys.dynamics(x, &self.u, &mut self.f);
        self.sys.jac_dynamics_x(x, &self.u, &mut self.jf);
        self.sys.jac_cost_x(x, &self.u, &mut self.jg);
        for i in 0..n {
            out[i] = self.sign * self.f[i];
            let mut s = 0.0;
            for k in 0..n {
                s += self.jf[k * n + i] * p[k];
            }
            out[n + i] = -self.sign * (s + self.ptilde * self.jg[i]);
        }
        out[2 * n] = self.sys.running_cost(x, &self.u);
    }
}

/// Regime label of the extremal control along `y = (x, p, cost)`.
pub(crate) fn char_regime(sys: &dyn ControlSystem, ptilde: f64) -> impl FnMut(&[f64]) -> u64 + '_ {
    let n = sys.state_dim();
    let mut scratch = vec![0.0; sys.control_dim()];
    move |y: &[f64]| control_regime(sys, &y[..n], &y[n..2 * n], ptilde, &mut scratch)
}

fn kruzhkov(cost: f64, params: &ExitParams) -> f64 {
    (1.0 - (-cost).exp()).min(1.0 - params.eps)
}

/// Per-node sink for stored characteristics.
struct Recorder {
    store: bool,
    n: usize,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    costates: Vec<Vec<f64>>,
    controls: Vec<Vec<f64>>,
    costs: Vec<f64>,
}

impl Recorder {
    fn new(store: bool, n: usize) -> Self {
        Self { store, n, times: vec![], states: vec![], costates: vec![], controls: vec![], costs: vec![] }
    }

    fn push(&mut self, sys: &dyn ControlSystem, ptilde: f64, t: f64, y: &[f64], cost: f64) {
        if !self.store {
            return;
        }
        let n = self.n;
        let mut u = vec![0.0; sys.control_dim()];
        extremal_control_into(sys, &y[..n], &y[n..2 * n], ptilde, &mut u);
        self.times.push(t);
        self.states.push(y[..n].to_vec());
        self.costates.push(y[n..2 * n].to_vec());
        self.controls.push(u);
        self.costs.push(cost);
    }
}

/// Forward characteristic from `(x0, p0, ptilde)`. Integrator failures come
/// back as `integrator_failed` with saturated cost, not as errors.
pub fn integrate_forward(
    sys: &dyn ControlSystem,
    target: &Target,
    x0: &[f64],
    p0: &[f64],
    ptilde: f64,
    params: &ExitParams,
    config: &IntegratorConfig,
) -> Result<Characteristic> {
    forward_impl(sys, target, x0, p0, ptilde, params, config, true)
}

/// Exit status and Kruzhkov cost only, without storing the trace.
pub fn forward_cost(
    sys: &dyn ControlSystem,
    target: &Target,
    x0: &[f64],
    p0: &[f64],
    ptilde: f64,
    params: &ExitParams,
    config: &IntegratorConfig,
) -> Result<(f64, ExitStatus)> {
    let ch = forward_impl(sys, target, x0, p0, ptilde, params, config, false)?;
    Ok((ch.kruzhkov_cost, ch.exit))
}

#[allow(clippy::too_many_arguments)]
fn forward_impl(
    sys: &dyn ControlSystem,
    target: &Target,
    x0: &[f64],
    p0: &[f64],
    ptilde: f64,
    params: &ExitParams,
    config: &IntegratorConfig,
    store: bool,
) -> Result<Characteristic> {
    params.validate()?;
    let n = sys.state_dim();
    if x0.len() != n || p0.len() != n {
        return Err(Error::InvalidParameter("state and costate must match the system dimension".into()));
    }
    if !(ptilde >= 0.0) {
        return Err(Error::InvalidParameter("ptilde must be nonnegative".into()));
    }
    if target.contains(x0) {
        return Err(Error::InvalidParameter("initial state already lies in the target".into()));
    }
    let terminal = target.terminal_cost();
    let sat = params.saturation_cost();
    let trapezoid = params.cost_quadrature == CostQuadrature::TrapezoidOnGrid;

    let mut y0 = Vec::with_capacity(2 * n + 1);
    y0.extend_from_slice(x0);
    y0.extend_from_slice(p0);
    y0.push(0.0);

    let mut rhs = CharRhs::new(sys, ptilde, 1.0);
    let ev_target = |_t: f64, y: &[f64]| target.excess(&y[..n]);
    let ev_sat = |_t: f64, y: &[f64]| y[2 * n] + terminal - sat;
    let events: Vec<EventFn> = if trapezoid { vec![&ev_target] } else { vec![&ev_target, &ev_sat] };

    let mut rec = Recorder::new(store, n);
    let mut trap = (0.0f64, 0.0f64, f64::NAN); // (cost, last t, last g)
    let mut trap_saturated = false;
    let mut g_buf = vec![0.0; sys.control_dim()];
    let mut regime = char_regime(sys, ptilde);
    let result = integrate_observed_with_regime(
        |_t, y, out| rhs.eval(y, out),
        &y0,
        params.t_max,
        config,
        &events,
        Some(&mut regime),
        |t, y| {
            let cost = if trapezoid {
                extremal_control_into(sys, &y[..n], &y[n..2 * n], ptilde, &mut g_buf);
                let g = sys.running_cost(&y[..n], &g_buf);
                if trap.2.is_finite() {
                    trap.0 += 0.5 * (t - trap.1) * (g + trap.2);
                }
                trap.1 = t;
                trap.2 = g;
                trap.0
            } else {
                y[2 * n]
            };
            rec.push(sys, ptilde, t, y, cost);
            if trapezoid && cost + terminal >= sat {
                trap_saturated = true;
                return false;
            }
            true
        },
    );

    let (tag, t_exit, cost) = match result {
        Err(_) => (ExitTag::IntegratorFailed, rec.times.last().cloned().unwrap_or(0.0), f64::INFINITY),
        Ok(out) => {
            let cost = if trapezoid { trap.0 } else { out.y_final[2 * n] };
            let tag = match out.terminated_by {
                Termination::Event(0) => ExitTag::ReachedTarget,
                Termination::Event(_) => ExitTag::CostSaturated,
                Termination::Observer if trap_saturated => ExitTag::CostSaturated,
                Termination::Observer | Termination::Horizon => ExitTag::HorizonExhausted,
            };
            (tag, out.t_final, cost)
        }
    };
    let kruzhkov_cost =
        if tag == ExitTag::ReachedTarget { kruzhkov(cost + terminal, params) } else { 1.0 - params.eps };
    Ok(Characteristic {
        direction: Direction::Forward,
        times: rec.times,
        states: rec.states,
        costates: rec.costates,
        controls: rec.controls,
        costs: rec.costs,
        ptilde,
        accumulated_cost: cost,
        kruzhkov_cost,
        exit: ExitStatus { tag, exit_time: t_exit },
    })
}

/// Launch data of a reverse characteristic: `x(0)` on the launch surface and
/// `p(0) = sqrt(1 - ptilde^2) * normal`.
pub fn reverse_seed(target: &Target, xi: &[f64], ptilde: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = target.launch_state(xi)?;
    let nu = target.normal(&x)?;
    let kappa = (1.0 - ptilde * ptilde).max(0.0).sqrt();
    Ok((x, nu.into_iter().map(|v| kappa * v).collect()))
}

/// Reverse-time characteristic, observed node by node without storage.
/// `observer(t, y)` sees `y = (x, p, cost)`; returning `false` stops.
pub(crate) fn reverse_observed<O>(
    sys: &dyn ControlSystem,
    x0: &[f64],
    p0: &[f64],
    ptilde: f64,
    params: &ExitParams,
    config: &IntegratorConfig,
    mut observer: O,
) -> (ExitStatus, f64)
where
    O: FnMut(f64, &[f64]) -> bool,
{
    let n = sys.state_dim();
    let mut y0 = Vec::with_capacity(2 * n + 1);
    y0.extend_from_slice(x0);
    y0.extend_from_slice(p0);
    y0.push(0.0);
    let mut rhs = CharRhs::new(sys, ptilde, -1.0);
    let mut left = false;
    let mut last_t = 0.0;
    let mut regime = char_regime(sys, ptilde);
    let result = integrate_observed_with_regime(
        |_t, y, out| rhs.eval(y, out),
        &y0,
        params.t_max,
        config,
        &[],
        Some(&mut regime),
        |t, y| {
            last_t = t;
            if !params.inside_box(&y[..n]) {
                left = true;
                return false;
            }
            observer(t, y)
        },
    );
    match result {
        Err(_) => (ExitStatus { tag: ExitTag::IntegratorFailed, exit_time: last_t }, f64::NAN),
        Ok(out) => {
            let tag = if left { ExitTag::LeftDomain } else { ExitTag::HorizonExhausted };
            (ExitStatus { tag, exit_time: out.t_final }, out.y_final[2 * n])
        }
    }
}

/// Reverse-time characteristic launched from the target in direction `xi`
/// with multiplier `ptilde`. Stored samples stop at the last node inside the
/// bounding box.
pub fn integrate_reverse(
    sys: &dyn ControlSystem,
    target: &Target,
    xi: &[f64],
    ptilde: f64,
    params: &ExitParams,
    config: &IntegratorConfig,
) -> Result<Characteristic> {
    params.validate()?;
    if !(ptilde > 0.0 && ptilde < 1.0) {
        return Err(Error::InvalidParameter(format!("ptilde must lie in (0, 1), got {ptilde}")));
    }
    let n = sys.state_dim();
    let (x0, p0) = reverse_seed(target, xi, ptilde)?;
    let mut rec = Recorder::new(true, n);
    let (exit, cost) = reverse_observed(sys, &x0, &p0, ptilde, params, config, |t, y| {
        rec.push(sys, ptilde, t, y, y[2 * n]);
        true
    });
    let cost = if cost.is_finite() { cost } else { rec.costs.last().cloned().unwrap_or(0.0) };
    let kruzhkov_cost = kruzhkov(cost + target.launch_cost(), params);
    Ok(Characteristic {
        direction: Direction::Reverse,
        times: rec.times,
        states: rec.states,
        costates: rec.costates,
        controls: rec.controls,
        costs: rec.costs,
        ptilde,
        accumulated_cost: cost,
        kruzhkov_cost,
        exit,
    })
}

/// Hamiltonian along the stored nodes.
pub fn hamiltonian_trace(sys: &dyn ControlSystem, ch: &Characteristic) -> Vec<f64> {
    ch.states.iter().zip(&ch.costates).map(|(x, p)| hamiltonian(sys, x, p, ch.ptilde)).collect()
}

/// `max_t |H(t) - H(0)|` over the stored nodes.
pub fn check_hamiltonian_conservation(sys: &dyn ControlSystem, ch: &Characteristic) -> f64 {
    let h = hamiltonian_trace(sys, ch);
    match h.first() {
        None => 0.0,
        Some(h0) => h.iter().map(|v| (v - h0).abs()).fold(0.0, f64::max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_clf::random_unit;
    use crate::rng::stream;
    use crate::system::make_example_2d;
    use proptest::prelude::*;

    fn ex_clf() -> LocalClf {
        LocalClf::example_2d(1.2, 1.4, 0.015, 0.01).unwrap()
    }

    #[test]
    fn hamiltonian_examples() {
        let sys = make_example_2d(1.2).unwrap();
        assert_eq!(hamiltonian(&sys, &[0.0, 0.0], &[0.0, 0.0], 1.0), 0.0);
        assert_eq!(hamiltonian(&sys, &[1.0, 0.0], &[0.0, 0.0], 1.0), 2.0);
    }

    /// Closed-loop reference with the optimal unconstrained feedback `-4 x1`,
    /// integrated tightly until `V_loc = c`.
    fn closed_loop_oracle(x0: [f64; 2], c: f64) -> f64 {
        let cfg = IntegratorConfig::default().with_tolerances(1e-10, 1e-10);
        let ev = |_t: f64, y: &[f64]| 0.25 * y[0].powi(4) + 0.5 * y[1] * y[1] - c;
        let sol = crate::integrator::integrate(
            |_t, y, o| {
                let u = -4.0 * y[0];
                o[0] = y[0] + 2.0 * y[1] + u;
                o[1] = -y[1] - 2.0 * y[0].powi(3);
                o[2] = 2.0 * y[0].powi(4) + y[1] * y[1] + u.powi(4) / 256.0;
            },
            &[x0[0], x0[1], 0.0],
            20.0,
            &cfg,
            &[&ev],
        )
        .unwrap();
        sol.final_state()[2] + c
    }

    #[test]
    fn forward_matches_closed_loop_oracle() {
        let sys = make_example_2d(20.0).unwrap();
        let clf = ex_clf();
        let target = Target::Sublevel(&clf);
        let ch = integrate_forward(
            &sys,
            &target,
            &[1.0, 1.0],
            &[1.0, 1.0],
            1.0,
            &ExitParams::default(),
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(ch.exit.tag, ExitTag::ReachedTarget);
        let oracle = 1.0 - (-closed_loop_oracle([1.0, 1.0], 0.015)).exp();
        assert!((oracle - (1.0 - (-0.75f64).exp())).abs() < 1e-6, "oracle {oracle}");
        assert!((ch.kruzhkov_cost - oracle).abs() < 2e-3, "{} vs {oracle}", ch.kruzhkov_cost);
        assert!(check_hamiltonian_conservation(&sys, &ch) <= 1e-4);
        assert!(ch.costs.windows(2).all(|w| w[1] >= w[0]));
        let xf = ch.states.last().unwrap();
        assert!(clf.value(xf) <= clf.c() + 1e-9);
    }

    #[test]
    fn horizon_rule() {
        let sys = make_example_2d(1.2).unwrap();
        let clf = ex_clf();
        let params = ExitParams { t_max: 1e-6, ..Default::default() };
        let cfg = IntegratorConfig { h_init: 1e-7, output_step: 1e-7, ..Default::default() };
        let ch =
            integrate_forward(&sys, &Target::Sublevel(&clf), &[2.0, 2.0], &[1.0, 0.0], 1.0, &params, &cfg).unwrap();
        assert_eq!(ch.exit.tag, ExitTag::HorizonExhausted);
        assert_eq!(ch.kruzhkov_cost, 1.0 - 1e-15);
    }

    #[test]
    fn immediate_entry_from_just_outside() {
        let sys = make_example_2d(1.2).unwrap();
        let clf = ex_clf();
        let xb = terminal_state_on_level(&clf, &[0.6, 0.8], clf.c()).unwrap();
        let g = clf.gradient_vec(&xb);
        let gn = norm(&g);
        let x0: Vec<f64> = xb.iter().zip(&g).map(|(x, d)| x + 1e-6 * d / gn).collect();
        let ch = integrate_forward(
            &sys,
            &Target::Sublevel(&clf),
            &x0,
            &g,
            1.0,
            &ExitParams::default(),
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(ch.exit.tag, ExitTag::ReachedTarget);
        assert!(ch.exit.exit_time <= 1e-3);
    }

    #[test]
    fn saturation_rule_fires() {
        let sys = make_example_2d(1.2).unwrap();
        let clf = ex_clf();
        let params = ExitParams { eps: 0.5, ..Default::default() };
        // pushing away from the origin accumulates cost ln 2 quickly
        let ch = integrate_forward(
            &sys,
            &Target::Sublevel(&clf),
            &[1.0, 1.0],
            &[-1.0, 0.0],
            1.0,
            &params,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(ch.exit.tag, ExitTag::CostSaturated);
        assert!((ch.accumulated_cost + 0.015 - 2f64.ln()).abs() < 1e-8);
        assert_eq!(ch.kruzhkov_cost, 0.5);
    }

    #[test]
    fn trapezoid_quadrature_agrees() {
        let sys = make_example_2d(20.0).unwrap();
        let clf = ex_clf();
        let run = |q| {
            let params = ExitParams { cost_quadrature: q, ..Default::default() };
            integrate_forward(&sys, &Target::Sublevel(&clf), &[1.0, 1.0], &[1.0, 1.0], 1.0, &params, &Default::default())
                .unwrap()
        };
        let a = run(CostQuadrature::ExtraState);
        let b = run(CostQuadrature::TrapezoidOnGrid);
        assert_eq!(b.exit.tag, ExitTag::ReachedTarget);
        assert!((a.accumulated_cost - b.accumulated_cost).abs() < 1e-4);
    }

    #[test]
    fn forward_rejects_start_inside_target() {
        let sys = make_example_2d(1.2).unwrap();
        let clf = ex_clf();
        let r = integrate_forward(
            &sys,
            &Target::Sublevel(&clf),
            &[0.0, 0.0],
            &[1.0, 0.0],
            1.0,
            &ExitParams::default(),
            &Default::default(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn conservation_of_single_node_is_zero() {
        let sys = make_example_2d(1.2).unwrap();
        let ch = Characteristic {
            direction: Direction::Forward,
            times: vec![0.0],
            states: vec![vec![1.0, 0.0]],
            costates: vec![vec![0.3, 0.1]],
            controls: vec![vec![0.0]],
            costs: vec![0.0],
            ptilde: 1.0,
            accumulated_cost: 0.0,
            kruzhkov_cost: 0.0,
            exit: ExitStatus { tag: ExitTag::HorizonExhausted, exit_time: 0.0 },
        };
        assert_eq!(check_hamiltonian_conservation(&sys, &ch), 0.0);
    }

    #[test]
    fn reverse_seed_normalization() {
        let clf = ex_clf();
        let target = Target::Sublevel(&clf);
        let mut rng = stream(9, 0);
        for _ in 0..100 {
            let xi = random_unit(&mut rng, 2);
            let pt = 0.37;
            let (x, p) = reverse_seed(&target, &xi, pt).unwrap();
            assert!((clf.value(&x) - 0.01).abs() <= 1e-10);
            assert!(((dot(&p, &p) + pt * pt).sqrt() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn reverse_stops_at_bounding_box() {
        let sys = make_example_2d(1.2).unwrap();
        let clf = ex_clf();
        let params = ExitParams { bounding_box: Some(vec![[-0.6, 0.6], [-0.6, 0.6]]), ..Default::default() };
        let ch =
            integrate_reverse(&sys, &Target::Sublevel(&clf), &[0.0, 1.0], 0.5, &params, &Default::default()).unwrap();
        assert_eq!(ch.exit.tag, ExitTag::LeftDomain);
        assert!(ch.states.iter().all(|x| x.iter().all(|v| v.abs() <= 0.6)));
        assert!(ch.costs.windows(2).all(|w| w[1] >= w[0]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn hamiltonian_is_positively_homogeneous(
            x in proptest::array::uniform2(-2.0f64..2.0),
            p in proptest::array::uniform2(-3.0f64..3.0),
            pt in 0.0f64..2.0,
        ) {
            let sys = make_example_2d(1.2).unwrap();
            let h1 = hamiltonian(&sys, &x, &p, pt);
            let h3 = hamiltonian(&sys, &x, &[3.0 * p[0], 3.0 * p[1]], 3.0 * pt);
            prop_assert!((h3 - 3.0 * h1).abs() <= 1e-12 * (1.0 + h1.abs()));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]
        #[test]
        fn state_paths_are_scale_invariant(p1 in 0.2f64..1.5, p2 in 0.2f64..1.5, lam_idx in 0usize..2) {
            let lam = [0.5, 2.0][lam_idx];
            let sys = make_example_2d(20.0).unwrap();
            let clf = ex_clf();
            let t = Target::Sublevel(&clf);
            let params = ExitParams { t_max: 2.0, ..Default::default() };
            // tight tolerances so that step-size differences stay below the bound
            let cfg = IntegratorConfig::default().with_tolerances(1e-10, 1e-10);
            let a = integrate_forward(&sys, &t, &[1.0, 1.0], &[p1, p2], 1.0, &params, &cfg).unwrap();
            let b = integrate_forward(&sys, &t, &[1.0, 1.0], &[lam * p1, lam * p2], lam, &params, &cfg).unwrap();
            let k = a.states.len().min(b.states.len());
            for i in 0..k {
                for j in 0..2 {
                    prop_assert!((a.states[i][j] - b.states[i][j]).abs() <= 1e-6);
                }
            }
        }
    }
}
