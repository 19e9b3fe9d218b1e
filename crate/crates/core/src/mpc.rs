//! Sampled-data closed loop: piecewise-constant controls recomputed at
//! instants `t_i`, state advanced by Euler–Maruyama with additive diagonal
//! noise `sigma_i dW_i` (explicit Euler when `sigma = 0`).

use crate::characteristics::{integrate_forward, ExitParams, Target};
use crate::local_clf::LocalClf;
use crate::par::{map_indexed, Execution};
use crate::rng::{state_seed, stream};
use crate::system::{eval_extremal_control, norm, ControlSystem};
use crate::value_eval::{evaluate_state, solve_main, EvalParams, ValueStatus};
use crate::{Error, Result};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Salt of the per-state seeds handed to the evaluation pipeline.
const CONTROLLER_SALT: u64 = 0x6d70_635f_6374_726c;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    /// Global-CLF pipeline outside `Omega_c`, local feedback inside.
    ClfPipeline,
    /// Local feedback clamped into the control box, everywhere.
    SaturatedLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: f64,
    pub dt_recompute: f64,
    pub dt_sde: f64,
    /// Per-coordinate noise intensities; empty means no noise.
    pub noise: Vec<f64>,
    pub n_monte_carlo: usize,
    pub seed: u64,
    pub controller: Controller,
    /// Start each costate search from the costate carried over from the
    /// previous instant; the full pipeline runs only when that fails.
    pub warm_start: bool,
    /// Box `Pi`; when set, instants inside it use the half step.
    pub adaptive_region: Option<Vec<[f64; 2]>>,
    /// Keep every sample's recorded path in Monte Carlo mode.
    pub keep_paths: bool,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 15.0,
            dt_recompute: 0.1,
            dt_sde: 1e-5,
            noise: Vec::new(),
            n_monte_carlo: 1,
            seed: 0,
            controller: Controller::ClfPipeline,
            warm_start: true,
            adaptive_region: None,
            keep_paths: false,
        }
    }
}

impl MpcConfig {
    /// SDE steps per recompute step; the ratio must be a positive integer
    /// (even in adaptive mode, where half steps are used too).
    pub fn steps_per_recompute(&self) -> Result<usize> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.horizon > 0.0) || !(self.dt_recompute > 0.0) || !(self.dt_sde > 0.0) {
            return bad("horizon and time steps must be positive".into());
        }
        if self.dt_sde > self.dt_recompute {
            return bad("dt_sde must not exceed dt_recompute".into());
        }
        let r = (self.dt_recompute / self.dt_sde).round();
        if (r * self.dt_sde - self.dt_recompute).abs() > 1e-9 * self.dt_recompute {
            return bad(format!("dt_recompute / dt_sde = {} is not an integer", self.dt_recompute / self.dt_sde));
        }
        let r = r as usize;
        if self.adaptive_region.is_some() && r % 2 != 0 {
            return bad("adaptive mode needs an even ratio dt_recompute / dt_sde".into());
        }
        if self.noise.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return bad("noise intensities must be nonnegative".into());
        }
        if self.n_monte_carlo == 0 {
            return bad("n_monte_carlo must be positive".into());
        }
        Ok(r)
    }

    fn noisy(&self) -> bool {
        self.noise.iter().any(|s| *s > 0.0)
    }

    /// Number of SDE steps up to the horizon (the last one may be short).
    fn total_steps(&self) -> usize {
        ((self.horizon / self.dt_sde) * (1.0 - 1e-12)).ceil() as usize
    }

    fn record_stride(&self, r: usize) -> usize {
        if self.adaptive_region.is_some() {
            r / 2
        } else {
            r
        }
    }
}

/// How a control action was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlSource {
    LocalFeedback,
    WarmStart,
    Pipeline,
    SaturatedLinear,
    /// Evaluation failed; the previous control was kept.
    Reused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchRecord {
    pub t: f64,
    pub control: Vec<f64>,
    pub source: ControlSource,
    pub status: Option<ValueStatus>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcRun {
    /// Recording grid (multiples of the recompute step, or of its half in adaptive mode).
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub switches: Vec<SwitchRecord>,
    /// `int_0^T |x(t)| dt`, trapezoid on the SDE grid (mean over samples in Monte Carlo mode).
    pub performance: f64,
    /// Mean and population standard deviation of `|x(t)|` on `times`.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n_samples: usize,
    /// Recorded states of every sample when `keep_paths` is set.
    pub paths: Option<Vec<Vec<Vec<f64>>>>,
}

impl MpcRun {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

struct PipelineController<'a> {
    sys: &'a dyn ControlSystem,
    clf: &'a LocalClf,
    eval: &'a EvalParams,
    warm_start: bool,
    warm: Option<Vec<f64>>,
}

impl<'a> PipelineController<'a> {
    /// Costate of the forward characteristic from `(x, p0, 1)` after `dt`.
    fn propagate(&self, x: &[f64], p0: &[f64], dt: f64) -> Option<Vec<f64>> {
        let exit = ExitParams { t_max: dt, eps: self.eval.eps, ..Default::default() };
        let ch = integrate_forward(self.sys, &Target::Sublevel(self.clf), x, p0, 1.0, &exit, &self.eval.integrator).ok()?;
        ch.costates.last().cloned()
    }

    fn control(&mut self, x: &[f64], dt: f64) -> Result<(Vec<f64>, ControlSource, Option<ValueStatus>)> {
        let sys = self.sys;
        if self.clf.in_target(x) {
            self.warm = None;
            return Ok((self.clf.feedback_vec(x, sys.control_dim()), ControlSource::LocalFeedback, Some(ValueStatus::InTarget)));
        }
        if let (true, Some(p)) = (self.warm_start, self.warm.take()) {
            let target = Target::Sublevel(self.clf);
            if let Ok(main) = solve_main(sys, &target, x, &p, self.eval.t_max, self.eval) {
                if main.v < self.eval.v_saturated() {
                    self.warm = self.propagate(x, &main.p0, dt);
                    let u = eval_extremal_control(sys, x, &main.p0, 1.0);
                    return Ok((u, ControlSource::WarmStart, Some(ValueStatus::Solved)));
                }
            }
        }
        let r = evaluate_state(sys, self.clf, x, self.eval, state_seed(CONTROLLER_SALT, x))?;
        self.warm = match (&r.costate, r.status) {
            (Some(p), ValueStatus::Solved | ValueStatus::ReplacedFirstOrder) if self.warm_start => {
                self.propagate(x, p, dt)
            }
            _ => None,
        };
        Ok((r.control, ControlSource::Pipeline, Some(r.status)))
    }
}

fn in_region(region: &[[f64; 2]], x: &[f64]) -> bool {
    x.iter().zip(region).all(|(v, [lo, hi])| *v >= *lo && *v <= *hi)
}

/// One closed-loop sample. With zero noise no random numbers are drawn.
pub fn run_mpc(
    sys: &dyn ControlSystem,
    clf: &LocalClf,
    x0: &[f64],
    cfg: &MpcConfig,
    eval: &EvalParams,
) -> Result<MpcRun> {
    run_sample(sys, clf, x0, cfg, eval, 0)
}

fn run_sample(
    sys: &dyn ControlSystem,
    clf: &LocalClf,
    x0: &[f64],
    cfg: &MpcConfig,
    eval: &EvalParams,
    sample: u64,
) -> Result<MpcRun> {
    let r = cfg.steps_per_recompute()?;
    eval.validate()?;
    let n = sys.state_dim();
    if x0.len() != n {
        return Err(Error::InvalidParameter("initial state has wrong dimension".into()));
    }
    if !cfg.noise.is_empty() && cfg.noise.len() != n {
        return Err(Error::InvalidParameter("noise needs one intensity per state coordinate".into()));
    }
    if let Some(region) = &cfg.adaptive_region {
        if region.len() != n {
            return Err(Error::InvalidParameter("adaptive region needs one interval per coordinate".into()));
        }
    }
    let noisy = cfg.noisy();
    let mut rng = stream(cfg.seed, sample);
    let total = cfg.total_steps();
    let stride = cfg.record_stride(r);
    let step_time = |j: usize| if j >= total { cfg.horizon } else { j as f64 * cfg.dt_sde };

    let mut ctrl = PipelineController { sys, clf, eval, warm_start: cfg.warm_start, warm: None };
    let bx = sys.control_box();
    let mut x = x0.to_vec();
    let mut f = vec![0.0; n];
    let mut u = bx.clamp(&vec![0.0; sys.control_dim()]);
    let mut times = vec![0.0];
    let mut states = vec![x.clone()];
    let mut switches = Vec::new();
    let mut performance = 0.0;
    let mut norm_prev = norm(&x);
    let mut next_switch = 0usize;

    for j in 0..total {
        if j == next_switch {
            let t = step_time(j);
            let half = cfg.adaptive_region.as_deref().is_some_and(|reg| in_region(reg, &x));
            let len = if half { r / 2 } else { r };
            let dt = (step_time((j + len).min(total)) - t).max(0.0);
            let outcome = match cfg.controller {
                Controller::SaturatedLinear => {
                    let mut v = clf.feedback_vec(&x, sys.control_dim());
                    bx.clamp_in_place(&mut v);
                    Ok((v, ControlSource::SaturatedLinear, None))
                }
                Controller::ClfPipeline => ctrl.control(&x, dt),
            };
            let record = match outcome {
                Ok((v, source, status)) => {
                    u = v;
                    bx.clamp_in_place(&mut u);
                    SwitchRecord { t, control: u.clone(), source, status, message: None }
                }
                Err(e) => SwitchRecord {
                    t,
                    control: u.clone(),
                    source: ControlSource::Reused,
                    status: None,
                    message: Some(e.to_string()),
                },
            };
            switches.push(record);
            next_switch = j + len;
        }

        let h = step_time(j + 1) - step_time(j);
        sys.dynamics(&x, &u, &mut f);
        for i in 0..n {
            x[i] += h * f[i];
        }
        if noisy {
            let sq = h.sqrt();
            for (i, s) in cfg.noise.iter().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                if *s > 0.0 {
                    x[i] += s * sq * z;
                }
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Blowup { t: step_time(j + 1), y: x });
        }
        let nrm = norm(&x);
        performance += 0.5 * h * (norm_prev + nrm);
        norm_prev = nrm;
        if (j + 1) % stride == 0 || j + 1 == total {
            times.push(step_time(j + 1));
            states.push(x.clone());
        }
    }

    let mean: Vec<f64> = states.iter().map(|s| norm(s)).collect();
    let std = vec![0.0; mean.len()];
    Ok(MpcRun { times, states, switches, performance, mean, std, n_samples: 1, paths: None })
}

/// `cfg.n_monte_carlo` independent samples seeded by `(cfg.seed, sample index)`,
/// aggregated into the mean and population standard deviation of `|x(t)|`.
/// States and switches of the returned run are those of sample 0.
pub fn monte_carlo(
    sys: &dyn ControlSystem,
    clf: &LocalClf,
    x0: &[f64],
    cfg: &MpcConfig,
    eval: &EvalParams,
    exec: Execution,
) -> Result<MpcRun> {
    cfg.steps_per_recompute()?;
    let runs = map_indexed(cfg.n_monte_carlo, exec, |k| run_sample(sys, clf, x0, cfg, eval, k as u64))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let len = runs.iter().map(|r| r.times.len()).min().unwrap_or(0);
    let nn = runs.len() as f64;
    let mut mean = Vec::with_capacity(len);
    let mut std = Vec::with_capacity(len);
    for k in 0..len {
        // shift by the first sample so that identical samples give exact results
        let a0 = runs[0].mean[k];
        let d: Vec<f64> = runs.iter().map(|r| r.mean[k] - a0).collect();
        let dm = d.iter().sum::<f64>() / nn;
        let var = d.iter().map(|v| (v - dm) * (v - dm)).sum::<f64>() / nn;
        mean.push(a0 + dm);
        std.push(var.sqrt());
    }
    let performance = runs.iter().map(|r| r.performance).sum::<f64>() / nn;
    let paths = cfg.keep_paths.then(|| runs.iter().map(|r| r.states.clone()).collect());
    let first = runs.into_iter().next().ok_or(Error::InvalidParameter("no samples".into()))?;
    Ok(MpcRun {
        times: first.times[..len].to_vec(),
        states: first.states[..len].to_vec(),
        switches: first.switches,
        performance,
        mean,
        std,
        n_samples: cfg.n_monte_carlo,
        paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{make_example_2d, BoxControlSet, FnSystem};

    fn ex_clf() -> LocalClf {
        LocalClf::example_2d(1.2, 1.4, 0.015, 0.01).unwrap()
    }

    fn scalar_decay() -> FnSystem {
        FnSystem::new(
            "decay",
            1,
            BoxControlSet::symmetric(&[1.0]).unwrap(),
            |x: &[f64], _u: &[f64], out: &mut [f64]| out[0] = -x[0],
            |x: &[f64], u: &[f64]| x[0] * x[0] + u[0] * u[0],
        )
        .unwrap()
    }

    #[test]
    fn ratio_must_be_integral() {
        let cfg = MpcConfig { dt_recompute: 0.1, dt_sde: 0.03, ..Default::default() };
        assert!(cfg.steps_per_recompute().is_err());
        assert_eq!(MpcConfig::default().steps_per_recompute().unwrap(), 10_000);
        let odd = MpcConfig { dt_sde: 0.1 / 3.0, adaptive_region: Some(vec![[-1.0, 1.0]]), ..Default::default() };
        assert!(odd.steps_per_recompute().is_err());
    }

    #[test]
    fn switch_log_has_one_entry_per_instant() {
        let sys = make_example_2d(1.2).unwrap();
        let clf = ex_clf();
        let x0 = [0.1, 0.1];
        for horizon in [1.0, 1.05, 0.95] {
            let cfg = MpcConfig { horizon, dt_sde: 1e-3, controller: Controller::SaturatedLinear, ..Default::default() };
            let run = run_mpc(&sys, &clf, &x0, &cfg, &EvalParams::default()).unwrap();
            assert_eq!(run.switches.len(), (horizon / 0.1 - 1e-9).ceil() as usize, "T = {horizon}");
            assert!((run.times.last().unwrap() - horizon).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_free_run_ignores_seed() {
        let sys = make_example_2d(1.2).unwrap();
        let clf = ex_clf();
        let base = MpcConfig { horizon: 2.0, dt_sde: 1e-4, controller: Controller::SaturatedLinear, ..Default::default() };
        let a = run_mpc(&sys, &clf, &[0.3, -0.2], &base, &EvalParams::default()).unwrap();
        let b = run_mpc(&sys, &clf, &[0.3, -0.2], &MpcConfig { seed: 99, ..base }, &EvalParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn monte_carlo_without_noise_has_zero_spread() {
        let sys = make_example_2d(1.2).unwrap();
        let clf = ex_clf();
        let cfg = MpcConfig {
            horizon: 1.0,
            dt_sde: 1e-3,
            n_monte_carlo: 7,
            controller: Controller::SaturatedLinear,
            ..Default::default()
        };
        let single = run_mpc(&sys, &clf, &[0.3, 0.3], &cfg, &EvalParams::default()).unwrap();
        let mc = monte_carlo(&sys, &clf, &[0.3, 0.3], &cfg, &EvalParams::default(), Execution::Parallel).unwrap();
        assert!(mc.std.iter().all(|s| *s == 0.0));
        assert_eq!(mc.mean, single.mean);
    }

    #[test]
    fn monte_carlo_starts_deterministic() {
        let sys = make_example_2d(1.2).unwrap();
        let clf = ex_clf();
        let cfg = MpcConfig {
            horizon: 0.5,
            dt_sde: 1e-3,
            noise: vec![0.3, 0.3],
            n_monte_carlo: 9,
            seed: 5,
            controller: Controller::SaturatedLinear,
            ..Default::default()
        };
        let x0 = [0.21, -0.13];
        let mc = monte_carlo(&sys, &clf, &x0, &cfg, &EvalParams::default(), Execution::Parallel).unwrap();
        assert_eq!(mc.mean[0], norm(&x0));
        assert_eq!(mc.std[0], 0.0);
        assert!(mc.std.last().unwrap() > &0.0);
        let seq = monte_carlo(&sys, &clf, &x0, &cfg, &EvalParams::default(), Execution::Sequential).unwrap();
        assert_eq!(mc, seq);
    }

    #[test]
    fn controls_are_piecewise_constant() {
        let sys = make_example_2d(1.2).unwrap();
        let clf = ex_clf();
        let cfg = MpcConfig { horizon: 0.5, dt_sde: 1e-3, controller: Controller::SaturatedLinear, ..Default::default() };
        let run = run_mpc(&sys, &clf, &[0.3, 0.1], &cfg, &EvalParams::default()).unwrap();
        for (k, s) in run.switches.iter().enumerate() {
            assert!((s.t - 0.1 * k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn adaptive_grid_halves_steps_inside_region() {
        let sys = make_example_2d(1.2).unwrap();
        let clf = ex_clf();
        let cfg = MpcConfig {
            horizon: 1.0,
            dt_sde: 1e-3,
            controller: Controller::SaturatedLinear,
            adaptive_region: Some(vec![[-1.0, 1.0], [-1.0, 1.0]]),
            ..Default::default()
        };
        let run = run_mpc(&sys, &clf, &[0.3, 0.1], &cfg, &EvalParams::default()).unwrap();
        assert_eq!(run.switches.len(), 20);
        assert_eq!(run.times.len(), 21);
    }

    /// Endpoint error of `dx = -x dt + sigma dW` against the exact solution
    /// driven by the same Brownian increments.
    fn em_error(dt: f64, paths: usize) -> f64 {
        let (sigma, t_end) = (0.1, 1.0);
        let fine_per = 64usize;
        let steps = (t_end / dt).round() as usize;
        let mut total = 0.0;
        for k in 0..paths {
            let mut rng = stream(17, k as u64);
            let (mut x_em, mut x_ex) = (1.0f64, 1.0f64);
            let h = dt / fine_per as f64;
            for _ in 0..steps {
                let mut dw = 0.0;
                for _ in 0..fine_per {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let dwi = h.sqrt() * z;
                    // exact OU transition over h conditioned on the same increment (first order in h, tiny h)
                    x_ex = x_ex * (-h).exp() + sigma * dwi * (-0.5 * h).exp();
                    dw += dwi;
                }
                x_em += -x_em * dt + sigma * dw;
            }
            total += (x_em - x_ex).abs();
        }
        total / paths as f64
    }

    #[test]
    fn euler_maruyama_is_first_order_for_additive_noise() {
        let e: Vec<f64> = [1e-3, 5e-4, 2.5e-4].iter().map(|dt| em_error(*dt, 40)).collect();
        for w in e.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 2.0 / 1.5 && ratio < 2.0 * 1.5, "errors {e:?}");
        }
    }

    #[test]
    fn scalar_system_runs() {
        let sys = scalar_decay();
        let clf = LocalClf::quadratic(
            nalgebra::DMatrix::from_element(1, 1, 1.0),
            nalgebra::DMatrix::from_element(1, 1, -0.5),
            1.0,
            0.5,
            0.25,
        )
        .unwrap();
        let cfg = MpcConfig { horizon: 1.0, dt_sde: 1e-3, controller: Controller::SaturatedLinear, ..Default::default() };
        let run = run_mpc(&sys, &clf, &[0.5], &cfg, &EvalParams::default()).unwrap();
        assert!((run.final_state()[0] - 0.5 * (-1.0f64).exp()).abs() < 1e-3);
    }
}
