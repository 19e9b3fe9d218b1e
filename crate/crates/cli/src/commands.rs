//! Command bodies. Each returns the files it wants written; nothing touches
//! the output directory until a command has fully succeeded.

use clf_forge::characteristics::{integrate_forward, integrate_reverse, Target};
use clf_forge::local_clf::{find_level_sup, ClfKind, LevelSearchReport, LocalClf};
use clf_forge::mpc::monte_carlo;
use clf_forge::par::{map_indexed, Execution};
use clf_forge::report::{self, fmt_f64};
use clf_forge::rng::sub_seed;
use clf_forge::shooting::terminal_multiplier_roots;
use clf_forge::system::ControlSystem;
use clf_forge::value_eval::{evaluate_grid, evaluate_state, evaluate_state_ball, ValueResult};
use serde::Serialize;
use std::path::Path;

use crate::config::{matrix_rows, JobConfig};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    LocalClf,
    Grid,
    Eval,
    Mpc,
    CharTrace,
}

pub type Files = Vec<(&'static str, String)>;

pub fn execute(kind: Kind, cfg: &JobConfig) -> Result<Files, CliError> {
    let sys = cfg.build_system()?;
    let sys = sys.as_ref();
    cfg.state_dims_ok(sys.state_dim())?;
    match kind {
        Kind::LocalClf => local_clf(sys, cfg),
        Kind::Grid => grid(sys, cfg),
        Kind::Eval => eval(sys, cfg),
        Kind::Mpc => mpc(sys, cfg),
        Kind::CharTrace => char_trace(sys, cfg),
    }
}

pub fn write_all(out: &Path, files: &Files) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    for (name, text) in files {
        let path = out.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn level_search(sys: &dyn ControlSystem, clf: &LocalClf, cfg: &JobConfig) -> Result<LevelSearchReport, CliError> {
    let mut search = cfg.level_search;
    search.seed = cfg.seed;
    find_level_sup(sys, clf, &search, Execution::Parallel).map_err(CliError::from_core)
}

/// Local CLF with the configured levels, or with the searched level when
/// `levels.search` is set (`c1` keeps its ratio to `c`).
fn resolve_clf(sys: &dyn ControlSystem, cfg: &JobConfig) -> Result<LocalClf, CliError> {
    let clf = cfg.build_clf(sys)?;
    if !cfg.levels.search {
        return Ok(clf);
    }
    let rep = level_search(sys, &clf, cfg)?;
    let c = rep.suggested_c().ok_or_else(|| CliError::Numerical("no admissible level among the tested ones".into()))?;
    let c1 = c * cfg.levels.c1 / cfg.levels.c;
    eprintln!("clf-forge: using searched level c = {c}, c1 = {c1}");
    clf.with_levels(c, c1).map_err(CliError::from_core)
}

#[derive(Serialize)]
struct ClfSummary {
    kind: &'static str,
    alpha: Option<f64>,
    c_tilde: f64,
    c_sup: Option<f64>,
    suggested_c: Option<f64>,
}

fn local_clf(sys: &dyn ControlSystem, cfg: &JobConfig) -> Result<Files, CliError> {
    let clf = cfg.build_clf(sys)?;
    let rep = level_search(sys, &clf, cfg)?;
    match rep.c_sup {
        Some(c) => eprintln!("clf-forge: largest admissible level {c}"),
        None => eprintln!("clf-forge: no admissible level in (0, {}]", rep.c_tilde),
    }
    let mut files: Files = Vec::new();
    let (kind, alpha) = match clf.kind() {
        ClfKind::Quadratic { p, s, alpha } => {
            files.push(("P.json", report::to_json(&matrix_rows(p))));
            files.push(("S.json", report::to_json(&matrix_rows(s))));
            ("quadratic", Some(*alpha))
        }
        ClfKind::Analytic(_) => ("analytic", None),
    };
    let summary =
        ClfSummary { kind, alpha, c_tilde: rep.c_tilde, c_sup: rep.c_sup, suggested_c: rep.suggested_c() };
    files.push(("local_clf.json", report::to_json(&summary)));
    files.push(("level_report.csv", report::level_report_csv(&rep)));
    Ok(files)
}

fn grid(sys: &dyn ControlSystem, cfg: &JobConfig) -> Result<Files, CliError> {
    let spec = cfg.grid.build()?;
    if spec.dim() != sys.state_dim() {
        return Err(CliError::Config("grid dimension differs from the state dimension".into()));
    }
    let clf = resolve_clf(sys, cfg)?;
    let res = evaluate_grid(sys, &clf, &spec, &cfg.eval, cfg.seed, Execution::Parallel).map_err(CliError::from_core)?;
    Ok(vec![
        ("values.csv", report::grid_csv(&res)),
        ("domain_mask.csv", report::domain_mask_csv(&res)),
        ("plot.gp", report::gnuplot_script(&res, "values.csv")),
    ])
}

fn result_cells(r: &ValueResult) -> Vec<String> {
    let mut row = vec![fmt_f64(r.v), fmt_f64(r.value)];
    row.extend(r.control.iter().map(|v| fmt_f64(*v)));
    row.push(r.status.as_str().into());
    row.push(fmt_f64(r.shooting_error));
    row.push(fmt_f64(r.shooting_time));
    row.push(fmt_f64(r.replacement_indicator));
    row.push(r.exit_time.map_or_else(|| "nan".into(), fmt_f64));
    row
}

/// `eval.csv`: one row per state and target (`omega_c`, then each ball).
fn eval(sys: &dyn ControlSystem, cfg: &JobConfig) -> Result<Files, CliError> {
    let states: Vec<Vec<f64>> = if cfg.states.is_empty() { cfg.x0.iter().cloned().collect() } else { cfg.states.clone() };
    if states.is_empty() {
        return Err(CliError::Config("eval needs `states` or `x0`".into()));
    }
    let clf = resolve_clf(sys, cfg)?;
    let params = cfg.eval_params(sys.state_dim());
    let per_state = map_indexed(states.len(), Execution::Parallel, |i| {
        let seed = sub_seed(cfg.seed, i as u64);
        let mut rows = vec![("omega_c".to_string(), evaluate_state(sys, &clf, &states[i], &params, seed)?)];
        for (k, delta) in cfg.ball_deltas.iter().enumerate() {
            let r = evaluate_state_ball(sys, *delta, &states[i], &params, sub_seed(seed, k as u64 + 1))?;
            rows.push((format!("ball:{}", fmt_f64(*delta)), r));
        }
        Ok(rows)
    })
    .into_iter()
    .collect::<clf_forge::Result<Vec<_>>>()
    .map_err(CliError::from_core)?;
    let n = sys.state_dim();
    let m = sys.control_dim();
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.extend(["target", "v", "V"].map(String::from));
    header.extend((1..=m).map(|j| format!("u{j}")));
    header.extend(
        ["status", "shooting_error", "shooting_time", "replacement_indicator", "exit_time"].map(String::from),
    );
    let rows = states.iter().zip(per_state).flat_map(|(x, rows)| {
        rows.into_iter().map(move |(target, r)| {
            let mut row: Vec<String> = x.iter().map(|v| fmt_f64(*v)).collect();
            row.push(target);
            row.extend(result_cells(&r));
            row
        })
    });
    Ok(vec![("eval.csv", report::csv(&header, rows))])
}

fn mpc(sys: &dyn ControlSystem, cfg: &JobConfig) -> Result<Files, CliError> {
    let x0 = cfg.x0.as_ref().ok_or_else(|| CliError::Config("mpc needs `x0`".into()))?;
    let clf = resolve_clf(sys, cfg)?;
    let mut mpc = cfg.mpc.clone();
    mpc.seed = cfg.seed;
    let run = monte_carlo(sys, &clf, x0, &mpc, &cfg.eval_params(sys.state_dim()), Execution::Parallel).map_err(CliError::from_core)?;
    Ok(vec![
        ("mpc_mean_std.csv", report::mpc_mean_std_csv(&run)),
        ("switches.csv", report::switches_csv(&run)),
        ("mpc_states.csv", report::mpc_states_csv(&run)),
    ])
}

fn char_trace(sys: &dyn ControlSystem, cfg: &JobConfig) -> Result<Files, CliError> {
    let tr = &cfg.trace;
    let clf = resolve_clf(sys, cfg)?;
    let target = Target::Sublevel(&clf);
    let t_max = tr.t_max.unwrap_or(cfg.eval.t_max);
    if !(t_max > 0.0) {
        return Err(CliError::Config("trace horizon must be positive".into()));
    }
    let params = cfg.eval_params(sys.state_dim());
    let exit = params.exit(t_max);
    let integ = &cfg.eval.integrator;
    let ch = if tr.reverse {
        let xi = tr.xi.as_ref().ok_or_else(|| CliError::Config("reverse trace needs `trace.xi`".into()))?;
        let nrm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(nrm > 0.0) || !nrm.is_finite() {
            return Err(CliError::Config("`trace.xi` must be a nonzero direction".into()));
        }
        let xi: Vec<f64> = xi.iter().map(|v| v / nrm).collect();
        let ptilde = match tr.ptilde {
            Some(p) => p,
            None => *terminal_multiplier_roots(sys, &target, &xi)
                .map_err(CliError::from_core)?
                .first()
                .ok_or_else(|| CliError::Numerical("no terminal multiplier root in (0, 1) for this direction".into()))?,
        };
        integrate_reverse(sys, &target, &xi, ptilde, &exit, integ)
    } else {
        let x0 = cfg.x0.as_ref().ok_or_else(|| CliError::Config("forward trace needs `x0`".into()))?;
        let p0 = match &tr.p0 {
            Some(p) => p.clone(),
            None => evaluate_state(sys, &clf, x0, &params, cfg.seed)
                .map_err(CliError::from_core)?
                .costate
                .ok_or_else(|| CliError::Numerical("no optimal costate available at x0".into()))?,
        };
        integrate_forward(sys, &target, x0, &p0, tr.ptilde.unwrap_or(1.0), &exit, integ)
    }
    .map_err(CliError::from_core)?;
    Ok(vec![("trace.csv", report::trace_csv(sys, &ch))])
}
