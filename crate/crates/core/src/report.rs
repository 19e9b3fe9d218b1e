//! Text emission: CSV with a header row and 17 significant digits, JSON, and
//! gnuplot scripts. Everything renders to `String` so callers decide when
//! (and whether) to touch the file system.

use crate::characteristics::{hamiltonian, Characteristic};
use crate::local_clf::LevelSearchReport;
use crate::mpc::{ControlSource, MpcRun};
use crate::system::ControlSystem;
use crate::value_eval::GridResult;
use serde::Serialize;
use std::fmt::Write;

/// Shortest-roundtrip-safe rendering with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        // adding zero folds -0 into 0
        format!("{:.16e}", v + 0.0)
    }
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// CSV document from a header and rows of already formatted cells.
pub fn csv<I>(header: &[String], rows: I) -> String
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

/// Per-node values: `x1..xn, v, V, u1..um, status, shooting_error,
/// shooting_time, replacement_indicator, in_domain_mask`.
pub fn grid_csv(res: &GridResult) -> String {
    let n = res.grid.dim();
    let m = res.results.first().map_or(0, |r| r.control.len());
    let mut header = numbered("x", n);
    header.extend(["v".into(), "V".into()]);
    header.extend(numbered("u", m));
    header.extend(
        ["status", "shooting_error", "shooting_time", "replacement_indicator", "in_domain_mask"].map(String::from),
    );
    let rows = res.nodes.iter().zip(&res.results).zip(&res.mask).map(|((x, r), mask)| {
        let mut row: Vec<String> = x.iter().map(|v| fmt_f64(*v)).collect();
        row.push(fmt_f64(r.v));
        row.push(fmt_f64(r.value));
        row.extend(r.control.iter().map(|v| fmt_f64(*v)));
        row.push(r.status.as_str().into());
        row.push(fmt_f64(r.shooting_error));
        row.push(fmt_f64(r.shooting_time));
        row.push(fmt_f64(r.replacement_indicator));
        row.push(u8::from(*mask).to_string());
        row
    });
    csv(&header, rows)
}

/// `x1..xn, in_domain_mask`.
pub fn domain_mask_csv(res: &GridResult) -> String {
    let mut header = numbered("x", res.grid.dim());
    header.push("in_domain_mask".into());
    let rows = res.nodes.iter().zip(&res.mask).map(|(x, mask)| {
        let mut row: Vec<String> = x.iter().map(|v| fmt_f64(*v)).collect();
        row.push(u8::from(*mask).to_string());
        row
    });
    csv(&header, rows)
}

/// `t, x1..xn, p1..pn, u1..um, cost, h_drift` with `h_drift = H(t) - H(0)`.
pub fn trace_csv(sys: &dyn ControlSystem, ch: &Characteristic) -> String {
    let n = sys.state_dim();
    let m = sys.control_dim();
    let mut header = vec!["t".to_string()];
    header.extend(numbered("x", n));
    header.extend(numbered("p", n));
    header.extend(numbered("u", m));
    header.extend(["cost".into(), "h_drift".into()]);
    let h0 = ch.states.first().map_or(0.0, |x| hamiltonian(sys, x, &ch.costates[0], ch.ptilde));
    let rows = (0..ch.times.len()).map(|k| {
        let mut row = vec![fmt_f64(ch.times[k])];
        row.extend(ch.states[k].iter().map(|v| fmt_f64(*v)));
        row.extend(ch.costates[k].iter().map(|v| fmt_f64(*v)));
        row.extend(ch.controls[k].iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(ch.costs[k]));
        row.push(fmt_f64(hamiltonian(sys, &ch.states[k], &ch.costates[k], ch.ptilde) - h0));
        row
    });
    csv(&header, rows)
}

/// `t, mean, std` of `|x(t)|`.
pub fn mpc_mean_std_csv(run: &MpcRun) -> String {
    let header = ["t", "mean", "std"].map(String::from);
    let rows = (0..run.times.len()).map(|k| vec![fmt_f64(run.times[k]), fmt_f64(run.mean[k]), fmt_f64(run.std[k])]);
    csv(&header, rows)
}

fn source_str(s: ControlSource) -> &'static str {
    match s {
        ControlSource::LocalFeedback => "local_feedback",
        ControlSource::WarmStart => "warm_start",
        ControlSource::Pipeline => "pipeline",
        ControlSource::SaturatedLinear => "saturated_linear",
        ControlSource::Reused => "reused",
    }
}

/// Switch log of the first sample: `t, u1..um, source, status`.
pub fn switches_csv(run: &MpcRun) -> String {
    let m = run.switches.first().map_or(0, |s| s.control.len());
    let mut header = vec!["t".to_string()];
    header.extend(numbered("u", m));
    header.extend(["source".into(), "status".into()]);
    let rows = run.switches.iter().map(|s| {
        let mut row = vec![fmt_f64(s.t)];
        row.extend(s.control.iter().map(|v| fmt_f64(*v)));
        row.push(source_str(s.source).into());
        row.push(s.status.map_or("", |st| st.as_str()).into());
        row
    });
    csv(&header, rows)
}

/// Recorded states of the first sample: `t, x1..xn`.
pub fn mpc_states_csv(run: &MpcRun) -> String {
    let n = run.states.first().map_or(0, |s| s.len());
    let mut header = vec!["t".to_string()];
    header.extend(numbered("x", n));
    let rows = run.times.iter().zip(&run.states).map(|(t, x)| {
        let mut row = vec![fmt_f64(*t)];
        row.extend(x.iter().map(|v| fmt_f64(*v)));
        row
    });
    csv(&header, rows)
}

/// `level, worst_decrease, worst_slack, admissible`.
pub fn level_report_csv(rep: &LevelSearchReport) -> String {
    let header = ["level", "worst_decrease", "worst_slack", "admissible"].map(String::from);
    let rows = rep.levels.iter().map(|r| {
        vec![fmt_f64(r.level), fmt_f64(r.worst_decrease), fmt_f64(r.worst_slack), u8::from(r.admissible).to_string()]
    });
    csv(&header, rows)
}

/// gnuplot script drawing surfaces from `values.csv` (2D grids only).
pub fn gnuplot_script(res: &GridResult, values_file: &str) -> String {
    let n = res.grid.dim();
    let m = res.results.first().map_or(0, |r| r.control.len());
    let mut s = String::new();
    let _ = writeln!(s, "# usage: gnuplot plot.gp");
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set terminal pngcairo size 1200,900");
    if n != 2 {
        let _ = writeln!(s, "# surfaces need a 2D grid; this one has dimension {n}");
        return s;
    }
    let _ = writeln!(s, "set xlabel 'x1'\nset ylabel 'x2'\nset hidden3d\nset ticslevel 0");
    let _ = writeln!(s, "set dgrid3d {},{}", res.grid.counts[1], res.grid.counts[0]);
    // columns: x1 x2 v V u.. status err time repl mask
    let mut plots = vec![("v", 3usize), ("V", 4)];
    for j in 0..m {
        plots.push((["u1", "u2", "u3", "u4", "u5", "u6"].get(j).copied().unwrap_or("u"), 5 + j));
    }
    plots.push(("shooting_error", 6 + m));
    plots.push(("shooting_time", 7 + m));
    plots.push(("replacement_indicator", 8 + m));
    for (name, col) in plots {
        let _ = writeln!(s, "set output '{name}.png'");
        let _ = writeln!(s, "set title '{name}'");
        let _ = writeln!(s, "splot '{values_file}' every ::1 using 1:2:{col} with lines notitle");
    }
    let _ = writeln!(s, "unset dgrid3d\nset output 'domain_mask.png'\nset view map\nset title 'inner domain estimate'");
    let _ = writeln!(s, "splot '{values_file}' every ::1 using 1:2:{} with points pt 5 palette notitle", 9 + m);
    s
}
