use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde_json::{json, Value};

pub fn prepare(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

pub fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, body).with_context(|| format!("cannot write {}", path.display()))
}

/// Everything that differs between identical invocations lives here.
pub fn metadata(timing: Value) -> Value {
    let generated_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    json!({
        "generated_at": generated_at,
        "timing": timing,
    })
}

/// Pretty JSON of `body` with a `metadata` member added.
pub fn document(mut body: Value, timing: Value) -> Result<String> {
    if let Value::Object(map) = &mut body {
        map.insert("metadata".into(), metadata(timing));
    }
    let mut text = serde_json::to_string_pretty(&body)?;
    text.push('\n');
    Ok(text)
}

fn header(title: &str) -> String {
    format!(
        "# gnuplot script; run with `gnuplot -p {title}`\nset datafile separator ','\nset key autotitle columnhead\nset grid\n"
    )
}

/// Machine angles and converter PLL angles against time.
pub fn trajectory_plot(n_sync: usize, n_gfl: usize) -> String {
    let mut s = header("trajectory.gp");
    s.push_str("set xlabel 't (s)'\nset ylabel 'angle (rad)'\n");
    let delta = format!("for [i=2:{}] 'trajectory.csv' using 1:i with lines", n_sync + 1);
    if n_gfl == 0 {
        s.push_str(&format!("plot {delta}\n"));
    } else {
        let first = 2 + 2 * n_sync + 2 * n_gfl;
        s.push_str(&format!(
            "plot {delta}, \\\n     for [i={first}:{}] 'trajectory.csv' using 1:i with lines dashtype 2\n",
            first + n_gfl - 1
        ));
    }
    s
}

pub fn sensitivity_plot(n_states: usize, gfl: bool) -> String {
    let mut s = header("sensitivity.gp");
    s.push_str("set xlabel 's (s since clearing)'\nset ylabel 'SN'\n");
    let sg = n_states + 2;
    if gfl {
        s.push_str(&format!(
            "plot 'sensitivity.csv' using 1:{sg} with lines, '' using 1:{} with lines\n",
            sg + 1
        ));
    } else {
        s.push_str(&format!("plot 'sensitivity.csv' using 1:{sg} with lines\n"));
    }
    s
}

/// Probe points and the extrapolated lines, one `(slope, t_cr)` per fleet.
pub fn lambda_plot(lines: &[(String, f64, f64)]) -> String {
    let mut s = header("lambda.gp");
    s.push_str("set xlabel 'T_cl (s)'\nset ylabel 'lambda'\nset xzeroaxis\n");
    let mut terms = Vec::new();
    for (i, (fleet, slope, t_cr)) in lines.iter().enumerate() {
        s.push_str(&format!("f{i}(x) = {slope:e} * (x - {t_cr})\n"));
        terms.push(format!("f{i}(x) title '{fleet} line'"));
        terms.push(format!(
            "'lambda.csv' using (strcol(1) eq '{fleet}' ? $2 : NaN):4 with points pt 7 title '{fleet}'"
        ));
    }
    s.push_str(&format!("plot {}\n", terms.join(", \\\n     ")));
    s
}
