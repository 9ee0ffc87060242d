use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Value};

use super::Trajectory;
use crate::error::{Error, Result};
use crate::scalar::{cabs, carg, to_f64, Scalar};

fn bus_columns<T: Scalar>(traj: &Trajectory<T>) -> Vec<String> {
    traj.device_buses
        .iter()
        .flat_map(|b| [format!("v_bus{b}"), format!("theta_bus{b}")])
        .collect()
}

/// One row per sample: `t`, every state, then `V` and `θ` of each device
/// bus (machines first).
pub fn trajectory_csv<T: Scalar>(traj: &Trajectory<T>) -> String {
    let mut out = String::new();
    let mut header = vec!["t".to_string()];
    header.extend(traj.layout.state_names());
    header.extend(bus_columns(traj));
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..traj.len() {
        let _ = write!(out, "{}", traj.times[i]);
        for v in traj.states[i].iter() {
            let _ = write!(out, ",{}", to_f64(*v));
        }
        for z in &traj.terminals[i] {
            let _ = write!(out, ",{},{}", to_f64(cabs(*z)), to_f64(carg(*z)));
        }
        out.push('\n');
    }
    out
}

pub fn trajectory_json<T: Scalar>(traj: &Trajectory<T>) -> Value {
    let rows = |i: usize| -> Vec<f64> { traj.states[i].iter().map(|v| to_f64(*v)).collect() };
    let buses = |i: usize| -> Vec<f64> {
        traj.terminals[i]
            .iter()
            .flat_map(|z| [to_f64(cabs(*z)), to_f64(carg(*z))])
            .collect()
    };
    json!({
        "scenario": traj.scenario,
        "integrator": traj.options.integrator,
        "state_names": traj.layout.state_names(),
        "bus_columns": bus_columns(traj),
        "fault_index": traj.fault_index,
        "clearing_index": traj.clearing_index,
        "collapse": traj.collapse,
        "times": traj.times,
        "states": (0..traj.len()).map(rows).collect::<Vec<_>>(),
        "buses": (0..traj.len()).map(buses).collect::<Vec<_>>(),
    })
}

/// Writes `trajectory.csv` and/or `trajectory.json` into `dir`.
pub fn write_trajectory<T: Scalar>(traj: &Trajectory<T>, dir: &Path, csv: bool, json: bool) -> Result<()> {
    let write = |name: &str, body: String| {
        std::fs::write(dir.join(name), body).map_err(|e| Error::Export(format!("{}: {e}", dir.join(name).display())))
    };
    if csv {
        write("trajectory.csv", trajectory_csv(traj))?;
    }
    if json {
        let body = serde_json::to_string_pretty(&trajectory_json(traj)).map_err(|e| Error::Export(e.to_string()))?;
        write("trajectory.json", body)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{builtin_case, FaultScenario};
    use crate::tds::{simulate, SimOptions};

    #[test]
    fn csv_shape() {
        let case = builtin_case("ieee39_gfl2").unwrap();
        let traj = simulate::<f64>(&case, &FaultScenario::no_fault(0.1, 0.01), &SimOptions::default()).unwrap();
        let csv = trajectory_csv(&traj);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 12);
        let cols = lines[0].split(',').count();
        assert_eq!(cols, 1 + 24 + 2 * 10);
        assert!(lines.iter().all(|l| l.split(',').count() == cols));
        assert!(lines[0].starts_with("t,delta[0]"));
        assert!(lines[0].ends_with("v_bus37,theta_bus37"));
    }

    #[test]
    fn json_round_trips_through_serde() {
        let case = builtin_case("smib").unwrap();
        let traj = simulate::<f64>(&case, &FaultScenario::no_fault(0.05, 0.01), &SimOptions::default()).unwrap();
        let v = trajectory_json(&traj);
        let text = serde_json::to_string(&v).unwrap();
        let back: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["states"].as_array().unwrap().len(), 6);
        assert_eq!(back["state_names"][0], "delta[0]");
    }
}
