//! Per-panel CSV export of one recorded episode: fault estimates with
//! one-sigma bands against the true fault, tracking error against its bound,
//! and the applied actions.

use std::io::Write;
use std::path::Path;

use crate::env::EpisodeTrace;
use crate::error::{Error, Result};

fn check_complete(trace: &EpisodeTrace) -> Result<(usize, usize)> {
    let Some(first) = trace.rows.first() else {
        return Err(Error::contract(
            "empty trace: missing columns t, y, y_ref, action, reward, cost, mu_z, sigma_z_diag, z_true",
        ));
    };
    let mut missing = Vec::new();
    if first.y.is_empty() {
        missing.push("y");
    }
    if first.y_ref.len() != first.y.len() {
        missing.push("y_ref");
    }
    if first.action.is_empty() {
        missing.push("action");
    }
    if first.mu_z.len() != first.action.len() {
        missing.push("mu_z");
    }
    if first.sigma_z_diag.len() != first.action.len() {
        missing.push("sigma_z_diag");
    }
    if first.z_true.len() != first.action.len() {
        missing.push("z_true");
    }
    if !missing.is_empty() {
        return Err(Error::contract(format!("partial trace: missing columns {}", missing.join(", "))));
    }
    Ok((first.y.len(), first.action.len()))
}

/// Fault panel: `t, z_true_i, mu_z_i, lo_i, hi_i` with `lo/hi` the one-sigma
/// band around the estimate mean.
pub fn write_fault_panel<W: Write>(mut w: W, trace: &EpisodeTrace) -> Result<()> {
    let (_, n_u) = check_complete(trace)?;
    let mut header = vec!["t".to_string()];
    for i in 0..n_u {
        header.push(format!("z_true_{i}"));
        header.push(format!("mu_z_{i}"));
        header.push(format!("lo_{i}"));
        header.push(format!("hi_{i}"));
    }
    writeln!(w, "{}", header.join(","))?;
    for row in &trace.rows {
        let mut fields = vec![row.t.to_string()];
        for i in 0..n_u {
            let sd = row.sigma_z_diag[i].max(0.0).sqrt();
            fields.push(row.z_true[i].to_string());
            fields.push(row.mu_z[i].to_string());
            fields.push((row.mu_z[i] - sd).to_string());
            fields.push((row.mu_z[i] + sd).to_string());
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Tracking panel: outputs, references, the infinity-norm error and the
/// bound implied by the recorded violation flags.
pub fn write_tracking_panel<W: Write>(mut w: W, trace: &EpisodeTrace, delta_y_max: f64) -> Result<()> {
    let (n_y, _) = check_complete(trace)?;
    let mut header = vec!["t".to_string()];
    for i in 0..n_y {
        header.push(format!("y_{i}"));
        header.push(format!("y_ref_{i}"));
    }
    header.push("err_inf".into());
    header.push("bound".into());
    header.push("violation".into());
    writeln!(w, "{}", header.join(","))?;
    for row in &trace.rows {
        let mut fields = vec![row.t.to_string()];
        let mut err: f64 = 0.0;
        for i in 0..n_y {
            fields.push(row.y[i].to_string());
            fields.push(row.y_ref[i].to_string());
            err = err.max((row.y[i] - row.y_ref[i]).abs());
        }
        fields.push(err.to_string());
        fields.push(delta_y_max.to_string());
        fields.push(row.cost.to_string());
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Action panel: `t, action_i`.
pub fn write_action_panel<W: Write>(mut w: W, trace: &EpisodeTrace) -> Result<()> {
    let (_, n_u) = check_complete(trace)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..n_u).map(|i| format!("action_{i}")));
    writeln!(w, "{}", header.join(","))?;
    for row in &trace.rows {
        let mut fields = vec![row.t.to_string()];
        fields.extend(row.action.iter().map(|v| v.to_string()));
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Writes all three panels plus the raw trace into `out_dir`:
/// `trace.csv`, `fault_panel.csv`, `tracking_panel.csv`, `action_panel.csv`.
pub fn emit_episode_figure_data(
    trace: &EpisodeTrace,
    delta_y_max: f64,
    out_dir: &Path,
) -> Result<()> {
    check_complete(trace)?;
    std::fs::create_dir_all(out_dir)?;
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    std::fs::write(out_dir.join("trace.csv"), buf)?;

    let mut buf = Vec::new();
    write_fault_panel(&mut buf, trace)?;
    std::fs::write(out_dir.join("fault_panel.csv"), buf)?;

    let mut buf = Vec::new();
    write_tracking_panel(&mut buf, trace, delta_y_max)?;
    std::fs::write(out_dir.join("tracking_panel.csv"), buf)?;

    let mut buf = Vec::new();
    write_action_panel(&mut buf, trace)?;
    std::fs::write(out_dir.join("action_panel.csv"), buf)?;
    Ok(())
}
