//! Long-format plot data: one `(solver, x, re_err)` row per trace row.

use disa_core::metrics::Trace;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Iter,
    Time,
}

/// CSV with header `solver,x,re_err`; `x` is the iteration or the wallclock
/// in ms. Missing errors are left empty.
pub fn emit_plot_data(traces: &[Trace], kind: PlotKind) -> Result<String, CliError> {
    if traces.is_empty() || traces.iter().any(|t| t.rows.is_empty()) {
        return Err(CliError::EmptyTrace);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(["solver", "x", "re_err"]).map_err(csv_err)?;
    for t in traces {
        for r in &t.rows {
            let x = match kind {
                PlotKind::Iter => r.iter.to_string(),
                PlotKind::Time => r.ms.to_string(),
            };
            let e = r.re_err.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([t.meta.solver.as_str(), &x, &e]).map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
