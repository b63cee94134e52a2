//! File formats: grid snapshots, run checkpoints, the diagnostics CSV
//! stream, and measure files. All text, UTF-8, LF line endings, with
//! 17-significant-digit decimals so every f64 round-trips bit-exactly.

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{BnError, Result};
use crate::grid::{build_grid, Distribution, EnergyGrid, Grading, GridSpec};
use crate::measures::{Atom, RadonMeasure};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

/// Full-precision decimal (17 significant digits round-trips f64).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub const CSV_HEADER: &str = "t,mass,energy,l1_total,l1_local,wsup,supxf,gbeta,dt";

pub fn diagnostics_csv(records: &[DiagnosticsRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 160 + 64);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.time),
            fmt_f64(r.mass),
            fmt_f64(r.energy),
            fmt_f64(r.l1_total),
            fmt_f64(r.l1_local),
            fmt_f64(r.wsup),
            fmt_f64(r.supxf),
            fmt_f64(r.gbeta),
            fmt_f64(r.dt),
        );
    }
    out
}

pub fn write_diagnostics_csv(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    std::fs::write(path, diagnostics_csv(records))?;
    Ok(())
}

pub fn read_diagnostics_csv(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => {
            return Err(BnError::Format {
                kind: "diagnostics csv",
                detail: format!("unexpected header {other:?}"),
            })
        }
    }
    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| BnError::Format {
                kind: "diagnostics csv",
                detail: format!("row {}: {e}", idx + 2),
            })?;
        if fields.len() != 9 {
            return Err(BnError::Format {
                kind: "diagnostics csv",
                detail: format!("row {}: expected 9 fields, got {}", idx + 2, fields.len()),
            });
        }
        records.push(DiagnosticsRecord {
            time: fields[0],
            mass: fields[1],
            energy: fields[2],
            l1_total: fields[3],
            l1_local: fields[4],
            wsup: fields[5],
            supxf: fields[6],
            gbeta: fields[7],
            dt: fields[8],
        });
    }
    Ok(records)
}

/// Grid snapshot block: `# bn-grid N=<n> xmax=<v> grading=<g>` header, then
/// one `x_i weight_i` pair per line.
pub fn grid_snapshot_text(grid: &EnergyGrid) -> String {
    let spec = grid.spec();
    let mut out = format!(
        "# bn-grid N={} xmax={} grading={}\n",
        grid.len(),
        fmt_f64(spec.x_max),
        spec.grading_label()
    );
    for (&x, &w) in grid.nodes().iter().zip(grid.weights()) {
        let _ = writeln!(out, "{} {}", fmt_f64(x), fmt_f64(w));
    }
    out
}

pub fn write_grid_snapshot(path: &Path, grid: &EnergyGrid) -> Result<()> {
    std::fs::write(path, grid_snapshot_text(grid))?;
    Ok(())
}

/// Checkpoint: the grid snapshot block, then `t=<time>` and one f_i per
/// line. Reading one back reproduces the state bit-exactly.
pub fn checkpoint_text(dist: &Distribution) -> String {
    let mut out = grid_snapshot_text(dist.grid());
    let _ = writeln!(out, "t={}", fmt_f64(dist.time()));
    for &v in dist.values() {
        let _ = writeln!(out, "{}", fmt_f64(v));
    }
    out
}

pub fn write_checkpoint(path: &Path, dist: &Distribution) -> Result<()> {
    std::fs::write(path, checkpoint_text(dist))?;
    Ok(())
}

fn parse_grid_header(line: &str) -> Result<(usize, f64, String)> {
    let bad = |detail: String| BnError::Format {
        kind: "grid snapshot",
        detail,
    };
    let rest = line
        .strip_prefix("# bn-grid ")
        .ok_or_else(|| bad(format!("missing '# bn-grid' header, got {line:?}")))?;
    let mut n = None;
    let mut xmax = None;
    let mut grading = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("N=") {
            n = v.parse::<usize>().ok();
        } else if let Some(v) = tok.strip_prefix("xmax=") {
            xmax = v.parse::<f64>().ok();
        } else if let Some(v) = tok.strip_prefix("grading=") {
            grading = Some(v.to_string());
        }
    }
    match (n, xmax, grading) {
        (Some(n), Some(x), Some(g)) => Ok((n, x, g)),
        _ => Err(bad(format!("incomplete header {line:?}"))),
    }
}

fn parse_grading_label(label: &str) -> Result<Grading> {
    let bad = |detail: String| BnError::Format {
        kind: "grid snapshot",
        detail,
    };
    if label == "uniform" {
        return Ok(Grading::Uniform);
    }
    if let Some(v) = label.strip_prefix("geometric(").and_then(|s| s.strip_suffix(')')) {
        return Ok(Grading::Geometric {
            ratio: v.parse().map_err(|e| bad(format!("bad ratio: {e}")))?,
        });
    }
    if let Some(v) = label.strip_prefix("power(").and_then(|s| s.strip_suffix(')')) {
        return Ok(Grading::Power {
            exponent: v.parse().map_err(|e| bad(format!("bad exponent: {e}")))?,
        });
    }
    Err(bad(format!("unknown grading {label:?}")))
}

/// Reads a grid snapshot; the stored nodes and weights are used verbatim
/// (not rebuilt), so resumed runs see bit-identical quadrature.
pub fn read_grid_snapshot(path: &Path) -> Result<EnergyGrid> {
    let text = std::fs::read_to_string(path)?;
    let (grid, consumed) = parse_grid_block(&text)?;
    let extra = text.lines().skip(consumed).any(|l| !l.trim().is_empty());
    if extra {
        return Err(BnError::Format {
            kind: "grid snapshot",
            detail: "trailing content after the node table".into(),
        });
    }
    Ok(grid)
}

fn parse_grid_block(text: &str) -> Result<(EnergyGrid, usize)> {
    let bad = |detail: String| BnError::Format {
        kind: "grid snapshot",
        detail,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let (n, x_max, grading_label) = parse_grid_header(header)?;
    let grading = parse_grading_label(&grading_label)?;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for (i, line) in lines.take(n).enumerate() {
        let mut it = line.split_whitespace();
        let x: f64 = it
            .next()
            .ok_or_else(|| bad(format!("node row {} empty", i + 1)))?
            .parse()
            .map_err(|e| bad(format!("node row {}: {e}", i + 1)))?;
        let w: f64 = it
            .next()
            .ok_or_else(|| bad(format!("node row {} missing weight", i + 1)))?
            .parse()
            .map_err(|e| bad(format!("node row {}: {e}", i + 1)))?;
        nodes.push(x);
        weights.push(w);
    }
    if nodes.len() != n {
        return Err(bad(format!("expected {n} node rows, got {}", nodes.len())));
    }
    let spec = GridSpec {
        node_count: n,
        x_max,
        grading,
        first_node: nodes[0],
        first_cell_exponent: first_cell_exponent_from(&nodes, &weights),
    };
    let grid = EnergyGrid::from_parts(nodes, weights, spec)?;
    Ok((grid, n + 1))
}

/// The stored weights determine the leading-cell exponent implicitly:
/// w_1 = x_1 / (1 - a) + (x_2 - x_1)/2.
fn first_cell_exponent_from(nodes: &[f64], weights: &[f64]) -> f64 {
    if nodes.len() < 2 {
        return 0.0;
    }
    let lead = weights[0] - (nodes[1] - nodes[0]) / 2.0;
    if lead <= 0.0 {
        return 0.0;
    }
    1.0 - nodes[0] / lead
}

pub fn read_checkpoint(path: &Path) -> Result<Distribution> {
    let text = std::fs::read_to_string(path)?;
    let (grid, consumed) = parse_grid_block(&text)?;
    let bad = |detail: String| BnError::Format {
        kind: "checkpoint",
        detail,
    };
    let mut lines = text.lines().skip(consumed);
    let t_line = lines.next().ok_or_else(|| bad("missing t= line".into()))?;
    let time: f64 = t_line
        .strip_prefix("t=")
        .ok_or_else(|| bad(format!("expected t=<time>, got {t_line:?}")))?
        .parse()
        .map_err(|e| bad(format!("bad time: {e}")))?;
    let mut values = Vec::with_capacity(grid.len());
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        values.push(
            line.trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("bad value row: {e}")))?,
        );
    }
    if values.len() != grid.len() {
        return Err(bad(format!(
            "expected {} values, got {}",
            grid.len(),
            values.len()
        )));
    }
    Distribution::new(Arc::new(grid), values, time)
}

/// Measure file: `atom <x> <mass>` lines plus an optional
/// `density <path>` reference to a checkpoint file.
pub fn read_measure_file(path: &Path) -> Result<RadonMeasure> {
    let text = std::fs::read_to_string(path)?;
    let bad = |line: usize, detail: String| BnError::Format {
        kind: "measure file",
        detail: format!("line {line}: {detail}"),
    };
    let mut atoms = Vec::new();
    let mut density = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut it = trimmed.split_whitespace();
        match it.next() {
            Some("atom") => {
                let x: f64 = it
                    .next()
                    .ok_or_else(|| bad(line_no, "missing position".into()))?
                    .parse()
                    .map_err(|e| bad(line_no, format!("bad position: {e}")))?;
                let m: f64 = it
                    .next()
                    .ok_or_else(|| bad(line_no, "missing mass".into()))?
                    .parse()
                    .map_err(|e| bad(line_no, format!("bad mass: {e}")))?;
                atoms.push(Atom {
                    position: x,
                    mass: m,
                });
            }
            Some("density") => {
                let rel = it
                    .next()
                    .ok_or_else(|| bad(line_no, "missing density path".into()))?;
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                density = Some(read_checkpoint(&base.join(rel))?);
            }
            Some(tok) => return Err(bad(line_no, format!("unknown directive {tok:?}"))),
            None => {}
        }
    }
    let mut mu = RadonMeasure::from_atoms(atoms)?;
    mu.density = density;
    Ok(mu)
}

pub fn write_measure_file(path: &Path, mu: &RadonMeasure, density_ref: Option<&str>) -> Result<()> {
    let mut out = String::new();
    for a in &mu.atoms {
        let _ = writeln!(out, "atom {} {}", fmt_f64(a.position), fmt_f64(a.mass));
    }
    if let Some(rel) = density_ref {
        let _ = writeln!(out, "density {rel}");
    }
    std::fs::write(path, out)?;
    Ok(())
}
