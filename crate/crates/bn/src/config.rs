//! Run configuration: flat `key = value` text with dotted section
//! prefixes, chosen for diff-friendliness and zero-dependency parsing.
//! Unknown keys, duplicates, and type mismatches fail with the offending
//! line number; `canonical_text` emits the fully resolved configuration
//! in a form that reparses to the identical run.

use crate::diagnostics::DiagnosticParams;
use crate::equilibrium::{be_distribution, BEParams};
use crate::error::{BnError, Result};
use crate::grid::{build_grid, Distribution, Grading, GridSpec};
use crate::integrator::{Scheme, StepControls};
use crate::measures::singular_init;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    Be { alpha: f64, beta: f64 },
    Singular { alpha: f64, scale: f64, decay: f64 },
    Bump { center: f64, width: f64, height: f64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub initial: InitialData,
    pub controls: StepControls,
    pub scheme: Scheme,
    pub remap_on: bool,
    pub diagnostics: DiagnosticParams,
    pub output_dir: PathBuf,
    pub snapshot_stride: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.controls.validate()?;
        if self.snapshot_stride < 1 {
            return Err(BnError::InvalidInput(
                "snapshot_stride must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Builds the initial distribution this config describes. File-backed
    /// initial data resolves relative to `base`.
    pub fn build_initial(&self, base: &Path) -> Result<Distribution> {
        let grid = Arc::new(build_grid(&self.grid)?);
        match &self.initial {
            InitialData::Be { alpha, beta } => {
                let params = BEParams {
                    alpha: *alpha,
                    beta: *beta,
                    m0: 0.0,
                    supercritical: false,
                };
                be_distribution(&params, grid)
            }
            InitialData::Singular {
                alpha,
                scale,
                decay,
            } => singular_init(*alpha, *scale, *decay, &grid),
            InitialData::Bump {
                center,
                width,
                height,
            } => {
                if !(*width > 0.0 && *height >= 0.0) {
                    return Err(BnError::InvalidInput(format!(
                        "bump needs width > 0 and height >= 0, got ({width}, {height})"
                    )));
                }
                let (c, w, h) = (*center, *width, *height);
                Distribution::from_fn(grid, move |x| {
                    h * (-((x - c) / w) * ((x - c) / w)).exp()
                })
            }
            InitialData::File { path } => {
                let resolved = if path.is_absolute() {
                    path.clone()
                } else {
                    base.join(path)
                };
                crate::io::read_checkpoint(&resolved)
            }
        }
    }
}

struct Entry {
    line: usize,
    value: String,
    used: bool,
}

struct KeyTable {
    entries: BTreeMap<String, Entry>,
}

impl KeyTable {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            };
            let trimmed = stripped.trim();
            if trimmed.is_empty() {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or(BnError::Config {
                line,
                message: format!("expected `key = value`, got {trimmed:?}"),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() || value.is_empty() {
                return Err(BnError::Config {
                    line,
                    message: "empty key or value".into(),
                });
            }
            if let Some(prev) = entries.get(&key) {
                let prev: &Entry = prev;
                return Err(BnError::Config {
                    line,
                    message: format!("duplicate key {key:?} (first set at line {})", prev.line),
                });
            }
            entries.insert(
                key,
                Entry {
                    line,
                    value,
                    used: false,
                },
            );
        }
        Ok(KeyTable { entries })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.get_mut(key).map(|e| {
            e.used = true;
            (e.line, e.value.clone())
        })
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => v.parse().map_err(|e| BnError::Config {
                line,
                message: format!("{key}: not a number ({e})"),
            }),
        }
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => v.parse().map_err(|e| BnError::Config {
                line,
                message: format!("{key}: not an integer ({e})"),
            }),
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => match v.as_str() {
                "true" | "on" | "yes" | "1" => Ok(true),
                "false" | "off" | "no" | "0" => Ok(false),
                other => Err(BnError::Config {
                    line,
                    message: format!("{key}: expected a boolean, got {other:?}"),
                }),
            },
        }
    }

    fn required(&mut self, key: &str) -> Result<(usize, String)> {
        self.take(key).ok_or(BnError::Config {
            line: 0,
            message: format!("missing required key {key:?}"),
        })
    }

    fn reject_unused(&self) -> Result<()> {
        for (key, e) in &self.entries {
            if !e.used {
                return Err(BnError::Config {
                    line: e.line,
                    message: format!("unknown key {key:?}"),
                });
            }
        }
        Ok(())
    }
}

/// Parses the flat key = value format.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut table = KeyTable::parse(text)?;

    let node_count = table.usize("grid.node_count", 128)?;
    let x_max = table.f64("grid.x_max", 20.0)?;
    let grading = match table.take("grid.grading") {
        None => Grading::Power { exponent: 2.0 },
        Some((line, v)) => match v.as_str() {
            "uniform" => Grading::Uniform,
            "power" => Grading::Power {
                exponent: table.f64("grid.power_exponent", 2.0)?,
            },
            "geometric" => Grading::Geometric {
                ratio: table.f64("grid.geometric_ratio", 1.1)?,
            },
            other => {
                return Err(BnError::Config {
                    line,
                    message: format!(
                        "grid.grading: expected uniform|power|geometric, got {other:?}"
                    ),
                })
            }
        },
    };
    // Allow the knobs even when another grading ignores them.
    let _ = table.f64("grid.power_exponent", 2.0)?;
    let _ = table.f64("grid.geometric_ratio", 1.1)?;
    let default_first = match grading {
        Grading::Uniform => x_max / node_count as f64,
        Grading::Power { exponent } => x_max * (node_count as f64).powf(-exponent),
        Grading::Geometric { .. } => 1e-3,
    };
    let first_node = table.f64("grid.first_node", default_first)?;
    let grid = GridSpec {
        node_count,
        x_max,
        grading,
        first_node,
        first_cell_exponent: 0.0,
    };

    let (kind_line, kind) = table.required("initial.kind")?;
    let initial = match kind.as_str() {
        "be" => InitialData::Be {
            alpha: table.f64("initial.alpha", 1.0)?,
            beta: table.f64("initial.beta", 1.0)?,
        },
        "singular" => InitialData::Singular {
            alpha: table.f64("initial.alpha", 0.75)?,
            scale: table.f64("initial.scale", 1.0)?,
            decay: table.f64("initial.decay", 1.0)?,
        },
        "bump" => InitialData::Bump {
            center: table.f64("initial.center", 1.0)?,
            width: table.f64("initial.width", 0.25)?,
            height: table.f64("initial.height", 1.0)?,
        },
        "file" => InitialData::File {
            path: PathBuf::from(table.required("initial.path")?.1),
        },
        other => {
            return Err(BnError::Config {
                line: kind_line,
                message: format!(
                    "initial.kind: expected be|singular|bump|file, got {other:?}"
                ),
            })
        }
    };

    let t_end = match table.take("controls.t_end") {
        Some((line, v)) => v.parse().map_err(|e| BnError::Config {
            line,
            message: format!("controls.t_end: not a number ({e})"),
        })?,
        None => {
            return Err(BnError::Config {
                line: 0,
                message: "missing required key \"controls.t_end\"".into(),
            })
        }
    };
    let mut controls = StepControls::new(t_end);
    controls.dt_init = table.f64("controls.dt_init", controls.dt_init)?;
    controls.dt_max = table.f64("controls.dt_max", controls.dt_max)?;
    controls.cfl_loss = table.f64("controls.cfl_loss", controls.cfl_loss)?;
    controls.rel_change_cap = table.f64("controls.rel_change_cap", controls.rel_change_cap)?;
    controls.blowup_threshold =
        table.f64("controls.blowup_threshold", controls.blowup_threshold)?;

    let scheme = match table.take("scheme") {
        None => Scheme::EtdMidpoint,
        Some((line, v)) => match v.as_str() {
            "etd1" => Scheme::Etd1,
            "etd_midpoint" => Scheme::EtdMidpoint,
            other => {
                return Err(BnError::Config {
                    line,
                    message: format!("scheme: expected etd1|etd_midpoint, got {other:?}"),
                })
            }
        },
    };
    let remap_on = table.bool("remap_on", true)?;

    let defaults = DiagnosticParams::default();
    let diagnostics = DiagnosticParams {
        delta: table.f64("diagnostics.delta", defaults.delta)?,
        wsup_alpha: table.f64("diagnostics.wsup_alpha", defaults.wsup_alpha)?,
        wsup_gamma: table.f64("diagnostics.wsup_gamma", defaults.wsup_gamma)?,
        gbeta: table.f64("diagnostics.gbeta", defaults.gbeta)?,
    };

    let output_dir = PathBuf::from(
        table
            .take("output_dir")
            .map(|(_, v)| v)
            .unwrap_or_else(|| "out".to_string()),
    );
    let snapshot_stride = table.usize("snapshot_stride", 1)?;

    table.reject_unused()?;

    let config = RunConfig {
        grid,
        initial,
        controls,
        scheme,
        remap_on,
        diagnostics,
        output_dir,
        snapshot_stride,
    };
    config.validate()?;
    Ok(config)
}

/// Fully resolved configuration as reparseable flat text.
pub fn canonical_text(cfg: &RunConfig) -> String {
    use crate::io::fmt_f64 as ff;
    let mut out = String::new();
    let _ = writeln!(out, "grid.node_count = {}", cfg.grid.node_count);
    let _ = writeln!(out, "grid.x_max = {}", ff(cfg.grid.x_max));
    match cfg.grid.grading {
        Grading::Uniform => {
            let _ = writeln!(out, "grid.grading = uniform");
        }
        Grading::Power { exponent } => {
            let _ = writeln!(out, "grid.grading = power");
            let _ = writeln!(out, "grid.power_exponent = {}", ff(exponent));
        }
        Grading::Geometric { ratio } => {
            let _ = writeln!(out, "grid.grading = geometric");
            let _ = writeln!(out, "grid.geometric_ratio = {}", ff(ratio));
        }
    }
    let _ = writeln!(out, "grid.first_node = {}", ff(cfg.grid.first_node));
    match &cfg.initial {
        InitialData::Be { alpha, beta } => {
            let _ = writeln!(out, "initial.kind = be");
            let _ = writeln!(out, "initial.alpha = {}", ff(*alpha));
            let _ = writeln!(out, "initial.beta = {}", ff(*beta));
        }
        InitialData::Singular {
            alpha,
            scale,
            decay,
        } => {
            let _ = writeln!(out, "initial.kind = singular");
            let _ = writeln!(out, "initial.alpha = {}", ff(*alpha));
            let _ = writeln!(out, "initial.scale = {}", ff(*scale));
            let _ = writeln!(out, "initial.decay = {}", ff(*decay));
        }
        InitialData::Bump {
            center,
            width,
            height,
        } => {
            let _ = writeln!(out, "initial.kind = bump");
            let _ = writeln!(out, "initial.center = {}", ff(*center));
            let _ = writeln!(out, "initial.width = {}", ff(*width));
            let _ = writeln!(out, "initial.height = {}", ff(*height));
        }
        InitialData::File { path } => {
            let _ = writeln!(out, "initial.kind = file");
            let _ = writeln!(out, "initial.path = {}", path.display());
        }
    }
    let c = &cfg.controls;
    let _ = writeln!(out, "controls.dt_init = {}", ff(c.dt_init));
    let _ = writeln!(out, "controls.dt_max = {}", ff(c.dt_max));
    let _ = writeln!(out, "controls.cfl_loss = {}", ff(c.cfl_loss));
    let _ = writeln!(out, "controls.rel_change_cap = {}", ff(c.rel_change_cap));
    let _ = writeln!(out, "controls.blowup_threshold = {}", ff(c.blowup_threshold));
    let _ = writeln!(out, "controls.t_end = {}", ff(c.t_end));
    let _ = writeln!(
        out,
        "scheme = {}",
        match cfg.scheme {
            Scheme::Etd1 => "etd1",
            Scheme::EtdMidpoint => "etd_midpoint",
        }
    );
    let _ = writeln!(out, "remap_on = {}", cfg.remap_on);
    let d = &cfg.diagnostics;
    let _ = writeln!(out, "diagnostics.delta = {}", ff(d.delta));
    let _ = writeln!(out, "diagnostics.wsup_alpha = {}", ff(d.wsup_alpha));
    let _ = writeln!(out, "diagnostics.wsup_gamma = {}", ff(d.wsup_gamma));
    let _ = writeln!(out, "diagnostics.gbeta = {}", ff(d.gbeta));
    let _ = writeln!(out, "output_dir = {}", cfg.output_dir.display());
    let _ = writeln!(out, "snapshot_stride = {}", cfg.snapshot_stride);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
initial.kind = be
controls.t_end = 1.0
";

    #[test]
    fn parses_minimal_config() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.grid.node_count, 128);
        assert!(matches!(cfg.initial, InitialData::Be { .. }));
        assert_eq!(cfg.controls.t_end, 1.0);
        assert!(cfg.remap_on);
    }

    #[test]
    fn canonical_text_roundtrips() {
        let text = "\
grid.node_count = 64
grid.grading = geometric
grid.geometric_ratio = 1.08
grid.first_node = 0.001
initial.kind = bump
initial.center = 0.5
initial.width = 0.2
initial.height = 27.0
controls.t_end = 2.5
scheme = etd1
remap_on = off
diagnostics.delta = 0.5
snapshot_stride = 4
";
        let cfg = parse_config(text).unwrap();
        let canon = canonical_text(&cfg);
        let back = parse_config(&canon).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(canon, canonical_text(&back));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "initial.kind = be\ncontrols.t_end = fast\n";
        match parse_config(text) {
            Err(BnError::Config { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected config error, got {other:?}"),
        }
        let text = "initial.kind = be\ncontrols.t_end = 1\nnot a key value\n";
        match parse_config(text) {
            Err(BnError::Config { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected config error, got {other:?}"),
        }
        let text = "initial.kind = be\ncontrols.t_end = 1\ntypo.key = 3\n";
        match parse_config(text) {
            Err(BnError::Config { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("unknown key"));
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_keys_rejected() {
        let text = "initial.kind = be\ncontrols.t_end = 1\ncontrols.t_end = 2\n";
        assert!(matches!(
            parse_config(text),
            Err(BnError::Config { line: 3, .. })
        ));
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let text = "# run\n\ninitial.kind = be # equilibrium data\ncontrols.t_end = 1\n";
        assert!(parse_config(text).is_ok());
    }
}
