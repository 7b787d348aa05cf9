//! Subcommand orchestration and file emission.

use std::fs;
use std::path::{Path, PathBuf};

use kmwave::io::{chart_to_csv, diagnostics_to_csv, frame_file_name, profile_to_csv};
use kmwave::{evolve, field_profile, make_symbol, quantize_circles, PhasePoint, Trajectory};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Command, Initial, RunConfig};
use crate::error::{CliError, CliResult};
use crate::verify::verify;

/// Summary printed on success.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub command: &'static str,
    pub out_dir: PathBuf,
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

struct Writer {
    dir: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Writer {
            dir: dir.to_path_buf(),
            files: vec![],
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn report(self, command: Command, details: Option<Value>) -> RunReport {
        RunReport {
            command: command.as_str(),
            out_dir: self.dir,
            files: self.files,
            details,
        }
    }
}

fn trajectory(config: &RunConfig) -> CliResult<Trajectory> {
    let symbol = make_symbol(&config.symbol)?;
    Ok(evolve(&config.initial_chart()?, &symbol, &config.evolve)?)
}

/// Indices of the saved states that are written out.
fn frames(tr: &Trajectory, config: &RunConfig) -> Vec<usize> {
    let last = tr.states.len() - 1;
    let mut out: Vec<usize> = (0..=last).step_by(config.outputs.save_every).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

pub fn run(config: &RunConfig, command: Command, out_dir: &Path) -> CliResult<RunReport> {
    config.require(command)?;
    let mut w = Writer::new(out_dir)?;
    w.write("config.toml", &config.to_normalized_toml())?;
    let details = match command {
        Command::Evolve => {
            let tr = trajectory(config)?;
            let frames = frames(&tr, config);
            for (k, &i) in frames.iter().enumerate() {
                w.write(&frame_file_name("chart", k), &chart_to_csv(&tr.states[i]))?;
            }
            w.write("diagnostics.csv", &diagnostics_to_csv(&tr.diagnostics))?;
            let times: Vec<f64> = frames.iter().map(|&i| tr.times[i]).collect();
            Some(json!({ "frame_times": times }))
        }
        Command::Reconstruct => {
            let tr = trajectory(config)?;
            let grid = config.outputs.q_grid.expect("checked by require").points();
            let frames = frames(&tr, config);
            for (k, &i) in frames.iter().enumerate() {
                let prof = field_profile(&tr.states[i], &grid, &config.reconstruct)?;
                w.write(&frame_file_name("profile", k), &profile_to_csv(&prof))?;
            }
            let times: Vec<f64> = frames.iter().map(|&i| tr.times[i]).collect();
            Some(json!({ "frame_times": times }))
        }
        Command::Quantize => {
            let q = config.quantize.as_ref().expect("checked by require");
            let center = match &config.initial {
                Initial::Circle { center, .. } => PhasePoint::new(center[0], center[1]),
                Initial::PhaseFunction { .. } => PhasePoint::new(0.0, 0.0),
            };
            let levels = quantize_circles(
                center,
                (q.radius_range[0], q.radius_range[1]),
                q.n_levels,
                config.epsilon,
                q.markers,
            )?;
            let mut csv = String::from("n,radius,level,bs_residual,loop_action,maslov_index\n");
            for l in &levels {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    l.n, l.radius, l.level, l.bs_residual, l.loop_action, l.maslov_index
                ));
            }
            w.write("levels.csv", &csv)?;
            Some(serde_json::to_value(&levels).expect("levels serialize"))
        }
        Command::Verify => {
            let report = verify(config)?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            w.write("verify.json", &text)?;
            if report.failed > 0 {
                return Err(CliError::ChecksFailed {
                    failed: report.failed,
                    total: report.properties.len(),
                });
            }
            Some(serde_json::to_value(&report).expect("report serializes"))
        }
    };
    Ok(w.report(command, details))
}
