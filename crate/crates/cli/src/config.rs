//! TOML run configuration.

use std::path::PathBuf;

use kmwave::{
    init_circle, init_from_phase_function, make_symbol, uniform_grid, EvolveSettings, MarkerChart,
    PhasePoint, ReconstructSettings, SymbolDescriptor,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub epsilon: f64,
    pub symbol: SymbolDescriptor,
    pub initial: Initial,
    pub evolve: EvolveSettings,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub reconstruct: ReconstructSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantize: Option<QuantizeBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Initial {
    /// `S(q) = sum phase[k] q^k` sampled on `grid`.
    PhaseFunction {
        phase: Vec<f64>,
        amplitude: Amplitude,
        grid: Range,
    },
    Circle {
        radius: f64,
        n: usize,
        #[serde(default)]
        center: [f64; 2],
        #[serde(default = "one")]
        total_weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Amplitude {
    /// `height * exp(-((q - center) / width)^2)`.
    Gaussian {
        #[serde(default)]
        center: f64,
        width: f64,
        #[serde(default = "one")]
        height: f64,
    },
    /// `sum coeffs[k] q^k`.
    Polynomial { coeffs: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Write every this many saved states.
    #[serde(default = "one_usize")]
    pub save_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_grid: Option<Range>,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs {
            dir: default_dir(),
            save_every: 1,
            q_grid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizeBlock {
    pub radius_range: [f64; 2],
    pub n_levels: usize,
    #[serde(default = "default_markers")]
    pub markers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyBlock {
    /// Property names; all of them when empty.
    #[serde(default)]
    pub properties: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_dir() -> PathBuf {
    PathBuf::from("kmwave-out")
}
fn default_markers() -> usize {
    kmwave::QUANTIZE_MARKERS
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn poly(c: &[f64], q: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * q + a)
}

fn poly_derivative(c: &[f64], q: f64) -> f64 {
    c.iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (k, &a)| acc * q + k as f64 * a)
}

impl Amplitude {
    pub fn eval(&self, q: f64) -> f64 {
        match self {
            Amplitude::Gaussian {
                center,
                width,
                height,
            } => height * (-((q - center) / width).powi(2)).exp(),
            Amplitude::Polynomial { coeffs } => poly(coeffs, q),
        }
    }
}

impl Range {
    pub fn points(&self) -> Vec<f64> {
        uniform_grid(self.min, self.max, self.n)
    }

    fn check(&self, field: &str) -> CliResult<()> {
        if self.n < 2 || !(self.max > self.min) {
            return Err(CliError::validation(field, "need n >= 2 and max > min"));
        }
        Ok(())
    }
}

/// Subcommand a configuration is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Evolve,
    Reconstruct,
    Quantize,
    Verify,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Evolve => "evolve",
            Command::Reconstruct => "reconstruct",
            Command::Quantize => "quantize",
            Command::Verify => "verify",
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First line defining the last component of a dotted key path.
fn line_of_key(text: &str, path: &str) -> Option<usize> {
    let key = path.rsplit('.').next()?;
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
                || l == format!("[{path}]")
        })
        .map(|i| i + 1)
}

/// Parse and validate a configuration document. Unknown keys are an error
/// when `strict`, otherwise they are returned as warnings.
pub fn parse_config(text: &str, strict: bool) -> CliResult<(RunConfig, Vec<String>)> {
    let de = toml::Deserializer::new(text);
    let mut unknown = Vec::new();
    let config: RunConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
        .map_err(|e| CliError::Parse {
        message: e.message().to_string(),
        line: e.span().map(|s| line_of(text, s.start)),
        key: None,
    })?;
    if strict {
        if let Some(key) = unknown.first() {
            return Err(CliError::Parse {
                message: format!("unknown key `{key}`"),
                line: line_of_key(text, key),
                key: Some(key.clone()),
            });
        }
    }
    config.validate()?;
    let warnings = unknown
        .into_iter()
        .map(|k| format!("ignoring unknown key `{k}`"))
        .collect();
    Ok((config, warnings))
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(CliError::validation("epsilon", "must be positive"));
        }
        make_symbol(&self.symbol).map_err(|e| CliError::validation("symbol", e.to_string()))?;
        match &self.initial {
            Initial::PhaseFunction {
                phase,
                amplitude,
                grid,
            } => {
                if phase.is_empty() {
                    return Err(CliError::validation("initial.phase", "needs coefficients"));
                }
                if let Amplitude::Gaussian { width, .. } = amplitude {
                    if !(*width > 0.0) {
                        return Err(CliError::validation(
                            "initial.amplitude.width",
                            "must be positive",
                        ));
                    }
                }
                grid.check("initial.grid")?;
            }
            Initial::Circle { radius, n, .. } => {
                if !(*radius > 0.0) {
                    return Err(CliError::validation("initial.radius", "must be positive"));
                }
                if *n < 4 {
                    return Err(CliError::validation("initial.n", "need at least 4 markers"));
                }
            }
        }
        self.evolve
            .validate()
            .map_err(|e| CliError::validation("evolve", e.to_string()))?;
        self.reconstruct
            .validate()
            .map_err(|e| CliError::validation("reconstruct", e.to_string()))?;
        if self.outputs.save_every == 0 {
            return Err(CliError::validation("outputs.save_every", "must be >= 1"));
        }
        if let Some(g) = &self.outputs.q_grid {
            g.check("outputs.q_grid")?;
        }
        if let Some(q) = &self.quantize {
            if !(q.radius_range[0] > 0.0 && q.radius_range[1] > q.radius_range[0]) {
                return Err(CliError::validation(
                    "quantize.radius_range",
                    "need 0 < min < max",
                ));
            }
            if q.markers < 4 {
                return Err(CliError::validation("quantize.markers", "need at least 4"));
            }
        }
        if let Some(v) = &self.verify {
            for p in &v.properties {
                if !crate::verify::PROPERTIES.contains(&p.as_str()) {
                    return Err(CliError::validation(
                        "verify.properties",
                        format!("unknown property `{p}`"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Check that the blocks a subcommand needs are present.
    pub fn require(&self, command: Command) -> CliResult<()> {
        match command {
            Command::Reconstruct if self.outputs.q_grid.is_none() => Err(CliError::validation(
                "outputs.q_grid",
                "required by reconstruct",
            )),
            Command::Quantize if self.quantize.is_none() => {
                Err(CliError::validation("quantize", "required by quantize"))
            }
            _ => Ok(()),
        }
    }

    pub fn initial_chart(&self) -> CliResult<MarkerChart> {
        let chart = match &self.initial {
            Initial::PhaseFunction {
                phase,
                amplitude,
                grid,
            } => init_from_phase_function(
                |q| poly(phase, q),
                |q| poly_derivative(phase, q),
                |q| amplitude.eval(q),
                &grid.points(),
                self.epsilon,
            )?,
            Initial::Circle {
                radius,
                n,
                center,
                total_weight,
            } => init_circle(
                PhasePoint::new(center[0], center[1]),
                *radius,
                *n,
                self.epsilon,
                *total_weight,
            )?,
        };
        Ok(chart)
    }

    /// The configuration with every default filled in, as TOML.
    pub fn to_normalized_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
epsilon = 0.01

[symbol]
kind = "schrodinger"

[initial]
kind = "phase_function"
phase = [0.0, 1.0]
amplitude = { kind = "gaussian", width = 1.0 }
grid = { min = -1.0, max = 1.0, n = 11 }

[evolve]
scheme = "rk4"
h = 0.1
t0 = 0.0
t1 = 1.0
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let (c, warnings) = parse_config(MINIMAL, true).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(c.outputs, Outputs::default());
        assert_eq!(c.reconstruct, ReconstructSettings::default());
        assert_eq!(c.evolve.save_every, 1);
        assert!(c.quantize.is_none());
        let chart = c.initial_chart().unwrap();
        assert_eq!(chart.len(), 11);
        assert_eq!(chart.points[3].p, 1.0);
    }

    #[test]
    fn negative_epsilon_names_field() {
        let text = MINIMAL.replace("epsilon = 0.01", "epsilon = -1");
        match parse_config(&text, true) {
            Err(CliError::Validation { field, .. }) => assert_eq!(field, "epsilon"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let text = MINIMAL.replace("epsilon = 0.01", "epsilon = 0.01\nepsilonn = 2");
        match parse_config(&text, true) {
            Err(CliError::Parse { key, line, .. }) => {
                assert_eq!(key.as_deref(), Some("epsilonn"));
                assert_eq!(line, Some(3));
            }
            other => panic!("{other:?}"),
        }
        let (_, warnings) = parse_config(&text, false).unwrap();
        assert_eq!(warnings.len(), 1);
        let nested = MINIMAL.replace("h = 0.1", "h = 0.1\nhh = 3");
        match parse_config(&nested, true) {
            Err(CliError::Parse { key, .. }) => assert_eq!(key.as_deref(), Some("evolve.hh")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_has_line() {
        let text = MINIMAL.replace("h = 0.1", "h = = 0.1");
        match parse_config(&text, true) {
            Err(CliError::Parse { line, .. }) => assert_eq!(line, Some(15)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn normalized_round_trip() {
        let (c, _) = parse_config(MINIMAL, true).unwrap();
        let (again, _) = parse_config(&c.to_normalized_toml(), true).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn subcommand_blocks_required() {
        let (c, _) = parse_config(MINIMAL, true).unwrap();
        assert!(c.require(Command::Evolve).is_ok());
        assert!(matches!(
            c.require(Command::Quantize),
            Err(CliError::Validation { .. })
        ));
        assert!(c.require(Command::Reconstruct).is_err());
    }

    #[test]
    fn polynomial_helpers() {
        let c = [1.0, -2.0, 0.5];
        assert_eq!(poly(&c, 2.0), 1.0 - 4.0 + 2.0);
        assert_eq!(poly_derivative(&c, 2.0), -2.0 + 2.0);
    }
}
