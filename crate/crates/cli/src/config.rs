//! Run configuration: a TOML document of top-level `key = value` pairs
//! with optional `[record]` and `[debug]` sections.
//!
//! ```toml
//! model = "two_level"
//! omega_rabi = 6.0
//! tau = 4.0
//! mode = "ensemble"
//! n_trials = 2500
//! seed = 1
//!
//! [record]              # trajectory mode only
//! frequencies = [3.0, 0.5, -0.3]
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Deserialize;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Trajectory,
    Ensemble,
    Spectrum,
    Reconstruct,
    Validate,
}

impl FromStr for Mode {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "trajectory" => Mode::Trajectory,
            "ensemble" => Mode::Ensemble,
            "spectrum" => Mode::Spectrum,
            "reconstruct" => Mode::Reconstruct,
            "validate" => Mode::Validate,
            other => {
                return Err(CliError::Config(format!(
                    "mode: unknown mode {other:?} (trajectory, ensemble, spectrum, reconstruct, validate)"
                )))
            }
        })
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Trajectory => "trajectory",
            Mode::Ensemble => "ensemble",
            Mode::Spectrum => "spectrum",
            Mode::Reconstruct => "reconstruct",
            Mode::Validate => "validate",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialState {
    Ground,
    Excited,
    Steady,
}

impl FromStr for InitialState {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "ground" => Ok(InitialState::Ground),
            "excited" => Ok(InitialState::Excited),
            "steady" => Ok(InitialState::Steady),
            other => Err(CliError::Config(format!(
                "initial: expected \"ground\", \"excited\" or \"steady\", got {other:?}"
            ))),
        }
    }
}

/// Fault injection for exercising the failure paths.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DebugOptions {
    /// Replace the Hamiltonian by NaNs after validation.
    pub nan_hamiltonian: bool,
    /// Multiplies every validation bound.
    pub bound_scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub model: String,
    pub omega_rabi: f64,
    pub tau: f64,
    pub omega_max: f64,
    pub dt: f64,
    pub n_max: usize,
    pub n_trials: u64,
    pub seed: u64,
    pub observable: String,
    pub initial: InitialState,
    pub channel: usize,
    /// Trajectory mode: `(channel, frequency)` per decay.
    pub record: Vec<(usize, f64)>,
    pub output: Option<PathBuf>,
    pub debug: DebugOptions,
}

pub const DEFAULT_N_MAX: usize = 8;
pub const DEFAULT_N_TRIALS: u64 = 1000;

impl RunConfig {
    /// Largest accepted time step, `0.1/(omega_max + omega_rabi + 1)`.
    pub fn dt_bound(omega_max: f64, omega_rabi: f64) -> f64 {
        0.1 / (omega_max + omega_rabi + 1.0)
    }

    /// `(channel, frequency)` pairs of the fixed record.
    pub fn record_pairs(&self) -> &[(usize, f64)] {
        &self.record
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: Option<String>,
    model: Option<String>,
    omega_rabi: Option<f64>,
    tau: Option<f64>,
    omega_max: Option<f64>,
    dt: Option<f64>,
    n_max: Option<i64>,
    n_trials: Option<i64>,
    seed: Option<u64>,
    observable: Option<String>,
    initial: Option<String>,
    channel: Option<i64>,
    output: Option<String>,
    record: Option<RawRecord>,
    debug: Option<RawDebug>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    frequencies: Vec<f64>,
    channels: Option<Vec<i64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDebug {
    nan_hamiltonian: Option<bool>,
    bound_scale: Option<f64>,
}

/// Command-line values that take precedence over the document.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub n_trials: Option<u64>,
    pub output: Option<PathBuf>,
}

fn required<T>(value: Option<T>, key: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Config(format!("{key}: missing required key")))
}

fn non_negative(value: i64, key: &str) -> Result<u64, CliError> {
    u64::try_from(value).map_err(|_| CliError::Config(format!("{key}: must be non-negative, got {value}")))
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    parse_config_with(text, &Overrides::default())
}

pub fn parse_config_with(text: &str, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let raw: RawConfig =
        toml::from_str(text).map_err(|e| CliError::Config(format!("malformed config: {e}")))?;

    let mode = match (overrides.mode, raw.mode) {
        (Some(m), _) => m,
        (None, Some(s)) => s.parse()?,
        (None, None) => return Err(CliError::Config("mode: missing required key".into())),
    };
    let model = required(raw.model, "model")?;
    let omega_rabi = required(raw.omega_rabi, "omega_rabi")?;
    if !(omega_rabi.is_finite() && omega_rabi >= 0.0) {
        return Err(CliError::Config(format!(
            "omega_rabi: must be finite and non-negative, got {omega_rabi}"
        )));
    }
    let tau = required(raw.tau, "tau")?;
    if !(tau.is_finite() && tau > 0.0) {
        return Err(CliError::Config(format!("tau: must be positive, got {tau}")));
    }
    let omega_max = raw.omega_max.unwrap_or(omega_rabi + 6.0);
    if !(omega_max.is_finite() && omega_max > 0.0) {
        return Err(CliError::Config(format!("omega_max: must be positive, got {omega_max}")));
    }
    let p_max = (omega_max * tau / (2.0 * std::f64::consts::PI) * (1.0 + 1e-12)).floor();
    if p_max < 1.0 {
        return Err(CliError::Config(format!(
            "omega_max: grid p_max = floor(omega_max·tau/2π) must be ≥ 1; \
             omega_max·tau = {:.4} is below 2π",
            omega_max * tau
        )));
    }
    let bound = RunConfig::dt_bound(omega_max, omega_rabi);
    let dt = raw.dt.unwrap_or(0.5 * bound);
    if !(dt.is_finite() && dt > 0.0) {
        return Err(CliError::Config(format!("dt: must be positive, got {dt}")));
    }
    if dt > bound {
        return Err(CliError::Config(format!(
            "dt: {dt} exceeds the stability bound 0.1/(omega_max + omega_rabi + 1) = {bound:.6}"
        )));
    }
    let n_max = match raw.n_max {
        Some(v) => non_negative(v, "n_max")? as usize,
        None => DEFAULT_N_MAX,
    };
    let n_trials = match (overrides.n_trials, raw.n_trials) {
        (Some(n), _) => n,
        (None, Some(v)) => non_negative(v, "n_trials")?,
        (None, None) => DEFAULT_N_TRIALS,
    };
    if matches!(mode, Mode::Ensemble | Mode::Spectrum | Mode::Validate) && n_trials < 2 {
        return Err(CliError::Config(format!(
            "n_trials: {mode} mode needs at least 2 trials, got {n_trials}"
        )));
    }
    if matches!(mode, Mode::Ensemble | Mode::Spectrum) && n_max < 1 {
        return Err(CliError::Config("n_max: must be at least 1".into()));
    }
    let seed = overrides.seed.or(raw.seed).unwrap_or(0);
    let initial = match raw.initial {
        Some(s) => s.parse()?,
        None if mode == Mode::Spectrum => InitialState::Steady,
        None => InitialState::Ground,
    };
    let channel = match raw.channel {
        Some(v) => non_negative(v, "channel")? as usize,
        None => 0,
    };
    let record = match raw.record {
        Some(r) => {
            let channels = match r.channels {
                Some(c) if c.len() != r.frequencies.len() => {
                    return Err(CliError::Config(format!(
                        "record.channels: {} entries for {} frequencies",
                        c.len(),
                        r.frequencies.len()
                    )))
                }
                Some(c) => c
                    .into_iter()
                    .map(|v| non_negative(v, "record.channels").map(|v| v as usize))
                    .collect::<Result<Vec<_>, _>>()?,
                None => vec![channel; r.frequencies.len()],
            };
            channels.into_iter().zip(r.frequencies).collect()
        }
        None => Vec::new(),
    };
    if !record.is_empty() && mode != Mode::Trajectory {
        return Err(CliError::Config(format!(
            "record: only used in trajectory mode, not {mode}"
        )));
    }
    let debug = match raw.debug {
        Some(d) => DebugOptions {
            nan_hamiltonian: d.nan_hamiltonian.unwrap_or(false),
            bound_scale: d.bound_scale.unwrap_or(1.0),
        },
        None => DebugOptions {
            nan_hamiltonian: false,
            bound_scale: 1.0,
        },
    };
    Ok(RunConfig {
        mode,
        model,
        omega_rabi,
        tau,
        omega_max,
        dt,
        n_max,
        n_trials,
        seed,
        observable: raw
            .observable
            .unwrap_or_else(|| freq_unravel::model::EXCITED_POPULATION.to_string()),
        initial,
        channel,
        record,
        output: overrides.output.clone().or(raw.output.map(PathBuf::from)),
        debug,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        model = "two_level"
        omega_rabi = 6
        tau = 4
        mode = "ensemble"
        n_trials = 2500
        seed = 1
    "#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.mode, Mode::Ensemble);
        assert_eq!(c.omega_max, 12.0);
        assert!((c.dt - 0.05 / 19.0).abs() < 1e-15);
        assert_eq!(c.n_max, 8);
        assert_eq!(c.n_trials, 2500);
        assert_eq!(c.seed, 1);
        assert_eq!(c.initial, InitialState::Ground);
        assert_eq!(c.observable, "excited_population");
    }

    #[test]
    fn large_dt_rejected_with_bound() {
        let err = parse_config(&format!("{MINIMAL}\ndt = 0.01")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dt") && msg.contains("0.005263"), "{msg}");
    }

    #[test]
    fn zero_tau_rejected() {
        let text = MINIMAL.replace("tau = 4", "tau = 0");
        assert!(parse_config(&text).unwrap_err().to_string().contains("tau"));
    }

    #[test]
    fn unknown_and_missing_keys() {
        let err = parse_config(&format!("{MINIMAL}\ngamma = 2")).unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");
        let err = parse_config(&MINIMAL.replace("omega_rabi = 6", "")).unwrap_err();
        assert!(err.to_string().contains("omega_rabi"));
        let err = parse_config(&MINIMAL.replace("n_trials = 2500", "n_trials = 1")).unwrap_err();
        assert!(err.to_string().contains("n_trials"));
    }

    #[test]
    fn degenerate_grid_rejected() {
        let err = parse_config(&format!("{MINIMAL}\nomega_max = 1.0")).unwrap_err();
        assert!(err.to_string().contains("p_max"), "{err}");
    }

    #[test]
    fn overrides_win() {
        let o = Overrides {
            mode: Some(Mode::Spectrum),
            seed: Some(9),
            n_trials: Some(10),
            output: Some(PathBuf::from("x.csv")),
        };
        let c = parse_config_with(MINIMAL, &o).unwrap();
        assert_eq!((c.mode, c.seed, c.n_trials), (Mode::Spectrum, 9, 10));
        assert_eq!(c.initial, InitialState::Steady);
        assert_eq!(c.output, Some(PathBuf::from("x.csv")));
    }

    #[test]
    fn record_section() {
        let text = MINIMAL.replace("\"ensemble\"", "\"trajectory\"")
            + "\n[record]\nfrequencies = [3.0, 0.5, -0.3]\n";
        let c = parse_config(&text).unwrap();
        assert_eq!(c.record, vec![(0, 3.0), (0, 0.5), (0, -0.3)]);
        let bad = format!("{MINIMAL}\n[record]\nfrequencies = [1.0]\n");
        assert!(parse_config(&bad).is_err());
    }
}
