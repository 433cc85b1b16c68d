//! Run configuration: a flat TOML file whose keys are mirrored one-to-one
//! by command-line flags (`snake_case` key, `--kebab-case` flag). Flags win
//! over the file, the file over built-in defaults.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use waveguide_diode::cwdrive::CwDrive;
use waveguide_diode::fockpulse::{IntegrationOptions, PulseSpec};
use waveguide_diode::stochastic::EnsembleSpec;
use waveguide_diode::sweep::{PhotonProtocol, SweepGrid};
use waveguide_diode::{Direction, EmitterArray};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Steady,
    SweepCw,
    SweepPhoton,
    OptimizeNoise,
    ValidateNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Ground,
    Inverted,
}

impl From<Protocol> for PhotonProtocol {
    fn from(p: Protocol) -> Self {
        match p {
            Protocol::Ground => PhotonProtocol::Ground,
            Protocol::Inverted => PhotonProtocol::Inverted,
        }
    }
}

/// Comma-separated on the command line, an array in the config file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(transparent)]
pub struct FloatList(pub Vec<f64>);

impl std::str::FromStr for FloatList {
    type Err = std::num::ParseFloatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',').map(|v| v.trim().parse()).collect::<Result<_, _>>().map(FloatList)
    }
}

macro_rules! config_keys {
    (
        scalars { $( $(#[$doc:meta])* $key:ident : $ty:ty ),* $(,)? }
        lists { $( $(#[$ldoc:meta])* $lkey:ident ),* $(,)? }
    ) => {
        /// Contents of a config file; every key optional.
        #[derive(Debug, Clone, Default, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct FileConfig {
            pub mode: Option<Mode>,
            $( $(#[$doc])* pub $key: Option<$ty>, )*
            $( $(#[$ldoc])* pub $lkey: Option<FloatList>, )*
        }

        /// Command line. Each option overrides the config key of the same name.
        #[derive(Debug, Clone, Parser)]
        #[command(name = "wgdiode", version, about = "Waveguide diode simulations", allow_negative_numbers = true)]
        pub struct Cli {
            /// Run mode; may instead be given as `mode` in the config file.
            #[arg(value_enum)]
            pub mode: Option<Mode>,
            /// TOML file with flat `key = value` entries.
            #[arg(long)]
            pub config: Option<PathBuf>,
            $( $(#[$doc])* #[arg(long)] pub $key: Option<$ty>, )*
            $( $(#[$ldoc])* #[arg(long, allow_hyphen_values = true)] pub $lkey: Option<FloatList>, )*
        }

        impl FileConfig {
            fn overlay(mut self, cli: &Cli) -> Self {
                if cli.mode.is_some() {
                    self.mode = cli.mode;
                }
                $( if cli.$key.is_some() { self.$key = cli.$key.clone(); } )*
                $( if cli.$lkey.is_some() { self.$lkey = cli.$lkey.clone(); } )*
                self
            }
        }
    };
}

config_keys! {
    scalars {
        /// Output path; standard output when absent.
        out: PathBuf,
        format: Format,
        seed: u64,
        /// Worker threads; 0 uses every core.
        workers: usize,
        gamma: f64,
        kl: f64,
        amplitude: f64,
        noise_intensity: f64,
        delta_min: f64,
        delta_max: f64,
        delta_points: usize,
        kl_min: f64,
        kl_max: f64,
        kl_points: usize,
        delta2: f64,
        pulse_bandwidth: f64,
        pulse_delay: f64,
        protocol: Protocol,
        t_max: f64,
        rtol: f64,
        atol: f64,
        restarts: usize,
        trajectories: usize,
        dt: f64,
        t_final: f64,
    }
    lists {
        /// Detunings of the two emitters, comma-separated.
        delta,
        /// Noise-to-signal ratios `Γ_n/|E|²`, comma-separated.
        noise_ratios,
    }
}

/// Fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub seed: u64,
    pub workers: usize,
    pub gamma: f64,
    pub delta: Vec<f64>,
    pub kl: f64,
    pub amplitude: f64,
    pub noise_intensity: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub delta_points: usize,
    pub kl_min: f64,
    pub kl_max: f64,
    pub kl_points: usize,
    pub delta2: f64,
    pub pulse_bandwidth: f64,
    pub pulse_delay: f64,
    pub protocol: Protocol,
    pub t_max: f64,
    pub rtol: f64,
    pub atol: f64,
    pub noise_ratios: Vec<f64>,
    pub restarts: usize,
    pub trajectories: usize,
    pub dt: f64,
    pub t_final: f64,
}

fn key_error(key: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Config { key: Some(key.to_string()), message: format!("{key}: {message}") }
}

fn positive(key: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(key_error(key, format!("must be positive, got {v}")))
    }
}

fn nonnegative(key: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(key_error(key, format!("must be nonnegative, got {v}")))
    }
}

impl RunConfig {
    fn resolve(f: FileConfig) -> Result<Self, CliError> {
        let mode = f.mode.ok_or_else(|| CliError::Config {
            key: Some("mode".into()),
            message: "mode: missing; pass it as the first argument or set `mode` in the config file".into(),
        })?;
        let cfg = Self {
            mode,
            out: f.out,
            format: f.format.unwrap_or_default(),
            seed: f.seed.unwrap_or(0),
            workers: f.workers.unwrap_or(0),
            gamma: f.gamma.unwrap_or(1.0),
            delta: f.delta.map_or_else(|| vec![0.0, 0.0], |l| l.0),
            kl: f.kl.unwrap_or(1.0),
            amplitude: f.amplitude.unwrap_or(0.05f64.sqrt()),
            noise_intensity: f.noise_intensity.unwrap_or(0.0),
            delta_min: f.delta_min.unwrap_or(-3.0),
            delta_max: f.delta_max.unwrap_or(3.0),
            delta_points: f.delta_points.unwrap_or(61),
            kl_min: f.kl_min.unwrap_or(0.05),
            kl_max: f.kl_max.unwrap_or(2.0 * PI - 0.05),
            kl_points: f.kl_points.unwrap_or(61),
            delta2: f.delta2.unwrap_or(0.0),
            pulse_bandwidth: f.pulse_bandwidth.unwrap_or(2.0),
            pulse_delay: f.pulse_delay.unwrap_or(0.0),
            protocol: f.protocol.unwrap_or(Protocol::Inverted),
            t_max: f.t_max.unwrap_or(40.0),
            rtol: f.rtol.unwrap_or(1e-8),
            atol: f.atol.unwrap_or(1e-10),
            noise_ratios: f.noise_ratios.map_or_else(|| vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0], |l| l.0),
            restarts: f.restarts.unwrap_or(5),
            trajectories: f.trajectories.unwrap_or(1000),
            dt: f.dt.unwrap_or(1e-3),
            t_final: f.t_final.unwrap_or(20.0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every parameter against the constraints of the type it feeds.
    fn validate(&self) -> Result<(), CliError> {
        positive("gamma", self.gamma)?;
        if !self.amplitude.is_finite() {
            return Err(key_error("amplitude", "must be finite"));
        }
        nonnegative("noise_intensity", self.noise_intensity)?;
        match self.mode {
            Mode::Steady | Mode::ValidateNoise => {
                self.device()?;
            }
            Mode::SweepCw | Mode::SweepPhoton | Mode::OptimizeNoise => {
                self.grid()?;
            }
        }
        if self.mode == Mode::SweepPhoton {
            self.pulse()?;
            self.integration()?;
        }
        if self.mode == Mode::OptimizeNoise {
            if self.noise_ratios.is_empty() {
                return Err(key_error("noise_ratios", "must list at least one ratio"));
            }
            for &r in &self.noise_ratios {
                nonnegative("noise_ratios", r)?;
            }
            if self.restarts == 0 {
                return Err(key_error("restarts", "must be at least 1"));
            }
        }
        if self.mode == Mode::ValidateNoise {
            self.ensemble()?;
        }
        Ok(())
    }

    pub fn device(&self) -> Result<EmitterArray, CliError> {
        if self.delta.len() != 2 {
            return Err(key_error("delta", format!("expects two detunings, got {}", self.delta.len())));
        }
        if !(self.kl.is_finite()) {
            return Err(key_error("kl", "must be finite"));
        }
        EmitterArray::pair(self.gamma, self.kl, self.delta[0], self.delta[1]).map_err(|e| {
            let key = if e.to_string().contains("phases") { "kl" } else { "delta" };
            key_error(key, e)
        })
    }

    pub fn drive(&self) -> Result<CwDrive, CliError> {
        CwDrive::right_going(self.amplitude)
            .with_noise(self.noise_intensity)
            .map_err(|e| key_error("noise_intensity", e))
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn grid(&self) -> Result<SweepGrid, CliError> {
        for (key, n) in [("delta_points", self.delta_points), ("kl_points", self.kl_points)] {
            if n == 0 {
                return Err(key_error(key, "must be at least 1"));
            }
        }
        if !(self.delta_min <= self.delta_max) {
            return Err(key_error("delta_min", format!("must not exceed delta_max ({})", self.delta_max)));
        }
        if !(self.kl_min > 0.0) {
            return Err(key_error(
                "kl_min",
                format!("must be positive (phases must be distinct), got {}", self.kl_min),
            ));
        }
        if !(self.kl_max < 2.0 * PI && self.kl_min <= self.kl_max) {
            return Err(key_error("kl_max", format!("must lie in [kl_min, 2π), got {}", self.kl_max)));
        }
        let lin = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
            if n == 1 {
                vec![lo]
            } else {
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
            }
        };
        SweepGrid::new(
            lin(self.delta_min, self.delta_max, self.delta_points),
            lin(self.kl_min, self.kl_max, self.kl_points),
            self.delta2,
            self.gamma,
        )
        .map_err(|e| key_error("delta2", e))
    }

    pub fn pulse(&self) -> Result<PulseSpec, CliError> {
        PulseSpec::exponential(Direction::RightGoing, self.pulse_bandwidth)
            .map_err(|e| key_error("pulse_bandwidth", e))?
            .with_delay(self.pulse_delay)
            .map_err(|e| key_error("pulse_delay", e))
    }

    pub fn integration(&self) -> Result<IntegrationOptions, CliError> {
        positive("t_max", self.t_max)?;
        positive("rtol", self.rtol)?;
        positive("atol", self.atol)?;
        Ok(IntegrationOptions { t_max: self.t_max, rtol: self.rtol, atol: self.atol, record_series: false })
    }

    pub fn ensemble(&self) -> Result<EnsembleSpec, CliError> {
        if self.trajectories == 0 {
            return Err(key_error("trajectories", "must be at least 1"));
        }
        positive("dt", self.dt)?;
        if self.dt > 0.01 / self.gamma {
            return Err(key_error("dt", format!("must not exceed 0.01/gamma = {}", 0.01 / self.gamma)));
        }
        positive("t_final", self.t_final)?;
        EnsembleSpec::new(self.trajectories, self.dt, self.seed, self.t_final).map_err(|e| key_error("t_final", e))
    }
}

fn read_file(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
        key: None,
        message: format!("cannot read config file {}: {e}", path.display()),
    })?;
    parse_file(&text).map_err(|e| match e {
        CliError::Config { key, message } => {
            CliError::Config { key, message: format!("{}: {message}", path.display()) }
        }
        other => other,
    })
}

/// Parses config-file text.
pub fn parse_file(text: &str) -> Result<FileConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config { key: None, message: e.message().to_string() })
}

/// Resolves the configuration from an optional file and the command line.
pub fn parse_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let file = match &cli.config {
        Some(p) => read_file(p)?,
        None => FileConfig::default(),
    };
    RunConfig::resolve(file.overlay(cli))
}

/// Resolves a configuration from file text alone (no flags).
pub fn parse_config_text(text: &str) -> Result<RunConfig, CliError> {
    RunConfig::resolve(parse_file(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("wgdiode").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn minimal_steady_config() {
        let c = parse_config_text("mode = \"steady\"\ndelta = [0, 0]\nkl = 1.0\namplitude = 0.2236\n").unwrap();
        assert_eq!(c.mode, Mode::Steady);
        assert_eq!(c.gamma, 1.0);
        assert_eq!(c.format, Format::Csv);
        assert_eq!(c.delta_points, 61);
    }

    #[test]
    fn coincident_emitters_are_rejected() {
        let e = parse_config_text("mode = \"steady\"\nkl = 0.0\n").unwrap_err();
        assert!(e.to_string().contains("phases must be distinct"), "{e}");
        assert_eq!(e.key(), Some("kl"));
    }

    #[test]
    fn negative_gamma_names_the_constraint() {
        let e = parse_config_text("mode = \"steady\"\ngamma = -1.0\n").unwrap_err();
        assert!(e.to_string().contains("gamma") && e.to_string().contains("positive"), "{e}");
    }

    #[test]
    fn unknown_keys_are_errors() {
        let e = parse_config_text("mode = \"steady\"\nkL = 1.0\n").unwrap_err();
        assert!(e.to_string().contains("unknown field `kL`"), "{e}");
    }

    #[test]
    fn dimensional_values_are_refused() {
        assert!(parse_config_text("mode = \"steady\"\ngamma = \"1 GHz\"\n").is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "mode = \"sweep-cw\"\ndelta_points = 5\nkl_points = 7\n").unwrap();
        let c = parse_config(&cli(&["--config", path.to_str().unwrap(), "--kl-points", "3"])).unwrap();
        assert_eq!(c.mode, Mode::SweepCw);
        assert_eq!(c.delta_points, 5);
        assert_eq!(c.kl_points, 3);
        let c = parse_config(&cli(&["steady", "--config", path.to_str().unwrap(), "--delta", "-0.5,0.25"])).unwrap();
        assert_eq!(c.mode, Mode::Steady);
        assert_eq!(c.delta, vec![-0.5, 0.25]);
    }

    #[test]
    fn missing_mode_and_missing_file() {
        assert_eq!(parse_config(&cli(&[])).unwrap_err().key(), Some("mode"));
        assert!(parse_config(&cli(&["steady", "--config", "/nonexistent/run.toml"])).is_err());
    }

    #[test]
    fn grid_and_ensemble_constraints() {
        assert!(parse_config(&cli(&["sweep-cw", "--kl-min", "0"])).is_err());
        assert!(parse_config(&cli(&["sweep-cw", "--kl-max", "7"])).is_err());
        assert!(parse_config(&cli(&["sweep-cw", "--delta-points", "0"])).is_err());
        assert!(parse_config(&cli(&["validate-noise", "--dt", "0.1"])).is_err());
        assert!(parse_config(&cli(&["optimize-noise", "--noise-ratios", "0,-1"])).is_err());
        let c = parse_config(&cli(&["optimize-noise", "--noise-ratios", "0,0.5"])).unwrap();
        assert_eq!(c.noise_ratios, vec![0.0, 0.5]);
        assert_eq!(c.grid().unwrap().len(), 61 * 61);
    }
}
