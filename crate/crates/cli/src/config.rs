//! Flat `section.key = value` experiment configs.
//!
//! Lines are trimmed; blank lines and lines starting with `#` are ignored,
//! as is anything after a `#` on a value line. Every key has a documented
//! default except `experiment`. Unknown and repeated keys are errors.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("`{key}` out of range: {message}")]
    Range { key: String, message: String },
}

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum $name {
            $($variant),*
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),*
                }
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)*
                    _ => Err(format!(
                        "expected one of {}",
                        [$($text),*].join(", ")
                    )),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

named_enum!(
    /// Registered experiments.
    Command {
        Certify => "certify",
        Forward => "forward",
        NormalCrosscheck => "normal-crosscheck",
        Symbol => "symbol",
        Decompose => "decompose",
        BoundaryRecovery => "boundary-recovery",
        Stability => "stability",
        Perturbation => "perturbation",
        Reconstruct => "reconstruct",
    }
);

named_enum!(MetricName {
    Euclidean => "euclidean",
    Conformal => "conformal",
    Perturbed => "perturbed",
});

named_enum!(
    /// Input tensor for the single-field experiments: `random` is the first
    /// ensemble member, `stream` the curl-curl Gaussian phantom, `potential`
    /// is `dv` for a one-form vanishing on the boundary, and `metric` is the
    /// metric tensor itself, whose transform is the chord length.
    FieldKind {
        Random => "random",
        Stream => "stream",
        Potential => "potential",
        Metric => "metric",
    }
);

/// Values that can appear on the right-hand side of a config line.
trait ConfigValue: Sized {
    fn parse_value(raw: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

impl ConfigValue for f64 {
    fn parse_value(raw: &str) -> Result<Self, String> {
        let v: f64 = raw.parse().map_err(|_| format!("`{raw}` is not a number"))?;
        if !v.is_finite() {
            return Err(format!("`{raw}` is not finite"));
        }
        Ok(v)
    }

    fn render(&self) -> String {
        // Display gives the shortest string that parses back to the same value.
        format!("{self}")
    }
}

macro_rules! integer_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(raw: &str) -> Result<Self, String> {
                raw.parse().map_err(|_| format!("`{raw}` is not a non-negative integer"))
            }

            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

integer_value!(usize, u64);

impl ConfigValue for Vec<f64> {
    fn parse_value(raw: &str) -> Result<Self, String> {
        raw.split(',').map(|p| f64::parse_value(p.trim())).collect()
    }

    fn render(&self) -> String {
        self.iter().map(ConfigValue::render).collect::<Vec<_>>().join(", ")
    }
}

impl ConfigValue for String {
    fn parse_value(raw: &str) -> Result<Self, String> {
        if raw.is_empty() {
            return Err("empty value".into());
        }
        Ok(raw.to_string())
    }

    fn render(&self) -> String {
        self.clone()
    }
}

macro_rules! enum_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(raw: &str) -> Result<Self, String> {
                raw.parse()
            }

            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

enum_value!(Command, MetricName, FieldKind);

fn positive(v: &f64) -> Result<(), String> {
    if *v > 0.0 {
        Ok(())
    } else {
        Err(format!("{v} must be positive"))
    }
}

fn non_negative(v: &f64) -> Result<(), String> {
    if *v >= 0.0 {
        Ok(())
    } else {
        Err(format!("{v} must be non-negative"))
    }
}

fn any<T>(_: &T) -> Result<(), String> {
    Ok(())
}

fn at_least<const N: usize>(v: &usize) -> Result<(), String> {
    if *v >= N {
        Ok(())
    } else {
        Err(format!("{v} must be at least {N}"))
    }
}

fn positive_list(v: &Vec<f64>) -> Result<(), String> {
    if v.is_empty() {
        return Err("list is empty".into());
    }
    v.iter().try_for_each(positive)
}

fn non_negative_list(v: &Vec<f64>) -> Result<(), String> {
    if v.is_empty() {
        return Err("list is empty".into());
    }
    v.iter().try_for_each(non_negative)
}

macro_rules! config_keys {
    ($($key:literal => $field:ident: $ty:ty = $default:expr, $check:expr;)*) => {
        /// A fully resolved experiment configuration.
        #[derive(Debug, Clone, PartialEq)]
        pub struct ExperimentConfig {
            pub experiment: Command,
            $(pub $field: $ty,)*
        }

        /// Every accepted key, in serialization order.
        pub const KEYS: &[&str] = &["experiment", $($key),*];

        impl ExperimentConfig {
            /// All defaults for the given experiment.
            pub fn new(experiment: Command) -> Self {
                Self { experiment, $($field: $default,)* }
            }

            fn set(&mut self, key: &str, raw: &str, line: usize) -> Result<(), ConfigError> {
                let parse_err = |message: String| ConfigError::Parse { line, message: format!("`{key}`: {message}") };
                let range_err = |message: String| ConfigError::Range { key: key.to_string(), message };
                match key {
                    "experiment" => self.experiment = ConfigValue::parse_value(raw).map_err(parse_err)?,
                    $($key => {
                        let v: $ty = ConfigValue::parse_value(raw).map_err(parse_err)?;
                        ($check)(&v).map_err(range_err)?;
                        self.$field = v;
                    })*
                    _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
                }
                Ok(())
            }

            /// Canonical text form; `validate_config(&c.to_text()) == Ok(c)`.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                let _ = writeln!(out, "experiment = {}", self.experiment.render());
                $(let _ = writeln!(out, "{} = {}", $key, self.$field.render());)*
                out
            }
        }
    };
}

config_keys! {
    "metric.kind" => metric_kind: MetricName = MetricName::Euclidean, any;
    "metric.amplitude" => metric_amplitude: f64 = 0.1, any;
    "metric.center_x" => metric_center_x: f64 = 0.0, any;
    "metric.center_y" => metric_center_y: f64 = 0.0, any;
    "metric.width" => metric_width: f64 = 1.0, positive;
    "metric.base" => metric_base: MetricName = MetricName::Euclidean, any;
    "domain.radius_m" => radius_m: f64 = 1.0, positive;
    "domain.radius_m1" => radius_m1: f64 = 1.3, positive;
    "grid.h" => h: f64 = 0.015625, positive;
    "fan.points" => fan_points: usize = 64, at_least::<4>;
    "fan.directions" => fan_directions: usize = 32, at_least::<4>;
    "quadrature.step" => step: f64 = 1e-3, positive;
    "normal.directions" => normal_directions: usize = 256, at_least::<4>;
    "normal.step_factor" => normal_step_factor: f64 = 0.5, positive;
    "ensemble.size" => ensemble_size: usize = 50, at_least::<1>;
    "ensemble.seed" => seed: u64 = 7, any;
    "ensemble.modes" => ensemble_modes: usize = 10, at_least::<1>;
    "ensemble.band" => ensemble_band: f64 = 8.0, positive;
    "ensemble.support" => ensemble_support: f64 = 0.9, positive;
    "field.kind" => field_kind: FieldKind = FieldKind::Random, any;
    "phantom.center_x" => phantom_center_x: f64 = 0.1, any;
    "phantom.center_y" => phantom_center_y: f64 = -0.05, any;
    "phantom.width" => phantom_width: f64 = 0.3, positive;
    "phantom.amplitude" => phantom_amplitude: f64 = 0.1, positive;
    "crosscheck.points" => crosscheck_points: usize = 5, at_least::<1>;
    "crosscheck.spacing" => crosscheck_spacing: f64 = 0.3, positive;
    "symbol.directions" => symbol_directions: usize = 8, at_least::<1>;
    "symbol.mollifier" => symbol_mollifier: f64 = 0.05, positive;
    "symbol.k_list" => symbol_k_list: Vec<f64> = vec![4.0, 8.0, 16.0, 32.0], positive_list;
    "symbol.probe_h" => symbol_probe_h: f64 = 0.0078125, positive;
    "symbol.probe_directions" => symbol_probe_directions: usize = 512, at_least::<4>;
    "symbol.envelope_radius" => symbol_envelope_radius: f64 = 0.95, positive;
    "trace.step" => trace_step: f64 = 1e-3, positive;
    "stability.levels" => stability_levels: usize = 2, at_least::<1>;
    "perturbation.eps" => perturbation_eps: f64 = 0.05, non_negative;
    "perturbation.eps_list" => perturbation_eps_list: Vec<f64> = vec![0.02, 0.05, 0.1], non_negative_list;
    "perturbation.a11" => perturbation_a11: f64 = 1.0, any;
    "perturbation.a12" => perturbation_a12: f64 = 0.3, any;
    "perturbation.a22" => perturbation_a22: f64 = 0.5, any;
    "perturbation.center_x" => perturbation_center_x: f64 = 0.1, any;
    "perturbation.center_y" => perturbation_center_y: f64 = 0.0, any;
    "perturbation.width" => perturbation_width: f64 = 0.6, positive;
    "perturbation.directions" => perturbation_directions: usize = 48, at_least::<4>;
    "perturbation.step_factor" => perturbation_step_factor: f64 = 2.0, positive;
    "perturbation.test_size" => perturbation_test_size: usize = 10, at_least::<1>;
    "perturbation.test_seed" => perturbation_test_seed: u64 = 11, any;
    "cgls.max_iter" => cgls_max_iter: usize = 200, at_least::<1>;
    "cgls.tol" => cgls_tol: f64 = 1e-6, positive;
    "cgls.spline_spacing" => cgls_spline_spacing: f64 = 1.0 / 12.0, positive;
    "certify.boundary_points" => certify_boundary_points: usize = 32, at_least::<1>;
    "certify.directions" => certify_directions: usize = 32, at_least::<1>;
    "certify.step" => certify_step: f64 = 2e-3, positive;
    "certify.t_min" => certify_t_min: f64 = 0.05, positive;
    "certify.pairs" => certify_pairs: usize = 16, any;
    "output.dir" => output_dir: String = "results".to_string(), any;
}

impl ExperimentConfig {
    /// Checks that involve more than one key.
    fn check_consistency(&self) -> Result<(), ConfigError> {
        let range = |key: &str, message: String| Err(ConfigError::Range { key: key.into(), message });
        if self.radius_m1 <= self.radius_m {
            return range(
                "domain.radius_m1",
                format!("{} must exceed domain.radius_m = {}", self.radius_m1, self.radius_m),
            );
        }
        if self.h >= self.radius_m {
            return range("grid.h", format!("{} must be smaller than domain.radius_m", self.h));
        }
        if self.metric_base == MetricName::Perturbed {
            return range("metric.base", "a perturbation base cannot itself be perturbed".into());
        }
        let reach = (self.crosscheck_points as f64 - 1.0) / 2.0 * self.crosscheck_spacing * 2f64.sqrt();
        if reach >= self.radius_m {
            return range("crosscheck.spacing", format!("sample grid reaches radius {reach:.3}, outside M"));
        }
        if self.ensemble_support > self.radius_m {
            return range("ensemble.support", "ensemble support must lie inside M".into());
        }
        if self.symbol_envelope_radius > self.radius_m {
            return range("symbol.envelope_radius", "probe envelope must lie inside M".into());
        }
        Ok(())
    }
}

/// Parses and validates a config text.
pub fn validate_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut experiment = None;
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Parse { line, message: format!("expected `key = value`, got `{content}`") });
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::Parse { line, message: "empty key".into() });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey { line, key: key.to_string() });
        }
        if !seen.insert(key.to_string()) {
            return Err(ConfigError::DuplicateKey { line, key: key.to_string() });
        }
        if key == "experiment" {
            experiment = Some(
                value
                    .parse::<Command>()
                    .map_err(|m| ConfigError::Parse { line, message: format!("`experiment`: {m}") })?,
            );
        } else {
            entries.push((line, key, value));
        }
    }
    let mut config = ExperimentConfig::new(experiment.ok_or(ConfigError::MissingKey("experiment"))?);
    for (line, key, value) in entries {
        config.set(key, value, line)?;
    }
    config.check_consistency()?;
    Ok(config)
}
