//! `key = value` run configuration with command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nsfemdg_core::{BoxDomain, Preset, PresetKind, SchemeParams, Vec3};
use thiserror::Error;

/// Where a configuration value came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Line(usize),
    Flag,
    Defaults,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Line(n) => write!(f, "line {n}"),
            Source::Flag => f.write_str("flag"),
            Source::Defaults => f.write_str("configuration"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{at}: expected 'key = value', got '{text}'")]
    Malformed { at: Source, text: String },
    #[error("{at}: unknown key '{key}'")]
    UnknownKey { at: Source, key: String },
    #[error("{at}: invalid value '{value}' for '{key}': {reason}")]
    InvalidValue {
        at: Source,
        key: String,
        value: String,
        reason: String,
    },
    #[error("flag '{0}' needs a value")]
    MissingValue(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    Rates,
    Cauchy,
    PDecay,
}

impl FromStr for StudyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rates" => Ok(StudyKind::Rates),
            "cauchy" => Ok(StudyKind::Cauchy),
            "pdecay" => Ok(StudyKind::PDecay),
            _ => Err("expected rates, cauchy or pdecay".into()),
        }
    }
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StudyKind::Rates => "rates",
            StudyKind::Cauchy => "cauchy",
            StudyKind::PDecay => "pdecay",
        })
    }
}

/// Every accepted key, in documentation order.
pub const KEYS: &[&str] = &[
    "n",
    "lx",
    "ly",
    "lz",
    "t_final",
    "steps",
    "gamma",
    "a",
    "epsilon",
    "kappa",
    "c",
    "newton_tol",
    "newton_max_iter",
    "homotopy_steps",
    "face_quad_degree",
    "elem_quad_degree",
    "preset",
    "rho_bar",
    "amplitude",
    "sigma",
    "output_dir",
    "cadence",
    "study",
    "study_n",
    "check_n",
    "seed",
    "mutate_flux_sign",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub extents: Vec3,
    pub t_final: f64,
    /// Overrides `t_final` when set.
    pub steps: Option<usize>,
    pub params: SchemeParams,
    pub preset: PresetKind,
    pub rho_bar: f64,
    pub amplitude: f64,
    pub sigma: f64,
    pub output_dir: PathBuf,
    /// VTK output every `cadence` steps; 0 disables it.
    pub cadence: usize,
    pub study: StudyKind,
    pub study_n: Vec<usize>,
    pub check_n: Vec<usize>,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 2,
            extents: Vec3::new(1.0, 1.0, 1.0),
            t_final: 0.5,
            steps: None,
            params: SchemeParams::default(),
            preset: PresetKind::Stationary,
            rho_bar: 1.0,
            amplitude: 0.5,
            sigma: 0.25,
            output_dir: PathBuf::from("out"),
            cadence: 1,
            study: StudyKind::Rates,
            study_n: vec![2, 4, 8],
            check_n: vec![1, 2],
            seed: 0,
            warnings: Vec::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, at: &Source) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| ConfigError::InvalidValue {
            at: at.clone(),
            key: key.into(),
            value: value.into(),
            reason: e.to_string(),
        })
}

fn parse_list(key: &str, value: &str, at: &Source) -> Result<Vec<usize>, ConfigError> {
    value.split(',').map(|s| parse(key, s.trim(), at)).collect()
}

impl RunConfig {
    /// Sets one key. The value is range-checked later by [`RunConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str, at: Source) -> Result<(), ConfigError> {
        let p = &mut self.params;
        let at_ref = &at;
        match key {
            "n" => self.n = parse(key, value, at_ref)?,
            "lx" => self.extents.x = parse(key, value, at_ref)?,
            "ly" => self.extents.y = parse(key, value, at_ref)?,
            "lz" => self.extents.z = parse(key, value, at_ref)?,
            "t_final" => self.t_final = parse(key, value, at_ref)?,
            "steps" => self.steps = Some(parse(key, value, at_ref)?),
            "gamma" => p.gamma = parse(key, value, at_ref)?,
            "a" => p.a = parse(key, value, at_ref)?,
            "epsilon" => p.epsilon = parse(key, value, at_ref)?,
            "kappa" => p.kappa = parse(key, value, at_ref)?,
            "c" => p.c = parse(key, value, at_ref)?,
            "newton_tol" => p.newton_tol = parse(key, value, at_ref)?,
            "newton_max_iter" => p.newton_max_iter = parse(key, value, at_ref)?,
            "homotopy_steps" => p.homotopy_steps = parse(key, value, at_ref)?,
            "face_quad_degree" => p.face_quad_degree = parse(key, value, at_ref)?,
            "elem_quad_degree" => p.elem_quad_degree = parse(key, value, at_ref)?,
            "mutate_flux_sign" => p.mutate_flux_sign = parse(key, value, at_ref)?,
            "preset" => self.preset = parse(key, value, at_ref)?,
            "rho_bar" => self.rho_bar = parse(key, value, at_ref)?,
            "amplitude" => self.amplitude = parse(key, value, at_ref)?,
            "sigma" => self.sigma = parse(key, value, at_ref)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "cadence" => self.cadence = parse(key, value, at_ref)?,
            "study" => self.study = parse(key, value, at_ref)?,
            "study_n" => self.study_n = parse_list(key, value, at_ref)?,
            "check_n" => self.check_n = parse_list(key, value, at_ref)?,
            "seed" => self.seed = parse(key, value, at_ref)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    at,
                    key: key.into(),
                })
            }
        }
        Ok(())
    }

    /// Applies the lines of a configuration file. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = Source::Line(i + 1);
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed {
                    at,
                    text: raw.trim().into(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Malformed {
                    at,
                    text: raw.trim().into(),
                });
            }
            self.set(key, value, at)?;
        }
        Ok(())
    }

    /// Applies `--key value` or `--key=value` overrides.
    pub fn apply_flags(&mut self, args: &[String]) -> Result<(), ConfigError> {
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let Some(flag) = arg.strip_prefix("--") else {
                return Err(ConfigError::Malformed {
                    at: Source::Flag,
                    text: arg.clone(),
                });
            };
            let (key, value) = match flag.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| ConfigError::MissingValue(arg.clone()))?;
                    (flag.to_string(), v.clone())
                }
            };
            self.set(&key.replace('-', "_"), &value, Source::Flag)?;
        }
        Ok(())
    }

    /// Range checks. Collects warnings for admissible but unsupported values.
    pub fn validate(&mut self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if self.n == 0 {
            return invalid("n must be >= 1".into());
        }
        if !self.t_final.is_finite() || self.t_final < 0.0 {
            return invalid(format!("t_final must be >= 0, got {}", self.t_final));
        }
        if self.study_n.is_empty() || self.study_n.contains(&0) {
            return invalid("study_n must list positive mesh sizes".into());
        }
        if self.check_n.is_empty() || self.check_n.contains(&0) {
            return invalid("check_n must list positive mesh sizes".into());
        }
        self.domain()?;
        self.warnings = self
            .params
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.preset()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn domain(&self) -> Result<BoxDomain, ConfigError> {
        BoxDomain::new(Vec3::zeros(), self.extents).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn preset(&self) -> Preset {
        Preset {
            kind: self.preset,
            rho_bar: self.rho_bar,
            amplitude: self.amplitude,
            sigma: self.sigma,
            domain: self.domain().unwrap_or_else(|_| BoxDomain::unit()),
        }
    }

    /// Builds a validated configuration from an optional file and overrides.
    pub fn load(file: Option<&Path>, flags: &[String]) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                path: path.to_path_buf(),
                source,
            })?;
            cfg.apply_text(&text)?;
        }
        cfg.apply_flags(flags)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_text(text: &str) -> Result<RunConfig, ConfigError> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = from_text("").unwrap();
        assert_eq!(c.params.gamma, 3.5);
        assert_eq!(c.params.a, 1.0);
        assert_eq!(c.params.epsilon, 0.2);
        assert_eq!(c.params.kappa, 0.01);
        assert_eq!(c.params.c, 0.5);
        assert_eq!(c.preset, PresetKind::Stationary);
        assert!(c.warnings.is_empty());
    }

    #[test]
    fn small_epsilon_is_rejected() {
        let e = from_text("epsilon = 0.1").unwrap_err();
        assert!(e.to_string().contains("epsilon"), "{e}");
    }

    #[test]
    fn flags_override_file() {
        let mut c = RunConfig::default();
        c.apply_text("n = 2").unwrap();
        c.apply_flags(&["--n".into(), "4".into()]).unwrap();
        assert_eq!(c.n, 4);
        c.apply_flags(&["--t-final=0.75".into()]).unwrap();
        assert_eq!(c.t_final, 0.75);
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = from_text("# header\n\npreset = bump # trailing\nstudy_n = 2, 4\n").unwrap();
        assert_eq!(c.preset, PresetKind::Bump);
        assert_eq!(c.study_n, vec![2, 4]);
    }

    #[test]
    fn errors_name_the_line() {
        let e = from_text("n = 2\nfoo = 1").unwrap_err();
        assert_eq!(e.to_string(), "line 2: unknown key 'foo'");
        let e = from_text("n = 2\n\ngamma 4").unwrap_err();
        assert!(e.to_string().starts_with("line 3:"), "{e}");
        let e = from_text("n = two").unwrap_err();
        assert!(
            e.to_string()
                .starts_with("line 1: invalid value 'two' for 'n'"),
            "{e}"
        );
    }

    #[test]
    fn flag_errors() {
        let mut c = RunConfig::default();
        assert!(matches!(
            c.apply_flags(&["--bogus".into(), "1".into()]),
            Err(ConfigError::UnknownKey {
                at: Source::Flag,
                ..
            })
        ));
        assert!(matches!(
            c.apply_flags(&["--n".into()]),
            Err(ConfigError::MissingValue(_))
        ));
    }

    #[test]
    fn low_gamma_warns() {
        let c = from_text("gamma = 2").unwrap();
        assert_eq!(c.warnings.len(), 1);
    }

    #[test]
    fn every_documented_key_is_accepted() {
        let sample = |k: &str| match k {
            "preset" => "bump",
            "study" => "cauchy",
            "output_dir" => "x",
            "study_n" | "check_n" => "1,2",
            "mutate_flux_sign" => "false",
            "epsilon" => "0.3",
            _ => "2",
        };
        for k in KEYS {
            let mut c = RunConfig::default();
            c.set(k, sample(k), Source::Flag).unwrap();
        }
    }
}
