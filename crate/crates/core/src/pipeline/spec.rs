//! Textual backend selectors, e.g. `gt-noise:0.1:seed=7` or `decay-noise:0.02:0.01:max=0.3`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_WINDOW: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpecError {
    #[error("unknown backend `{0}`")]
    Unknown(String),
    #[error("backend `{spec}`: {reason}")]
    Invalid { spec: String, reason: String },
}

fn invalid(spec: &str, reason: impl Into<String>) -> SpecError {
    SpecError::Invalid {
        spec: spec.to_string(),
        reason: reason.into(),
    }
}

fn parse_num<T: FromStr>(spec: &str, what: &str, text: &str) -> Result<T, SpecError> {
    text.parse()
        .map_err(|_| invalid(spec, format!("{what} `{text}` is not a number")))
}

fn parse_rate(spec: &str, what: &str, text: &str) -> Result<f64, SpecError> {
    let v: f64 = parse_num(spec, what, text)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(invalid(spec, format!("{what} {v} outside [0, 1]")));
    }
    Ok(v)
}

/// Splits `a:b:key=v` into positional and keyed parts.
fn split(spec: &str) -> (Vec<&str>, Vec<(&str, &str)>) {
    let mut positional = Vec::new();
    let mut keyed = Vec::new();
    for part in spec.split(':').skip(1) {
        match part.split_once('=') {
            Some((k, v)) => keyed.push((k, v)),
            None => positional.push(part),
        }
    }
    (positional, keyed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SegmenterSpec {
    /// `gt`
    GroundTruth,
    /// `gt-noise:<flip_rate>[:seed=<n>]`
    GtNoise { flip_rate: f64, seed: Option<u64> },
    /// `precomputed:<prediction_root>`
    Precomputed { root: PathBuf },
}

impl SegmenterSpec {
    pub fn needs_ground_truth(&self) -> bool {
        !matches!(self, SegmenterSpec::Precomputed { .. })
    }
}

impl FromStr for SegmenterSpec {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let name = s.split(':').next().unwrap_or_default();
        match name {
            "gt" if s == "gt" => Ok(SegmenterSpec::GroundTruth),
            "precomputed" => {
                let root = s
                    .strip_prefix("precomputed:")
                    .filter(|r| !r.is_empty())
                    .ok_or_else(|| invalid(s, "expected `precomputed:<root>`"))?;
                Ok(SegmenterSpec::Precomputed { root: root.into() })
            }
            "gt-noise" => {
                let (pos, keyed) = split(s);
                let [rate] = pos.as_slice() else {
                    return Err(invalid(s, "expected `gt-noise:<flip_rate>[:seed=<n>]`"));
                };
                let flip_rate = parse_rate(s, "flip rate", rate)?;
                let mut seed = None;
                for (k, v) in keyed {
                    match k {
                        "seed" => seed = Some(parse_num(s, "seed", v)?),
                        other => return Err(invalid(s, format!("unknown option `{other}`"))),
                    }
                }
                Ok(SegmenterSpec::GtNoise { flip_rate, seed })
            }
            _ => Err(SpecError::Unknown(s.to_string())),
        }
    }
}

impl fmt::Display for SegmenterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmenterSpec::GroundTruth => f.write_str("gt"),
            SegmenterSpec::GtNoise { flip_rate, seed } => {
                write!(f, "gt-noise:{flip_rate}")?;
                if let Some(seed) = seed {
                    write!(f, ":seed={seed}")?;
                }
                Ok(())
            }
            SegmenterSpec::Precomputed { root } => write!(f, "precomputed:{}", root.display()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PropagatorSpec {
    /// `nearest-key[:window=<n>]`
    NearestKey { window: usize },
    /// `decay-noise:<base_rate>:<growth>[:max=<p>][:window=<n>][:seed=<n>]`
    DecayNoise {
        base_rate: f64,
        growth: f64,
        max_rate: f64,
        window: usize,
        seed: Option<u64>,
    },
}

impl PropagatorSpec {
    pub fn needs_ground_truth(&self) -> bool {
        matches!(self, PropagatorSpec::DecayNoise { .. })
    }
}

impl Default for PropagatorSpec {
    fn default() -> Self {
        PropagatorSpec::NearestKey { window: DEFAULT_WINDOW }
    }
}

impl FromStr for PropagatorSpec {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let name = s.split(':').next().unwrap_or_default();
        let (pos, keyed) = split(s);
        let mut window = DEFAULT_WINDOW;
        let mut seed = None;
        let mut max_rate = 0.5;
        for (k, v) in keyed {
            match (name, k) {
                (_, "window") => window = parse_num(s, "window", v)?,
                ("decay-noise", "seed") => seed = Some(parse_num(s, "seed", v)?),
                ("decay-noise", "max") => max_rate = parse_rate(s, "max rate", v)?,
                (_, other) => return Err(invalid(s, format!("unknown option `{other}`"))),
            }
        }
        match name {
            "nearest-key" => {
                if !pos.is_empty() {
                    return Err(invalid(s, "expected `nearest-key[:window=<n>]`"));
                }
                Ok(PropagatorSpec::NearestKey { window })
            }
            "decay-noise" => {
                let [base, growth] = pos.as_slice() else {
                    return Err(invalid(s, "expected `decay-noise:<base_rate>:<growth>`"));
                };
                Ok(PropagatorSpec::DecayNoise {
                    base_rate: parse_rate(s, "base rate", base)?,
                    growth: parse_rate(s, "growth", growth)?,
                    max_rate,
                    window,
                    seed,
                })
            }
            _ => Err(SpecError::Unknown(s.to_string())),
        }
    }
}

impl fmt::Display for PropagatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PropagatorSpec::NearestKey { window } => write!(f, "nearest-key:window={window}"),
            PropagatorSpec::DecayNoise {
                base_rate,
                growth,
                max_rate,
                window,
                seed,
            } => {
                write!(f, "decay-noise:{base_rate}:{growth}:max={max_rate}:window={window}")?;
                if let Some(seed) = seed {
                    write!(f, ":seed={seed}")?;
                }
                Ok(())
            }
        }
    }
}

macro_rules! string_conversions {
    ($t:ty) => {
        impl TryFrom<String> for $t {
            type Error = SpecError;
            fn try_from(s: String) -> Result<Self, Self::Error> {
                s.parse()
            }
        }
        impl From<$t> for String {
            fn from(v: $t) -> String {
                v.to_string()
            }
        }
    };
}

string_conversions!(SegmenterSpec);
string_conversions!(PropagatorSpec);
