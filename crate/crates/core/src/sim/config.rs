//! Run configuration, stored as TOML.
//!
//! Rationals are written as strings (`"1/2"`, `"-3"`, `"0.25"`), plain
//! integers, or `[numerator, denominator]` pairs. Floating-point literals
//! are rejected because they are not exact.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

use crate::exec::Execution;
use crate::fixedpoint::{Fixed, GridParams};
use crate::linalg::{format_rational, parse_rational, IntMatrix, RatMatrix};
use crate::synthesis::{self, ControllerGains, EntityDims, PlantMatrices};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("override `{0}` must have the form key.path=value")]
    Override(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// An exact rational as it appears in the config file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ratio(pub BigRational);

impl Ratio {
    pub fn integer(v: i64) -> Self {
        Ratio(BigRational::from_integer(v.into()))
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_rational(&self.0))
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(&self.0))
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Text(String),
            Pair([i64; 2]),
            Float(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(Ratio::integer(v)),
            Raw::Text(s) => parse_rational(&s).map(Ratio).map_err(de::Error::custom),
            Raw::Pair([n, den]) => {
                if den == 0 {
                    return Err(de::Error::custom("zero denominator"));
                }
                Ok(Ratio(BigRational::new(BigInt::from(n), BigInt::from(den))))
            }
            Raw::Float(v) => Err(de::Error::custom(format!(
                "float {v} is not exact; write it as a string such as \"1/10\""
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Word length.
    pub n: u32,
    /// Fractional bits.
    pub m: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeySection {
    pub paillier_bits: u64,
    pub rsa_bits: u64,
    /// Seed for key generation; defaults to the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntitySection {
    pub state: usize,
    pub input: usize,
    pub output: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    /// Block sizes per entity; one scalar entity per state when omitted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entities: Vec<EntitySection>,
    pub a: Vec<Vec<Ratio>>,
    pub b: Vec<Vec<Ratio>>,
    pub c: Vec<Vec<Ratio>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSection {
    pub output_scale: Ratio,
    pub echo_scale: Ratio,
    pub control: Vec<Vec<i64>>,
    pub injection: Vec<Vec<i64>>,
    pub observer: Vec<Vec<i64>>,
}

/// Rational feedback and observer gains, integerized on load.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    /// `u = K x̂`.
    pub feedback: Vec<Vec<Ratio>>,
    /// Observer correction `L`, with `A + L C` stable.
    pub observer: Vec<Vec<Ratio>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub state: Vec<Ratio>,
    pub controller: Vec<Ratio>,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Number of control instants.
    pub horizon: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub shadow: bool,
    #[serde(default)]
    pub rerandomize: bool,
    /// Write measured phase timings to the CSV (otherwise zeros, so files
    /// stay byte-identical across runs).
    #[serde(default)]
    pub record_timings: bool,
    #[serde(default)]
    pub execution: Execution,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub keys: KeySection,
    pub plant: PlantSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<GainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSection>,
    pub initial: InitialSection,
    pub run: RunSection,
}

/// Everything a run needs, validated.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub grid: GridParams,
    pub plant: PlantMatrices,
    pub gains: ControllerGains,
    pub initial_state: Vec<BigRational>,
    pub initial_controller: Vec<Fixed>,
}

fn rat_matrix(name: &str, rows: &[Vec<Ratio>]) -> Result<RatMatrix, ConfigError> {
    RatMatrix::from_rows(rows.iter().map(|r| r.iter().map(|v| v.0.clone()).collect()).collect())
        .map_err(|e| invalid(format!("{name}: {e}")))
}

fn int_matrix(name: &str, rows: &[Vec<i64>], shape: (usize, usize)) -> Result<IntMatrix, ConfigError> {
    if shape.0 == 0 || rows.is_empty() {
        return if rows.is_empty() && shape.0 == 0 {
            Ok(IntMatrix::zeros(0, shape.1))
        } else {
            Err(invalid(format!("{name} must be {}x{}", shape.0, shape.1)))
        };
    }
    let m = IntMatrix::from_rows(rows.to_vec()).map_err(|e| invalid(format!("{name}: {e}")))?;
    if m.shape() != shape {
        return Err(invalid(format!("{name} is {:?}, expected {shape:?}", m.shape())));
    }
    Ok(m)
}

fn rat_rows(m: &RatMatrix) -> Vec<Vec<Ratio>> {
    (0..m.rows()).map(|i| m.row(i).iter().cloned().map(Ratio).collect()).collect()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Parses `text` after applying `key.path=value` overrides. Values are
    /// read as TOML when possible and as strings otherwise.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for entry in overrides {
            apply_override(&mut table, entry)?;
        }
        let text = toml::to_string(&table).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    pub fn key_seed(&self) -> u64 {
        self.keys.seed.unwrap_or(self.run.seed)
    }

    pub fn grid(&self) -> Result<GridParams, ConfigError> {
        GridParams::new(self.grid.n, self.grid.m).map_err(|e| invalid(e.to_string()))
    }

    pub fn plant(&self) -> Result<PlantMatrices, ConfigError> {
        let a = rat_matrix("plant.a", &self.plant.a)?;
        let b = rat_matrix("plant.b", &self.plant.b)?;
        let c = rat_matrix("plant.c", &self.plant.c)?;
        let result = if self.plant.entities.is_empty() {
            PlantMatrices::scalar_entities(a, b, c)
        } else {
            let dims = self
                .plant
                .entities
                .iter()
                .map(|e| EntityDims {
                    state: e.state,
                    input: e.input,
                    output: e.output,
                })
                .collect();
            PlantMatrices::new(a, b, c, dims)
        };
        result.map_err(|e| invalid(format!("plant: {e}")))
    }

    /// Explicit gains, or integerized `[design]` gains.
    pub fn gains(&self, plant: &PlantMatrices) -> Result<ControllerGains, ConfigError> {
        let (s, p, q) = (plant.state_dim(), plant.input_dim(), plant.output_dim());
        let gains = match (&self.gains, &self.design) {
            (Some(g), None) => ControllerGains {
                output_scale: g.output_scale.0.clone(),
                echo_scale: g.echo_scale.0.clone(),
                control_gain: int_matrix("gains.control", &g.control, (p, s))?,
                injection_gain: int_matrix("gains.injection", &g.injection, (s, q))?,
                observer_gain: int_matrix("gains.observer", &g.observer, (s, s))?,
            },
            (None, Some(d)) => {
                let k = rat_matrix("design.feedback", &d.feedback)?;
                let l = rat_matrix("design.observer", &d.observer)?;
                synthesis::integerize(plant, &k, &l).map_err(|e| invalid(format!("design: {e}")))?
            }
            (Some(_), Some(_)) => return Err(invalid("give either [gains] or [design], not both")),
            (None, None) => return Err(invalid("missing [gains] (or [design])")),
        };
        gains.validate(plant).map_err(|e| invalid(format!("gains: {e}")))?;
        Ok(gains)
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let grid = self.grid()?;
        let plant = self.plant()?;
        let gains = self.gains(&plant)?;
        if self.initial.state.len() != plant.state_dim() {
            return Err(invalid(format!(
                "initial.state has {} entries, plant has {} states",
                self.initial.state.len(),
                plant.state_dim()
            )));
        }
        if self.initial.controller.len() != plant.state_dim() {
            return Err(invalid(format!(
                "initial.controller has {} entries, controller has {} states",
                self.initial.controller.len(),
                plant.state_dim()
            )));
        }
        let initial_controller = self
            .initial
            .controller
            .iter()
            .map(|v| {
                let f = Fixed::quantize(&v.0, grid).map_err(|e| invalid(format!("initial.controller: {e}")))?;
                if f.to_rational() != v.0 {
                    return Err(invalid(format!("initial.controller value {v} is not on the grid")));
                }
                Ok(f)
            })
            .collect::<Result<_, _>>()?;
        Ok(Scenario {
            grid,
            plant,
            gains,
            initial_state: self.initial.state.iter().map(|v| v.0.clone()).collect(),
            initial_controller,
        })
    }

    /// Replaces a `[design]` section with the integerized `[gains]`.
    pub fn with_explicit_gains(&self, gains: &ControllerGains) -> Self {
        let mut out = self.clone();
        out.design = None;
        out.gains = Some(GainSection {
            output_scale: Ratio(gains.output_scale.clone()),
            echo_scale: Ratio(gains.echo_scale.clone()),
            control: gains.control_gain.to_rows(),
            injection: gains.injection_gain.to_rows(),
            observer: gains.observer_gain.to_rows(),
        });
        out
    }

    /// Builds a config from in-memory values.
    pub fn from_parts(
        grid: GridParams,
        keys: KeySection,
        plant: &PlantMatrices,
        gains: &ControllerGains,
        initial_state: &[BigRational],
        initial_controller: &[BigRational],
        run: RunSection,
    ) -> Self {
        let entities = plant
            .entities()
            .iter()
            .map(|e| EntitySection {
                state: e.state,
                input: e.input,
                output: e.output,
            })
            .collect();
        let cfg = RunConfig {
            grid: GridSection {
                n: grid.word_bits(),
                m: grid.frac_bits(),
            },
            keys,
            plant: PlantSection {
                entities,
                a: rat_rows(plant.a()),
                b: rat_rows(plant.b()),
                c: rat_rows(plant.c()),
            },
            gains: None,
            design: None,
            initial: InitialSection {
                state: initial_state.iter().cloned().map(Ratio).collect(),
                controller: initial_controller.iter().cloned().map(Ratio).collect(),
            },
            run,
        };
        cfg.with_explicit_gains(gains)
    }
}

fn apply_override(table: &mut toml::Table, entry: &str) -> Result<(), ConfigError> {
    let (path, raw) = entry
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(entry.to_string()))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::Override(entry.to_string()));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = keys.split_last().expect("non-empty path");
    let mut cursor = table;
    for key in parents {
        let next = cursor
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = next
            .as_table_mut()
            .ok_or_else(|| invalid(format!("override `{entry}`: `{key}` is not a table")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}
