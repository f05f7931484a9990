//! Pipeline configuration: a sectioned TOML file plus `section.key=value`
//! overrides.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::covariance::RegularizationConfig;
use crate::error::{Error, Result};
use crate::features::{FeatureOptions, FeatureSetMask, SecondInvariant};
use crate::flow::FlowParams;
use crate::omp::OmpParams;
use crate::spd::OffDiagonalWeight;
use crate::synth::SynthSpec;
use crate::tsc::TscParams;

/// Clip-level classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Omp,
    Tsc,
    Nn,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Omp, Method::Tsc, Method::Nn];

    pub fn name(self) -> &'static str {
        match self {
            Method::Omp => "omp",
            Method::Tsc => "tsc",
            Method::Nn => "nn",
        }
    }

    /// Parses a comma-separated list; `all` expands to every method.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part.eq_ignore_ascii_case("all") {
                out.extend(Method::ALL);
            } else {
                out.push(part.parse()?);
            }
        }
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "omp" => Ok(Method::Omp),
            "tsc" => Ok(Method::Tsc),
            "nn" => Ok(Method::Nn),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Feature mask given either as a preset name or as explicit booleans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaskSpec {
    Preset(String),
    Custom(FeatureSetMask),
}

impl MaskSpec {
    pub fn resolve(&self) -> Result<FeatureSetMask> {
        match self {
            MaskSpec::Preset(name) => {
                FeatureSetMask::preset(name).ok_or_else(|| Error::Config(format!("unknown feature preset `{name}`")))
            }
            MaskSpec::Custom(mask) => Ok(*mask),
        }
    }

    pub fn label(&self) -> String {
        match self {
            MaskSpec::Preset(name) => name.clone(),
            MaskSpec::Custom(mask) => mask.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipConfig {
    /// Frames per clip.
    pub length: usize,
    /// Shortest trailing clip that is kept.
    pub min_length: usize,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig {
            length: 20,
            min_length: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub mask: MaskSpec,
    pub second_invariant: SecondInvariant,
    pub off_diagonal: OffDiagonalWeight,
    /// Restrict samples to pixels nearer than `depth_threshold` when depth is available.
    pub depth_mask: bool,
    /// Raw depth units (16-bit samples).
    pub depth_threshold: f64,
}

impl FeatureConfig {
    pub fn options(&self) -> FeatureOptions {
        FeatureOptions {
            second_invariant: self.second_invariant,
        }
    }
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            mask: MaskSpec::Preset("AMF".into()),
            second_invariant: SecondInvariant::default(),
            off_diagonal: OffDiagonalWeight::default(),
            depth_mask: false,
            depth_threshold: 1500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            methods: vec![Method::Omp, Method::Tsc],
        }
    }
}

/// Group-disjoint split. Explicit `test_groups` win over `test_fraction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub test_groups: Vec<String>,
    pub test_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_groups: Vec::new(),
            test_fraction: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub clip: ClipConfig,
    pub features: FeatureConfig,
    pub flow: FlowParams,
    pub regularization: RegularizationConfig,
    pub omp: OmpParams,
    pub tsc: TscParams,
    pub eval: EvalConfig,
    pub split: SplitSpec,
    pub synth: SynthSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            clip: ClipConfig::default(),
            features: FeatureConfig::default(),
            flow: FlowParams::default(),
            regularization: RegularizationConfig::default(),
            omp: OmpParams::default(),
            tsc: TscParams::default(),
            eval: EvalConfig::default(),
            split: SplitSpec::default(),
            synth: SynthSpec::default(),
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text`, applies `section.key=value` overrides and validates.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: PipelineConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with_overrides(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::parse(path, m),
            other => other,
        })
    }

    /// Defaults with overrides applied.
    pub fn with_overrides(overrides: &[String]) -> Result<Self> {
        Self::from_toml_with_overrides("", overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn mask(&self) -> Result<FeatureSetMask> {
        self.features.mask.resolve()
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.clip;
        ensure(c.length >= 2, || format!("clip.length must be >= 2, got {}", c.length))?;
        ensure(c.min_length >= 2 && c.min_length <= c.length, || {
            format!("clip.min_length must lie in [2, clip.length], got {}", c.min_length)
        })?;
        let mask = self.mask()?;
        ensure(mask.dim() > 0, || "feature mask selects no features".into())?;
        let f = &self.flow;
        ensure(f.alpha > 0.0, || "flow.alpha must be > 0".into())?;
        ensure(f.epsilon > 0.0, || "flow.epsilon must be > 0".into())?;
        ensure(f.max_iterations > 0, || "flow.max_iterations must be > 0".into())?;
        ensure(f.intensity_scale > 0.0, || "flow.intensity_scale must be > 0".into())?;
        let r = &self.regularization;
        ensure(r.relative > 0.0 && r.floor > 0.0, || "regularization ridge must be > 0".into())?;
        ensure(r.symmetry_tolerance > 0.0, || "regularization.symmetry_tolerance must be > 0".into())?;
        ensure(self.omp.sparsity >= 1, || "omp.sparsity must be >= 1".into())?;
        ensure(self.omp.tolerance > 0.0, || "omp.tolerance must be > 0".into())?;
        let t = &self.tsc;
        ensure(t.delta >= 0.0, || "tsc.delta must be >= 0".into())?;
        ensure(t.tolerance > 0.0, || "tsc.tolerance must be > 0".into())?;
        ensure(t.max_iterations > 0, || "tsc.max_iterations must be > 0".into())?;
        ensure(t.barrier_initial > 0.0 && t.barrier_final > 0.0, || "tsc barrier weights must be > 0".into())?;
        ensure(t.barrier_final <= t.barrier_initial, || "tsc.barrier_final must not exceed barrier_initial".into())?;
        ensure(t.barrier_decay > 0.0 && t.barrier_decay < 1.0, || "tsc.barrier_decay must lie in (0, 1)".into())?;
        ensure(t.armijo > 0.0 && t.armijo < 0.5, || "tsc.armijo must lie in (0, 0.5)".into())?;
        ensure(t.backtrack > 0.0 && t.backtrack < 1.0, || "tsc.backtrack must lie in (0, 1)".into())?;
        ensure(!self.eval.methods.is_empty(), || "eval.methods is empty".into())?;
        let s = &self.split;
        ensure(s.test_fraction > 0.0 && s.test_fraction < 1.0, || "split.test_fraction must lie in (0, 1)".into())?;
        self.synth.validate()
    }
}

/// Applies one `a.b.c=value` override. The value is read as a TOML literal
/// and falls back to a bare string.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}
