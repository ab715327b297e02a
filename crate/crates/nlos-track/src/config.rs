//! TOML scenario files.
//!
//! ```toml
//! name = "small_noise_l1"
//! seed = 1
//! trials = 100
//! steps = 500
//! filters = ["csrukf", "pkf", "sekf", "bekf"]
//!
//! [motion]
//! dt = 0.2
//! sigma_w2 = 0.04
//!
//! [measurement]
//! sigma_n = 10.0
//! nlos_ids = [1, 2, 3]
//! fa_ids = []
//! md_ids = []
//! bias = { kind = "exponential", mean = 500.0 }
//!
//! [filter]
//! alpha = 0.7
//! epsilon = 3.0
//! init_std = [100.0, 100.0, 10.0, 10.0]
//!
//! [sekf]
//! scale = 1.5
//! smoother_q_scale = 0.25
//!
//! [divergence]
//! norm_limit = 1e9
//! # lost_track = 1000.0
//!
//! [[anchors]]
//! id = 1
//! x = 0.0
//! y = 0.0
//! ```

use std::path::Path;

use nlos_track_core::baseline::SekfParams;
use nlos_track_core::filters::FilterKind;
use nlos_track_core::model::{Anchor, BiasModel};
use nlos_track_core::scenario::{DivergenceRule, ScenarioSpec};
use serde::{Deserialize, Serialize};

use crate::AppError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub seed: u64,
    pub trials: usize,
    pub steps: usize,
    /// Filters to run; all of them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<Vec<String>>,
    pub motion: MotionSection,
    pub measurement: MeasurementSection,
    pub filter: FilterSection,
    #[serde(default)]
    pub sekf: SekfSection,
    #[serde(default)]
    pub divergence: DivergenceSection,
    pub anchors: Vec<AnchorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSection {
    pub dt: f64,
    pub sigma_w2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSection {
    pub sigma_n: f64,
    pub nlos_ids: Vec<usize>,
    #[serde(default)]
    pub fa_ids: Vec<usize>,
    #[serde(default)]
    pub md_ids: Vec<usize>,
    pub bias: BiasEntry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BiasEntry {
    Exponential { mean: f64 },
    ShiftedGaussian { mean: f64, std: f64 },
    Uniform { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub alpha: f64,
    pub epsilon: f64,
    pub init_std: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SekfSection {
    pub scale: f64,
    pub smoother_q_scale: f64,
}

impl Default for SekfSection {
    fn default() -> Self {
        let p = SekfParams::default();
        Self {
            scale: p.scale,
            smoother_q_scale: p.smoother_q_scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivergenceSection {
    pub norm_limit: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lost_track: Option<f64>,
}

impl Default for DivergenceSection {
    fn default() -> Self {
        let d = DivergenceRule::default();
        Self {
            norm_limit: d.norm_limit,
            lost_track: d.lost_track,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorEntry {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, AppError> {
        toml::from_str(text).map_err(|e| AppError::Config(format!("bad scenario: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| AppError::Config(format!("bad scenario {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn from_spec(spec: &ScenarioSpec, filters: Option<&[FilterKind]>) -> Self {
        Self {
            name: spec.name.clone(),
            seed: spec.seed,
            trials: spec.trials,
            steps: spec.steps,
            filters: filters.map(|f| f.iter().map(|k| k.name().to_string()).collect()),
            motion: MotionSection {
                dt: spec.dt,
                sigma_w2: spec.sigma_w2,
            },
            measurement: MeasurementSection {
                sigma_n: spec.sigma_n,
                nlos_ids: spec.nlos_ids.clone(),
                fa_ids: spec.fa_ids.clone(),
                md_ids: spec.md_ids.clone(),
                bias: match spec.bias {
                    BiasModel::Exponential { mean } => BiasEntry::Exponential { mean },
                    BiasModel::ShiftedGaussian { mean, std } => {
                        BiasEntry::ShiftedGaussian { mean, std }
                    }
                    BiasModel::Uniform { lower, upper } => BiasEntry::Uniform { lower, upper },
                },
            },
            filter: FilterSection {
                alpha: spec.alpha,
                epsilon: spec.epsilon,
                init_std: spec.init_std,
            },
            sekf: SekfSection {
                scale: spec.sekf.scale,
                smoother_q_scale: spec.sekf.smoother_q_scale,
            },
            divergence: DivergenceSection {
                norm_limit: spec.divergence.norm_limit,
                lost_track: spec.divergence.lost_track,
            },
            anchors: spec
                .anchors
                .iter()
                .map(|a| AnchorEntry {
                    id: a.id,
                    x: a.position[0],
                    y: a.position[1],
                })
                .collect(),
        }
    }

    /// Validated scenario.
    pub fn to_spec(&self) -> Result<ScenarioSpec, AppError> {
        let m = &self.measurement;
        let spec = ScenarioSpec {
            name: self.name.clone(),
            anchors: self
                .anchors
                .iter()
                .map(|a| Anchor::new(a.id, a.x, a.y))
                .collect(),
            dt: self.motion.dt,
            sigma_w2: self.motion.sigma_w2,
            sigma_n: m.sigma_n,
            bias: match m.bias {
                BiasEntry::Exponential { mean } => BiasModel::Exponential { mean },
                BiasEntry::ShiftedGaussian { mean, std } => {
                    BiasModel::ShiftedGaussian { mean, std }
                }
                BiasEntry::Uniform { lower, upper } => BiasModel::Uniform { lower, upper },
            },
            steps: self.steps,
            trials: self.trials,
            nlos_ids: m.nlos_ids.clone(),
            fa_ids: m.fa_ids.clone(),
            md_ids: m.md_ids.clone(),
            seed: self.seed,
            alpha: self.filter.alpha,
            epsilon: self.filter.epsilon,
            sekf: SekfParams {
                scale: self.sekf.scale,
                smoother_q_scale: self.sekf.smoother_q_scale,
            },
            init_std: self.filter.init_std,
            divergence: DivergenceRule {
                norm_limit: self.divergence.norm_limit,
                lost_track: self.divergence.lost_track,
            },
        };
        spec.validate()
            .map_err(|e| AppError::Config(e.to_string()))?;
        Ok(spec)
    }

    /// Configured filter list, or every filter.
    pub fn filter_kinds(&self) -> Result<Vec<FilterKind>, AppError> {
        match &self.filters {
            None => Ok(FilterKind::ALL.to_vec()),
            Some(names) => parse_filters(names.iter().map(String::as_str)),
        }
    }
}

/// Parses filter names, rejecting unknown and duplicate entries.
pub fn parse_filters<'a>(
    names: impl IntoIterator<Item = &'a str>,
) -> Result<Vec<FilterKind>, AppError> {
    let mut out: Vec<FilterKind> = Vec::new();
    for n in names {
        let k: FilterKind = n
            .parse()
            .map_err(|e: nlos_track_core::Error| AppError::Config(e.to_string()))?;
        if out.contains(&k) {
            return Err(AppError::Config(format!("filter {k} listed twice")));
        }
        out.push(k);
    }
    if out.is_empty() {
        return Err(AppError::Config("no filters selected".into()));
    }
    Ok(out)
}
