//! JSON file formats.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::{AlternativeModel, HypothesisModel};
use crate::numerics::{log_upper_tail, TruncationPlan};
use crate::optimizer::{class_eval, ClassSolution, OptimalTesterModel, OptimizerConfig};

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// `{"classes":[{"p":..,"count":..}]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisFile {
    pub classes: Vec<HypothesisClassFile>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisClassFile {
    pub p: f64,
    pub count: usize,
}

impl From<&HypothesisModel> for HypothesisFile {
    fn from(m: &HypothesisModel) -> Self {
        Self {
            classes: m
                .classes()
                .iter()
                .map(|c| HypothesisClassFile {
                    p: c.y,
                    count: c.count,
                })
                .collect(),
        }
    }
}

impl TryFrom<HypothesisFile> for HypothesisModel {
    type Error = Error;

    fn try_from(f: HypothesisFile) -> Result<Self> {
        HypothesisModel::from_classes(f.classes.into_iter().map(|c| (c.p, c.count)))
    }
}

/// Load a hypothesis from a file, or from a built-in spec `uniform:N` / `heavy:N`.
pub fn load_hypothesis(spec: &str) -> Result<HypothesisModel> {
    if let Some(n) = spec.strip_prefix("uniform:") {
        let n: usize = n
            .parse()
            .map_err(|_| Error::Config(format!("bad element count in `{spec}`")))?;
        if n == 0 {
            return Err(Error::Config("uniform needs at least one element".into()));
        }
        return Ok(HypothesisModel::uniform(n));
    }
    if let Some(n) = spec.strip_prefix("heavy:") {
        let n: usize = n
            .parse()
            .map_err(|_| Error::Config(format!("bad element count in `{spec}`")))?;
        if n == 0 {
            return Err(Error::Config("heavy needs at least one light element".into()));
        }
        return Ok(HypothesisModel::heavy_element(n));
    }
    let file: HypothesisFile = read_json(spec)?;
    file.try_into()
}

pub fn save_hypothesis(path: impl AsRef<Path>, m: &HypothesisModel) -> Result<()> {
    write_json(path, &HypothesisFile::from(m))
}

pub fn load_alternative(path: impl AsRef<Path>) -> Result<AlternativeModel> {
    let alt: AlternativeModel = read_json(path)?;
    alt.validate()?;
    Ok(alt)
}

/// Model file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub k: f64,
    pub eps: f64,
    pub alpha: f64,
    pub u: f64,
    pub shift: f64,
    pub delta_log: f64,
    pub i_max: usize,
    pub classes: Vec<ModelClassFile>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub starts_disagree: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelClassFile {
    pub y: f64,
    pub count: usize,
    pub q: f64,
    pub x1: f64,
    pub x2: f64,
    pub gamma: f64,
}

impl From<&OptimalTesterModel> for ModelFile {
    fn from(m: &OptimalTesterModel) -> Self {
        Self {
            k: m.k,
            eps: m.eps,
            alpha: m.alpha,
            u: m.u,
            shift: m.shift,
            delta_log: m.delta_log,
            i_max: m.truncation.i_max,
            classes: m
                .classes
                .iter()
                .map(|c| ModelClassFile {
                    y: c.y,
                    count: c.count,
                    q: c.q,
                    x1: c.x1,
                    x2: c.x2,
                    gamma: c.gamma,
                })
                .collect(),
            starts_disagree: m.starts_disagree,
        }
    }
}

impl TryFrom<ModelFile> for OptimalTesterModel {
    type Error = Error;

    /// Rebuilds the model and rejects it if any stored invariant fails.
    fn try_from(f: ModelFile) -> Result<Self> {
        let mut model = OptimalTesterModel {
            k: f.k,
            eps: f.eps,
            alpha: f.alpha,
            u: f.u,
            shift: f.shift,
            delta_log: f.delta_log,
            classes: f
                .classes
                .iter()
                .map(|c| ClassSolution {
                    y: c.y,
                    count: c.count,
                    q: c.q,
                    x1: c.x1,
                    x2: c.x2,
                    gamma: c.gamma,
                    objective: 0.0,
                })
                .collect(),
            truncation: TruncationPlan {
                i_max: f.i_max,
                tail_log_mass: 0.0,
            },
            starts_disagree: f.starts_disagree,
        };
        model.validate()?;
        let cfg = OptimizerConfig::default();
        let max_rate = model
            .classes
            .iter()
            .map(|c| model.k * c.x2.max(c.y))
            .fold(0.0, f64::max);
        model.truncation.tail_log_mass = log_upper_tail(max_rate, f.i_max);
        for c in model.classes.iter_mut() {
            c.objective = c.count as f64 * class_eval(c, f.alpha, f.u, f.k, &cfg).f;
        }
        Ok(model)
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<OptimalTesterModel> {
    let f: ModelFile = read_json(path)?;
    f.try_into()
}

pub fn save_model(path: impl AsRef<Path>, m: &OptimalTesterModel) -> Result<()> {
    write_json(path, &ModelFile::from(m))
}
