//! A trained model together with everything needed to turn its output back
//! into a capture: sampling geometry, capture length, channel labels and
//! the amplitude scale applied before fitting.
//!
//! Model files are pretty-printed JSON with a `format_version` field. Floats
//! are written with shortest round-trip formatting, so a save/load cycle is
//! lossless and a second save is byte-identical to the first.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    check_len, Activation, ArchKind, ArchSpec, DoubleLayerModel, InrModel, MultiOutputModel,
    SingleLayerModel, TwoLayerWeights,
};
use crate::waveform::{normalize_time, SamplingSpec, TimeGrid, Unit, Waveform, WaveformSet};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub sampling: Option<SamplingSpec>,
    /// Length of the capture the `[-1, 1]` time axis was stretched over.
    pub n_samples: usize,
    pub labels: Vec<String>,
    pub units: Vec<Unit>,
    /// Physical value = model output × scale, per channel.
    pub scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub model: InrModel,
    pub meta: ModelMeta,
}

impl FittedModel {
    pub fn new(model: InrModel, meta: ModelMeta) -> Result<Self> {
        let c = model.n_outputs();
        for (field, len) in [
            ("labels", meta.labels.len()),
            ("units", meta.units.len()),
            ("scales", meta.scales.len()),
        ] {
            if len != c {
                return Err(Error::Dimension {
                    field: field.into(),
                    expected: c,
                    found: len,
                });
            }
        }
        if let Some(k) = meta.scales.iter().position(|s| !s.is_finite() || *s == 0.0) {
            return Err(Error::Format(format!(
                "scale for channel {k} must be finite and nonzero"
            )));
        }
        Ok(Self { model, meta })
    }

    pub fn arch(&self) -> ArchSpec {
        self.model.arch()
    }

    pub fn param_count(&self) -> usize {
        crate::model::param_count(&self.arch())
    }

    /// The capture's own time grid.
    pub fn native_grid(&self) -> Result<TimeGrid> {
        normalize_time(self.meta.n_samples)
    }
}

/// Evaluates the model at every grid point, one waveform per output in
/// label order.
pub fn reconstruct(fitted: &FittedModel, grid: &TimeGrid) -> Result<WaveformSet> {
    let spec = fitted.meta.sampling.ok_or_else(|| {
        Error::invalid("model carries no sampling spec; cannot build a waveform")
    })?;
    let c = fitted.model.n_outputs();
    let mut channels: Vec<Vec<f64>> = vec![Vec::with_capacity(grid.len()); c];
    for &t in grid.times() {
        for (ch, y) in channels.iter_mut().zip(fitted.model.forward(t)) {
            ch.push(y);
        }
    }
    let waves = channels
        .into_iter()
        .enumerate()
        .map(|(k, samples)| {
            let scale = fitted.meta.scales[k];
            let samples = samples.into_iter().map(|y| y * scale).collect();
            Waveform::new(
                samples,
                spec,
                fitted.meta.labels[k].clone(),
                fitted.meta.units[k],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    WaveformSet::new(waves)
}

/// Reconstruction over the capture the model was fit to.
pub fn reconstruct_native(fitted: &FittedModel) -> Result<WaveformSet> {
    reconstruct(fitted, &fitted.native_grid()?)
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    arch: ArchSpec,
    meta: ModelMeta,
    params: ParamFile,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamFile {
    a1: Vec<f64>,
    b1: Vec<f64>,
    #[serde(alias = "A2")]
    a2: Vec<f64>,
    b2: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", alias = "A3")]
    a3: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b3: Option<Vec<f64>>,
}

pub fn model_to_string(fitted: &FittedModel) -> Result<String> {
    let params = match &fitted.model {
        InrModel::Single(m) => ParamFile {
            a1: m.a1.clone(),
            b1: m.b1.clone(),
            a2: m.a2.clone(),
            b2: vec![m.b2],
            a3: None,
            b3: None,
        },
        InrModel::Double(DoubleLayerModel { weights: w, .. })
        | InrModel::Multi(MultiOutputModel { weights: w, .. }) => ParamFile {
            a1: w.a1.clone(),
            b1: w.b1.clone(),
            a2: w.a2.clone(),
            b2: w.b2.clone(),
            a3: Some(w.a3.clone()),
            b3: Some(w.b3.clone()),
        },
    };
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        arch: fitted.arch(),
        meta: fitted.meta.clone(),
        params,
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

pub fn model_from_str(text: &str) -> Result<FittedModel> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            file.format_version
        )));
    }
    file.arch.validate()?;
    let arch = file.arch;
    let p = file.params;
    let model = match arch.kind {
        ArchKind::Single { h } => {
            check_len("a1", &p.a1, h)?;
            check_len("b2", &p.b2, 1)?;
            InrModel::Single(SingleLayerModel::new(arch.omega0, p.a1, p.b1, p.a2, p.b2[0])?)
        }
        ArchKind::Double { h1, h2 } => {
            let w = two_layer(h1, h2, 1, p)?;
            InrModel::Double(DoubleLayerModel::new(arch.omega0, arch.activation, w)?)
        }
        ArchKind::Multi { h1, h2, channels } => {
            let w = two_layer(h1, h2, channels, p)?;
            InrModel::Multi(MultiOutputModel::new(
                arch.omega0,
                arch.activation,
                w,
                file.meta.labels.clone(),
            )?)
        }
    };
    if arch.activation == Activation::Relu && matches!(model, InrModel::Single(_)) {
        return Err(Error::Format("relu single-layer models are not supported".into()));
    }
    FittedModel::new(model, file.meta)
}

fn two_layer(h1: usize, h2: usize, c: usize, p: ParamFile) -> Result<TwoLayerWeights> {
    let a3 = p.a3.ok_or_else(|| Error::Format("missing field `A3`".into()))?;
    let b3 = p.b3.ok_or_else(|| Error::Format("missing field `b3`".into()))?;
    TwoLayerWeights::new(h1, h2, c, p.a1, p.b1, p.a2, p.b2, a3, b3)
}

pub fn save_model(fitted: &FittedModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_string(fitted)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FittedModel> {
    model_from_str(&fs::read_to_string(path)?)
}
