//! Versioned JSON encoding of a trained model.
//!
//! Filters are stored as a `d × m` matrix (one column per filter) in row-major
//! order, so `data[r * m + k]` is component `r` of filter `k`.

use convmpt_core::{Activation, Diagnostics, FilterBank, Matrix, Model, RepresentationMode, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterMatrix {
    /// `[d, m]`.
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub mode: RepresentationMode,
    pub activation: Activation,
    pub input_dim: usize,
    pub filters: Option<FilterMatrix>,
    pub u: Vec<f64>,
    pub theta: f64,
    pub config: TrainConfig,
    pub diagnostics: Diagnostics,
}

impl ModelFile {
    pub fn from_model(model: &Model) -> ModelFile {
        let filters = model.filters.as_ref().map(|bank| {
            let (m, d) = (bank.count(), bank.dim());
            let mut data = vec![0.0; d * m];
            for k in 0..m {
                for (r, &v) in bank.filter(k).iter().enumerate() {
                    data[r * m + k] = v;
                }
            }
            FilterMatrix { shape: [d, m], data }
        });
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            mode: model.mode(),
            activation: model.filters.as_ref().map_or(model.config.activation, FilterBank::activation),
            input_dim: model.input_dim(),
            filters,
            u: model.u.clone(),
            theta: model.theta,
            config: model.config.clone(),
            diagnostics: model.diagnostics.clone(),
        }
    }

    pub fn into_model(self) -> CliResult<Model> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(CliError::Format(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.mode != self.config.mode {
            return Err(CliError::Format("model mode disagrees with its config".into()));
        }
        let filters = match self.filters {
            Some(FilterMatrix { shape: [d, m], data }) => {
                if d * m != data.len() || d != self.input_dim {
                    return Err(CliError::Format(format!(
                        "filter shape [{d}, {m}] does not fit {} values for input dimension {}",
                        data.len(),
                        self.input_dim
                    )));
                }
                let mut weights = Matrix::zeros(m, d);
                for r in 0..d {
                    for k in 0..m {
                        weights.set(k, r, data[r * m + k]);
                    }
                }
                Some(FilterBank::new(weights, self.activation).map_err(invalid)?)
            }
            None => {
                if self.u.len() != self.input_dim {
                    return Err(CliError::Format("baseline classifier length differs from input dimension".into()));
                }
                None
            }
        };
        Model::from_parts(filters, self.u, self.theta, self.config, self.diagnostics).map_err(invalid)
    }

    pub fn to_json(&self) -> CliResult<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> CliResult<ModelFile> {
        Ok(serde_json::from_str(text)?)
    }
}

fn invalid(e: convmpt_core::Error) -> CliError {
    CliError::Format(format!("invalid model: {e}"))
}
