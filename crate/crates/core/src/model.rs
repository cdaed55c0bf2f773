//! Common scoring interface over the Lipschitz network and the unconstrained
//! baseline, plus the versioned JSON model file.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::baseline::{MlpDescriptor, MlpNet};
use crate::data_io::StandardizationStats;
use crate::error::{Error, Result};
use crate::lipnet::{LipNet, LipNetDescriptor};
use crate::sampler::DomainBox;

/// Anything that maps points to scalar scores with input gradients.
pub trait Scorer: Sync {
    fn input_dim(&self) -> usize;

    fn scores(&self, x: ArrayView2<f64>) -> Result<Array1<f64>>;

    /// Scores and input gradients, one row per sample.
    fn scores_and_gradients(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)>;

    /// True when the scorer is 1-Lipschitz by construction, which is what
    /// makes certified bounds meaningful.
    fn is_lipschitz(&self) -> bool;
}

/// Flat-parameter access used by the trainer.
pub trait Trainable: Scorer + Clone {
    fn params(&self) -> Vec<f64>;

    fn set_params(&mut self, p: &[f64]) -> Result<()>;

    /// Evaluates `batch`, hands the scores to `loss`, and returns the loss
    /// value, the scores and the flat parameter gradient.
    fn value_and_param_gradients(
        &self,
        batch: ArrayView2<f64>,
        loss: &mut dyn FnMut(ArrayView1<f64>) -> Result<(f64, Array1<f64>)>,
    ) -> Result<(f64, Array1<f64>, Vec<f64>)>;

    /// Switches training-only caches on or off. Does not change any result.
    fn set_training(&mut self, _on: bool) {}
}

impl Scorer for LipNet {
    fn input_dim(&self) -> usize {
        LipNet::input_dim(self)
    }

    fn scores(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.score_batch(x)
    }

    fn scores_and_gradients(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        self.input_gradient_batch(x)
    }

    fn is_lipschitz(&self) -> bool {
        true
    }
}

impl Trainable for LipNet {
    fn params(&self) -> Vec<f64> {
        LipNet::params(self)
    }

    fn set_params(&mut self, p: &[f64]) -> Result<()> {
        LipNet::set_params(self, p)
    }

    fn set_training(&mut self, on: bool) {
        for l in self.layers_mut() {
            l.dense.set_keep_tape(on);
        }
    }

    fn value_and_param_gradients(
        &self,
        batch: ArrayView2<f64>,
        loss: &mut dyn FnMut(ArrayView1<f64>) -> Result<(f64, Array1<f64>)>,
    ) -> Result<(f64, Array1<f64>, Vec<f64>)> {
        let (v, s, g) = LipNet::value_and_param_gradients(self, batch, |s| loss(s))?;
        Ok((v, s, g.flatten()))
    }
}

impl Scorer for MlpNet {
    fn input_dim(&self) -> usize {
        MlpNet::input_dim(self)
    }

    fn scores(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.score_batch(x)
    }

    fn scores_and_gradients(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        self.input_gradient_batch(x)
    }

    fn is_lipschitz(&self) -> bool {
        false
    }
}

impl Trainable for MlpNet {
    fn params(&self) -> Vec<f64> {
        MlpNet::params(self)
    }

    fn set_params(&mut self, p: &[f64]) -> Result<()> {
        MlpNet::set_params(self, p)
    }

    fn value_and_param_gradients(
        &self,
        batch: ArrayView2<f64>,
        loss: &mut dyn FnMut(ArrayView1<f64>) -> Result<(f64, Array1<f64>)>,
    ) -> Result<(f64, Array1<f64>, Vec<f64>)> {
        MlpNet::value_and_param_gradients(self, batch, |s| loss(s))
    }
}

/// Either network kind, as stored in a model file.
#[derive(Debug, Clone)]
pub enum AnyNet {
    Lip(LipNet),
    Baseline(MlpNet),
}

macro_rules! dispatch {
    ($self:ident, $n:ident => $e:expr) => {
        match $self {
            AnyNet::Lip($n) => $e,
            AnyNet::Baseline($n) => $e,
        }
    };
}

impl Scorer for AnyNet {
    fn input_dim(&self) -> usize {
        dispatch!(self, n => Scorer::input_dim(n))
    }

    fn scores(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        dispatch!(self, n => Scorer::scores(n, x))
    }

    fn scores_and_gradients(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        dispatch!(self, n => Scorer::scores_and_gradients(n, x))
    }

    fn is_lipschitz(&self) -> bool {
        dispatch!(self, n => Scorer::is_lipschitz(n))
    }
}

impl Trainable for AnyNet {
    fn params(&self) -> Vec<f64> {
        dispatch!(self, n => Trainable::params(n))
    }

    fn set_params(&mut self, p: &[f64]) -> Result<()> {
        dispatch!(self, n => Trainable::set_params(n, p))
    }

    fn set_training(&mut self, on: bool) {
        dispatch!(self, n => Trainable::set_training(n, on))
    }

    fn value_and_param_gradients(
        &self,
        batch: ArrayView2<f64>,
        loss: &mut dyn FnMut(ArrayView1<f64>) -> Result<(f64, Array1<f64>)>,
    ) -> Result<(f64, Array1<f64>, Vec<f64>)> {
        dispatch!(self, n => Trainable::value_and_param_gradients(n, batch, loss))
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkDescriptor {
    Lipschitz(LipNetDescriptor),
    Baseline(MlpDescriptor),
}

/// Everything recorded about the run that produced a model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetadata {
    #[serde(default)]
    pub dataset: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub steps: usize,
    #[serde(default)]
    pub margin: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub final_risk: Option<f64>,
    /// Scores of the training points, used to pick iso-levels for meshing.
    #[serde(default)]
    pub train_scores: Vec<f64>,
    /// Transform applied to raw data before it reaches the network.
    #[serde(default)]
    pub standardization: Option<StandardizationStats>,
    #[serde(default)]
    pub domain: Option<DomainBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub network: NetworkDescriptor,
    pub metadata: TrainingMetadata,
}

impl ModelFile {
    pub fn new(net: &AnyNet, metadata: TrainingMetadata) -> Self {
        let network = match net {
            AnyNet::Lip(n) => NetworkDescriptor::Lipschitz(n.to_descriptor()),
            AnyNet::Baseline(n) => NetworkDescriptor::Baseline(n.to_descriptor()),
        };
        Self { format_version: MODEL_FORMAT_VERSION, network, metadata }
    }

    pub fn to_net(&self) -> Result<AnyNet> {
        Ok(match &self.network {
            NetworkDescriptor::Lipschitz(d) => AnyNet::Lip(LipNet::from_descriptor(d)?),
            NetworkDescriptor::Baseline(d) => AnyNet::Baseline(MlpNet::from_descriptor(d)?),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
                file.format_version
            )));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
