//! Masked encoder-decoder attention network over interaction windows.
//!
//! The encoder reads question-side embeddings, the decoder reads the
//! response-side embeddings shifted one step right behind a learned start
//! vector, and a linear-sigmoid head turns each decoder output into a dropout
//! probability. Every attention layer uses the same causal mask, so the
//! output at a position never depends on that position's own response or on
//! anything later.

mod forward;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::featureizer::{Feature, FeatureSet, TableSizes};
use crate::numerics::{Scalar, Tensor};

pub use forward::{causal_mask, Bound, Forward, Readout};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Encoder blocks, and separately decoder blocks.
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub seq_size: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// Small enough to train on a laptop CPU in minutes.
    pub fn desk() -> Self {
        Self {
            layers: 2,
            d_model: 64,
            heads: 4,
            seq_size: 5,
            dropout: 0.1,
        }
    }

    /// The full-size configuration.
    pub fn paper() -> Self {
        Self {
            layers: 4,
            d_model: 512,
            heads: 8,
            seq_size: 5,
            dropout: 0.5,
        }
    }

    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("layers must be positive".into()));
        }
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.seq_size < 2 {
            return Err(Error::Config(format!(
                "sequence size must be at least 2, got {}",
                self.seq_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Everything that fixes the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub config: ModelConfig,
    pub features: FeatureSet,
    pub sizes: TableSizes,
}

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Xavier,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Embedding tables of one side, each with `size + 1` rows (the last is padding).
pub(crate) fn tables(features: &FeatureSet, sizes: &TableSizes, encoder: bool) -> Vec<(&'static str, u32)> {
    let set = if encoder {
        features.encoder()
    } else {
        features.decoder()
    };
    let mut out = Vec::new();
    for f in set {
        match f {
            Feature::QuestionId => out.push(("question", sizes.question)),
            Feature::Category => out.push(("part", sizes.category)),
            Feature::StartTime => {
                out.push(("hour", sizes.hour));
                out.push(("weekday", sizes.weekday));
            }
            Feature::Position => out.push(("position", sizes.position)),
            Feature::SessionPosition => out.push(("session_position", sizes.session_position)),
            Feature::Correctness => out.push(("correctness", sizes.correctness)),
            Feature::ElapsedTime => out.push(("elapsed", sizes.elapsed)),
            Feature::OnTime => out.push(("on_time", sizes.on_time)),
            Feature::Dropout => out.push(("dropout", sizes.dropout)),
        }
    }
    out
}

impl ModelSpec {
    pub fn new(config: ModelConfig, features: FeatureSet, sizes: TableSizes) -> Result<Self> {
        config.validate()?;
        if sizes.position as usize != config.seq_size {
            return Err(Error::Config(format!(
                "position table covers {} slots but the sequence size is {}",
                sizes.position, config.seq_size
            )));
        }
        Ok(Self {
            config,
            features,
            sizes,
        })
    }

    /// Every parameter, in a fixed order.
    pub fn param_shapes(&self) -> Vec<ParamShape> {
        let d = self.config.d_model;
        let ff = self.config.d_ff();
        let mut out = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, init| out.push(ParamShape { name, shape, init });

        for (side, encoder) in [("e", true), ("l", false)] {
            for (table, size) in tables(&self.features, &self.sizes, encoder) {
                push(format!("emb.{side}.{table}"), vec![size as usize + 1, d], Init::Xavier);
            }
        }
        push("start_token".into(), vec![1, d], Init::Xavier);

        let attn = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str| {
            for w in ["wq", "wk", "wv", "wo"] {
                push(format!("{p}.{w}"), vec![d, d], Init::Xavier);
            }
        };
        let norm = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str| {
            push(format!("{p}.gamma"), vec![d], Init::Ones);
            push(format!("{p}.beta"), vec![d], Init::Zeros);
        };
        let ffn = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str| {
            push(format!("{p}.w1"), vec![d, ff], Init::Xavier);
            push(format!("{p}.b1"), vec![ff], Init::Zeros);
            push(format!("{p}.w2"), vec![ff, d], Init::Xavier);
            push(format!("{p}.b2"), vec![d], Init::Zeros);
        };
        for k in 0..self.config.layers {
            attn(&mut push, &format!("enc.{k}.self_attn"));
            norm(&mut push, &format!("enc.{k}.ln1"));
            ffn(&mut push, &format!("enc.{k}.ffn"));
            norm(&mut push, &format!("enc.{k}.ln2"));
        }
        for k in 0..self.config.layers {
            attn(&mut push, &format!("dec.{k}.self_attn"));
            norm(&mut push, &format!("dec.{k}.ln1"));
            attn(&mut push, &format!("dec.{k}.cross_attn"));
            norm(&mut push, &format!("dec.{k}.ln2"));
            ffn(&mut push, &format!("dec.{k}.ffn"));
            norm(&mut push, &format!("dec.{k}.ln3"));
        }
        push("head.weight".into(), vec![d, 1], Init::Xavier);
        push("head.bias".into(), vec![1], Init::Zeros);
        out
    }
}

/// Named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ModelParams<T> {
    fn default() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.tensors.insert(name.into(), tensor.with_requires_grad(false));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Checks that names and shapes match `spec` exactly.
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        let expected = spec.param_shapes();
        for p in &expected {
            let t = self
                .tensors
                .get(&p.name)
                .ok_or_else(|| Error::Compatibility(format!("missing parameter `{}`", p.name)))?;
            if t.shape() != p.shape.as_slice() {
                return Err(Error::Compatibility(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.shape
                )));
            }
        }
        if self.tensors.len() != expected.len() {
            let known: std::collections::BTreeSet<&str> = expected.iter().map(|p| p.name.as_str()).collect();
            let extra = self.tensors.keys().find(|k| !known.contains(k.as_str()));
            return Err(Error::Compatibility(format!(
                "unexpected parameter `{}`",
                extra.map_or("?", String::as_str)
            )));
        }
        Ok(())
    }
}

/// A parameterized network.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub spec: ModelSpec,
    pub params: ModelParams<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(spec: ModelSpec, params: ModelParams<T>) -> Result<Self> {
        params.check(&spec)?;
        Ok(Self { spec, params })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            params: self.params.cast(),
        }
    }
}
