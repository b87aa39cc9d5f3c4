//! Decoder-only transformer with two heads: next-token logits over the
//! vocabulary and a True/False judgment read at the [cls] position. Both
//! heads share the trunk, so either loss moves the same parameters.

mod forward;
mod generate;

pub use forward::{
    forward_lm, forward_proposition, lm_batch_loss, lm_logits, predict_proposition,
    prop_batch_loss, Judgment, Phase, FALSE_CLASS, TRUE_CLASS,
};
pub use generate::{generate, Strategy};

use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::{Element, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 4,
            d_model: 128,
            n_heads: 4,
            d_ff: 512,
            vocab_size: 262,
            max_seq_len: 256,
            dropout_rate: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0
            || self.d_model == 0
            || self.n_heads == 0
            || self.d_ff == 0
            || self.max_seq_len == 0
        {
            return Err(Error::Config("model dimensions must be nonzero".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size <= crate::tokenizer::SPECIAL_TOKENS.len() {
            return Err(Error::Config(format!(
                "vocab_size {} leaves no room beyond the special tokens",
                self.vocab_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0,1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Slot offsets of the 16 per-layer tensors inside the canonical order.
mod slot {
    pub const LN1_G: usize = 0;
    pub const LN1_B: usize = 1;
    pub const WQ: usize = 2;
    pub const BQ: usize = 3;
    pub const WK: usize = 4;
    pub const BK: usize = 5;
    pub const WV: usize = 6;
    pub const BV: usize = 7;
    pub const WO: usize = 8;
    pub const BO: usize = 9;
    pub const LN2_G: usize = 10;
    pub const LN2_B: usize = 11;
    pub const WFC: usize = 12;
    pub const BFC: usize = 13;
    pub const WPROJ: usize = 14;
    pub const BPROJ: usize = 15;
}

const PER_LAYER: usize = 16;

/// Canonical (name, shape) listing; checkpoint layout and optimizer state
/// follow this order exactly.
pub fn parameter_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.d_model;
    let mut out = vec![
        ("tok_emb".to_string(), vec![config.vocab_size, d]),
        ("pos_emb".to_string(), vec![config.max_seq_len, d]),
    ];
    for i in 0..config.n_layers {
        let l = |suffix: &str| format!("layer{i}.{suffix}");
        out.extend([
            (l("ln1.g"), vec![d]),
            (l("ln1.b"), vec![d]),
            (l("attn.wq"), vec![d, d]),
            (l("attn.bq"), vec![d]),
            (l("attn.wk"), vec![d, d]),
            (l("attn.bk"), vec![d]),
            (l("attn.wv"), vec![d, d]),
            (l("attn.bv"), vec![d]),
            (l("attn.wo"), vec![d, d]),
            (l("attn.bo"), vec![d]),
            (l("ln2.g"), vec![d]),
            (l("ln2.b"), vec![d]),
            (l("mlp.wfc"), vec![d, config.d_ff]),
            (l("mlp.bfc"), vec![config.d_ff]),
            (l("mlp.wproj"), vec![config.d_ff, d]),
            (l("mlp.bproj"), vec![d]),
        ]);
    }
    out.extend([
        ("lnf.g".to_string(), vec![d]),
        ("lnf.b".to_string(), vec![d]),
        ("w_v".to_string(), vec![d, config.vocab_size]),
        ("w_p".to_string(), vec![d, 2]),
        ("b_p".to_string(), vec![2]),
    ]);
    out
}

/// All trainable tensors in canonical order.
#[derive(Clone, Debug)]
pub struct Parameters<T: Element> {
    pub config: ModelConfig,
    tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Element> Parameters<T> {
    /// Fresh init: matrices ~ normal(0, 0.02), biases zero, layer-norm gains
    /// one. The normal draws happen in f64 so f32 and f64 models built from
    /// the same seed hold the same values.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Parameters<T>> {
        config.validate()?;
        let mut rng = seeds::rng_from(seeds::derive_seed(seed, "param-init"));
        let tensors = parameter_layout(&config)
            .into_iter()
            .map(|(name, shape)| {
                let tensor = if shape.len() == 2 {
                    Tensor::randn(shape, INIT_STD, &mut rng)
                } else if name.ends_with(".g") {
                    Tensor::full(shape, T::one())
                } else {
                    Tensor::zeros(shape)
                };
                (name, tensor)
            })
            .collect();
        Ok(Parameters { config, tensors })
    }

    pub fn from_tensors(
        config: ModelConfig,
        tensors: Vec<(String, Tensor<T>)>,
    ) -> Result<Parameters<T>> {
        config.validate()?;
        let expected = parameter_layout(&config);
        if tensors.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, tensor), (want_name, want_shape)) in tensors.iter().zip(&expected) {
            if name != want_name || tensor.shape() != want_shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} {:?} does not match layout entry {want_name} {want_shape:?}",
                    tensor.shape()
                )));
            }
        }
        Ok(Parameters { config, tensors })
    }

    pub fn tensors(&self) -> &[(String, Tensor<T>)] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [(String, Tensor<T>)] {
        &mut self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Element>(&self) -> Parameters<U> {
        Parameters {
            config: self.config.clone(),
            tensors: self.tensors.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }

    /// Records every tensor as a tracked leaf. One binding per tape, so
    /// gradients from all sequences of a batch accumulate on the same vars.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|(_, t)| tape.leaf(t.clone())).collect(),
            n_layers: self.config.n_layers,
        }
    }

    /// Records tensors as untracked constants (evaluation).
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|(_, t)| tape.constant(t.clone())).collect(),
            n_layers: self.config.n_layers,
        }
    }
}

/// Tape handles for one binding of the parameters.
pub struct Bound {
    vars: Vec<Var>,
    n_layers: usize,
}

impl Bound {
    /// Wraps an existing var list laid out in canonical order (used by the
    /// gradient checker to rebuild the graph from probe tensors).
    pub fn from_vars(vars: Vec<Var>, n_layers: usize) -> Bound {
        Bound { vars, n_layers }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn tok_emb(&self) -> Var {
        self.vars[0]
    }

    pub fn pos_emb(&self) -> Var {
        self.vars[1]
    }

    fn layer(&self, i: usize, slot: usize) -> Var {
        self.vars[2 + i * PER_LAYER + slot]
    }

    fn tail(&self, offset: usize) -> Var {
        self.vars[2 + self.n_layers * PER_LAYER + offset]
    }

    pub fn lnf_g(&self) -> Var {
        self.tail(0)
    }

    pub fn lnf_b(&self) -> Var {
        self.tail(1)
    }

    pub fn w_v(&self) -> Var {
        self.tail(2)
    }

    pub fn w_p(&self) -> Var {
        self.tail(3)
    }

    pub fn b_p(&self) -> Var {
        self.tail(4)
    }
}
