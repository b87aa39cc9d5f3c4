//! Root configuration: one TOML file with a section per subcommand. Flags
//! override individual values; everything else has a usable default, so a
//! minimal config can be empty.

use proplm::model::ModelConfig;
use proplm::synth::SynthOptions;
use proplm::tokenizer::VocabMode;
use proplm::trainer::{TrainConfig, TrainMode};
use proplm::unify::UnifyOptions;
use proplm::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RootConfig {
    pub data: DataSection,
    pub tokenizer: TokenizerSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub generate: GenerateSection,
    pub ablate: AblateSection,
}

impl RootConfig {
    pub fn load(path: &Path) -> Result<RootConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }

    /// The fully resolved snapshot recorded in run manifests.
    pub fn snapshot(&self) -> Result<toml::Value> {
        toml::Value::try_from(self)
            .map_err(|e| Error::Config(format!("config snapshot: {e}")))
    }
}

/// Synthetic-world and unification settings for `build-data`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub seed: u64,
    pub train_per_dataset: usize,
    pub eval_per_dataset: usize,
    pub narrative_sentences: usize,
    pub knowledge_repeats: usize,
    pub cap_per_dataset: usize,
    pub with_prefix: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        let synth = SynthOptions::default();
        let unify = UnifyOptions::default();
        DataSection {
            seed: synth.seed,
            train_per_dataset: synth.train_per_dataset,
            eval_per_dataset: synth.eval_per_dataset,
            narrative_sentences: synth.narrative_sentences,
            knowledge_repeats: synth.knowledge_repeats,
            cap_per_dataset: unify.cap_per_dataset,
            with_prefix: unify.with_prefix,
        }
    }
}

impl DataSection {
    pub fn synth_options(&self, seed: u64) -> SynthOptions {
        SynthOptions {
            seed,
            train_per_dataset: self.train_per_dataset,
            eval_per_dataset: self.eval_per_dataset,
            narrative_sentences: self.narrative_sentences,
            knowledge_repeats: self.knowledge_repeats,
        }
    }

    pub fn unify_options(&self, seed: u64) -> UnifyOptions {
        UnifyOptions {
            cap_per_dataset: self.cap_per_dataset,
            seed,
            with_prefix: self.with_prefix,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSection {
    pub mode: VocabMode,
    pub max_size: usize,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        TokenizerSection { mode: VocabMode::Word, max_size: 512 }
    }
}

/// Architecture minus the vocabulary size, which is read off the built
/// vocabulary at train time.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 192,
            max_seq_len: 32,
            dropout_rate: 0.0,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            vocab_size,
            max_seq_len: self.max_seq_len,
            dropout_rate: self.dropout_rate,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Directory produced by `build-data`.
    pub data_dir: PathBuf,
    /// When positive, overrides `total_steps` with full passes over the
    /// primary stream (language windows, or propositions in teacher-only
    /// mode), scaled up by the mixing ratio.
    pub epochs: u64,
    /// Optional checkpoint to continue from.
    pub resume_from: Option<PathBuf>,
    #[serde(flatten)]
    pub params: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            data_dir: PathBuf::new(),
            epochs: 0,
            resume_from: None,
            params: TrainConfig::default(),
        }
    }
}

impl TrainSection {
    /// Steps for `epochs` full passes, honoring the step mixing ratio. With
    /// ratio a:b, a pass over n language batches spans n*(a+b)/a total steps.
    pub fn steps_for_epochs(&self, n_windows: usize, n_pairs: usize) -> Result<u64> {
        let c = &self.params;
        let (per_epoch, share) = match c.mode {
            TrainMode::TeacherOnly => {
                (n_pairs.div_ceil(c.teacher_batch_size), u64::from(c.mix_teacher))
            }
            _ => (n_windows.div_ceil(c.language_batch_size), u64::from(c.mix_language)),
        };
        if per_epoch == 0 {
            return Err(Error::Config("epochs need a non-empty training stream".into()));
        }
        let ratio = u64::from(c.mix_language) + u64::from(c.mix_teacher);
        Ok((per_epoch as u64 * self.epochs * ratio).div_ceil(share))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    /// Perplexity window stride; 0 means disjoint windows.
    pub stride: usize,
    /// Also score the training corpus, not just the held-out one.
    pub include_train_corpus: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            data_dir: PathBuf::new(),
            checkpoint: PathBuf::new(),
            stride: 0,
            include_train_corpus: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub prompt: String,
    pub strategy: StrategyName,
    pub k: usize,
    pub beam_width: usize,
    pub max_new: usize,
    pub seed: u64,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection {
            data_dir: PathBuf::new(),
            checkpoint: PathBuf::new(),
            prompt: String::new(),
            strategy: StrategyName::Topk,
            k: 50,
            beam_width: 5,
            max_new: 256,
            seed: 0,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Greedy,
    Topk,
    Beam,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub data_dir: PathBuf,
    pub mode: AblationName,
    /// Tasks removed from teacher training under `unseen_holdout`.
    pub holdout_tasks: Vec<String>,
    pub stride: usize,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            data_dir: PathBuf::new(),
            mode: AblationName::NoLanguageSignal,
            holdout_tasks: Vec::new(),
            stride: 0,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationName {
    NoLanguageSignal,
    NoTaskPrefix,
    UnseenHoldout,
}

/// 0 means "use disjoint windows", i.e. `None` for the eval API.
pub fn stride_option(stride: usize) -> Option<usize> {
    (stride > 0).then_some(stride)
}
