//! Subcommand implementations and the artifact layout they share.

mod ablate;
mod build_data;
mod eval;
mod generate;
mod train;

pub use ablate::run as ablate;
pub use build_data::run as build_data;
pub use eval::run as eval;
pub use generate::run as generate;
pub use train::run as train;

use proplm::tokenizer::Vocab;
use proplm::trainer::{load_checkpoint, Checkpoint};
use proplm::unify::{read_samples, PropositionSample};
use proplm::{Error, Result};
use std::path::Path;

pub const UNIFIED_TRAIN: &str = "unified-train.jsonl";
pub const UNIFIED_EVAL: &str = "unified-eval.jsonl";
pub const CORPUS: &str = "corpus.txt";
pub const EVAL_CORPUS: &str = "eval-corpus.txt";
pub const VOCAB: &str = "vocab.json";
pub const DATA_MANIFEST: &str = "data-manifest.json";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const METRICS: &str = "train-metrics.jsonl";

/// Everything `build-data` wrote, reloaded for downstream commands.
pub struct DataDir {
    pub vocab: Vocab,
    pub train_samples: Vec<PropositionSample>,
    pub eval_samples: Vec<PropositionSample>,
    pub corpus: String,
    pub eval_corpus: String,
}

pub fn load_data_dir(dir: &Path) -> Result<DataDir> {
    if dir.as_os_str().is_empty() {
        return Err(Error::Config("data_dir is not set".into()));
    }
    let file = |name: &str| {
        let path = dir.join(name);
        if !path.exists() {
            return Err(Error::Config(format!(
                "missing data artifact {}; run build-data first",
                path.display()
            )));
        }
        Ok(path)
    };
    Ok(DataDir {
        vocab: Vocab::load(&file(VOCAB)?)?,
        train_samples: read_samples(&file(UNIFIED_TRAIN)?)?,
        eval_samples: read_samples(&file(UNIFIED_EVAL)?)?,
        corpus: std::fs::read_to_string(file(CORPUS)?)?,
        eval_corpus: std::fs::read_to_string(file(EVAL_CORPUS)?)?,
    })
}

/// Loads a checkpoint and refuses vocabulary mismatches: judgments and
/// perplexities against the wrong token table are silently meaningless.
pub fn load_checked<T: proplm::tensor::Element>(
    path: &Path,
    vocab: &Vocab,
) -> Result<Checkpoint<T>> {
    if path.as_os_str().is_empty() {
        return Err(Error::Config("checkpoint path is not set".into()));
    }
    let checkpoint = load_checkpoint::<T>(path)?;
    if checkpoint.vocab_sha256 != vocab.sha256_hex() {
        return Err(Error::Config(format!(
            "checkpoint {} was trained with a different vocabulary",
            path.display()
        )));
    }
    Ok(checkpoint)
}
