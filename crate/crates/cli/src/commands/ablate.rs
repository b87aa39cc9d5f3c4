//! `ablate`: train a baseline and one variant from the same initialization,
//! then report their metric deltas.

use super::load_data_dir;
use crate::config::{stride_option, AblationName, RootConfig};
use crate::manifest::ManifestBuilder;
use proplm::eval::{run_ablation, AblationMode, AblationSetup};
use proplm::seeds;
use proplm::trainer::{chunk_windows, TrainConfig, TrainMode};
use proplm::{Error, Result};

pub fn run(config: &RootConfig, seed: u64, manifest: &mut ManifestBuilder) -> Result<()> {
    let section = &config.ablate;
    let data = load_data_dir(&section.data_dir)?;
    let mode = match section.mode {
        AblationName::NoLanguageSignal => AblationMode::NoLanguageSignal,
        AblationName::NoTaskPrefix => AblationMode::NoTaskPrefix,
        AblationName::UnseenHoldout => {
            if section.holdout_tasks.is_empty() {
                return Err(Error::Config(
                    "unseen_holdout needs at least one task in holdout_tasks".into(),
                ));
            }
            AblationMode::UnseenHoldout(section.holdout_tasks.clone())
        }
    };

    let mut train_config = TrainConfig { seed, ..config.train.params.clone() };
    train_config.mode = TrainMode::Dual;
    if config.train.epochs > 0 {
        return Err(Error::Config(
            "ablate compares fixed step counts; set total_steps, not epochs".into(),
        ));
    }
    train_config.validate()?;

    let windows = chunk_windows(&data.vocab.encode(&data.corpus), config.model.max_seq_len);
    let eval_ids = data.vocab.encode(&data.eval_corpus);
    let setup = AblationSetup {
        model: config.model.model_config(data.vocab.size()),
        train: train_config,
        init_seed: seeds::derive_seed(seed, "init"),
        vocab: &data.vocab,
        language_data: &windows,
        teacher_train: &data.train_samples,
        eval_corpora: &[("eval-corpus", &eval_ids)],
        eval_samples: &data.eval_samples,
        stride: stride_option(section.stride),
    };
    let name = mode.name();
    let outcome = run_ablation::<f32>(&setup, &mode)?;

    manifest.write_output("baseline-eval.json", outcome.baseline.to_json()?.as_bytes())?;
    manifest.write_output("variant-eval.json", outcome.variant.to_json()?.as_bytes())?;
    manifest.write_output("delta.csv", outcome.csv.as_bytes())?;
    println!(
        "{name}: baseline mean accuracy {:.3}, variant {:.3}",
        outcome.baseline.mean_accuracy(),
        outcome.variant.mean_accuracy()
    );
    print!("{}", outcome.csv);
    Ok(())
}
