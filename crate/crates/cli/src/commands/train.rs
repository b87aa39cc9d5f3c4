//! `train`: fit a model on a build-data directory and leave behind a
//! checkpoint plus a step-by-step metrics stream.

use super::{load_checked, load_data_dir, CHECKPOINT, METRICS};
use crate::config::RootConfig;
use crate::manifest::ManifestBuilder;
use proplm::eval::evaluate;
use proplm::model::Parameters;
use proplm::seeds;
use proplm::trainer::{chunk_windows, save_checkpoint, train, AdamW, StepKind, TrainConfig};
use proplm::{Error, Result};
use std::io::Write;

pub fn run(config: &RootConfig, seed: u64, manifest: &mut ManifestBuilder) -> Result<()> {
    let section = &config.train;
    let data = load_data_dir(&section.data_dir)?;
    let windows = chunk_windows(&data.vocab.encode(&data.corpus), config.model.max_seq_len);
    let pairs: Vec<(Vec<u32>, bool)> = data
        .train_samples
        .iter()
        .map(|s| (data.vocab.encode(&s.text), s.label))
        .collect();

    let mut train_config = TrainConfig { seed, ..section.params.clone() };
    if section.epochs > 0 {
        train_config.total_steps = section.steps_for_epochs(windows.len(), pairs.len())?;
    }
    train_config.validate()?;

    let vocab_hash = data.vocab.sha256_hex();
    let (mut params, mut optimizer, start_step) = match &section.resume_from {
        Some(path) => {
            manifest.record_input(path)?;
            let checkpoint = load_checked::<f32>(path, &data.vocab)?;
            let expected = config.model.model_config(data.vocab.size());
            if checkpoint.params.config != expected {
                return Err(Error::Config(format!(
                    "checkpoint {} disagrees with [model] in the config",
                    path.display()
                )));
            }
            let optimizer = checkpoint
                .optimizer
                .ok_or_else(|| Error::Config("checkpoint has no optimizer state".into()))?;
            (checkpoint.params, optimizer, checkpoint.step)
        }
        None => {
            let model_config = config.model.model_config(data.vocab.size());
            let params =
                Parameters::<f32>::init(model_config, seeds::derive_seed(seed, "init"))?;
            let optimizer = AdamW::new(&params);
            (params, optimizer, 0)
        }
    };
    if start_step >= train_config.total_steps {
        return Err(Error::Config(format!(
            "checkpoint already covers {start_step} of {} steps",
            train_config.total_steps
        )));
    }

    let out = manifest.out_dir().to_path_buf();
    let mut metrics = std::io::BufWriter::new(std::fs::File::create(out.join(METRICS))?);
    let mut periodic: Vec<String> = Vec::new();
    let eval_ids = data.vocab.encode(&data.eval_corpus);
    let mut history = Vec::new();

    let records = train(
        &mut params,
        &mut optimizer,
        &train_config,
        &windows,
        &pairs,
        start_step,
        |record, params, optimizer| {
            serde_json::to_writer(&mut metrics, record)?;
            metrics.write_all(b"\n")?;
            let done = record.step + 1;
            if train_config.checkpoint_interval > 0
                && done % train_config.checkpoint_interval == 0
                && done < train_config.total_steps
            {
                let name = format!("checkpoint-{done:07}.bin");
                save_checkpoint(&out.join(&name), params, Some(optimizer), done, &vocab_hash)?;
                periodic.push(name);
            }
            if train_config.eval_interval > 0 && done % train_config.eval_interval == 0 {
                let report = evaluate(
                    params,
                    &data.vocab,
                    &[("eval-corpus", eval_ids.as_slice())],
                    &data.eval_samples,
                    None,
                )?;
                history.push(serde_json::json!({ "step": done, "report": report }));
            }
            Ok(())
        },
    )?;
    metrics.flush()?;
    drop(metrics);

    save_checkpoint(
        &out.join(CHECKPOINT),
        &params,
        Some(&optimizer),
        train_config.total_steps,
        &vocab_hash,
    )?;
    manifest.note_output(CHECKPOINT)?;
    manifest.note_output(METRICS)?;
    for name in &periodic {
        manifest.note_output(name)?;
    }
    if !history.is_empty() {
        let mut lines = String::new();
        for entry in &history {
            lines.push_str(&serde_json::to_string(entry)?);
            lines.push('\n');
        }
        manifest.write_output("eval-history.jsonl", lines.as_bytes())?;
    }

    let last = |kind: StepKind| {
        records
            .iter()
            .rev()
            .find(|r| r.kind == kind)
            .map(|r| format!("{:.4}", r.loss))
            .unwrap_or_else(|| "-".into())
    };
    println!(
        "trained steps {start_step}..{} (language loss {}, teacher loss {})",
        train_config.total_steps,
        last(StepKind::Language),
        last(StepKind::Teacher)
    );
    Ok(())
}
