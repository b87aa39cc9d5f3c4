//! `eval`: score a checkpoint's perplexity and proposition judgments.

use super::{load_checked, load_data_dir};
use crate::config::{stride_option, RootConfig};
use crate::manifest::ManifestBuilder;
use proplm::eval::evaluate;
use proplm::Result;

pub fn run(config: &RootConfig, _seed: u64, manifest: &mut ManifestBuilder) -> Result<()> {
    let section = &config.eval;
    let data = load_data_dir(&section.data_dir)?;
    manifest.record_input(&section.checkpoint)?;
    let checkpoint = load_checked::<f32>(&section.checkpoint, &data.vocab)?;

    let eval_ids = data.vocab.encode(&data.eval_corpus);
    let train_ids = data.vocab.encode(&data.corpus);
    let mut corpora: Vec<(&str, &[u32])> = vec![("eval-corpus", &eval_ids)];
    if section.include_train_corpus {
        corpora.push(("train-corpus", &train_ids));
    }

    let report = evaluate(
        &checkpoint.params,
        &data.vocab,
        &corpora,
        &data.eval_samples,
        stride_option(section.stride),
    )?;
    manifest.write_output("eval.json", report.to_json()?.as_bytes())?;

    for (name, ppl) in &report.perplexity {
        println!("{name}: perplexity {ppl:.3}");
    }
    for (task, metrics) in &report.tasks {
        println!(
            "{task}: accuracy {:.3} f1 {:.3} matthews {:.3} ({} judged, {} skipped)",
            metrics.accuracy, metrics.f1, metrics.matthews, metrics.judged, metrics.skipped
        );
    }
    println!("mean accuracy {:.3}", report.mean_accuracy());
    Ok(())
}
