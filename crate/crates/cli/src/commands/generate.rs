//! `generate`: continue a prompt with greedy, top-k, or beam decoding.

use super::{load_checked, load_data_dir};
use crate::config::{RootConfig, StrategyName};
use crate::manifest::ManifestBuilder;
use proplm::model::{generate, Strategy};
use proplm::{Error, Result};

pub fn run(config: &RootConfig, seed: u64, manifest: &mut ManifestBuilder) -> Result<()> {
    let section = &config.generate;
    if section.prompt.trim().is_empty() {
        return Err(Error::Config("generation needs a prompt (--prompt or [generate])".into()));
    }
    let data = load_data_dir(&section.data_dir)?;
    manifest.record_input(&section.checkpoint)?;
    let checkpoint = load_checked::<f32>(&section.checkpoint, &data.vocab)?;

    let strategy = match section.strategy {
        StrategyName::Greedy => Strategy::Greedy,
        StrategyName::Topk => Strategy::TopK { k: section.k },
        StrategyName::Beam => Strategy::Beam { width: section.beam_width },
    };
    let prompt_ids = data.vocab.encode(&section.prompt);
    let output_ids =
        generate(&checkpoint.params, &prompt_ids, strategy, section.max_new, seed)?;
    let text = data.vocab.decode(&output_ids)?;

    let record = serde_json::json!({
        "prompt": section.prompt,
        "prompt_ids": prompt_ids,
        "strategy": section.strategy,
        "k": section.k,
        "beam_width": section.beam_width,
        "max_new": section.max_new,
        "seed": seed,
        "output_ids": output_ids,
        "text": text,
    });
    manifest.write_output("generation.json", serde_json::to_string_pretty(&record)?.as_bytes())?;
    manifest.write_output("generation.txt", text.as_bytes())?;
    println!("{text}");
    Ok(())
}
