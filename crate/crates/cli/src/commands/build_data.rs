//! `build-data`: generate the synthetic world, unify it into proposition
//! pairs, and build the vocabulary.

use super::{CORPUS, DATA_MANIFEST, EVAL_CORPUS, UNIFIED_EVAL, UNIFIED_TRAIN, VOCAB};
use crate::config::RootConfig;
use crate::manifest::ManifestBuilder;
use proplm::synth;
use proplm::tokenizer::Vocab;
use proplm::unify::build_unified;
use proplm::Result;
use serde::Serialize;

#[derive(Serialize)]
struct DataManifest {
    train: proplm::unify::UnifyManifest,
    eval: proplm::unify::UnifyManifest,
    vocab_sha256: String,
    vocab_size: usize,
}

pub fn run(config: &RootConfig, seed: u64, manifest: &mut ManifestBuilder) -> Result<()> {
    let bundle = synth::generate(&config.data.synth_options(seed))?;
    let (train_samples, train_stats) =
        build_unified(&bundle.train_sets(), config.data.unify_options(seed))?;
    let (eval_samples, eval_stats) =
        build_unified(&bundle.eval_sets(), config.data.unify_options(seed))?;

    // The vocabulary sees only training-side text; held-out data must stay
    // in-vocabulary by corpus design, not by peeking.
    let mut vocab_text = bundle.corpus_text();
    for sample in &train_samples {
        vocab_text.push(' ');
        vocab_text.push_str(&sample.text);
    }
    let vocab = Vocab::build(&vocab_text, config.tokenizer.mode, config.tokenizer.max_size)?;

    let jsonl = |samples: &[proplm::unify::PropositionSample]| -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for sample in samples {
            serde_json::to_writer(&mut out, sample)?;
            out.push(b'\n');
        }
        Ok(out)
    };
    manifest.write_output(UNIFIED_TRAIN, &jsonl(&train_samples)?)?;
    manifest.write_output(UNIFIED_EVAL, &jsonl(&eval_samples)?)?;
    manifest.write_output(CORPUS, bundle.corpus_text().as_bytes())?;
    manifest.write_output(EVAL_CORPUS, bundle.eval_corpus_text().as_bytes())?;
    manifest.write_output(VOCAB, &vocab.file_bytes())?;

    let stats = DataManifest {
        train: train_stats,
        eval: eval_stats,
        vocab_sha256: vocab.sha256_hex(),
        vocab_size: vocab.size(),
    };
    manifest.write_output(DATA_MANIFEST, serde_json::to_string_pretty(&stats)?.as_bytes())?;
    println!(
        "wrote {} train and {} eval propositions, vocab of {} ({})",
        train_samples.len(),
        eval_samples.len(),
        vocab.size(),
        manifest.out_dir().display()
    );
    Ok(())
}
