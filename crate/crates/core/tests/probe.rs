//! Scratch harness for tuning the acceptance world. Not a deliverable.

use proplm::eval::{evaluate, perplexity, EvalReport};
use proplm::model::{ModelConfig, Parameters};
use proplm::synth::{self, SynthOptions};
use proplm::tokenizer::{Vocab, VocabMode};
use proplm::trainer::{chunk_windows, train, AdamW, TrainConfig, TrainMode};
use proplm::unify::{build_unified, PropositionSample, UnifyOptions};
use std::time::Instant;

fn to_pairs(vocab: &Vocab, samples: &[PropositionSample]) -> Vec<(Vec<u32>, bool)> {
    samples.iter().map(|s| (vocab.encode(&s.text), s.label)).collect()
}

#[test]
#[ignore]
fn world_tune_v2() {
    let bundle = synth::generate(&SynthOptions {
        seed: 0,
        train_per_dataset: 200,
        eval_per_dataset: 100,
        narrative_sentences: 300,
        knowledge_repeats: 3,
    })
    .unwrap();
    let options = UnifyOptions { seed: 0, ..Default::default() };
    let (train_samples, _) = build_unified(&bundle.train_sets(), options.clone()).unwrap();
    let (eval_samples, _) = build_unified(&bundle.eval_sets(), options).unwrap();
    let mut vocab_text = bundle.corpus_text();
    for s in &train_samples {
        vocab_text.push(' ');
        vocab_text.push_str(&s.text);
    }
    let vocab = Vocab::build(&vocab_text, VocabMode::Word, 512).unwrap();
    println!("vocab {}", vocab.size());

    let model = ModelConfig {
        n_layers: 2,
        d_model: 64,
        n_heads: 4,
        d_ff: 192,
        vocab_size: vocab.size(),
        max_seq_len: 32,
        dropout_rate: 0.0,
    };
    let windows = chunk_windows(&vocab.encode(&bundle.corpus_text()), model.max_seq_len);
    let pairs = to_pairs(&vocab, &train_samples);
    let eval_ids = vocab.encode(&bundle.eval_corpus_text());
    println!("windows {} pairs {}", windows.len(), pairs.len());

    let config = TrainConfig {
        learning_rate: 1e-3,
        total_steps: 6000,
        teacher_batch_size: 64,
        seed: 0,
        ..TrainConfig::default()
    };

    let run = |label: &str, cfg: &TrainConfig, teacher: &[(Vec<u32>, bool)]| -> Parameters<f32> {
        let start = Instant::now();
        let mut params = Parameters::<f32>::init(model.clone(), 0).unwrap();
        let mut optimizer = AdamW::new(&params);
        let records =
            train(&mut params, &mut optimizer, cfg, &windows, teacher, 0, |_, _, _| Ok(()))
                .unwrap();
        let teacher_losses: Vec<f64> = records
            .iter()
            .filter(|r| r.kind == proplm::trainer::StepKind::Teacher)
            .map(|r| r.loss)
            .collect();
        let tail = &teacher_losses[teacher_losses.len().saturating_sub(100)..];
        let tail_mean = if tail.is_empty() {
            f64::NAN
        } else {
            tail.iter().sum::<f64>() / tail.len() as f64
        };
        println!(
            "== {label}: {} records, last-100 teacher loss {tail_mean:.4}, {:.0}s",
            records.len(),
            start.elapsed().as_secs_f64()
        );
        params
    };
    let summarize = |label: &str, report: &EvalReport, ppl: f64| {
        let per_task: Vec<String> = report
            .tasks
            .iter()
            .map(|(t, m)| format!("{t} {:.3}", m.accuracy))
            .collect();
        println!(
            "{label}: mean acc {:.3} [{}] eval ppl {ppl:.2}",
            report.mean_accuracy(),
            per_task.join(", ")
        );
    };

    let dual = run("dual", &config, &pairs);
    let dual_report =
        evaluate(&dual, &vocab, &[("eval", &eval_ids)], &eval_samples, None).unwrap();
    summarize("dual", &dual_report, dual_report.perplexity["eval"]);

    let lang = run(
        "language-only",
        &TrainConfig { mode: TrainMode::LanguageOnly, ..config.clone() },
        &pairs,
    );
    println!("language-only eval ppl {:.2}", perplexity(&lang, &eval_ids, None).unwrap());

    let teacher = run(
        "teacher-only",
        &TrainConfig { mode: TrainMode::TeacherOnly, ..config.clone() },
        &pairs,
    );
    let teacher_report =
        evaluate(&teacher, &vocab, &[("eval", &eval_ids)], &eval_samples, None).unwrap();
    summarize("teacher-only", &teacher_report, teacher_report.perplexity["eval"]);

    let kept: Vec<PropositionSample> = train_samples
        .iter()
        .filter(|s| s.task != "Topic Classification")
        .cloned()
        .collect();
    println!("holdout keeps {} of {} samples", kept.len(), train_samples.len());
    let holdout = run("holdout-dual", &config, &to_pairs(&vocab, &kept));
    let holdout_report =
        evaluate(&holdout, &vocab, &[("eval", &eval_ids)], &eval_samples, None).unwrap();
    summarize("holdout", &holdout_report, holdout_report.perplexity["eval"]);
}

#[test]
#[ignore]
fn lm_diag() {
    let bundle = synth::generate(&SynthOptions {
        seed: 0,
        train_per_dataset: 200,
        eval_per_dataset: 100,
        narrative_sentences: 1200,
        knowledge_repeats: 3,
    })
    .unwrap();
    let options = UnifyOptions { seed: 0, ..Default::default() };
    let (train_samples, _) = build_unified(&bundle.train_sets(), options).unwrap();
    let mut vocab_text = bundle.corpus_text();
    for s in &train_samples {
        vocab_text.push(' ');
        vocab_text.push_str(&s.text);
    }
    let vocab = Vocab::build(&vocab_text, VocabMode::Word, 512).unwrap();
    let model = ModelConfig {
        n_layers: 2,
        d_model: 64,
        n_heads: 4,
        d_ff: 192,
        vocab_size: vocab.size(),
        max_seq_len: 32,
        dropout_rate: 0.0,
    };
    let train_ids = vocab.encode(&bundle.corpus_text());
    let windows = chunk_windows(&train_ids, model.max_seq_len);
    let eval_ids = vocab.encode(&bundle.eval_corpus_text());
    println!("vocab {} windows {}", vocab.size(), windows.len());

    let cfg = TrainConfig {
        learning_rate: 3e-4,
        total_steps: 9999,
        mode: TrainMode::LanguageOnly,
        seed: 0,
        ..TrainConfig::default()
    };
    let mut params = Parameters::<f32>::init(model.clone(), 0).unwrap();
    let mut optimizer = AdamW::new(&params);
    let mut seen = 0u64;
    train(
        &mut params,
        &mut optimizer,
        &cfg,
        &windows,
        &[(vec![3, 4, 5], true)],
        0,
        |rec, p, _| {
            seen += 1;
            if seen % 1000 == 0 {
                let ppl = perplexity(p, &eval_ids, None).unwrap();
                println!("lm step {seen} loss {:.3} eval ppl {ppl:.2}", rec.loss);
            }
            Ok(())
        },
    )
    .unwrap();
    let train_ppl = perplexity(&params, &train_ids, None).unwrap();
    let eval_ppl = perplexity(&params, &eval_ids, None).unwrap();
    println!("final: train ppl {train_ppl:.2} eval ppl {eval_ppl:.2}");
}
