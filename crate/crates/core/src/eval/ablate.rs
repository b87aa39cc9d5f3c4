//! Paired ablation runs: train a variant and its baseline under identical
//! seeds, steps, and data order, then report metric deltas side by side.

use super::{evaluate, EvalReport};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parameters};
use crate::tensor::Element;
use crate::tokenizer::Vocab;
use crate::trainer::{train, AdamW, TrainConfig, TrainMode};
use crate::unify::{strip_task_prefix, PropositionSample};
use std::collections::BTreeSet;
use std::fmt::Write as _;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AblationMode {
    /// Teacher-only training; measures what the language signal buys.
    NoLanguageSignal,
    /// Trains and judges on propositions with the task header removed.
    NoTaskPrefix,
    /// Drops the named tasks from unified training but still judges them.
    UnseenHoldout(Vec<String>),
}

impl AblationMode {
    pub fn name(&self) -> &'static str {
        match self {
            AblationMode::NoLanguageSignal => "no_language_signal",
            AblationMode::NoTaskPrefix => "no_task_prefix",
            AblationMode::UnseenHoldout(_) => "unseen_holdout",
        }
    }
}

/// Everything both runs share. The variant derives its training data and
/// mode from `mode`; nothing else differs.
pub struct AblationSetup<'a> {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub init_seed: u64,
    pub vocab: &'a Vocab,
    pub language_data: &'a [Vec<u32>],
    pub teacher_train: &'a [PropositionSample],
    pub eval_corpora: &'a [(&'a str, &'a [u32])],
    pub eval_samples: &'a [PropositionSample],
    pub stride: Option<usize>,
}

pub struct AblationOutcome {
    pub baseline: EvalReport,
    pub variant: EvalReport,
    pub csv: String,
}

fn strip_all(samples: &[PropositionSample]) -> Result<Vec<PropositionSample>> {
    samples
        .iter()
        .map(|s| {
            let mut out = s.clone();
            out.text = strip_task_prefix(&s.text)?;
            Ok(out)
        })
        .collect()
}

fn drop_tasks(
    samples: &[PropositionSample],
    holdout: &[String],
) -> Result<Vec<PropositionSample>> {
    let holdout: BTreeSet<&str> = holdout.iter().map(String::as_str).collect();
    let kept: Vec<PropositionSample> = samples
        .iter()
        .filter(|s| !holdout.contains(s.task.as_str()))
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(Error::Config(
            "holdout removes every task from the training set".into(),
        ));
    }
    Ok(kept)
}

fn to_pairs(vocab: &Vocab, samples: &[PropositionSample]) -> Vec<(Vec<u32>, bool)> {
    samples.iter().map(|s| (vocab.encode(&s.text), s.label)).collect()
}

fn train_model<T: Element>(
    setup: &AblationSetup,
    config: &TrainConfig,
    teacher_pairs: &[(Vec<u32>, bool)],
) -> Result<Parameters<T>> {
    let mut params = Parameters::<T>::init(setup.model.clone(), setup.init_seed)?;
    let mut optimizer = AdamW::new(&params);
    train(
        &mut params,
        &mut optimizer,
        config,
        setup.language_data,
        teacher_pairs,
        0,
        |_, _, _| Ok(()),
    )?;
    Ok(params)
}

/// Trains the baseline and the requested variant from the same
/// initialization, evaluates both, and tabulates deltas (variant minus
/// baseline) as CSV.
pub fn run_ablation<T: Element>(
    setup: &AblationSetup,
    mode: &AblationMode,
) -> Result<AblationOutcome> {
    let (variant_train, variant_config, variant_eval) = match mode {
        AblationMode::NoLanguageSignal => (
            setup.teacher_train.to_vec(),
            TrainConfig { mode: TrainMode::TeacherOnly, ..setup.train.clone() },
            setup.eval_samples.to_vec(),
        ),
        AblationMode::NoTaskPrefix => (
            strip_all(setup.teacher_train)?,
            setup.train.clone(),
            strip_all(setup.eval_samples)?,
        ),
        AblationMode::UnseenHoldout(tasks) => (
            drop_tasks(setup.teacher_train, tasks)?,
            setup.train.clone(),
            setup.eval_samples.to_vec(),
        ),
    };

    let baseline_params =
        train_model::<T>(setup, &setup.train, &to_pairs(setup.vocab, setup.teacher_train))?;
    let variant_params =
        train_model::<T>(setup, &variant_config, &to_pairs(setup.vocab, &variant_train))?;

    let baseline = evaluate(
        &baseline_params,
        setup.vocab,
        setup.eval_corpora,
        setup.eval_samples,
        setup.stride,
    )?;
    let variant = evaluate(
        &variant_params,
        setup.vocab,
        setup.eval_corpora,
        &variant_eval,
        setup.stride,
    )?;

    let csv = delta_csv(&baseline, &variant);
    Ok(AblationOutcome { baseline, variant, csv })
}

/// One row per metric: "metric,baseline,variant,delta".
pub fn delta_csv(baseline: &EvalReport, variant: &EvalReport) -> String {
    let mut out = String::from("metric,baseline,variant,delta\n");
    let mut row = |name: &str, b: f64, v: f64| {
        writeln!(out, "{name},{b:.6},{v:.6},{:.6}", v - b).expect("string write");
    };
    let corpora: BTreeSet<&String> =
        baseline.perplexity.keys().chain(variant.perplexity.keys()).collect();
    for corpus in corpora {
        let b = baseline.perplexity.get(corpus).copied().unwrap_or(f64::NAN);
        let v = variant.perplexity.get(corpus).copied().unwrap_or(f64::NAN);
        row(&format!("perplexity/{corpus}"), b, v);
    }
    let tasks: BTreeSet<&String> = baseline.tasks.keys().chain(variant.tasks.keys()).collect();
    for task in tasks {
        let b = baseline.tasks.get(task);
        let v = variant.tasks.get(task);
        let get = |m: Option<&super::TaskMetrics>, f: fn(&super::TaskMetrics) -> f64| {
            m.map(f).unwrap_or(f64::NAN)
        };
        row(&format!("accuracy/{task}"), get(b, |m| m.accuracy), get(v, |m| m.accuracy));
        row(&format!("f1/{task}"), get(b, |m| m.f1), get(v, |m| m.f1));
        row(&format!("matthews/{task}"), get(b, |m| m.matthews), get(v, |m| m.matthews));
    }
    row("accuracy/mean", baseline.mean_accuracy(), variant.mean_accuracy());
    out
}
