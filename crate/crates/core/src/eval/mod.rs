//! Held-out evaluation: sliding-window perplexity over token streams and
//! argmax proposition judgment with accuracy, F1, and Matthews correlation.

mod ablate;

pub use ablate::{run_ablation, AblationMode, AblationOutcome, AblationSetup};

use crate::error::{Error, Result};
use crate::model::{lm_logits, predict_proposition, Parameters};
use crate::tensor::Element;
use crate::tokenizer::{Vocab, PAD};
use crate::unify::PropositionSample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

/// Exp of mean per-token negative log-likelihood under causal conditioning.
///
/// The stream is cut into windows of `max_seq_len` tokens. With the default
/// stride (one full window) the windows are disjoint and each window's first
/// token serves only as context. A smaller stride slides the window and
/// scores just the `stride` new targets per position, giving the rest of the
/// window as context. Pad tokens are never scored. Accumulation is in f64
/// regardless of model precision.
pub fn perplexity<T: Element>(
    params: &Parameters<T>,
    corpus: &[u32],
    stride: Option<usize>,
) -> Result<f64> {
    let window = params.config.max_seq_len;
    let stride = stride.unwrap_or(window);
    if stride == 0 || stride > window {
        return Err(Error::Config(format!(
            "stride must be in 1..={window}, got {stride}"
        )));
    }
    if corpus.len() < 2 {
        return Err(Error::Contract(
            "perplexity needs at least two tokens".into(),
        ));
    }

    let mut total_nll = 0.0f64;
    let mut count = 0usize;
    let mut begin = 0usize;
    let mut prev_end = 0usize;
    loop {
        let end = (begin + window).min(corpus.len());
        let first_target = (begin + 1).max(prev_end);
        if first_target < end {
            // Rows of the logits matrix line up so row r predicts
            // corpus[begin + r + 1]; the window's last token is never input.
            let logits = lm_logits(params, &corpus[begin..end - 1])?;
            let vocab = params.config.vocab_size;
            for t in first_target..end {
                if corpus[t] == PAD || corpus[t - 1] == PAD {
                    continue;
                }
                let row = &logits.data()[(t - 1 - begin) * vocab..(t - begin) * vocab];
                total_nll += nll_from_row(row, corpus[t] as usize);
                count += 1;
            }
        }
        prev_end = end;
        if end == corpus.len() {
            break;
        }
        begin += stride;
    }
    if count == 0 {
        return Err(Error::Contract(
            "corpus has no scorable targets (all pads)".into(),
        ));
    }
    Ok((total_nll / count as f64).exp())
}

/// −log softmax(row)[target], computed in f64 with max subtraction.
fn nll_from_row<T: Element>(row: &[T], target: usize) -> f64 {
    let max = row.iter().map(|v| v.to_f64_()).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| (v.to_f64_() - max).exp()).sum();
    max + sum.ln() - row[target].to_f64_()
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
    pub true_negative: u64,
}

impl ConfusionCounts {
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.true_positive += 1,
            (true, false) => self.false_positive += 1,
            (false, true) => self.false_negative += 1,
            (false, false) => self.true_negative += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_positive + self.false_positive + self.false_negative + self.true_negative
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (self.true_positive + self.true_negative) as f64 / total as f64
    }

    /// Binary F1 with True as the positive class; degenerate cases are 0.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.true_positive + self.false_positive + self.false_negative;
        if denom == 0 {
            return 0.0;
        }
        2.0 * self.true_positive as f64 / denom as f64
    }

    /// Matthews correlation coefficient; any zero marginal makes it 0.
    pub fn matthews(&self) -> f64 {
        let (tp, fp, fe, tn) = (
            self.true_positive as f64,
            self.false_positive as f64,
            self.false_negative as f64,
            self.true_negative as f64,
        );
        let denom = (tp + fp) * (tp + fe) * (tn + fp) * (tn + fe);
        if denom == 0.0 {
            return 0.0;
        }
        (tp * tn - fp * fe) / denom.sqrt()
    }
}

/// Judgment quality for one task family.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub judged: u64,
    pub skipped: u64,
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub f1: f64,
    pub matthews: f64,
}

impl TaskMetrics {
    fn finish(counts: ConfusionCounts, skipped: u64) -> TaskMetrics {
        TaskMetrics {
            judged: counts.total(),
            skipped,
            accuracy: counts.accuracy(),
            f1: counts.f1(),
            matthews: counts.matthews(),
            counts,
        }
    }
}

/// Scores every proposition by argmax over the two-way head and aggregates
/// confusion counts per task. Samples the model cannot format (too long,
/// missing terminal token after encoding) are skipped and counted.
pub fn judge<T: Element>(
    params: &Parameters<T>,
    vocab: &Vocab,
    samples: &[PropositionSample],
) -> Result<BTreeMap<String, TaskMetrics>> {
    let mut counts: BTreeMap<String, (ConfusionCounts, u64)> = BTreeMap::new();
    for sample in samples {
        let entry = counts.entry(sample.task.clone()).or_default();
        let ids = vocab.encode(&sample.text);
        match predict_proposition(params, &ids) {
            Ok(judgment) => entry.0.record(judgment.predicted, sample.label),
            Err(Error::Format(_)) | Err(Error::Length(_)) => entry.1 += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(counts
        .into_iter()
        .map(|(task, (c, skipped))| (task, TaskMetrics::finish(c, skipped)))
        .collect())
}

/// One evaluation run: perplexity per corpus plus judgment metrics per task,
/// stamped with hashes of the parameters and architecture for provenance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub perplexity: BTreeMap<String, f64>,
    pub tasks: BTreeMap<String, TaskMetrics>,
    pub model_hash: String,
    pub config_hash: String,
}

impl EvalReport {
    /// Unweighted mean accuracy across tasks; 0 when no task was judged.
    pub fn mean_accuracy(&self) -> f64 {
        if self.tasks.is_empty() {
            return 0.0;
        }
        self.tasks.values().map(|m| m.accuracy).sum::<f64>() / self.tasks.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn evaluate<T: Element>(
    params: &Parameters<T>,
    vocab: &Vocab,
    corpora: &[(&str, &[u32])],
    samples: &[PropositionSample],
    stride: Option<usize>,
) -> Result<EvalReport> {
    let mut ppl = BTreeMap::new();
    for (name, corpus) in corpora {
        ppl.insert(name.to_string(), perplexity(params, corpus, stride)?);
    }
    Ok(EvalReport {
        perplexity: ppl,
        tasks: judge(params, vocab, samples)?,
        model_hash: model_hash(params),
        config_hash: config_hash(params),
    })
}

/// SHA-256 over dtype, tensor names, shapes, and little-endian payloads.
pub fn model_hash<T: Element>(params: &Parameters<T>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(T::DTYPE.as_bytes());
    for (name, tensor) in params.tensors() {
        hasher.update(name.as_bytes());
        for &dim in tensor.shape() {
            hasher.update((dim as u64).to_le_bytes());
        }
        let mut bytes = Vec::with_capacity(tensor.numel() * T::BYTES);
        for &v in tensor.data() {
            v.write_le(&mut bytes);
        }
        hasher.update(&bytes);
    }
    hex(&hasher.finalize())
}

pub fn config_hash<T: Element>(params: &Parameters<T>) -> String {
    let json = serde_json::to_string(&params.config).expect("config serializes");
    hex(&Sha256::digest(json.as_bytes()))
}

fn hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
