//! Forward passes: shared trunk, language-model head, proposition head.

use super::{slot, Bound, ModelConfig, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Var};
use crate::tokenizer::{CLS, PAD};
use rand_chacha::ChaCha8Rng;

/// Class index convention for the proposition head.
pub const FALSE_CLASS: u32 = 0;
pub const TRUE_CLASS: u32 = 1;

/// Train enables dropout, drawing masks from the given stream; Eval is
/// deterministic.
pub enum Phase<'r> {
    Train(&'r mut ChaCha8Rng),
    Eval,
}

fn maybe_dropout<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    rate: f64,
    phase: &mut Phase,
) -> Result<Var> {
    match phase {
        Phase::Train(rng) if rate > 0.0 => tape.dropout(x, rate, rng),
        _ => Ok(x),
    }
}

/// Pre-layer-norm transformer trunk over one unpadded id sequence. Returns
/// final hidden states `[N, d_model]`; position k depends only on ids 0..=k.
fn trunk<T: Element>(
    tape: &mut Tape<T>,
    bound: &Bound,
    config: &ModelConfig,
    ids: &[u32],
    phase: &mut Phase,
) -> Result<Var> {
    if ids.is_empty() {
        return Err(Error::Length("empty token sequence".into()));
    }
    if ids.len() > config.max_seq_len {
        return Err(Error::Length(format!(
            "sequence of {} tokens exceeds max_seq_len {}",
            ids.len(),
            config.max_seq_len
        )));
    }
    let n = ids.len();
    let rate = config.dropout_rate;

    let tok = tape.embedding(bound.tok_emb(), ids)?;
    let positions: Vec<usize> = (0..n).collect();
    let pos = tape.gather_rows(bound.pos_emb(), &positions)?;
    let mut x = tape.add(tok, pos)?;
    x = maybe_dropout(tape, x, rate, phase)?;

    let head_dim = config.head_dim();
    let att_scale = 1.0 / (head_dim as f64).sqrt();

    for i in 0..config.n_layers {
        let normed = tape.layer_norm(
            x,
            bound.layer(i, slot::LN1_G),
            bound.layer(i, slot::LN1_B),
            LAYER_NORM_EPS,
        )?;
        let q = tape.matmul(normed, bound.layer(i, slot::WQ))?;
        let q = tape.add_bias(q, bound.layer(i, slot::BQ))?;
        let k = tape.matmul(normed, bound.layer(i, slot::WK))?;
        let k = tape.add_bias(k, bound.layer(i, slot::BK))?;
        let v = tape.matmul(normed, bound.layer(i, slot::WV))?;
        let v = tape.add_bias(v, bound.layer(i, slot::BV))?;

        let mut heads = Vec::with_capacity(config.n_heads);
        for h in 0..config.n_heads {
            let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
            let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
            let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, att_scale)?;
            let att = tape.causal_softmax(scores)?;
            let att = maybe_dropout(tape, att, rate, phase)?;
            heads.push(tape.matmul(att, vh)?);
        }
        let merged = tape.concat_cols(&heads)?;
        let proj = tape.matmul(merged, bound.layer(i, slot::WO))?;
        let proj = tape.add_bias(proj, bound.layer(i, slot::BO))?;
        let proj = maybe_dropout(tape, proj, rate, phase)?;
        x = tape.add(x, proj)?;

        let normed = tape.layer_norm(
            x,
            bound.layer(i, slot::LN2_G),
            bound.layer(i, slot::LN2_B),
            LAYER_NORM_EPS,
        )?;
        let up = tape.matmul(normed, bound.layer(i, slot::WFC))?;
        let up = tape.add_bias(up, bound.layer(i, slot::BFC))?;
        let act = tape.gelu(up)?;
        let down = tape.matmul(act, bound.layer(i, slot::WPROJ))?;
        let down = tape.add_bias(down, bound.layer(i, slot::BPROJ))?;
        let down = maybe_dropout(tape, down, rate, phase)?;
        x = tape.add(x, down)?;
    }

    tape.layer_norm(x, bound.lnf_g(), bound.lnf_b(), LAYER_NORM_EPS)
}

/// Next-token logits `[N, vocab_size]`: row k scores candidates for token
/// k+1. The LM head is a bare projection, no bias.
pub fn forward_lm<T: Element>(
    tape: &mut Tape<T>,
    bound: &Bound,
    config: &ModelConfig,
    ids: &[u32],
    phase: &mut Phase,
) -> Result<Var> {
    let h = trunk(tape, bound, config, ids, phase)?;
    tape.matmul(h, bound.w_v())
}

/// Trims trailing [pad]s, checks the sequence ends in [cls], and returns the
/// trunk state at that position, shape `[1, d_model]`. Truncating at [cls]
/// is exactly equivalent to masking the pads: the model is causal, so
/// positions after [cls] cannot influence it.
fn cls_hidden<T: Element>(
    tape: &mut Tape<T>,
    bound: &Bound,
    config: &ModelConfig,
    ids: &[u32],
    phase: &mut Phase,
) -> Result<Var> {
    let end = ids.iter().rposition(|&t| t != PAD).map(|p| p + 1).unwrap_or(0);
    let ids = &ids[..end];
    match ids.last() {
        Some(&CLS) => {}
        _ => {
            return Err(Error::Format(
                "proposition sequence must end with [cls] (before padding)".into(),
            ))
        }
    }
    if ids.contains(&PAD) {
        return Err(Error::Format("interior [pad] in proposition sequence".into()));
    }
    let h = trunk(tape, bound, config, ids, phase)?;
    tape.gather_rows(h, &[ids.len() - 1])
}

/// Judgment distribution `[1, 2]` over {False, True} at the [cls] position.
pub fn forward_proposition<T: Element>(
    tape: &mut Tape<T>,
    bound: &Bound,
    config: &ModelConfig,
    ids: &[u32],
    phase: &mut Phase,
) -> Result<Var> {
    let h = cls_hidden(tape, bound, config, ids, phase)?;
    let logits = tape.matmul(h, bound.w_p())?;
    let logits = tape.add_bias(logits, bound.b_p())?;
    tape.softmax(logits, 1)
}

/// Token-mean next-token NLL over a batch. Targets equal to [pad] are
/// dropped; the mean runs over every surviving target of every sequence, so
/// batch composition does not reweight tokens.
pub fn lm_batch_loss<T: Element>(
    tape: &mut Tape<T>,
    bound: &Bound,
    config: &ModelConfig,
    batch: &[Vec<u32>],
    phase: &mut Phase,
) -> Result<Var> {
    let mut gathered = Vec::new();
    let mut targets = Vec::new();
    for seq in batch {
        if seq.len() < 2 {
            continue;
        }
        let inputs = &seq[..seq.len() - 1];
        let keep: Vec<usize> =
            (0..inputs.len()).filter(|&k| seq[k + 1] != PAD && inputs[k] != PAD).collect();
        if keep.is_empty() {
            continue;
        }
        let h = trunk(tape, bound, config, inputs, phase)?;
        gathered.push(tape.gather_rows(h, &keep)?);
        targets.extend(keep.iter().map(|&k| seq[k + 1]));
    }
    if targets.is_empty() {
        return Err(Error::Contract("batch yields no language-model targets".into()));
    }
    let h_all = tape.concat_rows(&gathered)?;
    let logits = tape.matmul(h_all, bound.w_v())?;
    tape.cross_entropy(logits, &targets)
}

/// Mean judgment cross-entropy over a batch of (ids, truth) pairs.
pub fn prop_batch_loss<T: Element>(
    tape: &mut Tape<T>,
    bound: &Bound,
    config: &ModelConfig,
    batch: &[(Vec<u32>, bool)],
    phase: &mut Phase,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Contract("empty proposition batch".into()));
    }
    let mut rows = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for (ids, truth) in batch {
        rows.push(cls_hidden(tape, bound, config, ids, phase)?);
        targets.push(if *truth { TRUE_CLASS } else { FALSE_CLASS });
    }
    let h_all = tape.concat_rows(&rows)?;
    let logits = tape.matmul(h_all, bound.w_p())?;
    let logits = tape.add_bias(logits, bound.b_p())?;
    tape.cross_entropy(logits, &targets)
}

/// The model's verdict on one encoded proposition. Ties go to False.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Judgment {
    pub predicted: bool,
    pub p_true: f64,
    pub p_false: f64,
}

pub fn predict_proposition<T: Element>(
    params: &super::Parameters<T>,
    ids: &[u32],
) -> Result<Judgment> {
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let probs = forward_proposition(&mut tape, &bound, &params.config, ids, &mut Phase::Eval)?;
    let data = tape.value(probs).data();
    let p_false = data[FALSE_CLASS as usize].to_f64_();
    let p_true = data[TRUE_CLASS as usize].to_f64_();
    Ok(Judgment { predicted: p_true > p_false, p_true, p_false })
}

/// Evaluation-mode LM logits as a plain tensor.
pub fn lm_logits<T: Element>(
    params: &super::Parameters<T>,
    ids: &[u32],
) -> Result<crate::tensor::Tensor<T>> {
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let logits = forward_lm(&mut tape, &bound, &params.config, ids, &mut Phase::Eval)?;
    Ok(tape.value(logits).clone())
}
