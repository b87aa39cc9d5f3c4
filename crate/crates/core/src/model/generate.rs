//! Decoding strategies: greedy, top-k sampling, beam search.

use super::{forward_lm, Parameters, Phase};
use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::{Element, Tape};
use crate::tokenizer::EOS;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Greedy,
    TopK { k: usize },
    Beam { width: usize },
}

/// Continues `prompt` by up to `max_new` tokens, stopping at [eos] (the
/// [eos], when produced, is included in the returned continuation). When the
/// context outgrows `max_seq_len` the model sees a sliding window of the
/// most recent tokens.
pub fn generate<T: Element>(
    params: &Parameters<T>,
    prompt: &[u32],
    strategy: Strategy,
    max_new: usize,
    seed: u64,
) -> Result<Vec<u32>> {
    if prompt.is_empty() {
        return Err(Error::Config("generation prompt is empty".into()));
    }
    for &id in prompt {
        if id as usize >= params.config.vocab_size {
            return Err(Error::Index(format!(
                "prompt token {id} outside vocab of {}",
                params.config.vocab_size
            )));
        }
    }
    match strategy {
        Strategy::Greedy => sample_loop(params, prompt, max_new, |logits, _| argmax(logits)),
        Strategy::TopK { k } => {
            if k == 0 {
                return Err(Error::Config("top-k needs k >= 1".into()));
            }
            let k = k.min(params.config.vocab_size);
            let mut rng = seeds::rng_from(seeds::derive_seed(seed, "top-k"));
            sample_loop(params, prompt, max_new, move |logits, _| {
                sample_top_k(logits, k, &mut rng)
            })
        }
        Strategy::Beam { width } => {
            if width == 0 {
                return Err(Error::Config("beam search needs width >= 1".into()));
            }
            beam_search(params, prompt, width, max_new)
        }
    }
}

/// Next-token logits for the (windowed) context.
fn next_logits<T: Element>(params: &Parameters<T>, context: &[u32]) -> Result<Vec<f64>> {
    let window_start = context.len().saturating_sub(params.config.max_seq_len);
    let window = &context[window_start..];
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let logits = forward_lm(&mut tape, &bound, &params.config, window, &mut Phase::Eval)?;
    let v = params.config.vocab_size;
    let data = tape.value(logits).data();
    Ok(data[data.len() - v..].iter().map(|x| x.to_f64_()).collect())
}

fn sample_loop<T: Element>(
    params: &Parameters<T>,
    prompt: &[u32],
    max_new: usize,
    mut pick: impl FnMut(&[f64], usize) -> u32,
) -> Result<Vec<u32>> {
    let mut context = prompt.to_vec();
    let mut out = Vec::new();
    for step in 0..max_new {
        let logits = next_logits(params, &context)?;
        let id = pick(&logits, step);
        out.push(id);
        context.push(id);
        if id == EOS {
            break;
        }
    }
    Ok(out)
}

/// Highest logit wins; ties go to the lowest token id.
fn argmax(logits: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Samples among the k highest-logit tokens (ties broken by id), with
/// probabilities renormalized over that set.
fn sample_top_k(logits: &[f64], k: usize, rng: &mut impl Rng) -> u32 {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).expect("finite").then(a.cmp(&b)));
    order.truncate(k);

    let mx = logits[order[0]];
    let weights: Vec<f64> = order.iter().map(|&i| (logits[i] - mx).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen::<f64>() * total;
    for (&id, &w) in order.iter().zip(&weights) {
        draw -= w;
        if draw <= 0.0 {
            return id as u32;
        }
    }
    *order.last().expect("k >= 1") as u32
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
    let lse = logits.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + mx;
    logits.iter().map(|v| v - lse).collect()
}

#[derive(Clone)]
struct Hypothesis {
    continuation: Vec<u32>,
    log_prob: f64,
    finished: bool,
}

/// Width-w beam search over total continuation log-probability. Hypotheses
/// finish at [eos]; the best finished hypothesis wins, falling back to the
/// best open one if nothing finished within `max_new`.
fn beam_search<T: Element>(
    params: &Parameters<T>,
    prompt: &[u32],
    width: usize,
    max_new: usize,
) -> Result<Vec<u32>> {
    let mut beams = vec![Hypothesis { continuation: Vec::new(), log_prob: 0.0, finished: false }];
    for _ in 0..max_new {
        if beams.iter().all(|b| b.finished) {
            break;
        }
        let mut candidates: Vec<Hypothesis> = Vec::new();
        for beam in &beams {
            if beam.finished {
                candidates.push(beam.clone());
                continue;
            }
            let mut context = prompt.to_vec();
            context.extend_from_slice(&beam.continuation);
            let logps = log_softmax(&next_logits(params, &context)?);
            for (id, &lp) in logps.iter().enumerate() {
                let mut continuation = beam.continuation.clone();
                continuation.push(id as u32);
                candidates.push(Hypothesis {
                    continuation,
                    log_prob: beam.log_prob + lp,
                    finished: id as u32 == EOS,
                });
            }
        }
        // Deterministic order: score descending, then continuation ascending.
        candidates.sort_by(|a, b| {
            b.log_prob
                .partial_cmp(&a.log_prob)
                .expect("finite")
                .then_with(|| a.continuation.cmp(&b.continuation))
        });
        candidates.truncate(width);
        beams = candidates;
    }
    let best = beams
        .iter()
        .filter(|b| b.finished)
        .chain(beams.iter())
        .next()
        .expect("width >= 1");
    Ok(best.continuation.clone())
}
