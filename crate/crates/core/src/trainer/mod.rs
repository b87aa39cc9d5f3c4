//! The dual-signal training loop: language steps and teacher steps
//! interleaved by a fixed-ratio schedule, AdamW updates, deterministic data
//! cycling, and checkpoint/resume.

mod adamw;
mod checkpoint;

pub use adamw::{clip_global_norm, AdamW, AdamWConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use crate::error::{Error, Result};
use crate::model::{lm_batch_loss, prop_batch_loss, Parameters, Phase};
use crate::seeds;
use crate::tensor::{Element, Tape, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Language,
    Teacher,
}

impl std::fmt::Display for StepKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StepKind::Language => "language",
            StepKind::Teacher => "teacher",
        })
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Dual,
    LanguageOnly,
    TeacherOnly,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub language_batch_size: usize,
    pub teacher_batch_size: usize,
    /// Language:teacher step ratio, e.g. 2:1 repeats L,L,T.
    pub mix_language: u32,
    pub mix_teacher: u32,
    pub total_steps: u64,
    pub seed: u64,
    pub eval_interval: u64,
    pub checkpoint_interval: u64,
    /// Global-norm gradient clip; 0 disables.
    pub grad_clip: f64,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            language_batch_size: 8,
            teacher_batch_size: 8,
            mix_language: 2,
            mix_teacher: 1,
            total_steps: 1000,
            seed: 0,
            eval_interval: 0,
            checkpoint_interval: 0,
            grad_clip: 1.0,
            mode: TrainMode::Dual,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.mix_language == 0 || self.mix_teacher == 0 {
            return Err(Error::Config("mix ratio components must be positive".into()));
        }
        if self.language_batch_size == 0 || self.teacher_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if self.grad_clip < 0.0 {
            return Err(Error::Config("grad_clip cannot be negative".into()));
        }
        Ok(())
    }

    pub fn optimizer_config(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }
}

/// Fixed repeating step pattern: `a` language steps then `b` teacher steps.
/// Any window of a+b consecutive steps holds exactly a language steps.
#[derive(Copy, Clone, Debug)]
pub struct Schedule {
    language: u32,
    teacher: u32,
}

impl Schedule {
    pub fn new(language: u32, teacher: u32) -> Result<Schedule> {
        if language == 0 || teacher == 0 {
            return Err(Error::Config("schedule ratio components must be positive".into()));
        }
        Ok(Schedule { language, teacher })
    }

    pub fn kind(&self, step: u64) -> StepKind {
        let period = (self.language + self.teacher) as u64;
        if step % period < self.language as u64 {
            StepKind::Language
        } else {
            StepKind::Teacher
        }
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    #[serde(rename = "type")]
    pub kind: StepKind,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

/// Endlessly cycles a dataset, reshuffling on every exhaustion with a seed
/// derived from (root seed, stream label, epoch index).
struct CyclingStream<X: Clone> {
    items: Vec<X>,
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    seed: u64,
    label: &'static str,
}

impl<X: Clone> CyclingStream<X> {
    fn new(items: Vec<X>, seed: u64, label: &'static str) -> CyclingStream<X> {
        let mut stream =
            CyclingStream { order: (0..items.len()).collect(), items, pos: 0, epoch: 0, seed, label };
        stream.reshuffle();
        stream
    }

    fn reshuffle(&mut self) {
        let mut rng = seeds::rng_from(seeds::derive_seed_n(self.seed, self.label, self.epoch));
        self.order.shuffle(&mut rng);
        self.epoch += 1;
    }

    fn next_batch(&mut self, n: usize) -> Vec<X> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            if self.pos == self.items.len() {
                self.reshuffle();
                self.pos = 0;
            }
            out.push(self.items[self.order[self.pos]].clone());
            self.pos += 1;
        }
        out
    }

    /// Advances past `n` items without producing them, replicating
    /// `next_batch`'s epoch boundaries. Used when resuming mid-run.
    fn fast_forward(&mut self, mut n: usize) {
        while n > 0 {
            if self.pos == self.items.len() {
                self.reshuffle();
                self.pos = 0;
            }
            let take = n.min(self.items.len() - self.pos);
            self.pos += take;
            n -= take;
        }
    }
}

/// Cuts a token stream into training sequences of at most `window` tokens,
/// dropping a trailing remnant too short to hold a next-token target.
pub fn chunk_windows(stream: &[u32], window: usize) -> Vec<Vec<u32>> {
    stream.chunks(window.max(2)).filter(|c| c.len() >= 2).map(|c| c.to_vec()).collect()
}

/// Whether a schedule slot actually runs under the given mode. Disabled
/// slots are skipped without consuming data or producing a record, so an
/// ablation run performs exactly the same language steps at the same slot
/// indices as the dual run it is compared against.
fn slot_runs(kind: StepKind, mode: TrainMode) -> bool {
    !matches!(
        (kind, mode),
        (StepKind::Language, TrainMode::TeacherOnly) | (StepKind::Teacher, TrainMode::LanguageOnly)
    )
}

/// Runs the schedule from `start_step` to `config.total_steps`. The observer
/// sees every completed step with the freshly updated parameters and
/// optimizer, and may persist checkpoints or metrics.
pub fn train<T, F>(
    params: &mut Parameters<T>,
    optimizer: &mut AdamW<T>,
    config: &TrainConfig,
    language_data: &[Vec<u32>],
    teacher_data: &[(Vec<u32>, bool)],
    start_step: u64,
    mut observer: F,
) -> Result<Vec<StepRecord>>
where
    T: Element,
    F: FnMut(&StepRecord, &Parameters<T>, &AdamW<T>) -> Result<()>,
{
    config.validate()?;
    let schedule = Schedule::new(config.mix_language, config.mix_teacher)?;
    let needs_language = !matches!(config.mode, TrainMode::TeacherOnly);
    let needs_teacher = !matches!(config.mode, TrainMode::LanguageOnly);
    if needs_language && language_data.is_empty() {
        return Err(Error::Config("language stream is empty but the mode needs it".into()));
    }
    if needs_teacher && teacher_data.is_empty() {
        return Err(Error::Config("teacher stream is empty but the mode needs it".into()));
    }

    let mut language = CyclingStream::new(language_data.to_vec(), config.seed, "language-stream");
    let mut teacher = CyclingStream::new(teacher_data.to_vec(), config.seed, "teacher-stream");
    for step in 0..start_step.min(config.total_steps) {
        let kind = schedule.kind(step);
        if !slot_runs(kind, config.mode) {
            continue;
        }
        match kind {
            StepKind::Language => language.fast_forward(config.language_batch_size),
            StepKind::Teacher => teacher.fast_forward(config.teacher_batch_size),
        }
    }

    let opt_config = config.optimizer_config();
    let mut records = Vec::new();
    for step in start_step..config.total_steps {
        let kind = schedule.kind(step);
        if !slot_runs(kind, config.mode) {
            continue;
        }
        let started = Instant::now();
        let mut dropout_rng = seeds::rng_from(seeds::derive_seed_n(config.seed, "dropout", step));
        let mut phase = Phase::Train(&mut dropout_rng);

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let loss_var = match kind {
            StepKind::Language => {
                let batch = language.next_batch(config.language_batch_size);
                lm_batch_loss(&mut tape, &bound, &params.config, &batch, &mut phase)
            }
            StepKind::Teacher => {
                let batch = teacher.next_batch(config.teacher_batch_size);
                prop_batch_loss(&mut tape, &bound, &params.config, &batch, &mut phase)
            }
        }
        .map_err(|e| abort_diag(step, kind, e))?;

        let loss = tape.value(loss_var).item()?.to_f64_();
        if !loss.is_finite() {
            return Err(abort_diag(step, kind, Error::NonFinite("loss".into())));
        }
        tape.backward(loss_var)?;
        let mut grads: Vec<Tensor<T>> =
            bound.vars().iter().map(|&v| tape.grad(v)).collect();
        drop(tape);
        if config.grad_clip > 0.0 {
            clip_global_norm(&mut grads, config.grad_clip);
        }
        optimizer.step(params, &grads, &opt_config)?;

        let record = StepRecord {
            step,
            kind,
            loss,
            lr: config.learning_rate,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        observer(&record, params, optimizer)?;
        records.push(record);
    }
    Ok(records)
}

fn abort_diag(step: u64, kind: StepKind, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::NonFinite(format!(
            "{what}; training aborted at step {step} ({kind} step)"
        )),
        other => other,
    }
}
