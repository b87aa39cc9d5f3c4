//! Unified proposition format.
//!
//! Every labeled example becomes one or more propositions of the form
//!
//! ```text
//! [tsk] task name [tsk] instance text(s) [sep] dynamic prompt [cls]
//! ```
//!
//! where the dynamic prompt asserts a label. The proposition is True when
//! the asserted label is the gold one. Pair construction emits exactly one
//! False proposition per True one, using the same template and a uniformly
//! drawn wrong label.

pub mod registry;

pub use registry::{load_registry, parse_registry};

use crate::error::{Error, Result};
use crate::seeds;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// The closed set of task prefixes.
pub const TASK_PREFIXES: [&str; 7] = [
    "Linguistic Acceptability",
    "Topic Classification",
    "Story Cloze",
    "Sentiment Classification",
    "Question Answering",
    "Paraphrase",
    "Natural Language Inference",
];

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SingleText,
    TextPair,
    MultiChoice,
}

/// One way of phrasing a proposition. `pattern` holds `{label_desc}` exactly
/// once and may consume `{text}`/`{text2}`; consumed fields drop out of the
/// instance-text body.
#[derive(Clone, Debug)]
pub struct Template {
    pub id: u32,
    pub pattern: String,
    pub label_desc: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub id: String,
    pub task: String,
    pub kind: TaskKind,
    pub labels: Vec<String>,
    pub file: Option<String>,
    pub templates: Vec<Template>,
}

/// One line of raw task data. Which fields must be present depends on the
/// dataset's kind: `text` always, `text2` for pairs, `choices` + `answer`
/// for multi-choice, `label` for classification.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawExample {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text2: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropositionSample {
    pub text: String,
    pub label: bool,
    pub task: String,
    pub dataset: String,
    pub template_id: u32,
    pub example_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedProposition {
    pub task: Option<String>,
    pub body: String,
    pub prompt: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DatasetStats {
    pub dataset: String,
    pub samples: usize,
    pub positives: usize,
    pub negatives: usize,
    pub template_histogram: BTreeMap<u32, usize>,
    pub skipped_examples: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct UnifyManifest {
    pub total_samples: usize,
    pub datasets: Vec<DatasetStats>,
    pub warnings: Vec<String>,
}

#[derive(Copy, Clone, Debug)]
pub struct UnifyOptions {
    pub cap_per_dataset: usize,
    pub seed: u64,
    pub with_prefix: bool,
}

impl Default for UnifyOptions {
    fn default() -> Self {
        UnifyOptions { cap_per_dataset: 100_000, seed: 0, with_prefix: true }
    }
}

/// Trims and collapses whitespace runs to single spaces.
pub fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Instantiates one proposition asserting `label` for `example`.
pub fn build_proposition(
    dataset: &Dataset,
    example: &RawExample,
    template: &Template,
    label: &str,
    with_prefix: bool,
) -> Result<PropositionSample> {
    let gold = gold_label(dataset, example)?;
    let desc = match dataset.kind {
        TaskKind::MultiChoice => {
            if !example.choices.iter().any(|c| normalize(c) == label) {
                return Err(Error::Label(format!(
                    "asserted choice {label:?} is not among example {}'s candidates",
                    example.id
                )));
            }
            label.to_string()
        }
        _ => {
            if !dataset.labels.iter().any(|l| l == label) {
                return Err(Error::Label(format!(
                    "label {label:?} is not in dataset {}'s label set",
                    dataset.id
                )));
            }
            template
                .label_desc
                .get(label)
                .ok_or_else(|| {
                    Error::Label(format!(
                        "template {} has no description for label {label:?}",
                        template.id
                    ))
                })?
                .clone()
        }
    };

    let text = field(example, dataset, "text")?;
    let text2 = match dataset.kind {
        TaskKind::TextPair => Some(field(example, dataset, "text2")?),
        _ => None,
    };

    let (prompt, used_text, used_text2) =
        fill_pattern(&template.pattern, &desc, Some(&text), text2.as_deref())?;

    let mut body_parts = Vec::new();
    if !used_text {
        body_parts.push(text.as_str());
    }
    if let (false, Some(t)) = (used_text2, &text2) {
        body_parts.push(t.as_str());
    }
    let body = body_parts.join(" ");

    Ok(PropositionSample {
        text: compose(with_prefix.then_some(dataset.task.as_str()), &body, &prompt),
        label: label == gold,
        task: dataset.task.clone(),
        dataset: dataset.id.clone(),
        template_id: template.id,
        example_id: example.id.clone(),
    })
}

fn gold_label(dataset: &Dataset, example: &RawExample) -> Result<String> {
    match dataset.kind {
        TaskKind::MultiChoice => {
            let idx = example.answer.ok_or_else(|| {
                Error::Field(format!("example {} lacks the answer index", example.id))
            })?;
            let choice = example.choices.get(idx).ok_or_else(|| {
                Error::Label(format!(
                    "example {}: answer {idx} outside its {} candidates",
                    example.id,
                    example.choices.len()
                ))
            })?;
            Ok(normalize(choice))
        }
        _ => {
            let label = example.label.as_deref().ok_or_else(|| {
                Error::Field(format!("example {} lacks the label field", example.id))
            })?;
            if !dataset.labels.iter().any(|l| l == label) {
                return Err(Error::Label(format!(
                    "example {}: gold label {label:?} is not in dataset {}'s label set",
                    example.id, dataset.id
                )));
            }
            Ok(label.to_string())
        }
    }
}

fn field(example: &RawExample, dataset: &Dataset, name: &str) -> Result<String> {
    let raw = match name {
        "text" => example.text.as_deref(),
        "text2" => example.text2.as_deref(),
        _ => None,
    };
    raw.map(normalize).ok_or_else(|| {
        Error::Field(format!(
            "example {} of dataset {} lacks the {name} field",
            example.id, dataset.id
        ))
    })
}

/// Replaces slots in a template pattern. Returns the prompt plus flags for
/// which instance texts the pattern consumed.
fn fill_pattern(
    pattern: &str,
    desc: &str,
    text: Option<&str>,
    text2: Option<&str>,
) -> Result<(String, bool, bool)> {
    let mut out = String::with_capacity(pattern.len() + desc.len());
    let mut used_text = false;
    let mut used_text2 = false;
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open + 1..];
        let close = tail
            .find('}')
            .ok_or_else(|| Error::Format(format!("unclosed slot in pattern {pattern:?}")))?;
        match &tail[..close] {
            "label_desc" => out.push_str(desc),
            "text" => {
                let t = text
                    .ok_or_else(|| Error::Field("pattern wants {text} but none given".into()))?;
                out.push_str(t);
                used_text = true;
            }
            "text2" => {
                let t = text2
                    .ok_or_else(|| Error::Field("pattern wants {text2} but none given".into()))?;
                out.push_str(t);
                used_text2 = true;
            }
            other => return Err(Error::Format(format!("unknown slot {{{other}}}"))),
        }
        rest = &tail[close + 1..];
    }
    out.push_str(rest);
    Ok((normalize(&out), used_text, used_text2))
}

fn compose(task: Option<&str>, body: &str, prompt: &str) -> String {
    let mut parts: Vec<&str> = Vec::with_capacity(7);
    if let Some(name) = task {
        parts.extend(["[tsk]", name, "[tsk]"]);
    }
    if !body.is_empty() {
        parts.push(body);
    }
    parts.push("[sep]");
    if !prompt.is_empty() {
        parts.push(prompt);
    }
    parts.push("[cls]");
    parts.join(" ")
}

/// One True/False pair for an example, or `None` when no wrong label exists.
/// Template and negative-label draws depend only on (seed, dataset id,
/// example id).
pub fn make_pair(
    dataset: &Dataset,
    example: &RawExample,
    seed: u64,
    with_prefix: bool,
) -> Result<Option<(PropositionSample, PropositionSample)>> {
    let mut rng = seeds::rng_from(seeds::stable_hash64(&[
        &seed.to_le_bytes(),
        dataset.id.as_bytes(),
        example.id.as_bytes(),
    ]));
    let template = &dataset.templates[rng.gen_range(0..dataset.templates.len())];

    let gold = gold_label(dataset, example)?;
    let wrong: Vec<String> = match dataset.kind {
        TaskKind::MultiChoice => example
            .choices
            .iter()
            .map(|c| normalize(c))
            .filter(|c| *c != gold)
            .collect(),
        _ => dataset.labels.iter().filter(|l| **l != gold).cloned().collect(),
    };
    if wrong.is_empty() {
        return Ok(None);
    }
    let negative = &wrong[rng.gen_range(0..wrong.len())];

    let pos = build_proposition(dataset, example, template, &gold, with_prefix)?;
    let neg = build_proposition(dataset, example, template, negative, with_prefix)?;
    Ok(Some((pos, neg)))
}

/// Converts every dataset to proposition pairs, enforces the per-dataset
/// sample cap, and shuffles globally under the seed.
pub fn build_unified(
    datasets: &[(Dataset, Vec<RawExample>)],
    options: UnifyOptions,
) -> Result<(Vec<PropositionSample>, UnifyManifest)> {
    let mut samples = Vec::new();
    let mut manifest = UnifyManifest::default();
    let pair_cap = options.cap_per_dataset / 2;

    for (dataset, examples) in datasets {
        if examples.is_empty() {
            manifest
                .warnings
                .push(format!("dataset {} has no examples and was excluded", dataset.id));
            continue;
        }
        let mut stats = DatasetStats { dataset: dataset.id.clone(), ..Default::default() };
        for example in examples {
            if stats.positives >= pair_cap {
                break;
            }
            match make_pair(dataset, example, options.seed, options.with_prefix)? {
                Some((pos, neg)) => {
                    *stats.template_histogram.entry(pos.template_id).or_insert(0) += 2;
                    stats.positives += 1;
                    stats.negatives += 1;
                    samples.push(pos);
                    samples.push(neg);
                }
                None => stats.skipped_examples += 1,
            }
        }
        if stats.skipped_examples > 0 {
            manifest.warnings.push(format!(
                "dataset {}: {} example(s) skipped for lacking a wrong label",
                dataset.id, stats.skipped_examples
            ));
        }
        stats.samples = stats.positives + stats.negatives;
        manifest.datasets.push(stats);
    }

    let mut rng = seeds::rng_from(seeds::derive_seed(options.seed, "unify-shuffle"));
    samples.shuffle(&mut rng);
    manifest.total_samples = samples.len();
    Ok((samples, manifest))
}

/// Rewrites a proposition without its "[tsk] name [tsk]" header, leaving
/// body and prompt untouched. Used by the prefix ablation.
pub fn strip_task_prefix(text: &str) -> Result<String> {
    let parsed = parse_proposition(text)?;
    Ok(compose(None, &parsed.body, &parsed.prompt))
}

/// Splits a proposition back into task prefix, body, and prompt.
pub fn parse_proposition(text: &str) -> Result<ParsedProposition> {
    let seps: Vec<usize> = text.match_indices("[sep]").map(|(i, _)| i).collect();
    if seps.len() != 1 {
        return Err(Error::Parse {
            pos: seps.get(1).copied().unwrap_or(text.len()),
            msg: format!("expected exactly one [sep], found {}", seps.len()),
        });
    }
    let clss: Vec<usize> = text.match_indices("[cls]").map(|(i, _)| i).collect();
    if clss.len() != 1 {
        return Err(Error::Parse {
            pos: clss.get(1).copied().unwrap_or(text.len()),
            msg: format!("expected exactly one [cls], found {}", clss.len()),
        });
    }
    let cls = clss[0];
    if cls + "[cls]".len() != text.len() {
        return Err(Error::Parse { pos: cls, msg: "[cls] must terminate the proposition".into() });
    }

    let (task, body_start) = match text.strip_prefix("[tsk]") {
        Some(rest) => match rest.find("[tsk]") {
            Some(second) => {
                let name = rest[..second].trim();
                if name.is_empty() {
                    return Err(Error::Parse { pos: 5, msg: "empty task prefix".into() });
                }
                (Some(name.to_string()), "[tsk]".len() * 2 + second)
            }
            None => {
                return Err(Error::Parse { pos: 0, msg: "unclosed [tsk] task prefix".into() })
            }
        },
        None => (None, 0),
    };
    if let Some((stray, _)) = text[body_start..].match_indices("[tsk]").next() {
        return Err(Error::Parse {
            pos: body_start + stray,
            msg: "stray [tsk] after the task prefix".into(),
        });
    }

    let sep = seps[0];
    if sep < body_start {
        return Err(Error::Parse { pos: sep, msg: "[sep] inside the task prefix".into() });
    }
    Ok(ParsedProposition {
        task,
        body: text[body_start..sep].trim().to_string(),
        prompt: text[sep + "[sep]".len()..cls].trim().to_string(),
    })
}

// ── JSONL I/O ───────────────────────────────────────────────────────────

pub fn read_raw_examples(path: &Path) -> Result<Vec<RawExample>> {
    read_jsonl(path)
}

pub fn read_samples(path: &Path) -> Result<Vec<PropositionSample>> {
    read_jsonl(path)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
