//! Task/template registry: a TOML file declaring datasets, their task kind,
//! label sets, and template pools.

use super::{Dataset, TaskKind, Template, TASK_PREFIXES};
use crate::error::{Error, Result};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;

pub const MAX_TEMPLATES_PER_DATASET: usize = 10;

#[derive(Deserialize)]
struct RegistryFile {
    #[serde(default)]
    datasets: Vec<DatasetEntry>,
}

#[derive(Deserialize)]
struct DatasetEntry {
    id: String,
    task: String,
    kind: TaskKind,
    #[serde(default)]
    labels: Vec<String>,
    #[serde(default)]
    file: Option<String>,
    #[serde(default)]
    templates: Vec<TemplateEntry>,
}

#[derive(Deserialize)]
struct TemplateEntry {
    pattern: String,
    #[serde(default)]
    label_desc: BTreeMap<String, String>,
}

/// Parses and validates a registry document.
pub fn parse_registry(text: &str) -> Result<Vec<Dataset>> {
    let file: RegistryFile =
        toml::from_str(text).map_err(|e| Error::Config(format!("registry: {e}")))?;
    if file.datasets.is_empty() {
        return Err(Error::Config("registry declares no datasets".into()));
    }
    let mut out = Vec::with_capacity(file.datasets.len());
    let mut seen = std::collections::HashSet::new();
    for entry in file.datasets {
        if !seen.insert(entry.id.clone()) {
            return Err(Error::Config(format!("duplicate dataset id {:?}", entry.id)));
        }
        out.push(validate_dataset(entry)?);
    }
    Ok(out)
}

pub fn load_registry(path: &Path) -> Result<Vec<Dataset>> {
    let text = std::fs::read_to_string(path)?;
    parse_registry(&text)
}

fn validate_dataset(entry: DatasetEntry) -> Result<Dataset> {
    let ctx = &entry.id;
    if !TASK_PREFIXES.contains(&entry.task.as_str()) {
        return Err(Error::Config(format!(
            "{ctx}: task {:?} is not in the prefix set {TASK_PREFIXES:?}",
            entry.task
        )));
    }
    match entry.kind {
        TaskKind::SingleText | TaskKind::TextPair => {
            if entry.labels.is_empty() {
                return Err(Error::Config(format!(
                    "{ctx}: classification datasets need a label set"
                )));
            }
        }
        TaskKind::MultiChoice => {
            if !entry.labels.is_empty() {
                return Err(Error::Config(format!(
                    "{ctx}: multi-choice datasets take candidates per example, not a label set"
                )));
            }
        }
    }
    if entry.templates.is_empty() {
        return Err(Error::Config(format!("{ctx}: no templates")));
    }
    if entry.templates.len() > MAX_TEMPLATES_PER_DATASET {
        return Err(Error::Config(format!(
            "{ctx}: {} templates exceeds the limit of {MAX_TEMPLATES_PER_DATASET}",
            entry.templates.len()
        )));
    }

    let mut templates = Vec::with_capacity(entry.templates.len());
    for (i, t) in entry.templates.into_iter().enumerate() {
        validate_pattern(ctx, i, &t.pattern, entry.kind)?;
        if matches!(entry.kind, TaskKind::SingleText | TaskKind::TextPair) {
            for label in &entry.labels {
                if !t.label_desc.contains_key(label) {
                    return Err(Error::Config(format!(
                        "{ctx}: template {i} lacks a description for label {label:?}"
                    )));
                }
            }
        }
        templates.push(Template { id: i as u32, pattern: t.pattern, label_desc: t.label_desc });
    }

    Ok(Dataset {
        id: entry.id,
        task: entry.task,
        kind: entry.kind,
        labels: entry.labels,
        file: entry.file,
        templates,
    })
}

fn validate_pattern(ctx: &str, idx: usize, pattern: &str, kind: TaskKind) -> Result<()> {
    let mut label_desc_count = 0;
    for slot in slots(pattern) {
        match slot {
            "label_desc" => label_desc_count += 1,
            "text" => {}
            "text2" => {
                if kind != TaskKind::TextPair {
                    return Err(Error::Config(format!(
                        "{ctx}: template {idx} uses {{text2}} but the dataset is not text-pair"
                    )));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "{ctx}: template {idx} has unknown slot {{{other}}}"
                )));
            }
        }
    }
    if label_desc_count != 1 {
        return Err(Error::Config(format!(
            "{ctx}: template {idx} must contain {{label_desc}} exactly once, found {label_desc_count}"
        )));
    }
    Ok(())
}

/// Slot names appearing as `{name}` in a pattern.
fn slots(pattern: &str) -> Vec<&str> {
    let mut found = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        let tail = &rest[open + 1..];
        match tail.find('}') {
            Some(close) => {
                found.push(&tail[..close]);
                rest = &tail[close + 1..];
            }
            None => break,
        }
    }
    found
}
