//! Synthetic task suite and toy corpus for desk-scale experiments.
//!
//! Three proposition datasets share one keyword world: topic keywords
//! grouped into four categories, a sentiment lexicon split by polarity, and
//! keyword-sentence pairs that match when they draw from the same category.
//! The toy corpus states every word-to-label association in the same "points
//! to" phrasing the proposition prompts use, which is what lets a model
//! judge a task it never saw in teacher training. Held-out instances are
//! fresh draws from the same word pools, rejection-sampled so no body is
//! string-identical to a training body: evaluation measures generalization
//! to unseen combinations, not unseen vocabulary.

use crate::error::{Error, Result};
use crate::seeds;
use crate::unify::{Dataset, RawExample, TaskKind, Template};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

pub const TOPICS: [(&str, [&str; 6]); 4] = [
    ("weather", ["rain", "snow", "wind", "storm", "cloud", "frost"]),
    ("sport", ["goal", "race", "team", "coach", "medal", "court"]),
    ("food", ["bread", "soup", "cheese", "apple", "honey", "stew"]),
    ("music", ["drum", "song", "violin", "chorus", "melody", "flute"]),
];

pub const MOODS: [(&str, [&str; 8]); 2] = [
    ("positive", ["good", "happy", "bright", "kind", "warm", "lucky", "sweet", "calm"]),
    ("negative", ["bad", "sad", "gloomy", "cruel", "cold", "bitter", "angry", "rough"]),
];

pub const TOPIC_DATASET: &str = "keyword-topic";
pub const MOOD_DATASET: &str = "lexicon-sentiment";
pub const PAIR_DATASET: &str = "pair-match";

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub seed: u64,
    pub train_per_dataset: usize,
    pub eval_per_dataset: usize,
    pub narrative_sentences: usize,
    /// How many times each knowledge sentence recurs in the corpus.
    pub knowledge_repeats: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            seed: 0,
            train_per_dataset: 400,
            eval_per_dataset: 100,
            narrative_sentences: 300,
            knowledge_repeats: 3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthBundle {
    pub datasets: Vec<Dataset>,
    pub train: BTreeMap<String, Vec<RawExample>>,
    pub eval: BTreeMap<String, Vec<RawExample>>,
    pub corpus: Vec<String>,
    pub eval_corpus: Vec<String>,
}

impl SynthBundle {
    pub fn train_sets(&self) -> Vec<(Dataset, Vec<RawExample>)> {
        self.sets(&self.train)
    }

    pub fn eval_sets(&self) -> Vec<(Dataset, Vec<RawExample>)> {
        self.sets(&self.eval)
    }

    fn sets(&self, split: &BTreeMap<String, Vec<RawExample>>) -> Vec<(Dataset, Vec<RawExample>)> {
        self.datasets
            .iter()
            .map(|d| (d.clone(), split.get(&d.id).cloned().unwrap_or_default()))
            .collect()
    }

    /// Sentences joined into one stream with end-of-text markers.
    pub fn corpus_text(&self) -> String {
        join_stream(&self.corpus)
    }

    pub fn eval_corpus_text(&self) -> String {
        join_stream(&self.eval_corpus)
    }
}

fn join_stream(sentences: &[String]) -> String {
    sentences.join(" [eos] ")
}

fn identity_desc(labels: &[&str]) -> BTreeMap<String, String> {
    labels.iter().map(|l| (l.to_string(), l.to_string())).collect()
}

fn template(id: u32, pattern: &str, labels: &[&str]) -> Template {
    Template { id, pattern: pattern.into(), label_desc: identity_desc(labels) }
}

pub fn registry() -> Vec<Dataset> {
    let topic_labels: Vec<&str> = TOPICS.iter().map(|(t, _)| *t).collect();
    let mood_labels: Vec<&str> = MOODS.iter().map(|(m, _)| *m).collect();
    // keyword-topic and lexicon-sentiment share their prompt frames on
    // purpose: a claim about a held-out task then differs from trained
    // claims only in the asserted label word, so the judgment circuit
    // learned on one task applies verbatim to the other.
    let shared = |labels: &[&str]| {
        vec![
            template(0, "this text points to {label_desc}", labels),
            template(1, "the signal here is {label_desc}", labels),
        ]
    };
    vec![
        Dataset {
            id: TOPIC_DATASET.into(),
            task: "Topic Classification".into(),
            kind: TaskKind::SingleText,
            labels: topic_labels.iter().map(|s| s.to_string()).collect(),
            file: None,
            templates: shared(&topic_labels),
        },
        Dataset {
            id: MOOD_DATASET.into(),
            task: "Sentiment Classification".into(),
            kind: TaskKind::SingleText,
            labels: mood_labels.iter().map(|s| s.to_string()).collect(),
            file: None,
            templates: shared(&mood_labels),
        },
        Dataset {
            id: PAIR_DATASET.into(),
            task: "Paraphrase".into(),
            kind: TaskKind::TextPair,
            labels: vec!["related".into(), "unrelated".into()],
            file: None,
            templates: vec![
                Template {
                    id: 0,
                    pattern: "both texts point to {label_desc}".into(),
                    label_desc: BTreeMap::from([
                        ("related".into(), "one topic".into()),
                        ("unrelated".into(), "different topics".into()),
                    ]),
                },
                template(1, "the texts are {label_desc}", &["related", "unrelated"]),
            ],
        },
    ]
}

fn body(rng: &mut ChaCha8Rng, words: &[&str]) -> String {
    let (a, b, c) = (words[0], words[1], words[2]);
    match rng.gen_range(0..4) {
        0 => format!("notes on {a} , {b} and {c}"),
        1 => format!("the piece covers {a} , {b} and {c}"),
        2 => format!("{a} then {b} then {c}"),
        _ => format!("a report on {a} and {b} with {c}"),
    }
}

fn sample_words<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str], n: usize) -> Vec<&'a str> {
    let mut picked: Vec<&str> = pool.to_vec();
    picked.shuffle(rng);
    picked.truncate(n);
    picked
}

/// Keyword sentence for a topic. Half the time the topic's label word itself
/// appears among the keywords, so the claim can be checked either by literal
/// match or by knowing which category the keywords belong to.
/// Half the bodies state their label word outright; the other half carry
/// pool words only. The literal half teaches a claim-word-in-body circuit
/// that carries over to tasks whose labels were never judged in training.
fn hedged_body(rng: &mut ChaCha8Rng, label: &'static str, pool: &[&'static str]) -> String {
    let mut words = if rng.gen_bool(0.5) {
        let mut w = sample_words(rng, pool, 2);
        w.push(label);
        w
    } else {
        sample_words(rng, pool, 3)
    };
    words.shuffle(rng);
    body(rng, &words)
}

fn topic_body(rng: &mut ChaCha8Rng, topic: usize) -> String {
    let (label, keywords) = TOPICS[topic];
    hedged_body(rng, label, &keywords)
}

fn mood_body(rng: &mut ChaCha8Rng, mood: usize) -> String {
    let (label, words) = MOODS[mood];
    hedged_body(rng, label, &words)
}

fn pool_body(rng: &mut ChaCha8Rng, topic: usize) -> String {
    let words = sample_words(rng, &TOPICS[topic].1, 3);
    body(rng, &words)
}

/// Two texts for the pair task. Related texts come from one topic pool and
/// always share a word, so relatedness shows both as literal overlap and as
/// pool membership; unrelated texts draw from two different pools and never
/// overlap.
fn pair_texts(rng: &mut ChaCha8Rng, related: bool) -> (String, String) {
    let first = rng.gen_range(0..TOPICS.len());
    let words1 = sample_words(rng, &TOPICS[first].1, 3);
    let words2 = if related {
        let shared = words1[rng.gen_range(0..words1.len())];
        let rest: Vec<&'static str> =
            TOPICS[first].1.iter().copied().filter(|w| *w != shared).collect();
        let mut w = sample_words(rng, &rest, 2);
        w.push(shared);
        w.shuffle(rng);
        w
    } else {
        let second = (first + rng.gen_range(1..TOPICS.len())) % TOPICS.len();
        sample_words(rng, &TOPICS[second].1, 3)
    };
    (body(rng, &words1), body(rng, &words2))
}

/// Bodies already used by the training split; held-out instances must not
/// collide with any of them.
type Seen = BTreeSet<String>;

fn keyed(text: &str, text2: Option<&str>) -> String {
    match text2 {
        Some(t2) => format!("{text}\x1f{t2}"),
        None => text.to_string(),
    }
}

/// Draws until the body avoids `taken`, or errors once the instance space is
/// clearly exhausted (only reachable with outsized per-dataset counts).
fn fresh<F: FnMut(&mut ChaCha8Rng) -> (String, Option<String>)>(
    rng: &mut ChaCha8Rng,
    taken: Option<&Seen>,
    mut draw: F,
) -> Result<(String, Option<String>)> {
    for _ in 0..1000 {
        let (text, text2) = draw(rng);
        if taken.is_none_or(|seen| !seen.contains(&keyed(&text, text2.as_deref()))) {
            return Ok((text, text2));
        }
    }
    Err(Error::Config(
        "synthetic instance space exhausted; lower train_per_dataset or eval_per_dataset".into(),
    ))
}

fn topic_examples(
    rng: &mut ChaCha8Rng,
    n: usize,
    tag: &str,
    taken: Option<&Seen>,
    seen: &mut Seen,
) -> Result<Vec<RawExample>> {
    (0..n)
        .map(|i| {
            let topic = i % TOPICS.len();
            let (text, _) = fresh(rng, taken, |rng| (topic_body(rng, topic), None))?;
            seen.insert(keyed(&text, None));
            Ok(RawExample {
                id: format!("{TOPIC_DATASET}-{tag}-{i:05}"),
                text: Some(text),
                text2: None,
                choices: Vec::new(),
                label: Some(TOPICS[topic].0.into()),
                answer: None,
            })
        })
        .collect()
}

fn mood_examples(
    rng: &mut ChaCha8Rng,
    n: usize,
    tag: &str,
    taken: Option<&Seen>,
    seen: &mut Seen,
) -> Result<Vec<RawExample>> {
    (0..n)
        .map(|i| {
            let mood = i % MOODS.len();
            let (text, _) = fresh(rng, taken, |rng| (mood_body(rng, mood), None))?;
            seen.insert(keyed(&text, None));
            Ok(RawExample {
                id: format!("{MOOD_DATASET}-{tag}-{i:05}"),
                text: Some(text),
                text2: None,
                choices: Vec::new(),
                label: Some(MOODS[mood].0.into()),
                answer: None,
            })
        })
        .collect()
}

fn pair_examples(
    rng: &mut ChaCha8Rng,
    n: usize,
    tag: &str,
    taken: Option<&Seen>,
    seen: &mut Seen,
) -> Result<Vec<RawExample>> {
    (0..n)
        .map(|i| {
            let related = i % 2 == 0;
            let (text, text2) = fresh(rng, taken, |rng| {
                let (a, b) = pair_texts(rng, related);
                (a, Some(b))
            })?;
            seen.insert(keyed(&text, text2.as_deref()));
            Ok(RawExample {
                id: format!("{PAIR_DATASET}-{tag}-{i:05}"),
                text: Some(text),
                text2,
                choices: Vec::new(),
                label: Some(if related { "related".into() } else { "unrelated".into() }),
                answer: None,
            })
        })
        .collect()
}

/// Every word-to-label fact, phrased exactly like the proposition prompts
/// ("... points to ..."), plus same/different-topic statements echoing the
/// pair-match prompt.
fn knowledge_sentences(rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut out = Vec::new();
    for (topic, keywords) in TOPICS {
        for kw in keywords {
            out.push(format!("{kw} points to {topic}"));
        }
    }
    for (mood, words) in MOODS {
        for word in words {
            out.push(format!("{word} points to {mood}"));
        }
    }
    for (t, (_, keywords)) in TOPICS.iter().enumerate() {
        for (i, k1) in keywords.iter().enumerate() {
            for k2 in &keywords[i + 1..] {
                out.push(format!("{k1} and {k2} point to one topic"));
            }
            let other = (t + 1 + rng.gen_range(0..TOPICS.len() - 1)) % TOPICS.len();
            let k2 = TOPICS[other].1[rng.gen_range(0..TOPICS[other].1.len())];
            out.push(format!("{k1} and {k2} point to different topics"));
        }
    }
    out
}

fn narrative(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n)
        .map(|_| {
            let form = rng.gen_range(0..3);
            let topic = rng.gen_range(0..TOPICS.len());
            let mood = rng.gen_range(0..MOODS.len());
            match form {
                0 => topic_body(rng, topic),
                1 => mood_body(rng, mood),
                _ => pool_body(rng, topic),
            }
        })
        .collect()
}

pub fn generate(options: &SynthOptions) -> Result<SynthBundle> {
    let datasets = registry();
    let mut train = BTreeMap::new();
    let mut eval = BTreeMap::new();
    let mut seen = Seen::new();

    let mut rng = seeds::rng_from(seeds::derive_seed(options.seed, "synth-train"));
    let n = options.train_per_dataset;
    train.insert(
        TOPIC_DATASET.to_string(),
        topic_examples(&mut rng, n, "train", None, &mut seen)?,
    );
    train.insert(MOOD_DATASET.to_string(), mood_examples(&mut rng, n, "train", None, &mut seen)?);
    train.insert(PAIR_DATASET.to_string(), pair_examples(&mut rng, n, "train", None, &mut seen)?);

    let mut rng = seeds::rng_from(seeds::derive_seed(options.seed, "synth-eval"));
    let n = options.eval_per_dataset;
    let taken = seen.clone();
    eval.insert(
        TOPIC_DATASET.to_string(),
        topic_examples(&mut rng, n, "eval", Some(&taken), &mut seen)?,
    );
    eval.insert(
        MOOD_DATASET.to_string(),
        mood_examples(&mut rng, n, "eval", Some(&taken), &mut seen)?,
    );
    eval.insert(
        PAIR_DATASET.to_string(),
        pair_examples(&mut rng, n, "eval", Some(&taken), &mut seen)?,
    );

    let mut rng = seeds::rng_from(seeds::derive_seed(options.seed, "synth-corpus"));
    let knowledge = knowledge_sentences(&mut rng);
    let mut corpus = Vec::new();
    for _ in 0..options.knowledge_repeats.max(1) {
        corpus.extend(knowledge.iter().cloned());
    }
    corpus.extend(narrative(&mut rng, options.narrative_sentences));
    corpus.shuffle(&mut rng);

    let mut rng = seeds::rng_from(seeds::derive_seed(options.seed, "synth-eval-corpus"));
    let train_lines: BTreeSet<&String> = corpus.iter().collect();
    let mut eval_corpus = Vec::new();
    for _ in 0..options.narrative_sentences / 4 + 20 {
        let mut line = narrative(&mut rng, 1).remove(0);
        for _ in 0..1000 {
            if !train_lines.contains(&line) {
                break;
            }
            line = narrative(&mut rng, 1).remove(0);
        }
        if train_lines.contains(&line) {
            return Err(Error::Config(
                "synthetic corpus space exhausted; lower narrative_sentences".into(),
            ));
        }
        eval_corpus.push(line);
    }

    Ok(SynthBundle { datasets, train, eval, corpus, eval_corpus })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{Vocab, VocabMode, UNK};
    use crate::unify::{build_unified, make_pair, parse_proposition, UnifyOptions};

    fn small() -> SynthOptions {
        SynthOptions {
            seed: 1,
            train_per_dataset: 40,
            eval_per_dataset: 12,
            narrative_sentences: 30,
            knowledge_repeats: 1,
        }
    }

    #[test]
    fn every_example_yields_a_balanced_pair() {
        let bundle = generate(&small()).unwrap();
        for (dataset, examples) in bundle.train_sets().iter().chain(&bundle.eval_sets()) {
            assert!(!examples.is_empty());
            for example in examples {
                let (pos, neg) = make_pair(dataset, example, 0, true)
                    .unwrap()
                    .expect("no singleton examples in synthetic data");
                assert!(pos.label);
                assert!(!neg.label);
                parse_proposition(&pos.text).unwrap();
                parse_proposition(&neg.text).unwrap();
            }
        }
    }

    #[test]
    fn training_vocabulary_covers_held_out_data_within_budget() {
        let bundle = generate(&SynthOptions::default()).unwrap();
        let (samples, _) =
            build_unified(&bundle.train_sets(), UnifyOptions { seed: 0, ..Default::default() })
                .unwrap();
        let (eval_samples, _) =
            build_unified(&bundle.eval_sets(), UnifyOptions { seed: 1, ..Default::default() })
                .unwrap();
        // The vocabulary sees only training-side text; held-out sentences
        // must still encode without unknowns.
        let mut text = bundle.corpus_text();
        for s in &samples {
            text.push(' ');
            text.push_str(&s.text);
        }
        let vocab = Vocab::build(&text, VocabMode::Word, 512).unwrap();
        assert!(vocab.size() <= 512, "vocab {} exceeds budget", vocab.size());
        for s in samples.iter().chain(&eval_samples) {
            assert!(!vocab.encode(&s.text).contains(&UNK), "unk in {}", s.text);
        }
        assert!(!vocab.encode(&bundle.eval_corpus_text()).contains(&UNK));
    }

    #[test]
    fn eval_sentences_never_appear_in_training_data() {
        let bundle = generate(&small()).unwrap();
        let mut train_bodies = Seen::new();
        for examples in bundle.train.values() {
            for e in examples {
                train_bodies.insert(keyed(e.text.as_ref().unwrap(), e.text2.as_deref()));
            }
        }
        for examples in bundle.eval.values() {
            for e in examples {
                let key = keyed(e.text.as_ref().unwrap(), e.text2.as_deref());
                assert!(!train_bodies.contains(&key), "leaked: {key}");
            }
        }
        let corpus: BTreeSet<&String> = bundle.corpus.iter().collect();
        for sentence in &bundle.eval_corpus {
            assert!(!corpus.contains(sentence), "eval corpus leak: {sentence}");
        }
    }

    #[test]
    fn corpus_teaches_all_three_association_kinds() {
        let bundle = generate(&small()).unwrap();
        let joined = bundle.corpus.join("\n");
        assert!(joined.contains("points to weather"));
        assert!(joined.contains("points to positive"));
        assert!(joined.contains("point to one topic"));
        assert!(joined.contains("point to different topics"));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.eval_corpus, b.eval_corpus);
        let ser = |m: &BTreeMap<String, Vec<RawExample>>| serde_json::to_string(m).unwrap();
        assert_eq!(ser(&a.train), ser(&b.train));
        assert_eq!(ser(&a.eval), ser(&b.eval));
    }

    #[test]
    fn pair_labels_track_topic_agreement() {
        let bundle = generate(&small()).unwrap();
        let kw_topic: BTreeMap<&str, &str> = TOPICS
            .iter()
            .flat_map(|(t, kws)| kws.iter().map(move |k| (*k, *t)))
            .collect();
        let find_topic = |sentence: &str| {
            sentence
                .split(' ')
                .find_map(|w| kw_topic.get(w))
                .copied()
                .expect("sentence must contain a topic keyword")
        };
        fn keywords<'a>(sentence: &'a str, map: &BTreeMap<&str, &str>) -> BTreeSet<&'a str> {
            sentence.split(' ').filter(|w| map.contains_key(w)).collect()
        }
        for e in &bundle.train[PAIR_DATASET] {
            let t1 = find_topic(e.text.as_ref().unwrap());
            let t2 = find_topic(e.text2.as_ref().unwrap());
            let want = if t1 == t2 { "related" } else { "unrelated" };
            assert_eq!(e.label.as_deref(), Some(want));
            let shared = keywords(e.text.as_ref().unwrap(), &kw_topic)
                .intersection(&keywords(e.text2.as_ref().unwrap(), &kw_topic))
                .count();
            match e.label.as_deref() {
                Some("related") => assert!(shared >= 1, "related texts must share a word"),
                _ => assert_eq!(shared, 0, "unrelated texts must not share words"),
            }
        }
    }

    #[test]
    fn bodies_sometimes_state_their_label() {
        let bundle = generate(&small()).unwrap();
        for dataset in [TOPIC_DATASET, MOOD_DATASET] {
            let (with, without): (Vec<_>, Vec<_>) =
                bundle.train[dataset].iter().partition(|e| {
                    let label = e.label.as_deref().unwrap();
                    e.text.as_ref().unwrap().split(' ').any(|w| w == label)
                });
            // The literal cue must be present but not universal, so the claim
            // stays checkable both by matching and by category knowledge.
            assert!(with.len() >= 5, "{dataset}: label word should appear in some bodies");
            assert!(without.len() >= 5, "{dataset}: label word should be absent from some bodies");
        }
    }
}
