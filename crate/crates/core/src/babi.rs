//! bAbI question answering ingest for joint training over all 20 tasks.
//!
//! Text is lowercased, periods and question marks are dropped, and words are
//! split on whitespace. Each question is paired with the story sentences that
//! precede it, newest last. Answers are single labels even when they contain
//! commas. Id 0 is the padding token; words take ids from 1 in sorted order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::input::{Example, ItemGrid, QueryInput, NULL_TOKEN};
use crate::par::{self, Exec};
use crate::tasks::{entry_seed, Feed, Predictor};

pub const MAX_SENTENCE: usize = 11;
pub const MAX_STORIES: usize = 320;
pub const TASKS: usize = 20;
pub const BATCH: usize = 128;
pub const EVAL_BATCH: usize = 10_000;
pub const SOLVED_THRESHOLD: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BabiExample {
    pub task: u8,
    /// Up to [`MAX_STORIES`] sentences of up to [`MAX_SENTENCE`] ids.
    pub story: Vec<Vec<u32>>,
    pub query: Vec<u32>,
    pub answer: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BabiCorpus {
    /// Word for id `i + 1`.
    pub words: Vec<String>,
    pub train: Vec<BabiExample>,
    pub test: Vec<BabiExample>,
    /// Sentences cut to [`MAX_SENTENCE`] words.
    pub truncated_sentences: usize,
    /// Oldest sentences dropped to fit [`MAX_STORIES`].
    pub dropped_sentences: usize,
}

impl BabiCorpus {
    /// Distinct words, padding excluded.
    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    /// Model token space: the words plus the padding id.
    pub fn token_space(&self) -> usize {
        self.words.len() + 1
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.words
            .binary_search_by(|w| w.as_str().cmp(word))
            .ok()
            .map(|i| i as u32 + 1)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        (id != NULL_TOKEN).then(|| self.words.get(id as usize - 1).map(String::as_str))?
    }

    /// Space-joined words of a padded id sequence.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter_map(|&i| self.word(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Lowercase, drop `.` and `?`, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .replace(['.', '?'], " ")
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

struct RawExample {
    task: u8,
    story: Vec<Vec<String>>,
    query: Vec<String>,
    answer: String,
}

fn parse_file(text: &str, task: u8) -> Result<Vec<RawExample>> {
    let mut out = Vec::new();
    let mut story: Vec<Vec<String>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let (id, rest) = line
            .split_once(' ')
            .ok_or_else(|| Error::Ingestion(format!("task {task} line {}: missing id", n + 1)))?;
        let id: usize = id
            .parse()
            .map_err(|_| Error::Ingestion(format!("task {task} line {}: bad id {id:?}", n + 1)))?;
        if id == 1 {
            story.clear();
        }
        let mut fields = rest.split('\t');
        let text = fields.next().unwrap_or_default();
        match fields.next() {
            Some(answer) => out.push(RawExample {
                task,
                story: story.clone(),
                query: tokenize(text),
                answer: answer.trim().to_lowercase(),
            }),
            None => story.push(tokenize(text)),
        }
    }
    Ok(out)
}

fn task_files(dir: &Path) -> Result<BTreeMap<(u8, bool), PathBuf>> {
    let mut found = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(found);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(rest) = name.strip_prefix("qa") else {
            continue;
        };
        let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
        let Ok(task) = digits.parse::<u8>() else {
            continue;
        };
        if name.ends_with("_train.txt") {
            found.insert((task, true), path);
        } else if name.ends_with("_test.txt") {
            found.insert((task, false), path);
        }
    }
    Ok(found)
}

/// Reads `qa{1..20}_*_{train,test}.txt` from `dir`.
pub fn parse_babi(dir: &Path) -> Result<BabiCorpus> {
    let files = task_files(dir)?;
    let missing: Vec<String> = (1..=TASKS as u8)
        .flat_map(|t| [(t, true), (t, false)])
        .filter(|k| !files.contains_key(k))
        .map(|(t, train)| format!("qa{t} {}", if train { "train" } else { "test" }))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Ingestion(format!(
            "missing task files in {}: {}",
            dir.display(),
            missing.join(", ")
        )));
    }
    let mut raw_train = Vec::new();
    let mut raw_test = Vec::new();
    for (&(task, train), path) in &files {
        if task as usize > TASKS || task == 0 {
            continue;
        }
        let parsed = parse_file(&fs::read_to_string(path)?, task)?;
        if train {
            raw_train.extend(parsed);
        } else {
            raw_test.extend(parsed);
        }
    }
    Ok(build_corpus(raw_train, raw_test))
}

fn build_corpus(raw_train: Vec<RawExample>, raw_test: Vec<RawExample>) -> BabiCorpus {
    let mut vocab = BTreeSet::new();
    for ex in raw_train.iter().chain(&raw_test) {
        vocab.extend(ex.story.iter().flatten().cloned());
        vocab.extend(ex.query.iter().cloned());
        vocab.insert(ex.answer.clone());
    }
    let mut corpus = BabiCorpus {
        words: vocab.into_iter().collect(),
        ..BabiCorpus::default()
    };
    let convert = |corpus: &mut BabiCorpus, raw: Vec<RawExample>| -> Vec<BabiExample> {
        raw.into_iter()
            .map(|ex| {
                let skip = ex.story.len().saturating_sub(MAX_STORIES);
                corpus.dropped_sentences += skip;
                let story = ex.story[skip..]
                    .iter()
                    .map(|s| {
                        if s.len() > MAX_SENTENCE {
                            corpus.truncated_sentences += 1;
                        }
                        s.iter()
                            .take(MAX_SENTENCE)
                            .map(|w| corpus.id(w).expect("word in vocabulary"))
                            .collect()
                    })
                    .collect();
                if ex.query.len() > MAX_SENTENCE {
                    corpus.truncated_sentences += 1;
                }
                let mut query: Vec<u32> = ex
                    .query
                    .iter()
                    .take(MAX_SENTENCE)
                    .map(|w| corpus.id(w).expect("word in vocabulary"))
                    .collect();
                query.resize(MAX_SENTENCE, NULL_TOKEN);
                BabiExample {
                    task: ex.task,
                    story,
                    query,
                    answer: corpus.id(&ex.answer).expect("answer in vocabulary"),
                }
            })
            .collect()
    };
    corpus.train = convert(&mut corpus, raw_train);
    corpus.test = convert(&mut corpus, raw_test);
    corpus
}

/// Holds out `fraction` of each task's training examples, chosen with `seed`.
pub fn split_validation(train: &[BabiExample], fraction: f64, seed: u64) -> (Vec<BabiExample>, Vec<BabiExample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    let mut held = Vec::new();
    for task in 1..=TASKS as u8 {
        let mut idx: Vec<usize> = (0..train.len()).filter(|&i| train[i].task == task).collect();
        idx.shuffle(&mut rng);
        let n_valid = (idx.len() as f64 * fraction).round() as usize;
        let (v, t) = idx.split_at(n_valid);
        held.extend(v.iter().map(|&i| train[i].clone()));
        keep.extend(t.iter().map(|&i| train[i].clone()));
    }
    (keep, held)
}

/// `320 × 11` memory (sentences in order, then padding), `11`-token query.
pub fn to_example(ex: &BabiExample) -> Result<Example> {
    let mut ids = Vec::with_capacity(MAX_STORIES * MAX_SENTENCE);
    for s in &ex.story {
        ids.extend(s.iter().copied());
        ids.extend(std::iter::repeat(NULL_TOKEN).take(MAX_SENTENCE - s.len()));
    }
    ids.resize(MAX_STORIES * MAX_SENTENCE, NULL_TOKEN);
    Ok(Example {
        memory: ItemGrid::tokens(MAX_STORIES, MAX_SENTENCE, ids)?,
        query: QueryInput::Tokens(ex.query.clone()),
        targets: vec![ex.answer],
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BabiBatch {
    /// `batch × 11`, row-major.
    pub queries: Vec<u32>,
    /// `batch × 320 × 11`, row-major.
    pub stories: Vec<u32>,
    pub answers: Vec<u32>,
    pub tasks: Vec<u8>,
}

impl BabiBatch {
    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn query_shape(&self) -> (usize, usize) {
        (self.len(), MAX_SENTENCE)
    }

    pub fn story_shape(&self) -> (usize, usize, usize) {
        (self.len(), MAX_STORIES, MAX_SENTENCE)
    }

    pub fn example(&self, i: usize) -> Result<Example> {
        let m = MAX_STORIES * MAX_SENTENCE;
        Ok(Example {
            memory: ItemGrid::tokens(MAX_STORIES, MAX_SENTENCE, self.stories[i * m..(i + 1) * m].to_vec())?,
            query: QueryInput::Tokens(self.queries[i * MAX_SENTENCE..(i + 1) * MAX_SENTENCE].to_vec()),
            targets: vec![self.answers[i]],
        })
    }
}

/// `batch` examples drawn uniformly, with replacement, across all tasks.
pub fn batch_babi<R: Rng + ?Sized>(examples: &[BabiExample], rng: &mut R, batch: usize) -> Result<BabiBatch> {
    if examples.is_empty() {
        return Err(Error::Ingestion("no examples to batch".into()));
    }
    let mut out = BabiBatch {
        queries: Vec::with_capacity(batch * MAX_SENTENCE),
        stories: Vec::with_capacity(batch * MAX_STORIES * MAX_SENTENCE),
        answers: Vec::with_capacity(batch),
        tasks: Vec::with_capacity(batch),
    };
    for _ in 0..batch {
        let ex = &examples[rng.gen_range(0..examples.len())];
        let e = to_example(ex)?;
        let (ItemGrid::Tokens { ids, .. }, QueryInput::Tokens(q)) = (&e.memory, &e.query) else {
            unreachable!("bAbI examples are token grids");
        };
        out.stories.extend_from_slice(ids);
        out.queries.extend_from_slice(q);
        out.answers.push(ex.answer);
        out.tasks.push(ex.task);
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BabiReport {
    /// `(task, accuracy, count)` for tasks 1..=20.
    pub per_task: Vec<(u8, f64, usize)>,
    pub mean_accuracy: f64,
    pub solved: usize,
    pub mean_hops: f64,
}

pub fn evaluate(predictor: &dyn Predictor, examples: &[BabiExample], seed: u64, exec: Exec) -> Result<BabiReport> {
    let indexed: Vec<(usize, &BabiExample)> = examples.iter().enumerate().collect();
    let results = par::try_map(exec, &indexed, |(i, ex)| {
        let p = predictor.predict(&to_example(ex)?, Feed::Predicted, entry_seed(seed, *i as u64))?;
        Ok::<_, Error>((p.argmaxes()[0] == ex.answer, p.hops[0]))
    })?;
    let mut counts = [(0usize, 0usize); TASKS];
    let mut hops = 0;
    for (ex, (ok, h)) in examples.iter().zip(&results) {
        let c = &mut counts[ex.task as usize - 1];
        c.0 += usize::from(*ok);
        c.1 += 1;
        hops += h;
    }
    let per_task: Vec<(u8, f64, usize)> = counts
        .iter()
        .enumerate()
        .map(|(t, &(ok, n))| (t as u8 + 1, ok as f64 / n.max(1) as f64, n))
        .collect();
    let present: Vec<f64> = per_task.iter().filter(|t| t.2 > 0).map(|t| t.1).collect();
    Ok(BabiReport {
        mean_accuracy: present.iter().sum::<f64>() / present.len().max(1) as f64,
        solved: present.iter().filter(|&&a| a > SOLVED_THRESHOLD).count(),
        mean_hops: hops as f64 / examples.len().max(1) as f64,
        per_task,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "1 Mary moved to the bathroom.\n2 John went to the hallway.\n3 Where is Mary? \tbathroom\t1\n4 Daniel went back to the hallway.\n5 Where is Daniel? \thallway\t4\n1 The kitchen is north of the hallway.\n2 How do you go from the hallway to the kitchen?\tn,s\t1\n";

    fn write_tasks(dir: &Path, body: &str) {
        for t in 1..=TASKS {
            for split in ["train", "test"] {
                fs::write(dir.join(format!("qa{t}_task_{split}.txt")), body).unwrap();
            }
        }
    }

    #[test]
    fn tokenization_rules() {
        assert_eq!(tokenize("Where is Mary?"), vec!["where", "is", "mary"]);
        assert_eq!(tokenize("The Office."), vec!["the", "office"]);
    }

    #[test]
    fn parses_stories_and_queries() {
        let dir = tempfile::tempdir().unwrap();
        write_tasks(dir.path(), SAMPLE);
        let corpus = parse_babi(dir.path()).unwrap();
        assert_eq!(corpus.train.len(), 3 * TASKS);
        let first = corpus.train.iter().find(|e| e.task == 1).unwrap();
        assert_eq!(corpus.detokenize(&first.query), "where is mary");
        assert_eq!(first.query.len(), MAX_SENTENCE);
        assert!(first.query[3..].iter().all(|&t| t == NULL_TOKEN));
        assert_eq!(first.story.len(), 2);
        assert_eq!(corpus.detokenize(&first.story[0]), "mary moved to the bathroom");
        assert_eq!(corpus.word(first.answer), Some("bathroom"));
        let second = &corpus.train[1];
        assert_eq!(second.story.len(), 3);
        let third = &corpus.train[2];
        assert_eq!(third.story.len(), 1);
        assert_eq!(corpus.word(third.answer), Some("n,s"));
        assert!(corpus.id("n,s").is_some());
        assert_ne!(corpus.id("n,s"), corpus.id("n"));
        assert!(corpus.words.iter().all(|w| w.chars().all(|c| c != '.' && c != '?')));
    }

    #[test]
    fn missing_tasks_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("qa1_x_train.txt"), SAMPLE).unwrap();
        let err = parse_babi(dir.path()).unwrap_err().to_string();
        assert!(err.contains("qa1 test") && err.contains("qa20 train"), "{err}");
    }

    #[test]
    fn batches_have_published_shapes() {
        let dir = tempfile::tempdir().unwrap();
        write_tasks(dir.path(), SAMPLE);
        let corpus = parse_babi(dir.path()).unwrap();
        let a = batch_babi(&corpus.train, &mut ChaCha8Rng::seed_from_u64(1), BATCH).unwrap();
        let b = batch_babi(&corpus.train, &mut ChaCha8Rng::seed_from_u64(1), BATCH).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.query_shape(), (128, 11));
        assert_eq!(a.story_shape(), (128, 320, 11));
        assert_eq!(a.queries.len(), 128 * 11);
        assert_eq!(a.stories.len(), 128 * 320 * 11);
        let ex = a.example(5).unwrap();
        assert_eq!((ex.memory.rows(), ex.memory.cols()), (320, 11));
        assert!(a.answers.iter().all(|&x| x != NULL_TOKEN && (x as usize) <= corpus.vocab_size()));
    }

    #[test]
    fn long_stories_keep_the_newest_sentences() {
        let mut text = String::new();
        for i in 1..=330 {
            text.push_str(&format!("{i} w{i}.\n"));
        }
        text.push_str("331 q?\tw330\t330\n");
        let raw = parse_file(&text, 1).unwrap();
        let corpus = build_corpus(raw, Vec::new());
        let ex = &corpus.train[0];
        assert_eq!(ex.story.len(), MAX_STORIES);
        assert_eq!(corpus.dropped_sentences, 10);
        assert_eq!(corpus.detokenize(&ex.story[0]), "w11");
    }

    #[test]
    fn validation_split_is_per_task() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::new();
        for _ in 0..10 {
            body.push_str(SAMPLE);
        }
        write_tasks(dir.path(), &body);
        let corpus = parse_babi(dir.path()).unwrap();
        let (train, valid) = split_validation(&corpus.train, 0.1, 3);
        assert_eq!(valid.len(), 3 * TASKS);
        assert_eq!(train.len() + valid.len(), corpus.train.len());
        for t in 1..=TASKS as u8 {
            assert_eq!(valid.iter().filter(|e| e.task == t).count(), 3);
        }
    }
}
