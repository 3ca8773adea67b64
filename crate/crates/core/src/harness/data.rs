use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::babi::{self, BabiExample};
use crate::error::{Error, Result};
use crate::input::Example;
use crate::par::{self, Exec};
use crate::tasks::graph::{self, GraphConfig};
use crate::tasks::pai::{self, PaiConfig, Split};
use crate::tasks::{entry_seed, Feed, Predictor};

use super::config::{RunConfig, TaskConfig};

/// Which held-out data an evaluation uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Valid,
    Test,
}

impl EvalSplit {
    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::Valid => "valid",
            EvalSplit::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            EvalSplit::Valid => 0x7A11D,
            EvalSplit::Test => 0x7E57,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: EvalSplit,
    /// Teacher-forced cross entropy per answer.
    pub loss: f64,
    pub mean_hops: f64,
    pub accuracy: BTreeMap<String, f64>,
    /// Task-specific report.
    pub detail: serde_json::Value,
}

/// Training and evaluation data for one task.
#[derive(Clone, Debug)]
pub enum TaskData {
    Pai(PaiConfig),
    Graph(GraphConfig),
    Babi {
        tokens: usize,
        train: Vec<BabiExample>,
        valid: Vec<BabiExample>,
        test: Vec<BabiExample>,
    },
}

impl TaskData {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        Ok(match &cfg.task {
            TaskConfig::Pai(p) => TaskData::Pai(p.clone()),
            TaskConfig::Graph(g) => TaskData::Graph(g.clone()),
            TaskConfig::Babi(b) => {
                let corpus = babi::parse_babi(&b.resolved_path())?;
                let (train, valid) = babi::split_validation(&corpus.train, b.validation_fraction, cfg.seed);
                TaskData::Babi {
                    tokens: corpus.token_space(),
                    train,
                    valid,
                    test: corpus.test,
                }
            }
        })
    }

    pub fn babi_tokens(&self) -> Option<usize> {
        match self {
            TaskData::Babi { tokens, .. } => Some(*tokens),
            _ => None,
        }
    }

    /// A training batch drawn from `rng`.
    pub fn train_batch(&self, rng: &mut ChaCha8Rng, batch: usize) -> Result<Vec<Example>> {
        match self {
            TaskData::Pai(cfg) => Ok(pai::sample_batch(cfg, Split::Train, rng, batch)?
                .into_iter()
                .map(|e| e.example)
                .collect()),
            TaskData::Graph(cfg) => (0..batch)
                .map(|_| graph::encode_instance(&graph::generate_graph(cfg, rng)?, cfg))
                .collect(),
            TaskData::Babi { train, .. } => {
                let b = babi::batch_babi(train, rng, batch)?;
                (0..b.len()).map(|i| b.example(i)).collect()
            }
        }
    }

    /// Held-out examples for the loss pass; identical on every call.
    fn held_out(&self, split: EvalSplit, n: usize, seed: u64) -> Result<Vec<Example>> {
        let mut rng = ChaCha8Rng::seed_from_u64(entry_seed(seed, split.stream()));
        match self {
            TaskData::Pai(cfg) => {
                let s = match split {
                    EvalSplit::Valid => Split::Valid,
                    EvalSplit::Test => Split::Test,
                };
                Ok(pai::sample_batch(cfg, s, &mut rng, n + n % 2)?
                    .into_iter()
                    .map(|e| e.example)
                    .collect())
            }
            TaskData::Graph(_) => self.train_batch(&mut rng, n),
            TaskData::Babi { valid, test, .. } => {
                let src = match split {
                    EvalSplit::Valid => valid,
                    EvalSplit::Test => test,
                };
                src.iter().take(n).map(babi::to_example).collect()
            }
        }
    }

    pub fn evaluate(
        &self,
        predictor: &dyn Predictor,
        split: EvalSplit,
        n: usize,
        seed: u64,
        exec: Exec,
    ) -> Result<EvalReport> {
        if n == 0 {
            return Err(Error::Config("evaluation needs at least one item".into()));
        }
        let loss = teacher_forced_loss(predictor, &self.held_out(split, n, seed)?, seed, exec)?;
        let eval_seed = entry_seed(seed, split.stream() + 1);
        let mut accuracy = BTreeMap::new();
        let (mean_hops, detail) = match self {
            TaskData::Pai(cfg) => {
                let s = match split {
                    EvalSplit::Valid => Split::Valid,
                    EvalSplit::Test => Split::Test,
                };
                let r = pai::evaluate(predictor, cfg, s, n, eval_seed, exec)?;
                for t in r.by_type.iter().chain([&r.direct, &r.indirect, &r.overall]) {
                    accuracy.insert(t.label.clone(), t.accuracy);
                    accuracy.insert(format!("{}/match_vs_lure", t.label), t.match_vs_lure);
                }
                (r.overall.mean_hops, serde_json::to_value(&r)?)
            }
            TaskData::Graph(cfg) => {
                let mut reports = Vec::new();
                for feed in [Feed::Predicted, Feed::GroundTruth] {
                    let r = graph::evaluate_path_accuracy(predictor, cfg, n, feed, eval_seed, exec)?;
                    let tag = match feed {
                        Feed::Predicted => "predicted",
                        Feed::GroundTruth => "ground_truth",
                    };
                    for (k, (a, v)) in r.node_accuracy.iter().zip(&r.any_valid_accuracy).enumerate() {
                        accuracy.insert(format!("{tag}/node{}", k + 1), *a);
                        accuracy.insert(format!("{tag}/node{}/any_shortest", k + 1), *v);
                    }
                    reports.push(r);
                }
                let hops = &reports[0].mean_hops;
                (hops.iter().sum::<f64>() / hops.len().max(1) as f64, serde_json::to_value(&reports)?)
            }
            TaskData::Babi { valid, test, .. } => {
                let src = match split {
                    EvalSplit::Valid => &valid[..valid.len().min(n)],
                    EvalSplit::Test => &test[..],
                };
                let r = babi::evaluate(predictor, src, eval_seed, exec)?;
                for (t, acc, count) in &r.per_task {
                    if *count > 0 {
                        accuracy.insert(format!("task{t:02}"), *acc);
                    }
                }
                accuracy.insert("mean".into(), r.mean_accuracy);
                accuracy.insert("solved".into(), r.solved as f64);
                (r.mean_hops, serde_json::to_value(&r)?)
            }
        };
        Ok(EvalReport {
            split,
            loss,
            mean_hops,
            accuracy,
            detail,
        })
    }
}

/// Mean `-ln p[target]` per answer with ground-truth feeding.
pub fn teacher_forced_loss(predictor: &dyn Predictor, examples: &[Example], seed: u64, exec: Exec) -> Result<f64> {
    let sums = par::try_fold_chunks(
        exec,
        examples,
        |i, ex| {
            let p = predictor.predict(ex, Feed::GroundTruth, entry_seed(seed, i as u64))?;
            let mut s = 0.0;
            for (d, &t) in p.distributions.iter().zip(&ex.targets) {
                let q = *d.get(t as usize).ok_or(Error::Index {
                    index: t as usize,
                    len: d.len(),
                })?;
                s += -q.max(crate::autodiff::LOG_CLAMP).ln();
            }
            Ok::<_, Error>((s, p.distributions.len()))
        },
        |a, b| (a.0 + b.0, a.1 + b.1),
    )?;
    let (s, n) = sums.unwrap_or((0.0, 0));
    Ok(s / n.max(1) as f64)
}
