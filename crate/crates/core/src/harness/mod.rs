//! Training loop, checkpoints, and evaluation reports.
//!
//! Every source of randomness in a step is derived from `(seed, step)`, so a
//! run resumed from a checkpoint replays exactly what an uninterrupted run
//! would have done.

pub mod config;
pub mod data;
pub mod learner;
pub mod metrics;
mod report;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{ModelKind, RunConfig, TaskConfig};
pub use data::{EvalReport, EvalSplit, TaskData};
pub use learner::{ExampleOutcome, Learner, Net};
pub use metrics::{MetricsRecord, MetricsWriter};
pub use report::format_report;

use crate::error::{Error, Result};
use crate::optim::{Adam, PolyDecay, RmsProp};
use crate::params::Grads;
use crate::par;
use crate::store::{self, Blocks};
use crate::tasks::entry_seed;

const INIT_STREAM: u64 = 0x1417;
const DATA_STREAM: u64 = 0xDA7A;
const NOISE_STREAM: u64 = 0x0153;
const FORMAT_VERSION: u32 = 1;

/// Summed gradients and statistics of one batch.
#[derive(Clone, Debug)]
pub struct BatchOutcome {
    pub model: Option<Grads>,
    pub policy: Option<Grads>,
    pub examples: usize,
    pub task_loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub hop_loss: f64,
    pub hops: usize,
    pub answers: usize,
    pub correct: usize,
}

impl BatchOutcome {
    fn from_example(e: ExampleOutcome) -> Self {
        BatchOutcome {
            model: e.model,
            policy: e.policy,
            examples: 1,
            task_loss: e.task_loss,
            policy_loss: e.policy_loss,
            value_loss: e.value_loss,
            hop_loss: e.hop_loss,
            hops: e.hops,
            answers: e.answers,
            correct: e.correct,
        }
    }

    fn merge(mut self, other: BatchOutcome) -> Self {
        fn add(a: Option<Grads>, b: Option<Grads>) -> Option<Grads> {
            match (a, b) {
                (Some(mut a), Some(b)) => {
                    a.add_assign(&b);
                    Some(a)
                }
                (a, b) => a.or(b),
            }
        }
        self.model = add(self.model, other.model);
        self.policy = add(self.policy, other.policy);
        self.examples += other.examples;
        self.task_loss += other.task_loss;
        self.policy_loss += other.policy_loss;
        self.value_loss += other.value_loss;
        self.hop_loss += other.hop_loss;
        self.hops += other.hops;
        self.answers += other.answers;
        self.correct += other.correct;
        self
    }

    pub fn mean_hops(&self) -> f64 {
        self.hops as f64 / self.answers.max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: RunConfig,
    pub step: u64,
    /// The per-step generators are derived from this seed and `step`.
    pub rng_seed: u64,
    pub adam_step: u64,
    pub rmsprop_step: u64,
    pub best_valid_loss: Option<f64>,
    pub babi_tokens: Option<usize>,
    pub has_policy: bool,
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub data: TaskData,
    pub learner: Learner,
    pub adam: Adam,
    pub rmsprop: Option<RmsProp>,
    pub step: u64,
    pub best_valid_loss: Option<f64>,
    /// Skip model updates (policy-only training).
    pub freeze_model: bool,
    /// Skip policy updates.
    pub freeze_policy: bool,
}

/// What [`Trainer::run`] did.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub steps: u64,
    pub last_valid: Option<EvalReport>,
    pub test: Option<EvalReport>,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let data = TaskData::load(&cfg)?;
        Self::with_data(cfg, data)
    }

    pub fn with_data(cfg: RunConfig, data: TaskData) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(entry_seed(cfg.seed, INIT_STREAM));
        let learner = Learner::new(&cfg, data.babi_tokens(), &mut rng)?;
        let adam = Adam::new(cfg.adam.clone(), learner.net.params());
        let rmsprop = learner
            .policy
            .as_ref()
            .map(|p| RmsProp::new(cfg.rmsprop.clone(), &p.params));
        Ok(Trainer {
            cfg,
            data,
            learner,
            adam,
            rmsprop,
            step: 0,
            best_valid_loss: None,
            freeze_model: false,
            freeze_policy: false,
        })
    }

    pub fn schedule(&self) -> PolyDecay {
        PolyDecay {
            start: self.cfg.lr_model,
            total: self.cfg.total_updates(),
            power: self.cfg.decay_power,
        }
    }

    fn trains_policy(&self) -> bool {
        !self.freeze_policy && self.learner.policy.is_some()
    }

    /// Gradients for the batch of `step`, without applying them.
    pub fn batch_outcome(&self, step: u64) -> Result<BatchOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(entry_seed(self.cfg.seed ^ DATA_STREAM, step));
        let batch = self.data.train_batch(&mut rng, self.cfg.batch_size)?;
        let noise = entry_seed(self.cfg.seed ^ NOISE_STREAM, step);
        let (want_model, want_policy) = (!self.freeze_model, self.trains_policy());
        let out = par::try_fold_chunks(
            self.cfg.exec,
            &batch,
            |i, ex| {
                let e = self
                    .learner
                    .example_grads(ex, entry_seed(noise, i as u64), want_model, want_policy)?;
                Ok::<_, Error>(BatchOutcome::from_example(e))
            },
            BatchOutcome::merge,
        )?;
        out.ok_or_else(|| Error::Config("empty batch".into()))
    }

    /// Adam step on the model with the batch-mean gradient.
    pub fn apply_model(&mut self, out: &BatchOutcome) -> Result<()> {
        if let Some(g) = &out.model {
            let mut g = g.clone();
            g.scale(1.0 / out.examples as f64);
            let lr = self.schedule().lr_at(self.step);
            self.adam.update(self.learner.net.params_mut(), &g, lr)?;
        }
        Ok(())
    }

    /// RMSProp step on the halting policy with the batch-mean gradient.
    pub fn apply_policy(&mut self, out: &BatchOutcome) -> Result<()> {
        if let (Some(g), Some(policy), Some(opt)) =
            (&out.policy, self.learner.policy.as_mut(), self.rmsprop.as_mut())
        {
            let mut g = g.clone();
            g.scale(1.0 / out.examples as f64);
            opt.update(&mut policy.params, &g, self.cfg.lr_halt)?;
        }
        Ok(())
    }

    /// One batch: model update, then policy update.
    pub fn train_step(&mut self) -> Result<BatchOutcome> {
        let out = self.batch_outcome(self.step)?;
        if !self.freeze_model {
            self.apply_model(&out)?;
        }
        if self.trains_policy() {
            self.apply_policy(&out)?;
        }
        self.step += 1;
        Ok(out)
    }

    pub fn evaluate(&self, split: EvalSplit, n: usize) -> Result<EvalReport> {
        self.data
            .evaluate(&self.learner, split, n, self.cfg.seed, self.cfg.exec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut blocks = Blocks::default();
        blocks.push_params("model", self.learner.net.params());
        blocks.push_all("adam.m", &self.adam.m);
        blocks.push_all("adam.v", &self.adam.v);
        if let (Some(p), Some(r)) = (&self.learner.policy, &self.rmsprop) {
            blocks.push_params("policy", &p.params);
            blocks.push_all("rmsprop.square", &r.square);
        }
        let header = CheckpointHeader {
            format_version: FORMAT_VERSION,
            config: self.cfg.clone(),
            step: self.step,
            rng_seed: self.cfg.seed,
            adam_step: self.adam.step,
            rmsprop_step: self.rmsprop.as_ref().map_or(0, |r| r.step),
            best_valid_loss: self.best_valid_loss,
            babi_tokens: self.data.babi_tokens(),
            has_policy: self.learner.policy.is_some(),
        };
        store::write_checkpoint(path, &header, &blocks)
    }

    /// Restores a trainer; task data is rebuilt from the stored config.
    pub fn load(path: &Path) -> Result<Self> {
        let (header, _): (CheckpointHeader, Blocks) = store::read_checkpoint(path)?;
        let data = TaskData::load(&header.config)?;
        Self::load_with_data(path, data)
    }

    pub fn load_with_data(path: &Path, data: TaskData) -> Result<Self> {
        let (h, blocks): (CheckpointHeader, Blocks) = store::read_checkpoint(path)?;
        if h.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("checkpoint version {}", h.format_version)));
        }
        if h.babi_tokens != data.babi_tokens() {
            return Err(Error::Config(format!(
                "checkpoint vocabulary {:?} does not match data {:?}",
                h.babi_tokens,
                data.babi_tokens()
            )));
        }
        let mut t = Self::with_data(h.config, data)?;
        if h.has_policy != t.learner.policy.is_some() {
            return Err(Error::Format("checkpoint halting policy does not match config".into()));
        }
        blocks.load_params("model", t.learner.net.params_mut())?;
        let n = t.adam.m.len();
        t.adam.m = blocks.load_all("adam.m", n)?;
        t.adam.v = blocks.load_all("adam.v", n)?;
        t.adam.step = h.adam_step;
        if let (Some(p), Some(r)) = (t.learner.policy.as_mut(), t.rmsprop.as_mut()) {
            blocks.load_params("policy", &mut p.params)?;
            r.square = blocks.load_all("rmsprop.square", r.square.len())?;
            r.step = h.rmsprop_step;
        }
        t.step = h.step;
        t.best_valid_loss = h.best_valid_loss;
        Ok(t)
    }

    /// Trains until `until_epoch` (at most the configured epochs), logging
    /// one `train` record per epoch and a `valid` record per evaluation,
    /// saving `last.ckpt` every epoch and `best.ckpt` on the lowest
    /// validation loss. A final `test` record follows the last epoch.
    pub fn run(&mut self, out_dir: &Path, until_epoch: Option<u64>) -> Result<RunSummary> {
        std::fs::create_dir_all(out_dir)?;
        let mut metrics = MetricsWriter::append(&out_dir.join("metrics.jsonl"))?;
        let per = self.cfg.updates_per_epoch;
        let last_epoch = until_epoch.unwrap_or(self.cfg.epochs).min(self.cfg.epochs);
        let mut summary = RunSummary {
            steps: 0,
            last_valid: None,
            test: None,
        };
        while self.step / per < last_epoch {
            let epoch = self.step / per;
            let lr = self.schedule().lr_at(self.step);
            let mut acc: Option<BatchOutcome> = None;
            while self.step / per == epoch {
                let mut out = self.train_step()?;
                out.model = None;
                out.policy = None;
                acc = Some(match acc {
                    None => out,
                    Some(a) => a.merge(out),
                });
                summary.steps += 1;
            }
            let a = acc.expect("epochs have at least one update");
            let n = a.examples as f64;
            metrics.write(&MetricsRecord {
                step: self.step,
                phase: "train".into(),
                task_loss: a.task_loss / n,
                policy_loss: a.policy_loss / n,
                value_loss: a.value_loss / n,
                hop_loss: a.hop_loss / n,
                mean_hops: a.mean_hops(),
                lr_model: lr,
                accuracy: [("train".to_string(), a.correct as f64 / a.answers.max(1) as f64)].into(),
            })?;
            let done = epoch + 1;
            if done % self.cfg.eval_every.max(1) == 0 || done == self.cfg.epochs {
                let r = self.evaluate(EvalSplit::Valid, self.cfg.eval_items)?;
                metrics.write(&eval_record(self.step, lr, &r))?;
                if self.best_valid_loss.map_or(true, |b| r.loss < b) {
                    self.best_valid_loss = Some(r.loss);
                    self.save(&out_dir.join("best.ckpt"))?;
                }
                summary.last_valid = Some(r);
            }
            self.save(&out_dir.join("last.ckpt"))?;
        }
        if self.step / per >= self.cfg.epochs && until_epoch.map_or(true, |u| u >= self.cfg.epochs) {
            let r = self.evaluate(EvalSplit::Test, self.cfg.eval_items)?;
            metrics.write(&eval_record(self.step, 0.0, &r))?;
            summary.test = Some(r);
        }
        Ok(summary)
    }
}

pub fn eval_record(step: u64, lr: f64, r: &EvalReport) -> MetricsRecord {
    MetricsRecord {
        step,
        phase: r.split.name().into(),
        task_loss: r.loss,
        mean_hops: r.mean_hops,
        lr_model: lr,
        accuracy: r.accuracy.clone(),
        ..MetricsRecord::default()
    }
}

#[cfg(test)]
mod tests;
