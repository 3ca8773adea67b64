use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::emn::EmnConfig;
use crate::error::{Error, Result};
use crate::halting::{HaltingKind, PolicyConfig, ReinforceConfig};
use crate::model::{AblationFlags, MemoConfig};
use crate::optim::{AdamConfig, RmsPropConfig};
use crate::par::Exec;
use crate::tasks::graph::{GraphConfig, GRAPH_VOCAB};
use crate::tasks::pai::PaiConfig;

/// Environment variable naming the directory that relative data paths are
/// resolved against.
pub const DATA_ROOT_ENV: &str = "MEMO_DATA_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TaskConfig {
    Pai(PaiConfig),
    Graph(GraphConfig),
    Babi(BabiTaskConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BabiTaskConfig {
    /// Directory with the `qa*_train.txt` / `qa*_test.txt` files. Relative
    /// paths are resolved against the data root.
    pub path: PathBuf,
    /// Share of each task's training set held out for validation.
    pub validation_fraction: f64,
}

impl BabiTaskConfig {
    pub fn resolved_path(&self) -> PathBuf {
        resolve_data_path(&self.path)
    }
}

/// `path` itself when absolute or when the data root is unset, otherwise
/// `$MEMO_DATA_ROOT/path`.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Memo,
    Emn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySizes {
    pub gru_hidden: usize,
    pub mlp_hidden: usize,
    pub bias_init: f64,
}

/// Everything a training run needs. Loaded from TOML; see the README for the
/// key set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub model: ModelKind,
    pub halting: HaltingKind,
    /// Hop cap `N`; also the number of EMN hops.
    pub max_hops: usize,
    pub heads: usize,
    /// Item embedding width `d_c`.
    pub embed_width: usize,
    /// Per-head state width `d`.
    pub head_width: usize,
    /// Answer MLP width `d_a`.
    pub answer_hidden: usize,
    pub dropout_attention: f64,
    pub dropout_output: f64,
    #[serde(default)]
    pub ablation: AblationFlags,
    /// EMN only: position-weighted item sums.
    pub emn_position_encoding: bool,
    pub policy: PolicySizes,
    pub reinforce: ReinforceConfig,
    /// Initial Adam rate of the model.
    pub lr_model: f64,
    /// RMSProp rate of the halting policy.
    pub lr_halt: f64,
    pub decay_power: f64,
    pub adam: AdamConfig,
    pub rmsprop: RmsPropConfig,
    pub epochs: u64,
    pub updates_per_epoch: u64,
    pub batch_size: usize,
    /// Evaluate every this many epochs.
    pub eval_every: u64,
    pub eval_items: usize,
    pub seed: u64,
    #[serde(default)]
    pub exec: Exec,
}

impl RunConfig {
    /// Published sizes and schedule for `task`.
    pub fn reference(task: TaskConfig) -> Self {
        let (heads, head_width, answer_hidden, dropout_output, batch, bias_init) = match &task {
            TaskConfig::Pai(_) => (1, 256, 128, 0.0, 64, 5.0),
            TaskConfig::Graph(g) => (4, 512, if g.n_nodes <= 10 { 128 } else { 256 }, 0.0, 64, 10.0),
            TaskConfig::Babi(_) => (4, 512, 256, 0.5, 128, 5.0),
        };
        RunConfig {
            task,
            model: ModelKind::Memo,
            halting: HaltingKind::Reinforce,
            max_hops: 5,
            heads,
            embed_width: 128,
            head_width,
            answer_hidden,
            dropout_attention: 0.1,
            dropout_output,
            ablation: AblationFlags::default(),
            emn_position_encoding: true,
            policy: PolicySizes {
                gru_hidden: 256,
                mlp_hidden: 64,
                bias_init,
            },
            reinforce: ReinforceConfig::default(),
            lr_model: 5e-4,
            lr_halt: 1e-4,
            decay_power: 1.0,
            adam: AdamConfig::default(),
            rmsprop: RmsPropConfig::default(),
            epochs: 20_000,
            updates_per_epoch: 100,
            batch_size: batch,
            eval_every: 100,
            eval_items: 1000,
            seed: 1,
            exec: Exec::default(),
        }
    }

    /// CPU-sized PAI-3 run: 200 classes, narrow layers, 200 × 50 updates.
    pub fn desk() -> Self {
        let mut pai = PaiConfig::new(3, 200, 32);
        pai.instances = 100;
        RunConfig {
            heads: 1,
            embed_width: 32,
            head_width: 64,
            answer_hidden: 64,
            policy: PolicySizes {
                gru_hidden: 32,
                mlp_hidden: 16,
                bias_init: 5.0,
            },
            lr_model: 1e-3,
            lr_halt: 1e-3,
            epochs: 200,
            updates_per_epoch: 50,
            eval_every: 10,
            eval_items: 400,
            ..RunConfig::reference(TaskConfig::Pai(pai))
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "ref-pai3" => Ok(Self::reference(TaskConfig::Pai(PaiConfig::new(3, 1000, 64)))),
            "ref-pai4" => Ok(Self::reference(TaskConfig::Pai(PaiConfig::new(4, 1000, 64)))),
            "ref-pai5" => Ok(Self::reference(TaskConfig::Pai(PaiConfig::new(5, 1000, 64)))),
            "ref-graph-10-2-2" => Ok(Self::reference(TaskConfig::Graph(GraphConfig::new(10, 2, 2)))),
            "ref-graph-20-3-3" => Ok(Self::reference(TaskConfig::Graph(GraphConfig::new(20, 3, 3)))),
            "ref-graph-20-5-3" => Ok(Self::reference(TaskConfig::Graph(GraphConfig::new(20, 5, 3)))),
            "ref-babi" => Ok(Self::reference(TaskConfig::Babi(BabiTaskConfig {
                path: PathBuf::from("babi/en-10k"),
                validation_fraction: 0.1,
            }))),
            _ => Err(Error::Config(format!(
                "unknown preset {name:?}; expected one of {}",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn total_updates(&self) -> u64 {
        self.epochs * self.updates_per_epoch
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        match &self.task {
            TaskConfig::Pai(p) => p.validate()?,
            TaskConfig::Graph(g) => g.validate()?,
            TaskConfig::Babi(b) => {
                if !(0.0..1.0).contains(&b.validation_fraction) {
                    return Err(Error::Config("validation_fraction must be in [0, 1)".into()));
                }
            }
        }
        if self.max_hops == 0 || self.batch_size == 0 || self.updates_per_epoch == 0 {
            return Err(Error::Config("max_hops, batch_size and updates_per_epoch must be positive".into()));
        }
        if matches!(self.task, TaskConfig::Pai(_)) && self.batch_size % 2 != 0 {
            return Err(Error::Config("PAI batches split evenly into direct and indirect".into()));
        }
        if let HaltingKind::FixedK(k) = self.halting {
            if k == 0 || k > self.max_hops {
                return Err(Error::Config(format!("fixed hop count {k} outside 1..={}", self.max_hops)));
            }
        }
        if self.model == ModelKind::Emn && matches!(self.task, TaskConfig::Graph(ref g) if g.answers() > 1) {
            return Err(Error::Config("the EMN baseline answers one token per query".into()));
        }
        for (name, v) in [("lr_model", self.lr_model), ("lr_halt", self.lr_halt)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            heads: self.heads,
            max_hops: self.max_hops,
            gru_hidden: self.policy.gru_hidden,
            mlp_hidden: self.policy.mlp_hidden,
            bias_init: self.policy.bias_init,
        }
    }

    /// Model shapes; `babi_tokens` is the token space of a loaded corpus.
    pub fn memo_config(&self, babi_tokens: Option<usize>) -> Result<MemoConfig> {
        let base = match &self.task {
            TaskConfig::Pai(p) => {
                let mut c = MemoConfig::pai(p.seq_len, p.n_classes, p.d_emb);
                c.memory_slots = p.memory_slots();
                c
            }
            TaskConfig::Graph(g) => {
                let mut c = MemoConfig::graph(g.n_nodes, g.out_degree, g.path_length, self.heads);
                c.memory_slots = g.max_tuples();
                c
            }
            TaskConfig::Babi(_) => {
                let tokens = babi_tokens
                    .ok_or_else(|| Error::Config("bAbI model needs the corpus vocabulary".into()))?;
                MemoConfig::babi(tokens, self.heads)
            }
        };
        let cfg = MemoConfig {
            embed_width: self.embed_width,
            head_width: self.head_width,
            answer_hidden: self.answer_hidden,
            heads: self.heads,
            dropout_attention: self.dropout_attention,
            dropout_output: self.dropout_output,
            ablation: self.ablation,
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn emn_config(&self, babi_tokens: Option<usize>) -> Result<EmnConfig> {
        let memo = self.memo_config(babi_tokens)?;
        let cfg = EmnConfig {
            memory_slots: memo.memory_slots,
            items_per_slot: memo.items_per_slot,
            input: memo.input,
            query: memo.query,
            output_classes: memo.output_classes,
            width: self.head_width,
            hops: self.max_hops,
            position_encoding: self.emn_position_encoding,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Output classes of the task, for checks against loaded checkpoints.
    pub fn output_classes(&self, babi_tokens: Option<usize>) -> Option<usize> {
        match &self.task {
            TaskConfig::Pai(p) => Some(p.n_classes),
            TaskConfig::Graph(_) => Some(GRAPH_VOCAB),
            TaskConfig::Babi(_) => babi_tokens,
        }
    }
}

pub const PRESETS: [&str; 8] = [
    "desk",
    "ref-pai3",
    "ref-pai4",
    "ref-pai5",
    "ref-graph-10-2-2",
    "ref-graph-20-3-3",
    "ref-graph-20-5-3",
    "ref-babi",
];
