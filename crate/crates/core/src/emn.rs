//! End-to-end memory network baseline with tied weights across hops.
//!
//! Each slot is collapsed to a single vector: the items' key (or value)
//! embeddings are weighted per position and summed. The query is read with
//! an unscaled dot product, updated as `q' = w V + q W_qv`, and decoded by a
//! single linear layer and a softmax.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::input::{ItemGrid, QueryInput};
use crate::model::{embed_grid, slot_summer, InputSpace, QuerySpace};
use crate::params::{Bound, ParamId, ParamSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmnConfig {
    pub memory_slots: usize,
    pub items_per_slot: usize,
    pub input: InputSpace,
    pub query: QuerySpace,
    pub output_classes: usize,
    /// Embedding width `d`.
    pub width: usize,
    pub hops: usize,
    /// Weight item positions with the position-encoding columns. When off,
    /// every position has weight 1 (bag of items).
    pub position_encoding: bool,
}

impl EmnConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("memory_slots", self.memory_slots),
            ("items_per_slot", self.items_per_slot),
            ("input width", self.input.width()),
            ("output_classes", self.output_classes),
            ("width", self.width),
            ("hops", self.hops),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Position weights `l_kj = (1 - j/J) - (k/d)(1 - 2j/J)` with 1-based item
/// index `j` of `J` and channel `k` of `d`, returned as `J` rows of width `d`.
pub fn position_encoding(items: usize, width: usize) -> Tensor {
    let mut t = Tensor::zeros(items, width);
    let jn = items as f64;
    let dn = width as f64;
    for j in 1..=items {
        for k in 1..=width {
            let (jf, kf) = (j as f64, k as f64);
            t.set(j - 1, k - 1, (1.0 - jf / jn) - (kf / dn) * (1.0 - 2.0 * jf / jn));
        }
    }
    t
}

#[derive(Clone, Debug)]
pub struct EmnModel {
    pub config: EmnConfig,
    pub params: ParamSet,
    key: ParamId,
    value: ParamId,
    query: ParamId,
    query_update: ParamId,
    answer: ParamId,
}

/// Collapsed memory for one episode.
#[derive(Clone, Copy, Debug)]
pub struct EmnMemory {
    pub keys: Var,
    pub values: Var,
}

#[derive(Clone, Debug)]
pub struct EmnHop {
    /// `1 × I` attention weights.
    pub weights: Tensor,
    pub next: Var,
    pub answer: Var,
}

#[derive(Clone, Debug)]
pub struct EmnEpisode {
    pub answer: Var,
    pub weights: Vec<Tensor>,
}

impl EmnModel {
    pub fn new<R: Rng + ?Sized>(config: EmnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.width;
        let mut params = ParamSet::new();
        let key = params.add_uniform("key", config.input.width(), d, rng);
        let value = params.add_uniform("value", config.input.width(), d, rng);
        let query_in = match config.query {
            QuerySpace::Tokens { .. } => config.input.width(),
            QuerySpace::Dense { width } => width,
        };
        let query = params.add_uniform("query", query_in, d, rng);
        let query_update = params.add_uniform("query_update", d, d, rng);
        let answer = params.add_uniform("answer", d, config.output_classes, rng);
        Ok(EmnModel {
            config,
            params,
            key,
            value,
            query,
            query_update,
            answer,
        })
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Bound {
        self.params.bind(tape)
    }

    fn weights(&self, items: usize) -> Tensor {
        if self.config.position_encoding {
            position_encoding(items, self.config.width)
        } else {
            Tensor::filled(items, self.config.width, 1.0)
        }
    }

    /// `Σ_j l_j ⊙ (x_ij W)` for every row of `grid`.
    fn collapse(&self, tape: &mut Tape<'_>, w: Var, grid: &ItemGrid, input: InputSpace) -> Result<Var> {
        let (rows, cols) = (grid.rows(), grid.cols());
        let items = embed_grid(tape, w, grid, input)?;
        let l = self.weights(cols);
        let mut tiled = Vec::with_capacity(rows * cols * self.config.width);
        for _ in 0..rows {
            tiled.extend_from_slice(l.data());
        }
        let l = tape.leaf(Tensor::from_vec(rows * cols, self.config.width, tiled)?);
        let weighted = tape.mul(items, l)?;
        let summer = tape.leaf(slot_summer(rows, cols));
        tape.matmul(summer, weighted)
    }

    /// Position-weighted keys and values, `I × d` each. Only the keys carry
    /// position weights; values are plain sums over the slot's items.
    pub fn embed_memory(&self, tape: &mut Tape<'_>, bound: &Bound, memory: &ItemGrid) -> Result<EmnMemory> {
        let cfg = &self.config;
        if memory.rows() != cfg.memory_slots || memory.cols() != cfg.items_per_slot {
            return Err(Error::Dimension {
                op: "emn_embed",
                lhs: (memory.rows(), memory.cols()),
                rhs: (cfg.memory_slots, cfg.items_per_slot),
            });
        }
        let keys = self.collapse(tape, bound.var(self.key), memory, cfg.input)?;
        let items = embed_grid(tape, bound.var(self.value), memory, cfg.input)?;
        let summer = tape.leaf(slot_summer(memory.rows(), memory.cols()));
        let values = tape.matmul(summer, items)?;
        Ok(EmnMemory { keys, values })
    }

    pub fn embed_query(&self, tape: &mut Tape<'_>, bound: &Bound, query: &QueryInput) -> Result<Var> {
        match (query, self.config.query) {
            (QueryInput::Tokens(t), QuerySpace::Tokens { len }) => {
                if t.len() != len {
                    return Err(Error::Dimension {
                        op: "emn_query",
                        lhs: (1, t.len()),
                        rhs: (1, len),
                    });
                }
                let grid = ItemGrid::tokens(1, len, t.clone())?;
                self.collapse(tape, bound.var(self.query), &grid, self.config.input)
            }
            (QueryInput::Dense(v), QuerySpace::Dense { width }) => {
                if v.len() != width {
                    return Err(Error::Dimension {
                        op: "emn_query",
                        lhs: (1, v.len()),
                        rhs: (1, width),
                    });
                }
                let x = tape.leaf(Tensor::row(v.clone()));
                tape.matmul(x, bound.var(self.query))
            }
            _ => Err(Error::Config(
                "query representation does not match the model query space".into(),
            )),
        }
    }

    pub fn hop(&self, tape: &mut Tape<'_>, bound: &Bound, memory: EmnMemory, q: Var) -> Result<EmnHop> {
        let scores = tape.matmul_nt(q, memory.keys)?;
        let w = tape.softmax(scores)?;
        let weights = tape.value(w).clone();
        let read = tape.matmul(w, memory.values)?;
        let carried = tape.matmul(q, bound.var(self.query_update))?;
        let next = tape.add(read, carried)?;
        let logits = tape.matmul(next, bound.var(self.answer))?;
        let answer = tape.softmax(logits)?;
        Ok(EmnHop {
            weights,
            next,
            answer,
        })
    }

    /// Runs the configured number of hops; the answer is the last hop's.
    pub fn run_episode(&self, tape: &mut Tape<'_>, bound: &Bound, memory: EmnMemory, q: Var) -> Result<EmnEpisode> {
        let mut q = q;
        let mut weights = Vec::with_capacity(self.config.hops);
        let mut answer = None;
        for _ in 0..self.config.hops {
            let out = self.hop(tape, bound, memory, q)?;
            weights.push(out.weights);
            answer = Some(out.answer);
            q = out.next;
        }
        Ok(EmnEpisode {
            answer: answer.expect("hops validated to be at least 1"),
            weights,
        })
    }
}
