//! The memory model: a shared item embedding, per-head key/value projections
//! over separately stored items, and a recurrent multi-head attention step
//! that emits an answer distribution after every hop.

mod config;

pub use config::{AblationFlags, InputSpace, MemoConfig, QuerySpace};

use rand::Rng;

use crate::autodiff::{argmax, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::halting::HaltDecider;
use crate::input::{sinusoid, token_slot, ItemGrid, QueryInput};
use crate::params::{Bound, ParamId, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn training(self) -> bool {
        self == Mode::Train
    }
}

#[derive(Clone, Debug)]
struct HeadIds {
    key: ParamId,
    value: ParamId,
}

#[derive(Clone, Debug)]
struct AnswerIds {
    query: Vec<ParamId>,
    logit_mix: ParamId,
    recurrent: ParamId,
    ln_gain: ParamId,
    ln_bias: ParamId,
    hidden: ParamId,
    output: ParamId,
}

#[derive(Clone, Debug)]
pub struct MemoModel {
    pub config: MemoConfig,
    pub params: ParamSet,
    embed: ParamId,
    heads: Vec<HeadIds>,
    answers: Vec<AnswerIds>,
}

/// Embedded memory for one episode. Keys and values are computed once and
/// reused for every hop and every answer.
#[derive(Clone, Debug)]
pub struct MemoryStore {
    pub common: Var,
    pub keys: Vec<Var>,
    pub values: Vec<Var>,
}

/// Flattened `1 × (H·d)` query state and the hop index it belongs to.
#[derive(Clone, Copy, Debug)]
pub struct QueryState {
    pub q: Var,
    pub hop: usize,
}

#[derive(Clone, Debug)]
pub struct HopOutput {
    /// `H × I` attention weights after the softmax and before dropout.
    pub weights: Tensor,
    pub answer: Var,
    pub next: QueryState,
}

/// Per-hop record of one answer's episode.
#[derive(Clone, Debug, Default)]
pub struct HopTrace {
    pub weights: Vec<Tensor>,
    pub decisions: Vec<bool>,
}

impl HopTrace {
    pub fn hops(&self) -> usize {
        self.weights.len()
    }
}

#[derive(Clone, Debug)]
pub struct Episode {
    /// Answer distribution of the last hop taken.
    pub answer: Var,
    pub hop_answers: Vec<Var>,
    pub trace: HopTrace,
}

impl Episode {
    pub fn hops(&self) -> usize {
        self.trace.hops()
    }
}

/// What the next answer's query is built from in multi-answer episodes.
#[derive(Clone, Copy, Debug)]
pub enum AnswerFeed<'t> {
    Predicted,
    GroundTruth(&'t [u32]),
}

#[derive(Clone, Debug)]
pub struct MultiEpisode {
    pub answers: Vec<Episode>,
    pub predictions: Vec<u32>,
}

impl MemoModel {
    /// Builds a model with uniform(±1/sqrt(fan_in)) matrices, an identity
    /// slot-mixing matrix, and unit-gain, zero-bias layer norms. Stores are
    /// shuffled per example, so the identity starts the mixing from the one
    /// transform that keeps slot scores aligned with their slots.
    pub fn new<R: Rng + ?Sized>(config: MemoConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let embed = params.add_uniform("embed", config.input.width(), config.embed_width, rng);
        let slot_width = config.slot_width();
        let heads = (0..config.heads)
            .map(|h| HeadIds {
                key: params.add_uniform(format!("key.{h}"), slot_width, config.head_width, rng),
                value: params.add_uniform(format!("value.{h}"), slot_width, config.head_width, rng),
            })
            .collect();
        let hd = config.state_width();
        let i = config.memory_slots;
        let answers = (0..config.answers)
            .map(|a| AnswerIds {
                query: (0..config.heads)
                    .map(|h| {
                        params.add_uniform(
                            format!("answer{a}.query.{h}"),
                            config.query_width(),
                            config.head_width,
                            rng,
                        )
                    })
                    .collect(),
                logit_mix: params.add(format!("answer{a}.logit_mix"), Tensor::identity(i)),
                recurrent: params.add_uniform(format!("answer{a}.recurrent"), hd, hd, rng),
                ln_gain: params.add(format!("answer{a}.ln_gain"), Tensor::filled(1, hd, 1.0)),
                ln_bias: params.add(format!("answer{a}.ln_bias"), Tensor::zeros(1, hd)),
                hidden: params.add_uniform(format!("answer{a}.hidden"), hd, config.answer_hidden, rng),
                output: params.add_uniform(
                    format!("answer{a}.output"),
                    config.answer_hidden,
                    config.output_classes,
                    rng,
                ),
            })
            .collect();
        Ok(MemoModel {
            config,
            params,
            embed,
            heads,
            answers,
        })
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Bound {
        self.params.bind(tape)
    }

    fn answer_ids(&self, answer: usize) -> Result<&AnswerIds> {
        self.answers.get(answer).ok_or_else(|| {
            Error::Config(format!(
                "answer {answer} requested from a model with {} answers",
                self.answers.len()
            ))
        })
    }

    /// Common embeddings `c_i = x_i W_c` for every item, as an `(rows·cols) × d_c`
    /// matrix.
    fn embed_items(&self, tape: &mut Tape<'_>, bound: &Bound, grid: &ItemGrid) -> Result<Var> {
        embed_grid(tape, bound.var(self.embed), grid, self.config.input)
    }

    /// Embeds the memory and projects every slot to per-head keys and values.
    /// Items within a slot stay separated: the slot vector is the
    /// concatenation of its item embeddings.
    pub fn embed_memory(
        &self,
        tape: &mut Tape<'_>,
        bound: &Bound,
        memory: &ItemGrid,
    ) -> Result<MemoryStore> {
        let cfg = &self.config;
        let (rows, cols) = (memory.rows(), memory.cols());
        if rows != cfg.memory_slots || cols != cfg.items_per_slot {
            return Err(Error::Dimension {
                op: "embed_memory",
                lhs: (rows, cols),
                rhs: (cfg.memory_slots, cfg.items_per_slot),
            });
        }
        let items = self.embed_items(tape, bound, memory)?;
        let dc = cfg.embed_width;
        let mut slots = if cfg.ablation.items_separated() {
            tape.reshape(items, rows, cols * dc)?
        } else {
            let mut codes = Vec::with_capacity(rows * cols * dc);
            for _ in 0..rows {
                for s in 0..cols {
                    codes.extend(sinusoid(s, dc));
                }
            }
            let pe = tape.leaf(Tensor::from_vec(rows * cols, dc, codes)?);
            let coded = tape.add(items, pe)?;
            let sum_over_items = tape.leaf(slot_summer(rows, cols));
            tape.matmul(sum_over_items, coded)?
        };
        if cfg.time_encoding {
            let mut codes = Vec::with_capacity(rows * dc);
            for i in 0..rows {
                codes.extend(sinusoid(i, dc));
            }
            let time = tape.leaf(Tensor::from_vec(rows, dc, codes)?);
            slots = tape.concat_cols(&[slots, time])?;
        }
        let mut keys = Vec::with_capacity(cfg.heads);
        let mut values = Vec::with_capacity(cfg.heads);
        for head in &self.heads {
            keys.push(tape.matmul(slots, bound.var(head.key))?);
            values.push(tape.matmul(slots, bound.var(head.value))?);
        }
        Ok(MemoryStore {
            common: slots,
            keys,
            values,
        })
    }

    /// Projects the raw query into the initial `H × d` query state.
    pub fn embed_query(
        &self,
        tape: &mut Tape<'_>,
        bound: &Bound,
        query: &QueryInput,
        answer: usize,
    ) -> Result<QueryState> {
        let ids = self.answer_ids(answer)?;
        let raw = match (query, self.config.query) {
            (QueryInput::Tokens(tokens), QuerySpace::Tokens { len }) => {
                if tokens.len() != len {
                    return Err(Error::Dimension {
                        op: "embed_query",
                        lhs: (1, tokens.len()),
                        rhs: (1, len),
                    });
                }
                let grid = ItemGrid::tokens(1, len, tokens.clone())?;
                let e = self.embed_items(tape, bound, &grid)?;
                tape.flatten(e)
            }
            (QueryInput::Dense(v), QuerySpace::Dense { width }) => {
                if v.len() != width {
                    return Err(Error::Dimension {
                        op: "embed_query",
                        lhs: (1, v.len()),
                        rhs: (1, width),
                    });
                }
                tape.leaf(Tensor::row(v.clone()))
            }
            _ => {
                return Err(Error::Config(
                    "query representation does not match the model query space".into(),
                ))
            }
        };
        let rows = ids
            .query
            .iter()
            .map(|&w| tape.matmul(raw, bound.var(w)))
            .collect::<Result<Vec<_>>>()?;
        let q = tape.concat_cols(&rows)?;
        Ok(QueryState { q, hop: 0 })
    }

    /// One hop: per-head scaled scores mixed across slots, softmax, dropout,
    /// weighted read of the values, the recurrent residual update with layer
    /// norm, and the answer MLP.
    pub fn attention_hop<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        bound: &Bound,
        store: &MemoryStore,
        state: QueryState,
        answer: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<HopOutput> {
        let cfg = &self.config;
        let ids = self.answer_ids(answer)?;
        let (d, heads, slots) = (cfg.head_width, cfg.heads, cfg.memory_slots);
        if tape.shape(state.q) != (1, heads * d) || store.keys.len() != heads {
            return Err(Error::Dimension {
                op: "attention_hop",
                lhs: tape.shape(state.q),
                rhs: (1, heads * d),
            });
        }
        let scale = 1.0 / (d as f64).sqrt();
        let mut weights = Tensor::zeros(heads, slots);
        let mut reads = Vec::with_capacity(heads);
        for h in 0..heads {
            let q = tape.slice_cols(state.q, h * d, d)?;
            let scores = tape.matmul_nt(q, store.keys[h])?;
            let mixed = tape.matmul_nt(scores, bound.var(ids.logit_mix))?;
            let logits = tape.scale(mixed, scale);
            let w = tape.softmax(logits)?;
            weights.data_mut()[h * slots..(h + 1) * slots].copy_from_slice(tape.value(w).data());
            let w = tape.dropout(w, cfg.dropout_attention, mode.training(), rng)?;
            reads.push(tape.matmul(w, store.values[h])?);
        }
        let readout = tape.concat_cols(&reads)?;
        let mut next = if cfg.ablation.recurrent_attention {
            let projected = tape.matmul(readout, bound.var(ids.recurrent))?;
            tape.add(projected, state.q)?
        } else {
            readout
        };
        if cfg.ablation.layernorm {
            next = tape.layer_norm(next, bound.var(ids.ln_gain), bound.var(ids.ln_bias))?;
        }
        let hidden = tape.matmul(next, bound.var(ids.hidden))?;
        let hidden = tape.relu(hidden);
        let hidden = tape.dropout(hidden, cfg.dropout_output, mode.training(), rng)?;
        let logits = tape.matmul(hidden, bound.var(ids.output))?;
        let answer_probs = tape.softmax(logits)?;
        Ok(HopOutput {
            weights,
            answer: answer_probs,
            next: QueryState {
                q: next,
                hop: state.hop + 1,
            },
        })
    }

    /// Hops until the halting strategy stops or `max_hops` is reached. The
    /// strategy is consulted after every hop.
    #[allow(clippy::too_many_arguments)]
    pub fn run_episode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        bound: &Bound,
        store: &MemoryStore,
        query: QueryState,
        answer: usize,
        halting: &mut dyn HaltDecider,
        max_hops: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Episode> {
        if max_hops == 0 {
            return Err(Error::Config("max_hops must be at least 1".into()));
        }
        let mut state = query;
        let mut trace = HopTrace::default();
        let mut hop_answers = Vec::new();
        for t in 0..max_hops {
            let out = self.attention_hop(tape, bound, store, state, answer, mode, rng)?;
            let go_on = halting.decide(t, &out.weights)?;
            trace.weights.push(out.weights);
            trace.decisions.push(go_on);
            hop_answers.push(out.answer);
            state = out.next;
            if !go_on {
                break;
            }
        }
        Ok(Episode {
            answer: *hop_answers.last().expect("at least one hop"),
            hop_answers,
            trace,
        })
    }

    /// Sequential answers over one memory. Answer `k + 1` is queried with the
    /// token produced for answer `k` (predicted or ground truth, per `feed`),
    /// combined into a new query by `next_query`. Keys and values are shared;
    /// per-answer query and output weights are not.
    #[allow(clippy::too_many_arguments)]
    pub fn run_multi_answer_episode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        bound: &Bound,
        store: &MemoryStore,
        first_query: &QueryInput,
        next_query: &dyn Fn(&QueryInput, u32) -> QueryInput,
        feed: AnswerFeed<'_>,
        halting: &mut dyn HaltDecider,
        max_hops: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<MultiEpisode> {
        let n = self.config.answers;
        if let AnswerFeed::GroundTruth(t) = feed {
            if t.len() + 1 < n {
                return Err(Error::Contract(format!(
                    "{} ground-truth answers for {n} answer steps",
                    t.len()
                )));
            }
        }
        let mut query = first_query.clone();
        let mut answers = Vec::with_capacity(n);
        let mut predictions = Vec::with_capacity(n);
        for a in 0..n {
            halting.reset();
            let state = self.embed_query(tape, bound, &query, a)?;
            let ep = self.run_episode(tape, bound, store, state, a, halting, max_hops, mode, rng)?;
            let predicted = argmax(tape.value(ep.answer).data()) as u32;
            predictions.push(predicted);
            answers.push(ep);
            if a + 1 < n {
                let fed = match feed {
                    AnswerFeed::Predicted => predicted,
                    AnswerFeed::GroundTruth(t) => t[a],
                };
                query = next_query(&query, fed);
            }
        }
        Ok(MultiEpisode {
            answers,
            predictions,
        })
    }
}

/// Item-wise product `x W` for every item of `grid`, one row per item in
/// row-major grid order. Token ids are looked up (null embeds to zero).
pub(crate) fn embed_grid(
    tape: &mut Tape<'_>,
    w: Var,
    grid: &ItemGrid,
    input: InputSpace,
) -> Result<Var> {
    match (grid, input) {
        (ItemGrid::Tokens { ids, .. }, InputSpace::OneHot { vocab }) => {
            let slots: Vec<Option<usize>> = ids
                .iter()
                .map(|&id| {
                    if id as usize >= vocab {
                        Err(Error::Vocabulary {
                            id: id as usize,
                            vocab,
                        })
                    } else {
                        Ok(token_slot(id))
                    }
                })
                .collect::<Result<_>>()?;
            tape.gather_rows(w, &slots)
        }
        (
            ItemGrid::Dense {
                rows,
                cols,
                width,
                data,
            },
            InputSpace::Dense { width: expected },
        ) => {
            if *width != expected {
                return Err(Error::Dimension {
                    op: "embed_items",
                    lhs: (rows * cols, *width),
                    rhs: tape.shape(w),
                });
            }
            let x = tape.leaf(Tensor::from_vec(rows * cols, *width, data.clone())?);
            tape.matmul(x, w)
        }
        _ => Err(Error::Config(
            "item representation does not match the model input space".into(),
        )),
    }
}

/// `rows × (rows·cols)` matrix summing each block of `cols` consecutive rows.
pub(crate) fn slot_summer(rows: usize, cols: usize) -> Tensor {
    let mut t = Tensor::zeros(rows, rows * cols);
    for r in 0..rows {
        for s in 0..cols {
            t.set(r, r * cols + s, 1.0);
        }
    }
    t
}
