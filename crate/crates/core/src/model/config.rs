use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Representation of individual memory items.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputSpace {
    /// Token ids below `vocab`, embedded by row lookup (a one-hot product).
    OneHot { vocab: usize },
    /// Pre-embedded items of the given width.
    Dense { width: usize },
}

impl InputSpace {
    pub fn width(&self) -> usize {
        match *self {
            InputSpace::OneHot { vocab } => vocab,
            InputSpace::Dense { width } => width,
        }
    }
}

/// Representation of the raw query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum QuerySpace {
    /// `len` tokens, each embedded with the shared item embedding and then
    /// concatenated.
    Tokens { len: usize },
    /// A dense vector used as-is.
    Dense { width: usize },
}

/// Architecture switches for the memory-representation ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Sum each slot's items after adding a sinusoidal position code instead
    /// of keeping them separated.
    pub positional_encoding_instead_of_separation: bool,
    /// Recurrent query update through the learned query transform with a
    /// residual connection. When off, the next query is the raw readout.
    pub recurrent_attention: bool,
    pub layernorm: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            positional_encoding_instead_of_separation: false,
            recurrent_attention: true,
            layernorm: true,
        }
    }
}

impl AblationFlags {
    pub fn full() -> Self {
        Self::default()
    }

    /// The four PAI ablation rows: (position code, separated, recurrent
    /// attention with layer norm) in the order x-x, x-rec, sep-x, sep-rec.
    pub fn pai_rows() -> [AblationFlags; 4] {
        let f = |pe: bool, rec: bool| AblationFlags {
            positional_encoding_instead_of_separation: pe,
            recurrent_attention: rec,
            layernorm: rec,
        };
        [f(true, false), f(true, true), f(false, false), f(false, true)]
    }

    /// The five bAbI ablation rows, recurrence and layer norm toggled
    /// independently.
    pub fn babi_rows() -> [AblationFlags; 5] {
        let f = |pe: bool, rec: bool, ln: bool| AblationFlags {
            positional_encoding_instead_of_separation: pe,
            recurrent_attention: rec,
            layernorm: ln,
        };
        [
            f(true, false, false),
            f(false, false, false),
            f(true, true, true),
            f(false, true, false),
            f(false, true, true),
        ]
    }

    pub fn items_separated(&self) -> bool {
        !self.positional_encoding_instead_of_separation
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoConfig {
    /// Memory slots `I`.
    pub memory_slots: usize,
    /// Items per slot `S`.
    pub items_per_slot: usize,
    pub input: InputSpace,
    pub query: QuerySpace,
    /// Answer classes `O`.
    pub output_classes: usize,
    /// Common embedding width `d_c`.
    pub embed_width: usize,
    /// Per-head key/value/query width `d`.
    pub head_width: usize,
    /// Hidden width of the answer MLP `d_a`.
    pub answer_hidden: usize,
    pub heads: usize,
    pub dropout_attention: f64,
    pub dropout_output: f64,
    /// Number of sequential answers; each has its own query and output weights.
    pub answers: usize,
    /// Append a sinusoidal code of the slot index to every slot.
    pub time_encoding: bool,
    #[serde(default)]
    pub ablation: AblationFlags,
}

impl MemoConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("memory_slots", self.memory_slots),
            ("items_per_slot", self.items_per_slot),
            ("input width", self.input.width()),
            ("output_classes", self.output_classes),
            ("embed_width", self.embed_width),
            ("head_width", self.head_width),
            ("answer_hidden", self.answer_hidden),
            ("heads", self.heads),
            ("answers", self.answers),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        let qw = match self.query {
            QuerySpace::Tokens { len } => len,
            QuerySpace::Dense { width } => width,
        };
        if qw == 0 {
            return Err(Error::Config("query width must be at least 1".into()));
        }
        for (name, r) in [
            ("dropout_attention", self.dropout_attention),
            ("dropout_output", self.dropout_output),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{name} = {r} outside [0, 1)")));
            }
        }
        if self.heads * self.head_width < 2 && self.ablation.layernorm {
            return Err(Error::Config(
                "layer norm needs heads * head_width >= 2".into(),
            ));
        }
        Ok(())
    }

    /// Width of one flattened slot before the key/value projections.
    pub fn slot_width(&self) -> usize {
        let items = if self.ablation.items_separated() {
            self.items_per_slot
        } else {
            1
        };
        (items + usize::from(self.time_encoding)) * self.embed_width
    }

    pub fn query_width(&self) -> usize {
        match self.query {
            QuerySpace::Tokens { len } => len * self.embed_width,
            QuerySpace::Dense { width } => width,
        }
    }

    pub fn state_width(&self) -> usize {
        self.heads * self.head_width
    }

    /// PAI with sequences of `seq_len` items and `d_emb`-wide item features,
    /// fixed sizes from the published configuration.
    pub fn pai(seq_len: usize, classes: usize, d_emb: usize) -> Self {
        MemoConfig {
            memory_slots: 16 * (seq_len - 1),
            items_per_slot: 3,
            input: InputSpace::Dense { width: d_emb },
            query: QuerySpace::Dense { width: 3 * d_emb },
            output_classes: classes,
            embed_width: 128,
            head_width: 256,
            answer_hidden: 128,
            heads: 1,
            dropout_attention: 0.1,
            dropout_output: 0.0,
            answers: 1,
            time_encoding: false,
            ablation: AblationFlags::default(),
        }
    }

    /// Shortest path on `nodes`-node graphs with the given out-degree and
    /// path length; node tokens are `1..=nodes` in a 1000-token space.
    pub fn graph(nodes: usize, out_degree: usize, path_length: usize, heads: usize) -> Self {
        MemoConfig {
            memory_slots: nodes * out_degree,
            items_per_slot: 2,
            input: InputSpace::OneHot { vocab: 1000 },
            query: QuerySpace::Tokens { len: 2 },
            output_classes: 1000,
            embed_width: 128,
            head_width: 512,
            answer_hidden: if nodes <= 10 { 128 } else { 256 },
            heads,
            dropout_attention: 0.1,
            dropout_output: 0.0,
            answers: path_length - 1,
            time_encoding: false,
            ablation: AblationFlags::default(),
        }
    }

    pub fn babi(vocab: usize, heads: usize) -> Self {
        MemoConfig {
            memory_slots: 320,
            items_per_slot: 11,
            input: InputSpace::OneHot { vocab },
            query: QuerySpace::Tokens { len: 11 },
            output_classes: vocab,
            embed_width: 128,
            head_width: 512,
            answer_hidden: 256,
            heads,
            dropout_attention: 0.1,
            dropout_output: 0.5,
            answers: 1,
            time_encoding: true,
            ablation: AblationFlags::default(),
        }
    }
}
