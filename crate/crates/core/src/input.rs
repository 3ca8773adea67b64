//! Model-facing inputs shared by every task.
//!
//! Token id `0` is the null token: it embeds to the zero vector and is used
//! for padding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NULL_TOKEN: u32 = 0;

/// An `rows × cols` grid of memory items, either token ids or dense vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ItemGrid {
    Tokens {
        rows: usize,
        cols: usize,
        ids: Vec<u32>,
    },
    Dense {
        rows: usize,
        cols: usize,
        width: usize,
        data: Vec<f64>,
    },
}

impl ItemGrid {
    pub fn tokens(rows: usize, cols: usize, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} token ids for a {rows}x{cols} grid",
                ids.len()
            )));
        }
        Ok(ItemGrid::Tokens { rows, cols, ids })
    }

    pub fn dense(rows: usize, cols: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * width {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols}x{width} grid",
                data.len()
            )));
        }
        Ok(ItemGrid::Dense {
            rows,
            cols,
            width,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        match self {
            ItemGrid::Tokens { rows, .. } | ItemGrid::Dense { rows, .. } => *rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            ItemGrid::Tokens { cols, .. } | ItemGrid::Dense { cols, .. } => *cols,
        }
    }

    /// Reorders slots: output row `i` is input row `order[i]`.
    pub fn permute_rows(&self, order: &[usize]) -> Self {
        match self {
            ItemGrid::Tokens { rows, cols, ids } => {
                debug_assert_eq!(order.len(), *rows);
                let ids = order
                    .iter()
                    .flat_map(|&r| ids[r * cols..(r + 1) * cols].iter().copied())
                    .collect();
                ItemGrid::Tokens {
                    rows: *rows,
                    cols: *cols,
                    ids,
                }
            }
            ItemGrid::Dense {
                rows,
                cols,
                width,
                data,
            } => {
                let stride = cols * width;
                let data = order
                    .iter()
                    .flat_map(|&r| data[r * stride..(r + 1) * stride].iter().copied())
                    .collect();
                ItemGrid::Dense {
                    rows: *rows,
                    cols: *cols,
                    width: *width,
                    data,
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum QueryInput {
    Tokens(Vec<u32>),
    Dense(Vec<f64>),
}

impl QueryInput {
    pub fn len(&self) -> usize {
        match self {
            QueryInput::Tokens(t) => t.len(),
            QueryInput::Dense(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Query for the next answer of a chained episode: the first token is
    /// replaced by the previous answer. Dense queries are returned unchanged.
    pub fn with_first_token(&self, token: u32) -> QueryInput {
        match self {
            QueryInput::Tokens(t) if !t.is_empty() => {
                let mut t = t.clone();
                t[0] = token;
                QueryInput::Tokens(t)
            }
            other => other.clone(),
        }
    }
}

/// Memory, query, and one target class per answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub memory: ItemGrid,
    pub query: QueryInput,
    pub targets: Vec<u32>,
}

pub(crate) fn token_slot(id: u32) -> Option<usize> {
    (id != NULL_TOKEN).then_some(id as usize)
}

/// Sinusoidal code of `position` with `width` channels (sine on even
/// channels, cosine on odd ones, base 10000).
pub fn sinusoid(position: usize, width: usize) -> Vec<f64> {
    (0..width)
        .map(|c| {
            let pair = (c / 2) as f64;
            let angle = position as f64 / 10000f64.powf(2.0 * pair / width as f64);
            if c % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}
