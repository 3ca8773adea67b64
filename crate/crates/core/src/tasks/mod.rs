//! Procedurally generated tasks and their evaluators.

pub mod graph;
pub mod pai;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::input::Example;

/// What the next answer's query is built from in multi-answer tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feed {
    Predicted,
    GroundTruth,
}

/// Answer distributions and hop counts for one example.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub distributions: Vec<Vec<f64>>,
    pub hops: Vec<usize>,
}

impl Prediction {
    pub fn argmaxes(&self) -> Vec<u32> {
        self.distributions
            .iter()
            .map(|d| crate::autodiff::argmax(d) as u32)
            .collect()
    }
}

/// Anything that maps an example to answers in evaluation mode. `seed`
/// drives any randomness inside the prediction.
pub trait Predictor: Sync {
    fn predict(&self, example: &Example, feed: Feed, seed: u64) -> Result<Prediction>;
}

/// Derives independent per-entry seeds from one base seed.
pub fn entry_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
