//! Deciding how many hops to take.
//!
//! After every hop the model hands the attention weights to a
//! [`HaltDecider`]. The learned decider observes how far the attention moved
//! since the previous hop (Bhattacharyya distance per head) plus a one-hot
//! hop counter, runs them through a GRU and a small MLP, and emits the
//! probability of taking one more hop.

mod act;
mod policy;
mod reinforce;

pub use act::{act_weights, run_act_episode, ActEpisode, ActWeights, ACT_EPSILON};
pub use policy::{HaltPolicy, PolicyConfig, PolicyRollout, PolicyStep, StepRecord};
pub use reinforce::{
    n_step_returns, reinforce_loss, EpisodeReturns, HopPenaltySign, ReinforceConfig,
    ReinforceLoss,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, LOG_CLAMP};
use crate::error::{Error, Result};
use crate::model::Mode;

/// Called after each hop with that hop's `H × I` post-softmax attention.
pub trait HaltDecider {
    /// `true` takes another hop.
    fn decide(&mut self, hop: usize, weights: &Tensor) -> Result<bool>;

    /// Start of a new answer in a multi-answer episode.
    fn reset(&mut self) {}
}

/// Halting strategy selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "hops")]
pub enum HaltingKind {
    Reinforce,
    Act,
    FixedK(usize),
    Never,
}

/// Stops after exactly `k` hops (or at the cap).
#[derive(Clone, Copy, Debug)]
pub struct FixedHops(pub usize);

impl HaltDecider for FixedHops {
    fn decide(&mut self, hop: usize, _weights: &Tensor) -> Result<bool> {
        Ok(hop + 1 < self.0)
    }
}

/// Always asks for another hop; only the cap stops it.
#[derive(Clone, Copy, Debug)]
pub struct NeverHalt;

impl HaltDecider for NeverHalt {
    fn decide(&mut self, _hop: usize, _weights: &Tensor) -> Result<bool> {
        Ok(true)
    }
}

/// `-ln Σ_i sqrt(p_i q_i)` with the coefficient clamped at `1e-12`.
pub fn bhattacharyya(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension {
            op: "bhattacharyya",
            lhs: (1, p.len()),
            rhs: (1, q.len()),
        });
    }
    for (name, d) in [("p", p), ("q", q)] {
        let total: f64 = d.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!("{name} sums to {total}, not 1")));
        }
    }
    let coefficient: f64 = p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum();
    // rounding can push identical distributions a hair above 1
    Ok((-coefficient.max(LOG_CLAMP).ln()).max(0.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct HaltObservation {
    /// One distance per head.
    pub distances: Vec<f64>,
    pub step_onehot: Vec<f64>,
}

impl HaltObservation {
    pub fn to_row(&self) -> Tensor {
        let mut v = self.distances.clone();
        v.extend_from_slice(&self.step_onehot);
        Tensor::row(v)
    }
}

/// Distances between this hop's attention and the previous hop's, per head.
/// At the first hop the previous attention is taken to be uniform.
pub fn build_observation(
    weights: &Tensor,
    previous: Option<&Tensor>,
    hop: usize,
    max_hops: usize,
) -> Result<HaltObservation> {
    if hop >= max_hops {
        return Err(Error::Contract(format!(
            "hop {hop} is not below the cap {max_hops}"
        )));
    }
    let (heads, slots) = weights.shape();
    let uniform;
    let prev = match previous {
        Some(p) => {
            if p.shape() != weights.shape() {
                return Err(Error::Dimension {
                    op: "build_observation",
                    lhs: weights.shape(),
                    rhs: p.shape(),
                });
            }
            p
        }
        None => {
            uniform = Tensor::filled(heads, slots, 1.0 / slots as f64);
            &uniform
        }
    };
    let distances = (0..heads)
        .map(|h| bhattacharyya(weights.row_slice(h), prev.row_slice(h)))
        .collect::<Result<_>>()?;
    let mut step_onehot = vec![0.0; max_hops];
    step_onehot[hop] = 1.0;
    Ok(HaltObservation {
        distances,
        step_onehot,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Halt,
    Continue,
}

/// Training: Bernoulli draw with success probability `h`. Evaluation:
/// continue iff `h >= 0.5`.
pub fn sample_action<R: Rng + ?Sized>(continue_prob: f64, mode: Mode, rng: &mut R) -> Action {
    let go = match mode {
        Mode::Train => rng.gen::<f64>() < continue_prob,
        Mode::Eval => continue_prob >= 0.5,
    };
    if go {
        Action::Continue
    } else {
        Action::Halt
    }
}
