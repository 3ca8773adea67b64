use rand::Rng;

use super::{build_observation, HaltPolicy};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{MemoModel, MemoryStore, Mode, QueryState};
use crate::params::Bound;

/// Halting threshold slack for adaptive computation time.
pub const ACT_EPSILON: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct ActWeights {
    /// Number of hops used (`T`, counted from 1).
    pub hops: usize,
    /// Mixture weights `p_1..p_T`; the last one is the remainder.
    pub probs: Vec<f64>,
    pub remainder: f64,
}

/// Halting weights from per-hop halting units: stop at the first step whose
/// cumulative sum reaches `1 - eps` (or at `cap`), keep `h_t` before it and
/// give the last step the remainder `1 - Σ_{t<T} h_t`.
pub fn act_weights(halting_units: &[f64], eps: f64, cap: usize) -> Result<ActWeights> {
    if halting_units.is_empty() || cap == 0 {
        return Err(Error::Contract("adaptive halting needs at least one hop".into()));
    }
    let limit = cap.min(halting_units.len());
    let mut partial = 0.0;
    let mut probs = Vec::with_capacity(limit);
    for (t, &h) in halting_units.iter().take(limit).enumerate() {
        if partial + h >= 1.0 - eps || t + 1 == limit {
            let remainder = 1.0 - partial;
            probs.push(remainder);
            return Ok(ActWeights {
                hops: t + 1,
                probs,
                remainder,
            });
        }
        partial += h;
        probs.push(h);
    }
    unreachable!("loop always returns on its last iteration")
}

#[derive(Clone, Debug)]
pub struct ActEpisode {
    /// `Σ p_t a_t`.
    pub answer: Var,
    /// `T + R`; only the remainder carries gradient.
    pub ponder: Var,
    pub hops: usize,
    pub probs: Vec<f64>,
    pub weights: Vec<Tensor>,
}

/// Runs the model with adaptive computation time. The halting unit at each
/// hop is the policy's halt probability `1 - sigmoid(pi_t)`, and model and
/// policy share one tape so both receive gradient from the mixed answer.
#[allow(clippy::too_many_arguments)]
pub fn run_act_episode<R: Rng + ?Sized>(
    model: &MemoModel,
    policy: &HaltPolicy,
    tape: &mut Tape<'_>,
    model_bound: &Bound,
    policy_bound: &Bound,
    store: &MemoryStore,
    query: QueryState,
    answer: usize,
    max_hops: usize,
    mode: Mode,
    rng: &mut R,
) -> Result<ActEpisode> {
    if max_hops == 0 {
        return Err(Error::Config("max_hops must be at least 1".into()));
    }
    let mut state = query;
    let mut z = tape.leaf(policy.initial_state());
    let mut previous: Option<Tensor> = None;
    let mut units: Vec<Var> = Vec::new();
    let mut answers: Vec<Var> = Vec::new();
    let mut weights = Vec::new();
    let mut partial = 0.0;
    for t in 0..max_hops {
        let out = model.attention_hop(tape, model_bound, store, state, answer, mode, rng)?;
        let obs = build_observation(&out.weights, previous.as_ref(), t, policy.config.max_hops)?;
        let obs = tape.leaf(obs.to_row());
        let step = policy.step(tape, policy_bound, obs, z)?;
        let neg = tape.scale(step.logit, -1.0);
        let h = tape.sigmoid(neg);
        let hv = tape.value(h).item();
        answers.push(out.answer);
        previous = Some(out.weights.clone());
        weights.push(out.weights);
        z = step.state;
        state = out.next;
        if partial + hv >= 1.0 - ACT_EPSILON || t + 1 == max_hops {
            break;
        }
        partial += hv;
        units.push(h);
    }
    let one = tape.leaf(Tensor::scalar(1.0));
    let remainder = if units.is_empty() {
        one
    } else {
        let stacked = tape.concat_cols(&units)?;
        let spent = tape.sum(stacked);
        tape.sub(one, spent)?
    };
    let mut probs: Vec<f64> = units.iter().map(|&u| tape.value(u).item()).collect();
    probs.push(tape.value(remainder).item());
    let mut mixed = None;
    for (k, &a) in answers.iter().enumerate() {
        let p = if k < units.len() { units[k] } else { remainder };
        let term = tape.mul_scalar(a, p)?;
        mixed = Some(match mixed {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let hops = answers.len();
    let count = tape.leaf(Tensor::scalar(hops as f64));
    let ponder = tape.add(count, remainder)?;
    Ok(ActEpisode {
        answer: mixed.expect("at least one hop"),
        ponder,
        hops,
        probs,
        weights,
    })
}
