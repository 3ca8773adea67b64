use serde::{Deserialize, Serialize};

use super::{Action, HaltPolicy, StepRecord};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::Bound;

/// Sign applied to the summed continue probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HopPenaltySign {
    /// `+Σ h_t`: minimizing the loss lowers the expected hop count.
    ExpectedHops,
    /// `-Σ h_t`, the sign as printed alongside the objective.
    Printed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReinforceConfig {
    pub gamma: f64,
    /// Value-loss weight.
    pub alpha: f64,
    /// Hop-penalty weight.
    pub beta: f64,
    /// Look-ahead horizon; `None` uses the full remaining episode.
    pub horizon: Option<usize>,
    pub hop_penalty_sign: HopPenaltySign,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        ReinforceConfig {
            gamma: 0.9,
            alpha: 0.01,
            beta: 0.01,
            horizon: None,
            hop_penalty_sign: HopPenaltySign::ExpectedHops,
        }
    }
}

/// Everything the REINFORCE objective needs about one finished episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeReturns {
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub continue_probs: Vec<f64>,
    pub actions: Vec<Action>,
    pub returns: Vec<f64>,
    pub gamma: f64,
}

impl EpisodeReturns {
    /// Reward 1 on the answering (last) step iff the answer was right.
    pub fn from_records(
        records: &[StepRecord],
        correct: bool,
        gamma: f64,
        horizon: Option<usize>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Contract("episode has no steps".into()));
        }
        let mut rewards = vec![0.0; records.len()];
        if correct {
            *rewards.last_mut().expect("non-empty") = 1.0;
        }
        let values: Vec<f64> = records.iter().map(|r| r.value).collect();
        let returns = n_step_returns(&rewards, &values, gamma, horizon);
        Ok(EpisodeReturns {
            rewards,
            values,
            continue_probs: records.iter().map(|r| r.continue_prob).collect(),
            actions: records.iter().map(|r| r.action).collect(),
            returns,
            gamma,
        })
    }
}

/// `R_t = Σ_{i<n} γ^i r_{t+i} + γ^n V(s_{t+n})`, with `V = 0` past the end
/// of the episode. `horizon = None` gives the full discounted return.
pub fn n_step_returns(rewards: &[f64], values: &[f64], gamma: f64, horizon: Option<usize>) -> Vec<f64> {
    let len = rewards.len();
    let n = horizon.unwrap_or(len).max(1);
    (0..len)
        .map(|t| {
            let mut total = 0.0;
            let mut discount = 1.0;
            for i in 0..n {
                if t + i >= len {
                    return total;
                }
                total += discount * rewards[t + i];
                discount *= gamma;
            }
            if t + n < len {
                total += discount * values[t + n];
            }
            total
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ReinforceLoss {
    pub total: Var,
    pub policy: f64,
    pub value: f64,
    pub hop: f64,
    pub returns: EpisodeReturns,
}

/// Rebuilds the recorded episode on `tape` from its stored observations and
/// returns `L_pi + alpha L_V + beta L_Hop`. Returns and advantages are
/// constants; the model never appears on this tape, so no gradient reaches
/// it.
pub fn reinforce_loss(
    tape: &mut Tape<'_>,
    policy: &HaltPolicy,
    bound: &Bound,
    records: &[StepRecord],
    correct: bool,
    cfg: &ReinforceConfig,
) -> Result<ReinforceLoss> {
    if records.is_empty() {
        return Err(Error::Contract("episode has no steps".into()));
    }
    let mut z = tape.leaf(policy.initial_state());
    let mut steps = Vec::with_capacity(records.len());
    for r in records {
        let obs = tape.leaf(r.observation.to_row());
        let step = policy.step(tape, bound, obs, z)?;
        z = step.state;
        steps.push(step);
    }
    let values: Vec<f64> = steps.iter().map(|s| tape.value(s.value).item()).collect();
    let mut rewards = vec![0.0; records.len()];
    if correct {
        *rewards.last_mut().expect("non-empty") = 1.0;
    }
    let returns = n_step_returns(&rewards, &values, cfg.gamma, cfg.horizon);

    let mut policy_terms = Vec::new();
    let mut value_terms = Vec::new();
    let mut hop_terms = Vec::new();
    for (t, (step, record)) in steps.iter().zip(records).enumerate() {
        let advantage = returns[t] - values[t];
        if record.sampled {
            let signed = match record.action {
                Action::Continue => step.logit,
                Action::Halt => tape.scale(step.logit, -1.0),
            };
            let log_prob = tape.log_sigmoid(signed);
            policy_terms.push(tape.scale(log_prob, -advantage));
        }
        let target = tape.leaf(Tensor::scalar(returns[t]));
        let err = tape.sub(target, step.value)?;
        value_terms.push(tape.mul(err, err)?);
        hop_terms.push(tape.sigmoid(step.logit));
    }
    let sum = |tape: &mut Tape<'_>, terms: &[Var]| -> Result<Var> {
        if terms.is_empty() {
            return Ok(tape.leaf(Tensor::scalar(0.0)));
        }
        let stacked = tape.concat_cols(terms)?;
        Ok(tape.sum(stacked))
    };
    let l_pi = sum(tape, &policy_terms)?;
    let l_v = sum(tape, &value_terms)?;
    let l_hop = sum(tape, &hop_terms)?;
    let sign = match cfg.hop_penalty_sign {
        HopPenaltySign::ExpectedHops => 1.0,
        HopPenaltySign::Printed => -1.0,
    };
    let weighted_v = tape.scale(l_v, cfg.alpha);
    let weighted_hop = tape.scale(l_hop, sign * cfg.beta);
    let total = tape.add(l_pi, weighted_v)?;
    let total = tape.add(total, weighted_hop)?;

    let returns = EpisodeReturns {
        rewards,
        values,
        continue_probs: records.iter().map(|r| r.continue_prob).collect(),
        actions: records.iter().map(|r| r.action).collect(),
        returns,
        gamma: cfg.gamma,
    };
    Ok(ReinforceLoss {
        total,
        policy: tape.value(l_pi).item(),
        value: tape.value(l_v).item(),
        hop: tape.value(l_hop).item(),
        returns,
    })
}
