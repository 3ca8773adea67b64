use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_observation, sample_action, Action, HaltDecider, HaltObservation};
use crate::autodiff::{sigmoid, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::Mode;
use crate::params::{Bound, ParamId, ParamSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub heads: usize,
    pub max_hops: usize,
    pub gru_hidden: usize,
    pub mlp_hidden: usize,
    /// Initial bias of the continue logit.
    pub bias_init: f64,
}

impl PolicyConfig {
    pub fn new(heads: usize, max_hops: usize, bias_init: f64) -> Self {
        PolicyConfig {
            heads,
            max_hops,
            gru_hidden: 256,
            mlp_hidden: 64,
            bias_init,
        }
    }

    pub fn observation_width(&self) -> usize {
        self.heads + self.max_hops
    }
}

/// GRU over halting observations followed by a one-hidden-layer MLP with two
/// outputs: the state value and the continue logit.
#[derive(Clone, Debug)]
pub struct HaltPolicy {
    pub config: PolicyConfig,
    pub params: ParamSet,
    w_x: ParamId,
    w_z: ParamId,
    b_x: ParamId,
    b_z: ParamId,
    w_hidden: ParamId,
    b_hidden: ParamId,
    w_out: ParamId,
    b_out: ParamId,
}

/// Tape handles produced by one policy step.
#[derive(Clone, Copy, Debug)]
pub struct PolicyStep {
    pub state: Var,
    pub value: Var,
    pub logit: Var,
}

impl HaltPolicy {
    /// Output weights start at zero so the first continue probability is
    /// exactly `sigmoid(bias_init)`.
    pub fn new<R: Rng + ?Sized>(config: PolicyConfig, rng: &mut R) -> Result<Self> {
        if config.heads == 0 || config.max_hops == 0 || config.gru_hidden == 0 || config.mlp_hidden == 0
        {
            return Err(Error::Config("policy dimensions must be at least 1".into()));
        }
        let (inp, hid, mlp) = (config.observation_width(), config.gru_hidden, config.mlp_hidden);
        let mut params = ParamSet::new();
        let w_x = params.add_uniform("gru.w_x", inp, 3 * hid, rng);
        let w_z = params.add_uniform("gru.w_z", hid, 3 * hid, rng);
        let b_x = params.add("gru.b_x", Tensor::zeros(1, 3 * hid));
        let b_z = params.add("gru.b_z", Tensor::zeros(1, 3 * hid));
        let w_hidden = params.add_uniform("mlp.w_hidden", hid, mlp, rng);
        let b_hidden = params.add("mlp.b_hidden", Tensor::zeros(1, mlp));
        let w_out = params.add("mlp.w_out", Tensor::zeros(mlp, 2));
        let b_out = params.add("mlp.b_out", Tensor::row(vec![0.0, config.bias_init]));
        Ok(HaltPolicy {
            config,
            params,
            w_x,
            w_z,
            b_x,
            b_z,
            w_hidden,
            b_hidden,
            w_out,
            b_out,
        })
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Bound {
        self.params.bind(tape)
    }

    pub fn initial_state(&self) -> Tensor {
        Tensor::zeros(1, self.config.gru_hidden)
    }

    /// One recurrent step on the tape: `z_t = GRU(z_{t-1}, s_t)`, then
    /// `(v_t, pi_t) = MLP(z_t)`. The continue probability is `sigmoid(pi_t)`.
    pub fn step(
        &self,
        tape: &mut Tape<'_>,
        bound: &Bound,
        obs: Var,
        z_prev: Var,
    ) -> Result<PolicyStep> {
        let h = self.config.gru_hidden;
        let gx = tape.matmul(obs, bound.var(self.w_x))?;
        let gx = tape.add_row(gx, bound.var(self.b_x))?;
        let gz = tape.matmul(z_prev, bound.var(self.w_z))?;
        let gz = tape.add_row(gz, bound.var(self.b_z))?;
        let (xr, zr) = (tape.slice_cols(gx, 0, h)?, tape.slice_cols(gz, 0, h)?);
        let (xu, zu) = (tape.slice_cols(gx, h, h)?, tape.slice_cols(gz, h, h)?);
        let (xn, zn) = (tape.slice_cols(gx, 2 * h, h)?, tape.slice_cols(gz, 2 * h, h)?);
        let r = tape.add(xr, zr)?;
        let r = tape.sigmoid(r);
        let u = tape.add(xu, zu)?;
        let u = tape.sigmoid(u);
        let gated = tape.mul(r, zn)?;
        let n = tape.add(xn, gated)?;
        let n = tape.tanh(n);
        let diff = tape.sub(z_prev, n)?;
        let keep = tape.mul(u, diff)?;
        let state = tape.add(n, keep)?;

        let hidden = tape.matmul(state, bound.var(self.w_hidden))?;
        let hidden = tape.add_row(hidden, bound.var(self.b_hidden))?;
        let hidden = tape.relu(hidden);
        let out = tape.matmul(hidden, bound.var(self.w_out))?;
        let out = tape.add_row(out, bound.var(self.b_out))?;
        let value = tape.slice_cols(out, 0, 1)?;
        let logit = tape.slice_cols(out, 1, 1)?;
        Ok(PolicyStep {
            state,
            value,
            logit,
        })
    }

    /// Forward-only step: `(z_t, v_t, h_t)`.
    pub fn evaluate(&self, obs: &HaltObservation, z_prev: &Tensor) -> Result<(Tensor, f64, f64)> {
        let row = obs.to_row();
        if row.cols() != self.config.observation_width() {
            return Err(Error::Dimension {
                op: "policy_step",
                lhs: row.shape(),
                rhs: (1, self.config.observation_width()),
            });
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let o = tape.leaf(row);
        let z = tape.leaf(z_prev.clone());
        let step = self.step(&mut tape, &bound, o, z)?;
        Ok((
            tape.value(step.state).clone(),
            tape.value(step.value).item(),
            sigmoid(tape.value(step.logit).item()),
        ))
    }
}

/// One visited halting state.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub observation: HaltObservation,
    pub value: f64,
    pub continue_prob: f64,
    pub action: Action,
    /// False when the hop cap forced the halt and the action had no effect.
    pub sampled: bool,
}

/// Runs the learned policy while the model hops and records every decision
/// for a later REINFORCE update. The GRU state is reset per answer.
pub struct PolicyRollout<'p> {
    policy: &'p HaltPolicy,
    mode: Mode,
    rng: ChaCha8Rng,
    z: Tensor,
    previous: Option<Tensor>,
    current: Vec<StepRecord>,
    pub episodes: Vec<Vec<StepRecord>>,
}

impl<'p> PolicyRollout<'p> {
    pub fn new(policy: &'p HaltPolicy, mode: Mode, seed: u64) -> Self {
        PolicyRollout {
            policy,
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            z: policy.initial_state(),
            previous: None,
            current: Vec::new(),
            episodes: Vec::new(),
        }
    }

    /// Records of every finished answer, including the one in progress.
    pub fn finish(mut self) -> Vec<Vec<StepRecord>> {
        if !self.current.is_empty() {
            self.episodes.push(std::mem::take(&mut self.current));
        }
        self.episodes
    }
}

impl HaltDecider for PolicyRollout<'_> {
    fn decide(&mut self, hop: usize, weights: &Tensor) -> Result<bool> {
        let cap = self.policy.config.max_hops;
        let observation = build_observation(weights, self.previous.as_ref(), hop, cap)?;
        let (z, value, continue_prob) = self.policy.evaluate(&observation, &self.z)?;
        self.z = z;
        self.previous = Some(weights.clone());
        let sampled = hop + 1 < cap;
        let action = if sampled {
            sample_action(continue_prob, self.mode, &mut self.rng)
        } else {
            Action::Halt
        };
        self.current.push(StepRecord {
            observation,
            value,
            continue_prob,
            action,
            sampled,
        });
        Ok(action == Action::Continue)
    }

    fn reset(&mut self) {
        if !self.current.is_empty() {
            self.episodes.push(std::mem::take(&mut self.current));
        }
        self.z = self.policy.initial_state();
        self.previous = None;
    }
}
