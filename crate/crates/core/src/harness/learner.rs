use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{argmax, Tape, Var};
use crate::emn::EmnModel;
use crate::error::{Error, Result};
use crate::halting::{
    reinforce_loss, run_act_episode, FixedHops, HaltDecider, HaltPolicy, HaltingKind, NeverHalt,
    PolicyRollout, ReinforceConfig,
};
use crate::input::{Example, QueryInput};
use crate::model::{AnswerFeed, MemoModel, Mode};
use crate::params::{Grads, ParamSet};
use crate::tasks::{Feed, Prediction, Predictor};

use super::config::{ModelKind, RunConfig};

#[derive(Clone, Debug)]
pub enum Net {
    Memo(MemoModel),
    Emn(EmnModel),
}

impl Net {
    pub fn params(&self) -> &ParamSet {
        match self {
            Net::Memo(m) => &m.params,
            Net::Emn(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Net::Memo(m) => &mut m.params,
            Net::Emn(m) => &mut m.params,
        }
    }
}

/// A model with its halting strategy.
#[derive(Clone, Debug)]
pub struct Learner {
    pub net: Net,
    /// Present for learned halting (REINFORCE or ACT) on MEMO.
    pub policy: Option<HaltPolicy>,
    pub halting: HaltingKind,
    pub max_hops: usize,
    pub reinforce: ReinforceConfig,
}

/// Gradients and statistics of one training example.
#[derive(Clone, Debug)]
pub struct ExampleOutcome {
    pub model: Option<Grads>,
    pub policy: Option<Grads>,
    pub task_loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub hop_loss: f64,
    pub hops: usize,
    pub answers: usize,
    pub correct: usize,
}

/// The next answer's query: the previous answer replaces the first token.
pub fn chain_query(q: &QueryInput, token: u32) -> QueryInput {
    q.with_first_token(token)
}

enum Decider<'p> {
    Rollout(PolicyRollout<'p>),
    Fixed(FixedHops),
    Never(NeverHalt),
}

impl Decider<'_> {
    fn as_dyn(&mut self) -> &mut dyn HaltDecider {
        match self {
            Decider::Rollout(r) => r,
            Decider::Fixed(f) => f,
            Decider::Never(n) => n,
        }
    }
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(cfg: &RunConfig, babi_tokens: Option<usize>, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let net = match cfg.model {
            ModelKind::Memo => Net::Memo(MemoModel::new(cfg.memo_config(babi_tokens)?, rng)?),
            ModelKind::Emn => Net::Emn(EmnModel::new(cfg.emn_config(babi_tokens)?, rng)?),
        };
        let learned = matches!(cfg.halting, HaltingKind::Reinforce | HaltingKind::Act);
        let policy = if cfg.model == ModelKind::Memo && learned {
            Some(HaltPolicy::new(cfg.policy_config(), rng)?)
        } else {
            None
        };
        Ok(Learner {
            net,
            policy,
            halting: cfg.halting,
            max_hops: cfg.max_hops,
            reinforce: cfg.reinforce.clone(),
        })
    }

    fn decider(&self, mode: Mode, seed: u64) -> Result<Decider<'_>> {
        Ok(match self.halting {
            HaltingKind::Reinforce => Decider::Rollout(PolicyRollout::new(self.policy_ref()?, mode, seed)),
            HaltingKind::FixedK(k) => Decider::Fixed(FixedHops(k)),
            HaltingKind::Never => Decider::Never(NeverHalt),
            HaltingKind::Act => return Err(Error::Contract("adaptive halting has no decider".into())),
        })
    }

    fn policy_ref(&self) -> Result<&HaltPolicy> {
        self.policy
            .as_ref()
            .ok_or_else(|| Error::Contract("learned halting without a policy".into()))
    }

    /// Teacher-forced forward and backward pass on one example. Model and
    /// policy gradients come from separate tapes except under ACT, where the
    /// mixed answer couples them by construction.
    pub fn example_grads(&self, ex: &Example, seed: u64, model: bool, policy: bool) -> Result<ExampleOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match (&self.net, self.halting) {
            (Net::Emn(m), _) => self.emn_grads(m, ex),
            (Net::Memo(m), HaltingKind::Act) => self.act_grads(m, ex, &mut rng, model, policy),
            (Net::Memo(m), _) => self.memo_grads(m, ex, &mut rng, model, policy),
        }
    }

    fn memo_grads(
        &self,
        m: &MemoModel,
        ex: &Example,
        rng: &mut ChaCha8Rng,
        want_model: bool,
        want_policy: bool,
    ) -> Result<ExampleOutcome> {
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let store = m.embed_memory(&mut tape, &bound, &ex.memory)?;
        let mut decider = self.decider(Mode::Train, rng.gen())?;
        let episode = m.run_multi_answer_episode(
            &mut tape,
            &bound,
            &store,
            &ex.query,
            &chain_query,
            AnswerFeed::GroundTruth(&ex.targets),
            decider.as_dyn(),
            self.max_hops,
            Mode::Train,
            rng,
        )?;
        let losses = episode
            .answers
            .iter()
            .zip(&ex.targets)
            .map(|(ep, &t)| tape.cross_entropy(ep.answer, t as usize))
            .collect::<Result<Vec<Var>>>()?;
        let stacked = tape.concat_cols(&losses)?;
        let loss = tape.sum(stacked);
        let task_loss = tape.value(loss).item();
        let model_grads = if want_model {
            tape.backward(loss)?;
            Some(m.params.grads_from(&tape, &bound))
        } else {
            None
        };
        let correct: Vec<bool> = episode.predictions.iter().zip(&ex.targets).map(|(p, t)| p == t).collect();
        let mut out = ExampleOutcome {
            model: model_grads,
            policy: None,
            task_loss,
            policy_loss: 0.0,
            value_loss: 0.0,
            hop_loss: 0.0,
            hops: episode.answers.iter().map(|e| e.hops()).sum(),
            answers: correct.len(),
            correct: correct.iter().filter(|&&c| c).count(),
        };
        if let (true, Decider::Rollout(rollout)) = (want_policy, decider) {
            let policy = self.policy_ref()?;
            let records = rollout.finish();
            let mut ptape = Tape::new();
            let pbound = policy.bind(&mut ptape);
            let mut totals = Vec::with_capacity(records.len());
            for (rec, &ok) in records.iter().zip(&correct) {
                let l = reinforce_loss(&mut ptape, policy, &pbound, rec, ok, &self.reinforce)?;
                out.policy_loss += l.policy;
                out.value_loss += l.value;
                out.hop_loss += l.hop;
                totals.push(l.total);
            }
            let stacked = ptape.concat_cols(&totals)?;
            let total = ptape.sum(stacked);
            ptape.backward(total)?;
            out.policy = Some(policy.params.grads_from(&ptape, &pbound));
        }
        Ok(out)
    }

    fn act_grads(
        &self,
        m: &MemoModel,
        ex: &Example,
        rng: &mut ChaCha8Rng,
        want_model: bool,
        want_policy: bool,
    ) -> Result<ExampleOutcome> {
        let policy = self.policy_ref()?;
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let pbound = policy.bind(&mut tape);
        let store = m.embed_memory(&mut tape, &bound, &ex.memory)?;
        let mut query = ex.query.clone();
        let mut terms = Vec::new();
        let (mut task_loss, mut ponder, mut hops, mut correct) = (0.0, 0.0, 0, 0);
        for (a, &target) in ex.targets.iter().enumerate().take(m.config.answers) {
            let state = m.embed_query(&mut tape, &bound, &query, a)?;
            let ep = run_act_episode(
                m, policy, &mut tape, &bound, &pbound, &store, state, a, self.max_hops, Mode::Train, rng,
            )?;
            let ce = tape.cross_entropy(ep.answer, target as usize)?;
            task_loss += tape.value(ce).item();
            ponder += tape.value(ep.ponder).item();
            hops += ep.hops;
            correct += usize::from(argmax(tape.value(ep.answer).data()) as u32 == target);
            let weighted = tape.scale(ep.ponder, self.reinforce.beta);
            terms.push(tape.add(ce, weighted)?);
            query = chain_query(&query, target);
        }
        let stacked = tape.concat_cols(&terms)?;
        let loss = tape.sum(stacked);
        tape.backward(loss)?;
        Ok(ExampleOutcome {
            model: want_model.then(|| m.params.grads_from(&tape, &bound)),
            policy: want_policy.then(|| policy.params.grads_from(&tape, &pbound)),
            task_loss,
            policy_loss: 0.0,
            value_loss: 0.0,
            hop_loss: ponder,
            hops,
            answers: terms.len(),
            correct,
        })
    }

    fn emn_grads(&self, m: &EmnModel, ex: &Example) -> Result<ExampleOutcome> {
        let target = single_target(ex)?;
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let memory = m.embed_memory(&mut tape, &bound, &ex.memory)?;
        let q = m.embed_query(&mut tape, &bound, &ex.query)?;
        let ep = m.run_episode(&mut tape, &bound, memory, q)?;
        let loss = tape.cross_entropy(ep.answer, target as usize)?;
        let task_loss = tape.value(loss).item();
        let correct = argmax(tape.value(ep.answer).data()) as u32 == target;
        tape.backward(loss)?;
        Ok(ExampleOutcome {
            model: Some(m.params.grads_from(&tape, &bound)),
            policy: None,
            task_loss,
            policy_loss: 0.0,
            value_loss: 0.0,
            hop_loss: 0.0,
            hops: m.config.hops,
            answers: 1,
            correct: usize::from(correct),
        })
    }

    fn predict_memo(&self, m: &MemoModel, ex: &Example, feed: Feed, seed: u64) -> Result<Prediction> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let store = m.embed_memory(&mut tape, &bound, &ex.memory)?;
        if self.halting == HaltingKind::Act {
            let policy = self.policy_ref()?;
            let pbound = policy.bind(&mut tape);
            let mut query = ex.query.clone();
            let mut pred = Prediction {
                distributions: Vec::new(),
                hops: Vec::new(),
            };
            for a in 0..m.config.answers {
                let state = m.embed_query(&mut tape, &bound, &query, a)?;
                let ep = run_act_episode(
                    m, policy, &mut tape, &bound, &pbound, &store, state, a, self.max_hops, Mode::Eval, &mut rng,
                )?;
                let dist = tape.value(ep.answer).data().to_vec();
                let fed = match feed {
                    Feed::Predicted => argmax(&dist) as u32,
                    Feed::GroundTruth => *ex.targets.get(a).unwrap_or(&0),
                };
                pred.distributions.push(dist);
                pred.hops.push(ep.hops);
                query = chain_query(&query, fed);
            }
            return Ok(pred);
        }
        let mut decider = self.decider(Mode::Eval, rng.gen())?;
        let feed = match feed {
            Feed::Predicted => AnswerFeed::Predicted,
            Feed::GroundTruth => AnswerFeed::GroundTruth(&ex.targets),
        };
        let episode = m.run_multi_answer_episode(
            &mut tape,
            &bound,
            &store,
            &ex.query,
            &chain_query,
            feed,
            decider.as_dyn(),
            self.max_hops,
            Mode::Eval,
            &mut rng,
        )?;
        Ok(Prediction {
            distributions: episode
                .answers
                .iter()
                .map(|e| tape.value(e.answer).data().to_vec())
                .collect(),
            hops: episode.answers.iter().map(|e| e.hops()).collect(),
        })
    }

    fn predict_emn(&self, m: &EmnModel, ex: &Example) -> Result<Prediction> {
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let memory = m.embed_memory(&mut tape, &bound, &ex.memory)?;
        let q = m.embed_query(&mut tape, &bound, &ex.query)?;
        let ep = m.run_episode(&mut tape, &bound, memory, q)?;
        Ok(Prediction {
            distributions: vec![tape.value(ep.answer).data().to_vec()],
            hops: vec![m.config.hops],
        })
    }
}

fn single_target(ex: &Example) -> Result<u32> {
    match ex.targets.as_slice() {
        [t] => Ok(*t),
        t => Err(Error::Contract(format!("single-answer model given {} targets", t.len()))),
    }
}

impl Predictor for Learner {
    fn predict(&self, example: &Example, feed: Feed, seed: u64) -> Result<Prediction> {
        match &self.net {
            Net::Memo(m) => self.predict_memo(m, example, feed, seed),
            Net::Emn(m) => self.predict_emn(m, example),
        }
    }
}
