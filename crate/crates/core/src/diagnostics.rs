//! Finite-difference checks over whole parameter sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::gradcheck::{self, relative_error};
use crate::autodiff::{Tape, Tensor, Var, DEFAULT_STEP};
use crate::error::Result;
use crate::halting::FixedHops;
use crate::input::{ItemGrid, QueryInput};
use crate::model::{AblationFlags, InputSpace, MemoConfig, MemoModel, Mode, QuerySpace};
use crate::params::{Bound, ParamSet};

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub relative_error: f64,
    /// Euclidean norm of the analytic gradient.
    pub gradient_norm: f64,
}

/// Compares tape gradients of `loss` with respect to every parameter in
/// `params` against central differences. `loss` must be deterministic: any
/// dropout inside it has to draw from a generator it seeds itself.
pub fn check_params<F>(params: &ParamSet, step: f64, loss: F) -> Result<Vec<ParamCheck>>
where
    F: for<'a> Fn(&'a ParamSet, &mut Tape<'a>, &Bound) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let l = loss(params, &mut tape, &bound)?;
        tape.backward(l)?;
        params.grads_from(&tape, &bound)
    };
    let eval = |set: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = set.bind(&mut tape);
        let l = loss(set, &mut tape, &bound)?;
        Ok(tape.value(l).item())
    };
    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for (k, param) in params.iter().enumerate() {
        let (rows, cols) = param.value.shape();
        let mut numeric = Tensor::zeros(rows, cols);
        for j in 0..param.value.len() {
            let orig = param.value.data()[j];
            work.iter_mut().nth(k).expect("same length").value.data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work.iter_mut().nth(k).expect("same length").value.data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work.iter_mut().nth(k).expect("same length").value.data_mut()[j] = orig;
            numeric.data_mut()[j] = (plus - minus) / (2.0 * step);
        }
        out.push(ParamCheck {
            name: param.name.clone(),
            relative_error: relative_error(&analytic.0[k], &numeric),
            gradient_norm: analytic.0[k].data().iter().map(|x| x * x).sum::<f64>().sqrt(),
        });
    }
    Ok(out)
}

/// Largest error of a [`check_params`] report. A report whose gradients
/// all vanish compares nothing and counts as a failure.
pub fn worst(report: &[ParamCheck]) -> f64 {
    if report.iter().all(|c| c.gradient_norm == 0.0) {
        return f64::INFINITY;
    }
    report.iter().map(|c| c.relative_error).fold(0.0, f64::max)
}

fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(rows, cols, 1.0, rng)
}

/// Worst finite-difference error over one graph that uses every
/// differentiable tape operation, with inputs drawn from `seed`.
pub fn op_suite_check(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = [
        random_tensor(2, 3, &mut rng),
        random_tensor(2, 3, &mut rng),
        random_tensor(1, 3, &mut rng),
        random_tensor(1, 1, &mut rng),
        random_tensor(4, 3, &mut rng),
        random_tensor(3, 4, &mut rng),
        random_tensor(2, 3, &mut rng),
        random_tensor(2, 6, &mut rng),
    ];
    let mask_seed = rng.gen::<u64>();
    let target = rng.gen_range(0..4);
    let weights = random_tensor(2, 6, &mut rng);
    let gc = gradcheck::check(&inputs, DEFAULT_STEP, |t, v| {
        let s = t.add(v[0], v[1])?;
        let d = t.sub(s, v[1])?;
        let m = t.mul(d, v[1])?;
        let r = t.add_row(m, v[2])?;
        let sig = t.sigmoid(r);
        let th = t.tanh(v[0]);
        let ls = t.log_sigmoid(v[1]);
        let cat = t.concat_cols(&[sig, th])?;
        let rows = t.concat_rows(&[ls, v[2]])?;
        let sl = t.slice_cols(cat, 1, 3)?;
        let sr = t.slice_rows(rows, 1, 2)?;
        let ms = t.mul_scalar(sl, v[3])?;
        let tr = t.transpose(sr);
        let tt = t.transpose(tr);
        let prod = t.matmul_nt(ms, tt)?;
        let g = t.gather_rows(v[4], &[Some(2), None, Some(0), Some(2)])?;
        let gf = t.flatten(g);
        let gu = t.unflatten(gf, 2, 6)?;
        let gr = t.relu(gu);
        let sc = t.scale(gr, 0.7);
        let lg = t.sigmoid(sc);
        let lg = t.log(lg);
        let mm = t.matmul(v[0], v[5])?;
        let sm = t.softmax(mm)?;
        let first = t.slice_rows(sm, 0, 1)?;
        let ce = t.cross_entropy(first, target)?;
        let gain = t.slice_rows(v[6], 0, 1)?;
        let bias = t.slice_rows(v[6], 1, 1)?;
        let ln = t.layer_norm(v[1], gain, bias)?;
        let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let dr = t.dropout(v[7], 0.3, true, &mut mask_rng)?;
        let rs = t.reshape(dr, 3, 4)?;
        let w = t.leaf(weights.clone());
        let lw = t.mul(lg, w)?;
        let parts = [t.sum(prod), t.sum(lw), ce, t.sum(ln), t.sum(rs)];
        let mut total = parts[0];
        for &p in &parts[1..] {
            total = t.add(total, p)?;
        }
        Ok(total)
    })?;
    Ok(gc.max_relative_error())
}

/// Small token-input model used by [`memo_two_hop_check`].
pub fn two_hop_config() -> MemoConfig {
    MemoConfig {
        memory_slots: 3,
        items_per_slot: 2,
        input: InputSpace::OneHot { vocab: 6 },
        query: QuerySpace::Tokens { len: 2 },
        output_classes: 6,
        embed_width: 4,
        head_width: 3,
        answer_hidden: 8,
        heads: 2,
        dropout_attention: 0.2,
        dropout_output: 0.2,
        answers: 1,
        time_encoding: false,
        ablation: AblationFlags::default(),
    }
}

/// Worst parameter-gradient error of a full two-hop episode loss, with
/// dropout active under a fixed mask.
pub fn memo_two_hop_check(cfg: &MemoConfig, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = MemoModel::new(cfg.clone(), &mut rng)?;
    let vocab = cfg.input.width() as u32;
    let ids = (0..cfg.memory_slots * cfg.items_per_slot).map(|_| rng.gen_range(0..vocab)).collect();
    let grid = ItemGrid::tokens(cfg.memory_slots, cfg.items_per_slot, ids)?;
    let len = match cfg.query {
        QuerySpace::Tokens { len } => len,
        QuerySpace::Dense { .. } => return Err(crate::Error::Config("two-hop check needs token queries".into())),
    };
    let query = QueryInput::Tokens((0..len).map(|_| rng.gen_range(1..vocab)).collect());
    let target = rng.gen_range(0..cfg.output_classes);
    let mask_seed = rng.gen::<u64>();
    let report = check_params(&model.params, DEFAULT_STEP, |_, tape, bound| {
        let mut drop_rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let store = model.embed_memory(tape, bound, &grid)?;
        let q = model.embed_query(tape, bound, &query, 0)?;
        let ep = model.run_episode(tape, bound, &store, q, 0, &mut FixedHops(2), 2, Mode::Train, &mut drop_rng)?;
        tape.cross_entropy(ep.answer, target)
    })?;
    Ok(worst(&report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_on_one_seed() {
        assert!(op_suite_check(3).unwrap() < 1e-5);
        assert!(memo_two_hop_check(&two_hop_config(), 3).unwrap() < 1e-4);
    }
}
