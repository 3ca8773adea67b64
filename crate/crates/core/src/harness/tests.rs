use super::config::PolicySizes;
use super::metrics::read_metrics;
use super::*;
use crate::halting::HaltingKind;
use crate::par::Exec;
use crate::tasks::graph::GraphConfig;
use crate::tasks::pai::PaiConfig;

fn tiny(task: TaskConfig) -> RunConfig {
    RunConfig {
        embed_width: 8,
        head_width: 12,
        answer_hidden: 12,
        heads: 1,
        policy: PolicySizes {
            gru_hidden: 8,
            mlp_hidden: 6,
            bias_init: 2.0,
        },
        max_hops: 3,
        epochs: 4,
        updates_per_epoch: 2,
        batch_size: 4,
        eval_every: 2,
        eval_items: 6,
        lr_model: 1e-2,
        lr_halt: 1e-2,
        ..RunConfig::reference(task)
    }
}

fn tiny_pai() -> RunConfig {
    let mut p = PaiConfig::new(3, 60, 8);
    p.instances = 20;
    tiny(TaskConfig::Pai(p))
}

fn tiny_graph() -> RunConfig {
    let mut c = tiny(TaskConfig::Graph(GraphConfig::new(6, 2, 3)));
    c.heads = 2;
    c
}

#[test]
fn parallel_and_sequential_batches_are_bitwise_equal() {
    for halting in [HaltingKind::Reinforce, HaltingKind::Act, HaltingKind::FixedK(2)] {
        let mut cfg = tiny_pai();
        cfg.halting = halting;
        cfg.batch_size = 18;
        let par = Trainer::new(RunConfig { exec: Exec::Parallel, ..cfg.clone() }).unwrap();
        let seq = Trainer::new(RunConfig { exec: Exec::Sequential, ..cfg }).unwrap();
        let (a, b) = (par.batch_outcome(3).unwrap(), seq.batch_outcome(3).unwrap());
        assert_eq!(a.model, b.model);
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.task_loss.to_bits(), b.task_loss.to_bits());
        assert_eq!(a.examples, 18);
    }
}

#[test]
fn every_halting_mode_trains_on_every_small_task() {
    for base in [tiny_pai(), tiny_graph()] {
        for halting in [
            HaltingKind::Reinforce,
            HaltingKind::Act,
            HaltingKind::FixedK(2),
            HaltingKind::Never,
        ] {
            let mut t = Trainer::new(RunConfig { halting, ..base.clone() }).unwrap();
            let before = t.learner.net.params().clone();
            let out = t.train_step().unwrap();
            assert!(out.task_loss.is_finite());
            assert!(out.hops <= out.answers * base.max_hops);
            assert_ne!(&before, t.learner.net.params());
            let r = t.evaluate(EvalSplit::Valid, 4).unwrap();
            assert!(r.loss.is_finite() && r.mean_hops >= 1.0 && r.mean_hops <= 3.0);
            assert!(!format_report(&r).is_empty());
        }
    }
    let mut emn = tiny_pai();
    emn.model = ModelKind::Emn;
    let mut t = Trainer::new(emn).unwrap();
    assert!(t.learner.policy.is_none());
    t.train_step().unwrap();
    let r = t.evaluate(EvalSplit::Test, 4).unwrap();
    assert_eq!(r.mean_hops, 3.0);
}

#[test]
fn policy_and_model_updates_are_isolated() {
    let mut t = Trainer::new(tiny_pai()).unwrap();
    for step in 0..5 {
        let out = t.batch_outcome(step).unwrap();
        let model = t.learner.net.params().clone();
        let policy = t.learner.policy.as_ref().unwrap().params.clone();
        t.apply_policy(&out).unwrap();
        assert_eq!(&model, t.learner.net.params());
        assert_ne!(policy, t.learner.policy.as_ref().unwrap().params);
        let policy = t.learner.policy.as_ref().unwrap().params.clone();
        t.apply_model(&out).unwrap();
        assert_eq!(policy, t.learner.policy.as_ref().unwrap().params);
        t.step += 1;
    }
}

#[test]
fn frozen_model_trains_only_the_policy() {
    let mut t = Trainer::new(tiny_pai()).unwrap();
    t.freeze_model = true;
    let model = t.learner.net.params().clone();
    for _ in 0..3 {
        let out = t.train_step().unwrap();
        assert!(out.model.is_none());
    }
    assert_eq!(&model, t.learner.net.params());
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (full, split) = (dir.path().join("full"), dir.path().join("split"));
    let cfg = tiny_pai();
    Trainer::new(cfg.clone()).unwrap().run(&full, None).unwrap();
    Trainer::new(cfg).unwrap().run(&split, Some(2)).unwrap();
    let mut resumed = Trainer::load(&split.join("last.ckpt")).unwrap();
    assert_eq!(resumed.step, 4);
    resumed.run(&split, None).unwrap();
    let a = read_metrics(&full.join("metrics.jsonl")).unwrap();
    let b = read_metrics(&split.join("metrics.jsonl")).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iter().filter(|r| r.phase == "train").count(), 4);
    assert_eq!(a.iter().filter(|r| r.phase == "valid").count(), 2);
    assert_eq!(a.last().unwrap().phase, "test");
    assert!(full.join("best.ckpt").exists());
}

#[test]
fn evaluation_from_a_checkpoint_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(tiny_graph()).unwrap();
    t.train_step().unwrap();
    let path = dir.path().join("c.ckpt");
    t.save(&path).unwrap();
    let back = Trainer::load(&path).unwrap();
    assert_eq!(back.learner.net.params(), t.learner.net.params());
    assert_eq!(back.adam, t.adam);
    assert_eq!(back.rmsprop, t.rmsprop);
    let (r1, r2) = (
        t.evaluate(EvalSplit::Valid, 5).unwrap(),
        back.evaluate(EvalSplit::Valid, 5).unwrap(),
    );
    assert_eq!(r1, r2);
    assert!(Trainer::load(&dir.path().join("missing.ckpt")).is_err());
}

#[test]
fn final_learning_rate_is_zero() {
    let t = Trainer::new(tiny_pai()).unwrap();
    let s = t.schedule();
    assert!(s.lr_at(t.cfg.total_updates()).abs() < 1e-12);
    assert_eq!(s.lr_at(0), t.cfg.lr_model);
}
