use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use memo_core::harness::metrics::read_metrics;
use memo_core::harness::RunConfig;
use memo_core::store::{read_dataset, TokenRecord};

fn memo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memo"))
        .args(args)
        .env_remove("MEMO_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"
model = "memo"
max_hops = 3
heads = 1
embed_width = 8
head_width = 12
answer_hidden = 12
dropout_attention = 0.1
dropout_output = 0.0
emn_position_encoding = true
lr_model = 0.01
lr_halt = 0.01
decay_power = 1.0
epochs = 4
updates_per_epoch = 2
batch_size = 4
eval_every = 2
eval_items = 6
seed = 3

[halting]
kind = "reinforce"

[task]
kind = "pai"
seq_len = 3
n_sequences = 16
n_classes = 60
d_emb = 8
instances = 20
noise = 0.5
feature_seed = 7

[policy]
gru_hidden = 8
mlp_hidden = 6
bias_init = 2.0

[reinforce]
gamma = 0.9
alpha = 0.01
beta = 0.01
hop_penalty_sign = "expected_hops"

[adam]
beta1 = 0.9
beta2 = 0.999
eps = 1e-8

[rmsprop]
decay = 0.9
eps = 1e-8
"#;

#[test]
fn gradcheck_passes() {
    let o = memo(&["gradcheck", "--seeds", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).matches(" ok").count(), 3);
}

#[test]
fn presets_print_as_loadable_toml() {
    let o = memo(&["config", "--preset", "ref-graph-20-3-3"]);
    assert!(o.status.success());
    let cfg = RunConfig::from_toml(&stdout(&o)).unwrap();
    assert_eq!(cfg, RunConfig::preset("ref-graph-20-3-3").unwrap());
    assert!(!memo(&["config", "--preset", "nope"]).status.success());
}

#[test]
fn generated_datasets_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let pai = dir.path().join("sub/pai.bin");
    let o = memo(&["gen-pai", "--seq-len", "4", "--count", "6", "--seed", "2", "--out", pai.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, records): (serde_json::Value, Vec<TokenRecord>) = read_dataset(&pai).unwrap();
    assert_eq!(header["count"], 6);
    assert_eq!(header["config"]["seq_len"], 4);
    assert_eq!(records.len(), 6);
    assert!(records.iter().all(|r| r.rows == 48 && r.cols == 3 && r.query.len() == 3));
    assert_eq!(records.iter().filter(|r| r.extras[0] == 0).count(), 3);

    let odd = memo(&["gen-pai", "--count", "5", "--out", pai.to_str().unwrap()]);
    assert!(!odd.status.success());
    assert!(stderr(&odd).contains("even"));

    let g = dir.path().join("g.bin");
    let args = ["gen-graph", "--n-nodes", "10", "--out-degree", "2", "--path-length", "2", "--count", "5"];
    let o = memo(&[&args[..], &["--out", g.to_str().unwrap()]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, records): (serde_json::Value, Vec<TokenRecord>) = read_dataset(&g).unwrap();
    assert_eq!(header["task"], "graph");
    assert!(records.iter().all(|r| r.rows == 20 && r.targets.len() == 1 && r.extras == vec![20]));
    let again = dir.path().join("g2.bin");
    memo(&[&args[..], &["--out", again.to_str().unwrap()]].concat());
    assert_eq!(fs::read(&g).unwrap(), fs::read(&again).unwrap());
}

fn write_babi(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    for t in 1..=20 {
        for split in ["train", "test"] {
            let text = "1 Mary went to the kitchen.\n2 John went to the garden.\n3 Where is Mary?\tkitchen\t1\n";
            fs::write(dir.join(format!("qa{t}_task_{split}.txt")), text).unwrap();
        }
    }
}

#[test]
fn ingest_babi_resolves_the_data_root() {
    let root = tempfile::tempdir().unwrap();
    write_babi(&root.path().join("babi/en-10k"));
    let out = root.path().join("ingested");
    let o = Command::new(env!("CARGO_BIN_EXE_memo"))
        .args(["ingest-babi", "--path", "babi/en-10k", "--out", out.to_str().unwrap()])
        .env("MEMO_DATA_ROOT", root.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let vocab = fs::read_to_string(out.join("vocab.txt")).unwrap();
    assert_eq!(vocab.lines().count(), 9);
    let (header, test): (serde_json::Value, Vec<TokenRecord>) = read_dataset(&out.join("test.bin")).unwrap();
    assert_eq!(header["vocab_size"], 9);
    assert_eq!(test.len(), 20);
    assert!(test.iter().all(|r| r.rows == 320 && r.cols == 11 && r.query.len() == 11));

    let missing = memo(&["ingest-babi", "--path", "babi/en-10k", "--out", out.to_str().unwrap()]);
    assert!(!missing.status.success());
    assert!(stderr(&missing).contains("qa1 train"));
}

#[test]
fn train_eval_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let (full, split) = (dir.path().join("full"), dir.path().join("split"));
    let train = |out: &Path, extra: &[&str]| {
        let base = ["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        let o = memo(&[&base[..], extra].concat());
        assert!(o.status.success(), "{}", stderr(&o));
        o
    };
    let o = train(&full, &[]);
    assert!(stdout(&o).contains("split: test"));
    train(&split, &["--until-epoch", "2", "--sequential"]);
    let last = split.join("last.ckpt");
    let o = memo(&["train", "--resume", last.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        read_metrics(&full.join("metrics.jsonl")).unwrap(),
        read_metrics(&split.join("metrics.jsonl")).unwrap()
    );

    let ckpt = full.join("last.ckpt");
    let eval = |extra: &[&str]| {
        let base = ["eval", "--checkpoint", ckpt.to_str().unwrap(), "--split", "valid", "--items", "6"];
        let o = memo(&[&base[..], extra].concat());
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    let a: serde_json::Value = serde_json::from_str(&eval(&["--json"])).unwrap();
    let b: serde_json::Value = serde_json::from_str(&eval(&["--json", "--sequential"])).unwrap();
    assert_eq!(a, b);
    assert!(eval(&[]).contains("match>lure"));
    let log = dir.path().join("eval.jsonl");
    eval(&["--metrics", log.to_str().unwrap()]);
    assert_eq!(read_metrics(&log).unwrap()[0].phase, "valid");

    let missing = memo(&["eval", "--checkpoint", "/nonexistent.ckpt"]);
    assert!(!missing.status.success());
}

#[test]
fn conflicting_flags_are_rejected() {
    let o = memo(&["train", "--preset", "desk", "--resume", "x.ckpt"]);
    assert!(!o.status.success());
}
