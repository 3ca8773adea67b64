//! Paired associative inference.
//!
//! A store holds `N` sequences of distinct items. Every adjacent pair of a
//! sequence becomes one memory row, so items of one sequence are linked only
//! through shared members of different rows. A query shows a cue, its match
//! (a later item of the cue's sequence), and a lure (the item at the match's
//! position in another sequence); the target is the match's class.
//!
//! Items are `(class, instance)` pairs. An item's feature vector is its class
//! prototype plus instance noise, normalized; both are fixed pseudo-random
//! vectors derived from the ids. Splits draw instances from disjoint ranges
//! and share classes.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{entry_seed, Feed, Predictor};
use crate::error::{Error, Result};
use crate::input::{Example, ItemGrid, QueryInput};
use crate::par::{self, Exec};

/// Items per memory row: the pair plus one zero item.
pub const PAI_SLOT_ITEMS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaiConfig {
    pub seq_len: usize,
    pub n_sequences: usize,
    pub n_classes: usize,
    pub d_emb: usize,
    /// Distinct instances per class in each split.
    pub instances: u32,
    /// Scale of the per-instance noise added to the class prototype.
    pub noise: f64,
    /// Seed of the fixed item feature vectors.
    pub feature_seed: u64,
}

impl PaiConfig {
    pub fn new(seq_len: usize, n_classes: usize, d_emb: usize) -> Self {
        PaiConfig {
            seq_len,
            n_sequences: 16,
            n_classes,
            d_emb,
            instances: 1000,
            noise: 0.5,
            feature_seed: 0x5EED,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=26).contains(&self.seq_len) {
            return Err(Error::Config(format!("seq_len {} outside 2..=26", self.seq_len)));
        }
        if self.n_sequences < 2 {
            return Err(Error::Config("a lure needs at least two sequences".into()));
        }
        if self.n_classes < self.n_sequences * self.seq_len {
            return Err(Error::Config(format!(
                "{} classes cannot fill {} sequences of length {} without repeats",
                self.n_classes, self.n_sequences, self.seq_len
            )));
        }
        if self.d_emb == 0 || self.instances == 0 {
            return Err(Error::Config("d_emb and instances must be at least 1".into()));
        }
        Ok(())
    }

    /// Memory rows per store.
    pub fn memory_slots(&self) -> usize {
        self.n_sequences * (self.seq_len - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    fn instance_offset(self) -> u32 {
        match self {
            Split::Train => 0,
            Split::Valid => 1 << 20,
            Split::Test => 2 << 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Item {
    pub class: u32,
    pub instance: u32,
}

impl Item {
    /// Non-zero token used by the serialized container.
    pub fn token(self, n_classes: usize) -> u32 {
        1 + self.class + n_classes as u32 * self.instance
    }

    pub fn from_token(token: u32, n_classes: usize) -> Option<Item> {
        let t = token.checked_sub(1)?;
        Some(Item {
            class: t % n_classes as u32,
            instance: t / n_classes as u32,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaiStore {
    pub sequences: Vec<Vec<Item>>,
    /// Row `r` holds `sequences[s][p]` and `sequences[s][p + 1]` for
    /// `rows[r] = (s, p)`.
    pub rows: Vec<(usize, usize)>,
}

impl PaiStore {
    pub fn row_items(&self, r: usize) -> (Item, Item) {
        let (s, p) = self.rows[r];
        (self.sequences[s][p], self.sequences[s][p + 1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Direct,
    Indirect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaiQuery {
    pub sequence: usize,
    pub cue_pos: usize,
    pub match_pos: usize,
    pub lure_sequence: usize,
    /// Match in the second slot of the concatenation (lure in the third).
    pub match_first: bool,
}

impl PaiQuery {
    pub fn kind(&self) -> QueryKind {
        if self.match_pos == self.cue_pos + 1 {
            QueryKind::Direct
        } else {
            QueryKind::Indirect
        }
    }

    /// Positions between cue and match along the sequence.
    pub fn distance(&self) -> usize {
        self.match_pos - self.cue_pos
    }

    /// `"A-C"` style type label.
    pub fn label(&self) -> String {
        let letter = |p: usize| (b'A' + p as u8) as char;
        format!("{}-{}", letter(self.cue_pos), letter(self.match_pos))
    }

    pub fn cue(&self, store: &PaiStore) -> Item {
        store.sequences[self.sequence][self.cue_pos]
    }

    pub fn matched(&self, store: &PaiStore) -> Item {
        store.sequences[self.sequence][self.match_pos]
    }

    pub fn lure(&self, store: &PaiStore) -> Item {
        store.sequences[self.lure_sequence][self.match_pos]
    }

    /// Cue, then match and lure in presentation order.
    pub fn presented(&self, store: &PaiStore) -> [Item; 3] {
        let (m, l) = (self.matched(store), self.lure(store));
        if self.match_first {
            [self.cue(store), m, l]
        } else {
            [self.cue(store), l, m]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PaiEntry {
    pub store: PaiStore,
    pub query: PaiQuery,
    pub example: Example,
}

fn unit_gaussian(seed: u64, width: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..width).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Feature vector of `item`: unit-norm `prototype(class) + noise · u(item)`.
pub fn item_features(cfg: &PaiConfig, item: Item) -> Vec<f64> {
    let proto = unit_gaussian(entry_seed(cfg.feature_seed, item.class as u64), cfg.d_emb);
    let key = ((item.class as u64) << 32) | item.instance as u64;
    let noise = unit_gaussian(entry_seed(cfg.feature_seed ^ 0xA5A5_A5A5, key), cfg.d_emb);
    let mut v: Vec<f64> = proto.iter().zip(&noise).map(|(p, n)| p + cfg.noise * n).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Fresh store: distinct classes throughout, every adjacent pair stored
/// once, rows shuffled.
pub fn generate_store<R: Rng + ?Sized>(cfg: &PaiConfig, split: Split, rng: &mut R) -> Result<PaiStore> {
    cfg.validate()?;
    let total = cfg.n_sequences * cfg.seq_len;
    let classes = rand::seq::index::sample(rng, cfg.n_classes, total).into_vec();
    let sequences: Vec<Vec<Item>> = classes
        .chunks(cfg.seq_len)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&c| Item {
                    class: c as u32,
                    instance: split.instance_offset() + rng.gen_range(0..cfg.instances),
                })
                .collect()
        })
        .collect();
    let mut rows: Vec<(usize, usize)> = (0..cfg.n_sequences)
        .flat_map(|s| (0..cfg.seq_len - 1).map(move |p| (s, p)))
        .collect();
    rows.shuffle(rng);
    Ok(PaiStore { sequences, rows })
}

/// Every query the store supports: each ordered pair of positions within a
/// sequence, each lure sequence, and both presentation orders.
pub fn enumerate_queries(store: &PaiStore) -> Vec<PaiQuery> {
    let n = store.sequences.len();
    let len = store.sequences.first().map_or(0, Vec::len);
    let mut out = Vec::new();
    for s in 0..n {
        for i in 0..len {
            for j in i + 1..len {
                for t in (0..n).filter(|&t| t != s) {
                    for match_first in [true, false] {
                        out.push(PaiQuery {
                            sequence: s,
                            cue_pos: i,
                            match_pos: j,
                            lure_sequence: t,
                            match_first,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Uniform draw among the store's queries of the given kind. Every
/// combination of sequence, position pair, lure sequence, and order appears
/// equally often in the enumeration, so drawing the parts independently is
/// the same distribution.
pub fn sample_query<R: Rng + ?Sized>(store: &PaiStore, kind: QueryKind, rng: &mut R) -> Result<PaiQuery> {
    let n = store.sequences.len();
    let len = store.sequences[0].len();
    let pairs: Vec<(usize, usize)> = (0..len)
        .flat_map(|i| (i + 1..len).map(move |j| (i, j)))
        .filter(|&(i, j)| (j == i + 1) == (kind == QueryKind::Direct))
        .collect();
    let &(cue_pos, match_pos) = pairs
        .choose(rng)
        .ok_or_else(|| Error::Config(format!("sequences of length {len} have no {kind:?} queries")))?;
    let sequence = rng.gen_range(0..n);
    let mut lure_sequence = rng.gen_range(0..n - 1);
    if lure_sequence >= sequence {
        lure_sequence += 1;
    }
    Ok(PaiQuery {
        sequence,
        cue_pos,
        match_pos,
        lure_sequence,
        match_first: rng.gen(),
    })
}

/// Model inputs: dense `I × 3` memory (pair plus a zero item), the
/// concatenated three-item query, and the match class as target.
pub fn to_example(cfg: &PaiConfig, store: &PaiStore, query: &PaiQuery) -> Result<Example> {
    let d = cfg.d_emb;
    let mut data = Vec::with_capacity(store.rows.len() * PAI_SLOT_ITEMS * d);
    for r in 0..store.rows.len() {
        let (a, b) = store.row_items(r);
        data.extend(item_features(cfg, a));
        data.extend(item_features(cfg, b));
        data.extend(std::iter::repeat(0.0).take(d));
    }
    let memory = ItemGrid::dense(store.rows.len(), PAI_SLOT_ITEMS, d, data)?;
    let q: Vec<f64> = query
        .presented(store)
        .iter()
        .flat_map(|&it| item_features(cfg, it))
        .collect();
    Ok(Example {
        memory,
        query: QueryInput::Dense(q),
        targets: vec![query.matched(store).class],
    })
}

/// Token form of an entry for the serialized container: the `I × 3` token
/// grid (zero padded), the three query tokens, and the target class.
pub fn to_tokens(cfg: &PaiConfig, store: &PaiStore, query: &PaiQuery) -> (ItemGrid, Vec<u32>, Vec<u32>) {
    let mut ids = Vec::with_capacity(store.rows.len() * PAI_SLOT_ITEMS);
    for r in 0..store.rows.len() {
        let (a, b) = store.row_items(r);
        ids.extend([a.token(cfg.n_classes), b.token(cfg.n_classes), 0]);
    }
    let grid = ItemGrid::Tokens {
        rows: store.rows.len(),
        cols: PAI_SLOT_ITEMS,
        ids,
    };
    let q = query
        .presented(store)
        .iter()
        .map(|it| it.token(cfg.n_classes))
        .collect();
    (grid, q, vec![query.matched(store).class])
}

/// Rebuilds the model example from container tokens.
pub fn example_from_tokens(cfg: &PaiConfig, grid: &ItemGrid, query: &[u32], targets: &[u32]) -> Result<Example> {
    let ItemGrid::Tokens { rows, cols, ids } = grid else {
        return Err(Error::Format("PAI records store token grids".into()));
    };
    let d = cfg.d_emb;
    let features = |t: u32| match Item::from_token(t, cfg.n_classes) {
        Some(item) => item_features(cfg, item),
        None => vec![0.0; d],
    };
    let data: Vec<f64> = ids.iter().flat_map(|&t| features(t)).collect();
    Ok(Example {
        memory: ItemGrid::dense(*rows, *cols, d, data)?,
        query: QueryInput::Dense(query.iter().flat_map(|&t| features(t)).collect()),
        targets: targets.to_vec(),
    })
}

/// `batch` entries with fresh stores: the first half direct, the second
/// half indirect.
pub fn sample_batch<R: Rng + ?Sized>(cfg: &PaiConfig, split: Split, rng: &mut R, batch: usize) -> Result<Vec<PaiEntry>> {
    if batch % 2 != 0 {
        return Err(Error::Config(format!("batch size {batch} must be even")));
    }
    (0..batch)
        .map(|k| {
            let kind = if k < batch / 2 {
                QueryKind::Direct
            } else {
                QueryKind::Indirect
            };
            let store = generate_store(cfg, split, rng)?;
            let query = sample_query(&store, kind, rng)?;
            let example = to_example(cfg, &store, &query)?;
            Ok(PaiEntry {
                store,
                query,
                example,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeAccuracy {
    pub label: String,
    pub kind: Option<QueryKind>,
    pub distance: usize,
    pub count: usize,
    /// Argmax over all classes equals the match class.
    pub accuracy: f64,
    /// Match class scored above the lure class.
    pub match_vs_lure: f64,
    pub mean_hops: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PaiReport {
    pub by_type: Vec<TypeAccuracy>,
    pub direct: TypeAccuracy,
    pub indirect: TypeAccuracy,
    pub overall: TypeAccuracy,
}

impl PaiReport {
    pub fn get(&self, label: &str) -> Option<&TypeAccuracy> {
        self.by_type.iter().find(|t| t.label == label)
    }
}

#[derive(Default)]
struct Tally {
    count: usize,
    correct: usize,
    preferred: usize,
    hops: usize,
}

impl Tally {
    fn finish(&self, label: String, kind: Option<QueryKind>, distance: usize) -> TypeAccuracy {
        let n = self.count.max(1) as f64;
        TypeAccuracy {
            label,
            kind,
            distance,
            count: self.count,
            accuracy: self.correct as f64 / n,
            match_vs_lure: self.preferred as f64 / n,
            mean_hops: self.hops as f64 / n,
        }
    }
}

/// Accuracy per query type on `n_items` balanced entries drawn from `split`
/// with `seed`.
pub fn evaluate(
    predictor: &dyn Predictor,
    cfg: &PaiConfig,
    split: Split,
    n_items: usize,
    seed: u64,
    exec: Exec,
) -> Result<PaiReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = sample_batch(cfg, split, &mut rng, n_items + n_items % 2)?;
    let indexed: Vec<(usize, &PaiEntry)> = entries.iter().enumerate().collect();
    let predictions = par::try_map(exec, &indexed, |(i, e)| {
        predictor.predict(&e.example, Feed::Predicted, entry_seed(seed, *i as u64))
    })?;
    let mut by_type: BTreeMap<(usize, usize), Tally> = BTreeMap::new();
    let (mut direct, mut indirect, mut overall) = (Tally::default(), Tally::default(), Tally::default());
    for (e, p) in entries.iter().zip(&predictions) {
        let dist = &p.distributions[0];
        let m = e.query.matched(&e.store).class as usize;
        let l = e.query.lure(&e.store).class as usize;
        let correct = crate::autodiff::argmax(dist) == m;
        let preferred = dist[m] > dist[l];
        let hops = p.hops[0];
        let kind_tally = match e.query.kind() {
            QueryKind::Direct => &mut direct,
            QueryKind::Indirect => &mut indirect,
        };
        for t in [
            by_type.entry((e.query.cue_pos, e.query.match_pos)).or_default(),
            kind_tally,
            &mut overall,
        ] {
            t.count += 1;
            t.correct += usize::from(correct);
            t.preferred += usize::from(preferred);
            t.hops += hops;
        }
    }
    // order rows by distance, then cue position: A-B, B-C, A-C, ...
    let mut keys: Vec<(usize, usize)> = by_type.keys().copied().collect();
    keys.sort_by_key(|&(i, j)| (j - i, i));
    let by_type = keys
        .into_iter()
        .map(|(i, j)| {
            let q = PaiQuery {
                sequence: 0,
                cue_pos: i,
                match_pos: j,
                lure_sequence: 1,
                match_first: true,
            };
            by_type[&(i, j)].finish(q.label(), Some(q.kind()), q.distance())
        })
        .collect();
    Ok(PaiReport {
        by_type,
        direct: direct.finish("direct".into(), Some(QueryKind::Direct), 1),
        indirect: indirect.finish("indirect".into(), Some(QueryKind::Indirect), 0),
        overall: overall.finish("overall".into(), None, 0),
    })
}
