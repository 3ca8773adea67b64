//! Shortest paths on random nearest-neighbour graphs.
//!
//! Points are drawn uniformly in the unit square and each node links to its
//! `K` nearest neighbours. Paths are searched over the undirected version of
//! those links. The model sees the edge list as a table of `(source,
//! destination)` tokens and the `(start, goal)` query, and answers the
//! interior nodes of a shortest path one at a time. Node `v` is token `v + 1`.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{entry_seed, Feed, Predictor};
use crate::error::{Error, Result};
use crate::input::{Example, ItemGrid, QueryInput, NULL_TOKEN};
use crate::par::{self, Exec};

/// Token vocabulary of the graph task.
pub const GRAPH_VOCAB: usize = 1000;
const MAX_ATTEMPTS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub n_nodes: usize,
    pub out_degree: usize,
    /// Edges on the queried shortest path.
    pub path_length: usize,
    /// Draw each node's out-degree uniformly from this inclusive range
    /// instead of using `out_degree` for every node.
    #[serde(default)]
    pub degree_range: Option<(usize, usize)>,
}

impl GraphConfig {
    pub fn new(n_nodes: usize, out_degree: usize, path_length: usize) -> Self {
        GraphConfig {
            n_nodes,
            out_degree,
            path_length,
            degree_range: None,
        }
    }

    /// The three published configurations.
    pub fn published() -> [GraphConfig; 3] {
        [Self::new(10, 2, 2), Self::new(20, 3, 3), Self::new(20, 5, 3)]
    }

    fn max_degree(&self) -> usize {
        self.degree_range.map_or(self.out_degree, |(_, hi)| hi)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_nodes + 1 > GRAPH_VOCAB {
            return Err(Error::Config(format!("{} nodes exceed the token space", self.n_nodes)));
        }
        let (lo, hi) = self.degree_range.unwrap_or((self.out_degree, self.out_degree));
        if lo == 0 || lo > hi || hi >= self.n_nodes {
            return Err(Error::Config(format!(
                "out-degree range {lo}..={hi} invalid for {} nodes",
                self.n_nodes
            )));
        }
        if self.path_length == 0 {
            return Err(Error::Config("path_length must be at least 1".into()));
        }
        Ok(())
    }

    /// Description rows: every node's out-edges at the largest degree.
    pub fn max_tuples(&self) -> usize {
        self.n_nodes * self.max_degree()
    }

    /// Interior nodes answered per query.
    pub fn answers(&self) -> usize {
        self.path_length.saturating_sub(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphInstance {
    pub points: Vec<(f64, f64)>,
    /// Directed `(source, destination)` links in generation order.
    pub edges: Vec<(usize, usize)>,
    pub start: usize,
    pub goal: usize,
    /// Interior of the lexicographically smallest shortest path.
    pub target: Vec<usize>,
}

impl GraphInstance {
    pub fn n_nodes(&self) -> usize {
        self.points.len()
    }

    pub fn undirected(&self) -> Vec<Vec<usize>> {
        undirected_adjacency(self.n_nodes(), &self.edges)
    }
}

fn undirected_adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        if !adj[a].contains(&b) {
            adj[a].push(b);
        }
        if !adj[b].contains(&a) {
            adj[b].push(a);
        }
    }
    adj.iter_mut().for_each(|v| v.sort_unstable());
    adj
}

/// `k` nearest other points of `i`; equal distances go to the lower index.
fn nearest(points: &[(f64, f64)], i: usize, k: usize) -> Vec<usize> {
    let (x, y) = points[i];
    let mut others: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, &(a, b))| ((a - x).powi(2) + (b - y).powi(2), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.into_iter().take(k).map(|(_, j)| j).collect()
}

fn bfs_distances(adj: &[Vec<usize>], start: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].expect("queued nodes are labelled");
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Every minimum-length path from `start` to `goal` over the undirected
/// links, endpoints included, in lexicographic order. Empty when the goal
/// is unreachable.
pub fn bfs_shortest_paths(n_nodes: usize, edges: &[(usize, usize)], start: usize, goal: usize) -> Vec<Vec<usize>> {
    let adj = undirected_adjacency(n_nodes, edges);
    let from_goal = bfs_distances(&adj, goal);
    let Some(total) = from_goal[start] else {
        return Vec::new();
    };
    // walk forward along neighbours one step closer to the goal
    let mut paths = vec![vec![start]];
    for _ in 0..total {
        let mut next = Vec::new();
        for p in &paths {
            let u = *p.last().expect("paths are non-empty");
            let du = from_goal[u].expect("on a shortest path");
            for &v in &adj[u] {
                if from_goal[v] == Some(du - 1) {
                    let mut q = p.clone();
                    q.push(v);
                    next.push(q);
                }
            }
        }
        paths = next;
    }
    paths.sort();
    paths
}

/// Draws a graph and a `(start, goal)` pair at exactly `path_length` hops,
/// retrying pairs and then graphs.
pub fn generate_graph<R: Rng + ?Sized>(cfg: &GraphConfig, rng: &mut R) -> Result<GraphInstance> {
    cfg.validate()?;
    let n = cfg.n_nodes;
    for _ in 0..MAX_ATTEMPTS {
        let points: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            let k = match cfg.degree_range {
                Some((lo, hi)) => rng.gen_range(lo..=hi),
                None => cfg.out_degree,
            };
            edges.extend(nearest(&points, i, k).into_iter().map(|j| (i, j)));
        }
        let adj = undirected_adjacency(n, &edges);
        let mut starts: Vec<usize> = (0..n).collect();
        starts.shuffle(rng);
        for start in starts {
            let dist = bfs_distances(&adj, start);
            let goals: Vec<usize> = (0..n).filter(|&v| dist[v] == Some(cfg.path_length)).collect();
            if let Some(&goal) = goals.choose(rng) {
                let best = bfs_shortest_paths(n, &edges, start, goal)
                    .into_iter()
                    .next()
                    .expect("goal is reachable");
                return Ok(GraphInstance {
                    points,
                    edges,
                    start,
                    goal,
                    target: best[1..best.len() - 1].to_vec(),
                });
            }
        }
    }
    Err(Error::Generation {
        attempts: MAX_ATTEMPTS,
        seed: 0,
    })
}

/// [`generate_graph`] from a fresh generator; failures report `seed`.
pub fn generate_graph_seeded(cfg: &GraphConfig, seed: u64) -> Result<GraphInstance> {
    generate_graph(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| match e {
        Error::Generation { attempts, .. } => Error::Generation { attempts, seed },
        other => other,
    })
}

pub fn node_token(v: usize) -> u32 {
    v as u32 + 1
}

pub fn token_node(t: u32) -> Option<usize> {
    (t != NULL_TOKEN).then(|| t as usize - 1)
}

/// Description table `M × 2` padded with null rows, query `(start, goal)`,
/// and the interior nodes as targets.
pub fn encode_instance(g: &GraphInstance, cfg: &GraphConfig) -> Result<Example> {
    let m = cfg.max_tuples();
    if g.edges.len() > m {
        return Err(Error::Shape(format!("{} edges exceed {m} description rows", g.edges.len())));
    }
    let mut ids = Vec::with_capacity(2 * m);
    for &(a, b) in &g.edges {
        ids.extend([node_token(a), node_token(b)]);
    }
    ids.resize(2 * m, NULL_TOKEN);
    Ok(Example {
        memory: ItemGrid::tokens(m, 2, ids)?,
        query: QueryInput::Tokens(vec![node_token(g.start), node_token(g.goal)]),
        targets: g.target.iter().map(|&v| node_token(v)).collect(),
    })
}

/// Edge list recovered from an encoded description.
pub fn decode_edges(example: &Example) -> Result<Vec<(usize, usize)>> {
    let ItemGrid::Tokens { ids, cols: 2, .. } = &example.memory else {
        return Err(Error::Format("graph descriptions are two-column token tables".into()));
    };
    Ok(ids
        .chunks(2)
        .filter_map(|p| Some((token_node(p[0])?, token_node(p[1])?)))
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    pub count: usize,
    /// Per answered node: agreement with the lexicographic target.
    pub node_accuracy: Vec<f64>,
    /// Per answered node: the predicted prefix lies on some shortest path.
    pub any_valid_accuracy: Vec<f64>,
    pub mean_hops: Vec<f64>,
    pub feed: Option<Feed>,
}

/// Per-node accuracy on `n` fresh instances.
pub fn evaluate_path_accuracy(
    predictor: &dyn Predictor,
    cfg: &GraphConfig,
    n: usize,
    feed: Feed,
    seed: u64,
    exec: Exec,
) -> Result<PathReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances: Vec<(usize, GraphInstance)> = (0..n)
        .map(|i| Ok((i, generate_graph(cfg, &mut rng)?)))
        .collect::<Result<_>>()?;
    let results = par::try_map(exec, &instances, |(i, g)| {
        let ex = encode_instance(g, cfg)?;
        let p = predictor.predict(&ex, feed, entry_seed(seed, *i as u64))?;
        Ok::<_, Error>((ex, p))
    })?;
    let a = cfg.answers();
    let mut exact = vec![0usize; a];
    let mut valid = vec![0usize; a];
    let mut hops = vec![0usize; a];
    for ((_, g), (_, p)) in instances.iter().zip(&results) {
        let predicted: Vec<usize> = p.argmaxes().iter().map(|&t| (t as usize).wrapping_sub(1)).collect();
        let paths = bfs_shortest_paths(g.n_nodes(), &g.edges, g.start, g.goal);
        for k in 0..a {
            exact[k] += usize::from(predicted[k] == g.target[k]);
            // with ground-truth feeding the earlier nodes are the target's
            let prefix: Vec<usize> = match feed {
                Feed::GroundTruth => g.target[..k].iter().copied().chain([predicted[k]]).collect(),
                Feed::Predicted => predicted[..=k].to_vec(),
            };
            valid[k] += usize::from(paths.iter().any(|path| path[1..=k + 1] == prefix[..]));
            hops[k] += p.hops[k];
        }
    }
    let frac = |v: Vec<usize>| v.into_iter().map(|c| c as f64 / n.max(1) as f64).collect();
    Ok(PathReport {
        count: n,
        node_accuracy: frac(exact),
        any_valid_accuracy: frac(valid),
        mean_hops: frac(hops),
        feed: Some(feed),
    })
}
