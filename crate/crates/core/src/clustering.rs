//! UE clustering by negative-loop search on a weighted digraph.
//!
//! Nodes are the real UEs `0..N` plus one virtual UE per cluster
//! (`N + g`). The edge `i -> j` prices moving `i` into `j`'s cluster while
//! `j` leaves it: `z_ij = omega(cluster(j)) - omega(cluster(j) + i - j)`.
//! Applying a cycle moves every node to its successor's cluster, so the
//! change of the sum of cluster rates is minus the cycle weight.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use log::{debug, warn};
use nalgebra::DMatrix;
use thiserror::Error;

use crate::config::SystemConfig;
use crate::model::{ClusterStats, ClusteringState, Deployment, NetworkState};
use crate::power::PowerMatrix;
use crate::rate::{asr, rate_nats, RateError, RateModel};

/// Default cap on stored path labels in the exhaustive detector.
pub const DEFAULT_LABEL_CAP: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusteringError {
    #[error("loop visits cluster {0} twice")]
    RepeatedCluster(usize),
    #[error("loop node {0} is out of range")]
    NodeOutOfRange(usize),
    #[error("loop must contain at least two nodes")]
    TooShort,
    #[error("exhaustive search supports at most 128 clusters, got {0}")]
    TooManyClusters(usize),
    #[error(transparent)]
    Rate(#[from] RateError),
}

/// Rate of cluster `g` in nats per channel use, before the `eta / ln 2`
/// scaling. Depends only on the cluster's own membership.
pub fn cluster_rate(
    g: usize,
    clustering: &ClusteringState,
    power: &PowerMatrix,
    deployment: &Deployment,
    config: &SystemConfig,
) -> Result<f64, RateError> {
    let model = RateModel::new(config, deployment, power)?;
    Ok(members_rate(&clustering.members(g), &model, deployment, config))
}

fn members_rate(members: &[usize], model: &RateModel<'_>, deployment: &Deployment, config: &SystemConfig) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    let stats = ClusterStats::new(members, &deployment.beta, config);
    model.cluster_rate_nats(&stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    num_real: usize,
    node_cluster: Vec<usize>,
    num_clusters: usize,
    /// `+inf` marks a missing edge.
    z: DMatrix<f64>,
}

impl WeightedDigraph {
    /// Wraps raw weights; entries between same-cluster nodes (including the
    /// diagonal) are forced to `+inf`. Nodes `num_real..` are virtual.
    pub fn from_weights(num_real: usize, node_cluster: Vec<usize>, mut z: DMatrix<f64>) -> Self {
        let n = node_cluster.len();
        assert_eq!(z.shape(), (n, n), "weight matrix must be square over all nodes");
        for i in 0..n {
            for j in 0..n {
                if node_cluster[i] == node_cluster[j] {
                    z[(i, j)] = f64::INFINITY;
                }
            }
        }
        let num_clusters = node_cluster.iter().map(|&g| g + 1).max().unwrap_or(0);
        WeightedDigraph {
            num_real,
            node_cluster,
            num_clusters,
            z,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.node_cluster.len()
    }

    pub fn num_real(&self) -> usize {
        self.num_real
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn cluster(&self, node: usize) -> usize {
        self.node_cluster[node]
    }

    pub fn is_virtual(&self, node: usize) -> bool {
        node >= self.num_real
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.z[(i, j)]
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.z
    }

    /// Total weight of the cycle `nodes[0] -> nodes[1] -> ... -> nodes[0]`.
    pub fn cycle_weight(&self, nodes: &[usize]) -> f64 {
        (0..nodes.len())
            .map(|k| self.z[(nodes[k], nodes[(k + 1) % nodes.len()])])
            .sum()
    }

    fn finite_edges(&self) -> Vec<(f64, usize, usize)> {
        let n = self.num_nodes();
        let mut edges: Vec<(f64, usize, usize)> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter_map(|(i, j)| {
                let w = self.z[(i, j)];
                w.is_finite().then_some((w, i, j))
            })
            .collect();
        edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        edges
    }

    /// Graphviz rendering of the finite edges.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph clustering {\n");
        for v in 0..self.num_nodes() {
            let label = if self.is_virtual(v) {
                format!("v{}", self.cluster(v))
            } else {
                format!("{v}")
            };
            let shape = if self.is_virtual(v) { "box" } else { "ellipse" };
            let _ = writeln!(
                out,
                "  n{v} [label=\"{label} (g{})\", shape={shape}];",
                self.cluster(v)
            );
        }
        for (w, i, j) in self.finite_edges() {
            let _ = writeln!(out, "  n{i} -> n{j} [label=\"{w:.4e}\"];");
        }
        out.push_str("}\n");
        out
    }
}

/// Builds the move graph for the current clustering and fixed power.
pub fn build_graph(
    clustering: &ClusteringState,
    power: &PowerMatrix,
    deployment: &Deployment,
    config: &SystemConfig,
) -> Result<WeightedDigraph, RateError> {
    let model = RateModel::new(config, deployment, power)?;
    let n_real = clustering.num_ues();
    let g_count = clustering.num_clusters();
    let nodes = clustering.num_nodes();
    let members: Vec<Vec<usize>> = (0..g_count).map(|g| clustering.members(g)).collect();
    let current: Vec<f64> = members
        .iter()
        .map(|m| members_rate(m, &model, deployment, config))
        .collect();
    let node_cluster: Vec<usize> = (0..nodes).map(|v| clustering.node_cluster(v)).collect();
    let mut z = DMatrix::from_element(nodes, nodes, f64::INFINITY);
    for j in 0..nodes {
        let g = node_cluster[j];
        for i in 0..nodes {
            if node_cluster[i] == g {
                continue;
            }
            let mut next: Vec<usize> = members[g].iter().copied().filter(|&n| n != j).collect();
            if i < n_real {
                next.push(i);
                next.sort_unstable();
            }
            z[(i, j)] = current[g] - members_rate(&next, &model, deployment, config);
        }
    }
    Ok(WeightedDigraph {
        num_real: n_real,
        node_cluster,
        num_clusters: g_count,
        z,
    })
}

/// A cycle through nodes of pairwise distinct clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct Loop {
    pub nodes: Vec<usize>,
    pub weight: f64,
}

impl Loop {
    /// Rotation starting at the smallest node, used to compare loops.
    pub fn canonical(&self) -> Vec<usize> {
        canonical(&self.nodes)
    }
}

fn canonical(nodes: &[usize]) -> Vec<usize> {
    let start = nodes
        .iter()
        .enumerate()
        .min_by_key(|(_, &v)| v)
        .map_or(0, |(k, _)| k);
    nodes[start..].iter().chain(&nodes[..start]).copied().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub found: Option<Loop>,
    /// False when the label cap cut the exhaustive search short.
    pub complete: bool,
    pub labels: usize,
}

#[derive(Debug, Clone, Copy)]
struct Label {
    node: usize,
    dist: f64,
    parent: Option<usize>,
}

/// Exhaustive search for the most negative cycle with one node per cluster,
/// skipping cycles in `excluded` (canonical rotations).
///
/// Paths are grown from every start node through clusters with a larger
/// index than the start's, so each cycle is met once, at its
/// lowest-cluster node. Per (start, node, visited clusters) only the
/// `|excluded| + 1` shortest labels are kept, which keeps the search exact
/// in the presence of exclusions.
pub fn detect_negative_loop_ebfa(
    graph: &WeightedDigraph,
    excluded: &HashSet<Vec<usize>>,
    label_cap: usize,
) -> Result<Detection, ClusteringError> {
    if graph.num_clusters() > 128 {
        return Err(ClusteringError::TooManyClusters(graph.num_clusters()));
    }
    let n = graph.num_nodes();
    let keep = excluded.len() + 1;
    let mut arena: Vec<Label> = Vec::new();
    let mut best: Option<Loop> = None;
    let mut complete = true;

    'starts: for s in 0..n {
        let gs = graph.cluster(s);
        let mut layer: HashMap<(usize, u128), Vec<usize>> = HashMap::new();
        arena.push(Label {
            node: s,
            dist: 0.0,
            parent: None,
        });
        layer.insert((s, 1u128 << gs), vec![arena.len() - 1]);
        while !layer.is_empty() {
            let mut next: HashMap<(usize, u128), Vec<usize>> = HashMap::new();
            let mut keys: Vec<(usize, u128)> = layer.keys().copied().collect();
            keys.sort_unstable();
            for key in keys {
                let (v, mask) = key;
                for &li in &layer[&key] {
                    let lab = arena[li];
                    if v != s {
                        let close = graph.weight(v, s);
                        if close.is_finite() {
                            let w = lab.dist + close;
                            if w < 0.0 && best.as_ref().map_or(true, |b| w < b.weight) {
                                let nodes = path_of(&arena, li);
                                if !excluded.contains(&canonical(&nodes)) {
                                    best = Some(Loop { nodes, weight: w });
                                }
                            }
                        }
                    }
                    for u in 0..n {
                        let gu = graph.cluster(u);
                        if gu <= gs || mask & (1u128 << gu) != 0 {
                            continue;
                        }
                        let w = graph.weight(v, u);
                        if !w.is_finite() {
                            continue;
                        }
                        let dist = lab.dist + w;
                        let slot = next.entry((u, mask | (1u128 << gu))).or_default();
                        if slot.len() >= keep {
                            let worst = slot
                                .iter()
                                .enumerate()
                                .max_by(|a, b| arena[*a.1].dist.total_cmp(&arena[*b.1].dist))
                                .map(|(k, &idx)| (k, arena[idx].dist))
                                .expect("slot is full");
                            if dist >= worst.1 {
                                continue;
                            }
                            slot.swap_remove(worst.0);
                        }
                        arena.push(Label {
                            node: u,
                            dist,
                            parent: Some(li),
                        });
                        slot.push(arena.len() - 1);
                        if arena.len() > label_cap {
                            complete = false;
                            warn!("negative-loop search hit the label cap ({label_cap}); result may be incomplete");
                            break 'starts;
                        }
                    }
                }
            }
            layer = next;
        }
    }
    Ok(Detection {
        found: best,
        complete,
        labels: arena.len(),
    })
}

fn path_of(arena: &[Label], mut idx: usize) -> Vec<usize> {
    let mut nodes = vec![arena[idx].node];
    while let Some(p) = arena[idx].parent {
        nodes.push(arena[p].node);
        idx = p;
    }
    nodes.reverse();
    nodes
}

/// Greedy negative-loop search. Seeds with the smallest unused negative
/// edge, extends the path tail along its cheapest edge into an unused
/// cluster and closes as soon as the return edge makes the cycle negative.
/// Stops after `ceil(alpha * N * G)` edge expansions.
pub fn detect_negative_loop_gsa(
    graph: &WeightedDigraph,
    alpha: f64,
    excluded: &HashSet<Vec<usize>>,
) -> Option<Loop> {
    let budget = (alpha * graph.num_real() as f64 * graph.num_clusters() as f64).ceil().max(1.0) as usize;
    let n = graph.num_nodes();
    let mut spent = 0;
    for (w0, a, b) in graph.finite_edges() {
        if w0 >= 0.0 || spent >= budget {
            break;
        }
        spent += 1;
        let mut path = vec![a, b];
        let mut used: HashSet<usize> = [graph.cluster(a), graph.cluster(b)].into();
        let mut dist = w0;
        loop {
            let tail = *path.last().expect("path is nonempty");
            let close = graph.weight(tail, a);
            if close.is_finite() && dist + close < 0.0 && !excluded.contains(&canonical(&path)) {
                return Some(Loop {
                    weight: graph.cycle_weight(&path),
                    nodes: path,
                });
            }
            if spent >= budget {
                break;
            }
            let step = (0..n)
                .filter(|&u| !used.contains(&graph.cluster(u)))
                .map(|u| (graph.weight(tail, u), u))
                .filter(|(w, _)| w.is_finite())
                .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            let Some((w, u)) = step else { break };
            spent += 1;
            path.push(u);
            used.insert(graph.cluster(u));
            dist += w;
        }
    }
    None
}

/// Moves every real node of `lp` to the cluster of its successor. Virtual
/// nodes stay put, which turns a hop through them into a pure insertion or
/// removal.
pub fn apply_loop(clustering: &ClusteringState, lp: &Loop) -> Result<ClusteringState, ClusteringError> {
    if lp.nodes.len() < 2 {
        return Err(ClusteringError::TooShort);
    }
    let mut seen = HashSet::new();
    for &v in &lp.nodes {
        if v >= clustering.num_nodes() {
            return Err(ClusteringError::NodeOutOfRange(v));
        }
        let g = clustering.node_cluster(v);
        if !seen.insert(g) {
            return Err(ClusteringError::RepeatedCluster(g));
        }
    }
    let mut next = clustering.clone();
    let k = lp.nodes.len();
    for (idx, &v) in lp.nodes.iter().enumerate() {
        if !clustering.is_virtual(v) {
            next.set(v, clustering.node_cluster(lp.nodes[(idx + 1) % k]));
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detector {
    Ebfa,
    Gsa,
}

impl std::str::FromStr for Detector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ebfa" => Ok(Detector::Ebfa),
            "gsa" => Ok(Detector::Gsa),
            other => Err(format!("unknown detector `{other}` (expected ebfa or gsa)")),
        }
    }
}

/// How power follows a clustering move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerPolicy {
    /// Power stays exactly as given.
    Fixed,
    /// Per AP and cluster, power values are re-sorted along the new
    /// decoding order so the SIC power ordering keeps holding.
    SortForSic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringOptions {
    pub detector: Detector,
    /// Expansion budget factor of the greedy detector.
    pub alpha: f64,
    pub label_cap: usize,
    /// Keep rejected loops across graph rebuilds.
    pub persist_rejected: bool,
    pub power_policy: PowerPolicy,
    pub max_moves: usize,
    /// Give up on a graph after this many rejected loops.
    pub max_rejected: usize,
}

impl Default for ClusteringOptions {
    fn default() -> Self {
        ClusteringOptions {
            detector: Detector::Ebfa,
            alpha: 2.0,
            label_cap: DEFAULT_LABEL_CAP,
            persist_rejected: false,
            power_policy: PowerPolicy::Fixed,
            max_moves: 1000,
            max_rejected: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringOutcome {
    pub clustering: ClusteringState,
    pub power: PowerMatrix,
    /// Sum rate (bits per channel use) after each applied loop, starting
    /// with the input.
    pub asr_trace: Vec<f64>,
    pub applied: Vec<Loop>,
    pub rejected: usize,
    /// False if an exhaustive search was cut short by the label cap.
    pub complete: bool,
}

/// Applies improving loops until none is left. A loop is taken only if,
/// under the power policy, every UE meets `min_rate` (bits per channel
/// use) and the sum rate strictly rises; other loops are set aside.
pub fn clustering_design(
    clustering0: &ClusteringState,
    power: &PowerMatrix,
    deployment: &Deployment,
    config: &SystemConfig,
    min_rate: f64,
    options: &ClusteringOptions,
) -> Result<ClusteringOutcome, ClusteringError> {
    let mut clustering = clustering0.clone();
    let mut power = power.clone();
    let net = NetworkState::new(deployment, &clustering, config);
    let mut current = asr(&power, &net, deployment, config)?.normalized;
    let mut trace = vec![current];
    let mut applied = Vec::new();
    let mut rejected_total = 0;
    let mut complete = true;
    let mut rejected: HashSet<Vec<usize>> = HashSet::new();

    'moves: for _ in 0..options.max_moves {
        let graph = build_graph(&clustering, &power, deployment, config)?;
        if !options.persist_rejected {
            rejected.clear();
        }
        let mut tries = 0;
        loop {
            let candidate = match options.detector {
                Detector::Ebfa => {
                    let det = detect_negative_loop_ebfa(&graph, &rejected, options.label_cap)?;
                    complete &= det.complete;
                    det.found
                }
                Detector::Gsa => detect_negative_loop_gsa(&graph, options.alpha, &rejected),
            };
            let Some(lp) = candidate else { break 'moves };
            let next = apply_loop(&clustering, &lp)?;
            let next_net = NetworkState::new(deployment, &next, config);
            let next_power = match options.power_policy {
                PowerPolicy::Fixed => power.clone(),
                PowerPolicy::SortForSic => power.sorted_for_sic(&next_net),
            };
            let model = RateModel::new(config, deployment, &next_power)?;
            let params = *model.params();
            let sinrs = model.all_sinrs(&next_net);
            let rates: Vec<f64> = sinrs
                .iter()
                .map(|&g| params.bits_scale() * rate_nats(g, &params).max(0.0))
                .collect();
            let total: f64 = rates.iter().sum();
            let qos_ok = rates.iter().all(|&r| r >= min_rate * (1.0 - 1e-12));
            if qos_ok && total > current {
                debug!(
                    "applied loop {:?} (weight {:.4e}): sum rate {current:.6} -> {total:.6}",
                    lp.nodes, lp.weight
                );
                clustering = next;
                power = next_power;
                current = total;
                trace.push(total);
                applied.push(lp);
                break;
            }
            rejected.insert(lp.canonical());
            rejected_total += 1;
            tries += 1;
            if tries >= options.max_rejected {
                break 'moves;
            }
        }
    }
    Ok(ClusteringOutcome {
        clustering,
        power,
        asr_trace: trace,
        applied,
        rejected: rejected_total,
        complete,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> WeightedDigraph {
        // Three single-node clusters: 0 -> 1 -> 2 -> 0 weighs -1.
        let inf = f64::INFINITY;
        let z = DMatrix::from_row_slice(3, 3, &[inf, -1.0, 5.0, 5.0, inf, -1.0, 1.0, 5.0, inf]);
        WeightedDigraph::from_weights(3, vec![0, 1, 2], z)
    }

    #[test]
    fn triangle_found_by_both_detectors() {
        let g = triangle();
        let e = detect_negative_loop_ebfa(&g, &HashSet::new(), DEFAULT_LABEL_CAP).unwrap();
        let lp = e.found.unwrap();
        assert!(e.complete);
        assert_eq!(lp.canonical(), vec![0, 1, 2]);
        assert!((lp.weight + 1.0).abs() < 1e-15);
        let s = detect_negative_loop_gsa(&g, 2.0, &HashSet::new()).unwrap();
        assert_eq!(s.canonical(), vec![0, 1, 2]);
    }

    #[test]
    fn positive_graph_has_no_loop() {
        let z = DMatrix::from_fn(4, 4, |i, j| 1.0 + (i + j) as f64);
        let g = WeightedDigraph::from_weights(4, vec![0, 1, 2, 3], z);
        assert!(detect_negative_loop_ebfa(&g, &HashSet::new(), DEFAULT_LABEL_CAP).unwrap().found.is_none());
        assert!(detect_negative_loop_gsa(&g, 5.0, &HashSet::new()).is_none());
    }

    #[test]
    fn exclusions_reveal_the_next_loop() {
        let g = triangle();
        let ex: HashSet<Vec<usize>> = [vec![0, 1, 2]].into();
        let e = detect_negative_loop_ebfa(&g, &ex, DEFAULT_LABEL_CAP).unwrap();
        // Remaining cycles: 0<->1 (4), 1<->2 (4), 0<->2 (6), 0->2->1 (15).
        assert!(e.found.is_none());
    }

    #[test]
    fn apply_loop_exchange_and_shift() {
        let x = ClusteringState::new(vec![0, 0, 1, 1], 2).unwrap();
        let swapped = apply_loop(&x, &Loop { nodes: vec![0, 2], weight: -1.0 }).unwrap();
        assert_eq!(swapped.pi(), &[1, 0, 0, 1]);
        // UE 0 joins cluster 1 through its virtual node (node 5).
        let shifted = apply_loop(&x, &Loop { nodes: vec![0, 5], weight: -1.0 }).unwrap();
        assert_eq!(shifted.pi(), &[1, 0, 1, 1]);
        assert_eq!(
            apply_loop(&x, &Loop { nodes: vec![0, 1], weight: -1.0 }),
            Err(ClusteringError::RepeatedCluster(0))
        );
        assert_eq!(apply_loop(&x, &Loop { nodes: vec![0], weight: -1.0 }), Err(ClusteringError::TooShort));
    }

    #[test]
    fn same_cluster_entries_are_infinite() {
        let z = DMatrix::from_element(4, 4, -3.0);
        let g = WeightedDigraph::from_weights(3, vec![0, 0, 1, 0], z);
        assert!(g.weight(0, 1).is_infinite() && g.weight(0, 3).is_infinite() && g.weight(2, 2).is_infinite());
        assert_eq!(g.weight(0, 2), -3.0);
        assert!(g.to_dot().contains("n0 -> n2"));
        assert!(!g.to_dot().contains("n0 -> n1 "));
    }
}
