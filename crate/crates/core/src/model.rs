//! Deployment geometry, large-scale fading, pilot-training statistics and the
//! effective-gain decoding order.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::config::{db_to_linear, SystemConfig};
use crate::rng::{substream, Stream};

/// Reference distance below which path loss is flat (km).
pub const PATH_LOSS_D0_KM: f64 = 0.01;
/// Breakpoint between the 20 dB/dec and 35 dB/dec slopes (km).
pub const PATH_LOSS_D1_KM: f64 = 0.05;
/// Frequency- and height-dependent offset of the three-slope model (dB).
pub const PATH_LOSS_OFFSET_DB: f64 = 140.7;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("UE {ue} assigned to cluster {cluster}, but only {num_clusters} clusters exist")]
    ClusterOutOfRange {
        ue: usize,
        cluster: usize,
        num_clusters: usize,
    },
    #[error("assignment matrix column {0} does not contain exactly one 1")]
    BadAssignmentColumn(usize),
    #[error("clustering needs at least one cluster")]
    NoClusters,
}

/// Three-slope path loss gain in dB (non-positive) at a planar distance given in
/// meters. The model is evaluated with distances in kilometers.
pub fn path_loss_three_slope(distance_m: f64) -> f64 {
    let d = distance_m.max(0.0) / 1000.0;
    if d > PATH_LOSS_D1_KM {
        -PATH_LOSS_OFFSET_DB - 35.0 * d.log10()
    } else if d > PATH_LOSS_D0_KM {
        -PATH_LOSS_OFFSET_DB - 15.0 * PATH_LOSS_D1_KM.log10() - 20.0 * d.log10()
    } else {
        -PATH_LOSS_OFFSET_DB - 15.0 * PATH_LOSS_D1_KM.log10() - 20.0 * PATH_LOSS_D0_KM.log10()
    }
}

/// AP/UE positions and the large-scale fading matrix `beta` (M x N, linear).
#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub ap_positions: Vec<[f64; 2]>,
    pub ue_positions: Vec<[f64; 2]>,
    pub beta: DMatrix<f64>,
}

impl Deployment {
    /// Builds a deployment directly from a fading matrix; positions are left
    /// at the origin. Used for tabulated instances.
    pub fn from_beta(beta: DMatrix<f64>) -> Self {
        Deployment {
            ap_positions: vec![[0.0; 2]; beta.nrows()],
            ue_positions: vec![[0.0; 2]; beta.ncols()],
            beta,
        }
    }

    pub fn num_aps(&self) -> usize {
        self.beta.nrows()
    }

    pub fn num_ues(&self) -> usize {
        self.beta.ncols()
    }
}

/// Draws AP and UE positions uniformly in the square and computes
/// `beta = 10^((PL(d) + z)/10)` with log-normal shadowing `z`.
pub fn generate_deployment(config: &SystemConfig, seed: u64) -> Deployment {
    let side = config.area_side;
    let mut pos_rng = substream(seed, Stream::Deployment, 0);
    let mut draw = |count: usize| -> Vec<[f64; 2]> {
        (0..count)
            .map(|_| [pos_rng.gen::<f64>() * side, pos_rng.gen::<f64>() * side])
            .collect()
    };
    let ap_positions = draw(config.num_aps);
    let ue_positions = draw(config.num_ues);

    let mut shadow_rng = substream(seed, Stream::Shadowing, 0);
    let shadow = Normal::new(0.0, config.shadow_sigma_db).expect("shadowing sigma is finite");
    let beta = DMatrix::from_fn(config.num_aps, config.num_ues, |m, n| {
        let [ax, ay] = ap_positions[m];
        let [ux, uy] = ue_positions[n];
        let d = ((ax - ux).powi(2) + (ay - uy).powi(2)).sqrt();
        db_to_linear(path_loss_three_slope(d) + shadow.sample(&mut shadow_rng))
    });

    Deployment {
        ap_positions,
        ue_positions,
        beta,
    }
}

/// UE-to-cluster assignment. Virtual UEs are graph nodes `N..N+G`; node
/// `N + g` belongs to cluster `g` and never carries power or rate.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClusteringState {
    num_clusters: usize,
    assignment: Vec<usize>,
}

impl ClusteringState {
    pub fn new(assignment: Vec<usize>, num_clusters: usize) -> Result<Self, ModelError> {
        if num_clusters == 0 {
            return Err(ModelError::NoClusters);
        }
        if let Some((ue, &cluster)) = assignment
            .iter()
            .enumerate()
            .find(|(_, &g)| g >= num_clusters)
        {
            return Err(ModelError::ClusterOutOfRange {
                ue,
                cluster,
                num_clusters,
            });
        }
        Ok(ClusteringState {
            num_clusters,
            assignment,
        })
    }

    /// Builds the state from a binary `G x N` matrix.
    pub fn from_matrix(x: &[Vec<u8>]) -> Result<Self, ModelError> {
        let num_clusters = x.len();
        if num_clusters == 0 {
            return Err(ModelError::NoClusters);
        }
        let num_ues = x[0].len();
        let mut assignment = Vec::with_capacity(num_ues);
        for n in 0..num_ues {
            let ones: Vec<usize> = (0..num_clusters).filter(|&g| x[g][n] == 1).collect();
            if ones.len() != 1 || (0..num_clusters).any(|g| x[g][n] > 1) {
                return Err(ModelError::BadAssignmentColumn(n));
            }
            assignment.push(ones[0]);
        }
        Ok(ClusteringState {
            num_clusters,
            assignment,
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn num_ues(&self) -> usize {
        self.assignment.len()
    }

    /// Total graph nodes: real UEs plus one virtual UE per cluster.
    pub fn num_nodes(&self) -> usize {
        self.num_ues() + self.num_clusters
    }

    pub fn cluster_of(&self, ue: usize) -> usize {
        self.assignment[ue]
    }

    /// Cluster of a graph node, real or virtual.
    pub fn node_cluster(&self, node: usize) -> usize {
        if node < self.num_ues() {
            self.assignment[node]
        } else {
            node - self.num_ues()
        }
    }

    pub fn is_virtual(&self, node: usize) -> bool {
        node >= self.num_ues()
    }

    pub fn virtual_node(&self, cluster: usize) -> usize {
        self.num_ues() + cluster
    }

    /// The vector `pi` (0-based cluster index per UE).
    pub fn pi(&self) -> &[usize] {
        &self.assignment
    }

    /// Real members of cluster `g` in ascending index order.
    pub fn members(&self, g: usize) -> Vec<usize> {
        (0..self.num_ues())
            .filter(|&n| self.assignment[n] == g)
            .collect()
    }

    /// The binary `G x N` assignment matrix `X`.
    pub fn matrix(&self) -> Vec<Vec<u8>> {
        (0..self.num_clusters)
            .map(|g| {
                self.assignment
                    .iter()
                    .map(|&a| u8::from(a == g))
                    .collect()
            })
            .collect()
    }

    pub fn with_assignment(&self, ue: usize, cluster: usize) -> Self {
        let mut next = self.clone();
        next.assignment[ue] = cluster;
        next
    }

    pub(crate) fn set(&mut self, ue: usize, cluster: usize) {
        self.assignment[ue] = cluster;
    }
}

/// Pilot-estimate variance for every AP/UE link:
/// `theta_mn = G p_p beta_mn^2 / (1 + G p_p sum_{n' in cluster(n)} beta_mn')`.
pub fn pilot_gain_theta(
    beta: &DMatrix<f64>,
    clustering: &ClusteringState,
    pilot_power: f64,
    num_clusters: usize,
) -> DMatrix<f64> {
    let gp = num_clusters as f64 * pilot_power;
    let (m_count, n_count) = beta.shape();
    let mut load = DMatrix::<f64>::zeros(m_count, clustering.num_clusters());
    for n in 0..n_count {
        let g = clustering.cluster_of(n);
        for m in 0..m_count {
            load[(m, g)] += beta[(m, n)];
        }
    }
    DMatrix::from_fn(m_count, n_count, |m, n| {
        let b = beta[(m, n)];
        gp * b * b / (1.0 + gp * load[(m, clustering.cluster_of(n))])
    })
}

/// Mean effective channel gain `L^2 (sum_m sqrt(theta_m))^2 + L sum_m theta_m`.
pub fn effective_gain<I>(theta_column: I, antennas: usize) -> f64
where
    I: IntoIterator<Item = f64>,
{
    let l = antennas as f64;
    let (root_sum, sum) = theta_column
        .into_iter()
        .fold((0.0, 0.0), |(r, s), t| (r + t.sqrt(), s + t));
    l * l * root_sum * root_sum + l * sum
}

/// Sorts UE indices by descending effective gain, ties by ascending index.
pub fn effective_gain_order(theta: &DMatrix<f64>, antennas: usize) -> Vec<usize> {
    let omega: Vec<f64> = (0..theta.ncols())
        .map(|n| effective_gain(theta.column(n).iter().copied(), antennas))
        .collect();
    order_by_gain(&omega, (0..theta.ncols()).collect())
}

fn order_by_gain(omega: &[f64], mut ues: Vec<usize>) -> Vec<usize> {
    ues.sort_by(|&a, &b| omega[b].total_cmp(&omega[a]).then(a.cmp(&b)));
    ues
}

/// Pilot statistics of one cluster under a given membership, with members in
/// SIC decoding order (strongest effective gain first).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats {
    pub members: Vec<usize>,
    /// `theta[k][m]` for `members[k]`.
    pub theta: Vec<Vec<f64>>,
    pub omega: Vec<f64>,
}

impl ClusterStats {
    pub fn new(members: &[usize], beta: &DMatrix<f64>, config: &SystemConfig) -> Self {
        let m_count = beta.nrows();
        let gp = config.num_clusters as f64 * config.pilot_power;
        let load: Vec<f64> = (0..m_count)
            .map(|m| members.iter().map(|&n| beta[(m, n)]).sum())
            .collect();
        let theta_of = |n: usize| -> Vec<f64> {
            (0..m_count)
                .map(|m| {
                    let b = beta[(m, n)];
                    gp * b * b / (1.0 + gp * load[m])
                })
                .collect()
        };
        let mut entries: Vec<(usize, Vec<f64>, f64)> = members
            .iter()
            .map(|&n| {
                let th = theta_of(n);
                let om = effective_gain(th.iter().copied(), config.antennas_per_ap);
                (n, th, om)
            })
            .collect();
        entries.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        let mut stats = ClusterStats {
            members: Vec::with_capacity(entries.len()),
            theta: Vec::with_capacity(entries.len()),
            omega: Vec::with_capacity(entries.len()),
        };
        for (n, th, om) in entries {
            stats.members.push(n);
            stats.theta.push(th);
            stats.omega.push(om);
        }
        stats
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn position(&self, ue: usize) -> Option<usize> {
        self.members.iter().position(|&n| n == ue)
    }
}

/// Clustering-dependent channel statistics: `theta`, the global decoding
/// order and per-cluster views.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub theta: DMatrix<f64>,
    pub omega: Vec<f64>,
    /// UE indices in descending effective-gain order.
    pub order: Vec<usize>,
    /// `rank[n]` is the position of UE `n` in `order`.
    pub rank: Vec<usize>,
    pub clusters: Vec<ClusterStats>,
}

impl NetworkState {
    pub fn new(deployment: &Deployment, clustering: &ClusteringState, config: &SystemConfig) -> Self {
        let beta = &deployment.beta;
        let clusters: Vec<ClusterStats> = (0..clustering.num_clusters())
            .map(|g| ClusterStats::new(&clustering.members(g), beta, config))
            .collect();
        let mut theta = DMatrix::zeros(beta.nrows(), beta.ncols());
        let mut omega = vec![0.0; beta.ncols()];
        for stats in &clusters {
            for (k, &n) in stats.members.iter().enumerate() {
                for (m, &t) in stats.theta[k].iter().enumerate() {
                    theta[(m, n)] = t;
                }
                omega[n] = stats.omega[k];
            }
        }
        let order = order_by_gain(&omega, (0..beta.ncols()).collect());
        let mut rank = vec![0; order.len()];
        for (pos, &n) in order.iter().enumerate() {
            rank[n] = pos;
        }
        NetworkState {
            theta,
            omega,
            order,
            rank,
            clusters,
        }
    }

    pub fn cluster(&self, g: usize) -> &ClusterStats {
        &self.clusters[g]
    }
}
