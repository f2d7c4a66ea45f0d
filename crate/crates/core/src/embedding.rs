//! Embedding tables, k-means over unit-normalised user vectors, knee-point
//! selection of the cluster count and the diversity threshold derived from
//! cluster diameters.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DIM: usize = 50;
pub const DEFAULT_K_MIN: usize = 5;
pub const DEFAULT_K_MAX: usize = 25;
const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ROUNDS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    User,
    Datastore,
    Role,
    Group,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingNode {
    pub kind: NodeKind,
    pub vec: Vec<f64>,
}

/// `{"dim": 50, "nodes": {"<id>": {"kind": "user", "vec": [..]}}}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub nodes: BTreeMap<String, EmbeddingNode>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, nodes: BTreeMap::new() }
    }

    pub fn insert(&mut self, id: impl Into<String>, kind: NodeKind, vec: Vec<f64>) {
        self.nodes.insert(id.into(), EmbeddingNode { kind, vec });
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: Self = serde_json::from_str(text).map_err(|e| Error::parse("embedding table", e))?;
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("embedding table serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Schema("embedding dimension must be positive".into()));
        }
        for (id, node) in &self.nodes {
            if node.vec.len() != self.dim {
                return Err(Error::DimensionMismatch(format!(
                    "embedding of `{id}` has {} components, expected {}",
                    node.vec.len(),
                    self.dim
                )));
            }
            if node.vec.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("embedding of `{id}` has non-finite components")));
            }
            if node.kind == NodeKind::User && norm(&node.vec) == 0.0 {
                return Err(Error::Schema(format!("embedding of user `{id}` is the zero vector")));
            }
        }
        Ok(())
    }

    /// User ids in lexicographic order.
    pub fn user_ids(&self) -> Vec<String> {
        self.nodes
            .iter()
            .filter(|(_, n)| n.kind == NodeKind::User)
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Unit-normalised vector of one node.
    pub fn unit(&self, id: &str) -> Result<Vec<f64>> {
        let node = self.nodes.get(id).ok_or_else(|| Error::MissingEmbedding(id.to_string()))?;
        let n = norm(&node.vec);
        if n == 0.0 {
            return Err(Error::Schema(format!("embedding of `{id}` is the zero vector")));
        }
        Ok(node.vec.iter().map(|v| v / n).collect())
    }

    /// Unit-normalised user vectors in [`user_ids`](Self::user_ids) order.
    pub fn unit_users(&self) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
        let ids = self.user_ids();
        let vecs = ids.iter().map(|id| self.unit(id)).collect::<Result<_>>()?;
        Ok((ids, vecs))
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `1 - a.b` for unit vectors.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - dot(a, b)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub k: usize,
    pub users: Vec<String>,
    /// Cluster per entry of `users`.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to the closest centre.
    pub sse: f64,
    /// SSE after each assignment step of the winning restart.
    pub sse_trace: Vec<f64>,
}

impl ClusteringResult {
    pub fn cluster_of(&self) -> BTreeMap<String, usize> {
        self.users.iter().cloned().zip(self.assignment.iter().copied()).collect()
    }

    /// `user,cluster` rows.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["user", "cluster"])?;
        for (u, c) in self.users.iter().zip(&self.assignment) {
            w.write_record([u.as_str(), &c.to_string()])?;
        }
        Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8"))
    }
}

struct LloydRun {
    assignment: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    sse: f64,
    trace: Vec<f64>,
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        let c = points[next].clone();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> LloydRun {
    let dim = points[0].len();
    let k = centroids.len();
    let mut assignment = vec![usize::MAX; points.len()];
    let mut trace = Vec::new();
    let mut sse = 0.0;
    for _ in 0..KMEANS_MAX_ROUNDS {
        let mut changed = false;
        sse = 0.0;
        for (i, p) in points.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (c, centre) in centroids.iter().enumerate() {
                let d = sq_dist(p, centre);
                if d < best.0 {
                    best = (d, c);
                }
            }
            if assignment[i] != best.1 {
                assignment[i] = best.1;
                changed = true;
            }
            sse += best.0;
        }
        trace.push(sse);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            // An empty cluster keeps its centre.
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    LloydRun { assignment, centroids, sse, trace }
}

/// Lloyd's algorithm with k-means++ seeding over raw points, best of ten
/// seeded restarts.
pub fn kmeans_points(points: &[Vec<f64>], k: usize, seed: u64) -> Result<(Vec<usize>, Vec<Vec<f64>>, f64, Vec<f64>)> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidConfig(format!("k = {k} must lie in [1, {}]", points.len())));
    }
    let mut best: Option<LloydRun> = None;
    for r in 0..KMEANS_RESTARTS as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        let run = lloyd(points, plus_plus_init(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.sse < b.sse) {
            best = Some(run);
        }
    }
    let b = best.expect("at least one restart");
    Ok((b.assignment, b.centroids, b.sse, b.trace))
}

/// Clusters the user vectors of `table` after unit normalisation.
pub fn kmeans(table: &EmbeddingTable, k: usize, seed: u64) -> Result<ClusteringResult> {
    let (users, points) = table.unit_users()?;
    let (assignment, centroids, sse, sse_trace) = kmeans_points(&points, k, seed)?;
    Ok(ClusteringResult { k, users, assignment, centroids, sse, sse_trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub k_opt: usize,
    /// `(k, sse)` over the searched grid.
    pub curve: Vec<(usize, f64)>,
    /// `k_max` was lowered to the number of users.
    pub clamped: bool,
    pub clustering: ClusteringResult,
}

/// Knee of a decreasing curve: the point farthest below the chord from the
/// first to the last point after scaling both axes to `[0, 1]`. Ties go to
/// the smallest `x`. `None` for fewer than three points.
pub fn knee_point(curve: &[(usize, f64)]) -> Option<usize> {
    if curve.len() < 3 {
        return None;
    }
    let (x0, x1) = (curve[0].0 as f64, curve[curve.len() - 1].0 as f64);
    let ymin = curve.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let ymax = curve.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let mut best = (f64::NEG_INFINITY, curve[0].0);
    for &(k, y) in curve {
        let x = (k as f64 - x0) / (x1 - x0);
        let yn = if ymax > ymin { (y - ymin) / (ymax - ymin) } else { 0.0 };
        let dist = (1.0 - x) - yn;
        if dist > best.0 + 1e-12 {
            best = (dist, k);
        }
    }
    Some(best.1)
}

/// Grid search over `k in [k_min, k_max]` with knee detection on the SSE
/// curve. `k_max` is clamped to the number of users.
pub fn select_k(table: &EmbeddingTable, k_min: usize, k_max: usize, seed: u64) -> Result<KSelection> {
    let (users, points) = table.unit_users()?;
    if users.is_empty() {
        return Err(Error::InvalidConfig("embedding table has no user vectors".into()));
    }
    let upper = k_max.min(users.len());
    let clamped = upper < k_max;
    if clamped {
        log::warn!("k_max lowered from {k_max} to {upper} (number of users)");
    }
    let lower = k_min.clamp(1, upper);
    let mut curve = Vec::new();
    let mut runs = Vec::new();
    for k in lower..=upper {
        let run = kmeans_points(&points, k, seed)?;
        curve.push((k, run.2));
        runs.push(run);
    }
    let k_opt = match knee_point(&curve) {
        Some(k) => k,
        None => {
            log::warn!("fewer than three grid points; falling back to k = {lower}");
            lower
        }
    };
    let (assignment, centroids, sse, sse_trace) = runs.swap_remove(k_opt - lower);
    Ok(KSelection {
        k_opt,
        curve,
        clamped,
        clustering: ClusteringResult { k: k_opt, users, assignment, centroids, sse, sse_trace },
    })
}

/// Largest cosine distance between two users of the same cluster.
pub fn compute_alpha(table: &EmbeddingTable, clustering: &ClusteringResult) -> Result<f64> {
    let vecs: Vec<Vec<f64>> = clustering.users.iter().map(|u| table.unit(u)).collect::<Result<_>>()?;
    let mut alpha: f64 = 0.0;
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            if clustering.assignment[i] == clustering.assignment[j] {
                alpha = alpha.max(cosine_distance(&vecs[i], &vecs[j]));
            }
        }
    }
    Ok(alpha)
}
