//! Synthetic instances: upsampling a base instance through its embeddings,
//! planted-role fixtures with known optimal policies, and bases shaped like
//! given size statistics.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_distance, norm, EmbeddingTable, NodeKind, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::model::{AccessInstance, DatastoreEntry, GroupEntry, InstanceFile};

/// How user-datastore pairs are weighted when sampling permission edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeWeight {
    /// Cosine distance `1 - cos`.
    #[default]
    Distance,
    /// Rescaled cosine similarity `(1 + cos) / 2`.
    Similarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpsampleConfig {
    pub user_range: (usize, usize),
    pub store_range: (usize, usize),
    /// Standard deviation of the Gaussian noise added to embeddings.
    pub noise_sigma: f64,
    pub weight: EdgeWeight,
    pub seed: u64,
}

impl Default for UpsampleConfig {
    fn default() -> Self {
        Self {
            user_range: (10, 150),
            store_range: (50, 300),
            noise_sigma: 0.01,
            weight: EdgeWeight::Distance,
            seed: 0,
        }
    }
}

impl UpsampleConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (usize, usize)| lo >= 1 && lo <= hi;
        if !ok(self.user_range) || !ok(self.store_range) {
            return Err(Error::InvalidConfig("size ranges must be non-empty and positive".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise sigma must be >= 0".into()));
        }
        Ok(())
    }
}

fn padded(prefix: &str, i: usize, n: usize) -> String {
    let width = n.to_string().len().max(3);
    format!("{prefix}{:0width$}", i + 1)
}

fn noisy_unit(v: &[f64], noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().map(|x| x + noise.sample(rng)).collect();
    let n = norm(&out);
    if n > 0.0 {
        out.iter_mut().for_each(|x| *x /= n);
    }
    out
}

/// Upsamples `base`: sizes drawn uniformly from the configured ranges,
/// nodes drawn with replacement, embeddings perturbed and renormalised,
/// permission edges drawn without replacement with probability weights from
/// the user-datastore embedding geometry until the base density is matched,
/// and dynamic edges thinned uniformly from them to the base ratio.
pub fn upsample(base: &AccessInstance, emb: &EmbeddingTable, cfg: &UpsampleConfig) -> Result<(AccessInstance, EmbeddingTable)> {
    cfg.validate()?;
    if base.n_users() == 0 || base.n_datastores() == 0 {
        return Err(Error::InvalidConfig("base instance needs users and datastores".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let nu = rng.random_range(cfg.user_range.0..=cfg.user_range.1);
    let nd = rng.random_range(cfg.store_range.0..=cfg.store_range.1);

    let src_users: Vec<usize> = (0..nu).map(|_| rng.random_range(0..base.n_users())).collect();
    let src_stores: Vec<usize> = (0..nd).map(|_| rng.random_range(0..base.n_datastores())).collect();
    let base_user_vecs: Vec<Vec<f64>> = base.users().iter().map(|u| emb.unit(u)).collect::<Result<_>>()?;
    let base_store_vecs: Vec<Vec<f64>> = base.datastores().iter().map(|d| emb.unit(d)).collect::<Result<_>>()?;

    let mut table = EmbeddingTable::new(emb.dim);
    let users: Vec<String> = (0..nu).map(|i| padded("u", i, nu)).collect();
    let stores: Vec<String> = (0..nd).map(|i| padded("d", i, nd)).collect();
    let user_vecs: Vec<Vec<f64>> = src_users.iter().map(|&s| noisy_unit(&base_user_vecs[s], &noise, &mut rng)).collect();
    let store_vecs: Vec<Vec<f64>> = src_stores.iter().map(|&s| noisy_unit(&base_store_vecs[s], &noise, &mut rng)).collect();
    for (id, v) in users.iter().zip(&user_vecs) {
        table.insert(id.clone(), NodeKind::User, v.clone());
    }
    for (id, v) in stores.iter().zip(&store_vecs) {
        table.insert(id.clone(), NodeKind::Datastore, v.clone());
    }

    let pairs = nu * nd;
    let target = ((base.permission_density() * pairs as f64).round() as usize).clamp(1, pairs);
    // Weighted sampling without replacement: keep the largest ln(r) / w.
    let mut keys: Vec<(f64, usize)> = (0..pairs)
        .map(|p| {
            let (u, d) = (p / nd, p % nd);
            let c = 1.0 - cosine_distance(&user_vecs[u], &store_vecs[d]);
            let w = match cfg.weight {
                EdgeWeight::Distance => 1.0 - c,
                EdgeWeight::Similarity => (1.0 + c) / 2.0,
            }
            .max(1e-12);
            let r: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            (r.ln() / w, p)
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut edges: Vec<usize> = keys[..target].iter().map(|k| k.1).collect();
    edges.sort_unstable();

    let base_ratio = if base.ud_hat().count_ones() == 0 {
        0.0
    } else {
        base.ud().count_ones() as f64 / base.ud_hat().count_ones() as f64
    };
    let n_dynamic = ((base_ratio * target as f64).round() as usize).min(target);
    let mut dynamic: Vec<usize> = sample(&mut rng, target, n_dynamic).into_iter().map(|i| edges[i]).collect();
    dynamic.sort_unstable();
    let base_counts: Vec<u64> = base.access_counts().values().copied().collect();

    let file = InstanceFile {
        users: users.clone(),
        datastores: stores
            .iter()
            .zip(&src_stores)
            .map(|(id, &s)| DatastoreEntry {
                id: id.clone(),
                data_types: base.dt().row(s).iter().map(|t| base.data_types()[t].clone()).collect(),
            })
            .collect(),
        groups: Vec::new(),
        direct_permissions: edges.iter().map(|&p| (users[p / nd].clone(), stores[p % nd].clone())).collect(),
        accesses: dynamic
            .iter()
            .map(|&p| {
                let count = if base_counts.is_empty() { 1 } else { base_counts[rng.random_range(0..base_counts.len())] };
                (users[p / nd].clone(), stores[p % nd].clone(), count)
            })
            .collect(),
    };
    Ok((AccessInstance::from_file(file)?, table))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub num_roles: usize,
    pub users_per_role: usize,
    pub stores_per_role: usize,
    /// Stores every user accesses.
    pub overlap: usize,
    /// UDhat size relative to UD per user; 1 means no dormant permissions.
    pub dormancy_factor: f64,
    /// Give every role's stores a data type of their own.
    pub typed: bool,
    /// When set, access follows `projects` project blocks that cut across
    /// roles while embeddings still follow roles.
    pub projects: Option<usize>,
    pub noise_sigma: f64,
    pub dim: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            num_roles: 3,
            users_per_role: 5,
            stores_per_role: 4,
            overlap: 0,
            dormancy_factor: 2.0,
            typed: false,
            projects: None,
            noise_sigma: 0.01,
            dim: DEFAULT_DIM,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    /// Role per instance user.
    pub role_of_user: Vec<usize>,
    /// Access block (role, or project when projects are used) per user.
    pub block_of_user: Vec<usize>,
    /// Number of distinct access blocks.
    pub num_blocks: usize,
}

/// Planted-role instance. Each access block has an existing group granting
/// its stores (plus shared ones) to its users; dormant permissions are
/// direct grants to other blocks' stores.
pub fn planted(cfg: &PlantedConfig) -> Result<(AccessInstance, EmbeddingTable, PlantedTruth)> {
    if cfg.num_roles == 0 || cfg.users_per_role == 0 || cfg.stores_per_role == 0 {
        return Err(Error::InvalidConfig("roles, users per role and stores per role must be positive".into()));
    }
    if !(cfg.dormancy_factor >= 1.0) {
        return Err(Error::InvalidConfig("dormancy factor must be >= 1".into()));
    }
    if cfg.dim < cfg.num_roles {
        return Err(Error::InvalidConfig("embedding dimension must be at least the number of roles".into()));
    }
    if cfg.projects == Some(0) {
        return Err(Error::InvalidConfig("projects must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let n_users = cfg.num_roles * cfg.users_per_role;
    let n_blocks = cfg.projects.unwrap_or(cfg.num_roles);
    let n_stores = n_blocks * cfg.stores_per_role + cfg.overlap;

    let role_of_user: Vec<usize> = (0..n_users).map(|i| i / cfg.users_per_role).collect();
    let block_of_user: Vec<usize> = match cfg.projects {
        None => role_of_user.clone(),
        Some(p) => (0..n_users).map(|i| (i % cfg.users_per_role) % p).collect(),
    };
    let users: Vec<String> = (0..n_users).map(|i| padded("u", i, n_users)).collect();
    let stores: Vec<String> = (0..n_stores).map(|i| padded("d", i, n_stores)).collect();
    let block_stores = |b: usize| b * cfg.stores_per_role..(b + 1) * cfg.stores_per_role;
    let shared = n_blocks * cfg.stores_per_role..n_stores;

    let datastores = (0..n_stores)
        .map(|d| DatastoreEntry {
            id: stores[d].clone(),
            data_types: if cfg.typed && d < shared.start {
                vec![format!("type-{:02}", d / cfg.stores_per_role)]
            } else {
                vec![]
            },
        })
        .collect();

    let groups = (0..n_blocks)
        .map(|b| GroupEntry {
            id: format!("team-{:02}", b + 1),
            members: (0..n_users).filter(|&u| block_of_user[u] == b).map(|u| users[u].clone()).collect(),
            datastores: block_stores(b).chain(shared.clone()).map(|d| stores[d].clone()).collect(),
        })
        .collect();

    let mut direct = Vec::new();
    let mut accesses = Vec::new();
    let per_user = cfg.stores_per_role + cfg.overlap;
    let extra = ((cfg.dormancy_factor - 1.0) * per_user as f64).round() as usize;
    for u in 0..n_users {
        for d in block_stores(block_of_user[u]).chain(shared.clone()) {
            accesses.push((users[u].clone(), stores[d].clone(), rng.random_range(1..50u64)));
        }
        let others: Vec<usize> = (0..shared.start).filter(|d| !block_stores(block_of_user[u]).contains(d)).collect();
        if extra > others.len() {
            return Err(Error::InvalidConfig(format!(
                "dormancy factor needs {extra} dormant stores per user but only {} exist",
                others.len()
            )));
        }
        let mut picks: Vec<usize> = sample(&mut rng, others.len(), extra).into_iter().map(|i| others[i]).collect();
        picks.sort_unstable();
        for d in picks {
            direct.push((users[u].clone(), stores[d].clone()));
        }
    }

    let mut table = EmbeddingTable::new(cfg.dim);
    let one_hot = |r: usize| {
        let mut v = vec![0.0; cfg.dim];
        v[r] = 1.0;
        v
    };
    for u in 0..n_users {
        table.insert(users[u].clone(), NodeKind::User, noisy_unit(&one_hot(role_of_user[u]), &noise, &mut rng));
    }
    for d in 0..n_stores {
        let base = if d < shared.start {
            one_hot((d / cfg.stores_per_role) % cfg.num_roles)
        } else {
            vec![1.0; cfg.dim]
        };
        table.insert(stores[d].clone(), NodeKind::Datastore, noisy_unit(&base, &noise, &mut rng));
    }

    let inst = AccessInstance::from_file(InstanceFile {
        users,
        datastores,
        groups,
        direct_permissions: direct,
        accesses,
    })?;
    Ok((inst, table, PlantedTruth { role_of_user, block_of_user, num_blocks: n_blocks }))
}

/// Size statistics of an instance: users, datastores, dynamic (access)
/// edges and raw permission edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub users: usize,
    pub datastores: usize,
    pub dynamic_edges: usize,
    pub permission_edges: usize,
}

/// Size statistics of eight production permission graphs.
pub const REFERENCE_SHAPES: [Shape; 8] = [
    Shape { users: 13, datastores: 56, dynamic_edges: 513, permission_edges: 1969 },
    Shape { users: 32, datastores: 89, dynamic_edges: 1192, permission_edges: 16791 },
    Shape { users: 39, datastores: 341, dynamic_edges: 1602, permission_edges: 28880 },
    Shape { users: 57, datastores: 572, dynamic_edges: 7153, permission_edges: 37854 },
    Shape { users: 60, datastores: 88, dynamic_edges: 757, permission_edges: 4115 },
    Shape { users: 64, datastores: 258, dynamic_edges: 2418, permission_edges: 72272 },
    Shape { users: 112, datastores: 163, dynamic_edges: 2789, permission_edges: 4025 },
    Shape { users: 150, datastores: 600, dynamic_edges: 3095, permission_edges: 11517 },
];

/// Random instance with exactly the given counts. Accessed pairs are
/// permitted directly; further direct permissions raise UDhat to half the
/// permission edges (bounded by the number of pairs); the remaining edges
/// are single-member existing groups re-granting stores their member
/// already holds.
pub fn shaped_base(shape: &Shape, seed: u64) -> Result<AccessInstance> {
    let Shape { users: nu, datastores: nd, dynamic_edges, permission_edges } = *shape;
    let pairs = nu * nd;
    if dynamic_edges > pairs || dynamic_edges > permission_edges || nu == 0 || nd == 0 {
        return Err(Error::InvalidConfig(format!("inconsistent shape {shape:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users: Vec<String> = (0..nu).map(|i| padded("u", i, nu)).collect();
    let stores: Vec<String> = (0..nd).map(|i| padded("d", i, nd)).collect();

    let mut cells: Vec<usize> = sample(&mut rng, pairs, pairs).into_vec();
    let direct_count = (permission_edges / 2).clamp(dynamic_edges.max(1).min(pairs), pairs);
    cells.truncate(direct_count);
    let accessed: BTreeSet<usize> = cells[..dynamic_edges].iter().copied().collect();
    let mut row_of: Vec<Vec<usize>> = vec![Vec::new(); nu];
    for &p in &cells {
        row_of[p / nd].push(p % nd);
    }

    let mut groups = Vec::new();
    let mut remaining = permission_edges - direct_count;
    let holders: Vec<usize> = (0..nu).filter(|&u| !row_of[u].is_empty()).collect();
    while remaining > 0 {
        let u = holders[groups.len() % holders.len()];
        let grants = (remaining - 1).min(row_of[u].len()).min(rng.random_range(1..=row_of[u].len()));
        let chosen: Vec<usize> = sample(&mut rng, row_of[u].len(), grants).into_iter().map(|i| row_of[u][i]).collect();
        groups.push(GroupEntry {
            id: padded("g", groups.len(), permission_edges),
            members: vec![users[u].clone()],
            datastores: chosen.iter().map(|&d| stores[d].clone()).collect(),
        });
        remaining -= 1 + grants;
    }

    AccessInstance::from_file(InstanceFile {
        users: users.clone(),
        datastores: stores.iter().map(|id| DatastoreEntry { id: id.clone(), data_types: vec![] }).collect(),
        groups,
        direct_permissions: cells.iter().map(|&p| (users[p / nd].clone(), stores[p % nd].clone())).collect(),
        accesses: accessed
            .iter()
            .map(|&p| (users[p / nd].clone(), stores[p % nd].clone(), rng.random_range(1..100u64)))
            .collect(),
    })
}

/// Gaussian unit vectors for every user and datastore of `inst`.
pub fn random_embeddings(inst: &AccessInstance, dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut table = EmbeddingTable::new(dim);
    let draw = |rng: &mut ChaCha8Rng| {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let n = norm(&v);
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    for u in inst.users() {
        table.insert(u.clone(), NodeKind::User, draw(&mut rng));
    }
    for d in inst.datastores() {
        table.insert(d.clone(), NodeKind::Datastore, draw(&mut rng));
    }
    table
}

#[derive(Debug, Clone)]
pub struct BatchItem {
    pub name: String,
    pub base: usize,
    pub seed: u64,
    pub instance: AccessInstance,
    pub embeddings: EmbeddingTable,
}

/// `per_base` upsampled instances for every base, generated in parallel.
/// Item `i` of base `b` uses seed `cfg.seed + b * per_base + i`.
pub fn generate_batch(
    bases: &[(AccessInstance, EmbeddingTable)],
    per_base: usize,
    cfg: &UpsampleConfig,
) -> Result<Vec<BatchItem>> {
    let jobs: Vec<(usize, usize)> = (0..bases.len()).flat_map(|b| (0..per_base).map(move |i| (b, i))).collect();
    let total = jobs.len();
    jobs.into_par_iter()
        .map(|(b, i)| {
            let seed = cfg.seed.wrapping_add((b * per_base + i) as u64);
            let (instance, embeddings) = upsample(&bases[b].0, &bases[b].1, &UpsampleConfig { seed, ..*cfg })?;
            Ok(BatchItem { name: padded("synth-", b * per_base + i, total), base: b, seed, instance, embeddings })
        })
        .collect()
}

/// `name,base,seed,users,datastores,dynamic_edges,permission_edges,density,base_density`
pub fn manifest_csv(items: &[BatchItem], bases: &[(AccessInstance, EmbeddingTable)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "name",
        "base",
        "seed",
        "users",
        "datastores",
        "dynamic_edges",
        "permission_edges",
        "density",
        "base_density",
    ])?;
    for it in items {
        w.write_record([
            it.name.clone(),
            it.base.to_string(),
            it.seed.to_string(),
            it.instance.n_users().to_string(),
            it.instance.n_datastores().to_string(),
            it.instance.dynamic_edge_count().to_string(),
            it.instance.raw_permission_edge_count().to_string(),
            format!("{:.6}", it.instance.permission_density()),
            format!("{:.6}", bases[it.base].0.permission_density()),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8"))
}
