//! Access model: the constant problem data, the generated policy, and the
//! quantities derived from them (effective access, dormant permissions,
//! rendered policy documents).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bits::{BitMatrix, BitSet};
use crate::error::{Error, Result};

/// On-disk instance schema.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub users: Vec<String>,
    pub datastores: Vec<DatastoreEntry>,
    #[serde(default)]
    pub groups: Vec<GroupEntry>,
    #[serde(default)]
    pub direct_permissions: Vec<(String, String)>,
    #[serde(default)]
    pub accesses: Vec<(String, String, u64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatastoreEntry {
    pub id: String,
    #[serde(default)]
    pub data_types: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupEntry {
    pub id: String,
    #[serde(default)]
    pub members: Vec<String>,
    #[serde(default)]
    pub datastores: Vec<String>,
}

/// Constant problem data. Identifiers are kept in lexicographic order and all
/// matrices are indexed accordingly.
#[derive(Debug, Clone)]
pub struct AccessInstance {
    users: Vec<String>,
    datastores: Vec<String>,
    groups: Vec<String>,
    data_types: Vec<String>,
    ud: BitMatrix,
    ud_hat: BitMatrix,
    gd: BitMatrix,
    group_members: BitMatrix,
    dt: BitMatrix,
    direct: BitMatrix,
    access_counts: BTreeMap<(usize, usize), u64>,
    user_index: HashMap<String, usize>,
    datastore_index: HashMap<String, usize>,
}

fn index_of(ids: &[String], kind: &str) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if map.insert(id.clone(), i).is_some() {
            return Err(Error::Schema(format!("duplicate {kind} id `{id}`")));
        }
    }
    Ok(map)
}

fn lookup(map: &HashMap<String, usize>, id: &str, kind: &str, context: &str) -> Result<usize> {
    map.get(id)
        .copied()
        .ok_or_else(|| Error::Schema(format!("{context} references unknown {kind} `{id}`")))
}

impl AccessInstance {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile =
            serde_json::from_str(text).map_err(|e| Error::parse("instance JSON", e))?;
        Self::from_file(file)
    }

    /// Validates a parsed instance file and builds the matrices.
    pub fn from_file(file: InstanceFile) -> Result<Self> {
        let mut users = file.users.clone();
        users.sort();
        let user_index = index_of(&users, "user")?;

        let mut stores: Vec<&DatastoreEntry> = file.datastores.iter().collect();
        stores.sort_by(|a, b| a.id.cmp(&b.id));
        let datastores: Vec<String> = stores.iter().map(|s| s.id.clone()).collect();
        let datastore_index = index_of(&datastores, "datastore")?;

        let data_types: Vec<String> = stores
            .iter()
            .flat_map(|s| s.data_types.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let type_index: HashMap<&str, usize> = data_types
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        let mut dt = BitMatrix::new(datastores.len(), data_types.len());
        for (d, s) in stores.iter().enumerate() {
            for t in &s.data_types {
                dt.set(d, type_index[t.as_str()], true);
            }
        }

        let mut group_entries: Vec<&GroupEntry> = file.groups.iter().collect();
        group_entries.sort_by(|a, b| a.id.cmp(&b.id));
        let groups: Vec<String> = group_entries.iter().map(|g| g.id.clone()).collect();
        index_of(&groups, "group")?;
        let mut gd = BitMatrix::new(groups.len(), datastores.len());
        let mut group_members = BitMatrix::new(users.len(), groups.len());
        for (g, entry) in group_entries.iter().enumerate() {
            let ctx = format!("group `{}`", entry.id);
            for u in &entry.members {
                group_members.set(lookup(&user_index, u, "user", &ctx)?, g, true);
            }
            for d in &entry.datastores {
                gd.set(g, lookup(&datastore_index, d, "datastore", &ctx)?, true);
            }
        }

        let mut direct = BitMatrix::new(users.len(), datastores.len());
        for (u, d) in &file.direct_permissions {
            let ui = lookup(&user_index, u, "user", "direct permission")?;
            let di = lookup(&datastore_index, d, "datastore", "direct permission")?;
            direct.set(ui, di, true);
        }

        let mut ud = BitMatrix::new(users.len(), datastores.len());
        let mut access_counts = BTreeMap::new();
        for (u, d, count) in &file.accesses {
            let ui = lookup(&user_index, u, "user", "access")?;
            let di = lookup(&datastore_index, d, "datastore", "access")?;
            ud.set(ui, di, true);
            *access_counts.entry((ui, di)).or_insert(0) += *count;
        }

        let ud_hat = direct.or(&group_members.bool_product(&gd));

        let missing: Vec<(String, String)> = ud
            .ones()
            .filter(|&(u, d)| !ud_hat.get(u, d))
            .map(|(u, d)| (users[u].clone(), datastores[d].clone()))
            .collect();
        if !missing.is_empty() {
            return Err(Error::AccessNotPermitted(missing));
        }

        Ok(Self {
            users,
            datastores,
            groups,
            data_types,
            ud,
            ud_hat,
            gd,
            group_members,
            dt,
            direct,
            access_counts,
            user_index,
            datastore_index,
        })
    }

    /// Canonical file form: every list sorted, duplicates merged.
    pub fn to_file(&self) -> InstanceFile {
        InstanceFile {
            users: self.users.clone(),
            datastores: self
                .datastores
                .iter()
                .enumerate()
                .map(|(d, id)| DatastoreEntry {
                    id: id.clone(),
                    data_types: self.dt.row(d).iter().map(|t| self.data_types[t].clone()).collect(),
                })
                .collect(),
            groups: self
                .groups
                .iter()
                .enumerate()
                .map(|(g, id)| GroupEntry {
                    id: id.clone(),
                    members: (0..self.users.len())
                        .filter(|&u| self.group_members.get(u, g))
                        .map(|u| self.users[u].clone())
                        .collect(),
                    datastores: self.gd.row(g).iter().map(|d| self.datastores[d].clone()).collect(),
                })
                .collect(),
            direct_permissions: self
                .direct
                .ones()
                .map(|(u, d)| (self.users[u].clone(), self.datastores[d].clone()))
                .collect(),
            accesses: self
                .access_counts
                .iter()
                .map(|(&(u, d), &c)| (self.users[u].clone(), self.datastores[d].clone(), c))
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_file()).expect("instance serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn datastores(&self) -> &[String] {
        &self.datastores
    }

    pub fn existing_groups(&self) -> &[String] {
        &self.groups
    }

    pub fn data_types(&self) -> &[String] {
        &self.data_types
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_datastores(&self) -> usize {
        self.datastores.len()
    }

    /// Historical access UD (users x datastores).
    pub fn ud(&self) -> &BitMatrix {
        &self.ud
    }

    /// Potential access UDhat (users x datastores), frozen at load time.
    pub fn ud_hat(&self) -> &BitMatrix {
        &self.ud_hat
    }

    /// Existing group grants GD (groups x datastores).
    pub fn gd(&self) -> &BitMatrix {
        &self.gd
    }

    /// Existing group membership (users x groups).
    pub fn group_members(&self) -> &BitMatrix {
        &self.group_members
    }

    /// Datastore data types DT (datastores x types).
    pub fn dt(&self) -> &BitMatrix {
        &self.dt
    }

    /// Direct user-to-datastore permission edges.
    pub fn direct_permissions(&self) -> &BitMatrix {
        &self.direct
    }

    pub fn access_counts(&self) -> &BTreeMap<(usize, usize), u64> {
        &self.access_counts
    }

    pub fn access_count(&self, user: usize, datastore: usize) -> u64 {
        self.access_counts.get(&(user, datastore)).copied().unwrap_or(0)
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn datastore_index(&self, id: &str) -> Option<usize> {
        self.datastore_index.get(id).copied()
    }

    /// UDhat recomputed from the raw permission edges.
    pub fn recompute_ud_hat(&self) -> BitMatrix {
        self.direct.or(&self.group_members.bool_product(&self.gd))
    }

    /// Number of dynamic (access) edges, i.e. the support of UD.
    pub fn dynamic_edge_count(&self) -> usize {
        self.access_counts.len()
    }

    /// Number of raw permission-structure edges: direct user-datastore
    /// grants, user-group memberships and group-datastore grants.
    pub fn raw_permission_edge_count(&self) -> usize {
        self.direct.count_ones() + self.group_members.count_ones() + self.gd.count_ones()
    }

    /// Fraction of user-datastore pairs covered by UDhat.
    pub fn permission_density(&self) -> f64 {
        let pairs = self.n_users() * self.n_datastores();
        if pairs == 0 {
            0.0
        } else {
            self.ud_hat.count_ones() as f64 / pairs as f64
        }
    }

    /// Dormant permissions under the existing policy: `sum UDhat - sum UD`.
    pub fn baseline_dormant(&self) -> usize {
        self.ud_hat.count_ones() - self.ud.count_ones()
    }

    /// Data types a user has historically touched.
    pub fn type_profile(&self, user: usize) -> BitSet {
        let mut types = BitSet::new(self.data_types.len());
        for d in self.ud.row(user).iter() {
            types.union_with(self.dt.row(d));
        }
        types
    }
}

/// Decision variables of a rewrite: membership in generated groups (UG) and
/// the grants of those groups (DAD).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedPolicy {
    /// users x generated groups
    pub ug: BitMatrix,
    /// generated groups x datastores
    pub dad: BitMatrix,
}

impl GeneratedPolicy {
    pub fn empty(n_users: usize, n_groups: usize, n_datastores: usize) -> Self {
        Self {
            ug: BitMatrix::new(n_users, n_groups),
            dad: BitMatrix::new(n_groups, n_datastores),
        }
    }

    pub fn num_groups(&self) -> usize {
        self.ug.n_cols()
    }

    /// Members of generated group `g`.
    pub fn members(&self, g: usize) -> BitSet {
        self.ug.column(g)
    }

    pub fn check_dims(&self, inst: &AccessInstance) -> Result<()> {
        if self.ug.n_rows() != inst.n_users() {
            return Err(Error::DimensionMismatch(format!(
                "UG has {} rows but instance has {} users",
                self.ug.n_rows(),
                inst.n_users()
            )));
        }
        if self.dad.n_rows() != self.ug.n_cols() {
            return Err(Error::DimensionMismatch(format!(
                "UG has {} groups but DAD has {} rows",
                self.ug.n_cols(),
                self.dad.n_rows()
            )));
        }
        if self.dad.n_cols() != inst.n_datastores() {
            return Err(Error::DimensionMismatch(format!(
                "DAD has {} columns but instance has {} datastores",
                self.dad.n_cols(),
                inst.n_datastores()
            )));
        }
        Ok(())
    }
}

/// `UD~(u, d) = OR_g (UG(u, g) AND DAD(g, d)) AND UDhat(u, d)`.
pub fn effective_access(inst: &AccessInstance, pol: &GeneratedPolicy) -> Result<BitMatrix> {
    pol.check_dims(inst)?;
    Ok(pol.ug.bool_product(&pol.dad).and(inst.ud_hat()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DormantReport {
    /// `sum UD~ - sum UD` under the generated policy.
    pub remaining: i64,
    pub per_user: Vec<i64>,
    /// `sum UDhat - sum UD` under the existing policy.
    pub baseline: usize,
}

impl DormantReport {
    /// Remaining dormant permissions as a percentage of the baseline.
    pub fn remaining_percent(&self) -> f64 {
        if self.baseline == 0 {
            0.0
        } else {
            100.0 * self.remaining as f64 / self.baseline as f64
        }
    }
}

pub fn dormant_count(inst: &AccessInstance, pol: &GeneratedPolicy) -> Result<DormantReport> {
    let eff = effective_access(inst, pol)?;
    Ok(dormant_from_effective(inst, &eff))
}

pub(crate) fn dormant_from_effective(inst: &AccessInstance, eff: &BitMatrix) -> DormantReport {
    let per_user: Vec<i64> = (0..inst.n_users())
        .map(|u| eff.row(u).count() as i64 - inst.ud().row(u).count() as i64)
        .collect();
    DormantReport {
        remaining: per_user.iter().sum(),
        per_user,
        baseline: inst.baseline_dormant(),
    }
}

pub const DEFAULT_ACTION: &str = "datastore:Read";

/// Declarative policy rendering of a generated policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDocument {
    #[serde(rename = "Statement")]
    pub statements: Vec<Statement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    #[serde(rename = "Effect")]
    pub effect: String,
    #[serde(rename = "Action")]
    pub actions: Vec<String>,
    #[serde(rename = "Principal")]
    pub principal: String,
    #[serde(rename = "Resource")]
    pub resources: Vec<String>,
}

/// Identifier of generated group `g` in rendered documents.
pub fn generated_group_id(g: usize) -> String {
    format!("access-group-{:03}", g + 1)
}

/// One `Allow` statement per generated group with at least one member.
/// The statement is meant to be AND-composed with the existing policy, so the
/// permission a user ends up with is exactly `UD~`.
pub fn render_policy(inst: &AccessInstance, pol: &GeneratedPolicy, actions: &[String]) -> PolicyDocument {
    let statements = (0..pol.num_groups())
        .filter(|&g| !pol.members(g).is_empty())
        .map(|g| Statement {
            effect: "Allow".to_string(),
            actions: actions.to_vec(),
            principal: generated_group_id(g),
            resources: pol.dad.row(g).iter().map(|d| inst.datastores()[d].clone()).collect(),
        })
        .collect();
    PolicyDocument { statements }
}

/// Sidecar mapping of generated group id to member user ids.
pub fn render_memberships(inst: &AccessInstance, pol: &GeneratedPolicy) -> BTreeMap<String, Vec<String>> {
    (0..pol.num_groups())
        .filter_map(|g| {
            let members = pol.members(g);
            (!members.is_empty()).then(|| {
                (
                    generated_group_id(g),
                    members.iter().map(|u| inst.users()[u].clone()).collect(),
                )
            })
        })
        .collect()
}

/// Rebuilds the decision matrices from a rendered document and its
/// membership sidecar. Groups are numbered in statement order.
pub fn policy_from_document(
    inst: &AccessInstance,
    doc: &PolicyDocument,
    memberships: &BTreeMap<String, Vec<String>>,
) -> Result<GeneratedPolicy> {
    let n_groups = doc.statements.len();
    let mut pol = GeneratedPolicy::empty(inst.n_users(), n_groups, inst.n_datastores());
    for (g, st) in doc.statements.iter().enumerate() {
        if st.effect != "Allow" {
            return Err(Error::Schema(format!(
                "statement for `{}` has unsupported effect `{}`",
                st.principal, st.effect
            )));
        }
        for d in &st.resources {
            let di = inst
                .datastore_index(d)
                .ok_or_else(|| Error::Schema(format!("unknown datastore `{d}` in policy")))?;
            pol.dad.set(g, di, true);
        }
        let members = memberships.get(&st.principal).ok_or_else(|| {
            Error::Schema(format!("no memberships listed for `{}`", st.principal))
        })?;
        for u in members {
            let ui = inst.user_index(u).ok_or_else(|| Error::UnknownUser(u.clone()))?;
            pol.ug.set(ui, g, true);
        }
    }
    Ok(pol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> InstanceFile {
        InstanceFile {
            users: vec!["u2".into(), "u1".into()],
            datastores: vec![
                DatastoreEntry { id: "d2".into(), data_types: vec![] },
                DatastoreEntry { id: "d1".into(), data_types: vec![] },
            ],
            groups: vec![],
            direct_permissions: vec![
                ("u1".into(), "d1".into()),
                ("u1".into(), "d2".into()),
                ("u2".into(), "d2".into()),
            ],
            accesses: vec![("u1".into(), "d1".into(), 4)],
        }
    }

    #[test]
    fn load_counts_and_ordering() {
        let inst = AccessInstance::from_file(two_by_two()).unwrap();
        assert_eq!(inst.users(), ["u1", "u2"]);
        assert_eq!(inst.datastores(), ["d1", "d2"]);
        assert_eq!(inst.ud().count_ones(), 1);
        assert_eq!(inst.ud_hat().count_ones(), 3);
        assert_eq!(inst.access_count(0, 0), 4);
    }

    #[test]
    fn access_without_permission_is_reported() {
        let mut f = two_by_two();
        f.datastores.push(DatastoreEntry { id: "d3".into(), data_types: vec![] });
        f.accesses.push(("u1".into(), "d3".into(), 1));
        match AccessInstance::from_file(f) {
            Err(Error::AccessNotPermitted(pairs)) => {
                assert_eq!(pairs, vec![("u1".to_string(), "d3".to_string())]);
            }
            other => panic!("expected AccessNotPermitted, got {other:?}"),
        }
    }

    #[test]
    fn schema_violations() {
        let mut dup = two_by_two();
        dup.users.push("u1".into());
        assert!(matches!(AccessInstance::from_file(dup), Err(Error::Schema(_))));

        let mut unknown = two_by_two();
        unknown.direct_permissions.push(("ghost".into(), "d1".into()));
        assert!(matches!(AccessInstance::from_file(unknown), Err(Error::Schema(_))));

        assert!(matches!(
            AccessInstance::from_json(r#"{"users": [], "datastores": [], "extra": 1}"#),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn ud_hat_includes_group_reachability() {
        let mut f = two_by_two();
        f.groups.push(GroupEntry {
            id: "g".into(),
            members: vec!["u2".into()],
            datastores: vec!["d1".into()],
        });
        let inst = AccessInstance::from_file(f).unwrap();
        assert!(inst.ud_hat().get(1, 0));
        assert_eq!(inst.recompute_ud_hat(), *inst.ud_hat());
        assert_eq!(inst.raw_permission_edge_count(), 3 + 1 + 1);
    }

    #[test]
    fn effective_access_examples() {
        let inst = AccessInstance::from_file(two_by_two()).unwrap();
        let mut pol = GeneratedPolicy::empty(2, 1, 2);
        pol.dad.set(0, 0, true);
        pol.dad.set(0, 1, true);
        assert_eq!(effective_access(&inst, &pol).unwrap().count_ones(), 0);

        pol.ug.set(0, 0, true);
        pol.ug.set(1, 0, true);
        assert_eq!(effective_access(&inst, &pol).unwrap(), *inst.ud_hat());

        let bad = GeneratedPolicy::empty(3, 1, 2);
        assert!(matches!(effective_access(&inst, &bad), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn effective_access_hand_example() {
        // u1 in group 1 only, DAD(g1) = [1,1,0], UDhat(u1) = [1,0,1].
        let f = InstanceFile {
            users: vec!["u1".into()],
            datastores: ["d1", "d2", "d3"]
                .iter()
                .map(|d| DatastoreEntry { id: d.to_string(), data_types: vec![] })
                .collect(),
            direct_permissions: vec![("u1".into(), "d1".into()), ("u1".into(), "d3".into())],
            ..Default::default()
        };
        let inst = AccessInstance::from_file(f).unwrap();
        let pol = GeneratedPolicy {
            ug: BitMatrix::from_01(&[&[1, 0]]),
            dad: BitMatrix::from_01(&[&[1, 1, 0], &[0, 0, 1]]),
        };
        let eff = effective_access(&inst, &pol).unwrap();
        assert_eq!(eff, BitMatrix::from_01(&[&[1, 0, 0]]));
    }

    #[test]
    fn dormant_counts() {
        let inst = AccessInstance::from_file(two_by_two()).unwrap();
        assert_eq!(inst.baseline_dormant(), 2);
        let mut pol = GeneratedPolicy::empty(2, 1, 2);
        pol.ug.set(0, 0, true);
        pol.dad.set(0, 0, true);
        let r = dormant_count(&inst, &pol).unwrap();
        assert_eq!(r.remaining, 0);
        pol.dad.set(0, 1, true);
        let r = dormant_count(&inst, &pol).unwrap();
        assert_eq!(r.remaining, 1);
        assert_eq!(r.per_user, vec![1, 0]);
        assert!((r.remaining_percent() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn render_drops_empty_groups_and_roundtrips() {
        let inst = AccessInstance::from_file(two_by_two()).unwrap();
        let pol = GeneratedPolicy {
            ug: BitMatrix::from_01(&[&[1, 0, 0], &[0, 0, 1]]),
            dad: BitMatrix::from_01(&[&[1, 0], &[1, 1], &[0, 1]]),
        };
        let actions = vec![DEFAULT_ACTION.to_string()];
        let doc = render_policy(&inst, &pol, &actions);
        assert_eq!(doc.statements.len(), 2);
        assert_eq!(doc.statements[0].resources, vec!["d1"]);
        assert_eq!(doc.statements[0].effect, "Allow");
        assert_eq!(doc.statements[1].resources, vec!["d2"]);
        let json = serde_json::to_value(&doc).unwrap();
        assert!(json["Statement"][0]["Effect"].is_string());
        assert!(json["Statement"][0]["Resource"].is_array());

        let members = render_memberships(&inst, &pol);
        let back = policy_from_document(&inst, &doc, &members).unwrap();
        assert_eq!(
            effective_access(&inst, &back).unwrap(),
            effective_access(&inst, &pol).unwrap()
        );
    }
}
