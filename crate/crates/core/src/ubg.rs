//! User behavioural graph: users, existing groups and datastores joined by
//! operation edges from an event log and structural permission and
//! membership edges from the instance.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AccessInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    DataFlow,
    ConfigUpdate,
    Permission,
    Membership,
}

impl Relation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Relation::DataFlow => "data_flow",
            Relation::ConfigUpdate => "config_update",
            Relation::Permission => "permission",
            Relation::Membership => "membership",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Operation classes accepted in event logs.
impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "data_flow" | "read" | "write" => Ok(Relation::DataFlow),
            "config_update" | "config" => Ok(Relation::ConfigUpdate),
            "permission" => Ok(Relation::Permission),
            "membership" => Ok(Relation::Membership),
            other => Err(Error::Schema(format!("unknown operation class `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub actor: String,
    pub target: String,
    pub op_class: String,
    pub count: u64,
}

/// Reads `actor,target,op_class,count` rows.
pub fn read_events(reader: impl Read) -> Result<Vec<Event>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// One read event per recorded access.
pub fn events_from_accesses(inst: &AccessInstance) -> Vec<Event> {
    inst.access_counts()
        .iter()
        .map(|(&(u, d), &count)| Event {
            actor: inst.users()[u].clone(),
            target: inst.datastores()[d].clone(),
            op_class: "read".into(),
            count,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UbgNodeKind {
    User,
    Role,
    Group,
    Datastore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UbgNode {
    pub id: String,
    pub kind: UbgNodeKind,
    /// `[degree, risk, one-hot data types...]`
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UbgEdge {
    pub a: String,
    pub b: String,
    pub rel: Relation,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehavioralGraph {
    pub nodes: Vec<UbgNode>,
    pub edges: Vec<UbgEdge>,
}

impl BehavioralGraph {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("graph serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("behavioural graph", e))
    }

    /// Connected component label per node (labels follow node order).
    pub fn components(&self) -> Vec<usize> {
        let index: HashMap<&str, usize> = self.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        let mut parent: Vec<usize> = (0..self.nodes.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for e in &self.edges {
            let (a, b) = (find(&mut parent, index[e.a.as_str()]), find(&mut parent, index[e.b.as_str()]));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut labels = BTreeMap::new();
        (0..self.nodes.len())
            .map(|i| {
                let root = find(&mut parent, i);
                let next = labels.len();
                *labels.entry(root).or_insert(next)
            })
            .collect()
    }

    pub fn component_count(&self) -> usize {
        self.components().into_iter().max().map_or(0, |m| m + 1)
    }
}

/// Builds the graph. Event edges are aggregated per (actor, target,
/// relation) and normalised so each actor's outgoing weights of one
/// relation sum to 1; structural edges have weight 1.
pub fn build_ubg(inst: &AccessInstance, events: &[Event], risk: &BTreeMap<String, f64>) -> Result<BehavioralGraph> {
    let mut kinds: BTreeMap<&str, UbgNodeKind> = BTreeMap::new();
    let mut order: Vec<(String, UbgNodeKind)> = Vec::new();
    for u in inst.users() {
        order.push((u.clone(), UbgNodeKind::User));
    }
    for g in inst.existing_groups() {
        order.push((g.clone(), UbgNodeKind::Group));
    }
    for d in inst.datastores() {
        order.push((d.clone(), UbgNodeKind::Datastore));
    }
    for (id, kind) in &order {
        if kinds.insert(id.as_str(), *kind).is_some() {
            return Err(Error::Schema(format!("node id `{id}` is used by more than one entity")));
        }
    }
    for id in risk.keys() {
        if !kinds.contains_key(id.as_str()) {
            return Err(Error::UnknownNode(id.clone()));
        }
    }

    let mut counts: BTreeMap<(String, String, Relation), u64> = BTreeMap::new();
    for e in events {
        for id in [&e.actor, &e.target] {
            if !kinds.contains_key(id.as_str()) {
                return Err(Error::UnknownNode(id.clone()));
            }
        }
        let rel: Relation = e.op_class.parse()?;
        if e.count == 0 {
            continue;
        }
        *counts.entry((e.actor.clone(), e.target.clone(), rel)).or_default() += e.count;
    }
    let mut totals: BTreeMap<(&str, Relation), u64> = BTreeMap::new();
    for ((a, _, rel), c) in &counts {
        *totals.entry((a.as_str(), *rel)).or_default() += c;
    }
    let mut edges: Vec<UbgEdge> = counts
        .iter()
        .map(|((a, b, rel), &c)| UbgEdge {
            a: a.clone(),
            b: b.clone(),
            rel: *rel,
            w: c as f64 / totals[&(a.as_str(), *rel)] as f64,
        })
        .collect();

    let structural = |a: &str, b: &str, rel| UbgEdge { a: a.to_string(), b: b.to_string(), rel, w: 1.0 };
    for (u, d) in inst.direct_permissions().ones() {
        edges.push(structural(&inst.users()[u], &inst.datastores()[d], Relation::Permission));
    }
    for (g, d) in inst.gd().ones() {
        edges.push(structural(&inst.existing_groups()[g], &inst.datastores()[d], Relation::Permission));
    }
    for (u, g) in inst.group_members().ones() {
        edges.push(structural(&inst.users()[u], &inst.existing_groups()[g], Relation::Membership));
    }

    let mut degree: HashMap<&str, usize> = HashMap::new();
    for e in &edges {
        *degree.entry(e.a.as_str()).or_default() += 1;
        *degree.entry(e.b.as_str()).or_default() += 1;
    }
    let n_types = inst.data_types().len();
    let nodes = order
        .iter()
        .map(|(id, kind)| {
            let mut features = vec![
                degree.get(id.as_str()).copied().unwrap_or(0) as f64,
                risk.get(id).copied().unwrap_or(0.0),
            ];
            let mut types = vec![0.0; n_types];
            if *kind == UbgNodeKind::Datastore {
                let d = inst.datastore_index(id).expect("declared datastore");
                for t in inst.dt().row(d).iter() {
                    types[t] = 1.0;
                }
            }
            features.extend(types);
            UbgNode { id: id.clone(), kind: *kind, features }
        })
        .collect();
    Ok(BehavioralGraph { nodes, edges })
}
