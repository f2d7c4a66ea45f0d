//! Constrained maximisation of the dormant-permission reduction over
//! generated-group membership (UG) and grants (DAD).
//!
//! [`solve`] is an anytime local-search solver; [`brute_force_solve`] is an
//! exhaustive oracle for tiny instances. Both share the objective and the
//! feasibility rules defined here.

mod brute;
mod problem;
mod search;
mod seed;
mod state;
mod sweep;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::bits::BitMatrix;
use crate::error::{Error, Result};
use crate::model::{dormant_from_effective, effective_access, AccessInstance, GeneratedPolicy};

pub use brute::{brute_force_solve, BRUTE_FORCE_BIT_LIMIT};
pub use search::solve;
pub use sweep::{default_group_grid, sweep_groups, SweepPoint};

/// Soft per-user dormancy penalty parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    /// Tolerated fraction of dormant permissions per user.
    pub epsilon: f64,
    /// Multiplier applied to positive violations; must be at least 1.
    pub gamma: f64,
    /// Clamp the per-user penalty at zero instead of letting negative slack
    /// act as a bonus.
    #[serde(default)]
    pub clamp_penalty_at_zero: bool,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.15,
            gamma: 2.0,
            clamp_penalty_at_zero: false,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.gamma >= 1.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidConfig(format!("gamma must be >= 1, got {}", self.gamma)));
        }
        Ok(())
    }

    /// Slack `v = effective - (1 + eps) * historical` and penalty
    /// `psi = max(v, gamma * v)` for one user.
    #[inline]
    pub fn slack_and_penalty(&self, effective: usize, historical: usize) -> (f64, f64) {
        let v = effective as f64 - (1.0 + self.epsilon) * historical as f64;
        let mut psi = v.max(self.gamma * v);
        if self.clamp_penalty_at_zero {
            psi = psi.max(0.0);
        }
        (v, psi)
    }

    /// What one user subtracts from the objective: its effective permission
    /// count plus its penalty.
    #[inline]
    pub(crate) fn user_cost(&self, effective: usize, historical: usize) -> f64 {
        effective as f64 + self.slack_and_penalty(effective, historical).1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    /// `(sum UDhat - sum UD~) - sum psi`
    pub total: f64,
    pub per_user_penalty: Vec<f64>,
    pub per_user_slack: Vec<f64>,
}

pub fn objective(inst: &AccessInstance, pol: &GeneratedPolicy, cfg: &PenaltyConfig) -> Result<ObjectiveValue> {
    let eff = effective_access(inst, pol)?;
    Ok(objective_from_effective(inst, &eff, cfg))
}

pub(crate) fn objective_from_effective(inst: &AccessInstance, eff: &BitMatrix, cfg: &PenaltyConfig) -> ObjectiveValue {
    let mut per_user_penalty = Vec::with_capacity(inst.n_users());
    let mut per_user_slack = Vec::with_capacity(inst.n_users());
    for u in 0..inst.n_users() {
        let (v, psi) = cfg.slack_and_penalty(eff.row(u).count(), inst.ud().row(u).count());
        per_user_slack.push(v);
        per_user_penalty.push(psi);
    }
    let removed = inst.ud_hat().count_ones() as f64 - eff.count_ones() as f64;
    let total = removed - per_user_penalty.iter().sum::<f64>();
    ObjectiveValue {
        total,
        per_user_penalty,
        per_user_slack,
    }
}

/// A hard-constraint violation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// A historically accessed datastore is no longer reachable.
    AccessLost { user: usize, datastore: usize },
    /// The user would gain a data type it never worked with.
    NewDataType { user: usize, data_type: usize },
    /// Two excluded users share a generated group.
    ExclusionBreached { user_a: usize, user_b: usize, group: usize },
}

impl Violation {
    pub fn describe(&self, inst: &AccessInstance) -> String {
        match *self {
            Violation::AccessLost { user, datastore } => format!(
                "user `{}` loses access to `{}`",
                inst.users()[user],
                inst.datastores()[datastore]
            ),
            Violation::NewDataType { user, data_type } => format!(
                "user `{}` gains data type `{}`",
                inst.users()[user],
                inst.data_types()[data_type]
            ),
            Violation::ExclusionBreached { user_a, user_b, group } => format!(
                "users `{}` and `{}` share generated group {}",
                inst.users()[user_a],
                inst.users()[user_b],
                group
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks access preservation, the data-type rule and pair exclusions,
/// reporting every violated constraint.
pub fn check_feasible(
    inst: &AccessInstance,
    pol: &GeneratedPolicy,
    exclusions: &[(usize, usize)],
) -> Result<FeasibilityReport> {
    let eff = effective_access(inst, pol)?;
    let mut violations = Vec::new();

    for (u, d) in inst.ud().ones() {
        if !eff.get(u, d) {
            violations.push(Violation::AccessLost { user: u, datastore: d });
        }
    }

    // OR_d(UD~(u,d) AND DT(d,t)) <= OR_d(UD(u,d) AND DT(d,t))
    let dt = inst.dt();
    for u in 0..inst.n_users() {
        for t in 0..inst.data_types().len() {
            let historical = inst.ud().row(u).iter().any(|d| dt.get(d, t));
            let granted = eff.row(u).iter().any(|d| dt.get(d, t));
            if granted && !historical {
                violations.push(Violation::NewDataType { user: u, data_type: t });
            }
        }
    }

    for &(a, b) in exclusions {
        if a >= inst.n_users() || b >= inst.n_users() {
            return Err(Error::DimensionMismatch(format!("exclusion ({a}, {b}) out of range")));
        }
        for g in 0..pol.num_groups() {
            if pol.ug.get(a, g) && pol.ug.get(b, g) {
                violations.push(Violation::ExclusionBreached { user_a: a, user_b: b, group: g });
            }
        }
    }

    Ok(FeasibilityReport { violations })
}

/// Search configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveConfig {
    pub num_groups: usize,
    #[serde(with = "duration_secs")]
    pub time_limit: Duration,
    pub seed: u64,
    /// Number of independent local-search starts. When it covers every
    /// membership matrix of a small instance, starts enumerate that space.
    pub restarts: usize,
    /// Accumulated pair exclusions `UG(a,g) + UG(b,g) <= 1` for all `g`.
    #[serde(default)]
    pub pair_exclusions: Vec<(usize, usize)>,
    /// 1 runs restarts sequentially (bit-reproducible); more uses a pool.
    #[serde(default = "one")]
    pub threads: usize,
    /// Membership matrix to start the first restart from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<BitMatrix>,
    /// Per-user cluster labels used as an alternative seeding.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_clusters: Option<Vec<usize>>,
}

fn one() -> usize {
    1
}

impl SolveConfig {
    pub fn new(num_groups: usize) -> Self {
        Self {
            num_groups,
            time_limit: Duration::from_secs(900),
            seed: 0,
            restarts: 16,
            pair_exclusions: Vec::new(),
            threads: 1,
            warm_start: None,
            seed_clusters: None,
        }
    }

    pub fn validate(&self, inst: &AccessInstance) -> Result<()> {
        if self.num_groups == 0 {
            return Err(Error::InvalidConfig("number of generated groups must be positive".into()));
        }
        if self.time_limit.is_zero() {
            return Err(Error::InvalidConfig("time limit must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("restarts must be positive".into()));
        }
        if self.threads == 0 {
            return Err(Error::InvalidConfig("threads must be positive".into()));
        }
        for &(a, b) in &self.pair_exclusions {
            if a >= inst.n_users() || b >= inst.n_users() || a == b {
                return Err(Error::InvalidConfig(format!("invalid pair exclusion ({a}, {b})")));
            }
        }
        if let Some(ws) = &self.warm_start {
            if ws.n_rows() != inst.n_users() {
                return Err(Error::InvalidConfig(format!(
                    "warm start has {} rows, instance has {} users",
                    ws.n_rows(),
                    inst.n_users()
                )));
            }
        }
        if let Some(c) = &self.seed_clusters {
            if c.len() != inst.n_users() {
                return Err(Error::InvalidConfig("seed clusters must label every user".into()));
            }
        }
        Ok(())
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Feasible,
    /// Proven infeasible.
    Infeasible,
    /// The budget ran out without a feasible policy and without a proof of
    /// infeasibility.
    NoSolutionFound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub policy: GeneratedPolicy,
    pub objective: f64,
    pub dormant_remaining: i64,
    pub per_user_dormant: Vec<i64>,
    pub per_user_penalty: Vec<f64>,
    /// `v_u` per user, kept for diagnostics.
    pub per_user_slack: Vec<f64>,
    pub baseline_dormant: usize,
}

impl Solution {
    pub(crate) fn evaluate(inst: &AccessInstance, policy: GeneratedPolicy, cfg: &PenaltyConfig) -> Result<Self> {
        let eff = effective_access(inst, &policy)?;
        let obj = objective_from_effective(inst, &eff, cfg);
        let dormant = dormant_from_effective(inst, &eff);
        Ok(Self {
            policy,
            objective: obj.total,
            dormant_remaining: dormant.remaining,
            per_user_dormant: dormant.per_user,
            per_user_penalty: obj.per_user_penalty,
            per_user_slack: obj.per_user_slack,
            baseline_dormant: dormant.baseline,
        })
    }

    pub fn remaining_percent(&self) -> f64 {
        if self.baseline_dormant == 0 {
            0.0
        } else {
            100.0 * self.dormant_remaining as f64 / self.baseline_dormant as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncumbentEvent {
    pub elapsed_secs: f64,
    pub restart: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub solution: Option<Solution>,
    pub wall_time_secs: f64,
    /// Accepted local-search moves summed over restarts.
    pub iterations: usize,
    pub restarts_completed: usize,
    pub timed_out: bool,
    /// The incumbent is known to be optimal (lower bound reached or the
    /// membership space was enumerated with exact grant decoding).
    pub proven_optimal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub infeasibility_reason: Option<String>,
    pub incumbent_trace: Vec<IncumbentEvent>,
}

impl SolveResult {
    pub fn is_feasible(&self) -> bool {
        self.status == SolveStatus::Feasible
    }

    pub fn objective(&self) -> Option<f64> {
        self.solution.as_ref().map(|s| s.objective)
    }

    pub fn policy(&self) -> Option<&GeneratedPolicy> {
        self.solution.as_ref().map(|s| &s.policy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solve result serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DatastoreEntry, InstanceFile};

    fn instance(ud: &[(&str, &str)], perms: &[(&str, &str)], stores: &[(&str, &[&str])]) -> AccessInstance {
        let mut users: Vec<String> = perms.iter().map(|(u, _)| u.to_string()).collect();
        users.sort();
        users.dedup();
        AccessInstance::from_file(InstanceFile {
            users,
            datastores: stores
                .iter()
                .map(|(id, types)| DatastoreEntry {
                    id: id.to_string(),
                    data_types: types.iter().map(|t| t.to_string()).collect(),
                })
                .collect(),
            groups: vec![],
            direct_permissions: perms.iter().map(|(u, d)| (u.to_string(), d.to_string())).collect(),
            accesses: ud.iter().map(|(u, d)| (u.to_string(), d.to_string(), 1)).collect(),
        })
        .unwrap()
    }

    #[test]
    fn penalty_arithmetic() {
        let cfg = PenaltyConfig { epsilon: 0.15, gamma: 2.0, clamp_penalty_at_zero: false };
        let (v, psi) = cfg.slack_and_penalty(3, 2);
        assert!((v - 0.7).abs() < 1e-12);
        assert!((psi - 1.4).abs() < 1e-12);
        let (v, psi) = cfg.slack_and_penalty(2, 2);
        assert!((v + 0.3).abs() < 1e-12);
        assert!((psi + 0.3).abs() < 1e-12);
        let clamped = PenaltyConfig { clamp_penalty_at_zero: true, ..cfg };
        assert_eq!(clamped.slack_and_penalty(2, 2).1, 0.0);
    }

    #[test]
    fn penalty_config_validation() {
        assert!(PenaltyConfig { epsilon: -0.1, ..Default::default() }.validate().is_err());
        assert!(PenaltyConfig { gamma: 0.5, ..Default::default() }.validate().is_err());
        assert!(PenaltyConfig { epsilon: f64::NAN, ..Default::default() }.validate().is_err());
        assert!(PenaltyConfig::default().validate().is_ok());
    }

    #[test]
    fn objective_zero_slack_case() {
        let inst = instance(&[("a", "d1")], &[("a", "d1"), ("a", "d2")], &[("d1", &[]), ("d2", &[])]);
        let pol = GeneratedPolicy {
            ug: BitMatrix::from_01(&[&[1]]),
            dad: BitMatrix::from_01(&[&[1, 0]]),
        };
        let cfg = PenaltyConfig { epsilon: 0.0, gamma: 1.0, clamp_penalty_at_zero: false };
        let obj = objective(&inst, &pol, &cfg).unwrap();
        assert_eq!(obj.per_user_penalty, vec![0.0]);
        assert_eq!(obj.total, 1.0);
    }

    #[test]
    fn data_type_violation_is_named() {
        // b never touched pii but is grouped with a, whose pii store b may reach.
        let inst = instance(
            &[("a", "d1"), ("b", "d2")],
            &[("a", "d1"), ("b", "d1"), ("b", "d2")],
            &[("d1", &["pii"]), ("d2", &["logs"])],
        );
        let pol = GeneratedPolicy {
            ug: BitMatrix::from_01(&[&[1], &[1]]),
            dad: BitMatrix::from_01(&[&[1, 1]]),
        };
        let report = check_feasible(&inst, &pol, &[]).unwrap();
        let pii = inst.data_types().iter().position(|t| t == "pii").unwrap();
        assert_eq!(report.violations, vec![Violation::NewDataType { user: 1, data_type: pii }]);
    }

    #[test]
    fn exclusion_and_access_loss_reported() {
        let inst = instance(&[("a", "d1"), ("b", "d1")], &[("a", "d1"), ("b", "d1")], &[("d1", &[])]);
        let pol = GeneratedPolicy {
            ug: BitMatrix::from_01(&[&[1], &[1]]),
            dad: BitMatrix::from_01(&[&[1]]),
        };
        let report = check_feasible(&inst, &pol, &[(0, 1)]).unwrap();
        assert_eq!(report.violations, vec![Violation::ExclusionBreached { user_a: 0, user_b: 1, group: 0 }]);

        let none = GeneratedPolicy {
            ug: BitMatrix::from_01(&[&[1], &[1]]),
            dad: BitMatrix::from_01(&[&[0]]),
        };
        let report = check_feasible(&inst, &none, &[]).unwrap();
        assert_eq!(report.violations.len(), 2);
        assert!(check_feasible(&inst, &none, &[(0, 7)]).is_err());
    }

    #[test]
    fn union_of_member_rows_preserves_access() {
        let inst = instance(
            &[("a", "d1"), ("b", "d2")],
            &[("a", "d1"), ("a", "d2"), ("b", "d2")],
            &[("d1", &[]), ("d2", &[])],
        );
        let pol = GeneratedPolicy {
            ug: BitMatrix::from_01(&[&[1], &[1]]),
            dad: BitMatrix::from_01(&[&[1, 1]]),
        };
        assert!(check_feasible(&inst, &pol, &[]).unwrap().is_feasible());
    }

    #[test]
    fn solve_config_validation() {
        let inst = instance(&[("a", "d1")], &[("a", "d1")], &[("d1", &[])]);
        assert!(SolveConfig::new(0).validate(&inst).is_err());
        let mut cfg = SolveConfig::new(1);
        cfg.time_limit = Duration::ZERO;
        assert!(cfg.validate(&inst).is_err());
        let mut cfg = SolveConfig::new(1);
        cfg.pair_exclusions.push((0, 0));
        assert!(cfg.validate(&inst).is_err());
        assert!(SolveConfig::new(1).validate(&inst).is_ok());
    }
}
