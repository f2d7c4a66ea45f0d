//! CSV and SVG renderings. Every function here takes only data that is also
//! written as JSON, so `iamax report` can regenerate all charts.

use iamax_core::attack::{hardening_to_csv, AttackMode, HardeningRow};
use iamax_core::embedding::ClusteringResult;
use iamax_core::homogeneity::{trace_to_csv, GenerationRecord};
use iamax_core::optimizer::{SolveResult, SweepPoint};
use serde::{Deserialize, Serialize};

use crate::run::CliResult;
use crate::svg::{bar_chart, line_chart, Series};

pub const SOLVE_RESULT: &str = "solve_result.json";
pub const GENERATION: &str = "generation.json";
pub const SWEEP: &str = "sweep.json";
pub const ATTACK: &str = "attack.json";
pub const CLUSTERING: &str = "clustering.json";

/// Homogeneity loop summary written next to the solve result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationReport {
    pub alpha: Option<f64>,
    pub k: Option<usize>,
    pub cuts: Vec<(usize, usize)>,
    pub remaining_violations: usize,
    pub trace: Vec<GenerationRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k_opt: usize,
    pub alpha: f64,
    pub clamped: bool,
    pub curve: Vec<(usize, f64)>,
    pub clustering: ClusteringResult,
}

pub fn incumbent_svg(res: &SolveResult) -> String {
    let points = res.incumbent_trace.iter().map(|e| (e.elapsed_secs, e.objective)).collect();
    line_chart("Incumbent objective", "seconds", "objective", &[Series { name: "incumbent".into(), points }])
}

pub fn generation_outputs(rep: &GenerationReport) -> CliResult<(String, String)> {
    let series = |name: &str, f: &dyn Fn(&GenerationRecord) -> Option<f64>| Series {
        name: name.into(),
        points: rep.trace.iter().filter_map(|r| f(r).map(|y| (r.iteration as f64, y))).collect(),
    };
    let svg = line_chart(
        "Constraint generation",
        "iteration",
        "value",
        &[
            series("satisfied fraction", &|r| Some(r.satisfied_fraction)),
            series("group entropy", &|r| r.entropy),
        ],
    );
    Ok((trace_to_csv(&rep.trace)?, svg))
}

pub fn sweep_outputs(points: &[SweepPoint]) -> CliResult<(String, String)> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["num_groups", "status", "objective", "dormant_remaining", "remaining_percent", "proven_optimal"])
        .map_err(iamax_core::Error::from)?;
    for p in points {
        let opt = |v: Option<String>| v.unwrap_or_default();
        w.write_record([
            p.num_groups.to_string(),
            serde_json::to_value(p.status).expect("status").as_str().unwrap_or_default().to_string(),
            opt(p.objective.map(|x| x.to_string())),
            opt(p.dormant_remaining.map(|x| x.to_string())),
            opt(p.remaining_percent.map(|x| x.to_string())),
            p.proven_optimal.to_string(),
        ])
        .map_err(iamax_core::Error::from)?;
    }
    let csv = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8");
    let points = points.iter().filter_map(|p| p.remaining_percent.map(|y| (p.num_groups as f64, y))).collect();
    let svg = line_chart(
        "Remaining dormant permissions",
        "generated groups",
        "remaining dormant (%)",
        &[Series { name: "remaining %".into(), points }],
    );
    Ok((csv, svg))
}

pub fn attack_outputs(rows: &[HardeningRow]) -> CliResult<(String, String)> {
    let mut ks: Vec<usize> = rows.iter().map(|r| r.k).collect();
    ks.sort_unstable();
    ks.dedup();
    let series: Vec<(String, Vec<Option<f64>>)> = [AttackMode::Random, AttackMode::Worst]
        .into_iter()
        .filter(|m| rows.iter().any(|r| r.mode == *m))
        .map(|m| {
            let vals = ks
                .iter()
                .map(|&k| rows.iter().find(|r| r.mode == m && r.k == k).and_then(|r| r.ratio))
                .collect();
            (m.to_string(), vals)
        })
        .collect();
    let cats: Vec<String> = ks.iter().map(|k| format!("k={k}")).collect();
    let svg = bar_chart("Attack impact ratio (hardened / baseline)", "compromised users", "ratio", &cats, &series);
    Ok((hardening_to_csv(rows)?, svg))
}

/// `(clusters.csv, k_curve.csv, k_curve.svg)`
pub fn cluster_outputs(rep: &ClusterReport) -> CliResult<(String, String, String)> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "sse"]).map_err(iamax_core::Error::from)?;
    for (k, sse) in &rep.curve {
        w.write_record([k.to_string(), sse.to_string()]).map_err(iamax_core::Error::from)?;
    }
    let curve = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8");
    let knee = rep.curve.iter().filter(|c| c.0 == rep.k_opt).map(|&(k, s)| (k as f64, s)).collect();
    let svg = line_chart(
        "k-means SSE",
        "k",
        "SSE",
        &[
            Series { name: "SSE".into(), points: rep.curve.iter().map(|&(k, s)| (k as f64, s)).collect() },
            Series { name: format!("knee k={}", rep.k_opt), points: knee },
        ],
    );
    Ok((rep.clustering.to_csv()?, curve, svg))
}
