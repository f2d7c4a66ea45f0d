use std::collections::BTreeMap;
use std::path::Path;

use iamax_core::attack::{evaluate_hardening, AttackConfig, AttackMode, HardeningRow};
use iamax_core::embedding::{compute_alpha, kmeans, select_k, EmbeddingTable};
use iamax_core::homogeneity::{generate, GenerationConfig, GenerationRecord, SimilarityModel};
use iamax_core::model::{policy_from_document, render_memberships, render_policy, AccessInstance, PolicyDocument};
use iamax_core::optimizer::{default_group_grid, solve, sweep_groups, PenaltyConfig, SolveConfig, SolveStatus, SweepPoint};
use iamax_core::synth::{
    generate_batch, manifest_csv, planted, random_embeddings, shaped_base, EdgeWeight, PlantedConfig, UpsampleConfig,
    REFERENCE_SHAPES,
};
use iamax_core::ubg::{build_ubg, events_from_accesses, read_events};
use iamax_core::Error;

use crate::report::{self, ClusterReport, GenerationReport};
use crate::run::{CliError, CliResult, Run};
use crate::{Alpha, AttackArgs, ClusterArgs, ModeArg, OptimizeArgs, SolveArgs, SweepArgs, SynthArgs, SynthKind, UbgArgs, WeightArg};

impl SolveArgs {
    fn penalty(&self) -> CliResult<PenaltyConfig> {
        let p = PenaltyConfig { epsilon: self.epsilon, gamma: self.gamma, clamp_penalty_at_zero: self.clamp_penalty };
        p.validate()?;
        Ok(p)
    }

    fn config(&self, groups: usize, threads: usize) -> SolveConfig {
        let mut c = SolveConfig::new(groups);
        c.time_limit = self.time_limit;
        c.seed = self.seed;
        c.restarts = self.restarts as usize;
        c.threads = threads;
        c
    }
}

fn load_instance(run: &mut Run, path: &Path) -> CliResult<AccessInstance> {
    Ok(AccessInstance::from_json(&run.read_input(path)?)?)
}

fn load_embeddings(run: &mut Run, path: &Path) -> CliResult<EmbeddingTable> {
    let table = EmbeddingTable::from_json(&run.read_input(path)?)?;
    table.validate()?;
    Ok(table)
}

fn print_summary(value: serde_json::Value) {
    println!("{value}");
}

pub fn optimize(run: &mut Run, a: &OptimizeArgs, threads: usize) -> CliResult<()> {
    let inst = load_instance(run, &a.solve.instance)?;
    let pcfg = a.solve.penalty()?;
    let mut scfg = a.solve.config(a.groups as usize, threads);
    scfg.validate(&inst)?;

    let (result, generation) = match &a.embeddings {
        Some(path) => {
            let table = load_embeddings(run, path)?;
            let sel = select_k(&table, a.k_min, a.k_max, a.solve.seed)?;
            let alpha = match a.alpha.unwrap_or(Alpha::Auto) {
                Alpha::Auto => compute_alpha(&table, &sel.clustering)?,
                Alpha::Value(v) => v,
            };
            log::info!("k = {}, alpha = {alpha}", sel.k_opt);
            let sm = SimilarityModel::from_table(&inst, &table, alpha, &sel.clustering.cluster_of())?;
            scfg.seed_clusters = Some(sm.cluster_of.clone());
            let gcfg = GenerationConfig { batch_size: a.batch_size as usize, max_iterations: a.max_iterations as usize };
            let out = generate(&inst, &scfg, &pcfg, &sm, &gcfg)?;
            let rep = GenerationReport {
                alpha: Some(alpha),
                k: Some(sel.k_opt),
                cuts: out.cuts,
                remaining_violations: out.remaining_violations.len(),
                trace: out.trace,
            };
            (out.result, rep)
        }
        None => {
            let res = solve(&inst, &scfg, &pcfg)?;
            let record = GenerationRecord {
                iteration: 1,
                cuts_added: 0,
                satisfied_fraction: 1.0,
                objective: res.objective(),
                feasible: res.is_feasible(),
                entropy: None,
                violations: 0,
            };
            let rep = GenerationReport { alpha: None, k: None, cuts: vec![], remaining_violations: 0, trace: vec![record] };
            (res, rep)
        }
    };

    run.write_json(report::SOLVE_RESULT, &result)?;
    run.write("incumbent.svg", &report::incumbent_svg(&result))?;
    let Some(sol) = &result.solution else {
        let reason = result.infeasibility_reason.clone().unwrap_or_default();
        return Err(match result.status {
            SolveStatus::Infeasible => Error::Infeasible(reason),
            _ => Error::NoSolution(format!("time limit reached after {} restarts", result.restarts_completed)),
        }
        .into());
    };
    run.write_json("policy.json", &render_policy(&inst, &sol.policy, &a.actions))?;
    run.write_json("memberships.json", &render_memberships(&inst, &sol.policy))?;
    run.write_json(report::GENERATION, &generation)?;
    let (csv, svg) = report::generation_outputs(&generation)?;
    run.write("generation_trace.csv", &csv)?;
    run.write("generation_trace.svg", &svg)?;
    print_summary(serde_json::json!({
        "status": result.status,
        "objective": sol.objective,
        "dormant_remaining": sol.dormant_remaining,
        "baseline_dormant": sol.baseline_dormant,
        "remaining_percent": sol.remaining_percent(),
        "proven_optimal": result.proven_optimal,
        "alpha": generation.alpha,
        "iterations": generation.trace.len(),
        "out_dir": run.out_dir,
    }));
    Ok(())
}

pub fn sweep(run: &mut Run, a: &SweepArgs, threads: usize) -> CliResult<()> {
    let inst = load_instance(run, &a.solve.instance)?;
    let pcfg = a.solve.penalty()?;
    let grid = a.grid.clone().unwrap_or_else(default_group_grid);
    if grid.is_empty() || grid.contains(&0) {
        return Err(CliError::Usage("group grid must be non-empty and positive".into()));
    }
    let base = a.solve.config(grid[0], threads);
    base.validate(&inst)?;
    let points = sweep_groups(&inst, &grid, &base, &pcfg)?;
    write_sweep(run, &points)?;
    print_summary(serde_json::json!({
        "points": points.len(),
        "feasible": points.iter().filter(|p| p.status == SolveStatus::Feasible).count(),
        "out_dir": run.out_dir,
    }));
    Ok(())
}

fn write_sweep(run: &mut Run, points: &[SweepPoint]) -> CliResult<()> {
    run.write_json(report::SWEEP, &points)?;
    let (csv, svg) = report::sweep_outputs(points)?;
    run.write("sweep.csv", &csv)?;
    run.write("sweep.svg", &svg)?;
    Ok(())
}

pub fn attack(run: &mut Run, a: &AttackArgs) -> CliResult<()> {
    let inst = load_instance(run, &a.instance)?;
    let doc: PolicyDocument = serde_json::from_str(&run.read_input(&a.policy)?)
        .map_err(|e| Error::Schema(format!("policy document: {e}")))?;
    let mpath = a.memberships.clone().unwrap_or_else(|| a.policy.with_file_name("memberships.json"));
    let memberships: BTreeMap<String, Vec<String>> = serde_json::from_str(&run.read_input(&mpath)?)
        .map_err(|e| Error::Schema(format!("membership document: {e}")))?;
    let pol = policy_from_document(&inst, &doc, &memberships)?;
    if a.k.is_empty() || a.modes.is_empty() {
        return Err(CliError::Usage("at least one k and one mode are required".into()));
    }
    if !(0.0..1.0).contains(&a.filter_fraction) {
        return Err(CliError::Usage("filter fraction must lie in [0, 1)".into()));
    }
    let modes: Vec<AttackMode> = a
        .modes
        .iter()
        .map(|m| match m {
            ModeArg::Random => AttackMode::Random,
            ModeArg::Worst => AttackMode::Worst,
        })
        .collect();
    let cfg = AttackConfig { samples: a.samples, seed: a.seed, filter_fraction: a.filter_fraction };
    let rows = evaluate_hardening(&inst, &pol, &a.k, &modes, &cfg)?;
    write_attack(run, &rows)?;
    print_summary(serde_json::to_value(&rows).expect("rows serialize"));
    Ok(())
}

fn write_attack(run: &mut Run, rows: &[HardeningRow]) -> CliResult<()> {
    run.write_json(report::ATTACK, &rows)?;
    let (csv, svg) = report::attack_outputs(rows)?;
    run.write("attack.csv", &csv)?;
    run.write("attack.svg", &svg)?;
    Ok(())
}

pub fn synth(run: &mut Run, a: &SynthArgs) -> CliResult<()> {
    match &a.kind {
        SynthKind::Planted { roles, users_per_role, stores_per_role, overlap, dormancy, typed, projects, noise } => {
            let cfg = PlantedConfig {
                num_roles: *roles,
                users_per_role: *users_per_role,
                stores_per_role: *stores_per_role,
                overlap: *overlap,
                dormancy_factor: *dormancy,
                typed: *typed,
                projects: *projects,
                noise_sigma: *noise,
                dim: a.dim,
                seed: a.seed,
            };
            let (inst, emb, truth) = planted(&cfg)?;
            run.write("instance.json", &inst.to_json())?;
            run.write("embeddings.json", &emb.to_json())?;
            run.write_json("truth.json", &truth)?;
            print_summary(serde_json::json!({
                "users": inst.n_users(),
                "datastores": inst.n_datastores(),
                "baseline_dormant": inst.baseline_dormant(),
            }));
        }
        SynthKind::Shaped { index } => {
            let chosen: Vec<usize> = if index.is_empty() { (1..=REFERENCE_SHAPES.len()).collect() } else { index.clone() };
            for &i in &chosen {
                let shape = REFERENCE_SHAPES
                    .get(i.wrapping_sub(1))
                    .ok_or_else(|| CliError::Usage(format!("shape index {i} outside 1..={}", REFERENCE_SHAPES.len())))?;
                let inst = shaped_base(shape, a.seed.wrapping_add(i as u64))?;
                let emb = random_embeddings(&inst, a.dim, a.seed.wrapping_add(i as u64));
                run.write(&format!("shape-{i}.json"), &inst.to_json())?;
                run.write(&format!("shape-{i}.emb.json"), &emb.to_json())?;
            }
            print_summary(serde_json::json!({ "instances": chosen.len() }));
        }
        SynthKind::Batch {
            instance,
            embeddings,
            count,
            min_users,
            max_users,
            min_stores,
            max_stores,
            noise,
            weight,
        } => {
            if !embeddings.is_empty() && embeddings.len() != instance.len() {
                return Err(CliError::Usage("give one embedding file per base instance or none".into()));
            }
            let mut bases = Vec::new();
            for (b, path) in instance.iter().enumerate() {
                let inst = load_instance(run, path)?;
                let emb = match embeddings.get(b) {
                    Some(p) => load_embeddings(run, p)?,
                    None => random_embeddings(&inst, a.dim, a.seed.wrapping_add(b as u64)),
                };
                bases.push((inst, emb));
            }
            let cfg = UpsampleConfig {
                user_range: (*min_users, *max_users),
                store_range: (*min_stores, *max_stores),
                noise_sigma: *noise,
                weight: match weight {
                    WeightArg::Distance => EdgeWeight::Distance,
                    WeightArg::Similarity => EdgeWeight::Similarity,
                },
                seed: a.seed,
            };
            cfg.validate()?;
            let items = generate_batch(&bases, *count, &cfg)?;
            for item in &items {
                run.write(&format!("{}.json", item.name), &item.instance.to_json())?;
                run.write(&format!("{}.emb.json", item.name), &item.embeddings.to_json())?;
            }
            run.write("batch.csv", &manifest_csv(&items, &bases)?)?;
            print_summary(serde_json::json!({ "instances": items.len() }));
        }
    }
    Ok(())
}

pub fn cluster(run: &mut Run, a: &ClusterArgs) -> CliResult<()> {
    let table = load_embeddings(run, &a.embeddings)?;
    let (k_opt, curve, clamped, clustering) = match a.k {
        Some(k) => {
            let c = kmeans(&table, k, a.seed)?;
            (k, vec![(k, c.sse)], false, c)
        }
        None => {
            if a.k_min == 0 || a.k_min > a.k_max {
                return Err(CliError::Usage("need 1 <= k-min <= k-max".into()));
            }
            let sel = select_k(&table, a.k_min, a.k_max, a.seed)?;
            (sel.k_opt, sel.curve, sel.clamped, sel.clustering)
        }
    };
    let alpha = compute_alpha(&table, &clustering)?;
    let rep = ClusterReport { k_opt, alpha, clamped, curve, clustering };
    write_cluster(run, &rep)?;
    print_summary(serde_json::json!({ "k": k_opt, "alpha": alpha, "clamped": clamped }));
    Ok(())
}

fn write_cluster(run: &mut Run, rep: &ClusterReport) -> CliResult<()> {
    run.write_json(report::CLUSTERING, rep)?;
    let (clusters, curve, svg) = report::cluster_outputs(rep)?;
    run.write("clusters.csv", &clusters)?;
    run.write("k_curve.csv", &curve)?;
    run.write("k_curve.svg", &svg)?;
    Ok(())
}

pub fn ubg(run: &mut Run, a: &UbgArgs) -> CliResult<()> {
    let inst = load_instance(run, &a.instance)?;
    let events = match &a.events {
        Some(p) => read_events(run.read_input(p)?.as_bytes())?,
        None => events_from_accesses(&inst),
    };
    let risk: BTreeMap<String, f64> = match &a.risk {
        Some(p) => {
            let text = run.read_input(p)?;
            let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
            r.deserialize().collect::<Result<_, _>>().map_err(Error::from)?
        }
        None => BTreeMap::new(),
    };
    let graph = build_ubg(&inst, &events, &risk)?;
    run.write("ubg.json", &graph.to_json())?;
    print_summary(serde_json::json!({
        "nodes": graph.nodes.len(),
        "edges": graph.edges.len(),
        "components": graph.component_count(),
    }));
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(run: &mut Run, name: &str) -> CliResult<Option<T>> {
    let path = run.out_dir.join(name);
    if !path.exists() {
        return Ok(None);
    }
    let text = run.read_input(&path)?;
    serde_json::from_str(&text).map(Some).map_err(|e| Error::Schema(format!("{name}: {e}")).into())
}

pub fn report(run: &mut Run) -> CliResult<()> {
    let mut found = 0;
    if let Some(res) = read_json(run, report::SOLVE_RESULT)? {
        run.write("incumbent.svg", &report::incumbent_svg(&res))?;
        found += 1;
    }
    if let Some(rep) = read_json::<GenerationReport>(run, report::GENERATION)? {
        let (csv, svg) = report::generation_outputs(&rep)?;
        run.write("generation_trace.csv", &csv)?;
        run.write("generation_trace.svg", &svg)?;
        found += 1;
    }
    if let Some(points) = read_json::<Vec<SweepPoint>>(run, report::SWEEP)? {
        let (csv, svg) = report::sweep_outputs(&points)?;
        run.write("sweep.csv", &csv)?;
        run.write("sweep.svg", &svg)?;
        found += 1;
    }
    if let Some(rows) = read_json::<Vec<HardeningRow>>(run, report::ATTACK)? {
        let (csv, svg) = report::attack_outputs(&rows)?;
        run.write("attack.csv", &csv)?;
        run.write("attack.svg", &svg)?;
        found += 1;
    }
    if let Some(rep) = read_json::<ClusterReport>(run, report::CLUSTERING)? {
        let (clusters, curve, svg) = report::cluster_outputs(&rep)?;
        run.write("clusters.csv", &clusters)?;
        run.write("k_curve.csv", &curve)?;
        run.write("k_curve.svg", &svg)?;
        found += 1;
    }
    if found == 0 {
        return Err(CliError::Usage(format!("no result JSON found in {}", run.out_dir.display())));
    }
    print_summary(serde_json::json!({ "results": found }));
    Ok(())
}
