//! One function per subcommand. Each writes into its own stage directory
//! under the run's output root and leaves a manifest there.

use std::collections::HashSet;
use std::io;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use bbsea_core::brain::{
    BrainBackend, CacheStore, CachedBackend, OracleBrain, RemoteBackend, ReplayBackend, TaskSpec,
};
use bbsea_core::collector::{
    decompose, propose, read_pool, run_campaign, run_trial, scripted_success_rate, CampaignConfig,
    CollectError, PoolWriter, Trajectory,
};
use bbsea_core::diversity::{analyze, bundled_task_list, parse_task_list, Lexicon};
use bbsea_core::policy::{bc_train, evaluate, EvalConfig, PolicyModel};
use bbsea_core::scenegraph::{build_scene_graph, serialize_graph_with, NodeFormat};
use bbsea_core::scenes::{self, SceneBundle};
use bbsea_core::util::{derive_seed, percent};
use bbsea_core::verifier::MetricsRow;
use bbsea_core::world::{observe, spawn_scene_with};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{BackendKind, RunConfig};
use crate::manifest::Manifest;
use crate::UsageError;

pub fn node_format(cfg: &RunConfig) -> NodeFormat {
    if cfg.strip_positions {
        NodeFormat::NoBboxNoPosition
    } else if cfg.strip_bbox {
        NodeFormat::NoBbox
    } else {
        NodeFormat::Full
    }
}

/// Every bundle the run knows about, in a stable order.
pub fn load_bundles(cfg: &RunConfig) -> Result<Vec<SceneBundle>> {
    let Some(dir) = &cfg.scenes_dir else {
        return Ok(scenes::all());
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| scenes::load_bundle(p).map_err(Into::into))
        .collect()
}

/// The scenes the propose and collect stages iterate over.
pub fn working_scenes(cfg: &RunConfig, all: &[SceneBundle], only: Option<&str>) -> Result<Vec<SceneBundle>> {
    let find = |id: &str| {
        all.iter()
            .find(|b| b.id() == id)
            .cloned()
            .ok_or_else(|| anyhow!(UsageError(format!("unknown scene {id:?}"))))
    };
    if let Some(id) = only {
        return Ok(vec![find(id)?]);
    }
    match &cfg.scenes {
        Some(ids) => ids.iter().map(|id| find(id)).collect(),
        None if cfg.scenes_dir.is_none() => Ok(scenes::bundled()),
        None => Ok(all.to_vec()),
    }
}

pub fn make_brain(cfg: &RunConfig, bundles: &[SceneBundle]) -> Result<Box<dyn BrainBackend>> {
    Ok(match cfg.backend {
        BackendKind::Oracle => Box::new(OracleBrain::new(bundles.to_vec())),
        BackendKind::Remote => {
            let store = CacheStore::open(cfg.cache_path())?;
            let remote = RemoteBackend::new(cfg.remote.clone())?;
            Box::new(CachedBackend::new(remote, store, &cfg.remote.model))
        }
        BackendKind::CachedRemote => {
            let store = CacheStore::open(cfg.cache_path())?;
            Box::new(ReplayBackend::new(store, &cfg.remote.model))
        }
    })
}

fn stage_dir(cfg: &RunConfig, stage: &str) -> Result<PathBuf> {
    let d = cfg.stage_dir(stage);
    std::fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
    Ok(d)
}

pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

fn yes_no(b: bool) -> String {
    if b { "yes" } else { "no" }.to_string()
}

pub fn cmd_propose(cfg: &RunConfig, scene: Option<&str>) -> Result<PathBuf> {
    let all = load_bundles(cfg)?;
    let working = working_scenes(cfg, &all, scene)?;
    let brain = make_brain(cfg, &all)?;
    let dir = stage_dir(cfg, "propose")?;
    let format = node_format(cfg);
    let exact = cfg.sim.clone().without_jitter();
    let seed = cfg.stage_seed("propose");
    let mut rows = Vec::new();
    for b in &working {
        let world = spawn_scene_with(&b.spec, &cfg.sim)?;
        let graph = build_scene_graph(&observe(&world))?;
        std::fs::write(dir.join(format!("{}.graph.txt", b.id())), serialize_graph_with(&graph, format))?;
        let tasks = propose(brain.as_ref(), b, &world, format)
            .with_context(|| format!("proposing tasks for {}", b.id()))?;
        let mut list = String::new();
        for t in &tasks {
            list.push_str(&t.description);
            list.push('\n');
            // Precheck: the plan parses and runs to a "yes" without jitter.
            let (steps, dry, error) = match decompose(brain.as_ref(), t, &world) {
                Ok(plan) => {
                    let goal = b.task(&t.description).map(|r| &r.goal);
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[b.id(), &t.description]));
                    let out = run_trial(&world, t, &plan, brain.as_ref(), goal, goal.is_some(), &exact, &mut rng)?;
                    (plan.steps.len(), out.success(), String::new())
                }
                Err(CollectError::DecompositionFailed(e)) => (0, false, e.to_string()),
                Err(e) => return Err(e.into()),
            };
            rows.push(vec![
                b.id().to_string(),
                t.description.clone(),
                steps.to_string(),
                yes_no(error.is_empty()),
                yes_no(dry),
                error,
            ]);
        }
        std::fs::write(dir.join(format!("{}.txt", b.id())), list)?;
        info!("{}: {} tasks proposed", b.id(), tasks.len());
    }
    write_table(
        &dir.join("tasks.csv"),
        &["scene", "task", "steps", "decomposed", "dry_run_success", "error"],
        &rows,
    )?;
    Manifest::new("propose", cfg, &brain.identity()).write(&dir)?;
    Ok(dir)
}

#[derive(Debug, Default)]
pub struct CollectSummary {
    pub pool: PathBuf,
    pub resumed: usize,
    pub written: usize,
    pub failed: Vec<(String, String)>,
    /// Scenes whose proposal step failed outright.
    pub scene_errors: usize,
}

fn rewrite_pool(path: &Path, entries: &[Trajectory]) -> io::Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    let mut w = PoolWriter::create(&tmp)?;
    for t in entries {
        w.write(t)?;
    }
    drop(w);
    std::fs::rename(&tmp, path)
}

pub fn cmd_collect(cfg: &RunConfig, scene: Option<&str>) -> Result<CollectSummary> {
    let all = load_bundles(cfg)?;
    let working = working_scenes(cfg, &all, scene)?;
    let brain = make_brain(cfg, &all)?;
    let dir = stage_dir(cfg, "collect")?;
    let pool_path = dir.join("pool.jsonl");

    let existing = if pool_path.exists() {
        let e = read_pool(&pool_path).with_context(|| format!("reading {}", pool_path.display()))?;
        // Drops a torn final line so appends start on a clean boundary.
        rewrite_pool(&pool_path, &e)?;
        info!("resuming from {} existing trajectories", e.len());
        e
    } else {
        Vec::new()
    };
    let campaign = CampaignConfig {
        tasks_per_scene: cfg.campaign.tasks_per_scene,
        demos_per_task: cfg.campaign.demos_per_task,
        max_trials: cfg.campaign.max_trials,
        seed: cfg.stage_seed("collect"),
        proposal_format: node_format(cfg),
        rule_verdicts: cfg.campaign.rule_verdicts,
        sim: cfg.sim.clone(),
    };
    let mut writer = PoolWriter::append(&pool_path)?;
    let mut seen = 0usize;
    let mut written = 0usize;
    // The campaign is deterministic, so a resumed run regenerates the
    // existing prefix; it is checked rather than written again.
    let mut sink = |t: &Trajectory| -> io::Result<()> {
        if seen < existing.len() {
            if *t != existing[seen] {
                return Err(io::Error::other(format!(
                    "existing pool diverges from this configuration at entry {seen}"
                )));
            }
        } else {
            writer.write(t)?;
            written += 1;
        }
        seen += 1;
        Ok(())
    };
    let (_, report) = run_campaign(&working, brain.as_ref(), &campaign, &mut sink)?;
    if seen < existing.len() {
        bail!(
            "existing pool has {} trajectories but this configuration produces {seen}",
            existing.len()
        );
    }

    let scene_rows: Vec<Vec<String>> = report
        .scenes
        .iter()
        .map(|s| {
            vec![
                s.scene_id.clone(),
                s.proposed.to_string(),
                s.feasible.to_string(),
                percent(s.feasibility_rate),
                s.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_table(
        &dir.join("feasibility.csv"),
        &["scene", "proposed", "feasible", "feasibility_rate", "error"],
        &scene_rows,
    )?;
    let task_rows: Vec<Vec<String>> = report
        .tasks
        .iter()
        .map(|t| {
            vec![
                t.scene_id.clone(),
                t.task.clone(),
                t.trials.to_string(),
                t.successes.to_string(),
                t.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_table(&dir.join("tasks.csv"), &["scene", "task", "trials", "successes", "error"], &task_rows)?;
    let mut metrics: Vec<MetricsRow> = report
        .tasks
        .iter()
        .filter(|t| t.confusion.total() > 0)
        .map(|t| MetricsRow::new(&t.task, t.confusion))
        .collect();
    metrics.push(MetricsRow::new("all", report.confusion()));
    let metric_rows: Vec<Vec<String>> = metrics
        .iter()
        .map(|m| {
            vec![
                m.task.clone(),
                m.trials.to_string(),
                m.tp.to_string(),
                m.fp.to_string(),
                m.fn_.to_string(),
                m.tn.to_string(),
                m.tpr.clone(),
                m.tnr.clone(),
            ]
        })
        .collect();
    write_table(
        &dir.join("metrics.csv"),
        &["task", "trials", "tp", "fp", "fn", "tn", "tpr", "tnr"],
        &metric_rows,
    )?;

    let failed: Vec<(String, String)> = report
        .tasks
        .iter()
        .filter(|t| t.successes < cfg.campaign.demos_per_task)
        .map(|t| {
            let why = t
                .error
                .clone()
                .unwrap_or_else(|| format!("{} of {} demos", t.successes, cfg.campaign.demos_per_task));
            (format!("{}: {}", t.scene_id, t.task), why)
        })
        .chain(
            report
                .scenes
                .iter()
                .filter_map(|s| s.error.clone().map(|e| (s.scene_id.clone(), e))),
        )
        .collect();
    for (what, why) in &failed {
        warn!("failed: {what} ({why})");
    }
    Manifest::new("collect", cfg, &brain.identity()).write(&dir)?;
    Ok(CollectSummary {
        pool: pool_path,
        resumed: existing.len(),
        written,
        failed,
        scene_errors: report.scenes.iter().filter(|s| s.error.is_some()).count(),
    })
}

fn load_pool_for(cfg: &RunConfig) -> Result<(PathBuf, Vec<Trajectory>)> {
    let path = cfg.pool_path();
    if !path.is_file() {
        bail!(
            "no demonstration pool at {}; run `bbsea collect` first or set train.pool",
            path.display()
        );
    }
    let pool = read_pool(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok((path, pool))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    let (pool_path, pool) = load_pool_for(cfg)?;
    let dir = stage_dir(cfg, "train")?;
    let result = bc_train(&pool, &cfg.hyper())?;
    let model_path = dir.join("model.json");
    result.model.save(&model_path)?;
    let rows: Vec<Vec<String>> = result
        .loss_curve
        .iter()
        .enumerate()
        .map(|(i, l)| vec![(i + 1).to_string(), l.to_string()])
        .collect();
    write_table(&dir.join("loss.csv"), &["epoch", "loss"], &rows)?;
    Manifest::new("train", cfg, "none").input(&pool_path)?.write(&dir)?;
    Ok(model_path)
}

/// Distinct (scene, task) pairs of a pool in first-appearance order.
pub fn pool_cases(pool: &[Trajectory], bundles: &[SceneBundle]) -> Result<Vec<(SceneBundle, TaskSpec)>> {
    let mut seen = HashSet::new();
    let mut cases = Vec::new();
    for t in pool {
        if !seen.insert((t.scene_id.clone(), t.task.description.clone())) {
            continue;
        }
        let b = bundles
            .iter()
            .find(|b| b.id() == t.scene_id)
            .ok_or_else(|| anyhow!("pool references scene {:?} that is not loaded", t.scene_id))?;
        cases.push((b.clone(), t.task.clone()));
    }
    Ok(cases)
}

pub fn cmd_eval(cfg: &RunConfig, scene: Option<&str>) -> Result<PathBuf> {
    let model_path = cfg.model_path();
    if !model_path.is_file() {
        bail!(
            "no checkpoint at {}; run `bbsea train` first or set eval.model",
            model_path.display()
        );
    }
    let model = PolicyModel::load(&model_path)?;
    let (pool_path, pool) = load_pool_for(cfg)?;
    let all = load_bundles(cfg)?;
    let mut cases = pool_cases(&pool, &all)?;
    if let Some(id) = scene {
        working_scenes(cfg, &all, Some(id))?;
        cases.retain(|(b, _)| b.id() == id);
    }
    let brain = make_brain(cfg, &all)?;
    let dir = stage_dir(cfg, "eval")?;
    let ecfg = EvalConfig {
        episodes: cfg.eval.episodes,
        horizon: cfg.eval.horizon,
        seed: cfg.stage_seed("eval"),
        start_jitter: cfg.eval.start_jitter,
        sim: cfg.sim.clone(),
    };
    let rows = evaluate(&model, &cases, &ecfg)?;
    let mut table = Vec::new();
    let (mut sum_policy, mut sum_collector) = (0.0, 0.0);
    for (row, (b, task)) in rows.iter().zip(&cases) {
        let collector = scripted_success_rate(
            b,
            task,
            brain.as_ref(),
            cfg.eval.collector_trials,
            &cfg.sim,
            cfg.stage_seed("collector-baseline"),
        )?;
        sum_policy += row.rate;
        sum_collector += collector;
        table.push(vec![
            row.scene_id.clone(),
            row.task.clone(),
            row.episodes.to_string(),
            row.successes.to_string(),
            percent(row.rate),
            percent(collector),
        ]);
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        table.push(vec![
            "average".into(),
            String::new(),
            String::new(),
            String::new(),
            percent(sum_policy / n),
            percent(sum_collector / n),
        ]);
    }
    write_table(
        &dir.join("rates.csv"),
        &["scene", "task", "episodes", "successes", "policy_rate", "collector_rate"],
        &table,
    )?;
    Manifest::new("eval", cfg, &brain.identity())
        .input(&model_path)?
        .input(&pool_path)?
        .write(&dir)?;
    Ok(dir)
}

pub fn cmd_diversity(cfg: &RunConfig) -> Result<PathBuf> {
    let mut groups = Vec::new();
    let mut manifest_inputs = Vec::new();
    for name in &cfg.diversity.lists {
        let tasks = bundled_task_list(name).ok_or_else(|| {
            anyhow!(UsageError(format!(
                "unknown task list {name:?}; bundled lists are {:?}",
                bbsea_core::diversity::task_list_names()
            )))
        })?;
        groups.push((name.clone(), tasks));
    }
    for f in &cfg.diversity.files {
        let text = std::fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
        let group = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        groups.push((group, parse_task_list(&text)));
        manifest_inputs.push(f.clone());
    }
    let report = analyze(&groups, &Lexicon::default(), cfg.diversity.k, cfg.stage_seed("diversity"))?;
    let dir = stage_dir(cfg, "diversity")?;

    let names: Vec<&str> = report.tasks.iter().map(|(_, t)| t.as_str()).collect();
    let matrix: Vec<Vec<String>> = report
        .distances
        .rows()
        .iter()
        .map(|r| r.iter().map(|v| v.to_string()).collect())
        .collect();
    write_table(&dir.join("distances.csv"), &names, &matrix)?;

    let opt = |o: &Option<String>| o.clone().unwrap_or_default();
    let rows: Vec<Vec<String>> = report
        .tasks
        .iter()
        .zip(&report.attributes)
        .zip(&report.embedding.points)
        .zip(&report.clustering.assignments)
        .enumerate()
        .map(|(i, ((((g, t), a), p), c))| {
            vec![
                i.to_string(),
                g.clone(),
                t.clone(),
                opt(&a.action),
                opt(&a.object_shape),
                opt(&a.location_shape),
                opt(&a.object_color),
                opt(&a.target_color),
                p[0].to_string(),
                p[1].to_string(),
                c.to_string(),
            ]
        })
        .collect();
    write_table(
        &dir.join("embedding.csv"),
        &[
            "index",
            "group",
            "task",
            "action",
            "object_shape",
            "location_shape",
            "object_color",
            "target_color",
            "x",
            "y",
            "cluster",
        ],
        &rows,
    )?;
    let group_rows: Vec<Vec<String>> = report
        .groups
        .iter()
        .map(|g| vec![g.group.clone(), g.tasks.to_string(), format!("{:.4}", g.hull_area)])
        .collect();
    write_table(&dir.join("groups.csv"), &["group", "tasks", "hull_area"], &group_rows)?;
    let cluster_rows: Vec<Vec<String>> = report
        .cluster_areas
        .iter()
        .enumerate()
        .map(|(c, a)| {
            let size = report.clustering.assignments.iter().filter(|&&x| x == c).count();
            vec![c.to_string(), size.to_string(), format!("{a:.4}")]
        })
        .collect();
    write_table(&dir.join("clusters.csv"), &["cluster", "size", "hull_area"], &cluster_rows)?;
    write_table(
        &dir.join("stress.csv"),
        &["iteration", "stress"],
        &report
            .embedding
            .stress_history
            .iter()
            .enumerate()
            .map(|(i, s)| vec![i.to_string(), s.to_string()])
            .collect::<Vec<_>>(),
    )?;
    let mut m = Manifest::new("diversity", cfg, "none");
    for f in &manifest_inputs {
        m = m.input(f)?;
    }
    m.write(&dir)?;
    Ok(dir)
}

/// Collates whatever stage outputs exist into one text summary.
pub fn cmd_report(cfg: &RunConfig) -> Result<String> {
    let mut out = String::new();
    let mut sections = 0;
    let mut section = |title: &str, path: PathBuf, out: &mut String| -> Result<()> {
        if !path.is_file() {
            return Ok(());
        }
        let (header, rows) = read_table(&path)?;
        sections += 1;
        out.push_str(&format!("## {title} ({})\n", path.display()));
        out.push_str(&header.join(" | "));
        out.push('\n');
        for r in rows {
            out.push_str(&r.join(" | "));
            out.push('\n');
        }
        out.push('\n');
        Ok(())
    };
    section("Task feasibility", cfg.stage_dir("collect").join("feasibility.csv"), &mut out)?;
    section("Success inference", cfg.stage_dir("collect").join("metrics.csv"), &mut out)?;
    section("Success rates", cfg.stage_dir("eval").join("rates.csv"), &mut out)?;
    section("Diversity area span", cfg.stage_dir("diversity").join("groups.csv"), &mut out)?;
    if sections == 0 {
        bail!("nothing to report under {}; run a pipeline stage first", cfg.out.display());
    }
    let dir = stage_dir(cfg, "report")?;
    std::fs::write(dir.join("summary.md"), &out)?;
    Manifest::new("report", cfg, "none").write(&dir)?;
    Ok(out)
}

