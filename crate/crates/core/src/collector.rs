//! Demonstration collection: propose, decompose once, execute with retries,
//! verify, and keep the successful trajectories.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brain::{
    build_decomposition_prompt, build_inference_prompt, build_proposal_prompt,
    parse_decomposition, parse_proposals, parse_verdict, BrainBackend, BrainError, Decomposition,
    TaskOrigin, TaskSpec,
};
use crate::scenegraph::{build_scene_graph, GraphError, NodeFormat, SceneGraph};
use crate::scenes::SceneBundle;
use crate::util::derive_seed;
use crate::verifier::{rule_verdict, Answer, ConfusionCounts, GoalPredicate, Verdict, VerdictSource};
use crate::world::{execute_call, observe, spawn_scene_with, Observation, WorldError, WorldState};
use crate::SimConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub obs: Observation,
    pub action: [f64; 10],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task: TaskSpec,
    pub scene_id: String,
    pub frames: Vec<Frame>,
    pub success: bool,
    pub trial_index: usize,
    pub verdict: Verdict,
    pub verdict_source: VerdictSource,
}

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("max_trials must be at least 1")]
    ZeroTrials,
    #[error("decomposition failed: {0}")]
    DecompositionFailed(BrainError),
    #[error(transparent)]
    Brain(#[from] BrainError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("pool I/O: {0}")]
    Io(#[from] io::Error),
}

/// Outcome of one execution attempt.
#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub frames: Vec<Frame>,
    pub verdict: Verdict,
    pub source: VerdictSource,
    /// Rule verdict on the same graphs, when a goal was available.
    pub ground_truth: Option<bool>,
}

impl TrialOutcome {
    pub fn success(&self) -> bool {
        self.verdict.answer == Answer::Yes
    }
}

fn graph(world: &WorldState) -> Result<SceneGraph, GraphError> {
    build_scene_graph(&observe(world))
}

pub fn decompose(
    brain: &dyn BrainBackend,
    task: &TaskSpec,
    initial: &WorldState,
) -> Result<Decomposition, CollectError> {
    let prompt = build_decomposition_prompt(task, &graph(initial)?, NodeFormat::Full);
    let text = brain.query(&prompt)?;
    parse_decomposition(&text).map_err(CollectError::DecompositionFailed)
}

/// Runs one attempt from a fresh copy of `initial`. Execution stops at the
/// first failing call; the verdict is still taken on the graphs reached.
/// The goal, when given, decides through the rule engine; otherwise the
/// brain judges from the graph list.
#[allow(clippy::too_many_arguments)]
pub fn run_trial<R: Rng + ?Sized>(
    initial: &WorldState,
    task: &TaskSpec,
    plan: &Decomposition,
    brain: &dyn BrainBackend,
    goal: Option<&GoalPredicate>,
    rule_verdicts: bool,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<TrialOutcome, CollectError> {
    let mut world = initial.clone();
    let mut frames = Vec::new();
    let mut graphs = vec![graph(&world)?];
    'steps: for step in &plan.steps {
        for call in &step.calls {
            let ok = execute_call(&mut world, call, cfg, rng, |w, f| {
                frames.push(Frame {
                    obs: observe(w),
                    action: f.to_vector(),
                })
            });
            if !matches!(ok, Ok(true)) {
                graphs.push(graph(&world)?);
                break 'steps;
            }
        }
        graphs.push(graph(&world)?);
    }
    let quantized = |g: &SceneGraph| g.quantized();
    let first = quantized(&graphs[0]);
    let last = quantized(graphs.last().unwrap());
    let rules = goal.map(|g| rule_verdict(g, &first, &last));
    let ground_truth = rules.as_ref().map(|v| v.answer == Answer::Yes);
    let (verdict, source) = match rules {
        Some(v) if rule_verdicts => (v, VerdictSource::Rules),
        _ => {
            let prompt = build_inference_prompt(task, &graphs, NodeFormat::Full)?;
            (parse_verdict(&brain.query(&prompt)?)?, VerdictSource::Brain)
        }
    };
    Ok(TrialOutcome {
        frames,
        verdict,
        source,
        ground_truth,
    })
}

fn trajectory(task: &TaskSpec, trial_index: usize, t: TrialOutcome) -> Trajectory {
    Trajectory {
        task: task.clone(),
        scene_id: task.scene_id.clone(),
        frames: t.frames,
        success: true,
        trial_index,
        verdict: t.verdict,
        verdict_source: t.source,
    }
}

/// Up to `max_trials` attempts; the first verified success is returned.
pub fn collect_demo<R: Rng + ?Sized>(
    initial: &WorldState,
    task: &TaskSpec,
    brain: &dyn BrainBackend,
    goal: Option<&GoalPredicate>,
    max_trials: usize,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<Option<Trajectory>, CollectError> {
    if max_trials == 0 {
        return Err(CollectError::ZeroTrials);
    }
    let plan = decompose(brain, task, initial)?;
    for trial in 0..max_trials {
        let t = run_trial(initial, task, &plan, brain, goal, goal.is_some(), cfg, rng)?;
        if t.success() {
            return Ok(Some(trajectory(task, trial, t)));
        }
    }
    Ok(None)
}

/// Percentage of independent single attempts at a repertoire task that the
/// goal predicate accepts. This is the scripted collector's own success
/// rate, the baseline a distilled policy is compared against.
pub fn scripted_success_rate(
    bundle: &SceneBundle,
    task: &TaskSpec,
    brain: &dyn BrainBackend,
    trials: usize,
    cfg: &SimConfig,
    seed: u64,
) -> Result<f64, CollectError> {
    if trials == 0 {
        return Err(CollectError::ZeroTrials);
    }
    let goal = bundle.task(&task.description).map(|t| &t.goal);
    let initial = spawn_scene_with(&bundle.spec, cfg)?;
    let plan = decompose(brain, task, &initial)?;
    let mut ok = 0usize;
    for i in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            &[bundle.id(), &task.description, &i.to_string()],
        ));
        let t = run_trial(&initial, task, &plan, brain, goal, goal.is_some(), cfg, &mut rng)?;
        if t.success() {
            ok += 1;
        }
    }
    Ok(100.0 * ok as f64 / trials as f64)
}

#[derive(Clone, Debug)]
pub struct CampaignConfig {
    /// Proposals kept per scene, in response order; `None` keeps all.
    pub tasks_per_scene: Option<usize>,
    pub demos_per_task: usize,
    pub max_trials: usize,
    pub seed: u64,
    /// Node format of the proposal prompt.
    pub proposal_format: NodeFormat,
    /// Judge repertoire tasks with the rule engine instead of the brain.
    pub rule_verdicts: bool,
    pub sim: SimConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            tasks_per_scene: None,
            demos_per_task: 1,
            max_trials: 10,
            seed: 0,
            proposal_format: NodeFormat::Full,
            rule_verdicts: true,
            sim: SimConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub scene_id: String,
    pub proposed: usize,
    pub feasible: usize,
    pub feasibility_rate: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub scene_id: String,
    pub task: String,
    pub trials: usize,
    pub successes: usize,
    pub error: Option<String>,
    /// Brain verdicts scored against the rule engine, for tasks with a
    /// known goal that were judged by the brain.
    pub confusion: ConfusionCounts,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub scenes: Vec<SceneReport>,
    pub tasks: Vec<TaskReport>,
}

impl CampaignReport {
    pub fn confusion(&self) -> ConfusionCounts {
        let mut c = ConfusionCounts::default();
        for t in &self.tasks {
            c.tp += t.confusion.tp;
            c.fp += t.confusion.fp;
            c.fn_ += t.confusion.fn_;
            c.tn += t.confusion.tn;
        }
        c
    }
}

pub fn origin_of(brain: &dyn BrainBackend) -> TaskOrigin {
    if brain.identity() == "oracle" {
        TaskOrigin::Oracle
    } else {
        TaskOrigin::Remote
    }
}

/// Proposes tasks for one scene from its initial graph.
pub fn propose(
    brain: &dyn BrainBackend,
    bundle: &SceneBundle,
    world: &WorldState,
    format: NodeFormat,
) -> Result<Vec<TaskSpec>, CollectError> {
    let prompt = build_proposal_prompt(&graph(world)?, format);
    let text = brain.query(&prompt)?;
    Ok(parse_proposals(&text, bundle.id(), origin_of(brain))?)
}

fn collect_task(
    bundle: &SceneBundle,
    initial: &WorldState,
    task: &TaskSpec,
    brain: &dyn BrainBackend,
    cfg: &CampaignConfig,
    sink: &mut dyn FnMut(&Trajectory) -> io::Result<()>,
    pool: &mut Vec<Trajectory>,
) -> Result<TaskReport, CollectError> {
    let mut report = TaskReport {
        scene_id: bundle.id().to_string(),
        task: task.description.clone(),
        ..TaskReport::default()
    };
    if cfg.demos_per_task == 0 {
        return Ok(report);
    }
    let goal = bundle.task(&task.description).map(|t| &t.goal);
    let plan = match decompose(brain, task, initial) {
        Ok(p) => p,
        Err(e) => {
            report.error = Some(e.to_string());
            return Ok(report);
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[bundle.id(), &task.description]));
    let budget = cfg.max_trials * cfg.demos_per_task;
    while report.successes < cfg.demos_per_task && report.trials < budget {
        let trial = report.trials;
        report.trials += 1;
        let t = match run_trial(initial, task, &plan, brain, goal, cfg.rule_verdicts, &cfg.sim, &mut rng) {
            Ok(t) => t,
            Err(e) => {
                report.error = Some(e.to_string());
                break;
            }
        };
        if let (VerdictSource::Brain, Some(actual)) = (t.source, t.ground_truth) {
            report.confusion.add(t.verdict.answer, actual);
        }
        if t.success() {
            report.successes += 1;
            let traj = trajectory(task, trial, t);
            sink(&traj)?;
            pool.push(traj);
        }
    }
    Ok(report)
}

/// Runs the full loop over `scenes`. Backend and execution failures are
/// recorded per scene or task and do not abort the campaign; only a failing
/// `sink` does. Scenes and tasks run in order so pools are reproducible.
pub fn run_campaign(
    scenes: &[SceneBundle],
    brain: &dyn BrainBackend,
    cfg: &CampaignConfig,
    sink: &mut dyn FnMut(&Trajectory) -> io::Result<()>,
) -> Result<(Vec<Trajectory>, CampaignReport), CollectError> {
    if cfg.max_trials == 0 {
        return Err(CollectError::ZeroTrials);
    }
    let mut pool = Vec::new();
    let mut report = CampaignReport::default();
    for bundle in scenes {
        let mut scene = SceneReport {
            scene_id: bundle.id().to_string(),
            ..SceneReport::default()
        };
        let initial = match spawn_scene_with(&bundle.spec, &cfg.sim) {
            Ok(w) => w,
            Err(e) => {
                scene.error = Some(e.to_string());
                report.scenes.push(scene);
                continue;
            }
        };
        let mut tasks = match propose(brain, bundle, &initial, cfg.proposal_format) {
            Ok(t) => t,
            Err(e) => {
                warn!("{}: proposal failed: {e}", bundle.id());
                scene.error = Some(e.to_string());
                report.scenes.push(scene);
                continue;
            }
        };
        if let Some(n) = cfg.tasks_per_scene {
            tasks.truncate(n);
        }
        scene.proposed = tasks.len();
        for task in &tasks {
            let t = collect_task(bundle, &initial, task, brain, cfg, sink, &mut pool)?;
            info!(
                "{} / {}: {}/{} trials succeeded",
                bundle.id(),
                task.description,
                t.successes,
                t.trials
            );
            if t.successes > 0 {
                scene.feasible += 1;
            }
            report.tasks.push(t);
        }
        scene.feasibility_rate = if scene.proposed == 0 {
            0.0
        } else {
            100.0 * scene.feasible as f64 / scene.proposed as f64
        };
        report.scenes.push(scene);
    }
    Ok((pool, report))
}

/// Append-only JSON-lines pool. Each record is flushed and synced before
/// the next one is written, so a crash loses at most the line in flight.
pub struct PoolWriter {
    file: File,
}

impl PoolWriter {
    pub fn append(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file })
    }

    pub fn create(path: &Path) -> io::Result<Self> {
        let file = File::create(path)?;
        Ok(Self { file })
    }

    pub fn write(&mut self, t: &Trajectory) -> io::Result<()> {
        let mut line = serde_json::to_vec(t)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        self.file.sync_data()
    }
}

/// Reads a pool file. A truncated final line (an interrupted append) is
/// skipped; corruption anywhere else is an error.
pub fn read_pool(path: &Path) -> io::Result<Vec<Trajectory>> {
    let reader = BufReader::new(File::open(path)?);
    let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(t) => out.push(t),
            Err(e) if i + 1 == lines.len() => warn!("skipping truncated last pool line: {e}"),
            Err(e) => {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("pool line {}: {e}", i + 1),
                ))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brain::OracleBrain;
    use crate::scenes;

    fn drawer() -> (SceneBundle, WorldState) {
        let b = scenes::find("scene1").unwrap();
        let w = spawn_scene_with(&b.spec, &SimConfig::default()).unwrap();
        (b, w)
    }

    #[test]
    fn open_drawer_first_trial() {
        let (b, w) = drawer();
        let oracle = OracleBrain::bundled();
        let task = TaskSpec::new("open the drawer", "scene1", TaskOrigin::Oracle);
        let cfg = SimConfig::default().without_jitter();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let goal = &b.task("open the drawer").unwrap().goal;
        let t = collect_demo(&w, &task, &oracle, Some(goal), 5, &cfg, &mut rng)
            .unwrap()
            .unwrap();
        assert_eq!(t.trial_index, 0);
        assert!(t.success);
        assert!(!t.frames.is_empty());
        assert_eq!(t.verdict.answer, Answer::Yes);
        assert_eq!(t.verdict_source, VerdictSource::Rules);
        // The brain route agrees.
        let t = collect_demo(&w, &task, &oracle, None, 5, &cfg, &mut rng)
            .unwrap()
            .unwrap();
        assert_eq!(t.verdict_source, VerdictSource::Brain);
        assert_eq!(t.trial_index, 0);
        for f in &t.frames {
            assert_eq!(f.obs.objects.len(), w.objects.len());
            assert!(f.action[9] == 0.0 || f.action[9] == 1.0);
            let r0 = nalgebra::Vector3::new(f.action[3], f.action[4], f.action[5]);
            let r1 = nalgebra::Vector3::new(f.action[6], f.action[7], f.action[8]);
            assert!((r0.norm() - 1.0).abs() < 1e-3 && (r1.norm() - 1.0).abs() < 1e-3);
            assert!(r0.dot(&r1).abs() < 1e-3);
        }
        assert_eq!(t.frames[0].obs, observe(&w));
    }

    #[test]
    fn unknown_task_is_infeasible() {
        let (_, w) = drawer();
        let oracle = OracleBrain::bundled();
        let task = TaskSpec::new("feed the cat", "scene1", TaskOrigin::Manual);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = collect_demo(&w, &task, &oracle, None, 3, &SimConfig::default(), &mut rng);
        assert!(matches!(r, Err(CollectError::DecompositionFailed(_))));
        assert!(matches!(
            collect_demo(&w, &task, &oracle, None, 0, &SimConfig::default(), &mut rng),
            Err(CollectError::ZeroTrials)
        ));
    }

    #[test]
    fn truncated_plan_is_judged_no() {
        let (b, w) = drawer();
        let oracle = OracleBrain::bundled();
        let rt = b.task("open the drawer and place the red block inside it").unwrap();
        let task = TaskSpec::new(&rt.description, "scene1", TaskOrigin::Oracle);
        let mut plan = decompose(&oracle, &task, &w).unwrap();
        plan.steps.truncate(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = SimConfig::default().without_jitter();
        for rules in [true, false] {
            let t = run_trial(&w, &task, &plan, &oracle, Some(&rt.goal), rules, &cfg, &mut rng).unwrap();
            assert_eq!(t.verdict.answer, Answer::No);
            assert_eq!(t.ground_truth, Some(false));
        }
    }

    #[test]
    fn campaign_is_feasible_and_pure() {
        let oracle = OracleBrain::bundled();
        let cfg = CampaignConfig {
            demos_per_task: 2,
            max_trials: 10,
            seed: 3,
            ..CampaignConfig::default()
        };
        let mut written = 0;
        let (pool, report) = run_campaign(&scenes::bundled(), &oracle, &cfg, &mut |_| {
            written += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(written, pool.len());
        for s in &report.scenes {
            assert_eq!(s.feasibility_rate, 100.0, "{s:?}");
            assert!(s.feasible <= s.proposed);
        }
        for t in &report.tasks {
            assert!(t.trials <= cfg.max_trials * cfg.demos_per_task);
        }
        assert!(pool.iter().all(|t| t.success && t.verdict.answer == Answer::Yes));
    }

    #[test]
    fn zero_demos_still_reports_proposals() {
        let oracle = OracleBrain::bundled();
        let cfg = CampaignConfig {
            demos_per_task: 0,
            ..CampaignConfig::default()
        };
        let (pool, report) =
            run_campaign(&scenes::bundled(), &oracle, &cfg, &mut |_| Ok(())).unwrap();
        assert!(pool.is_empty());
        assert!(report.scenes.iter().all(|s| s.proposed > 0));
    }

    #[test]
    fn brain_verdicts_are_scored() {
        let oracle = OracleBrain::bundled();
        let cfg = CampaignConfig {
            rule_verdicts: false,
            ..CampaignConfig::default()
        };
        let (_, report) =
            run_campaign(&scenes::bundled()[..1], &oracle, &cfg, &mut |_| Ok(())).unwrap();
        let c = report.confusion();
        assert!(c.total() > 0);
        assert_eq!(c.fp + c.fn_, 0);
    }

    #[test]
    fn pool_round_trip_tolerates_torn_tail() {
        let (b, w) = drawer();
        let oracle = OracleBrain::bundled();
        let task = TaskSpec::new("open the drawer", "scene1", TaskOrigin::Oracle);
        let goal = &b.task("open the drawer").unwrap().goal;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = collect_demo(&w, &task, &oracle, Some(goal), 5, &SimConfig::default(), &mut rng)
            .unwrap()
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.jsonl");
        let mut wtr = PoolWriter::create(&path).unwrap();
        wtr.write(&t).unwrap();
        wtr.write(&t).unwrap();
        drop(wtr);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"task\": ").unwrap();
        let back = read_pool(&path).unwrap();
        assert_eq!(back, vec![t.clone(), t]);
    }

    #[test]
    fn scripted_rate_bounds() {
        let b = scenes::find("toy_drawer").unwrap();
        let oracle = OracleBrain::bundled();
        let task = TaskSpec::new("open the drawer", "toy_drawer", TaskOrigin::Oracle);
        let exact = SimConfig::default().without_jitter();
        assert_eq!(scripted_success_rate(&b, &task, &oracle, 5, &exact, 0).unwrap(), 100.0);
        let r = scripted_success_rate(&b, &task, &oracle, 40, &SimConfig::default(), 0).unwrap();
        assert!(r > 0.0 && r < 100.0, "{r}");
        assert_eq!(r, scripted_success_rate(&b, &task, &oracle, 40, &SimConfig::default(), 0).unwrap());
        assert!(matches!(
            scripted_success_rate(&b, &task, &oracle, 0, &exact, 0),
            Err(CollectError::ZeroTrials)
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(12))]

            #[test]
            fn budget_and_purity(demos in 0usize..3, max_trials in 1usize..4, seed in any::<u64>()) {
                let cfg = CampaignConfig { demos_per_task: demos, max_trials, seed, ..CampaignConfig::default() };
                let (pool, report) = run_campaign(&scenes::toys(), &OracleBrain::bundled(), &cfg, &mut |_| Ok(())).unwrap();
                for t in &report.tasks {
                    prop_assert!(t.trials <= max_trials * demos);
                    prop_assert!(t.successes <= demos);
                }
                prop_assert!(pool.iter().all(|t| t.success && t.verdict.answer == Answer::Yes));
                prop_assert!(pool.iter().all(|t| t.trial_index < max_trials * demos));
            }

            #[test]
            fn every_trial_starts_from_the_initial_scene(seed in any::<u64>()) {
                let (_, w) = drawer();
                let oracle = OracleBrain::bundled();
                let task = TaskSpec::new("open the drawer", "scene1", TaskOrigin::Oracle);
                let plan = decompose(&oracle, &task, &w).unwrap();
                let start = observe(&w);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..3 {
                    let t = run_trial(&w, &task, &plan, &oracle, None, false, &SimConfig::default(), &mut rng).unwrap();
                    prop_assert_eq!(&t.frames[0].obs, &start);
                }
            }
        }
    }
}
