use std::collections::BTreeSet;

use crate::scenegraph::{node_labels, parse_graph, SceneGraph};
use crate::scenes::{self, RepertoireTask, SceneBundle};
use crate::verifier::{rule_verdict, Answer, Verdict};
use crate::world::spawn_scene;

use super::parse::{parse_steps, render_decomposition};
use super::prompts::{query_section, split_query, PromptKind};
use super::{BrainBackend, BrainError};

/// Scripted brain: answers from per-scene repertoires and judges success
/// with the rule verifier. The scene is recognised from the set of node
/// labels in the prompt's graph, so responses depend on the prompt alone.
pub struct OracleBrain {
    scenes: Vec<(BTreeSet<String>, SceneBundle)>,
}

fn render_verdict(v: &Verdict) -> String {
    format!(
        "{}\nreasoning: {}\nanswer:\n  {}\n",
        v.success_metric,
        v.reasoning,
        v.answer.as_str()
    )
}

impl OracleBrain {
    pub fn new(bundles: Vec<SceneBundle>) -> Self {
        let scenes = bundles
            .into_iter()
            .map(|b| {
                let world = spawn_scene(&b.spec)
                    .unwrap_or_else(|e| panic!("oracle scene {} does not spawn: {e}", b.id()));
                let labels = world.objects.iter().map(|o| o.label()).collect();
                (labels, b)
            })
            .collect();
        Self { scenes }
    }

    /// Oracle over every bundled scene.
    pub fn bundled() -> Self {
        Self::new(scenes::all())
    }

    fn scene_for(&self, graph_text: &str) -> Result<&SceneBundle, BrainError> {
        let labels: BTreeSet<String> = node_labels(graph_text).into_iter().collect();
        self.scenes
            .iter()
            .find(|(l, _)| *l == labels)
            .map(|(_, b)| b)
            .ok_or(BrainError::UnknownScene)
    }

    fn task<'a>(&'a self, bundle: &'a SceneBundle, desc: Option<&str>) -> Option<&'a RepertoireTask> {
        desc.and_then(|d| bundle.task(d))
    }

    fn propose(&self, bundle: &SceneBundle) -> String {
        bundle
            .tasks
            .iter()
            .map(|t| format!(" - {}\n", t.description))
            .collect()
    }

    fn decompose(&self, task: Option<&RepertoireTask>) -> String {
        let Some(task) = task else {
            return "No scripted plan exists for this task.\nanswer:\n".into();
        };
        match parse_steps(&task.plan, 1) {
            Ok(d) => format!(
                "Following the scripted plan for \"{}\".\nanswer:\n{}",
                task.description,
                render_decomposition(&d)
            ),
            Err(e) => format!("The scripted plan is unusable: {e}.\nanswer:\n"),
        }
    }

    fn infer(&self, task: Option<&RepertoireTask>, graphs: &[&str]) -> String {
        let Some(task) = task else {
            return render_verdict(&Verdict {
                answer: Answer::NotSure,
                success_metric: "No goal is known for this task.".into(),
                reasoning: "The task is not in the repertoire.".into(),
            });
        };
        let parsed: Result<Vec<SceneGraph>, _> = graphs.iter().map(|g| parse_graph(g)).collect();
        let verdict = match parsed.as_deref() {
            Ok([first, .., last]) => rule_verdict(&task.goal, first, last),
            Ok(_) => Verdict {
                answer: Answer::NotSure,
                success_metric: format!("{}.", task.goal),
                reasoning: "Fewer than two scene graphs were given.".into(),
            },
            Err(e) => Verdict {
                answer: Answer::NotSure,
                success_metric: format!("{}.", task.goal),
                reasoning: format!("The scene graphs cannot be read: {e}."),
            },
        };
        render_verdict(&verdict)
    }
}

impl BrainBackend for OracleBrain {
    fn query(&self, prompt: &str) -> Result<String, BrainError> {
        let kind = PromptKind::detect(prompt).ok_or(BrainError::UnrecognizedPromptShape)?;
        let (desc, graphs) = split_query(query_section(prompt));
        let first = graphs.first().ok_or(BrainError::UnrecognizedPromptShape)?;
        let bundle = self.scene_for(first)?;
        Ok(match kind {
            PromptKind::Proposal => self.propose(bundle),
            PromptKind::Decomposition => self.decompose(self.task(bundle, desc)),
            PromptKind::Inference => self.infer(self.task(bundle, desc), &graphs),
        })
    }

    fn identity(&self) -> String {
        "oracle".into()
    }
}
