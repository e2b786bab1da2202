use crate::scenegraph::{serialize_graph_with, NodeFormat, SceneGraph};

use super::{BrainError, TaskSpec};

pub const PROPOSAL_BASE: &str = include_str!("../../assets/prompts/task_proposal.txt");
pub const DECOMPOSITION_BASE: &str = include_str!("../../assets/prompts/task_decomposition.txt");
pub const INFERENCE_BASE: &str = include_str!("../../assets/prompts/success_inference.txt");

const PROPOSAL_SUFFIX: &str = "tasks:";
const DECOMPOSITION_SUFFIX: &str = "reasoning: ";
const INFERENCE_SUFFIX: &str = "success metric: ";
const DIVIDER: &str = "  ----------\n";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptKind {
    Proposal,
    Decomposition,
    Inference,
}

impl PromptKind {
    /// Classifies a prompt by its trailing header.
    pub fn detect(prompt: &str) -> Option<Self> {
        if prompt.ends_with(INFERENCE_SUFFIX) {
            Some(PromptKind::Inference)
        } else if prompt.ends_with(DECOMPOSITION_SUFFIX) {
            Some(PromptKind::Decomposition)
        } else if prompt.ends_with(PROPOSAL_SUFFIX) {
            Some(PromptKind::Proposal)
        } else {
            None
        }
    }
}

pub fn build_proposal_prompt(g: &SceneGraph, format: NodeFormat) -> String {
    let mut s = String::with_capacity(PROPOSAL_BASE.len() + 1024);
    s.push_str(PROPOSAL_BASE);
    s.push_str("\n```\nscene graph:\n");
    s.push_str(&serialize_graph_with(g, format));
    s.push_str(PROPOSAL_SUFFIX);
    s
}

pub fn build_decomposition_prompt(task: &TaskSpec, g: &SceneGraph, format: NodeFormat) -> String {
    let mut s = String::with_capacity(DECOMPOSITION_BASE.len() + 1024);
    s.push_str(DECOMPOSITION_BASE);
    s.push_str("\n```\ntask description: ");
    s.push_str(&task.description);
    s.push_str("\nscene graph:\n");
    s.push_str(&serialize_graph_with(g, format));
    s.push_str(DECOMPOSITION_SUFFIX);
    s
}

/// Graphs are in chronological order, each preceded by a divider line.
pub fn build_inference_prompt(
    task: &TaskSpec,
    graphs: &[SceneGraph],
    format: NodeFormat,
) -> Result<String, BrainError> {
    if graphs.len() < 2 {
        return Err(BrainError::TooFewGraphs(graphs.len()));
    }
    let mut s = String::with_capacity(INFERENCE_BASE.len() + 1024 * graphs.len());
    s.push_str(INFERENCE_BASE);
    s.push_str("\n```\ntask description: ");
    s.push_str(&task.description);
    s.push_str("\nscene graph list:\n");
    for g in graphs {
        s.push_str(DIVIDER);
        s.push_str(&serialize_graph_with(g, format));
    }
    s.push_str(INFERENCE_SUFFIX);
    Ok(s)
}

/// The user section of a built prompt: everything after the last fence.
pub(crate) fn query_section(prompt: &str) -> &str {
    match prompt.rfind("```\n") {
        Some(i) => &prompt[i + 4..],
        None => prompt,
    }
}

/// Pulls the task description and the serialized graph blocks back out of
/// a decomposition or inference prompt.
pub(crate) fn split_query(section: &str) -> (Option<&str>, Vec<&str>) {
    let mut task = None;
    let mut rest = section;
    if let Some(r) = rest.strip_prefix("task description: ") {
        let end = r.find('\n').unwrap_or(r.len());
        task = Some(&r[..end]);
        rest = r.get(end + 1..).unwrap_or("");
    }
    let body = rest
        .strip_prefix("scene graph list:\n")
        .or_else(|| rest.strip_prefix("scene graph:\n"))
        .unwrap_or(rest);
    let body = body
        .strip_suffix(INFERENCE_SUFFIX)
        .or_else(|| body.strip_suffix(DECOMPOSITION_SUFFIX))
        .or_else(|| body.strip_suffix(PROPOSAL_SUFFIX))
        .unwrap_or(body);
    let graphs = if body.trim_start().starts_with("----------") {
        body.split(DIVIDER).filter(|b| !b.trim().is_empty()).collect()
    } else {
        vec![body]
    };
    (task, graphs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brain::TaskOrigin;
    use crate::scenegraph::{parse_graph, Node};
    use sha2::{Digest, Sha256};

    fn sha(s: &str) -> String {
        hex::encode(Sha256::digest(s.as_bytes()))
    }

    fn red_block_graph() -> SceneGraph {
        SceneGraph {
            nodes: vec![Node {
                label: "red block".into(),
                state: None,
                position: [0.40, -0.20, 0.08],
                x_range: [0.37, 0.43],
                y_range: [-0.23, -0.17],
                z_range: [0.05, 0.11],
            }],
            edges: vec![],
        }
    }

    fn task(d: &str) -> TaskSpec {
        TaskSpec::new(d, "scene0", TaskOrigin::Manual)
    }

    // Any edit to a base prompt, whitespace included, changes these.
    const GOLDEN: [&str; 3] = [
        "8c558c215878cc17916cb335f060928504dc427608363ac9b3da2390ff2f559a",
        "d1f60309d3896ffa8edfe9959a3eb60f2601e5a8f909dcbdc0ce9d032225e062",
        "5d782366be2e66ac03bb353574a274a428052cd5cc46f940b666dbd0fc00ef8a",
    ];

    #[test]
    fn base_prompts_are_pinned() {
        assert_eq!(sha(PROPOSAL_BASE), GOLDEN[0]);
        assert_eq!(sha(DECOMPOSITION_BASE), GOLDEN[1]);
        assert_eq!(sha(INFERENCE_BASE), GOLDEN[2]);
        assert!(PROPOSAL_BASE.starts_with("You are a curious baby."));
    }

    #[test]
    fn proposal_prompt_layout() {
        let p = build_proposal_prompt(&red_block_graph(), NodeFormat::Full);
        assert!(p.starts_with(PROPOSAL_BASE));
        assert!(p.ends_with("tasks:"));
        assert!(p.contains("\n```\nscene graph:\n  [Nodes]:\n"));
        assert!(p.contains(
            "    - red block -- position: [0.40, -0.20, 0.08], x_range: [0.37, 0.43], \
             y_range: [-0.23, -0.17], z_range: [0.05, 0.11]\n"
        ));
        assert_eq!(PromptKind::detect(&p), Some(PromptKind::Proposal));
    }

    #[test]
    fn empty_graph_prompt() {
        let p = build_proposal_prompt(&SceneGraph::default(), NodeFormat::Full);
        assert!(p.ends_with("scene graph:\n  [Nodes]:\n  [Edges]:\ntasks:"));
    }

    #[test]
    fn decomposition_prompt_layout() {
        let g = red_block_graph();
        let p = build_decomposition_prompt(&task("pick up the red block"), &g, NodeFormat::Full);
        assert!(p.ends_with("reasoning: "));
        assert!(p.contains("\n```\ntask description: pick up the red block\nscene graph:\n"));
        assert!(p.contains(&crate::scenegraph::serialize_graph(&g)));
        assert_eq!(PromptKind::detect(&p), Some(PromptKind::Decomposition));
        let (t, graphs) = split_query(query_section(&p));
        assert_eq!(t, Some("pick up the red block"));
        assert_eq!(parse_graph(graphs[0]).unwrap(), g);
    }

    #[test]
    fn inference_prompt_layout() {
        let g = red_block_graph();
        let p = build_inference_prompt(&task("t"), &[g.clone(), g.clone(), g.clone()], NodeFormat::Full)
            .unwrap();
        assert!(p.ends_with("success metric: "));
        assert_eq!(query_section(&p).matches("  ----------\n  [Nodes]:").count(), 3);
        assert_eq!(PromptKind::detect(&p), Some(PromptKind::Inference));
        let (t, graphs) = split_query(query_section(&p));
        assert_eq!(t, Some("t"));
        assert_eq!(graphs.len(), 3);
        for b in graphs {
            assert_eq!(parse_graph(b).unwrap(), g);
        }
        assert_eq!(
            build_inference_prompt(&task("t"), &[g], NodeFormat::Full),
            Err(BrainError::TooFewGraphs(1))
        );
    }

    #[test]
    fn ablated_formats_drop_fields() {
        let p = build_proposal_prompt(&red_block_graph(), NodeFormat::NoBbox);
        assert!(p.contains("    - red block -- position: [0.40, -0.20, 0.08]\n"));
        let p = build_proposal_prompt(&red_block_graph(), NodeFormat::NoBboxNoPosition);
        assert!(p.contains("    - red block\n"));
    }

    #[test]
    fn builders_are_pure() {
        let g = red_block_graph();
        assert_eq!(
            build_proposal_prompt(&g, NodeFormat::Full),
            build_proposal_prompt(&g, NodeFormat::Full)
        );
    }
}
