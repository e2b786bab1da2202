//! Bundled scenes and their scripted task repertoires.
//!
//! A bundle is one TOML file: the scene spec plus a `[[tasks]]` list, each
//! with a description, a plan in the answer grammar and a goal predicate.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::verifier::GoalPredicate;
use crate::world::SceneSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepertoireTask {
    pub description: String,
    pub plan: String,
    pub goal: GoalPredicate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBundle {
    #[serde(flatten)]
    pub spec: SceneSpec,
    #[serde(default)]
    pub tasks: Vec<RepertoireTask>,
}

impl SceneBundle {
    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn task(&self, description: &str) -> Option<&RepertoireTask> {
        let d = description.trim();
        self.tasks.iter().find(|t| t.description == d)
    }
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing scene bundle: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown scene {0:?}")]
    UnknownScene(String),
}

const BUNDLED: [(&str, &str); 5] = [
    ("scene0", include_str!("../assets/scenes/scene0.toml")),
    ("scene1", include_str!("../assets/scenes/scene1.toml")),
    ("scene2", include_str!("../assets/scenes/scene2.toml")),
    ("scene3", include_str!("../assets/scenes/scene3.toml")),
    ("scene4", include_str!("../assets/scenes/scene4.toml")),
];

const TOYS: [(&str, &str); 2] = [
    ("toy_push", include_str!("../assets/scenes/toy_push.toml")),
    ("toy_drawer", include_str!("../assets/scenes/toy_drawer.toml")),
];

pub fn parse_bundle(text: &str) -> Result<SceneBundle, SceneError> {
    Ok(toml::from_str(text)?)
}

pub fn load_bundle(path: &Path) -> Result<SceneBundle, SceneError> {
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_bundle(&text)
}

fn parse_all(list: &[(&str, &str)]) -> Vec<SceneBundle> {
    list.iter()
        .map(|(id, text)| {
            parse_bundle(text).unwrap_or_else(|e| panic!("bundled scene {id} is invalid: {e}"))
        })
        .collect()
}

/// The five evaluation scenes.
pub fn bundled() -> Vec<SceneBundle> {
    parse_all(&BUNDLED)
}

/// Single-task scenes used for distillation checks.
pub fn toys() -> Vec<SceneBundle> {
    parse_all(&TOYS)
}

/// Every bundled scene, evaluation scenes first.
pub fn all() -> Vec<SceneBundle> {
    let mut v = bundled();
    v.extend(toys());
    v
}

pub fn find(id: &str) -> Result<SceneBundle, SceneError> {
    all()
        .into_iter()
        .find(|b| b.id() == id)
        .ok_or_else(|| SceneError::UnknownScene(id.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::spawn_scene;
    use std::collections::HashSet;

    #[test]
    fn bundles_spawn() {
        for b in all() {
            let w = spawn_scene(&b.spec).unwrap_or_else(|e| panic!("{}: {e}", b.id()));
            assert!(!w.objects.is_empty());
            assert!(!b.tasks.is_empty(), "{} has no tasks", b.id());
        }
    }

    #[test]
    fn label_sets_are_distinct() {
        let mut seen = HashSet::new();
        for b in all() {
            let w = spawn_scene(&b.spec).unwrap();
            let mut labels: Vec<String> = w.objects.iter().map(|o| o.label()).collect();
            labels.sort();
            assert!(seen.insert(labels), "{} duplicates another scene", b.id());
        }
    }

    #[test]
    fn unknown_scene() {
        assert!(matches!(find("nope"), Err(SceneError::UnknownScene(_))));
        assert_eq!(find("scene3").unwrap().id(), "scene3");
    }
}
