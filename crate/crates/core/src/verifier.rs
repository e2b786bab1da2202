//! Rule-based success inference over scene graphs and metrics for judging
//! inference quality.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenegraph::{self, Node, SceneGraph};
use crate::util::percent;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalPredicate {
    OnTop { a: String, b: String },
    Inside { a: String, b: String },
    Near { a: String, b: String, radius: f64 },
    StateIs { a: String, state: String },
    /// `a.y < b.y_range.min`
    LeftOf { a: String, b: String },
    /// `a.y > b.y_range.max`
    RightOf { a: String, b: String },
    /// `a.x > b.x_range.max`
    InFrontOf { a: String, b: String },
    /// `a.x < b.x_range.min`
    Behind { a: String, b: String },
    /// Displacement between the first and last graph, projected on the
    /// normalized xy direction, is at least `min_distance`.
    MovedBy {
        a: String,
        direction: [f64; 2],
        min_distance: f64,
    },
    PositionWithin { a: String, min: [f64; 3], max: [f64; 3] },
    AllOf(Vec<GoalPredicate>),
    AnyOf(Vec<GoalPredicate>),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum VerifyError {
    #[error("label {0:?} is not in the scene graph")]
    UnresolvedLabel(String),
    #[error("predicate relates {0:?} to itself")]
    SelfReference(String),
    #[error("composite predicate has no members")]
    EmptyComposite,
    #[error("direction vector is zero")]
    ZeroDirection,
    #[error("no predictions to score")]
    EmptyInput,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Yes,
    No,
    NotSure,
}

impl Answer {
    pub fn as_str(self) -> &'static str {
        match self {
            Answer::Yes => "yes",
            Answer::No => "no",
            Answer::NotSure => "not sure",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub answer: Answer,
    pub success_metric: String,
    pub reasoning: String,
}

/// Which route produced a verdict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictSource {
    Rules,
    Brain,
}

fn lookup<'g>(g: &'g SceneGraph, label: &str) -> Result<&'g Node, VerifyError> {
    g.node(label)
        .ok_or_else(|| VerifyError::UnresolvedLabel(label.to_string()))
}

fn pair<'g>(g: &'g SceneGraph, a: &str, b: &str) -> Result<(&'g Node, &'g Node), VerifyError> {
    if a == b {
        return Err(VerifyError::SelfReference(a.to_string()));
    }
    Ok((lookup(g, a)?, lookup(g, b)?))
}

pub fn eval_predicate(
    p: &GoalPredicate,
    before: &SceneGraph,
    after: &SceneGraph,
) -> Result<bool, VerifyError> {
    use GoalPredicate::*;
    Ok(match p {
        OnTop { a, b } => {
            let (a, b) = pair(after, a, b)?;
            scenegraph::is_on_top(a, b) && !scenegraph::is_inside(a, b)
        }
        Inside { a, b } => {
            let (a, b) = pair(after, a, b)?;
            scenegraph::is_inside(a, b)
        }
        Near { a, b, radius } => {
            let (a, b) = pair(after, a, b)?;
            scenegraph::centroid_distance(a, b) <= *radius
        }
        StateIs { a, state } => lookup(after, a)?.state_or_default() == state,
        LeftOf { a, b } => {
            let (a, b) = pair(after, a, b)?;
            a.position[1] < b.y_range[0]
        }
        RightOf { a, b } => {
            let (a, b) = pair(after, a, b)?;
            a.position[1] > b.y_range[1]
        }
        InFrontOf { a, b } => {
            let (a, b) = pair(after, a, b)?;
            a.position[0] > b.x_range[1]
        }
        Behind { a, b } => {
            let (a, b) = pair(after, a, b)?;
            a.position[0] < b.x_range[0]
        }
        MovedBy {
            a,
            direction,
            min_distance,
        } => {
            let n = (direction[0].powi(2) + direction[1].powi(2)).sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(VerifyError::ZeroDirection);
            }
            let from = lookup(before, a)?.position;
            let to = lookup(after, a)?.position;
            let along = ((to[0] - from[0]) * direction[0] + (to[1] - from[1]) * direction[1]) / n;
            along >= *min_distance
        }
        PositionWithin { a, min, max } => {
            let p = lookup(after, a)?.position;
            (0..3).all(|i| min[i] <= p[i] && p[i] <= max[i])
        }
        AllOf(list) => {
            if list.is_empty() {
                return Err(VerifyError::EmptyComposite);
            }
            let mut all = true;
            for q in list {
                all &= eval_predicate(q, before, after)?;
            }
            all
        }
        AnyOf(list) => {
            if list.is_empty() {
                return Err(VerifyError::EmptyComposite);
            }
            let mut any = false;
            for q in list {
                any |= eval_predicate(q, before, after)?;
            }
            any
        }
    })
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Canonical English rendering, also used as the success metric text.
impl fmt::Display for GoalPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use GoalPredicate::*;
        match self {
            OnTop { a, b } => write!(f, "the {a} is on top of the {b}"),
            Inside { a, b } => write!(f, "the {a} is inside the {b}"),
            Near { a, b, radius } => write!(f, "the {a} is within {} m of the {b}", num(*radius)),
            StateIs { a, state } => write!(f, "the {a} is {state}"),
            LeftOf { a, b } => write!(f, "the {a} is to the left of the {b}"),
            RightOf { a, b } => write!(f, "the {a} is to the right of the {b}"),
            InFrontOf { a, b } => write!(f, "the {a} is in front of the {b}"),
            Behind { a, b } => write!(f, "the {a} is behind the {b}"),
            MovedBy {
                a,
                direction,
                min_distance,
            } => write!(
                f,
                "the {a} has moved at least {} m along [{}, {}]",
                num(*min_distance),
                num(direction[0]),
                num(direction[1])
            ),
            PositionWithin { a, min, max } => write!(
                f,
                "the {a} is within x [{}, {}], y [{}, {}], z [{}, {}]",
                num(min[0]),
                num(max[0]),
                num(min[1]),
                num(max[1]),
                num(min[2]),
                num(max[2])
            ),
            AllOf(list) | AnyOf(list) => {
                let sep = if matches!(self, AllOf(_)) { " and " } else { " or " };
                for (i, q) in list.iter().enumerate() {
                    if i > 0 {
                        f.write_str(sep)?;
                    }
                    if matches!(q, AllOf(_) | AnyOf(_)) {
                        write!(f, "({q})")?;
                    } else {
                        write!(f, "{q}")?;
                    }
                }
                Ok(())
            }
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Outcome of every leaf, in order.
fn trace(
    p: &GoalPredicate,
    before: &SceneGraph,
    after: &SceneGraph,
    out: &mut Vec<(String, bool)>,
) -> Result<(), VerifyError> {
    match p {
        GoalPredicate::AllOf(list) | GoalPredicate::AnyOf(list) => {
            for q in list {
                trace(q, before, after, out)?;
            }
            Ok(())
        }
        leaf => {
            let ok = eval_predicate(leaf, before, after)?;
            out.push((leaf.to_string(), ok));
            Ok(())
        }
    }
}

/// Never fails: an unresolvable goal yields `not_sure` with the reason in
/// the reasoning text.
pub fn rule_verdict(goal: &GoalPredicate, before: &SceneGraph, after: &SceneGraph) -> Verdict {
    let success_metric = format!("{}.", capitalize(&goal.to_string()));
    let mut leaves = Vec::new();
    let result = trace(goal, before, after, &mut leaves)
        .and_then(|_| eval_predicate(goal, before, after));
    match result {
        Ok(ok) => {
            let mut parts: Vec<String> = leaves
                .iter()
                .map(|(text, v)| {
                    format!("{} {}", capitalize(text), if *v { "holds" } else { "does not hold" })
                })
                .collect();
            parts.push(if ok {
                "So the task has been accomplished.".to_string()
            } else {
                "So the task was not accomplished.".to_string()
            });
            Verdict {
                answer: if ok { Answer::Yes } else { Answer::No },
                success_metric,
                reasoning: parts.join(". "),
            }
        }
        Err(e) => Verdict {
            answer: Answer::NotSure,
            success_metric,
            reasoning: format!("The goal cannot be checked: {e}."),
        },
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// True positive rate in percent; `None` without positives.
    pub fn tpr(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn tnr(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn add(&mut self, predicted: Answer, actual: bool) {
        // Anything short of a confident yes counts as a negative prediction.
        match (predicted == Answer::Yes, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub counts: ConfusionCounts,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub accuracy: f64,
}

impl ConfusionMetrics {
    pub fn from_counts(counts: ConfusionCounts) -> Result<Self, VerifyError> {
        let accuracy = counts.accuracy().ok_or(VerifyError::EmptyInput)?;
        Ok(Self {
            counts,
            tpr: counts.tpr(),
            tnr: counts.tnr(),
            accuracy,
        })
    }

    pub fn tpr_text(&self) -> String {
        self.tpr.map(percent).unwrap_or_else(|| "n/a".into())
    }

    pub fn tnr_text(&self) -> String {
        self.tnr.map(percent).unwrap_or_else(|| "n/a".into())
    }

    pub fn accuracy_text(&self) -> String {
        percent(self.accuracy)
    }
}

pub fn confusion_metrics(pairs: &[(Answer, bool)]) -> Result<ConfusionMetrics, VerifyError> {
    let mut counts = ConfusionCounts::default();
    for (p, a) in pairs {
        counts.add(*p, *a);
    }
    ConfusionMetrics::from_counts(counts)
}

/// One CSV row of per-task inference metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub task: String,
    pub trials: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub tpr: String,
    pub tnr: String,
}

impl MetricsRow {
    pub fn new(task: &str, counts: ConfusionCounts) -> Self {
        let text = |v: Option<f64>| v.map(percent).unwrap_or_else(|| "n/a".into());
        Self {
            task: task.to_string(),
            trials: counts.total(),
            tp: counts.tp,
            fp: counts.fp,
            fn_: counts.fn_,
            tn: counts.tn,
            tpr: text(counts.tpr()),
            tnr: text(counts.tnr()),
        }
    }
}
