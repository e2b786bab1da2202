use std::collections::HashSet;
use std::fmt;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::verifier::{Answer, Verdict};
use crate::world::{PrimitiveCall, PrimitiveKind};

use super::{BrainError, TaskOrigin, TaskSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub subtask: String,
    pub calls: Vec<PrimitiveCall>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub steps: Vec<Step>,
}

impl Decomposition {
    pub fn calls(&self) -> impl Iterator<Item = &PrimitiveCall> {
        self.steps.iter().flat_map(|s| s.calls.iter())
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, " - {}. {} | [", self.index, self.subtask)?;
        for (i, c) in self.calls.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str("]")
    }
}

/// Step lines in the answer grammar, one per line.
pub fn render_decomposition(d: &Decomposition) -> String {
    d.steps.iter().map(|s| format!("{s}\n")).collect()
}

fn mentions_primitive(text: &str) -> Option<&'static str> {
    PrimitiveKind::ALL.iter().map(|k| k.name()).find(|name| {
        // Single-word names ("Pick", "Push", "Press") are ordinary English
        // and only count when written as a call.
        let is_camel = name.chars().filter(|c| c.is_ascii_uppercase()).count() > 1;
        text.contains(&format!("{name}(")) || (is_camel && text.contains(name))
    })
}

/// One task per "- " line. Lines that break the task invariants are
/// dropped; duplicates keep their first occurrence.
pub fn parse_proposals(
    text: &str,
    scene_id: &str,
    origin: TaskOrigin,
) -> Result<Vec<TaskSpec>, BrainError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in text.lines() {
        let Some(desc) = line.trim_start().strip_prefix("- ") else {
            continue;
        };
        let desc = desc.trim();
        if desc.is_empty() {
            debug!("dropping empty task line");
            continue;
        }
        if let Some(name) = mentions_primitive(desc) {
            debug!("dropping task {desc:?}: names primitive {name}");
            continue;
        }
        if seen.insert(desc.to_string()) {
            out.push(TaskSpec::new(desc, scene_id, origin));
        }
    }
    if out.is_empty() {
        return Err(BrainError::NoTasksFound);
    }
    Ok(out)
}

/// Splits on `sep` where parentheses and brackets are balanced. Quotes are
/// ignored on purpose so an unterminated string cannot swallow the rest of
/// the line.
fn split_top(s: &str, sep: char) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            c if c == sep && depth == 0 => {
                out.push(&s[start..i]);
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

fn string_arg(s: &str) -> Option<String> {
    let s = s.trim();
    let s = s.strip_prefix(['\'', '"']).unwrap_or(s);
    let s = s.strip_suffix(['\'', '"']).unwrap_or(s);
    let s = s.trim();
    if s.is_empty() || s.contains(['\'', '"', '(', ')', '[', ']']) {
        None
    } else {
        Some(s.to_string())
    }
}

fn number(s: &str) -> Option<f64> {
    let v: f64 = s.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

fn vector<const N: usize>(s: &str) -> Option<[f64; N]> {
    let inner = s.trim().strip_prefix('[')?.strip_suffix(']')?;
    let parts: Vec<&str> = inner.split(',').collect();
    if parts.len() != N {
        return None;
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = number(p)?;
    }
    Some(out)
}

fn parse_call(text: &str) -> Result<PrimitiveCall, BrainError> {
    let text = text.trim();
    let malformed = || BrainError::MalformedStep {
        line: 0,
        text: text.to_string(),
    };
    let open = text.find('(').ok_or_else(malformed)?;
    let name = text[..open].trim();
    let args = text[open + 1..].strip_suffix(')').ok_or_else(malformed)?;
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(malformed());
    }
    let kind = PrimitiveKind::from_name(name)
        .ok_or_else(|| BrainError::UnknownPrimitive(name.to_string()))?;
    let parts: Vec<&str> = split_top(args, ',');
    let bad = |expected: &'static str| BrainError::BadArity {
        name: name.to_string(),
        expected,
        got: args.trim().to_string(),
    };
    let call = match kind {
        PrimitiveKind::PlaceAt => {
            const E: &str = "one position [x, y, z]";
            match parts.as_slice() {
                [p] => PrimitiveCall::PlaceAt {
                    pos: vector::<3>(p).ok_or_else(|| bad(E))?,
                },
                _ => return Err(bad(E)),
            }
        }
        PrimitiveKind::Push => {
            const E: &str = "an object name, a direction [dx, dy] and a literal distance";
            match parts.as_slice() {
                [o, d, l] => PrimitiveCall::Push {
                    obj: string_arg(o).ok_or_else(|| bad(E))?,
                    direction: vector::<2>(d).ok_or_else(|| bad(E))?,
                    distance: number(l).ok_or_else(|| bad(E))?,
                },
                _ => return Err(bad(E)),
            }
        }
        _ => {
            const E: &str = "one object name";
            let obj = match parts.as_slice() {
                [o] => string_arg(o).ok_or_else(|| bad(E))?,
                _ => return Err(bad(E)),
            };
            match kind {
                PrimitiveKind::Pick => PrimitiveCall::Pick { obj },
                PrimitiveKind::PlaceOn => PrimitiveCall::PlaceOn { obj },
                PrimitiveKind::PrismaticJointOpen => PrimitiveCall::PrismaticJointOpen { obj },
                PrimitiveKind::PrismaticJointClose => PrimitiveCall::PrismaticJointClose { obj },
                PrimitiveKind::Press => PrimitiveCall::Press { obj },
                PrimitiveKind::RevoluteJointOpen => PrimitiveCall::RevoluteJointOpen { obj },
                PrimitiveKind::RevoluteJointClose => PrimitiveCall::RevoluteJointClose { obj },
                PrimitiveKind::PlaceAt | PrimitiveKind::Push => unreachable!(),
            }
        }
    };
    call.validate().map_err(|e| BrainError::BadArity {
        name: name.to_string(),
        expected: "valid arguments",
        got: e.to_string(),
    })?;
    Ok(call)
}

fn parse_step_line(body: &str, expected_index: usize) -> Option<Result<Step, BrainError>> {
    let (num, rest) = body.split_once(". ")?;
    let index: usize = num.trim().parse().ok()?;
    if index != expected_index {
        return None;
    }
    let (subtask, calls) = rest.rsplit_once(" | ")?;
    let inner = calls.trim().strip_prefix('[')?.strip_suffix(']')?;
    let subtask = subtask.trim();
    if subtask.is_empty() || inner.trim().is_empty() {
        return None;
    }
    let calls: Result<Vec<_>, _> = split_top(inner, ';').into_iter().map(parse_call).collect();
    Some(calls.map(|calls| Step {
        index,
        subtask: subtask.to_string(),
        calls,
    }))
}

/// Parses step lines ("- 1. subtask | [Call(..); ..]"). Blank lines are
/// skipped and a closing fence ends the list; anything else is an error.
/// `first_line` is the 1-based line number of `text` within its source.
pub fn parse_steps(text: &str, first_line: usize) -> Result<Decomposition, BrainError> {
    let mut steps = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line_no = first_line + k;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with("```") {
            break;
        }
        let malformed = || BrainError::MalformedStep {
            line: line_no,
            text: line.to_string(),
        };
        let body = line.strip_prefix("- ").ok_or_else(malformed)?;
        match parse_step_line(body, steps.len() + 1) {
            Some(Ok(step)) => steps.push(step),
            Some(Err(BrainError::MalformedStep { .. })) | None => return Err(malformed()),
            Some(Err(e)) => return Err(e),
        }
    }
    if steps.is_empty() {
        return Err(BrainError::MalformedStep {
            line: first_line,
            text: "no steps".into(),
        });
    }
    Ok(Decomposition { steps })
}

/// Index of the line holding the "answer:" header, plus any text after it.
fn answer_header(text: &str) -> Option<(usize, &str)> {
    text.lines()
        .enumerate()
        .filter_map(|(i, l)| l.trim_start().strip_prefix("answer:").map(|r| (i, r)))
        .last()
}

pub fn parse_decomposition(text: &str) -> Result<Decomposition, BrainError> {
    let (at, _) = answer_header(text).ok_or(BrainError::MissingAnswerSection)?;
    let rest: Vec<&str> = text.lines().skip(at + 1).collect();
    parse_steps(&rest.join("\n"), at + 2)
}

fn answer_token(s: &str) -> Answer {
    let words: Vec<String> = s
        .split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric() && c != '_')
                .to_lowercase()
        })
        .collect();
    match words.first().map(String::as_str) {
        Some("yes") => Answer::Yes,
        Some("no") => Answer::No,
        _ => Answer::NotSure,
    }
}

/// The response continues a prompt ending in "success metric: ", so the
/// metric header itself is optional.
pub fn parse_verdict(text: &str) -> Result<Verdict, BrainError> {
    let (at, inline) = answer_header(text).ok_or(BrainError::MissingAnswerSection)?;
    let answer_line = if inline.trim().is_empty() {
        text.lines().skip(at + 1).find(|l| !l.trim().is_empty()).unwrap_or("")
    } else {
        inline
    };
    let lines: Vec<&str> = text.lines().take(at).collect();
    let head = lines.join("\n");
    let (metric, reasoning) = match head.find("reasoning:") {
        Some(r) => (&head[..r], &head[r + "reasoning:".len()..]),
        None => (head.as_str(), ""),
    };
    let metric = match metric.find("success metric:") {
        Some(m) => &metric[m + "success metric:".len()..],
        None => metric,
    };
    Ok(Verdict {
        answer: answer_token(answer_line),
        success_metric: metric.trim().to_string(),
        reasoning: reasoning.trim().to_string(),
    })
}
