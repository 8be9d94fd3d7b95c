//! Forced-prefix layout decoding.
//!
//! Numerical constraints expand to one `category:` prefix per instance,
//! spatial constraints to one `name(position):` prefix per object. Each prefix
//! is appended to the running context as if the model had written it and the
//! backend only completes the coordinate tuple, so object names and counts are
//! fixed by the plan rather than by the model.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, GenerationRequest, TextBackend};
use crate::layout::{
    bucket_of, normalize_box, BoundingBox, Layout, PositionBucket, DEFAULT_CANVAS,
};
use crate::prompts::{
    negation_block, push_exemplars, ExemplarCount, PromptError, PromptLibrary,
    PLANNING_INSTRUCTION,
};
use crate::reasoning::{ConstraintSet, NumericalConstraint, SpatialConstraint, Task};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("constraint list must be non-empty")]
    NonEmptyRequired,
    #[error("box line parse failure: {0}")]
    ParseFailure(String),
    #[error("no parseable completion obtained for any of {prefixes} prefixes")]
    ExhaustedRetries { prefixes: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixEntry {
    pub name: String,
    pub position: Option<PositionBucket>,
}

impl PrefixEntry {
    /// The control string forced into the output, `apple:` or `apple(top-left):`.
    pub fn text(&self) -> String {
        match self.position {
            Some(p) => format!("{}({}):", self.name, p),
            None => format!("{}:", self.name),
        }
    }
}

impl fmt::Display for PrefixEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixPlan {
    pub kind: Task,
    pub entries: Vec<PrefixEntry>,
}

impl PrefixPlan {
    pub fn prefixes(&self) -> Vec<String> {
        self.entries.iter().map(PrefixEntry::text).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_constraints(set: &ConstraintSet) -> Result<Self, DecodeError> {
        match set {
            ConstraintSet::Numerical(c) => build_numeric_prefixes(c),
            ConstraintSet::Spatial(c) => build_spatial_prefixes(c),
        }
    }

    /// Human-readable object summary used in the planning prompt.
    pub fn summary(&self) -> String {
        match self.kind {
            Task::Numerical => {
                let mut groups: Vec<(&str, usize)> = Vec::new();
                for e in &self.entries {
                    match groups.last_mut() {
                        Some((name, n)) if *name == e.name => *n += 1,
                        _ => groups.push((&e.name, 1)),
                    }
                }
                groups
                    .iter()
                    .map(|(name, n)| format!("{name} x{n}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            }
            Task::Spatial => self
                .entries
                .iter()
                .map(|e| match e.position {
                    Some(p) => format!("{} ({p})", e.name),
                    None => e.name.clone(),
                })
                .collect::<Vec<_>>()
                .join(", "),
        }
    }
}

/// Each category `c` with quantity `q` contributes `q` consecutive `c:` prefixes.
pub fn build_numeric_prefixes(o: &[NumericalConstraint]) -> Result<PrefixPlan, DecodeError> {
    if o.is_empty() || o.iter().all(|c| c.quantity == 0) {
        return Err(DecodeError::NonEmptyRequired);
    }
    let entries = o
        .iter()
        .flat_map(|c| {
            std::iter::repeat_n(
                PrefixEntry {
                    name: c.category.clone(),
                    position: None,
                },
                c.quantity as usize,
            )
        })
        .collect();
    Ok(PrefixPlan {
        kind: Task::Numerical,
        entries,
    })
}

pub fn build_spatial_prefixes(o: &[SpatialConstraint]) -> Result<PrefixPlan, DecodeError> {
    if o.is_empty() {
        return Err(DecodeError::NonEmptyRequired);
    }
    let entries = o
        .iter()
        .map(|c| PrefixEntry {
            name: c.object_name.clone(),
            position: Some(c.position),
        })
        .collect();
    Ok(PrefixPlan {
        kind: Task::Spatial,
        entries,
    })
}

/// Planning prompt: instruction, exemplars, optional negation exemplar, then
/// the caption with its object summary. The decode context continues right
/// after the trailing `Layout:\n`.
pub fn build_planning_prompt(
    lib: &PromptLibrary,
    meta_prompt: &str,
    plan: &PrefixPlan,
    exemplar_count: ExemplarCount,
    include_negation: bool,
) -> Result<String, DecodeError> {
    let exemplars = PromptLibrary::take("planning", &lib.planning, exemplar_count)?;
    let mut out = String::with_capacity(2048);
    out.push_str(PLANNING_INSTRUCTION);
    out.push_str("\n\n");
    push_exemplars(&mut out, exemplars);
    if include_negation {
        out.push_str(&negation_block(&lib.negation));
    }
    out.push_str("Caption: ");
    out.push_str(meta_prompt.trim());
    out.push_str("\nObjects: ");
    out.push_str(&plan.summary());
    out.push_str("\nLayout:\n");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub max_retries_per_box: u32,
    pub coordinate_range: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    pub enforce_spatial_bucket: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            max_retries_per_box: 3,
            coordinate_range: DEFAULT_CANVAS,
            temperature: 0.0,
            max_tokens: 24,
            enforce_spatial_bucket: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Count {
        category: String,
        expected: u32,
        got: u32,
    },
    Bucket {
        index: usize,
        name: String,
        expected: PositionBucket,
        got: PositionBucket,
    },
    Name {
        index: usize,
        expected: String,
        got: String,
    },
    Missing {
        index: usize,
        name: String,
    },
    Extra {
        index: usize,
        name: String,
    },
    /// No parseable box for this prefix; a fallback box was used.
    Unparseable {
        index: usize,
        prefix: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Count { category, expected, got } => {
                write!(f, "{category}: expected {expected}, got {got}")
            }
            Violation::Bucket { index, name, expected, got } => {
                write!(f, "#{index} {name}: expected {expected}, got {got}")
            }
            Violation::Name { index, expected, got } => {
                write!(f, "#{index}: expected {expected}, got {got}")
            }
            Violation::Missing { index, name } => write!(f, "#{index} {name}: missing"),
            Violation::Extra { index, name } => write!(f, "#{index} {name}: not in constraints"),
            Violation::Unparseable { index, prefix } => {
                write!(f, "#{index} {prefix} no parseable box, fallback used")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeReport {
    pub layout: Layout,
    pub violations: Vec<Violation>,
    pub retries_used: u32,
    /// Raw backend completions in call order.
    pub completions: Vec<String>,
}

fn box_tuple() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\(\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*\)").expect("valid regex")
    })
}

/// Reads the first `(a,b,c,d)` integer tuple in `text`.
pub fn parse_box_line(text: &str, coordinate_range: u32) -> Result<[u32; 4], DecodeError> {
    let caps = box_tuple()
        .captures(text)
        .ok_or_else(|| DecodeError::ParseFailure(format!("no (x1,y1,x2,y2) tuple in {text:?}")))?;
    let mut out = [0u32; 4];
    for (slot, m) in out.iter_mut().zip(caps.iter().skip(1)) {
        let s = m.expect("four groups").as_str();
        let v: u32 = s
            .parse()
            .map_err(|_| DecodeError::ParseFailure(format!("coordinate {s} overflows")))?;
        if v > coordinate_range {
            return Err(DecodeError::ParseFailure(format!(
                "coordinate {v} outside [0, {coordinate_range}]"
            )));
        }
        *slot = v;
    }
    Ok(out)
}

/// Completions cut at a `)` stop token lose the closing parenthesis.
fn close_tuple(text: &str) -> String {
    match text.rfind('(') {
        Some(open) if !text[open..].contains(')') => format!("{})", text.trim_end()),
        _ => text.to_string(),
    }
}

fn parse_completion(text: &str, range: u32, canvas: u32) -> Option<([u32; 4], BoundingBox)> {
    let raw = parse_box_line(&close_tuple(text), range).ok()?;
    let bbox = normalize_box(raw, canvas).ok()?;
    Some((raw, bbox))
}

fn fallback_box(entry: &PrefixEntry) -> BoundingBox {
    entry.position.unwrap_or(PositionBucket::Center).cell_box()
}

/// Runs the forced-prefix loop: one backend completion (plus retries) per
/// prefix, in plan order, with accepted lines appended to the context so later
/// boxes see earlier ones.
pub fn decode_layout(
    backend: &dyn TextBackend,
    meta_prompt: &str,
    planning_prompt: &str,
    plan: &PrefixPlan,
    config: &DecodeConfig,
) -> Result<DecodeReport, DecodeError> {
    if plan.is_empty() {
        return Err(DecodeError::NonEmptyRequired);
    }
    let canvas = config.coordinate_range.max(1);
    let mut layout = Layout::new(meta_prompt, canvas);
    let mut violations = Vec::new();
    let mut completions = Vec::new();
    let mut retries_used = 0u32;
    let mut any_parsed = false;
    let mut context = planning_prompt.to_string();

    for (index, entry) in plan.entries.iter().enumerate() {
        let prefix = entry.text();
        let mut last: Option<([u32; 4], BoundingBox)> = None;
        let mut accepted = false;
        for attempt in 0..=config.max_retries_per_box {
            if attempt > 0 {
                retries_used += 1;
            }
            let req = GenerationRequest::new(format!("{context}{prefix}"))?
                .with_temperature(config.temperature)
                .with_max_tokens(config.max_tokens);
            let resp = backend.complete(&req)?;
            let parsed = parse_completion(&resp.completion, config.coordinate_range, canvas);
            completions.push(resp.completion);
            let Some((raw, bbox)) = parsed else {
                continue;
            };
            any_parsed = true;
            last = Some((raw, bbox));
            let bucket_ok = match (config.enforce_spatial_bucket, entry.position) {
                (true, Some(p)) => bucket_of(&bbox) == p,
                _ => true,
            };
            if bucket_ok {
                accepted = true;
                break;
            }
        }

        let (raw, bbox) = match last {
            Some(found) => {
                if !accepted {
                    let expected = entry.position.expect("only spatial entries can mismatch");
                    violations.push(Violation::Bucket {
                        index,
                        name: entry.name.clone(),
                        expected,
                        got: bucket_of(&found.1),
                    });
                }
                found
            }
            None => {
                violations.push(Violation::Unparseable {
                    index,
                    prefix: prefix.clone(),
                });
                let b = fallback_box(entry);
                (b.denormalize(canvas), b)
            }
        };
        context.push_str(&format!(
            "{prefix} ({},{},{},{})\n",
            raw[0], raw[1], raw[2], raw[3]
        ));
        layout
            .add(&entry.name, bbox)
            .expect("plan names are non-empty");
    }

    if !any_parsed {
        return Err(DecodeError::ExhaustedRetries {
            prefixes: plan.len(),
        });
    }
    Ok(DecodeReport {
        layout,
        violations,
        retries_used,
        completions,
    })
}

fn free_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*([A-Za-z][A-Za-z '\-]*?)\s*(?:\([A-Za-z \-]*\))?\s*:\s*(\(.*)$")
            .expect("valid regex")
    })
}

/// Reads a free-form `name: (x1,y1,x2,y2)` line.
pub fn parse_layout_line(line: &str, coordinate_range: u32) -> Result<(String, [u32; 4]), DecodeError> {
    let caps = free_line()
        .captures(line)
        .ok_or_else(|| DecodeError::ParseFailure(format!("not a `name: (box)` line: {line:?}")))?;
    let coords = parse_box_line(&close_tuple(&caps[2]), coordinate_range)?;
    Ok((caps[1].to_string(), coords))
}

/// Baseline decode with no prefix forcing: the backend writes whole
/// `name: (box)` lines until it emits an empty line or `max_objects` is hit.
pub fn decode_unconstrained(
    backend: &dyn TextBackend,
    meta_prompt: &str,
    planning_prompt: &str,
    config: &DecodeConfig,
    max_objects: usize,
) -> Result<DecodeReport, DecodeError> {
    let canvas = config.coordinate_range.max(1);
    let mut layout = Layout::new(meta_prompt, canvas);
    let mut completions = Vec::new();
    let mut violations = Vec::new();
    let mut context = planning_prompt.to_string();
    for index in 0..max_objects {
        let req = GenerationRequest::new(context.clone())?
            .with_stop(vec!["\n".into()])
            .with_temperature(config.temperature)
            .with_max_tokens(config.max_tokens + 8);
        let resp = backend.complete(&req)?;
        let line = resp.completion.trim().to_string();
        completions.push(resp.completion);
        if line.is_empty() {
            break;
        }
        match parse_layout_line(&line, config.coordinate_range)
            .ok()
            .and_then(|(name, raw)| normalize_box(raw, canvas).ok().map(|b| (name, b)))
        {
            Some((name, bbox)) => {
                if layout.add(&name, bbox).is_err() {
                    violations.push(Violation::Unparseable { index, prefix: line.clone() });
                }
            }
            None => violations.push(Violation::Unparseable {
                index,
                prefix: line.clone(),
            }),
        }
        context.push_str(&line);
        context.push('\n');
    }
    Ok(DecodeReport {
        layout,
        violations,
        retries_used: 0,
        completions,
    })
}

/// Compares a layout against its constraints. Empty iff fully satisfied.
pub fn validate_layout_against_constraints(
    layout: &Layout,
    constraints: &ConstraintSet,
) -> Vec<Violation> {
    let mut out = Vec::new();
    match constraints {
        ConstraintSet::Numerical(items) => {
            let counts = layout.category_counts();
            for c in items {
                let got = counts.get(&c.category).copied().unwrap_or(0) as u32;
                if got != c.quantity {
                    out.push(Violation::Count {
                        category: c.category.clone(),
                        expected: c.quantity,
                        got,
                    });
                }
            }
            for (name, n) in &counts {
                if !items.iter().any(|c| &c.category == name) {
                    out.push(Violation::Count {
                        category: name.clone(),
                        expected: 0,
                        got: *n as u32,
                    });
                }
            }
        }
        ConstraintSet::Spatial(items) => {
            let objects = layout.objects();
            for (index, c) in items.iter().enumerate() {
                let Some(obj) = objects.get(index) else {
                    out.push(Violation::Missing {
                        index,
                        name: c.object_name.clone(),
                    });
                    continue;
                };
                if obj.name != c.object_name {
                    out.push(Violation::Name {
                        index,
                        expected: c.object_name.clone(),
                        got: obj.name.clone(),
                    });
                }
                let got = bucket_of(&obj.bbox);
                if got != c.position {
                    out.push(Violation::Bucket {
                        index,
                        name: c.object_name.clone(),
                        expected: c.position,
                        got,
                    });
                }
            }
            for (index, obj) in objects.iter().enumerate().skip(items.len()) {
                out.push(Violation::Extra {
                    index,
                    name: obj.name.clone(),
                });
            }
        }
    }
    out
}
