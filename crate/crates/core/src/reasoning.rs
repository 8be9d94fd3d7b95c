//! Stage-one reasoning: prompt construction and parsing of the model's answer
//! into numerical or spatial constraints.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{canonical_name, PositionBucket};
use crate::prompts::{
    push_exemplars, ExemplarCount, PromptError, PromptLibrary, NUMERICAL_INSTRUCTION,
    SPATIAL_INSTRUCTION,
};

#[derive(Debug, Error)]
pub enum ReasoningError {
    #[error("could not parse reasoning answer: {0}")]
    ParseFailure(String),
    #[error("constraint set is empty")]
    Empty,
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Numerical,
    Spatial,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Numerical => "numerical",
            Task::Spatial => "spatial",
        })
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "numerical" | "num" | "counting" => Ok(Task::Numerical),
            "spatial" | "spa" => Ok(Task::Spatial),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningRequest {
    pub meta_prompt: String,
    pub task: Task,
    pub exemplar_count: ExemplarCount,
    /// Only meaningful for the planning prompt; ignored here.
    pub include_negation: bool,
}

impl ReasoningRequest {
    pub fn new(meta_prompt: impl Into<String>, task: Task) -> Self {
        Self {
            meta_prompt: meta_prompt.into(),
            task,
            exemplar_count: ExemplarCount::default(),
            include_negation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumericalConstraint {
    pub category: String,
    pub quantity: u32,
}

impl NumericalConstraint {
    pub fn new(category: &str, quantity: u32) -> Self {
        Self {
            category: canonical_name(category),
            quantity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialConstraint {
    pub object_name: String,
    pub position: PositionBucket,
}

impl SpatialConstraint {
    pub fn new(object_name: &str, position: PositionBucket) -> Self {
        Self {
            object_name: canonical_name(object_name),
            position,
        }
    }
}

/// Parsed stage-one output. Never empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "constraints", rename_all = "lowercase")]
pub enum ConstraintSet {
    Numerical(Vec<NumericalConstraint>),
    Spatial(Vec<SpatialConstraint>),
}

impl ConstraintSet {
    pub fn numerical(items: Vec<NumericalConstraint>) -> Result<Self, ReasoningError> {
        if items.is_empty() {
            return Err(ReasoningError::Empty);
        }
        Ok(Self::Numerical(merge_numerical(items)))
    }

    pub fn spatial(items: Vec<SpatialConstraint>) -> Result<Self, ReasoningError> {
        if items.is_empty() {
            return Err(ReasoningError::Empty);
        }
        Ok(Self::Spatial(items))
    }

    pub fn task(&self) -> Task {
        match self {
            ConstraintSet::Numerical(_) => Task::Numerical,
            ConstraintSet::Spatial(_) => Task::Spatial,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ConstraintSet::Numerical(v) => v.len(),
            ConstraintSet::Spatial(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Renders the stage-one prompt: instruction, `exemplar_count` exemplars of the
/// task kind, then the caption awaiting an answer.
pub fn build_reasoning_prompt(
    lib: &PromptLibrary,
    req: &ReasoningRequest,
) -> Result<String, ReasoningError> {
    if req.include_negation {
        log::warn!("include_negation has no effect on the reasoning prompt");
    }
    let (instruction, exemplars) = match req.task {
        Task::Numerical => (
            NUMERICAL_INSTRUCTION,
            PromptLibrary::take("numerical", &lib.numerical, req.exemplar_count)?,
        ),
        Task::Spatial => (
            SPATIAL_INSTRUCTION,
            PromptLibrary::take("spatial", &lib.spatial, req.exemplar_count)?,
        ),
    };
    let mut out = String::with_capacity(1024);
    out.push_str(instruction);
    out.push_str("\n\n");
    push_exemplars(&mut out, exemplars);
    out.push_str("Caption: ");
    out.push_str(req.meta_prompt.trim());
    out.push_str("\nAnswer:");
    Ok(out)
}

fn number_word(w: &str) -> Option<u32> {
    const WORDS: [&str; 13] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
        "eleven", "twelve",
    ];
    match w {
        "a" | "an" => Some(1),
        _ => WORDS.iter().position(|x| *x == w).map(|i| i as u32),
    }
}

fn numerical_item() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(?i)([0-9]+|[a-z]+)\s+([a-z][a-z '\-]*?)\s*\.?$").expect("valid regex")
    })
}

/// Strips an `Answer:`-style label from the start of an item.
fn strip_label(item: &str) -> &str {
    match item.rsplit_once(':') {
        Some((_, rest)) => rest.trim(),
        None => item.trim(),
    }
}

/// Parses a `"5 fire hydrant, 4 cell phone"` answer. Duplicate categories are
/// summed and keep their first position.
pub fn parse_numerical(text: &str) -> Result<Vec<NumericalConstraint>, ReasoningError> {
    let mut out = Vec::new();
    for item in text.split([',', ';', '\n']) {
        let item = strip_label(item);
        if item.is_empty() {
            continue;
        }
        let Some(caps) = numerical_item().captures(item) else {
            continue;
        };
        let qty_token = caps[1].to_lowercase();
        let quantity = match qty_token.parse::<u32>() {
            Ok(q) => q,
            Err(_) => match number_word(&qty_token) {
                Some(q) => q,
                None => continue,
            },
        };
        let category = canonical_name(caps[2].trim_matches(|c: char| c == '-' || c == '\''));
        if quantity == 0 || category.is_empty() {
            continue;
        }
        out.push(NumericalConstraint { category, quantity });
    }
    if out.is_empty() {
        return Err(ReasoningError::ParseFailure(format!(
            "no `<quantity> <category>` pair in {text:?}"
        )));
    }
    Ok(merge_numerical(out))
}

fn merge_numerical(items: Vec<NumericalConstraint>) -> Vec<NumericalConstraint> {
    let mut merged: Vec<NumericalConstraint> = Vec::with_capacity(items.len());
    for c in items {
        match merged.iter_mut().find(|m| m.category == c.category) {
            Some(m) => m.quantity += c.quantity,
            None => merged.push(c),
        }
    }
    merged
}

/// Canonical `"q c, q c"` rendering, the inverse of [`parse_numerical`].
pub fn render_numerical(items: &[NumericalConstraint]) -> String {
    items
        .iter()
        .map(|c| format!("{} {}", c.quantity, c.category))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Parses `"dog, left; person, center;"` into ordered spatial constraints.
pub fn parse_spatial(text: &str) -> Result<Vec<SpatialConstraint>, ReasoningError> {
    let mut out = Vec::new();
    for raw in text.split([';', '\n']) {
        let item = raw.trim();
        if item.is_empty() {
            continue;
        }
        // a leading "Answer:" label only ever precedes the first item
        let item = if out.is_empty() { strip_label(item) } else { item };
        if item.is_empty() {
            continue;
        }
        let (name, position) = item.split_once(',').ok_or_else(|| {
            ReasoningError::ParseFailure(format!("item {item:?} is not `<object>, <position>`"))
        })?;
        let position: PositionBucket = position
            .parse()
            .map_err(|e| ReasoningError::ParseFailure(format!("{e}")))?;
        let object_name = canonical_name(name);
        if object_name.is_empty() {
            return Err(ReasoningError::ParseFailure(format!("empty object in {item:?}")));
        }
        out.push(SpatialConstraint {
            object_name,
            position,
        });
    }
    if out.is_empty() {
        return Err(ReasoningError::ParseFailure(format!(
            "no `<object>, <position>;` item in {text:?}"
        )));
    }
    Ok(out)
}

pub fn render_spatial(items: &[SpatialConstraint]) -> String {
    items
        .iter()
        .map(|c| format!("{}, {};", c.object_name, c.position))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses a raw answer for the given task.
pub fn parse_constraints(task: Task, text: &str) -> Result<ConstraintSet, ReasoningError> {
    match task {
        Task::Numerical => ConstraintSet::numerical(parse_numerical(text)?),
        Task::Spatial => ConstraintSet::spatial(parse_spatial(text)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::count_exemplars;
    use proptest::prelude::*;

    fn nc(c: &str, q: u32) -> NumericalConstraint {
        NumericalConstraint::new(c, q)
    }

    #[test]
    fn numerical_prompt_contains_fire_hydrant_exemplar() {
        let lib = PromptLibrary::builtin();
        let mut req = ReasoningRequest::new("three dogs and a cat", Task::Numerical);
        req.exemplar_count = ExemplarCount::new(1).unwrap();
        let p = build_reasoning_prompt(&lib, &req).unwrap();
        assert_eq!(count_exemplars(&p), 1);
        assert!(p.lines().any(|l| l == "Answer: 5 fire hydrant, 4 cell phone"));
        assert!(p.starts_with(NUMERICAL_INSTRUCTION));
        assert!(p.ends_with("Caption: three dogs and a cat\nAnswer:"));
    }

    #[test]
    fn spatial_prompt_contains_dog_exemplar() {
        let lib = PromptLibrary::builtin();
        let mut req = ReasoningRequest::new("a cat left of a dog", Task::Spatial);
        req.exemplar_count = ExemplarCount::new(1).unwrap();
        let p = build_reasoning_prompt(&lib, &req).unwrap();
        assert!(p
            .lines()
            .any(|l| l == "Answer: dog, left; person, center; cat, center; airplane, right;"));
    }

    #[test]
    fn exemplar_count_is_honoured() {
        let lib = PromptLibrary::builtin();
        for task in [Task::Numerical, Task::Spatial] {
            for n in 1..=4 {
                let mut req = ReasoningRequest::new("x", task);
                req.exemplar_count = ExemplarCount::new(n).unwrap();
                let p = build_reasoning_prompt(&lib, &req).unwrap();
                assert_eq!(count_exemplars(&p), n);
                assert_eq!(p, build_reasoning_prompt(&lib, &req).unwrap());
            }
        }
    }

    #[test]
    fn negation_flag_does_not_change_reasoning_prompt() {
        let lib = PromptLibrary::builtin();
        let mut req = ReasoningRequest::new("x", Task::Numerical);
        let a = build_reasoning_prompt(&lib, &req).unwrap();
        req.include_negation = true;
        assert_eq!(a, build_reasoning_prompt(&lib, &req).unwrap());
    }

    #[test]
    fn short_library_is_an_error() {
        let mut lib = PromptLibrary::builtin();
        lib.numerical.truncate(1);
        let mut req = ReasoningRequest::new("x", Task::Numerical);
        req.exemplar_count = ExemplarCount::new(3).unwrap();
        assert!(matches!(
            build_reasoning_prompt(&lib, &req),
            Err(ReasoningError::Prompt(PromptError::NotEnoughExemplars { .. }))
        ));
    }

    #[test]
    fn parse_numerical_examples() {
        assert_eq!(
            parse_numerical("5 fire hydrant, 4 cell phone").unwrap(),
            vec![nc("fire hydrant", 5), nc("cell phone", 4)]
        );
        assert_eq!(parse_numerical("1 apple").unwrap(), vec![nc("apple", 1)]);
        assert_eq!(parse_numerical("2 apples, 3 apple").unwrap(), vec![nc("apple", 5)]);
    }

    #[test]
    fn parse_numerical_tolerates_labels_and_words() {
        assert_eq!(
            parse_numerical(" Answer: two Dogs, 1 cat.\n").unwrap(),
            vec![nc("dog", 2), nc("cat", 1)]
        );
        assert!(matches!(
            parse_numerical("I cannot answer that"),
            Err(ReasoningError::ParseFailure(_))
        ));
        assert!(parse_numerical("").is_err());
        assert!(parse_numerical("0 apples").is_err());
    }

    #[test]
    fn parse_spatial_examples() {
        let got = parse_spatial("dog, left; person, center; cat, center; airplane, right;").unwrap();
        let want = vec![
            SpatialConstraint::new("dog", PositionBucket::Left),
            SpatialConstraint::new("person", PositionBucket::Center),
            SpatialConstraint::new("cat", PositionBucket::Center),
            SpatialConstraint::new("airplane", PositionBucket::Right),
        ];
        assert_eq!(got, want);
        assert_eq!(
            parse_spatial("apple, top-left;").unwrap(),
            vec![SpatialConstraint::new("apple", PositionBucket::TopLeft)]
        );
        assert!(matches!(
            parse_spatial("apple, underneath;"),
            Err(ReasoningError::ParseFailure(_))
        ));
        assert!(parse_spatial("  ;  ").is_err());
    }

    #[test]
    fn parse_spatial_keeps_duplicates_in_order() {
        let got = parse_spatial("Answer: dog, left; dog, right;").unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].position, PositionBucket::Left);
        assert_eq!(got[1].position, PositionBucket::Right);
    }

    #[test]
    fn constraint_sets_are_never_empty() {
        assert!(matches!(ConstraintSet::numerical(vec![]), Err(ReasoningError::Empty)));
        assert!(matches!(ConstraintSet::spatial(vec![]), Err(ReasoningError::Empty)));
    }

    fn category() -> impl Strategy<Value = String> {
        prop::sample::select(vec![
            "apple", "dog", "fire hydrant", "cell phone", "teddy bear", "bench", "person", "cup",
            "sheep", "zebra",
        ])
        .prop_map(str::to_string)
    }

    proptest! {
        #[test]
        fn numerical_render_parse_round_trip(
            items in prop::collection::vec((category(), 1u32..20), 1..6)
        ) {
            let mut set: Vec<NumericalConstraint> = Vec::new();
            for (c, q) in items {
                if !set.iter().any(|s| s.category == c) {
                    set.push(NumericalConstraint { category: c, quantity: q });
                }
            }
            prop_assert_eq!(parse_numerical(&render_numerical(&set)).unwrap(), set);
        }

        #[test]
        fn spatial_render_parse_round_trip(
            items in prop::collection::vec((category(), 0usize..9), 1..6)
        ) {
            let set: Vec<SpatialConstraint> = items
                .into_iter()
                .map(|(c, b)| SpatialConstraint { object_name: c, position: PositionBucket::ALL[b] })
                .collect();
            prop_assert_eq!(parse_spatial(&render_spatial(&set)).unwrap(), set);
        }
    }
}
