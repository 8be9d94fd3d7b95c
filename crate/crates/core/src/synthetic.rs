//! A deterministic offline stand-in for a planning language model.
//!
//! [`SyntheticPlanner`] answers the three kinds of request the pipeline makes:
//!
//! * reasoning prompts (ending in `Answer:`) get the answer registered for the
//!   caption, or an empty line if none is registered;
//! * forced prefixes (`apple:` / `dog(left):`) get a coordinate tuple, placed
//!   inside the requested cell unless the request is picked for
//!   non-compliance;
//! * free-running planning contexts get whole `name: (box)` lines, with the
//!   total object count drifting by one on a fraction of captions.
//!
//! Every choice is drawn from a generator seeded by the request context, so
//! the same request always gets the same completion.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::backend::{BackendError, GenerationRequest, GenerationResponse, TextBackend};
use crate::layout::{PositionBucket, DEFAULT_CANVAS};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SyntheticPlanner {
    answers: BTreeMap<String, String>,
    /// Probability that a positioned box lands in a different cell.
    pub noncompliance: f64,
    /// Probability that a free-running layout has one object too many or too few.
    pub control_drift: f64,
    pub canvas: u32,
}

impl SyntheticPlanner {
    pub fn new() -> Self {
        Self {
            answers: BTreeMap::new(),
            noncompliance: 0.0,
            control_drift: 0.3,
            canvas: DEFAULT_CANVAS,
        }
    }

    pub fn with_answer(mut self, caption: impl Into<String>, answer: impl Into<String>) -> Self {
        self.answers.insert(caption.into(), answer.into());
        self
    }

    pub fn with_noncompliance(mut self, p: f64) -> Self {
        self.noncompliance = p.clamp(0.0, 1.0);
        self
    }

    pub fn with_control_drift(mut self, p: f64) -> Self {
        self.control_drift = p.clamp(0.0, 1.0);
        self
    }

    fn respond(&self, context: &str) -> String {
        let mut rng = rng_for(context);
        if context.ends_with("Answer:") {
            let caption = last_field(context, "Caption: ").unwrap_or_default();
            return match self.answers.get(caption) {
                Some(a) => format!(" {a}"),
                None => String::new(),
            };
        }
        if context.ends_with(':') {
            let line = context.rsplit('\n').next().unwrap_or_default();
            let position = line
                .strip_suffix("):")
                .and_then(|rest| rest.rsplit_once('('))
                .and_then(|(_, p)| p.parse::<PositionBucket>().ok());
            return format!(" {}", self.box_text(&mut rng, position));
        }
        self.free_line(context, &mut rng)
    }

    fn box_text(&self, rng: &mut ChaCha8Rng, position: Option<PositionBucket>) -> String {
        let (x1, y1, x2, y2) = match position {
            Some(p) => {
                let p = if rng.random_bool(self.noncompliance) {
                    let shift = rng.random_range(1..9);
                    PositionBucket::ALL[(p as usize + shift) % 9]
                } else {
                    p
                };
                let (col, row) = p.cell();
                let (ox, oy) = (col as f64 / 3.0, row as f64 / 3.0);
                let x1 = ox + rng.random_range(0.01..0.1);
                let y1 = oy + rng.random_range(0.01..0.1);
                (
                    x1,
                    y1,
                    x1 + rng.random_range(0.08..0.2),
                    y1 + rng.random_range(0.08..0.2),
                )
            }
            None => {
                let w = rng.random_range(0.1..0.4);
                let h = rng.random_range(0.1..0.4);
                let x1 = rng.random_range(0.0..1.0 - w);
                let y1 = rng.random_range(0.0..1.0 - h);
                (x1, y1, x1 + w, y1 + h)
            }
        };
        let c = self.canvas as f64;
        let px = |v: f64| (v * c).round() as u32;
        format!("({},{},{},{})", px(x1), px(y1), px(x2), px(y2))
    }

    fn free_line(&self, context: &str, rng: &mut ChaCha8Rng) -> String {
        let Some(summary) = last_field(context, "Objects: ") else {
            return String::new();
        };
        let instances = summary_instances(summary);
        if instances.is_empty() {
            return String::new();
        }
        let written = context
            .rsplit_once("Layout:\n")
            .map_or(0, |(_, tail)| tail.lines().filter(|l| !l.trim().is_empty()).count());
        let mut caption_rng = rng_for(last_field(context, "Caption: ").unwrap_or_default());
        let total = if caption_rng.random_bool(self.control_drift) {
            if caption_rng.random_bool(0.5) || instances.len() == 1 {
                instances.len() + 1
            } else {
                instances.len() - 1
            }
        } else {
            instances.len()
        };
        if written >= total {
            return String::new();
        }
        let (name, position) = &instances[written % instances.len()];
        format!("{name}: {}", self.box_text(rng, *position))
    }
}

impl TextBackend for SyntheticPlanner {
    fn id(&self) -> String {
        "synthetic".into()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        Ok(GenerationResponse {
            completion: self.respond(&request.context),
            backend_id: self.id(),
            latency_ms: 0,
        })
    }
}

fn rng_for(text: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(text.as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

fn last_field<'a>(context: &'a str, label: &str) -> Option<&'a str> {
    context
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix(label))
        .map(str::trim)
}

/// Expands `apple x2, cup x1` or `dog (left), cat (right)` into instances.
fn summary_instances(summary: &str) -> Vec<(String, Option<PositionBucket>)> {
    let mut out = Vec::new();
    for item in summary.split(", ") {
        let item = item.trim();
        if let Some((name, pos)) = item.strip_suffix(')').and_then(|s| s.rsplit_once(" (")) {
            out.push((name.to_string(), pos.parse().ok()));
        } else if let Some((name, n)) = item.rsplit_once(" x") {
            let n: usize = n.parse().unwrap_or(1);
            out.extend(std::iter::repeat_n((name.to_string(), None), n));
        } else if !item.is_empty() {
            out.push((item.to_string(), None));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::parse_box_line;
    use crate::layout::{bucket_of, normalize_box};

    fn ask(p: &SyntheticPlanner, context: &str) -> String {
        p.complete(&GenerationRequest::new(context).unwrap())
            .unwrap()
            .completion
    }

    #[test]
    fn answers_by_caption() {
        let p = SyntheticPlanner::new().with_answer("two cats", "2 cat");
        assert_eq!(ask(&p, "Caption: x\n...\nCaption: two cats\nAnswer:"), " 2 cat");
        assert_eq!(ask(&p, "Caption: dogs\nAnswer:"), "");
    }

    #[test]
    fn compliant_boxes_land_in_their_cell() {
        let p = SyntheticPlanner::new();
        for (i, b) in PositionBucket::ALL.iter().enumerate() {
            for k in 0..20 {
                let ctx = format!("ctx {i} {k}\nobj({b}):");
                let raw = parse_box_line(&ask(&p, &ctx), 512).unwrap();
                assert_eq!(bucket_of(&normalize_box(raw, 512).unwrap()), *b);
            }
        }
    }

    #[test]
    fn deterministic_per_context() {
        let p = SyntheticPlanner::new().with_noncompliance(0.5);
        assert_eq!(ask(&p, "a\ncat(left):"), ask(&p, "a\ncat(left):"));
    }

    #[test]
    fn free_running_writes_summary_objects() {
        let p = SyntheticPlanner::new().with_control_drift(0.0);
        let mut ctx = String::from("Caption: c\nObjects: apple x2, cup x1\nLayout:\n");
        let mut names = Vec::new();
        loop {
            let line = ask(&p, &ctx);
            if line.is_empty() {
                break;
            }
            names.push(line.split(':').next().unwrap().to_string());
            ctx.push_str(&line);
            ctx.push('\n');
        }
        assert_eq!(names, ["apple", "apple", "cup"]);
    }

    #[test]
    fn summary_parsing() {
        assert_eq!(
            summary_instances("fire hydrant x2, dog (top-left)"),
            vec![
                ("fire hydrant".into(), None),
                ("fire hydrant".into(), None),
                ("dog".into(), Some(PositionBucket::TopLeft)),
            ]
        );
    }
}
