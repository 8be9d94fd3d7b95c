//! In-context exemplar fixtures and the text templates built from them.
//!
//! Exemplars live as plain-text files, one per file, named
//! `<task>_<index>.txt` (`numerical`, `spatial`, `planning`) plus a single
//! `negation.txt`. A built-in copy of the default set is compiled in.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_EXEMPLARS: usize = 1;
pub const MAX_EXEMPLARS: usize = 4;
pub const DEFAULT_EXEMPLARS: usize = 2;

/// Opening line of every in-context exemplar block.
pub const EXEMPLAR_OPEN: &str = "[example]";
pub const EXEMPLAR_CLOSE: &str = "[/example]";
pub const NEGATION_OPEN: &str = "[negation example]";
pub const NEGATION_CLOSE: &str = "[/negation example]";

pub const NUMERICAL_INSTRUCTION: &str = "Read the caption and list every object category it mentions together with how many instances of it appear. Answer on one line as a comma-separated list of `<quantity> <category>` items, using digits for quantities and singular category names.";

pub const SPATIAL_INSTRUCTION: &str = "Read the caption and list every object instance it mentions together with its approximate position in the image. Answer on one line as a list of `<object>, <position>;` items, where position is one of: top-left, top, top-right, left, center, right, bottom-left, bottom, bottom-right.";

pub const PLANNING_INSTRUCTION: &str = "You are a visual planner. Given a caption and the objects it contains, write one line per object with a bounding box on a 512x512 canvas. Each box is (x1,y1,x2,y2) in integer pixels with the origin at the top-left corner. Keep relative object sizes realistic and respect any requested positions.";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("exemplar count {0} outside [{MIN_EXEMPLARS}, {MAX_EXEMPLARS}]")]
    InvalidExemplarCount(usize),
    #[error("only {available} `{kind}` exemplars available, {requested} requested")]
    NotEnoughExemplars {
        kind: &'static str,
        available: usize,
        requested: usize,
    },
    #[error("missing prompt fixture {0}")]
    MissingFixture(PathBuf),
    #[error("reading {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Number of in-context exemplars to include, within `[1, 4]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct ExemplarCount(usize);

impl ExemplarCount {
    pub fn new(n: usize) -> Result<Self, PromptError> {
        if (MIN_EXEMPLARS..=MAX_EXEMPLARS).contains(&n) {
            Ok(Self(n))
        } else {
            Err(PromptError::InvalidExemplarCount(n))
        }
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl Default for ExemplarCount {
    fn default() -> Self {
        Self(DEFAULT_EXEMPLARS)
    }
}

impl TryFrom<usize> for ExemplarCount {
    type Error = PromptError;
    fn try_from(n: usize) -> Result<Self, Self::Error> {
        Self::new(n)
    }
}

impl From<ExemplarCount> for usize {
    fn from(c: ExemplarCount) -> usize {
        c.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLibrary {
    pub numerical: Vec<String>,
    pub spatial: Vec<String>,
    pub planning: Vec<String>,
    pub negation: String,
}

impl PromptLibrary {
    pub fn builtin() -> Self {
        let clean = |s: &str| s.trim_end().to_string();
        Self {
            numerical: [
                include_str!("../prompts/numerical_1.txt"),
                include_str!("../prompts/numerical_2.txt"),
                include_str!("../prompts/numerical_3.txt"),
                include_str!("../prompts/numerical_4.txt"),
            ]
            .map(clean)
            .to_vec(),
            spatial: [
                include_str!("../prompts/spatial_1.txt"),
                include_str!("../prompts/spatial_2.txt"),
                include_str!("../prompts/spatial_3.txt"),
                include_str!("../prompts/spatial_4.txt"),
            ]
            .map(clean)
            .to_vec(),
            planning: [
                include_str!("../prompts/planning_1.txt"),
                include_str!("../prompts/planning_2.txt"),
                include_str!("../prompts/planning_3.txt"),
                include_str!("../prompts/planning_4.txt"),
            ]
            .map(clean)
            .to_vec(),
            negation: clean(include_str!("../prompts/negation.txt")),
        }
    }

    /// Loads `<task>_<index>.txt` files (index from 1, contiguous) and
    /// `negation.txt` from `dir`.
    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        let read = |path: PathBuf| -> Result<String, PromptError> {
            fs::read_to_string(&path)
                .map(|s| s.trim_end().to_string())
                .map_err(|source| PromptError::Io { path, source })
        };
        let series = |kind: &str| -> Result<Vec<String>, PromptError> {
            let mut out = Vec::new();
            for i in 1.. {
                let path = dir.join(format!("{kind}_{i}.txt"));
                if !path.exists() {
                    break;
                }
                out.push(read(path)?);
            }
            if out.is_empty() {
                return Err(PromptError::MissingFixture(dir.join(format!("{kind}_1.txt"))));
            }
            Ok(out)
        };
        let negation_path = dir.join("negation.txt");
        if !negation_path.exists() {
            return Err(PromptError::MissingFixture(negation_path));
        }
        Ok(Self {
            numerical: series("numerical")?,
            spatial: series("spatial")?,
            planning: series("planning")?,
            negation: read(negation_path)?,
        })
    }

    pub(crate) fn take<'a>(
        kind: &'static str,
        pool: &'a [String],
        count: ExemplarCount,
    ) -> Result<&'a [String], PromptError> {
        pool.get(..count.get()).ok_or(PromptError::NotEnoughExemplars {
            kind,
            available: pool.len(),
            requested: count.get(),
        })
    }
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

pub(crate) fn push_exemplars(out: &mut String, exemplars: &[String]) {
    for ex in exemplars {
        out.push_str(EXEMPLAR_OPEN);
        out.push('\n');
        out.push_str(ex);
        out.push('\n');
        out.push_str(EXEMPLAR_CLOSE);
        out.push_str("\n\n");
    }
}

/// The exact substring the negation toggle adds to a planning prompt.
pub fn negation_block(negation: &str) -> String {
    format!("{NEGATION_OPEN}\n{negation}\n{NEGATION_CLOSE}\n\n")
}

/// Number of exemplar blocks in a rendered prompt.
pub fn count_exemplars(prompt: &str) -> usize {
    prompt.lines().filter(|l| *l == EXEMPLAR_OPEN).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_matches_fixture_directory() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("prompts");
        assert_eq!(PromptLibrary::load(&dir).unwrap(), PromptLibrary::builtin());
    }

    #[test]
    fn exemplar_count_bounds() {
        assert!(ExemplarCount::new(0).is_err());
        assert!(ExemplarCount::new(5).is_err());
        for n in 1..=4 {
            assert_eq!(ExemplarCount::new(n).unwrap().get(), n);
        }
        assert_eq!(ExemplarCount::default().get(), 2);
    }

    #[test]
    fn load_reports_missing_directory_contents() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            PromptLibrary::load(dir.path()),
            Err(PromptError::MissingFixture(_))
        ));
    }

    #[test]
    fn builtin_has_four_of_each() {
        let lib = PromptLibrary::builtin();
        assert_eq!(lib.numerical.len(), 4);
        assert_eq!(lib.spatial.len(), 4);
        assert_eq!(lib.planning.len(), 4);
        assert!(lib.numerical[0].ends_with("Answer: 5 fire hydrant, 4 cell phone"));
        assert!(lib.spatial[0]
            .ends_with("Answer: dog, left; person, center; cat, center; airplane, right;"));
    }
}
