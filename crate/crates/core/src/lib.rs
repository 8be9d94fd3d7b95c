//! Divide-and-conquer toolkit for layout-guided text-to-image pipelines.
//!
//! Stage one turns a caption into numerical or spatial constraints
//! ([`reasoning`]) and decodes a layout under forced control prefixes
//! ([`decoder`]) against any [`backend::TextBackend`]. Stage two
//! ([`refinement`]) runs a toy two-round denoiser that preserves
//! high-consistency regions of the first round bit-for-bit while
//! re-generating the rest. [`metrics`] and [`bench`] score layouts against
//! grounding benchmarks.

pub mod backend;
pub mod bench;
pub mod decoder;
pub mod layout;
pub mod metrics;
pub mod par;
pub mod prompts;
pub mod reasoning;
pub mod refinement;
pub mod synthetic;

pub use backend::{GenerationRequest, GenerationResponse, TextBackend};
pub use decoder::{DecodeConfig, DecodeReport, PrefixPlan, Violation};
pub use layout::{BoundingBox, Layout, PlacedObject, PositionBucket, Relation};
pub use reasoning::{ConstraintSet, Task};
