//! Two-round refinement over a toy latent denoiser.
//!
//! Round one denoises seeded noise towards a layout-rendered target and keeps
//! every intermediate grid. Each object is then scored on its box crop;
//! objects scoring above the threshold are "easy" and rasterized into a binary
//! mask. Round two is conditioned only on the hard objects, and after every
//! step the masked cells are overwritten with the round-one grid of the same
//! timestep: `z' = z ∘ M + z' ∘ (1 − M)`.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::layout::{BoundingBox, Layout};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RefineError {
    #[error("grid dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch(GridDims, GridDims),
    #[error("object {index} covers no latent cells")]
    EmptyCrop { index: usize },
    #[error("threshold {0} outside (-1, 1)")]
    InvalidThreshold(f64),
    #[error("invalid denoiser spec: {0}")]
    InvalidSpec(String),
    #[error("non-finite latent value")]
    NonFinite,
    #[error("partition does not match layout of {objects} objects")]
    PartitionMismatch { objects: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    pub height: usize,
    pub width: usize,
}

impl GridDims {
    pub const fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// Normalized center of cell `(row, col)`.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5) / self.width as f64,
            (row as f64 + 0.5) / self.height as f64,
        )
    }

    /// Flat indices of cells whose centers lie inside `bbox`.
    pub fn cells_in(&self, bbox: &BoundingBox) -> impl Iterator<Item = usize> + '_ {
        let bbox = *bbox;
        (0..self.cells()).filter(move |&k| {
            let (x, y) = self.cell_center(k / self.width, k % self.width);
            bbox.contains(x, y)
        })
    }
}

impl Default for GridDims {
    fn default() -> Self {
        Self::new(64, 64)
    }
}

/// Single-channel latent, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGrid {
    dims: GridDims,
    values: Vec<f64>,
}

impl LatentGrid {
    pub fn filled(dims: GridDims, v: f64) -> Self {
        Self {
            dims,
            values: vec![v; dims.cells()],
        }
    }

    pub fn zeros(dims: GridDims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn from_values(dims: GridDims, values: Vec<f64>) -> Result<Self, RefineError> {
        if values.len() != dims.cells() {
            return Err(RefineError::InvalidSpec(format!(
                "{} values for {}x{} grid",
                values.len(),
                dims.height,
                dims.width
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RefineError::NonFinite);
        }
        Ok(Self { dims, values })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.dims.width + col]
    }

    /// Largest `|self − other|` over the given flat cell indices.
    pub fn max_abs_diff_over(&self, other: &LatentGrid, cells: impl IntoIterator<Item = usize>) -> f64 {
        cells
            .into_iter()
            .map(|k| (self.values[k] - other.values[k]).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityMask {
    dims: GridDims,
    cells: Vec<u8>,
}

impl FidelityMask {
    pub fn from_cells(dims: GridDims, cells: Vec<u8>) -> Result<Self, RefineError> {
        if cells.len() != dims.cells() || cells.iter().any(|&c| c > 1) {
            return Err(RefineError::InvalidSpec("mask must be 0/1 per cell".into()));
        }
        Ok(Self { dims, cells })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.dims.width + col]
    }

    pub fn ones(&self) -> usize {
        self.cells.iter().filter(|&&c| c == 1).count()
    }

    pub fn set_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().enumerate().filter(|(_, &c)| c == 1).map(|(k, _)| k)
    }
}

/// Mask with 1 on every cell whose center lies in at least one easy box.
pub fn rasterize_mask(easy_boxes: &[BoundingBox], dims: GridDims) -> FidelityMask {
    let mut cells = vec![0u8; dims.cells()];
    for b in easy_boxes {
        for k in dims.cells_in(b) {
            cells[k] = 1;
        }
    }
    FidelityMask { dims, cells }
}

/// Cell-wise `z1` where the mask is set, `z2` elsewhere.
pub fn compose_latents(
    z_round1: &LatentGrid,
    z_round2: &LatentGrid,
    mask: &FidelityMask,
) -> Result<LatentGrid, RefineError> {
    if z_round1.dims != z_round2.dims {
        return Err(RefineError::DimensionMismatch(z_round1.dims, z_round2.dims));
    }
    if z_round1.dims != mask.dims {
        return Err(RefineError::DimensionMismatch(z_round1.dims, mask.dims));
    }
    let values = z_round1
        .values
        .iter()
        .zip(&z_round2.values)
        .zip(&mask.cells)
        .map(|((&a, &b), &m)| if m == 1 { a } else { b })
        .collect();
    Ok(LatentGrid {
        dims: z_round1.dims,
        values,
    })
}

/// Stable per-category target value in `[0.1, 1.0]`.
pub fn category_target(name: &str) -> f64 {
    let digest = Sha256::digest(name.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    let u = u64::from_be_bytes(head) as f64 / u64::MAX as f64;
    0.1 + 0.9 * u
}

/// Background 0; each object's cells take its category target, later objects
/// overwriting earlier ones.
pub fn render_target(layout: &Layout, dims: GridDims) -> LatentGrid {
    render_target_with(layout, dims, |_, name| category_target(name))
}

/// Like [`render_target`] with a caller-chosen value per `(object index, name)`.
pub fn render_target_with(
    layout: &Layout,
    dims: GridDims,
    value: impl Fn(usize, &str) -> f64,
) -> LatentGrid {
    let mut grid = LatentGrid::zeros(dims);
    for (i, obj) in layout.objects().iter().enumerate() {
        let v = value(i, &obj.name);
        for k in dims.cells_in(&obj.bbox) {
            grid.values[k] = v;
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserSpec {
    pub steps: usize,
    /// Weight on the previous latent in each update, in (0, 1).
    pub alpha: f64,
    /// Peak noise scale; the per-step scale decays linearly to 0 at the last step.
    pub sigma: f64,
    pub dims: GridDims,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        Self {
            steps: 20,
            alpha: 0.8,
            sigma: 0.002,
            dims: GridDims::default(),
        }
    }
}

impl DenoiserSpec {
    pub fn validate(&self) -> Result<(), RefineError> {
        if self.steps == 0 {
            return Err(RefineError::InvalidSpec("steps must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(RefineError::InvalidSpec(format!("alpha {} not in (0,1)", self.alpha)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(RefineError::InvalidSpec(format!("sigma {} invalid", self.sigma)));
        }
        if self.dims.cells() == 0 {
            return Err(RefineError::InvalidSpec("empty grid".into()));
        }
        Ok(())
    }

    /// Noise scale of the update that produces `z_{t-1}` from `z_t`.
    pub fn sigma_at(&self, t: usize) -> f64 {
        if self.steps <= 1 || t == 0 {
            return 0.0;
        }
        self.sigma * (t - 1) as f64 / (self.steps - 1) as f64
    }

    pub fn sigma_sum(&self) -> f64 {
        (1..=self.steps).map(|t| self.sigma_at(t)).sum()
    }

    /// Per-cell bound on `|z_0 − target|`: `α^T · max|z_T − target| + Σ σ_t`,
    /// valid because the injected noise lies in `[-1, 1)`.
    pub fn contraction_bound(&self, initial_error: f64) -> f64 {
        self.alpha.powi(self.steps as i32) * initial_error + self.sigma_sum()
    }
}

fn noise_rng(seed: u64, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    rng
}

/// Noise value in `[-1, 1)`, a pure function of `(seed, t, cell)`.
pub fn noise_at(seed: u64, t: usize, cell: usize) -> f64 {
    let mut rng = noise_rng(seed, t);
    // each f64 draw consumes two 32-bit words
    rng.set_word_pos(cell as u128 * 2);
    2.0 * rng.random::<f64>() - 1.0
}

/// The full noise grid for timestep `t`; equals [`noise_at`] cell by cell.
pub fn noise_grid(seed: u64, t: usize, dims: GridDims) -> LatentGrid {
    let mut rng = noise_rng(seed, t);
    let values = (0..dims.cells()).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
    LatentGrid { dims, values }
}

/// Per-timestep latents of one denoising run. `grids[k]` is the latent at
/// timestep `steps − k`, so `grids[0]` is the initial noise and the last grid
/// is `z_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTrajectory {
    pub seed: u64,
    pub steps: usize,
    pub layout_hash: String,
    pub grids: Vec<LatentGrid>,
}

impl LatentTrajectory {
    pub fn at_timestep(&self, t: usize) -> &LatentGrid {
        &self.grids[self.steps - t]
    }

    pub fn initial(&self) -> &LatentGrid {
        &self.grids[0]
    }

    pub fn final_grid(&self) -> &LatentGrid {
        self.grids.last().expect("trajectory is never empty")
    }
}

/// Hex SHA-256 of the layout's canonical JSON.
pub fn layout_hash(layout: &Layout) -> String {
    hex::encode(Sha256::digest(layout.to_json().as_bytes()))
}

/// Core loop shared by both rounds. With `preserve`, every grid (including
/// the initial one) is composed with the recorded grid of the same timestep.
fn denoise_towards(
    spec: &DenoiserSpec,
    target: &LatentGrid,
    seed: u64,
    layout_hash: String,
    preserve: Option<(&LatentTrajectory, &FidelityMask)>,
) -> Result<LatentTrajectory, RefineError> {
    spec.validate()?;
    if target.dims != spec.dims {
        return Err(RefineError::DimensionMismatch(target.dims, spec.dims));
    }
    let mut z = noise_grid(seed, spec.steps, spec.dims);
    if let Some((traj, mask)) = preserve {
        z = compose_latents(traj.at_timestep(spec.steps), &z, mask)?;
    }
    let mut grids = Vec::with_capacity(spec.steps + 1);
    grids.push(z.clone());
    for t in (1..=spec.steps).rev() {
        let sigma = spec.sigma_at(t);
        let eta = noise_grid(seed, t - 1, spec.dims);
        for ((v, &target_v), &n) in z.values.iter_mut().zip(&target.values).zip(&eta.values) {
            *v = spec.alpha * *v + (1.0 - spec.alpha) * target_v + sigma * n;
        }
        if let Some((traj, mask)) = preserve {
            z = compose_latents(traj.at_timestep(t - 1), &z, mask)?;
        }
        grids.push(z.clone());
    }
    Ok(LatentTrajectory {
        seed,
        steps: spec.steps,
        layout_hash,
        grids,
    })
}

/// First-round denoise of seeded noise towards the layout's rendered target.
pub fn run_denoise(spec: &DenoiserSpec, layout: &Layout, seed: u64) -> Result<LatentTrajectory, RefineError> {
    let target = render_target(layout, spec.dims);
    denoise_towards(spec, &target, seed, layout_hash(layout), None)
}

/// First-round denoise towards an explicit target grid.
pub fn run_denoise_to(
    spec: &DenoiserSpec,
    target: &LatentGrid,
    layout: &Layout,
    seed: u64,
) -> Result<LatentTrajectory, RefineError> {
    denoise_towards(spec, target, seed, layout_hash(layout), None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyScore {
    pub object_index: usize,
    pub score: f64,
}

/// Open-interval margin applied to every emitted score.
pub const SCORE_EPSILON: f64 = 1e-6;

fn clip_open(s: f64) -> f64 {
    s.clamp(-1.0 + SCORE_EPSILON, 1.0 - SCORE_EPSILON)
}

/// Region-vs-name consistency in (−1, 1). A CLIP client fits behind this.
pub trait ConsistencyScorer: Send + Sync {
    fn score(&self, grid: &LatentGrid, layout: &Layout, index: usize) -> f64;
}

/// `2f − 1`, where `f` is the fraction of the object's cells within
/// `tolerance` of its category target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyScorer {
    pub tolerance: f64,
}

impl Default for ToyScorer {
    fn default() -> Self {
        Self { tolerance: 0.05 }
    }
}

impl ConsistencyScorer for ToyScorer {
    fn score(&self, grid: &LatentGrid, layout: &Layout, index: usize) -> f64 {
        let obj = &layout.objects()[index];
        let target = category_target(&obj.name);
        let (mut total, mut close) = (0usize, 0usize);
        for k in grid.dims.cells_in(&obj.bbox) {
            total += 1;
            if (grid.values[k] - target).abs() <= self.tolerance {
                close += 1;
            }
        }
        if total == 0 {
            return -1.0;
        }
        2.0 * close as f64 / total as f64 - 1.0
    }
}

/// Returns preset scores by object index (0 for indices past the end).
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureScorer {
    pub scores: Vec<f64>,
}

impl ConsistencyScorer for FixtureScorer {
    fn score(&self, _grid: &LatentGrid, _layout: &Layout, index: usize) -> f64 {
        self.scores.get(index).copied().unwrap_or(0.0)
    }
}

/// One score per object in layout order, clipped into the open interval.
pub fn score_objects(
    final_grid: &LatentGrid,
    layout: &Layout,
    scorer: &dyn ConsistencyScorer,
) -> Result<Vec<ConsistencyScore>, RefineError> {
    layout
        .objects()
        .iter()
        .enumerate()
        .map(|(i, obj)| {
            if final_grid.dims.cells_in(&obj.bbox).next().is_none() {
                return Err(RefineError::EmptyCrop { index: i });
            }
            Ok(ConsistencyScore {
                object_index: i,
                score: clip_open(scorer.score(final_grid, layout, i)),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePartition {
    pub easy: BTreeSet<usize>,
    pub hard: BTreeSet<usize>,
    pub threshold: f64,
}

/// Easy iff the score is strictly above `threshold`; ties are hard.
pub fn partition_samples(
    scores: &[ConsistencyScore],
    threshold: f64,
) -> Result<SamplePartition, RefineError> {
    if !(threshold > -1.0 && threshold < 1.0) {
        return Err(RefineError::InvalidThreshold(threshold));
    }
    let (mut easy, mut hard) = (BTreeSet::new(), BTreeSet::new());
    for s in scores {
        if s.score > threshold {
            easy.insert(s.object_index);
        } else {
            hard.insert(s.object_index);
        }
    }
    Ok(SamplePartition {
        easy,
        hard,
        threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementOutcome {
    pub final_grid: LatentGrid,
    pub mask: FidelityMask,
    /// `None` when every object was easy and round two was skipped.
    pub round2: Option<LatentTrajectory>,
}

impl RefinementOutcome {
    pub fn skipped(&self) -> bool {
        self.round2.is_none()
    }
}

/// Second round conditioned on the hard objects only, with mask-1 cells
/// replaced by the round-one latent of the same timestep after every step.
/// Round two reuses the round-one seed, so both rounds see the same noise.
pub fn run_refinement(
    spec: &DenoiserSpec,
    trajectory: &LatentTrajectory,
    partition: &SamplePartition,
    full_layout: &Layout,
    seed: u64,
) -> Result<RefinementOutcome, RefineError> {
    let n = full_layout.len();
    if partition.easy.len() + partition.hard.len() != n
        || partition.easy.iter().chain(&partition.hard).any(|&i| i >= n)
        || !partition.easy.is_disjoint(&partition.hard)
    {
        return Err(RefineError::PartitionMismatch { objects: n });
    }
    if trajectory.grids.len() != spec.steps + 1 || trajectory.steps != spec.steps {
        return Err(RefineError::InvalidSpec(format!(
            "trajectory has {} grids for {} steps",
            trajectory.grids.len(),
            spec.steps
        )));
    }
    let easy_boxes: Vec<BoundingBox> = partition
        .easy
        .iter()
        .map(|&i| full_layout.objects()[i].bbox)
        .collect();
    let mask = rasterize_mask(&easy_boxes, spec.dims);
    if partition.hard.is_empty() {
        return Ok(RefinementOutcome {
            final_grid: trajectory.final_grid().clone(),
            mask,
            round2: None,
        });
    }
    let hard_layout = full_layout.subset(partition.hard.iter().copied());
    let target = render_target(&hard_layout, spec.dims);
    let round2 = denoise_towards(
        spec,
        &target,
        seed,
        layout_hash(&hard_layout),
        Some((trajectory, &mask)),
    )?;
    Ok(RefinementOutcome {
        final_grid: round2.final_grid().clone(),
        mask,
        round2: Some(round2),
    })
}
