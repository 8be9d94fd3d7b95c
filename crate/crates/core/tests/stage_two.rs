use std::collections::BTreeSet;

use layoutkit::layout::{BoundingBox, Layout};
use layoutkit::refinement::{
    category_target, compose_latents, partition_samples, rasterize_mask, render_target,
    render_target_with, run_denoise, run_denoise_to, run_refinement, score_objects,
    ConsistencyScore, DenoiserSpec, FidelityMask, GridDims, LatentGrid, ToyScorer,
    SCORE_EPSILON,
};

fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
    BoundingBox::new(x1, y1, x2, y2).unwrap()
}

fn layout(objects: &[(&str, BoundingBox)]) -> Layout {
    let mut l = Layout::new("p", 512);
    for (n, b) in objects {
        l.add(n, *b).unwrap();
    }
    l
}

/// Independent rasterizer: a cell belongs to a box when its center lies in
/// `[x1, x2) × [y1, y2)`.
fn oracle_cells(b: &BoundingBox, dims: GridDims) -> Vec<usize> {
    let mut out = Vec::new();
    for r in 0..dims.height {
        for c in 0..dims.width {
            let x = (c as f64 + 0.5) / dims.width as f64;
            let y = (r as f64 + 0.5) / dims.height as f64;
            if x >= b.x1() && x < b.x2() && y >= b.y1() && y < b.y2() {
                out.push(r * dims.width + c);
            }
        }
    }
    out
}

#[test]
fn render_target_examples() {
    let dims = GridDims::default();
    assert!(render_target(&layout(&[]), dims).values().iter().all(|&v| v == 0.0));

    let full = render_target(&layout(&[("apple", bx(0.0, 0.0, 1.0, 1.0))]), dims);
    let t = category_target("apple");
    assert!(full.values().iter().all(|&v| v == t));

    let (a, b) = (bx(0.0, 0.0, 0.3, 0.3), bx(0.6, 0.5, 0.9, 1.0));
    let grid = render_target(&layout(&[("apple", a), ("dog", b)]), dims);
    let mut expected = vec![0.0; dims.cells()];
    for k in oracle_cells(&a, dims) {
        expected[k] = category_target("apple");
    }
    for k in oracle_cells(&b, dims) {
        expected[k] = category_target("dog");
    }
    assert_eq!(grid.values(), &expected[..]);
}

#[test]
fn denoise_examples() {
    let spec = DenoiserSpec {
        sigma: 0.0,
        ..DenoiserSpec::default()
    };
    assert_eq!((spec.steps, spec.alpha), (20, 0.8));
    let l = layout(&[("apple", bx(0.1, 0.1, 0.6, 0.7))]);
    let traj = run_denoise(&spec, &l, 3).unwrap();
    let target = render_target(&l, spec.dims);
    let all = 0..spec.dims.cells();
    let e0 = traj.initial().max_abs_diff_over(&target, all.clone());
    let bound = 0.8f64.powi(20) * e0;
    assert!(traj.final_grid().max_abs_diff_over(&target, all) <= bound + 1e-12);

    let default = DenoiserSpec::default();
    assert_eq!(run_denoise(&default, &l, 7).unwrap(), run_denoise(&default, &l, 7).unwrap());
    assert_ne!(
        run_denoise(&default, &l, 7).unwrap().initial(),
        run_denoise(&default, &l, 8).unwrap().initial()
    );
}

#[test]
fn scorer_examples() {
    let dims = GridDims::default();
    let scorer = ToyScorer::default();
    let l = layout(&[("apple", bx(0.25, 0.25, 0.75, 0.75))]);
    let perfect = render_target(&l, dims);
    let s = score_objects(&perfect, &l, &scorer).unwrap()[0].score;
    assert_eq!(s, 1.0 - SCORE_EPSILON);

    let zeros = LatentGrid::zeros(dims);
    let s = score_objects(&zeros, &l, &scorer).unwrap()[0].score;
    assert_eq!(s, -1.0 + SCORE_EPSILON);

    let cells = oracle_cells(&l.objects()[0].bbox, dims);
    let mut half = LatentGrid::zeros(dims).values().to_vec();
    for &k in &cells[..cells.len() / 2] {
        half[k] = category_target("apple");
    }
    let half = LatentGrid::from_values(dims, half).unwrap();
    assert_eq!(cells.len() % 2, 0);
    assert_eq!(score_objects(&half, &l, &scorer).unwrap()[0].score, 0.0);
}

fn scores(v: &[f64]) -> Vec<ConsistencyScore> {
    v.iter()
        .enumerate()
        .map(|(i, &score)| ConsistencyScore {
            object_index: i,
            score,
        })
        .collect()
}

#[test]
fn partition_examples() {
    let p = partition_samples(&scores(&[0.31, 0.18, 0.27]), 0.25).unwrap();
    assert_eq!(p.easy, BTreeSet::from([0, 2]));
    assert_eq!(p.hard, BTreeSet::from([1]));
    let p = partition_samples(&scores(&[0.5, 0.9]), 0.25).unwrap();
    assert!(p.hard.is_empty());
    let p = partition_samples(&scores(&[0.25]), 0.25).unwrap();
    assert_eq!(p.hard, BTreeSet::from([0]));
}

#[test]
fn mask_examples() {
    let dims = GridDims::default();
    assert_eq!(rasterize_mask(&[], dims).ones(), 0);
    assert_eq!(rasterize_mask(&[bx(0.0, 0.0, 1.0, 1.0)], dims).ones(), dims.cells());
    let q = rasterize_mask(&[bx(0.0, 0.0, 0.5, 0.5)], dims);
    assert_eq!(q.ones(), 32 * 32);
    for r in 0..64 {
        for c in 0..64 {
            assert_eq!(q.get(r, c), u8::from(r < 32 && c < 32));
        }
    }
}

#[test]
fn compose_examples() {
    let d = GridDims::new(2, 2);
    let z1 = LatentGrid::filled(d, 5.0);
    let z2 = LatentGrid::filled(d, 9.0);
    let m = FidelityMask::from_cells(d, vec![1, 0, 0, 0]).unwrap();
    assert_eq!(compose_latents(&z1, &z2, &m).unwrap().values(), &[5.0, 9.0, 9.0, 9.0]);
    let ones = FidelityMask::from_cells(d, vec![1; 4]).unwrap();
    assert_eq!(compose_latents(&z1, &z2, &ones).unwrap(), z1);
    let zeros = FidelityMask::from_cells(d, vec![0; 4]).unwrap();
    assert_eq!(compose_latents(&z1, &z2, &zeros).unwrap(), z2);
}

#[test]
fn refinement_examples() {
    let spec = DenoiserSpec::default();
    let l = layout(&[
        ("apple", bx(0.05, 0.05, 0.45, 0.45)),
        ("dog", bx(0.55, 0.5, 0.95, 0.95)),
    ]);
    let traj = run_denoise(&spec, &l, 11).unwrap();

    let all_easy = partition_samples(&scores(&[0.9, 0.9]), 0.25).unwrap();
    let out = run_refinement(&spec, &traj, &all_easy, &l, 11).unwrap();
    assert!(out.skipped());
    assert_eq!(&out.final_grid, traj.final_grid());

    // full mask with a hard object still returns round one exactly
    let full = layout(&[("sky", bx(0.0, 0.0, 1.0, 1.0)), ("kite", bx(0.4, 0.1, 0.6, 0.3))]);
    let traj_full = run_denoise(&spec, &full, 2).unwrap();
    let p = partition_samples(&scores(&[0.9, 0.1]), 0.25).unwrap();
    let out = run_refinement(&spec, &traj_full, &p, &full, 2).unwrap();
    assert_eq!(out.mask.ones(), spec.dims.cells());
    assert_eq!(&out.final_grid, traj_full.final_grid());

    // sabotage object 1, expect it hard and repaired
    let sabotaged = render_target_with(&l, spec.dims, |i, n| if i == 1 { 0.0 } else { category_target(n) });
    let r1 = run_denoise_to(&spec, &sabotaged, &l, 11).unwrap();
    let s = score_objects(r1.final_grid(), &l, &ToyScorer::default()).unwrap();
    let p = partition_samples(&s, 0.25).unwrap();
    assert_eq!(p.hard, BTreeSet::from([1]));
    let out = run_refinement(&spec, &r1, &p, &l, 11).unwrap();
    let target = render_target(&l, spec.dims);
    let dog = oracle_cells(&l.objects()[1].bbox, spec.dims);
    let e_t = out.round2.as_ref().unwrap().initial().max_abs_diff_over(&target, dog.iter().copied());
    let bound = spec.alpha.powi(spec.steps as i32) * e_t
        + (1..=spec.steps).map(|t| spec.sigma_at(t)).sum::<f64>();
    assert!(out.final_grid.max_abs_diff_over(&target, dog.iter().copied()) <= bound);
    for k in out.mask.set_indices() {
        assert_eq!(out.final_grid.values()[k].to_bits(), r1.final_grid().values()[k].to_bits());
    }
}
