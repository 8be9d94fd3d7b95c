//! Grounding metrics: counting precision / recall / F1 / accuracy and
//! spatial-relation accuracy, plus the per-case CSV and Markdown summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{canonical_name, classify_relation, Layout, Relation};
use crate::reasoning::Task;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot aggregate an empty set of cases")]
    EmptyInput,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Counts = BTreeMap<String, u32>;

/// Per-category instance counts under canonical names.
pub fn layout_counts(layout: &Layout) -> Counts {
    canonical_counts(layout.objects().iter().map(|o| (o.name.as_str(), 1)))
}

/// Merges `(name, count)` pairs under canonical names, dropping zeros.
pub fn canonical_counts<'a>(pairs: impl IntoIterator<Item = (&'a str, u32)>) -> Counts {
    let mut out = Counts::new();
    for (name, n) in pairs {
        if n > 0 {
            *out.entry(canonical_name(name)).or_insert(0) += n;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountingStats {
    pub matched: u32,
    pub pred_total: u32,
    pub gt_total: u32,
    pub exact: bool,
}

fn ratio(num: u32, den: u32) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl CountingStats {
    /// Zero-matched stats for a case whose prediction failed outright.
    pub fn failed(gt: &Counts) -> Self {
        counting_metrics(&Counts::new(), gt)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.matched, self.pred_total)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.matched, self.gt_total)
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }
}

/// `matched = Σ_c min(pred_c, gt_c)`; exact iff the two associations are equal.
pub fn counting_metrics(pred: &Counts, gt: &Counts) -> CountingStats {
    let pred = canonical_counts(pred.iter().map(|(k, v)| (k.as_str(), *v)));
    let gt = canonical_counts(gt.iter().map(|(k, v)| (k.as_str(), *v)));
    let matched = pred
        .iter()
        .map(|(c, p)| (*p).min(gt.get(c).copied().unwrap_or(0)))
        .sum();
    CountingStats {
        matched,
        pred_total: pred.values().sum(),
        gt_total: gt.values().sum(),
        exact: pred == gt,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRelation {
    pub subject: String,
    pub object: String,
    pub relation: Relation,
}

impl GroundTruthRelation {
    pub fn new(subject: &str, relation: Relation, object: &str) -> Self {
        Self {
            subject: canonical_name(subject),
            object: canonical_name(object),
            relation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationOutcome {
    pub expected: GroundTruthRelation,
    /// `None` when subject or object is absent from the layout.
    pub predicted: Option<Relation>,
    pub correct: bool,
}

/// Checks each relation on the first instance of subject and object.
pub fn spatial_accuracy(layout: &Layout, relations: &[GroundTruthRelation]) -> Vec<RelationOutcome> {
    relations
        .iter()
        .map(|r| {
            let predicted = match (layout.first_named(&r.subject), layout.first_named(&r.object)) {
                (Some(s), Some(o)) => Some(classify_relation(&s.bbox, &o.bbox)),
                _ => None,
            };
            RelationOutcome {
                expected: r.clone(),
                predicted,
                correct: predicted == Some(r.relation),
            }
        })
        .collect()
}

/// How relation outcomes roll up into spatial accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialMode {
    /// Each relation counts once.
    #[default]
    PerRelation,
    /// A prompt counts as correct only if all its relations are.
    PerPrompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountingSummary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub cases: usize,
}

/// Micro-averaged P/R/F1 and per-case exact-match accuracy.
pub fn aggregate(stats: &[CountingStats]) -> Result<CountingSummary, MetricsError> {
    if stats.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let matched: u64 = stats.iter().map(|s| s.matched as u64).sum();
    let pred: u64 = stats.iter().map(|s| s.pred_total as u64).sum();
    let gt: u64 = stats.iter().map(|s| s.gt_total as u64).sum();
    let frac = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let precision = frac(matched, pred);
    let recall = frac(matched, gt);
    let exact = stats.iter().filter(|s| s.exact).count() as u64;
    Ok(CountingSummary {
        precision,
        recall,
        f1: f1_score(precision, recall),
        accuracy: frac(exact, stats.len() as u64),
        cases: stats.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialSummary {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub cases: usize,
    pub mode: SpatialMode,
}

/// `per_case` holds `(correct, total)` relation counts for each spatial case.
pub fn aggregate_spatial(
    per_case: &[(usize, usize)],
    mode: SpatialMode,
) -> Result<SpatialSummary, MetricsError> {
    if per_case.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let (correct, total) = match mode {
        SpatialMode::PerRelation => per_case
            .iter()
            .fold((0, 0), |(c, t), (cc, ct)| (c + cc, t + ct)),
        SpatialMode::PerPrompt => (
            per_case.iter().filter(|(c, t)| *t > 0 && c == t).count(),
            per_case.len(),
        ),
    };
    Ok(SpatialSummary {
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        correct,
        total,
        cases: per_case.len(),
        mode,
    })
}

/// Turns an image into detections; an object detector plugs in here for
/// image-side evaluation.
pub trait Detector: Send + Sync {
    fn detect(&self, image: &Path) -> Result<Layout, String>;
}

/// One line of the per-case CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRow {
    pub case_id: String,
    pub task: Task,
    pub matched: u32,
    pub pred_total: u32,
    pub gt_total: u32,
    pub exact: bool,
    pub spatial_correct: usize,
    pub spatial_total: usize,
}

pub fn write_csv<W: io::Write>(rows: &[CaseRow], out: W) -> Result<(), MetricsError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record([
            "case_id",
            "task",
            "matched",
            "pred_total",
            "gt_total",
            "exact",
            "spatial_correct",
            "spatial_total",
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<CaseRow>, MetricsError> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(MetricsError::from)).collect()
}

fn pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.2}", v * 100.0),
        None => "n/a".into(),
    }
}

/// Summary table: four numerical columns and one spatial column, percentages
/// with two decimals.
pub fn render_markdown(counting: Option<&CountingSummary>, spatial: Option<&SpatialSummary>) -> String {
    let mut s = String::new();
    s.push_str("| Numerical Prec. | Numerical Rec. | Numerical F1 | Numerical Acc. | Spatial Acc. |\n");
    s.push_str("|---:|---:|---:|---:|---:|\n");
    let _ = writeln!(
        s,
        "| {} | {} | {} | {} | {} |",
        pct(counting.map(|c| c.precision)),
        pct(counting.map(|c| c.recall)),
        pct(counting.map(|c| c.f1)),
        pct(counting.map(|c| c.accuracy)),
        pct(spatial.map(|c| c.accuracy)),
    );
    s.push('\n');
    let _ = writeln!(
        s,
        "Numerical cases: {}. Spatial cases: {} ({} relations, {}).",
        counting.map_or(0, |c| c.cases),
        spatial.map_or(0, |c| c.cases),
        spatial.map_or(0, |c| c.total),
        match spatial.map(|c| c.mode).unwrap_or_default() {
            SpatialMode::PerRelation => "per-relation accuracy",
            SpatialMode::PerPrompt => "per-prompt accuracy",
        }
    );
    s.push_str("Numerical Acc. is the fraction of prompts whose predicted counts match the ground truth exactly.\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::BoundingBox;
    use proptest::prelude::*;

    fn counts(pairs: &[(&str, u32)]) -> Counts {
        canonical_counts(pairs.iter().copied())
    }

    fn centered(cx: f64, cy: f64) -> BoundingBox {
        BoundingBox::new(cx - 0.05, cy - 0.05, cx + 0.05, cy + 0.05).unwrap()
    }

    #[test]
    fn layout_count_examples() {
        let mut l = Layout::new("", 512);
        for n in ["apple", "apple", "dog"] {
            l.add(n, centered(0.5, 0.5)).unwrap();
        }
        assert_eq!(layout_counts(&l), counts(&[("apple", 2), ("dog", 1)]));
        assert!(layout_counts(&Layout::new("", 512)).is_empty());
        let mut mixed = Layout::new("", 512);
        mixed.add("Apple", centered(0.5, 0.5)).unwrap();
        mixed.add("APPLES", centered(0.5, 0.5)).unwrap();
        assert_eq!(layout_counts(&mixed), counts(&[("apple", 2)]));
    }

    #[test]
    fn counting_examples() {
        let s = counting_metrics(&counts(&[("apple", 2)]), &counts(&[("apple", 2)]));
        assert_eq!((s.matched, s.exact), (2, true));
        assert_eq!((s.precision(), s.recall(), s.f1()), (1.0, 1.0, 1.0));

        let s = counting_metrics(
            &counts(&[("apple", 2), ("dog", 2)]),
            &counts(&[("apple", 3), ("dog", 1)]),
        );
        assert_eq!(
            s,
            CountingStats { matched: 3, pred_total: 4, gt_total: 4, exact: false }
        );
        assert_eq!((s.precision(), s.recall(), s.f1()), (0.75, 0.75, 0.75));

        let s = counting_metrics(&Counts::new(), &counts(&[("apple", 1)]));
        assert_eq!((s.matched, s.precision(), s.recall(), s.exact), (0, 0.0, 0.0, false));
    }

    #[test]
    fn spatial_examples() {
        let mut l = Layout::new("", 512);
        l.add("dog", centered(0.2, 0.5)).unwrap();
        l.add("person", centered(0.8, 0.5)).unwrap();
        let out = spatial_accuracy(&l, &[GroundTruthRelation::new("dog", Relation::LeftOf, "person")]);
        assert!(out[0].correct);

        let out = spatial_accuracy(&l, &[GroundTruthRelation::new("cat", Relation::Above, "table")]);
        assert_eq!((out[0].predicted, out[0].correct), (None, false));

        let mut tie = Layout::new("", 512);
        tie.add("a", BoundingBox::new(0.1, 0.1, 0.3, 0.3).unwrap()).unwrap();
        tie.add("b", BoundingBox::new(0.4, 0.4, 0.6, 0.6).unwrap()).unwrap();
        let out = spatial_accuracy(&tie, &[GroundTruthRelation::new("a", Relation::LeftOf, "b")]);
        assert_eq!((out[0].predicted, out[0].correct), (Some(Relation::Above), false));
    }

    #[test]
    fn first_instance_is_used() {
        let mut l = Layout::new("", 512);
        l.add("dog", centered(0.2, 0.5)).unwrap();
        l.add("dog", centered(0.9, 0.5)).unwrap();
        l.add("cat", centered(0.5, 0.5)).unwrap();
        let out = spatial_accuracy(&l, &[GroundTruthRelation::new("dog", Relation::LeftOf, "cat")]);
        assert!(out[0].correct);
    }

    #[test]
    fn aggregate_examples() {
        let single = CountingStats { matched: 3, pred_total: 4, gt_total: 4, exact: false };
        let r = aggregate(&[single]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.accuracy), (0.75, 0.75, 0.75, 0.0));

        let a = CountingStats { matched: 2, pred_total: 2, gt_total: 2, exact: true };
        let b = CountingStats { matched: 0, pred_total: 2, gt_total: 2, exact: false };
        let r = aggregate(&[a, b]).unwrap();
        assert_eq!((r.precision, r.recall, r.accuracy), (0.5, 0.5, 0.5));

        let r = aggregate(&[a, a, a]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(matches!(aggregate(&[]), Err(MetricsError::EmptyInput)));
    }

    #[test]
    fn spatial_modes() {
        let per_case = [(2, 2), (1, 2), (0, 1)];
        let rel = aggregate_spatial(&per_case, SpatialMode::PerRelation).unwrap();
        assert_eq!((rel.correct, rel.total), (3, 5));
        let prompt = aggregate_spatial(&per_case, SpatialMode::PerPrompt).unwrap();
        assert_eq!((prompt.correct, prompt.total), (1, 3));
        assert!(aggregate_spatial(&[], SpatialMode::PerPrompt).is_err());
    }

    #[test]
    fn csv_round_trip_and_header() {
        let rows = vec![CaseRow {
            case_id: "n1".into(),
            task: Task::Numerical,
            matched: 2,
            pred_total: 3,
            gt_total: 2,
            exact: false,
            spatial_correct: 0,
            spatial_total: 0,
        }];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "case_id,task,matched,pred_total,gt_total,exact,spatial_correct,spatial_total\nn1,numerical,2,3,2,false,0,0\n"
        );
        assert_eq!(read_csv(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn markdown_has_five_metric_columns() {
        let c = CountingSummary { precision: 0.9328, recall: 0.8776, f1: 0.9044, accuracy: 0.7477, cases: 4 };
        let md = render_markdown(Some(&c), None);
        let row = md.lines().nth(2).unwrap();
        assert_eq!(row, "| 93.28 | 87.76 | 90.44 | 74.77 | n/a |");
        assert_eq!(md.lines().next().unwrap().matches('|').count(), 6);
    }

    fn small_counts() -> impl Strategy<Value = Counts> {
        prop::collection::btree_map(
            prop::sample::select(vec!["apple", "dog", "cat", "cup", "kite"]).prop_map(String::from),
            0u32..6,
            0..5,
        )
        .prop_map(|m| m.into_iter().filter(|(_, v)| *v > 0).collect())
    }

    proptest! {
        #[test]
        fn metric_bounds_and_symmetry(pred in small_counts(), gt in small_counts()) {
            let s = counting_metrics(&pred, &gt);
            let t = counting_metrics(&gt, &pred);
            prop_assert!(s.matched <= s.pred_total.min(s.gt_total));
            prop_assert_eq!(s.precision(), t.recall());
            for v in [s.precision(), s.recall(), s.f1()] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if s.precision() > 0.0 && s.recall() > 0.0 {
                let (lo, hi) = (s.precision().min(s.recall()), s.precision().max(s.recall()));
                prop_assert!(s.f1() >= lo - 1e-12 && s.f1() <= hi + 1e-12);
            }
        }

        #[test]
        fn aggregate_is_order_invariant(cases in prop::collection::vec((small_counts(), small_counts()), 1..12)) {
            let stats: Vec<_> = cases.iter().map(|(p, g)| counting_metrics(p, g)).collect();
            let mut rev = stats.clone();
            rev.reverse();
            prop_assert_eq!(aggregate(&stats).unwrap(), aggregate(&rev).unwrap());
        }
    }
}
