//! Regenerates `tests/data/bench20/`: a 20-case dataset, its run config,
//! replay fixtures recorded from the offline synthetic planner, and the
//! expected report files.
//!
//! ```text
//! cargo run -p layoutkit --example record_bench_fixtures [-- <out-dir>]
//! ```

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use layoutkit::backend::{RecordingBackend, ReplayStore};
use layoutkit::bench::{parse_dataset, run_bench, RunConfig};
use layoutkit::synthetic::SyntheticPlanner;

// (id, caption, ground truth json, planner answer)
const NUMERICAL: &[(&str, &str, &str, &str)] = &[
    ("num-01", "two apples and a cup on a wooden table", r#"{"apple":2,"cup":1}"#, "2 apple, 1 cup"),
    ("num-02", "three dogs playing in a park", r#"{"dog":3}"#, "3 dog"),
    ("num-03", "a cat sleeping next to two books", r#"{"cat":1,"book":2}"#, "1 cat, 2 book"),
    ("num-04", "four birds sitting on a fence", r#"{"bird":4}"#, "4 bird"),
    ("num-05", "five donuts and one coffee cup", r#"{"donut":5,"cup":1}"#, "5 donut, 1 cup"),
    ("num-06", "two horses and three sheep in a field", r#"{"horse":2,"sheep":3}"#, "2 horse, 2 sheep"),
    ("num-07", "a laptop, a mouse and two bottles on a desk", r#"{"laptop":1,"mouse":1,"bottle":2}"#, "1 laptop, 1 mouse, 2 bottle"),
    ("num-08", "six oranges in a bowl", r#"{"orange":6}"#, "6 orange"),
    ("num-09", "three umbrellas and two chairs on a beach", r#"{"umbrella":3,"chair":2}"#, "three umbrella, two chair"),
    ("num-10", "some kind of still life", r#"{"vase":1,"apple":2}"#, "a vase with apples"),
];

const SPATIAL: &[(&str, &str, &str, &str)] = &[
    ("sp-01", "a dog to the left of a cat", r#"[{"subject":"dog","relation":"left-of","object":"cat"}]"#, "dog, left; cat, right;"),
    ("sp-02", "a bird above a car", r#"[{"subject":"bird","relation":"above","object":"car"}]"#, "bird, top; car, bottom;"),
    ("sp-03", "a bench below a clock", r#"[{"subject":"bench","relation":"below","object":"clock"}]"#, "clock, top; bench, bottom;"),
    ("sp-04", "a horse to the right of a person", r#"[{"subject":"horse","relation":"right-of","object":"person"}]"#, "person, left; horse, right;"),
    ("sp-05", "a kite above a boat and a boat left of a dog", r#"[{"subject":"kite","relation":"above","object":"boat"},{"subject":"boat","relation":"left-of","object":"dog"}]"#, "kite, top; boat, bottom-left; dog, bottom-right;"),
    ("sp-06", "a cup to the left of a bottle", r#"[{"subject":"cup","relation":"left-of","object":"bottle"}]"#, "cup, left; bottle, right;"),
    ("sp-07", "a giraffe to the left of an elephant", r#"[{"subject":"giraffe","relation":"left-of","object":"elephant"}]"#, "giraffe, right; elephant, left;"),
    ("sp-08", "a plane above a train", r#"[{"subject":"airplane","relation":"above","object":"train"}]"#, "airplane, top; train, bottom;"),
    ("sp-09", "a lamp to the right of a sofa", r#"[{"subject":"lamp","relation":"right-of","object":"couch"}]"#, "couch, left; lamp, right;"),
    ("sp-10", "a pizza below a bowl", r#"[{"subject":"pizza","relation":"below","object":"bowl"}]"#, "bowl, top; pizza, bottom;"),
];

const CONFIG: &str = r#"# Run config for the recorded 20-case dataset.
exemplar_count = 2
include_negation = true
seed = 0
parallelism = 1

[backend]
kind = "replay"
dir = "fixtures"
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/bench20"));
    let fixtures = out.join("fixtures");
    if fixtures.exists() {
        fs::remove_dir_all(&fixtures)?;
    }
    fs::create_dir_all(&fixtures)?;

    let mut lines = Vec::new();
    let mut planner = SyntheticPlanner::new().with_noncompliance(0.15);
    for (id, caption, gt, answer) in NUMERICAL {
        lines.push(format!(
            r#"{{"id":"{id}","prompt":"{caption}","task":"numerical","gt_counts":{gt}}}"#
        ));
        planner = planner.with_answer(*caption, *answer);
    }
    for (id, caption, gt, answer) in SPATIAL {
        lines.push(format!(
            r#"{{"id":"{id}","prompt":"{caption}","task":"spatial","gt_relations":{gt}}}"#
        ));
        planner = planner.with_answer(*caption, *answer);
    }
    let dataset_text = lines.join("\n") + "\n";
    let dataset = parse_dataset(&dataset_text)?;
    fs::write(out.join("dataset.jsonl"), &dataset_text)?;
    let config_path = out.join("config.toml");
    fs::write(&config_path, CONFIG)?;

    let config = RunConfig::load(&config_path)?;
    let backend = RecordingBackend::new(planner, Arc::new(ReplayStore::open(&fixtures)));
    let lib = config.prompt_library()?;
    let outcome = run_bench(&dataset, &config, &backend, &lib);
    fs::write(out.join("expected_results.csv"), outcome.csv())?;
    fs::write(out.join("expected_summary.md"), outcome.markdown())?;
    println!("{}", outcome.markdown());
    println!(
        "recorded {} fixtures into {}",
        fs::read_dir(&fixtures)?.count(),
        fixtures.display()
    );
    Ok(())
}
