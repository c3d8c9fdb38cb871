use exguard_bench::{edit_pair, synthetic_source};
use exguard_core::pipeline::{self, PipelineConfig};

#[test]
fn synthetic_source_is_analyzable_and_patched_everywhere() {
    let analyzer = pipeline::analyzer(&PipelineConfig { workers: 2, ..Default::default() }).unwrap();
    let run = analyzer.analyze_sources(&[("Synthetic.java".into(), synthetic_source(12))]).unwrap();
    // Every method except the `length` one (no fragile call) gets a patch.
    assert_eq!(run.report.summary.patches, 10);
    assert_eq!(run.report.summary.violations, 0);
}

#[test]
fn edit_pair_differs_where_asked() {
    let (a, b) = edit_pair(10, 5);
    let changed = a.lines().zip(b.lines()).filter(|(x, y)| x != y).count();
    assert_eq!(changed, 2);
    assert_eq!(edit_pair(4, 0).0, edit_pair(4, 0).1);
}
