//! Latency benchmark: one backend call per branch, issued sequentially and
//! on a pool of K workers.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::cee::{CeeTree, NodeInfo, RawNode, ROOT_NAME};
use crate::deep_rag;
use crate::llm::{BackendConfig, Gateway, MockBackend};

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub latency_ms: u64,
    pub branches: usize,
    pub k: usize,
    pub calls: usize,
    pub sequential_ms: f64,
    pub parallel_ms: f64,
    /// Parallel wall time over sequential wall time.
    pub ratio: f64,
}

/// A valid tree with `branches` leaf branches under `Exception`.
pub fn synthetic_tree(branches: usize) -> CeeTree {
    let leaf = |i: usize| {
        let name = format!("Synthetic{i}Exception");
        RawNode {
            info: NodeInfo {
                handle_logic: format!("log the failure of operation {i}"),
                dangerous_operations: format!("operation{i} calls"),
                ..Default::default()
            },
            scenario: format!("operation {i} fails"),
            property: format!("{name} reports that operation {i} failed"),
            children: Vec::new(),
            name,
        }
    };
    let exception = RawNode {
        name: "Exception".into(),
        children: (0..branches).map(leaf).collect(),
        info: NodeInfo { handle_logic: "log and rethrow".into(), ..Default::default() },
        scenario: "a recoverable failure".into(),
        property: "Exception reports a recoverable failure".into(),
    };
    let root = RawNode {
        name: ROOT_NAME.into(),
        children: vec![exception],
        info: NodeInfo::default(),
        scenario: String::new(),
        property: String::new(),
    };
    CeeTree::from_raw(&root).expect("synthetic tree is valid")
}

fn timed_labels(tree: &CeeTree, gateway: &Gateway, workers: usize) -> (f64, usize) {
    let t = Instant::now();
    let labels = deep_rag::assign_labels(tree, gateway, workers);
    (t.elapsed().as_secs_f64() * 1000.0, labels.len())
}

/// Label every branch of a synthetic tree through a mock backend that
/// sleeps `latency` per call, once with one worker and once with `k`.
pub fn run(latency: Duration, branches: usize, k: usize) -> BenchReport {
    let k = k.max(1);
    let tree = Arc::new(synthetic_tree(branches));
    let config = BackendConfig { max_in_flight: k, ..Default::default() };
    let gateway = Gateway::new(Arc::new(MockBackend::new(tree.clone()).with_latency(latency)), config);
    let (sequential_ms, calls) = timed_labels(&tree, &gateway, 1);
    let (parallel_ms, _) = timed_labels(&tree, &gateway, k);
    let ratio = if sequential_ms > 0.0 { parallel_ms / sequential_ms } else { 0.0 };
    BenchReport { latency_ms: latency.as_millis() as u64, branches, k, calls, sequential_ms, parallel_ms, ratio }
}
