//! End-to-end orchestration: segmentation, detection, retrieval, ranking
//! and handling over a set of Java sources.

pub mod bench;
pub mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;
use walkdir::WalkDir;

use crate::cee::{self, CeeTree};
use crate::deep_rag::{self, BranchLabel, Retrieval, Verification, VerificationSample};
use crate::detector::{self, SensitiveSegment};
use crate::handler::{self, Patch, Violation};
use crate::llm::{CompletionBackend, Gateway, MockBackend, RemoteBackend};
use crate::metrics::{self, EvaluationReport, FileDetections, FileTruth, GeneratedBlock};
use crate::planner::{self, CodeUnit, SourceFile};
use crate::pool::bounded_map;
use crate::ranker::{self, RankedException};

pub use config::{ConfigError, PipelineConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("backend failure: {0}")]
    Backend(String),
}

impl PipelineError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Input(_) => 2,
            PipelineError::Backend(_) => 3,
        }
    }
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Invalid(_) => PipelineError::Usage(e.to_string()),
            _ => PipelineError::Input(e.to_string()),
        }
    }
}

/// Load the configured CEE, or the bundled one.
pub fn load_tree(config: &PipelineConfig) -> Result<CeeTree, PipelineError> {
    match &config.cee {
        Some(p) => cee::load_cee(p).map_err(|e| PipelineError::Input(e.to_string())),
        None => Ok(CeeTree::bundled()),
    }
}

pub fn load_samples(config: &PipelineConfig, tree: &CeeTree) -> Result<Vec<VerificationSample>, PipelineError> {
    let r = match &config.samples {
        Some(p) => deep_rag::load_samples(p, tree),
        None => deep_rag::parse_samples(deep_rag::BUNDLED_SAMPLES, tree),
    };
    r.map_err(|e| PipelineError::Input(e.to_string()))
}

/// Mock backend unless the config asks for the live one. The live
/// credential is read from the environment and never logged.
pub fn make_gateway(config: &PipelineConfig, tree: &Arc<CeeTree>) -> Result<Gateway, PipelineError> {
    let mut backend_config = config.backend.clone();
    backend_config.max_in_flight = config.workers;
    let backend: Arc<dyn CompletionBackend> = if config.live {
        if std::env::var(&backend_config.api_key_env).map_or(true, |k| k.is_empty()) {
            log::warn!("{} is not set; sending requests without a credential", backend_config.api_key_env);
        }
        Arc::new(RemoteBackend::new(&backend_config))
    } else {
        Arc::new(MockBackend::new(tree.clone()))
    };
    Ok(Gateway::new(backend, backend_config))
}

/// `.java` files under `root` (or `root` itself), keyed by `/`-separated
/// path relative to `root`, sorted. `skip` is excluded from the walk.
pub fn discover(root: &Path, skip: Option<&Path>) -> Result<Vec<(String, PathBuf)>, PipelineError> {
    if !root.exists() {
        return Err(PipelineError::Input(format!("{} does not exist", root.display())));
    }
    if root.is_file() {
        let name = root.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
        return Ok(vec![(name, root.to_path_buf())]);
    }
    let skip = skip.and_then(|s| s.canonicalize().ok());
    let mut out = Vec::new();
    let walker = WalkDir::new(root).sort_by_file_name().into_iter().filter_entry(|e| {
        skip.as_ref().is_none_or(|s| e.path().canonicalize().map_or(true, |p| &p != s))
    });
    for entry in walker {
        let entry = entry.map_err(|e| PipelineError::Input(e.to_string()))?;
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|x| x == "java") {
            let rel = entry.path().strip_prefix(root).unwrap_or(entry.path());
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            out.push((key, entry.path().to_path_buf()));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(PipelineError::Input(format!("no .java files under {}", root.display())));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentTrace {
    pub id: String,
    pub start: usize,
    pub end: usize,
    pub origin: Vec<detector::Origin>,
    pub hints: BTreeSet<String>,
    pub detected_types: BTreeSet<String>,
    pub activated: BTreeSet<String>,
    pub retrievals: Vec<Retrieval>,
    pub predicted: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct UnitTrace {
    pub unit: CodeUnit,
    pub summary: String,
    pub summary_degraded: bool,
    pub segments: Vec<SegmentTrace>,
    pub ranked: Vec<RankedException>,
    pub selected: Vec<String>,
    pub rejected: Vec<String>,
    pub patches: Vec<Patch>,
    pub warnings: Vec<String>,
    pub degraded: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileTrace {
    pub path: String,
    pub units: Vec<UnitTrace>,
    pub patched: bool,
    /// Violations inside inserted handling code.
    pub violations: Vec<Violation>,
    /// Violations in code the run did not write.
    pub warnings: Vec<Violation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub files: usize,
    pub units: usize,
    pub segments: usize,
    pub patches: usize,
    pub violations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub mode: &'static str,
    pub summary: RunSummary,
    pub labels: Vec<BranchLabel>,
    pub verification: Verification,
    pub files: Vec<FileTrace>,
    pub degraded_calls: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub setup_ms: u128,
    pub analysis_ms: u128,
    pub assembly_ms: u128,
    pub wall_ms: u128,
}

#[derive(Debug, Clone)]
pub struct Run {
    pub report: RunReport,
    /// Patched text per file key.
    pub patched: BTreeMap<String, String>,
    pub detections: Vec<FileDetections>,
    pub timings: Timings,
}

struct UnitOutcome {
    trace: UnitTrace,
    segments: Vec<SensitiveSegment>,
}

pub struct Analyzer {
    pub tree: Arc<CeeTree>,
    pub gateway: Gateway,
    pub config: PipelineConfig,
    pub labels: Vec<BranchLabel>,
    pub verification: Verification,
    setup_ms: u128,
}

impl Analyzer {
    /// Assign branch labels and verify them against `samples`, refining
    /// failing branches once.
    pub fn new(tree: Arc<CeeTree>, gateway: Gateway, config: PipelineConfig, samples: &[VerificationSample]) -> Self {
        let t = Instant::now();
        let mut labels = deep_rag::assign_labels(&tree, &gateway, config.workers);
        let verification =
            deep_rag::verify_and_refine(&mut labels, samples, &tree, &config.rag, &gateway, config.workers);
        if verification.refinements > 0 {
            log::info!("refined {} branch label(s) after verification", verification.refinements);
        }
        Analyzer { tree, gateway, config, labels, verification, setup_ms: t.elapsed().as_millis() }
    }

    fn analyze_unit(&self, unit: &CodeUnit) -> UnitOutcome {
        let tree = &*self.tree;
        let gw = &self.gateway;
        let summary = planner::summarize(unit, gw);
        let mut trace = UnitTrace {
            unit: unit.clone(),
            summary: summary.text.clone(),
            summary_degraded: summary.degraded,
            segments: Vec::new(),
            ranked: Vec::new(),
            selected: Vec::new(),
            rejected: Vec::new(),
            patches: Vec::new(),
            warnings: Vec::new(),
            degraded: summary.degraded,
            error: None,
        };
        let det = match detector::detect(unit, tree, gw) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("{}: {e}; unit skipped", unit.id);
                trace.error = Some(e.to_string());
                return UnitOutcome { trace, segments: Vec::new() };
            }
        };
        trace.degraded |= det.degraded;
        let mut candidates = Vec::new();
        for seg in &det.segments {
            let text = seg.text(unit);
            let query = deep_rag::query_for(&unit.id, &text, &summary, &seg.hints);
            let activated = deep_rag::activate(&query, &self.labels);
            let retrievals = deep_rag::retrieve(
                Some(&summary),
                std::slice::from_ref(&query),
                &activated,
                tree,
                &self.config.rag,
                self.config.workers,
            );
            debug_assert!(retrievals.iter().all(|r| activated.contains(&r.branch) && r.relevance >= self.config.rag.delta));
            let prediction = deep_rag::predict(&text, &summary, &retrievals, &seg.types, tree, gw);
            trace.degraded |= prediction.degraded;
            match ranker::score(&prediction.types, &text, &summary.text, tree, gw) {
                Ok((scored, degraded)) => {
                    trace.degraded |= degraded;
                    candidates.extend(ranker::build(&scored, &seg.id(), tree, &self.config.rank));
                }
                Err(e) => trace.warnings.push(format!("{}: {e}", seg.id())),
            }
            trace.segments.push(SegmentTrace {
                id: seg.id(),
                start: seg.start,
                end: seg.end,
                origin: seg.origin.iter().copied().collect(),
                hints: seg.hints.clone(),
                detected_types: seg.types.clone(),
                activated,
                retrievals,
                predicted: prediction.types,
            });
        }
        let ranked = ranker::rank(candidates);
        let selected = ranker::select(&ranked, self.config.rank.gamma);
        for r in ranker::rejected(&ranked, self.config.rank.gamma) {
            log::info!("{}: {} rejected with grade {:.3}", r.segment, r.type_name, r.grade);
            trace.rejected.push(format!("{} {}", r.segment, r.type_name));
        }
        trace.selected = selected.iter().map(|r| format!("{} {}", r.segment, r.type_name)).collect();
        trace.ranked = ranked;

        let mut per_segment: Vec<(SensitiveSegment, Vec<String>)> = Vec::new();
        for seg in &det.segments {
            let types: Vec<String> =
                selected.iter().filter(|r| r.segment == seg.id()).map(|r| r.type_name.clone()).collect();
            if types.is_empty() {
                continue;
            }
            match handler::plan_tryspan(seg.start, seg.end, &det.cfg) {
                Ok(_) => per_segment.push((seg.clone(), types)),
                Err(e) => trace.warnings.push(format!("{}: {e}", seg.id())),
            }
        }
        if !per_segment.is_empty() {
            match handler::generate(unit, &det.cfg, &per_segment, tree, gw) {
                Ok(g) => {
                    trace.degraded |= g.degraded;
                    for t in g.dropped {
                        trace.warnings.push(format!("no handling strategy for {t}"));
                    }
                    trace.patches = g.patches;
                }
                Err(e) => trace.warnings.push(e.to_string()),
            }
        }
        UnitOutcome { trace, segments: det.segments }
    }

    /// Analyze in-memory sources keyed by path. Units run on a pool of K
    /// workers; results are assembled in key and line order.
    pub fn analyze_sources(&self, sources: &[(String, String)]) -> Result<Run, PipelineError> {
        let wall = Instant::now();
        let mut units: Vec<(usize, CodeUnit)> = Vec::new();
        for (i, (key, text)) in sources.iter().enumerate() {
            let file = SourceFile::new(key.clone(), text.clone());
            let segmented = planner::segment(&file, self.config.unit_limit)
                .map_err(|e| PipelineError::Input(format!("{key}: {e}")))?;
            units.extend(segmented.into_iter().map(|u| (i, u)));
        }
        let t = Instant::now();
        let outcomes = bounded_map(&units, self.config.workers, |(_, u)| self.analyze_unit(u));
        let analysis_ms = t.elapsed().as_millis();

        let t = Instant::now();
        let mut files = Vec::new();
        let mut patched = BTreeMap::new();
        let mut detections = Vec::new();
        for (i, (key, text)) in sources.iter().enumerate() {
            let mine: Vec<&UnitOutcome> =
                units.iter().zip(&outcomes).filter(|((f, _), _)| *f == i).map(|(_, o)| o).collect();
            let patches: Vec<Patch> = mine.iter().flat_map(|o| o.trace.patches.iter().cloned()).collect();
            let whole = CodeUnit::from_text(key, 1, text);
            let optimized = handler::apply(&whole, &patches)
                .map_err(|e| PipelineError::Input(format!("{key}: {e}")))?;
            let (violations, warnings): (Vec<Violation>, Vec<Violation>) = handler::validate(&optimized.text, &self.tree)
                .into_iter()
                .partition(|v| optimized.patched_ranges.iter().any(|&(a, b)| a <= v.line && v.line <= b));
            for w in &warnings {
                log::warn!("{key}: pre-existing issue at {w}");
            }
            let blocks = optimized
                .patches
                .iter()
                .zip(&optimized.patched_ranges)
                .map(|(p, &(a, b))| GeneratedBlock {
                    text: optimized.text.split('\n').skip(a - 1).take(b + 1 - a).collect::<Vec<_>>().join("\n"),
                    branches: p.caught.iter().filter_map(|t| self.tree.branch_of(t).ok()).map(str::to_string).collect(),
                })
                .collect();
            detections.push(FileDetections {
                path: key.clone(),
                segments: mine.iter().flat_map(|o| o.segments.iter().map(|s| (s.start, s.end))).collect(),
                try_spans: optimized.patches.iter().map(|p| (p.start, p.end)).collect(),
                types: optimized.patches.iter().flat_map(|p| p.caught.iter().cloned()).collect(),
                generated: optimized.text.clone(),
                patched_ranges: optimized.patched_ranges.clone(),
                blocks,
            });
            files.push(FileTrace {
                path: key.clone(),
                units: mine.iter().map(|o| o.trace.clone()).collect(),
                patched: !patches.is_empty(),
                violations,
                warnings,
            });
            patched.insert(key.clone(), optimized.text);
        }
        let summary = RunSummary {
            files: files.len(),
            units: units.len(),
            segments: files.iter().flat_map(|f| &f.units).map(|u| u.segments.len()).sum(),
            patches: files.iter().flat_map(|f| &f.units).map(|u| u.patches.len()).sum(),
            violations: files.iter().map(|f| f.violations.len()).sum(),
        };
        let report = RunReport {
            mode: if self.config.live { "live" } else { "mock" },
            summary,
            labels: self.labels.clone(),
            verification: self.verification.clone(),
            files,
            degraded_calls: self.gateway.degraded_count(),
        };
        let assembly_ms = t.elapsed().as_millis();
        if self.config.live && self.gateway.answered_count() == 0 && self.gateway.exhausted_count() > 0 {
            return Err(PipelineError::Backend(format!(
                "no request succeeded ({} exhausted)",
                self.gateway.exhausted_count()
            )));
        }
        let timings = Timings {
            setup_ms: self.setup_ms,
            analysis_ms,
            assembly_ms,
            wall_ms: self.setup_ms + wall.elapsed().as_millis(),
        };
        Ok(Run { report, patched, detections, timings })
    }
}

/// Read every discovered file.
pub fn read_sources(files: &[(String, PathBuf)]) -> Result<Vec<(String, String)>, PipelineError> {
    files
        .iter()
        .map(|(k, p)| {
            std::fs::read_to_string(p)
                .map(|t| (k.clone(), t))
                .map_err(|e| PipelineError::Input(format!("{}: {e}", p.display())))
        })
        .collect()
}

/// Build an analyzer from config: tree, samples, gateway.
pub fn analyzer(config: &PipelineConfig) -> Result<Analyzer, PipelineError> {
    config.validate()?;
    let tree = Arc::new(load_tree(config)?);
    let samples = load_samples(config, &tree)?;
    let gateway = make_gateway(config, &tree)?;
    Ok(Analyzer::new(tree, gateway, config.clone(), &samples))
}

/// Write `report.json`, `timings.json` and the patched sources under
/// `config.output`. Input files are only read.
pub fn write_outputs(run: &Run, out: &Path) -> Result<(), PipelineError> {
    let io = |e: std::io::Error| PipelineError::Input(format!("writing {}: {e}", out.display()));
    std::fs::create_dir_all(out).map_err(io)?;
    let json = serde_json::to_string_pretty(&run.report).expect("report serializes");
    std::fs::write(out.join("report.json"), json + "\n").map_err(io)?;
    let json = serde_json::to_string_pretty(&run.timings).expect("timings serialize");
    std::fs::write(out.join("timings.json"), json + "\n").map_err(io)?;
    for (key, text) in &run.patched {
        let dest = out.join("patched").join(key);
        if let Some(parent) = dest.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        std::fs::write(dest, text).map_err(io)?;
    }
    Ok(())
}

/// Sidecars for every discovered file; missing ones are listed together.
pub fn load_ground_truth(
    files: &[(String, PathBuf)],
    tree: &CeeTree,
) -> Result<Vec<FileTruth>, PipelineError> {
    let missing: Vec<String> = files
        .iter()
        .filter(|(_, p)| !metrics::sidecar_path(p).exists())
        .map(|(_, p)| metrics::sidecar_path(p).display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::Input(format!("missing sidecars: {}", missing.join(", "))));
    }
    files
        .iter()
        .map(|(k, p)| metrics::load_truth(p, k, tree).map_err(|e| PipelineError::Input(e.to_string())))
        .collect()
}

/// Analyze a corpus and score it against its sidecars.
pub fn evaluate_corpus(root: &Path, analyzer: &Analyzer) -> Result<(EvaluationReport, Run), PipelineError> {
    let files = discover(root, Some(&analyzer.config.output))?;
    let truth = load_ground_truth(&files, &analyzer.tree)?;
    let run = analyzer.analyze_sources(&read_sources(&files)?)?;
    let report = metrics::evaluate(
        &truth,
        &run.detections,
        &analyzer.tree,
        &analyzer.config.acrs,
        &analyzer.gateway,
        analyzer.config.workers,
    )
    .map_err(|e| PipelineError::Input(e.to_string()))?;
    Ok((report, run))
}

/// Location of the bundled corpus in a source checkout.
pub fn bundled_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join("corpus")
}
