//! Deterministic offline backend: a rule engine over the CEE keyed by the
//! template marker of each prompt.

use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use super::prompts::{section, PromptKind};
use super::{BackendError, CompletionBackend};
use crate::cee::CeeTree;
use crate::{deep_rag, detector, handler, metrics, planner, ranker, text};

pub struct MockBackend {
    tree: Arc<CeeTree>,
    latency: Option<Duration>,
}

impl MockBackend {
    pub fn new(tree: Arc<CeeTree>) -> Self {
        MockBackend { tree, latency: None }
    }

    /// Sleep this long before every reply.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    fn reply(&self, kind: PromptKind, prompt: &str) -> Result<Value, BackendError> {
        let get = |tag: &str| {
            section(prompt, tag).ok_or_else(|| BackendError::Protocol(format!("{kind} prompt lacks <{tag}>")))
        };
        let tree = &self.tree;
        Ok(match kind {
            PromptKind::Planner => json!({ "summary": planner::heuristic_summary(tree, get("code_unit")?) }),
            PromptKind::DetectorScenario => detector::heuristic_labels(tree, get("code")?, get("scenario")?),
            PromptKind::DetectorProperty => detector::heuristic_labels(tree, get("code")?, get("property")?),
            PromptKind::Predator => {
                let listed = deep_rag::parse_listing(get("exception_branches")?);
                let types = deep_rag::heuristic_prediction(tree, get("code_unit")?, &listed);
                json!({ "ExceptionNodes": types.iter().map(|t| json!({"ExceptionType": t})).collect::<Vec<_>>() })
            }
            PromptKind::Ranker => {
                ranker::heuristic_scores(tree, get("exception_nodes")?, get("code")?, get("code_summary")?)
            }
            PromptKind::Handler => {
                json!({ "optimized_code": handler::heuristic_handler(get("code_unit")?, get("strategies")?) })
            }
            PromptKind::Judge => {
                let v = metrics::heuristic_verdict(tree, get("code")?, get("exception_branches")?);
                json!({ "verdict": v })
            }
            PromptKind::CeeGenScenario => {
                json!({ "scenario": generated_scenario(tree, get("ename")?.trim(), get("sample_desc")?) })
            }
            PromptKind::CeeGenProperty => {
                let ename = get("ename")?.trim();
                let scenario = get("scenario")?.trim().to_string();
                let property = match tree.get(ename) {
                    Some(n) if !n.property.trim().is_empty() => n.property.clone(),
                    _ => format!("{ename} signals that the program failed to {scenario}"),
                };
                json!({ "scenario": scenario, "property": property })
            }
        })
    }
}

fn generated_scenario(tree: &CeeTree, ename: &str, sample_desc: &str) -> String {
    let base = match tree.get(ename) {
        Some(n) if !n.scenario.trim().is_empty() => n.scenario.trim().to_string(),
        _ => format!("raise {ename}"),
    };
    let context = text::truncate_words(sample_desc.trim(), 60);
    if context.is_empty() {
        base
    } else {
        format!("{base}. Typical context: {context}")
    }
}

impl CompletionBackend for MockBackend {
    fn send(&self, prompt: &str) -> Result<String, BackendError> {
        if let Some(d) = self.latency {
            std::thread::sleep(d);
        }
        let kind = PromptKind::of_prompt(prompt)
            .ok_or_else(|| BackendError::Protocol("prompt carries no template marker".into()))?;
        Ok(self.reply(kind, prompt)?.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{bind, render};

    fn mock() -> MockBackend {
        MockBackend::new(Arc::new(CeeTree::bundled()))
    }

    #[test]
    fn unknown_marker_is_protocol_error() {
        assert!(matches!(mock().send("hello"), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn every_template_answers_schema_valid_json() {
        let tree = CeeTree::bundled();
        let m = mock();
        let code = "Reader r = new FileReader(path);";
        for kind in crate::llm::ALL_KINDS {
            let bindings = kind
                .template()
                .placeholders
                .iter()
                .map(|&p| {
                    let v = match p {
                        "code" | "code_unit" => format!("1| {code}"),
                        "scenario" => detector::label_document(&tree, false),
                        "property" => detector::label_document(&tree, true),
                        "ename" => "IOException".into(),
                        "exception_nodes" => ranker::node_listing(&tree, &["IOException".to_string()]),
                        "strategies" => handler::strategy_listing(&tree, &["IOException".to_string()]).unwrap(),
                        _ => "file".into(),
                    };
                    (p, v)
                })
                .collect();
            let prompt = render(kind, &bindings).unwrap();
            let reply: Value = serde_json::from_str(&m.send(&prompt).unwrap()).unwrap();
            kind.template().check(&reply).unwrap_or_else(|f| panic!("{kind}: missing {f}"));
        }
    }

    #[test]
    fn scenario_prompt_labels_file_reader() {
        let tree = CeeTree::bundled();
        let prompt = render(
            PromptKind::DetectorScenario,
            &bind([("scenario", detector::label_document(&tree, false)), ("code", "7| int a;\n8| new FileReader(p);".into())]),
        )
        .unwrap();
        let v: Value = serde_json::from_str(&mock().send(&prompt).unwrap()).unwrap();
        assert_eq!(v["code_with_label"][0]["labels"], "None");
        assert_eq!(v["code_with_label"][1]["line"], 8);
        assert_eq!(v["code_with_label"][1]["labels"], json!(["IOException"]));
    }

    #[test]
    fn latency_is_injected() {
        let m = mock().with_latency(Duration::from_millis(30));
        let t = std::time::Instant::now();
        let _ = m.send("#template: judge\n<code>\nx\n</code>\n<exception_branches>\n\n</exception_branches>");
        assert!(t.elapsed() >= Duration::from_millis(30));
    }
}
