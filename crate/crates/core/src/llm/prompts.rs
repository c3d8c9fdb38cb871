//! Prompt templates and their output contracts.
//!
//! Every template starts with a `#template: <name>` marker line and wraps
//! each bound value in `<tag>` ... `</tag>` so that the offline mock can
//! recover its inputs from the prompt alone.

use std::collections::BTreeMap;
use std::fmt;

use serde_json::Value;

use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PromptKind {
    Planner,
    DetectorScenario,
    DetectorProperty,
    Predator,
    Ranker,
    Handler,
    Judge,
    CeeGenScenario,
    CeeGenProperty,
}

pub const ALL_KINDS: [PromptKind; 9] = [
    PromptKind::Planner,
    PromptKind::DetectorScenario,
    PromptKind::DetectorProperty,
    PromptKind::Predator,
    PromptKind::Ranker,
    PromptKind::Handler,
    PromptKind::Judge,
    PromptKind::CeeGenScenario,
    PromptKind::CeeGenProperty,
];

impl PromptKind {
    pub fn name(self) -> &'static str {
        match self {
            PromptKind::Planner => "planner",
            PromptKind::DetectorScenario => "detector-scenario",
            PromptKind::DetectorProperty => "detector-property",
            PromptKind::Predator => "predator",
            PromptKind::Ranker => "ranker",
            PromptKind::Handler => "handler",
            PromptKind::Judge => "judge",
            PromptKind::CeeGenScenario => "cee-genscenario",
            PromptKind::CeeGenProperty => "cee-genproperty",
        }
    }

    pub fn from_name(name: &str) -> Option<PromptKind> {
        ALL_KINDS.iter().copied().find(|k| k.name() == name)
    }

    pub fn template(self) -> &'static PromptTemplate {
        &TEMPLATES[ALL_KINDS.iter().position(|&k| k == self).unwrap()]
    }

    /// Template named by the marker line of a rendered prompt.
    pub fn of_prompt(prompt: &str) -> Option<PromptKind> {
        let first = prompt.lines().next()?;
        PromptKind::from_name(first.strip_prefix(MARKER)?.trim())
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const MARKER: &str = "#template: ";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldType {
    Str,
    Number,
    Array,
    Any,
}

/// Required top-level field of a template's JSON reply. For arrays,
/// `item_fields` lists keys every element object must carry.
#[derive(Debug, Clone, Copy)]
pub struct Field {
    pub name: &'static str,
    pub ty: FieldType,
    pub item_fields: &'static [&'static str],
}

#[derive(Debug)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    pub placeholders: &'static [&'static str],
    pub body: &'static str,
    pub schema: &'static [Field],
}

impl PromptTemplate {
    /// Check a parsed reply against the contract; returns the first
    /// missing or mistyped field.
    pub fn check(&self, value: &Value) -> Result<(), String> {
        let obj = value.as_object().ok_or_else(|| "<object>".to_string())?;
        for field in self.schema {
            let v = obj.get(field.name).ok_or_else(|| field.name.to_string())?;
            let ok = match field.ty {
                FieldType::Str => v.is_string(),
                FieldType::Number => v.is_number(),
                FieldType::Array => v.is_array(),
                FieldType::Any => true,
            };
            if !ok {
                return Err(field.name.to_string());
            }
            if let Some(items) = v.as_array() {
                for item in items {
                    for key in field.item_fields {
                        if item.get(key).is_none() {
                            return Err(format!("{}[].{}", field.name, key));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

const fn f(name: &'static str, ty: FieldType) -> Field {
    Field { name, ty, item_fields: &[] }
}

static TEMPLATES: [PromptTemplate; 9] = [
    PromptTemplate {
        kind: PromptKind::Planner,
        placeholders: &["code_unit"],
        body: "#template: planner
You are a software engineer reading one unit of a Java codebase. The unit was cut to stay under 200 lines with shallow nesting so it can be read on its own.

Summarize, at the level of its functions, what the unit does. Name the APIs it calls and the resources it touches. Keep it under 120 words.

[Code Unit]
<code_unit>
{code_unit}
</code_unit>

Reply with JSON only:
{\"summary\": \"...\"}
",
        schema: &[f("summary", FieldType::Str)],
    },
    PromptTemplate {
        kind: PromptKind::DetectorScenario,
        placeholders: &["scenario", "code"],
        body: "#template: detector-scenario
You audit Java code. Below is a list of exception scenarios, one per line, each tagged with its exception type in square brackets, followed by a numbered Java snippet.

Tag every line of the snippet with every scenario it falls under. A line that falls under no scenario is tagged \"None\".

[Scenario description]
<scenario>
{scenario}
</scenario>

[Java code]
<code>
{code}
</code>

Reply with JSON only, keeping the line numbers:
{\"code_with_label\": [{\"line\": 1, \"labels\": [\"SomeException\"]}, {\"line\": 2, \"labels\": \"None\"}]}
",
        schema: &[Field { name: "code_with_label", ty: FieldType::Array, item_fields: &["line", "labels"] }],
    },
    PromptTemplate {
        kind: PromptKind::DetectorProperty,
        placeholders: &["property", "code"],
        body: "#template: detector-property
You audit Java code. Below is a list of exception properties, one per line, each tagged with its exception type in square brackets, followed by a numbered Java snippet.

Tag every line of the snippet with every property it exhibits. A line that exhibits no property is tagged \"None\".

[Property description]
<property>
{property}
</property>

[Java code]
<code>
{code}
</code>

Reply with JSON only, keeping the line numbers:
{\"code_with_label\": [{\"line\": 1, \"labels\": [\"SomeException\"]}, {\"line\": 2, \"labels\": \"None\"}]}
",
        schema: &[Field { name: "code_with_label", ty: FieldType::Array, item_fields: &["line", "labels"] }],
    },
    PromptTemplate {
        kind: PromptKind::Predator,
        placeholders: &["code_unit", "code_summary", "exception_branches"],
        body: "#template: predator
You analyse Java code for the concrete exception types it can raise.

[Code Unit]
<code_unit>
{code_unit}
</code_unit>

[Code Summary]
<code_summary>
{code_summary}
</code_summary>

Using the summary and the candidate branches of the exception hierarchy below, pick the most specific exception types this code can raise. Only pick types listed under a branch.

[Potential Exception Branches]
<exception_branches>
{exception_branches}
</exception_branches>

Reply with JSON only:
{\"ExceptionNodes\": [{\"ExceptionType\": \"ExceptionType1\"}, {\"ExceptionType\": \"ExceptionType2\"}]}
",
        schema: &[Field { name: "ExceptionNodes", ty: FieldType::Array, item_fields: &["ExceptionType"] }],
    },
    PromptTemplate {
        kind: PromptKind::Ranker,
        placeholders: &["exception_nodes", "code", "code_summary"],
        body: "#template: ranker
You rank exceptions found in a Java code segment.

For each exception give:
- LikelihoodScore in [0, 1]: how likely the segment raises it, from its attributes and impact.
- SuitabilityScore in [0, 1]: how well the proposed handling strategy fits.

[Identified Exceptions and Handling Strategies]
<exception_nodes>
{exception_nodes}
</exception_nodes>

[Code Segment]
<code>
{code}
</code>

[Code Summary]
<code_summary>
{code_summary}
</code_summary>

Reply with JSON only:
{\"Exceptions\": [{\"ExceptionType\": \"ExceptionType1\", \"LikelihoodScore\": 0.0, \"SuitabilityScore\": 0.0}]}
",
        schema: &[Field {
            name: "Exceptions",
            ty: FieldType::Array,
            item_fields: &["ExceptionType", "LikelihoodScore", "SuitabilityScore"],
        }],
    },
    PromptTemplate {
        kind: PromptKind::Handler,
        placeholders: &["code_unit", "strategies"],
        body: "#template: handler
You specialise in Java exception handling. Wrap the code below in a single try block whose catch clauses follow the listed strategies, most specific type first. Keep the original statements unchanged and never leave a catch body empty.

[Code Unit]
<code_unit>
{code_unit}
</code_unit>

[Handling Strategy]
<strategies>
{strategies}
</strategies>

Reply with JSON only:
{\"optimized_code\": \"...\"}
",
        schema: &[f("optimized_code", FieldType::Str)],
    },
    PromptTemplate {
        kind: PromptKind::Judge,
        placeholders: &["code", "exception_branches"],
        body: "#template: judge
You review generated Java exception-handling code. Judge the try-catch block below as good or bad engineering practice: catch types should be specific to the risk, catch bodies must not be empty, and no catch may be unreachable because a supertype is caught earlier.

[Try-Catch Block]
<code>
{code}
</code>

[Exception Branches of the Wrapped Code]
<exception_branches>
{exception_branches}
</exception_branches>

Reply with JSON only:
{\"verdict\": \"good\"}
",
        schema: &[f("verdict", FieldType::Str)],
    },
    PromptTemplate {
        kind: PromptKind::CeeGenScenario,
        placeholders: &["sample_desc", "ename"],
        body: "#template: cee-genscenario
Below is a Java exception type and a sample description of the scenarios in which exceptions arise. Write a scenario description for this exception at the same level of detail as the sample.

[Sample Description]
<sample_desc>
{sample_desc}
</sample_desc>

[Exception]
<ename>
{ename}
</ename>

Reply with JSON only:
{\"scenario\": \"...\"}
",
        schema: &[f("scenario", FieldType::Str)],
    },
    PromptTemplate {
        kind: PromptKind::CeeGenProperty,
        placeholders: &["sample_desc", "ename", "scenario"],
        body: "#template: cee-genproperty
Below is a Java exception type, a sample description and the exception's scenario description. Write a property description for the exception at the same level of detail as the sample; you may adjust the scenario so that both agree.

[Sample Description]
<sample_desc>
{sample_desc}
</sample_desc>

[Exception]
<ename>
{ename}
</ename>

[Scenario Description]
<scenario>
{scenario}
</scenario>

Reply with JSON only:
{\"scenario\": \"...\", \"property\": \"...\"}
",
        schema: &[f("scenario", FieldType::Str), f("property", FieldType::Str)],
    },
];

/// Substitute `{name}` placeholders in one pass. Braces inside bound
/// values and any brace in the template that is not a placeholder of this
/// template are left alone.
pub fn render(kind: PromptKind, bindings: &BTreeMap<&str, String>) -> Result<String, GatewayError> {
    let template = kind.template();
    for name in template.placeholders {
        if !bindings.contains_key(name) {
            return Err(GatewayError::UnboundPlaceholder(name.to_string()));
        }
    }
    let body = template.body;
    let mut out = String::with_capacity(body.len() + bindings.values().map(|v| v.len()).sum::<usize>());
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = template.placeholders.iter().find(|name| {
            after.starts_with(**name) && after[name.len()..].starts_with('}')
        });
        match hit {
            Some(name) => {
                out.push_str(&bindings[name]);
                rest = &after[name.len() + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Convenience for building bindings inline.
pub fn bind<const N: usize>(pairs: [(&'static str, String); N]) -> BTreeMap<&'static str, String> {
    pairs.into_iter().collect()
}

/// Text between `<tag>\n` and the last `\n</tag>` of a rendered prompt.
pub fn section<'a>(prompt: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>\n");
    let close = format!("\n</{tag}>");
    let start = prompt.find(&open)? + open.len();
    let end = prompt.rfind(&close)?;
    if end < start {
        return Some("");
    }
    Some(&prompt[start..end])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_template_declares_its_placeholders() {
        for kind in ALL_KINDS {
            let t = kind.template();
            assert_eq!(t.kind, kind);
            assert!(t.body.starts_with(&format!("{MARKER}{}\n", kind.name())));
            for p in t.placeholders {
                assert_eq!(t.body.matches(&format!("{{{p}}}")).count(), 1, "{kind}: {p}");
                assert!(t.body.contains(&format!("<{p}>\n{{{p}}}\n</{p}>")), "{kind}: {p}");
            }
        }
    }

    #[test]
    fn renders_bindings_verbatim() {
        let out = render(
            PromptKind::DetectorScenario,
            &bind([("scenario", "- [IOException] file".into()), ("code", "1| if (x) { y(); }".into())]),
        )
        .unwrap();
        assert!(out.contains("- [IOException] file"));
        assert!(out.contains("1| if (x) { y(); }"));
        assert!(!out.contains("{code}") && !out.contains("{scenario}"));
        assert_eq!(PromptKind::of_prompt(&out), Some(PromptKind::DetectorScenario));
        assert_eq!(section(&out, "code"), Some("1| if (x) { y(); }"));
    }

    #[test]
    fn braces_in_bindings_are_not_reinterpreted() {
        let out = render(
            PromptKind::CeeGenScenario,
            &bind([("sample_desc", "{ename}".into()), ("ename", "IOException".into())]),
        )
        .unwrap();
        assert!(out.contains("<sample_desc>\n{ename}\n</sample_desc>"));
    }

    #[test]
    fn missing_binding_is_an_error() {
        let err = render(PromptKind::DetectorScenario, &bind([("scenario", "s".into())])).unwrap_err();
        assert!(matches!(err, GatewayError::UnboundPlaceholder(ref p) if p == "code"));
    }

    #[test]
    fn schema_check_reports_first_missing_field() {
        let t = PromptKind::Ranker.template();
        let bad = serde_json::json!({"Exceptions": [{"ExceptionType": "X", "LikelihoodScore": 1}]});
        assert_eq!(t.check(&bad).unwrap_err(), "Exceptions[].SuitabilityScore");
        let t = PromptKind::CeeGenProperty.template();
        assert_eq!(t.check(&serde_json::json!({"scenario": "s"})).unwrap_err(), "property");
    }
}
