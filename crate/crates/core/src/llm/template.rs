use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::store::persist::sha256_hex;

use super::GatewayError;

/// A prompt body with `{{name}}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub body: String,
    pub required_vars: BTreeSet<String>,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").unwrap())
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        let required_vars = placeholder_re()
            .captures_iter(&body)
            .map(|c| c[1].to_string())
            .collect();
        Self {
            id: id.into(),
            body,
            required_vars,
        }
    }

    /// Substitutes every placeholder in a single pass. Fails on the first
    /// (alphabetically) unbound variable.
    pub fn render(&self, vars: &BTreeMap<String, String>) -> Result<RenderedPrompt, GatewayError> {
        if let Some(missing) = self.required_vars.iter().find(|v| !vars.contains_key(*v)) {
            return Err(GatewayError::MissingVar {
                template: self.id.clone(),
                var: missing.clone(),
            });
        }
        let text = placeholder_re()
            .replace_all(&self.body, |c: &regex::Captures<'_>| vars[&c[1]].clone())
            .into_owned();
        Ok(RenderedPrompt {
            template_id: self.id.clone(),
            hash: sha256_hex(text.as_bytes()),
            text,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub template_id: String,
    pub text: String,
    /// sha256 of `text`.
    pub hash: String,
}

pub mod ids {
    pub const FORMULATE: &str = "formulate";
    pub const GENERATE_PROGRAM: &str = "generate_program";
    pub const SELF_DEBUG: &str = "self_debug";
    pub const SELF_EXPLORE: &str = "self_explore";
    pub const GENERATE_INSIGHTS: &str = "generate_insights";
    pub const RETRIEVE_LABEL: &str = "retrieve_label";
    pub const RETRIEVE_CONDITION: &str = "retrieve_condition";
    pub const DIAGNOSE_ISSUES: &str = "diagnose_issues";
    pub const DIAGNOSE_POS_NEG: &str = "diagnose_pos_neg";
    pub const DIAGNOSE_UNRETRIEVED: &str = "diagnose_unretrieved";
    pub const REFINE_CONDITIONS: &str = "refine_conditions";
    pub const MERGE_INSIGHTS: &str = "merge_insights";
    pub const CLASSIFY_PROBLEM: &str = "classify_problem";
}

const BUILTIN: &[(&str, &str)] = &[
    (
        ids::FORMULATE,
        include_str!("../../assets/prompts/formulate.txt"),
    ),
    (
        ids::GENERATE_PROGRAM,
        include_str!("../../assets/prompts/generate_program.txt"),
    ),
    (
        ids::SELF_DEBUG,
        include_str!("../../assets/prompts/self_debug.txt"),
    ),
    (
        ids::SELF_EXPLORE,
        include_str!("../../assets/prompts/self_explore.txt"),
    ),
    (
        ids::GENERATE_INSIGHTS,
        include_str!("../../assets/prompts/generate_insights.txt"),
    ),
    (
        ids::RETRIEVE_LABEL,
        include_str!("../../assets/prompts/retrieve_label.txt"),
    ),
    (
        ids::RETRIEVE_CONDITION,
        include_str!("../../assets/prompts/retrieve_condition.txt"),
    ),
    (
        ids::DIAGNOSE_ISSUES,
        include_str!("../../assets/prompts/diagnose_issues.txt"),
    ),
    (
        ids::DIAGNOSE_POS_NEG,
        include_str!("../../assets/prompts/diagnose_pos_neg.txt"),
    ),
    (
        ids::DIAGNOSE_UNRETRIEVED,
        include_str!("../../assets/prompts/diagnose_unretrieved.txt"),
    ),
    (
        ids::REFINE_CONDITIONS,
        include_str!("../../assets/prompts/refine_conditions.txt"),
    ),
    (
        ids::MERGE_INSIGHTS,
        include_str!("../../assets/prompts/merge_insights.txt"),
    ),
    (
        ids::CLASSIFY_PROBLEM,
        include_str!("../../assets/prompts/classify_problem.txt"),
    ),
];

#[derive(Debug, Clone, Default)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateRegistry {
    /// The prompt assets compiled into the crate.
    pub fn builtin() -> Self {
        let mut registry = Self::default();
        for (id, body) in BUILTIN {
            registry.insert(PromptTemplate::new(*id, *body));
        }
        registry
    }

    /// Builtins overlaid with every `<id>.txt` found in `dir`.
    pub fn with_overrides(dir: &Path) -> std::io::Result<Self> {
        let mut registry = Self::builtin();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            if let Some(id) = path.file_stem().and_then(|s| s.to_str()) {
                registry.insert(PromptTemplate::new(id, std::fs::read_to_string(&path)?));
            }
        }
        Ok(registry)
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.id.clone(), template);
    }

    pub fn get(&self, id: &str) -> Option<&PromptTemplate> {
        self.templates.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn render(
        &self,
        id: &str,
        vars: &BTreeMap<String, String>,
    ) -> Result<RenderedPrompt, GatewayError> {
        self.get(id)
            .ok_or_else(|| GatewayError::UnknownTemplate(id.to_string()))?
            .render(vars)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn required_vars_are_collected() {
        let t = PromptTemplate::new(
            "t",
            "A {{task_description}} B {{ taxonomy }} {{task_description}}",
        );
        assert_eq!(
            t.required_vars.iter().cloned().collect::<Vec<_>>(),
            vec!["task_description".to_string(), "taxonomy".to_string()]
        );
    }

    #[test]
    fn missing_var_is_named() {
        let registry = TemplateRegistry::builtin();
        let err = registry
            .render(
                ids::RETRIEVE_LABEL,
                &vars(&[("taxonomy", "[]"), ("retry_note", "")]),
            )
            .unwrap_err();
        match err {
            GatewayError::MissingVar { var, .. } => assert_eq!(var, "task_description"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rendering_is_stable_and_complete() {
        let registry = TemplateRegistry::builtin();
        for id in registry.ids() {
            let t = registry.get(id).unwrap();
            let v: BTreeMap<String, String> = t
                .required_vars
                .iter()
                .map(|k| (k.clone(), format!("value of {k}")))
                .collect();
            let a = t.render(&v).unwrap();
            let b = t.render(&v).unwrap();
            assert_eq!(a.hash, b.hash, "{id}");
            assert!(
                !placeholder_re().is_match(&a.text),
                "{id} left a placeholder"
            );
        }
    }

    #[test]
    fn builtin_registry_has_every_role() {
        let registry = TemplateRegistry::builtin();
        for (id, _) in BUILTIN {
            assert!(registry.get(id).is_some());
        }
        assert_eq!(registry.ids().count(), 13);
    }

    #[test]
    fn directory_overrides_replace_builtins() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("classify_problem.txt"),
            "Type? {{task_description}}",
        )
        .unwrap();
        let registry = TemplateRegistry::with_overrides(dir.path()).unwrap();
        let rendered = registry
            .render(ids::CLASSIFY_PROBLEM, &vars(&[("task_description", "x")]))
            .unwrap();
        assert_eq!(rendered.text, "Type? x");
    }
}
