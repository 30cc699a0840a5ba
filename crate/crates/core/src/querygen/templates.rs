//! Versioned prompt templates with `{{name}}` placeholders.
//!
//! Built-in templates ship with the crate. A [`TemplateStore`] pointed at a
//! directory prefers `<dir>/<id>.txt` over the built-in text of the same id.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::QueryError;

pub const SCENE_TEMPLATE: &str = "scene-v1";
pub const REGION_TEMPLATE: &str = "region-v1";
pub const SUBTRACT_TEMPLATE: &str = "subtract-v1";

const BUILTIN: &[(&str, &str)] = &[
    (SCENE_TEMPLATE, include_str!("../../templates/scene-v1.txt")),
    (REGION_TEMPLATE, include_str!("../../templates/region-v1.txt")),
    (SUBTRACT_TEMPLATE, include_str!("../../templates/subtract-v1.txt")),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub text: String,
}

impl PromptTemplate {
    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut rest = self.text.as_str();
        while let Some(start) = rest.find("{{") {
            let Some(len) = rest[start + 2..].find("}}") else { break };
            let name = rest[start + 2..start + 2 + len].trim().to_string();
            if !out.contains(&name) {
                out.push(name);
            }
            rest = &rest[start + 2 + len + 2..];
        }
        out
    }

    /// Substitutes every placeholder. Missing or unused variables are errors
    /// so a template and its caller cannot drift apart silently.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, QueryError> {
        let names = self.placeholders();
        for name in &names {
            if !vars.iter().any(|(k, _)| k == name) {
                return Err(QueryError::Input(format!(
                    "template {} needs a value for {{{{{name}}}}}",
                    self.id
                )));
            }
        }
        if let Some((k, _)) = vars.iter().find(|(k, _)| !names.iter().any(|n| n == k)) {
            return Err(QueryError::Input(format!(
                "template {} has no placeholder {k}",
                self.id
            )));
        }
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text.as_str();
        while let Some(start) = rest.find("{{") {
            let len = rest[start + 2..].find("}}").expect("placeholders() validated braces");
            let name = rest[start + 2..start + 2 + len].trim();
            out.push_str(&rest[..start]);
            out.push_str(
                vars.iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .unwrap_or_default(),
            );
            rest = &rest[start + 2 + len + 2..];
        }
        out.push_str(rest);
        Ok(out.trim_end().to_string())
    }
}

#[derive(Debug, Clone, Default)]
pub struct TemplateStore {
    override_dir: Option<PathBuf>,
}

impl TemplateStore {
    pub fn builtin() -> Self {
        Self { override_dir: None }
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            override_dir: Some(dir.into()),
        }
    }

    pub fn builtin_ids() -> Vec<&'static str> {
        BUILTIN.iter().map(|(id, _)| *id).collect()
    }

    pub fn get(&self, id: &str) -> Result<PromptTemplate, QueryError> {
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(QueryError::Input(format!("invalid template id {id:?}")));
        }
        if let Some(dir) = &self.override_dir {
            let path = dir.join(format!("{id}.txt"));
            if path.is_file() {
                return read_template(id, &path);
            }
        }
        BUILTIN
            .iter()
            .find(|(k, _)| *k == id)
            .map(|(k, text)| PromptTemplate {
                id: k.to_string(),
                text: text.to_string(),
            })
            .ok_or_else(|| QueryError::Input(format!("unknown template {id}")))
    }

    /// Every template visible through this store, keyed by id.
    pub fn all(&self) -> Result<BTreeMap<String, PromptTemplate>, QueryError> {
        Self::builtin_ids()
            .into_iter()
            .map(|id| Ok((id.to_string(), self.get(id)?)))
            .collect()
    }
}

fn read_template(id: &str, path: &Path) -> Result<PromptTemplate, QueryError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| QueryError::Input(format!("template {}: {e}", path.display())))?;
    Ok(PromptTemplate {
        id: id.to_string(),
        text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_have_expected_placeholders() {
        let store = TemplateStore::builtin();
        assert!(store.get(SCENE_TEMPLATE).unwrap().placeholders().is_empty());
        assert!(store.get(REGION_TEMPLATE).unwrap().placeholders().is_empty());
        assert_eq!(
            store.get(SUBTRACT_TEMPLATE).unwrap().placeholders(),
            vec!["scene", "region"]
        );
        assert_eq!(store.all().unwrap().len(), 3);
    }

    #[test]
    fn rendering_embeds_inputs_verbatim_and_is_stable() {
        let t = TemplateStore::builtin().get(SUBTRACT_TEMPLATE).unwrap();
        let vars = [
            ("scene", "A man plays guitar on a beach; waves crash."),
            ("region", "a man playing guitar"),
        ];
        let a = t.render(&vars).unwrap();
        assert!(a.contains(vars[0].1) && a.contains(vars[1].1));
        assert!(!a.contains("{{"));
        assert_eq!(a, t.render(&vars).unwrap());
    }

    #[test]
    fn render_rejects_missing_and_extra_vars() {
        let t = TemplateStore::builtin().get(SUBTRACT_TEMPLATE).unwrap();
        assert!(t.render(&[("scene", "x")]).is_err());
        assert!(t.render(&[("scene", "x"), ("region", "y"), ("other", "z")]).is_err());
    }

    #[test]
    fn directory_overrides_builtin() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("subtract-v1.txt"), "S={{scene}} R={{region}}").unwrap();
        let store = TemplateStore::with_dir(dir.path());
        let t = store.get(SUBTRACT_TEMPLATE).unwrap();
        assert_eq!(t.render(&[("scene", "a"), ("region", "b")]).unwrap(), "S=a R=b");
        // Ids without a file fall through to the built-in text.
        assert_eq!(
            store.get(SCENE_TEMPLATE).unwrap(),
            TemplateStore::builtin().get(SCENE_TEMPLATE).unwrap()
        );
    }

    #[test]
    fn unknown_or_unsafe_ids_are_rejected() {
        let store = TemplateStore::builtin();
        assert!(store.get("nope-v9").is_err());
        assert!(store.get("../etc/passwd").is_err());
    }
}
