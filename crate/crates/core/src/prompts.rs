//! Prompt templates with `{name}` placeholders.
//!
//! Defaults are compiled in from `templates/`; any of them can be replaced
//! by a file of the same name in an override directory.

use std::path::Path;

/// A text template. Only `{identifier}` placeholders listed by the caller
/// are substituted; other braces (JSON examples) are left alone, and
/// substituted values are never re-scanned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template(String);

impl Template {
    pub fn new(text: impl Into<String>) -> Self {
        Self(text.into())
    }

    pub fn text(&self) -> &str {
        &self.0
    }

    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let src = self.0.as_str();
        let mut out =
            String::with_capacity(src.len() + vars.iter().map(|(_, v)| v.len()).sum::<usize>());
        let mut rest = src;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let close = after.find('}');
            let value = close.and_then(|c| {
                let name = &after[..c];
                vars.iter().find(|(k, _)| *k == name).map(|(_, v)| (c, *v))
            });
            match value {
                Some((c, v)) => {
                    out.push_str(v);
                    rest = &after[c + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub router: Template,
    pub router_rules: String,
    pub react: Template,
    pub react_rules: String,
    pub dfsdt: Template,
    pub dfsdt_rules: String,
    pub state_manager: Template,
    pub decompose: Template,
    pub compress: Template,
    pub judge: Template,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            router: Template::new(include_str!("../templates/router.txt")),
            router_rules: include_str!("../templates/router_rules.txt")
                .trim_end()
                .to_owned(),
            react: Template::new(include_str!("../templates/react.txt")),
            react_rules: include_str!("../templates/react_rules.txt")
                .trim_end()
                .to_owned(),
            dfsdt: Template::new(include_str!("../templates/dfsdt.txt")),
            dfsdt_rules: include_str!("../templates/dfsdt_rules.txt")
                .trim_end()
                .to_owned(),
            state_manager: Template::new(include_str!("../templates/state_manager.txt")),
            decompose: Template::new(include_str!("../templates/decompose.txt")),
            compress: Template::new(include_str!("../templates/compress.txt")),
            judge: Template::new(include_str!("../templates/judge.txt")),
        }
    }
}

impl PromptSet {
    /// Defaults, with every `<name>.txt` found in `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> std::io::Result<Self> {
        let mut set = Self::default();
        let read = |name: &str| -> std::io::Result<Option<String>> {
            let path = dir.join(format!("{name}.txt"));
            if path.is_file() {
                std::fs::read_to_string(path).map(Some)
            } else {
                Ok(None)
            }
        };
        for (name, slot) in [
            ("router", &mut set.router),
            ("react", &mut set.react),
            ("dfsdt", &mut set.dfsdt),
            ("state_manager", &mut set.state_manager),
            ("decompose", &mut set.decompose),
            ("compress", &mut set.compress),
            ("judge", &mut set.judge),
        ] {
            if let Some(text) = read(name)? {
                *slot = Template::new(text);
            }
        }
        for (name, slot) in [
            ("router_rules", &mut set.router_rules),
            ("react_rules", &mut set.react_rules),
            ("dfsdt_rules", &mut set.dfsdt_rules),
        ] {
            if let Some(text) = read(name)? {
                *slot = text.trim_end().to_owned();
            }
        }
        Ok(set)
    }
}
