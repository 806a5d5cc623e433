//! Versioned two-message prompt templates.
//!
//! A template file looks like
//!
//! ```text
//! # persona v1
//! [system]
//! ...system text...
//! [user]
//! ...user text with {{placeholders}}...
//! ```
//!
//! Placeholders are substituted in a single pass over the template, so
//! values that themselves contain `{{...}}` are left untouched.

use std::path::Path;

use thiserror::Error;

use crate::llm::ChatMessage;

pub const PERSONA_TEMPLATE: &str = include_str!("../prompts/persona.txt");
pub const AGENT_TEMPLATE: &str = include_str!("../prompts/agent.txt");
pub const SUFFICIENCY_TEMPLATE: &str = include_str!("../prompts/sufficiency.txt");
pub const RESPONSE_TEMPLATE: &str = include_str!("../prompts/response.txt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt template: {0}")]
    Malformed(String),
    #[error("prompt template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub version: u32,
    pub system: String,
    pub user: String,
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| PromptError::Malformed("empty template".into()))?;
        let (name, version) = header
            .strip_prefix("# ")
            .and_then(|rest| rest.rsplit_once(" v"))
            .ok_or_else(|| PromptError::Malformed(format!("bad header line {header:?}")))?;
        let version = version
            .parse()
            .map_err(|_| PromptError::Malformed(format!("bad version in {header:?}")))?;

        #[derive(PartialEq)]
        enum Section {
            None,
            System,
            User,
        }
        let mut section = Section::None;
        let mut system = Vec::new();
        let mut user = Vec::new();
        for line in lines {
            match (line, &section) {
                ("[system]", Section::None) => section = Section::System,
                ("[user]", Section::System) => section = Section::User,
                (_, Section::System) => system.push(line),
                (_, Section::User) => user.push(line),
                (_, Section::None) => {
                    return Err(PromptError::Malformed(format!("text outside a section: {line:?}")))
                }
            }
        }
        if section != Section::User {
            return Err(PromptError::Malformed("missing [system] or [user] section".into()));
        }
        Ok(Self {
            name: name.to_string(),
            version,
            system: system.join("\n"),
            user: user.join("\n"),
        })
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Canonical file form; `parse(t.to_file_string()) == t`.
    pub fn to_file_string(&self) -> String {
        format!(
            "# {} v{}\n[system]\n{}\n[user]\n{}\n",
            self.name, self.version, self.system, self.user
        )
    }

    /// System and user messages with `vars` substituted.
    pub fn render(&self, vars: &[(&str, &str)]) -> Vec<ChatMessage> {
        vec![
            ChatMessage::system(substitute(&self.system, vars)),
            ChatMessage::user(substitute(&self.user, vars)),
        ]
    }

    pub fn persona() -> Self {
        Self::parse(PERSONA_TEMPLATE).expect("bundled persona template")
    }

    pub fn agent() -> Self {
        Self::parse(AGENT_TEMPLATE).expect("bundled agent template")
    }

    pub fn sufficiency() -> Self {
        Self::parse(SUFFICIENCY_TEMPLATE).expect("bundled sufficiency template")
    }

    pub fn response() -> Self {
        Self::parse(RESPONSE_TEMPLATE).expect("bundled response template")
    }
}

fn substitute(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let key = &after[..end];
                match vars.iter().find(|(k, _)| *k == key) {
                    Some((_, value)) => out.push_str(value),
                    None => {
                        out.push_str("{{");
                        out.push_str(key);
                        out.push_str("}}");
                    }
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}
