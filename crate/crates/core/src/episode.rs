//! Multi-session dialogue records and their line-delimited JSON form.
//!
//! One episode per line:
//!
//! ```json
//! {"episode_id": "ep-1",
//!  "sessions": [{"turns": [{"speaker": "user", "text": "hi"}],
//!                "gold_memory": ["The user likes tea."]}]}
//! ```
//!
//! Sessions are numbered from 1 in file order. `gold_memory` of session `s`
//! is the reference memory as of the end of session `s`.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
#[error("line {line}: {message}")]
pub struct DataError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Assistant,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::User => "user",
            Speaker::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnRecord {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Session {
    pub turns: Vec<TurnRecord>,
    #[serde(default)]
    pub gold_memory: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Episode {
    pub episode_id: String,
    pub sessions: Vec<Session>,
}

/// A turn placed in its episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueTurn {
    pub speaker: Speaker,
    pub text: String,
    /// 1-based.
    pub session: u32,
    /// 0-based within the session.
    pub turn_index: u32,
}

impl DialogueTurn {
    pub fn new(speaker: Speaker, text: impl Into<String>, session: u32, turn_index: u32) -> Self {
        Self { speaker, text: text.into(), session, turn_index }
    }
}

/// Final user query of an episode and the assistant turn that answers it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeldOutQuery {
    pub session: u32,
    pub query: String,
    pub reference: String,
}

impl Episode {
    pub fn validate(&self) -> Result<(), String> {
        if self.episode_id.trim().is_empty() {
            return Err("episode_id is empty".into());
        }
        if self.sessions.is_empty() {
            return Err(format!("episode {} has no sessions", self.episode_id));
        }
        for (s, session) in self.sessions.iter().enumerate() {
            if session.turns.is_empty() {
                return Err(format!("episode {} session {} has no turns", self.episode_id, s + 1));
            }
            if let Some(t) = session.turns.iter().position(|t| t.text.trim().is_empty()) {
                return Err(format!(
                    "episode {} session {} turn {t} has empty text",
                    self.episode_id,
                    s + 1
                ));
            }
        }
        Ok(())
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    /// All turns with their session and position filled in.
    pub fn turns(&self) -> impl Iterator<Item = DialogueTurn> + '_ {
        self.sessions.iter().enumerate().flat_map(|(s, session)| {
            session.turns.iter().enumerate().map(move |(t, turn)| {
                DialogueTurn::new(turn.speaker, turn.text.clone(), s as u32 + 1, t as u32)
            })
        })
    }

    /// The last two turns of the final session, which must be a user turn
    /// followed by an assistant turn.
    pub fn held_out(&self) -> Result<HeldOutQuery, String> {
        let last = self.sessions.last().ok_or("episode has no sessions")?;
        match last.turns.as_slice() {
            [.., query, reply]
                if query.speaker == Speaker::User && reply.speaker == Speaker::Assistant =>
            {
                Ok(HeldOutQuery {
                    session: self.sessions.len() as u32,
                    query: query.text.clone(),
                    reference: reply.text.clone(),
                })
            }
            _ => Err(format!(
                "episode {} does not end with a user turn followed by an assistant turn",
                self.episode_id
            )),
        }
    }
}

/// Parses one episode per non-blank line, validating each.
pub fn read_episodes<R: BufRead>(reader: R) -> Result<Vec<Episode>, DataError> {
    let mut episodes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DataError { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let episode: Episode = serde_json::from_str(&line)
            .map_err(|e| DataError { line: line_no, message: e.to_string() })?;
        episode
            .validate()
            .map_err(|message| DataError { line: line_no, message })?;
        episodes.push(episode);
    }
    Ok(episodes)
}

pub fn write_episodes<W: std::io::Write>(mut writer: W, episodes: &[Episode]) -> std::io::Result<()> {
    for episode in episodes {
        serde_json::to_writer(&mut writer, episode)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Best-effort converter for records of the public multi-session chat
/// release (one JSON object per line with `dialog`, `previous_dialogs`
/// and `personas` fields).
///
/// `Speaker 1` becomes the user and `Speaker 2` the assistant; previous
/// dialogs, which carry no speaker ids, are taken to alternate starting
/// with the user. Each session's gold memory is the flattened persona
/// lists stored with that session when present.
pub mod msc {
    use serde_json::Value;

    use super::{Episode, Session, Speaker, TurnRecord};

    fn texts(dialog: &Value) -> Vec<(Option<String>, String)> {
        dialog
            .as_array()
            .map(|turns| {
                turns
                    .iter()
                    .filter_map(|t| {
                        let text = t.get("text")?.as_str()?.trim().to_string();
                        let id = t.get("id").and_then(Value::as_str).map(str::to_string);
                        Some((id, text))
                    })
                    .filter(|(_, text)| !text.is_empty())
                    .collect()
            })
            .unwrap_or_default()
    }

    fn personas(value: Option<&Value>) -> Vec<String> {
        value
            .and_then(Value::as_array)
            .map(|speakers| {
                speakers
                    .iter()
                    .filter_map(Value::as_array)
                    .flatten()
                    .filter_map(Value::as_str)
                    .map(str::to_string)
                    .collect()
            })
            .unwrap_or_default()
    }

    fn session(dialog: &Value, persona: Option<&Value>) -> Session {
        let turns = texts(dialog)
            .into_iter()
            .enumerate()
            .map(|(i, (id, text))| {
                let speaker = match id.as_deref() {
                    Some("Speaker 1") => Speaker::User,
                    Some("Speaker 2") => Speaker::Assistant,
                    _ if i % 2 == 0 => Speaker::User,
                    _ => Speaker::Assistant,
                };
                TurnRecord { speaker, text }
            })
            .collect();
        Session { turns, gold_memory: personas(persona) }
    }

    pub fn convert_record(record: &Value, episode_id: &str) -> Result<Episode, String> {
        let mut sessions: Vec<Session> = record
            .get("previous_dialogs")
            .and_then(Value::as_array)
            .map(|prev| {
                prev.iter()
                    .map(|p| session(p.get("dialog").unwrap_or(&Value::Null), p.get("personas")))
                    .collect()
            })
            .unwrap_or_default();
        let current = record.get("dialog").ok_or("record has no dialog field")?;
        sessions.push(session(current, record.get("personas")));
        let episode = Episode { episode_id: episode_id.to_string(), sessions };
        episode.validate()?;
        Ok(episode)
    }
}
