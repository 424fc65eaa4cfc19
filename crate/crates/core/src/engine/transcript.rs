//! Line-delimited JSON game logs. One event per line, append-only.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::session::{Mode, Phase, Selection};
use crate::aog::{AogGrammar, Process, Region};
use crate::bubble::{Bubble, BubbleAction, Discourse};
use crate::error::{Error, ErrorCode, Result};
use crate::evaluator::{SatisfactionSurvey, TrustReport};

/// A bubble as clients see it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleWire {
    pub attention: String,
    pub act: Process,
    pub sigma1: f64,
    pub sigma2: f64,
    pub discourse: Discourse,
    pub content: f64,
    pub region: Region,
}

impl BubbleWire {
    pub fn new(bubble: &Bubble, grammar: &AogGrammar) -> Self {
        BubbleWire {
            attention: grammar.name(bubble.attention()).to_owned(),
            act: bubble.act(),
            sigma1: bubble.sigma1(),
            sigma2: bubble.sigma2(),
            discourse: bubble.discourse,
            content: bubble.content,
            region: bubble.region,
        }
    }

    pub fn action(&self, grammar: &AogGrammar) -> Result<BubbleAction> {
        let attention = grammar
            .lookup(&self.attention)
            .ok_or_else(|| Error::new(ErrorCode::SchemaError, format!("unknown node `{}`", self.attention)))?;
        BubbleAction::from_sigmas(attention, self.act, self.sigma1, self.sigma2)
            .ok_or_else(|| Error::new(ErrorCode::SchemaError, "bubble sigmas are off the grid"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub question: String,
    pub choice: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        session: String,
        scene: String,
        task: String,
        mode: Mode,
        seed: u64,
        selection: Selection,
        grammar: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        at_ms: Option<u64>,
    },
    Ask {
        turn: u32,
        question: String,
        bubble: BubbleWire,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        response_ms: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        at_ms: Option<u64>,
    },
    Attempt {
        turn: u32,
        answer: String,
        cf: u8,
        sf: u8,
        ss: i8,
        reward: f64,
        phase: Phase,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        response_ms: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        at_ms: Option<u64>,
    },
    EndPhase1 {
        turn: u32,
    },
    Phase2 {
        answers: Vec<Answer>,
        report: TrustReport,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        survey: Option<SatisfactionSurvey>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        at_ms: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GameTranscript {
    pub events: Vec<Event>,
}

impl GameTranscript {
    pub fn push(&mut self, event: Event) {
        self.events.push(event);
    }

    pub fn session_id(&self) -> Option<&str> {
        self.events.iter().find_map(|e| match e {
            Event::Created { session, .. } => Some(session.as_str()),
            _ => None,
        })
    }

    pub fn bubbles(&self) -> impl Iterator<Item = &BubbleWire> {
        self.events.iter().filter_map(|e| match e {
            Event::Ask { bubble, .. } => Some(bubble),
            _ => None,
        })
    }

    pub fn report(&self) -> Option<&TrustReport> {
        self.events.iter().find_map(|e| match e {
            Event::Phase2 { report, .. } => Some(report),
            _ => None,
        })
    }

    pub fn survey(&self) -> Option<&SatisfactionSurvey> {
        self.events.iter().find_map(|e| match e {
            Event::Phase2 { survey, .. } => survey.as_ref(),
            _ => None,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&serde_json::to_string(e).expect("events serialise"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut events = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(line)
                .map_err(|err| Error::new(ErrorCode::SchemaError, format!("transcript line {}: {err}", n + 1)))?;
            events.push(e);
        }
        Ok(GameTranscript { events })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }
}

/// Appends one event to a transcript file.
pub fn append_event(path: &Path, event: &Event) -> Result<()> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(event).expect("events serialise"))?;
    Ok(())
}
