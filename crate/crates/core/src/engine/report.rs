//! Aggregates over a directory of transcripts.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::transcript::{Event, GameTranscript};
use super::World;
use crate::aog::Process;
use crate::belief::{bubble_signature, estimate_likelihoods, DialogLog, LikelihoodTables};
use crate::bubble::Discourse;
use crate::error::{fail, ErrorCode, Result};
use crate::evaluator::{merge_reports, SatisfactionSurvey, TrustReport};

/// Transcript files in `dir`, sorted by name.
pub fn transcript_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn load_transcripts(dir: &Path) -> Result<Vec<GameTranscript>> {
    let paths = transcript_paths(dir)?;
    if paths.is_empty() {
        return fail(ErrorCode::EmptyDir, format!("no transcripts in {}", dir.display()));
    }
    paths.iter().map(|p| GameTranscript::read(p)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub games: usize,
    pub bubbles: usize,
    /// Counts in Discourse::ALL order.
    pub discourse: [usize; 5],
    /// Counts per explanation act, alpha/beta/gamma.
    pub acts: [usize; 3],
    pub successes: usize,
    pub trust: Option<TrustReport>,
    pub satisfaction: Option<[f64; 7]>,
}

pub fn summarize(transcripts: &[GameTranscript]) -> RunReport {
    let mut discourse = [0usize; 5];
    let mut acts = [0usize; 3];
    let mut reports = Vec::new();
    let mut surveys: Vec<SatisfactionSurvey> = Vec::new();
    let mut successes = 0;
    for t in transcripts {
        for b in t.bubbles() {
            let k = Discourse::ALL.iter().position(|d| *d == b.discourse).expect("known relation");
            discourse[k] += 1;
            acts[b.act.index()] += 1;
        }
        if t.events.iter().any(|e| matches!(e, Event::Attempt { ss: 1, .. })) {
            successes += 1;
        }
        if let Some(r) = t.report() {
            reports.push(r.clone());
        }
        if let Some(s) = t.survey() {
            surveys.push(*s);
        }
    }
    let satisfaction = if surveys.is_empty() {
        None
    } else {
        let mut sums = [0.0; 7];
        for s in &surveys {
            for (acc, v) in sums.iter_mut().zip(s.ratings()) {
                *acc += v as f64;
            }
        }
        Some(sums.map(|x| x / surveys.len() as f64))
    };
    RunReport {
        games: transcripts.len(),
        bubbles: discourse.iter().sum(),
        discourse,
        acts,
        successes,
        trust: merge_reports(&reports),
        satisfaction,
    }
}

fn percent(n: usize, total: usize) -> String {
    if total == 0 {
        "0.0%".to_owned()
    } else {
        format!("{:.1}%", 100.0 * n as f64 / total as f64)
    }
}

/// One header row in Elaboration, Sequence, Recurrence, Restatement,
/// Summary order and one row of percentages.
pub fn format_discourse_table(counts: &[usize; 5]) -> String {
    let total: usize = counts.iter().sum();
    let header: Vec<&str> = Discourse::ALL.iter().map(|d| d.as_str()).collect();
    let row: Vec<String> = counts.iter().map(|&c| percent(c, total)).collect();
    format!("{}\n{}\n", header.join("\t"), row.join("\t"))
}

pub fn format_act_histogram(counts: &[usize; 3]) -> String {
    let total: usize = counts.iter().sum();
    let mut s = String::from("act\tcount\tshare\n");
    for p in Process::ALL {
        let c = counts[p.index()];
        s.push_str(&format!("{}\t{}\t{}\n", p.as_str(), c, percent(c, total)));
    }
    s
}

pub fn format_satisfaction(means: Option<&[f64; 7]>) -> String {
    let mut s = String::from("item\tmean\n");
    for (k, name) in SatisfactionSurvey::FIELDS.iter().enumerate() {
        match means {
            Some(m) => s.push_str(&format!("{name}\t{:.2}\n", m[k])),
            None => s.push_str(&format!("{name}\tn/a\n")),
        }
    }
    s
}

/// Reduces a transcript to what likelihood estimation needs. The task's
/// critical nodes count as grasped when the user solved it.
pub fn dialog_log(world: &World, transcript: &GameTranscript) -> Result<DialogLog> {
    let mut log = DialogLog::default();
    let mut task = None;
    for e in &transcript.events {
        match e {
            Event::Created { task: t, .. } => task = Some(world.task(t)?),
            Event::Ask { question, bubble, .. } => {
                log.questions.push(question.clone());
                log.bubbles.push(bubble_signature(&world.grammar, &bubble.action(&world.grammar)?));
            }
            Event::Attempt { ss: 1, .. } => {
                if let Some(t) = task {
                    log.grasped = t.critical.iter().copied().collect::<BTreeSet<_>>();
                }
            }
            _ => {}
        }
    }
    Ok(log)
}

pub fn estimate_from_transcripts(world: &World, transcripts: &[GameTranscript]) -> Result<LikelihoodTables> {
    let logs = transcripts
        .iter()
        .map(|t| dialog_log(world, t))
        .collect::<Result<Vec<_>>>()?;
    estimate_likelihoods(&world.grammar, &logs, 1.0)
}
