//! Transcript files and scripted replays through an engine.
//!
//! A transcript is JSON lines of `{"source": ..., "text": ...}` with user
//! lines tagged `USER`, alternating with bot lines tagged by generator.

use serde::{Deserialize, Serialize};

use super::{Engine, ServiceError};
use crate::generators::{FanoutPolicy, GeneratorSpec, ScriptStep, ScriptedGenerator};
use crate::ranker::FixtureScorer;

pub const USER_SOURCE: &str = "USER";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub source: String,
    pub text: String,
}

impl TranscriptLine {
    pub fn is_user(&self) -> bool {
        self.source == USER_SOURCE
    }
}

/// One user line and the bot line that followed it, if any.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub user: String,
    pub bot: Option<TranscriptLine>,
}

pub fn parse_transcript(text: &str) -> Result<Vec<TranscriptLine>, ServiceError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ServiceError::BadRequest(format!("transcript line {}: {e}", i + 1)))
        })
        .collect()
}

/// Pairs user lines with their replies. Errors unless the transcript
/// starts with the user and alternates.
pub fn exchanges(lines: &[TranscriptLine]) -> Result<Vec<Exchange>, ServiceError> {
    let mut out: Vec<Exchange> = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let open = out.last().is_some_and(|e| e.bot.is_none());
        match (line.is_user(), out.last_mut()) {
            (true, _) if !open => out.push(Exchange {
                user: line.text.clone(),
                bot: None,
            }),
            (false, Some(e)) if e.bot.is_none() => e.bot = Some(line.clone()),
            _ => {
                return Err(ServiceError::BadRequest(format!(
                    "transcript line {} breaks user/bot alternation",
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Scripted stand-ins for the named remotes: each replies with its own
/// transcript lines after `latency_ms`, and with `distractor` otherwise.
pub fn scripted_remotes(
    lines: &[TranscriptLine],
    remotes: &[(String, FanoutPolicy)],
    latency_ms: u64,
    distractor: &str,
) -> Result<Vec<GeneratorSpec>, ServiceError> {
    let ex = exchanges(lines)?;
    Ok(remotes
        .iter()
        .map(|(name, policy)| {
            let script = ex
                .iter()
                .filter_map(|e| e.bot.as_ref().filter(|b| &b.source == name).map(|b| (e, b)))
                .fold(
                    ScriptedGenerator::new(vec![ScriptStep::ok(latency_ms, distractor)]),
                    |g, (e, b)| g.on(&e.user, vec![ScriptStep::ok(latency_ms, b.text.clone())]),
                );
            GeneratorSpec::remote(name, *policy, std::sync::Arc::new(script))
        })
        .collect())
}

/// Scores every bot line of the transcript 1 and everything else 0.
pub fn transcript_scores(lines: &[TranscriptLine]) -> FixtureScorer {
    lines
        .iter()
        .filter(|l| !l.is_user())
        .fold(FixtureScorer::default(), |s, l| s.with(&l.text, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRow {
    pub user: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<TranscriptLine>,
    pub got: TranscriptLine,
    pub total_ms: u64,
    pub session_ended: bool,
}

impl ReplayRow {
    /// True when there was no expected reply or the reply matched exactly.
    pub fn matches(&self) -> bool {
        self.expected.as_ref().is_none_or(|e| e == &self.got)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub rows: Vec<ReplayRow>,
}

impl ReplayReport {
    pub fn mismatches(&self) -> usize {
        self.rows.iter().filter(|r| !r.matches()).count()
    }

    /// The engine's side of the conversation in transcript form.
    pub fn transcript(&self) -> Vec<TranscriptLine> {
        self.rows
            .iter()
            .flat_map(|r| {
                [
                    TranscriptLine {
                        source: USER_SOURCE.into(),
                        text: r.user.clone(),
                    },
                    r.got.clone(),
                ]
            })
            .collect()
    }
}

/// Feeds each user line to `session_id` and records the replies.
pub async fn replay(engine: &Engine, session_id: &str, lines: &[TranscriptLine]) -> Result<ReplayReport, ServiceError> {
    let mut report = ReplayReport::default();
    for e in exchanges(lines)? {
        let out = engine.handle_turn(session_id, &e.user).await?;
        report.rows.push(ReplayRow {
            user: e.user,
            expected: e.bot,
            got: TranscriptLine {
                source: out.source,
                text: out.response,
            },
            total_ms: out.trace.total_ms,
            session_ended: out.session_ended,
        });
        if out.session_ended {
            break;
        }
    }
    Ok(report)
}
