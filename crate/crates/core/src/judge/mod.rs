//! Judges for the two binary dimensions, Task Relevance and Coherence.
//!
//! [`RuleJudge`] is a deterministic stand-in used for all offline runs: TR is
//! tag overlap between the action and the instruction, C is membership of the
//! previous action in the action's declared predecessor set. [`RemoteJudge`]
//! posts the rendered evaluator prompt to an HTTP endpoint and parses a 0/1
//! verdict out of the reply.

pub mod mock;
pub mod prompt;

use crate::dims::Dimension;
use crate::taskenv::ActionRecord;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

pub const ENDPOINT_ENV: &str = "PRM_JUDGE_ENDPOINT";

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error("judge only scores TR and C, got {0}")]
    WrongDimension(Dimension),
    #[error("coherence at step {0} needs the previous action")]
    MissingPrevAction(usize),
    #[error("no judge endpoint configured (set judge.endpoint or {ENDPOINT_ENV})")]
    NotConfigured,
    #[error("judge transport failed after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("judge returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("judge response has no verdict token: {raw:?}")]
    Unparseable { raw: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub instruction: String,
    pub instruction_tags: BTreeSet<String>,
    pub observation: String,
    /// Texts of the actions taken before this step.
    pub trajectory: Vec<String>,
    /// 1-based index of the step being judged.
    pub step_idx: usize,
    pub action: ActionRecord,
    pub prev_action: Option<ActionRecord>,
    pub dimension: Dimension,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum VerdictSource {
    Rule,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub value: u8,
    pub rationale: String,
    pub source: VerdictSource,
}

pub trait Judge: Send + Sync {
    fn judge(&self, req: &JudgeRequest) -> Result<JudgeVerdict, JudgeError>;

    /// Short label recorded in manifests.
    fn name(&self) -> &'static str;
}

/// Deterministic tag/predecessor judge.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleJudge;

pub fn rule_task_relevance(req: &JudgeRequest) -> Result<JudgeVerdict, JudgeError> {
    if req.dimension != Dimension::TR {
        return Err(JudgeError::WrongDimension(req.dimension));
    }
    let shared: Vec<&str> = req
        .action
        .tags
        .intersection(&req.instruction_tags)
        .map(String::as_str)
        .collect();
    let (value, rationale) = if shared.is_empty() {
        (0, "action tags share nothing with the instruction".to_string())
    } else {
        (1, format!("action shares tags with the instruction: {}", shared.join(", ")))
    };
    Ok(JudgeVerdict {
        value,
        rationale,
        source: VerdictSource::Rule,
    })
}

pub fn rule_coherence(req: &JudgeRequest) -> Result<JudgeVerdict, JudgeError> {
    if req.dimension != Dimension::C {
        return Err(JudgeError::WrongDimension(req.dimension));
    }
    if req.step_idx <= 1 {
        return Ok(JudgeVerdict {
            value: 1,
            rationale: "first step has no predecessor".to_string(),
            source: VerdictSource::Rule,
        });
    }
    let prev = req
        .prev_action
        .as_ref()
        .ok_or(JudgeError::MissingPrevAction(req.step_idx))?;
    let coherent = req.action.follows.contains(&prev.action_id);
    let rationale = if coherent {
        format!("`{}` is a declared predecessor", prev.action_id)
    } else {
        format!("`{}` is not a declared predecessor", prev.action_id)
    };
    Ok(JudgeVerdict {
        value: u8::from(coherent),
        rationale,
        source: VerdictSource::Rule,
    })
}

impl Judge for RuleJudge {
    fn judge(&self, req: &JudgeRequest) -> Result<JudgeVerdict, JudgeError> {
        match req.dimension {
            Dimension::TR => rule_task_relevance(req),
            Dimension::C => rule_coherence(req),
            other => Err(JudgeError::WrongDimension(other)),
        }
    }

    fn name(&self) -> &'static str {
        "rule"
    }
}

/// Single-action evaluator prompt for a TR or C request.
pub fn render_prompt(req: &JudgeRequest) -> String {
    let mut out = String::with_capacity(8192);
    out.push_str(prompt::MAIN_PART);
    out.push_str("\n\n");
    if matches!(req.dimension, Dimension::TR | Dimension::C) {
        out.push_str(prompt::dimension_block(req.dimension));
        out.push_str("\n\n");
    }
    out.push_str(&prompt::context_slots(
        &req.instruction,
        &req.observation,
        &req.trajectory,
    ));
    prompt::slot(&mut out, "STEP_IDX", &req.step_idx.to_string());
    prompt::slot(&mut out, "ACTION", &req.action.text);
    out
}

/// Returns the first whitespace/punctuation-delimited token that is one of
/// `accepted`, together with the rest of the text.
pub fn first_standalone_token<'a>(body: &str, accepted: &[&'a str]) -> Option<(&'a str, String)> {
    let bytes = body.as_bytes();
    let mut start = None;
    for i in 0..=bytes.len() {
        let is_word = i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_');
        match (is_word, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                let tok = &body[s..i];
                if let Some(hit) = accepted.iter().find(|a| **a == tok) {
                    let rest = format!("{}{}", &body[..s], &body[i..]);
                    return Some((hit, rest.trim().to_string()));
                }
                start = None;
            }
            _ => {}
        }
    }
    None
}

pub fn parse_binary_verdict(body: &str) -> Result<(u8, String), JudgeError> {
    match first_standalone_token(body, &["0", "1"]) {
        Some((tok, rationale)) => Ok((u8::from(tok == "1"), rationale)),
        None => Err(JudgeError::Unparseable {
            raw: body.to_string(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteJudgeConfig {
    pub endpoint: String,
    pub max_attempts: usize,
    /// Sleep before retry k (the last entry repeats).
    pub backoff: Vec<Duration>,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl RemoteJudgeConfig {
    pub fn new(endpoint: &str) -> Self {
        RemoteJudgeConfig {
            endpoint: endpoint.to_string(),
            max_attempts: 3,
            backoff: vec![
                Duration::from_millis(500),
                Duration::from_secs(1),
                Duration::from_secs(2),
            ],
            timeout: Duration::from_secs(30),
            max_in_flight: 4,
        }
    }

    /// Explicit configuration wins over the environment variable.
    pub fn resolve(configured: Option<&str>) -> Result<Self, JudgeError> {
        let endpoint = configured
            .map(str::to_string)
            .or_else(|| std::env::var(ENDPOINT_ENV).ok())
            .filter(|e| !e.trim().is_empty())
            .ok_or(JudgeError::NotConfigured)?;
        Ok(Self::new(&endpoint))
    }
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    dimension: &'a str,
    correlation_id: &'a str,
}

/// HTTP judge. Every call is a POST of `{prompt, dimension, correlation_id}`.
pub struct RemoteJudge {
    config: RemoteJudgeConfig,
    agent: ureq::Agent,
    counter: AtomicUsize,
}

impl RemoteJudge {
    pub fn new(config: RemoteJudgeConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteJudge {
            config,
            agent,
            counter: AtomicUsize::new(0),
        }
    }

    pub fn config(&self) -> &RemoteJudgeConfig {
        &self.config
    }

    /// Posts one prompt and returns the raw response body, retrying transport
    /// failures, 429 and 5xx replies.
    pub fn post_prompt(&self, prompt: &str, dimension: &str, correlation_id: &str) -> Result<String, JudgeError> {
        let body = serde_json::to_string(&WireRequest {
            prompt,
            dimension,
            correlation_id,
        })
        .expect("request serializes");
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let wait = self
                    .config
                    .backoff
                    .get(attempt - 1)
                    .or(self.config.backoff.last())
                    .copied()
                    .unwrap_or_default();
                std::thread::sleep(wait);
            }
            let sent = self
                .agent
                .post(&self.config.endpoint)
                .header("content-type", "application/json")
                .header("x-correlation-id", correlation_id)
                .send(body.as_str());
            match sent {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    if status == 429 || status >= 500 {
                        last = format!("HTTP {status}: {text}");
                        continue;
                    }
                    if status >= 400 {
                        return Err(JudgeError::Status { status, body: text });
                    }
                    return Ok(text);
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(JudgeError::Transport {
            attempts,
            message: last,
        })
    }

    fn next_correlation_id(&self, req: &JudgeRequest) -> String {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        format!("{}-{}-{}", req.dimension, req.step_idx, n)
    }

    /// Judges a batch with at most `max_in_flight` concurrent requests.
    /// Results are returned in request order.
    pub fn judge_batch(&self, reqs: &[JudgeRequest]) -> Vec<Result<JudgeVerdict, JudgeError>> {
        let ids: Vec<String> = reqs.iter().map(|r| self.next_correlation_id(r)).collect();
        let slots: Vec<Mutex<Option<Result<JudgeVerdict, JudgeError>>>> =
            reqs.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.config.max_in_flight.max(1).min(reqs.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::Relaxed);
                    if k >= reqs.len() {
                        break;
                    }
                    let out = self.judge_with_id(&reqs[k], &ids[k]);
                    *slots[k].lock().expect("slot lock") = Some(out);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
            .collect()
    }

    fn judge_with_id(&self, req: &JudgeRequest, id: &str) -> Result<JudgeVerdict, JudgeError> {
        if !matches!(req.dimension, Dimension::TR | Dimension::C) {
            return Err(JudgeError::WrongDimension(req.dimension));
        }
        let text = self.post_prompt(&render_prompt(req), req.dimension.as_str(), id)?;
        let (value, rationale) = parse_binary_verdict(&text)?;
        Ok(JudgeVerdict {
            value,
            rationale,
            source: VerdictSource::Remote,
        })
    }
}

impl Judge for RemoteJudge {
    fn judge(&self, req: &JudgeRequest) -> Result<JudgeVerdict, JudgeError> {
        let id = self.next_correlation_id(req);
        self.judge_with_id(req, &id)
    }

    fn name(&self) -> &'static str {
        "remote"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn action(id: &str, tags: &[&str], follows: &[&str]) -> ActionRecord {
        ActionRecord {
            action_id: id.into(),
            text: format!("do {id}"),
            tags: tags.iter().map(|s| s.to_string()).collect(),
            follows: follows.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn req(dim: Dimension, a: ActionRecord, prev: Option<ActionRecord>, step: usize) -> JudgeRequest {
        JudgeRequest {
            instruction: "delete calendar events".into(),
            instruction_tags: ["calendar".to_string()].into_iter().collect(),
            observation: "Screen: home".into(),
            trajectory: vec![],
            step_idx: step,
            action: a,
            prev_action: prev,
            dimension: dim,
        }
    }

    #[test]
    fn task_relevance_is_tag_overlap() {
        let hit = req(Dimension::TR, action("a", &["calendar", "delete"], &[]), None, 1);
        assert_eq!(rule_task_relevance(&hit).unwrap().value, 1);
        let miss = req(Dimension::TR, action("a", &["screensaver"], &[]), None, 1);
        assert_eq!(rule_task_relevance(&miss).unwrap().value, 0);
        let empty = req(Dimension::TR, action("a", &[], &[]), None, 1);
        assert_eq!(rule_task_relevance(&empty).unwrap().value, 0);
        let wrong = req(Dimension::C, action("a", &[], &[]), None, 1);
        assert!(matches!(rule_task_relevance(&wrong), Err(JudgeError::WrongDimension(_))));
    }

    #[test]
    fn coherence_uses_declared_predecessors() {
        let first = req(Dimension::C, action("b", &[], &[]), None, 1);
        assert_eq!(rule_coherence(&first).unwrap().value, 1);
        let ok = req(Dimension::C, action("b", &[], &["a"]), Some(action("a", &[], &[])), 2);
        assert_eq!(rule_coherence(&ok).unwrap().value, 1);
        let bad = req(Dimension::C, action("b", &[], &["z"]), Some(action("a", &[], &[])), 2);
        assert_eq!(rule_coherence(&bad).unwrap().value, 0);
        let missing = req(Dimension::C, action("b", &[], &["a"]), None, 3);
        assert!(matches!(rule_coherence(&missing), Err(JudgeError::MissingPrevAction(3))));
        assert!(RuleJudge.judge(&req(Dimension::H, action("b", &[], &[]), None, 1)).is_err());
    }

    #[test]
    fn verdict_token_parsing() {
        assert_eq!(parse_binary_verdict("1").unwrap(), (1, String::new()));
        let (v, why) = parse_binary_verdict("Verdict: 0. The step is unrelated.").unwrap();
        assert_eq!(v, 0);
        assert_eq!(why, "Verdict: . The step is unrelated.");
        // 10 and x1 are not standalone tokens
        assert_eq!(parse_binary_verdict("10 x1 then 1").unwrap().0, 1);
        match parse_binary_verdict("no idea") {
            Err(JudgeError::Unparseable { raw }) => assert_eq!(raw, "no idea"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn prompt_has_empty_trajectory_on_first_step() {
        let r = req(Dimension::C, action("a", &[], &[]), None, 1);
        let p = render_prompt(&r);
        assert!(p.starts_with("You are an expert in evaluating the performance of a Virtual Agent.\n"));
        assert!(p.contains("compactness and coherence between the current step"));
        assert!(p.contains("[TRAJ]\n[/TRAJ]\n"));
        assert_eq!(p, render_prompt(&r));
    }

    #[test]
    fn resolve_prefers_explicit_endpoint() {
        let c = RemoteJudgeConfig::resolve(Some("http://127.0.0.1:9/judge")).unwrap();
        assert_eq!(c.endpoint, "http://127.0.0.1:9/judge");
        assert_eq!(c.max_attempts, 3);
        assert_eq!(c.timeout, Duration::from_secs(30));
    }
}
