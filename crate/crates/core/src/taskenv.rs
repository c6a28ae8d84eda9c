//! Deterministic graph-structured task environments.
//!
//! A [`TaskGraph`] is a finite set of named states connected by labeled
//! actions. Each task has an initial state, a set of goal states, a natural
//! language instruction with topic tags, and a horizon (maximum episode
//! length). Shortest distances to the goal set are precomputed at load time by
//! reverse breadth-first search, which makes [`TaskGraph::min_steps`] an exact
//! O(1) oracle.
//!
//! Graphs are immutable once built and can be shared freely across threads.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

/// Errors raised while building, loading or stepping an environment.
#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("{path}: line {line}: {message}")]
    Invalid {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("action `{action}` is not available in state `{state}`")]
    UnknownAction { state: String, action: String },
    #[error("horizon of {horizon} steps exhausted")]
    HorizonExceeded { horizon: usize },
}

/// One action as seen by the agent and by the judges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub action_id: String,
    pub text: String,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    /// Action ids that coherently precede this one.
    #[serde(default)]
    pub follows: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub action: ActionRecord,
    pub to: usize,
}

/// Shortest remaining distance to any goal state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Remaining {
    Steps(usize),
    Unreachable,
}

impl Remaining {
    pub fn steps(self) -> Option<usize> {
        match self {
            Remaining::Steps(n) => Some(n),
            Remaining::Unreachable => None,
        }
    }
}

impl fmt::Display for Remaining {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Remaining::Steps(n) => write!(f, "{n}"),
            Remaining::Unreachable => write!(f, "UNREACHABLE"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskGraph {
    id: String,
    states: Vec<String>,
    index: HashMap<String, usize>,
    transitions: Vec<Vec<Transition>>,
    initial: usize,
    goals: Vec<bool>,
    instruction: String,
    instruction_tags: BTreeSet<String>,
    horizon: usize,
    dist: Vec<Option<usize>>,
}

/// Position of one agent within an episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeState {
    pub current: usize,
    pub steps_taken: usize,
    /// `(state the action was taken in, action id)`
    pub history: Vec<(usize, String)>,
}

impl TaskGraph {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn instruction_tags(&self) -> &BTreeSet<String> {
        &self.instruction_tags
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn state_name(&self, s: usize) -> &str {
        &self.states[s]
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn is_goal(&self, s: usize) -> bool {
        self.goals.get(s).copied().unwrap_or(false)
    }

    pub fn goal_states(&self) -> impl Iterator<Item = usize> + '_ {
        self.goals.iter().enumerate().filter(|(_, g)| **g).map(|(i, _)| i)
    }

    pub fn actions(&self, s: usize) -> &[Transition] {
        &self.transitions[s]
    }

    pub fn find_action(&self, s: usize, action_id: &str) -> Option<&Transition> {
        self.transitions
            .get(s)?
            .iter()
            .find(|t| t.action.action_id == action_id)
    }

    pub fn start(&self) -> EpisodeState {
        EpisodeState {
            current: self.initial,
            steps_taken: 0,
            history: Vec::new(),
        }
    }

    /// Applies `action_id` in the current state of `st`.
    pub fn step(&self, st: &EpisodeState, action_id: &str) -> Result<EpisodeState, EnvError> {
        if st.current >= self.states.len() {
            return Err(EnvError::UnknownState(st.current.to_string()));
        }
        if st.steps_taken >= self.horizon {
            return Err(EnvError::HorizonExceeded {
                horizon: self.horizon,
            });
        }
        let t = self
            .find_action(st.current, action_id)
            .ok_or_else(|| EnvError::UnknownAction {
                state: self.states[st.current].clone(),
                action: action_id.to_string(),
            })?;
        let mut history = st.history.clone();
        history.push((st.current, action_id.to_string()));
        Ok(EpisodeState {
            current: t.to,
            steps_taken: st.steps_taken + 1,
            history,
        })
    }

    pub fn is_success(&self, st: &EpisodeState) -> bool {
        self.is_goal(st.current)
    }

    /// An episode ends at a goal, at the horizon, or in a state without actions.
    pub fn is_terminal(&self, st: &EpisodeState) -> bool {
        self.is_goal(st.current)
            || st.steps_taken >= self.horizon
            || self.transitions[st.current].is_empty()
    }

    pub fn min_steps(&self, s: usize) -> Result<Remaining, EnvError> {
        match self.dist.get(s) {
            None => Err(EnvError::UnknownState(s.to_string())),
            Some(Some(d)) => Ok(Remaining::Steps(*d)),
            Some(None) => Ok(Remaining::Unreachable),
        }
    }

    pub fn min_steps_by_name(&self, name: &str) -> Result<Remaining, EnvError> {
        let s = self
            .state_index(name)
            .ok_or_else(|| EnvError::UnknownState(name.to_string()))?;
        self.min_steps(s)
    }

    /// Remaining length with UNREACHABLE mapped to the horizon.
    pub fn remaining_length(&self, s: usize) -> usize {
        self.dist[s].unwrap_or(self.horizon)
    }

    /// Actions that decrease the distance to the goal by exactly one.
    pub fn optimal_actions(&self, s: usize) -> Vec<&Transition> {
        match self.dist[s] {
            Some(d) if d > 0 => self.transitions[s]
                .iter()
                .filter(|t| self.dist[t.to] == Some(d - 1))
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Textual observation: state name followed by the available action texts.
    pub fn observation(&self, s: usize) -> String {
        let mut out = format!("Screen: {}\nAvailable actions:", self.states[s]);
        let actions = &self.transitions[s];
        if actions.is_empty() {
            out.push_str("\n(none)");
        }
        for t in actions {
            out.push_str("\n- ");
            out.push_str(&t.action.text);
        }
        out
    }

    pub fn load(path: &Path) -> Result<TaskGraph, EnvError> {
        let raw = std::fs::read_to_string(path).map_err(|source| EnvError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "env".to_string());
        Self::from_json_str(&raw, &stem, &path.display().to_string())
    }

    /// Parses an environment document. `default_id` is used when the document
    /// has no `id` field; `origin` labels error messages.
    pub fn from_json_str(raw: &str, default_id: &str, origin: &str) -> Result<TaskGraph, EnvError> {
        let file: EnvFile = serde_json::from_str(raw).map_err(|e| EnvError::Invalid {
            path: origin.to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let locator = JsonLocator::new(raw);
        let invalid = |line: Option<usize>, message: String| EnvError::Invalid {
            path: origin.to_string(),
            line: line.unwrap_or(1),
            message,
        };

        let mut b = GraphBuilder::new(
            file.id.as_deref().unwrap_or(default_id),
            &file.instruction,
        );
        b.instruction_tags(file.instruction_tags.iter().map(String::as_str));
        b.horizon(file.horizon);
        for (k, s) in file.states.iter().enumerate() {
            if b.index.contains_key(s) {
                return Err(invalid(
                    locator.element_line("states", k),
                    format!("duplicate state `{s}`"),
                ));
            }
            b.state(s);
        }
        for (k, t) in file.transitions.iter().enumerate() {
            let line = locator.element_line("transitions", k);
            let tags: Vec<&str> = t.tags.iter().map(String::as_str).collect();
            let follows: Vec<&str> = t.follows.iter().map(String::as_str).collect();
            b.try_transition(&t.from, &t.action_id, &t.text, &tags, &follows, &t.to)
                .map_err(|m| invalid(line, format!("transition {k}: {m}")))?;
        }
        b.initial_name = Some(file.initial.clone());
        b.goal_names = file.goals.clone();
        b.build().map_err(|e| {
            let line = match e.field {
                "initial" => locator.key_line("initial"),
                "goals" => locator.key_line("goals"),
                "horizon" => locator.key_line("horizon"),
                "instruction" => locator.key_line("instruction"),
                _ => None,
            };
            invalid(line, e.message)
        })
    }

    pub fn to_json_string(&self) -> String {
        let mut transitions = Vec::new();
        for (s, ts) in self.transitions.iter().enumerate() {
            for t in ts {
                transitions.push(TransitionFile {
                    from: self.states[s].clone(),
                    action_id: t.action.action_id.clone(),
                    text: t.action.text.clone(),
                    tags: t.action.tags.iter().cloned().collect(),
                    follows: t.action.follows.iter().cloned().collect(),
                    to: self.states[t.to].clone(),
                });
            }
        }
        let file = EnvFile {
            id: Some(self.id.clone()),
            states: self.states.clone(),
            transitions,
            initial: self.states[self.initial].clone(),
            goals: self.goal_states().map(|g| self.states[g].clone()).collect(),
            instruction: self.instruction.clone(),
            instruction_tags: self.instruction_tags.iter().cloned().collect(),
            horizon: self.horizon,
        };
        serde_json::to_string_pretty(&file).expect("environment serializes")
    }
}

/// Loads every `*.json` environment in a directory, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<TaskGraph>, EnvError> {
    let io = |source| EnvError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| TaskGraph::load(p)).collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    states: Vec<String>,
    transitions: Vec<TransitionFile>,
    initial: String,
    goals: Vec<String>,
    instruction: String,
    #[serde(default)]
    instruction_tags: Vec<String>,
    horizon: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionFile {
    from: String,
    action_id: String,
    text: String,
    #[serde(default)]
    tags: Vec<String>,
    #[serde(default)]
    follows: Vec<String>,
    to: String,
}

#[derive(Debug)]
pub struct BuildError {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for BuildError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for BuildError {}

/// Incremental constructor for [`TaskGraph`]; validates on [`GraphBuilder::build`].
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    id: String,
    instruction: String,
    instruction_tags: BTreeSet<String>,
    horizon: usize,
    states: Vec<String>,
    index: HashMap<String, usize>,
    transitions: Vec<Vec<Transition>>,
    initial_name: Option<String>,
    goal_names: Vec<String>,
}

impl GraphBuilder {
    pub fn new(id: &str, instruction: &str) -> Self {
        GraphBuilder {
            id: id.to_string(),
            instruction: instruction.to_string(),
            instruction_tags: BTreeSet::new(),
            horizon: 0,
            states: Vec::new(),
            index: HashMap::new(),
            transitions: Vec::new(),
            initial_name: None,
            goal_names: Vec::new(),
        }
    }

    pub fn instruction_tags<'a>(&mut self, tags: impl IntoIterator<Item = &'a str>) -> &mut Self {
        self.instruction_tags = tags.into_iter().map(str::to_string).collect();
        self
    }

    pub fn horizon(&mut self, h: usize) -> &mut Self {
        self.horizon = h;
        self
    }

    pub fn state(&mut self, name: &str) -> &mut Self {
        if !self.index.contains_key(name) {
            self.index.insert(name.to_string(), self.states.len());
            self.states.push(name.to_string());
            self.transitions.push(Vec::new());
        }
        self
    }

    pub fn initial(&mut self, name: &str) -> &mut Self {
        self.initial_name = Some(name.to_string());
        self
    }

    pub fn goal(&mut self, name: &str) -> &mut Self {
        self.goal_names.push(name.to_string());
        self
    }

    /// Adds a transition, creating missing states. Panics on invalid input;
    /// use [`GraphBuilder::try_transition`] for fallible construction.
    pub fn transition(
        &mut self,
        from: &str,
        action_id: &str,
        text: &str,
        tags: &[&str],
        follows: &[&str],
        to: &str,
    ) -> &mut Self {
        self.state(from).state(to);
        self.try_transition(from, action_id, text, tags, follows, to)
            .unwrap_or_else(|e| panic!("{e}"));
        self
    }

    pub fn try_transition(
        &mut self,
        from: &str,
        action_id: &str,
        text: &str,
        tags: &[&str],
        follows: &[&str],
        to: &str,
    ) -> Result<(), String> {
        let from_ix = *self
            .index
            .get(from)
            .ok_or_else(|| format!("source state `{from}` is not declared"))?;
        let to_ix = *self
            .index
            .get(to)
            .ok_or_else(|| format!("target state `{to}` is not declared"))?;
        if text.trim().is_empty() {
            return Err(format!("action `{action_id}` has empty text"));
        }
        if action_id.is_empty() {
            return Err("empty action id".to_string());
        }
        if self.transitions[from_ix]
            .iter()
            .any(|t| t.action.action_id == action_id)
        {
            return Err(format!(
                "action id `{action_id}` is not unique in state `{from}`"
            ));
        }
        self.transitions[from_ix].push(Transition {
            action: ActionRecord {
                action_id: action_id.to_string(),
                text: text.to_string(),
                tags: tags.iter().map(|s| s.to_string()).collect(),
                follows: follows.iter().map(|s| s.to_string()).collect(),
            },
            to: to_ix,
        });
        Ok(())
    }

    pub fn build(&self) -> Result<TaskGraph, BuildError> {
        let err = |field, message: String| BuildError { field, message };
        if self.horizon == 0 {
            return Err(err("horizon", "horizon must be a positive integer".into()));
        }
        if self.instruction.trim().is_empty() {
            return Err(err("instruction", "instruction is empty".into()));
        }
        let initial_name = self
            .initial_name
            .as_deref()
            .ok_or_else(|| err("initial", "no initial state".into()))?;
        let initial = *self
            .index
            .get(initial_name)
            .ok_or_else(|| err("initial", format!("initial state `{initial_name}` is not declared")))?;
        if self.goal_names.is_empty() {
            return Err(err("goals", "at least one goal state is required".into()));
        }
        let mut goals = vec![false; self.states.len()];
        for g in &self.goal_names {
            let ix = *self
                .index
                .get(g)
                .ok_or_else(|| err("goals", format!("goal state `{g}` is not declared")))?;
            goals[ix] = true;
        }
        let dist = reverse_bfs(&self.transitions, &goals);
        match dist[initial] {
            Some(d) if d <= self.horizon => {}
            Some(d) => {
                return Err(err(
                    "horizon",
                    format!("shortest solution needs {d} steps but horizon is {}", self.horizon),
                ))
            }
            None => {
                return Err(err(
                    "initial",
                    format!("no goal state is reachable from `{initial_name}`"),
                ))
            }
        }
        Ok(TaskGraph {
            id: self.id.clone(),
            states: self.states.clone(),
            index: self.index.clone(),
            transitions: self.transitions.clone(),
            initial,
            goals,
            instruction: self.instruction.clone(),
            instruction_tags: self.instruction_tags.clone(),
            horizon: self.horizon,
            dist,
        })
    }
}

fn reverse_bfs(transitions: &[Vec<Transition>], goals: &[bool]) -> Vec<Option<usize>> {
    let n = transitions.len();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (s, ts) in transitions.iter().enumerate() {
        for t in ts {
            preds[t.to].push(s);
        }
    }
    let mut dist = vec![None; n];
    let mut queue = VecDeque::new();
    for (s, &g) in goals.iter().enumerate() {
        if g {
            dist[s] = Some(0);
            queue.push_back(s);
        }
    }
    while let Some(s) = queue.pop_front() {
        let d = dist[s].unwrap_or(0);
        for &p in &preds[s] {
            if dist[p].is_none() {
                dist[p] = Some(d + 1);
                queue.push_back(p);
            }
        }
    }
    dist
}

/// Finds source lines of top-level keys and array elements in a JSON document
/// without a full span-tracking parser.
struct JsonLocator {
    keys: HashMap<String, (usize, Vec<usize>)>,
}

impl JsonLocator {
    fn new(raw: &str) -> Self {
        let bytes = raw.as_bytes();
        let mut keys = HashMap::new();
        let mut depth = 0usize;
        let mut line = 1usize;
        let mut i = 0usize;
        let mut last_string: Option<(String, usize)> = None;
        let mut current_key: Option<String> = None;
        let mut expect_element = false;
        while i < bytes.len() {
            let c = bytes[i];
            match c {
                b'\n' => line += 1,
                b'"' => {
                    let start_line = line;
                    let mut j = i + 1;
                    let mut s = Vec::new();
                    while j < bytes.len() && bytes[j] != b'"' {
                        if bytes[j] == b'\\' {
                            j += 1;
                        }
                        if j < bytes.len() {
                            if bytes[j] == b'\n' {
                                line += 1;
                            }
                            s.push(bytes[j]);
                        }
                        j += 1;
                    }
                    if depth == 2 && expect_element {
                        Self::push_element(&mut keys, &current_key, start_line);
                        expect_element = false;
                    }
                    last_string = Some((String::from_utf8_lossy(&s).into_owned(), start_line));
                    i = j;
                }
                b':' if depth == 1 => {
                    if let Some((k, l)) = last_string.take() {
                        keys.insert(k.clone(), (l, Vec::new()));
                        current_key = Some(k);
                    }
                }
                b'{' | b'[' => {
                    if depth == 2 && expect_element {
                        Self::push_element(&mut keys, &current_key, line);
                        expect_element = false;
                    }
                    depth += 1;
                    if depth == 2 && c == b'[' {
                        expect_element = true;
                    }
                }
                b'}' | b']' => {
                    depth = depth.saturating_sub(1);
                    expect_element = false;
                }
                b',' if depth == 2 => expect_element = true,
                b' ' | b'\t' | b'\r' => {}
                _ => {
                    if depth == 2 && expect_element {
                        Self::push_element(&mut keys, &current_key, line);
                        expect_element = false;
                    }
                }
            }
            i += 1;
        }
        JsonLocator { keys }
    }

    fn push_element(
        keys: &mut HashMap<String, (usize, Vec<usize>)>,
        key: &Option<String>,
        line: usize,
    ) {
        if let Some(k) = key {
            if let Some(entry) = keys.get_mut(k) {
                entry.1.push(line);
            }
        }
    }

    fn key_line(&self, key: &str) -> Option<usize> {
        self.keys.get(key).map(|(l, _)| *l)
    }

    fn element_line(&self, key: &str, k: usize) -> Option<usize> {
        self.keys
            .get(key)
            .and_then(|(l, elems)| elems.get(k).copied().or(Some(*l)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear() -> TaskGraph {
        let mut b = GraphBuilder::new("linear", "do three things");
        b.transition("s0", "a1", "first", &["t"], &[], "s1")
            .transition("s1", "a2", "second", &["t"], &["a1"], "s2")
            .transition("s2", "a3", "third", &["t"], &["a2"], "g")
            .transition("s0", "x1", "wander off", &[], &[], "dead")
            .initial("s0")
            .goal("g")
            .horizon(3);
        b.build().unwrap()
    }

    #[test]
    fn step_follows_declared_transition() {
        let env = linear();
        let st = env.step(&env.start(), "a1").unwrap();
        assert_eq!(env.state_name(st.current), "s1");
        assert_eq!(st.steps_taken, 1);
        assert_eq!(st.history, vec![(env.initial(), "a1".to_string())]);
    }

    #[test]
    fn step_rejects_unlisted_action() {
        let env = linear();
        assert!(matches!(
            env.step(&env.start(), "a2"),
            Err(EnvError::UnknownAction { .. })
        ));
    }

    #[test]
    fn step_rejects_past_horizon() {
        let env = linear();
        let st = EpisodeState {
            current: env.state_index("s1").unwrap(),
            steps_taken: 3,
            history: vec![],
        };
        assert!(matches!(
            env.step(&st, "a2"),
            Err(EnvError::HorizonExceeded { horizon: 3 })
        ));
    }

    #[test]
    fn success_and_min_steps() {
        let env = linear();
        assert!(!env.is_success(&env.start()));
        let mut st = env.start();
        for a in ["a1", "a2", "a3"] {
            st = env.step(&st, a).unwrap();
        }
        assert!(env.is_success(&st));
        assert_eq!(env.min_steps(env.initial()).unwrap(), Remaining::Steps(3));
        assert_eq!(env.min_steps_by_name("g").unwrap(), Remaining::Steps(0));
        assert_eq!(env.min_steps_by_name("dead").unwrap(), Remaining::Unreachable);
        let dead = EpisodeState {
            current: env.state_index("dead").unwrap(),
            steps_taken: 1,
            history: vec![],
        };
        assert!(!env.is_success(&dead));
        assert!(env.min_steps(99).is_err());
        assert!(env.min_steps_by_name("nowhere").is_err());
    }

    #[test]
    fn horizon_shorter_than_solution_is_rejected() {
        let mut b = GraphBuilder::new("x", "go");
        b.transition("a", "1", "one", &[], &[], "b")
            .transition("b", "2", "two", &[], &[], "c")
            .initial("a")
            .goal("c")
            .horizon(1);
        let e = b.build().unwrap_err();
        assert_eq!(e.field, "horizon");
    }

    #[test]
    fn loader_reports_line_of_bad_transition() {
        let raw = r#"{
  "states": ["s0", "g"],
  "transitions": [
    {"from": "s0", "action_id": "a", "text": "go", "to": "g"},
    {"from": "s0", "action_id": "b", "text": "lost", "to": "nowhere"}
  ],
  "initial": "s0",
  "goals": ["g"],
  "instruction": "reach g",
  "horizon": 2
}"#;
        let err = TaskGraph::from_json_str(raw, "t", "t.json").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("t.json: line 5:"), "{msg}");
        assert!(msg.contains("nowhere"));
    }

    #[test]
    fn loader_reports_duplicate_action_and_unknown_goal() {
        let dup = r#"{
  "states": ["s0", "g"],
  "transitions": [
    {"from": "s0", "action_id": "a", "text": "go", "to": "g"},
    {"from": "s0", "action_id": "a", "text": "again", "to": "g"}
  ],
  "initial": "s0", "goals": ["g"], "instruction": "i", "horizon": 2
}"#;
        let msg = TaskGraph::from_json_str(dup, "t", "t.json").unwrap_err().to_string();
        assert!(msg.contains("line 5") && msg.contains("not unique"), "{msg}");

        let goal = r#"{
  "states": ["s0", "g"],
  "transitions": [{"from": "s0", "action_id": "a", "text": "go", "to": "g"}],
  "initial": "s0",
  "goals": ["h"],
  "instruction": "i", "horizon": 2
}"#;
        let msg = TaskGraph::from_json_str(goal, "t", "t.json").unwrap_err().to_string();
        assert!(msg.contains("line 5") && msg.contains("`h`"), "{msg}");
    }

    #[test]
    fn loader_rejects_unknown_keys_and_empty_text() {
        let raw = r#"{"states": ["s0"], "transitions": [], "initial": "s0", "goals": ["s0"],
 "instruction": "i", "horizon": 1, "extra": 1}"#;
        assert!(TaskGraph::from_json_str(raw, "t", "t").is_err());
        let raw = r#"{"states": ["s0", "g"],
 "transitions": [{"from": "s0", "action_id": "a", "text": " ", "to": "g"}],
 "initial": "s0", "goals": ["g"], "instruction": "i", "horizon": 1}"#;
        let msg = TaskGraph::from_json_str(raw, "t", "t").unwrap_err().to_string();
        assert!(msg.contains("empty text") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn json_round_trip_preserves_structure() {
        let env = linear();
        let back = TaskGraph::from_json_str(&env.to_json_string(), "z", "z").unwrap();
        assert_eq!(back.id(), "linear");
        assert_eq!(back.num_states(), env.num_states());
        for s in 0..env.num_states() {
            assert_eq!(back.min_steps(s).unwrap(), env.min_steps(s).unwrap());
            assert_eq!(back.actions(s).len(), env.actions(s).len());
        }
    }

    #[test]
    fn observation_lists_actions() {
        let env = linear();
        assert_eq!(
            env.observation(env.initial()),
            "Screen: s0\nAvailable actions:\n- first\n- wander off"
        );
        assert!(env.observation(env.state_index("dead").unwrap()).ends_with("(none)"));
    }
}
