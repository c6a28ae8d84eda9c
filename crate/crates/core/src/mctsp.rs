//! Monte Carlo tree search whose node values are five-dimensional step scores.
//!
//! Each expansion scores the new child once: N random rollouts from the
//! child's state give the basic reward, OS and the mean remaining length, the
//! judge supplies TR and C, and H follows from the accumulated contribution
//! along the root-to-child path. The five-component score vector is then
//! backed up; selection reads the composite sum `v/n`.

use crate::dims::{self, DimsError, HelpfulnessContext, RolloutBundle, StepScores};
use crate::judge::{Judge, JudgeError, JudgeRequest};
use crate::taskenv::{ActionRecord, EnvError, EpisodeState, TaskGraph};
use crate::util::derived_rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

pub const DEFAULT_C: f64 = 1.4;
/// Rollouts per expansion used by the CLI when `--rollouts` is omitted.
pub const DEFAULT_ROLLOUTS: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("budget needs at least one iteration and one rollout")]
    InvalidBudget,
    #[error("node has no children")]
    Childless,
    #[error("node is fully expanded")]
    FullyExpanded,
    #[error("ucb needs positive visit counts (child {n_child}, parent {n_parent})")]
    ZeroVisits { n_child: u64, n_parent: u64 },
    #[error("search root is terminal")]
    TerminalRoot,
    #[error("root action `{0}` is not available")]
    UnknownRootAction(String),
    #[error("backup value: {0}")]
    Backup(#[source] BackupError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Dims(#[from] DimsError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub iterations: usize,
    pub rollouts: usize,
    pub exploration_c: f64,
    pub rng_seed: u64,
}

impl SearchBudget {
    pub fn new(iterations: usize, rollouts: usize, exploration_c: f64, rng_seed: u64) -> Self {
        SearchBudget {
            iterations,
            rollouts,
            exploration_c,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.iterations == 0 || self.rollouts == 0 || self.exploration_c.is_nan() || self.exploration_c < 0.0 {
            return Err(SearchError::InvalidBudget);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchNode {
    pub action: Option<ActionRecord>,
    pub state: usize,
    pub n: u64,
    /// Sums of H, OS, E, TR, C over every backup through this node.
    pub v: [f64; 5],
    /// The node's own step scores (zero at the root).
    pub scores: StepScores,
    /// Vector backed up when this node is the leaf of an iteration.
    pub leaf_value: [f64; 5],
    pub ac: f64,
    /// Tree depth; the root is 0.
    pub depth: usize,
    /// Episode steps taken once this node's action has been applied.
    pub steps_taken: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub expanded_actions: BTreeSet<String>,
    /// Effective minimum total steps used for this node's H.
    pub m_eff: usize,
    pub rollouts: RolloutBundle,
    /// Mean remaining length of this node's rollouts.
    pub len: f64,
    pub terminal: bool,
}

impl SearchNode {
    pub fn mean_value(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.v.iter().sum::<f64>() / self.n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackupRecord {
    pub leaf: usize,
    pub value: [f64; 5],
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub expansions: usize,
    pub terminal_revisits: usize,
    pub env_errors: usize,
    pub judge_calls: usize,
}

/// Everything a backup-value override can see about a freshly scored node.
pub struct NodeView<'a> {
    pub env: &'a TaskGraph,
    /// Episode state the action was taken in.
    pub before: &'a EpisodeState,
    /// Accumulated contribution before the action.
    pub ac_prev: f64,
    /// Observation of the state the action was taken in.
    pub observation: &'a str,
    pub trajectory: &'a [String],
    pub step_idx: usize,
    pub action: &'a ActionRecord,
    pub scores: &'a StepScores,
}

/// Replaces the oracle score vector as the quantity backed up through the tree.
pub trait BackupValue: Sync {
    fn value(&self, view: &NodeView<'_>) -> Result<[f64; 5], BackupError>;
}

pub type BackupError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Default)]
pub struct SearchOptions<'a> {
    /// Start from a mid-episode state instead of the initial state.
    pub start: Option<EpisodeState>,
    /// Restrict the root's children to these action ids.
    pub root_actions: Option<Vec<String>>,
    pub backup: Option<&'a dyn BackupValue>,
    /// Accumulated contribution already earned before the root.
    pub root_ac: f64,
}

#[derive(Debug, Clone)]
pub struct SearchTree {
    pub nodes: Vec<SearchNode>,
    pub budget: SearchBudget,
    pub diagnostics: Diagnostics,
    pub backup_log: Vec<BackupRecord>,
    /// Action texts taken before the root.
    pub prefix: Vec<String>,
    /// Action taken immediately before the root, for coherence.
    pub prefix_action: Option<ActionRecord>,
    pub env_id: String,
    root_actions: Option<Vec<String>>,
}

pub const ROOT: usize = 0;

pub fn composite_value(s: &StepScores) -> f64 {
    s.h + s.os + s.e + s.tr + s.c
}

pub fn ucb_score(v_child: f64, n_child: u64, n_parent: u64, c: f64) -> Result<f64, SearchError> {
    if n_child == 0 || n_parent == 0 {
        return Err(SearchError::ZeroVisits { n_child, n_parent });
    }
    let nc = n_child as f64;
    Ok(v_child / nc + c * (2.0 * (n_parent as f64).ln() / nc).sqrt())
}

/// Uniform random playout from `st` until a goal, the horizon, or a dead end.
/// Returns the success flag and the number of steps consumed.
pub fn default_policy(env: &TaskGraph, st: &EpisodeState, rng: &mut ChaCha8Rng) -> (bool, usize) {
    let mut cur = st.current;
    let mut steps = st.steps_taken;
    let mut used = 0;
    while !env.is_goal(cur) && steps < env.horizon() {
        let acts = env.actions(cur);
        if acts.is_empty() {
            break;
        }
        cur = acts[rng.random_range(0..acts.len())].to;
        steps += 1;
        used += 1;
    }
    (env.is_goal(cur), used)
}

/// N playouts; failed playouts count the horizon as their remaining length.
pub fn rollout_bundle(env: &TaskGraph, st: &EpisodeState, n: usize, rng: &mut ChaCha8Rng) -> Result<RolloutBundle, DimsError> {
    let mut outcomes = Vec::with_capacity(n);
    let mut lengths = Vec::with_capacity(n);
    for _ in 0..n {
        let (ok, used) = default_policy(env, st, rng);
        outcomes.push(ok);
        lengths.push(if ok { used } else { env.horizon() });
    }
    RolloutBundle::new(outcomes, lengths)
}

impl SearchTree {
    pub fn root(&self) -> &SearchNode {
        &self.nodes[ROOT]
    }

    pub fn node(&self, id: usize) -> &SearchNode {
        &self.nodes[id]
    }

    /// Action ids from the root down to `id`.
    pub fn path(&self, id: usize) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            out.push(self.nodes[cur].action.as_ref().expect("non-root").action_id.clone());
            cur = p;
        }
        out.reverse();
        out
    }

    /// Action records from the root down to `id`.
    pub fn path_actions(&self, id: usize) -> Vec<&ActionRecord> {
        let mut out = Vec::new();
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            out.push(self.nodes[cur].action.as_ref().expect("non-root"));
            cur = p;
        }
        out.reverse();
        out
    }

    /// Full trajectory texts (prefix included) up to, not including, `id`'s action.
    pub fn trajectory_before(&self, id: usize) -> Vec<String> {
        let mut out = self.prefix.clone();
        let acts = self.path_actions(id);
        let take = acts.len().saturating_sub(1);
        out.extend(acts[..take].iter().map(|a| a.text.clone()));
        out
    }

    fn legal_actions(&self, env: &TaskGraph, id: usize) -> Vec<ActionRecord> {
        let node = &self.nodes[id];
        let all = env.actions(node.state).iter().map(|t| t.action.clone());
        match (&self.root_actions, id == ROOT) {
            (Some(allowed), true) => all.filter(|a| allowed.contains(&a.action_id)).collect(),
            _ => all.collect(),
        }
    }

    pub fn is_fully_expanded(&self, env: &TaskGraph, id: usize) -> bool {
        let node = &self.nodes[id];
        self.legal_actions(env, id)
            .iter()
            .all(|a| node.expanded_actions.contains(&a.action_id))
    }

    pub fn best_child(&self, id: usize, c: f64) -> Result<usize, SearchError> {
        best_child_of(&self.nodes, id, c)
    }

    /// Follows `best_child(·, 0)` from the root until a leaf.
    pub fn greedy_path(&self) -> Vec<String> {
        let mut cur = ROOT;
        let mut out = Vec::new();
        while let Ok(next) = self.best_child(cur, 0.0) {
            out.push(self.nodes[next].action.as_ref().expect("child").action_id.clone());
            cur = next;
        }
        out
    }

    /// Value backed up when the tree policy lands on a terminal node again:
    /// the per-dimension mean of the leaf values along the root-to-node path.
    /// A finished leaf has no playout left, so the completed trajectory is
    /// scored as a whole and shorter routes to the same goal rank higher.
    pub fn revisit_value(&self, id: usize) -> [f64; 5] {
        let mut sum = [0.0; 5];
        let mut steps = 0usize;
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            for (s, x) in sum.iter_mut().zip(self.nodes[cur].leaf_value) {
                *s += x;
            }
            steps += 1;
            cur = p;
        }
        sum.map(|s| s / steps.max(1) as f64)
    }

    /// Adds n and the value vector to `leaf` and each ancestor.
    pub fn backup(&mut self, leaf: usize, value: [f64; 5]) {
        let mut cur = Some(leaf);
        while let Some(id) = cur {
            let node = &mut self.nodes[id];
            node.n += 1;
            for (acc, x) in node.v.iter_mut().zip(value) {
                *acc += x;
            }
            cur = node.parent;
        }
        self.backup_log.push(BackupRecord { leaf, value });
    }

    /// Preorder JSON snapshot of the tree.
    pub fn snapshot(&self) -> Vec<NodeSnapshot> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![ROOT];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            out.push(NodeSnapshot {
                path: self.path(id),
                action_id: node.action.as_ref().map(|a| a.action_id.clone()),
                n: node.n,
                v: node.v,
                scores: node.scores.to_array(),
                ac: node.ac,
            });
            stack.extend(node.children.iter().rev());
        }
        out
    }

    pub fn snapshot_json(&self) -> String {
        serde_json::to_string(&self.snapshot()).expect("snapshot serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub path: Vec<String>,
    pub action_id: Option<String>,
    pub n: u64,
    pub v: [f64; 5],
    pub scores: [f64; 5],
    pub ac: f64,
}

/// Unvisited children first (insertion order), then highest UCB, lowest index on ties.
pub fn best_child_of(nodes: &[SearchNode], id: usize, c: f64) -> Result<usize, SearchError> {
    let node = &nodes[id];
    if node.children.is_empty() {
        return Err(SearchError::Childless);
    }
    if let Some(&unvisited) = node.children.iter().find(|&&ch| nodes[ch].n == 0) {
        return Ok(unvisited);
    }
    let mut best = node.children[0];
    let mut best_score = f64::NEG_INFINITY;
    for &ch in &node.children {
        let child = &nodes[ch];
        let v: f64 = child.v.iter().sum();
        let s = ucb_score(v, child.n, node.n.max(1), c)?;
        if s > best_score {
            best = ch;
            best_score = s;
        }
    }
    Ok(best)
}

struct Searcher<'a> {
    env: &'a TaskGraph,
    judge: &'a dyn Judge,
    budget: SearchBudget,
    backup_override: Option<&'a dyn BackupValue>,
    len0: f64,
    start: EpisodeState,
    tree: SearchTree,
}

impl<'a> Searcher<'a> {
    /// Episode state at `id`, with the pre-root history and the tree path.
    fn episode_at(&self, id: usize) -> EpisodeState {
        let node = &self.tree.nodes[id];
        let mut tail = Vec::new();
        let mut cur = id;
        while let Some(p) = self.tree.nodes[cur].parent {
            let a = self.tree.nodes[cur].action.as_ref().expect("non-root");
            tail.push((self.tree.nodes[p].state, a.action_id.clone()));
            cur = p;
        }
        let mut history = self.start.history.clone();
        history.extend(tail.into_iter().rev());
        EpisodeState {
            current: node.state,
            steps_taken: node.steps_taken,
            history,
        }
    }

    fn node_rng(&self, label: &str, path: &[String], extra: usize) -> ChaCha8Rng {
        let mut parts: Vec<String> = vec![self.env.id().to_string(), label.to_string()];
        parts.extend(path.iter().cloned());
        parts.push(extra.to_string());
        derived_rng(self.budget.rng_seed, parts)
    }

    /// Adds one untried child, scores it, and returns its id with its backup value.
    fn expand(&mut self, id: usize) -> Result<(usize, [f64; 5]), SearchError> {
        let untried: Vec<ActionRecord> = self
            .tree
            .legal_actions(self.env, id)
            .into_iter()
            .filter(|a| !self.tree.nodes[id].expanded_actions.contains(&a.action_id))
            .collect();
        if untried.is_empty() {
            return Err(SearchError::FullyExpanded);
        }
        let path = self.tree.path(id);
        let mut rng = self.node_rng("expand", &path, self.tree.nodes[id].children.len());
        let action = untried[rng.random_range(0..untried.len())].clone();

        let parent_ep = self.episode_at(id);
        let next = self.env.step(&parent_ep, &action.action_id)?;
        let parent = &self.tree.nodes[id];
        let step_idx = next.steps_taken;
        let m_eff = next.steps_taken + self.env.remaining_length(next.current);

        let mut child_path = path.clone();
        child_path.push(action.action_id.clone());
        let mut rrng = self.node_rng("rollout", &child_path, 0);
        let bundle = rollout_bundle(self.env, &next, self.budget.rollouts, &mut rrng)?;
        let r = dims::basic_reward(&bundle)?;
        let h = dims::helpfulness(&HelpfulnessContext {
            ac_prev: parent.ac,
            m_eff,
            i: step_idx,
            r,
        })?;
        let os = dims::odds_of_success(&bundle)?;
        let len = dims::mean_remaining_length(&bundle)?;
        let e = dims::efficiency(parent.len, len, self.len0)?;

        let mut trajectory = self.tree.prefix.clone();
        trajectory.extend(self.tree.path_actions(id).iter().map(|a| a.text.clone()));
        let prev_action = match &parent.action {
            Some(a) => Some(a.clone()),
            None => self.tree.prefix_action.clone(),
        };
        let observation = self.env.observation(parent.state);
        let mut req = JudgeRequest {
            instruction: self.env.instruction().to_string(),
            instruction_tags: self.env.instruction_tags().clone(),
            observation: observation.clone(),
            trajectory: trajectory.clone(),
            step_idx,
            action: action.clone(),
            prev_action,
            dimension: dims::Dimension::TR,
        };
        let tr = self.judge.judge(&req)?.value;
        req.dimension = dims::Dimension::C;
        let c = self.judge.judge(&req)?.value;
        self.tree.diagnostics.judge_calls += 2;

        let scores = StepScores::new(h, os, e, f64::from(tr), f64::from(c))?;
        let value = match self.backup_override {
            Some(b) => b.value(&NodeView {
                env: self.env,
                before: &parent_ep,
                ac_prev: parent.ac,
                observation: &observation,
                trajectory: &trajectory,
                step_idx,
                action: &action,
                scores: &scores,
            })
            .map_err(SearchError::Backup)?,
            None => scores.to_array(),
        };

        let ac = dims::update_ac(parent.ac, h);
        let depth = parent.depth + 1;
        let terminal = self.env.is_terminal(&next);
        let child = SearchNode {
            action: Some(action.clone()),
            state: next.current,
            n: 0,
            v: [0.0; 5],
            scores,
            leaf_value: value,
            ac,
            depth,
            steps_taken: next.steps_taken,
            parent: Some(id),
            children: Vec::new(),
            expanded_actions: BTreeSet::new(),
            m_eff,
            rollouts: bundle,
            len,
            terminal,
        };
        let cid = self.tree.nodes.len();
        self.tree.nodes.push(child);
        let parent = &mut self.tree.nodes[id];
        parent.children.push(cid);
        parent.expanded_actions.insert(action.action_id);
        self.tree.diagnostics.expansions += 1;
        Ok((cid, value))
    }

    fn iterate(&mut self) -> Result<(), SearchError> {
        let c = self.budget.exploration_c;
        let mut cur = ROOT;
        loop {
            if self.tree.nodes[cur].terminal {
                let value = self.tree.revisit_value(cur);
                self.tree.diagnostics.terminal_revisits += 1;
                self.tree.backup(cur, value);
                return Ok(());
            }
            if !self.tree.is_fully_expanded(self.env, cur) {
                let (child, value) = self.expand(cur)?;
                self.tree.backup(child, value);
                return Ok(());
            }
            cur = self.tree.best_child(cur, c)?;
        }
    }

}

/// Runs the search from the environment's initial state.
pub fn search(env: &TaskGraph, budget: SearchBudget, judge: &dyn Judge) -> Result<SearchTree, SearchError> {
    search_with(env, budget, judge, SearchOptions::default())
}

pub fn search_with(
    env: &TaskGraph,
    budget: SearchBudget,
    judge: &dyn Judge,
    opts: SearchOptions<'_>,
) -> Result<SearchTree, SearchError> {
    budget.validate()?;
    let start = opts.start.clone().unwrap_or_else(|| env.start());
    if env.is_terminal(&start) {
        return Err(SearchError::TerminalRoot);
    }
    if let Some(allowed) = &opts.root_actions {
        for a in allowed {
            if env.find_action(start.current, a).is_none() {
                return Err(SearchError::UnknownRootAction(a.clone()));
            }
        }
    }
    let len0 = env.remaining_length(env.initial()) as f64;
    let mut rng = derived_rng(budget.rng_seed, [env.id(), "rollout", "root"]);
    let root_bundle = rollout_bundle(env, &start, budget.rollouts, &mut rng)?;
    let root_len = dims::mean_remaining_length(&root_bundle)?;
    let prefix: Vec<String> = start
        .history
        .iter()
        .map(|(s, a)| {
            env.find_action(*s, a)
                .map(|t| t.action.text.clone())
                .ok_or_else(|| EnvError::UnknownAction {
                    state: env.state_name(*s).to_string(),
                    action: a.clone(),
                })
        })
        .collect::<Result<_, _>>()?;
    let prefix_action = start
        .history
        .last()
        .and_then(|(s, a)| env.find_action(*s, a))
        .map(|t| t.action.clone());
    let root = SearchNode {
        action: None,
        state: start.current,
        n: 0,
        v: [0.0; 5],
        scores: StepScores::default(),
        leaf_value: [0.0; 5],
        ac: opts.root_ac,
        depth: 0,
        steps_taken: start.steps_taken,
        parent: None,
        children: Vec::new(),
        expanded_actions: BTreeSet::new(),
        m_eff: start.steps_taken + env.remaining_length(start.current),
        rollouts: root_bundle,
        len: root_len,
        terminal: false,
    };
    let mut s = Searcher {
        env,
        judge,
        budget,
        backup_override: opts.backup,
        len0: len0.max(1.0),
        start: start.clone(),
        tree: SearchTree {
            nodes: vec![root],
            budget,
            diagnostics: Diagnostics::default(),
            backup_log: Vec::new(),
            prefix,
            prefix_action,
            env_id: env.id().to_string(),
            root_actions: opts.root_actions,
        },
    };
    for _ in 0..budget.iterations {
        match s.iterate() {
            Ok(()) => s.tree.diagnostics.iterations += 1,
            Err(SearchError::Env(_)) => s.tree.diagnostics.env_errors += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(s.tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::judge::RuleJudge;

    const TOL: f64 = 1e-9;

    fn leaf(v: [f64; 5], n: u64) -> SearchNode {
        SearchNode {
            action: None,
            state: 0,
            n,
            v,
            scores: StepScores::default(),
            leaf_value: [0.0; 5],
            ac: 0.0,
            depth: 1,
            steps_taken: 1,
            parent: Some(0),
            children: vec![],
            expanded_actions: BTreeSet::new(),
            m_eff: 1,
            rollouts: RolloutBundle::new(vec![true], vec![0]).unwrap(),
            len: 0.0,
            terminal: true,
        }
    }

    fn parent_of(children: Vec<SearchNode>) -> Vec<SearchNode> {
        let mut root = leaf([0.0; 5], children.iter().map(|c| c.n).sum());
        root.parent = None;
        root.children = (1..=children.len()).collect();
        let mut out = vec![root];
        out.extend(children);
        out
    }

    #[test]
    fn composite_examples() {
        assert_eq!(composite_value(&StepScores::default()), 0.0);
        let s = StepScores::new(1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 1.0, 1.0).unwrap();
        assert!((composite_value(&s) - 10.0 / 3.0).abs() < TOL);
        let f = StepScores::new(-0.25, 0.0, 0.0, 0.0, 0.0).unwrap();
        assert!((composite_value(&f) + 0.25).abs() < TOL);
    }

    #[test]
    fn ucb_examples() {
        assert!((ucb_score(3.0, 2, 10, 0.0).unwrap() - 1.5).abs() < TOL);
        assert!((ucb_score(1.0, 1, 1, 1.0).unwrap() - 1.0).abs() < TOL);
        let expect = 1.0 + 8f64.ln().sqrt();
        assert!((ucb_score(2.0, 2, 8, 1.0).unwrap() - expect).abs() < 1e-12);
        assert!((ucb_score(2.0, 2, 8, 1.0).unwrap() - 2.4420).abs() < 1e-4);
        assert!(ucb_score(1.0, 0, 3, 1.0).is_err());
    }

    #[test]
    fn best_child_rules() {
        let nodes = parent_of(vec![leaf([2.0, 0.0, 0.0, 0.0, 0.0], 1), leaf([0.0; 5], 0)]);
        assert_eq!(best_child_of(&nodes, 0, 1.0).unwrap(), 2);
        let nodes = parent_of(vec![leaf([2.0, 0.0, 0.0, 0.0, 0.0], 1), leaf([1.0, 0.0, 0.0, 0.0, 0.0], 1)]);
        assert_eq!(best_child_of(&nodes, 0, 0.0).unwrap(), 1);
        let nodes = parent_of(vec![leaf([1.0, 0.0, 0.0, 0.0, 0.0], 2), leaf([0.5, 0.0, 0.0, 0.0, 0.5], 2)]);
        assert_eq!(best_child_of(&nodes, 0, 1.4).unwrap(), 1);
        let lone = vec![leaf([0.0; 5], 1)];
        assert!(matches!(best_child_of(&lone, 0, 1.0), Err(SearchError::Childless)));
    }

    #[test]
    fn one_iteration_expands_one_child() {
        let env = fixtures::linear();
        let tree = search(&env, SearchBudget::new(1, 4, DEFAULT_C, 7), &RuleJudge).unwrap();
        assert_eq!(tree.nodes.len(), 2);
        assert_eq!(tree.root().n, 1);
        assert_eq!(tree.root().children.len(), 1);
    }

    #[test]
    fn linear_fixture_recovers_optimal_path() {
        let env = fixtures::linear();
        let tree = search(&env, SearchBudget::new(200, 4, DEFAULT_C, 7), &RuleJudge).unwrap();
        assert_eq!(tree.greedy_path(), ["open_clock", "tab_timer", "type_ok"]);
        assert_eq!(tree.root().n, 200);
    }

    #[test]
    fn expanding_a_full_node_is_rejected() {
        let env = fixtures::linear();
        let tree = search(&env, SearchBudget::new(50, 2, DEFAULT_C, 1), &RuleJudge).unwrap();
        let mut s = Searcher {
            env: &env,
            judge: &RuleJudge,
            budget: tree.budget,
            backup_override: None,
            len0: 3.0,
            start: env.start(),
            tree,
        };
        assert!(matches!(s.expand(ROOT), Err(SearchError::FullyExpanded)));
    }

    #[test]
    fn terminal_revisit_backs_up_path_mean() {
        let env = fixtures::linear();
        let tree = search(&env, SearchBudget::new(200, 4, DEFAULT_C, 7), &RuleJudge).unwrap();
        let leaf = (0..tree.nodes.len()).find(|&i| tree.node(i).terminal && tree.node(i).n > 1).unwrap();
        let path: Vec<[f64; 5]> = {
            let mut out = Vec::new();
            let mut cur = leaf;
            while let Some(p) = tree.node(cur).parent {
                out.push(tree.node(cur).leaf_value);
                cur = p;
            }
            out
        };
        let got = tree.revisit_value(leaf);
        for d in 0..5 {
            let want = path.iter().map(|v| v[d]).sum::<f64>() / path.len() as f64;
            assert!((got[d] - want).abs() < 1e-12);
        }
        let revisits = tree.backup_log.iter().filter(|b| b.leaf == leaf).count();
        assert_eq!(revisits as u64, tree.node(leaf).n);
    }

    #[test]
    fn search_is_deterministic() {
        let env = fixtures::branching();
        let b = SearchBudget::new(120, 4, DEFAULT_C, 11);
        let a = search(&env, b, &RuleJudge).unwrap().snapshot_json();
        let c = search(&env, b, &RuleJudge).unwrap().snapshot_json();
        assert_eq!(a, c);
    }

    #[test]
    fn mid_episode_root_restricts_children() {
        let env = fixtures::linear();
        let st = env.step(&env.start(), "open_clock").unwrap();
        let opts = SearchOptions {
            start: Some(st),
            root_actions: Some(vec!["tab_timer".into()]),
            backup: None,
            root_ac: 0.0,
        };
        let tree = search_with(&env, SearchBudget::new(20, 2, DEFAULT_C, 3), &RuleJudge, opts).unwrap();
        assert_eq!(tree.root().children.len(), 1);
        let child = tree.node(tree.root().children[0]);
        assert_eq!(child.action.as_ref().unwrap().action_id, "tab_timer");
        assert_eq!(child.steps_taken, 2);
        assert_eq!(tree.prefix, ["Open the Clock app"]);
        assert_eq!(child.scores.c, 1.0);
    }
}
