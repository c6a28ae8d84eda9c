//! Reward-guided action selection at inference time.
//!
//! A stand-in agent proposes N candidate actions per step; a scorer picks
//! one, either directly (rerank) or by running a short MCTS-P search from the
//! current state whose backed-up values come from the scorer. Sweeps over N
//! and over dimension masks report success rates with Wilson intervals.

use crate::dims::{self, Dimension, HelpfulnessContext, StepScores};
use crate::judge::{Judge, JudgeError, JudgeRequest, RuleJudge};
use crate::mctsp::{self, BackupError, BackupValue, NodeView, SearchBudget, SearchError, SearchOptions, ROOT};
use crate::taskenv::{ActionRecord, EnvError, EpisodeState, TaskGraph};
use crate::trainer::{render_context, RewardModelParams};
use crate::util::{derived_rng, stable_hash, wilson_interval};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum GuideError {
    #[error("invalid guidance config: {0}")]
    InvalidConfig(String),
    #[error("cannot select an action in a terminal state")]
    TerminalState,
    #[error("unknown dimension mask `{0}`")]
    BadMask(String),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PolicyKind {
    EpsOracle,
    Uniform,
}

/// Stand-in agent that proposes candidate actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentPolicy {
    pub kind: PolicyKind,
    pub epsilon: f64,
    pub rng_seed: u64,
}

impl AgentPolicy {
    pub fn eps_oracle(epsilon: f64, rng_seed: u64) -> Self {
        AgentPolicy {
            kind: PolicyKind::EpsOracle,
            epsilon,
            rng_seed,
        }
    }

    pub fn uniform(rng_seed: u64) -> Self {
        AgentPolicy {
            kind: PolicyKind::Uniform,
            epsilon: 1.0,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<(), GuideError> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(GuideError::InvalidConfig(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        Ok(())
    }

    /// One proposal in state `s`. With EPS_ORACLE an optimal action (uniform
    /// among ties) comes back with probability 1 − ε.
    pub fn propose<'e>(&self, env: &'e TaskGraph, s: usize, rng: &mut ChaCha8Rng) -> &'e ActionRecord {
        let legal = env.actions(s);
        if self.kind == PolicyKind::EpsOracle {
            let optimal = env.optimal_actions(s);
            let explore = rng.random::<f64>() < self.epsilon;
            if !explore && !optimal.is_empty() {
                return &optimal[rng.random_range(0..optimal.len())].action;
            }
        }
        &legal[rng.random_range(0..legal.len())].action
    }
}

/// Which of the five dimensions a scorer may use; masked dims contribute 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DimensionMask(pub [bool; 5]);

impl DimensionMask {
    pub const FULL: DimensionMask = DimensionMask([true; 5]);

    pub fn only(d: Dimension) -> Self {
        let mut m = [false; 5];
        m[d.index()] = true;
        DimensionMask(m)
    }

    pub fn is_full(&self) -> bool {
        self.0.iter().all(|&b| b)
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    pub fn apply(&self, v: [f64; 5]) -> [f64; 5] {
        let mut out = v;
        for (x, keep) in out.iter_mut().zip(self.0) {
            if !keep {
                *x = 0.0;
            }
        }
        out
    }

    /// One mask per dimension, in H, OS, E, TR, C order.
    pub fn singles() -> Vec<DimensionMask> {
        Dimension::ALL.iter().map(|&d| DimensionMask::only(d)).collect()
    }
}

impl fmt::Display for DimensionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = Dimension::ALL
            .iter()
            .filter(|d| self.0[d.index()])
            .map(|d| d.as_str())
            .collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for DimensionMask {
    type Err = GuideError;

    /// `H+OS`, a single dimension, or `full`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("full") || s.eq_ignore_ascii_case("all") {
            return Ok(DimensionMask::FULL);
        }
        let mut m = [false; 5];
        for part in s.split('+') {
            let d = Dimension::ALL
                .iter()
                .find(|d| d.as_str().eq_ignore_ascii_case(part.trim()))
                .ok_or_else(|| GuideError::BadMask(s.to_string()))?;
            m[d.index()] = true;
        }
        Ok(DimensionMask(m))
    }
}

/// Comma-separated list of masks, e.g. `H,OS,E,TR,C,full`.
pub fn parse_masks(s: &str) -> Result<Vec<DimensionMask>, GuideError> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GuideMode {
    Rerank,
    RmMcts,
}

impl FromStr for GuideMode {
    type Err = GuideError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rerank" => Ok(GuideMode::Rerank),
            "mcts" | "rm_mcts" => Ok(GuideMode::RmMcts),
            _ => Err(GuideError::InvalidConfig(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum GuideScorer {
    /// Exact expected step scores under the uniform rollout policy.
    Oracle,
    Trained(Box<RewardModelParams>),
    UniformRandom,
}

impl GuideScorer {
    pub fn name(&self) -> &'static str {
        match self {
            GuideScorer::Oracle => "oracle",
            GuideScorer::Trained(_) => "trained",
            GuideScorer::UniformRandom => "random",
        }
    }
}

/// Budget for the per-step search in RM_MCTS mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSearch {
    pub iterations: usize,
    pub rollouts: usize,
    pub exploration_c: f64,
}

impl Default for StepSearch {
    fn default() -> Self {
        StepSearch {
            iterations: 32,
            rollouts: 4,
            exploration_c: mctsp::DEFAULT_C,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GuidanceConfig {
    pub mode: GuideMode,
    pub n_candidates: usize,
    pub scorer: GuideScorer,
    pub mask: DimensionMask,
    /// Episodes per environment.
    pub episodes: usize,
    pub seed: u64,
    pub search: StepSearch,
}

impl GuidanceConfig {
    pub fn rerank(scorer: GuideScorer, n_candidates: usize, episodes: usize, seed: u64) -> Self {
        GuidanceConfig {
            mode: GuideMode::Rerank,
            n_candidates,
            scorer,
            mask: DimensionMask::FULL,
            episodes,
            seed,
            search: StepSearch::default(),
        }
    }

    pub fn validate(&self) -> Result<(), GuideError> {
        if self.n_candidates == 0 {
            return Err(GuideError::InvalidConfig("N must be at least 1".into()));
        }
        if self.episodes == 0 {
            return Err(GuideError::InvalidConfig("episodes must be at least 1".into()));
        }
        if self.mask.is_empty() && !matches!(self.scorer, GuideScorer::UniformRandom) {
            return Err(GuideError::InvalidConfig("dimension mask is empty".into()));
        }
        if self.mode == GuideMode::RmMcts && (self.search.iterations == 0 || self.search.rollouts == 0) {
            return Err(GuideError::InvalidConfig("step search needs iterations and rollouts".into()));
        }
        Ok(())
    }
}

/// Exact success probability and expected remaining length of the uniform
/// random playout, indexed by state and steps left before the horizon.
#[derive(Debug, Clone)]
pub struct PlayoutOracle {
    horizon: usize,
    p: Vec<Vec<f64>>,
    len: Vec<Vec<f64>>,
    len0: f64,
}

impl PlayoutOracle {
    pub fn new(env: &TaskGraph) -> Self {
        let h = env.horizon();
        let n = env.num_states();
        let mut p = vec![vec![0.0; h + 1]; n];
        // expected steps used on successful playouts, weighted by success
        let mut used = vec![vec![0.0; h + 1]; n];
        for k in 0..=h {
            for s in 0..n {
                if env.is_goal(s) {
                    p[s][k] = 1.0;
                    continue;
                }
                let acts = env.actions(s);
                if k == 0 || acts.is_empty() {
                    continue;
                }
                let w = 1.0 / acts.len() as f64;
                for t in acts {
                    p[s][k] += w * p[t.to][k - 1];
                    used[s][k] += w * (p[t.to][k - 1] + used[t.to][k - 1]);
                }
            }
        }
        let len = (0..n)
            .map(|s| (0..=h).map(|k| used[s][k] + h as f64 * (1.0 - p[s][k])).collect())
            .collect();
        PlayoutOracle {
            horizon: h,
            p,
            len,
            len0: env.remaining_length(env.initial()).max(1) as f64,
        }
    }

    fn left(&self, st: &EpisodeState) -> usize {
        self.horizon.saturating_sub(st.steps_taken)
    }

    pub fn success_probability(&self, st: &EpisodeState) -> f64 {
        self.p[st.current][self.left(st)]
    }

    /// Expected rollout length with failures counted as the horizon.
    pub fn expected_len(&self, st: &EpisodeState) -> f64 {
        self.len[st.current][self.left(st)]
    }

    /// Expected-value step scores for taking `action_id` in `st`.
    pub fn step_scores(
        &self,
        env: &TaskGraph,
        st: &EpisodeState,
        ac_prev: f64,
        action_id: &str,
    ) -> Result<StepScores, GuideError> {
        let next = env.step(st, action_id)?;
        let action = &env.find_action(st.current, action_id).expect("stepped").action;
        let os = self.success_probability(&next);
        let h = dims::helpfulness(&HelpfulnessContext {
            ac_prev,
            m_eff: next.steps_taken + env.remaining_length(next.current),
            i: next.steps_taken,
            r: os > 0.0,
        })
        .map_err(|e| GuideError::InvalidConfig(e.to_string()))?;
        let e = (self.expected_len(st) - self.expected_len(&next)) / self.len0;
        let mut req = JudgeRequest {
            instruction: env.instruction().to_string(),
            instruction_tags: env.instruction_tags().clone(),
            observation: String::new(),
            trajectory: Vec::new(),
            step_idx: next.steps_taken,
            action: action.clone(),
            prev_action: prev_action(env, st),
            dimension: Dimension::TR,
        };
        let tr = RuleJudge.judge(&req)?.value;
        req.dimension = Dimension::C;
        let c = RuleJudge.judge(&req)?.value;
        StepScores::new(h, os, e, f64::from(tr), f64::from(c)).map_err(|e| GuideError::InvalidConfig(e.to_string()))
    }

    /// Accumulated contribution of the oracle H along the episode so far.
    pub fn episode_ac(&self, env: &TaskGraph, st: &EpisodeState) -> Result<f64, GuideError> {
        let mut cur = env.start();
        let mut ac = 0.0;
        for (_, a) in &st.history {
            let next = env.step(&cur, a)?;
            let h = dims::helpfulness(&HelpfulnessContext {
                ac_prev: ac,
                m_eff: next.steps_taken + env.remaining_length(next.current),
                i: next.steps_taken,
                r: self.success_probability(&next) > 0.0,
            })
            .map_err(|e| GuideError::InvalidConfig(e.to_string()))?;
            ac = dims::update_ac(ac, h);
            cur = next;
        }
        Ok(ac)
    }
}

fn prev_action(env: &TaskGraph, st: &EpisodeState) -> Option<ActionRecord> {
    let (s, a) = st.history.last()?;
    env.find_action(*s, a).map(|t| t.action.clone())
}

fn trajectory_texts(env: &TaskGraph, st: &EpisodeState) -> Vec<String> {
    st.history
        .iter()
        .filter_map(|(s, a)| env.find_action(*s, a).map(|t| t.action.text.clone()))
        .collect()
}

/// Per-environment scoring context shared by both guidance modes.
struct Scoring<'a> {
    env: &'a TaskGraph,
    oracle: &'a PlayoutOracle,
    cfg: &'a GuidanceConfig,
    episode: usize,
}

impl Scoring<'_> {
    /// Masked five-vector for one candidate; the selection value is its sum.
    fn vector(
        &self,
        st: &EpisodeState,
        ac_prev: f64,
        action: &ActionRecord,
        trajectory: &[String],
    ) -> Result<[f64; 5], GuideError> {
        let mask = self.cfg.mask;
        Ok(match &self.cfg.scorer {
            GuideScorer::Oracle => mask.apply(
                self.oracle
                    .step_scores(self.env, st, ac_prev, &action.action_id)?
                    .to_array(),
            ),
            GuideScorer::Trained(p) => {
                let x = render_context(self.env.instruction(), &self.env.observation(st.current), trajectory);
                let d = p.predict_dims(&x, &action.text);
                let g = p.gate_coefficients(&x);
                mask.apply(std::array::from_fn(|k| g[k] * d[k]))
            }
            GuideScorer::UniformRandom => {
                let mut parts: Vec<String> = vec![self.env.id().into(), "score".into(), self.episode.to_string()];
                parts.extend(trajectory.iter().cloned());
                parts.push(action.action_id.clone());
                let u = derived_rng(self.cfg.seed, &parts).random::<f64>();
                [u, 0.0, 0.0, 0.0, 0.0]
            }
        })
    }

    fn value(&self, st: &EpisodeState, ac_prev: f64, action: &ActionRecord) -> Result<f64, GuideError> {
        let traj = trajectory_texts(self.env, st);
        Ok(self.vector(st, ac_prev, action, &traj)?.iter().sum())
    }
}

impl BackupValue for Scoring<'_> {
    fn value(&self, view: &NodeView<'_>) -> Result<[f64; 5], BackupError> {
        Ok(self.vector(view.before, view.ac_prev, view.action, view.trajectory)?)
    }
}

fn sample_candidates<'e>(
    policy: &AgentPolicy,
    env: &'e TaskGraph,
    st: &EpisodeState,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<&'e ActionRecord> {
    (0..n).map(|_| policy.propose(env, st.current, rng)).collect()
}

/// Distinct candidates in first-sampled order.
fn distinct<'e>(cands: &[&'e ActionRecord]) -> Vec<&'e ActionRecord> {
    let mut out: Vec<&ActionRecord> = Vec::new();
    for c in cands {
        if !out.iter().any(|o| o.action_id == c.action_id) {
            out.push(c);
        }
    }
    out
}

fn select(
    sc: &Scoring<'_>,
    policy: &AgentPolicy,
    st: &EpisodeState,
    ac: f64,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ActionRecord, GuideError> {
    if sc.env.is_terminal(st) {
        return Err(GuideError::TerminalState);
    }
    let cands = distinct(&sample_candidates(policy, sc.env, st, sc.cfg.n_candidates, rng));
    if cands.len() == 1 {
        return Ok(cands[0].clone());
    }
    match sc.cfg.mode {
        GuideMode::Rerank => {
            let mut best = cands[0];
            let mut best_v = sc.value(st, ac, best)?;
            for &c in &cands[1..] {
                let v = sc.value(st, ac, c)?;
                if v > best_v {
                    best = c;
                    best_v = v;
                }
            }
            Ok(best.clone())
        }
        GuideMode::RmMcts => {
            let seed = stable_hash([
                sc.cfg.seed.to_string(),
                sc.env.id().to_string(),
                sc.episode.to_string(),
                step.to_string(),
            ]);
            let budget = SearchBudget::new(
                sc.cfg.search.iterations,
                sc.cfg.search.rollouts,
                sc.cfg.search.exploration_c,
                seed,
            );
            let opts = SearchOptions {
                start: Some(st.clone()),
                root_actions: Some(cands.iter().map(|c| c.action_id.clone()).collect()),
                backup: Some(sc),
                root_ac: ac,
            };
            let tree = mctsp::search_with(sc.env, budget, &RuleJudge, opts)?;
            let best = tree.best_child(ROOT, 0.0)?;
            Ok(tree.node(best).action.clone().expect("child has an action"))
        }
    }
}

/// One reranked (or searched) step from `st`, drawing proposals from `rng`.
pub fn rerank_step(
    policy: &AgentPolicy,
    env: &TaskGraph,
    st: &EpisodeState,
    cfg: &GuidanceConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ActionRecord, GuideError> {
    policy.validate()?;
    cfg.validate()?;
    let oracle = PlayoutOracle::new(env);
    let ac = oracle.episode_ac(env, st)?;
    let sc = Scoring {
        env,
        oracle: &oracle,
        cfg,
        episode: 0,
    };
    select(&sc, policy, st, ac, st.steps_taken, rng)
}

fn run_episode(sc: &Scoring<'_>, policy: &AgentPolicy) -> Result<bool, GuideError> {
    let env = sc.env;
    let mut rng = derived_rng(
        policy.rng_seed,
        [env.id().to_string(), "episode".into(), sc.cfg.seed.to_string(), sc.episode.to_string()],
    );
    let mut st = env.start();
    let mut ac = 0.0;
    while !env.is_terminal(&st) {
        let step = st.steps_taken;
        let a = select(sc, policy, &st, ac, step, &mut rng)?;
        let h = sc.oracle.step_scores(env, &st, ac, &a.action_id)?.h;
        ac = dims::update_ac(ac, h);
        st = env.step(&st, &a.action_id)?;
    }
    Ok(env.is_success(&st))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessRate {
    pub successes: usize,
    pub episodes: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl SuccessRate {
    pub fn from_counts(successes: usize, episodes: usize) -> Self {
        let (ci_low, ci_high) = wilson_interval(successes, episodes);
        SuccessRate {
            successes,
            episodes,
            rate: if episodes == 0 { 0.0 } else { successes as f64 / episodes as f64 },
            ci_low,
            ci_high,
        }
    }

    pub fn width(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

/// Runs `cfg.episodes` guided episodes in every environment.
pub fn run_guided(envs: &[TaskGraph], policy: &AgentPolicy, cfg: &GuidanceConfig) -> Result<SuccessRate, GuideError> {
    policy.validate()?;
    cfg.validate()?;
    let oracles: Vec<PlayoutOracle> = envs.iter().map(PlayoutOracle::new).collect();
    let jobs: Vec<(usize, usize)> = (0..envs.len())
        .flat_map(|e| (0..cfg.episodes).map(move |ep| (e, ep)))
        .collect();
    let outcomes: Result<Vec<bool>, GuideError> = jobs
        .par_iter()
        .map(|&(e, ep)| {
            let sc = Scoring {
                env: &envs[e],
                oracle: &oracles[e],
                cfg,
                episode: ep,
            };
            run_episode(&sc, policy)
        })
        .collect();
    let outcomes = outcomes?;
    Ok(SuccessRate::from_counts(
        outcomes.iter().filter(|&&ok| ok).count(),
        outcomes.len(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub rate: SuccessRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub points: Vec<CurvePoint>,
}

impl ScalingCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,successes,episodes,rate,ci_low,ci_high\n");
        for p in &self.points {
            let r = &p.rate;
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6}\n",
                p.n, r.successes, r.episodes, r.rate, r.ci_low, r.ci_high
            ));
        }
        out
    }
}

/// Success rate for each candidate count in `n_values`.
pub fn scaling_sweep(
    envs: &[TaskGraph],
    policy: &AgentPolicy,
    cfg: &GuidanceConfig,
    n_values: &[usize],
) -> Result<ScalingCurve, GuideError> {
    if n_values.is_empty() {
        return Err(GuideError::InvalidConfig("no N values to sweep".into()));
    }
    let mut points = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let mut c = cfg.clone();
        c.n_candidates = n;
        points.push(CurvePoint {
            n,
            rate: run_guided(envs, policy, &c)?,
        });
    }
    Ok(ScalingCurve { points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mask: DimensionMask,
    pub rate: SuccessRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    /// Partial masks in input order, then full-mask rows.
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mask,rate,ci_low,ci_high\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                r.mask, r.rate.rate, r.rate.ci_low, r.rate.ci_high
            ));
        }
        out
    }

    pub fn row(&self, mask: DimensionMask) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mask == mask)
    }
}

/// Success rate for each dimension mask; the full mask is reported last.
pub fn ablation_sweep(
    envs: &[TaskGraph],
    policy: &AgentPolicy,
    cfg: &GuidanceConfig,
    masks: &[DimensionMask],
) -> Result<AblationTable, GuideError> {
    if masks.is_empty() {
        return Err(GuideError::InvalidConfig("no masks to sweep".into()));
    }
    let mut ordered: Vec<DimensionMask> = masks.iter().copied().filter(|m| !m.is_full()).collect();
    ordered.extend(masks.iter().copied().filter(DimensionMask::is_full));
    let mut rows = Vec::with_capacity(ordered.len());
    for mask in ordered {
        let mut c = cfg.clone();
        c.mask = mask;
        rows.push(AblationRow {
            mask,
            rate: run_guided(envs, policy, &c)?,
        });
    }
    Ok(AblationTable { rows })
}
