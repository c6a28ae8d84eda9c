//! Turns search trees into annotated datasets.
//!
//! A dataset directory holds three files:
//! - `trajectories.jsonl`: one verified successful trajectory per line, each
//!   step carrying its five scores and its scored siblings;
//! - `siblings.jsonl`: one record per expanded decision point in every tree,
//!   including failed branches, so rejected candidates stay available;
//! - `manifest.json`: seed, budget, judge and counts.

use crate::dims::StepScores;
use crate::judge::Judge;
use crate::mctsp::{self, SearchBudget, SearchError, SearchTree, ROOT};
use crate::taskenv::{ActionRecord, TaskGraph};
use crate::util::derived_rng;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const SIBLINGS_FILE: &str = "siblings.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum CollectError {
    #[error("tree was built for `{tree}` but environment is `{env}`")]
    Mismatch { tree: String, env: String },
    #[error("replaying path {path:?} failed: {message}")]
    Replay { path: Vec<String>, message: String },
    #[error("no environments given")]
    NoEnvironments,
    #[error("eval fraction must lie in (0, 1), got {0}")]
    Fraction(f64),
    #[error("splitting needs at least 2 tasks, dataset has {0}")]
    TooFewTasks(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Search(#[from] SearchError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CollectError + '_ {
    move |source| CollectError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateAction {
    pub id: String,
    pub text: String,
    pub tags: Vec<String>,
}

impl From<&ActionRecord> for CandidateAction {
    fn from(a: &ActionRecord) -> Self {
        CandidateAction {
            id: a.action_id.clone(),
            text: a.text.clone(),
            tags: a.tags.iter().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sibling {
    pub action: CandidateAction,
    pub scores: StepScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedStep {
    pub env_id: String,
    pub instruction: String,
    pub observation: String,
    pub step_idx: usize,
    pub action: CandidateAction,
    pub trajectory: Vec<String>,
    pub scores: StepScores,
    pub siblings: Vec<Sibling>,
    pub m_eff: usize,
    pub n: usize,
}

impl AnnotatedStep {
    /// The step's own action followed by its siblings.
    pub fn candidates(&self) -> Vec<Sibling> {
        let mut out = vec![Sibling {
            action: self.action.clone(),
            scores: self.scores,
        }];
        out.extend(self.siblings.iter().cloned());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedTrajectory {
    pub traj_id: String,
    pub env_id: String,
    pub instruction: String,
    pub steps: Vec<AnnotatedStep>,
    pub verified_success: bool,
    pub total_steps: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub trajectories: Vec<AnnotatedTrajectory>,
    pub decision_points: Vec<AnnotatedStep>,
    pub n_pruned: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvFailure {
    pub env_id: String,
    pub kind: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub budget: SearchBudget,
    pub judge: String,
    pub n_tasks: usize,
    pub n_trajectories: usize,
    pub n_pruned: usize,
    pub created_at: String,
    #[serde(default)]
    pub env_ids: Vec<String>,
    #[serde(default)]
    pub failures: Vec<EnvFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub trajectories: Vec<AnnotatedTrajectory>,
    pub decision_points: Vec<AnnotatedStep>,
}

fn step_record(tree: &SearchTree, env: &TaskGraph, id: usize) -> AnnotatedStep {
    let node = tree.node(id);
    let parent = tree.node(node.parent.expect("step nodes have parents"));
    let siblings = parent
        .children
        .iter()
        .filter(|&&ch| ch != id)
        .map(|&ch| {
            let sib = tree.node(ch);
            Sibling {
                action: sib.action.as_ref().expect("child action").into(),
                scores: sib.scores.rounded(),
            }
        })
        .collect();
    AnnotatedStep {
        env_id: env.id().to_string(),
        instruction: env.instruction().to_string(),
        observation: env.observation(parent.state),
        step_idx: node.steps_taken,
        action: node.action.as_ref().expect("child action").into(),
        trajectory: tree.trajectory_before(id),
        scores: node.scores.rounded(),
        siblings,
        m_eff: node.m_eff,
        n: node.rollouts.n(),
    }
}

/// Extracts verified successful trajectories and every decision point.
pub fn annotate_tree(tree: &SearchTree, env: &TaskGraph) -> Result<Annotation, CollectError> {
    if tree.env_id != env.id() {
        return Err(CollectError::Mismatch {
            tree: tree.env_id.clone(),
            env: env.id().to_string(),
        });
    }
    let mut out = Annotation::default();
    // preorder keeps output order independent of node allocation order
    let mut stack = vec![ROOT];
    while let Some(id) = stack.pop() {
        let node = tree.node(id);
        stack.extend(node.children.iter().rev());
        if let Some(&first) = node.children.first() {
            out.decision_points.push(step_record(tree, env, first));
        }
        if id == ROOT || !node.children.is_empty() {
            continue;
        }
        if !env.is_goal(node.state) {
            out.n_pruned += 1;
            continue;
        }
        let path = tree.path(id);
        let mut st = env.start();
        for a in &path {
            st = env.step(&st, a).map_err(|e| CollectError::Replay {
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
        if !env.is_success(&st) {
            out.n_pruned += 1;
            continue;
        }
        let mut chain = Vec::new();
        let mut cur = id;
        while cur != ROOT {
            chain.push(cur);
            cur = tree.node(cur).parent.expect("non-root");
        }
        chain.reverse();
        let steps: Vec<AnnotatedStep> = chain.iter().map(|&n| step_record(tree, env, n)).collect();
        out.trajectories.push(AnnotatedTrajectory {
            traj_id: format!("{}/{}", env.id(), path.join(">")),
            env_id: env.id().to_string(),
            instruction: env.instruction().to_string(),
            total_steps: steps.len(),
            steps,
            verified_success: true,
        });
    }
    Ok(out)
}

fn failure_kind(e: &CollectError) -> &'static str {
    match e {
        CollectError::Search(SearchError::Judge(_)) => "judge",
        CollectError::Search(SearchError::Env(_)) => "env",
        _ => "search",
    }
}

/// Searches and annotates every environment, `workers` at a time.
pub fn run_collection(
    envs: &[TaskGraph],
    budget: SearchBudget,
    judge: &dyn Judge,
    workers: usize,
) -> Result<Dataset, CollectError> {
    if envs.is_empty() {
        return Err(CollectError::NoEnvironments);
    }
    budget.validate()?;
    let work = |env: &TaskGraph| -> Result<Annotation, CollectError> {
        let tree = mctsp::search(env, budget, judge)?;
        annotate_tree(&tree, env)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<Result<Annotation, CollectError>> = pool.install(|| envs.par_iter().map(work).collect());

    let mut trajectories = Vec::new();
    let mut decision_points = Vec::new();
    let mut failures = Vec::new();
    let mut n_pruned = 0;
    for (env, res) in envs.iter().zip(results) {
        match res {
            Ok(a) => {
                trajectories.extend(a.trajectories);
                decision_points.extend(a.decision_points);
                n_pruned += a.n_pruned;
            }
            Err(e) => failures.push(EnvFailure {
                env_id: env.id().to_string(),
                kind: failure_kind(&e).to_string(),
                error: e.to_string(),
            }),
        }
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            seed: budget.rng_seed,
            budget,
            judge: judge.name().to_string(),
            n_tasks: envs.len(),
            n_trajectories: trajectories.len(),
            n_pruned,
            created_at: crate::util::now_rfc3339(),
            env_ids: envs.iter().map(|e| e.id().to_string()).collect(),
            failures,
        },
        trajectories,
        decision_points,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CollectError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(row).expect("record serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CollectError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CollectError::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<(), CollectError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_jsonl(&dir.join(TRAJECTORIES_FILE), &self.trajectories)?;
        write_jsonl(&dir.join(SIBLINGS_FILE), &self.decision_points)?;
        let mpath = dir.join(MANIFEST_FILE);
        let body = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&mpath, body + "\n").map_err(io_err(&mpath))
    }

    pub fn load(dir: &Path) -> Result<Dataset, CollectError> {
        let mpath = dir.join(MANIFEST_FILE);
        let raw = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
        let manifest = serde_json::from_str(&raw).map_err(|e| CollectError::Parse {
            path: mpath.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Ok(Dataset {
            manifest,
            trajectories: read_jsonl(&dir.join(TRAJECTORIES_FILE))?,
            decision_points: read_jsonl(&dir.join(SIBLINGS_FILE))?,
        })
    }

    /// Sorted distinct task ids present in the dataset.
    pub fn task_ids(&self) -> Vec<String> {
        let ids: BTreeSet<&str> = self
            .trajectories
            .iter()
            .map(|t| t.env_id.as_str())
            .chain(self.decision_points.iter().map(|s| s.env_id.as_str()))
            .collect();
        ids.into_iter().map(str::to_string).collect()
    }

    fn restricted(&self, keep: &BTreeSet<String>) -> Dataset {
        let trajectories: Vec<_> = self
            .trajectories
            .iter()
            .filter(|t| keep.contains(&t.env_id))
            .cloned()
            .collect();
        let mut manifest = self.manifest.clone();
        manifest.n_tasks = keep.len();
        manifest.n_trajectories = trajectories.len();
        manifest.env_ids.retain(|e| keep.contains(e));
        Dataset {
            manifest,
            trajectories,
            decision_points: self
                .decision_points
                .iter()
                .filter(|s| keep.contains(&s.env_id))
                .cloned()
                .collect(),
        }
    }

    /// Trajectories grouped by task, in file order.
    pub fn trajectories_by_task(&self) -> BTreeMap<&str, Vec<&AnnotatedTrajectory>> {
        let mut out: BTreeMap<&str, Vec<&AnnotatedTrajectory>> = BTreeMap::new();
        for t in &self.trajectories {
            out.entry(t.env_id.as_str()).or_default().push(t);
        }
        out
    }
}

/// Task-level train/eval split; `round(n * fraction)` tasks go to eval,
/// clamped so each side keeps at least one.
pub fn split_dataset(ds: &Dataset, eval_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), CollectError> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(CollectError::Fraction(eval_fraction));
    }
    let mut ids = ds.task_ids();
    if ids.len() < 2 {
        return Err(CollectError::TooFewTasks(ids.len()));
    }
    let n = ids.len();
    let n_eval = ((n as f64 * eval_fraction).round() as usize).clamp(1, n - 1);
    let mut rng = derived_rng(seed, ["split"]);
    ids.shuffle(&mut rng);
    let eval: BTreeSet<String> = ids[..n_eval].iter().cloned().collect();
    let train: BTreeSet<String> = ids[n_eval..].iter().cloned().collect();
    Ok((ds.restricted(&train), ds.restricted(&eval)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::judge::RuleJudge;
    use crate::mctsp::DEFAULT_C;

    fn synthetic(n_tasks: usize) -> Dataset {
        let step = |env: &str| AnnotatedStep {
            env_id: env.into(),
            instruction: "i".into(),
            observation: "o".into(),
            step_idx: 1,
            action: CandidateAction {
                id: "a".into(),
                text: "a".into(),
                tags: vec![],
            },
            trajectory: vec![],
            scores: StepScores::default(),
            siblings: vec![],
            m_eff: 1,
            n: 1,
        };
        Dataset {
            manifest: DatasetManifest {
                seed: 0,
                budget: SearchBudget::new(1, 1, 1.4, 0),
                judge: "rule".into(),
                n_tasks,
                n_trajectories: 0,
                n_pruned: 0,
                created_at: String::new(),
                env_ids: (0..n_tasks).map(|k| format!("t{k}")).collect(),
                failures: vec![],
            },
            trajectories: vec![],
            decision_points: (0..n_tasks).map(|k| step(&format!("t{k}"))).collect(),
        }
    }

    #[test]
    fn split_is_by_task_and_seeded() {
        let ds = synthetic(10);
        let (tr, ev) = split_dataset(&ds, 0.3, 5).unwrap();
        assert_eq!((tr.task_ids().len(), ev.task_ids().len()), (7, 3));
        let a: BTreeSet<_> = tr.task_ids().into_iter().collect();
        assert!(ev.task_ids().iter().all(|t| !a.contains(t)));
        let (tr2, _) = split_dataset(&ds, 0.3, 5).unwrap();
        assert_eq!(tr, tr2);
        let (x, y) = split_dataset(&synthetic(2), 0.999, 1).unwrap();
        assert_eq!((x.task_ids().len(), y.task_ids().len()), (1, 1));
        assert!(matches!(split_dataset(&ds, 1.0, 1), Err(CollectError::Fraction(_))));
        assert!(matches!(split_dataset(&synthetic(1), 0.5, 1), Err(CollectError::TooFewTasks(1))));
    }

    #[test]
    fn linear_tree_yields_one_three_step_trajectory() {
        let env = fixtures::linear();
        let tree = mctsp::search(&env, SearchBudget::new(200, 4, DEFAULT_C, 7), &RuleJudge).unwrap();
        let ann = annotate_tree(&tree, &env).unwrap();
        assert_eq!(ann.trajectories.len(), 1);
        let t = &ann.trajectories[0];
        assert_eq!(t.total_steps, 3);
        let idx: Vec<usize> = t.steps.iter().map(|s| s.step_idx).collect();
        assert_eq!(idx, [1, 2, 3]);
        assert!(t.steps[0].trajectory.is_empty());
        assert_eq!(t.steps[2].trajectory.len(), 2);
    }

    #[test]
    fn tree_without_success_prunes_everything() {
        let env = fixtures::linear();
        let tree = mctsp::search(&env, SearchBudget::new(1, 2, DEFAULT_C, 7), &RuleJudge).unwrap();
        let ann = annotate_tree(&tree, &env).unwrap();
        assert!(ann.trajectories.is_empty());
        assert_eq!(ann.n_pruned, 1);
    }

    #[test]
    fn mismatched_env_is_rejected() {
        let tree = mctsp::search(&fixtures::linear(), SearchBudget::new(3, 2, DEFAULT_C, 7), &RuleJudge).unwrap();
        assert!(matches!(
            annotate_tree(&tree, &fixtures::branching()),
            Err(CollectError::Mismatch { .. })
        ));
    }
}
