//! Preference pairs over annotated candidates.
//!
//! Per-step pairs compare two sibling candidates at one decision point under a
//! single dimension or under the weighted total (Tot). Trajectory pairs (Traj)
//! compare two successful trajectories of the same task by their mean Tot.

use crate::collect::{AnnotatedStep, AnnotatedTrajectory, Dataset, Sibling};
use crate::dims::{Dimension, StepScores};
use crate::util::derived_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const DEFAULT_MARGIN: f64 = 0.05;
const BINARY_GAP: f64 = 1.0 - 1e-9;
const MARGIN_SLACK: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum PairsError {
    #[error("dimension weights must be finite and non-negative with positive sum, got {0:?}")]
    Weights([f64; 5]),
    #[error("trajectory has no steps")]
    EmptyTrajectory,
    #[error("unknown evaluation type `{0}` (expected H, OS, E, TR, C, Tot or Traj)")]
    UnknownType(String),
    #[error("margin must be finite and non-negative, got {0}")]
    Margin(f64),
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
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvalType {
    H,
    OS,
    E,
    TR,
    C,
    Tot,
    Traj,
}

impl EvalType {
    pub const ALL: [EvalType; 7] = [
        EvalType::H,
        EvalType::OS,
        EvalType::E,
        EvalType::TR,
        EvalType::C,
        EvalType::Tot,
        EvalType::Traj,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalType::H => "H",
            EvalType::OS => "OS",
            EvalType::E => "E",
            EvalType::TR => "TR",
            EvalType::C => "C",
            EvalType::Tot => "Tot",
            EvalType::Traj => "Traj",
        }
    }

    pub fn dimension(self) -> Option<Dimension> {
        match self {
            EvalType::H => Some(Dimension::H),
            EvalType::OS => Some(Dimension::OS),
            EvalType::E => Some(Dimension::E),
            EvalType::TR => Some(Dimension::TR),
            EvalType::C => Some(Dimension::C),
            EvalType::Tot | EvalType::Traj => None,
        }
    }
}

impl fmt::Display for EvalType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalType {
    type Err = PairsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EvalType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| PairsError::UnknownType(s.to_string()))
    }
}

/// Parses a comma-separated type list; `all` selects every type.
pub fn parse_types(list: &str) -> Result<Vec<EvalType>, PairsError> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(EvalType::ALL.to_vec());
    }
    let mut out: Vec<EvalType> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_, _>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionWeights {
    pub w_h: f64,
    pub w_os: f64,
    pub w_e: f64,
    pub w_tr: f64,
    pub w_c: f64,
}

impl Default for DimensionWeights {
    fn default() -> Self {
        DimensionWeights::uniform()
    }
}

impl DimensionWeights {
    pub fn uniform() -> Self {
        DimensionWeights::from_array([1.0; 5])
    }

    pub fn from_array(w: [f64; 5]) -> Self {
        DimensionWeights {
            w_h: w[0],
            w_os: w[1],
            w_e: w[2],
            w_tr: w[3],
            w_c: w[4],
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.w_h, self.w_os, self.w_e, self.w_tr, self.w_c]
    }

    pub fn validate(&self) -> Result<(), PairsError> {
        let w = self.to_array();
        let ok = w.iter().all(|x| x.is_finite() && *x >= 0.0) && w.iter().sum::<f64>() > 0.0;
        if ok {
            Ok(())
        } else {
            Err(PairsError::Weights(w))
        }
    }
}

impl FromStr for DimensionWeights {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad weight `{p}`: {e}")))
            .collect::<Result<_, _>>()?;
        let arr: [f64; 5] = parts
            .try_into()
            .map_err(|v: Vec<f64>| format!("expected 5 weights, got {}", v.len()))?;
        let w = DimensionWeights::from_array(arr);
        w.validate().map_err(|e| e.to_string())?;
        Ok(w)
    }
}

/// Weighted mean of the five scores.
pub fn total_score(s: &StepScores, w: &DimensionWeights) -> Result<f64, PairsError> {
    w.validate()?;
    let w = w.to_array();
    let num: f64 = s.to_array().iter().zip(w).map(|(x, wi)| x * wi).sum();
    Ok(num / w.iter().sum::<f64>())
}

pub fn mean_total<'a>(steps: impl IntoIterator<Item = &'a StepScores>, w: &DimensionWeights) -> Result<f64, PairsError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in steps {
        sum += total_score(s, w)?;
        n += 1;
    }
    if n == 0 {
        return Err(PairsError::EmptyTrajectory);
    }
    Ok(sum / n as f64)
}

pub fn trajectory_score(traj: &AnnotatedTrajectory, w: &DimensionWeights) -> Result<f64, PairsError> {
    mean_total(traj.steps.iter().map(|s| &s.scores), w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCandidate {
    pub id: String,
    pub text: String,
    pub tags: Vec<String>,
    pub scores: StepScores,
    /// Present only inside trajectory candidates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Candidate {
    Action(StepCandidate),
    Trajectory(Vec<StepCandidate>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    X,
    Y,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferencePair {
    pub id: String,
    pub instruction: String,
    pub observation: String,
    pub step_idx: usize,
    pub trajectory: Vec<String>,
    pub evaluation_type: EvalType,
    pub action_x: Candidate,
    pub action_y: Candidate,
    pub label: Label,
}

impl PreferencePair {
    pub fn chosen(&self) -> &Candidate {
        match self.label {
            Label::X => &self.action_x,
            Label::Y => &self.action_y,
        }
    }

    pub fn rejected(&self) -> &Candidate {
        match self.label {
            Label::X => &self.action_y,
            Label::Y => &self.action_x,
        }
    }
}

/// Ground-truth score of a candidate under an evaluation type.
pub fn oracle_score(c: &Candidate, t: EvalType, w: &DimensionWeights) -> Result<f64, PairsError> {
    match (c, t.dimension()) {
        (Candidate::Action(a), Some(d)) => Ok(a.scores.get(d)),
        (Candidate::Action(a), None) => total_score(&a.scores, w),
        (Candidate::Trajectory(steps), _) => mean_total(steps.iter().map(|s| &s.scores), w),
    }
}

fn step_candidate(s: &Sibling, observation: Option<&str>) -> StepCandidate {
    StepCandidate {
        id: s.action.id.clone(),
        text: s.action.text.clone(),
        tags: s.action.tags.clone(),
        scores: s.scores,
        observation: observation.map(str::to_string),
    }
}

fn trajectory_candidate(t: &AnnotatedTrajectory) -> Candidate {
    Candidate::Trajectory(
        t.steps
            .iter()
            .map(|s| {
                step_candidate(
                    &Sibling {
                        action: s.action.clone(),
                        scores: s.scores,
                    },
                    Some(&s.observation),
                )
            })
            .collect(),
    )
}

fn separates(t: EvalType, a: f64, b: f64, margin_min: f64) -> bool {
    let gap = (a - b).abs();
    match t.dimension() {
        Some(d) if d.is_binary() => gap >= BINARY_GAP,
        _ => gap > 0.0 && gap + MARGIN_SLACK >= margin_min,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairManifest {
    pub weights: DimensionWeights,
    pub margin_min: f64,
    pub seed: u64,
    pub counts: BTreeMap<EvalType, usize>,
    #[serde(default)]
    pub types: Vec<EvalType>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub manifest: PairManifest,
    pub pairs: Vec<PreferencePair>,
}

struct Emitter {
    seed: u64,
    pairs: Vec<PreferencePair>,
}

impl Emitter {
    fn emit(
        &mut self,
        key: &str,
        context: (&str, &str, usize, &[String]),
        t: EvalType,
        better: Candidate,
        worse: Candidate,
    ) {
        let id = format!("{}-{:06}", t.as_str().to_lowercase(), self.pairs.len());
        let flip: bool = derived_rng(self.seed, ["pair", key]).random();
        let (action_x, action_y, label) = if flip {
            (worse, better, Label::Y)
        } else {
            (better, worse, Label::X)
        };
        let (instruction, observation, step_idx, trajectory) = context;
        self.pairs.push(PreferencePair {
            id,
            instruction: instruction.to_string(),
            observation: observation.to_string(),
            step_idx,
            trajectory: trajectory.to_vec(),
            evaluation_type: t,
            action_x,
            action_y,
            label,
        });
    }
}

fn step_pairs(em: &mut Emitter, k: usize, step: &AnnotatedStep, t: EvalType, w: &DimensionWeights, margin_min: f64) -> Result<(), PairsError> {
    let cands = step.candidates();
    for i in 0..cands.len() {
        for j in i + 1..cands.len() {
            let (a, b) = (step_candidate(&cands[i], None), step_candidate(&cands[j], None));
            let sa = oracle_score(&Candidate::Action(a.clone()), t, w)?;
            let sb = oracle_score(&Candidate::Action(b.clone()), t, w)?;
            if !separates(t, sa, sb, margin_min) {
                continue;
            }
            let (better, worse) = if sa > sb { (a, b) } else { (b, a) };
            let key = format!("{}|{k}|{t}|{}|{}", step.env_id, cands[i].action.id, cands[j].action.id);
            em.emit(
                &key,
                (&step.instruction, &step.observation, step.step_idx, &step.trajectory),
                t,
                Candidate::Action(better),
                Candidate::Action(worse),
            );
        }
    }
    Ok(())
}

/// Builds pairs for the requested types. Per-step types draw from every
/// decision point; Traj draws from same-task trajectory pairs.
pub fn build_pairs(
    ds: &Dataset,
    types: &[EvalType],
    w: &DimensionWeights,
    margin_min: f64,
    seed: u64,
) -> Result<PairSet, PairsError> {
    w.validate()?;
    if !(margin_min.is_finite() && margin_min >= 0.0) {
        return Err(PairsError::Margin(margin_min));
    }
    let mut types = types.to_vec();
    types.sort();
    types.dedup();
    let mut em = Emitter {
        seed,
        pairs: Vec::new(),
    };
    let mut counts = BTreeMap::new();
    for &t in &types {
        let before = em.pairs.len();
        if t == EvalType::Traj {
            for (env_id, trajs) in ds.trajectories_by_task() {
                for i in 0..trajs.len() {
                    for j in i + 1..trajs.len() {
                        let (ta, tb) = (trajs[i], trajs[j]);
                        let sa = trajectory_score(ta, w)?;
                        let sb = trajectory_score(tb, w)?;
                        if !separates(t, sa, sb, margin_min) {
                            continue;
                        }
                        let (better, worse) = if sa > sb { (ta, tb) } else { (tb, ta) };
                        let first_obs = ta.steps.first().map(|s| s.observation.as_str()).unwrap_or("");
                        let key = format!("{env_id}|traj|{}|{}", ta.traj_id, tb.traj_id);
                        em.emit(
                            &key,
                            (&ta.instruction, first_obs, 0, &[]),
                            t,
                            trajectory_candidate(better),
                            trajectory_candidate(worse),
                        );
                    }
                }
            }
        } else {
            for (k, step) in ds.decision_points.iter().enumerate() {
                step_pairs(&mut em, k, step, t, w, margin_min)?;
            }
        }
        counts.insert(t, em.pairs.len() - before);
    }
    Ok(PairSet {
        manifest: PairManifest {
            weights: *w,
            margin_min,
            seed,
            counts,
            types,
        },
        pairs: em.pairs,
    })
}

/// `pairs.jsonl` → `pairs.manifest.json`.
pub fn manifest_path(pairs_path: &Path) -> PathBuf {
    pairs_path.with_extension("manifest.json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PairsError + '_ {
    move |source| PairsError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl PairSet {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&serde_json::to_string(p).expect("pair serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), PairsError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let file = fs::File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl().as_bytes()).map_err(io_err(path))?;
        w.flush().map_err(io_err(path))?;
        let mpath = manifest_path(path);
        let body = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&mpath, body + "\n").map_err(io_err(&mpath))
    }

    pub fn load(path: &Path) -> Result<PairSet, PairsError> {
        let file = fs::File::open(path).map_err(io_err(path))?;
        let mut pairs = Vec::new();
        for (k, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            pairs.push(serde_json::from_str(&line).map_err(|e| PairsError::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message: e.to_string(),
            })?);
        }
        let mpath = manifest_path(path);
        let raw = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
        let manifest = serde_json::from_str(&raw).map_err(|e| PairsError::Parse {
            path: mpath.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Ok(PairSet { manifest, pairs })
    }
}
