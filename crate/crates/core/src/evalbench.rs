//! Pairwise accuracy over preference pairs and the dimension correlation study.

use crate::collect::Dataset;
use crate::dims::Dimension;
use crate::judge::prompt::{self, MAIN_PART};
use crate::judge::{first_standalone_token, JudgeError, RemoteJudge};
use crate::pairs::{oracle_score, Candidate, DimensionWeights, EvalType, Label, PairsError, PreferencePair, StepCandidate};
use crate::trainer::{render_context, RewardModelParams};
use crate::util::derived_rng;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

pub const DEFAULT_TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("scorer `{scorer}` cannot score {ty} pairs")]
    Unsupported { scorer: &'static str, ty: EvalType },
    #[error("pair {id}: candidate shape does not match type {ty}")]
    Shape { id: String, ty: EvalType },
    #[error("no pairs to evaluate")]
    Empty,
    #[error("correlation needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Pairs(#[from] PairsError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    X,
    Y,
    Tie,
}

pub enum ScorerKind {
    Trained(Box<RewardModelParams>),
    Oracle(DimensionWeights),
    BaselineJudge(Box<RemoteJudge>),
    UniformRandom(u64),
}

pub struct RewardScorer {
    pub kind: ScorerKind,
    pub tie_epsilon: f64,
}

impl RewardScorer {
    pub fn new(kind: ScorerKind) -> Self {
        RewardScorer {
            kind,
            tie_epsilon: DEFAULT_TIE_EPSILON,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ScorerKind::Trained(_) => "trained",
            ScorerKind::Oracle(_) => "oracle",
            ScorerKind::BaselineJudge(_) => "judge",
            ScorerKind::UniformRandom(_) => "random",
        }
    }
}

pub fn choose_from_scores(sx: f64, sy: f64, tie_epsilon: f64) -> Choice {
    if (sx - sy).abs() <= tie_epsilon {
        Choice::Tie
    } else if sx > sy {
        Choice::X
    } else {
        Choice::Y
    }
}

fn action_of<'a>(pair: &'a PreferencePair, c: &'a Candidate) -> Result<&'a StepCandidate, EvalError> {
    match c {
        Candidate::Action(a) => Ok(a),
        Candidate::Trajectory(_) => Err(EvalError::Shape {
            id: pair.id.clone(),
            ty: pair.evaluation_type,
        }),
    }
}

/// Mean scalar reward over the steps of a trajectory candidate.
pub fn trained_trajectory_score(p: &RewardModelParams, instruction: &str, steps: &[StepCandidate]) -> f64 {
    if steps.is_empty() {
        return 0.0;
    }
    let mut prior: Vec<String> = Vec::new();
    let mut total = 0.0;
    for s in steps {
        let x = render_context(instruction, s.observation.as_deref().unwrap_or(""), &prior);
        total += p.scalar_reward(&x, &s.text);
        prior.push(s.text.clone());
    }
    total / steps.len() as f64
}

fn trained_score(p: &RewardModelParams, pair: &PreferencePair, c: &Candidate) -> Result<f64, EvalError> {
    let t = pair.evaluation_type;
    if t == EvalType::Traj {
        return match c {
            Candidate::Trajectory(steps) => Ok(trained_trajectory_score(p, &pair.instruction, steps)),
            Candidate::Action(_) => Err(EvalError::Shape {
                id: pair.id.clone(),
                ty: t,
            }),
        };
    }
    let a = action_of(pair, c)?;
    let x = render_context(&pair.instruction, &pair.observation, &pair.trajectory);
    Ok(match t.dimension() {
        Some(d) => p.predict_dims(&x, &a.text)[d.index()],
        None => p.scalar_reward(&x, &a.text),
    })
}

fn dimension_blocks(t: EvalType) -> Vec<&'static str> {
    match t.dimension() {
        Some(d) => vec![prompt::dimension_block(d)],
        None => {
            let mut v: Vec<&str> = Dimension::ALL.iter().map(|&d| prompt::dimension_block(d)).collect();
            v.push(prompt::TOTAL_BLOCK);
            if t == EvalType::Traj {
                v.push(prompt::TRAJECTORY_BLOCK);
            }
            v
        }
    }
}

fn candidate_text(c: &Candidate) -> String {
    match c {
        Candidate::Action(a) => a.text.clone(),
        Candidate::Trajectory(steps) => {
            let texts: Vec<String> = steps.iter().map(|s| s.text.clone()).collect();
            prompt::render_steps(&texts)
        }
    }
}

/// Full pairwise evaluator prompt for one preference pair.
pub fn render_pairwise_prompt(pair: &PreferencePair) -> String {
    let mut out = String::with_capacity(8192);
    out.push_str(MAIN_PART);
    out.push_str("\n\n<EVALUATION DIMENSION>\n");
    out.push_str(&dimension_blocks(pair.evaluation_type).join("\n\n"));
    out.push_str("\n\n");
    out.push_str(&prompt::context_slots(&pair.instruction, &pair.observation, &pair.trajectory));
    prompt::slot(&mut out, "STEP_IDX", &pair.step_idx.to_string());
    prompt::slot(&mut out, "ACTION_X", &candidate_text(&pair.action_x));
    prompt::slot(&mut out, "ACTION_Y", &candidate_text(&pair.action_y));
    out
}

/// The prompt asks for "Y" when ACTION_X is better and "X" when ACTION_Y is.
pub fn parse_pairwise_verdict(body: &str) -> Result<Choice, JudgeError> {
    match first_standalone_token(body, &["X", "Y"]) {
        Some(("Y", _)) => Ok(Choice::X),
        Some(_) => Ok(Choice::Y),
        None => Err(JudgeError::Unparseable {
            raw: body.to_string(),
        }),
    }
}

pub fn choose(scorer: &RewardScorer, pair: &PreferencePair) -> Result<Choice, EvalError> {
    let eps = scorer.tie_epsilon;
    match &scorer.kind {
        ScorerKind::Oracle(w) => {
            let t = pair.evaluation_type;
            let sx = oracle_score(&pair.action_x, t, w)?;
            let sy = oracle_score(&pair.action_y, t, w)?;
            Ok(choose_from_scores(sx, sy, eps))
        }
        ScorerKind::Trained(p) => {
            let sx = trained_score(p, pair, &pair.action_x)?;
            let sy = trained_score(p, pair, &pair.action_y)?;
            Ok(choose_from_scores(sx, sy, eps))
        }
        ScorerKind::UniformRandom(seed) => {
            let x: bool = derived_rng(*seed, ["uniform-random", pair.id.as_str()]).random();
            Ok(if x { Choice::X } else { Choice::Y })
        }
        ScorerKind::BaselineJudge(judge) => {
            let body = judge.post_prompt(&render_pairwise_prompt(pair), pair.evaluation_type.as_str(), &pair.id)?;
            Ok(parse_pairwise_verdict(&body)?)
        }
    }
}

pub fn is_correct(choice: Choice, label: Label) -> bool {
    matches!((choice, label), (Choice::X, Label::X) | (Choice::Y, Label::Y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub scorer: String,
    pub per_type: BTreeMap<EvalType, f64>,
    pub correct_per_type: BTreeMap<EvalType, usize>,
    pub n_per_type: BTreeMap<EvalType, usize>,
    /// Unweighted mean over the types that have pairs.
    pub avg: f64,
}

impl AccuracyReport {
    pub fn from_counts(scorer: &str, counts: &BTreeMap<EvalType, (usize, usize)>) -> Self {
        let mut per_type = BTreeMap::new();
        let mut correct_per_type = BTreeMap::new();
        let mut n_per_type = BTreeMap::new();
        for (&t, &(correct, total)) in counts {
            if total == 0 {
                continue;
            }
            per_type.insert(t, correct as f64 / total as f64);
            correct_per_type.insert(t, correct);
            n_per_type.insert(t, total);
        }
        let avg = if per_type.is_empty() {
            0.0
        } else {
            per_type.values().sum::<f64>() / per_type.len() as f64
        };
        AccuracyReport {
            scorer: scorer.to_string(),
            per_type,
            correct_per_type,
            n_per_type,
            avg,
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("| Scorer | H | OS | E | TR | C | Tot | Traj | Avg |\n");
        out.push_str("|---|---|---|---|---|---|---|---|---|\n");
        let _ = write!(out, "| {} |", self.scorer);
        for t in EvalType::ALL {
            match self.per_type.get(&t) {
                Some(a) => {
                    let _ = write!(out, " {:.2} |", a * 100.0);
                }
                None => out.push_str(" - |"),
            }
        }
        let _ = writeln!(out, " {:.2} |", self.avg * 100.0);
        let _ = write!(out, "| n |");
        for t in EvalType::ALL {
            let _ = write!(out, " {} |", self.n_per_type.get(&t).copied().unwrap_or(0));
        }
        let total: usize = self.n_per_type.values().sum();
        let _ = writeln!(out, " {total} |");
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,H,OS,E,TR,C,Tot,Traj,Avg\n");
        out.push_str("accuracy");
        for t in EvalType::ALL {
            match self.per_type.get(&t) {
                Some(a) => {
                    let _ = write!(out, ",{a:.6}");
                }
                None => out.push(','),
            }
        }
        let _ = writeln!(out, ",{:.6}", self.avg);
        out.push('n');
        for t in EvalType::ALL {
            let _ = write!(out, ",{}", self.n_per_type.get(&t).copied().unwrap_or(0));
        }
        let _ = writeln!(out, ",{}", self.n_per_type.values().sum::<usize>());
        out
    }
}

/// Accuracy per evaluation type; ties count as incorrect.
pub fn evaluate(scorer: &RewardScorer, pairs: &[PreferencePair]) -> Result<AccuracyReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let outcomes: Vec<(EvalType, bool)> = pairs
        .par_iter()
        .map(|p| choose(scorer, p).map(|c| (p.evaluation_type, is_correct(c, p.label))))
        .collect::<Result<_, _>>()?;
    let mut counts: BTreeMap<EvalType, (usize, usize)> = BTreeMap::new();
    for (t, ok) in outcomes {
        let e = counts.entry(t).or_default();
        e.0 += usize::from(ok);
        e.1 += 1;
    }
    Ok(AccuracyReport::from_counts(scorer.name(), &counts))
}

/// 5×5 Pearson matrix; `None` marks pairs involving a constant dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub n: usize,
    pub entries: [[Option<f64>; 5]; 5],
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn correlation_from_samples(samples: &[[f64; 5]]) -> Result<CorrelationMatrix, EvalError> {
    if samples.len() < 3 {
        return Err(EvalError::TooFewSamples(samples.len()));
    }
    let cols: Vec<Vec<f64>> = (0..5).map(|j| samples.iter().map(|s| s[j]).collect()).collect();
    let mut entries = [[None; 5]; 5];
    for i in 0..5 {
        entries[i][i] = Some(1.0);
        for j in i + 1..5 {
            let r = pearson(&cols[i], &cols[j]);
            entries[i][j] = r;
            entries[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        n: samples.len(),
        entries,
    })
}

/// Correlation over every scored candidate in the dataset.
pub fn correlation_matrix(ds: &Dataset) -> Result<CorrelationMatrix, EvalError> {
    let samples: Vec<[f64; 5]> = ds
        .decision_points
        .iter()
        .flat_map(|dp| dp.candidates().into_iter().map(|c| c.scores.to_array()))
        .collect();
    correlation_from_samples(&samples)
}

impl CorrelationMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dim,H,OS,E,TR,C\n");
        for (i, d) in Dimension::ALL.iter().enumerate() {
            out.push_str(d.as_str());
            for j in 0..5 {
                match self.entries[i][j] {
                    Some(r) => {
                        let _ = write!(out, ",{r:.6}");
                    }
                    None => out.push_str(",UNDEFINED"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Largest |r| off the diagonal, ignoring undefined entries.
    pub fn max_off_diagonal(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    if let Some(r) = self.entries[i][j] {
                        best = Some(best.map_or(r.abs(), |b: f64| b.max(r.abs())));
                    }
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dims::StepScores;

    fn cand(id: &str, h: f64) -> Candidate {
        Candidate::Action(StepCandidate {
            id: id.into(),
            text: format!("do {id}"),
            tags: vec![],
            scores: StepScores::new(h, 0.5, 0.0, 1.0, 1.0).unwrap(),
            observation: None,
        })
    }

    fn pair(id: &str, t: EvalType, x: f64, y: f64, label: Label) -> PreferencePair {
        PreferencePair {
            id: id.into(),
            instruction: "set a timer".into(),
            observation: "Screen: clock".into(),
            step_idx: 2,
            trajectory: vec!["Open the Clock app".into()],
            evaluation_type: t,
            action_x: cand("x", x),
            action_y: cand("y", y),
            label,
        }
    }

    #[test]
    fn ties_and_sides() {
        assert_eq!(choose_from_scores(1.0, 0.0, 1e-9), Choice::X);
        assert_eq!(choose_from_scores(0.0, 1.0, 1e-9), Choice::Y);
        assert_eq!(choose_from_scores(0.5, 0.5 + 1e-12, 1e-9), Choice::Tie);
        assert!(!is_correct(Choice::Tie, Label::X));
    }

    #[test]
    fn pairwise_verdict_mapping() {
        assert_eq!(parse_pairwise_verdict("Y. ACTION_X is better").unwrap(), Choice::X);
        assert_eq!(parse_pairwise_verdict("X because the second").unwrap(), Choice::Y);
        assert!(parse_pairwise_verdict("they are similar").is_err());
    }

    #[test]
    fn oracle_and_report() {
        let pairs = vec![
            pair("a", EvalType::H, 0.72, -0.37, Label::X),
            pair("b", EvalType::H, -0.37, 0.72, Label::Y),
            pair("c", EvalType::Tot, 0.0, 0.9, Label::Y),
        ];
        let oracle = RewardScorer::new(ScorerKind::Oracle(DimensionWeights::uniform()));
        let r = evaluate(&oracle, &pairs).unwrap();
        assert_eq!(r.per_type[&EvalType::H], 1.0);
        assert_eq!(r.per_type[&EvalType::Tot], 1.0);
        assert_eq!(r.avg, 1.0);
        assert!(r.to_markdown().contains("| oracle | 100.00 | - |"));
        assert!(r.to_csv().starts_with("metric,H,OS,E,TR,C,Tot,Traj,Avg\naccuracy,1.000000,,"));
    }

    #[test]
    fn pairwise_prompt_layout() {
        let p = pair("a", EvalType::Tot, 0.1, 0.2, Label::Y);
        let text = render_pairwise_prompt(&p);
        assert!(text.contains("<EVALUATION DIMENSION>\n1.[HELPFULNESS]"));
        assert!(text.contains("6.[TOTAL]"));
        assert!(!text.contains("7.[TRAJECTORY]"));
        assert!(text.ends_with("[ACTION_X]\ndo x\n[/ACTION_X]\n[ACTION_Y]\ndo y\n[/ACTION_Y]\n"));
    }

    #[test]
    fn correlation_basics() {
        let xs: Vec<[f64; 5]> = (0..10)
            .map(|i| {
                let x = i as f64;
                [x, -x, x * x, 1.0, (i % 2) as f64]
            })
            .collect();
        let m = correlation_from_samples(&xs).unwrap();
        assert_eq!(m.entries[0][0], Some(1.0));
        assert!((m.entries[0][1].unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(m.entries[0][3], None);
        assert_eq!(m.entries[3][3], Some(1.0));
        assert!(m.to_csv().contains("UNDEFINED"));
        assert!(correlation_from_samples(&xs[..2]).is_err());
    }
}
