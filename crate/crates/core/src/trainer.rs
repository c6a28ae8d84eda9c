//! Two-stage reward model over a frozen feature extractor.
//!
//! Stage 1 fits a linear head `W` (d×5) mapping features of a (prompt,
//! response) pair to the five dimension scores, in closed form. Stage 2 keeps
//! the extractor and `W` fixed and trains a prompt-conditioned gating MLP with
//! a Bradley-Terry loss on preference pairs. The scalar reward is the gate
//! vector dotted with the predicted dimensions.

use crate::collect::Dataset;
use crate::pairs::{Candidate, EvalType, PairSet};
use crate::util::{derived_rng, sha256_hex, stable_hash};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MODEL_VERSION: &str = "prm-model/1";
pub const DEFAULT_DIM: usize = 256;
pub const DEFAULT_HIDDEN: usize = 32;
pub const DEFAULT_EPOCHS: usize = 500;
pub const DEFAULT_LR: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-5;
/// Below this magnitude both gradients are treated as zero by `grad_check`.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("no training examples")]
    Empty,
    #[error("normal equations are singular with lambda = 0; rerun with a positive ridge lambda (e.g. --lambda 1e-6)")]
    Singular,
    #[error("normal equations are not positive definite (lambda = {0})")]
    NotPositiveDefinite(f64),
    #[error("non-finite loss at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("invalid hyperparameter: {0}")]
    Hyper(String),
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExtractorKind {
    HashedNgram,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NgramConfig {
    pub max_n: usize,
    pub salt: u64,
    /// Namespace prefix for response tokens, keeping them apart from the
    /// same words in the prompt.
    pub response_namespace: String,
}

impl Default for NgramConfig {
    fn default() -> Self {
        NgramConfig {
            max_n: 2,
            salt: 0,
            response_namespace: "y".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureExtractor {
    pub kind: ExtractorKind,
    pub d: usize,
    pub config: NgramConfig,
}

/// Alphanumeric runs (lowercased) and single punctuation characters.
fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

impl FeatureExtractor {
    pub fn hashed(d: usize) -> Self {
        FeatureExtractor {
            kind: ExtractorKind::HashedNgram,
            d,
            config: NgramConfig::default(),
        }
    }

    fn add(&self, v: &mut DVector<f64>, text: &str, ns: &str) {
        let toks = tokens(text);
        let salt = self.config.salt.to_le_bytes();
        for n in 1..=self.config.max_n.max(1) {
            for win in toks.windows(n) {
                let gram = win.join(" ");
                let h = stable_hash([&salt[..], ns.as_bytes(), gram.as_bytes()]);
                v[(h % self.d as u64) as usize] += 1.0;
            }
        }
    }

    /// L2-normalized hashed 1..max_n-gram counts of `x` and, when present, `y`.
    pub fn extract(&self, x: &str, y: Option<&str>) -> DVector<f64> {
        let mut v = DVector::zeros(self.d);
        self.add(&mut v, x, "x");
        if let Some(y) = y {
            self.add(&mut v, y, &self.config.response_namespace);
        }
        let norm = v.norm();
        if norm > 0.0 {
            v /= norm;
        }
        v
    }

    pub fn checksum(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("extractor serializes").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionHead {
    /// d×5
    pub w: DMatrix<f64>,
}

impl RegressionHead {
    pub fn zeros(d: usize) -> Self {
        RegressionHead {
            w: DMatrix::zeros(d, 5),
        }
    }

    pub fn predict(&self, h: &DVector<f64>) -> [f64; 5] {
        let p = self.w.tr_mul(h);
        [p[0], p[1], p[2], p[3], p[4]]
    }

    pub fn checksum(&self) -> String {
        let mut bytes = Vec::with_capacity(self.w.len() * 8);
        for r in 0..self.w.nrows() {
            for c in 0..self.w.ncols() {
                bytes.extend_from_slice(&self.w[(r, c)].to_le_bytes());
            }
        }
        sha256_hex(&bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatingNet {
    pub k: usize,
    pub activation: Activation,
    /// d×k
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// k×5
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

pub fn softmax(z: &[f64; 5]) -> [f64; 5] {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|x| (x - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|x| x / s)
}

struct GateForward {
    hidden: DVector<f64>,
    gate: [f64; 5],
}

impl GatingNet {
    pub fn zeros(d: usize, k: usize) -> Self {
        GatingNet {
            k,
            activation: Activation::Tanh,
            w1: DMatrix::zeros(d, k),
            b1: DVector::zeros(k),
            w2: DMatrix::zeros(k, 5),
            b2: DVector::zeros(5),
        }
    }

    /// Small seeded weights; biases start at zero.
    pub fn init(d: usize, k: usize, seed: u64) -> Self {
        let mut rng = derived_rng(seed, ["gate-init"]);
        let mut g = GatingNet::zeros(d, k);
        let s1 = 1.0 / (d.max(1) as f64).sqrt();
        let s2 = 0.1 / (k.max(1) as f64).sqrt();
        for x in g.w1.iter_mut() {
            *x = rng.random_range(-s1..s1);
        }
        for x in g.w2.iter_mut() {
            *x = rng.random_range(-s2..s2);
        }
        g
    }

    fn forward(&self, h: &DVector<f64>) -> GateForward {
        let mut pre = self.w1.tr_mul(h);
        pre += &self.b1;
        let hidden = pre.map(f64::tanh);
        let mut z = self.w2.tr_mul(&hidden);
        z += &self.b2;
        GateForward {
            gate: softmax(&[z[0], z[1], z[2], z[3], z[4]]),
            hidden,
        }
    }

    pub fn gate(&self, h: &DVector<f64>) -> [f64; 5] {
        self.forward(h).gate
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Flattened φ in the order w1, b1, w2, b2 (column-major within each).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend(self.w1.iter());
        out.extend(self.b1.iter());
        out.extend(self.w2.iter());
        out.extend(self.b2.iter());
        out
    }

    pub fn assign(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for x in self
            .w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
        {
            *x = it.next().expect("flat parameter vector too short");
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardModelParams {
    pub version: String,
    pub extractor: FeatureExtractor,
    pub head: RegressionHead,
    pub gate: GatingNet,
    pub manifest: serde_json::Value,
}

impl RewardModelParams {
    pub fn new(extractor: FeatureExtractor, head: RegressionHead, gate: GatingNet) -> Result<Self, TrainError> {
        let d = extractor.d;
        if head.w.nrows() != d || head.w.ncols() != 5 {
            return Err(TrainError::Shape(format!("W is {}x{}, expected {d}x5", head.w.nrows(), head.w.ncols())));
        }
        if gate.w1.nrows() != d || gate.w1.ncols() != gate.k || gate.w2.shape() != (gate.k, 5) {
            return Err(TrainError::Shape("gate matrices do not match d and k".into()));
        }
        Ok(RewardModelParams {
            version: MODEL_VERSION.to_string(),
            extractor,
            head,
            gate,
            manifest: serde_json::Value::Object(Default::default()),
        })
    }

    pub fn extract(&self, x: &str, y: Option<&str>) -> DVector<f64> {
        self.extractor.extract(x, y)
    }

    pub fn predict_dims(&self, x: &str, y: &str) -> [f64; 5] {
        self.head.predict(&self.extract(x, Some(y)))
    }

    pub fn gate_coefficients(&self, x: &str) -> [f64; 5] {
        self.gate.gate(&self.extract(x, None))
    }

    pub fn scalar_reward(&self, x: &str, y: &str) -> f64 {
        dot(&self.gate_coefficients(x), &self.predict_dims(x, y))
    }

    /// Checksums of the parts stage 2 must not touch.
    pub fn frozen_checksums(&self) -> (String, String) {
        (self.extractor.checksum(), self.head.checksum())
    }
}

fn dot(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Prompt text for a step: instruction, observation and prior actions.
pub fn render_context(instruction: &str, observation: &str, trajectory: &[String]) -> String {
    crate::judge::prompt::context_slots(instruction, observation, trajectory)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionExample {
    pub x: String,
    pub y: String,
    pub r: [f64; 5],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub head: RegressionHead,
    /// Mean squared error plus ridge penalty at the solution.
    pub loss: f64,
}

/// Mean ‖Wᵀh − r‖² + λ‖W‖² over feature rows of `h` and target rows of `r`.
pub fn regression_loss(w: &DMatrix<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>, lambda: f64) -> f64 {
    let resid = h * w - r;
    resid.norm_squared() / h.nrows() as f64 + lambda * w.norm_squared()
}

/// Closed-form ridge solution of (HᵀH/n + λI) W = HᵀR/n.
pub fn fit_regression_features(h: &DMatrix<f64>, r: &DMatrix<f64>, lambda: f64) -> Result<RegressionFit, TrainError> {
    let n = h.nrows();
    if n == 0 {
        return Err(TrainError::Empty);
    }
    if r.nrows() != n || r.ncols() != 5 {
        return Err(TrainError::Shape(format!("targets are {}x{}, expected {n}x5", r.nrows(), r.ncols())));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(TrainError::Hyper(format!("lambda must be >= 0, got {lambda}")));
    }
    let d = h.ncols();
    let mut a = h.tr_mul(h) / n as f64;
    for i in 0..d {
        a[(i, i)] += lambda;
    }
    let b = h.tr_mul(r) / n as f64;
    let chol = match a.clone().cholesky() {
        Some(c) => c,
        None if lambda == 0.0 => return Err(TrainError::Singular),
        None => return Err(TrainError::NotPositiveDefinite(lambda)),
    };
    let w = chol.solve(&b);
    if lambda == 0.0 {
        // Cholesky can succeed on numerically singular systems
        let scale = a.diagonal().amax().max(f64::MIN_POSITIVE);
        let min_pivot = chol.l().diagonal().iter().fold(f64::INFINITY, |m, x| m.min(x * x));
        if min_pivot < scale * 1e-12 || w.iter().any(|x| !x.is_finite()) {
            return Err(TrainError::Singular);
        }
    }
    let loss = regression_loss(&w, h, r, lambda);
    Ok(RegressionFit {
        head: RegressionHead { w },
        loss,
    })
}

pub fn fit_regression(fe: &FeatureExtractor, examples: &[RegressionExample], lambda: f64) -> Result<RegressionFit, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::Empty);
    }
    let mut h = DMatrix::zeros(examples.len(), fe.d);
    let mut r = DMatrix::zeros(examples.len(), 5);
    for (i, ex) in examples.iter().enumerate() {
        h.set_row(i, &fe.extract(&ex.x, Some(&ex.y)).transpose());
        for j in 0..5 {
            r[(i, j)] = ex.r[j];
        }
    }
    fit_regression_features(&h, &r, lambda)
}

/// −log σ(r_chosen − r_rejected), i.e. softplus(−(r_chosen − r_rejected)).
pub fn bt_loss(r_chosen: f64, r_rejected: f64) -> f64 {
    softplus(-(r_chosen - r_rejected))
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatePair {
    pub x: String,
    pub chosen: String,
    pub rejected: String,
}

/// A pair reduced to what the gate sees: prompt features and the difference
/// of predicted dimension vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GateExample {
    pub hx: DVector<f64>,
    pub delta: [f64; 5],
}

pub fn gate_examples(p: &RewardModelParams, pairs: &[GatePair]) -> Vec<GateExample> {
    pairs
        .iter()
        .map(|pair| {
            let pc = p.predict_dims(&pair.x, &pair.chosen);
            let pr = p.predict_dims(&pair.x, &pair.rejected);
            GateExample {
                hx: p.extract(&pair.x, None),
                delta: std::array::from_fn(|j| pc[j] - pr[j]),
            }
        })
        .collect()
}

/// Mean Bradley-Terry loss of the gate over examples.
pub fn mean_bt_loss(gate: &GatingNet, ex: &[GateExample]) -> f64 {
    if ex.is_empty() {
        return 0.0;
    }
    ex.iter()
        .map(|e| bt_loss(dot(&gate.gate(&e.hx), &e.delta), 0.0))
        .sum::<f64>()
        / ex.len() as f64
}

/// Analytic gradient of `mean_bt_loss` in `GatingNet::flatten` order.
pub fn bt_gradient(gate: &GatingNet, ex: &[GateExample]) -> Vec<f64> {
    let mut gw1 = DMatrix::zeros(gate.w1.nrows(), gate.k);
    let mut gb1 = DVector::zeros(gate.k);
    let mut gw2 = DMatrix::zeros(gate.k, 5);
    let mut gb2 = DVector::zeros(5);
    let scale = 1.0 / ex.len().max(1) as f64;
    for e in ex {
        let fwd = gate.forward(&e.hx);
        let s = dot(&fwd.gate, &e.delta);
        let dl_ds = -sigmoid(-s);
        let dz = DVector::from_iterator(5, (0..5).map(|m| dl_ds * fwd.gate[m] * (e.delta[m] - s) * scale));
        gw2 += &fwd.hidden * dz.transpose();
        gb2 += &dz;
        let da = &gate.w2 * &dz;
        let dpre = da.zip_map(&fwd.hidden, |g, a| g * (1.0 - a * a));
        gw1 += &e.hx * dpre.transpose();
        gb1 += &dpre;
    }
    let mut out = Vec::with_capacity(gate.num_params());
    out.extend(gw1.iter());
    out.extend(gb1.iter());
    out.extend(gw2.iter());
    out.extend(gb2.iter());
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateFit {
    pub gate: GatingNet,
    /// Mean loss before each epoch's update, then the final loss.
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent on the mean BT loss, updating only the gate.
/// `seed` initialises the gate when `p.gate` is all zeros.
pub fn fit_gating(p: &RewardModelParams, pairs: &[GatePair], epochs: usize, lr: f64, seed: u64) -> Result<GateFit, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::Empty);
    }
    let ex = gate_examples(p, pairs);
    fit_gating_examples(&p.gate, &ex, epochs, lr, seed)
}

pub fn fit_gating_examples(
    start: &GatingNet,
    ex: &[GateExample],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<GateFit, TrainError> {
    if ex.is_empty() {
        return Err(TrainError::Empty);
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(TrainError::Hyper(format!("learning rate must be positive, got {lr}")));
    }
    let mut gate = start.clone();
    if epochs > 0 && gate.flatten().iter().all(|&x| x == 0.0) {
        gate = GatingNet::init(gate.w1.nrows(), gate.k, seed);
    }
    let mut losses = Vec::with_capacity(epochs + 1);
    let mut theta = gate.flatten();
    for epoch in 0..epochs {
        let loss = mean_bt_loss(&gate, ex);
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { epoch });
        }
        losses.push(loss);
        let g = bt_gradient(&gate, ex);
        for (t, gi) in theta.iter_mut().zip(&g) {
            *t -= lr * gi;
        }
        gate.assign(&theta);
    }
    let last = mean_bt_loss(&gate, ex);
    if !last.is_finite() {
        return Err(TrainError::NonFinite { epoch: epochs });
    }
    losses.push(last);
    Ok(GateFit { gate, losses })
}

/// Max relative error between `grad` and central differences of the mean
/// BT loss at the current gate.
pub fn grad_check_with<F>(gate: &GatingNet, ex: &[GateExample], grad: F) -> f64
where
    F: Fn(&GatingNet, &[GateExample]) -> Vec<f64>,
{
    let analytic = grad(gate, ex);
    let base = gate.flatten();
    let mut probe = gate.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut theta = base.clone();
        theta[i] = base[i] + FD_STEP;
        probe.assign(&theta);
        let up = mean_bt_loss(&probe, ex);
        theta[i] = base[i] - FD_STEP;
        probe.assign(&theta);
        let down = mean_bt_loss(&probe, ex);
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic[i];
        let denom = a.abs() + numeric.abs();
        if denom < GRAD_FLOOR {
            continue;
        }
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}

pub fn grad_check(p: &RewardModelParams, pairs: &[GatePair]) -> f64 {
    let ex = gate_examples(p, pairs);
    grad_check_with(&p.gate, &ex, bt_gradient)
}

// ---- end-to-end training ----

/// Hyperparameters for `train_model`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: DEFAULT_DIM,
            hidden: DEFAULT_HIDDEN,
            epochs: DEFAULT_EPOCHS,
            lr: DEFAULT_LR,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub n_regression: usize,
    pub n_gate_pairs: usize,
    pub regression_loss: f64,
    pub gate_loss_first: f64,
    pub gate_loss_last: f64,
}

/// One stage-1 example per scored candidate at every decision point.
pub fn regression_examples(ds: &Dataset) -> Vec<RegressionExample> {
    ds.decision_points
        .iter()
        .flat_map(|step| {
            let x = render_context(&step.instruction, &step.observation, &step.trajectory);
            step.candidates().into_iter().map(move |c| RegressionExample {
                x: x.clone(),
                y: c.action.text,
                r: c.scores.to_array(),
            })
        })
        .collect()
}

/// Stage-2 pairs: the Tot pairs, which carry the overall preference.
pub fn gate_pairs(set: &PairSet) -> Vec<GatePair> {
    set.pairs
        .iter()
        .filter(|p| p.evaluation_type == EvalType::Tot)
        .filter_map(|p| match (p.chosen(), p.rejected()) {
            (Candidate::Action(a), Candidate::Action(b)) => Some(GatePair {
                x: render_context(&p.instruction, &p.observation, &p.trajectory),
                chosen: a.text.clone(),
                rejected: b.text.clone(),
            }),
            _ => None,
        })
        .collect()
}

/// Fits the head on `ds`, then the gate on the Tot pairs of `set`.
pub fn train_model(ds: &Dataset, set: &PairSet, cfg: &TrainConfig) -> Result<(RewardModelParams, TrainReport), TrainError> {
    if cfg.dim == 0 || cfg.hidden == 0 {
        return Err(TrainError::Hyper("dim and hidden must be positive".into()));
    }
    let fe = FeatureExtractor::hashed(cfg.dim);
    let reg = regression_examples(ds);
    let fit = fit_regression(&fe, &reg, cfg.lambda)?;
    let mut p = RewardModelParams::new(fe, fit.head, GatingNet::zeros(cfg.dim, cfg.hidden))?;
    let pairs = gate_pairs(set);
    let gfit = fit_gating(&p, &pairs, cfg.epochs, cfg.lr, cfg.seed)?;
    p.gate = gfit.gate;
    let report = TrainReport {
        n_regression: reg.len(),
        n_gate_pairs: pairs.len(),
        regression_loss: fit.loss,
        gate_loss_first: gfit.losses[0],
        gate_loss_last: *gfit.losses.last().expect("at least one loss"),
    };
    Ok((p, report))
}

// ---- model file ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GateMatrices {
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GateFile {
    k: usize,
    activation: Activation,
    matrices: GateMatrices,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: String,
    extractor: FeatureExtractor,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    gate: GateFile,
    manifest: serde_json::Value,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>, TrainError> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(TrainError::Shape(format!("{what}: every row needs {ncols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

impl RewardModelParams {
    pub fn to_json(&self) -> String {
        let file = ModelFile {
            version: self.version.clone(),
            extractor: self.extractor.clone(),
            w: rows(&self.head.w),
            gate: GateFile {
                k: self.gate.k,
                activation: self.gate.activation,
                matrices: GateMatrices {
                    w1: rows(&self.gate.w1),
                    b1: self.gate.b1.iter().copied().collect(),
                    w2: rows(&self.gate.w2),
                    b2: self.gate.b2.iter().copied().collect(),
                },
            },
            manifest: self.manifest.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes") + "\n"
    }

    pub fn from_json(raw: &str) -> Result<Self, TrainError> {
        let f: ModelFile = serde_json::from_str(raw).map_err(|e| TrainError::File {
            path: "<model>".into(),
            message: e.to_string(),
        })?;
        let d = f.extractor.d;
        let k = f.gate.k;
        let w = from_rows(&f.w, 5, "W")?;
        let gate = GatingNet {
            k,
            activation: f.gate.activation,
            w1: from_rows(&f.gate.matrices.w1, k, "gate w1")?,
            b1: DVector::from_vec(f.gate.matrices.b1),
            w2: from_rows(&f.gate.matrices.w2, 5, "gate w2")?,
            b2: DVector::from_vec(f.gate.matrices.b2),
        };
        if gate.b1.len() != k || gate.b2.len() != 5 || w.nrows() != d {
            return Err(TrainError::Shape("bias or W lengths do not match d and k".into()));
        }
        let mut p = RewardModelParams::new(f.extractor, RegressionHead { w }, gate)?;
        p.version = f.version;
        p.manifest = f.manifest;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let ferr = |e: std::io::Error| TrainError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(ferr)?;
        }
        std::fs::write(path, self.to_json()).map_err(ferr)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let raw = std::fs::read_to_string(path).map_err(|e| TrainError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&raw).map_err(|e| match e {
            TrainError::File { message, .. } => TrainError::File {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extractor_basics() {
        let fe = FeatureExtractor::hashed(64);
        assert_eq!(fe.extract("", None).norm(), 0.0);
        assert_eq!(fe.extract("", Some("")).norm(), 0.0);
        let a = fe.extract("Click the Timer tab", Some("Type 00:16:35"));
        assert_eq!(a, fe.extract("Click the Timer tab", Some("Type 00:16:35")));
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert!((fe.extract("!!", None).norm() - 1.0).abs() < 1e-9);
        assert_ne!(fe.extract("open", None), fe.extract("", Some("open")));
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(tokens("Type 00:16, OK"), ["type", "00", ":", "16", ",", "ok"]);
    }

    #[test]
    fn bt_loss_values() {
        assert!((bt_loss(0.3, 0.3) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bt_loss(1.0, 0.0) - 0.313262).abs() < 1e-6);
        assert!(bt_loss(800.0, -800.0) < 1e-300);
        assert!((bt_loss(-800.0, 800.0) - 1600.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_shift_invariance() {
        let a = softmax(&[0.1, -2.0, 3.0, 0.0, 1.0]);
        let b = softmax(&[5.1, 3.0, 8.0, 5.0, 6.0]);
        for j in 0..5 {
            assert!((a[j] - b[j]).abs() < 1e-12);
        }
        assert_eq!(softmax(&[0.0; 5]), [0.2; 5]);
    }

    #[test]
    fn singular_system_without_ridge() {
        let h = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let r = DMatrix::zeros(2, 5);
        assert!(matches!(fit_regression_features(&h, &r, 0.0), Err(TrainError::Singular)));
        assert!(fit_regression_features(&h, &r, 1e-6).is_ok());
    }

    #[test]
    fn model_file_round_trip() {
        let fe = FeatureExtractor::hashed(8);
        let mut head = RegressionHead::zeros(8);
        head.w[(3, 2)] = 0.1 + 0.2;
        let gate = GatingNet::init(8, 4, 9);
        let p = RewardModelParams::new(fe, head, gate).unwrap();
        let back = RewardModelParams::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        assert!(RewardModelParams::from_json("{\"version\": 1}").is_err());
    }
}
