//! Subcommand bodies. Each resolves flags over the config file, runs one
//! pipeline stage and writes a run manifest next to its outputs.

use crate::config::RunConfig;
use crate::{Classify, Cli, Command, ErrorKind, Failure, JudgeKind, ModeArg, ScorerArg};
use anyhow::anyhow;
use prm_core::collect::{run_collection, Dataset};
use prm_core::evalbench::{self, RewardScorer, ScorerKind};
use prm_core::guide::{self, AgentPolicy, DimensionMask, GuidanceConfig, GuideMode, GuideScorer, StepSearch};
use prm_core::judge::{Judge, RemoteJudge, RemoteJudgeConfig, RuleJudge};
use prm_core::mctsp::{SearchBudget, DEFAULT_C, DEFAULT_ROLLOUTS};
use prm_core::pairs::{self, build_pairs, parse_types, DimensionWeights, PairSet, DEFAULT_MARGIN};
use prm_core::taskenv::{load_dir, TaskGraph};
use prm_core::trainer::{self, RewardModelParams, TrainConfig};
use prm_core::util::digest_path;
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

pub const DEFAULT_ITERATIONS: usize = 200;
pub const DEFAULT_GUIDE_N: [usize; 4] = [1, 2, 4, 8];
pub const DEFAULT_EPSILON: f64 = 0.5;
pub const DEFAULT_EPISODES: usize = 100;

type CmdResult = Result<(), Failure>;

fn fail(kind: ErrorKind, msg: impl Into<String>) -> Failure {
    Failure {
        kind,
        error: anyhow!(msg.into()),
    }
}

/// Provenance written beside every output.
#[derive(Debug, Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    config: Value,
    /// Input path → SHA-256 of its contents.
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl RunManifest {
    fn new(command: &'static str, seed: u64, config: Value) -> Self {
        RunManifest {
            tool: "prm",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    fn input(&mut self, path: &Path) -> CmdResult {
        let digest = digest_path(path).kind(ErrorKind::MissingInput)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    fn write(&self, path: &Path) -> CmdResult {
        let body = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        write_file(path, &body)
    }
}

fn write_file(path: &Path, body: &str) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).kind(ErrorKind::Runtime)?;
    }
    fs::write(path, body)
        .map_err(|e| anyhow!("{}: {e}", path.display()))
        .kind(ErrorKind::Runtime)
}

/// `<file>.run.json` beside a single-file output.
fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("run.json")
}

fn require(path: &Path) -> CmdResult {
    if path.exists() {
        Ok(())
    } else {
        Err(fail(ErrorKind::MissingInput, format!("input not found: {}", path.display())))
    }
}

fn load_envs(dir: &Path) -> Result<Vec<TaskGraph>, Failure> {
    require(dir)?;
    let envs = load_dir(dir).kind(ErrorKind::MissingInput)?;
    if envs.is_empty() {
        return Err(fail(
            ErrorKind::MissingInput,
            format!("no environment files in {}", dir.display()),
        ));
    }
    Ok(envs)
}

fn load_dataset(dir: &Path) -> Result<Dataset, Failure> {
    require(dir)?;
    Dataset::load(dir).kind(ErrorKind::MissingInput)
}

fn load_pairs(path: &Path) -> Result<PairSet, Failure> {
    require(path)?;
    PairSet::load(path).kind(ErrorKind::MissingInput)
}

fn load_model(path: &Path) -> Result<RewardModelParams, Failure> {
    require(path)?;
    RewardModelParams::load(path).kind(ErrorKind::MissingInput)
}

fn remote_judge(cfg: &RunConfig) -> Result<RemoteJudge, Failure> {
    let j = &cfg.judge;
    let mut rc = RemoteJudgeConfig::resolve(j.endpoint.as_deref()).kind(ErrorKind::InvalidConfig)?;
    if let Some(n) = j.max_attempts {
        rc.max_attempts = n;
    }
    if let Some(b) = &j.backoff_ms {
        rc.backoff = b.iter().map(|&ms| Duration::from_millis(ms)).collect();
    }
    if let Some(t) = j.timeout_ms {
        rc.timeout = Duration::from_millis(t);
    }
    if let Some(m) = j.max_in_flight {
        rc.max_in_flight = m;
    }
    if rc.max_attempts == 0 || rc.max_in_flight == 0 {
        return Err(fail(ErrorKind::InvalidConfig, "judge max_attempts and max_in_flight must be positive"));
    }
    Ok(RemoteJudge::new(rc))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Failure>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|e| fail(ErrorKind::InvalidConfig, format!("bad {what} `{p}`: {e}")))
        })
        .collect()
}

pub fn run(cli: Cli) -> CmdResult {
    let cfg = match &cli.config {
        Some(p) => {
            require(p)?;
            RunConfig::load(p)
                .map_err(|e| anyhow!("{}: {e}", p.display()))
                .kind(ErrorKind::InvalidConfig)?
        }
        None => RunConfig::default(),
    };
    let workers = cli
        .workers
        .or(cfg.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(fail(ErrorKind::InvalidConfig, "--workers must be at least 1"));
    }
    // a second call in the same process keeps the first pool, which is fine
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();

    match cli.command {
        Command::Collect {
            envs,
            iterations,
            rollouts,
            c,
            seed,
            judge,
            out,
        } => {
            let judge_kind = match judge {
                Some(j) => j,
                None => match cfg.judge.kind.as_deref() {
                    None | Some("rule") => JudgeKind::Rule,
                    Some("remote") => JudgeKind::Remote,
                    Some(other) => return Err(fail(ErrorKind::InvalidConfig, format!("unknown judge `{other}`"))),
                },
            };
            let budget = SearchBudget::new(
                iterations.or(cfg.search.iterations).unwrap_or(DEFAULT_ITERATIONS),
                rollouts.or(cfg.search.rollouts).unwrap_or(DEFAULT_ROLLOUTS),
                c.or(cfg.search.c).unwrap_or(DEFAULT_C),
                seed.or(cfg.seed).unwrap_or(0),
            );
            budget.validate().kind(ErrorKind::InvalidConfig)?;
            cmd_collect(&cfg, &envs, budget, judge_kind, workers, &out)
        }
        Command::Pairs {
            dataset,
            types,
            weights,
            margin,
            seed,
            out,
        } => {
            let types = parse_types(types.as_deref().or(cfg.pairs.types.as_deref()).unwrap_or("all"))
                .kind(ErrorKind::InvalidConfig)?;
            let weights = match weights {
                Some(w) => w
                    .parse::<DimensionWeights>()
                    .map_err(|e| anyhow!("--weights: {e}"))
                    .kind(ErrorKind::InvalidConfig)?,
                None => DimensionWeights::from_array(cfg.pairs.weights.unwrap_or([1.0; 5])),
            };
            weights.validate().kind(ErrorKind::InvalidConfig)?;
            let margin = margin.or(cfg.pairs.margin).unwrap_or(DEFAULT_MARGIN);
            if !(margin.is_finite() && margin >= 0.0) {
                return Err(fail(ErrorKind::InvalidConfig, format!("--margin must be non-negative, got {margin}")));
            }
            let seed = seed.or(cfg.seed).unwrap_or(0);
            cmd_pairs(&dataset, &types, &weights, margin, seed, &out)
        }
        Command::Train {
            pairs,
            dataset,
            dim,
            hidden,
            epochs,
            lr,
            lambda,
            seed,
            out,
        } => {
            let t = &cfg.train;
            let tc = TrainConfig {
                dim: dim.or(t.dim).unwrap_or(trainer::DEFAULT_DIM),
                hidden: hidden.or(t.hidden).unwrap_or(trainer::DEFAULT_HIDDEN),
                epochs: epochs.or(t.epochs).unwrap_or(trainer::DEFAULT_EPOCHS),
                lr: lr.or(t.lr).unwrap_or(trainer::DEFAULT_LR),
                lambda: lambda.or(t.lambda).unwrap_or(trainer::DEFAULT_LAMBDA),
                seed: seed.or(cfg.seed).unwrap_or(0),
            };
            if tc.dim == 0 || tc.hidden == 0 || tc.lr.is_nan() || tc.lr <= 0.0 || tc.lambda.is_nan() || tc.lambda < 0.0 {
                return Err(fail(
                    ErrorKind::InvalidConfig,
                    "dim and hidden must be positive, lr positive, lambda non-negative",
                ));
            }
            cmd_train(&pairs, &dataset, &tc, &out)
        }
        Command::Eval {
            pairs,
            model,
            scorer,
            out,
        } => cmd_eval(&cfg, &pairs, model.as_deref(), scorer, &out),
        Command::Correlate { dataset, out } => cmd_correlate(&dataset, &out),
        Command::Guide {
            envs,
            model,
            mode,
            n,
            mask,
            epsilon,
            episodes,
            seed,
            out,
        } => {
            let g = &cfg.guide;
            let mode = match mode {
                Some(ModeArg::Rerank) => GuideMode::Rerank,
                Some(ModeArg::Mcts) => GuideMode::RmMcts,
                None => g
                    .mode
                    .as_deref()
                    .unwrap_or("rerank")
                    .parse()
                    .kind(ErrorKind::InvalidConfig)?,
            };
            let n_values = match n {
                Some(s) => parse_list::<usize>(&s, "N")?,
                None => g.n.clone().unwrap_or_else(|| DEFAULT_GUIDE_N.to_vec()),
            };
            if n_values.is_empty() || n_values.contains(&0) {
                return Err(fail(ErrorKind::InvalidConfig, "--n needs positive candidate counts"));
            }
            let masks = match mask {
                Some(s) => guide::parse_masks(&s).kind(ErrorKind::InvalidConfig)?,
                None => match &g.masks {
                    Some(list) => list
                        .iter()
                        .map(|m| m.parse::<DimensionMask>())
                        .collect::<Result<_, _>>()
                        .kind(ErrorKind::InvalidConfig)?,
                    None => {
                        let mut m = DimensionMask::singles();
                        m.push(DimensionMask::FULL);
                        m
                    }
                },
            };
            if masks.is_empty() || masks.iter().any(DimensionMask::is_empty) {
                return Err(fail(ErrorKind::InvalidConfig, "--mask needs at least one non-empty mask"));
            }
            let policy = AgentPolicy::eps_oracle(epsilon.or(g.epsilon).unwrap_or(DEFAULT_EPSILON), seed.or(cfg.seed).unwrap_or(0));
            policy.validate().kind(ErrorKind::InvalidConfig)?;
            let defaults = StepSearch::default();
            let gc = GuidanceConfig {
                mode,
                n_candidates: n_values[0],
                scorer: GuideScorer::Oracle,
                mask: DimensionMask::FULL,
                episodes: episodes.or(g.episodes).unwrap_or(DEFAULT_EPISODES),
                seed: policy.rng_seed,
                search: StepSearch {
                    iterations: g.search_iterations.unwrap_or(defaults.iterations),
                    rollouts: g.search_rollouts.unwrap_or(defaults.rollouts),
                    exploration_c: cfg.search.c.unwrap_or(defaults.exploration_c),
                },
            };
            gc.validate().kind(ErrorKind::InvalidConfig)?;
            cmd_guide(&envs, model.as_deref(), &policy, gc, &n_values, &masks, &out)
        }
    }
}

fn cmd_collect(
    cfg: &RunConfig,
    envs_dir: &Path,
    budget: SearchBudget,
    judge_kind: JudgeKind,
    workers: usize,
    out: &Path,
) -> CmdResult {
    let envs = load_envs(envs_dir)?;
    let judge: Box<dyn Judge> = match judge_kind {
        JudgeKind::Rule => Box::new(RuleJudge),
        JudgeKind::Remote => Box::new(remote_judge(cfg)?),
    };
    let ds = run_collection(&envs, budget, judge.as_ref(), workers).kind(ErrorKind::Runtime)?;
    ds.save(out).kind(ErrorKind::Runtime)?;

    let mut m = RunManifest::new(
        "collect",
        budget.rng_seed,
        json!({ "budget": budget, "judge": judge_kind, "workers": workers }),
    );
    m.input(envs_dir)?;
    m.output(out);
    m.write(&out.join("run_manifest.json"))?;

    if let Some(f) = ds.manifest.failures.iter().find(|f| f.kind == "judge") {
        return Err(fail(
            ErrorKind::Judge,
            format!("judge failed for {}: {}", f.env_id, f.error),
        ));
    }
    if let Some(f) = ds.manifest.failures.first() {
        return Err(fail(ErrorKind::Runtime, format!("search failed for {}: {}", f.env_id, f.error)));
    }
    Ok(())
}

fn cmd_pairs(
    dataset: &Path,
    types: &[pairs::EvalType],
    weights: &DimensionWeights,
    margin: f64,
    seed: u64,
    out: &Path,
) -> CmdResult {
    let ds = load_dataset(dataset)?;
    let set = build_pairs(&ds, types, weights, margin, seed).kind(ErrorKind::InvalidConfig)?;
    set.save(out).kind(ErrorKind::Runtime)?;
    let mut m = RunManifest::new(
        "pairs",
        seed,
        json!({ "types": types, "weights": weights, "margin": margin }),
    );
    m.input(dataset)?;
    m.output(out);
    m.output(&pairs::manifest_path(out));
    m.write(&sidecar(out))
}

fn cmd_train(pairs_path: &Path, dataset: &Path, tc: &TrainConfig, out: &Path) -> CmdResult {
    let ds = load_dataset(dataset)?;
    let set = load_pairs(pairs_path)?;
    let (mut model, report) = trainer::train_model(&ds, &set, tc).kind(ErrorKind::Runtime)?;
    let mut m = RunManifest::new("train", tc.seed, json!(tc));
    m.input(pairs_path)?;
    m.input(dataset)?;
    m.output(out);
    let mut manifest = serde_json::to_value(&m).expect("manifest serializes");
    manifest["report"] = serde_json::to_value(&report).expect("report serializes");
    model.manifest = manifest;
    model.save(out).kind(ErrorKind::Runtime)
}

fn cmd_eval(cfg: &RunConfig, pairs_path: &Path, model: Option<&Path>, scorer: ScorerArg, out: &Path) -> CmdResult {
    let set = load_pairs(pairs_path)?;
    let seed = cfg.seed.unwrap_or(set.manifest.seed);
    let kind = match scorer {
        ScorerArg::Trained => {
            let path = model.ok_or_else(|| fail(ErrorKind::InvalidConfig, "--scorer trained needs --model"))?;
            ScorerKind::Trained(Box::new(load_model(path)?))
        }
        ScorerArg::Oracle => ScorerKind::Oracle(set.manifest.weights),
        ScorerArg::Random => ScorerKind::UniformRandom(seed),
        ScorerArg::Judge => ScorerKind::BaselineJudge(Box::new(remote_judge(cfg)?)),
    };
    let rs = RewardScorer::new(kind);
    let report = evalbench::evaluate(&rs, &set.pairs).map_err(|e| {
        let kind = match e {
            evalbench::EvalError::Judge(_) => ErrorKind::Judge,
            evalbench::EvalError::Empty => ErrorKind::MissingInput,
            _ => ErrorKind::Runtime,
        };
        Failure { kind, error: e.into() }
    })?;
    let md = out.join("report.md");
    let csv = out.join("report.csv");
    write_file(&md, &report.to_markdown())?;
    write_file(&csv, &report.to_csv())?;

    let mut m = RunManifest::new(
        "eval",
        seed,
        json!({ "scorer": scorer, "tie_epsilon": rs.tie_epsilon }),
    );
    m.input(pairs_path)?;
    if let Some(p) = model {
        m.input(p)?;
    }
    m.output(&md);
    m.output(&csv);
    m.write(&out.join("run_manifest.json"))
}

fn cmd_correlate(dataset: &Path, out: &Path) -> CmdResult {
    let ds = load_dataset(dataset)?;
    let cm = evalbench::correlation_matrix(&ds).kind(ErrorKind::Runtime)?;
    write_file(out, &cm.to_csv())?;
    let mut m = RunManifest::new("correlate", ds.manifest.seed, json!({}));
    m.input(dataset)?;
    m.output(out);
    m.write(&sidecar(out))
}

fn cmd_guide(
    envs_dir: &Path,
    model: Option<&Path>,
    policy: &AgentPolicy,
    mut gc: GuidanceConfig,
    n_values: &[usize],
    masks: &[DimensionMask],
    out: &Path,
) -> CmdResult {
    let envs = load_envs(envs_dir)?;
    if let Some(p) = model {
        gc.scorer = GuideScorer::Trained(Box::new(load_model(p)?));
    }
    let curve = guide::scaling_sweep(&envs, policy, &gc, n_values).kind(ErrorKind::Runtime)?;
    let scaling = out.join("scaling.csv");
    write_file(&scaling, &curve.to_csv())?;

    let mut m = RunManifest::new(
        "guide",
        gc.seed,
        json!({
            "mode": gc.mode,
            "scorer": gc.scorer.name(),
            "policy": policy,
            "n": n_values,
            "masks": masks.iter().map(ToString::to_string).collect::<Vec<_>>(),
            "episodes_per_env": gc.episodes,
            "step_search": gc.search,
            "backup": "scorer value replaces oracle dims",
        }),
    );
    m.input(envs_dir)?;
    if let Some(p) = model {
        m.input(p)?;
    }
    m.output(&scaling);
    for &n in n_values {
        let mut c = gc.clone();
        c.n_candidates = n;
        let table = guide::ablation_sweep(&envs, policy, &c, masks).kind(ErrorKind::Runtime)?;
        let path = out.join(format!("ablation_n{n}.csv"));
        write_file(&path, &table.to_csv())?;
        m.output(&path);
    }
    m.write(&out.join("run_manifest.json"))
}
