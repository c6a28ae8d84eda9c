//! Oracles and helpers shared by the integration tests. Nothing here calls
//! the library's own distance or value code; the oracles enumerate.

#![allow(dead_code)]

use prm_core::collect::{run_collection, Dataset};
use prm_core::judge::RuleJudge;
use prm_core::mctsp::{SearchBudget, SearchTree, ROOT};
use prm_core::taskenv::TaskGraph;
use std::path::PathBuf;

pub const TOL: f64 = 1e-9;

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

/// Shortest goal distance by exhaustive depth-first enumeration of action
/// sequences. A shortest walk never repeats a state, so depth is bounded by
/// the state count.
pub fn enumerated_min_steps(env: &TaskGraph, s: usize) -> Option<usize> {
    fn walk(env: &TaskGraph, s: usize, depth: usize, limit: usize, best: &mut Option<usize>) {
        if env.is_goal(s) {
            *best = Some(best.map_or(depth, |b| b.min(depth)));
            return;
        }
        if depth >= limit || best.is_some_and(|b| depth >= b) {
            return;
        }
        for t in env.actions(s) {
            walk(env, t.to, depth + 1, limit, best);
        }
    }
    let mut best = None;
    walk(env, s, 0, env.num_states(), &mut best);
    best
}

/// Every shortest successful action-id sequence from the initial state.
pub fn enumerated_optimal_paths(env: &TaskGraph) -> Vec<Vec<String>> {
    fn walk(env: &TaskGraph, s: usize, path: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
        if env.is_goal(s) {
            out.push(path.clone());
            return;
        }
        if path.len() >= env.horizon() {
            return;
        }
        for t in env.actions(s) {
            path.push(t.action.action_id.clone());
            walk(env, t.to, path, out);
            path.pop();
        }
    }
    let mut all = Vec::new();
    walk(env, env.initial(), &mut Vec::new(), &mut all);
    let Some(shortest) = all.iter().map(Vec::len).min() else {
        return all;
    };
    all.retain(|p| p.len() == shortest);
    all
}

/// Visit conservation: every node's count equals its children's counts plus
/// the backups that ended at it, and the root saw one backup per iteration.
/// Backup replay: replaying the log from zero reproduces every n and v.
pub fn check_tree_invariants(tree: &SearchTree) -> Result<(), String> {
    let nodes = &tree.nodes;
    let mut ended = vec![0u64; nodes.len()];
    for rec in &tree.backup_log {
        ended[rec.leaf] += 1;
    }
    if nodes[ROOT].n as usize != tree.budget.iterations {
        return Err(format!(
            "root n {} != iterations {}",
            nodes[ROOT].n, tree.budget.iterations
        ));
    }
    for (id, node) in nodes.iter().enumerate() {
        let below: u64 = node.children.iter().map(|&c| nodes[c].n).sum();
        if node.n != below + ended[id] {
            return Err(format!("node {id}: n {} != children {below} + own {}", node.n, ended[id]));
        }
        if let Some(p) = node.parent {
            if !nodes[p].children.contains(&id) {
                return Err(format!("node {id} missing from its parent's children"));
            }
        }
    }

    let mut n = vec![0u64; nodes.len()];
    let mut v = vec![[0.0f64; 5]; nodes.len()];
    for rec in &tree.backup_log {
        let mut cur = Some(rec.leaf);
        while let Some(id) = cur {
            n[id] += 1;
            for (acc, x) in v[id].iter_mut().zip(rec.value) {
                *acc += x;
            }
            cur = nodes[id].parent;
        }
    }
    for (id, node) in nodes.iter().enumerate() {
        if node.n != n[id] {
            return Err(format!("replay n mismatch at node {id}"));
        }
        for (k, (&got, &want)) in node.v.iter().zip(&v[id]).enumerate() {
            if (got - want).abs() > 1e-9 * (1.0 + want.abs()) {
                return Err(format!("replay v[{k}] mismatch at node {id}: {got} vs {want}"));
            }
        }
    }
    Ok(())
}

/// Rule-judged collections over `seeds`, concatenated into one dataset.
pub fn merged_collection(envs: &[TaskGraph], iterations: usize, rollouts: usize, seeds: std::ops::Range<u64>) -> Dataset {
    let mut merged: Option<Dataset> = None;
    for seed in seeds {
        let budget = SearchBudget::new(iterations, rollouts, prm_core::mctsp::DEFAULT_C, seed);
        let ds = run_collection(envs, budget, &RuleJudge, 4).expect("collection");
        assert!(ds.manifest.failures.is_empty(), "{:?}", ds.manifest.failures);
        match &mut merged {
            None => merged = Some(ds),
            Some(m) => {
                m.trajectories.extend(ds.trajectories);
                m.decision_points.extend(ds.decision_points);
            }
        }
    }
    merged.expect("at least one seed")
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Compares `actual` with the stored golden file. `UPDATE_GOLDEN=1`
/// rewrites the file instead.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden_dir().join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_dir()).map_err(|e| e.to_string())?;
        std::fs::write(&path, actual).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        return Ok(());
    }
    let line = expected
        .lines()
        .zip(actual.lines())
        .position(|(a, b)| a != b)
        .map_or_else(|| "length".to_string(), |i| format!("line {}", i + 1));
    Err(format!("{name} differs from golden at {line}"))
}
