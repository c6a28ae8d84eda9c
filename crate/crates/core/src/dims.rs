//! The five step-quality dimensions: Helpfulness (H), Odds of Success (OS),
//! Efficiency (E), Task Relevance (TR) and Coherence (C).
//!
//! H, OS and E are computed here from exact environment quantities and from
//! rollout bundles. TR and C are binary verdicts supplied by a judge.
//!
//! ```text
//! H_i  = (1 - AC_{i-1}) / (M - i + 1) * (2 r_i - 1)
//! AC_i = max(AC_{i-1} + H_i, 0),  AC_0 = 0
//! OS_i = #successful rollouts / N
//! E_i  = (Len_{i-1} - Len_i) / len_0,  Len_i = mean rollout remaining length
//! ```

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DimsError {
    #[error("rollout bundle is empty")]
    EmptyBundle,
    #[error("rollout bundle has {outcomes} outcomes but {lengths} remaining lengths")]
    BundleMismatch { outcomes: usize, lengths: usize },
    #[error("helpfulness denominator m_eff - i + 1 = {0} must be at least 1")]
    Denominator(i64),
    #[error("accumulated contribution must be non-negative, got {0}")]
    NegativeAc(f64),
    #[error("efficiency normaliser len0 must be positive, got {0}")]
    NonPositiveLen0(f64),
    #[error("invalid step scores: {0}")]
    InvalidScores(String),
}

/// One of the five supervision dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dimension {
    H,
    OS,
    E,
    TR,
    C,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [Dimension::H, Dimension::OS, Dimension::E, Dimension::TR, Dimension::C];

    pub fn index(self) -> usize {
        match self {
            Dimension::H => 0,
            Dimension::OS => 1,
            Dimension::E => 2,
            Dimension::TR => 3,
            Dimension::C => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::H => "H",
            Dimension::OS => "OS",
            Dimension::E => "E",
            Dimension::TR => "TR",
            Dimension::C => "C",
        }
    }

    /// TR and C only take the values 0 and 1.
    pub fn is_binary(self) -> bool {
        matches!(self, Dimension::TR | Dimension::C)
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "H" => Ok(Dimension::H),
            "OS" => Ok(Dimension::OS),
            "E" => Ok(Dimension::E),
            "TR" => Ok(Dimension::TR),
            "C" => Ok(Dimension::C),
            other => Err(format!("unknown dimension `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepScores {
    pub h: f64,
    pub os: f64,
    pub e: f64,
    pub tr: f64,
    pub c: f64,
}

impl StepScores {
    pub fn new(h: f64, os: f64, e: f64, tr: f64, c: f64) -> Result<Self, DimsError> {
        let s = StepScores { h, os, e, tr, c };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DimsError> {
        let bad = |m: String| Err(DimsError::InvalidScores(m));
        if !self.h.is_finite() || !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&self.h) {
            return bad(format!("h = {} outside [-1, 1]", self.h));
        }
        if !(0.0..=1.0).contains(&self.os) {
            return bad(format!("os = {} outside [0, 1]", self.os));
        }
        if !self.e.is_finite() {
            return bad(format!("e = {} is not finite", self.e));
        }
        if self.tr != 0.0 && self.tr != 1.0 {
            return bad(format!("tr = {} is not binary", self.tr));
        }
        if self.c != 0.0 && self.c != 1.0 {
            return bad(format!("c = {} is not binary", self.c));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.h, self.os, self.e, self.tr, self.c]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        StepScores {
            h: a[0],
            os: a[1],
            e: a[2],
            tr: a[3],
            c: a[4],
        }
    }

    pub fn get(&self, d: Dimension) -> f64 {
        self.to_array()[d.index()]
    }

    /// Copy with every component rounded to 12 significant digits.
    pub fn rounded(&self) -> Self {
        Self::from_array(self.to_array().map(crate::util::round_sig12))
    }
}

/// Inputs to the Helpfulness formula for step `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HelpfulnessContext {
    /// Accumulated contribution AC_{i-1}.
    pub ac_prev: f64,
    /// Effective total minimum steps M.
    pub m_eff: usize,
    /// 1-based step index.
    pub i: usize,
    /// Basic reward r_i.
    pub r: bool,
}

/// Outcomes of N simulated continuations from one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutBundle {
    outcomes: Vec<bool>,
    remaining_lengths: Vec<usize>,
}

impl RolloutBundle {
    pub fn new(outcomes: Vec<bool>, remaining_lengths: Vec<usize>) -> Result<Self, DimsError> {
        if outcomes.len() != remaining_lengths.len() {
            return Err(DimsError::BundleMismatch {
                outcomes: outcomes.len(),
                lengths: remaining_lengths.len(),
            });
        }
        if outcomes.is_empty() {
            return Err(DimsError::EmptyBundle);
        }
        Ok(RolloutBundle {
            outcomes,
            remaining_lengths,
        })
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn outcomes(&self) -> &[bool] {
        &self.outcomes
    }

    pub fn remaining_lengths(&self) -> &[usize] {
        &self.remaining_lengths
    }
}

/// r_i = 1 iff at least one simulated continuation reached the goal.
pub fn basic_reward(bundle: &RolloutBundle) -> Result<bool, DimsError> {
    if bundle.outcomes.is_empty() {
        return Err(DimsError::EmptyBundle);
    }
    Ok(bundle.outcomes.iter().any(|&o| o))
}

pub fn helpfulness(ctx: &HelpfulnessContext) -> Result<f64, DimsError> {
    if ctx.ac_prev.is_nan() || ctx.ac_prev < 0.0 {
        return Err(DimsError::NegativeAc(ctx.ac_prev));
    }
    let denom = ctx.m_eff as i64 - ctx.i as i64 + 1;
    if denom < 1 {
        return Err(DimsError::Denominator(denom));
    }
    let sign = if ctx.r { 1.0 } else { -1.0 };
    Ok((1.0 - ctx.ac_prev) / denom as f64 * sign)
}

pub fn update_ac(ac_prev: f64, h: f64) -> f64 {
    (ac_prev + h).max(0.0)
}

pub fn odds_of_success(bundle: &RolloutBundle) -> Result<f64, DimsError> {
    if bundle.outcomes.is_empty() {
        return Err(DimsError::EmptyBundle);
    }
    let wins = bundle.outcomes.iter().filter(|&&o| o).count();
    Ok(wins as f64 / bundle.outcomes.len() as f64)
}

pub fn efficiency(len_prev: f64, len_cur: f64, len0: f64) -> Result<f64, DimsError> {
    if len0.is_nan() || len0 <= 0.0 {
        return Err(DimsError::NonPositiveLen0(len0));
    }
    Ok((len_prev - len_cur) / len0)
}

pub fn mean_remaining_length(bundle: &RolloutBundle) -> Result<f64, DimsError> {
    if bundle.remaining_lengths.is_empty() {
        return Err(DimsError::EmptyBundle);
    }
    let total: usize = bundle.remaining_lengths.iter().sum();
    Ok(total as f64 / bundle.remaining_lengths.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOL: f64 = 1e-9;

    fn bundle(outcomes: &[bool]) -> RolloutBundle {
        RolloutBundle::new(outcomes.to_vec(), vec![1; outcomes.len()]).unwrap()
    }

    fn ctx(ac_prev: f64, m_eff: usize, i: usize, r: bool) -> HelpfulnessContext {
        HelpfulnessContext { ac_prev, m_eff, i, r }
    }

    #[test]
    fn basic_reward_is_existential() {
        assert!(basic_reward(&bundle(&[false, true, false])).unwrap());
        assert!(!basic_reward(&bundle(&[false, false])).unwrap());
        assert!(basic_reward(&bundle(&[true; 8])).unwrap());
        assert_eq!(RolloutBundle::new(vec![], vec![]), Err(DimsError::EmptyBundle));
    }

    #[test]
    fn helpfulness_worked_values() {
        assert!((helpfulness(&ctx(0.0, 3, 1, true)).unwrap() - 1.0 / 3.0).abs() < TOL);
        assert!((helpfulness(&ctx(2.0 / 3.0, 3, 3, true)).unwrap() - 1.0 / 3.0).abs() < TOL);
        // four steps still needed from here and the step fails
        assert!((helpfulness(&ctx(0.0, 4, 1, false)).unwrap() + 0.25).abs() < TOL);
        assert!(matches!(
            helpfulness(&ctx(0.0, 2, 3, true)),
            Err(DimsError::Denominator(0))
        ));
        assert!(helpfulness(&ctx(-0.1, 3, 1, true)).is_err());
    }

    #[test]
    fn update_ac_clamps_at_zero() {
        assert!((update_ac(0.0, 1.0 / 3.0) - 1.0 / 3.0).abs() < TOL);
        assert_eq!(update_ac(0.2, -0.5), 0.0);
        assert!((update_ac(2.0 / 3.0, 1.0 / 3.0) - 1.0).abs() < TOL);
    }

    #[test]
    fn odds_of_success_counts() {
        assert!((odds_of_success(&bundle(&[false, true, true])).unwrap() - 2.0 / 3.0).abs() < TOL);
        assert_eq!(odds_of_success(&bundle(&[false; 5])).unwrap(), 0.0);
        assert_eq!(odds_of_success(&bundle(&[true; 5])).unwrap(), 1.0);
    }

    #[test]
    fn efficiency_worked_values() {
        assert!((efficiency(2.0, 1.0, 3.0).unwrap() - 1.0 / 3.0).abs() < TOL);
        assert_eq!(efficiency(4.0, 4.0, 7.0).unwrap(), 0.0);
        assert!((efficiency(7.0, 4.0, 10.0).unwrap() - 0.3).abs() < TOL);
        assert!(efficiency(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn mean_remaining_length_values() {
        let b = |l: Vec<usize>| RolloutBundle::new(vec![true; l.len()], l).unwrap();
        assert_eq!(mean_remaining_length(&b(vec![1, 1, 1])).unwrap(), 1.0);
        assert_eq!(mean_remaining_length(&b(vec![2, 4])).unwrap(), 3.0);
        assert_eq!(mean_remaining_length(&b(vec![0, 3, 3])).unwrap(), 2.0);
        assert!(RolloutBundle::new(vec![true], vec![1, 2]).is_err());
    }

    #[test]
    fn three_step_chain_shares_one_third() {
        let mut ac = 0.0;
        for i in 1..=3 {
            let h = helpfulness(&ctx(ac, 3, i, true)).unwrap();
            assert!((h - 1.0 / 3.0).abs() < TOL);
            ac = update_ac(ac, h);
        }
        assert!((ac - 1.0).abs() < TOL);
    }

    #[test]
    fn step_scores_validation() {
        assert!(StepScores::new(0.5, 0.5, -2.0, 1.0, 0.0).is_ok());
        assert!(StepScores::new(0.5, 1.5, 0.0, 1.0, 0.0).is_err());
        assert!(StepScores::new(0.5, 0.5, 0.0, 0.5, 0.0).is_err());
        assert!(StepScores::new(f64::NAN, 0.5, 0.0, 1.0, 0.0).is_err());
        assert_eq!("os".parse::<Dimension>().unwrap(), Dimension::OS);
    }

    proptest! {
        #[test]
        fn helpfulness_sign_law(ac in 0.0f64..1.0, m in 1usize..12, back in 0usize..12) {
            let i = m.saturating_sub(back).max(1);
            let pos = helpfulness(&ctx(ac, m, i, true)).unwrap();
            let neg = helpfulness(&ctx(ac, m, i, false)).unwrap();
            prop_assert!(pos > 0.0);
            prop_assert!(neg < 0.0);
            prop_assert!((pos + neg).abs() < TOL);
            prop_assert_eq!(helpfulness(&ctx(1.0, m, i, true)).unwrap(), 0.0);
        }

        #[test]
        fn shorter_success_dominates(m1 in 1usize..10, extra in 1usize..10) {
            let m2 = m1 + extra;
            let per_step = |m: usize| {
                let mut ac = 0.0;
                let mut hs = Vec::new();
                for i in 1..=m {
                    let h = helpfulness(&ctx(ac, m, i, true)).unwrap();
                    ac = update_ac(ac, h);
                    hs.push(h);
                }
                hs
            };
            let short = per_step(m1);
            let long = per_step(m2);
            for (a, b) in short.iter().zip(&long) {
                prop_assert!(a > b);
            }
        }

        #[test]
        fn odds_match_brute_force(outcomes in proptest::collection::vec(any::<bool>(), 1..40)) {
            let b = bundle(&outcomes);
            let mut wins = 0usize;
            for o in &outcomes {
                if *o { wins += 1; }
            }
            prop_assert_eq!(odds_of_success(&b).unwrap(), wins as f64 / outcomes.len() as f64);
        }

        #[test]
        fn efficiency_is_antisymmetric(a in 0.0f64..20.0, b in 0.0f64..20.0, l in 0.1f64..20.0) {
            let fwd = efficiency(a, b, l).unwrap();
            let rev = efficiency(b, a, l).unwrap();
            prop_assert!((fwd + rev).abs() < 1e-12);
        }
    }
}
