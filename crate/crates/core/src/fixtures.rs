//! Bundled task environments, embedded at compile time.
//!
//! | file | shape |
//! |------|-------|
//! | `a_linear_timer` | three required steps with one wrong option at each |
//! | `b_branching_calendar` | two of three continuations from the day menu succeed |
//! | `c_shortcut_search` | a widget shortcut skips two browser steps |
//! | `d_decoy_wifi` | harmless decoys tagged as irrelevant |
//! | `e_coherence_notes` | declared predecessor chains for coherence |
//! | `f_trap_messages` | task-relevant dead ends |
//! | `g_web_shop` | size selection before checkout |
//! | `h_desktop_rename` | GUI route and a shorter terminal route |

use crate::taskenv::{EnvError, TaskGraph};

pub const FIXTURE_FILES: [(&str, &str); 8] = [
    ("a_linear_timer", include_str!("../fixtures/envs/a_linear_timer.json")),
    ("b_branching_calendar", include_str!("../fixtures/envs/b_branching_calendar.json")),
    ("c_shortcut_search", include_str!("../fixtures/envs/c_shortcut_search.json")),
    ("d_decoy_wifi", include_str!("../fixtures/envs/d_decoy_wifi.json")),
    ("e_coherence_notes", include_str!("../fixtures/envs/e_coherence_notes.json")),
    ("f_trap_messages", include_str!("../fixtures/envs/f_trap_messages.json")),
    ("g_web_shop", include_str!("../fixtures/envs/g_web_shop.json")),
    ("h_desktop_rename", include_str!("../fixtures/envs/h_desktop_rename.json")),
];

fn parse(stem: &str, raw: &str) -> Result<TaskGraph, EnvError> {
    TaskGraph::from_json_str(raw, stem, &format!("{stem}.json"))
}

/// All bundled environments in file order.
pub fn suite() -> Vec<TaskGraph> {
    FIXTURE_FILES
        .iter()
        .map(|(stem, raw)| parse(stem, raw).expect("bundled fixture is valid"))
        .collect()
}

/// Looks up a bundled environment by file stem (`"a_linear_timer"`) or by id
/// (`"linear_timer"`).
pub fn by_name(name: &str) -> Option<TaskGraph> {
    FIXTURE_FILES.iter().find_map(|(stem, raw)| {
        let env = parse(stem, raw).ok()?;
        (*stem == name || env.id() == name).then_some(env)
    })
}

pub fn linear() -> TaskGraph {
    by_name("linear_timer").expect("fixture a")
}

pub fn branching() -> TaskGraph {
    by_name("branching_calendar").expect("fixture b")
}

pub fn shortcut() -> TaskGraph {
    by_name("shortcut_search").expect("fixture c")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskenv::Remaining;

    #[test]
    fn every_fixture_is_solvable_within_horizon() {
        let envs = suite();
        assert_eq!(envs.len(), 8);
        for env in &envs {
            let m = env.min_steps(env.initial()).unwrap().steps().unwrap();
            assert!(m >= 2 && m <= env.horizon(), "{}", env.id());
        }
    }

    #[test]
    fn linear_fixture_needs_three_steps() {
        let env = linear();
        assert_eq!(env.min_steps(env.initial()).unwrap(), Remaining::Steps(3));
    }

    #[test]
    fn branching_fixture_has_two_of_three_good_continuations() {
        let env = branching();
        let day = env.state_index("day_menu").unwrap();
        let good = env
            .actions(day)
            .iter()
            .filter(|t| env.min_steps(t.to).unwrap() != Remaining::Unreachable)
            .count();
        assert_eq!((good, env.actions(day).len()), (2, 3));
    }

    #[test]
    fn optimal_step_decreases_min_steps_by_one() {
        for env in suite() {
            for s in 0..env.num_states() {
                if let Remaining::Steps(d) = env.min_steps(s).unwrap() {
                    for t in env.optimal_actions(s) {
                        assert_eq!(env.min_steps(t.to).unwrap(), Remaining::Steps(d - 1));
                    }
                    if d > 0 {
                        assert!(!env.optimal_actions(s).is_empty());
                    }
                }
            }
        }
    }
}
