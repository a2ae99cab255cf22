//! Importance functions over simulation states.
//!
//! Both kinds turn a distance-to-target metric into integer importance
//! levels `f = max_distance − d`. The time-agnostic kind measures graph
//! distance between locations and ignores timer values; the
//! time-sensitive kind asks the backward class index for the timed
//! distance of the concrete state.

use crate::model::{FlatModel, LocationId};
use crate::scg::{backward_expand, ExpandOptions, ScIndex, ScgError};

pub enum ImportanceFn {
    Agnostic {
        /// Graph distance to the nearest target per location;
        /// unreachable locations hold `d_max + 1`.
        distances: Vec<u32>,
        d_max: u32,
    },
    TimeSensitive {
        index: ScIndex,
    },
}

/// Reverse BFS on the location graph; importance is constant per
/// location.
pub fn build_agnostic(model: &FlatModel) -> Result<ImportanceFn, ScgError> {
    let n = model.locations.len();
    let mut distances = vec![u32::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    for t in model.target_locations() {
        distances[t.0 as usize] = 0;
        queue.push_back(t);
    }
    if queue.is_empty() {
        return Err(ScgError::NoTargetLocation);
    }
    while let Some(l) = queue.pop_front() {
        let d = distances[l.0 as usize];
        for &e in model.incoming(l) {
            let src = model.edge(e).source;
            if distances[src.0 as usize] == u32::MAX {
                distances[src.0 as usize] = d + 1;
                queue.push_back(src);
            }
        }
    }
    let d_max = distances
        .iter()
        .filter(|d| **d != u32::MAX)
        .copied()
        .max()
        .unwrap_or(0);
    for d in &mut distances {
        if *d == u32::MAX {
            *d = d_max + 1;
        }
    }
    Ok(ImportanceFn::Agnostic { distances, d_max })
}

/// Wraps the backward class expansion at depth `k`; states in no class
/// get importance 0.
pub fn build_time_sensitive(
    model: &FlatModel,
    depth: u32,
    opts: &ExpandOptions,
) -> Result<ImportanceFn, ScgError> {
    let index = backward_expand(model, depth, opts)?;
    Ok(ImportanceFn::TimeSensitive { index })
}

impl ImportanceFn {
    /// Highest importance level; every target state maps to it.
    pub fn max_importance(&self) -> u32 {
        match self {
            ImportanceFn::Agnostic { d_max, .. } => *d_max,
            ImportanceFn::TimeSensitive { index } => index.d_cap,
        }
    }

    /// Importance of a state given its location and active-timer values
    /// (aligned with the location's sorted timer set).
    pub fn importance(&self, location: LocationId, tau: &[f64]) -> u32 {
        match self {
            ImportanceFn::Agnostic { distances, d_max } => {
                d_max.saturating_sub(distances[location.0 as usize])
            }
            ImportanceFn::TimeSensitive { index } => {
                index.d_cap - index.timed_distance(location, tau)
            }
        }
    }

    pub fn index(&self) -> Option<&ScIndex> {
        match self {
            ImportanceFn::TimeSensitive { index } => Some(index),
            ImportanceFn::Agnostic { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kepler;
    use crate::model::{
        CmpOp, Component, Distribution, FlattenOptions, Network, TargetAtom, TimedTransition,
        TimerDecl, Update, UpdateExpr, VarDef,
    };
    use crate::rational::rat_int;

    const TOY: &str = r#"
toplevel "TLE";
"TLE" pand "UPS" "AC";
"UPS" fail~uniform(9.8,12) repair~uniform(0,0.1);
"AC"  fail~uniform(0.1,20) repair~uniform(0,0.1);
"RBOX" rbox fcfs "UPS" "AC";
"#;

    fn toy_model() -> FlatModel {
        let net = kepler::compile(&kepler::parse(TOY).unwrap(), 1e-5);
        net.flatten(&FlattenOptions::default()).unwrap()
    }

    #[test]
    fn agnostic_distances_on_toy_graph() {
        let m = toy_model();
        let f = build_agnostic(&m).unwrap();
        let ImportanceFn::Agnostic { distances, d_max } = &f else {
            panic!()
        };
        let target = m.target_locations().next().unwrap();
        assert_eq!(distances[target.0 as usize], 0);
        // repairing location is one step before the target
        let repairing = m.edge(m.incoming(target)[0]).source;
        assert_eq!(distances[repairing.0 as usize], 1);
        assert_eq!(distances[m.initial.0 as usize], 2);
        assert_eq!(*d_max, 3);
        assert_eq!(f.importance(target, &[0.0]), f.max_importance());
        assert_eq!(f.importance(m.initial, &[10.0, 10.0]), d_max - 2);
    }

    #[test]
    fn agnostic_ignores_timer_values() {
        let m = toy_model();
        let f = build_agnostic(&m).unwrap();
        for loc in &m.locations {
            let n = loc.active.len();
            let a: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let b: Vec<f64> = (0..n).map(|i| 7.5 * (i + 1) as f64).collect();
            assert_eq!(f.importance(loc.id, &a), f.importance(loc.id, &b));
        }
    }

    #[test]
    fn everything_target_gives_constant_zero_max() {
        // one ticking component whose target predicate always holds
        let net = Network {
            components: vec![Component {
                name: "tick".into(),
                vars: vec![VarDef { name: "x".into(), lo: 0, hi: 0, init: 0 }],
                timers: vec![TimerDecl {
                    name: "t".into(),
                    dist: Distribution::uniform(rat_int(1), rat_int(2)),
                }],
                initial_restarts: vec![0],
                timed: vec![TimedTransition {
                    guard: vec![],
                    timer: 0,
                    action: "tock".into(),
                    updates: vec![Update { var: 0, expr: UpdateExpr::Const(0) }],
                    restarts: vec![0],
                }],
                urgent_outputs: vec![],
                urgent_inputs: vec![],
            }],
            target: vec![TargetAtom { component: 0, var: 0, op: CmpOp::Ge, value: 0 }],
        };
        let m = net.flatten(&FlattenOptions::default()).unwrap();
        let f = build_agnostic(&m).unwrap();
        assert_eq!(f.max_importance(), 0);
        assert_eq!(f.importance(m.initial, &[1.0]), 0);
        let Some(atom) = net.target.first() else { panic!() };
        assert_eq!(atom.op, CmpOp::Ge);
    }

    #[test]
    fn time_sensitive_separates_initial_states() {
        let m = toy_model();
        let f = build_time_sensitive(&m, 5, &ExpandOptions::default()).unwrap();
        assert_eq!(f.max_importance(), 6);
        // member of the depth-4 backward class: two importance levels up
        assert_eq!(f.importance(m.initial, &[1.0, 11.0]), 2);
        // freshly sampled far-from-window state
        assert_eq!(f.importance(m.initial, &[11.0, 19.0]), 0);
        // the agnostic function cannot tell them apart
        let g = build_agnostic(&m).unwrap();
        assert_eq!(
            g.importance(m.initial, &[1.0, 11.0]),
            g.importance(m.initial, &[11.0, 19.0])
        );
    }

    #[test]
    fn depth_zero_time_sensitive_flags_targets_only() {
        let m = toy_model();
        let f = build_time_sensitive(&m, 0, &ExpandOptions::default()).unwrap();
        assert_eq!(f.max_importance(), 1);
        let target = m.target_locations().next().unwrap();
        assert_eq!(f.importance(target, &[0.05]), 1);
        assert_eq!(f.importance(m.initial, &[10.0, 10.0]), 0);
    }

    #[test]
    fn importance_grows_with_depth() {
        let m = toy_model();
        let f3 = build_time_sensitive(&m, 3, &ExpandOptions::default()).unwrap();
        let f5 = build_time_sensitive(&m, 5, &ExpandOptions::default()).unwrap();
        let mut rng_states = vec![
            (m.initial, vec![1.0, 11.0]),
            (m.initial, vec![10.0, 15.0]),
            (m.initial, vec![11.9, 0.2]),
        ];
        let target = m.target_locations().next().unwrap();
        rng_states.push((target, vec![0.05]));
        for (loc, tau) in rng_states {
            assert!(f3.importance(loc, &tau) <= f5.importance(loc, &tau));
        }
    }

    #[test]
    fn level_bounds_hold() {
        let m = toy_model();
        for f in [
            build_agnostic(&m).unwrap(),
            build_time_sensitive(&m, 4, &ExpandOptions::default()).unwrap(),
        ] {
            let target = m.target_locations().next().unwrap();
            assert_eq!(f.importance(target, &[0.03]), f.max_importance());
            for loc in &m.locations {
                let tau: Vec<f64> = loc.active.iter().map(|_| 3.0).collect();
                assert!(f.importance(loc.id, &tau) <= f.max_importance());
            }
        }
    }
}
