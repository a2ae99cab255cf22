//! Seeded discrete-event simulation over the flat model.
//!
//! A state is a location plus the remaining times of its active timers
//! and the global age. The minimum remaining timer fires the next edge;
//! restarted timers are sampled fresh. Runs are reproducible: every run
//! index owns an independent counter-based RNG stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dbm::TimerId;
use crate::importance::ImportanceFn;
use crate::model::{FlatModel, LocationId};

/// Hard cap on timer expirations within a single run.
pub const DEFAULT_STEP_CAP: u64 = 10_000_000;

pub type RunRng = ChaCha8Rng;

/// Independent RNG stream for one run/replication index under one seed.
pub fn stream_rng(seed: u64, stream: u64) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub location: LocationId,
    /// Remaining times, aligned with the location's sorted active set.
    pub tau: Vec<f64>,
    /// Global elapsed time.
    pub age: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub hit_target: bool,
    pub final_state: SimState,
    /// First state seen at each importance level, strictly increasing.
    pub crossings: Vec<(u32, SimState)>,
    pub steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    /// Stop only on target, time bound or deadlock.
    AtTarget,
    /// Additionally stop once importance reaches the level.
    AtLevel(u32),
    /// Run to the time bound (targets still terminate the run).
    AtEnd,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("run exceeded {0} steps (livelock?)")]
    Livelock(u64),
}

/// Samples all initial timers independently; age 0.
pub fn sample_initial(model: &FlatModel, rng: &mut RunRng) -> SimState {
    let loc = model.location(model.initial);
    let tau = loc
        .active
        .iter()
        .map(|&t| model.timer(t).dist.sample(rng))
        .collect();
    SimState {
        location: model.initial,
        tau,
        age: 0.0,
    }
}

/// Fires the minimum remaining timer (ties resolved toward the smaller
/// timer id). `None` when no timer is active (deadlock).
pub fn step(model: &FlatModel, state: &SimState, rng: &mut RunRng) -> Option<(SimState, TimerId)> {
    let loc = model.location(state.location);
    if loc.active.is_empty() {
        return None;
    }
    let mut fired_pos = 0;
    for i in 1..state.tau.len() {
        if state.tau[i] < state.tau[fired_pos] {
            fired_pos = i;
        }
    }
    let fired = loc.active[fired_pos];
    let dt = state.tau[fired_pos];
    let edge = model.edge(model.edge_for(state.location, fired).expect("edge per active timer"));
    let dst = model.location(edge.target);
    let mut tau = Vec::with_capacity(dst.active.len());
    for &t in &dst.active {
        if edge.restarts.contains(&t) {
            tau.push(model.timer(t).dist.sample(rng));
        } else {
            let pos = loc.active.binary_search(&t).expect("surviving timer");
            tau.push((state.tau[pos] - dt).max(0.0));
        }
    }
    Some((
        SimState {
            location: edge.target,
            tau,
            age: state.age + dt,
        },
        fired,
    ))
}

/// Drives a trajectory from `start` until the target is hit, the next
/// event would exceed the time bound (a miss), the stop level is
/// reached, or the model deadlocks. Records the first state at each
/// importance level on the way.
pub fn run(
    model: &FlatModel,
    imp: &ImportanceFn,
    start: SimState,
    time_bound: f64,
    stop: StopRule,
    step_cap: u64,
    rng: &mut RunRng,
) -> Result<RunOutcome, SimError> {
    let mut state = start;
    let mut crossings: Vec<(u32, SimState)> = Vec::new();
    let mut level = imp.importance(state.location, &state.tau);
    for l in 1..=level {
        crossings.push((l, state.clone()));
    }
    let mut steps = 0u64;
    loop {
        if model.location(state.location).is_target {
            // a target hit counts as reaching every remaining level
            for l in level + 1..=imp.max_importance() {
                crossings.push((l, state.clone()));
            }
            return Ok(RunOutcome {
                hit_target: true,
                final_state: state,
                crossings,
                steps,
            });
        }
        if let StopRule::AtLevel(l) = stop {
            if level >= l {
                break;
            }
        }
        let loc = model.location(state.location);
        if loc.active.is_empty() {
            break; // deadlock: terminal miss
        }
        let next_dt = state.tau.iter().cloned().fold(f64::INFINITY, f64::min);
        if state.age + next_dt > time_bound {
            break; // truncated by the time bound
        }
        let (next, _) = step(model, &state, rng).expect("non-empty active set");
        state = next;
        steps += 1;
        if steps > step_cap {
            return Err(SimError::Livelock(step_cap));
        }
        let f = imp.importance(state.location, &state.tau);
        for l in level + 1..=f {
            crossings.push((l, state.clone()));
        }
        level = level.max(f);
    }
    Ok(RunOutcome {
        hit_target: false,
        final_state: state,
        crossings,
        steps,
    })
}

#[cfg(test)]
pub(crate) mod test_support {
    use crate::model::{
        Atom, CmpOp, Component, Distribution, Network, TargetAtom, TimedTransition, TimerDecl,
        Update, UpdateExpr, VarDef,
    };

    /// Two-timer race in a single component; the target holds iff timer A
    /// fired strictly first.
    pub fn race_network(a: Distribution, b: Distribution) -> Network {
        let a_done = 0usize;
        let b_done = 1usize;
        let winner = 2usize;
        let comp = Component {
            name: "race".into(),
            vars: vec![
                VarDef { name: "a_done".into(), lo: 0, hi: 1, init: 0 },
                VarDef { name: "b_done".into(), lo: 0, hi: 1, init: 0 },
                VarDef { name: "winner".into(), lo: 0, hi: 2, init: 0 },
            ],
            timers: vec![
                TimerDecl { name: "a".into(), dist: a },
                TimerDecl { name: "b".into(), dist: b },
            ],
            initial_restarts: vec![0, 1],
            timed: vec![
                TimedTransition {
                    guard: vec![
                        Atom { var: a_done, op: CmpOp::Eq, value: 0 },
                        Atom { var: b_done, op: CmpOp::Eq, value: 0 },
                    ],
                    timer: 0,
                    action: "a_first".into(),
                    updates: vec![
                        Update { var: a_done, expr: UpdateExpr::Const(1) },
                        Update { var: winner, expr: UpdateExpr::Const(1) },
                    ],
                    restarts: vec![],
                },
                TimedTransition {
                    guard: vec![Atom { var: b_done, op: CmpOp::Eq, value: 1 }],
                    timer: 0,
                    action: "a_second".into(),
                    updates: vec![Update { var: a_done, expr: UpdateExpr::Const(1) }],
                    restarts: vec![],
                },
                TimedTransition {
                    guard: vec![
                        Atom { var: a_done, op: CmpOp::Eq, value: 0 },
                        Atom { var: b_done, op: CmpOp::Eq, value: 0 },
                    ],
                    timer: 1,
                    action: "b_first".into(),
                    updates: vec![
                        Update { var: b_done, expr: UpdateExpr::Const(1) },
                        Update { var: winner, expr: UpdateExpr::Const(2) },
                    ],
                    restarts: vec![],
                },
                TimedTransition {
                    guard: vec![Atom { var: a_done, op: CmpOp::Eq, value: 1 }],
                    timer: 1,
                    action: "b_second".into(),
                    updates: vec![Update { var: b_done, expr: UpdateExpr::Const(1) }],
                    restarts: vec![],
                },
            ],
            urgent_outputs: vec![],
            urgent_inputs: vec![],
        };
        Network {
            components: vec![comp],
            target: vec![TargetAtom { component: 0, var: winner, op: CmpOp::Eq, value: 1 }],
        }
    }
}
