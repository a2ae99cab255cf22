//! Forward and backward state-class enumeration over the flat model.
//!
//! A state class pairs a location with a zone over its active timers. The
//! backward expansion starts from the target classes (each active timer
//! limited only by its upper support bound), repeatedly applies the
//! weakest-precondition step over incoming edges, and labels every class
//! with its transition distance ω to the target. The resulting index
//! answers the timed distance query `d(s) = min { ω(Σ) | s ∈ Σ }` that
//! powers the time-sensitive importance function.

use std::collections::HashMap;

use thiserror::Error;

use crate::dbm::{Bound, Dbm, TimerId};
use crate::model::{EdgeId, FlatModel, LocationId};
use crate::rational::Rat;

/// Default cap on the number of stored backward classes.
pub const DEFAULT_CLASS_CAP: usize = 100_000;

/// Tolerance for floating-point membership tests during simulation.
pub const MEMBERSHIP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateClass {
    pub location: LocationId,
    pub domain: Dbm,
    /// Backward classes: number of transitions to the target. Forward
    /// classes: expansion depth.
    pub omega: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScgError {
    #[error("model has no target location")]
    NoTargetLocation,
    #[error("class cap of {0} exceeded during backward expansion")]
    ClassCapExceeded(usize),
}

/// Box domain `[sc_lower, sc_upper]` over the initial timers, depth 0.
pub fn initial_class(model: &FlatModel) -> StateClass {
    let loc = model.location(model.initial);
    let domain = box_domain(model, &loc.active, true);
    StateClass {
        location: model.initial,
        domain,
        omega: 0,
    }
}

/// One class per target location: each active timer limited by its upper
/// support bound only (lower bounds do not apply because the timer need
/// not be newly activated there).
pub fn target_classes(model: &FlatModel) -> Result<Vec<StateClass>, ScgError> {
    let targets: Vec<LocationId> = model.target_locations().collect();
    if targets.is_empty() {
        return Err(ScgError::NoTargetLocation);
    }
    Ok(targets
        .into_iter()
        .map(|l| StateClass {
            location: l,
            domain: box_domain(model, &model.location(l).active, false),
            omega: 0,
        })
        .collect())
}

fn box_domain(model: &FlatModel, timers: &[TimerId], with_lower: bool) -> Dbm {
    let free = Dbm::unconstrained(timers).expect("active sets hold distinct timers");
    let mut constraints = Vec::new();
    for &t in timers {
        let dist = &model.timer(t).dist;
        constraints.push(Dbm::le(t, dist.sc_upper_bound()));
        if with_lower {
            constraints.push(Dbm::ge(t, dist.sc_lower_bound()));
        }
    }
    free.intersect(&constraints).expect("box constraints are well-formed")
}

/// Forward successor along an outgoing edge: condition on the edge timer
/// expiring first, advance time, then append the restarted timers with
/// their support boxes. `None` when the conditioning is infeasible.
pub fn successor(model: &FlatModel, sc: &StateClass, edge: EdgeId) -> Option<StateClass> {
    let e = model.edge(edge);
    assert_eq!(e.source, sc.location, "edge does not leave the class location");
    let conditioning: Vec<_> = sc
        .domain
        .timers()
        .iter()
        .filter(|t| **t != e.timer)
        .map(|t| (crate::dbm::Var::Timer(e.timer), crate::dbm::Var::Timer(*t), Bound::zero()))
        .collect();
    let conditioned = sc.domain.intersect(&conditioning).ok()?;
    if conditioned.is_empty() {
        return None;
    }
    let advanced = conditioned.advance(e.timer).ok()?;
    let additions: Vec<(TimerId, Rat, Bound)> = e
        .restarts
        .iter()
        .map(|&t| {
            let dist = &model.timer(t).dist;
            (t, dist.sc_lower_bound(), dist.sc_upper_bound())
        })
        .collect();
    let domain = advanced.append_boxed(&additions).ok()?;
    if domain.is_empty() {
        return None;
    }
    debug_assert_eq!(domain.timers(), model.location(e.target).active);
    Some(StateClass {
        location: e.target,
        domain,
        omega: sc.omega + 1,
    })
}

/// Weakest precondition of a class under one incoming edge: bound the
/// edge's restarted timers by their lower support bounds and eliminate
/// them, reintroduce the expired timer, and apply the upper support
/// bounds of all timers active in the source location. No conditioning
/// step is needed: non-negativity of the reintroduced timer differences
/// already forces it to expire first.
pub fn predecessor(model: &FlatModel, sc: &StateClass, edge: EdgeId) -> Option<StateClass> {
    let e = model.edge(edge);
    assert_eq!(e.target, sc.location, "edge does not enter the class location");
    debug_assert_eq!(sc.domain.timers(), model.location(sc.location).active);

    // inverse of newly activating
    let lower_bounds: Vec<_> = e
        .restarts
        .iter()
        .map(|&t| Dbm::ge(t, model.timer(t).dist.sc_lower_bound()))
        .collect();
    let mut domain = sc.domain.intersect(&lower_bounds).ok()?;
    if domain.is_empty() {
        return None;
    }
    for &t in &e.restarts {
        domain = domain.project_out(t).ok()?;
    }

    // inverse of time advancement
    domain = domain.unshift(e.timer).ok()?;
    if domain.is_empty() {
        return None;
    }

    // applying upper bounds of timers
    let source_active = &model.location(e.source).active;
    let upper_bounds: Vec<_> = source_active
        .iter()
        .map(|&t| Dbm::le(t, model.timer(t).dist.sc_upper_bound()))
        .collect();
    let domain = domain.intersect(&upper_bounds).ok()?;
    if domain.is_empty() {
        return None;
    }
    debug_assert_eq!(domain.timers(), source_active.as_slice());
    Some(StateClass {
        location: e.source,
        domain,
        omega: sc.omega + 1,
    })
}

/// Options for [`backward_expand`].
#[derive(Debug, Clone)]
pub struct ExpandOptions {
    pub class_cap: usize,
}

impl Default for ExpandOptions {
    fn default() -> ExpandOptions {
        ExpandOptions {
            class_cap: DEFAULT_CLASS_CAP,
        }
    }
}

#[derive(Debug)]
struct StoredClass {
    location: LocationId,
    omega: u32,
    domain: Dbm,
    /// f64 mirror of the domain coefficients for fast membership.
    float_coeffs: Vec<f64>,
    dim: usize,
}

/// Distance-labeled backward class index, one class list per location
/// sorted by ω ascending.
#[derive(Debug)]
pub struct ScIndex {
    classes: Vec<StoredClass>,
    per_location: Vec<Vec<u32>>,
    /// (predecessor class, successor class, edge) links, for export.
    links: Vec<(u32, u32, EdgeId)>,
    pub depth: u32,
    pub d_cap: u32,
}

/// Backward BFS from the target classes up to depth `k`, with subsumption
/// and zero-probability pruning.
pub fn backward_expand(
    model: &FlatModel,
    depth: u32,
    opts: &ExpandOptions,
) -> Result<ScIndex, ScgError> {
    let mut index = ScIndex {
        classes: Vec::new(),
        per_location: vec![Vec::new(); model.locations.len()],
        links: Vec::new(),
        depth,
        d_cap: depth + 1,
    };
    // exact-duplicate lookup; BFS order guarantees the stored copy has
    // minimal omega
    let mut seen: HashMap<(LocationId, Dbm), u32> = HashMap::new();

    let push = |sc: StateClass,
                    parent: Option<(u32, EdgeId)>,
                    index: &mut ScIndex,
                    seen: &mut HashMap<(LocationId, Dbm), u32>|
     -> Result<(), ScgError> {
        debug_assert!(!sc.domain.is_empty() && sc.domain.is_canonical());
        if seen.contains_key(&(sc.location, sc.domain.clone())) {
            return Ok(());
        }
        // subsumption: an existing class of the same location with lower
        // or equal omega that contains the candidate makes it redundant
        for &ci in &index.per_location[sc.location.0 as usize] {
            let existing = &index.classes[ci as usize];
            if existing.domain.includes(&sc.domain).unwrap_or(false) {
                return Ok(());
            }
        }
        // zero-probability pruning: a timer with non-singleton support
        // pinned to a single value cannot be hit by sampling
        for &t in sc.domain.timers() {
            let dist = &model.timer(t).dist;
            let nonsingleton = match dist.sc_upper_bound() {
                Bound::Finite(ub) => ub > dist.sc_lower_bound(),
                Bound::Infinity => true,
            };
            if nonsingleton && sc.domain.is_point_constrained(t).unwrap_or(false) {
                return Ok(());
            }
        }
        let id = index.classes.len() as u32;
        if index.classes.len() >= opts.class_cap {
            return Err(ScgError::ClassCapExceeded(opts.class_cap));
        }
        seen.insert((sc.location, sc.domain.clone()), sc.omega);
        index.per_location[sc.location.0 as usize].push(id);
        if let Some((parent_id, edge)) = parent {
            index.links.push((id, parent_id, edge));
        }
        index.classes.push(StoredClass {
            location: sc.location,
            omega: sc.omega,
            float_coeffs: sc.domain.to_f64_coeffs(),
            dim: sc.domain.timers().len() + 1,
            domain: sc.domain,
        });
        Ok(())
    };

    for sc in target_classes(model)? {
        push(sc, None, &mut index, &mut seen)?;
    }
    let mut next = 0usize;
    while next < index.classes.len() {
        let id = next as u32;
        next += 1;
        let (location, omega) = {
            let c = &index.classes[id as usize];
            (c.location, c.omega)
        };
        if omega >= depth {
            continue;
        }
        let current = StateClass {
            location,
            domain: index.classes[id as usize].domain.clone(),
            omega,
        };
        for &e in model.incoming(location) {
            if let Some(pred) = predecessor(model, &current, e) {
                push(pred, Some((id, e)), &mut index, &mut seen)?;
            }
        }
    }
    Ok(index)
}

impl ScIndex {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> impl Iterator<Item = StateClass> + '_ {
        self.classes.iter().map(|c| StateClass {
            location: c.location,
            domain: c.domain.clone(),
            omega: c.omega,
        })
    }

    pub fn classes_at(&self, loc: LocationId) -> impl Iterator<Item = StateClass> + '_ {
        self.per_location[loc.0 as usize].iter().map(|&i| {
            let c = &self.classes[i as usize];
            StateClass {
                location: c.location,
                domain: c.domain.clone(),
                omega: c.omega,
            }
        })
    }

    /// Number of classes per location, as (location, omega, count) rows.
    pub fn class_histogram(&self) -> Vec<(LocationId, u32, usize)> {
        let mut rows = Vec::new();
        for (li, ids) in self.per_location.iter().enumerate() {
            let mut counts: HashMap<u32, usize> = HashMap::new();
            for &i in ids {
                *counts.entry(self.classes[i as usize].omega).or_insert(0) += 1;
            }
            let mut omegas: Vec<u32> = counts.keys().copied().collect();
            omegas.sort_unstable();
            for o in omegas {
                rows.push((LocationId(li as u32), o, counts[&o]));
            }
        }
        rows
    }

    /// Minimum ω over the location's classes containing the valuation,
    /// or `d_cap` when no class matches. `tau` is aligned with the
    /// location's sorted active timer set.
    pub fn timed_distance(&self, location: LocationId, tau: &[f64]) -> u32 {
        for &i in &self.per_location[location.0 as usize] {
            let c = &self.classes[i as usize];
            if float_contains(&c.float_coeffs, c.dim, tau) {
                return c.omega;
            }
        }
        self.d_cap
    }

    pub fn to_json(&self, model: &FlatModel) -> serde_json::Value {
        let name_of = |t: TimerId| model.timer(t).name.clone();
        let classes: Vec<_> = self
            .classes
            .iter()
            .enumerate()
            .map(|(i, c)| {
                serde_json::json!({
                    "id": i,
                    "location": c.location.0,
                    "omega": c.omega,
                    "domain": c.domain.to_json(&name_of),
                })
            })
            .collect();
        let links: Vec<_> = self
            .links
            .iter()
            .map(|(from, to, e)| {
                serde_json::json!({
                    "from": from,
                    "to": to,
                    "timer": model.timer(model.edge(*e).timer).name.clone(),
                })
            })
            .collect();
        serde_json::json!({
            "depth": self.depth,
            "d_cap": self.d_cap,
            "classes": classes,
            "links": links,
        })
    }

    /// Backward class graph in DOT format: nodes show location and ω,
    /// arrows follow the direction of system transitions.
    pub fn to_dot(&self, model: &FlatModel) -> String {
        let mut out = String::from("digraph scg {\n");
        for (i, c) in self.classes.iter().enumerate() {
            let shape = if c.omega == 0 { "doublecircle" } else { "ellipse" };
            out.push_str(&format!(
                "  c{} [shape={},label=\"l{} w={}\"];\n",
                i, shape, c.location.0, c.omega
            ));
        }
        for (from, to, e) in &self.links {
            out.push_str(&format!(
                "  c{} -> c{} [label=\"{}\"];\n",
                from,
                to,
                model.timer(model.edge(*e).timer).name
            ));
        }
        out.push_str("}\n");
        out
    }
}

fn float_contains(coeffs: &[f64], dim: usize, tau: &[f64]) -> bool {
    debug_assert_eq!(tau.len() + 1, dim);
    for i in 0..dim {
        let vi = if i == 0 { 0.0 } else { tau[i - 1] };
        for j in 0..dim {
            let b = coeffs[i * dim + j];
            if b.is_finite() {
                let vj = if j == 0 { 0.0 } else { tau[j - 1] };
                if vi - vj > b + MEMBERSHIP_TOLERANCE {
                    return false;
                }
            }
        }
    }
    true
}
