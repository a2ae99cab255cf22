//! Component networks with stochastic decreasing timers and urgent
//! actions, and their flattening to a finite graph of stable locations
//! connected by timer-expiration edges.
//!
//! A component owns finite-range discrete variables and timers. Timed
//! output transitions fire when their timer expires; urgent outputs fire
//! instantly under maximal progress and are broadcast to the urgent input
//! handlers of the other components. A closed network (every input
//! matched by some output) is fully stochastic, so flattening just
//! explores the stable discrete states.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;

use thiserror::Error;

use crate::dbm::{Bound, TimerId};
use crate::rational::{rat_from_f64_ceil, rat_to_f64, Rat};

/// Maximum urgent actions fired while stabilizing one state.
pub const DEFAULT_CLOSURE_LIMIT: usize = 10_000;
/// Maximum stable locations explored by [`Network::flatten`].
pub const DEFAULT_LOCATION_CAP: usize = 1_000_000;
/// Default clip quantile for distributions with unbounded support.
pub const DEFAULT_CLIP_QUANTILE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub enum DistKind {
    Uniform { a: Rat, b: Rat },
    Exponential { rate: Rat },
}

/// Sampling distribution of a timer. The clip quantile only affects the
/// finite support band used by state-class analysis; simulation always
/// samples the true distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub kind: DistKind,
    pub clip_quantile: f64,
}

impl Distribution {
    pub fn uniform(a: Rat, b: Rat) -> Distribution {
        Distribution {
            kind: DistKind::Uniform { a, b },
            clip_quantile: DEFAULT_CLIP_QUANTILE,
        }
    }

    pub fn exponential(rate: Rat) -> Distribution {
        Distribution {
            kind: DistKind::Exponential { rate },
            clip_quantile: DEFAULT_CLIP_QUANTILE,
        }
    }

    pub fn with_clip(mut self, q: f64) -> Distribution {
        self.clip_quantile = q;
        self
    }

    /// Lower end of the support band used in state-class analysis.
    pub fn sc_lower_bound(&self) -> Rat {
        match &self.kind {
            DistKind::Uniform { a, .. } => a.clone(),
            DistKind::Exponential { .. } => Rat::from_integer(0.into()),
        }
    }

    /// Upper end of the support band. For the exponential this is the
    /// `1 − q` quantile `−ln(q)/rate`, rounded up to an exact rational.
    pub fn sc_upper_bound(&self) -> Bound {
        match &self.kind {
            DistKind::Uniform { b, .. } => Bound::Finite(b.clone()),
            DistKind::Exponential { rate } => {
                let r = rat_to_f64(rate);
                Bound::Finite(rat_from_f64_ceil(-self.clip_quantile.ln() / r))
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            DistKind::Uniform { a, b } => {
                let (a, b) = (rat_to_f64(a), rat_to_f64(b));
                a + rng.random::<f64>() * (b - a)
            }
            DistKind::Exponential { rate } => {
                let u: f64 = rng.random();
                -(1.0 - u).ln() / rat_to_f64(rate)
            }
        }
    }

    fn check(&self, what: &str, out: &mut Vec<Diagnostic>) {
        match &self.kind {
            DistKind::Uniform { a, b } => {
                if a >= b {
                    out.push(Diagnostic::error(format!(
                        "{what}: Dirac not allowed (uniform requires a < b)"
                    )));
                } else if a < &Rat::from_integer(0.into()) {
                    out.push(Diagnostic::error(format!("{what}: negative support")));
                }
            }
            DistKind::Exponential { rate } => {
                if rate <= &Rat::from_integer(0.into()) {
                    out.push(Diagnostic::error(format!(
                        "{what}: exponential rate must be positive"
                    )));
                }
            }
        }
        if !(self.clip_quantile > 0.0 && self.clip_quantile < 1.0) {
            out.push(Diagnostic::error(format!(
                "{what}: clip quantile must be in (0,1)"
            )));
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            DistKind::Uniform { a, b } => write!(
                f,
                "uniform({},{})",
                crate::rational::format_rat(a),
                crate::rational::format_rat(b)
            ),
            DistKind::Exponential { rate } => {
                write!(f, "exponential({})", crate::rational::format_rat(rate))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Le,
    Ge,
    Lt,
    Gt,
}

impl CmpOp {
    fn holds(self, lhs: i64, rhs: i64) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Gt => lhs > rhs,
        }
    }
}

/// One comparison of a component-local variable against a constant.
#[derive(Debug, Clone)]
pub struct Atom {
    pub var: usize,
    pub op: CmpOp,
    pub value: i64,
}

/// Conjunction of atoms; empty means `true`.
pub type Guard = Vec<Atom>;

/// Right-hand side of an assignment: a constant or a copy of another
/// component-local variable (evaluated against the pre-update state).
#[derive(Debug, Clone)]
pub enum UpdateExpr {
    Const(i64),
    Var(usize),
}

#[derive(Debug, Clone)]
pub struct Update {
    pub var: usize,
    pub expr: UpdateExpr,
}

#[derive(Debug, Clone)]
pub struct VarDef {
    pub name: String,
    pub lo: i64,
    pub hi: i64,
    pub init: i64,
}

#[derive(Debug, Clone)]
pub struct TimerDecl {
    pub name: String,
    pub dist: Distribution,
}

/// Fires when its timer expires (component-local timer index).
#[derive(Debug, Clone)]
pub struct TimedTransition {
    pub guard: Guard,
    pub timer: usize,
    pub action: String,
    pub updates: Vec<Update>,
    pub restarts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct UrgentOutput {
    pub guard: Guard,
    pub action: String,
    pub updates: Vec<Update>,
}

#[derive(Debug, Clone)]
pub struct UrgentInput {
    pub action: String,
    pub guard: Guard,
    pub updates: Vec<Update>,
    pub restarts: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Component {
    pub name: String,
    pub vars: Vec<VarDef>,
    pub timers: Vec<TimerDecl>,
    /// Timers sampled when the system starts.
    pub initial_restarts: Vec<usize>,
    pub timed: Vec<TimedTransition>,
    pub urgent_outputs: Vec<UrgentOutput>,
    pub urgent_inputs: Vec<UrgentInput>,
}

/// One conjunct of the target predicate, on a global (component, var)
/// coordinate.
#[derive(Debug, Clone)]
pub struct TargetAtom {
    pub component: usize,
    pub var: usize,
    pub op: CmpOp,
    pub value: i64,
}

#[derive(Debug, Clone, Default)]
pub struct Network {
    pub components: Vec<Component>,
    pub target: Vec<TargetAtom>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(message: String) -> Diagnostic {
        Diagnostic {
            severity: Severity::Error,
            message,
        }
    }

    fn warning(message: String) -> Diagnostic {
        Diagnostic {
            severity: Severity::Warning,
            message,
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.severity {
            Severity::Error => write!(f, "error: {}", self.message),
            Severity::Warning => write!(f, "warning: {}", self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model:\n{}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
    #[error("urgent closure exceeded {0} steps (diverging urgency)")]
    Divergence(usize),
    #[error("non-confluent urgency detected: {0}")]
    NonConfluence(String),
    #[error("state-space cap of {0} locations exceeded")]
    LocationCapExceeded(usize),
    #[error("timer {0} expired with no enabled transition")]
    NoEnabledTransition(String),
    #[error("timer {0} expired with several enabled transitions")]
    AmbiguousTransition(String),
    #[error("timer {0} restarted while still active (deactivation is unsupported)")]
    RestartConflict(String),
    #[error("location revisited with a different active timer set: {0}")]
    ActiveSetMismatch(String),
}

/// Options for [`Network::flatten`].
#[derive(Debug, Clone)]
pub struct FlattenOptions {
    pub closure_limit: usize,
    pub location_cap: usize,
    /// Check that simultaneously enabled urgent outputs commute.
    pub confluence_check: bool,
}

impl Default for FlattenOptions {
    fn default() -> FlattenOptions {
        FlattenOptions {
            closure_limit: DEFAULT_CLOSURE_LIMIT,
            location_cap: DEFAULT_LOCATION_CAP,
            confluence_check: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocationId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EdgeId(pub u32);

#[derive(Debug, Clone)]
pub struct Location {
    pub id: LocationId,
    pub vars: Vec<i64>,
    /// Active timer set, sorted. Unique per location.
    pub active: Vec<TimerId>,
    pub is_target: bool,
    /// Outgoing edges, parallel to `active`.
    pub out_edges: Vec<EdgeId>,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub id: EdgeId,
    pub source: LocationId,
    pub timer: TimerId,
    /// Timers freshly sampled when taking this edge, sorted.
    pub restarts: Vec<TimerId>,
    pub target: LocationId,
}

#[derive(Debug, Clone)]
pub struct TimerInfo {
    pub name: String,
    pub dist: Distribution,
}

/// Finite closed stochastic timed transition system: stable locations,
/// timer-expiration edges, and a target predicate evaluated per location.
#[derive(Debug, Clone)]
pub struct FlatModel {
    pub locations: Vec<Location>,
    pub edges: Vec<Edge>,
    pub timers: Vec<TimerInfo>,
    pub initial: LocationId,
    pub var_names: Vec<String>,
    in_edges: Vec<Vec<EdgeId>>,
}

impl FlatModel {
    pub fn location(&self, id: LocationId) -> &Location {
        &self.locations[id.0 as usize]
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id.0 as usize]
    }

    pub fn timer(&self, id: TimerId) -> &TimerInfo {
        &self.timers[id.0 as usize]
    }

    /// The unique edge fired when `t` expires in `loc`.
    pub fn edge_for(&self, loc: LocationId, t: TimerId) -> Option<EdgeId> {
        let l = self.location(loc);
        l.active.binary_search(&t).ok().map(|p| l.out_edges[p])
    }

    pub fn incoming(&self, loc: LocationId) -> &[EdgeId] {
        &self.in_edges[loc.0 as usize]
    }

    pub fn target_locations(&self) -> impl Iterator<Item = LocationId> + '_ {
        self.locations.iter().filter(|l| l.is_target).map(|l| l.id)
    }

    /// Short human-readable summary of a location (non-zero variables).
    pub fn location_label(&self, id: LocationId) -> String {
        let loc = self.location(id);
        let parts: Vec<String> = loc
            .vars
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0)
            .map(|(i, v)| format!("{}={}", self.var_names[i], v))
            .collect();
        if parts.is_empty() {
            "all-zero".to_string()
        } else {
            parts.join(",")
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let locations: Vec<_> = self
            .locations
            .iter()
            .map(|l| {
                serde_json::json!({
                    "id": l.id.0,
                    "label": self.location_label(l.id),
                    "active_timers": l.active.iter().map(|t| self.timer(*t).name.clone()).collect::<Vec<_>>(),
                    "target": l.is_target,
                })
            })
            .collect();
        let edges: Vec<_> = self
            .edges
            .iter()
            .map(|e| {
                serde_json::json!({
                    "id": e.id.0,
                    "source": e.source.0,
                    "timer": self.timer(e.timer).name.clone(),
                    "restarts": e.restarts.iter().map(|t| self.timer(*t).name.clone()).collect::<Vec<_>>(),
                    "target": e.target.0,
                })
            })
            .collect();
        let timers: Vec<_> = self
            .timers
            .iter()
            .map(|t| serde_json::json!({"name": t.name, "distribution": t.dist.to_string()}))
            .collect();
        serde_json::json!({
            "initial": self.initial.0,
            "locations": locations,
            "edges": edges,
            "timers": timers,
        })
    }

    /// Location graph in DOT format.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph locations {\n");
        for l in &self.locations {
            let shape = if l.is_target { "doublecircle" } else { "circle" };
            out.push_str(&format!(
                "  l{} [shape={},label=\"l{}\\n{}\"];\n",
                l.id.0,
                shape,
                l.id.0,
                self.location_label(l.id)
            ));
        }
        for e in &self.edges {
            out.push_str(&format!(
                "  l{} -> l{} [label=\"{}\"];\n",
                e.source.0,
                e.target.0,
                self.timer(e.timer).name
            ));
        }
        out.push_str("}\n");
        out
    }
}

/// Index bases for the flattened variable and timer spaces.
struct Layout {
    var_base: Vec<usize>,
    timer_base: Vec<u32>,
    n_vars: usize,
    n_timers: u32,
}

impl Layout {
    fn of(network: &Network) -> Layout {
        let mut var_base = Vec::with_capacity(network.components.len());
        let mut timer_base = Vec::with_capacity(network.components.len());
        let mut n_vars = 0usize;
        let mut n_timers = 0u32;
        for c in &network.components {
            var_base.push(n_vars);
            timer_base.push(n_timers);
            n_vars += c.vars.len();
            n_timers += c.timers.len() as u32;
        }
        Layout {
            var_base,
            timer_base,
            n_vars,
            n_timers,
        }
    }

    fn timer_id(&self, component: usize, local: usize) -> TimerId {
        TimerId(self.timer_base[component] + local as u32)
    }
}

fn eval_guard(guard: &Guard, base: usize, state: &[i64]) -> bool {
    guard
        .iter()
        .all(|a| a.op.holds(state[base + a.var], a.value))
}

fn apply_updates(updates: &[Update], base: usize, state: &mut [i64]) {
    // simultaneous semantics: right-hand sides read the pre-update state
    let rhs: Vec<i64> = updates
        .iter()
        .map(|u| match u.expr {
            UpdateExpr::Const(k) => k,
            UpdateExpr::Var(v) => state[base + v],
        })
        .collect();
    for (u, v) in updates.iter().zip(rhs) {
        state[base + u.var] = v;
    }
}

impl Network {
    /// Well-formedness diagnostics. Errors make the network unusable for
    /// flattening; warnings are advisory.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut names = HashMap::new();
        for (ci, c) in self.components.iter().enumerate() {
            if let Some(prev) = names.insert(c.name.clone(), ci) {
                out.push(Diagnostic::error(format!(
                    "duplicate component name {} (components {} and {})",
                    c.name, prev, ci
                )));
            }
            for v in &c.vars {
                if v.lo > v.hi {
                    out.push(Diagnostic::error(format!(
                        "{}.{}: empty range [{}..{}]",
                        c.name, v.name, v.lo, v.hi
                    )));
                }
                if v.init < v.lo || v.init > v.hi {
                    out.push(Diagnostic::error(format!(
                        "{}.{}: initial value {} outside range",
                        c.name, v.name, v.init
                    )));
                }
            }
            for t in &c.timers {
                t.dist.check(&format!("{}.{}", c.name, t.name), &mut out);
            }
            let check_var = |i: usize, what: &str, out: &mut Vec<Diagnostic>| {
                if i >= c.vars.len() {
                    out.push(Diagnostic::error(format!(
                        "{}: {} references unknown variable #{}",
                        c.name, what, i
                    )));
                }
            };
            let check_timer = |i: usize, what: &str, out: &mut Vec<Diagnostic>| {
                if i >= c.timers.len() {
                    out.push(Diagnostic::error(format!(
                        "{}: {} references unknown timer #{}",
                        c.name, what, i
                    )));
                }
            };
            for t in &c.initial_restarts {
                check_timer(*t, "initial restart", &mut out);
            }
            for tr in &c.timed {
                check_timer(tr.timer, "timed transition", &mut out);
                for a in &tr.guard {
                    check_var(a.var, "guard", &mut out);
                }
                for u in &tr.updates {
                    check_var(u.var, "update", &mut out);
                    if let UpdateExpr::Var(v) = u.expr {
                        check_var(v, "update source", &mut out);
                    }
                }
                for r in &tr.restarts {
                    check_timer(*r, "restart", &mut out);
                }
            }
            for o in &c.urgent_outputs {
                for a in &o.guard {
                    check_var(a.var, "urgent guard", &mut out);
                }
                for u in &o.updates {
                    check_var(u.var, "urgent update", &mut out);
                }
            }
            for i in &c.urgent_inputs {
                for a in &i.guard {
                    check_var(a.var, "input guard", &mut out);
                }
                for u in &i.updates {
                    check_var(u.var, "input update", &mut out);
                }
                for r in &i.restarts {
                    check_timer(*r, "input restart", &mut out);
                }
            }
            let outputs: Vec<&str> = c.urgent_outputs.iter().map(|o| o.action.as_str()).collect();
            for i in &c.urgent_inputs {
                if outputs.contains(&i.action.as_str()) {
                    out.push(Diagnostic::error(format!(
                        "{}: action {} is both input and output of the same component",
                        c.name, i.action
                    )));
                }
            }
        }
        // closedness: every urgent input must be matched by some urgent output
        let all_outputs: Vec<&str> = self
            .components
            .iter()
            .flat_map(|c| c.urgent_outputs.iter().map(|o| o.action.as_str()))
            .collect();
        let all_inputs: Vec<&str> = self
            .components
            .iter()
            .flat_map(|c| c.urgent_inputs.iter().map(|i| i.action.as_str()))
            .collect();
        for c in &self.components {
            for i in &c.urgent_inputs {
                if !all_outputs.contains(&i.action.as_str()) {
                    out.push(Diagnostic::error(format!(
                        "model not closed: input action {} has no matching output",
                        i.action
                    )));
                }
            }
            for o in &c.urgent_outputs {
                if !all_inputs.contains(&o.action.as_str()) {
                    out.push(Diagnostic::warning(format!(
                        "unmatched action: urgent output {} has no listener",
                        o.action
                    )));
                }
            }
        }
        for a in &self.target {
            if a.component >= self.components.len() {
                out.push(Diagnostic::error(format!(
                    "target references unknown component #{}",
                    a.component
                )));
            } else if a.var >= self.components[a.component].vars.len() {
                out.push(Diagnostic::error(format!(
                    "target references unknown variable #{} of {}",
                    a.var, self.components[a.component].name
                )));
            }
        }
        out
    }

    /// Greedy closure step: first component (declaration order) with an
    /// enabled urgent output, or a forced first choice.
    fn closure_once(
        &self,
        layout: &Layout,
        state: &mut [i64],
        restarts: &mut Vec<TimerId>,
        forced: Option<(usize, usize)>,
    ) -> bool {
        let pick = forced.or_else(|| {
            for (ci, c) in self.components.iter().enumerate() {
                for (oi, o) in c.urgent_outputs.iter().enumerate() {
                    if eval_guard(&o.guard, layout.var_base[ci], state) {
                        return Some((ci, oi));
                    }
                }
            }
            None
        });
        let Some((ci, oi)) = pick else {
            return false;
        };
        let action = self.components[ci].urgent_outputs[oi].action.clone();
        apply_updates(
            &self.components[ci].urgent_outputs[oi].updates,
            layout.var_base[ci],
            state,
        );
        // broadcast to every other component; at most one handler fires each
        for (cj, c) in self.components.iter().enumerate() {
            if cj == ci {
                continue;
            }
            for h in &c.urgent_inputs {
                if h.action == action && eval_guard(&h.guard, layout.var_base[cj], state) {
                    apply_updates(&h.updates, layout.var_base[cj], state);
                    for r in &h.restarts {
                        restarts.push(layout.timer_id(cj, *r));
                    }
                    break;
                }
            }
        }
        true
    }

    fn enabled_urgent(&self, layout: &Layout, state: &[i64]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (ci, c) in self.components.iter().enumerate() {
            for (oi, o) in c.urgent_outputs.iter().enumerate() {
                if eval_guard(&o.guard, layout.var_base[ci], state) {
                    out.push((ci, oi));
                }
            }
        }
        out
    }

    fn closure_greedy(
        &self,
        layout: &Layout,
        mut state: Vec<i64>,
        first: Option<(usize, usize)>,
        limit: usize,
    ) -> Result<(Vec<i64>, Vec<TimerId>), ModelError> {
        let mut restarts = Vec::new();
        let mut steps = 0usize;
        let mut forced = first;
        while self.closure_once(layout, &mut state, &mut restarts, forced.take()) {
            steps += 1;
            if steps > limit {
                return Err(ModelError::Divergence(limit));
            }
        }
        Ok((state, restarts))
    }

    fn closure(
        &self,
        layout: &Layout,
        state: Vec<i64>,
        opts: &FlattenOptions,
    ) -> Result<(Vec<i64>, Vec<TimerId>), ModelError> {
        if opts.confluence_check {
            let enabled = self.enabled_urgent(layout, &state);
            if enabled.len() > 1 {
                let mut results = Vec::new();
                for e in &enabled {
                    let (s, mut r) =
                        self.closure_greedy(layout, state.clone(), Some(*e), opts.closure_limit)?;
                    r.sort_unstable();
                    results.push((s, r));
                }
                if results.windows(2).any(|w| w[0] != w[1]) {
                    return Err(ModelError::NonConfluence(format!(
                        "{} urgent outputs enabled with order-dependent outcomes",
                        enabled.len()
                    )));
                }
            }
        }
        self.closure_greedy(layout, state, None, opts.closure_limit)
    }

    /// Fires enabled urgent outputs (deterministic declaration order,
    /// broadcasting each to the other components) until none is enabled.
    /// Returns the stable state and the accumulated timer restarts.
    pub fn urgent_closure(
        &self,
        state: Vec<i64>,
        opts: &FlattenOptions,
    ) -> Result<(Vec<i64>, Vec<TimerId>), ModelError> {
        let layout = Layout::of(self);
        self.closure(&layout, state, opts)
    }

    fn initial_state(&self, layout: &Layout) -> Vec<i64> {
        let mut state = vec![0i64; layout.n_vars];
        for (ci, c) in self.components.iter().enumerate() {
            for (vi, v) in c.vars.iter().enumerate() {
                state[layout.var_base[ci] + vi] = v.init;
            }
        }
        state
    }

    fn is_target_state(&self, layout: &Layout, state: &[i64]) -> bool {
        !self.target.is_empty()
            && self
                .target
                .iter()
                .all(|a| a.op.holds(state[layout.var_base[a.component] + a.var], a.value))
    }

    /// BFS over stable discrete states: for each active timer of each
    /// location, fire it, close the urgency, and record one edge carrying
    /// the union of restarts along the chain.
    pub fn flatten(&self, opts: &FlattenOptions) -> Result<FlatModel, ModelError> {
        let diags = self.validate();
        if diags.iter().any(|d| d.severity == Severity::Error) {
            return Err(ModelError::Invalid(
                diags
                    .into_iter()
                    .filter(|d| d.severity == Severity::Error)
                    .collect(),
            ));
        }
        let layout = Layout::of(self);
        let timers: Vec<TimerInfo> = self
            .components
            .iter()
            .flat_map(|c| {
                c.timers.iter().map(move |t| TimerInfo {
                    name: format!("{}.{}", c.name, t.name),
                    dist: t.dist.clone(),
                })
            })
            .collect();
        debug_assert_eq!(timers.len(), layout.n_timers as usize);
        let var_names: Vec<String> = self
            .components
            .iter()
            .flat_map(|c| c.vars.iter().map(move |v| format!("{}.{}", c.name, v.name)))
            .collect();

        let mut initial_running: Vec<TimerId> = self
            .components
            .iter()
            .enumerate()
            .flat_map(|(ci, c)| {
                let base = layout.timer_base[ci];
                c.initial_restarts
                    .iter()
                    .map(move |t| TimerId(base + *t as u32))
            })
            .collect();
        let (state0, closure_restarts) =
            self.closure(&layout, self.initial_state(&layout), opts)?;
        for r in closure_restarts {
            if !initial_running.contains(&r) {
                initial_running.push(r);
            }
        }
        initial_running.sort_unstable();

        let mut locations: Vec<Location> = Vec::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut index: HashMap<Vec<i64>, LocationId> = HashMap::new();

        let intern = |network: &Network,
                      state: Vec<i64>,
                      active: Vec<TimerId>,
                      locations: &mut Vec<Location>,
                      index: &mut HashMap<Vec<i64>, LocationId>|
         -> Result<LocationId, ModelError> {
            if let Some(id) = index.get(&state) {
                let loc = &locations[id.0 as usize];
                if loc.active != active {
                    return Err(ModelError::ActiveSetMismatch(format!(
                        "state {:?} seen with active sets {:?} and {:?}",
                        state, loc.active, active
                    )));
                }
                return Ok(*id);
            }
            let id = LocationId(locations.len() as u32);
            let is_target = network.is_target_state(&Layout::of(network), &state);
            index.insert(state.clone(), id);
            locations.push(Location {
                id,
                vars: state,
                active,
                is_target,
                out_edges: Vec::new(),
            });
            Ok(id)
        };

        let l0 = intern(self, state0, initial_running, &mut locations, &mut index)?;
        let mut next_unprocessed = 0usize;
        while next_unprocessed < locations.len() {
            let lid = LocationId(next_unprocessed as u32);
            next_unprocessed += 1;
            let (vars, active) = {
                let loc = &locations[lid.0 as usize];
                (loc.vars.clone(), loc.active.clone())
            };
            let mut out_edges = Vec::with_capacity(active.len());
            for &fired in &active {
                // locate the owning component and its enabled transition
                let ci = layout
                    .timer_base
                    .partition_point(|b| *b <= fired.0)
                    .saturating_sub(1);
                let local = (fired.0 - layout.timer_base[ci]) as usize;
                let comp = &self.components[ci];
                let base = layout.var_base[ci];
                let mut enabled = comp
                    .timed
                    .iter()
                    .filter(|tr| tr.timer == local && eval_guard(&tr.guard, base, &vars));
                let tr = enabled.next().ok_or_else(|| {
                    ModelError::NoEnabledTransition(timers[fired.0 as usize].name.clone())
                })?;
                if enabled.next().is_some() {
                    return Err(ModelError::AmbiguousTransition(
                        timers[fired.0 as usize].name.clone(),
                    ));
                }
                let mut state = vars.clone();
                apply_updates(&tr.updates, base, &mut state);
                let survivors: Vec<TimerId> =
                    active.iter().copied().filter(|t| *t != fired).collect();
                let mut restarted: Vec<TimerId> = Vec::new();
                let add_restart =
                    |t: TimerId, restarted: &mut Vec<TimerId>| -> Result<(), ModelError> {
                        if survivors.contains(&t) {
                            return Err(ModelError::RestartConflict(
                                timers[t.0 as usize].name.clone(),
                            ));
                        }
                        if !restarted.contains(&t) {
                            restarted.push(t);
                        }
                        Ok(())
                    };
                for r in &tr.restarts {
                    add_restart(layout.timer_id(ci, *r), &mut restarted)?;
                }
                let (stable, closure_restarts) = self.closure(&layout, state, opts)?;
                for r in closure_restarts {
                    add_restart(r, &mut restarted)?;
                }
                restarted.sort_unstable();
                let mut next_active = survivors;
                next_active.extend(restarted.iter().copied());
                next_active.sort_unstable();
                let target = intern(self, stable, next_active, &mut locations, &mut index)?;
                if locations.len() > opts.location_cap {
                    return Err(ModelError::LocationCapExceeded(opts.location_cap));
                }
                let eid = EdgeId(edges.len() as u32);
                edges.push(Edge {
                    id: eid,
                    source: lid,
                    timer: fired,
                    restarts: restarted,
                    target,
                });
                out_edges.push(eid);
            }
            locations[lid.0 as usize].out_edges = out_edges;
        }

        // construction invariants: expiring timer from the source set, no
        // spontaneous activations
        for e in &edges {
            let src = &locations[e.source.0 as usize];
            let dst = &locations[e.target.0 as usize];
            assert!(src.active.contains(&e.timer));
            assert!(e.restarts.iter().all(|t| dst.active.contains(t)));
            let mut expect: Vec<TimerId> = src
                .active
                .iter()
                .copied()
                .filter(|t| *t != e.timer)
                .chain(e.restarts.iter().copied())
                .collect();
            expect.sort_unstable();
            assert_eq!(expect, dst.active, "spontaneous timer activation");
        }

        let mut in_edges = vec![Vec::new(); locations.len()];
        for e in &edges {
            in_edges[e.target.0 as usize].push(e.id);
        }
        Ok(FlatModel {
            locations,
            edges,
            timers,
            initial: l0,
            var_names,
            in_edges,
        })
    }
}
