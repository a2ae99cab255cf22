//! Kepler frontend: parser for repairable dynamic fault trees and the
//! compiler to a component network.
//!
//! Grammar (statements end with `;`, node names are quoted, `#` starts a
//! line comment):
//!
//! ```text
//! toplevel "NAME";
//! "NAME" pand|and|or "CHILD" ...;
//! "NAME" fail~DIST repair~DIST;
//! "NAME" rbox prio|fcfs "CHILD" ...;
//! DIST   = uniform(a,b) | exponential(r)
//! ```
//!
//! Basic events managed by a repair box wait for it; a basic event outside
//! every repair box starts its own repair immediately when it fails.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::model::{
    Atom, CmpOp, Component, Distribution, Network, TargetAtom, TimedTransition, TimerDecl,
    Update, UpdateExpr, UrgentInput, UrgentOutput, VarDef,
};
use crate::rational::parse_rat;
use crate::rational::Rat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateKind {
    And,
    Or,
    Pand,
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GateKind::And => write!(f, "and"),
            GateKind::Or => write!(f, "or"),
            GateKind::Pand => write!(f, "pand"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Node {
    Gate { kind: GateKind, children: Vec<String> },
    BasicEvent { fail: Distribution, repair: Distribution },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RboxPolicy {
    /// When the box frees, repair the first failed event in declared order.
    Prio,
    /// When the box frees, repair the longest-waiting failed event.
    Fcfs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rbox {
    pub name: String,
    pub policy: RboxPolicy,
    pub managed: Vec<String>,
}

/// A parsed fault tree: one toplevel node, named gates and basic events,
/// and repair boxes over basic events.
#[derive(Debug, Clone, PartialEq)]
pub struct DftModel {
    pub toplevel: String,
    pub nodes: Vec<(String, Node)>,
    pub rboxes: Vec<Rbox>,
}

#[derive(Debug, Error, PartialEq)]
pub enum KeplerError {
    #[error("{line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("{0}")]
    Semantic(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Name(String),
    Word(String),
    Num(Rat),
    Semi,
    LParen,
    RParen,
    Comma,
    Tilde,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Lexer<'a> {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn err(&self, message: impl Into<String>) -> KeplerError {
        KeplerError::Syntax {
            line: self.line,
            col: self.col,
            message: message.into(),
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let b = *self.src.get(self.pos)?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(b)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn tokens(mut self) -> Result<Vec<(Tok, usize, usize)>, KeplerError> {
        let mut out = Vec::new();
        loop {
            while let Some(b) = self.peek() {
                if b == b'#' {
                    while let Some(b) = self.bump() {
                        if b == b'\n' {
                            break;
                        }
                    }
                } else if b.is_ascii_whitespace() {
                    self.bump();
                } else {
                    break;
                }
            }
            let (line, col) = (self.line, self.col);
            let Some(b) = self.peek() else {
                return Ok(out);
            };
            let tok = match b {
                b';' => {
                    self.bump();
                    Tok::Semi
                }
                b'(' => {
                    self.bump();
                    Tok::LParen
                }
                b')' => {
                    self.bump();
                    Tok::RParen
                }
                b',' => {
                    self.bump();
                    Tok::Comma
                }
                b'~' => {
                    self.bump();
                    Tok::Tilde
                }
                b'"' => {
                    self.bump();
                    let mut s = String::new();
                    loop {
                        match self.bump() {
                            Some(b'"') => break,
                            Some(b'\n') | None => {
                                return Err(self.err("unterminated quoted name"))
                            }
                            Some(c) => s.push(c as char),
                        }
                    }
                    if s.is_empty() {
                        return Err(self.err("empty node name"));
                    }
                    Tok::Name(s)
                }
                b if b.is_ascii_digit() => {
                    let mut s = String::new();
                    while let Some(c) = self.peek() {
                        if c.is_ascii_digit() || c == b'.' {
                            s.push(c as char);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    match parse_rat(&s) {
                        Some(r) => Tok::Num(r),
                        None => return Err(self.err(format!("malformed number `{s}`"))),
                    }
                }
                b if b.is_ascii_alphabetic() || b == b'_' => {
                    let mut s = String::new();
                    while let Some(c) = self.peek() {
                        if c.is_ascii_alphanumeric() || c == b'_' {
                            s.push(c as char);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    Tok::Word(s)
                }
                other => {
                    return Err(self.err(format!("unexpected character `{}`", other as char)))
                }
            };
            out.push((tok, line, col));
        }
    }
}

struct Parser {
    toks: Vec<(Tok, usize, usize)>,
    pos: usize,
}

impl Parser {
    fn err_at(&self, message: impl Into<String>) -> KeplerError {
        let (line, col) = self
            .toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|(_, l, c)| (*l, *c))
            .unwrap_or((1, 1));
        KeplerError::Syntax {
            line,
            col,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _, _)| t)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn back(&mut self) {
        self.pos = self.pos.saturating_sub(1);
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<(), KeplerError> {
        match self.next() {
            Some(ref t) if t == want => Ok(()),
            Some(t) => {
                self.back();
                Err(self.err_at(format!("expected {what}, found {t:?}")))
            }
            None => Err(self.err_at(format!("expected {what}, found end of input"))),
        }
    }

    fn name(&mut self, what: &str) -> Result<String, KeplerError> {
        match self.next() {
            Some(Tok::Name(s)) => Ok(s),
            Some(t) => {
                self.back();
                Err(self.err_at(format!("expected {what} (a quoted name), found {t:?}")))
            }
            None => Err(self.err_at(format!("expected {what}, found end of input"))),
        }
    }

    fn number(&mut self) -> Result<Rat, KeplerError> {
        match self.next() {
            Some(Tok::Num(r)) => Ok(r),
            Some(_) => {
                self.back();
                Err(self.err_at("expected a number"))
            }
            None => Err(self.err_at("expected a number, found end of input")),
        }
    }

    fn distribution(&mut self) -> Result<Distribution, KeplerError> {
        match self.next() {
            Some(Tok::Word(w)) if w == "uniform" => {
                self.expect(&Tok::LParen, "`(`")?;
                let a = self.number()?;
                self.expect(&Tok::Comma, "`,`")?;
                let b = self.number()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(Distribution::uniform(a, b))
            }
            Some(Tok::Word(w)) if w == "exponential" => {
                self.expect(&Tok::LParen, "`(`")?;
                let r = self.number()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(Distribution::exponential(r))
            }
            Some(_) => {
                self.back();
                Err(self.err_at("expected a distribution (uniform or exponential)"))
            }
            None => Err(self.err_at("expected a distribution, found end of input")),
        }
    }

    fn name_list(&mut self) -> Result<Vec<String>, KeplerError> {
        let mut out = Vec::new();
        while let Some(Tok::Name(_)) = self.peek() {
            out.push(self.name("child")?);
        }
        if out.is_empty() {
            return Err(self.err_at("expected at least one child name"));
        }
        Ok(out)
    }
}

/// Parses Kepler text into a validated [`DftModel`].
pub fn parse(text: &str) -> Result<DftModel, KeplerError> {
    let toks = Lexer::new(text).tokens()?;
    let mut p = Parser { toks, pos: 0 };
    let mut toplevel: Option<String> = None;
    let mut nodes: Vec<(String, Node)> = Vec::new();
    let mut rboxes: Vec<Rbox> = Vec::new();

    while p.peek().is_some() {
        match p.next().unwrap() {
            Tok::Word(w) if w == "toplevel" => {
                let name = p.name("toplevel node")?;
                if toplevel.is_some() {
                    return Err(KeplerError::Semantic(
                        "duplicate toplevel declaration".into(),
                    ));
                }
                toplevel = Some(name);
                p.expect(&Tok::Semi, "`;`")?;
            }
            Tok::Name(name) => match p.next() {
                Some(Tok::Word(w)) if w == "pand" || w == "and" || w == "or" => {
                    let kind = match w.as_str() {
                        "pand" => GateKind::Pand,
                        "and" => GateKind::And,
                        _ => GateKind::Or,
                    };
                    let children = p.name_list()?;
                    p.expect(&Tok::Semi, "`;`")?;
                    nodes.push((name, Node::Gate { kind, children }));
                }
                Some(Tok::Word(w)) if w == "fail" => {
                    p.expect(&Tok::Tilde, "`~`")?;
                    let fail = p.distribution()?;
                    match p.next() {
                        Some(Tok::Word(w)) if w == "repair" => {}
                        _ => {
                            p.back();
                            return Err(p.err_at("expected `repair`"));
                        }
                    }
                    p.expect(&Tok::Tilde, "`~`")?;
                    let repair = p.distribution()?;
                    p.expect(&Tok::Semi, "`;`")?;
                    nodes.push((name, Node::BasicEvent { fail, repair }));
                }
                Some(Tok::Word(w)) if w == "rbox" => {
                    let policy = match p.next() {
                        Some(Tok::Word(w)) if w == "prio" => RboxPolicy::Prio,
                        Some(Tok::Word(w)) if w == "fcfs" => RboxPolicy::Fcfs,
                        _ => {
                            p.back();
                            return Err(p.err_at("expected rbox policy `prio` or `fcfs`"));
                        }
                    };
                    let managed = p.name_list()?;
                    p.expect(&Tok::Semi, "`;`")?;
                    rboxes.push(Rbox {
                        name,
                        policy,
                        managed,
                    });
                }
                _ => {
                    p.back();
                    return Err(p.err_at(format!(
                        "expected a gate kind, `fail` or `rbox` after \"{name}\""
                    )));
                }
            },
            _ => {
                p.back();
                return Err(p.err_at("expected a statement"));
            }
        }
    }

    let model = DftModel {
        toplevel: toplevel.clone().unwrap_or_default(),
        nodes,
        rboxes,
    };
    check_semantics(&model, toplevel.is_some())?;
    Ok(model)
}

fn check_semantics(model: &DftModel, has_toplevel: bool) -> Result<(), KeplerError> {
    let mut by_name: HashMap<&str, usize> = HashMap::new();
    for (i, (name, _)) in model.nodes.iter().enumerate() {
        if by_name.insert(name, i).is_some() {
            return Err(KeplerError::Semantic(format!(
                "node \"{name}\" defined twice"
            )));
        }
    }
    for rb in &model.rboxes {
        if by_name.contains_key(rb.name.as_str()) {
            return Err(KeplerError::Semantic(format!(
                "\"{}\" is both a node and an rbox",
                rb.name
            )));
        }
    }
    for (name, node) in &model.nodes {
        if let Node::Gate { children, .. } = node {
            for (i, c) in children.iter().enumerate() {
                if !by_name.contains_key(c.as_str()) {
                    return Err(KeplerError::Semantic(format!(
                        "gate \"{name}\" references unknown child \"{c}\""
                    )));
                }
                if children[..i].contains(c) {
                    return Err(KeplerError::Semantic(format!(
                        "gate \"{name}\" lists child \"{c}\" twice"
                    )));
                }
            }
        }
    }
    // cycle check: DFS with colors over the gate graph
    fn visit(
        model: &DftModel,
        by_name: &HashMap<&str, usize>,
        i: usize,
        color: &mut [u8],
    ) -> Result<(), KeplerError> {
        if color[i] == 1 {
            return Err(KeplerError::Semantic(format!(
                "cycle through node \"{}\"",
                model.nodes[i].0
            )));
        }
        if color[i] == 2 {
            return Ok(());
        }
        color[i] = 1;
        if let Node::Gate { children, .. } = &model.nodes[i].1 {
            for c in children {
                visit(model, by_name, by_name[c.as_str()], color)?;
            }
        }
        color[i] = 2;
        Ok(())
    }
    let mut color = vec![0u8; model.nodes.len()];
    for i in 0..model.nodes.len() {
        visit(model, &by_name, i, &mut color)?;
    }
    if !has_toplevel {
        return Err(KeplerError::Semantic("missing toplevel declaration".into()));
    }
    if !by_name.contains_key(model.toplevel.as_str()) {
        return Err(KeplerError::Semantic(format!(
            "toplevel \"{}\" is not a defined node",
            model.toplevel
        )));
    }
    let mut managed_by: HashMap<&str, &str> = HashMap::new();
    for rb in &model.rboxes {
        for m in &rb.managed {
            match by_name.get(m.as_str()) {
                None => {
                    return Err(KeplerError::Semantic(format!(
                        "rbox \"{}\" manages unknown node \"{m}\"",
                        rb.name
                    )))
                }
                Some(i) => {
                    if !matches!(model.nodes[*i].1, Node::BasicEvent { .. }) {
                        return Err(KeplerError::Semantic(format!(
                            "rbox \"{}\" manages \"{m}\" which is not a basic event",
                            rb.name
                        )));
                    }
                }
            }
            if let Some(other) = managed_by.insert(m, &rb.name) {
                return Err(KeplerError::Semantic(format!(
                    "basic event \"{m}\" managed by rboxes \"{other}\" and \"{}\"",
                    rb.name
                )));
            }
        }
    }
    Ok(())
}

impl DftModel {
    /// Canonical Kepler text; parsing it back yields an equal model.
    pub fn to_kepler(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("toplevel \"{}\";\n", self.toplevel));
        for (name, node) in &self.nodes {
            match node {
                Node::Gate { kind, children } => {
                    let kids: Vec<String> =
                        children.iter().map(|c| format!("\"{c}\"")).collect();
                    out.push_str(&format!("\"{name}\" {kind} {};\n", kids.join(" ")));
                }
                Node::BasicEvent { fail, repair } => {
                    out.push_str(&format!("\"{name}\" fail~{fail} repair~{repair};\n"));
                }
            }
        }
        for rb in &self.rboxes {
            let kids: Vec<String> = rb.managed.iter().map(|c| format!("\"{c}\"")).collect();
            let policy = match rb.policy {
                RboxPolicy::Prio => "prio",
                RboxPolicy::Fcfs => "fcfs",
            };
            out.push_str(&format!(
                "\"{}\" rbox {policy} {};\n",
                rb.name,
                kids.join(" ")
            ));
        }
        out
    }
}

/// All orderings without repetition of subsets of `1..=k`, by length then
/// lexicographically. Index 0 is the empty sequence.
fn arrangements(k: usize) -> Vec<Vec<u8>> {
    let mut out: Vec<Vec<u8>> = vec![vec![]];
    let mut frontier: Vec<Vec<u8>> = vec![vec![]];
    for _ in 0..k {
        let mut next = Vec::new();
        for seq in &frontier {
            for c in 1..=k as u8 {
                if !seq.contains(&c) {
                    let mut s = seq.clone();
                    s.push(c);
                    next.push(s);
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Compiles a fault tree to a closed component network. One component per
/// basic event, per gate and per repair box; the target predicate is
/// "toplevel node failed". `clip` is applied to unbounded distributions.
pub fn compile(dft: &DftModel, clip: f64) -> Network {
    let mut components = Vec::new();
    let managed: HashMap<&str, (&Rbox, usize)> = dft
        .rboxes
        .iter()
        .flat_map(|rb| {
            rb.managed
                .iter()
                .enumerate()
                .map(move |(j, m)| (m.as_str(), (rb, j)))
        })
        .collect();

    for (name, node) in &dft.nodes {
        match node {
            Node::BasicEvent { fail, repair } => {
                components.push(compile_be(
                    name,
                    fail.clone().with_clip(clip),
                    repair.clone().with_clip(clip),
                    managed.contains_key(name.as_str()),
                ));
            }
            Node::Gate { kind, children } => {
                components.push(compile_gate(name, *kind, children));
            }
        }
    }
    for rb in &dft.rboxes {
        components.push(compile_rbox(rb));
    }

    let top_idx = components
        .iter()
        .position(|c| c.name == dft.toplevel)
        .expect("toplevel exists after semantic checks");
    let top_node = &dft
        .nodes
        .iter()
        .find(|(n, _)| n == &dft.toplevel)
        .unwrap()
        .1;
    let target = match top_node {
        // gate `out` variable, basic event `broken` variable
        Node::Gate { kind, children } => {
            let out_var = match kind {
                GateKind::Pand => 1,
                _ => children.len(),
            };
            vec![TargetAtom {
                component: top_idx,
                var: out_var,
                op: CmpOp::Eq,
                value: 1,
            }]
        }
        Node::BasicEvent { .. } => vec![TargetAtom {
            component: top_idx,
            var: 1,
            op: CmpOp::Ne,
            value: 0,
        }],
    };

    Network { components, target }
}

/// Basic-event pattern: timed failure and repair, urgent notifications
/// `f_N`/`r_N`, repair triggered by the managing rbox via `rstart_N` (or
/// started immediately when unmanaged).
fn compile_be(
    name: &str,
    fail: Distribution,
    repair: Distribution,
    is_managed: bool,
) -> Component {
    let inform = 0usize;
    let broken = 1usize;
    let fail_t = 0usize;
    let repair_t = 1usize;
    let down = TimedTransition {
        guard: vec![Atom { var: broken, op: CmpOp::Eq, value: 0 }],
        timer: fail_t,
        action: format!("down_{name}"),
        updates: vec![
            Update { var: inform, expr: UpdateExpr::Const(1) },
            Update {
                var: broken,
                expr: UpdateExpr::Const(if is_managed { 1 } else { 2 }),
            },
        ],
        restarts: if is_managed { vec![] } else { vec![repair_t] },
    };
    let up = TimedTransition {
        guard: vec![Atom { var: broken, op: CmpOp::Eq, value: 2 }],
        timer: repair_t,
        action: format!("up_{name}"),
        updates: vec![
            Update { var: inform, expr: UpdateExpr::Const(2) },
            Update { var: broken, expr: UpdateExpr::Const(0) },
        ],
        restarts: vec![fail_t],
    };
    let urgent_inputs = if is_managed {
        vec![UrgentInput {
            action: format!("rstart_{name}"),
            guard: vec![Atom { var: broken, op: CmpOp::Eq, value: 1 }],
            updates: vec![Update { var: broken, expr: UpdateExpr::Const(2) }],
            restarts: vec![repair_t],
        }]
    } else {
        vec![]
    };
    Component {
        name: name.to_string(),
        vars: vec![
            VarDef { name: "inform".into(), lo: 0, hi: 2, init: 0 },
            VarDef { name: "broken".into(), lo: 0, hi: 2, init: 0 },
        ],
        timers: vec![
            TimerDecl { name: "fail".into(), dist: fail },
            TimerDecl { name: "repair".into(), dist: repair },
        ],
        initial_restarts: vec![fail_t],
        timed: vec![down, up],
        urgent_outputs: vec![
            UrgentOutput {
                guard: vec![Atom { var: inform, op: CmpOp::Eq, value: 1 }],
                action: format!("f_{name}"),
                updates: vec![Update { var: inform, expr: UpdateExpr::Const(0) }],
            },
            UrgentOutput {
                guard: vec![Atom { var: inform, op: CmpOp::Eq, value: 2 }],
                action: format!("r_{name}"),
                updates: vec![Update { var: inform, expr: UpdateExpr::Const(0) }],
            },
        ],
        urgent_inputs,
    }
}

fn compile_gate(name: &str, kind: GateKind, children: &[String]) -> Component {
    match kind {
        GateKind::Pand => compile_pand(name, children),
        GateKind::And | GateKind::Or => compile_monotone_gate(name, kind, children),
    }
}

/// AND/OR gates track one failed-bit per child.
fn compile_monotone_gate(name: &str, kind: GateKind, children: &[String]) -> Component {
    let k = children.len();
    let out_var = k;
    let mut vars: Vec<VarDef> = children
        .iter()
        .map(|c| VarDef { name: format!("failed_{c}"), lo: 0, hi: 1, init: 0 })
        .collect();
    vars.push(VarDef { name: "out".into(), lo: 0, hi: 1, init: 0 });

    let mut urgent_inputs = Vec::new();
    for (j, c) in children.iter().enumerate() {
        urgent_inputs.push(UrgentInput {
            action: format!("f_{c}"),
            guard: vec![],
            updates: vec![Update { var: j, expr: UpdateExpr::Const(1) }],
            restarts: vec![],
        });
        urgent_inputs.push(UrgentInput {
            action: format!("r_{c}"),
            guard: vec![],
            updates: vec![Update { var: j, expr: UpdateExpr::Const(0) }],
            restarts: vec![],
        });
    }

    let mut urgent_outputs = Vec::new();
    let all = |value: i64| -> Vec<Atom> {
        (0..k)
            .map(|j| Atom { var: j, op: CmpOp::Eq, value })
            .collect()
    };
    match kind {
        GateKind::And => {
            let mut guard = vec![Atom { var: out_var, op: CmpOp::Eq, value: 0 }];
            guard.extend(all(1));
            urgent_outputs.push(UrgentOutput {
                guard,
                action: format!("f_{name}"),
                updates: vec![Update { var: out_var, expr: UpdateExpr::Const(1) }],
            });
            // disjunction over children expressed as one output per child
            for j in 0..k {
                urgent_outputs.push(UrgentOutput {
                    guard: vec![
                        Atom { var: out_var, op: CmpOp::Eq, value: 1 },
                        Atom { var: j, op: CmpOp::Eq, value: 0 },
                    ],
                    action: format!("r_{name}"),
                    updates: vec![Update { var: out_var, expr: UpdateExpr::Const(0) }],
                });
            }
        }
        GateKind::Or => {
            for j in 0..k {
                urgent_outputs.push(UrgentOutput {
                    guard: vec![
                        Atom { var: out_var, op: CmpOp::Eq, value: 0 },
                        Atom { var: j, op: CmpOp::Eq, value: 1 },
                    ],
                    action: format!("f_{name}"),
                    updates: vec![Update { var: out_var, expr: UpdateExpr::Const(1) }],
                });
            }
            let mut guard = vec![Atom { var: out_var, op: CmpOp::Eq, value: 1 }];
            guard.extend(all(0));
            urgent_outputs.push(UrgentOutput {
                guard,
                action: format!("r_{name}"),
                updates: vec![Update { var: out_var, expr: UpdateExpr::Const(0) }],
            });
        }
        GateKind::Pand => unreachable!(),
    }

    Component {
        name: name.to_string(),
        vars,
        timers: vec![],
        initial_restarts: vec![],
        timed: vec![],
        urgent_outputs,
        urgent_inputs,
    }
}

/// PAND keeps the currently-failed children ordered by last failure; the
/// gate is down exactly when that sequence is `1,2,...,k`. The sequence is
/// encoded into a single variable over all arrangements.
fn compile_pand(name: &str, children: &[String]) -> Component {
    let k = children.len();
    let arrs = arrangements(k);
    let id_of: HashMap<Vec<u8>, i64> = arrs
        .iter()
        .enumerate()
        .map(|(i, a)| (a.clone(), i as i64))
        .collect();
    let full: Vec<u8> = (1..=k as u8).collect();
    let full_id = id_of[&full];
    let mem = 0usize;
    let out_var = 1usize;

    let mut urgent_inputs = Vec::new();
    for (j, c) in children.iter().enumerate() {
        let cj = (j + 1) as u8;
        for arr in &arrs {
            if !arr.contains(&cj) {
                let mut next = arr.clone();
                next.push(cj);
                urgent_inputs.push(UrgentInput {
                    action: format!("f_{c}"),
                    guard: vec![Atom { var: mem, op: CmpOp::Eq, value: id_of[arr] }],
                    updates: vec![Update {
                        var: mem,
                        expr: UpdateExpr::Const(id_of[&next]),
                    }],
                    restarts: vec![],
                });
            } else {
                let next: Vec<u8> = arr.iter().copied().filter(|x| *x != cj).collect();
                urgent_inputs.push(UrgentInput {
                    action: format!("r_{c}"),
                    guard: vec![Atom { var: mem, op: CmpOp::Eq, value: id_of[arr] }],
                    updates: vec![Update {
                        var: mem,
                        expr: UpdateExpr::Const(id_of[&next]),
                    }],
                    restarts: vec![],
                });
            }
        }
    }

    let urgent_outputs = vec![
        UrgentOutput {
            guard: vec![
                Atom { var: out_var, op: CmpOp::Eq, value: 0 },
                Atom { var: mem, op: CmpOp::Eq, value: full_id },
            ],
            action: format!("f_{name}"),
            updates: vec![Update { var: out_var, expr: UpdateExpr::Const(1) }],
        },
        UrgentOutput {
            guard: vec![
                Atom { var: out_var, op: CmpOp::Eq, value: 1 },
                Atom { var: mem, op: CmpOp::Ne, value: full_id },
            ],
            action: format!("r_{name}"),
            updates: vec![Update { var: out_var, expr: UpdateExpr::Const(0) }],
        },
    ];

    Component {
        name: name.to_string(),
        vars: vec![
            VarDef {
                name: "order".into(),
                lo: 0,
                hi: (arrs.len() - 1) as i64,
                init: 0,
            },
            VarDef { name: "out".into(), lo: 0, hi: 1, init: 0 },
        ],
        timers: vec![],
        initial_restarts: vec![],
        timed: vec![],
        urgent_outputs,
        urgent_inputs,
    }
}

/// Repair boxes serve one failed event at a time. `prio` picks the first
/// waiting event in declared order; `fcfs` keeps an explicit arrival
/// queue in shift-down slot variables.
fn compile_rbox(rb: &Rbox) -> Component {
    let k = rb.managed.len();
    let busy = 0usize;
    let mut vars = vec![VarDef { name: "busy".into(), lo: 0, hi: 1, init: 0 }];
    let mut urgent_inputs = Vec::new();
    let mut urgent_outputs = Vec::new();

    match rb.policy {
        RboxPolicy::Prio => {
            for (j, m) in rb.managed.iter().enumerate() {
                vars.push(VarDef {
                    name: format!("waiting_{m}"),
                    lo: 0,
                    hi: 1,
                    init: 0,
                });
                urgent_inputs.push(UrgentInput {
                    action: format!("f_{m}"),
                    guard: vec![],
                    updates: vec![Update { var: 1 + j, expr: UpdateExpr::Const(1) }],
                    restarts: vec![],
                });
                urgent_inputs.push(UrgentInput {
                    action: format!("r_{m}"),
                    guard: vec![],
                    updates: vec![Update { var: busy, expr: UpdateExpr::Const(0) }],
                    restarts: vec![],
                });
            }
            for (j, m) in rb.managed.iter().enumerate() {
                urgent_outputs.push(UrgentOutput {
                    guard: vec![
                        Atom { var: busy, op: CmpOp::Eq, value: 0 },
                        Atom { var: 1 + j, op: CmpOp::Eq, value: 1 },
                    ],
                    action: format!("rstart_{m}"),
                    updates: vec![
                        Update { var: busy, expr: UpdateExpr::Const(1) },
                        Update { var: 1 + j, expr: UpdateExpr::Const(0) },
                    ],
                });
            }
        }
        RboxPolicy::Fcfs => {
            for s in 0..k {
                vars.push(VarDef {
                    name: format!("queue_{s}"),
                    lo: 0,
                    hi: k as i64,
                    init: 0,
                });
            }
            for (j, m) in rb.managed.iter().enumerate() {
                // first empty slot takes the arriving event
                for s in 0..k {
                    urgent_inputs.push(UrgentInput {
                        action: format!("f_{m}"),
                        guard: vec![Atom { var: 1 + s, op: CmpOp::Eq, value: 0 }],
                        updates: vec![Update {
                            var: 1 + s,
                            expr: UpdateExpr::Const((j + 1) as i64),
                        }],
                        restarts: vec![],
                    });
                }
                urgent_inputs.push(UrgentInput {
                    action: format!("r_{m}"),
                    guard: vec![],
                    updates: vec![Update { var: busy, expr: UpdateExpr::Const(0) }],
                    restarts: vec![],
                });
            }
            for (j, m) in rb.managed.iter().enumerate() {
                let mut updates = vec![Update { var: busy, expr: UpdateExpr::Const(1) }];
                for s in 0..k - 1 {
                    updates.push(Update { var: 1 + s, expr: UpdateExpr::Var(2 + s) });
                }
                updates.push(Update { var: k, expr: UpdateExpr::Const(0) });
                urgent_outputs.push(UrgentOutput {
                    guard: vec![
                        Atom { var: busy, op: CmpOp::Eq, value: 0 },
                        Atom { var: 1, op: CmpOp::Eq, value: (j + 1) as i64 },
                    ],
                    action: format!("rstart_{m}"),
                    updates,
                });
            }
        }
    }

    Component {
        name: rb.name.clone(),
        vars,
        timers: vec![],
        initial_restarts: vec![],
        timed: vec![],
        urgent_outputs,
        urgent_inputs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FlattenOptions, Severity};

    pub const CASCADE: &str = r#"
toplevel "PAND1";
"PAND1" pand "BE1" "PAND2";
"PAND2" pand "BE2" "PAND3";
"PAND3" pand "BE3" "BE4";
"BE1" fail~uniform(1198,1218) repair~uniform(10,15);
"BE2" fail~uniform(530,595)   repair~uniform(10,45);
"BE3" fail~uniform(385,465)   repair~uniform(10,45);
"BE4" fail~uniform(1105,1205) repair~uniform(10,15);
"RBOX" rbox prio "BE1" "BE2" "BE3" "BE4";
"#;

    #[test]
    fn parses_cascade() {
        let m = parse(CASCADE).unwrap();
        assert_eq!(m.toplevel, "PAND1");
        let gates = m
            .nodes
            .iter()
            .filter(|(_, n)| matches!(n, Node::Gate { kind: GateKind::Pand, .. }))
            .count();
        assert_eq!(gates, 3);
        let bes = m
            .nodes
            .iter()
            .filter(|(_, n)| matches!(n, Node::BasicEvent { .. }))
            .count();
        assert_eq!(bes, 4);
        assert_eq!(m.rboxes.len(), 1);
        assert_eq!(m.rboxes[0].policy, RboxPolicy::Prio);
        assert_eq!(m.rboxes[0].managed, vec!["BE1", "BE2", "BE3", "BE4"]);
    }

    #[test]
    fn parses_single_be() {
        let m = parse("toplevel \"A\"; \"A\" fail~uniform(1,2) repair~uniform(0,1);").unwrap();
        assert_eq!(m.nodes.len(), 1);
        assert_eq!(m.toplevel, "A");
    }

    #[test]
    fn rejects_self_cycle() {
        match parse("\"X\" pand \"X\";") {
            Err(KeplerError::Semantic(msg)) => assert!(msg.contains("cycle")),
            other => panic!("expected cycle error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_child() {
        let r = parse("toplevel \"G\"; \"G\" and \"NOPE\";");
        assert!(matches!(r, Err(KeplerError::Semantic(_))));
    }

    #[test]
    fn rejects_duplicate_toplevel() {
        let r =
            parse("toplevel \"A\"; toplevel \"A\"; \"A\" fail~uniform(1,2) repair~uniform(0,1);");
        match r {
            Err(KeplerError::Semantic(msg)) => assert!(msg.contains("toplevel")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse("toplevel \"A\"\n\"A\" fail~uniform(1,2) repair~uniform(0,1);") {
            Err(KeplerError::Syntax { line: 2, .. }) => {}
            other => panic!("expected syntax error on line 2, got {other:?}"),
        }
    }

    #[test]
    fn comments_are_skipped() {
        let m = parse(
            "# a comment\ntoplevel \"A\"; # trailing\n\"A\" fail~uniform(1,2) repair~uniform(0,1);",
        )
        .unwrap();
        assert_eq!(m.toplevel, "A");
    }

    #[test]
    fn print_parse_round_trip() {
        let m = parse(CASCADE).unwrap();
        let printed = m.to_kepler();
        let again = parse(&printed).unwrap();
        assert_eq!(m, again);
        assert_eq!(again.to_kepler(), printed);
    }

    #[test]
    fn round_trip_preserves_decimal_parameters() {
        let text = "toplevel \"T\";\n\"T\" fail~uniform(9.8,12) repair~uniform(0,0.1);\n";
        let m = parse(text).unwrap();
        assert_eq!(m.to_kepler(), text);
    }

    #[test]
    fn compiles_to_closed_network() {
        let net = compile(&parse(CASCADE).unwrap(), 1e-5);
        let diags = net.validate();
        assert!(
            diags.iter().all(|d| d.severity != Severity::Error),
            "{diags:?}"
        );
    }

    #[test]
    fn single_unmanaged_be_flattens_to_two_locations() {
        let net = compile(
            &parse("toplevel \"A\"; \"A\" fail~uniform(1,2) repair~uniform(0,1);").unwrap(),
            1e-5,
        );
        let m = net.flatten(&FlattenOptions::default()).unwrap();
        assert_eq!(m.locations.len(), 2);
        assert_eq!(m.edges.len(), 2);
        assert_eq!(m.target_locations().count(), 1);
    }

    #[test]
    fn toy_pand_fcfs_has_five_locations() {
        let text = r#"
toplevel "TLE";
"TLE" pand "UPS" "AC";
"UPS" fail~uniform(9.8,12) repair~uniform(0,0.1);
"AC"  fail~uniform(0.1,20) repair~uniform(0,0.1);
"RBOX" rbox fcfs "UPS" "AC";
"#;
        let net = compile(&parse(text).unwrap(), 1e-5);
        let m = net.flatten(&FlattenOptions::default()).unwrap();
        assert_eq!(m.locations.len(), 5, "{}", m.to_dot());
        // exactly one target location: both failed with UPS first
        let targets: Vec<_> = m.target_locations().collect();
        assert_eq!(targets.len(), 1);
        let target = m.location(targets[0]);
        // only the UPS repair timer runs there
        assert_eq!(target.active.len(), 1);
        assert_eq!(m.timer(target.active[0]).name, "UPS.repair");
    }

    #[test]
    fn and_gate_truth_table_over_locations() {
        let text = r#"
toplevel "G";
"G" and "A" "B";
"A" fail~uniform(1,2) repair~uniform(0,1);
"B" fail~uniform(1,2) repair~uniform(0,1);
"RBOX" rbox prio "A" "B";
"#;
        let net = compile(&parse(text).unwrap(), 1e-5);
        let m = net.flatten(&FlattenOptions::default()).unwrap();
        // locate variable columns
        let broken_a = m.var_names.iter().position(|n| n == "A.broken").unwrap();
        let broken_b = m.var_names.iter().position(|n| n == "B.broken").unwrap();
        let out_g = m.var_names.iter().position(|n| n == "G.out").unwrap();
        for loc in &m.locations {
            let both_down = loc.vars[broken_a] != 0 && loc.vars[broken_b] != 0;
            assert_eq!(loc.vars[out_g] == 1, both_down, "location {:?}", loc.vars);
            assert_eq!(loc.is_target, both_down);
        }
        assert!(m.locations.iter().any(|l| l.is_target));
    }

    #[test]
    fn pand_target_requires_order() {
        let text = r#"
toplevel "G";
"G" pand "A" "B";
"A" fail~uniform(1,2) repair~uniform(0,1);
"B" fail~uniform(5,6) repair~uniform(0,1);
"RBOX" rbox fcfs "A" "B";
"#;
        let net = compile(&parse(text).unwrap(), 1e-5);
        let m = net.flatten(&FlattenOptions::default()).unwrap();
        assert!(m.target_locations().count() > 0);
        // in every target location both events are down
        let broken_a = m.var_names.iter().position(|n| n == "A.broken").unwrap();
        let broken_b = m.var_names.iter().position(|n| n == "B.broken").unwrap();
        for t in m.target_locations() {
            let loc = m.location(t);
            assert!(loc.vars[broken_a] != 0 && loc.vars[broken_b] != 0);
        }
    }
}
