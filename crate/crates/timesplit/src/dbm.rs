//! Difference-bound-matrix domains over decreasing timers.
//!
//! A domain constrains the differences `τ(t_i) − τ(t_j) ≤ b_ij` over the
//! active timers plus a reference `t⋆` whose valuation is fixed to 0, so
//! the reference row/column carries the absolute bounds of each timer.
//! Coefficients are exact rationals; canonical form is the all-pairs
//! shortest-path closure, and an empty domain is a representable value
//! (negative diagonal after closure), not an error.

use std::cmp::Ordering;
use std::fmt;

use num_traits::Zero;
use thiserror::Error;

use crate::rational::{format_rat, rat_to_f64, Rat};

/// Identifier of a timer in the flattened model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimerId(pub u32);

impl fmt::Display for TimerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// One matrix coefficient: a finite rational bound or +∞. All constraints
/// are non-strict.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Bound {
    Finite(Rat),
    Infinity,
}

impl Bound {
    pub fn zero() -> Bound {
        Bound::Finite(Rat::zero())
    }

    pub fn finite(r: Rat) -> Bound {
        Bound::Finite(r)
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Bound::Finite(_))
    }

    fn add(&self, other: &Bound) -> Bound {
        match (self, other) {
            (Bound::Finite(a), Bound::Finite(b)) => Bound::Finite(a + b),
            _ => Bound::Infinity,
        }
    }

    fn cmp_bound(&self, other: &Bound) -> Ordering {
        match (self, other) {
            (Bound::Finite(a), Bound::Finite(b)) => a.cmp(b),
            (Bound::Finite(_), Bound::Infinity) => Ordering::Less,
            (Bound::Infinity, Bound::Finite(_)) => Ordering::Greater,
            (Bound::Infinity, Bound::Infinity) => Ordering::Equal,
        }
    }

    pub fn min(self, other: Bound) -> Bound {
        if self.cmp_bound(&other) == Ordering::Greater {
            other
        } else {
            self
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Bound::Finite(r) => rat_to_f64(r),
            Bound::Infinity => f64::INFINITY,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Finite(r) => write!(f, "{}", format_rat(r)),
            Bound::Infinity => write!(f, "inf"),
        }
    }
}

/// A matrix variable: the reference `t⋆` or an active timer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Ref,
    Timer(TimerId),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DbmError {
    #[error("duplicate timer id {0}")]
    DuplicateTimer(TimerId),
    #[error("timer {0} not in domain")]
    UnknownTimer(TimerId),
    #[error("timer {0} already in domain")]
    TimerPresent(TimerId),
    #[error("domains range over different timer sets")]
    MismatchedTimers,
    #[error("operation requires a canonical domain")]
    NotCanonical,
    #[error("operation requires a non-empty domain")]
    EmptyOperand,
    #[error("valuation must cover exactly the domain timers")]
    BadValuation,
}

/// Canonicalizable conjunction of difference constraints over timers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Dbm {
    timers: Vec<TimerId>,
    coeffs: Vec<Bound>,
    canonical: bool,
    empty: bool,
}

impl Dbm {
    /// Domain where every listed timer ranges over `[0, ∞)` with no
    /// pairwise constraints. Already canonical.
    pub fn unconstrained(timers: &[TimerId]) -> Result<Dbm, DbmError> {
        let mut sorted = timers.to_vec();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(DbmError::DuplicateTimer(w[0]));
            }
        }
        let m = sorted.len() + 1;
        let mut coeffs = vec![Bound::Infinity; m * m];
        for i in 0..m {
            coeffs[i * m + i] = Bound::zero();
        }
        // t⋆ − t_j ≤ 0, i.e. τ(t_j) ≥ 0
        for c in coeffs.iter_mut().take(m).skip(1) {
            *c = Bound::zero();
        }
        Ok(Dbm {
            timers: sorted,
            coeffs,
            canonical: true,
            empty: false,
        })
    }

    pub fn timers(&self) -> &[TimerId] {
        &self.timers
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn is_canonical(&self) -> bool {
        self.canonical
    }

    fn dim(&self) -> usize {
        self.timers.len() + 1
    }

    /// Matrix index of a variable (reference = 0).
    fn idx(&self, v: Var) -> Result<usize, DbmError> {
        match v {
            Var::Ref => Ok(0),
            Var::Timer(t) => self
                .timers
                .binary_search(&t)
                .map(|p| p + 1)
                .map_err(|_| DbmError::UnknownTimer(t)),
        }
    }

    pub fn get(&self, i: Var, j: Var) -> Result<&Bound, DbmError> {
        let (i, j) = (self.idx(i)?, self.idx(j)?);
        Ok(&self.coeffs[i * self.dim() + j])
    }

    fn at(&self, i: usize, j: usize) -> &Bound {
        &self.coeffs[i * self.dim() + j]
    }

    fn set(&mut self, i: usize, j: usize, b: Bound) {
        let m = self.dim();
        self.coeffs[i * m + j] = b;
    }

    /// Upper bound of a single timer (reference-column coefficient).
    pub fn upper_of(&self, t: TimerId) -> Result<Bound, DbmError> {
        Ok(self.get(Var::Timer(t), Var::Ref)?.clone())
    }

    /// Lower bound of a single timer, as a (finite) rational.
    pub fn lower_of(&self, t: TimerId) -> Result<Rat, DbmError> {
        match self.get(Var::Ref, Var::Timer(t))? {
            Bound::Finite(b) => Ok(-b),
            Bound::Infinity => Ok(Rat::zero()),
        }
    }

    /// All-pairs shortest-path closure (Floyd–Warshall). Idempotent; the
    /// result is flagged empty iff some diagonal entry turns negative.
    pub fn normalize(&self) -> Dbm {
        if self.canonical || self.empty {
            return self.clone();
        }
        let mut out = self.clone();
        let m = out.dim();
        for k in 0..m {
            for i in 0..m {
                if !out.at(i, k).is_finite() {
                    continue;
                }
                for j in 0..m {
                    let through = out.at(i, k).add(out.at(k, j));
                    if through.cmp_bound(out.at(i, j)) == Ordering::Less {
                        out.set(i, j, through);
                    }
                }
            }
        }
        for i in 0..m {
            if let Bound::Finite(d) = out.at(i, i) {
                if d < &Rat::zero() {
                    out.empty = true;
                    break;
                }
            }
        }
        out.canonical = true;
        out
    }

    /// Element-wise minimum with the given constraints `τ(i) − τ(j) ≤ b`,
    /// then closure. May produce the empty domain.
    pub fn intersect(&self, constraints: &[(Var, Var, Bound)]) -> Result<Dbm, DbmError> {
        if self.empty {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        let mut touched = false;
        for (vi, vj, b) in constraints {
            let (i, j) = (out.idx(*vi)?, out.idx(*vj)?);
            if i == j {
                // τ(i) − τ(i) ≤ b is vacuous for b ≥ 0 and contradictory otherwise
                if let Bound::Finite(r) = b {
                    if r < &Rat::zero() {
                        out.empty = true;
                        out.canonical = true;
                        return Ok(out);
                    }
                }
                continue;
            }
            if b.cmp_bound(out.at(i, j)) == Ordering::Less {
                out.set(i, j, b.clone());
                touched = true;
            }
        }
        if touched {
            out.canonical = false;
        }
        Ok(out.normalize())
    }

    /// Convenience constraint `τ(t) ≤ ub`.
    pub fn le(t: TimerId, ub: Bound) -> (Var, Var, Bound) {
        (Var::Timer(t), Var::Ref, ub)
    }

    /// Convenience constraint `τ(t) ≥ lb`.
    pub fn ge(t: TimerId, lb: Rat) -> (Var, Var, Bound) {
        (Var::Ref, Var::Timer(t), Bound::Finite(-lb))
    }

    /// Exact existential elimination of one timer. Requires canonical
    /// input; the result stays canonical.
    pub fn project_out(&self, t: TimerId) -> Result<Dbm, DbmError> {
        let p = self.idx(Var::Timer(t))?;
        if self.empty {
            let mut out = self.clone();
            out.remove_index(p);
            return Ok(out);
        }
        if !self.canonical {
            return Err(DbmError::NotCanonical);
        }
        let mut out = self.clone();
        out.remove_index(p);
        Ok(out)
    }

    fn remove_index(&mut self, p: usize) {
        let m = self.dim();
        let mut coeffs = Vec::with_capacity((m - 1) * (m - 1));
        for i in 0..m {
            if i == p {
                continue;
            }
            for j in 0..m {
                if j == p {
                    continue;
                }
                coeffs.push(self.at(i, j).clone());
            }
        }
        self.coeffs = coeffs;
        self.timers.remove(p - 1);
    }

    /// Inverse of time advancement: given a domain whose reference marks
    /// the moment `elapsing` expired, reintroduce `elapsing` by relabeling
    /// the reference row/column as that timer and appending a fresh
    /// reference constrained only by `τ(elapsing) ≥ 0`. Pairwise
    /// differences among old timers are preserved; old absolute bounds
    /// become bounds on `τ(t_i) − τ(elapsing)`.
    pub fn unshift(&self, elapsing: TimerId) -> Result<Dbm, DbmError> {
        if self.timers.binary_search(&elapsing).is_ok() {
            return Err(DbmError::TimerPresent(elapsing));
        }
        if self.empty {
            let mut out = self.clone();
            let pos = out.timers.partition_point(|t| *t < elapsing);
            out.timers.insert(pos, elapsing);
            let m = out.timers.len() + 1;
            out.coeffs = vec![Bound::Infinity; m * m];
            return Ok(out);
        }
        let mut timers = self.timers.clone();
        let pos = timers.partition_point(|t| *t < elapsing);
        timers.insert(pos, elapsing);
        let m = timers.len() + 1;
        // old index of each new matrix slot: fresh reference has none,
        // `elapsing` maps to the old reference (0), survivors shift by one
        let old_of = |n: usize| -> Option<usize> {
            if n == 0 {
                None
            } else if n == pos + 1 {
                Some(0)
            } else if n <= pos {
                Some(n)
            } else {
                Some(n - 1)
            }
        };
        let mut coeffs = vec![Bound::Infinity; m * m];
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    coeffs[i * m + j] = Bound::zero();
                } else if let (Some(oi), Some(oj)) = (old_of(i), old_of(j)) {
                    coeffs[i * m + j] = self.at(oi, oj).clone();
                }
            }
        }
        coeffs[pos + 1] = Bound::zero(); // t⋆ − elapsing ≤ 0
        let out = Dbm {
            timers,
            coeffs,
            canonical: false,
            empty: false,
        };
        Ok(out.normalize())
    }

    /// Forward time advancement: condition on `elapsing` expiring now by
    /// relabeling it as the new reference and projecting the old
    /// reference out. Requires canonical input; stays canonical.
    pub fn advance(&self, elapsing: TimerId) -> Result<Dbm, DbmError> {
        let p = self.idx(Var::Timer(elapsing))?;
        if self.empty {
            let mut out = self.clone();
            out.remove_index(p);
            return Ok(out);
        }
        if !self.canonical {
            return Err(DbmError::NotCanonical);
        }
        let m = self.dim();
        // permutation: new slot 0 = old p (elapsing becomes reference),
        // old reference becomes an ordinary variable at slot p, to be
        // projected right after
        let old_of = |n: usize| if n == 0 { p } else if n == p { 0 } else { n };
        let mut coeffs = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                coeffs.push(self.at(old_of(i), old_of(j)).clone());
            }
        }
        let mut out = Dbm {
            timers: self.timers.clone(),
            coeffs,
            canonical: true,
            empty: false,
        };
        out.remove_index(p);
        Ok(out)
    }

    /// Appends fresh, independent timers with box bounds `[lb, ub]`.
    pub fn append_boxed(&self, additions: &[(TimerId, Rat, Bound)]) -> Result<Dbm, DbmError> {
        let mut out = self.clone();
        for (t, lb, ub) in additions {
            if out.timers.binary_search(t).is_ok() {
                return Err(DbmError::TimerPresent(*t));
            }
            let pos = out.timers.partition_point(|x| x < t);
            out.timers.insert(pos, *t);
            let m = out.timers.len() + 1;
            let old = out.coeffs;
            out.coeffs = vec![Bound::Infinity; m * m];
            let old_of = |n: usize| -> Option<usize> {
                if n == pos + 1 {
                    None
                } else if n <= pos {
                    Some(n)
                } else {
                    Some(n - 1)
                }
            };
            for i in 0..m {
                for j in 0..m {
                    if i == j {
                        out.coeffs[i * m + j] = Bound::zero();
                    } else if let (Some(oi), Some(oj)) = (old_of(i), old_of(j)) {
                        out.coeffs[i * m + j] = old[oi * (m - 1) + oj].clone();
                    }
                }
            }
            out.coeffs[(pos + 1) * m] = ub.clone();
            out.coeffs[pos + 1] = Bound::Finite(-lb.clone());
        }
        out.canonical = false;
        Ok(out.normalize())
    }

    /// Canonical-form containment: self ⊇ other iff every coefficient of
    /// self dominates the corresponding one of other.
    pub fn includes(&self, other: &Dbm) -> Result<bool, DbmError> {
        if self.timers != other.timers {
            return Err(DbmError::MismatchedTimers);
        }
        if self.empty || other.empty {
            return Err(DbmError::EmptyOperand);
        }
        if !self.canonical || !other.canonical {
            return Err(DbmError::NotCanonical);
        }
        Ok(self
            .coeffs
            .iter()
            .zip(other.coeffs.iter())
            .all(|(a, b)| a.cmp_bound(b) != Ordering::Less))
    }

    /// Exact membership of a rational valuation (reference fixed to 0).
    pub fn contains_point(&self, valuation: &[(TimerId, Rat)]) -> Result<bool, DbmError> {
        if self.empty {
            return Ok(false);
        }
        if valuation.len() != self.timers.len() {
            return Err(DbmError::BadValuation);
        }
        let mut vals = vec![Rat::zero(); self.dim()];
        for (t, v) in valuation {
            let i = self.idx(Var::Timer(*t)).map_err(|_| DbmError::BadValuation)?;
            vals[i] = v.clone();
        }
        let m = self.dim();
        for i in 0..m {
            for j in 0..m {
                if let Bound::Finite(b) = self.at(i, j) {
                    if &(&vals[i] - &vals[j]) > b {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    }

    /// True iff the timer is pinned to a single value (upper bound equals
    /// lower bound).
    pub fn is_point_constrained(&self, t: TimerId) -> Result<bool, DbmError> {
        if self.empty {
            return Err(DbmError::EmptyOperand);
        }
        if !self.canonical {
            return Err(DbmError::NotCanonical);
        }
        let up = self.get(Var::Timer(t), Var::Ref)?;
        let down = self.get(Var::Ref, Var::Timer(t))?;
        Ok(match (up, down) {
            (Bound::Finite(u), Bound::Finite(d)) => u == &-d,
            _ => false,
        })
    }

    /// Matrix coefficients as f64 (row-major, +∞ preserved) for fast
    /// simulation-time membership tests.
    pub fn to_f64_coeffs(&self) -> Vec<f64> {
        self.coeffs.iter().map(|b| b.to_f64()).collect()
    }

    /// JSON form `{timers: [...], coeffs: [[...]]}` with rationals as
    /// exact `p/q` strings and `inf` for missing constraints.
    pub fn to_json(&self, name_of: &dyn Fn(TimerId) -> String) -> serde_json::Value {
        let m = self.dim();
        let mut names = vec!["t*".to_string()];
        names.extend(self.timers.iter().map(|t| name_of(*t)));
        let frac = |b: &Bound| match b {
            Bound::Finite(r) => crate::rational::format_frac(r),
            Bound::Infinity => "inf".to_string(),
        };
        let coeffs: Vec<Vec<String>> = (0..m)
            .map(|i| (0..m).map(|j| frac(self.at(i, j))).collect())
            .collect();
        serde_json::json!({
            "timers": names,
            "empty": self.empty,
            "coeffs": coeffs,
        })
    }
}

impl fmt::Display for Dbm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.empty {
            return write!(f, "{{empty}}");
        }
        let mut parts = Vec::new();
        let m = self.dim();
        let name = |i: usize| {
            if i == 0 {
                "t*".to_string()
            } else {
                self.timers[i - 1].to_string()
            }
        };
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    if let Bound::Finite(b) = self.at(i, j) {
                        parts.push(format!("{}-{} <= {}", name(i), name(j), format_rat(b)));
                    }
                }
            }
        }
        write!(f, "{{{}}}", parts.join(", "))
    }
}
