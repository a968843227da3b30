//! Commutative semirings over exact values.
//!
//! A semiring (𝕂, ⊕, ⊗, 0̄, 1̄) supplies the two operations that propagate
//! per-fact annotations to query answers: joins multiply (⊗) and projections
//! add (⊕). Six concrete semirings are provided:
//!
//! * counting   — (ℕ, +, ·, 0, 1)
//! * numeric    — (ℚ, +, ·, 0, 1)
//! * min tropical — (ℚ ∪ {∞}, min, +, ∞, 0)
//! * max tropical — (ℚ ∪ {−∞}, max, +, −∞, 0)
//! * set        — (℘(Ω), ∪, ∩, ∅, Ω) over a fixed small domain Ω
//! * avg pair   — (sum, count) pairs, ordered by their ratio
//!
//! All arithmetic is exact (big integers / rationals); order comparisons are
//! therefore well-defined even under ties, which floating point would not
//! give us.

use std::cmp::Ordering;


use num::bigint::Sign;
use num::{BigInt, BigRational, BigUint, One, Signed, Zero};
use thiserror::Error;

/// Largest admissible set-semiring domain: set values are stored as one-word
/// bit vectors.
pub const MAX_SET_DOMAIN: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SemiringError {
    #[error("set domain has {0} elements, limit is {MAX_SET_DOMAIN}")]
    DomainTooLarge(usize),
    #[error("set domain contains duplicate element `{0}`")]
    DuplicateDomainElement(String),
    #[error("set domain is empty")]
    EmptyDomain,
    #[error("{0} is not ⊗-monotone; no direction defined")]
    NotMonotone(&'static str),
    #[error("value `{0}` is outside the set domain")]
    OutsideDomain(String),
    #[error("cannot parse `{literal}` as a {kind} annotation")]
    Literal { literal: String, kind: &'static str },
}

/// Fixed, ordered domain Ω of a set semiring. Elements are kept sorted under
/// the same numeric-then-text policy as database constants, so set values have
/// a canonical bit layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SetDomain {
    elems: Vec<String>,
}

impl SetDomain {
    pub fn new(mut elems: Vec<String>) -> Result<Self, SemiringError> {
        if elems.is_empty() {
            return Err(SemiringError::EmptyDomain);
        }
        if elems.len() > MAX_SET_DOMAIN {
            return Err(SemiringError::DomainTooLarge(elems.len()));
        }
        elems.sort_by(cmp_const_text);
        for w in elems.windows(2) {
            if w[0] == w[1] {
                return Err(SemiringError::DuplicateDomainElement(w[0].clone()));
            }
        }
        Ok(SetDomain { elems })
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn elems(&self) -> &[String] {
        &self.elems
    }

    pub fn bit_of(&self, elem: &str) -> Option<u32> {
        self.elems
            .binary_search_by(|probe| cmp_const_text(&probe.as_str().to_string(), &elem.to_string()))
            .ok()
            .map(|i| i as u32)
    }

    /// Bit mask of the full domain, the multiplicative identity Ω.
    pub fn full_mask(&self) -> u64 {
        if self.elems.len() == 64 {
            u64::MAX
        } else {
            (1u64 << self.elems.len()) - 1
        }
    }

    pub fn singleton(&self, elem: &str) -> Result<u64, SemiringError> {
        self.bit_of(elem)
            .map(|b| 1u64 << b)
            .ok_or_else(|| SemiringError::OutsideDomain(elem.to_string()))
    }

    pub fn render(&self, mask: u64) -> String {
        let mut parts = Vec::new();
        for (i, e) in self.elems.iter().enumerate() {
            if mask & (1u64 << i) != 0 {
                parts.push(e.as_str());
            }
        }
        parts.join("|")
    }
}

/// Same ordering policy as the global constant order, but on raw strings.
fn cmp_const_text(a: &String, b: &String) -> Ordering {
    match (crate::consts::parse_decimal(a), crate::consts::parse_decimal(b)) {
        (Some(x), Some(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.cmp(b),
    }
}

/// Which concrete semiring a [`SemiringSpec`] instantiates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SemiringKind {
    Counting,
    Numeric,
    MinTropical,
    MaxTropical,
    SetSemiring(SetDomain),
    AvgPair,
}

impl SemiringKind {
    pub fn name(&self) -> &'static str {
        match self {
            SemiringKind::Counting => "counting",
            SemiringKind::Numeric => "numeric",
            SemiringKind::MinTropical => "min-tropical",
            SemiringKind::MaxTropical => "max-tropical",
            SemiringKind::SetSemiring(_) => "set",
            SemiringKind::AvgPair => "avg-pair",
        }
    }
}

/// A tropical element: a finite rational or the absorbing infinity (+∞ for
/// min tropical, −∞ for max tropical; which one is fixed by the kind).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Trop {
    Finite(BigRational),
    Infinite,
}

/// An element of one of the supported semirings. Values are exact and
/// hash-consistent: equal values are structurally equal, except avg pairs
/// where distinct pairs may share a ratio (see [`compare`]).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Value {
    /// Counting semiring: non-negative integer.
    Count(BigUint),
    /// Numeric semiring: rational.
    Num(BigRational),
    /// Min tropical: ℚ ∪ {+∞}; `Trop::Infinite` is +∞ (the 0̄).
    MinTrop(Trop),
    /// Max tropical: ℚ ∪ {−∞}; `Trop::Infinite` is −∞ (the 0̄).
    MaxTrop(Trop),
    /// Set semiring: bit vector over the declared domain.
    Set(u64),
    /// Avg pair (sum, count); count = 0 only for the additive identity (0, 0).
    Avg { sum: BigRational, count: BigUint },
}

impl Value {
    pub fn count(n: u64) -> Value {
        Value::Count(BigUint::from(n))
    }

    pub fn num_int(n: i64) -> Value {
        Value::Num(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn min_trop_int(n: i64) -> Value {
        Value::MinTrop(Trop::Finite(BigRational::from_integer(BigInt::from(n))))
    }

    pub fn max_trop_int(n: i64) -> Value {
        Value::MaxTrop(Trop::Finite(BigRational::from_integer(BigInt::from(n))))
    }

    pub fn avg_int(sum: i64, count: u64) -> Value {
        Value::Avg {
            sum: BigRational::from_integer(BigInt::from(sum)),
            count: BigUint::from(count),
        }
    }

    /// The ratio sum/count of an avg pair; `None` for (0, 0).
    pub fn avg_ratio(&self) -> Option<BigRational> {
        match self {
            Value::Avg { sum, count } => {
                if count.is_zero() {
                    None
                } else {
                    let c = BigInt::from_biguint(Sign::Plus, count.clone());
                    Some(sum / BigRational::from_integer(c))
                }
            }
            _ => None,
        }
    }
}

/// Direction of a monotone map x ↦ c ⊗ x.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    NonDecreasing,
    NonIncreasing,
}

/// One commutative semiring: its kind, identities and structural flags.
#[derive(Clone, Debug)]
pub struct SemiringSpec {
    pub kind: SemiringKind,
    pub zero: Value,
    pub one: Value,
    pub plus_idempotent: bool,
    pub times_monotone: bool,
}

/// Builds the spec for a semiring kind, with the correct identities and
/// structural flags.
pub fn instantiate(kind: SemiringKind) -> SemiringSpec {
    match kind {
        SemiringKind::Counting => SemiringSpec {
            kind: SemiringKind::Counting,
            zero: Value::Count(BigUint::zero()),
            one: Value::Count(BigUint::one()),
            plus_idempotent: false,
            times_monotone: true,
        },
        SemiringKind::Numeric => SemiringSpec {
            kind: SemiringKind::Numeric,
            zero: Value::Num(BigRational::zero()),
            one: Value::Num(BigRational::one()),
            plus_idempotent: false,
            times_monotone: true,
        },
        SemiringKind::MinTropical => SemiringSpec {
            kind: SemiringKind::MinTropical,
            zero: Value::MinTrop(Trop::Infinite),
            one: Value::MinTrop(Trop::Finite(BigRational::zero())),
            plus_idempotent: true,
            times_monotone: true,
        },
        SemiringKind::MaxTropical => SemiringSpec {
            kind: SemiringKind::MaxTropical,
            zero: Value::MaxTrop(Trop::Infinite),
            one: Value::MaxTrop(Trop::Finite(BigRational::zero())),
            plus_idempotent: true,
            times_monotone: true,
        },
        SemiringKind::SetSemiring(dom) => {
            let full = dom.full_mask();
            SemiringSpec {
                kind: SemiringKind::SetSemiring(dom),
                zero: Value::Set(0),
                one: Value::Set(full),
                plus_idempotent: true,
                times_monotone: false,
            }
        }
        SemiringKind::AvgPair => SemiringSpec {
            kind: SemiringKind::AvgPair,
            zero: Value::Avg { sum: BigRational::zero(), count: BigUint::zero() },
            one: Value::Avg { sum: BigRational::zero(), count: BigUint::one() },
            plus_idempotent: false,
            times_monotone: true,
        },
    }
}

impl SemiringSpec {
    pub fn is_zero(&self, v: &Value) -> bool {
        v == &self.zero
    }

    pub fn is_one(&self, v: &Value) -> bool {
        v == &self.one
    }
}

fn kind_mismatch(op: &str, a: &Value, b: &Value) -> ! {
    panic!("semiring {op} on mismatched values {a:?} and {b:?}");
}

/// ⊕ — the addition of the semiring.
pub fn plus(s: &SemiringSpec, a: &Value, b: &Value) -> Value {
    match (a, b) {
        (Value::Count(x), Value::Count(y)) => Value::Count(x + y),
        (Value::Num(x), Value::Num(y)) => Value::Num(x + y),
        (Value::MinTrop(x), Value::MinTrop(y)) => Value::MinTrop(match (x, y) {
            (Trop::Infinite, t) | (t, Trop::Infinite) => t.clone(),
            (Trop::Finite(p), Trop::Finite(q)) => Trop::Finite(p.min(q).clone()),
        }),
        (Value::MaxTrop(x), Value::MaxTrop(y)) => Value::MaxTrop(match (x, y) {
            (Trop::Infinite, t) | (t, Trop::Infinite) => t.clone(),
            (Trop::Finite(p), Trop::Finite(q)) => Trop::Finite(p.max(q).clone()),
        }),
        (Value::Set(x), Value::Set(y)) => Value::Set(x | y),
        (Value::Avg { sum: s1, count: c1 }, Value::Avg { sum: s2, count: c2 }) => {
            Value::Avg { sum: s1 + s2, count: c1 + c2 }
        }
        _ => kind_mismatch("plus", a, b),
    }
    .tag_check(s)
}

/// ⊗ — the multiplication of the semiring.
pub fn times(s: &SemiringSpec, a: &Value, b: &Value) -> Value {
    match (a, b) {
        (Value::Count(x), Value::Count(y)) => Value::Count(x * y),
        (Value::Num(x), Value::Num(y)) => Value::Num(x * y),
        (Value::MinTrop(x), Value::MinTrop(y)) => Value::MinTrop(trop_add(x, y)),
        (Value::MaxTrop(x), Value::MaxTrop(y)) => Value::MaxTrop(trop_add(x, y)),
        (Value::Set(x), Value::Set(y)) => Value::Set(x & y),
        (Value::Avg { sum: s1, count: c1 }, Value::Avg { sum: s2, count: c2 }) => {
            let c1q = BigRational::from_integer(BigInt::from_biguint(Sign::Plus, c1.clone()));
            let c2q = BigRational::from_integer(BigInt::from_biguint(Sign::Plus, c2.clone()));
            Value::Avg { sum: s1 * c2q + s2 * c1q, count: c1 * c2 }
        }
        _ => kind_mismatch("times", a, b),
    }
    .tag_check(s)
}

fn trop_add(x: &Trop, y: &Trop) -> Trop {
    match (x, y) {
        (Trop::Infinite, _) | (_, Trop::Infinite) => Trop::Infinite,
        (Trop::Finite(p), Trop::Finite(q)) => Trop::Finite(p + q),
    }
}

impl Value {
    fn tag_check(self, _s: &SemiringSpec) -> Value {
        // Debug builds verify the value matches the spec's kind.
        debug_assert!(matches!(
            (&self, &_s.kind),
            (Value::Count(_), SemiringKind::Counting)
                | (Value::Num(_), SemiringKind::Numeric)
                | (Value::MinTrop(_), SemiringKind::MinTropical)
                | (Value::MaxTrop(_), SemiringKind::MaxTropical)
                | (Value::Set(_), SemiringKind::SetSemiring(_))
                | (Value::Avg { .. }, SemiringKind::AvgPair)
        ));
        self
    }
}

/// Total order on the semiring's domain.
///
/// Counting, numeric and tropical values compare numerically. Set values
/// compare by cardinality, ties broken by the smallest differing element (the
/// set containing it is smaller). Avg pairs compare by ratio with (0, 0)
/// first; pairs with equal ratio compare equal even when structurally
/// distinct.
pub fn compare(s: &SemiringSpec, a: &Value, b: &Value) -> Ordering {
    let _ = s;
    match (a, b) {
        (Value::Count(x), Value::Count(y)) => x.cmp(y),
        (Value::Num(x), Value::Num(y)) => x.cmp(y),
        (Value::MinTrop(x), Value::MinTrop(y)) => match (x, y) {
            (Trop::Infinite, Trop::Infinite) => Ordering::Equal,
            (Trop::Infinite, _) => Ordering::Greater,
            (_, Trop::Infinite) => Ordering::Less,
            (Trop::Finite(p), Trop::Finite(q)) => p.cmp(q),
        },
        (Value::MaxTrop(x), Value::MaxTrop(y)) => match (x, y) {
            (Trop::Infinite, Trop::Infinite) => Ordering::Equal,
            (Trop::Infinite, _) => Ordering::Less,
            (_, Trop::Infinite) => Ordering::Greater,
            (Trop::Finite(p), Trop::Finite(q)) => p.cmp(q),
        },
        (Value::Set(x), Value::Set(y)) => {
            let (cx, cy) = (x.count_ones(), y.count_ones());
            cx.cmp(&cy).then_with(|| {
                let d = x ^ y;
                if d == 0 {
                    Ordering::Equal
                } else {
                    let low = d.trailing_zeros();
                    // The set owning the smallest differing element is the
                    // lexicographically smaller sequence.
                    if x & (1u64 << low) != 0 { Ordering::Less } else { Ordering::Greater }
                }
            })
        }
        (Value::Avg { count: c1, .. }, Value::Avg { count: c2, .. }) => {
            match (c1.is_zero(), c2.is_zero()) {
                (true, true) => Ordering::Equal,
                (true, false) => Ordering::Less,
                (false, true) => Ordering::Greater,
                (false, false) => a.avg_ratio().unwrap().cmp(&b.avg_ratio().unwrap()),
            }
        }
        _ => kind_mismatch("compare", a, b),
    }
}

/// Direction of x ↦ c ⊗ x under [`compare`]. Only defined for ⊗-monotone
/// semirings; constants that annihilate (c = 0̄) give a constant map, reported
/// as non-decreasing.
pub fn monotone_direction(s: &SemiringSpec, c: &Value) -> Result<Direction, SemiringError> {
    if !s.times_monotone {
        return Err(SemiringError::NotMonotone(s.kind.name()));
    }
    Ok(match c {
        Value::Num(q) => {
            if q.is_negative() {
                Direction::NonIncreasing
            } else {
                Direction::NonDecreasing
            }
        }
        _ => Direction::NonDecreasing,
    })
}

/// Canonical representative of a value's [`compare`] equivalence class.
/// Identity except for avg pairs, which collapse to (ratio, 1).
pub fn canonical_for_order(v: &Value) -> Value {
    match v {
        Value::Avg { sum: _, count } if !count.is_zero() => Value::Avg {
            sum: v.avg_ratio().unwrap(),
            count: BigUint::one(),
        },
        other => other.clone(),
    }
}

/// Renders a value the way the CLI prints computed values: integers bare,
/// rationals as `p/q`, sets as `|`-joined elements, avg pairs as their ratio.
pub fn render_value(s: &SemiringSpec, v: &Value) -> String {
    match v {
        Value::Count(n) => n.to_string(),
        Value::Num(q) => render_rational(q),
        Value::MinTrop(Trop::Infinite) => "inf".to_string(),
        Value::MaxTrop(Trop::Infinite) => "-inf".to_string(),
        Value::MinTrop(Trop::Finite(q)) | Value::MaxTrop(Trop::Finite(q)) => render_rational(q),
        Value::Set(mask) => match &s.kind {
            SemiringKind::SetSemiring(dom) => dom.render(*mask),
            _ => format!("{mask:#x}"),
        },
        Value::Avg { count, .. } => {
            if count.is_zero() {
                "0/0".to_string()
            } else {
                render_rational(&v.avg_ratio().unwrap())
            }
        }
    }
}

pub fn render_rational(q: &BigRational) -> String {
    if q.is_integer() {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

/// Parses a raw annotation literal into a value of the given semiring.
pub fn parse_literal(s: &SemiringSpec, lit: &str) -> Result<Value, SemiringError> {
    let lit = lit.trim();
    let bad = |kind: &'static str| SemiringError::Literal { literal: lit.to_string(), kind };
    match &s.kind {
        SemiringKind::Counting => lit
            .parse::<BigUint>()
            .map(Value::Count)
            .map_err(|_| bad("counting")),
        SemiringKind::Numeric => parse_rational(lit).map(Value::Num).ok_or(bad("numeric")),
        SemiringKind::MinTropical => {
            parse_rational(lit).map(|q| Value::MinTrop(Trop::Finite(q))).ok_or(bad("min-tropical"))
        }
        SemiringKind::MaxTropical => {
            parse_rational(lit).map(|q| Value::MaxTrop(Trop::Finite(q))).ok_or(bad("max-tropical"))
        }
        SemiringKind::SetSemiring(dom) => {
            let mut mask = 0u64;
            for part in lit.split('|') {
                let part = part.trim();
                if part.is_empty() {
                    continue;
                }
                mask |= dom.singleton(part)?;
            }
            Ok(Value::Set(mask))
        }
        SemiringKind::AvgPair => parse_rational(lit)
            .map(|q| Value::Avg { sum: q, count: BigUint::one() })
            .ok_or(bad("avg")),
    }
}

/// Rational literal: integer, decimal, or `p/q`.
pub fn parse_rational(s: &str) -> Option<BigRational> {
    if let Some((p, q)) = s.split_once('/') {
        let numer: BigInt = p.trim().parse().ok()?;
        let denom: BigInt = q.trim().parse().ok()?;
        if denom.is_zero() {
            return None;
        }
        return Some(BigRational::new(numer, denom));
    }
    crate::consts::parse_decimal(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn dom_abc() -> SetDomain {
        SetDomain::new(vec!["a".into(), "b".into(), "c".into()]).unwrap()
    }

    fn all_kinds() -> Vec<SemiringSpec> {
        vec![
            instantiate(SemiringKind::Counting),
            instantiate(SemiringKind::Numeric),
            instantiate(SemiringKind::MinTropical),
            instantiate(SemiringKind::MaxTropical),
            instantiate(SemiringKind::SetSemiring(dom_abc())),
            instantiate(SemiringKind::AvgPair),
        ]
    }

    /// Random value of the spec's domain. Skews toward small magnitudes so
    /// collisions (and the identities) actually show up.
    pub(crate) fn random_value(s: &SemiringSpec, rng: &mut StdRng) -> Value {
        match &s.kind {
            SemiringKind::Counting => Value::count(rng.gen_range(0..6)),
            SemiringKind::Numeric => {
                let n = rng.gen_range(-6..=6);
                let d = rng.gen_range(1..=3);
                Value::Num(BigRational::new(n.into(), d.into()))
            }
            SemiringKind::MinTropical => {
                if rng.gen_ratio(1, 8) {
                    Value::MinTrop(Trop::Infinite)
                } else {
                    Value::min_trop_int(rng.gen_range(-5..=5))
                }
            }
            SemiringKind::MaxTropical => {
                if rng.gen_ratio(1, 8) {
                    Value::MaxTrop(Trop::Infinite)
                } else {
                    Value::max_trop_int(rng.gen_range(-5..=5))
                }
            }
            SemiringKind::SetSemiring(dom) => {
                let full = dom.full_mask();
                Value::Set(rng.gen::<u64>() & full)
            }
            SemiringKind::AvgPair => {
                if rng.gen_ratio(1, 10) {
                    Value::avg_int(0, 0)
                } else {
                    Value::avg_int(rng.gen_range(-5..=5), rng.gen_range(1..=3))
                }
            }
        }
    }

    #[test]
    fn identities() {
        let c = instantiate(SemiringKind::Counting);
        assert_eq!(c.zero, Value::count(0));
        assert_eq!(c.one, Value::count(1));
        let mx = instantiate(SemiringKind::MaxTropical);
        assert_eq!(mx.zero, Value::MaxTrop(Trop::Infinite));
        assert_eq!(mx.one, Value::max_trop_int(0));
        let st = instantiate(SemiringKind::SetSemiring(dom_abc()));
        assert_eq!(st.zero, Value::Set(0));
        assert_eq!(st.one, Value::Set(0b111));
        let avg = instantiate(SemiringKind::AvgPair);
        assert_eq!(avg.zero, Value::avg_int(0, 0));
        assert_eq!(avg.one, Value::avg_int(0, 1));
    }

    #[test]
    fn flags() {
        for s in all_kinds() {
            let idem = matches!(
                s.kind,
                SemiringKind::MinTropical | SemiringKind::MaxTropical | SemiringKind::SetSemiring(_)
            );
            assert_eq!(s.plus_idempotent, idem, "{}", s.kind.name());
            let mono = !matches!(s.kind, SemiringKind::SetSemiring(_));
            assert_eq!(s.times_monotone, mono, "{}", s.kind.name());
        }
    }

    #[test]
    fn op_examples() {
        let c = instantiate(SemiringKind::Counting);
        assert_eq!(plus(&c, &Value::count(2), &Value::count(3)), Value::count(5));
        assert_eq!(times(&c, &Value::count(0), &Value::count(7)), Value::count(0));

        let mx = instantiate(SemiringKind::MaxTropical);
        assert_eq!(plus(&mx, &Value::max_trop_int(2), &Value::max_trop_int(3)), Value::max_trop_int(3));

        let mn = instantiate(SemiringKind::MinTropical);
        assert_eq!(times(&mn, &Value::min_trop_int(2), &Value::min_trop_int(3)), Value::min_trop_int(5));

        let st = instantiate(SemiringKind::SetSemiring(dom_abc()));
        assert_eq!(plus(&st, &Value::Set(0b001), &Value::Set(0b010)), Value::Set(0b011));

        let avg = instantiate(SemiringKind::AvgPair);
        assert_eq!(
            times(&avg, &Value::avg_int(3, 1), &Value::avg_int(5, 1)),
            Value::avg_int(8, 1)
        );
    }

    #[test]
    fn compare_examples() {
        let n = instantiate(SemiringKind::Numeric);
        assert_eq!(compare(&n, &Value::num_int(-1), &Value::num_int(2)), Ordering::Less);

        let st = instantiate(SemiringKind::SetSemiring(dom_abc()));
        // {a,b} vs {c}: cardinality 2 > 1.
        assert_eq!(compare(&st, &Value::Set(0b011), &Value::Set(0b100)), Ordering::Greater);
        // {a,b} vs {a,c}: first differing element is b vs c.
        assert_eq!(compare(&st, &Value::Set(0b011), &Value::Set(0b101)), Ordering::Less);

        let avg = instantiate(SemiringKind::AvgPair);
        assert_eq!(compare(&avg, &Value::avg_int(4, 2), &Value::avg_int(3, 1)), Ordering::Less);
        assert_eq!(compare(&avg, &Value::avg_int(4, 2), &Value::avg_int(2, 1)), Ordering::Equal);
        assert_eq!(compare(&avg, &Value::avg_int(0, 0), &Value::avg_int(-9, 1)), Ordering::Less);
    }

    #[test]
    fn direction_examples() {
        let n = instantiate(SemiringKind::Numeric);
        assert_eq!(monotone_direction(&n, &Value::num_int(-2)).unwrap(), Direction::NonIncreasing);
        assert_eq!(monotone_direction(&n, &Value::num_int(0)).unwrap(), Direction::NonDecreasing);
        let mx = instantiate(SemiringKind::MaxTropical);
        assert_eq!(monotone_direction(&mx, &Value::max_trop_int(7)).unwrap(), Direction::NonDecreasing);
        let st = instantiate(SemiringKind::SetSemiring(dom_abc()));
        assert!(monotone_direction(&st, &Value::Set(1)).is_err());
    }

    #[test]
    fn axioms_hold_on_random_triples() {
        let mut rng = StdRng::seed_from_u64(11);
        for s in all_kinds() {
            for _ in 0..1000 {
                let a = random_value(&s, &mut rng);
                let b = random_value(&s, &mut rng);
                let c = random_value(&s, &mut rng);
                // Associativity and commutativity of both operations.
                assert_eq!(plus(&s, &plus(&s, &a, &b), &c), plus(&s, &a, &plus(&s, &b, &c)));
                assert_eq!(times(&s, &times(&s, &a, &b), &c), times(&s, &a, &times(&s, &b, &c)));
                assert_eq!(plus(&s, &a, &b), plus(&s, &b, &a));
                assert_eq!(times(&s, &a, &b), times(&s, &b, &a));
                // Distributivity.
                assert_eq!(
                    times(&s, &a, &plus(&s, &b, &c)),
                    plus(&s, &times(&s, &a, &b), &times(&s, &a, &c))
                );
                // Neutrality and annihilation.
                assert_eq!(plus(&s, &a, &s.zero), a);
                assert_eq!(times(&s, &a, &s.one), a);
                assert_eq!(times(&s, &a, &s.zero), s.zero);
                // The idempotence flag tells the truth (for the non-idempotent
                // kinds only 0̄ is a fixed point of a ⊕ a).
                assert_eq!(plus(&s, &a, &a) == a, s.plus_idempotent || a == s.zero);
            }
        }
    }

    #[test]
    fn compare_is_a_total_order() {
        let mut rng = StdRng::seed_from_u64(12);
        for s in all_kinds() {
            for _ in 0..1000 {
                let a = random_value(&s, &mut rng);
                let b = random_value(&s, &mut rng);
                let c = random_value(&s, &mut rng);
                assert_eq!(compare(&s, &a, &b), compare(&s, &b, &a).reverse());
                if compare(&s, &a, &b) != Ordering::Greater && compare(&s, &b, &c) != Ordering::Greater {
                    assert_ne!(compare(&s, &a, &c), Ordering::Greater);
                }
                assert_eq!(compare(&s, &a, &a), Ordering::Equal);
            }
        }
    }

    #[test]
    fn monotone_kinds_respect_direction() {
        let mut rng = StdRng::seed_from_u64(13);
        for s in all_kinds() {
            if !s.times_monotone {
                continue;
            }
            for _ in 0..1000 {
                let c = random_value(&s, &mut rng);
                let a = random_value(&s, &mut rng);
                let b = random_value(&s, &mut rng);
                if compare(&s, &a, &b) != Ordering::Less {
                    continue;
                }
                let (ca, cb) = (times(&s, &c, &a), times(&s, &c, &b));
                match monotone_direction(&s, &c).unwrap() {
                    Direction::NonDecreasing => {
                        assert_ne!(compare(&s, &ca, &cb), Ordering::Greater, "c={c:?} a={a:?} b={b:?}")
                    }
                    Direction::NonIncreasing => {
                        assert_ne!(compare(&s, &ca, &cb), Ordering::Less, "c={c:?} a={a:?} b={b:?}")
                    }
                }
            }
        }
    }

    #[test]
    fn avg_pair_reproduces_averages() {
        // Pairs with count 1 per element: folding ⊕ gives (Σ, n), whose ratio
        // is the group average.
        let avg = instantiate(SemiringKind::AvgPair);
        let xs = [3i64, -1, 4, 4, 0];
        let mut acc = avg.zero.clone();
        for &x in &xs {
            acc = plus(&avg, &acc, &Value::avg_int(x, 1));
        }
        assert_eq!(acc.avg_ratio().unwrap(), BigRational::new(10.into(), 5.into()));
    }

    #[test]
    fn set_domain_bounds() {
        assert!(matches!(SetDomain::new(vec![]), Err(SemiringError::EmptyDomain)));
        let too_big: Vec<String> = (0..65).map(|i| format!("e{i}")).collect();
        assert!(matches!(SetDomain::new(too_big), Err(SemiringError::DomainTooLarge(65))));
        let dup = SetDomain::new(vec!["a".into(), "a".into()]);
        assert!(matches!(dup, Err(SemiringError::DuplicateDomainElement(_))));
        let full = SetDomain::new((0..64).map(|i| format!("e{i:02}")).collect::<Vec<_>>()).unwrap();
        assert_eq!(full.full_mask(), u64::MAX);
    }

    #[test]
    fn literals() {
        let n = instantiate(SemiringKind::Numeric);
        assert_eq!(parse_literal(&n, "3/4").unwrap(), Value::Num(BigRational::new(3.into(), 4.into())));
        assert!(parse_literal(&n, "abc").is_err());
        let c = instantiate(SemiringKind::Counting);
        assert!(parse_literal(&c, "-1").is_err());
        let st = instantiate(SemiringKind::SetSemiring(dom_abc()));
        assert_eq!(parse_literal(&st, "a|c").unwrap(), Value::Set(0b101));
        assert!(parse_literal(&st, "zz").is_err());
    }

    #[test]
    fn canonicalization_preserves_order_class() {
        let avg = instantiate(SemiringKind::AvgPair);
        let v = Value::avg_int(4, 2);
        let k = canonical_for_order(&v);
        assert_eq!(compare(&avg, &v, &k), Ordering::Equal);
        assert_eq!(k, Value::avg_int(2, 1));
    }
}
