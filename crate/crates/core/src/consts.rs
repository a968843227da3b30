//! Interned constants and the global order used for lexicographic comparisons.
//!
//! Every constant that appears in a database is interned once and addressed by
//! a compact [`ConstId`]. Comparisons follow a numeric dictionary order:
//! numeric-looking constants (integers or decimals) compare by value and sort
//! before everything else; the rest compare as plain strings. Two spellings of
//! the same number ("1" and "1.0") stay distinct constants and are ordered by
//! spelling.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use num::{BigInt, BigRational, One};

/// Handle to an interned constant.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct ConstId(pub u32);

/// Sort key of a constant: numbers by value first, then text.
#[derive(Clone, Debug, PartialEq, Eq)]
enum ConstKey {
    Num(BigRational),
    Text(String),
}

impl ConstKey {
    fn parse(s: &str) -> ConstKey {
        match parse_decimal(s) {
            Some(q) => ConstKey::Num(q),
            None => ConstKey::Text(s.to_string()),
        }
    }
}

/// Parses an optionally signed integer or decimal literal into a rational.
pub fn parse_decimal(s: &str) -> Option<BigRational> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    if body.is_empty() {
        return None;
    }
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits: String = format!("{int_part}{frac_part}");
    let numer: BigInt = digits.parse().ok()?;
    let mut denom = BigInt::one();
    for _ in 0..frac_part.len() {
        denom *= 10;
    }
    let q = BigRational::new(numer, denom);
    Some(if neg { -q } else { q })
}

/// Intern table for constants, shared by all relations of a workspace.
#[derive(Default)]
pub struct ConstTable {
    by_name: HashMap<String, ConstId>,
    names: Vec<String>,
    keys: Vec<ConstKey>,
}

impl ConstTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, s: &str) -> ConstId {
        if let Some(&id) = self.by_name.get(s) {
            return id;
        }
        let id = ConstId(self.names.len() as u32);
        self.by_name.insert(s.to_string(), id);
        self.names.push(s.to_string());
        self.keys.push(ConstKey::parse(s));
        id
    }

    pub fn lookup(&self, s: &str) -> Option<ConstId> {
        self.by_name.get(s).copied()
    }

    pub fn name(&self, id: ConstId) -> &str {
        &self.names[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Compares two constants under the global order.
    pub fn cmp(&self, a: ConstId, b: ConstId) -> Ordering {
        if a == b {
            return Ordering::Equal;
        }
        let (ka, kb) = (&self.keys[a.0 as usize], &self.keys[b.0 as usize]);
        match (ka, kb) {
            (ConstKey::Num(x), ConstKey::Num(y)) => x
                .cmp(y)
                .then_with(|| self.names[a.0 as usize].cmp(&self.names[b.0 as usize])),
            (ConstKey::Num(_), ConstKey::Text(_)) => Ordering::Less,
            (ConstKey::Text(_), ConstKey::Num(_)) => Ordering::Greater,
            (ConstKey::Text(x), ConstKey::Text(y)) => x.cmp(y),
        }
    }

    /// Precomputes the rank of every constant, for O(1) comparisons in sorted
    /// structures. Call after all loading is done; later interning invalidates
    /// the ranks.
    pub fn ranks(&self) -> ConstOrder {
        let mut ids: Vec<u32> = (0..self.names.len() as u32).collect();
        ids.sort_by(|&a, &b| self.cmp(ConstId(a), ConstId(b)));
        let mut rank = vec![0u32; ids.len()];
        for (r, &id) in ids.iter().enumerate() {
            rank[id as usize] = r as u32;
        }
        ConstOrder { rank }
    }
}

impl fmt::Debug for ConstTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstTable").field("len", &self.names.len()).finish()
    }
}

/// Frozen rank vector: `rank[id]` is the position of the constant in the
/// global order at the time [`ConstTable::ranks`] was called.
#[derive(Clone, Debug)]
pub struct ConstOrder {
    rank: Vec<u32>,
}

impl ConstOrder {
    pub fn cmp(&self, a: ConstId, b: ConstId) -> Ordering {
        self.rank[a.0 as usize].cmp(&self.rank[b.0 as usize])
    }

    pub fn rank(&self, a: ConstId) -> u32 {
        self.rank[a.0 as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_before_strings() {
        let mut t = ConstTable::new();
        let five = t.intern("5");
        let neg = t.intern("-2");
        let apple = t.intern("apple");
        let half = t.intern("0.5");
        assert_eq!(t.cmp(neg, half), Ordering::Less);
        assert_eq!(t.cmp(half, five), Ordering::Less);
        assert_eq!(t.cmp(five, apple), Ordering::Less);
        assert_eq!(t.cmp(apple, apple), Ordering::Equal);
    }

    #[test]
    fn equal_value_distinct_spelling_is_ordered() {
        let mut t = ConstTable::new();
        let a = t.intern("1");
        let b = t.intern("1.0");
        assert_ne!(a, b);
        assert_ne!(t.cmp(a, b), Ordering::Equal);
    }

    #[test]
    fn ranks_agree_with_cmp() {
        let mut t = ConstTable::new();
        for s in ["z", "10", "2", "b", "-1", "2.5", "a"] {
            t.intern(s);
        }
        let ord = t.ranks();
        for i in 0..t.len() as u32 {
            for j in 0..t.len() as u32 {
                assert_eq!(t.cmp(ConstId(i), ConstId(j)), ord.cmp(ConstId(i), ConstId(j)));
            }
        }
    }

    #[test]
    fn decimal_parsing() {
        assert_eq!(parse_decimal("12"), Some(BigRational::from_integer(12.into())));
        assert_eq!(
            parse_decimal("-0.25"),
            Some(BigRational::new((-1).into(), 4.into()))
        );
        assert_eq!(parse_decimal(""), None);
        assert_eq!(parse_decimal("1e5"), None);
        assert_eq!(parse_decimal("abc"), None);
        assert_eq!(parse_decimal("."), None);
    }
}
