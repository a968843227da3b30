//! Text parser for queries.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! query  := Name "(" entry ("," entry)* ")" ":-" atom ("," atom)* "."
//! entry  := variable | "*" | AggName "(" variable ")" | "Count" "(" ")"
//! atom   := Name "(" variable ("," variable)* ")"
//! ```
//!
//! Variables match `[a-z][A-Za-z0-9_]*`, relation and aggregate names
//! `[A-Z][A-Za-z0-9_]*`. `Display` on [`Query`] is the inverse of this parser.

use thiserror::Error;

use crate::query::{AggFunc, Atom, HeadEntry, Query, QueryError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: expected {expected}")]
    Syntax { pos: usize, expected: &'static str },
    #[error("unknown aggregate `{0}`")]
    UnknownAggregate(String),
    #[error(transparent)]
    Semantic(#[from] QueryError),
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str) -> Self {
        Cursor { src, pos: 0 }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src.as_bytes()[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.as_bytes().get(self.pos).copied()
    }

    fn eat(&mut self, token: &str, expected: &'static str) -> Result<(), ParseError> {
        self.skip_ws();
        if self.src[self.pos..].starts_with(token) {
            self.pos += token.len();
            Ok(())
        } else {
            Err(ParseError::Syntax { pos: self.pos, expected })
        }
    }

    fn try_eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn ident(&mut self, first: fn(u8) -> bool, expected: &'static str) -> Result<String, ParseError> {
        self.skip_ws();
        let bytes = self.src.as_bytes();
        if self.pos >= bytes.len() || !first(bytes[self.pos]) {
            return Err(ParseError::Syntax { pos: self.pos, expected });
        }
        let start = self.pos;
        self.pos += 1;
        while self.pos < bytes.len()
            && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        Ok(self.src[start..self.pos].to_string())
    }

    fn upper_name(&mut self) -> Result<String, ParseError> {
        self.ident(|b| b.is_ascii_uppercase(), "a name starting with an uppercase letter")
    }

    fn variable(&mut self) -> Result<String, ParseError> {
        self.ident(|b| b.is_ascii_lowercase(), "a variable starting with a lowercase letter")
    }
}

/// Parses one query of the form `Head :- Atom, Atom, … .` and runs the
/// semantic validation of [`Query`].
pub fn parse_query(text: &str) -> Result<Query, ParseError> {
    let mut c = Cursor::new(text);
    let name = c.upper_name()?;
    c.eat("(", "`(`")?;
    let mut head = Vec::new();
    loop {
        head.push(parse_entry(&mut c)?);
        if c.try_eat(",") {
            continue;
        }
        c.eat(")", "`,` or `)`")?;
        break;
    }
    c.eat(":-", "`:-`")?;
    let mut body = Vec::new();
    loop {
        body.push(parse_atom(&mut c)?);
        if c.try_eat(",") {
            continue;
        }
        c.eat(".", "`,` or `.`")?;
        break;
    }
    c.skip_ws();
    if c.pos != text.len() {
        return Err(ParseError::Syntax { pos: c.pos, expected: "end of input" });
    }
    Ok(Query::new(name, head, body)?)
}

fn parse_entry(c: &mut Cursor<'_>) -> Result<HeadEntry, ParseError> {
    match c.peek() {
        Some(b'*') => {
            c.eat("*", "`*`")?;
            Ok(HeadEntry::Star)
        }
        Some(b) if b.is_ascii_uppercase() => {
            let name = c.upper_name()?;
            let func =
                AggFunc::from_name(&name).ok_or_else(|| ParseError::UnknownAggregate(name.clone()))?;
            c.eat("(", "`(`")?;
            let arg = if c.peek() == Some(b')') { None } else { Some(c.variable()?) };
            c.eat(")", "`)`")?;
            Ok(HeadEntry::Agg { func, arg })
        }
        _ => Ok(HeadEntry::Var(c.variable()?)),
    }
}

fn parse_atom(c: &mut Cursor<'_>) -> Result<Atom, ParseError> {
    let relation = c.upper_name()?;
    c.eat("(", "`(`")?;
    let mut terms = Vec::new();
    loop {
        terms.push(c.variable()?);
        if c.try_eat(",") {
            continue;
        }
        c.eat(")", "`,` or `)`")?;
        break;
    }
    Ok(Atom { relation, terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn sponsors_query() {
        let q = parse_query("Q(p,c,o,t) :- Teams(p,c), Sponsors(o,c), Goals(g,p,t).").unwrap();
        assert_eq!(q.free_vars(), vec!["p", "c", "o", "t"]);
        let ex = q.existential_vars();
        assert_eq!(ex.into_iter().collect::<Vec<_>>(), vec!["g".to_string()]);
        assert_eq!(q.body.len(), 3);
    }

    #[test]
    fn star_entry() {
        let q = parse_query("Q(x,*) :- R(x,y).").unwrap();
        assert_eq!(q.head, vec![HeadEntry::Var("x".into()), HeadEntry::Star]);
        assert_eq!(q.star_position(), Some(1));
    }

    #[test]
    fn unbound_head_var() {
        let err = parse_query("Q(x,z) :- R(x,y).").unwrap_err();
        assert!(matches!(err, ParseError::Semantic(QueryError::UnboundHeadVar(v)) if v == "z"));
    }

    #[test]
    fn aggregates() {
        let q = parse_query("Q(c, Sum(t)) :- Teams(p,c), Goals(g,p,t), Replays(g,t).").unwrap();
        assert_eq!(q.head[1], HeadEntry::Agg { func: AggFunc::Sum, arg: Some("t".into()) });
        let q = parse_query("Q(p,c,o,Count()) :- Teams(p,c), Sponsors(o,c), Goals(g,p,t).").unwrap();
        assert_eq!(q.head[3], HeadEntry::Agg { func: AggFunc::Count, arg: None });
    }

    #[test]
    fn aggregate_arg_must_be_existential() {
        let err = parse_query("Q(x, Sum(x)) :- R(x,y).").unwrap_err();
        assert!(matches!(err, ParseError::Semantic(QueryError::AggArgNotExistential(_))));
    }

    #[test]
    fn two_stars_rejected() {
        let err = parse_query("Q(*,x,*) :- R(x).").unwrap_err();
        assert!(matches!(err, ParseError::Semantic(QueryError::TwoStars)));
    }

    #[test]
    fn trailing_multi_aggregate_ok_interior_rejected() {
        assert!(parse_query("Q(c, Sum(t), Count()) :- R(c,t).").is_ok());
        let err = parse_query("Q(Sum(t), c, Count()) :- R(c,t).").unwrap_err();
        assert!(matches!(err, ParseError::Semantic(QueryError::InteriorMultiComputed)));
    }

    #[test]
    fn syntax_error_carries_position() {
        let err = parse_query("Q(x :- R(x).").unwrap_err();
        match err {
            ParseError::Syntax { pos, .. } => assert!(pos > 0),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    /// Builds a random well-formed query directly on the AST.
    fn random_query(rng: &mut StdRng) -> Query {
        let vars = ["x", "y", "z", "u", "v", "w"];
        let n_atoms = rng.gen_range(1..=4);
        let mut body = Vec::new();
        for i in 0..n_atoms {
            let arity = rng.gen_range(1..=3);
            let terms: Vec<String> =
                (0..arity).map(|_| vars[rng.gen_range(0..vars.len())].to_string()).collect();
            body.push(Atom { relation: format!("R{i}"), terms });
        }
        let mut in_body: Vec<String> = body
            .iter()
            .flat_map(|a| a.terms.iter().cloned())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        // Head: random subset of body vars, optionally a star somewhere.
        let keep = rng.gen_range(1..=in_body.len());
        while in_body.len() > keep {
            let k = rng.gen_range(0..in_body.len());
            in_body.remove(k);
        }
        let mut head: Vec<HeadEntry> = in_body.into_iter().map(HeadEntry::Var).collect();
        if rng.gen_bool(0.5) {
            let pos = rng.gen_range(0..=head.len());
            head.insert(pos, HeadEntry::Star);
        }
        Query::new("Q", head, body).unwrap()
    }

    #[test]
    fn parse_pretty_print_round_trip() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let q = random_query(&mut rng);
            let text = q.to_string();
            let back = parse_query(&text).unwrap_or_else(|e| panic!("{text}: {e}"));
            assert_eq!(q, back, "{text}");
        }
    }
}
