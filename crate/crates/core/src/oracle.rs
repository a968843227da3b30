//! Brute-force reference evaluation.
//!
//! Enumerates homomorphisms by plain backtracking with no indices, groups
//! them by the head projection, and applies the semiring fold or the
//! aggregate function directly. Deliberately shares no evaluation machinery
//! with the engine so the two can check each other.

use std::collections::{BTreeMap, HashMap};

use num::{BigRational, BigUint, Zero};
use thiserror::Error;

use crate::consts::{ConstOrder, ConstTable};
use crate::query::{AggFunc, HeadEntry, Query, Var};
use crate::semiring::{self, SemiringSpec, Value};
use crate::vdb::{Cell, CellCmp, VDatabase};

/// Cap on the backtracking search, as a product of relation sizes.
const MAX_CANDIDATES: f64 = 1e6;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance too large for brute force")]
    InstanceTooLarge,
    #[error("aggregate over non-numeric constant `{0}`")]
    NonNumeric(String),
    #[error("CountD value `{0}` outside the declared domain")]
    OutsideDomain(String),
}

/// Sorted, duplicate-free answers; computed values sit at their head
/// positions.
#[derive(Clone, Debug)]
pub struct OracleResult {
    pub answers: Vec<Vec<Cell>>,
}

/// Evaluates any query form (plain, star, aggregate, trailing multi-aggregate)
/// over an annotated database.
pub fn brute_force(
    q: &Query,
    db: &VDatabase,
    consts: &ConstTable,
    order: &ConstOrder,
) -> Result<OracleResult, OracleError> {
    let mut bound: f64 = 1.0;
    for atom in &q.body {
        bound *= db.rel(&atom.relation).len().max(1) as f64;
        if bound > MAX_CANDIDATES {
            return Err(OracleError::InstanceTooLarge);
        }
    }

    let mut homs: Vec<(BTreeMap<Var, Cell>, Value)> = Vec::new();
    let mut partial: BTreeMap<Var, Cell> = BTreeMap::new();
    enumerate(q, db, 0, &mut partial, &db.semiring.one.clone(), &mut homs);

    // Group by the head variable projection. The container order does not
    // matter: answers are sorted at the end.
    let free = q.free_vars();
    let mut groups: HashMap<Vec<Cell>, Vec<usize>> = HashMap::new();
    let keyed: Vec<Vec<Cell>> = homs
        .iter()
        .map(|(h, _)| free.iter().map(|v| h[v].clone()).collect())
        .collect();
    for (i, k) in keyed.iter().enumerate() {
        groups.entry(k.clone()).or_default().push(i);
    }

    let mut answers: Vec<Vec<Cell>> = Vec::new();
    for idx in groups.values() {
        let rep = &homs[idx[0]].0;
        let mut row: Vec<Cell> = Vec::with_capacity(q.head.len());
        for entry in &q.head {
            match entry {
                HeadEntry::Var(v) => row.push(rep[v].clone()),
                HeadEntry::Star => {
                    let mut acc = db.semiring.zero.clone();
                    for &i in idx {
                        acc = semiring::plus(&db.semiring, &acc, &homs[i].1);
                    }
                    row.push(Cell::val(acc));
                }
                HeadEntry::Agg { func, arg } => {
                    row.push(Cell::val(aggregate(*func, arg.as_deref(), idx, &homs, consts)?))
                }
            }
        }
        answers.push(row);
    }

    let cmp = CellCmp { order, semiring: &db.semiring };
    answers.sort_by(|a, b| cmp.cmp_rows(a, b));
    Ok(OracleResult { answers })
}

fn enumerate(
    q: &Query,
    db: &VDatabase,
    atom_idx: usize,
    partial: &mut BTreeMap<Var, Cell>,
    annot: &Value,
    out: &mut Vec<(BTreeMap<Var, Cell>, Value)>,
) {
    if atom_idx == q.body.len() {
        out.push((partial.clone(), annot.clone()));
        return;
    }
    let atom = &q.body[atom_idx];
    let rel = db.rel(&atom.relation);
    'rows: for (row, tau) in rel.rows.iter().zip(rel.tau.iter()) {
        let mut bound_here: Vec<Var> = Vec::new();
        for (term, cell) in atom.terms.iter().zip(row.iter()) {
            match partial.get(term) {
                Some(existing) if existing != cell => {
                    for v in bound_here {
                        partial.remove(&v);
                    }
                    continue 'rows;
                }
                Some(_) => {}
                None => {
                    partial.insert(term.clone(), cell.clone());
                    bound_here.push(term.clone());
                }
            }
        }
        let next = semiring::times(&db.semiring, annot, tau);
        enumerate(q, db, atom_idx + 1, partial, &next, out);
        for v in bound_here {
            partial.remove(&v);
        }
    }
}

fn aggregate(
    func: AggFunc,
    arg: Option<&str>,
    idx: &[usize],
    homs: &[(BTreeMap<Var, Cell>, Value)],
    consts: &ConstTable,
) -> Result<Value, OracleError> {
    if func == AggFunc::Count {
        return Ok(Value::Count(BigUint::from(idx.len())));
    }
    let arg = arg.expect("validated aggregate has an argument");
    let cells: Vec<&Cell> = idx.iter().map(|&i| &homs[i].0[arg]).collect();
    if func == AggFunc::CountD {
        let mut distinct: Vec<&Cell> = Vec::new();
        for c in &cells {
            if !distinct.contains(c) {
                distinct.push(c);
            }
        }
        return Ok(Value::Count(BigUint::from(distinct.len())));
    }
    // Numeric aggregates over the bag of constants.
    let mut nums: Vec<BigRational> = Vec::with_capacity(cells.len());
    for c in cells {
        let q = match c {
            Cell::Const(id) => crate::consts::parse_decimal(consts.name(*id))
                .ok_or_else(|| OracleError::NonNumeric(consts.name(*id).to_string()))?,
            Cell::Val(_) => return Err(OracleError::NonNumeric("<value>".into())),
        };
        nums.push(q);
    }
    Ok(match func {
        AggFunc::Sum => Value::Num(nums.iter().fold(BigRational::zero(), |a, b| a + b)),
        AggFunc::Min => Value::Num(nums.iter().min().unwrap().clone()),
        AggFunc::Max => Value::Num(nums.iter().max().unwrap().clone()),
        AggFunc::Avg => {
            let sum = nums.iter().fold(BigRational::zero(), |a, b| a + b);
            let n = BigRational::from_integer(num::BigInt::from(nums.len()));
            Value::Num(sum / n)
        }
        AggFunc::Count | AggFunc::CountD => unreachable!(),
    })
}

/// Orders count-product answers `(count, x, y)` the way the bucketed
/// structure serves them: by count, then by the multiplicity of the x-value
/// in the left relation, then by x, then by y.
pub fn sort_count_product(
    result: &mut OracleResult,
    left_counts: &HashMap<Cell, u64>,
    order: &ConstOrder,
    semiring: &SemiringSpec,
) {
    let cmp = CellCmp { order, semiring };
    result.answers.sort_by(|a, b| {
        let ca = count_of(&a[0]);
        let cb = count_of(&b[0]);
        ca.cmp(&cb)
            .then_with(|| left_counts[&a[1]].cmp(&left_counts[&b[1]]))
            .then_with(|| cmp.cmp(&a[1], &b[1]))
            .then_with(|| cmp.cmp(&a[2], &b[2]))
    });
}

fn count_of(cell: &Cell) -> BigUint {
    match cell {
        Cell::Val(v) => match v.as_ref() {
            Value::Count(n) => n.clone(),
            _ => panic!("count-product answers carry counting values"),
        },
        Cell::Const(_) => panic!("count-product answers carry counting values"),
    }
}

/// Cell-wise answer equality where values are equal when the semiring order
/// cannot tell them apart (avg pairs with one ratio compare equal).
pub fn answers_equal(a: &[Vec<Cell>], b: &[Vec<Cell>], order: &ConstOrder, s: &SemiringSpec) -> bool {
    let cmp = CellCmp { order, semiring: s };
    a.len() == b.len()
        && a.iter()
            .zip(b.iter())
            .all(|(x, y)| x.len() == y.len() && cmp.cmp_rows(x, y) == std::cmp::Ordering::Equal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::db::load_relation_str;
    use crate::parse::parse_query;
    use crate::semiring::{instantiate, SemiringKind};
    use crate::translate::{annotate_with_rule, translate_acq};

    #[test]
    fn empty_database_gives_no_answers() {
        let q = parse_query("Q(x) :- R(x,y).").unwrap();
        let mut db = VDatabase::new(instantiate(SemiringKind::Counting));
        db.relations.insert("R".into(), crate::vdb::VRelation::empty(2));
        let consts = ConstTable::new();
        let order = consts.ranks();
        let res = brute_force(&q, &db, &consts, &order).unwrap();
        assert!(res.answers.is_empty());
    }

    #[test]
    fn counting_star_example() {
        // R={(1,2),(1,3),(2,3)}, S={(2,7),(3,7),(3,8)}: x=1 joins via y∈{2,3}
        // with 3 S-continuations, x=2 via y=3 with 2.
        let q = parse_query("Q(x,*) :- R(x,y), S(y,z).").unwrap();
        let mut consts = ConstTable::new();
        let (r, _) = load_relation_str("1,2\n1,3\n2,3", "R", 2, false, &mut consts).unwrap();
        let (s, _) = load_relation_str("2,7\n3,7\n3,8", "S", 2, false, &mut consts).unwrap();
        let spec = instantiate(SemiringKind::Counting);
        let mut db = VDatabase::new(spec.clone());
        db.relations.insert("R".into(), crate::vdb::VRelation::from_relation(&r, vec![spec.one.clone(); 3]));
        db.relations.insert("S".into(), crate::vdb::VRelation::from_relation(&s, vec![spec.one.clone(); 3]));
        let order = consts.ranks();
        let res = brute_force(&q, &db, &consts, &order).unwrap();
        let one = consts.lookup("1").unwrap();
        let two = consts.lookup("2").unwrap();
        assert_eq!(
            res.answers,
            vec![
                vec![Cell::Const(one), Cell::val(Value::count(3))],
                vec![Cell::Const(two), Cell::val(Value::count(2))],
            ]
        );
    }

    #[test]
    fn world_cup_sum_regression() {
        // Sum of replayed goal times per country: (5, 31) and (6, 50).
        let q = parse_query("Q(c, Sum(t)) :- Teams(p,c), Goals(g,p,t), Replays(g,t).").unwrap();
        let mut consts = ConstTable::new();
        let mut rels = std::collections::BTreeMap::new();
        for (name, text, arity) in [
            ("Teams", "1,5\n2,5\n3,6\n4,7\n5,8", 2),
            ("Goals", "1,1,31\n1,3,50\n1,3,75\n2,4,90\n2,4,9", 3),
            ("Replays", "1,1\n1,31\n1,50\n2,5\n1,90", 2),
        ] {
            let (rel, _) = load_relation_str(text, name, arity, false, &mut consts).unwrap();
            rels.insert(name.to_string(), rel);
        }
        // Direct aggregate evaluation.
        let spec_count = instantiate(SemiringKind::Counting);
        let mut plain = VDatabase::new(spec_count.clone());
        for (name, rel) in &rels {
            plain.relations.insert(
                name.clone(),
                crate::vdb::VRelation::from_relation(rel, vec![spec_count.one.clone(); rel.len()]),
            );
        }
        let order = consts.ranks();
        let direct = brute_force(&q, &plain, &consts, &order).unwrap();
        let five = Cell::Const(consts.lookup("5").unwrap());
        let six = Cell::Const(consts.lookup("6").unwrap());
        assert_eq!(
            direct.answers,
            vec![
                vec![five.clone(), Cell::val(Value::num_int(31))],
                vec![six.clone(), Cell::val(Value::num_int(50))],
            ]
        );

        // Same result through the annotated star query.
        let (qs, kind, rule) = translate_acq(&q, None).unwrap();
        let spec = instantiate(kind);
        let adb = annotate_with_rule(&rels, &rule, &spec, &consts).unwrap();
        let starred = brute_force(&qs, &adb, &consts, &order).unwrap();
        assert_eq!(starred.answers, direct.answers);
    }

    #[test]
    fn size_guard_fires() {
        let q = parse_query("Q(x) :- R(x), S(y), T(z), U(w).").unwrap();
        let spec = instantiate(SemiringKind::Counting);
        let mut db = VDatabase::new(spec.clone());
        let mut consts = ConstTable::new();
        for name in ["R", "S", "T", "U"] {
            let mut rel = crate::vdb::VRelation::empty(1);
            for i in 0..40 {
                rel.push(vec![Cell::Const(consts.intern(&i.to_string()))], spec.one.clone());
            }
            db.relations.insert(name.into(), rel);
        }
        let order = consts.ranks();
        assert!(matches!(brute_force(&q, &db, &consts, &order), Err(OracleError::InstanceTooLarge)));
    }
}
