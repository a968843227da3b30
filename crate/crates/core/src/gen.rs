//! Instance generators: random small queries and databases for the
//! randomized suites, and the scaled path-join generator behind `bench`.

use std::collections::BTreeMap;

use num::BigRational;
use rand::rngs::StdRng;
use rand::Rng;

use crate::consts::ConstTable;
use crate::db::Relation;
use crate::query::{AggFunc, Atom, HeadEntry, Query, Var};
use crate::semiring::{SemiringKind, SemiringSpec, SetDomain, Value};
use crate::vdb::{VDatabase, VRelation};

pub struct GenConfig {
    pub max_atoms: usize,
    pub max_arity: usize,
    pub max_facts: usize,
    pub domain: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { max_atoms: 4, max_arity: 4, max_facts: 25, domain: 8 }
    }
}

const VAR_POOL: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

/// A random body over the variable pool: 1..=max_atoms atoms, each with
/// 1..=max_arity terms (occasionally repeating a variable).
pub fn random_body(rng: &mut StdRng, cfg: &GenConfig) -> Vec<Atom> {
    let n_atoms = rng.gen_range(1..=cfg.max_atoms);
    let n_vars = rng.gen_range(1..=VAR_POOL.len());
    (0..n_atoms)
        .map(|i| {
            let arity = rng.gen_range(1..=cfg.max_arity);
            let terms: Vec<Var> =
                (0..arity).map(|_| VAR_POOL[rng.gen_range(0..n_vars)].to_string()).collect();
            Atom { relation: format!("R{i}"), terms }
        })
        .collect()
}

/// Splits the body variables into a shuffled head prefix and existentials.
pub fn random_head_vars(rng: &mut StdRng, body: &[Atom]) -> Vec<Var> {
    let mut vars: Vec<Var> = body
        .iter()
        .flat_map(|a| a.terms.iter().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    // Shuffle.
    for i in (1..vars.len()).rev() {
        let j = rng.gen_range(0..=i);
        vars.swap(i, j);
    }
    let keep = rng.gen_range(1..=vars.len());
    vars.truncate(keep);
    vars
}

/// A random star query: random body, random head-variable order, the star at
/// a random position (or absent).
pub fn random_star_query(rng: &mut StdRng, cfg: &GenConfig, star: bool) -> Query {
    let body = random_body(rng, cfg);
    let vars = random_head_vars(rng, &body);
    let mut head: Vec<HeadEntry> = vars.into_iter().map(HeadEntry::Var).collect();
    if star {
        let pos = rng.gen_range(0..=head.len());
        head.insert(pos, HeadEntry::Star);
    }
    Query { name: "Q".into(), head, body }
}

/// A random aggregate query: random body, random grouping order, with the
/// aggregate at a random position when its argument has an existential to
/// bind, star-last style otherwise.
pub fn random_acq(rng: &mut StdRng, cfg: &GenConfig, funcs: &[AggFunc]) -> Option<Query> {
    let body = random_body(rng, cfg);
    let vars = random_head_vars(rng, &body);
    let all: std::collections::BTreeSet<Var> =
        body.iter().flat_map(|a| a.terms.iter().cloned()).collect();
    let existential: Vec<Var> = all.into_iter().filter(|v| !vars.contains(v)).collect();
    let func = funcs[rng.gen_range(0..funcs.len())];
    let arg = if func == AggFunc::Count {
        None
    } else {
        if existential.is_empty() {
            return None;
        }
        Some(existential[rng.gen_range(0..existential.len())].clone())
    };
    let mut head: Vec<HeadEntry> = vars.into_iter().map(HeadEntry::Var).collect();
    let pos = rng.gen_range(0..=head.len());
    head.insert(pos, HeadEntry::Agg { func, arg });
    Some(Query { name: "Q".into(), head, body })
}

/// Random relations for a query's schema: numeric constants only, so any
/// aggregate applies.
pub fn random_relations(
    rng: &mut StdRng,
    q: &Query,
    cfg: &GenConfig,
    consts: &mut ConstTable,
) -> BTreeMap<String, Relation> {
    let mut out = BTreeMap::new();
    for atom in &q.body {
        out.entry(atom.relation.clone()).or_insert_with(|| {
            let mut rel = Relation::new(atom.relation.clone(), atom.terms.len());
            let n = rng.gen_range(0..=cfg.max_facts);
            let mut seen = std::collections::HashSet::new();
            for _ in 0..n {
                let fact: Vec<_> = (0..atom.terms.len())
                    .map(|_| consts.intern(&rng.gen_range(0..cfg.domain).to_string()))
                    .collect();
                if seen.insert(fact.clone()) {
                    rel.facts.push(fact);
                }
            }
            rel
        });
    }
    out
}

/// A random annotation value for one fact.
pub fn random_annotation(rng: &mut StdRng, spec: &SemiringSpec) -> Value {
    match &spec.kind {
        SemiringKind::Counting => Value::count(rng.gen_range(0..5)),
        SemiringKind::Numeric => {
            Value::Num(BigRational::new(rng.gen_range(-4..=4).into(), rng.gen_range(1..=2).into()))
        }
        SemiringKind::MinTropical => Value::min_trop_int(rng.gen_range(-5..=5)),
        SemiringKind::MaxTropical => Value::max_trop_int(rng.gen_range(-5..=5)),
        SemiringKind::SetSemiring(dom) => Value::Set(rng.gen::<u64>() & dom.full_mask()),
        SemiringKind::AvgPair => {
            Value::avg_int(rng.gen_range(-4..=4), rng.gen_range(1..=3))
        }
    }
}

/// Annotated database over random relations: all facts random-annotated, or
/// only one relation when `local` names it.
pub fn random_vdb(
    rng: &mut StdRng,
    relations: &BTreeMap<String, Relation>,
    spec: &SemiringSpec,
    local: Option<&str>,
) -> VDatabase {
    let mut db = VDatabase::new(spec.clone());
    for (name, rel) in relations {
        let annotate = local.map_or(true, |r| r == name);
        let tau: Vec<Value> = (0..rel.len())
            .map(|_| if annotate { random_annotation(rng, spec) } else { spec.one.clone() })
            .collect();
        db.relations.insert(name.clone(), VRelation::from_relation(rel, tau));
    }
    db.refresh_annotation_profile();
    db
}

/// A small set-semiring domain over the generator's constants.
pub fn small_domain(size: usize) -> SetDomain {
    SetDomain::new((0..size).map(|i| i.to_string()).collect()).unwrap()
}

/// Three-atom path join `Q(x0,x1,x2,x3) :- R1(x0,x1), R2(x1,x2), R3(x2,x3)`
/// with `n` facts per relation, built to keep the answer count close to
/// linear: each relation maps i → a bounded random successor.
pub fn path_join_instance(
    rng: &mut StdRng,
    n: usize,
    consts: &mut ConstTable,
) -> (Query, BTreeMap<String, Relation>) {
    let q = crate::parse::parse_query("Q(x0,x1,x2,x3) :- R1(x0,x1), R2(x1,x2), R3(x2,x3).").unwrap();
    let mut rels = BTreeMap::new();
    for name in ["R1", "R2", "R3"] {
        let mut rel = Relation::new(name, 2);
        let mut seen = std::collections::HashSet::new();
        while rel.facts.len() < n {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            let fact = vec![consts.intern(&a.to_string()), consts.intern(&b.to_string())];
            if seen.insert(fact.clone()) {
                rel.facts.push(fact);
            }
        }
        rels.insert(name.to_string(), rel);
    }
    (q, rels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn generated_queries_validate() {
        let mut rng = StdRng::seed_from_u64(5);
        let cfg = GenConfig::default();
        for _ in 0..200 {
            let q = random_star_query(&mut rng, &cfg, true);
            q.validate().unwrap();
            if let Some(acq) = random_acq(&mut rng, &cfg, &[AggFunc::Sum, AggFunc::Count]) {
                acq.validate().unwrap();
            }
        }
    }

    #[test]
    fn path_join_sizes() {
        let mut rng = StdRng::seed_from_u64(6);
        let mut consts = ConstTable::new();
        let (q, rels) = path_join_instance(&mut rng, 256, &mut consts);
        assert_eq!(q.body.len(), 3);
        assert!(rels.values().all(|r| r.len() == 256));
    }
}
